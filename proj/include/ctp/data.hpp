#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctp/rng.hpp"

namespace ctp {

enum class ShiftKind { Base, WeakShift, StrongShift, IidSplit };

const char* to_string(ShiftKind k);

/// Description of one synthetic corpus: a first-order Markov chain over a
/// small vocabulary. Base chains concentrate transition mass on the lower
/// half of the vocabulary; StrongShift concentrates on the upper half
/// (disjoint dominant support); WeakShift mixes the base matrix with a fresh
/// perturbation of the same support; IidSplit(i) reuses the base matrix on
/// an independent token substream.
struct CorpusSpec {
  std::string name = "corpus";
  int vocab_size = 64;
  uint64_t transition_seed = 0;
  ShiftKind shift = ShiftKind::Base;
  double weak_lambda = 0.5;  // WeakShift mix weight in [0, 1]
  int iid_index = 0;         // IidSplit substream index
  int64_t train_tokens = 2'000'000;
  int64_t val_tokens = 20'000;

  void validate() const;
};

/// Immutable token sequence. Streams are deterministic functions of their
/// CorpusSpec and seekable by absolute token index.
struct TokenStream {
  int vocab_size = 0;
  std::vector<uint16_t> tokens;

  int64_t size() const { return static_cast<int64_t>(tokens.size()); }
};

struct Corpus {
  CorpusSpec spec;
  TokenStream train;
  TokenStream val;
};

struct Window {
  std::span<const uint16_t> context;
  uint16_t target = 0;
};

/// Row-major V x V transition matrix for the spec; every row sums to 1.
std::vector<double> transition_matrix(const CorpusSpec& spec);

/// Generates the train and validation streams. The two splits use disjoint
/// PRNG substreams derived from transition_seed.
Corpus gen_corpus(const CorpusSpec& spec);

/// Tokens [pos, pos+L) plus the token at pos+L. Requires pos + L < size.
Window stream_window(const TokenStream& s, int64_t pos, int context_length);

/// Number of non-overlapping (context, target) windows when tiling the
/// stream with stride L+1.
int64_t window_count(const TokenStream& s, int context_length);

/// A set of corpora sampled per-window with fixed weights (union baselines
/// and Table-1 style domain mixtures).
struct DomainMixture {
  struct Entry {
    CorpusSpec spec;
    double weight = 0.0;
  };
  std::vector<Entry> domains;

  void validate() const;  // weights sum to 1 within 1e-9
};

/// Categorical draw over the mixture weights.
int sample_mixture(const DomainMixture& m, Xoshiro256ss& rng);

/// FNV-1a checksum over (vocab_size, token_count, tokens) in little-endian
/// byte order; the golden values are frozen in the tests.
uint64_t stream_checksum(const TokenStream& s);

// Binary token-stream file: magic "CTPTOKS1", u32 version=1, u32 vocab_size,
// u64 token_count, token_count x u16 tokens, all little endian.
void write_token_stream(const std::string& path, const TokenStream& s);
TokenStream read_token_stream(const std::string& path);

}  // namespace ctp
