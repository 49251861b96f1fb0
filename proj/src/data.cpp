#include "ctp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ctp {

namespace {

// Substream tags off transition_seed. Base/WeakShift/StrongShift use token
// substream 0; IidSplit(i) uses substream i+1 so even split 0 never repeats
// the base stream.
constexpr uint64_t kTagMatrixBase = 0x11;
constexpr uint64_t kTagMatrixPerturb = 0x12;
constexpr uint64_t kTagMatrixStrong = 0x13;
constexpr uint64_t kTagTokens = 0x40;  // + 2*substream, +1 for the validation split

uint64_t token_seed(const CorpusSpec& spec, bool val) {
  uint64_t sub = spec.shift == ShiftKind::IidSplit ? static_cast<uint64_t>(spec.iid_index) + 1 : 0;
  return derive_seed(spec.transition_seed, kTagTokens + 2 * sub + (val ? 1 : 0));
}

// Random row-stochastic matrix concentrating ~97% of each row's mass on a
// handful of preferred targets inside one half of the vocabulary. The sharp
// rows keep the chain's entropy rate well below ln V so a trained model has
// something to learn.
std::vector<double> random_dominant_matrix(uint64_t seed, int vocab, bool upper_half) {
  Xoshiro256ss rng(seed);
  const int half = vocab / 2;
  const int lo = upper_half ? half : 0;
  const int span = upper_half ? vocab - half : half;
  const int prefs = std::min<int>(6, span);

  std::vector<double> m(static_cast<size_t>(vocab) * vocab, 0.005);
  std::vector<int> chosen;
  for (int r = 0; r < vocab; ++r) {
    double* row = &m[static_cast<size_t>(r) * vocab];
    chosen.clear();
    while (static_cast<int>(chosen.size()) < prefs) {
      int c = lo + static_cast<int>(rng.next_below(static_cast<uint64_t>(span)));
      if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) {
        chosen.push_back(c);
        row[c] = 0.5 + rng.next_double();
      }
    }
    double sum = 0.0;
    for (int c = 0; c < vocab; ++c) sum += row[c];
    for (int c = 0; c < vocab; ++c) row[c] /= sum;
  }
  return m;
}

TokenStream gen_tokens(const std::vector<double>& matrix, int vocab, uint64_t seed,
                       int64_t count) {
  // Per-row CDFs once, then a binary search per emitted token.
  std::vector<double> cdf(matrix.size());
  for (int r = 0; r < vocab; ++r) {
    double cum = 0.0;
    for (int c = 0; c < vocab; ++c) {
      cum += matrix[static_cast<size_t>(r) * vocab + c];
      cdf[static_cast<size_t>(r) * vocab + c] = cum;
    }
  }

  Xoshiro256ss rng(seed);
  TokenStream s;
  s.vocab_size = vocab;
  s.tokens.resize(static_cast<size_t>(count));
  int state = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab)));
  for (int64_t i = 0; i < count; ++i) {
    const double* row = &cdf[static_cast<size_t>(state) * vocab];
    const double r = rng.next_double();
    int c = static_cast<int>(std::upper_bound(row, row + vocab, r) - row);
    if (c >= vocab) c = vocab - 1;
    s.tokens[static_cast<size_t>(i)] = static_cast<uint16_t>(c);
    state = c;
  }
  return s;
}

void put_u16(std::ofstream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ofstream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ofstream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

uint16_t get_u16(std::ifstream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kMagic[9] = "CTPTOKS1";

}  // namespace

const char* to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::Base: return "base";
    case ShiftKind::WeakShift: return "weak_shift";
    case ShiftKind::StrongShift: return "strong_shift";
    case ShiftKind::IidSplit: return "iid_split";
  }
  return "?";
}

void CorpusSpec::validate() const {
  auto fail = [this](const std::string& msg) {
    throw std::invalid_argument("corpus '" + name + "': " + msg);
  };
  if (vocab_size < 2 || vocab_size > 65535) fail("vocab_size must be in [2, 65535]");
  if (shift == ShiftKind::StrongShift && vocab_size < 4)
    fail("strong shift needs vocab_size >= 4 to halve the vocabulary");
  if (shift == ShiftKind::WeakShift && (weak_lambda < 0.0 || weak_lambda > 1.0))
    fail("weak shift mix weight outside [0, 1]");
  if (shift == ShiftKind::IidSplit && iid_index < 0) fail("iid_index must be >= 0");
  if (train_tokens < 1) fail("train_tokens must be >= 1");
  if (val_tokens < 1) fail("val_tokens must be >= 1");
}

std::vector<double> transition_matrix(const CorpusSpec& spec) {
  spec.validate();
  const uint64_t base_seed = derive_seed(spec.transition_seed, kTagMatrixBase);
  switch (spec.shift) {
    case ShiftKind::Base:
    case ShiftKind::IidSplit:
      return random_dominant_matrix(base_seed, spec.vocab_size, false);
    case ShiftKind::StrongShift:
      return random_dominant_matrix(derive_seed(spec.transition_seed, kTagMatrixStrong),
                                    spec.vocab_size, true);
    case ShiftKind::WeakShift: {
      std::vector<double> t0 = random_dominant_matrix(base_seed, spec.vocab_size, false);
      if (spec.weak_lambda == 0.0) return t0;  // exact mixture identity
      std::vector<double> p = random_dominant_matrix(
          derive_seed(spec.transition_seed, kTagMatrixPerturb), spec.vocab_size, false);
      const double lam = spec.weak_lambda;
      for (size_t i = 0; i < t0.size(); ++i) t0[i] = (1.0 - lam) * t0[i] + lam * p[i];
      for (int r = 0; r < spec.vocab_size; ++r) {
        double* row = &t0[static_cast<size_t>(r) * spec.vocab_size];
        double sum = 0.0;
        for (int c = 0; c < spec.vocab_size; ++c) sum += row[c];
        for (int c = 0; c < spec.vocab_size; ++c) row[c] /= sum;
      }
      return t0;
    }
  }
  throw std::logic_error("unreachable");
}

Corpus gen_corpus(const CorpusSpec& spec) {
  spec.validate();
  const std::vector<double> matrix = transition_matrix(spec);
  Corpus c;
  c.spec = spec;
  c.train = gen_tokens(matrix, spec.vocab_size, token_seed(spec, false), spec.train_tokens);
  c.val = gen_tokens(matrix, spec.vocab_size, token_seed(spec, true), spec.val_tokens);
  return c;
}

Window stream_window(const TokenStream& s, int64_t pos, int context_length) {
  if (context_length < 1) throw std::invalid_argument("stream_window: context_length < 1");
  if (pos < 0 || pos + context_length >= s.size())
    throw std::out_of_range("stream_window: window [" + std::to_string(pos) + ", " +
                            std::to_string(pos + context_length) + "] outside stream of " +
                            std::to_string(s.size()) + " tokens");
  return Window{std::span<const uint16_t>(s.tokens.data() + pos,
                                          static_cast<size_t>(context_length)),
                s.tokens[static_cast<size_t>(pos + context_length)]};
}

int64_t window_count(const TokenStream& s, int context_length) {
  return s.size() / (context_length + 1);
}

void DomainMixture::validate() const {
  if (domains.empty()) throw std::invalid_argument("mixture: no domains");
  double sum = 0.0;
  for (const auto& d : domains) {
    if (d.weight < 0.0) throw std::invalid_argument("mixture: negative weight");
    sum += d.weight;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture: weights sum to " + std::to_string(sum));
}

int sample_mixture(const DomainMixture& m, Xoshiro256ss& rng) {
  m.validate();
  const double r = rng.next_double();
  double cum = 0.0;
  for (size_t i = 0; i < m.domains.size(); ++i) {
    cum += m.domains[i].weight;
    if (r < cum) return static_cast<int>(i);
  }
  return static_cast<int>(m.domains.size()) - 1;
}

uint64_t stream_checksum(const TokenStream& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ull;
  };
  const uint32_t v = static_cast<uint32_t>(s.vocab_size);
  for (int i = 0; i < 4; ++i) mix(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
  const uint64_t n = static_cast<uint64_t>(s.tokens.size());
  for (int i = 0; i < 8; ++i) mix(static_cast<uint8_t>((n >> (8 * i)) & 0xff));
  for (uint16_t t : s.tokens) {
    mix(static_cast<uint8_t>(t & 0xff));
    mix(static_cast<uint8_t>(t >> 8));
  }
  return h;
}

void write_token_stream(const std::string& path, const TokenStream& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(s.vocab_size));
  put_u64(out, static_cast<uint64_t>(s.tokens.size()));
  for (uint16_t t : s.tokens) put_u16(out, t);
  if (!out) throw std::runtime_error("short write to " + path);
}

TokenStream read_token_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error(path + ": bad token-stream magic");
  const uint32_t version = get_u32(in);
  if (version != 1) throw std::runtime_error(path + ": unsupported version");
  TokenStream s;
  s.vocab_size = static_cast<int>(get_u32(in));
  const uint64_t count = get_u64(in);
  s.tokens.resize(count);
  for (uint64_t i = 0; i < count; ++i) s.tokens[i] = get_u16(in);
  if (!in) throw std::runtime_error(path + ": truncated token stream");
  for (uint16_t t : s.tokens)
    if (t >= s.vocab_size) throw std::runtime_error(path + ": token out of vocabulary");
  return s;
}

}  // namespace ctp
