#pragma once

#include <stdexcept>
#include <string>

namespace ctp {

/// A sequential reader ran out of tokens and wrapping was disabled.
class SourceExhausted : public std::runtime_error {
 public:
  SourceExhausted(std::string source, const std::string& what)
      : std::runtime_error(what), source_(std::move(source)) {}
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
};

/// A loss, gradient or parameter update stopped being finite, or the
/// divergence detector tripped.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctp
