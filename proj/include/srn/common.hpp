#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace srn {

enum class ErrorCode {
  kDegenerateTarget,
  kShapeMismatch,
  kInvalidArgument,
  kEmptyInput,
  kIo,
  kParse,
  kState,
  kNumerical,
};

const char* to_string(ErrorCode code);

/// Library-wide exception. Every thrown error carries a code so callers
/// (and tests) can branch on the failure class instead of the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SRN_CHECK(cond, code, msg)                 \
  do {                                             \
    if (!(cond)) throw ::srn::Error((code), (msg)); \
  } while (0)

/// SplitMix64-seeded xoshiro256** generator. Portable bit-for-bit, unlike
/// the standard distributions, which are implementation defined.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed);
  uint64_t next();

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  /// Derive an independent stream, e.g. per sequence or per worker.
  Rng fork(uint64_t salt);

 private:
  uint64_t s_[4];
};

}  // namespace srn
