#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace nlprompt {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kRngAlgorithm = "splitmix64-boxmuller-v1";
inline constexpr const char* kManifestSchema = "nlprompt-manifest-v1";

// Row-major so that sample rows are contiguous, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Precondition violation on user-supplied data or configuration.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Numerical failure inside an algorithm (NaN, underflow, divergence).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// CE evaluated at s_y == 0; an explicit error state, never a silent clamp.
class InfiniteLossError : public NumericalError {
 public:
  explicit InfiniteLossError(const std::string& msg) : NumericalError(msg) {}
};

/// Counter-based splitmix64 stream with a Box-Muller gaussian layer.
/// The u64 sequence is exact on every platform; gaussian draws depend only
/// on libm log/sqrt/sin/cos, which is stable within a fixed toolchain.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1); safe as a log() argument.
  double next_open_double() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound) via 128-bit multiply-shift.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw ValidationError("next_below: bound must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_open_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent child seed for the given purpose tag. Pure function of
  /// (seed, salt), so adding jobs to a grid never perturbs existing ones.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    SplitMix64 mix(seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
    return mix.next_u64();
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// FNV-1a 64-bit checksum, used by the embedding file format.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace nlprompt
