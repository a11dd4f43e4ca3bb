#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fsim {

/// All library failures (precondition violations, I/O, format errors) are
/// reported with this exception type; the message says what went wrong.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

/// The one random engine used everywhere. mt19937_64 output is fixed by the
/// standard; the helpers below avoid the implementation-defined
/// std::*_distribution so draws are identical across toolchains.
using Rng = std::mt19937_64;

double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
/// Unbiased integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);
/// Standard normal via Box-Muller.
double normal(Rng& rng);
/// Derives an independent seed from a base seed and a stream id (splitmix64).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

/// FNV-1a 64-bit over raw bytes, chainable through `state`.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace fsim
