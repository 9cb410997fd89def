#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcaunet {

// Invalid model/run configuration (bad divisibility, unknown keys, ...).
// CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes at op boundaries.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid numeric domain (non-probability inputs, non-binary masks, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}
}  // namespace detail

template <typename Err, typename... Args>
[[noreturn]] void fail(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw Err(os.str());
}

#define LCAUNET_CHECK_SHAPE(cond, ...) \
  do {                                 \
    if (!(cond)) ::lcaunet::fail<::lcaunet::ShapeError>(__VA_ARGS__); \
  } while (0)

#define LCAUNET_CHECK_CONFIG(cond, ...) \
  do {                                  \
    if (!(cond)) ::lcaunet::fail<::lcaunet::ConfigError>(__VA_ARGS__); \
  } while (0)

#define LCAUNET_CHECK_DOMAIN(cond, ...) \
  do {                                  \
    if (!(cond)) ::lcaunet::fail<::lcaunet::DomainError>(__VA_ARGS__); \
  } while (0)

using Rng = std::mt19937_64;

// Stable seed derivation so per-item streams do not depend on draw order
// elsewhere (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace lcaunet
