#pragma once

// Shared plumbing: error types, checked assertions, a deterministic RNG,
// byte-order helpers and small filesystem utilities.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avc {

// Invalid configuration, bad arguments, broken input contracts. The CLI maps
// this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while executing an otherwise valid request (I/O, numeric blow-up).
// The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AVC_CHECK_ARG(cond, msg)                \
  do {                                          \
    if (!(cond)) {                              \
      std::ostringstream oss_avc_;              \
      oss_avc_ << msg;                          \
      throw ::avc::ConfigError(oss_avc_.str()); \
    }                                           \
  } while (0)

#define AVC_CHECK_RUNTIME(cond, msg)                \
  do {                                              \
    if (!(cond)) {                                  \
      std::ostringstream oss_avc_;                  \
      oss_avc_ << msg;                              \
      throw ::avc::RuntimeFailure(oss_avc_.str()); \
    }                                               \
  } while (0)

// Internal invariants; these should be unreachable from valid inputs.
#define AVC_ASSERT(cond, msg) AVC_CHECK_RUNTIME(cond, "internal error: " << msg)

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic splitmix64 generator. Identical sequences on every platform,
// which std::<distribution>s do not guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(mix64(seed + 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    AVC_CHECK_ARG(hi > lo, "Rng::uniform_int: empty range [" << lo << ", " << hi << ")");
    return lo + int64_t(next_u64() % uint64_t(hi - lo));
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586477 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Independent stream derived from the original seed, not the current state.
  Rng fork(uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 0x1234567)) ); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---- little-endian binary I/O ------------------------------------------------

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, uint32_t(v));
  write_u32(os, uint32_t(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  AVC_CHECK_RUNTIME(is.gcount() == std::streamsize(n), "truncated read while parsing " << what);
}

inline uint8_t read_u8(std::istream& is, const char* what) {
  uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}

inline uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_bytes(is, b, 2, what);
  return uint16_t(b[0] | b[1] << 8);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

inline uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t lo = read_u32(is, what);
  uint64_t hi = read_u32(is, what);
  return lo | hi << 32;
}

inline float read_f32(std::istream& is, const char* what) {
  uint32_t u = read_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

// ---- filesystem helpers ------------------------------------------------------

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  AVC_CHECK_RUNTIME(!ec && std::filesystem::is_directory(p),
                    "cannot create directory " << p.string() << ": " << ec.message());
}

inline void require_exists(const std::filesystem::path& p, const char* what) {
  AVC_CHECK_ARG(std::filesystem::exists(p), what << " not found: " << p.string());
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, std::string_view text) {
  std::ofstream f(p, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open for writing " << p.string());
  f.write(text.data(), std::streamsize(text.size()));
  AVC_CHECK_RUNTIME(f.good(), "write failed for " << p.string());
}

}  // namespace avc
