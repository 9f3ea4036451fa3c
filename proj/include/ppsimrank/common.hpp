#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <gmpxx.h>

namespace ppsr {

using BigInt = mpz_class;

enum class Errc {
  invalid_params,
  noise_overflow,
  layout_mismatch,
  out_of_range,
  parse_error,
  io_error,
  frame_too_large,
  connection_lost,
  protocol_violation,
  roster_misconfig,
  aborted,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc c, const std::string& msg) { throw Error(c, msg); }

// Deterministic RNG. Every randomized step in the library draws from one of
// these so that a run is reproducible from a single seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, bound), bound > 0
  std::uint64_t below(std::uint64_t bound) {
    std::uint64_t threshold = -bound % bound;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  bool coin() { return (next_u64() & 1) != 0; }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [0, 2^nbits); bits(0) == 0
  BigInt bits(unsigned nbits) {
    BigInt out = 0;
    unsigned full = nbits / 64, rem = nbits % 64;
    for (unsigned i = 0; i < full; ++i) {
      out <<= 64;
      out += BigInt(next_u64());
    }
    if (rem) {
      out <<= rem;
      out += BigInt(next_u64() >> (64 - rem));
    }
    return out;
  }

  // uniform in [0, bound), bound > 0
  BigInt below_big(const BigInt& bound) {
    std::size_t nbits = mpz_sizeinbase(bound.get_mpz_t(), 2);
    for (;;) {
      BigInt r = bits(static_cast<unsigned>(nbits));
      if (r < bound) return r;
    }
  }

  // independent stream derived from this one's seed and a salt
  Rng fork(std::uint64_t salt) const { return Rng(state_ ^ (salt * 0x9e3779b97f4a7c15ULL + 0x1234567897531ULL)); }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(const std::string& s);

std::string to_hex(const BigInt& v);
BigInt from_hex(const std::string& s);

}  // namespace ppsr
