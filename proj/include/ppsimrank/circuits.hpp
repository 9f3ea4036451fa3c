#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ppsimrank/bitcrypto.hpp"

namespace ppsr {

// Unsigned fixed-point layout: `width` total bits, `frac` fractional bits.
// Values cover [0, 2^(width-frac)) in steps of 2^-frac.
struct FixedLayout {
  int width = 0;
  int frac = 0;

  void validate() const;
  bool operator==(const FixedLayout&) const = default;
  std::uint64_t raw_limit() const { return width >= 64 ? ~0ULL : (1ULL << width); }
};

// Encrypted fixed-point number, least significant bit first.
struct CipherString {
  std::vector<Cipher> bits;
  FixedLayout layout;
};

struct OpStats {
  std::uint64_t invocations = 0;  // top-level calls of this op class
  std::uint64_t hom_add = 0;
  std::uint64_t hom_mul = 0;
  std::uint64_t recrypts = 0;
  std::uint64_t table_draws = 0;
  double seconds = 0.0;
  // per-invocation recrypt extremes
  std::uint64_t recrypts_max = 0;
  std::uint64_t recrypts_min = std::numeric_limits<std::uint64_t>::max();
};

class OpCounters {
 public:
  OpStats& cls(const std::string& name) { return classes_[name]; }
  const std::map<std::string, OpStats>& classes() const { return classes_; }
  OpStats totals() const;
  std::map<std::string, std::uint64_t> flat() const;  // "class.metric" -> count
  nlohmann::json to_json() const;
  void clear() { classes_.clear(); }

 private:
  std::map<std::string, OpStats> classes_;
};

using RecryptFn = std::function<Cipher(const Cipher&)>;

// Evaluation context for one party's circuit work: scheme, key, cipher pool,
// optional re-encryption path and counters. When a recrypt callback is
// present, `add` and `mul` consult needs_recrypt on operands and on every
// product, so circuits never hit the noise ceiling; without a callback a
// too-deep circuit raises noise-overflow.
class CircuitContext {
 public:
  CircuitContext(const Scheme& scheme, const PublicKey& pk, CipherTable& table, RecryptFn recrypt = nullptr);

  Cipher add(Cipher a, Cipher b);
  Cipher mul(Cipher a, Cipher b);
  Cipher fresh(int bit);
  Cipher recrypt_cipher(const Cipher& c);
  bool has_recrypt() const { return static_cast<bool>(recrypt_); }

  const Scheme& scheme() const { return scheme_; }
  const PublicKey& pk() const { return pk_; }
  const SchemeParams& params() const { return scheme_.params(); }
  CipherTable& table() { return table_; }
  OpCounters& counters() { return counters_; }

  class ScopedOp {
   public:
    ScopedOp(CircuitContext& ctx, const char* name);
    ~ScopedOp();
    ScopedOp(const ScopedOp&) = delete;

   private:
    CircuitContext& ctx_;
    bool outer_;
    std::string name_;
    std::uint64_t recrypts_at_entry_ = 0;
    std::chrono::steady_clock::time_point t0_;
  };

 private:
  OpStats& active();
  void maybe_recrypt(Cipher& c);

  const Scheme& scheme_;
  const PublicKey& pk_;
  CipherTable& table_;
  RecryptFn recrypt_;
  OpCounters counters_;
  std::string active_class_ = "raw";
  int depth_ = 0;
};

// --- plain fixed-point encoding -------------------------------------------

std::vector<std::uint8_t> encode_fixed(double x, const FixedLayout& layout);
double decode_fixed(std::uint64_t raw, const FixedLayout& layout);
std::uint64_t raw_from_bits(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> bits_from_raw(std::uint64_t raw, int width);
std::string fixed_to_decimal(std::uint64_t raw, const FixedLayout& layout);  // exact, frac digits

// --- encrypted strings -----------------------------------------------------

CipherString encrypt_string(CircuitContext& ctx, std::uint64_t raw, const FixedLayout& layout);
CipherString zero_string(CircuitContext& ctx, const FixedLayout& layout);
std::uint64_t decrypt_string(const Scheme& scheme, const SecretKey& sk, const CipherString& s);

// --- circuits ----------------------------------------------------------------

// sum = a^b^cin; cout = (a&b) ^ (cin & (a^b)), via ciphertext add/mul
std::pair<Cipher, Cipher> full_adder(CircuitContext& ctx, const Cipher& a, const Cipher& b, const Cipher& cin);

// diff = a^b^bin; bout = OR of (~a&b) and (bin & ~(a^b)); `one` encrypts 1
std::pair<Cipher, Cipher> full_subtractor(CircuitContext& ctx, const Cipher& a, const Cipher& b, const Cipher& bin,
                                          const Cipher& one);

// (x + y) mod 2^W
CipherString add_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y);

// ((x - y) mod 2^W, borrow); borrow decrypts to 1 iff x < y
std::pair<CipherString, Cipher> sub_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y);

// fixed-point product: floor(X*Y / 2^frac) mod 2^W
CipherString mul_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y);

// raw integer product: (X*Y) mod 2^W (used for degree products)
CipherString mul_strings_integer(CircuitContext& ctx, const CipherString& x, const CipherString& y);

// restoring division; y holds a raw integer; floor(X / Y), 0 when Y = 0
CipherString div_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y);

// x when pi decrypts to 1, zero string otherwise; exactly W hom_mul
CipherString scalar_mask_mul(CircuitContext& ctx, const Cipher& pi, const CipherString& x);

// a OR b as (a+b) + (a*b)
Cipher cipher_or(CircuitContext& ctx, const Cipher& a, const Cipher& b);

// OR-fold over all bits of x
Cipher nonzero_flag(CircuitContext& ctx, const CipherString& x);

}  // namespace ppsr
