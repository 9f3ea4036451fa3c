#include "ppsimrank/circuits.hpp"

#include <cmath>

namespace ppsr {

void FixedLayout::validate() const {
  if (frac < 1 || width < frac) fail(Errc::invalid_params, "layout requires width >= frac >= 1");
  if (width > 62) fail(Errc::invalid_params, "layout width above 62 bits is unsupported");
}

OpStats OpCounters::totals() const {
  OpStats t;
  for (const auto& [name, s] : classes_) {
    t.invocations += s.invocations;
    t.hom_add += s.hom_add;
    t.hom_mul += s.hom_mul;
    t.recrypts += s.recrypts;
    t.table_draws += s.table_draws;
    t.seconds += s.seconds;
  }
  return t;
}

std::map<std::string, std::uint64_t> OpCounters::flat() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, s] : classes_) {
    out[name + ".invocations"] = s.invocations;
    out[name + ".hom_add"] = s.hom_add;
    out[name + ".hom_mul"] = s.hom_mul;
    out[name + ".recrypts"] = s.recrypts;
    out[name + ".table_draws"] = s.table_draws;
  }
  return out;
}

nlohmann::json OpCounters::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : classes_) {
    nlohmann::json e{{"invocations", s.invocations}, {"hom_add", s.hom_add},       {"hom_mul", s.hom_mul},
                     {"recrypts", s.recrypts},       {"table_draws", s.table_draws}, {"seconds", s.seconds}};
    if (s.invocations > 0) {
      e["recrypts_max"] = s.recrypts_max;
      e["recrypts_min"] = s.recrypts_min == std::numeric_limits<std::uint64_t>::max() ? 0 : s.recrypts_min;
    }
    j[name] = e;
  }
  return j;
}

CircuitContext::CircuitContext(const Scheme& scheme, const PublicKey& pk, CipherTable& table, RecryptFn recrypt)
    : scheme_(scheme), pk_(pk), table_(table), recrypt_(std::move(recrypt)) {}

OpStats& CircuitContext::active() { return counters_.cls(active_class_); }

void CircuitContext::maybe_recrypt(Cipher& c) {
  if (recrypt_ && needs_recrypt(c, params())) c = recrypt_cipher(c);
}

Cipher CircuitContext::recrypt_cipher(const Cipher& c) {
  if (!recrypt_) fail(Errc::noise_overflow, "recrypt required but no recrypt path configured");
  active().recrypts++;
  return recrypt_(c);
}

Cipher CircuitContext::add(Cipher a, Cipher b) {
  maybe_recrypt(a);
  maybe_recrypt(b);
  Cipher out = scheme_.hom_add(pk_, a, b);
  active().hom_add++;
  return out;
}

Cipher CircuitContext::mul(Cipher a, Cipher b) {
  maybe_recrypt(a);
  maybe_recrypt(b);
  if (recrypt_) {
    while (a.noise_bits + b.noise_bits >= params().eta - 2) {
      if (a.noise_bits >= b.noise_bits)
        a = recrypt_cipher(a);
      else
        b = recrypt_cipher(b);
    }
  }
  Cipher out = scheme_.hom_mul(pk_, a, b);
  active().hom_mul++;
  maybe_recrypt(out);
  return out;
}

Cipher CircuitContext::fresh(int bit) {
  active().table_draws++;
  return table_.take(bit);
}

CircuitContext::ScopedOp::ScopedOp(CircuitContext& ctx, const char* name) : ctx_(ctx), outer_(ctx.depth_ == 0) {
  ctx_.depth_++;
  if (outer_) {
    name_ = name;
    ctx_.active_class_ = name_;
    OpStats& s = ctx_.counters_.cls(name_);
    s.invocations++;
    recrypts_at_entry_ = s.recrypts;
    t0_ = std::chrono::steady_clock::now();
  }
}

CircuitContext::ScopedOp::~ScopedOp() {
  ctx_.depth_--;
  if (outer_) {
    OpStats& s = ctx_.counters_.cls(name_);
    s.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    std::uint64_t delta = s.recrypts - recrypts_at_entry_;
    s.recrypts_max = std::max(s.recrypts_max, delta);
    s.recrypts_min = std::min(s.recrypts_min, delta);
    ctx_.active_class_ = "raw";
  }
}

std::vector<std::uint8_t> encode_fixed(double x, const FixedLayout& layout) {
  layout.validate();
  long double scaled = std::floor(static_cast<long double>(x) * std::exp2l(layout.frac));
  if (!(scaled >= 0.0L) || scaled >= std::exp2l(layout.width))
    fail(Errc::out_of_range, "value not representable in the fixed layout");
  return bits_from_raw(static_cast<std::uint64_t>(scaled), layout.width);
}

double decode_fixed(std::uint64_t raw, const FixedLayout& layout) {
  return static_cast<double>(raw) / std::exp2(layout.frac);
}

std::uint64_t raw_from_bits(const std::vector<std::uint8_t>& bits) {
  std::uint64_t raw = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) raw |= static_cast<std::uint64_t>(bits[i] & 1) << i;
  return raw;
}

std::vector<std::uint8_t> bits_from_raw(std::uint64_t raw, int width) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) bits[static_cast<std::size_t>(i)] = (raw >> i) & 1;
  return bits;
}

std::string fixed_to_decimal(std::uint64_t raw, const FixedLayout& layout) {
  std::uint64_t ipart = raw >> layout.frac;
  std::uint64_t fmask = layout.frac >= 64 ? ~0ULL : ((1ULL << layout.frac) - 1);
  BigInt frac = BigInt(static_cast<unsigned long>(raw & fmask));
  // k/2^f in decimal is exactly k*5^f padded to f digits
  BigInt five = 1;
  for (int i = 0; i < layout.frac; ++i) five *= 5;
  std::string digits = (frac * five).get_str(10);
  if (static_cast<int>(digits.size()) < layout.frac)
    digits.insert(digits.begin(), static_cast<std::size_t>(layout.frac) - digits.size(), '0');
  return std::to_string(ipart) + "." + digits;
}

CipherString encrypt_string(CircuitContext& ctx, std::uint64_t raw, const FixedLayout& layout) {
  layout.validate();
  if (layout.width < 64 && raw >= (1ULL << layout.width)) fail(Errc::out_of_range, "raw value exceeds layout width");
  CipherString s;
  s.layout = layout;
  s.bits.reserve(static_cast<std::size_t>(layout.width));
  for (int i = 0; i < layout.width; ++i) s.bits.push_back(ctx.fresh((raw >> i) & 1));
  return s;
}

CipherString zero_string(CircuitContext& ctx, const FixedLayout& layout) { return encrypt_string(ctx, 0, layout); }

std::uint64_t decrypt_string(const Scheme& scheme, const SecretKey& sk, const CipherString& s) {
  std::uint64_t raw = 0;
  for (std::size_t i = 0; i < s.bits.size(); ++i)
    raw |= static_cast<std::uint64_t>(scheme.decrypt(sk, s.bits[i])) << i;
  return raw;
}

std::pair<Cipher, Cipher> full_adder(CircuitContext& ctx, const Cipher& a, const Cipher& b, const Cipher& cin) {
  CircuitContext::ScopedOp op(ctx, "full_adder");
  Cipher axb = ctx.add(a, b);
  Cipher sum = ctx.add(axb, cin);
  Cipher ab = ctx.mul(a, b);
  Cipher c_ax = ctx.mul(cin, axb);
  Cipher cout = ctx.add(ab, c_ax);
  return {sum, cout};
}

std::pair<Cipher, Cipher> full_subtractor(CircuitContext& ctx, const Cipher& a, const Cipher& b, const Cipher& bin,
                                          const Cipher& one) {
  CircuitContext::ScopedOp op(ctx, "full_subtractor");
  Cipher na = ctx.add(one, a);
  Cipher t1 = ctx.mul(na, b);
  Cipher axb = ctx.add(a, b);
  Cipher naxb = ctx.add(one, axb);
  Cipher t2 = ctx.mul(bin, naxb);
  Cipher diff = ctx.add(axb, bin);
  Cipher s = ctx.add(t1, t2);
  Cipher p = ctx.mul(t1, t2);
  Cipher bout = ctx.add(s, p);
  return {diff, bout};
}

namespace {

void check_same_layout(const CipherString& x, const CipherString& y) {
  if (!(x.layout == y.layout)) fail(Errc::layout_mismatch, "operands use different fixed layouts");
}

// zero-extend to `width` bits with fresh zeros
CipherString widen(CircuitContext& ctx, const CipherString& x, int width) {
  CipherString out;
  out.layout = FixedLayout{width, x.layout.frac};
  out.bits = x.bits;
  while (static_cast<int>(out.bits.size()) < width) out.bits.push_back(ctx.fresh(0));
  return out;
}

// multiply by 2^k mod 2^W: drop top bits, insert fresh zeros at the bottom
CipherString shift_up(CircuitContext& ctx, const CipherString& x, int k) {
  CipherString out;
  out.layout = x.layout;
  out.bits.reserve(x.bits.size());
  for (int i = 0; i < k && i < x.layout.width; ++i) out.bits.push_back(ctx.fresh(0));
  for (int i = 0; static_cast<int>(out.bits.size()) < x.layout.width; ++i) out.bits.push_back(x.bits[static_cast<std::size_t>(i)]);
  return out;
}

CipherString add_impl(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  check_same_layout(x, y);
  const int w = x.layout.width;
  CipherString out;
  out.layout = x.layout;
  out.bits.reserve(static_cast<std::size_t>(w));
  Cipher carry = ctx.fresh(0);
  for (int i = 0; i < w; ++i) {
    const Cipher& a = x.bits[static_cast<std::size_t>(i)];
    const Cipher& b = y.bits[static_cast<std::size_t>(i)];
    if (i + 1 < w) {
      auto [sum, cout] = full_adder(ctx, a, b, carry);
      out.bits.push_back(sum);
      carry = cout;
    } else {
      // final carry is discarded (arithmetic mod 2^W); skip computing it
      out.bits.push_back(ctx.add(ctx.add(a, b), carry));
    }
  }
  return out;
}

std::pair<CipherString, Cipher> sub_impl(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  check_same_layout(x, y);
  const int w = x.layout.width;
  CipherString out;
  out.layout = x.layout;
  out.bits.reserve(static_cast<std::size_t>(w));
  Cipher borrow = ctx.fresh(0);
  for (int i = 0; i < w; ++i) {
    Cipher one = ctx.fresh(1);
    auto [diff, bout] = full_subtractor(ctx, x.bits[static_cast<std::size_t>(i)], y.bits[static_cast<std::size_t>(i)],
                                        borrow, one);
    out.bits.push_back(diff);
    borrow = bout;
  }
  return {out, borrow};
}

CipherString mask_impl(CircuitContext& ctx, const Cipher& pi, const CipherString& x) {
  CipherString out;
  out.layout = x.layout;
  out.bits.reserve(x.bits.size());
  for (const Cipher& b : x.bits) out.bits.push_back(ctx.mul(pi, b));
  return out;
}

Cipher or_impl(CircuitContext& ctx, const Cipher& a, const Cipher& b) {
  Cipher s = ctx.add(a, b);
  Cipher p = ctx.mul(a, b);
  return ctx.add(s, p);
}

// shared core of the two multiply flavours: accumulate masked shifted copies
// of y at `acc_width`, return bits [drop, drop+W)
CipherString mul_core(CircuitContext& ctx, const CipherString& x, const CipherString& y, int acc_width, int drop) {
  check_same_layout(x, y);
  const int w = x.layout.width;
  FixedLayout wide{acc_width, x.layout.frac};
  CipherString acc = zero_string(ctx, wide);
  CipherString yw = widen(ctx, y, acc_width);
  for (int i = 0; i < w; ++i) {
    CipherString pp = mask_impl(ctx, x.bits[static_cast<std::size_t>(i)], yw);
    pp = shift_up(ctx, pp, i);
    acc = add_impl(ctx, acc, pp);
  }
  CipherString out;
  out.layout = x.layout;
  out.bits.assign(acc.bits.begin() + drop, acc.bits.begin() + drop + w);
  return out;
}

}  // namespace

CipherString add_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  CircuitContext::ScopedOp op(ctx, "add_strings");
  return add_impl(ctx, x, y);
}

std::pair<CipherString, Cipher> sub_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  CircuitContext::ScopedOp op(ctx, "sub_strings");
  return sub_impl(ctx, x, y);
}

CipherString mul_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  CircuitContext::ScopedOp op(ctx, "mul_strings");
  // widen the accumulator by frac bits so the truncating shift keeps the
  // exact value of floor(X*Y / 2^frac) mod 2^W for all operands
  return mul_core(ctx, x, y, x.layout.width + x.layout.frac, x.layout.frac);
}

CipherString mul_strings_integer(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  CircuitContext::ScopedOp op(ctx, "mul_strings_integer");
  return mul_core(ctx, x, y, x.layout.width, 0);
}

CipherString div_strings(CircuitContext& ctx, const CipherString& x, const CipherString& y) {
  CircuitContext::ScopedOp op(ctx, "div_strings");
  check_same_layout(x, y);
  const int w = x.layout.width;
  const int wp = w + 1;  // remainder register needs one headroom bit
  FixedLayout wide{wp, x.layout.frac};

  CipherString rem = zero_string(ctx, wide);
  CipherString yw = widen(ctx, y, wp);
  std::vector<Cipher> quotient(static_cast<std::size_t>(w));

  for (int i = w - 1; i >= 0; --i) {
    // rem = (rem << 1) | x_i; the dropped top bit is always zero because the
    // restored remainder stays below the divisor
    CipherString shifted;
    shifted.layout = wide;
    shifted.bits.reserve(static_cast<std::size_t>(wp));
    shifted.bits.push_back(x.bits[static_cast<std::size_t>(i)]);
    for (int k = 0; k + 1 < wp; ++k) shifted.bits.push_back(rem.bits[static_cast<std::size_t>(k)]);
    rem = std::move(shifted);

    auto [diff, borrow] = sub_impl(ctx, rem, yw);
    quotient[static_cast<std::size_t>(i)] = ctx.add(borrow, ctx.fresh(1));  // 1 xor borrow
    CipherString restore = mask_impl(ctx, borrow, yw);
    rem = add_impl(ctx, diff, restore);
  }

  // a zero divisor yields a zero quotient
  Cipher flag = ctx.fresh(0);
  for (const Cipher& b : y.bits) flag = or_impl(ctx, flag, b);

  CipherString out;
  out.layout = x.layout;
  out.bits.reserve(static_cast<std::size_t>(w));
  for (const Cipher& q : quotient) out.bits.push_back(ctx.mul(flag, q));
  return out;
}

CipherString scalar_mask_mul(CircuitContext& ctx, const Cipher& pi, const CipherString& x) {
  CircuitContext::ScopedOp op(ctx, "scalar_mask_mul");
  return mask_impl(ctx, pi, x);
}

Cipher cipher_or(CircuitContext& ctx, const Cipher& a, const Cipher& b) {
  CircuitContext::ScopedOp op(ctx, "cipher_or");
  return or_impl(ctx, a, b);
}

Cipher nonzero_flag(CircuitContext& ctx, const CipherString& x) {
  CircuitContext::ScopedOp op(ctx, "nonzero_flag");
  Cipher flag = ctx.fresh(0);
  for (const Cipher& b : x.bits) flag = or_impl(ctx, flag, b);
  return flag;
}

}  // namespace ppsr
