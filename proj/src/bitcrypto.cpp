#include "ppsimrank/bitcrypto.hpp"

#include <algorithm>
#include <cctype>

namespace ppsr {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_params: return "invalid-params";
    case Errc::noise_overflow: return "noise-overflow";
    case Errc::layout_mismatch: return "layout-mismatch";
    case Errc::out_of_range: return "out-of-range";
    case Errc::parse_error: return "parse-error";
    case Errc::io_error: return "io-error";
    case Errc::frame_too_large: return "frame-too-large";
    case Errc::connection_lost: return "connection-lost";
    case Errc::protocol_violation: return "protocol-violation";
    case Errc::roster_misconfig: return "roster-misconfiguration";
    case Errc::aborted: return "abort";
  }
  return "unknown";
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(const BigInt& v) {
  if (v < 0) fail(Errc::out_of_range, "negative integer in hex serialization");
  char* raw = mpz_get_str(nullptr, 16, v.get_mpz_t());
  std::string out(raw);
  void (*freefn)(void*, size_t);
  mp_get_memory_functions(nullptr, nullptr, &freefn);
  freefn(raw, out.size() + 1);
  return out;
}

BigInt from_hex(const std::string& s) {
  if (s.empty()) fail(Errc::parse_error, "empty hex integer");
  for (char c : s)
    if (!std::isxdigit(static_cast<unsigned char>(c)))
      fail(Errc::parse_error, "bad hex digit in integer");
  BigInt v;
  mpz_set_str(v.get_mpz_t(), s.c_str(), 16);
  return v;
}

void SchemeParams::validate() const {
  if (eta <= 2 * rho + 4) fail(Errc::invalid_params, "eta must exceed 2*rho+4");
  if (gamma <= eta) fail(Errc::invalid_params, "gamma must exceed eta");
  if (tau < 2) fail(Errc::invalid_params, "tau must be at least 2");
  if (rho < 2) fail(Errc::invalid_params, "rho must be at least 2");
  if (recrypt_threshold < rho + 2) fail(Errc::invalid_params, "recrypt_threshold must be at least rho+2");
}

SchemeParams SchemeParams::for_preset(Preset p) {
  switch (p) {
    case Preset::desk:
      return SchemeParams{Preset::desk, 256, 1600, 4, 8, 16};
    case Preset::toy:
      return SchemeParams{Preset::toy, 256, 8192, 8, 16, 24};
    case Preset::small:
      return SchemeParams{Preset::small, 1024, 65536, 16, 32, 48};
  }
  fail(Errc::invalid_params, "unknown preset");
}

SchemeParams SchemeParams::named(const std::string& name) {
  if (name == "desk") return for_preset(Preset::desk);
  if (name == "toy") return for_preset(Preset::toy);
  if (name == "small") return for_preset(Preset::small);
  fail(Errc::invalid_params, "unknown preset '" + name + "'");
}

const char* SchemeParams::preset_name() const {
  switch (preset) {
    case Preset::desk: return "desk";
    case Preset::toy: return "toy";
    case Preset::small: return "small";
  }
  return "?";
}

void Scheme::check_decryptable(const Cipher& c) const {
  if (c.noise_bits >= params_.eta - 2)
    fail(Errc::noise_overflow,
         "ciphertext noise bound " + std::to_string(c.noise_bits) + " >= eta-2 = " +
             std::to_string(params_.eta - 2));
}

namespace {

int ceil_log2(int v) {
  int b = 0;
  while ((1 << b) < v) ++b;
  return b;
}

// Noise budget of one public integer. Chosen so that the worst-case total
// noise of a fresh encryption (2r plus the even subset sum) stays below
// 2^rho, which keeps the tracked fresh bound of rho sound.
int pk_noise_bits(const SchemeParams& p) {
  return std::max(0, p.rho - 4 - ceil_log2(p.tau));
}

}  // namespace

KeyPair IntegerScheme::keygen(Rng& rng) const {
  const auto& p = params_;
  KeyPair kp;
  kp.params = p;

  // secret modulus: odd, exactly eta bits
  BigInt sk = rng.bits(static_cast<unsigned>(p.eta - 1));
  mpz_setbit(sk.get_mpz_t(), static_cast<mp_bitcnt_t>(p.eta - 1));
  mpz_setbit(sk.get_mpz_t(), 0);
  kp.sk.p = sk;

  // x_0 = p * q_0 exactly, with q_0 odd and of gamma-eta bits; the exact
  // multiple makes reduction mod x_0 noise-free.
  BigInt q0 = rng.bits(static_cast<unsigned>(p.gamma - p.eta - 1));
  mpz_setbit(q0.get_mpz_t(), static_cast<mp_bitcnt_t>(p.gamma - p.eta - 1));
  mpz_setbit(q0.get_mpz_t(), 0);

  kp.pk.x.resize(static_cast<std::size_t>(p.tau) + 1);
  kp.pk.x[0] = sk * q0;

  const int rbits = pk_noise_bits(p);
  for (int i = 1; i <= p.tau; ++i) {
    BigInt qi = 1 + rng.below_big(q0 - 1);  // [1, q0)
    BigInt ri = (i == 1) ? BigInt(0) : rng.bits(static_cast<unsigned>(rbits));
    kp.pk.x[static_cast<std::size_t>(i)] = sk * qi + 2 * ri;
  }
  return kp;
}

Cipher IntegerScheme::encrypt(const PublicKey& pk, int bit, Rng& rng) const {
  const auto& p = params_;
  // bit + even fresh noise + even random combination of public integers,
  // reduced mod x_0. x_1 carries no noise, so the wide multiplier u only
  // diversifies the value, not the noise.
  BigInt c = bit;
  c += 2 * rng.bits(static_cast<unsigned>(p.rho - 2));
  c += 2 * BigInt(rng.next_u64()) * pk.x[1];
  for (int i = 2; i <= p.tau; ++i)
    if (rng.coin()) c += 2 * pk.x[static_cast<std::size_t>(i)];
  c %= pk.x[0];
  return Cipher{c, p.rho};
}

int IntegerScheme::decrypt(const SecretKey& sk, const Cipher& c) const {
  check_decryptable(c);
  BigInt rem = c.value % sk.p;  // noise is nonnegative by construction
  return mpz_tstbit(rem.get_mpz_t(), 0) ? 1 : 0;
}

Cipher IntegerScheme::hom_add(const PublicKey& pk, const Cipher& a, const Cipher& b) const {
  Cipher out;
  out.value = (a.value + b.value) % pk.x[0];
  out.noise_bits = std::max(a.noise_bits, b.noise_bits) + 1;
  return out;
}

Cipher IntegerScheme::hom_mul(const PublicKey& pk, const Cipher& a, const Cipher& b) const {
  if (a.noise_bits + b.noise_bits >= params_.eta - 2)
    fail(Errc::noise_overflow, "hom_mul operands exceed the noise budget (missed recrypt?)");
  Cipher out;
  out.value = (a.value * b.value) % pk.x[0];
  out.noise_bits = a.noise_bits + b.noise_bits + 1;
  return out;
}

KeyPair MockScheme::keygen(Rng& rng) const {
  // Reuse the integer construction so key material and serialization are
  // shaped identically; the mock ignores it during operations.
  IntegerScheme real(params_);
  return real.keygen(rng);
}

Cipher MockScheme::encrypt(const PublicKey&, int bit, Rng& rng) const {
  BigInt filler = rng.bits(126);
  return Cipher{(filler << 1) | (bit & 1), params_.rho};
}

int MockScheme::decrypt(const SecretKey&, const Cipher& c) const {
  check_decryptable(c);
  return mpz_tstbit(c.value.get_mpz_t(), 0) ? 1 : 0;
}

Cipher MockScheme::hom_add(const PublicKey&, const Cipher& a, const Cipher& b) const {
  Cipher out;
  out.value = a.value ^ b.value;
  out.noise_bits = std::max(a.noise_bits, b.noise_bits) + 1;
  return out;
}

Cipher MockScheme::hom_mul(const PublicKey&, const Cipher& a, const Cipher& b) const {
  if (a.noise_bits + b.noise_bits >= params_.eta - 2)
    fail(Errc::noise_overflow, "hom_mul operands exceed the noise budget (missed recrypt?)");
  int bit = (mpz_tstbit(a.value.get_mpz_t(), 0) & mpz_tstbit(b.value.get_mpz_t(), 0)) ? 1 : 0;
  BigInt mixed = a.value ^ (b.value << 1);
  mpz_clrbit(mixed.get_mpz_t(), 0);
  Cipher out;
  out.value = mixed | bit;
  out.noise_bits = a.noise_bits + b.noise_bits + 1;
  return out;
}

std::unique_ptr<Scheme> make_scheme(const std::string& kind, const SchemeParams& params) {
  if (kind == "integer") return std::make_unique<IntegerScheme>(params);
  if (kind == "mock") return std::make_unique<MockScheme>(params);
  fail(Errc::invalid_params, "unknown scheme '" + kind + "' (expected integer or mock)");
}

KeyPair keygen(const Scheme& scheme, std::uint64_t seed) {
  Rng rng(seed);
  return scheme.keygen(rng);
}

bool needs_recrypt(const Cipher& c, const SchemeParams& params) {
  return params.eta - 2 - c.noise_bits < params.recrypt_threshold;
}

CipherTable::CipherTable(const Scheme& scheme, const PublicKey& pk, Rng rng, std::size_t refill_size)
    : scheme_(scheme), pk_(pk), rng_(rng), refill_size_(refill_size) {
  if (refill_size_ == 0) fail(Errc::invalid_params, "refill_size must be positive");
}

void CipherTable::refill(int bit) {
  auto& pool = pool_[bit];
  pool.reserve(pool.size() + refill_size_);
  for (std::size_t i = 0; i < refill_size_; ++i) {
    pool.push_back(scheme_.encrypt(pk_, bit, rng_));
    ++encrypt_count_;
  }
}

Cipher CipherTable::take(int bit) {
  bit &= 1;
  auto& pool = pool_[bit];
  if (pool.empty()) refill(bit);
  Cipher out = std::move(pool.back());
  pool.pop_back();
  return out;
}

std::size_t CipherTable::pool_size(int bit) const { return pool_[bit & 1].size(); }

Cipher recrypt_local(const Scheme& scheme, const SecretKey& sk, const Cipher& c, CipherTable& table) {
  return table.take(scheme.decrypt(sk, c));
}

nlohmann::json params_json(const SchemeParams& p) {
  return nlohmann::json{{"preset", p.preset_name()}, {"eta", p.eta},     {"gamma", p.gamma},
                        {"rho", p.rho},              {"tau", p.tau},     {"recrypt_threshold", p.recrypt_threshold}};
}

SchemeParams params_from_json(const nlohmann::json& j) {
  SchemeParams p = SchemeParams::named(j.at("preset").get<std::string>());
  p.eta = j.value("eta", p.eta);
  p.gamma = j.value("gamma", p.gamma);
  p.rho = j.value("rho", p.rho);
  p.tau = j.value("tau", p.tau);
  p.recrypt_threshold = j.value("recrypt_threshold", p.recrypt_threshold);
  p.validate();
  return p;
}

nlohmann::json public_key_json(const SchemeParams& params, const PublicKey& pk) {
  nlohmann::json xs = nlohmann::json::array();
  for (const auto& x : pk.x) xs.push_back(to_hex(x));
  return nlohmann::json{{"x", xs}, {"params", params_json(params)}};
}

nlohmann::json secret_key_json(const SecretKey& sk) { return nlohmann::json{{"p", to_hex(sk.p)}}; }

std::pair<SchemeParams, PublicKey> public_key_from_json(const nlohmann::json& j) {
  SchemeParams params = params_from_json(j.at("params"));
  PublicKey pk;
  for (const auto& x : j.at("x")) pk.x.push_back(from_hex(x.get<std::string>()));
  if (pk.x.size() != static_cast<std::size_t>(params.tau) + 1)
    fail(Errc::parse_error, "public key must hold tau+1 integers");
  return {params, pk};
}

SecretKey secret_key_from_json(const nlohmann::json& j) { return SecretKey{from_hex(j.at("p").get<std::string>())}; }

}  // namespace ppsr
