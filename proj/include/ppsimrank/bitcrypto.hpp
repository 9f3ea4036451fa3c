#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ppsimrank/common.hpp"

#include <json.hpp>

namespace ppsr {

enum class Preset { desk, toy, small };

// Parameters of the bit-level encryption scheme.
//
//   eta    bit length of the secret odd modulus p
//   gamma  bit length of the public integers x_i
//   rho    bit length of the fresh-noise bound of one encryption
//   tau    number of public integers besides x_0
//
// recrypt_threshold is the floor on remaining noise budget (eta-2 minus the
// tracked bound) below which a ciphertext should be re-encrypted.
struct SchemeParams {
  Preset preset = Preset::desk;
  int eta = 0;
  int gamma = 0;
  int rho = 0;
  int tau = 0;
  int recrypt_threshold = 0;

  void validate() const;  // throws invalid_params
  static SchemeParams named(const std::string& name);
  static SchemeParams for_preset(Preset p);
  const char* preset_name() const;
};

struct PublicKey {
  std::vector<BigInt> x;  // x[0] is the largest
};

struct SecretKey {
  BigInt p;  // odd, eta bits
};

struct KeyPair {
  SchemeParams params;
  PublicKey pk;
  SecretKey sk;
};

// One encrypted bit. `noise_bits` is a conservative upper bound on
// log2 of the noise term; it only grows under homomorphic operations.
struct Cipher {
  BigInt value;
  int noise_bits = 0;
};

// The two interchangeable scheme backends. Both track noise with the same
// algebra (fresh = rho, add = max+1, mul = sum+1), so any sequence of
// operations follows the identical recrypt schedule on either backend.
class Scheme {
 public:
  explicit Scheme(const SchemeParams& params) : params_(params) { params_.validate(); }
  virtual ~Scheme() = default;

  const SchemeParams& params() const { return params_; }
  virtual const char* name() const = 0;

  virtual KeyPair keygen(Rng& rng) const = 0;
  virtual Cipher encrypt(const PublicKey& pk, int bit, Rng& rng) const = 0;
  virtual int decrypt(const SecretKey& sk, const Cipher& c) const = 0;
  virtual Cipher hom_add(const PublicKey& pk, const Cipher& a, const Cipher& b) const = 0;
  virtual Cipher hom_mul(const PublicKey& pk, const Cipher& a, const Cipher& b) const = 0;

 protected:
  void check_decryptable(const Cipher& c) const;
  SchemeParams params_;
};

// Somewhat-homomorphic scheme over the integers: ciphertexts are big
// integers congruent to the plaintext bit modulo 2 after reduction mod the
// secret p. Addition and multiplication of ciphertexts are XOR and AND of
// the bits. Desk-scale parameters are for experiments, not security.
class IntegerScheme final : public Scheme {
 public:
  using Scheme::Scheme;
  const char* name() const override { return "integer"; }
  KeyPair keygen(Rng& rng) const override;
  Cipher encrypt(const PublicKey& pk, int bit, Rng& rng) const override;
  int decrypt(const SecretKey& sk, const Cipher& c) const override;
  Cipher hom_add(const PublicKey& pk, const Cipher& a, const Cipher& b) const override;
  Cipher hom_mul(const PublicKey& pk, const Cipher& a, const Cipher& b) const override;
};

// Plaintext-carrying stand-in with the same interface and noise behaviour.
// The bit lives in the value's low bit; the rest is deterministic filler so
// ciphertext values still look distinct.
class MockScheme final : public Scheme {
 public:
  using Scheme::Scheme;
  const char* name() const override { return "mock"; }
  KeyPair keygen(Rng& rng) const override;
  Cipher encrypt(const PublicKey& pk, int bit, Rng& rng) const override;
  int decrypt(const SecretKey& sk, const Cipher& c) const override;
  Cipher hom_add(const PublicKey& pk, const Cipher& a, const Cipher& b) const override;
  Cipher hom_mul(const PublicKey& pk, const Cipher& a, const Cipher& b) const override;
};

std::unique_ptr<Scheme> make_scheme(const std::string& kind, const SchemeParams& params);

KeyPair keygen(const Scheme& scheme, std::uint64_t seed);

bool needs_recrypt(const Cipher& c, const SchemeParams& params);

// Pool of precomputed fresh encryptions of 0 and 1. Entries are consumed at
// most once. Single writer; callers serialize access externally.
class CipherTable {
 public:
  CipherTable(const Scheme& scheme, const PublicKey& pk, Rng rng, std::size_t refill_size = 64);

  Cipher take(int bit);  // refills synchronously when the pool is empty
  std::size_t pool_size(int bit) const;
  std::size_t refill_size() const { return refill_size_; }
  std::uint64_t encrypt_count() const { return encrypt_count_; }

 private:
  void refill(int bit);
  const Scheme& scheme_;
  const PublicKey& pk_;
  Rng rng_;
  std::size_t refill_size_;
  std::vector<Cipher> pool_[2];
  std::uint64_t encrypt_count_ = 0;
};

Cipher recrypt_local(const Scheme& scheme, const SecretKey& sk, const Cipher& c, CipherTable& table);

// Serialization: integers as lowercase hex, most significant digit first.
nlohmann::json params_json(const SchemeParams& p);
SchemeParams params_from_json(const nlohmann::json& j);
nlohmann::json public_key_json(const SchemeParams& params, const PublicKey& pk);
nlohmann::json secret_key_json(const SecretKey& sk);
std::pair<SchemeParams, PublicKey> public_key_from_json(const nlohmann::json& j);
SecretKey secret_key_from_json(const nlohmann::json& j);

}  // namespace ppsr
