// Copyright 2026 The SPNN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <gmpxx.h>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spnn/prg.h"

namespace spnn::paillier {

// Paillier with g = n + 1: Enc(m; r) = (1 + m*n) * r^n mod n^2,
// Dec(c) = L(c^lambda mod n^2) * mu mod n with L(x) = (x - 1) / n.

inline constexpr int kMinTestBits = 512;
inline constexpr int kDefaultBits = 2048;

struct PublicKey {
  mpz_class n;
  mpz_class n_squared;
  mpz_class g;  // n + 1

  // Hash of n; ciphertexts carry it so mixing keys is detectable.
  std::uint64_t fingerprint = 0;

  int bits() const;
};

struct SecretKey {
  mpz_class lambda;  // lcm(p - 1, q - 1)
  mpz_class mu;      // (L(g^lambda mod n^2))^{-1} mod n
};

struct Keypair {
  PublicKey pk;
  SecretKey sk;
};

struct Ciphertext {
  mpz_class value;
  std::uint64_t key_fingerprint = 0;
};

PublicKey make_public_key(const mpz_class& n);

// bits is the size of n. Deterministic for a given generator state.
Keypair keygen(int bits, Prg& rng);

// Fresh randomness r uniform in [1, n) with gcd(r, n) = 1.
mpz_class sample_unit(const PublicKey& pk, Prg& rng);

Ciphertext encrypt(const PublicKey& pk, const mpz_class& m, Prg& rng);
Ciphertext encrypt_with(const PublicKey& pk, const mpz_class& m, const mpz_class& r);

// Homomorphic addition: decrypts to (m1 + m2) mod n.
Ciphertext add_ct(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b);

mpz_class decrypt(const Keypair& key, const Ciphertext& c);

// mu * L(g^lambda mod n^2) == 1 mod n.
bool key_is_valid(const Keypair& key);

// Signed fixed-point plaintexts: x >= 0 maps to round(x * 2^l_f), x < 0 to
// n - round(|x| * 2^l_f); decoding treats values above n/2 as negative.
class SignedEncoder {
 public:
  SignedEncoder(const PublicKey& pk, int frac_bits);

  // |x| bound below which encode accepts and sums of two operands cannot wrap.
  double bound() const { return bound_; }

  mpz_class encode(double x) const;
  mpz_class encode_fixed(std::int64_t scaled) const;
  double decode(const mpz_class& m) const;
  mpz_class decode_fixed(const mpz_class& m) const;  // signed integer

 private:
  mpz_class n_;
  mpz_class half_n_;
  int frac_bits_;
  double bound_;
};

// Packs several signed 64-bit fixed-point integers into one plaintext, each in
// its own slot with an offset so that homomorphic sums of up to
// max_addends packed plaintexts do not borrow across slots.
class SlotPacker {
 public:
  SlotPacker(const PublicKey& pk, int value_bits = 62, int max_addends = 2);

  std::size_t slots() const { return slots_; }
  int slot_bits() const { return slot_bits_; }

  // values.size() <= slots(). Each |value| < 2^(value_bits - 1).
  mpz_class pack(std::span<const std::int64_t> values) const;
  // Decodes `count` slots of a plaintext that is the sum of `addends` packs.
  std::vector<std::int64_t> unpack(const mpz_class& m, std::size_t count,
                                   int addends) const;

 private:
  int value_bits_;
  int slot_bits_;
  int max_addends_;
  std::size_t slots_;
  mpz_class offset_;
};

// Wire form: little-endian u32 byte count, then big-endian magnitude bytes.
void append_bigint(std::vector<std::uint8_t>& out, const mpz_class& v);
mpz_class read_bigint(std::span<const std::uint8_t> in, std::size_t& offset);

std::vector<std::uint8_t> serialize_public_key(const PublicKey& pk);
PublicKey deserialize_public_key(std::span<const std::uint8_t> in);

}  // namespace spnn::paillier
