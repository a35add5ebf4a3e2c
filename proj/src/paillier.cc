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

#include "spnn/paillier.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "spnn/error.h"

namespace spnn::paillier {
namespace {

mpz_class random_bits(int bits, Prg& rng) {
  std::vector<std::uint8_t> bytes((bits + 7) / 8);
  rng.fill(bytes);
  mpz_class out;
  mpz_import(out.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  const int excess = static_cast<int>(bytes.size()) * 8 - bits;
  if (excess > 0) out >>= excess;
  return out;
}

mpz_class random_below(const mpz_class& bound, Prg& rng) {
  const int bits = static_cast<int>(mpz_sizeinbase(bound.get_mpz_t(), 2));
  mpz_class x;
  do {
    x = random_bits(bits, rng);
  } while (x >= bound);
  return x;
}

mpz_class random_prime(int bits, Prg& rng) {
  mpz_class candidate = random_bits(bits, rng);
  // Top two bits set so the product of two such primes has exactly 2*bits bits.
  mpz_setbit(candidate.get_mpz_t(), bits - 1);
  mpz_setbit(candidate.get_mpz_t(), bits - 2);
  mpz_class prime;
  mpz_nextprime(prime.get_mpz_t(), candidate.get_mpz_t());
  return prime;
}

mpz_class l_function(const mpz_class& x, const mpz_class& n) { return (x - 1) / n; }

}  // namespace

int PublicKey::bits() const {
  return static_cast<int>(mpz_sizeinbase(n.get_mpz_t(), 2));
}

namespace {

std::uint64_t hash_modulus(const mpz_class& n) {
  // FNV-1a over the magnitude bytes of n.
  std::vector<std::uint8_t> bytes;
  append_bigint(bytes, n);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

PublicKey make_public_key(const mpz_class& n) {
  if (n <= 1) throw Error(ErrorCode::kInvalidConfig, "public modulus must exceed 1");
  return PublicKey{n, n * n, n + 1, hash_modulus(n)};
}

Keypair keygen(int bits, Prg& rng) {
  if (bits < kMinTestBits || bits % 2 != 0) {
    throw Error(ErrorCode::kInvalidConfig,
                "Paillier modulus must be an even number of bits >= " +
                    std::to_string(kMinTestBits));
  }
  for (;;) {
    const mpz_class p = random_prime(bits / 2, rng);
    const mpz_class q = random_prime(bits / 2, rng);
    if (p == q) continue;
    const mpz_class n = p * q;
    if (static_cast<int>(mpz_sizeinbase(n.get_mpz_t(), 2)) != bits) continue;
    const mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1) continue;

    Keypair key;
    key.pk = make_public_key(n);
    mpz_lcm(key.sk.lambda.get_mpz_t(), mpz_class(p - 1).get_mpz_t(),
            mpz_class(q - 1).get_mpz_t());
    // With g = n + 1, L(g^lambda mod n^2) = lambda mod n.
    mpz_class l_value = key.sk.lambda % n;
    if (mpz_invert(key.sk.mu.get_mpz_t(), l_value.get_mpz_t(), n.get_mpz_t()) == 0) {
      continue;
    }
    return key;
  }
}

bool key_is_valid(const Keypair& key) {
  const auto& pk = key.pk;
  mpz_class x;
  mpz_powm(x.get_mpz_t(), pk.g.get_mpz_t(), key.sk.lambda.get_mpz_t(),
           pk.n_squared.get_mpz_t());
  const mpz_class check = (key.sk.mu * l_function(x, pk.n)) % pk.n;
  return check == 1;
}

mpz_class sample_unit(const PublicKey& pk, Prg& rng) {
  for (;;) {
    mpz_class r = random_below(pk.n, rng);
    if (r == 0) continue;
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
    if (g == 1) return r;
  }
}

Ciphertext encrypt_with(const PublicKey& pk, const mpz_class& m, const mpz_class& r) {
  if (m < 0 || m >= pk.n) {
    throw Error(ErrorCode::kPlaintextOutOfRange, "plaintext outside [0, n)");
  }
  mpz_class rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t(), pk.n_squared.get_mpz_t());
  mpz_class c = (1 + m * pk.n) % pk.n_squared;
  c = (c * rn) % pk.n_squared;
  return Ciphertext{std::move(c), pk.fingerprint};
}

Ciphertext encrypt(const PublicKey& pk, const mpz_class& m, Prg& rng) {
  return encrypt_with(pk, m, sample_unit(pk, rng));
}

Ciphertext add_ct(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  const std::uint64_t fp = pk.fingerprint;
  if (a.key_fingerprint != fp || b.key_fingerprint != fp) {
    throw Error(ErrorCode::kKeyMismatch, "ciphertexts under different public keys");
  }
  return Ciphertext{(a.value * b.value) % pk.n_squared, fp};
}

mpz_class decrypt(const Keypair& key, const Ciphertext& c) {
  const auto& pk = key.pk;
  if (c.key_fingerprint != pk.fingerprint) {
    throw Error(ErrorCode::kKeyMismatch, "ciphertext encrypted under another key");
  }
  if (c.value <= 0 || c.value >= pk.n_squared) {
    throw Error(ErrorCode::kMalformedCiphertext, "ciphertext outside (0, n^2)");
  }
  mpz_class g;
  mpz_gcd(g.get_mpz_t(), c.value.get_mpz_t(), pk.n.get_mpz_t());
  if (g != 1) throw Error(ErrorCode::kMalformedCiphertext, "ciphertext shares a factor with n");
  mpz_class x;
  mpz_powm(x.get_mpz_t(), c.value.get_mpz_t(), key.sk.lambda.get_mpz_t(),
           pk.n_squared.get_mpz_t());
  return (l_function(x, pk.n) * key.sk.mu) % pk.n;
}

SignedEncoder::SignedEncoder(const PublicKey& pk, int frac_bits)
    : n_(pk.n), half_n_(pk.n / 2), frac_bits_(frac_bits) {
  const int exponent = std::min(pk.bits() - 2 - frac_bits, 1000);
  bound_ = std::ldexp(1.0, exponent);
}

mpz_class SignedEncoder::encode(double x) const {
  if (!std::isfinite(x) || std::fabs(x) >= bound_) {
    throw Error(ErrorCode::kRange, "value outside signed plaintext bound");
  }
  const mpz_class magnitude(std::round(std::ldexp(std::fabs(x), frac_bits_)));
  if (x < 0 && magnitude != 0) return n_ - magnitude;
  return magnitude;
}

mpz_class SignedEncoder::encode_fixed(std::int64_t scaled) const {
  mpz_class v;
  mpz_set_si(v.get_mpz_t(), scaled);
  if (v < 0) v += n_;
  return v;
}

mpz_class SignedEncoder::decode_fixed(const mpz_class& m) const {
  if (m > half_n_) return m - n_;
  return m;
}

double SignedEncoder::decode(const mpz_class& m) const {
  const mpz_class v = decode_fixed(m);
  return std::ldexp(v.get_d(), -frac_bits_);
}

SlotPacker::SlotPacker(const PublicKey& pk, int value_bits, int max_addends)
    : value_bits_(value_bits), max_addends_(max_addends) {
  if (value_bits < 2 || value_bits > 63 || max_addends < 1) {
    throw Error(ErrorCode::kInvalidConfig, "invalid slot packing parameters");
  }
  int guard = 0;
  while ((1 << guard) < max_addends) ++guard;
  slot_bits_ = value_bits + guard;
  slots_ = static_cast<std::size_t>((pk.bits() - 1) / slot_bits_);
  if (slots_ == 0) throw Error(ErrorCode::kInvalidConfig, "key too small for packing");
  offset_ = 1;
  offset_ <<= (value_bits - 1);
}

mpz_class SlotPacker::pack(std::span<const std::int64_t> values) const {
  if (values.size() > slots_) throw Error(ErrorCode::kRange, "too many values for one plaintext");
  const std::int64_t limit = std::int64_t{1} << (value_bits_ - 1);
  mpz_class out = 0;
  for (std::size_t i = values.size(); i-- > 0;) {
    if (values[i] >= limit || values[i] <= -limit) {
      throw Error(ErrorCode::kRange, "packed value exceeds slot range");
    }
    mpz_class slot;
    mpz_set_si(slot.get_mpz_t(), values[i]);
    slot += offset_;
    out <<= slot_bits_;
    out += slot;
  }
  return out;
}

std::vector<std::int64_t> SlotPacker::unpack(const mpz_class& m, std::size_t count,
                                             int addends) const {
  if (count > slots_ || addends < 1 || addends > max_addends_) {
    throw Error(ErrorCode::kRange, "invalid unpack request");
  }
  std::vector<std::int64_t> out(count);
  mpz_class rest = m;
  mpz_class slot_mask = 1;
  slot_mask <<= slot_bits_;
  slot_mask -= 1;
  const mpz_class shift = offset_ * addends;
  for (std::size_t i = 0; i < count; ++i) {
    mpz_class slot = rest & slot_mask;
    rest >>= slot_bits_;
    slot -= shift;
    out[i] = mpz_get_si(slot.get_mpz_t());
  }
  return out;
}

void append_bigint(std::vector<std::uint8_t>& out, const mpz_class& v) {
  if (v < 0) throw Error(ErrorCode::kRange, "cannot serialise a negative big integer");
  std::size_t count = 0;
  std::vector<std::uint8_t> bytes((mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8 + 1);
  mpz_export(bytes.data(), &count, 1, 1, 1, 0, v.get_mpz_t());
  const auto len = static_cast<std::uint32_t>(count);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), bytes.begin(), bytes.begin() + count);
}

mpz_class read_bigint(std::span<const std::uint8_t> in, std::size_t& offset) {
  if (offset + 4 > in.size()) throw Error(ErrorCode::kFrameCorrupt, "truncated big integer length");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t{in[offset + i]} << (8 * i);
  offset += 4;
  if (offset + len > in.size()) throw Error(ErrorCode::kFrameCorrupt, "truncated big integer");
  mpz_class v = 0;
  if (len > 0) mpz_import(v.get_mpz_t(), len, 1, 1, 1, 0, in.data() + offset);
  offset += len;
  return v;
}

std::vector<std::uint8_t> serialize_public_key(const PublicKey& pk) {
  std::vector<std::uint8_t> out;
  append_bigint(out, pk.n);
  return out;
}

PublicKey deserialize_public_key(std::span<const std::uint8_t> in) {
  std::size_t offset = 0;
  mpz_class n = read_bigint(in, offset);
  if (offset != in.size()) throw Error(ErrorCode::kFrameCorrupt, "trailing bytes after public key");
  return make_public_key(n);
}

}  // namespace spnn::paillier
