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

#include "spnn/prg.h"

#include <sodium.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace spnn {
namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Prg::Prg(std::uint64_t seed, std::uint64_t stream) {
  ensure_sodium();
  std::uint8_t material[16];
  std::memcpy(material, &seed, 8);
  std::memcpy(material + 8, &stream, 8);
  crypto_generichash(key_.data(), key_.size(), material, sizeof(material),
                     nullptr, 0);
}

Prg Prg::from_entropy() {
  ensure_sodium();
  Prg prg;
  randombytes_buf(prg.key_.data(), prg.key_.size());
  return prg;
}

void Prg::refill() {
  std::uint8_t nonce[crypto_stream_chacha20_NONCEBYTES];
  static_assert(sizeof(nonce) == 8);
  std::memcpy(nonce, &block_, 8);
  crypto_stream_chacha20(buffer_.data(), buffer_.size(), nonce, key_.data());
  ++block_;
  pos_ = 0;
}

Prg::result_type Prg::operator()() {
  if (pos_ + 8 > buffer_.size()) refill();
  std::uint64_t out;
  std::memcpy(&out, buffer_.data() + pos_, 8);
  pos_ += 8;
  return out;
}

std::uint64_t Prg::uniform(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("uniform bound must be non-zero");
  const std::uint64_t limit = max() - (max() % bound + 1) % bound;
  std::uint64_t x;
  do {
    x = (*this)();
  } while (x > limit);
  return x % bound;
}

double Prg::uniform_real() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double Prg::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u1;
  do {
    u1 = uniform_real();
  } while (u1 <= 0.0);
  const double u2 = uniform_real();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

void Prg::fill(std::span<std::uint8_t> out) {
  for (auto& byte : out) {
    if (pos_ >= buffer_.size()) refill();
    byte = buffer_[pos_++];
  }
}

Prg Prg::derive(std::uint64_t stream) const {
  Prg child;
  std::uint8_t material[40];
  std::memcpy(material, key_.data(), 32);
  std::memcpy(material + 32, &stream, 8);
  crypto_generichash(child.key_.data(), child.key_.size(), material,
                     sizeof(material), nullptr, 0);
  return child;
}

}  // namespace spnn
