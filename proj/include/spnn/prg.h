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

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace spnn {

// Seeded ChaCha20 keystream generator. Satisfies UniformRandomBitGenerator so
// it plugs into <random> distributions. Two generators built from the same
// (seed, stream) pair produce identical output.
class Prg {
 public:
  using result_type = std::uint64_t;

  explicit Prg(std::uint64_t seed, std::uint64_t stream = 0);

  // Keyed from the operating system entropy pool.
  static Prg from_entropy();

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  // Uniform in [0, bound) without modulo bias. bound must be non-zero.
  std::uint64_t uniform(std::uint64_t bound);

  double uniform_real();  // [0, 1)
  double normal();        // standard normal, Box-Muller

  void fill(std::span<std::uint8_t> out);

  // Independent child generator; same parent state always yields the same child.
  Prg derive(std::uint64_t stream) const;

 private:
  Prg() = default;
  void refill();

  std::array<std::uint8_t, 32> key_{};
  std::uint64_t block_ = 0;
  std::array<std::uint8_t, 512> buffer_{};
  std::size_t pos_ = 512;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// Mixes several integers into one seed (used to derive per-role streams).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace spnn
