/*
 * Copyright (c) 2026 The CoReEcho Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace coreecho {

// Seeded random source. Every stochastic step (clip start, augmentation,
// dropout mask, shuffling) draws from a stream derived from the run seed and
// a position path, so results do not depend on evaluation order or on how
// many worker threads build the batch.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for (seed, path...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::size_t index(std::size_t n);
  // Uniform integer on [lo, hi].
  long long integer(long long lo, long long hi);
  // Standard normal via Box-Muller; no cached second deviate.
  double normal();

  std::mt19937_64& engine() noexcept { return engine_; }

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Stream tags for Rng::derive paths.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSample = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kEval = 5;
inline constexpr std::uint64_t kSynth = 6;
inline constexpr std::uint64_t kDiagnose = 7;
}  // namespace stream

}  // namespace coreecho
