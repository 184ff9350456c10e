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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coreecho/tensor.hpp"

namespace coreecho::train {

// File layout:
//   "CRCK" | u16 version | u32 header length | JSON header | f64 payload
// The header holds the config snapshot, scalar metadata and a tensor
// directory of {name, shape, offset}; offsets count doubles into the payload.
// All integers and reals are little-endian.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string config;  // flat key=value text
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  bool has(const std::string& name) const;
  const ad::Tensor& tensor(const std::string& name) const;
  void put(std::string name, ad::Tensor value);

  bool operator==(const Checkpoint& other) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coreecho::train
