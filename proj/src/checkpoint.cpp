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

#include "coreecho/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "coreecho/errors.hpp"

namespace coreecho::train {
namespace {

using Kind = CheckpointError::Kind;
constexpr char kMagic[4] = {'C', 'R', 'C', 'K'};
constexpr std::size_t kPreamble = 4 + 2 + 4;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const ad::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError(Kind::kCorrupt, "checkpoint: missing tensor '" + name + "'");
}

void Checkpoint::put(std::string name, ad::Tensor value) {
  for (auto& [n, t] : tensors) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  tensors.emplace_back(std::move(name), std::move(value));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["config"] = ckpt.config;
  header["epoch"] = ckpt.epoch;
  header["rng"] = ckpt.rng_state;
  header["meta"] = ckpt.meta;
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = std::move(dir);
  const std::string text = header.dump();
  if (text.size() > 0xffffffffu) throw CheckpointError(Kind::kIo, "checkpoint: header too large");

  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + text.size() + offset * 8);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, ckpt.version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CheckpointError(Kind::kTruncated, "checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::kMagic, "checkpoint: bad magic");
  }
  if (bytes.size() < kPreamble) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated preamble");
  Checkpoint ckpt;
  ckpt.version = get_le<std::uint16_t>(bytes.data() + 4);
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint: unsupported version " +
                                              std::to_string(ckpt.version));
  }
  const std::size_t header_len = get_le<std::uint32_t>(bytes.data() + 6);
  if (bytes.size() < kPreamble + header_len) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
    ckpt.config = header.at("config").get<std::string>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng").get<std::string>();
    ckpt.meta = header.at("meta").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: bad header: ") + e.what());
  }

  const std::uint8_t* payload = bytes.data() + kPreamble + header_len;
  const std::size_t payload_doubles = (bytes.size() - kPreamble - header_len) / 8;
  std::uint64_t expected = 0;
  try {
    for (const auto& entry : header.at("tensors")) {
      std::string name = entry.at("name").get<std::string>();
      ad::Shape shape = entry.at("shape").get<ad::Shape>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      if (offset != expected) throw CheckpointError(Kind::kCorrupt, "checkpoint: non-contiguous payload");
      const std::size_t n = ad::shape_size(shape);
      if (offset + n > payload_doubles) {
        throw CheckpointError(Kind::kTruncated, "checkpoint: truncated payload at '" + name + "'");
      }
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        values[i] = std::bit_cast<double>(get_le<std::uint64_t>(payload + (offset + i) * 8));
      }
      ckpt.tensors.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(values)));
      expected = offset + n;
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: bad directory: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: bad tensor shape: ") + e.what());
  }
  if (bytes.size() != kPreamble + header_len + expected * 8) {
    throw CheckpointError(Kind::kCorrupt, "checkpoint: trailing bytes after payload");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::kIo, "checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(Kind::kIo, "checkpoint: cannot move into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace coreecho::train
