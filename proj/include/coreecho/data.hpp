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
#include <span>
#include <string>
#include <vector>

#include "coreecho/rng.hpp"
#include "coreecho/tensor.hpp"

namespace coreecho::data {

enum class Split { kTrain, kVal, kTest };
enum class Task { kRegression, kClassification };

std::string to_string(Split split);
Split parse_split(const std::string& text);
std::string to_string(Task task);
Task parse_task(const std::string& text);

// Real-valued video, frame-major row-major [F x H x W x C]. Clips use the
// same type with F = clip length.
struct Video {
  Video() = default;
  Video(std::size_t f, std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : frames(f), height(h), width(w), channels(c), pixels(f * h * w * c, fill) {}

  std::size_t frame_size() const { return height * width * channels; }
  double& at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) {
    return pixels[((f * height + y) * width + x) * channels + c];
  }
  double at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[((f * height + y) * width + x) * channels + c];
  }

  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<double> pixels;
};

// One dataset entry. Pixels stay 8-bit in memory and are scaled to [0, 1]
// whenever frames are read.
struct VideoRecord {
  std::string id;
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
  double label = 0.0;
  Split split = Split::kTrain;

  double pixel(std::size_t f, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[((f * height + y) * width + x) * channels + c] / 255.0;
  }
  Video to_video() const;
};

struct SamplerConfig {
  std::size_t clip_frames = 36;
  std::size_t stride = 4;

  void validate() const;
  std::size_t span() const { return (clip_frames - 1) * stride + 1; }
};

// Frame indices of a clip starting at `start`: start + k * stride, wrapped
// modulo the video length.
std::vector<std::size_t> clip_indices_from(std::size_t video_frames, const SamplerConfig& cfg,
                                           std::size_t start);
// Random start: uniform on [0, F - span] when the span fits, otherwise
// uniform on [0, F) with cyclic wrap.
std::vector<std::size_t> clip_indices(std::size_t video_frames, const SamplerConfig& cfg,
                                      Rng& rng);

Video gather_frames(const VideoRecord& video, std::span<const std::size_t> indices);
Video sample_clip(const VideoRecord& video, const SamplerConfig& cfg, Rng& rng);

enum class AugmentMode { kNone, kPadCrop, kAffine };
std::string to_string(AugmentMode mode);
AugmentMode parse_augment_mode(const std::string& text);

struct AugmentPolicy {
  AugmentMode mode = AugmentMode::kNone;
  // pad-crop: zero-pad each side by `pad`, then crop back to the input size.
  std::size_t pad = 6;
  // affine
  double max_rotation_deg = 20.0;
  double min_scale = 0.8;
  double max_scale = 1.1;
  double max_translate = 0.1;  // fraction of width / height

  void validate() const;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;  // pixels
  double translate_y = 0.0;
};

Video pad_crop(const Video& clip, std::size_t pad, std::size_t offset_y, std::size_t offset_x);
// Rotation and scaling about the frame center, then translation. Bilinear
// sampling with zero fill outside the source frame.
Video affine_transform(const Video& clip, const AffineParams& params);
// Draws one transform per clip and applies it to every frame.
Video augment(const Video& clip, const AugmentPolicy& policy, Rng& rng);

// Per-pixel linear interpolation in time onto `target_frames` evenly spaced
// points that include both endpoints.
Video temporal_resample(const Video& video, std::size_t target_frames);
// Bilinear resize with half-pixel centers (align_corners = false).
Video spatial_resize(const Video& video, std::size_t height, std::size_t width);

// Stacks clips into [B x F x H x W x C].
ad::Tensor stack_clips(std::span<const Video> clips);

struct ClipBatch {
  ad::Tensor clips;
  std::vector<double> labels;
};

// Two independently sampled and augmented clips per video; rows 2n and 2n+1
// belong to video n and share its label. One 64-bit seed per clip is drawn
// from `rng` in row order, so the batch does not depend on `workers`.
ClipBatch build_stage1_batch(std::span<const VideoRecord* const> records,
                             const SamplerConfig& sampler, const AugmentPolicy& policy, Rng& rng,
                             std::size_t workers = 1);

// One clip per video, seeded the same way.
ClipBatch build_single_clip_batch(std::span<const VideoRecord* const> records,
                                  const SamplerConfig& sampler, const AugmentPolicy& policy,
                                  Rng& rng, std::size_t workers = 1);

// --- On-disk layout -------------------------------------------------------
//
// <root>/manifest.csv        FileName,Label,Split
// <root>/videos/<FileName>.vten
//
// Video tensor file: "VTEN", u16 version, u16 F, H, W, C, then F*H*W*C bytes,
// little-endian integers.

inline constexpr std::uint16_t kVtenVersion = 1;

void write_vten(const std::filesystem::path& path, const VideoRecord& video);
// Reads pixel data and extents into `video`; id/label/split are untouched.
void read_vten(const std::filesystem::path& path, VideoRecord& video);

struct ManifestRow {
  std::string file_name;
  double label = 0.0;
  Split split = Split::kTrain;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);

struct Dataset {
  std::filesystem::path root;
  Task task = Task::kRegression;
  std::vector<VideoRecord> records;

  std::vector<const VideoRecord*> split(Split s) const;
};

// Classification iff every label is 0 or 1. Regression labels must lie in
// [0, 100].
Task infer_task(std::span<const ManifestRow> rows);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace coreecho::data
