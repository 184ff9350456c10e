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

#include "coreecho/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "coreecho/errors.hpp"

namespace coreecho::data {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  const std::string s = lower(trim(text));
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + text + "'");
}

std::string to_string(Task task) {
  return task == Task::kRegression ? "regression" : "classification";
}

Task parse_task(const std::string& text) {
  const std::string s = lower(trim(text));
  if (s == "regression") return Task::kRegression;
  if (s == "classification") return Task::kClassification;
  throw ConfigError("unknown task '" + text + "'");
}

Video VideoRecord::to_video() const {
  Video v(frames, height, width, channels);
  for (std::size_t i = 0; i < pixels.size(); ++i) v.pixels[i] = pixels[i] / 255.0;
  return v;
}

void SamplerConfig::validate() const {
  if (clip_frames < 1) throw ConfigError("sampler: clip_frames must be >= 1");
  if (stride < 1) throw ConfigError("sampler: stride must be >= 1");
}

std::vector<std::size_t> clip_indices_from(std::size_t video_frames, const SamplerConfig& cfg,
                                           std::size_t start) {
  cfg.validate();
  if (video_frames == 0) throw DataError("clip sampling from an empty video");
  std::vector<std::size_t> idx(cfg.clip_frames);
  for (std::size_t k = 0; k < cfg.clip_frames; ++k) {
    idx[k] = (start + k * cfg.stride) % video_frames;
  }
  return idx;
}

std::vector<std::size_t> clip_indices(std::size_t video_frames, const SamplerConfig& cfg,
                                      Rng& rng) {
  cfg.validate();
  if (video_frames == 0) throw DataError("clip sampling from an empty video");
  const std::size_t span = cfg.span();
  const std::size_t start =
      video_frames >= span ? rng.index(video_frames - span + 1) : rng.index(video_frames);
  return clip_indices_from(video_frames, cfg, start);
}

Video gather_frames(const VideoRecord& video, std::span<const std::size_t> indices) {
  Video clip(indices.size(), video.height, video.width, video.channels);
  const std::size_t fs = clip.frame_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= video.frames) throw DataError("frame index out of range");
    const std::uint8_t* src = video.pixels.data() + indices[k] * fs;
    double* dst = clip.pixels.data() + k * fs;
    for (std::size_t i = 0; i < fs; ++i) dst[i] = src[i] / 255.0;
  }
  return clip;
}

Video sample_clip(const VideoRecord& video, const SamplerConfig& cfg, Rng& rng) {
  const auto idx = clip_indices(video.frames, cfg, rng);
  return gather_frames(video, idx);
}

// ---------------------------------------------------------------------------

std::string to_string(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return "none";
    case AugmentMode::kPadCrop: return "pad-crop";
    case AugmentMode::kAffine: return "affine";
  }
  return "?";
}

AugmentMode parse_augment_mode(const std::string& text) {
  const std::string s = lower(trim(text));
  if (s == "none") return AugmentMode::kNone;
  if (s == "pad-crop" || s == "padcrop") return AugmentMode::kPadCrop;
  if (s == "affine") return AugmentMode::kAffine;
  throw ConfigError("unknown augmentation mode '" + text + "'");
}

void AugmentPolicy::validate() const {
  if (max_rotation_deg < 0.0) throw ConfigError("augment: max_rotation_deg must be >= 0");
  if (!(min_scale > 0.0) || min_scale > max_scale) {
    throw ConfigError("augment: need 0 < min_scale <= max_scale");
  }
  if (max_translate < 0.0) throw ConfigError("augment: max_translate must be >= 0");
}

Video pad_crop(const Video& clip, std::size_t pad, std::size_t offset_y, std::size_t offset_x) {
  if (offset_y > 2 * pad || offset_x > 2 * pad) {
    throw UsageError("pad_crop: crop offset outside the padded frame");
  }
  Video out(clip.frames, clip.height, clip.width, clip.channels);
  for (std::size_t f = 0; f < clip.frames; ++f) {
    for (std::size_t y = 0; y < clip.height; ++y) {
      const long long sy = static_cast<long long>(y + offset_y) - static_cast<long long>(pad);
      if (sy < 0 || sy >= static_cast<long long>(clip.height)) continue;
      for (std::size_t x = 0; x < clip.width; ++x) {
        const long long sx = static_cast<long long>(x + offset_x) - static_cast<long long>(pad);
        if (sx < 0 || sx >= static_cast<long long>(clip.width)) continue;
        for (std::size_t c = 0; c < clip.channels; ++c) {
          out.at(f, y, x, c) =
              clip.at(f, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
        }
      }
    }
  }
  return out;
}

Video affine_transform(const Video& clip, const AffineParams& params) {
  if (!(params.scale > 0.0)) throw UsageError("affine_transform: scale must be positive");
  Video out(clip.frames, clip.height, clip.width, clip.channels);
  const double cy = (static_cast<double>(clip.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(clip.width) - 1.0) / 2.0;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const long long h = static_cast<long long>(clip.height);
  const long long w = static_cast<long long>(clip.width);

  for (std::size_t y = 0; y < clip.height; ++y) {
    for (std::size_t x = 0; x < clip.width; ++x) {
      // Inverse map: source = R^-1 (dst - c - t) / s + c.
      const double dx = static_cast<double>(x) - cx - params.translate_x;
      const double dy = static_cast<double>(y) - cy - params.translate_y;
      const double sx = (cos_t * dx + sin_t * dy) / params.scale + cx;
      const double sy = (-sin_t * dx + cos_t * dy) / params.scale + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const long long x0 = static_cast<long long>(fx), y0 = static_cast<long long>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const std::array<long long, 2> ys{y0, y0 + 1}, xs{x0, x0 + 1};
      const std::array<double, 2> wy{1.0 - ay, ay}, wx{1.0 - ax, ax};
      for (std::size_t f = 0; f < clip.frames; ++f) {
        for (std::size_t c = 0; c < clip.channels; ++c) {
          double v = 0.0;
          for (int i = 0; i < 2; ++i) {
            if (ys[i] < 0 || ys[i] >= h || wy[i] == 0.0) continue;
            for (int j = 0; j < 2; ++j) {
              if (xs[j] < 0 || xs[j] >= w || wx[j] == 0.0) continue;
              v += wy[i] * wx[j] *
                   clip.at(f, static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(xs[j]), c);
            }
          }
          out.at(f, y, x, c) = v;
        }
      }
    }
  }
  return out;
}

Video augment(const Video& clip, const AugmentPolicy& policy, Rng& rng) {
  switch (policy.mode) {
    case AugmentMode::kNone:
      return clip;
    case AugmentMode::kPadCrop: {
      const std::size_t oy = rng.index(2 * policy.pad + 1);
      const std::size_t ox = rng.index(2 * policy.pad + 1);
      return pad_crop(clip, policy.pad, oy, ox);
    }
    case AugmentMode::kAffine: {
      AffineParams p;
      p.rotation_deg = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
      p.scale = rng.uniform(policy.min_scale, policy.max_scale);
      p.translate_x = rng.uniform(-policy.max_translate, policy.max_translate) *
                      static_cast<double>(clip.width);
      p.translate_y = rng.uniform(-policy.max_translate, policy.max_translate) *
                      static_cast<double>(clip.height);
      return affine_transform(clip, p);
    }
  }
  return clip;
}

Video temporal_resample(const Video& video, std::size_t target_frames) {
  if (target_frames < 2) throw UsageError("temporal_resample: target must be >= 2 frames");
  if (video.frames == 0) throw DataError("temporal_resample: empty video");
  if (video.frames == target_frames) return video;
  Video out(target_frames, video.height, video.width, video.channels);
  const std::size_t fs = video.frame_size();
  const double step =
      static_cast<double>(video.frames - 1) / static_cast<double>(target_frames - 1);
  for (std::size_t k = 0; k < target_frames; ++k) {
    const double pos = static_cast<double>(k) * step;
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= video.frames - 1) i0 = video.frames > 1 ? video.frames - 2 : 0;
    const std::size_t i1 = std::min(i0 + 1, video.frames - 1);
    const double a = pos - static_cast<double>(i0);
    const double* f0 = video.pixels.data() + i0 * fs;
    const double* f1 = video.pixels.data() + i1 * fs;
    double* dst = out.pixels.data() + k * fs;
    for (std::size_t i = 0; i < fs; ++i) dst[i] = (1.0 - a) * f0[i] + a * f1[i];
  }
  return out;
}

Video spatial_resize(const Video& video, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw UsageError("spatial_resize: target extents must be >= 1");
  if (height == video.height && width == video.width) return video;
  Video out(video.frames, height, width, video.channels);
  auto source = [](std::size_t dst, std::size_t in, std::size_t outn) {
    const double scale = static_cast<double>(in) / static_cast<double>(outn);
    const double src = std::max(0.0, (static_cast<double>(dst) + 0.5) * scale - 0.5);
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple<std::size_t, std::size_t, double>{i0, i1, src - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, ay] = source(y, video.height, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, ax] = source(x, video.width, width);
      for (std::size_t f = 0; f < video.frames; ++f) {
        for (std::size_t c = 0; c < video.channels; ++c) {
          const double top = (1.0 - ax) * video.at(f, y0, x0, c) + ax * video.at(f, y0, x1, c);
          const double bot = (1.0 - ax) * video.at(f, y1, x0, c) + ax * video.at(f, y1, x1, c);
          out.at(f, y, x, c) = (1.0 - ay) * top + ay * bot;
        }
      }
    }
  }
  return out;
}

ad::Tensor stack_clips(std::span<const Video> clips) {
  if (clips.empty()) throw DataError("stack_clips: no clips");
  const Video& first = clips.front();
  ad::Tensor out({clips.size(), first.frames, first.height, first.width, first.channels});
  const std::size_t n = first.pixels.size();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].pixels.size() != n || clips[i].frames != first.frames ||
        clips[i].height != first.height || clips[i].width != first.width) {
      throw ShapeError("stack_clips: clips differ in shape");
    }
    std::copy(clips[i].pixels.begin(), clips[i].pixels.end(), out.data().begin() + i * n);
  }
  return out;
}

namespace {

template <typename F>
void parallel_for(std::size_t count, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ClipBatch build_batch(std::span<const VideoRecord* const> records, std::size_t clips_per_video,
                      const SamplerConfig& sampler, const AugmentPolicy& policy, Rng& rng,
                      std::size_t workers) {
  if (records.empty()) throw DataError("batch construction from an empty record list");
  sampler.validate();
  policy.validate();
  const std::size_t total = records.size() * clips_per_video;
  std::vector<std::uint64_t> seeds(total);
  for (auto& s : seeds) s = rng.engine()();

  std::vector<Video> clips(total);
  parallel_for(total, workers, [&](std::size_t i) {
    Rng clip_rng(seeds[i]);
    const VideoRecord& rec = *records[i / clips_per_video];
    clips[i] = augment(sample_clip(rec, sampler, clip_rng), policy, clip_rng);
  });

  ClipBatch batch;
  batch.clips = stack_clips(clips);
  batch.labels.reserve(total);
  for (const VideoRecord* r : records) {
    for (std::size_t k = 0; k < clips_per_video; ++k) batch.labels.push_back(r->label);
  }
  return batch;
}

}  // namespace

ClipBatch build_stage1_batch(std::span<const VideoRecord* const> records,
                             const SamplerConfig& sampler, const AugmentPolicy& policy, Rng& rng,
                             std::size_t workers) {
  return build_batch(records, 2, sampler, policy, rng, workers);
}

ClipBatch build_single_clip_batch(std::span<const VideoRecord* const> records,
                                  const SamplerConfig& sampler, const AugmentPolicy& policy,
                                  Rng& rng, std::size_t workers) {
  return build_batch(records, 1, sampler, policy, rng, workers);
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

std::uint16_t get_u16(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw DataError("truncated video tensor header: " + path.string());
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_vten(const std::filesystem::path& path, const VideoRecord& video) {
  for (std::size_t e : {video.frames, video.height, video.width, video.channels}) {
    if (e == 0 || e > 0xFFFF) throw DataError("video extents must be in [1, 65535]");
  }
  if (video.pixels.size() != video.frames * video.height * video.width * video.channels) {
    throw DataError("video pixel count does not match its extents");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write("VTEN", 4);
  put_u16(os, kVtenVersion);
  for (std::size_t e : {video.frames, video.height, video.width, video.channels}) {
    put_u16(os, static_cast<std::uint16_t>(e));
  }
  os.write(reinterpret_cast<const char*>(video.pixels.data()),
           static_cast<std::streamsize>(video.pixels.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

void read_vten(const std::filesystem::path& path, VideoRecord& video) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open video tensor " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "VTEN") {
    throw DataError("bad video tensor magic: " + path.string());
  }
  const std::uint16_t version = get_u16(is, path);
  if (version != kVtenVersion) {
    throw DataError("unsupported video tensor version " + std::to_string(version) + ": " +
                    path.string());
  }
  video.frames = get_u16(is, path);
  video.height = get_u16(is, path);
  video.width = get_u16(is, path);
  video.channels = get_u16(is, path);
  if (video.frames == 0 || video.height == 0 || video.width == 0 || video.channels == 0) {
    throw DataError("zero extent in video tensor: " + path.string());
  }
  video.pixels.resize(video.frames * video.height * video.width * video.channels);
  if (!is.read(reinterpret_cast<char*>(video.pixels.data()),
               static_cast<std::streamsize>(video.pixels.size()))) {
    throw DataError("truncated video tensor payload: " + path.string());
  }
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty manifest " + path.string());
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  if (trim(line) != "FileName,Label,Split") {
    throw DataError("manifest header must be 'FileName,Label,Split', got '" + trim(line) + "'");
  }
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string name, label, split;
    if (!std::getline(ss, name, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, split)) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 3 columns");
    }
    ManifestRow row;
    row.file_name = trim(name);
    try {
      std::size_t used = 0;
      row.label = std::stod(trim(label), &used);
      if (used != trim(label).size()) throw std::invalid_argument(label);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    row.split = parse_split(split);
    if (row.file_name.empty()) {
      throw DataError("manifest line " + std::to_string(line_no) + ": empty FileName");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << "FileName,Label,Split\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.label);
    std::string split = to_string(r.split);
    std::transform(split.begin(), split.end(), split.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    os << r.file_name << ',' << buf << ',' << split << '\n';
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<const VideoRecord*> Dataset::split(Split s) const {
  std::vector<const VideoRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

Task infer_task(std::span<const ManifestRow> rows) {
  if (rows.empty()) throw DataError("manifest has no rows");
  const bool binary = std::all_of(rows.begin(), rows.end(),
                                  [](const ManifestRow& r) { return r.label == 0.0 || r.label == 1.0; });
  if (binary) return Task::kClassification;
  for (const auto& r : rows) {
    if (!(r.label >= 0.0 && r.label <= 100.0)) {
      throw DataError("regression label " + std::to_string(r.label) + " of '" + r.file_name +
                      "' outside [0, 100]");
    }
  }
  return Task::kRegression;
}

Dataset load_dataset(const std::filesystem::path& root) {
  const auto manifest = root / "manifest.csv";
  if (!std::filesystem::exists(manifest)) {
    throw DataError("no manifest.csv in dataset directory " + root.string());
  }
  const auto rows = read_manifest(manifest);
  Dataset ds;
  ds.root = root;
  ds.task = infer_task(rows);
  ds.records.reserve(rows.size());
  for (const auto& row : rows) {
    VideoRecord rec;
    rec.id = row.file_name;
    rec.label = row.label;
    rec.split = row.split;
    auto path = root / "videos" / row.file_name;
    if (path.extension() != ".vten") path += ".vten";
    read_vten(path, rec);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace coreecho::data
