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

#include "coreecho/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "coreecho/errors.hpp"

namespace coreecho {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

Field real(const char* key, double TrainConfig::*member) {
  return {key, [member](const RunConfig& c) { return format_double(c.train.*member); },
          [key, member](RunConfig& c, const std::string& v) { c.train.*member = parse_double(key, v); }};
}

Field count(const char* key, std::size_t TrainConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.train.*member); },
          [key, member](RunConfig& c, const std::string& v) {
            c.train.*member = static_cast<std::size_t>(parse_uint(key, v));
          }};
}

template <typename Enum>
Field choice(const char* key, Enum TrainConfig::*member, std::vector<std::pair<std::string, Enum>> names) {
  return {key,
          [member, names](const RunConfig& c) {
            for (const auto& [n, e] : names) {
              if (e == c.train.*member) return n;
            }
            return std::string("?");
          },
          [key, member, names](RunConfig& c, const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                c.train.*member = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw ConfigError("config: '" + std::string(key) + "' must be one of " + allowed +
                              ", got '" + v + "'");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_uint("seed", v); }});
    f.push_back(count("workers", &TrainConfig::workers));
    f.push_back(choice("precision", &TrainConfig::precision,
                       {{"f64", ad::Precision::kF64}, {"f32", ad::Precision::kF32}}));
    f.push_back(count("batch_videos", &TrainConfig::batch_videos));
    f.push_back(count("stage1_epochs", &TrainConfig::stage1_epochs));
    f.push_back(count("stage2_epochs", &TrainConfig::stage2_epochs));
    f.push_back(count("transfer_epochs", &TrainConfig::transfer_epochs));
    f.push_back(real("temperature", &TrainConfig::temperature));
    f.push_back(real("lr", &TrainConfig::lr));
    f.push_back(real("weight_decay", &TrainConfig::weight_decay));
    f.push_back(choice("optimizer", &TrainConfig::optimizer,
                       {{"adamw", OptimizerKind::kAdamW}, {"sgd-momentum", OptimizerKind::kSgdMomentum}}));
    f.push_back(real("beta1", &TrainConfig::beta1));
    f.push_back(real("beta2", &TrainConfig::beta2));
    f.push_back(real("adam_eps", &TrainConfig::adam_eps));
    f.push_back(real("momentum", &TrainConfig::momentum));
    f.push_back(choice("scheduler", &TrainConfig::scheduler,
                       {{"step", SchedulerKind::kStep}, {"none", SchedulerKind::kNone}}));
    f.push_back(count("step_size", &TrainConfig::step_size));
    f.push_back(real("gamma", &TrainConfig::gamma));
    f.push_back(choice("objective", &TrainConfig::objective,
                       {{"rnc+l1", Objective::kRncL1}, {"l1", Objective::kL1}}));
    f.push_back(choice("loss", &TrainConfig::loss,
                       {{"auto", TaskLoss::kAuto}, {"l1", TaskLoss::kL1}, {"mse", TaskLoss::kMse},
                        {"bce", TaskLoss::kBce}}));
    f.push_back({"standardize_labels",
                 [](const RunConfig& c) { return std::string(c.train.standardize_labels ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.standardize_labels = parse_bool("standardize_labels", v);
                 }});
    f.push_back(count("val_clips", &TrainConfig::val_clips));
    f.push_back(count("eval_clips", &TrainConfig::eval_clips));

    f.push_back({"clip_frames", [](const RunConfig& c) { return std::to_string(c.sampler.clip_frames); },
                 [](RunConfig& c, const std::string& v) { c.sampler.clip_frames = parse_uint("clip_frames", v); }});
    f.push_back({"clip_stride", [](const RunConfig& c) { return std::to_string(c.sampler.stride); },
                 [](RunConfig& c, const std::string& v) { c.sampler.stride = parse_uint("clip_stride", v); }});

    f.push_back({"augment", [](const RunConfig& c) { return data::to_string(c.augment.mode); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.augment.mode = data::parse_augment_mode(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("config: augment: ") + e.what());
                   }
                 }});
    f.push_back({"augment_pad", [](const RunConfig& c) { return std::to_string(c.augment.pad); },
                 [](RunConfig& c, const std::string& v) { c.augment.pad = parse_uint("augment_pad", v); }});
    f.push_back({"augment_rotation", [](const RunConfig& c) { return format_double(c.augment.max_rotation_deg); },
                 [](RunConfig& c, const std::string& v) {
                   c.augment.max_rotation_deg = parse_double("augment_rotation", v);
                 }});
    f.push_back({"augment_min_scale", [](const RunConfig& c) { return format_double(c.augment.min_scale); },
                 [](RunConfig& c, const std::string& v) { c.augment.min_scale = parse_double("augment_min_scale", v); }});
    f.push_back({"augment_max_scale", [](const RunConfig& c) { return format_double(c.augment.max_scale); },
                 [](RunConfig& c, const std::string& v) { c.augment.max_scale = parse_double("augment_max_scale", v); }});
    f.push_back({"augment_translate", [](const RunConfig& c) { return format_double(c.augment.max_translate); },
                 [](RunConfig& c, const std::string& v) {
                   c.augment.max_translate = parse_double("augment_translate", v);
                 }});

    f.push_back({"frame_height", [](const RunConfig& c) { return std::to_string(c.encoder.height); },
                 [](RunConfig& c, const std::string& v) { c.encoder.height = parse_uint("frame_height", v); }});
    f.push_back({"frame_width", [](const RunConfig& c) { return std::to_string(c.encoder.width); },
                 [](RunConfig& c, const std::string& v) { c.encoder.width = parse_uint("frame_width", v); }});
    f.push_back({"channels", [](const RunConfig& c) { return std::to_string(c.encoder.channels); },
                 [](RunConfig& c, const std::string& v) { c.encoder.channels = parse_uint("channels", v); }});
    f.push_back({"encoder_widths",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t w : c.encoder.widths) s += (s.empty() ? "" : ",") + std::to_string(w);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> widths;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) widths.push_back(parse_uint("encoder_widths", trim(item)));
                   c.encoder.widths = std::move(widths);
                 }});
    f.push_back({"embed_dim", [](const RunConfig& c) { return std::to_string(c.encoder.embed_dim); },
                 [](RunConfig& c, const std::string& v) { c.encoder.embed_dim = parse_uint("embed_dim", v); }});
    f.push_back({"temporal_stride", [](const RunConfig& c) { return std::to_string(c.encoder.temporal_stride); },
                 [](RunConfig& c, const std::string& v) {
                   c.encoder.temporal_stride = parse_uint("temporal_stride", v);
                 }});
    f.push_back({"head_dropout", [](const RunConfig& c) { return format_double(c.head.dropout); },
                 [](RunConfig& c, const std::string& v) { c.head.dropout = parse_double("head_dropout", v); }});

    f.push_back({"dataset", [](const RunConfig& c) { return c.dataset; },
                 [](RunConfig& c, const std::string& v) { c.dataset = v; }});
    f.push_back({"output_dir", [](const RunConfig& c) { return c.output_dir; },
                 [](RunConfig& c, const std::string& v) { c.output_dir = v; }});
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

void TrainConfig::validate() const {
  if (batch_videos < 1) throw ConfigError("config: batch_videos must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("config: temperature must be positive");
  if (!(lr >= 0.0)) throw ConfigError("config: lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be non-negative");
  if (!(adam_eps > 0.0)) throw ConfigError("config: adam_eps must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("config: betas must be in [0, 1)");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must be in [0, 1)");
  if (step_size < 1) throw ConfigError("config: step_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("config: gamma must be in (0, 1]");
  if (val_clips < 1 || eval_clips < 1) throw ConfigError("config: clip counts must be >= 1");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
}

RunConfig::RunConfig() {
  // Desk-scale defaults sized for 32x32 synthetic videos.
  sampler.clip_frames = 16;
  sampler.stride = 2;
  augment.mode = data::AugmentMode::kPadCrop;
  augment.pad = 2;
  encoder.height = 32;
  encoder.width = 32;
  encoder.embed_dim = 64;
  sync();
}

void RunConfig::sync() {
  encoder.frames = sampler.clip_frames;
  head.embed_dim = encoder.embed_dim;
}

void RunConfig::validate() const {
  train.validate();
  try {
    sampler.validate();
    augment.validate();
    encoder.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (encoder.frames != sampler.clip_frames) throw ConfigError("config: encoder frames differ from clip_frames");
  if (!(head.dropout >= 0.0 && head.dropout < 1.0)) throw ConfigError("config: head_dropout must be in [0, 1)");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.emplace_back(f.key);
  return keys;
}

std::string config_get(const RunConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
  cfg.sync();
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    }
    config_set(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

bool is_runtime_key(const std::string& key) {
  return key == "workers" || key == "dataset" || key == "output_dir";
}

std::string to_text(const RunConfig& cfg, bool runtime) {
  std::string out;
  for (const Field& f : fields()) {
    if (runtime || !is_runtime_key(f.key)) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdamW ? "adamw" : "sgd-momentum"; }
std::string to_string(SchedulerKind k) { return k == SchedulerKind::kStep ? "step" : "none"; }
std::string to_string(Objective k) { return k == Objective::kRncL1 ? "rnc+l1" : "l1"; }
std::string to_string(TaskLoss k) {
  switch (k) {
    case TaskLoss::kAuto: return "auto";
    case TaskLoss::kL1: return "l1";
    case TaskLoss::kMse: return "mse";
    case TaskLoss::kBce: return "bce";
  }
  return "auto";
}

}  // namespace coreecho
