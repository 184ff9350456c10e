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

// coreecho: dataset synthesis, two-stage training, transfer, evaluation and
// diagnostics from one binary.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint
// error, 4 check failure (gradcheck breach), 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coreecho/checkpoint.hpp"
#include "coreecho/config.hpp"
#include "coreecho/data.hpp"
#include "coreecho/errors.hpp"
#include "coreecho/evaluation.hpp"
#include "coreecho/grad_check.hpp"
#include "coreecho/losses.hpp"
#include "coreecho/synth.hpp"
#include "coreecho/training.hpp"

namespace fs = std::filesystem;
using namespace coreecho;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kData = 3, kCheck = 4 };

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

// Config-file and per-key flag handling shared by the training commands.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat key = value config file");
    for (const std::string& key : config_keys()) {
      std::string names = "--" + dashed(key);
      if (key == "output_dir") names += ",--out";
      options.emplace_back(key, app->add_option(names, values[key], "config key " + key));
    }
  }

  // defaults < COREECHO_SEED < config file < flags. A checkpoint's config
  // replaces the defaults and already carries its seed.
  RunConfig resolve(std::optional<RunConfig> from_checkpoint = std::nullopt) const {
    RunConfig base = from_checkpoint.value_or(RunConfig{});
    const char* env = std::getenv("COREECHO_SEED");
    if (!from_checkpoint && env != nullptr && *env != '\0') config_set(base, "seed", env);
    if (!config_file.empty()) base = load_config(config_file, base);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) config_set(base, key, values.at(key));
    }
    base.validate();
    return base;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_provenance(const fs::path& dir, const std::string& command, const std::string& body) {
  fs::create_directories(dir);
  write_text(dir / (command + "_config.txt"), "# coreecho " + command + "\n" + body);
}

std::uint64_t seed_fallback(std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("COREECHO_SEED"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("COREECHO_SEED is not an integer: ") + env);
    }
  }
  return 0;
}

data::Split split_of(const std::string& s) {
  try {
    return data::parse_split(s);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 64;
  std::optional<std::size_t> val_count, test_count;
  std::size_t size = 32, min_frames = 20, max_frames = 30, channels = 3;
  double min_label = 10, max_label = 80, min_axis_ratio = 0.6, max_axis_ratio = 0.8;
  double min_radius = 0.31, max_radius = 0.37, noise = 0.05, threshold = 40;
  std::string task = "regression";
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count == 0) throw UsageError("synth: --count must be positive");
  data::SynthSpec spec;
  spec.count = a.count;
  spec.val_count = a.val_count;
  spec.test_count = a.test_count;
  spec.size = a.size;
  spec.min_frames = a.min_frames;
  spec.max_frames = a.max_frames;
  spec.channels = a.channels;
  spec.min_label = a.min_label;
  spec.max_label = a.max_label;
  spec.min_axis_ratio = a.min_axis_ratio;
  spec.max_axis_ratio = a.max_axis_ratio;
  spec.min_radius = a.min_radius;
  spec.max_radius = a.max_radius;
  spec.noise_sigma = a.noise;
  spec.class_threshold = a.threshold;
  spec.task = data::parse_task(a.task);
  const std::uint64_t seed = seed_fallback(a.seed);
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const data::SynthSummary s = data::synth_generate(spec, seed, a.out);

  std::ostringstream prov;
  prov << "seed = " << seed << "\ncount = " << spec.count << "\nval_count = " << spec.resolved_val_count()
       << "\ntest_count = " << spec.resolved_test_count() << "\nsize = " << spec.size
       << "\nframes = " << spec.min_frames << ".." << spec.max_frames << "\nchannels = " << spec.channels
       << "\nlabels = " << format_double(spec.min_label) << ".." << format_double(spec.max_label)
       << "\naxis_ratio = " << format_double(spec.min_axis_ratio) << ".." << format_double(spec.max_axis_ratio)
       << "\nradius = " << format_double(spec.min_radius) << ".." << format_double(spec.max_radius)
       << "\nnoise = " << format_double(spec.noise_sigma) << "\ntask = " << data::to_string(spec.task)
       << "\nclass_threshold = " << format_double(spec.class_threshold) << "\n";
  write_provenance(a.out, "synth", prov.str());

  std::cout << "manifest=" << s.manifest.string() << "\n";
  std::cout << "train=" << s.train << " val=" << s.val << " test=" << s.test << "\n";
  std::cout << "histogram";
  for (std::size_t c : s.histogram) std::cout << " " << c;
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw DataError("cannot write " + path.string());
  }
  void line(const std::string& json) {
    out_ << json << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct TrainArgs {
  ConfigFlags flags;
  std::string resume;
  std::optional<std::size_t> max_epochs;
};

int cmd_train(const TrainArgs& a) {
  std::optional<train::Trainer> trainer;
  RunConfig cfg;
  if (!a.resume.empty()) {
    const train::Checkpoint ckpt = train::load_checkpoint(a.resume);
    cfg = a.flags.resolve(parse_config(ckpt.config));
    trainer.emplace(train::Trainer::resume(ckpt, cfg));
  } else {
    cfg = a.flags.resolve();
  }
  if (cfg.dataset.empty()) throw UsageError("train: --dataset is required");
  if (cfg.output_dir.empty()) throw UsageError("train: --output-dir is required");
  const data::Dataset dataset = data::load_dataset(cfg.dataset);
  if (!trainer) trainer.emplace(cfg, dataset.task);

  const fs::path out = cfg.output_dir;
  write_provenance(out, "train", to_text(cfg));
  JsonLog log(out / "train_log.jsonl", !a.resume.empty());
  trainer->run(
      dataset,
      [&](const train::EpochLog& e) {
        log.line(e.to_json());
        std::cout << e.to_json() << std::endl;
        train::Checkpoint c = trainer->checkpoint();
        train::save_checkpoint(out / "last.ckpt", c);
        if (e.best) train::save_checkpoint(out / ("best_" + train::to_string(e.stage) + ".ckpt"), c);
      },
      a.max_epochs);
  train::save_checkpoint(out / "final.ckpt", trainer->checkpoint());
  std::cout << "checkpoint=" << (out / "final.ckpt").string() << "\n";
  return kOk;
}

struct TransferArgs {
  ConfigFlags flags;
  std::string from;
  std::string split = "val";
};

int cmd_transfer(const TransferArgs& a, train::Stage stage) {
  const std::string name = train::to_string(stage);
  if (a.from.empty()) throw UsageError(name + ": --from is required");
  const train::Checkpoint ckpt = train::load_checkpoint(a.from);
  RunConfig cfg = a.flags.resolve(parse_config(ckpt.config));
  if (cfg.dataset.empty()) throw UsageError(name + ": --dataset is required");
  if (cfg.output_dir.empty()) throw UsageError(name + ": --output-dir is required");
  // Frame size follows the target dataset unless given explicitly.
  const data::Dataset dataset = data::load_dataset(cfg.dataset);
  train::Trainer trainer = train::Trainer::transfer(ckpt, cfg, dataset.task, stage);
  cfg = trainer.config();

  const fs::path out = cfg.output_dir;
  write_provenance(out, name, "from = " + a.from + "\n" + to_text(cfg));
  const std::uint64_t before = model::checksum(trainer.model().encoder.state());
  JsonLog log(out / (name + "_log.jsonl"), false);
  trainer.run_transfer(dataset, [&](const train::EpochLog& e) {
    log.line(e.to_json());
    std::cout << e.to_json() << std::endl;
  });
  const std::uint64_t after = model::checksum(trainer.model().encoder.state());
  train::save_checkpoint(out / (name + ".ckpt"), trainer.checkpoint());

  const auto records = dataset.split(split_of(a.split));
  if (!records.empty()) {
    eval::PredictOptions opt;
    opt.clips = cfg.train.eval_clips;
    opt.seed = cfg.train.seed;
    const std::vector<double> pred = eval::predict(trainer.model(), records, cfg.sampler, opt);
    std::vector<double> y;
    for (const auto* r : records) y.push_back(r->label);
    const eval::MetricReport rep = dataset.task == data::Task::kClassification
                                       ? eval::classification_metrics(pred, y)
                                       : eval::regression_metrics(pred, y);
    std::cout << "split=" << a.split << "\n" << rep.to_text();
    write_text(out / (name + "_metrics.json"), rep.to_json() + "\n");
  }
  std::cout << "encoder_checksum_before=" << before << "\nencoder_checksum_after=" << after
            << "\nencoder_unchanged=" << (before == after ? "true" : "false") << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::size_t clips = 3;
  bool json = false;
  std::string csv;
  std::size_t triplets = 10000;
  std::size_t k = 5;
  std::vector<std::string> ids;
  std::size_t samples = 1;
};

struct Loaded {
  std::optional<train::Trainer> trainer;
  data::Dataset dataset;
  std::vector<const data::VideoRecord*> records;
  std::uint64_t seed = 0;
};

Loaded load_inputs(const InspectArgs& a, const std::string& command) {
  if (a.checkpoint.empty()) throw UsageError(command + ": --checkpoint is required");
  if (a.dataset.empty()) throw UsageError(command + ": --dataset is required");
  const train::Checkpoint ckpt = train::load_checkpoint(a.checkpoint);
  Loaded l;
  l.trainer.emplace(train::Trainer::resume(ckpt));
  l.dataset = data::load_dataset(a.dataset);
  l.records = l.dataset.split(split_of(a.split));
  if (l.records.empty()) throw DataError(command + ": split '" + a.split + "' is empty");
  l.seed = seed_fallback(a.seed);
  std::ostringstream prov;
  prov << "checkpoint = " << a.checkpoint << "\ndataset = " << a.dataset << "\nsplit = " << a.split
       << "\nseed = " << l.seed << "\n# model config\n"
       << to_text(l.trainer->config());
  write_provenance(a.out, command, prov.str());
  return l;
}

int cmd_eval(const InspectArgs& a) {
  if (a.clips < 1) throw UsageError("eval: --clips must be >= 1");
  Loaded l = load_inputs(a, "eval");
  eval::PredictOptions opt;
  opt.clips = a.clips;
  opt.seed = l.seed;
  const std::vector<double> pred = eval::predict(l.trainer->model(), l.records, l.trainer->config().sampler, opt);
  std::vector<double> y;
  for (const auto* r : l.records) y.push_back(r->label);
  const eval::MetricReport rep = l.dataset.task == data::Task::kClassification
                                     ? eval::classification_metrics(pred, y)
                                     : eval::regression_metrics(pred, y);
  std::cout << (a.json ? rep.to_json() + "\n" : rep.to_text());
  return kOk;
}

int cmd_embed(const InspectArgs& a) {
  Loaded l = load_inputs(a, "embed");
  const fs::path csv = a.csv.empty() ? fs::path(a.out) / "embeddings.csv" : fs::path(a.csv);
  const eval::EmbeddingTable t =
      eval::export_embeddings(l.trainer->model(), l.records, l.trainer->config().sampler, l.seed, csv);
  std::cout << "embeddings=" << csv.string() << "\nrows=" << t.ids.size() << "\n";
  return kOk;
}

int cmd_diagnose(const InspectArgs& a) {
  Loaded l = load_inputs(a, "diagnose");
  const ad::Tensor e = eval::embed_records(l.trainer->model().encoder, l.records, l.trainer->config().sampler, l.seed);
  std::vector<double> y;
  for (const auto* r : l.records) y.push_back(r->label);
  const eval::ContinuityReport rep = eval::continuity_report(e, y, a.triplets, a.k, l.seed);
  std::cout << (a.json ? rep.to_json() + "\n" : rep.to_text());
  return kOk;
}

int cmd_saliency(const InspectArgs& a) {
  Loaded l = load_inputs(a, "saliency");
  std::vector<const data::VideoRecord*> chosen;
  if (a.ids.empty()) {
    for (std::size_t i = 0; i < std::min(a.samples, l.records.size()); ++i) chosen.push_back(l.records[i]);
  } else {
    for (const std::string& id : a.ids) {
      const data::VideoRecord* hit = nullptr;
      for (const auto& r : l.dataset.records) {
        if (r.id == id) hit = &r;
      }
      if (hit == nullptr) throw DataError("saliency: no video with id '" + id + "'");
      chosen.push_back(hit);
    }
  }
  const data::SamplerConfig& sampler = l.trainer->config().sampler;
  for (const data::VideoRecord* r : chosen) {
    Rng rng = Rng::derive(l.seed, {stream::kEval});
    const data::Video clip = data::sample_clip(*r, sampler, rng);
    const ad::Tensor x = data::stack_clips(std::span<const data::Video>(&clip, 1));
    train::Checkpoint file;
    file.config = "id = " + r->id + "\n";
    file.put("clip", x);
    file.put("saliency", eval::input_saliency(l.trainer->model(), x));
    const fs::path path = fs::path(a.out) / (r->id + ".saliency");
    train::save_checkpoint(path, file);
    std::cout << "saliency=" << path.string() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  ConfigFlags flags;
  std::string checkpoint;
  std::size_t videos = 2;
  std::size_t max_entries = 16;
  double tolerance = 1e-6;
  double step = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::optional<train::Trainer> trainer;
  RunConfig cfg;
  if (!a.checkpoint.empty()) {
    const train::Checkpoint ckpt = train::load_checkpoint(a.checkpoint);
    cfg = a.flags.resolve(parse_config(ckpt.config));
    trainer.emplace(train::Trainer::resume(ckpt, cfg));
  } else {
    cfg = a.flags.resolve();
    trainer.emplace(cfg, data::Task::kRegression);
  }
  if (a.videos < 1) throw UsageError("gradcheck: --videos must be >= 1");
  const fs::path out = cfg.output_dir.empty() ? fs::path(".") : fs::path(cfg.output_dir);
  write_provenance(out, "gradcheck", to_text(cfg));

  // Random clips and labels; the check concerns the loss, not the data.
  Rng rng = Rng::derive(cfg.train.seed, {stream::kDiagnose, 1});
  const auto& ec = cfg.encoder;
  const std::size_t rows = 2 * a.videos;
  ad::Tensor clips({rows, ec.frames, ec.height, ec.width, ec.channels});
  for (double& v : clips.data()) v = rng.uniform();
  std::vector<double> labels;
  for (std::size_t i = 0; i < a.videos; ++i) {
    const double y = rng.uniform(10.0, 80.0);
    labels.push_back(y);
    labels.push_back(y);
  }
  model::Model& m = trainer->model();
  m.encoder.set_trainable(true);
  auto build = [&](ad::Tape& tape) {
    Rng drop = Rng::derive(cfg.train.seed, {stream::kDropout, 99});
    ad::Var e = m.encoder.forward(tape, tape.constant(clips), ad::Mode::kTrain);
    return losses::stage1_loss(e, labels, m.head, cfg.train.temperature, ad::Mode::kTrain, &drop).total;
  };
  std::vector<ad::Parameter*> params = m.encoder.parameters();
  for (ad::Parameter* p : m.head.parameters()) params.push_back(p);
  for (ad::Parameter* p : params) p->grad = ad::Tensor::zeros_like(p->value);
  ad::GradCheckOptions opt;
  opt.step = a.step;
  opt.tolerance = a.tolerance;
  opt.max_entries_per_param = a.max_entries;
  opt.sample_seed = cfg.train.seed;
  const ad::GradCheckReport rep = ad::grad_check(build, params, opt);
  for (const auto& e : rep.entries) {
    std::cout << e.name << " checked=" << e.checked << " max_rel_error=" << format_double(e.max_rel_error)
              << (e.failures > 0 ? " FAIL" : "") << "\n";
  }
  std::cout << "max_rel_error=" << format_double(rep.max_rel_error) << "\ntolerance=" << format_double(rep.tolerance)
            << "\nresult=" << (rep.passed() ? "pass" : "fail") << "\n";
  return rep.passed() ? kOk : kCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coreecho: continuous-representation regression on video"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic ellipse-video dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--count", synth.count, "number of videos");
  s->add_option("--val-count", synth.val_count, "validation videos (default count/6)");
  s->add_option("--test-count", synth.test_count, "test videos (default count/6)");
  s->add_option("--size", synth.size, "frame height and width");
  s->add_option("--min-frames", synth.min_frames);
  s->add_option("--max-frames", synth.max_frames);
  s->add_option("--channels", synth.channels);
  s->add_option("--min-label", synth.min_label);
  s->add_option("--max-label", synth.max_label);
  s->add_option("--min-axis-ratio", synth.min_axis_ratio);
  s->add_option("--max-axis-ratio", synth.max_axis_ratio);
  s->add_option("--min-radius", synth.min_radius);
  s->add_option("--max-radius", synth.max_radius);
  s->add_option("--noise", synth.noise);
  s->add_option("--task", synth.task, "regression | classification");
  s->add_option("--threshold", synth.threshold, "classification: label 1 when EF is below this");
  s->add_option("--seed", synth.seed);

  TrainArgs train_args;
  CLI::App* t = app.add_subcommand("train", "stage 1 then stage 2");
  train_args.flags.attach(t);
  t->add_option("--resume", train_args.resume, "continue from a checkpoint");
  t->add_option("--max-epochs", train_args.max_epochs, "stop after this many epochs (continue with --resume)");

  TransferArgs probe_args, finetune_args;
  CLI::App* p = app.add_subcommand("probe", "fresh head on a frozen pretrained encoder");
  probe_args.flags.attach(p);
  p->add_option("--from", probe_args.from, "pretrained checkpoint")->required();
  p->add_option("--report-split", probe_args.split, "split for the final metric report");
  CLI::App* f = app.add_subcommand("finetune", "fresh head, encoder also trained");
  finetune_args.flags.attach(f);
  f->add_option("--from", finetune_args.from, "pretrained checkpoint")->required();
  f->add_option("--report-split", finetune_args.split, "split for the final metric report");

  InspectArgs inspect;
  auto inspect_opts = [&](CLI::App* c) {
    c->add_option("--checkpoint", inspect.checkpoint)->required();
    c->add_option("--dataset", inspect.dataset)->required();
    c->add_option("--split", inspect.split, "train | val | test");
    c->add_option("--out", inspect.out, "directory for outputs and provenance");
    c->add_option("--seed", inspect.seed);
  };
  CLI::App* ev = app.add_subcommand("eval", "multi-clip metrics");
  inspect_opts(ev);
  ev->add_option("--clips", inspect.clips, "clips averaged per video");
  ev->add_flag("--json", inspect.json);
  CLI::App* em = app.add_subcommand("embed", "export embeddings as CSV");
  inspect_opts(em);
  em->add_option("--csv", inspect.csv, "output CSV path");
  CLI::App* dg = app.add_subcommand("diagnose", "triplet violation rate and kNN label MAE");
  inspect_opts(dg);
  dg->add_option("--triplets", inspect.triplets);
  dg->add_option("--k", inspect.k);
  dg->add_flag("--json", inspect.json);
  CLI::App* sa = app.add_subcommand("saliency", "input-gradient saliency maps");
  inspect_opts(sa);
  sa->add_option("--ids", inspect.ids, "video ids");
  sa->add_option("--samples", inspect.samples, "first N videos of the split when no ids are given");

  GradcheckArgs gc;
  CLI::App* g = app.add_subcommand("gradcheck", "finite-difference check of the stage-1 loss");
  gc.flags.attach(g);
  g->add_option("--checkpoint", gc.checkpoint, "check this model instead of a fresh one");
  g->add_option("--videos", gc.videos, "videos in the random batch");
  g->add_option("--max-entries", gc.max_entries, "entries checked per parameter (0 = all)");
  g->add_option("--tolerance", gc.tolerance);
  g->add_option("--step", gc.step);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train_args);
    if (p->parsed()) return cmd_transfer(probe_args, train::Stage::kProbe);
    if (f->parsed()) return cmd_transfer(finetune_args, train::Stage::kFinetune);
    if (ev->parsed()) return cmd_eval(inspect);
    if (em->parsed()) return cmd_embed(inspect);
    if (dg->parsed()) return cmd_diagnose(inspect);
    if (sa->parsed()) return cmd_saliency(inspect);
    if (g->parsed()) return cmd_gradcheck(gc);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const CheckFailure& e) {
    std::cerr << "check failure: " << e.what() << "\n";
    return kCheck;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kUsage;
}
