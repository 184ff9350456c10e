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

#include "coreecho/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "coreecho/config.hpp"
#include "coreecho/errors.hpp"

namespace coreecho::eval {

using ad::Tensor;
using ad::Var;

double MetricReport::get(const std::string& name) const {
  for (const auto& [k, v] : values) {
    if (k == name) return v;
  }
  throw UsageError("metric report: no metric '" + name + "'");
}

std::string MetricReport::to_text() const {
  std::string out = "task=" + task + "\ncount=" + std::to_string(count) + "\n";
  for (const auto& [k, v] : values) out += k + "=" + format_double(v) + "\n";
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["count"] = count;
  for (const auto& [k, v] : values) j[k] = v;
  return j.dump();
}

MetricReport regression_metrics(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ShapeError("regression_metrics: need equal, nonzero lengths");
  }
  const double n = static_cast<double>(pred.size());
  const double mean_t = std::accumulate(target.begin(), target.end(), 0.0) / n;
  const double mean_p = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  double abs_err = 0.0, sse = 0.0, sst = 0.0, spp = 0.0, spt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    abs_err += std::fabs(e);
    sse += e * e;
    sst += (target[i] - mean_t) * (target[i] - mean_t);
    spp += (pred[i] - mean_p) * (pred[i] - mean_p);
    spt += (pred[i] - mean_p) * (target[i] - mean_t);
  }
  if (sst == 0.0) throw DomainError("regression_metrics: R2 undefined for constant targets");
  MetricReport r;
  r.task = "regression";
  r.count = pred.size();
  r.values = {{"mae", abs_err / n},
              {"rmse", std::sqrt(sse / n)},
              {"r2", 100.0 * (1.0 - sse / sst)},
              {"pearson", spp > 0.0 ? spt / std::sqrt(spp * sst) : 0.0}};
  return r;
}

Confusion confusion(std::span<const double> prob, std::span<const double> target, double threshold) {
  if (prob.size() != target.size()) throw ShapeError("confusion: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (target[i] != 0.0 && target[i] != 1.0) throw DomainError("confusion: targets must be 0 or 1");
    const bool predicted = prob[i] >= threshold;
    const bool actual = target[i] == 1.0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricReport classification_metrics(std::span<const double> prob, std::span<const double> target,
                                    double threshold) {
  const Confusion c = confusion(prob, target, threshold);
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  const double sens = ratio(c.tp, c.tp + c.fn);
  const double spec = ratio(c.tn, c.tn + c.fp);
  const double prec = ratio(c.tp, c.tp + c.fp);
  const double f1 = prec + sens > 0.0 ? 2.0 * prec * sens / (prec + sens) : 0.0;
  MetricReport r;
  r.task = "classification";
  r.count = prob.size();
  r.values = {{"sensitivity", sens},
              {"specificity", spec},
              {"precision", prec},
              {"f1", f1},
              {"accuracy", ratio(c.tp + c.tn, prob.size())},
              {"tp", static_cast<double>(c.tp)},
              {"fp", static_cast<double>(c.fp)},
              {"fn", static_cast<double>(c.fn)},
              {"tn", static_cast<double>(c.tn)}};
  return r;
}

namespace {

std::vector<double> head_outputs(model::Model& model, const Tensor& clips) {
  ad::Tape tape(ad::Precision::kF64, /*grad_enabled=*/false);
  Var e = model.encoder.forward(tape, tape.constant(clips), ad::Mode::kEval);
  Var y = model.head.forward(tape, e, ad::Mode::kEval, nullptr);
  return y.value().vec();
}

}  // namespace

double multiclip_predict(model::Model& model, const data::VideoRecord& video,
                         const data::SamplerConfig& sampler, std::size_t n_clips, Rng& rng) {
  if (n_clips < 1) throw UsageError("multiclip_predict: n_clips must be >= 1");
  std::vector<data::Video> clips;
  for (std::size_t k = 0; k < n_clips; ++k) clips.push_back(data::sample_clip(video, sampler, rng));
  const std::vector<double> y = head_outputs(model, data::stack_clips(clips));
  double total = 0.0;
  for (double v : y) total += v;
  return total / static_cast<double>(n_clips);
}

std::vector<double> predict(model::Model& model, std::span<const data::VideoRecord* const> records,
                            const data::SamplerConfig& sampler, const PredictOptions& options) {
  if (options.clips < 1) throw UsageError("predict: clips must be >= 1");
  if (options.batch < 1) throw UsageError("predict: batch must be >= 1");
  std::vector<double> out(records.size(), 0.0);
  const std::size_t per_batch = std::max<std::size_t>(1, options.batch / options.clips);
  for (std::size_t begin = 0; begin < records.size(); begin += per_batch) {
    const std::size_t end = std::min(records.size(), begin + per_batch);
    std::vector<data::Video> clips;
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = Rng::derive(options.seed, {stream::kEval, i});
      for (std::size_t k = 0; k < options.clips; ++k) {
        clips.push_back(data::sample_clip(*records[i], sampler, rng));
      }
    }
    const std::vector<double> y = head_outputs(model, data::stack_clips(clips));
    for (std::size_t i = begin; i < end; ++i) {
      double total = 0.0;
      for (std::size_t k = 0; k < options.clips; ++k) total += y[(i - begin) * options.clips + k];
      out[i] = total / static_cast<double>(options.clips);
    }
  }
  return out;
}

Tensor embed_records(model::TinyEncoder& encoder, std::span<const data::VideoRecord* const> records,
                     const data::SamplerConfig& sampler, std::uint64_t seed, std::size_t batch) {
  if (batch < 1) throw UsageError("embed_records: batch must be >= 1");
  const std::size_t dim = encoder.config().embed_dim;
  if (records.empty()) return Tensor();
  Tensor out({records.size(), dim});
  for (std::size_t begin = 0; begin < records.size(); begin += batch) {
    const std::size_t end = std::min(records.size(), begin + batch);
    std::vector<data::Video> clips;
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = Rng::derive(seed, {stream::kEval, i});
      clips.push_back(data::sample_clip(*records[i], sampler, rng));
    }
    const Tensor e = encoder.embed(data::stack_clips(clips));
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * dim));
  }
  return out;
}

namespace {

double row_distance(const Tensor& e, std::size_t i, std::size_t j) {
  const std::size_t d = e.dim(1);
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = e.at(i, k) - e.at(j, k);
    s += diff * diff;
  }
  return std::sqrt(s);
}

void check_embeddings(const Tensor& e, std::span<const double> labels, const char* op) {
  if (e.rank() != 2) throw ShapeError(std::string(op) + ": embeddings must be 2-D");
  if (e.dim(0) != labels.size()) throw ShapeError(std::string(op) + ": label count mismatch");
}

}  // namespace

double triplet_violation_rate(const Tensor& embeddings, std::span<const double> labels,
                              std::size_t n_triplets, Rng& rng) {
  check_embeddings(embeddings, labels, "triplet_violation_rate");
  const std::size_t n = labels.size();
  if (n < 3) throw UsageError("triplet_violation_rate: need at least 3 samples");
  if (n_triplets < 1) throw UsageError("triplet_violation_rate: n_triplets must be >= 1");
  std::size_t violations = 0, drawn = 0, attempts = 0;
  const std::size_t max_attempts = 1000 * n_triplets + 1000;
  while (drawn < n_triplets) {
    if (++attempts > max_attempts) {
      throw DomainError("triplet_violation_rate: labels admit no triplet with distinct distances");
    }
    const std::size_t a = rng.index(n);
    const std::size_t b = rng.index(n);
    const std::size_t c = rng.index(n);
    if (a == b || a == c || b == c) continue;
    const double lab_b = std::fabs(labels[a] - labels[b]);
    const double lab_c = std::fabs(labels[a] - labels[c]);
    if (lab_b == lab_c) continue;
    const std::size_t near = lab_b < lab_c ? b : c;
    const std::size_t far = lab_b < lab_c ? c : b;
    if (!(row_distance(embeddings, a, near) < row_distance(embeddings, a, far))) ++violations;
    ++drawn;
  }
  return static_cast<double>(violations) / static_cast<double>(n_triplets);
}

double knn_label_mae(const Tensor& embeddings, std::span<const double> labels, std::size_t k) {
  check_embeddings(embeddings, labels, "knn_label_mae");
  const std::size_t n = labels.size();
  if (k < 1 || k >= n) throw UsageError("knn_label_mae: k must satisfy 1 <= k < sample count");
  double total = 0.0;
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.emplace_back(row_distance(embeddings, i, j), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double mean = 0.0;
    for (std::size_t m = 0; m < k; ++m) mean += labels[dist[m].second];
    mean /= static_cast<double>(k);
    total += std::fabs(labels[i] - mean);
  }
  return total / static_cast<double>(n);
}

std::string ContinuityReport::to_text() const {
  return "violation_rate=" + format_double(violation_rate) + "\nknn_mae=" + format_double(knn_mae) +
         "\nk=" + std::to_string(k) + "\ntriplets=" + std::to_string(triplets) + "\n";
}

std::string ContinuityReport::to_json() const {
  nlohmann::ordered_json j;
  j["violation_rate"] = violation_rate;
  j["knn_mae"] = knn_mae;
  j["k"] = k;
  j["triplets"] = triplets;
  return j.dump();
}

ContinuityReport continuity_report(const Tensor& embeddings, std::span<const double> labels,
                                   std::size_t n_triplets, std::size_t k, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {stream::kDiagnose});
  ContinuityReport r;
  r.violation_rate = triplet_violation_rate(embeddings, labels, n_triplets, rng);
  r.knn_mae = knn_label_mae(embeddings, labels, k);
  r.k = k;
  r.triplets = n_triplets;
  return r;
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table) {
  const std::size_t rows = table.ids.size();
  if (table.labels.size() != rows || (rows > 0 && table.embeddings.dim(0) != rows)) {
    throw ShapeError("write_embeddings_csv: row count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t dim = rows > 0 ? table.embeddings.dim(1) : 0;
  out << "id,label";
  for (std::size_t k = 0; k < dim; ++k) out << ",e_" << k;
  out << "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    out << table.ids[i] << "," << format_double(table.labels[i]);
    for (std::size_t k = 0; k < dim; ++k) out << "," << format_double(table.embeddings.at(i, k));
    out << "\n";
  }
  if (!out) throw DataError("write failed for " + path.string());
}

EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,label", 0) != 0) {
    throw DataError(path.string() + ": missing id,label header");
  }
  const std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 1;
  EmbeddingTable t;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    t.ids.push_back(cell);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError(path.string() + ": bad number '" + cell + "'");
      }
    }
    if (row.size() != dim + 1) throw DataError(path.string() + ": ragged row for " + t.ids.back());
    t.labels.push_back(row[0]);
    values.insert(values.end(), row.begin() + 1, row.end());
  }
  if (!t.ids.empty()) t.embeddings = Tensor({t.ids.size(), dim}, std::move(values));
  return t;
}

EmbeddingTable export_embeddings(model::Model& model, std::span<const data::VideoRecord* const> records,
                                 const data::SamplerConfig& sampler, std::uint64_t seed,
                                 const std::filesystem::path& path) {
  EmbeddingTable t;
  for (const data::VideoRecord* r : records) {
    t.ids.push_back(r->id);
    t.labels.push_back(r->label);
  }
  t.embeddings = embed_records(model.encoder, records, sampler, seed);
  write_embeddings_csv(path, t);
  return t;
}

Tensor input_saliency(const ScalarFn& fn, const Tensor& input) {
  ad::Tape tape;
  Var x = tape.leaf(input);
  Var y = fn(tape, x);
  if (y.value().size() != 1) throw ShapeError("input_saliency: function must return a scalar");
  tape.backward(y);
  Tensor g = tape.grad(x);
  double peak = 0.0;
  for (double& v : g.data()) {
    v = std::fabs(v);
    peak = std::max(peak, v);
  }
  if (peak > 0.0) {
    for (double& v : g.data()) v /= peak;
  }
  return g;
}

Tensor input_saliency(model::Model& model, const Tensor& clip) {
  if (clip.rank() != 5 || clip.dim(0) != 1) throw ShapeError("input_saliency: expected one clip [1 x F x H x W x C]");
  // Parameter gradients from this pass are discarded.
  std::vector<Tensor> saved;
  std::vector<ad::Parameter*> params = model.encoder.parameters();
  for (ad::Parameter* p : model.head.parameters()) params.push_back(p);
  for (ad::Parameter* p : params) saved.push_back(p->grad);
  Tensor map = input_saliency(
      [&](ad::Tape& tape, const Var& x) {
        Var e = model.encoder.forward(tape, x, ad::Mode::kEval);
        return ad::sum(model.head.forward(tape, e, ad::Mode::kEval, nullptr));
      },
      clip);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = std::move(saved[i]);
  return map;
}

}  // namespace coreecho::eval
