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
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coreecho/autodiff.hpp"
#include "coreecho/data.hpp"
#include "coreecho/model.hpp"

namespace coreecho::eval {

struct MetricReport {
  std::string task;
  std::vector<std::pair<std::string, double>> values;
  std::size_t count = 0;

  double get(const std::string& name) const;
  // One "key=value" per line, starting with task and count.
  std::string to_text() const;
  std::string to_json() const;
};

// MAE, RMSE, R2 (x100) and Pearson r. Throws DomainError when the targets
// have zero variance.
MetricReport regression_metrics(std::span<const double> pred, std::span<const double> target);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(std::span<const double> prob, std::span<const double> target, double threshold = 0.5);

// Sensitivity, specificity, precision, F1, accuracy at `threshold`. Any rate
// with a zero denominator is reported as 0.
MetricReport classification_metrics(std::span<const double> prob, std::span<const double> target,
                                    double threshold = 0.5);

// Mean of head outputs over `n_clips` clips drawn from `rng` in order, eval
// mode, no augmentation.
double multiclip_predict(model::Model& model, const data::VideoRecord& video,
                         const data::SamplerConfig& sampler, std::size_t n_clips, Rng& rng);

struct PredictOptions {
  std::size_t clips = 3;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};

// Batched equivalent of multiclip_predict for every record; video i uses
// Rng::derive(seed, {stream::kEval, i}).
std::vector<double> predict(model::Model& model, std::span<const data::VideoRecord* const> records,
                            const data::SamplerConfig& sampler, const PredictOptions& options);

// Eval-mode embedding of the first clip predict() would draw for each record.
ad::Tensor embed_records(model::TinyEncoder& encoder, std::span<const data::VideoRecord* const> records,
                         const data::SamplerConfig& sampler, std::uint64_t seed, std::size_t batch = 32);

// Fraction of sampled triplets (a, b, c), |y_a - y_b| != |y_a - y_c|, whose
// embedding-distance order disagrees with the label-distance order. Equal
// embedding distances count as violations.
double triplet_violation_rate(const ad::Tensor& embeddings, std::span<const double> labels,
                              std::size_t n_triplets, Rng& rng);

// Mean over samples of |y_i - mean label of its k nearest neighbours|,
// excluding the sample itself. Neighbour ties resolve by lower index.
double knn_label_mae(const ad::Tensor& embeddings, std::span<const double> labels, std::size_t k);

struct ContinuityReport {
  double violation_rate = 0.0;
  double knn_mae = 0.0;
  std::size_t k = 5;
  std::size_t triplets = 0;

  std::string to_text() const;
  std::string to_json() const;
};

ContinuityReport continuity_report(const ad::Tensor& embeddings, std::span<const double> labels,
                                   std::size_t n_triplets, std::size_t k, std::uint64_t seed);

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<double> labels;
  ad::Tensor embeddings;  // [rows x dim]
};

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);

// Embeds every record and writes the CSV. Returns the table.
EmbeddingTable export_embeddings(model::Model& model, std::span<const data::VideoRecord* const> records,
                                 const data::SamplerConfig& sampler, std::uint64_t seed,
                                 const std::filesystem::path& path);

// |d output / d input| for a scalar-valued function of the input, scaled so
// the largest entry is 1. An all-zero gradient stays zero.
using ScalarFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;
ad::Tensor input_saliency(const ScalarFn& fn, const ad::Tensor& input);

// Saliency of the model's eval-mode prediction for one clip [1 x F x H x W x C].
ad::Tensor input_saliency(model::Model& model, const ad::Tensor& clip);

}  // namespace coreecho::eval
