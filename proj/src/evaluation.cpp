/* Copyright 2026 The partlang Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "partlang/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "partlang/error.hpp"
#include "partlang/head.hpp"
#include "partlang/losses.hpp"

namespace partlang {

double MetricReport::value(const std::string& key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  throw NotFoundError("report '" + name + "' has no value '" + key + "'");
}

void MetricReport::Validate() const {
  if (count == 0) throw ValidationError("report '" + name + "' has no samples");
  for (const auto& [k, v] : values) {
    if (!std::isfinite(v)) throw NumericError("report '" + name + "' value '" + k + "' is not finite");
  }
}

void WriteReportsCsv(std::ostream& out, const std::vector<MetricReport>& reports) {
  out << "name,key,value,count,config_digest\n";
  for (const MetricReport& r : reports) {
    for (const auto& [k, v] : r.values) {
      std::ostringstream line;
      line.precision(12);
      line << r.name << ',' << k << ',' << v << ',' << r.count << ',' << r.config_digest << '\n';
      out << line.str();
    }
  }
}

std::string ReportToJson(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  nlohmann::ordered_json values = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.values) values[k] = v;
  j["values"] = values;
  j["count"] = r.count;
  j["config_digest"] = r.config_digest;
  return j.dump();
}

double Top1Accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("top1: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw ValidationError("top1: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double HarmonicMean(double seen, double unseen) {
  if (!(seen >= 0 && seen <= 100) || !(unseen >= 0 && unseen <= 100)) {
    throw ValidationError("harmonic mean inputs must lie in [0, 100]");
  }
  if (seen == 0 || unseen == 0) return 0.0;
  return 2 * seen * unseen / (seen + unseen);
}

double BoxMeanIou(const std::vector<BoundingBox>& predicted, const std::vector<BoundingBox>& reference) {
  if (predicted.size() != reference.size()) throw ShapeError("box IoU: box lists differ in length");
  if (predicted.empty()) throw ValidationError("box IoU: no boxes");
  double sum = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += Giou(predicted[i], reference[i]).iou;
  return sum / static_cast<double>(predicted.size());
}

FilteredIou BoxMeanIouWithKeypoints(const std::vector<BoxPairWithKeypoint>& pairs) {
  FilteredIou out;
  double sum = 0;
  for (const BoxPairWithKeypoint& p : pairs) {
    if (!p.keypoint || !p.reference.Contains(p.keypoint->first, p.keypoint->second)) continue;
    sum += Giou(p.predicted, p.reference).iou;
    ++out.used;
  }
  if (out.used) out.mean_iou = sum / static_cast<double>(out.used);
  return out;
}

KeypointPrecisionResult KeypointPrecision(const std::vector<KeypointCheck>& checks) {
  KeypointPrecisionResult r;
  for (const KeypointCheck& c : checks) {
    if (!c.visible) continue;
    ++r.visible;
    r.correct += c.predicted.Contains(c.x, c.y);
  }
  return r;
}

const char* PartOrderName(PartOrder order) {
  return order == PartOrder::kMostFrequent ? "most" : "least";
}

PartOrder ParsePartOrder(const std::string& name) {
  if (name == "most") return PartOrder::kMostFrequent;
  if (name == "least") return PartOrder::kLeastFrequent;
  throw ValidationError("part order must be 'most' or 'least', got '" + name + "'");
}

std::vector<std::size_t> SelectPartSubset(const std::vector<double>& frequency, std::size_t k, PartOrder order) {
  if (frequency.empty()) throw ValidationError("part subset needs a part-frequency table");
  if (k < 1 || k > frequency.size()) {
    throw ValidationError("part subset size " + std::to_string(k) + " outside [1, " +
                          std::to_string(frequency.size()) + "]");
  }
  std::vector<std::size_t> idx(frequency.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return order == PartOrder::kMostFrequent ? frequency[a] > frequency[b] : frequency[a] < frequency[b];
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

ClassLogits ClassifySubset(const Matrix& scores, const std::vector<std::size_t>& parts) {
  const Eigen::Index p = scores.rows();
  if (p == 0 || scores.cols() % p != 0) throw ShapeError("classify subset: columns not divisible by parts");
  for (std::size_t j : parts) {
    if (static_cast<Eigen::Index>(j) >= p) throw ShapeError("classify subset: part index out of range");
  }
  const Eigen::Index classes = scores.cols() / p;
  ClassLogits out;
  out.logits = Vector::Zero(classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    double sum = 0;
    for (std::size_t j : parts) sum += scores(static_cast<Eigen::Index>(j), c * p + static_cast<Eigen::Index>(j));
    out.logits[c] = sum;
  }
  out.prediction = ArgmaxLowest(out.logits);
  return out;
}

namespace {

Matrix ExampleScores(const Model& model, const TrainingData& data, const TrainingExample& ex) {
  HeadInputs in;
  in.raw_patches = &ex.raw_patches;
  in.part_name_embeddings = &data.part_name_embeddings;
  in.descriptor_embeddings = &data.descriptor_embeddings;
  in.need_selection_logits = false;
  in.need_boxes = false;
  return RunHead(model, in).scores;
}

std::vector<int> Labels(const std::vector<TrainingExample>& examples) {
  std::vector<int> out;
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

std::string Digest(const Model& model, const std::string& extra) {
  return HexDigest(Fnv1a64(extra, model.ParameterDigest()));
}

}  // namespace

PartSubsetResult PartSubsetEval(const Model& model, const TrainingData& data,
                                const std::vector<TrainingExample>& examples, const std::vector<double>& frequency,
                                std::size_t k, PartOrder order) {
  if (frequency.size() != data.library->num_parts()) {
    throw ValidationError("part subset needs a frequency for each of the " +
                          std::to_string(data.library->num_parts()) + " parts");
  }
  PartSubsetResult r;
  r.parts = SelectPartSubset(frequency, k, order);
  for (const TrainingExample& ex : examples) {
    r.predictions.push_back(ClassifySubset(ExampleScores(model, data, ex), r.parts).prediction);
  }
  r.report.name = std::string("part_subset_") + PartOrderName(order) + "_k" + std::to_string(k);
  r.report.values = {{"top1", Top1Accuracy(r.predictions, Labels(examples))}, {"k", static_cast<double>(k)}};
  r.report.count = examples.size();
  r.report.config_digest = Digest(model, r.report.name);
  return r;
}

MetricReport RandomizedDescriptorEval(const Model& model, const TextEncoder& text_encoder,
                                      std::shared_ptr<const DescriptorLibrary> library,
                                      const std::vector<TrainingExample>& examples, std::uint64_t seed,
                                      std::size_t draws) {
  if (!library || library->num_classes() < 2) throw ValidationError("randomized eval needs at least 2 classes");
  if (draws == 0) throw ValidationError("randomized eval needs at least one draw");
  const DescriptorTemplate tmpl = model.config().descriptor_template;
  const TrainingData original = TrainingData::Build(library, text_encoder, tmpl, {}, {});
  const std::vector<int> labels = Labels(examples);
  double sum = 0, lo = 1, hi = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const auto randomized = std::make_shared<const DescriptorLibrary>(RandomizeDescriptors(*library, seed + d));
    const TrainingData shuffled = TrainingData::Build(randomized, text_encoder, tmpl, {}, {});
    const double acc = Top1Accuracy(PredictLabels(model, shuffled, examples), labels);
    sum += acc;
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  MetricReport r;
  r.name = "randomized_descriptors";
  r.values = {{"original_top1", Top1Accuracy(PredictLabels(model, original, examples), labels)},
              {"randomized_top1", sum / static_cast<double>(draws)},
              {"randomized_min", lo},
              {"randomized_max", hi},
              {"draws", static_cast<double>(draws)},
              {"chance", 1.0 / static_cast<double>(library->num_classes())}};
  r.count = examples.size();
  r.config_digest = Digest(model, r.name + "/" + std::to_string(seed) + "x" + std::to_string(draws));
  return r;
}

MetricReport AccuracyReport(const Model& model, const TrainingData& data,
                            const std::vector<TrainingExample>& examples, const std::string& name) {
  MetricReport r;
  r.name = name;
  r.values = {{"top1", Top1Accuracy(PredictLabels(model, data, examples), Labels(examples))}};
  r.count = examples.size();
  r.config_digest = Digest(model, name);
  return r;
}

}  // namespace partlang
