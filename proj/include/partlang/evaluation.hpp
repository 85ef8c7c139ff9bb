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

#ifndef PARTLANG_EVALUATION_HPP_
#define PARTLANG_EVALUATION_HPP_

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/head.hpp"
#include "partlang/model.hpp"
#include "partlang/training.hpp"
#include "partlang/types.hpp"

namespace partlang {

struct MetricReport {
  std::string name;
  std::vector<std::pair<std::string, double>> values;
  std::size_t count = 0;
  std::string config_digest;

  double value(const std::string& key) const;  // NotFoundError when absent
  // Throws NumericError for non-finite values, ValidationError for count 0.
  void Validate() const;
};

// One CSV row per (report, value): name,key,value,count,config_digest.
void WriteReportsCsv(std::ostream& out, const std::vector<MetricReport>& reports);
std::string ReportToJson(const MetricReport& report);

double Top1Accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// 2ab / (a + b) on percentages; 0 when either side is 0.
double HarmonicMean(double seen, double unseen);

// Mean IoU over aligned box pairs.
double BoxMeanIou(const std::vector<BoundingBox>& predicted, const std::vector<BoundingBox>& reference);

// Pairs whose reference box contains the pair's keypoint only.
struct BoxPairWithKeypoint {
  BoundingBox predicted;
  BoundingBox reference;
  std::optional<std::pair<double, double>> keypoint;  // same coordinates as the boxes
};
struct FilteredIou {
  double mean_iou = 0;
  std::size_t used = 0;
};
FilteredIou BoxMeanIouWithKeypoints(const std::vector<BoxPairWithKeypoint>& pairs);

struct KeypointCheck {
  BoundingBox predicted;  // the keypoint's part box
  double x = 0, y = 0;
  bool visible = true;
};
struct KeypointPrecisionResult {
  std::size_t correct = 0;
  std::size_t visible = 0;
  double precision() const { return visible ? double(correct) / double(visible) : 0.0; }
};
// Every visible keypoint counts once (per part instance); the box is closed.
KeypointPrecisionResult KeypointPrecision(const std::vector<KeypointCheck>& checks);

enum class PartOrder { kMostFrequent, kLeastFrequent };
const char* PartOrderName(PartOrder order);
PartOrder ParsePartOrder(const std::string& name);

// The k parts to keep, by visibility frequency (ties by vocabulary order).
std::vector<std::size_t> SelectPartSubset(const std::vector<double>& frequency, std::size_t k, PartOrder order);

// Diagonal-sum logits restricted to `parts`, summed in vocabulary order so
// the full set reproduces Classify bit for bit.
ClassLogits ClassifySubset(const Matrix& scores, const std::vector<std::size_t>& parts);

struct PartSubsetResult {
  MetricReport report;
  std::vector<int> predictions;
  std::vector<std::size_t> parts;
};

PartSubsetResult PartSubsetEval(const Model& model, const TrainingData& data,
                                const std::vector<TrainingExample>& examples, const std::vector<double>& frequency,
                                std::size_t k, PartOrder order);

// Accuracy with the original library and with randomized ones. Each draw
// permutes every part's phrases with seed + d; randomized_top1 is the mean
// over draws.
MetricReport RandomizedDescriptorEval(const Model& model, const TextEncoder& text_encoder,
                                      std::shared_ptr<const DescriptorLibrary> library,
                                      const std::vector<TrainingExample>& examples, std::uint64_t seed,
                                      std::size_t draws = 1);

// Self-selected predictions and their accuracy.
MetricReport AccuracyReport(const Model& model, const TrainingData& data,
                            const std::vector<TrainingExample>& examples, const std::string& name = "top1");

}  // namespace partlang

#endif  // PARTLANG_EVALUATION_HPP_
