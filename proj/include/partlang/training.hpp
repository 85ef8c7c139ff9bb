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

#ifndef PARTLANG_TRAINING_HPP_
#define PARTLANG_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/losses.hpp"
#include "partlang/model.hpp"

namespace partlang {

enum class Stage { kPretrain1, kPretrain2, kFinetune };

const char* StageName(Stage stage);
Stage ParseStage(const std::string& name);
// Parameter groups a stage is allowed to modify.
std::vector<ParamGroup> TrainableGroups(Stage stage);

struct TrainConfig {
  Stage stage = Stage::kPretrain1;
  int epochs = 1;
  int batch_size = 32;
  int val_batch_size = 50;
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  int early_stop_patience = 5;
  int in_batch_classes = 0;      // 0 = every class; pre-training stages only
  int val_in_batch_classes = 0;  // 0 = every class
  std::uint64_t seed = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double plateau_factor = 0.1;
  int plateau_patience = 2;

  double classification_weight = 1.0;  // CE, finetune only
  double selection_weight = 1.0;       // SCE against binarized teacher
  double box_weight = 1.0;             // box loss
  BoxLossWeights box_terms;            // l1 / GIoU weights inside the box loss

  int max_steps = 0;          // 0 = no cap
  double val_fraction = 0.1;  // carved from train when no val set is given

  // Throws ConfigError on non-positive fields or stage-invalid options.
  void Validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Key/value config text (YAML mapping).
TrainConfig ParseTrainConfig(const std::string& text);
TrainConfig LoadTrainConfig(const std::filesystem::path& path);
std::string SerializeTrainConfig(const TrainConfig& config);

struct TrainingExample {
  std::string id;
  Matrix raw_patches;  // frozen backbone features, n x d_i
  int label = -1;      // index into the library
  std::optional<TeacherAnnotation> teacher;
};

struct TrainingData {
  std::shared_ptr<const DescriptorLibrary> library;
  Matrix part_name_embeddings;   // P x d_t
  Matrix descriptor_embeddings;  // (P * N) x d_t, class-major
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> val;

  // Encodes part names and descriptors with the (frozen) text encoder.
  static TrainingData Build(std::shared_ptr<const DescriptorLibrary> library, const TextEncoder& text_encoder,
                            DescriptorTemplate tmpl, std::vector<TrainingExample> train,
                            std::vector<TrainingExample> val);
};

struct Checkpoint {
  Model model;
  // Always contains "text_encoder".
  std::set<std::string> frozen_groups{kTextEncoderGroup};
  std::string text_encoder_id;
  std::uint64_t text_encoder_digest = 0;
  std::string rng_state;
  double best_val_metric = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> stages_completed;
  long steps = 0;

  static Checkpoint Fresh(const ModelConfig& config, const TextEncoder& text_encoder);
};

// Binary container: "peeb-ckpt-1\n", u64 header length, JSON header
// (config, tensor directory, metadata), then little-endian float64 tensors.
std::string EncodeCheckpoint(const Checkpoint& checkpoint);
Checkpoint DecodeCheckpoint(const std::string& bytes);
void SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

struct LossComponents {
  double total = 0;
  double sce = 0;        // stage-1 descriptor SCE
  double ce = 0;         // finetune classification
  double selection = 0;  // SCE against binarized teacher selection
  double box = 0;

  LossComponents& operator+=(const LossComponents& o);
  LossComponents Scaled(double s) const;
};

struct TrainLogRow {
  int epoch = 0;
  long step = 0;
  LossComponents loss;
  double learning_rate = 0;
  std::optional<double> val_loss;
  std::optional<double> val_metric;
};

void WriteTrainLogHeader(std::ostream& out);
void WriteTrainLogRow(std::ostream& out, const TrainLogRow& row);

struct TrainResult {
  Checkpoint checkpoint;  // best-validation parameters
  std::vector<TrainLogRow> log;
  long steps = 0;
  int epochs_run = 0;
  bool early_stopped = false;
};

// Classes drawn into one contrastive batch, and the example indices.
struct BatchPlan {
  std::vector<int> classes;
  std::vector<std::size_t> examples;
};

// Pre-training stages draw `in_batch_classes` distinct classes and then
// examples from those classes; finetuning uses plain shuffled batches.
class BatchSampler {
 public:
  BatchSampler(const std::vector<TrainingExample>& examples, std::size_t num_classes, const TrainConfig& config);
  BatchPlan Next(std::mt19937_64& rng);
  std::size_t batches_per_epoch() const;

 private:
  const std::vector<TrainingExample>& examples_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<int> present_classes_;
  TrainConfig config_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Loss for one example under a stage's objective; accumulates gradients
// into `grads` when non-null. `batch_classes` restricts stage-1 descriptor
// columns; empty means all classes.
LossComponents ExampleLoss(const Model& model, Stage stage, const TrainConfig& config, const TrainingData& data,
                           const TrainingExample& example, const std::vector<int>& batch_classes,
                           ModelParams* grads);

// Stage 1: image encoder + Part MLP, teacher-forced selection, SCE.
TrainResult PretrainStage1(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                           std::ostream* csv_log = nullptr);
// Stage 2: Linear Projection + Box MLP against teacher selection and boxes.
TrainResult PretrainStage2(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                           std::ostream* csv_log = nullptr);
// Everything except the text encoder: CE + selection SCE + box loss.
TrainResult Finetune(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                     std::ostream* csv_log = nullptr);
TrainResult RunStage(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                     std::ostream* csv_log = nullptr);

// --- Gradient verification --------------------------------------------------

struct GradTensor {
  std::string group;
  std::string name;
  Matrix* value;
};

// Evaluates the loss at the current parameter values; when `grads` is not
// null it is resized to match the tensors and filled with the analytic
// gradient.
using LossWithGrad = std::function<double(std::vector<Matrix>* grads)>;

struct GradCheckGroup {
  std::string group;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::size_t non_finite = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error() const;
  bool has_group(const std::string& name) const;
  bool all_finite() const;
};

// Central differences: (f(x + eps) - f(x - eps)) / (2 eps). Relative error
// is |a - n| / max(|a|, |n|, 1e-6). `max_entries_per_tensor` caps the
// number of coordinates probed (evenly strided); 0 checks every entry.
GradCheckReport GradCheck(const std::vector<GradTensor>& tensors, const LossWithGrad& loss, double eps,
                          std::size_t max_entries_per_tensor = 0);

// Checks the model's stage objective on a few examples over the groups
// that stage trains.
GradCheckReport GradCheckModel(Model& model, Stage stage, const TrainConfig& config, const TrainingData& data,
                               const std::vector<TrainingExample>& examples, double eps,
                               std::size_t max_entries_per_tensor = 0);

// --- Helpers shared with evaluation ----------------------------------------

// Predicted class per example, using the model's own selection (or the
// teacher's when `teacher_forced`).
std::vector<int> PredictLabels(const Model& model, const TrainingData& data,
                               const std::vector<TrainingExample>& examples, bool teacher_forced = false);

// Fraction of parts whose self-selected patch equals the teacher's.
double SelectionAgreement(const Model& model, const TrainingData& data, const std::vector<TrainingExample>& examples);

// Mean IoU of Box MLP boxes against the teacher boxes, using self-selection.
double TeacherBoxMeanIou(const Model& model, const TrainingData& data, const std::vector<TrainingExample>& examples);

// Seeded ~fraction split of `examples` into (train, val).
std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> SplitValidation(
    std::vector<TrainingExample> examples, double fraction, std::uint64_t seed);

}  // namespace partlang

#endif  // PARTLANG_TRAINING_HPP_
