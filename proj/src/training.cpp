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

#include "partlang/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "partlang/error.hpp"
#include "partlang/head.hpp"
#include "partlang/optim.hpp"

namespace partlang {

const char* StageName(Stage stage) {
  switch (stage) {
    case Stage::kPretrain1:
      return "pretrain1";
    case Stage::kPretrain2:
      return "pretrain2";
    case Stage::kFinetune:
      return "finetune";
  }
  return "?";
}

Stage ParseStage(const std::string& name) {
  if (name == "pretrain1") return Stage::kPretrain1;
  if (name == "pretrain2") return Stage::kPretrain2;
  if (name == "finetune") return Stage::kFinetune;
  throw ConfigError("unknown stage '" + name + "' (expected pretrain1, pretrain2 or finetune)");
}

std::vector<ParamGroup> TrainableGroups(Stage stage) {
  switch (stage) {
    case Stage::kPretrain1:
      return {ParamGroup::kImageEncoder, ParamGroup::kPartMlp};
    case Stage::kPretrain2:
      return {ParamGroup::kProjection, ParamGroup::kBoxMlp};
    case Stage::kFinetune:
      return {kAllParamGroups.begin(), kAllParamGroups.end()};
  }
  return {};
}

// --- Config -------------------------------------------------------------------

void TrainConfig::Validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size <= 0) fail("batch_size must be > 0");
  if (val_batch_size <= 0) fail("val_batch_size must be > 0");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (early_stop_patience <= 0) fail("early_stop_patience must be > 0");
  if (in_batch_classes < 0 || val_in_batch_classes < 0) fail("in-batch class counts must be >= 0");
  if (stage == Stage::kFinetune && (in_batch_classes > 0 || val_in_batch_classes > 0)) {
    fail("in_batch_classes applies to the contrastive pre-training stages only");
  }
  if (in_batch_classes == 1) fail("in_batch_classes must be 0 or >= 2");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must lie in (0, 1)");
  if (plateau_patience < 0) fail("plateau_patience must be >= 0");
  if (classification_weight < 0 || selection_weight < 0 || box_weight < 0 || box_terms.l1 < 0 ||
      box_terms.giou < 0) {
    fail("loss weights must be >= 0");
  }
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (!(val_fraction >= 0 && val_fraction < 1)) fail("val_fraction must lie in [0, 1)");
}

namespace {

template <typename T>
T ReadScalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("train config: bad value for '" + key + "'");
  }
}

}  // namespace

TrainConfig ParseTrainConfig(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  if (root.IsNull()) {
    c.Validate();
    return c;
  }
  if (!root.IsMap()) throw ConfigError("train config: expected a key/value mapping");
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (key == "stage") c.stage = ParseStage(ReadScalar<std::string>(v, key));
    else if (key == "epochs") c.epochs = ReadScalar<int>(v, key);
    else if (key == "batch_size") c.batch_size = ReadScalar<int>(v, key);
    else if (key == "val_batch_size") c.val_batch_size = ReadScalar<int>(v, key);
    else if (key == "learning_rate") c.learning_rate = ReadScalar<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = ReadScalar<double>(v, key);
    else if (key == "early_stop_patience") c.early_stop_patience = ReadScalar<int>(v, key);
    else if (key == "in_batch_classes") c.in_batch_classes = ReadScalar<int>(v, key);
    else if (key == "val_in_batch_classes") c.val_in_batch_classes = ReadScalar<int>(v, key);
    else if (key == "seed") c.seed = ReadScalar<std::uint64_t>(v, key);
    else if (key == "beta1") c.beta1 = ReadScalar<double>(v, key);
    else if (key == "beta2") c.beta2 = ReadScalar<double>(v, key);
    else if (key == "adam_eps") c.adam_eps = ReadScalar<double>(v, key);
    else if (key == "plateau_factor") c.plateau_factor = ReadScalar<double>(v, key);
    else if (key == "plateau_patience") c.plateau_patience = ReadScalar<int>(v, key);
    else if (key == "classification_weight") c.classification_weight = ReadScalar<double>(v, key);
    else if (key == "selection_weight") c.selection_weight = ReadScalar<double>(v, key);
    else if (key == "box_weight") c.box_weight = ReadScalar<double>(v, key);
    else if (key == "box_l1_weight") c.box_terms.l1 = ReadScalar<double>(v, key);
    else if (key == "box_giou_weight") c.box_terms.giou = ReadScalar<double>(v, key);
    else if (key == "max_steps") c.max_steps = ReadScalar<int>(v, key);
    else if (key == "val_fraction") c.val_fraction = ReadScalar<double>(v, key);
    else throw ConfigError("train config: unknown key '" + key + "'");
  }
  c.Validate();
  return c;
}

TrainConfig LoadTrainConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseTrainConfig(ss.str());
}

std::string SerializeTrainConfig(const TrainConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "stage" << YAML::Value << StageName(c.stage);
  out << YAML::Key << "epochs" << YAML::Value << c.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  out << YAML::Key << "val_batch_size" << YAML::Value << c.val_batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << c.learning_rate;
  out << YAML::Key << "weight_decay" << YAML::Value << c.weight_decay;
  out << YAML::Key << "early_stop_patience" << YAML::Value << c.early_stop_patience;
  out << YAML::Key << "in_batch_classes" << YAML::Value << c.in_batch_classes;
  out << YAML::Key << "val_in_batch_classes" << YAML::Value << c.val_in_batch_classes;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "beta1" << YAML::Value << c.beta1;
  out << YAML::Key << "beta2" << YAML::Value << c.beta2;
  out << YAML::Key << "adam_eps" << YAML::Value << c.adam_eps;
  out << YAML::Key << "plateau_factor" << YAML::Value << c.plateau_factor;
  out << YAML::Key << "plateau_patience" << YAML::Value << c.plateau_patience;
  out << YAML::Key << "classification_weight" << YAML::Value << c.classification_weight;
  out << YAML::Key << "selection_weight" << YAML::Value << c.selection_weight;
  out << YAML::Key << "box_weight" << YAML::Value << c.box_weight;
  out << YAML::Key << "box_l1_weight" << YAML::Value << c.box_terms.l1;
  out << YAML::Key << "box_giou_weight" << YAML::Value << c.box_terms.giou;
  out << YAML::Key << "max_steps" << YAML::Value << c.max_steps;
  out << YAML::Key << "val_fraction" << YAML::Value << c.val_fraction;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// --- Data ---------------------------------------------------------------------

TrainingData TrainingData::Build(std::shared_ptr<const DescriptorLibrary> library, const TextEncoder& text_encoder,
                                 DescriptorTemplate tmpl, std::vector<TrainingExample> train,
                                 std::vector<TrainingExample> val) {
  if (!library || library->num_classes() == 0) throw ValidationError("training data needs a non-empty library");
  TrainingData d;
  d.part_name_embeddings = EncodePartNames(text_encoder, library->vocabulary());
  d.descriptor_embeddings = text_encoder.Encode(DescriptorTexts(*library, tmpl));
  d.library = std::move(library);
  d.train = std::move(train);
  d.val = std::move(val);
  return d;
}

// --- Logging ------------------------------------------------------------------

LossComponents& LossComponents::operator+=(const LossComponents& o) {
  total += o.total;
  sce += o.sce;
  ce += o.ce;
  selection += o.selection;
  box += o.box;
  return *this;
}

LossComponents LossComponents::Scaled(double s) const {
  return {total * s, sce * s, ce * s, selection * s, box * s};
}

void WriteTrainLogHeader(std::ostream& out) {
  out << "epoch,step,loss,sce,ce,selection,box,lr,val_loss,val_metric\n";
}

void WriteTrainLogRow(std::ostream& out, const TrainLogRow& r) {
  std::ostringstream line;
  line.precision(10);
  line << r.epoch << ',' << r.step << ',' << r.loss.total << ',' << r.loss.sce << ',' << r.loss.ce << ','
       << r.loss.selection << ',' << r.loss.box << ',' << r.learning_rate << ',';
  if (r.val_loss) line << *r.val_loss;
  line << ',';
  if (r.val_metric) line << *r.val_metric;
  out << line.str() << '\n';
}

// --- Batching -----------------------------------------------------------------

BatchSampler::BatchSampler(const std::vector<TrainingExample>& examples, std::size_t num_classes,
                           const TrainConfig& config)
    : examples_(examples), by_class_(num_classes), config_(config) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int label = examples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw ValidationError("example '" + examples[i].id + "' has label " + std::to_string(label) +
                            " outside the library's " + std::to_string(num_classes) + " classes");
    }
    by_class_[label].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!by_class_[c].empty()) present_classes_.push_back(static_cast<int>(c));
  }
  order_.resize(examples.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();
}

std::size_t BatchSampler::batches_per_epoch() const {
  const std::size_t b = static_cast<std::size_t>(config_.batch_size);
  return std::max<std::size_t>(1, (examples_.size() + b - 1) / b);
}

BatchPlan BatchSampler::Next(std::mt19937_64& rng) {
  BatchPlan plan;
  if (examples_.empty()) return plan;
  const std::size_t batch = static_cast<std::size_t>(config_.batch_size);
  const bool sample_classes = config_.stage != Stage::kFinetune && config_.in_batch_classes > 0 &&
                              static_cast<std::size_t>(config_.in_batch_classes) < by_class_.size();
  if (sample_classes) {
    // The label classes come from present classes; the remaining slots are
    // filled with other library classes, which then act as negatives only.
    std::vector<int> pool = present_classes_;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t k = static_cast<std::size_t>(config_.in_batch_classes);
    const std::size_t with_examples = std::min(k, pool.size());
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < with_examples; ++i) {
      plan.classes.push_back(pool[i]);
      candidates.insert(candidates.end(), by_class_[pool[i]].begin(), by_class_[pool[i]].end());
    }
    if (plan.classes.size() < k) {
      std::vector<int> rest;
      for (std::size_t c = 0; c < by_class_.size(); ++c) {
        if (by_class_[c].empty()) rest.push_back(static_cast<int>(c));
      }
      std::shuffle(rest.begin(), rest.end(), rng);
      for (std::size_t i = 0; plan.classes.size() < k && i < rest.size(); ++i) plan.classes.push_back(rest[i]);
    }
    std::sort(plan.classes.begin(), plan.classes.end());
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min(batch, candidates.size()));
    plan.examples = std::move(candidates);
    return plan;
  }
  if (cursor_ >= order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch);
  plan.examples.assign(order_.begin() + static_cast<long>(cursor_), order_.begin() + static_cast<long>(end));
  cursor_ = end;
  return plan;
}

// --- Objectives ---------------------------------------------------------------

namespace {

const TeacherAnnotation& RequireTeacher(const TrainingExample& ex, Stage stage) {
  if (!ex.teacher) {
    throw ConfigError(std::string(StageName(stage)) + " needs teacher annotations; example '" + ex.id +
                      "' has none");
  }
  return *ex.teacher;
}

void RequireLabel(const TrainingExample& ex, std::size_t num_classes) {
  if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) {
    throw ValidationError("example '" + ex.id + "' has label " + std::to_string(ex.label) +
                          " outside the library's " + std::to_string(num_classes) + " classes");
  }
}

std::vector<BoundingBox> RawBoxes(const Matrix& boxes) {
  std::vector<BoundingBox> out;
  out.reserve(boxes.rows());
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) out.push_back({boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)});
  return out;
}

// Teacher selection SCE over the n x P selection logits plus the box loss.
LossComponents TeacherTerms(const TrainConfig& config, const TeacherAnnotation& teacher, const HeadForward& f,
                            Matrix* d_sel, Matrix* d_boxes) {
  LossComponents lc;
  if (config.selection_weight > 0) {
    const Matrix target = SelectionOneHot(teacher.selection, f.selection_logits.rows());
    Matrix g;
    lc.selection = SceLoss(f.selection_logits, LabelAssignment::FromMatches(target), d_sel ? &g : nullptr);
    if (d_sel) *d_sel = g * config.selection_weight;
  }
  if (config.box_weight > 0) {
    const std::vector<BoundingBox> pred = RawBoxes(f.boxes);
    Matrix g;
    lc.box = BoxLoss(pred, teacher.boxes, d_boxes ? &g : nullptr, config.box_terms).total;
    if (d_boxes) *d_boxes = g * config.box_weight;
  }
  lc.total = config.selection_weight * lc.selection + config.box_weight * lc.box;
  return lc;
}

}  // namespace

LossComponents ExampleLoss(const Model& model, Stage stage, const TrainConfig& config, const TrainingData& data,
                           const TrainingExample& example, const std::vector<int>& batch_classes,
                           ModelParams* grads) {
  const DescriptorLibrary& lib = *data.library;
  const std::size_t parts = lib.num_parts();
  const std::size_t num_patches = static_cast<std::size_t>(example.raw_patches.rows());
  RequireLabel(example, lib.num_classes());
  if (example.teacher) example.teacher->Validate(parts, num_patches);

  HeadInputs in;
  in.raw_patches = &example.raw_patches;
  in.part_name_embeddings = &data.part_name_embeddings;
  LossComponents lc;

  if (stage == Stage::kPretrain1) {
    const TeacherAnnotation& teacher = RequireTeacher(example, stage);
    std::vector<int> classes = batch_classes;
    if (classes.empty()) {
      classes.resize(lib.num_classes());
      std::iota(classes.begin(), classes.end(), 0);
    }
    const auto pos = std::find(classes.begin(), classes.end(), example.label);
    if (pos == classes.end()) {
      throw ValidationError("example '" + example.id + "' label is not among the batch classes");
    }
    const Eigen::Index label_slot = pos - classes.begin();
    Matrix descriptors(static_cast<Eigen::Index>(classes.size() * parts), data.descriptor_embeddings.cols());
    for (std::size_t k = 0; k < classes.size(); ++k) {
      descriptors.middleRows(static_cast<Eigen::Index>(k * parts), static_cast<Eigen::Index>(parts)) =
          data.descriptor_embeddings.middleRows(static_cast<Eigen::Index>(classes[k] * parts),
                                                static_cast<Eigen::Index>(parts));
    }
    in.descriptor_embeddings = &descriptors;
    in.forced_selection = teacher.selection;
    in.need_selection_logits = false;
    in.need_boxes = false;
    const HeadForward f = RunHead(model, in);
    // Part j's visual embedding matches class label's part-j descriptor;
    // every other descriptor column in the batch is a negative.
    Matrix matches = Matrix::Zero(f.scores.rows(), f.scores.cols());
    for (std::size_t j = 0; j < parts; ++j) matches(j, label_slot * parts + j) = 1.0;
    Matrix d_scores;
    lc.sce = SceLoss(f.scores, LabelAssignment::FromMatches(matches), grads ? &d_scores : nullptr);
    lc.total = lc.sce;
    if (grads) {
      HeadUpstream up;
      up.d_scores = &d_scores;
      BackwardHead(model, in, f, up, *grads);
    }
    return lc;
  }

  if (stage == Stage::kPretrain2) {
    const TeacherAnnotation& teacher = RequireTeacher(example, stage);
    // Boxes are regressed from the teacher-selected embeddings; the
    // selection itself is learned through the selection logits.
    in.forced_selection = teacher.selection;
    in.need_scores = false;
    in.need_selection_logits = true;
    const HeadForward f = RunHead(model, in);
    Matrix d_sel, d_boxes;
    lc = TeacherTerms(config, teacher, f, grads ? &d_sel : nullptr, grads ? &d_boxes : nullptr);
    if (grads) {
      HeadUpstream up;
      if (d_sel.size()) up.d_selection_logits = &d_sel;
      if (d_boxes.size()) up.d_boxes = &d_boxes;
      BackwardHead(model, in, f, up, *grads);
    }
    return lc;
  }

  // Finetune: online self-selection, CE on the diagonal-sum logits, plus the
  // teacher terms when the example carries an annotation.
  in.descriptor_embeddings = &data.descriptor_embeddings;
  in.need_selection_logits = example.teacher.has_value();
  in.need_boxes = example.teacher.has_value();
  const HeadForward f = RunHead(model, in);
  const ClassLogits logits = Classify(f.scores);
  Vector g_ce;
  lc.ce = CeLoss(logits.logits, example.label, grads ? &g_ce : nullptr);
  lc.total = config.classification_weight * lc.ce;
  Matrix d_sel, d_boxes;
  if (example.teacher) {
    const LossComponents t = TeacherTerms(config, *example.teacher, f, grads ? &d_sel : nullptr,
                                          grads ? &d_boxes : nullptr);
    lc.selection = t.selection;
    lc.box = t.box;
    lc.total += t.total;
  }
  if (grads) {
    Matrix d_scores = Matrix::Zero(f.scores.rows(), f.scores.cols());
    for (std::size_t c = 0; c < lib.num_classes(); ++c) {
      for (std::size_t j = 0; j < parts; ++j) {
        d_scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c * parts + j)) =
            config.classification_weight * g_ce[static_cast<Eigen::Index>(c)];
      }
    }
    HeadUpstream up;
    up.d_scores = &d_scores;
    if (d_sel.size()) up.d_selection_logits = &d_sel;
    if (d_boxes.size()) up.d_boxes = &d_boxes;
    BackwardHead(model, in, f, up, *grads);
  }
  return lc;
}

// --- Evaluation helpers ---------------------------------------------------------

std::vector<int> PredictLabels(const Model& model, const TrainingData& data,
                               const std::vector<TrainingExample>& examples, bool teacher_forced) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const TrainingExample& ex : examples) {
    HeadInputs in;
    in.raw_patches = &ex.raw_patches;
    in.part_name_embeddings = &data.part_name_embeddings;
    in.descriptor_embeddings = &data.descriptor_embeddings;
    in.need_selection_logits = false;
    in.need_boxes = false;
    if (teacher_forced) in.forced_selection = RequireTeacher(ex, Stage::kPretrain1).selection;
    out.push_back(Classify(RunHead(model, in).scores).prediction);
  }
  return out;
}

double SelectionAgreement(const Model& model, const TrainingData& data,
                          const std::vector<TrainingExample>& examples) {
  std::size_t agree = 0, total = 0;
  for (const TrainingExample& ex : examples) {
    if (!ex.teacher) continue;
    const Matrix projected = ProjectPatches(EncodePatches(ex.raw_patches, model.params().encoder),
                                            model.params().projection);
    const PartSelection sel = SelectParts(projected, data.part_name_embeddings, model.config().similarity);
    for (std::size_t j = 0; j < sel.indices.size(); ++j) {
      agree += sel.indices[j] == ex.teacher->selection.indices[j];
      ++total;
    }
  }
  if (total == 0) throw ValidationError("selection agreement needs teacher annotations");
  return static_cast<double>(agree) / static_cast<double>(total);
}

double TeacherBoxMeanIou(const Model& model, const TrainingData& data,
                         const std::vector<TrainingExample>& examples) {
  double sum = 0;
  std::size_t total = 0;
  for (const TrainingExample& ex : examples) {
    if (!ex.teacher) continue;
    HeadInputs in;
    in.raw_patches = &ex.raw_patches;
    in.part_name_embeddings = &data.part_name_embeddings;
    in.need_selection_logits = false;
    in.need_scores = false;
    const HeadForward f = RunHead(model, in);
    const std::vector<BoundingBox> boxes = BoxesFromMatrix(f.boxes);
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      sum += Giou(boxes[j], ex.teacher->boxes[j]).iou;
      ++total;
    }
  }
  if (total == 0) throw ValidationError("box IoU needs teacher annotations");
  return sum / static_cast<double>(total);
}

std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> SplitValidation(
    std::vector<TrainingExample> examples, double fraction, std::uint64_t seed) {
  std::vector<TrainingExample> train, val;
  const std::size_t n = examples.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[idx[i]] = true;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).push_back(std::move(examples[i]));
  return {std::move(train), std::move(val)};
}

// --- Training loop --------------------------------------------------------------

namespace {

double Top1(const std::vector<int>& pred, const std::vector<TrainingExample>& examples) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == examples[i].label;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Fixed per-example class subsets so validation loss is comparable across
// epochs.
std::vector<std::vector<int>> ValidationClasses(const std::vector<TrainingExample>& val, std::size_t num_classes,
                                                const TrainConfig& config) {
  std::vector<std::vector<int>> out(val.size());
  const std::size_t k = static_cast<std::size_t>(config.val_in_batch_classes);
  if (config.stage != Stage::kPretrain1 || k == 0 || k >= num_classes) return out;
  std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
  for (std::size_t i = 0; i < val.size(); ++i) {
    std::vector<int> others;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (static_cast<int>(c) != val[i].label) others.push_back(static_cast<int>(c));
    }
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(k - 1);
    others.push_back(val[i].label);
    std::sort(others.begin(), others.end());
    out[i] = std::move(others);
  }
  return out;
}

double ValidationMetric(const Model& model, Stage stage, const TrainingData& data,
                        const std::vector<TrainingExample>& val) {
  switch (stage) {
    case Stage::kPretrain1:
      return Top1(PredictLabels(model, data, val, true), val);
    case Stage::kPretrain2:
      return SelectionAgreement(model, data, val);
    case Stage::kFinetune:
      return Top1(PredictLabels(model, data, val, false), val);
  }
  return 0;
}

std::string RngState(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

}  // namespace

TrainResult RunStage(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                     std::ostream* csv_log) {
  config.Validate();
  if (!data.library) throw ValidationError("training data has no library");
  const Model& start_model = start.model;
  start_model.ValidateShapes();
  if (!(data.library->vocabulary() == start_model.config().vocabulary)) {
    throw ValidationError("library vocabulary does not match the model vocabulary");
  }
  if (!start.frozen_groups.count(kTextEncoderGroup)) {
    throw ValidationError("checkpoint must keep the text encoder frozen");
  }
  const std::size_t num_classes = data.library->num_classes();
  for (const auto* set : {&data.train, &data.val}) {
    for (const TrainingExample& ex : *set) {
      RequireLabel(ex, num_classes);
      if (config.stage != Stage::kFinetune) RequireTeacher(ex, config.stage);
    }
  }

  TrainResult result;
  result.checkpoint = start;
  if (config.epochs == 0 || data.train.empty()) return result;

  std::vector<TrainingExample> train = data.train;
  std::vector<TrainingExample> val = data.val;
  if (config.stage == Stage::kFinetune && val.empty() && config.val_fraction > 0) {
    std::tie(train, val) = SplitValidation(std::move(train), config.val_fraction, config.seed);
  }

  std::mt19937_64 rng(config.seed);
  Model model = start_model;
  AdamWOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.beta1 = config.beta1;
  opts.beta2 = config.beta2;
  opts.eps = config.adam_eps;
  opts.weight_decay = config.weight_decay;
  AdamW optimizer(model.params(), TrainableGroups(config.stage), opts);
  PlateauScheduler scheduler(config.plateau_factor, config.plateau_patience);
  BatchSampler sampler(train, num_classes, config);
  const std::vector<std::vector<int>> val_classes = ValidationClasses(val, num_classes, config);

  ModelParams best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  double best_metric = start.best_val_metric;
  int bad_epochs = 0;
  long steps = 0;
  if (csv_log) WriteTrainLogHeader(*csv_log);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    bool capped = false;
    LossComponents epoch_loss;
    std::size_t epoch_batches = 0;
    for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
      if (config.max_steps > 0 && steps >= config.max_steps) {
        capped = true;
        break;
      }
      const BatchPlan plan = sampler.Next(rng);
      if (plan.examples.empty()) continue;
      ModelParams grads = model.params().ZerosLike();
      LossComponents batch_loss;
      for (std::size_t idx : plan.examples) {
        batch_loss += ExampleLoss(model, config.stage, config, data, train[idx], plan.classes, &grads);
      }
      const double inv = 1.0 / static_cast<double>(plan.examples.size());
      for (TensorRef t : Tensors(grads)) *t.value *= inv;
      batch_loss = batch_loss.Scaled(inv);
      if (!std::isfinite(batch_loss.total)) {
        throw NumericError("non-finite training loss at step " + std::to_string(steps + 1));
      }
      optimizer.Step(model.mutable_params(), grads);
      ++steps;
      epoch_loss += batch_loss;
      ++epoch_batches;
      TrainLogRow row{epoch, start.steps + steps, batch_loss, optimizer.learning_rate(), std::nullopt, std::nullopt};
      result.log.push_back(row);
      if (csv_log) WriteTrainLogRow(*csv_log, row);
    }
    result.epochs_run = epoch;

    if (val.empty()) {
      best = model.params();
    } else {
      LossComponents vl;
      for (std::size_t i = 0; i < val.size(); ++i) {
        vl += ExampleLoss(model, config.stage, config, data, val[i], val_classes[i], nullptr);
      }
      const double val_loss = vl.total / static_cast<double>(val.size());
      const double metric = ValidationMetric(model, config.stage, data, val);
      TrainLogRow row{epoch, start.steps + steps,
                      epoch_batches ? epoch_loss.Scaled(1.0 / double(epoch_batches)) : LossComponents{},
                      optimizer.learning_rate(), val_loss, metric};
      result.log.push_back(row);
      if (csv_log) WriteTrainLogRow(*csv_log, row);
      optimizer.set_learning_rate(scheduler.Step(val_loss, optimizer.learning_rate()));
      if (val_loss < best_loss) {
        best_loss = val_loss;
        best_metric = metric;
        best = model.params();
        bad_epochs = 0;
      } else if (++bad_epochs >= config.early_stop_patience) {
        result.early_stopped = true;
        break;
      }
    }
    if (capped) break;
  }

  result.steps = steps;
  Checkpoint& out = result.checkpoint;
  out.model = Model(model.config(), std::move(best));
  out.best_val_metric = best_metric;
  out.rng_state = RngState(rng);
  out.stages_completed.push_back(StageName(config.stage));
  out.steps = start.steps + steps;
  return result;
}

namespace {

TrainResult RunChecked(Stage expected, const TrainingData& data, const TrainConfig& config,
                       const Checkpoint& start, std::ostream* csv_log) {
  if (config.stage != expected) {
    throw ConfigError(std::string("config stage is ") + StageName(config.stage) + ", expected " +
                      StageName(expected));
  }
  return RunStage(data, config, start, csv_log);
}

}  // namespace

TrainResult PretrainStage1(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                           std::ostream* csv_log) {
  return RunChecked(Stage::kPretrain1, data, config, start, csv_log);
}

TrainResult PretrainStage2(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                           std::ostream* csv_log) {
  return RunChecked(Stage::kPretrain2, data, config, start, csv_log);
}

TrainResult Finetune(const TrainingData& data, const TrainConfig& config, const Checkpoint& start,
                     std::ostream* csv_log) {
  return RunChecked(Stage::kFinetune, data, config, start, csv_log);
}

// --- Gradient checking ------------------------------------------------------------

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

bool GradCheckReport::has_group(const std::string& name) const {
  return std::any_of(groups.begin(), groups.end(), [&](const GradCheckGroup& g) { return g.group == name; });
}

bool GradCheckReport::all_finite() const {
  return std::all_of(groups.begin(), groups.end(), [](const GradCheckGroup& g) { return g.non_finite == 0; });
}

GradCheckReport GradCheck(const std::vector<GradTensor>& tensors, const LossWithGrad& loss, double eps,
                          std::size_t max_entries_per_tensor) {
  if (!(eps > 0)) throw ValidationError("grad check step must be > 0");
  std::vector<Matrix> analytic;
  loss(&analytic);
  if (analytic.size() != tensors.size()) throw ShapeError("grad check: gradient count != tensor count");

  GradCheckReport report;
  auto group_for = [&](const std::string& name) -> GradCheckGroup& {
    for (auto& g : report.groups) {
      if (g.group == name) return g;
    }
    report.groups.push_back({name});
    return report.groups.back();
  };
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Matrix& x = *tensors[k].value;
    if (analytic[k].rows() != x.rows() || analytic[k].cols() != x.cols()) {
      throw ShapeError("grad check: gradient shape mismatch for " + tensors[k].name);
    }
    GradCheckGroup& g = group_for(tensors[k].group);
    const Eigen::Index size = x.size();
    Eigen::Index stride = 1;
    if (max_entries_per_tensor > 0 && static_cast<std::size_t>(size) > max_entries_per_tensor) {
      stride = (size + static_cast<Eigen::Index>(max_entries_per_tensor) - 1) /
               static_cast<Eigen::Index>(max_entries_per_tensor);
    }
    for (Eigen::Index i = 0; i < size; i += stride) {
      const double orig = x.data()[i];
      x.data()[i] = orig + eps;
      const double up = loss(nullptr);
      x.data()[i] = orig - eps;
      const double down = loss(nullptr);
      x.data()[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[k].data()[i];
      ++g.checked;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ++g.non_finite;
        continue;
      }
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
      g.max_abs_error = std::max(g.max_abs_error, abs_err);
      g.max_rel_error = std::max(g.max_rel_error, rel);
    }
  }
  return report;
}

GradCheckReport GradCheckModel(Model& model, Stage stage, const TrainConfig& config, const TrainingData& data,
                               const std::vector<TrainingExample>& examples, double eps,
                               std::size_t max_entries_per_tensor) {
  if (examples.empty()) throw ValidationError("grad check needs at least one example");
  const std::vector<ParamGroup> groups = TrainableGroups(stage);
  std::vector<GradTensor> tensors;
  std::vector<std::size_t> positions;
  const auto refs = Tensors(model.mutable_params());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (std::find(groups.begin(), groups.end(), refs[i].group) == groups.end()) continue;
    tensors.push_back({ParamGroupName(refs[i].group), refs[i].name, refs[i].value});
    positions.push_back(i);
  }
  const double inv = 1.0 / static_cast<double>(examples.size());
  LossWithGrad loss = [&](std::vector<Matrix>* grads) {
    ModelParams g = model.params().ZerosLike();
    double total = 0;
    for (const TrainingExample& ex : examples) {
      total += ExampleLoss(model, stage, config, data, ex, {}, grads ? &g : nullptr).total;
    }
    if (grads) {
      grads->clear();
      const auto grefs = Tensors(g);
      for (std::size_t p : positions) grads->push_back(*grefs[p].value * inv);
    }
    return total * inv;
  };
  return GradCheck(tensors, loss, eps, max_entries_per_tensor);
}

}  // namespace partlang
