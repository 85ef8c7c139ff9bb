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

#include "partlang/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "partlang/error.hpp"
#include "partlang/losses.hpp"

namespace partlang {

namespace {

constexpr double kNormFloor = 1e-12;

void RequireCols(const Matrix& m, Eigen::Index cols, const char* what) {
  if (m.cols() != cols) {
    throw ShapeError(std::string(what) + ": got " + std::to_string(m.cols()) + " columns, expected " +
                     std::to_string(cols));
  }
}

Matrix AddBias(Matrix m, const Matrix& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix RowNormalized(const Matrix& m, Vector* norms) {
  Vector n = m.rowwise().norm().cwiseMax(kNormFloor);
  if (norms) *norms = n;
  return n.cwiseInverse().asDiagonal() * m;
}

}  // namespace

double Gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double GeluGrad(double x) {
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix EncodePatches(const Matrix& raw, const EncoderAdapterParams& encoder) {
  RequireCols(raw, encoder.weight.rows(), "encode_patches");
  return AddBias(raw + raw * encoder.weight, encoder.bias);
}

Matrix ProjectPatches(const Matrix& patches, const ProjectionParams& proj) {
  RequireCols(patches, proj.weight.rows(), "project_patches");
  Matrix out = AddBias(patches * proj.weight, proj.bias);
  RequireFinite(out, "projected patches");
  return out;
}

Matrix PartNameSimilarity(const Matrix& projected, const Matrix& part_name_embeddings, SimilarityMode mode) {
  RequireCols(part_name_embeddings, projected.cols(), "part-name embeddings");
  if (mode == SimilarityMode::kDot) return projected * part_name_embeddings.transpose();
  return RowNormalized(projected, nullptr) * RowNormalized(part_name_embeddings, nullptr).transpose();
}

Matrix SelectionLogits(const Matrix& similarity, const ProjectionParams& proj) {
  return (similarity.array() + proj.logit_shift(0, 0)) * proj.logit_scale();
}

PartSelection SelectFromSimilarity(const Matrix& similarity) {
  if (similarity.rows() == 0) throw ShapeError("select_parts: no patches");
  PartSelection sel;
  sel.indices.resize(similarity.cols());
  for (Eigen::Index j = 0; j < similarity.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < similarity.rows(); ++i) {
      if (similarity(i, j) > similarity(best, j)) best = i;
    }
    sel.indices[j] = static_cast<int>(best);
  }
  return sel;
}

PartSelection SelectParts(const Matrix& projected, const Matrix& part_name_embeddings, SimilarityMode mode) {
  return SelectFromSimilarity(PartNameSimilarity(projected, part_name_embeddings, mode));
}

Matrix GatherRows(const Matrix& patches, const PartSelection& selection) {
  Matrix out(selection.indices.size(), patches.cols());
  for (std::size_t j = 0; j < selection.indices.size(); ++j) {
    const int idx = selection.indices[j];
    if (idx < 0 || idx >= patches.rows()) throw ShapeError("selection index out of range");
    out.row(j) = patches.row(idx);
  }
  return out;
}

MlpCache MlpForwardCached(const MLPParams& mlp, const Matrix& input) {
  RequireCols(input, mlp.layers[0].weight.rows(), "mlp input");
  MlpCache c;
  c.input = input;
  Matrix x = input;
  for (int l = 0; l < 3; ++l) {
    c.pre[l] = AddBias(x * mlp.layers[l].weight, mlp.layers[l].bias);
    if (l < 2) {
      c.post[l] = c.pre[l].unaryExpr([](double v) { return Gelu(v); });
      x = c.post[l];
    }
  }
  c.output = c.pre[2];
  return c;
}

Matrix MlpForward(const MLPParams& mlp, const Matrix& input) { return MlpForwardCached(mlp, input).output; }

Matrix MlpBackward(const MLPParams& mlp, const MlpCache& cache, const Matrix& d_output, MLPParams& grads) {
  Matrix d = d_output;
  for (int l = 2; l >= 0; --l) {
    if (l < 2) d = d.cwiseProduct(cache.pre[l].unaryExpr([](double v) { return GeluGrad(v); }));
    const Matrix& in = l == 0 ? cache.input : cache.post[l - 1];
    grads.layers[l].weight.noalias() += in.transpose() * d;
    grads.layers[l].bias += d.colwise().sum();
    d = d * mlp.layers[l].weight.transpose();
  }
  return d;
}

Matrix PartScores(const Matrix& selected, const MLPParams& part_mlp, const Matrix& descriptor_embeddings) {
  const Matrix s = MlpForward(part_mlp, selected);
  RequireCols(descriptor_embeddings, s.cols(), "descriptor embeddings");
  return s * descriptor_embeddings.transpose();
}

int ArgmaxLowest(const Vector& values) {
  if (values.size() == 0) return -1;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

ClassLogits Classify(const Matrix& scores) {
  const Eigen::Index parts = scores.rows();
  if (parts == 0 || scores.cols() % parts != 0) {
    throw ShapeError("classify: " + std::to_string(scores.cols()) + " columns not divisible by " +
                     std::to_string(parts) + " parts");
  }
  const Eigen::Index classes = scores.cols() / parts;
  ClassLogits out;
  out.logits = Vector::Zero(classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    double sum = 0;
    for (Eigen::Index j = 0; j < parts; ++j) sum += scores(j, c * parts + j);
    out.logits[c] = sum;
  }
  out.prediction = ArgmaxLowest(out.logits);
  return out;
}

std::vector<BoundingBox> BoxesFromMatrix(const Matrix& boxes) {
  std::vector<BoundingBox> out;
  out.reserve(boxes.rows());
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
    out.push_back(BoundingBox{boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)}.ClampedToUnit());
  }
  return out;
}

std::vector<BoundingBox> PredictBoxes(const Matrix& selected, const MLPParams& box_mlp) {
  const Matrix raw = MlpForward(box_mlp, selected);
  return BoxesFromMatrix(raw.unaryExpr([](double v) { return Sigmoid(v); }));
}

HeadForward RunHead(const Model& model, const HeadInputs& in) {
  const ModelParams& p = model.params();
  HeadForward f;
  f.encoded = EncodePatches(*in.raw_patches, p.encoder);
  const bool need_projection = in.need_selection_logits || !in.forced_selection;
  if (need_projection) {
    f.projected = ProjectPatches(f.encoded, p.projection);
    f.similarity = PartNameSimilarity(f.projected, *in.part_name_embeddings, model.config().similarity);
    f.selection_logits = SelectionLogits(f.similarity, p.projection);
    f.has_projection = true;
  }
  f.selection = in.forced_selection ? *in.forced_selection : SelectFromSimilarity(f.similarity);
  f.selected = GatherRows(f.encoded, f.selection);
  if (in.need_scores && in.descriptor_embeddings) {
    f.part_cache = MlpForwardCached(p.part_mlp, f.selected);
    RequireCols(*in.descriptor_embeddings, f.part_cache.output.cols(), "descriptor embeddings");
    f.scores = f.part_cache.output * in.descriptor_embeddings->transpose();
    f.has_scores = true;
  }
  if (in.need_boxes) {
    f.box_cache = MlpForwardCached(p.box_mlp, f.selected);
    f.boxes = f.box_cache.output.unaryExpr([](double v) { return Sigmoid(v); });
    f.has_boxes = true;
  }
  return f;
}

void BackwardHead(const Model& model, const HeadInputs& in, const HeadForward& f,
                  const HeadUpstream& up, ModelParams& grads) {
  const ModelParams& p = model.params();
  Matrix d_encoded = Matrix::Zero(f.encoded.rows(), f.encoded.cols());
  Matrix d_selected = Matrix::Zero(f.selected.rows(), f.selected.cols());

  if (up.d_scores && f.has_scores) {
    const Matrix d_part_out = *up.d_scores * *in.descriptor_embeddings;
    d_selected += MlpBackward(p.part_mlp, f.part_cache, d_part_out, grads.part_mlp);
  }
  if (up.d_boxes && f.has_boxes) {
    const Matrix d_raw = up.d_boxes->cwiseProduct(f.boxes.cwiseProduct((1.0 - f.boxes.array()).matrix()));
    d_selected += MlpBackward(p.box_mlp, f.box_cache, d_raw, grads.box_mlp);
  }
  for (std::size_t j = 0; j < f.selection.indices.size(); ++j) {
    d_encoded.row(f.selection.indices[j]) += d_selected.row(j);
  }

  if (up.d_selection_logits && f.has_projection) {
    const Matrix& dl = *up.d_selection_logits;
    const double scale = p.projection.logit_scale();
    const double shift = p.projection.logit_shift(0, 0);
    grads.projection.logit_shift(0, 0) += dl.sum() * scale;
    const double raw = p.projection.logit_scale_raw(0, 0);
    const double elu_grad = raw > 0 ? 1.0 : std::exp(raw);
    grads.projection.logit_scale_raw(0, 0) += (dl.array() * (f.similarity.array() + shift)).sum() * elu_grad;

    const Matrix d_sim = dl * scale;
    Matrix d_projected;
    const Matrix& names = *in.part_name_embeddings;
    if (model.config().similarity == SimilarityMode::kDot) {
      d_projected = d_sim * names;
    } else {
      Vector norms;
      const Matrix unit = RowNormalized(f.projected, &norms);
      const Matrix d_unit = d_sim * RowNormalized(names, nullptr);
      d_projected.resize(unit.rows(), unit.cols());
      for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const double radial = unit.row(i).dot(d_unit.row(i));
        d_projected.row(i) = (d_unit.row(i) - radial * unit.row(i)) / norms[i];
      }
    }
    grads.projection.weight.noalias() += f.encoded.transpose() * d_projected;
    grads.projection.bias += d_projected.colwise().sum();
    d_encoded.noalias() += d_projected * p.projection.weight.transpose();
  }

  const Matrix& raw = *in.raw_patches;
  grads.encoder.weight.noalias() += raw.transpose() * d_encoded;
  grads.encoder.bias += d_encoded.colwise().sum();
}

Matrix EncodePartNames(const TextEncoder& encoder, const PartVocabulary& vocabulary) {
  return encoder.Encode(vocabulary.names());
}

Classifier::Classifier(std::shared_ptr<const Model> model, std::shared_ptr<const TextEncoder> text_encoder,
                       std::shared_ptr<const ImageEncoder> image_encoder)
    : model_(std::move(model)), text_encoder_(std::move(text_encoder)), image_encoder_(std::move(image_encoder)) {
  if (!model_ || !text_encoder_) throw ConfigError("classifier needs a model and a text encoder");
  if (text_encoder_->dim() != model_->config().text_dim) {
    throw ShapeError("text encoder dim " + std::to_string(text_encoder_->dim()) + " != model text dim " +
                     std::to_string(model_->config().text_dim));
  }
  if (image_encoder_ && image_encoder_->dim() != model_->config().image_dim) {
    throw ShapeError("image encoder dim " + std::to_string(image_encoder_->dim()) + " != model image dim " +
                     std::to_string(model_->config().image_dim));
  }
  part_name_embeddings_ = EncodePartNames(*text_encoder_, model_->config().vocabulary);
}

DescriptorBank Classifier::EncodeLibrary(std::shared_ptr<const DescriptorLibrary> library) const {
  if (!library || library->num_classes() == 0) throw ValidationError("descriptor library has no classes");
  if (!(library->vocabulary() == model_->config().vocabulary)) {
    throw ValidationError("descriptor library vocabulary does not match the model vocabulary");
  }
  DescriptorBank bank;
  bank.embeddings = text_encoder_->Encode(DescriptorTexts(*library, model_->config().descriptor_template));
  bank.library = std::move(library);
  return bank;
}

InferenceResult Classifier::Infer(const Matrix& raw_patches, const Matrix& descriptor_embeddings) const {
  const std::size_t parts = model_->config().vocabulary.size();
  if (static_cast<std::size_t>(raw_patches.rows()) < parts) {
    throw ShapeError("image has fewer patches than vocabulary parts");
  }
  RequireFinite(raw_patches, "patch embeddings");
  HeadInputs in;
  in.raw_patches = &raw_patches;
  in.part_name_embeddings = &part_name_embeddings_;
  in.descriptor_embeddings = &descriptor_embeddings;
  in.need_selection_logits = false;
  const HeadForward f = RunHead(*model_, in);
  InferenceResult r;
  r.selection = f.selection;
  r.boxes = BoxesFromMatrix(f.boxes);
  r.scores = f.scores;
  r.logits = Classify(f.scores);
  r.probabilities = Softmax(r.logits.logits);
  return r;
}

std::vector<Explanation> Classifier::Explain(const Matrix& raw_patches, const DescriptorBank& bank) const {
  const DescriptorLibrary& lib = *bank.library;
  const InferenceResult r = Infer(raw_patches, bank.embeddings);
  const std::size_t parts = lib.num_parts();
  std::vector<Explanation> out(lib.num_classes());
  for (std::size_t c = 0; c < lib.num_classes(); ++c) {
    Explanation& e = out[c];
    e.class_name = lib.class_name(c);
    e.class_index = c;
    e.total_logit = r.logits.logits[c];
    e.softmax_prob = r.probabilities[c];
    for (std::size_t j = 0; j < parts; ++j) {
      e.per_part.push_back({lib.vocabulary().name(j), lib.phrase(c, j), r.boxes[j], r.scores(j, c * parts + j)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Explanation& a, const Explanation& b) { return a.softmax_prob > b.softmax_prob; });
  return out;
}

std::vector<Explanation> Classifier::Explain(const ImageInput& image, const DescriptorBank& bank) const {
  if (!image_encoder_) throw ConfigError("classifier has no image encoder");
  return Explain(image_encoder_->Encode(image), bank);
}

std::vector<Explanation> Classifier::Explain(const ImageInput& image, const DescriptorLibrary& library) const {
  return Explain(image, EncodeLibrary(std::make_shared<const DescriptorLibrary>(library)));
}

}  // namespace partlang
