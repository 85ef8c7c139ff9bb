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

#include "partlang/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "partlang/error.hpp"

namespace partlang {

const char* SimilarityModeName(SimilarityMode mode) {
  return mode == SimilarityMode::kCosine ? "cosine" : "dot";
}

SimilarityMode ParseSimilarityMode(const std::string& name) {
  if (name == "cosine") return SimilarityMode::kCosine;
  if (name == "dot") return SimilarityMode::kDot;
  throw ConfigError("unknown similarity mode: " + name);
}

const char* ParamGroupName(ParamGroup group) {
  switch (group) {
    case ParamGroup::kImageEncoder: return "image_encoder";
    case ParamGroup::kProjection: return "projection";
    case ParamGroup::kPartMlp: return "part_mlp";
    case ParamGroup::kBoxMlp: return "box_mlp";
  }
  return "?";
}

ParamGroup ParseParamGroup(const std::string& name) {
  for (ParamGroup g : kAllParamGroups) {
    if (name == ParamGroupName(g)) return g;
  }
  throw ConfigError("unknown parameter group: " + name);
}

double ProjectionParams::logit_scale() const {
  const double raw = logit_scale_raw(0, 0);
  return (raw > 0 ? raw : std::expm1(raw)) + 1.0;
}

ModelParams ModelParams::ZerosLike() const {
  ModelParams out = *this;
  for (TensorRef t : Tensors(out)) t.value->setZero();
  return out;
}

bool ModelParams::operator==(const ModelParams& other) const {
  auto a = Tensors(*this);
  auto b = Tensors(other);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Matrix& x = *a[i].value;
    const Matrix& y = *b[i].value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (x.size() > 0 && std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0) return false;
  }
  return true;
}

namespace {

template <typename Params, typename Ref>
std::vector<Ref> CollectTensors(Params& p) {
  std::vector<Ref> out;
  out.push_back({ParamGroup::kImageEncoder, "image_encoder.weight", &p.encoder.weight});
  out.push_back({ParamGroup::kImageEncoder, "image_encoder.bias", &p.encoder.bias});
  out.push_back({ParamGroup::kProjection, "projection.weight", &p.projection.weight});
  out.push_back({ParamGroup::kProjection, "projection.bias", &p.projection.bias});
  out.push_back({ParamGroup::kProjection, "projection.logit_scale", &p.projection.logit_scale_raw});
  out.push_back({ParamGroup::kProjection, "projection.logit_shift", &p.projection.logit_shift});
  for (int l = 0; l < 3; ++l) {
    const std::string prefix = "part_mlp.layers." + std::to_string(l);
    out.push_back({ParamGroup::kPartMlp, prefix + ".weight", &p.part_mlp.layers[l].weight});
    out.push_back({ParamGroup::kPartMlp, prefix + ".bias", &p.part_mlp.layers[l].bias});
  }
  for (int l = 0; l < 3; ++l) {
    const std::string prefix = "box_mlp.layers." + std::to_string(l);
    out.push_back({ParamGroup::kBoxMlp, prefix + ".weight", &p.box_mlp.layers[l].weight});
    out.push_back({ParamGroup::kBoxMlp, prefix + ".bias", &p.box_mlp.layers[l].bias});
  }
  return out;
}

Matrix Gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

MLPParams InitMlp(std::size_t in, std::size_t hidden, std::size_t out, double last_gain,
                  std::mt19937_64& rng) {
  MLPParams mlp;
  const std::size_t dims[4] = {in, hidden, hidden, out};
  for (int l = 0; l < 3; ++l) {
    const double gain = l == 2 ? last_gain : 1.0;
    mlp.layers[l].weight = Gaussian(dims[l], dims[l + 1], gain / std::sqrt(double(dims[l])), rng);
    mlp.layers[l].bias = Matrix::Zero(1, dims[l + 1]);
  }
  return mlp;
}

void CheckShape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(name + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

std::vector<TensorRef> Tensors(ModelParams& params) {
  return CollectTensors<ModelParams, TensorRef>(params);
}

std::vector<ConstTensorRef> Tensors(const ModelParams& params) {
  return CollectTensors<const ModelParams, ConstTensorRef>(params);
}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  ValidateShapes();
}

Model Model::Initialize(const ModelConfig& config) {
  if (config.image_dim == 0 || config.text_dim == 0 || config.hidden_dim == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (config.init_logit_scale <= 0) throw ValidationError("init_logit_scale must be positive");
  std::mt19937_64 rng(config.seed);
  const std::size_t di = config.image_dim, dt = config.text_dim, dh = config.hidden_dim;
  ModelParams p;
  p.encoder.weight = Matrix::Zero(di, di);
  p.encoder.bias = Matrix::Zero(1, di);
  p.projection.weight = Gaussian(di, dt, 1.0 / std::sqrt(double(di)), rng);
  p.projection.bias = Matrix::Zero(1, dt);
  // Inverse of ELU(x) + 1.
  const double s = config.init_logit_scale;
  p.projection.logit_scale_raw = Matrix::Constant(1, 1, s >= 1 ? s - 1 : std::log(s));
  p.projection.logit_shift = Matrix::Zero(1, 1);
  p.part_mlp = InitMlp(di, dh, dt, 1.0, rng);
  p.box_mlp = InitMlp(di, dh, 4, 0.1, rng);
  return Model(config, std::move(p));
}

std::size_t Model::ParameterCount() const {
  std::size_t n = 0;
  for (const ConstTensorRef& t : Tensors(params_)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

std::uint64_t Model::ParameterDigest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const ConstTensorRef& t : Tensors(params_)) {
    h = Fnv1a64(t.name, h);
    h = Fnv1a64(std::string_view(reinterpret_cast<const char*>(t.value->data()),
                                 sizeof(double) * t.value->size()),
                h);
  }
  return h;
}

std::uint64_t Model::GroupDigest(ParamGroup group) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const ConstTensorRef& t : Tensors(params_)) {
    if (t.group != group) continue;
    h = Fnv1a64(std::string_view(reinterpret_cast<const char*>(t.value->data()),
                                 sizeof(double) * t.value->size()),
                h);
  }
  return h;
}

void Model::ValidateShapes() const {
  const auto di = static_cast<Eigen::Index>(config_.image_dim);
  const auto dt = static_cast<Eigen::Index>(config_.text_dim);
  const auto dh = static_cast<Eigen::Index>(config_.hidden_dim);
  CheckShape(params_.encoder.weight, di, di, "image_encoder.weight");
  CheckShape(params_.encoder.bias, 1, di, "image_encoder.bias");
  CheckShape(params_.projection.weight, di, dt, "projection.weight");
  CheckShape(params_.projection.bias, 1, dt, "projection.bias");
  CheckShape(params_.projection.logit_scale_raw, 1, 1, "projection.logit_scale");
  CheckShape(params_.projection.logit_shift, 1, 1, "projection.logit_shift");
  const Eigen::Index part_dims[4] = {di, dh, dh, dt};
  const Eigen::Index box_dims[4] = {di, dh, dh, 4};
  for (int l = 0; l < 3; ++l) {
    CheckShape(params_.part_mlp.layers[l].weight, part_dims[l], part_dims[l + 1], "part_mlp weight");
    CheckShape(params_.part_mlp.layers[l].bias, 1, part_dims[l + 1], "part_mlp bias");
    CheckShape(params_.box_mlp.layers[l].weight, box_dims[l], box_dims[l + 1], "box_mlp weight");
    CheckShape(params_.box_mlp.layers[l].bias, 1, box_dims[l + 1], "box_mlp bias");
  }
}

}  // namespace partlang
