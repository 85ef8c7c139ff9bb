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

#ifndef PARTLANG_MODEL_HPP_
#define PARTLANG_MODEL_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/types.hpp"

namespace partlang {

enum class SimilarityMode { kCosine, kDot };

const char* SimilarityModeName(SimilarityMode mode);
SimilarityMode ParseSimilarityMode(const std::string& name);

struct ModelConfig {
  std::size_t image_dim = 32;   // d_i
  std::size_t text_dim = 32;    // d_t
  std::size_t hidden_dim = 64;  // MLP hidden width
  PartVocabulary vocabulary = PartVocabulary::Birds();
  SimilarityMode similarity = SimilarityMode::kCosine;
  DescriptorTemplate descriptor_template = DescriptorTemplate::kPartColonPhrase;
  double init_logit_scale = 10.0;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

// Biases are stored as 1 x out matrices so every parameter is a Matrix.
struct LinearLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// Three layers, GELU after the first two.
struct MLPParams {
  std::array<LinearLayer, 3> layers;
  std::size_t in_dim() const { return layers[0].weight.rows(); }
  std::size_t out_dim() const { return layers[2].weight.cols(); }
};

// Trainable residual adapter on top of the frozen backbone features:
// encoded = raw + raw * weight + bias. Starts as the identity.
struct EncoderAdapterParams {
  Matrix weight;  // d_i x d_i
  Matrix bias;    // 1 x d_i
};

struct ProjectionParams {
  Matrix weight;           // d_i x d_t
  Matrix bias;             // 1 x d_t
  Matrix logit_scale_raw;  // 1 x 1; scale = ELU(raw) + 1 > 0
  Matrix logit_shift;      // 1 x 1

  double logit_scale() const;
};

struct ModelParams {
  EncoderAdapterParams encoder;
  ProjectionParams projection;
  MLPParams part_mlp;
  MLPParams box_mlp;

  // Same shapes, all zeros (used as a gradient accumulator).
  ModelParams ZerosLike() const;
  bool operator==(const ModelParams& other) const;
};

// Trainable parameter groups. The text encoder is never among them.
enum class ParamGroup { kImageEncoder, kProjection, kPartMlp, kBoxMlp };
inline constexpr std::array<ParamGroup, 4> kAllParamGroups = {
    ParamGroup::kImageEncoder, ParamGroup::kProjection, ParamGroup::kPartMlp, ParamGroup::kBoxMlp};
inline constexpr const char* kTextEncoderGroup = "text_encoder";

const char* ParamGroupName(ParamGroup group);
ParamGroup ParseParamGroup(const std::string& name);

struct TensorRef {
  ParamGroup group;
  std::string name;  // e.g. "part_mlp.layers.0.weight"
  Matrix* value;
};

struct ConstTensorRef {
  ParamGroup group;
  std::string name;
  const Matrix* value;
};

std::vector<TensorRef> Tensors(ModelParams& params);
std::vector<ConstTensorRef> Tensors(const ModelParams& params);

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams params);

  // Seeded initialization from the config.
  static Model Initialize(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }

  // Depends only on the config dims, never on the number of classes.
  std::size_t ParameterCount() const;
  // Digest over every parameter value; used by the isolation audits.
  std::uint64_t ParameterDigest() const;
  std::uint64_t GroupDigest(ParamGroup group) const;

  // Throws ShapeError when the parameter shapes disagree with the config.
  void ValidateShapes() const;

 private:
  ModelConfig config_;
  ModelParams params_;
};

}  // namespace partlang

#endif  // PARTLANG_MODEL_HPP_
