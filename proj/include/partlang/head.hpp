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

#ifndef PARTLANG_HEAD_HPP_
#define PARTLANG_HEAD_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/model.hpp"
#include "partlang/types.hpp"

namespace partlang {

// --- Building blocks -------------------------------------------------------

double Gelu(double x);
double GeluGrad(double x);

// Applies the trainable adapter to frozen backbone features.
Matrix EncodePatches(const Matrix& raw, const EncoderAdapterParams& encoder);

// p' = patches * weight + bias.
Matrix ProjectPatches(const Matrix& patches, const ProjectionParams& proj);

// n x P similarity between projected patches and part-name embeddings.
Matrix PartNameSimilarity(const Matrix& projected, const Matrix& part_name_embeddings, SimilarityMode mode);

// (similarity + shift) * scale; monotone per column, so it never changes
// the argmax.
Matrix SelectionLogits(const Matrix& similarity, const ProjectionParams& proj);

// Per column, the row with the highest value; lowest row wins ties.
PartSelection SelectFromSimilarity(const Matrix& similarity);

PartSelection SelectParts(const Matrix& projected, const Matrix& part_name_embeddings,
                          SimilarityMode mode = SimilarityMode::kCosine);

Matrix GatherRows(const Matrix& patches, const PartSelection& selection);

Matrix MlpForward(const MLPParams& mlp, const Matrix& input);

// score[i][k] = PartMLP(selected)_i . descriptor_embeddings_k.
Matrix PartScores(const Matrix& selected, const MLPParams& part_mlp, const Matrix& descriptor_embeddings);

struct ClassLogits {
  Vector logits;
  int prediction = -1;  // argmax, lowest index on ties
};

// logit[c] = sum_j scores[j][c * P + j]. Throws ShapeError when the column
// count is not a multiple of the part count.
ClassLogits Classify(const Matrix& scores);

int ArgmaxLowest(const Vector& values);

// Sigmoid-squashed Box MLP outputs in center format.
std::vector<BoundingBox> PredictBoxes(const Matrix& selected, const MLPParams& box_mlp);

// --- Differentiable forward/backward used by training and grad checks ------

struct MlpCache {
  Matrix input;
  std::array<Matrix, 3> pre;   // pre-activation of each layer
  std::array<Matrix, 2> post;  // GELU outputs of the hidden layers
  Matrix output;
};

MlpCache MlpForwardCached(const MLPParams& mlp, const Matrix& input);
// Accumulates parameter gradients into `grads` and returns dL/d(input).
Matrix MlpBackward(const MLPParams& mlp, const MlpCache& cache, const Matrix& d_output, MLPParams& grads);

struct HeadInputs {
  const Matrix* raw_patches = nullptr;           // n x d_i backbone features
  const Matrix* part_name_embeddings = nullptr;  // P x d_t
  const Matrix* descriptor_embeddings = nullptr; // (P * N) x d_t, optional
  // When set, used instead of self-selection (teacher forcing).
  std::optional<PartSelection> forced_selection;
  bool need_selection_logits = true;
  bool need_scores = true;
  bool need_boxes = true;
};

struct HeadForward {
  Matrix encoded;         // n x d_i
  Matrix projected;       // n x d_t
  Matrix similarity;      // n x P
  Matrix selection_logits;
  PartSelection selection;
  Matrix selected;        // P x d_i (pre-projection rows)
  MlpCache part_cache;
  Matrix scores;          // P x (P * N)
  MlpCache box_cache;
  Matrix boxes;           // P x 4, sigmoid outputs
  bool has_projection = false;
  bool has_scores = false;
  bool has_boxes = false;
};

HeadForward RunHead(const Model& model, const HeadInputs& inputs);

struct HeadUpstream {
  const Matrix* d_selection_logits = nullptr;  // n x P
  const Matrix* d_scores = nullptr;            // P x (P * N)
  const Matrix* d_boxes = nullptr;             // P x 4
};

// Accumulates dL/dparams into `grads`. Selection indices are treated as
// constants.
void BackwardHead(const Model& model, const HeadInputs& inputs, const HeadForward& fwd,
                  const HeadUpstream& upstream, ModelParams& grads);

std::vector<BoundingBox> BoxesFromMatrix(const Matrix& boxes);

// --- Inference and explanations --------------------------------------------

struct PartExplanation {
  std::string part;
  std::string phrase;
  BoundingBox box;
  double score = 0;
};

struct Explanation {
  std::string class_name;
  std::size_t class_index = 0;
  double total_logit = 0;
  double softmax_prob = 0;
  std::vector<PartExplanation> per_part;
};

struct InferenceResult {
  PartSelection selection;
  std::vector<BoundingBox> boxes;
  Matrix scores;
  ClassLogits logits;
  Vector probabilities;
};

// Descriptor embeddings for one library, computed once per library value.
struct DescriptorBank {
  std::shared_ptr<const DescriptorLibrary> library;
  Matrix embeddings;  // (P * N) x d_t
};

// Frozen model plus encoders; all methods are const and thread-safe.
class Classifier {
 public:
  Classifier(std::shared_ptr<const Model> model, std::shared_ptr<const TextEncoder> text_encoder,
             std::shared_ptr<const ImageEncoder> image_encoder);

  const Model& model() const { return *model_; }
  const TextEncoder& text_encoder() const { return *text_encoder_; }
  const ImageEncoder& image_encoder() const { return *image_encoder_; }
  const Matrix& part_name_embeddings() const { return part_name_embeddings_; }

  // Throws ValidationError for an empty library or a vocabulary mismatch.
  DescriptorBank EncodeLibrary(std::shared_ptr<const DescriptorLibrary> library) const;

  InferenceResult Infer(const Matrix& raw_patches, const Matrix& descriptor_embeddings) const;

  // One explanation per class, sorted by softmax probability (descending,
  // lowest class index first on ties).
  std::vector<Explanation> Explain(const Matrix& raw_patches, const DescriptorBank& bank) const;
  std::vector<Explanation> Explain(const ImageInput& image, const DescriptorBank& bank) const;
  std::vector<Explanation> Explain(const ImageInput& image, const DescriptorLibrary& library) const;

 private:
  std::shared_ptr<const Model> model_;
  std::shared_ptr<const TextEncoder> text_encoder_;
  std::shared_ptr<const ImageEncoder> image_encoder_;
  Matrix part_name_embeddings_;
};

// Part-name embeddings for the selection query (bare part names).
Matrix EncodePartNames(const TextEncoder& encoder, const PartVocabulary& vocabulary);

}  // namespace partlang

#endif  // PARTLANG_HEAD_HPP_
