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

#ifndef PARTLANG_SYNTHETIC_HPP_
#define PARTLANG_SYNTHETIC_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/training.hpp"
#include "partlang/types.hpp"

namespace partlang {

// Desk-scale world with a known answer. Each (class, part) has a prototype
// vector part_base[j] + informativeness[j] * class_dev[c][j]. An image puts
// the P prototypes and some distractors on a square patch grid in a seeded
// random arrangement. Content vectors leave the last two coordinates at zero;
// those carry the patch's cell center, and Gaussian noise covers everything.
// Descriptor and part-name embeddings are the noise-free prototypes (or part
// bases) sent through one fixed random map.
struct SyntheticConfig {
  std::size_t num_classes = 8;
  PartVocabulary vocabulary = PartVocabulary::Birds();
  std::size_t distractors = 4;
  std::size_t image_dim = 32;
  std::size_t text_dim = 32;
  double noise = 0.1;
  double position_scale = 1.0;
  double box_size = 0.3;   // teacher part boxes, as a fraction of the image side
  int image_pixels = 256;  // for keypoints and pixel boxes
  // Class-specific deviation scale per part, most informative first. Empty
  // means a linear ramp from 1.0 down to 0.3.
  std::vector<double> informativeness;
  std::uint64_t seed = 7;
};

struct SyntheticSample {
  std::string id;
  int label = -1;
  Matrix raw_patches;  // n x d_i
  TeacherAnnotation teacher;
  std::vector<Keypoint> keypoints;  // pixel coordinates
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticConfig config);

  const SyntheticConfig& config() const { return config_; }
  std::size_t num_classes() const { return class_dev_.size(); }
  std::size_t num_parts() const { return config_.vocabulary.size(); }
  std::size_t num_patches() const { return num_parts() + config_.distractors; }
  std::size_t grid() const { return grid_; }

  // Appends a class. With `base`, the class copies base's deviations except
  // for `changed_parts`, which get fresh ones. Returns the class index.
  int AddClass(std::optional<int> base = std::nullopt, const std::vector<int>& changed_parts = {});

  std::string ClassName(int c) const;
  // Unique phrase for a (class, part) prototype.
  std::string Phrase(int c, std::size_t part) const;
  RowVector Prototype(int c, std::size_t part) const;

  // Library over classes [0, count) (all classes when count is empty).
  DescriptorLibrary Library(std::optional<std::size_t> count = std::nullopt) const;

  // Frozen text encoder that knows the part names and every class phrase
  // under the given template; unknown text falls back to a hash encoder.
  std::shared_ptr<TableTextEncoder> MakeTextEncoder(
      DescriptorTemplate tmpl = DescriptorTemplate::kPartColonPhrase) const;

  // Deterministic in (seed, class, index).
  SyntheticSample Sample(int c, std::uint64_t index) const;
  // `per_class` samples for each class in `classes`, indices starting at
  // `first_index`.
  std::vector<SyntheticSample> Samples(const std::vector<int>& classes, std::size_t per_class,
                                       std::uint64_t first_index = 0) const;

  // Per-part visibility frequency used for the keypoint flags; follows the
  // informativeness ordering.
  std::vector<double> PartFrequency() const;

  // Parses ids of the form "syn/<class>/<index>".
  static std::optional<std::pair<int, std::uint64_t>> ParseId(const std::string& id);

 private:
  SyntheticConfig config_;
  std::size_t grid_;
  std::vector<RowVector> part_base_;
  std::vector<std::vector<RowVector>> class_dev_;
  std::vector<double> informativeness_;
  Matrix text_map_;  // d_i x d_t
};

std::vector<TrainingExample> ToTrainingExamples(const std::vector<SyntheticSample>& samples);

// Image encoder over synthetic ids, so the classifier and service can run
// on the synthetic world end to end.
class SyntheticImageEncoder : public ImageEncoder {
 public:
  explicit SyntheticImageEncoder(std::shared_ptr<const SyntheticWorld> world) : world_(std::move(world)) {}

  std::string provider_id() const override;
  std::size_t num_patches() const override { return world_->num_patches(); }
  std::size_t dim() const override { return world_->config().image_dim; }
  PatchEmbeddingMatrix Encode(const ImageInput& image) const override;
  std::optional<std::pair<int, int>> ImageSize(const ImageInput& image) const override;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
};

class SyntheticTeacher : public TeacherProvider {
 public:
  explicit SyntheticTeacher(std::shared_ptr<const SyntheticWorld> world) : world_(std::move(world)) {}
  TeacherAnnotation Annotate(const ImageInput& image) const override;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
};

}  // namespace partlang

#endif  // PARTLANG_SYNTHETIC_HPP_
