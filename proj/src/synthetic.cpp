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

#include "partlang/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "partlang/error.hpp"

namespace partlang {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr Eigen::Index kPositionDims = 2;

RowVector Gaussian(std::mt19937_64& rng, std::size_t dim, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  RowVector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return v;
}

// Content lives outside the trailing position coordinates.
RowVector Content(std::mt19937_64& rng, std::size_t dim, double stddev) {
  RowVector v = Gaussian(rng, dim, stddev);
  v.tail(kPositionDims).setZero();
  return v;
}

std::uint64_t Mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + kGolden + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

}  // namespace

SyntheticWorld::SyntheticWorld(SyntheticConfig config) : config_(std::move(config)) {
  const std::size_t parts = config_.vocabulary.size();
  if (parts == 0) throw ValidationError("synthetic world needs at least one part");
  if (config_.image_dim == 0 || config_.text_dim == 0) throw ValidationError("synthetic dims must be > 0");
  if (!(config_.noise >= 0)) throw ValidationError("synthetic noise must be >= 0");
  if (config_.image_dim <= static_cast<std::size_t>(kPositionDims)) {
    throw ValidationError("synthetic image_dim must exceed the position coordinates");
  }
  grid_ = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(parts + config_.distractors))));

  informativeness_ = config_.informativeness;
  if (informativeness_.empty()) {
    for (std::size_t j = 0; j < parts; ++j) {
      informativeness_.push_back(parts == 1 ? 1.0 : 1.0 - 0.7 * double(j) / double(parts - 1));
    }
  }
  if (informativeness_.size() != parts) throw ValidationError("informativeness needs one value per part");

  std::mt19937_64 rng(Mix(config_.seed, 1));
  const double unit = 1.0 / std::sqrt(static_cast<double>(config_.image_dim));
  for (std::size_t j = 0; j < parts; ++j) part_base_.push_back(Content(rng, config_.image_dim, unit));
  text_map_.resize(static_cast<Eigen::Index>(config_.image_dim), static_cast<Eigen::Index>(config_.text_dim));
  for (Eigen::Index r = 0; r < text_map_.rows(); ++r) text_map_.row(r) = Gaussian(rng, config_.text_dim, unit);

  for (std::size_t c = 0; c < config_.num_classes; ++c) AddClass();
}

int SyntheticWorld::AddClass(std::optional<int> base, const std::vector<int>& changed_parts) {
  const int c = static_cast<int>(class_dev_.size());
  std::mt19937_64 rng(Mix(config_.seed, 1000 + static_cast<std::uint64_t>(c)));
  const double unit = 1.0 / std::sqrt(static_cast<double>(config_.image_dim));
  std::vector<RowVector> dev;
  for (std::size_t j = 0; j < num_parts(); ++j) dev.push_back(Content(rng, config_.image_dim, unit));
  if (base) {
    if (*base < 0 || *base >= c) throw NotFoundError("synthetic base class " + std::to_string(*base));
    std::vector<RowVector> copy = class_dev_[*base];
    for (int j : changed_parts) {
      if (j < 0 || static_cast<std::size_t>(j) >= num_parts()) throw ValidationError("bad part index");
      copy[j] = dev[j];
    }
    dev = std::move(copy);
  }
  class_dev_.push_back(std::move(dev));
  return c;
}

std::string SyntheticWorld::ClassName(int c) const { return "class_" + std::to_string(c); }

std::string SyntheticWorld::Phrase(int c, std::size_t part) const {
  // Classes that share a deviation share the phrase, like a cloned class.
  const RowVector& d = class_dev_.at(c).at(part);
  for (int k = 0; k < c; ++k) {
    if (class_dev_[k][part] == d) return Phrase(k, part);
  }
  return "pattern " + std::to_string(c) + " of " + config_.vocabulary.name(part);
}

RowVector SyntheticWorld::Prototype(int c, std::size_t part) const {
  return part_base_.at(part) + informativeness_.at(part) * class_dev_.at(c).at(part);
}

DescriptorLibrary SyntheticWorld::Library(std::optional<std::size_t> count) const {
  const std::size_t n = count.value_or(num_classes());
  if (n > num_classes()) throw ValidationError("library larger than the synthetic world");
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> classes;
  for (std::size_t c = 0; c < n; ++c) {
    std::map<std::string, std::string> phrases;
    for (std::size_t j = 0; j < num_parts(); ++j) phrases[config_.vocabulary.name(j)] = Phrase(int(c), j);
    classes.emplace_back(ClassName(int(c)), std::move(phrases));
  }
  return DescriptorLibrary::Create(config_.vocabulary, classes);
}

std::shared_ptr<TableTextEncoder> SyntheticWorld::MakeTextEncoder(DescriptorTemplate tmpl) const {
  auto fallback = std::make_shared<HashTextEncoder>(config_.text_dim, config_.seed);
  auto enc = std::make_shared<TableTextEncoder>(config_.text_dim, "synthetic-" + std::to_string(config_.seed),
                                                fallback);
  auto embed = [&](const RowVector& v) {
    RowVector t = v * text_map_;
    return RowVector(t / t.norm());
  };
  for (std::size_t j = 0; j < num_parts(); ++j) enc->Add(config_.vocabulary.name(j), embed(part_base_[j]));
  for (std::size_t c = 0; c < num_classes(); ++c) {
    for (std::size_t j = 0; j < num_parts(); ++j) {
      const std::string text = DescriptorText(config_.vocabulary.name(j), Phrase(int(c), j), tmpl);
      if (!enc->Contains(text)) enc->Add(text, embed(Prototype(int(c), j)));
    }
  }
  return enc;
}

SyntheticSample SyntheticWorld::Sample(int c, std::uint64_t index) const {
  if (c < 0 || static_cast<std::size_t>(c) >= num_classes()) {
    throw NotFoundError("synthetic class " + std::to_string(c));
  }
  const std::size_t parts = num_parts();
  const std::size_t n = num_patches();
  std::mt19937_64 rng(Mix(Mix(config_.seed, 77 + static_cast<std::uint64_t>(c)), index));

  std::vector<int> cells(grid_ * grid_);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(n);
  // Patch rows are ordered by cell so the arrangement is not visible in the
  // row order.
  std::vector<std::size_t> slot(n);  // item -> row
  {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cells[a] < cells[b]; });
    for (std::size_t r = 0; r < n; ++r) slot[order[r]] = r;
  }

  const double unit = 1.0 / std::sqrt(static_cast<double>(config_.image_dim));
  const double cell = 1.0 / static_cast<double>(grid_);
  SyntheticSample s;
  s.id = "syn/" + std::to_string(c) + "/" + std::to_string(index);
  s.label = c;
  s.raw_patches.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config_.image_dim));
  s.teacher.selection.indices.resize(parts);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::vector<double> freq = PartFrequency();
  for (std::size_t item = 0; item < n; ++item) {
    const int cell_index = cells[item];
    const double cx = (static_cast<double>(cell_index % static_cast<int>(grid_)) + 0.5) * cell;
    const double cy = (static_cast<double>(cell_index / static_cast<int>(grid_)) + 0.5) * cell;
    RowVector content = item < parts ? Prototype(c, item) : Content(rng, config_.image_dim, unit);
    RowVector pos = RowVector::Zero(content.size());
    pos.tail(kPositionDims) << config_.position_scale * (2 * cx - 1), config_.position_scale * (2 * cy - 1);
    s.raw_patches.row(static_cast<Eigen::Index>(slot[item])) =
        content + pos + Gaussian(rng, config_.image_dim, config_.noise);
    if (item < parts) {
      s.teacher.selection.indices[item] = static_cast<int>(slot[item]);
      s.teacher.boxes.push_back(BoundingBox{cx, cy, config_.box_size, config_.box_size}.ClampedToUnit());
      const double px = cx * config_.image_pixels;
      const double py = cy * config_.image_pixels;
      s.keypoints.push_back({config_.vocabulary.name(item), px, py, u01(rng) < freq[item]});
    }
  }
  // Object box: hull of the part cells.
  double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
  for (const BoundingBox& b : s.teacher.boxes) {
    const CornerBox k = b.ToCorners();
    x0 = std::min(x0, k.x0);
    y0 = std::min(y0, k.y0);
    x1 = std::max(x1, k.x1);
    y1 = std::max(y1, k.y1);
  }
  s.teacher.object_box = BoundingBox::FromCorners({std::max(0.0, x0), std::max(0.0, y0), std::min(1.0, x1),
                                                   std::min(1.0, y1)});
  return s;
}

std::vector<SyntheticSample> SyntheticWorld::Samples(const std::vector<int>& classes, std::size_t per_class,
                                                     std::uint64_t first_index) const {
  std::vector<SyntheticSample> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (int c : classes) out.push_back(Sample(c, first_index + i));
  }
  return out;
}

std::vector<double> SyntheticWorld::PartFrequency() const {
  std::vector<double> f;
  for (double s : informativeness_) f.push_back(std::clamp(0.2 + 0.75 * s, 0.0, 1.0));
  return f;
}

std::optional<std::pair<int, std::uint64_t>> SyntheticWorld::ParseId(const std::string& id) {
  if (id.rfind("syn/", 0) != 0) return std::nullopt;
  const std::size_t slash = id.find('/', 4);
  if (slash == std::string::npos) return std::nullopt;
  try {
    std::size_t used = 0;
    const std::string cls = id.substr(4, slash - 4);
    const std::string idx = id.substr(slash + 1);
    const int c = std::stoi(cls, &used);
    if (used != cls.size()) return std::nullopt;
    const std::uint64_t i = std::stoull(idx, &used);
    if (used != idx.size()) return std::nullopt;
    return std::make_pair(c, i);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<TrainingExample> ToTrainingExamples(const std::vector<SyntheticSample>& samples) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const SyntheticSample& s : samples) out.push_back({s.id, s.raw_patches, s.label, s.teacher});
  return out;
}

std::string SyntheticImageEncoder::provider_id() const {
  return "synthetic-image-" + std::to_string(world_->config().seed);
}

PatchEmbeddingMatrix SyntheticImageEncoder::Encode(const ImageInput& image) const {
  const auto parsed = SyntheticWorld::ParseId(image.id);
  if (!parsed) throw InputError("not a synthetic image id: '" + image.id + "'");
  return world_->Sample(parsed->first, parsed->second).raw_patches;
}

std::optional<std::pair<int, int>> SyntheticImageEncoder::ImageSize(const ImageInput& image) const {
  if (!SyntheticWorld::ParseId(image.id)) return std::nullopt;
  return std::make_pair(world_->config().image_pixels, world_->config().image_pixels);
}

TeacherAnnotation SyntheticTeacher::Annotate(const ImageInput& image) const {
  const auto parsed = SyntheticWorld::ParseId(image.id);
  if (!parsed) throw NotFoundError("no synthetic annotation for '" + image.id + "'");
  return world_->Sample(parsed->first, parsed->second).teacher;
}

}  // namespace partlang
