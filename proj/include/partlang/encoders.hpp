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

#ifndef PARTLANG_ENCODERS_HPP_
#define PARTLANG_ENCODERS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "partlang/types.hpp"

namespace partlang {

// Text encoders are frozen: nothing in training ever writes to them.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string provider_id() const = 0;
  virtual std::size_t dim() const = 0;
  // Row i embeds texts[i]. Throws ValidationError on an empty list.
  virtual TextEmbeddingMatrix Encode(const std::vector<std::string>& texts) const = 0;
  // Digest over everything that determines the encoder's output.
  virtual std::uint64_t ParameterDigest() const = 0;
};

// Seeded hash of the string expanded to a unit-norm Gaussian vector.
class HashTextEncoder : public TextEncoder {
 public:
  HashTextEncoder(std::size_t dim, std::uint64_t seed);

  std::string provider_id() const override;
  std::size_t dim() const override { return dim_; }
  TextEmbeddingMatrix Encode(const std::vector<std::string>& texts) const override;
  std::uint64_t ParameterDigest() const override;

  RowVector EncodeOne(const std::string& text) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Exact-text lookup table with an optional fallback encoder for misses.
class TableTextEncoder : public TextEncoder {
 public:
  TableTextEncoder(std::size_t dim, std::string name,
                   std::shared_ptr<const TextEncoder> fallback = nullptr);

  // Only valid while the encoder is being set up.
  void Add(const std::string& text, const RowVector& embedding);
  bool Contains(const std::string& text) const { return table_.count(text) > 0; }

  std::string provider_id() const override;
  std::size_t dim() const override { return dim_; }
  TextEmbeddingMatrix Encode(const std::vector<std::string>& texts) const override;
  std::uint64_t ParameterDigest() const override;

 private:
  std::size_t dim_;
  std::string name_;
  std::shared_ptr<const TextEncoder> fallback_;
  std::map<std::string, RowVector> table_;
};

// Embedding cache file: "PEEBEMB1", little-endian u32 rows, u32 dim,
// float32 row-major payload.
void WriteEmbeddingFile(const std::filesystem::path& path, const Matrix& embeddings);
Matrix ReadEmbeddingFile(const std::filesystem::path& path);
std::string EncodeEmbeddingBytes(const Matrix& embeddings);
Matrix DecodeEmbeddingBytes(const std::string& bytes);

// Rounds every entry to the nearest float32.
Matrix RoundToFloat32(const Matrix& m);

// On-disk cache keyed by (provider id, content hash). Writes go to a
// temporary file that is renamed into place.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir);

  std::filesystem::path PathFor(const std::string& provider_id, const std::string& content) const;
  std::optional<Matrix> Get(const std::string& provider_id, const std::string& content) const;
  void Put(const std::string& provider_id, const std::string& content, const Matrix& embedding) const;

 private:
  std::filesystem::path dir_;
};

// Wraps a text encoder with an EmbeddingCache. Cold results are rounded to
// float32 before being returned so that hits and misses are bitwise equal.
class CachingTextEncoder : public TextEncoder {
 public:
  CachingTextEncoder(std::shared_ptr<const TextEncoder> inner, std::shared_ptr<const EmbeddingCache> cache);

  std::string provider_id() const override { return inner_->provider_id(); }
  std::size_t dim() const override { return inner_->dim(); }
  TextEmbeddingMatrix Encode(const std::vector<std::string>& texts) const override;
  std::uint64_t ParameterDigest() const override { return inner_->ParameterDigest(); }

  std::size_t hits() const;
  std::size_t misses() const;

 private:
  std::shared_ptr<const TextEncoder> inner_;
  std::shared_ptr<const EmbeddingCache> cache_;
  mutable std::mutex mu_;
  mutable std::size_t hits_ = 0, misses_ = 0;
};

// Reference to an image: an id, and optionally encoded bytes or a path.
struct ImageInput {
  std::string id;
  std::string bytes;
  std::filesystem::path path;
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual std::string provider_id() const = 0;
  virtual std::size_t num_patches() const = 0;
  virtual std::size_t dim() const = 0;
  // Throws InputError for undecodable images.
  virtual PatchEmbeddingMatrix Encode(const ImageInput& image) const = 0;
  // Pixel size of the source image, when known.
  virtual std::optional<std::pair<int, int>> ImageSize(const ImageInput& image) const = 0;
};

// Decodes the raster, resizes it to a square grid of patches and maps simple
// per-patch color/position statistics through a fixed seeded projection.
class RasterStubEncoder : public ImageEncoder {
 public:
  RasterStubEncoder(std::size_t grid, std::size_t dim, std::uint64_t seed, int cell_pixels = 8);

  std::string provider_id() const override;
  std::size_t num_patches() const override { return grid_ * grid_; }
  std::size_t dim() const override { return dim_; }
  PatchEmbeddingMatrix Encode(const ImageInput& image) const override;
  std::optional<std::pair<int, int>> ImageSize(const ImageInput& image) const override;

 private:
  std::size_t grid_;
  std::size_t dim_;
  std::uint64_t seed_;
  int cell_pixels_;
  Matrix projection_;
};

// What the frozen teacher detector says about one image.
struct TeacherAnnotation {
  PartSelection selection;
  std::vector<BoundingBox> boxes;  // one per part, normalized center format
  BoundingBox object_box;

  // Throws ValidationError unless lengths match `num_parts` and boxes are
  // normalized.
  void Validate(std::size_t num_parts, std::size_t num_patches) const;
  bool operator==(const TeacherAnnotation&) const = default;
};

// Pixel box given by its top-left corner and size, normalized to center
// format in [0, 1].
BoundingBox NormalizePixelBox(double x, double y, double w, double h, double image_w, double image_h);

class TeacherProvider {
 public:
  virtual ~TeacherProvider() = default;
  virtual TeacherAnnotation Annotate(const ImageInput& image) const = 0;
};

// One line of a recorded annotation file (JSON Lines).
struct AnnotationRecord {
  std::string id;
  std::optional<TeacherAnnotation> teacher;
  std::vector<Keypoint> keypoints;
};

std::vector<AnnotationRecord> ParseAnnotationRecords(const std::string& jsonl);
std::vector<AnnotationRecord> ReadAnnotationFile(const std::filesystem::path& path);
std::string SerializeAnnotationRecords(const std::vector<AnnotationRecord>& records);
void WriteAnnotationFile(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

// Teacher backed by recorded annotations instead of a detector checkpoint.
class RecordedTeacher : public TeacherProvider {
 public:
  explicit RecordedTeacher(const std::vector<AnnotationRecord>& records);

  TeacherAnnotation Annotate(const ImageInput& image) const override;
  std::size_t size() const { return by_id_.size(); }

 private:
  std::unordered_map<std::string, TeacherAnnotation> by_id_;
};

// Throws ConfigError when no teacher is configured.
TeacherAnnotation TeacherAnnotate(const TeacherProvider* teacher, const ImageInput& image);

}  // namespace partlang

#endif  // PARTLANG_ENCODERS_HPP_
