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

#include "partlang/encoders.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

#include "partlang/error.hpp"

namespace partlang {

namespace {

constexpr char kEmbeddingMagic[8] = {'P', 'E', 'E', 'B', 'E', 'M', 'B', '1'};

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t GetU32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::string ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void RequireNonEmpty(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("encode_text needs at least one text");
}

}  // namespace

HashTextEncoder::HashTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ValidationError("text embedding dim must be positive");
}

std::string HashTextEncoder::provider_id() const {
  return "hash-text/d" + std::to_string(dim_) + "/s" + std::to_string(seed_);
}

RowVector HashTextEncoder::EncodeOne(const std::string& text) const {
  std::mt19937_64 rng(Fnv1a64(text) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector v(dim_);
  for (std::size_t k = 0; k < dim_; ++k) v[k] = normal(rng);
  return v / v.norm();
}

TextEmbeddingMatrix HashTextEncoder::Encode(const std::vector<std::string>& texts) const {
  RequireNonEmpty(texts);
  TextEmbeddingMatrix out(texts.size(), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) out.row(i) = EncodeOne(texts[i]);
  return out;
}

std::uint64_t HashTextEncoder::ParameterDigest() const {
  return Fnv1a64(provider_id());
}

TableTextEncoder::TableTextEncoder(std::size_t dim, std::string name,
                                   std::shared_ptr<const TextEncoder> fallback)
    : dim_(dim), name_(std::move(name)), fallback_(std::move(fallback)) {
  if (fallback_ && fallback_->dim() != dim_) throw ShapeError("fallback encoder dim mismatch");
}

void TableTextEncoder::Add(const std::string& text, const RowVector& embedding) {
  if (static_cast<std::size_t>(embedding.size()) != dim_) throw ShapeError("table embedding dim mismatch");
  table_[text] = embedding;
}

std::string TableTextEncoder::provider_id() const {
  return "table-text/" + name_ + "/" + HexDigest(ParameterDigest());
}

TextEmbeddingMatrix TableTextEncoder::Encode(const std::vector<std::string>& texts) const {
  RequireNonEmpty(texts);
  TextEmbeddingMatrix out(texts.size(), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto it = table_.find(texts[i]);
    if (it != table_.end()) {
      out.row(i) = it->second;
    } else if (fallback_) {
      out.row(i) = fallback_->Encode({texts[i]}).row(0);
    } else {
      throw ProviderError("no embedding for text: " + texts[i]);
    }
  }
  return out;
}

std::uint64_t TableTextEncoder::ParameterDigest() const {
  std::uint64_t h = Fnv1a64(name_);
  for (const auto& [text, vec] : table_) {
    h = Fnv1a64(text, h);
    h = Fnv1a64(std::string_view(reinterpret_cast<const char*>(vec.data()), vec.size() * sizeof(double)), h);
  }
  if (fallback_) h ^= fallback_->ParameterDigest();
  return h;
}

Matrix RoundToFloat32(const Matrix& m) {
  return m.cast<float>().cast<double>();
}

std::string EncodeEmbeddingBytes(const Matrix& embeddings) {
  std::string out(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  PutU32(out, static_cast<std::uint32_t>(embeddings.rows()));
  PutU32(out, static_cast<std::uint32_t>(embeddings.cols()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    for (Eigen::Index j = 0; j < embeddings.cols(); ++j) {
      float f = static_cast<float>(embeddings(i, j));
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      PutU32(out, bits);
    }
  }
  return out;
}

Matrix DecodeEmbeddingBytes(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kEmbeddingMagic, 8) != 0) {
    throw FormatError("embedding file: bad magic");
  }
  const std::uint32_t rows = GetU32(bytes, 8);
  const std::uint32_t dim = GetU32(bytes, 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(rows) * dim * 4;
  if (bytes.size() != expected) {
    throw FormatError("embedding file: payload size " + std::to_string(bytes.size()) + " != " +
                      std::to_string(expected));
  }
  Matrix out(rows, dim);
  std::size_t offset = 16;
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      std::uint32_t bits = GetU32(bytes, offset);
      offset += 4;
      float f;
      std::memcpy(&f, &bits, sizeof(f));
      out(i, j) = f;
    }
  }
  return out;
}

void WriteEmbeddingFile(const std::filesystem::path& path, const Matrix& embeddings) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    const std::string bytes = EncodeEmbeddingBytes(embeddings);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Matrix ReadEmbeddingFile(const std::filesystem::path& path) {
  return DecodeEmbeddingBytes(ReadAll(path));
}

EmbeddingCache::EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path EmbeddingCache::PathFor(const std::string& provider_id,
                                              const std::string& content) const {
  return dir_ / (HexDigest(Fnv1a64(provider_id)) + "-" + HexDigest(Fnv1a64(content)) + ".emb");
}

std::optional<Matrix> EmbeddingCache::Get(const std::string& provider_id, const std::string& content) const {
  const auto path = PathFor(provider_id, content);
  if (!std::filesystem::exists(path)) return std::nullopt;
  return ReadEmbeddingFile(path);
}

void EmbeddingCache::Put(const std::string& provider_id, const std::string& content,
                         const Matrix& embedding) const {
  // Unique temp name per writer; rename is atomic on POSIX.
  const auto path = PathFor(provider_id, content);
  static std::atomic<std::uint64_t> counter{0};
  const std::filesystem::path tmp =
      path.string() + "." + std::to_string(counter.fetch_add(1)) + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    const std::string bytes = EncodeEmbeddingBytes(embedding);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

CachingTextEncoder::CachingTextEncoder(std::shared_ptr<const TextEncoder> inner,
                                       std::shared_ptr<const EmbeddingCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

TextEmbeddingMatrix CachingTextEncoder::Encode(const std::vector<std::string>& texts) const {
  RequireNonEmpty(texts);
  const std::string provider = inner_->provider_id();
  TextEmbeddingMatrix out(texts.size(), inner_->dim());
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (auto hit = cache_->Get(provider, texts[i])) {
      out.row(i) = hit->row(0);
    } else {
      missing.push_back(i);
    }
  }
  if (!missing.empty()) {
    std::vector<std::string> cold;
    for (std::size_t i : missing) cold.push_back(texts[i]);
    const Matrix fresh = RoundToFloat32(inner_->Encode(cold));
    for (std::size_t k = 0; k < missing.size(); ++k) {
      out.row(missing[k]) = fresh.row(k);
      cache_->Put(provider, cold[k], fresh.row(k));
    }
  }
  std::lock_guard<std::mutex> lock(mu_);
  hits_ += texts.size() - missing.size();
  misses_ += missing.size();
  return out;
}

std::size_t CachingTextEncoder::hits() const {
  std::lock_guard<std::mutex> lock(mu_);
  return hits_;
}

std::size_t CachingTextEncoder::misses() const {
  std::lock_guard<std::mutex> lock(mu_);
  return misses_;
}

namespace {

cv::Mat DecodeRaster(const ImageInput& image) {
  cv::Mat mat;
  if (!image.bytes.empty()) {
    std::vector<uchar> buf(image.bytes.begin(), image.bytes.end());
    mat = cv::imdecode(buf, cv::IMREAD_COLOR);
  } else if (!image.path.empty()) {
    mat = cv::imread(image.path.string(), cv::IMREAD_COLOR);
  }
  if (mat.empty()) {
    throw InputError("cannot decode image '" + (image.id.empty() ? image.path.string() : image.id) + "'");
  }
  return mat;
}

constexpr int kRasterFeatures = 16;

}  // namespace

RasterStubEncoder::RasterStubEncoder(std::size_t grid, std::size_t dim, std::uint64_t seed, int cell_pixels)
    : grid_(grid), dim_(dim), seed_(seed), cell_pixels_(cell_pixels) {
  if (grid == 0 || dim == 0 || cell_pixels < 2) throw ValidationError("invalid raster encoder config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(kRasterFeatures)));
  projection_.resize(kRasterFeatures, dim);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

std::string RasterStubEncoder::provider_id() const {
  return "raster-stub/g" + std::to_string(grid_) + "/d" + std::to_string(dim_) + "/s" + std::to_string(seed_);
}

PatchEmbeddingMatrix RasterStubEncoder::Encode(const ImageInput& image) const {
  const cv::Mat src = DecodeRaster(image);
  const int side = static_cast<int>(grid_) * cell_pixels_;
  cv::Mat resized;
  cv::resize(src, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
  cv::Mat gray;
  cv::cvtColor(resized, gray, cv::COLOR_BGR2GRAY);

  const int half = cell_pixels_ / 2;
  Matrix features(grid_ * grid_, kRasterFeatures);
  for (std::size_t gy = 0; gy < grid_; ++gy) {
    for (std::size_t gx = 0; gx < grid_; ++gx) {
      const int x0 = static_cast<int>(gx) * cell_pixels_, y0 = static_cast<int>(gy) * cell_pixels_;
      const std::size_t row = gy * grid_ + gx;
      int f = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const cv::Scalar mean = cv::mean(resized(cv::Rect(x0 + sx * half, y0 + sy * half, half, half)));
          for (int ch = 0; ch < 3; ++ch) features(row, f++) = mean[ch] / 255.0 - 0.5;
        }
      }
      cv::Scalar mu, sd;
      cv::meanStdDev(gray(cv::Rect(x0, y0, cell_pixels_, cell_pixels_)), mu, sd);
      features(row, f++) = sd[0] / 128.0;
      features(row, f++) = (gx + 0.5) / grid_ - 0.5;
      features(row, f++) = (gy + 0.5) / grid_ - 0.5;
      features(row, f++) = 1.0;
    }
  }
  return (features * projection_).array().tanh().matrix();
}

std::optional<std::pair<int, int>> RasterStubEncoder::ImageSize(const ImageInput& image) const {
  const cv::Mat src = DecodeRaster(image);
  return std::make_pair(src.cols, src.rows);
}

void TeacherAnnotation::Validate(std::size_t num_parts, std::size_t num_patches) const {
  if (selection.indices.size() != num_parts || boxes.size() != num_parts) {
    throw ValidationError("teacher annotation has " + std::to_string(selection.indices.size()) +
                          " selections and " + std::to_string(boxes.size()) + " boxes for " +
                          std::to_string(num_parts) + " parts");
  }
  for (int idx : selection.indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= num_patches) {
      throw ValidationError("teacher selection index " + std::to_string(idx) + " out of range");
    }
  }
  for (const BoundingBox& b : boxes) {
    if (!b.IsNormalized()) throw ValidationError("teacher part box is not normalized");
  }
  if (!object_box.IsNormalized()) throw ValidationError("teacher object box is not normalized");
}

BoundingBox NormalizePixelBox(double x, double y, double w, double h, double image_w, double image_h) {
  if (image_w <= 0 || image_h <= 0) throw ValidationError("image dimensions must be positive");
  return {(x + w / 2) / image_w, (y + h / 2) / image_h, w / image_w, h / image_h};
}

namespace {

using Json = nlohmann::json;

Json BoxToJson(const BoundingBox& b) { return Json::array({b.cx, b.cy, b.w, b.h}); }

BoundingBox BoxFromJson(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be [cx, cy, w, h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::vector<AnnotationRecord> ParseAnnotationRecords(const std::string& jsonl) {
  std::vector<AnnotationRecord> records;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      AnnotationRecord rec;
      rec.id = j.at("id").get<std::string>();
      if (j.contains("selection")) {
        TeacherAnnotation t;
        t.selection.indices = j.at("selection").get<std::vector<int>>();
        for (const Json& b : j.at("boxes")) t.boxes.push_back(BoxFromJson(b));
        t.object_box = BoxFromJson(j.at("object_box"));
        rec.teacher = std::move(t);
      }
      if (j.contains("keypoints")) {
        for (const Json& k : j.at("keypoints")) {
          rec.keypoints.push_back({k.at("part").get<std::string>(), k.at("x").get<double>(),
                                   k.at("y").get<double>(), k.value("visible", true)});
        }
      }
      records.push_back(std::move(rec));
    } catch (const Json::exception& e) {
      throw FormatError("annotation file line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("annotation file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<AnnotationRecord> ReadAnnotationFile(const std::filesystem::path& path) {
  return ParseAnnotationRecords(ReadAll(path));
}

std::string SerializeAnnotationRecords(const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const AnnotationRecord& rec : records) {
    Json j;
    j["id"] = rec.id;
    if (rec.teacher) {
      j["selection"] = rec.teacher->selection.indices;
      j["boxes"] = Json::array();
      for (const BoundingBox& b : rec.teacher->boxes) j["boxes"].push_back(BoxToJson(b));
      j["object_box"] = BoxToJson(rec.teacher->object_box);
    }
    if (!rec.keypoints.empty()) {
      j["keypoints"] = Json::array();
      for (const Keypoint& k : rec.keypoints) {
        j["keypoints"].push_back({{"part", k.part}, {"x", k.x}, {"y", k.y}, {"visible", k.visible}});
      }
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

void WriteAnnotationFile(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << SerializeAnnotationRecords(records);
}

RecordedTeacher::RecordedTeacher(const std::vector<AnnotationRecord>& records) {
  for (const AnnotationRecord& rec : records) {
    if (!rec.teacher) continue;
    if (!by_id_.emplace(rec.id, *rec.teacher).second) {
      throw ValidationError("duplicate teacher annotation for id " + rec.id);
    }
  }
}

TeacherAnnotation RecordedTeacher::Annotate(const ImageInput& image) const {
  auto it = by_id_.find(image.id);
  if (it == by_id_.end()) throw NotFoundError("no recorded teacher annotation for image " + image.id);
  return it->second;
}

TeacherAnnotation TeacherAnnotate(const TeacherProvider* teacher, const ImageInput& image) {
  if (teacher == nullptr) throw ConfigError("no teacher provider configured");
  return teacher->Annotate(image);
}

}  // namespace partlang
