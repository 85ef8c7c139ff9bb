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

#ifndef PARTLANG_TESTS_FIXTURES_HPP_
#define PARTLANG_TESTS_FIXTURES_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "partlang/data_pipeline.hpp"
#include "partlang/descriptor_store.hpp"
#include "partlang/synthetic.hpp"
#include "partlang/training.hpp"
#include "partlang/types.hpp"

namespace partlang::testing {

inline Matrix RandomMatrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("partlang-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// 24-bit BMP with pixel (x, y) = color(x, y) as {r, g, b}.
template <typename ColorFn>
std::string MakeBmp(int width, int height, ColorFn color) {
  const int row = (width * 3 + 3) / 4 * 4;
  const int size = 54 + row * height;
  std::string out(static_cast<std::size_t>(size), '\0');
  auto put32 = [&](int at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(at + i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  };
  auto put16 = [&](int at, std::uint16_t v) {
    out[static_cast<std::size_t>(at)] = static_cast<char>(v & 0xff);
    out[static_cast<std::size_t>(at + 1)] = static_cast<char>(v >> 8);
  };
  out[0] = 'B';
  out[1] = 'M';
  put32(2, static_cast<std::uint32_t>(size));
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<std::uint32_t>(width));
  put32(22, static_cast<std::uint32_t>(height));
  put16(26, 1);
  put16(28, 24);
  put32(34, static_cast<std::uint32_t>(row * height));
  for (int y = 0; y < height; ++y) {
    const int base = 54 + (height - 1 - y) * row;  // bottom-up rows
    for (int x = 0; x < width; ++x) {
      const std::array<int, 3> rgb = color(x, y);
      out[static_cast<std::size_t>(base + 3 * x)] = static_cast<char>(rgb[2]);
      out[static_cast<std::size_t>(base + 3 * x + 1)] = static_cast<char>(rgb[1]);
      out[static_cast<std::size_t>(base + 3 * x + 2)] = static_cast<char>(rgb[0]);
    }
  }
  return out;
}

// Library over the bird vocabulary whose phrases are "<class> <part>".
inline DescriptorLibrary MakeLibrary(const std::vector<std::string>& classes) {
  const PartVocabulary v = PartVocabulary::Birds();
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> entries;
  for (const std::string& c : classes) {
    std::map<std::string, std::string> phrases;
    for (const std::string& p : v.names()) phrases[p] = c + " " + p;
    entries.emplace_back(c, phrases);
  }
  return DescriptorLibrary::Create(v, entries);
}

inline std::vector<std::string> ClassNames(std::size_t n, const std::string& prefix = "class_") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// Seeded manifest with 2..`max_classes` classes, 1..`max_per_class` records
// each and random object boxes on 500 x 500 images.
inline DatasetManifest RandomManifest(std::mt19937_64& rng, int max_classes = 12, int max_per_class = 8) {
  std::uniform_int_distribution<int> nc(2, max_classes), np(1, max_per_class);
  std::uniform_real_distribution<double> side(20, 400), pos(0, 100);
  std::vector<ImageRecord> records;
  const int classes = nc(rng);
  for (int c = 0; c < classes; ++c) {
    const int per = np(rng);
    for (int i = 0; i < per; ++i) {
      ImageRecord r;
      r.id = "img_" + std::to_string(c) + "_" + std::to_string(i);
      r.path = r.id + ".jpg";
      r.label = "class_" + std::to_string(c);
      r.width = 500;
      r.height = 500;
      r.object_box = PixelBox{pos(rng), pos(rng), side(rng), side(rng)};
      records.push_back(std::move(r));
    }
  }
  return DatasetManifest::FromRecords(std::move(records), PartVocabulary::Birds());
}

// The desk-scale recipe: 8 classes, 40 train / 10 val / 25 test per class,
// stage 1 for 200 steps then stage 2 for 400 steps at lr 3e-3.
struct SyntheticRun {
  std::shared_ptr<SyntheticWorld> world;
  std::shared_ptr<TableTextEncoder> text;
  std::shared_ptr<const DescriptorLibrary> library;
  TrainingData data;
  std::vector<TrainingExample> test;
  Checkpoint initial;
  TrainResult stage1;
  TrainResult stage2;
};

inline TrainConfig RecipeConfig(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = 100;
  c.batch_size = 32;
  c.learning_rate = 3e-3;
  c.early_stop_patience = 100;
  c.max_steps = stage == Stage::kPretrain1 ? 200 : 400;
  return c;
}

inline SyntheticRun TrainSynthetic(std::uint64_t seed = 7, std::size_t classes = 8) {
  SyntheticRun r;
  SyntheticConfig sc;
  sc.num_classes = classes;
  sc.seed = seed;
  r.world = std::make_shared<SyntheticWorld>(sc);
  r.text = r.world->MakeTextEncoder();
  r.library = std::make_shared<const DescriptorLibrary>(r.world->Library());
  std::vector<int> cls;
  for (std::size_t c = 0; c < classes; ++c) cls.push_back(static_cast<int>(c));
  r.data = TrainingData::Build(r.library, *r.text, DescriptorTemplate::kPartColonPhrase,
                               ToTrainingExamples(r.world->Samples(cls, 40, 0)),
                               ToTrainingExamples(r.world->Samples(cls, 10, 1000)));
  r.test = ToTrainingExamples(r.world->Samples(cls, 25, 2000));
  ModelConfig mc;
  mc.seed = 1;
  r.initial = Checkpoint::Fresh(mc, *r.text);
  r.stage1 = RunStage(r.data, RecipeConfig(Stage::kPretrain1), r.initial);
  r.stage2 = RunStage(r.data, RecipeConfig(Stage::kPretrain2), r.stage1.checkpoint);
  return r;
}

// Trained once per test binary.
inline const SyntheticRun& SharedSyntheticRun() {
  static const SyntheticRun run = TrainSynthetic();
  return run;
}

}  // namespace partlang::testing

#endif  // PARTLANG_TESTS_FIXTURES_HPP_
