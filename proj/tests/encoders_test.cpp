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

#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "partlang/error.hpp"
#include "partlang/synthetic.hpp"

namespace partlang {
namespace {

using testing::MakeBmp;
using testing::TempDir;

std::string Gradient(int w, int h) {
  return MakeBmp(w, h, [](int x, int y) { return std::array<int, 3>{(x * 7) % 256, (y * 5) % 256, 128}; });
}

TEST(HashTextEncoderTest, ShapeAndDeterminism) {
  HashTextEncoder enc(32, 3);
  const auto names = PartVocabulary::Birds().names();
  const Matrix a = enc.Encode(names);
  EXPECT_EQ(a.rows(), 12);
  EXPECT_EQ(a.cols(), 32);
  EXPECT_TRUE(a == enc.Encode(names));
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).norm(), 1.0, 1e-12);
}

TEST(HashTextEncoderTest, DistinctStrings) {
  HashTextEncoder enc(16, 0);
  const Matrix m = enc.Encode({"aaa", "aab"});
  EXPECT_FALSE(m.row(0) == m.row(1));
  EXPECT_LT(std::abs(m.row(0).dot(m.row(1))), 0.99);
}

TEST(HashTextEncoderTest, EmptyListAndProviderId) {
  HashTextEncoder enc(8, 5);
  EXPECT_THROW(enc.Encode({}), ValidationError);
  EXPECT_EQ(enc.provider_id(), "hash-text/d8/s5");
  EXPECT_NE(enc.ParameterDigest(), HashTextEncoder(8, 6).ParameterDigest());
}

TEST(TableTextEncoderTest, LookupAndFallback) {
  auto fallback = std::make_shared<HashTextEncoder>(4, 1);
  TableTextEncoder enc(4, "t", fallback);
  RowVector v(4);
  v << 1, 0, 0, 0;
  enc.Add("known", v);
  const Matrix m = enc.Encode({"known", "other"});
  EXPECT_TRUE(m.row(0) == v);
  EXPECT_TRUE(m.row(1) == fallback->EncodeOne("other"));
  TableTextEncoder strict(4, "s");
  EXPECT_THROW(strict.Encode({"missing"}), ProviderError);
  EXPECT_THROW(strict.Add("x", RowVector::Zero(3)), ShapeError);
}

TEST(EmbeddingFileTest, RoundTripIsFloat32) {
  TempDir dir("emb");
  std::mt19937_64 rng(1);
  const Matrix m = testing::RandomMatrix(5, 7, rng);
  WriteEmbeddingFile(dir / "x.emb", m);
  const Matrix back = ReadEmbeddingFile(dir / "x.emb");
  EXPECT_TRUE(back == RoundToFloat32(m));
  const std::string bytes = EncodeEmbeddingBytes(m);
  EXPECT_EQ(bytes.substr(0, 8), "PEEBEMB1");
  EXPECT_EQ(bytes.size(), 8u + 8u + 5u * 7u * 4u);
  EXPECT_THROW(DecodeEmbeddingBytes("NOTMAGIC" + bytes.substr(8)), FormatError);
  EXPECT_THROW(DecodeEmbeddingBytes(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(CachingTextEncoderTest, HitEqualsColdCall) {
  TempDir dir("cache");
  auto inner = std::make_shared<HashTextEncoder>(16, 2);
  auto cache = std::make_shared<EmbeddingCache>(dir.path());
  CachingTextEncoder cold(inner, cache);
  const Matrix first = cold.Encode({"crown: red crest", "beak: stout"});
  EXPECT_EQ(cold.misses(), 2u);
  CachingTextEncoder warm(inner, cache);
  const Matrix second = warm.Encode({"crown: red crest", "beak: stout"});
  EXPECT_EQ(warm.hits(), 2u);
  EXPECT_TRUE(first == second);
  EXPECT_EQ(warm.provider_id(), inner->provider_id());
}

TEST(CachingTextEncoderTest, ConcurrentWritersLeaveValidFiles) {
  TempDir dir("cache2");
  auto inner = std::make_shared<HashTextEncoder>(8, 2);
  auto cache = std::make_shared<EmbeddingCache>(dir.path());
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      CachingTextEncoder enc(inner, cache);
      for (int i = 0; i < 20; ++i) enc.Encode({"text " + std::to_string(i)});
    });
  }
  for (auto& t : threads) t.join();
  CachingTextEncoder check(inner, cache);
  for (int i = 0; i < 20; ++i) {
    const std::string s = "text " + std::to_string(i);
    EXPECT_TRUE(check.Encode({s}) == RoundToFloat32(inner->Encode({s})));
  }
  EXPECT_EQ(check.hits(), 20u);
}

TEST(RasterStubEncoderTest, ShapeFromBytesAndPath) {
  RasterStubEncoder enc(4, 32, 0);
  const std::string bmp = Gradient(40, 30);
  const Matrix a = enc.Encode(ImageInput{"img", bmp, {}});
  EXPECT_EQ(a.rows(), 16);
  EXPECT_EQ(a.cols(), 32);
  EXPECT_TRUE(AllFinite(a));
  TempDir dir("img");
  {
    std::ofstream f(dir / "img.bmp", std::ios::binary);
    f << bmp;
  }
  EXPECT_TRUE(a == enc.Encode(ImageInput{"img", "", dir / "img.bmp"}));
  EXPECT_EQ(*enc.ImageSize(ImageInput{"img", bmp, {}}), std::make_pair(40, 30));
}

TEST(RasterStubEncoderTest, UndecodableIsInputError) {
  RasterStubEncoder enc(4, 8, 0);
  EXPECT_THROW(enc.Encode(ImageInput{"x", "not an image", {}}), InputError);
  EXPECT_THROW(enc.Encode(ImageInput{"x", "", "/nonexistent/file.png"}), InputError);
  EXPECT_THROW(enc.Encode(ImageInput{"x", "", {}}), InputError);
}

TEST(RasterStubEncoderTest, DifferentImagesDiffer) {
  RasterStubEncoder enc(4, 16, 0);
  const std::string white = MakeBmp(32, 32, [](int, int) { return std::array<int, 3>{255, 255, 255}; });
  EXPECT_FALSE(enc.Encode(ImageInput{"a", white, {}}) == enc.Encode(ImageInput{"b", Gradient(32, 32), {}}));
}

TEST(TeacherTest, NormalizePixelBox) {
  const BoundingBox b = NormalizePixelBox(10, 20, 91, 150, 500, 500);
  EXPECT_NEAR(b.w, 0.182, 1e-12);
  EXPECT_NEAR(b.h, 0.300, 1e-12);
  EXPECT_NEAR(b.cx, (10 + 45.5) / 500.0, 1e-12);
  EXPECT_THROW(NormalizePixelBox(0, 0, 1, 1, 0, 10), ValidationError);
}

TEST(TeacherTest, RecordedPassThrough) {
  TeacherAnnotation t;
  t.selection.indices = {0, 1};
  t.boxes = {{0.5, 0.5, 0.2, 0.2}, {0.25, 0.75, 0.1, 0.3}};
  t.object_box = {0.5, 0.5, 0.9, 0.9};
  const std::vector<AnnotationRecord> recs = {{"a", t, {{"beak", 3, 4, true}}}, {"b", std::nullopt, {}}};
  const auto parsed = ParseAnnotationRecords(SerializeAnnotationRecords(recs));
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(*parsed[0].teacher, t);
  EXPECT_EQ(parsed[0].keypoints, recs[0].keypoints);
  EXPECT_FALSE(parsed[1].teacher);
  RecordedTeacher teacher(parsed);
  EXPECT_EQ(teacher.Annotate(ImageInput{"a", "", {}}), t);
  EXPECT_THROW(teacher.Annotate(ImageInput{"zzz", "", {}}), NotFoundError);
  EXPECT_THROW(RecordedTeacher({recs[0], recs[0]}), ValidationError);
}

TEST(TeacherTest, MissingProviderIsConfigError) {
  EXPECT_THROW(TeacherAnnotate(nullptr, ImageInput{"a", "", {}}), ConfigError);
}

TEST(TeacherTest, ValidateShapes) {
  TeacherAnnotation t;
  t.selection.indices = {0, 5};
  t.boxes = {{0.5, 0.5, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}};
  t.object_box = {0.5, 0.5, 1, 1};
  EXPECT_NO_THROW(t.Validate(2, 6));
  EXPECT_THROW(t.Validate(2, 5), ValidationError);
  EXPECT_THROW(t.Validate(3, 6), ValidationError);
  t.boxes[0].w = 2;
  EXPECT_THROW(t.Validate(2, 6), ValidationError);
}

TEST(TeacherTest, AnnotationParseErrorsCarryLine) {
  try {
    ParseAnnotationRecords("{\"id\": \"a\"}\n{\"id\": \"b\", \"selection\": [0], \"boxes\": [[1,2]], "
                           "\"object_box\": [0.5,0.5,1,1]}\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(SyntheticEncoderTest, TeacherSelectsThePartRow) {
  auto world = std::make_shared<SyntheticWorld>(SyntheticConfig{});
  SyntheticImageEncoder enc(world);
  SyntheticTeacher teacher(world);
  const SyntheticSample s = world->Sample(2, 5);
  const Matrix m = enc.Encode(ImageInput{s.id, "", {}});
  EXPECT_TRUE(m == s.raw_patches);
  EXPECT_EQ(m.rows(), static_cast<Eigen::Index>(world->num_patches()));
  const TeacherAnnotation t = teacher.Annotate(ImageInput{s.id, "", {}});
  EXPECT_EQ(t, s.teacher);
  // The row the teacher picks for part k is generated from part k's prototype.
  for (std::size_t k = 0; k < world->num_parts(); ++k) {
    const RowVector proto = world->Prototype(2, k);
    const RowVector row = m.row(t.selection.indices[k]);
    const double cos = proto.dot(row) / (proto.norm() * row.norm());
    EXPECT_GT(cos, 0.5) << "part " << k;
  }
  EXPECT_THROW(enc.Encode(ImageInput{"cat.jpg", "", {}}), InputError);
}

}  // namespace
}  // namespace partlang
