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

#include "partlang/data_pipeline.hpp"

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "partlang/error.hpp"

namespace partlang {
namespace {

using testing::RandomManifest;
using testing::TempDir;

ImageRecord Record(const std::string& id, const std::string& label, std::optional<PixelBox> box = std::nullopt) {
  ImageRecord r;
  r.id = id;
  r.path = id + ".jpg";
  r.label = label;
  r.width = 500;
  r.height = 400;
  r.object_box = box;
  return r;
}

DatasetManifest Manifest(std::vector<ImageRecord> records) {
  return DatasetManifest::FromRecords(std::move(records), PartVocabulary::Birds());
}

DatasetManifest TenRecords() {
  std::vector<ImageRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(Record("r" + std::to_string(i), i < 4 ? "A" : i < 7 ? "B" : "C"));
  return Manifest(rs);
}

TEST(ManifestTest, RoundTrip) {
  ImageRecord r = Record("a", "Cardinal", PixelBox{1, 2, 150, 120.5});
  r.keypoints = {{"beak", 10, 20, true}, {"tail", 0, 0, false}};
  const DatasetManifest m = Manifest({r, Record("b", "Blue Jay")});
  const DatasetManifest back = ParseManifest(SerializeManifest(m));
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.classes, (std::vector<std::string>{"Cardinal", "Blue Jay"}));
  EXPECT_EQ(back.Hash(), m.Hash());
  TempDir dir("manifest");
  WriteManifest(m, dir / "m.tsv");
  EXPECT_EQ(ReadManifest(dir / "m.tsv").records, m.records);
}

TEST(ManifestTest, ParseErrors) {
  const std::string header = "id\tpath\tlabel\twidth\theight\tbox\tkeypoints\n";
  EXPECT_THROW(ParseManifest(header + "a\tp\tA\t10\n"), FormatError);
  EXPECT_THROW(ParseManifest(header + "a\tp\tA\tten\t10\t-\t-\n"), FormatError);
  EXPECT_THROW(ParseManifest(header + "a\tp\tA\t10\t10\t1,2\t-\n"), FormatError);
  EXPECT_THROW(ParseManifest(header + "a\tp\tA\t10\t10\t-\t-\na\tp\tA\t10\t10\t-\t-\n"), ValidationError);
  EXPECT_THROW(ParseManifest(header + "a\tp\tA\t10\t10\t-\tbeak:50:5:1\n"), ValidationError);
  EXPECT_THROW(ReadManifest("/nonexistent.tsv"), InputError);
}

TEST(LineListTest, SkipsCommentsAndBlanks) {
  EXPECT_EQ(ParseLineList("# header\nA\n\n  B  \n#c\n"), (std::vector<std::string>{"A", "B"}));
}

TEST(FilterByBoxTest, ThresholdIsInclusive) {
  const DatasetManifest m = Manifest({Record("small", "A", PixelBox{0, 0, 99, 150}),
                                      Record("edge", "A", PixelBox{0, 0, 100, 100}),
                                      Record("none", "B")});
  const FilterResult r = FilterByBox(m, 100, 100);
  ASSERT_EQ(r.manifest.records.size(), 1u);
  EXPECT_EQ(r.manifest.records[0].id, "edge");
  EXPECT_EQ(r.removed_small, 1u);
  EXPECT_EQ(r.dropped_missing_box, 1u);
  EXPECT_EQ(r.manifest.classes, m.classes);
  EXPECT_THROW(FilterByBox(m, 100, 100, MissingBoxPolicy::kError), ValidationError);
}

TEST(FilterByBoxTest, NestedIdempotentMonotone) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const DatasetManifest m = RandomManifest(rng);
    const FilterResult f100 = FilterByBox(m, 100, 100);
    const FilterResult f200 = FilterByBox(m, 200, 200);
    const auto ids100 = f100.manifest.Ids(), ids200 = f200.manifest.Ids();
    EXPECT_TRUE(std::includes(ids100.begin(), ids100.end(), ids200.begin(), ids200.end()));
    EXPECT_EQ(FilterByBox(f100.manifest, 100, 100).manifest.Ids(), ids100);
    EXPECT_EQ(FilterByBox(f100.manifest, 200, 200).manifest.Ids(), ids200);
  }
}

TEST(ExclusionsTest, DropsClassesAndReportsUnknown) {
  std::vector<std::string> unknown;
  const DatasetManifest out = ApplyExclusions(TenRecords(), {"B", "Nope"}, &unknown);
  EXPECT_EQ(out.classes, (std::vector<std::string>{"A", "C"}));
  EXPECT_EQ(out.records.size(), 7u);
  EXPECT_EQ(unknown, std::vector<std::string>{"Nope"});
}

TEST(GzslSplitTest, ProtectedIdsBecomeTest) {
  const DatasetManifest m = TenRecords();
  const SplitSpec s = MakeGzslSplit(m, {"r0", "r5", "r9"});
  EXPECT_EQ(s.train_ids.size(), 7u);
  EXPECT_EQ(s.test_ids, (std::set<std::string>{"r0", "r5", "r9"}));
  EXPECT_THROW(MakeGzslSplit(m, {}), ValidationError);
  EXPECT_THROW(MakeGzslSplit(m, {"nope"}), NotFoundError);
}

TEST(GzslSplitTest, DisjointAndReproducible) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const DatasetManifest m = RandomManifest(rng);
    std::set<std::string> prot;
    for (const auto& r : m.records) {
      if (rng() % 3 == 0) prot.insert(r.id);
    }
    if (prot.empty()) prot.insert(m.records[0].id);
    const SplitSpec s = MakeGzslSplit(m, prot, 0.2, 3);
    EXPECT_NO_THROW(s.Validate());
    for (const auto& id : s.test_ids) {
      EXPECT_FALSE(s.train_ids.count(id));
      EXPECT_FALSE(s.val_ids.count(id));
    }
    EXPECT_EQ(s.train_ids.size() + s.val_ids.size() + s.test_ids.size(), m.records.size());
    EXPECT_EQ(SerializeSplit(MakeGzslSplit(m, prot, 0.2, 3)), SerializeSplit(s));
  }
}

TEST(ZslSplitTest, UnseenClassesNeverInTrain) {
  const DatasetManifest m = TenRecords();
  const SplitSpec s = MakeZslSplit(m, {"C"});
  for (const auto& id : s.train_ids) EXPECT_NE(m.Find(id)->label, "C");
  for (const auto& id : s.test_ids) EXPECT_EQ(m.Find(id)->label, "C");
  EXPECT_EQ(s.unseen_classes, std::set<std::string>{"C"});
  EXPECT_TRUE(AuditZslSplit(m, s).ok);
  EXPECT_THROW(MakeZslSplit(m, {"Z"}), NotFoundError);
  EXPECT_THROW(MakeZslSplit(m, {"A", "B", "C"}), ValidationError);
}

TEST(ZslSplitTest, AuditCatchesLeaks) {
  const DatasetManifest m = TenRecords();
  SplitSpec s = MakeZslSplit(m, {"C"});
  s.train_ids.insert("r9");  // a C record
  s.test_ids.erase("r9");
  const ZslAudit a = AuditZslSplit(m, s);
  EXPECT_FALSE(a.ok);
  EXPECT_EQ(a.violations, std::vector<std::string>{"r9"});
}

TEST(ZslSplitTest, ThousandRandomManifestsPassAudit) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const DatasetManifest m = RandomManifest(rng);
    std::set<std::string> unseen;
    for (const auto& c : m.classes) {
      if (rng() % 3 == 0) unseen.insert(c);
    }
    if (unseen.empty()) unseen.insert(m.classes.back());
    if (unseen.size() == m.classes.size()) unseen.erase(m.classes.front());
    const SplitSpec s = MakeZslSplit(m, unseen, 0.1, trial);
    ASSERT_TRUE(AuditZslSplit(m, s).ok) << "trial " << trial;
  }
}

TEST(SplitTest, SerializeRoundTrip) {
  const SplitSpec s = MakeZslSplit(TenRecords(), {"B"}, 0.25, 1);
  const SplitSpec back = ParseSplit(SerializeSplit(s));
  EXPECT_EQ(back.train_ids, s.train_ids);
  EXPECT_EQ(back.val_ids, s.val_ids);
  EXPECT_EQ(back.test_ids, s.test_ids);
  EXPECT_EQ(back.unseen_classes, s.unseen_classes);
  EXPECT_THROW(ParseSplit("{"), FormatError);
}

TEST(SuperCategoryTest, SharedAndExclusiveSplits) {
  std::vector<ImageRecord> rs;
  const std::vector<std::pair<std::string, std::string>> classes = {
      {"Cardinal", "Cardinalidae"}, {"Grosbeak", "Cardinalidae"}, {"Bunting", "Cardinalidae"},
      {"Warbler A", "Parulidae"},   {"Warbler B", "Parulidae"},   {"Warbler C", "Parulidae"},
      {"Gull A", "Laridae"},        {"Gull B", "Laridae"},        {"Tern", "Laridae"},
      {"Wren", "Troglodytidae"},    {"Wren B", "Troglodytidae"},  {"Jay", "Corvidae"}};
  std::string map_text;
  for (const auto& [c, s] : classes) {
    rs.push_back(Record(c + "/1", c));
    rs.push_back(Record(c + "/2", c));
    map_text += c + "\t" + s + "\n";
  }
  const DatasetManifest m = Manifest(rs);
  const auto supers = ParseSuperCategoryMap(map_text);
  const SuperCategorySplits sp = MakeSuperCategorySplits(m, supers, 0.25, 4);
  const SuperCategoryAudit easy = AuditSuperCategories(sp.shared, supers);
  const SuperCategoryAudit hard = AuditSuperCategories(sp.exclusive, supers);
  EXPECT_GT(easy.shared, 0u);
  EXPECT_EQ(easy.exclusive, 0u);
  EXPECT_GT(hard.exclusive, 0u);
  EXPECT_EQ(hard.shared, 0u);
  EXPECT_TRUE(AuditZslSplit(m, sp.shared).ok);
  EXPECT_TRUE(AuditZslSplit(m, sp.exclusive).ok);
}

TEST(AttachAnnotationsTest, CoverageAndErrors) {
  const DatasetManifest m = Manifest({Record("a", "A"), Record("b", "A"), Record("c", "B")});
  std::vector<AnnotationRecord> anns = {{"a", std::nullopt, {{"beak", 10, 10, true}}},
                                        {"c", std::nullopt, {}},
                                        {"zzz", std::nullopt, {}}};
  const AttachResult r = AttachAnnotations(m, anns);
  EXPECT_EQ(r.unmatched, std::vector<std::string>{"b"});
  EXPECT_EQ(r.unknown_ids, std::vector<std::string>{"zzz"});
  EXPECT_EQ(r.manifest.Find("a")->keypoints.size(), 1u);

  anns.push_back({"b", std::nullopt, {}});
  EXPECT_TRUE(AttachAnnotations(m, anns).unmatched.empty());

  try {
    AttachAnnotations(m, {{"b", std::nullopt, {{"beak", 900, 10, true}}}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(AttachAnnotations(m, {{"a", std::nullopt, {}}, {"a", std::nullopt, {}}}), ValidationError);
}

TEST(PartMergeTest, ShippedCubTable) {
  const PartMerge merge = ReadPartMerge(std::filesystem::path(PARTLANG_SOURCE_DIR) / "data" / "cub_part_merge.tsv");
  EXPECT_EQ(merge.size(), 15u);
  EXPECT_EQ(merge.at("left wing"), "wings");
  EXPECT_EQ(merge.at("right eye"), "eyes");
  const auto out = MergeKeypoints({{"left wing", 1, 1, true}, {"right wing", 2, 2, true}, {"crown", 3, 3, false}}, merge);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].part, "wings");
  EXPECT_EQ(out[1].part, "wings");
  EXPECT_THROW(MergeKeypoints({{"antenna", 0, 0, true}}, merge), ValidationError);
  std::set<std::string> targets;
  for (const auto& [k, v] : merge) targets.insert(v);
  EXPECT_EQ(targets.size(), 12u);
}

TEST(PartFrequencyTest, CountsVisibleParts) {
  ImageRecord a = Record("a", "A"), b = Record("b", "A");
  a.keypoints = {{"beak", 1, 1, true}, {"tail", 1, 1, true}};
  b.keypoints = {{"beak", 1, 1, true}, {"tail", 1, 1, false}};
  const DatasetManifest m = Manifest({a, b, Record("c", "A")});
  const auto f = PartFrequency(m);
  const auto& v = m.vocabulary;
  EXPECT_EQ(f[*v.IndexOf("beak")], 1.0);
  EXPECT_EQ(f[*v.IndexOf("tail")], 0.5);
  EXPECT_EQ(f[*v.IndexOf("crown")], 0.0);
  EXPECT_EQ(ParsePartFrequency(SerializePartFrequency(v, f), v), f);
}

}  // namespace
}  // namespace partlang
