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

#ifndef PARTLANG_DATA_PIPELINE_HPP_
#define PARTLANG_DATA_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "partlang/descriptor_store.hpp"
#include "partlang/encoders.hpp"
#include "partlang/types.hpp"

namespace partlang {

// Object box in pixels, top-left corner plus size.
struct PixelBox {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const PixelBox&) const = default;
};

struct ImageRecord {
  std::string id;
  std::string path;
  std::string label;
  int width = 0;
  int height = 0;
  std::optional<PixelBox> object_box;
  std::vector<Keypoint> keypoints;  // pixel coordinates
  std::optional<TeacherAnnotation> teacher;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::vector<std::string> classes;
  PartVocabulary vocabulary = PartVocabulary::Birds();

  // Classes in first-appearance order.
  static DatasetManifest FromRecords(std::vector<ImageRecord> records, PartVocabulary vocabulary);

  // Throws ValidationError on duplicate ids, unknown labels, non-positive
  // dimensions or visible keypoints off the image.
  void Validate() const;
  const ImageRecord* Find(const std::string& id) const;
  std::set<std::string> Ids() const;
  // Digest of ids, labels and boxes; seeds every derived split.
  std::uint64_t Hash() const;
};

// Tab-separated: id, path, label, width, height, box ("x,y,w,h" or "-"),
// keypoints ("part:x:y:v;..." or "-"), with a header line.
DatasetManifest ParseManifest(const std::string& text, PartVocabulary vocabulary = PartVocabulary::Birds());
DatasetManifest ReadManifest(const std::filesystem::path& path,
                             PartVocabulary vocabulary = PartVocabulary::Birds());
std::string SerializeManifest(const DatasetManifest& manifest);
void WriteManifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Plain text, one entry per line; blank lines and '#' comments skipped.
std::vector<std::string> ParseLineList(const std::string& text);
std::vector<std::string> ReadLineList(const std::filesystem::path& path);

enum class MissingBoxPolicy { kDrop, kError };

struct FilterResult {
  DatasetManifest manifest;
  std::size_t removed_small = 0;
  std::size_t dropped_missing_box = 0;
};

// Keeps records whose object box has w >= min_w and h >= min_h.
FilterResult FilterByBox(const DatasetManifest& manifest, double min_w, double min_h,
                         MissingBoxPolicy policy = MissingBoxPolicy::kDrop);

// Drops the listed classes and their records (general-vs-fine-grained
// de-duplication). Unknown names are ignored and returned.
DatasetManifest ApplyExclusions(const DatasetManifest& manifest, const std::vector<std::string>& excluded,
                                std::vector<std::string>* unknown = nullptr);

struct SplitSpec {
  std::string name;
  std::set<std::string> train_ids, val_ids, test_ids;
  std::set<std::string> seen_classes, unseen_classes;

  // Throws ValidationError when the record sets overlap.
  void Validate() const;
};

std::string SerializeSplit(const SplitSpec& split);
SplitSpec ParseSplit(const std::string& json);

// Generalized zero-shot: protected ids become the test set, the rest train.
// `val_fraction` of train is carved out, seeded by (manifest hash, seed).
SplitSpec MakeGzslSplit(const DatasetManifest& manifest, const std::set<std::string>& protected_ids,
                        double val_fraction = 0.0, std::uint64_t seed = 0);

struct ZslAudit {
  bool ok = true;
  std::vector<std::string> violations;  // record ids
};

// Scans actual record labels: no train/val record may carry an unseen
// class, no test record a seen one.
ZslAudit AuditZslSplit(const DatasetManifest& manifest, const SplitSpec& split);

// Zero-shot: records of `unseen` classes form the test set. The audit runs
// before returning; a failure throws ValidationError.
SplitSpec MakeZslSplit(const DatasetManifest& manifest, const std::set<std::string>& unseen,
                       double val_fraction = 0.0, std::uint64_t seed = 0);

// class -> super-category, tab-separated lines.
std::map<std::string, std::string> ParseSuperCategoryMap(const std::string& text);

struct SuperCategoryAudit {
  std::size_t shared = 0;     // unseen classes whose super-category has a seen class
  std::size_t exclusive = 0;  // unseen classes whose super-category is entirely unseen
};

SuperCategoryAudit AuditSuperCategories(const SplitSpec& split, const std::map<std::string, std::string>& supers);

struct SuperCategorySplits {
  SplitSpec shared;     // SCS, easy: every unseen class shares a super-category with train
  SplitSpec exclusive;  // SCE, hard: no unseen class shares one
};

// Roughly `unseen_fraction` of the classes go unseen in each split.
SuperCategorySplits MakeSuperCategorySplits(const DatasetManifest& manifest,
                                            const std::map<std::string, std::string>& supers,
                                            double unseen_fraction, std::uint64_t seed = 0);

struct AttachResult {
  DatasetManifest manifest;
  std::vector<std::string> unmatched;    // manifest ids without an annotation
  std::vector<std::string> unknown_ids;  // annotation ids not in the manifest
};

// Duplicate annotation ids throw ValidationError; so does a visible
// keypoint outside its record's image, naming the record.
AttachResult AttachAnnotations(const DatasetManifest& manifest, const std::vector<AnnotationRecord>& annotations);

// Source keypoint name -> vocabulary part (e.g. "left wing" -> "wings").
using PartMerge = std::map<std::string, std::string>;
PartMerge ParsePartMerge(const std::string& text);
PartMerge ReadPartMerge(const std::filesystem::path& path);
// Renames keypoints through the merge; every instance is kept. Unmapped
// names throw ValidationError.
std::vector<Keypoint> MergeKeypoints(const std::vector<Keypoint>& keypoints, const PartMerge& merge);

// Fraction of keypoint-bearing records in which each part is visible.
std::vector<double> PartFrequency(const DatasetManifest& manifest);
std::string SerializePartFrequency(const PartVocabulary& vocabulary, const std::vector<double>& frequency);
std::vector<double> ParsePartFrequency(const std::string& text, const PartVocabulary& vocabulary);

}  // namespace partlang

#endif  // PARTLANG_DATA_PIPELINE_HPP_
