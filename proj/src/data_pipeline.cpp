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
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "partlang/error.hpp"

namespace partlang {

namespace {

constexpr char kManifestHeader[] = "id\tpath\tlabel\twidth\theight\tbox\tkeypoints";

std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> SplitOn(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double ParseNumber(const std::string& s, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("manifest line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

std::string FormatNumber(double v) {
  std::ostringstream ss;
  ss.precision(15);
  ss << v;
  return ss.str();
}

std::uint64_t Mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 29;
  return x;
}

void RequireFraction(double f, const char* what) {
  if (!(f >= 0 && f < 1)) throw ValidationError(std::string(what) + " must lie in [0, 1)");
}

// Moves a seeded fraction of `train` into `val`; at least one record stays
// in train.
void CarveValidation(SplitSpec& split, double fraction, std::uint64_t seed) {
  if (fraction <= 0 || split.train_ids.size() < 2) return;
  std::vector<std::string> ids(split.train_ids.begin(), split.train_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  n = std::clamp<std::size_t>(n, 1, ids.size() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    split.val_ids.insert(ids[i]);
    split.train_ids.erase(ids[i]);
  }
}

void CheckKeypoints(const ImageRecord& r) {
  for (const Keypoint& k : r.keypoints) {
    if (!k.visible) continue;
    if (!(k.x >= 0 && k.y >= 0 && k.x <= r.width && k.y <= r.height)) {
      throw ValidationError("record '" + r.id + "': keypoint '" + k.part + "' at (" + FormatNumber(k.x) + ", " +
                            FormatNumber(k.y) + ") lies outside the " + std::to_string(r.width) + "x" +
                            std::to_string(r.height) + " image");
    }
  }
}

}  // namespace

// --- Manifest -------------------------------------------------------------------

DatasetManifest DatasetManifest::FromRecords(std::vector<ImageRecord> records, PartVocabulary vocabulary) {
  DatasetManifest m;
  m.vocabulary = std::move(vocabulary);
  std::unordered_set<std::string> seen;
  for (const ImageRecord& r : records) {
    if (seen.insert(r.label).second) m.classes.push_back(r.label);
  }
  m.records = std::move(records);
  m.Validate();
  return m;
}

void DatasetManifest::Validate() const {
  std::unordered_set<std::string> ids;
  const std::unordered_set<std::string> known(classes.begin(), classes.end());
  if (known.size() != classes.size()) throw ValidationError("manifest class list has duplicates");
  for (const ImageRecord& r : records) {
    if (r.id.empty()) throw ValidationError("manifest record with empty id");
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    if (!known.count(r.label)) throw ValidationError("record '" + r.id + "' has unknown label '" + r.label + "'");
    if (r.width <= 0 || r.height <= 0) throw ValidationError("record '" + r.id + "' has non-positive dimensions");
    if (r.object_box && (r.object_box->w < 0 || r.object_box->h < 0)) {
      throw ValidationError("record '" + r.id + "' has a negative box size");
    }
    CheckKeypoints(r);
  }
}

const ImageRecord* DatasetManifest::Find(const std::string& id) const {
  for (const ImageRecord& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::set<std::string> DatasetManifest::Ids() const {
  std::set<std::string> out;
  for (const ImageRecord& r : records) out.insert(r.id);
  return out;
}

std::uint64_t DatasetManifest::Hash() const {
  std::vector<const ImageRecord*> sorted;
  for (const ImageRecord& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const ImageRecord* a, const ImageRecord* b) { return a->id < b->id; });
  std::uint64_t h = Fnv1a64("manifest");
  for (const ImageRecord* r : sorted) {
    h = Fnv1a64(r->id, h);
    h = Fnv1a64(r->label, h);
    if (r->object_box) {
      h = Fnv1a64(FormatNumber(r->object_box->w) + "x" + FormatNumber(r->object_box->h), h);
    }
  }
  return h;
}

DatasetManifest ParseManifest(const std::string& text, PartVocabulary vocabulary) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<ImageRecord> records;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    if (!header) {
      if (line != kManifestHeader) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": expected header '" +
                          std::string(kManifestHeader) + "'");
      }
      header = true;
      continue;
    }
    const std::vector<std::string> cols = SplitOn(line, '\t');
    if (cols.size() != 7) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 7 columns, found " +
                        std::to_string(cols.size()));
    }
    ImageRecord r;
    r.id = cols[0];
    r.path = cols[1];
    r.label = cols[2];
    r.width = static_cast<int>(ParseNumber(cols[3], line_no, "width"));
    r.height = static_cast<int>(ParseNumber(cols[4], line_no, "height"));
    if (cols[5] != "-" && !cols[5].empty()) {
      const auto b = SplitOn(cols[5], ',');
      if (b.size() != 4) throw FormatError("manifest line " + std::to_string(line_no) + ": box needs x,y,w,h");
      r.object_box = PixelBox{ParseNumber(b[0], line_no, "box"), ParseNumber(b[1], line_no, "box"),
                              ParseNumber(b[2], line_no, "box"), ParseNumber(b[3], line_no, "box")};
    }
    if (cols[6] != "-" && !cols[6].empty()) {
      for (const std::string& item : SplitOn(cols[6], ';')) {
        if (item.empty()) continue;
        const auto f = SplitOn(item, ':');
        if (f.size() != 4) {
          throw FormatError("manifest line " + std::to_string(line_no) + ": keypoint needs part:x:y:v");
        }
        r.keypoints.push_back({f[0], ParseNumber(f[1], line_no, "keypoint"), ParseNumber(f[2], line_no, "keypoint"),
                               f[3] == "1"});
      }
    }
    records.push_back(std::move(r));
  }
  if (!header) throw FormatError("manifest is missing its header line");
  return DatasetManifest::FromRecords(std::move(records), std::move(vocabulary));
}

DatasetManifest ReadManifest(const std::filesystem::path& path, PartVocabulary vocabulary) {
  return ParseManifest(ReadText(path), std::move(vocabulary));
}

std::string SerializeManifest(const DatasetManifest& m) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const ImageRecord& r : m.records) {
    out << r.id << '\t' << r.path << '\t' << r.label << '\t' << r.width << '\t' << r.height << '\t';
    if (r.object_box) {
      out << FormatNumber(r.object_box->x) << ',' << FormatNumber(r.object_box->y) << ','
          << FormatNumber(r.object_box->w) << ',' << FormatNumber(r.object_box->h);
    } else {
      out << '-';
    }
    out << '\t';
    if (r.keypoints.empty()) out << '-';
    for (std::size_t i = 0; i < r.keypoints.size(); ++i) {
      const Keypoint& k = r.keypoints[i];
      if (i) out << ';';
      out << k.part << ':' << FormatNumber(k.x) << ':' << FormatNumber(k.y) << ':' << (k.visible ? 1 : 0);
    }
    out << '\n';
  }
  return out.str();
}

void WriteManifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  WriteText(path, SerializeManifest(manifest));
}

std::vector<std::string> ParseLineList(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    out.push_back(t);
  }
  return out;
}

std::vector<std::string> ReadLineList(const std::filesystem::path& path) { return ParseLineList(ReadText(path)); }

// --- Filtering ------------------------------------------------------------------

FilterResult FilterByBox(const DatasetManifest& manifest, double min_w, double min_h, MissingBoxPolicy policy) {
  if (!(min_w >= 0) || !(min_h >= 0)) throw ValidationError("box thresholds must be >= 0");
  FilterResult out;
  out.manifest.vocabulary = manifest.vocabulary;
  std::vector<ImageRecord> kept;
  for (const ImageRecord& r : manifest.records) {
    if (!r.object_box) {
      if (policy == MissingBoxPolicy::kError) throw ValidationError("record '" + r.id + "' has no object box");
      ++out.dropped_missing_box;
      continue;
    }
    if (r.object_box->w >= min_w && r.object_box->h >= min_h) {
      kept.push_back(r);
    } else {
      ++out.removed_small;
    }
  }
  // Keep the class list of the input so labels stay comparable.
  out.manifest.classes = manifest.classes;
  out.manifest.records = std::move(kept);
  return out;
}

DatasetManifest ApplyExclusions(const DatasetManifest& manifest, const std::vector<std::string>& excluded,
                                std::vector<std::string>* unknown) {
  const std::set<std::string> drop(excluded.begin(), excluded.end());
  const std::set<std::string> known(manifest.classes.begin(), manifest.classes.end());
  if (unknown) {
    unknown->clear();
    for (const std::string& e : drop) {
      if (!known.count(e)) unknown->push_back(e);
    }
  }
  DatasetManifest out;
  out.vocabulary = manifest.vocabulary;
  for (const std::string& c : manifest.classes) {
    if (!drop.count(c)) out.classes.push_back(c);
  }
  for (const ImageRecord& r : manifest.records) {
    if (!drop.count(r.label)) out.records.push_back(r);
  }
  return out;
}

// --- Splits ---------------------------------------------------------------------

void SplitSpec::Validate() const {
  auto disjoint = [](const std::set<std::string>& a, const std::set<std::string>& b, const char* what) {
    for (const std::string& id : a) {
      if (b.count(id)) throw ValidationError(std::string("split ") + what + " overlap on '" + id + "'");
    }
  };
  disjoint(train_ids, val_ids, "train/val");
  disjoint(train_ids, test_ids, "train/test");
  disjoint(val_ids, test_ids, "val/test");
  disjoint(seen_classes, unseen_classes, "seen/unseen class");
}

std::string SerializeSplit(const SplitSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["train"] = s.train_ids;
  j["val"] = s.val_ids;
  j["test"] = s.test_ids;
  j["seen_classes"] = s.seen_classes;
  j["unseen_classes"] = s.unseen_classes;
  return j.dump(2) + "\n";
}

SplitSpec ParseSplit(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitSpec s;
    s.name = j.at("name").get<std::string>();
    s.train_ids = j.at("train").get<std::set<std::string>>();
    s.val_ids = j.at("val").get<std::set<std::string>>();
    s.test_ids = j.at("test").get<std::set<std::string>>();
    s.seen_classes = j.at("seen_classes").get<std::set<std::string>>();
    s.unseen_classes = j.at("unseen_classes").get<std::set<std::string>>();
    s.Validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split: ") + e.what());
  }
}

SplitSpec MakeGzslSplit(const DatasetManifest& manifest, const std::set<std::string>& protected_ids,
                        double val_fraction, std::uint64_t seed) {
  RequireFraction(val_fraction, "val_fraction");
  if (protected_ids.empty()) throw ValidationError("gzsl split: the protected test set is empty");
  const std::set<std::string> ids = manifest.Ids();
  for (const std::string& id : protected_ids) {
    if (!ids.count(id)) throw NotFoundError("gzsl split: protected id '" + id + "' is not in the manifest");
  }
  SplitSpec s;
  s.name = "gzsl";
  for (const ImageRecord& r : manifest.records) {
    if (protected_ids.count(r.id)) {
      s.test_ids.insert(r.id);
    } else {
      s.train_ids.insert(r.id);
      s.seen_classes.insert(r.label);
    }
  }
  if (s.train_ids.empty()) throw ValidationError("gzsl split: no training records remain");
  CarveValidation(s, val_fraction, Mix(manifest.Hash(), seed));
  s.Validate();
  return s;
}

ZslAudit AuditZslSplit(const DatasetManifest& manifest, const SplitSpec& split) {
  ZslAudit audit;
  for (const ImageRecord& r : manifest.records) {
    const bool unseen = split.unseen_classes.count(r.label) > 0;
    const bool in_train = split.train_ids.count(r.id) || split.val_ids.count(r.id);
    const bool in_test = split.test_ids.count(r.id) > 0;
    if ((in_train && unseen) || (in_test && !unseen)) audit.violations.push_back(r.id);
  }
  for (const std::string& c : split.seen_classes) {
    if (split.unseen_classes.count(c)) audit.violations.push_back("class:" + c);
  }
  audit.ok = audit.violations.empty();
  return audit;
}

SplitSpec MakeZslSplit(const DatasetManifest& manifest, const std::set<std::string>& unseen, double val_fraction,
                       std::uint64_t seed) {
  RequireFraction(val_fraction, "val_fraction");
  if (unseen.empty()) throw ValidationError("zsl split: the unseen class set is empty");
  const std::set<std::string> known(manifest.classes.begin(), manifest.classes.end());
  for (const std::string& c : unseen) {
    if (!known.count(c)) throw NotFoundError("zsl split: unknown class '" + c + "'");
  }
  if (unseen.size() == known.size()) throw ValidationError("zsl split: every class is unseen");
  SplitSpec s;
  s.name = "zsl";
  s.unseen_classes = unseen;
  for (const std::string& c : known) {
    if (!unseen.count(c)) s.seen_classes.insert(c);
  }
  for (const ImageRecord& r : manifest.records) {
    (unseen.count(r.label) ? s.test_ids : s.train_ids).insert(r.id);
  }
  if (s.train_ids.empty() || s.test_ids.empty()) throw ValidationError("zsl split: a side of the split is empty");
  CarveValidation(s, val_fraction, Mix(manifest.Hash(), seed));
  s.Validate();
  const ZslAudit audit = AuditZslSplit(manifest, s);
  if (!audit.ok) throw ValidationError("zsl split failed its audit on '" + audit.violations.front() + "'");
  return s;
}

std::map<std::string, std::string> ParseSuperCategoryMap(const std::string& text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("super-category map line " + std::to_string(line_no) + ": expected class<TAB>super");
    }
    const std::string cls = Trim(t.substr(0, tab));
    if (!out.emplace(cls, Trim(t.substr(tab + 1))).second) {
      throw FormatError("super-category map line " + std::to_string(line_no) + ": duplicate class '" + cls + "'");
    }
  }
  return out;
}

SuperCategoryAudit AuditSuperCategories(const SplitSpec& split, const std::map<std::string, std::string>& supers) {
  std::set<std::string> seen_supers;
  for (const std::string& c : split.seen_classes) {
    const auto it = supers.find(c);
    if (it != supers.end()) seen_supers.insert(it->second);
  }
  SuperCategoryAudit a;
  for (const std::string& c : split.unseen_classes) {
    const auto it = supers.find(c);
    if (it == supers.end()) throw ValidationError("class '" + c + "' has no super-category");
    (seen_supers.count(it->second) ? a.shared : a.exclusive) += 1;
  }
  return a;
}

SuperCategorySplits MakeSuperCategorySplits(const DatasetManifest& manifest,
                                            const std::map<std::string, std::string>& supers,
                                            double unseen_fraction, std::uint64_t seed) {
  if (!(unseen_fraction > 0 && unseen_fraction < 1)) throw ValidationError("unseen_fraction must lie in (0, 1)");
  std::map<std::string, std::vector<std::string>> groups;
  for (const std::string& c : manifest.classes) {
    const auto it = supers.find(c);
    if (it == supers.end()) throw ValidationError("class '" + c + "' has no super-category");
    groups[it->second].push_back(c);
  }
  const std::size_t target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(unseen_fraction * static_cast<double>(manifest.classes.size()))));
  std::mt19937_64 rng(Mix(manifest.Hash(), seed));

  std::vector<std::string> names;
  for (const auto& [name, members] : groups) names.push_back(name);

  // Hard: whole super-categories go unseen; at least one stays seen.
  if (names.size() < 2) throw ValidationError("SCE split needs at least two super-categories");
  std::vector<std::string> order = names;
  std::shuffle(order.begin(), order.end(), rng);
  std::set<std::string> hard;
  for (std::size_t i = 0; i + 1 < order.size() && hard.size() < target; ++i) {
    hard.insert(groups[order[i]].begin(), groups[order[i]].end());
  }

  // Easy: unseen classes are drawn so each super-category keeps a seen one.
  std::vector<std::vector<std::string>> pools;
  for (const std::string& name : names) {
    std::vector<std::string> members = groups[name];
    if (members.size() < 2) continue;
    std::shuffle(members.begin(), members.end(), rng);
    members.pop_back();
    pools.push_back(std::move(members));
  }
  if (pools.empty()) throw ValidationError("SCS split needs a super-category with at least two classes");
  std::shuffle(pools.begin(), pools.end(), rng);
  std::set<std::string> easy;
  for (std::size_t round = 0; easy.size() < target; ++round) {
    bool any = false;
    for (const auto& pool : pools) {
      if (round < pool.size() && easy.size() < target) {
        easy.insert(pool[round]);
        any = true;
      }
    }
    if (!any) break;
  }

  SuperCategorySplits out{MakeZslSplit(manifest, easy, 0.0, seed), MakeZslSplit(manifest, hard, 0.0, seed)};
  out.shared.name = "scs";
  out.exclusive.name = "sce";
  if (AuditSuperCategories(out.shared, supers).exclusive != 0 ||
      AuditSuperCategories(out.exclusive, supers).shared != 0) {
    throw ValidationError("super-category split failed its audit");
  }
  return out;
}

// --- Annotations ------------------------------------------------------------------

AttachResult AttachAnnotations(const DatasetManifest& manifest, const std::vector<AnnotationRecord>& annotations) {
  std::unordered_map<std::string, const AnnotationRecord*> by_id;
  for (const AnnotationRecord& a : annotations) {
    if (!by_id.emplace(a.id, &a).second) throw ValidationError("duplicate annotation for id '" + a.id + "'");
  }
  AttachResult out;
  out.manifest = manifest;
  std::unordered_set<std::string> used;
  for (ImageRecord& r : out.manifest.records) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      out.unmatched.push_back(r.id);
      continue;
    }
    used.insert(r.id);
    const AnnotationRecord& a = *it->second;
    if (a.teacher) {
      a.teacher->Validate(manifest.vocabulary.size(), std::numeric_limits<std::size_t>::max());
      r.teacher = a.teacher;
    }
    if (!a.keypoints.empty()) r.keypoints = a.keypoints;
    CheckKeypoints(r);
  }
  for (const AnnotationRecord& a : annotations) {
    if (!used.count(a.id)) out.unknown_ids.push_back(a.id);
  }
  return out;
}

PartMerge ParsePartMerge(const std::string& text) {
  PartMerge out;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("part merge line " + std::to_string(line_no) + ": expected source<TAB>part");
    }
    out[Trim(t.substr(0, tab))] = Trim(t.substr(tab + 1));
  }
  return out;
}

PartMerge ReadPartMerge(const std::filesystem::path& path) { return ParsePartMerge(ReadText(path)); }

std::vector<Keypoint> MergeKeypoints(const std::vector<Keypoint>& keypoints, const PartMerge& merge) {
  std::vector<Keypoint> out;
  for (const Keypoint& k : keypoints) {
    const auto it = merge.find(k.part);
    if (it == merge.end()) throw ValidationError("keypoint '" + k.part + "' has no merge target");
    Keypoint m = k;
    m.part = it->second;
    out.push_back(m);
  }
  return out;
}

std::vector<double> PartFrequency(const DatasetManifest& manifest) {
  const std::size_t parts = manifest.vocabulary.size();
  std::vector<double> visible(parts, 0.0);
  std::size_t records = 0;
  for (const ImageRecord& r : manifest.records) {
    if (r.keypoints.empty()) continue;
    ++records;
    std::vector<bool> hit(parts, false);
    for (const Keypoint& k : r.keypoints) {
      const auto j = manifest.vocabulary.IndexOf(k.part);
      if (j && k.visible) hit[*j] = true;
    }
    for (std::size_t j = 0; j < parts; ++j) visible[j] += hit[j];
  }
  if (records == 0) throw ValidationError("part frequency needs records with keypoints");
  for (double& v : visible) v /= static_cast<double>(records);
  return visible;
}

std::string SerializePartFrequency(const PartVocabulary& vocabulary, const std::vector<double>& frequency) {
  if (frequency.size() != vocabulary.size()) throw ShapeError("part frequency needs one value per part");
  std::ostringstream out;
  out << "part\tfrequency\n";
  for (std::size_t j = 0; j < frequency.size(); ++j) out << vocabulary.name(j) << '\t' << FormatNumber(frequency[j]) << '\n';
  return out.str();
}

std::vector<double> ParsePartFrequency(const std::string& text, const PartVocabulary& vocabulary) {
  std::vector<std::optional<double>> got(vocabulary.size());
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#' || t == "part\tfrequency") continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos) throw FormatError("part frequency line " + std::to_string(line_no));
    const auto j = vocabulary.IndexOf(Trim(t.substr(0, tab)));
    if (!j) throw ValidationError("part frequency: unknown part '" + t.substr(0, tab) + "'");
    got[*j] = ParseNumber(Trim(t.substr(tab + 1)), line_no, "frequency");
  }
  std::vector<double> out;
  for (std::size_t j = 0; j < got.size(); ++j) {
    if (!got[j]) throw ValidationError("part frequency: missing part '" + vocabulary.name(j) + "'");
    out.push_back(*got[j]);
  }
  return out;
}

}  // namespace partlang
