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

#include "partlang/descriptor_store.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "partlang/error.hpp"

namespace partlang {

using OrderedJson = nlohmann::ordered_json;

PartVocabulary::PartVocabulary(std::vector<std::string> parts) : parts_(std::move(parts)) {
  if (parts_.empty()) throw ValidationError("part vocabulary is empty");
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (parts_[i].empty()) throw ValidationError("part vocabulary contains an empty name");
    if (!index_.emplace(parts_[i], i).second) {
      throw ValidationError("duplicate part name in vocabulary: " + parts_[i]);
    }
  }
}

PartVocabulary PartVocabulary::Birds() {
  return PartVocabulary({"back", "beak", "belly", "breast", "crown", "forehead", "eyes", "legs",
                         "wings", "nape", "tail", "throat"});
}

PartVocabulary PartVocabulary::Dogs() {
  return PartVocabulary({"head", "body", "legs", "tail", "muzzle", "ears"});
}

std::optional<std::size_t> PartVocabulary::IndexOf(std::string_view part) const {
  auto it = index_.find(std::string(part));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> DescriptorLibrary::FindClass(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void DescriptorLibrary::Append(std::string name, PartDescriptorSet set) {
  if (name.empty()) throw ValidationError("class name is empty");
  if (set.phrases.size() != vocabulary_.size()) {
    throw ValidationError("class '" + name + "' has " + std::to_string(set.phrases.size()) +
                          " phrases, vocabulary has " + std::to_string(vocabulary_.size()));
  }
  for (std::size_t j = 0; j < set.phrases.size(); ++j) {
    if (set.phrases[j].empty()) {
      throw ValidationError("empty phrase for class '" + name + "', part '" + vocabulary_.name(j) + "'");
    }
  }
  if (!index_.emplace(name, names_.size()).second) {
    throw ConflictError("duplicate class name: " + name);
  }
  names_.push_back(std::move(name));
  sets_.push_back(std::move(set));
}

// Construction helper with access to the private append path.
class LibraryBuilder {
 public:
  explicit LibraryBuilder(PartVocabulary vocabulary) { lib_.vocabulary_ = std::move(vocabulary); }

  void Add(std::string name, PartDescriptorSet set) { lib_.Append(std::move(name), std::move(set)); }

  void AddFromMap(const std::string& name, const std::map<std::string, std::string>& phrases) {
    const PartVocabulary& vocab = lib_.vocabulary_;
    PartDescriptorSet set;
    set.phrases.reserve(vocab.size());
    for (const std::string& part : vocab.names()) {
      auto it = phrases.find(part);
      if (it == phrases.end()) {
        throw ValidationError("class '" + name + "' is missing part '" + part + "'");
      }
      set.phrases.push_back(it->second);
    }
    for (const auto& [part, phrase] : phrases) {
      if (!vocab.IndexOf(part)) {
        throw ValidationError("class '" + name + "' has part '" + part + "' not in the vocabulary");
      }
    }
    Add(name, std::move(set));
  }

  DescriptorLibrary Build() && { return std::move(lib_); }

 private:
  DescriptorLibrary lib_;
};

DescriptorLibrary DescriptorLibrary::Create(
    PartVocabulary vocabulary,
    const std::vector<std::pair<std::string, std::map<std::string, std::string>>>& classes) {
  LibraryBuilder builder(std::move(vocabulary));
  for (const auto& [name, phrases] : classes) builder.AddFromMap(name, phrases);
  return std::move(builder).Build();
}

namespace {

std::string LineContext(std::string_view content, std::size_t byte) {
  byte = std::min(byte, content.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte; ++i) {
    if (content[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

LibraryBuilder BuilderFrom(const DescriptorLibrary& lib, std::size_t skip = static_cast<std::size_t>(-1)) {
  LibraryBuilder builder(lib.vocabulary());
  for (std::size_t c = 0; c < lib.num_classes(); ++c) {
    if (c == skip) continue;
    builder.Add(lib.class_name(c), lib.descriptors(c));
  }
  return builder;
}

}  // namespace

DescriptorLibrary LoadLibrary(std::string_view content) {
  OrderedJson doc;
  try {
    doc = OrderedJson::parse(content.begin(), content.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("descriptor file: " + LineContext(content, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                      e.what());
  }
  if (!doc.is_object()) throw FormatError("descriptor file: top level must be an object");
  if (!doc.contains("parts") || !doc["parts"].is_array()) {
    throw FormatError("descriptor file: missing \"parts\" array");
  }
  if (!doc.contains("classes") || !doc["classes"].is_object()) {
    throw FormatError("descriptor file: missing \"classes\" object");
  }
  std::vector<std::string> parts;
  for (const auto& p : doc["parts"]) {
    if (!p.is_string()) throw FormatError("descriptor file: \"parts\" entries must be strings");
    parts.push_back(p.get<std::string>());
  }
  LibraryBuilder builder{PartVocabulary(std::move(parts))};
  for (const auto& [name, entry] : doc["classes"].items()) {
    if (!entry.is_object()) {
      throw FormatError("descriptor file: class '" + name + "' must map part names to phrases");
    }
    std::map<std::string, std::string> phrases;
    for (const auto& [part, phrase] : entry.items()) {
      if (!phrase.is_string()) {
        throw FormatError("descriptor file: class '" + name + "', part '" + part + "': phrase must be a string");
      }
      if (!phrases.emplace(part, phrase.get<std::string>()).second) {
        throw FormatError("descriptor file: class '" + name + "' repeats part '" + part + "'");
      }
    }
    builder.AddFromMap(name, phrases);
  }
  return std::move(builder).Build();
}

DescriptorLibrary LoadLibraryFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open descriptor file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return LoadLibrary(ss.str());
}

std::string SaveLibrary(const DescriptorLibrary& lib) {
  OrderedJson doc;
  doc["parts"] = lib.vocabulary().names();
  doc["classes"] = OrderedJson::object();
  for (std::size_t c = 0; c < lib.num_classes(); ++c) {
    OrderedJson entry = OrderedJson::object();
    for (std::size_t j = 0; j < lib.num_parts(); ++j) entry[lib.vocabulary().name(j)] = lib.phrase(c, j);
    doc["classes"][lib.class_name(c)] = std::move(entry);
  }
  return doc.dump(2) + "\n";
}

void SaveLibraryFile(const DescriptorLibrary& lib, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write descriptor file " + path.string());
  out << SaveLibrary(lib);
}

DescriptorLibrary EditDescriptor(const DescriptorLibrary& lib, std::string_view class_name,
                                 std::string_view part, std::string_view phrase) {
  auto c = lib.FindClass(class_name);
  if (!c) throw NotFoundError("unknown class: " + std::string(class_name));
  auto j = lib.vocabulary().IndexOf(part);
  if (!j) throw NotFoundError("unknown part: " + std::string(part));
  if (phrase.empty()) throw ValidationError("phrase must be non-empty");

  LibraryBuilder builder(lib.vocabulary());
  for (std::size_t k = 0; k < lib.num_classes(); ++k) {
    PartDescriptorSet set = lib.descriptors(k);
    if (k == *c) set.phrases[*j] = std::string(phrase);
    builder.Add(lib.class_name(k), std::move(set));
  }
  return std::move(builder).Build();
}

DescriptorLibrary CloneClass(const DescriptorLibrary& lib, std::string_view src,
                             std::string_view new_name) {
  auto c = lib.FindClass(src);
  if (!c) throw NotFoundError("unknown class: " + std::string(src));
  if (lib.FindClass(new_name)) throw ConflictError("class already exists: " + std::string(new_name));
  LibraryBuilder builder = BuilderFrom(lib);
  builder.Add(std::string(new_name), lib.descriptors(*c));
  return std::move(builder).Build();
}

DescriptorLibrary AddClass(const DescriptorLibrary& lib, std::string_view name,
                           const std::map<std::string, std::string>& phrases) {
  if (lib.FindClass(name)) throw ConflictError("class already exists: " + std::string(name));
  LibraryBuilder builder = BuilderFrom(lib);
  builder.AddFromMap(std::string(name), phrases);
  return std::move(builder).Build();
}

DescriptorLibrary DeleteClass(const DescriptorLibrary& lib, std::string_view name) {
  auto c = lib.FindClass(name);
  if (!c) throw NotFoundError("unknown class: " + std::string(name));
  return std::move(BuilderFrom(lib, *c)).Build();
}

DescriptorLibrary RandomizeDescriptors(const DescriptorLibrary& lib, std::uint64_t seed) {
  const std::size_t n = lib.num_classes();
  if (n < 2) throw ValidationError("randomization needs at least 2 classes");
  std::vector<PartDescriptorSet> sets(n);
  for (std::size_t c = 0; c < n; ++c) sets[c].phrases.resize(lib.num_parts());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < lib.num_parts(); ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t c = 0; c < n; ++c) sets[c].phrases[j] = lib.phrase(perm[c], j);
  }
  LibraryBuilder builder(lib.vocabulary());
  for (std::size_t c = 0; c < n; ++c) builder.Add(lib.class_name(c), std::move(sets[c]));
  return std::move(builder).Build();
}

LibraryDiff DiffLibraries(const DescriptorLibrary& before, const DescriptorLibrary& after) {
  LibraryDiff diff;
  for (const std::string& name : after.class_names()) {
    if (!before.FindClass(name)) diff.added_classes.push_back(name);
  }
  for (const std::string& name : before.class_names()) {
    auto a = after.FindClass(name);
    if (!a) {
      diff.removed_classes.push_back(name);
      continue;
    }
    const std::size_t b = *before.FindClass(name);
    for (std::size_t j = 0; j < before.num_parts(); ++j) {
      const std::string& part = before.vocabulary().name(j);
      auto aj = after.vocabulary().IndexOf(part);
      if (!aj) continue;
      if (before.phrase(b, j) != after.phrase(*a, *aj)) {
        diff.changed.push_back({name, part, before.phrase(b, j), after.phrase(*a, *aj)});
      }
    }
  }
  return diff;
}

std::string DescriptorText(const std::string& part, const std::string& phrase,
                           DescriptorTemplate tmpl) {
  if (tmpl == DescriptorTemplate::kPhraseOnly) return phrase;
  return part + ": " + phrase;
}

std::vector<std::string> DescriptorTexts(const DescriptorLibrary& lib, DescriptorTemplate tmpl) {
  std::vector<std::string> texts;
  texts.reserve(lib.num_classes() * lib.num_parts());
  for (std::size_t c = 0; c < lib.num_classes(); ++c) {
    for (std::size_t j = 0; j < lib.num_parts(); ++j) {
      texts.push_back(DescriptorText(lib.vocabulary().name(j), lib.phrase(c, j), tmpl));
    }
  }
  return texts;
}

}  // namespace partlang
