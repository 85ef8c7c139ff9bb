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

#ifndef PARTLANG_DESCRIPTOR_STORE_HPP_
#define PARTLANG_DESCRIPTOR_STORE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace partlang {

// Ordered, non-empty list of unique part names. The position of a part in
// this list is the index used for selections, boxes and scores.
class PartVocabulary {
 public:
  PartVocabulary() = default;
  // Throws ValidationError when empty or when names repeat.
  explicit PartVocabulary(std::vector<std::string> parts);

  static PartVocabulary Birds();  // the 12 bird parts
  static PartVocabulary Dogs();   // the 6 dog parts

  std::size_t size() const { return parts_.size(); }
  const std::string& name(std::size_t i) const { return parts_.at(i); }
  const std::vector<std::string>& names() const { return parts_; }
  std::optional<std::size_t> IndexOf(std::string_view part) const;

  bool operator==(const PartVocabulary& other) const { return parts_ == other.parts_; }

 private:
  std::vector<std::string> parts_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One class's phrases, aligned with the vocabulary order.
struct PartDescriptorSet {
  std::vector<std::string> phrases;
  bool operator==(const PartDescriptorSet&) const = default;
};

// Immutable value: the editable bottleneck. Classes keep insertion order,
// which fixes the class-major layout of descriptor embeddings.
class DescriptorLibrary {
 public:
  DescriptorLibrary() = default;

  // Validates every class against the vocabulary. `classes` maps part name
  // to phrase; a missing part raises ValidationError naming class and part.
  static DescriptorLibrary Create(
      PartVocabulary vocabulary,
      const std::vector<std::pair<std::string, std::map<std::string, std::string>>>& classes);

  const PartVocabulary& vocabulary() const { return vocabulary_; }
  std::size_t num_classes() const { return names_.size(); }
  std::size_t num_parts() const { return vocabulary_.size(); }
  const std::string& class_name(std::size_t c) const { return names_.at(c); }
  const std::vector<std::string>& class_names() const { return names_; }
  const PartDescriptorSet& descriptors(std::size_t c) const { return sets_.at(c); }
  const std::string& phrase(std::size_t c, std::size_t part) const { return sets_.at(c).phrases.at(part); }
  std::optional<std::size_t> FindClass(std::string_view name) const;

  bool operator==(const DescriptorLibrary& other) const {
    return vocabulary_ == other.vocabulary_ && names_ == other.names_ && sets_ == other.sets_;
  }

 private:
  friend class LibraryBuilder;
  void Append(std::string name, PartDescriptorSet set);

  PartVocabulary vocabulary_;
  std::vector<std::string> names_;
  std::vector<PartDescriptorSet> sets_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parses `{"parts": [...], "classes": {"<name>": {"<part>": "<phrase>"}}}`.
// FormatError carries line/column (and class, when known) context.
DescriptorLibrary LoadLibrary(std::string_view content);
DescriptorLibrary LoadLibraryFile(const std::filesystem::path& path);
std::string SaveLibrary(const DescriptorLibrary& lib);
void SaveLibraryFile(const DescriptorLibrary& lib, const std::filesystem::path& path);

DescriptorLibrary EditDescriptor(const DescriptorLibrary& lib, std::string_view class_name,
                                 std::string_view part, std::string_view phrase);
DescriptorLibrary CloneClass(const DescriptorLibrary& lib, std::string_view src,
                             std::string_view new_name);
DescriptorLibrary AddClass(const DescriptorLibrary& lib, std::string_view name,
                           const std::map<std::string, std::string>& phrases);
DescriptorLibrary DeleteClass(const DescriptorLibrary& lib, std::string_view name);

// Per part, applies an independent seeded permutation of the phrases across
// classes. Requires at least two classes.
DescriptorLibrary RandomizeDescriptors(const DescriptorLibrary& lib, std::uint64_t seed);

struct PhraseChange {
  std::string class_name;
  std::string part;
  std::string before;
  std::string after;
  bool operator==(const PhraseChange&) const = default;
};

struct LibraryDiff {
  std::vector<std::string> added_classes;
  std::vector<std::string> removed_classes;
  // Phrase changes on classes present in both libraries.
  std::vector<PhraseChange> changed;
  bool empty() const { return added_classes.empty() && removed_classes.empty() && changed.empty(); }
};

LibraryDiff DiffLibraries(const DescriptorLibrary& before, const DescriptorLibrary& after);

enum class DescriptorTemplate {
  kPartColonPhrase,  // "crown: distinctive red crest"
  kPhraseOnly,       // "distinctive red crest"
};

std::string DescriptorText(const std::string& part, const std::string& phrase,
                           DescriptorTemplate tmpl);

// All descriptor strings, class-major and part-minor (row c * P + j).
std::vector<std::string> DescriptorTexts(const DescriptorLibrary& lib, DescriptorTemplate tmpl);

}  // namespace partlang

#endif  // PARTLANG_DESCRIPTOR_STORE_HPP_
