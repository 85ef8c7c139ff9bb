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

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "partlang/error.hpp"
#include "partlang/training.hpp"

namespace partlang {

namespace {

using OrderedJson = nlohmann::ordered_json;

constexpr char kCheckpointMagic[] = "peeb-ckpt-1\n";
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void PutU64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t GetU64(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

const char* TemplateName(DescriptorTemplate t) {
  return t == DescriptorTemplate::kPhraseOnly ? "phrase" : "part_colon_phrase";
}

DescriptorTemplate ParseTemplate(const std::string& s) {
  if (s == "phrase") return DescriptorTemplate::kPhraseOnly;
  if (s == "part_colon_phrase") return DescriptorTemplate::kPartColonPhrase;
  throw FormatError("checkpoint: unknown descriptor template " + s);
}

}  // namespace

Checkpoint Checkpoint::Fresh(const ModelConfig& config, const TextEncoder& text_encoder) {
  Checkpoint ck;
  ck.model = Model::Initialize(config);
  ck.text_encoder_id = text_encoder.provider_id();
  ck.text_encoder_digest = text_encoder.ParameterDigest();
  return ck;
}

std::string EncodeCheckpoint(const Checkpoint& ck) {
  const ModelConfig& cfg = ck.model.config();
  OrderedJson header;
  header["format"] = "peeb-ckpt-1";
  header["config"] = {
      {"image_dim", cfg.image_dim},
      {"text_dim", cfg.text_dim},
      {"hidden_dim", cfg.hidden_dim},
      {"parts", cfg.vocabulary.names()},
      {"similarity", SimilarityModeName(cfg.similarity)},
      {"descriptor_template", TemplateName(cfg.descriptor_template)},
      {"init_logit_scale", cfg.init_logit_scale},
      {"seed", cfg.seed},
  };
  OrderedJson tensors = OrderedJson::array();
  std::string payload;
  std::uint64_t offset = 0;
  for (const ConstTensorRef& t : Tensors(ck.model.params())) {
    const std::string group = ParamGroupName(t.group);
    tensors.push_back({{"name", t.name},
                       {"group", group},
                       {"rows", t.value->rows()},
                       {"cols", t.value->cols()},
                       {"offset", offset},
                       {"frozen", ck.frozen_groups.count(group) > 0}});
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      std::uint64_t bits;
      const double v = t.value->data()[i];
      std::memcpy(&bits, &v, sizeof(bits));
      PutU64(payload, bits);
    }
    offset += static_cast<std::uint64_t>(t.value->size());
  }
  header["tensors"] = std::move(tensors);
  header["frozen_groups"] = std::vector<std::string>(ck.frozen_groups.begin(), ck.frozen_groups.end());
  header["text_encoder"] = {{"id", ck.text_encoder_id}, {"digest", HexDigest(ck.text_encoder_digest)}};
  header["rng_state"] = ck.rng_state;
  if (std::isnan(ck.best_val_metric)) {
    header["best_val_metric"] = nullptr;
  } else {
    header["best_val_metric"] = ck.best_val_metric;
  }
  header["stages_completed"] = ck.stages_completed;
  header["steps"] = ck.steps;

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, kMagicLen);
  PutU64(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint DecodeCheckpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0) {
    throw FormatError("checkpoint: missing peeb-ckpt-1 header");
  }
  const std::uint64_t header_len = GetU64(bytes, kMagicLen);
  const std::size_t header_start = kMagicLen + 8;
  if (bytes.size() < header_start + header_len) throw FormatError("checkpoint: truncated header");
  OrderedJson header;
  try {
    header = OrderedJson::parse(bytes.substr(header_start, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const std::size_t payload_start = header_start + header_len;

  try {
    if (header.at("format") != "peeb-ckpt-1") throw FormatError("checkpoint: unsupported format");
    const auto& c = header.at("config");
    ModelConfig cfg;
    cfg.image_dim = c.at("image_dim").get<std::size_t>();
    cfg.text_dim = c.at("text_dim").get<std::size_t>();
    cfg.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    cfg.vocabulary = PartVocabulary(c.at("parts").get<std::vector<std::string>>());
    cfg.similarity = ParseSimilarityMode(c.at("similarity").get<std::string>());
    cfg.descriptor_template = ParseTemplate(c.at("descriptor_template").get<std::string>());
    cfg.init_logit_scale = c.at("init_logit_scale").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();

    // Shapes come from a fresh init; values from the payload.
    Model shaped = Model::Initialize(cfg);
    ModelParams params = shaped.params();
    auto refs = Tensors(params);
    const auto& dir = header.at("tensors");
    if (dir.size() != refs.size()) throw FormatError("checkpoint: tensor count mismatch");
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& entry = dir[k];
      if (entry.at("name").get<std::string>() != refs[k].name) {
        throw FormatError("checkpoint: unexpected tensor " + entry.at("name").get<std::string>());
      }
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows != refs[k].value->rows() || cols != refs[k].value->cols()) {
        throw FormatError("checkpoint: shape mismatch for " + refs[k].name);
      }
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t begin = payload_start + offset * 8;
      if (bytes.size() < begin + static_cast<std::size_t>(rows * cols) * 8) {
        throw FormatError("checkpoint: truncated payload for " + refs[k].name);
      }
      for (Eigen::Index i = 0; i < rows * cols; ++i) {
        const std::uint64_t bits = GetU64(bytes, begin + static_cast<std::size_t>(i) * 8);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        refs[k].value->data()[i] = v;
      }
    }

    Checkpoint ck;
    ck.model = Model(cfg, std::move(params));
    ck.frozen_groups.clear();
    for (const auto& g : header.at("frozen_groups")) ck.frozen_groups.insert(g.get<std::string>());
    if (!ck.frozen_groups.count(kTextEncoderGroup)) {
      throw ValidationError("checkpoint: text encoder must be frozen");
    }
    ck.text_encoder_id = header.at("text_encoder").at("id").get<std::string>();
    ck.text_encoder_digest =
        std::stoull(header.at("text_encoder").at("digest").get<std::string>(), nullptr, 16);
    ck.rng_state = header.at("rng_state").get<std::string>();
    const auto& metric = header.at("best_val_metric");
    ck.best_val_metric = metric.is_null() ? std::numeric_limits<double>::quiet_NaN() : metric.get<double>();
    ck.stages_completed = header.at("stages_completed").get<std::vector<std::string>>();
    ck.steps = header.at("steps").get<long>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

void SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp.string());
    const std::string bytes = EncodeCheckpoint(checkpoint);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return DecodeCheckpoint(ss.str());
}

}  // namespace partlang
