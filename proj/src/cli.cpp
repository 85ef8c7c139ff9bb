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

#include "partlang/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "partlang/backend.hpp"
#include "partlang/data_pipeline.hpp"
#include "partlang/error.hpp"
#include "partlang/evaluation.hpp"
#include "partlang/service.hpp"
#include "partlang/synthetic.hpp"
#include "partlang/training.hpp"

namespace partlang {
namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string backend = "stub";
  std::uint64_t seed = 0;
  std::size_t text_dim = 32;
  std::size_t image_dim = 32;
  std::size_t grid = 4;
  std::size_t synthetic_classes = 8;
  std::string descriptor_template = "part_colon_phrase";
};

void AddCommon(CLI::App* app, CommonOptions& o) {
  app->add_option("--backend", o.backend, "Encoder backend")->check(CLI::IsMember({"stub", "synthetic"}));
  app->add_option("--seed", o.seed, "Seed for every random choice");
  app->add_option("--text-dim", o.text_dim, "Text embedding width (new models)")->check(CLI::PositiveNumber);
  app->add_option("--image-dim", o.image_dim, "Patch embedding width (new models)")->check(CLI::PositiveNumber);
  app->add_option("--grid", o.grid, "Stub patch grid side")->check(CLI::PositiveNumber);
  app->add_option("--synthetic-classes", o.synthetic_classes, "Classes in the synthetic world")
      ->check(CLI::PositiveNumber);
  app->add_option("--template", o.descriptor_template, "Descriptor text template (new models)")
      ->check(CLI::IsMember({"phrase", "part_colon_phrase"}));
}

DescriptorTemplate ParseTemplateName(const std::string& s) {
  return s == "phrase" ? DescriptorTemplate::kPhraseOnly : DescriptorTemplate::kPartColonPhrase;
}

Backend BackendFor(const CommonOptions& o, std::size_t text_dim, std::size_t image_dim, DescriptorTemplate tmpl) {
  BackendOptions b;
  b.kind = o.backend;
  b.text_dim = text_dim;
  b.image_dim = image_dim;
  b.grid = o.grid;
  b.seed = o.seed;
  b.synthetic_classes = o.synthetic_classes;
  b.descriptor_template = tmpl;
  return MakeBackend(b);
}

struct Loaded {
  Checkpoint checkpoint;
  Backend backend;
};

// Opens a checkpoint and rebuilds the backend it was trained against.
Loaded LoadModel(const CommonOptions& o, const std::string& path) {
  Loaded l;
  l.checkpoint = LoadCheckpoint(path);
  const ModelConfig& cfg = l.checkpoint.model.config();
  l.backend = BackendFor(o, cfg.text_dim, cfg.image_dim, cfg.descriptor_template);
  if (l.backend.text->provider_id() != l.checkpoint.text_encoder_id ||
      l.backend.text->ParameterDigest() != l.checkpoint.text_encoder_digest) {
    throw ConfigError("checkpoint was built with text encoder '" + l.checkpoint.text_encoder_id + "' (digest " +
                      HexDigest(l.checkpoint.text_encoder_digest) + "), backend provides '" +
                      l.backend.text->provider_id() + "'");
  }
  if (l.backend.image->dim() != cfg.image_dim) {
    throw ConfigError("image encoder width " + std::to_string(l.backend.image->dim()) + " does not match the model");
  }
  return l;
}

std::shared_ptr<const DescriptorLibrary> LoadLib(const std::string& path) {
  return std::make_shared<const DescriptorLibrary>(LoadLibraryFile(path));
}

// Data selection shared by train / eval / ablate.
struct DataOptions {
  std::string manifest;
  std::string annotations;
  std::string split;
  std::string part = "test";
};

void AddData(CLI::App* app, DataOptions& d, bool with_part) {
  app->add_option("--manifest", d.manifest, "Dataset manifest (TSV)")->required()->check(CLI::ExistingFile);
  app->add_option("--annotations", d.annotations, "Teacher annotations (JSON Lines)")->check(CLI::ExistingFile);
  app->add_option("--split", d.split, "Split file (JSON)")->check(CLI::ExistingFile);
  if (with_part) {
    app->add_option("--part", d.part, "Split part to use")->check(CLI::IsMember({"train", "val", "test", "all"}));
  }
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DatasetManifest LoadManifest(const DataOptions& d, const PartVocabulary& vocab) {
  DatasetManifest m = ReadManifest(d.manifest, vocab);
  if (!d.annotations.empty()) {
    AttachResult a = AttachAnnotations(m, ReadAnnotationFile(d.annotations));
    m = std::move(a.manifest);
  }
  return m;
}

std::optional<SplitSpec> LoadSplit(const DataOptions& d) {
  if (d.split.empty()) return std::nullopt;
  return ParseSplit(ReadFile(d.split));
}

const std::set<std::string>* SplitIds(const std::optional<SplitSpec>& split, const std::string& part) {
  if (!split || part == "all") return nullptr;
  if (part == "train") return &split->train_ids;
  if (part == "val") return &split->val_ids;
  return &split->test_ids;
}

std::vector<TrainingExample> Examples(const DatasetManifest& m, const std::set<std::string>* ids,
                                      const DescriptorLibrary& lib, const ImageEncoder& encoder,
                                      const fs::path& base_dir) {
  std::vector<TrainingExample> out;
  for (const ImageRecord& r : m.records) {
    if (ids && !ids->count(r.id)) continue;
    const auto label = lib.FindClass(r.label);
    if (!label) throw ValidationError("record '" + r.id + "' has label '" + r.label + "' missing from the library");
    ImageInput in{r.id, "", {}};
    if (!r.path.empty() && r.path != "-") in.path = base_dir / r.path;
    TrainingExample ex;
    ex.id = r.id;
    ex.raw_patches = encoder.Encode(in);
    ex.label = static_cast<int>(*label);
    ex.teacher = r.teacher;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> LoadExamples(const DataOptions& d, const DescriptorLibrary& lib,
                                          const ImageEncoder& encoder, const std::string& part) {
  const DatasetManifest m = LoadManifest(d, lib.vocabulary());
  const auto split = LoadSplit(d);
  auto ex = Examples(m, SplitIds(split, part), lib, encoder, fs::path(d.manifest).parent_path());
  if (ex.empty()) throw ValidationError("no records selected from " + d.manifest);
  return ex;
}

void PrintJson(std::ostream& out, const Json& j) { out << j.dump(2) << "\n"; }

Json ReportJson(const MetricReport& r) { return Json::parse(ReportToJson(r)); }

void EmitReports(std::ostream& out, const std::vector<MetricReport>& reports, const std::string& csv) {
  for (const MetricReport& r : reports) r.Validate();
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw InputError("cannot write " + csv);
    WriteReportsCsv(f, reports);
  }
  if (reports.size() == 1) {
    PrintJson(out, ReportJson(reports.front()));
  } else {
    Json all = Json::array();
    for (const MetricReport& r : reports) all.push_back(ReportJson(r));
    PrintJson(out, all);
  }
}

std::string Fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::pair<double, double> ParseWxH(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw FormatError("expected WxH, got '" + s + "'");
  try {
    return {std::stod(s.substr(0, x)), std::stod(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw FormatError("expected WxH, got '" + s + "'");
  }
}

std::set<std::string> ReadIdSet(const std::string& path) {
  const auto lines = ReadLineList(path);
  return {lines.begin(), lines.end()};
}

void WriteOut(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path);
  f << text;
}

// --- subcommands --------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
};

void SetupSynth(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("synth", "Write a synthetic dataset (library, manifest, annotations)");
  auto o = std::make_shared<CommonOptions>();
  o->backend = "synthetic";
  auto dir = std::make_shared<std::string>();
  auto per_class = std::make_shared<std::size_t>(20);
  auto first = std::make_shared<std::uint64_t>(0);
  auto val_fraction = std::make_shared<double>(0.2);
  auto test_per_class = std::make_shared<std::size_t>(10);
  AddCommon(cmd, *o);
  cmd->add_option("--out-dir", *dir, "Output directory")->required();
  cmd->add_option("--per-class", *per_class, "Training images per class")->check(CLI::PositiveNumber);
  cmd->add_option("--test-per-class", *test_per_class, "Test images per class");
  cmd->add_option("--first-index", *first, "First sample index");
  cmd->add_option("--val-fraction", *val_fraction, "Share of training images held out for validation")
      ->check(CLI::Range(0.0, 0.9));
  cmd->callback([=, &ctx] {
    SyntheticConfig sc;
    sc.num_classes = o->synthetic_classes;
    sc.image_dim = o->image_dim;
    sc.text_dim = o->text_dim;
    sc.seed = o->seed;
    const SyntheticWorld world(sc);
    fs::create_directories(*dir);
    std::vector<int> classes;
    for (std::size_t c = 0; c < world.num_classes(); ++c) classes.push_back(static_cast<int>(c));
    const std::size_t per = *per_class + *test_per_class;
    std::vector<ImageRecord> records;
    std::vector<AnnotationRecord> annotations;
    std::set<std::string> test_ids;
    const double px = world.config().image_pixels;
    for (int c : classes) {
      for (std::size_t i = 0; i < per; ++i) {
        const SyntheticSample s = world.Sample(c, *first + i);
        ImageRecord r;
        r.id = s.id;
        r.path = "-";
        r.label = world.ClassName(c);
        r.width = r.height = world.config().image_pixels;
        const CornerBox ob = s.teacher.object_box.ToCorners();
        r.object_box = PixelBox{ob.x0 * px, ob.y0 * px, (ob.x1 - ob.x0) * px, (ob.y1 - ob.y0) * px};
        r.keypoints = s.keypoints;
        records.push_back(std::move(r));
        annotations.push_back({s.id, s.teacher, s.keypoints});
        if (i >= *per_class) test_ids.insert(s.id);
      }
    }
    const DatasetManifest m = DatasetManifest::FromRecords(records, world.config().vocabulary);
    const fs::path d(*dir);
    SaveLibraryFile(world.Library(), d / "library.json");
    WriteManifest(m, d / "manifest.tsv");
    WriteAnnotationFile(d / "annotations.jsonl", annotations);
    WriteOut(ctx.out, (d / "part_frequency.tsv").string(),
             SerializePartFrequency(world.config().vocabulary, PartFrequency(m)));
    const SplitSpec split = MakeGzslSplit(m, test_ids, *val_fraction, o->seed);
    WriteOut(ctx.out, (d / "split.json").string(), SerializeSplit(split));
    ctx.out << "wrote " << records.size() << " records for " << classes.size() << " classes to " << *dir << "\n";
  });
}

void SetupInit(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("init", "Create a freshly initialized checkpoint");
  auto o = std::make_shared<CommonOptions>();
  auto out_path = std::make_shared<std::string>();
  auto hidden = std::make_shared<std::size_t>(64);
  auto similarity = std::make_shared<std::string>("cosine");
  auto scale = std::make_shared<double>(10.0);
  AddCommon(cmd, *o);
  cmd->add_option("--out", *out_path, "Checkpoint path")->required();
  cmd->add_option("--hidden-dim", *hidden, "MLP hidden width")->check(CLI::PositiveNumber);
  cmd->add_option("--similarity", *similarity, "Part-name similarity")->check(CLI::IsMember({"cosine", "dot"}));
  cmd->add_option("--init-logit-scale", *scale, "Initial selection logit scale");
  cmd->callback([=, &ctx] {
    const DescriptorTemplate tmpl = ParseTemplateName(o->descriptor_template);
    const Backend b = BackendFor(*o, o->text_dim, o->image_dim, tmpl);
    ModelConfig cfg;
    cfg.image_dim = b.image->dim();
    cfg.text_dim = b.text->dim();
    cfg.hidden_dim = *hidden;
    cfg.similarity = ParseSimilarityMode(*similarity);
    cfg.descriptor_template = tmpl;
    cfg.init_logit_scale = *scale;
    cfg.seed = o->seed;
    const Checkpoint ck = Checkpoint::Fresh(cfg, *b.text);
    SaveCheckpoint(ck, *out_path);
    ctx.out << "wrote " << *out_path << " (" << ck.model.ParameterCount() << " parameters)\n";
  });
}

void SetupTrain(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("train", "Run one training stage");
  auto o = std::make_shared<CommonOptions>();
  auto d = std::make_shared<DataOptions>();
  auto ckpt = std::make_shared<std::string>();
  auto out_path = std::make_shared<std::string>();
  auto config = std::make_shared<std::string>();
  auto library = std::make_shared<std::string>();
  auto stage = std::make_shared<std::string>();
  auto log = std::make_shared<std::string>();
  AddCommon(cmd, *o);
  AddData(cmd, *d, false);
  cmd->add_option("--checkpoint", *ckpt, "Starting checkpoint")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", *out_path, "Output checkpoint")->required();
  cmd->add_option("--config", *config, "Training config (YAML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--library", *library, "Descriptor library (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--stage", *stage, "Override the config's stage")
      ->check(CLI::IsMember({"pretrain1", "pretrain2", "finetune"}));
  cmd->add_option("--log", *log, "Per-epoch CSV log");
  // Overrides for the config file keys of the same name.
  auto ov = std::make_shared<TrainConfig>();
  cmd->add_option("--epochs", ov->epochs);
  cmd->add_option("--batch-size", ov->batch_size);
  cmd->add_option("--val-batch-size", ov->val_batch_size);
  cmd->add_option("--learning-rate", ov->learning_rate);
  cmd->add_option("--weight-decay", ov->weight_decay);
  cmd->add_option("--early-stop-patience", ov->early_stop_patience);
  cmd->add_option("--in-batch-classes", ov->in_batch_classes);
  cmd->add_option("--max-steps", ov->max_steps);
  cmd->add_option("--val-fraction", ov->val_fraction);
  cmd->callback([=, &ctx] {
    TrainConfig tc = LoadTrainConfig(*config);
    if (!stage->empty()) tc.stage = ParseStage(*stage);
    if (cmd->count("--seed")) tc.seed = o->seed;
    if (cmd->count("--epochs")) tc.epochs = ov->epochs;
    if (cmd->count("--batch-size")) tc.batch_size = ov->batch_size;
    if (cmd->count("--val-batch-size")) tc.val_batch_size = ov->val_batch_size;
    if (cmd->count("--learning-rate")) tc.learning_rate = ov->learning_rate;
    if (cmd->count("--weight-decay")) tc.weight_decay = ov->weight_decay;
    if (cmd->count("--early-stop-patience")) tc.early_stop_patience = ov->early_stop_patience;
    if (cmd->count("--in-batch-classes")) tc.in_batch_classes = ov->in_batch_classes;
    if (cmd->count("--max-steps")) tc.max_steps = ov->max_steps;
    if (cmd->count("--val-fraction")) tc.val_fraction = ov->val_fraction;
    tc.Validate();
    const Loaded l = LoadModel(*o, *ckpt);
    const auto lib = LoadLib(*library);
    const DatasetManifest m = LoadManifest(*d, lib->vocabulary());
    const auto split = LoadSplit(*d);
    const fs::path base = fs::path(d->manifest).parent_path();
    auto train = Examples(m, split ? &split->train_ids : nullptr, *lib, *l.backend.image, base);
    std::vector<TrainingExample> val;
    if (split) val = Examples(m, &split->val_ids, *lib, *l.backend.image, base);
    const TrainingData data = TrainingData::Build(lib, *l.backend.text, l.checkpoint.model.config().descriptor_template,
                                                  std::move(train), std::move(val));
    std::ofstream log_file;
    if (!log->empty()) {
      log_file.open(*log);
      if (!log_file) throw InputError("cannot write " + *log);
    }
    const TrainResult r = RunStage(data, tc, l.checkpoint, log->empty() ? nullptr : &log_file);
    SaveCheckpoint(r.checkpoint, *out_path);
    Json j{{"stage", StageName(tc.stage)},
           {"epochs_run", r.epochs_run},
           {"steps", r.steps},
           {"early_stopped", r.early_stopped},
           {"train_examples", data.train.size()},
           {"val_examples", data.val.size()}};
    j["best_val_metric"] =
        std::isnan(r.checkpoint.best_val_metric) ? Json(nullptr) : Json(r.checkpoint.best_val_metric);
    j["checkpoint"] = *out_path;
    PrintJson(ctx.out, j);
  });
}

void SetupEval(CLI::App& app, Context& ctx) {
  auto* eval = app.add_subcommand("eval", "Metrics");
  eval->require_subcommand(1);

  auto* harmonic = eval->add_subcommand("harmonic", "Harmonic mean of seen and unseen accuracy (percent)");
  auto seen = std::make_shared<double>();
  auto unseen = std::make_shared<double>();
  auto ho = std::make_shared<CommonOptions>();
  AddCommon(harmonic, *ho);
  harmonic->add_option("--seen", *seen, "Seen-class accuracy, percent")->required();
  harmonic->add_option("--unseen", *unseen, "Unseen-class accuracy, percent")->required();
  harmonic->callback([=, &ctx] { ctx.out << Fixed(HarmonicMean(*seen, *unseen), 2) << "\n"; });

  auto* acc = eval->add_subcommand("accuracy", "Top-1 accuracy of a checkpoint");
  auto o = std::make_shared<CommonOptions>();
  auto d = std::make_shared<DataOptions>();
  auto ckpt = std::make_shared<std::string>();
  auto library = std::make_shared<std::string>();
  auto csv = std::make_shared<std::string>();
  AddCommon(acc, *o);
  AddData(acc, *d, true);
  acc->add_option("--checkpoint", *ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  acc->add_option("--library", *library, "Descriptor library")->required()->check(CLI::ExistingFile);
  acc->add_option("--csv", *csv, "Also write the report as CSV");
  acc->callback([=, &ctx] {
    const Loaded l = LoadModel(*o, *ckpt);
    const auto lib = LoadLib(*library);
    auto ex = LoadExamples(*d, *lib, *l.backend.image, d->part);
    const TrainingData data =
        TrainingData::Build(lib, *l.backend.text, l.checkpoint.model.config().descriptor_template, {}, {});
    EmitReports(ctx.out, {AccuracyReport(l.checkpoint.model, data, ex, "top1")}, *csv);
  });

  auto* gzsl = eval->add_subcommand("gzsl", "Seen / unseen accuracy and their harmonic mean over the test split");
  auto go = std::make_shared<CommonOptions>();
  auto gd = std::make_shared<DataOptions>();
  auto gckpt = std::make_shared<std::string>();
  auto glib = std::make_shared<std::string>();
  auto gcsv = std::make_shared<std::string>();
  AddCommon(gzsl, *go);
  AddData(gzsl, *gd, false);
  gzsl->add_option("--checkpoint", *gckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  gzsl->add_option("--library", *glib, "Descriptor library")->required()->check(CLI::ExistingFile);
  gzsl->add_option("--csv", *gcsv, "Also write the report as CSV");
  gzsl->callback([=, &ctx] {
    if (gd->split.empty()) throw ConfigError("eval gzsl needs --split");
    const Loaded l = LoadModel(*go, *gckpt);
    const auto lib = LoadLib(*glib);
    const DatasetManifest m = LoadManifest(*gd, lib->vocabulary());
    const SplitSpec split = *LoadSplit(*gd);
    const auto ex = Examples(m, &split.test_ids, *lib, *l.backend.image, fs::path(gd->manifest).parent_path());
    const TrainingData data =
        TrainingData::Build(lib, *l.backend.text, l.checkpoint.model.config().descriptor_template, {}, {});
    const auto pred = PredictLabels(l.checkpoint.model, data, ex);
    std::vector<int> sp, sl, up, ul;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const bool is_seen = split.seen_classes.count(lib->class_name(static_cast<std::size_t>(ex[i].label))) > 0;
      (is_seen ? sp : up).push_back(pred[i]);
      (is_seen ? sl : ul).push_back(ex[i].label);
    }
    if (sl.empty() || ul.empty()) throw ValidationError("test split needs both seen and unseen records");
    const double s = 100.0 * Top1Accuracy(sp, sl);
    const double u = 100.0 * Top1Accuracy(up, ul);
    MetricReport r;
    r.name = "gzsl";
    r.values = {{"seen", s}, {"unseen", u}, {"harmonic", HarmonicMean(s, u)}};
    r.count = ex.size();
    r.config_digest = HexDigest(l.checkpoint.model.ParameterDigest());
    EmitReports(ctx.out, {r}, *gcsv);
  });
}

void SetupSplit(CLI::App& app, Context& ctx) {
  auto* split = app.add_subcommand("split", "Build evaluation splits");
  split->require_subcommand(1);
  struct Opts {
    CommonOptions common;
    std::string manifest, ids, supers, out, out_prefix;
    double val_fraction = 0.0;
    double unseen_fraction = 0.25;
  };

  auto* gzsl = split->add_subcommand("gzsl", "Protected ids become the test set");
  auto g = std::make_shared<Opts>();
  AddCommon(gzsl, g->common);
  gzsl->add_option("--manifest", g->manifest)->required()->check(CLI::ExistingFile);
  gzsl->add_option("--protected", g->ids, "Protected image ids, one per line")->required()->check(CLI::ExistingFile);
  gzsl->add_option("--val-fraction", g->val_fraction)->check(CLI::Range(0.0, 0.9));
  gzsl->add_option("--out", g->out, "Split JSON ('-' for stdout)");
  gzsl->callback([=, &ctx] {
    const DatasetManifest m = ReadManifest(g->manifest);
    const SplitSpec s = MakeGzslSplit(m, ReadIdSet(g->ids), g->val_fraction, g->common.seed);
    WriteOut(ctx.out, g->out, SerializeSplit(s));
  });

  auto* zsl = split->add_subcommand("zsl", "Records of unseen classes become the test set");
  auto z = std::make_shared<Opts>();
  AddCommon(zsl, z->common);
  zsl->add_option("--manifest", z->manifest)->required()->check(CLI::ExistingFile);
  zsl->add_option("--unseen", z->ids, "Unseen class names, one per line")->required()->check(CLI::ExistingFile);
  zsl->add_option("--val-fraction", z->val_fraction)->check(CLI::Range(0.0, 0.9));
  zsl->add_option("--out", z->out, "Split JSON ('-' for stdout)");
  zsl->callback([=, &ctx] {
    const DatasetManifest m = ReadManifest(z->manifest);
    const SplitSpec s = MakeZslSplit(m, ReadIdSet(z->ids), z->val_fraction, z->common.seed);
    WriteOut(ctx.out, z->out, SerializeSplit(s));
  });

  auto* scs = split->add_subcommand("scs-sce", "Super-category shared / exclusive zero-shot splits");
  auto c = std::make_shared<Opts>();
  AddCommon(scs, c->common);
  scs->add_option("--manifest", c->manifest)->required()->check(CLI::ExistingFile);
  scs->add_option("--supers", c->supers, "class<TAB>super-category lines")->required()->check(CLI::ExistingFile);
  scs->add_option("--unseen-fraction", c->unseen_fraction)->check(CLI::Range(0.01, 0.99));
  scs->add_option("--out-prefix", c->out_prefix, "Writes <prefix>scs.json and <prefix>sce.json")->required();
  scs->callback([=, &ctx] {
    const DatasetManifest m = ReadManifest(c->manifest);
    const auto supers = ParseSuperCategoryMap(ReadFile(c->supers));
    const SuperCategorySplits s = MakeSuperCategorySplits(m, supers, c->unseen_fraction, c->common.seed);
    WriteOut(ctx.out, c->out_prefix + "scs.json", SerializeSplit(s.shared));
    WriteOut(ctx.out, c->out_prefix + "sce.json", SerializeSplit(s.exclusive));
    const auto a = AuditSuperCategories(s.shared, supers);
    const auto b = AuditSuperCategories(s.exclusive, supers);
    PrintJson(ctx.out, Json{{"scs", {{"unseen", s.shared.unseen_classes.size()}, {"shared", a.shared}}},
                            {"sce", {{"unseen", s.exclusive.unseen_classes.size()}, {"exclusive", b.exclusive}}}});
  });
}

void SetupFilter(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("filter", "Drop small objects and excluded classes from a manifest");
  auto o = std::make_shared<CommonOptions>();
  auto manifest = std::make_shared<std::string>();
  auto min_box = std::make_shared<std::string>();
  auto exclude = std::make_shared<std::string>();
  auto missing = std::make_shared<std::string>("drop");
  auto out_path = std::make_shared<std::string>();
  AddCommon(cmd, *o);
  cmd->add_option("--manifest", *manifest)->required()->check(CLI::ExistingFile);
  cmd->add_option("--min-box", *min_box, "Minimum object box, WxH pixels (inclusive)");
  cmd->add_option("--exclude", *exclude, "Class names to drop, one per line")->check(CLI::ExistingFile);
  cmd->add_option("--missing-box", *missing, "Records without a box")->check(CLI::IsMember({"drop", "error"}));
  cmd->add_option("--out", *out_path, "Filtered manifest ('-' for stdout)")->required();
  cmd->callback([=, &ctx] {
    DatasetManifest m = ReadManifest(*manifest);
    std::vector<std::string> unknown;
    std::size_t excluded = 0;
    if (!exclude->empty()) {
      const std::size_t before = m.records.size();
      m = ApplyExclusions(m, ReadLineList(*exclude), &unknown);
      excluded = before - m.records.size();
    }
    FilterResult f{m, 0, 0};
    if (!min_box->empty()) {
      const auto [w, h] = ParseWxH(*min_box);
      f = FilterByBox(m, w, h, *missing == "error" ? MissingBoxPolicy::kError : MissingBoxPolicy::kDrop);
    }
    WriteOut(ctx.out, *out_path, SerializeManifest(f.manifest));
    ctx.err << "kept " << f.manifest.records.size() << ", small " << f.removed_small << ", missing box "
            << f.dropped_missing_box << ", excluded " << excluded << "\n";
    for (const std::string& u : unknown) ctx.err << "warning: unknown excluded class '" << u << "'\n";
  });
}

void SetupClassify(CLI::App& app, Context& ctx, const std::string& name, bool explain) {
  auto* cmd = app.add_subcommand(name, explain ? "Per-part explanation for one image" : "Classify one image");
  auto o = std::make_shared<CommonOptions>();
  auto ckpt = std::make_shared<std::string>();
  auto library = std::make_shared<std::string>();
  auto image = std::make_shared<std::string>();
  auto id = std::make_shared<std::string>();
  auto top_k = std::make_shared<std::size_t>(explain ? 1 : 5);
  AddCommon(cmd, *o);
  cmd->add_option("--checkpoint", *ckpt)->required()->check(CLI::ExistingFile);
  cmd->add_option("--library", *library)->required()->check(CLI::ExistingFile);
  auto* img = cmd->add_option("--image", *image, "Image file")->check(CLI::ExistingFile);
  auto* idopt = cmd->add_option("--id", *id, "Image id (synthetic backend)");
  img->excludes(idopt);
  cmd->add_option("--top-k", *top_k, "Classes to report")->check(CLI::PositiveNumber);
  cmd->callback([=, &ctx] {
    if (image->empty() && id->empty()) throw InputError("pass --image or --id");
    const Loaded l = LoadModel(*o, *ckpt);
    auto model = std::make_shared<const Model>(l.checkpoint.model);
    auto classifier = std::make_shared<const Classifier>(model, l.backend.text, l.backend.image);
    Service service(classifier, LoadLibraryFile(*library));
    ClassifyRequest req;
    req.image = ImageInput{id->empty() ? *image : *id, "", image->empty() ? fs::path() : fs::path(*image)};
    req.top_k = *top_k;
    req.explain = explain;
    PrintJson(ctx.out, ToJson(service.HandleClassify(req)));
  });
}

void SetupServe(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("serve", "HTTP API for classification and library editing");
  auto o = std::make_shared<CommonOptions>();
  auto d = std::make_shared<DataOptions>();
  auto ckpt = std::make_shared<std::string>();
  auto library = std::make_shared<std::string>();
  auto host = std::make_shared<std::string>("127.0.0.1");
  auto port = std::make_shared<int>(8080);
  AddCommon(cmd, *o);
  cmd->add_option("--checkpoint", *ckpt)->required()->check(CLI::ExistingFile);
  cmd->add_option("--library", *library)->required()->check(CLI::ExistingFile);
  cmd->add_option("--host", *host);
  cmd->add_option("--port", *port)->check(CLI::Range(0, 65535));
  cmd->add_option("--train-manifest", d->manifest, "Labeled data for train jobs")->check(CLI::ExistingFile);
  cmd->add_option("--train-annotations", d->annotations)->check(CLI::ExistingFile);
  cmd->add_option("--train-split", d->split)->check(CLI::ExistingFile);
  cmd->callback([=, &ctx] {
    const Loaded l = LoadModel(*o, *ckpt);
    auto model = std::make_shared<const Model>(l.checkpoint.model);
    auto classifier = std::make_shared<const Classifier>(model, l.backend.text, l.backend.image);
    ServiceOptions so;
    if (!d->manifest.empty()) {
      const Backend backend = l.backend;
      const DataOptions data = *d;
      const DescriptorTemplate tmpl = model->config().descriptor_template;
      so.training_data = [backend, data, tmpl](std::shared_ptr<const DescriptorLibrary> lib) {
        const DatasetManifest m = LoadManifest(data, lib->vocabulary());
        const auto split = LoadSplit(data);
        const fs::path base = fs::path(data.manifest).parent_path();
        auto train = Examples(m, split ? &split->train_ids : nullptr, *lib, *backend.image, base);
        std::vector<TrainingExample> val;
        if (split) val = Examples(m, &split->val_ids, *lib, *backend.image, base);
        return TrainingData::Build(lib, *backend.text, tmpl, std::move(train), std::move(val));
      };
    }
    Service service(classifier, LoadLibraryFile(*library), so);
    HttpServer server(service);
    ctx.err << "listening on " << *host << ":" << *port << "\n";
    if (!server.Listen(*host, *port)) throw ConfigError("cannot listen on " + *host + ":" + std::to_string(*port));
  });
}

void SetupGradcheck(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every stage on a synthetic instance");
  auto o = std::make_shared<CommonOptions>();
  auto stage = std::make_shared<std::string>("all");
  auto eps = std::make_shared<double>(1e-5);
  auto tol = std::make_shared<double>(1e-4);
  auto entries = std::make_shared<std::size_t>(24);
  AddCommon(cmd, *o);
  cmd->add_option("--stage", *stage)->check(CLI::IsMember({"all", "pretrain1", "pretrain2", "finetune"}));
  cmd->add_option("--eps", *eps, "Central-difference step")->check(CLI::PositiveNumber);
  cmd->add_option("--tolerance", *tol, "Maximum relative error")->check(CLI::PositiveNumber);
  cmd->add_option("--entries", *entries, "Coordinates probed per tensor (0 = all)");
  cmd->callback([=, &ctx] {
    SyntheticConfig sc;
    sc.num_classes = 3;
    sc.image_dim = 8;
    sc.text_dim = 8;
    sc.distractors = 2;
    sc.seed = o->seed;
    auto world = std::make_shared<const SyntheticWorld>(sc);
    const auto text = world->MakeTextEncoder();
    const TrainingData data = TrainingData::Build(std::make_shared<const DescriptorLibrary>(world->Library()), *text,
                                                  DescriptorTemplate::kPartColonPhrase,
                                                  ToTrainingExamples(world->Samples({0, 1, 2}, 1)), {});
    ModelConfig cfg;
    cfg.image_dim = sc.image_dim;
    cfg.text_dim = sc.text_dim;
    cfg.hidden_dim = 6;
    cfg.seed = o->seed;
    std::vector<Stage> stages = {Stage::kPretrain1, Stage::kPretrain2, Stage::kFinetune};
    if (*stage != "all") stages = {ParseStage(*stage)};
    bool ok = true;
    Json rows = Json::array();
    for (Stage s : stages) {
      Model model = Model::Initialize(cfg);
      TrainConfig tc;
      tc.stage = s;
      const GradCheckReport r = GradCheckModel(model, s, tc, data, data.train, *eps, *entries);
      for (const GradCheckGroup& g : r.groups) {
        const bool pass = g.non_finite == 0 && g.max_rel_error <= *tol;
        ok = ok && pass;
        rows.push_back({{"stage", StageName(s)},
                        {"group", g.group},
                        {"checked", g.checked},
                        {"max_rel_error", g.max_rel_error},
                        {"non_finite", g.non_finite},
                        {"pass", pass}});
      }
    }
    PrintJson(ctx.out, rows);
    if (!ok) throw NumericError("gradient check exceeded tolerance " + std::to_string(*tol));
  });
}

void SetupAblate(CLI::App& app, Context& ctx) {
  auto* ablate = app.add_subcommand("ablate", "Descriptor and part ablations");
  ablate->require_subcommand(1);
  struct Opts {
    CommonOptions common;
    DataOptions data;
    std::string checkpoint, library, frequency, csv;
    std::vector<std::size_t> k;
    std::string order = "most";
    std::uint64_t draw_seed = 0;
    std::size_t draws = 10;
  };
  auto add_model = [](CLI::App* cmd, Opts& p) {
    AddCommon(cmd, p.common);
    AddData(cmd, p.data, true);
    cmd->add_option("--checkpoint", p.checkpoint)->required()->check(CLI::ExistingFile);
    cmd->add_option("--library", p.library)->required()->check(CLI::ExistingFile);
    cmd->add_option("--csv", p.csv, "Also write the report as CSV");
  };

  auto* rnd = ablate->add_subcommand("randomized", "Accuracy with descriptors shuffled across classes");
  auto r = std::make_shared<Opts>();
  add_model(rnd, *r);
  rnd->add_option("--draw-seed", r->draw_seed, "Seed of the first permutation draw");
  rnd->add_option("--draws", r->draws, "Independent permutation draws to average")->check(CLI::PositiveNumber);
  rnd->callback([=, &ctx] {
    const Loaded l = LoadModel(r->common, r->checkpoint);
    const auto lib = LoadLib(r->library);
    const auto ex = LoadExamples(r->data, *lib, *l.backend.image, r->data.part);
    EmitReports(ctx.out, {RandomizedDescriptorEval(l.checkpoint.model, *l.backend.text, lib, ex, r->draw_seed, r->draws)},
                r->csv);
  });

  auto* sub = ablate->add_subcommand("part-subset", "Accuracy from the k most or least frequent parts");
  auto p = std::make_shared<Opts>();
  add_model(sub, *p);
  sub->add_option("--k", p->k, "Parts kept (repeatable)")->required();
  sub->add_option("--order", p->order)->check(CLI::IsMember({"most", "least"}));
  sub->add_option("--frequency", p->frequency, "part<TAB>frequency table")->required()->check(CLI::ExistingFile);
  sub->callback([=, &ctx] {
    const Loaded l = LoadModel(p->common, p->checkpoint);
    const auto lib = LoadLib(p->library);
    const auto ex = LoadExamples(p->data, *lib, *l.backend.image, p->data.part);
    const auto freq = ParsePartFrequency(ReadFile(p->frequency), lib->vocabulary());
    const TrainingData data =
        TrainingData::Build(lib, *l.backend.text, l.checkpoint.model.config().descriptor_template, {}, {});
    std::vector<MetricReport> reports;
    for (std::size_t k : p->k) {
      reports.push_back(PartSubsetEval(l.checkpoint.model, data, ex, freq, k, ParsePartOrder(p->order)).report);
    }
    EmitReports(ctx.out, reports, p->csv);
  });
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Part-based explainable classification with editable descriptors", "partlang"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Context ctx{out, err};
  SetupSynth(app, ctx);
  SetupInit(app, ctx);
  SetupTrain(app, ctx);
  SetupEval(app, ctx);
  SetupSplit(app, ctx);
  SetupFilter(app, ctx);
  SetupClassify(app, ctx, "classify", false);
  SetupClassify(app, ctx, "explain", true);
  SetupServe(app, ctx);
  SetupGradcheck(app, ctx);
  SetupAblate(app, ctx);

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("partlang");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  } catch (const Error& e) {
    err << "error (" << ErrorKindName(e.kind()) << "): " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitOk;
}

}  // namespace partlang
