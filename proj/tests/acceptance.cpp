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

// Acceptance run: one PASS/FAIL line per criterion, exit 1 on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "partlang/evaluation.hpp"
#include "partlang/head.hpp"
#include "partlang/losses.hpp"

namespace partlang {
namespace {

using testing::RandomManifest;
using testing::RandomMatrix;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void Require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

BoundingBox RandomBox(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 1.0), size(0.02, 0.6);
  return BoundingBox{pos(rng), pos(rng), size(rng), size(rng)};
}

void GiouOracle(Outcome& o) {
  const auto t0 = Clock::now();
  const GiouResult hand = Giou(BoundingBox::FromCorners({0, 0, 2, 2}), BoundingBox::FromCorners({1, 1, 3, 3}));
  o.Require(std::abs(hand.iou - 1.0 / 7.0) < 1e-9, "hand IoU");
  o.Require(std::abs(hand.giou + 5.0 / 63.0) < 1e-9, "hand GIoU");
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const BoundingBox a = RandomBox(rng), b = RandomBox(rng);
    const CornerBox ca = a.ToCorners(), cb = b.ToCorners();
    const auto grid = oracle::RasterGiou({ca.x0, ca.y0, ca.x1, ca.y1}, {cb.x0, cb.y0, cb.x1, cb.y1});
    const GiouResult r = Giou(a, b);
    worst = std::max({worst, std::abs(r.iou - grid.iou), std::abs(r.giou - grid.giou)});
  }
  const double secs = Seconds(t0);
  o.Require(worst <= 2e-3, "oracle gap");
  o.Require(secs < 10, "runtime");
  o.detail << "1000 pairs, worst |diff| " << worst << ", hand IoU " << hand.iou << " GIoU " << hand.giou << ", "
           << secs << " s";
}

void LossSanity(Outcome& o) {
  const auto t0 = Clock::now();
  const double ln2 = SceLoss(Matrix::Zero(2, 2), LabelAssignment::FromMatches(Matrix::Identity(2, 2)));
  o.Require(std::abs(ln2 - std::log(2.0)) < 1e-12, "SCE ln 2");
  constexpr double kEps = 1e-5;
  double worst = 0;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s0 = RandomMatrix(3 + trial % 3, 4, rng);
    Matrix m = Matrix::Zero(s0.rows(), 4);
    for (Eigen::Index i = 0; i < s0.rows(); ++i) m(i, (i + trial) % 4) = 1;
    const LabelAssignment l = LabelAssignment::FromMatches(m);
    Matrix g;
    SceLoss(s0, l, &g);
    worst = std::max(worst, oracle::MaxRelError(
                                g, oracle::NumericGradient([&](const Matrix& s) { return SceLoss(s, l); }, s0, kEps)));

    const Matrix x0 = RandomMatrix(6, 1, rng, 2.0);
    const int target = trial % 6;
    Vector gv;
    CeLoss(Eigen::Map<const Vector>(x0.data(), 6), target, &gv);
    worst = std::max(worst, oracle::MaxRelError(Matrix(gv), oracle::NumericGradient(
                                                              [&](const Matrix& x) {
                                                                return CeLoss(Eigen::Map<const Vector>(x.data(), 6),
                                                                              target);
                                                              },
                                                              x0, kEps)));

    std::vector<BoundingBox> gt;
    Matrix p0(3, 4);
    for (int i = 0; i < 3; ++i) {
      gt.push_back(RandomBox(rng));
      const BoundingBox b = gt.back();
      p0.row(i) << b.cx + 0.07, b.cy - 0.05, b.w * 1.3 + 0.01, b.h * 0.8 + 0.01;
    }
    auto boxes = [](const Matrix& p) {
      std::vector<BoundingBox> out;
      for (Eigen::Index i = 0; i < p.rows(); ++i) out.push_back({p(i, 0), p(i, 1), p(i, 2), p(i, 3)});
      return out;
    };
    Matrix gb;
    BoxLoss(boxes(p0), gt, &gb);
    worst = std::max(worst, oracle::MaxRelError(gb, oracle::NumericGradient(
                                                        [&](const Matrix& p) { return BoxLoss(boxes(p), gt).total; },
                                                        p0, kEps)));
  }
  const double secs = Seconds(t0);
  o.Require(worst < 1e-4, "gradient error");
  o.Require(secs < 30, "runtime");
  o.detail << "SCE(0) - ln2 = " << ln2 - std::log(2.0) << ", 20 x {SCE, CE, box} worst rel err " << worst << ", "
           << secs << " s";
}

void HeadOracle(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  const Matrix scores = RandomMatrix(12, 12 * 200, rng);
  const ClassLogits l = Classify(scores);
  const std::vector<double> want = oracle::DiagonalSums(scores);
  int mismatched = 0;
  for (int c = 0; c < 200; ++c) mismatched += l.logits(c) != want[static_cast<std::size_t>(c)];
  o.Require(mismatched == 0, "logits");
  o.Require(l.prediction == oracle::FirstArgmax(want), "argmax");
  Vector tied(4);
  tied << 1, 3, 3, 2;
  o.Require(ArgmaxLowest(tied) == 1 && Classify(Matrix::Zero(3, 9)).prediction == 0, "tie-break");
  const double secs = Seconds(t0);
  o.Require(secs < 5, "runtime");
  o.detail << "200 classes x 12 parts, " << mismatched << " mismatched logits, ties go to lowest index, " << secs
           << " s";
}

void HarmonicMeans(Outcome& o) {
  const double rows[3][3] = {{80.78, 41.74, 55.04}, {44.66, 20.31, 27.92}, {28.26, 24.34, 26.15}};
  for (const auto& r : rows) {
    const double h = std::round(HarmonicMean(r[0], r[1]) * 100.0) / 100.0;
    o.Require(h == r[2], "row " + std::to_string(r[2]));
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%.2f, %.2f) -> %.2f; ", r[0], r[1], h);
    o.detail << buf;
  }
}

double Top1(const std::vector<int>& pred, const std::vector<TrainingExample>& examples) {
  std::vector<int> labels;
  for (const auto& e : examples) labels.push_back(e.label);
  return Top1Accuracy(pred, labels);
}

void SyntheticEndToEnd(const testing::SyntheticRun& run, double secs, Outcome& o) {
  const double stage1 = Top1(PredictLabels(run.stage1.checkpoint.model, run.data, run.test, true), run.test);
  const double agreement = SelectionAgreement(run.stage2.checkpoint.model, run.data, run.test);
  const double iou = TeacherBoxMeanIou(run.stage2.checkpoint.model, run.data, run.test);
  const SyntheticConfig& sc = run.world->config();
  o.Require(sc.num_classes == 8 && sc.vocabulary.size() == 12 && sc.noise == 0.1 && sc.distractors >= 4, "world");
  o.Require(run.stage1.steps <= 200, "step budget");
  o.Require(stage1 >= 0.95, "stage-1 top-1");
  o.Require(agreement >= 0.95, "agreement");
  o.Require(iou >= 0.5, "box IoU");
  o.Require(secs < 300, "runtime");
  o.detail << "stage 1: top-1 " << stage1 << " after " << run.stage1.steps << " steps; stage 2: agreement "
           << agreement << ", box IoU " << iou << "; " << secs << " s";
}

void Randomization(const testing::SyntheticRun& run, Outcome& o) {
  const MetricReport r =
      RandomizedDescriptorEval(run.stage2.checkpoint.model, *run.text, run.library, run.test, 7, 10);
  const double n = static_cast<double>(run.library->num_classes());
  o.Require(r.value("randomized_top1") <= 3.0 / n, "3 x chance");
  o.detail << "top-1 " << r.value("original_top1") << " -> " << r.value("randomized_top1") << " (mean of 10 draws, max "
           << r.value("randomized_max") << "), bound 3/N = " << 3.0 / n;
}

void Editability(const testing::SyntheticRun& run, Outcome& o) {
  auto world = std::make_shared<SyntheticWorld>(run.world->config());
  const int novel = world->AddClass(2, {8, 11});
  auto text = world->MakeTextEncoder();
  auto model = std::make_shared<const Model>(run.stage2.checkpoint.model);
  const std::size_t count = model->ParameterCount();
  const std::uint64_t digest = model->ParameterDigest();
  const Classifier classifier(model, text, std::make_shared<SyntheticImageEncoder>(world));

  DescriptorLibrary lib = CloneClass(world->Library(8), "class_2", "class_8");
  for (int j : {8, 11}) {
    const std::size_t part = static_cast<std::size_t>(j);
    lib = EditDescriptor(lib, "class_8", world->config().vocabulary.name(part), world->Phrase(novel, part));
  }
  const auto library = std::make_shared<const DescriptorLibrary>(std::move(lib));
  const DescriptorBank bank = classifier.EncodeLibrary(library);

  constexpr int kHeldOut = 100;
  int hits = 0, base_hits = 0;
  for (int i = 0; i < kHeldOut; ++i) {
    hits += classifier.Explain(ImageInput{world->Sample(novel, 5000 + i).id, {}, {}}, bank)[0].class_name == "class_8";
    base_hits += classifier.Explain(ImageInput{world->Sample(2, 5000 + i).id, {}, {}}, bank)[0].class_name == "class_2";
  }
  const double acc = double(hits) / kHeldOut;
  o.Require(acc >= 0.9, "novel top-1");
  o.Require(model->ParameterCount() == count && model->ParameterDigest() == digest, "parameters");
  o.Require(library->num_classes() == 9, "class count");
  o.detail << "class_8 = clone(class_2) + 2 edited parts: top-1 " << acc << " on " << kHeldOut
           << " held-out images (class_2 keeps " << double(base_hits) / kHeldOut << "), parameters " << count
           << " before and after, digest " << HexDigest(digest) << " unchanged";
}

void PartSubset(const testing::SyntheticRun& run, Outcome& o) {
  const Model& model = run.stage2.checkpoint.model;
  const std::vector<double> freq = run.world->PartFrequency();
  const std::vector<int> full = PredictLabels(model, run.data, run.test);
  for (PartOrder order : {PartOrder::kMostFrequent, PartOrder::kLeastFrequent}) {
    const PartSubsetResult k12 = PartSubsetEval(model, run.data, run.test, freq, 12, order);
    const PartSubsetResult k1 = PartSubsetEval(model, run.data, run.test, freq, 1, order);
    o.Require(k12.predictions == full, "k=12 predictions");
    o.Require(k1.report.value("top1") <= k12.report.value("top1"), "k=1 <= k=12");
    o.detail << PartOrderName(order) << ": k1 " << k1.report.value("top1") << " <= k12 "
             << k12.report.value("top1") << "; ";
  }
  std::mt19937_64 rng(1);
  const Matrix scores = RandomMatrix(12, 12 * 30, rng);
  std::vector<std::size_t> all(12);
  for (std::size_t j = 0; j < 12; ++j) all[j] = j;
  o.Require(ClassifySubset(scores, all).logits == Classify(scores).logits, "bitwise logits");
  o.detail << "k=12 predictions identical to the full model on " << full.size() << " images";
}

void PipelineProperties(Outcome& o) {
  std::mt19937_64 rng(1);
  int nested = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const DatasetManifest m = RandomManifest(rng);
    const auto a = FilterByBox(m, 100, 100).manifest.Ids(), b = FilterByBox(m, 200, 200).manifest.Ids();
    nested += std::includes(a.begin(), a.end(), b.begin(), b.end());
  }
  int audited = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const DatasetManifest m = RandomManifest(rng);
    std::set<std::string> unseen;
    for (const auto& c : m.classes) {
      if (rng() % 3 == 0) unseen.insert(c);
    }
    if (unseen.empty()) unseen.insert(m.classes.back());
    if (unseen.size() == m.classes.size()) unseen.erase(m.classes.front());
    audited += AuditZslSplit(m, MakeZslSplit(m, unseen, 0.1, static_cast<std::uint64_t>(trial))).ok;
  }
  o.Require(nested == 1000, "nesting");
  o.Require(audited == 1000, "audit");
  o.detail << "100^2 superset of 200^2 on " << nested << "/1000 manifests; ZSL audit clean on " << audited
           << "/1000";
}

void StageIsolation(const testing::SyntheticRun& run, Outcome& o) {
  TrainConfig fc = testing::RecipeConfig(Stage::kFinetune);
  fc.learning_rate = 1e-3;
  fc.max_steps = 60;
  const TrainResult ft = RunStage(run.data, fc, run.stage2.checkpoint);
  const std::uint64_t text_digest = run.text->ParameterDigest();
  const Matrix before = run.data.descriptor_embeddings;
  const std::vector<std::pair<const Checkpoint*, const Checkpoint*>> stages = {
      {&run.initial, &run.stage1.checkpoint}, {&run.stage1.checkpoint, &run.stage2.checkpoint},
      {&run.stage2.checkpoint, &ft.checkpoint}};
  const Stage names[3] = {Stage::kPretrain1, Stage::kPretrain2, Stage::kFinetune};
  for (int s = 0; s < 3; ++s) {
    const auto [from, to] = stages[static_cast<std::size_t>(s)];
    const std::vector<ParamGroup> declared = TrainableGroups(names[s]);
    std::vector<std::string> moved;
    for (ParamGroup g : kAllParamGroups) {
      if (from->model.GroupDigest(g) != to->model.GroupDigest(g)) moved.push_back(ParamGroupName(g));
    }
    std::vector<std::string> want;
    for (ParamGroup g : declared) want.push_back(ParamGroupName(g));
    std::sort(moved.begin(), moved.end());
    std::sort(want.begin(), want.end());
    o.Require(moved == want, std::string(StageName(names[s])) + " groups");
    o.Require(to->text_encoder_digest == text_digest && to->frozen_groups.count(kTextEncoderGroup), "text frozen");
    o.detail << StageName(names[s]) << " moved {";
    for (std::size_t i = 0; i < moved.size(); ++i) o.detail << (i ? "," : "") << moved[i];
    o.detail << "}; ";
  }
  const TrainingData again = TrainingData::Build(run.library, *run.text, DescriptorTemplate::kPartColonPhrase, {}, {});
  o.Require(again.descriptor_embeddings == before && run.text->ParameterDigest() == text_digest, "text bitwise");
  o.detail << "text encoder digest " << HexDigest(text_digest) << " identical across all stages";
}

int Report(const char* name, const std::function<void(Outcome&)>& check) {
  Outcome o;
  try {
    check(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "[exception: " << e.what() << "]";
  }
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str());
  std::fflush(stdout);
  return o.pass ? 0 : 1;
}

int Main() {
  int failed = 0;
  failed += Report("giou_oracle", GiouOracle);
  failed += Report("loss_sanity", LossSanity);
  failed += Report("head_oracle", HeadOracle);
  failed += Report("harmonic_means", HarmonicMeans);

  const auto t0 = Clock::now();
  const testing::SyntheticRun run = testing::TrainSynthetic();
  const double train_secs = Seconds(t0);
  failed += Report("synthetic_end_to_end", [&](Outcome& o) { SyntheticEndToEnd(run, train_secs, o); });
  failed += Report("randomization", [&](Outcome& o) { Randomization(run, o); });
  failed += Report("editability", [&](Outcome& o) { Editability(run, o); });
  failed += Report("part_subset", [&](Outcome& o) { PartSubset(run, o); });
  failed += Report("pipeline_properties", PipelineProperties);
  failed += Report("stage_isolation", [&](Outcome& o) { StageIsolation(run, o); });
  std::printf("%d of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}

}  // namespace
}  // namespace partlang

int main() { return partlang::Main(); }
