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

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fixtures.hpp"

namespace partlang {
namespace {

using Json = nlohmann::ordered_json;
using testing::MakeBmp;
using testing::TempDir;

const std::string kConfigs = std::string(PARTLANG_SOURCE_DIR) + "/configs/synthetic/";

struct CliRun {
  int code;
  std::string out;
  std::string err;
  Json json() const { return Json::parse(out); }
};

CliRun Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunCli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST(CliTest, HarmonicMeans) {
  EXPECT_EQ(Cli({"eval", "harmonic", "--seen", "80.78", "--unseen", "41.74"}).out, "55.04\n");
  EXPECT_EQ(Cli({"eval", "harmonic", "--seen", "44.66", "--unseen", "20.31"}).out, "27.92\n");
  EXPECT_EQ(Cli({"eval", "harmonic", "--seen", "28.26", "--unseen", "24.34"}).out, "26.15\n");
  const CliRun bad = Cli({"eval", "harmonic", "--seen", "180", "--unseen", "1"});
  EXPECT_EQ(bad.code, kExitDomainError);
  EXPECT_NE(bad.err.find("error"), std::string::npos);
}

TEST(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(Cli({}).code, kExitUsage);
  EXPECT_EQ(Cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(Cli({"eval", "harmonic", "--seen", "abc", "--unseen", "1"}).code, kExitUsage);
  EXPECT_EQ(Cli({"init", "--out", "/tmp/x", "--backend", "gpu"}).code, kExitUsage);
  EXPECT_EQ(Cli({"--help"}).code, kExitOk);
}

TEST(CliTest, GradCheckPasses) {
  const CliRun r = Cli({"gradcheck", "--entries", "8"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json rows = r.json();
  ASSERT_EQ(rows.size(), 8u);  // 2 + 2 + 4 trainable groups
  for (const Json& row : rows) {
    EXPECT_TRUE(row["pass"].get<bool>()) << row.dump();
    EXPECT_LT(row["max_rel_error"].get<double>(), 1e-4);
  }
  EXPECT_EQ(Cli({"gradcheck", "--entries", "8", "--tolerance", "1e-30"}).code, kExitDomainError);
}

// synth -> init -> three training stages -> eval, classify, ablations.
class CliPipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const std::string d = dir_->path().string();
    const std::vector<std::string> common = {"--backend", "synthetic", "--synthetic-classes", "4"};
    auto with = [&](std::vector<std::string> args) {
      args.insert(args.end(), common.begin(), common.end());
      return Cli(args);
    };
    CliRun r = with({"synth", "--out-dir", d, "--per-class", "20", "--test-per-class", "10", "--val-fraction", "0.2"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = with({"init", "--out", d + "/init.ckpt"});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::vector<std::string> data = {"--library", d + "/library.json", "--manifest", d + "/manifest.tsv",
                                           "--annotations", d + "/annotations.jsonl", "--split", d + "/split.json"};
    std::string prev = d + "/init.ckpt";
    for (const char* stage : {"pretrain1", "pretrain2", "finetune"}) {
      std::vector<std::string> args = {"train", "--checkpoint", prev, "--out", d + "/" + stage + ".ckpt",
                                       "--config", kConfigs + stage + ".yaml", "--max-steps", "40",
                                       "--log", d + "/" + stage + ".csv"};
      args.insert(args.end(), data.begin(), data.end());
      r = with(args);
      ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
      train_[stage] = r.json();
      prev = d + "/" + stage + ".ckpt";
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::string P(const std::string& name) { return (dir_->path() / name).string(); }
  static std::vector<std::string> Args(std::vector<std::string> args, bool with_data = true) {
    const std::vector<std::string> common = {"--backend", "synthetic", "--synthetic-classes", "4"};
    args.insert(args.end(), common.begin(), common.end());
    if (with_data) {
      const std::vector<std::string> data = {"--library", P("library.json"), "--manifest", P("manifest.tsv"),
                                             "--annotations", P("annotations.jsonl"), "--split", P("split.json")};
      args.insert(args.end(), data.begin(), data.end());
    }
    return args;
  }

  static TempDir* dir_;
  static std::map<std::string, Json> train_;
};

TempDir* CliPipelineTest::dir_ = nullptr;
std::map<std::string, Json> CliPipelineTest::train_;

TEST_F(CliPipelineTest, SynthWroteEverything) {
  for (const char* f : {"library.json", "manifest.tsv", "annotations.jsonl", "part_frequency.tsv", "split.json"}) {
    EXPECT_TRUE(std::filesystem::exists(P(f))) << f;
  }
  const Json split = Json::parse(Slurp(P("split.json")));
  EXPECT_EQ(split["test"].size(), 40u);
  EXPECT_GT(split["val"].size(), 0u);
}

TEST_F(CliPipelineTest, TrainingReportsAndLogs) {
  EXPECT_EQ(train_["pretrain1"]["stage"], "pretrain1");
  EXPECT_LE(train_["pretrain1"]["steps"].get<long>(), 40);
  EXPECT_GT(train_["finetune"]["val_examples"].get<long>(), 0);
  EXPECT_EQ(Slurp(P("pretrain2.csv")).substr(0, 5), "epoch");
}

TEST_F(CliPipelineTest, EvalAccuracyAndCsv) {
  const CliRun r = Cli(Args({"eval", "accuracy", "--checkpoint", P("finetune.ckpt"), "--part", "test", "--csv", P("acc.csv")}));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  EXPECT_EQ(j["count"], 40);
  const double top1 = j["values"]["top1"].get<double>();
  EXPECT_GE(top1, 0.0);
  EXPECT_LE(top1, 1.0);
  EXPECT_NE(Slurp(P("acc.csv")).find("top1"), std::string::npos);
}

TEST_F(CliPipelineTest, GzslReport) {
  // The synth split sees every class, so the report is refused.
  EXPECT_EQ(Cli(Args({"eval", "gzsl", "--checkpoint", P("finetune.ckpt")})).code, kExitDomainError);
  // Hold class_3 out of train and val; the test set keeps every class.
  Json split = Json::parse(Slurp(P("split.json")));
  for (const char* part : {"train", "val"}) {
    Json kept = Json::array();
    for (const Json& id : split[part]) {
      if (id.get<std::string>().rfind("syn/3/", 0) != 0) kept.push_back(id);
    }
    split[part] = kept;
  }
  split["seen_classes"] = Json::array({"class_0", "class_1", "class_2"});
  split["unseen_classes"] = Json::array({"class_3"});
  {
    std::ofstream f(P("gzsl.json"));
    f << split.dump();
  }
  std::vector<std::string> args = Args({"eval", "gzsl", "--checkpoint", P("finetune.ckpt")});
  args[args.size() - 1] = P("gzsl.json");
  const CliRun r = Cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json v = r.json()["values"];
  EXPECT_EQ(r.json()["count"], 40);
  const double s = v["seen"].get<double>(), u = v["unseen"].get<double>();
  EXPECT_NEAR(v["harmonic"].get<double>(), s + u > 0 ? 2 * s * u / (s + u) : 0.0, 1e-9);
}

TEST_F(CliPipelineTest, ClassifyAndExplain) {
  const CliRun r = Cli(Args({"classify", "--checkpoint", P("finetune.ckpt"), "--library", P("library.json"), "--id",
                          "syn/1/5000", "--top-k", "2"},
                         false));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.json()["ranking"].size(), 2u);
  const CliRun e = Cli(Args({"explain", "--checkpoint", P("finetune.ckpt"), "--library", P("library.json"), "--id",
                          "syn/1/5000"},
                         false));
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.json()["explanations"][0]["per_part"].size(), 12u);
  const CliRun bad = Cli(Args({"classify", "--checkpoint", P("finetune.ckpt"), "--library", P("library.json"), "--id",
                            "unknown"},
                           false));
  EXPECT_EQ(bad.code, kExitDomainError);
}

TEST_F(CliPipelineTest, CheckpointBackendMismatchIsRejected) {
  const CliRun r = Cli({"classify", "--backend", "stub", "--checkpoint", P("finetune.ckpt"), "--library",
                     P("library.json"), "--id", "syn/1/0"});
  EXPECT_EQ(r.code, kExitDomainError);
  EXPECT_NE(r.err.find("config"), std::string::npos) << r.err;
}

TEST_F(CliPipelineTest, Ablations) {
  const CliRun rnd = Cli(Args({"ablate", "randomized", "--checkpoint", P("pretrain2.ckpt"), "--part", "test", "--draws", "3"}));
  ASSERT_EQ(rnd.code, 0) << rnd.err;
  EXPECT_EQ(rnd.json()["values"]["draws"], 3.0);
  const CliRun sub = Cli(Args({"ablate", "part-subset", "--checkpoint", P("pretrain2.ckpt"), "--part", "test", "--k", "1",
                            "--k", "12", "--frequency", P("part_frequency.tsv")}));
  ASSERT_EQ(sub.code, 0) << sub.err;
  EXPECT_NE(sub.out.find("k12"), std::string::npos) << sub.out;
}

TEST_F(CliPipelineTest, FilterAndSplits) {
  CliRun r = Cli({"filter", "--manifest", P("manifest.tsv"), "--min-box", "10x10", "--out", P("filtered.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("kept"), std::string::npos);
  r = Cli({"filter", "--manifest", P("manifest.tsv"), "--min-box", "ten", "--out", P("x.tsv")});
  EXPECT_NE(r.code, 0);
  {
    std::ofstream f(P("unseen.txt"));
    f << "class_3\n";
  }
  r = Cli({"split", "zsl", "--manifest", P("manifest.tsv"), "--unseen", P("unseen.txt"), "--out", "-"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.json()["unseen_classes"], Json::array({"class_3"}));
}

TEST(CliStubTest, ClassifiesAnImageFile) {
  TempDir dir("stub");
  const std::string d = dir.path().string();
  {
    std::ofstream f(d + "/bird.bmp", std::ios::binary);
    f << MakeBmp(48, 32, [](int x, int y) { return std::array<int, 3>{x * 5, y * 7, 90}; });
    std::ofstream lib(d + "/lib.json");
    lib << partlang::SaveLibrary(testing::MakeLibrary({"Cardinal", "Blue Jay", "Wren"}));
  }
  ASSERT_EQ(Cli({"init", "--backend", "stub", "--out", d + "/m.ckpt"}).code, 0);
  const CliRun r = Cli({"explain", "--backend", "stub", "--checkpoint", d + "/m.ckpt", "--library", d + "/lib.json",
                     "--image", d + "/bird.bmp", "--top-k", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = r.json();
  EXPECT_EQ(j["image_size"]["width"], 48);
  EXPECT_EQ(j["image_size"]["height"], 32);
  EXPECT_EQ(j["ranking"].size(), 3u);
  const Json& box = j["explanations"][0]["per_part"][0]["pixel_box"];
  EXPECT_GE(box["x0"].get<double>(), 0.0);
  EXPECT_LE(box["x1"].get<double>(), 48.0);
}

}  // namespace
}  // namespace partlang
