// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support/tempdir.hpp"
#include "unisign/cli.hpp"
#include "unisign/toy.hpp"

using namespace unisign;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "unisign");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<nlohmann::json> events(const std::string& out, const std::string& name) {
  std::vector<nlohmann::json> found;
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("event") == name) found.push_back(j);
  }
  return found;
}

std::string tiny_config(const unisign::testing::TempDir& dir, const std::string& train, const std::string& dev) {
  RunConfig r;
  r.seed = 5;
  r.output_dir = dir.file("runs");
  r.data.train = train;
  r.data.dev = dev;
  auto& c = r.model;
  c.encoder.input_linear_dim = 8;
  c.encoder.gcn_dims = {8, 16};
  c.encoder.temporal_dims = {16};
  c.lm.d_model = 16;
  c.lm.heads = 2;
  c.lm.ffn_dim = 32;
  c.lm.encoder_layers = 1;
  c.lm.decoder_layers = 1;
  c.pgf.channels = 16;
  c.pgf.heads = 2;
  c.pgf.deform_points = 2;
  c.vision.conv_channels = {4, 8};
  c.vision.output_channels = 16;
  c.crop.output_size = 32;
  c.sampler.p_samp = 0.3;
  for (int s = 1; s <= 3; ++s) {
    r.stage(s).epochs = 2;
    r.stage(s).batch_size = 2;
    r.stage(s).grad_accum = 1;
  }
  r.ablation.epochs = 3;
  r.ablation.lstm_hidden = 8;
  const auto path = dir.file("config.json");
  std::ofstream(path) << to_json(r).dump(2);
  return path;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  auto r = run({});
  EXPECT_EQ(r.code, 2);
  r = run({"pretrain", "--stage", "1", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = run({"pretrain", "--stage", "3"});
  EXPECT_EQ(r.code, 2);
  r = run({"finetune", "--task", "sign", "--init", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, ConfigErrorsNameTheKey) {
  unisign::testing::TempDir dir;
  std::ofstream(dir.file("bad.json")) << R"({"stage1": {"lr": -1, "colour": 2}})";
  auto r = run({"pretrain", "--stage", "1", "--config", dir.file("bad.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stage1.colour"), std::string::npos);
  r = run({"pretrain", "--stage", "1", "--p-samp", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("p_samp"), std::string::npos);
}

TEST(Cli, RuntimeFailuresExitWithOne) {
  unisign::testing::TempDir dir;
  const auto r = run({"evaluate", "--task", "slt", "--ckpt", dir.file("none.ckpt"), "--manifest", dir.file("none.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("none.ckpt"), std::string::npos);
  const auto s = run({"pretrain", "--stage", "2", "--output-dir", dir.file("o")});
  EXPECT_EQ(s.code, 1);
}

TEST(Cli, CurateWritesManifestAndStatsWithHash) {
  unisign::testing::TempDir dir;
  std::filesystem::create_directories(dir.path() / "tr");
  std::ofstream(dir.file("tr/news.jsonl")) << R"({"text": "你好。再见？", "start_s": 0.0, "end_s": 2.0})" << "\n"
                                           << R"({"text": "好的！", "start_s": 2.0, "end_s": 3.0})" << "\n";
  const auto r = run({"curate", "--transcripts", dir.file("tr"), "--out", dir.file("m/train.jsonl"), "--frame-width", "640",
                      "--frame-height", "480"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(dir.file("m/train.jsonl"));
  ASSERT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.records[0].clip_id, "news_00000");
  EXPECT_EQ(m.records[0].keypoint_path, "keypoints/news.npy");
  EXPECT_EQ(m.config_hash.size(), 16u);
  std::ifstream in(dir.file("m/train.jsonl.stats.json"));
  const auto stats = nlohmann::json::parse(in);
  EXPECT_EQ(stats.at("clips"), 3);
  EXPECT_EQ(stats.at("config_hash"), m.config_hash);
  const auto s = run({"stats", "--manifest", dir.file("m/train.jsonl")});
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(events(s.out, "stats").at(0).at("stats").at("vocabulary_size"), 8);  // 你 好 。 再 见 ？ 的 ！
}

TEST(Cli, EndToEndStagesEvaluationAndAblation) {
  unisign::testing::TempDir dir;
  toy::CorpusOptions o;
  o.clips = 4;
  o.min_frames = 6;
  o.max_frames = 9;
  o.render_video = true;
  toy::write_corpus(dir.file("data"), toy::sentence_corpus(o), "train.jsonl", "synthetic");
  o.seed = 3;
  o.prefix = "dev";
  o.split = Split::dev;
  toy::write_corpus(dir.file("data"), toy::sentence_corpus(o), "dev.jsonl", "synthetic");
  const auto cfg = tiny_config(dir, dir.file("data/train.jsonl"), dir.file("data/dev.jsonl"));
  const auto runs = dir.path() / "runs";

  auto r = run({"pretrain", "--stage", "1", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(events(r.out, "step").size(), 4u);
  const auto hash = events(r.out, "config").at(0).at("config_hash").get<std::string>();
  EXPECT_EQ(load_checkpoint((runs / "stage1.ckpt").string()).config_hash, hash);

  r = run({"pretrain", "--stage", "2", "--config", cfg, "--init", (runs / "stage1.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"finetune", "--task", "slt", "--config", cfg, "--init", (runs / "stage2.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(events(r.out, "report").size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(runs / "eval_slt_dev.jsonl"));

  r = run({"evaluate", "--task", "slt", "--config", cfg, "--ckpt", (runs / "stage3_slt.ckpt").string(), "--manifest",
           dir.file("data/dev.jsonl"), "--decode", "beam", "--beam-width", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream rep(runs / "eval_slt_test.jsonl");
  std::string first;
  std::getline(rep, first);
  const auto report = nlohmann::json::parse(first).at("report");
  EXPECT_EQ(report.at("config_hash"), hash);
  EXPECT_EQ(report.at("n_samples"), 4);
  EXPECT_TRUE(report.contains("bleu"));

  r = run({"ablate", "--paradigm", "task_specific", "--features", "lm_enc", "--task", "cslr", "--config", cfg, "--ckpt",
           (runs / "stage1.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(events(r.out, "ablation_epoch").size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(runs / "ablate_task_specific_lm_enc_cslr.txt"));
  r = run({"ablate", "--paradigm", "unified", "--task", "islr", "--config", cfg, "--ckpt", (runs / "stage3_slt.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"ablate", "--paradigm", "task_specific", "--task", "slt", "--config", cfg, "--ckpt", (runs / "stage1.ckpt").string()});
  EXPECT_EQ(r.code, 2);
}
