// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "support/tempdir.hpp"
#include "unisign/core/rng.hpp"
#include "unisign/curation.hpp"

using namespace unisign;

namespace {

TranscriptInput abc_fixture() {
  TranscriptInput in;
  in.program_id = "news";
  in.utterances = {{"A。", 0, 3}, {"B？", 3, 7}, {"C！", 7, 9}};
  return in;
}

ClipRecord record(const std::string& id, Index frames, Split split) {
  ClipRecord r;
  r.clip_id = id;
  r.frame_count = frames;
  r.duration_s = static_cast<double>(frames) / 25.0;
  r.split = split;
  return r;
}

}  // namespace

TEST(Segment, ThreeMarksGiveThreeClips) {
  const auto res = segment(abc_fixture());
  ASSERT_EQ(res.segments.size(), 3u);
  EXPECT_EQ(res.segments[0], (Segment{"A。", 0, 3}));
  EXPECT_EQ(res.segments[1], (Segment{"B？", 3, 7}));
  EXPECT_EQ(res.segments[2], (Segment{"C！", 7, 9}));
  EXPECT_TRUE(res.warnings.empty());
}

TEST(Segment, MarksInsideAnUtteranceAreInterpolated) {
  TranscriptInput in;
  in.utterances = {{"甲乙。丙丁！", 10, 16}};
  const auto res = segment(in);
  ASSERT_EQ(res.segments.size(), 2u);
  EXPECT_EQ(res.segments[0], (Segment{"甲乙。", 10, 13}));
  EXPECT_EQ(res.segments[1], (Segment{"丙丁！", 13, 16}));
}

TEST(Segment, ClipsSpanUtterancesAndTilesTheProgram) {
  TranscriptInput in;
  in.utterances = {{"今天", 1, 2}, {"天气好。明天", 2, 5}, {"下雨？", 5, 6}, {"尾巴", 6, 7}};
  const auto res = segment(in);
  ASSERT_EQ(res.segments.size(), 2u);
  EXPECT_EQ(res.segments[0].text, "今天天气好。");
  EXPECT_DOUBLE_EQ(res.segments[0].start_s, 1.0);
  EXPECT_DOUBLE_EQ(res.segments[0].end_s, 2 + 3.0 * 4 / 6);
  EXPECT_EQ(res.segments[1].text, "明天下雨？");
  EXPECT_DOUBLE_EQ(res.segments[1].start_s, res.segments[0].end_s);
  EXPECT_DOUBLE_EQ(res.segments[1].end_s, 6.0);
  EXPECT_EQ(res.dropped_trailing_chars, 2);
  EXPECT_EQ(res.warnings.size(), 1u);
}

TEST(Segment, NoMarksGivesOneClipWithWarning) {
  TranscriptInput in;
  in.program_id = "p";
  in.utterances = {{"no marks here", 2, 4}, {"at all", 4, 8}};
  const auto res = segment(in);
  ASSERT_EQ(res.segments.size(), 1u);
  EXPECT_EQ(res.segments[0], (Segment{"no marks here at all", 2, 8}));
  EXPECT_EQ(res.warnings.size(), 1u);
}

TEST(Segment, CustomMarkSet) {
  TranscriptInput in;
  in.utterances = {{"one.", 0, 1}, {"two.", 1, 3}};
  in.marks = {"."};
  const auto res = segment(in);
  ASSERT_EQ(res.segments.size(), 2u);
  EXPECT_EQ(res.segments[1], (Segment{"two.", 1, 3}));
  EXPECT_EQ(segment(abc_fixture()).segments.size(), 3u);
}

TEST(Segment, PartitionPropertyOnRandomTranscripts) {
  Rng rng(1);
  const std::vector<std::string> pieces{"字", "词。", "好？", "对！", "的"};
  for (int trial = 0; trial < 200; ++trial) {
    TranscriptInput in;
    double t = uniform(rng, 0, 5);
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 8));
    for (Index i = 0; i < n; ++i) {
      std::string s;
      const Index len = 1 + static_cast<Index>(uniform_index(rng, 4));
      for (Index k = 0; k < len; ++k) s += pieces[uniform_index(rng, pieces.size())];
      const double d = uniform(rng, 0.1, 3);
      in.utterances.push_back({s, t, t + d});
      t += d;
    }
    const auto segs = segment(in).segments;
    ASSERT_FALSE(segs.empty());
    EXPECT_DOUBLE_EQ(segs.front().start_s, in.utterances.front().start_s);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      EXPECT_LE(segs[i].start_s, segs[i].end_s);
      if (i > 0) EXPECT_EQ(segs[i].start_s, segs[i - 1].end_s);
    }
  }
}

TEST(Segment, RejectsDecreasingTimestamps) {
  TranscriptInput in;
  in.utterances = {{"a。", 3, 4}, {"b。", 1, 2}};
  EXPECT_THROW(segment(in), Error);
}

TEST(Filters, StrictFrameLimitOnTrain) {
  const auto res = apply_filters({record("a", 511, Split::train), record("b", 512, Split::train), record("c", 600, Split::dev),
                                  record("d", 100, Split::test)});
  ASSERT_EQ(res.records.size(), 3u);
  EXPECT_EQ(res.records[0].clip_id, "a");
  EXPECT_EQ(res.records[1].clip_id, "c");
  EXPECT_EQ(res.dropped, 1);
  EXPECT_EQ(res.truncation_flagged, (std::vector<std::string>{"c"}));
  EXPECT_EQ(res.records[1], record("c", 600, Split::dev));
  EXPECT_TRUE(apply_filters({}).records.empty());
}

TEST(Stats, MeansAndVocabulary) {
  auto a = record("a", 100, Split::train), b = record("b", 150, Split::train);
  a.duration_s = 4;
  b.duration_s = 6;
  a.text = "ab";
  b.text = "abcd";
  const auto s = corpus_stats({a, b}, TextUnit::character);
  EXPECT_EQ(s.clips, 2);
  EXPECT_DOUBLE_EQ(s.mean_duration_s, 5.0);
  EXPECT_DOUBLE_EQ(s.mean_text_length, 3.0);
  EXPECT_EQ(s.vocabulary_size, 4);
  EXPECT_EQ(s.duration_histogram.counts, (std::vector<Index>{0, 0, 0, 0, 1, 0, 1}));
  EXPECT_THROW(corpus_stats({}), EmptyCorpus);
}

TEST(Stats, AutomaticUnitsFollowScript) {
  auto zh = record("z", 10, Split::train), en = record("e", 10, Split::train);
  zh.text = "今天 天气好。";
  en.text = "the cat sat";
  EXPECT_EQ(text_units(zh.text, TextUnit::automatic).size(), 6u);
  EXPECT_EQ(text_units(en.text, TextUnit::automatic).size(), 3u);
}

TEST(Manifest, RoundTripIsStructurallyEqual) {
  unisign::testing::TempDir dir;
  auto a = record("b_clip", 40, Split::dev);
  a.text = "你好。";
  a.glosses = {"HELLO", "YOU"};
  a.label = "hello";
  a.crop = CropGeometry{0.1, 0.2, 0.9, 1.0};
  a.media_path = "media/x.npy";
  auto b = record("a_clip", 20, Split::train);
  write_manifest(dir.file("m.jsonl"), {"abc123", {a, b}});
  const auto m = read_manifest(dir.file("m.jsonl"));
  EXPECT_EQ(m.config_hash, "abc123");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0], b);
  EXPECT_EQ(m.records[1], a);
}

TEST(Manifest, RejectsUnknownFieldsAndBadJson) {
  unisign::testing::TempDir dir;
  std::ofstream(dir.file("x.jsonl")) << "{\"clip_id\": \"a\", \"colour\": 1}\n";
  EXPECT_THROW(read_manifest(dir.file("x.jsonl")), MalformedFile);
  std::ofstream(dir.file("y.jsonl")) << "{not json\n";
  EXPECT_THROW(read_manifest(dir.file("y.jsonl")), MalformedFile);
}

TEST(Curation, RecordsFromSegmentsUseFrameRate) {
  const auto segs = segment(abc_fixture()).segments;
  ProgramMedia media;
  media.frame_rate = 25;
  const auto recs = records_from_segments("news", segs, media);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1].clip_id, "news_00001");
  EXPECT_EQ(recs[1].frame_start, 75);
  EXPECT_EQ(recs[1].frame_count, 100);
  EXPECT_EQ(recs[2].frame_count, frames_for(recs[2].duration_s, 25));
}

TEST(Curation, TranscriptAndGeometryFiles) {
  unisign::testing::TempDir dir;
  std::ofstream(dir.file("prog.jsonl")) << "{\"text\": \"A。\", \"start_s\": 0, \"end_s\": 3}\n"
                                         << "{\"text\": \"B？\", \"start_s\": 3, \"end_s\": 7}\n";
  const auto t = read_transcript(dir.file("prog.jsonl"));
  EXPECT_EQ(t.program_id, "prog");
  EXPECT_EQ(t.utterances.size(), 2u);
  std::ofstream(dir.file("geo.json")) << "{\"prog\": [0.1, 0.0, 0.9, 1.0]}";
  EXPECT_EQ(read_geometry(dir.file("geo.json")).at("prog"), (CropGeometry{0.1, 0.0, 0.9, 1.0}));
  std::ofstream(dir.file("bad.json")) << "{\"prog\": [0.9, 0.0, 0.1, 1.0]}";
  EXPECT_THROW(read_geometry(dir.file("bad.json")), ConfigError);
}
