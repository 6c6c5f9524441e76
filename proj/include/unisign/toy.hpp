// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "unisign/curation.hpp"
#include "unisign/data.hpp"
#include "unisign/synthetic.hpp"

namespace unisign::toy {

// Small synthetic corpora: random or class-conditioned skeleton motion paired
// with sentences, gloss sequences and labels.

inline const std::vector<std::string>& word_list() {
  static const std::vector<std::string> words{
      "the",   "a",     "cat",   "dog",   "sees",  "likes", "big",    "small", "red",   "blue",  "house", "tree",
      "runs",  "walks", "today", "now",   "we",    "you",   "they",   "eat",   "bread", "water", "happy", "sad",
      "book",  "read",  "go",    "home",  "school", "friend", "sun",  "rain",  "cold",  "hot",   "good",  "night"};
  return words;
}

struct ClipData {
  ClipRecord record;
  PoseSequence pose;
  std::vector<Image> frames;
};

struct CorpusOptions {
  Index clips = 16;
  Index min_frames = 8;
  Index max_frames = 8;
  Index min_words = 3;
  Index max_words = 6;
  std::uint64_t seed = 0;
  Split split = Split::train;
  std::string prefix = "toy";
  bool render_video = false;
  synthetic::PoseOptions pose;
};

namespace detail {

inline ClipRecord base_record(const std::string& id, Index T, const CorpusOptions& o) {
  ClipRecord r;
  r.clip_id = id;
  r.program_id = id;
  r.frame_count = T;
  r.frame_rate = 25.0;
  r.duration_s = static_cast<double>(T) / 25.0;
  r.frame_width = o.pose.frame_width;
  r.frame_height = o.pose.frame_height;
  r.split = o.split;
  return r;
}

inline std::vector<std::string> upper(const std::vector<std::string>& words) {
  std::vector<std::string> g;
  for (auto w : words) {
    for (auto& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    g.push_back(w);
  }
  return g;
}

}  // namespace detail

/// Random motions with distinct sentences; glosses are the upper-cased words, the label is the first word.
inline std::vector<ClipData> sentence_corpus(const CorpusOptions& o) {
  Rng rng(mix_seed(o.seed ^ 0x70c0ULL));
  std::set<std::string> used;
  std::vector<ClipData> out;
  const auto& words = word_list();
  while (static_cast<Index>(out.size()) < o.clips) {
    const Index n = o.min_words + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(o.max_words - o.min_words + 1)));
    std::vector<std::string> sent;
    for (Index i = 0; i < n; ++i) sent.push_back(words[uniform_index(rng, words.size())]);
    const auto text = text::join_words(sent);
    if (!used.insert(text).second) continue;
    const Index T = o.min_frames + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(o.max_frames - o.min_frames + 1)));
    char id[32];
    std::snprintf(id, sizeof id, "%s_%04zu", o.prefix.c_str(), out.size());
    ClipData c;
    c.record = detail::base_record(id, T, o);
    c.record.text = text;
    c.record.glosses = detail::upper(sent);
    c.record.label = sent.front();
    c.pose = synthetic::random_pose(T, rng, o.pose, id);
    if (o.render_video) c.frames = synthetic::render_frames(c.pose, o.pose);
    out.push_back(std::move(c));
  }
  return out;
}

/// `per_class` clips for each of `classes` fixed motions; labels are distinct words.
inline std::vector<ClipData> class_corpus(Index classes, Index per_class, const CorpusOptions& o) {
  if (classes > static_cast<Index>(word_list().size())) throw ConfigError("too many toy classes");
  Rng rng(mix_seed(o.seed ^ 0xc1a55ULL));
  std::vector<ClipData> out;
  for (Index k = 0; k < per_class; ++k)
    for (Index c = 0; c < classes; ++c) {
      const Index T = o.min_frames + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(o.max_frames - o.min_frames + 1)));
      char id[48];
      std::snprintf(id, sizeof id, "%s_c%02zu_%03zu", o.prefix.c_str(), static_cast<std::size_t>(c), static_cast<std::size_t>(k));
      const std::string label = word_list()[static_cast<std::size_t>(2 + c)];
      ClipData d;
      d.record = detail::base_record(id, T, o);
      d.record.label = label;
      d.record.text = label;
      d.record.glosses = detail::upper({label});
      d.pose = synthetic::render_pose(synthetic::class_motion(c, o.pose), T, rng, o.pose, id);
      if (o.render_video) d.frames = synthetic::render_frames(d.pose, o.pose);
      out.push_back(std::move(d));
    }
  return out;
}

inline std::vector<ClipRecord> records_of(const std::vector<ClipData>& clips) {
  std::vector<ClipRecord> out;
  for (const auto& c : clips) out.push_back(c.record);
  return out;
}

inline std::vector<Example> examples(const std::vector<ClipData>& clips, Task task, const Tokenizer& tok) {
  std::vector<Example> out;
  for (const auto& c : clips) {
    std::shared_ptr<const FrameSource> frames;
    if (!c.frames.empty()) frames = std::make_shared<InMemoryFrames>(c.frames);
    out.push_back(make_example(c.record, c.pose, frames, task, tok));
  }
  return out;
}

/// Writes each clip as its own program (keypoints/<id>.npy, video/<id>.npy) and
/// a manifest whose paths are relative to `dir`.
inline void write_corpus(const std::string& dir, std::vector<ClipData> clips, const std::string& manifest_name, const std::string& config_hash) {
  std::filesystem::create_directories(std::filesystem::path(dir) / "keypoints");
  if (!clips.empty() && !clips.front().frames.empty()) std::filesystem::create_directories(std::filesystem::path(dir) / "video");
  Manifest m;
  m.config_hash = config_hash;
  for (auto& c : clips) {
    c.record.keypoint_path = "keypoints/" + c.record.clip_id + ".npy";
    save_pose_sequence((std::filesystem::path(dir) / c.record.keypoint_path).string(), c.pose);
    if (!c.frames.empty()) {
      c.record.media_path = "video/" + c.record.clip_id + ".npy";
      write_raw_video((std::filesystem::path(dir) / c.record.media_path).string(), c.frames);
    }
    m.records.push_back(c.record);
  }
  write_manifest((std::filesystem::path(dir) / manifest_name).string(), m);
}

}  // namespace unisign::toy
