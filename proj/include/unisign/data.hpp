// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unisign/core/task.hpp"
#include "unisign/curation.hpp"
#include "unisign/language_head.hpp"
#include "unisign/model.hpp"

namespace unisign {

/// A clip's window of a program video, optionally restricted to a pixel rectangle.
class ClipFrames final : public FrameSource {
 public:
  ClipFrames(std::shared_ptr<const FrameSource> base, Index start, Index count, std::optional<Box> rect = std::nullopt)
      : base_(std::move(base)), start_(start), count_(count), rect_(rect) {}

  Index frame_count() const override { return count_; }

  Image frame(Index i) const override {
    if (i < 0 || i >= count_) throw DecodeError("frame " + std::to_string(i) + " out of range");
    Image full = base_->frame(start_ + i);
    if (!rect_) return full;
    const auto x0 = static_cast<Index>(rect_->x0), y0 = static_cast<Index>(rect_->y0);
    Image out(static_cast<Index>(rect_->width()), static_cast<Index>(rect_->height()));
    for (Index y = 0; y < out.height; ++y)
      for (Index x = 0; x < out.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = full.at(x0 + x, y0 + y, c);
    return out;
  }

 private:
  std::shared_ptr<const FrameSource> base_;
  Index start_, count_;
  std::optional<Box> rect_;
};

/// Frames [start, start + count) of a pose sequence.
inline PoseSequence slice_pose(const PoseSequence& seq, Index start, Index count, std::string clip_id) {
  if (start < 0 || count <= 0 || start + count > seq.frames)
    throw LengthMismatch("clip " + clip_id + ": window [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") exceeds the " + std::to_string(seq.frames) + "-frame keypoint file");
  PoseSequence out;
  out.frames = count;
  out.frame_rate = seq.frame_rate;
  out.clip_id = std::move(clip_id);
  const auto row = static_cast<std::size_t>(kWholeBodyKeypoints * kKeypointFields);
  out.values.assign(seq.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(start) * row),
                    seq.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(start + count) * row));
  return out;
}

/// Pixel rectangle of a fractional crop geometry.
inline Box crop_rect(const CropGeometry& g, Index width, Index height) {
  const auto W = static_cast<double>(width), H = static_cast<double>(height);
  return {std::floor(g.x0 * W), std::floor(g.y0 * H), std::floor(g.x1 * W), std::floor(g.y1 * H)};
}

/// Supervision for a record under a task. Pre-training uses the sentence.
inline SupervisionTarget build_target(const ClipRecord& r, Task task) {
  switch (task) {
    case Task::islr:
      if (!r.label || r.label->empty()) throw MissingAnnotation("clip " + r.clip_id + " has no label for islr");
      return {TargetKind::word, *r.label};
    case Task::cslr:
      if (r.glosses.empty()) throw MissingAnnotation("clip " + r.clip_id + " has no glosses for cslr");
      return gloss_target(r.glosses);
    default:
      if (r.text.empty()) throw MissingAnnotation("clip " + r.clip_id + " has no sentence for slt");
      return {TargetKind::sentence, r.text};
  }
}

/// Every piece of text a record can supervise with, for building vocabularies.
inline std::vector<std::string> record_texts(const std::vector<ClipRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (!r.text.empty()) out.push_back(r.text);
    if (!r.glosses.empty()) out.push_back(gloss_target(r.glosses).text);
    if (r.label) out.push_back(*r.label);
  }
  return out;
}

struct Example {
  ClipRecord record;
  Clip clip;
  SupervisionTarget target;
  std::vector<Index> target_ids;
};

/// Example from in-memory keypoints and optional frames.
inline Example make_example(const ClipRecord& r, const PoseSequence& seq, std::shared_ptr<const FrameSource> frames, Task task,
                            const Tokenizer& tok) {
  NormalizeOptions norm;
  norm.frame_width = r.frame_width;
  norm.frame_height = r.frame_height;
  Example ex;
  ex.record = r;
  ex.clip.clip_id = r.clip_id;
  ex.clip.pose = group_and_normalize(seq, canonical_groups(), norm);
  ex.clip.pose.clip_id = r.clip_id;
  ex.clip.frames = std::move(frames);
  ex.target = build_target(r, task);
  ex.target_ids = tok.encode(ex.target.text);
  if (ex.target_ids.empty()) throw EmptyTarget("clip " + r.clip_id + " has an empty target after tokenization");
  return ex;
}

struct LoadOptions {
  Task task = Task::slt;
  bool training = true;
  bool load_frames = false;
  Index max_frames = kMaxTrainFrames - 1;
};

/// Loads keypoints (and frames when asked) for every record. Relative paths
/// resolve against `base_dir`. Overlong training clips are skipped and
/// overlong evaluation clips are center-truncated; both are reported in `warnings`.
inline std::vector<Example> load_examples(const std::vector<ClipRecord>& records, const std::string& base_dir, const Tokenizer& tok,
                                          const LoadOptions& opts, std::vector<std::string>* warnings = nullptr) {
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_relative() ? std::filesystem::path(base_dir) / path : path).string();
  };
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  std::map<std::string, std::shared_ptr<const PoseSequence>> pose_cache;
  std::map<std::string, std::shared_ptr<const FrameSource>> video_cache;
  std::vector<Example> out;
  for (const auto& r : records) {
    if (r.keypoint_path.empty()) throw MissingAnnotation("clip " + r.clip_id + " has no keypoint_path");
    const auto kp = resolve(r.keypoint_path);
    auto& program = pose_cache[kp];
    if (!program) program = std::make_shared<const PoseSequence>(load_pose_sequence(kp, r.program_id, r.frame_rate));
    const Index count = r.frame_count > 0 ? r.frame_count : program->frames - r.frame_start;
    Index start = r.frame_start;
    Index frames = count;
    if (count > opts.max_frames) {
      if (opts.training) {
        warn("skipping training clip " + r.clip_id + " with " + std::to_string(count) + " frames");
        continue;
      }
      start += (count - opts.max_frames) / 2;
      frames = opts.max_frames;
      warn("center-truncating clip " + r.clip_id + " from " + std::to_string(count) + " to " + std::to_string(frames) + " frames");
    }
    PoseSequence seq = slice_pose(*program, start, frames, r.clip_id);

    NormalizeOptions norm;
    norm.frame_width = r.frame_width;
    norm.frame_height = r.frame_height;
    std::optional<Box> rect;
    if (r.crop) {
      if (r.frame_width <= 0 || r.frame_height <= 0) throw MissingAnnotation("clip " + r.clip_id + " has crop geometry but no frame size");
      rect = crop_rect(*r.crop, r.frame_width, r.frame_height);
      for (Index t = 0; t < seq.frames; ++t)
        for (Index k = 0; k < kWholeBodyKeypoints; ++k) {
          seq.at(t, k, 0) -= static_cast<float>(rect->x0);
          seq.at(t, k, 1) -= static_cast<float>(rect->y0);
        }
      norm.frame_width = static_cast<Index>(rect->width());
      norm.frame_height = static_cast<Index>(rect->height());
    }

    Example ex;
    ex.record = r;
    ex.clip.clip_id = r.clip_id;
    ex.clip.pose = group_and_normalize(seq, canonical_groups(), norm);
    if (opts.load_frames) {
      if (r.media_path.empty()) throw MissingAnnotation("clip " + r.clip_id + " has no media_path");
      const auto mp = resolve(r.media_path);
      auto& video = video_cache[mp];
      if (!video) video = open_video(mp);
      if (start + frames > video->frame_count())
        throw LengthMismatch("clip " + r.clip_id + " runs past the end of " + mp);
      ex.clip.frames = std::make_shared<ClipFrames>(video, start, frames, rect);
    }
    ex.target = build_target(r, opts.task);
    ex.target_ids = tok.encode(ex.target.text);
    if (ex.target_ids.empty()) throw EmptyTarget("clip " + r.clip_id + " has an empty target after tokenization");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace unisign
