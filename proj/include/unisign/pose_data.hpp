// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unisign/core/error.hpp"
#include "unisign/core/npy.hpp"
#include "unisign/tensor/tensor.hpp"

namespace unisign {

inline constexpr Index kWholeBodyKeypoints = 133;
inline constexpr Index kKeypointFields = 3;  // x, y, confidence

enum class GroupId { lh = 0, rh = 1, b = 2, f = 3 };
inline constexpr std::array<GroupId, 4> kGroupOrder{GroupId::lh, GroupId::rh, GroupId::b, GroupId::f};

inline std::string_view group_name(GroupId g) {
  switch (g) {
    case GroupId::lh: return "lh";
    case GroupId::rh: return "rh";
    case GroupId::b: return "b";
    case GroupId::f: return "f";
  }
  return "?";
}

inline bool is_hand(GroupId g) { return g == GroupId::lh || g == GroupId::rh; }

/// Whole-body keypoints of one clip: T frames x 133 keypoints x (x, y, confidence),
/// coordinates in source pixels.
struct PoseSequence {
  std::vector<float> values;
  Index frames = 0;
  double frame_rate = 25.0;
  std::string clip_id;

  float x(Index t, Index k) const { return values[static_cast<std::size_t>((t * kWholeBodyKeypoints + k) * 3)]; }
  float y(Index t, Index k) const { return values[static_cast<std::size_t>((t * kWholeBodyKeypoints + k) * 3 + 1)]; }
  float confidence(Index t, Index k) const { return values[static_cast<std::size_t>((t * kWholeBodyKeypoints + k) * 3 + 2)]; }
  float& at(Index t, Index k, int field) { return values[static_cast<std::size_t>((t * kWholeBodyKeypoints + k) * 3 + field)]; }
};

/// Validates shape and value contracts.
inline void validate(const PoseSequence& seq) {
  if (seq.frames == 0) throw EmptyClip("clip '" + seq.clip_id + "' has no frames");
  if (static_cast<Index>(seq.values.size()) != seq.frames * kWholeBodyKeypoints * kKeypointFields)
    throw MalformedFile("clip '" + seq.clip_id + "': payload does not match T x 133 x 3");
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    const float v = seq.values[i];
    if (!std::isfinite(v)) throw MalformedFile("clip '" + seq.clip_id + "': non-finite value at offset " + std::to_string(i));
    if (i % 3 == 2 && (v < 0.0f || v > 1.0f))
      throw MalformedFile("clip '" + seq.clip_id + "': confidence outside [0,1] at offset " + std::to_string(i));
  }
}

/// Reads a keypoint file: an .npy array of shape (T, 133, 3), float32 or float64.
inline PoseSequence load_pose_sequence(const std::string& path, std::string clip_id = {}, double frame_rate = 25.0) {
  const auto arr = npy::read(path);
  if (arr.shape.size() != 3 || arr.shape[1] != kWholeBodyKeypoints || arr.shape[2] != kKeypointFields)
    throw MalformedFile(path + ": expected shape (T, 133, 3), got " + to_string(arr.shape));
  PoseSequence seq;
  seq.frames = arr.shape[0];
  seq.values = npy::as_float(arr);
  seq.frame_rate = frame_rate;
  seq.clip_id = clip_id.empty() ? path : std::move(clip_id);
  if (seq.frames == 0) throw EmptyClip(path + ": T = 0");
  validate(seq);
  return seq;
}

inline void save_pose_sequence(const std::string& path, const PoseSequence& seq) {
  npy::write_f32(path, {seq.frames, kWholeBodyKeypoints, kKeypointFields}, seq.values);
}

/// Keeps the central `max_frames` frames.
inline PoseSequence truncate_center(const PoseSequence& seq, Index max_frames) {
  if (seq.frames <= max_frames) return seq;
  const Index start = (seq.frames - max_frames) / 2;
  PoseSequence out = seq;
  out.frames = max_frames;
  const auto row = static_cast<std::size_t>(kWholeBodyKeypoints * kKeypointFields);
  out.values.assign(seq.values.begin() + static_cast<std::ptrdiff_t>(start * row),
                    seq.values.begin() + static_cast<std::ptrdiff_t>((start + max_frames) * row));
  return out;
}

/// A keypoint subset. Indices are stored 0-based; `from_one_based` converts the
/// 1-based numbering of the whole-body skeleton charts.
struct GroupSpec {
  GroupId id = GroupId::lh;
  std::vector<Index> indices;
  std::optional<Index> root;

  Index node_count() const { return static_cast<Index>(indices.size()); }

  static GroupSpec from_one_based(GroupId id, const std::vector<Index>& one_based, std::optional<Index> root_one_based) {
    GroupSpec s;
    s.id = id;
    for (Index i : one_based) s.indices.push_back(i - 1);
    if (root_one_based) s.root = *root_one_based - 1;
    return s;
  }
};

namespace detail {
inline std::vector<Index> range_inclusive(Index a, Index b) {
  std::vector<Index> v;
  for (Index i = a; i <= b; ++i) v.push_back(i);
  return v;
}
}  // namespace detail

/// The 69-keypoint grouping: hands 21+21, body 9, face 18.
inline std::vector<GroupSpec> canonical_groups() {
  std::vector<Index> body{1};
  for (Index i = 4; i <= 11; ++i) body.push_back(i);
  std::vector<Index> face{24, 26, 28, 30, 32, 34, 36, 38, 40, 54};
  for (Index i = 84; i <= 91; ++i) face.push_back(i);
  return {
      GroupSpec::from_one_based(GroupId::lh, detail::range_inclusive(92, 112), 92),
      GroupSpec::from_one_based(GroupId::rh, detail::range_inclusive(113, 133), 113),
      GroupSpec::from_one_based(GroupId::b, body, std::nullopt),
      GroupSpec::from_one_based(GroupId::f, face, 54),
  };
}

struct NormalizeOptions {
  /// Divide coordinates by max(frame_width, frame_height) when both are known.
  bool scale_by_frame = true;
  Index frame_width = 0;
  Index frame_height = 0;
};

/// One group's keypoints: root-relative (scaled) coordinates, confidences and
/// the untouched pixel coordinates.
struct GroupData {
  GroupSpec spec;
  Index frames = 0;
  std::vector<float> coords;      // T x N x 2
  std::vector<float> confidence;  // T x N
  std::vector<float> raw;         // T x N x 2, source pixels

  Index nodes() const { return spec.node_count(); }

  /// [T, N, 2] coordinates, or [T, N, 3] with confidences appended.
  template <class S>
  Tensor<S> features(bool with_confidence = false) const {
    const Index N = nodes(), F = with_confidence ? 3 : 2;
    std::vector<S> v(static_cast<std::size_t>(frames * N * F));
    for (Index t = 0; t < frames; ++t)
      for (Index n = 0; n < N; ++n) {
        const Index i = t * N + n;
        v[i * F] = static_cast<S>(coords[2 * i]);
        v[i * F + 1] = static_cast<S>(coords[2 * i + 1]);
        if (with_confidence) v[i * F + 2] = static_cast<S>(confidence[i]);
      }
    return Tensor<S>::from(std::move(v), {frames, N, F});
  }
};

struct GroupedPose {
  std::array<GroupData, 4> groups;
  Index frames = 0;
  Index frame_width = 0;
  Index frame_height = 0;
  std::string clip_id;

  const GroupData& operator[](GroupId g) const { return groups[static_cast<std::size_t>(g)]; }
  GroupData& operator[](GroupId g) { return groups[static_cast<std::size_t>(g)]; }
};

/// Selects each group's keypoints and normalizes hands and face relative to
/// their root keypoint; the body keeps its coordinates.
inline GroupedPose group_and_normalize(const PoseSequence& seq, const std::vector<GroupSpec>& specs = canonical_groups(),
                                       const NormalizeOptions& opts = {}) {
  GroupedPose out;
  out.frames = seq.frames;
  out.frame_width = opts.frame_width;
  out.frame_height = opts.frame_height;
  out.clip_id = seq.clip_id;
  const bool scaled = opts.scale_by_frame && opts.frame_width > 0 && opts.frame_height > 0;
  const float inv_scale = scaled ? 1.0f / static_cast<float>(std::max(opts.frame_width, opts.frame_height)) : 1.0f;
  std::array<bool, 4> seen{};
  for (const auto& spec : specs) {
    for (Index k : spec.indices)
      if (k < 0 || k >= kWholeBodyKeypoints)
        throw IndexOutOfRange("group " + std::string(group_name(spec.id)) + " index " + std::to_string(k + 1) + " exceeds 133");
    if (spec.root && (*spec.root < 0 || *spec.root >= kWholeBodyKeypoints))
      throw IndexOutOfRange("group root " + std::to_string(*spec.root + 1) + " exceeds 133");
    GroupData g;
    g.spec = spec;
    g.frames = seq.frames;
    const Index N = spec.node_count();
    g.coords.resize(static_cast<std::size_t>(seq.frames * N * 2));
    g.raw.resize(g.coords.size());
    g.confidence.resize(static_cast<std::size_t>(seq.frames * N));
    for (Index t = 0; t < seq.frames; ++t) {
      const float rx = spec.root ? seq.x(t, *spec.root) : 0.0f;
      const float ry = spec.root ? seq.y(t, *spec.root) : 0.0f;
      for (Index n = 0; n < N; ++n) {
        const Index k = spec.indices[n], i = t * N + n;
        g.raw[2 * i] = seq.x(t, k);
        g.raw[2 * i + 1] = seq.y(t, k);
        g.coords[2 * i] = (seq.x(t, k) - rx) * inv_scale;
        g.coords[2 * i + 1] = (seq.y(t, k) - ry) * inv_scale;
        g.confidence[i] = seq.confidence(t, k);
      }
    }
    seen[static_cast<std::size_t>(spec.id)] = true;
    out[spec.id] = std::move(g);
  }
  for (GroupId id : kGroupOrder)
    if (!seen[static_cast<std::size_t>(id)]) throw GroupMissing("no spec for group " + std::string(group_name(id)));
  return out;
}

}  // namespace unisign
