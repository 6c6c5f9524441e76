// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "unisign/core/rng.hpp"
#include "unisign/encoders.hpp"
#include "unisign/pose_data.hpp"

namespace unisign {

struct SamplerConfig {
  double p_samp = 0.10;
  std::uint64_t seed = 0;
  bool dedupe = true;

  void validate() const {
    if (!(p_samp >= 0.0 && p_samp <= 1.0)) throw ConfigError("sampler.p_samp must lie in [0, 1]");
  }
};

/// Mean hand-keypoint confidence per frame.
inline std::vector<double> reliability_scores(const GroupedPose& grouped, GroupId hand) {
  if (!is_hand(hand)) throw Error("reliability_scores: group " + std::string(group_name(hand)) + " is not a hand");
  const auto& g = grouped[hand];
  const Index N = g.nodes();
  std::vector<double> rs(static_cast<std::size_t>(g.frames));
  for (Index t = 0; t < g.frames; ++t) {
    double s = 0;
    for (Index n = 0; n < N; ++n) s += g.confidence[static_cast<std::size_t>(t * N + n)];
    rs[t] = s / static_cast<double>(N);
  }
  return rs;
}

/// Sampling weight 1 - rs per frame.
inline std::vector<double> sampling_weights(const std::vector<double>& reliability) {
  std::vector<double> w(reliability.size());
  std::transform(reliability.begin(), reliability.end(), w.begin(), [](double r) { return 1.0 - r; });
  return w;
}

/// Number of draws for a clip of `frames` frames.
inline Index sample_count(Index frames, double p_samp) { return static_cast<Index>(static_cast<double>(frames) * p_samp); }

/// Draws floor(T * p_samp) frame indices with replacement, proportional to
/// `weights` (uniform when every weight is zero). Sorted ascending; duplicates
/// collapse when `cfg.dedupe` is set.
inline std::vector<Index> sample_frames(const std::vector<double>& weights, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index T = static_cast<Index>(weights.size());
  const Index k = sample_count(T, cfg.p_samp);
  if (k == 0 || T == 0) return {};
  std::vector<double> cumulative(weights.size());
  double total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0) throw Error("sample_frames: negative weight");
    total += weights[i];
    cumulative[i] = total;
  }
  if (total <= 0) {
    for (std::size_t i = 0; i < cumulative.size(); ++i) cumulative[i] = static_cast<double>(i + 1);
    total = static_cast<double>(T);
  }
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const double u = uniform01(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    out.push_back(std::min<Index>(it - cumulative.begin(), T - 1));
  }
  std::sort(out.begin(), out.end());
  if (cfg.dedupe) out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Random stream for one clip, hand and epoch; independent of scheduling order.
inline Rng sampler_stream(std::uint64_t seed, const std::string& clip_id, std::uint64_t epoch, GroupId hand) {
  return Rng(mix_seed(seed ^ fnv1a(clip_id) ^ mix_seed(epoch * 2 + (hand == GroupId::rh ? 1 : 0))));
}

/// Replaces the frames at `indices` with the fused rows; other frames are untouched.
template <class S>
PoseFeatures<S> scatter_fused(const PoseFeatures<S>& features, const Tensor<S>& fused, const std::vector<Index>& indices) {
  if (indices.empty()) return features;
  return {features.group, scatter_rows(features.features, fused, indices)};
}

}  // namespace unisign
