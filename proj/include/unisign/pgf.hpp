// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "unisign/nn/layers.hpp"

namespace unisign {

enum class FusionMode { deformable, cross_attention };

inline std::string to_string(FusionMode m) { return m == FusionMode::deformable ? "deformable" : "cross_attention"; }

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "deformable") return FusionMode::deformable;
  if (s == "cross_attention") return FusionMode::cross_attention;
  throw ConfigError("unknown fusion mode '" + s + "' (expected deformable or cross_attention)");
}

struct PGFConfig {
  Index channels = 256;
  Index heads = 8;
  Index deform_points = 4;
  bool per_channel_gate = false;
  FusionMode mode = FusionMode::deformable;

  void validate() const {
    if (heads <= 0 || channels % heads != 0) throw ConfigError("pgf.heads must divide the channel width");
    if (deform_points < 1) throw ConfigError("pgf.deform_points must be >= 1");
  }
};

template <class S>
struct FuseResult {
  Tensor<S> fused;     // [N, C]
  Tensor<S> gate;      // [N, 1] or [N, C]
  Tensor<S> enriched;  // the attended features blended in by the gate, [N, C]
  std::vector<S> sampling_locations;  // [N, heads, points, 2], when requested
  Index clamped_coordinates = 0;
};

/// Prior-guided fusion of RGB feature maps into hand pose features.
///
/// Pose nodes first attend globally over the flattened RGB map, then gather
/// local evidence by deformable sampling around their own keypoint positions
/// (the reference points), and finally mix back through a gate
///   fused = (1 - g) * pose + g * enriched,   g = sigmoid(W [pose, enriched] + b) * tau.
/// W, b, tau and the offset predictor start at zero, so a new module returns
/// the pose features unchanged.
template <class S>
class PriorGuidedFusion {
 public:
  using scalar_type = S;

  PriorGuidedFusion() = default;
  PriorGuidedFusion(const PGFConfig& cfg, Rng& rng)
      : cfg_(cfg),
        global_attention_(cfg.channels, cfg.heads, rng),
        global_norm_(cfg.channels),
        value_(cfg.channels, cfg.channels, rng),
        offsets_(cfg.channels, cfg.heads * cfg.deform_points * 2, rng),
        weights_(cfg.channels, cfg.heads * cfg.deform_points, rng),
        output_(cfg.channels, cfg.channels, rng),
        gate_(2 * cfg.channels, cfg.per_channel_gate ? cfg.channels : 1, rng),
        tau_(nn::param_full<S>({1}, S(0))) {
    cfg.validate();
    offsets_.zero_init();
    gate_.zero_init();
  }

  /// One frame: pose_row [N, C], rgb_map [h, w, C], coords [N, 2] in the
  /// crop's unit square. `forced_gate` replaces g (testing and ablations).
  FuseResult<S> fuse_frame(const Tensor<S>& pose_row, const Tensor<S>& rgb_map, const Tensor<S>& coords,
                           std::optional<S> forced_gate = std::nullopt, bool record_locations = false) const {
    const Index N = pose_row.dim(0), C = cfg_.channels;
    if (pose_row.rank() != 2 || pose_row.dim(1) != C || rgb_map.rank() != 3 || rgb_map.dim(2) != C || coords.dim(0) != N)
      throw ShapeError("fuse_frame: pose " + to_string(pose_row.shape()) + ", map " + to_string(rgb_map.shape()) +
                       ", coords " + to_string(coords.shape()));
    FuseResult<S> res;
    std::vector<S> ref(coords.data().begin(), coords.data().end());
    for (S& v : ref) {
      if (!(v >= S(0) && v <= S(1))) ++res.clamped_coordinates;
      v = std::clamp(v, S(0), S(1));
    }
    const Index h = rgb_map.dim(0), w = rgb_map.dim(1);
    auto memory = reshape(rgb_map, {h * w, C});
    auto attended = global_norm_(add(pose_row, global_attention_(pose_row, memory)));

    if (cfg_.mode == FusionMode::cross_attention) {
      res.enriched = attended;
    } else {
      const Index H = cfg_.heads, P = cfg_.deform_points, d = C / H;
      auto values = reshape(value_(memory), {h, w, C});
      auto offsets = reshape(offsets_(attended), {N, H, P * 2});
      auto attn = softmax(reshape(weights_(attended), {N, H, P}));
      auto reference = Tensor<S>::from(ref, {N, 1, 2});
      if (record_locations) res.sampling_locations.resize(static_cast<std::size_t>(N * H * P * 2));
      std::vector<Tensor<S>> per_head;
      for (Index hd = 0; hd < H; ++hd) {
        auto head_values = slice(values, 2, hd * d, (hd + 1) * d);
        auto head_offsets = reshape(slice(offsets, 1, hd, hd + 1), {N, P, 2});
        auto points = reshape(add(reference, head_offsets), {N * P, 2});
        if (record_locations)
          for (Index n = 0; n < N; ++n)
            for (Index p = 0; p < P; ++p)
              for (Index k = 0; k < 2; ++k)
                res.sampling_locations[static_cast<std::size_t>(((n * H + hd) * P + p) * 2 + k)] = points.data()[(n * P + p) * 2 + k];
        auto sampled = reshape(grid_sample(head_values, points), {N, P, d});
        auto head_weights = reshape(slice(attn, 1, hd, hd + 1), {N, P, 1});
        per_head.push_back(sum(mul(sampled, head_weights), 1));
      }
      res.enriched = add(attended, output_(concat(per_head, 1)));
    }

    if (forced_gate) {
      res.gate = Tensor<S>::full({N, 1}, *forced_gate);
    } else {
      res.gate = mul(sigmoid(gate_(concat<S>({pose_row, res.enriched}, 1))), tau_);
    }
    auto keep = add_scalar(scale(res.gate, S(-1)), S(1));
    res.fused = add(mul(keep, pose_row), mul(res.gate, res.enriched));
    return res;
  }

  /// Deformable-sampling primitive: bilinear lookups of rgb_map at unit-square points.
  static Tensor<S> deform_sample(const Tensor<S>& rgb_map, const Tensor<S>& points) { return grid_sample(rgb_map, points); }

  /// K frames at once: pose [K, N, C], maps [K, h, w, C], coords one [N, 2] per frame.
  Tensor<S> fuse(const Tensor<S>& pose, const Tensor<S>& maps, const std::vector<Tensor<S>>& coords, Index* clamped = nullptr) const {
    const Index K = pose.dim(0);
    if (maps.dim(0) != K || static_cast<Index>(coords.size()) != K) throw ShapeError("fuse: frame counts disagree");
    std::vector<Tensor<S>> rows;
    for (Index k = 0; k < K; ++k) {
      auto p = reshape(slice(pose, 0, k, k + 1), {pose.dim(1), pose.dim(2)});
      auto m = reshape(slice(maps, 0, k, k + 1), {maps.dim(1), maps.dim(2), maps.dim(3)});
      auto r = fuse_frame(p, m, coords[k]);
      if (clamped) *clamped += r.clamped_coordinates;
      rows.push_back(r.fused);
    }
    return stack(rows);
  }

  const PGFConfig& config() const { return cfg_; }
  nn::Linear<S>& gate() { return gate_; }
  Tensor<S>& tau() { return tau_; }
  nn::Linear<S>& offset_predictor() { return offsets_; }

  void collect_params(nn::ParamList<S>& out) {
    out.child("global_attention", global_attention_);
    out.child("global_norm", global_norm_);
    out.child("value", value_);
    out.child("offsets", offsets_);
    out.child("weights", weights_);
    out.child("output", output_);
    out.child("gate", gate_);
    out.add("tau", tau_);
  }

 private:
  PGFConfig cfg_;
  nn::MultiHeadAttention<S> global_attention_;
  nn::LayerNorm<S> global_norm_;
  nn::Linear<S> value_;
  nn::Linear<S> offsets_;
  nn::Linear<S> weights_;
  nn::Linear<S> output_;
  nn::Linear<S> gate_;
  Tensor<S> tau_;
};

}  // namespace unisign
