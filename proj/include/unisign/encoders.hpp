// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "unisign/nn/layers.hpp"
#include "unisign/pose_data.hpp"

namespace unisign {

using Edge = std::pair<Index, Index>;

/// Skeleton edges over a group's local node order.
inline std::vector<Edge> default_edges(GroupId g) {
  std::vector<Edge> e;
  switch (g) {
    case GroupId::lh:
    case GroupId::rh:
      // Wrist (0) to five finger chains of four joints each.
      for (Index finger = 0; finger < 5; ++finger) {
        const Index base = 1 + 4 * finger;
        e.emplace_back(0, base);
        for (Index j = 0; j < 3; ++j) e.emplace_back(base + j, base + j + 1);
      }
      break;
    case GroupId::b:
      // nose, ears, shoulders, elbows, wrists
      e = {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {3, 4}, {3, 5}, {5, 7}, {4, 6}, {6, 8}};
      break;
    case GroupId::f:
      // Nose (9) is the hub; the mouth ring (10..17) closes on itself.
      for (Index n = 0; n < 18; ++n)
        if (n != 9) e.emplace_back(9, n);
      for (Index n = 10; n < 18; ++n) e.emplace_back(n, n == 17 ? 10 : n + 1);
      break;
  }
  return e;
}

/// Row-normalized (A + I) over `nodes`.
template <class S>
std::shared_ptr<const Buffer<S>> normalized_adjacency(Index nodes, const std::vector<Edge>& edges) {
  Buffer<S> a(static_cast<std::size_t>(nodes * nodes), S(0));
  for (Index i = 0; i < nodes; ++i) a[i * nodes + i] = S(1);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= nodes || v >= nodes)
      throw ConfigMismatch("edge (" + std::to_string(u) + "," + std::to_string(v) + ") outside " + std::to_string(nodes) + " nodes");
    a[u * nodes + v] = S(1);
    a[v * nodes + u] = S(1);
  }
  for (Index i = 0; i < nodes; ++i) {
    S deg = 0;
    for (Index j = 0; j < nodes; ++j) deg += a[i * nodes + j];
    for (Index j = 0; j < nodes; ++j) a[i * nodes + j] /= deg;
  }
  return std::make_shared<const Buffer<S>>(std::move(a));
}

struct GroupGraph {
  Index nodes = 0;
  std::vector<Edge> edges;
};

struct EncoderConfig {
  Index input_linear_dim = 64;
  std::vector<Index> gcn_dims{64, 128, 256};
  std::vector<Index> temporal_dims{256, 256, 256};
  Index temporal_kernel = 5;
  bool include_confidence = false;
  std::array<GroupGraph, 4> graphs{
      GroupGraph{21, default_edges(GroupId::lh)}, GroupGraph{21, default_edges(GroupId::rh)},
      GroupGraph{9, default_edges(GroupId::b)}, GroupGraph{18, default_edges(GroupId::f)}};

  Index channels() const { return temporal_dims.empty() ? gcn_dims.back() : temporal_dims.back(); }
  const GroupGraph& graph(GroupId g) const { return graphs[static_cast<std::size_t>(g)]; }

  void validate() const {
    if (temporal_kernel % 2 == 0) throw ConfigMismatch("temporal_kernel must be odd");
    if (gcn_dims.empty()) throw ConfigMismatch("gcn_dims must not be empty");
    for (const auto& g : graphs)
      if (g.nodes <= 0) throw ConfigMismatch("graph node counts must be positive");
  }
};

template <class S>
struct PoseFeatures {
  GroupId group = GroupId::lh;
  Tensor<S> features;  // [T, N, C]
};

template <class S>
struct SignFeatures {
  Tensor<S> features;  // [T, 4C]
  std::string clip_id;
};

/// Spatial graph layer: adjacency mix, linear, ReLU, LayerNorm, plus an
/// identity residual when widths match.
template <class S>
class GraphLayer {
 public:
  using scalar_type = S;

  GraphLayer() = default;
  GraphLayer(Index in, Index out, Rng& rng) : linear_(in, out, rng), norm_(out), residual_(in == out) {}

  Tensor<S> operator()(const std::shared_ptr<const Buffer<S>>& adjacency, const Tensor<S>& x) const {
    auto y = norm_(relu(linear_(node_mix(adjacency, x))));
    return residual_ ? add(y, x) : y;
  }

  void collect_params(nn::ParamList<S>& out) {
    out.child("linear", linear_);
    out.child("norm", norm_);
  }

 private:
  nn::Linear<S> linear_;
  nn::LayerNorm<S> norm_;
  bool residual_ = false;
};

/// Spatial-temporal block: graph mixing followed by a temporal convolution
/// over `kernel` frames (zero padded, length preserving).
template <class S>
class SpatialTemporalLayer {
 public:
  using scalar_type = S;

  SpatialTemporalLayer() = default;
  SpatialTemporalLayer(Index in, Index out, Index kernel, Rng& rng)
      : kernel_(kernel), spatial_(in, out, rng), spatial_norm_(out), temporal_(kernel * out, out, rng), temporal_norm_(out) {
    if (in != out) projection_ = nn::Linear<S>(in, out, rng);
  }

  Tensor<S> operator()(const std::shared_ptr<const Buffer<S>>& adjacency, const Tensor<S>& x) const {
    auto h = relu(spatial_norm_(spatial_(node_mix(adjacency, x))));
    h = temporal_norm_(temporal_(unfold_time(h, kernel_)));
    auto skip = projection_.weight.defined() ? projection_(x) : x;
    return relu(add(h, skip));
  }

  void collect_params(nn::ParamList<S>& out) {
    out.child("spatial", spatial_);
    out.child("spatial_norm", spatial_norm_);
    out.child("temporal", temporal_);
    out.child("temporal_norm", temporal_norm_);
    if (projection_.weight.defined()) out.child("projection", projection_);
  }

 private:
  Index kernel_ = 5;
  nn::Linear<S> spatial_;
  nn::LayerNorm<S> spatial_norm_;
  nn::Linear<S> temporal_;
  nn::LayerNorm<S> temporal_norm_;
  nn::Linear<S> projection_;
};

/// Per-group pose encoder: linear lift of keypoint coordinates followed by
/// the spatial GCN stack.
template <class S>
class PoseEncoder {
 public:
  using scalar_type = S;

  PoseEncoder() = default;
  PoseEncoder(GroupId group, const EncoderConfig& cfg, Rng& rng) : group_(group), with_confidence_(cfg.include_confidence) {
    const auto& g = cfg.graph(group);
    nodes_ = g.nodes;
    adjacency_ = normalized_adjacency<S>(g.nodes, g.edges);
    lift_ = nn::Linear<S>(cfg.include_confidence ? 3 : 2, cfg.input_linear_dim, rng);
    Index width = cfg.input_linear_dim;
    for (Index d : cfg.gcn_dims) {
      layers_.emplace_back(width, d, rng);
      width = d;
    }
  }

  PoseFeatures<S> operator()(const GroupData& data) const {
    if (data.nodes() != nodes_)
      throw ConfigMismatch("group " + std::string(group_name(group_)) + ": adjacency has " + std::to_string(nodes_) +
                           " nodes, input has " + std::to_string(data.nodes()));
    return (*this)(data.features<S>(with_confidence_));
  }

  PoseFeatures<S> operator()(const Tensor<S>& coords) const {
    auto x = lift_(coords);
    for (const auto& layer : layers_) x = layer(adjacency_, x);
    return {group_, x};
  }

  const std::shared_ptr<const Buffer<S>>& adjacency() const { return adjacency_; }
  Index nodes() const { return nodes_; }

  void collect_params(nn::ParamList<S>& out) {
    out.child("lift", lift_);
    for (std::size_t i = 0; i < layers_.size(); ++i) out.child("gcn" + std::to_string(i), layers_[i]);
  }

 private:
  GroupId group_ = GroupId::lh;
  bool with_confidence_ = false;
  Index nodes_ = 0;
  std::shared_ptr<const Buffer<S>> adjacency_;
  nn::Linear<S> lift_;
  std::vector<GraphLayer<S>> layers_;
};

/// Short-term temporal encoder: a stack of spatial-temporal blocks.
template <class S>
class TemporalEncoder {
 public:
  using scalar_type = S;

  TemporalEncoder() = default;
  TemporalEncoder(GroupId group, const EncoderConfig& cfg, Rng& rng) : group_(group) {
    const auto& g = cfg.graph(group);
    adjacency_ = normalized_adjacency<S>(g.nodes, g.edges);
    Index width = cfg.gcn_dims.back();
    for (Index d : cfg.temporal_dims) {
      layers_.emplace_back(width, d, cfg.temporal_kernel, rng);
      width = d;
    }
  }

  PoseFeatures<S> operator()(const PoseFeatures<S>& in) const {
    if (in.features.dim(0) < 1) throw ShapeError("temporal encoder needs T >= 1");
    auto x = in.features;
    for (const auto& layer : layers_) x = layer(adjacency_, x);
    return {in.group, x};
  }

  void collect_params(nn::ParamList<S>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) out.child("stgcn" + std::to_string(i), layers_[i]);
  }

 private:
  GroupId group_ = GroupId::lh;
  std::shared_ptr<const Buffer<S>> adjacency_;
  std::vector<SpatialTemporalLayer<S>> layers_;
};

/// Mean over nodes per group, concatenated in (lh, rh, b, f) order -> [T, 4C].
template <class S>
SignFeatures<S> aggregate_sign(const std::map<GroupId, PoseFeatures<S>>& features, std::string clip_id = {}) {
  std::vector<Tensor<S>> pooled;
  Index T = -1, C = -1;
  for (GroupId g : kGroupOrder) {
    auto it = features.find(g);
    if (it == features.end()) throw GroupMissing("aggregate_sign: group " + std::string(group_name(g)) + " missing");
    const auto& f = it->second.features;
    if (f.rank() != 3) throw ShapeError("aggregate_sign expects [T,N,C] features");
    if (T < 0) {
      T = f.dim(0);
      C = f.dim(2);
    } else if (f.dim(0) != T || f.dim(2) != C) {
      throw LengthMismatch("aggregate_sign: group " + std::string(group_name(g)) + " has shape " + to_string(f.shape()));
    }
    pooled.push_back(mean(f, 1));
  }
  return {concat(pooled, 1), std::move(clip_id)};
}

/// All per-group encoders; weights are not shared between groups.
template <class S>
class SignEncoder {
 public:
  using scalar_type = S;

  SignEncoder() = default;
  SignEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (GroupId g : kGroupOrder) pose_[static_cast<std::size_t>(g)] = PoseEncoder<S>(g, cfg, rng);
    for (GroupId g : kGroupOrder) temporal_[static_cast<std::size_t>(g)] = TemporalEncoder<S>(g, cfg, rng);
  }

  PoseFeatures<S> encode_pose_group(const GroupedPose& grouped, GroupId g) const { return pose(g)(grouped[g]); }
  PoseFeatures<S> encode_temporal(const PoseFeatures<S>& f) const { return temporal(f.group)(f); }

  /// Pose-only path from grouped keypoints to F_sign.
  SignFeatures<S> operator()(const GroupedPose& grouped) const {
    std::map<GroupId, PoseFeatures<S>> out;
    for (GroupId g : kGroupOrder) out[g] = encode_temporal(encode_pose_group(grouped, g));
    return aggregate_sign(out, grouped.clip_id);
  }

  const PoseEncoder<S>& pose(GroupId g) const { return pose_[static_cast<std::size_t>(g)]; }
  const TemporalEncoder<S>& temporal(GroupId g) const { return temporal_[static_cast<std::size_t>(g)]; }
  const EncoderConfig& config() const { return cfg_; }

  void collect_params(nn::ParamList<S>& out) {
    for (GroupId g : kGroupOrder) {
      const std::string n(group_name(g));
      out.child("pose_" + n, pose_[static_cast<std::size_t>(g)]);
      out.child("temporal_" + n, temporal_[static_cast<std::size_t>(g)]);
    }
  }

 private:
  EncoderConfig cfg_;
  std::array<PoseEncoder<S>, 4> pose_;
  std::array<TemporalEncoder<S>, 4> temporal_;
};

}  // namespace unisign
