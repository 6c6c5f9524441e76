// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unisign/encoders.hpp"
#include "unisign/language_head.hpp"
#include "unisign/pgf.hpp"
#include "unisign/pose_data.hpp"
#include "unisign/sampler.hpp"
#include "unisign/vision.hpp"

namespace unisign {

/// Epoch key used for RGB frame sampling outside training, so evaluation is repeatable.
inline constexpr std::uint64_t kEvalEpoch = std::numeric_limits<std::uint64_t>::max();

struct ModelConfig {
  EncoderConfig encoder;
  LMConfig lm;
  PGFConfig pgf;
  VisionConfig vision;
  CropOptions crop;
  SamplerConfig sampler;
  bool use_rgb = false;

  Index sign_dim() const { return 4 * encoder.channels(); }

  void validate() const {
    encoder.validate();
    lm.validate();
    pgf.validate();
    sampler.validate();
    const Index c = encoder.gcn_dims.back();
    if (pgf.channels != c) throw ConfigError("pgf.channels must equal the last gcn width (" + std::to_string(c) + ")");
    if (vision.output_channels != c) throw ConfigError("vision.output_channels must equal the last gcn width (" + std::to_string(c) + ")");
  }
};

/// One clip ready for the model. `frames` may be null for pose-only use.
struct Clip {
  std::string clip_id;
  GroupedPose pose;
  std::shared_ptr<const FrameSource> frames;
};

struct ForwardStats {
  Index rgb_frames = 0;
  Index clamped_points = 0;
  bool rgb_missing = false;
};

/// Pose encoders, optional RGB fusion on sampled hand frames, temporal
/// encoders, projection and the sequence-to-sequence language model.
template <class S>
class UniSignModel {
 public:
  using scalar_type = S;

  UniSignModel(const ModelConfig& cfg, Index vocab_size, Rng& rng)
      : cfg_(cfg),
        encoder_((cfg.validate(), cfg.encoder), rng),
        projection_(cfg.sign_dim(), cfg.lm.d_model, rng),
        lm_(cfg.lm, vocab_size, rng) {
    if (cfg.use_rgb) {
      vision_ = std::make_unique<ConvImageEncoder<S>>(cfg.vision, rng);
      pgf_[0] = std::make_unique<PriorGuidedFusion<S>>(cfg.pgf, rng);
      pgf_[1] = std::make_unique<PriorGuidedFusion<S>>(cfg.pgf, rng);
    }
  }

  /// F_sign for a clip, [T, 4C]. `epoch` keys the RGB frame sampler.
  Tensor<S> sign_features(const Clip& clip, std::uint64_t epoch = kEvalEpoch, ForwardStats* stats = nullptr) const {
    std::map<GroupId, PoseFeatures<S>> out;
    for (GroupId g : kGroupOrder) {
      auto f = encoder_.encode_pose_group(clip.pose, g);
      if (is_hand(g) && cfg_.use_rgb) f = fuse_hand(clip, g, std::move(f), epoch, stats);
      out[g] = encoder_.encode_temporal(f);
    }
    return aggregate_sign(out, clip.clip_id).features;
  }

  Tensor<S> memory(const Clip& clip, std::uint64_t epoch = kEvalEpoch, ForwardStats* stats = nullptr) const {
    return lm_.encode(projection_(sign_features(clip, epoch, stats)));
  }

  LossTerms<S> loss(const Clip& clip, const std::vector<Index>& target, std::uint64_t epoch = kEvalEpoch,
                    ForwardStats* stats = nullptr) const {
    return lm_loss<S>(lm_, memory(clip, epoch, stats), target);
  }

  std::vector<Index> generate(const Clip& clip, const DecodeConfig& decode = {}) const {
    NoGradGuard guard;
    return unisign::generate<S>(lm_, memory(clip), decode);
  }

  const ModelConfig& config() const { return cfg_; }
  const SignEncoder<S>& encoder() const { return encoder_; }
  const SignProjection<S>& projection() const { return projection_; }
  const Seq2SeqLM<S>& lm() const { return lm_; }
  Seq2SeqLM<S>& lm() { return lm_; }
  const PriorGuidedFusion<S>* pgf(GroupId hand) const { return pgf_[hand == GroupId::rh ? 1 : 0].get(); }

  void collect_params(nn::ParamList<S>& out) {
    out.child("encoder", encoder_);
    out.child("projection", projection_);
    out.child("lm", lm_);
    if (vision_) {
      out.child("vision", *vision_);
      out.child("pgf_lh", *pgf_[0]);
      out.child("pgf_rh", *pgf_[1]);
    }
  }

 private:
  PoseFeatures<S> fuse_hand(const Clip& clip, GroupId g, PoseFeatures<S> f, std::uint64_t epoch, ForwardStats* stats) const {
    if (!clip.frames) {
      if (stats) stats->rgb_missing = true;
      return f;
    }
    if (clip.frames->frame_count() < clip.pose.frames)
      throw LengthMismatch("clip " + clip.clip_id + ": video has " + std::to_string(clip.frames->frame_count()) +
                           " frames, keypoints have " + std::to_string(clip.pose.frames));
    Rng rng = sampler_stream(cfg_.sampler.seed, clip.clip_id, epoch, g);
    const auto idx = sample_frames(sampling_weights(reliability_scores(clip.pose, g)), cfg_.sampler, rng);
    if (idx.empty()) return f;
    const auto crops = crop_hand(*clip.frames, clip.pose, g, idx, cfg_.crop);
    std::vector<const HandCrop*> ptrs;
    std::vector<Tensor<S>> coords;
    for (const auto& c : crops) {
      ptrs.push_back(&c);
      coords.push_back(crop_coordinates<S>(clip.pose[g], c.source_frame_index, c.crop_box));
    }
    const auto maps = (*vision_)(stack_crops<S>(ptrs));
    Index clamped = 0;
    const auto fused = pgf_[g == GroupId::rh ? 1 : 0]->fuse(index_select(f.features, 0, idx), maps, coords, &clamped);
    if (stats) {
      stats->rgb_frames += static_cast<Index>(idx.size());
      stats->clamped_points += clamped;
    }
    return scatter_fused(f, fused, idx);
  }

  ModelConfig cfg_;
  SignEncoder<S> encoder_;
  SignProjection<S> projection_;
  Seq2SeqLM<S> lm_;
  std::unique_ptr<ImageEncoder<S>> vision_;
  std::array<std::unique_ptr<PriorGuidedFusion<S>>, 2> pgf_;
};

}  // namespace unisign
