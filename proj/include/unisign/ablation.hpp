// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unisign/config.hpp"
#include "unisign/metrics.hpp"
#include "unisign/nn/ctc.hpp"
#include "unisign/nn/layers.hpp"
#include "unisign/nn/optim.hpp"
#include "unisign/trainer.hpp"

namespace unisign {

// Task-specific heads trained on frozen backbone features, used as the
// baseline against unified generative fine-tuning.

enum class FeatureSource { sign, lm_enc };
enum class Paradigm { unified, task_specific };
enum class HeadKind { classifier, ctc };

inline std::string to_string(FeatureSource f) { return f == FeatureSource::sign ? "sign" : "lm_enc"; }
inline std::string to_string(Paradigm p) { return p == Paradigm::unified ? "unified" : "task_specific"; }
inline std::string to_string(HeadKind h) { return h == HeadKind::classifier ? "classifier" : "ctc"; }

inline FeatureSource parse_feature_source(const std::string& s) {
  if (s == "sign") return FeatureSource::sign;
  if (s == "lm_enc") return FeatureSource::lm_enc;
  throw ConfigError("unknown feature source '" + s + "' (expected sign or lm_enc)");
}
inline Paradigm parse_paradigm(const std::string& s) {
  if (s == "unified") return Paradigm::unified;
  if (s == "task_specific") return Paradigm::task_specific;
  throw ConfigError("unknown paradigm '" + s + "' (expected unified or task_specific)");
}

/// The head each task uses by default: a classifier for islr, LSTM + CTC for cslr.
inline HeadKind default_head(Task task) {
  switch (task) {
    case Task::islr:
      return HeadKind::classifier;
    case Task::cslr:
      return HeadKind::ctc;
    default:
      throw UnsupportedTask("no task-specific head for " + to_string(task));
  }
}

/// Frozen per-frame features: T x 4C for sign, T x D_lm for lm_enc.
template <class S>
Tensor<S> extract_features(const UniSignModel<S>& model, const Clip& clip, FeatureSource source) {
  NoGradGuard guard;
  return source == FeatureSource::sign ? model.sign_features(clip) : model.memory(clip);
}

/// Mean over time, then a linear layer.
template <class S>
class ClassifierHead {
 public:
  ClassifierHead(Index in, Index classes, Rng& rng) : out_(in, classes, rng) {}
  Tensor<S> logits(const Tensor<S>& feats) const { return out_(mean(feats, 0)); }
  Tensor<S> loss(const Tensor<S>& feats, Index label) const {
    auto lp = log_softmax(reshape(logits(feats), {1, -1}));
    return scale(sum_all(pick(lp, {label})), S(-1));
  }
  void collect_params(nn::ParamList<S>& p) { p.child("output", out_); }

 private:
  nn::Linear<S> out_;
};

/// LSTM over time with per-frame emissions; class 0 is the CTC blank.
template <class S>
class CtcHead {
 public:
  CtcHead(Index in, Index hidden, Index labels, Rng& rng) : lstm_(in, hidden, rng), out_(hidden, labels + 1, rng) {}
  Tensor<S> log_probs(const Tensor<S>& feats) const { return log_softmax(out_(lstm_(feats))); }
  Tensor<S> loss(const Tensor<S>& feats, const std::vector<Index>& target) const { return nn::ctc_loss(log_probs(feats), target); }
  void collect_params(nn::ParamList<S>& p) {
    p.child("lstm", lstm_);
    p.child("output", out_);
  }

 private:
  nn::Lstm<S> lstm_;
  nn::Linear<S> out_;
};

struct AblationResult {
  metrics::EvalReport report;
  std::vector<metrics::Prediction> predictions;
  std::vector<double> loss_curve;  // mean training loss per epoch
  HeadKind head = HeadKind::classifier;
  FeatureSource source = FeatureSource::sign;
};

namespace detail {

// Label inventory of the training targets; CTC ids are shifted by one for the blank.
struct LabelSet {
  std::vector<std::string> names;
  std::map<std::string, Index> ids;

  explicit LabelSet(std::vector<std::string> all) {
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    names = std::move(all);
    for (std::size_t i = 0; i < names.size(); ++i) ids[names[i]] = static_cast<Index>(i);
  }
  Index size() const { return static_cast<Index>(names.size()); }
};

inline std::vector<std::string> target_units(const Example& ex, Task task) {
  if (task == Task::islr) return {metrics::normalize_label(ex.target.text)};
  return text::split_words(text::ascii_lower(ex.target.text));
}

}  // namespace detail

/// A trained task-specific head with its label inventory.
template <class S>
class TaskHead {
 public:
  /// Fits `kind` on per-clip features [T, D] and their target units (one label, or a gloss sequence).
  TaskHead(HeadKind kind, const std::vector<Tensor<S>>& feats, const std::vector<std::vector<std::string>>& units,
           const AblationConfig& cfg, std::uint64_t seed, const std::vector<std::string>& ids = {})
      : kind_(kind), labels_(flatten(units)) {
    if (feats.empty() || feats.size() != units.size()) throw EmptyCorpus("ablation needs matching features and targets");
    if (cfg.epochs <= 0 || cfg.lr <= 0 || cfg.lstm_hidden <= 0) throw ConfigError("ablation epochs, lr and lstm_hidden must be positive");
    const Index dim = feats.front().dim(1);
    Rng rng(mix_seed(seed ^ 0xab1a7e));
    nn::ParamList<S> params;
    if (kind == HeadKind::classifier) {
      classifier_.emplace(dim, labels_.size(), rng);
      params.child("classifier", *classifier_);
    } else {
      ctc_.emplace(dim, cfg.lstm_hidden, labels_.size(), rng);
      params.child("ctc", *ctc_);
    }
    nn::AdamW<S> opt(params, {0.9, 0.999, 1e-8, 1e-4});

    auto name = [&](std::size_t i) { return i < ids.size() ? ids[i] : "#" + std::to_string(i); };
    std::vector<std::vector<Index>> targets;
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (units[i].empty()) throw EmptyTarget("clip " + name(i) + " has no target units");
      std::vector<Index> t;
      for (const auto& u : units[i]) t.push_back(labels_.ids.at(u) + (kind == HeadKind::ctc ? 1 : 0));
      if (kind == HeadKind::ctc) {
        Index needed = static_cast<Index>(t.size());
        for (std::size_t k = 1; k < t.size(); ++k) needed += t[k] == t[k - 1];
        if (needed > feats[i].dim(0))
          throw LengthMismatch("clip " + name(i) + " is too short for its " + std::to_string(t.size()) + "-gloss CTC target");
      }
      targets.push_back(std::move(t));
    }

    const Index N = static_cast<Index>(feats.size()), batch = 8;
    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = epoch_order(static_cast<std::size_t>(N), seed, epoch);
      double total = 0;
      for (Index lo = 0; lo < N; lo += batch) {
        const Index hi = std::min(N, lo + batch);
        opt.zero_grad();
        for (Index i = lo; i < hi; ++i) {
          const auto k = order[static_cast<std::size_t>(i)];
          auto l = kind == HeadKind::classifier ? classifier_->loss(feats[k], targets[k].front()) : ctc_->loss(feats[k], targets[k]);
          const double v = static_cast<double>(l.item());
          if (!std::isfinite(v)) throw DivergedLoss("ablation head loss is not finite at epoch " + std::to_string(epoch) + ", clip " + name(k));
          total += v;
          scale(l, S(1) / static_cast<S>(hi - lo)).backward();
        }
        opt.step(cfg.lr);
      }
      loss_curve_.push_back(total / static_cast<double>(N));
    }
  }

  /// Label (classifier) or space-joined gloss sequence (CTC) for one clip.
  std::string predict(const Tensor<S>& feats) const {
    NoGradGuard guard;
    if (kind_ == HeadKind::classifier) {
      const auto z = classifier_->logits(feats);
      const auto& d = z.data();
      return labels_.names[static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin())];
    }
    std::vector<std::string> words;
    for (Index id : nn::ctc_greedy_decode(ctc_->log_probs(feats))) words.push_back(labels_.names[static_cast<std::size_t>(id - 1)]);
    return text::join_words(words);
  }

  HeadKind kind() const { return kind_; }
  const std::vector<std::string>& labels() const { return labels_.names; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }

 private:
  static std::vector<std::string> flatten(const std::vector<std::vector<std::string>>& units) {
    std::vector<std::string> all;
    for (const auto& u : units) all.insert(all.end(), u.begin(), u.end());
    return all;
  }

  HeadKind kind_;
  detail::LabelSet labels_;
  std::optional<ClassifierHead<S>> classifier_;
  std::optional<CtcHead<S>> ctc_;
  std::vector<double> loss_curve_;
};

/// Trains a task-specific head on frozen features of `model` and scores it on `eval`.
template <class S>
AblationResult run_ablation_head(const UniSignModel<S>& model, Task task, FeatureSource source, const std::vector<Example>& train,
                                 const std::vector<Example>& eval, const AblationConfig& cfg, std::uint64_t seed,
                                 std::optional<HeadKind> head_kind = std::nullopt, const RunConfig& run = {}) {
  if (task == Task::slt) throw UnsupportedTask("no task-specific head for slt");
  const HeadKind kind = head_kind ? *head_kind : default_head(task);
  if (train.empty()) throw EmptyCorpus("ablation needs training examples");
  if (eval.empty()) throw EmptyCorpus("ablation needs evaluation examples");

  std::vector<Tensor<S>> feats;
  std::vector<std::vector<std::string>> units;
  std::vector<std::string> ids;
  for (const auto& ex : train) {
    feats.push_back(extract_features(model, ex.clip, source));
    units.push_back(detail::target_units(ex, task));
    ids.push_back(ex.record.clip_id);
  }
  const TaskHead<S> head(kind, feats, units, cfg, seed, ids);

  AblationResult result;
  result.head = kind;
  result.source = source;
  result.loss_curve = head.loss_curve();
  for (const auto& ex : eval) result.predictions.push_back({ex.record.clip_id, ex.target.text, head.predict(extract_features(model, ex.clip, source))});
  std::vector<std::string> vocab;
  if (task == Task::islr) {
    vocab = head.labels();
    for (const auto& ex : eval) vocab.push_back(metrics::normalize_label(ex.target.text));
  }
  result.report = metrics::evaluate_texts(task, result.predictions, run.metrics.tokenization, vocab, run.metrics.bleu_smoothing);
  return result;
}

}  // namespace unisign
