// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unisign/checkpoint.hpp"
#include "unisign/config.hpp"
#include "unisign/data.hpp"
#include "unisign/metrics.hpp"
#include "unisign/model.hpp"
#include "unisign/nn/optim.hpp"

namespace unisign {

/// Learning rate at an optimizer step: optional linear warmup, then cosine decay to the floor.
inline double learning_rate(const StageConfig& cfg, Index step, Index total_steps) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  const Index offset = std::min(cfg.warmup_steps, total_steps);
  return nn::CosineSchedule(cfg.lr, total_steps - offset, cfg.lr_floor_ratio)(step - offset);
}

inline Index steps_per_epoch(Index clips, const StageConfig& cfg) {
  return clips == 0 ? 0 : (clips + cfg.effective_batch() - 1) / cfg.effective_batch();
}

inline Index planned_steps(Index clips, const StageConfig& cfg) {
  const Index full = steps_per_epoch(clips, cfg) * cfg.epochs;
  return cfg.max_steps >= 0 ? std::min(full, cfg.max_steps) : full;
}

/// Clip order for an epoch; a pure function of seed and epoch so resumed runs replay it.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Index epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed ^ mix_seed(0x0dde7ULL + static_cast<std::uint64_t>(epoch))));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_index(rng, i))]);
  return order;
}

/// Model config as stored in checkpoints.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  read_into(j, c, "model_config");
  c.validate();
  return c;
}

template <class S>
struct LoadedModel {
  std::unique_ptr<UniSignModel<S>> model;
  Tokenizer tokenizer;
};

/// Rebuilds the model and tokenizer stored in a checkpoint.
template <class S>
LoadedModel<S> load_model(const Checkpoint& ck) {
  LoadedModel<S> out;
  out.tokenizer = Tokenizer::from_tokens(ck.vocab);
  Rng rng(0);
  out.model = std::make_unique<UniSignModel<S>>(model_config_from_json(ck.model_config), out.tokenizer.size(), rng);
  auto params = nn::params_of(*out.model);
  restore_params(params, ck.params, true);
  return out;
}

/// Per-token loss with optional label smoothing toward the uniform distribution.
template <class S>
LossTerms<S> training_loss(const UniSignModel<S>& model, const Example& ex, std::uint64_t epoch, double label_smoothing,
                           ForwardStats* stats = nullptr) {
  if (label_smoothing == 0.0) return model.loss(ex.clip, ex.target_ids, epoch, stats);
  std::vector<Index> inputs{Tokenizer::bos}, outputs = ex.target_ids;
  inputs.insert(inputs.end(), ex.target_ids.begin(), ex.target_ids.end());
  outputs.push_back(Tokenizer::eos);
  const auto logp = model.lm().decode_logprobs(model.memory(ex.clip, epoch, stats), inputs);
  const auto nll = nll_from_logprobs(logp, outputs);
  const auto V = static_cast<S>(logp.dim(1));
  const auto uniform_ce = scale(sum_all(logp), S(-1) / V);
  const auto eps = static_cast<S>(label_smoothing);
  const auto total = add(scale(nll.sum, S(1) - eps), scale(uniform_ce, eps));
  return {total, scale(total, S(1) / static_cast<S>(nll.tokens)), nll.tokens};
}

struct StepLog {
  int stage = 1;
  Index epoch = 0;
  Index step = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const std::string&)> log;
  /// Checkpoints go here when set: "stage<N>_latest.ckpt" during the run.
  std::string checkpoint_dir;
  /// Stop (after saving a checkpoint) once this many optimizer steps are done; for interruption tests.
  Index stop_after_step = -1;
};

struct StageInputs {
  const RunConfig* run = nullptr;
  StageConfig stage;
  const std::vector<Example>* train = nullptr;
  Tokenizer tokenizer;                // stage 1 only; later stages take the prerequisite's vocabulary
  std::optional<Checkpoint> init;     // prerequisite checkpoint for stages 2 and 3
  std::optional<Checkpoint> resume;   // interrupted run of this same stage
};

namespace detail {

inline void check_prerequisite(int stage, const std::optional<Checkpoint>& init) {
  if (stage == 1) return;
  if (!init) throw MissingPrereqCheckpoint("stage " + std::to_string(stage) + " needs a " + (stage == 2 ? "stage-1" : "stage-1 or stage-2") + " checkpoint");
  if (stage == 2 && init->stage != 1) throw MissingPrereqCheckpoint("stage 2 starts from a stage-1 checkpoint, got stage " + std::to_string(init->stage));
  if (stage == 3 && init->stage != 1 && init->stage != 2)
    throw MissingPrereqCheckpoint("stage 3 starts from a stage-1 or stage-2 checkpoint, got stage " + std::to_string(init->stage));
}

}  // namespace detail

/// The model a stage starts from: fresh for stage 1, the prerequisite's weights
/// otherwise. Stage 2 adds freshly initialized vision and fusion modules.
template <class S>
LoadedModel<S> initial_model(const RunConfig& run, int stage, const Tokenizer& tokenizer, const std::optional<Checkpoint>& init) {
  detail::check_prerequisite(stage, init);
  Rng rng(mix_seed(run.seed ^ (0x57a9eULL + static_cast<std::uint64_t>(stage))));
  LoadedModel<S> out;
  if (stage == 1) {
    ModelConfig mc = run.model;
    mc.use_rgb = false;
    out.tokenizer = tokenizer;
    out.model = std::make_unique<UniSignModel<S>>(mc, out.tokenizer.size(), rng);
    return out;
  }
  ModelConfig mc = model_config_from_json(init->model_config);
  if (stage == 2) {
    mc.use_rgb = true;
    mc.vision = run.model.vision;
    mc.pgf = run.model.pgf;
    mc.crop = run.model.crop;
    mc.sampler = run.model.sampler;
    mc.validate();
  }
  out.tokenizer = Tokenizer::from_tokens(init->vocab);
  out.model = std::make_unique<UniSignModel<S>>(mc, out.tokenizer.size(), rng);
  auto params = nn::params_of(*out.model);
  const auto missing = restore_params(params, init->params, stage != 2);
  for (const auto& name : missing)
    if (name.rfind("vision.", 0) != 0 && name.rfind("pgf_", 0) != 0)
      throw ConfigMismatch("prerequisite checkpoint lacks parameter '" + name + "'");
  return out;
}

/// Runs one training stage and returns its final checkpoint.
template <class S>
Checkpoint run_stage(const StageInputs& in, const TrainHooks& hooks = {}) {
  if (!in.run || !in.train) throw ConfigError("run_stage needs a run config and training examples");
  const RunConfig& run = *in.run;
  const StageConfig& cfg = in.stage;
  cfg.validate();
  if (in.train->empty()) throw EmptyCorpus("no training clips for stage " + std::to_string(cfg.stage));
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };

  auto loaded = initial_model<S>(run, cfg.stage, in.tokenizer, in.init);
  auto& model = *loaded.model;
  for (const auto& ex : *in.train)
    for (Index id : ex.target_ids)
      if (id < 0 || id >= loaded.tokenizer.size()) throw ConfigMismatch("clip " + ex.record.clip_id + " was tokenized with a different vocabulary");
  nn::AdamW<S> opt(nn::params_of(model), {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});

  Checkpoint ck;
  ck.config_hash = config_hash(run);
  ck.stage = cfg.stage;
  ck.task = cfg.task;
  ck.model_config = to_json(model.config());
  ck.stage_config = to_json(cfg);
  ck.vocab = loaded.tokenizer.tokens();
  const auto N = static_cast<Index>(in.train->size());
  ck.total_steps = planned_steps(N, cfg);

  if (in.resume) {
    const auto& r = *in.resume;
    if (r.stage != cfg.stage) throw ConfigMismatch("resume checkpoint is from stage " + std::to_string(r.stage));
    if (r.config_hash != ck.config_hash) throw ConfigMismatch("resume checkpoint was produced by config " + r.config_hash + ", not " + ck.config_hash);
    auto params = nn::params_of(model);
    restore_params(params, r.params, true);
    restore_optimizer(opt, r);
    ck.epoch = r.epoch;
    ck.batch_in_epoch = r.batch_in_epoch;
    ck.step = r.step;
    ck.loss_curve = r.loss_curve;
    log("resumed stage " + std::to_string(cfg.stage) + " at epoch " + std::to_string(r.epoch) + ", step " + std::to_string(r.step));
  }

  const std::uint64_t shuffle_seed = mix_seed(run.seed ^ (0x5bu + static_cast<std::uint64_t>(cfg.stage)));
  const Index per_step = cfg.effective_batch();
  const Index steps_in_epoch = steps_per_epoch(N, cfg);
  auto save = [&] {
    if (hooks.checkpoint_dir.empty()) return;
    ck.params = capture_params(nn::params_of(model));
    capture_optimizer(opt, ck);
    ck.rng_state = std::to_string(shuffle_seed);
    save_checkpoint(hooks.checkpoint_dir + "/stage" + std::to_string(cfg.stage) + "_latest.ckpt", ck);
  };

  while (ck.step < ck.total_steps) {
    const auto order = epoch_order(static_cast<std::size_t>(N), shuffle_seed, ck.epoch);
    double epoch_loss = 0;
    Index epoch_steps = 0;
    for (Index b = ck.batch_in_epoch; b < steps_in_epoch && ck.step < ck.total_steps; ++b) {
      const Index lo = b * per_step, hi = std::min(N, lo + per_step);
      const double lr = learning_rate(cfg, ck.step, ck.total_steps);
      double step_loss = 0;
      opt.zero_grad();
      for (Index i = lo; i < hi; ++i) {
        const auto& ex = (*in.train)[order[static_cast<std::size_t>(i)]];
        const auto terms = training_loss(model, ex, static_cast<std::uint64_t>(ck.epoch), cfg.label_smoothing);
        const double value = static_cast<double>(terms.mean.item());
        if (!std::isfinite(value)) {
          std::ostringstream os;
          os << "non-finite loss at stage " << cfg.stage << ", epoch " << ck.epoch << ", step " << ck.step << ", clip "
             << ex.record.clip_id << " (lr " << lr << ")";
          throw DivergedLoss(os.str());
        }
        step_loss += value;
        scale(terms.mean, S(1) / static_cast<S>(hi - lo)).backward();
      }
      if (cfg.grad_clip > 0) opt.clip_grad_norm(cfg.grad_clip);
      opt.step(lr);
      step_loss /= static_cast<double>(hi - lo);
      ck.loss_curve.push_back(step_loss);
      ++ck.step;
      ck.batch_in_epoch = b + 1;
      epoch_loss += step_loss;
      ++epoch_steps;
      if (hooks.on_step) hooks.on_step({cfg.stage, ck.epoch, ck.step, lr, step_loss});
      if (cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every == 0) save();
      if (hooks.stop_after_step >= 0 && ck.step >= hooks.stop_after_step) {
        save();
        ck.params = capture_params(nn::params_of(model));
        capture_optimizer(opt, ck);
        return ck;
      }
    }
    if (ck.batch_in_epoch >= steps_in_epoch) {
      if (epoch_steps > 0) {
        std::ostringstream os;
        os << "stage " << cfg.stage << " epoch " << ck.epoch << " mean loss " << epoch_loss / static_cast<double>(epoch_steps);
        log(os.str());
      }
      ++ck.epoch;
      ck.batch_in_epoch = 0;
      if (cfg.checkpoint_every == 0) save();
    }
  }
  ck.params = capture_params(nn::params_of(model));
  capture_optimizer(opt, ck);
  ck.rng_state = std::to_string(shuffle_seed);
  return ck;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

struct EvalLoss {
  double per_token = 0;  // total negative log-likelihood over total target tokens
  double sum = 0;
  Index tokens = 0;
};

template <class S>
EvalLoss evaluation_loss(const UniSignModel<S>& model, const std::vector<Example>& examples) {
  NoGradGuard guard;
  EvalLoss out;
  for (const auto& ex : examples) {
    const auto l = model.loss(ex.clip, ex.target_ids);
    out.sum += static_cast<double>(l.sum.item());
    out.tokens += l.tokens;
  }
  if (out.tokens > 0) out.per_token = out.sum / static_cast<double>(out.tokens);
  return out;
}

template <class S>
std::vector<metrics::Prediction> predict(const UniSignModel<S>& model, const Tokenizer& tok, const std::vector<Example>& examples,
                                         const DecodeConfig& decode = {}) {
  std::vector<metrics::Prediction> out;
  for (const auto& ex : examples) out.push_back({ex.record.clip_id, ex.target.text, tok.decode(model.generate(ex.clip, decode))});
  return out;
}

/// Generates text for every example and scores it with the task's metrics.
template <class S>
metrics::EvalReport evaluate(const UniSignModel<S>& model, const Tokenizer& tok, const std::vector<Example>& examples, Task task,
                             const RunConfig& run, std::vector<metrics::Prediction>* predictions = nullptr,
                             const std::vector<std::string>& labels = {}) {
  auto preds = predict(model, tok, examples, run.decode);
  auto report = metrics::evaluate_texts(task, preds, run.metrics.tokenization, labels, run.metrics.bleu_smoothing);
  if (predictions) *predictions = std::move(preds);
  return report;
}

}  // namespace unisign
