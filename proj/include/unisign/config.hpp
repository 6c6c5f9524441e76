// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "unisign/core/rng.hpp"
#include "unisign/core/task.hpp"
#include "unisign/metrics.hpp"
#include "unisign/model.hpp"

namespace unisign {

using Json = nlohmann::json;

/// Optimization recipe of one training stage.
struct StageConfig {
  int stage = 1;
  std::string optimizer = "adamw";
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::string schedule = "cosine";
  Index epochs = 20;
  Index batch_size = 16;
  Index grad_accum = 8;
  std::optional<Task> task;
  // Not part of the published recipe; all off by default.
  Index warmup_steps = 0;
  double label_smoothing = 0.0;
  double dropout = 0.0;
  double grad_clip = 0.0;
  double lr_floor_ratio = 0.0;
  // Run-length and bookkeeping controls.
  Index max_steps = -1;
  Index checkpoint_every = 0;

  Index effective_batch() const { return batch_size * grad_accum; }

  void validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
    if (optimizer != "adamw") throw ConfigError("optimizer: only 'adamw' is available");
    if (schedule != "cosine") throw ConfigError("schedule: only 'cosine' is available");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    if (epochs < 0 || batch_size < 1 || grad_accum < 1) throw ConfigError("epochs >= 0, batch_size >= 1 and grad_accum >= 1 required");
    if (stage == 3 && !task) throw ConfigError("stage 3 needs a task");
    if (stage != 3 && task) throw ConfigError("only stage 3 takes a task");
    if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("label_smoothing must lie in [0, 1)");
    if (dropout != 0.0) throw ConfigError("dropout is not implemented; it must stay 0");
    if (warmup_steps < 0 || grad_clip < 0 || lr_floor_ratio < 0 || lr_floor_ratio > 1) throw ConfigError("invalid warmup_steps, grad_clip or lr_floor_ratio");
  }
};

/// The per-stage recipe defaults.
inline StageConfig default_stage_config(int stage, std::optional<Task> task = std::nullopt) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1: c.epochs = 20, c.batch_size = 16, c.grad_accum = 8; break;
    case 2: c.epochs = 5, c.batch_size = 4, c.grad_accum = 8; break;
    case 3: c.epochs = 20, c.batch_size = 8, c.grad_accum = 1, c.task = task.value_or(Task::slt); break;
    default: throw ConfigError("stage must be 1, 2 or 3");
  }
  return c;
}

struct MetricsConfig {
  metrics::MetricTokenization tokenization = metrics::MetricTokenization::automatic;
  metrics::BleuSmoothing bleu_smoothing = metrics::BleuSmoothing::none;
};

/// Task-specific heads trained on frozen backbone features.
struct AblationConfig {
  Index epochs = 30;
  double lr = 1e-3;
  Index lstm_hidden = 128;
};

struct DataConfig {
  std::string train;
  std::string dev;
  std::string test;
};

/// Everything one invocation needs; unknown keys are rejected when parsing.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  DataConfig data;
  ModelConfig model;
  std::array<StageConfig, 3> stages{default_stage_config(1), default_stage_config(2), default_stage_config(3)};
  DecodeConfig decode;
  MetricsConfig metrics;
  AblationConfig ablation;

  StageConfig& stage(int s) { return stages.at(static_cast<std::size_t>(s - 1)); }
  const StageConfig& stage(int s) const { return stages.at(static_cast<std::size_t>(s - 1)); }
};

namespace detail {

/// Reads fields out of a JSON object and complains about leftovers.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// --- to_json -------------------------------------------------------------------------------------

inline Json to_json(const EncoderConfig& c) {
  return {{"input_linear_dim", c.input_linear_dim}, {"gcn_dims", c.gcn_dims}, {"temporal_dims", c.temporal_dims},
          {"temporal_kernel", c.temporal_kernel}, {"include_confidence", c.include_confidence}};
}
inline Json to_json(const LMConfig& c) {
  return {{"d_model", c.d_model}, {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers}, {"heads", c.heads}, {"ffn_dim", c.ffn_dim}};
}
inline Json to_json(const PGFConfig& c) {
  return {{"channels", c.channels}, {"heads", c.heads}, {"deform_points", c.deform_points}, {"per_channel_gate", c.per_channel_gate}, {"mode", to_string(c.mode)}};
}
inline Json to_json(const VisionConfig& c) { return {{"conv_channels", c.conv_channels}, {"output_channels", c.output_channels}}; }
inline Json to_json(const CropOptions& c) {
  return {{"margin", c.margin}, {"square", c.square}, {"fallback_size", c.fallback_size}, {"output_size", c.output_size}};
}
inline Json to_json(const SamplerConfig& c) { return {{"p_samp", c.p_samp}, {"seed", c.seed}, {"dedupe", c.dedupe}}; }
inline Json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)}, {"lm", to_json(c.lm)}, {"pgf", to_json(c.pgf)}, {"vision", to_json(c.vision)},
          {"crop", to_json(c.crop)}, {"sampler", to_json(c.sampler)}, {"use_rgb", c.use_rgb}};
}
inline Json to_json(const StageConfig& c) {
  Json j{{"stage", c.stage}, {"optimizer", c.optimizer}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"betas", {c.beta1, c.beta2}},
         {"schedule", c.schedule}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"grad_accum", c.grad_accum},
         {"warmup_steps", c.warmup_steps}, {"label_smoothing", c.label_smoothing}, {"dropout", c.dropout}, {"grad_clip", c.grad_clip},
         {"lr_floor_ratio", c.lr_floor_ratio}, {"max_steps", c.max_steps}, {"checkpoint_every", c.checkpoint_every}};
  if (c.task) j["task"] = to_string(*c.task);
  return j;
}
inline Json to_json(const DecodeConfig& c) {
  return {{"strategy", c.strategy == DecodeStrategy::beam ? "beam" : "greedy"}, {"beam_width", c.beam_width}, {"max_len", c.max_len}};
}
inline Json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data", {{"train", c.data.train}, {"dev", c.data.dev}, {"test", c.data.test}}},
          {"encoder", to_json(c.model.encoder)},
          {"lm", to_json(c.model.lm)},
          {"pgf", to_json(c.model.pgf)},
          {"vision", to_json(c.model.vision)},
          {"crop", to_json(c.model.crop)},
          {"sampler", to_json(c.model.sampler)},
          {"stage1", to_json(c.stage(1))},
          {"stage2", to_json(c.stage(2))},
          {"stage3", to_json(c.stage(3))},
          {"decode", to_json(c.decode)},
          {"metrics", {{"tokenization", metrics::to_string(c.metrics.tokenization)},
                       {"bleu_smoothing", c.metrics.bleu_smoothing == metrics::BleuSmoothing::exp ? "exp" : "none"}}},
          {"ablation", {{"epochs", c.ablation.epochs}, {"lr", c.ablation.lr}, {"lstm_hidden", c.ablation.lstm_hidden}}}};
}

// --- from_json -----------------------------------------------------------------------------------

inline void read_into(const Json& j, EncoderConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("input_linear_dim", c.input_linear_dim);
  f.get("gcn_dims", c.gcn_dims);
  f.get("temporal_dims", c.temporal_dims);
  f.get("temporal_kernel", c.temporal_kernel);
  f.get("include_confidence", c.include_confidence);
  f.finish();
}
inline void read_into(const Json& j, LMConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("d_model", c.d_model);
  f.get("encoder_layers", c.encoder_layers);
  f.get("decoder_layers", c.decoder_layers);
  f.get("heads", c.heads);
  f.get("ffn_dim", c.ffn_dim);
  f.finish();
}
inline void read_into(const Json& j, PGFConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("channels", c.channels);
  f.get("heads", c.heads);
  f.get("deform_points", c.deform_points);
  f.get("per_channel_gate", c.per_channel_gate);
  std::string mode = to_string(c.mode);
  f.get("mode", mode);
  c.mode = parse_fusion_mode(mode);
  f.finish();
}
inline void read_into(const Json& j, VisionConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("conv_channels", c.conv_channels);
  f.get("output_channels", c.output_channels);
  f.finish();
}
inline void read_into(const Json& j, CropOptions& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("margin", c.margin);
  f.get("square", c.square);
  f.get("fallback_size", c.fallback_size);
  f.get("output_size", c.output_size);
  f.finish();
}
inline void read_into(const Json& j, SamplerConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("p_samp", c.p_samp);
  f.get("seed", c.seed);
  f.get("dedupe", c.dedupe);
  f.finish();
}
inline void read_into(const Json& j, ModelConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  if (f.has("encoder")) read_into(f.at("encoder"), c.encoder, f.where("encoder"));
  if (f.has("lm")) read_into(f.at("lm"), c.lm, f.where("lm"));
  if (f.has("pgf")) read_into(f.at("pgf"), c.pgf, f.where("pgf"));
  if (f.has("vision")) read_into(f.at("vision"), c.vision, f.where("vision"));
  if (f.has("crop")) read_into(f.at("crop"), c.crop, f.where("crop"));
  if (f.has("sampler")) read_into(f.at("sampler"), c.sampler, f.where("sampler"));
  f.get("use_rgb", c.use_rgb);
  f.finish();
}
inline void read_into(const Json& j, StageConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("stage", c.stage);
  f.get("optimizer", c.optimizer);
  f.get("lr", c.lr);
  f.get("weight_decay", c.weight_decay);
  std::array<double, 2> betas{c.beta1, c.beta2};
  f.get("betas", betas);
  c.beta1 = betas[0];
  c.beta2 = betas[1];
  f.get("schedule", c.schedule);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("grad_accum", c.grad_accum);
  if (f.has("task")) c.task = parse_task(f.at("task").get<std::string>());
  f.get("warmup_steps", c.warmup_steps);
  f.get("label_smoothing", c.label_smoothing);
  f.get("dropout", c.dropout);
  f.get("grad_clip", c.grad_clip);
  f.get("lr_floor_ratio", c.lr_floor_ratio);
  f.get("max_steps", c.max_steps);
  f.get("checkpoint_every", c.checkpoint_every);
  f.finish();
}
inline void read_into(const Json& j, DecodeConfig& c, const std::string& path) {
  detail::Fields f(j, path);
  std::string s = c.strategy == DecodeStrategy::beam ? "beam" : "greedy";
  f.get("strategy", s);
  c.strategy = parse_decode_strategy(s);
  f.get("beam_width", c.beam_width);
  f.get("max_len", c.max_len);
  f.finish();
  c.validate();
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::Fields f(j, "");
  f.get("seed", c.seed);
  f.get("output_dir", c.output_dir);
  if (f.has("data")) {
    detail::Fields d(f.at("data"), "data");
    d.get("train", c.data.train);
    d.get("dev", c.data.dev);
    d.get("test", c.data.test);
    d.finish();
  }
  if (f.has("encoder")) read_into(f.at("encoder"), c.model.encoder, "encoder");
  if (f.has("lm")) read_into(f.at("lm"), c.model.lm, "lm");
  if (f.has("pgf")) read_into(f.at("pgf"), c.model.pgf, "pgf");
  if (f.has("vision")) read_into(f.at("vision"), c.model.vision, "vision");
  if (f.has("crop")) read_into(f.at("crop"), c.model.crop, "crop");
  if (f.has("sampler")) read_into(f.at("sampler"), c.model.sampler, "sampler");
  for (int s = 1; s <= 3; ++s) {
    const std::string key = "stage" + std::to_string(s);
    if (f.has(key.c_str())) read_into(f.at(key.c_str()), c.stage(s), key);
    if (c.stage(s).stage != s) throw ConfigError(key + ".stage must be " + std::to_string(s));
  }
  if (f.has("decode")) read_into(f.at("decode"), c.decode, "decode");
  if (f.has("metrics")) {
    detail::Fields m(f.at("metrics"), "metrics");
    std::string tok = metrics::to_string(c.metrics.tokenization), smooth = "none";
    m.get("tokenization", tok);
    m.get("bleu_smoothing", smooth);
    m.finish();
    c.metrics.tokenization = metrics::parse_metric_tokenization(tok);
    if (smooth != "none" && smooth != "exp") throw ConfigError("metrics.bleu_smoothing must be 'none' or 'exp'");
    c.metrics.bleu_smoothing = smooth == "exp" ? metrics::BleuSmoothing::exp : metrics::BleuSmoothing::none;
  }
  if (f.has("ablation")) {
    detail::Fields a(f.at("ablation"), "ablation");
    a.get("epochs", c.ablation.epochs);
    a.get("lr", c.ablation.lr);
    a.get("lstm_hidden", c.ablation.lstm_hidden);
    a.finish();
  }
  f.finish();
  c.model.validate();
  for (const auto& s : c.stages) s.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// FNV-1a of the canonical (key-sorted, compact) JSON form.
inline std::string config_hash(const Json& j) { return hex64(fnv1a(j.dump())); }
inline std::string config_hash(const RunConfig& c) { return config_hash(to_json(c)); }

/// Relative output directories are placed under $UNISIGN_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative())
    if (const char* root = std::getenv("UNISIGN_OUTPUT_ROOT"); root && *root) p = std::filesystem::path(root) / p;
  return p;
}

}  // namespace unisign
