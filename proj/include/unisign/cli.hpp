// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unisign/ablation.hpp"
#include "unisign/checkpoint.hpp"
#include "unisign/config.hpp"
#include "unisign/curation.hpp"
#include "unisign/data.hpp"
#include "unisign/metrics.hpp"
#include "unisign/trainer.hpp"

namespace unisign::cli {

// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kConfigFailure = 2;

/// Structured log line on stdout.
inline void emit(std::ostream& out, const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) {
  nlohmann::ordered_json j;
  j["event"] = event;
  for (auto& [k, v] : fields.items()) j[k] = v;
  out << j.dump() << std::endl;
}

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::optional<double> p_samp;
  std::string fusion;
  std::string decode;
  std::optional<Index> beam_width;
  std::optional<Index> max_len;
  std::optional<Index> max_steps;
};

/// Run config from --config plus command-line overrides, revalidated as a whole.
inline RunConfig load_run(const RunOptions& o, int stage = 0) {
  RunConfig run = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) run.seed = *o.seed;
  if (!o.output_dir.empty()) run.output_dir = o.output_dir;
  if (o.p_samp) run.model.sampler.p_samp = *o.p_samp;
  if (!o.fusion.empty()) run.model.pgf.mode = parse_fusion_mode(o.fusion);
  if (!o.decode.empty()) run.decode.strategy = parse_decode_strategy(o.decode);
  if (o.beam_width) run.decode.beam_width = *o.beam_width;
  if (o.max_len) run.decode.max_len = *o.max_len;
  if (o.max_steps && stage > 0) run.stage(stage).max_steps = *o.max_steps;
  return run_config_from_json(to_json(run));
}

inline std::filesystem::path output_dir(const RunConfig& run) {
  auto dir = resolve_output_dir(run.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string base_dir_of(const std::string& manifest) {
  const auto parent = std::filesystem::path(manifest).parent_path();
  return parent.empty() ? "." : parent.string();
}

inline std::vector<Example> load_split(const std::string& manifest, const Tokenizer& tok, Task task, bool training, bool frames,
                                       std::ostream& out) {
  if (manifest.empty()) throw ConfigError("no manifest given (set data.train / data.dev or pass --manifest)");
  const auto m = read_manifest(manifest);
  LoadOptions lo;
  lo.task = task;
  lo.training = training;
  lo.load_frames = frames;
  std::vector<std::string> warnings;
  auto ex = load_examples(m.records, base_dir_of(manifest), tok, lo, &warnings);
  for (const auto& w : warnings) emit(out, "warning", {{"message", w}});
  emit(out, "data", {{"manifest", manifest}, {"clips", ex.size()}, {"manifest_config_hash", m.config_hash}});
  return ex;
}

inline TrainHooks training_hooks(std::ostream& out, const std::filesystem::path& dir) {
  TrainHooks h;
  h.checkpoint_dir = dir.string();
  h.on_step = [&out](const StepLog& s) {
    emit(out, "step", {{"stage", s.stage}, {"epoch", s.epoch}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}});
  };
  h.log = [&out](const std::string& m) { emit(out, "log", {{"message", m}}); };
  return h;
}

inline metrics::EvalReport evaluate_and_write(const UniSignModel<float>& model, const Tokenizer& tok, const std::vector<Example>& ex,
                                              Task task, const RunConfig& run, const std::string& split, const std::string& hash,
                                              const std::filesystem::path& stem, std::ostream& out) {
  std::vector<metrics::Prediction> preds;
  auto report = evaluate(model, tok, ex, task, run, &preds);
  report.split = split;
  report.config_hash = hash;
  metrics::write_report(report, preds, stem.string() + ".jsonl", stem.string() + ".txt");
  emit(out, "report", {{"path", stem.string() + ".jsonl"}, {"report", metrics::to_json(report)}});
  return report;
}

// ---------------------------------------------------------------------------
// Subcommands

struct CurateOptions {
  std::string transcripts;
  std::string out;
  std::string geometry;
  std::string split = "train";
  std::string keypoint_dir = "keypoints";
  std::string media_dir = "video";
  std::string text_unit = "auto";
  std::vector<std::string> marks;
  double frame_rate = 25.0;
  Index frame_width = 0;
  Index frame_height = 0;
};

inline int curate(const CurateOptions& o, std::ostream& out) {
  if (!std::filesystem::is_directory(o.transcripts)) throw ConfigError("--transcripts " + o.transcripts + " is not a directory");
  if (o.frame_rate <= 0) throw ConfigError("--frame-rate must be positive");
  const auto split = parse_split(o.split);
  const auto unit = parse_text_unit(o.text_unit);
  std::map<std::string, CropGeometry> geometry;
  if (!o.geometry.empty()) geometry = read_geometry(o.geometry);

  nlohmann::json settings{{"split", o.split},        {"keypoint_dir", o.keypoint_dir}, {"media_dir", o.media_dir},
                          {"frame_rate", o.frame_rate}, {"frame_width", o.frame_width},   {"frame_height", o.frame_height},
                          {"marks", o.marks},        {"text_unit", o.text_unit}};
  for (const auto& [k, g] : geometry) settings["geometry"][k] = {g.x0, g.y0, g.x1, g.y1};
  const auto hash = config_hash(settings);

  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(o.transcripts))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyCorpus("no .jsonl transcripts in " + o.transcripts);

  std::vector<ClipRecord> records;
  for (const auto& f : files) {
    auto t = read_transcript(f.string());
    if (!o.marks.empty()) t.marks = o.marks;
    const auto seg = segment(t);
    for (const auto& w : seg.warnings) emit(out, "warning", {{"message", w}});
    ProgramMedia media;
    media.keypoint_path = o.keypoint_dir + "/" + t.program_id + ".npy";
    media.media_path = o.media_dir + "/" + t.program_id + ".npy";
    media.frame_rate = o.frame_rate;
    media.frame_width = o.frame_width;
    media.frame_height = o.frame_height;
    if (auto it = geometry.find(t.program_id); it != geometry.end()) media.crop = it->second;
    auto recs = records_from_segments(t.program_id, seg.segments, media, split);
    records.insert(records.end(), recs.begin(), recs.end());
  }
  const auto filtered = apply_filters(records);
  for (const auto& id : filtered.truncation_flagged) emit(out, "warning", {{"message", "clip " + id + " will be center-truncated at evaluation"}});
  if (filtered.records.empty()) throw EmptyCorpus("every clip was filtered out");

  Manifest m;
  m.config_hash = hash;
  m.records = filtered.records;
  if (const auto parent = std::filesystem::path(o.out).parent_path(); !parent.empty()) std::filesystem::create_directories(parent);
  write_manifest(o.out, m);
  auto stats = to_json(corpus_stats(m.records, unit));
  stats["config_hash"] = hash;
  const auto stats_path = o.out + ".stats.json";
  std::ofstream(stats_path) << stats.dump(2) << '\n';
  emit(out, "curated", {{"manifest", o.out}, {"stats", stats_path}, {"clips", m.records.size()}, {"dropped", filtered.dropped}, {"config_hash", hash}});
  return 0;
}

inline int stats(const std::string& manifest, const std::string& text_unit, const std::string& out_path, std::ostream& out) {
  const auto m = read_manifest(manifest);
  auto s = to_json(corpus_stats(m.records, parse_text_unit(text_unit)));
  s["config_hash"] = m.config_hash;
  if (!out_path.empty()) std::ofstream(out_path) << s.dump(2) << '\n';
  emit(out, "stats", {{"manifest", manifest}, {"stats", s}});
  return 0;
}

struct TrainOptions {
  RunOptions run;
  int stage = 1;
  std::optional<Task> task;
  std::string init;
  std::string resume;
  std::string manifest;
};

/// pretrain (stages 1 and 2) and finetune (stage 3).
inline int train(const TrainOptions& o, std::ostream& out) {
  if (o.stage < 1 || o.stage > 3) throw ConfigError("--stage must be 1 or 2");
  RunOptions ro = o.run;
  RunConfig run = load_run(ro, o.stage);
  if (o.stage == 3) {
    if (!o.task) throw ConfigError("finetune needs --task");
    run.stage(3).task = *o.task;
    run = run_config_from_json(to_json(run));
  }
  const auto dir = output_dir(run);
  const auto hash = config_hash(run);
  emit(out, "config", {{"config_hash", hash}, {"stage", o.stage}, {"output_dir", dir.string()}});

  std::optional<Checkpoint> init;
  if (!o.init.empty()) init = load_checkpoint(o.init);
  detail::check_prerequisite(o.stage, init);

  const auto manifest = o.manifest.empty() ? run.data.train : o.manifest;
  Tokenizer tok;
  if (o.stage == 1) {
    if (manifest.empty()) throw ConfigError("no training manifest (set data.train or pass --manifest)");
    auto texts = record_texts(read_manifest(manifest).records);
    if (!run.data.dev.empty()) {
      const auto dev = record_texts(read_manifest(run.data.dev).records);
      texts.insert(texts.end(), dev.begin(), dev.end());
    }
    tok = Tokenizer::build(texts);
  } else {
    tok = Tokenizer::from_tokens(init->vocab);
  }
  const Task task = o.stage == 3 ? *o.task : Task::slt;
  const auto examples = load_split(manifest, tok, task, true, o.stage >= 2 && (o.stage == 2 || model_config_from_json(init->model_config).use_rgb), out);

  StageInputs in{&run, run.stage(o.stage), &examples, tok, init};
  if (!o.resume.empty()) in.resume = load_checkpoint(o.resume);
  const auto ck = run_stage<float>(in, training_hooks(out, dir));
  const std::string name = o.stage == 3 ? "stage3_" + to_string(task) : "stage" + std::to_string(o.stage);
  const auto path = dir / (name + ".ckpt");
  save_checkpoint(path.string(), ck);
  emit(out, "checkpoint", {{"path", path.string()}, {"steps", ck.step}, {"final_loss", ck.loss_curve.empty() ? 0.0 : ck.loss_curve.back()},
                           {"config_hash", ck.config_hash}});

  if (o.stage == 3 && !run.data.dev.empty()) {
    const auto loaded = load_model<float>(ck);
    const auto dev = load_split(run.data.dev, loaded.tokenizer, task, false, loaded.model->config().use_rgb, out);
    evaluate_and_write(*loaded.model, loaded.tokenizer, dev, task, run, "dev", ck.config_hash, dir / ("eval_" + to_string(task) + "_dev"), out);
  }
  return 0;
}

struct EvalOptions {
  RunOptions run;
  Task task = Task::slt;
  std::string ckpt;
  std::string manifest;
  std::string split = "test";
};

inline int evaluate_cmd(const EvalOptions& o, std::ostream& out) {
  const RunConfig run = load_run(o.run);
  const auto ck = load_checkpoint(o.ckpt);
  if (ck.task && *ck.task != o.task)
    emit(out, "warning", {{"message", "checkpoint was fine-tuned for " + to_string(*ck.task) + ", evaluating as " + to_string(o.task)}});
  const auto loaded = load_model<float>(ck);
  const auto ex = load_split(o.manifest, loaded.tokenizer, o.task, false, loaded.model->config().use_rgb, out);
  const auto dir = output_dir(run);
  evaluate_and_write(*loaded.model, loaded.tokenizer, ex, o.task, run, o.split, ck.config_hash,
                     dir / ("eval_" + to_string(o.task) + "_" + o.split), out);
  return 0;
}

struct AblateOptions {
  RunOptions run;
  Paradigm paradigm = Paradigm::task_specific;
  FeatureSource features = FeatureSource::sign;
  Task task = Task::islr;
  std::string head;
  std::string ckpt;
  std::string manifest;
  std::string eval_manifest;
};

inline int ablate(const AblateOptions& o, std::ostream& out) {
  if (o.task == Task::slt) throw UnsupportedTask("no task-specific head for slt; ablate supports islr and cslr");
  const RunConfig run = load_run(o.run);
  const auto ck = load_checkpoint(o.ckpt);
  const auto loaded = load_model<float>(ck);
  const bool frames = loaded.model->config().use_rgb;
  const auto dir = output_dir(run);
  const auto eval_manifest = o.eval_manifest.empty() ? run.data.dev : o.eval_manifest;
  const auto eval = load_split(eval_manifest, loaded.tokenizer, o.task, false, frames, out);
  const auto stem = dir / ("ablate_" + to_string(o.paradigm) + "_" + to_string(o.features) + "_" + to_string(o.task));
  if (o.paradigm == Paradigm::unified) {
    evaluate_and_write(*loaded.model, loaded.tokenizer, eval, o.task, run, "ablation", ck.config_hash, stem, out);
    return 0;
  }
  const auto train = load_split(o.manifest.empty() ? run.data.train : o.manifest, loaded.tokenizer, o.task, true, frames, out);
  std::optional<HeadKind> head;
  if (o.head == "classifier") head = HeadKind::classifier;
  else if (o.head == "ctc") head = HeadKind::ctc;
  else if (!o.head.empty()) throw ConfigError("--head must be classifier or ctc");
  auto r = run_ablation_head(*loaded.model, o.task, o.features, train, eval, run.ablation, run.seed, head, run);
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) emit(out, "ablation_epoch", {{"epoch", e}, {"loss", r.loss_curve[e]}});
  r.report.split = "ablation";
  r.report.config_hash = config_hash(run);
  metrics::write_report(r.report, r.predictions, stem.string() + ".jsonl", stem.string() + ".txt");
  emit(out, "report", {{"path", stem.string() + ".jsonl"}, {"head", to_string(r.head)}, {"report", metrics::to_json(r.report)}});
  return 0;
}

// ---------------------------------------------------------------------------

namespace detail {

inline void add_run_options(CLI::App* app, RunOptions& o, bool training, bool decoding) {
  app->add_option("--config", o.config, "Run config file (JSON)");
  app->add_option("--seed", o.seed, "Override the run seed");
  app->add_option("--output-dir", o.output_dir, "Override output_dir");
  if (training) {
    app->add_option("--p-samp", o.p_samp, "Override sampler.p_samp");
    app->add_option("--fusion", o.fusion, "deformable or cross_attention");
    app->add_option("--max-steps", o.max_steps, "Cap the optimizer steps of this stage");
  }
  if (decoding) {
    app->add_option("--decode", o.decode, "greedy or beam");
    app->add_option("--beam-width", o.beam_width, "Beam width");
    app->add_option("--max-len", o.max_len, "Maximum generated tokens");
  }
}

}  // namespace detail

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Unified pose and RGB sign-language pre-training, fine-tuning and evaluation", "unisign"};
  app.require_subcommand(1);

  CurateOptions cur;
  auto* c = app.add_subcommand("curate", "Segment transcripts into clips and write a manifest plus statistics");
  c->add_option("--transcripts", cur.transcripts, "Directory of <program>.jsonl transcripts")->required();
  c->add_option("--out", cur.out, "Manifest to write")->required();
  c->add_option("--geometry", cur.geometry, "Per-program crop geometry (JSON)");
  c->add_option("--split", cur.split, "train, dev or test");
  c->add_option("--keypoint-dir", cur.keypoint_dir, "Keypoint directory relative to the manifest");
  c->add_option("--media-dir", cur.media_dir, "Video directory relative to the manifest");
  c->add_option("--text-unit", cur.text_unit, "auto, char or word");
  c->add_option("--marks", cur.marks, "Sentence-final marks");
  c->add_option("--frame-rate", cur.frame_rate, "Frames per second");
  c->add_option("--frame-width", cur.frame_width, "Frame width in pixels");
  c->add_option("--frame-height", cur.frame_height, "Frame height in pixels");

  std::string stats_manifest, stats_unit = "auto", stats_out;
  auto* st = app.add_subcommand("stats", "Corpus statistics of a manifest");
  st->add_option("--manifest", stats_manifest, "Manifest")->required();
  st->add_option("--text-unit", stats_unit, "auto, char or word");
  st->add_option("--out", stats_out, "Also write the statistics here");

  TrainOptions pre;
  auto* p = app.add_subcommand("pretrain", "Stage 1 (pose only) or stage 2 (pose + RGB) pre-training");
  p->add_option("--stage", pre.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  p->add_option("--init", pre.init, "Stage-1 checkpoint (stage 2)");
  p->add_option("--resume", pre.resume, "Continue from a checkpoint of the same stage");
  p->add_option("--manifest", pre.manifest, "Training manifest (overrides data.train)");
  detail::add_run_options(p, pre.run, true, false);

  TrainOptions fin;
  fin.stage = 3;
  std::string fin_task;
  auto* f = app.add_subcommand("finetune", "Stage 3 fine-tuning for one task");
  f->add_option("--task", fin_task, "islr, cslr or slt")->required()->check(CLI::IsMember({"islr", "cslr", "slt"}));
  f->add_option("--init", fin.init, "Stage-1 or stage-2 checkpoint")->required();
  f->add_option("--resume", fin.resume, "Continue from a stage-3 checkpoint");
  f->add_option("--manifest", fin.manifest, "Training manifest (overrides data.train)");
  detail::add_run_options(f, fin.run, true, true);

  EvalOptions ev;
  std::string ev_task;
  auto* e = app.add_subcommand("evaluate", "Generate and score a manifest");
  e->add_option("--task", ev_task, "islr, cslr or slt")->required()->check(CLI::IsMember({"islr", "cslr", "slt"}));
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--manifest", ev.manifest, "Manifest to evaluate")->required();
  e->add_option("--split", ev.split, "Split name used in the report");
  detail::add_run_options(e, ev.run, false, true);

  AblateOptions ab;
  std::string ab_paradigm, ab_features = "sign", ab_task = "islr";
  auto* a = app.add_subcommand("ablate", "Unified generative fine-tuning vs task-specific heads");
  a->add_option("--paradigm", ab_paradigm, "unified or task_specific")->required()->check(CLI::IsMember({"unified", "task_specific"}));
  a->add_option("--features", ab_features, "sign or lm_enc")->check(CLI::IsMember({"sign", "lm_enc"}));
  a->add_option("--task", ab_task, "islr or cslr")->check(CLI::IsMember({"islr", "cslr"}));
  a->add_option("--head", ab.head, "classifier or ctc (default: the task's head)");
  a->add_option("--ckpt", ab.ckpt, "Backbone checkpoint")->required();
  a->add_option("--manifest", ab.manifest, "Training manifest for the head (overrides data.train)");
  a->add_option("--eval-manifest", ab.eval_manifest, "Evaluation manifest (overrides data.dev)");
  detail::add_run_options(a, ab.run, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return kConfigFailure;
  }

  try {
    if (c->parsed()) return curate(cur, out);
    if (st->parsed()) return stats(stats_manifest, stats_unit, stats_out, out);
    if (p->parsed()) return train(pre, out);
    if (f->parsed()) {
      fin.task = parse_task(fin_task);
      return train(fin, out);
    }
    if (e->parsed()) {
      ev.task = parse_task(ev_task);
      return evaluate_cmd(ev, out);
    }
    ab.paradigm = parse_paradigm(ab_paradigm);
    ab.features = parse_feature_source(ab_features);
    ab.task = parse_task(ab_task);
    return ablate(ab, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kConfigFailure;
  } catch (const ConfigMismatch& ex) {
    err << "config error: " << ex.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace unisign::cli
