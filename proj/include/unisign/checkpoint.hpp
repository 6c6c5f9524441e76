// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unisign/core/error.hpp"
#include "unisign/core/task.hpp"
#include "unisign/nn/optim.hpp"
#include "unisign/nn/params.hpp"

namespace unisign {

struct ArrayRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Complete training state. Values are stored as float64 whatever the model scalar.
struct Checkpoint {
  std::string config_hash;
  int stage = 1;
  std::optional<Task> task;
  Index epoch = 0;           // completed epochs
  Index batch_in_epoch = 0;  // batches of the current epoch already consumed
  Index step = 0;            // optimizer steps taken
  Index total_steps = 0;     // planned optimizer steps of the run
  std::string rng_state;
  nlohmann::json model_config;
  nlohmann::json stage_config;
  std::vector<std::string> vocab;
  std::vector<double> loss_curve;
  std::vector<ArrayRecord> params;
  long optimizer_steps = 0;
  std::vector<ArrayRecord> moments;  // "m:<param>" and "v:<param>"

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
};

inline constexpr char kCheckpointMagic[] = "UNISIGN-CKPT-1\n";

template <class S>
std::vector<ArrayRecord> capture_params(const nn::ParamList<S>& params) {
  std::vector<ArrayRecord> out;
  for (const auto& p : params.items()) {
    const auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

/// Copies stored values into matching parameters. Names absent from `records`
/// are returned; with `strict` they are an error instead.
template <class S>
std::vector<std::string> restore_params(nn::ParamList<S>& params, const std::vector<ArrayRecord>& records, bool strict = true) {
  std::map<std::string, const ArrayRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  std::vector<std::string> missing;
  for (auto& p : params.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      if (strict) throw ConfigMismatch("checkpoint has no parameter '" + p.name + "'");
      missing.push_back(p.name);
      continue;
    }
    if (it->second->shape != p.tensor.shape())
      throw ConfigMismatch("parameter '" + p.name + "' has shape " + to_string(p.tensor.shape()) + " but the checkpoint stores " +
                           to_string(it->second->shape));
    auto w = p.tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(it->second->values[i]);
  }
  return missing;
}

template <class S>
void capture_optimizer(const nn::AdamW<S>& opt, Checkpoint& ck) {
  ck.optimizer_steps = opt.steps();
  ck.moments.clear();
  std::map<std::string, const typename nn::AdamW<S>::Moments*> sorted;
  for (const auto& [name, m] : opt.state()) sorted[name] = &m;
  for (const auto& [name, m] : sorted) {
    ck.moments.push_back({"m:" + name, {static_cast<Index>(m->m.size())}, std::vector<double>(m->m.begin(), m->m.end())});
    ck.moments.push_back({"v:" + name, {static_cast<Index>(m->v.size())}, std::vector<double>(m->v.begin(), m->v.end())});
  }
}

template <class S>
void restore_optimizer(nn::AdamW<S>& opt, const Checkpoint& ck) {
  opt.set_steps(ck.optimizer_steps);
  opt.state().clear();
  for (const auto& r : ck.moments) {
    if (r.name.size() < 3 || r.name[1] != ':') throw MalformedFile("bad optimizer record '" + r.name + "'");
    auto& st = opt.state()[r.name.substr(2)];
    auto& dst = r.name[0] == 'm' ? st.m : st.v;
    dst.assign(r.values.size(), S(0));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(r.values[i]);
  }
}

namespace detail {

inline nlohmann::json array_index(const std::vector<ArrayRecord>& rs, std::uint64_t& offset) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rs) {
    out.push_back({{"name", r.name}, {"shape", r.shape}, {"offset", offset}, {"count", r.values.size()}});
    offset += r.values.size();
  }
  return out;
}

inline std::vector<ArrayRecord> read_arrays(const nlohmann::json& idx, const std::vector<double>& blob) {
  std::vector<ArrayRecord> out;
  for (const auto& e : idx) {
    const auto off = e.at("offset").get<std::uint64_t>(), n = e.at("count").get<std::uint64_t>();
    if (off + n > blob.size()) throw MalformedFile("checkpoint array '" + e.at("name").get<std::string>() + "' runs past the data");
    ArrayRecord r{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), {}};
    r.values.assign(blob.begin() + static_cast<std::ptrdiff_t>(off), blob.begin() + static_cast<std::ptrdiff_t>(off + n));
    if (numel(r.shape) != static_cast<Index>(n)) throw MalformedFile("checkpoint array '" + r.name + "' has inconsistent size");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

/// Magic line, 8-byte little-endian header length, JSON header, float64 data.
/// Written to a temporary file and renamed so a crash never leaves a torn checkpoint.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::uint64_t offset = 0;
  nlohmann::json header{{"config_hash", ck.config_hash},
                        {"stage", ck.stage},
                        {"epoch", ck.epoch},
                        {"batch_in_epoch", ck.batch_in_epoch},
                        {"step", ck.step},
                        {"total_steps", ck.total_steps},
                        {"rng_state", ck.rng_state},
                        {"model_config", ck.model_config},
                        {"stage_config", ck.stage_config},
                        {"vocab", ck.vocab},
                        {"loss_curve", ck.loss_curve},
                        {"optimizer_steps", ck.optimizer_steps}};
  if (ck.task) header["task"] = to_string(*ck.task);
  header["params"] = detail::array_index(ck.params, offset);
  header["moments"] = detail::array_index(ck.moments, offset);
  const std::string hs = header.dump();

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic - 1);
    std::uint64_t len = hs.size();
    unsigned char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(lb), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* group : {&ck.params, &ck.moments})
      for (const auto& r : *group) out.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(double)));
    if (!out) throw ConfigError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrereqCheckpoint("cannot open checkpoint " + path);
  std::string magic(sizeof kCheckpointMagic - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) throw MalformedFile(path + ": not a checkpoint file");
  unsigned char lb[8];
  in.read(reinterpret_cast<char*>(lb), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw MalformedFile(path + ": truncated header");
  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(hs);
    std::uint64_t total = 0;
    for (const char* key : {"params", "moments"})
      for (const auto& e : h.at(key)) total += e.at("count").get<std::uint64_t>();
    std::vector<double> blob(total);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw MalformedFile(path + ": truncated data");
    ck.config_hash = h.at("config_hash").get<std::string>();
    ck.stage = h.at("stage").get<int>();
    if (h.contains("task")) ck.task = parse_task(h.at("task").get<std::string>());
    ck.epoch = h.at("epoch").get<Index>();
    ck.batch_in_epoch = h.at("batch_in_epoch").get<Index>();
    ck.step = h.at("step").get<Index>();
    ck.total_steps = h.at("total_steps").get<Index>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    ck.model_config = h.at("model_config");
    ck.stage_config = h.at("stage_config");
    ck.vocab = h.at("vocab").get<std::vector<std::string>>();
    ck.loss_curve = h.at("loss_curve").get<std::vector<double>>();
    ck.optimizer_steps = h.at("optimizer_steps").get<long>();
    ck.params = detail::read_arrays(h.at("params"), blob);
    ck.moments = detail::read_arrays(h.at("moments"), blob);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw MalformedFile(path + ": " + e.what());
  }
  return ck;
}

}  // namespace unisign
