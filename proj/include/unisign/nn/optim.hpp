// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "unisign/nn/params.hpp"

namespace unisign::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay. Parameters without a gradient are skipped.
template <class S>
class AdamW {
 public:
  struct Moments {
    std::vector<S> m, v;
  };

  AdamW(ParamList<S> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {}

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (auto& p : params_.items()) {
      if (!p.tensor.has_grad()) continue;
      auto& st = state_[p.name];
      auto w = p.tensor.mutable_data();
      auto g = p.tensor.grad();
      if (st.m.empty()) {
        st.m.assign(w.size(), S(0));
        st.v.assign(w.size(), S(0));
      }
      const S decay = static_cast<S>(1.0 - lr * opts_.weight_decay);
      const S b1 = static_cast<S>(opts_.beta1), b2 = static_cast<S>(opts_.beta2);
      const S step_size = static_cast<S>(lr / bc1);
      const S rbc2 = static_cast<S>(1.0 / std::sqrt(bc2));
      const S eps = static_cast<S>(opts_.eps);
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= decay;
        st.m[i] = b1 * st.m[i] + (S(1) - b1) * g[i];
        st.v[i] = b2 * st.v[i] + (S(1) - b2) * g[i] * g[i];
        w[i] -= step_size * st.m[i] / (std::sqrt(st.v[i]) * rbc2 + eps);
      }
    }
  }

  void zero_grad() { params_.zero_grad(); }

  /// Scales all gradients so their global L2 norm is at most `max_norm`; returns the norm.
  double clip_grad_norm(double max_norm) {
    double total = 0;
    for (auto& p : params_.items())
      for (S g : p.tensor.grad()) total += static_cast<double>(g) * g;
    total = std::sqrt(total);
    if (max_norm > 0 && total > max_norm) {
      const S f = static_cast<S>(max_norm / (total + 1e-12));
      for (auto& p : params_.items())
        for (S& g : p.tensor.grad_storage()) g *= f;
    }
    return total;
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  std::unordered_map<std::string, Moments>& state() { return state_; }
  const std::unordered_map<std::string, Moments>& state() const { return state_; }
  ParamList<S>& params() { return params_; }

 private:
  ParamList<S> params_;
  AdamWOptions opts_;
  long steps_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

/// Cosine decay from `peak` at step 0 to `peak * floor_ratio` at step total-1.
class CosineSchedule {
 public:
  CosineSchedule(double peak, long total_steps, double floor_ratio = 0.0)
      : peak_(peak), total_(total_steps), floor_(peak * floor_ratio) {}

  double operator()(long step) const {
    if (total_ <= 1) return peak_;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_ - 1));
    return floor_ + (peak_ - floor_) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }

  long total_steps() const { return total_; }

 private:
  double peak_;
  long total_;
  double floor_;
};

}  // namespace unisign::nn
