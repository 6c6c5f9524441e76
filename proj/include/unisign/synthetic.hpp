// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "unisign/core/rng.hpp"
#include "unisign/pose_data.hpp"
#include "unisign/vision.hpp"

namespace unisign::synthetic {

// Toy whole-body skeletons with smooth hand motion, for tests and demo corpora.

struct PoseOptions {
  Index frame_width = 160;
  Index frame_height = 160;
  double jitter = 0.5;          // per-keypoint pixel noise
  double min_confidence = 0.3;  // hand confidences are drawn from [min_confidence, 1]
};

/// Parameters of one hand's motion: wrist orbit plus finger spread.
struct HandMotion {
  double cx = 0, cy = 0, radius = 0, omega = 0, phase = 0, spread = 1, curl = 0;
};

struct Motion {
  std::array<HandMotion, 2> hands;  // left, right
  double head_dx = 0;
};

inline Motion random_motion(Rng& rng, const PoseOptions& o = {}) {
  Motion m;
  const double W = static_cast<double>(o.frame_width), H = static_cast<double>(o.frame_height);
  for (int h = 0; h < 2; ++h) {
    auto& hm = m.hands[h];
    hm.cx = W * (h == 0 ? uniform(rng, 0.25, 0.45) : uniform(rng, 0.55, 0.75));
    hm.cy = H * uniform(rng, 0.5, 0.75);
    hm.radius = W * uniform(rng, 0.02, 0.12);
    hm.omega = uniform(rng, 0.2, 1.2);
    hm.phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    hm.spread = uniform(rng, 0.6, 1.4);
    hm.curl = uniform(rng, -0.6, 0.6);
  }
  m.head_dx = W * uniform(rng, -0.03, 0.03);
  return m;
}

/// A fixed motion per class; instances differ only by jitter and confidence.
inline Motion class_motion(Index class_id, const PoseOptions& o = {}) {
  Rng rng(mix_seed(0x5eed0000ULL + static_cast<std::uint64_t>(class_id)));
  return random_motion(rng, o);
}

namespace detail {

inline void put(PoseSequence& s, Index t, Index k, double x, double y, double c) {
  s.at(t, k, 0) = static_cast<float>(x);
  s.at(t, k, 1) = static_cast<float>(y);
  s.at(t, k, 2) = static_cast<float>(c);
}

}  // namespace detail

/// Renders a motion into a T-frame keypoint sequence.
inline PoseSequence render_pose(const Motion& m, Index T, Rng& rng, const PoseOptions& o = {}, std::string clip_id = {}) {
  PoseSequence s;
  s.frames = T;
  s.clip_id = std::move(clip_id);
  s.values.assign(static_cast<std::size_t>(T * kWholeBodyKeypoints * kKeypointFields), 0.0f);
  const double W = static_cast<double>(o.frame_width), H = static_cast<double>(o.frame_height);
  auto jit = [&] { return o.jitter * normal01(rng); };
  for (Index t = 0; t < T; ++t) {
    const double hx = 0.5 * W + m.head_dx, hy = 0.22 * H;
    // Body (COCO order): nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles.
    const std::array<std::array<double, 2>, 17> body{{{0, 0}, {-0.03, -0.02}, {0.03, -0.02}, {-0.06, 0}, {0.06, 0},
                                                      {-0.15, 0.15}, {0.15, 0.15}, {-0.2, 0.3}, {0.2, 0.3},
                                                      {-0.2, 0.45}, {0.2, 0.45}, {-0.1, 0.5}, {0.1, 0.5},
                                                      {-0.1, 0.65}, {0.1, 0.65}, {-0.1, 0.75}, {0.1, 0.75}}};
    std::array<std::array<double, 2>, 2> wrist{};
    for (int h = 0; h < 2; ++h) {
      const auto& hm = m.hands[h];
      const double ang = hm.omega * static_cast<double>(t) + hm.phase;
      wrist[h] = {hm.cx + hm.radius * std::cos(ang), hm.cy + hm.radius * std::sin(ang)};
    }
    for (Index k = 0; k < 17; ++k) {
      double x = hx + body[k][0] * W, y = hy + body[k][1] * H;
      if (k == 9 || k == 10) {  // wrists follow the hands, elbows sit halfway to the shoulders
        x = wrist[k - 9][0];
        y = wrist[k - 9][1];
      } else if (k == 7 || k == 8) {
        x = 0.5 * (hx + body[k - 2][0] * W + wrist[k - 7][0]);
        y = 0.5 * (hy + body[k - 2][1] * H + wrist[k - 7][1]);
      }
      detail::put(s, t, k, x + jit(), y + jit(), 0.95);
    }
    for (Index k = 17; k < 23; ++k) detail::put(s, t, k, hx + jit(), 0.95 * H + jit(), 0.5);
    // Face: 68 landmarks on an ellipse around the nose.
    for (Index k = 23; k < 91; ++k) {
      const double a = 2 * std::numbers::pi * static_cast<double>(k - 23) / 68.0;
      detail::put(s, t, k, hx + 0.05 * W * std::cos(a) + jit(), hy + 0.06 * H * std::sin(a) + jit(), 0.9);
    }
    for (int h = 0; h < 2; ++h) {
      const auto& hm = m.hands[h];
      const double ang = hm.omega * static_cast<double>(t) + hm.phase;
      const double wx = wrist[h][0], wy = wrist[h][1];
      const double curl = hm.curl + 0.3 * std::sin(ang);
      const double conf = uniform(rng, o.min_confidence, 1.0);
      const Index base = h == 0 ? 91 : 112;
      detail::put(s, t, base, wx + jit(), wy + jit(), conf);
      for (Index f = 0; f < 5; ++f) {
        const double dir = -std::numbers::pi / 2 + (static_cast<double>(f) - 2.0) * 0.35 * hm.spread;
        for (Index j = 1; j <= 4; ++j) {
          const double bend = dir + curl * static_cast<double>(j) * 0.3;
          const double len = 0.012 * W * static_cast<double>(j);
          detail::put(s, t, base + 1 + 4 * f + (j - 1), wx + len * std::cos(bend) + jit(), wy + len * std::sin(bend) + jit(), conf);
        }
      }
    }
  }
  return s;
}

inline PoseSequence random_pose(Index T, Rng& rng, const PoseOptions& o = {}, std::string clip_id = {}) {
  const Motion m = random_motion(rng, o);
  return render_pose(m, T, rng, o, std::move(clip_id));
}

/// Frames matching a keypoint sequence: dark background, bright dots at the
/// hand keypoints whose color encodes the finger.
inline std::vector<Image> render_frames(const PoseSequence& s, const PoseOptions& o = {}) {
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(s.frames));
  for (Index t = 0; t < s.frames; ++t) {
    Image img(o.frame_width, o.frame_height, 0.1f);
    for (Index k = 91; k < kWholeBodyKeypoints; ++k) {
      const Index local = (k - 91) % 21;
      const float r = 0.3f + 0.7f * static_cast<float>(local % 5) / 4.0f;
      const float g = k < 112 ? 0.9f : 0.3f;
      const float b = 0.2f + 0.8f * static_cast<float>(local / 5) / 4.0f;
      const auto cx = static_cast<Index>(std::lround(s.x(t, k))), cy = static_cast<Index>(std::lround(s.y(t, k)));
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index x = cx + dx, y = cy + dy;
          if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
          img.at(x, y, 0) = r;
          img.at(x, y, 1) = g;
          img.at(x, y, 2) = b;
        }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

}  // namespace unisign::synthetic
