// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unisign/core/npy.hpp"
#include "unisign/nn/layers.hpp"
#include "unisign/pose_data.hpp"

namespace unisign {

/// RGB image, row-major H x W x 3, values in [0, 1].
struct Image {
  Index width = 0;
  Index height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(Index w, Index h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), fill) {}

  float& at(Index x, Index y, int c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  float at(Index x, Index y, int c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
};

// ---------------------------------------------------------------------------
// Frame sources. Frame indices are 0-based and follow the keypoint file's
// frame axis.

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual Index frame_count() const = 0;
  virtual Image frame(Index index) const = 0;
};

class InMemoryFrames final : public FrameSource {
 public:
  explicit InMemoryFrames(std::vector<Image> frames) : frames_(std::move(frames)) {}
  Index frame_count() const override { return static_cast<Index>(frames_.size()); }
  Image frame(Index i) const override {
    if (i < 0 || i >= frame_count()) throw DecodeError("frame " + std::to_string(i) + " out of range");
    return frames_[static_cast<std::size_t>(i)];
  }

 private:
  std::vector<Image> frames_;
};

/// Binary PPM (P6, maxval 255).
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open " + path);
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    if (!(in >> v)) throw DecodeError(path + ": bad PPM header");
    return v;
  };
  if (magic != "P6") throw DecodeError(path + ": not a binary PPM");
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw DecodeError(path + ": unsupported PPM geometry");
  in.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw DecodeError(path + ": truncated PPM");
  Image img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.rgb[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.rgb) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
}

/// Directory of PPM frames, ordered by file name.
class FrameDirectory final : public FrameSource {
 public:
  explicit FrameDirectory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DecodeError(dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".ppm") files_.push_back(e.path().string());
    std::sort(files_.begin(), files_.end());
  }
  Index frame_count() const override { return static_cast<Index>(files_.size()); }
  Image frame(Index i) const override {
    if (i < 0 || i >= frame_count()) throw DecodeError("frame " + std::to_string(i) + " out of range");
    return read_ppm(files_[static_cast<std::size_t>(i)]);
  }

 private:
  std::vector<std::string> files_;
};

/// Raw video: an .npy uint8 array of shape (T, H, W, 3).
class RawVideo final : public FrameSource {
 public:
  explicit RawVideo(const std::string& path) {
    npy::Array a;
    try {
      a = npy::read(path);
    } catch (const MalformedFile& e) {
      throw DecodeError(e.what());
    }
    if (a.descr != "|u1" && a.descr != "<u1") throw DecodeError(path + ": raw video must be uint8");
    if (a.shape.size() != 4 || a.shape[3] != 3) throw DecodeError(path + ": raw video must be (T, H, W, 3)");
    frames_ = a.shape[0];
    height_ = a.shape[1];
    width_ = a.shape[2];
    bytes_ = std::move(a.bytes);
  }
  Index frame_count() const override { return frames_; }
  Image frame(Index i) const override {
    if (i < 0 || i >= frames_) throw DecodeError("frame " + std::to_string(i) + " out of range");
    Image img(width_, height_);
    const auto n = static_cast<std::size_t>(width_ * height_ * 3);
    const auto* src = reinterpret_cast<const unsigned char*>(bytes_.data()) + static_cast<std::size_t>(i) * n;
    for (std::size_t k = 0; k < n; ++k) img.rgb[k] = static_cast<float>(src[k]) / 255.0f;
    return img;
  }

 private:
  Index frames_ = 0, height_ = 0, width_ = 0;
  std::vector<char> bytes_;
};

inline void write_raw_video(const std::string& path, const std::vector<Image>& frames) {
  if (frames.empty()) throw Error("no frames to write");
  const Index w = frames[0].width, h = frames[0].height;
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(frames.size() * w * h * 3));
  for (const auto& f : frames)
    for (float v : f.rgb) bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  npy::write_u8(path, {static_cast<Index>(frames.size()), h, w, 3}, bytes);
}

/// Opens a frame directory or a raw video file.
inline std::unique_ptr<FrameSource> open_video(const std::string& path) {
  if (std::filesystem::is_directory(path)) return std::make_unique<FrameDirectory>(path);
  return std::make_unique<RawVideo>(path);
}

// ---------------------------------------------------------------------------
// Hand cropping

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct CropOptions {
  double margin = 1.2;          // expansion of the keypoint bounding box
  bool square = true;           // square the box to its larger side
  double fallback_size = 64.0;  // side of the box used when keypoints coincide
  Index output_size = 112;
};

struct HandCrop {
  Image image;
  Index source_frame_index = 0;
  GroupId group = GroupId::lh;
  Box crop_box;
};

/// Crop box for one hand at frame t from its 21 raw keypoints.
inline Box hand_box(const GroupData& hand, Index t, const CropOptions& opts = {}) {
  const Index N = hand.nodes();
  double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
  for (Index n = 0; n < N; ++n) {
    const double x = hand.raw[static_cast<std::size_t>(2 * (t * N + n))];
    const double y = hand.raw[static_cast<std::size_t>(2 * (t * N + n) + 1)];
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  double w = xmax - xmin, h = ymax - ymin;
  double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  if (std::max(w, h) < 1e-6) {
    // Degenerate: fixed box around the root keypoint.
    cx = hand.raw[static_cast<std::size_t>(2 * (t * N))];
    cy = hand.raw[static_cast<std::size_t>(2 * (t * N) + 1)];
    w = h = opts.fallback_size;
  } else {
    w = std::max(w * opts.margin, 1.0);
    h = std::max(h * opts.margin, 1.0);
    if (opts.square) w = h = std::max(w, h);
  }
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

/// Bilinear resample of `box` to size x size; pixels outside the frame read as zero.
inline Image resample_box(const Image& frame, const Box& box, Index size) {
  Image out(size, size);
  const double sx = box.width() / static_cast<double>(size), sy = box.height() / static_cast<double>(size);
  auto pixel = [&](Index x, Index y, int c) -> double {
    if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return 0.0;
    return frame.at(x, y, c);
  };
  for (Index oy = 0; oy < size; ++oy)
    for (Index ox = 0; ox < size; ++ox) {
      const double x = box.x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5;
      const double y = box.y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5;
      const double fx = std::floor(x), fy = std::floor(y);
      const double wx = x - fx, wy = y - fy;
      const auto ix = static_cast<Index>(fx), iy = static_cast<Index>(fy);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * pixel(ix, iy, c) + wx * pixel(ix + 1, iy, c)) +
                         wy * ((1 - wx) * pixel(ix, iy + 1, c) + wx * pixel(ix + 1, iy + 1, c));
        out.at(ox, oy, c) = static_cast<float>(v);
      }
    }
  return out;
}

/// Crops of one hand at the given frame indices.
inline std::vector<HandCrop> crop_hand(const FrameSource& frames, const GroupedPose& grouped, GroupId hand,
                                       const std::vector<Index>& indices, const CropOptions& opts = {}) {
  if (!is_hand(hand)) throw Error("crop_hand: group " + std::string(group_name(hand)) + " is not a hand");
  std::vector<HandCrop> out;
  for (Index t : indices) {
    if (t < 0 || t >= grouped.frames) throw IndexOutOfRange("crop index " + std::to_string(t));
    const Image frame = frames.frame(t);
    HandCrop c;
    c.source_frame_index = t;
    c.group = hand;
    c.crop_box = hand_box(grouped[hand], t, opts);
    c.image = resample_box(frame, c.crop_box, opts.output_size);
    out.push_back(std::move(c));
  }
  return out;
}

/// Both hands at each index, ordered (lh, rh) per index.
inline std::vector<HandCrop> crop_hands(const FrameSource& frames, const GroupedPose& grouped, const std::vector<Index>& indices,
                                        const CropOptions& opts = {}) {
  std::vector<HandCrop> out;
  for (Index t : indices)
    for (GroupId h : {GroupId::lh, GroupId::rh}) {
      auto c = crop_hand(frames, grouped, h, {t}, opts);
      out.push_back(std::move(c.front()));
    }
  return out;
}

/// Raw hand keypoints at frame t re-expressed in the crop box's unit square, [N, 2].
template <class S>
Tensor<S> crop_coordinates(const GroupData& hand, Index t, const Box& box) {
  const Index N = hand.nodes();
  std::vector<S> v(static_cast<std::size_t>(N * 2));
  for (Index n = 0; n < N; ++n) {
    v[2 * n] = static_cast<S>((hand.raw[static_cast<std::size_t>(2 * (t * N + n))] - box.x0) / box.width());
    v[2 * n + 1] = static_cast<S>((hand.raw[static_cast<std::size_t>(2 * (t * N + n) + 1)] - box.y0) / box.height());
  }
  return Tensor<S>::from(std::move(v), {N, 2});
}

// ---------------------------------------------------------------------------
// Image encoders

/// Any image encoder producing a spatial map [K, h, w, C] from [K, H, W, 3].
template <class S>
class ImageEncoder {
 public:
  using scalar_type = S;
  virtual ~ImageEncoder() = default;
  virtual Tensor<S> operator()(const Tensor<S>& images) const = 0;
  virtual Index output_channels() const = 0;
  virtual void collect_params(nn::ParamList<S>& out) = 0;
};

struct VisionConfig {
  std::vector<Index> conv_channels{16, 32, 64, 128};  // each 3x3, stride 2
  Index output_channels = 256;
};

/// Small from-scratch convolutional stack, overall stride 2^layers.
template <class S>
class ConvImageEncoder final : public ImageEncoder<S> {
 public:
  ConvImageEncoder(const VisionConfig& cfg, Rng& rng) : out_channels_(cfg.output_channels) {
    Index in = 3;
    for (Index c : cfg.conv_channels) {
      convs_.emplace_back(9 * in, c, rng);
      in = c;
    }
    projection_ = nn::Linear<S>(in, cfg.output_channels, rng);
  }

  Tensor<S> operator()(const Tensor<S>& images) const override {
    auto x = images;
    for (const auto& conv : convs_) x = relu(conv(im2col(x, 3, 2, 1)));
    return projection_(x);
  }

  Index output_channels() const override { return out_channels_; }

  void collect_params(nn::ParamList<S>& out) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) out.child("conv" + std::to_string(i), convs_[i]);
    out.child("projection", projection_);
  }

 private:
  Index out_channels_;
  std::vector<nn::Linear<S>> convs_;
  nn::Linear<S> projection_;
};

template <class S>
struct VisionFeatures {
  GroupId group = GroupId::lh;
  Tensor<S> features;  // [K, h, w, C]
  std::vector<Index> frame_indices;
};

template <class S>
Tensor<S> stack_crops(const std::vector<const HandCrop*>& crops) {
  const Index size = crops.front()->image.width;
  std::vector<S> v;
  v.reserve(static_cast<std::size_t>(crops.size() * size * size * 3));
  for (const auto* c : crops) {
    if (c->image.width != size || c->image.height != size) throw ShapeError("crops must share one size");
    for (float x : c->image.rgb) v.push_back(static_cast<S>(x));
  }
  return Tensor<S>::from(std::move(v), {static_cast<Index>(crops.size()), size, size, 3});
}

/// Encodes crops into per-hand spatial feature maps.
template <class S>
std::map<GroupId, VisionFeatures<S>> encode_crops(const ImageEncoder<S>& encoder, const std::vector<HandCrop>& crops) {
  if (crops.empty()) throw EmptyInput("encode_crops needs at least one crop");
  std::map<GroupId, VisionFeatures<S>> out;
  for (GroupId hand : {GroupId::lh, GroupId::rh}) {
    std::vector<const HandCrop*> mine;
    for (const auto& c : crops)
      if (c.group == hand) mine.push_back(&c);
    if (mine.empty()) continue;
    VisionFeatures<S> vf;
    vf.group = hand;
    vf.features = encoder(stack_crops<S>(mine));
    for (const auto* c : mine) vf.frame_indices.push_back(c->source_frame_index);
    out[hand] = std::move(vf);
  }
  return out;
}

}  // namespace unisign
