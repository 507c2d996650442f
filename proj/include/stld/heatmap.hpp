#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stld/common.hpp"

namespace stld {

/// N stacked H x W maps in one flat buffer, channel-major then row-major:
/// index = k*H*W + r*W + c. This is also the heatmap model's output layout.
template <typename Scalar>
struct HeatmapStackT {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using ChannelMap = Eigen::Map<RasterT<Scalar>>;
  using ConstChannelMap = Eigen::Map<const RasterT<Scalar>>;

  Index channels = 0;
  Index rows = 0;
  Index cols = 0;
  Vector values;
  Scalar sigma = Scalar(0);  // encoding width; 0 for predicted stacks

  HeatmapStackT() = default;
  HeatmapStackT(Index n, Index h, Index w) : channels(n), rows(h), cols(w), values(Vector::Zero(n * h * w)) {}

  static HeatmapStackT from_flat(const Eigen::Ref<const Vector>& flat, Index n, Index h, Index w) {
    require(flat.size() == n * h * w, "heatmap: flat buffer size does not match N*H*W");
    HeatmapStackT s(n, h, w);
    s.values = flat;
    return s;
  }

  ChannelMap channel(Index k) { return ChannelMap(values.data() + k * rows * cols, rows, cols); }
  ConstChannelMap channel(Index k) const {
    return ConstChannelMap(values.data() + k * rows * cols, rows, cols);
  }
  bool same_shape(const HeatmapStackT& o) const {
    return channels == o.channels && rows == o.rows && cols == o.cols;
  }
};
using HeatmapStack = HeatmapStackT<double>;

/// Unnormalized Gaussians (peak 1) centred on coords/scale.
template <typename Scalar>
HeatmapStackT<Scalar> encode_heatmaps(const LandmarkSetT<Scalar>& coords, Scalar sigma, Index h, Index w,
                                      Scalar scale = Scalar(1)) {
  require(sigma > Scalar(0), "encode_heatmaps: sigma must be > 0");
  require(scale > Scalar(0), "encode_heatmaps: scale must be > 0");
  require(coords.allFinite(), "encode_heatmaps: coordinates must be finite");
  HeatmapStackT<Scalar> out(coords.rows(), h, w);
  out.sigma = sigma;
  const Scalar inv = Scalar(1) / (Scalar(2) * sigma * sigma);
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  for (Index k = 0; k < coords.rows(); ++k) {
    const Scalar mx = coords(k, 0) / scale, my = coords(k, 1) / scale;
    // Separable: exp(-(dx^2 + dy^2) * inv) = gx(c) * gy(r).
    Vec gx(w), gy(h);
    for (Index c = 0; c < w; ++c) gx(c) = std::exp(-(Scalar(c) - mx) * (Scalar(c) - mx) * inv);
    for (Index r = 0; r < h; ++r) gy(r) = std::exp(-(Scalar(r) - my) * (Scalar(r) - my) * inv);
    out.channel(k) = (gy.matrix() * gx.matrix().transpose());
  }
  return out;
}

template <typename Scalar>
struct DecodedT {
  LandmarkSetT<Scalar> points;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> confidence;
  std::vector<bool> degenerate;
};
using Decoded = DecodedT<double>;

/// Argmax per channel, then a quarter-cell step toward the larger neighbour
/// on each axis (when both neighbours exist). Flat channels decode to the map
/// centre and are flagged degenerate. Set `quarter_shift = false` for plain
/// argmax.
template <typename Scalar>
DecodedT<Scalar> decode_heatmaps(const HeatmapStackT<Scalar>& stack, Scalar scale = Scalar(1),
                                 bool quarter_shift = true) {
  require(stack.values.allFinite(), "decode_heatmaps: stack must be finite");
  require(scale > Scalar(0), "decode_heatmaps: scale must be > 0");
  DecodedT<Scalar> out;
  out.points.resize(stack.channels, 2);
  out.confidence.resize(stack.channels);
  out.degenerate.assign(static_cast<std::size_t>(stack.channels), false);
  for (Index k = 0; k < stack.channels; ++k) {
    const auto ch = stack.channel(k);
    Index r0 = 0, c0 = 0;
    const Scalar peak = ch.maxCoeff(&r0, &c0);
    Scalar x, y;
    if (peak == ch.minCoeff()) {
      x = Scalar(stack.cols - 1) / Scalar(2);
      y = Scalar(stack.rows - 1) / Scalar(2);
      out.degenerate[static_cast<std::size_t>(k)] = true;
    } else {
      x = Scalar(c0);
      y = Scalar(r0);
      if (quarter_shift) {
        if (c0 > 0 && c0 + 1 < stack.cols) {
          const Scalar d = ch(r0, c0 + 1) - ch(r0, c0 - 1);
          if (d > Scalar(0)) x += Scalar(0.25);
          else if (d < Scalar(0)) x -= Scalar(0.25);
        }
        if (r0 > 0 && r0 + 1 < stack.rows) {
          const Scalar d = ch(r0 + 1, c0) - ch(r0 - 1, c0);
          if (d > Scalar(0)) y += Scalar(0.25);
          else if (d < Scalar(0)) y -= Scalar(0.25);
        }
      }
    }
    out.points(k, 0) = x * scale;
    out.points(k, 1) = y * scale;
    out.confidence(k) = std::clamp(peak, Scalar(0), Scalar(1));
  }
  return out;
}

}  // namespace stld
