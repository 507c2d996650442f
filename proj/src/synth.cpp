#include "stld/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stld {

namespace {

// Per-landmark kernel: anisotropic Gaussian, major/minor std in pixels and an
// orientation that differs by landmark.
struct Kernel {
  double major;
  double minor;
  double angle;
};

Kernel landmark_kernel(int k, int n) {
  return {1.5, 0.75, std::numbers::pi * static_cast<double>(k) / static_cast<double>(n)};
}

void add_bump(Raster& img, double x, double y, double amp, const Kernel& ker) {
  const double ca = std::cos(ker.angle), sa = std::sin(ker.angle);
  const double ia = 1.0 / (ker.major * ker.major), ib = 1.0 / (ker.minor * ker.minor);
  const double reach = 4.0 * ker.major;
  const int r0 = std::max(0, static_cast<int>(std::floor(y - reach)));
  const int r1 = std::min(static_cast<int>(img.rows()) - 1, static_cast<int>(std::ceil(y + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(x - reach)));
  const int c1 = std::min(static_cast<int>(img.cols()) - 1, static_cast<int>(std::ceil(x + reach)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c - x, dy = r - y;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      img(r, c) += amp * std::exp(-0.5 * (u * u * ia + v * v * ib));
    }
  }
}

int poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  const double limit = std::exp(-mean);
  int k = 0;
  double p = uniform(rng);
  while (p > limit) {
    ++k;
    p *= uniform(rng);
  }
  return k;
}

}  // namespace

void TaskConfig::validate() const {
  require(grid >= 8, "task.grid must be >= 8");
  require(landmarks >= 2, "task.landmarks must be >= 2");
  require(scale_min > 0.0 && scale_max >= scale_min, "task.scale_min must be > 0 and <= scale_max");
  require(std::isfinite(rotation_max) && rotation_max >= 0.0, "task.rotation_max must be finite and >= 0");
  require(std::isfinite(translation) && translation >= 0.0, "task.translation must be finite and >= 0");
  require(std::isfinite(jitter_std) && jitter_std >= 0.0, "task.jitter_std must be finite and >= 0");
  require(std::isfinite(clutter_level) && clutter_level >= 0.0, "task.clutter_level must be finite and >= 0");
  require(std::isfinite(noise_std) && noise_std >= 0.0, "task.noise_std must be finite and >= 0");
  require(std::isfinite(margin) && margin >= 0.0, "task.margin must be finite and >= 0");
  require(max_retries >= 1, "task.max_retries must be >= 1");
  if (base_shape.rows() != 0) {
    require(base_shape.rows() == landmarks, "task.base_shape must have one row per landmark");
    require(base_shape.allFinite(), "task.base_shape must be finite");
  }
}

LandmarkSet TaskConfig::resolved_shape() const {
  LandmarkSet unit;
  if (base_shape.rows() != 0) {
    unit = base_shape;
  } else if (landmarks == 5) {
    // Eyes, nose tip, mouth corners.
    unit.resize(5, 2);
    unit << -0.18, -0.12,
             0.18, -0.12,
             0.00,  0.04,
            -0.13,  0.18,
             0.13,  0.18;
  } else {
    // Points on an ellipse, starting at the left "eye".
    unit.resize(landmarks, 2);
    for (int k = 0; k < landmarks; ++k) {
      const double a = std::numbers::pi + 2.0 * std::numbers::pi * k / landmarks;
      unit(k, 0) = 0.22 * std::cos(a);
      unit(k, 1) = 0.18 * std::sin(a);
    }
  }
  return unit * static_cast<double>(grid);
}

LandmarkSet pose_shape(const TaskConfig& cfg, const Pose& pose) {
  const LandmarkSet shape = cfg.resolved_shape();
  const double c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  Eigen::Matrix2d rot;
  rot << c, -s, s, c;
  const double center = 0.5 * static_cast<double>(cfg.grid - 1);
  LandmarkSet out = (shape * rot.transpose()) * pose.scale;
  out.col(0).array() += center + pose.tx;
  out.col(1).array() += center + pose.ty;
  return out;
}

Raster render_sample(const LandmarkSet& landmarks, const TaskConfig& cfg, Rng& rng) {
  const int g = cfg.grid;
  Raster img = Raster::Zero(g, g);
  const int n = static_cast<int>(landmarks.rows());
  for (int k = 0; k < n; ++k)
    add_bump(img, landmarks(k, 0), landmarks(k, 1), cfg.landmark_amplitude, landmark_kernel(k, n));

  const Kernel clutter{1.0, 1.0, 0.0};
  const int bumps = poisson(rng, cfg.clutter_level);
  for (int b = 0; b < bumps; ++b) {
    double x = 0.0, y = 0.0;
    // Keep distractors off the landmarks.
    for (int attempt = 0; attempt < 32; ++attempt) {
      x = uniform(rng, 0.0, g - 1.0);
      y = uniform(rng, 0.0, g - 1.0);
      const auto d2 = ((landmarks.col(0).array() - x).square() + (landmarks.col(1).array() - y).square());
      if (n == 0 || d2.minCoeff() > 9.0) break;
    }
    add_bump(img, x, y, cfg.clutter_amplitude, clutter);
  }
  if (cfg.noise_std > 0.0)
    for (Index i = 0; i < img.size(); ++i) img.data()[i] += cfg.noise_std * gaussian(rng);
  return img.cwiseMax(0.0).cwiseMin(1.0);
}

Sample generate_sample(const TaskConfig& cfg, int id, std::uint64_t seed) {
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(id), 0x7a5c);
  const double lo = cfg.margin, hi = cfg.grid - 1.0 - cfg.margin;
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const double u = uniform(rng);
    Pose pose;
    pose.rotation = cfg.rotation_max * (2.0 * u - 1.0);
    pose.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
    pose.tx = uniform(rng, -cfg.translation, cfg.translation);
    pose.ty = uniform(rng, -cfg.translation, cfg.translation);
    LandmarkSet pts = pose_shape(cfg, pose);
    for (Index k = 0; k < pts.rows(); ++k) {
      pts(k, 0) += cfg.jitter_std * gaussian(rng);
      pts(k, 1) += cfg.jitter_std * gaussian(rng);
    }
    if ((pts.array() < lo).any() || (pts.array() > hi).any()) continue;
    Raster img = render_sample(pts, cfg, rng);
    return Sample(id, std::move(img), std::nullopt, std::move(pts), u);
  }
  throw ValidationError("generate_task: landmarks leave the image after " +
                        std::to_string(cfg.max_retries) + " pose draws; shrink the pose range or margin");
}

std::vector<Sample> generate_task(const TaskConfig& cfg, int n_train, int n_test, std::uint64_t seed) {
  cfg.validate();
  require(n_train > 0 && n_test > 0, "generate_task: counts must be positive");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n_train + n_test));
  for (int id = 0; id < n_train + n_test; ++id) out.push_back(generate_sample(cfg, id, seed));
  return out;
}

}  // namespace stld
