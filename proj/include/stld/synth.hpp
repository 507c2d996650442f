#pragma once

#include <cstdint>
#include <vector>

#include "stld/domain.hpp"

namespace stld {

/// Generator for small landmark tasks with a known answer.
///
/// A sample is drawn as: pose latent (rotation, scale, translation) -> affine
/// map of the canonical shape -> per-landmark jitter -> render. Every landmark
/// has its own anisotropic kernel so the landmarks are distinguishable.
struct TaskConfig {
  int grid = 32;
  int landmarks = 5;
  /// Canonical shape in units of the grid, relative to the image center.
  /// Empty means the built-in face-like default sized to `landmarks`.
  LandmarkSet base_shape;
  double rotation_max = 0.35;  // radians
  double scale_min = 0.85;
  double scale_max = 1.15;
  double translation = 3.0;  // pixels, per axis, uniform in [-t, t]
  double jitter_std = 0.4;   // pixels
  double clutter_level = 2.0;  // expected distractor bumps per image
  double noise_std = 0.05;
  double landmark_amplitude = 1.0;
  double clutter_amplitude = 0.6;
  double margin = 1.0;  // pixels kept clear of the border
  int max_retries = 64;

  void validate() const;
  /// Canonical shape in pixels relative to the image center.
  LandmarkSet resolved_shape() const;
};

struct Pose {
  double rotation = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

/// Affine image of the canonical shape about the image center.
LandmarkSet pose_shape(const TaskConfig& cfg, const Pose& pose);

/// Renders landmarks plus clutter and pixel noise; values clamped to [0, 1].
Raster render_sample(const LandmarkSet& landmarks, const TaskConfig& cfg, Rng& rng);

/// Generates n_train + n_test samples with ids 0..n-1 (training first). Each
/// sample draws from its own stream derived from (seed, id), so the result
/// does not depend on generation order.
std::vector<Sample> generate_task(const TaskConfig& cfg, int n_train, int n_test, std::uint64_t seed);

/// Generates a single sample; `generate_task` is a loop over this.
Sample generate_sample(const TaskConfig& cfg, int id, std::uint64_t seed);

}  // namespace stld
