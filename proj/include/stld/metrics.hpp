#pragma once

#include <span>
#include <vector>

#include "stld/common.hpp"

namespace stld {

/// What NME divides by: the distance between two ground-truth landmarks
/// (inter-ocular style) or a fixed image size.
struct Normalizer {
  enum class Kind { InterLandmark, ImageSize };
  Kind kind = Kind::InterLandmark;
  int i = 0;
  int j = 1;
  double image_size = 32.0;

  static Normalizer interlandmark(int i, int j) { return {Kind::InterLandmark, i, j, 0.0}; }
  static Normalizer image(double size) { return {Kind::ImageSize, 0, 0, size}; }
};

struct NmeResult {
  Eigen::VectorXd per_sample;
  double mean = 0.0;
};

NmeResult nme(std::span<const LandmarkSet> preds, std::span<const LandmarkSet> gts, const Normalizer& norm);

struct AucFr {
  double auc = 0.0;  // in [0, 1]; multiply by 100 for the usual report scale
  double fr = 0.0;
};

/// FR = fraction with NME > cutoff. AUC = integral of the cumulative error
/// distribution on [0, cutoff] divided by cutoff, computed exactly as the
/// trapezoid over the CED staircase.
AucFr auc_fr(std::span<const double> nmes, double cutoff = 0.10);

/// Mean Euclidean error over all landmarks and samples, in physical units.
double mre(std::span<const LandmarkSet> preds, std::span<const LandmarkSet> gts, double units_per_px);

/// Per-sample mean Euclidean landmark error in pixels.
Eigen::VectorXd mean_point_error(std::span<const LandmarkSet> a, std::span<const LandmarkSet> b);

}  // namespace stld
