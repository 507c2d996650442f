#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "stld/domain.hpp"
#include "stld/losses.hpp"
#include "stld/tinynet.hpp"

namespace stld {

/// Per-landmark B x B frequency maps over [0, extent)^2. maps[k](row, col)
/// holds the mass of landmark k with y in bin `row` and x in bin `col`.
struct DensityMap {
  int bins = 12;
  double extent = 256.0;
  std::vector<Eigen::MatrixXd> maps;
};

/// Bin index floor(coord / (extent / B)) clamped to B - 1; eps is added to
/// every bin before normalizing each landmark's map to sum 1.
DensityMap density_map(std::span<const LandmarkSet> sets, int bins = 12, double extent = 256.0,
                       double eps = 1e-6);

struct KlResult {
  Eigen::VectorXd per_landmark;
  double mean = 0.0;
};

/// KL(anchor || other) = sum a ln(a / o), per landmark, plus the mean.
KlResult kl_divergence(const DensityMap& anchor, const DensityMap& other);

/// Offsets pseudo - GT pooled over landmarks and samples on a bins x bins
/// grid over [-range, range]^2. counts(row, col): row bins dy, col bins dx.
struct NoiseHistogram {
  double range = 0.0;
  int bins = 0;
  Eigen::MatrixXd counts;
  long overflow = 0;
  long total = 0;
};

NoiseHistogram noise_histogram(const PseudoStore& pseudo, const std::map<int, LandmarkSet>& hidden_gts,
                               double range_px, int bins);

/// Equal-count grouping: sorts `key` and cuts it into `groups` contiguous
/// chunks whose sizes differ by at most one. Returns the group of each index.
/// With descending = true, group 0 holds the largest keys.
std::vector<int> quantile_groups(const std::vector<double>& key, int groups, bool descending = false);

struct ForgettingBin {
  long count = 0;
  std::optional<double> noise_mean;  // px error of the pseudo-labels used
  std::optional<double> delta_mean;  // px distance of stage-2 predictions from them
};

/// Per sample: noise = mean px error of pseudo vs GT and delta = mean px
/// distance between predictions after stage 2 and those pseudo-labels.
/// Samples go into equal-count noise bins (ascending noise).
std::vector<ForgettingBin> forgetting_curve(const PseudoStore& pseudo_used, const PredictionMap& preds_after,
                                            const std::map<int, LandmarkSet>& hidden_gts, int noise_bins = 6);

/// Pearson correlation; absent when either side has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
/// Spearman rank correlation with average ranks for ties.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct GradientGroup {
  long count = 0;
  double loss_mean = 0.0;
  std::optional<double> r;
};

/// Groups paired per-sample gradient vectors by loss (group 0 = largest loss)
/// and correlates the flattened GT and pseudo gradients inside each group.
std::vector<GradientGroup> grouped_gradient_correlation(const std::vector<Eigen::VectorXd>& gt_grads,
                                                        const std::vector<Eigen::VectorXd>& pseudo_grads,
                                                        const std::vector<double>& losses, int groups);

struct GradientLoss {
  double p = 1.0;            // coordinate pathway: lp loss exponent
  double sigma = 1.5;        // heatmap pathway: target granularity
};

/// Last-layer gradients of each sample's loss under its GT target and under
/// its pseudo target, pooled over model snapshots taken along training and
/// grouped by the pseudo-target loss.
std::vector<GradientGroup> gradient_correlation(const std::vector<TinyModel>& snapshots,
                                                const std::vector<Sample>& samples,
                                                const std::vector<LandmarkSet>& gt_targets,
                                                const std::vector<LandmarkSet>& pseudo_targets,
                                                const GradientLoss& loss, int groups);

}  // namespace stld
