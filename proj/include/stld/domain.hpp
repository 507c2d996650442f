#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "stld/common.hpp"

namespace stld {

/// RAII marker for code that trains models. While any TrainingScope is alive
/// on the current thread, reading a sample's hidden ground truth throws.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

  static bool active();
};

/// Total hidden-GT reads (measurement only) since process start.
std::uint64_t hidden_gt_reads();

class Sample {
 public:
  Sample() = default;
  Sample(int id, Raster image, std::optional<LandmarkSet> gt,
         std::optional<LandmarkSet> hidden_gt, double pose_latent = 0.0)
      : id(id),
        image(std::move(image)),
        gt(std::move(gt)),
        pose_latent(pose_latent),
        hidden_gt_(std::move(hidden_gt)) {}

  int id = 0;
  Raster image;
  std::optional<LandmarkSet> gt;
  /// Generator latent used to order samples for biased splits.
  double pose_latent = 0.0;

  bool has_hidden_gt() const { return hidden_gt_.has_value(); }
  /// Synthetic oracle. Throws RuntimeError inside a TrainingScope.
  const LandmarkSet& hidden_gt() const;

  Sample with_gt(std::optional<LandmarkSet> g) const {
    Sample s = *this;
    s.gt = std::move(g);
    return s;
  }

 private:
  std::optional<LandmarkSet> hidden_gt_;
};

struct Dataset {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> test;

  std::size_t n_l() const { return labeled.size(); }
  std::size_t n_u() const { return unlabeled.size(); }
  double labeled_ratio() const {
    return static_cast<double>(n_l()) / static_cast<double>(n_l() + n_u());
  }
  std::vector<int> unlabeled_ids() const;
};

struct PseudoLabel {
  LandmarkSet points;
  std::optional<double> confidence;  // per-landmark mean, heatmap pathway only
  std::optional<Eigen::VectorXd> landmark_confidence;
  int round_estimated = 0;
};

struct Prediction {
  LandmarkSet points;
  std::optional<Eigen::VectorXd> landmark_confidence;
};

using PredictionMap = std::map<int, Prediction>;

enum class ConfidenceAggregate { Mean, Min };

/// Pseudo-labels for every unlabeled sample, keyed by sample id.
class PseudoStore {
 public:
  PseudoStore() = default;
  explicit PseudoStore(std::vector<int> ids);

  const std::vector<int>& ids() const { return ids_; }
  const PseudoLabel& at(int id) const;
  bool contains(int id) const { return entries_.count(id) != 0; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::map<int, PseudoLabel>& entries() const { return entries_; }

 private:
  friend PseudoStore update_pseudo(const PseudoStore&, const PredictionMap&, int,
                                   ConfidenceAggregate);
  friend PseudoStore make_pseudo_store(std::map<int, PseudoLabel>);
  std::vector<int> ids_;
  std::map<int, PseudoLabel> entries_;
};

/// Splits training samples into labeled/unlabeled. With bias_knob > 0 the
/// labeled split is drawn from the lowest (1 - bias_knob) fraction of samples
/// ordered by pose latent (never fewer than the labeled count).
Dataset split_dataset(const std::vector<Sample>& train, const std::vector<Sample>& test,
                      double labeled_ratio, std::uint64_t seed, double bias_knob);

/// Replaces every entry with the given predictions. All unlabeled ids must be
/// covered; previous entries are discarded.
PseudoStore update_pseudo(const PseudoStore& store, const PredictionMap& predictions, int round,
                          ConfidenceAggregate agg = ConfidenceAggregate::Mean);

PseudoStore make_pseudo_store(std::map<int, PseudoLabel> entries);

/// Row-major flat view of a raster, i.e. the model input vector.
inline Eigen::Map<const Eigen::VectorXd> flat(const Raster& r) {
  return Eigen::Map<const Eigen::VectorXd>(r.data(), r.size());
}

}  // namespace stld
