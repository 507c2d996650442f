#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stld/domain.hpp"
#include "stld/losses.hpp"
#include "stld/metrics.hpp"
#include "stld/tinynet.hpp"

namespace stld {

struct StageConfig {
  int epochs = 60;
  double lr = 1e-3;
  int batch = 16;
  /// Fractions of the stage's epochs at which lr is multiplied by decay_factor.
  std::vector<double> decay_at{2.0 / 3.0, 5.0 / 6.0};
  double decay_factor = 0.1;
  /// Rounds >= 2 of pseudo pretraining resume from the previous round's
  /// pretrained model and run epochs / speedup_divisor epochs.
  bool speedup = true;
  int speedup_divisor = 5;
  /// Stage-2 batches always mix labeled and pseudo-labeled samples. true: the
  /// batch loss averages each source separately; false: one pooled mean.
  bool per_source = true;

  void validate() const;
  double lr_at_epoch(int epoch, int total_epochs) const;
};

/// Model and regression settings shared by every stage of a run.
struct TrainSpec {
  Pathway pathway = Pathway::Heatmap;
  ModelDims dims;
  StageConfig stage;
  double sigma_std = 1.5;  // heatmap standard granularity; coordinate uses p = 1

  double standard_granularity() const { return pathway == Pathway::Heatmap ? sigma_std : 1.0; }
};

struct FitResult {
  TinyModel model;
  /// Mean weighted batch loss over the final epoch; absent for zero epochs.
  std::optional<double> final_loss;
};

/// Regression target for one sample: a heatmap stack at the given sigma, or
/// coordinates divided by the grid (x0, y0, x1, y1, ...).
Eigen::VectorXd target_vector(const TrainSpec& spec, const LandmarkSet& target, double granularity);

/// How pseudo-labeled samples enter a training stage. weight 0 drops them.
struct PseudoTerm {
  double weight = 0.0;
  double granularity = 0.0;
  /// false: one pool, batch loss = mean of weighted per-sample losses.
  /// true: batch loss = mean over its labeled samples + weight * mean over its
  /// pseudo-labeled samples (source-aware mixing).
  bool per_source = false;
};

/// Generic stage: labeled samples at standard granularity plus pseudo-labeled
/// samples `pseudo_ids` with the given term, shuffled into joint batches.
FitResult fit_stage(TinyModel init, const TrainSpec& spec, const std::vector<Sample>& labeled,
                    const std::vector<Sample>& unlabeled, const PseudoStore* pseudo,
                    const std::vector<int>& pseudo_ids, const PseudoTerm& term, int epochs,
                    std::uint64_t shuffle_seed);

/// Supervised training on ground truth only.
FitResult train_supervised(const std::vector<Sample>& labeled, TinyModel model_init, const TrainSpec& spec,
                           std::uint64_t shuffle_seed);

/// Stage 1: fit all pseudo-labels at standard granularity. `epochs` is the
/// caller's resolved count (full, or reduced in speed-up mode).
FitResult pseudo_pretrain(const std::vector<Sample>& unlabeled, const PseudoStore& pseudo, TinyModel init,
                          const TrainSpec& spec, int epochs, std::uint64_t shuffle_seed);

/// Epoch count for stage 1 of round t.
int pretrain_epochs(const StageConfig& stage, int t);

/// Stage 2 of round t: labeled at standard granularity plus lambda(t)-weighted
/// shrink regression on all pseudo-labels at granularity_at(t); at t = 1 the
/// pseudo term is absent.
FitResult mixed_train(TinyModel theta_pre, const std::vector<Sample>& labeled,
                      const std::vector<Sample>& unlabeled, const PseudoStore& pseudo, int t, int T,
                      const Curriculum& curriculum, const TrainSpec& spec, std::uint64_t shuffle_seed);

struct SelectionRule {
  enum class Kind { Threshold, TopPercentile };
  Kind kind = Kind::Threshold;
  double value = 0.0;  // tau in [0, 1], or percentile in [0, 100]

  static SelectionRule threshold(double tau) { return {Kind::Threshold, tau}; }
  static SelectionRule top_percentile(double q) { return {Kind::TopPercentile, q}; }
};

/// Ids of confidently pseudo-labeled samples (ascending). Requires
/// confidences, which only the heatmap pathway produces.
std::vector<int> select_confident(const PseudoStore& pseudo, const SelectionRule& rule);

/// Runs a model over samples and returns coordinates (and per-landmark
/// confidences on the heatmap pathway).
PredictionMap estimate(const TinyModel& model, const std::vector<Sample>& samples);
std::vector<LandmarkSet> predict_points(const TinyModel& model, const std::vector<Sample>& samples);

struct Strategy {
  enum class Kind { SupervisedOnly, Naive, Threshold, Percentile, LinearWarmup, Stld };
  Kind kind = Kind::Stld;
  double tau = 0.4;
  std::vector<double> percentile_steps{20, 40, 60, 80, 100};
  bool pseudo_pretrain = true;
  bool shrink = true;
  ConfidenceAggregate aggregate = ConfidenceAggregate::Mean;

  void validate(Pathway pathway) const;
  bool uses_confidence() const { return kind == Kind::Threshold || kind == Kind::Percentile; }
  std::string name() const;

  static Strategy supervised_only() { return {Kind::SupervisedOnly}; }
  static Strategy naive() { return {Kind::Naive}; }
  static Strategy threshold(double tau) {
    Strategy s{Kind::Threshold};
    s.tau = tau;
    return s;
  }
  static Strategy percentile(std::vector<double> steps) {
    Strategy s{Kind::Percentile};
    s.percentile_steps = std::move(steps);
    return s;
  }
  static Strategy linear_warmup() { return {Kind::LinearWarmup}; }
  static Strategy stld(bool pp = true, bool shrink = true) {
    Strategy s{Kind::Stld};
    s.pseudo_pretrain = pp;
    s.shrink = shrink;
    return s;
  }
};

std::string to_string(Strategy::Kind k);
Strategy::Kind strategy_kind_from_string(const std::string& s);

/// Percentile used by the percentile curriculum at round t of T. The step
/// list is right-aligned so the last round uses the last step.
double percentile_at(const std::vector<double>& steps, int t, int T);

struct RoundLog {
  int round = 0;
  std::optional<double> stage1_loss;
  std::optional<double> stage2_loss;
  std::optional<double> pseudo_noise_mean;
  std::optional<double> pseudo_noise_median;
  std::optional<long> selected;
  double test_nme = 0.0;
  double test_auc = 0.0;
  double test_fr = 0.0;
  std::optional<double> granularity;  // sigma_t or p_t on pseudo-labels
  std::optional<double> lambda;
  double seconds = 0.0;

  /// Field-wise equality ignoring wall time.
  bool same_outcome(const RoundLog& o) const;
};

struct RunSettings {
  TrainSpec spec;
  Curriculum curriculum = Curriculum::heatmap_default();
  int rounds = 4;
  std::uint64_t seed = 0;
  Normalizer normalizer = Normalizer::interlandmark(0, 1);
  double auc_cutoff = 0.10;
};

struct RunResult {
  std::vector<RoundLog> logs;
  /// pseudo_history[0] is the warm-start estimate; entry t the estimate after round t.
  std::vector<PseudoStore> pseudo_history;
  TinyModel warm_start;
  TinyModel final_model;
};

/// Full round loop for a strategy. Deterministic for fixed dataset, settings
/// and seed.
RunResult run_strategy(const Dataset& data, const Strategy& strategy, const RunSettings& settings);

// Seed derivation shared by the strategies so that equivalent configurations
// replay the same random streams.
std::uint64_t init_seed(std::uint64_t seed, int round);
std::uint64_t shuffle_seed(std::uint64_t seed, int round, int stage);

/// Mean and median pseudo-label error in pixels against hidden ground truth.
/// Measurement only; must not be called inside a TrainingScope.
std::pair<double, double> pseudo_noise(const PseudoStore& pseudo, const std::vector<Sample>& unlabeled);

}  // namespace stld
