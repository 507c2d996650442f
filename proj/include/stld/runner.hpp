#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stld/config.hpp"

namespace stld {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Training and test samples for a config, generated in memory or loaded from
/// config.dataset_dir.
struct TaskSamples {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

TaskSamples build_samples(const ExperimentConfig& cfg);
/// Split for one run seed (split seed = cfg.split_seed + seed).
Dataset build_dataset(const ExperimentConfig& cfg, const TaskSamples& samples, std::uint64_t seed);

struct RunOutcome {
  std::filesystem::path dir;
  std::string run_id;
  bool degenerate_curriculum = false;
  double nme_mean = 0.0;
  double nme_std = 0.0;
};

/// Runs every seed of the config (up to `jobs` at a time) and writes
///   <output>/<run_id>/config.json        resolved config
///   <output>/<run_id>/status.json        code version, strategy, flags
///   <output>/<run_id>/seed_<s>/rounds.csv
///   <output>/<run_id>/seed_<s>/split.csv
///   <output>/<run_id>/seed_<s>/pseudo_r<t>.csv   t = 0 (warm start) .. T
///   <output>/<run_id>/seed_<s>/warm.ckpt, final.ckpt
///   <output>/<run_id>/summary.csv        mean and std of final test metrics
///   <output>/<run_id>/timing.csv         wall time, excluded from checksums
///   <output>/<run_id>/checksums.txt
RunOutcome run_experiment(const ExperimentConfig& cfg, int jobs = 1, std::ostream* log = nullptr);

struct SweepRow {
  double value = 0.0;
  std::string status;  // "ok", "degenerate curriculum", or "skipped: <reason>"
  std::string run_id;
  std::optional<double> nme_mean;
  std::optional<double> nme_std;
};

/// One full run per value. axis: threshold (strategy.tau), sigma2 (heatmap
/// curriculum) or p2 (coordinate curriculum); the middle curriculum value is
/// set to the midpoint of the swept value and the terminal value.
std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<double>& values,
                            int jobs = 1, std::ostream* log = nullptr,
                            std::optional<std::filesystem::path>* table_path = nullptr);

/// Config for one sweep point; throws ValidationError for an invalid value.
ExperimentConfig sweep_point(const ExperimentConfig& base, const std::string& axis, double value);

struct AnalysisOptions {
  int bins = 12;            // density_kl bins; histogram bins
  double range_px = 3.0;    // histogram range
  int groups = 6;           // forgetting / correlation quantile groups
  double tau = 0.4;         // density_kl confident_pseudo threshold
  bool reverse_kl = false;  // KL(group || anchor) instead of KL(anchor || group)
  std::optional<std::filesystem::path> compare;  // forgetting comparator run
};

inline const std::vector<std::string>& analysis_kinds() {
  static const std::vector<std::string> k{"density_kl", "histogram", "forgetting", "correlation"};
  return k;
}
inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> k{"rounds", "ablation", "histogram", "forgetting", "correlation", "density_kl"};
  return k;
}

/// Writes <run_id>.<kind>.csv and <run_id>.<kind>.json into the run directory.
/// Reads logged artifacts only; never trains.
std::filesystem::path analyze(const std::filesystem::path& run_dir, const std::string& kind,
                              const AnalysisOptions& opt = {});

/// Long-format plot data (series,x,y). `ablation` accepts several run
/// directories; every other kind uses the first.
std::filesystem::path emit_plot_data(const std::vector<std::filesystem::path>& run_dirs, const std::string& kind,
                                     const std::filesystem::path& out_path);

struct VerifyReport {
  long checked = 0;
  std::vector<std::string> mismatched;
  std::vector<std::string> missing;
  bool ok() const { return mismatched.empty() && missing.empty(); }
};

/// Recomputes checksums.txt. With rerun, also re-executes the resolved config
/// into a scratch directory and compares every checksummed artifact.
VerifyReport verify(const std::filesystem::path& run_dir, bool rerun = false, int jobs = 1);

/// Parsed rounds.csv row (absent fields are empty optionals).
struct RoundRow {
  std::uint64_t seed = 0;
  int round = 0;
  std::optional<double> pseudo_noise_mean;
  double test_nme = 0.0;
  double test_auc = 0.0;
  double test_fr = 0.0;
};
std::vector<RoundRow> read_rounds(const std::filesystem::path& run_dir);

}  // namespace stld
