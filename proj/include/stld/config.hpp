#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stld/metrics.hpp"
#include "stld/selftrain.hpp"
#include "stld/synth.hpp"

namespace stld {

inline constexpr int kSchemaVersion = 1;

/// Everything needed to reproduce a run. Persisted fully resolved (every
/// default expanded) as config.json inside the run directory.
struct ExperimentConfig {
  TaskConfig task;
  int n_train = 1000;
  int n_test = 300;
  std::uint64_t data_seed = 11;
  /// Optional directory written by gen-data; empty means generate in memory.
  std::string dataset_dir;

  double labeled_ratio = 0.05;
  /// The split for run seed s uses split_seed + s.
  std::uint64_t split_seed = 100;
  double bias_knob = 0.0;

  Pathway pathway = Pathway::Heatmap;
  int hidden = 64;
  StageConfig stage;
  Strategy strategy;
  Curriculum curriculum = Curriculum::heatmap_default();
  int rounds = 4;
  std::vector<std::uint64_t> seeds{0};

  Normalizer normalizer = Normalizer::interlandmark(0, 1);
  double auc_cutoff = 0.10;
  std::string output = "runs";

  /// Checks every precondition the run will hit, naming the offending field.
  void validate() const;

  TrainSpec train_spec() const;
  RunSettings run_settings(std::uint64_t seed) const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
/// Missing fields take defaults (curriculum defaults follow the pathway).
/// Unknown fields and type errors raise ValidationError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::ordered_json task_to_json(const TaskConfig& task);
TaskConfig task_from_json(const nlohmann::json& j);

/// Sets a dotted key ("strategy.tau") in a config document. The value is
/// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);

/// Short hash of the resolved config (which includes the seed list).
std::string run_id(const ExperimentConfig& cfg);

}  // namespace stld
