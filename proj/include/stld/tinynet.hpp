#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stld/common.hpp"
#include "stld/losses.hpp"

namespace stld {

enum class Activation { Identity, Relu, Sigmoid };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation act = Activation::Identity;
};

struct ModelDims {
  int grid = 32;  // input is grid x grid; heatmaps are grid x grid as well
  int landmarks = 5;
  int hidden = 64;
  bool operator==(const ModelDims&) const = default;
};

/// Small MLP detector.
///   heatmap:    G^2 -> h (ReLU) -> N*G*G (linear), output is a HeatmapStack
///   coordinate: G^2 -> h (ReLU) -> h (ReLU) -> 2N (sigmoid), output is
///               (x0, y0, x1, y1, ...) normalized by the grid size
struct TinyModel {
  Pathway pathway = Pathway::Heatmap;
  ModelDims dims;
  std::vector<Layer> layers;
  /// Bumped by every optimizer step; forward caches record it.
  std::uint64_t version = 0;
  /// Number of optimizer steps applied.
  std::uint64_t step = 0;

  Index input_size() const { return static_cast<Index>(dims.grid) * dims.grid; }
  Index output_size() const;
  Index parameter_count() const;
  bool all_finite() const;
  /// All parameters concatenated (weights row-major, then bias, per layer).
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::Ref<const Eigen::VectorXd>& p);
};

TinyModel init_model(Pathway pathway, const ModelDims& dims, std::uint64_t seed);

struct ForwardCache {
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer, in x batch
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  Eigen::MatrixXd output;               // out x batch
};

/// Columns of `x` are flattened rasters (row-major).
ForwardCache forward(const TinyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Inference-only forward without keeping activations.
Eigen::MatrixXd predict(const TinyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x);

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static Gradients zeros_like(const TinyModel& model);
  bool all_finite() const;
  Eigen::VectorXd flat() const;
};

/// Reverse-mode gradients of sum(grad_out .* output) w.r.t. all parameters.
Gradients backward(const TinyModel& model, const ForwardCache& cache,
                   const Eigen::Ref<const Eigen::MatrixXd>& grad_out);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  Gradients m;
  Gradients v;

  static AdamState for_model(const TinyModel& model, double lr = 1e-3);
};

/// One bias-corrected Adam update, in place. Rejects non-finite gradients.
void adam_step(AdamState& state, TinyModel& model, const Gradients& grads);

// Checkpoints: one JSON header line, then the flat parameter block as
// little-endian float64.
void save_checkpoint(const TinyModel& model, const std::filesystem::path& path);
TinyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace stld
