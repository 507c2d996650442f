#include "stld/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stld/selftrain.hpp"

namespace stld {

DensityMap density_map(std::span<const LandmarkSet> sets, int bins, double extent, double eps) {
  require(!sets.empty(), "density_map: empty coordinate list");
  require(bins >= 1, "density_map: bins must be >= 1");
  require(extent > 0.0, "density_map: extent must be > 0");
  require(eps >= 0.0, "density_map: eps must be >= 0");
  const Index n = sets.front().rows();
  DensityMap d;
  d.bins = bins;
  d.extent = extent;
  d.maps.assign(static_cast<std::size_t>(n), Eigen::MatrixXd::Zero(bins, bins));
  const double width = extent / bins;
  auto bin_of = [&](double v) {
    require(std::isfinite(v) && v >= 0.0 && v <= extent, "density_map: coordinate outside [0, extent]");
    return std::min(bins - 1, static_cast<int>(std::floor(v / width)));
  };
  for (const auto& s : sets) {
    require(s.rows() == n, "density_map: landmark count mismatch");
    for (Index k = 0; k < n; ++k) d.maps[static_cast<std::size_t>(k)](bin_of(s(k, 1)), bin_of(s(k, 0))) += 1.0;
  }
  for (auto& m : d.maps) {
    m.array() += eps;
    m /= m.sum();
  }
  return d;
}

KlResult kl_divergence(const DensityMap& anchor, const DensityMap& other) {
  require(anchor.maps.size() == other.maps.size() && anchor.bins == other.bins,
          "kl_divergence: density maps have different shapes");
  require(!anchor.maps.empty(), "kl_divergence: empty density map");
  KlResult r;
  r.per_landmark.resize(static_cast<Index>(anchor.maps.size()));
  for (std::size_t k = 0; k < anchor.maps.size(); ++k) {
    const auto& a = anchor.maps[k].array();
    const auto& o = other.maps[k].array();
    double kl = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
      const double ai = a(i), oi = o(i);
      if (ai > 0.0) {
        require(oi > 0.0, "kl_divergence: other map has zero mass where the anchor does not (smooth first)");
        kl += ai * std::log(ai / oi);
      }
    }
    r.per_landmark(static_cast<Index>(k)) = kl;
  }
  r.mean = r.per_landmark.mean();
  return r;
}

NoiseHistogram noise_histogram(const PseudoStore& pseudo, const std::map<int, LandmarkSet>& hidden_gts,
                               double range_px, int bins) {
  require(range_px > 0.0, "noise_histogram: range must be > 0");
  require(bins >= 1, "noise_histogram: bins must be >= 1");
  NoiseHistogram h;
  h.range = range_px;
  h.bins = bins;
  h.counts = Eigen::MatrixXd::Zero(bins, bins);
  const double width = 2.0 * range_px / bins;
  auto bin_of = [&](double v) { return std::min(bins - 1, static_cast<int>(std::floor((v + range_px) / width))); };
  for (const auto& [id, label] : pseudo.entries()) {
    const auto it = hidden_gts.find(id);
    require(it != hidden_gts.end(), "noise_histogram: no ground truth for id " + std::to_string(id));
    const LandmarkSet off = label.points - it->second;
    for (Index k = 0; k < off.rows(); ++k) {
      ++h.total;
      const double dx = off(k, 0), dy = off(k, 1);
      if (std::abs(dx) > range_px || std::abs(dy) > range_px) {
        ++h.overflow;
        continue;
      }
      h.counts(bin_of(dy), bin_of(dx)) += 1.0;
    }
  }
  return h;
}

std::vector<int> quantile_groups(const std::vector<double>& key, int groups, bool descending) {
  require(groups >= 1, "quantile_groups: groups must be >= 1");
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? key[a] > key[b] : key[a] < key[b];
  });
  std::vector<int> out(key.size());
  const std::size_t n = key.size(), g = static_cast<std::size_t>(groups);
  for (std::size_t rank = 0; rank < n; ++rank) out[order[rank]] = static_cast<int>(rank * g / n);
  return out;
}

std::vector<ForgettingBin> forgetting_curve(const PseudoStore& pseudo_used, const PredictionMap& preds_after,
                                            const std::map<int, LandmarkSet>& hidden_gts, int noise_bins) {
  require(noise_bins >= 1, "forgetting_curve: noise_bins must be >= 1");
  std::vector<double> noise, delta;
  for (const auto& [id, label] : pseudo_used.entries()) {
    const auto gt = hidden_gts.find(id);
    const auto pred = preds_after.find(id);
    require(gt != hidden_gts.end(), "forgetting_curve: no ground truth for id " + std::to_string(id));
    require(pred != preds_after.end(), "forgetting_curve: no prediction for id " + std::to_string(id));
    noise.push_back((label.points - gt->second).rowwise().norm().mean());
    delta.push_back((pred->second.points - label.points).rowwise().norm().mean());
  }
  const std::vector<int> group = quantile_groups(noise, noise_bins);
  std::vector<ForgettingBin> out(static_cast<std::size_t>(noise_bins));
  std::vector<double> nsum(out.size(), 0.0), dsum(out.size(), 0.0);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const auto g = static_cast<std::size_t>(group[i]);
    ++out[g].count;
    nsum[g] += noise[i];
    dsum[g] += delta[i];
  }
  for (std::size_t g = 0; g < out.size(); ++g)
    if (out[g].count > 0) {
      out[g].noise_mean = nsum[g] / static_cast<double>(out[g].count);
      out[g].delta_mean = dsum[g] / static_cast<double>(out[g].count);
    }
  return out;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  return rank;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "spearman: length mismatch");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  return pearson(ra, rb);
}

std::vector<GradientGroup> grouped_gradient_correlation(const std::vector<Eigen::VectorXd>& gt_grads,
                                                        const std::vector<Eigen::VectorXd>& pseudo_grads,
                                                        const std::vector<double>& losses, int groups) {
  require(gt_grads.size() == pseudo_grads.size() && gt_grads.size() == losses.size(),
          "gradient_correlation: gradient pairs and losses must have equal counts");
  const std::vector<int> group = quantile_groups(losses, groups, true);
  std::vector<GradientGroup> out(static_cast<std::size_t>(groups));
  std::vector<std::vector<double>> ga(out.size()), gb(out.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    require(gt_grads[i].size() == pseudo_grads[i].size(), "gradient_correlation: gradient length mismatch");
    const auto g = static_cast<std::size_t>(group[i]);
    ++out[g].count;
    out[g].loss_mean += losses[i];
    ga[g].insert(ga[g].end(), gt_grads[i].data(), gt_grads[i].data() + gt_grads[i].size());
    gb[g].insert(gb[g].end(), pseudo_grads[i].data(), pseudo_grads[i].data() + pseudo_grads[i].size());
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    if (out[g].count == 0) continue;
    out[g].loss_mean /= static_cast<double>(out[g].count);
    out[g].r = pearson(ga[g], gb[g]);
  }
  return out;
}

std::vector<GradientGroup> gradient_correlation(const std::vector<TinyModel>& snapshots,
                                                const std::vector<Sample>& samples,
                                                const std::vector<LandmarkSet>& gt_targets,
                                                const std::vector<LandmarkSet>& pseudo_targets,
                                                const GradientLoss& loss, int groups) {
  require(samples.size() == gt_targets.size() && samples.size() == pseudo_targets.size(),
          "gradient_correlation: samples and targets must have equal counts");
  require(!snapshots.empty(), "gradient_correlation: no model snapshots");
  for (const auto& m : snapshots)
    require(m.pathway == snapshots[0].pathway && m.dims == snapshots[0].dims,
            "gradient_correlation: snapshots must share pathway and dims");
  TrainSpec spec;
  spec.pathway = snapshots[0].pathway;
  spec.dims = snapshots[0].dims;
  spec.sigma_std = loss.sigma;
  const double gran = spec.pathway == Pathway::Heatmap ? loss.sigma : loss.p;

  // Per-sample batches, so each gradient pair comes from identical input.
  auto last_layer_grad = [&](const TinyModel& model, const ForwardCache& cache, const Eigen::VectorXd& target, double* loss_out) {
    Eigen::VectorXd g;
    if (spec.pathway == Pathway::Heatmap) {
      const Eigen::VectorXd diff = cache.output.col(0) - target;
      const double cells = static_cast<double>(diff.size());
      *loss_out = 0.5 * diff.squaredNorm() / cells;
      g = diff / cells;
    } else {
      const LossGrad lg = lp_loss(cache.output.col(0), target, gran);
      *loss_out = lg.loss;
      g = lg.grad;
    }
    const Gradients grads = backward(model, cache, g);
    const Eigen::MatrixXd& w = grads.weight.back();
    Eigen::VectorXd flat(w.size() + grads.bias.back().size());
    Index i = 0;
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) flat(i++) = w(r, c);
    flat.tail(grads.bias.back().size()) = grads.bias.back();
    return flat;
  };

  std::vector<Eigen::VectorXd> ga, gb;
  std::vector<double> losses;
  for (const auto& model : snapshots)
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const ForwardCache cache = forward(model, flat(samples[s].image));
      double lgt = 0.0, lps = 0.0;
      ga.push_back(last_layer_grad(model, cache, target_vector(spec, gt_targets[s], gran), &lgt));
      gb.push_back(last_layer_grad(model, cache, target_vector(spec, pseudo_targets[s], gran), &lps));
      losses.push_back(lps);
    }
  return grouped_gradient_correlation(ga, gb, losses, groups);
}

}  // namespace stld
