#include "stld/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace stld {

namespace {

void check_pairs(std::span<const LandmarkSet> a, std::span<const LandmarkSet> b, const char* who) {
  require(a.size() == b.size(), std::string(who) + ": prediction/ground-truth count mismatch");
  for (std::size_t s = 0; s < a.size(); ++s)
    require(a[s].rows() == b[s].rows(), std::string(who) + ": landmark count mismatch at sample " + std::to_string(s));
}

}  // namespace

Eigen::VectorXd mean_point_error(std::span<const LandmarkSet> a, std::span<const LandmarkSet> b) {
  check_pairs(a, b, "mean_point_error");
  Eigen::VectorXd out(static_cast<Index>(a.size()));
  for (std::size_t s = 0; s < a.size(); ++s)
    out(static_cast<Index>(s)) = (a[s] - b[s]).rowwise().norm().mean();
  return out;
}

NmeResult nme(std::span<const LandmarkSet> preds, std::span<const LandmarkSet> gts, const Normalizer& norm) {
  check_pairs(preds, gts, "nme");
  require(!preds.empty(), "nme: empty input");
  NmeResult r;
  r.per_sample.resize(static_cast<Index>(preds.size()));
  for (std::size_t s = 0; s < preds.size(); ++s) {
    double d = 0.0;
    if (norm.kind == Normalizer::Kind::InterLandmark) {
      require(norm.i >= 0 && norm.j >= 0 && norm.i < gts[s].rows() && norm.j < gts[s].rows(),
              "nme: normalizer landmark index out of range");
      d = (gts[s].row(norm.i) - gts[s].row(norm.j)).norm();
      if (!(d > 0.0))
        throw ValidationError("nme: sample " + std::to_string(s) + " has coincident normalizer landmarks " +
                              std::to_string(norm.i) + " and " + std::to_string(norm.j));
    } else {
      d = norm.image_size;
      require(d > 0.0, "nme: image size normalizer must be > 0");
    }
    r.per_sample(static_cast<Index>(s)) = (preds[s] - gts[s]).rowwise().norm().mean() / d;
  }
  r.mean = r.per_sample.mean();
  return r;
}

AucFr auc_fr(std::span<const double> nmes, double cutoff) {
  require(!nmes.empty(), "auc_fr: empty input");
  require(cutoff > 0.0, "auc_fr: cutoff must be > 0");
  std::vector<double> e(nmes.begin(), nmes.end());
  for (double v : e) require(v >= 0.0 && std::isfinite(v), "auc_fr: NMEs must be finite and nonnegative");
  std::sort(e.begin(), e.end());
  const double n = static_cast<double>(e.size());

  AucFr r;
  r.fr = static_cast<double>(std::count_if(e.begin(), e.end(), [&](double v) { return v > cutoff; })) / n;

  // Trapezoids over the staircase vertices (x, F): the jumps at each sorted
  // error are vertical and contribute nothing, so only flat runs add area.
  double area = 0.0, x_prev = 0.0, f_prev = 0.0;
  std::size_t i = 0;
  while (i < e.size() && e[i] <= cutoff) {
    const double x = e[i];
    area += f_prev * (x - x_prev);
    std::size_t j = i;
    while (j < e.size() && e[j] == x) ++j;
    f_prev = static_cast<double>(j) / n;
    x_prev = x;
    i = j;
  }
  area += f_prev * (cutoff - x_prev);
  r.auc = area / cutoff;
  return r;
}

double mre(std::span<const LandmarkSet> preds, std::span<const LandmarkSet> gts, double units_per_px) {
  require(units_per_px > 0.0, "mre: units_per_px must be > 0");
  check_pairs(preds, gts, "mre");
  require(!preds.empty(), "mre: empty input");
  double sum = 0.0;
  Index count = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    sum += (preds[s] - gts[s]).rowwise().norm().sum();
    count += preds[s].rows();
  }
  return units_per_px * sum / static_cast<double>(count);
}

}  // namespace stld
