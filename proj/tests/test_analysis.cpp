#include <gtest/gtest.h>

#include <cmath>

#include "stld/analysis.hpp"

using namespace stld;

namespace {

PseudoStore store_from(const std::map<int, LandmarkSet>& pts) {
  std::map<int, PseudoLabel> m;
  for (const auto& [id, p] : pts) m[id].points = p;
  return make_pseudo_store(std::move(m));
}

DensityMap four_bin(std::initializer_list<double> v) {
  DensityMap d;
  d.bins = 2;
  Eigen::MatrixXd m(2, 2);
  auto it = v.begin();
  for (Index i = 0; i < 4; ++i) m.data()[i] = *it++;
  d.maps.push_back(m);
  return d;
}

}  // namespace

TEST(DensityMap, SinglePointBin) {
  LandmarkSet p(1, 2);
  p << 128, 128;
  const DensityMap d = density_map(std::span(&p, 1));
  EXPECT_NEAR(d.maps[0](6, 6), 1.0, 1e-3);
  EXPECT_NEAR(d.maps[0].sum(), 1.0, 1e-12);
  Index r, c;
  d.maps[0].maxCoeff(&r, &c);
  EXPECT_EQ(r, 6);
  EXPECT_EQ(c, 6);
}

TEST(DensityMap, BoundaryClamped) {
  LandmarkSet p(1, 2);
  p << 256, 0;
  const DensityMap d = density_map(std::span(&p, 1));
  Index r, c;
  d.maps[0].maxCoeff(&r, &c);
  EXPECT_EQ(r, 0);
  EXPECT_EQ(c, 11);
  EXPECT_THROW(density_map(std::vector<LandmarkSet>{}), ValidationError);
}

TEST(DensityMap, UniformLawOfLargeNumbers) {
  Rng rng = make_rng(12);
  auto ratio = [&](int n) {
    std::vector<LandmarkSet> sets(static_cast<std::size_t>(n), LandmarkSet(1, 2));
    for (auto& s : sets) s << uniform(rng, 0.0, 256.0), uniform(rng, 0.0, 256.0);
    const DensityMap d = density_map(sets);
    return d.maps[0].maxCoeff() / d.maps[0].minCoeff();
  };
  const double r3 = ratio(1000), r4 = ratio(10000), r6 = ratio(1000000);
  EXPECT_GT(r3, r4);
  EXPECT_GT(r4, r6);
  EXPECT_LT(r6, 1.2);
}

// Jittered-stratified uniform coordinates: each point is uniform inside its
// own cell of a 250 x 400 lattice covering the extent.
TEST(DensityMap, StratifiedUniformAtOneHundredThousand) {
  Rng rng = make_rng(13);
  std::vector<LandmarkSet> sets;
  sets.reserve(100000);
  for (int i = 0; i < 250; ++i)
    for (int j = 0; j < 400; ++j) {
      LandmarkSet s(1, 2);
      s << (j + uniform(rng)) * 256.0 / 400, (i + uniform(rng)) * 256.0 / 250;
      sets.push_back(s);
    }
  const DensityMap d = density_map(sets);
  EXPECT_LT(d.maps[0].maxCoeff() / d.maps[0].minCoeff(), 1.2);
}

TEST(KlDivergence, ClosedForm) {
  const auto a = four_bin({0.25, 0.25, 0.25, 0.25});
  const auto o = four_bin({0.7, 0.1, 0.1, 0.1});
  const double expect = 0.25 * std::log(0.25 / 0.7) + 0.75 * std::log(0.25 / 0.1);
  EXPECT_NEAR(kl_divergence(a, o).mean, expect, 1e-12);
  EXPECT_NEAR(kl_divergence(a, o).mean, 0.4298, 1e-4);
  EXPECT_EQ(kl_divergence(a, a).mean, 0.0);
}

TEST(KlDivergence, NonNegativeOnRandomPairs) {
  Rng rng = make_rng(3);
  for (int i = 0; i < 1000; ++i) {
    std::vector<LandmarkSet> x(5, LandmarkSet(2, 2)), y(7, LandmarkSet(2, 2));
    for (auto& s : x)
      for (Index j = 0; j < 4; ++j) s.data()[j] = uniform(rng, 0.0, 32.0);
    for (auto& s : y)
      for (Index j = 0; j < 4; ++j) s.data()[j] = uniform(rng, 0.0, 32.0);
    const auto r = kl_divergence(density_map(x, 4, 32.0), density_map(y, 4, 32.0));
    EXPECT_GE(r.per_landmark.minCoeff(), 0.0);
  }
}

TEST(KlDivergence, ShapeMismatchRejected) {
  LandmarkSet p = LandmarkSet::Zero(2, 2);
  EXPECT_THROW(kl_divergence(density_map(std::span(&p, 1), 4), density_map(std::span(&p, 1), 5)),
               ValidationError);
}

TEST(NoiseHistogram, CentralAndShifted) {
  std::map<int, LandmarkSet> gt;
  for (int i = 0; i < 10; ++i) gt[i] = LandmarkSet::Constant(5, 2, 10.0 + i);
  const auto h0 = noise_histogram(store_from(gt), gt, 3.0, 7);
  EXPECT_EQ(h0.counts(3, 3), 50.0);
  EXPECT_EQ(h0.counts.sum(), 50.0);
  std::map<int, LandmarkSet> shifted = gt;
  for (auto& [id, p] : shifted) p.col(0).array() += 3.0 - 1e-9;
  const auto h1 = noise_histogram(store_from(shifted), gt, 3.0, 6);
  EXPECT_EQ(h1.counts(3, 5), 50.0);
  for (auto& [id, p] : shifted) p.col(0).array() += 1.0;
  const auto h2 = noise_histogram(store_from(shifted), gt, 3.0, 6);
  EXPECT_EQ(h2.overflow, 50);
  EXPECT_EQ(h2.total, 50);
}

TEST(NoiseHistogram, IsotropicNoiseSymmetric) {
  Rng rng = make_rng(44);
  std::map<int, LandmarkSet> gt, pseudo;
  for (int i = 0; i < 2000; ++i) {
    gt[i] = LandmarkSet::Constant(5, 2, 16.0);
    LandmarkSet p = gt[i];
    for (Index j = 0; j < p.size(); ++j) p.data()[j] += gaussian(rng);
    pseudo[i] = p;
  }
  const auto h = noise_histogram(store_from(pseudo), gt, 3.0, 8);
  const Eigen::VectorXd rows = h.counts.rowwise().sum(), cols = h.counts.colwise().sum().transpose();
  // Mirror-bin chi-square for each marginal: 4 pairs, 4 dof; 99.9% quantile 18.47.
  for (const Eigen::VectorXd& m : {rows, cols}) {
    double chi2 = 0.0;
    for (Index b = 0; b < 4; ++b) {
      const double a = m(b), c = m(7 - b);
      chi2 += (a - c) * (a - c) / (a + c);
    }
    EXPECT_LT(chi2, 18.47);
  }
  double chi2 = 0.0;
  for (Index b = 0; b < 8; ++b) chi2 += (rows(b) - cols(b)) * (rows(b) - cols(b)) / (rows(b) + cols(b));
  EXPECT_LT(chi2, 26.12);
}

TEST(QuantileGroups, EqualCounts) {
  std::vector<double> k{5, 1, 4, 2, 3, 0, 9};
  const auto g = quantile_groups(k, 3);
  std::vector<int> count(3, 0);
  for (int v : g) ++count[v];
  EXPECT_LE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
  EXPECT_EQ(g[5], 0);
  EXPECT_EQ(g[6], 2);
  const auto d = quantile_groups(k, 3, true);
  EXPECT_EQ(d[6], 0);
  EXPECT_EQ(d[5], 2);
}

TEST(ForgettingCurve, Identities) {
  Rng rng = make_rng(8);
  std::map<int, LandmarkSet> gt, pseudo;
  PredictionMap memorized, truth;
  for (int i = 0; i < 60; ++i) {
    gt[i] = LandmarkSet::Constant(3, 2, 10.0);
    LandmarkSet p = gt[i];
    for (Index j = 0; j < p.size(); ++j) p.data()[j] += uniform(rng, -2.0, 2.0) * (1 + i % 5);
    pseudo[i] = p;
    memorized[i] = {p, std::nullopt};
    truth[i] = {gt[i], std::nullopt};
  }
  const PseudoStore used = store_from(pseudo);
  for (const auto& b : forgetting_curve(used, memorized, gt, 6)) EXPECT_EQ(*b.delta_mean, 0.0);
  for (const auto& b : forgetting_curve(used, truth, gt, 6)) EXPECT_NEAR(*b.delta_mean, *b.noise_mean, 1e-12);
  const auto bins = forgetting_curve(used, truth, gt, 6);
  for (std::size_t i = 1; i < bins.size(); ++i) EXPECT_GE(*bins[i].noise_mean, *bins[i - 1].noise_mean);
}

TEST(ForgettingCurve, EmptyBinAbsent) {
  std::map<int, LandmarkSet> gt{{0, LandmarkSet::Zero(2, 2)}, {1, LandmarkSet::Ones(2, 2)}};
  PredictionMap p{{0, {LandmarkSet::Zero(2, 2), std::nullopt}}, {1, {LandmarkSet::Ones(2, 2), std::nullopt}}};
  const auto bins = forgetting_curve(store_from(gt), p, gt, 4);
  long filled = 0;
  for (const auto& b : bins) {
    EXPECT_EQ(b.noise_mean.has_value(), b.count > 0);
    filled += b.count > 0;
  }
  EXPECT_EQ(filled, 2);
}

TEST(Correlation, PearsonSpearman) {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, flat{1, 1, 1, 1};
  EXPECT_NEAR(*pearson(a, b), 1.0, 1e-15);
  EXPECT_NEAR(*pearson(a, c), -1.0, 1e-15);
  EXPECT_FALSE(pearson(a, flat).has_value());
  const std::vector<double> sq{1, 4, 9, 100};
  EXPECT_NEAR(*spearman(a, sq), 1.0, 1e-15);
  const std::vector<double> ties{1, 1, 2, 3};
  EXPECT_NEAR(*spearman(ties, a), 0.9486832980505138, 1e-12);
}

TEST(GradientCorrelation, IdenticalAndOpposedGroups) {
  Rng rng = make_rng(2);
  std::vector<Eigen::VectorXd> g, same, flipped;
  std::vector<double> loss;
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd v(1);
    v(0) = uniform(rng, -1.0, 1.0);
    g.push_back(v);
    same.push_back(v);
    flipped.push_back(-v);
    loss.push_back(uniform(rng));
  }
  for (const auto& grp : grouped_gradient_correlation(g, same, loss, 3)) EXPECT_NEAR(*grp.r, 1.0, 1e-12);
  const auto opp = grouped_gradient_correlation(g, flipped, loss, 3);
  for (const auto& grp : opp) EXPECT_NEAR(*grp.r, -1.0, 1e-12);
  EXPECT_GE(opp[0].loss_mean, opp[1].loss_mean);
  EXPECT_GE(opp[1].loss_mean, opp[2].loss_mean);
}

TEST(GradientCorrelation, ZeroVarianceAbsent) {
  std::vector<Eigen::VectorXd> z(4, Eigen::VectorXd::Zero(3));
  const auto r = grouped_gradient_correlation(z, z, {1, 2, 3, 4}, 2);
  for (const auto& grp : r) EXPECT_FALSE(grp.r.has_value());
}

TEST(GradientCorrelation, ModelGradientsWithGtPseudoLabels) {
  for (Pathway p : {Pathway::Heatmap, Pathway::Coordinate}) {
    const TinyModel m = init_model(p, {8, 2, 6}, 3);
    Rng rng = make_rng(5);
    std::vector<Sample> samples;
    std::vector<LandmarkSet> gts;
    for (int i = 0; i < 12; ++i) {
      Raster img(8, 8);
      for (Index j = 0; j < img.size(); ++j) img.data()[j] = uniform(rng);
      LandmarkSet g(2, 2);
      for (Index j = 0; j < 4; ++j) g.data()[j] = uniform(rng, 1.0, 6.0);
      samples.emplace_back(i, img, g, g);
      gts.push_back(g);
    }
    for (const auto& grp : gradient_correlation({m}, samples, gts, gts, GradientLoss{1.0, 1.5}, 3))
      EXPECT_NEAR(*grp.r, 1.0, 1e-12) << to_string(p);
  }
}

TEST(GradientCorrelation, SnapshotsArePooled) {
  const TinyModel a = init_model(Pathway::Coordinate, {8, 2, 6}, 3);
  const TinyModel b = init_model(Pathway::Coordinate, {8, 2, 6}, 4);
  Rng rng = make_rng(6);
  std::vector<Sample> samples;
  std::vector<LandmarkSet> gts, ps;
  for (int i = 0; i < 10; ++i) {
    Raster img(8, 8);
    for (Index j = 0; j < img.size(); ++j) img.data()[j] = uniform(rng);
    LandmarkSet g(2, 2), q(2, 2);
    for (Index j = 0; j < 4; ++j) {
      g.data()[j] = uniform(rng, 1.0, 6.0);
      q.data()[j] = uniform(rng, 1.0, 6.0);
    }
    samples.emplace_back(i, img, g, g);
    gts.push_back(g);
    ps.push_back(q);
  }
  const GradientLoss loss{1.0, 1.5};
  const auto one = gradient_correlation({a}, samples, gts, ps, loss, 1);
  const auto two = gradient_correlation({a, b}, samples, gts, ps, loss, 1);
  const auto same = gradient_correlation({a, a}, samples, gts, ps, loss, 1);
  EXPECT_EQ(one[0].count, 10);
  EXPECT_EQ(two[0].count, 20);
  EXPECT_NEAR(*same[0].r, *one[0].r, 1e-12);
  EXPECT_NEAR(same[0].loss_mean, one[0].loss_mean, 1e-12);
  EXPECT_THROW(gradient_correlation({}, samples, gts, ps, loss, 1), ValidationError);
  const TinyModel h = init_model(Pathway::Heatmap, {8, 2, 6}, 3);
  EXPECT_THROW(gradient_correlation({a, h}, samples, gts, ps, loss, 1), ValidationError);
}
