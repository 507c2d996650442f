#include <gtest/gtest.h>

#include "stld/metrics.hpp"

using namespace stld;

namespace {

LandmarkSet random_set(Rng& rng, int n = 5, double extent = 100.0) {
  LandmarkSet p(n, 2);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = uniform(rng, 0.0, extent);
  return p;
}

// CED integrated on a fine midpoint grid.
double ced_oracle(const std::vector<double>& e, double cutoff) {
  const int steps = 2'000'000;
  const double dx = cutoff / steps;
  std::vector<double> s = e;
  std::sort(s.begin(), s.end());
  double area = 0.0;
  std::size_t below = 0;
  for (int i = 0; i < steps; ++i) {
    const double x = (i + 0.5) * dx;
    while (below < s.size() && s[below] <= x) ++below;
    area += static_cast<double>(below) / s.size() * dx;
  }
  return area / cutoff;
}

}  // namespace

TEST(Nme, Examples) {
  LandmarkSet gt(3, 2);
  gt << 0, 0, 100, 0, 50, 50;
  LandmarkSet pred = gt;
  EXPECT_EQ(nme(std::span(&pred, 1), std::span(&gt, 1), Normalizer::interlandmark(0, 1)).mean, 0.0);
  pred.col(0).array() += 3.0;
  pred.col(1).array() += 4.0;
  EXPECT_NEAR(nme(std::span(&pred, 1), std::span(&gt, 1), Normalizer::interlandmark(0, 1)).mean, 0.05, 1e-15);
  EXPECT_NEAR(nme(std::span(&pred, 1), std::span(&gt, 1), Normalizer::image(50)).mean, 0.1, 1e-15);
}

TEST(Nme, Invariances) {
  Rng rng = make_rng(1);
  std::vector<LandmarkSet> p, g;
  for (int i = 0; i < 20; ++i) {
    p.push_back(random_set(rng));
    g.push_back(random_set(rng));
  }
  const auto norm = Normalizer::interlandmark(0, 1);
  const NmeResult base = nme(p, g, norm);
  std::vector<LandmarkSet> p2, g2, p3, g3;
  for (int i = 0; i < 20; ++i) {
    p2.push_back(p[i] * 2.0);
    g2.push_back(g[i] * 2.0);
    p3.push_back(p[i].rowwise() + Eigen::RowVector2d(7.5, -3.0));
    g3.push_back(g[i].rowwise() + Eigen::RowVector2d(7.5, -3.0));
  }
  EXPECT_TRUE(nme(p2, g2, norm).per_sample.isApprox(base.per_sample, 1e-12));
  EXPECT_TRUE(nme(p3, g3, norm).per_sample.isApprox(base.per_sample, 1e-12));
}

TEST(Nme, CoincidentNormalizerRejected) {
  LandmarkSet gt(2, 2);
  gt << 4, 4, 4, 4;
  try {
    nme(std::span(&gt, 1), std::span(&gt, 1), Normalizer::interlandmark(0, 1));
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("coincident"), std::string::npos);
  }
}

TEST(AucFr, Examples) {
  const std::vector<double> zeros(7, 0.0);
  EXPECT_EQ(auc_fr(zeros).auc, 1.0);
  EXPECT_EQ(auc_fr(zeros).fr, 0.0);
  const std::vector<double> bad{0.11, 0.5, 0.2};
  EXPECT_EQ(auc_fr(bad).auc, 0.0);
  EXPECT_EQ(auc_fr(bad).fr, 1.0);
  const std::vector<double> two{0.05, 0.15};
  const AucFr r = auc_fr(two);
  EXPECT_EQ(r.fr, 0.5);
  EXPECT_NEAR(r.auc, 0.25, 1e-15);
  EXPECT_NEAR(r.auc, ced_oracle(two, 0.1), 1e-6);
  EXPECT_THROW(auc_fr(std::vector<double>{}), ValidationError);
  EXPECT_THROW(auc_fr(std::vector<double>{-0.1}), ValidationError);
}

TEST(AucFr, MatchesFineGridOracle) {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> e(150);
    for (auto& v : e) v = uniform(rng, 0.0, 0.14);
    e[3] = e[4];
    e[7] = 0.1;
    const AucFr r = auc_fr(e, 0.1);
    EXPECT_NEAR(r.auc, ced_oracle(e, 0.1), 1e-6);
    EXPECT_GE(r.auc, 0.0);
    EXPECT_LE(r.auc, 1.0);
  }
}

TEST(AucFr, FrNonIncreasingInCutoff) {
  Rng rng = make_rng(4);
  std::vector<double> e(100);
  for (auto& v : e) v = uniform(rng, 0.0, 0.2);
  double prev = 1.0;
  for (double c = 0.01; c <= 0.25; c += 0.01) {
    const double fr = auc_fr(e, c).fr;
    EXPECT_LE(fr, prev);
    prev = fr;
  }
}

TEST(Mre, Examples) {
  LandmarkSet gt(1, 2), pred(1, 2);
  gt << 10, 10;
  pred << 12, 10;
  EXPECT_EQ(mre(std::span(&gt, 1), std::span(&gt, 1), 0.5), 0.0);
  EXPECT_DOUBLE_EQ(mre(std::span(&pred, 1), std::span(&gt, 1), 0.5), 1.0);
  EXPECT_DOUBLE_EQ(mre(std::span(&pred, 1), std::span(&gt, 1), 1.0), 2.0);
  EXPECT_THROW(mre(std::span(&pred, 1), std::span(&gt, 1), 0.0), ValidationError);
}
