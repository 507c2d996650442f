#include <gtest/gtest.h>

#include <cmath>

#include "stld/losses.hpp"

using namespace stld;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST(LpLoss, ClosedForms) {
  const auto t = vec({0.0});
  const auto l1 = lp_loss(vec({0.5}), t, 1.0);
  EXPECT_NEAR(l1.loss, 0.5, 1e-15);
  EXPECT_NEAR(std::abs(l1.grad(0)), 1.0, 1e-15);
  const auto l2 = lp_loss(vec({0.5}), t, 2.0);
  EXPECT_NEAR(l2.loss, 0.125, 1e-15);
  EXPECT_NEAR(std::abs(l2.grad(0)), 0.5, 1e-15);
  EXPECT_NEAR(lp_loss(vec({0.5}), t, 2.4).loss, 0.078943571172416570, 1e-12);
}

TEST(LpLoss, GradWeightIsPowerOfError) {
  Rng rng = make_rng(3);
  for (int i = 0; i < 200; ++i) {
    const double e = uniform(rng, -1.0, 1.0);
    const double p = uniform(rng, 1.0, 3.0);
    const auto g = lp_loss(vec({e}), vec({0.0}), p);
    EXPECT_NEAR(std::abs(g.grad(0)), std::pow(std::abs(e), p - 1.0), 1e-12);
    EXPECT_EQ(g.grad(0) > 0, e > 0);
  }
}

TEST(LpLoss, GradWeightDecreasesInP) {
  for (double e : {0.05, 0.3, 0.9}) {
    double prev = 2.0;
    for (double p = 1.0; p <= 3.0; p += 0.2) {
      const double w = std::abs(lp_loss(vec({e}), vec({0.0}), p).grad(0));
      EXPECT_LT(w, prev);
      prev = w;
    }
  }
}

TEST(LpLoss, MatchesL1AndL2) {
  const auto a = vec({0.1, 0.7, 0.3, 0.95});
  const auto b = vec({0.2, 0.4, 0.3, 0.05});
  const Eigen::VectorXd e = a - b;
  EXPECT_EQ(lp_loss(a, b, 1.0).loss, e.cwiseAbs().sum() / 4.0);
  double l2 = 0.0;
  for (Index i = 0; i < 4; ++i) l2 += 0.5 * std::abs(e(i)) * std::abs(e(i));
  EXPECT_EQ(lp_loss(a, b, 2.0).loss, l2 / 4.0);
  EXPECT_EQ(lp_loss(a, b, 1.0).grad(2), 0.0);
}

TEST(LpLoss, Rejections) {
  EXPECT_THROW(lp_loss(vec({0.1}), vec({0.0}), 0.9), ValidationError);
  EXPECT_THROW(lp_loss(vec({0.1, 0.2}), vec({0.0}), 1.0), ValidationError);
}

TEST(LpLoss, FiniteDifferences) {
  Rng rng = make_rng(11);
  for (double p : {1.0, 1.6, 2.0, 2.4}) {
    Eigen::VectorXd a(12), b(12);
    for (Index i = 0; i < 12; ++i) {
      a(i) = uniform(rng);
      b(i) = uniform(rng);
      if (std::abs(a(i) - b(i)) < 1e-3) b(i) += 0.01;
    }
    const auto g = lp_loss(a, b, p);
    const double h = 1e-5;
    for (Index i = 0; i < 12; ++i) {
      Eigen::VectorXd ap = a, am = a;
      ap(i) += h;
      am(i) -= h;
      const double fd = (lp_loss(ap, b, p).loss - lp_loss(am, b, p).loss) / (2 * h);
      EXPECT_NEAR(g.grad(i), fd, 1e-4 * std::abs(fd) + 1e-12) << "p " << p;
    }
  }
}

TEST(HeatmapMse, Examples) {
  HeatmapStack a(2, 3, 3), b(2, 3, 3);
  a.values.setRandom();
  b.values = a.values;
  const auto same = heatmap_mse_loss(a, b);
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_EQ(same.grad.cwiseAbs().maxCoeff(), 0.0);
  b.values.array() -= 1.0;
  EXPECT_NEAR(heatmap_mse_loss(a, b).loss, 0.5, 1e-15);
  EXPECT_THROW(heatmap_mse_loss(a, HeatmapStack(2, 3, 4)), ValidationError);
}

TEST(HeatmapMse, FiniteDifferences) {
  Rng rng = make_rng(5);
  HeatmapStack a(2, 4, 5), b(2, 4, 5);
  for (Index i = 0; i < a.values.size(); ++i) {
    a.values(i) = uniform(rng);
    b.values(i) = uniform(rng);
  }
  const auto g = heatmap_mse_loss(a, b);
  const double h = 1e-5;
  for (Index i = 0; i < a.values.size(); ++i) {
    HeatmapStack ap = a, am = a;
    ap.values(i) += h;
    am.values(i) -= h;
    const double fd = (heatmap_mse_loss(ap, b).loss - heatmap_mse_loss(am, b).loss) / (2 * h);
    EXPECT_NEAR(g.grad(i), fd, 1e-6 * std::abs(fd) + 1e-12);
  }
}

TEST(Schedules, GranularityAt) {
  const auto hm = Curriculum::heatmap_default();
  const auto tf = Curriculum::coordinate_default();
  EXPECT_EQ(granularity_at(hm, 2), 2.2);
  EXPECT_EQ(granularity_at(hm, 4), 1.5);
  EXPECT_EQ(granularity_at(tf, 4), 1.0);
  EXPECT_THROW(granularity_at(hm, 1), ValidationError);
  EXPECT_THROW(granularity_at(hm, 5), ValidationError);
  for (const auto& c : {hm, tf})
    for (int t = 3; t <= c.rounds(); ++t) EXPECT_LT(granularity_at(c, t), granularity_at(c, t - 1));
  EXPECT_EQ(granularity_at(hm, hm.rounds()), hm.standard());
  EXPECT_EQ(granularity_at(tf, tf.rounds()), 1.0);
}

TEST(Schedules, LambdaWeight) {
  EXPECT_EQ(lambda_weight(2, 4, 0.1), 0.1);
  EXPECT_EQ(lambda_weight(3, 4, 0.1), 0.1);
  EXPECT_EQ(lambda_weight(4, 4, 0.1), 1.0);
  EXPECT_EQ(lambda_weight(1, 4, 0.1), 0.0);
  EXPECT_THROW(lambda_weight(0, 4, 0.1), ValidationError);
  EXPECT_THROW(lambda_weight(5, 4, 0.1), ValidationError);
}

TEST(Schedules, CurriculumValidation) {
  EXPECT_NO_THROW(Curriculum::heatmap_default().validate());
  EXPECT_NO_THROW(Curriculum::coordinate_default().validate());
  Curriculum c = Curriculum::heatmap_default();
  c.values = {1.8, 2.2, 1.5};
  EXPECT_THROW(c.validate(), ValidationError);
  c.values = {2.2, 1.8, 1.6};
  EXPECT_THROW(c.validate(), ValidationError);
  c = Curriculum::coordinate_default();
  c.values = {2.0, 0.9, 1.0};
  EXPECT_THROW(c.validate(), ValidationError);
  c = Curriculum::heatmap_default();
  c.lambda_sub = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = Curriculum::heatmap_default();
  c.values = {1.5, 1.5, 1.5};
  EXPECT_TRUE(c.degenerate());
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(c.validate_allow_degenerate());
}
