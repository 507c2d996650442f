#include <gtest/gtest.h>

#include <filesystem>

#include "stld/tinynet.hpp"

using namespace stld;

namespace {

Eigen::MatrixXd random_batch(Index rows, Index cols, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Eigen::MatrixXd x(rows, cols);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng);
  return x;
}

// Objective whose output gradient is `g`: sum(g .* f(x)).
double probe(const TinyModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  return (predict(m, x).array() * g.array()).sum();
}

void gradient_check(Pathway pathway, std::uint64_t seed) {
  const ModelDims dims{8, 3, 7};
  TinyModel m = init_model(pathway, dims, seed);
  Rng rng = make_rng(seed, 1);
  for (auto& l : m.layers)
    for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = uniform(rng, -0.1, 0.1);
  const Eigen::MatrixXd x = random_batch(m.input_size(), 3, seed + 2);
  const Eigen::MatrixXd g = random_batch(m.output_size(), 3, seed + 3).array() - 0.5;
  const Eigen::VectorXd analytic = backward(m, forward(m, x), g).flat();
  const Eigen::VectorXd p0 = m.flat_parameters();
  const double h = 1e-5;
  double worst = 0.0;
  for (Index i = 0; i < p0.size(); ++i) {
    Eigen::VectorXd p = p0;
    p(i) += h;
    m.set_flat_parameters(p);
    const double up = probe(m, x, g);
    p(i) -= 2 * h;
    m.set_flat_parameters(p);
    const double down = probe(m, x, g);
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic(i)), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic(i)) / scale);
  }
  EXPECT_LT(worst, 1e-4) << to_string(pathway);
}

}  // namespace

TEST(InitModel, ParameterCount) {
  const TinyModel m = init_model(Pathway::Heatmap, {32, 5, 128}, 0);
  EXPECT_EQ(m.parameter_count(), 1024 * 128 + 128 + 128 * 5120 + 5120);
  EXPECT_EQ(m.parameter_count(), 791680);
  const TinyModel c = init_model(Pathway::Coordinate, {32, 5, 64}, 0);
  EXPECT_EQ(c.parameter_count(), 1024 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10);
}

TEST(InitModel, DeterministicAndBounded) {
  const ModelDims dims{16, 5, 32};
  const TinyModel a = init_model(Pathway::Coordinate, dims, 0);
  const TinyModel b = init_model(Pathway::Coordinate, dims, 0);
  const TinyModel c = init_model(Pathway::Coordinate, dims, 1);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_NE(a.flat_parameters(), c.flat_parameters());
  for (const auto& l : a.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_THROW(init_model(Pathway::Heatmap, {0, 5, 4}, 0), ValidationError);
}

TEST(Forward, ZeroWeights) {
  const ModelDims dims{8, 3, 5};
  for (Pathway p : {Pathway::Heatmap, Pathway::Coordinate}) {
    TinyModel m = init_model(p, dims, 0);
    m.set_flat_parameters(Eigen::VectorXd::Zero(m.parameter_count()));
    const Eigen::MatrixXd out = predict(m, Eigen::MatrixXd::Zero(64, 2));
    ASSERT_EQ(out.rows(), m.output_size());
    EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0 + (p == Pathway::Coordinate ? 0.5 : 0.0));
    EXPECT_EQ(out.minCoeff(), p == Pathway::Coordinate ? 0.5 : 0.0);
  }
}

TEST(Forward, BatchConsistency) {
  for (Pathway p : {Pathway::Heatmap, Pathway::Coordinate}) {
    const TinyModel m = init_model(p, {8, 3, 16}, 4);
    const Eigen::MatrixXd x = random_batch(64, 5, 9);
    const Eigen::MatrixXd all = forward(m, x).output;
    EXPECT_TRUE(all.allFinite());
    for (Index j = 0; j < 5; ++j) EXPECT_TRUE(all.col(j).isApprox(predict(m, x.col(j)), 1e-14));
  }
}

TEST(Forward, CoordinateOutputsInsideUnitInterval) {
  const TinyModel m = init_model(Pathway::Coordinate, {8, 3, 16}, 4);
  const Eigen::MatrixXd out = predict(m, random_batch(64, 50, 1) * 20.0);
  EXPECT_GT(out.minCoeff(), 0.0);
  EXPECT_LT(out.maxCoeff(), 1.0);
}

TEST(Forward, ShapeMismatchRejected) {
  const TinyModel m = init_model(Pathway::Heatmap, {8, 3, 4}, 0);
  EXPECT_THROW(forward(m, Eigen::MatrixXd::Zero(63, 1)), ValidationError);
}

TEST(Backward, FiniteDifferencesHeatmap) { gradient_check(Pathway::Heatmap, 21); }
TEST(Backward, FiniteDifferencesCoordinate) { gradient_check(Pathway::Coordinate, 22); }

TEST(Backward, ZeroAndLinearity) {
  const TinyModel m = init_model(Pathway::Coordinate, {8, 3, 6}, 2);
  const Eigen::MatrixXd x = random_batch(64, 4, 3);
  const auto cache = forward(m, x);
  const Eigen::MatrixXd g = random_batch(m.output_size(), 4, 5);
  EXPECT_EQ(backward(m, cache, Eigen::MatrixXd::Zero(g.rows(), g.cols())).flat().cwiseAbs().maxCoeff(), 0.0);
  const Eigen::VectorXd one = backward(m, cache, g).flat();
  const Eigen::VectorXd two = backward(m, cache, 2.0 * g).flat();
  EXPECT_TRUE(two.isApprox(2.0 * one, 1e-14));
}

TEST(Backward, StaleCacheRejected) {
  TinyModel m = init_model(Pathway::Heatmap, {8, 2, 4}, 0);
  const auto cache = forward(m, Eigen::MatrixXd::Ones(64, 1));
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(m.output_size(), 1);
  AdamState st = AdamState::for_model(m);
  adam_step(st, m, backward(m, cache, g));
  EXPECT_THROW(backward(m, cache, g), RuntimeError);
}

TEST(Backward, ThroughLossesForEveryCurriculumValue) {
  const ModelDims dims{8, 2, 5};
  TinyModel m = init_model(Pathway::Coordinate, dims, 8);
  const Eigen::MatrixXd x = random_batch(64, 1, 2);
  const Eigen::VectorXd target = random_batch(4, 1, 3);
  for (double p : {1.0, 1.6, 2.4}) {
    const auto cache = forward(m, x);
    const auto lg = lp_loss(cache.output.col(0), target, p);
    const Eigen::VectorXd analytic = backward(m, cache, lg.grad).flat();
    const Eigen::VectorXd p0 = m.flat_parameters();
    const double h = 1e-5;
    for (Index i = 0; i < p0.size(); i += 7) {
      Eigen::VectorXd q = p0;
      q(i) += h;
      m.set_flat_parameters(q);
      const double up = lp_loss(predict(m, x).col(0), target, p).loss;
      q(i) -= 2 * h;
      m.set_flat_parameters(q);
      const double down = lp_loss(predict(m, x).col(0), target, p).loss;
      m.set_flat_parameters(p0);
      const double fd = (up - down) / (2 * h);
      EXPECT_LT(std::abs(fd - analytic(i)), 1e-4 * std::max({std::abs(fd), std::abs(analytic(i)), 1e-6}))
          << "p " << p << " param " << i;
    }
  }
}

TEST(AdamStep, SingleStepAndZeroGrad) {
  TinyModel m = init_model(Pathway::Coordinate, {8, 1, 1}, 0);
  m.set_flat_parameters(Eigen::VectorXd::Zero(m.parameter_count()));
  AdamState st = AdamState::for_model(m, 1e-3);
  Gradients g = Gradients::zeros_like(m);
  g.weight[0](0, 0) = 1.0;
  adam_step(st, m, g);
  EXPECT_NEAR(m.layers[0].weight(0, 0), -0.001, 1e-9);
  EXPECT_EQ(m.layers[0].weight(0, 1), 0.0);
  EXPECT_EQ(st.step, 1u);
  const double m_before = st.m.weight[0](0, 0);
  const double w_before = m.layers[1].weight(0, 0);
  adam_step(st, m, Gradients::zeros_like(m));
  EXPECT_EQ(m.layers[1].weight(0, 0), w_before);
  EXPECT_DOUBLE_EQ(st.m.weight[0](0, 0), 0.9 * m_before);
}

TEST(AdamStep, RejectsNonFinite) {
  TinyModel m = init_model(Pathway::Heatmap, {8, 1, 2}, 0);
  AdamState st = AdamState::for_model(m);
  Gradients g = Gradients::zeros_like(m);
  g.bias[1](0) = std::nan("");
  EXPECT_THROW(adam_step(st, m, g), RuntimeError);
}

TEST(AdamStep, DeterministicTrajectory) {
  auto run = [] {
    TinyModel m = init_model(Pathway::Coordinate, {8, 2, 6}, 5);
    AdamState st = AdamState::for_model(m);
    const Eigen::MatrixXd x = random_batch(64, 4, 6);
    const Eigen::MatrixXd t = random_batch(4, 4, 7);
    for (int i = 0; i < 20; ++i) {
      const auto cache = forward(m, x);
      const auto lg = lp_loss(cache.output, t, 1.6);
      adam_step(st, m, backward(m, cache, lg.grad.reshaped(4, 4)));
    }
    return m.flat_parameters();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "stld_ckpt_test";
  std::filesystem::create_directories(dir);
  TinyModel m = init_model(Pathway::Coordinate, {8, 3, 6}, 13);
  m.step = 42;
  save_checkpoint(m, dir / "m.ckpt");
  const TinyModel back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.flat_parameters(), m.flat_parameters());
  EXPECT_EQ(back.pathway, m.pathway);
  EXPECT_EQ(back.dims.hidden, 6);
  EXPECT_EQ(back.step, 42u);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 8);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ValidationError);
  std::filesystem::remove_all(dir);
}
