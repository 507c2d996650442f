#include <gtest/gtest.h>

#include <cmath>

#include "stld/heatmap.hpp"

using namespace stld;

namespace {

LandmarkSet point(double x, double y) {
  LandmarkSet p(1, 2);
  p << x, y;
  return p;
}

}  // namespace

TEST(EncodeHeatmaps, OnGridPeakIsOne) {
  const auto s = encode_heatmaps<double>(point(7, 11), 1.5, 32, 32);
  EXPECT_EQ(s.channel(0)(11, 7), 1.0);
  EXPECT_EQ(s.channel(0).maxCoeff(), 1.0);
  EXPECT_GT(s.channel(0).minCoeff(), 0.0);
}

TEST(EncodeHeatmaps, NeighborValue) {
  const auto s = encode_heatmaps<double>(point(7, 11), 1.5, 32, 32);
  EXPECT_NEAR(s.channel(0)(11, 8), 0.80073740291680810, 1e-15);
  EXPECT_NEAR(s.channel(0)(10, 7), 0.80073740291680810, 1e-15);
}

TEST(EncodeHeatmaps, WiderSigmaRaisesOffCenter) {
  const auto a = encode_heatmaps<double>(point(10, 12), 1.5, 24, 24);
  const auto b = encode_heatmaps<double>(point(10, 12), 2.2, 24, 24);
  for (Index r = 0; r < 24; ++r)
    for (Index c = 0; c < 24; ++c) {
      if (r == 12 && c == 10) continue;
      EXPECT_GT(b.channel(0)(r, c), a.channel(0)(r, c));
    }
}

TEST(EncodeHeatmaps, ScaleMapsCoordinates) {
  const auto s = encode_heatmaps<double>(point(16, 8), 1.0, 16, 16, 2.0);
  EXPECT_EQ(s.channel(0)(4, 8), 1.0);
}

TEST(EncodeHeatmaps, RejectsBadSigma) {
  EXPECT_THROW(encode_heatmaps<double>(point(1, 1), 0.0, 8, 8), ValidationError);
  EXPECT_THROW(encode_heatmaps<double>(point(1, 1), -1.0, 8, 8), ValidationError);
}

TEST(EncodeHeatmaps, TranslationEquivariant) {
  const auto a = encode_heatmaps<double>(point(10.3, 12.7), 1.8, 32, 32);
  const auto b = encode_heatmaps<double>(point(11.3, 13.7), 1.8, 32, 32);
  for (Index r = 0; r < 31; ++r)
    for (Index c = 0; c < 31; ++c) EXPECT_NEAR(b.channel(0)(r + 1, c + 1), a.channel(0)(r, c), 1e-14);
}

TEST(DecodeHeatmaps, LatticeRoundTrip) {
  LandmarkSet pts(3, 2);
  pts << 3, 4, 20, 9, 31, 0;
  const auto d = decode_heatmaps(encode_heatmaps<double>(pts, 1.5, 32, 32));
  EXPECT_EQ(d.points, pts);
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(d.confidence(k), 1.0);
}

TEST(DecodeHeatmaps, SubpixelErrorBoundAndQuarterShiftHelps) {
  Rng rng = make_rng(2024);
  double with = 0.0, without = 0.0, worst = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const LandmarkSet p = point(uniform(rng, 1.0, 30.0), uniform(rng, 1.0, 30.0));
    const auto s = encode_heatmaps<double>(p, 1.5, 32, 32);
    const double e_plain = (decode_heatmaps(s, 1.0, false).points - p).norm();
    const double e_shift = (decode_heatmaps(s).points - p).norm();
    worst = std::max({worst, (decode_heatmaps(s, 1.0, false).points - p).cwiseAbs().maxCoeff()});
    without += e_plain;
    with += e_shift;
  }
  EXPECT_LE(worst, 0.5);
  EXPECT_LT(with / n, without / n);
}

TEST(DecodeHeatmaps, ErrorBoundAcrossSigmaRange) {
  Rng rng = make_rng(7);
  for (double sigma = 1.0; sigma <= 4.6; sigma += 0.4) {
    for (int i = 0; i < 50; ++i) {
      const LandmarkSet p = point(uniform(rng, 1.0, 62.0), uniform(rng, 1.0, 62.0));
      const auto d = decode_heatmaps(encode_heatmaps<double>(p / 2.0, sigma, 32, 32), 2.0);
      EXPECT_LE((d.points - p).cwiseAbs().maxCoeff(), 0.5 * 2.0 + 1e-12) << "sigma " << sigma;
    }
  }
}

TEST(DecodeHeatmaps, FlatChannelIsDegenerate) {
  HeatmapStack z(2, 32, 32);
  z.channel(1).setConstant(0.3);
  const auto d = decode_heatmaps(z);
  for (Index k = 0; k < 2; ++k) {
    EXPECT_TRUE(d.degenerate[k]);
    EXPECT_EQ(d.points(k, 0), 15.5);
    EXPECT_EQ(d.points(k, 1), 15.5);
  }
  EXPECT_EQ(d.confidence(0), 0.0);
  EXPECT_DOUBLE_EQ(d.confidence(1), 0.3);
}

TEST(DecodeHeatmaps, ConfidenceClamped) {
  HeatmapStack s(1, 4, 4);
  s.channel(0)(1, 2) = 1.7;
  EXPECT_EQ(decode_heatmaps(s).confidence(0), 1.0);
  s.channel(0).setConstant(-2.0);
  s.channel(0)(0, 0) = -1.0;
  EXPECT_EQ(decode_heatmaps(s).confidence(0), 0.0);
}

TEST(DecodeHeatmaps, RejectsNonFinite) {
  HeatmapStack s(1, 4, 4);
  s.values(3) = std::nan("");
  EXPECT_THROW(decode_heatmaps(s), ValidationError);
}
