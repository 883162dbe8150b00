// tests/test_beamforming.cpp

// Copyright 2026  The mimo-frontend Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "mimo/beamforming.hpp"
#include "test_util.hpp"

namespace mimo {
namespace {

using testing::RandomComplex;

MultichannelSpectrogram Spec(std::size_t T, std::size_t F, std::size_t C) {
  MultichannelSpectrogram s;
  s.config.fft_size = static_cast<int>(2 * (F - 1));
  s.config.window_len_samples = s.config.fft_size;
  s.config.hop_samples = s.config.fft_size / 2;
  s.data = Tensor<Complex, 3>({T, F, C});
  return s;
}

MultichannelSpectrogram RandomSpec(std::mt19937_64 &rng, std::size_t T, std::size_t F,
                                   std::size_t C) {
  auto s = Spec(T, F, C);
  for (Complex &v : s.data.flat()) v = RandomComplex(rng);
  return s;
}

MaskSet RandomMasks(std::mt19937_64 &rng, std::size_t S, std::size_t T, std::size_t F,
                    std::size_t C) {
  MaskSet m{Tensor<double, 4>({S, T, F, C})};
  for (double &v : m.data.flat()) v = Uniform01(rng);
  return m;
}

CMatrix RandomPsd(std::mt19937_64 &rng, Eigen::Index C, Eigen::Index rank) {
  CMatrix B(C, rank);
  for (Eigen::Index a = 0; a < C; ++a)
    for (Eigen::Index b = 0; b < rank; ++b) B(a, b) = RandomComplex(rng);
  return B * B.adjoint();
}

CVector RandomVector(std::mt19937_64 &rng, Eigen::Index C) {
  CVector d(C);
  for (Eigen::Index c = 0; c < C; ++c) d(c) = RandomComplex(rng);
  return d;
}

PsdSet MakePsdSet(const std::vector<CMatrix> &per_source) {
  PsdSet p;
  p.num_sources = per_source.size();
  p.num_bins = 1;
  p.num_channels = static_cast<std::size_t>(per_source.front().rows());
  p.matrices = per_source;
  p.weight_floored.assign(per_source.size(), 0);
  return p;
}

TEST(Psd, SingleFrameIsOuterProduct) {
  std::mt19937_64 rng(1);
  const auto mix = RandomSpec(rng, 1, 5, 3);
  MaskSet m{Tensor<double, 4>({2, 1, 5, 3}, 1.0)};
  const auto psd = EstimatePsd(mix, m);
  for (std::size_t f = 0; f < 5; ++f) {
    CVector x(3);
    for (std::size_t c = 0; c < 3; ++c) x(c) = mix.data(0, f, c);
    const CMatrix want = x * x.adjoint();
    for (std::size_t i = 0; i < 2; ++i)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) EXPECT_EQ(psd.at(i, f)(a, b), want(a, b));
  }
}

TEST(Psd, WhiteNoiseConvergesToIdentity) {
  std::mt19937_64 rng(2);
  auto mix = Spec(10000, 2, 3);
  for (Complex &v : mix.data.flat()) v = RandomComplex(rng) / std::sqrt(2.0);
  MaskSet m{Tensor<double, 4>({2, 10000, 2, 3}, 1.0)};
  const auto psd = EstimatePsd(mix, m);
  for (std::size_t f = 0; f < 2; ++f)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        EXPECT_LT(std::abs(psd.at(1, f)(a, b) - (a == b ? 1.0 : 0.0)), 0.05);
}

TEST(Psd, HermitianAndPositiveSemidefinite) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + UniformIndex(rng, 4);
    const auto mix = RandomSpec(rng, 1 + UniformIndex(rng, 6), 4, C);
    const auto m = RandomMasks(rng, 3, mix.num_frames(), 4, C);
    const auto psd = EstimatePsd(mix, m);
    for (const CMatrix &phi : psd.matrices) {
      EXPECT_EQ(phi, CMatrix(phi.adjoint()));
      Eigen::SelfAdjointEigenSolver<CMatrix> eig(phi);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * phi.trace().real());
    }
  }
}

TEST(Psd, ChannelMeanWeight) {
  std::mt19937_64 rng(4);
  const auto mix = RandomSpec(rng, 4, 1 + 1, 2);
  auto m = RandomMasks(rng, 2, 4, 2, 2);
  const auto psd = EstimatePsd(mix, m);
  for (std::size_t f = 0; f < 2; ++f) {
    CMatrix acc = CMatrix::Zero(2, 2);
    double total = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      const double w = 0.5 * (m.data(1, t, f, 0) + m.data(1, t, f, 1));
      CVector x(2);
      x << mix.data(t, f, 0), mix.data(t, f, 1);
      acc += w * x * x.adjoint();
      total += w;
    }
    EXPECT_LT((psd.at(1, f) - acc / total).norm(), 1e-12);
  }
}

TEST(Psd, EmptyMaskIsFlooredAndFlagged) {
  std::mt19937_64 rng(5);
  const auto mix = RandomSpec(rng, 3, 3, 2);
  auto m = RandomMasks(rng, 3, 3, 3, 2);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 2; ++c) m.data(2, t, 1, c) = 0.0;
  const auto psd = EstimatePsd(mix, m);
  EXPECT_EQ(psd.num_floored(), 1u);
  EXPECT_EQ(psd.weight_floored[2 * 3 + 1], 1);
  EXPECT_EQ(psd.at(2, 1).norm(), 0.0);
  for (const auto &phi : psd.matrices) EXPECT_TRUE(phi.allFinite());
}

TEST(Psd, ShapeMismatch) {
  std::mt19937_64 rng(6);
  const auto mix = RandomSpec(rng, 3, 3, 2);
  EXPECT_THROW(EstimatePsd(mix, RandomMasks(rng, 3, 3, 3, 1)), DataError);
  auto bad = RandomMasks(rng, 3, 3, 3, 2);
  bad.data(0, 0, 0, 0) = 2.0;
  EXPECT_THROW(EstimatePsd(mix, bad), DataError);
}

TEST(Mvdr, SingleChannelIsIdentity) {
  std::mt19937_64 rng(7);
  const auto psd = MakePsdSet({RandomPsd(rng, 1, 1), RandomPsd(rng, 1, 1), RandomPsd(rng, 1, 1)});
  Eigen::VectorXd u(1);
  u << 1.0;
  const auto g = MvdrFilters(psd, u);
  for (std::size_t i = 1; i <= 2; ++i) EXPECT_NEAR(std::abs(g.at(i, 0)(0) - 1.0), 0.0, 1e-15);
}

TEST(Mvdr, RankOneClosedForm) {
  std::mt19937_64 rng(8);
  for (Eigen::Index C : {2, 3, 4})
    for (int trial = 0; trial < 20; ++trial) {
      const CVector d = RandomVector(rng, C);
      const double sigma2 = 0.1 + 3.0 * Uniform01(rng);
      const auto psd = MakePsdSet({CMatrix::Identity(C, C), sigma2 * d * d.adjoint()});
      const auto r = static_cast<Eigen::Index>(UniformIndex(rng, C));
      Eigen::VectorXd u = Eigen::VectorXd::Zero(C);
      u(r) = 1.0;
      const auto filt = MvdrFilters(psd, u);
      const CVector want = d * std::conj(d(r)) / d.squaredNorm();
      EXPECT_LT((filt.at(1, 0) - want).cwiseAbs().maxCoeff(), 1e-8);
      const Complex s = RandomComplex(rng);
      const Complex out = filt.at(1, 0).dot(d * s);
      EXPECT_LT(std::abs(out - d(r) * s), 1e-8);
    }
}

TEST(Mvdr, UnitTraceOnRandomInputs) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto C = static_cast<Eigen::Index>(2 + UniformIndex(rng, 4));
    const auto s = NormalizedMvdrMatrix(RandomPsd(rng, C, 1 + UniformIndex(rng, C)),
                                        RandomPsd(rng, C, 1 + UniformIndex(rng, C)), 1e-6);
    EXPECT_NEAR(std::abs(s.normalized.trace() - Complex(1.0, 0.0)), 0.0, 1e-12);
  }
}

TEST(Mvdr, InterferenceIncludesNoiseAndOtherSpeakers) {
  std::mt19937_64 rng(10);
  const Eigen::Index C = 3;
  const std::vector<CMatrix> phi{RandomPsd(rng, C, 3), RandomPsd(rng, C, 1), RandomPsd(rng, C, 2)};
  const auto psd = MakePsdSet(phi);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(C);
  u(1) = 1.0;
  const double eps = 1e-3;
  const auto filt = MvdrFilters(psd, u, eps);
  for (std::size_t i = 1; i <= 2; ++i) {
    CMatrix interf = CMatrix::Zero(C, C);
    for (std::size_t j = 0; j < 3; ++j)
      if (j != i) interf += phi[j];
    interf += eps * interf.trace().real() / C * CMatrix::Identity(C, C);
    const CMatrix A = interf.inverse() * phi[i];
    const CVector want = (A / A.trace()) * u.cast<Complex>();
    EXPECT_LT((filt.at(i, 0) - want).norm(), 1e-9 * want.norm());
    EXPECT_EQ(filt.diagnostics.pinv_fallback[i - 1], 0);
    EXPECT_GE(filt.diagnostics.condition_numbers[i - 1], 1.0);
  }
}

TEST(Mvdr, DegenerateTargetIsNumericError) {
  std::mt19937_64 rng(11);
  const auto psd = MakePsdSet({RandomPsd(rng, 2, 2), CMatrix::Zero(2, 2)});
  Eigen::VectorXd u(2);
  u << 1.0, 0.0;
  EXPECT_THROW(MvdrFilters(psd, u), NumericError);
}

TEST(Mvdr, SingularInterferenceFallsBackToPseudoInverse) {
  std::mt19937_64 rng(12);
  const CVector v = RandomVector(rng, 2);
  const auto psd = MakePsdSet({v * v.adjoint(), RandomPsd(rng, 2, 2)});
  Eigen::VectorXd u(2);
  u << 1.0, 0.0;
  // Loading far below rounding leaves the rank-1 interference singular.
  const auto filt = MvdrFilters(psd, u, 1e-300);
  EXPECT_EQ(filt.diagnostics.pinv_fallback[0], 1);
  EXPECT_TRUE(filt.at(1, 0).allFinite());
  const auto s = NormalizedMvdrMatrix(psd.at(1, 0), psd.at(0, 0), 1e-300);
  EXPECT_TRUE(s.pinv_fallback);
  EXPECT_NEAR(std::abs(s.normalized.trace() - 1.0), 0.0, 1e-12);
  // Zero interference and a pseudo-inverse of zero leave nothing to normalize.
  EXPECT_THROW(MvdrFilters(MakePsdSet({CMatrix::Zero(2, 2), RandomPsd(rng, 2, 2)}), u), NumericError);
}

TEST(Mvdr, ArgumentChecks) {
  std::mt19937_64 rng(13);
  const auto psd = MakePsdSet({RandomPsd(rng, 2, 2), RandomPsd(rng, 2, 1)});
  Eigen::VectorXd u(2);
  u << 1.0, 0.0;
  EXPECT_THROW(MvdrFilters(psd, u, 0.0), UsageError);
  Eigen::VectorXd bad(2);
  bad << 0.7, 0.7;
  EXPECT_THROW(MvdrFilters(psd, bad), UsageError);
  bad << 1.5, -0.5;
  EXPECT_THROW(MvdrFilters(psd, bad), UsageError);
  Eigen::VectorXd soft(2);
  soft << 0.25, 0.75;
  EXPECT_NO_THROW(MvdrFilters(psd, soft));
}

TEST(Mvdr, SpeakerPermutationEquivariance) {
  std::mt19937_64 rng(14);
  const auto mix = RandomSpec(rng, 8, 5, 3);
  auto m = RandomMasks(rng, 3, 8, 5, 3);
  auto swapped = m;
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t f = 0; f < 5; ++f)
      for (std::size_t c = 0; c < 3; ++c) {
        swapped.data(1, t, f, c) = m.data(2, t, f, c);
        swapped.data(2, t, f, c) = m.data(1, t, f, c);
      }
  Eigen::VectorXd u = Eigen::VectorXd::Zero(3);
  u(0) = 1.0;
  const auto a = ApplyFilters(MvdrFilters(EstimatePsd(mix, m), u), mix);
  const auto b = ApplyFilters(MvdrFilters(EstimatePsd(mix, swapped), u), mix);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t f = 0; f < 5; ++f) {
      EXPECT_LT(std::abs(a.data(0, t, f) - b.data(1, t, f)), 1e-12 * (1.0 + std::abs(a.data(0, t, f))));
      EXPECT_LT(std::abs(a.data(1, t, f) - b.data(0, t, f)), 1e-12 * (1.0 + std::abs(a.data(1, t, f))));
    }
}

BeamformerFilters ConstantFilters(std::size_t J, std::size_t F, const CVector &g) {
  BeamformerFilters b;
  b.num_speakers = J;
  b.num_bins = F;
  b.num_channels = static_cast<std::size_t>(g.size());
  b.weights.assign(J * F, g);
  b.reference = Eigen::VectorXd::Zero(g.size());
  b.reference(0) = 1.0;
  return b;
}

TEST(ApplyFilters, SelectorZeroAndLinearity) {
  std::mt19937_64 rng(15);
  const auto x = RandomSpec(rng, 6, 5, 3), y = RandomSpec(rng, 6, 5, 3);
  CVector e2 = CVector::Zero(3);
  e2(2) = 1.0;
  const auto sel = ApplyFilters(ConstantFilters(2, 5, e2), x);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t f = 0; f < 5; ++f) {
      EXPECT_EQ(sel.data(0, t, f), x.data(t, f, 2));
      EXPECT_EQ(sel.data(1, t, f), x.data(t, f, 2));
    }
  const auto zero = ApplyFilters(ConstantFilters(1, 5, CVector::Zero(3)), x);
  for (const Complex &v : zero.data.flat()) EXPECT_EQ(v, Complex(0.0, 0.0));

  BeamformerFilters g = ConstantFilters(2, 5, CVector::Zero(3));
  for (auto &w : g.weights) w = RandomVector(rng, 3);
  auto xy = x;
  for (std::size_t n = 0; n < xy.data.size(); ++n) xy.data.flat()[n] += y.data.flat()[n];
  const auto sx = ApplyFilters(g, x), sy = ApplyFilters(g, y), sxy = ApplyFilters(g, xy);
  for (std::size_t n = 0; n < sxy.data.size(); ++n)
    EXPECT_LT(std::abs(sxy.data.flat()[n] - sx.data.flat()[n] - sy.data.flat()[n]), 1e-12);
  EXPECT_THROW(ApplyFilters(ConstantFilters(1, 5, CVector::Zero(2)), x), DataError);
  EXPECT_THROW(ApplyFilters(ConstantFilters(1, 4, CVector::Zero(3)), x), DataError);
}

TEST(ApplyFilters, ConjugateInnerProduct) {
  auto x = Spec(1, 2, 2);
  x.data(0, 0, 0) = {1.0, 2.0};
  x.data(0, 0, 1) = {0.0, -1.0};
  CVector g(2);
  g << Complex(0.0, 1.0), Complex(2.0, 0.0);
  const auto s = ApplyFilters(ConstantFilters(1, 2, g), x);
  // conj(i) (1 + 2i) + 2 (-i) = -i + 2 - 2i
  EXPECT_EQ(s.data(0, 0, 0), Complex(2.0, -3.0));
}

TEST(Reference, Policies) {
  std::mt19937_64 rng(16);
  auto mix = RandomSpec(rng, 4, 5, 3);
  const auto m = RandomMasks(rng, 3, 4, 5, 3);
  EXPECT_EQ(SelectReference(mix, m, ReferencePolicy::Fixed(0)), Eigen::VectorXd::Unit(3, 0));
  EXPECT_THROW(SelectReference(mix, m, ReferencePolicy::Fixed(3)), UsageError);
  auto loud = mix;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 5; ++f) {
      loud.data(t, f, 1) = 10.0 * mix.data(t, f, 0);
      loud.data(t, f, 0) = mix.data(t, f, 0);
      loud.data(t, f, 2) = mix.data(t, f, 0);
    }
  MaskSet ones{Tensor<double, 4>({3, 4, 5, 3}, 1.0)};
  EXPECT_EQ(SelectReference(loud, ones, ReferencePolicy::MaxAveragePower()), Eigen::VectorXd::Unit(3, 1));
  auto equal = loud;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 5; ++f) equal.data(t, f, 1) = mix.data(t, f, 0);
  EXPECT_EQ(SelectReference(equal, ones, ReferencePolicy::MaxAveragePower()), Eigen::VectorXd::Unit(3, 0));
}

std::vector<Point3> Circle(std::size_t C, double radius) {
  std::vector<Point3> mics;
  for (std::size_t c = 0; c < C; ++c) {
    const double a = 2.0 * kPi * c / C;
    mics.push_back({2.0 + radius * std::cos(a), 3.0 + radius * std::sin(a), 1.5});
  }
  return mics;
}

TEST(BeamPattern, SingleMicHasNoDirectivity) {
  CVector g(1);
  g << Complex(0.3, -0.4);
  const auto pts = BeamPattern(ConstantFilters(1, 257, g), 1, {500, 4000},
                               {{1.0, 1.0, 1.0}}, 343.0, StftConfig{});
  ASSERT_EQ(pts.size(), 720u);
  for (const auto &p : pts) EXPECT_NEAR(p.magnitude, 0.5, 1e-15);
}

TEST(BeamPattern, MatchedFilterPeaksAtLookDirection) {
  const auto mics = Circle(4, 0.1);
  for (double f : {500.0, 1000.0, 2000.0, 4000.0})
    for (double look_deg : {0.0, 60.0, 135.0, 290.0}) {
      // Plane-wave phases written out directly from the geometry.
      const double th = look_deg * kPi / 180.0;
      CVector d(4);
      for (int c = 0; c < 4; ++c) {
        const double along = (mics[c][0] - 2.0) * std::cos(th) + (mics[c][1] - 3.0) * std::sin(th);
        d(c) = std::exp(Complex(0.0, 2.0 * kPi * f * along / 343.0));
      }
      const auto pts = BeamPattern(ConstantFilters(1, 257, d / 4.0), 1, {f}, mics, 343.0, StftConfig{});
      const auto best = std::max_element(pts.begin(), pts.end(), [](const auto &a, const auto &b) {
        return a.magnitude < b.magnitude;
      });
      EXPECT_EQ(best->azimuth_deg, look_deg);
      EXPECT_NEAR(best->magnitude, 1.0, 1e-12);
      for (const auto &p : pts) EXPECT_LE(p.magnitude, 1.0 + 1e-12);
    }
}

TEST(BeamPattern, SelectorIsFlatAndNyquistIsChecked) {
  const auto mics = Circle(3, 0.05);
  const auto filt = ConstantFilters(2, 257, CVector::Unit(3, 0));
  for (const auto &p : BeamPattern(filt, 2, {1000, 8000}, mics, 343.0, StftConfig{}))
    EXPECT_NEAR(p.magnitude, 1.0, 1e-15);
  EXPECT_THROW(BeamPattern(filt, 1, {8001}, mics, 343.0, StftConfig{}), UsageError);
  EXPECT_THROW(BeamPattern(filt, 3, {1000}, mics, 343.0, StftConfig{}), UsageError);
  EXPECT_THROW(BeamPattern(filt, 1, {1000}, Circle(2, 0.05), 343.0, StftConfig{}), UsageError);
}

TEST(BeamPattern, CsvColumns) {
  const auto dir = testing::TempDir("beam_csv");
  WriteBeamPatternCsv((dir / "b.csv").string(), {{0.0, 500.0, 0.25}, {1.0, 500.0, 0.5}});
  EXPECT_EQ(testing::ReadFile(dir / "b.csv"), "azimuth_deg,freq_hz,magnitude\n0,500,0.25\n1,500,0.5\n");
}

TEST(Filters, TensorRoundTrip) {
  std::mt19937_64 rng(17);
  auto f = ConstantFilters(2, 3, CVector::Zero(2));
  for (auto &w : f.weights) w = RandomVector(rng, 2);
  const auto back = BeamformerFilters::FromTensor(f.ToTensor());
  EXPECT_EQ(back.weights, f.weights);
}

}  // namespace
}  // namespace mimo
