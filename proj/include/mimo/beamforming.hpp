// mimo/beamforming.hpp

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

// Mask-driven multi-source MVDR beamforming.
//
// For every source i in 0..J (0 = noise) and frequency f the spatial PSD is the
// mask-weighted average of x x^H over time. The filter of speaker i treats the
// sum of all other sources' PSDs, noise included, as interference:
//
//   A = (sum_{j != i} Phi^j + reg I)^-1 Phi^i,   g^i = A u / tr(A)
//
// and the separated spectrum is s^i_{t,f} = g^i(f)^H x_{t,f}.

#ifndef MIMO_BEAMFORMING_HPP_
#define MIMO_BEAMFORMING_HPP_

#include <Eigen/Dense>

#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "mimo/common.hpp"
#include "mimo/masking.hpp"
#include "mimo/spatial.hpp"
#include "mimo/stft.hpp"

namespace mimo {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Sum over time of the mask weights below which a PSD average is considered
/// empty; the denominator is floored to this value and the bin flagged.
inline constexpr double kPsdWeightFloor = 1e-10;

struct PsdSet {
  std::size_t num_sources = 0;  // J + 1
  std::size_t num_bins = 0;
  std::size_t num_channels = 0;
  std::vector<CMatrix> matrices;             // index i * num_bins + f
  std::vector<std::uint8_t> weight_floored;  // same indexing

  const CMatrix &at(std::size_t i, std::size_t f) const {
    return matrices[i * num_bins + f];
  }
  CMatrix &at(std::size_t i, std::size_t f) { return matrices[i * num_bins + f]; }
  std::size_t num_floored() const {
    std::size_t n = 0;
    for (auto v : weight_floored) n += v;
    return n;
  }
};

/// Mask-weighted spatial covariance per source and frequency. The channel
/// masks m^i_{t,f,c} are reduced to one weight per (t, f) by their mean over
/// channels. Time is accumulated in increasing order and the result is
/// symmetrized, so every matrix is exactly Hermitian.
inline PsdSet EstimatePsd(const MultichannelSpectrogram &mix, const MaskSet &masks) {
  masks.CheckMatches(mix);
  masks.Validate();
  const std::size_t S = masks.num_sources(), T = mix.num_frames(),
                    F = mix.num_bins(), C = mix.num_channels();
  PsdSet psd;
  psd.num_sources = S;
  psd.num_bins = F;
  psd.num_channels = C;
  psd.matrices.assign(S * F, CMatrix::Zero(C, C));
  psd.weight_floored.assign(S * F, 0);
  CVector x(C);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t i = 0; i < S; ++i) {
      CMatrix acc = CMatrix::Zero(C, C);
      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        double w = 0.0;
        for (std::size_t c = 0; c < C; ++c) w += masks.data(i, t, f, c);
        w /= static_cast<double>(C);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < C; ++c) x(c) = mix.data(t, f, c);
        acc.noalias() += w * (x * x.adjoint());
        total += w;
      }
      if (total < kPsdWeightFloor) {
        total = kPsdWeightFloor;
        psd.weight_floored[i * F + f] = 1;
      }
      acc /= total;
      psd.at(i, f) = 0.5 * (acc + acc.adjoint());
    }
  }
  return psd;
}

/// Per-bin numerical diagnostics of the MVDR solve.
struct MvdrDiagnostics {
  std::vector<double> condition_numbers;    // (J, F) row-major, regularized interference
  std::vector<std::uint8_t> pinv_fallback;  // (J, F)
};

struct BeamformerFilters {
  std::size_t num_speakers = 0;
  std::size_t num_bins = 0;
  std::size_t num_channels = 0;
  std::vector<CVector> weights;  // index (i - 1) * num_bins + f, i in 1..J
  Eigen::VectorXd reference;     // u
  MvdrDiagnostics diagnostics;

  const CVector &at(std::size_t speaker, std::size_t f) const {
    return weights[(speaker - 1) * num_bins + f];
  }
  CVector &at(std::size_t speaker, std::size_t f) {
    return weights[(speaker - 1) * num_bins + f];
  }

  /// Weights as a (J, F, C) tensor for serialization.
  Tensor<Complex, 3> ToTensor() const {
    Tensor<Complex, 3> out({num_speakers, num_bins, num_channels});
    for (std::size_t i = 1; i <= num_speakers; ++i)
      for (std::size_t f = 0; f < num_bins; ++f)
        for (std::size_t c = 0; c < num_channels; ++c) out(i - 1, f, c) = at(i, f)(c);
    return out;
  }

  static BeamformerFilters FromTensor(const Tensor<Complex, 3> &w) {
    BeamformerFilters b;
    b.num_speakers = w.dim(0);
    b.num_bins = w.dim(1);
    b.num_channels = w.dim(2);
    b.weights.assign(b.num_speakers * b.num_bins, CVector::Zero(b.num_channels));
    for (std::size_t i = 1; i <= b.num_speakers; ++i)
      for (std::size_t f = 0; f < b.num_bins; ++f)
        for (std::size_t c = 0; c < b.num_channels; ++c) b.at(i, f)(c) = w(i - 1, f, c);
    b.reference = Eigen::VectorXd::Zero(b.num_channels);
    if (b.num_channels > 0) b.reference(0) = 1.0;
    return b;
  }
};

/// Result of one regularized solve.
struct MvdrSolve {
  CMatrix normalized;  // A / tr(A), unit trace
  double condition_number = 0.0;
  bool pinv_fallback = false;
};

/// Solves A = (interference + eps * tr(interference) / C * I)^-1 target and
/// returns A / tr(A). Uses a Cholesky factorization, falling back to the
/// pseudo-inverse if it fails. |tr(A)| < 1e-30 is a NumericError.
inline MvdrSolve NormalizedMvdrMatrix(const CMatrix &target, const CMatrix &interference,
                                      double eps, std::size_t bin = 0) {
  const auto C = interference.rows();
  const double load = eps * interference.trace().real() / static_cast<double>(C);
  CMatrix reg = interference;
  reg.diagonal().array() += load;
  reg = 0.5 * (reg + reg.adjoint()).eval();

  MvdrSolve out;
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(reg, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  out.condition_number =
      lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();

  CMatrix a;
  Eigen::LLT<CMatrix> llt(reg);
  if (llt.info() == Eigen::Success && lo > 0.0) {
    a = llt.solve(target);
  } else {
    out.pinv_fallback = true;
    a = reg.completeOrthogonalDecomposition().pseudoInverse() * target;
  }
  const Complex tr = a.trace();
  if (!(std::abs(tr) >= 1e-30))
    throw NumericError("degenerate target PSD at frequency " + std::to_string(bin));
  out.normalized = a / tr;
  return out;
}

/// MVDR filters for speakers 1..J with reference vector u.
inline BeamformerFilters MvdrFilters(const PsdSet &psd, const Eigen::VectorXd &u,
                                     double eps = 1e-6) {
  if (!(eps > 0.0)) throw UsageError("MVDR regularization eps must be positive");
  if (psd.num_sources < 2) throw UsageError("PSD set needs noise plus >= 1 speaker");
  const std::size_t J = psd.num_sources - 1, F = psd.num_bins, C = psd.num_channels;
  if (static_cast<std::size_t>(u.size()) != C)
    throw UsageError("reference vector length does not match channel count");
  if ((u.array() < 0.0).any() || std::abs(u.sum() - 1.0) > 1e-12)
    throw UsageError("reference vector must be nonnegative and sum to one");

  BeamformerFilters out;
  out.num_speakers = J;
  out.num_bins = F;
  out.num_channels = C;
  out.reference = u;
  out.weights.assign(J * F, CVector::Zero(C));
  out.diagnostics.condition_numbers.assign(J * F, 0.0);
  out.diagnostics.pinv_fallback.assign(J * F, 0);
  const CVector uc = u.cast<Complex>();
  for (std::size_t f = 0; f < F; ++f) {
    CMatrix all = CMatrix::Zero(C, C);
    for (std::size_t j = 0; j < psd.num_sources; ++j) all += psd.at(j, f);
    for (std::size_t i = 1; i <= J; ++i) {
      CMatrix interference = CMatrix::Zero(C, C);
      for (std::size_t j = 0; j < psd.num_sources; ++j)
        if (j != i) interference += psd.at(j, f);
      const MvdrSolve s = NormalizedMvdrMatrix(psd.at(i, f), interference, eps, f);
      out.at(i, f) = s.normalized * uc;
      out.diagnostics.condition_numbers[(i - 1) * F + f] = s.condition_number;
      out.diagnostics.pinv_fallback[(i - 1) * F + f] = s.pinv_fallback ? 1 : 0;
      if (!out.at(i, f).allFinite())
        throw NumericError("non-finite beamformer weights at frequency " +
                           std::to_string(f));
    }
  }
  return out;
}

/// Beamformer outputs with axes (speaker - 1, time, frequency).
struct SeparatedSpectrograms {
  Tensor<Complex, 3> data;
  StftConfig config;
  std::size_t original_len_samples = 0;

  std::size_t num_speakers() const { return data.dim(0); }

  /// Speaker i (1-based) as a single-channel spectrogram.
  MultichannelSpectrogram Source(std::size_t speaker) const {
    MultichannelSpectrogram s;
    s.config = config;
    s.original_len_samples = original_len_samples;
    s.data = Tensor<Complex, 3>({data.dim(1), data.dim(2), 1});
    for (std::size_t t = 0; t < data.dim(1); ++t)
      for (std::size_t f = 0; f < data.dim(2); ++f) s.data(t, f, 0) = data(speaker - 1, t, f);
    return s;
  }

  /// Speaker i (1-based) as a (T, F) matrix.
  Tensor<Complex, 2> SourceMatrix(std::size_t speaker) const {
    Tensor<Complex, 2> s({data.dim(1), data.dim(2)});
    for (std::size_t t = 0; t < data.dim(1); ++t)
      for (std::size_t f = 0; f < data.dim(2); ++f) s(t, f) = data(speaker - 1, t, f);
    return s;
  }
};

inline SeparatedSpectrograms ApplyFilters(const BeamformerFilters &filters,
                                          const MultichannelSpectrogram &mix) {
  if (filters.num_channels != mix.num_channels())
    throw DataError("filter and mixture channel counts differ");
  if (filters.num_bins != mix.num_bins())
    throw DataError("filter and mixture bin counts differ");
  const std::size_t J = filters.num_speakers, T = mix.num_frames(), F = mix.num_bins(),
                    C = mix.num_channels();
  SeparatedSpectrograms out;
  out.config = mix.config;
  out.original_len_samples = mix.original_len_samples;
  out.data = Tensor<Complex, 3>({J, T, F});
  for (std::size_t i = 1; i <= J; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      const CVector &g = filters.at(i, f);
      for (std::size_t t = 0; t < T; ++t) {
        Complex acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += std::conj(g(c)) * mix.data(t, f, c);
        out.data(i - 1, t, f) = acc;
      }
    }
  return out;
}

enum class ReferenceKind { kFixedChannel, kMaxAveragePower };

struct ReferencePolicy {
  ReferenceKind kind = ReferenceKind::kFixedChannel;
  std::size_t channel = 0;

  static ReferencePolicy Fixed(std::size_t c) { return {ReferenceKind::kFixedChannel, c}; }
  static ReferencePolicy MaxAveragePower() { return {ReferenceKind::kMaxAveragePower, 0}; }
};

/// One-hot reference vector. MaxAveragePower picks the channel with the
/// largest mask-weighted power summed over sources, time and frequency; ties
/// go to the lowest index.
inline Eigen::VectorXd SelectReference(const MultichannelSpectrogram &mix,
                                       const MaskSet &masks, const ReferencePolicy &policy) {
  const std::size_t C = mix.num_channels();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(C));
  if (policy.kind == ReferenceKind::kFixedChannel) {
    if (policy.channel >= C) throw UsageError("reference channel out of range");
    u(static_cast<Eigen::Index>(policy.channel)) = 1.0;
    return u;
  }
  masks.CheckMatches(mix);
  std::size_t best = 0;
  double best_power = -1.0;
  for (std::size_t c = 0; c < C; ++c) {
    double p = 0.0;
    for (std::size_t i = 0; i < masks.num_sources(); ++i)
      for (std::size_t t = 0; t < mix.num_frames(); ++t)
        for (std::size_t f = 0; f < mix.num_bins(); ++f)
          p += masks.data(i, t, f, c) * std::norm(mix.data(t, f, c));
    if (p > best_power) {
      best_power = p;
      best = c;
    }
  }
  u(static_cast<Eigen::Index>(best)) = 1.0;
  return u;
}

/// Far-field unit-modulus steering vector for a plane wave arriving from
/// azimuth theta (radians, horizontal plane), phase-referenced to the array
/// centroid: d_c = exp(j 2 pi f <p_c - centroid, k> / v).
inline CVector SteeringVector(const std::vector<Point3> &mics, double azimuth_rad,
                              double freq_hz, double speed_mps) {
  Point3 centroid{0.0, 0.0, 0.0};
  for (const auto &p : mics)
    for (int k = 0; k < 3; ++k) centroid[k] += p[k] / static_cast<double>(mics.size());
  const double kx = std::cos(azimuth_rad), ky = std::sin(azimuth_rad);
  CVector d(static_cast<Eigen::Index>(mics.size()));
  for (std::size_t c = 0; c < mics.size(); ++c) {
    const double proj = (mics[c][0] - centroid[0]) * kx + (mics[c][1] - centroid[1]) * ky;
    d(static_cast<Eigen::Index>(c)) = std::polar(1.0, 2.0 * kPi * freq_hz * proj / speed_mps);
  }
  return d;
}

struct BeamPatternPoint {
  double azimuth_deg;
  double freq_hz;
  double magnitude;
};

/// |g^i(f)^H d(theta, f)| for theta = 0..359 degrees at each requested
/// frequency; the filter bin used is round(freq * fft_size / fs).
inline std::vector<BeamPatternPoint> BeamPattern(const BeamformerFilters &filters,
                                                 std::size_t speaker,
                                                 const std::vector<double> &freqs_hz,
                                                 const std::vector<Point3> &mics,
                                                 double speed_mps, const StftConfig &cfg) {
  if (speaker < 1 || speaker > filters.num_speakers)
    throw UsageError("speaker index out of range");
  if (mics.size() != filters.num_channels)
    throw UsageError("mic count does not match filter channel count");
  const double nyquist = cfg.sample_rate_hz / 2.0;
  std::vector<BeamPatternPoint> out;
  for (double fhz : freqs_hz) {
    if (!(fhz >= 0.0 && fhz <= nyquist))
      throw UsageError("frequency " + std::to_string(fhz) + " Hz is above Nyquist");
    const auto bin = static_cast<std::size_t>(std::llround(fhz * cfg.fft_size / cfg.sample_rate_hz));
    const CVector &g = filters.at(speaker, std::min(bin, filters.num_bins - 1));
    for (int deg = 0; deg < 360; ++deg) {
      const CVector d = SteeringVector(mics, deg * kPi / 180.0, fhz, speed_mps);
      out.push_back({static_cast<double>(deg), fhz, std::abs(g.dot(d))});
    }
  }
  return out;
}

inline void WriteBeamPatternCsv(const std::string &path,
                                const std::vector<BeamPatternPoint> &pts) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "azimuth_deg,freq_hz,magnitude\n" << std::setprecision(10);
  for (const auto &p : pts) os << p.azimuth_deg << ',' << p.freq_hz << ',' << p.magnitude << '\n';
}

/// PSD matrices as a (J + 1, F, C, C) tensor.
inline Tensor<Complex, 4> PsdToTensor(const PsdSet &psd) {
  Tensor<Complex, 4> t({psd.num_sources, psd.num_bins, psd.num_channels, psd.num_channels});
  for (std::size_t i = 0; i < psd.num_sources; ++i)
    for (std::size_t f = 0; f < psd.num_bins; ++f)
      for (std::size_t a = 0; a < psd.num_channels; ++a)
        for (std::size_t b = 0; b < psd.num_channels; ++b) t(i, f, a, b) = psd.at(i, f)(a, b);
  return t;
}

}  // namespace mimo

#endif  // MIMO_BEAMFORMING_HPP_
