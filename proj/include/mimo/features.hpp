// mimo/features.hpp

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

#ifndef MIMO_FEATURES_HPP_
#define MIMO_FEATURES_HPP_

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/common.hpp"

namespace mimo {

inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdFloor = 1e-5;

inline double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters, peak 1 (no area normalization), equally spaced on the
/// mel scale between fmin and fmax. The triangles are evaluated in the mel
/// domain at each FFT bin centre.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t num_bins = 0;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;
  std::vector<double> edges_mel;  // n_mels + 2 points
  Tensor<double, 2> weights;      // (n_mels, num_bins)

  static MelFilterbank Create(std::size_t n_mels, int fft_size, int sample_rate_hz,
                              double fmin_hz = 0.0, double fmax_hz = -1.0) {
    if (n_mels == 0) throw UsageError("filterbank needs at least one filter");
    const double nyquist = sample_rate_hz / 2.0;
    if (fmax_hz < 0.0) fmax_hz = nyquist;
    if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= nyquist))
      throw UsageError("filterbank needs 0 <= fmin < fmax <= Nyquist");
    MelFilterbank fb;
    fb.n_mels = n_mels;
    fb.num_bins = static_cast<std::size_t>(fft_size) / 2 + 1;
    fb.fmin_hz = fmin_hz;
    fb.fmax_hz = fmax_hz;
    const double lo = HzToMel(fmin_hz), hi = HzToMel(fmax_hz);
    for (std::size_t k = 0; k < n_mels + 2; ++k)
      fb.edges_mel.push_back(lo + (hi - lo) * static_cast<double>(k) / (n_mels + 1));
    fb.weights = Tensor<double, 2>({n_mels, fb.num_bins});
    for (std::size_t b = 0; b < fb.num_bins; ++b) {
      const double mel = HzToMel(static_cast<double>(b) * sample_rate_hz / fft_size);
      for (std::size_t m = 0; m < n_mels; ++m) {
        const double l = fb.edges_mel[m], c = fb.edges_mel[m + 1], r = fb.edges_mel[m + 2];
        double w = 0.0;
        if (mel > l && mel <= c) w = (mel - l) / (c - l);
        else if (mel > c && mel < r) w = (r - mel) / (r - c);
        fb.weights(m, b) = w;
      }
    }
    return fb;
  }
};

/// log(fb . |S| + floor) per frame. Input is a (T, F) complex spectrogram;
/// output is (T, n_mels).
inline Tensor<double, 2> LogMel(const Tensor<Complex, 2> &spec, const MelFilterbank &fb) {
  if (spec.dim(1) != fb.num_bins)
    throw DataError("spectrogram has " + std::to_string(spec.dim(1)) +
                    " bins, filterbank expects " + std::to_string(fb.num_bins));
  const std::size_t T = spec.dim(0);
  Tensor<double, 2> out({T, fb.n_mels});
  std::vector<double> mag(fb.num_bins);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < fb.num_bins; ++b) mag[b] = std::abs(spec(t, b));
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t b = 0; b < fb.num_bins; ++b) acc += fb.weights(m, b) * mag[b];
      out(t, m) = std::log(acc + kLogFloor);
    }
  }
  return out;
}

/// Streaming per-dimension mean / variance (Welford, with Chan's merge for
/// shards).
class MvnAccumulator {
 public:
  explicit MvnAccumulator(std::size_t dim = 0) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  std::size_t dim() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }

  void AddFrame(std::span<const double> x) {
    if (mean_.empty() && count_ == 0) {
      mean_.assign(x.size(), 0.0);
      m2_.assign(x.size(), 0.0);
    }
    if (x.size() != mean_.size()) throw DataError("feature dimension mismatch");
    ++count_;
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double delta = x[d] - mean_[d];
      mean_[d] += delta / static_cast<double>(count_);
      m2_[d] += delta * (x[d] - mean_[d]);
    }
  }

  void Add(const Tensor<double, 2> &feats) {
    for (std::size_t t = 0; t < feats.dim(0); ++t)
      AddFrame(feats.flat().subspan(t * feats.dim(1), feats.dim(1)));
  }

  void Merge(const MvnAccumulator &o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    if (o.dim() != dim()) throw DataError("feature dimension mismatch in merge");
    const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
    const double n = na + nb;
    for (std::size_t d = 0; d < dim(); ++d) {
      const double delta = o.mean_[d] - mean_[d];
      mean_[d] += delta * nb / n;
      m2_[d] += o.m2_[d] + delta * delta * na * nb / n;
    }
    count_ += o.count_;
  }

  const std::vector<double> &mean() const { return mean_; }
  /// Population variance.
  std::vector<double> variance() const {
    std::vector<double> v(dim(), 0.0);
    if (count_ == 0) return v;
    for (std::size_t d = 0; d < dim(); ++d) v[d] = m2_[d] / static_cast<double>(count_);
    return v;
  }

 private:
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

/// Corpus-level normalization statistics.
struct MvnStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::uint64_t frame_count = 0;
  std::vector<std::uint8_t> std_floored;

  std::size_t dim() const { return mean.size(); }

  static MvnStats FromAccumulator(const MvnAccumulator &acc) {
    MvnStats s;
    s.mean = acc.mean();
    s.frame_count = acc.count();
    const auto var = acc.variance();
    s.std.resize(var.size());
    s.std_floored.assign(var.size(), 0);
    for (std::size_t d = 0; d < var.size(); ++d) {
      const double sd = std::sqrt(var[d]);
      if (sd < kStdFloor) {
        s.std[d] = kStdFloor;
        s.std_floored[d] = 1;
      } else {
        s.std[d] = sd;
      }
    }
    return s;
  }

  nlohmann::json ToJson() const {
    return {{"n_mels", dim()}, {"mean", mean}, {"std", std}, {"frame_count", frame_count}};
  }

  static MvnStats FromJson(const nlohmann::json &j) {
    MvnStats s;
    try {
      s.mean = j.at("mean").get<std::vector<double>>();
      s.std = j.at("std").get<std::vector<double>>();
      s.frame_count = j.at("frame_count").get<std::uint64_t>();
      if (j.at("n_mels").get<std::size_t>() != s.mean.size() || s.std.size() != s.mean.size())
        throw DataError("MVN stats dimensions are inconsistent");
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(std::string("bad MVN stats: ") + ex.what());
    }
    s.std_floored.assign(s.std.size(), 0);
    for (std::size_t d = 0; d < s.std.size(); ++d) {
      if (!(s.std[d] > 0.0)) throw DataError("MVN std entries must be positive");
      if (s.std[d] < kStdFloor) {
        s.std[d] = kStdFloor;
        s.std_floored[d] = 1;
      }
    }
    return s;
  }

  void Save(const std::string &path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << ToJson().dump(2) << '\n';
  }

  static MvnStats Load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(path + ": " + ex.what());
    }
    return FromJson(j);
  }
};

inline Tensor<double, 2> MvnApply(const Tensor<double, 2> &feats, const MvnStats &stats) {
  if (stats.frame_count < 2) throw DataError("MVN stats need at least two frames");
  if (feats.dim(1) != stats.dim()) throw DataError("feature dimension mismatch");
  Tensor<double, 2> out(feats.dims());
  for (std::size_t t = 0; t < feats.dim(0); ++t)
    for (std::size_t d = 0; d < feats.dim(1); ++d)
      out(t, d) = (feats(t, d) - stats.mean[d]) / stats.std[d];
  return out;
}

inline Tensor<double, 2> MvnInvert(const Tensor<double, 2> &normed, const MvnStats &stats) {
  if (normed.dim(1) != stats.dim()) throw DataError("feature dimension mismatch");
  Tensor<double, 2> out(normed.dims());
  for (std::size_t t = 0; t < normed.dim(0); ++t)
    for (std::size_t d = 0; d < normed.dim(1); ++d)
      out(t, d) = normed(t, d) * stats.std[d] + stats.mean[d];
  return out;
}

}  // namespace mimo

#endif  // MIMO_FEATURES_HPP_
