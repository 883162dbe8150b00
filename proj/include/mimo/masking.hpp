// mimo/masking.hpp

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

#ifndef MIMO_MASKING_HPP_
#define MIMO_MASKING_HPP_

#include <algorithm>
#include <concepts>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/common.hpp"
#include "mimo/stft.hpp"

namespace mimo {

/// Per-source, per-channel time-frequency masks with axes
/// (source, time, frequency, channel). Source 0 is the noise component,
/// sources 1..J the speakers. Masks need not sum to one across sources.
struct MaskSet {
  Tensor<double, 4> data;

  std::size_t num_speakers() const { return data.dim(0) == 0 ? 0 : data.dim(0) - 1; }
  std::size_t num_sources() const { return data.dim(0); }
  std::size_t num_frames() const { return data.dim(1); }
  std::size_t num_bins() const { return data.dim(2); }
  std::size_t num_channels() const { return data.dim(3); }

  /// Range check; out-of-range values are an error, never clamped here.
  void Validate() const {
    if (num_sources() < 2) throw DataError("mask set needs noise plus >= 1 speaker");
    for (double v : data.flat())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("mask value outside [0, 1]");
  }

  void CheckMatches(const MultichannelSpectrogram &mix) const {
    if (num_frames() != mix.num_frames() || num_bins() != mix.num_bins() ||
        num_channels() != mix.num_channels())
      throw DataError("mask set shape does not match the mixture spectrogram");
  }
};

enum class OracleMaskKind { kIrm, kIbm };

inline constexpr double kMaskEpsilon = 1e-10;

/// Oracle masks from per-speaker reference spectrograms. The noise component
/// is the residual mix - sum(refs). IRM is the magnitude ratio
/// |S^i| / (sum_j |S^j| + eps) with j running over noise and speakers; IBM
/// marks the largest-magnitude source (lowest index on ties) wherever any
/// source is nonzero.
inline MaskSet OracleMasks(const std::vector<MultichannelSpectrogram> &refs,
                           const MultichannelSpectrogram &mix, OracleMaskKind kind) {
  if (refs.empty()) throw UsageError("oracle masks need at least one reference");
  for (const auto &r : refs)
    if (!r.SameShape(mix))
      throw DataError("reference spectrogram shape does not match the mixture");
  const std::size_t T = mix.num_frames(), F = mix.num_bins(), C = mix.num_channels();
  const std::size_t S = refs.size() + 1;
  MaskSet masks{Tensor<double, 4>({S, T, F, C})};
  std::vector<double> mag(S);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < C; ++c) {
        Complex residual = mix.data(t, f, c);
        for (std::size_t j = 0; j < refs.size(); ++j) {
          residual -= refs[j].data(t, f, c);
          mag[j + 1] = std::abs(refs[j].data(t, f, c));
        }
        mag[0] = std::abs(residual);
        if (kind == OracleMaskKind::kIrm) {
          double denom = kMaskEpsilon;
          for (double m : mag) denom += m;
          for (std::size_t i = 0; i < S; ++i)
            masks.data(i, t, f, c) = std::clamp(mag[i] / denom, 0.0, 1.0);
        } else {
          const auto best = std::max_element(mag.begin(), mag.end());
          if (*best > 0.0) masks.data(best - mag.begin(), t, f, c) = 1.0;
        }
      }
  return masks;
}

/// A mask estimator maps one channel's (T, F) complex spectrogram to masks of
/// shape (J + 1, T, F). It sees only that channel.
template <typename E>
concept MaskEstimator = requires(const E &e, const Tensor<Complex, 2> &x) {
  { e.num_speakers() } -> std::convertible_to<std::size_t>;
  { e.Estimate(x) } -> std::same_as<Tensor<double, 3>>;
};

/// Runs the estimator once per channel and stacks the results. Output shape
/// or range violations are errors.
template <MaskEstimator E>
MaskSet ApplyMaskNet(const E &estimator, const MultichannelSpectrogram &mix) {
  const std::size_t T = mix.num_frames(), F = mix.num_bins(), C = mix.num_channels();
  const std::size_t S = static_cast<std::size_t>(estimator.num_speakers()) + 1;
  if (S < 2) throw UsageError("mask estimator must model at least one speaker");
  MaskSet masks{Tensor<double, 4>({S, T, F, C})};
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor<double, 3> m = estimator.Estimate(mix.Channel(c));
    if (m.dims() != Tensor<double, 3>::Dims{S, T, F})
      throw DataError("mask estimator returned a wrong shape for channel " +
                      std::to_string(c));
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t f = 0; f < F; ++f) {
          const double v = m(i, t, f);
          if (!(v >= 0.0 && v <= 1.0))
            throw DataError("mask estimator output outside [0, 1] on channel " +
                            std::to_string(c));
          masks.data(i, t, f, c) = v;
        }
  }
  return masks;
}

/// Plotting aid: each (source, frequency, channel) mask track divided by its
/// median over time. Results may exceed 1 and must not be fed back into the
/// beamformer.
inline Tensor<double, 4> MedianNormalizedForPlot(const MaskSet &masks) {
  Tensor<double, 4> out = masks.data;
  const std::size_t T = masks.num_frames();
  std::vector<double> track(T);
  for (std::size_t i = 0; i < masks.num_sources(); ++i)
    for (std::size_t f = 0; f < masks.num_bins(); ++f)
      for (std::size_t c = 0; c < masks.num_channels(); ++c) {
        for (std::size_t t = 0; t < T; ++t) track[t] = masks.data(i, t, f, c);
        std::nth_element(track.begin(), track.begin() + T / 2, track.end());
        double med = track[T / 2];
        if (T % 2 == 0 && T > 0) {
          const double lower = *std::max_element(track.begin(), track.begin() + T / 2);
          med = 0.5 * (med + lower);
        }
        if (med <= 0.0) continue;
        for (std::size_t t = 0; t < T; ++t) out(i, t, f, c) = masks.data(i, t, f, c) / med;
      }
  return out;
}

/// Demonstration estimator: per-bin affine map of the frame-normalized log
/// magnitude followed by a sigmoid,
///   m^i_{t,f} = sigmoid(a_{i,f} * z_{t,f} + b_{i,f}),
///   z_{t,f} = log(|X_{t,f}| + 1e-8) - mean_f' log(|X_{t,f'}| + 1e-8).
/// Trained by full-batch gradient descent on mask MSE. Stateless at inference,
/// so concurrent per-channel calls are safe.
class TinyMaskEstimator {
 public:
  TinyMaskEstimator() = default;
  TinyMaskEstimator(std::size_t num_speakers, std::size_t num_bins)
      : speakers_(num_speakers),
        bins_(num_bins),
        scale_({num_speakers + 1, num_bins}, 0.0),
        bias_({num_speakers + 1, num_bins}, 0.0) {}

  std::size_t num_speakers() const { return speakers_; }
  std::size_t num_bins() const { return bins_; }

  Tensor<double, 3> Estimate(const Tensor<Complex, 2> &x) const {
    if (x.dim(1) != bins_) throw DataError("estimator bin count mismatch");
    const Tensor<double, 2> z = Features(x);
    const std::size_t T = x.dim(0);
    Tensor<double, 3> m({speakers_ + 1, T, bins_});
    for (std::size_t i = 0; i <= speakers_; ++i)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t f = 0; f < bins_; ++f)
          m(i, t, f) = Sigmoid(scale_(i, f) * z(t, f) + bias_(i, f));
    return m;
  }

  struct Example {
    Tensor<Complex, 2> spectrogram;  // (T, F)
    Tensor<double, 3> target;        // (J + 1, T, F)
  };

  /// Returns the mean squared error after each epoch.
  std::vector<double> Train(const std::vector<Example> &data, int epochs,
                            double learning_rate) {
    std::vector<Tensor<double, 2>> feats;
    std::size_t count = 0;
    for (const auto &ex : data) {
      feats.push_back(Features(ex.spectrogram));
      count += ex.target.size();
    }
    if (count == 0) throw DataError("no training data for the mask estimator");
    std::vector<double> history;
    for (int e = 0; e < epochs; ++e) {
      Tensor<double, 2> ga(scale_.dims()), gb(bias_.dims());
      double loss = 0.0;
      for (std::size_t k = 0; k < data.size(); ++k) {
        const auto &z = feats[k];
        const auto &y = data[k].target;
        for (std::size_t i = 0; i <= speakers_; ++i)
          for (std::size_t t = 0; t < z.dim(0); ++t)
            for (std::size_t f = 0; f < bins_; ++f) {
              const double m = Sigmoid(scale_(i, f) * z(t, f) + bias_(i, f));
              const double r = m - y(i, t, f);
              loss += r * r;
              const double g = 2.0 * r * m * (1.0 - m);
              ga(i, f) += g * z(t, f);
              gb(i, f) += g;
            }
      }
      history.push_back(loss / count);
      const double step = learning_rate * static_cast<double>(bins_ * (speakers_ + 1)) / count;
      for (std::size_t n = 0; n < scale_.size(); ++n) {
        scale_.flat()[n] -= step * ga.flat()[n];
        bias_.flat()[n] -= step * gb.flat()[n];
      }
    }
    return history;
  }

  nlohmann::json ToJson() const {
    nlohmann::json j;
    j["kind"] = "tiny_affine_sigmoid";
    j["num_speakers"] = speakers_;
    j["num_bins"] = bins_;
    j["scale"] = std::vector<double>(scale_.flat().begin(), scale_.flat().end());
    j["bias"] = std::vector<double>(bias_.flat().begin(), bias_.flat().end());
    return j;
  }

  static TinyMaskEstimator FromJson(const nlohmann::json &j) {
    try {
      TinyMaskEstimator e(j.at("num_speakers").get<std::size_t>(),
                          j.at("num_bins").get<std::size_t>());
      const auto a = j.at("scale").get<std::vector<double>>();
      const auto b = j.at("bias").get<std::vector<double>>();
      if (a.size() != e.scale_.size() || b.size() != e.bias_.size())
        throw DataError("estimator parameter sizes do not match");
      std::copy(a.begin(), a.end(), e.scale_.flat().begin());
      std::copy(b.begin(), b.end(), e.bias_.flat().begin());
      return e;
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(std::string("bad estimator file: ") + ex.what());
    }
  }

  static TinyMaskEstimator Load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open estimator file " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(path + ": " + ex.what());
    }
    return FromJson(j);
  }

 private:
  static double Sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  Tensor<double, 2> Features(const Tensor<Complex, 2> &x) const {
    const std::size_t T = x.dim(0), F = x.dim(1);
    Tensor<double, 2> z({T, F});
    for (std::size_t t = 0; t < T; ++t) {
      double mean = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        z(t, f) = std::log(std::abs(x(t, f)) + 1e-8);
        mean += z(t, f);
      }
      mean /= static_cast<double>(F);
      for (std::size_t f = 0; f < F; ++f) z(t, f) -= mean;
    }
    return z;
  }

  std::size_t speakers_ = 0;
  std::size_t bins_ = 0;
  Tensor<double, 2> scale_;
  Tensor<double, 2> bias_;
};

static_assert(MaskEstimator<TinyMaskEstimator>);

}  // namespace mimo

#endif  // MIMO_MASKING_HPP_
