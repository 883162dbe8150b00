// mimo/stft.hpp

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

// Short-time Fourier analysis / weighted overlap-add synthesis.
//
// Framing conventions:
//  - frames are left-aligned: frame t covers samples [t*hop, t*hop + win);
//    T = 1 + floor((len - win) / hop), no padding at either end;
//  - the window is the periodic Hann window of length win;
//  - each windowed frame occupies the first win entries of the FFT buffer and
//    the remaining fft_size - win entries are zero (tail padding);
//  - only bins 0 .. fft_size/2 are kept.

#ifndef MIMO_STFT_HPP_
#define MIMO_STFT_HPP_

#include <unsupported/Eigen/FFT>

#include <string>
#include <vector>

#include "mimo/common.hpp"
#include "mimo/wav.hpp"

namespace mimo {

enum class WindowKind { kHann };

struct StftConfig {
  int sample_rate_hz = 16000;
  int window_len_samples = 400;  // 25 ms
  int hop_samples = 160;         // 10 ms
  int fft_size = 512;
  WindowKind window_kind = WindowKind::kHann;

  std::size_t num_bins() const { return static_cast<std::size_t>(fft_size) / 2 + 1; }

  void Validate() const {
    if (sample_rate_hz <= 0 || window_len_samples <= 0 || hop_samples <= 0 ||
        fft_size <= 0)
      throw UsageError("STFT config values must be positive");
    if ((fft_size & (fft_size - 1)) != 0)
      throw UsageError("fft_size must be a power of two");
    if (!(hop_samples <= window_len_samples && window_len_samples <= fft_size))
      throw UsageError("STFT config requires hop <= window_len <= fft_size");
  }

  /// Frames produced for a signal of the given length (0 if shorter than a
  /// window).
  std::size_t NumFrames(std::size_t len) const {
    const auto win = static_cast<std::size_t>(window_len_samples);
    if (len < win) return 0;
    return 1 + (len - win) / static_cast<std::size_t>(hop_samples);
  }

  bool operator==(const StftConfig &) const = default;
};

/// Complex STFT tensor with axes (time, frequency, channel).
struct MultichannelSpectrogram {
  Tensor<Complex, 3> data;
  StftConfig config;
  std::size_t original_len_samples = 0;

  std::size_t num_frames() const { return data.dim(0); }
  std::size_t num_bins() const { return data.dim(1); }
  std::size_t num_channels() const { return data.dim(2); }

  bool SameShape(const MultichannelSpectrogram &o) const {
    return data.dims() == o.data.dims();
  }

  /// Copy of one channel as a (T, F) matrix.
  Tensor<Complex, 2> Channel(std::size_t c) const {
    Tensor<Complex, 2> out({num_frames(), num_bins()});
    for (std::size_t t = 0; t < num_frames(); ++t)
      for (std::size_t f = 0; f < num_bins(); ++f) out(t, f) = data(t, f, c);
    return out;
  }

  void Validate() const {
    config.Validate();
    if (num_frames() < 1 || num_channels() < 1)
      throw DataError("spectrogram needs T >= 1 and C >= 1");
    if (num_bins() != config.num_bins())
      throw DataError("spectrogram bin count does not match fft_size/2+1");
    for (const Complex &v : data.flat())
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        throw DataError("spectrogram contains non-finite entries");
  }
};

inline std::vector<double> PeriodicHann(int len) {
  std::vector<double> w(static_cast<std::size_t>(len));
  for (int n = 0; n < len; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / len);
  return w;
}

inline MultichannelSpectrogram Stft(const MultichannelWaveform &wave,
                                    const StftConfig &cfg) {
  cfg.Validate();
  wave.Validate();
  if (wave.sample_rate_hz != cfg.sample_rate_hz)
    throw DataError("waveform sample rate " + std::to_string(wave.sample_rate_hz) +
                    " does not match STFT config " +
                    std::to_string(cfg.sample_rate_hz));
  const std::size_t len = wave.num_samples();
  const std::size_t frames = cfg.NumFrames(len);
  if (frames == 0)
    throw DataError("waveform of " + std::to_string(len) +
                    " samples is shorter than one window (" +
                    std::to_string(cfg.window_len_samples) + ")");

  const auto win = static_cast<std::size_t>(cfg.window_len_samples);
  const auto hop = static_cast<std::size_t>(cfg.hop_samples);
  const std::size_t bins = cfg.num_bins();
  const std::vector<double> window = PeriodicHann(cfg.window_len_samples);

  MultichannelSpectrogram spec;
  spec.config = cfg;
  spec.original_len_samples = len;
  spec.data = Tensor<Complex, 3>({frames, bins, wave.num_channels()});

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<Complex> out;
  for (std::size_t c = 0; c < wave.num_channels(); ++c) {
    const std::vector<double> &x = wave.samples[c];
    for (std::size_t t = 0; t < frames; ++t) {
      std::fill(buf.begin(), buf.end(), 0.0);
      for (std::size_t n = 0; n < win; ++n) buf[n] = x[t * hop + n] * window[n];
      fft.fwd(out, buf);
      for (std::size_t f = 0; f < bins; ++f) spec.data(t, f, c) = out[f];
    }
  }
  return spec;
}

/// Weighted overlap-add inverse: y[n] = sum_t w[n - t*hop] * frame_t[n - t*hop]
/// / sum_t w^2[n - t*hop]. Samples with a vanishing denominator (the first
/// sample, where the periodic Hann is zero, and any tail not covered by a
/// frame) are set to zero; a vanishing denominator in the fully overlapped
/// interior is a NumericError. Outside the interior the denominator is floored
/// at 1e-3 of its peak: a modified spectrogram is not a consistent STFT, and
/// dividing by the near-zero window tails would amplify it by up to 1/w.
inline MultichannelWaveform Istft(const MultichannelSpectrogram &spec) {
  const StftConfig &cfg = spec.config;
  cfg.Validate();
  if (spec.num_bins() != cfg.num_bins())
    throw DataError("spectrogram bin count does not match its config");
  const std::size_t frames = spec.num_frames();
  const auto win = static_cast<std::size_t>(cfg.window_len_samples);
  const auto hop = static_cast<std::size_t>(cfg.hop_samples);
  const std::size_t covered = frames == 0 ? 0 : (frames - 1) * hop + win;
  const std::size_t len = std::max(spec.original_len_samples, covered);
  const std::vector<double> window = PeriodicHann(cfg.window_len_samples);

  std::vector<double> norm(len, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < win; ++n) norm[t * hop + n] += window[n] * window[n];

  // Tolerance relative to the steady-state overlap sum.
  double peak = 0.0;
  for (double v : norm) peak = std::max(peak, v);
  const double tiny = 1e-10 * std::max(peak, 1.0);
  const double edge_floor = 1e-3 * peak;
  if (covered > 2 * win) {
    for (std::size_t n = win; n + win <= covered; ++n)
      if (norm[n] <= tiny)
        throw NumericError("zero overlap-add normalization at interior sample " +
                           std::to_string(n));
  }

  MultichannelWaveform out =
      MultichannelWaveform::Zeros(spec.num_channels(), len, cfg.sample_rate_hz);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> half(cfg.num_bins());
  std::vector<double> frame;
  for (std::size_t c = 0; c < spec.num_channels(); ++c) {
    std::vector<double> &y = out.samples[c];
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < half.size(); ++f) half[f] = spec.data(t, f, c);
      fft.inv(frame, half, cfg.fft_size);
      for (std::size_t n = 0; n < win; ++n) y[t * hop + n] += window[n] * frame[n];
    }
    for (std::size_t n = 0; n < len; ++n) {
      if (norm[n] <= tiny) {
        y[n] = 0.0;
        continue;
      }
      const bool interior = n >= win && n + win <= covered;
      y[n] /= interior ? norm[n] : std::max(norm[n], edge_floor);
    }
    if (spec.original_len_samples > 0) y.resize(spec.original_len_samples);
  }
  return out;
}

}  // namespace mimo

#endif  // MIMO_STFT_HPP_
