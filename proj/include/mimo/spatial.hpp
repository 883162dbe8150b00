// mimo/spatial.hpp

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

// Spatialization of dry utterances into multi-microphone images and mixing at
// a requested inter-speaker level ratio.
//
// Propagation model: every path (direct, or a shoebox image source) adds the
// dry signal delayed by d / c seconds and scaled by 1 / (4 pi d), times
// sqrt(1 - absorption) per wall reflection. Fractional delays use a 31-tap
// Hann-windowed sinc (support |k - frac| < 16), which reduces to a pure
// integer shift when the delay is an integer number of samples.

#ifndef MIMO_SPATIAL_HPP_
#define MIMO_SPATIAL_HPP_

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mimo/common.hpp"
#include "mimo/wav.hpp"

namespace mimo {

using Point3 = std::array<double, 3>;

inline double Distance(const Point3 &a, const Point3 &b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

enum class PropagationMode { kAnechoic, kImageMethod };

struct RoomScene {
  Point3 room_dims_m{6.0, 5.0, 3.0};
  std::vector<Point3> source_positions_m;
  std::vector<Point3> mic_positions_m;
  double speed_of_sound_mps = 343.0;
  PropagationMode mode = PropagationMode::kAnechoic;
  int image_order = 0;       // kImageMethod only, 0..3
  double absorption = 0.5;   // kImageMethod only, in (0, 1)

  void Validate() const {
    for (double d : room_dims_m)
      if (!(d > 0.0)) throw UsageError("room dimensions must be positive");
    if (mic_positions_m.empty()) throw UsageError("scene needs at least one mic");
    if (source_positions_m.empty())
      throw UsageError("scene needs at least one source");
    if (!(speed_of_sound_mps > 0.0))
      throw UsageError("speed of sound must be positive");
    auto inside = [&](const Point3 &p) {
      for (int k = 0; k < 3; ++k)
        if (!(p[k] > 0.0 && p[k] < room_dims_m[k])) return false;
      return true;
    };
    for (const auto &p : source_positions_m)
      if (!inside(p)) throw UsageError("source position outside the room");
    for (const auto &p : mic_positions_m)
      if (!inside(p)) throw UsageError("mic position outside the room");
    std::vector<Point3> all = source_positions_m;
    all.insert(all.end(), mic_positions_m.begin(), mic_positions_m.end());
    for (std::size_t a = 0; a < all.size(); ++a)
      for (std::size_t b = a + 1; b < all.size(); ++b)
        if (Distance(all[a], all[b]) < 1e-9)
          throw UsageError("scene points must be pairwise distinct");
    if (mode == PropagationMode::kImageMethod) {
      if (image_order < 0 || image_order > 3)
        throw UsageError("image method order must be in [0, 3]");
      if (!(absorption > 0.0 && absorption < 1.0))
        throw UsageError("absorption must be in (0, 1)");
    }
  }
};

/// One propagation path from a source to a mic.
struct PathTap {
  double delay_samples;
  double gain;
};

namespace spatial_internal {

inline constexpr int kSincHalf = 15;

/// Adds gain * x delayed by delay_samples into y (outputs before index 0 are
/// dropped).
inline void AddDelayed(std::span<const double> x, double delay_samples, double gain,
                       std::vector<double> &y) {
  const double whole = std::floor(delay_samples);
  const double frac = delay_samples - whole;
  const auto shift = static_cast<long>(whole);
  std::array<double, 2 * kSincHalf + 1> h{};
  for (int k = -kSincHalf; k <= kSincHalf; ++k) {
    const double u = k - frac;
    const double sinc = u == 0.0 ? 1.0 : std::sin(kPi * u) / (kPi * u);
    const double win = 0.5 * (1.0 + std::cos(kPi * u / (kSincHalf + 1)));
    h[k + kSincHalf] = gain * sinc * win;
  }
  if (frac == 0.0) {
    std::fill(h.begin(), h.end(), 0.0);
    h[kSincHalf] = gain;
  }
  const long n_out = static_cast<long>(y.size());
  for (std::size_t m = 0; m < x.size(); ++m) {
    if (x[m] == 0.0) continue;
    for (int k = -kSincHalf; k <= kSincHalf; ++k) {
      const long n = static_cast<long>(m) + shift + k;
      if (n >= 0 && n < n_out) y[n] += x[m] * h[k + kSincHalf];
    }
  }
}

}  // namespace spatial_internal

/// Propagation paths from source `source_index` to `mic`, direct path first.
inline std::vector<PathTap> PropagationPaths(const RoomScene &scene,
                                             std::size_t source_index,
                                             std::size_t mic, int sample_rate_hz) {
  const Point3 &s = scene.source_positions_m.at(source_index);
  const Point3 &r = scene.mic_positions_m.at(mic);
  const double direct = Distance(s, r);
  if (direct < 1e-9)
    throw UsageError("source " + std::to_string(source_index) +
                     " coincides with mic " + std::to_string(mic));
  const double fs = sample_rate_hz;
  const double c = scene.speed_of_sound_mps;
  std::vector<PathTap> taps;
  taps.push_back({direct / c * fs, 1.0 / (4.0 * kPi * direct)});
  if (scene.mode != PropagationMode::kImageMethod || scene.image_order == 0)
    return taps;

  const int order = scene.image_order;
  const double beta = std::sqrt(1.0 - scene.absorption);
  for (int nx = -order; nx <= order; ++nx)
    for (int ny = -order; ny <= order; ++ny)
      for (int nz = -order; nz <= order; ++nz)
        for (int q = 0; q < 8; ++q) {
          const std::array<int, 3> n{nx, ny, nz};
          const std::array<int, 3> qq{q & 1, (q >> 1) & 1, (q >> 2) & 1};
          int reflections = 0;
          Point3 img{};
          for (int k = 0; k < 3; ++k) {
            img[k] = (1 - 2 * qq[k]) * s[k] + 2.0 * n[k] * scene.room_dims_m[k];
            reflections += std::abs(n[k] - qq[k]) + std::abs(n[k]);
          }
          if (reflections == 0 || reflections > order) continue;
          const double d = Distance(img, r);
          taps.push_back({d / c * fs, std::pow(beta, reflections) / (4.0 * kPi * d)});
        }
  return taps;
}

/// Spatial image of a mono dry signal at every mic of the scene. The output
/// length is the dry length plus the longest path delay plus the sinc
/// half-width, so every path is fully contained.
inline MultichannelWaveform SimulatePropagation(std::span<const double> dry,
                                                int sample_rate_hz,
                                                const RoomScene &scene,
                                                std::size_t source_index) {
  scene.Validate();
  if (source_index >= scene.source_positions_m.size())
    throw UsageError("source index out of range");
  for (double v : dry)
    if (!std::isfinite(v)) throw DataError("dry signal has non-finite samples");

  const std::size_t mics = scene.mic_positions_m.size();
  std::vector<std::vector<PathTap>> paths(mics);
  double max_delay = 0.0;
  for (std::size_t m = 0; m < mics; ++m) {
    paths[m] = PropagationPaths(scene, source_index, m, sample_rate_hz);
    for (const auto &p : paths[m]) max_delay = std::max(max_delay, p.delay_samples);
  }
  const std::size_t len = dry.size() + static_cast<std::size_t>(std::ceil(max_delay)) +
                          spatial_internal::kSincHalf + 1;
  MultichannelWaveform out = MultichannelWaveform::Zeros(mics, len, sample_rate_hz);
  for (std::size_t m = 0; m < mics; ++m)
    for (const auto &p : paths[m])
      spatial_internal::AddDelayed(dry, p.delay_samples, p.gain, out.samples[m]);
  return out;
}

inline double ChannelEnergy(const MultichannelWaveform &w, std::size_t channel) {
  double e = 0.0;
  for (double v : w.samples.at(channel)) e += v * v;
  return e;
}

/// A spatialized mixture together with the per-source reference images it is
/// the sum of.
struct MixtureRecord {
  std::string id;
  MultichannelWaveform mixture;
  std::vector<MultichannelWaveform> references;  // one image per speaker
  std::optional<MultichannelWaveform> noise;
  double snr_db = 0.0;
  std::vector<double> source_gains;  // scale applied to each image
  std::vector<std::string> transcripts;
  std::vector<std::string> source_ids;
  RoomScene scene;
};

namespace spatial_internal {

inline MultichannelWaveform Padded(const MultichannelWaveform &w, std::size_t len) {
  MultichannelWaveform out = w;
  for (auto &ch : out.samples) ch.resize(len, 0.0);
  return out;
}

}  // namespace spatial_internal

/// Mixes J >= 2 images. Image k > 0 is rescaled so that
/// 10 log10(E_0 / E_k) = level_db[k - 1] at ref_channel; image 0 keeps unit
/// gain. Shorter images are zero-padded. The mixture is accumulated in source
/// order, so subtracting the stored references in the same order yields zero.
inline MixtureRecord MixAtLevels(const std::vector<MultichannelWaveform> &images,
                                 const std::vector<double> &level_db,
                                 std::size_t ref_channel) {
  if (images.size() < 2) throw UsageError("mixing needs at least two sources");
  if (level_db.size() + 1 != images.size())
    throw UsageError("need one level per non-first source");
  std::size_t len = 0;
  for (const auto &im : images) {
    im.Validate();
    if (im.sample_rate_hz != images.front().sample_rate_hz)
      throw DataError("source images have different sample rates");
    if (im.num_channels() != images.front().num_channels())
      throw DataError("source images have different channel counts");
    len = std::max(len, im.num_samples());
  }
  if (ref_channel >= images.front().num_channels())
    throw UsageError("reference channel out of range");

  MixtureRecord rec;
  const double e0 = ChannelEnergy(images[0], ref_channel);
  if (e0 <= 0.0) throw DataError("source 0 is silent at the reference channel");
  rec.source_gains.push_back(1.0);
  rec.references.push_back(spatial_internal::Padded(images[0], len));
  for (std::size_t k = 1; k < images.size(); ++k) {
    const double lvl = level_db[k - 1];
    if (!std::isfinite(lvl)) throw UsageError("SNR must be finite");
    const double ek = ChannelEnergy(images[k], ref_channel);
    if (ek <= 0.0)
      throw DataError("source " + std::to_string(k) +
                      " is silent at the reference channel");
    const double gain = std::sqrt(e0 / (ek * std::pow(10.0, lvl / 10.0)));
    MultichannelWaveform scaled = spatial_internal::Padded(images[k], len);
    if (gain != 1.0)
      for (auto &ch : scaled.samples)
        for (double &v : ch) v *= gain;
    rec.source_gains.push_back(gain);
    rec.references.push_back(std::move(scaled));
  }
  rec.snr_db = level_db.front();
  rec.mixture = rec.references.front();
  for (std::size_t k = 1; k < rec.references.size(); ++k)
    for (std::size_t c = 0; c < rec.mixture.num_channels(); ++c)
      for (std::size_t n = 0; n < len; ++n)
        rec.mixture.samples[c][n] += rec.references[k].samples[c][n];
  return rec;
}

/// Two-speaker mix: image b is rescaled so that the a-to-b energy ratio at
/// ref_channel equals snr_db.
inline MixtureRecord MixAtSnr(const MultichannelWaveform &images_a,
                              const MultichannelWaveform &images_b, double snr_db,
                              std::size_t ref_channel) {
  return MixAtLevels({images_a, images_b}, {snr_db}, ref_channel);
}

/// Adds spatially white Gaussian noise whose energy at ref_channel is
/// noise_snr_db below the summed speech energy there.
inline void AddWhiteNoise(MixtureRecord &rec, double noise_snr_db,
                          std::size_t ref_channel, std::mt19937_64 &rng) {
  const std::size_t len = rec.mixture.num_samples();
  MultichannelWaveform noise = MultichannelWaveform::Zeros(
      rec.mixture.num_channels(), len, rec.mixture.sample_rate_hz);
  for (auto &ch : noise.samples)
    for (double &v : ch) v = Gaussian(rng);
  const double speech = ChannelEnergy(rec.mixture, ref_channel);
  const double e_noise = ChannelEnergy(noise, ref_channel);
  if (speech <= 0.0 || e_noise <= 0.0) throw DataError("cannot scale noise");
  const double g = std::sqrt(speech / (e_noise * std::pow(10.0, noise_snr_db / 10.0)));
  for (std::size_t c = 0; c < noise.num_channels(); ++c)
    for (std::size_t n = 0; n < len; ++n) {
      noise.samples[c][n] *= g;
      rec.mixture.samples[c][n] += noise.samples[c][n];
    }
  rec.noise = std::move(noise);
}

/// Speech-like test signal: syllables of formant-shaped harmonic tones with an
/// f0 contour, occasional noise bursts and short pauses, normalized to an RMS
/// of 0.05. Not speech, but sparse and non-stationary in the same way, which
/// is what mask-based separation relies on.
inline std::vector<double> SynthesizeUtterance(double duration_s, int sample_rate_hz,
                                               std::mt19937_64 &rng) {
  const auto len = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  std::vector<double> y(len, 0.0);
  const double fs = sample_rate_hz;
  const double nyquist = fs / 2.0;
  const double f0_base = UniformIn(rng, 90.0, 240.0);
  std::size_t pos = 0;
  while (pos < len) {
    const auto syl = static_cast<std::size_t>(UniformIn(rng, 0.12, 0.30) * fs);
    const double kind = Uniform01(rng);
    const std::size_t end = std::min(len, pos + syl);
    const std::size_t n_syl = end - pos;
    if (kind < 0.15) {  // pause
      pos = end;
      continue;
    }
    if (kind < 0.30) {  // fricative-like burst: differenced white noise
      double prev = 0.0;
      for (std::size_t n = 0; n < n_syl; ++n) {
        const double env = std::sin(kPi * n / n_syl);
        const double w = Gaussian(rng);
        y[pos + n] += 0.3 * env * (w - prev);
        prev = w;
      }
      pos = end;
      continue;
    }
    const std::array<double, 3> formant{UniformIn(rng, 300.0, 900.0),
                                        UniformIn(rng, 900.0, 2500.0),
                                        UniformIn(rng, 2500.0, 3800.0)};
    const std::array<double, 3> bw{UniformIn(rng, 80.0, 160.0),
                                   UniformIn(rng, 100.0, 200.0),
                                   UniformIn(rng, 150.0, 300.0)};
    const double f0_start = f0_base * UniformIn(rng, 0.85, 1.2);
    const double f0_end = f0_base * UniformIn(rng, 0.85, 1.2);
    const int n_harm = static_cast<int>(nyquist * 0.9 / std::max(f0_start, f0_end));
    std::vector<double> phase(static_cast<std::size_t>(n_harm), 0.0);
    for (double &p : phase) p = UniformIn(rng, 0.0, 2.0 * kPi);
    for (std::size_t n = 0; n < n_syl; ++n) {
      const double frac = static_cast<double>(n) / n_syl;
      const double f0 = f0_start + (f0_end - f0_start) * frac;
      const double env = std::pow(std::sin(kPi * frac), 0.5);
      double acc = 0.0;
      for (int h = 1; h <= n_harm; ++h) {
        const double fh = h * f0;
        if (fh >= nyquist * 0.95) break;
        double amp = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double z = (fh - formant[k]) / bw[k];
          amp += std::exp(-0.5 * z * z) / (k + 1);
        }
        amp += 0.02 / h;
        phase[h - 1] += 2.0 * kPi * fh / fs;
        acc += amp * std::sin(phase[h - 1]);
      }
      y[pos + n] += env * acc;
    }
    pos = end;
  }
  double energy = 0.0;
  for (double v : y) energy += v * v;
  if (energy > 0.0) {
    const double g = 0.05 / std::sqrt(energy / static_cast<double>(len));
    for (double &v : y) v *= g;
  }
  return y;
}

}  // namespace mimo

#endif  // MIMO_SPATIAL_HPP_
