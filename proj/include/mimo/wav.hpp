// mimo/wav.hpp

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

#ifndef MIMO_WAV_HPP_
#define MIMO_WAV_HPP_

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mimo/common.hpp"

namespace mimo {

/// Real samples stored channel-major: samples[c][n].
struct MultichannelWaveform {
  std::vector<std::vector<double>> samples;
  int sample_rate_hz = 16000;

  std::size_t num_channels() const { return samples.size(); }
  std::size_t num_samples() const {
    return samples.empty() ? 0 : samples.front().size();
  }

  /// Throws DataError unless all channels have equal length and all samples
  /// are finite.
  void Validate() const {
    if (samples.empty()) throw DataError("waveform has no channels");
    const std::size_t n = samples.front().size();
    for (std::size_t c = 0; c < samples.size(); ++c) {
      if (samples[c].size() != n)
        throw DataError("waveform channels have unequal lengths");
      for (double v : samples[c])
        if (!std::isfinite(v))
          throw DataError("waveform channel " + std::to_string(c) +
                          " contains non-finite samples");
    }
  }

  static MultichannelWaveform Zeros(std::size_t channels, std::size_t length,
                                    int sample_rate_hz) {
    MultichannelWaveform w;
    w.samples.assign(channels, std::vector<double>(length, 0.0));
    w.sample_rate_hz = sample_rate_hz;
    return w;
  }
};

enum class WavSampleFormat { kPcm16, kFloat32 };

namespace wav_internal {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

template <typename T>
void Put(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T Get(std::istream &is, const std::string &path) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw DataError(path + ": truncated WAV header");
  return v;
}

}  // namespace wav_internal

/// Writes interleaved PCM16 or IEEE float32 samples. PCM16 clips to [-1, 1).
inline void WriteWav(const std::string &path, const MultichannelWaveform &wave,
                     WavSampleFormat fmt = WavSampleFormat::kFloat32) {
  using wav_internal::Put;
  wave.Validate();
  const std::uint16_t channels = static_cast<std::uint16_t>(wave.num_channels());
  const std::uint32_t frames = static_cast<std::uint32_t>(wave.num_samples());
  const std::uint16_t bits = fmt == WavSampleFormat::kPcm16 ? 16 : 32;
  const std::uint16_t tag = fmt == WavSampleFormat::kPcm16 ? 1 : 3;
  const std::uint32_t block = channels * bits / 8;
  const std::uint32_t data_bytes = frames * block;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("RIFF", 4);
  Put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  Put<std::uint32_t>(os, 16);
  Put<std::uint16_t>(os, tag);
  Put<std::uint16_t>(os, channels);
  Put<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate_hz));
  Put<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate_hz) * block);
  Put<std::uint16_t>(os, static_cast<std::uint16_t>(block));
  Put<std::uint16_t>(os, bits);
  os.write("data", 4);
  Put<std::uint32_t>(os, data_bytes);
  for (std::uint32_t n = 0; n < frames; ++n) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const double v = wave.samples[c][n];
      if (fmt == WavSampleFormat::kPcm16) {
        const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        Put<std::int16_t>(os, static_cast<std::int16_t>(s));
      } else {
        Put<float>(os, static_cast<float>(v));
      }
    }
  }
  if (!os) throw DataError("write failed: " + path);
}

/// Reads PCM16 or float32 WAV (plain or WAVE_FORMAT_EXTENSIBLE). When
/// expected_rate_hz > 0 a mismatching file rate is a DataError.
inline MultichannelWaveform ReadWav(const std::string &path,
                                    int expected_rate_hz = 0) {
  using wav_internal::Get;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char tag[4];
  if (!is.read(tag, 4) || std::memcmp(tag, "RIFF", 4) != 0)
    throw DataError(path + ": not a RIFF file");
  Get<std::uint32_t>(is, path);
  if (!is.read(tag, 4) || std::memcmp(tag, "WAVE", 4) != 0)
    throw DataError(path + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const std::uint32_t len = Get<std::uint32_t>(is, path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = Get<std::uint16_t>(is, path);
      channels = Get<std::uint16_t>(is, path);
      rate = Get<std::uint32_t>(is, path);
      Get<std::uint32_t>(is, path);
      Get<std::uint16_t>(is, path);
      bits = Get<std::uint16_t>(is, path);
      std::uint32_t consumed = 16;
      if (format == 0xFFFE && len >= 40) {
        Get<std::uint16_t>(is, path);  // cbSize
        Get<std::uint16_t>(is, path);  // valid bits
        Get<std::uint32_t>(is, path);  // channel mask
        format = Get<std::uint16_t>(is, path);  // first two bytes of the GUID
        consumed = 26;
      }
      is.seekg(len - consumed + (len & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw DataError(path + ": data chunk before fmt chunk");
      if (channels == 0) throw DataError(path + ": zero channels");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32)
        throw DataError(path + ": unsupported sample format (need PCM16 or float32)");
      if (expected_rate_hz > 0 && static_cast<int>(rate) != expected_rate_hz)
        throw DataError(path + ": sample rate " + std::to_string(rate) +
                        " Hz does not match configured " +
                        std::to_string(expected_rate_hz) + " Hz");
      const std::uint32_t frames = len / (channels * bits / 8);
      MultichannelWaveform w =
          MultichannelWaveform::Zeros(channels, frames, static_cast<int>(rate));
      for (std::uint32_t n = 0; n < frames; ++n)
        for (std::uint16_t c = 0; c < channels; ++c)
          w.samples[c][n] = pcm16 ? Get<std::int16_t>(is, path) / 32768.0
                                  : static_cast<double>(Get<float>(is, path));
      w.Validate();
      return w;
    } else {
      is.seekg(len + (len & 1), std::ios::cur);
    }
  }
  throw DataError(path + ": no data chunk");
}

}  // namespace mimo

#endif  // MIMO_WAV_HPP_
