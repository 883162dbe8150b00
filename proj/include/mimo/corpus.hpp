// mimo/corpus.hpp

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

// Synthetic spatialized two-speaker corpus: description input, generator and
// the JSON manifest it emits.
//
// Scene sampling ranges:
//   room          x, y in [5, 10] m, z in [2.5, 3.5] m
//   array centre  >= 1.5 m from the side walls, z in [1.0, 1.6] m
//   geometry      C = 2: line, spacing [0.10, 0.30] m, random orientation;
//                 C > 2: circle, radius [0.05, 0.15] m, random rotation
//   sources       1.0 - 2.5 m from the array centre, z in [1.2, 1.9] m,
//                 at least 30 degrees apart as seen by the array (for a line
//                 array the angle to the array axis, which folds the
//                 front/back ambiguity)

#ifndef MIMO_CORPUS_HPP_
#define MIMO_CORPUS_HPP_

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/common.hpp"
#include "mimo/spatial.hpp"
#include "mimo/wav.hpp"

namespace mimo {

struct SourceUtterance {
  std::string id;
  std::string transcript;
  std::string wav_path;       // empty for synthetic utterances
  double synth_duration_s = 0.0;
};

struct CorpusDescription {
  int sample_rate_hz = 16000;
  std::size_t n_mixtures = 0;
  std::size_t n_channels = 2;
  double snr_min_db = -5.0;
  double snr_max_db = 5.0;
  PropagationMode mode = PropagationMode::kAnechoic;
  int image_order = 0;
  double absorption = 0.5;
  std::optional<double> noise_snr_db;
  std::vector<SourceUtterance> utterances;

  /// Parses the description; relative wav paths resolve against base_dir.
  static CorpusDescription FromJson(const nlohmann::json &j,
                                    const std::filesystem::path &base_dir = {}) {
    CorpusDescription d;
    try {
      d.sample_rate_hz = j.value("sample_rate_hz", 16000);
      d.n_mixtures = j.value("n_mixtures", std::size_t{0});
      d.n_channels = j.value("n_channels", std::size_t{2});
      if (j.contains("snr_range_db")) {
        const auto r = j.at("snr_range_db").get<std::vector<double>>();
        if (r.size() != 2 || !(r[0] <= r[1])) throw DataError("snr_range_db must be [lo, hi]");
        d.snr_min_db = r[0];
        d.snr_max_db = r[1];
      }
      if (j.contains("propagation")) {
        const auto &p = j.at("propagation");
        const auto mode = p.value("mode", std::string("anechoic"));
        if (mode == "anechoic") {
          d.mode = PropagationMode::kAnechoic;
        } else if (mode == "image") {
          d.mode = PropagationMode::kImageMethod;
          d.image_order = p.value("order", 1);
          d.absorption = p.value("absorption", 0.5);
        } else {
          throw DataError("unknown propagation mode " + mode);
        }
      }
      if (j.contains("noise_snr_db") && !j.at("noise_snr_db").is_null())
        d.noise_snr_db = j.at("noise_snr_db").get<double>();
      if (j.contains("utterances"))
        for (const auto &u : j.at("utterances")) {
          SourceUtterance s;
          s.id = u.at("id").get<std::string>();
          s.transcript = u.value("transcript", std::string());
          if (u.contains("wav")) {
            std::filesystem::path p = u.at("wav").get<std::string>();
            s.wav_path = (p.is_relative() ? base_dir / p : p).string();
          } else {
            s.synth_duration_s = u.at("synth_duration_s").get<double>();
          }
          d.utterances.push_back(std::move(s));
        }
      if (j.contains("synthetic_utterances")) {
        const auto &g = j.at("synthetic_utterances");
        const auto count = g.at("count").get<std::size_t>();
        const double lo = g.value("min_duration_s", 1.5);
        const double hi = g.value("max_duration_s", 2.5);
        static const char *kWords[] = {"alpha", "bravo", "delta", "echo",  "gamma",
                                       "kilo",  "lima",  "mike",  "oscar", "papa",
                                       "romeo", "sierra", "tango", "victor", "zulu"};
        for (std::size_t k = 0; k < count; ++k) {
          std::mt19937_64 rng = DerivedRng(k, 0x7e47);
          SourceUtterance s;
          s.id = "syn" + std::to_string(k);
          s.synth_duration_s = UniformIn(rng, lo, hi);
          const auto words = 2 + UniformIndex(rng, 4);
          for (std::size_t w = 0; w < words; ++w)
            s.transcript += (w ? " " : "") + std::string(kWords[UniformIndex(rng, 15)]);
          d.utterances.push_back(std::move(s));
        }
      }
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(std::string("bad corpus description: ") + ex.what());
    }
    return d;
  }

  static CorpusDescription Load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open corpus description " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(path + ": " + ex.what());
    }
    return FromJson(j, std::filesystem::path(path).parent_path());
  }
};

/// One manifest row; paths are stored relative to the manifest directory.
struct CorpusEntry {
  std::string id;
  std::string wav_mix;
  std::vector<std::string> wav_refs;
  std::string wav_noise;
  double snr_db = 0.0;
  std::size_t num_samples = 0;
  std::vector<std::string> transcripts;
  std::vector<std::string> source_ids;
  RoomScene scene;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  int sample_rate_hz = 16000;
  std::vector<CorpusEntry> mixtures;
  std::filesystem::path base_dir;  // not serialized

  std::string Resolve(const std::string &rel) const { return (base_dir / rel).string(); }

  nlohmann::json ToJson() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["sample_rate_hz"] = sample_rate_hz;
    j["mixtures"] = nlohmann::json::array();
    for (const auto &e : mixtures) {
      nlohmann::json m;
      m["id"] = e.id;
      m["wav_mix"] = e.wav_mix;
      m["wav_refs"] = e.wav_refs;
      if (!e.wav_noise.empty()) m["wav_noise"] = e.wav_noise;
      m["snr_db"] = e.snr_db;
      m["num_samples"] = e.num_samples;
      m["transcripts"] = e.transcripts;
      m["source_ids"] = e.source_ids;
      nlohmann::json s;
      s["room_dims_m"] = e.scene.room_dims_m;
      s["source_positions_m"] = e.scene.source_positions_m;
      s["mic_positions_m"] = e.scene.mic_positions_m;
      s["speed_of_sound_mps"] = e.scene.speed_of_sound_mps;
      s["mode"] = e.scene.mode == PropagationMode::kAnechoic ? "anechoic" : "image";
      if (e.scene.mode == PropagationMode::kImageMethod) {
        s["order"] = e.scene.image_order;
        s["absorption"] = e.scene.absorption;
      }
      m["scene"] = s;
      j["mixtures"].push_back(m);
    }
    return j;
  }

  static CorpusManifest FromJson(const nlohmann::json &j,
                                 const std::filesystem::path &base_dir) {
    CorpusManifest c;
    c.base_dir = base_dir;
    try {
      c.seed = j.value("seed", std::uint64_t{0});
      c.sample_rate_hz = j.value("sample_rate_hz", 16000);
      for (const auto &m : j.at("mixtures")) {
        CorpusEntry e;
        e.id = m.at("id").get<std::string>();
        e.wav_mix = m.at("wav_mix").get<std::string>();
        e.wav_refs = m.at("wav_refs").get<std::vector<std::string>>();
        e.wav_noise = m.value("wav_noise", std::string());
        e.snr_db = m.at("snr_db").get<double>();
        e.num_samples = m.value("num_samples", std::size_t{0});
        e.transcripts = m.value("transcripts", std::vector<std::string>{});
        e.source_ids = m.value("source_ids", std::vector<std::string>{});
        if (m.contains("scene")) {
          const auto &s = m.at("scene");
          e.scene.room_dims_m = s.at("room_dims_m").get<Point3>();
          e.scene.source_positions_m = s.at("source_positions_m").get<std::vector<Point3>>();
          e.scene.mic_positions_m = s.at("mic_positions_m").get<std::vector<Point3>>();
          e.scene.speed_of_sound_mps = s.value("speed_of_sound_mps", 343.0);
          if (s.value("mode", std::string("anechoic")) == "image") {
            e.scene.mode = PropagationMode::kImageMethod;
            e.scene.image_order = s.value("order", 0);
            e.scene.absorption = s.value("absorption", 0.5);
          }
        }
        c.mixtures.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(std::string("bad corpus manifest: ") + ex.what());
    }
    return c;
  }

  static CorpusManifest Load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open corpus manifest " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(path + ": " + ex.what());
    }
    return FromJson(j, std::filesystem::path(path).parent_path());
  }
};

/// Random scene for one mixture (ranges in the file comment).
inline RoomScene SampleScene(std::mt19937_64 &rng, std::size_t n_channels,
                             std::size_t n_sources) {
  if (n_channels < 1) throw UsageError("need at least one channel");
  constexpr double kMinSeparationRad = 30.0 * kPi / 180.0;
  RoomScene s;
  s.room_dims_m = {UniformIn(rng, 5.0, 10.0), UniformIn(rng, 5.0, 10.0),
                   UniformIn(rng, 2.5, 3.5)};
  const Point3 centre{UniformIn(rng, 1.5, s.room_dims_m[0] - 1.5),
                      UniformIn(rng, 1.5, s.room_dims_m[1] - 1.5), UniformIn(rng, 1.0, 1.6)};
  const double rot = UniformIn(rng, 0.0, 2.0 * kPi);
  const bool line = n_channels == 2;
  if (n_channels == 1) {
    s.mic_positions_m.push_back(centre);
  } else if (line) {
    const double half = 0.5 * UniformIn(rng, 0.10, 0.30);
    for (double sign : {-1.0, 1.0})
      s.mic_positions_m.push_back(
          {centre[0] + sign * half * std::cos(rot), centre[1] + sign * half * std::sin(rot),
           centre[2]});
  } else {
    const double radius = UniformIn(rng, 0.05, 0.15);
    for (std::size_t c = 0; c < n_channels; ++c) {
      const double a = rot + 2.0 * kPi * static_cast<double>(c) / n_channels;
      s.mic_positions_m.push_back(
          {centre[0] + radius * std::cos(a), centre[1] + radius * std::sin(a), centre[2]});
    }
  }
  // Direction as seen by the array: for a line array only the angle to the
  // axis is observable.
  auto apparent = [&](double az) {
    if (!line) return az;
    double rel = std::fmod(az - rot, 2.0 * kPi);
    if (rel < 0) rel += 2.0 * kPi;
    return rel <= kPi ? rel : 2.0 * kPi - rel;
  };
  auto separation = [&](double a, double b) {
    double d = std::abs(apparent(a) - apparent(b));
    if (!line) d = std::min(d, 2.0 * kPi - d);
    return d;
  };
  std::vector<double> azimuths;
  for (std::size_t k = 0; k < n_sources; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw DataError("could not place sources in the sampled room");
      const double az = UniformIn(rng, 0.0, 2.0 * kPi);
      const double dist = UniformIn(rng, 1.0, 2.5);
      const Point3 p{centre[0] + dist * std::cos(az), centre[1] + dist * std::sin(az),
                     UniformIn(rng, 1.2, 1.9)};
      bool ok = p[0] > 0.3 && p[0] < s.room_dims_m[0] - 0.3 && p[1] > 0.3 &&
                p[1] < s.room_dims_m[1] - 0.3 && p[2] < s.room_dims_m[2] - 0.3;
      for (double other : azimuths) ok = ok && separation(az, other) >= kMinSeparationRad;
      if (!ok) continue;
      azimuths.push_back(az);
      s.source_positions_m.push_back(p);
      break;
    }
  }
  return s;
}

/// Generates the corpus described by `desc` into out_dir and writes
/// out_dir/manifest.json. Each mixture draws from an engine seeded by
/// (seed, index), so the result does not depend on `workers`.
inline CorpusManifest GenerateCorpus(const CorpusDescription &desc,
                                     const std::filesystem::path &out_dir, std::uint64_t seed,
                                     std::size_t workers = 1) {
  if (desc.n_mixtures > 0 && desc.utterances.size() < 2)
    throw DataError("corpus description needs at least two source utterances");
  if (!(desc.snr_min_db <= desc.snr_max_db)) throw UsageError("bad SNR range");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  // Dry sources, loaded or synthesized once.
  std::vector<std::vector<double>> dry(desc.utterances.size());
  std::vector<bool> used(desc.utterances.size(), false);
  std::vector<std::mt19937_64> mix_rng;
  std::vector<std::array<std::size_t, 2>> picks;
  for (std::size_t m = 0; m < desc.n_mixtures; ++m) {
    std::mt19937_64 rng = DerivedRng(seed, m);
    const std::size_t a = UniformIndex(rng, desc.utterances.size());
    std::size_t b = UniformIndex(rng, desc.utterances.size() - 1);
    if (b >= a) ++b;
    used[a] = used[b] = true;
    picks.push_back({a, b});
    mix_rng.push_back(rng);
  }
  for (std::size_t u = 0; u < desc.utterances.size(); ++u) {
    if (!used[u]) continue;
    const SourceUtterance &s = desc.utterances[u];
    if (!s.wav_path.empty()) {
      const MultichannelWaveform w = ReadWav(s.wav_path, desc.sample_rate_hz);
      dry[u] = w.samples.front();
    } else {
      std::mt19937_64 rng = DerivedRng(seed, 0x100000000ull + u);
      dry[u] = SynthesizeUtterance(s.synth_duration_s, desc.sample_rate_hz, rng);
    }
  }

  CorpusManifest manifest;
  manifest.seed = seed;
  manifest.sample_rate_hz = desc.sample_rate_hz;
  manifest.base_dir = out_dir;
  manifest.mixtures.resize(desc.n_mixtures);
  ParallelFor(desc.n_mixtures, workers, [&](std::size_t m) {
    std::mt19937_64 rng = mix_rng[m];
    const auto [a, b] = picks[m];
    const double snr = UniformIn(rng, desc.snr_min_db, desc.snr_max_db);
    RoomScene scene = SampleScene(rng, desc.n_channels, 2);
    scene.mode = desc.mode;
    scene.image_order = desc.image_order;
    scene.absorption = desc.absorption;
    const auto img_a = SimulatePropagation(dry[a], desc.sample_rate_hz, scene, 0);
    const auto img_b = SimulatePropagation(dry[b], desc.sample_rate_hz, scene, 1);
    MixtureRecord rec = MixAtSnr(img_a, img_b, snr, 0);
    if (desc.noise_snr_db) AddWhiteNoise(rec, *desc.noise_snr_db, 0, rng);

    char buf[32];
    std::snprintf(buf, sizeof(buf), "mix%05zu", m);
    CorpusEntry e;
    e.id = std::string(buf) + "_" + desc.utterances[a].id + "_" + desc.utterances[b].id;
    e.wav_mix = e.id + "_mix.wav";
    WriteWav((out_dir / e.wav_mix).string(), rec.mixture);
    for (std::size_t k = 0; k < rec.references.size(); ++k) {
      e.wav_refs.push_back(e.id + "_ref" + std::to_string(k + 1) + ".wav");
      WriteWav((out_dir / e.wav_refs.back()).string(), rec.references[k]);
    }
    if (rec.noise) {
      e.wav_noise = e.id + "_noise.wav";
      WriteWav((out_dir / e.wav_noise).string(), *rec.noise);
    }
    e.snr_db = snr;
    e.num_samples = rec.mixture.num_samples();
    e.transcripts = {desc.utterances[a].transcript, desc.utterances[b].transcript};
    e.source_ids = {desc.utterances[a].id, desc.utterances[b].id};
    e.scene = scene;
    manifest.mixtures[m] = std::move(e);
  });

  const auto path = out_dir / "manifest.json";
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << manifest.ToJson().dump(2) << '\n';
  if (!os) throw DataError("write failed: " + path.string());
  return manifest;
}

}  // namespace mimo

#endif  // MIMO_CORPUS_HPP_
