// mimo/pipeline.hpp

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

// Driver layer used by the command-line tool: config file, per-mixture
// separation, batch scoring and schedule dry-runs.

#ifndef MIMO_PIPELINE_HPP_
#define MIMO_PIPELINE_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/beamforming.hpp"
#include "mimo/common.hpp"
#include "mimo/corpus.hpp"
#include "mimo/features.hpp"
#include "mimo/masking.hpp"
#include "mimo/metrics.hpp"
#include "mimo/pit.hpp"
#include "mimo/scheduler.hpp"
#include "mimo/stft.hpp"
#include "mimo/tensor_io.hpp"
#include "mimo/wav.hpp"

namespace mimo {

enum class MaskSource { kOracleIrm, kOracleIbm, kEstimator };
enum class BeamformerKind { kMvdr, kSelector };

/// Everything the separate / evaluate / features commands need. Stored as a
/// plain `key = value` file; '#' starts a comment.
struct PipelineConfig {
  StftConfig stft;
  MaskSource mask_source = MaskSource::kOracleIrm;
  std::string estimator_path;
  double mvdr_eps = 1e-6;
  ReferencePolicy reference = ReferencePolicy::Fixed(0);
  BeamformerKind beamformer = BeamformerKind::kMvdr;
  std::size_t num_speakers = 2;
  double lambda = 0.2;
  std::size_t n_mels = 80;
  std::size_t workers = 1;
  bool quiet = false;
  bool write_masks = true;
  bool write_filters = true;

  void Validate() const {
    stft.Validate();
    if (num_speakers < 1) throw UsageError("num_speakers must be at least 1");
    if (!(mvdr_eps > 0.0)) throw UsageError("mvdr_eps must be positive");
    LossConfig{lambda}.Validate();
    if (n_mels < 1) throw UsageError("n_mels must be at least 1");
    if (workers < 1) throw UsageError("workers must be at least 1");
    if (mask_source == MaskSource::kEstimator) {
      if (estimator_path.empty()) throw UsageError("mask_source=estimator needs estimator_path");
      if (!std::filesystem::exists(estimator_path))
        throw DataError("estimator file not found: " + estimator_path);
    }
  }

  std::string ToText() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "sample_rate_hz = " << stft.sample_rate_hz << '\n'
       << "window_len_samples = " << stft.window_len_samples << '\n'
       << "hop_samples = " << stft.hop_samples << '\n'
       << "fft_size = " << stft.fft_size << '\n'
       << "mask_source = "
       << (mask_source == MaskSource::kOracleIrm   ? "oracle_irm"
           : mask_source == MaskSource::kOracleIbm ? "oracle_ibm"
                                                   : "estimator")
       << '\n'
       << "estimator_path = " << estimator_path << '\n'
       << "mvdr_eps = " << mvdr_eps << '\n'
       << "reference = "
       << (reference.kind == ReferenceKind::kFixedChannel
               ? "fixed:" + std::to_string(reference.channel)
               : std::string("max_power"))
       << '\n'
       << "beamformer = " << (beamformer == BeamformerKind::kMvdr ? "mvdr" : "selector") << '\n'
       << "num_speakers = " << num_speakers << '\n'
       << "lambda = " << lambda << '\n'
       << "n_mels = " << n_mels << '\n'
       << "workers = " << workers << '\n'
       << "quiet = " << (quiet ? "true" : "false") << '\n'
       << "write_masks = " << (write_masks ? "true" : "false") << '\n'
       << "write_filters = " << (write_filters ? "true" : "false") << '\n';
    return os.str();
  }

  /// Applies one key/value pair; unknown keys and malformed values are
  /// usage errors.
  void Set(const std::string &key, const std::string &value) {
    auto to_int = [&](void) {
      try {
        std::size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception &) {
        throw UsageError("config key " + key + ": not an integer: " + value);
      }
    };
    auto to_double = [&](void) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception &) {
        throw UsageError("config key " + key + ": not a number: " + value);
      }
    };
    auto to_bool = [&](void) {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw UsageError("config key " + key + ": not a boolean: " + value);
    };
    auto to_count = [&](void) {
      const long v = to_int();
      if (v < 0) throw UsageError("config key " + key + " must be nonnegative");
      return static_cast<std::size_t>(v);
    };
    if (key == "sample_rate_hz") stft.sample_rate_hz = static_cast<int>(to_int());
    else if (key == "window_len_samples") stft.window_len_samples = static_cast<int>(to_int());
    else if (key == "hop_samples") stft.hop_samples = static_cast<int>(to_int());
    else if (key == "fft_size") stft.fft_size = static_cast<int>(to_int());
    else if (key == "mask_source") {
      if (value == "oracle_irm") mask_source = MaskSource::kOracleIrm;
      else if (value == "oracle_ibm") mask_source = MaskSource::kOracleIbm;
      else if (value == "estimator") mask_source = MaskSource::kEstimator;
      else throw UsageError("mask_source must be oracle_irm, oracle_ibm or estimator");
    } else if (key == "estimator_path") estimator_path = value;
    else if (key == "mvdr_eps") mvdr_eps = to_double();
    else if (key == "reference") {
      if (value == "max_power") {
        reference = ReferencePolicy::MaxAveragePower();
      } else if (value.rfind("fixed:", 0) == 0) {
        const std::string c = value.substr(6);
        if (c.empty() || c.find_first_not_of("0123456789") != std::string::npos)
          throw UsageError("reference must be fixed:<channel> or max_power");
        reference = ReferencePolicy::Fixed(std::stoul(c));
      } else {
        throw UsageError("reference must be fixed:<channel> or max_power");
      }
    } else if (key == "beamformer") {
      if (value == "mvdr") beamformer = BeamformerKind::kMvdr;
      else if (value == "selector") beamformer = BeamformerKind::kSelector;
      else throw UsageError("beamformer must be mvdr or selector");
    } else if (key == "num_speakers") num_speakers = to_count();
    else if (key == "lambda") lambda = to_double();
    else if (key == "n_mels") n_mels = to_count();
    else if (key == "workers") workers = to_count();
    else if (key == "quiet") quiet = to_bool();
    else if (key == "write_masks") write_masks = to_bool();
    else if (key == "write_filters") write_filters = to_bool();
    else throw UsageError("unknown config key: " + key);
  }

  static PipelineConfig Parse(std::istream &is, const std::string &origin = "config") {
    PipelineConfig cfg;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      cfg.Set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  /// Loads and validates; estimator_path resolves against the file's
  /// directory when relative.
  static PipelineConfig Load(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config " + path);
    PipelineConfig cfg = Parse(is, path);
    if (!cfg.estimator_path.empty() && std::filesystem::path(cfg.estimator_path).is_relative())
      cfg.estimator_path =
          (std::filesystem::path(path).parent_path() / cfg.estimator_path).string();
    cfg.Validate();
    return cfg;
  }
};

/// Outputs of the front-end for one mixture.
struct SeparationResult {
  std::vector<MultichannelWaveform> sources;  // one mono waveform per speaker
  MaskSet masks;
  BeamformerFilters filters;
  std::size_t ref_channel = 0;
  std::size_t psd_floored = 0;
};

inline std::size_t OneHotIndex(const Eigen::VectorXd &u) {
  Eigen::Index idx = 0;
  u.maxCoeff(&idx);
  return static_cast<std::size_t>(idx);
}

/// masks -> PSDs -> filters -> apply -> iSTFT. `refs` (reference images) are
/// needed only for oracle masks; `estimator` only for mask_source=estimator.
inline SeparationResult SeparateMixture(const MultichannelWaveform &mixture,
                                        const std::vector<MultichannelWaveform> &refs,
                                        const PipelineConfig &cfg,
                                        const TinyMaskEstimator *estimator = nullptr) {
  if (cfg.num_speakers < 1) throw UsageError("num_speakers must be at least 1");
  const MultichannelSpectrogram mix = Stft(mixture, cfg.stft);
  SeparationResult out;
  if (cfg.mask_source == MaskSource::kEstimator) {
    if (!estimator) throw UsageError("no mask estimator loaded");
    if (estimator->num_speakers() != cfg.num_speakers)
      throw UsageError("estimator speaker count differs from num_speakers");
    out.masks = ApplyMaskNet(*estimator, mix);
  } else {
    if (refs.size() != cfg.num_speakers)
      throw DataError("oracle masks need " + std::to_string(cfg.num_speakers) +
                      " reference images, got " + std::to_string(refs.size()));
    std::vector<MultichannelSpectrogram> ref_specs;
    for (const auto &r : refs) {
      if (r.num_samples() != mixture.num_samples() ||
          r.num_channels() != mixture.num_channels())
        throw DataError("reference image shape differs from the mixture");
      ref_specs.push_back(Stft(r, cfg.stft));
    }
    out.masks = OracleMasks(ref_specs, mix, cfg.mask_source == MaskSource::kOracleIrm
                                                ? OracleMaskKind::kIrm
                                                : OracleMaskKind::kIbm);
  }
  out.masks.Validate();
  if (cfg.reference.kind == ReferenceKind::kFixedChannel &&
      cfg.reference.channel >= mix.num_channels())
    throw UsageError("reference channel " + std::to_string(cfg.reference.channel) +
                     " out of range");
  const Eigen::VectorXd u = SelectReference(mix, out.masks, cfg.reference);
  out.ref_channel = OneHotIndex(u);
  if (cfg.beamformer == BeamformerKind::kMvdr) {
    const PsdSet psd = EstimatePsd(mix, out.masks);
    out.psd_floored = psd.num_floored();
    out.filters = MvdrFilters(psd, u, cfg.mvdr_eps);
  } else {
    const std::size_t J = out.masks.num_speakers(), F = mix.num_bins(),
                      C = mix.num_channels();
    out.filters.num_speakers = J;
    out.filters.num_bins = F;
    out.filters.num_channels = C;
    out.filters.reference = u;
    out.filters.weights.assign(J * F, u.cast<Complex>());
    out.filters.diagnostics.condition_numbers.assign(J * F, 1.0);
    out.filters.diagnostics.pinv_fallback.assign(J * F, 0);
  }
  const SeparatedSpectrograms sep = ApplyFilters(out.filters, mix);
  for (std::size_t i = 1; i <= sep.num_speakers(); ++i) out.sources.push_back(Istft(sep.Source(i)));
  return out;
}

inline std::span<const double> Mono(const MultichannelWaveform &w, std::size_t channel) {
  return w.samples.at(channel);
}

/// Exit-code category of a caught error (1 usage, 2 data, 3 numeric).
inline int ErrorExitCode(const std::exception &ex) {
  if (dynamic_cast<const UsageError *>(&ex)) return 1;
  if (dynamic_cast<const NumericError *>(&ex)) return 3;
  return 2;
}

struct RunFailure {
  std::string id;
  std::string message;
  int exit_code = 2;
};

struct SeparateSummary {
  std::size_t processed = 0;
  std::vector<RunFailure> failures;

  int ExitCode() const { return failures.empty() ? 0 : failures.front().exit_code; }
};

namespace pipeline_internal {

inline void WriteJson(const std::filesystem::path &path, const nlohmann::json &j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

inline nlohmann::json ReadJson(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception &ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
}

inline nlohmann::json FiniteOrString(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

}  // namespace pipeline_internal

/// Runs the front-end on every mixture of the manifest. Per-mixture failures
/// are recorded and skipped. Writes, per mixture id:
///   <id>_s<k>.wav, <id>_masks.tnsr, <id>_filters.tnsr, <id>_diag.json
/// and separation.json listing the processed mixtures.
inline SeparateSummary RunSeparate(const CorpusManifest &corpus, const PipelineConfig &cfg,
                                   const std::filesystem::path &out_dir,
                                   std::ostream *log = nullptr) {
  cfg.Validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  std::optional<TinyMaskEstimator> estimator;
  if (cfg.mask_source == MaskSource::kEstimator)
    estimator = TinyMaskEstimator::Load(cfg.estimator_path);

  const std::size_t M = corpus.mixtures.size();
  std::vector<nlohmann::json> rows(M);
  std::vector<std::optional<RunFailure>> failed(M);
  std::mutex log_mu;
  ParallelFor(M, cfg.workers, [&](std::size_t m) {
    const CorpusEntry &e = corpus.mixtures[m];
    try {
      const MultichannelWaveform mix =
          ReadWav(corpus.Resolve(e.wav_mix), cfg.stft.sample_rate_hz);
      std::vector<MultichannelWaveform> refs;
      for (const auto &r : e.wav_refs)
        refs.push_back(ReadWav(corpus.Resolve(r), cfg.stft.sample_rate_hz));
      const SeparationResult res =
          SeparateMixture(mix, refs, cfg, estimator ? &*estimator : nullptr);

      nlohmann::json row{{"id", e.id}, {"ref_channel", res.ref_channel}};
      std::vector<std::string> wavs;
      for (std::size_t k = 0; k < res.sources.size(); ++k) {
        wavs.push_back(e.id + "_s" + std::to_string(k + 1) + ".wav");
        WriteWav((out_dir / wavs.back()).string(), res.sources[k]);
      }
      row["wav_sources"] = wavs;
      if (cfg.write_masks) {
        row["masks"] = e.id + "_masks.tnsr";
        WriteTensorFile((out_dir / row["masks"].get<std::string>()).string(),
                        ToTensorFile(res.masks.data));
      }
      if (cfg.write_filters) {
        row["filters"] = e.id + "_filters.tnsr";
        WriteTensorFile((out_dir / row["filters"].get<std::string>()).string(),
                        ToTensorFile(res.filters.ToTensor()));
      }

      // Diagnostics are always written.
      const std::size_t J = res.filters.num_speakers, F = res.filters.num_bins;
      nlohmann::json diag;
      diag["id"] = e.id;
      diag["ref_channel"] = res.ref_channel;
      diag["psd_weight_floored"] = res.psd_floored;
      nlohmann::json cond = nlohmann::json::array(), pinv = nlohmann::json::array();
      std::size_t n_pinv = 0;
      for (std::size_t i = 0; i < J; ++i) {
        nlohmann::json crow = nlohmann::json::array(), prow = nlohmann::json::array();
        for (std::size_t f = 0; f < F; ++f) {
          crow.push_back(
              pipeline_internal::FiniteOrString(res.filters.diagnostics.condition_numbers[i * F + f]));
          const int p = res.filters.diagnostics.pinv_fallback[i * F + f];
          prow.push_back(p);
          n_pinv += static_cast<std::size_t>(p);
        }
        cond.push_back(crow);
        pinv.push_back(prow);
      }
      diag["condition_numbers"] = cond;
      diag["pinv_fallback"] = pinv;
      diag["pinv_fallback_count"] = n_pinv;
      if (refs.size() == res.sources.size()) {
        nlohmann::json sdr = nlohmann::json::array(), base = nlohmann::json::array();
        for (std::size_t k = 0; k < refs.size(); ++k) {
          const auto ref = Mono(refs[k], res.ref_channel);
          sdr.push_back(SiSdr(Mono(res.sources[k], 0), ref).db);
          base.push_back(SiSdr(Mono(mix, res.ref_channel), ref).db);
        }
        diag["si_sdr_db"] = sdr;
        diag["mixture_si_sdr_db"] = base;
      }
      pipeline_internal::WriteJson(out_dir / (e.id + "_diag.json"), diag);
      rows[m] = row;
      if (log && !cfg.quiet) {
        std::lock_guard<std::mutex> lock(log_mu);
        *log << "separated " << e.id << " (ref channel " << res.ref_channel << ", "
             << n_pinv << " pinv fallbacks, " << res.psd_floored << " floored PSD weights)\n";
      }
    } catch (const std::exception &ex) {
      failed[m] = RunFailure{e.id, ex.what(), ErrorExitCode(ex)};
      if (log) {
        std::lock_guard<std::mutex> lock(log_mu);
        *log << "error: " << e.id << ": " << ex.what() << '\n';
      }
    }
  });

  SeparateSummary summary;
  nlohmann::json index;
  index["mixtures"] = nlohmann::json::array();
  index["failures"] = nlohmann::json::array();
  for (std::size_t m = 0; m < M; ++m) {
    if (failed[m]) {
      summary.failures.push_back(*failed[m]);
      index["failures"].push_back({{"id", failed[m]->id}, {"error", failed[m]->message}});
    } else {
      ++summary.processed;
      index["mixtures"].push_back(rows[m]);
    }
  }
  pipeline_internal::WriteJson(out_dir / "separation.json", index);
  return summary;
}

struct MixtureScore {
  std::string id;
  std::vector<double> si_sdr_db;          // per reference, after pairing
  std::vector<double> mixture_si_sdr_db;  // unprocessed reference channel
  Permutation pairing;                    // reference k <- estimate pairing[k]
  std::size_t ref_channel = 0;
};

struct ScoreTable {
  std::vector<MixtureScore> rows;
  std::vector<RunFailure> failures;

  double AverageSiSdr() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto &r : rows)
      for (double v : r.si_sdr_db) {
        s += v;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  double AverageImprovement() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto &r : rows)
      for (std::size_t k = 0; k < r.si_sdr_db.size(); ++k) {
        s += r.si_sdr_db[k] - r.mixture_si_sdr_db[k];
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  nlohmann::json ToJson() const {
    nlohmann::json j;
    j["mixtures"] = nlohmann::json::array();
    for (const auto &r : rows)
      j["mixtures"].push_back({{"id", r.id},
                               {"ref_channel", r.ref_channel},
                               {"pairing", r.pairing},
                               {"si_sdr_db", r.si_sdr_db},
                               {"mixture_si_sdr_db", r.mixture_si_sdr_db}});
    j["average_si_sdr_db"] = AverageSiSdr();
    j["average_improvement_db"] = AverageImprovement();
    j["failures"] = nlohmann::json::array();
    for (const auto &f : failures) j["failures"].push_back({{"id", f.id}, {"error", f.message}});
    return j;
  }

  /// Fixed-precision text table, one row per mixture and an average row.
  std::string ToText() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(40) << "mixture" << std::right;
    std::size_t J = 0;
    for (const auto &r : rows) J = std::max(J, r.si_sdr_db.size());
    for (std::size_t k = 0; k < J; ++k) os << std::setw(12) << ("src" + std::to_string(k + 1));
    os << std::setw(12) << "avg" << std::setw(12) << "mix_avg" << std::setw(12) << "delta"
       << '\n';
    for (const auto &r : rows) {
      os << std::left << std::setw(40) << r.id << std::right;
      double s = 0.0, b = 0.0;
      for (std::size_t k = 0; k < J; ++k) {
        if (k < r.si_sdr_db.size()) {
          os << std::setw(12) << r.si_sdr_db[k];
          s += r.si_sdr_db[k];
          b += r.mixture_si_sdr_db[k];
        } else {
          os << std::setw(12) << "-";
        }
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, r.si_sdr_db.size()));
      os << std::setw(12) << s / n << std::setw(12) << b / n << std::setw(12) << (s - b) / n
         << '\n';
    }
    const double imp = AverageImprovement();
    os << std::left << std::setw(40) << "average" << std::right;
    for (std::size_t k = 0; k < J; ++k) os << std::setw(12) << "";
    os << std::setw(12) << AverageSiSdr() << std::setw(12) << AverageSiSdr() - imp
       << std::setw(12) << imp << '\n';
    return os.str();
  }
};

/// Scores one mixture: estimates are paired with references by the
/// permutation maximizing the summed SI-SDR (PIT on negated scores).
inline MixtureScore ScoreMixture(const std::string &id,
                                 const std::vector<MultichannelWaveform> &estimates,
                                 const std::vector<MultichannelWaveform> &refs,
                                 const MultichannelWaveform &mixture,
                                 std::size_t ref_channel) {
  const std::size_t J = refs.size();
  if (J == 0 || estimates.size() != J)
    throw DataError(id + ": estimate and reference counts differ");
  MixtureScore s;
  s.id = id;
  s.ref_channel = ref_channel;
  LossMatrix neg({J, J});
  std::vector<std::vector<double>> db(J, std::vector<double>(J));
  for (std::size_t e = 0; e < J; ++e)
    for (std::size_t k = 0; k < J; ++k) {
      const auto est = Mono(estimates[e], 0);
      const auto ref = Mono(refs[k], ref_channel);
      if (est.size() != ref.size()) throw DataError(id + ": estimate length differs from reference");
      db[e][k] = SiSdr(est, ref).db;
      neg(e, k) = -db[e][k];
    }
  const Assignment a = PitResolve(neg);
  s.pairing.assign(J, 0);
  s.si_sdr_db.assign(J, 0.0);
  for (std::size_t e = 0; e < J; ++e) {
    s.pairing[a.perm[e]] = e;
    s.si_sdr_db[a.perm[e]] = db[e][a.perm[e]];
  }
  for (std::size_t k = 0; k < J; ++k)
    s.mixture_si_sdr_db.push_back(SiSdr(Mono(mixture, ref_channel), Mono(refs[k], ref_channel)).db);
  return s;
}

/// Scores the outputs of RunSeparate in separated_dir against the corpus.
inline ScoreTable RunEvaluate(const std::filesystem::path &separated_dir,
                              const CorpusManifest &corpus, std::size_t workers = 1) {
  const nlohmann::json index = pipeline_internal::ReadJson(separated_dir / "separation.json");
  std::map<std::string, const CorpusEntry *> by_id;
  for (const auto &e : corpus.mixtures) by_id[e.id] = &e;
  std::vector<nlohmann::json> entries;
  try {
    for (const auto &row : index.at("mixtures")) entries.push_back(row);
  } catch (const nlohmann::json::exception &ex) {
    throw DataError(std::string("bad separation index: ") + ex.what());
  }
  std::vector<std::optional<MixtureScore>> scores(entries.size());
  std::vector<std::optional<RunFailure>> failed(entries.size());
  ParallelFor(entries.size(), workers, [&](std::size_t m) {
    std::string id = "?";
    try {
      id = entries[m].at("id").get<std::string>();
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("mixture " + id + " is not in the corpus");
      const CorpusEntry &e = *it->second;
      const auto ref_channel = entries[m].at("ref_channel").get<std::size_t>();
      std::vector<MultichannelWaveform> est, refs;
      for (const auto &w : entries[m].at("wav_sources"))
        est.push_back(ReadWav((separated_dir / w.get<std::string>()).string()));
      for (const auto &r : e.wav_refs) refs.push_back(ReadWav(corpus.Resolve(r)));
      const MultichannelWaveform mix = ReadWav(corpus.Resolve(e.wav_mix));
      if (ref_channel >= mix.num_channels()) throw DataError(id + ": ref_channel out of range");
      scores[m] = ScoreMixture(id, est, refs, mix, ref_channel);
    } catch (const nlohmann::json::exception &ex) {
      failed[m] = RunFailure{id, std::string("bad separation index row: ") + ex.what(), 2};
    } catch (const std::exception &ex) {
      failed[m] = RunFailure{id, ex.what(), ErrorExitCode(ex)};
    }
  });
  ScoreTable table;
  for (std::size_t m = 0; m < entries.size(); ++m) {
    if (scores[m]) table.rows.push_back(*scores[m]);
    if (failed[m]) table.failures.push_back(*failed[m]);
  }
  try {
    for (const auto &f : index.at("failures"))
      table.failures.push_back({f.at("id").get<std::string>(),
                                "separation failed: " + f.at("error").get<std::string>(), 2});
  } catch (const nlohmann::json::exception &) {
  }
  return table;
}

/// Scheduler input for a dry-run: the multi-speaker corpus plus a list of
/// single-speaker utterances.
struct ScheduleInputs {
  std::vector<UtteranceMeta> clean;
  std::vector<UtteranceMeta> noisy;
};

/// Multi-speaker entries from a corpus manifest; length in STFT frames at the
/// default hop.
inline std::vector<UtteranceMeta> NoisyFromCorpus(const CorpusManifest &corpus,
                                                  const StftConfig &stft = {}) {
  std::vector<UtteranceMeta> out;
  for (const auto &e : corpus.mixtures) {
    UtteranceMeta u;
    u.id = e.id;
    u.kind = UtteranceKind::kNoisyMulti;
    u.length_frames = static_cast<long>(std::max<std::size_t>(1, stft.NumFrames(e.num_samples)));
    u.snr_db = e.snr_db;
    u.shard = e.wav_mix;
    out.push_back(u);
  }
  return out;
}

/// Clean-utterance list: {"utterances": [{id, length_frames, shard?}]}.
inline std::vector<UtteranceMeta> CleanFromJson(const nlohmann::json &j) {
  std::vector<UtteranceMeta> out;
  try {
    for (const auto &u : j.at("utterances")) {
      UtteranceMeta m;
      m.id = u.at("id").get<std::string>();
      m.kind = UtteranceKind::kCleanSingle;
      m.length_frames = u.at("length_frames").get<long>();
      m.shard = u.value("shard", std::string());
      out.push_back(m);
    }
  } catch (const nlohmann::json::exception &ex) {
    throw DataError(std::string("bad clean-utterance list: ") + ex.what());
  }
  return out;
}

struct DryRunEpoch {
  std::size_t epoch = 0;
  BatchPlan plan;
  std::vector<std::string> violations;
};

/// Epochs [0, curriculum_epochs) use the curriculum plan, the rest shuffled
/// plans seeded by (seed, epoch).
inline std::vector<DryRunEpoch> ScheduleDryRun(const ScheduleInputs &in, std::size_t batch_size,
                                               std::uint64_t seed, std::size_t epochs,
                                               std::size_t curriculum_epochs,
                                               SnrSortKey key = SnrSortKey::kAbsolute) {
  std::vector<DryRunEpoch> out;
  for (std::size_t e = 0; e < epochs; ++e) {
    DryRunEpoch d;
    d.epoch = e;
    d.plan = e < curriculum_epochs
                 ? BuildCurriculum(in.clean, in.noisy, batch_size, key)
                 : BuildShuffled(in.clean, in.noisy, batch_size,
                                 DerivedRng(seed, e)());
    d.violations = ValidatePlan(d.plan, in.clean, in.noisy, key);
    out.push_back(std::move(d));
  }
  return out;
}

/// Log-mel features of channel 0 of each file plus global MVN statistics.
struct FeatureRun {
  std::vector<Tensor<double, 2>> features;
  MvnStats stats;
};

inline FeatureRun ComputeFeatures(const std::vector<std::string> &wavs, const PipelineConfig &cfg) {
  const MelFilterbank fb =
      MelFilterbank::Create(cfg.n_mels, cfg.stft.fft_size, cfg.stft.sample_rate_hz);
  FeatureRun run;
  MvnAccumulator acc;
  for (const auto &path : wavs) {
    const MultichannelWaveform w = ReadWav(path, cfg.stft.sample_rate_hz);
    MultichannelWaveform mono = MultichannelWaveform::Zeros(1, 0, w.sample_rate_hz);
    mono.samples[0] = w.samples.at(0);
    const MultichannelSpectrogram spec = Stft(mono, cfg.stft);
    run.features.push_back(LogMel(spec.Channel(0), fb));
    acc.Add(run.features.back());
  }
  run.stats = MvnStats::FromAccumulator(acc);
  return run;
}

/// Gradient self-test of the CTC implementation against central finite
/// differences on random instances (T <= 6, V <= 6, N <= 3).
struct CtcCheckReport {
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-3); the floor keeps near-zero
/// gradient entries from dominating.
inline CtcCheckReport CtcGradientCheck(std::uint64_t seed, std::size_t instances,
                                       double step = 1e-4) {
  CtcCheckReport rep;
  std::mt19937_64 rng = DerivedRng(seed, 0xc7c);
  while (rep.instances < instances) {
    const std::size_t V = 2 + UniformIndex(rng, 5);
    const std::size_t N = UniformIndex(rng, 4);
    const std::size_t T = 1 + UniformIndex(rng, 6);
    LabelSequence labels;
    for (std::size_t n = 0; n < N; ++n)
      labels.tokens.push_back(1 + static_cast<int>(UniformIndex(rng, V - 1)));
    Tensor<double, 2> logits({T, V});
    for (double &v : logits.flat()) v = 2.0 * Gaussian(rng);
    const CtcResult r = CtcLoss(logits, labels);
    if (!r.feasible) continue;
    ++rep.instances;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      Tensor<double, 2> lp = logits, lm = logits;
      lp.flat()[k] += step;
      lm.flat()[k] -= step;
      const double num = (CtcLoss(lp, labels).loss - CtcLoss(lm, labels).loss) / (2.0 * step);
      const double ana = r.grad.flat()[k];
      const double abs_err = std::abs(ana - num);
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      rep.max_rel_error = std::max(
          rep.max_rel_error, abs_err / std::max({std::abs(ana), std::abs(num), 1e-3}));
    }
  }
  return rep;
}

}  // namespace mimo

#endif  // MIMO_PIPELINE_HPP_
