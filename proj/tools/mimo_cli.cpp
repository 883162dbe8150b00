// tools/mimo_cli.cpp

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

// mimo: command-line driver for the multi-speaker front-end.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mimo/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

mimo::PipelineConfig LoadConfig(const std::string &path) {
  if (path.empty()) {
    mimo::PipelineConfig cfg;
    cfg.Validate();
    return cfg;
  }
  return mimo::PipelineConfig::Load(path);
}

void WriteText(const fs::path &path, const std::string &text) {
  std::ofstream os(path);
  if (!os) throw mimo::DataError("cannot write " + path.string());
  os << text;
}

std::vector<mimo::Point3> ParsePoints(const std::string &text) {
  // "x,y,z;x,y,z;..."
  std::vector<mimo::Point3> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ';');) {
    mimo::Point3 p{};
    char c1 = 0, c2 = 0;
    std::istringstream is(item);
    if (!(is >> p[0] >> c1 >> p[1] >> c2 >> p[2]) || c1 != ',' || c2 != ',')
      throw mimo::UsageError("bad point '" + item + "', expected x,y,z");
    out.push_back(p);
  }
  return out;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Mask-driven multi-source MVDR front-end tools"};
  app.require_subcommand(1);

  // generate
  auto *gen = app.add_subcommand("generate", "Generate a spatialized two-speaker corpus");
  std::string gen_desc, gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_workers = 1;
  gen->add_option("description", gen_desc, "Corpus description JSON")->required();
  gen->add_option("-o,--out-dir", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--workers", gen_workers, "Parallel workers")->check(CLI::PositiveNumber);

  // separate
  auto *sep = app.add_subcommand("separate", "Run masks -> PSD -> MVDR -> iSTFT per mixture");
  std::string sep_corpus, sep_config, sep_out;
  int sep_workers = 0;
  bool sep_quiet = false;
  sep->add_option("corpus", sep_corpus, "Corpus manifest.json")->required();
  sep->add_option("-c,--config", sep_config, "Pipeline config (key = value)");
  sep->add_option("-o,--out-dir", sep_out, "Output directory")->required();
  sep->add_option("--workers", sep_workers, "Override config workers");
  sep->add_flag("-q,--quiet", sep_quiet, "Suppress per-mixture progress lines");

  // evaluate
  auto *ev = app.add_subcommand("evaluate", "Score separated outputs with SI-SDR");
  std::string ev_sep, ev_corpus, ev_json, ev_table;
  std::size_t ev_workers = 1;
  ev->add_option("separated_dir", ev_sep, "Directory written by separate")->required();
  ev->add_option("corpus", ev_corpus, "Corpus manifest.json")->required();
  ev->add_option("--json", ev_json, "Write scores JSON here");
  ev->add_option("--table", ev_table, "Write the text table here (default stdout)");
  ev->add_option("--workers", ev_workers, "Parallel workers")->check(CLI::PositiveNumber);

  // schedule-dryrun
  auto *sch = app.add_subcommand("schedule-dryrun", "Dump per-epoch batch plans");
  std::string sch_corpus, sch_clean, sch_out, sch_validate;
  std::size_t sch_batch = 8, sch_epochs = 2, sch_curriculum = 1;
  std::uint64_t sch_seed = 0;
  bool sch_raw = false;
  sch->add_option("--corpus", sch_corpus, "Multi-speaker corpus manifest.json");
  sch->add_option("--clean", sch_clean, "Single-speaker list JSON {utterances:[{id,length_frames}]}");
  sch->add_option("--batch-size", sch_batch, "Batch size")->check(CLI::PositiveNumber);
  sch->add_option("--seed", sch_seed, "Seed for shuffled epochs");
  sch->add_option("--epochs", sch_epochs, "Total epochs");
  sch->add_option("--curriculum-epochs", sch_curriculum, "Epochs in the curriculum phase");
  sch->add_flag("--raw-snr-sort", sch_raw, "Sort noisy data by signed SNR instead of |SNR|");
  sch->add_option("-o,--out", sch_out, "Write plans JSON here (default stdout)");
  sch->add_option("--validate", sch_validate, "Validate an existing plan JSON instead");

  // features
  auto *feat = app.add_subcommand("features", "Log-mel features and global MVN statistics");
  std::string feat_config, feat_out, feat_stats_in;
  std::vector<std::string> feat_wavs;
  feat->add_option("wavs", feat_wavs, "Input WAV files (channel 0 is used)")->required();
  feat->add_option("-c,--config", feat_config, "Pipeline config");
  feat->add_option("-o,--out-dir", feat_out, "Output directory")->required();
  feat->add_option("--stats-in", feat_stats_in, "Normalize with these stats instead");

  // ctc-check
  auto *ctc = app.add_subcommand("ctc-check", "CTC gradient self-test");
  std::size_t ctc_n = 100;
  std::uint64_t ctc_seed = 0;
  double ctc_tol = 1e-4;
  ctc->add_option("--instances", ctc_n, "Random instances");
  ctc->add_option("--seed", ctc_seed, "Seed");
  ctc->add_option("--tolerance", ctc_tol, "Maximum relative error");

  // beampattern
  auto *bp = app.add_subcommand("beampattern", "Beam pattern of stored filters as CSV");
  std::string bp_filters, bp_corpus, bp_id, bp_mics, bp_config, bp_out;
  std::size_t bp_speaker = 1;
  std::vector<double> bp_freqs{500, 1000, 2000, 4000};
  bp->add_option("filters", bp_filters, "<id>_filters.tnsr from separate")->required();
  bp->add_option("--corpus", bp_corpus, "Corpus manifest (mic geometry)");
  bp->add_option("--id", bp_id, "Mixture id within the corpus");
  bp->add_option("--mics", bp_mics, "Mic positions x,y,z;x,y,z;... (instead of corpus)");
  bp->add_option("--speaker", bp_speaker, "Speaker index (1-based)");
  bp->add_option("--freqs", bp_freqs, "Frequencies in Hz");
  bp->add_option("-c,--config", bp_config, "Pipeline config");
  bp->add_option("-o,--out", bp_out, "CSV path")->required();

  // train-masknet
  auto *tr = app.add_subcommand("train-masknet", "Fit the tiny reference mask estimator");
  std::string tr_corpus, tr_config, tr_out;
  int tr_epochs = 200;
  double tr_lr = 0.5;
  tr->add_option("corpus", tr_corpus, "Corpus manifest.json")->required();
  tr->add_option("-c,--config", tr_config, "Pipeline config");
  tr->add_option("-o,--out", tr_out, "Estimator JSON")->required();
  tr->add_option("--epochs", tr_epochs, "Gradient steps");
  tr->add_option("--lr", tr_lr, "Learning rate");

  // config show-defaults
  auto *cfg_cmd = app.add_subcommand("config", "Config utilities");
  cfg_cmd->require_subcommand(1);
  auto *show = cfg_cmd->add_subcommand("show-defaults", "Print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto desc = mimo::CorpusDescription::Load(gen_desc);
      if (desc.utterances.empty()) throw mimo::DataError("corpus description lists no utterances");
      const auto m = mimo::GenerateCorpus(desc, gen_out, gen_seed, gen_workers);
      std::cout << "generated " << m.mixtures.size() << " mixtures\n";
      for (const auto &e : m.mixtures) std::cout << e.id << '\n';
      return 0;
    }
    if (*sep) {
      auto cfg = LoadConfig(sep_config);
      if (sep_workers > 0) cfg.workers = static_cast<std::size_t>(sep_workers);
      if (sep_quiet) cfg.quiet = true;
      const auto corpus = mimo::CorpusManifest::Load(sep_corpus);
      const auto summary = mimo::RunSeparate(corpus, cfg, sep_out, &std::cerr);
      if (!cfg.quiet)
        std::cerr << "processed " << summary.processed << ", failed "
                  << summary.failures.size() << '\n';
      return summary.ExitCode();
    }
    if (*ev) {
      const auto corpus = mimo::CorpusManifest::Load(ev_corpus);
      const auto table = mimo::RunEvaluate(ev_sep, corpus, ev_workers);
      if (!ev_json.empty()) WriteText(ev_json, table.ToJson().dump(2) + "\n");
      if (!ev_table.empty()) WriteText(ev_table, table.ToText());
      else std::cout << table.ToText();
      for (const auto &f : table.failures) std::cerr << "error: " << f.id << ": " << f.message << '\n';
      return table.failures.empty() ? 0 : table.failures.front().exit_code;
    }
    if (*sch) {
      mimo::ScheduleInputs in;
      if (!sch_corpus.empty()) in.noisy = mimo::NoisyFromCorpus(mimo::CorpusManifest::Load(sch_corpus));
      if (!sch_clean.empty()) {
        std::ifstream is(sch_clean);
        if (!is) throw mimo::DataError("cannot open " + sch_clean);
        nlohmann::json j;
        try {
          is >> j;
        } catch (const nlohmann::json::exception &ex) {
          throw mimo::DataError(sch_clean + ": " + ex.what());
        }
        in.clean = mimo::CleanFromJson(j);
      }
      const auto key = sch_raw ? mimo::SnrSortKey::kRaw : mimo::SnrSortKey::kAbsolute;
      std::size_t total_violations = 0;
      nlohmann::json out;
      if (!sch_validate.empty()) {
        std::ifstream is(sch_validate);
        if (!is) throw mimo::DataError("cannot open " + sch_validate);
        nlohmann::json j;
        try {
          is >> j;
        } catch (const nlohmann::json::exception &ex) {
          throw mimo::DataError(sch_validate + ": " + ex.what());
        }
        // Accept a single plan or the dry-run output with an "epochs" array.
        std::vector<nlohmann::json> plans;
        if (j.contains("epochs"))
          for (const auto &e : j.at("epochs")) plans.push_back(e.at("plan"));
        else
          plans.push_back(j);
        for (std::size_t k = 0; k < plans.size(); ++k) {
          const auto v = mimo::ValidatePlan(mimo::BatchPlan::FromJson(plans[k]), in.clean, in.noisy, key);
          for (const auto &msg : v) std::cout << "violation: plan " << k << ": " << msg << '\n';
          total_violations += v.size();
        }
        std::cout << (total_violations ? "INVALID" : "OK") << " (" << total_violations
                  << " violations)\n";
        return total_violations ? 2 : 0;
      }
      const auto epochs =
          mimo::ScheduleDryRun(in, sch_batch, sch_seed, sch_epochs, sch_curriculum, key);
      out["batch_size"] = sch_batch;
      out["seed"] = sch_seed;
      out["epochs"] = nlohmann::json::array();
      for (const auto &e : epochs) {
        out["epochs"].push_back(
            {{"epoch", e.epoch}, {"plan", e.plan.ToJson()}, {"violations", e.violations}});
        for (const auto &msg : e.violations)
          std::cerr << "violation: epoch " << e.epoch << ": " << msg << '\n';
        total_violations += e.violations.size();
      }
      if (sch_out.empty()) std::cout << out.dump(2) << '\n';
      else WriteText(sch_out, out.dump(2) + "\n");
      return total_violations ? 2 : 0;
    }
    if (*feat) {
      const auto cfg = LoadConfig(feat_config);
      auto run = mimo::ComputeFeatures(feat_wavs, cfg);
      fs::create_directories(feat_out);
      const mimo::MvnStats stats =
          feat_stats_in.empty() ? run.stats : mimo::MvnStats::Load(feat_stats_in);
      if (feat_stats_in.empty()) run.stats.Save((fs::path(feat_out) / "mvn_stats.json").string());
      for (std::size_t k = 0; k < feat_wavs.size(); ++k) {
        const auto name = fs::path(feat_wavs[k]).stem().string() + "_logmel.tnsr";
        mimo::WriteTensorFile((fs::path(feat_out) / name).string(),
                              mimo::ToTensorFile(mimo::MvnApply(run.features[k], stats)));
      }
      std::cout << "wrote features for " << feat_wavs.size() << " files ("
                << run.stats.frame_count << " frames)\n";
      return 0;
    }
    if (*ctc) {
      const auto rep = mimo::CtcGradientCheck(ctc_seed, ctc_n);
      std::cout << "instances " << rep.instances << " max_rel_error " << rep.max_rel_error
                << " max_abs_error " << rep.max_abs_error << '\n';
      if (!(rep.max_rel_error < ctc_tol)) {
        std::cout << "FAIL\n";
        return 3;
      }
      std::cout << "PASS\n";
      return 0;
    }
    if (*bp) {
      const auto cfg = LoadConfig(bp_config);
      const auto t = mimo::ReadTensorFile(bp_filters);
      if (t.dtype != mimo::TensorDtype::kComplex64 || t.dims.size() != 3)
        throw mimo::DataError(bp_filters + " is not a (J, F, C) complex tensor");
      mimo::Tensor<mimo::Complex, 3> w({t.dims[0], t.dims[1], t.dims[2]});
      for (std::size_t k = 0; k < w.size(); ++k)
        w.flat()[k] = {t.values[2 * k], t.values[2 * k + 1]};
      const auto filters = mimo::BeamformerFilters::FromTensor(w);
      std::vector<mimo::Point3> mics;
      double speed = 343.0;
      if (!bp_mics.empty()) {
        mics = ParsePoints(bp_mics);
      } else {
        if (bp_corpus.empty() || bp_id.empty())
          throw mimo::UsageError("beampattern needs --mics or --corpus with --id");
        const auto corpus = mimo::CorpusManifest::Load(bp_corpus);
        const mimo::CorpusEntry *entry = nullptr;
        for (const auto &e : corpus.mixtures)
          if (e.id == bp_id) entry = &e;
        if (!entry) throw mimo::DataError("mixture " + bp_id + " not in corpus");
        mics = entry->scene.mic_positions_m;
        speed = entry->scene.speed_of_sound_mps;
      }
      if (filters.num_bins != cfg.stft.num_bins())
        throw mimo::DataError("filter bin count does not match the config fft_size");
      mimo::WriteBeamPatternCsv(bp_out,
                                mimo::BeamPattern(filters, bp_speaker, bp_freqs, mics, speed, cfg.stft));
      return 0;
    }
    if (*tr) {
      const auto cfg = LoadConfig(tr_config);
      const auto corpus = mimo::CorpusManifest::Load(tr_corpus);
      std::vector<mimo::TinyMaskEstimator::Example> data;
      for (const auto &e : corpus.mixtures) {
        const auto mix = mimo::Stft(mimo::ReadWav(corpus.Resolve(e.wav_mix), cfg.stft.sample_rate_hz), cfg.stft);
        std::vector<mimo::MultichannelSpectrogram> refs;
        for (const auto &r : e.wav_refs)
          refs.push_back(mimo::Stft(mimo::ReadWav(corpus.Resolve(r), cfg.stft.sample_rate_hz), cfg.stft));
        if (refs.size() != cfg.num_speakers)
          throw mimo::DataError(e.id + ": reference count differs from num_speakers");
        const auto masks = mimo::OracleMasks(refs, mix, mimo::OracleMaskKind::kIrm);
        for (std::size_t c = 0; c < mix.num_channels(); ++c) {
          mimo::TinyMaskEstimator::Example ex;
          ex.spectrogram = mix.Channel(c);
          ex.target = mimo::Tensor<double, 3>({masks.num_sources(), masks.num_frames(), masks.num_bins()});
          for (std::size_t i = 0; i < masks.num_sources(); ++i)
            for (std::size_t t = 0; t < masks.num_frames(); ++t)
              for (std::size_t f = 0; f < masks.num_bins(); ++f) ex.target(i, t, f) = masks.data(i, t, f, c);
          data.push_back(std::move(ex));
        }
      }
      mimo::TinyMaskEstimator est(cfg.num_speakers, cfg.stft.num_bins());
      const auto hist = est.Train(data, tr_epochs, tr_lr);
      WriteText(tr_out, est.ToJson().dump() + "\n");
      if (!hist.empty())
        std::cout << "mse first " << hist.front() << " last " << hist.back() << '\n';
      return 0;
    }
    if (*show) {
      std::cout << mimo::PipelineConfig{}.ToText();
      return 0;
    }
  } catch (const std::exception &ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return mimo::ErrorExitCode(ex);
  }
  return 1;
}
