// tests/test_pipeline.cpp

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

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "mimo/pipeline.hpp"
#include "test_util.hpp"

namespace mimo {
namespace {

namespace fs = std::filesystem;

MultichannelWaveform Delayed(const std::vector<double> &x, std::vector<std::size_t> delays) {
  MultichannelWaveform w = MultichannelWaveform::Zeros(delays.size(), x.size(), 16000);
  for (std::size_t c = 0; c < delays.size(); ++c)
    for (std::size_t n = delays[c]; n < x.size(); ++n) w.samples[c][n] = x[n - delays[c]];
  return w;
}

MultichannelWaveform Sum(const MultichannelWaveform &a, const MultichannelWaveform &b) {
  auto out = a;
  for (std::size_t c = 0; c < a.num_channels(); ++c)
    for (std::size_t n = 0; n < a.num_samples(); ++n) out.samples[c][n] += b.samples[c][n];
  return out;
}

int RunCli(const std::string &args, std::string *stdout_text = nullptr) {
  const auto out = fs::temp_directory_path() / "mimo_test_cli_stdout.txt";
  const std::string cmd =
      std::string(MIMO_CLI_PATH) + " " + args + " > " + out.string() + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  if (stdout_text) *stdout_text = testing::ReadFile(out);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path SmallCorpus(const std::string &name, std::size_t n, std::uint64_t seed = 3) {
  const auto dir = testing::TempDir(name);
  const nlohmann::json desc = {
      {"n_mixtures", n},
      {"n_channels", 2},
      {"snr_range_db", {-3.0, 3.0}},
      {"synthetic_utterances", {{"count", 4}, {"min_duration_s", 0.6}, {"max_duration_s", 0.9}}}};
  GenerateCorpus(CorpusDescription::FromJson(desc), dir / "corpus", seed);
  return dir;
}

TEST(Config, DefaultsAndText) {
  const PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  const std::string text = cfg.ToText();
  EXPECT_NE(text.find("fft_size = 512"), std::string::npos);
  EXPECT_NE(text.find("mvdr_eps = "), std::string::npos);
  EXPECT_NE(text.find("reference = fixed:0"), std::string::npos);
  std::istringstream is(text);
  EXPECT_EQ(PipelineConfig::Parse(is).ToText(), text);
}

TEST(Config, ParseKeyValues) {
  std::istringstream is(
      "# front-end\n"
      "mvdr_eps = 1e-4   # loading\n"
      "\n"
      "reference=max_power\n"
      "  beamformer = selector\n"
      "num_speakers = 3\n"
      "quiet = true\n");
  const auto cfg = PipelineConfig::Parse(is);
  EXPECT_EQ(cfg.mvdr_eps, 1e-4);
  EXPECT_EQ(cfg.reference.kind, ReferenceKind::kMaxAveragePower);
  EXPECT_EQ(cfg.beamformer, BeamformerKind::kSelector);
  EXPECT_EQ(cfg.num_speakers, 3u);
  EXPECT_TRUE(cfg.quiet);
}

TEST(Config, Errors) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.Set("no_such_key", "1"), UsageError);
  EXPECT_THROW(cfg.Set("mvdr_eps", "abc"), UsageError);
  EXPECT_THROW(cfg.Set("num_speakers", "-2"), UsageError);
  EXPECT_THROW(cfg.Set("fft_size", "512x"), UsageError);
  EXPECT_THROW(cfg.Set("reference", "fixed:"), UsageError);
  EXPECT_THROW(cfg.Set("mask_source", "magic"), UsageError);
  EXPECT_THROW(cfg.Set("quiet", "maybe"), UsageError);
  std::istringstream missing_eq("mvdr_eps 1e-3\n");
  EXPECT_THROW(PipelineConfig::Parse(missing_eq), UsageError);
  cfg.lambda = 1.5;
  EXPECT_THROW(cfg.Validate(), UsageError);
  PipelineConfig est;
  est.mask_source = MaskSource::kEstimator;
  EXPECT_THROW(est.Validate(), UsageError);
  est.estimator_path = "/nonexistent/est.json";
  EXPECT_THROW(est.Validate(), DataError);
  PipelineConfig zero;
  zero.num_speakers = 0;
  EXPECT_THROW(zero.Validate(), UsageError);
  EXPECT_THROW(PipelineConfig::Load("/nonexistent/cfg.txt"), DataError);
}

TEST(Config, LoadResolvesEstimatorPath) {
  const auto dir = testing::TempDir("cfg_load");
  std::ofstream(dir / "est.json") << "{}";
  std::ofstream(dir / "cfg.txt") << "mask_source = estimator\nestimator_path = est.json\n";
  const auto cfg = PipelineConfig::Load((dir / "cfg.txt").string());
  EXPECT_EQ(fs::path(cfg.estimator_path), dir / "est.json");
}

TEST(Separate, TimeDisjointSourcesAreNulled) {
  // Each source is active alone, so the oracle masks are exactly 0 / 1 and
  // every PSD is estimated from that source only.
  std::mt19937_64 rng(1);
  const std::size_t len = 24000;
  std::vector<double> s1(len, 0.0), s2(len, 0.0);
  for (std::size_t n = 0; n < 10000; ++n) s1[n] = Gaussian(rng);
  for (std::size_t n = 12000; n < len; ++n) s2[n] = Gaussian(rng);
  const auto a = Delayed(s1, {0, 3}), b = Delayed(s2, {3, 0});
  const auto mix = Sum(a, b);
  const auto res = SeparateMixture(mix, {a, b}, PipelineConfig{});
  ASSERT_EQ(res.sources.size(), 2u);
  EXPECT_EQ(res.ref_channel, 0u);
  EXPECT_EQ(res.filters.diagnostics.pinv_fallback,
            std::vector<std::uint8_t>(res.filters.diagnostics.pinv_fallback.size(), 0));
  const double sa = SiSdr(res.sources[0].samples[0], a.samples[0]).db;
  const double sb = SiSdr(res.sources[1].samples[0], b.samples[0]).db;
  EXPECT_GT(sa, 15.0);
  EXPECT_GT(sb, 15.0);
  EXPECT_GT(sa - SiSdr(mix.samples[0], a.samples[0]).db, 15.0);
}

TEST(Separate, SelectorReproducesReferenceChannel) {
  std::mt19937_64 rng(2);
  const auto a = testing::RandomWave(rng, 3, 8000), b = testing::RandomWave(rng, 3, 8000);
  const auto mix = Sum(a, b);
  PipelineConfig cfg;
  cfg.beamformer = BeamformerKind::kSelector;
  cfg.reference = ReferencePolicy::Fixed(2);
  const auto res = SeparateMixture(mix, {a, b}, cfg);
  ASSERT_EQ(res.ref_channel, 2u);
  for (const auto &src : res.sources)
    for (std::size_t n = 400; n + 400 < 8000; ++n)
      ASSERT_NEAR(src.samples[0][n], mix.samples[2][n], 1e-9) << n;
}

TEST(Separate, ArgumentErrors) {
  std::mt19937_64 rng(3);
  const auto a = testing::RandomWave(rng, 2, 4000), b = testing::RandomWave(rng, 2, 4000);
  const auto mix = Sum(a, b);
  PipelineConfig cfg;
  cfg.num_speakers = 0;
  EXPECT_THROW(SeparateMixture(mix, {a, b}, cfg), UsageError);
  cfg.num_speakers = 3;
  EXPECT_THROW(SeparateMixture(mix, {a, b}, cfg), DataError);
  cfg.num_speakers = 2;
  cfg.reference = ReferencePolicy::Fixed(5);
  EXPECT_THROW(SeparateMixture(mix, {a, b}, cfg), UsageError);
  PipelineConfig est;
  est.mask_source = MaskSource::kEstimator;
  EXPECT_THROW(SeparateMixture(mix, {}, est), UsageError);
  const auto silent = MultichannelWaveform::Zeros(2, 4000, 16000);
  EXPECT_THROW(SeparateMixture(a, {a, silent}, PipelineConfig{}), NumericError);
}

TEST(Separate, RunWritesOutputsDeterministically) {
  const auto dir = SmallCorpus("run_sep", 2);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  PipelineConfig cfg;
  const auto s1 = RunSeparate(corpus, cfg, dir / "sep1");
  cfg.workers = 2;
  const auto s2 = RunSeparate(corpus, cfg, dir / "sep2");
  EXPECT_EQ(s1.processed, 2u);
  EXPECT_EQ(s1.ExitCode(), 0);
  EXPECT_EQ(s2.processed, 2u);
  for (const auto &e : corpus.mixtures) {
    for (const char *suffix : {"_s1.wav", "_s2.wav", "_masks.tnsr", "_filters.tnsr", "_diag.json"})
      EXPECT_EQ(testing::ReadFile(dir / "sep1" / (e.id + suffix)),
                testing::ReadFile(dir / "sep2" / (e.id + suffix)))
          << e.id << suffix;
    const auto diag = nlohmann::json::parse(testing::ReadFile(dir / "sep1" / (e.id + "_diag.json")));
    EXPECT_EQ(diag.at("condition_numbers").size(), 2u);
    EXPECT_EQ(diag.at("pinv_fallback")[0].size(), 257u);
    const auto masks = ReadTensorFile((dir / "sep1" / (e.id + "_masks.tnsr")).string());
    EXPECT_EQ(masks.dims.size(), 4u);
    EXPECT_EQ(masks.dims[0], 3u);  // noise + 2 speakers
  }
  EXPECT_EQ(testing::ReadFile(dir / "sep1" / "separation.json"),
            testing::ReadFile(dir / "sep2" / "separation.json"));
}

TEST(Separate, FailuresAreRecordedAndSkipped) {
  const auto dir = SmallCorpus("run_fail", 2);
  auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  // Silence the second reference of mixture 0: its target PSD vanishes.
  const auto &e = corpus.mixtures[0];
  auto ref = ReadWav(corpus.Resolve(e.wav_refs[1]));
  for (auto &ch : ref.samples) std::fill(ch.begin(), ch.end(), 0.0);
  WriteWav(corpus.Resolve(e.wav_refs[1]), ref);
  const auto s = RunSeparate(corpus, PipelineConfig{}, dir / "sep");
  EXPECT_EQ(s.processed, 1u);
  ASSERT_EQ(s.failures.size(), 1u);
  EXPECT_EQ(s.failures[0].id, e.id);
  EXPECT_EQ(s.ExitCode(), 3);
  const auto index = nlohmann::json::parse(testing::ReadFile(dir / "sep" / "separation.json"));
  EXPECT_EQ(index.at("mixtures").size(), 1u);
  EXPECT_EQ(index.at("failures").size(), 1u);
  const auto table = RunEvaluate(dir / "sep", corpus);
  EXPECT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.failures.size(), 1u);
}

TEST(Evaluate, MatchesDirectMetricCalls) {
  const auto dir = SmallCorpus("eval_direct", 2);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  RunSeparate(corpus, PipelineConfig{}, dir / "sep");
  const auto table = RunEvaluate(dir / "sep", corpus);
  ASSERT_EQ(table.rows.size(), 2u);
  double total = 0.0;
  for (const auto &row : table.rows) {
    const CorpusEntry *e = nullptr;
    for (const auto &m : corpus.mixtures)
      if (m.id == row.id) e = &m;
    ASSERT_NE(e, nullptr);
    const auto mix = ReadWav(corpus.Resolve(e->wav_mix));
    for (std::size_t k = 0; k < 2; ++k) {
      const auto ref = ReadWav(corpus.Resolve(e->wav_refs[k]));
      const auto est =
          ReadWav((dir / "sep" / (row.id + "_s" + std::to_string(row.pairing[k] + 1) + ".wav")).string());
      EXPECT_EQ(row.si_sdr_db[k], SiSdr(est.samples[0], ref.samples[row.ref_channel]).db);
      EXPECT_EQ(row.mixture_si_sdr_db[k],
                SiSdr(mix.samples[row.ref_channel], ref.samples[row.ref_channel]).db);
      total += row.si_sdr_db[k];
    }
  }
  EXPECT_NEAR(table.AverageSiSdr(), total / 4.0, 1e-12);
  EXPECT_GT(table.AverageImprovement(), 0.0);
  const auto j = table.ToJson();
  EXPECT_EQ(j.at("mixtures").size(), 2u);
  EXPECT_NE(table.ToText().find("average"), std::string::npos);
}

nlohmann::json OracleIndex(const CorpusManifest &corpus, const fs::path &corpus_dir, bool swap) {
  nlohmann::json index;
  index["mixtures"] = nlohmann::json::array();
  index["failures"] = nlohmann::json::array();
  for (const auto &e : corpus.mixtures) {
    std::vector<std::string> w;
    for (const auto &r : e.wav_refs) w.push_back((corpus_dir / r).string());
    if (swap) std::swap(w[0], w[1]);
    index["mixtures"].push_back({{"id", e.id}, {"ref_channel", 0}, {"wav_sources", w}});
  }
  return index;
}

TEST(Evaluate, IdenticalEstimatesAreCappedAndOrderFree) {
  const auto dir = SmallCorpus("eval_oracle", 2);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  std::ofstream(dir / "a" / "separation.json") << OracleIndex(corpus, dir / "corpus", false).dump();
  std::ofstream(dir / "b" / "separation.json") << OracleIndex(corpus, dir / "corpus", true).dump();
  const auto ta = RunEvaluate(dir / "a", corpus), tb = RunEvaluate(dir / "b", corpus);
  ASSERT_EQ(ta.rows.size(), 2u);
  for (const auto &r : ta.rows) {
    EXPECT_EQ(r.si_sdr_db, (std::vector<double>{100.0, 100.0}));
    EXPECT_EQ(r.pairing, (Permutation{0, 1}));
  }
  for (const auto &r : tb.rows) EXPECT_EQ(r.pairing, (Permutation{1, 0}));
  EXPECT_EQ(ta.AverageSiSdr(), tb.AverageSiSdr());
  EXPECT_EQ(ta.AverageImprovement(), tb.AverageImprovement());
}

TEST(Evaluate, BadIndex) {
  const auto dir = SmallCorpus("eval_bad", 1);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  EXPECT_THROW(RunEvaluate(dir / "nothing", corpus), DataError);
  fs::create_directories(dir / "x");
  std::ofstream(dir / "x" / "separation.json")
      << R"({"mixtures": [{"id": "ghost", "ref_channel": 0, "wav_sources": []}]})";
  const auto t = RunEvaluate(dir / "x", corpus);
  EXPECT_TRUE(t.rows.empty());
  ASSERT_EQ(t.failures.size(), 1u);
  EXPECT_EQ(t.failures[0].id, "ghost");
}

TEST(ScheduleDryRunTest, EpochsAndValidation) {
  const auto dir = SmallCorpus("sched", 5);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  ScheduleInputs in;
  in.noisy = NoisyFromCorpus(corpus);
  in.clean = CleanFromJson(nlohmann::json::parse(
      R"({"utterances": [{"id": "c1", "length_frames": 40}, {"id": "c2", "length_frames": 10},
                         {"id": "c3", "length_frames": 25, "shard": "s0"}]})"));
  const auto epochs = ScheduleDryRun(in, 2, 9, 3, 1);
  ASSERT_EQ(epochs.size(), 3u);
  EXPECT_EQ(epochs[0].plan.phase, SchedulePhase::kCurriculum);
  EXPECT_EQ(epochs[1].plan.phase, SchedulePhase::kShuffled);
  for (const auto &e : epochs) EXPECT_TRUE(e.violations.empty());
  EXPECT_EQ(ScheduleDryRun(in, 2, 9, 3, 1)[2].plan, epochs[2].plan);
  EXPECT_THROW(CleanFromJson(nlohmann::json::parse(R"({"utterances": [{"id": "x"}]})")), DataError);
}

TEST(CtcCheck, PassesOnRandomInstances) {
  const auto rep = CtcGradientCheck(0, 30);
  EXPECT_EQ(rep.instances, 30u);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(Features, StatsNormalizeTheCorpus) {
  const auto dir = SmallCorpus("feats", 2);
  const auto corpus = CorpusManifest::Load((dir / "corpus" / "manifest.json").string());
  std::vector<std::string> wavs;
  for (const auto &e : corpus.mixtures) wavs.push_back(corpus.Resolve(e.wav_mix));
  const auto run = ComputeFeatures(wavs, PipelineConfig{});
  ASSERT_EQ(run.features.size(), 2u);
  EXPECT_EQ(run.features[0].dim(1), 80u);
  EXPECT_EQ(run.stats.frame_count, run.features[0].dim(0) + run.features[1].dim(0));
  MvnAccumulator acc;
  for (const auto &f : run.features) acc.Add(MvnApply(f, run.stats));
  for (std::size_t d = 0; d < 80; ++d) {
    EXPECT_LT(std::abs(acc.mean()[d]), 1e-9);
    if (!run.stats.std_floored[d]) {
      EXPECT_NEAR(std::sqrt(acc.variance()[d]), 1.0, 1e-6);
    }
  }
}

TEST(Cli, ExitCodes) {
  std::string out;
  EXPECT_EQ(RunCli("", &out), 1);
  EXPECT_EQ(RunCli("frobnicate"), 1);
  EXPECT_EQ(RunCli("config show-defaults", &out), 0);
  EXPECT_NE(out.find("mvdr_eps = "), std::string::npos);
  EXPECT_EQ(RunCli("generate /nonexistent/desc.json -o /tmp/mimo_test_cli_none"), 2);
  EXPECT_EQ(RunCli("ctc-check --instances 5 --tolerance 0"), 3);
  EXPECT_EQ(RunCli("ctc-check --instances 5", &out), 0);
  EXPECT_NE(out.find("PASS"), std::string::npos);
}

TEST(Cli, EmptyDescriptionIsADataError) {
  const auto dir = testing::TempDir("cli_empty");
  std::ofstream(dir / "desc.json") << R"({"n_mixtures": 0})";
  EXPECT_EQ(RunCli("generate " + (dir / "desc.json").string() + " -o " + (dir / "out").string()), 2);
}

TEST(Cli, EndToEnd) {
  const auto dir = testing::TempDir("cli_e2e");
  const nlohmann::json desc = {
      {"n_mixtures", 2},
      {"synthetic_utterances", {{"count", 3}, {"min_duration_s", 0.6}, {"max_duration_s", 0.8}}}};
  std::ofstream(dir / "desc.json") << desc.dump();
  const std::string corpus = (dir / "corpus" / "manifest.json").string();
  std::string out;
  ASSERT_EQ(RunCli("generate " + (dir / "desc.json").string() + " -o " + (dir / "corpus").string() +
                       " --seed 4",
                   &out),
            0);
  EXPECT_NE(out.find("generated 2 mixtures"), std::string::npos);

  std::ofstream(dir / "bad.cfg") << "mvdr_epsilon = 1\n";
  EXPECT_EQ(RunCli("separate " + corpus + " -c " + (dir / "bad.cfg").string() + " -o " +
                   (dir / "sep").string()),
            1);
  std::ofstream(dir / "good.cfg") << "mvdr_eps = 1e-6\nquiet = true\n";
  ASSERT_EQ(RunCli("separate " + corpus + " -c " + (dir / "good.cfg").string() + " -o " +
                   (dir / "sep").string()),
            0);
  ASSERT_EQ(RunCli("evaluate " + (dir / "sep").string() + " " + corpus + " --json " +
                   (dir / "scores.json").string(),
                   &out),
            0);
  EXPECT_NE(out.find("average"), std::string::npos);
  const auto scores = nlohmann::json::parse(testing::ReadFile(dir / "scores.json"));
  EXPECT_EQ(scores.at("mixtures").size(), 2u);

  const auto m = CorpusManifest::Load(corpus);
  const std::string filters = (dir / "sep" / (m.mixtures[0].id + "_filters.tnsr")).string();
  EXPECT_EQ(RunCli("beampattern " + filters + " --corpus " + corpus + " --id " + m.mixtures[0].id +
                   " -o " + (dir / "bp.csv").string()),
            0);
  EXPECT_NE(testing::ReadFile(dir / "bp.csv").find("freq_hz"), std::string::npos);
  EXPECT_EQ(RunCli("beampattern " + filters + " -o " + (dir / "bp2.csv").string()), 1);

  EXPECT_EQ(RunCli("features " + (dir / "corpus" / m.mixtures[0].wav_mix).string() + " -o " +
                   (dir / "feats").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "feats" / "mvn_stats.json"));

  std::ofstream(dir / "clean.json") << R"({"utterances": [{"id": "c1", "length_frames": 12}]})";
  const std::string plan = (dir / "plan.json").string();
  ASSERT_EQ(RunCli("schedule-dryrun --corpus " + corpus + " --clean " + (dir / "clean.json").string() +
                   " --batch-size 1 --epochs 2 -o " + plan),
            0);
  const std::string inputs = " --corpus " + corpus + " --clean " + (dir / "clean.json").string();
  EXPECT_EQ(RunCli("schedule-dryrun" + inputs + " --validate " + plan, &out), 0);
  EXPECT_NE(out.find("OK"), std::string::npos);
  auto tampered = nlohmann::json::parse(testing::ReadFile(plan));
  auto &batches = tampered["epochs"][0]["plan"]["batches"];
  batches[0]["ids"].push_back(batches[1]["ids"][0]);
  batches.erase(1);
  std::ofstream(dir / "tampered.json") << tampered.dump();
  EXPECT_EQ(RunCli("schedule-dryrun" + inputs + " --validate " + (dir / "tampered.json").string(), &out),
            2);
  EXPECT_NE(out.find("mixes kinds"), std::string::npos);

  EXPECT_EQ(RunCli("train-masknet " + corpus + " -o " + (dir / "est.json").string() + " --epochs 3"),
            0);
  std::ofstream(dir / "est.cfg") << "mask_source = estimator\nestimator_path = est.json\n";
  EXPECT_EQ(RunCli("separate " + corpus + " -c " + (dir / "est.cfg").string() + " -o " +
                   (dir / "sep_est").string()),
            0);
}

}  // namespace
}  // namespace mimo
