// mimo/scheduler.hpp

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

// Batch ordering for mixed single-speaker / multi-speaker training.
//
// Curriculum phase: single-speaker utterances sorted by length, multi-speaker
// mixtures sorted by |SNR| (balanced levels first), each side cut into
// contiguous batches, then clean / noisy batches strictly alternate (clean
// first) until one side runs out and the rest of the other side follows.
//
// Shuffled phase: each side shuffled and batched, then at every step the next
// batch is drawn from a side with probability proportional to its remaining
// batch count.
//
// A batch never mixes kinds: single-speaker batches skip the front-end.

#ifndef MIMO_SCHEDULER_HPP_
#define MIMO_SCHEDULER_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/common.hpp"

namespace mimo {

enum class UtteranceKind { kCleanSingle, kNoisyMulti };
enum class SchedulePhase { kCurriculum, kShuffled };
enum class SnrSortKey { kAbsolute, kRaw };

inline std::string ToString(UtteranceKind k) {
  return k == UtteranceKind::kCleanSingle ? "clean" : "noisy";
}
inline std::string ToString(SchedulePhase p) {
  return p == SchedulePhase::kCurriculum ? "curriculum" : "shuffled";
}

struct UtteranceMeta {
  std::string id;
  UtteranceKind kind = UtteranceKind::kCleanSingle;
  long length_frames = 0;
  std::optional<double> snr_db;  // present iff kNoisyMulti
  std::string shard;

  void Validate() const {
    if (length_frames <= 0) throw DataError(id + ": length_frames must be positive");
    if ((kind == UtteranceKind::kNoisyMulti) != snr_db.has_value())
      throw DataError(id + ": snr_db must be present exactly for multi-speaker data");
  }
};

struct Batch {
  UtteranceKind kind = UtteranceKind::kCleanSingle;
  std::vector<std::string> ids;
  bool operator==(const Batch &) const = default;
};

struct BatchPlan {
  SchedulePhase phase = SchedulePhase::kCurriculum;
  std::vector<Batch> batches;

  bool operator==(const BatchPlan &) const = default;

  nlohmann::json ToJson() const {
    nlohmann::json j;
    j["phase"] = ToString(phase);
    j["batches"] = nlohmann::json::array();
    for (const auto &b : batches)
      j["batches"].push_back({{"kind", ToString(b.kind)}, {"ids", b.ids}});
    return j;
  }

  static BatchPlan FromJson(const nlohmann::json &j) {
    BatchPlan p;
    try {
      const auto phase = j.at("phase").get<std::string>();
      if (phase == "curriculum") p.phase = SchedulePhase::kCurriculum;
      else if (phase == "shuffled") p.phase = SchedulePhase::kShuffled;
      else throw DataError("unknown plan phase " + phase);
      for (const auto &b : j.at("batches")) {
        Batch batch;
        const auto kind = b.at("kind").get<std::string>();
        if (kind == "clean") batch.kind = UtteranceKind::kCleanSingle;
        else if (kind == "noisy") batch.kind = UtteranceKind::kNoisyMulti;
        else throw DataError("unknown batch kind " + kind);
        batch.ids = b.at("ids").get<std::vector<std::string>>();
        p.batches.push_back(std::move(batch));
      }
    } catch (const nlohmann::json::exception &ex) {
      throw DataError(std::string("bad batch plan: ") + ex.what());
    }
    return p;
  }
};

namespace scheduler_internal {

inline void CheckInputs(const std::vector<UtteranceMeta> &clean,
                        const std::vector<UtteranceMeta> &noisy, std::size_t batch_size) {
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (clean.empty() && noisy.empty()) throw DataError("no utterances to schedule");
  for (const auto &u : clean) {
    u.Validate();
    if (u.kind != UtteranceKind::kCleanSingle)
      throw DataError(u.id + ": multi-speaker utterance in the clean list");
  }
  for (const auto &u : noisy) {
    u.Validate();
    if (u.kind != UtteranceKind::kNoisyMulti)
      throw DataError(u.id + ": single-speaker utterance in the noisy list");
  }
}

inline std::vector<Batch> Chunk(const std::vector<UtteranceMeta> &utts, UtteranceKind kind,
                                std::size_t batch_size) {
  std::vector<Batch> out;
  for (std::size_t k = 0; k < utts.size(); k += batch_size) {
    Batch b{kind, {}};
    for (std::size_t m = k; m < std::min(utts.size(), k + batch_size); ++m)
      b.ids.push_back(utts[m].id);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace scheduler_internal

inline double SnrKey(const UtteranceMeta &u, SnrSortKey key) {
  const double s = u.snr_db.value_or(0.0);
  return key == SnrSortKey::kAbsolute ? std::abs(s) : s;
}

/// Curriculum-phase plan. Sorting is stable, so equal keys keep input order;
/// the last partial batch of each side is kept.
inline BatchPlan BuildCurriculum(std::vector<UtteranceMeta> clean,
                                 std::vector<UtteranceMeta> noisy, std::size_t batch_size,
                                 SnrSortKey key = SnrSortKey::kAbsolute) {
  scheduler_internal::CheckInputs(clean, noisy, batch_size);
  std::stable_sort(clean.begin(), clean.end(), [](const auto &a, const auto &b) {
    return a.length_frames < b.length_frames;
  });
  std::stable_sort(noisy.begin(), noisy.end(), [key](const auto &a, const auto &b) {
    return SnrKey(a, key) < SnrKey(b, key);
  });
  const auto cb = scheduler_internal::Chunk(clean, UtteranceKind::kCleanSingle, batch_size);
  const auto nb = scheduler_internal::Chunk(noisy, UtteranceKind::kNoisyMulti, batch_size);
  BatchPlan plan;
  plan.phase = SchedulePhase::kCurriculum;
  for (std::size_t k = 0; k < std::max(cb.size(), nb.size()); ++k) {
    if (k < cb.size()) plan.batches.push_back(cb[k]);
    if (k < nb.size()) plan.batches.push_back(nb[k]);
  }
  return plan;
}

/// Shuffled-phase plan, deterministic in seed.
inline BatchPlan BuildShuffled(std::vector<UtteranceMeta> clean,
                               std::vector<UtteranceMeta> noisy, std::size_t batch_size,
                               std::uint64_t seed) {
  scheduler_internal::CheckInputs(clean, noisy, batch_size);
  std::mt19937_64 rng = DerivedRng(seed, 0x5c4ed);
  Shuffle(clean, rng);
  Shuffle(noisy, rng);
  const auto cb = scheduler_internal::Chunk(clean, UtteranceKind::kCleanSingle, batch_size);
  const auto nb = scheduler_internal::Chunk(noisy, UtteranceKind::kNoisyMulti, batch_size);
  BatchPlan plan;
  plan.phase = SchedulePhase::kShuffled;
  std::size_t ci = 0, ni = 0;
  while (ci < cb.size() || ni < nb.size()) {
    const std::size_t rc = cb.size() - ci, rn = nb.size() - ni;
    if (UniformIndex(rng, rc + rn) < rc) plan.batches.push_back(cb[ci++]);
    else plan.batches.push_back(nb[ni++]);
  }
  return plan;
}

/// Checks the plan against its inputs; returns human-readable violations
/// (empty when valid). Sortedness and alternation are only checked for the
/// curriculum phase.
inline std::vector<std::string> ValidatePlan(const BatchPlan &plan,
                                             const std::vector<UtteranceMeta> &clean,
                                             const std::vector<UtteranceMeta> &noisy,
                                             SnrSortKey key = SnrSortKey::kAbsolute) {
  std::vector<std::string> v;
  std::map<std::string, const UtteranceMeta *> meta;
  for (const auto &u : clean) meta[u.id] = &u;
  for (const auto &u : noisy) meta[u.id] = &u;
  std::map<std::string, int> seen;
  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    const Batch &batch = plan.batches[b];
    if (batch.ids.empty()) v.push_back("batch " + std::to_string(b) + " is empty");
    for (const auto &id : batch.ids) {
      ++seen[id];
      auto it = meta.find(id);
      if (it == meta.end()) {
        v.push_back("batch " + std::to_string(b) + " has unknown utterance " + id);
      } else if (it->second->kind != batch.kind) {
        v.push_back("batch " + std::to_string(b) + " mixes kinds (" + id + " is " +
                    ToString(it->second->kind) + ")");
      }
    }
  }
  for (const auto &[id, m] : meta)
    if (seen[id] != 1)
      v.push_back("utterance " + id + " appears " + std::to_string(seen[id]) + " times");
  if (plan.phase != SchedulePhase::kCurriculum) return v;

  double last_len = -1.0, last_snr = -std::numeric_limits<double>::infinity();
  std::size_t clean_left = 0, noisy_left = 0;
  for (const auto &b : plan.batches)
    (b.kind == UtteranceKind::kCleanSingle ? clean_left : noisy_left)++;
  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    const Batch &batch = plan.batches[b];
    for (const auto &id : batch.ids) {
      auto it = meta.find(id);
      if (it == meta.end() || it->second->kind != batch.kind) continue;
      if (batch.kind == UtteranceKind::kCleanSingle) {
        if (it->second->length_frames < last_len)
          v.push_back("clean lengths decrease at batch " + std::to_string(b));
        last_len = static_cast<double>(it->second->length_frames);
      } else {
        const double k = SnrKey(*it->second, key);
        if (k < last_snr) v.push_back("noisy SNR key decreases at batch " + std::to_string(b));
        last_snr = k;
      }
    }
    (batch.kind == UtteranceKind::kCleanSingle ? clean_left : noisy_left)--;
    if (b + 1 < plan.batches.size() && plan.batches[b + 1].kind == batch.kind) {
      const std::size_t other =
          batch.kind == UtteranceKind::kCleanSingle ? noisy_left : clean_left;
      if (other > 0)
        v.push_back("batches " + std::to_string(b) + " and " + std::to_string(b + 1) +
                    " share a kind before either side is exhausted");
    }
  }
  return v;
}

/// Single-pass traversal of a plan with a resumable cursor.
class EpochIterator {
 public:
  explicit EpochIterator(const BatchPlan &plan, std::size_t cursor = 0) : plan_(&plan) {
    Seek(cursor);
  }

  std::optional<Batch> Next() {
    if (cursor_ >= plan_->batches.size()) return std::nullopt;
    return plan_->batches[cursor_++];
  }

  std::size_t cursor() const { return cursor_; }

  void Seek(std::size_t cursor) {
    if (cursor > plan_->batches.size())
      throw UsageError("cursor " + std::to_string(cursor) + " beyond plan of " +
                       std::to_string(plan_->batches.size()) + " batches");
    cursor_ = cursor;
  }

 private:
  const BatchPlan *plan_;
  std::size_t cursor_ = 0;
};

}  // namespace mimo

#endif  // MIMO_SCHEDULER_HPP_
