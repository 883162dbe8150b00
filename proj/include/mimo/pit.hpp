// mimo/pit.hpp

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

// Permutation-invariant stream-to-reference assignment and the interpolated
// CTC / attention objective. Streams and references are 0-based here; a
// permutation maps stream i to reference perm[i].

#ifndef MIMO_PIT_HPP_
#define MIMO_PIT_HPP_

#include <algorithm>
#include <concepts>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimo/common.hpp"
#include "mimo/ctc.hpp"

namespace mimo {

/// Entry (i, k) is the loss of output stream i against reference k.
using LossMatrix = Tensor<double, 2>;
using Permutation = std::vector<std::size_t>;

inline constexpr std::size_t kMaxPitSpeakers = 8;

struct Assignment {
  Permutation perm;
  double total = 0.0;
};

inline void CheckSquare(const LossMatrix &m) {
  if (m.dim(0) != m.dim(1)) throw UsageError("loss matrix must be square");
  if (m.dim(0) == 0) throw UsageError("loss matrix is empty");
}

/// argmin over all J! permutations of sum_i losses(i, perm[i]). Permutations
/// are visited in lexicographic order and only a strictly smaller total
/// replaces the incumbent, so ties resolve to the lexicographically smallest
/// permutation. +inf entries simply make an assignment unattractive.
inline Assignment PitResolve(const LossMatrix &losses) {
  CheckSquare(losses);
  const std::size_t J = losses.dim(0);
  if (J > kMaxPitSpeakers)
    throw UsageError("exhaustive PIT supports at most 8 streams");
  Permutation p(J);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Assignment best{p, std::numeric_limits<double>::quiet_NaN()};
  bool have = false;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < J; ++i) total += losses(i, p[i]);
    if (!have || total < best.total) {
      best = {p, total};
      have = true;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// O(J^3) Hungarian (Kuhn-Munkres with potentials) minimum-cost assignment.
/// Used as an independent cross-check of PitResolve and for large J.
inline Assignment HungarianAssign(const LossMatrix &cost) {
  CheckSquare(cost);
  const std::size_t n = cost.dim(0);
  for (double v : cost.flat())
    if (!std::isfinite(v)) throw UsageError("Hungarian solver needs finite costs");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = row_of[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.perm.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.perm[row_of[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) a.total += cost(i, a.perm[i]);
  return a;
}

struct LossConfig {
  double lambda = 0.2;

  void Validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw UsageError("loss interpolation factor must be in [0, 1]");
  }
};

/// lambda * sum_i ctc(i, perm[i]) + (1 - lambda) * sum_i att(i, perm[i]).
/// The same permutation, chosen from the CTC losses, indexes both sums.
/// A zero-weighted term is skipped so that lambda in {0, 1} is exactly the
/// other sum even when the skipped sum is infinite.
inline double CombinedLoss(const LossMatrix &ctc, const LossMatrix &att,
                           const Permutation &perm, const LossConfig &cfg) {
  cfg.Validate();
  CheckSquare(ctc);
  if (att.dims() != ctc.dims()) throw UsageError("CTC and attention matrices differ in shape");
  if (perm.size() != ctc.dim(0)) throw UsageError("permutation length mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (auto k : perm) {
    if (k >= perm.size() || seen[k]) throw UsageError("not a permutation");
    seen[k] = true;
  }
  double sum_ctc = 0.0, sum_att = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    sum_ctc += ctc(i, perm[i]);
    sum_att += att(i, perm[i]);
  }
  double total = 0.0;
  if (cfg.lambda != 0.0) total += cfg.lambda * sum_ctc;
  if (cfg.lambda != 1.0) total += (1.0 - cfg.lambda) * sum_att;
  return total;
}

/// Anything that scores one stream's features against one reference label
/// sequence (stands in for the attention decoder's cross-entropy).
template <typename P>
concept AttentionLossProvider =
    requires(const P &p, const Tensor<double, 2> &feats, const LabelSequence &labels) {
      { p.Loss(feats, labels) } -> std::convertible_to<double>;
    };

/// Cross-entropy of a predictor that is uniform over V tokens: N log V.
struct UniformAttentionProvider {
  std::size_t vocab_size = 2;
  double Loss(const Tensor<double, 2> &, const LabelSequence &labels) const {
    return static_cast<double>(labels.tokens.size()) *
           std::log(static_cast<double>(vocab_size));
  }
};

/// Adapter for ad-hoc providers (tests, scripting).
struct FunctionAttentionProvider {
  std::function<double(const Tensor<double, 2> &, const LabelSequence &)> fn;
  double Loss(const Tensor<double, 2> &f, const LabelSequence &l) const { return fn(f, l); }
};

static_assert(AttentionLossProvider<UniformAttentionProvider>);
static_assert(AttentionLossProvider<FunctionAttentionProvider>);

/// Everything computed for one multi-speaker utterance.
struct PitLossReport {
  LossMatrix ctc;
  LossMatrix att;
  Assignment assignment;
  double lambda = 0.2;
  double total = 0.0;

  nlohmann::json ToJson() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < ctc.dim(0); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < ctc.dim(1); ++k) {
        const double v = ctc(i, k);
        if (std::isfinite(v)) row.push_back(v);
        else row.push_back("inf");
      }
      rows.push_back(row);
    }
    nlohmann::json j;
    j["per_stream_ctc"] = rows;
    j["chosen_perm"] = assignment.perm;
    j["lambda"] = lambda;
    if (std::isfinite(total)) j["total"] = total;
    else j["total"] = "inf";
    return j;
  }
};

/// Computes the J x J CTC and attention loss matrices for J output streams
/// against J references, resolves the permutation from the CTC matrix and
/// combines. Provider exceptions are rethrown with the stream index attached.
template <AttentionLossProvider P>
PitLossReport ComputePitLoss(const std::vector<Tensor<double, 2>> &stream_logits,
                             const std::vector<Tensor<double, 2>> &stream_features,
                             const std::vector<LabelSequence> &references,
                             const P &provider, const LossConfig &cfg) {
  cfg.Validate();
  const std::size_t J = stream_logits.size();
  if (J == 0 || references.size() != J || stream_features.size() != J)
    throw UsageError("need the same positive number of streams, features and references");
  PitLossReport rep;
  rep.lambda = cfg.lambda;
  rep.ctc = LossMatrix({J, J});
  rep.att = LossMatrix({J, J});
  for (std::size_t i = 0; i < J; ++i)
    for (std::size_t k = 0; k < J; ++k) {
      rep.ctc(i, k) = CtcLoss(stream_logits[i], references[k]).loss;
      try {
        rep.att(i, k) = provider.Loss(stream_features[i], references[k]);
      } catch (const std::exception &ex) {
        throw DataError("attention loss provider failed on stream " + std::to_string(i) +
                        " vs reference " + std::to_string(k) + ": " + ex.what());
      }
    }
  rep.assignment = PitResolve(rep.ctc);
  rep.total = CombinedLoss(rep.ctc, rep.att, rep.assignment.perm, cfg);
  return rep;
}

}  // namespace mimo

#endif  // MIMO_PIT_HPP_
