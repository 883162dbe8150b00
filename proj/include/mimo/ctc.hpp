// mimo/ctc.hpp

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

// Connectionist temporal classification loss with exact gradient w.r.t. the
// pre-softmax scores. Forward and backward variables are kept in log space;
// both include the emission at their own frame, so
//   d loss / d z_{t,k} = y_{t,k} - (1 / p) sum_{s : l'_s = k} alpha_t(s) beta_t(s) / y_{t,k}.
// Token 0 is the blank.

#ifndef MIMO_CTC_HPP_
#define MIMO_CTC_HPP_

#include <algorithm>
#include <limits>
#include <vector>

#include "mimo/common.hpp"

namespace mimo {

inline constexpr int kBlank = 0;

struct LabelSequence {
  std::vector<int> tokens;  // each in [1, V - 1]
};

struct CtcResult {
  double loss = 0.0;
  Tensor<double, 2> grad;  // (T, V)
  bool feasible = true;
};

inline double LogAddExp(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Row-wise log-softmax of a (T, V) score matrix, max-shifted.
inline Tensor<double, 2> LogSoftmax(const Tensor<double, 2> &logits) {
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  Tensor<double, 2> out(logits.dims());
  for (std::size_t t = 0; t < T; ++t) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < V; ++k) m = std::max(m, logits(t, k));
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += std::exp(logits(t, k) - m);
    const double lse = m + std::log(s);
    for (std::size_t k = 0; k < V; ++k) out(t, k) = logits(t, k) - lse;
  }
  return out;
}

/// Minimum number of frames that can emit the label sequence: one per token
/// plus one blank between each pair of equal neighbours.
inline std::size_t CtcMinFrames(const LabelSequence &labels) {
  std::size_t n = labels.tokens.size();
  for (std::size_t k = 1; k < labels.tokens.size(); ++k)
    if (labels.tokens[k] == labels.tokens[k - 1]) ++n;
  return n;
}

/// -log p(labels | softmax(logits)). Infeasible instances (too few frames)
/// return +inf with a zero gradient and feasible = false.
inline CtcResult CtcLoss(const Tensor<double, 2> &logits, const LabelSequence &labels) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (T < 1) throw UsageError("CTC needs at least one frame");
  if (V < 2) throw UsageError("CTC needs a vocabulary with blank plus >= 1 token");
  for (double v : logits.flat())
    if (!std::isfinite(v)) throw DataError("CTC logits must be finite");
  for (int tok : labels.tokens)
    if (tok < 1 || static_cast<std::size_t>(tok) >= V)
      throw UsageError("CTC label " + std::to_string(tok) + " outside [1, V-1]");

  CtcResult res;
  res.grad = Tensor<double, 2>(logits.dims(), 0.0);
  if (T < CtcMinFrames(labels)) {
    res.loss = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }

  const Tensor<double, 2> lp = LogSoftmax(logits);
  const std::size_t N = labels.tokens.size(), S = 2 * N + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t k = 0; k < N; ++k) ext[2 * k + 1] = labels.tokens[k];
  auto can_skip = [&](std::size_t s) {  // transition s-2 -> s allowed
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
  };

  Tensor<double, 2> alpha({T, S}, kNegInf), beta({T, S}, kNegInf);
  alpha(0, 0) = lp(0, kBlank);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = LogAddExp(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = LogAddExp(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + lp(t, ext[s]);
    }

  beta(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = LogAddExp(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = LogAddExp(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + lp(t, ext[s]);
    }

  double log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = LogAddExp(log_p, alpha(T - 1, S - 2));
  if (log_p == kNegInf) {
    res.loss = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }
  res.loss = -log_p;

  std::vector<double> occ(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occ.begin(), occ.end(), kNegInf);
    for (std::size_t s = 0; s < S; ++s)
      occ[ext[s]] = LogAddExp(occ[ext[s]], alpha(t, s) + beta(t, s));
    for (std::size_t k = 0; k < V; ++k) {
      const double y = std::exp(lp(t, k));
      const double post = occ[k] == kNegInf ? 0.0 : std::exp(occ[k] - lp(t, k) - log_p);
      res.grad(t, k) = y - post;
    }
  }
  return res;
}

}  // namespace mimo

#endif  // MIMO_CTC_HPP_
