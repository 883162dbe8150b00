// mimo/metrics.hpp

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

#ifndef MIMO_METRICS_HPP_
#define MIMO_METRICS_HPP_

#include <algorithm>
#include <cctype>
#include <sstream>
#include <string>
#include <vector>

#include "mimo/common.hpp"

namespace mimo {

inline constexpr double kSiSdrCapDb = 100.0;

struct SiSdrResult {
  double db = 0.0;
  bool capped = false;
};

/// Scale-invariant SDR in dB after removing the mean of both signals.
/// Results at or above 100 dB (including a zero residual) are reported as
/// 100 dB with capped = true.
inline SiSdrResult SiSdr(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size())
    throw DataError("SI-SDR needs equal-length signals");
  if (estimate.empty()) throw DataError("SI-SDR needs at least one sample");
  const auto n = static_cast<double>(estimate.size());
  long double me = 0.0L, mr = 0.0L;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    me += estimate[k];
    mr += reference[k];
  }
  me /= n;
  mr /= n;
  long double dot = 0.0L, rr = 0.0L;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    const long double r = reference[k] - mr;
    dot += (estimate[k] - me) * r;
    rr += r * r;
  }
  if (rr <= 0.0L) throw DataError("SI-SDR reference is zero (after mean removal)");
  const long double alpha = dot / rr;
  long double target = 0.0L, resid = 0.0L;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    const long double t = alpha * (reference[k] - mr);
    const long double e = (estimate[k] - me) - t;
    target += t * t;
    resid += e * e;
  }
  if (resid <= 0.0L) return {kSiSdrCapDb, true};
  const double db = static_cast<double>(10.0L * std::log10(target / resid));
  if (db >= kSiSdrCapDb) return {kSiSdrCapDb, true};
  return {db, false};
}

struct ErrorRateReport {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  /// (S + I + D) / N; an empty reference gives 0 for an empty hypothesis and
  /// the insertion count otherwise.
  double rate() const {
    if (reference_length == 0) return static_cast<double>(insertions);
    return static_cast<double>(errors()) / static_cast<double>(reference_length);
  }
};

/// Levenshtein alignment with unit costs. On the backtrace, ties prefer a
/// match/substitution, then an insertion, then a deletion.
template <typename Token>
ErrorRateReport EditDistance(const std::vector<Token> &hyp, const std::vector<Token> &ref) {
  const std::size_t H = hyp.size(), R = ref.size();
  std::vector<std::size_t> d((R + 1) * (H + 1));
  auto at = [&](std::size_t r, std::size_t h) -> std::size_t & { return d[r * (H + 1) + h]; };
  for (std::size_t r = 0; r <= R; ++r) at(r, 0) = r;
  for (std::size_t h = 0; h <= H; ++h) at(0, h) = h;
  for (std::size_t r = 1; r <= R; ++r)
    for (std::size_t h = 1; h <= H; ++h)
      at(r, h) = std::min({at(r - 1, h - 1) + (ref[r - 1] == hyp[h - 1] ? 0 : 1),
                           at(r, h - 1) + 1, at(r - 1, h) + 1});
  ErrorRateReport rep;
  rep.reference_length = R;
  std::size_t r = R, h = H;
  while (r > 0 || h > 0) {
    if (r > 0 && h > 0) {
      const bool same = ref[r - 1] == hyp[h - 1];
      if (at(r, h) == at(r - 1, h - 1) + (same ? 0 : 1)) {
        if (!same) ++rep.substitutions;
        --r;
        --h;
        continue;
      }
    }
    if (h > 0 && at(r, h) == at(r, h - 1) + 1) {
      ++rep.insertions;
      --h;
    } else {
      ++rep.deletions;
      --r;
    }
  }
  return rep;
}

/// Word tokens: whitespace-separated.
inline std::vector<std::string> WordTokens(const std::string &text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

/// Character tokens: every non-whitespace byte.
inline std::vector<char> CharTokens(const std::string &text) {
  std::vector<char> out;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) out.push_back(ch);
  return out;
}

inline ErrorRateReport WordErrors(const std::string &hyp, const std::string &ref) {
  return EditDistance(WordTokens(hyp), WordTokens(ref));
}

inline ErrorRateReport CharErrors(const std::string &hyp, const std::string &ref) {
  return EditDistance(CharTokens(hyp), CharTokens(ref));
}

}  // namespace mimo

#endif  // MIMO_METRICS_HPP_
