// mimo/common.hpp

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

#ifndef MIMO_COMMON_HPP_
#define MIMO_COMMON_HPP_

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace mimo {

using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

/// Base of all library errors. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed, missing or inconsistent input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown, e.g. a degenerate PSD matrix (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Dense row-major tensor with a fixed rank.
template <typename T, std::size_t Rank>
class Tensor {
 public:
  using value_type = T;
  using Dims = std::array<std::size_t, Rank>;

  Tensor() { dims_.fill(0); }

  explicit Tensor(const Dims &dims, const T &fill = T{}) : dims_(dims) {
    std::size_t n = 1;
    for (std::size_t d : dims_) n *= d;
    data_.assign(n, fill);
  }

  const Dims &dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  template <typename... Idx>
    requires(sizeof...(Idx) == Rank)
  T &operator()(Idx... idx) {
    return data_[Offset({static_cast<std::size_t>(idx)...})];
  }

  template <typename... Idx>
    requires(sizeof...(Idx) == Rank)
  const T &operator()(Idx... idx) const {
    return data_[Offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t Offset(const Dims &idx) const {
    std::size_t off = 0;
    for (std::size_t a = 0; a < Rank; ++a) off = off * dims_[a] + idx[a];
    return off;
  }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  bool operator==(const Tensor &other) const = default;

 private:
  Dims dims_;
  std::vector<T> data_;
};

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine draw.
/// Used instead of std::uniform_real_distribution so output does not depend
/// on the standard library implementation.
inline double Uniform01(std::mt19937_64 &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double UniformIn(std::mt19937_64 &rng, double lo, double hi) {
  return lo + (hi - lo) * Uniform01(rng);
}

/// Unbiased integer in [0, n) by rejection.
inline std::uint64_t UniformIndex(std::mt19937_64 &rng, std::uint64_t n) {
  if (n == 0) throw UsageError("UniformIndex: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Standard normal via Box-Muller on Uniform01 draws.
inline double Gaussian(std::mt19937_64 &rng) {
  double u1 = Uniform01(rng);
  while (u1 <= 0.0) u1 = Uniform01(rng);
  const double u2 = Uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

/// Fisher-Yates shuffle driven by UniformIndex.
template <typename T>
void Shuffle(std::vector<T> &v, std::mt19937_64 &rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = UniformIndex(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Engine seeded from (seed, stream) so that per-item streams are independent
/// of processing order.
inline std::mt19937_64 DerivedRng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream & 0xffffffffu),
                    static_cast<std::uint32_t>(stream >> 32), 0x6d696d6fu};
  return std::mt19937_64(seq);
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Indices are handed
/// out dynamically; the first exception is rethrown after all threads join.
template <typename Fn>
void ParallelFor(std::size_t n, std::size_t workers, Fn &&fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n && !failed.load();) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto &t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mimo

#endif  // MIMO_COMMON_HPP_
