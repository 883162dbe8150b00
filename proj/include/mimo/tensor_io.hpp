// mimo/tensor_io.hpp

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

// Binary tensor files used to dump masks, PSD matrices and beamformer filters.
//
// Layout (all integers little-endian):
//   bytes  0..7   magic "MIMOTNSR"
//   u32           format version (1)
//   u32           dtype: 0 = float32, 1 = complex64 (interleaved re, im float32)
//   u32           ndim
//   u32           reserved, 0
//   u64 x ndim    dimensions, outermost first
//   payload       row-major elements

#ifndef MIMO_TENSOR_IO_HPP_
#define MIMO_TENSOR_IO_HPP_

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mimo/common.hpp"

namespace mimo {

enum class TensorDtype : std::uint32_t { kFloat32 = 0, kComplex64 = 1 };

struct TensorFile {
  TensorDtype dtype = TensorDtype::kFloat32;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;  // complex entries occupy two consecutive floats

  std::size_t num_elements() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

inline constexpr char kTensorMagic[8] = {'M', 'I', 'M', 'O', 'T', 'N', 'S', 'R'};

inline void WriteTensorFile(const std::string &path, const TensorFile &t) {
  const std::size_t per = t.dtype == TensorDtype::kComplex64 ? 2 : 1;
  if (t.values.size() != t.num_elements() * per)
    throw UsageError("tensor payload does not match its dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kTensorMagic, 8);
  const std::uint32_t head[4] = {1u, static_cast<std::uint32_t>(t.dtype),
                                 static_cast<std::uint32_t>(t.dims.size()), 0u};
  os.write(reinterpret_cast<const char *>(head), sizeof(head));
  os.write(reinterpret_cast<const char *>(t.dims.data()),
           static_cast<std::streamsize>(t.dims.size() * sizeof(std::uint64_t)));
  os.write(reinterpret_cast<const char *>(t.values.data()),
           static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!os) throw DataError("write failed: " + path);
}

inline TensorFile ReadTensorFile(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[8];
  std::uint32_t head[4];
  if (!is.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw DataError(path + ": not a tensor file");
  if (!is.read(reinterpret_cast<char *>(head), sizeof(head)) || head[0] != 1u)
    throw DataError(path + ": unsupported tensor file version");
  if (head[1] > 1u) throw DataError(path + ": unknown dtype");
  TensorFile t;
  t.dtype = static_cast<TensorDtype>(head[1]);
  t.dims.resize(head[2]);
  if (!is.read(reinterpret_cast<char *>(t.dims.data()),
               static_cast<std::streamsize>(t.dims.size() * sizeof(std::uint64_t))))
    throw DataError(path + ": truncated header");
  t.values.resize(t.num_elements() * (t.dtype == TensorDtype::kComplex64 ? 2 : 1));
  if (!is.read(reinterpret_cast<char *>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(float))))
    throw DataError(path + ": truncated payload");
  return t;
}

template <std::size_t Rank>
TensorFile ToTensorFile(const Tensor<double, Rank> &x) {
  TensorFile t;
  t.dtype = TensorDtype::kFloat32;
  t.dims.assign(x.dims().begin(), x.dims().end());
  t.values.reserve(x.size());
  for (double v : x.flat()) t.values.push_back(static_cast<float>(v));
  return t;
}

template <std::size_t Rank>
TensorFile ToTensorFile(const Tensor<Complex, Rank> &x) {
  TensorFile t;
  t.dtype = TensorDtype::kComplex64;
  t.dims.assign(x.dims().begin(), x.dims().end());
  t.values.reserve(2 * x.size());
  for (const Complex &v : x.flat()) {
    t.values.push_back(static_cast<float>(v.real()));
    t.values.push_back(static_cast<float>(v.imag()));
  }
  return t;
}

}  // namespace mimo

#endif  // MIMO_TENSOR_IO_HPP_
