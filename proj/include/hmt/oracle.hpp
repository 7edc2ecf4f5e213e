#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmt/tensor.hpp"

// Brute-force reference read used to verify the fast matching paths.
//
// Independence rule: this file may use NDTensor only for storage and shape
// access. It must not call matmul, softmax_axis, gather_axis, or any other
// tensor_core computation, and nothing under coarse_matching/fine_matching
// may be included here. Every arithmetic step below is an explicit scalar
// loop so that agreement with the fast paths is evidence, not tautology.

namespace hmt {

constexpr std::size_t kOracleSizeGuard = std::size_t{1} << 24;  // memory pixels * query pixels

/// Direct softmax-weighted sum over every memory pixel for every query
/// pixel: the dense read computed the slow, obvious way.
inline NDTensor oracle_dense_read(const NDTensor& memory_keys, const NDTensor& memory_values,
                                  const NDTensor& query_key) {
  if (memory_keys.rank() != 4 || memory_values.rank() != 4 || query_key.rank() != 3) {
    throw std::invalid_argument("oracle_dense_read: memory maps must be [T,H,W,c], query [H,W,c]");
  }
  const std::size_t t = memory_keys.dim(0);
  const std::size_t h = memory_keys.dim(1);
  const std::size_t w = memory_keys.dim(2);
  const std::size_t c_k = memory_keys.dim(3);
  const std::size_t c_v = memory_values.dim(3);
  if (query_key.dim(0) != h || query_key.dim(1) != w || query_key.dim(2) != c_k) {
    throw std::invalid_argument("oracle_dense_read: query shape " + shape_string(query_key.shape()) +
                                " does not match memory " + shape_string(memory_keys.shape()));
  }
  const std::size_t mem = t * h * w;
  const std::size_t q = h * w;
  if (mem * q > kOracleSizeGuard) {
    throw std::invalid_argument("oracle_dense_read: " + std::to_string(mem) + " x " + std::to_string(q) +
                                " exceeds the size guard");
  }

  NDTensor out({h, w, c_v});
  std::vector<double> scores(mem);
  for (std::size_t qp = 0; qp < q; ++qp) {
    double mx = -1e300;
    for (std::size_t mp = 0; mp < mem; ++mp) {
      double s = 0.0;
      for (std::size_t i = 0; i < c_k; ++i) s += memory_keys[mp * c_k + i] * query_key[qp * c_k + i];
      scores[mp] = s;
      if (s > mx) mx = s;
    }
    double sum = 0.0;
    for (std::size_t mp = 0; mp < mem; ++mp) {
      scores[mp] = std::exp(scores[mp] - mx);
      sum += scores[mp];
    }
    for (std::size_t mp = 0; mp < mem; ++mp) {
      const double weight = scores[mp] / sum;
      for (std::size_t i = 0; i < c_v; ++i) out[qp * c_v + i] += weight * memory_values[mp * c_v + i];
    }
  }
  return out;
}

}  // namespace hmt
