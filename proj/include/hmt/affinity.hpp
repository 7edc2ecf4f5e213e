#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>

#include "hmt/tensor.hpp"

namespace hmt {

/// (memory pixels x query pixels) score or attention grid. Rows flatten the
/// memory as (t, y, x) row-major, columns flatten the query as (y, x)
/// row-major. The memory dimension is axis 0 throughout.
struct AffinityMatrix {
  NDTensor scores;  // rank 2

  AffinityMatrix() = default;
  explicit AffinityMatrix(NDTensor s) : scores(std::move(s)) {
    if (scores.rank() != 2) {
      throw std::invalid_argument("affinity matrix must be rank 2, got " + shape_string(scores.shape()));
    }
  }
  AffinityMatrix(std::size_t memory_pixels, std::size_t query_pixels) : scores({memory_pixels, query_pixels}) {}

  std::size_t memory_size() const { return scores.dim(0); }
  std::size_t query_size() const { return scores.dim(1); }

  double& at(std::size_t m, std::size_t q) { return scores[m * query_size() + q]; }
  double at(std::size_t m, std::size_t q) const { return scores[m * query_size() + q]; }
};

}  // namespace hmt
