#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>

#include "hmt/affinity.hpp"
#include "hmt/tensor.hpp"

// Dense memory read at the coarsest scale. A query pixel scores against
// every memory pixel of every retained frame (non-local matching); the
// attention over the memory dimension retrieves a value map that is fused
// with the query value by channel concatenation.

namespace hmt {

struct CoarseReadInput {
  NDTensor memory_keys;    // [T, H, W, c_k]
  NDTensor memory_values;  // [T, H, W, c_v]
  NDTensor query_key;      // [H, W, c_k]
  NDTensor query_value;    // [H, W, c_v]
};

struct CoarseReadOutput {
  NDTensor fused;           // [H, W, 2*c_v]: query value ++ retrieved value
  AffinityMatrix guidance;  // column-stochastic over the memory dimension
};

namespace detail {

inline void check_coarse_input(const CoarseReadInput& in) {
  if (in.memory_keys.rank() != 4 || in.memory_values.rank() != 4 || in.query_key.rank() != 3 ||
      in.query_value.rank() != 3) {
    throw std::invalid_argument("coarse read: memory maps must be [T,H,W,c], query maps [H,W,c]");
  }
  if (in.memory_keys.dim(1) != in.query_key.dim(0) || in.memory_keys.dim(2) != in.query_key.dim(1)) {
    throw std::invalid_argument("coarse read: spatial dims disagree between memory " +
                                shape_string(in.memory_keys.shape()) + " and query " +
                                shape_string(in.query_key.shape()));
  }
  if (in.memory_values.dim(0) != in.memory_keys.dim(0) || in.memory_values.dim(1) != in.memory_keys.dim(1) ||
      in.memory_values.dim(2) != in.memory_keys.dim(2)) {
    throw std::invalid_argument("coarse read: memory key/value grids disagree");
  }
  if (in.query_value.dim(0) != in.query_key.dim(0) || in.query_value.dim(1) != in.query_key.dim(1)) {
    throw std::invalid_argument("coarse read: query key/value grids disagree");
  }
}

/// Retrieval v' = v_M^T g, reshaped back to a [H, W, c_v] value map.
inline NDTensor retrieve_values(const NDTensor& memory_values, const AffinityMatrix& guidance, std::size_t h,
                                std::size_t w) {
  const std::size_t c_v = memory_values.shape().back();
  NDTensor values_flat = reshape(memory_values, {guidance.memory_size(), c_v});
  NDTensor retrieved = matmul(transpose2d(values_flat), guidance.scores);  // [c_v, H*W]
  return reshape(transpose2d(retrieved), {h, w, c_v});
}

}  // namespace detail

/// Raw bilinear key similarity: entry [(t,y,x),(y',x')] is the dot product of
/// the memory key at (t,y,x) with the query key at (y',x'). No scaling.
inline AffinityMatrix dense_affinity(const NDTensor& memory_keys, const NDTensor& query_key) {
  if (memory_keys.rank() != 4 || query_key.rank() != 3) {
    throw std::invalid_argument("dense_affinity: expected memory [T,H,W,c] and query [H,W,c]");
  }
  const std::size_t c = memory_keys.shape().back();
  if (query_key.shape().back() != c) {
    throw std::invalid_argument("dense_affinity: channel dims disagree: memory " +
                                shape_string(memory_keys.shape()) + " vs query " + shape_string(query_key.shape()));
  }
  const std::size_t mem = memory_keys.size() / c;
  const std::size_t q = query_key.size() / c;
  NDTensor mem_flat = reshape(memory_keys, {mem, c});
  NDTensor query_flat = reshape(query_key, {q, c});
  return AffinityMatrix(matmul(mem_flat, transpose2d(query_flat)));
}

/// Plain dense read: softmax over the memory dimension, then value
/// retrieval. Equivalent to the kernel-guided read with an all-ones kernel.
inline CoarseReadOutput vanilla_read(const CoarseReadInput& input) {
  detail::check_coarse_input(input);
  const std::size_t h = input.query_key.dim(0), w = input.query_key.dim(1);
  AffinityMatrix affinity = dense_affinity(input.memory_keys, input.query_key);
  AffinityMatrix guidance(softmax_axis(affinity.scores, 0));
  NDTensor retrieved = detail::retrieve_values(input.memory_values, guidance, h, w);
  CoarseReadOutput out;
  out.fused = concat_channels(input.query_value, retrieved);
  out.guidance = std::move(guidance);
  return out;
}

/// Kernel-guided dense read: the attention is the L1-normalized (over the
/// memory dimension) elementwise product of the kernel map with the softmax
/// of the affinity, so spatially inconsistent matches are suppressed before
/// retrieval.
inline CoarseReadOutput kernel_guided_read(const CoarseReadInput& input, const AffinityMatrix& kernel_map) {
  detail::check_coarse_input(input);
  const std::size_t h = input.query_key.dim(0), w = input.query_key.dim(1);
  AffinityMatrix affinity = dense_affinity(input.memory_keys, input.query_key);
  if (kernel_map.scores.shape() != affinity.scores.shape()) {
    throw std::invalid_argument("kernel_guided_read: kernel map shape " + shape_string(kernel_map.scores.shape()) +
                                " does not match affinity shape " + shape_string(affinity.scores.shape()));
  }
  NDTensor weighted = elementwise_mul(kernel_map.scores, softmax_axis(affinity.scores, 0));
  AffinityMatrix guidance(l1_normalize_axis(weighted, 0));
  NDTensor retrieved = detail::retrieve_values(input.memory_values, guidance, h, w);
  CoarseReadOutput out;
  out.fused = concat_channels(input.query_value, retrieved);
  out.guidance = std::move(guidance);
  return out;
}

}  // namespace hmt
