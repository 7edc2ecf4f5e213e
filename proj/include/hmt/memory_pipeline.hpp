#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hmt/coarse_matching.hpp"
#include "hmt/fine_matching.hpp"
#include "hmt/kernel_guidance.hpp"
#include "hmt/tensor.hpp"

// Orchestrates the full per-query hierarchical read: kernel-guided dense read
// at the coarsest scale, then top-k guided sparse reads at the fine scales,
// over a memory bank managed under the frame retention policy.

namespace hmt {

struct FrameFeatures {
  NDTensor key;    // [H, W, c_k]
  NDTensor value;  // [H, W, c_v]
};

/// One frame's features at all three scales. Fine grids are 2x (res3) and
/// 4x (res2) the coarse grid per axis.
struct MultiScaleFrame {
  std::int64_t time = 0;
  FrameFeatures res4;
  FrameFeatures res3;
  FrameFeatures res2;
};

struct RetentionPolicy {
  std::size_t every_n = 5;    // coarse grid period
  bool fine_every_n = false;  // fine frames: first+previous, optionally also the grid
};

/// Time-indexed store of per-scale features. The first frame is always
/// retained at every scale; the latest frame is retained until the next
/// insertion; coarse frames on the every-N grid are retained permanently,
/// and fine frames only when the policy says so.
struct MemoryBank {
  RetentionPolicy policy;

  std::vector<std::int64_t> coarse_times;
  std::vector<FrameFeatures> coarse;  // res4, parallel to coarse_times
  std::vector<std::int64_t> fine_times;
  std::vector<FrameFeatures> fine3;  // res3, parallel to fine_times
  std::vector<FrameFeatures> fine2;  // res2, parallel to fine_times

  bool empty() const { return coarse_times.empty(); }
  std::int64_t first_time() const { return coarse_times.front(); }
  std::int64_t latest_time() const { return coarse_times.back(); }

  /// 1-based position of a frame counted from the first memory frame lands
  /// on the every-N grid.
  bool on_grid(std::int64_t time) const {
    if (policy.every_n == 0) return false;
    return (time - first_time() + 1) % static_cast<std::int64_t>(policy.every_n) == 0;
  }
};

/// Stores a frame and applies retention: the frame that was previously the
/// latest is evicted unless it is the first frame or (coarse only, unless
/// fine_every_n) lands on the every-N grid.
inline void bank_insert(MemoryBank& bank, const MultiScaleFrame& frame) {
  if (!bank.empty() && frame.time <= bank.latest_time()) {
    throw std::invalid_argument("bank_insert: frame time " + std::to_string(frame.time) +
                                " is not after the latest stored time " + std::to_string(bank.latest_time()));
  }
  if (!bank.empty()) {
    const std::int64_t prev = bank.latest_time();
    const bool keep_coarse = prev == bank.first_time() || bank.on_grid(prev);
    if (!keep_coarse) {
      bank.coarse_times.pop_back();
      bank.coarse.pop_back();
    }
    const bool keep_fine = prev == bank.first_time() || (bank.policy.fine_every_n && bank.on_grid(prev));
    if (!keep_fine) {
      bank.fine_times.pop_back();
      bank.fine3.pop_back();
      bank.fine2.pop_back();
    }
  }
  bank.coarse_times.push_back(frame.time);
  bank.coarse.push_back(frame.res4);
  bank.fine_times.push_back(frame.time);
  bank.fine3.push_back(frame.res3);
  bank.fine2.push_back(frame.res2);
}

struct ReadOptions {
  KernelParams kernel;
  std::size_t k = 32;        // top-k budget at res3; res2 uses k/4
  bool kernel_ones = false;  // force the coarse kernel to all-ones (vanilla read)
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  // Fusion projections for the retrieved fine values; identity when unset.
  std::optional<std::pair<NDTensor, NDTensor>> fusion3;
  std::optional<std::pair<NDTensor, NDTensor>> fusion2;
  // Externally maintained track chain (e.g. chained over every video frame
  // instead of only retained frames); when set it replaces the internal
  // build and the cache argument is ignored.
  const TrackTable* external_track = nullptr;
};

struct HierarchicalReadOutput {
  NDTensor z4;          // [H4, W4, 2*c_v4]
  NDTensor z3;          // [H3, W3, c_v3]
  NDTensor z2;          // [H2, W2, c_v2]
  AffinityMatrix g4;    // coarse guidance, (T*H4*W4) x (H4*W4)
  TrackTable track;     // reusable for the next query (retained-frame mode)
  IndexTensor candidates3;  // fine candidate lists per query pixel, res3
  IndexTensor candidates2;  // fine candidate lists per query pixel, res2
};

namespace detail {

inline NDTensor stack_frames(const std::vector<FrameFeatures>& frames, bool keys) {
  const NDTensor& first = keys ? frames.front().key : frames.front().value;
  Shape shape = first.shape();
  shape.insert(shape.begin(), frames.size());
  NDTensor out(shape);
  std::size_t offset = 0;
  for (const FrameFeatures& f : frames) {
    const NDTensor& t = keys ? f.key : f.value;
    if (t.shape() != first.shape()) {
      throw std::invalid_argument("memory frames have inconsistent shapes: " + shape_string(t.shape()) + " vs " +
                                  shape_string(first.shape()));
    }
    std::copy(t.data(), t.data() + t.size(), out.data() + offset);
    offset += t.size();
  }
  return out;
}

/// Rows of g4 for the coarse frames whose timestamps are in fine_times,
/// stacked in fine-frame order.
inline AffinityMatrix restrict_guidance(const AffinityMatrix& g4, const std::vector<std::int64_t>& coarse_times,
                                        const std::vector<std::int64_t>& fine_times) {
  const std::size_t hw = g4.memory_size() / coarse_times.size();
  AffinityMatrix out(fine_times.size() * hw, g4.query_size());
  for (std::size_t j = 0; j < fine_times.size(); ++j) {
    const auto it = std::find(coarse_times.begin(), coarse_times.end(), fine_times[j]);
    if (it == coarse_times.end()) {
      throw std::logic_error("fine memory frame " + std::to_string(fine_times[j]) + " missing from the coarse bank");
    }
    const std::size_t i = static_cast<std::size_t>(it - coarse_times.begin());
    std::copy(g4.scores.data() + i * hw * g4.query_size(), g4.scores.data() + (i + 1) * hw * g4.query_size(),
              out.scores.data() + j * hw * g4.query_size());
  }
  return out;
}

inline AffinityMatrix ones_kernel(std::size_t memory_pixels, std::size_t query_pixels) {
  AffinityMatrix k(memory_pixels, query_pixels);
  std::fill(k.scores.data(), k.scores.data() + k.scores.size(), 1.0);
  return k;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline NDTensor run_fine_stage(const MemoryBank& bank, const MultiScaleFrame& query, const AffinityMatrix& g_fine,
                               FineScale scale, std::size_t k_scale, const ReadOptions& opts, std::size_t coarse_h,
                               std::size_t coarse_w, IndexTensor& candidates_out) {
  const std::vector<FrameFeatures>& frames = scale == FineScale::res3 ? bank.fine3 : bank.fine2;
  const FrameFeatures& qf = scale == FineScale::res3 ? query.res3 : query.res2;

  TopKIndexSet selected = select_topk_candidates(g_fine, k_scale, scale, coarse_h, coarse_w);
  const std::size_t fine_h = qf.key.dim(0), fine_w = qf.key.dim(1);
  IndexTensor candidates = expand_to_fine(selected, frames.size(), fine_h, fine_w);

  FineReadInput in;
  in.memory_keys = stack_frames(frames, true);
  in.memory_values = stack_frames(frames, false);
  in.query_key = qf.key;
  in.query_value = qf.value;
  const std::size_t c_v = qf.value.dim(2);
  const auto& fusion = scale == FineScale::res3 ? opts.fusion3 : opts.fusion2;
  if (fusion) {
    in.fusion_weight = fusion->first;
    in.fusion_bias = fusion->second;
  } else {
    auto [w, b] = identity_fusion(c_v);
    in.fusion_weight = std::move(w);
    in.fusion_bias = std::move(b);
  }
  in.dropout_rate = opts.dropout_rate;
  in.rng_seed = mix_seed(opts.seed, (scale == FineScale::res3 ? 3u : 2u) * 0x10001ULL +
                                        static_cast<std::uint64_t>(query.time));

  NDTensor retrieved = sparse_read(in, candidates);
  NDTensor fused =
      residual_fuse(in.query_value, retrieved, in.fusion_weight, in.fusion_bias, in.dropout_rate, in.rng_seed);
  candidates_out = std::move(candidates);
  return fused;
}

}  // namespace detail

/// Runs the full coarse-to-fine read for one query frame. Returns the fused
/// outputs at all three scales plus the track table for reuse on the next
/// query. With kernel_ones set, the coarse stage is the plain dense read and
/// no tracking is performed.
inline HierarchicalReadOutput hierarchical_read(const MemoryBank& bank, const MultiScaleFrame& query,
                                                const ReadOptions& opts, const TrackTable* cache = nullptr) {
  if (bank.empty()) throw std::invalid_argument("hierarchical_read: memory bank is empty");
  if (opts.k == 0 || opts.k % 4 != 0) {
    throw std::invalid_argument("hierarchical_read: k must be a positive multiple of 4, got " + std::to_string(opts.k));
  }
  const std::size_t coarse_h = query.res4.key.dim(0);
  const std::size_t coarse_w = query.res4.key.dim(1);

  CoarseReadInput coarse_in;
  coarse_in.memory_keys = detail::stack_frames(bank.coarse, true);
  coarse_in.memory_values = detail::stack_frames(bank.coarse, false);
  coarse_in.query_key = query.res4.key;
  coarse_in.query_value = query.res4.value;

  HierarchicalReadOutput out;
  CoarseReadOutput coarse;
  if (opts.kernel_ones) {
    coarse = vanilla_read(coarse_in);
    if (cache) out.track = *cache;
  } else if (opts.external_track) {
    const TrackTable& table = *opts.external_track;
    std::vector<std::size_t> nodes;
    nodes.reserve(bank.coarse_times.size());
    for (std::int64_t t : bank.coarse_times) {
      const auto it = std::find(table.times.begin(), table.times.end(), t);
      if (it == table.times.end()) {
        throw std::invalid_argument("hierarchical_read: external track table has no node for frame " +
                                    std::to_string(t));
      }
      nodes.push_back(static_cast<std::size_t>(it - table.times.begin()));
    }
    AffinityMatrix kernel = gaussian_kernel_map(table, opts.kernel, coarse_h, coarse_w, nodes);
    coarse = kernel_guided_read(coarse_in, kernel);
    out.track = table;
  } else {
    std::vector<const NDTensor*> keys;
    keys.reserve(bank.coarse.size());
    for (const FrameFeatures& f : bank.coarse) keys.push_back(&f.key);
    auto [kernel, table] =
        build_kernel_guidance(std::span<const NDTensor* const>(keys.data(), keys.size()),
                              std::span<const std::int64_t>(bank.coarse_times.data(), bank.coarse_times.size()),
                              query.res4.key, query.time, opts.kernel, cache);
    coarse = kernel_guided_read(coarse_in, kernel);
    out.track = std::move(table);
  }

  // Fine scales share the restricted guidance; res3 takes k, res2 takes k/4.
  AffinityMatrix g_fine = detail::restrict_guidance(coarse.guidance, bank.coarse_times, bank.fine_times);
  out.z3 = detail::run_fine_stage(bank, query, g_fine, FineScale::res3, opts.k, opts, coarse_h, coarse_w,
                                  out.candidates3);
  out.z2 = detail::run_fine_stage(bank, query, g_fine, FineScale::res2, opts.k / 4, opts, coarse_h, coarse_w,
                                  out.candidates2);
  out.z4 = std::move(coarse.fused);
  out.g4 = std::move(coarse.guidance);
  return out;
}

/// Per-pixel distribution over {background, object 1..M} from per-object
/// foreground probabilities, merged by odds after clamping to [eps, 1-eps].
/// The background probability is the product of the per-object complements.
inline NDTensor soft_aggregate(const std::vector<NDTensor>& object_probs, double eps = 1e-5) {
  if (object_probs.empty()) throw std::invalid_argument("soft_aggregate: no object maps");
  const Shape& shape = object_probs.front().shape();
  if (shape.size() != 2) throw std::invalid_argument("soft_aggregate: maps must be [H,W]");
  for (const NDTensor& m : object_probs) {
    if (m.shape() != shape) throw std::invalid_argument("soft_aggregate: object maps must share one shape");
  }
  const std::size_t M = object_probs.size();
  const std::size_t hw = shape[0] * shape[1];
  NDTensor out({M + 1, shape[0], shape[1]});
  std::vector<double> odds(M + 1);
  for (std::size_t p = 0; p < hw; ++p) {
    double bg = 1.0;
    for (std::size_t m = 0; m < M; ++m) {
      const double pm = std::clamp(object_probs[m][p], eps, 1.0 - eps);
      odds[m + 1] = pm / (1.0 - pm);
      bg *= 1.0 - pm;
    }
    bg = std::clamp(bg, eps, 1.0 - eps);
    odds[0] = bg / (1.0 - bg);
    double sum = 0.0;
    for (double o : odds) sum += o;
    for (std::size_t m = 0; m <= M; ++m) out[m * hw + p] = odds[m] / sum;
  }
  return out;
}

}  // namespace hmt
