#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hmt/affinity.hpp"
#include "hmt/counters.hpp"
#include "hmt/tensor.hpp"

// Top-k guided sparse memory read at the fine scales. Candidates come from
// the coarse guidance: the k best-matching coarse memory pixels per coarse
// query pixel expand to their fine-scale blocks, and only those candidates
// are matched. Per fine query pixel the work is proportional to the
// candidate count, independent of the total memory size.

namespace hmt {

enum class FineScale { res3, res2 };

/// Fine pixels per coarse pixel along one axis: 2 at res3, 4 at res2.
inline std::size_t expansion_factor(FineScale scale) { return scale == FineScale::res3 ? 2 : 4; }

inline const char* scale_name(FineScale scale) { return scale == FineScale::res3 ? "res3" : "res2"; }

struct CoarseCoord {
  std::size_t t = 0;
  std::size_t y = 0;
  std::size_t x = 0;
  bool operator==(const CoarseCoord&) const = default;
};

/// Per coarse query pixel, the ordered best-matching coarse memory
/// coordinates. Lists are duplicate-free by construction.
struct TopKIndexSet {
  FineScale scale = FineScale::res3;
  std::size_t memory_frames = 0;  // frames in the fine-scale memory
  std::size_t coarse_h = 0;
  std::size_t coarse_w = 0;
  std::size_t k = 0;                // selections per coarse query pixel
  std::vector<CoarseCoord> coords;  // (coarse_h*coarse_w) x k, row-major by query pixel

  const CoarseCoord& at(std::size_t query_pixel, std::size_t rank) const { return coords[query_pixel * k + rank]; }
};

/// Selects the k_scale memory coordinates with the largest guidance entries
/// per coarse query pixel (descending, ties to the smaller flat index). The
/// guidance must already be restricted to the frames present in the
/// fine-scale memory.
inline TopKIndexSet select_topk_candidates(const AffinityMatrix& guidance_restricted, std::size_t k_scale,
                                           FineScale scale, std::size_t coarse_h, std::size_t coarse_w) {
  const std::size_t hw = coarse_h * coarse_w;
  if (guidance_restricted.query_size() != hw) {
    throw std::invalid_argument("select_topk_candidates: guidance has " +
                                std::to_string(guidance_restricted.query_size()) + " query pixels, expected " +
                                std::to_string(hw));
  }
  if (guidance_restricted.memory_size() % hw != 0) {
    throw std::invalid_argument("select_topk_candidates: memory size " +
                                std::to_string(guidance_restricted.memory_size()) +
                                " is not a whole number of " + std::to_string(hw) + "-pixel frames");
  }
  if (k_scale < 1 || k_scale > guidance_restricted.memory_size()) {
    throw std::invalid_argument("select_topk_candidates: k=" + std::to_string(k_scale) +
                                " exceeds available memory pixels (" +
                                std::to_string(guidance_restricted.memory_size()) + ")");
  }

  auto [values, indices] = topk_axis(guidance_restricted.scores, 0, k_scale);
  (void)values;

  TopKIndexSet out;
  out.scale = scale;
  out.memory_frames = guidance_restricted.memory_size() / hw;
  out.coarse_h = coarse_h;
  out.coarse_w = coarse_w;
  out.k = k_scale;
  out.coords.resize(hw * k_scale);
  for (std::size_t q = 0; q < hw; ++q) {
    for (std::size_t j = 0; j < k_scale; ++j) {
      const auto flat = static_cast<std::size_t>(indices[j * hw + q]);
      out.coords[q * k_scale + j] = {flat / hw, (flat % hw) / coarse_w, flat % coarse_w};
    }
  }
  return out;
}

/// Expands each selected coarse coordinate to its fine-scale block (2x2 at
/// res3, 4x4 at res2). Every fine query pixel inherits the expanded set of
/// its parent coarse pixel, so the result is one flat fine-memory index list
/// of length k*e^2 per fine query pixel.
inline IndexTensor expand_to_fine(const TopKIndexSet& idx, std::size_t fine_frames, std::size_t fine_h,
                                  std::size_t fine_w) {
  const std::size_t e = expansion_factor(idx.scale);
  if (fine_h != idx.coarse_h * e || fine_w != idx.coarse_w * e) {
    throw std::invalid_argument("expand_to_fine: fine grid " + std::to_string(fine_h) + "x" + std::to_string(fine_w) +
                                " is not " + std::to_string(e) + "x the coarse grid " + std::to_string(idx.coarse_h) +
                                "x" + std::to_string(idx.coarse_w));
  }
  if (fine_frames != idx.memory_frames) {
    throw std::invalid_argument("expand_to_fine: candidate set references " + std::to_string(idx.memory_frames) +
                                " memory frames but the fine memory has " + std::to_string(fine_frames));
  }
  const std::size_t per_pixel = idx.k * e * e;
  IndexTensor out({fine_h * fine_w, per_pixel});
  std::int64_t* o = out.data();
  for (std::size_t fy = 0; fy < fine_h; ++fy) {
    for (std::size_t fx = 0; fx < fine_w; ++fx) {
      const std::size_t parent = (fy / e) * idx.coarse_w + (fx / e);
      std::int64_t* row = o + (fy * fine_w + fx) * per_pixel;
      std::size_t n = 0;
      for (std::size_t j = 0; j < idx.k; ++j) {
        const CoarseCoord& c = idx.coords[parent * idx.k + j];
        for (std::size_t dy = 0; dy < e; ++dy) {
          for (std::size_t dx = 0; dx < e; ++dx) {
            const std::size_t yy = c.y * e + dy;
            const std::size_t xx = c.x * e + dx;
            row[n++] = static_cast<std::int64_t>((c.t * fine_h + yy) * fine_w + xx);
          }
        }
      }
    }
  }
  return out;
}

struct FineReadInput {
  NDTensor memory_keys;    // [T_f, H_f, W_f, c_k]
  NDTensor memory_values;  // [T_f, H_f, W_f, c_v]
  NDTensor query_key;      // [H_f, W_f, c_k]
  NDTensor query_value;    // [H_f, W_f, c_v]
  NDTensor fusion_weight;  // [c_v, c_v] projection applied to the retrieved value
  NDTensor fusion_bias;    // [c_v]
  double dropout_rate = 0.0;
  std::uint64_t rng_seed = 0;
};

/// Identity projection weights for a channel count.
inline std::pair<NDTensor, NDTensor> identity_fusion(std::size_t channels) {
  NDTensor w({channels, channels});
  for (std::size_t i = 0; i < channels; ++i) w[i * channels + i] = 1.0;
  return {std::move(w), NDTensor({channels})};
}

/// Per fine query pixel: gather the candidate memory keys, softmax the dot
/// products with the query key over the candidate set, and weighted-sum the
/// gathered memory values. Duplicate candidates contribute independent
/// softmax terms.
inline NDTensor sparse_read(const FineReadInput& input, const IndexTensor& candidates) {
  if (input.memory_keys.rank() != 4 || input.query_key.rank() != 3) {
    throw std::invalid_argument("sparse_read: memory maps must be [T,H,W,c], query maps [H,W,c]");
  }
  const std::size_t h = input.query_key.dim(0), w = input.query_key.dim(1);
  const std::size_t c_k = input.query_key.dim(2);
  const std::size_t c_v = input.query_value.dim(2);
  if (input.memory_keys.dim(3) != c_k) {
    throw std::invalid_argument("sparse_read: key channel dims disagree: memory " +
                                shape_string(input.memory_keys.shape()) + " vs query " +
                                shape_string(input.query_key.shape()));
  }
  if (input.memory_keys.dim(1) != h || input.memory_keys.dim(2) != w || input.memory_values.dim(1) != h ||
      input.memory_values.dim(2) != w) {
    throw std::invalid_argument("sparse_read: memory and query spatial dims disagree");
  }
  if (candidates.rank() != 2 || candidates.dim(0) != h * w) {
    throw std::invalid_argument("sparse_read: candidate list must be [" + std::to_string(h * w) +
                                ", C], got " + shape_string(candidates.shape()));
  }
  const std::size_t mem_pixels = input.memory_keys.dim(0) * h * w;
  const std::size_t n_cand = candidates.dim(1);

  const double* mkeys = input.memory_keys.data();
  const double* mvals = input.memory_values.data();
  const double* qkeys = input.query_key.data();
  NDTensor out({h, w, c_v});
  double* o = out.data();

  std::vector<double> scores(n_cand);
  for (std::size_t p = 0; p < h * w; ++p) {
    const double* qk = qkeys + p * c_k;
    const std::int64_t* cand = candidates.data() + p * n_cand;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_cand; ++j) {
      const std::int64_t m = cand[j];
      if (m < 0 || static_cast<std::size_t>(m) >= mem_pixels) {
        throw std::out_of_range("sparse_read: candidate index " + std::to_string(m) + " at query pixel " +
                                std::to_string(p) + " position " + std::to_string(j) +
                                " out of range for memory of " + std::to_string(mem_pixels) + " pixels");
      }
      const double* mk = mkeys + static_cast<std::size_t>(m) * c_k;
      double s = 0.0;
      for (std::size_t i = 0; i < c_k; ++i) s += qk[i] * mk[i];
      scores[j] = s;
      mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n_cand; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      sum += scores[j];
    }
    double* op = o + p * c_v;
    for (std::size_t j = 0; j < n_cand; ++j) {
      const double weight = scores[j] / sum;
      const double* mv = mvals + static_cast<std::size_t>(cand[j]) * c_v;
      for (std::size_t i = 0; i < c_v; ++i) op[i] += weight * mv[i];
    }
  }
  count_mul_adds(static_cast<std::uint64_t>(h * w) * n_cand * (c_k + c_v));
  count_gathers(static_cast<std::uint64_t>(h * w) * n_cand * (c_k + c_v));
  return out;
}

/// Deterministic unit uniform from a 64-bit seed (splitmix64 mix).
inline double unit_uniform(std::uint64_t seed) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z = z ^ (z >> 31);
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

/// out = query_value + drop(project(retrieved)). The drop is all-or-nothing:
/// one Bernoulli draw from rng_seed zeroes the whole projected tensor with
/// probability dropout_rate, otherwise it passes through unscaled.
inline NDTensor residual_fuse(const NDTensor& query_value, const NDTensor& retrieved, const NDTensor& fusion_weight,
                              const NDTensor& fusion_bias, double dropout_rate, std::uint64_t rng_seed) {
  if (dropout_rate < 0.0 || dropout_rate > 1.0) {
    throw std::invalid_argument("residual_fuse: dropout_rate must be in [0,1], got " + std::to_string(dropout_rate));
  }
  bool dropped;
  if (dropout_rate <= 0.0) {
    dropped = false;
  } else if (dropout_rate >= 1.0) {
    dropped = true;
  } else {
    dropped = unit_uniform(rng_seed) < dropout_rate;
  }
  if (dropped) return query_value;

  NDTensor projected = linear_project(retrieved, fusion_weight, fusion_bias);
  if (projected.shape() != query_value.shape()) {
    throw std::invalid_argument("residual_fuse: projected shape " + shape_string(projected.shape()) +
                                " does not match query value " + shape_string(query_value.shape()));
  }
  NDTensor out = query_value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += projected[i];
  return out;
}

}  // namespace hmt
