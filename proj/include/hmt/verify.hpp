#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hmt/bench.hpp"
#include "hmt/coarse_matching.hpp"
#include "hmt/fine_matching.hpp"
#include "hmt/kernel_guidance.hpp"
#include "hmt/memory_pipeline.hpp"
#include "hmt/oracle.hpp"
#include "hmt/synthetic.hpp"
#include "hmt/tensor.hpp"

// Self-check suites behind `hmt verify`: every module invariant, exercised
// on randomized instances against brute-force recomputation. Reference
// results here are computed with plain loops, never by calling the code
// path under test.

namespace hmt {

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace verify_detail {

inline double max_abs_diff(const NDTensor& a, const NDTensor& b) {
  if (a.shape() != b.shape()) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline VerifyResult make(const std::string& name, bool pass, const std::string& detail = "") {
  return VerifyResult{name, pass, detail};
}

inline CoordGrid random_hop(std::size_t h, std::size_t w, std::uint64_t seed) {
  CoordGrid g(h, w);
  for (std::size_t i = 0; i < g.pts.size(); ++i) {
    g.pts[i].y = static_cast<int>(detail::mix3(seed, i, 1) % h);
    g.pts[i].x = static_cast<int>(detail::mix3(seed, i, 2) % w);
  }
  return g;
}

inline CoarseReadInput random_coarse_input(std::size_t t, std::size_t h, std::size_t w, std::size_t c_k,
                                           std::size_t c_v, std::uint64_t seed) {
  CoarseReadInput in;
  in.memory_keys = random_tensor({t, h, w, c_k}, seed + 1);
  in.memory_values = random_tensor({t, h, w, c_v}, seed + 2);
  in.query_key = random_tensor({h, w, c_k}, seed + 3);
  in.query_value = random_tensor({h, w, c_v}, seed + 4);
  return in;
}

}  // namespace verify_detail

inline VerifyResult verify_softmax_stochastic() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    NDTensor t = random_tensor({4, 7, 5}, s, -1e4, 1e4);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      NDTensor sm = softmax_axis(t, axis);
      const auto split = detail::split_axis(t.shape(), axis);
      for (std::size_t a = 0; a < split.outer; ++a) {
        for (std::size_t b = 0; b < split.inner; ++b) {
          double sum = 0.0;
          for (std::size_t j = 0; j < split.n; ++j) sum += sm[a * split.n * split.inner + j * split.inner + b];
          worst = std::max(worst, std::abs(sum - 1.0));
        }
      }
    }
  }
  return make("softmax slices sum to 1 (inputs up to +/-1e4)", worst <= 1e-9,
              "max |sum-1| = " + std::to_string(worst));
}

inline VerifyResult verify_l1_idempotent() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    NDTensor t = random_tensor({6, 8}, s, 0.0, 5.0);
    if (s % 3 == 0) {
      for (std::size_t j = 0; j < 8; ++j) t[2 * 8 + j] = 0.0;  // a degenerate all-zero row slice
    }
    NDTensor once = l1_normalize_axis(t, 1);
    NDTensor twice = l1_normalize_axis(once, 1);
    worst = std::max(worst, max_abs_diff(once, twice));
  }
  return make("l1 normalization idempotent", worst <= 1e-12, "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_topk_full_sort() {
  using namespace verify_detail;
  for (std::uint64_t s = 0; s < 20; ++s) {
    NDTensor t = random_tensor({32}, s, -2.0, 2.0);
    if (s % 2 == 0) {
      t[5] = t[17];  // force a tie
      t[6] = t[17];
    }
    auto [values, indices] = topk_axis(t, 0, 32);
    for (std::size_t j = 0; j + 1 < 32; ++j) {
      const bool descending = values[j] > values[j + 1] ||
                              (values[j] == values[j + 1] && indices[j] < indices[j + 1]);
      if (!descending) return make("topk with k = n is a stable descending sort", false, "order violated");
    }
    std::set<std::int64_t> seen(indices.buffer().begin(), indices.buffer().end());
    if (seen.size() != 32) return make("topk with k = n is a stable descending sort", false, "indices not unique");
  }
  return make("topk with k = n is a stable descending sort", true);
}

inline VerifyResult verify_gather_identity() {
  using namespace verify_detail;
  NDTensor t = random_tensor({5, 9, 3}, 11);
  IndexTensor idx({9});
  for (std::size_t j = 0; j < 9; ++j) idx[j] = static_cast<std::int64_t>(j);
  NDTensor g = gather_axis(t, 1, idx);
  return make("gather with identity indices is the identity", max_abs_diff(t, g) == 0.0);
}

inline VerifyResult verify_matmul_associative() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    NDTensor a = random_tensor({4, 4}, 3 * s), b = random_tensor({4, 4}, 3 * s + 1), c = random_tensor({4, 4}, 3 * s + 2);
    worst = std::max(worst, max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))));
  }
  return make("matmul associativity on random 4x4x4 triples", worst <= 1e-9, "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_guidance_column_stochastic() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    CoarseReadInput in = random_coarse_input(2, 5, 4, 6, 3, 1000 + s);
    AffinityMatrix kernel(2 * 5 * 4, 5 * 4);
    for (std::size_t i = 0; i < kernel.scores.size(); ++i) kernel.scores[i] = detail::unit3(s, i, 7);
    for (std::size_t m = 0; m < kernel.memory_size(); ++m) kernel.at(m, 3) = 0.0;  // degenerate column
    CoarseReadOutput out = kernel_guided_read(in, kernel);
    for (std::size_t q = 0; q < out.guidance.query_size(); ++q) {
      double sum = 0.0;
      for (std::size_t m = 0; m < out.guidance.memory_size(); ++m) {
        const double v = out.guidance.at(m, q);
        if (v < 0.0 || v > 1.0) return make("guidance columns are stochastic", false, "entry outside [0,1]");
        sum += v;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return make("guidance columns are stochastic (incl. zeroed kernel columns)", worst <= 1e-6,
              "max |sum-1| = " + std::to_string(worst));
}

inline VerifyResult verify_ones_kernel_reduction() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    CoarseReadInput in = random_coarse_input(3, 6, 5, 8, 4, 2000 + s);
    AffinityMatrix ones(3 * 6 * 5, 6 * 5);
    for (std::size_t i = 0; i < ones.scores.size(); ++i) ones.scores[i] = 1.0;
    worst = std::max(worst, max_abs_diff(kernel_guided_read(in, ones).fused, vanilla_read(in).fused));
  }
  return make("all-ones kernel reduces to the vanilla read", worst <= 1e-12, "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_vanilla_vs_oracle() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 1 + s % 3, h = 3 + s % 6, w = 3 + (s * 7) % 6;
    CoarseReadInput in = random_coarse_input(t, h, w, 8, 4, 3000 + s);
    NDTensor expect = oracle_dense_read(in.memory_keys, in.memory_values, in.query_key);
    NDTensor got = vanilla_read(in).fused;
    // compare the retrieved half of the fused output
    const std::size_t c_v = 4;
    double diff = 0.0;
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t i = 0; i < c_v; ++i) diff = std::max(diff, std::abs(got[p * 2 * c_v + c_v + i] - expect[p * c_v + i]));
    worst = std::max(worst, diff);
  }
  return make("vanilla read matches the direct-summation reference", worst <= 1e-9,
              "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_frame_permutation_invariance() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 3, h = 4, w = 4, hw = h * w;
    CoarseReadInput in = random_coarse_input(t, h, w, 6, 3, 4000 + s);
    AffinityMatrix kernel(t * hw, hw);
    for (std::size_t i = 0; i < kernel.scores.size(); ++i) kernel.scores[i] = detail::unit3(s, i, 9);
    CoarseReadOutput base = kernel_guided_read(in, kernel);

    const std::size_t perm[3] = {2, 0, 1};
    CoarseReadInput pin = in;
    AffinityMatrix pkernel(t * hw, hw);
    for (std::size_t f = 0; f < t; ++f) {
      const std::size_t src = perm[f];
      std::memcpy(pin.memory_keys.data() + f * hw * 6, in.memory_keys.data() + src * hw * 6,
                  hw * 6 * sizeof(double));
      std::memcpy(pin.memory_values.data() + f * hw * 3, in.memory_values.data() + src * hw * 3,
                  hw * 3 * sizeof(double));
      std::memcpy(pkernel.scores.data() + f * hw * hw, kernel.scores.data() + src * hw * hw,
                  hw * hw * sizeof(double));
    }
    worst = std::max(worst, max_abs_diff(kernel_guided_read(pin, pkernel).fused, base.fused));
  }
  return make("memory frame permutation leaves the fused output unchanged", worst <= 1e-12,
              "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_kernel_map_range() {
  using namespace verify_detail;
  for (std::uint64_t s = 0; s < 10; ++s) {
    TrackTable table = make_track_root(5, 6, 1);
    for (std::int64_t f = 2; f <= 4; ++f) table = chain_tracks(std::move(table), random_hop(5, 6, s * 10 + f), f);
    KernelParams params{5, 2.0, 0.5};
    AffinityMatrix map = gaussian_kernel_map(table, params, 5, 6);
    for (std::size_t node = 0; node + 1 < table.node_count(); ++node) {
      for (std::size_t p = 0; p < 30; ++p) {
        const std::size_t row = node * 30 + p;
        double mx = 0.0;
        std::size_t arg = 0;
        for (std::size_t q = 0; q < 30; ++q) {
          const double v = map.at(row, q);
          if (v <= 0.0 || v > 1.0) return make("kernel map entries lie in (0,1]", false, "entry out of range");
          if (v > mx) {
            mx = v;
            arg = q;
          }
        }
        const Coord e = table.endpoints[node].pts[p];
        if (mx != 1.0 || arg != static_cast<std::size_t>(e.y) * 6 + static_cast<std::size_t>(e.x)) {
          return make("kernel map entries lie in (0,1]", false, "peak not exactly 1 at the tracked endpoint");
        }
      }
    }
  }
  return make("kernel map entries lie in (0,1] with peak 1 at the endpoint", true);
}

inline VerifyResult verify_incremental_chain() {
  using namespace verify_detail;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t h = 4, w = 5;
    const std::size_t hops_n = 1 + s % 10;
    std::vector<CoordGrid> hops;
    for (std::size_t i = 0; i < hops_n; ++i) hops.push_back(random_hop(h, w, s * 100 + i));

    TrackTable inc = make_track_root(h, w, 0);
    for (std::size_t i = 0; i < hops_n; ++i) inc = chain_tracks(std::move(inc), hops[i], static_cast<std::int64_t>(i + 1));

    // from-scratch composition with plain loops
    for (std::size_t start = 0; start <= hops_n; ++start) {
      CoordGrid expect = identity_grid(h, w);
      for (std::size_t i = start; i < hops_n; ++i) {
        CoordGrid next(h, w);
        for (std::size_t p = 0; p < h * w; ++p) {
          const Coord e = expect.pts[p];
          next.pts[p] = hops[i].at(static_cast<std::size_t>(e.y), static_cast<std::size_t>(e.x));
        }
        expect = next;
      }
      if (!(inc.endpoints[start] == expect)) {
        return make("incremental chaining equals from-scratch composition", false,
                    "mismatch at node " + std::to_string(start));
      }
    }
  }
  return make("incremental chaining equals from-scratch composition", true);
}

inline VerifyResult verify_translation_tracking() {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const int dy = static_cast<int>(s % 3) - 1, dx = 1;
    SyntheticScene spec;
    spec.coarse_h = 10;
    spec.coarse_w = 10;
    spec.frame_count = 4;
    spec.seed = 500 + s;
    spec.fine_scales = false;
    spec.objects = {{4, 1, 2, 2, dy, dx, -1}};
    SceneData scene = generate_scene(spec);

    TrackTable table = make_track_root(10, 10, 1);
    for (std::size_t f = 1; f < 4; ++f) {
      CoordGrid hop = local_track_hop(scene.frames[f - 1].res4.key, scene.frames[f].res4.key, 5);
      table = chain_tracks(std::move(table), std::move(hop), static_cast<std::int64_t>(f + 1));
    }
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t p = 0; p < 100; ++p) {
        if (!scene.gt_valid[t][p]) continue;
        if (scene.owner[t][p] < 0) continue;
        if (!(table.endpoints[t].pts[p] == scene.gt_endpoints[t].pts[p])) {
          return verify_detail::make("tracking is translation-consistent", false,
                                     "endpoint mismatch at frame " + std::to_string(t));
        }
      }
    }
  }
  return verify_detail::make("tracking is translation-consistent", true);
}

inline VerifyResult verify_sigma_monotone() {
  TrackTable table = make_track_root(3, 3, 1);
  for (std::int64_t f = 2; f <= 6; ++f) table = chain_tracks(std::move(table), identity_grid(3, 3), f);
  KernelParams params{3, 3.0, 0.5};
  AffinityMatrix map = gaussian_kernel_map(table, params, 3, 3);
  // With identity tracking, the kernel value at a fixed off-center offset
  // grows with temporal distance iff sigma does.
  double prev = 0.0;
  for (std::size_t node = table.node_count() - 1; node-- > 0;) {
    const double v = map.at(node * 9 + 0, 4);  // memory pixel (0,0) scored at query pixel (1,1)
    if (v < prev - 1e-15) return verify_detail::make("sigma grows with temporal distance", false, "not monotone");
    prev = v;
  }
  return verify_detail::make("sigma grows with temporal distance", true);
}

inline VerifyResult verify_sparse_weights_sum() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 2, h = 6, w = 6, c = 5, n_cand = 9;
    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, c}, s + 1, -3.0, 3.0);
    in.memory_values = NDTensor({t, h, w, 1}, std::vector<double>(t * h * w, 1.0));
    in.query_key = random_tensor({h, w, c}, s + 2, -3.0, 3.0);
    in.query_value = NDTensor({h, w, 1});
    IndexTensor candidates({h * w, n_cand});
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      candidates[i] = static_cast<std::int64_t>(detail::mix3(s, i, 3) % (t * h * w));
    }
    // with all-ones values, each output equals the sum of softmax weights
    NDTensor out = sparse_read(in, candidates);
    for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out[i] - 1.0));
  }
  return make("sparse softmax weights sum to 1 per query pixel", worst <= 1e-9,
              "max |sum-1| = " + std::to_string(worst));
}

inline VerifyResult verify_sparse_permutation_invariance() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 2, h = 4, w = 4, c = 5, n_cand = 8;
    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, c}, s + 11);
    in.memory_values = random_tensor({t, h, w, 3}, s + 12);
    in.query_key = random_tensor({h, w, c}, s + 13);
    in.query_value = random_tensor({h, w, 3}, s + 14);
    IndexTensor candidates({h * w, n_cand});
    IndexTensor reversed({h * w, n_cand});
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t j = 0; j < n_cand; ++j) {
        candidates[p * n_cand + j] = static_cast<std::int64_t>(detail::mix3(s, p * n_cand + j, 5) % (t * h * w));
        reversed[p * n_cand + (n_cand - 1 - j)] = candidates[p * n_cand + j];
      }
    }
    worst = std::max(worst, max_abs_diff(sparse_read(in, candidates), sparse_read(in, reversed)));
  }
  return make("candidate permutation leaves the sparse read unchanged", worst <= 1e-12,
              "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_sparse_full_equals_dense() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::size_t t = 1 + s % 2, h = 8 + 8 * (s % 2), w = 16, c = 6;
    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, c}, s + 21);
    in.memory_values = random_tensor({t, h, w, 4}, s + 22);
    in.query_key = random_tensor({h, w, c}, s + 23);
    in.query_value = random_tensor({h, w, 4}, s + 24);
    const std::size_t mem = t * h * w;
    IndexTensor candidates({h * w, mem});
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t m = 0; m < mem; ++m) candidates[p * mem + m] = static_cast<std::int64_t>(m);
    NDTensor got = sparse_read(in, candidates);
    NDTensor expect = oracle_dense_read(in.memory_keys, in.memory_values, in.query_key);
    worst = std::max(worst, max_abs_diff(got, expect));
  }
  return make("full-candidate sparse read equals the dense reference", worst <= 1e-9,
              "max diff = " + std::to_string(worst));
}

inline VerifyResult verify_sparse_superset_support() {
  using namespace verify_detail;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 2, h = 4, w = 4, c = 5;
    const std::size_t mem = t * h * w;
    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, c}, s + 31);
    in.query_key = random_tensor({h, w, c}, s + 33);
    in.query_value = NDTensor({h, w, mem});
    // one-hot values expose the softmax weight of every memory pixel
    NDTensor values({t, h, w, mem});
    for (std::size_t m = 0; m < mem; ++m) values[m * mem + m] = 1.0;
    in.memory_values = values;

    IndexTensor small({h * w, 4}), big({h * w, 10});
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t j = 0; j < 4; ++j) small[p * 4 + j] = static_cast<std::int64_t>(detail::mix3(s, p * 4 + j, 8) % mem);
      for (std::size_t j = 0; j < 4; ++j) big[p * 10 + j] = small[p * 4 + j];
      for (std::size_t j = 4; j < 10; ++j) big[p * 10 + j] = static_cast<std::int64_t>(detail::mix3(s, p * 10 + j, 9) % mem);
    }
    NDTensor ws = sparse_read(in, small);
    NDTensor wb = sparse_read(in, big);
    for (std::size_t p = 0; p < h * w; ++p) {
      std::size_t arg = 0;
      double mx = -1.0;
      for (std::size_t m = 0; m < mem; ++m) {
        if (ws[p * mem + m] > mx) {
          mx = ws[p * mem + m];
          arg = m;
        }
      }
      if (!(wb[p * mem + arg] > 0.0)) {
        return make("supersets keep the argmax candidate in the softmax support", false,
                    "weight vanished at pixel " + std::to_string(p));
      }
    }
  }
  return make("supersets keep the argmax candidate in the softmax support", true);
}

inline VerifyResult verify_sparse_work_scaling() {
  using namespace verify_detail;
  // per-pixel mul-adds must not depend on the grid size
  std::uint64_t per_pixel[2] = {0, 0};
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t h = 8 << i, w = 8 << i, t = 2, c = 6, n_cand = 16;
    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, c}, 41 + i);
    in.memory_values = random_tensor({t, h, w, 3}, 42 + i);
    in.query_key = random_tensor({h, w, c}, 43 + i);
    in.query_value = random_tensor({h, w, 3}, 44 + i);
    IndexTensor candidates({h * w, n_cand});
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      candidates[j] = static_cast<std::int64_t>(detail::mix3(7, j, i) % (t * h * w));
    }
    OpCounters counters;
    {
      CountingScope scope(counters);
      sparse_read(in, candidates);
    }
    per_pixel[i] = counters.mul_adds / (h * w);
  }
  return make("sparse read work per pixel is constant in the grid size", per_pixel[0] == per_pixel[1],
              std::to_string(per_pixel[0]) + " vs " + std::to_string(per_pixel[1]) + " mul-adds per pixel");
}

inline VerifyResult verify_retention_policy() {
  using namespace verify_detail;
  for (std::uint64_t s = 0; s < 20; ++s) {
    RetentionPolicy policy{3 + s % 4, s % 2 == 1};
    MemoryBank bank;
    bank.policy = policy;
    std::vector<std::int64_t> trace;
    std::int64_t t = 1 + static_cast<std::int64_t>(detail::mix3(s, 0, 1) % 3);
    const std::size_t len = 5 + detail::mix3(s, 1, 1) % 15;
    for (std::size_t i = 0; i < len; ++i) {
      trace.push_back(t);
      t += 1 + static_cast<std::int64_t>(detail::mix3(s, i, 2) % 3);
    }
    MultiScaleFrame frame;
    frame.res4 = {NDTensor({1, 1, 1}), NDTensor({1, 1, 1})};
    frame.res3 = frame.res4;
    frame.res2 = frame.res4;
    for (std::int64_t time : trace) {
      frame.time = time;
      bank_insert(bank, frame);
    }
    // brute-force simulation: first + latest + every-N grid
    const std::int64_t first = trace.front();
    auto simulate = [&](bool fine) {
      std::vector<std::int64_t> keep;
      for (std::int64_t time : trace) {
        const bool grid = (time - first + 1) % static_cast<std::int64_t>(policy.every_n) == 0;
        if (time == first || time == trace.back() || (grid && (!fine || policy.fine_every_n))) keep.push_back(time);
      }
      return keep;
    };
    if (bank.coarse_times != simulate(false) || bank.fine_times != simulate(true)) {
      return make("retention matches the brute-force policy simulation", false, "trace seed " + std::to_string(s));
    }
  }
  return make("retention matches the brute-force policy simulation", true);
}

inline VerifyResult verify_pipeline_cache() {
  SyntheticScene spec;
  spec.coarse_h = 6;
  spec.coarse_w = 6;
  spec.frame_count = 8;
  spec.seed = 77;
  spec.objects = {{1, 1, 2, 2, 0, 0, -1}};
  SceneData scene = generate_scene(spec);

  ReadOptions opts;
  opts.k = 8;
  opts.kernel = KernelParams{5, 2.0, 0.5};

  MemoryBank bank;
  bank.policy = {3, false};
  bank_insert(bank, scene.frames[0]);
  TrackTable cache;
  bool have_cache = false;
  for (std::size_t f = 1; f < scene.frames.size(); ++f) {
    HierarchicalReadOutput warm =
        hierarchical_read(bank, scene.frames[f], opts, have_cache ? &cache : nullptr);
    HierarchicalReadOutput cold = hierarchical_read(bank, scene.frames[f], opts, nullptr);
    if (verify_detail::max_abs_diff(warm.z4, cold.z4) > 1e-12 ||
        verify_detail::max_abs_diff(warm.z3, cold.z3) > 1e-12 ||
        verify_detail::max_abs_diff(warm.z2, cold.z2) > 1e-12) {
      return verify_detail::make("cached hierarchical read equals cold recompute", false,
                                 "divergence at frame " + std::to_string(f));
    }
    cache = std::move(warm.track);
    have_cache = true;
    bank_insert(bank, scene.frames[f]);
  }
  return verify_detail::make("cached hierarchical read equals cold recompute", true);
}

inline VerifyResult verify_soft_aggregate_distribution() {
  using namespace verify_detail;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::vector<NDTensor> maps;
    for (std::size_t m = 0; m < 3; ++m) maps.push_back(random_tensor({5, 4}, s * 3 + m, 1e-5, 1.0 - 1e-5));
    NDTensor dist = soft_aggregate(maps);
    for (std::size_t p = 0; p < 20; ++p) {
      double sum = 0.0;
      for (std::size_t m = 0; m < 4; ++m) {
        const double v = dist[m * 20 + p];
        if (v < 0.0) return make("soft aggregation yields per-pixel distributions", false, "negative probability");
        sum += v;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return make("soft aggregation yields per-pixel distributions", worst <= 1e-9,
              "max |sum-1| = " + std::to_string(worst));
}

inline VerifyResult verify_end_to_end_determinism() {
  SyntheticScene spec;
  spec.coarse_h = 7;
  spec.coarse_w = 7;
  spec.frame_count = 5;
  spec.seed = 99;
  spec.objects = {{0, 0, 2, 2, 1, 1, -1}};

  auto run = [&] {
    SceneData scene = generate_scene(spec);
    ReadOptions opts;
    opts.k = 4;
    opts.dropout_rate = 0.5;
    opts.seed = 1234;
    MemoryBank bank;
    bank.policy = {5, false};
    for (std::size_t f = 0; f + 1 < scene.frames.size(); ++f) bank_insert(bank, scene.frames[f]);
    return hierarchical_read(bank, scene.frames.back(), opts);
  };
  HierarchicalReadOutput a = run();
  HierarchicalReadOutput b = run();
  const bool same = a.z4.buffer() == b.z4.buffer() && a.z3.buffer() == b.z3.buffer() &&
                    a.z2.buffer() == b.z2.buffer() && a.g4.scores.buffer() == b.g4.scores.buffer();
  return verify_detail::make("two identical runs are bit-identical", same);
}

inline std::vector<VerifyResult> run_verifications() {
  return {
      verify_softmax_stochastic(),
      verify_l1_idempotent(),
      verify_topk_full_sort(),
      verify_gather_identity(),
      verify_matmul_associative(),
      verify_guidance_column_stochastic(),
      verify_ones_kernel_reduction(),
      verify_vanilla_vs_oracle(),
      verify_frame_permutation_invariance(),
      verify_kernel_map_range(),
      verify_incremental_chain(),
      verify_translation_tracking(),
      verify_sigma_monotone(),
      verify_sparse_weights_sum(),
      verify_sparse_permutation_invariance(),
      verify_sparse_full_equals_dense(),
      verify_sparse_superset_support(),
      verify_sparse_work_scaling(),
      verify_retention_policy(),
      verify_pipeline_cache(),
      verify_soft_aggregate_distribution(),
      verify_end_to_end_determinism(),
  };
}

}  // namespace hmt
