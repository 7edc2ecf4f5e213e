#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "hmt/fine_matching.hpp"
#include "hmt/oracle.hpp"
#include "hmt/synthetic.hpp"
#include "test_util.hpp"

using namespace hmt;
using hmt::test::max_abs_diff;

namespace {

FineReadInput random_fine_input(std::size_t t, std::size_t h, std::size_t w, std::size_t c_k, std::size_t c_v,
                                std::uint64_t seed) {
  FineReadInput in;
  in.memory_keys = random_tensor({t, h, w, c_k}, seed + 1);
  in.memory_values = random_tensor({t, h, w, c_v}, seed + 2);
  in.query_key = random_tensor({h, w, c_k}, seed + 3);
  in.query_value = random_tensor({h, w, c_v}, seed + 4);
  auto [fw, fb] = identity_fusion(c_v);
  in.fusion_weight = std::move(fw);
  in.fusion_bias = std::move(fb);
  return in;
}

// per-pixel scalar re-implementation of the sparse read
NDTensor sparse_read_reference(const FineReadInput& in, const IndexTensor& candidates) {
  const std::size_t h = in.query_key.dim(0), w = in.query_key.dim(1);
  const std::size_t c_k = in.query_key.dim(2), c_v = in.query_value.dim(2);
  const std::size_t n = candidates.dim(1);
  NDTensor out({h, w, c_v});
  for (std::size_t p = 0; p < h * w; ++p) {
    std::vector<double> e(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t m = static_cast<std::size_t>(candidates[p * n + j]);
      double s = 0.0;
      for (std::size_t i = 0; i < c_k; ++i) s += in.query_key[p * c_k + i] * in.memory_keys[m * c_k + i];
      e[j] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp(e[j] - mx);
      z += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t m = static_cast<std::size_t>(candidates[p * n + j]);
      for (std::size_t i = 0; i < c_v; ++i) out[p * c_v + i] += (e[j] / z) * in.memory_values[m * c_v + i];
    }
  }
  return out;
}

AffinityMatrix random_guidance(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  AffinityMatrix g(rows, cols);
  for (std::size_t i = 0; i < g.scores.size(); ++i) g.scores[i] = detail::unit3(seed, i, 0);
  return g;
}

}  // namespace

TEST_CASE("top-k selection picks the one-hot coordinate") {
  AffinityMatrix g(2 * 2 * 3, 6);  // 2 frames of 2x3
  g.at(7, 0) = 1.0;                // frame 1, y 0, x 1
  TopKIndexSet set = select_topk_candidates(g, 1, FineScale::res3, 2, 3);
  CHECK(set.at(0, 0) == CoarseCoord{1, 0, 1});
}

TEST_CASE("top-k selection tie-breaks to the smallest flat indices") {
  AffinityMatrix g(8, 4);
  std::fill(g.scores.data(), g.scores.data() + g.scores.size(), 0.125);
  TopKIndexSet set = select_topk_candidates(g, 2, FineScale::res3, 2, 2);
  for (std::size_t q = 0; q < 4; ++q) {
    CHECK(set.at(q, 0) == CoarseCoord{0, 0, 0});
    CHECK(set.at(q, 1) == CoarseCoord{0, 0, 1});
  }
}

TEST_CASE("top-k selection matches a per-column sort") {
  const std::size_t frames = 3, hc = 4, wc = 4, hw = hc * wc;
  AffinityMatrix g = random_guidance(frames * hw, hw, 21);
  TopKIndexSet set = select_topk_candidates(g, 32, FineScale::res3, hc, wc);
  for (std::size_t q = 0; q < hw; ++q) {
    std::vector<std::size_t> order(frames * hw);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g.at(a, q) > g.at(b, q); });
    for (std::size_t j = 0; j < 32; ++j) {
      const CoarseCoord expect{order[j] / hw, (order[j] % hw) / wc, order[j] % wc};
      CHECK(set.at(q, j) == expect);
    }
    std::set<std::size_t> distinct;
    for (std::size_t j = 0; j < 32; ++j) distinct.insert((set.at(q, j).t * hc + set.at(q, j).y) * wc + set.at(q, j).x);
    CHECK(distinct.size() == 32);
  }
}

TEST_CASE("top-k selection rejects k beyond the memory size") {
  AffinityMatrix g = random_guidance(8, 4, 3);
  CHECK_THROWS_WITH_AS(select_topk_candidates(g, 9, FineScale::res3, 2, 2), doctest::Contains("exceeds"),
                       std::invalid_argument);
}

TEST_CASE("expansion of one coarse pixel at res3 is its 2x2 block") {
  TopKIndexSet set;
  set.scale = FineScale::res3;
  set.memory_frames = 1;
  set.coarse_h = 2;
  set.coarse_w = 2;
  set.k = 1;
  set.coords = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}};  // every parent selects coarse (0,0,0)
  IndexTensor cand = expand_to_fine(set, 1, 4, 4);
  CHECK(cand.shape() == Shape{16, 4});
  // fine block of coarse (0,0): flat fine indices {0, 1, 4, 5}
  for (std::size_t p = 0; p < 16; ++p) {
    CHECK(cand[p * 4 + 0] == 0);
    CHECK(cand[p * 4 + 1] == 1);
    CHECK(cand[p * 4 + 2] == 4);
    CHECK(cand[p * 4 + 3] == 5);
  }
}

TEST_CASE("candidate budget is 4k per fine pixel at both scales") {
  const std::size_t frames = 2, hc = 4, wc = 4, hw = hc * wc;
  for (std::size_t k : {8u, 16u, 32u}) {
    AffinityMatrix g = random_guidance(frames * hw, hw, 100 + k);
    TopKIndexSet res3 = select_topk_candidates(g, k, FineScale::res3, hc, wc);
    IndexTensor c3 = expand_to_fine(res3, frames, 2 * hc, 2 * wc);
    CHECK(c3.dim(1) == 4 * k);
    TopKIndexSet res2 = select_topk_candidates(g, k / 4, FineScale::res2, hc, wc);
    IndexTensor c2 = expand_to_fine(res2, frames, 4 * hc, 4 * wc);
    CHECK(c2.dim(1) == 4 * k);
  }
}

TEST_CASE("expansion matches a per-coordinate loop") {
  const std::size_t frames = 2, hc = 3, wc = 3, hw = 9, k = 4;
  AffinityMatrix g = random_guidance(frames * hw, hw, 55);
  TopKIndexSet set = select_topk_candidates(g, k, FineScale::res2, hc, wc);
  IndexTensor cand = expand_to_fine(set, frames, 12, 12);
  for (std::size_t fy = 0; fy < 12; ++fy)
    for (std::size_t fx = 0; fx < 12; ++fx) {
      const std::size_t parent = (fy / 4) * wc + fx / 4;
      std::size_t n = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const CoarseCoord c = set.at(parent, j);
        for (std::size_t dy = 0; dy < 4; ++dy)
          for (std::size_t dx = 0; dx < 4; ++dx) {
            const std::int64_t expect =
                static_cast<std::int64_t>((c.t * 12 + c.y * 4 + dy) * 12 + c.x * 4 + dx);
            CHECK(cand[(fy * 12 + fx) * (16 * k) + n] == expect);
            ++n;
          }
      }
    }
}

TEST_CASE("expansion rejects inconsistent fine shapes") {
  TopKIndexSet set;
  set.scale = FineScale::res3;
  set.memory_frames = 1;
  set.coarse_h = 2;
  set.coarse_w = 2;
  set.k = 1;
  set.coords.assign(4, CoarseCoord{0, 0, 0});
  CHECK_THROWS_AS(expand_to_fine(set, 1, 5, 4), std::invalid_argument);
  CHECK_THROWS_AS(expand_to_fine(set, 2, 4, 4), std::invalid_argument);
}

TEST_CASE("a single candidate retrieves that memory value exactly") {
  FineReadInput in = random_fine_input(2, 3, 3, 4, 5, 60);
  IndexTensor cand({9, 1});
  for (std::size_t p = 0; p < 9; ++p) cand[p] = static_cast<std::int64_t>((p * 7) % 18);
  NDTensor out = sparse_read(in, cand);
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(out[p * 5 + i] == in.memory_values[static_cast<std::size_t>(cand[p]) * 5 + i]);
    }
}

TEST_CASE("full candidates make the sparse read equal the dense reference") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::size_t t = 1 + s % 2, h = 8, w = 8 + 8 * (s % 2);
    FineReadInput in = random_fine_input(t, h, w, 6, 4, 70 + 10 * s);
    const std::size_t mem = t * h * w;
    IndexTensor cand({h * w, mem});
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t m = 0; m < mem; ++m) cand[p * mem + m] = static_cast<std::int64_t>(m);
    NDTensor expect = oracle_dense_read(in.memory_keys, in.memory_values, in.query_key);
    CHECK(max_abs_diff(sparse_read(in, cand), expect) <= 1e-9);
  }
}

TEST_CASE("sparse read matches the scalar loop reference, duplicates included") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    FineReadInput in = random_fine_input(2, 4, 5, 5, 3, 200 + 10 * s);
    IndexTensor cand({20, 7});
    for (std::size_t i = 0; i < cand.size(); ++i) {
      cand[i] = static_cast<std::int64_t>(detail::mix3(s, i, 4) % 40);
    }
    // force duplicates at every pixel
    for (std::size_t p = 0; p < 20; ++p) cand[p * 7 + 6] = cand[p * 7 + 0];
    CHECK(max_abs_diff(sparse_read(in, cand), sparse_read_reference(in, cand)) <= 1e-9);
  }
}

TEST_CASE("sparse read rejects out-of-range candidates naming the position") {
  FineReadInput in = random_fine_input(1, 2, 2, 3, 2, 90);
  IndexTensor cand({4, 2}, {0, 1, 2, 9, 0, 1, 2, 3});
  CHECK_THROWS_WITH_AS(sparse_read(in, cand), doctest::Contains("query pixel 1"), std::out_of_range);
}

TEST_CASE("sparse softmax weights sum to one per pixel") {
  FineReadInput in = random_fine_input(2, 5, 5, 6, 1, 95);
  std::fill(in.memory_values.data(), in.memory_values.data() + in.memory_values.size(), 1.0);
  IndexTensor cand({25, 11});
  for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = static_cast<std::int64_t>(detail::mix3(5, i, 6) % 50);
  NDTensor out = sparse_read(in, cand);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - 1.0) <= 1e-9);
}

TEST_CASE("residual fuse with dropout rate 1 returns the query value exactly") {
  NDTensor qv = random_tensor({3, 3, 4}, 1);
  NDTensor retrieved = random_tensor({3, 3, 4}, 2);
  auto [w, b] = identity_fusion(4);
  NDTensor out = residual_fuse(qv, retrieved, w, b, 1.0, 42);
  CHECK(out.buffer() == qv.buffer());
}

TEST_CASE("residual fuse with dropout rate 0 and identity projection adds the retrieved value") {
  NDTensor qv = random_tensor({2, 3, 4}, 3);
  NDTensor retrieved = random_tensor({2, 3, 4}, 4);
  auto [w, b] = identity_fusion(4);
  NDTensor out = residual_fuse(qv, retrieved, w, b, 0.0, 7);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(qv[i] + retrieved[i]).epsilon(1e-15));
}

TEST_CASE("the dropout decision is reproducible for a fixed seed") {
  NDTensor qv = random_tensor({2, 2, 3}, 5);
  NDTensor retrieved = random_tensor({2, 2, 3}, 6);
  auto [w, b] = identity_fusion(3);
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    NDTensor a = residual_fuse(qv, retrieved, w, b, 0.5, seed);
    NDTensor b2 = residual_fuse(qv, retrieved, w, b, 0.5, seed);
    CHECK(a.buffer() == b2.buffer());
  }
  // both branches occur across seeds
  bool dropped = false, kept = false;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    NDTensor out = residual_fuse(qv, retrieved, w, b, 0.5, seed);
    if (out.buffer() == qv.buffer()) dropped = true;
    else kept = true;
  }
  CHECK(dropped);
  CHECK(kept);
}

TEST_CASE("residual fuse applies the projection before the residual") {
  NDTensor qv({1, 1, 2}, {10, 20});
  NDTensor retrieved({1, 1, 3}, {1, 2, 3});
  NDTensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  NDTensor b({2}, {0.5, -0.5});
  NDTensor out = residual_fuse(qv, retrieved, w, b, 0.0, 0);
  CHECK(out[0] == doctest::Approx(10 + 1 + 3 + 0.5));
  CHECK(out[1] == doctest::Approx(20 + 2 + 3 - 0.5));
}

TEST_CASE("residual fuse rejects a bad dropout rate and mismatched projection") {
  NDTensor qv({1, 1, 2});
  NDTensor retrieved({1, 1, 2});
  auto [w, b] = identity_fusion(2);
  CHECK_THROWS_AS(residual_fuse(qv, retrieved, w, b, 1.5, 0), std::invalid_argument);
  auto [w3, b3] = identity_fusion(3);
  CHECK_THROWS_AS(residual_fuse(qv, NDTensor({1, 1, 3}), w3, b3, 0.0, 0), std::invalid_argument);
}

TEST_CASE("candidate permutation leaves the sparse read unchanged") {
  FineReadInput in = random_fine_input(2, 4, 4, 5, 3, 300);
  const std::size_t n = 9;
  IndexTensor cand({16, n});
  IndexTensor rot({16, n});
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      cand[p * n + j] = static_cast<std::int64_t>(detail::mix3(11, p * n + j, 0) % 32);
      rot[p * n + (j + 3) % n] = cand[p * n + j];
    }
  CHECK(max_abs_diff(sparse_read(in, cand), sparse_read(in, rot)) <= 1e-12);
}
