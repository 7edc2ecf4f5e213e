#include <doctest.h>

#include <cmath>
#include <vector>

#include "hmt/memory_pipeline.hpp"
#include "hmt/oracle.hpp"
#include "hmt/synthetic.hpp"
#include "test_util.hpp"

using namespace hmt;
using hmt::test::max_abs_diff;

namespace {

MultiScaleFrame tiny_frame(std::int64_t time) {
  MultiScaleFrame f;
  f.time = time;
  f.res4 = {NDTensor({1, 1, 1}), NDTensor({1, 1, 1})};
  f.res3 = f.res4;
  f.res2 = f.res4;
  return f;
}

// the policy, restated as a set comprehension over the whole trace
std::vector<std::int64_t> simulate_retention(const std::vector<std::int64_t>& trace, std::size_t n, bool fine,
                                             bool fine_every_n) {
  std::vector<std::int64_t> keep;
  for (std::int64_t t : trace) {
    const bool grid = n > 0 && (t - trace.front() + 1) % static_cast<std::int64_t>(n) == 0;
    const bool grid_applies = !fine || fine_every_n;
    if (t == trace.front() || t == trace.back() || (grid && grid_applies)) keep.push_back(t);
  }
  return keep;
}

}  // namespace

TEST_CASE("the 12-frame trace retains {1,5,10,12} coarse and {1,12} fine") {
  MemoryBank bank;
  bank.policy = {5, false};
  for (std::int64_t t = 1; t <= 12; ++t) bank_insert(bank, tiny_frame(t));
  CHECK(bank.coarse_times == std::vector<std::int64_t>{1, 5, 10, 12});
  CHECK(bank.fine_times == std::vector<std::int64_t>{1, 12});
}

TEST_CASE("a single inserted frame is retained at every scale") {
  MemoryBank bank;
  bank.policy = {5, false};
  bank_insert(bank, tiny_frame(3));
  CHECK(bank.coarse_times == std::vector<std::int64_t>{3});
  CHECK(bank.fine_times == std::vector<std::int64_t>{3});
  CHECK(bank.fine3.size() == 1);
  CHECK(bank.fine2.size() == 1);
}

TEST_CASE("non-monotonic insertion is rejected") {
  MemoryBank bank;
  bank.policy = {5, false};
  bank_insert(bank, tiny_frame(4));
  CHECK_THROWS_AS(bank_insert(bank, tiny_frame(4)), std::invalid_argument);
  CHECK_THROWS_AS(bank_insert(bank, tiny_frame(2)), std::invalid_argument);
}

TEST_CASE("randomized traces match the brute-force policy simulation") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t n = 2 + s % 6;
    const bool fine_every_n = s % 3 == 0;
    MemoryBank bank;
    bank.policy = {n, fine_every_n};
    std::vector<std::int64_t> trace;
    std::int64_t t = 1 + static_cast<std::int64_t>(detail::mix3(s, 7, 0) % 4);
    const std::size_t len = 4 + detail::mix3(s, 8, 0) % 20;
    for (std::size_t i = 0; i < len; ++i) {
      trace.push_back(t);
      bank_insert(bank, tiny_frame(t));
      t += 1 + static_cast<std::int64_t>(detail::mix3(s, i, 9) % 4);
    }
    CHECK(bank.coarse_times == simulate_retention(trace, n, false, fine_every_n));
    CHECK(bank.fine_times == simulate_retention(trace, n, true, fine_every_n));
    // fine frames are a subset of coarse frames, and the first is retained
    for (std::int64_t ft : bank.fine_times) {
      CHECK(std::find(bank.coarse_times.begin(), bank.coarse_times.end(), ft) != bank.coarse_times.end());
    }
    CHECK(bank.coarse_times.front() == trace.front());
  }
}

TEST_CASE("hierarchical read retrieves in place on a static self-similar scene") {
  SyntheticScene spec;
  spec.coarse_h = 4;
  spec.coarse_w = 4;
  spec.frame_count = 4;
  spec.seed = 9;
  spec.objects = {{1, 1, 2, 2, 0, 0, -1}};
  SceneData scene = generate_scene(spec);

  MemoryBank bank;
  bank.policy = {5, false};
  for (std::size_t f = 0; f + 1 < 4; ++f) bank_insert(bank, scene.frames[f]);

  ReadOptions opts;
  opts.k = 8;
  HierarchicalReadOutput out = hierarchical_read(bank, scene.frames[3], opts);

  // all frames are identical, so the coarse retrieved half reproduces the
  // query-frame values and the fine outputs are query value + in-place value
  const std::size_t cv = spec.value_channels;
  const NDTensor& v4 = scene.frames[3].res4.value;
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t i = 0; i < cv; ++i) {
      CHECK(out.z4[p * 2 * cv + i] == v4[p * cv + i]);  // query half, bit for bit
      CHECK(std::abs(out.z4[p * 2 * cv + cv + i] - v4[p * cv + i]) <= 1e-3);
    }
  const NDTensor& v3 = scene.frames[3].res3.value;
  for (std::size_t i = 0; i < v3.size(); ++i) CHECK(std::abs(out.z3[i] - 2.0 * v3[i]) <= 1e-3);
  const NDTensor& v2 = scene.frames[3].res2.value;
  for (std::size_t i = 0; i < v2.size(); ++i) CHECK(std::abs(out.z2[i] - 2.0 * v2[i]) <= 1e-3);
}

TEST_CASE("with the full fine memory selected, z3 equals query value plus the dense fine read") {
  SyntheticScene spec;
  spec.coarse_h = 6;
  spec.coarse_w = 6;
  spec.frame_count = 4;
  spec.seed = 17;
  spec.objects = {{0, 0, 2, 2, 1, 1, -1}};
  SceneData scene = generate_scene(spec);

  MemoryBank bank;
  bank.policy = {5, false};
  for (std::size_t f = 0; f + 1 < 4; ++f) bank_insert(bank, scene.frames[f]);
  REQUIRE(bank.fine_times.size() == 2);

  ReadOptions opts;
  opts.k = 2 * 6 * 6;  // every coarse memory pixel of the fine bank
  HierarchicalReadOutput out = hierarchical_read(bank, scene.frames[3], opts);

  NDTensor mem_keys({2, 12, 12, scene.frames[0].res3.key.shape().back()});
  NDTensor mem_vals({2, 12, 12, spec.value_channels});
  for (std::size_t f = 0; f < 2; ++f) {
    std::copy(bank.fine3[f].key.data(), bank.fine3[f].key.data() + bank.fine3[f].key.size(),
              mem_keys.data() + f * bank.fine3[f].key.size());
    std::copy(bank.fine3[f].value.data(), bank.fine3[f].value.data() + bank.fine3[f].value.size(),
              mem_vals.data() + f * bank.fine3[f].value.size());
  }
  NDTensor dense = oracle_dense_read(mem_keys, mem_vals, scene.frames[3].res3.key);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    CHECK(std::abs(out.z3[i] - (scene.frames[3].res3.value[i] + dense[i])) <= 1e-9);
  }
}

TEST_CASE("forcing the kernel to ones reproduces the vanilla pipeline at the coarse scale") {
  SyntheticScene spec;
  spec.coarse_h = 7;
  spec.coarse_w = 7;
  spec.frame_count = 5;
  spec.seed = 23;
  spec.objects = {{0, 0, 2, 2, 1, 1, -1}};
  SceneData scene = generate_scene(spec);

  MemoryBank bank;
  bank.policy = {5, false};
  for (std::size_t f = 0; f + 1 < 5; ++f) bank_insert(bank, scene.frames[f]);

  ReadOptions opts;
  opts.k = 4;
  opts.kernel_ones = true;
  HierarchicalReadOutput out = hierarchical_read(bank, scene.frames[4], opts);

  CoarseReadInput coarse;
  coarse.memory_keys = NDTensor({bank.coarse.size(), 7, 7, scene.frames[0].res4.key.shape().back()});
  coarse.memory_values = NDTensor({bank.coarse.size(), 7, 7, spec.value_channels});
  for (std::size_t f = 0; f < bank.coarse.size(); ++f) {
    std::copy(bank.coarse[f].key.data(), bank.coarse[f].key.data() + bank.coarse[f].key.size(),
              coarse.memory_keys.data() + f * bank.coarse[f].key.size());
    std::copy(bank.coarse[f].value.data(), bank.coarse[f].value.data() + bank.coarse[f].value.size(),
              coarse.memory_values.data() + f * bank.coarse[f].value.size());
  }
  coarse.query_key = scene.frames[4].res4.key;
  coarse.query_value = scene.frames[4].res4.value;
  CoarseReadOutput vanilla = vanilla_read(coarse);
  CHECK(out.z4.buffer() == vanilla.fused.buffer());
  CHECK(out.g4.scores.buffer() == vanilla.guidance.scores.buffer());
}

TEST_CASE("a cached track table reproduces the cold hierarchical read over ten frames") {
  SyntheticScene spec;
  spec.coarse_h = 6;
  spec.coarse_w = 6;
  spec.frame_count = 10;
  spec.seed = 29;
  spec.objects = {{2, 2, 2, 2, 0, 0, -1}};
  SceneData scene = generate_scene(spec);

  ReadOptions opts;
  opts.k = 8;
  MemoryBank bank;
  bank.policy = {4, false};
  bank_insert(bank, scene.frames[0]);
  TrackTable cache;
  bool warm = false;
  for (std::size_t f = 1; f < 10; ++f) {
    HierarchicalReadOutput a = hierarchical_read(bank, scene.frames[f], opts, warm ? &cache : nullptr);
    HierarchicalReadOutput b = hierarchical_read(bank, scene.frames[f], opts, nullptr);
    CHECK(a.z4.buffer() == b.z4.buffer());
    CHECK(a.z3.buffer() == b.z3.buffer());
    CHECK(a.z2.buffer() == b.z2.buffer());
    cache = std::move(a.track);
    warm = true;
    bank_insert(bank, scene.frames[f]);
  }
}

TEST_CASE("hierarchical read validates k") {
  SyntheticScene spec;
  spec.coarse_h = 4;
  spec.coarse_w = 4;
  spec.frame_count = 2;
  spec.seed = 3;
  SceneData scene = generate_scene(spec);
  MemoryBank bank;
  bank.policy = {5, false};
  bank_insert(bank, scene.frames[0]);
  ReadOptions opts;
  opts.k = 6;  // not a multiple of 4
  CHECK_THROWS_AS(hierarchical_read(bank, scene.frames[1], opts), std::invalid_argument);
  MemoryBank empty;
  opts.k = 4;
  CHECK_THROWS_AS(hierarchical_read(empty, scene.frames[1], opts), std::invalid_argument);
}

TEST_CASE("soft aggregation of a single half-confident map is (0.5, 0.5)") {
  NDTensor p({2, 2}, {0.5, 0.5, 0.5, 0.5});
  NDTensor dist = soft_aggregate({p});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(dist[i] == doctest::Approx(0.5).epsilon(1e-12));          // background
    CHECK(dist[4 + i] == doctest::Approx(0.5).epsilon(1e-12));      // object
  }
}

TEST_CASE("soft aggregation limit case: a near-certain object dominates") {
  const double eps = 1e-5;
  NDTensor p1({1, 1}, {1.0 - eps});
  NDTensor p2({1, 1}, {eps});
  NDTensor dist = soft_aggregate({p1, p2});
  CHECK(dist[1] > 0.999);
  CHECK(dist[0] < 1e-3);
  CHECK(dist[2] < 1e-3);
}

TEST_CASE("soft aggregation yields distributions and follows the odds argmax") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::vector<NDTensor> maps;
    for (std::size_t m = 0; m < 3; ++m) maps.push_back(random_tensor({4, 5}, 31 * s + m, 0.01, 0.99));
    NDTensor dist = soft_aggregate(maps);
    for (std::size_t p = 0; p < 20; ++p) {
      double sum = 0.0;
      for (std::size_t m = 0; m < 4; ++m) sum += dist[m * 20 + p];
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      double pmax = 0.0;
      std::size_t best = 0;
      for (std::size_t m = 0; m < 3; ++m) {
        if (maps[m][p] > pmax) {
          pmax = maps[m][p];
          best = m + 1;
        }
      }
      if (pmax > 0.5) {
        std::size_t arg = 0;
        double vmax = -1.0;
        for (std::size_t m = 0; m < 4; ++m) {
          if (dist[m * 20 + p] > vmax) {
            vmax = dist[m * 20 + p];
            arg = m;
          }
        }
        CHECK(arg == best);
      }
    }
  }
}

TEST_CASE("soft aggregation rejects an empty object set and mixed shapes") {
  CHECK_THROWS_AS(soft_aggregate({}), std::invalid_argument);
  CHECK_THROWS_AS(soft_aggregate({NDTensor({2, 2}), NDTensor({2, 3})}), std::invalid_argument);
}

TEST_CASE("identical runs with an active dropout seed are bit-identical") {
  SyntheticScene spec;
  spec.coarse_h = 6;
  spec.coarse_w = 6;
  spec.frame_count = 5;
  spec.seed = 37;
  spec.objects = {{0, 0, 2, 2, 1, 1, -1}};

  auto run = [&] {
    SceneData scene = generate_scene(spec);
    MemoryBank bank;
    bank.policy = {5, false};
    for (std::size_t f = 0; f + 1 < 5; ++f) bank_insert(bank, scene.frames[f]);
    ReadOptions opts;
    opts.k = 8;
    opts.dropout_rate = 0.5;
    opts.seed = 4242;
    return hierarchical_read(bank, scene.frames[4], opts);
  };
  HierarchicalReadOutput a = run();
  HierarchicalReadOutput b = run();
  CHECK(a.z4.buffer() == b.z4.buffer());
  CHECK(a.z3.buffer() == b.z3.buffer());
  CHECK(a.z2.buffer() == b.z2.buffer());
  CHECK(a.g4.scores.buffer() == b.g4.scores.buffer());
}
