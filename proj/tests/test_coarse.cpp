#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hmt/coarse_matching.hpp"
#include "hmt/oracle.hpp"
#include "hmt/synthetic.hpp"
#include "test_util.hpp"

using namespace hmt;
using hmt::test::max_abs_diff;

namespace {

CoarseReadInput random_input(std::size_t t, std::size_t h, std::size_t w, std::size_t c_k, std::size_t c_v,
                             std::uint64_t seed) {
  CoarseReadInput in;
  in.memory_keys = random_tensor({t, h, w, c_k}, seed + 1);
  in.memory_values = random_tensor({t, h, w, c_v}, seed + 2);
  in.query_key = random_tensor({h, w, c_k}, seed + 3);
  in.query_value = random_tensor({h, w, c_v}, seed + 4);
  return in;
}

NDTensor retrieved_half(const NDTensor& fused) {
  const std::size_t c2 = fused.shape().back();
  const std::size_t c_v = c2 / 2;
  NDTensor out({fused.dim(0), fused.dim(1), c_v});
  for (std::size_t p = 0; p < fused.dim(0) * fused.dim(1); ++p)
    for (std::size_t i = 0; i < c_v; ++i) out[p * c_v + i] = fused[p * c2 + c_v + i];
  return out;
}

}  // namespace

TEST_CASE("dense affinity of single pixels is the dot product") {
  NDTensor mk({1, 1, 1, 2}, {1, 2});
  NDTensor qk({1, 1, 2}, {3, 4});
  AffinityMatrix m = dense_affinity(mk, qk);
  CHECK(m.memory_size() == 1);
  CHECK(m.query_size() == 1);
  CHECK(m.at(0, 0) == 11.0);
}

TEST_CASE("dense affinity with orthonormal keys picks out one column entry") {
  // memory keys = scaled standard basis per pixel; query key everywhere = key #1
  const std::size_t hw = 4, c = 4;
  const double alpha = 3.0;
  NDTensor mk({1, 2, 2, c});
  for (std::size_t p = 0; p < hw; ++p) mk[p * c + p] = alpha;
  NDTensor qk({2, 2, c});
  for (std::size_t p = 0; p < hw; ++p) qk[p * c + 1] = alpha;
  AffinityMatrix m = dense_affinity(mk, qk);
  for (std::size_t mp = 0; mp < hw; ++mp)
    for (std::size_t q = 0; q < hw; ++q) CHECK(m.at(mp, q) == (mp == 1 ? alpha * alpha : 0.0));
}

TEST_CASE("dense affinity matches a per-pair dot-product loop") {
  NDTensor mk = random_tensor({2, 4, 4, 8}, 41);
  NDTensor qk = random_tensor({4, 4, 8}, 42);
  AffinityMatrix m = dense_affinity(mk, qk);
  for (std::size_t mp = 0; mp < 32; ++mp)
    for (std::size_t q = 0; q < 16; ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < 8; ++i) s += mk[mp * 8 + i] * qk[q * 8 + i];
      CHECK(std::abs(m.at(mp, q) - s) <= 1e-10);
    }
}

TEST_CASE("dense affinity rejects mismatched channels") {
  CHECK_THROWS_AS(dense_affinity(NDTensor({1, 2, 2, 4}), NDTensor({2, 2, 5})), std::invalid_argument);
}

TEST_CASE("vanilla read retrieves the matching pixel under near-one-hot affinities") {
  const std::size_t hw = 4, c = 4;
  CoarseReadInput in;
  in.memory_keys = NDTensor({1, 2, 2, c});
  for (std::size_t p = 0; p < hw; ++p) in.memory_keys[p * c + p] = 6.0;  // alpha^2 = 36
  in.query_key = reshape(in.memory_keys, {2, 2, c});
  in.memory_values = random_tensor({1, 2, 2, 3}, 5);
  in.query_value = random_tensor({2, 2, 3}, 6);
  CoarseReadOutput out = vanilla_read(in);
  NDTensor retrieved = retrieved_half(out.fused);
  CHECK(max_abs_diff(retrieved, reshape(in.memory_values, {2, 2, 3})) <= 1e-9);
  // the query half is the query value bit for bit
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t i = 0; i < 3; ++i) CHECK(out.fused[p * 6 + i] == in.query_value[p * 3 + i]);
}

TEST_CASE("vanilla read with uniform keys averages the memory values") {
  CoarseReadInput in;
  in.memory_keys = NDTensor({2, 3, 3, 4}, std::vector<double>(2 * 9 * 4, 0.7));
  in.query_key = NDTensor({3, 3, 4}, std::vector<double>(9 * 4, 0.3));
  in.memory_values = random_tensor({2, 3, 3, 2}, 7);
  in.query_value = NDTensor({3, 3, 2});
  CoarseReadOutput out = vanilla_read(in);
  NDTensor retrieved = retrieved_half(out.fused);
  for (std::size_t i = 0; i < 2; ++i) {
    double mean = 0.0;
    for (std::size_t mp = 0; mp < 18; ++mp) mean += in.memory_values[mp * 2 + i];
    mean /= 18.0;
    for (std::size_t p = 0; p < 9; ++p) CHECK(std::abs(retrieved[p * 2 + i] - mean) <= 1e-12);
  }
}

TEST_CASE("vanilla read matches the direct-summation reference") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t t = 1 + s % 3, h = 3 + s % 5, w = 3 + (s * 3) % 5;
    CoarseReadInput in = random_input(t, h, w, 8, 4, 100 * s);
    NDTensor expect = oracle_dense_read(in.memory_keys, in.memory_values, in.query_key);
    CHECK(max_abs_diff(retrieved_half(vanilla_read(in).fused), expect) <= 1e-9);
  }
}

TEST_CASE("kernel-guided read with an all-ones kernel equals the vanilla read") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    CoarseReadInput in = random_input(2, 4, 5, 6, 3, 50 + s);
    AffinityMatrix ones(2 * 20, 20);
    std::fill(ones.scores.data(), ones.scores.data() + ones.scores.size(), 1.0);
    CoarseReadOutput guided = kernel_guided_read(in, ones);
    CoarseReadOutput plain = vanilla_read(in);
    CHECK(max_abs_diff(guided.fused, plain.fused) <= 1e-12);
    CHECK(max_abs_diff(guided.guidance.scores, plain.guidance.scores) <= 1e-12);
  }
}

TEST_CASE("kernel guidance disambiguates two identical memory pixels") {
  // two memory pixels with identical keys split the softmax 0.5/0.5; a kernel
  // that favors pixel A turns the guidance into exactly [1, 0]
  CoarseReadInput in;
  in.memory_keys = NDTensor({1, 1, 2, 3}, {1, 2, 3, 1, 2, 3});
  in.memory_values = NDTensor({1, 1, 2, 2}, {10, 11, 20, 21});
  in.query_key = NDTensor({1, 2, 3}, {1, 2, 3, 0, 0, 0});
  in.query_value = NDTensor({1, 2, 2});
  AffinityMatrix kernel(2, 2);
  kernel.at(0, 0) = 1.0;
  kernel.at(1, 0) = 0.0;
  kernel.at(0, 1) = 1.0;
  kernel.at(1, 1) = 1.0;
  CoarseReadOutput out = kernel_guided_read(in, kernel);
  CHECK(out.guidance.at(0, 0) == 1.0);
  CHECK(out.guidance.at(1, 0) == 0.0);
  NDTensor retrieved = retrieved_half(out.fused);
  CHECK(retrieved(0u, 0u, 0u) == doctest::Approx(10.0));
  CHECK(retrieved(0u, 0u, 1u) == doctest::Approx(11.0));
}

TEST_CASE("a one-hot kernel column forces that guidance column") {
  CoarseReadInput in = random_input(2, 3, 3, 5, 2, 77);
  AffinityMatrix kernel(18, 9);
  for (std::size_t q = 0; q < 9; ++q) kernel.at((q * 2) % 18, q) = 1.0;
  CoarseReadOutput out = kernel_guided_read(in, kernel);
  for (std::size_t q = 0; q < 9; ++q)
    for (std::size_t m = 0; m < 18; ++m) CHECK(out.guidance.at(m, q) == (m == (q * 2) % 18 ? 1.0 : 0.0));
}

TEST_CASE("kernel-guided read rejects a mismatched kernel shape") {
  CoarseReadInput in = random_input(1, 2, 2, 3, 2, 88);
  AffinityMatrix kernel(3, 4);
  CHECK_THROWS_AS(kernel_guided_read(in, kernel), std::invalid_argument);
}

TEST_CASE("guidance columns are stochastic even with zeroed kernel columns") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    CoarseReadInput in = random_input(2, 4, 4, 6, 3, 200 + s);
    AffinityMatrix kernel(32, 16);
    for (std::size_t i = 0; i < kernel.scores.size(); ++i) kernel.scores[i] = detail::unit3(s, i, 1);
    for (std::size_t m = 0; m < 32; ++m) kernel.at(m, 5) = 0.0;
    CoarseReadOutput out = kernel_guided_read(in, kernel);
    for (std::size_t q = 0; q < 16; ++q) {
      double sum = 0.0;
      for (std::size_t m = 0; m < 32; ++m) {
        CHECK(out.guidance.at(m, q) >= 0.0);
        CHECK(out.guidance.at(m, q) <= 1.0);
        sum += out.guidance.at(m, q);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("permuting memory frames with matching kernel rows leaves the output unchanged") {
  const std::size_t t = 3, h = 4, w = 4, hw = 16, c_k = 6, c_v = 3;
  CoarseReadInput in = random_input(t, h, w, c_k, c_v, 300);
  AffinityMatrix kernel(t * hw, hw);
  for (std::size_t i = 0; i < kernel.scores.size(); ++i) kernel.scores[i] = detail::unit3(9, i, 2);
  CoarseReadOutput base = kernel_guided_read(in, kernel);

  const std::size_t perm[3] = {1, 2, 0};
  CoarseReadInput pin = in;
  AffinityMatrix pkernel(t * hw, hw);
  for (std::size_t f = 0; f < t; ++f) {
    std::memcpy(pin.memory_keys.data() + f * hw * c_k, in.memory_keys.data() + perm[f] * hw * c_k,
                hw * c_k * sizeof(double));
    std::memcpy(pin.memory_values.data() + f * hw * c_v, in.memory_values.data() + perm[f] * hw * c_v,
                hw * c_v * sizeof(double));
    std::memcpy(pkernel.scores.data() + f * hw * hw, kernel.scores.data() + perm[f] * hw * hw,
                hw * hw * sizeof(double));
  }
  CHECK(max_abs_diff(kernel_guided_read(pin, pkernel).fused, base.fused) <= 1e-12);
}
