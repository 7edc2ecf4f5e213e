#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmt/coarse_matching.hpp"
#include "hmt/counters.hpp"
#include "hmt/fine_matching.hpp"
#include "hmt/oracle.hpp"
#include "hmt/synthetic.hpp"

// Complexity benchmark: dense read vs top-k guided sparse read over a grid
// of (h, w, t, k) configurations. Work is measured two ways: exact operation
// counters (deterministic, used for the scaling assertions) and median wall
// time over repeated runs (reported, never asserted on its own).
//
// The timed and counted region is the read itself. For dense mode that is
// the full dense read at h x w; for topk mode it is the sparse read over the
// 4k expanded candidates per pixel. Candidate selection runs on the coarse
// grid (h/2 x w/2) beforehand, outside the measured region, mirroring how
// the guidance is a byproduct of the coarse stage.

namespace hmt {

struct BenchAxes {
  std::vector<std::size_t> h;
  std::vector<std::size_t> w;  // empty: square grids, w = h
  std::vector<std::size_t> t{2};
  std::vector<std::size_t> k{32};
  std::vector<std::string> modes{"dense", "topk"};
};

struct BenchOptions {
  std::size_t key_channels = 16;
  std::size_t value_channels = 16;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::size_t h = 0, w = 0, t = 0, k = 0;
  std::string mode;
  double median_ms = 0.0;
  std::uint64_t mul_adds = 0;
  std::uint64_t gathers = 0;
  std::uint64_t working_set_bytes = 0;  // rough peak estimate for the read
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

namespace detail {

inline double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

inline BenchRow bench_one(std::size_t h, std::size_t w, std::size_t t, std::size_t k, const std::string& mode,
                          const BenchOptions& opts) {
  const std::size_t ck = opts.key_channels, cv = opts.value_channels;
  const std::uint64_t s = opts.seed ^ (h * 0x1000003ULL + w * 0x10001ULL + t * 257 + k);

  BenchRow row;
  row.h = h;
  row.w = w;
  row.t = t;
  row.k = k;
  row.mode = mode;

  std::vector<double> times_ms;
  OpCounters counters;

  if (mode == "dense") {
    if (t * h * w * h * w > kOracleSizeGuard) {
      throw std::invalid_argument("bench: dense config " + std::to_string(h) + "x" + std::to_string(w) + " t=" +
                                  std::to_string(t) + " exceeds the size guard");
    }
    CoarseReadInput in;
    in.memory_keys = random_tensor({t, h, w, ck}, s + 1);
    in.memory_values = random_tensor({t, h, w, cv}, s + 2);
    in.query_key = random_tensor({h, w, ck}, s + 3);
    in.query_value = random_tensor({h, w, cv}, s + 4);
    vanilla_read(in);  // untimed warmup
    for (std::size_t r = 0; r < opts.repeats; ++r) {
      OpCounters c;
      CountingScope scope(c);
      const auto t0 = std::chrono::steady_clock::now();
      CoarseReadOutput out = vanilla_read(in);
      const auto t1 = std::chrono::steady_clock::now();
      (void)out;
      times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      counters = c;
    }
    row.working_set_bytes = 2 * (t * h * w) * (h * w) * sizeof(double) + (2 * t + 2) * h * w * (ck + cv);
  } else if (mode == "topk") {
    if (h % 2 || w % 2) throw std::invalid_argument("bench: topk mode needs even h and w (coarse grid is h/2 x w/2)");
    const std::size_t hc = h / 2, wc = w / 2;
    if (k > t * hc * wc) {
      throw std::invalid_argument("bench: k=" + std::to_string(k) + " exceeds the " + std::to_string(t * hc * wc) +
                                  " coarse memory pixels");
    }
    CoarseReadInput coarse;
    coarse.memory_keys = random_tensor({t, hc, wc, ck}, s + 5);
    coarse.memory_values = random_tensor({t, hc, wc, cv}, s + 6);
    coarse.query_key = random_tensor({hc, wc, ck}, s + 7);
    coarse.query_value = random_tensor({hc, wc, cv}, s + 8);
    const CoarseReadOutput g = vanilla_read(coarse);
    TopKIndexSet selected = select_topk_candidates(g.guidance, k, FineScale::res3, hc, wc);
    IndexTensor candidates = expand_to_fine(selected, t, h, w);

    FineReadInput in;
    in.memory_keys = random_tensor({t, h, w, ck}, s + 9);
    in.memory_values = random_tensor({t, h, w, cv}, s + 10);
    in.query_key = random_tensor({h, w, ck}, s + 11);
    in.query_value = random_tensor({h, w, cv}, s + 12);
    sparse_read(in, candidates);  // untimed warmup
    for (std::size_t r = 0; r < opts.repeats; ++r) {
      OpCounters c;
      CountingScope scope(c);
      const auto t0 = std::chrono::steady_clock::now();
      NDTensor out = sparse_read(in, candidates);
      const auto t1 = std::chrono::steady_clock::now();
      (void)out;
      times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      counters = c;
    }
    row.working_set_bytes = h * w * 4 * k * sizeof(std::int64_t) + (2 * t + 2) * h * w * (ck + cv) * sizeof(double);
  } else {
    throw std::invalid_argument("bench: unknown mode '" + mode + "' (expected dense or topk)");
  }

  row.median_ms = detail::median_of(times_ms);
  row.mul_adds = counters.mul_adds;
  row.gathers = counters.gathers;

  // The counters must equal the closed forms; anything else means a kernel
  // stopped reporting its work.
  const std::uint64_t per_pixel = row.mul_adds / (h * w);
  if (mode == "dense") {
    if (per_pixel != t * h * w * (ck + cv) || row.mul_adds % (h * w) != 0) {
      throw std::logic_error("bench: dense mul-add count " + std::to_string(row.mul_adds) +
                             " does not match t*h*w*(ck+cv) per query pixel");
    }
  } else {
    if (per_pixel != 4 * k * (ck + cv) || row.mul_adds % (h * w) != 0) {
      throw std::logic_error("bench: topk mul-add count " + std::to_string(row.mul_adds) +
                             " does not match 4k*(ck+cv) per query pixel");
    }
  }
  return row;
}

/// Runs the cartesian product of the axes. Dense per-query-pixel counts are
/// linear in t*h*w; topk counts are constant in the grid size.
inline BenchReport run_benchmark(const BenchAxes& axes, const BenchOptions& opts = {}) {
  if (axes.h.empty()) throw std::invalid_argument("bench: no h values");
  if (!axes.w.empty() && axes.w.size() != axes.h.size()) {
    throw std::invalid_argument("bench: w axis must be empty or match h");
  }
  BenchReport report;
  for (std::size_t i = 0; i < axes.h.size(); ++i) {
    const std::size_t h = axes.h[i];
    const std::size_t w = axes.w.empty() ? h : axes.w[i];
    for (std::size_t t : axes.t)
      for (std::size_t k : axes.k)
        for (const std::string& mode : axes.modes) report.rows.push_back(bench_one(h, w, t, k, mode, opts));
  }
  return report;
}

/// CSV with the timing quarantined in median_ms; all other columns are
/// deterministic for a fixed seed and config.
inline std::string bench_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "h,w,t,k,mode,median_ms,mul_adds,gathers\n";
  for (const BenchRow& r : report.rows) {
    os << r.h << "," << r.w << "," << r.t << "," << r.k << "," << r.mode << "," << std::fixed << std::setprecision(3)
       << r.median_ms << "," << r.mul_adds << "," << r.gathers << "\n";
  }
  return os.str();
}

inline std::string bench_table(const BenchReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "h" << std::setw(6) << "w" << std::setw(4) << "t" << std::setw(5) << "k"
     << std::setw(7) << "mode" << std::right << std::setw(12) << "median_ms" << std::setw(16) << "mul_adds"
     << std::setw(14) << "gathers" << std::setw(16) << "workset_bytes" << "\n";
  for (const BenchRow& r : report.rows) {
    os << std::left << std::setw(6) << r.h << std::setw(6) << r.w << std::setw(4) << r.t << std::setw(5) << r.k
       << std::setw(7) << r.mode << std::right << std::setw(12) << std::fixed << std::setprecision(3) << r.median_ms
       << std::setw(16) << r.mul_adds << std::setw(14) << r.gathers << std::setw(16) << r.working_set_bytes << "\n";
  }
  return os.str();
}

}  // namespace hmt
