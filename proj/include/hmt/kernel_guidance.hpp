#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hmt/affinity.hpp"
#include "hmt/tensor.hpp"

// Builds the kernel map used by the kernel-guided coarse read. Every memory
// pixel is tracked to its best-matching query position by chaining per-frame
// local-window argmax hops; a 2D Gaussian centered at the tracked endpoint,
// with a standard deviation that relaxes with temporal distance, scores each
// query pixel.

namespace hmt {

struct Coord {
  int y = 0;
  int x = 0;
  bool operator==(const Coord&) const = default;
};

/// Row-major grid of coordinates; maps every pixel of one frame to a pixel
/// of another frame.
struct CoordGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<Coord> pts;

  CoordGrid() = default;
  CoordGrid(std::size_t height, std::size_t width) : h(height), w(width), pts(height * width) {}

  Coord& at(std::size_t y, std::size_t x) { return pts[y * w + x]; }
  const Coord& at(std::size_t y, std::size_t x) const { return pts[y * w + x]; }
  bool operator==(const CoordGrid&) const = default;
};

inline CoordGrid identity_grid(std::size_t h, std::size_t w) {
  CoordGrid g(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) g.at(y, x) = {static_cast<int>(y), static_cast<int>(x)};
  return g;
}

struct KernelParams {
  int window_size = 7;        // odd, >= 1
  double sigma_init = 3.0;    // kernel stddev for the immediately previous frame
  double sigma_factor = 0.5;  // stddev growth per additional hop of temporal distance

  void validate() const {
    if (window_size < 1 || window_size % 2 == 0) {
      throw std::invalid_argument("window_size must be odd and >= 1, got " + std::to_string(window_size));
    }
    if (!(sigma_init > 0.0)) throw std::invalid_argument("sigma_init must be > 0");
    if (sigma_factor < 0.0) throw std::invalid_argument("sigma_factor must be >= 0");
  }
};

/// Chained memory-to-query correspondence. Nodes are the tracked frames in
/// time order; the last node is the query of the most recent build. For node
/// i, hops[i] maps it to node i+1 and endpoints[i] maps it all the way to the
/// last node (endpoints.back() is the identity). Hops are keyed by frame
/// timestamp so a later build reuses every hop whose frame pair is still
/// adjacent in the retained list and recomputes only the rest.
struct TrackTable {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int64_t> times;   // strictly increasing
  std::vector<CoordGrid> hops;       // size == times.size() - 1
  std::vector<CoordGrid> endpoints;  // size == times.size()

  std::size_t fresh_hops = 0;  // hops computed (not reused) by the last build

  std::size_t node_count() const { return times.size(); }
  bool empty() const { return times.empty(); }
};

/// Single-node table: the starting point for incremental chaining.
inline TrackTable make_track_root(std::size_t h, std::size_t w, std::int64_t time) {
  TrackTable t;
  t.height = h;
  t.width = w;
  t.times = {time};
  t.endpoints = {identity_grid(h, w)};
  return t;
}

/// For each source pixel, the destination pixel with the highest key
/// dot-product inside the window_size x window_size window centered at the
/// source position. Windows are clipped at frame borders; ties resolve to the
/// row-major smallest destination coordinate.
inline CoordGrid local_track_hop(const NDTensor& key_src, const NDTensor& key_dst, int window_size) {
  if (key_src.rank() != 3 || key_dst.rank() != 3) {
    throw std::invalid_argument("local_track_hop: keys must be [H,W,c]");
  }
  if (key_src.shape() != key_dst.shape()) {
    throw std::invalid_argument("local_track_hop: shape mismatch: " + shape_string(key_src.shape()) + " vs " +
                                shape_string(key_dst.shape()));
  }
  if (window_size < 1 || window_size % 2 == 0) {
    throw std::invalid_argument("local_track_hop: window_size must be odd and >= 1");
  }
  const int h = static_cast<int>(key_src.dim(0));
  const int w = static_cast<int>(key_src.dim(1));
  const std::size_t c = key_src.dim(2);
  const int r = window_size / 2;
  const double* src = key_src.data();
  const double* dst = key_dst.data();

  CoordGrid out(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* sk = src + (static_cast<std::size_t>(y) * w + x) * c;
      const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      double best = -std::numeric_limits<double>::infinity();
      Coord best_at{y0, x0};
      for (int dy = y0; dy <= y1; ++dy) {
        for (int dx = x0; dx <= x1; ++dx) {
          const double* dk = dst + (static_cast<std::size_t>(dy) * w + dx) * c;
          double score = 0.0;
          for (std::size_t i = 0; i < c; ++i) score += sk[i] * dk[i];
          if (score > best) {
            best = score;
            best_at = {dy, dx};
          }
        }
      }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = best_at;
    }
  }
  return out;
}

namespace detail {

inline void check_grid_dims(const TrackTable& table, const CoordGrid& grid, const char* what) {
  if (grid.h != table.height || grid.w != table.width) {
    throw std::invalid_argument(std::string(what) + ": grid is " + std::to_string(grid.h) + "x" +
                                std::to_string(grid.w) + " but table tracks " + std::to_string(table.height) + "x" +
                                std::to_string(table.width));
  }
}

inline void check_in_bounds(const CoordGrid& grid, std::size_t h, std::size_t w, const char* what) {
  for (const Coord& p : grid.pts) {
    if (p.y < 0 || p.x < 0 || static_cast<std::size_t>(p.y) >= h || static_cast<std::size_t>(p.x) >= w) {
      throw std::invalid_argument(std::string(what) + ": coordinate (" + std::to_string(p.y) + "," +
                                  std::to_string(p.x) + ") outside " + std::to_string(h) + "x" + std::to_string(w));
    }
  }
}

// Pointwise composition: out[p] = then(first(p)).
inline CoordGrid advance_through(const CoordGrid& first, const CoordGrid& then) {
  CoordGrid out(first.h, first.w);
  for (std::size_t i = 0; i < first.pts.size(); ++i) {
    const Coord& e = first.pts[i];
    out.pts[i] = then.at(static_cast<std::size_t>(e.y), static_cast<std::size_t>(e.x));
  }
  return out;
}

}  // namespace detail

/// Extends the chain by one hop from the current last node to a new node.
/// Every stored endpoint is advanced through the hop; the incremental result
/// is identical to recomposing all hops from scratch.
inline TrackTable chain_tracks(TrackTable table, CoordGrid new_hop, std::int64_t new_time) {
  if (table.empty()) throw std::invalid_argument("chain_tracks: table has no frames");
  detail::check_grid_dims(table, new_hop, "chain_tracks");
  detail::check_in_bounds(new_hop, table.height, table.width, "chain_tracks");
  if (new_time <= table.times.back()) {
    throw std::invalid_argument("chain_tracks: new frame time " + std::to_string(new_time) +
                                " is not after " + std::to_string(table.times.back()));
  }
  for (CoordGrid& e : table.endpoints) e = detail::advance_through(e, new_hop);
  table.hops.push_back(std::move(new_hop));
  table.endpoints.push_back(identity_grid(table.height, table.width));
  table.times.push_back(new_time);
  return table;
}

/// Gaussian kernel map over the query grid for the selected memory nodes
/// (all nodes but the last when memory_nodes is empty). For node i the
/// temporal distance counts hops to the last node minus one, so the
/// immediately previous frame uses sigma_init; each kernel is unnormalized
/// with peak exactly 1 at the tracked endpoint.
inline AffinityMatrix gaussian_kernel_map(const TrackTable& table, const KernelParams& params, std::size_t query_h,
                                          std::size_t query_w, std::span<const std::size_t> memory_nodes = {}) {
  params.validate();
  if (table.node_count() < 2) {
    throw std::invalid_argument("gaussian_kernel_map: table needs at least one memory frame and the query");
  }
  std::vector<std::size_t> nodes(memory_nodes.begin(), memory_nodes.end());
  if (nodes.empty()) {
    for (std::size_t i = 0; i + 1 < table.node_count(); ++i) nodes.push_back(i);
  }
  const std::size_t last = table.node_count() - 1;
  const std::size_t hw = table.height * table.width;
  AffinityMatrix map(nodes.size() * hw, query_h * query_w);
  for (std::size_t ni = 0; ni < nodes.size(); ++ni) {
    const std::size_t node = nodes[ni];
    if (node >= last) {
      throw std::invalid_argument("gaussian_kernel_map: node " + std::to_string(node) + " is not a memory frame");
    }
    const std::size_t hops_to_query = last - node;
    const double sigma = params.sigma_init + static_cast<double>(hops_to_query - 1) * params.sigma_factor;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const CoordGrid& end = table.endpoints[node];
    detail::check_in_bounds(end, query_h, query_w, "gaussian_kernel_map");
    for (std::size_t p = 0; p < hw; ++p) {
      const Coord e = end.pts[p];
      const std::size_t row = ni * hw + p;
      for (std::size_t qy = 0; qy < query_h; ++qy) {
        const double dy = static_cast<double>(qy) - static_cast<double>(e.y);
        for (std::size_t qx = 0; qx < query_w; ++qx) {
          const double dx = static_cast<double>(qx) - static_cast<double>(e.x);
          map.at(row, qy * query_w + qx) = std::exp(-(dy * dy + dx * dx) * inv);
        }
      }
    }
  }
  return map;
}

/// Tracks across the retained memory frames (in time order) and the query,
/// then emits the Gaussian kernel map. With a cache from the previous query,
/// every hop whose frame pair is still adjacent in the retained list is
/// reused; typically only the previous-frame-to-query hop is new, plus one
/// bridging hop when an eviction removed a middle frame. fresh_hops on the
/// returned table reports how many hops were actually computed.
inline std::pair<AffinityMatrix, TrackTable> build_kernel_guidance(std::span<const NDTensor* const> bank_keys,
                                                                   std::span<const std::int64_t> bank_times,
                                                                   const NDTensor& query_key, std::int64_t query_time,
                                                                   const KernelParams& params,
                                                                   const TrackTable* cache = nullptr) {
  params.validate();
  if (bank_keys.empty()) throw std::invalid_argument("build_kernel_guidance: no memory frames");
  if (bank_keys.size() != bank_times.size()) {
    throw std::invalid_argument("build_kernel_guidance: " + std::to_string(bank_keys.size()) + " key maps vs " +
                                std::to_string(bank_times.size()) + " timestamps");
  }
  if (query_key.rank() != 3) throw std::invalid_argument("build_kernel_guidance: query key must be [H,W,c]");
  const std::size_t h = query_key.dim(0), w = query_key.dim(1);
  for (std::size_t i = 0; i < bank_keys.size(); ++i) {
    if (bank_keys[i]->shape() != query_key.shape()) {
      throw std::invalid_argument("build_kernel_guidance: frame " + std::to_string(i) + " key shape " +
                                  shape_string(bank_keys[i]->shape()) + " differs from query " +
                                  shape_string(query_key.shape()));
    }
    if (i > 0 && bank_times[i] <= bank_times[i - 1]) {
      throw std::invalid_argument("build_kernel_guidance: memory frames not time-ordered");
    }
  }
  if (query_time <= bank_times.back()) {
    throw std::invalid_argument("build_kernel_guidance: query time " + std::to_string(query_time) +
                                " is not after the last memory frame");
  }
  if (cache && !cache->empty() && (cache->height != h || cache->width != w)) {
    throw std::invalid_argument("build_kernel_guidance: track cache is inconsistent with the memory bank (" +
                                std::to_string(cache->height) + "x" + std::to_string(cache->width) + " vs " +
                                std::to_string(h) + "x" + std::to_string(w) + ")");
  }

  const std::size_t n = bank_keys.size();
  TrackTable table;
  table.height = h;
  table.width = w;
  table.times.assign(bank_times.begin(), bank_times.end());
  table.times.push_back(query_time);
  table.hops.resize(n);
  table.fresh_hops = 0;

  auto key_at = [&](std::size_t node) -> const NDTensor& { return node < n ? *bank_keys[node] : query_key; };

  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t ta = table.times[i], tb = table.times[i + 1];
    const CoordGrid* reused = nullptr;
    if (cache) {
      for (std::size_t j = 0; j + 1 < cache->times.size(); ++j) {
        if (cache->times[j] == ta && cache->times[j + 1] == tb) {
          reused = &cache->hops[j];
          break;
        }
      }
    }
    if (reused) {
      table.hops[i] = *reused;
    } else {
      table.hops[i] = local_track_hop(key_at(i), key_at(i + 1), params.window_size);
      ++table.fresh_hops;
    }
  }

  table.endpoints.assign(n + 1, CoordGrid{});
  table.endpoints[n] = identity_grid(h, w);
  for (std::size_t i = n; i-- > 0;) {
    table.endpoints[i] = detail::advance_through(table.hops[i], table.endpoints[i + 1]);
  }

  AffinityMatrix map = gaussian_kernel_map(table, params, h, w);
  return {std::move(map), std::move(table)};
}

inline std::pair<AffinityMatrix, TrackTable> build_kernel_guidance(std::span<const NDTensor> bank_keys,
                                                                   std::span<const std::int64_t> bank_times,
                                                                   const NDTensor& query_key, std::int64_t query_time,
                                                                   const KernelParams& params,
                                                                   const TrackTable* cache = nullptr) {
  std::vector<const NDTensor*> ptrs;
  ptrs.reserve(bank_keys.size());
  for (const NDTensor& t : bank_keys) ptrs.push_back(&t);
  return build_kernel_guidance(std::span<const NDTensor* const>(ptrs.data(), ptrs.size()), bank_times, query_key,
                               query_time, params, cache);
}

}  // namespace hmt
