#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmt/kernel_guidance.hpp"
#include "hmt/memory_pipeline.hpp"
#include "hmt/tensor.hpp"

// Synthetic multi-scale sequences with exact ground-truth correspondence.
// Keys are scaled one-hot-like vectors with per-identity seeded noise of
// magnitude <= 1e-3 so every argmax is strict and tracking ground truth is
// exact integer arithmetic. A background pixel keys on its row and column
// channels; an object patch cell keys on its own channel, shared bitwise
// between objects of the same twin group (the duplicated-distractor case).
// Fine-scale keys extend the parent's channels with a subpixel channel, so
// block-downscaling a fine key map recovers the coarse signature.

namespace hmt {

struct ObjectSpec {
  int y0 = 0;     // top-left corner at the first frame, coarse grid
  int x0 = 0;
  int height = 1; // patch dims, coarse pixels
  int width = 1;
  int dy = 0;     // per-frame motion, coarse pixels
  int dx = 0;
  int twin_group = -1;  // objects sharing a group >= 0 share key maps bitwise

  bool operator==(const ObjectSpec&) const = default;
};

struct SyntheticScene {
  std::size_t coarse_h = 8;
  std::size_t coarse_w = 8;
  std::size_t frame_count = 4;
  std::vector<ObjectSpec> objects;
  std::uint64_t seed = 0;
  double key_scale = 4.0;          // one-hot magnitude; larger means peakier softmax
  double key_noise = 1e-3;
  std::size_t value_channels = 8;
  bool fine_scales = true;         // generate res3/res2 maps (res4 is always generated)
};

struct SceneData {
  std::size_t coarse_h = 0;
  std::size_t coarse_w = 0;
  std::vector<MultiScaleFrame> frames;  // times 1..frame_count

  // Per frame: coarse owner grid (row-major), -1 for background else object index.
  std::vector<std::vector<int>> owner;

  // Per frame: ground-truth coarse endpoint of every pixel in the last frame
  // (cumulative motion for object pixels, identity for background), and a
  // validity flag: the pixel's key is visible along its whole trajectory up
  // to the last frame.
  std::vector<CoordGrid> gt_endpoints;
  std::vector<std::vector<std::uint8_t>> gt_valid;
};

namespace detail {

inline std::uint64_t mix3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b * 0xC2B2AE3D27D4EB4FULL + c + 0x165667B19E3779F9ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double unit3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return static_cast<double>(mix3(a, b, c) >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Deterministic tensor of uniform values in [lo, hi); hash-based so the
/// content depends only on (shape, seed), not on generation order.
inline NDTensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  NDTensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * detail::unit3(seed, i, 0x7A5E);
  return t;
}

inline SceneData generate_scene(const SyntheticScene& spec) {
  const int h = static_cast<int>(spec.coarse_h);
  const int w = static_cast<int>(spec.coarse_w);
  const std::size_t n = spec.frame_count;
  if (h < 1 || w < 1 || n < 2) throw std::invalid_argument("generate_scene: need a grid and at least 2 frames");

  // Key-group map: unique objects own a group each; twins share one.
  std::vector<std::size_t> group_of(spec.objects.size());
  std::vector<std::size_t> group_cells;  // cells per group
  {
    std::vector<int> twin_to_group;
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      const ObjectSpec& obj = spec.objects[o];
      if (obj.height < 1 || obj.width < 1) throw std::invalid_argument("generate_scene: empty object patch");
      if (obj.twin_group >= 0) {
        if (static_cast<std::size_t>(obj.twin_group) >= twin_to_group.size()) {
          twin_to_group.resize(obj.twin_group + 1, -1);
        }
        if (twin_to_group[obj.twin_group] < 0) {
          twin_to_group[obj.twin_group] = static_cast<int>(group_cells.size());
          group_cells.push_back(static_cast<std::size_t>(obj.height) * obj.width);
        }
        group_of[o] = static_cast<std::size_t>(twin_to_group[obj.twin_group]);
        if (group_cells[group_of[o]] != static_cast<std::size_t>(obj.height) * obj.width) {
          throw std::invalid_argument("generate_scene: twin objects must share patch dims");
        }
      } else {
        group_of[o] = group_cells.size();
        group_cells.push_back(static_cast<std::size_t>(obj.height) * obj.width);
      }
    }
    // A twin group with a single member is a misconfigured scene, not a distractor.
    for (int g : twin_to_group) {
      if (g >= 0) {
        std::size_t members = 0;
        for (std::size_t o = 0; o < spec.objects.size(); ++o) {
          if (spec.objects[o].twin_group >= 0 && twin_to_group[spec.objects[o].twin_group] == g) ++members;
        }
        if (members < 2) throw std::invalid_argument("generate_scene: twin group needs at least 2 objects");
      }
    }
  }
  std::vector<std::size_t> group_offset(group_cells.size());
  std::size_t total_cells = 0;
  for (std::size_t g = 0; g < group_cells.size(); ++g) {
    group_offset[g] = total_cells;
    total_cells += group_cells[g];
  }

  const std::size_t bg_channels = static_cast<std::size_t>(h) + static_cast<std::size_t>(w);
  const std::size_t c4 = bg_channels + total_cells;

  // Bounds check over the whole motion range.
  for (const ObjectSpec& obj : spec.objects) {
    for (std::size_t t = 0; t < n; ++t) {
      const int y = obj.y0 + static_cast<int>(t) * obj.dy;
      const int x = obj.x0 + static_cast<int>(t) * obj.dx;
      if (y < 0 || x < 0 || y + obj.height > h || x + obj.width > w) {
        throw std::invalid_argument("generate_scene: object leaves the grid at frame " + std::to_string(t + 1));
      }
    }
  }

  SceneData out;
  out.coarse_h = spec.coarse_h;
  out.coarse_w = spec.coarse_w;

  // Owner grids: objects drawn in spec order, later objects overdraw.
  out.owner.assign(n, std::vector<int>(spec.coarse_h * spec.coarse_w, -1));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      const ObjectSpec& obj = spec.objects[o];
      const int y0 = obj.y0 + static_cast<int>(t) * obj.dy;
      const int x0 = obj.x0 + static_cast<int>(t) * obj.dx;
      for (int yy = 0; yy < obj.height; ++yy)
        for (int xx = 0; xx < obj.width; ++xx)
          out.owner[t][static_cast<std::size_t>(y0 + yy) * w + (x0 + xx)] = static_cast<int>(o);
    }
  }

  // Stable identity ids for hash streams: background pixel id, then cells.
  const std::size_t bg_ids = spec.coarse_h * spec.coarse_w;
  auto identity_at = [&](std::size_t t, int y, int x) -> std::size_t {
    const int o = out.owner[t][static_cast<std::size_t>(y) * w + x];
    if (o < 0) return static_cast<std::size_t>(y) * w + x;
    const ObjectSpec& obj = spec.objects[static_cast<std::size_t>(o)];
    const int cy = y - (obj.y0 + static_cast<int>(t) * obj.dy);
    const int cx = x - (obj.x0 + static_cast<int>(t) * obj.dx);
    return bg_ids + group_offset[group_of[static_cast<std::size_t>(o)]] + static_cast<std::size_t>(cy) * obj.width +
           cx;
  };
  auto base_channel = [&](std::size_t t, int y, int x, int& second) -> std::size_t {
    const int o = out.owner[t][static_cast<std::size_t>(y) * w + x];
    if (o < 0) {
      second = h + x;  // column channel; first is the row channel
      return static_cast<std::size_t>(y);
    }
    second = -1;
    const std::size_t id = identity_at(t, y, x);
    return bg_channels + (id - bg_ids);
  };

  auto make_key = [&](std::size_t t, int y, int x, std::size_t channels, int sub, std::size_t sub_base,
                      std::uint64_t salt) {
    std::vector<double> key(channels, 0.0);
    int second = -1;
    const std::size_t base = base_channel(t, y, x, second);
    key[base] = 1.0;
    if (second >= 0) key[static_cast<std::size_t>(second)] = 1.0;
    if (sub >= 0) key[sub_base + static_cast<std::size_t>(sub)] = 1.0;
    const std::uint64_t id = identity_at(t, y, x) * 64 + static_cast<std::uint64_t>(sub + 1) + salt;
    for (std::size_t i = 0; i < channels; ++i) {
      key[i] = spec.key_scale * (key[i] + spec.key_noise * detail::unit3(spec.seed, id, i));
    }
    return key;
  };
  auto make_value = [&](std::size_t t, int y, int x, int sub, std::uint64_t salt) {
    std::vector<double> value(spec.value_channels);
    const std::uint64_t id = identity_at(t, y, x) * 64 + static_cast<std::uint64_t>(sub + 1) + salt;
    for (std::size_t i = 0; i < spec.value_channels; ++i) value[i] = detail::unit3(spec.seed ^ 0xABCD, id, i);
    return value;
  };

  auto build_scale = [&](std::size_t t, std::size_t e, std::uint64_t salt) {
    const std::size_t fh = spec.coarse_h * e, fw = spec.coarse_w * e;
    const std::size_t subs = e * e;
    const std::size_t channels = c4 + (e == 1 ? 0 : subs);
    FrameFeatures f;
    f.key = NDTensor({fh, fw, channels});
    f.value = NDTensor({fh, fw, spec.value_channels});
    for (std::size_t fy = 0; fy < fh; ++fy) {
      for (std::size_t fx = 0; fx < fw; ++fx) {
        const int py = static_cast<int>(fy / e), px = static_cast<int>(fx / e);
        const int sub = e == 1 ? -1 : static_cast<int>((fy % e) * e + (fx % e));
        const auto key = make_key(t, py, px, channels, sub, c4, salt);
        const auto value = make_value(t, py, px, sub, salt);
        std::copy(key.begin(), key.end(), f.key.data() + (fy * fw + fx) * channels);
        std::copy(value.begin(), value.end(), f.value.data() + (fy * fw + fx) * spec.value_channels);
      }
    }
    return f;
  };

  out.frames.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    MultiScaleFrame& frame = out.frames[t];
    frame.time = static_cast<std::int64_t>(t + 1);
    frame.res4 = build_scale(t, 1, 0x1000000);
    if (spec.fine_scales) {
      frame.res3 = build_scale(t, 2, 0x2000000);
      frame.res2 = build_scale(t, 4, 0x3000000);
    }
  }

  // Ground truth: object pixels move with their patch, background stays.
  out.gt_endpoints.assign(n, CoordGrid(spec.coarse_h, spec.coarse_w));
  out.gt_valid.assign(n, std::vector<std::uint8_t>(spec.coarse_h * spec.coarse_w, 0));
  for (std::size_t t = 0; t < n; ++t) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int o = out.owner[t][static_cast<std::size_t>(y) * w + x];
        Coord end{y, x};
        bool valid = true;
        if (o < 0) {
          for (std::size_t tau = t + 1; tau < n && valid; ++tau) {
            valid = out.owner[tau][static_cast<std::size_t>(y) * w + x] < 0;
          }
        } else {
          const ObjectSpec& obj = spec.objects[static_cast<std::size_t>(o)];
          end = {y + static_cast<int>(n - 1 - t) * obj.dy, x + static_cast<int>(n - 1 - t) * obj.dx};
          for (std::size_t tau = t + 1; tau < n && valid; ++tau) {
            const int yy = y + static_cast<int>(tau - t) * obj.dy;
            const int xx = x + static_cast<int>(tau - t) * obj.dx;
            valid = out.owner[tau][static_cast<std::size_t>(yy) * w + xx] == o;
          }
        }
        out.gt_endpoints[t].at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = end;
        out.gt_valid[t][static_cast<std::size_t>(y) * w + x] = valid ? 1 : 0;
      }
    }
  }
  return out;
}

}  // namespace hmt
