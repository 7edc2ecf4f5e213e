#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmt/kernel_guidance.hpp"
#include "hmt/memory_pipeline.hpp"
#include "hmt/synthetic.hpp"

// Pipeline configuration: a line-based "key = value" file with '#' comments.
// Unknown and duplicate keys are errors. The full key list with defaults is
// in PipelineConfig below and documented in the README.

namespace hmt {

struct PipelineConfig {
  std::size_t k = 32;                // top-k budget at res3; res2 uses k/4
  int window_size = 7;               // local tracking window, odd
  double sigma_init = 3.0;           // kernel stddev at the previous frame
  double sigma_factor = 0.5;         // stddev growth per hop of temporal distance
  std::size_t retention_n = 5;       // coarse every-N retention grid
  bool fine_every_n = false;         // fine_policy: first_prev (false) | every_n (true)
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> key_channels{16, 16, 8};    // res4, res3, res2
  std::array<std::size_t, 3> value_channels{16, 16, 8};  // res4, res3, res2
  bool kernel_ones = false;   // kernel_mode: gaussian (false) | ones (true)
  bool dense_track = false;   // track_mode: retained (false) | dense (true)
  bool random_fusion = false; // fusion: identity (false) | random (true)

  std::size_t scene_height = 8;
  std::size_t scene_width = 8;
  std::size_t scene_frames = 6;
  double scene_key_scale = 4.0;
  double scene_key_noise = 1e-3;
  std::vector<ObjectSpec> scene_objects;

  KernelParams kernel_params() const { return KernelParams{window_size, sigma_init, sigma_factor}; }

  RetentionPolicy retention_policy() const { return RetentionPolicy{retention_n, fine_every_n}; }

  SyntheticScene scene() const {
    SyntheticScene s;
    s.coarse_h = scene_height;
    s.coarse_w = scene_width;
    s.frame_count = scene_frames;
    s.objects = scene_objects;
    s.seed = seed;
    s.key_scale = scene_key_scale;
    s.key_noise = scene_key_noise;
    s.value_channels = value_channels[0];
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& value, const std::string& key) {
  std::istringstream is(value);
  T out;
  is >> out;
  if (!is || !(is >> std::ws).eof()) {
    throw std::runtime_error("config: bad value '" + value + "' for key '" + key + "'");
  }
  return out;
}

inline std::array<std::size_t, 3> parse_triple(const std::string& value, const std::string& key) {
  std::istringstream is(value);
  std::array<std::size_t, 3> out{};
  for (auto& v : out) {
    if (!(is >> v)) throw std::runtime_error("config: key '" + key + "' needs 3 values (res4 res3 res2)");
  }
  if (!(is >> std::ws).eof()) throw std::runtime_error("config: key '" + key + "' needs exactly 3 values");
  return out;
}

inline ObjectSpec parse_object(const std::string& entry) {
  std::istringstream is(entry);
  ObjectSpec o;
  std::string signature;
  if (!(is >> o.y0 >> o.x0 >> o.height >> o.width >> o.dy >> o.dx >> signature)) {
    throw std::runtime_error("config: object entry '" + entry + "' must be 'y x h w dy dx unique|twin:<id>'");
  }
  if (!(is >> std::ws).eof()) throw std::runtime_error("config: trailing tokens in object entry '" + entry + "'");
  if (signature == "unique") {
    o.twin_group = -1;
  } else if (signature.rfind("twin:", 0) == 0) {
    o.twin_group = parse_number<int>(signature.substr(5), "scene_objects twin id");
    if (o.twin_group < 0) throw std::runtime_error("config: twin id must be >= 0");
  } else {
    throw std::runtime_error("config: unknown key signature '" + signature + "'");
  }
  return o;
}

}  // namespace detail

inline PipelineConfig parse_config(std::istream& is) {
  PipelineConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }

    if (key == "k") {
      cfg.k = detail::parse_number<std::size_t>(value, key);
    } else if (key == "window_size") {
      cfg.window_size = detail::parse_number<int>(value, key);
    } else if (key == "sigma_init") {
      cfg.sigma_init = detail::parse_number<double>(value, key);
    } else if (key == "sigma_factor") {
      cfg.sigma_factor = detail::parse_number<double>(value, key);
    } else if (key == "retention_n") {
      cfg.retention_n = detail::parse_number<std::size_t>(value, key);
    } else if (key == "fine_policy") {
      if (value == "first_prev") cfg.fine_every_n = false;
      else if (value == "every_n") cfg.fine_every_n = true;
      else throw std::runtime_error("config: fine_policy must be 'first_prev' or 'every_n', got '" + value + "'");
    } else if (key == "dropout_rate") {
      cfg.dropout_rate = detail::parse_number<double>(value, key);
      if (cfg.dropout_rate < 0.0 || cfg.dropout_rate > 1.0) {
        throw std::runtime_error("config: dropout_rate must be in [0,1]");
      }
    } else if (key == "seed") {
      cfg.seed = detail::parse_number<std::uint64_t>(value, key);
    } else if (key == "key_channels") {
      cfg.key_channels = detail::parse_triple(value, key);
    } else if (key == "value_channels") {
      cfg.value_channels = detail::parse_triple(value, key);
    } else if (key == "kernel_mode") {
      if (value == "gaussian") cfg.kernel_ones = false;
      else if (value == "ones") cfg.kernel_ones = true;
      else throw std::runtime_error("config: kernel_mode must be 'gaussian' or 'ones', got '" + value + "'");
    } else if (key == "track_mode") {
      if (value == "retained") cfg.dense_track = false;
      else if (value == "dense") cfg.dense_track = true;
      else throw std::runtime_error("config: track_mode must be 'retained' or 'dense', got '" + value + "'");
    } else if (key == "fusion") {
      if (value == "identity") cfg.random_fusion = false;
      else if (value == "random") cfg.random_fusion = true;
      else throw std::runtime_error("config: fusion must be 'identity' or 'random', got '" + value + "'");
    } else if (key == "scene_height") {
      cfg.scene_height = detail::parse_number<std::size_t>(value, key);
    } else if (key == "scene_width") {
      cfg.scene_width = detail::parse_number<std::size_t>(value, key);
    } else if (key == "scene_frames") {
      cfg.scene_frames = detail::parse_number<std::size_t>(value, key);
    } else if (key == "scene_key_scale") {
      cfg.scene_key_scale = detail::parse_number<double>(value, key);
    } else if (key == "scene_key_noise") {
      cfg.scene_key_noise = detail::parse_number<double>(value, key);
    } else if (key == "scene_objects") {
      std::size_t start = 0;
      while (start <= value.size()) {
        const auto sep = value.find(';', start);
        const std::string entry = detail::trim(value.substr(start, sep == std::string::npos ? sep : sep - start));
        if (!entry.empty()) cfg.scene_objects.push_back(detail::parse_object(entry));
        if (sep == std::string::npos) break;
        start = sep + 1;
      }
    } else {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline PipelineConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  return parse_config(is);
}

}  // namespace hmt
