#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hmt/bench.hpp"
#include "hmt/config.hpp"
#include "hmt/memory_pipeline.hpp"
#include "hmt/synthetic.hpp"
#include "hmt/tensor_io.hpp"
#include "hmt/verify.hpp"

// Command-line entry points:
//   read    run the hierarchical read over a scene or HMT1 inputs
//   bench   dense vs top-k complexity benchmark (CSV + table)
//   verify  run the invariant suites, nonzero exit on failure
//   gen     write a synthetic scene to disk
// Exit codes: 0 success, 1 verification/run failure, 2 bad flags or config.

namespace hmt {

namespace cli_detail {

inline std::string frame_file(std::size_t index, const char* scale, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%03zu.%s.%s.hmt1", index, scale, kind);
  return buf;
}

inline void write_scene(const SceneData& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t f = 0; f < scene.frames.size(); ++f) {
    const MultiScaleFrame& frame = scene.frames[f];
    const std::size_t index = f + 1;
    save_hmt1((dir / frame_file(index, "res4", "key")).string(), frame.res4.key);
    save_hmt1((dir / frame_file(index, "res4", "value")).string(), frame.res4.value);
    if (!frame.res3.key.empty()) {
      save_hmt1((dir / frame_file(index, "res3", "key")).string(), frame.res3.key);
      save_hmt1((dir / frame_file(index, "res3", "value")).string(), frame.res3.value);
      save_hmt1((dir / frame_file(index, "res2", "key")).string(), frame.res2.key);
      save_hmt1((dir / frame_file(index, "res2", "value")).string(), frame.res2.value);
    }
  }
  const std::size_t n = scene.frames.size(), h = scene.coarse_h, w = scene.coarse_w;
  IndexTensor endpoints({n, h, w, 2});
  IndexTensor valid({n, h, w});
  IndexTensor owner({n, h, w});
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t p = 0; p < h * w; ++p) {
      endpoints[(f * h * w + p) * 2] = scene.gt_endpoints[f].pts[p].y;
      endpoints[(f * h * w + p) * 2 + 1] = scene.gt_endpoints[f].pts[p].x;
      valid[f * h * w + p] = scene.gt_valid[f][p];
      owner[f * h * w + p] = scene.owner[f][p];
    }
  }
  save_hmi1((dir / "gt_endpoints.hmi1").string(), endpoints);
  save_hmi1((dir / "gt_valid.hmi1").string(), valid);
  save_hmi1((dir / "owner.hmi1").string(), owner);
}

/// Loads frame_NNN.*.hmt1 sequences written by `gen` (or by hand). Frame
/// numbers start at 1 and must be contiguous; they double as timestamps.
inline std::vector<MultiScaleFrame> load_frames(const std::filesystem::path& dir) {
  std::vector<MultiScaleFrame> frames;
  for (std::size_t index = 1;; ++index) {
    const auto key4 = dir / frame_file(index, "res4", "key");
    if (!std::filesystem::exists(key4)) break;
    MultiScaleFrame frame;
    frame.time = static_cast<std::int64_t>(index);
    frame.res4.key = load_hmt1(key4.string());
    frame.res4.value = load_hmt1((dir / frame_file(index, "res4", "value")).string());
    const auto key3 = dir / frame_file(index, "res3", "key");
    if (std::filesystem::exists(key3)) {
      frame.res3.key = load_hmt1(key3.string());
      frame.res3.value = load_hmt1((dir / frame_file(index, "res3", "value")).string());
      frame.res2.key = load_hmt1((dir / frame_file(index, "res2", "key")).string());
      frame.res2.value = load_hmt1((dir / frame_file(index, "res2", "value")).string());
    }
    frames.push_back(std::move(frame));
  }
  if (frames.size() < 2) {
    throw std::runtime_error("need at least 2 frames (frame_001...) under " + dir.string());
  }
  return frames;
}

inline double column_sum_max_dev(const AffinityMatrix& g) {
  double worst = 0.0;
  for (std::size_t q = 0; q < g.query_size(); ++q) {
    double sum = 0.0;
    for (std::size_t m = 0; m < g.memory_size(); ++m) sum += g.at(m, q);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

inline double l2_norm(const NDTensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

inline ReadOptions make_read_options(const PipelineConfig& cfg, const std::vector<MultiScaleFrame>& frames) {
  ReadOptions opts;
  opts.kernel = cfg.kernel_params();
  opts.k = cfg.k;
  opts.kernel_ones = cfg.kernel_ones;
  opts.dropout_rate = cfg.dropout_rate;
  opts.seed = cfg.seed;
  if (cfg.random_fusion) {
    const std::size_t cv3 = frames.front().res3.value.shape().back();
    const std::size_t cv2 = frames.front().res2.value.shape().back();
    const double s3 = 1.0 / static_cast<double>(cv3), s2 = 1.0 / static_cast<double>(cv2);
    opts.fusion3 = {random_tensor({cv3, cv3}, cfg.seed ^ 0xF3, -s3, s3), random_tensor({cv3}, cfg.seed ^ 0xB3, -s3, s3)};
    opts.fusion2 = {random_tensor({cv2, cv2}, cfg.seed ^ 0xF2, -s2, s2), random_tensor({cv2}, cfg.seed ^ 0xB2, -s2, s2)};
  }
  return opts;
}

inline int run_read(const PipelineConfig& cfg, const std::filesystem::path& out_dir, const std::string& inputs_dir) {
  std::vector<MultiScaleFrame> frames;
  if (inputs_dir.empty()) {
    frames = std::move(generate_scene(cfg.scene()).frames);
  } else {
    frames = load_frames(inputs_dir);
  }
  if (frames.size() < 2) throw std::runtime_error("read needs at least 2 frames");
  for (const MultiScaleFrame& f : frames) {
    if (f.res3.key.empty() || f.res2.key.empty()) {
      throw std::runtime_error("frame " + std::to_string(f.time) +
                               " lacks res3/res2 maps; the hierarchical read needs all three scales");
    }
  }

  ReadOptions opts = make_read_options(cfg, frames);

  MemoryBank bank;
  bank.policy = cfg.retention_policy();
  bank_insert(bank, frames[0]);

  TrackTable dense_table;
  if (cfg.dense_track) {
    dense_table = make_track_root(frames[0].res4.key.dim(0), frames[0].res4.key.dim(1), frames[0].time);
  }

  std::ostringstream metrics;
  metrics << std::left << std::setw(7) << "frame" << std::setw(8) << "coarse" << std::setw(6) << "fine"
          << std::setw(11) << "fresh_hops" << std::setw(16) << "g4_colsum_dev" << std::setw(14) << "z4_norm"
          << std::setw(14) << "z3_norm" << std::setw(14) << "z2_norm" << "\n";

  HierarchicalReadOutput out;
  TrackTable cache;
  bool have_cache = false;
  for (std::size_t f = 1; f < frames.size(); ++f) {
    std::size_t fresh = 0;
    if (cfg.dense_track && !cfg.kernel_ones) {
      CoordGrid hop =
          local_track_hop(frames[f - 1].res4.key, frames[f].res4.key, cfg.window_size);
      dense_table = chain_tracks(std::move(dense_table), std::move(hop), frames[f].time);
      opts.external_track = &dense_table;
      fresh = 1;
      out = hierarchical_read(bank, frames[f], opts);
    } else {
      out = hierarchical_read(bank, frames[f], opts, have_cache ? &cache : nullptr);
      cache = out.track;
      have_cache = true;
      fresh = cache.fresh_hops;
    }
    metrics << std::left << std::setw(7) << frames[f].time << std::setw(8) << bank.coarse_times.size()
            << std::setw(6) << bank.fine_times.size() << std::setw(11) << fresh << std::setw(16) << std::scientific
            << std::setprecision(3) << column_sum_max_dev(out.g4) << std::fixed << std::setprecision(4)
            << std::setw(14) << l2_norm(out.z4) << std::setw(14) << l2_norm(out.z3) << std::setw(14)
            << l2_norm(out.z2) << "\n";
    bank_insert(bank, frames[f]);
  }

  std::filesystem::create_directories(out_dir);
  save_hmt1((out_dir / "z4.hmt1").string(), out.z4);
  save_hmt1((out_dir / "z3.hmt1").string(), out.z3);
  save_hmt1((out_dir / "z2.hmt1").string(), out.z2);
  save_hmt1((out_dir / "g4.hmt1").string(), out.g4.scores);
  save_hmi1((out_dir / "candidates_res3.hmi1").string(), out.candidates3);
  save_hmi1((out_dir / "candidates_res2.hmi1").string(), out.candidates2);
  std::ofstream mf(out_dir / "metrics.txt");
  mf << metrics.str();
  std::cout << metrics.str();
  std::cout << "wrote z4/z3/z2/g4 .hmt1 to " << out_dir.string() << "\n";
  return 0;
}

inline BenchAxes parse_axes(const std::vector<std::string>& tokens) {
  BenchAxes axes;
  axes.t = {2};
  auto parse_list = [](const std::string& csv, const std::string& name) {
    std::vector<std::size_t> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
      out.push_back(detail::parse_number<std::size_t>(detail::trim(item), name));
    }
    if (out.empty()) throw std::runtime_error("axes: empty list for '" + name + "'");
    return out;
  };
  for (const std::string& token : tokens) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::runtime_error("axes token '" + token + "' must be name=v1,v2,...");
    const std::string name = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (name == "h") {
      axes.h = parse_list(value, name);
    } else if (name == "w") {
      axes.w = parse_list(value, name);
    } else if (name == "t") {
      axes.t = parse_list(value, name);
    } else if (name == "k") {
      axes.k = parse_list(value, name);
    } else if (name == "modes") {
      axes.modes.clear();
      std::istringstream is(value);
      std::string m;
      while (std::getline(is, m, ',')) axes.modes.push_back(detail::trim(m));
    } else {
      throw std::runtime_error("axes: unknown axis '" + name + "'");
    }
  }
  if (axes.h.empty()) axes.h = {16, 32};
  return axes;
}

inline int run_bench(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                     const std::vector<std::string>& axis_tokens) {
  BenchAxes axes = parse_axes(axis_tokens);
  BenchOptions opts;
  opts.key_channels = cfg.key_channels[1];
  opts.value_channels = cfg.value_channels[1];
  opts.seed = cfg.seed;
  BenchReport report = run_benchmark(axes, opts);

  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "bench.csv");
  csv << bench_csv(report);
  std::ofstream table(out_dir / "bench.txt");
  table << bench_table(report);
  std::cout << bench_table(report);
  std::cout << "wrote bench.csv and bench.txt to " << out_dir.string() << "\n";
  return 0;
}

inline int run_verify() {
  const std::vector<VerifyResult> results = run_verifications();
  bool all = true;
  for (const VerifyResult& r : results) {
    std::cout << (r.pass ? "[ ok ] " : "[FAIL] ") << r.name;
    if (!r.pass && !r.detail.empty()) std::cout << " — " << r.detail;
    std::cout << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "all checks passed" : "CHECKS FAILED") << "\n";
  return all ? 0 : 1;
}

inline int run_gen(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  SceneData scene = generate_scene(cfg.scene());
  write_scene(scene, out_dir);
  std::cout << "wrote " << scene.frames.size() << " frames (" << scene.coarse_h << "x" << scene.coarse_w
            << " coarse) to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"hierarchical space-time memory matching harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string inputs_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> axis_tokens;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file (key = value lines)");
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_given = true; });
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* read_cmd = app.add_subcommand("read", "run the hierarchical read over a scene or HMT1 inputs");
  add_common(read_cmd);
  read_cmd->add_option("--inputs", inputs_dir, "directory of frame_NNN.*.hmt1 inputs (default: generated scene)");

  CLI::App* bench_cmd = app.add_subcommand("bench", "dense vs top-k complexity benchmark");
  add_common(bench_cmd);
  bench_cmd->add_option("--axes", axis_tokens, "axis lists, e.g. h=16,32 t=1 k=32 modes=dense,topk")
      ->expected(-1);

  CLI::App* verify_cmd = app.add_subcommand("verify", "run all invariant suites");
  add_common(verify_cmd);

  CLI::App* gen_cmd = app.add_subcommand("gen", "write a synthetic scene to disk");
  add_common(gen_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  PipelineConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    if (seed_given) cfg.seed = seed;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (read_cmd->parsed()) return cli_detail::run_read(cfg, out_dir, inputs_dir);
    if (bench_cmd->parsed()) return cli_detail::run_bench(cfg, out_dir, axis_tokens);
    if (verify_cmd->parsed()) return cli_detail::run_verify();
    if (gen_cmd->parsed()) return cli_detail::run_gen(cfg, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace hmt
