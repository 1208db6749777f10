#include "mvr/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "mvr/checkpoint.hpp"
#include "mvr/config.hpp"
#include "mvr/errors.hpp"
#include "mvr/imageio.hpp"
#include "mvr/pipeline.hpp"
#include "mvr/training.hpp"

namespace mvr {
namespace {

namespace fs = std::filesystem;

RunConfig resolve_config(const std::string& config_path, bool seed_set,
                         std::uint64_t seed, bool threads_set, int threads,
                         bool out_set, const std::string& out) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  apply_env_overrides(cfg);
  if (seed_set) cfg.seed = seed;
  if (threads_set) cfg.threads = threads;
  if (out_set) cfg.out_dir = out;
  cfg.validate();
  return cfg;
}

int cmd_gen_scene(std::uint64_t seed, int count, const std::string& out,
                  int threads) {
  if (count < 1) throw ConfigError("gen-scene: count must be >= 1");
  fs::path dir(out);
  fs::create_directories(dir);
  std::vector<Scene> scenes = scene_suite(seed, count);
  for (int i = 0; i < count; ++i) {
    const Scene& scene = scenes[static_cast<std::size_t>(i)];
    char stem[64];
    std::snprintf(stem, sizeof stem, "scene_%03d", i);
    save_scene(scene, dir / (std::string(stem) + ".json"));
    ScenePack pack = bake_scene(scene, 256, 24, 0.0, threads);
    for (int v = 0; v < scene.rig.view_count(); ++v) {
      char name[96];
      std::snprintf(name, sizeof name, "%s_view%d.ppm", stem, v);
      write_rgb_ppm(pack.images[static_cast<std::size_t>(v)], dir / name);
      std::snprintf(name, sizeof name, "%s_view%d_depth.pgm", stem, v);
      const DepthMap& d = pack.oracle_depth[static_cast<std::size_t>(v)];
      write_depth_pgm(d.z, d.height, d.width, dir / name);
    }
    std::ofstream csv(dir / (std::string(stem) + "_lidar.csv"), std::ios::trunc);
    if (!csv) throw IoError("gen-scene: cannot write lidar csv");
    csv << "x,y,z,intensity\n";
    for (const LidarPoint& p : pack.cloud) {
      char row[200];
      std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g,%.17g\n", p.position.x(),
                    p.position.y(), p.position.z(), p.intensity);
      csv << row;
    }
    std::cout << stem << ": " << scene.primitives.size() << " primitives, "
              << pack.cloud.size() << " lidar points\n";
  }
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream echo(fs::path(cfg.out_dir) / "config.json", std::ios::trunc);
  if (!echo) throw IoError("pretrain: cannot write config echo");
  echo << config_to_json(cfg);
  echo.close();
  TrainResult result = pretrain(cfg);
  if (!result.rows.empty()) {
    const StepRow& last = result.rows.back();
    std::cout << "step " << last.step << " loss " << last.loss << " rgb_l1 "
              << last.rgb_l1 << " depth_l1 " << last.depth_l1 << "\n";
  }
  if (!result.evals.empty()) {
    const EvalPoint& e = result.evals.back();
    std::cout << "eval step " << e.step << " rgb_l1 " << e.rgb_l1 << " depth_l1 "
              << e.depth_l1 << "\n";
  }
  std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
  std::cout << "metrics: " << result.metrics_path.string() << "\n";
  return 0;
}

int cmd_render(const std::string& checkpoint_path, const std::string& scene_path,
               int view, const std::string& out, int points_per_ray, int threads) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Scene scene = load_scene(scene_path);
  if (view < 0 || view >= scene.rig.view_count())
    throw ConfigError("render: view out of range");
  if (points_per_ray < 2) throw ConfigError("render: points must be >= 2");
  ScenePack pack = bake_scene(scene, 256, 24, 0.0, threads);

  VoxelSpec grid = ck.params.volume_spec();
  StepPlan full = make_eval_plan(pack, ck.modality, grid, 1, points_per_ray);
  StepPlan plan = full;
  plan.rays.clear();
  plan.ts.clear();
  plan.targets.rgb.clear();
  plan.targets.depth.clear();
  for (std::size_t i = 0; i < full.rays.size(); ++i) {
    if (full.rays[i].view != view) continue;
    plan.rays.push_back(full.rays[i]);
    plan.ts.push_back(full.ts[i]);
    plan.targets.rgb.push_back(full.targets.rgb[i]);
    plan.targets.depth.push_back(full.targets.depth[i]);
  }

  std::vector<RayPrediction> preds;
  RunOptions opts;
  opts.threads = threads;
  opts.preds_out = &preds;
  LossWeights w;
  run_plan(plan, ck.params, w, opts);

  int h = scene.rig.image_height, wpx = scene.rig.image_width;
  ImageRgb rgb = ImageRgb::zeros(h, wpx);
  std::vector<double> depth(static_cast<std::size_t>(h) * wpx,
                            std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < plan.rays.size(); ++i) {
    int u = static_cast<int>(std::floor(plan.rays[i].pixel.x()));
    int v = static_cast<int>(std::floor(plan.rays[i].pixel.y()));
    double* px = rgb.at(u, v);
    px[0] = preds[i].rgb.x();
    px[1] = preds[i].rgb.y();
    px[2] = preds[i].rgb.z();
    depth[static_cast<std::size_t>(v) * wpx + u] = preds[i].depth;
  }

  fs::path dir(out);
  fs::create_directories(dir);
  char name[64];
  std::snprintf(name, sizeof name, "rgb_view%d.ppm", view);
  write_rgb_ppm(rgb, dir / name);
  std::snprintf(name, sizeof name, "depth_view%d.pgm", view);
  write_depth_pgm(depth, h, wpx, dir / name);
  std::cout << "rendered view " << view << " (" << plan.rays.size() << " rays) to "
            << dir.string() << "\n";
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  GradCheckReport r = grad_check(seed);
  char line[320];
  std::snprintf(line, sizeof line,
                "grad-check: max rel err %.3e at %s (analytic %.9e, numeric %.9e, "
                "%zu checked, loss %.6g, max |g| %.3e, max abs err %.3e)\n",
                r.max_rel_err, r.worst_path.c_str(), r.analytic, r.numeric,
                r.checked, r.loss, r.grad_abs_max, r.max_abs_err);
  std::cout << line;
  std::cout << (r.pass ? "PASS" : "FAIL") << "\n";
  return r.pass ? 0 : 1;
}

int cmd_bench_sampling(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  fs::create_directories(base.out_dir);
  std::vector<BenchRow> rows = bench_sampling(base, seeds);
  fs::path csv_path = fs::path(base.out_dir) / "bench.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("bench-sampling: cannot write bench.csv");
  csv << "strategy,seed,depth_l1,rgb_l1,ray_buffer_bytes\n";
  for (const BenchRow& r : rows) {
    char row[200];
    std::snprintf(row, sizeof row, "%s,%llu,%.17g,%.17g,%zu\n", r.strategy.c_str(),
                  static_cast<unsigned long long>(r.seed), r.depth_l1, r.rgb_l1,
                  r.ray_buffer_bytes);
    csv << row;
    std::cout << row;
  }
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Masked multi-view + LiDAR pre-training via differentiable "
               "SDF volume rendering"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-scene", "Generate synthetic scenes with "
                                              "oracle image/depth/LiDAR dumps");
  std::uint64_t gen_seed = 1;
  int gen_count = 1;
  std::string gen_out = "scenes";
  int gen_threads = 1;
  gen->add_option("--seed", gen_seed, "Suite seed");
  gen->add_option("--count", gen_count, "Number of scenes");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--threads", gen_threads, "Oracle render threads");

  auto* pre = app.add_subcommand("pretrain", "Run the pre-training loop");
  std::string pre_config;
  std::uint64_t pre_seed = 0;
  int pre_threads = 0;
  std::string pre_out;
  pre->add_option("--config", pre_config, "Config JSON path");
  auto* pre_seed_opt = pre->add_option("--seed", pre_seed, "Override seed");
  auto* pre_threads_opt = pre->add_option("--threads", pre_threads, "Override threads");
  auto* pre_out_opt = pre->add_option("--out", pre_out, "Override output directory");

  auto* ren = app.add_subcommand("render", "Render one view's RGB and depth "
                                           "from a checkpoint");
  std::string ren_ckpt, ren_scene, ren_out = "render";
  int ren_view = 0, ren_points = 96, ren_threads = 1;
  ren->add_option("--checkpoint", ren_ckpt, "Checkpoint path")->required();
  ren->add_option("--scene", ren_scene, "Scene JSON path")->required();
  ren->add_option("--view", ren_view, "View index");
  ren->add_option("--out", ren_out, "Output directory");
  ren->add_option("--points", ren_points, "Samples per ray");
  ren->add_option("--threads", ren_threads, "Render threads");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the "
                                              "full analytic backward pass");
  std::string gc_config;
  std::uint64_t gc_seed = 1;
  gc->add_option("--config", gc_config, "Config JSON path (seed source)");
  auto* gc_seed_opt = gc->add_option("--seed", gc_seed, "Override seed");

  auto* bench = app.add_subcommand("bench-sampling", "Short runs per ray "
                                                     "strategy at matched budget");
  std::string bench_config;
  std::string bench_out;
  int bench_threads = 0;
  std::vector<std::uint64_t> bench_seeds;
  bench->add_option("--config", bench_config, "Config JSON path");
  auto* bench_out_opt = bench->add_option("--out", bench_out, "Override output directory");
  auto* bench_threads_opt =
      bench->add_option("--threads", bench_threads, "Override threads");
  bench->add_option("--seeds", bench_seeds, "Seeds (one run per strategy each)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_scene(gen_seed, gen_count, gen_out, gen_threads);
    if (pre->parsed()) {
      RunConfig cfg =
          resolve_config(pre_config, !pre_seed_opt->empty(), pre_seed,
                         !pre_threads_opt->empty(), pre_threads,
                         !pre_out_opt->empty(), pre_out);
      return cmd_pretrain(cfg);
    }
    if (ren->parsed())
      return cmd_render(ren_ckpt, ren_scene, ren_view, ren_out, ren_points,
                        ren_threads);
    if (gc->parsed()) {
      std::uint64_t seed = gc_seed;
      if (!gc_config.empty() && gc_seed_opt->empty())
        seed = load_config(gc_config).seed;
      return cmd_grad_check(seed);
    }
    if (bench->parsed()) {
      RunConfig cfg = resolve_config(bench_config, false, 0,
                                     !bench_threads_opt->empty(), bench_threads,
                                     !bench_out_opt->empty(), bench_out);
      if (bench_seeds.empty()) bench_seeds = {1, 2, 3, 4, 5};
      return cmd_bench_sampling(cfg, bench_seeds);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace mvr
