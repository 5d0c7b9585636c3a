// Command-line interface: scene generation, training, evaluation, rendering,
// gradient checking and ablation suites. See README.md for usage.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "voxdet/ablate.hpp"
#include "voxdet/gradsuite.hpp"
#include "voxdet/scene_io.hpp"

namespace fs = std::filesystem;
using namespace voxdet;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::int64_t seed = -1;  // -1: keep the config's seed
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config file (flat key = value text)");
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--out", args.out, "Output directory or file");
  cmd->add_flag("--deterministic", args.deterministic, "Force deterministic mode");
}

TrainConfig resolve_config(const CommonArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.deterministic) cfg.deterministic = true;
  return cfg;
}

Dataset load_dataset(const fs::path& root) {
  Dataset data;
  for (const auto& dir : list_scene_dirs(root / "train")) data.train.push_back(load_scene_bundle(dir));
  for (const auto& dir : list_scene_dirs(root / "heldout"))
    data.heldout.push_back(load_scene_bundle(dir));
  VOXDET_REQUIRE(!data.train.empty() || !data.heldout.empty(),
                 "no scenes found under " + root.string());
  return data;
}

Dataset obtain_dataset(const TrainConfig& cfg, const std::string& scenes_dir) {
  if (!scenes_dir.empty()) return load_dataset(scenes_dir);
  std::cout << "generating " << cfg.n_train_scenes << "+" << cfg.n_heldout_scenes
            << " scenes in memory\n";
  return generate_dataset(cfg);
}

int cmd_gen_scenes(const CommonArgs& args) {
  const TrainConfig cfg = resolve_config(args);
  const GridSpecd grid = grid_from_config<double>(cfg);
  const Dataset data = generate_dataset(cfg);
  char name[64];
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    save_scene_bundle(fs::path(args.out) / "train" / name, data.train[i], grid);
  }
  for (std::size_t i = 0; i < data.heldout.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    save_scene_bundle(fs::path(args.out) / "heldout" / name, data.heldout[i], grid);
  }
  save_config((fs::path(args.out) / "config.txt").string(), cfg);
  std::cout << "wrote " << data.train.size() << " train / " << data.heldout.size()
            << " held-out scenes to " << args.out << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& scenes_dir) {
  const TrainConfig cfg = resolve_config(args);
  const Dataset data = obtain_dataset(cfg, scenes_dir);
  TrainState<float> state(cfg);
  const auto caches = make_scene_caches(data.train, state.plans, state.setup);

  fs::create_directories(args.out);
  save_config((fs::path(args.out) / "config.txt").string(), cfg);
  std::ofstream metrics(fs::path(args.out) / "metrics.csv");
  train_loop(state, caches, &metrics, &std::cout);

  CheckpointInfo info;
  info.config_hash = config_hash(cfg);
  info.iteration = state.iteration;
  save_checkpoint(fs::path(args.out) / "checkpoint", state.store, info);
  std::cout << "checkpoint written to " << args.out << "/checkpoint\n";
  return 0;
}

template <typename Fn>
int with_model(const CommonArgs& args, const std::string& scenes_dir, const std::string& ckpt,
               Fn&& fn) {
  const TrainConfig cfg = resolve_config(args);
  const Dataset data = obtain_dataset(cfg, scenes_dir);
  const ModelSetup setup = make_model_setup(cfg);
  ModelPlans<float> plans = make_model_plans<float>(cfg);
  ad::ParameterStore<float> store;
  const CheckpointInfo info = load_checkpoint(ckpt, store);
  if (info.config_hash != config_hash(cfg))
    std::cerr << "warning: checkpoint config hash differs from the supplied config\n";
  const auto heldout = make_scene_caches(data.heldout, plans, setup);
  return fn(cfg, setup, plans, store, heldout);
}

int cmd_eval_nvs(const CommonArgs& args, const std::string& scenes_dir, const std::string& ckpt) {
  return with_model(args, scenes_dir, ckpt,
                    [&](const TrainConfig& cfg, const ModelSetup& setup, ModelPlans<float>& plans,
                        ad::ParameterStore<float>& store, const auto& heldout) {
                      const NvsMetrics m = evaluate_nvs(store, setup, plans, heldout, cfg);
                      std::printf("psnr %.4f  ssim %.4f  depth_rmse %.4f\n", m.psnr, m.ssim, m.rmse);
                      std::ofstream csv(args.out);
                      csv << "psnr,ssim,rmse\n";
                      char line[128];
                      std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g\n", m.psnr, m.ssim, m.rmse);
                      csv << line;
                      return 0;
                    });
}

int cmd_eval_det(const CommonArgs& args, const std::string& scenes_dir, const std::string& ckpt,
                 bool dump_opacity) {
  return with_model(
      args, scenes_dir, ckpt,
      [&](const TrainConfig& cfg, const ModelSetup& setup, ModelPlans<float>& plans,
          ad::ParameterStore<float>& store, const auto& heldout) {
        const auto map = evaluate_detection(store, setup, plans, heldout, cfg);
        std::printf("mAP@.25 %.4f  mAP@.50 %.4f\n", map.at(0.25), map.at(0.5));
        fs::path out(args.out);
        fs::create_directories(out);
        std::ofstream csv(out / "detection.csv");
        csv << "map25,map50\n";
        char line[96];
        std::snprintf(line, sizeof(line), "%.9g,%.9g\n", map.at(0.25), map.at(0.5));
        csv << line;
        if (dump_opacity) {
          for (std::size_t s = 0; s < heldout.size(); ++s) {
            VecXd alpha;
            compute_head_output(store, setup, plans, heldout[s], &alpha);
            char name[64];
            std::snprintf(name, sizeof(name), "opacity_%04zu.f32", s);
            write_raw_f32(out / name, alpha, {cfg.grid_nx, cfg.grid_ny, cfg.grid_nz});
          }
          std::cout << "opacity grids written to " << out << "\n";
        }
        return 0;
      });
}

int cmd_render(const CommonArgs& args, const std::string& scenes_dir, const std::string& ckpt,
               int scene_index, int view_index) {
  return with_model(
      args, scenes_dir, ckpt,
      [&](const TrainConfig& cfg, const ModelSetup& setup, ModelPlans<float>& plans,
          ad::ParameterStore<float>& store, const auto& heldout) {
        VOXDET_REQUIRE(scene_index >= 0 && scene_index < static_cast<int>(heldout.size()),
                       "render: scene index out of range");
        const auto& cache = heldout[scene_index];
        VOXDET_REQUIRE(view_index >= 0 &&
                           view_index < static_cast<int>(cache.novel_views.size()),
                       "render: novel view index out of range");
        const RenderedView rendered =
            render_novel_view(store, setup, plans, cache, cfg, view_index);
        fs::path out(args.out);
        fs::create_directories(out);
        write_ppm(out / "pred_color.ppm", rendered.image, cfg.image_width, cfg.image_height);
        write_raw_f32(out / "pred_depth.f32", rendered.depth, {cfg.image_height, cfg.image_width});
        const auto& gt_view = cache.bundle->views[cache.bundle->n_input_views + view_index];
        write_ppm(out / "gt_color.ppm", gt_view.image, cfg.image_width, cfg.image_height);
        if (setup.detection_branch && setup.geometry_mode == GeometryMode::kNerfOpacity) {
          VecXd alpha;
          compute_head_output(store, setup, plans, cache, &alpha);
          write_raw_f32(out / "opacity.f32", alpha, {cfg.grid_nx, cfg.grid_ny, cfg.grid_nz});
        }
        std::cout << "wrote render to " << out << "\n";
        return 0;
      });
}

int cmd_grad_check(double step, double tolerance) {
  const auto results = run_grad_suites(step);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.report.pass(tolerance);
    ok = ok && pass;
    std::printf("%-14s %s  max_rel %.3e  mean_rel %.3e  (%zu scalars, worst %s)\n", r.name.c_str(),
                pass ? "PASS" : "FAIL", r.report.max_rel_err, r.report.mean_rel_err,
                r.report.n_scalars, r.report.worst_param.c_str());
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const CommonArgs& args, const std::string& suite, const std::string& seeds_csv) {
  const TrainConfig base = resolve_config(args);
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  for (std::string item; std::getline(ss, item, ',');) seeds.push_back(std::stoull(item));
  VOXDET_REQUIRE(!seeds.empty(), "ablate: no seeds given");
  const auto rows = run_ablation(suite, base, seeds, &std::cout);
  fs::path out(args.out);
  fs::create_directories(out);
  std::ofstream csv(out / (suite + ".csv"));
  write_ablation_csv(csv, rows);
  std::ofstream summary(out / (suite + "_summary.csv"));
  const bool nvs_suite = suite == "det-branch";
  write_ablation_summary(summary, rows, nvs_suite ? "psnr" : "map25",
                         nvs_suite ? &AblationRow::psnr : &AblationRow::map25);
  std::cout << "wrote " << rows.size() << " rows to " << (out / (suite + ".csv")) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxel-volume multi-view 3D detection with a radiance-field geometry branch"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, nvs_args, det_args, render_args, ablate_args;
  std::string train_scenes, nvs_scenes, det_scenes, render_scenes;
  std::string nvs_ckpt, det_ckpt, render_ckpt;
  bool det_dump_opacity = false;
  int render_scene = 0, render_view = 0;
  double gc_step = 1e-5, gc_tol = 1e-4;
  std::string ablate_suite = "geometry", ablate_seeds = "1,2,3";

  add_common(app.add_subcommand("gen-scenes", "Generate a synthetic scene dataset"), gen_args);

  auto* train = app.add_subcommand("train", "Train the joint model");
  add_common(train, train_args);
  train->add_option("--scenes", train_scenes, "Scene dataset directory (default: generate)");

  auto* nvs = app.add_subcommand("eval-nvs", "Novel-view synthesis metrics on held-out scenes");
  add_common(nvs, nvs_args);
  nvs->add_option("--scenes", nvs_scenes, "Scene dataset directory (default: generate)");
  nvs->add_option("--ckpt", nvs_ckpt, "Checkpoint directory")->required();

  auto* det = app.add_subcommand("eval-det", "Detection mAP on held-out scenes");
  add_common(det, det_args);
  det->add_option("--scenes", det_scenes, "Scene dataset directory (default: generate)");
  det->add_option("--ckpt", det_ckpt, "Checkpoint directory")->required();
  det->add_flag("--dump-opacity", det_dump_opacity, "Export per-scene opacity grids");

  auto* render = app.add_subcommand("render", "Render one held-out novel view");
  add_common(render, render_args);
  render->add_option("--scenes", render_scenes, "Scene dataset directory (default: generate)");
  render->add_option("--ckpt", render_ckpt, "Checkpoint directory")->required();
  render->add_option("--scene", render_scene, "Held-out scene index");
  render->add_option("--view", render_view, "Novel view index");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient verification");
  gc->add_option("--step", gc_step, "Central difference step");
  gc->add_option("--tolerance", gc_tol, "Max relative error");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation suite");
  add_common(ablate, ablate_args);
  ablate->add_option("--suite", ablate_suite,
                     "geometry | losses | features | sample-share | det-branch");
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-scenes")) return cmd_gen_scenes(gen_args);
    if (app.got_subcommand("train")) return cmd_train(train_args, train_scenes);
    if (app.got_subcommand("eval-nvs")) return cmd_eval_nvs(nvs_args, nvs_scenes, nvs_ckpt);
    if (app.got_subcommand("eval-det"))
      return cmd_eval_det(det_args, det_scenes, det_ckpt, det_dump_opacity);
    if (app.got_subcommand("render"))
      return cmd_render(render_args, render_scenes, render_ckpt, render_scene, render_view);
    if (app.got_subcommand("grad-check")) return cmd_grad_check(gc_step, gc_tol);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args, ablate_suite, ablate_seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
