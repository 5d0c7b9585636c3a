#pragma once

#include <string>
#include <vector>

#include "voxdet/gradcheck.hpp"
#include "voxdet/train.hpp"

namespace voxdet {

// Finite-difference verification micro-instances. Everything runs at 64-bit
// with central differences; instances are kept small enough (a few thousand
// scalars) that exhaustive per-parameter probing stays cheap.

struct GradSuiteResult {
  std::string name;
  ad::GradCheckReport report;
};

namespace gradsuite {

inline MatXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo, double hi) {
  MatXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// (a) G-MLP + C-MLP + volumetric rendering + photometric/depth losses on a
// 2-ray, 8-sample instance with fixed random point features.
inline GradSuiteResult nerf_render_suite(double step = 1e-5) {
  constexpr int kRays = 2, kSamples = 8, kFeat = 10, kBands = 2, kWidth = 16;
  const int n_points = kRays * kSamples;
  const int in_dim = kFeat + 6 * kBands;

  Rng rng(99, "gradsuite/nerf");
  const MatXd features = random_matrix(n_points, in_dim, rng, -0.8, 0.8);
  const MatXd dirs = [&] {
    MatXd d = random_matrix(n_points, 3, rng, -1, 1);
    for (Eigen::Index r = 0; r < d.rows(); ++r) d.row(r).normalize();
    return d;
  }();
  MatXd t_matrix(kRays, kSamples);
  for (int r = 0; r < kRays; ++r)
    for (int i = 0; i < kSamples; ++i) t_matrix(r, i) = 0.5 + 0.25 * i + 0.05 * r;
  const MatXd target_rgb = random_matrix(kRays, 3, rng, 0.1, 0.9);
  const VecXd target_depth = random_matrix(kRays, 1, rng, 0.8, 2.0).col(0);
  const VecXd keep = VecXd::Ones(kRays);

  ad::ParameterStore<double> store;
  init_gmlp_params(store, GMlpDims{in_dim, kWidth}, 7, "gmlp.");
  init_cmlp_params(store, kWidth, 7, "cmlp.");

  auto loss_fn = [&](bool with_grad) {
    ad::Tape<double> tape;
    auto x = tape.constant(features);
    auto gm = g_mlp(tape, store, x, "gmlp.");
    auto rgb = c_mlp(tape, store, gm.latent, tape.constant(dirs), "cmlp.");
    auto render = render_rays_graph(tape, gm.sigma, rgb, tape.constant(t_matrix), kRays, kSamples,
                                    0.25);
    auto losses = nerf_losses(tape, render, target_rgb, target_depth, keep, true, true);
    auto total = tape.add(losses.color_loss, losses.depth_loss);
    if (with_grad) tape.backward(total);
    return tape.value(total)(0, 0);
  };
  return {"nerf-render", ad::grad_check(store, loss_fn, step)};
}

// (b) the 2D encoder, probed through a squared-activation pooling loss.
inline GradSuiteResult encoder_suite(double step = 1e-5) {
  constexpr int kH = 8, kW = 8, kC = 6;
  Rng rng(99, "gradsuite/encoder");
  const MatXd image = random_matrix(kH * kW, 3, rng, 0.0, 1.0);

  EncoderDims dims;
  dims.in_height = kH;
  dims.in_width = kW;
  dims.channels = kC;
  const EncoderPlans plans = make_encoder_plans(dims);
  ad::ParameterStore<double> store;
  init_encoder_params(store, kC, 11);

  auto loss_fn = [&](bool with_grad) {
    ad::Tape<double> tape;
    auto out = encode_view(tape, store, plans, tape.constant(image));
    auto loss = tape.sum_all(tape.square(out));
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  return {"encoder", ad::grad_check(store, loss_fn, step)};
}

// (c) detection losses: head on fixed volume features, focal + centerness +
// IoU against targets from two boxes.
inline GradSuiteResult detection_suite(double step = 1e-5) {
  constexpr int kC = 5, kK = 2;
  GridSpec<double> grid;
  grid.nx = 4;
  grid.ny = 3;
  grid.nz = 2;
  grid.voxel_size = Vec3d(0.5, 0.5, 0.5);
  Rng rng(99, "gradsuite/detection");
  const MatXd feats = random_matrix(grid.num_voxels(), kC, rng, -1, 1);

  std::vector<Box3Dd> boxes(2);
  boxes[0].center = Vec3d(0.8, 0.8, 0.5);
  boxes[0].size = Vec3d(0.9, 0.9, 0.8);
  boxes[0].label = 0;
  boxes[1].center = Vec3d(1.6, 0.7, 0.5);
  boxes[1].size = Vec3d(0.7, 0.8, 0.9);
  boxes[1].label = 1;
  const auto targets = assign_targets(grid, boxes);
  const auto plan = conv3x3x3_plan(grid);

  ad::ParameterStore<double> store;
  init_head_params(store, kC, kK, 13);

  auto loss_fn = [&](bool with_grad) {
    ad::Tape<double> tape;
    auto head = head_forward(tape, store, tape.constant(feats), plan);
    auto losses = detection_losses(tape, head, targets);
    auto total = tape.add(tape.add(losses.cls, losses.cntr), losses.loc);
    if (with_grad) tape.backward(total);
    return tape.value(total)(0, 0);
  };
  return {"detection", ad::grad_check(store, loss_fn, step)};
}

// (d) the full joint pipeline on a micro scene: encoder -> volume -> shared
// G-MLP -> opacity -> head losses, plus a fixed 2-ray batch through the NeRF
// branch. Checks that gradients reach every parameter through both branches.
inline GradSuiteResult full_pipeline_suite(double step = 1e-5) {
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.encoder_channels = 4;
  cfg.mlp_width = 12;
  cfg.pe_bands = 2;
  cfg.n_classes = 2;
  cfg.rays_per_iter = 2;
  cfg.n_samples = 8;
  cfg.near = 0.4;
  cfg.far = 6.0;
  cfg.image_width = 16;
  cfg.image_height = 16;
  cfg.fx = cfg.fy = 10;
  cfg.n_input_views = 2;
  cfg.n_novel_views = 2;
  cfg.grid_nx = 4;
  cfg.grid_ny = 4;
  cfg.grid_nz = 2;
  cfg.n_train_scenes = 1;
  cfg.n_heldout_scenes = 0;
  cfg.min_objects = cfg.max_objects = 2;

  const ModelSetup setup = make_model_setup(cfg);
  ModelPlans<double> plans = make_model_plans<double>(cfg);
  const GridSpecd grid = grid_from_config<double>(cfg);
  const SceneBundle bundle =
      make_scene_bundle(generate_scene(41, scene_gen_from_config(cfg)), grid, rig_from_config(cfg));
  const SceneCache<double> cache = make_scene_cache(bundle, plans, setup);

  ad::ParameterStore<double> store;
  init_model_params(store, setup, cfg.seed);

  // one fixed ray batch so the loss is a deterministic function of parameters
  Rng pixel_rng(cfg.seed, "gradsuite/pixels");
  Rng t_rng(cfg.seed, "gradsuite/t");
  const RayBatch<double> batch = sample_ray_batch(cache, plans, cfg, pixel_rng, t_rng);

  auto loss_fn = [&](bool with_grad) {
    ad::Tape<double> tape;
    auto fmaps = encode_input_views(tape, store, plans, cache, /*trainable=*/true);
    auto det = build_detection_graph(tape, store, setup, plans, cache, fmaps);
    auto det_losses = detection_losses(tape, det.head, cache.targets, cfg.focal_alpha);
    auto nerf = build_nerf_graph(tape, store, setup, plans, cache, fmaps, &det.volume, batch);
    auto total = tape.add(tape.add(det_losses.cls, det_losses.cntr), det_losses.loc);
    total = tape.add(total, tape.add(nerf.losses.color_loss, nerf.losses.depth_loss));
    if (with_grad) tape.backward(total);
    return tape.value(total)(0, 0);
  };
  return {"full-pipeline", ad::grad_check(store, loss_fn, step)};
}

}  // namespace gradsuite

inline std::vector<GradSuiteResult> run_grad_suites(double step = 1e-5) {
  return {gradsuite::nerf_render_suite(step), gradsuite::encoder_suite(step),
          gradsuite::detection_suite(step), gradsuite::full_pipeline_suite(step)};
}

}  // namespace voxdet
