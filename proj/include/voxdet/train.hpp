#pragma once

#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "voxdet/eval.hpp"
#include "voxdet/model.hpp"
#include "voxdet/params.hpp"

namespace voxdet {

// Joint training loop. One iteration = one scene: encoder forward, voxel
// volume + opacity + head, a random novel-view ray batch through the NeRF
// branch, one backward pass, one Adam update. The reported total is the sum
// of the enabled components (disabled ones enter as exact zeros).

struct LossReport {
  double l_cls = 0, l_cntr = 0, l_loc = 0;
  double l_c = 0, l_d = 0;
  double total = 0;
  int n_kept_rays = 0;
  bool empty_kept_set = false;
};

template <typename Scalar>
struct TrainState {
  TrainConfig config;
  ModelSetup setup;
  ModelPlans<Scalar> plans;
  ad::ParameterStore<Scalar> store;
  int iteration = 0;  // completed steps
  Rng scene_rng, pixel_rng, t_rng;

  TrainState(const TrainConfig& cfg)
      : config(cfg),
        setup(make_model_setup(cfg)),
        plans(make_model_plans<Scalar>(cfg)),
        scene_rng(cfg.seed, "scene-order"),
        pixel_rng(cfg.seed, "ray-pixels"),
        t_rng(cfg.seed, "ray-t") {
    VOXDET_REQUIRE(setup.detection_branch || setup.nerf_branch_active(),
                   "train: every loss is disabled");
    init_model_params(store, setup, cfg.seed);
  }

  double learning_rate_at(int iteration_0based) const {
    double lr = config.learning_rate;
    if (iteration_0based >= (2 * config.iterations) / 3) lr *= config.lr_decay_factor;
    if (iteration_0based >= (11 * config.iterations) / 12) lr *= config.lr_decay_factor;
    return lr;
  }
};

template <typename Scalar>
LossReport train_step(TrainState<Scalar>& state, const std::vector<SceneCache<Scalar>>& scenes) {
  VOXDET_REQUIRE(!scenes.empty(), "train_step: no scenes");
  const auto& cache = scenes[state.scene_rng.index(scenes.size())];
  const ModelSetup& setup = state.setup;

  ad::Tape<Scalar> tape;
  auto fmaps = encode_input_views(tape, state.store, state.plans, cache, /*trainable=*/true);

  LossReport report;
  std::vector<typename ad::Tape<Scalar>::Var> components;

  const VolumeGraph<Scalar>* det_volume = nullptr;
  DetectionForward<Scalar> det;
  if (setup.detection_branch) {
    det = build_detection_graph(tape, state.store, setup, state.plans, cache, fmaps);
    det_volume = &det.volume;
    auto losses = detection_losses(tape, det.head, cache.targets, Scalar(state.config.focal_alpha));
    report.l_cls = static_cast<double>(tape.value(losses.cls)(0, 0));
    report.l_cntr = static_cast<double>(tape.value(losses.cntr)(0, 0));
    report.l_loc = static_cast<double>(tape.value(losses.loc)(0, 0));
    components.push_back(losses.cls);
    components.push_back(losses.cntr);
    components.push_back(losses.loc);
  }

  if (setup.nerf_branch_active()) {
    // volume-source sampling without a detection branch still needs a volume
    VolumeGraph<Scalar> standalone;
    if (setup.sample_source == SampleSource::kVolume && det_volume == nullptr) {
      standalone = build_volume_graph(tape, fmaps, cache.vox_scatters, setup.toggles.use_var);
      det_volume = &standalone;
    }
    const RayBatch<Scalar> batch =
        sample_ray_batch(cache, state.plans, state.config, state.pixel_rng, state.t_rng);
    auto nerf = build_nerf_graph(tape, state.store, setup, state.plans, cache, fmaps, det_volume,
                                 batch);
    report.l_c = static_cast<double>(tape.value(nerf.losses.color_loss)(0, 0));
    report.l_d = static_cast<double>(tape.value(nerf.losses.depth_loss)(0, 0));
    report.n_kept_rays = nerf.losses.n_kept;
    report.empty_kept_set = nerf.losses.empty_kept_set;
    if (setup.use_photo_loss) components.push_back(nerf.losses.color_loss);
    if (setup.use_depth_loss) components.push_back(nerf.losses.depth_loss);
  }

  VOXDET_REQUIRE(!components.empty(), "train_step: nothing to optimize");
  auto total = components[0];
  for (std::size_t i = 1; i < components.size(); ++i) total = tape.add(total, components[i]);
  report.total = report.l_cls + report.l_cntr + report.l_loc + report.l_c + report.l_d;
  if (!std::isfinite(report.total)) {
    char msg[256];
    std::snprintf(msg, sizeof(msg),
                  "train_step: non-finite loss at iteration %d "
                  "(cls=%g cntr=%g loc=%g c=%g d=%g)",
                  state.iteration, report.l_cls, report.l_cntr, report.l_loc, report.l_c,
                  report.l_d);
    throw ContractViolation(msg);
  }

  state.store.zero_grad();
  tape.backward(total);

  AdamConfig adam;
  adam.learning_rate = state.learning_rate_at(state.iteration);
  adam.weight_decay = state.config.weight_decay;
  adam_step(state.store, adam, state.iteration + 1);
  state.iteration += 1;
  return report;
}

inline void write_metrics_header(std::ostream& out) {
  out << "iteration,lr,l_cls,l_cntr,l_loc,l_c,l_d,total,n_kept_rays\n";
}

inline void write_metrics_row(std::ostream& out, int iteration, double lr,
                              const LossReport& report) {
  char line[320];
  std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", iteration, lr,
                report.l_cls, report.l_cntr, report.l_loc, report.l_c, report.l_d, report.total,
                report.n_kept_rays);
  out << line;
}

// Runs the configured number of iterations; optionally streams a metrics CSV
// and logs progress. Returns the last step's report.
template <typename Scalar>
LossReport train_loop(TrainState<Scalar>& state, const std::vector<SceneCache<Scalar>>& scenes,
                      std::ostream* metrics_csv = nullptr, std::ostream* log = nullptr,
                      int log_every = 200) {
  if (metrics_csv) write_metrics_header(*metrics_csv);
  LossReport report;
  for (int it = state.iteration; it < state.config.iterations; ++it) {
    const double lr = state.learning_rate_at(it);
    report = train_step(state, scenes);
    if (metrics_csv) write_metrics_row(*metrics_csv, it, lr, report);
    if (log && (it % log_every == 0 || it + 1 == state.config.iterations)) {
      char line[256];
      std::snprintf(line, sizeof(line), "iter %5d  lr %.2e  total %.5f  (det %.4f/%.4f/%.4f  nerf %.4f/%.4f)\n",
                    it, lr, report.total, report.l_cls, report.l_cntr, report.l_loc, report.l_c,
                    report.l_d);
      (*log) << line << std::flush;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct Dataset {
  std::vector<SceneBundle> train;
  std::vector<SceneBundle> heldout;
};

inline SceneGenConfig scene_gen_from_config(const TrainConfig& c) {
  SceneGenConfig g;
  g.room = Vec3d(c.room_x, c.room_y, c.room_z);
  g.min_objects = c.min_objects;
  g.max_objects = c.max_objects;
  g.n_classes = c.n_classes;
  return g;
}

inline CameraRigConfig rig_from_config(const TrainConfig& c) {
  CameraRigConfig rig;
  rig.width = c.image_width;
  rig.height = c.image_height;
  rig.fx = c.fx;
  rig.fy = c.fy;
  rig.n_input_views = c.n_input_views;
  rig.n_novel_views = c.n_novel_views;
  rig.input_radius = c.input_radius;
  rig.input_height = c.input_height;
  rig.novel_radius = c.novel_radius;
  rig.novel_height = c.novel_height;
  rig.shading = c.shading;
  return rig;
}

// Procedural dataset: train scenes use seeds seed*1000+i, held-out scenes
// seed*1000+500+i, drawn through the scene generator's own named stream.
inline Dataset generate_dataset(const TrainConfig& config) {
  Dataset data;
  const GridSpecd grid = grid_from_config<double>(config);
  const SceneGenConfig gen = scene_gen_from_config(config);
  const CameraRigConfig rig = rig_from_config(config);
  for (int i = 0; i < config.n_train_scenes; ++i)
    data.train.push_back(make_scene_bundle(generate_scene(config.seed * 1000 + i, gen), grid, rig));
  for (int i = 0; i < config.n_heldout_scenes; ++i)
    data.heldout.push_back(
        make_scene_bundle(generate_scene(config.seed * 1000 + 500 + i, gen), grid, rig));
  return data;
}

template <typename Scalar>
std::vector<SceneCache<Scalar>> make_scene_caches(const std::vector<SceneBundle>& bundles,
                                                  const ModelPlans<Scalar>& plans,
                                                  const ModelSetup& setup) {
  std::vector<SceneCache<Scalar>> caches;
  caches.reserve(bundles.size());
  for (const auto& bundle : bundles) caches.push_back(make_scene_cache(bundle, plans, setup));
  return caches;
}

}  // namespace voxdet
