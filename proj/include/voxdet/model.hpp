#pragma once

#include <memory>
#include <string>
#include <vector>

#include "voxdet/config.hpp"
#include "voxdet/detection.hpp"
#include "voxdet/encoder.hpp"
#include "voxdet/nerf.hpp"
#include "voxdet/opacity.hpp"
#include "voxdet/scene.hpp"
#include "voxdet/volume.hpp"

namespace voxdet {

// Wires the modules into the joint model: a shared encoder feeds both the
// voxel volume (detection branch) and ray feature sampling (NeRF branch);
// one G-MLP parameter set serves ray samples and voxel centers when sharing
// is enabled.

struct ModelSetup {
  FeatureToggles toggles;
  int encoder_channels = 32;
  int pe_bands = 10;
  int mlp_width = 256;
  int n_classes = 3;
  bool share_gmlp = true;
  bool detection_branch = true;
  bool modulate_full = false;
  GeometryMode geometry_mode = GeometryMode::kNerfOpacity;
  SampleSource sample_source = SampleSource::kImage;
  bool use_photo_loss = true;
  bool use_depth_loss = true;

  int feature_dim() const { return augmented_dim(encoder_channels, toggles); }
  int gmlp_in_dim() const { return feature_dim() + 6 * pe_bands; }
  int head_in_dim() const {
    const bool doubled = modulate_full && geometry_mode == GeometryMode::kNerfOpacity &&
                         toggles.use_var;
    return encoder_channels * (doubled ? 2 : 1);
  }
  bool nerf_branch_active() const { return use_photo_loss || use_depth_loss; }
  // the G-MLP evaluated at voxel centers
  std::string det_gmlp_prefix() const { return share_gmlp ? "gmlp." : "gmlp_det."; }
};

inline ModelSetup make_model_setup(const TrainConfig& c) {
  ModelSetup s;
  s.toggles.use_var = c.use_var;
  s.toggles.use_rgb = c.use_rgb;
  s.encoder_channels = c.encoder_channels;
  s.pe_bands = c.pe_bands;
  s.mlp_width = c.mlp_width;
  s.n_classes = c.n_classes;
  s.share_gmlp = c.share_gmlp;
  s.detection_branch = c.detection_branch;
  s.modulate_full = c.modulate_full;
  s.geometry_mode = c.geometry_mode;
  s.sample_source = c.sample_source;
  s.use_photo_loss = c.use_photo_loss;
  s.use_depth_loss = c.use_depth_loss;
  if (s.geometry_mode == GeometryMode::kCostVolume)
    VOXDET_REQUIRE(s.toggles.use_var, "cost-volume geometry requires variance features");
  return s;
}

template <typename Scalar>
void init_model_params(ad::ParameterStore<Scalar>& store, const ModelSetup& setup,
                       std::uint64_t seed) {
  init_encoder_params(store, setup.encoder_channels, seed);
  GMlpDims gdims{setup.gmlp_in_dim(), setup.mlp_width};
  init_gmlp_params(store, gdims, seed, "gmlp.");
  init_cmlp_params(store, setup.mlp_width, seed, "cmlp.");
  if (setup.detection_branch) {
    if (setup.geometry_mode == GeometryMode::kNerfOpacity && !setup.share_gmlp)
      init_gmlp_params(store, gdims, seed, "gmlp_det.");
    if (setup.geometry_mode == GeometryMode::kCostVolume)
      init_cost_volume_params(store, setup.encoder_channels, seed);
    init_head_params(store, setup.head_in_dim(), setup.n_classes, seed);
  }
}

// ---------------------------------------------------------------------------
// Per-scene immutable caches

template <typename Scalar>
CameraView<Scalar> cast_view(const CameraViewd& view) {
  CameraView<Scalar> out;
  out.intrinsics.fx = Scalar(view.intrinsics.fx);
  out.intrinsics.fy = Scalar(view.intrinsics.fy);
  out.intrinsics.cx = Scalar(view.intrinsics.cx);
  out.intrinsics.cy = Scalar(view.intrinsics.cy);
  out.intrinsics.width = view.intrinsics.width;
  out.intrinsics.height = view.intrinsics.height;
  out.pose.rotation = view.pose.rotation.cast<Scalar>();
  out.pose.translation = view.pose.translation.cast<Scalar>();
  out.image = view.image.cast<Scalar>();
  return out;
}

template <typename Scalar>
struct SceneCache {
  const SceneBundle* bundle = nullptr;
  GridSpec<Scalar> grid;
  std::vector<CameraView<Scalar>> input_views;
  std::vector<CameraView<Scalar>> novel_views;
  std::vector<VecX<Scalar>> novel_depths;
  std::vector<ViewScatter<Scalar>> vox_scatters;     // nearest-neighbor scatter per input view
  std::vector<ViewScatter<Scalar>> vox_scatters_gt;  // depth-gated variant (gt-depth mode only)
  DetectionTargets<Scalar> targets;
};

// Shared across scenes: grid-level constants and encoder plans.
template <typename Scalar>
struct ModelPlans {
  GridSpec<Scalar> grid;
  EncoderPlans encoder;
  ad::GatherPlanPtr grid_conv;   // 3x3x3 neighborhoods for head / cost volume
  MatX<Scalar> voxel_pe;         // nvox x 6L
  MatX<Scalar> voxel_centers;    // nvox x 3
};

template <typename Scalar>
ModelPlans<Scalar> make_model_plans(const TrainConfig& config) {
  ModelPlans<Scalar> plans;
  plans.grid = grid_from_config<Scalar>(config);
  EncoderDims dims;
  dims.in_height = config.image_height;
  dims.in_width = config.image_width;
  dims.channels = config.encoder_channels;
  plans.encoder = make_encoder_plans(dims);
  plans.grid_conv = conv3x3x3_plan(plans.grid);
  plans.voxel_centers = voxel_centers(plans.grid);
  MatX<Scalar> norm(plans.voxel_centers.rows(), 3);
  for (Eigen::Index r = 0; r < norm.rows(); ++r)
    norm.row(r) =
        plans.grid.normalize_point(Vec3<Scalar>(plans.voxel_centers.row(r).transpose())).transpose();
  plans.voxel_pe = positional_encoding_rows(norm, config.pe_bands);
  return plans;
}

template <typename Scalar>
SceneCache<Scalar> make_scene_cache(const SceneBundle& bundle, const ModelPlans<Scalar>& plans,
                                    const ModelSetup& setup) {
  SceneCache<Scalar> cache;
  cache.bundle = &bundle;
  cache.grid = plans.grid;
  for (int i = 0; i < bundle.n_input_views; ++i)
    cache.input_views.push_back(cast_view<Scalar>(bundle.views[i]));
  for (std::size_t i = bundle.n_input_views; i < bundle.views.size(); ++i) {
    cache.novel_views.push_back(cast_view<Scalar>(bundle.views[i]));
    cache.novel_depths.push_back(bundle.depth_maps[i].cast<Scalar>());
  }
  for (const auto& view : cache.input_views)
    cache.vox_scatters.push_back(make_view_scatter(view, plans.voxel_centers, 4));
  if (setup.geometry_mode == GeometryMode::kGtDepth)
    for (int i = 0; i < bundle.n_input_views; ++i)
      cache.vox_scatters_gt.push_back(make_view_scatter_gt_depth(
          cache.input_views[i], plans.voxel_centers,
          VecX<Scalar>(bundle.depth_maps[i].cast<Scalar>()), plans.grid, 4));
  if (setup.detection_branch) {
    std::vector<Box3D<Scalar>> boxes;
    for (const auto& b : bundle.boxes) {
      Box3D<Scalar> box;
      box.center = b.center.cast<Scalar>();
      box.size = b.size.cast<Scalar>();
      box.label = b.label;
      boxes.push_back(box);
    }
    cache.targets = assign_targets(plans.grid, boxes);
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Detection branch graph

template <typename Scalar>
struct DetectionForward {
  VolumeGraph<Scalar> volume;
  ad::Var<Scalar> sigma;       // voxel densities (nerf-opacity mode)
  ad::Var<Scalar> alpha;       // opacity field (nerf-opacity mode)
  ad::Var<Scalar> head_input;  // modulated features
  HeadGraph<Scalar> head;
};

template <typename Scalar>
DetectionForward<Scalar> build_detection_graph(ad::Tape<Scalar>& tape,
                                               ad::ParameterStore<Scalar>& store,
                                               const ModelSetup& setup,
                                               const ModelPlans<Scalar>& plans,
                                               const SceneCache<Scalar>& cache,
                                               const std::vector<ad::Var<Scalar>>& fmap_vars) {
  DetectionForward<Scalar> out;
  const auto& scatters = setup.geometry_mode == GeometryMode::kGtDepth ? cache.vox_scatters_gt
                                                                       : cache.vox_scatters;
  out.volume = build_volume_graph(tape, fmap_vars, scatters, setup.toggles.use_var);

  switch (setup.geometry_mode) {
    case GeometryMode::kNerfOpacity: {
      auto pe = tape.constant(plans.voxel_pe);
      auto feats = assemble_voxel_features(tape, out.volume, setup.toggles, pe);
      out.sigma = voxel_densities_graph(tape, store, feats, out.volume.m_p,
                                        setup.det_gmlp_prefix());
      out.alpha = tape.affine(tape.exp(tape.affine(out.sigma, Scalar(-1), Scalar(0))), Scalar(-1),
                              Scalar(1));
      auto base = setup.modulate_full && setup.toggles.use_var
                      ? tape.concat_cols({out.volume.v_avg, out.volume.v_var})
                      : out.volume.v_avg;
      out.head_input = modulate_volume_graph(tape, out.alpha, base);
      break;
    }
    case GeometryMode::kCostVolume: {
      auto w = cost_volume_graph(tape, store, out.volume.v_var, plans.grid_conv);
      out.head_input = modulate_volume_graph(tape, w, out.volume.v_avg);
      break;
    }
    case GeometryMode::kGtDepth:
    case GeometryMode::kNone:
      out.head_input = out.volume.v_avg;
      break;
  }
  out.head = head_forward(tape, store, out.head_input, plans.grid_conv);
  return out;
}

// ---------------------------------------------------------------------------
// NeRF branch

template <typename Scalar>
struct RayBatch {
  int n_rays = 0, n_samples = 0;
  Scalar delta = 0;
  MatX<Scalar> points;        // (R*N) x 3 world positions, ray-major
  MatX<Scalar> dirs;          // (R*N) x 3 unit view directions
  MatX<Scalar> points_norm;   // (R*N) x 3 grid-normalized positions
  MatX<Scalar> t_matrix;      // R x N distances
  MatX<Scalar> target_rgb;    // R x 3
  VecX<Scalar> target_depth;  // R
  VecXi view_idx;             // provenance: novel view per ray
  MatXi pixels;               // R x 2 (u, v)
};

// 2048-style random ray batch drawn from the held-out novel views.
template <typename Scalar>
RayBatch<Scalar> sample_ray_batch(const SceneCache<Scalar>& cache, const ModelPlans<Scalar>& plans,
                                  const TrainConfig& config, Rng& pixel_rng, Rng& t_rng) {
  VOXDET_REQUIRE(!cache.novel_views.empty(), "sample_ray_batch: no novel views");
  RayBatch<Scalar> batch;
  batch.n_rays = config.rays_per_iter;
  batch.n_samples = config.n_samples;
  batch.delta = Scalar((config.far - config.near) / config.n_samples);
  const int r_total = batch.n_rays * batch.n_samples;
  batch.points.resize(r_total, 3);
  batch.dirs.resize(r_total, 3);
  batch.points_norm.resize(r_total, 3);
  batch.t_matrix.resize(batch.n_rays, batch.n_samples);
  batch.target_rgb.resize(batch.n_rays, 3);
  batch.target_depth.resize(batch.n_rays);
  batch.view_idx.resize(batch.n_rays);
  batch.pixels.resize(batch.n_rays, 2);

  for (int r = 0; r < batch.n_rays; ++r) {
    const int vi = static_cast<int>(pixel_rng.index(cache.novel_views.size()));
    const auto& view = cache.novel_views[vi];
    const int u = static_cast<int>(pixel_rng.index(view.intrinsics.width));
    const int v = static_cast<int>(pixel_rng.index(view.intrinsics.height));
    batch.view_idx(r) = vi;
    batch.pixels(r, 0) = u;
    batch.pixels(r, 1) = v;
    const Ray<Scalar> ray = pixel_to_ray(Scalar(u), Scalar(v), view);
    // stratified bins during training; the jitter stream is seeded so runs
    // with equal seeds reproduce exactly
    const VecXd t = sample_ray_points(config.near, config.far, config.n_samples,
                                      RaySampleMode::kStratified, &t_rng);
    for (int i = 0; i < batch.n_samples; ++i) {
      const Scalar ti = Scalar(t(i));
      batch.t_matrix(r, i) = ti;
      const Vec3<Scalar> p = ray.at(ti);
      batch.points.row(r * batch.n_samples + i) = p.transpose();
      batch.dirs.row(r * batch.n_samples + i) = ray.direction.transpose();
      batch.points_norm.row(r * batch.n_samples + i) =
          plans.grid.normalize_point(p).transpose();
    }
    batch.target_rgb.row(r) = view.image.row(v * view.intrinsics.width + u);
    batch.target_depth(r) = cache.novel_depths[vi](v * view.intrinsics.width + u);
  }
  return batch;
}

template <typename Scalar>
struct NerfForward {
  RenderGraph<Scalar> render;
  NerfLosses<Scalar> losses;
  VecXi empty_count;  // per ray
  VecXd keep;         // 0/1 per ray
};

// Per-point features either from the source-view feature maps (image mode)
// or by trilinear interpolation of the detection volume (volume mode).
template <typename Scalar>
NerfForward<Scalar> build_nerf_graph(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                                     const ModelSetup& setup, const ModelPlans<Scalar>& plans,
                                     const SceneCache<Scalar>& cache,
                                     const std::vector<ad::Var<Scalar>>& fmap_vars,
                                     const VolumeGraph<Scalar>* det_volume,
                                     const RayBatch<Scalar>& batch) {
  const int n_points = batch.n_rays * batch.n_samples;
  ad::Var<Scalar> feats;
  VecXi point_m(n_points);

  if (setup.sample_source == SampleSource::kImage) {
    std::vector<ViewScatter<Scalar>> scatters;
    scatters.reserve(cache.input_views.size());
    for (const auto& view : cache.input_views)
      scatters.push_back(make_point_scatter_bilinear(view, batch.points, 4));
    auto pg = build_volume_graph(tape, fmap_vars, scatters, setup.toggles.use_var);
    point_m = pg.m_p;
    auto pe = tape.constant(positional_encoding_rows(batch.points_norm, setup.pe_bands));
    feats = assemble_voxel_features(tape, pg, setup.toggles, pe);
  } else {
    VOXDET_REQUIRE(det_volume != nullptr, "build_nerf_graph: volume sampling needs a voxel volume");
    const auto tri = make_trilinear_plan(plans.grid, batch.points);
    std::vector<ad::Var<Scalar>> parts;
    parts.push_back(tape.gather(det_volume->v_avg, tri.plan));
    if (setup.toggles.use_var) parts.push_back(tape.gather(det_volume->v_var, tri.plan));
    if (setup.toggles.use_rgb) {
      parts.push_back(tape.gather(det_volume->rgb_avg, tri.plan));
      parts.push_back(tape.gather(det_volume->rgb_var, tri.plan));
    }
    parts.push_back(tape.constant(positional_encoding_rows(batch.points_norm, setup.pe_bands)));
    feats = tape.concat_cols(parts);
    // a point is empty when outside the grid or supported by no observed voxel
    for (int p = 0; p < n_points; ++p) {
      double m = 0;
      if (tri.inside(p) != 0.0)
        for (int k = 0; k < 8; ++k)
          m += tri.plan->weight(p, k) * det_volume->m_p(tri.plan->idx(p, k));
      point_m(p) = m > 0 ? 1 : 0;
    }
  }

  NerfForward<Scalar> out;
  out.empty_count = VecXi::Zero(batch.n_rays);
  for (int r = 0; r < batch.n_rays; ++r)
    for (int i = 0; i < batch.n_samples; ++i)
      if (point_m(r * batch.n_samples + i) == 0) out.empty_count(r) += 1;
  out.keep = VecXd::Zero(batch.n_rays);
  for (int r = 0; r < batch.n_rays; ++r)
    out.keep(r) = ray_keep(out.empty_count(r), batch.n_samples) ? 1.0 : 0.0;

  auto gm = g_mlp(tape, store, feats, "gmlp.");
  auto rgb = c_mlp(tape, store, gm.latent, tape.constant(batch.dirs), "cmlp.");
  out.render = render_rays_graph(tape, gm.sigma, rgb, tape.constant(batch.t_matrix), batch.n_rays,
                                 batch.n_samples, batch.delta);
  out.losses = nerf_losses(tape, out.render, batch.target_rgb, batch.target_depth, out.keep,
                           setup.use_photo_loss, setup.use_depth_loss);
  return out;
}

// Encoder forward over all input views of a scene.
template <typename Scalar>
std::vector<ad::Var<Scalar>> encode_input_views(ad::Tape<Scalar>& tape,
                                                ad::ParameterStore<Scalar>& store,
                                                const ModelPlans<Scalar>& plans,
                                                const SceneCache<Scalar>& cache,
                                                bool trainable) {
  std::vector<ad::Var<Scalar>> fmaps;
  fmaps.reserve(cache.input_views.size());
  for (const auto& view : cache.input_views) {
    auto image = tape.constant(view.image);
    if (trainable) {
      fmaps.push_back(encode_view(tape, store, plans.encoder, image));
    } else {
      FeatureMap<Scalar> fm = encode_view_values(store, plans.encoder, view.image);
      fmaps.push_back(tape.constant(std::move(fm.data)));
    }
  }
  return fmaps;
}

}  // namespace voxdet
