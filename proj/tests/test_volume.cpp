#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "voxdet/encoder.hpp"
#include "voxdet/scene.hpp"
#include "voxdet/train.hpp"
#include "voxdet/volume.hpp"

using namespace voxdet;

namespace {

ViewVolume<double> scalar_volume(std::initializer_list<double> values,
                                 std::initializer_list<bool> valid) {
  ViewVolume<double> v;
  v.data.resize(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double x : values) v.data(i++, 0) = x;
  v.valid.assign(valid.begin(), valid.end());
  return v;
}

ViewVolume<double> rgb_volume(const ViewVolume<double>& like, double value) {
  ViewVolume<double> v;
  v.data = MatXd::Constant(like.data.rows(), 3, value);
  v.valid = like.valid;
  for (Eigen::Index r = 0; r < v.data.rows(); ++r)
    if (!v.valid[r]) v.data.row(r).setZero();
  return v;
}

CameraViewd make_view(double fx, double fy, double cx, double cy, int w, int h) {
  CameraViewd view;
  view.intrinsics = {fx, fy, cx, cy, w, h};
  view.image = MatXd::Zero(w * h, 3);
  return view;
}

}  // namespace

TEST_CASE("aggregate: two views with features 1 and 3") {
  const auto a = scalar_volume({1.0}, {true});
  const auto b = scalar_volume({3.0}, {true});
  const auto vol = aggregate<double>({a, b}, {rgb_volume(a, 0.2), rgb_volume(b, 0.4)});
  CHECK(vol.v_avg(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(vol.v_var(0, 0) == doctest::Approx(1.0).epsilon(1e-15));  // population variance
  CHECK(vol.m_p(0) == 2);
  CHECK(vol.rgb_avg(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("aggregate: single valid view has zero variance") {
  const auto a = scalar_volume({5.0, 0.0}, {true, false});
  const auto b = scalar_volume({0.0, 0.0}, {false, false});
  const auto vol = aggregate<double>({a, b}, {rgb_volume(a, 0.1), rgb_volume(b, 0.0)});
  CHECK(vol.m_p(0) == 1);
  CHECK(vol.v_avg(0, 0) == 5.0);
  CHECK(vol.v_var(0, 0) == 0.0);
  // zero effective views: everything zero
  CHECK(vol.m_p(1) == 0);
  CHECK(vol.v_avg(1, 0) == 0.0);
  CHECK(vol.v_var(1, 0) == 0.0);
  CHECK(vol.rgb_avg.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("permuting views leaves the aggregate unchanged") {
  Rng rng(7, "volume-perm");
  const int nvox = 16, c = 3, n_views = 5;
  std::vector<ViewVolume<double>> feats, rgbs;
  for (int i = 0; i < n_views; ++i) {
    ViewVolume<double> v;
    v.data.resize(nvox, c);
    v.valid.resize(nvox);
    for (int r = 0; r < nvox; ++r) {
      const bool valid = rng.uniform() < 0.7;
      v.valid[r] = valid;
      for (int k = 0; k < c; ++k) v.data(r, k) = valid ? rng.uniform(-2, 2) : 0.0;
    }
    rgbs.push_back(rgb_volume(v, rng.uniform()));
    feats.push_back(std::move(v));
  }
  const auto base = aggregate(feats, rgbs);
  std::vector<ViewVolume<double>> pf{feats[3], feats[0], feats[4], feats[2], feats[1]};
  std::vector<ViewVolume<double>> pr{rgbs[3], rgbs[0], rgbs[4], rgbs[2], rgbs[1]};
  const auto perm = aggregate(pf, pr);
  CHECK((base.v_avg - perm.v_avg).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((base.v_var - perm.v_var).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((base.m_p - perm.m_p).cwiseAbs().maxCoeff() == 0);

  // identical input order is bit-identical
  const auto again = aggregate(feats, rgbs);
  CHECK((base.v_avg - again.v_avg).cwiseAbs().maxCoeff() == 0.0);
  CHECK((base.v_var - again.v_var).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("population variance equals E[V^2] - E[V]^2") {
  Rng rng(8, "volume-var");
  const int nvox = 32, c = 4, n_views = 6;
  std::vector<ViewVolume<double>> feats, rgbs;
  for (int i = 0; i < n_views; ++i) {
    ViewVolume<double> v;
    v.data.resize(nvox, c);
    v.valid.resize(nvox);
    for (int r = 0; r < nvox; ++r) {
      v.valid[r] = rng.uniform() < 0.8;
      for (int k = 0; k < c; ++k) v.data(r, k) = v.valid[r] ? rng.uniform(-1, 1) : 0.0;
    }
    rgbs.push_back(rgb_volume(v, 0.5));
    feats.push_back(std::move(v));
  }
  const auto vol = aggregate(feats, rgbs);
  for (int r = 0; r < nvox; ++r) {
    if (vol.m_p(r) == 0) continue;
    for (int k = 0; k < c; ++k) {
      double sum = 0, sum_sq = 0;
      for (int i = 0; i < n_views; ++i)
        if (feats[i].valid[r]) {
          sum += feats[i].data(r, k);
          sum_sq += feats[i].data(r, k) * feats[i].data(r, k);
        }
      const double mean = sum / vol.m_p(r);
      const double var = sum_sq / vol.m_p(r) - mean * mean;
      CHECK(vol.v_var(r, k) == doctest::Approx(var).epsilon(1e-9));
    }
  }
}

TEST_CASE("nearest-neighbor lookup rounds half up") {
  // single voxel projecting to feature pixel (10.4, 7.6) -> integer (10, 8)
  CameraViewd view = make_view(100, 100, 0, 0, 16, 16);
  Rng rng(9, "volume-nn");
  for (Eigen::Index i = 0; i < view.image.rows(); ++i)
    for (int ch = 0; ch < 3; ++ch) view.image(i, ch) = rng.uniform();
  GridSpecd grid{1, 1, 1, Vec3d(0.104 - 0.005, 0.076 - 0.005, 0.995), Vec3d(0.01, 0.01, 0.01)};
  FeatureMap<double> fmap;
  fmap.channels = 2;
  fmap.height = 16;
  fmap.width = 16;
  fmap.data.resize(16 * 16, 2);
  for (Eigen::Index r = 0; r < fmap.data.rows(); ++r) {
    fmap.data(r, 0) = static_cast<double>(r);
    fmap.data(r, 1) = rng.uniform();
  }
  const auto vv = build_view_volume(view, fmap, grid);  // downsample = 16/16 = 1
  REQUIRE(vv.valid[0]);
  CHECK(vv.data(0, 0) == doctest::Approx(8 * 16 + 10).epsilon(1e-15));
}

TEST_CASE("grid fully behind the camera scatters nothing") {
  CameraViewd view = make_view(100, 100, 8, 8, 16, 16);
  GridSpecd grid{2, 2, 2, Vec3d(-1, -1, -5), Vec3d(0.5, 0.5, 0.5)};
  FeatureMap<double> fmap;
  fmap.channels = 1;
  fmap.height = 16;
  fmap.width = 16;
  fmap.data = MatXd::Ones(256, 1);
  const auto vv = build_view_volume(view, fmap, grid);
  for (int r = 0; r < grid.num_voxels(); ++r) {
    CHECK_FALSE(vv.valid[r]);
    CHECK(vv.data(r, 0) == 0.0);
  }
}

TEST_CASE("constant feature map fills every valid voxel with that constant") {
  CameraViewd view = make_view(20, 20, 7.5, 7.5, 16, 16);
  GridSpecd grid{4, 4, 4, Vec3d(-1, -1, 1), Vec3d(0.5, 0.5, 0.5)};
  FeatureMap<double> fmap;
  fmap.channels = 3;
  fmap.height = 4;
  fmap.width = 4;
  fmap.data = MatXd::Constant(16, 3, 0.77);
  const auto vv = build_view_volume(view, fmap, grid);
  int n_valid = 0;
  for (int r = 0; r < grid.num_voxels(); ++r)
    if (vv.valid[r]) {
      ++n_valid;
      CHECK(vv.data(r, 0) == 0.77);
    }
  CHECK(n_valid > 0);
}

TEST_CASE("augment_cell layout and toggles") {
  AugmentedVolume<double> vol;
  const int c = 32;
  vol.v_avg = MatXd::Constant(2, c, 1.0);
  vol.v_var = MatXd::Constant(2, c, 2.0);
  vol.rgb_avg = MatXd::Constant(2, 3, 3.0);
  vol.rgb_var = MatXd::Constant(2, 3, 4.0);
  vol.m_p = VecXi::Constant(2, 1);
  vol.v_avg.row(1).setZero();
  vol.v_var.row(1).setZero();
  vol.rgb_avg.row(1).setZero();
  vol.rgb_var.row(1).setZero();

  const VecXd full = augment_cell(vol, 0);
  REQUIRE(full.size() == 2 * c + 6);
  CHECK(full(0) == 1.0);
  CHECK(full(c) == 2.0);
  CHECK(full(2 * c) == 3.0);
  CHECK(full(2 * c + 3) == 4.0);
  CHECK(augment_cell(vol, 1).cwiseAbs().maxCoeff() == 0.0);

  FeatureToggles avg_only{false, false};
  CHECK(augment_cell(vol, 0, avg_only).size() == c);
  FeatureToggles avg_var{true, false};
  CHECK(augment_cell(vol, 0, avg_var).size() == 2 * c);
  CHECK_THROWS_AS(augment_cell(vol, 5), ContractViolation);
}

TEST_CASE("oracle equivalence on a 4^3 grid") {
  // full per-cell recomputation from raw projections must match aggregate()
  TrainConfig cfg;
  cfg.grid_nx = cfg.grid_ny = 4;
  cfg.grid_nz = 4;
  cfg.n_input_views = 3;
  cfg.n_novel_views = 2;
  cfg.encoder_channels = 4;
  cfg.image_width = 32;
  cfg.image_height = 32;
  cfg.fx = cfg.fy = 20;
  const GridSpecd grid = grid_from_config<double>(cfg);
  const SceneBundle bundle = make_scene_bundle(generate_scene(11, scene_gen_from_config(cfg)),
                                               grid, rig_from_config(cfg));

  ad::ParameterStore<double> store;
  EncoderDims dims{32, 32, 4};
  const EncoderPlans eplans = make_encoder_plans(dims);
  init_encoder_params(store, 4, 21);

  std::vector<CameraViewd> views(bundle.views.begin(), bundle.views.begin() + 3);
  std::vector<FeatureMap<double>> fmaps;
  std::vector<ViewVolume<double>> feats, rgbs;
  for (const auto& view : views) {
    fmaps.push_back(encode_view_values(store, eplans, view.image));
    feats.push_back(build_view_volume(view, fmaps.back(), grid));
    rgbs.push_back(build_rgb_view_volume(view, grid, 4));
  }
  const auto vol = aggregate(feats, rgbs);

  const MatXd centers = voxel_centers(grid);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) {
    const Vec3d p = centers.row(r).transpose();
    int m = 0;
    VecXd sum = VecXd::Zero(4), sum_sq = VecXd::Zero(4);
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto proj = project_point<double>(p, views[i], 4);
      if (!proj.valid) continue;
      ++m;
      const int pu = round_half_up(proj.u), pv = round_half_up(proj.v);
      const VecXd f = fmaps[i].data.row(pv * fmaps[i].width + pu).transpose();
      sum += f;
      sum_sq += f.cwiseProduct(f);
    }
    CHECK(vol.m_p(r) == m);
    if (m == 0) continue;
    const VecXd mean = sum / m;
    const VecXd var = sum_sq / m - mean.cwiseProduct(mean);
    CHECK((vol.v_avg.row(r).transpose() - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((vol.v_var.row(r).transpose() - var).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("gt-depth scatter keeps surface voxels and drops free space") {
  TrainConfig cfg;
  cfg.grid_nx = cfg.grid_ny = 16;
  cfg.grid_nz = 8;
  cfg.n_input_views = 6;
  cfg.n_novel_views = 2;
  cfg.encoder_channels = 4;
  cfg.min_objects = cfg.max_objects = 2;
  const GridSpecd grid = grid_from_config<double>(cfg);
  const SceneBundle bundle = make_scene_bundle(generate_scene(13, scene_gen_from_config(cfg)),
                                               grid, rig_from_config(cfg));

  ad::ParameterStore<double> store;
  EncoderDims dims{cfg.image_height, cfg.image_width, 4};
  const EncoderPlans eplans = make_encoder_plans(dims);
  init_encoder_params(store, 4, 22);

  std::vector<CameraViewd> views(bundle.views.begin(), bundle.views.begin() + cfg.n_input_views);
  std::vector<VecXd> depths(bundle.depth_maps.begin(),
                            bundle.depth_maps.begin() + cfg.n_input_views);
  std::vector<FeatureMap<double>> fmaps;
  std::vector<ViewVolume<double>> feats, rgbs;
  for (const auto& view : views) {
    fmaps.push_back(encode_view_values(store, eplans, view.image));
    feats.push_back(build_view_volume(view, fmaps.back(), grid));
    rgbs.push_back(build_rgb_view_volume(view, grid, 4));
  }
  const auto plain = aggregate(feats, rgbs);
  const auto gated = build_gt_depth_volume(views, fmaps, grid, depths);

  // a voxel on an object surface keeps features; count which occupied voxels got any
  const VecXi occ = occupancy_grid(bundle.spec, grid);
  int surface_kept = 0, occupied = 0;
  for (Eigen::Index r = 0; r < occ.size(); ++r)
    if (occ(r) == 1) {
      ++occupied;
      if (gated.m_p(r) > 0) ++surface_kept;
    }
  CHECK(occupied > 0);
  CHECK(surface_kept > 0);

  // free-space voxels (not occupied) with features strictly decrease
  int plain_free = 0, gated_free = 0;
  for (Eigen::Index r = 0; r < occ.size(); ++r)
    if (occ(r) == 0) {
      if (plain.m_p(r) > 0) ++plain_free;
      if (gated.m_p(r) > 0) ++gated_free;
    }
  CHECK(gated_free < plain_free);

  // a voxel well in front of any surface contributes nothing: pick the first
  // input camera and a voxel 1 m before its first hit along the optical axis
  const auto& view0 = views[0];
  const Rayd axis = pixel_to_ray<double>(view0.intrinsics.cx, view0.intrinsics.cy, view0);
  const RayHit hit = trace_scene_ray(bundle.spec, axis);
  const Vec3d free_point = axis.at(hit.t - 1.0);
  // find that voxel
  const Vec3d rel = (free_point - grid.origin).cwiseQuotient(grid.voxel_size);
  const int idx = grid.index(static_cast<int>(rel.x()), static_cast<int>(rel.y()),
                             static_cast<int>(rel.z()));
  const ViewScatter<double> sc0 = make_view_scatter_gt_depth(
      view0, voxel_centers(grid), depths[0], grid, 4);
  CHECK(sc0.mask(idx) == 0.0);
}

TEST_CASE("differentiable aggregation matches the value path") {
  TrainConfig cfg;
  cfg.grid_nx = cfg.grid_ny = 6;
  cfg.grid_nz = 4;
  cfg.n_input_views = 4;
  cfg.n_novel_views = 2;
  cfg.encoder_channels = 4;
  const GridSpecd grid = grid_from_config<double>(cfg);
  const SceneBundle bundle = make_scene_bundle(generate_scene(17, scene_gen_from_config(cfg)),
                                               grid, rig_from_config(cfg));

  ad::ParameterStore<double> store;
  EncoderDims dims{cfg.image_height, cfg.image_width, 4};
  const EncoderPlans eplans = make_encoder_plans(dims);
  init_encoder_params(store, 4, 23);

  std::vector<CameraViewd> views(bundle.views.begin(), bundle.views.begin() + cfg.n_input_views);
  std::vector<FeatureMap<double>> fmaps;
  std::vector<ViewVolume<double>> feats, rgbs;
  std::vector<ViewScatter<double>> scatters;
  const MatXd centers = voxel_centers(grid);
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> fmap_vars;
  for (const auto& view : views) {
    fmaps.push_back(encode_view_values(store, eplans, view.image));
    feats.push_back(build_view_volume(view, fmaps.back(), grid));
    rgbs.push_back(build_rgb_view_volume(view, grid, 4));
    scatters.push_back(make_view_scatter(view, centers, 4));
    fmap_vars.push_back(tape.constant(fmaps.back().data));
  }
  const auto value_path = aggregate(feats, rgbs);
  const auto graph = build_volume_graph(tape, fmap_vars, scatters, true);
  CHECK((tape.value(graph.v_avg) - value_path.v_avg).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(graph.v_var) - value_path.v_var).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(graph.rgb_avg) - value_path.rgb_avg).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.value(graph.rgb_var) - value_path.rgb_var).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((graph.m_p - value_path.m_p).cwiseAbs().maxCoeff() == 0);
}
