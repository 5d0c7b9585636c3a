#pragma once

#include <memory>
#include <vector>

#include "voxdet/autodiff.hpp"
#include "voxdet/encoder.hpp"
#include "voxdet/geometry.hpp"

namespace voxdet {

// Scatter per-view image features into the voxel grid and aggregate the
// augmented statistics {V_avg, V_var, RGB_avg, RGB_var}. Feature lookups are
// nearest neighbor on the 1/4-resolution map (round half up); RGB statistics
// sample the full-resolution image bilinearly at the unscaled projection.
// Validity is shared between the two: a view is "effective" for a voxel when
// the projected depth is positive and the nearest feature-map pixel is in
// bounds, so M_p counts the same views for features and RGB.

template <typename Scalar>
struct ViewVolume {
  MatX<Scalar> data;          // nvox x C, zero where invalid
  std::vector<bool> valid;    // nvox
};

template <typename Scalar>
struct AugmentedVolume {
  MatX<Scalar> v_avg;    // nvox x C
  MatX<Scalar> v_var;    // nvox x C
  MatX<Scalar> rgb_avg;  // nvox x 3
  MatX<Scalar> rgb_var;  // nvox x 3
  VecXi m_p;             // nvox, effective view counts
};

struct FeatureToggles {
  bool use_var = true;
  bool use_rgb = true;
};

inline int augmented_dim(int channels, const FeatureToggles& t) {
  return channels + (t.use_var ? channels : 0) + (t.use_rgb ? 6 : 0);
}

// Clamped bilinear image sample at pixel-center coordinates (u, v).
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sample_bilinear(const MatX<Scalar>& img, int width,
                                                         int height, double u, double v) {
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(width - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(height - 1));
  const int u0 = std::min(static_cast<int>(std::floor(uc)), width - 2 >= 0 ? width - 2 : 0);
  const int v0 = std::min(static_cast<int>(std::floor(vc)), height - 2 >= 0 ? height - 2 : 0);
  const int u1 = std::min(u0 + 1, width - 1);
  const int v1 = std::min(v0 + 1, height - 1);
  const double fu = uc - u0, fv = vc - v0;
  return (img.row(v0 * width + u0) * Scalar((1 - fu) * (1 - fv)) +
          img.row(v0 * width + u1) * Scalar(fu * (1 - fv)) +
          img.row(v1 * width + u0) * Scalar((1 - fu) * fv) +
          img.row(v1 * width + u1) * Scalar(fu * fv));
}

// Per-view voxel correspondence, reusable across training iterations.
template <typename Scalar>
struct ViewScatter {
  ad::GatherPlanPtr plan;  // nvox rows, 1 tap into feature-map rows; idx -1 if invalid
  VecXd mask;              // nvox, 1.0 where the projection is effective
  MatX<Scalar> rgb;        // nvox x 3, bilinear full-res image color (zero if invalid)
};

template <typename Scalar>
ViewScatter<Scalar> make_view_scatter(const CameraView<Scalar>& view, const MatX<Scalar>& centers,
                                      int downsample = 4) {
  const int wf = view.intrinsics.width / downsample;
  const int hf = view.intrinsics.height / downsample;
  const Eigen::Index nvox = centers.rows();
  ViewScatter<Scalar> out;
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx = MatXi::Constant(nvox, 1, -1);
  plan->weight = MatXd::Ones(nvox, 1);
  out.mask = VecXd::Zero(nvox);
  out.rgb = MatX<Scalar>::Zero(nvox, 3);
  for (Eigen::Index r = 0; r < nvox; ++r) {
    const Vec3<Scalar> p = centers.row(r).transpose();
    const auto proj = project_point(p, view, downsample);
    if (!proj.valid) continue;
    const int pu = round_half_up(static_cast<double>(proj.u));
    const int pv = round_half_up(static_cast<double>(proj.v));
    plan->idx(r, 0) = pv * wf + pu;
    out.mask(r) = 1.0;
    const double uf = static_cast<double>(proj.u) * downsample;
    const double vf = static_cast<double>(proj.v) * downsample;
    out.rgb.row(r) =
        sample_bilinear(view.image, view.intrinsics.width, view.intrinsics.height, uf, vf);
  }
  out.plan = std::move(plan);
  return out;
}

// Depth-gated variant: a view contributes only where the voxel center's
// distance to the camera matches the view's depth map within half a voxel
// diagonal (the ground-truth-depth scatter ablation). Depth maps hold
// distance along the ray, sampled at the nearest full-resolution pixel.
template <typename Scalar>
ViewScatter<Scalar> make_view_scatter_gt_depth(const CameraView<Scalar>& view,
                                               const MatX<Scalar>& centers,
                                               const VecX<Scalar>& depth_map,
                                               const GridSpec<Scalar>& grid, int downsample = 4) {
  const ViewScatter<Scalar> base = make_view_scatter(view, centers, downsample);
  const Scalar half_diag = Scalar(0.5) * grid.voxel_size.norm();
  const Vec3<Scalar> cam = view.pose.center();
  ViewScatter<Scalar> out;
  out.mask = base.mask;
  out.rgb = base.rgb;
  auto plan = std::make_shared<ad::GatherPlan>(*base.plan);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) {
    if (out.mask(r) == 0.0) continue;
    const Vec3<Scalar> p = centers.row(r).transpose();
    const auto proj = project_point(p, view, downsample);
    const int ui = std::min(std::max(round_half_up(static_cast<double>(proj.u) * downsample), 0),
                            view.intrinsics.width - 1);
    const int vi = std::min(std::max(round_half_up(static_cast<double>(proj.v) * downsample), 0),
                            view.intrinsics.height - 1);
    const Scalar d_map = depth_map(vi * view.intrinsics.width + ui);
    const Scalar d_vox = (p - cam).norm();
    if (std::abs(d_vox - d_map) > half_diag) {
      out.mask(r) = 0.0;
      out.rgb.row(r).setZero();
      plan->idx(r, 0) = -1;
    }
  }
  out.plan = std::move(plan);
  return out;
}

// One view's scattered feature volume (value form).
template <typename Scalar>
ViewVolume<Scalar> build_view_volume(const CameraView<Scalar>& view, const FeatureMap<Scalar>& fmap,
                                     const GridSpec<Scalar>& grid) {
  const MatX<Scalar> centers = voxel_centers(grid);
  const int downsample = view.intrinsics.width / fmap.width;
  VOXDET_REQUIRE(downsample >= 1 && view.intrinsics.width % fmap.width == 0 &&
                     view.intrinsics.height / downsample == fmap.height,
                 "build_view_volume: feature map does not match view");
  const ViewScatter<Scalar> sc = make_view_scatter(view, centers, downsample);
  ViewVolume<Scalar> out;
  out.data = MatX<Scalar>::Zero(centers.rows(), fmap.channels);
  out.valid.assign(centers.rows(), false);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) {
    if (sc.mask(r) == 0.0) continue;
    out.data.row(r) = fmap.data.row(sc.plan->idx(r, 0));
    out.valid[r] = true;
  }
  return out;
}

// RGB counterpart of build_view_volume (3-channel volume from the raw image).
template <typename Scalar>
ViewVolume<Scalar> build_rgb_view_volume(const CameraView<Scalar>& view,
                                         const GridSpec<Scalar>& grid, int downsample = 4) {
  const MatX<Scalar> centers = voxel_centers(grid);
  const ViewScatter<Scalar> sc = make_view_scatter(view, centers, downsample);
  ViewVolume<Scalar> out;
  out.data = sc.rgb;
  out.valid.assign(centers.rows(), false);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) out.valid[r] = sc.mask(r) != 0.0;
  return out;
}

// Mean and population variance over effective views only. Summation runs in
// input order, which is the documented deterministic reduction order.
template <typename Scalar>
AugmentedVolume<Scalar> aggregate(const std::vector<ViewVolume<Scalar>>& view_volumes,
                                  const std::vector<ViewVolume<Scalar>>& rgb_volumes) {
  VOXDET_REQUIRE(!view_volumes.empty(), "aggregate: at least one view required");
  VOXDET_REQUIRE(view_volumes.size() == rgb_volumes.size(),
                 "aggregate: feature/rgb view counts differ");
  const Eigen::Index nvox = view_volumes[0].data.rows();
  const Eigen::Index c = view_volumes[0].data.cols();
  AugmentedVolume<Scalar> out;
  out.v_avg = MatX<Scalar>::Zero(nvox, c);
  out.v_var = MatX<Scalar>::Zero(nvox, c);
  out.rgb_avg = MatX<Scalar>::Zero(nvox, 3);
  out.rgb_var = MatX<Scalar>::Zero(nvox, 3);
  out.m_p = VecXi::Zero(nvox);

  for (const auto& vv : view_volumes) {
    VOXDET_REQUIRE(vv.data.rows() == nvox && vv.data.cols() == c,
                   "aggregate: inconsistent volume shapes");
  }
  for (std::size_t i = 0; i < view_volumes.size(); ++i) {
    for (Eigen::Index r = 0; r < nvox; ++r) {
      if (!view_volumes[i].valid[r]) continue;
      out.m_p(r) += 1;
      out.v_avg.row(r) += view_volumes[i].data.row(r);
      out.rgb_avg.row(r) += rgb_volumes[i].data.row(r);
    }
  }
  for (Eigen::Index r = 0; r < nvox; ++r) {
    if (out.m_p(r) == 0) continue;
    const Scalar inv = Scalar(1) / Scalar(out.m_p(r));
    out.v_avg.row(r) *= inv;
    out.rgb_avg.row(r) *= inv;
  }
  for (std::size_t i = 0; i < view_volumes.size(); ++i) {
    for (Eigen::Index r = 0; r < nvox; ++r) {
      if (!view_volumes[i].valid[r]) continue;
      out.v_var.row(r) +=
          (view_volumes[i].data.row(r) - out.v_avg.row(r)).array().square().matrix();
      out.rgb_var.row(r) +=
          (rgb_volumes[i].data.row(r) - out.rgb_avg.row(r)).array().square().matrix();
    }
  }
  for (Eigen::Index r = 0; r < nvox; ++r) {
    if (out.m_p(r) == 0) continue;
    const Scalar inv = Scalar(1) / Scalar(out.m_p(r));
    out.v_var.row(r) *= inv;
    out.rgb_var.row(r) *= inv;
  }
  return out;
}

// Fixed concatenation [v_avg, v_var, rgb_avg, rgb_var], trimmed by toggles.
template <typename Scalar>
VecX<Scalar> augment_cell(const AugmentedVolume<Scalar>& vol, Eigen::Index cell,
                          const FeatureToggles& toggles = {}) {
  VOXDET_REQUIRE(cell >= 0 && cell < vol.v_avg.rows(), "augment_cell: cell index out of bounds");
  const Eigen::Index c = vol.v_avg.cols();
  VecX<Scalar> out(augmented_dim(static_cast<int>(c), toggles));
  Eigen::Index at = 0;
  out.segment(at, c) = vol.v_avg.row(cell).transpose();
  at += c;
  if (toggles.use_var) {
    out.segment(at, c) = vol.v_var.row(cell).transpose();
    at += c;
  }
  if (toggles.use_rgb) {
    out.segment(at, 3) = vol.rgb_avg.row(cell).transpose();
    out.segment(at + 3, 3) = vol.rgb_var.row(cell).transpose();
  }
  return out;
}

// Ground-truth-depth scatter: features land only in voxels whose center
// matches the view's depth map (upper-bound geometry ablation).
template <typename Scalar>
AugmentedVolume<Scalar> build_gt_depth_volume(const std::vector<CameraView<Scalar>>& views,
                                              const std::vector<FeatureMap<Scalar>>& fmaps,
                                              const GridSpec<Scalar>& grid,
                                              const std::vector<VecX<Scalar>>& depth_maps) {
  VOXDET_REQUIRE(views.size() == fmaps.size() && views.size() == depth_maps.size(),
                 "build_gt_depth_volume: inputs misaligned");
  const MatX<Scalar> centers = voxel_centers(grid);
  std::vector<ViewVolume<Scalar>> feats, rgbs;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const int downsample = views[i].intrinsics.width / fmaps[i].width;
    const ViewScatter<Scalar> sc =
        make_view_scatter_gt_depth(views[i], centers, depth_maps[i], grid, downsample);
    ViewVolume<Scalar> fv, cv;
    fv.data = MatX<Scalar>::Zero(centers.rows(), fmaps[i].channels);
    fv.valid.assign(centers.rows(), false);
    cv.data = sc.rgb;
    cv.valid.assign(centers.rows(), false);
    for (Eigen::Index r = 0; r < centers.rows(); ++r) {
      if (sc.mask(r) == 0.0) continue;
      fv.data.row(r) = fmaps[i].data.row(sc.plan->idx(r, 0));
      fv.valid[r] = true;
      cv.valid[r] = true;
    }
    feats.push_back(std::move(fv));
    rgbs.push_back(std::move(cv));
  }
  return aggregate(feats, rgbs);
}

// 3x3x3 convolution gather plan over the voxel grid (zero padding 1,
// stride 1), taps in row-major (dk, dj, di) order.
template <typename Scalar>
ad::GatherPlanPtr conv3x3x3_plan(const GridSpec<Scalar>& grid) {
  const int nvox = grid.num_voxels();
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx.resize(nvox, 27);
  plan->weight = MatXd::Ones(nvox, 27);
  for (int k = 0; k < grid.nz; ++k)
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const int r = grid.index(i, j, k);
        int tap = 0;
        for (int dk = -1; dk <= 1; ++dk)
          for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di, ++tap) {
              const int ii = i + di, jj = j + dj, kk = k + dk;
              const bool in = ii >= 0 && ii < grid.nx && jj >= 0 && jj < grid.ny && kk >= 0 &&
                              kk < grid.nz;
              plan->idx(r, tap) = in ? grid.index(ii, jj, kk) : -1;
            }
      }
  return plan;
}

// ---------------------------------------------------------------------------
// Differentiable aggregation over per-view feature-map nodes.

template <typename Scalar>
struct VolumeGraph {
  ad::Var<Scalar> v_avg;   // nvox x C
  ad::Var<Scalar> v_var;   // nvox x C (invalid if variance disabled)
  ad::Var<Scalar> rgb_avg; // constant nvox x 3
  ad::Var<Scalar> rgb_var; // constant nvox x 3
  VecXi m_p;
};

// Builds {V_avg, V_var} from per-view feature-map nodes using the cached
// scatter plans; RGB statistics enter as constants (they depend only on the
// images). Reduction order over views is the input order.
template <typename Scalar>
VolumeGraph<Scalar> build_volume_graph(ad::Tape<Scalar>& tape,
                                       const std::vector<ad::Var<Scalar>>& fmap_vars,
                                       const std::vector<ViewScatter<Scalar>>& scatters,
                                       bool want_variance) {
  VOXDET_REQUIRE(!fmap_vars.empty() && fmap_vars.size() == scatters.size(),
                 "build_volume_graph: views misaligned");
  const Eigen::Index nvox = scatters[0].mask.rows();
  const Eigen::Index c = tape.cols(fmap_vars[0]);

  VecXi m_p = VecXi::Zero(nvox);
  std::vector<ad::GatherPlanPtr> plans;
  plans.reserve(scatters.size());
  for (const auto& sc : scatters) {
    plans.push_back(sc.plan);
    for (Eigen::Index r = 0; r < nvox; ++r) m_p(r) += sc.mask(r) != 0.0 ? 1 : 0;
  }

  auto stats = tape.gathered_mean_var(fmap_vars, plans, want_variance);

  VolumeGraph<Scalar> out;
  out.v_avg = tape.slice_cols(stats, 0, c);
  out.m_p = m_p;
  if (want_variance) out.v_var = tape.slice_cols(stats, c, c);

  // RGB statistics: plain per-cell mean/variance over effective views
  MatX<Scalar> rgb_avg = MatX<Scalar>::Zero(nvox, 3), rgb_var = MatX<Scalar>::Zero(nvox, 3);
  for (const auto& sc : scatters)
    for (Eigen::Index r = 0; r < nvox; ++r)
      if (sc.mask(r) != 0.0) rgb_avg.row(r) += sc.rgb.row(r);
  for (Eigen::Index r = 0; r < nvox; ++r)
    if (m_p(r) > 0) rgb_avg.row(r) /= Scalar(m_p(r));
  for (const auto& sc : scatters)
    for (Eigen::Index r = 0; r < nvox; ++r)
      if (sc.mask(r) != 0.0)
        rgb_var.row(r) += (sc.rgb.row(r) - rgb_avg.row(r)).array().square().matrix();
  for (Eigen::Index r = 0; r < nvox; ++r)
    if (m_p(r) > 0) rgb_var.row(r) /= Scalar(m_p(r));
  out.rgb_avg = tape.constant(std::move(rgb_avg));
  out.rgb_var = tape.constant(std::move(rgb_var));
  return out;
}

}  // namespace voxdet
