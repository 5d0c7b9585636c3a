#pragma once

#include <memory>
#include <string>
#include <vector>

#include "voxdet/autodiff.hpp"
#include "voxdet/geometry.hpp"
#include "voxdet/volume.hpp"

namespace voxdet {

// Generalizable NeRF branch: rays are sampled from held-out novel views,
// per-point features are aggregated from the source views' image feature
// maps (mean/variance across effective views, same formulas as the voxel
// volume), and a geometry MLP plus a color MLP feed volumetric rendering.

// Rays with more than this many samples projecting to empty space are
// discarded from the loss.
inline constexpr int kMaxEmptyPerRay = 8;

inline bool ray_keep(int empty_count, int n_points) {
  VOXDET_REQUIRE(empty_count >= 0 && empty_count <= n_points, "ray_keep: count out of range");
  return empty_count <= kMaxEmptyPerRay;
}

enum class RaySampleMode { kDeterministic, kStratified };

// Uniform bin sampling over [near, far]: bin midpoints in deterministic mode,
// one uniform draw per bin in stratified mode. Spacing is constant.
inline VecXd sample_ray_points(double near, double far, int n, RaySampleMode mode, Rng* rng = nullptr) {
  VOXDET_REQUIRE(near >= 0 && far > near, "sample_ray_points: need 0 <= near < far");
  VOXDET_REQUIRE(n >= 2, "sample_ray_points: need at least two samples");
  const double delta = (far - near) / n;
  VecXd t(n);
  for (int i = 0; i < n; ++i) {
    const double jitter =
        mode == RaySampleMode::kStratified ? (rng ? rng->uniform() : 0.5) : 0.5;
    t(i) = near + (i + jitter) * delta;
  }
  return t;
}

// gamma(x) = [sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(...)]
// per coordinate, coordinate-major blocks; inputs are expected normalized to
// [-1, 1] over the grid extent.
template <typename Scalar>
VecX<Scalar> positional_encoding(const Vec3<Scalar>& p, int bands) {
  VOXDET_REQUIRE(bands >= 1, "positional_encoding: need at least one band");
  VecX<Scalar> out(6 * bands);
  for (int c = 0; c < 3; ++c) {
    double freq = kPi;
    for (int l = 0; l < bands; ++l) {
      out(c * 2 * bands + 2 * l) = Scalar(std::sin(freq * static_cast<double>(p(c))));
      out(c * 2 * bands + 2 * l + 1) = Scalar(std::cos(freq * static_cast<double>(p(c))));
      freq *= 2.0;
    }
  }
  return out;
}

// Batched encoding with one sincos per coordinate and double-angle
// recurrences for the higher bands (matches the closed form to ~1e-13).
template <typename Scalar>
MatX<Scalar> positional_encoding_rows(const MatX<Scalar>& points, int bands) {
  VOXDET_REQUIRE(bands >= 1, "positional_encoding: need at least one band");
  MatX<Scalar> out(points.rows(), 6 * bands);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    Scalar* row = out.data() + r * out.cols();
    for (int c = 0; c < 3; ++c) {
      Scalar s = Scalar(std::sin(kPi * static_cast<double>(points(r, c))));
      Scalar co = Scalar(std::cos(kPi * static_cast<double>(points(r, c))));
      for (int l = 0; l < bands; ++l) {
        row[c * 2 * bands + 2 * l] = s;
        row[c * 2 * bands + 2 * l + 1] = co;
        const Scalar s2 = Scalar(2) * s * co;
        co = co * co - s * s;
        s = s2;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point feature sampling

// Bilinear feature-map scatter for arbitrary world points (the ray-sampling
// analogue of make_view_scatter): validity uses the same rule as the voxel
// scatter (positive depth, nearest feature-map pixel in bounds), the four
// taps are clamped to the map border.
template <typename Scalar>
ViewScatter<Scalar> make_point_scatter_bilinear(const CameraView<Scalar>& view,
                                                const MatX<Scalar>& points, int downsample = 4) {
  const int wf = view.intrinsics.width / downsample;
  const int hf = view.intrinsics.height / downsample;
  const Eigen::Index n = points.rows();
  ViewScatter<Scalar> out;
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx = MatXi::Constant(n, 4, -1);
  plan->weight = MatXd::Zero(n, 4);
  out.mask = VecXd::Zero(n);
  out.rgb = MatX<Scalar>::Zero(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Vec3<Scalar> p = points.row(r).transpose();
    const auto proj = project_point(p, view, downsample);
    if (!proj.valid) continue;
    out.mask(r) = 1.0;
    const double u = std::min(std::max(static_cast<double>(proj.u), 0.0), wf - 1.0);
    const double v = std::min(std::max(static_cast<double>(proj.v), 0.0), hf - 1.0);
    const int u0 = std::max(0, std::min(static_cast<int>(std::floor(u)), wf - 2 >= 0 ? wf - 2 : 0));
    const int v0 = std::max(0, std::min(static_cast<int>(std::floor(v)), hf - 2 >= 0 ? hf - 2 : 0));
    const int u1 = std::min(u0 + 1, wf - 1);
    const int v1 = std::min(v0 + 1, hf - 1);
    const double fu = u - u0, fv = v - v0;
    plan->idx(r, 0) = v0 * wf + u0;
    plan->idx(r, 1) = v0 * wf + u1;
    plan->idx(r, 2) = v1 * wf + u0;
    plan->idx(r, 3) = v1 * wf + u1;
    plan->weight(r, 0) = (1 - fu) * (1 - fv);
    plan->weight(r, 1) = fu * (1 - fv);
    plan->weight(r, 2) = (1 - fu) * fv;
    plan->weight(r, 3) = fu * fv;
    out.rgb.row(r) = sample_bilinear(view.image, view.intrinsics.width, view.intrinsics.height,
                                     static_cast<double>(proj.u) * downsample,
                                     static_cast<double>(proj.v) * downsample);
  }
  out.plan = std::move(plan);
  return out;
}

// Trilinear interpolation plan into a voxel grid laid out x-fastest.
// `inside` marks points whose clamped cell is within the grid volume.
template <typename Scalar>
struct TrilinearPlan {
  ad::GatherPlanPtr plan;  // n x 8 taps into nvox rows
  VecXd inside;            // 1.0 where the point lies within the grid extent
};

template <typename Scalar>
TrilinearPlan<Scalar> make_trilinear_plan(const GridSpec<Scalar>& grid, const MatX<Scalar>& points) {
  const Eigen::Index n = points.rows();
  TrilinearPlan<Scalar> out;
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx = MatXi::Constant(n, 8, -1);
  plan->weight = MatXd::Zero(n, 8);
  out.inside = VecXd::Zero(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Vec3<Scalar> p = points.row(r).transpose();
    const Vec3<Scalar> rel = (p - grid.origin).cwiseQuotient(grid.voxel_size);
    if (rel.x() < 0 || rel.y() < 0 || rel.z() < 0 || rel.x() > grid.nx || rel.y() > grid.ny ||
        rel.z() > grid.nz)
      continue;
    out.inside(r) = 1.0;
    // lattice of voxel centers: center (i,j,k) sits at rel = (i,j,k) + 0.5
    const double qx = std::min(std::max(static_cast<double>(rel.x()) - 0.5, 0.0),
                               static_cast<double>(grid.nx - 1));
    const double qy = std::min(std::max(static_cast<double>(rel.y()) - 0.5, 0.0),
                               static_cast<double>(grid.ny - 1));
    const double qz = std::min(std::max(static_cast<double>(rel.z()) - 0.5, 0.0),
                               static_cast<double>(grid.nz - 1));
    const int i0 = std::min(static_cast<int>(std::floor(qx)), grid.nx - 2 >= 0 ? grid.nx - 2 : 0);
    const int j0 = std::min(static_cast<int>(std::floor(qy)), grid.ny - 2 >= 0 ? grid.ny - 2 : 0);
    const int k0 = std::min(static_cast<int>(std::floor(qz)), grid.nz - 2 >= 0 ? grid.nz - 2 : 0);
    const double fx = qx - i0, fy = qy - j0, fz = qz - k0;
    int tap = 0;
    for (int dk = 0; dk <= 1; ++dk)
      for (int dj = 0; dj <= 1; ++dj)
        for (int di = 0; di <= 1; ++di, ++tap) {
          const int i = std::min(i0 + di, grid.nx - 1);
          const int j = std::min(j0 + dj, grid.ny - 1);
          const int k = std::min(k0 + dk, grid.nz - 1);
          plan->idx(r, tap) = grid.index(i, j, k);
          plan->weight(r, tap) = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? fz : 1 - fz);
        }
  }
  out.plan = std::move(plan);
  return out;
}

// Value-form point feature aggregation across views (the independent,
// non-autodiff route; the training path shares its formulas through
// build_volume_graph). Returns the augmented feature rows plus per-point
// effective view counts.
template <typename Scalar>
struct PointFeatures {
  MatX<Scalar> features;  // n x (2C+6) with default toggles
  VecXi m_p;
};

template <typename Scalar>
PointFeatures<Scalar> gather_ray_features(const MatX<Scalar>& points,
                                          const std::vector<CameraView<Scalar>>& views,
                                          const std::vector<FeatureMap<Scalar>>& fmaps,
                                          const FeatureToggles& toggles = {}) {
  VOXDET_REQUIRE(!views.empty() && views.size() == fmaps.size(),
                 "gather_ray_features: need matching views and feature maps");
  const Eigen::Index n = points.rows();
  const int c = fmaps[0].channels;
  std::vector<ViewScatter<Scalar>> scatters;
  std::vector<MatX<Scalar>> sampled;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const int downsample = views[i].intrinsics.width / fmaps[i].width;
    ViewScatter<Scalar> sc = make_point_scatter_bilinear(views[i], points, downsample);
    MatX<Scalar> s = MatX<Scalar>::Zero(n, c);
    for (Eigen::Index r = 0; r < n; ++r)
      if (sc.mask(r) != 0.0)
        for (int k = 0; k < 4; ++k)
          s.row(r) += Scalar(sc.plan->weight(r, k)) * fmaps[i].data.row(sc.plan->idx(r, k));
    sampled.push_back(std::move(s));
    scatters.push_back(std::move(sc));
  }

  PointFeatures<Scalar> out;
  out.m_p = VecXi::Zero(n);
  MatX<Scalar> mean = MatX<Scalar>::Zero(n, c), var = MatX<Scalar>::Zero(n, c);
  MatX<Scalar> rgb_mean = MatX<Scalar>::Zero(n, 3), rgb_var = MatX<Scalar>::Zero(n, 3);
  for (std::size_t i = 0; i < views.size(); ++i)
    for (Eigen::Index r = 0; r < n; ++r)
      if (scatters[i].mask(r) != 0.0) {
        out.m_p(r) += 1;
        mean.row(r) += sampled[i].row(r);
        rgb_mean.row(r) += scatters[i].rgb.row(r);
      }
  for (Eigen::Index r = 0; r < n; ++r)
    if (out.m_p(r) > 0) {
      mean.row(r) /= Scalar(out.m_p(r));
      rgb_mean.row(r) /= Scalar(out.m_p(r));
    }
  for (std::size_t i = 0; i < views.size(); ++i)
    for (Eigen::Index r = 0; r < n; ++r)
      if (scatters[i].mask(r) != 0.0) {
        var.row(r) += (sampled[i].row(r) - mean.row(r)).array().square().matrix();
        rgb_var.row(r) += (scatters[i].rgb.row(r) - rgb_mean.row(r)).array().square().matrix();
      }
  for (Eigen::Index r = 0; r < n; ++r)
    if (out.m_p(r) > 0) {
      var.row(r) /= Scalar(out.m_p(r));
      rgb_var.row(r) /= Scalar(out.m_p(r));
    }

  out.features.resize(n, augmented_dim(c, toggles));
  Eigen::Index at = 0;
  out.features.middleCols(at, c) = mean;
  at += c;
  if (toggles.use_var) {
    out.features.middleCols(at, c) = var;
    at += c;
  }
  if (toggles.use_rgb) {
    out.features.middleCols(at, 3) = rgb_mean;
    out.features.middleCols(at + 3, 3) = rgb_var;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MLPs

struct GMlpDims {
  int in_dim = 0;   // augmented feature dim + positional encoding dim
  int width = 256;
};

template <typename Scalar>
void init_gmlp_params(ad::ParameterStore<Scalar>& store, const GMlpDims& dims, std::uint64_t seed,
                      const std::string& prefix = "gmlp.") {
  const int w = dims.width, in = dims.in_dim;
  auto u = [&](int r, int c, int fan, const std::string& n) {
    store.emplace(prefix + n, ad::uniform_init<Scalar>(r, c, fan, seed, prefix + n));
  };
  u(in, w, in, "l1.w");
  store.emplace(prefix + "l1.b", MatX<Scalar>::Zero(1, w));
  u(w, w, w, "l2.w");
  store.emplace(prefix + "l2.b", MatX<Scalar>::Zero(1, w));
  u(w + in, w, w + in, "l3.w");  // skip connection: input re-enters layer 3
  store.emplace(prefix + "l3.b", MatX<Scalar>::Zero(1, w));
  u(w, w, w, "l4.w");
  store.emplace(prefix + "l4.b", MatX<Scalar>::Zero(1, w));
  u(w, 1, w, "sigma.w");
  store.emplace(prefix + "sigma.b", MatX<Scalar>::Zero(1, 1));
}

template <typename Scalar>
void init_cmlp_params(ad::ParameterStore<Scalar>& store, int width, std::uint64_t seed,
                      const std::string& prefix = "cmlp.") {
  store.emplace(prefix + "l1.w",
                ad::uniform_init<Scalar>(width + 3, width, width + 3, seed, prefix + "l1.w"));
  store.emplace(prefix + "l1.b", MatX<Scalar>::Zero(1, width));
  store.emplace(prefix + "out.w", ad::uniform_init<Scalar>(width, 3, width, seed, prefix + "out.w"));
  store.emplace(prefix + "out.b", MatX<Scalar>::Zero(1, 3));
}

template <typename Scalar>
struct GMlpOut {
  ad::Var<Scalar> sigma;   // n x 1, ReLU-nonnegative
  ad::Var<Scalar> latent;  // n x width, final hidden activation
};

// 4 layers, ReLU activations, input concatenated back in at layer 3.
// Density head is ReLU so sigma >= 0.
template <typename Scalar>
GMlpOut<Scalar> g_mlp(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                      ad::Var<Scalar> features_and_encoding, const std::string& prefix = "gmlp.") {
  auto lin = [&](ad::Var<Scalar> x, const std::string& layer) {
    auto w = tape.param(store, prefix + layer + ".w");
    auto b = tape.param(store, prefix + layer + ".b");
    return tape.add_rowvec(tape.matmul(x, w), b);
  };
  auto x = features_and_encoding;
  auto h1 = tape.relu(lin(x, "l1"));
  auto h2 = tape.relu(lin(h1, "l2"));
  auto h3 = tape.relu(lin(tape.concat_cols({h2, x}), "l3"));
  auto h4 = tape.relu(lin(h3, "l4"));
  GMlpOut<Scalar> out;
  out.sigma = tape.relu(lin(h4, "sigma"));
  out.latent = h4;
  return out;
}

// One hidden layer on [latent, view direction], sigmoid RGB output.
template <typename Scalar>
ad::Var<Scalar> c_mlp(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                      ad::Var<Scalar> latent, ad::Var<Scalar> directions,
                      const std::string& prefix = "cmlp.") {
  auto w1 = tape.param(store, prefix + "l1.w");
  auto b1 = tape.param(store, prefix + "l1.b");
  auto z = tape.relu(tape.add_rowvec(tape.matmul(tape.concat_cols({latent, directions}), w1), b1));
  auto wo = tape.param(store, prefix + "out.w");
  auto bo = tape.param(store, prefix + "out.b");
  return tape.sigmoid(tape.add_rowvec(tape.matmul(z, wo), bo));
}

// ---------------------------------------------------------------------------
// Volumetric rendering

template <typename Scalar>
struct RenderOutput {
  Vec3<Scalar> color = Vec3<Scalar>::Zero();
  Scalar depth = 0;
  Scalar weight_sum = 0;
};

// C(r) = sum_i T_i alpha_i c_i,  D(r) = sum_i T_i alpha_i t_i,
// T_i = exp(-sum_{j<i} sigma_j dt), alpha_i = 1 - exp(-sigma_i dt).
// Depth is the raw expected distance (no normalization by the weight sum).
template <typename Scalar>
RenderOutput<Scalar> render_ray(const VecX<Scalar>& sigma, const MatX<Scalar>& colors,
                                const VecX<Scalar>& t_values, Scalar delta_t) {
  const Eigen::Index n = sigma.size();
  VOXDET_REQUIRE(colors.rows() == n && colors.cols() == 3 && t_values.size() == n,
                 "render_ray: shape mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    VOXDET_REQUIRE(sigma(i) >= 0, "render_ray: densities must be nonnegative");
  for (Eigen::Index i = 1; i < n; ++i)
    VOXDET_REQUIRE(t_values(i) > t_values(i - 1), "render_ray: t values must increase");
  RenderOutput<Scalar> out;
  Scalar accum = 0;  // sum of sigma_j * dt for j < i
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar trans = std::exp(-accum);
    const Scalar alpha = Scalar(1) - std::exp(-sigma(i) * delta_t);
    const Scalar w = trans * alpha;
    out.color += w * colors.row(i).transpose();
    out.depth += w * t_values(i);
    out.weight_sum += w;
    accum += sigma(i) * delta_t;
  }
  return out;
}

template <typename Scalar>
struct RenderGraph {
  ad::Var<Scalar> color;       // R x 3
  ad::Var<Scalar> depth;       // R x 1
  ad::Var<Scalar> weight_sum;  // R x 1
};

// Batched differentiable rendering. `sigma` is (R*N) x 1 and `rgb` (R*N) x 3
// in ray-major order; `t_values` is a constant R x N matrix of distances.
template <typename Scalar>
RenderGraph<Scalar> render_rays_graph(ad::Tape<Scalar>& tape, ad::Var<Scalar> sigma,
                                      ad::Var<Scalar> rgb, ad::Var<Scalar> t_values,
                                      Eigen::Index n_rays, Eigen::Index n_samples, Scalar delta_t) {
  auto sig = tape.rays_from_column(sigma, 0, n_rays, n_samples);    // R x N
  auto sd = tape.affine(sig, delta_t, Scalar(0));
  auto trans = tape.exp(tape.affine(tape.row_cumsum_exclusive(sd), Scalar(-1), Scalar(0)));
  auto alpha = tape.affine(tape.exp(tape.affine(sd, Scalar(-1), Scalar(0))), Scalar(-1), Scalar(1));
  auto weights = tape.cwise_mul(trans, alpha);  // R x N

  std::vector<ad::Var<Scalar>> channels;
  for (int c = 0; c < 3; ++c) {
    auto col = tape.rays_from_column(rgb, c, n_rays, n_samples);
    channels.push_back(tape.row_sum(tape.cwise_mul(weights, col)));
  }
  RenderGraph<Scalar> out;
  out.color = tape.concat_cols(channels);
  out.depth = tape.row_sum(tape.cwise_mul(weights, t_values));
  out.weight_sum = tape.row_sum(weights);
  return out;
}

template <typename Scalar>
struct NerfLosses {
  ad::Var<Scalar> color_loss;  // 1x1; mean squared color error over kept rays
  ad::Var<Scalar> depth_loss;  // 1x1; mean absolute depth error over kept rays
  int n_kept = 0;
  bool empty_kept_set = false;
};

// keep: R x 1 constant of 0/1 keep flags. Disabled losses come back as zero
// constants so Eq-style loss totals stay additive.
template <typename Scalar>
NerfLosses<Scalar> nerf_losses(ad::Tape<Scalar>& tape, const RenderGraph<Scalar>& render,
                               const MatX<Scalar>& target_rgb, const VecX<Scalar>& target_depth,
                               const VecXd& keep, bool use_photo, bool use_depth) {
  NerfLosses<Scalar> out;
  out.n_kept = static_cast<int>(keep.sum());
  out.empty_kept_set = out.n_kept == 0;
  auto zero = tape.scalar_constant(Scalar(0));
  if (out.empty_kept_set) {
    out.color_loss = zero;
    out.depth_loss = zero;
    return out;
  }
  MatX<Scalar> keep_col = keep.template cast<Scalar>();
  auto keep_var = tape.constant(keep_col);
  const Scalar inv_kept = Scalar(1) / Scalar(out.n_kept);
  if (use_photo) {
    auto diff = tape.sub(render.color, tape.constant(target_rgb));
    auto per_ray = tape.row_sum(tape.square(diff));  // squared L2 norm per ray
    out.color_loss = tape.affine(tape.sum_all(tape.cwise_mul(per_ray, keep_var)), inv_kept, 0);
  } else {
    out.color_loss = zero;
  }
  if (use_depth) {
    MatX<Scalar> td = target_depth;
    auto diff = tape.sub(render.depth, tape.constant(td));
    out.depth_loss =
        tape.affine(tape.sum_all(tape.cwise_mul(tape.abs(diff), keep_var)), inv_kept, 0);
  } else {
    out.depth_loss = zero;
  }
  return out;
}

}  // namespace voxdet
