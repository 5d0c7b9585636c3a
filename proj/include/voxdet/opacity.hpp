#pragma once

#include <string>
#include <vector>

#include "voxdet/autodiff.hpp"
#include "voxdet/nerf.hpp"
#include "voxdet/volume.hpp"

namespace voxdet {

// Opacity-field estimation: the geometry MLP trained by the NeRF branch is
// evaluated at voxel centers on the same augmented features, its density is
// turned into opacity with the constant-spacing transform alpha = 1 - e^-sigma
// (uniform voxels cancel the spacing term), and the opacity scales V_avg
// before the detection head.

template <typename Scalar>
struct OpacityField {
  VecX<Scalar> alpha;  // nvox, in [0, 1)
};

template <typename Scalar>
OpacityField<Scalar> opacity_transform(const VecX<Scalar>& sigma) {
  OpacityField<Scalar> out;
  out.alpha.resize(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    VOXDET_REQUIRE(sigma(i) >= 0, "opacity_transform: negative density");
    out.alpha(i) = Scalar(1) - std::exp(-sigma(i));
  }
  return out;
}

// Concatenate the augmented per-voxel statistics with the positional encoding
// of voxel centers — the shared input layout for both G-MLP call sites.
template <typename Scalar>
ad::Var<Scalar> assemble_voxel_features(ad::Tape<Scalar>& tape, const VolumeGraph<Scalar>& vol,
                                        const FeatureToggles& toggles,
                                        ad::Var<Scalar> pe_const) {
  std::vector<ad::Var<Scalar>> parts{vol.v_avg};
  if (toggles.use_var) parts.push_back(vol.v_var);
  if (toggles.use_rgb) {
    parts.push_back(vol.rgb_avg);
    parts.push_back(vol.rgb_var);
  }
  parts.push_back(pe_const);
  return tape.concat_cols(parts);
}

// Density at every voxel center via the shared G-MLP; unobserved cells
// (m_p = 0) are forced to zero density.
template <typename Scalar>
ad::Var<Scalar> voxel_densities_graph(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                                      ad::Var<Scalar> voxel_features, const VecXi& m_p,
                                      const std::string& gmlp_prefix = "gmlp.") {
  auto out = g_mlp(tape, store, voxel_features, gmlp_prefix);
  MatX<Scalar> mask(m_p.size(), 1);
  for (Eigen::Index i = 0; i < m_p.size(); ++i) mask(i, 0) = m_p(i) > 0 ? Scalar(1) : Scalar(0);
  return tape.cwise_mul(out.sigma, tape.constant(mask));
}

// Value-form voxel densities (evaluation/inspection path).
template <typename Scalar>
VecX<Scalar> voxel_densities(const AugmentedVolume<Scalar>& vol, const GridSpec<Scalar>& grid,
                             ad::ParameterStore<Scalar>& store, const FeatureToggles& toggles,
                             int pe_bands, const std::string& gmlp_prefix = "gmlp.") {
  const Eigen::Index nvox = vol.v_avg.rows();
  MatX<Scalar> feats(nvox, augmented_dim(static_cast<int>(vol.v_avg.cols()), toggles));
  for (Eigen::Index r = 0; r < nvox; ++r)
    feats.row(r) = augment_cell(vol, r, toggles).transpose();
  MatX<Scalar> centers = voxel_centers(grid);
  MatX<Scalar> norm(nvox, 3);
  for (Eigen::Index r = 0; r < nvox; ++r)
    norm.row(r) = grid.normalize_point(Vec3<Scalar>(centers.row(r).transpose())).transpose();
  MatX<Scalar> pe = positional_encoding_rows(norm, pe_bands);

  ad::Tape<Scalar> tape;
  auto x = tape.constant((MatX<Scalar>(nvox, feats.cols() + pe.cols()) << feats, pe).finished());
  auto sigma = voxel_densities_graph(tape, store, x, vol.m_p, gmlp_prefix);
  return tape.value(sigma).col(0);
}

// alpha-weighted feature volume for the detection head (alpha * V_avg).
template <typename Scalar>
ad::Var<Scalar> modulate_volume_graph(ad::Tape<Scalar>& tape, ad::Var<Scalar> alpha,
                                      ad::Var<Scalar> v_avg) {
  return tape.mul_colvec(v_avg, alpha);
}

template <typename Scalar>
MatX<Scalar> modulate_volume(const OpacityField<Scalar>& field, const AugmentedVolume<Scalar>& vol) {
  VOXDET_REQUIRE(field.alpha.size() == vol.v_avg.rows(), "modulate_volume: shape mismatch");
  return (vol.v_avg.array().colwise() * field.alpha.array()).matrix();
}

// ---------------------------------------------------------------------------
// Cost-volume baseline: a small 3D conv stack on V_var squashed by sigmoid,
// replacing the opacity field in the corresponding ablation.

template <typename Scalar>
void init_cost_volume_params(ad::ParameterStore<Scalar>& store, int channels, std::uint64_t seed,
                             int hidden = 16, const std::string& prefix = "costvol.") {
  store.emplace(prefix + "conv1.w", ad::uniform_init<Scalar>(27 * channels, hidden, 27 * channels,
                                                             seed, prefix + "conv1.w"));
  store.emplace(prefix + "conv1.b", MatX<Scalar>::Zero(1, hidden));
  store.emplace(prefix + "conv2.w",
                ad::uniform_init<Scalar>(27 * hidden, 1, 27 * hidden, seed, prefix + "conv2.w"));
  store.emplace(prefix + "conv2.b", MatX<Scalar>::Zero(1, 1));
}

template <typename Scalar>
ad::Var<Scalar> cost_volume_graph(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                                  ad::Var<Scalar> v_var, const ad::GatherPlanPtr& grid_plan,
                                  const std::string& prefix = "costvol.") {
  auto conv = [&](ad::Var<Scalar> x, const std::string& layer) {
    auto cols = tape.gather_concat(x, grid_plan);
    auto w = tape.param(store, prefix + layer + ".w");
    auto b = tape.param(store, prefix + layer + ".b");
    return tape.add_rowvec(tape.matmul(cols, w), b);
  };
  auto h = tape.relu(conv(v_var, "conv1"));
  return tape.sigmoid(conv(h, "conv2"));  // nvox x 1 weights in (0,1)
}

template <typename Scalar>
VecX<Scalar> cost_volume_baseline(const AugmentedVolume<Scalar>& vol, const GridSpec<Scalar>& grid,
                                  ad::ParameterStore<Scalar>& store,
                                  const std::string& prefix = "costvol.") {
  ad::Tape<Scalar> tape;
  auto w = cost_volume_graph(tape, store, tape.constant(vol.v_var), conv3x3x3_plan(grid), prefix);
  return tape.value(w).col(0);
}

}  // namespace voxdet
