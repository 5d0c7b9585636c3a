#pragma once

#include <memory>
#include <string>

#include "voxdet/autodiff.hpp"
#include "voxdet/core.hpp"

namespace voxdet {

// Small trainable 2D conv encoder: two stride-2 3x3 convolutions with ReLU
// followed by one stride-1 3x3 refinement convolution (linear output), so a
// H x W x 3 image becomes a C x H/4 x W/4 feature map. Convolutions are
// evaluated as im2col gathers followed by a matrix product; weights are laid
// out (taps * C_in) x C_out with taps in row-major (dv, du) order.

template <typename Scalar>
struct FeatureMap {
  int channels = 0;
  int height = 0, width = 0;      // feature-map resolution (input / 4)
  MatX<Scalar> data;              // (height*width) x channels, row v*width+u
};

// 3x3 convolution gather plan with zero padding 1 and the given stride.
inline ad::GatherPlanPtr conv3x3_plan(int h, int w, int stride) {
  const int ho = (h + 2 - 3) / stride + 1;
  const int wo = (w + 2 - 3) / stride + 1;
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx.resize(ho * wo, 9);
  plan->weight = MatXd::Ones(ho * wo, 9);
  for (int vo = 0; vo < ho; ++vo)
    for (int uo = 0; uo < wo; ++uo) {
      const int r = vo * wo + uo;
      int k = 0;
      for (int dv = -1; dv <= 1; ++dv)
        for (int du = -1; du <= 1; ++du, ++k) {
          const int vi = stride * vo + dv;
          const int ui = stride * uo + du;
          plan->idx(r, k) = (vi >= 0 && vi < h && ui >= 0 && ui < w) ? vi * w + ui : -1;
        }
    }
  return plan;
}

struct EncoderDims {
  int in_height = 0, in_width = 0;
  int channels = 32;
  int out_height() const { return in_height / 4; }
  int out_width() const { return in_width / 4; }
};

// Immutable per-resolution gather plans, shared across views and iterations.
struct EncoderPlans {
  EncoderDims dims;
  ad::GatherPlanPtr stage1, stage2, stage3;
};

inline EncoderPlans make_encoder_plans(const EncoderDims& dims) {
  VOXDET_REQUIRE(dims.in_height % 4 == 0 && dims.in_width % 4 == 0,
                 "encoder: input dimensions must be multiples of 4");
  VOXDET_REQUIRE(dims.channels >= 1, "encoder: channel count must be positive");
  EncoderPlans p;
  p.dims = dims;
  p.stage1 = conv3x3_plan(dims.in_height, dims.in_width, 2);
  p.stage2 = conv3x3_plan(dims.in_height / 2, dims.in_width / 2, 2);
  p.stage3 = conv3x3_plan(dims.in_height / 4, dims.in_width / 4, 1);
  return p;
}

template <typename Scalar>
void init_encoder_params(ad::ParameterStore<Scalar>& store, int channels, std::uint64_t seed,
                         const std::string& prefix = "encoder.") {
  const int c = channels;
  store.emplace(prefix + "conv1.w", ad::uniform_init<Scalar>(9 * 3, c, 9 * 3, seed, prefix + "conv1.w"));
  store.emplace(prefix + "conv1.b", MatX<Scalar>::Zero(1, c));
  store.emplace(prefix + "conv2.w", ad::uniform_init<Scalar>(9 * c, c, 9 * c, seed, prefix + "conv2.w"));
  store.emplace(prefix + "conv2.b", MatX<Scalar>::Zero(1, c));
  store.emplace(prefix + "conv3.w", ad::uniform_init<Scalar>(9 * c, c, 9 * c, seed, prefix + "conv3.w"));
  store.emplace(prefix + "conv3.b", MatX<Scalar>::Zero(1, c));
}

// Differentiable forward pass. `image` is a (H*W) x 3 node.
template <typename Scalar>
ad::Var<Scalar> encode_view(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                            const EncoderPlans& plans, ad::Var<Scalar> image,
                            const std::string& prefix = "encoder.") {
  VOXDET_REQUIRE(tape.rows(image) ==
                     static_cast<Eigen::Index>(plans.dims.in_height) * plans.dims.in_width &&
                     tape.cols(image) == 3,
                 "encode_view: image shape does not match encoder plans");
  auto conv = [&](ad::Var<Scalar> x, const ad::GatherPlanPtr& plan, const std::string& layer) {
    auto cols = tape.gather_concat(x, plan);
    auto w = tape.param(store, prefix + layer + ".w");
    auto b = tape.param(store, prefix + layer + ".b");
    return tape.add_rowvec(tape.matmul(cols, w), b);
  };
  auto x1 = tape.relu(conv(image, plans.stage1, "conv1"));
  auto x2 = tape.relu(conv(x1, plans.stage2, "conv2"));
  return conv(x2, plans.stage3, "conv3");  // linear refinement stage
}

// Value-only convenience used by tests and oracle paths.
template <typename Scalar>
FeatureMap<Scalar> encode_view_values(ad::ParameterStore<Scalar>& store, const EncoderPlans& plans,
                                      const MatX<Scalar>& image,
                                      const std::string& prefix = "encoder.") {
  ad::Tape<Scalar> tape;
  auto out = encode_view(tape, store, plans, tape.constant(image), prefix);
  FeatureMap<Scalar> fmap;
  fmap.channels = plans.dims.channels;
  fmap.height = plans.dims.out_height();
  fmap.width = plans.dims.out_width();
  fmap.data = tape.value(out);
  return fmap;
}

}  // namespace voxdet
