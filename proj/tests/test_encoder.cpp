#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "voxdet/encoder.hpp"
#include "voxdet/gradsuite.hpp"

using namespace voxdet;

namespace {

EncoderPlans plans_for(int h, int w, int c) {
  EncoderDims dims;
  dims.in_height = h;
  dims.in_width = w;
  dims.channels = c;
  return make_encoder_plans(dims);
}

MatXd random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed, "encoder-test");
  MatXd img(h * w, 3);
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (int c = 0; c < 3; ++c) img(i, c) = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("64x48 input with C=32 yields a 32-channel 16x12 map") {
  const auto plans = plans_for(64, 48, 32);
  ad::ParameterStore<double> store;
  init_encoder_params(store, 32, 1);
  const auto fmap = encode_view_values(store, plans, random_image(64, 48, 2));
  CHECK(fmap.channels == 32);
  CHECK(fmap.height == 16);
  CHECK(fmap.width == 12);
  CHECK(fmap.data.rows() == 16 * 12);
  CHECK(fmap.data.cols() == 32);
  CHECK(fmap.data.allFinite());
}

TEST_CASE("all-zero image with zero biases maps to zero") {
  const auto plans = plans_for(16, 16, 8);
  ad::ParameterStore<double> store;
  init_encoder_params(store, 8, 1);  // biases are zero-initialized
  const auto fmap = encode_view_values(store, plans, MatXd(MatXd::Zero(16 * 16, 3)));
  CHECK(fmap.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoding is deterministic") {
  const auto plans = plans_for(16, 16, 8);
  ad::ParameterStore<double> store;
  init_encoder_params(store, 8, 3);
  const MatXd img = random_image(16, 16, 4);
  const auto a = encode_view_values(store, plans, img);
  const auto b = encode_view_values(store, plans, img);
  CHECK((a.data - b.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-multiple-of-4 dimensions are rejected") {
  EncoderDims dims;
  dims.in_height = 18;
  dims.in_width = 16;
  dims.channels = 4;
  CHECK_THROWS_AS(make_encoder_plans(dims), ContractViolation);
}

TEST_CASE("translating the input by 4 pixels shifts the output by one cell") {
  const int h = 32, w = 32, c = 8;
  const auto plans = plans_for(h, w, c);
  ad::ParameterStore<double> store;
  init_encoder_params(store, c, 5);

  const MatXd img = random_image(h, w, 6);
  MatXd shifted = MatXd::Zero(h * w, 3);
  for (int v = 0; v < h; ++v)
    for (int u = 4; u < w; ++u) shifted.row(v * w + u) = img.row(v * w + (u - 4));

  const auto base = encode_view_values(store, plans, img);
  const auto moved = encode_view_values(store, plans, shifted);
  // interior cells only: borders see the zero fill
  const int fw = w / 4, fh = h / 4;
  double max_diff = 0;
  for (int v = 2; v < fh - 2; ++v)
    for (int u = 3; u < fw - 2; ++u)
      max_diff = std::max(max_diff,
                          (moved.data.row(v * fw + u) - base.data.row(v * fw + u - 1))
                              .cwiseAbs()
                              .maxCoeff());
  CHECK(max_diff < 1e-12);
}

TEST_CASE("encoder gradients match finite differences") {
  const auto result = gradsuite::encoder_suite(1e-5);
  CAPTURE(result.report.worst_param);
  CHECK(result.report.max_rel_err <= 1e-4);
}
