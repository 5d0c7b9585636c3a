#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "voxdet/autodiff.hpp"
#include "voxdet/gradcheck.hpp"

using namespace voxdet;
using Tape = ad::Tape<double>;

namespace {

MatXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1, double hi = 1) {
  MatXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("constant loss has zero gradients") {
  ad::ParameterStore<double> store;
  store.emplace("theta", MatXd::Constant(3, 2, 1.5));
  Tape tape;
  (void)tape.param(store, "theta");
  auto loss = tape.scalar_constant(42.0);
  tape.backward(loss);
  CHECK(store.at("theta").grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadratic loss has exact linear gradient") {
  ad::ParameterStore<double> store;
  Rng rng(1, "ad-quadratic");
  store.emplace("theta", random_matrix(4, 3, rng));
  Tape tape;
  auto theta = tape.param(store, "theta");
  auto loss = tape.affine(tape.sum_all(tape.square(theta)), 0.5, 0.0);  // 1/2 ||theta||^2
  tape.backward(loss);
  CHECK((store.at("theta").grad - store.at("theta").value).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient accumulation is additive across backward calls") {
  ad::ParameterStore<double> store;
  Rng rng(2, "ad-additive");
  store.emplace("theta", random_matrix(3, 3, rng));

  auto eval = [&](bool split) {
    store.zero_grad();
    if (split) {
      Tape t1;
      auto a = t1.param(store, "theta");
      t1.backward(t1.sum_all(t1.square(a)));
      Tape t2;
      auto b = t2.param(store, "theta");
      t2.backward(t2.sum_all(t2.sigmoid(b)));
    } else {
      Tape t;
      auto x = t.param(store, "theta");
      t.backward(t.add(t.sum_all(t.square(x)), t.sum_all(t.sigmoid(x))));
    }
    return MatXd(store.at("theta").grad);
  };
  const MatXd split = eval(true);
  const MatXd joint = eval(false);
  CHECK((split - joint).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(3, "ad-ops");
  ad::ParameterStore<double> store;
  store.emplace("a", random_matrix(5, 4, rng));
  store.emplace("b", random_matrix(4, 3, rng));
  store.emplace("c", random_matrix(5, 4, rng, 0.5, 2.0));
  store.emplace("bias", random_matrix(1, 4, rng));
  store.emplace("col", random_matrix(5, 1, rng));

  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx.resize(6, 2);
  plan->weight.resize(6, 2);
  for (int i = 0; i < 6; ++i) {
    plan->idx(i, 0) = i % 5;
    plan->idx(i, 1) = i % 2 == 0 ? (i + 2) % 5 : -1;
    plan->weight(i, 0) = 0.25 + 0.1 * i;
    plan->weight(i, 1) = 0.5;
  }

  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    auto a = tape.param(store, "a");
    auto b = tape.param(store, "b");
    auto c = tape.param(store, "c");
    auto bias = tape.param(store, "bias");
    auto col = tape.param(store, "col");

    auto x = tape.add_rowvec(a, bias);
    x = tape.mul_colvec(x, col);
    auto y = tape.matmul(tape.softplus(x), b);            // 5x3
    auto z = tape.concat_cols({tape.sigmoid(y), tape.exp(tape.affine(y, 0.3, -0.1))});
    z = tape.slice_cols(z, 1, 4);                         // 5x4
    auto g = tape.gather(tape.cwise_div(z, c), plan);     // 6x4
    auto cs = tape.row_cumsum_exclusive(tape.abs(g));
    auto r = tape.rays_from_column(tape.relu(tape.sub(cs, g)), 2, 3, 2);
    auto broadcast = [] {
      auto p = std::make_shared<ad::GatherPlan>();
      p->idx = MatXi::Zero(3, 1);
      p->weight = MatXd::Ones(3, 1);
      return p;
    }();
    auto s = tape.mul_colvec(tape.gather(tape.col_sum(g), broadcast), tape.row_sum(r));
    auto loss = tape.sum_all(tape.cwise_mul(s, s));
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };

  const auto report = ad::grad_check(store, loss_fn, 1e-6);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-7);
}

TEST_CASE("grad_check flags a corrupted gradient (negative control)") {
  ad::ParameterStore<double> store;
  store.emplace("theta", MatXd::Constant(2, 2, 0.7));
  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    auto x = tape.param(store, "theta");
    auto loss = tape.sum_all(tape.square(x));
    if (with_grad) {
      tape.backward(loss);
      store.at("theta").grad.array() += 0.5;  // corrupt
    }
    return tape.value(loss)(0, 0);
  };
  const auto report = ad::grad_check(store, loss_fn, 1e-6);
  CHECK(report.max_rel_err > 1e-4);
}

TEST_CASE("linear loss reaches near machine precision") {
  ad::ParameterStore<double> store;
  Rng rng(4, "ad-linear");
  store.emplace("theta", random_matrix(3, 3, rng));
  auto loss_fn = [&](bool with_grad) {
    Tape tape;
    auto x = tape.param(store, "theta");
    auto loss = tape.sum_all(x);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  const auto report = ad::grad_check(store, loss_fn, 1e-5);
  CHECK(report.max_rel_err < 1e-10);
}

TEST_CASE("backward requires a finite scalar loss") {
  ad::ParameterStore<double> store;
  store.emplace("theta", MatXd::Constant(2, 2, 1.0));
  Tape tape;
  auto x = tape.param(store, "theta");
  CHECK_THROWS_AS(tape.backward(x), ContractViolation);  // not 1x1
  store.emplace("scalar", MatXd::Constant(1, 1, 1.0));
  Tape tape2;
  auto y = tape2.param(store, "scalar");
  auto bad = tape2.cwise_div(y, tape2.scalar_constant(0.0));  // inf
  CHECK_THROWS_AS(tape2.backward(bad), ContractViolation);
}

TEST_CASE("gather_concat lays taps out in column blocks") {
  Tape tape;
  MatXd src(3, 2);
  src << 1, 2, 3, 4, 5, 6;
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx.resize(2, 2);
  plan->weight.resize(2, 2);
  plan->idx << 0, 2, 1, -1;
  plan->weight << 1.0, 0.5, 2.0, 1.0;
  auto out = tape.gather_concat(tape.constant(src), plan);
  const MatXd v = tape.value(out);
  REQUIRE(v.rows() == 2);
  REQUIRE(v.cols() == 4);
  CHECK(v(0, 0) == 1.0);   // tap 0 = row 0 * 1
  CHECK(v(0, 2) == 2.5);   // tap 1 = row 2 * 0.5
  CHECK(v(1, 0) == 6.0);   // tap 0 = row 1 * 2
  CHECK(v(1, 2) == 0.0);   // tap 1 missing -> zero block
}

TEST_CASE("row_cumsum_exclusive values") {
  Tape tape;
  MatXd x(2, 3);
  x << 1, 2, 3, 10, 20, 30;
  const MatXd y = tape.value(tape.row_cumsum_exclusive(tape.constant(x)));
  MatXd expect(2, 3);
  expect << 0, 1, 3, 0, 10, 30;
  CHECK((y - expect).cwiseAbs().maxCoeff() == 0.0);
}
