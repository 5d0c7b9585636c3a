#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "voxdet/autodiff.hpp"

namespace voxdet::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  double mean_rel_err = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  double mean_rel_err = 0;
  std::size_t n_scalars = 0;
  std::string worst_param;
  std::vector<GradCheckEntry> per_param;

  bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// Central-difference verification of reverse-mode gradients, intended for
// micro-instances (<= a few thousand scalars). `loss_fn(with_grad)` must
// evaluate the loss from the current store contents; when `with_grad` is
// true it must also run backward so gradients land in the store.
//
// Relative error is |g - fd| / max(1, |g|, |fd|): an absolute floor of 1
// keeps near-zero gradients from blowing up the ratio.
template <typename Scalar>
GradCheckReport grad_check(ParameterStore<Scalar>& store,
                           const std::function<double(bool)>& loss_fn, double step) {
  store.zero_grad();
  loss_fn(true);

  std::map<std::string, MatXd> analytic;
  for (const auto& [name, e] : store.entries) analytic[name] = e.grad.template cast<double>();

  GradCheckReport report;
  double err_sum = 0;
  for (auto& [name, e] : store.entries) {
    GradCheckEntry pe;
    pe.name = name;
    double pe_sum = 0;
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const Scalar saved = e.value(i);
      e.value(i) = saved + static_cast<Scalar>(step);
      const double lp = loss_fn(false);
      e.value(i) = saved - static_cast<Scalar>(step);
      const double lm = loss_fn(false);
      e.value(i) = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double g = analytic[name](i);
      const double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
      pe.max_rel_err = std::max(pe.max_rel_err, rel);
      pe_sum += rel;
      err_sum += rel;
      ++report.n_scalars;
      if (rel >= report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
      }
    }
    pe.mean_rel_err = e.value.size() > 0 ? pe_sum / static_cast<double>(e.value.size()) : 0.0;
    report.per_param.push_back(std::move(pe));
  }
  report.mean_rel_err = report.n_scalars > 0 ? err_sum / static_cast<double>(report.n_scalars) : 0.0;
  return report;
}

}  // namespace voxdet::ad
