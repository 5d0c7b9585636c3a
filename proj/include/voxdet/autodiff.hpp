#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "voxdet/core.hpp"

namespace voxdet::ad {

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns a growing list of nodes; every operation appends one node
// holding its value and a backward closure. Matrices are (rows = samples,
// cols = channels) throughout. Gradients of parameter leaves accumulate into
// the ParameterStore, so evaluating two losses and calling backward on each
// is equivalent to one backward on their sum.

template <typename Scalar>
struct ParameterStore {
  struct Entry {
    MatX<Scalar> value;
    MatX<Scalar> grad;
    // Adam moments, owned here so optimizer state survives between steps
    MatX<Scalar> m, v;
  };

  // std::map: stable, sorted iteration order for checkpoints and reductions
  std::map<std::string, Entry> entries;

  MatX<Scalar>& emplace(const std::string& name, MatX<Scalar> value) {
    auto& e = entries[name];
    e.value = std::move(value);
    e.grad = MatX<Scalar>::Zero(e.value.rows(), e.value.cols());
    e.m = MatX<Scalar>::Zero(e.value.rows(), e.value.cols());
    e.v = MatX<Scalar>::Zero(e.value.rows(), e.value.cols());
    return e.value;
  }

  bool has(const std::string& name) const { return entries.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries.find(name);
    VOXDET_REQUIRE(it != entries.end(), "ParameterStore: unknown parameter " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries.find(name);
    VOXDET_REQUIRE(it != entries.end(), "ParameterStore: unknown parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, e] : entries) e.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries) n += static_cast<std::size_t>(e.value.size());
    return n;
  }
};

// Multi-tap weighted row gather. out.row(r) = sum_k w(r,k) * src.row(idx(r,k)).
// idx < 0 means "no source" (zero contribution); used for padding and for
// projections that fall outside the image.
struct GatherPlan {
  MatXi idx;     // rows x taps
  MatXd weight;  // rows x taps
};

using GatherPlanPtr = std::shared_ptr<const GatherPlan>;

template <typename Scalar>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  const MatX<Scalar>& value(Var v) const { return nodes_[v.id].value; }
  const MatX<Scalar>& grad(Var v) const { return nodes_[v.id].grad; }
  Eigen::Index rows(Var v) const { return nodes_[v.id].value.rows(); }
  Eigen::Index cols(Var v) const { return nodes_[v.id].value.cols(); }

  Var constant(MatX<Scalar> value) { return push(std::move(value), false, {}); }

  Var scalar_constant(Scalar s) {
    MatX<Scalar> m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
  }

  // Leaf backed by a named parameter; backward accumulates into store.grad.
  Var param(ParameterStore<Scalar>& store, const std::string& name) {
    auto& entry = store.at(name);
    Var out = push(entry.value, true, [&entry](Tape& t, int id) {
      entry.grad += t.nodes_[id].grad;
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    VOXDET_REQUIRE(cols(a) == rows(b), "matmul: inner dimensions differ");
    MatX<Scalar> v = value(a) * value(b);
    return binary(std::move(v), a, b, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g * t.nodes_[pb].value.transpose());
      if (t.nodes_[pb].needs_grad) t.accum(pb, t.nodes_[pa].value.transpose() * g);
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return binary(value(a) + value(b), a, b, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g);
      if (t.nodes_[pb].needs_grad) t.accum(pb, g);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return binary(value(a) - value(b), a, b, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g);
      if (t.nodes_[pb].needs_grad) t.accum(pb, -g);
    });
  }

  Var cwise_mul(Var a, Var b) {
    require_same_shape(a, b, "cwise_mul");
    return binary(value(a).cwiseProduct(value(b)), a, b, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g.cwiseProduct(t.nodes_[pb].value));
      if (t.nodes_[pb].needs_grad) t.accum(pb, g.cwiseProduct(t.nodes_[pa].value));
    });
  }

  Var cwise_div(Var a, Var b) {
    require_same_shape(a, b, "cwise_div");
    return binary(value(a).cwiseQuotient(value(b)), a, b, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      const auto& bv = t.nodes_[pb].value;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g.cwiseQuotient(bv));
      if (t.nodes_[pb].needs_grad)
        t.accum(pb, -g.cwiseProduct(t.nodes_[id].value).cwiseQuotient(bv));
    });
  }

  // broadcast a 1 x C row (bias) over all rows of a
  Var add_rowvec(Var a, Var bias) {
    VOXDET_REQUIRE(rows(bias) == 1 && cols(bias) == cols(a), "add_rowvec: bias must be 1 x C");
    MatX<Scalar> v = value(a).rowwise() + value(bias).row(0);
    return binary(std::move(v), a, bias, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad) t.accum(pa, g);
      if (t.nodes_[pb].needs_grad) t.accum(pb, g.colwise().sum());
    });
  }

  // broadcast an R x 1 column over all columns of a
  Var mul_colvec(Var a, Var col) {
    VOXDET_REQUIRE(cols(col) == 1 && rows(col) == rows(a), "mul_colvec: column must be R x 1");
    MatX<Scalar> v = value(a).array().colwise() * value(col).col(0).array();
    return binary(std::move(v), a, col, [](Tape& t, int id, int pa, int pb) {
      const auto& g = t.nodes_[id].grad;
      if (t.nodes_[pa].needs_grad)
        t.accum(pa, (g.array().colwise() * t.nodes_[pb].value.col(0).array()).matrix());
      if (t.nodes_[pb].needs_grad)
        t.accum(pb, g.cwiseProduct(t.nodes_[pa].value).rowwise().sum());
    });
  }

  // y = scale * x + shift, elementwise with scalar coefficients
  Var affine(Var a, Scalar scale, Scalar shift) {
    MatX<Scalar> v = (value(a).array() * scale + shift).matrix();
    return unary(std::move(v), a, [scale](Tape& t, int id, int pa) {
      t.accum(pa, (t.nodes_[id].grad.array() * scale).matrix());
    });
  }

  Var relu(Var a) {
    MatX<Scalar> v = value(a).cwiseMax(Scalar(0));
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      // relu'(0) := 0
      MatX<Scalar> mask =
          (t.nodes_[pa].value.array() > Scalar(0)).template cast<Scalar>().matrix();
      t.accum(pa, t.nodes_[id].grad.cwiseProduct(mask));
    });
  }

  Var abs(Var a) {
    MatX<Scalar> v = value(a).cwiseAbs();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      MatX<Scalar> sign = t.nodes_[pa].value.array().sign().matrix();
      t.accum(pa, t.nodes_[id].grad.cwiseProduct(sign));
    });
  }

  Var square(Var a) {
    MatX<Scalar> v = value(a).array().square().matrix();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      t.accum(pa, Scalar(2) * t.nodes_[id].grad.cwiseProduct(t.nodes_[pa].value));
    });
  }

  Var exp(Var a) {
    MatX<Scalar> v = value(a).array().exp().matrix();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      t.accum(pa, t.nodes_[id].grad.cwiseProduct(t.nodes_[id].value));
    });
  }

  Var sigmoid(Var a) {
    MatX<Scalar> v = value(a).unaryExpr([](Scalar x) { return stable_sigmoid(x); });
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      const auto& y = t.nodes_[id].value.array();
      t.accum(pa, (t.nodes_[id].grad.array() * y * (Scalar(1) - y)).matrix());
    });
  }

  // log(1 + exp(x)), derivative sigmoid(x)
  Var softplus(Var a) {
    MatX<Scalar> v = value(a).unaryExpr([](Scalar x) {
      return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
    });
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      MatX<Scalar> s = t.nodes_[pa].value.unaryExpr([](Scalar x) { return stable_sigmoid(x); });
      t.accum(pa, t.nodes_[id].grad.cwiseProduct(s));
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    VOXDET_REQUIRE(!parts.empty(), "concat_cols: empty input");
    Eigen::Index r = rows(parts[0]);
    Eigen::Index c = 0;
    for (Var p : parts) {
      VOXDET_REQUIRE(rows(p) == r, "concat_cols: row counts differ");
      c += cols(p);
    }
    MatX<Scalar> v(r, c);
    Eigen::Index at = 0;
    for (Var p : parts) {
      v.middleCols(at, cols(p)) = value(p);
      at += cols(p);
    }
    std::vector<int> ids;
    ids.reserve(parts.size());
    bool needs = false;
    for (Var p : parts) {
      ids.push_back(p.id);
      needs |= nodes_[p.id].needs_grad;
    }
    return push(std::move(v), needs, [ids](Tape& t, int id) {
      const auto& g = t.nodes_[id].grad;
      Eigen::Index at = 0;
      for (int pid : ids) {
        Eigen::Index w = t.nodes_[pid].value.cols();
        if (t.nodes_[pid].needs_grad) t.accum(pid, g.middleCols(at, w));
        at += w;
      }
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    VOXDET_REQUIRE(start >= 0 && start + n <= cols(a), "slice_cols: out of range");
    MatX<Scalar> v = value(a).middleCols(start, n);
    return unary(std::move(v), a, [start, n](Tape& t, int id, int pa) {
      if (t.nodes_[pa].grad.size() == 0)
        t.nodes_[pa].grad =
            MatX<Scalar>::Zero(t.nodes_[pa].value.rows(), t.nodes_[pa].value.cols());
      t.nodes_[pa].grad.middleCols(start, n) += t.nodes_[id].grad;
    });
  }

  // out.row(r) = sum_k plan.weight(r,k) * src.row(plan.idx(r,k))
  Var gather(Var src, GatherPlanPtr plan) {
    const auto& sv = value(src);
    const GatherPlan& p = *plan;
    const Eigen::Index r = p.idx.rows(), taps = p.idx.cols(), c = sv.cols();
    MatX<Scalar> v = MatX<Scalar>::Zero(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < taps; ++k) {
        const int s = p.idx(i, k);
        if (s >= 0) v.row(i) += Scalar(p.weight(i, k)) * sv.row(s);
      }
    return unary(std::move(v), src, [plan = std::move(plan)](Tape& t, int id, int pa) {
      if (t.nodes_[pa].grad.size() == 0)
        t.nodes_[pa].grad =
            MatX<Scalar>::Zero(t.nodes_[pa].value.rows(), t.nodes_[pa].value.cols());
      const auto& g = t.nodes_[id].grad;
      for (Eigen::Index i = 0; i < plan->idx.rows(); ++i)
        for (Eigen::Index k = 0; k < plan->idx.cols(); ++k) {
          const int s = plan->idx(i, k);
          if (s >= 0) t.nodes_[pa].grad.row(s) += Scalar(plan->weight(i, k)) * g.row(i);
        }
    });
  }

  // im2col-style gather: out cols are tap blocks,
  // out(r, k*C..k*C+C-1) = weight(r,k) * src.row(idx(r,k))
  Var gather_concat(Var src, GatherPlanPtr plan) {
    const auto& sv = value(src);
    const GatherPlan& p = *plan;
    const Eigen::Index r = p.idx.rows(), taps = p.idx.cols(), c = sv.cols();
    MatX<Scalar> v = MatX<Scalar>::Zero(r, taps * c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < taps; ++k) {
        const int s = p.idx(i, k);
        if (s >= 0) v.block(i, k * c, 1, c) = Scalar(p.weight(i, k)) * sv.row(s);
      }
    return unary(std::move(v), src, [plan = std::move(plan), c](Tape& t, int id, int pa) {
      if (t.nodes_[pa].grad.size() == 0)
        t.nodes_[pa].grad =
            MatX<Scalar>::Zero(t.nodes_[pa].value.rows(), t.nodes_[pa].value.cols());
      const auto& g = t.nodes_[id].grad;
      for (Eigen::Index i = 0; i < plan->idx.rows(); ++i)
        for (Eigen::Index k = 0; k < plan->idx.cols(); ++k) {
          const int s = plan->idx(i, k);
          if (s >= 0)
            t.nodes_[pa].grad.row(s) += Scalar(plan->weight(i, k)) * g.block(i, k * c, 1, c);
        }
    });
  }

  // take column `col` of a (R*N) x C matrix and lay it out as R x N, row r
  // holding entries r*N .. r*N+N-1 (per-ray sample layout)
  Var rays_from_column(Var a, Eigen::Index col, Eigen::Index n_rays, Eigen::Index n_samples) {
    VOXDET_REQUIRE(rows(a) == n_rays * n_samples, "rays_from_column: row count mismatch");
    VOXDET_REQUIRE(col >= 0 && col < cols(a), "rays_from_column: column out of range");
    const auto& av = value(a);
    MatX<Scalar> v(n_rays, n_samples);
    for (Eigen::Index r = 0; r < n_rays; ++r)
      for (Eigen::Index i = 0; i < n_samples; ++i) v(r, i) = av(r * n_samples + i, col);
    return unary(std::move(v), a, [col, n_rays, n_samples](Tape& t, int id, int pa) {
      if (t.nodes_[pa].grad.size() == 0)
        t.nodes_[pa].grad =
            MatX<Scalar>::Zero(t.nodes_[pa].value.rows(), t.nodes_[pa].value.cols());
      const auto& g = t.nodes_[id].grad;
      for (Eigen::Index r = 0; r < n_rays; ++r)
        for (Eigen::Index i = 0; i < n_samples; ++i)
          t.nodes_[pa].grad(r * n_samples + i, col) += g(r, i);
    });
  }

  // Masked mean and population variance over k gathered sources: row r of
  // source i contributes gather_i(r) when plans[i] marks it effective
  // (idx(r,0) >= 0). Output columns are [mean] or [mean | var]. Rows with no
  // effective source stay zero. This is the aggregation hot path, fused so
  // the per-view intermediates never materialize.
  Var gathered_mean_var(const std::vector<Var>& sources,
                        const std::vector<GatherPlanPtr>& plans, bool want_var) {
    VOXDET_REQUIRE(!sources.empty() && sources.size() == plans.size(),
                   "gathered_mean_var: sources and plans misaligned");
    const Eigen::Index rows = plans[0]->idx.rows();
    const Eigen::Index c = cols(sources[0]);
    const int k = static_cast<int>(sources.size());

    auto gather_row = [&](int i, Eigen::Index r, Scalar* dst) {
      const GatherPlan& p = *plans[i];
      const MatX<Scalar>& src = nodes_[sources[i].id].value;
      for (Eigen::Index j = 0; j < c; ++j) dst[j] = Scalar(0);
      for (Eigen::Index tap = 0; tap < p.idx.cols(); ++tap) {
        const int s = p.idx(r, tap);
        if (s < 0) continue;
        const Scalar w = Scalar(p.weight(r, tap));
        const Scalar* row = src.data() + s * c;
        for (Eigen::Index j = 0; j < c; ++j) dst[j] += w * row[j];
      }
    };

    MatX<Scalar> out = MatX<Scalar>::Zero(rows, want_var ? 2 * c : c);
    auto inv_m = std::make_shared<VecX<Scalar>>(rows);
    std::vector<Scalar> buf(c);
    for (Eigen::Index r = 0; r < rows; ++r) {
      int m = 0;
      Scalar* mean = out.data() + r * out.cols();
      for (int i = 0; i < k; ++i) {
        if (plans[i]->idx(r, 0) < 0) continue;
        ++m;
        gather_row(i, r, buf.data());
        for (Eigen::Index j = 0; j < c; ++j) mean[j] += buf[j];
      }
      (*inv_m)(r) = m > 0 ? Scalar(1) / Scalar(m) : Scalar(0);
      for (Eigen::Index j = 0; j < c; ++j) mean[j] *= (*inv_m)(r);
      if (want_var && m > 0) {
        Scalar* var = mean + c;
        for (int i = 0; i < k; ++i) {
          if (plans[i]->idx(r, 0) < 0) continue;
          gather_row(i, r, buf.data());
          for (Eigen::Index j = 0; j < c; ++j) {
            const Scalar d = buf[j] - mean[j];
            var[j] += d * d;
          }
        }
        for (Eigen::Index j = 0; j < c; ++j) var[j] *= (*inv_m)(r);
      }
    }

    std::vector<int> ids;
    bool needs = false;
    for (Var s : sources) {
      ids.push_back(s.id);
      needs |= nodes_[s.id].needs_grad;
    }
    return push(std::move(out), needs,
                [ids, plans, inv_m, c, want_var](Tape& t, int id) {
                  const MatX<Scalar>& g = t.nodes_[id].grad;
                  const MatX<Scalar>& val = t.nodes_[id].value;
                  const Eigen::Index rows = val.rows();
                  std::vector<Scalar> gi(c), common(c);
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    Node& src = t.nodes_[ids[i]];
                    if (!src.needs_grad) continue;
                    if (src.grad.size() == 0)
                      src.grad = MatX<Scalar>::Zero(src.value.rows(), src.value.cols());
                    const GatherPlan& p = *plans[i];
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      if (p.idx(r, 0) < 0) continue;
                      const Scalar im = (*inv_m)(r);
                      const Scalar* grow = g.data() + r * g.cols();
                      const Scalar* mean = val.data() + r * val.cols();
                      if (want_var) {
                        // recompute this source's gathered row
                        for (Eigen::Index j = 0; j < c; ++j) gi[j] = Scalar(0);
                        for (Eigen::Index tap = 0; tap < p.idx.cols(); ++tap) {
                          const int s = p.idx(r, tap);
                          if (s < 0) continue;
                          const Scalar w = Scalar(p.weight(r, tap));
                          const Scalar* row = src.value.data() + s * c;
                          for (Eigen::Index j = 0; j < c; ++j) gi[j] += w * row[j];
                        }
                        // d var_j / d g_ij = 2 (g_ij - mean_j) / m
                        for (Eigen::Index j = 0; j < c; ++j)
                          common[j] = grow[j] * im +
                                      grow[c + j] * Scalar(2) * (gi[j] - mean[j]) * im;
                      } else {
                        for (Eigen::Index j = 0; j < c; ++j) common[j] = grow[j] * im;
                      }
                      for (Eigen::Index tap = 0; tap < p.idx.cols(); ++tap) {
                        const int s = p.idx(r, tap);
                        if (s < 0) continue;
                        const Scalar w = Scalar(p.weight(r, tap));
                        Scalar* dst = src.grad.data() + s * c;
                        for (Eigen::Index j = 0; j < c; ++j) dst[j] += w * common[j];
                      }
                    }
                  }
                });
  }

  Var row_sum(Var a) {
    MatX<Scalar> v = value(a).rowwise().sum();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      t.accum(pa, t.nodes_[id].grad.col(0).replicate(1, t.nodes_[pa].value.cols()));
    });
  }

  Var col_sum(Var a) {
    MatX<Scalar> v = value(a).colwise().sum();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      t.accum(pa, t.nodes_[id].grad.row(0).replicate(t.nodes_[pa].value.rows(), 1));
    });
  }

  Var sum_all(Var a) {
    MatX<Scalar> v(1, 1);
    v(0, 0) = value(a).sum();
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      t.accum(pa, MatX<Scalar>::Constant(t.nodes_[pa].value.rows(), t.nodes_[pa].value.cols(),
                                         t.nodes_[id].grad(0, 0)));
    });
  }

  // per-row exclusive prefix sum: y(r, i) = sum_{j < i} x(r, j)
  Var row_cumsum_exclusive(Var a) {
    const auto& av = value(a);
    MatX<Scalar> v(av.rows(), av.cols());
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      Scalar acc = 0;
      for (Eigen::Index i = 0; i < av.cols(); ++i) {
        v(r, i) = acc;
        acc += av(r, i);
      }
    }
    return unary(std::move(v), a, [](Tape& t, int id, int pa) {
      // dx(r, i) = sum_{j > i} dy(r, j)
      const auto& g = t.nodes_[id].grad;
      MatX<Scalar> gx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        Scalar acc = 0;
        for (Eigen::Index i = g.cols() - 1; i >= 0; --i) {
          gx(r, i) = acc;
          acc += g(r, i);
        }
      }
      t.accum(pa, std::move(gx));
    });
  }

  // Reverse pass from a 1x1 loss node. Gradients of parameter leaves are
  // accumulated into their ParameterStore entries.
  void backward(Var loss) {
    VOXDET_REQUIRE(rows(loss) == 1 && cols(loss) == 1, "backward: loss must be a 1x1 node");
    VOXDET_REQUIRE(std::isfinite(static_cast<double>(value(loss)(0, 0))),
                   "backward: loss is not finite");
    nodes_[loss.id].grad = MatX<Scalar>::Constant(1, 1, Scalar(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(*this, id);
    }
  }

 private:
  struct Node {
    MatX<Scalar> value;
    MatX<Scalar> grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };

  static Scalar stable_sigmoid(Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    VOXDET_REQUIRE(rows(a) == rows(b) && cols(a) == cols(b),
                   std::string(op) + ": shapes differ");
  }

  Var push(MatX<Scalar> value, bool needs_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename F>
  Var unary(MatX<Scalar> v, Var a, F&& f) {
    const int pa = a.id;
    const bool needs = nodes_[pa].needs_grad;
    return push(std::move(v), needs,
                needs ? std::function<void(Tape&, int)>(
                            [pa, f = std::forward<F>(f)](Tape& t, int id) { f(t, id, pa); })
                      : std::function<void(Tape&, int)>());
  }

  template <typename F>
  Var binary(MatX<Scalar> v, Var a, Var b, F&& f) {
    const int pa = a.id, pb = b.id;
    const bool needs = nodes_[pa].needs_grad || nodes_[pb].needs_grad;
    return push(std::move(v), needs,
                needs ? std::function<void(Tape&, int)>(
                            [pa, pb, f = std::forward<F>(f)](Tape& t, int id) { f(t, id, pa, pb); })
                      : std::function<void(Tape&, int)>());
  }

  template <typename Expr>
  void accum(int id, Expr&& e) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0)
      n.grad = std::forward<Expr>(e);
    else
      n.grad += e;
  }

  std::vector<Node> nodes_;
};

template <typename Scalar>
using Var = typename Tape<Scalar>::Var;

// uniform init in [-sqrt(1/fan_in), sqrt(1/fan_in)], one named stream per array
template <typename Scalar>
MatX<Scalar> uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                          std::uint64_t seed, const std::string& name) {
  Rng rng(seed, "init/" + name);
  const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
  MatX<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(rng.uniform(-a, a));
  return m;
}

}  // namespace voxdet::ad
