#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "voxdet/autodiff.hpp"
#include "voxdet/geometry.hpp"
#include "voxdet/volume.hpp"

namespace voxdet {

// Dense axis-aligned 3D detection head over the modulated feature volume:
// one 3x3x3 convolution per branch (classification, face offsets,
// centerness), FCOS-style center-inside target assignment with smallest-box
// tie-breaking, focal/BCE/IoU losses, greedy per-class NMS and PR-curve mAP.

template <typename Scalar>
struct Box3D {
  Vec3<Scalar> center = Vec3<Scalar>::Zero();
  Vec3<Scalar> size = Vec3<Scalar>::Ones();  // full extents, positive
  int label = 0;
  Scalar score = 1;  // predictions only

  Vec3<Scalar> min() const { return center - Scalar(0.5) * size; }
  Vec3<Scalar> max() const { return center + Scalar(0.5) * size; }
  Scalar volume() const { return size.prod(); }
  bool contains(const Vec3<Scalar>& p) const {
    return (p.array() >= min().array()).all() && (p.array() <= max().array()).all();
  }
};

using Box3Dd = Box3D<double>;

template <typename Scalar>
Scalar iou3d(const Box3D<Scalar>& a, const Box3D<Scalar>& b) {
  const Vec3<Scalar> lo = a.min().cwiseMax(b.min());
  const Vec3<Scalar> hi = a.max().cwiseMin(b.max());
  const Vec3<Scalar> d = (hi - lo).cwiseMax(Scalar(0));
  const Scalar inter = d.prod();
  const Scalar uni = a.volume() + b.volume() - inter;
  return uni > Scalar(0) ? inter / uni : Scalar(0);
}

// ---------------------------------------------------------------------------
// Head

template <typename Scalar>
struct HeadOutput {
  MatX<Scalar> cls_logits;   // nvox x K
  MatX<Scalar> box_deltas;   // nvox x 6, positive face offsets in meters
  VecX<Scalar> cntr_logits;  // nvox
};

template <typename Scalar>
struct HeadGraph {
  ad::Var<Scalar> cls_logits;
  ad::Var<Scalar> box_deltas;  // exp of the raw regression output
  ad::Var<Scalar> cntr_logits;
};

template <typename Scalar>
void init_head_params(ad::ParameterStore<Scalar>& store, int channels, int n_classes,
                      std::uint64_t seed, const std::string& prefix = "head.") {
  const int in = 27 * channels;
  store.emplace(prefix + "cls.w", ad::uniform_init<Scalar>(in, n_classes, in, seed, prefix + "cls.w"));
  store.emplace(prefix + "cls.b", MatX<Scalar>::Zero(1, n_classes));
  store.emplace(prefix + "box.w", ad::uniform_init<Scalar>(in, 6, in, seed, prefix + "box.w"));
  store.emplace(prefix + "box.b", MatX<Scalar>::Zero(1, 6));
  store.emplace(prefix + "cntr.w", ad::uniform_init<Scalar>(in, 1, in, seed, prefix + "cntr.w"));
  store.emplace(prefix + "cntr.b", MatX<Scalar>::Zero(1, 1));
}

// Three parallel stride-1 3x3x3 convolution branches. Face offsets go through
// exp so decoded boxes always have positive extents.
template <typename Scalar>
HeadGraph<Scalar> head_forward(ad::Tape<Scalar>& tape, ad::ParameterStore<Scalar>& store,
                               ad::Var<Scalar> features, const ad::GatherPlanPtr& grid_plan,
                               const std::string& prefix = "head.") {
  auto cols = tape.gather_concat(features, grid_plan);
  auto branch = [&](const std::string& name) {
    auto w = tape.param(store, prefix + name + ".w");
    auto b = tape.param(store, prefix + name + ".b");
    return tape.add_rowvec(tape.matmul(cols, w), b);
  };
  HeadGraph<Scalar> out;
  out.cls_logits = branch("cls");
  out.box_deltas = tape.exp(branch("box"));
  out.cntr_logits = branch("cntr");
  return out;
}

// ---------------------------------------------------------------------------
// Target assignment

template <typename Scalar>
struct DetectionTargets {
  VecXi cls;                    // nvox, class id or -1 for background
  MatX<Scalar> offsets;         // nvox x 6: (x-, x+, y-, y+, z-, z+) face distances
  VecX<Scalar> centerness;      // nvox, in [0, 1]
  std::vector<int> positives;   // voxel indices with cls >= 0
};

// A voxel center inside a box is positive for it; nested boxes resolve to the
// smallest volume. Centerness is the geometric mean over the three axes of
// min(d-, d+) / max(d-, d+).
template <typename Scalar>
DetectionTargets<Scalar> assign_targets(const GridSpec<Scalar>& grid,
                                        const std::vector<Box3D<Scalar>>& gt_boxes) {
  for (const auto& b : gt_boxes)
    VOXDET_REQUIRE(b.size.minCoeff() > Scalar(0), "assign_targets: degenerate gt box");
  const MatX<Scalar> centers = voxel_centers(grid);
  const Eigen::Index nvox = centers.rows();
  DetectionTargets<Scalar> t;
  t.cls = VecXi::Constant(nvox, -1);
  t.offsets = MatX<Scalar>::Zero(nvox, 6);
  t.centerness = VecX<Scalar>::Zero(nvox);
  for (Eigen::Index r = 0; r < nvox; ++r) {
    const Vec3<Scalar> p = centers.row(r).transpose();
    int best = -1;
    for (std::size_t b = 0; b < gt_boxes.size(); ++b) {
      if (!gt_boxes[b].contains(p)) continue;
      if (best < 0 || gt_boxes[b].volume() < gt_boxes[best].volume()) best = static_cast<int>(b);
    }
    if (best < 0) continue;
    const Box3D<Scalar>& box = gt_boxes[best];
    t.cls(r) = box.label;
    Scalar cent = 1;
    for (int a = 0; a < 3; ++a) {
      const Scalar dm = p(a) - box.min()(a);
      const Scalar dp = box.max()(a) - p(a);
      t.offsets(r, 2 * a) = dm;
      t.offsets(r, 2 * a + 1) = dp;
      cent *= std::min(dm, dp) / std::max(dm, dp);
    }
    t.centerness(r) = std::cbrt(cent);
    t.positives.push_back(static_cast<int>(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Losses

template <typename Scalar>
struct DetectionLossGraph {
  ad::Var<Scalar> cls;   // focal, normalized by positive count
  ad::Var<Scalar> cntr;  // BCE on positives
  ad::Var<Scalar> loc;   // 1 - IoU on positives
  int n_pos = 0;
};

inline ad::GatherPlanPtr row_pick_plan(const std::vector<int>& rows) {
  auto plan = std::make_shared<ad::GatherPlan>();
  plan->idx.resize(static_cast<Eigen::Index>(rows.size()), 1);
  plan->weight = MatXd::Ones(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) plan->idx(static_cast<Eigen::Index>(i), 0) = rows[i];
  return plan;
}

template <typename Scalar>
DetectionLossGraph<Scalar> detection_losses(ad::Tape<Scalar>& tape, const HeadGraph<Scalar>& head,
                                            const DetectionTargets<Scalar>& targets,
                                            Scalar focal_alpha = Scalar(0.25)) {
  const Eigen::Index nvox = tape.rows(head.cls_logits);
  const Eigen::Index k = tape.cols(head.cls_logits);
  DetectionLossGraph<Scalar> out;
  out.n_pos = static_cast<int>(targets.positives.size());
  const Scalar norm = Scalar(1) / Scalar(std::max(out.n_pos, 1));

  // focal loss, one-vs-all over every voxel and class (gamma = 2)
  MatX<Scalar> sign = MatX<Scalar>::Constant(nvox, k, Scalar(-1));
  MatX<Scalar> alpha_t = MatX<Scalar>::Constant(nvox, k, Scalar(1) - focal_alpha);
  for (Eigen::Index r = 0; r < nvox; ++r)
    if (targets.cls(r) >= 0) {
      sign(r, targets.cls(r)) = Scalar(1);
      alpha_t(r, targets.cls(r)) = focal_alpha;
    }
  auto u = tape.cwise_mul(head.cls_logits, tape.constant(sign));
  auto pt = tape.sigmoid(u);
  auto focus = tape.square(tape.affine(pt, Scalar(-1), Scalar(1)));
  auto ce = tape.softplus(tape.affine(u, Scalar(-1), Scalar(0)));
  auto focal = tape.cwise_mul(tape.constant(alpha_t), tape.cwise_mul(focus, ce));
  out.cls = tape.affine(tape.sum_all(focal), norm, Scalar(0));

  auto zero = tape.scalar_constant(Scalar(0));
  if (out.n_pos == 0) {
    out.cntr = zero;
    out.loc = zero;
    return out;
  }
  const auto pick = row_pick_plan(targets.positives);
  const Eigen::Index np = static_cast<Eigen::Index>(targets.positives.size());
  const Scalar inv_np = Scalar(1) / Scalar(np);

  // centerness BCE with logits
  MatX<Scalar> cent(np, 1);
  for (Eigen::Index i = 0; i < np; ++i) cent(i, 0) = targets.centerness(targets.positives[i]);
  auto x = tape.gather(head.cntr_logits, pick);
  auto sp_pos = tape.softplus(x);
  auto sp_neg = tape.softplus(tape.affine(x, Scalar(-1), Scalar(0)));
  auto cvar = tape.constant(cent);
  auto one_minus_c = tape.affine(cvar, Scalar(-1), Scalar(1));
  auto bce = tape.add(tape.cwise_mul(cvar, sp_neg), tape.cwise_mul(one_minus_c, sp_pos));
  out.cntr = tape.affine(tape.sum_all(bce), inv_np, Scalar(0));

  // IoU loss between predicted and target face offsets around the same anchor
  MatX<Scalar> goff(np, 6);
  for (Eigen::Index i = 0; i < np; ++i) goff.row(i) = targets.offsets.row(targets.positives[i]);
  auto pred = tape.gather(head.box_deltas, pick);  // np x 6, positive
  auto min_with_const = [&](ad::Var<Scalar> a, const MatX<Scalar>& c) {
    auto cv = tape.constant(c);
    return tape.sub(a, tape.relu(tape.sub(a, cv)));
  };
  ad::Var<Scalar> inter, vol_p;
  MatX<Scalar> vol_g = MatX<Scalar>::Ones(np, 1);
  for (int a = 0; a < 3; ++a) {
    auto pm = tape.slice_cols(pred, 2 * a, 1);
    auto pp = tape.slice_cols(pred, 2 * a + 1, 1);
    MatX<Scalar> gm = goff.col(2 * a), gp = goff.col(2 * a + 1);
    auto inter_a = tape.add(min_with_const(pm, gm), min_with_const(pp, gp));
    auto len_p = tape.add(pm, pp);
    inter = a == 0 ? inter_a : tape.cwise_mul(inter, inter_a);
    vol_p = a == 0 ? len_p : tape.cwise_mul(vol_p, len_p);
    vol_g.array() *= (gm + gp).array();
  }
  auto uni = tape.sub(tape.add(vol_p, tape.constant(vol_g)), inter);
  auto iou = tape.cwise_div(inter, uni);
  out.loc = tape.affine(tape.sum_all(tape.affine(iou, Scalar(-1), Scalar(1))), inv_np, Scalar(0));
  return out;
}

// ---------------------------------------------------------------------------
// Decoding, NMS, evaluation

template <typename Scalar>
std::vector<Box3D<Scalar>> decode_and_nms(const HeadOutput<Scalar>& out, const GridSpec<Scalar>& grid,
                                          Scalar score_thresh = Scalar(0.05),
                                          Scalar iou_thresh = Scalar(0.25)) {
  VOXDET_REQUIRE(score_thresh >= 0 && score_thresh <= 1 && iou_thresh >= 0 && iou_thresh <= 1,
                 "decode_and_nms: thresholds must be in [0, 1]");
  const MatX<Scalar> centers = voxel_centers(grid);
  const Eigen::Index nvox = out.cls_logits.rows();
  const Eigen::Index k = out.cls_logits.cols();
  auto sigmoid = [](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); };

  std::vector<Box3D<Scalar>> candidates;
  for (Eigen::Index r = 0; r < nvox; ++r) {
    const Scalar cent = sigmoid(out.cntr_logits(r));
    for (Eigen::Index c = 0; c < k; ++c) {
      const Scalar score = sigmoid(out.cls_logits(r, c)) * cent;
      if (score <= score_thresh) continue;
      Box3D<Scalar> box;
      const Vec3<Scalar> p = centers.row(r).transpose();
      Vec3<Scalar> lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo(a) = p(a) - out.box_deltas(r, 2 * a);
        hi(a) = p(a) + out.box_deltas(r, 2 * a + 1);
      }
      box.center = Scalar(0.5) * (lo + hi);
      box.size = hi - lo;
      box.label = static_cast<int>(c);
      box.score = score;
      candidates.push_back(box);
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<Box3D<Scalar>> kept;
  for (const auto& cand : candidates) {
    bool suppressed = false;
    for (const auto& keep : kept)
      if (keep.label == cand.label && iou3d(keep, cand) >= iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

// Per-class average precision with greedy matching (each ground-truth box
// matched at most once, predictions in descending score order), averaged over
// classes that appear in the ground truth.
template <typename Scalar>
std::map<double, double> eval_map(const std::vector<std::vector<Box3D<Scalar>>>& preds,
                                  const std::vector<std::vector<Box3D<Scalar>>>& gts,
                                  const std::vector<double>& iou_thresholds = {0.25, 0.5}) {
  VOXDET_REQUIRE(preds.size() == gts.size(), "eval_map: scene counts differ");
  std::map<int, int> gt_count;
  for (const auto& scene : gts)
    for (const auto& b : scene) gt_count[b.label] += 1;

  std::map<double, double> result;
  for (double thresh : iou_thresholds) {
    double ap_sum = 0;
    int n_classes = 0;
    for (const auto& [label, n_gt] : gt_count) {
      struct Cand {
        double score;
        std::size_t scene;
        const Box3D<Scalar>* box;
      };
      std::vector<Cand> cands;
      for (std::size_t s = 0; s < preds.size(); ++s)
        for (const auto& b : preds[s])
          if (b.label == label) cands.push_back({static_cast<double>(b.score), s, &b});
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Cand& a, const Cand& b) { return a.score > b.score; });

      std::vector<std::vector<bool>> matched(gts.size());
      for (std::size_t s = 0; s < gts.size(); ++s) matched[s].assign(gts[s].size(), false);

      std::vector<double> precision, recall;
      int tp = 0, fp = 0;
      for (const auto& cand : cands) {
        double best_iou = 0;
        int best_gt = -1;
        const auto& scene_gts = gts[cand.scene];
        for (std::size_t g = 0; g < scene_gts.size(); ++g) {
          if (scene_gts[g].label != label || matched[cand.scene][g]) continue;
          const double iou = static_cast<double>(iou3d(*cand.box, scene_gts[g]));
          if (iou > best_iou) {
            best_iou = iou;
            best_gt = static_cast<int>(g);
          }
        }
        if (best_gt >= 0 && best_iou >= thresh) {
          matched[cand.scene][best_gt] = true;
          ++tp;
        } else {
          ++fp;
        }
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
      }
      // area under the PR curve with the precision envelope
      double ap = 0, prev_recall = 0;
      for (std::size_t i = 0; i < precision.size(); ++i) {
        double p_env = 0;
        for (std::size_t j = i; j < precision.size(); ++j) p_env = std::max(p_env, precision[j]);
        ap += (recall[i] - prev_recall) * p_env;
        prev_recall = recall[i];
      }
      ap_sum += ap;
      ++n_classes;
    }
    result[thresh] = n_classes > 0 ? ap_sum / n_classes : 0.0;
  }
  return result;
}

}  // namespace voxdet
