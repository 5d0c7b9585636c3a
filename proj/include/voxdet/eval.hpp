#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "voxdet/model.hpp"

namespace voxdet {

// Novel-view synthesis and detection evaluation on held-out scenes.

inline double psnr(const MatXd& pred, const MatXd& gt, double cap_db = 99.0) {
  const double mse = (pred - gt).array().square().mean();
  if (mse <= 0) return cap_db;
  return std::min(10.0 * std::log10(1.0 / mse), cap_db);
}

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, unit
// dynamic range; evaluated on the valid (fully-overlapping) region and
// averaged over the three channels.
inline double ssim(const MatXd& pred, const MatXd& gt, int width, int height) {
  constexpr int kWin = 11, kHalf = 5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  if (width < kWin || height < kWin) return pred.isApprox(gt) ? 1.0 : 0.0;
  double kernel[kWin][kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double di = i - kHalf, dj = j - kHalf;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& k : row) k /= ksum;

  double total = 0;
  long count = 0;
  for (int c = 0; c < 3; ++c)
    for (int v = kHalf; v < height - kHalf; ++v)
      for (int u = kHalf; u < width - kHalf; ++u) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const int p = (v + i - kHalf) * width + (u + j - kHalf);
            const double x = pred(p, c), y = gt(p, c), w = kernel[i][j];
            mx += w * x;
            my += w * y;
            mxx += w * x * x;
            myy += w * y * y;
            mxy += w * x * y;
          }
        const double vx = mxx - mx * mx, vy = myy - my * my, vxy = mxy - mx * my;
        total += ((2 * mx * my + kC1) * (2 * vxy + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
  return total / count;
}

// Area under the ROC curve for a scored two-class ranking, computed as the
// normalized Mann-Whitney U statistic (ties count half).
inline double ranking_auc(const std::vector<double>& positive_scores,
                          const std::vector<double>& negative_scores) {
  VOXDET_REQUIRE(!positive_scores.empty() && !negative_scores.empty(),
                 "ranking_auc: both classes must be non-empty");
  double u = 0;
  for (const double p : positive_scores)
    for (const double n : negative_scores) {
      if (p > n)
        u += 1.0;
      else if (p == n)
        u += 0.5;
    }
  return u / (static_cast<double>(positive_scores.size()) * negative_scores.size());
}

inline double depth_rmse(const VecXd& pred, const VecXd& gt) {
  double sum = 0;
  long n = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(gt(i)) || gt(i) <= 0) continue;  // pixels with valid gt only
    const double d = pred(i) - gt(i);
    sum += d * d;
    ++n;
  }
  return n > 0 ? std::sqrt(sum / n) : 0.0;
}

// ---------------------------------------------------------------------------
// Rendering novel views from a trained model

template <typename Scalar>
struct VolumeValues {
  MatX<Scalar> v_avg, v_var, rgb_avg, rgb_var;
  VecXi m_p;
};

template <typename Scalar>
VolumeValues<Scalar> compute_volume_values(ad::ParameterStore<Scalar>& store,
                                           const ModelSetup& setup,
                                           const ModelPlans<Scalar>& plans,
                                           const SceneCache<Scalar>& cache) {
  ad::Tape<Scalar> tape;
  auto fmaps = encode_input_views(tape, store, plans, cache, /*trainable=*/false);
  auto vg = build_volume_graph(tape, fmaps, cache.vox_scatters, setup.toggles.use_var);
  VolumeValues<Scalar> out;
  out.v_avg = tape.value(vg.v_avg);
  if (setup.toggles.use_var) out.v_var = tape.value(vg.v_var);
  out.rgb_avg = tape.value(vg.rgb_avg);
  out.rgb_var = tape.value(vg.rgb_var);
  out.m_p = vg.m_p;
  return out;
}

struct RenderedView {
  MatXd image;  // (H*W) x 3
  VecXd depth;  // H*W
};

// Renders one novel view with deterministic mid-bin sampling, in chunks to
// bound tape memory.
template <typename Scalar>
RenderedView render_novel_view(ad::ParameterStore<Scalar>& store, const ModelSetup& setup,
                               const ModelPlans<Scalar>& plans, const SceneCache<Scalar>& cache,
                               const TrainConfig& config, int novel_index, int chunk_rays = 768) {
  const auto& view = cache.novel_views.at(novel_index);
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  const int n = config.n_samples;
  const Scalar delta = Scalar((config.far - config.near) / n);
  const VecXd t = sample_ray_points(config.near, config.far, n, RaySampleMode::kDeterministic);

  // per-view feature maps once; volume-mode statistics once
  std::vector<MatX<Scalar>> fmap_values;
  for (const auto& iv : cache.input_views)
    fmap_values.push_back(encode_view_values(store, plans.encoder, iv.image).data);
  VolumeValues<Scalar> vol;
  if (setup.sample_source == SampleSource::kVolume)
    vol = compute_volume_values(store, setup, plans, cache);

  RenderedView out;
  out.image.resize(w * h, 3);
  out.depth.resize(w * h);

  for (int start = 0; start < w * h; start += chunk_rays) {
    const int rays = std::min(chunk_rays, w * h - start);
    RayBatch<Scalar> batch;
    batch.n_rays = rays;
    batch.n_samples = n;
    batch.delta = delta;
    batch.points.resize(rays * n, 3);
    batch.dirs.resize(rays * n, 3);
    batch.points_norm.resize(rays * n, 3);
    batch.t_matrix.resize(rays, n);
    batch.target_rgb = MatX<Scalar>::Zero(rays, 3);
    batch.target_depth = VecX<Scalar>::Zero(rays);
    batch.view_idx = VecXi::Constant(rays, novel_index);
    batch.pixels.resize(rays, 2);
    for (int r = 0; r < rays; ++r) {
      const int pix = start + r;
      const int u = pix % w, v = pix / w;
      batch.pixels(r, 0) = u;
      batch.pixels(r, 1) = v;
      const Ray<Scalar> ray = pixel_to_ray(Scalar(u), Scalar(v), view);
      for (int i = 0; i < n; ++i) {
        batch.t_matrix(r, i) = Scalar(t(i));
        const Vec3<Scalar> p = ray.at(Scalar(t(i)));
        batch.points.row(r * n + i) = p.transpose();
        batch.dirs.row(r * n + i) = ray.direction.transpose();
        batch.points_norm.row(r * n + i) = plans.grid.normalize_point(p).transpose();
      }
    }

    ad::Tape<Scalar> tape;
    std::vector<ad::Var<Scalar>> fmaps;
    for (const auto& fm : fmap_values) fmaps.push_back(tape.constant(fm));
    VolumeGraph<Scalar> vg;
    if (setup.sample_source == SampleSource::kVolume) {
      vg.v_avg = tape.constant(vol.v_avg);
      if (setup.toggles.use_var) vg.v_var = tape.constant(vol.v_var);
      vg.rgb_avg = tape.constant(vol.rgb_avg);
      vg.rgb_var = tape.constant(vol.rgb_var);
      vg.m_p = vol.m_p;
    }
    auto fwd = build_nerf_graph(tape, store, setup, plans, cache, fmaps,
                                setup.sample_source == SampleSource::kVolume ? &vg : nullptr,
                                batch);
    const auto& color = tape.value(fwd.render.color);
    const auto& depth = tape.value(fwd.render.depth);
    for (int r = 0; r < rays; ++r) {
      for (int c = 0; c < 3; ++c) out.image(start + r, c) = static_cast<double>(color(r, c));
      out.depth(start + r) = static_cast<double>(depth(r, 0));
    }
  }
  return out;
}

struct NvsMetrics {
  double psnr = 0, ssim = 0, rmse = 0;
};

// Per-scene averages over every novel view, then averaged over scenes.
template <typename Scalar>
NvsMetrics evaluate_nvs(ad::ParameterStore<Scalar>& store, const ModelSetup& setup,
                        const ModelPlans<Scalar>& plans,
                        const std::vector<SceneCache<Scalar>>& scenes, const TrainConfig& config) {
  NvsMetrics total;
  VOXDET_REQUIRE(!scenes.empty(), "evaluate_nvs: no scenes");
  for (const auto& cache : scenes) {
    NvsMetrics scene_metrics;
    const int n_novel = static_cast<int>(cache.novel_views.size());
    for (int i = 0; i < n_novel; ++i) {
      const RenderedView rendered = render_novel_view(store, setup, plans, cache, config, i);
      const auto& view = cache.bundle->views[cache.bundle->n_input_views + i];
      const VecXd& gt_depth = cache.bundle->depth_maps[cache.bundle->n_input_views + i];
      scene_metrics.psnr += psnr(rendered.image, view.image);
      scene_metrics.ssim += ssim(rendered.image, view.image, view.intrinsics.width,
                                 view.intrinsics.height);
      scene_metrics.rmse += depth_rmse(rendered.depth, gt_depth);
    }
    total.psnr += scene_metrics.psnr / n_novel;
    total.ssim += scene_metrics.ssim / n_novel;
    total.rmse += scene_metrics.rmse / n_novel;
  }
  total.psnr /= scenes.size();
  total.ssim /= scenes.size();
  total.rmse /= scenes.size();
  return total;
}

// ---------------------------------------------------------------------------
// Detection evaluation

template <typename Scalar>
HeadOutput<double> compute_head_output(ad::ParameterStore<Scalar>& store, const ModelSetup& setup,
                                       const ModelPlans<Scalar>& plans,
                                       const SceneCache<Scalar>& cache,
                                       VecXd* opacity_out = nullptr) {
  ad::Tape<Scalar> tape;
  auto fmaps = encode_input_views(tape, store, plans, cache, /*trainable=*/false);
  auto det = build_detection_graph(tape, store, setup, plans, cache, fmaps);
  HeadOutput<double> out;
  out.cls_logits = tape.value(det.head.cls_logits).template cast<double>();
  out.box_deltas = tape.value(det.head.box_deltas).template cast<double>();
  out.cntr_logits = tape.value(det.head.cntr_logits).col(0).template cast<double>();
  if (opacity_out) {
    if (setup.geometry_mode == GeometryMode::kNerfOpacity)
      *opacity_out = tape.value(det.alpha).col(0).template cast<double>();
    else
      *opacity_out = VecXd::Zero(plans.grid.num_voxels());
  }
  return out;
}

template <typename Scalar>
std::map<double, double> evaluate_detection(ad::ParameterStore<Scalar>& store,
                                            const ModelSetup& setup,
                                            const ModelPlans<Scalar>& plans,
                                            const std::vector<SceneCache<Scalar>>& scenes,
                                            const TrainConfig& config) {
  GridSpecd grid_d = grid_from_config<double>(config);
  std::vector<std::vector<Box3Dd>> preds, gts;
  for (const auto& cache : scenes) {
    const HeadOutput<double> head = compute_head_output(store, setup, plans, cache);
    preds.push_back(decode_and_nms(head, grid_d, config.score_thresh, config.nms_iou));
    gts.push_back(cache.bundle->boxes);
  }
  return eval_map(preds, gts, {0.25, 0.5});
}

}  // namespace voxdet
