#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "voxdet/train.hpp"

namespace voxdet {

// Ablation orchestration: each suite trains a set of config variants over
// several seeds and reports per-variant metrics, mirroring the geometry /
// loss / feature / sharing / detection-branch study axes.

template <typename Scalar = float>
struct ExperimentResult {
  LossReport final_loss;
  NvsMetrics nvs;
  std::map<double, double> map;  // iou threshold -> mAP
};

// Train on procedurally generated scenes and evaluate on the held-out split.
template <typename Scalar = float>
ExperimentResult<Scalar> run_experiment(const TrainConfig& config, bool eval_det, bool eval_nvs,
                                        std::ostream* metrics_csv = nullptr,
                                        std::ostream* log = nullptr) {
  const Dataset data = generate_dataset(config);
  TrainState<Scalar> state(config);
  const auto train_caches = make_scene_caches(data.train, state.plans, state.setup);
  ExperimentResult<Scalar> result;
  result.final_loss = train_loop(state, train_caches, metrics_csv, log);
  const auto heldout_caches = make_scene_caches(data.heldout, state.plans, state.setup);
  if (eval_det && state.setup.detection_branch)
    result.map = evaluate_detection(state.store, state.setup, state.plans, heldout_caches, config);
  if (eval_nvs && state.setup.nerf_branch_active())
    result.nvs = evaluate_nvs(state.store, state.setup, state.plans, heldout_caches, config);
  return result;
}

struct AblationRow {
  std::string suite;
  std::string variant;
  std::uint64_t seed = 0;
  double map25 = 0, map50 = 0;
  double psnr = 0, ssim = 0, rmse = 0;
};

struct AblationVariant {
  std::string name;
  TrainConfig config;
  bool eval_det = true;
  bool eval_nvs = false;
};

inline std::vector<AblationVariant> ablation_variants(const std::string& suite,
                                                      const TrainConfig& base) {
  std::vector<AblationVariant> variants;
  auto add = [&](const std::string& name, TrainConfig cfg, bool det = true, bool nvs = false) {
    variants.push_back({name, cfg, det, nvs});
  };
  if (suite == "geometry") {
    TrainConfig none = base;
    none.geometry_mode = GeometryMode::kNone;
    none.use_photo_loss = none.use_depth_loss = false;
    add("none", none);
    TrainConfig gt = base;
    gt.geometry_mode = GeometryMode::kGtDepth;
    gt.use_photo_loss = gt.use_depth_loss = false;
    add("gt-depth", gt);
    TrainConfig cost = base;
    cost.geometry_mode = GeometryMode::kCostVolume;
    cost.use_photo_loss = cost.use_depth_loss = false;
    add("cost-volume", cost);
    TrainConfig wo = base;
    wo.geometry_mode = GeometryMode::kNerfOpacity;
    wo.use_photo_loss = wo.use_depth_loss = false;
    add("nerf-opacity-wo-nerf", wo);
    TrainConfig full = base;
    full.geometry_mode = GeometryMode::kNerfOpacity;
    add("nerf-opacity", full);
  } else if (suite == "losses") {
    for (const bool photo : {true, false})
      for (const bool depth : {true, false}) {
        TrainConfig cfg = base;
        cfg.geometry_mode = GeometryMode::kNerfOpacity;
        cfg.use_photo_loss = photo;
        cfg.use_depth_loss = depth;
        std::string name = photo ? (depth ? "photo+depth" : "photo") : (depth ? "depth" : "none");
        add(name, cfg);
      }
  } else if (suite == "features") {
    TrainConfig avg = base;
    avg.use_var = false;
    avg.use_rgb = false;
    if (avg.geometry_mode == GeometryMode::kCostVolume) avg.geometry_mode = GeometryMode::kNerfOpacity;
    add("avg", avg);
    TrainConfig av = base;
    av.use_var = true;
    av.use_rgb = false;
    add("avg+var", av);
    TrainConfig avc = base;
    avc.use_var = true;
    avc.use_rgb = true;
    add("avg+var+color", avc);
  } else if (suite == "sample-share") {
    for (const bool share : {true, false})
      for (const SampleSource src : {SampleSource::kImage, SampleSource::kVolume}) {
        TrainConfig cfg = base;
        cfg.share_gmlp = share;
        cfg.sample_source = src;
        std::string name = std::string(share ? "shared" : "unshared") + "/" + to_string(src);
        add(name, cfg, true, true);
      }
  } else if (suite == "det-branch") {
    TrainConfig with = base;
    with.detection_branch = true;
    add("with-det", with, true, true);
    TrainConfig without = base;
    without.detection_branch = false;
    add("without-det", without, false, true);
  } else {
    throw ContractViolation("ablate: unknown suite '" + suite + "'");
  }
  return variants;
}

template <typename Scalar = float>
std::vector<AblationRow> run_ablation(const std::string& suite, const TrainConfig& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* log = nullptr) {
  std::vector<AblationRow> rows;
  for (const auto& variant : ablation_variants(suite, base)) {
    for (const std::uint64_t seed : seeds) {
      TrainConfig cfg = variant.config;
      cfg.seed = seed;
      if (log) (*log) << "[ablate] " << suite << " / " << variant.name << " seed " << seed << "\n";
      const auto result =
          run_experiment<Scalar>(cfg, variant.eval_det, variant.eval_nvs, nullptr, nullptr);
      AblationRow row;
      row.suite = suite;
      row.variant = variant.name;
      row.seed = seed;
      if (result.map.count(0.25)) row.map25 = result.map.at(0.25);
      if (result.map.count(0.5)) row.map50 = result.map.at(0.5);
      row.psnr = result.nvs.psnr;
      row.ssim = result.nvs.ssim;
      row.rmse = result.nvs.rmse;
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "suite,variant,seed,map25,map50,psnr,ssim,rmse\n";
  char line[320];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%llu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.suite.c_str(),
                  r.variant.c_str(), static_cast<unsigned long long>(r.seed), r.map25, r.map50,
                  r.psnr, r.ssim, r.rmse);
    out << line;
  }
}

struct VariantStats {
  std::string variant;
  int n = 0;
  double mean = 0, stdev = 0;
};

inline std::vector<VariantStats> summarize_metric(const std::vector<AblationRow>& rows,
                                                  double AblationRow::*metric) {
  std::vector<VariantStats> out;
  for (const auto& row : rows) {
    VariantStats* stats = nullptr;
    for (auto& s : out)
      if (s.variant == row.variant) stats = &s;
    if (!stats) {
      out.push_back({row.variant, 0, 0, 0});
      stats = &out.back();
    }
    stats->mean += row.*metric;
    stats->n += 1;
  }
  for (auto& s : out) s.mean /= std::max(s.n, 1);
  for (const auto& row : rows)
    for (auto& s : out)
      if (s.variant == row.variant) s.stdev += (row.*metric - s.mean) * (row.*metric - s.mean);
  for (auto& s : out) s.stdev = s.n > 1 ? std::sqrt(s.stdev / (s.n - 1)) : 0.0;
  return out;
}

inline void write_ablation_summary(std::ostream& out, const std::vector<AblationRow>& rows,
                                   const std::string& metric_name, double AblationRow::*metric) {
  out << "variant," << metric_name << "_mean," << metric_name << "_std,n\n";
  char line[192];
  for (const auto& s : summarize_metric(rows, metric)) {
    std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%d\n", s.variant.c_str(), s.mean, s.stdev, s.n);
    out << line;
  }
}

}  // namespace voxdet
