#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "voxdet/core.hpp"
#include "voxdet/geometry.hpp"

namespace voxdet {

enum class GeometryMode { kNerfOpacity, kCostVolume, kGtDepth, kNone };
enum class SampleSource { kImage, kVolume };

inline std::string to_string(GeometryMode m) {
  switch (m) {
    case GeometryMode::kNerfOpacity: return "nerf-opacity";
    case GeometryMode::kCostVolume: return "cost-volume";
    case GeometryMode::kGtDepth: return "gt-depth";
    default: return "none";
  }
}
inline std::string to_string(SampleSource s) {
  return s == SampleSource::kImage ? "image" : "volume";
}

// Flat key-value configuration covering the whole training harness; the
// on-disk format is one `key = value` per line with '#' comments. Every
// field has a default; unknown keys are rejected.
struct TrainConfig {
  // optimization
  std::uint64_t seed = 1;
  bool deterministic = true;
  int iterations = 3000;
  double learning_rate = 0.0002;
  double weight_decay = 0.0001;
  double lr_decay_factor = 0.1;  // applied at 2/3 and 11/12 of total iterations

  // NeRF branch
  int rays_per_iter = 2048;
  int n_samples = 64;
  double near = 0.2;
  double far = 8.0;
  int pe_bands = 10;
  int mlp_width = 256;
  bool use_photo_loss = true;
  bool use_depth_loss = true;
  SampleSource sample_source = SampleSource::kImage;
  bool share_gmlp = true;

  // feature augmentation toggles (mean is always on)
  bool use_var = true;
  bool use_rgb = true;

  // detection branch
  bool detection_branch = true;
  GeometryMode geometry_mode = GeometryMode::kNerfOpacity;
  bool modulate_full = false;  // also scale the variance channels fed to the head
  int encoder_channels = 32;
  int n_classes = 3;
  double score_thresh = 0.05;
  double nms_iou = 0.25;
  double focal_alpha = 0.25;

  // voxel grid (origin at the room minimum corner; voxel size = room / counts)
  int grid_nx = 24, grid_ny = 24, grid_nz = 12;
  double room_x = 6.4, room_y = 6.4, room_z = 3.2;

  // synthetic scenes
  int n_train_scenes = 32;
  int n_heldout_scenes = 8;
  int min_objects = 1, max_objects = 4;
  bool shading = false;

  // camera rig
  int image_width = 64, image_height = 48;
  double fx = 40, fy = 40;
  int n_input_views = 12;
  int n_novel_views = 10;
  double input_radius = 2.4, input_height = 1.7;
  double novel_radius = 2.1, novel_height = 1.45;
};

namespace detail {

template <typename T>
std::string field_to_string(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
inline std::string field_to_string(bool v) { return v ? "true" : "false"; }
inline std::string field_to_string(const GeometryMode& v) { return to_string(v); }
inline std::string field_to_string(const SampleSource& v) { return to_string(v); }

inline void field_from_string(const std::string& s, bool& out) {
  if (s == "true" || s == "1")
    out = true;
  else if (s == "false" || s == "0")
    out = false;
  else
    throw ContractViolation("config: bad boolean '" + s + "'");
}
inline void field_from_string(const std::string& s, int& out) { out = std::stoi(s); }
inline void field_from_string(const std::string& s, std::uint64_t& out) { out = std::stoull(s); }
inline void field_from_string(const std::string& s, double& out) { out = std::stod(s); }
inline void field_from_string(const std::string& s, GeometryMode& out) {
  if (s == "nerf-opacity") out = GeometryMode::kNerfOpacity;
  else if (s == "cost-volume") out = GeometryMode::kCostVolume;
  else if (s == "gt-depth") out = GeometryMode::kGtDepth;
  else if (s == "none") out = GeometryMode::kNone;
  else throw ContractViolation("config: bad geometry_mode '" + s + "'");
}
inline void field_from_string(const std::string& s, SampleSource& out) {
  if (s == "image") out = SampleSource::kImage;
  else if (s == "volume") out = SampleSource::kVolume;
  else throw ContractViolation("config: bad sample_source '" + s + "'");
}

template <typename F>
void for_each_field(TrainConfig& c, F&& f) {
  f("seed", c.seed);
  f("deterministic", c.deterministic);
  f("iterations", c.iterations);
  f("learning_rate", c.learning_rate);
  f("weight_decay", c.weight_decay);
  f("lr_decay_factor", c.lr_decay_factor);
  f("rays_per_iter", c.rays_per_iter);
  f("n_samples", c.n_samples);
  f("near", c.near);
  f("far", c.far);
  f("pe_bands", c.pe_bands);
  f("mlp_width", c.mlp_width);
  f("use_photo_loss", c.use_photo_loss);
  f("use_depth_loss", c.use_depth_loss);
  f("sample_source", c.sample_source);
  f("share_gmlp", c.share_gmlp);
  f("use_var", c.use_var);
  f("use_rgb", c.use_rgb);
  f("detection_branch", c.detection_branch);
  f("geometry_mode", c.geometry_mode);
  f("modulate_full", c.modulate_full);
  f("encoder_channels", c.encoder_channels);
  f("n_classes", c.n_classes);
  f("score_thresh", c.score_thresh);
  f("nms_iou", c.nms_iou);
  f("focal_alpha", c.focal_alpha);
  f("grid_nx", c.grid_nx);
  f("grid_ny", c.grid_ny);
  f("grid_nz", c.grid_nz);
  f("room_x", c.room_x);
  f("room_y", c.room_y);
  f("room_z", c.room_z);
  f("n_train_scenes", c.n_train_scenes);
  f("n_heldout_scenes", c.n_heldout_scenes);
  f("min_objects", c.min_objects);
  f("max_objects", c.max_objects);
  f("shading", c.shading);
  f("image_width", c.image_width);
  f("image_height", c.image_height);
  f("fx", c.fx);
  f("fy", c.fy);
  f("n_input_views", c.n_input_views);
  f("n_novel_views", c.n_novel_views);
  f("input_radius", c.input_radius);
  f("input_height", c.input_height);
  f("novel_radius", c.novel_radius);
  f("novel_height", c.novel_height);
}

}  // namespace detail

inline std::string serialize_config(const TrainConfig& config) {
  std::string out;
  TrainConfig mut = config;
  detail::for_each_field(mut, [&](const char* key, auto& field) {
    out += key;
    out += " = ";
    out += detail::field_to_string(field);
    out += "\n";
  });
  return out;
}

inline void apply_config_line(TrainConfig& config, const std::string& key,
                              const std::string& value) {
  bool found = false;
  detail::for_each_field(config, [&](const char* k, auto& field) {
    if (key == k) {
      detail::field_from_string(value, field);
      found = true;
    }
  });
  if (!found) throw ContractViolation("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      // blank or comment-only line
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      VOXDET_REQUIRE(blank, "config: malformed line " + std::to_string(line_no));
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    apply_config_line(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  VOXDET_REQUIRE(in.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), base);
}

inline void save_config(const std::string& path, const TrainConfig& config) {
  std::ofstream out(path);
  VOXDET_REQUIRE(out.good(), "config: cannot write " + path);
  out << serialize_config(config);
}

inline std::uint64_t config_hash(const TrainConfig& config) {
  return fnv1a64(serialize_config(config));
}

template <typename Scalar = double>
GridSpec<Scalar> grid_from_config(const TrainConfig& c) {
  GridSpec<Scalar> g;
  g.nx = c.grid_nx;
  g.ny = c.grid_ny;
  g.nz = c.grid_nz;
  g.origin = Vec3<Scalar>::Zero();
  g.voxel_size = Vec3<Scalar>(Scalar(c.room_x / c.grid_nx), Scalar(c.room_y / c.grid_ny),
                              Scalar(c.room_z / c.grid_nz));
  return g;
}

}  // namespace voxdet
