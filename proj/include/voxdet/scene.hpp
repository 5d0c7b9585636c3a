#pragma once

#include <array>
#include <optional>
#include <vector>

#include "voxdet/core.hpp"
#include "voxdet/detection.hpp"
#include "voxdet/geometry.hpp"

namespace voxdet {

// Procedural synthetic scenes with analytic ground truth: an axis-aligned
// room containing 1-4 flat-albedo boxes, cameras on a circle looking at the
// room center, and a slab-method ray caster producing exact color and depth.
// Flat albedo keeps multi-view variance at surfaces exactly zero, which the
// feature-variance prior relies on. Depth maps store distance along the ray.

struct SceneObject {
  Box3Dd box;     // box.label is the class id
  Vec3d albedo = Vec3d::Constant(0.5);
};

// wall order: -x, +x, -y, +y, floor (-z), ceiling (+z)
struct SceneSpec {
  Vec3d room = Vec3d(6.4, 6.4, 3.2);  // room spans [0, room]
  std::vector<SceneObject> objects;
  std::array<Vec3d, 6> wall_albedos;
  std::uint64_t seed = 0;
};

struct SceneGenConfig {
  Vec3d room = Vec3d(6.4, 6.4, 3.2);
  int min_objects = 1, max_objects = 4;
  int n_classes = 3;
  double max_pairwise_iou = 0.05;
  double placement_half_xy = 1.0;   // object centers stay this close to room center
  double albedo_jitter = 0.05;
  int max_attempts = 200;
};

// per-class base albedo and size ranges; classes beyond the palette wrap
inline Vec3d class_base_albedo(int cls) {
  static const Vec3d palette[4] = {Vec3d(0.80, 0.20, 0.20), Vec3d(0.20, 0.75, 0.25),
                                   Vec3d(0.20, 0.30, 0.80), Vec3d(0.85, 0.80, 0.20)};
  return palette[cls % 4];
}
inline void class_size_range(int cls, Vec3d& lo, Vec3d& hi) {
  switch (cls % 3) {
    case 0: lo = Vec3d(0.30, 0.30, 0.30); hi = Vec3d(0.50, 0.50, 0.50); break;
    case 1: lo = Vec3d(0.55, 0.55, 0.45); hi = Vec3d(0.85, 0.85, 0.70); break;
    default: lo = Vec3d(0.35, 0.35, 0.90); hi = Vec3d(0.55, 0.55, 1.30); break;
  }
}

inline SceneSpec generate_scene(std::uint64_t seed, const SceneGenConfig& config = {}) {
  VOXDET_REQUIRE(config.min_objects >= 1 && config.max_objects >= config.min_objects,
                 "generate_scene: bad object count range");
  Rng rng(seed, "scene-gen");
  SceneSpec spec;
  spec.room = config.room;
  spec.seed = seed;

  const Vec3d center(config.room.x() / 2, config.room.y() / 2, config.room.z() / 2);
  // distinct tints per surface: free-space voxels then see clearly different
  // colors from different directions, which the variance prior relies on
  static const Vec3d wall_bases[6] = {Vec3d(0.70, 0.45, 0.33), Vec3d(0.38, 0.55, 0.72),
                                      Vec3d(0.62, 0.62, 0.33), Vec3d(0.58, 0.42, 0.62),
                                      Vec3d(0.33, 0.30, 0.28), Vec3d(0.88, 0.87, 0.84)};
  for (int f = 0; f < 6; ++f)
    for (int c = 0; c < 3; ++c)
      spec.wall_albedos[f](c) = std::clamp(
          wall_bases[f](c) + rng.uniform(-config.albedo_jitter, config.albedo_jitter), 0.05, 0.95);

  const int n_objects =
      config.min_objects + static_cast<int>(rng.index(config.max_objects - config.min_objects + 1));
  for (int o = 0; o < n_objects; ++o) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const int cls = static_cast<int>(rng.index(config.n_classes));
      Vec3d lo, hi;
      class_size_range(cls, lo, hi);
      Box3Dd box;
      box.label = cls;
      for (int a = 0; a < 3; ++a) box.size(a) = rng.uniform(lo(a), hi(a));
      for (int a = 0; a < 2; ++a) {
        const double half = config.placement_half_xy - box.size(a) / 2;
        VOXDET_REQUIRE(half > 0, "generate_scene: placement region smaller than object");
        box.center(a) = center(a) + rng.uniform(-half, half);
      }
      const double z_lo = 0.25 + box.size.z() / 2;
      const double z_hi = config.room.z() - 0.25 - box.size.z() / 2;
      box.center.z() = rng.uniform(z_lo, z_hi);
      bool ok = true;
      for (const auto& other : spec.objects)
        if (iou3d(box, other.box) > config.max_pairwise_iou) {
          ok = false;
          break;
        }
      if (!ok) continue;
      SceneObject obj;
      obj.box = box;
      for (int c = 0; c < 3; ++c)
        obj.albedo(c) = std::clamp(
            class_base_albedo(cls)(c) + rng.uniform(-config.albedo_jitter, config.albedo_jitter),
            0.05, 0.95);
      spec.objects.push_back(obj);
      placed = true;
    }
    VOXDET_REQUIRE(placed, "generate_scene: placement failed, try smaller or fewer objects");
  }
  return spec;
}

// Poses on a circle of the given radius/height around the room center, all
// looking at the center. Camera convention: +z forward, +y down in image.
inline std::vector<CameraPosed> camera_trajectory(const SceneSpec& spec, int n_views, double radius,
                                                  double height, double phase = 0.0) {
  VOXDET_REQUIRE(n_views >= 2, "camera_trajectory: need at least two views");
  const Vec3d target(spec.room.x() / 2, spec.room.y() / 2, spec.room.z() / 2);
  std::vector<CameraPosed> poses;
  for (int i = 0; i < n_views; ++i) {
    const double angle = phase + 2.0 * kPi * i / n_views;
    const Vec3d pos = target + Vec3d(radius * std::cos(angle), radius * std::sin(angle),
                                     height - target.z());
    const Vec3d forward = (target - pos).normalized();
    Vec3d right = forward.cross(Vec3d::UnitZ());
    VOXDET_REQUIRE(right.norm() > 1e-9, "camera_trajectory: degenerate vertical view");
    right.normalize();
    const Vec3d down = forward.cross(right).normalized() * -1.0;  // +y down in camera
    CameraPosed pose;
    pose.rotation.row(0) = right.transpose();
    pose.rotation.row(1) = (-down).transpose();
    pose.rotation.row(2) = forward.transpose();
    pose.translation = -(pose.rotation * pos);
    poses.push_back(pose);
  }
  return poses;
}

// Slab intersection with a box from outside: returns (t_enter, t_exit) with
// t_exit > t_enter, or nothing if the ray misses.
inline std::optional<std::pair<double, double>> ray_box_intersection(const Rayd& ray,
                                                                     const Box3Dd& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.direction(a);  // IEEE inf handles axis-parallel rays
    double ta = (box.min()(a) - ray.origin(a)) * inv;
    double tb = (box.max()(a) - ray.origin(a)) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

struct RayHit {
  double t = 0;
  Vec3d albedo = Vec3d::Zero();
  int face_axis = -1;  // surface normal axis, for optional shading
};

// Nearest surface along a ray starting inside the room: either an object box
// entry or the room wall where the ray exits.
inline RayHit trace_scene_ray(const SceneSpec& spec, const Rayd& ray) {
  RayHit hit;
  hit.t = std::numeric_limits<double>::infinity();
  for (const auto& obj : spec.objects) {
    const auto seg = ray_box_intersection(ray, obj.box);
    if (!seg || seg->first <= 1e-9) continue;
    if (seg->first < hit.t) {
      hit.t = seg->first;
      hit.albedo = obj.albedo;
      // entry face: axis whose slab produced t_enter
      double best = -1;
      for (int a = 0; a < 3; ++a) {
        const double inv = 1.0 / ray.direction(a);
        double ta = (obj.box.min()(a) - ray.origin(a)) * inv;
        double tb = (obj.box.max()(a) - ray.origin(a)) * inv;
        if (ta > tb) std::swap(ta, tb);
        if (ta > best) {
          best = ta;
          hit.face_axis = a;
        }
      }
    }
  }
  // room exit
  Box3Dd room;
  room.center = spec.room / 2;
  room.size = spec.room;
  double t_exit = std::numeric_limits<double>::infinity();
  int exit_face = -1;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.direction(a);
    const double ta = (0.0 - ray.origin(a)) * inv;
    const double tb = (spec.room(a) - ray.origin(a)) * inv;
    const double tmax = std::max(ta, tb);
    if (tmax < t_exit) {
      t_exit = tmax;
      exit_face = 2 * a + (ray.direction(a) > 0 ? 1 : 0);
    }
  }
  if (t_exit < hit.t) {
    hit.t = t_exit;
    hit.albedo = spec.wall_albedos[exit_face];
    hit.face_axis = exit_face / 2;
  }
  return hit;
}

struct RenderedReference {
  MatXd image;  // (H*W) x 3
  VecXd depth;  // H*W, distance along the ray
};

// Analytic Lambertian reference: flat albedo of the nearest hit, optional
// mild diffuse shading by surface orientation.
inline RenderedReference render_reference(const SceneSpec& spec, const CameraViewd& view,
                                          bool shading = false) {
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  RenderedReference out;
  out.image.resize(w * h, 3);
  out.depth.resize(w * h);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const Rayd ray = pixel_to_ray<double>(u, v, view);
      const RayHit hit = trace_scene_ray(spec, ray);
      Vec3d color = hit.albedo;
      if (shading && hit.face_axis >= 0) {
        const double lambert = std::abs(ray.direction(hit.face_axis));
        color *= 0.65 + 0.35 * lambert;
      }
      out.image.row(v * w + u) = color.transpose();
      out.depth(v * w + u) = hit.t;
    }
  return out;
}

// 1 where the voxel center lies inside any object box.
inline VecXi occupancy_grid(const SceneSpec& spec, const GridSpecd& grid) {
  const MatXd centers = voxel_centers(grid);
  VecXi occ = VecXi::Zero(centers.rows());
  for (Eigen::Index r = 0; r < centers.rows(); ++r) {
    const Vec3d p = centers.row(r).transpose();
    for (const auto& obj : spec.objects)
      if (obj.box.contains(p)) {
        occ(r) = 1;
        break;
      }
  }
  return occ;
}

// Complete per-scene ground truth. The first n_input_views entries of
// `views` feed the detection branch; the remainder are held-out novel views
// used only for ray supervision and view-synthesis evaluation.
struct SceneBundle {
  SceneSpec spec;
  std::vector<CameraViewd> views;
  std::vector<VecXd> depth_maps;
  int n_input_views = 0;
  VecXi occupancy;
  std::vector<Box3Dd> boxes;
};

struct CameraRigConfig {
  int width = 64, height = 48;
  double fx = 40, fy = 40;
  int n_input_views = 12;
  int n_novel_views = 10;
  double input_radius = 2.4, input_height = 1.7;
  double novel_radius = 2.1, novel_height = 1.45;
  bool shading = false;
};

inline SceneBundle make_scene_bundle(const SceneSpec& spec, const GridSpecd& grid,
                                     const CameraRigConfig& rig) {
  SceneBundle bundle;
  bundle.spec = spec;
  bundle.n_input_views = rig.n_input_views;
  CameraIntrinsicsd intr;
  intr.fx = rig.fx;
  intr.fy = rig.fy;
  intr.cx = (rig.width - 1) / 2.0;
  intr.cy = (rig.height - 1) / 2.0;
  intr.width = rig.width;
  intr.height = rig.height;

  auto add_views = [&](const std::vector<CameraPosed>& poses) {
    for (const auto& pose : poses) {
      CameraViewd view;
      view.intrinsics = intr;
      view.pose = pose;
      RenderedReference ref = render_reference(spec, view, rig.shading);
      view.image = std::move(ref.image);
      bundle.views.push_back(std::move(view));
      bundle.depth_maps.push_back(std::move(ref.depth));
    }
  };
  add_views(camera_trajectory(spec, rig.n_input_views, rig.input_radius, rig.input_height, 0.0));
  add_views(camera_trajectory(spec, rig.n_novel_views, rig.novel_radius, rig.novel_height,
                              kPi / std::max(rig.n_novel_views, 1)));

  bundle.occupancy = occupancy_grid(spec, grid);
  for (const auto& obj : spec.objects) bundle.boxes.push_back(obj.box);
  return bundle;
}

}  // namespace voxdet
