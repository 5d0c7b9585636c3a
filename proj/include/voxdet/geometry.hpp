#pragma once

#include <cmath>

#include "voxdet/core.hpp"

namespace voxdet {

// Pinhole camera and voxel-grid math. Conventions, fixed across the project:
//  * extrinsics are world->camera: p_cam = R * p_world + t
//  * pixel coordinates use a pixel-center origin: pixel (u, v) covers the
//    unit square centered at (u, v); the principal point (cx, cy) is in the
//    same coordinates
//  * images are H x W x 3, stored row-major as a (H*W) x 3 matrix with
//    row index v * W + u
//  * scaling intrinsics by a downsample factor s maps (u, v) to (u/s, v/s)

template <typename Scalar>
struct CameraIntrinsics {
  Scalar fx = 0, fy = 0;
  Scalar cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    VOXDET_REQUIRE(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    VOXDET_REQUIRE(width >= 1 && height >= 1, "intrinsics: image size must be >= 1");
  }
};

template <typename Scalar>
struct CameraPose {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();  // world -> camera
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  Vec3<Scalar> to_camera(const Vec3<Scalar>& p_world) const {
    return rotation * p_world + translation;
  }
  Vec3<Scalar> to_world(const Vec3<Scalar>& p_cam) const {
    return rotation.transpose() * (p_cam - translation);
  }
  Vec3<Scalar> center() const { return -(rotation.transpose() * translation); }
  // camera +z axis expressed in world coordinates
  Vec3<Scalar> forward() const { return rotation.row(2).transpose(); }

  void validate(Scalar tol = Scalar(1e-6)) const {
    Mat3<Scalar> rtr = rotation.transpose() * rotation;
    VOXDET_REQUIRE((rtr - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol,
                   "pose: rotation is not orthonormal");
    VOXDET_REQUIRE(std::abs(rotation.determinant() - Scalar(1)) <= tol,
                   "pose: rotation must have determinant +1");
  }
};

template <typename Scalar>
struct CameraView {
  CameraIntrinsics<Scalar> intrinsics;
  CameraPose<Scalar> pose;
  MatX<Scalar> image;  // (H*W) x 3, values in [0, 1]

  void validate() const {
    intrinsics.validate();
    pose.validate();
    VOXDET_REQUIRE(image.rows() == static_cast<Eigen::Index>(intrinsics.width) * intrinsics.height &&
                       image.cols() == 3,
                   "view: image dimensions do not match intrinsics");
  }
};

template <typename Scalar>
struct GridSpec {
  int nx = 1, ny = 1, nz = 1;
  Vec3<Scalar> origin = Vec3<Scalar>::Zero();      // minimum corner, meters
  Vec3<Scalar> voxel_size = Vec3<Scalar>::Ones();  // meters per voxel

  void validate() const {
    VOXDET_REQUIRE(nx >= 1 && ny >= 1 && nz >= 1, "grid: voxel counts must be >= 1");
    VOXDET_REQUIRE(voxel_size.minCoeff() > 0, "grid: voxel size must be positive");
  }

  int num_voxels() const { return nx * ny * nz; }
  // flat index with x fastest, then y, then z
  int index(int i, int j, int k) const { return i + nx * (j + ny * k); }

  Vec3<Scalar> center(int i, int j, int k) const {
    return origin + Vec3<Scalar>(Scalar(i) + Scalar(0.5), Scalar(j) + Scalar(0.5),
                                 Scalar(k) + Scalar(0.5))
                        .cwiseProduct(voxel_size);
  }

  Vec3<Scalar> extent() const {
    return Vec3<Scalar>(Scalar(nx), Scalar(ny), Scalar(nz)).cwiseProduct(voxel_size);
  }

  // map a world point to [-1, 1]^3 over the grid extent
  Vec3<Scalar> normalize_point(const Vec3<Scalar>& p) const {
    Vec3<Scalar> rel = (p - origin).cwiseQuotient(extent());
    return Scalar(2) * rel - Vec3<Scalar>::Ones();
  }
};

template <typename Scalar>
struct Ray {
  Vec3<Scalar> origin = Vec3<Scalar>::Zero();
  Vec3<Scalar> direction = Vec3<Scalar>::UnitZ();  // unit norm

  Vec3<Scalar> at(Scalar t) const { return origin + t * direction; }
};

template <typename Scalar>
struct ProjectedPoint {
  Scalar u = 0, v = 0;  // in feature-map pixels (full-res pixels / downsample)
  Scalar d = 0;         // camera-frame depth (z), meters
  bool valid = false;
};

// nearest-neighbor pixel index, rounding half up
inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Project a world point into a view whose feature map lives at 1/downsample
// resolution. The projection is invalid when the depth is non-positive or the
// nearest feature-map pixel falls outside the map; invalid projections
// contribute zero features downstream.
template <typename Scalar>
ProjectedPoint<Scalar> project_point(const Vec3<Scalar>& p, const CameraView<Scalar>& view,
                                     int downsample = 1) {
  VOXDET_REQUIRE(downsample >= 1, "project_point: downsample must be positive");
  VOXDET_REQUIRE(view.intrinsics.width % downsample == 0 &&
                     view.intrinsics.height % downsample == 0,
                 "project_point: downsample must divide the image size");
  const Scalar s = Scalar(downsample);
  const Vec3<Scalar> pc = view.pose.to_camera(p);
  ProjectedPoint<Scalar> out;
  out.d = pc.z();
  if (!(pc.z() > Scalar(0))) return out;  // behind or on the image plane
  out.u = (view.intrinsics.fx * pc.x() / pc.z() + view.intrinsics.cx) / s;
  out.v = (view.intrinsics.fy * pc.y() / pc.z() + view.intrinsics.cy) / s;
  const int wf = view.intrinsics.width / downsample;
  const int hf = view.intrinsics.height / downsample;
  const int pu = round_half_up(static_cast<double>(out.u));
  const int pv = round_half_up(static_cast<double>(out.v));
  out.valid = pu >= 0 && pu < wf && pv >= 0 && pv < hf;
  return out;
}

// Ray through full-resolution pixel (u, v), origin at the camera center.
template <typename Scalar>
Ray<Scalar> pixel_to_ray(Scalar u, Scalar v, const CameraView<Scalar>& view) {
  VOXDET_REQUIRE(u >= Scalar(0) && u < Scalar(view.intrinsics.width) && v >= Scalar(0) &&
                     v < Scalar(view.intrinsics.height),
                 "pixel_to_ray: pixel out of bounds");
  Vec3<Scalar> dir_cam((u - view.intrinsics.cx) / view.intrinsics.fx,
                       (v - view.intrinsics.cy) / view.intrinsics.fy, Scalar(1));
  Ray<Scalar> ray;
  ray.origin = view.pose.center();
  ray.direction = (view.pose.rotation.transpose() * dir_cam).normalized();
  return ray;
}

// All voxel centers as a (num_voxels x 3) matrix, x fastest, then y, then z.
template <typename Scalar>
MatX<Scalar> voxel_centers(const GridSpec<Scalar>& grid) {
  grid.validate();
  MatX<Scalar> centers(grid.num_voxels(), 3);
  int r = 0;
  for (int k = 0; k < grid.nz; ++k)
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) centers.row(r++) = grid.center(i, j, k).transpose();
  return centers;
}

using CameraIntrinsicsd = CameraIntrinsics<double>;
using CameraPosed = CameraPose<double>;
using CameraViewd = CameraView<double>;
using GridSpecd = GridSpec<double>;
using Rayd = Ray<double>;

}  // namespace voxdet
