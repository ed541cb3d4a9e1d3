#pragma once

// Pinhole camera and ray generation.
//
// Conventions: right-handed frames; the camera looks along -z of its own
// frame with +y up and image rows growing downwards. `extrinsics` maps
// canonical (head-centred) coordinates to camera coordinates.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "headfield/tensor.hpp"

namespace headfield {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct Camera {
  Intrinsics intrinsics;
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();
  int width = 1;
  int height = 1;

  Eigen::Matrix3d rotation() const { return extrinsics.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return extrinsics.topRightCorner<3, 1>(); }
  /// Camera centre in canonical coordinates.
  Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

  /// Checks the rigid-transform and intrinsic invariants.
  void validate() const {
    const Eigen::Matrix3d r = rotation();
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-5) || !(r.determinant() > 0)) {
      throw MatrixError("camera extrinsics are not a proper rigid transform (orthonormality error " +
                        std::to_string(ortho) + ")");
    }
    if (std::abs(extrinsics(3, 0)) + std::abs(extrinsics(3, 1)) + std::abs(extrinsics(3, 2)) > 1e-9 ||
        std::abs(extrinsics(3, 3) - 1.0) > 1e-9) {
      throw MatrixError("camera extrinsics bottom row must be [0 0 0 1]");
    }
    if (!(intrinsics.fx > 0) || !(intrinsics.fy > 0)) throw ParameterError("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ParameterError("image size must be positive");
    if (intrinsics.cx < 0 || intrinsics.cx >= width || intrinsics.cy < 0 || intrinsics.cy >= height) {
      throw ParameterError("principal point outside the image");
    }
  }

  /// Flat 16-element row-major extrinsics.
  std::array<double, 16> extrinsics_row_major() const {
    std::array<double, 16> out{};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) out[r * 4 + c] = extrinsics(r, c);
    return out;
  }

  static Eigen::Matrix4d extrinsics_from_row_major(const std::array<double, 16>& m) {
    Eigen::Matrix4d e;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) e(r, c) = m[r * 4 + c];
    return e;
  }
};

/// Camera on an orbit around the canonical origin, looking at it with +y up.
/// yaw rotates about +y (0 looks from +z), pitch raises the camera towards +y.
inline Camera orbit_camera(double yaw, double pitch, double distance, int width, int height, double focal) {
  const Eigen::Vector3d c(distance * std::sin(yaw) * std::cos(pitch), distance * std::sin(pitch),
                          distance * std::cos(yaw) * std::cos(pitch));
  const Eigen::Vector3d back = c.normalized();
  Eigen::Vector3d right = Eigen::Vector3d::UnitY().cross(back);
  if (right.norm() < 1e-12) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d up = back.cross(right);
  Eigen::Matrix3d cam_to_world;
  cam_to_world.col(0) = right;
  cam_to_world.col(1) = up;
  cam_to_world.col(2) = back;
  Camera cam;
  cam.extrinsics.setIdentity();
  cam.extrinsics.topLeftCorner<3, 3>() = cam_to_world.transpose();
  cam.extrinsics.topRightCorner<3, 1>() = -cam_to_world.transpose() * c;
  cam.intrinsics = {focal, focal, width / 2.0, height / 2.0};
  cam.width = width;
  cam.height = height;
  return cam;
}

template <class T>
struct RayBatch {
  Tensor<T> origins;     // [N,3] canonical
  Tensor<T> directions;  // [N,3] unit
  std::vector<T> t_near;
  std::vector<T> t_far;
  std::vector<std::uint8_t> hit_mask;
  int grid_width = 0;
  int grid_height = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(t_near.size()); }
};

template <class T>
struct SamplePoints {
  Tensor<T> positions;  // [N,S,3]
  Tensor<T> deltas;     // [N,S]
  Tensor<T> t_values;   // [N,S] sample depths
};

/// Canonical-space origin and unit direction of the ray through image point
/// (u, v), given in pixels of the camera's full resolution.
inline std::pair<Eigen::Vector3d, Eigen::Vector3d> pixel_ray(const Camera& camera, double u, double v) {
  const auto& k = camera.intrinsics;
  const Eigen::Vector3d d_cam((u - k.cx) / k.fx, -(v - k.cy) / k.fy, -1.0);
  const Eigen::Matrix3d rt = camera.rotation().transpose();
  return {camera.center(), (rt * d_cam).normalized()};
}

/// One ray per grid-pixel centre, clipped against the bounding sphere of radius
/// `sphere_radius` about the origin. Rays are ordered row-major (y, then x).
template <class T>
RayBatch<T> generate_rays(const Camera& camera, int grid_width, int grid_height, double sphere_radius = 1.0) {
  if (grid_width <= 0 || grid_height <= 0 || camera.width % grid_width != 0 || camera.height % grid_height != 0) {
    throw ParameterError("ray grid " + std::to_string(grid_width) + "x" + std::to_string(grid_height) +
                         " must divide the image size " + std::to_string(camera.width) + "x" +
                         std::to_string(camera.height));
  }
  camera.validate();
  const Eigen::Matrix4d inverse = camera.extrinsics.inverse();
  if (!inverse.allFinite()) throw MatrixError("camera extrinsics are not invertible");

  const double sx = static_cast<double>(grid_width) / camera.width;
  const double sy = static_cast<double>(grid_height) / camera.height;
  const double fx = camera.intrinsics.fx * sx, fy = camera.intrinsics.fy * sy;
  const double cx = camera.intrinsics.cx * sx, cy = camera.intrinsics.cy * sy;
  const Eigen::Matrix3d rt = inverse.topLeftCorner<3, 3>();
  const Eigen::Vector3d origin = inverse.topRightCorner<3, 1>();

  const auto n = static_cast<std::size_t>(grid_width) * grid_height;
  std::vector<T> o(3 * n), d(3 * n);
  RayBatch<T> batch;
  batch.t_near.resize(n);
  batch.t_far.resize(n);
  batch.hit_mask.resize(n);
  batch.grid_width = grid_width;
  batch.grid_height = grid_height;
  const double r2 = sphere_radius * sphere_radius;
  for (int y = 0; y < grid_height; ++y)
    for (int x = 0; x < grid_width; ++x) {
      const auto i = static_cast<std::size_t>(y) * grid_width + x;
      const Eigen::Vector3d dir = (rt * Eigen::Vector3d((x + 0.5 - cx) / fx, -(y + 0.5 - cy) / fy, -1.0)).normalized();
      for (int c = 0; c < 3; ++c) {
        o[3 * i + c] = static_cast<T>(origin[c]);
        d[3 * i + c] = static_cast<T>(dir[c]);
      }
      // |o + t d|^2 = r^2 with |d| = 1
      const double b = origin.dot(dir);
      const double cterm = origin.squaredNorm() - r2;
      const double disc = b * b - cterm;
      if (disc > 0) {
        const double s = std::sqrt(disc);
        const double t0 = std::max(0.0, -b - s), t1 = -b + s;
        if (t1 > t0) {
          batch.t_near[i] = static_cast<T>(t0);
          batch.t_far[i] = static_cast<T>(t1);
          batch.hit_mask[i] = 1;
          continue;
        }
      }
      batch.t_near[i] = T(0);
      batch.t_far[i] = T(0);
      batch.hit_mask[i] = 0;
    }
  batch.origins = Tensor<T>::from(Shape{static_cast<std::int64_t>(n), 3}, std::move(o));
  batch.directions = Tensor<T>::from(Shape{static_cast<std::int64_t>(n), 3}, std::move(d));
  return batch;
}

enum class SamplingMode { uniform, stratified };

/// S samples per ray over [t_near, t_far]. Every sample owns one segment of
/// length (t_far - t_near) / S: at its midpoint (uniform) or at one uniform
/// draw inside it (stratified). Missed rays get zero-length segments.
template <class T>
SamplePoints<T> sample_along_rays(const RayBatch<T>& rays, int samples, SamplingMode mode, std::uint64_t seed = 0) {
  if (samples < 2) throw ParameterError("samples per ray must be >= 2, got " + std::to_string(samples));
  const auto n = static_cast<std::size_t>(rays.size());
  const auto s = static_cast<std::size_t>(samples);
  std::vector<T> pos(n * s * 3), deltas(n * s), ts(n * s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& ov = rays.origins.values();
  const auto& dv = rays.directions.values();
  for (std::size_t r = 0; r < n; ++r) {
    const double t0 = rays.t_near[r], t1 = rays.t_far[r];
    const double seg = rays.hit_mask[r] ? (t1 - t0) / samples : 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double jitter = mode == SamplingMode::stratified ? unit(rng) : 0.5;
      const double t = t0 + (static_cast<double>(i) + jitter) * seg;
      ts[r * s + i] = static_cast<T>(t);
      deltas[r * s + i] = static_cast<T>(seg);
      for (int c = 0; c < 3; ++c)
        pos[(r * s + i) * 3 + c] = static_cast<T>(ov[3 * r + c] + t * static_cast<double>(dv[3 * r + c]));
    }
  }
  const auto ni = static_cast<std::int64_t>(n), si = static_cast<std::int64_t>(s);
  return {Tensor<T>::from(Shape{ni, si, 3}, std::move(pos)), Tensor<T>::from(Shape{ni, si}, std::move(deltas)),
          Tensor<T>::from(Shape{ni, si}, std::move(ts))};
}

}  // namespace headfield
