/******************************************************************************
 * Copyright 2026 The plancalib Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/
#pragma once

#include <optional>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "plancalib/errors.hpp"

namespace plancalib {

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Exponential map so(3) -> unit quaternion. Exact series for small angles.
Eigen::Quaterniond quat_exp(const Eigen::Vector3d& rotvec);

/// Logarithm map, inverse of quat_exp. Returns the rotation vector of the
/// shortest representative (angle in [0, pi]).
Eigen::Vector3d quat_log(const Eigen::Quaterniond& q);

/// Inverse of the SO(3) left Jacobian at the rotation vector phi:
/// d/d_delta log(exp(delta) exp(phi)) at delta = 0.
Eigen::Matrix3d so3_left_jacobian_inverse(const Eigen::Vector3d& phi);

/// Angle between two rotations in degrees, in [0, 180]. Symmetric.
double rotation_angle_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

/// Rigid transform: p -> rotation * p + translation. The quaternion is kept
/// normalized (within 1e-12) by every operation.
struct Se3 {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Se3 identity() { return {}; }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  /// Composition: (a * b)(p) == a(b(p)).
  Se3 operator*(const Se3& b) const {
    Se3 out;
    out.rotation = (rotation * b.rotation).normalized();
    out.translation = rotation * b.translation + translation;
    return out;
  }

  Se3 inverse() const {
    Se3 out;
    out.rotation = rotation.conjugate();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
};

/// Pinhole camera with two radial distortion coefficients.
/// Parameter vector order used throughout: [fx, fy, cx, cy, k1, k2].
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidIntrinsicsError when focal lengths are non-positive, the
  /// principal point lies outside the image, or the distortion factor
  /// 1 + k1 r^2 + k2 r^4 becomes non-positive anywhere on the image domain
  /// (checked on sampled radii up to the image corners).
  void validate() const;

  Eigen::Matrix<double, 6, 1> to_vector() const;
  static CameraIntrinsics from_vector(const Eigen::Matrix<double, 6, 1>& v, int width, int height);
};

struct ProjectionJacobians {
  Eigen::Matrix<double, 2, 3> d_point;        // d(pixel)/d(camera-frame point)
  Eigen::Matrix<double, 2, 6> d_intrinsics;   // d(pixel)/d[fx, fy, cx, cy, k1, k2]
};

/// Projects a camera-frame point to a pixel. Returns nullopt when the point
/// has non-positive depth. The returned pixel may lie outside the image
/// bounds; the caller filters.
std::optional<Eigen::Vector2d> project_checked(const Eigen::Vector3d& p,
                                               const CameraIntrinsics& D,
                                               ProjectionJacobians* jacobians = nullptr);

/// Like project_checked but throws NonPositiveDepthError for p.z <= 0.
Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraIntrinsics& D);

/// Inverts project up to scale: returns the unit bearing f (f.z > 0) with
/// project(s * f, D) == pixel for any s > 0. Undistortion runs a damped
/// Newton iteration on normalized coordinates; throws
/// UndistortDivergenceError after 50 iterations without reaching 1e-12.
Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, const CameraIntrinsics& D);

}  // namespace plancalib
