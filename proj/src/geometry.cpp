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
#include "plancalib/geometry.hpp"

#include <cmath>

namespace plancalib {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Quaterniond quat_exp(const Eigen::Vector3d& rotvec) {
  const double theta2 = rotvec.squaredNorm();
  const double theta = std::sqrt(theta2);
  double w, scale;
  if (theta < 1e-8) {
    // sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
    w = 1.0 - theta2 / 8.0;
    scale = 0.5 - theta2 / 48.0;
  } else {
    w = std::cos(0.5 * theta);
    scale = std::sin(0.5 * theta) / theta;
  }
  Eigen::Quaterniond q(w, scale * rotvec.x(), scale * rotvec.y(), scale * rotvec.z());
  q.normalize();
  return q;
}

Eigen::Vector3d quat_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;  // angle ~ 0
  const double theta = 2.0 * std::atan2(s, q.w());
  return (theta / s) * v;
}

Eigen::Matrix3d so3_left_jacobian_inverse(const Eigen::Vector3d& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d S = skew(phi);
  double c;
  if (theta < 1e-4) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Eigen::Matrix3d::Identity() - 0.5 * S + c * S * S;
}

double rotation_angle_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  const Eigen::Quaterniond rel = a.normalized().conjugate() * b.normalized();
  const double angle = 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
  return angle * 180.0 / M_PI;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw InvalidIntrinsicsError("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidIntrinsicsError("image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw InvalidIntrinsicsError("principal point must lie inside the image");
  // Largest normalized radius occurs at one of the image corners.
  double r2_max = 0.0;
  for (const double u : {0.0, static_cast<double>(width)}) {
    for (const double v : {0.0, static_cast<double>(height)}) {
      const double x = (u - cx) / fx;
      const double y = (v - cy) / fy;
      r2_max = std::max(r2_max, x * x + y * y);
    }
  }
  constexpr int kSamples = 64;
  for (int i = 0; i <= kSamples; ++i) {
    const double r2 = r2_max * i / kSamples;
    const double factor = 1.0 + k1 * r2 + k2 * r2 * r2;
    if (!(factor > 0.0))
      throw InvalidIntrinsicsError("distortion factor non-positive inside the image domain");
  }
}

Eigen::Matrix<double, 6, 1> CameraIntrinsics::to_vector() const {
  Eigen::Matrix<double, 6, 1> v;
  v << fx, fy, cx, cy, k1, k2;
  return v;
}

CameraIntrinsics CameraIntrinsics::from_vector(const Eigen::Matrix<double, 6, 1>& v, int width,
                                               int height) {
  CameraIntrinsics D;
  D.fx = v[0];
  D.fy = v[1];
  D.cx = v[2];
  D.cy = v[3];
  D.k1 = v[4];
  D.k2 = v[5];
  D.width = width;
  D.height = height;
  return D;
}

std::optional<Eigen::Vector2d> project_checked(const Eigen::Vector3d& p,
                                               const CameraIntrinsics& D,
                                               ProjectionJacobians* jacobians) {
  if (!(p.z() > 0.0)) return std::nullopt;
  const double inv_z = 1.0 / p.z();
  const double x = p.x() * inv_z;
  const double y = p.y() * inv_z;
  const double r2 = x * x + y * y;
  const double factor = 1.0 + r2 * (D.k1 + D.k2 * r2);
  const double xd = x * factor;
  const double yd = y * factor;
  const Eigen::Vector2d pixel(D.fx * xd + D.cx, D.fy * yd + D.cy);

  if (jacobians != nullptr) {
    // d(distorted)/d(normalized)
    const double g = D.k1 + 2.0 * D.k2 * r2;  // d(factor)/d(r2)
    Eigen::Matrix2d J_dist;
    J_dist << factor + 2.0 * x * x * g, 2.0 * x * y * g,  //
        2.0 * x * y * g, factor + 2.0 * y * y * g;
    // d(normalized)/d(point)
    Eigen::Matrix<double, 2, 3> J_norm;
    J_norm << inv_z, 0.0, -x * inv_z,  //
        0.0, inv_z, -y * inv_z;
    Eigen::Matrix2d J_focal;
    J_focal << D.fx, 0.0, 0.0, D.fy;
    jacobians->d_point = J_focal * J_dist * J_norm;

    jacobians->d_intrinsics.setZero();
    jacobians->d_intrinsics(0, 0) = xd;                     // d u / d fx
    jacobians->d_intrinsics(1, 1) = yd;                     // d v / d fy
    jacobians->d_intrinsics(0, 2) = 1.0;                    // d u / d cx
    jacobians->d_intrinsics(1, 3) = 1.0;                    // d v / d cy
    jacobians->d_intrinsics(0, 4) = D.fx * x * r2;          // d u / d k1
    jacobians->d_intrinsics(1, 4) = D.fy * y * r2;          // d v / d k1
    jacobians->d_intrinsics(0, 5) = D.fx * x * r2 * r2;     // d u / d k2
    jacobians->d_intrinsics(1, 5) = D.fy * y * r2 * r2;     // d v / d k2
  }
  return pixel;
}

Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraIntrinsics& D) {
  const auto pixel = project_checked(p, D);
  if (!pixel) throw NonPositiveDepthError("project: point has non-positive depth");
  return *pixel;
}

Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, const CameraIntrinsics& D) {
  const Eigen::Vector2d target((pixel.x() - D.cx) / D.fx, (pixel.y() - D.cy) / D.fy);
  Eigen::Vector2d y = target;  // distorted coordinates as initial guess
  constexpr int kMaxIterations = 50;
  constexpr double kTolerance = 1e-12;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    const double r2 = y.squaredNorm();
    const double factor = 1.0 + r2 * (D.k1 + D.k2 * r2);
    const Eigen::Vector2d residual = y * factor - target;
    if (residual.lpNorm<Eigen::Infinity>() <= kTolerance)
      return Eigen::Vector3d(y.x(), y.y(), 1.0).normalized();

    const double g = 2.0 * D.k1 + 4.0 * D.k2 * r2;
    Eigen::Matrix2d J = factor * Eigen::Matrix2d::Identity() + g * y * y.transpose();
    const double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
    if (!(std::abs(det) > 1e-300))
      throw UndistortDivergenceError("unproject: singular distortion Jacobian", pixel);
    Eigen::Matrix2d J_inv;
    J_inv << J(1, 1), -J(0, 1), -J(1, 0), J(0, 0);
    J_inv /= det;
    const Eigen::Vector2d full_step = -(J_inv * residual);

    // Damped update: halve the step while it does not reduce the residual.
    double t = 1.0;
    const double res_norm = residual.norm();
    Eigen::Vector2d y_next = y + full_step;
    for (int halving = 0; halving < 10; ++halving) {
      const double r2n = y_next.squaredNorm();
      const double fn = 1.0 + r2n * (D.k1 + D.k2 * r2n);
      if ((y_next * fn - target).norm() <= res_norm) break;
      t *= 0.5;
      y_next = y + t * full_step;
    }
    y = y_next;
  }
  throw UndistortDivergenceError("unproject: Newton iteration did not converge", pixel);
}

}  // namespace plancalib
