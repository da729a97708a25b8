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

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plancalib/geometry.hpp"
#include "plancalib/solver.hpp"

namespace plancalib {

/// One observation of a tracked point: pixel in the given frame plus its
/// measurement covariance (defaults to 1 px^2 isotropic).
struct TrackObservation {
  int frame = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Matrix2d pixel_cov = Eigen::Matrix2d::Identity();
};

struct FeatureTrack {
  int point_id = 0;
  std::vector<TrackObservation> observations;  // >= 2, distinct frames
};

/// Triangulated point in the first-camera frame with its covariance
/// (inverse of the point's 3x3 Gauss-Newton Hessian block, poses and
/// intrinsics held fixed; the full-marginal alternative is not computed).
struct VisualPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
  FeatureTrack track;
};

/// Packs camera intrinsics into an optimization block: [fx, fy, cx, cy, k1, k2],
/// or [f, cx, cy, k1, k2] when the focal lengths are tied.
struct IntrinsicsBlock {
  bool tied = false;
  int width = 0;
  int height = 0;

  int size() const { return tied ? 5 : 6; }
  Eigen::VectorXd pack(const CameraIntrinsics& D) const;
  CameraIntrinsics unpack(const Eigen::VectorXd& v) const;
  /// Folds a d(pixel)/d[fx,fy,cx,cy,k1,k2] Jacobian onto the block layout.
  Eigen::MatrixXd fold(const Eigen::Matrix<double, 2, 6>& J) const;
};

/// Whitened reprojection residual sqrt_info * (observed - project(R p + t, D)).
/// Blocks: [pose rotation (quaternion), pose translation, point, intrinsics].
/// Not evaluable when the point depth is non-positive.
class ReprojectionResidual : public ResidualFunction {
 public:
  ReprojectionResidual(const Eigen::Vector2d& observed, const Eigen::Matrix2d& pixel_cov,
                       IntrinsicsBlock layout);
  int dimension() const override { return 2; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector2d observed_;
  Eigen::Matrix2d sqrt_info_;
  IntrinsicsBlock layout_;
};

/// Soft gauge fix for the free monocular scale: (|t| - target) / sigma on one
/// camera translation block.
class ScaleAnchorResidual : public ResidualFunction {
 public:
  ScaleAnchorResidual(double target_norm, double sigma)
      : target_(target_norm), inv_sigma_(1.0 / sigma) {}
  int dimension() const override { return 1; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  double target_;
  double inv_sigma_;
};

/// Linear (DLT) triangulation of a track. Poses map the first-camera frame
/// into each observing camera. Throws InsufficientParallaxError when all ray
/// pairs subtend less than min_parallax_deg, NegativeDepthError when the
/// solution lies behind an observing camera.
Eigen::Vector3d triangulate(const FeatureTrack& track, const std::vector<Se3>& poses,
                            const CameraIntrinsics& D, double min_parallax_deg = 0.5);

struct VisualBaConfig {
  bool optimize_intrinsics = true;
  bool tie_focal = false;
  /// Adds the scale-anchor residual on the largest initial camera translation
  /// (monocular reprojection alone leaves the global scale free).
  bool anchor_scale_gauge = true;
  double scale_anchor_sigma = 1e-6;
  double min_parallax_deg = 0.5;
  /// Points whose Hessian eigenvalue ratio falls below this are dropped.
  double covariance_rank_ratio = 1e-12;
  SolverConfig solver;
};

struct DroppedTrack {
  int point_id = 0;
  std::string reason;
};

struct VisualBaResult {
  std::vector<Se3> poses;
  CameraIntrinsics intrinsics;
  std::vector<VisualPoint> points;
  SolverReport report;
  std::vector<DroppedTrack> dropped_tracks;
  int dropped_observations = 0;
  double rms_px = 0.0;  // per-axis RMS of raw reprojection residuals
};

/// Reprojection-only bundle adjustment: optimizes camera poses (first fixed),
/// points, and optionally intrinsics by minimizing the Mahalanobis
/// reprojection cost; then computes per-point covariances. Tracks that fail
/// triangulation or lose all observations are dropped and reported.
VisualBaResult bundle_adjust_visual(const std::vector<FeatureTrack>& tracks,
                                    std::vector<Se3> poses, const CameraIntrinsics& D,
                                    const VisualBaConfig& cfg = {});

}  // namespace plancalib
