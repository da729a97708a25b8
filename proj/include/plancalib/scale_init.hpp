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

#include <vector>

#include "plancalib/cloud.hpp"
#include "plancalib/geometry.hpp"
#include "plancalib/solver.hpp"
#include "plancalib/visual_ba.hpp"

namespace plancalib {

struct ScaleRecovery {
  double scale = 1.0;
  double residual_rms = 0.0;  // RMS of the stacked linear-system rows, m
};

/// Coarse monocular scale from paired camera/LiDAR motions and the initial
/// extrinsics: least-squares scalar over the stacked rows
/// s * R_init * t_cam_i = t_lidar_i - (I - R_lidar_i) * t_init, i = 2..n.
/// Poses map the respective world frame into frame i. Throws
/// DegenerateMotionError when every camera translation is near zero.
ScaleRecovery recover_scale(const std::vector<Se3>& camera_poses,
                            const std::vector<Se3>& lidar_poses, const Se3& initial_extrinsics);

/// Residual of the scale-and-extrinsics refinement:
/// r = n^T (R_l (R_e exp(sigma) p + t_e) + t_l - centroid), with the LiDAR
/// pose (R_l, t_l) fixed. Blocks: [log-scale (1), extrinsic rotation
/// (quaternion), extrinsic translation].
class ScalePlaneResidual : public ResidualFunction {
 public:
  ScalePlaneResidual(const Eigen::Vector3d& point, const Se3& lidar_pose,
                     const Eigen::Vector3d& normal, const Eigen::Vector3d& centroid)
      : point_(point),
        R_lidar_(lidar_pose.rotation_matrix()),
        t_lidar_(lidar_pose.translation),
        normal_(normal),
        centroid_(centroid) {}
  int dimension() const override { return 1; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector3d point_;
  Eigen::Matrix3d R_lidar_;
  Eigen::Vector3d t_lidar_;
  Eigen::Vector3d normal_;
  Eigen::Vector3d centroid_;
};

/// r = (sigma - anchor) / prior_sigma on the log-scale block.
class LogScalePrior : public ResidualFunction {
 public:
  LogScalePrior(double anchor, double prior_sigma)
      : anchor_(anchor), inv_sigma_(1.0 / prior_sigma) {}
  int dimension() const override { return 1; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  double anchor_;
  double inv_sigma_;
};

/// r = log(q * anchor^-1) / sigma on a quaternion block.
class RotationDeviationPrior : public ResidualFunction {
 public:
  RotationDeviationPrior(const Eigen::Quaterniond& anchor, double sigma)
      : anchor_inverse_(anchor.conjugate()), inv_sigma_(1.0 / sigma) {}
  int dimension() const override { return 3; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Quaterniond anchor_inverse_;
  double inv_sigma_;
};

/// r = (v - anchor) / sigma on a 3-vector block.
class VectorDeviationPrior : public ResidualFunction {
 public:
  VectorDeviationPrior(const Eigen::Vector3d& anchor, double sigma)
      : anchor_(anchor), inv_sigma_(1.0 / sigma) {}
  int dimension() const override { return 3; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector3d anchor_;
  double inv_sigma_;
};

struct InitIteration {
  double scale = 0.0;
  Se3 extrinsics;
  double cost = 0.0;
  int valid_pairs = 0;
};

struct ScaledInit {
  double scale = 1.0;
  Se3 extrinsics;  // camera frame -> LiDAR frame
  std::vector<InitIteration> log;
  bool converged = false;
};

struct InitConfig {
  int max_outer = 5;             // kappa_max
  double parameter_tolerance = 1e-6;
  double huber_delta = 0.05;     // m, final value
  /// Coarse-to-fine robust loss: the first outer iteration runs at
  /// huber_delta_initial, halving per iteration down to huber_delta. Early
  /// iterations see mostly large residuals with a share of wrong
  /// associations; a hard L1 regime from the start can freeze into a wrong
  /// associate/optimize fixed point.
  double huber_delta_initial = 0.4;  // m
  int neighbors = 20;
  double lambda_ratio = 10.0;
  double search_radius = 2.5;    // m; generous, initial displacements are large
  int threads = 1;
  /// Per-iteration trust region on log-scale, anchored at each outer
  /// iteration's starting value. Large initial displacements put every pair
  /// in Huber's linear regime, where the trivial scale -> 0 collapse is a
  /// competing minimum of the point-to-plane cost; the trust region keeps a
  /// single inner solve from running there, and contributes nothing once the
  /// iterate stops moving. Non-positive disables.
  double scale_prior_sigma = 0.15;  // in log-scale units, ~15% of scale
  /// Soft priors holding the extrinsics near the (hand-eye quality) seed.
  /// A scene of few planes has wrong registration basins far from the seed
  /// (e.g. a ~90 degree yaw swaps the wall assignments); the priors price
  /// those out without biasing the endgame, where the data term is orders of
  /// magnitude stiffer. Non-positive disables.
  double extrinsic_rotation_prior_rad = 0.10;
  double extrinsic_translation_prior_m = 0.40;
  /// Inner minimization per outer iteration. Accepted steps are capped so the
  /// pair set is re-associated before the optimizer can walk far on stale
  /// correspondences (an unbounded inner solve can reach the trivial
  /// scale -> 0 collapse when every initial residual is in Huber's linear
  /// regime).
  SolverConfig solver = [] {
    SolverConfig s;
    s.max_accepted_steps = 6;
    return s;
  }();
};

struct InitResult {
  ScaledInit init;
  /// Metric copies: positions and translations scaled by the final s*,
  /// covariances by s*^2.
  std::vector<VisualPoint> points;
  std::vector<Se3> camera_poses;
};

/// Iterative refinement of the visual scale and the extrinsics by
/// point-to-plane registration: per outer iteration the SfM points are scaled
/// by the current estimate, transformed into every LiDAR frame, paired with
/// locally fitted planes passing the eigenvalue test, and the Huber
/// point-to-plane cost is minimized over (scale, extrinsics) with the pair
/// set frozen. Scale is optimized in log-space. After the last iteration the
/// camera poses, points, and covariances are rescaled by the final scale.
/// Throws NoValidPairsError when no point pairs with any plane.
InitResult refine_scale_extrinsics(const std::vector<VisualPoint>& points,
                                   const std::vector<Se3>& camera_poses,
                                   const std::vector<PointCloud>& clouds,
                                   const std::vector<const KdTree*>& indices,
                                   const std::vector<Se3>& lidar_poses, const ScaledInit& seed,
                                   const InitConfig& cfg = {});

}  // namespace plancalib
