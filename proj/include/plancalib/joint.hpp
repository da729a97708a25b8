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

#include <utility>
#include <vector>

#include "plancalib/cloud.hpp"
#include "plancalib/geometry.hpp"
#include "plancalib/solver.hpp"
#include "plancalib/visual_ba.hpp"

namespace plancalib {

/// Full state of the joint calibration: intrinsics, extrinsics, camera poses
/// (pose 0 fixed to identity), LiDAR poses (held fixed), retained points, and
/// the point-to-plane weight alpha.
struct CalibrationProblem {
  CameraIntrinsics intrinsics;
  Se3 extrinsics;                 // camera frame -> LiDAR frame
  std::vector<Se3> camera_poses;  // camera world -> camera i
  std::vector<Se3> lidar_poses;   // LiDAR world -> LiDAR i
  std::vector<VisualPoint> points;
  double alpha = 1.0;
};

/// A validated point-to-plane correspondence: patch in LiDAR-frame
/// coordinates plus the noise variance frozen when the pair was built.
struct PointPlanePair {
  int point_index = 0;  // into CalibrationProblem::points
  int lidar_frame = 0;
  PlanePatch patch;
  double variance = 0.0;  // n^T Sigma_{L_i p} n at build time
  double distance = 0.0;  // |n^T (p - centroid)| at build time
};

struct CorrespondenceConfig {
  int neighbors = 20;
  double lambda_ratio = 10.0;
  double search_radius = 1.0;       // m
  double distance_threshold = 0.1;  // m
  double min_variance = 1e-15;
  int threads = 1;
};

struct CorrespondenceReport {
  int valid = 0;
  int ratio_rejected = 0;
  int distance_rejected = 0;
  int no_neighbors = 0;
  int zero_variance = 0;
  std::vector<int> discarded_points;  // point ids left without any pair
};

/// Searches every (point, LiDAR frame) combination: transform through the
/// extrinsic/pose chain, k-nearest neighbors, eigenvalue-ratio test, distance
/// test. Throws NoValidPairsError when nothing survives.
std::pair<std::vector<PointPlanePair>, CorrespondenceReport> build_correspondences(
    const CalibrationProblem& problem, const std::vector<const KdTree*>& indices,
    const CorrespondenceConfig& cfg = {});

struct PointPlaneEvaluation {
  double residual = 0.0;   // n^T (p_in_frame - centroid), m
  double variance = 0.0;   // evaluated fresh from the problem state
  double contribution = 0.0;  // 0.5 residual^2 / variance
};

/// Evaluates one pair at the problem's current state. Throws Error for a
/// variance below min_variance (degenerate point covariance).
PointPlaneEvaluation point_to_plane_residual(const PointPlanePair& pair,
                                             const CalibrationProblem& problem,
                                             double min_variance = 1e-15);

struct ReprojectionEvaluation {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  Eigen::Matrix2d weight = Eigen::Matrix2d::Identity();  // inverse pixel covariance
  double contribution = 0.0;  // 0.5 r^T weight r
};

/// Reprojection residual of one observation of a retained point. Throws
/// NonPositiveDepthError when the point lies behind the camera.
ReprojectionEvaluation reprojection_residual(const CalibrationProblem& problem, int point_index,
                                             int observation_index);

/// Sum of point-to-plane contributions (E^P) with variances evaluated fresh.
double total_point_plane_cost(const std::vector<PointPlanePair>& pairs,
                              const CalibrationProblem& problem);
/// Sum of reprojection contributions (E^V) over all retained observations.
double total_reprojection_cost(const CalibrationProblem& problem);

struct DegeneracyDiagnosis {
  bool degenerate = false;
  Eigen::Vector3d weak_direction = Eigen::Vector3d::Zero();  // first-camera frame
  double conditioning_ratio = 0.0;  // lambda_min / lambda_max of sum n n^T
};

/// Eigen-analysis of the pair normals rotated into the first-camera frame;
/// degenerate when lambda_min/lambda_max falls below ratio_threshold (the
/// translation component along the weak direction is unconstrained).
DegeneracyDiagnosis diagnose_degeneracy(const std::vector<PointPlanePair>& pairs,
                                        const CalibrationProblem& problem,
                                        double ratio_threshold = 1e-3);

/// Whitened point-to-plane residual with the weight frozen at build time:
/// r = w n^T (R_e (R_i p + t_i) + t_e - centroid), w = sqrt(alpha / variance).
/// Blocks: [extrinsic rotation (quaternion), extrinsic translation,
/// camera-pose rotation (quaternion), camera-pose translation, point].
class JointPlaneResidual : public ResidualFunction {
 public:
  JointPlaneResidual(const PointPlanePair& pair, double weight)
      : normal_(pair.patch.normal), centroid_(pair.patch.centroid), weight_(weight) {}
  int dimension() const override { return 1; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector3d normal_;
  Eigen::Vector3d centroid_;
  double weight_;
};

struct JointConfig {
  double alpha = 1.0;
  /// Overrides alpha with (#observations / #pairs) at initialization.
  bool alpha_auto_balance = false;
  bool optimize_intrinsics = true;
  bool tie_focal = false;
  int rebuild_every = 3;  // accepted steps between correspondence rebuilds
  bool freeze_pairs = false;
  int max_iterations = 100;  // total accepted steps
  /// Converged once the inner solver stalls and a rebuild either reproduces
  /// the same pair set or changes the cost by less than this (relative).
  /// Weight refreshes jitter the cost at roughly the noise level, so this sits
  /// far above the inner solver tolerances.
  double rebuild_cost_tolerance = 1e-6;
  double degeneracy_ratio = 1e-3;
  CorrespondenceConfig pairing;
  SolverConfig solver;
};

struct JointReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double point_plane_cost = 0.0;   // E^P at the solution
  double reprojection_cost = 0.0;  // E^V at the solution
  int pair_count = 0;
  int observation_count = 0;
  int rebuilds = 0;
  bool converged = false;
  DegeneracyDiagnosis diagnosis;
  CorrespondenceReport correspondence;  // from the initial build
  std::vector<int> discarded_points;    // cumulative over rebuilds
  std::vector<IterationRecord> trace;   // concatenated solver segments
  std::vector<int> segment_sizes;       // trace entries per solver invocation
};

/// Minimizes alpha E^P + E^V over the extrinsics, intrinsics, camera poses
/// (pose 0 fixed), and points, by Levenberg-Marquardt with periodic
/// correspondence rebuilds. Patch geometry and pair variances are frozen
/// between rebuilds. Points without any valid pair are discarded from the
/// problem. Throws NoValidPairsError or DegenerateProblemError (diagnosis
/// from the initial pair set).
JointReport solve_joint(CalibrationProblem& problem, const std::vector<const KdTree*>& indices,
                        const JointConfig& cfg = {});

}  // namespace plancalib
