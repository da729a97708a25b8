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

namespace plancalib {

/// Point-to-plane alignment residual r = n^T (R p + t - centroid).
/// Blocks: [rotation (quaternion), translation].
class PlaneAlignResidual : public ResidualFunction {
 public:
  PlaneAlignResidual(const Eigen::Vector3d& point, const Eigen::Vector3d& normal,
                     const Eigen::Vector3d& centroid)
      : point_(point), normal_(normal), centroid_(centroid) {}
  int dimension() const override { return 1; }
  bool evaluate(const std::vector<const Eigen::VectorXd*>& params, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector3d point_;
  Eigen::Vector3d normal_;
  Eigen::Vector3d centroid_;
};

struct IcpConfig {
  int max_iterations = 50;
  double rotation_tolerance = 1e-6;     // rad, pose update
  double translation_tolerance = 1e-5;  // m, pose update
  double huber_delta = 0.1;             // m
  int neighbors = 20;
  double lambda_ratio = 10.0;
  double search_radius = 1.0;  // m
  double min_overlap = 0.3;    // fraction of source points with a valid patch
  int inner_lm_iterations = 4;
};

struct IcpResult {
  Se3 pose;  // maps source-frame points into the target frame
  bool converged = false;
  int iterations = 0;
  double inlier_rms = 0.0;
  int valid_pairs = 0;
};

/// Point-to-plane ICP of a source cloud against an indexed target.
/// Correspondences are rebuilt every iteration; each iteration minimizes the
/// Huber-robustified point-to-plane cost over the frozen pair set. Throws
/// InsufficientOverlapError when fewer than min_overlap of the source points
/// find a valid patch under the initial guess.
IcpResult icp_point_to_plane(const PointCloud& source, const KdTree& target, const Se3& initial,
                             const IcpConfig& cfg = {});

/// Per-scan poses mapping the LiDAR world frame (= first scan frame) into
/// each scan's frame; poses[0] stays the identity exactly.
struct LidarTrajectory {
  std::vector<Se3> poses;
};

/// Chains scans with incremental ICP against the merged map of the already
/// registered scans.
LidarTrajectory estimate_trajectory(const std::vector<PointCloud>& scans,
                                    const IcpConfig& cfg = {});

struct TrajectoryRefineConfig {
  int max_sweeps = 10;
  double rotation_tolerance = 1e-7;
  double translation_tolerance = 1e-6;
  int inner_lm_iterations = 5;
  IcpConfig pairing;  // neighbor/validity settings for patch extraction
};

struct TrajectoryRefineResult {
  LidarTrajectory trajectory;
  bool converged = false;
  int sweeps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Joint multi-scan refinement: per sweep, every scan's points pair against
/// plane patches fitted in the union of the other scans at current poses;
/// patches are frozen for the sweep while one LM pass updates all non-gauge
/// poses. The first pose stays the identity.
TrajectoryRefineResult refine_trajectory(const std::vector<PointCloud>& scans,
                                         const LidarTrajectory& initial,
                                         const TrajectoryRefineConfig& cfg = {});

}  // namespace plancalib
