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
#include "plancalib/lidar_pose.hpp"

#include <cmath>
#include <memory>

namespace plancalib {

namespace {

struct PlanePair {
  Eigen::Vector3d point;     // source frame
  Eigen::Vector3d normal;    // target frame
  Eigen::Vector3d centroid;  // target frame
};

Eigen::VectorXd quat_to_block(const Eigen::Quaterniond& q) {
  Eigen::VectorXd v(4);
  v << q.w(), q.x(), q.y(), q.z();
  return v;
}

Eigen::Quaterniond block_to_quat(const Eigen::VectorXd& v) {
  return Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
}

/// Gathers valid point-to-plane pairs of the transformed source against the
/// target index.
std::vector<PlanePair> build_pairs(const PointCloud& source, const KdTree& target,
                                   const Se3& pose, const IcpConfig& cfg) {
  std::vector<PlanePair> pairs;
  pairs.reserve(source.size());
  std::vector<Eigen::Vector3d> neighborhood;
  for (const auto& p : source.points) {
    const Eigen::Vector3d moved = pose * p;
    const auto nn = target.knn(moved, cfg.neighbors, cfg.search_radius);
    if (static_cast<int>(nn.size()) < cfg.neighbors) continue;
    neighborhood.clear();
    for (const auto& n : nn) neighborhood.push_back(target.point(n.index));
    PlanePatch patch;
    try {
      patch = fit_plane(neighborhood);
    } catch (const DegenerateNeighborhoodError&) {
      continue;
    }
    if (!plane_validity(patch, cfg.lambda_ratio)) continue;
    pairs.push_back({p, patch.normal, patch.centroid});
  }
  return pairs;
}

double pair_rms(const std::vector<PlanePair>& pairs, const Se3& pose) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& pair : pairs) {
    const double r = pair.normal.dot(pose * pair.point - pair.centroid);
    sum += r * r;
  }
  return std::sqrt(sum / pairs.size());
}

}  // namespace

bool PlaneAlignResidual::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                  Eigen::VectorXd& residual,
                                  std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::VectorXd& qv = *params[0];
  const Eigen::Quaterniond q(qv[0], qv[1], qv[2], qv[3]);
  const Eigen::Vector3d rotated = q * point_;
  residual.resize(1);
  residual[0] = normal_.dot(rotated + *params[1] - centroid_);
  if (jacobians) {
    (*jacobians)[0] = -normal_.transpose() * skew(rotated);  // d(Rp)/ddelta = -skew(Rp)
    (*jacobians)[1] = normal_.transpose();
  }
  return true;
}

IcpResult icp_point_to_plane(const PointCloud& source, const KdTree& target, const Se3& initial,
                             const IcpConfig& cfg) {
  if (source.points.empty()) throw EmptyCloudError("icp: empty source cloud");

  IcpResult result;
  result.pose = initial;
  std::vector<PlanePair> pairs;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    pairs = build_pairs(source, target, result.pose, cfg);
    if (iter == 0) {
      const double overlap = static_cast<double>(pairs.size()) / source.size();
      if (overlap < cfg.min_overlap)
        throw InsufficientOverlapError("icp: only " + std::to_string(pairs.size()) + " of " +
                                       std::to_string(source.size()) +
                                       " source points found a valid patch");
    }
    if (pairs.empty()) break;

    Problem problem;
    const BlockId rot = problem.add_block(quat_to_block(result.pose.rotation),
                                          &quaternion_manifold());
    const BlockId trans = problem.add_block(result.pose.translation);
    for (const auto& pair : pairs)
      problem.add_residual(std::make_shared<PlaneAlignResidual>(pair.point, pair.normal, pair.centroid), {rot, trans},
                           RobustLoss::huber(cfg.huber_delta));
    SolverConfig inner;
    inner.max_iterations = 4 * cfg.inner_lm_iterations;
    inner.max_accepted_steps = cfg.inner_lm_iterations;
    solve_lm(problem, inner);

    Se3 updated;
    updated.rotation = block_to_quat(problem.value(rot));
    updated.translation = problem.value(trans);
    const double rot_update =
        rotation_angle_deg(result.pose.rotation, updated.rotation) * M_PI / 180.0;
    const double trans_update = (result.pose.translation - updated.translation).norm();
    result.pose = updated;
    result.iterations = iter + 1;
    if (rot_update < cfg.rotation_tolerance && trans_update < cfg.translation_tolerance) {
      result.converged = true;
      break;
    }
  }

  result.valid_pairs = static_cast<int>(pairs.size());
  result.inlier_rms = pair_rms(pairs, result.pose);
  return result;
}

LidarTrajectory estimate_trajectory(const std::vector<PointCloud>& scans, const IcpConfig& cfg) {
  if (scans.empty()) throw EmptyCloudError("estimate_trajectory: no scans");
  LidarTrajectory trajectory;
  trajectory.poses.assign(scans.size(), Se3::identity());
  if (scans.size() == 1) return trajectory;

  PointCloud map;
  map.points = scans[0].points;
  for (std::size_t i = 1; i < scans.size(); ++i) {
    const KdTree tree(map);
    const Se3 guess = trajectory.poses[i - 1].inverse();  // body -> world of previous scan
    const IcpResult res = icp_point_to_plane(scans[i], tree, guess, cfg);
    trajectory.poses[i] = res.pose.inverse();
    map.points.reserve(map.points.size() + scans[i].points.size());
    for (const auto& p : scans[i].points) map.points.push_back(res.pose * p);
  }
  return trajectory;
}

TrajectoryRefineResult refine_trajectory(const std::vector<PointCloud>& scans,
                                         const LidarTrajectory& initial,
                                         const TrajectoryRefineConfig& cfg) {
  if (scans.size() != initial.poses.size())
    throw Error("refine_trajectory: scan/pose count mismatch");
  TrajectoryRefineResult result;
  result.trajectory = initial;
  result.trajectory.poses[0] = Se3::identity();
  if (scans.size() < 2) {
    result.converged = true;
    return result;
  }

  const int n = static_cast<int>(scans.size());
  bool have_initial_cost = false;

  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    // Scans in world coordinates at the current poses.
    std::vector<std::vector<Eigen::Vector3d>> world(n);
    for (int i = 0; i < n; ++i) {
      const Se3 to_world = result.trajectory.poses[i].inverse();
      world[i].reserve(scans[i].size());
      for (const auto& p : scans[i].points) world[i].push_back(to_world * p);
    }

    Problem problem;
    std::vector<BlockId> rot(n, -1), trans(n, -1);
    for (int i = 1; i < n; ++i) {
      const Se3 to_world = result.trajectory.poses[i].inverse();
      rot[i] = problem.add_block(quat_to_block(to_world.rotation), &quaternion_manifold());
      trans[i] = problem.add_block(to_world.translation);
    }

    int total_pairs = 0;
    for (int i = 1; i < n; ++i) {
      PointCloud others;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        others.points.insert(others.points.end(), world[j].begin(), world[j].end());
      }
      const KdTree tree(others);
      const Se3 to_world = result.trajectory.poses[i].inverse();
      const std::vector<PlanePair> pairs = build_pairs(scans[i], tree, to_world, cfg.pairing);
      for (const auto& pair : pairs)
        problem.add_residual(std::make_shared<PlaneAlignResidual>(pair.point, pair.normal, pair.centroid),
                             {rot[i], trans[i]}, RobustLoss::huber(cfg.pairing.huber_delta));
      total_pairs += static_cast<int>(pairs.size());
    }
    if (total_pairs == 0) break;

    SolverConfig inner;
    inner.max_iterations = 4 * cfg.inner_lm_iterations;
    inner.max_accepted_steps = cfg.inner_lm_iterations;
    const SolverReport report = solve_lm(problem, inner);
    if (!have_initial_cost) {
      result.initial_cost = report.initial_cost;
      have_initial_cost = true;
    }
    result.final_cost = report.final_cost;
    result.sweeps = sweep + 1;

    double max_rot = 0.0, max_trans = 0.0;
    for (int i = 1; i < n; ++i) {
      Se3 to_world;
      to_world.rotation = block_to_quat(problem.value(rot[i]));
      to_world.translation = problem.value(trans[i]);
      const Se3 updated = to_world.inverse();
      max_rot = std::max(max_rot, rotation_angle_deg(result.trajectory.poses[i].rotation,
                                                     updated.rotation) *
                                      M_PI / 180.0);
      max_trans = std::max(
          max_trans, (result.trajectory.poses[i].translation - updated.translation).norm());
      result.trajectory.poses[i] = updated;
    }
    if (max_rot < cfg.rotation_tolerance && max_trans < cfg.translation_tolerance) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace plancalib
