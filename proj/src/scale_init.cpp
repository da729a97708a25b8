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
#include "plancalib/scale_init.hpp"

#include <cmath>
#include <mutex>

#include "plancalib/parallel.hpp"

namespace plancalib {

ScaleRecovery recover_scale(const std::vector<Se3>& camera_poses,
                            const std::vector<Se3>& lidar_poses, const Se3& initial_extrinsics) {
  if (camera_poses.size() != lidar_poses.size())
    throw Error("recover_scale: pose count mismatch");
  if (camera_poses.size() < 2) throw Error("recover_scale: needs at least 2 frames");

  double max_cam_translation = 0.0;
  for (const auto& T : camera_poses)
    max_cam_translation = std::max(max_cam_translation, T.translation.norm());
  if (max_cam_translation <= 1e-6)
    throw DegenerateMotionError("recover_scale: all camera translations are (near) zero");

  const Eigen::Matrix3d R_init = initial_extrinsics.rotation_matrix();
  const Eigen::Vector3d& t_init = initial_extrinsics.translation;

  double numerator = 0.0, denominator = 0.0;
  for (std::size_t i = 1; i < camera_poses.size(); ++i) {
    const Eigen::Vector3d a = R_init * camera_poses[i].translation;
    const Eigen::Vector3d b =
        lidar_poses[i].translation -
        (Eigen::Matrix3d::Identity() - lidar_poses[i].rotation_matrix()) * t_init;
    numerator += a.dot(b);
    denominator += a.squaredNorm();
  }
  if (denominator < 1e-18)
    throw DegenerateMotionError("recover_scale: rank-0 system in the scale");
  const double scale = numerator / denominator;

  double sq = 0.0;
  for (std::size_t i = 1; i < camera_poses.size(); ++i) {
    const Eigen::Vector3d a = R_init * camera_poses[i].translation;
    const Eigen::Vector3d b =
        lidar_poses[i].translation -
        (Eigen::Matrix3d::Identity() - lidar_poses[i].rotation_matrix()) * t_init;
    sq += (scale * a - b).squaredNorm();
  }
  ScaleRecovery result;
  result.scale = scale;
  result.residual_rms = std::sqrt(sq / (3.0 * (camera_poses.size() - 1)));
  return result;
}

bool LogScalePrior::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                             Eigen::VectorXd& residual,
                             std::vector<Eigen::MatrixXd>* jacobians) const {
  residual.resize(1);
  residual[0] = ((*params[0])[0] - anchor_) * inv_sigma_;
  if (jacobians) {
    (*jacobians)[0].resize(1, 1);
    (*jacobians)[0](0, 0) = inv_sigma_;
  }
  return true;
}

bool RotationDeviationPrior::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                      Eigen::VectorXd& residual,
                                      std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::VectorXd& qv = *params[0];
  const Eigen::Quaterniond q(qv[0], qv[1], qv[2], qv[3]);
  const Eigen::Vector3d deviation = quat_log(q * anchor_inverse_);
  residual = inv_sigma_ * deviation;
  if (jacobians) (*jacobians)[0] = inv_sigma_ * so3_left_jacobian_inverse(deviation);
  return true;
}

bool VectorDeviationPrior::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                    Eigen::VectorXd& residual,
                                    std::vector<Eigen::MatrixXd>* jacobians) const {
  residual = inv_sigma_ * (*params[0] - anchor_);
  if (jacobians) (*jacobians)[0] = inv_sigma_ * Eigen::Matrix3d::Identity();
  return true;
}

bool ScalePlaneResidual::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                  Eigen::VectorXd& residual,
                                  std::vector<Eigen::MatrixXd>* jacobians) const {
  const double scale = std::exp((*params[0])[0]);
  const Eigen::VectorXd& qv = *params[1];
  const Eigen::Quaterniond q(qv[0], qv[1], qv[2], qv[3]);
  const Eigen::Vector3d scaled = scale * point_;
  const Eigen::Vector3d rotated = q * scaled;
  const Eigen::Vector3d in_frame = R_lidar_ * (rotated + *params[2]) + t_lidar_;
  residual.resize(1);
  residual[0] = normal_.dot(in_frame - centroid_);
  if (jacobians) {
    const Eigen::RowVector3d nR = normal_.transpose() * R_lidar_;
    (*jacobians)[0] = nR * rotated;  // d(exp(sigma) p)/d sigma = scaled point
    (*jacobians)[1] = -nR * skew(rotated);
    (*jacobians)[2] = nR;
  }
  return true;
}

InitResult refine_scale_extrinsics(const std::vector<VisualPoint>& points,
                                   const std::vector<Se3>& camera_poses,
                                   const std::vector<PointCloud>& clouds,
                                   const std::vector<const KdTree*>& indices,
                                   const std::vector<Se3>& lidar_poses, const ScaledInit& seed,
                                   const InitConfig& cfg) {
  if (clouds.size() != indices.size() || clouds.size() != lidar_poses.size())
    throw Error("refine_scale_extrinsics: per-frame input sizes mismatch");
  if (points.empty()) throw NoValidPairsError("refine_scale_extrinsics: empty point set");
  if (!(seed.scale > 0.0)) throw Error("refine_scale_extrinsics: seed scale must be positive");

  const int n_frames = static_cast<int>(clouds.size());
  const int n_points = static_cast<int>(points.size());

  ScaledInit state = seed;
  state.log.clear();

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    const double delta = std::max(cfg.huber_delta,
                                  cfg.huber_delta_initial * std::pow(0.5, outer));
    // Rebuild the pair set at the current (scale, extrinsics).
    const double scale = state.scale;
    const Eigen::Matrix3d R_e = state.extrinsics.rotation_matrix();
    const Eigen::Vector3d t_e = state.extrinsics.translation;

    struct InitPair {
      Eigen::Vector3d point;
      Se3 lidar_pose;
      Eigen::Vector3d normal;
      Eigen::Vector3d centroid;
    };
    std::vector<std::vector<InitPair>> per_point(n_points);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    parallel_for(n_points, cfg.threads, [&](int begin, int end) {
      try {
        std::vector<Eigen::Vector3d> neighborhood;
        for (int j = begin; j < end; ++j) {
          const Eigen::Vector3d scaled = scale * points[j].position;
          const Eigen::Vector3d in_lidar_world = R_e * scaled + t_e;
          for (int i = 0; i < n_frames; ++i) {
            const Eigen::Vector3d in_frame = lidar_poses[i] * in_lidar_world;
            const auto nn = indices[i]->knn(in_frame, cfg.neighbors, cfg.search_radius);
            if (static_cast<int>(nn.size()) < cfg.neighbors) continue;
            neighborhood.clear();
            for (const auto& hit : nn) neighborhood.push_back(indices[i]->point(hit.index));
            PlanePatch patch;
            try {
              patch = fit_plane(neighborhood, Eigen::Vector3d::Zero());
            } catch (const DegenerateNeighborhoodError&) {
              continue;
            }
            if (!plane_validity(patch, cfg.lambda_ratio)) continue;
            per_point[j].push_back(
                {points[j].position, lidar_poses[i], patch.normal, patch.centroid});
          }
        }
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
    if (failure) std::rethrow_exception(failure);

    int n_pairs = 0;
    for (const auto& pairs : per_point) n_pairs += static_cast<int>(pairs.size());
    if (n_pairs == 0)
      throw NoValidPairsError("refine_scale_extrinsics: no point passed the plane test");

    Problem problem;
    Eigen::VectorXd log_scale(1);
    log_scale[0] = std::log(state.scale);
    const BlockId sigma = problem.add_block(log_scale);
    Eigen::VectorXd qv(4);
    qv << state.extrinsics.rotation.w(), state.extrinsics.rotation.x(),
        state.extrinsics.rotation.y(), state.extrinsics.rotation.z();
    const BlockId rot = problem.add_block(qv, &quaternion_manifold());
    const BlockId trans = problem.add_block(state.extrinsics.translation);
    for (const auto& pairs : per_point)
      for (const auto& pair : pairs)
        problem.add_residual(std::make_shared<ScalePlaneResidual>(pair.point, pair.lidar_pose,
                                                                   pair.normal, pair.centroid),
                             {sigma, rot, trans}, RobustLoss::huber(delta));
    // Trust-region priors. The scale one is anchored at this iteration's
    // starting value so a single inner solve cannot run off to the scale
    // collapse; the extrinsic ones are anchored at the seed and price out
    // far-away registration basins (wall swaps) that an initialization of
    // hand-eye quality excludes. All widths double per iteration: the wrong
    // basins are only reachable early, while tight late priors would slow and
    // bias the endgame.
    const double widen = std::pow(2.0, outer);
    if (cfg.scale_prior_sigma > 0.0)
      problem.add_residual(std::make_shared<LogScalePrior>(std::log(state.scale),
                                                           cfg.scale_prior_sigma * widen),
                           {sigma});
    if (cfg.extrinsic_rotation_prior_rad > 0.0)
      problem.add_residual(
          std::make_shared<RotationDeviationPrior>(seed.extrinsics.rotation,
                                                   cfg.extrinsic_rotation_prior_rad * widen),
          {rot});
    if (cfg.extrinsic_translation_prior_m > 0.0)
      problem.add_residual(
          std::make_shared<VectorDeviationPrior>(seed.extrinsics.translation,
                                                 cfg.extrinsic_translation_prior_m * widen),
          {trans});

    const SolverReport report = solve_lm(problem, cfg.solver);

    ScaledInit updated = state;
    updated.scale = std::exp(problem.value(sigma)[0]);
    const Eigen::VectorXd q_out = problem.value(rot);
    updated.extrinsics.rotation = Eigen::Quaterniond(q_out[0], q_out[1], q_out[2], q_out[3]);
    updated.extrinsics.translation = problem.value(trans);

    state.log.push_back({updated.scale, updated.extrinsics, report.final_cost, n_pairs});

    const double rot_change =
        rotation_angle_deg(state.extrinsics.rotation, updated.extrinsics.rotation) * M_PI /
        180.0;
    const double trans_change =
        (state.extrinsics.translation - updated.extrinsics.translation).norm();
    const double scale_change = std::abs(updated.scale - state.scale);
    state.scale = updated.scale;
    state.extrinsics = updated.extrinsics;
    if (rot_change < cfg.parameter_tolerance && trans_change < cfg.parameter_tolerance &&
        scale_change < cfg.parameter_tolerance) {
      state.converged = true;
      break;
    }
  }

  // Rescale the visual state to metric units with the final scale.
  InitResult result;
  result.init = state;
  const double s = state.scale;
  result.points = points;
  for (auto& point : result.points) {
    point.position *= s;
    point.covariance *= s * s;
  }
  result.camera_poses = camera_poses;
  for (auto& pose : result.camera_poses) pose.translation *= s;
  return result;
}

}  // namespace plancalib
