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
#include "plancalib/joint.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>

#include "plancalib/parallel.hpp"

namespace plancalib {

namespace {

Eigen::VectorXd quat_to_block(const Eigen::Quaterniond& q) {
  Eigen::VectorXd v(4);
  v << q.w(), q.x(), q.y(), q.z();
  return v;
}

Eigen::Quaterniond block_to_quat(const Eigen::VectorXd& v) {
  return Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
}

}  // namespace

bool JointPlaneResidual::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                  Eigen::VectorXd& residual,
                                  std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::Quaterniond q_e = block_to_quat(*params[0]);
  const Eigen::Vector3d& t_e = *params[1];
  const Eigen::Quaterniond q_i = block_to_quat(*params[2]);
  const Eigen::Vector3d& t_i = *params[3];
  const Eigen::Vector3d& p = *params[4];

  const Eigen::Vector3d cam_rotated = q_i * p;
  const Eigen::Vector3d c = cam_rotated + t_i;
  const Eigen::Vector3d ext_rotated = q_e * c;
  const Eigen::Vector3d g = ext_rotated + t_e;
  residual.resize(1);
  residual[0] = weight_ * normal_.dot(g - centroid_);
  if (jacobians) {
    const Eigen::RowVector3d wn = weight_ * normal_.transpose();
    const Eigen::Matrix3d R_e = q_e.toRotationMatrix();
    (*jacobians)[0] = -wn * skew(ext_rotated);
    (*jacobians)[1] = wn;
    (*jacobians)[2] = -(wn * R_e) * skew(cam_rotated);
    (*jacobians)[3] = wn * R_e;
    (*jacobians)[4] = (wn * R_e) * q_i.toRotationMatrix();
  }
  return true;
}

std::pair<std::vector<PointPlanePair>, CorrespondenceReport> build_correspondences(
    const CalibrationProblem& problem, const std::vector<const KdTree*>& indices,
    const CorrespondenceConfig& cfg) {
  const int n_frames = static_cast<int>(problem.lidar_poses.size());
  if (static_cast<int>(indices.size()) != n_frames)
    throw Error("build_correspondences: index/pose count mismatch");
  const int n_points = static_cast<int>(problem.points.size());
  if (n_points == 0) throw NoValidPairsError("build_correspondences: empty point set");

  struct Counters {
    int ratio = 0, distance = 0, no_neighbors = 0, zero_variance = 0;
  };
  std::vector<std::vector<PointPlanePair>> per_point(n_points);
  std::vector<Counters> counters(n_points);
  std::exception_ptr failure;
  std::mutex failure_mutex;

  parallel_for(n_points, cfg.threads, [&](int begin, int end) {
    try {
      std::vector<Eigen::Vector3d> neighborhood;
      for (int j = begin; j < end; ++j) {
        const Eigen::Vector3d& p = problem.points[j].position;
        const Eigen::Matrix3d& cov = problem.points[j].covariance;
        for (int i = 0; i < n_frames; ++i) {
          // camera world -> camera i -> LiDAR i
          const Se3 chain = problem.extrinsics * problem.camera_poses[i];
          const Eigen::Vector3d in_frame = chain * p;
          const auto nn = indices[i]->knn(in_frame, cfg.neighbors, cfg.search_radius);
          if (static_cast<int>(nn.size()) < cfg.neighbors) {
            ++counters[j].no_neighbors;
            continue;
          }
          neighborhood.clear();
          for (const auto& hit : nn) neighborhood.push_back(indices[i]->point(hit.index));
          PlanePatch patch;
          try {
            patch = fit_plane(neighborhood, Eigen::Vector3d::Zero());
          } catch (const DegenerateNeighborhoodError&) {
            ++counters[j].no_neighbors;
            continue;
          }
          if (!plane_validity(patch, cfg.lambda_ratio)) {
            ++counters[j].ratio;
            continue;
          }
          const double distance = std::abs(patch.normal.dot(in_frame - patch.centroid));
          if (distance > cfg.distance_threshold) {
            ++counters[j].distance;
            continue;
          }
          const Eigen::Matrix3d R_chain = chain.rotation_matrix();
          const double variance =
              patch.normal.dot(R_chain * cov * R_chain.transpose() * patch.normal);
          if (variance < cfg.min_variance) {
            ++counters[j].zero_variance;
            continue;
          }
          per_point[j].push_back({j, i, patch, variance, distance});
        }
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  std::vector<PointPlanePair> pairs;
  CorrespondenceReport report;
  for (int j = 0; j < n_points; ++j) {
    report.ratio_rejected += counters[j].ratio;
    report.distance_rejected += counters[j].distance;
    report.no_neighbors += counters[j].no_neighbors;
    report.zero_variance += counters[j].zero_variance;
    if (per_point[j].empty()) {
      report.discarded_points.push_back(problem.points[j].track.point_id);
      continue;
    }
    pairs.insert(pairs.end(), per_point[j].begin(), per_point[j].end());
  }
  report.valid = static_cast<int>(pairs.size());
  if (pairs.empty())
    throw NoValidPairsError("build_correspondences: no valid point-to-plane pair");
  return {std::move(pairs), std::move(report)};
}

PointPlaneEvaluation point_to_plane_residual(const PointPlanePair& pair,
                                             const CalibrationProblem& problem,
                                             double min_variance) {
  const Se3 chain = problem.extrinsics * problem.camera_poses[pair.lidar_frame];
  const Eigen::Vector3d in_frame = chain * problem.points[pair.point_index].position;
  const Eigen::Matrix3d R_chain = chain.rotation_matrix();
  const Eigen::Matrix3d cov =
      R_chain * problem.points[pair.point_index].covariance * R_chain.transpose();

  PointPlaneEvaluation eval;
  eval.residual = pair.patch.normal.dot(in_frame - pair.patch.centroid);
  eval.variance = pair.patch.normal.dot(cov * pair.patch.normal);
  if (eval.variance < min_variance)
    throw Error("point_to_plane_residual: variance below " + std::to_string(min_variance));
  eval.contribution = 0.5 * eval.residual * eval.residual / eval.variance;
  return eval;
}

ReprojectionEvaluation reprojection_residual(const CalibrationProblem& problem, int point_index,
                                             int observation_index) {
  const VisualPoint& point = problem.points[point_index];
  const TrackObservation& obs = point.track.observations[observation_index];
  const Eigen::Vector3d in_camera = problem.camera_poses[obs.frame] * point.position;
  const auto pixel = project_checked(in_camera, problem.intrinsics);
  if (!pixel)
    throw NonPositiveDepthError("reprojection_residual: point behind camera " +
                                std::to_string(obs.frame));
  ReprojectionEvaluation eval;
  eval.residual = obs.pixel - *pixel;
  eval.weight = obs.pixel_cov.inverse();
  eval.contribution = 0.5 * eval.residual.dot(eval.weight * eval.residual);
  return eval;
}

double total_point_plane_cost(const std::vector<PointPlanePair>& pairs,
                              const CalibrationProblem& problem) {
  double total = 0.0;
  for (const auto& pair : pairs) total += point_to_plane_residual(pair, problem).contribution;
  return total;
}

double total_reprojection_cost(const CalibrationProblem& problem) {
  double total = 0.0;
  for (std::size_t j = 0; j < problem.points.size(); ++j) {
    const auto& track = problem.points[j].track;
    for (std::size_t k = 0; k < track.observations.size(); ++k)
      total += reprojection_residual(problem, static_cast<int>(j), static_cast<int>(k))
                   .contribution;
  }
  return total;
}

DegeneracyDiagnosis diagnose_degeneracy(const std::vector<PointPlanePair>& pairs,
                                        const CalibrationProblem& problem,
                                        double ratio_threshold) {
  if (pairs.empty()) throw Error("diagnose_degeneracy: empty pair set");
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  for (const auto& pair : pairs) {
    // LiDAR frame i -> first-camera frame
    const Eigen::Quaterniond chain_rot =
        (problem.extrinsics.rotation * problem.camera_poses[pair.lidar_frame].rotation)
            .conjugate();
    const Eigen::Vector3d n = chain_rot * pair.patch.normal;
    M.noalias() += n * n.transpose();
  }
  M /= static_cast<double>(pairs.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(M);
  DegeneracyDiagnosis diagnosis;
  diagnosis.conditioning_ratio =
      eig.eigenvalues()[0] / std::max(eig.eigenvalues()[2], 1e-300);
  diagnosis.weak_direction = eig.eigenvectors().col(0).normalized();
  diagnosis.degenerate = diagnosis.conditioning_ratio < ratio_threshold;
  return diagnosis;
}

JointReport solve_joint(CalibrationProblem& problem, const std::vector<const KdTree*>& indices,
                        const JointConfig& cfg) {
  JointReport report;

  auto [pairs, pair_report] = build_correspondences(problem, indices, cfg.pairing);
  report.correspondence = pair_report;

  // Discard points without any correspondence (and their observations).
  const auto discard_pairless = [&](const CorrespondenceReport& rep,
                                    std::vector<PointPlanePair>& live_pairs) {
    if (rep.discarded_points.empty()) return;
    const std::set<int> discarded(rep.discarded_points.begin(), rep.discarded_points.end());
    std::vector<int> remap(problem.points.size(), -1);
    std::vector<VisualPoint> kept;
    kept.reserve(problem.points.size());
    for (std::size_t j = 0; j < problem.points.size(); ++j) {
      if (discarded.count(problem.points[j].track.point_id)) continue;
      remap[j] = static_cast<int>(kept.size());
      kept.push_back(std::move(problem.points[j]));
    }
    problem.points = std::move(kept);
    for (auto& pair : live_pairs) pair.point_index = remap[pair.point_index];
    for (const int id : rep.discarded_points) report.discarded_points.push_back(id);
  };
  discard_pairless(pair_report, pairs);

  problem.alpha = cfg.alpha;
  int observation_count = 0;
  for (const auto& point : problem.points)
    observation_count += static_cast<int>(point.track.observations.size());
  if (cfg.alpha_auto_balance && !pairs.empty())
    problem.alpha = static_cast<double>(observation_count) / pairs.size();

  report.diagnosis = diagnose_degeneracy(pairs, problem, cfg.degeneracy_ratio);
  if (report.diagnosis.degenerate)
    throw DegenerateProblemError(
        "solve_joint: point-to-plane normals do not span 3D (conditioning ratio " +
            std::to_string(report.diagnosis.conditioning_ratio) + ")",
        report.diagnosis.weak_direction, report.diagnosis.conditioning_ratio);

  const IntrinsicsBlock layout{cfg.tie_focal, problem.intrinsics.width,
                               problem.intrinsics.height};
  const int n_frames = static_cast<int>(problem.camera_poses.size());

  bool have_initial = false;
  int remaining = cfg.max_iterations;
  bool converged = false;

  while (remaining > 0) {
    // Solver problem over the current state with the current frozen pairs.
    Problem lsq;
    const BlockId intr = lsq.add_block(layout.pack(problem.intrinsics));
    if (!cfg.optimize_intrinsics) lsq.set_constant(intr);
    const BlockId ext_rot =
        lsq.add_block(quat_to_block(problem.extrinsics.rotation), &quaternion_manifold());
    const BlockId ext_trans = lsq.add_block(problem.extrinsics.translation);
    std::vector<BlockId> rot(n_frames), trans(n_frames);
    for (int i = 0; i < n_frames; ++i) {
      rot[i] = lsq.add_block(quat_to_block(problem.camera_poses[i].rotation),
                             &quaternion_manifold());
      trans[i] = lsq.add_block(problem.camera_poses[i].translation);
      if (i == 0) {
        lsq.set_constant(rot[0]);
        lsq.set_constant(trans[0]);
      }
    }
    std::vector<BlockId> point_blocks(problem.points.size());
    for (std::size_t j = 0; j < problem.points.size(); ++j) {
      point_blocks[j] = lsq.add_block(problem.points[j].position);
      lsq.set_eliminable(point_blocks[j]);
    }

    for (const auto& pair : pairs) {
      const double weight = std::sqrt(problem.alpha / pair.variance);
      lsq.add_residual(std::make_shared<JointPlaneResidual>(pair, weight),
                       {ext_rot, ext_trans, rot[pair.lidar_frame], trans[pair.lidar_frame],
                        point_blocks[pair.point_index]});
    }
    for (std::size_t j = 0; j < problem.points.size(); ++j) {
      for (const auto& obs : problem.points[j].track.observations) {
        lsq.add_residual(
            std::make_shared<ReprojectionResidual>(obs.pixel, obs.pixel_cov, layout),
            {rot[obs.frame], trans[obs.frame], point_blocks[j], intr});
      }
    }

    SolverConfig segment_cfg = cfg.solver;
    segment_cfg.max_accepted_steps = cfg.freeze_pairs ? remaining
                                                      : std::min(cfg.rebuild_every, remaining);
    segment_cfg.max_iterations = std::max(segment_cfg.max_accepted_steps * 6, 20);
    const SolverReport segment = solve_lm(lsq, segment_cfg);
    if (!have_initial) {
      report.initial_cost = segment.initial_cost;
      have_initial = true;
    }
    report.trace.insert(report.trace.end(), segment.trace.begin(), segment.trace.end());
    report.segment_sizes.push_back(static_cast<int>(segment.trace.size()));
    remaining -= std::max(segment.accepted_steps, 1);

    // Write the solution back.
    problem.intrinsics = layout.unpack(lsq.value(intr));
    problem.extrinsics.rotation = block_to_quat(lsq.value(ext_rot));
    problem.extrinsics.translation = lsq.value(ext_trans);
    for (int i = 0; i < n_frames; ++i) {
      problem.camera_poses[i].rotation = block_to_quat(lsq.value(rot[i]));
      problem.camera_poses[i].translation = lsq.value(trans[i]);
    }
    for (std::size_t j = 0; j < problem.points.size(); ++j)
      problem.points[j].position = lsq.value(point_blocks[j]);

    report.final_cost = segment.final_cost;

    const auto pair_signature = [](const std::vector<PointPlanePair>& set) {
      std::vector<std::pair<int, int>> sig;
      sig.reserve(set.size());
      for (const auto& pair : set) sig.emplace_back(pair.point_index, pair.lidar_frame);
      std::sort(sig.begin(), sig.end());
      return sig;
    };

    if (segment.converged()) {
      if (cfg.freeze_pairs) {
        converged = true;
        break;
      }
      // Refresh the pair set; stop when nothing structural changed or the
      // refreshed cost agrees within the rebuild tolerance.
      const auto old_signature = pair_signature(pairs);
      auto [new_pairs, new_report] = build_correspondences(problem, indices, cfg.pairing);
      const bool no_new_discards = new_report.discarded_points.empty();
      discard_pairless(new_report, new_pairs);
      pairs = std::move(new_pairs);
      ++report.rebuilds;
      const double refreshed = problem.alpha * total_point_plane_cost(pairs, problem) +
                               total_reprojection_cost(problem);
      const bool same_pairs = no_new_discards && old_signature == pair_signature(pairs);
      const bool cost_settled =
          std::abs(refreshed - segment.final_cost) <=
          cfg.rebuild_cost_tolerance * std::max({refreshed, segment.final_cost, 1e-12});
      if (same_pairs || cost_settled) {
        converged = true;
        report.final_cost = refreshed;
        break;
      }
      continue;
    }

    if (segment.termination == Termination::kMaxAcceptedSteps && !cfg.freeze_pairs) {
      auto [new_pairs, new_report] = build_correspondences(problem, indices, cfg.pairing);
      discard_pairless(new_report, new_pairs);
      pairs = std::move(new_pairs);
      ++report.rebuilds;
      continue;
    }

    // kLambdaOverflow / kMaxIterations without convergence
    break;
  }

  report.converged = converged;
  report.pair_count = static_cast<int>(pairs.size());
  report.observation_count = observation_count;
  report.point_plane_cost = total_point_plane_cost(pairs, problem);
  report.reprojection_cost = total_reprojection_cost(problem);
  return report;
}

}  // namespace plancalib
