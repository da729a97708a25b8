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
#include "plancalib/visual_ba.hpp"

#include <algorithm>
#include <cmath>

namespace plancalib {

namespace {

Eigen::Matrix2d sqrt_information(const Eigen::Matrix2d& pixel_cov) {
  const Eigen::Matrix2d info = pixel_cov.inverse();
  Eigen::LLT<Eigen::Matrix2d> llt(info);
  if (llt.info() != Eigen::Success)
    throw Error("pixel covariance is not symmetric positive definite");
  return llt.matrixU();
}

Eigen::Quaterniond block_to_quat(const Eigen::VectorXd& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
}

Eigen::VectorXd quat_to_block(const Eigen::Quaterniond& q) {
  Eigen::VectorXd v(4);
  v << q.w(), q.x(), q.y(), q.z();
  return v;
}

}  // namespace

Eigen::VectorXd IntrinsicsBlock::pack(const CameraIntrinsics& D) const {
  Eigen::VectorXd v(size());
  if (tied)
    v << D.fx, D.cx, D.cy, D.k1, D.k2;
  else
    v << D.fx, D.fy, D.cx, D.cy, D.k1, D.k2;
  return v;
}

CameraIntrinsics IntrinsicsBlock::unpack(const Eigen::VectorXd& v) const {
  CameraIntrinsics D;
  if (tied) {
    D.fx = D.fy = v[0];
    D.cx = v[1];
    D.cy = v[2];
    D.k1 = v[3];
    D.k2 = v[4];
  } else {
    D.fx = v[0];
    D.fy = v[1];
    D.cx = v[2];
    D.cy = v[3];
    D.k1 = v[4];
    D.k2 = v[5];
  }
  D.width = width;
  D.height = height;
  return D;
}

Eigen::MatrixXd IntrinsicsBlock::fold(const Eigen::Matrix<double, 2, 6>& J) const {
  if (!tied) return J;
  Eigen::MatrixXd out(2, 5);
  out.col(0) = J.col(0) + J.col(1);
  out.rightCols(4) = J.rightCols(4);
  return out;
}

ReprojectionResidual::ReprojectionResidual(const Eigen::Vector2d& observed,
                                           const Eigen::Matrix2d& pixel_cov,
                                           IntrinsicsBlock layout)
    : observed_(observed), sqrt_info_(sqrt_information(pixel_cov)), layout_(layout) {}

bool ReprojectionResidual::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                    Eigen::VectorXd& residual,
                                    std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::Quaterniond q = block_to_quat(*params[0]);
  const Eigen::Vector3d& t = *params[1];
  const Eigen::Vector3d& p = *params[2];
  const CameraIntrinsics D = layout_.unpack(*params[3]);

  const Eigen::Vector3d rotated = q * p;
  const Eigen::Vector3d c = rotated + t;
  ProjectionJacobians proj_jac;
  const auto pixel = project_checked(c, D, jacobians ? &proj_jac : nullptr);
  if (!pixel) return false;

  residual = sqrt_info_ * (observed_ - *pixel);
  if (jacobians) {
    const Eigen::Matrix<double, 2, 3> J_c = sqrt_info_ * proj_jac.d_point;
    (*jacobians)[0] = J_c * skew(rotated);            // -J_c * (-skew(R p))
    (*jacobians)[1] = -J_c;
    (*jacobians)[2] = -J_c * q.toRotationMatrix();
    (*jacobians)[3] = -(sqrt_info_ * layout_.fold(proj_jac.d_intrinsics));
  }
  return true;
}

bool ScaleAnchorResidual::evaluate(const std::vector<const Eigen::VectorXd*>& params,
                                   Eigen::VectorXd& residual,
                                   std::vector<Eigen::MatrixXd>* jacobians) const {
  const Eigen::Vector3d& t = *params[0];
  const double norm = t.norm();
  if (norm < 1e-12) return false;
  residual.resize(1);
  residual[0] = (norm - target_) * inv_sigma_;
  if (jacobians) (*jacobians)[0] = (inv_sigma_ / norm) * t.transpose();
  return true;
}

Eigen::Vector3d triangulate(const FeatureTrack& track, const std::vector<Se3>& poses,
                            const CameraIntrinsics& D, double min_parallax_deg) {
  const auto& obs = track.observations;
  if (obs.size() < 2) throw Error("triangulate: track needs at least 2 observations");

  std::vector<Eigen::Vector3d> world_dirs;
  std::vector<Eigen::Vector3d> bearings;
  for (const auto& o : obs) {
    const Eigen::Vector3d b = unproject(o.pixel, D);
    bearings.push_back(b);
    world_dirs.push_back(poses[o.frame].rotation.conjugate() * b);
  }

  double max_parallax = 0.0;
  for (std::size_t i = 0; i < world_dirs.size(); ++i)
    for (std::size_t j = i + 1; j < world_dirs.size(); ++j) {
      const double c = std::clamp(world_dirs[i].dot(world_dirs[j]), -1.0, 1.0);
      max_parallax = std::max(max_parallax, std::acos(c) * 180.0 / M_PI);
    }
  if (max_parallax < min_parallax_deg)
    throw InsufficientParallaxError("triangulate: parallax " + std::to_string(max_parallax) +
                                    " deg below threshold");

  // Stack [b]x (R p + t) = 0 over all observations.
  Eigen::Matrix3d AtA = Eigen::Matrix3d::Zero();
  Eigen::Vector3d Atb = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Se3& T = poses[obs[i].frame];
    const Eigen::Matrix3d S = skew(bearings[i]);
    const Eigen::Matrix3d A = S * T.rotation_matrix();
    const Eigen::Vector3d b = -(S * T.translation);
    AtA.noalias() += A.transpose() * A;
    Atb.noalias() += A.transpose() * b;
  }
  const Eigen::Vector3d point = AtA.ldlt().solve(Atb);
  if (!point.allFinite()) throw InsufficientParallaxError("triangulate: singular system");

  for (const auto& o : obs) {
    if ((poses[o.frame] * point).z() <= 0.0)
      throw NegativeDepthError("triangulate: point behind camera " + std::to_string(o.frame));
  }
  return point;
}

VisualBaResult bundle_adjust_visual(const std::vector<FeatureTrack>& tracks,
                                    std::vector<Se3> poses, const CameraIntrinsics& D,
                                    const VisualBaConfig& cfg) {
  VisualBaResult result;
  const IntrinsicsBlock layout{cfg.tie_focal, D.width, D.height};

  Problem problem;
  const BlockId intr = problem.add_block(layout.pack(D));
  if (!cfg.optimize_intrinsics) problem.set_constant(intr);

  std::vector<BlockId> rot_blocks, trans_blocks;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    rot_blocks.push_back(problem.add_block(quat_to_block(poses[i].rotation),
                                           &quaternion_manifold()));
    trans_blocks.push_back(problem.add_block(poses[i].translation));
    if (i == 0) {
      problem.set_constant(rot_blocks[0]);
      problem.set_constant(trans_blocks[0]);
    }
  }

  if (cfg.anchor_scale_gauge && poses.size() >= 2) {
    std::size_t anchor = 1;
    for (std::size_t i = 2; i < poses.size(); ++i)
      if (poses[i].translation.norm() > poses[anchor].translation.norm()) anchor = i;
    const double target = poses[anchor].translation.norm();
    if (target > 1e-9)
      problem.add_residual(
          std::make_shared<ScaleAnchorResidual>(target, cfg.scale_anchor_sigma),
          {trans_blocks[anchor]});
  }

  struct ActiveTrack {
    int track_index;
    BlockId point_block;
    std::vector<std::shared_ptr<ReprojectionResidual>> residuals;
    std::vector<int> frames;
    std::vector<Eigen::Vector2d> pixels;
  };
  std::vector<ActiveTrack> active;

  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    const auto& track = tracks[ti];
    Eigen::Vector3d initial;
    try {
      initial = triangulate(track, poses, D, cfg.min_parallax_deg);
    } catch (const InsufficientParallaxError&) {
      result.dropped_tracks.push_back({track.point_id, "insufficient_parallax"});
      continue;
    } catch (const NegativeDepthError&) {
      result.dropped_tracks.push_back({track.point_id, "negative_depth"});
      continue;
    }

    std::vector<const TrackObservation*> usable;
    for (const auto& o : track.observations) {
      if ((poses[o.frame] * initial).z() <= 0.0)
        ++result.dropped_observations;
      else
        usable.push_back(&o);
    }
    if (usable.size() < 2) {
      result.dropped_tracks.push_back({track.point_id, "fewer_than_two_usable_observations"});
      continue;
    }

    ActiveTrack at;
    at.track_index = static_cast<int>(ti);
    at.point_block = problem.add_block(initial);
    problem.set_eliminable(at.point_block);
    for (const TrackObservation* o : usable) {
      auto res = std::make_shared<ReprojectionResidual>(o->pixel, o->pixel_cov, layout);
      problem.add_residual(res, {rot_blocks[o->frame], trans_blocks[o->frame], at.point_block,
                                 intr});
      at.residuals.push_back(std::move(res));
      at.frames.push_back(o->frame);
      at.pixels.push_back(o->pixel);
    }
    active.push_back(std::move(at));
  }

  result.report = solve_lm(problem, cfg.solver);

  const CameraIntrinsics D_final = layout.unpack(problem.value(intr));
  result.intrinsics = D_final;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    poses[i].rotation = block_to_quat(problem.value(rot_blocks[i]));
    poses[i].translation = problem.value(trans_blocks[i]);
  }
  result.poses = poses;

  // Per-point covariance from the whitened point Jacobians at the solution.
  double sq_sum = 0.0;
  int n_obs = 0;
  Eigen::VectorXd residual(2);
  std::vector<Eigen::MatrixXd> jacobians;
  for (const auto& at : active) {
    const auto& track = tracks[at.track_index];
    Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();
    bool evaluable = true;
    for (std::size_t k = 0; k < at.residuals.size(); ++k) {
      const int frame = at.frames[k];
      std::vector<const Eigen::VectorXd*> params = {
          &problem.value(rot_blocks[frame]), &problem.value(trans_blocks[frame]),
          &problem.value(at.point_block), &problem.value(intr)};
      jacobians.assign(4, Eigen::MatrixXd());
      jacobians[0].resize(2, 3);
      jacobians[1].resize(2, 3);
      jacobians[2].resize(2, 3);
      jacobians[3].resize(2, layout.size());
      if (!at.residuals[k]->evaluate(params, residual, &jacobians)) {
        evaluable = false;
        break;
      }
      hessian.noalias() += jacobians[2].transpose() * jacobians[2];

      // raw (unwhitened) residual for the pixel RMS
      const Eigen::Vector3d c = poses[frame] * problem.value(at.point_block);
      const auto pixel = project_checked(c, D_final);
      if (pixel) {
        sq_sum += (at.pixels[k] - *pixel).squaredNorm();
        ++n_obs;
      }
    }
    if (!evaluable) {
      result.dropped_tracks.push_back({track.point_id, "behind_camera_at_solution"});
      continue;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(hessian);
    const double lambda_min = eig.eigenvalues()[0];
    const double lambda_max = eig.eigenvalues()[2];
    if (!(lambda_min > cfg.covariance_rank_ratio * std::max(lambda_max, 1e-300))) {
      result.dropped_tracks.push_back({track.point_id, "rank_deficient_covariance"});
      continue;
    }
    VisualPoint point;
    point.position = problem.value(at.point_block);
    point.covariance = eig.eigenvectors() *
                       eig.eigenvalues().cwiseInverse().asDiagonal() *
                       eig.eigenvectors().transpose();
    point.track = track;
    result.points.push_back(std::move(point));
  }
  result.rms_px = n_obs > 0 ? std::sqrt(sq_sum / (2.0 * n_obs)) : 0.0;
  return result;
}

}  // namespace plancalib
