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
#include "plancalib/solver.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "plancalib/geometry.hpp"

namespace plancalib {

RobustLoss RobustLoss::huber(double delta) {
  if (!(delta > 0.0)) throw Error("huber loss requires delta > 0");
  RobustLoss loss;
  loss.kind = Kind::kHuber;
  loss.delta = delta;
  return loss;
}

std::array<double, 3> RobustLoss::evaluate(double s) const {
  if (kind == Kind::kNone || s <= delta * delta) return {s, 1.0, 0.0};
  const double sr = std::sqrt(s);
  return {2.0 * delta * sr - delta * delta, delta / sr, -0.5 * delta / (s * sr)};
}

namespace {

class QuaternionManifold final : public Manifold {
 public:
  int ambient_size() const override { return 4; }
  int tangent_size() const override { return 3; }
  void plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta,
            Eigen::VectorXd& out) const override {
    const Eigen::Quaterniond q(x[0], x[1], x[2], x[3]);
    const Eigen::Quaterniond r = (quat_exp(Eigen::Vector3d(delta)) * q).normalized();
    out.resize(4);
    out << r.w(), r.x(), r.y(), r.z();
  }
};

}  // namespace

const Manifold& quaternion_manifold() {
  static const QuaternionManifold instance;
  return instance;
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kCostTolerance: return "cost_tolerance";
    case Termination::kGradientTolerance: return "gradient_tolerance";
    case Termination::kStepTolerance: return "step_tolerance";
    case Termination::kCostFloor: return "cost_floor";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kMaxAcceptedSteps: return "max_accepted_steps";
    case Termination::kLambdaOverflow: return "lambda_overflow";
  }
  return "unknown";
}

int Problem::Block::tangent() const { return manifold ? manifold->tangent_size() : ambient(); }

BlockId Problem::add_block(Eigen::VectorXd value, const Manifold* manifold) {
  if (manifold && manifold->ambient_size() != value.size())
    throw Error("add_block: value size does not match manifold");
  blocks_.push_back({std::move(value), manifold, false, false});
  return static_cast<BlockId>(blocks_.size()) - 1;
}

void Problem::set_constant(BlockId id, bool constant) { blocks_.at(id).constant = constant; }

void Problem::set_eliminable(BlockId id, bool eliminable) {
  if (eliminable && blocks_.at(id).tangent() != 3)
    throw Error("set_eliminable: only 3-dof blocks are eliminable");
  blocks_.at(id).eliminable = eliminable;
}

void Problem::add_residual(std::shared_ptr<const ResidualFunction> fn,
                           std::vector<BlockId> blocks, RobustLoss loss) {
  for (BlockId id : blocks) blocks_.at(id);
  residuals_.push_back({std::move(fn), std::move(blocks), loss});
}

void Problem::set_value(BlockId id, Eigen::VectorXd v) {
  if (v.size() != blocks_.at(id).value.size()) throw Error("set_value: size mismatch");
  blocks_[id].value = std::move(v);
}

double Problem::cost() const {
  double total = 0.0;
  std::vector<const Eigen::VectorXd*> params;
  Eigen::VectorXd residual;
  for (const auto& res : residuals_) {
    params.clear();
    for (BlockId id : res.blocks) params.push_back(&blocks_[id].value);
    residual.resize(res.fn->dimension());
    if (!res.fn->evaluate(params, residual, nullptr) || !residual.allFinite())
      throw NumericalFailureError("cost: residual not evaluable at current values");
    total += 0.5 * res.loss.evaluate(residual.squaredNorm())[0];
  }
  if (!std::isfinite(total)) throw NumericalFailureError("cost: non-finite total cost");
  return total;
}

class LmSolver {
 public:
  LmSolver(Problem& problem, const SolverConfig& cfg) : p_(problem), cfg_(cfg) { index(); }

  SolverReport run();

 private:
  struct VarBlock {
    BlockId id;
    int offset;    // tangent offset: cameras within [0, cam_dim_), points within point part
    int tangent;
    bool point;
    int point_index;  // index into point arrays, -1 for camera blocks
  };

  void index();
  std::optional<double> evaluate_cost(const std::vector<Eigen::VectorXd>& values) const;
  void linearize(const std::vector<Eigen::VectorXd>& values);
  bool compute_step(double lambda, Eigen::VectorXd& delta_cam,
                    std::vector<Eigen::Vector3d>& delta_pts) const;
  void apply_step(const std::vector<Eigen::VectorXd>& values, const Eigen::VectorXd& delta_cam,
                  const std::vector<Eigen::Vector3d>& delta_pts,
                  std::vector<Eigen::VectorXd>& out) const;
  BlockId weakest_block() const;

  Problem& p_;
  const SolverConfig& cfg_;

  std::vector<int> var_index_;       // block id -> index into vars_, -1 when constant
  std::vector<VarBlock> vars_;
  std::vector<int> point_blocks_;    // var indices of schur points
  int cam_dim_ = 0;
  int point_count_ = 0;
  bool use_schur_ = false;
  int total_dim_ = 0;                // cam_dim_ + 3 * point_count_ (dense layout)

  // Cached linearization at the last accepted point.
  struct ResidualCache {
    Eigen::VectorXd residual;                 // robust-scaled
    std::vector<Eigen::MatrixXd> jacobians;   // robust-scaled, one per attached block
  };
  std::vector<ResidualCache> cache_;
  // Dense normal equations.
  Eigen::MatrixXd H_;
  Eigen::VectorXd g_;
  // Schur blocks.
  Eigen::MatrixXd A_;
  Eigen::VectorXd g_cam_;
  std::vector<Eigen::MatrixXd> B_;            // cam_dim_ x 3 per point
  std::vector<Eigen::Matrix3d> C_;
  std::vector<Eigen::Vector3d> g_pt_;
  double gradient_inf_norm_ = 0.0;
};

void LmSolver::index() {
  var_index_.assign(p_.blocks_.size(), -1);
  int n_points = 0;
  for (const auto& b : p_.blocks_)
    if (!b.constant && b.eliminable) ++n_points;

  bool schur_ok = n_points > cfg_.schur_point_threshold;
  if (schur_ok) {
    for (const auto& res : p_.residuals_) {
      int touched = 0;
      for (BlockId id : res.blocks) {
        const auto& b = p_.blocks_[id];
        if (!b.constant && b.eliminable) ++touched;
      }
      if (touched > 1) {
        schur_ok = false;
        break;
      }
    }
  }
  use_schur_ = schur_ok;

  int cam_offset = 0;
  int pt_index = 0;
  for (std::size_t i = 0; i < p_.blocks_.size(); ++i) {
    const auto& b = p_.blocks_[i];
    if (b.constant) continue;
    VarBlock vb;
    vb.id = static_cast<BlockId>(i);
    vb.tangent = b.tangent();
    vb.point = b.eliminable;
    if (vb.point) {
      vb.point_index = pt_index++;
      vb.offset = -1;  // assigned after cam_dim_ is known
    } else {
      vb.point_index = -1;
      vb.offset = cam_offset;
      cam_offset += vb.tangent;
    }
    var_index_[i] = static_cast<int>(vars_.size());
    vars_.push_back(vb);
  }
  cam_dim_ = cam_offset;
  point_count_ = pt_index;
  total_dim_ = cam_dim_ + 3 * point_count_;
  for (auto& vb : vars_) {
    if (vb.point) vb.offset = cam_dim_ + 3 * vb.point_index;
    if (vb.point) point_blocks_.push_back(var_index_[vb.id]);
  }
}

std::optional<double> LmSolver::evaluate_cost(const std::vector<Eigen::VectorXd>& values) const {
  double total = 0.0;
  std::vector<const Eigen::VectorXd*> params;
  Eigen::VectorXd residual;
  for (const auto& res : p_.residuals_) {
    params.clear();
    for (BlockId id : res.blocks) params.push_back(&values[id]);
    residual.resize(res.fn->dimension());
    if (!res.fn->evaluate(params, residual, nullptr) || !residual.allFinite())
      return std::nullopt;
    total += 0.5 * res.loss.evaluate(residual.squaredNorm())[0];
  }
  if (!std::isfinite(total)) return std::nullopt;
  return total;
}

void LmSolver::linearize(const std::vector<Eigen::VectorXd>& values) {
  cache_.resize(p_.residuals_.size());
  if (use_schur_) {
    A_.setZero(cam_dim_, cam_dim_);
    g_cam_.setZero(cam_dim_);
    B_.assign(point_count_, Eigen::MatrixXd::Zero(cam_dim_, 3));
    C_.assign(point_count_, Eigen::Matrix3d::Zero());
    g_pt_.assign(point_count_, Eigen::Vector3d::Zero());
  } else {
    H_.setZero(total_dim_, total_dim_);
    g_.setZero(total_dim_);
  }

  std::vector<const Eigen::VectorXd*> params;
  for (std::size_t ri = 0; ri < p_.residuals_.size(); ++ri) {
    const auto& res = p_.residuals_[ri];
    auto& cache = cache_[ri];
    params.clear();
    for (BlockId id : res.blocks) params.push_back(&values[id]);
    cache.residual.resize(res.fn->dimension());
    cache.jacobians.resize(res.blocks.size());
    for (std::size_t k = 0; k < res.blocks.size(); ++k)
      cache.jacobians[k].resize(res.fn->dimension(), p_.blocks_[res.blocks[k]].tangent());
    if (!res.fn->evaluate(params, cache.residual, &cache.jacobians))
      throw NumericalFailureError("linearize: residual not evaluable at accepted point");
    if (!cache.residual.allFinite())
      throw NumericalFailureError("linearize: non-finite residual");
    for (std::size_t k = 0; k < res.blocks.size(); ++k) {
      if (p_.blocks_[res.blocks[k]].constant) continue;
      if (!cache.jacobians[k].allFinite())
        throw NumericalFailureError("linearize: non-finite Jacobian");
    }

    const double s = cache.residual.squaredNorm();
    const double scale = std::sqrt(res.loss.evaluate(s)[1]);
    if (scale != 1.0) {
      cache.residual *= scale;
      for (auto& J : cache.jacobians) J *= scale;
    }

    // Scatter into the normal equations.
    for (std::size_t ka = 0; ka < res.blocks.size(); ++ka) {
      const int va = var_index_[res.blocks[ka]];
      if (va < 0) continue;
      const VarBlock& a = vars_[va];
      const Eigen::MatrixXd& Ja = cache.jacobians[ka];
      if (use_schur_) {
        if (a.point) {
          C_[a.point_index].noalias() += Ja.transpose() * Ja;
          g_pt_[a.point_index].noalias() -= Ja.transpose() * cache.residual;
        } else {
          g_cam_.segment(a.offset, a.tangent).noalias() -= Ja.transpose() * cache.residual;
        }
        for (std::size_t kb = 0; kb < res.blocks.size(); ++kb) {
          const int vb = var_index_[res.blocks[kb]];
          if (vb < 0) continue;
          const VarBlock& b = vars_[vb];
          const Eigen::MatrixXd& Jb = cache.jacobians[kb];
          if (!a.point && !b.point) {
            A_.block(a.offset, b.offset, a.tangent, b.tangent).noalias() +=
                Ja.transpose() * Jb;
          } else if (!a.point && b.point) {
            B_[b.point_index].middleRows(a.offset, a.tangent).noalias() +=
                Ja.transpose() * Jb;
          }
          // point-point cross terms cannot occur (at most one point per residual)
        }
      } else {
        g_.segment(a.offset, a.tangent).noalias() -= Ja.transpose() * cache.residual;
        for (std::size_t kb = 0; kb < res.blocks.size(); ++kb) {
          const int vb = var_index_[res.blocks[kb]];
          if (vb < 0) continue;
          const VarBlock& b = vars_[vb];
          H_.block(a.offset, b.offset, a.tangent, b.tangent).noalias() +=
              Ja.transpose() * cache.jacobians[kb];
        }
      }
    }
  }

  if (use_schur_) {
    gradient_inf_norm_ = g_cam_.size() ? g_cam_.lpNorm<Eigen::Infinity>() : 0.0;
    for (const auto& gp : g_pt_)
      gradient_inf_norm_ = std::max(gradient_inf_norm_, gp.lpNorm<Eigen::Infinity>());
  } else {
    gradient_inf_norm_ = g_.size() ? g_.lpNorm<Eigen::Infinity>() : 0.0;
  }
}

namespace {
double damped_diagonal(double h, double lambda) {
  const double clamped = std::clamp(h, 1e-12, 1e32);
  return h + lambda * clamped;
}
}  // namespace

bool LmSolver::compute_step(double lambda, Eigen::VectorXd& delta_cam,
                            std::vector<Eigen::Vector3d>& delta_pts) const {
  if (use_schur_) {
    Eigen::MatrixXd S = A_;
    for (int k = 0; k < cam_dim_; ++k) S(k, k) = damped_diagonal(A_(k, k), lambda);
    Eigen::VectorXd rhs = g_cam_;
    std::vector<Eigen::Matrix3d> C_inv(point_count_);
    for (int j = 0; j < point_count_; ++j) {
      Eigen::Matrix3d Cd = C_[j];
      for (int k = 0; k < 3; ++k) Cd(k, k) = damped_diagonal(C_[j](k, k), lambda);
      C_inv[j] = Cd.inverse();
      if (!C_inv[j].allFinite()) return false;
      S.noalias() -= B_[j] * C_inv[j] * B_[j].transpose();
      rhs.noalias() -= B_[j] * (C_inv[j] * g_pt_[j]);
    }
    if (!S.allFinite() || !rhs.allFinite()) return false;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success) return false;
    delta_cam = ldlt.solve(rhs);
    if (!delta_cam.allFinite()) return false;
    delta_pts.resize(point_count_);
    for (int j = 0; j < point_count_; ++j) {
      delta_pts[j] = C_inv[j] * (g_pt_[j] - B_[j].transpose() * delta_cam);
      if (!delta_pts[j].allFinite()) return false;
    }
    return true;
  }

  Eigen::MatrixXd Hd = H_;
  for (int k = 0; k < total_dim_; ++k) Hd(k, k) = damped_diagonal(H_(k, k), lambda);
  if (!Hd.allFinite() || !g_.allFinite()) return false;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
  if (ldlt.info() != Eigen::Success) return false;
  delta_cam = ldlt.solve(g_);
  if (!delta_cam.allFinite()) return false;
  delta_pts.clear();
  return true;
}

void LmSolver::apply_step(const std::vector<Eigen::VectorXd>& values,
                          const Eigen::VectorXd& delta_cam,
                          const std::vector<Eigen::Vector3d>& delta_pts,
                          std::vector<Eigen::VectorXd>& out) const {
  out = values;
  for (const auto& vb : vars_) {
    Eigen::VectorXd delta;
    if (use_schur_ && vb.point) {
      delta = delta_pts[vb.point_index];
    } else {
      delta = delta_cam.segment(vb.offset, vb.tangent);
    }
    const auto& block = p_.blocks_[vb.id];
    if (block.manifold) {
      block.manifold->plus(values[vb.id], delta, out[vb.id]);
    } else {
      out[vb.id] = values[vb.id] + delta;
    }
  }
}

BlockId LmSolver::weakest_block() const {
  BlockId worst = vars_.empty() ? -1 : vars_.front().id;
  double least = std::numeric_limits<double>::max();
  for (const auto& vb : vars_) {
    double diag_max = 0.0;
    for (int k = 0; k < vb.tangent; ++k) {
      double h;
      if (use_schur_ && vb.point)
        h = C_[vb.point_index](k, k);
      else if (use_schur_)
        h = A_(vb.offset + k, vb.offset + k);
      else
        h = H_(vb.offset + k, vb.offset + k);
      diag_max = std::max(diag_max, std::abs(h));
    }
    if (diag_max < least) {
      least = diag_max;
      worst = vb.id;
    }
  }
  return worst;
}

SolverReport LmSolver::run() {
  SolverReport report;
  std::vector<Eigen::VectorXd> values(p_.blocks_.size());
  for (std::size_t i = 0; i < p_.blocks_.size(); ++i) values[i] = p_.blocks_[i].value;

  const auto initial = evaluate_cost(values);
  if (!initial) throw NumericalFailureError("solve_lm: initial point not evaluable");
  double cost = *initial;
  report.initial_cost = cost;
  report.final_cost = cost;
  report.termination = Termination::kMaxIterations;

  if (vars_.empty()) {
    report.termination = Termination::kGradientTolerance;
    return report;
  }

  double lambda = cfg_.initial_lambda;
  bool needs_linearize = true;
  Eigen::VectorXd delta_cam;
  std::vector<Eigen::Vector3d> delta_pts;
  std::vector<Eigen::VectorXd> candidate;

  while (static_cast<int>(report.trace.size()) < cfg_.max_iterations) {
    if (needs_linearize) {
      linearize(values);
      needs_linearize = false;
      if (gradient_inf_norm_ < cfg_.gradient_tolerance) {
        report.termination = Termination::kGradientTolerance;
        break;
      }
    }

    if (!compute_step(lambda, delta_cam, delta_pts)) {
      report.trace.push_back({std::numeric_limits<double>::max(), lambda, 0.0, false});
      lambda *= cfg_.lambda_increase;
      if (lambda > cfg_.max_lambda)
        throw SingularNormalEquationsError("solve_lm: normal equations unsolvable",
                                           weakest_block());
      continue;
    }

    double step_norm = delta_cam.norm();
    for (const auto& d : delta_pts) step_norm = std::hypot(step_norm, d.norm());

    apply_step(values, delta_cam, delta_pts, candidate);
    const auto new_cost = evaluate_cost(candidate);

    if (new_cost && *new_cost <= cost) {
      values.swap(candidate);
      for (const auto& vb : vars_) p_.blocks_[vb.id].value = values[vb.id];
      ++report.accepted_steps;
      report.trace.push_back({*new_cost, lambda, step_norm, true});
      const double change = cost - *new_cost;
      const double rel_change = change / std::max(cost, 1e-300);
      cost = *new_cost;
      report.final_cost = cost;
      lambda = std::max(lambda * cfg_.lambda_decrease, cfg_.min_lambda);
      needs_linearize = true;

      if (cost < cfg_.absolute_cost_floor) {
        report.termination = Termination::kCostFloor;
        break;
      }
      if (rel_change < cfg_.cost_relative_tolerance) {
        report.termination = Termination::kCostTolerance;
        break;
      }
      if (step_norm < cfg_.step_tolerance) {
        report.termination = Termination::kStepTolerance;
        break;
      }
      if (report.accepted_steps >= cfg_.max_accepted_steps) {
        report.termination = Termination::kMaxAcceptedSteps;
        break;
      }
    } else {
      report.trace.push_back(
          {new_cost ? *new_cost : std::numeric_limits<double>::max(), lambda, step_norm, false});
      lambda *= cfg_.lambda_increase;
      if (lambda > cfg_.max_lambda) {
        report.termination = Termination::kLambdaOverflow;
        break;
      }
    }
  }

  report.iterations = static_cast<int>(report.trace.size());
  double check = report.initial_cost;
  for (const auto& it : report.trace) {
    if (!it.accepted) continue;
    if (it.cost > check)
      throw NumericalFailureError("solve_lm: accepted cost increased");
    check = it.cost;
  }
  return report;
}

SolverReport solve_lm(Problem& problem, const SolverConfig& config) {
  LmSolver solver(problem, config);
  return solver.run();
}

double check_jacobian(const ResidualFunction& fn, const std::vector<Eigen::VectorXd>& params,
                      const std::vector<const Manifold*>& manifolds, double step) {
  if (params.size() != manifolds.size())
    throw Error("check_jacobian: params/manifolds size mismatch");
  const int dim = fn.dimension();
  std::vector<const Eigen::VectorXd*> ptrs;
  for (const auto& p : params) ptrs.push_back(&p);

  Eigen::VectorXd residual(dim);
  std::vector<Eigen::MatrixXd> analytic(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const int tangent =
        manifolds[k] ? manifolds[k]->tangent_size() : static_cast<int>(params[k].size());
    analytic[k].resize(dim, tangent);
  }
  if (!fn.evaluate(ptrs, residual, &analytic))
    throw NumericalFailureError("check_jacobian: residual not evaluable");

  double worst = 0.0;
  std::vector<Eigen::VectorXd> work = params;
  Eigen::VectorXd r_plus(dim), r_minus(dim);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const int tangent = static_cast<int>(analytic[k].cols());
    std::vector<const Eigen::VectorXd*> wptrs;
    for (const auto& p : work) wptrs.push_back(&p);
    for (int d = 0; d < tangent; ++d) {
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(tangent);
      delta[d] = step;
      if (manifolds[k])
        manifolds[k]->plus(params[k], delta, work[k]);
      else
        work[k] = params[k] + delta;
      if (!fn.evaluate(wptrs, r_plus, nullptr))
        throw NumericalFailureError("check_jacobian: residual not evaluable at +step");
      delta[d] = -step;
      if (manifolds[k])
        manifolds[k]->plus(params[k], delta, work[k]);
      else
        work[k] = params[k] + delta;
      if (!fn.evaluate(wptrs, r_minus, nullptr))
        throw NumericalFailureError("check_jacobian: residual not evaluable at -step");
      work[k] = params[k];

      const Eigen::VectorXd numeric = (r_plus - r_minus) / (2.0 * step);
      for (int r = 0; r < dim; ++r) {
        const double a = analytic[k](r, d);
        const double n = numeric[r];
        const double denom = std::max({1.0, std::abs(a), std::abs(n)});
        worst = std::max(worst, std::abs(a - n) / denom);
      }
    }
  }
  return worst;
}

}  // namespace plancalib
