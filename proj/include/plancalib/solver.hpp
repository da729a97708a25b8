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

#include <array>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "plancalib/errors.hpp"

namespace plancalib {

/// Robust loss applied to the squared norm s of a residual block.
/// evaluate(s) returns (rho(s), rho'(s), rho''(s)). For huber(delta):
/// rho(s) = s for sqrt(s) <= delta, else 2 delta sqrt(s) - delta^2, which is
/// continuous with continuous derivative at the knee.
struct RobustLoss {
  enum class Kind { kNone, kHuber };
  Kind kind = Kind::kNone;
  double delta = 1.0;

  static RobustLoss none() { return {}; }
  static RobustLoss huber(double delta);
  std::array<double, 3> evaluate(double squared_norm) const;
};

/// Local parameterization of a parameter block. A null Manifold* means
/// Euclidean (tangent size == ambient size, plus == addition).
class Manifold {
 public:
  virtual ~Manifold() = default;
  virtual int ambient_size() const = 0;
  virtual int tangent_size() const = 0;
  virtual void plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta,
                    Eigen::VectorXd& out) const = 0;
};

/// Unit quaternion stored as [w, x, y, z]; plus(q, delta) = exp(delta) * q,
/// normalized, so the block stays on the manifold after every update.
const Manifold& quaternion_manifold();

using BlockId = int;

/// One residual term. Jacobians are with respect to the *tangent* increment
/// of each attached block, evaluated at zero increment. Return false when the
/// residual is not evaluable at the given parameters (the solver treats the
/// candidate step as rejected).
class ResidualFunction {
 public:
  virtual ~ResidualFunction() = default;
  virtual int dimension() const = 0;
  virtual bool evaluate(const std::vector<const Eigen::VectorXd*>& params,
                        Eigen::VectorXd& residual,
                        std::vector<Eigen::MatrixXd>* jacobians) const = 0;
};

struct SolverConfig {
  int max_iterations = 100;
  int max_accepted_steps = std::numeric_limits<int>::max();
  double initial_lambda = 1e-4;
  double lambda_increase = 10.0;
  double lambda_decrease = 0.1;
  double min_lambda = 1e-12;
  double max_lambda = 1e12;
  double cost_relative_tolerance = 1e-10;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-14;
  double absolute_cost_floor = 1e-18;
  /// Eliminate 3-dof point blocks by Schur complement when there are more of
  /// them than this.
  int schur_point_threshold = 200;
};

enum class Termination {
  kCostTolerance,
  kGradientTolerance,
  kStepTolerance,
  kCostFloor,
  kMaxIterations,
  kMaxAcceptedSteps,
  kLambdaOverflow,
};

const char* termination_name(Termination t);

struct IterationRecord {
  double cost = 0.0;  // candidate cost (double max when not evaluable)
  double lambda = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

struct SolverReport {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  Termination termination = Termination::kMaxIterations;
  std::vector<IterationRecord> trace;

  /// True when the run stopped at a tolerance rather than an iteration cap.
  bool converged() const {
    return termination == Termination::kCostTolerance ||
           termination == Termination::kGradientTolerance ||
           termination == Termination::kStepTolerance ||
           termination == Termination::kCostFloor;
  }
};

/// Nonlinear least-squares problem over parameter blocks; cost is
/// sum over residual blocks of 0.5 * rho(|r|^2).
class Problem {
 public:
  BlockId add_block(Eigen::VectorXd value, const Manifold* manifold = nullptr);
  void set_constant(BlockId id, bool constant = true);
  /// Marks a block as a Schur-eliminable point block (tangent size must be 3).
  void set_eliminable(BlockId id, bool eliminable = true);
  void add_residual(std::shared_ptr<const ResidualFunction> fn, std::vector<BlockId> blocks,
                    RobustLoss loss = RobustLoss::none());

  const Eigen::VectorXd& value(BlockId id) const { return blocks_[id].value; }
  void set_value(BlockId id, Eigen::VectorXd v);
  int block_count() const { return static_cast<int>(blocks_.size()); }
  int residual_count() const { return static_cast<int>(residuals_.size()); }

  /// Total robust cost at the current values. Throws NumericalFailureError
  /// when a residual is not evaluable or not finite.
  double cost() const;

 private:
  friend class LmSolver;
  struct Block {
    Eigen::VectorXd value;
    const Manifold* manifold = nullptr;
    bool constant = false;
    bool eliminable = false;
    int ambient() const { return static_cast<int>(value.size()); }
    int tangent() const;
  };
  struct Residual {
    std::shared_ptr<const ResidualFunction> fn;
    std::vector<BlockId> blocks;
    RobustLoss loss;
  };
  std::vector<Block> blocks_;
  std::vector<Residual> residuals_;
};

/// Levenberg-Marquardt with multiplicative damping of the normal-equations
/// diagonal; lambda x10 on reject, /10 on accept. Accepted-step costs are
/// non-increasing by construction. Throws NumericalFailureError when the
/// initial point is not evaluable or a Jacobian turns non-finite, and
/// SingularNormalEquationsError when the damped system stays unsolvable at
/// the lambda ceiling.
SolverReport solve_lm(Problem& problem, const SolverConfig& config = {});

/// Central finite-difference check of a residual's analytic Jacobians.
/// manifolds[k] == nullptr means Euclidean. Returns the worst entry deviation
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
double check_jacobian(const ResidualFunction& fn, const std::vector<Eigen::VectorXd>& params,
                      const std::vector<const Manifold*>& manifolds, double step = 1e-6);

}  // namespace plancalib
