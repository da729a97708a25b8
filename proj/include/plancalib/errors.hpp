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

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace plancalib {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// geometry
class NonPositiveDepthError : public Error {
 public:
  using Error::Error;
};
class UndistortDivergenceError : public Error {
 public:
  UndistortDivergenceError(const std::string& what, const Eigen::Vector2d& pixel)
      : Error(what), pixel(pixel) {}
  Eigen::Vector2d pixel;
};
class InvalidIntrinsicsError : public Error {
 public:
  using Error::Error;
};

// cloud
class EmptyCloudError : public Error {
 public:
  using Error::Error;
};
class DegenerateNeighborhoodError : public Error {
 public:
  using Error::Error;
};

// lidar_pose
class InsufficientOverlapError : public Error {
 public:
  using Error::Error;
};

// visual_ba
class InsufficientParallaxError : public Error {
 public:
  using Error::Error;
};
class NegativeDepthError : public Error {
 public:
  using Error::Error;
};

// init
class DegenerateMotionError : public Error {
 public:
  using Error::Error;
};

// joint
class NoValidPairsError : public Error {
 public:
  using Error::Error;
};
class DegenerateProblemError : public Error {
 public:
  DegenerateProblemError(const std::string& what, const Eigen::Vector3d& weak_direction,
                         double conditioning_ratio)
      : Error(what), weak_direction(weak_direction), conditioning_ratio(conditioning_ratio) {}
  Eigen::Vector3d weak_direction;
  double conditioning_ratio = 0.0;
};

// solver
class NumericalFailureError : public Error {
 public:
  using Error::Error;
};
class SingularNormalEquationsError : public Error {
 public:
  SingularNormalEquationsError(const std::string& what, int block_id)
      : Error(what), block_id(block_id) {}
  int block_id = -1;
};

// synth
class InvisibleSceneError : public Error {
 public:
  using Error::Error;
};

// io
class ParseError : public Error {
 public:
  using Error::Error;
};
class UnsupportedLayoutError : public Error {
 public:
  using Error::Error;
};
/// Carries every schema violation found in a file, not just the first.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, std::vector<std::string> violations)
      : Error(join(path, violations)), violations(std::move(violations)) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::string& path, const std::vector<std::string>& violations) {
    std::string msg = path + ": " + std::to_string(violations.size()) + " schema violation(s)";
    for (const auto& v : violations) msg += "\n  - " + v;
    return msg;
  }
};

}  // namespace plancalib
