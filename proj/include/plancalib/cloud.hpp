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

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "plancalib/errors.hpp"

namespace plancalib {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<float> intensity;  // empty, or one entry per point

  std::size_t size() const { return points.size(); }
  bool has_intensity() const { return !intensity.empty(); }
};

/// Local plane fitted to a point neighborhood. Eigenvalues of the 1/l
/// neighborhood covariance, sorted descending; the normal is the eigenvector
/// of the smallest one.
struct PlanePatch {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();  // [lambda1 >= lambda2 >= lambda3]
  int neighbor_count = 0;
};

/// Exact nearest-neighbor index over a point cloud (balanced k-d tree,
/// median split). Immutable after construction; concurrent queries are safe.
class KdTree {
 public:
  /// Throws EmptyCloudError for an empty cloud.
  explicit KdTree(const PointCloud& cloud);

  struct Neighbor {
    int index = -1;
    double squared_distance = 0.0;
  };

  /// Up to k nearest points within max_radius, sorted by ascending distance.
  std::vector<Neighbor> knn(const Eigen::Vector3d& query, int k,
                            double max_radius = std::numeric_limits<double>::infinity()) const;

  int size() const { return static_cast<int>(points_.size()); }
  const Eigen::Vector3d& point(int index) const { return points_[index]; }

 private:
  struct Node {
    int axis = -1;          // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    int begin = 0, end = 0;  // range into order_ for leaves
  };

  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& query, int k, double& worst,
              std::vector<Neighbor>& heap) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Fits a plane through >= 3 points: centroid = mean, covariance with 1/l
/// normalization, eigen-decomposition of the symmetric 3x3. The normal sign
/// is chosen so it faces the viewpoint when one is given, otherwise so the
/// first nonzero component is positive. Throws DegenerateNeighborhoodError
/// when fewer than 3 points are given or all points coincide.
PlanePatch fit_plane(std::span<const Eigen::Vector3d> neighbors,
                     const std::optional<Eigen::Vector3d>& viewpoint = std::nullopt);

/// Eigenvalue planarity test: true iff lambda2 / max(lambda3, 1e-12) exceeds
/// ratio_threshold.
bool plane_validity(const PlanePatch& patch, double ratio_threshold);

}  // namespace plancalib
