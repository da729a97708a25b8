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
#include "plancalib/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plancalib {

namespace {
constexpr int kLeafSize = 16;
}  // namespace

KdTree::KdTree(const PointCloud& cloud) : points_(cloud.points) {
  if (points_.empty()) throw EmptyCloudError("build_index: empty point cloud");
  for (const auto& p : points_) {
    if (!p.allFinite()) throw EmptyCloudError("build_index: non-finite coordinates");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / kLeafSize + 4);
  root_ = build(0, static_cast<int>(points_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Eigen::Vector3d lo = points_[order_[begin]];
  Eigen::Vector3d hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  nodes_[id].axis = axis;
  nodes_[id].split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node_id, const Eigen::Vector3d& query, int k, double& worst,
                    std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const double d2 = (points_[idx] - query).squaredNorm();
      if (d2 >= worst) continue;
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back({idx, d2});
        std::push_heap(heap.begin(), heap.end(),
                       [](const Neighbor& a, const Neighbor& b) {
                         return a.squared_distance < b.squared_distance;
                       });
      } else {
        std::pop_heap(heap.begin(), heap.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                        return a.squared_distance < b.squared_distance;
                      });
        heap.back() = {idx, d2};
        std::push_heap(heap.begin(), heap.end(),
                       [](const Neighbor& a, const Neighbor& b) {
                         return a.squared_distance < b.squared_distance;
                       });
      }
      if (static_cast<int>(heap.size()) == k) worst = heap.front().squared_distance;
    }
    return;
  }
  const double delta = query[node.axis] - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  search(near, query, k, worst, heap);
  if (delta * delta < worst) search(far, query, k, worst, heap);
}

std::vector<KdTree::Neighbor> KdTree::knn(const Eigen::Vector3d& query, int k,
                                          double max_radius) const {
  std::vector<Neighbor> heap;
  if (k <= 0) return heap;
  heap.reserve(k);
  double worst = max_radius * max_radius;
  if (!std::isfinite(worst)) worst = std::numeric_limits<double>::max();
  search(root_, query, k, worst, heap);
  std::sort(heap.begin(), heap.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.squared_distance < b.squared_distance;
  });
  return heap;
}

PlanePatch fit_plane(std::span<const Eigen::Vector3d> neighbors,
                     const std::optional<Eigen::Vector3d>& viewpoint) {
  const int l = static_cast<int>(neighbors.size());
  if (l < 3) throw DegenerateNeighborhoodError("fit_plane: needs at least 3 points");

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& q : neighbors) centroid += q;
  centroid /= static_cast<double>(l);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& q : neighbors) {
    const Eigen::Vector3d d = q - centroid;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(l);
  if (cov.trace() < 1e-24)
    throw DegenerateNeighborhoodError("fit_plane: all points coincident");

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig;
  eig.computeDirect(cov);  // closed-form for symmetric 3x3, ascending eigenvalues

  PlanePatch patch;
  patch.eigenvalues = Eigen::Vector3d(eig.eigenvalues()[2], eig.eigenvalues()[1],
                                      eig.eigenvalues()[0]);
  patch.centroid = centroid;
  patch.neighbor_count = l;
  Eigen::Vector3d normal = eig.eigenvectors().col(0).normalized();
  if (viewpoint) {
    if (normal.dot(*viewpoint - centroid) < 0.0) normal = -normal;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(normal[i]) > 1e-12) {
        if (normal[i] < 0.0) normal = -normal;
        break;
      }
    }
  }
  patch.normal = normal;
  return patch;
}

bool plane_validity(const PlanePatch& patch, double ratio_threshold) {
  const double lambda2 = patch.eigenvalues[1];
  const double lambda3 = std::max(patch.eigenvalues[2], 1e-12);
  return lambda2 / lambda3 > ratio_threshold;
}

}  // namespace plancalib
