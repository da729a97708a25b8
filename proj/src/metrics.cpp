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
#include "plancalib/metrics.hpp"

#include <cmath>
#include <mutex>
#include <vector>

#include "plancalib/parallel.hpp"

namespace plancalib {

ExtrinsicError extrinsic_error(const Se3& estimate, const Se3& gt) {
  const Eigen::Matrix3d R = estimate.rotation_matrix() * gt.rotation_matrix().transpose();
  const double c = std::clamp(0.5 * R.trace() - 0.5, -1.0, 1.0);
  ExtrinsicError err;
  err.rotation_deg = std::acos(c) * 180.0 / M_PI;
  err.translation_cm = (estimate.translation - gt.translation).norm() * 100.0;
  return err;
}

double intrinsic_error(const CameraIntrinsics& estimate, const CameraIntrinsics& gt, int stride,
                       int threads) {
  if (gt.width != estimate.width || gt.height != estimate.height)
    throw Error("intrinsic_error: image sizes differ");
  if (stride < 1) throw Error("intrinsic_error: stride must be >= 1");

  std::vector<int> us, vs;
  for (int u = 1; u <= gt.width; u += stride) us.push_back(u);
  for (int v = 1; v <= gt.height; v += stride) vs.push_back(v);

  // Per-row Kahan sums, combined in row order so the result is independent of
  // the thread count.
  std::vector<double> row_sum(vs.size(), 0.0);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  parallel_for(static_cast<int>(vs.size()), threads, [&](int begin, int end) {
    try {
      for (int r = begin; r < end; ++r) {
        double sum = 0.0, comp = 0.0;
        for (const int u : us) {
          const Eigen::Vector2d pixel(u, vs[r]);
          const Eigen::Vector3d bearing = unproject(pixel, gt);
          const double term = (project(bearing, estimate) - pixel).norm();
          const double y = term - comp;
          const double t = sum + y;
          comp = (t - sum) - y;
          sum = t;
        }
        row_sum[r] = sum;
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  double total = 0.0, comp = 0.0;
  for (const double s : row_sum) {
    const double y = s - comp;
    const double t = total + y;
    comp = (t - total) - y;
    total = t;
  }
  return total / (static_cast<double>(us.size()) * static_cast<double>(vs.size()));
}

}  // namespace plancalib
