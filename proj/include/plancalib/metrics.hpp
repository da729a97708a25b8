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

#include "plancalib/geometry.hpp"

namespace plancalib {

struct CalibrationError {
  double rotation_deg = 0.0;
  double translation_cm = 0.0;
  double intrinsic_px = 0.0;
};

struct ExtrinsicError {
  double rotation_deg = 0.0;
  double translation_cm = 0.0;
};

/// Rotation error arccos((tr(R* Rgt^T) - 1)/2) in degrees and translation
/// error |t* - tgt| in centimeters.
ExtrinsicError extrinsic_error(const Se3& estimate, const Se3& gt);

/// Mean reprojection displacement over the pixel grid:
/// (1/wh) sum_u sum_v |project(unproject([u,v], gt), est) - [u,v]| with
/// (u,v) in {1..w} x {1..h}. stride > 1 subsamples the grid in both
/// directions (equivalent within ~0.01 px on smooth distortion fields).
/// Propagates UndistortDivergenceError with the failing pixel.
double intrinsic_error(const CameraIntrinsics& estimate, const CameraIntrinsics& gt,
                       int stride = 1, int threads = 1);

}  // namespace plancalib
