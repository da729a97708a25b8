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
#include <cstdint>
#include <string>
#include <vector>

#include "plancalib/cloud.hpp"
#include "plancalib/geometry.hpp"
#include "plancalib/io.hpp"
#include "plancalib/visual_ba.hpp"

namespace plancalib {

/// Rectangular plane patch in scene coordinates.
struct PlaneSpec {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d u_axis = Eigen::Vector3d::UnitX();  // unit, orthogonal to normal
  double half_u = 1.0;
  double half_v = 1.0;
  std::array<std::uint8_t, 3> color = {200, 200, 200};

  Eigen::Vector3d v_axis() const { return normal.cross(u_axis); }
  Eigen::Vector3d point_at(double a, double b) const {
    return center + a * u_axis + b * v_axis();
  }
};

/// One rig waypoint: position, a point the rig looks at (body z axis), and a
/// roll angle about the viewing direction.
struct Waypoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d look_at = Eigen::Vector3d::UnitZ();
  double roll = 0.0;
};

struct SceneNoise {
  double pixel_sigma = 0.0;     // px
  double lidar_sigma = 0.0;     // m, range noise along the beam
  double outlier_fraction = 0.0;
};

struct SceneSpec {
  std::string name = "custom";
  std::vector<PlaneSpec> planes;
  std::vector<Waypoint> trajectory;  // one per frame, >= 2
  CameraIntrinsics gt_intrinsics;
  Se3 gt_extrinsics;      // camera frame -> LiDAR frame
  double gt_scale = 1.0;  // metric units per SfM unit of the exported copy
  SceneNoise noise;
  double lidar_density = 80.0;  // points per m^2 per scan
  int features_per_plane = 60;
  double feature_margin = 0.08;  // inset from the rectangle border, m
  double lidar_margin = 0.03;
  int min_points_per_frame = 8;
  bool export_lidar_poses = false;  // reference GT LiDAR poses from the manifest
  std::uint64_t seed = 1;

  int frames() const { return static_cast<int>(trajectory.size()); }
};

struct SyntheticDataset {
  SceneSpec spec;
  std::vector<PointCloud> clouds;        // per frame, in that frame's LiDAR coords
  std::vector<FeatureTrack> tracks;      // noisy pixels; covariance filled
  std::vector<Se3> gt_camera_poses;      // camera world -> camera i, metric
  std::vector<Se3> gt_lidar_poses;       // LiDAR world -> LiDAR i, metric
  std::vector<Se3> sfm_camera_poses;     // translations divided by gt_scale
  std::vector<Eigen::Vector3d> gt_points;   // camera world, metric (outliers displaced)
  std::vector<Eigen::Vector3d> sfm_points;  // divided by gt_scale
  std::vector<int> track_plane;          // generating plane per track
  std::vector<bool> track_outlier;
  Se3 scene_from_lidar_world;            // first rig waypoint pose (body -> scene)
  CameraIntrinsics gt_intrinsics;
  Se3 gt_extrinsics;
  double gt_scale = 1.0;

  /// Normal of plane k expressed in the first-camera frame.
  Eigen::Vector3d plane_normal_in_camera_world(int k) const;
};

/// Deterministic generation from the spec (identical seeds give bit-identical
/// datasets). Throws InvisibleSceneError when a camera frame sees fewer than
/// min_points_per_frame tracked points.
SyntheticDataset generate(const SceneSpec& spec);

enum class SceneKind { kCourtyard, kCorridor, kDegenerateZ };

/// Canned scenes: courtyard (4 mutually non-parallel planes), corridor
/// (3 planes, the two walls nearly parallel), degenerate_z (plane normals all
/// orthogonal to the viewing axis, the point-to-plane degenerate case).
SceneSpec default_scene(SceneKind kind);

SceneKind scene_kind_from_name(const std::string& name);

/// Perturbation of the ground-truth calibration into "initial guess" values
/// handed to the pipeline (hand-eye-quality extrinsics, self-calibration-grade
/// intrinsics, and a scale factor applied to the seed scale).
struct InitialPerturbation {
  double rotation_deg = 5.0;
  double translation_m = 0.40;
  double scale_factor = 1.2;
  double focal_factor = 1.02;
  double principal_shift_px = 5.0;
  bool zero_distortion = true;
  std::uint64_t seed = 99;
};

struct PerturbedInitials {
  CameraIntrinsics intrinsics;
  Se3 extrinsics;
  double scale = 1.0;
};

PerturbedInitials perturb_initials(const SyntheticDataset& data,
                                   const InitialPerturbation& perturbation);

/// Exact (unperturbed) initial values, for fixed-point runs.
PerturbedInitials exact_initials(const SyntheticDataset& data);

/// Writes the dataset in the on-disk layout the pipeline loads: manifest.json,
/// clouds/frame_NNN.ply (binary), tracks.json, camera_poses.json (the
/// scale-ambiguous copy), gt_params.json, and lidar_poses.json when the spec
/// asks for it. include_initial_scale controls whether the manifest pins the
/// refinement seed or leaves scale recovery to the linear system.
void save_dataset(const SyntheticDataset& data, const std::filesystem::path& directory,
                  const PerturbedInitials& initials, bool include_ground_truth = true,
                  bool include_initial_scale = true);

/// Flat-color rendering of the scene planes from the given camera frame,
/// using the ground-truth calibration (ray casting against the plane
/// rectangles, nearest hit wins). The colorization oracle.
ImageBuffer render_plane_image(const SyntheticDataset& data, int frame);

}  // namespace plancalib
