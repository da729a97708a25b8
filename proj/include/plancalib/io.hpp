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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plancalib/cloud.hpp"
#include "plancalib/geometry.hpp"
#include "plancalib/visual_ba.hpp"

namespace plancalib {

// ---------------------------------------------------------------------------
// Point clouds (PLY, ASCII and binary little-endian)

/// Accepts float32/float64 x, y, z and an optional intensity property;
/// rejects any other property or non-empty element (UnsupportedLayoutError
/// names the offender). Truncated data raises ParseError with the expected
/// count.
PointCloud load_cloud(const std::filesystem::path& path);

/// Binary little-endian by default (double x y z, float intensity), which
/// round-trips the in-memory values bit-exactly. ASCII mode prints 17
/// significant digits.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                bool binary = true);

// ---------------------------------------------------------------------------
// KITTI adapters (optional ingestion path; no data bundled)

/// velodyne .bin: packed float32 x, y, z, intensity records.
PointCloud load_kitti_bin(const std::filesystem::path& path);

struct KittiCalib {
  CameraIntrinsics intrinsics;  // from P2 (fx, fy, cx, cy; distortion zero)
  Se3 cam_from_velo;            // from Tr
};
KittiCalib load_kitti_calib(const std::filesystem::path& path, int image_width,
                            int image_height);

// ---------------------------------------------------------------------------
// Images (PPM P6/P3) and colorization

struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height, row-major

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
  }
};

ImageBuffer load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageBuffer& image, const std::filesystem::path& path);

struct ColoredCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<bool> colored;

  int colored_count() const;
};

/// Projects each LiDAR point through camera_from_lidar and the intrinsics and
/// takes the nearest pixel's color; points behind the camera or out of bounds
/// stay uncolored.
ColoredCloud colorize(const PointCloud& cloud, const ImageBuffer& image,
                      const Se3& camera_from_lidar, const CameraIntrinsics& D);

/// PLY with double x y z and uchar red green blue; uncolored points are not
/// exported.
void save_colored_cloud(const ColoredCloud& cloud, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Structured text (JSON, versioned, unknown fields rejected)

/// Rows of (qw, qx, qy, qz, tx, ty, tz).
std::vector<Se3> load_poses(const std::filesystem::path& path);
void save_poses(const std::vector<Se3>& poses, const std::filesystem::path& path);

/// point_id -> [(frame, u, v, sigma)] records; sigma defaults to 1 px.
std::vector<FeatureTrack> load_tracks(const std::filesystem::path& path);
void save_tracks(const std::vector<FeatureTrack>& tracks, const std::filesystem::path& path);

struct CalibratedParams {
  CameraIntrinsics intrinsics;
  Se3 extrinsics;  // camera frame -> LiDAR frame
};
CalibratedParams load_params(const std::filesystem::path& path);
void save_params(const CalibratedParams& params, const std::filesystem::path& path);

struct GroundTruthBlock {
  CameraIntrinsics intrinsics;
  Se3 extrinsics;
  double scale = 1.0;
};

struct DatasetManifest {
  int image_width = 0;
  int image_height = 0;
  std::vector<std::string> cloud_files;  // one per frame, relative to the manifest
  std::string tracks_file;
  std::string camera_poses_file;
  std::optional<std::string> lidar_poses_file;
  CameraIntrinsics initial_intrinsics;   // width/height filled from the manifest
  Se3 initial_extrinsics;
  std::optional<double> initial_scale;   // absent: recover via the linear system
  std::optional<GroundTruthBlock> ground_truth;
};

/// Validates the whole schema and throws SchemaError listing every violation,
/// not just the first. File references are checked to resolve.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace plancalib
