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
#include "plancalib/synth.hpp"

#include <cmath>
#include <random>

namespace plancalib {

namespace {

Se3 waypoint_pose(const Waypoint& wp) {
  // Body frame: z toward look_at, y roughly "down" (+y of the scene), then
  // rolled about z.
  Eigen::Vector3d z = wp.look_at - wp.position;
  if (z.norm() < 1e-9) throw InvisibleSceneError("waypoint looks at its own position");
  z.normalize();
  Eigen::Vector3d down(0.0, 1.0, 0.0);
  if (std::abs(down.dot(z)) > 0.99) down = Eigen::Vector3d(1.0, 0.0, 0.0);
  const Eigen::Vector3d x = down.cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  Se3 pose;  // body -> scene
  pose.rotation = Eigen::Quaterniond(R) * quat_exp(Eigen::Vector3d(0.0, 0.0, wp.roll));
  pose.rotation.normalize();
  pose.translation = wp.position;
  return pose;
}

void validate(const SceneSpec& spec) {
  if (spec.planes.empty()) throw Error("scene spec: needs at least one plane");
  if (spec.frames() < 2) throw Error("scene spec: needs at least two frames");
  if (spec.noise.pixel_sigma < 0.0 || spec.noise.lidar_sigma < 0.0)
    throw Error("scene spec: noise sigmas must be non-negative");
  if (spec.noise.outlier_fraction < 0.0 || spec.noise.outlier_fraction >= 1.0)
    throw Error("scene spec: outlier fraction must be in [0, 1)");
  if (!(spec.gt_scale > 0.0)) throw Error("scene spec: gt_scale must be positive");
  spec.gt_intrinsics.validate();
  for (const auto& plane : spec.planes) {
    if (std::abs(plane.normal.norm() - 1.0) > 1e-9)
      throw Error("scene spec: plane normal must be unit length");
    if (std::abs(plane.normal.dot(plane.u_axis)) > 1e-9)
      throw Error("scene spec: plane u_axis must be orthogonal to the normal");
  }
}

}  // namespace

Eigen::Vector3d SyntheticDataset::plane_normal_in_camera_world(int k) const {
  // scene -> LiDAR world -> camera world rotations
  const Eigen::Quaterniond scene_to_cw =
      (gt_extrinsics.rotation.conjugate() * scene_from_lidar_world.rotation.conjugate())
          .normalized();
  return scene_to_cw * spec.planes[k].normal;
}

SyntheticDataset generate(const SceneSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Outlier decisions and displacements draw from a separate stream so a
  // salted dataset shares the base geometry and noise of the clean one.
  std::mt19937_64 outlier_rng(spec.seed ^ 0x6f75746cULL);
  std::uniform_real_distribution<double> outlier_unit(-1.0, 1.0);

  SyntheticDataset data;
  data.spec = spec;
  data.gt_intrinsics = spec.gt_intrinsics;
  data.gt_extrinsics = spec.gt_extrinsics;
  data.gt_scale = spec.gt_scale;

  const int n = spec.frames();
  std::vector<Se3> body_to_scene(n);
  for (int i = 0; i < n; ++i) body_to_scene[i] = waypoint_pose(spec.trajectory[i]);
  data.scene_from_lidar_world = body_to_scene[0];

  const Se3 E = spec.gt_extrinsics;
  const Se3 E_inv = E.inverse();
  data.gt_lidar_poses.resize(n);
  data.gt_camera_poses.resize(n);
  data.sfm_camera_poses.resize(n);
  for (int i = 0; i < n; ++i) {
    if (i == 0) {
      data.gt_lidar_poses[0] = Se3::identity();
      data.gt_camera_poses[0] = Se3::identity();
    } else {
      data.gt_lidar_poses[i] = body_to_scene[i].inverse() * body_to_scene[0];
      data.gt_camera_poses[i] = E_inv * data.gt_lidar_poses[i] * E;
    }
    data.sfm_camera_poses[i] = data.gt_camera_poses[i];
    data.sfm_camera_poses[i].translation /= spec.gt_scale;
  }
  const Se3 scene_to_camera_world = E_inv * body_to_scene[0].inverse();

  // Feature points on the planes, with a share of displaced outlier tracks.
  const auto& D = spec.gt_intrinsics;
  int next_point_id = 0;
  std::vector<int> per_frame_count(n, 0);
  for (int k = 0; k < static_cast<int>(spec.planes.size()); ++k) {
    const PlaneSpec& plane = spec.planes[k];
    for (int f = 0; f < spec.features_per_plane; ++f) {
      const double a = unit(rng) * (plane.half_u - spec.feature_margin);
      const double b = unit(rng) * (plane.half_v - spec.feature_margin);
      Eigen::Vector3d p_scene = plane.point_at(a, b);

      const bool outlier =
          std::uniform_real_distribution<double>(0.0, 1.0)(outlier_rng) <
          spec.noise.outlier_fraction;
      if (outlier) {
        // Displace along the plane normal, away from every other plane.
        for (int attempt = 0; attempt < 20; ++attempt) {
          const double sign = outlier_unit(outlier_rng) < 0.0 ? -1.0 : 1.0;
          const double magnitude = 0.6 + 0.6 * std::abs(outlier_unit(outlier_rng));
          const Eigen::Vector3d candidate = p_scene + sign * magnitude * plane.normal;
          bool clear = true;
          for (const auto& other : spec.planes) {
            if (std::abs(other.normal.dot(candidate - other.center)) < 0.4) {
              clear = false;
              break;
            }
          }
          if (clear || attempt == 19) {
            p_scene = candidate;
            break;
          }
        }
      }

      const Eigen::Vector3d p_cam_world = scene_to_camera_world * p_scene;
      FeatureTrack track;
      track.point_id = next_point_id;
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d p_cam = data.gt_camera_poses[i] * p_cam_world;
        const auto pixel = project_checked(p_cam, D);
        if (!pixel) continue;
        if (pixel->x() < 1.0 || pixel->x() > D.width - 1.0 || pixel->y() < 1.0 ||
            pixel->y() > D.height - 1.0)
          continue;
        TrackObservation obs;
        obs.frame = i;
        obs.pixel = *pixel;
        if (spec.noise.pixel_sigma > 0.0) {
          obs.pixel.x() += spec.noise.pixel_sigma * gauss(rng);
          obs.pixel.y() += spec.noise.pixel_sigma * gauss(rng);
        }
        const double sigma = spec.noise.pixel_sigma > 0.0 ? spec.noise.pixel_sigma : 1.0;
        obs.pixel_cov = sigma * sigma * Eigen::Matrix2d::Identity();
        track.observations.push_back(obs);
      }
      if (track.observations.size() < 2) continue;
      for (const auto& obs : track.observations) ++per_frame_count[obs.frame];
      data.tracks.push_back(std::move(track));
      data.gt_points.push_back(p_cam_world);
      data.sfm_points.push_back(p_cam_world / spec.gt_scale);
      data.track_plane.push_back(k);
      data.track_outlier.push_back(outlier);
      ++next_point_id;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (per_frame_count[i] < spec.min_points_per_frame)
      throw InvisibleSceneError("camera frame " + std::to_string(i) + " sees only " +
                                std::to_string(per_frame_count[i]) + " tracked points");
  }

  // LiDAR scans, sampled per frame on the plane rectangles.
  if (spec.planes.size() < 2)
    throw InvisibleSceneError("LiDAR frames hit fewer than 2 planes");
  data.clouds.resize(n);
  for (int i = 0; i < n; ++i) {
    const Se3 scene_to_body = body_to_scene[i].inverse();
    for (const auto& plane : spec.planes) {
      const double area = 4.0 * (plane.half_u - spec.lidar_margin) *
                          (plane.half_v - spec.lidar_margin);
      const int count = std::max(3, static_cast<int>(std::lround(area * spec.lidar_density)));
      for (int s = 0; s < count; ++s) {
        const double a = unit(rng) * (plane.half_u - spec.lidar_margin);
        const double b = unit(rng) * (plane.half_v - spec.lidar_margin);
        Eigen::Vector3d p = scene_to_body * plane.point_at(a, b);
        if (spec.noise.lidar_sigma > 0.0) {
          const double range = p.norm();
          if (range > 1e-9) p += (spec.noise.lidar_sigma * gauss(rng) / range) * p;
        }
        data.clouds[i].points.push_back(p);
      }
    }
  }

  return data;
}

SceneSpec default_scene(SceneKind kind) {
  SceneSpec spec;
  spec.gt_intrinsics.fx = 520.0;
  spec.gt_intrinsics.fy = 510.0;
  spec.gt_intrinsics.cx = 324.0;
  spec.gt_intrinsics.cy = 238.0;
  spec.gt_intrinsics.k1 = -0.08;
  spec.gt_intrinsics.k2 = 0.012;
  spec.gt_intrinsics.width = 640;
  spec.gt_intrinsics.height = 480;
  spec.gt_extrinsics.rotation = quat_exp(Eigen::Vector3d(0.030, -0.025, 0.040));
  spec.gt_extrinsics.translation = Eigen::Vector3d(0.08, -0.04, 0.06);
  spec.gt_scale = 1.7;

  const auto make_plane = [](const Eigen::Vector3d& center, Eigen::Vector3d normal,
                             Eigen::Vector3d u_axis, double half_u, double half_v,
                             std::array<std::uint8_t, 3> color) {
    PlaneSpec plane;
    plane.center = center;
    plane.normal = normal.normalized();
    u_axis -= u_axis.dot(plane.normal) * plane.normal;
    plane.u_axis = u_axis.normalized();
    plane.half_u = half_u;
    plane.half_v = half_v;
    plane.color = color;
    return plane;
  };

  switch (kind) {
    case SceneKind::kCourtyard: {
      spec.name = "courtyard";
      // Rectangle-to-rectangle gaps stay >= 0.6 m so a 20-point neighborhood
      // never mixes two planes. The near panel faces the sensor from ~3 m:
      // together with the far wall it anchors the visual scale (two surfaces
      // with nearly parallel normals at different depths).
      spec.planes = {
          make_plane({0.0, 0.0, 6.5}, {0.0, 0.0, -1.0}, {1.0, 0.0, 0.0}, 2.2, 1.3,
                     {220, 60, 60}),
          make_plane({-2.8, 0.0, 5.1}, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, 0.8, 1.3,
                     {60, 200, 80}),
          make_plane({0.0, 1.9, 4.0}, {0.0, -1.0, 0.0}, {1.0, 0.0, 0.0}, 2.2, 1.7,
                     {70, 90, 220}),
          make_plane({1.4, -0.9, 3.0}, {-0.35, 0.25, -1.0}, {0.0, 1.0, 0.0}, 0.8, 0.8,
                     {230, 200, 60}),
      };
      for (int i = 0; i < 8; ++i) {
        const double s = (i - 3.5) / 3.5;  // -1 .. 1
        Waypoint wp;
        wp.position = {0.85 * std::sin(1.1 * s), 0.28 * std::sin(2.1 * s),
                       0.45 * std::cos(1.3 * s) - 0.45};
        wp.look_at = {0.5 * std::sin(0.9 * s), 0.3 * std::sin(1.7 * s) + 0.1, 5.2};
        wp.roll = 0.50 * std::sin(2.9 * s);
        spec.trajectory.push_back(wp);
      }
      spec.features_per_plane = 260;
      break;
    }
    case SceneKind::kCorridor: {
      spec.name = "corridor";
      // The two walls toe in by ~4 degrees; the weak corridor axis keeps a
      // small but nonzero constraint.
      spec.planes = {
          make_plane({-1.8, 0.0, 6.5}, {1.0, 0.0, 0.07}, {0.0, 0.0, 1.0}, 3.4, 1.3,
                     {220, 60, 60}),
          make_plane({1.8, 0.0, 6.5}, {-1.0, 0.0, 0.07}, {0.0, 0.0, 1.0}, 3.4, 1.3,
                     {60, 200, 80}),
          make_plane({0.0, 1.9, 6.5}, {0.0, -1.0, 0.0}, {1.0, 0.0, 0.0}, 1.2, 3.4,
                     {70, 90, 220}),
      };
      for (int i = 0; i < 8; ++i) {
        const double s = i / 7.0;
        Waypoint wp;
        wp.position = {0.30 * std::sin(5.2 * s), 0.16 * std::sin(3.1 * s), 1.9 * s};
        wp.look_at = {0.22 * std::sin(2.7 * s), 0.12 * std::cos(2.2 * s), 11.0};
        wp.roll = 0.12 * std::sin(4.4 * s);
        spec.trajectory.push_back(wp);
      }
      break;
    }
    case SceneKind::kDegenerateZ: {
      spec.name = "degenerate_z";
      // All plane normals lie in the body XY plane; the trajectory translates
      // and rolls about the exact viewing axis so they stay there.
      spec.planes = {
          make_plane({-2.0, 0.0, 6.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, 3.4, 1.4,
                     {220, 60, 60}),
          make_plane({2.0, 0.0, 6.0}, {-1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, 3.4, 1.4,
                     {60, 200, 80}),
          make_plane({0.0, 2.0, 6.0}, {0.0, -1.0, 0.0}, {1.0, 0.0, 0.0}, 1.4, 3.4,
                     {70, 90, 220}),
      };
      spec.export_lidar_poses = true;  // sideways motion is unobservable to scan matching
      for (int i = 0; i < 8; ++i) {
        const double s = i / 7.0;
        Waypoint wp;
        wp.position = {0.30 * std::sin(5.0 * s), 0.14 * std::sin(3.3 * s), 1.8 * s};
        wp.look_at = wp.position + Eigen::Vector3d(0.0, 0.0, 1.0);
        wp.roll = 0.16 * std::sin(4.1 * s);
        spec.trajectory.push_back(wp);
      }
      break;
    }
  }
  return spec;
}

SceneKind scene_kind_from_name(const std::string& name) {
  if (name == "courtyard") return SceneKind::kCourtyard;
  if (name == "corridor") return SceneKind::kCorridor;
  if (name == "degenerate_z") return SceneKind::kDegenerateZ;
  throw Error("unknown scene kind: " + name);
}

PerturbedInitials perturb_initials(const SyntheticDataset& data,
                                   const InitialPerturbation& perturbation) {
  std::mt19937_64 rng(perturbation.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto random_unit = [&]() {
    Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    while (v.norm() < 1e-9) v = {gauss(rng), gauss(rng), gauss(rng)};
    return v.normalized();
  };

  PerturbedInitials initials;
  initials.extrinsics = data.gt_extrinsics;
  initials.extrinsics.rotation =
      (quat_exp(random_unit() * perturbation.rotation_deg * M_PI / 180.0) *
       data.gt_extrinsics.rotation)
          .normalized();
  initials.extrinsics.translation += perturbation.translation_m * random_unit();
  initials.scale = data.gt_scale * perturbation.scale_factor;

  initials.intrinsics = data.gt_intrinsics;
  initials.intrinsics.fx *= perturbation.focal_factor;
  initials.intrinsics.fy *= perturbation.focal_factor;
  const double angle = 2.0 * M_PI * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  initials.intrinsics.cx += perturbation.principal_shift_px * std::cos(angle);
  initials.intrinsics.cy += perturbation.principal_shift_px * std::sin(angle);
  if (perturbation.zero_distortion) {
    initials.intrinsics.k1 = 0.0;
    initials.intrinsics.k2 = 0.0;
  }
  return initials;
}

PerturbedInitials exact_initials(const SyntheticDataset& data) {
  return {data.gt_intrinsics, data.gt_extrinsics, data.gt_scale};
}

void save_dataset(const SyntheticDataset& data, const std::filesystem::path& directory,
                  const PerturbedInitials& initials, bool include_ground_truth,
                  bool include_initial_scale) {
  std::filesystem::create_directories(directory / "clouds");

  DatasetManifest manifest;
  manifest.image_width = data.gt_intrinsics.width;
  manifest.image_height = data.gt_intrinsics.height;
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "clouds/frame_%03zu.ply", i);
    manifest.cloud_files.push_back(name);
    save_cloud(data.clouds[i], directory / name, /*binary=*/true);
  }
  manifest.tracks_file = "tracks.json";
  save_tracks(data.tracks, directory / manifest.tracks_file);
  manifest.camera_poses_file = "camera_poses.json";
  save_poses(data.sfm_camera_poses, directory / manifest.camera_poses_file);
  if (data.spec.export_lidar_poses) {
    manifest.lidar_poses_file = "lidar_poses.json";
    save_poses(data.gt_lidar_poses, directory / *manifest.lidar_poses_file);
  }
  manifest.initial_intrinsics = initials.intrinsics;
  manifest.initial_extrinsics = initials.extrinsics;
  if (include_initial_scale) manifest.initial_scale = initials.scale;
  if (include_ground_truth) {
    manifest.ground_truth =
        GroundTruthBlock{data.gt_intrinsics, data.gt_extrinsics, data.gt_scale};
    save_params(CalibratedParams{data.gt_intrinsics, data.gt_extrinsics},
                directory / "gt_params.json");
  }
  save_manifest(manifest, directory / "manifest.json");
}

ImageBuffer render_plane_image(const SyntheticDataset& data, int frame) {
  const auto& D = data.gt_intrinsics;
  ImageBuffer image;
  image.width = D.width;
  image.height = D.height;
  image.rgb.assign(3 * static_cast<std::size_t>(D.width) * D.height, 0);

  // camera frame -> scene
  const Se3 camera_to_scene = data.scene_from_lidar_world *
                              data.gt_lidar_poses[frame].inverse() * data.gt_extrinsics;
  const Eigen::Vector3d origin = camera_to_scene.translation;
  for (int y = 0; y < D.height; ++y) {
    for (int x = 0; x < D.width; ++x) {
      const Eigen::Vector3d bearing = unproject(Eigen::Vector2d(x, y), D);
      const Eigen::Vector3d dir = camera_to_scene.rotation * bearing;
      double best_t = std::numeric_limits<double>::max();
      const PlaneSpec* best = nullptr;
      for (const auto& plane : data.spec.planes) {
        const double denom = plane.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double t = plane.normal.dot(plane.center - origin) / denom;
        if (t <= 1e-6 || t >= best_t) continue;
        const Eigen::Vector3d hit = origin + t * dir - plane.center;
        if (std::abs(plane.u_axis.dot(hit)) > plane.half_u) continue;
        if (std::abs(plane.v_axis().dot(hit)) > plane.half_v) continue;
        best_t = t;
        best = &plane;
      }
      if (best) {
        const std::size_t o = 3 * (static_cast<std::size_t>(y) * D.width + x);
        image.rgb[o] = best->color[0];
        image.rgb[o + 1] = best->color[1];
        image.rgb[o + 2] = best->color[2];
      }
    }
  }
  return image;
}

}  // namespace plancalib
