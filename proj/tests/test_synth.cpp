#include <doctest.h>

#include "plancalib/joint.hpp"
#include "plancalib/synth.hpp"
#include "test_util.hpp"

using namespace plancalib;

namespace {

/// GT problem + per-frame indices for diagnosis runs.
struct GtSetup {
  CalibrationProblem problem;
  std::vector<KdTree> trees;
  std::vector<const KdTree*> indices;

  explicit GtSetup(const SyntheticDataset& data) {
    problem.intrinsics = data.gt_intrinsics;
    problem.extrinsics = data.gt_extrinsics;
    problem.camera_poses = data.gt_camera_poses;
    problem.lidar_poses = data.gt_lidar_poses;
    for (std::size_t j = 0; j < data.tracks.size(); ++j) {
      VisualPoint point;
      point.position = data.gt_points[j];
      point.covariance = 1e-6 * Eigen::Matrix3d::Identity();
      point.track = data.tracks[j];
      problem.points.push_back(point);
    }
    trees.reserve(data.clouds.size());
    for (const auto& cloud : data.clouds) trees.emplace_back(cloud);
    for (const auto& tree : trees) indices.push_back(&tree);
  }
};

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("identical seeds give bit-identical datasets") {
  const SceneSpec spec = testutil::small_courtyard(42, 0.5, 0.005, 0.1);
  const SyntheticDataset a = generate(spec);
  const SyntheticDataset b = generate(spec);
  REQUIRE(a.clouds.size() == b.clouds.size());
  for (std::size_t i = 0; i < a.clouds.size(); ++i) {
    REQUIRE(a.clouds[i].size() == b.clouds[i].size());
    for (std::size_t k = 0; k < a.clouds[i].size(); ++k)
      CHECK(a.clouds[i].points[k] == b.clouds[i].points[k]);
  }
  REQUIRE(a.tracks.size() == b.tracks.size());
  for (std::size_t j = 0; j < a.tracks.size(); ++j) {
    REQUIRE(a.tracks[j].observations.size() == b.tracks[j].observations.size());
    for (std::size_t k = 0; k < a.tracks[j].observations.size(); ++k) {
      CHECK(a.tracks[j].observations[k].pixel == b.tracks[j].observations[k].pixel);
      CHECK(a.tracks[j].observations[k].frame == b.tracks[j].observations[k].frame);
    }
  }
}

TEST_CASE("noiseless features reproduce project() bit-exactly") {
  const SyntheticDataset data = generate(testutil::small_courtyard(7));
  for (std::size_t j = 0; j < data.tracks.size(); ++j) {
    for (const auto& obs : data.tracks[j].observations) {
      const Eigen::Vector2d expected =
          project(data.gt_camera_poses[obs.frame] * data.gt_points[j], data.gt_intrinsics);
      CHECK(obs.pixel == expected);
    }
  }
}

TEST_CASE("noiseless LiDAR points satisfy their plane equations") {
  const SyntheticDataset data = generate(testutil::small_courtyard(8));
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    const Se3 body_to_scene =
        data.scene_from_lidar_world * data.gt_lidar_poses[i].inverse();
    for (const auto& p : data.clouds[i].points) {
      const Eigen::Vector3d in_scene = body_to_scene * p;
      double best = std::numeric_limits<double>::max();
      for (const auto& plane : data.spec.planes)
        best = std::min(best, std::abs(plane.normal.dot(in_scene - plane.center)));
      CHECK(best < 1e-10);
    }
  }
}

TEST_CASE("pixel noise statistic matches the requested sigma") {
  SceneSpec spec = default_scene(SceneKind::kCourtyard);
  spec.seed = 9;
  spec.features_per_plane = 450;  // >= 1e4 observations
  spec.lidar_density = 5.0;
  spec.noise.pixel_sigma = 0.5;
  const SyntheticDataset data = generate(spec);

  double sq = 0.0;
  int count = 0;
  for (std::size_t j = 0; j < data.tracks.size(); ++j) {
    for (const auto& obs : data.tracks[j].observations) {
      const Eigen::Vector2d clean =
          project(data.gt_camera_poses[obs.frame] * data.gt_points[j], data.gt_intrinsics);
      sq += (obs.pixel - clean).squaredNorm();
      count += 2;
    }
  }
  REQUIRE(count >= 10000);
  const double std_dev = std::sqrt(sq / count);
  CHECK(std_dev > 0.5 * 0.95);
  CHECK(std_dev < 0.5 * 1.05);
}

TEST_CASE("scale-ambiguous export divides translations and points by gt_scale") {
  const SyntheticDataset data = generate(testutil::small_courtyard(10));
  for (std::size_t i = 0; i < data.gt_camera_poses.size(); ++i) {
    CHECK((data.sfm_camera_poses[i].translation * data.gt_scale -
           data.gt_camera_poses[i].translation)
              .norm() < 1e-12);
    CHECK(rotation_angle_deg(data.sfm_camera_poses[i].rotation,
                             data.gt_camera_poses[i].rotation) == 0.0);
  }
  CHECK(data.gt_camera_poses[0].translation.norm() == 0.0);
  CHECK(data.gt_lidar_poses[0].translation.norm() == 0.0);
}

TEST_CASE("default scenes and the degeneracy diagnosis") {
  const auto diagnose_scene = [](SceneKind kind) {
    SceneSpec spec = default_scene(kind);
    spec.lidar_density = 30.0;
    spec.features_per_plane = 30;
    spec.seed = 11;
    const SyntheticDataset data = generate(spec);
    GtSetup setup(data);
    CorrespondenceConfig cfg;
    auto [pairs, report] = build_correspondences(setup.problem, setup.indices, cfg);
    return std::make_pair(diagnose_degeneracy(pairs, setup.problem), data);
  };

  const auto [courtyard, courtyard_data] = diagnose_scene(SceneKind::kCourtyard);
  CHECK_FALSE(courtyard.degenerate);

  const auto [corridor, corridor_data] = diagnose_scene(SceneKind::kCorridor);
  CHECK_FALSE(corridor.degenerate);

  const auto [degenerate, degenerate_data] = diagnose_scene(SceneKind::kDegenerateZ);
  CHECK(degenerate.degenerate);

  // conditioning ordering: courtyard > corridor > degenerate_z
  CHECK(courtyard.conditioning_ratio > corridor.conditioning_ratio);
  CHECK(corridor.conditioning_ratio > degenerate.conditioning_ratio);

  // weak direction matches the constructed null space (camera viewing axis)
  Eigen::Matrix3d span = Eigen::Matrix3d::Zero();
  for (int k = 0; k < static_cast<int>(degenerate_data.spec.planes.size()); ++k) {
    const Eigen::Vector3d n = degenerate_data.plane_normal_in_camera_world(k);
    span.noalias() += n * n.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(span);
  const Eigen::Vector3d expected_null = eig.eigenvectors().col(0);
  const double angle = std::acos(std::clamp(
                           std::abs(expected_null.dot(degenerate.weak_direction)), 0.0, 1.0)) *
                       180.0 / M_PI;
  CHECK(angle < 5.0);
}

TEST_CASE("invalid scene specs are rejected") {
  SceneSpec no_planes = testutil::small_courtyard(1);
  no_planes.planes.clear();
  CHECK_THROWS_AS(generate(no_planes), Error);

  SceneSpec one_frame = testutil::small_courtyard(1);
  one_frame.trajectory.resize(1);
  CHECK_THROWS_AS(generate(one_frame), Error);

  SceneSpec bad_outliers = testutil::small_courtyard(1);
  bad_outliers.noise.outlier_fraction = 1.0;
  CHECK_THROWS_AS(generate(bad_outliers), Error);

  // camera turned away from every plane
  SceneSpec blind = testutil::small_courtyard(1);
  for (auto& wp : blind.trajectory) wp.look_at = wp.position - Eigen::Vector3d(0, 0, 5);
  CHECK_THROWS_AS(generate(blind), InvisibleSceneError);
}

TEST_SUITE_END();
