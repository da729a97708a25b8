#include <doctest.h>

#include <random>

#include "plancalib/lidar_pose.hpp"
#include "plancalib/synth.hpp"
#include "test_util.hpp"

using namespace plancalib;

TEST_SUITE_BEGIN("lidar_pose");

TEST_CASE("icp of a cloud against itself stays at the identity") {
  const SyntheticDataset data = generate(testutil::small_courtyard(31));
  const KdTree tree(data.clouds[0]);
  const IcpResult result = icp_point_to_plane(data.clouds[0], tree, Se3::identity());
  CHECK(rotation_angle_deg(result.pose.rotation, Eigen::Quaterniond::Identity()) < 1e-9);
  CHECK(result.pose.translation.norm() < 1e-9);
  CHECK(result.converged);
}

TEST_CASE("icp recovers a known transform from a perturbed initial guess") {
  SceneSpec spec = testutil::small_courtyard(32);
  spec.lidar_density = 60.0;
  const SyntheticDataset data = generate(spec);
  std::mt19937_64 rng(5);

  // Align scan 1 (its own frame) to scan 0 (the LiDAR world frame).
  const Se3 truth = data.gt_lidar_poses[1].inverse();
  const KdTree tree(data.clouds[0]);
  const Se3 initial = testutil::perturb(truth, rng, 5.0, 0.3);
  const IcpResult result = icp_point_to_plane(data.clouds[1], tree, initial);

  CHECK(rotation_angle_deg(result.pose.rotation, truth.rotation) < 0.05);
  CHECK((result.pose.translation - truth.translation).norm() < 0.005);
  CHECK(result.valid_pairs > 0.5 * static_cast<double>(data.clouds[1].size()));
}

TEST_CASE("icp rejects non-overlapping clouds") {
  const SyntheticDataset data = generate(testutil::small_courtyard(33));
  PointCloud far = data.clouds[1];
  for (auto& p : far.points) p += Eigen::Vector3d(500.0, 0.0, 0.0);
  const KdTree tree(data.clouds[0]);
  CHECK_THROWS_AS(icp_point_to_plane(far, tree, Se3::identity()), InsufficientOverlapError);
}

TEST_CASE("trajectory estimation chains the scans") {
  SceneSpec spec = testutil::small_courtyard(34);
  spec.lidar_density = 60.0;
  const SyntheticDataset data = generate(spec);
  const LidarTrajectory trajectory = estimate_trajectory(data.clouds);
  REQUIRE(trajectory.poses.size() == data.clouds.size());
  CHECK(trajectory.poses[0].translation.norm() == 0.0);
  for (std::size_t i = 0; i < trajectory.poses.size(); ++i) {
    CHECK(rotation_angle_deg(trajectory.poses[i].rotation, data.gt_lidar_poses[i].rotation) <
          0.1);
    CHECK((trajectory.poses[i].translation - data.gt_lidar_poses[i].translation).norm() <
          0.01);
  }
}

TEST_CASE("refine_trajectory leaves a single scan unchanged") {
  const SyntheticDataset data = generate(testutil::small_courtyard(35));
  LidarTrajectory single;
  single.poses.push_back(Se3::identity());
  const TrajectoryRefineResult result =
      refine_trajectory({data.clouds[0]}, single);
  CHECK(result.converged);
  CHECK(result.trajectory.poses.size() == 1);
  CHECK(result.trajectory.poses[0].translation.norm() == 0.0);
  CHECK(result.trajectory.poses[0].rotation.w() == 1.0);
}

TEST_CASE("refine_trajectory improves drifted poses and keeps the gauge") {
  SceneSpec spec = testutil::small_courtyard(36);
  spec.lidar_density = 60.0;
  spec.trajectory.resize(5);
  const SyntheticDataset data = generate(spec);
  std::mt19937_64 rng(7);

  LidarTrajectory drifted;
  drifted.poses.push_back(Se3::identity());
  for (std::size_t i = 1; i < data.clouds.size(); ++i)
    drifted.poses.push_back(testutil::perturb(data.gt_lidar_poses[i], rng, 0.5, 0.03));

  const TrajectoryRefineResult result = refine_trajectory(data.clouds, drifted);
  CHECK(result.final_cost < result.initial_cost);
  CHECK(result.trajectory.poses[0].translation.norm() == 0.0);
  CHECK(result.trajectory.poses[0].rotation.w() == 1.0);
  for (std::size_t i = 1; i < data.clouds.size(); ++i) {
    const double rot_before =
        rotation_angle_deg(drifted.poses[i].rotation, data.gt_lidar_poses[i].rotation);
    const double rot_after = rotation_angle_deg(result.trajectory.poses[i].rotation,
                                                data.gt_lidar_poses[i].rotation);
    const double trans_before =
        (drifted.poses[i].translation - data.gt_lidar_poses[i].translation).norm();
    const double trans_after =
        (result.trajectory.poses[i].translation - data.gt_lidar_poses[i].translation).norm();
    CHECK(rot_after <= rot_before);
    CHECK(trans_after <= trans_before);
  }
}

TEST_CASE("refine_trajectory is a fixed point at an optimal trajectory") {
  SceneSpec spec = testutil::small_courtyard(37);
  spec.trajectory.resize(4);
  const SyntheticDataset data = generate(spec);
  LidarTrajectory gt;
  gt.poses = data.gt_lidar_poses;
  const TrajectoryRefineResult result = refine_trajectory(data.clouds, gt);
  // noiseless scans on exact planes: the cost is ~0 before and after
  CHECK(result.final_cost <= result.initial_cost + 1e-10 * std::max(result.initial_cost, 1.0));
  CHECK(result.initial_cost < 1e-10);
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    CHECK(rotation_angle_deg(result.trajectory.poses[i].rotation,
                             data.gt_lidar_poses[i].rotation) < 1e-4);
    CHECK((result.trajectory.poses[i].translation - data.gt_lidar_poses[i].translation)
              .norm() < 1e-5);
  }
}

TEST_SUITE_END();
