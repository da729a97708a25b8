#include <doctest.h>

#include <random>

#include "plancalib/metrics.hpp"
#include "test_util.hpp"

using namespace plancalib;

namespace {

CameraIntrinsics gt_camera() {
  CameraIntrinsics D;
  D.fx = 520.0;
  D.fy = 505.0;
  D.cx = 322.0;
  D.cy = 241.0;
  D.k1 = -0.06;
  D.k2 = 0.008;
  D.width = 640;
  D.height = 480;
  return D;
}

// Straightforward full-grid evaluation, kept independent of the production
// path (plain summation, no Kahan, no stride machinery).
double brute_force_intrinsic_error(const CameraIntrinsics& est, const CameraIntrinsics& gt) {
  double sum = 0.0;
  for (int u = 1; u <= gt.width; ++u) {
    for (int v = 1; v <= gt.height; ++v) {
      const Eigen::Vector2d pixel(u, v);
      sum += (project(unproject(pixel, gt), est) - pixel).norm();
    }
  }
  return sum / (static_cast<double>(gt.width) * gt.height);
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("extrinsic error fixtures") {
  std::mt19937_64 rng(71);
  Se3 pose;
  pose.rotation = quat_exp(testutil::random_unit(rng));
  pose.translation = Eigen::Vector3d(0.4, -0.2, 1.0);

  const ExtrinsicError zero = extrinsic_error(pose, pose);
  CHECK(zero.rotation_deg == 0.0);
  CHECK(zero.translation_cm == 0.0);

  // 3-4-5 translation triangle, centimeters
  Se3 shifted = pose;
  shifted.translation += Eigen::Vector3d(0.03, 0.04, 0.0);
  const ExtrinsicError t_err = extrinsic_error(shifted, pose);
  CHECK(t_err.translation_cm == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(t_err.rotation_deg < 1e-9);

  // 1 degree about a random axis
  for (int i = 0; i < 20; ++i) {
    Se3 rotated = pose;
    rotated.rotation =
        (quat_exp(testutil::random_unit(rng) * M_PI / 180.0) * pose.rotation).normalized();
    const ExtrinsicError r_err = extrinsic_error(rotated, pose);
    CHECK(r_err.rotation_deg == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r_err.translation_cm == 0.0);
    // symmetry
    CHECK(extrinsic_error(pose, rotated).rotation_deg ==
          doctest::Approx(r_err.rotation_deg).epsilon(1e-12));
  }
}

TEST_CASE("intrinsic error of identical parameters is zero") {
  const auto D = gt_camera();
  CHECK(intrinsic_error(D, D, 4) < 1e-9);
}

TEST_CASE("principal point shift of 2 px gives exactly 2 px") {
  CameraIntrinsics gt = gt_camera();
  gt.k1 = gt.k2 = 0.0;
  CameraIntrinsics est = gt;
  est.cx += 2.0;
  const double err = intrinsic_error(est, gt, 1);
  CHECK(std::abs(err - 2.0) < 1e-9);
}

TEST_CASE("full-grid evaluation matches the brute-force oracle") {
  const auto gt = gt_camera();
  CameraIntrinsics est = gt;
  est.fx *= 1.01;
  const double production = intrinsic_error(est, gt, 1);
  const double oracle = brute_force_intrinsic_error(est, gt);
  CHECK(std::abs(production - oracle) < 1e-9);
}

TEST_CASE("strided evaluation tracks the full grid within 0.01 px") {
  const auto gt = gt_camera();
  CameraIntrinsics est = gt;
  est.fx *= 1.01;
  est.cx -= 1.5;
  est.k1 += 0.004;
  const double full = intrinsic_error(est, gt, 1);
  const double strided = intrinsic_error(est, gt, 4);
  CHECK(std::abs(full - strided) < 0.01);
}

TEST_CASE("thread count does not change the result") {
  const auto gt = gt_camera();
  CameraIntrinsics est = gt;
  est.fy *= 0.995;
  est.k2 -= 0.002;
  const double serial = intrinsic_error(est, gt, 2, 1);
  const double parallel = intrinsic_error(est, gt, 2, 4);
  CHECK(serial == parallel);
}

TEST_CASE("non-invertible distortion propagates UndistortDivergence") {
  // corner pixels have no preimage under this distortion
  CameraIntrinsics gt = gt_camera();
  gt.k1 = -0.3;
  gt.k2 = -0.05;
  CHECK_THROWS_AS(intrinsic_error(gt, gt, 1), UndistortDivergenceError);
}

TEST_CASE("image size mismatch and bad stride are rejected") {
  const auto gt = gt_camera();
  CameraIntrinsics other = gt;
  other.width = 800;
  CHECK_THROWS_AS(intrinsic_error(other, gt), Error);
  CHECK_THROWS_AS(intrinsic_error(gt, gt, 0), Error);
}

TEST_SUITE_END();
