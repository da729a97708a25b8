#include <doctest.h>

#include <random>

#include "plancalib/geometry.hpp"

using namespace plancalib;

namespace {

CameraIntrinsics vga_camera(double k1 = 0.0, double k2 = 0.0) {
  CameraIntrinsics D;
  D.fx = 500.0;
  D.fy = 500.0;
  D.cx = 320.0;
  D.cy = 240.0;
  D.k1 = k1;
  D.k2 = k2;
  D.width = 640;
  D.height = 480;
  return D;
}

Se3 random_se3(std::mt19937_64& rng, double rot_scale = 1.0, double trans_scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
  Se3 T;
  T.rotation = quat_exp(rot_scale * axis);
  T.translation = trans_scale * Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
  return T;
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("project maps the optical axis to the principal point") {
  const auto D = vga_camera();
  const Eigen::Vector2d px = project({0.0, 0.0, 2.0}, D);
  CHECK(px.x() == doctest::Approx(320.0).epsilon(1e-12));
  CHECK(px.y() == doctest::Approx(240.0).epsilon(1e-12));
}

TEST_CASE("project pinhole hand evaluation") {
  const auto D = vga_camera();
  const Eigen::Vector2d px = project({1.0, 0.0, 2.0}, D);
  CHECK(px.x() == doctest::Approx(570.0).epsilon(1e-12));
  CHECK(px.y() == doctest::Approx(240.0).epsilon(1e-12));
}

TEST_CASE("project rejects non-positive depth") {
  const auto D = vga_camera();
  CHECK_THROWS_AS(project({0.0, 0.0, -1.0}, D), NonPositiveDepthError);
  CHECK_THROWS_AS(project({0.1, 0.2, 0.0}, D), NonPositiveDepthError);
  CHECK_FALSE(project_checked({0.0, 0.0, -1.0}, D).has_value());
}

TEST_CASE("unproject principal point gives the optical axis") {
  const auto D = vga_camera();
  const Eigen::Vector3d f = unproject({320.0, 240.0}, D);
  CHECK((f - Eigen::Vector3d::UnitZ()).norm() < 1e-14);
}

TEST_CASE("project/unproject round trip, zero distortion") {
  const auto D = vga_camera();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(1.0, 639.0), uy(1.0, 479.0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector2d px(ux(rng), uy(rng));
    const Eigen::Vector3d f = unproject(px, D);
    CHECK(f.z() > 0.0);
    CHECK(f.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const Eigen::Vector2d back = project(5.0 * f, D);
    CHECK((back - px).norm() < 1e-10);
  }
}

TEST_CASE("project/unproject round trip across the distortion range") {
  // Pixels are sampled from the camera's range (projections of in-cone
  // bearings), where the distortion is invertible by construction.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const double k1 : {-0.3, -0.1, 0.0, 0.1, 0.3}) {
    for (const double k2 : {-0.05, 0.0, 0.01, 0.05}) {
      const auto D = vga_camera(k1, k2);
      for (int i = 0; i < 50; ++i) {
        Eigen::Vector2d n(u(rng), u(rng));
        if (n.norm() > 1.0) n.normalize();
        n *= 0.55;
        const Eigen::Vector2d px = project({n.x(), n.y(), 1.0}, D);
        if (px.x() < 0.0 || px.x() > D.width || px.y() < 0.0 || px.y() > D.height) continue;
        const Eigen::Vector3d f = unproject(px, D);
        const Eigen::Vector2d back = project(3.0 * f, D);
        CHECK((back - px).norm() < 1e-8);
      }
    }
  }
}

TEST_CASE("project Jacobians match central finite differences") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const auto D = vga_camera(-0.1 + 0.2 * u(rng), 0.01 * u(rng));
    const double z = 1.0 + 4.0 * std::abs(u(rng));
    const Eigen::Vector3d p(u(rng) * z, u(rng) * z, z);
    ProjectionJacobians jac;
    const auto px = project_checked(p, D, &jac);
    REQUIRE(px.has_value());

    for (int d = 0; d < 3; ++d) {
      Eigen::Vector3d dp = Eigen::Vector3d::Zero();
      dp[d] = h;
      const Eigen::Vector2d num = (project(p + dp, D) - project(p - dp, D)) / (2.0 * h);
      for (int r = 0; r < 2; ++r) {
        const double a = jac.d_point(r, d);
        CHECK(std::abs(a - num[r]) / std::max({1.0, std::abs(a), std::abs(num[r])}) < 1e-5);
      }
    }
    for (int d = 0; d < 6; ++d) {
      auto v_plus = D.to_vector();
      auto v_minus = D.to_vector();
      v_plus[d] += h;
      v_minus[d] -= h;
      const auto Dp = CameraIntrinsics::from_vector(v_plus, D.width, D.height);
      const auto Dm = CameraIntrinsics::from_vector(v_minus, D.width, D.height);
      const Eigen::Vector2d num = (project(p, Dp) - project(p, Dm)) / (2.0 * h);
      for (int r = 0; r < 2; ++r) {
        const double a = jac.d_intrinsics(r, d);
        CHECK(std::abs(a - num[r]) / std::max({1.0, std::abs(a), std::abs(num[r])}) < 1e-5);
      }
    }
  }
}

TEST_CASE("se3 group identities") {
  std::mt19937_64 rng(3);
  const Se3 id = Se3::identity();
  for (int i = 0; i < 100; ++i) {
    const Se3 T = random_se3(rng);
    CHECK(rotation_angle_deg((T * id).rotation, T.rotation) < 1e-10);
    CHECK(((T * id).translation - T.translation).norm() < 1e-12);

    const Se3 TinvT = T * T.inverse();
    CHECK(rotation_angle_deg(TinvT.rotation, id.rotation) < 1e-10 * 180.0 / M_PI);
    CHECK(TinvT.translation.norm() < 1e-10);

    std::normal_distribution<double> gauss(0.0, 2.0);
    const Eigen::Vector3d p(gauss(rng), gauss(rng), gauss(rng));
    CHECK((id * p - p).norm() == 0.0);
    CHECK((T.inverse() * (T * p) - p).norm() < 1e-10);

    const Se3 A = random_se3(rng), B = random_se3(rng);
    CHECK(((A * B) * p - A * (B * p)).norm() < 1e-10);
    CHECK(T.rotation.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rotation angle between rotations") {
  std::mt19937_64 rng(37);
  const Se3 T = random_se3(rng);
  CHECK(rotation_angle_deg(T.rotation, T.rotation) == 0.0);

  const Eigen::Quaterniond one_deg =
      quat_exp(Eigen::Vector3d(0.0, 0.0, M_PI / 180.0)) * T.rotation;
  CHECK(rotation_angle_deg(T.rotation, one_deg) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rotation_angle_deg(one_deg, T.rotation) == doctest::Approx(1.0).epsilon(1e-9));

  const Eigen::Quaterniond flip = quat_exp(Eigen::Vector3d(M_PI, 0.0, 0.0)) * T.rotation;
  CHECK(rotation_angle_deg(T.rotation, flip) == doctest::Approx(180.0).epsilon(1e-9));

  // agrees with the trace formula
  for (int i = 0; i < 50; ++i) {
    const Se3 A = random_se3(rng), B = random_se3(rng);
    const Eigen::Matrix3d R = A.rotation_matrix() * B.rotation_matrix().transpose();
    const double tr = std::clamp(0.5 * R.trace() - 0.5, -1.0, 1.0);
    const double via_trace = std::acos(tr) * 180.0 / M_PI;
    CHECK(rotation_angle_deg(A.rotation, B.rotation) ==
          doctest::Approx(via_trace).epsilon(1e-9));
  }
}

TEST_CASE("quat_exp/quat_log round trip") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    if (v.norm() > M_PI) v *= 0.9 * M_PI / v.norm();
    CHECK((quat_log(quat_exp(v)) - v).norm() < 1e-10);
  }
  CHECK(quat_log(Eigen::Quaterniond::Identity()).norm() == 0.0);
  CHECK((quat_exp(Eigen::Vector3d(1e-12, 0, 0)).vec() - Eigen::Vector3d(5e-13, 0, 0)).norm() <
        1e-15);
}

TEST_CASE("intrinsics validation") {
  auto D = vga_camera();
  CHECK_NOTHROW(D.validate());

  auto bad_focal = D;
  bad_focal.fx = -1.0;
  CHECK_THROWS_AS(bad_focal.validate(), InvalidIntrinsicsError);

  auto bad_pp = D;
  bad_pp.cx = 700.0;
  CHECK_THROWS_AS(bad_pp.validate(), InvalidIntrinsicsError);

  // strong negative k1 makes the distortion factor vanish inside the image
  auto bad_k = D;
  bad_k.k1 = -3.0;
  CHECK_THROWS_AS(bad_k.validate(), InvalidIntrinsicsError);

  auto mild = vga_camera(-0.2, 0.02);
  CHECK_NOTHROW(mild.validate());
}

TEST_SUITE_END();
