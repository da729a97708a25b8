#include <doctest.h>

#include <random>

#include "plancalib/cloud.hpp"
#include "plancalib/geometry.hpp"

using namespace plancalib;

namespace {

std::vector<KdTree::Neighbor> brute_force_knn(const PointCloud& cloud,
                                              const Eigen::Vector3d& query, int k,
                                              double max_radius) {
  std::vector<KdTree::Neighbor> all;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    const double d2 = (cloud.points[i] - query).squaredNorm();
    if (d2 < max_radius * max_radius) all.push_back({i, d2});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.squared_distance < b.squared_distance;
  });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

PointCloud random_cloud(std::mt19937_64& rng, int n, double extent = 5.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (int i = 0; i < n; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});
  return cloud;
}

}  // namespace

TEST_SUITE_BEGIN("cloud");

TEST_CASE("kd-tree trivial queries") {
  PointCloud one;
  one.points.push_back({1.0, 2.0, 3.0});
  KdTree tree(one);
  const auto got = tree.knn({-4.0, 0.0, 9.0}, 1);
  REQUIRE(got.size() == 1);
  CHECK(got[0].index == 0);

  PointCloud grid;
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 5; ++z) grid.points.push_back({double(x), double(y), double(z)});
  KdTree gtree(grid);
  const auto at_node = gtree.knn({2.0, 3.0, 1.0}, 1);
  REQUIRE(at_node.size() == 1);
  CHECK(at_node[0].squared_distance == 0.0);
  CHECK((grid.points[at_node[0].index] - Eigen::Vector3d(2, 3, 1)).norm() == 0.0);
}

TEST_CASE("kd-tree rejects empty clouds") {
  PointCloud empty;
  CHECK_THROWS_AS(KdTree tree(empty), EmptyCloudError);
}

TEST_CASE("kd-tree matches brute force") {
  std::mt19937_64 rng(101);
  const PointCloud cloud = random_cloud(rng, 200);
  KdTree tree(cloud);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int q = 0; q < 100; ++q) {
    const Eigen::Vector3d query(u(rng), u(rng), u(rng));
    const auto got = tree.knn(query, 5);
    const auto want = brute_force_knn(cloud, query, 5,
                                      std::numeric_limits<double>::infinity());
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i].squared_distance == doctest::Approx(want[i].squared_distance));
  }
}

TEST_CASE("kd-tree matches brute force on a large cloud, with radius") {
  std::mt19937_64 rng(202);
  const PointCloud cloud = random_cloud(rng, 10000);
  KdTree tree(cloud);
  std::uniform_real_distribution<double> u(-5.5, 5.5);
  for (int q = 0; q < 50; ++q) {
    const Eigen::Vector3d query(u(rng), u(rng), u(rng));
    for (const double radius : {0.5, 1.5, std::numeric_limits<double>::infinity()}) {
      const auto got = tree.knn(query, 20, radius);
      const auto want = brute_force_knn(cloud, query, 20, radius);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].squared_distance == doctest::Approx(want[i].squared_distance));
        CHECK(got[i].squared_distance < radius * radius);
      }
    }
  }
}

TEST_CASE("fit_plane on an exact plane") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({u(rng), u(rng), 0.0});
  const PlanePatch patch = fit_plane(pts);
  CHECK(std::abs(std::abs(patch.normal.z()) - 1.0) < 1e-12);
  CHECK(patch.eigenvalues[2] <= 1e-15);
  CHECK(patch.eigenvalues[0] >= patch.eigenvalues[1]);
  CHECK(patch.eigenvalues[1] >= patch.eigenvalues[2]);
  CHECK(patch.neighbor_count == 10);
  CHECK(patch.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fit_plane with z-noise keeps the normal and reports the noise variance") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({u(rng), u(rng), noise(rng)});
  const PlanePatch patch = fit_plane(pts);
  const double angle =
      std::acos(std::clamp(std::abs(patch.normal.z()), 0.0, 1.0)) * 180.0 / M_PI;
  CHECK(angle < 2.0);
  // lambda3 ~ noise variance (1e-4), same order
  CHECK(patch.eigenvalues[2] > 1e-5);
  CHECK(patch.eigenvalues[2] < 1e-3);
}

TEST_CASE("fit_plane of three non-collinear points is exact") {
  const std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 1}, {0, 1, 2}};
  const PlanePatch patch = fit_plane(pts);
  CHECK(patch.eigenvalues[2] < 1e-16);
  for (const auto& p : pts) CHECK(std::abs(patch.normal.dot(p - patch.centroid)) < 1e-12);
}

TEST_CASE("fit_plane viewpoint orients the normal") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({u(rng), u(rng), 4.0});
  const Eigen::Vector3d sensor(0.0, 0.0, 0.0);
  const PlanePatch patch = fit_plane(pts, sensor);
  CHECK(patch.normal.dot(sensor - patch.centroid) >= 0.0);
  CHECK(patch.normal.z() < 0.0);
}

TEST_CASE("fit_plane degenerate input") {
  std::vector<Eigen::Vector3d> two = {{0, 0, 0}, {1, 1, 1}};
  CHECK_THROWS_AS(fit_plane(two), DegenerateNeighborhoodError);
  std::vector<Eigen::Vector3d> same(5, Eigen::Vector3d(2.0, -1.0, 0.5));
  CHECK_THROWS_AS(fit_plane(same), DegenerateNeighborhoodError);
}

TEST_CASE("fit_plane is rigid-transform equivariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({u(rng), u(rng), 0.05 * u(rng)});

  for (int trial = 0; trial < 20; ++trial) {
    Se3 T;
    T.rotation = quat_exp(Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng)));
    T.translation = 3.0 * Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    std::vector<Eigen::Vector3d> moved;
    for (const auto& p : pts) moved.push_back(T * p);

    const PlanePatch a = fit_plane(pts);
    const PlanePatch b = fit_plane(moved);
    CHECK((b.centroid - T * a.centroid).norm() < 1e-9);
    CHECK((b.eigenvalues - a.eigenvalues).norm() < 1e-9);
    const Eigen::Vector3d rotated = T.rotation * a.normal;
    CHECK(std::min((b.normal - rotated).norm(), (b.normal + rotated).norm()) < 1e-9);
  }
}

TEST_CASE("plane validity test") {
  PlanePatch exact;
  exact.eigenvalues = {1.0, 0.5, 0.0};
  CHECK(plane_validity(exact, 10.0));
  CHECK(plane_validity(exact, 1e6));

  PlanePatch ratio;
  ratio.eigenvalues = {4.0, 2.0, 0.1};
  CHECK(plane_validity(ratio, 10.0));   // ratio 20
  CHECK_FALSE(plane_validity(ratio, 25.0));

  // isotropic blob
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 0.3);
  std::vector<Eigen::Vector3d> blob;
  for (int i = 0; i < 2000; ++i) blob.push_back({gauss(rng), gauss(rng), gauss(rng)});
  CHECK_FALSE(plane_validity(fit_plane(blob), 10.0));
}

TEST_SUITE_END();
