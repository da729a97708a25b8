#pragma once

#include <random>

#include "plancalib/geometry.hpp"
#include "plancalib/synth.hpp"

namespace plancalib::testutil {

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
  while (v.norm() < 1e-6) v = {gauss(rng), gauss(rng), gauss(rng)};
  return v.normalized();
}

/// GT pose composed with a rotation of rot_deg about a random axis and a
/// translation offset of trans_m in a random direction.
inline Se3 perturb(const Se3& pose, std::mt19937_64& rng, double rot_deg, double trans_m) {
  Se3 out = pose;
  out.rotation = (quat_exp(random_unit(rng) * rot_deg * M_PI / 180.0) * pose.rotation)
                     .normalized();
  out.translation += trans_m * random_unit(rng);
  return out;
}

/// Courtyard spec slimmed down for unit-test speed.
inline SceneSpec small_courtyard(std::uint64_t seed, double pixel_sigma = 0.0,
                                 double lidar_sigma = 0.0, double outlier_fraction = 0.0) {
  SceneSpec spec = default_scene(SceneKind::kCourtyard);
  spec.seed = seed;
  spec.lidar_density = 40.0;
  spec.features_per_plane = 40;
  spec.noise = {pixel_sigma, lidar_sigma, outlier_fraction};
  return spec;
}

}  // namespace plancalib::testutil
