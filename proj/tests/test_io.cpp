#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "plancalib/io.hpp"
#include "plancalib/synth.hpp"
#include "test_util.hpp"

using namespace plancalib;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "plancalib_io_tests";
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << content;
}

}  // namespace

TEST_SUITE_BEGIN("io");

TEST_CASE("ascii ply with three points loads exactly") {
  const fs::path path = temp_dir() / "three.ply";
  write_text(path,
             "ply\n"
             "format ascii 1.0\n"
             "comment test fixture\n"
             "element vertex 3\n"
             "property float x\nproperty float y\nproperty float z\n"
             "end_header\n"
             "1 2 3\n"
             "-0.5 0.25 4\n"
             "0 0 -1.5\n");
  const PointCloud cloud = load_cloud(path);
  REQUIRE(cloud.size() == 3);
  CHECK(cloud.points[0] == Eigen::Vector3d(1, 2, 3));
  CHECK(cloud.points[1] == Eigen::Vector3d(-0.5, 0.25, 4));
  CHECK(cloud.points[2] == Eigen::Vector3d(0, 0, -1.5));
  CHECK_FALSE(cloud.has_intensity());
}

TEST_CASE("binary ply round-trips bit-exactly") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> gauss(0.0, 3.0);
  PointCloud cloud;
  for (int i = 0; i < 257; ++i) cloud.points.push_back({gauss(rng), gauss(rng), gauss(rng)});
  cloud.intensity.resize(cloud.size());
  for (auto& v : cloud.intensity) v = static_cast<float>(gauss(rng));

  const fs::path path = temp_dir() / "roundtrip.ply";
  save_cloud(cloud, path, /*binary=*/true);
  const PointCloud loaded = load_cloud(path);
  REQUIRE(loaded.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(loaded.points[i] == cloud.points[i]);
    CHECK(loaded.intensity[i] == cloud.intensity[i]);
  }

  // ascii round-trip is value-exact too (17 significant digits)
  const fs::path ascii_path = temp_dir() / "roundtrip_ascii.ply";
  save_cloud(cloud, ascii_path, /*binary=*/false);
  const PointCloud ascii_loaded = load_cloud(ascii_path);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK(ascii_loaded.points[i] == cloud.points[i]);
}

TEST_CASE("truncated ply names the expected count") {
  const fs::path path = temp_dir() / "truncated.ply";
  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 5\n"
             "property float x\nproperty float y\nproperty float z\nend_header\n"
             "1 2 3\n");
  try {
    load_cloud(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }

  PointCloud cloud;
  cloud.points = {{1, 2, 3}, {4, 5, 6}};
  const fs::path bin_path = temp_dir() / "truncated_bin.ply";
  save_cloud(cloud, bin_path, true);
  // chop the last 8 bytes
  const auto size = fs::file_size(bin_path);
  fs::resize_file(bin_path, size - 8);
  CHECK_THROWS_AS(load_cloud(bin_path), ParseError);
}

TEST_CASE("unsupported ply layouts name the offender") {
  const fs::path path = temp_dir() / "colored.ply";
  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property uchar red\nend_header\n1 2 3 255\n");
  try {
    load_cloud(path);
    FAIL("expected UnsupportedLayoutError");
  } catch (const UnsupportedLayoutError& e) {
    CHECK(std::string(e.what()).find("red") != std::string::npos);
  }

  const fs::path faces = temp_dir() / "faces.ply";
  write_text(faces,
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "element face 2\nproperty list uchar int vertex_indices\nend_header\n1 2 3\n");
  CHECK_THROWS_AS(load_cloud(faces), UnsupportedLayoutError);

  const fs::path missing = temp_dir() / "missing_z.ply";
  write_text(missing,
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nend_header\n1 2\n");
  CHECK_THROWS_AS(load_cloud(missing), UnsupportedLayoutError);
}

TEST_CASE("pose files round-trip and validate") {
  const fs::path path = temp_dir() / "poses.json";
  write_text(path, R"({"format_version": 1, "poses": [[1, 0, 0, 0, 0, 0, 0]]})");
  const auto identity = load_poses(path);
  REQUIRE(identity.size() == 1);
  CHECK(identity[0].rotation.w() == 1.0);
  CHECK(identity[0].translation.norm() == 0.0);

  std::mt19937_64 rng(17);
  std::vector<Se3> poses;
  for (int i = 0; i < 5; ++i) poses.push_back(testutil::perturb(Se3::identity(), rng, 30.0, 2.0));
  save_poses(poses, path);
  const auto loaded = load_poses(path);
  REQUIRE(loaded.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(rotation_angle_deg(loaded[i].rotation, poses[i].rotation) < 1e-12);
    CHECK((loaded[i].translation - poses[i].translation).norm() == 0.0);
  }

  write_text(path, R"({"format_version": 1, "poses": [[2, 0, 0, 0, 0, 0, 0]]})");
  CHECK_THROWS_AS(load_poses(path), SchemaError);  // non-unit quaternion
  write_text(path, R"({"format_version": 2, "poses": []})");
  CHECK_THROWS_AS(load_poses(path), SchemaError);
  write_text(path, R"({"format_version": 1, "poses": [], "extra": 3})");
  CHECK_THROWS_AS(load_poses(path), SchemaError);  // unknown field
}

TEST_CASE("track files validate and report every violation") {
  const fs::path path = temp_dir() / "tracks.json";
  write_text(path, R"({"format_version": 1, "tracks": [
    {"point_id": 0, "observations": [{"frame": 0, "u": 1.0, "v": 2.0}]},
    {"point_id": 1, "observations": [{"frame": 0, "u": 1.0, "v": 2.0},
                                      {"frame": 0, "u": 2.0, "v": 3.0}]}
  ]})");
  try {
    load_tracks(path);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    REQUIRE(e.violations.size() == 2);  // min-2 violation AND duplicate frame
    CHECK(e.violations[0].find("at least 2") != std::string::npos);
    CHECK(e.violations[1].find("duplicate frame") != std::string::npos);
  }

  // sigma round trip: default 1 px when absent
  write_text(path, R"({"format_version": 1, "tracks": [
    {"point_id": 7, "observations": [{"frame": 0, "u": 1.0, "v": 2.0, "sigma": 0.5},
                                      {"frame": 2, "u": 5.0, "v": 6.0}]}
  ]})");
  const auto tracks = load_tracks(path);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].point_id == 7);
  CHECK(tracks[0].observations[0].pixel_cov(0, 0) == 0.25);
  CHECK(tracks[0].observations[1].pixel_cov(0, 0) == 1.0);

  save_tracks(tracks, path);
  const auto again = load_tracks(path);
  CHECK(again[0].observations[0].pixel_cov == tracks[0].observations[0].pixel_cov);
  CHECK(again[0].observations[1].pixel == tracks[0].observations[1].pixel);
}

TEST_CASE("synthetic dataset round-trips through the manifest") {
  const SyntheticDataset data = generate(testutil::small_courtyard(93, 0.5, 0.005));
  const PerturbedInitials initials = perturb_initials(data, {});
  const fs::path dir = temp_dir() / "dataset";
  fs::remove_all(dir);
  save_dataset(data, dir, initials);

  const DatasetManifest manifest = load_manifest(dir / "manifest.json");
  CHECK(manifest.image_width == data.gt_intrinsics.width);
  CHECK(manifest.cloud_files.size() == data.clouds.size());
  REQUIRE(manifest.ground_truth.has_value());
  CHECK(manifest.ground_truth->scale == data.gt_scale);

  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    const PointCloud cloud = load_cloud(dir / manifest.cloud_files[i]);
    REQUIRE(cloud.size() == data.clouds[i].size());
    for (std::size_t k = 0; k < cloud.size(); ++k)
      CHECK(cloud.points[k] == data.clouds[i].points[k]);
  }
  const auto tracks = load_tracks(dir / manifest.tracks_file);
  REQUIRE(tracks.size() == data.tracks.size());
  for (std::size_t j = 0; j < tracks.size(); ++j) {
    REQUIRE(tracks[j].observations.size() == data.tracks[j].observations.size());
    for (std::size_t k = 0; k < tracks[j].observations.size(); ++k) {
      CHECK(tracks[j].observations[k].pixel == data.tracks[j].observations[k].pixel);
      CHECK(tracks[j].observations[k].pixel_cov == data.tracks[j].observations[k].pixel_cov);
    }
  }
  const auto poses = load_poses(dir / manifest.camera_poses_file);
  for (std::size_t i = 0; i < poses.size(); ++i)
    CHECK(poses[i].translation == data.sfm_camera_poses[i].translation);
}

TEST_CASE("manifest schema errors are collected") {
  const fs::path dir = temp_dir() / "bad_manifest";
  fs::create_directories(dir);
  const fs::path path = dir / "manifest.json";
  write_text(path, R"({"format_version": 1, "image_width": 640,
    "clouds": ["absent.ply"], "tracks": "absent_tracks.json",
    "camera_poses": "absent_poses.json",
    "initial_intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "k1": 0, "k2": 0},
    "initial_extrinsics": [1, 0, 0, 0, 0, 0, 0],
    "surprise": true})");
  try {
    load_manifest(path);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.violations.size() >= 2);  // missing image_height + unknown field
  }
}

TEST_CASE("kitti adapters") {
  const fs::path bin = temp_dir() / "scan.bin";
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    const float records[8] = {1.0f, 2.0f, 3.0f, 0.5f, -4.0f, 0.25f, 10.0f, 0.9f};
    out.write(reinterpret_cast<const char*>(records), sizeof(records));
  }
  const PointCloud cloud = load_kitti_bin(bin);
  REQUIRE(cloud.size() == 2);
  CHECK(cloud.points[0] == Eigen::Vector3d(1.0f, 2.0f, 3.0f));
  CHECK(cloud.intensity[1] == 0.9f);

  {
    std::ofstream out(bin, std::ios::binary | std::ios::app);
    out << "xx";  // no longer a multiple of 16 bytes
  }
  CHECK_THROWS_AS(load_kitti_bin(bin), ParseError);

  const fs::path calib = temp_dir() / "calib.txt";
  write_text(calib,
             "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
             "P2: 718.856 0 607.1928 45.38 0 718.856 185.2157 -0.11 0 0 1 0.003\n"
             "Tr: 0 -1 0 0.01 0 0 -1 -0.05 1 0 0 -0.29\n");
  const KittiCalib parsed = load_kitti_calib(calib, 1241, 376);
  CHECK(parsed.intrinsics.fx == 718.856);
  CHECK(parsed.intrinsics.cy == 185.2157);
  const Eigen::Vector3d mapped = parsed.cam_from_velo * Eigen::Vector3d(1.0, 0.0, 0.0);
  CHECK((mapped - Eigen::Vector3d(0.01, -0.05, 1.0 - 0.29)).norm() < 1e-12);
}

TEST_CASE("ppm round trip") {
  ImageBuffer image;
  image.width = 3;
  image.height = 2;
  image.rgb = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180};
  const fs::path path = temp_dir() / "img.ppm";
  save_ppm(image, path);
  const ImageBuffer loaded = load_ppm(path);
  CHECK(loaded.width == 3);
  CHECK(loaded.height == 2);
  CHECK(loaded.rgb == image.rgb);
  CHECK(loaded.at(2, 1) == std::array<std::uint8_t, 3>{160, 170, 180});
}

TEST_CASE("ascii P3 ppm loads") {
  const fs::path path = temp_dir() / "ascii.ppm";
  write_text(path, "P3\n# comment\n2 1\n255\n255 0 0  0 0 255\n");
  const ImageBuffer image = load_ppm(path);
  CHECK(image.width == 2);
  CHECK(image.at(0, 0) == std::array<std::uint8_t, 3>{255, 0, 0});
  CHECK(image.at(1, 0) == std::array<std::uint8_t, 3>{0, 0, 255});
}

TEST_CASE("colorization against the rendered plane texture") {
  SceneSpec spec = testutil::small_courtyard(95);
  spec.lidar_density = 60.0;
  const SyntheticDataset data = generate(spec);
  const int frame = 2;
  const ImageBuffer image = render_plane_image(data, frame);

  const ColoredCloud colored = colorize(data.clouds[frame], image,
                                        data.gt_extrinsics.inverse(), data.gt_intrinsics);
  REQUIRE(colored.colored_count() > 1000);

  // camera center and plane geometry in scene coordinates, to identify the
  // surface each LiDAR point belongs to and whether another plane occludes it
  const Se3 camera_to_scene = data.scene_from_lidar_world *
                              data.gt_lidar_poses[frame].inverse() * data.gt_extrinsics;
  const Se3 body_to_scene = data.scene_from_lidar_world * data.gt_lidar_poses[frame].inverse();
  const Eigen::Vector3d camera_center = camera_to_scene.translation;

  int visible = 0, matched = 0;
  for (std::size_t i = 0; i < data.clouds[frame].size(); ++i) {
    if (!colored.colored[i]) continue;
    const Eigen::Vector3d in_scene = body_to_scene * data.clouds[frame].points[i];
    // generating plane = the one the point lies on
    int own = -1;
    for (int k = 0; k < static_cast<int>(data.spec.planes.size()); ++k) {
      if (std::abs(data.spec.planes[k].normal.dot(in_scene - data.spec.planes[k].center)) <
          1e-9) {
        own = k;
        break;
      }
    }
    REQUIRE(own >= 0);
    // occlusion check along the camera ray
    const Eigen::Vector3d dir = (in_scene - camera_center).normalized();
    const double t_point = (in_scene - camera_center).norm();
    bool occluded = false;
    for (const auto& plane : data.spec.planes) {
      const double denom = plane.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double t = plane.normal.dot(plane.center - camera_center) / denom;
      if (t <= 1e-6 || t >= t_point - 1e-6) continue;
      const Eigen::Vector3d hit = camera_center + t * dir - plane.center;
      if (std::abs(plane.u_axis.dot(hit)) <= plane.half_u &&
          std::abs(plane.v_axis().dot(hit)) <= plane.half_v) {
        occluded = true;
        break;
      }
    }
    if (occluded) continue;
    // skip silhouette boundaries where nearest-pixel quantization is ambiguous
    const auto pixel = project_checked(data.gt_extrinsics.inverse() *
                                           data.clouds[frame].points[i],
                                       data.gt_intrinsics);
    REQUIRE(pixel.has_value());
    const int px = static_cast<int>(std::lround(pixel->x()));
    const int py = static_cast<int>(std::lround(pixel->y()));
    bool uniform = px > 0 && py > 0 && px < image.width - 1 && py < image.height - 1;
    for (int dy = -1; uniform && dy <= 1; ++dy)
      for (int dx = -1; uniform && dx <= 1; ++dx)
        if (image.at(px + dx, py + dy) != image.at(px, py)) uniform = false;
    if (!uniform) continue;
    ++visible;
    if (colored.colors[i] == data.spec.planes[own].color) ++matched;
  }
  REQUIRE(visible > 500);
  CHECK(matched == visible);  // every unoccluded colored point gets its plane's color

  // a point behind the camera stays uncolored
  PointCloud behind;
  behind.points.push_back(data.gt_extrinsics * Eigen::Vector3d(0.0, 0.0, -2.0));
  const ColoredCloud behind_colored =
      colorize(behind, image, data.gt_extrinsics.inverse(), data.gt_intrinsics);
  CHECK(behind_colored.colored_count() == 0);

  // perturbing the extrinsics produces measurable color misplacement
  std::mt19937_64 rng(9);
  const Se3 wrong = testutil::perturb(data.gt_extrinsics, rng, 5.0, 0.0);
  const ColoredCloud misplaced =
      colorize(data.clouds[frame], image, wrong.inverse(), data.gt_intrinsics);
  int mismatched = 0, both = 0;
  for (std::size_t i = 0; i < colored.colors.size(); ++i) {
    if (!colored.colored[i] || !misplaced.colored[i]) continue;
    ++both;
    if (misplaced.colors[i] != colored.colors[i]) ++mismatched;
  }
  REQUIRE(both > 500);
  CHECK(mismatched > 0);
  CHECK(static_cast<double>(mismatched) / both > 0.05);
}

TEST_CASE("colored cloud export") {
  ColoredCloud cloud;
  cloud.points = {{1, 2, 3}, {4, 5, 6}};
  cloud.colors = {{255, 0, 0}, {0, 255, 0}};
  cloud.colored = {true, false};
  const fs::path path = temp_dir() / "colored.ply";
  save_colored_cloud(cloud, path);
  const std::string content = [&] {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  }();
  CHECK(content.find("element vertex 1") != std::string::npos);
  CHECK(content.find("property uchar red") != std::string::npos);
}

TEST_CASE("params files round trip") {
  CalibratedParams params;
  params.intrinsics = CameraIntrinsics{520.1, 509.7, 323.4, 239.2, -0.08, 0.012, 640, 480};
  std::mt19937_64 rng(19);
  params.extrinsics = testutil::perturb(Se3::identity(), rng, 20.0, 0.5);
  const fs::path path = temp_dir() / "params.json";
  save_params(params, path);
  const CalibratedParams loaded = load_params(path);
  CHECK(loaded.intrinsics.to_vector() == params.intrinsics.to_vector());
  CHECK(loaded.intrinsics.width == 640);
  CHECK((loaded.extrinsics.translation - params.extrinsics.translation).norm() == 0.0);
}

TEST_SUITE_END();
