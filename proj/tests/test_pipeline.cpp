#include <doctest.h>

#include <filesystem>

#include "plancalib/pipeline.hpp"
#include "test_util.hpp"

using namespace plancalib;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "plancalib_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CalibrationConfig fast_config() {
  CalibrationConfig cfg;
  cfg.metric_stride = 8;
  return cfg;
}

SceneSpec fast_scene(std::uint64_t seed, double pixel_sigma = 0.5, double lidar_sigma = 0.005,
                     double outliers = 0.0) {
  SceneSpec spec = testutil::small_courtyard(seed, pixel_sigma, lidar_sigma, outliers);
  spec.features_per_plane = 60;
  spec.trajectory.resize(5);
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("pipeline");

TEST_CASE("config json round trip rejects unknown keys") {
  CalibrationConfig cfg;
  cfg.joint.alpha = 2.5;
  cfg.init.search_radius = 1.75;
  cfg.threads = 3;
  const std::string text = config_to_json(cfg);
  const CalibrationConfig loaded = config_from_json(text);
  CHECK(loaded.joint.alpha == 2.5);
  CHECK(loaded.init.search_radius == 1.75);
  CHECK(loaded.threads == 3);
  CHECK(loaded.joint.pairing.threads == 3);  // derived
  CHECK(config_to_json(loaded) == text);

  CHECK_THROWS_AS(config_from_json(R"({"format_version": 1, "bogus": 1})"), SchemaError);
  CHECK_THROWS_AS(config_from_json(R"({"joint": {"alpja": 1.0}})"), SchemaError);

  // partial override keeps the base values
  CalibrationConfig base;
  base.joint.alpha = 7.0;
  const CalibrationConfig merged =
      config_from_json(R"({"init": {"max_outer": 9}})", base);
  CHECK(merged.joint.alpha == 7.0);
  CHECK(merged.init.max_outer == 9);
}

TEST_CASE("pipeline runs end to end and the report round-trips") {
  const SyntheticDataset data = generate(fast_scene(301));
  const PerturbedInitials initials = perturb_initials(data, {});
  const PipelineInput input = input_from_dataset(data, initials);
  const RunReport report = run_calibration(input, fast_config());

  CHECK(report.status == "ok");
  REQUIRE(report.evaluation.has_value());
  CHECK(report.evaluation->final_error.rotation_deg < 0.5);
  CHECK(report.evaluation->final_error.translation_cm < 6.0);  // slim smoke scene, accuracy proper is the acceptance suite's job
  CHECK(report.timings.has_value());

  // serialized report re-loads to identical values
  const std::string text = serialize_report(report);
  const RunReport loaded = parse_report(text);
  CHECK(serialize_report(loaded) == text);
}

TEST_CASE("in-memory and on-disk paths produce bit-identical reports") {
  const SyntheticDataset data = generate(fast_scene(302));
  const PerturbedInitials initials = perturb_initials(data, {});
  CalibrationConfig cfg = fast_config();
  cfg.emit_timings = false;

  const RunReport in_memory = run_calibration(input_from_dataset(data, initials), cfg);

  const fs::path dir = temp_dir("roundtrip");
  save_dataset(data, dir, initials);
  const RunReport from_disk = run_calibration(load_pipeline_input(dir / "manifest.json"), cfg);

  CHECK(serialize_report(in_memory) == serialize_report(from_disk));
}

TEST_CASE("checkpoints allow re-running only the joint stage") {
  const SyntheticDataset data = generate(fast_scene(303));
  const PerturbedInitials initials = perturb_initials(data, {});
  const PipelineInput input = input_from_dataset(data, initials);
  CalibrationConfig cfg = fast_config();
  cfg.emit_timings = false;

  const fs::path dir = temp_dir("checkpoints");
  PipelineOptions full;
  full.checkpoint_dir = dir;
  const RunReport first = run_calibration(input, cfg, full);

  PipelineOptions resume;
  resume.checkpoint_dir = dir;
  resume.from = PipelineStage::kJoint;
  const RunReport resumed = run_calibration(input, cfg, resume);

  CHECK(resumed.final_params.intrinsics.to_vector() ==
        first.final_params.intrinsics.to_vector());
  CHECK((resumed.final_params.extrinsics.translation -
         first.final_params.extrinsics.translation)
            .norm() == 0.0);
  CHECK(resumed.final_scale == first.final_scale);
  CHECK(resumed.joint.final_cost == first.joint.final_cost);
}

TEST_CASE("degenerate scene is reported with the weak direction") {
  SceneSpec spec = default_scene(SceneKind::kDegenerateZ);
  spec.seed = 304;
  spec.lidar_density = 40.0;
  spec.features_per_plane = 40;
  spec.noise = {0.5, 0.005, 0.0};
  const SyntheticDataset data = generate(spec);
  const PerturbedInitials initials = perturb_initials(data, {});
  const PipelineInput input = input_from_dataset(data, initials);  // gt lidar poses referenced

  const RunReport report = run_calibration(input, fast_config());
  CHECK(report.status == "degenerate");
  CHECK(report.joint.diagnosis.degenerate);
  CHECK(report.joint.diagnosis.weak_direction.norm() == doctest::Approx(1.0));
}

TEST_CASE("gauge: first camera and LiDAR poses pinned through the pipeline") {
  const SyntheticDataset data = generate(fast_scene(305));
  const PerturbedInitials initials = perturb_initials(data, {});
  const PipelineInput input = input_from_dataset(data, initials);
  const RunReport report = run_calibration(input, fast_config());
  CHECK(report.status == "ok");
  // the reported init extrinsics correspond to camera world == camera 0
  CHECK(report.init.iterations.size() >= 1);
}

TEST_SUITE_END();
