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
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "plancalib/metrics.hpp"
#include "plancalib/pipeline.hpp"

namespace {

using namespace plancalib;

// Exit codes: 0 ok, 2 usage, 3 not converged, 4 degenerate, 5 io/parse.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitDegenerate = 4;
constexpr int kExitIo = 5;

struct SynthArgs {
  std::string scene = "courtyard";
  std::string out;
  std::uint64_t seed = 1;
  int frames = 0;
  double pixel_noise = -1.0;
  double lidar_noise = -1.0;
  double outlier_fraction = -1.0;
  double density = 0.0;
  int features = 0;
  bool exact_init = false;
  double perturb_rot_deg = 5.0;
  double perturb_trans_m = 0.40;
  double perturb_scale = 1.2;
  double perturb_focal = 1.02;
  double perturb_principal_px = 5.0;
  std::uint64_t perturb_seed = 99;
  bool omit_initial_scale = false;
};

int cmd_synth(const SynthArgs& args) {
  SceneSpec spec = default_scene(scene_kind_from_name(args.scene));
  spec.seed = args.seed;
  if (args.frames > 0) {
    if (args.frames > spec.frames())
      throw Error("scene supports at most " + std::to_string(spec.frames()) + " frames");
    spec.trajectory.resize(args.frames);
  }
  if (args.pixel_noise >= 0.0) spec.noise.pixel_sigma = args.pixel_noise;
  if (args.lidar_noise >= 0.0) spec.noise.lidar_sigma = args.lidar_noise;
  if (args.outlier_fraction >= 0.0) spec.noise.outlier_fraction = args.outlier_fraction;
  if (args.density > 0.0) spec.lidar_density = args.density;
  if (args.features > 0) spec.features_per_plane = args.features;

  const SyntheticDataset data = generate(spec);
  InitialPerturbation perturbation;
  perturbation.rotation_deg = args.perturb_rot_deg;
  perturbation.translation_m = args.perturb_trans_m;
  perturbation.scale_factor = args.perturb_scale;
  perturbation.focal_factor = args.perturb_focal;
  perturbation.principal_shift_px = args.perturb_principal_px;
  perturbation.seed = args.perturb_seed;
  const PerturbedInitials initials =
      args.exact_init ? exact_initials(data) : perturb_initials(data, perturbation);
  save_dataset(data, args.out, initials, /*include_ground_truth=*/true,
               /*include_initial_scale=*/!args.omit_initial_scale);

  int observations = 0;
  for (const auto& track : data.tracks) observations += track.observations.size();
  std::printf("scene %s: %d frames, %zu tracks (%d observations), %zu planes\n",
              spec.name.c_str(), spec.frames(), data.tracks.size(), observations,
              spec.planes.size());
  std::printf("wrote %s\n", (std::filesystem::path(args.out) / "manifest.json").c_str());
  return kExitOk;
}

struct CalibrateArgs {
  std::string manifest;
  std::string out;
  std::string config_file;
  std::string from = "lidar";
  double alpha = -1.0;
  int threads = 0;
  int stride = 0;
  bool no_timings = false;
};

int cmd_calibrate(const CalibrateArgs& args) {
  CalibrationConfig config;
  if (!args.config_file.empty()) config = load_config(args.config_file, config);
  if (args.alpha >= 0.0) config.joint.alpha = args.alpha;
  if (args.threads > 0) {
    config.threads = args.threads;
    config.init.threads = args.threads;
    config.joint.pairing.threads = args.threads;
  }
  if (args.stride > 0) config.metric_stride = args.stride;
  if (args.no_timings) config.emit_timings = false;

  const PipelineInput input = load_pipeline_input(args.manifest);
  PipelineOptions options;
  options.from = pipeline_stage_from_name(args.from);
  options.checkpoint_dir = std::filesystem::path(args.out) / "checkpoints";

  const RunReport report = run_calibration(input, config, options);
  const std::filesystem::path out_dir(args.out);
  save_report(report, out_dir / "report.json");
  save_params(report.final_params, out_dir / "calibrated_params.json");

  std::printf("status: %s\n", report.status.c_str());
  std::printf("scale: %.9g\n", report.final_scale);
  if (report.evaluation) {
    std::printf("errors vs ground truth: %.4f deg, %.4f cm, %.4f px\n",
                report.evaluation->final_error.rotation_deg,
                report.evaluation->final_error.translation_cm,
                report.evaluation->final_error.intrinsic_px);
  }
  if (report.joint.diagnosis.degenerate) {
    std::printf("degenerate direction (camera frame): [%.4f, %.4f, %.4f]\n",
                report.joint.diagnosis.weak_direction.x(),
                report.joint.diagnosis.weak_direction.y(),
                report.joint.diagnosis.weak_direction.z());
  }
  std::printf("wrote %s\n", (out_dir / "report.json").c_str());

  if (report.status == "degenerate") return kExitDegenerate;
  if (report.status == "not_converged") return kExitNotConverged;
  return kExitOk;
}

struct EvaluateArgs {
  std::string params;
  std::string gt;
  std::string out;
  int stride = 4;
  int threads = 1;
};

int cmd_evaluate(const EvaluateArgs& args) {
  const CalibratedParams estimate = load_params(args.params);
  const CalibratedParams gt = load_params(args.gt);
  const ExtrinsicError ext = extrinsic_error(estimate.extrinsics, gt.extrinsics);
  const double intrinsic_px =
      intrinsic_error(estimate.intrinsics, gt.intrinsics, args.stride, args.threads);
  std::printf("rotation_deg: %.9g\n", ext.rotation_deg);
  std::printf("translation_cm: %.9g\n", ext.translation_cm);
  std::printf("intrinsic_px: %.9g\n", intrinsic_px);
  if (!args.out.empty()) {
    std::ofstream file(args.out, std::ios::trunc);
    file << "{\n  \"format_version\": 1,\n";
    char line[160];
    std::snprintf(line, sizeof(line), "  \"rotation_deg\": %.17g,\n", ext.rotation_deg);
    file << line;
    std::snprintf(line, sizeof(line), "  \"translation_cm\": %.17g,\n", ext.translation_cm);
    file << line;
    std::snprintf(line, sizeof(line), "  \"intrinsic_px\": %.17g\n}\n", intrinsic_px);
    file << line;
  }
  return kExitOk;
}

struct ColorizeArgs {
  std::string cloud;
  std::string image;
  std::string params;
  std::string out;
};

int cmd_colorize(const ColorizeArgs& args) {
  const PointCloud cloud = load_cloud(args.cloud);
  const ImageBuffer image = load_ppm(args.image);
  const CalibratedParams params = load_params(args.params);
  const ColoredCloud colored =
      colorize(cloud, image, params.extrinsics.inverse(), params.intrinsics);
  save_colored_cloud(colored, args.out);
  std::printf("colorized %d of %zu points -> %s\n", colored.colored_count(), cloud.size(),
              args.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plancalib: targetless joint LiDAR-camera calibration"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--scene", synth_args.scene, "courtyard | corridor | degenerate_z");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--seed", synth_args.seed, "rng seed");
  synth->add_option("--frames", synth_args.frames, "number of frames (<= scene default)");
  synth->add_option("--pixel-noise", synth_args.pixel_noise, "feature noise, px");
  synth->add_option("--lidar-noise", synth_args.lidar_noise, "range noise, m");
  synth->add_option("--outlier-fraction", synth_args.outlier_fraction, "outlier track share");
  synth->add_option("--density", synth_args.density, "LiDAR points per m^2");
  synth->add_option("--features", synth_args.features, "feature points per plane");
  synth->add_flag("--exact-init", synth_args.exact_init,
                  "write ground-truth initial values instead of perturbed ones");
  synth->add_option("--perturb-rot-deg", synth_args.perturb_rot_deg, "initial rotation error");
  synth->add_option("--perturb-trans-m", synth_args.perturb_trans_m,
                    "initial translation error");
  synth->add_option("--perturb-scale", synth_args.perturb_scale, "initial scale factor");
  synth->add_option("--perturb-focal", synth_args.perturb_focal, "initial focal factor");
  synth->add_option("--perturb-principal-px", synth_args.perturb_principal_px,
                    "initial principal point shift");
  synth->add_option("--perturb-seed", synth_args.perturb_seed, "perturbation rng seed");
  synth->add_flag("--omit-initial-scale", synth_args.omit_initial_scale,
                  "leave scale recovery to the linear system");

  CalibrateArgs calibrate_args;
  CLI::App* calibrate = app.add_subcommand("calibrate", "run the calibration pipeline");
  calibrate->add_option("--manifest", calibrate_args.manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate->add_option("--out", calibrate_args.out, "output directory")->required();
  calibrate->add_option("--config", calibrate_args.config_file, "config JSON")
      ->check(CLI::ExistingFile);
  calibrate->add_option("--from", calibrate_args.from,
                        "start stage: lidar | visual | init | joint");
  calibrate->add_option("--alpha", calibrate_args.alpha, "point-to-plane weight");
  calibrate->add_option("--threads", calibrate_args.threads, "worker cap");
  calibrate->add_option("--stride", calibrate_args.stride, "evaluation grid stride");
  calibrate->add_flag("--no-timings", calibrate_args.no_timings,
                      "deterministic report without timings");

  EvaluateArgs evaluate_args;
  CLI::App* evaluate = app.add_subcommand("evaluate", "compare parameters to ground truth");
  evaluate->add_option("--params", evaluate_args.params, "calibrated params JSON")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--gt", evaluate_args.gt, "ground-truth params JSON")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--out", evaluate_args.out, "write errors as JSON");
  evaluate->add_option("--stride", evaluate_args.stride, "pixel grid stride");
  evaluate->add_option("--threads", evaluate_args.threads, "worker cap");

  ColorizeArgs colorize_args;
  CLI::App* colorize = app.add_subcommand("colorize", "project image colors onto a cloud");
  colorize->add_option("--cloud", colorize_args.cloud, "PLY cloud (LiDAR frame)")
      ->required()
      ->check(CLI::ExistingFile);
  colorize->add_option("--image", colorize_args.image, "PPM image (camera frame)")
      ->required()
      ->check(CLI::ExistingFile);
  colorize->add_option("--params", colorize_args.params, "calibrated params JSON")
      ->required()
      ->check(CLI::ExistingFile);
  colorize->add_option("--out", colorize_args.out, "output PLY")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (calibrate->parsed()) return cmd_calibrate(calibrate_args);
    if (evaluate->parsed()) return cmd_evaluate(evaluate_args);
    if (colorize->parsed()) return cmd_colorize(colorize_args);
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const UnsupportedLayoutError& e) {
    std::cerr << "unsupported layout: " << e.what() << "\n";
    return kExitIo;
  } catch (const DegenerateProblemError& e) {
    std::cerr << "degenerate problem: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    // invalid scene specs and stage names are argument mistakes
    return synth->parsed() ? kExitUsage : 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
