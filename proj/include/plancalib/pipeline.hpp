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
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plancalib/io.hpp"
#include "plancalib/joint.hpp"
#include "plancalib/lidar_pose.hpp"
#include "plancalib/metrics.hpp"
#include "plancalib/scale_init.hpp"
#include "plancalib/synth.hpp"
#include "plancalib/visual_ba.hpp"

namespace plancalib {

struct PipelineInput {
  std::vector<PointCloud> clouds;
  std::vector<FeatureTrack> tracks;
  CameraIntrinsics initial_intrinsics;
  Se3 initial_extrinsics;
  std::vector<Se3> camera_poses;  // SfM front-end output, scale-ambiguous
  std::optional<std::vector<Se3>> lidar_poses;  // metric; absent -> scan matching
  std::optional<double> initial_scale;  // absent -> linear scale recovery
  std::optional<GroundTruthBlock> ground_truth;
};

PipelineInput input_from_dataset(const SyntheticDataset& data,
                                 const PerturbedInitials& initials,
                                 bool use_gt_lidar_poses = false,
                                 bool include_initial_scale = true);
PipelineInput load_pipeline_input(const std::filesystem::path& manifest_path);

struct CalibrationConfig {
  int threads = 1;
  bool emit_timings = true;
  int metric_stride = 4;  // for the in-report evaluation
  IcpConfig icp;
  TrajectoryRefineConfig trajectory;
  VisualBaConfig visual;
  InitConfig init;
  JointConfig joint;
};

/// Round-trip of the tunable subset; unknown keys are rejected with a
/// SchemaError. Values absent from the JSON keep the defaults in `base`.
std::string config_to_json(const CalibrationConfig& config);
CalibrationConfig config_from_json(const std::string& text,
                                   const CalibrationConfig& base = {});
CalibrationConfig load_config(const std::filesystem::path& path,
                              const CalibrationConfig& base = {});

struct LidarStageReport {
  std::string source;  // "provided" or "icp"
  int sweeps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = true;
};

struct VisualStageReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  bool converged = false;
  double rms_px = 0.0;
  int dropped_tracks = 0;
  int dropped_observations = 0;
  int points = 0;
  CameraIntrinsics intrinsics;
  std::vector<int> dropped_track_ids;
  std::vector<IterationRecord> trace;
};

struct InitStageReport {
  std::optional<double> recovered_scale;  // linear system output when it ran
  double scale = 1.0;
  Se3 extrinsics;
  bool converged = false;
  std::vector<InitIteration> iterations;
};

struct JointStageReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double point_plane_cost = 0.0;
  double reprojection_cost = 0.0;
  int pairs = 0;
  int observations = 0;
  int rebuilds = 0;
  bool converged = false;
  CorrespondenceReport correspondence;
  std::vector<int> discarded_points;
  DegeneracyDiagnosis diagnosis;
  std::vector<IterationRecord> trace;
  std::vector<int> segment_sizes;
};

struct EvaluationReport {
  double visual_intrinsic_px = 0.0;  // after the visual-only stage
  ExtrinsicError init_error;
  double init_scale_error = 0.0;  // |s - gt| / gt
  CalibrationError final_error;
};

struct StageTimings {
  double lidar_ms = 0.0;
  double visual_ms = 0.0;
  double init_ms = 0.0;
  double joint_ms = 0.0;
  double total_ms = 0.0;
};

struct RunReport {
  std::string status;  // "ok" | "not_converged" | "degenerate"
  CalibrationConfig config;
  LidarStageReport lidar;
  VisualStageReport visual;
  InitStageReport init;
  JointStageReport joint;
  CalibratedParams final_params;
  double final_scale = 1.0;
  std::optional<EvaluationReport> evaluation;
  std::optional<StageTimings> timings;  // present iff config.emit_timings
};

std::string serialize_report(const RunReport& report);
RunReport parse_report(const std::string& text);
void save_report(const RunReport& report, const std::filesystem::path& path);
RunReport load_report(const std::filesystem::path& path);

enum class PipelineStage { kLidar = 0, kVisual = 1, kInit = 2, kJoint = 3 };
PipelineStage pipeline_stage_from_name(const std::string& name);

struct PipelineOptions {
  PipelineStage from = PipelineStage::kLidar;
  /// When set, per-stage checkpoints are written here; stages before `from`
  /// are loaded from it instead of re-running.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Full pipeline: LiDAR poses (scan matching or provided) -> visual bundle
/// adjustment -> scale/extrinsics initialization -> joint plane-constrained
/// refinement, with evaluation against the ground truth when present.
/// A degenerate joint stage is reported with status "degenerate" rather than
/// thrown.
RunReport run_calibration(const PipelineInput& input, const CalibrationConfig& config,
                          const PipelineOptions& options = {});

}  // namespace plancalib
