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
#include "plancalib/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace plancalib {

using nlohmann::json;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

json pose_to_json(const Se3& pose) {
  return json::array({pose.rotation.w(), pose.rotation.x(), pose.rotation.y(),
                      pose.rotation.z(), pose.translation.x(), pose.translation.y(),
                      pose.translation.z()});
}

Se3 pose_from_json(const json& row) {
  Se3 pose;
  pose.rotation =
      Eigen::Quaterniond(row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                         row[3].get<double>());
  pose.translation =
      Eigen::Vector3d(row[4].get<double>(), row[5].get<double>(), row[6].get<double>());
  return pose;
}

json intrinsics_to_json(const CameraIntrinsics& D) {
  return json{{"fx", D.fx}, {"fy", D.fy}, {"cx", D.cx},         {"cy", D.cy},
              {"k1", D.k1}, {"k2", D.k2}, {"width", D.width},   {"height", D.height}};
}

CameraIntrinsics intrinsics_from_json(const json& object) {
  CameraIntrinsics D;
  D.fx = object.at("fx").get<double>();
  D.fy = object.at("fy").get<double>();
  D.cx = object.at("cx").get<double>();
  D.cy = object.at("cy").get<double>();
  D.k1 = object.at("k1").get<double>();
  D.k2 = object.at("k2").get<double>();
  D.width = object.at("width").get<int>();
  D.height = object.at("height").get<int>();
  return D;
}

json trace_to_json(const std::vector<IterationRecord>& trace) {
  json out = json::array();
  for (const auto& it : trace)
    out.push_back(json::array({it.cost, it.lambda, it.step_norm, it.accepted}));
  return out;
}

std::vector<IterationRecord> trace_from_json(const json& array) {
  std::vector<IterationRecord> trace;
  for (const auto& row : array)
    trace.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                     row[3].get<bool>()});
  return trace;
}

void apply_key(const json& object, const char* key, double& value) {
  if (object.contains(key)) value = object.at(key).get<double>();
}
void apply_key(const json& object, const char* key, int& value) {
  if (object.contains(key)) value = object.at(key).get<int>();
}
void apply_key(const json& object, const char* key, bool& value) {
  if (object.contains(key)) value = object.at(key).get<bool>();
}

void reject_unknown(const json& object, const std::string& where,
                    const std::vector<std::string>& known, std::vector<std::string>& violations) {
  for (const auto& item : object.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      violations.push_back(where + ": unknown field '" + item.key() + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string config_to_json(const CalibrationConfig& config) {
  json root;
  root["format_version"] = 1;
  root["threads"] = config.threads;
  root["emit_timings"] = config.emit_timings;
  root["metric_stride"] = config.metric_stride;
  root["icp"] = {{"max_iterations", config.icp.max_iterations},
                 {"huber_delta", config.icp.huber_delta},
                 {"neighbors", config.icp.neighbors},
                 {"lambda_ratio", config.icp.lambda_ratio},
                 {"search_radius", config.icp.search_radius},
                 {"min_overlap", config.icp.min_overlap}};
  root["trajectory"] = {{"max_sweeps", config.trajectory.max_sweeps}};
  root["visual"] = {{"optimize_intrinsics", config.visual.optimize_intrinsics},
                    {"tie_focal", config.visual.tie_focal},
                    {"anchor_scale_gauge", config.visual.anchor_scale_gauge},
                    {"max_iterations", config.visual.solver.max_iterations}};
  root["init"] = {{"max_outer", config.init.max_outer},
                  {"huber_delta", config.init.huber_delta},
                  {"huber_delta_initial", config.init.huber_delta_initial},
                  {"neighbors", config.init.neighbors},
                  {"lambda_ratio", config.init.lambda_ratio},
                  {"search_radius", config.init.search_radius},
                  {"scale_prior_sigma", config.init.scale_prior_sigma},
                  {"extrinsic_rotation_prior_rad", config.init.extrinsic_rotation_prior_rad},
                  {"extrinsic_translation_prior_m", config.init.extrinsic_translation_prior_m}};
  root["joint"] = {{"alpha", config.joint.alpha},
                   {"alpha_auto_balance", config.joint.alpha_auto_balance},
                   {"optimize_intrinsics", config.joint.optimize_intrinsics},
                   {"tie_focal", config.joint.tie_focal},
                   {"rebuild_every", config.joint.rebuild_every},
                   {"freeze_pairs", config.joint.freeze_pairs},
                   {"max_iterations", config.joint.max_iterations},
                   {"rebuild_cost_tolerance", config.joint.rebuild_cost_tolerance},
                   {"degeneracy_ratio", config.joint.degeneracy_ratio},
                   {"neighbors", config.joint.pairing.neighbors},
                   {"lambda_ratio", config.joint.pairing.lambda_ratio},
                   {"search_radius", config.joint.pairing.search_radius},
                   {"distance_threshold", config.joint.pairing.distance_threshold}};
  return root.dump(2) + "\n";
}

CalibrationConfig config_from_json(const std::string& text, const CalibrationConfig& base) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  CalibrationConfig config = base;
  std::vector<std::string> violations;
  reject_unknown(root, "config",
                 {"format_version", "threads", "emit_timings", "metric_stride", "icp",
                  "trajectory", "visual", "init", "joint"},
                 violations);
  if (root.contains("format_version") && root["format_version"].get<int>() != 1)
    violations.push_back("config: format_version must be 1");

  apply_key(root, "threads", config.threads);
  apply_key(root, "emit_timings", config.emit_timings);
  apply_key(root, "metric_stride", config.metric_stride);
  if (root.contains("icp")) {
    const json& icp = root["icp"];
    reject_unknown(icp, "config.icp",
                   {"max_iterations", "huber_delta", "neighbors", "lambda_ratio",
                    "search_radius", "min_overlap"},
                   violations);
    apply_key(icp, "max_iterations", config.icp.max_iterations);
    apply_key(icp, "huber_delta", config.icp.huber_delta);
    apply_key(icp, "neighbors", config.icp.neighbors);
    apply_key(icp, "lambda_ratio", config.icp.lambda_ratio);
    apply_key(icp, "search_radius", config.icp.search_radius);
    apply_key(icp, "min_overlap", config.icp.min_overlap);
  }
  if (root.contains("trajectory")) {
    reject_unknown(root["trajectory"], "config.trajectory", {"max_sweeps"}, violations);
    apply_key(root["trajectory"], "max_sweeps", config.trajectory.max_sweeps);
  }
  if (root.contains("visual")) {
    const json& visual = root["visual"];
    reject_unknown(visual, "config.visual",
                   {"optimize_intrinsics", "tie_focal", "anchor_scale_gauge", "max_iterations"},
                   violations);
    apply_key(visual, "optimize_intrinsics", config.visual.optimize_intrinsics);
    apply_key(visual, "tie_focal", config.visual.tie_focal);
    apply_key(visual, "anchor_scale_gauge", config.visual.anchor_scale_gauge);
    apply_key(visual, "max_iterations", config.visual.solver.max_iterations);
  }
  if (root.contains("init")) {
    const json& init = root["init"];
    reject_unknown(init, "config.init",
                   {"max_outer", "huber_delta", "huber_delta_initial", "neighbors",
                    "lambda_ratio", "search_radius", "scale_prior_sigma",
                    "extrinsic_rotation_prior_rad", "extrinsic_translation_prior_m"},
                   violations);
    apply_key(init, "max_outer", config.init.max_outer);
    apply_key(init, "huber_delta", config.init.huber_delta);
    apply_key(init, "huber_delta_initial", config.init.huber_delta_initial);
    apply_key(init, "neighbors", config.init.neighbors);
    apply_key(init, "lambda_ratio", config.init.lambda_ratio);
    apply_key(init, "search_radius", config.init.search_radius);
    apply_key(init, "scale_prior_sigma", config.init.scale_prior_sigma);
    apply_key(init, "extrinsic_rotation_prior_rad", config.init.extrinsic_rotation_prior_rad);
    apply_key(init, "extrinsic_translation_prior_m", config.init.extrinsic_translation_prior_m);
  }
  if (root.contains("joint")) {
    const json& joint = root["joint"];
    reject_unknown(joint, "config.joint",
                   {"alpha", "alpha_auto_balance", "optimize_intrinsics", "tie_focal",
                    "rebuild_every", "freeze_pairs", "max_iterations",
                    "rebuild_cost_tolerance", "degeneracy_ratio", "neighbors", "lambda_ratio",
                    "search_radius", "distance_threshold"},
                   violations);
    apply_key(joint, "alpha", config.joint.alpha);
    apply_key(joint, "alpha_auto_balance", config.joint.alpha_auto_balance);
    apply_key(joint, "optimize_intrinsics", config.joint.optimize_intrinsics);
    apply_key(joint, "tie_focal", config.joint.tie_focal);
    apply_key(joint, "rebuild_every", config.joint.rebuild_every);
    apply_key(joint, "freeze_pairs", config.joint.freeze_pairs);
    apply_key(joint, "max_iterations", config.joint.max_iterations);
    apply_key(joint, "rebuild_cost_tolerance", config.joint.rebuild_cost_tolerance);
    apply_key(joint, "degeneracy_ratio", config.joint.degeneracy_ratio);
    apply_key(joint, "neighbors", config.joint.pairing.neighbors);
    apply_key(joint, "lambda_ratio", config.joint.pairing.lambda_ratio);
    apply_key(joint, "search_radius", config.joint.pairing.search_radius);
    apply_key(joint, "distance_threshold", config.joint.pairing.distance_threshold);
  }
  if (!violations.empty()) throw SchemaError("config", violations);

  // derived settings shared across stages
  config.init.threads = config.threads;
  config.joint.pairing.threads = config.threads;
  return config;
}

CalibrationConfig load_config(const std::filesystem::path& path,
                              const CalibrationConfig& base) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return config_from_json(buffer.str(), base);
}

// ---------------------------------------------------------------------------
// Reports

std::string serialize_report(const RunReport& report) {
  json root;
  root["format_version"] = 1;
  root["status"] = report.status;
  root["config"] = json::parse(config_to_json(report.config));

  root["lidar"] = {{"source", report.lidar.source},
                   {"sweeps", report.lidar.sweeps},
                   {"initial_cost", report.lidar.initial_cost},
                   {"final_cost", report.lidar.final_cost},
                   {"converged", report.lidar.converged}};

  root["visual"] = {{"initial_cost", report.visual.initial_cost},
                    {"final_cost", report.visual.final_cost},
                    {"iterations", report.visual.iterations},
                    {"accepted_steps", report.visual.accepted_steps},
                    {"converged", report.visual.converged},
                    {"rms_px", report.visual.rms_px},
                    {"dropped_tracks", report.visual.dropped_tracks},
                    {"dropped_observations", report.visual.dropped_observations},
                    {"points", report.visual.points},
                    {"intrinsics", intrinsics_to_json(report.visual.intrinsics)},
                    {"dropped_track_ids", report.visual.dropped_track_ids},
                    {"trace", trace_to_json(report.visual.trace)}};

  json init_iterations = json::array();
  for (const auto& it : report.init.iterations)
    init_iterations.push_back({{"scale", it.scale},
                               {"extrinsics", pose_to_json(it.extrinsics)},
                               {"cost", it.cost},
                               {"valid_pairs", it.valid_pairs}});
  root["init"] = {{"scale", report.init.scale},
                  {"extrinsics", pose_to_json(report.init.extrinsics)},
                  {"converged", report.init.converged},
                  {"iterations", std::move(init_iterations)}};
  if (report.init.recovered_scale) root["init"]["recovered_scale"] = *report.init.recovered_scale;

  root["joint"] = {
      {"initial_cost", report.joint.initial_cost},
      {"final_cost", report.joint.final_cost},
      {"point_plane_cost", report.joint.point_plane_cost},
      {"reprojection_cost", report.joint.reprojection_cost},
      {"pairs", report.joint.pairs},
      {"observations", report.joint.observations},
      {"rebuilds", report.joint.rebuilds},
      {"converged", report.joint.converged},
      {"correspondence",
       {{"valid", report.joint.correspondence.valid},
        {"ratio_rejected", report.joint.correspondence.ratio_rejected},
        {"distance_rejected", report.joint.correspondence.distance_rejected},
        {"no_neighbors", report.joint.correspondence.no_neighbors},
        {"zero_variance", report.joint.correspondence.zero_variance},
        {"discarded_points", report.joint.correspondence.discarded_points}}},
      {"discarded_points", report.joint.discarded_points},
      {"degeneracy",
       {{"degenerate", report.joint.diagnosis.degenerate},
        {"conditioning_ratio", report.joint.diagnosis.conditioning_ratio},
        {"weak_direction",
         {report.joint.diagnosis.weak_direction.x(), report.joint.diagnosis.weak_direction.y(),
          report.joint.diagnosis.weak_direction.z()}}}},
      {"trace", trace_to_json(report.joint.trace)},
      {"segment_sizes", report.joint.segment_sizes}};

  root["final"] = {{"intrinsics", intrinsics_to_json(report.final_params.intrinsics)},
                   {"extrinsics", pose_to_json(report.final_params.extrinsics)},
                   {"scale", report.final_scale}};

  if (report.evaluation) {
    const auto& e = *report.evaluation;
    root["evaluation"] = {
        {"visual_intrinsic_px", e.visual_intrinsic_px},
        {"init",
         {{"rotation_deg", e.init_error.rotation_deg},
          {"translation_cm", e.init_error.translation_cm},
          {"scale_error", e.init_scale_error}}},
        {"final",
         {{"rotation_deg", e.final_error.rotation_deg},
          {"translation_cm", e.final_error.translation_cm},
          {"intrinsic_px", e.final_error.intrinsic_px}}}};
  }
  if (report.timings) {
    root["timings_ms"] = {{"lidar", report.timings->lidar_ms},
                          {"visual", report.timings->visual_ms},
                          {"init", report.timings->init_ms},
                          {"joint", report.timings->joint_ms},
                          {"total", report.timings->total_ms}};
  }
  return root.dump(2) + "\n";
}

RunReport parse_report(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  RunReport report;
  report.status = root.at("status").get<std::string>();
  report.config = config_from_json(root.at("config").dump());

  const json& lidar = root.at("lidar");
  report.lidar.source = lidar.at("source").get<std::string>();
  report.lidar.sweeps = lidar.at("sweeps").get<int>();
  report.lidar.initial_cost = lidar.at("initial_cost").get<double>();
  report.lidar.final_cost = lidar.at("final_cost").get<double>();
  report.lidar.converged = lidar.at("converged").get<bool>();

  const json& visual = root.at("visual");
  report.visual.initial_cost = visual.at("initial_cost").get<double>();
  report.visual.final_cost = visual.at("final_cost").get<double>();
  report.visual.iterations = visual.at("iterations").get<int>();
  report.visual.accepted_steps = visual.at("accepted_steps").get<int>();
  report.visual.converged = visual.at("converged").get<bool>();
  report.visual.rms_px = visual.at("rms_px").get<double>();
  report.visual.dropped_tracks = visual.at("dropped_tracks").get<int>();
  report.visual.dropped_observations = visual.at("dropped_observations").get<int>();
  report.visual.points = visual.at("points").get<int>();
  report.visual.intrinsics = intrinsics_from_json(visual.at("intrinsics"));
  report.visual.dropped_track_ids = visual.at("dropped_track_ids").get<std::vector<int>>();
  report.visual.trace = trace_from_json(visual.at("trace"));

  const json& init = root.at("init");
  report.init.scale = init.at("scale").get<double>();
  report.init.extrinsics = pose_from_json(init.at("extrinsics"));
  report.init.converged = init.at("converged").get<bool>();
  if (init.contains("recovered_scale"))
    report.init.recovered_scale = init.at("recovered_scale").get<double>();
  for (const auto& it : init.at("iterations"))
    report.init.iterations.push_back({it.at("scale").get<double>(),
                                      pose_from_json(it.at("extrinsics")),
                                      it.at("cost").get<double>(),
                                      it.at("valid_pairs").get<int>()});

  const json& joint = root.at("joint");
  report.joint.initial_cost = joint.at("initial_cost").get<double>();
  report.joint.final_cost = joint.at("final_cost").get<double>();
  report.joint.point_plane_cost = joint.at("point_plane_cost").get<double>();
  report.joint.reprojection_cost = joint.at("reprojection_cost").get<double>();
  report.joint.pairs = joint.at("pairs").get<int>();
  report.joint.observations = joint.at("observations").get<int>();
  report.joint.rebuilds = joint.at("rebuilds").get<int>();
  report.joint.converged = joint.at("converged").get<bool>();
  const json& correspondence = joint.at("correspondence");
  report.joint.correspondence.valid = correspondence.at("valid").get<int>();
  report.joint.correspondence.ratio_rejected = correspondence.at("ratio_rejected").get<int>();
  report.joint.correspondence.distance_rejected =
      correspondence.at("distance_rejected").get<int>();
  report.joint.correspondence.no_neighbors = correspondence.at("no_neighbors").get<int>();
  report.joint.correspondence.zero_variance = correspondence.at("zero_variance").get<int>();
  report.joint.correspondence.discarded_points =
      correspondence.at("discarded_points").get<std::vector<int>>();
  report.joint.discarded_points = joint.at("discarded_points").get<std::vector<int>>();
  const json& degeneracy = joint.at("degeneracy");
  report.joint.diagnosis.degenerate = degeneracy.at("degenerate").get<bool>();
  report.joint.diagnosis.conditioning_ratio =
      degeneracy.at("conditioning_ratio").get<double>();
  report.joint.diagnosis.weak_direction =
      Eigen::Vector3d(degeneracy.at("weak_direction")[0].get<double>(),
                      degeneracy.at("weak_direction")[1].get<double>(),
                      degeneracy.at("weak_direction")[2].get<double>());
  report.joint.trace = trace_from_json(joint.at("trace"));
  report.joint.segment_sizes = joint.at("segment_sizes").get<std::vector<int>>();

  const json& final_block = root.at("final");
  report.final_params.intrinsics = intrinsics_from_json(final_block.at("intrinsics"));
  report.final_params.extrinsics = pose_from_json(final_block.at("extrinsics"));
  report.final_scale = final_block.at("scale").get<double>();

  if (root.contains("evaluation")) {
    EvaluationReport evaluation;
    const json& e = root.at("evaluation");
    evaluation.visual_intrinsic_px = e.at("visual_intrinsic_px").get<double>();
    evaluation.init_error.rotation_deg = e.at("init").at("rotation_deg").get<double>();
    evaluation.init_error.translation_cm = e.at("init").at("translation_cm").get<double>();
    evaluation.init_scale_error = e.at("init").at("scale_error").get<double>();
    evaluation.final_error.rotation_deg = e.at("final").at("rotation_deg").get<double>();
    evaluation.final_error.translation_cm = e.at("final").at("translation_cm").get<double>();
    evaluation.final_error.intrinsic_px = e.at("final").at("intrinsic_px").get<double>();
    report.evaluation = evaluation;
  }
  if (root.contains("timings_ms")) {
    StageTimings timings;
    const json& t = root.at("timings_ms");
    timings.lidar_ms = t.at("lidar").get<double>();
    timings.visual_ms = t.at("visual").get<double>();
    timings.init_ms = t.at("init").get<double>();
    timings.joint_ms = t.at("joint").get<double>();
    timings.total_ms = t.at("total").get<double>();
    report.timings = timings;
  }
  return report;
}

void save_report(const RunReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  out << serialize_report(report);
}

RunReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_report(buffer.str());
}

// ---------------------------------------------------------------------------
// Inputs

PipelineInput input_from_dataset(const SyntheticDataset& data,
                                 const PerturbedInitials& initials, bool use_gt_lidar_poses,
                                 bool include_initial_scale) {
  PipelineInput input;
  input.clouds = data.clouds;
  input.tracks = data.tracks;
  input.initial_intrinsics = initials.intrinsics;
  input.initial_extrinsics = initials.extrinsics;
  input.camera_poses = data.sfm_camera_poses;
  if (use_gt_lidar_poses || data.spec.export_lidar_poses) input.lidar_poses = data.gt_lidar_poses;
  if (include_initial_scale) input.initial_scale = initials.scale;
  input.ground_truth = GroundTruthBlock{data.gt_intrinsics, data.gt_extrinsics, data.gt_scale};
  return input;
}

PipelineInput load_pipeline_input(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();

  PipelineInput input;
  for (const auto& file : manifest.cloud_files) input.clouds.push_back(load_cloud(base / file));
  input.tracks = load_tracks(base / manifest.tracks_file);
  input.camera_poses = load_poses(base / manifest.camera_poses_file);
  if (manifest.lidar_poses_file) input.lidar_poses = load_poses(base / *manifest.lidar_poses_file);

  std::vector<std::string> violations;
  if (input.camera_poses.size() != input.clouds.size())
    violations.push_back("camera pose count " + std::to_string(input.camera_poses.size()) +
                         " does not match frame count " + std::to_string(input.clouds.size()));
  if (input.lidar_poses && input.lidar_poses->size() != input.clouds.size())
    violations.push_back("lidar pose count " + std::to_string(input.lidar_poses->size()) +
                         " does not match frame count " + std::to_string(input.clouds.size()));
  int max_frame = -1;
  for (const auto& track : input.tracks)
    for (const auto& obs : track.observations) max_frame = std::max(max_frame, obs.frame);
  if (max_frame >= static_cast<int>(input.clouds.size()))
    violations.push_back("track observation references frame " + std::to_string(max_frame) +
                         " beyond frame count " + std::to_string(input.clouds.size()));
  if (!violations.empty()) throw SchemaError(manifest_path.string(), violations);

  input.initial_intrinsics = manifest.initial_intrinsics;
  input.initial_intrinsics.validate();
  input.initial_extrinsics = manifest.initial_extrinsics;
  input.initial_scale = manifest.initial_scale;
  input.ground_truth = manifest.ground_truth;
  return input;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

struct VisualCheckpoint {
  std::vector<Se3> poses;
  CameraIntrinsics intrinsics;
  std::vector<VisualPoint> points;  // tracks resolved separately by point_id
};

void save_visual_checkpoint(const VisualBaResult& result, const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  root["intrinsics"] = intrinsics_to_json(result.intrinsics);
  json poses = json::array();
  for (const auto& pose : result.poses) poses.push_back(pose_to_json(pose));
  root["poses"] = std::move(poses);
  json points = json::array();
  for (const auto& point : result.points) {
    json entry;
    entry["point_id"] = point.track.point_id;
    entry["position"] = {point.position.x(), point.position.y(), point.position.z()};
    json covariance = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) covariance.push_back(point.covariance(r, c));
    entry["covariance"] = std::move(covariance);
    points.push_back(std::move(entry));
  }
  root["points"] = std::move(points);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << root.dump(2) << "\n";
}

VisualCheckpoint load_visual_checkpoint(const std::filesystem::path& path,
                                        const std::vector<FeatureTrack>& tracks) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const json root = json::parse(buffer.str());

  std::map<int, const FeatureTrack*> by_id;
  for (const auto& track : tracks) by_id[track.point_id] = &track;

  VisualCheckpoint checkpoint;
  checkpoint.intrinsics = intrinsics_from_json(root.at("intrinsics"));
  for (const auto& row : root.at("poses")) checkpoint.poses.push_back(pose_from_json(row));
  for (const auto& entry : root.at("points")) {
    VisualPoint point;
    const json& position = entry.at("position");
    point.position = Eigen::Vector3d(position[0].get<double>(), position[1].get<double>(),
                                     position[2].get<double>());
    const json& covariance = entry.at("covariance");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) point.covariance(r, c) = covariance[3 * r + c].get<double>();
    const int id = entry.at("point_id").get<int>();
    const auto found = by_id.find(id);
    if (found == by_id.end())
      throw ParseError(path.string() + ": point " + std::to_string(id) +
                       " has no matching track");
    point.track = *found->second;
    checkpoint.points.push_back(std::move(point));
  }
  return checkpoint;
}

void save_init_checkpoint(const InitResult& result, double recovered_scale_or_nan,
                          const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  root["scale"] = result.init.scale;
  if (std::isfinite(recovered_scale_or_nan)) root["recovered_scale"] = recovered_scale_or_nan;
  root["extrinsics"] = pose_to_json(result.init.extrinsics);
  json poses = json::array();
  for (const auto& pose : result.camera_poses) poses.push_back(pose_to_json(pose));
  root["poses"] = std::move(poses);
  json points = json::array();
  for (const auto& point : result.points) {
    json entry;
    entry["point_id"] = point.track.point_id;
    entry["position"] = {point.position.x(), point.position.y(), point.position.z()};
    json covariance = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) covariance.push_back(point.covariance(r, c));
    entry["covariance"] = std::move(covariance);
    points.push_back(std::move(entry));
  }
  root["points"] = std::move(points);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << root.dump(2) << "\n";
}

struct InitCheckpoint {
  double scale = 1.0;
  std::optional<double> recovered_scale;
  Se3 extrinsics;
  std::vector<Se3> poses;
  std::vector<VisualPoint> points;
};

InitCheckpoint load_init_checkpoint(const std::filesystem::path& path,
                                    const std::vector<FeatureTrack>& tracks) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const json root = json::parse(buffer.str());

  std::map<int, const FeatureTrack*> by_id;
  for (const auto& track : tracks) by_id[track.point_id] = &track;

  InitCheckpoint checkpoint;
  checkpoint.scale = root.at("scale").get<double>();
  if (root.contains("recovered_scale"))
    checkpoint.recovered_scale = root.at("recovered_scale").get<double>();
  checkpoint.extrinsics = pose_from_json(root.at("extrinsics"));
  for (const auto& row : root.at("poses")) checkpoint.poses.push_back(pose_from_json(row));
  for (const auto& entry : root.at("points")) {
    VisualPoint point;
    const json& position = entry.at("position");
    point.position = Eigen::Vector3d(position[0].get<double>(), position[1].get<double>(),
                                     position[2].get<double>());
    const json& covariance = entry.at("covariance");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) point.covariance(r, c) = covariance[3 * r + c].get<double>();
    const int id = entry.at("point_id").get<int>();
    const auto found = by_id.find(id);
    if (found == by_id.end())
      throw ParseError(path.string() + ": point " + std::to_string(id) +
                       " has no matching track");
    point.track = *found->second;
    checkpoint.points.push_back(std::move(point));
  }
  return checkpoint;
}

}  // namespace

PipelineStage pipeline_stage_from_name(const std::string& name) {
  if (name == "lidar" || name == "auto") return PipelineStage::kLidar;
  if (name == "visual") return PipelineStage::kVisual;
  if (name == "init") return PipelineStage::kInit;
  if (name == "joint") return PipelineStage::kJoint;
  throw Error("unknown pipeline stage: " + name);
}

// ---------------------------------------------------------------------------
// The pipeline

RunReport run_calibration(const PipelineInput& input, const CalibrationConfig& config,
                          const PipelineOptions& options) {
  if (input.clouds.empty()) throw Error("run_calibration: no LiDAR frames");
  if (input.camera_poses.size() != input.clouds.size())
    throw Error("run_calibration: camera pose count does not match frame count");
  if (options.from != PipelineStage::kLidar && !options.checkpoint_dir)
    throw Error("run_calibration: resuming a later stage requires a checkpoint directory");

  RunReport report;
  report.config = config;
  const double t_start = now_ms();
  StageTimings timings;

  const auto checkpoint_path = [&](const char* name) {
    return *options.checkpoint_dir / name;
  };

  // --- LiDAR poses ----------------------------------------------------------
  double t0 = now_ms();
  std::vector<Se3> lidar_poses;
  if (options.from > PipelineStage::kLidar && !input.lidar_poses) {
    lidar_poses = load_poses(checkpoint_path("lidar_poses.json"));
    report.lidar.source = "checkpoint";
  } else if (input.lidar_poses) {
    lidar_poses = *input.lidar_poses;
    report.lidar.source = "provided";
  } else {
    const LidarTrajectory chained = estimate_trajectory(input.clouds, config.icp);
    TrajectoryRefineConfig refine_cfg = config.trajectory;
    refine_cfg.pairing = config.icp;
    const TrajectoryRefineResult refined =
        refine_trajectory(input.clouds, chained, refine_cfg);
    lidar_poses = refined.trajectory.poses;
    report.lidar.source = "icp";
    report.lidar.sweeps = refined.sweeps;
    report.lidar.initial_cost = refined.initial_cost;
    report.lidar.final_cost = refined.final_cost;
    report.lidar.converged = refined.converged;
  }
  if (options.checkpoint_dir && report.lidar.source != "checkpoint")
    save_poses(lidar_poses, checkpoint_path("lidar_poses.json"));
  timings.lidar_ms = now_ms() - t0;

  // Spatial indices are shared by the init and joint stages.
  std::vector<KdTree> trees;
  trees.reserve(input.clouds.size());
  for (const auto& cloud : input.clouds) trees.emplace_back(cloud);
  std::vector<const KdTree*> indices;
  for (const auto& tree : trees) indices.push_back(&tree);

  // --- Visual bundle adjustment --------------------------------------------
  t0 = now_ms();
  VisualBaResult visual;
  if (options.from > PipelineStage::kVisual) {
    const VisualCheckpoint checkpoint =
        load_visual_checkpoint(checkpoint_path("visual_state.json"), input.tracks);
    visual.poses = checkpoint.poses;
    visual.intrinsics = checkpoint.intrinsics;
    visual.points = checkpoint.points;
  } else {
    visual = bundle_adjust_visual(input.tracks, input.camera_poses, input.initial_intrinsics,
                                  config.visual);
    report.visual.initial_cost = visual.report.initial_cost;
    report.visual.final_cost = visual.report.final_cost;
    report.visual.iterations = visual.report.iterations;
    report.visual.accepted_steps = visual.report.accepted_steps;
    report.visual.converged = visual.report.converged();
    report.visual.rms_px = visual.rms_px;
    report.visual.dropped_tracks = static_cast<int>(visual.dropped_tracks.size());
    report.visual.dropped_observations = visual.dropped_observations;
    for (const auto& dropped : visual.dropped_tracks)
      report.visual.dropped_track_ids.push_back(dropped.point_id);
    report.visual.trace = visual.report.trace;
    if (options.checkpoint_dir)
      save_visual_checkpoint(visual, checkpoint_path("visual_state.json"));
  }
  report.visual.points = static_cast<int>(visual.points.size());
  report.visual.intrinsics = visual.intrinsics;
  timings.visual_ms = now_ms() - t0;

  // --- Scale and extrinsics initialization ---------------------------------
  t0 = now_ms();
  InitResult init_result;
  std::optional<double> recovered_scale;
  if (options.from > PipelineStage::kInit) {
    const InitCheckpoint checkpoint =
        load_init_checkpoint(checkpoint_path("init_state.json"), input.tracks);
    init_result.init.scale = checkpoint.scale;
    init_result.init.extrinsics = checkpoint.extrinsics;
    init_result.init.converged = true;
    init_result.camera_poses = checkpoint.poses;
    init_result.points = checkpoint.points;
    recovered_scale = checkpoint.recovered_scale;
  } else {
    ScaledInit seed;
    seed.extrinsics = input.initial_extrinsics;
    if (input.initial_scale) {
      seed.scale = *input.initial_scale;
    } else {
      const ScaleRecovery recovery =
          recover_scale(visual.poses, lidar_poses, input.initial_extrinsics);
      recovered_scale = recovery.scale;
      seed.scale = recovery.scale;
    }
    init_result = refine_scale_extrinsics(visual.points, visual.poses, input.clouds, indices,
                                          lidar_poses, seed, config.init);
    if (options.checkpoint_dir)
      save_init_checkpoint(init_result,
                           recovered_scale ? *recovered_scale
                                           : std::numeric_limits<double>::quiet_NaN(),
                           checkpoint_path("init_state.json"));
  }
  report.init.recovered_scale = recovered_scale;
  report.init.scale = init_result.init.scale;
  report.init.extrinsics = init_result.init.extrinsics;
  report.init.converged = init_result.init.converged;
  report.init.iterations = init_result.init.log;
  timings.init_ms = now_ms() - t0;

  // --- Joint plane-constrained refinement -----------------------------------
  t0 = now_ms();
  CalibrationProblem problem;
  problem.intrinsics = visual.intrinsics;
  problem.extrinsics = init_result.init.extrinsics;
  problem.camera_poses = init_result.camera_poses;
  problem.lidar_poses = lidar_poses;
  problem.points = init_result.points;
  problem.alpha = config.joint.alpha;

  bool degenerate = false;
  try {
    const JointReport joint = solve_joint(problem, indices, config.joint);
    report.joint.initial_cost = joint.initial_cost;
    report.joint.final_cost = joint.final_cost;
    report.joint.point_plane_cost = joint.point_plane_cost;
    report.joint.reprojection_cost = joint.reprojection_cost;
    report.joint.pairs = joint.pair_count;
    report.joint.observations = joint.observation_count;
    report.joint.rebuilds = joint.rebuilds;
    report.joint.converged = joint.converged;
    report.joint.correspondence = joint.correspondence;
    report.joint.discarded_points = joint.discarded_points;
    report.joint.diagnosis = joint.diagnosis;
    report.joint.trace = joint.trace;
    report.joint.segment_sizes = joint.segment_sizes;
  } catch (const DegenerateProblemError& e) {
    degenerate = true;
    report.joint.diagnosis.degenerate = true;
    report.joint.diagnosis.weak_direction = e.weak_direction;
    report.joint.diagnosis.conditioning_ratio = e.conditioning_ratio;
  }
  timings.joint_ms = now_ms() - t0;

  report.final_params.intrinsics = problem.intrinsics;
  report.final_params.extrinsics = problem.extrinsics;
  report.final_scale = init_result.init.scale;
  report.status = degenerate ? "degenerate"
                             : (report.joint.converged ? "ok" : "not_converged");

  if (input.ground_truth) {
    EvaluationReport evaluation;
    evaluation.visual_intrinsic_px =
        intrinsic_error(visual.intrinsics, input.ground_truth->intrinsics,
                        config.metric_stride, config.threads);
    evaluation.init_error =
        extrinsic_error(init_result.init.extrinsics, input.ground_truth->extrinsics);
    evaluation.init_scale_error =
        std::abs(init_result.init.scale - input.ground_truth->scale) /
        input.ground_truth->scale;
    const ExtrinsicError final_ext =
        extrinsic_error(problem.extrinsics, input.ground_truth->extrinsics);
    evaluation.final_error.rotation_deg = final_ext.rotation_deg;
    evaluation.final_error.translation_cm = final_ext.translation_cm;
    evaluation.final_error.intrinsic_px =
        intrinsic_error(problem.intrinsics, input.ground_truth->intrinsics,
                        config.metric_stride, config.threads);
    report.evaluation = evaluation;
  }

  timings.total_ms = now_ms() - t_start;
  if (config.emit_timings) report.timings = timings;
  return report;
}

}  // namespace plancalib
