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
#include "plancalib/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace plancalib {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw ParseError("short write to " + path.string());
}

json parse_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Collects schema violations; throws them all at once.
class SchemaCheck {
 public:
  explicit SchemaCheck(std::string path) : path_(std::move(path)) {}

  void add(const std::string& violation) { violations_.push_back(violation); }

  void require_keys(const json& object, const std::string& where,
                    const std::vector<std::string>& required,
                    const std::vector<std::string>& optional = {}) {
    if (!object.is_object()) {
      add(where + ": expected an object");
      return;
    }
    for (const auto& key : required)
      if (!object.contains(key)) add(where + ": missing field '" + key + "'");
    for (const auto& item : object.items()) {
      const std::string& key = item.key();
      if (std::find(required.begin(), required.end(), key) == required.end() &&
          std::find(optional.begin(), optional.end(), key) == optional.end())
        add(where + ": unknown field '" + key + "'");
    }
  }

  bool version_ok(const json& object, int expected) {
    if (!object.contains("format_version")) return false;
    if (!object["format_version"].is_number_integer() ||
        object["format_version"].get<int>() != expected) {
      add("format_version: expected " + std::to_string(expected));
      return false;
    }
    return true;
  }

  double number(const json& object, const std::string& key, const std::string& where) {
    if (!object.contains(key) || !object[key].is_number()) {
      add(where + ": field '" + key + "' must be a number");
      return 0.0;
    }
    return object[key].get<double>();
  }

  void finish() const {
    if (!violations_.empty()) throw SchemaError(path_, violations_);
  }

  bool clean() const { return violations_.empty(); }

 private:
  std::string path_;
  std::vector<std::string> violations_;
};

constexpr const char* kIntrinsicsKeys[6] = {"fx", "fy", "cx", "cy", "k1", "k2"};

json intrinsics_to_json(const CameraIntrinsics& D) {
  json out;
  const auto v = D.to_vector();
  for (int i = 0; i < 6; ++i) out[kIntrinsicsKeys[i]] = v[i];
  return out;
}

CameraIntrinsics intrinsics_from_json(const json& object, SchemaCheck& check,
                                      const std::string& where, int width, int height) {
  check.require_keys(object, where, {"fx", "fy", "cx", "cy", "k1", "k2"});
  Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();
  if (object.is_object())
    for (int i = 0; i < 6; ++i) v[i] = check.number(object, kIntrinsicsKeys[i], where);
  return CameraIntrinsics::from_vector(v, width, height);
}

json pose_to_json(const Se3& pose) {
  return json::array({pose.rotation.w(), pose.rotation.x(), pose.rotation.y(),
                      pose.rotation.z(), pose.translation.x(), pose.translation.y(),
                      pose.translation.z()});
}

Se3 pose_from_json(const json& row, SchemaCheck& check, const std::string& where) {
  Se3 pose;
  if (!row.is_array() || row.size() != 7) {
    check.add(where + ": expected a row of 7 numbers (qw qx qy qz tx ty tz)");
    return pose;
  }
  double v[7];
  for (int i = 0; i < 7; ++i) {
    if (!row[i].is_number()) {
      check.add(where + ": entry " + std::to_string(i) + " is not a number");
      return pose;
    }
    v[i] = row[i].get<double>();
  }
  pose.rotation = Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
  if (std::abs(pose.rotation.norm() - 1.0) > 1e-6) {
    check.add(where + ": quaternion norm deviates from 1 by more than 1e-6");
    return pose;
  }
  pose.rotation.normalize();
  pose.translation = Eigen::Vector3d(v[4], v[5], v[6]);
  return pose;
}

}  // namespace

// ---------------------------------------------------------------------------
// PLY

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
};

struct PlyHeader {
  bool binary = false;
  std::size_t vertex_count = 0;
  std::vector<PlyProperty> properties;
  std::size_t data_offset = 0;  // bytes into the file
  int header_lines = 0;
};

std::size_t scalar_size(const std::string& type, const std::filesystem::path& path) {
  if (type == "float" || type == "float32") return 4;
  if (type == "double" || type == "float64") return 8;
  throw UnsupportedLayoutError(path.string() + ": unsupported property type '" + type + "'");
}

PlyHeader parse_ply_header(const std::string& content, const std::filesystem::path& path) {
  PlyHeader header;
  std::size_t pos = 0;
  int line_no = 0;
  std::string element;
  const auto next_line = [&]() -> std::optional<std::string> {
    if (pos >= content.size()) return std::nullopt;
    const std::size_t end = content.find('\n', pos);
    const std::size_t stop = end == std::string::npos ? content.size() : end;
    std::string line = content.substr(pos, stop - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = stop + 1;
    ++line_no;
    return line;
  };

  auto magic = next_line();
  if (!magic || *magic != "ply") throw ParseError(path.string() + ": not a PLY file");
  bool format_seen = false;
  while (true) {
    const auto line = next_line();
    if (!line) throw ParseError(path.string() + ": header has no end_header");
    std::istringstream words(*line);
    std::string keyword;
    words >> keyword;
    if (keyword == "comment" || keyword.empty()) continue;
    if (keyword == "format") {
      std::string kind, version;
      words >> kind >> version;
      if (kind == "ascii")
        header.binary = false;
      else if (kind == "binary_little_endian")
        header.binary = true;
      else
        throw UnsupportedLayoutError(path.string() + ": unsupported format '" + kind + "'");
      format_seen = true;
    } else if (keyword == "element") {
      std::string name;
      std::size_t count = 0;
      words >> name >> count;
      if (name == "vertex") {
        header.vertex_count = count;
        element = name;
      } else if (count > 0) {
        throw UnsupportedLayoutError(path.string() + ": unsupported element '" + name + "'");
      } else {
        element = name;
      }
    } else if (keyword == "property") {
      if (element != "vertex") continue;  // properties of empty elements
      std::string type, name;
      words >> type >> name;
      if (type == "list")
        throw UnsupportedLayoutError(path.string() + ": unsupported list property");
      if (name != "x" && name != "y" && name != "z" && name != "intensity")
        throw UnsupportedLayoutError(path.string() + ": unsupported property '" + name + "'");
      scalar_size(type, path);
      header.properties.push_back({name, type});
    } else if (keyword == "end_header") {
      break;
    } else {
      throw ParseError(path.string() + ": unexpected header line '" + *line + "'");
    }
  }
  if (!format_seen) throw ParseError(path.string() + ": missing format line");
  header.data_offset = pos;
  header.header_lines = line_no;
  for (const char* required : {"x", "y", "z"}) {
    const bool found = std::any_of(header.properties.begin(), header.properties.end(),
                                   [&](const PlyProperty& p) { return p.name == required; });
    if (!found)
      throw UnsupportedLayoutError(path.string() + ": missing property '" +
                                   std::string(required) + "'");
  }
  return header;
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const PlyHeader header = parse_ply_header(content, path);

  PointCloud cloud;
  cloud.points.resize(header.vertex_count);
  const bool has_intensity =
      std::any_of(header.properties.begin(), header.properties.end(),
                  [](const PlyProperty& p) { return p.name == "intensity"; });
  if (has_intensity) cloud.intensity.resize(header.vertex_count);

  if (header.binary) {
    std::size_t record = 0;
    for (const auto& p : header.properties) record += scalar_size(p.type, path);
    const std::size_t need = header.vertex_count * record;
    if (content.size() - header.data_offset < need)
      throw ParseError(path.string() + ": expected " + std::to_string(header.vertex_count) +
                       " vertices (" + std::to_string(need) + " bytes), data holds " +
                       std::to_string(content.size() - header.data_offset));
    const char* cursor = content.data() + header.data_offset;
    for (std::size_t i = 0; i < header.vertex_count; ++i) {
      for (const auto& prop : header.properties) {
        double value;
        if (scalar_size(prop.type, path) == 4) {
          float f;
          std::memcpy(&f, cursor, 4);
          value = f;
          cursor += 4;
        } else {
          std::memcpy(&value, cursor, 8);
          cursor += 8;
        }
        if (prop.name == "x")
          cloud.points[i].x() = value;
        else if (prop.name == "y")
          cloud.points[i].y() = value;
        else if (prop.name == "z")
          cloud.points[i].z() = value;
        else
          cloud.intensity[i] = static_cast<float>(value);
      }
    }
  } else {
    std::istringstream in(content.substr(header.data_offset));
    std::string line;
    std::size_t i = 0;
    int line_no = header.header_lines;
    while (i < header.vertex_count) {
      if (!std::getline(in, line))
        throw ParseError(path.string() + ": expected " + std::to_string(header.vertex_count) +
                         " vertices, got " + std::to_string(i));
      ++line_no;
      if (line.empty()) continue;
      std::istringstream words(line);
      for (const auto& prop : header.properties) {
        double value;
        if (!(words >> value))
          throw ParseError(path.string() + ":" + std::to_string(line_no) +
                           ": short vertex line");
        if (prop.name == "x")
          cloud.points[i].x() = value;
        else if (prop.name == "y")
          cloud.points[i].y() = value;
        else if (prop.name == "z")
          cloud.points[i].z() = value;
        else
          cloud.intensity[i] = static_cast<float>(value);
      }
      ++i;
    }
  }
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw ParseError(path.string() + ": non-finite coordinates");
  }
  return cloud;
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, bool binary) {
  std::ostringstream out;
  out << "ply\n"
      << (binary ? "format binary_little_endian 1.0" : "format ascii 1.0") << "\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_intensity()) out << "property float intensity\n";
  out << "end_header\n";
  if (binary) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double xyz[3] = {cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z()};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (cloud.has_intensity()) {
        const float intensity = cloud.intensity[i];
        out.write(reinterpret_cast<const char*>(&intensity), sizeof(intensity));
      }
    }
  } else {
    char buffer[96];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      std::snprintf(buffer, sizeof(buffer), "%.17g %.17g %.17g", cloud.points[i].x(),
                    cloud.points[i].y(), cloud.points[i].z());
      out << buffer;
      if (cloud.has_intensity()) {
        std::snprintf(buffer, sizeof(buffer), " %.9g", cloud.intensity[i]);
        out << buffer;
      }
      out << "\n";
    }
  }
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// KITTI

PointCloud load_kitti_bin(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  if (content.size() % 16 != 0)
    throw ParseError(path.string() + ": size " + std::to_string(content.size()) +
                     " is not a multiple of 16 (float32 x y z intensity records)");
  const std::size_t count = content.size() / 16;
  PointCloud cloud;
  cloud.points.resize(count);
  cloud.intensity.resize(count);
  const char* cursor = content.data();
  for (std::size_t i = 0; i < count; ++i) {
    float record[4];
    std::memcpy(record, cursor, 16);
    cursor += 16;
    cloud.points[i] = Eigen::Vector3d(record[0], record[1], record[2]);
    cloud.intensity[i] = record[3];
  }
  return cloud;
}

KittiCalib load_kitti_calib(const std::filesystem::path& path, int image_width,
                            int image_height) {
  std::istringstream in(read_file(path));
  std::string line;
  std::optional<std::array<double, 12>> p2, tr;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string tag;
    words >> tag;
    const auto read12 = [&]() {
      std::array<double, 12> values{};
      for (double& v : values)
        if (!(words >> v)) throw ParseError(path.string() + ": short row in '" + tag + "'");
      return values;
    };
    if (tag == "P2:") p2 = read12();
    if (tag == "Tr:") tr = read12();
  }
  if (!p2 || !tr) throw ParseError(path.string() + ": missing P2 or Tr row");

  KittiCalib calib;
  calib.intrinsics.fx = (*p2)[0];
  calib.intrinsics.fy = (*p2)[5];
  calib.intrinsics.cx = (*p2)[2];
  calib.intrinsics.cy = (*p2)[6];
  calib.intrinsics.width = image_width;
  calib.intrinsics.height = image_height;
  Eigen::Matrix3d R;
  R << (*tr)[0], (*tr)[1], (*tr)[2], (*tr)[4], (*tr)[5], (*tr)[6], (*tr)[8], (*tr)[9],
      (*tr)[10];
  calib.cam_from_velo.rotation = Eigen::Quaterniond(R).normalized();
  calib.cam_from_velo.translation = Eigen::Vector3d((*tr)[3], (*tr)[7], (*tr)[11]);
  return calib;
}

// ---------------------------------------------------------------------------
// PPM images and colorization

ImageBuffer load_ppm(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::istringstream in(content);
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P3") throw ParseError(path.string() + ": not a PPM file");
  const auto next_token = [&]() {
    std::string token;
    while (in >> token) {
      if (token[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return token;
    }
    throw ParseError(path.string() + ": truncated PPM header");
  };
  ImageBuffer image;
  image.width = std::stoi(next_token());
  image.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw UnsupportedLayoutError(path.string() + ": maxval must be 255");
  const std::size_t count = 3 * static_cast<std::size_t>(image.width) * image.height;
  image.rgb.resize(count);
  if (magic == "P6") {
    const std::size_t offset = static_cast<std::size_t>(in.tellg()) + 1;  // single whitespace
    if (content.size() < offset + count)
      throw ParseError(path.string() + ": truncated pixel data");
    std::memcpy(image.rgb.data(), content.data() + offset, count);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      int v;
      if (!(in >> v)) throw ParseError(path.string() + ": truncated pixel data");
      image.rgb[i] = static_cast<std::uint8_t>(v);
    }
  }
  return image;
}

void save_ppm(const ImageBuffer& image, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  write_file(path, out.str());
}

int ColoredCloud::colored_count() const {
  int count = 0;
  for (const bool c : colored) count += c ? 1 : 0;
  return count;
}

ColoredCloud colorize(const PointCloud& cloud, const ImageBuffer& image,
                      const Se3& camera_from_lidar, const CameraIntrinsics& D) {
  ColoredCloud out;
  out.points = cloud.points;
  out.colors.assign(cloud.size(), {0, 0, 0});
  out.colored.assign(cloud.size(), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d in_camera = camera_from_lidar * cloud.points[i];
    const auto pixel = project_checked(in_camera, D);
    if (!pixel) continue;
    const int x = static_cast<int>(std::lround(pixel->x()));
    const int y = static_cast<int>(std::lround(pixel->y()));
    if (x < 0 || x >= image.width || y < 0 || y >= image.height) continue;
    out.colors[i] = image.at(x, y);
    out.colored[i] = true;
  }
  return out;
}

void save_colored_cloud(const ColoredCloud& cloud, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.colored_count() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!cloud.colored[i]) continue;
    const double xyz[3] = {cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z()};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    out.write(reinterpret_cast<const char*>(cloud.colors[i].data()), 3);
  }
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Poses / tracks / params / manifest

std::vector<Se3> load_poses(const std::filesystem::path& path) {
  const json root = parse_json(path);
  SchemaCheck check(path.string());
  check.require_keys(root, "poses file", {"format_version", "poses"});
  std::vector<Se3> poses;
  if (check.version_ok(root, 1) && root.contains("poses") && root["poses"].is_array()) {
    int row = 0;
    for (const auto& entry : root["poses"])
      poses.push_back(pose_from_json(entry, check, "poses[" + std::to_string(row++) + "]"));
  } else if (root.contains("poses") && !root["poses"].is_array()) {
    check.add("poses: expected an array");
  }
  check.finish();
  return poses;
}

void save_poses(const std::vector<Se3>& poses, const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  json rows = json::array();
  for (const auto& pose : poses) rows.push_back(pose_to_json(pose));
  root["poses"] = std::move(rows);
  write_file(path, root.dump(2) + "\n");
}

std::vector<FeatureTrack> load_tracks(const std::filesystem::path& path) {
  const json root = parse_json(path);
  SchemaCheck check(path.string());
  check.require_keys(root, "tracks file", {"format_version", "tracks"});
  std::vector<FeatureTrack> tracks;
  if (check.version_ok(root, 1) && root.contains("tracks") && root["tracks"].is_array()) {
    for (const auto& entry : root["tracks"]) {
      const std::string where = "track[" + std::to_string(tracks.size()) + "]";
      check.require_keys(entry, where, {"point_id", "observations"});
      FeatureTrack track;
      if (entry.is_object() && entry.contains("point_id") &&
          entry["point_id"].is_number_integer())
        track.point_id = entry["point_id"].get<int>();
      else
        check.add(where + ": point_id must be an integer");
      if (entry.is_object() && entry.contains("observations") &&
          entry["observations"].is_array()) {
        std::vector<int> frames;
        for (const auto& obs_json : entry["observations"]) {
          const std::string obs_where =
              where + ".observations[" + std::to_string(track.observations.size()) + "]";
          check.require_keys(obs_json, obs_where, {"frame", "u", "v"}, {"sigma"});
          TrackObservation obs;
          if (obs_json.is_object() && obs_json.contains("frame") &&
              obs_json["frame"].is_number_integer())
            obs.frame = obs_json["frame"].get<int>();
          else
            check.add(obs_where + ": frame must be an integer");
          if (obs_json.is_object()) {
            obs.pixel.x() = check.number(obs_json, "u", obs_where);
            obs.pixel.y() = check.number(obs_json, "v", obs_where);
            double sigma = 1.0;
            if (obs_json.contains("sigma")) sigma = check.number(obs_json, "sigma", obs_where);
            if (!(sigma > 0.0))
              check.add(obs_where + ": sigma must be positive");
            else
              obs.pixel_cov = sigma * sigma * Eigen::Matrix2d::Identity();
          }
          frames.push_back(obs.frame);
          track.observations.push_back(obs);
        }
        if (track.observations.size() < 2)
          check.add(where + ": needs at least 2 observations");
        std::sort(frames.begin(), frames.end());
        if (std::adjacent_find(frames.begin(), frames.end()) != frames.end())
          check.add(where + ": duplicate frame index");
      } else {
        check.add(where + ": observations must be an array");
      }
      tracks.push_back(std::move(track));
    }
  } else if (root.contains("tracks") && !root["tracks"].is_array()) {
    check.add("tracks: expected an array");
  }
  check.finish();
  return tracks;
}

void save_tracks(const std::vector<FeatureTrack>& tracks, const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  json list = json::array();
  for (const auto& track : tracks) {
    json entry;
    entry["point_id"] = track.point_id;
    json observations = json::array();
    for (const auto& obs : track.observations) {
      json o;
      o["frame"] = obs.frame;
      o["u"] = obs.pixel.x();
      o["v"] = obs.pixel.y();
      const double sigma = std::sqrt(obs.pixel_cov(0, 0));
      if (std::abs(sigma - 1.0) > 0.0) o["sigma"] = sigma;
      observations.push_back(std::move(o));
    }
    entry["observations"] = std::move(observations);
    list.push_back(std::move(entry));
  }
  root["tracks"] = std::move(list);
  write_file(path, root.dump(2) + "\n");
}

CalibratedParams load_params(const std::filesystem::path& path) {
  const json root = parse_json(path);
  SchemaCheck check(path.string());
  check.require_keys(root, "params file",
                     {"format_version", "intrinsics", "extrinsics", "image_width",
                      "image_height"});
  CalibratedParams params;
  if (check.version_ok(root, 1) && check.clean()) {
    const int width = root["image_width"].is_number_integer()
                          ? root["image_width"].get<int>()
                          : (check.add("image_width must be an integer"), 0);
    const int height = root["image_height"].is_number_integer()
                           ? root["image_height"].get<int>()
                           : (check.add("image_height must be an integer"), 0);
    params.intrinsics =
        intrinsics_from_json(root["intrinsics"], check, "intrinsics", width, height);
    params.extrinsics = pose_from_json(root["extrinsics"], check, "extrinsics");
  }
  check.finish();
  params.intrinsics.validate();
  return params;
}

void save_params(const CalibratedParams& params, const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  root["image_width"] = params.intrinsics.width;
  root["image_height"] = params.intrinsics.height;
  root["intrinsics"] = intrinsics_to_json(params.intrinsics);
  root["extrinsics"] = pose_to_json(params.extrinsics);
  write_file(path, root.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const json root = parse_json(path);
  SchemaCheck check(path.string());
  check.require_keys(root, "manifest",
                     {"format_version", "image_width", "image_height", "clouds", "tracks",
                      "camera_poses", "initial_intrinsics", "initial_extrinsics"},
                     {"lidar_poses", "initial_scale", "ground_truth"});
  DatasetManifest manifest;
  if (!check.version_ok(root, 1)) check.finish();

  if (root.contains("image_width") && root["image_width"].is_number_integer())
    manifest.image_width = root["image_width"].get<int>();
  else
    check.add("image_width must be an integer");
  if (root.contains("image_height") && root["image_height"].is_number_integer())
    manifest.image_height = root["image_height"].get<int>();
  else
    check.add("image_height must be an integer");

  if (root.contains("clouds") && root["clouds"].is_array()) {
    for (const auto& entry : root["clouds"]) {
      if (entry.is_string())
        manifest.cloud_files.push_back(entry.get<std::string>());
      else
        check.add("clouds: entries must be strings");
    }
    if (manifest.cloud_files.empty()) check.add("clouds: needs at least one frame");
  } else {
    check.add("clouds: expected an array of file paths");
  }

  const auto string_field = [&](const char* key) -> std::string {
    if (root.contains(key) && root[key].is_string()) return root[key].get<std::string>();
    check.add(std::string(key) + ": expected a string");
    return {};
  };
  manifest.tracks_file = string_field("tracks");
  manifest.camera_poses_file = string_field("camera_poses");
  if (root.contains("lidar_poses")) {
    if (root["lidar_poses"].is_string())
      manifest.lidar_poses_file = root["lidar_poses"].get<std::string>();
    else
      check.add("lidar_poses: expected a string");
  }

  if (root.contains("initial_intrinsics"))
    manifest.initial_intrinsics =
        intrinsics_from_json(root["initial_intrinsics"], check, "initial_intrinsics",
                             manifest.image_width, manifest.image_height);
  if (root.contains("initial_extrinsics"))
    manifest.initial_extrinsics =
        pose_from_json(root["initial_extrinsics"], check, "initial_extrinsics");
  if (root.contains("initial_scale")) {
    const double s = check.number(root, "initial_scale", "manifest");
    if (!(s > 0.0)) check.add("initial_scale must be positive");
    manifest.initial_scale = s;
  }

  if (root.contains("ground_truth")) {
    const json& gt = root["ground_truth"];
    check.require_keys(gt, "ground_truth", {"intrinsics", "extrinsics", "scale"});
    GroundTruthBlock block;
    if (gt.is_object() && gt.contains("intrinsics"))
      block.intrinsics = intrinsics_from_json(gt["intrinsics"], check, "ground_truth.intrinsics",
                                              manifest.image_width, manifest.image_height);
    if (gt.is_object() && gt.contains("extrinsics"))
      block.extrinsics = pose_from_json(gt["extrinsics"], check, "ground_truth.extrinsics");
    if (gt.is_object()) block.scale = check.number(gt, "scale", "ground_truth");
    manifest.ground_truth = block;
  }

  // File references must resolve relative to the manifest directory.
  const auto resolve = [&](const std::string& file) {
    return path.parent_path() / file;
  };
  if (check.clean()) {
    for (const auto& file : manifest.cloud_files)
      if (!std::filesystem::exists(resolve(file)))
        check.add("cloud file not found: " + file);
    if (!std::filesystem::exists(resolve(manifest.tracks_file)))
      check.add("tracks file not found: " + manifest.tracks_file);
    if (!std::filesystem::exists(resolve(manifest.camera_poses_file)))
      check.add("camera poses file not found: " + manifest.camera_poses_file);
    if (manifest.lidar_poses_file &&
        !std::filesystem::exists(resolve(*manifest.lidar_poses_file)))
      check.add("lidar poses file not found: " + *manifest.lidar_poses_file);
  }
  check.finish();
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json root;
  root["format_version"] = 1;
  root["image_width"] = manifest.image_width;
  root["image_height"] = manifest.image_height;
  root["clouds"] = manifest.cloud_files;
  root["tracks"] = manifest.tracks_file;
  root["camera_poses"] = manifest.camera_poses_file;
  if (manifest.lidar_poses_file) root["lidar_poses"] = *manifest.lidar_poses_file;
  root["initial_intrinsics"] = intrinsics_to_json(manifest.initial_intrinsics);
  root["initial_extrinsics"] = pose_to_json(manifest.initial_extrinsics);
  if (manifest.initial_scale) root["initial_scale"] = *manifest.initial_scale;
  if (manifest.ground_truth) {
    json gt;
    gt["intrinsics"] = intrinsics_to_json(manifest.ground_truth->intrinsics);
    gt["extrinsics"] = pose_to_json(manifest.ground_truth->extrinsics);
    gt["scale"] = manifest.ground_truth->scale;
    root["ground_truth"] = std::move(gt);
  }
  write_file(path, root.dump(2) + "\n");
}

}  // namespace plancalib
