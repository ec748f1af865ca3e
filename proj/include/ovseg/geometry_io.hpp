#pragma once

// File formats for the geometry module: ASCII PLY point clouds, binary DPTH
// depth maps and the JSON scene manifest.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovseg/binary_io.hpp"
#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"

namespace ovseg {

// ---------------------------------------------------------------------------
// PLY

enum class PlyType { kFloat, kUChar, kUShort };

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kFloat;
  std::vector<double> values;
};

// Column-oriented view of the vertex element of an ASCII PLY file.
struct PlyTable {
  std::size_t rows = 0;
  std::vector<PlyProperty> properties;

  const PlyProperty* find(const std::string& name) const {
    for (const auto& p : properties) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const PlyProperty& get(const std::string& name) const {
    const auto* p = find(name);
    if (!p) fail("PLY: missing vertex property '" + name + "'");
    return *p;
  }
};

namespace detail {

inline std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline PlyType parse_ply_type(const std::string& t) {
  if (t == "float" || t == "float32") return PlyType::kFloat;
  if (t == "uchar" || t == "uint8") return PlyType::kUChar;
  if (t == "ushort" || t == "uint16") return PlyType::kUShort;
  fail("PLY: unsupported property type '" + t + "'");
}

inline const char* ply_type_name(PlyType t) {
  switch (t) {
    case PlyType::kFloat:
      return "float";
    case PlyType::kUChar:
      return "uchar";
    case PlyType::kUShort:
      return "ushort";
  }
  return "float";
}

}  // namespace detail

inline void write_ply_table(const std::string& path, const PlyTable& table) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << table.rows << "\n";
  for (const auto& p : table.properties) {
    require(p.values.size() == table.rows, "PLY: column '" + p.name + "' has wrong length");
    os << "property " << detail::ply_type_name(p.type) << " " << p.name << "\n";
  }
  os << "end_header\n";
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < table.properties.size(); ++c) {
      const auto& p = table.properties[c];
      if (c) os << ' ';
      if (p.type == PlyType::kFloat) {
        os << detail::format_float(static_cast<float>(p.values[r]));
      } else {
        os << static_cast<long>(p.values[r]);
      }
    }
    os << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + path);
  out << os.str();
  if (!out) fail_io("write failed: " + path);
}

inline PlyTable read_ply_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open for reading: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ply") fail("PLY: bad magic in " + path);
  PlyTable table;
  bool in_vertex = false;
  bool header_done = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") fail("PLY: only ascii format is supported");
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> table.rows;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      table.properties.push_back({name, detail::parse_ply_type(type), {}});
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) fail("PLY: missing end_header in " + path);
  for (auto& p : table.properties) p.values.resize(table.rows);
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (auto& p : table.properties) {
      double v;
      if (!(in >> v)) fail("PLY: truncated vertex data in " + path);
      // float properties round through float32 so values match what was written
      p.values[r] = p.type == PlyType::kFloat ? static_cast<double>(static_cast<float>(v)) : v;
    }
  }
  return table;
}

inline PlyTable cloud_to_ply_table(const PointCloud& cloud) {
  PlyTable t;
  t.rows = cloud.size();
  const char* axes[] = {"x", "y", "z"};
  const char* chans[] = {"red", "green", "blue"};
  for (int k = 0; k < 3; ++k) {
    PlyProperty p{axes[k], PlyType::kFloat, std::vector<double>(t.rows)};
    for (std::size_t i = 0; i < t.rows; ++i) p.values[i] = cloud.points[i][k];
    t.properties.push_back(std::move(p));
  }
  for (int k = 0; k < 3; ++k) {
    PlyProperty p{chans[k], PlyType::kUChar, std::vector<double>(t.rows)};
    for (std::size_t i = 0; i < t.rows; ++i) {
      p.values[i] = std::lround(std::clamp(cloud.colors[i][k], 0.0, 1.0) * 255.0);
    }
    t.properties.push_back(std::move(p));
  }
  if (cloud.labels) {
    PlyProperty p{"label", PlyType::kUShort, std::vector<double>(t.rows)};
    for (std::size_t i = 0; i < t.rows; ++i) p.values[i] = (*cloud.labels)[i];
    t.properties.push_back(std::move(p));
  }
  return t;
}

inline void write_ply(const std::string& path, const PointCloud& cloud) {
  write_ply_table(path, cloud_to_ply_table(cloud));
}

inline PointCloud ply_table_to_cloud(const PlyTable& t) {
  PointCloud cloud;
  const auto& x = t.get("x");
  const auto& y = t.get("y");
  const auto& z = t.get("z");
  const auto* r = t.find("red");
  const auto* g = t.find("green");
  const auto* b = t.find("blue");
  cloud.points.resize(t.rows);
  cloud.colors.resize(t.rows, Vec3::Zero());
  for (std::size_t i = 0; i < t.rows; ++i) {
    cloud.points[i] = Vec3(x.values[i], y.values[i], z.values[i]);
    if (r && g && b) {
      cloud.colors[i] = Vec3(r->values[i], g->values[i], b->values[i]) / 255.0;
    }
  }
  if (const auto* l = t.find("label")) {
    std::vector<std::uint16_t> labels(t.rows);
    for (std::size_t i = 0; i < t.rows; ++i) {
      labels[i] = static_cast<std::uint16_t>(l->values[i]);
    }
    cloud.labels = std::move(labels);
  }
  cloud.validate();
  return cloud;
}

inline PointCloud read_ply(const std::string& path) {
  return ply_table_to_cloud(read_ply_table(path));
}

// ---------------------------------------------------------------------------
// DPTH depth maps

inline void write_depth(const std::string& path, const DepthMap& depth) {
  binary::Writer w;
  w.magic("DPTH");
  w.u32(static_cast<std::uint32_t>(depth.width));
  w.u32(static_cast<std::uint32_t>(depth.height));
  w.f32s(depth.values);
  w.save(path);
}

inline DepthMap read_depth(const std::string& path) {
  auto data = binary::read_file(path);
  binary::Reader r(data, "corrupt depth map: " + path);
  if (!r.has_magic("DPTH")) fail("not a depth map file: " + path);
  DepthMap d;
  d.width = static_cast<int>(r.u32());
  d.height = static_cast<int>(r.u32());
  d.values.resize(static_cast<std::size_t>(d.width) * d.height);
  r.f32s(d.values);
  if (r.remaining() != 0) fail("corrupt depth map: " + path);
  return d;
}

// ---------------------------------------------------------------------------
// Scene manifest

struct ManifestFrame {
  std::string id;
  Intrinsics intrinsics;
  RigidTransform world_to_camera;
  std::string depth_path;
  std::string image_path;  // empty when no image is stored
  std::string masks_path;  // empty when no mask set is attached
};

struct SceneManifest {
  std::string cloud_path;
  std::string categories_path;
  std::vector<ManifestFrame> frames;
};

inline nlohmann::json pose_to_json(const RigidTransform& t) {
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.push_back(t.rotation(r, c));
    m.push_back(t.translation[r]);
  }
  for (double v : {0.0, 0.0, 0.0, 1.0}) m.push_back(v);
  return m;
}

inline RigidTransform pose_from_json(const nlohmann::json& m) {
  require(m.is_array() && m.size() == 16, "manifest: world_to_camera must have 16 entries");
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = m[r * 4 + c].get<double>();
    t.translation[r] = m[r * 4 + 3].get<double>();
  }
  t.validate();
  return t;
}

inline nlohmann::json manifest_to_json(const SceneManifest& m) {
  nlohmann::json j;
  j["cloud"] = m.cloud_path;
  j["categories"] = m.categories_path;
  auto& frames = j["frames"] = nlohmann::json::array();
  for (const auto& f : m.frames) {
    nlohmann::json e;
    e["id"] = f.id;
    e["fx"] = f.intrinsics.fx;
    e["fy"] = f.intrinsics.fy;
    e["cx"] = f.intrinsics.cx;
    e["cy"] = f.intrinsics.cy;
    e["width"] = f.intrinsics.width;
    e["height"] = f.intrinsics.height;
    e["world_to_camera"] = pose_to_json(f.world_to_camera);
    e["depth"] = f.depth_path;
    e["image"] = f.image_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(f.image_path);
    if (!f.masks_path.empty()) e["masks"] = f.masks_path;
    frames.push_back(std::move(e));
  }
  return j;
}

inline SceneManifest manifest_from_json(const nlohmann::json& j) {
  SceneManifest m;
  try {
    m.cloud_path = j.value("cloud", "");
    m.categories_path = j.value("categories", "");
    for (const auto& e : j.at("frames")) {
      ManifestFrame f;
      f.id = e.at("id").get<std::string>();
      f.intrinsics.fx = e.at("fx").get<double>();
      f.intrinsics.fy = e.at("fy").get<double>();
      f.intrinsics.cx = e.at("cx").get<double>();
      f.intrinsics.cy = e.at("cy").get<double>();
      f.intrinsics.width = e.at("width").get<int>();
      f.intrinsics.height = e.at("height").get<int>();
      f.world_to_camera = pose_from_json(e.at("world_to_camera"));
      f.depth_path = e.at("depth").get<std::string>();
      if (e.contains("image") && e["image"].is_string()) f.image_path = e["image"];
      if (e.contains("masks")) f.masks_path = e["masks"].get<std::string>();
      m.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("manifest: ") + ex.what());
  }
  return m;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) fail_io("write failed: " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    fail(path + ": " + ex.what());
  }
}

// Loads the frames of a manifest with their depth maps. Relative paths are
// resolved against the manifest's directory.
inline std::vector<PosedFrame> load_frames(const SceneManifest& m,
                                           const std::filesystem::path& base) {
  std::vector<PosedFrame> frames;
  for (const auto& e : m.frames) {
    PosedFrame f;
    f.frame_id = e.id;
    f.intrinsics = e.intrinsics;
    f.world_to_camera = e.world_to_camera;
    f.depth = read_depth((base / e.depth_path).string());
    f.validate();
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace ovseg
