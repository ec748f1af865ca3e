#pragma once

// Deterministic synthetic scenes built from axis-aligned primitives. Depth maps
// and ground-truth label images come from analytic ray casting, so occlusion
// ground truth is exact.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"

namespace ovseg {

enum class Group : std::uint8_t { kHead = 0, kTail = 1 };

inline const char* group_name(Group g) { return g == Group::kHead ? "head" : "tail"; }

enum class PrimitiveType { kFloor, kWall, kBox };

// Planes are boxes with zero extent along their normal axis.
struct Primitive {
  PrimitiveType type = PrimitiveType::kBox;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();
  std::uint16_t category = 0;

  Vec3 min() const { return center - 0.5 * size; }
  Vec3 max() const { return center + 0.5 * size; }
};

struct CategoryInfo {
  std::string name;
  Group group = Group::kHead;
};

// Cameras on a horizontal arc around `orbit_center`, all looking at `look_at`.
struct CameraTrajectory {
  Vec3 orbit_center = Vec3::Zero();
  double radius = 1.0;
  double height = 1.5;
  Vec3 look_at = Vec3::Zero();
  double start_deg = 0.0;
  double end_deg = 90.0;
  int count = 8;
  int width = 128;
  int height_px = 128;
  double fov_deg = 75.0;
};

struct SceneSpec {
  Vec3 room_min = Vec3::Zero();
  Vec3 room_max = Vec3::Ones();
  std::vector<CategoryInfo> categories;
  std::vector<Primitive> primitives;
  double points_per_square_meter = 500.0;
  CameraTrajectory cameras;
  std::uint64_t seed = 0;

  std::size_t num_categories() const { return categories.size(); }

  void validate() const {
    require(!categories.empty(), "scene: no categories");
    require(points_per_square_meter > 0.0, "scene: point density must be positive");
    require(cameras.count >= 1 && cameras.width >= 1 && cameras.height_px >= 1,
            "scene: invalid camera trajectory");
    require(cameras.fov_deg > 0.0 && cameras.fov_deg < 180.0, "scene: invalid field of view");
    constexpr double slack = 1e-9;
    for (const auto& p : primitives) {
      require(p.category < categories.size(), "scene: primitive category out of range");
      require((p.size.array() >= 0.0).all(), "scene: negative primitive size");
      require(((p.min() - room_min).array() >= -slack).all() &&
                  ((room_max - p.max()).array() >= -slack).all(),
              "scene: primitive outside room extents");
      if (p.type == PrimitiveType::kFloor) {
        require(p.size.z() == 0.0, "scene: floor must have zero height");
      } else if (p.type == PrimitiveType::kWall) {
        require(p.size.x() == 0.0 || p.size.y() == 0.0, "scene: wall must be vertical plane");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Ray casting

struct RayHit {
  double t = 0.0;
  int primitive = -1;
};

// Slab test. Returns the entry parameter of a ray starting outside the box.
inline std::optional<double> intersect_aabb(const Vec3& origin, const Vec3& dir,
                                            const Vec3& lo, const Vec3& hi) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (dir[k] == 0.0) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t1 = (lo[k] - origin[k]) / dir[k];
    double t2 = (hi[k] - origin[k]) / dir[k];
    if (t1 > t2) std::swap(t1, t2);
    t_enter = std::max(t_enter, t1);
    t_exit = std::min(t_exit, t2);
  }
  if (t_enter > t_exit || !(t_enter > 0.0)) return std::nullopt;
  return t_enter;
}

// Nearest hit; ties go to the primitive listed first.
inline std::optional<RayHit> cast_ray(std::span<const Primitive> primitives, const Vec3& origin,
                                      const Vec3& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    auto t = intersect_aabb(origin, dir, primitives[i].min(), primitives[i].max());
    if (t && (!best || *t < best->t)) best = RayHit{*t, static_cast<int>(i)};
  }
  return best;
}

// World-space direction of the ray through pixel (u, v), scaled so that its
// camera-space z component is 1: the hit parameter equals the depth.
inline Vec3 pixel_ray(const PosedFrame& frame, double u, double v) {
  const auto& k = frame.intrinsics;
  const Vec3 d_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  return frame.world_to_camera.rotation.transpose() * d_cam;
}

struct RenderResult {
  DepthMap depth;
  std::vector<int> category;  // -1 for background
};

inline RenderResult render(const SceneSpec& spec, const PosedFrame& frame) {
  const int w = frame.width();
  const int h = frame.height();
  RenderResult out{DepthMap(w, h), std::vector<int>(static_cast<std::size_t>(w) * h, -1)};
  const Vec3 eye = frame.camera_center();
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      auto hit = cast_ray(spec.primitives, eye, pixel_ray(frame, u, v));
      if (!hit) continue;
      out.depth.at(u, v) = static_cast<float>(hit->t);
      out.category[static_cast<std::size_t>(v) * w + u] = spec.primitives[hit->primitive].category;
    }
  }
  return out;
}

// One binary H*W mask per category (row-major).
inline std::vector<std::vector<std::uint8_t>> render_gt_masks(const SceneSpec& spec,
                                                              const PosedFrame& frame) {
  auto r = render(spec, frame);
  std::vector<std::vector<std::uint8_t>> masks(spec.num_categories(),
                                               std::vector<std::uint8_t>(r.category.size(), 0));
  for (std::size_t p = 0; p < r.category.size(); ++p) {
    if (r.category[p] >= 0) masks[r.category[p]][p] = 1;
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Cameras and scene generation

inline RigidTransform look_at_pose(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up(0, 0, 1);
  if (forward.cross(up).norm() < 1e-9) up = Vec3(0, 1, 0);
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  RigidTransform t;
  t.rotation.row(0) = right.transpose();
  t.rotation.row(1) = down.transpose();
  t.rotation.row(2) = forward.transpose();
  t.translation = -(t.rotation * eye);
  return t;
}

inline Intrinsics make_intrinsics(int width, int height, double fov_deg) {
  const double f = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  return {f, f, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu", i);
  return buf;
}

// Poses and intrinsics of the trajectory, without depth.
inline std::vector<PosedFrame> camera_frames(const SceneSpec& spec) {
  const auto& c = spec.cameras;
  std::vector<PosedFrame> frames;
  for (int i = 0; i < c.count; ++i) {
    const double a = c.count == 1 ? c.start_deg
                                  : c.start_deg + (c.end_deg - c.start_deg) * i / (c.count - 1);
    const double rad = a * std::numbers::pi / 180.0;
    const Vec3 eye(c.orbit_center.x() + c.radius * std::cos(rad),
                   c.orbit_center.y() + c.radius * std::sin(rad), c.height);
    PosedFrame f;
    f.frame_id = frame_name(static_cast<std::size_t>(i));
    f.intrinsics = make_intrinsics(c.width, c.height_px, c.fov_deg);
    f.world_to_camera = look_at_pose(eye, c.look_at);
    frames.push_back(std::move(f));
  }
  return frames;
}

struct GeneratedScene {
  PointCloud cloud;
  std::vector<PosedFrame> frames;
};

namespace detail {

inline const std::array<std::array<int, 3>, 16>& category_palette() {
  static const std::array<std::array<int, 3>, 16> palette = {{
      {152, 223, 138}, {174, 199, 232}, {255, 127, 14}, {214, 39, 40},
      {148, 103, 189}, {140, 86, 75},   {227, 119, 194}, {188, 189, 34},
      {23, 190, 207},  {31, 119, 180},  {255, 187, 120}, {44, 160, 44},
      {197, 176, 213}, {196, 156, 148}, {247, 182, 210}, {158, 218, 229},
  }};
  return palette;
}

struct Face {
  Vec3 origin;
  Vec3 edge_a;
  Vec3 edge_b;
};

inline std::vector<Face> primitive_faces(const Primitive& p) {
  const Vec3 lo = p.min();
  const Vec3 s = p.size;
  std::vector<Face> faces;
  if (p.type != PrimitiveType::kBox) {
    std::array<Vec3, 3> axes{Vec3(s.x(), 0, 0), Vec3(0, s.y(), 0), Vec3(0, 0, s.z())};
    std::vector<Vec3> spans;
    for (const auto& a : axes) {
      if (a.norm() > 0.0) spans.push_back(a);
    }
    if (spans.size() == 2) faces.push_back({lo, spans[0], spans[1]});
    return faces;
  }
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    Vec3 ea = Vec3::Zero(), eb = Vec3::Zero();
    ea[a] = s[a];
    eb[b] = s[b];
    for (int side = 0; side < 2; ++side) {
      Vec3 o = lo;
      o[axis] += side * s[axis];
      faces.push_back({o, ea, eb});
    }
  }
  return faces;
}

}  // namespace detail

inline GeneratedScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  GeneratedScene scene;
  scene.frames = camera_frames(spec);
  for (const auto& f : scene.frames) {
    const Vec3 eye = f.camera_center();
    for (const auto& p : spec.primitives) {
      if (p.type != PrimitiveType::kBox) continue;
      const Vec3 lo = p.min(), hi = p.max();
      if ((eye.array() > lo.array()).all() && (eye.array() < hi.array()).all()) {
        fail("degenerate camera");
      }
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-12, 12);
  const auto& palette = detail::category_palette();
  std::vector<std::uint16_t> labels;
  for (const auto& prim : spec.primitives) {
    const auto& base = palette[prim.category % palette.size()];
    for (const auto& face : detail::primitive_faces(prim)) {
      const double area = face.edge_a.cross(face.edge_b).norm();
      const auto n = static_cast<std::size_t>(std::llround(area * spec.points_per_square_meter));
      for (std::size_t i = 0; i < n; ++i) {
        const double a = unit(rng);
        const double b = unit(rng);
        scene.cloud.points.push_back(face.origin + a * face.edge_a + b * face.edge_b);
        Vec3 color;
        for (int k = 0; k < 3; ++k) color[k] = std::clamp(base[k] + jitter(rng), 0, 255) / 255.0;
        scene.cloud.colors.push_back(color);
        labels.push_back(prim.category);
      }
    }
  }
  scene.cloud.labels = std::move(labels);

  for (auto& f : scene.frames) f.depth = render(spec, f).depth;
  return scene;
}

// ---------------------------------------------------------------------------
// Category tables

struct CategoryTable {
  std::vector<std::string> names;
  Eigen::MatrixXd prototypes;  // C x D, unit-norm rows
  std::vector<Group> groups;

  std::size_t size() const { return names.size(); }
  int dim() const { return static_cast<int>(prototypes.cols()); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    require(!names.empty(), "category table: empty");
    require(static_cast<std::size_t>(prototypes.rows()) == names.size() &&
                groups.size() == names.size(),
            "category table: inconsistent sizes");
  }
};

struct PrototypeResult {
  Eigen::MatrixXd embeddings;  // C x D
  double max_cosine = 0.0;     // over distinct pairs; 0 when C == 1
};

inline double max_pairwise_cosine(const Eigen::MatrixXd& unit_rows) {
  double m = -1.0;
  for (Eigen::Index i = 0; i < unit_rows.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < unit_rows.rows(); ++j) {
      m = std::max(m, unit_rows.row(i).dot(unit_rows.row(j)));
    }
  }
  return unit_rows.rows() < 2 ? 0.0 : m;
}

inline Eigen::MatrixXd gaussian_rows(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

// Unit-norm, near-orthogonal prototypes. Random Gaussian directions are pushed
// apart until the largest pairwise cosine is at most 0.5 or the iteration cap
// is hit; the achieved maximum is reported either way.
inline PrototypeResult make_prototypes(int count, int dim, std::uint64_t seed) {
  require(count >= 1, "prototypes: count must be >= 1");
  require(dim >= 8, "prototypes: dimension must be >= 8");
  constexpr double kTarget = 0.5;
  constexpr int kMaxIterations = 1000;
  constexpr double kStep = 0.1;
  Eigen::MatrixXd e = gaussian_rows(count, dim, seed);
  e.rowwise().normalize();
  double best_cos = max_pairwise_cosine(e);
  Eigen::MatrixXd best = e;
  for (int it = 0; it < kMaxIterations && best_cos > kTarget; ++it) {
    const Eigen::MatrixXd gram = e * e.transpose();
    Eigen::MatrixXd push = Eigen::MatrixXd::Zero(count, dim);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < count; ++j) {
        if (i != j && gram(i, j) > kTarget - 0.05) push.row(i) += gram(i, j) * e.row(j);
      }
    }
    e -= kStep * push;
    e.rowwise().normalize();
    const double c = max_pairwise_cosine(e);
    if (c < best_cos) {
      best_cos = c;
      best = e;
    }
  }
  return {best, best_cos};
}

// Exactly orthonormal prototypes (Gram-Schmidt on Gaussian draws).
inline Eigen::MatrixXd orthogonal_prototypes(int count, int dim, std::uint64_t seed) {
  require(count >= 1 && count <= dim, "orthogonal prototypes need 1 <= count <= dim");
  Eigen::MatrixXd g = gaussian_rows(dim, count, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, count);
  return q.transpose();
}

inline CategoryTable make_category_table(const SceneSpec& spec, int dim, std::uint64_t seed) {
  CategoryTable t;
  for (const auto& c : spec.categories) {
    t.names.push_back(c.name);
    t.groups.push_back(c.group);
  }
  t.prototypes = make_prototypes(static_cast<int>(spec.num_categories()), dim, seed).embeddings;
  return t;
}

// ---------------------------------------------------------------------------
// Default desk-scale scene and JSON form

inline SceneSpec default_scene_spec() {
  SceneSpec s;
  s.room_min = Vec3(0, 0, 0);
  s.room_max = Vec3(3, 3, 2);
  s.categories = {{"floor", Group::kHead},   {"wall", Group::kHead},
                  {"desk", Group::kHead},    {"cabinet", Group::kTail},
                  {"storage box", Group::kTail}, {"shelf", Group::kTail}};
  s.primitives = {
      {PrimitiveType::kFloor, Vec3(1.5, 1.5, 0.0), Vec3(3.0, 3.0, 0.0), 0},
      {PrimitiveType::kWall, Vec3(0.0, 1.5, 1.0), Vec3(0.0, 3.0, 2.0), 1},
      {PrimitiveType::kWall, Vec3(1.5, 0.0, 1.0), Vec3(3.0, 0.0, 2.0), 1},
      {PrimitiveType::kBox, Vec3(0.8, 1.8, 0.375), Vec3(0.9, 1.4, 0.75), 2},
      {PrimitiveType::kBox, Vec3(2.2, 0.4, 0.5), Vec3(0.8, 0.5, 1.0), 3},
      {PrimitiveType::kBox, Vec3(1.9, 1.6, 0.2), Vec3(0.4, 0.4, 0.4), 4},
      // Wall-mounted shelf, kept clear of the wall and the floor.
      {PrimitiveType::kBox, Vec3(1.0, 0.3, 1.3), Vec3(0.8, 0.3, 0.1), 5},
  };
  s.points_per_square_meter = 600.0;
  s.cameras.orbit_center = Vec3(1.5, 1.5, 0.0);
  s.cameras.radius = 1.6;
  s.cameras.height = 1.7;
  s.cameras.look_at = Vec3(0.9, 0.9, 0.5);
  s.cameras.start_deg = -20.0;
  s.cameras.end_deg = 110.0;
  s.cameras.count = 8;
  s.cameras.width = 128;
  s.cameras.height_px = 128;
  s.cameras.fov_deg = 75.0;
  s.seed = 0;
  return s;
}

// Same room, categories and cameras, but no two primitives touch: the wall
// stops short of the floor and every box floats above it. Surfaces of
// different categories are then never within the occlusion tolerance of each
// other along a pixel ray, so lifted oracle masks reproduce the point labels
// exactly.
inline SceneSpec separated_scene_spec() {
  SceneSpec s = default_scene_spec();
  s.primitives = {
      {PrimitiveType::kFloor, Vec3(1.5, 1.5, 0.0), Vec3(3.0, 3.0, 0.0), 0},
      {PrimitiveType::kWall, Vec3(0.0, 1.5, 1.1), Vec3(0.0, 3.0, 1.8), 1},
      {PrimitiveType::kBox, Vec3(0.8, 1.8, 0.5), Vec3(0.9, 1.4, 0.6), 2},
      {PrimitiveType::kBox, Vec3(2.2, 0.4, 0.65), Vec3(0.8, 0.5, 0.9), 3},
      {PrimitiveType::kBox, Vec3(1.9, 1.6, 0.35), Vec3(0.4, 0.4, 0.3), 4},
      {PrimitiveType::kBox, Vec3(1.0, 0.3, 1.3), Vec3(0.8, 0.3, 0.1), 5},
  };
  return s;
}

inline nlohmann::json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  nlohmann::json j;
  j["room_min"] = vec3_to_json(s.room_min);
  j["room_max"] = vec3_to_json(s.room_max);
  for (const auto& c : s.categories) {
    j["categories"].push_back({{"name", c.name}, {"group", group_name(c.group)}});
  }
  for (const auto& p : s.primitives) {
    const char* type = p.type == PrimitiveType::kFloor  ? "floor"
                       : p.type == PrimitiveType::kWall ? "wall"
                                                        : "box";
    j["primitives"].push_back({{"type", type},
                               {"center", vec3_to_json(p.center)},
                               {"size", vec3_to_json(p.size)},
                               {"category", p.category}});
  }
  j["points_per_square_meter"] = s.points_per_square_meter;
  const auto& c = s.cameras;
  j["cameras"] = {{"orbit_center", vec3_to_json(c.orbit_center)},
                  {"radius", c.radius},
                  {"height", c.height},
                  {"look_at", vec3_to_json(c.look_at)},
                  {"start_deg", c.start_deg},
                  {"end_deg", c.end_deg},
                  {"count", c.count},
                  {"width", c.width},
                  {"height_px", c.height_px},
                  {"fov_deg", c.fov_deg}};
  j["seed"] = s.seed;
  return j;
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.room_min = vec3_from_json(j.at("room_min"));
    s.room_max = vec3_from_json(j.at("room_max"));
    for (const auto& c : j.at("categories")) {
      const std::string g = c.value("group", "head");
      require(g == "head" || g == "tail", "scene: group must be head or tail");
      s.categories.push_back({c.at("name").get<std::string>(),
                              g == "head" ? Group::kHead : Group::kTail});
    }
    for (const auto& p : j.at("primitives")) {
      Primitive prim;
      const std::string type = p.at("type").get<std::string>();
      if (type == "floor") {
        prim.type = PrimitiveType::kFloor;
      } else if (type == "wall") {
        prim.type = PrimitiveType::kWall;
      } else if (type == "box") {
        prim.type = PrimitiveType::kBox;
      } else {
        fail("scene: unknown primitive type '" + type + "'");
      }
      prim.center = vec3_from_json(p.at("center"));
      prim.size = vec3_from_json(p.at("size"));
      prim.category = p.at("category").get<std::uint16_t>();
      s.primitives.push_back(prim);
    }
    s.points_per_square_meter = j.at("points_per_square_meter").get<double>();
    const auto& c = j.at("cameras");
    s.cameras.orbit_center = vec3_from_json(c.at("orbit_center"));
    s.cameras.radius = c.at("radius").get<double>();
    s.cameras.height = c.at("height").get<double>();
    s.cameras.look_at = vec3_from_json(c.at("look_at"));
    s.cameras.start_deg = c.at("start_deg").get<double>();
    s.cameras.end_deg = c.at("end_deg").get<double>();
    s.cameras.count = c.at("count").get<int>();
    s.cameras.width = c.at("width").get<int>();
    s.cameras.height_px = c.at("height_px").get<int>();
    s.cameras.fov_deg = c.at("fov_deg").get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("scene spec: ") + ex.what());
  }
  s.validate();
  return s;
}

}  // namespace ovseg
