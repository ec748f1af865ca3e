#pragma once

// Point clouds, posed depth frames, pinhole projection, occlusion-aware
// pixel-point correspondence and voxelization.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "ovseg/error.hpp"

namespace ovseg {

using Vec3 = Eigen::Vector3d;

inline constexpr double kDefaultOcclusionTolerance = 0.02;

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;  // RGB in [0,1]
  std::optional<std::vector<std::uint16_t>> labels;

  std::size_t size() const { return points.size(); }

  // num_categories == 0 skips the label range check.
  void validate(std::size_t num_categories = 0) const {
    require(colors.size() == points.size(), "point cloud: color count mismatch");
    for (std::size_t i = 0; i < points.size(); ++i) {
      require(points[i].allFinite(), "point cloud: non-finite coordinate");
      for (int k = 0; k < 3; ++k) {
        require(colors[i][k] >= 0.0 && colors[i][k] <= 1.0,
                "point cloud: color outside [0,1]");
      }
    }
    if (labels) {
      require(labels->size() == points.size(), "point cloud: label count mismatch");
      if (num_categories > 0) {
        for (auto l : *labels) {
          require(l < num_categories, "point cloud: label out of range");
        }
      }
    }
  }
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  void validate() const {
    require(rotation.allFinite() && translation.allFinite(),
            "pose: non-finite entries");
    double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity())
                       .cwiseAbs()
                       .maxCoeff();
    require(ortho <= 1e-6, "pose: rotation is not orthonormal");
    require(std::abs(rotation.determinant() - 1.0) <= 1e-6,
            "pose: rotation determinant is not 1");
  }
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

// Row-major H x W map of meters. Zero marks an invalid sample.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float at(int u, int v) const {
    return values[static_cast<std::size_t>(v) * width + u];
  }
  float& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
};

struct PosedFrame {
  Intrinsics intrinsics;
  RigidTransform world_to_camera;
  DepthMap depth;
  std::string frame_id;

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }

  Vec3 camera_center() const { return world_to_camera.inverse().translation; }

  void validate() const {
    require(intrinsics.fx > 0 && intrinsics.fy > 0, "frame: focal length must be positive");
    require(intrinsics.width > 0 && intrinsics.height > 0, "frame: empty image size");
    world_to_camera.validate();
    if (!depth.values.empty()) {
      require(depth.width == intrinsics.width && depth.height == intrinsics.height,
              "frame: depth map size does not match intrinsics");
      for (float d : depth.values) {
        require(std::isfinite(d) && d >= 0.0f, "frame: negative or non-finite depth");
      }
    }
  }
};

struct PixelHit {
  int u = 0;
  int v = 0;
  double depth = 0.0;  // camera-space z, meters
};

// Nearest-integer rounding with ties toward +infinity.
inline int round_pixel(double x) { return static_cast<int>(std::floor(x + 0.5)); }

inline std::optional<PixelHit> project(const Vec3& point, const PosedFrame& frame) {
  const Vec3 c = frame.world_to_camera.apply(point);
  if (!(c.z() > 0.0)) return std::nullopt;
  const auto& k = frame.intrinsics;
  const double x = k.fx * c.x() / c.z() + k.cx;
  const double y = k.fy * c.y() / c.z() + k.cy;
  if (!std::isfinite(x) || !std::isfinite(y)) return std::nullopt;
  const int u = round_pixel(x);
  const int v = round_pixel(y);
  if (u < 0 || v < 0 || u >= k.width || v >= k.height) return std::nullopt;
  return PixelHit{u, v, c.z()};
}

// Inverse of project for a pixel center at the given camera-space depth.
inline Vec3 unproject(double u, double v, double depth, const PosedFrame& frame) {
  const auto& k = frame.intrinsics;
  const Vec3 c((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
  return frame.world_to_camera.inverse().apply(c);
}

// Visible entries of one frame, ordered by increasing point index.
struct FrameCorrespondence {
  std::string frame_id;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> visible;       // length M
  std::vector<std::uint32_t> point_index;  // visible points
  std::vector<PixelHit> pixels;            // parallel to point_index

  std::size_t num_points() const { return visible.size(); }
  std::size_t num_visible() const { return point_index.size(); }
};

struct Correspondence {
  std::vector<FrameCorrespondence> frames;

  std::size_t num_points() const {
    return frames.empty() ? 0 : frames.front().num_points();
  }
};

inline FrameCorrespondence compute_frame_correspondence(const PointCloud& cloud,
                                                        const PosedFrame& frame,
                                                        double occlusion_tol) {
  require(occlusion_tol > 0.0, "occlusion tolerance must be positive");
  require(frame.depth.width == frame.width() && frame.depth.height == frame.height(),
          "frame " + frame.frame_id + " has no depth map of matching size");
  FrameCorrespondence fc;
  fc.frame_id = frame.frame_id;
  fc.width = frame.width();
  fc.height = frame.height();
  fc.visible.assign(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto hit = project(cloud.points[i], frame);
    if (!hit) continue;
    const double measured = frame.depth.at(hit->u, hit->v);
    if (!(measured > 0.0)) continue;
    if (std::abs(hit->depth - measured) > occlusion_tol) continue;
    fc.visible[i] = 1;
    fc.point_index.push_back(static_cast<std::uint32_t>(i));
    fc.pixels.push_back(*hit);
  }
  return fc;
}

inline Correspondence compute_correspondence(const PointCloud& cloud,
                                             std::span<const PosedFrame> frames,
                                             double occlusion_tol = kDefaultOcclusionTolerance) {
  if (frames.empty()) fail("no frames");
  require(occlusion_tol > 0.0, "occlusion tolerance must be positive");
  Correspondence corr;
  corr.frames.reserve(frames.size());
  for (const auto& f : frames) {
    corr.frames.push_back(compute_frame_correspondence(cloud, f, occlusion_tol));
  }
  return corr;
}

struct VoxelKey {
  int x = 0;
  int y = 0;
  int z = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

struct Voxel {
  VoxelKey key;
  Vec3 mean_position = Vec3::Zero();
  Vec3 mean_color = Vec3::Zero();
  std::vector<std::uint32_t> members;
};

struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<Voxel> voxels;
  std::vector<std::uint32_t> point_to_voxel;
  std::map<VoxelKey, std::uint32_t> index;

  std::size_t size() const { return voxels.size(); }

  std::optional<std::uint32_t> find(const VoxelKey& key) const {
    auto it = index.find(key);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  // Same grid with voxels enumerated in the given order: new voxel j is old
  // voxel order[j].
  VoxelGrid permuted(std::span<const std::uint32_t> order) const {
    require(order.size() == voxels.size(), "permutation size mismatch");
    VoxelGrid g;
    g.voxel_size = voxel_size;
    g.voxels.reserve(voxels.size());
    std::vector<std::uint32_t> new_of_old(voxels.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      g.voxels.push_back(voxels[order[j]]);
      new_of_old[order[j]] = static_cast<std::uint32_t>(j);
      g.index[voxels[order[j]].key] = static_cast<std::uint32_t>(j);
    }
    g.point_to_voxel.resize(point_to_voxel.size());
    for (std::size_t i = 0; i < point_to_voxel.size(); ++i) {
      g.point_to_voxel[i] = new_of_old[point_to_voxel[i]];
    }
    return g;
  }
};

inline VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<int>(std::floor(p.x() / voxel_size)),
          static_cast<int>(std::floor(p.y() / voxel_size)),
          static_cast<int>(std::floor(p.z() / voxel_size))};
}

// Voxels are enumerated in ascending key order; members in ascending point
// index, which fixes the summation order of the means.
inline VoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
  require(voxel_size > 0.0, "voxel size must be positive");
  if (cloud.size() == 0) fail("empty cloud");
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  std::vector<VoxelKey> keys(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    keys[i] = voxel_key(cloud.points[i], voxel_size);
    grid.index.emplace(keys[i], 0);
  }
  grid.voxels.resize(grid.index.size());
  std::uint32_t next = 0;
  for (auto& [key, slot] : grid.index) {
    slot = next;
    grid.voxels[next].key = key;
    ++next;
  }
  grid.point_to_voxel.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::uint32_t v = grid.index.at(keys[i]);
    grid.point_to_voxel[i] = v;
    auto& vox = grid.voxels[v];
    vox.members.push_back(static_cast<std::uint32_t>(i));
    vox.mean_position += cloud.points[i];
    vox.mean_color += cloud.colors[i];
  }
  for (auto& vox : grid.voxels) {
    const double n = static_cast<double>(vox.members.size());
    vox.mean_position /= n;
    vox.mean_color /= n;
  }
  return grid;
}

}  // namespace ovseg
