#pragma once

// Sparse-voxel feature network with hand-written forward and backward passes.
//
// Each block is affine -> ReLU -> mean over the voxel and its occupied
// 6-neighbors; a final affine head maps to the embedding dimension. Stacking
// blocks grows the receptive field by one voxel per block.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/binary_io.hpp"
#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"

namespace ovseg {

struct NetSpec {
  int input_dim = 6;
  int hidden_dim = 256;
  int num_blocks = 3;
  int output_dim = 256;
  std::uint32_t seed = 0;

  void validate() const {
    require(input_dim >= 1 && hidden_dim >= 1 && num_blocks >= 1 && output_dim >= 1,
            "net spec: all dimensions must be >= 1");
  }

  bool operator==(const NetSpec&) const = default;
};

struct Layer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
};

// Blocks first, head last. Gradients use the same type.
struct NetParams {
  NetSpec spec;
  std::vector<Layer> layers;

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  const Layer& head() const { return layers.back(); }

  NetParams zeros_like() const {
    NetParams z{spec, layers};
    for (auto& l : z.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  // Row-major weights then bias, layer by layer. Also the checkpoint order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(num_parameters());
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
      }
      for (Eigen::Index c = 0; c < l.bias.size(); ++c) out.push_back(l.bias[c]);
    }
    return out;
  }

  void assign(std::span<const double> flat) {
    require(flat.size() == num_parameters(), "parameter vector has wrong length");
    std::size_t k = 0;
    for (auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
      }
      for (Eigen::Index c = 0; c < l.bias.size(); ++c) l.bias[c] = flat[k++];
    }
  }
};

inline std::vector<std::array<int, 2>> layer_shapes(const NetSpec& spec) {
  std::vector<std::array<int, 2>> shapes;
  int in = spec.input_dim;
  for (int b = 0; b < spec.num_blocks; ++b) {
    shapes.push_back({in, spec.hidden_dim});
    in = spec.hidden_dim;
  }
  shapes.push_back({in, spec.output_dim});
  return shapes;
}

// He-normal weights, zero biases.
inline NetParams init_params(const NetSpec& spec) {
  spec.validate();
  NetParams p;
  p.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto [fan_in, fan_out] : layer_shapes(spec)) {
    Layer l;
    l.weight.resize(fan_in, fan_out);
    const double scale = std::sqrt(2.0 / fan_in);
    for (int r = 0; r < fan_in; ++r) {
      for (int c = 0; c < fan_out; ++c) l.weight(r, c) = scale * normal(rng);
    }
    l.bias = Eigen::RowVectorXd::Zero(fan_out);
    p.layers.push_back(std::move(l));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Voxel neighborhoods and inputs

struct VoxelAdjacency {
  // Occupied face neighbors in the order -x, +x, -y, +y, -z, +z.
  std::vector<std::vector<std::uint32_t>> neighbors;

  std::size_t size() const { return neighbors.size(); }

  static VoxelAdjacency isolated(std::size_t n) { return {std::vector<std::vector<std::uint32_t>>(n)}; }
};

inline VoxelAdjacency voxel_adjacency(const VoxelGrid& grid) {
  static constexpr std::array<std::array<int, 3>, 6> kOffsets{
      {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
  VoxelAdjacency adj;
  adj.neighbors.resize(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const auto& k = grid.voxels[v].key;
    for (const auto& o : kOffsets) {
      if (auto n = grid.find({k.x + o[0], k.y + o[1], k.z + o[2]})) adj.neighbors[v].push_back(*n);
    }
  }
  return adj;
}

// Mean color and centroid mapped into [-1,1]^3 by the cloud's bounding box.
inline Eigen::MatrixXd voxel_inputs(const VoxelGrid& grid, const PointCloud& cloud) {
  require(grid.size() > 0, "empty voxel grid");
  require(cloud.size() > 0, "empty cloud");
  Vec3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Eigen::MatrixXd x(grid.size(), 6);
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const auto& vox = grid.voxels[v];
    for (int k = 0; k < 3; ++k) {
      x(v, k) = vox.mean_color[k];
      const double extent = hi[k] - lo[k];
      x(v, 3 + k) = extent > 0.0 ? 2.0 * (vox.mean_position[k] - lo[k]) / extent - 1.0 : 0.0;
    }
  }
  return x;
}

// h(v) = mean of a over v and its occupied neighbors.
inline Eigen::MatrixXd aggregate_neighbors(const Eigen::MatrixXd& a, const VoxelAdjacency& adj) {
  Eigen::MatrixXd h(a.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double* src = a.col(c).data();
    double* dst = h.col(c).data();
    for (Eigen::Index v = 0; v < a.rows(); ++v) {
      const auto& nb = adj.neighbors[v];
      double acc = src[v];
      for (auto n : nb) acc += src[n];
      dst[v] = acc / static_cast<double>(1 + nb.size());
    }
  }
  return h;
}

// Adjoint of aggregate_neighbors.
inline Eigen::MatrixXd aggregate_neighbors_transpose(const Eigen::MatrixXd& dh,
                                                     const VoxelAdjacency& adj) {
  Eigen::MatrixXd da = Eigen::MatrixXd::Zero(dh.rows(), dh.cols());
  for (Eigen::Index c = 0; c < dh.cols(); ++c) {
    const double* src = dh.col(c).data();
    double* dst = da.col(c).data();
    for (Eigen::Index v = 0; v < dh.rows(); ++v) {
      const auto& nb = adj.neighbors[v];
      const double share = src[v] / static_cast<double>(1 + nb.size());
      dst[v] += share;
      for (auto n : nb) dst[n] += share;
    }
  }
  return da;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ActivationCache {
  std::vector<Eigen::MatrixXd> layer_inputs;    // input of every layer, head last
  std::vector<Eigen::MatrixXd> pre_activations;  // per block, before ReLU
  std::shared_ptr<const VoxelAdjacency> adjacency;
};

struct ForwardResult {
  Eigen::MatrixXd features;  // V x D
  ActivationCache cache;
};

// The cache refers to `adjacency` without owning it when it is passed by
// reference; the caller keeps it alive until backward has run.
inline ForwardResult forward(const NetParams& params, const Eigen::MatrixXd& inputs,
                             std::shared_ptr<const VoxelAdjacency> adjacency) {
  require(inputs.rows() > 0, "empty voxel grid");
  require(inputs.cols() == params.spec.input_dim, "input width does not match the net spec");
  require(adjacency && adjacency->size() == static_cast<std::size_t>(inputs.rows()),
          "adjacency does not match the voxel count");
  ForwardResult r;
  r.cache.adjacency = std::move(adjacency);
  Eigen::MatrixXd x = inputs;
  const int blocks = params.spec.num_blocks;
  for (int b = 0; b < blocks; ++b) {
    const auto& l = params.layers[b];
    r.cache.layer_inputs.push_back(x);
    Eigen::MatrixXd z = (x * l.weight).rowwise() + l.bias;
    Eigen::MatrixXd a = z.cwiseMax(0.0);
    r.cache.pre_activations.push_back(std::move(z));
    x = aggregate_neighbors(a, *r.cache.adjacency);
  }
  r.cache.layer_inputs.push_back(x);
  r.features = (x * params.head().weight).rowwise() + params.head().bias;
  return r;
}

inline ForwardResult forward(const NetParams& params, const Eigen::MatrixXd& inputs,
                             const VoxelAdjacency& adjacency) {
  return forward(params, inputs,
                 std::shared_ptr<const VoxelAdjacency>(std::shared_ptr<void>(), &adjacency));
}

inline ForwardResult forward(const NetParams& params, const Eigen::MatrixXd& inputs,
                             VoxelAdjacency&& adjacency) {
  return forward(params, inputs, std::make_shared<const VoxelAdjacency>(std::move(adjacency)));
}

inline ForwardResult forward(const NetParams& params, const VoxelGrid& grid,
                             const PointCloud& cloud) {
  if (grid.size() == 0) fail("empty voxel grid");
  return forward(params, voxel_inputs(grid, cloud),
                 std::make_shared<const VoxelAdjacency>(voxel_adjacency(grid)));
}

// Reverse-mode gradients of sum(features .* grad_features) w.r.t. parameters.
// ReLU'(0) is taken as 0.
inline NetParams backward(const NetParams& params, const ActivationCache& cache,
                          const Eigen::MatrixXd& grad_features) {
  const auto& head_in = cache.layer_inputs.back();
  if (grad_features.rows() != head_in.rows() ||
      grad_features.cols() != params.spec.output_dim ||
      cache.pre_activations.size() != static_cast<std::size_t>(params.spec.num_blocks) ||
      !cache.adjacency) {
    fail("backward: shape mismatch");
  }
  NetParams g = params.zeros_like();
  const int blocks = params.spec.num_blocks;
  g.layers[blocks].weight = head_in.transpose() * grad_features;
  g.layers[blocks].bias = grad_features.colwise().sum();
  Eigen::MatrixXd dx = grad_features * params.head().weight.transpose();
  for (int b = blocks - 1; b >= 0; --b) {
    Eigen::MatrixXd da = aggregate_neighbors_transpose(dx, *cache.adjacency);
    Eigen::MatrixXd dz = (cache.pre_activations[b].array() > 0.0).select(da, 0.0);
    g.layers[b].weight = cache.layer_inputs[b].transpose() * dz;
    g.layers[b].bias = dz.colwise().sum();
    if (b > 0) dx = dz * params.layers[b].weight.transpose();
  }
  return g;
}

// Copies each voxel's feature row to all of its member points.
inline Eigen::MatrixXd broadcast_to_points(const Eigen::MatrixXd& voxel_features,
                                           const VoxelGrid& grid) {
  require(static_cast<std::size_t>(voxel_features.rows()) == grid.size(),
          "feature count does not match voxel count");
  Eigen::MatrixXd out(grid.point_to_voxel.size(), voxel_features.cols());
  for (std::size_t i = 0; i < grid.point_to_voxel.size(); ++i) {
    out.row(i) = voxel_features.row(grid.point_to_voxel[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "NET1", NetSpec fields as u32, then float64 parameters.

inline void save_checkpoint(const std::string& path, const NetParams& p) {
  binary::Writer w;
  w.magic("NET1");
  for (auto v : {static_cast<std::uint32_t>(p.spec.input_dim),
                 static_cast<std::uint32_t>(p.spec.hidden_dim),
                 static_cast<std::uint32_t>(p.spec.num_blocks),
                 static_cast<std::uint32_t>(p.spec.output_dim), p.spec.seed}) {
    w.u32(v);
  }
  for (double v : p.flatten()) w.f64(v);
  w.save(path);
}

inline NetParams load_checkpoint(const std::string& path) {
  auto data = binary::read_file(path);
  binary::Reader r(data, "corrupt checkpoint: " + path);
  if (!r.has_magic("NET1")) fail("not a checkpoint file: " + path);
  NetSpec spec;
  spec.input_dim = static_cast<int>(r.u32());
  spec.hidden_dim = static_cast<int>(r.u32());
  spec.num_blocks = static_cast<int>(r.u32());
  spec.output_dim = static_cast<int>(r.u32());
  spec.seed = r.u32();
  spec.validate();
  NetParams p = init_params(spec);
  std::vector<double> flat(p.num_parameters());
  for (auto& v : flat) v = r.f64();
  if (r.remaining() != 0) fail("corrupt checkpoint: " + path);
  p.assign(flat);
  return p;
}

}  // namespace ovseg
