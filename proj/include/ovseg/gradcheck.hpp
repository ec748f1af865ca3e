#pragma once

// Central finite-difference check of the full training composite
// (net -> logits -> sigmoid -> cosine loss) on small random problems.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ovseg/distill.hpp"
#include "ovseg/net3d.hpp"

namespace ovseg {

struct GradCheckProblem {
  NetParams params;
  TrainingScene scene;
  std::vector<std::size_t> frames;
};

// Random net (at most 1000 parameters) and random scene: points in a half-meter
// cube, two frames with random visibility and three masks each, one of which
// has empty support so the skip rule is exercised.
inline GradCheckProblem random_gradcheck_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> hidden(3, 8), blocks(1, 2), out_dim(3, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  NetSpec spec;
  spec.hidden_dim = hidden(rng);
  spec.num_blocks = blocks(rng);
  spec.output_dim = out_dim(rng);
  spec.seed = static_cast<std::uint32_t>(rng());
  GradCheckProblem prob;
  prob.params = init_params(spec);
  // Non-zero biases so the check also covers them away from their init.
  for (auto& l : prob.params.layers) {
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = 0.1 * normal(rng);
  }

  PointCloud cloud;
  const int num_points = 40;
  for (int i = 0; i < num_points; ++i) {
    cloud.points.emplace_back(0.5 * unit(rng), 0.5 * unit(rng), 0.5 * unit(rng));
    cloud.colors.emplace_back(unit(rng), unit(rng), unit(rng));
  }
  auto grid = voxelize(cloud, 0.125);
  prob.scene.inputs = voxel_inputs(grid, cloud);
  prob.scene.adjacency = voxel_adjacency(grid);
  prob.scene.grid = std::move(grid);

  const int masks = 3;
  for (int f = 0; f < 2; ++f) {
    LiftedMasks3D lifted;
    lifted.num_masks = masks;
    lifted.num_points = cloud.size();
    lifted.visible.resize(cloud.size());
    lifted.values.assign(static_cast<std::size_t>(masks) * cloud.size(), 0.0f);
    for (std::size_t x = 0; x < cloud.size(); ++x) {
      lifted.visible[x] = unit(rng) < 0.7 ? 1 : 0;
      if (!lifted.visible[x]) continue;
      for (int i = 0; i < masks - 1; ++i) {
        lifted.values[static_cast<std::size_t>(i) * cloud.size() + x] = static_cast<float>(unit(rng));
      }
    }
    Eigen::MatrixXd emb(masks, spec.output_dim);
    for (Eigen::Index r = 0; r < emb.rows(); ++r) {
      for (Eigen::Index c = 0; c < emb.cols(); ++c) emb(r, c) = normal(rng);
    }
    emb.rowwise().normalize();
    prob.scene.frames.push_back(make_training_frame(std::move(lifted), std::move(emb)));
    prob.frames.push_back(static_cast<std::size_t>(f));
  }
  return prob;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

namespace detail {

inline std::vector<std::uint8_t> relu_pattern(const NetParams& params, const TrainingScene& scene) {
  auto fwd = forward(params, scene.inputs, scene.adjacency);
  std::vector<std::uint8_t> pattern;
  for (const auto& z : fwd.cache.pre_activations) {
    for (Eigen::Index k = 0; k < z.size(); ++k) pattern.push_back(z.data()[k] > 0.0);
  }
  return pattern;
}

}  // namespace detail

// Relative error per coordinate is |a - n| / max(|a|, |n|, floor). A
// coordinate whose +/- step changes any ReLU on/off state straddles a kink,
// where central differences do not estimate the derivative; those are
// counted and left out of the maximum.
inline GradCheckResult check_gradients(const NetParams& params, const TrainingScene& scene,
                                       std::span<const std::size_t> frames, double step = 1e-4,
                                       double floor = 1e-6) {
  const auto analytic = scene_objective(params, scene, frames).grad.flatten();
  const auto base_pattern = detail::relu_pattern(params, scene);
  std::vector<double> theta = params.flatten();
  NetParams probe = params;
  GradCheckResult r;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double saved = theta[k];
    theta[k] = saved + step;
    probe.assign(theta);
    const double up = scene_objective(probe, scene, frames).loss;
    const bool kink_up = detail::relu_pattern(probe, scene) != base_pattern;
    theta[k] = saved - step;
    probe.assign(theta);
    const double down = scene_objective(probe, scene, frames).loss;
    const bool kink_down = detail::relu_pattern(probe, scene) != base_pattern;
    theta[k] = saved;
    if (kink_up || kink_down) {
      ++r.skipped_at_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    r.max_relative_error = std::max(r.max_relative_error, std::abs(analytic[k] - numeric) / denom);
    ++r.checked;
  }
  return r;
}

}  // namespace ovseg
