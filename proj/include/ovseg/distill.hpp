#pragma once

// Mask distillation: mask embeddings act as fixed linear classifiers over the
// 3D features, the sigmoid of the logits is the predicted per-point mask, and
// the loss sums (1 - cosine) between predicted and lifted masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"
#include "ovseg/lift.hpp"
#include "ovseg/masks2d.hpp"
#include "ovseg/net3d.hpp"

namespace ovseg {

inline constexpr double kCosineEpsilon = 1e-8;

// S(i, x) = <F(x), f_i>.  features: M x D, embeddings: N x D.
inline Eigen::MatrixXd mask_logits(const Eigen::MatrixXd& features,
                                   const Eigen::MatrixXd& embeddings) {
  require(features.cols() == embeddings.cols(),
          "feature dimension does not match mask embedding dimension");
  return embeddings * features.transpose();
}

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline Eigen::MatrixXd predicted_masks(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double s) { return sigmoid(s); });
}

// ---------------------------------------------------------------------------
// Loss

struct CosineTerm {
  double loss = 0.0;
  bool skipped = true;
};

// 1 - cos(b, t) over parallel spans. Writes d(loss)/d(b) into grad. Targets
// with norm below eps are skipped (zero loss, zero gradient).
inline CosineTerm cosine_distance(std::span<const double> b, std::span<const double> t,
                                  std::span<double> grad, double eps) {
  double dot = 0.0, bb = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    dot += b[k] * t[k];
    bb += b[k] * b[k];
    tt += t[k] * t[k];
  }
  const double nt = std::sqrt(tt);
  if (nt < eps) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return {};
  }
  const double nb = std::sqrt(bb);
  const double db = std::max(nb, eps);
  const double cos = dot / (db * nt);
  const double radial = nb > eps ? dot / (nb * nb * nb * nt) : 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    grad[k] = -(t[k] / (db * nt) - radial * b[k]);
  }
  return {1.0 - cos, false};
}

struct DistillLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // N x M, zero on invisible points
  int active_masks = 0;
};

// predicted: N x M. Only the frame's visible points enter the cosine.
inline DistillLoss distill_loss(const Eigen::MatrixXd& predicted, const LiftedMasks3D& lifted,
                                double eps = kCosineEpsilon) {
  require(predicted.rows() == lifted.num_masks &&
              static_cast<std::size_t>(predicted.cols()) == lifted.num_points,
          "predicted masks do not match the lifted masks");
  std::vector<std::size_t> vis;
  for (std::size_t x = 0; x < lifted.num_points; ++x) {
    if (lifted.visible[x]) vis.push_back(x);
  }
  if (vis.empty()) fail("empty supervision");
  DistillLoss out;
  out.grad = Eigen::MatrixXd::Zero(predicted.rows(), predicted.cols());
  std::vector<double> b(vis.size()), t(vis.size()), g(vis.size());
  for (int i = 0; i < lifted.num_masks; ++i) {
    for (std::size_t k = 0; k < vis.size(); ++k) {
      b[k] = predicted(i, static_cast<Eigen::Index>(vis[k]));
      t[k] = lifted.at(i, vis[k]);
    }
    auto term = cosine_distance(b, t, g, eps);
    if (term.skipped) continue;
    ++out.active_masks;
    out.loss += term.loss;
    for (std::size_t k = 0; k < vis.size(); ++k) {
      out.grad(i, static_cast<Eigen::Index>(vis[k])) = g[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training data

struct TrainingFrame {
  LiftedMasks3D lifted;
  Eigen::MatrixXd embeddings;  // N x D, constants
  std::vector<std::uint32_t> visible_points;
  std::vector<int> active_masks;  // masks with non-empty lifted support
};

struct TrainingScene {
  VoxelGrid grid;
  Eigen::MatrixXd inputs;
  VoxelAdjacency adjacency;
  std::vector<TrainingFrame> frames;
};

inline TrainingFrame make_training_frame(LiftedMasks3D lifted, Eigen::MatrixXd embeddings,
                                         double eps = kCosineEpsilon) {
  require(embeddings.rows() == lifted.num_masks, "embedding count does not match mask count");
  TrainingFrame f;
  for (std::size_t x = 0; x < lifted.num_points; ++x) {
    if (lifted.visible[x]) f.visible_points.push_back(static_cast<std::uint32_t>(x));
  }
  for (int i = 0; i < lifted.num_masks; ++i) {
    double tt = 0.0;
    for (auto x : f.visible_points) tt += static_cast<double>(lifted.at(i, x)) * lifted.at(i, x);
    if (std::sqrt(tt) >= eps) f.active_masks.push_back(i);
  }
  f.lifted = std::move(lifted);
  f.embeddings = std::move(embeddings);
  return f;
}

inline TrainingScene make_training_scene(const PointCloud& cloud, VoxelGrid grid,
                                         std::span<const MaskSet2D> masksets,
                                         const Correspondence& corr) {
  require(masksets.size() == corr.frames.size(), "one mask set per frame is required");
  TrainingScene s;
  s.inputs = voxel_inputs(grid, cloud);
  s.adjacency = voxel_adjacency(grid);
  s.grid = std::move(grid);
  for (std::size_t f = 0; f < masksets.size(); ++f) {
    auto lifted = lift_masks(masksets[f], corr.frames[f], corr.frames[f].frame_id);
    s.frames.push_back(make_training_frame(std::move(lifted), masksets[f].embedding_matrix()));
  }
  return s;
}

// Loss of one frame. Adds the gradient w.r.t. the per-voxel features, chained
// through the cosine loss, the sigmoid, the logits and the voxel-to-point
// broadcast, into grad_voxel_features. Only masks with lifted support are
// evaluated; the loss skips the rest and they contribute nothing.
inline double frame_objective(const Eigen::MatrixXd& voxel_features, const VoxelGrid& grid,
                              const TrainingFrame& frame, Eigen::MatrixXd& grad_voxel_features,
                              double eps = kCosineEpsilon, double grad_scale = 1.0) {
  if (frame.visible_points.empty()) fail("empty supervision");
  const auto n = static_cast<Eigen::Index>(frame.active_masks.size());
  if (n == 0) return 0.0;
  Eigen::MatrixXd e(n, frame.embeddings.cols());
  for (Eigen::Index k = 0; k < n; ++k) e.row(k) = frame.embeddings.row(frame.active_masks[k]);
  const Eigen::MatrixXd voxel_logits = voxel_features * e.transpose();  // V x n

  const std::size_t nv = frame.visible_points.size();
  std::vector<double> b(nv), t(nv), g(nv);
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(voxel_features.rows(), n);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const int mask = frame.active_masks[k];
    for (std::size_t j = 0; j < nv; ++j) {
      const auto x = frame.visible_points[j];
      b[j] = sigmoid(voxel_logits(grid.point_to_voxel[x], k));
      t[j] = frame.lifted.at(mask, x);
    }
    auto term = cosine_distance(b, t, g, eps);
    if (term.skipped) continue;
    loss += term.loss;
    for (std::size_t j = 0; j < nv; ++j) {
      const auto v = grid.point_to_voxel[frame.visible_points[j]];
      d_logits(v, k) += grad_scale * g[j] * b[j] * (1.0 - b[j]);
    }
  }
  grad_voxel_features.noalias() += d_logits * e;
  return loss;
}

struct Objective {
  double loss = 0.0;
  NetParams grad;
};

// Mean frame loss over the given frames of one scene and its parameter
// gradient.
inline Objective scene_objective(const NetParams& params, const TrainingScene& scene,
                                 std::span<const std::size_t> frames,
                                 double eps = kCosineEpsilon) {
  require(!frames.empty(), "no frames selected");
  auto fwd = forward(params, scene.inputs, scene.adjacency);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(fwd.features.rows(), fwd.features.cols());
  const double scale = 1.0 / static_cast<double>(frames.size());
  double loss = 0.0;
  for (auto f : frames) {
    loss += frame_objective(fwd.features, scene.grid, scene.frames.at(f), grad, eps, scale);
  }
  return {loss * scale, backward(params, fwd.cache, grad)};
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct TrainConfig {
  int epochs = 200;
  int frames_per_step = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double poly_power = 0.9;
  std::uint64_t seed = 0;
  double cosine_epsilon = kCosineEpsilon;

  void validate() const {
    require(epochs >= 0, "epochs must be >= 0");
    require(frames_per_step >= 1, "frames per step must be >= 1");
    require(learning_rate > 0.0, "learning rate must be positive");
  }
};

// lr_t = lr0 * (1 - t/T)^power.
inline double poly_learning_rate(double base, std::size_t step, std::size_t total_steps,
                                 double power) {
  if (total_steps == 0) return base;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return base * std::pow(std::max(frac, 0.0), power);
}

class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double epsilon)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(std::vector<double>& params, std::span<const double> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[k] * grad[k];
      params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct LossReport {
  struct Step {
    std::size_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
  };
  std::vector<Step> steps;
  std::vector<double> epoch_means;

  double first_epoch_mean() const { return epoch_means.empty() ? 0.0 : epoch_means.front(); }
  double last_epoch_mean() const { return epoch_means.empty() ? 0.0 : epoch_means.back(); }
  double loss_ratio() const {
    return first_epoch_mean() > 0.0 ? last_epoch_mean() / first_epoch_mean() : 0.0;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,epoch,lr,loss\n";
    for (const auto& s : steps) os << s.step << ',' << s.epoch << ',' << s.lr << ',' << s.loss << '\n';
    return os.str();
  }
};

inline void write_loss_csv(const std::string& path, const LossReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + path);
  out << r.to_csv();
  if (!out) fail_io("write failed: " + path);
}

namespace detail {

struct FrameRef {
  std::size_t scene = 0;
  std::size_t frame = 0;
};

// Shared driver: shuffles frame references each epoch, splits them into
// batches and hands each batch (grouped by scene, in ascending scene order)
// to `batch_objective`, which returns the batch-mean loss and gradient.
template <typename BatchObjective>
std::pair<NetParams, LossReport> run_training(NetParams params, std::vector<FrameRef> refs,
                                              const TrainConfig& cfg,
                                              BatchObjective&& batch_objective) {
  cfg.validate();
  LossReport report;
  if (cfg.epochs == 0 || refs.empty()) return {std::move(params), std::move(report)};
  const std::size_t batch = static_cast<std::size_t>(cfg.frames_per_step);
  const std::size_t steps_per_epoch = (refs.size() + batch - 1) / batch;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::mt19937_64 rng(cfg.seed);
  Adam adam(params.num_parameters(), cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  std::vector<double> flat = params.flatten();
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(refs.begin(), refs.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto first = refs.begin() + static_cast<std::ptrdiff_t>(s * batch);
      const auto last = refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), (s + 1) * batch));
      std::vector<FrameRef> members(first, last);
      std::stable_sort(members.begin(), members.end(),
                       [](const FrameRef& a, const FrameRef& b) { return a.scene < b.scene; });
      auto [loss, grad] = batch_objective(params, members);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kDiverged, "diverged at step " + std::to_string(step));
      }
      const double lr = poly_learning_rate(cfg.learning_rate, step, total, cfg.poly_power);
      const auto g = grad.flatten();
      adam.step(flat, g, lr);
      params.assign(flat);
      report.steps.push_back({step, epoch, lr, loss});
      epoch_sum += loss;
    }
    report.epoch_means.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
  }
  return {std::move(params), std::move(report)};
}

template <typename Scene, typename FrameLoss>
std::pair<double, NetParams> batch_mean(const NetParams& params, std::span<const Scene> scenes,
                                        const std::vector<FrameRef>& members,
                                        FrameLoss&& frame_loss) {
  NetParams total = params.zeros_like();
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(members.size());
  std::size_t k = 0;
  while (k < members.size()) {
    const std::size_t s = members[k].scene;
    const auto& scene = scenes[s];
    auto fwd = forward(params, scene.inputs, scene.adjacency);
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(fwd.features.rows(), fwd.features.cols());
    for (; k < members.size() && members[k].scene == s; ++k) {
      loss += frame_loss(fwd.features, scene, members[k].frame, grad, scale);
    }
    auto g = backward(params, fwd.cache, grad);
    for (std::size_t l = 0; l < total.layers.size(); ++l) {
      total.layers[l].weight += g.layers[l].weight;
      total.layers[l].bias += g.layers[l].bias;
    }
  }
  return {loss * scale, std::move(total)};
}

}  // namespace detail

// Mask-distillation training with Adam and the polynomial schedule, stepped
// once per batch of frames.
inline std::pair<NetParams, LossReport> train(std::span<const TrainingScene> scenes,
                                              const NetSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<detail::FrameRef> refs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (std::size_t f = 0; f < scenes[s].frames.size(); ++f) {
      const auto& fr = scenes[s].frames[f];
      if (fr.visible_points.empty()) fail("empty supervision");
      require(fr.embeddings.cols() == spec.output_dim,
              "net output dimension does not match mask embedding dimension");
      refs.push_back({s, f});
    }
  }
  return detail::run_training(
      init_params(spec), std::move(refs), cfg,
      [&](const NetParams& params, const std::vector<detail::FrameRef>& members) {
        return detail::batch_mean(params, scenes, members,
                                  [&](const Eigen::MatrixXd& feats, const TrainingScene& scene,
                                      std::size_t f, Eigen::MatrixXd& grad, double scale) {
                                    return frame_objective(feats, scene.grid, scene.frames[f],
                                                           grad, cfg.cosine_epsilon, scale);
                                  });
      });
}

// ---------------------------------------------------------------------------
// Point-based baseline

struct PointDistillScene {
  VoxelGrid grid;
  Eigen::MatrixXd inputs;
  VoxelAdjacency adjacency;
  Eigen::MatrixXd targets;  // M x D
  std::vector<std::vector<std::uint32_t>> frame_points;  // supervised points per frame
};

inline PointDistillScene make_point_distill_scene(const PointCloud& cloud, VoxelGrid grid,
                                                  Eigen::MatrixXd targets,
                                                  const Correspondence& corr) {
  require(static_cast<std::size_t>(targets.rows()) == cloud.size(),
          "one target per point is required");
  PointDistillScene s;
  s.inputs = voxel_inputs(grid, cloud);
  s.adjacency = voxel_adjacency(grid);
  s.grid = std::move(grid);
  s.targets = std::move(targets);
  for (const auto& fc : corr.frames) s.frame_points.push_back(fc.point_index);
  return s;
}

// Mean (1 - cos) between each supervised point's feature and its target;
// the gradient is added into grad_voxel_features.
inline double point_frame_objective(const Eigen::MatrixXd& voxel_features,
                                    const PointDistillScene& scene, std::size_t frame,
                                    Eigen::MatrixXd& grad_voxel_features,
                                    double eps = kCosineEpsilon, double grad_scale = 1.0) {
  const auto& pts = scene.frame_points.at(frame);
  if (pts.empty()) fail("empty supervision");
  const double scale = 1.0 / static_cast<double>(pts.size());
  const auto d = static_cast<std::size_t>(voxel_features.cols());
  std::vector<double> b(d), t(d), g(d);
  double loss = 0.0;
  for (auto x : pts) {
    const auto v = scene.grid.point_to_voxel[x];
    for (std::size_t k = 0; k < d; ++k) {
      b[k] = voxel_features(v, static_cast<Eigen::Index>(k));
      t[k] = scene.targets(x, static_cast<Eigen::Index>(k));
    }
    auto term = cosine_distance(b, t, g, eps);
    if (term.skipped) continue;
    loss += term.loss * scale;
    for (std::size_t k = 0; k < d; ++k) {
      grad_voxel_features(v, static_cast<Eigen::Index>(k)) += g[k] * scale * grad_scale;
    }
  }
  return loss;
}

inline std::pair<NetParams, LossReport> point_distill_train(
    std::span<const PointDistillScene> scenes, const NetSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<detail::FrameRef> refs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    require(scenes[s].targets.cols() == spec.output_dim,
            "net output dimension does not match target dimension");
    for (std::size_t f = 0; f < scenes[s].frame_points.size(); ++f) {
      if (scenes[s].frame_points[f].empty()) fail("empty supervision");
      refs.push_back({s, f});
    }
  }
  return detail::run_training(
      init_params(spec), std::move(refs), cfg,
      [&](const NetParams& params, const std::vector<detail::FrameRef>& members) {
        return detail::batch_mean(params, scenes, members,
                                  [&](const Eigen::MatrixXd& feats,
                                      const PointDistillScene& scene, std::size_t f,
                                      Eigen::MatrixXd& grad, double scale) {
                                    return point_frame_objective(feats, scene, f, grad,
                                                                 cfg.cosine_epsilon, scale);
                                  });
      });
}

}  // namespace ovseg
