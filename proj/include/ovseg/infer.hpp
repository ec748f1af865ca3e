#pragma once

// Open-vocabulary inference. Per frame, every mask spreads its category
// probabilities over the points through two masks: the lifted 2D (salient)
// mask and the predicted 3D (geometric) mask, blended by lambda. Frames are
// combined by a per-point mean over the frames that see the point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/distill.hpp"
#include "ovseg/error.hpp"
#include "ovseg/geometry_io.hpp"
#include "ovseg/lift.hpp"
#include "ovseg/masks2d.hpp"
#include "ovseg/net3d.hpp"

namespace ovseg {

enum class FallbackPolicy {
  kGeometricBranch,  // never-visible points use the 3D term averaged over all frames
  kNone,             // never-visible points get all-zero probabilities
};

struct InferenceConfig {
  double lambda = 0.5;
  double alpha = 0.5;
  double temperature = kDefaultTemperature;
  std::vector<std::size_t> frames;  // empty selects every frame
  FallbackPolicy fallback = FallbackPolicy::kGeometricBranch;

  void validate() const {
    require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0,1]");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
    require(temperature > 0.0, "temperature must be positive");
  }
};

enum class AblationMode { kFull, kNo2dMask, kNo3dMask, kGenOnly, kDisOnly };

inline AblationMode parse_ablation(const std::string& s) {
  if (s == "full") return AblationMode::kFull;
  if (s == "no-2d-mask") return AblationMode::kNo2dMask;
  if (s == "no-3d-mask") return AblationMode::kNo3dMask;
  if (s == "gen-only") return AblationMode::kGenOnly;
  if (s == "dis-only") return AblationMode::kDisOnly;
  fail("unknown ablation mode '" + s + "'");
}

inline InferenceConfig ablate(InferenceConfig cfg, AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull:
      cfg.lambda = 0.5;
      cfg.alpha = 0.5;
      break;
    case AblationMode::kNo2dMask:
      cfg.lambda = 0.0;
      break;
    case AblationMode::kNo3dMask:
      cfg.lambda = 1.0;
      break;
    case AblationMode::kGenOnly:
      cfg.alpha = 1.0;
      break;
    case AblationMode::kDisOnly:
      cfg.alpha = 0.0;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline state

// Non-padding masks of one frame with their lifted and predicted per-point
// values.
struct FrameState {
  std::string frame_id;
  std::vector<int> masks;           // indices into the mask set
  Eigen::MatrixXd embeddings;       // n x D
  Eigen::MatrixXd gen_probs;        // n x C
  Eigen::MatrixXd salient;          // n x M, lifted 2D masks
  Eigen::MatrixXd geometric;        // n x M, sigmoid(<F, f_i>)
  std::vector<std::uint8_t> visible;
};

struct InferenceState {
  std::size_t num_points = 0;
  std::vector<FrameState> frames;
};

inline FrameState make_frame_state(const MaskSet2D& maskset, const LiftedMasks3D& lifted,
                                   const Eigen::MatrixXd& voxel_features, const VoxelGrid& grid) {
  require(maskset.dim == voxel_features.cols(),
          "net output dimension does not match mask embedding dimension");
  require(lifted.num_points == grid.point_to_voxel.size(), "lifted masks do not match the grid");
  FrameState f;
  f.frame_id = maskset.frame_id;
  f.visible = lifted.visible;
  for (int i = 0; i < maskset.num_masks; ++i) {
    if (!maskset.is_padding(i)) f.masks.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(f.masks.size());
  const auto m = static_cast<Eigen::Index>(lifted.num_points);
  const Eigen::MatrixXd all_emb = maskset.embedding_matrix();
  const Eigen::MatrixXd all_gen = maskset.generative_probs();
  f.embeddings.resize(n, maskset.dim);
  f.gen_probs.resize(n, maskset.num_categories);
  f.salient.resize(n, m);
  for (Eigen::Index k = 0; k < n; ++k) {
    f.embeddings.row(k) = all_emb.row(f.masks[k]);
    f.gen_probs.row(k) = all_gen.row(f.masks[k]);
    for (Eigen::Index x = 0; x < m; ++x) f.salient(k, x) = lifted.at(f.masks[k], x);
  }
  const Eigen::MatrixXd voxel_logits = f.embeddings * voxel_features.transpose();  // n x V
  f.geometric.resize(n, m);
  for (Eigen::Index x = 0; x < m; ++x) {
    const auto v = grid.point_to_voxel[x];
    for (Eigen::Index k = 0; k < n; ++k) f.geometric(k, x) = sigmoid(voxel_logits(k, v));
  }
  return f;
}

inline InferenceState make_inference_state(std::span<const MaskSet2D> masksets,
                                           const Correspondence& corr,
                                           const Eigen::MatrixXd& voxel_features,
                                           const VoxelGrid& grid) {
  require(masksets.size() == corr.frames.size(), "one mask set per frame is required");
  InferenceState s;
  s.num_points = grid.point_to_voxel.size();
  for (std::size_t f = 0; f < masksets.size(); ++f) {
    auto lifted = lift_masks(masksets[f], corr.frames[f], corr.frames[f].frame_id);
    s.frames.push_back(make_frame_state(masksets[f], lifted, voxel_features, grid));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fused salient and geometric evidence

// Per-frame inputs of the per-point probability: the category probabilities
// of each mask plus its salient and geometric masks.
struct FrameEvidence {
  const Eigen::MatrixXd* probs = nullptr;      // n x C
  const Eigen::MatrixXd* salient = nullptr;    // n x M
  const Eigen::MatrixXd* geometric = nullptr;  // n x M
  const std::vector<std::uint8_t>* visible = nullptr;
};

// Sums over frames of the two terms, kept apart so lambda can be applied
// afterwards. Summation runs frame by frame, mask by mask.
struct EvidenceTerms {
  Eigen::MatrixXd salient;           // M x C, visible frames only
  Eigen::MatrixXd geometric;         // M x C, visible frames only
  Eigen::MatrixXd geometric_all;     // M x C, every frame
  std::vector<std::uint32_t> coverage;
  std::size_t num_frames = 0;
};

inline EvidenceTerms accumulate_evidence(std::span<const FrameEvidence> frames) {
  if (frames.empty()) fail("empty frame set");
  const Eigen::Index m = frames.front().salient->cols();
  const Eigen::Index c = frames.front().probs->cols();
  EvidenceTerms t;
  t.salient = Eigen::MatrixXd::Zero(m, c);
  t.geometric = Eigen::MatrixXd::Zero(m, c);
  t.geometric_all = Eigen::MatrixXd::Zero(m, c);
  t.coverage.assign(static_cast<std::size_t>(m), 0);
  t.num_frames = frames.size();
  for (const auto& f : frames) {
    require(f.salient->cols() == m && f.geometric->cols() == m && f.probs->cols() == c,
            "frames disagree on point or category count");
    const auto& p = *f.probs;
    for (Eigen::Index x = 0; x < m; ++x) {
      const bool vis = (*f.visible)[x] != 0;
      if (vis) ++t.coverage[x];
      for (Eigen::Index cat = 0; cat < c; ++cat) {
        double s2 = 0.0, s3 = 0.0;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
          s2 += p(i, cat) * (*f.salient)(i, x);
          s3 += p(i, cat) * (*f.geometric)(i, x);
        }
        t.geometric_all(x, cat) += s3;
        if (vis) {
          t.salient(x, cat) += s2;
          t.geometric(x, cat) += s3;
        }
      }
    }
  }
  return t;
}

struct LabeledCloud {
  Eigen::MatrixXd probs;  // M x C
  std::vector<std::uint16_t> labels;
  std::vector<std::uint32_t> coverage;
};

inline Eigen::MatrixXd combine_evidence(const EvidenceTerms& t, double lambda,
                                        FallbackPolicy fallback) {
  Eigen::MatrixXd p(t.salient.rows(), t.salient.cols());
  for (Eigen::Index x = 0; x < p.rows(); ++x) {
    const auto cov = t.coverage[x];
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      if (cov > 0) {
        p(x, c) = (lambda * t.salient(x, c) + (1.0 - lambda) * t.geometric(x, c)) / cov;
      } else if (fallback == FallbackPolicy::kGeometricBranch) {
        p(x, c) = t.geometric_all(x, c) / static_cast<double>(t.num_frames);
      } else {
        p(x, c) = 0.0;
      }
    }
  }
  return p;
}

inline Eigen::MatrixXd label_probabilities(std::span<const FrameEvidence> frames,
                                           const InferenceConfig& cfg) {
  cfg.validate();
  return combine_evidence(accumulate_evidence(frames), cfg.lambda, cfg.fallback);
}

// Row argmax, lowest index on ties.
inline std::vector<std::uint16_t> assign_labels(const Eigen::MatrixXd& p) {
  std::vector<std::uint16_t> labels(static_cast<std::size_t>(p.rows()), 0);
  for (Eigen::Index x = 0; x < p.rows(); ++x) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < p.cols(); ++c) {
      if (p(x, c) > p(x, best)) best = c;
    }
    labels[x] = static_cast<std::uint16_t>(best);
  }
  return labels;
}

inline std::vector<std::size_t> selected_frames(const InferenceState& state,
                                                const InferenceConfig& cfg) {
  std::vector<std::size_t> idx = cfg.frames;
  if (idx.empty()) {
    for (std::size_t f = 0; f < state.frames.size(); ++f) idx.push_back(f);
  }
  for (auto f : idx) require(f < state.frames.size(), "frame index out of range");
  if (idx.empty()) fail("empty frame set");
  return idx;
}

// Per-mask category probabilities of every selected frame for the given
// vocabulary (rows of `prototypes`).
inline std::vector<Eigen::MatrixXd> mask_category_probs(const InferenceState& state,
                                                        const std::vector<std::size_t>& frames,
                                                        const Eigen::MatrixXd& prototypes,
                                                        const InferenceConfig& cfg,
                                                        bool generative_available) {
  std::vector<Eigen::MatrixXd> out;
  for (auto f : frames) {
    const auto& fs = state.frames[f];
    Eigen::MatrixXd p_dis = discriminative_probs(fs.embeddings, prototypes, cfg.temperature);
    if (generative_available) {
      require(fs.gen_probs.cols() == prototypes.rows(),
              "generative probabilities do not match the category table");
      out.push_back(ensemble_category_probs(fs.gen_probs, p_dis, cfg.alpha).probs);
    } else {
      Eigen::MatrixXd uniform =
          Eigen::MatrixXd::Constant(p_dis.rows(), p_dis.cols(), 1.0 / static_cast<double>(p_dis.cols()));
      out.push_back(ensemble_category_probs(uniform, p_dis, 0.0).probs);
    }
  }
  return out;
}

inline std::vector<FrameEvidence> frame_evidence(const InferenceState& state,
                                                 const std::vector<std::size_t>& frames,
                                                 const std::vector<Eigen::MatrixXd>& probs) {
  std::vector<FrameEvidence> ev;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& fs = state.frames[frames[k]];
    ev.push_back({&probs[k], &fs.salient, &fs.geometric, &fs.visible});
  }
  return ev;
}

inline LabeledCloud infer(const InferenceState& state, const CategoryTable& table,
                          const InferenceConfig& cfg) {
  cfg.validate();
  const auto frames = selected_frames(state, cfg);
  const auto probs = mask_category_probs(state, frames, table.prototypes, cfg, true);
  const auto ev = frame_evidence(state, frames, probs);
  auto terms = accumulate_evidence(ev);
  LabeledCloud out;
  out.probs = combine_evidence(terms, cfg.lambda, cfg.fallback);
  out.labels = assign_labels(out.probs);
  out.coverage = std::move(terms.coverage);
  return out;
}

// Per-point score of a free-form query against the given negatives. Ad-hoc
// queries have no generative probabilities, so the category ensemble runs
// with alpha = 0 (text-embedding classification only).
inline std::vector<double> ground_query(const Eigen::VectorXd& query,
                                        const Eigen::MatrixXd& negatives,
                                        const InferenceState& state, InferenceConfig cfg) {
  require(negatives.rows() >= 1, "grounding needs at least one negative embedding");
  require(negatives.cols() == query.size(), "negative embeddings differ in dimension");
  cfg.alpha = 0.0;
  cfg.validate();
  Eigen::MatrixXd vocab(negatives.rows() + 1, query.size());
  vocab.row(0) = query.transpose();
  vocab.bottomRows(negatives.rows()) = negatives;
  const auto frames = selected_frames(state, cfg);
  const auto probs = mask_category_probs(state, frames, vocab, cfg, false);
  const auto ev = frame_evidence(state, frames, probs);
  const Eigen::MatrixXd p = combine_evidence(accumulate_evidence(ev), cfg.lambda, cfg.fallback);
  std::vector<double> score(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index x = 0; x < p.rows(); ++x) score[x] = std::clamp(p(x, 0), 0.0, 1.0);
  return score;
}

// ---------------------------------------------------------------------------
// Outputs

inline void write_labeled_ply(const std::string& path, const PointCloud& cloud,
                              const LabeledCloud& labeled) {
  auto table = cloud_to_ply_table(PointCloud{cloud.points, cloud.colors, std::nullopt});
  PlyProperty label{"label", PlyType::kUShort, std::vector<double>(cloud.size())};
  PlyProperty max_prob{"max_prob", PlyType::kFloat, std::vector<double>(cloud.size())};
  PlyProperty coverage{"coverage", PlyType::kUShort, std::vector<double>(cloud.size())};
  for (std::size_t x = 0; x < cloud.size(); ++x) {
    label.values[x] = labeled.labels[x];
    max_prob.values[x] = labeled.probs.row(static_cast<Eigen::Index>(x)).maxCoeff();
    coverage.values[x] = std::min<std::uint32_t>(labeled.coverage[x], 65535);
  }
  table.properties.push_back(std::move(label));
  table.properties.push_back(std::move(max_prob));
  table.properties.push_back(std::move(coverage));
  write_ply_table(path, table);
}

inline void write_score_ply(const std::string& path, const PointCloud& cloud,
                            std::span<const double> scores) {
  require(scores.size() == cloud.size(), "one score per point is required");
  PointCloud colored{cloud.points, std::vector<Vec3>(cloud.size()), std::nullopt};
  for (std::size_t x = 0; x < cloud.size(); ++x) colored.colors[x] = Vec3(scores[x], 0.0, 0.0);
  auto table = cloud_to_ply_table(colored);
  PlyProperty score{"score", PlyType::kFloat, std::vector<double>(scores.begin(), scores.end())};
  table.properties.push_back(std::move(score));
  write_ply_table(path, table);
}

}  // namespace ovseg
