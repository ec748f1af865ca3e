#pragma once

// Scene bundles: synthesis of an oracle scene, the on-disk scene directory,
// and the derived geometry (voxel grid, correspondence) the stages share.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ovseg/distill.hpp"
#include "ovseg/error.hpp"
#include "ovseg/geometry.hpp"
#include "ovseg/geometry_io.hpp"
#include "ovseg/infer.hpp"
#include "ovseg/masks2d.hpp"
#include "ovseg/net3d.hpp"
#include "ovseg/synth.hpp"

namespace ovseg {

inline constexpr double kDefaultVoxelSize = 0.05;

// splitmix64 finalizer; derives independent sub-seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kPrototypeStream = 1, kTargetStream = 2, kMaskStream = 100 };

struct OracleSceneOptions {
  SceneSpec spec = default_scene_spec();
  OracleNoise noise;
  int embedding_dim = kDefaultEmbeddingDim;
  int num_queries = kDefaultNumQueries;
  std::uint64_t seed = 0;
  bool orthogonal_prototypes = false;
};

struct SceneData {
  PointCloud cloud;
  std::vector<PosedFrame> frames;
  std::vector<MaskSet2D> masksets;
  CategoryTable table;
};

inline CategoryTable scene_category_table(const OracleSceneOptions& o) {
  CategoryTable t = make_category_table(o.spec, o.embedding_dim,
                                        derive_seed(o.seed, kPrototypeStream));
  if (o.orthogonal_prototypes) {
    t.prototypes = orthogonal_prototypes(static_cast<int>(t.size()), o.embedding_dim,
                                         derive_seed(o.seed, kPrototypeStream));
  }
  return t;
}

inline SceneData build_oracle_scene(const OracleSceneOptions& o) {
  SceneData d;
  auto gen = generate_scene(o.spec);
  d.cloud = std::move(gen.cloud);
  d.frames = std::move(gen.frames);
  d.table = scene_category_table(o);
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    d.masksets.push_back(oracle_maskset(o.spec, d.frames[f], d.table, o.noise,
                                        derive_seed(o.seed, kMaskStream + f), o.num_queries));
  }
  return d;
}

// Directory layout: cloud.ply, categories.emb, manifest.json, depth/<id>.dpth,
// masks/<id>.msk (paths in the manifest are relative to the directory).
inline SceneManifest write_scene_directory(const std::filesystem::path& dir, const SceneData& d) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "depth", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) fail_io("cannot create directory " + dir.string() + ": " + ec.message());
  SceneManifest m;
  m.cloud_path = "cloud.ply";
  m.categories_path = "categories.emb";
  write_ply((dir / m.cloud_path).string(), d.cloud);
  save_category_table((dir / m.categories_path).string(), d.table);
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    const auto& fr = d.frames[f];
    ManifestFrame e;
    e.id = fr.frame_id;
    e.intrinsics = fr.intrinsics;
    e.world_to_camera = fr.world_to_camera;
    e.depth_path = "depth/" + fr.frame_id + ".dpth";
    write_depth((dir / e.depth_path).string(), fr.depth);
    if (f < d.masksets.size()) {
      e.masks_path = "masks/" + fr.frame_id + ".msk";
      save_maskset((dir / e.masks_path).string(), d.masksets[f]);
    }
    m.frames.push_back(std::move(e));
  }
  write_json((dir / "manifest.json").string(), manifest_to_json(m));
  return m;
}

inline SceneData load_scene_directory(const std::filesystem::path& dir) {
  const auto manifest = manifest_from_json(read_json((dir / "manifest.json").string()));
  SceneData d;
  d.cloud = read_ply((dir / manifest.cloud_path).string());
  d.frames = load_frames(manifest, dir);
  if (!manifest.categories_path.empty()) {
    d.table = load_category_table((dir / manifest.categories_path).string());
  }
  for (const auto& e : manifest.frames) {
    if (e.masks_path.empty()) fail("frame " + e.id + " has no mask set");
    auto m = load_maskset((dir / e.masks_path).string());
    m.frame_id = e.id;
    d.masksets.push_back(std::move(m));
  }
  return d;
}

struct SceneGeometry {
  VoxelGrid grid;
  Correspondence corr;
};

inline SceneGeometry scene_geometry(const SceneData& d, double voxel_size = kDefaultVoxelSize,
                                    double occlusion_tol = kDefaultOcclusionTolerance) {
  return {voxelize(d.cloud, voxel_size), compute_correspondence(d.cloud, d.frames, occlusion_tol)};
}

// ---------------------------------------------------------------------------
// Training jobs

enum class Baseline {
  kMask,         // mask distillation
  kPointTuned,   // per-point targets: the prototype of the point's category
  kPointFrozen,  // per-point targets: fixed i.i.d. random unit vectors
};

inline Baseline parse_baseline(const std::string& s) {
  if (s == "mask") return Baseline::kMask;
  if (s == "point-tuned") return Baseline::kPointTuned;
  if (s == "point-frozen") return Baseline::kPointFrozen;
  fail("unknown baseline '" + s + "'");
}

inline const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::kMask:
      return "mask";
    case Baseline::kPointTuned:
      return "point-tuned";
    case Baseline::kPointFrozen:
      return "point-frozen";
  }
  return "mask";
}

inline Eigen::MatrixXd prototype_targets(const PointCloud& cloud, const CategoryTable& table) {
  require(cloud.labels.has_value(), "point targets need ground-truth labels");
  Eigen::MatrixXd t(cloud.size(), table.dim());
  for (std::size_t x = 0; x < cloud.size(); ++x) {
    const auto c = (*cloud.labels)[x];
    require(c < table.size(), "label out of range for the category table");
    t.row(static_cast<Eigen::Index>(x)) = table.prototypes.row(c);
  }
  return t;
}

inline Eigen::MatrixXd random_unit_targets(std::size_t rows, int dim, std::uint64_t seed) {
  Eigen::MatrixXd t = gaussian_rows(static_cast<int>(rows), dim, seed);
  t.rowwise().normalize();
  return t;
}

struct TrainJob {
  NetSpec net;
  TrainConfig train;
  Baseline baseline = Baseline::kMask;
};

inline std::pair<NetParams, LossReport> run_train_job(const SceneData& d, const SceneGeometry& g,
                                                      const TrainJob& job) {
  require(job.net.output_dim == d.table.dim(),
          "net output dimension does not match the category table dimension");
  if (job.baseline == Baseline::kMask) {
    std::vector<TrainingScene> scenes;
    scenes.push_back(make_training_scene(d.cloud, g.grid, d.masksets, g.corr));
    return train(scenes, job.net, job.train);
  }
  Eigen::MatrixXd targets =
      job.baseline == Baseline::kPointTuned
          ? prototype_targets(d.cloud, d.table)
          : random_unit_targets(d.cloud.size(), d.table.dim(),
                                derive_seed(job.train.seed, kTargetStream));
  std::vector<PointDistillScene> scenes;
  scenes.push_back(make_point_distill_scene(d.cloud, g.grid, std::move(targets), g.corr));
  return point_distill_train(scenes, job.net, job.train);
}

inline InferenceState scene_inference_state(const SceneData& d, const SceneGeometry& g,
                                            const NetParams& params) {
  require(params.spec.output_dim == d.table.dim(),
          "checkpoint output dimension does not match the category table dimension");
  const auto fwd = forward(params, g.grid, d.cloud);
  return make_inference_state(d.masksets, g.corr, fwd.features, g.grid);
}

}  // namespace ovseg
