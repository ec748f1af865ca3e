#pragma once

// Run configuration shared by the subcommands: JSON file first, then flags.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovseg/ovseg.hpp"

namespace ovseg::cli {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  std::string scene_dir;
  std::string checkpoint;
  std::string pred;
  std::string query;
  int verbosity = 0;

  OracleSceneOptions oracle;
  double voxel_size = kDefaultVoxelSize;
  double occlusion_tol = kDefaultOcclusionTolerance;
  TrainJob job;
  InferenceConfig inference;
  std::optional<AblationMode> ablation;
  bool all_points = false;
  int gradcheck_problems = 20;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
  require(j.is_object(), "config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) fail("config: unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

// Keys: seed, out, scene_dir, checkpoint, pred, query, scene{SceneSpec},
// oracle{mask_blur, embedding_noise, confusion, embedding_dim, num_queries,
// orthogonal_prototypes}, geometry{voxel_size, occlusion_tol},
// net{hidden_dim, num_blocks}, train{epochs, lr, power, batch_frames,
// baseline}, inference{lambda, alpha, temperature, frames, ablate,
// all_points}, gradcheck{problems}.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read_opt;
  RunConfig c;
  try {
    check_keys(j, "config",
               {"seed", "out", "scene_dir", "checkpoint", "pred", "query", "scene", "oracle",
                "geometry", "net", "train", "inference", "gradcheck"});
    read_opt(j, "seed", c.seed);
    read_opt(j, "out", c.out);
    read_opt(j, "scene_dir", c.scene_dir);
    read_opt(j, "checkpoint", c.checkpoint);
    read_opt(j, "pred", c.pred);
    read_opt(j, "query", c.query);
    if (j.contains("scene")) c.oracle.spec = scene_spec_from_json(j.at("scene"));
    if (j.contains("oracle")) {
      const auto& o = j.at("oracle");
      check_keys(o, "oracle",
                 {"mask_blur", "embedding_noise", "confusion", "embedding_dim", "num_queries",
                  "orthogonal_prototypes"});
      read_opt(o, "mask_blur", c.oracle.noise.mask_blur);
      read_opt(o, "embedding_noise", c.oracle.noise.embedding_noise);
      read_opt(o, "confusion", c.oracle.noise.confusion);
      read_opt(o, "embedding_dim", c.oracle.embedding_dim);
      read_opt(o, "num_queries", c.oracle.num_queries);
      read_opt(o, "orthogonal_prototypes", c.oracle.orthogonal_prototypes);
    }
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      check_keys(g, "geometry", {"voxel_size", "occlusion_tol"});
      read_opt(g, "voxel_size", c.voxel_size);
      read_opt(g, "occlusion_tol", c.occlusion_tol);
    }
    if (j.contains("net")) {
      const auto& n = j.at("net");
      check_keys(n, "net", {"hidden_dim", "num_blocks"});
      read_opt(n, "hidden_dim", c.job.net.hidden_dim);
      read_opt(n, "num_blocks", c.job.net.num_blocks);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, "train", {"epochs", "lr", "power", "batch_frames", "baseline"});
      read_opt(t, "epochs", c.job.train.epochs);
      read_opt(t, "lr", c.job.train.learning_rate);
      read_opt(t, "power", c.job.train.poly_power);
      read_opt(t, "batch_frames", c.job.train.frames_per_step);
      if (t.contains("baseline")) c.job.baseline = parse_baseline(t.at("baseline").get<std::string>());
    }
    if (j.contains("inference")) {
      const auto& i = j.at("inference");
      check_keys(i, "inference",
                 {"lambda", "alpha", "temperature", "frames", "ablate", "all_points"});
      read_opt(i, "lambda", c.inference.lambda);
      read_opt(i, "alpha", c.inference.alpha);
      read_opt(i, "temperature", c.inference.temperature);
      read_opt(i, "frames", c.inference.frames);
      read_opt(i, "all_points", c.all_points);
      if (i.contains("ablate")) c.ablation = parse_ablation(i.at("ablate").get<std::string>());
    }
    if (j.contains("gradcheck")) {
      const auto& g = j.at("gradcheck");
      check_keys(g, "gradcheck", {"problems"});
      read_opt(g, "problems", c.gradcheck_problems);
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("config: ") + ex.what());
  }
  return c;
}

}  // namespace ovseg::cli
