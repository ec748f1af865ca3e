// Command-line entry points: gen-scene, train, infer, ground, eval, gradcheck.
// Exit codes: 0 success, 2 validation, 3 divergence, 4 IO.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ovseg/ovseg.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace ovseg;
using ovseg::cli::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

constexpr double kGradCheckTolerance = 1e-4;

// Values given on the command line; unset ones leave the config untouched.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, scene, checkpoint, pred, query;
  std::optional<double> lambda, alpha, lr, power, voxel_size;
  std::optional<int> epochs, batch_frames, hidden, blocks, problems;
  std::optional<std::string> baseline, ablate;
  bool all_points = false;
  int verbosity = 0;
};

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : cli::config_from_json(read_json(f.config));
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.scene) c.scene_dir = *f.scene;
  if (f.checkpoint) c.checkpoint = *f.checkpoint;
  if (f.pred) c.pred = *f.pred;
  if (f.query) c.query = *f.query;
  if (f.epochs) c.job.train.epochs = *f.epochs;
  if (f.lr) c.job.train.learning_rate = *f.lr;
  if (f.power) c.job.train.poly_power = *f.power;
  if (f.batch_frames) c.job.train.frames_per_step = *f.batch_frames;
  if (f.hidden) c.job.net.hidden_dim = *f.hidden;
  if (f.blocks) c.job.net.num_blocks = *f.blocks;
  if (f.voxel_size) c.voxel_size = *f.voxel_size;
  if (f.baseline) c.job.baseline = parse_baseline(*f.baseline);
  if (f.problems) c.gradcheck_problems = *f.problems;
  if (f.ablate) c.ablation = parse_ablation(*f.ablate);
  if (c.ablation) c.inference = ablate(c.inference, *c.ablation);
  if (f.lambda) c.inference.lambda = *f.lambda;
  if (f.alpha) c.inference.alpha = *f.alpha;
  if (f.all_points) c.all_points = true;
  c.verbosity = f.verbosity;

  c.oracle.seed = c.seed;
  c.oracle.spec.seed = c.seed;
  c.job.net.seed = static_cast<std::uint32_t>(c.seed);
  c.job.net.output_dim = c.oracle.embedding_dim;
  c.job.train.seed = c.seed;
  require(c.voxel_size > 0.0, "voxel size must be positive");
  require(c.occlusion_tol > 0.0, "occlusion tolerance must be positive");
  c.inference.validate();
  c.job.train.validate();
  c.job.net.validate();
  return c;
}

const std::string& need(const std::string& value, const char* flag) {
  if (value.empty()) fail(std::string("missing required ") + flag);
  return value;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir = need(c.out, "--out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail_io("cannot create directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) fail_io("cannot open for writing: " + path.string());
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  if (std::fclose(f) != 0 || !ok) fail_io("write failed: " + path.string());
}

struct LoadedScene {
  SceneData data;
  SceneGeometry geometry;
};

LoadedScene load_scene(const RunConfig& c) {
  LoadedScene s;
  s.data = load_scene_directory(need(c.scene_dir, "--scene"));
  require(s.data.table.size() > 0, "scene has no category table");
  s.geometry = scene_geometry(s.data, c.voxel_size, c.occlusion_tol);
  return s;
}

int cmd_gen_scene(const RunConfig& c) {
  const auto dir = output_dir(c);
  const auto data = build_oracle_scene(c.oracle);
  write_scene_directory(dir, data);
  write_json((dir / "scene.json").string(), scene_spec_to_json(c.oracle.spec));
  std::cout << "points " << data.cloud.size() << " frames " << data.frames.size()
            << " categories " << data.table.size() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& c) {
  const auto scene = load_scene(c);
  const auto dir = output_dir(c);
  auto job = c.job;
  job.net.output_dim = scene.data.table.dim();
  auto [params, report] = run_train_job(scene.data, scene.geometry, job);
  save_checkpoint((dir / "checkpoint.net").string(), params);
  write_loss_csv((dir / "loss.csv").string(), report);
  nlohmann::json summary = {{"baseline", baseline_name(job.baseline)},
                            {"steps", report.steps.size()},
                            {"first_epoch_mean", report.first_epoch_mean()},
                            {"last_epoch_mean", report.last_epoch_mean()},
                            {"loss_ratio", report.loss_ratio()}};
  write_json((dir / "train.json").string(), summary);
  if (c.verbosity > 0) {
    for (std::size_t e = 0; e < report.epoch_means.size(); ++e) {
      std::cerr << "epoch " << e << " loss " << report.epoch_means[e] << '\n';
    }
  }
  std::cout << "baseline " << baseline_name(job.baseline) << " loss_ratio "
            << report.loss_ratio() << '\n';
  return kExitOk;
}

int cmd_infer(const RunConfig& c) {
  const auto scene = load_scene(c);
  const auto params = load_checkpoint(need(c.checkpoint, "--checkpoint"));
  const auto dir = output_dir(c);
  const auto state = scene_inference_state(scene.data, scene.geometry, params);
  const auto labeled = infer(state, scene.data.table, c.inference);
  write_labeled_ply((dir / "labels.ply").string(), scene.data.cloud, labeled);
  std::size_t covered = 0;
  for (auto k : labeled.coverage) covered += k > 0;
  std::cout << "points " << labeled.labels.size() << " covered " << covered << '\n';
  return kExitOk;
}

int cmd_ground(const RunConfig& c) {
  const auto scene = load_scene(c);
  const auto params = load_checkpoint(need(c.checkpoint, "--checkpoint"));
  const auto& table = scene.data.table;
  const auto q = table.find(need(c.query, "--query"));
  if (!q) fail("unknown query category '" + c.query + "'");
  Eigen::MatrixXd negatives(static_cast<Eigen::Index>(table.size()) - 1, table.dim());
  for (std::size_t k = 0, r = 0; k < table.size(); ++k) {
    if (k != *q) negatives.row(static_cast<Eigen::Index>(r++)) = table.prototypes.row(k);
  }
  const auto dir = output_dir(c);
  const auto state = scene_inference_state(scene.data, scene.geometry, params);
  const auto scores = ground_query(table.prototypes.row(*q).transpose(), negatives, state,
                                   c.inference);
  write_score_ply((dir / "scores.ply").string(), scene.data.cloud, scores);
  std::cout << "query " << c.query << " negatives " << negatives.rows() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c) {
  const auto data = load_scene_directory(need(c.scene_dir, "--scene"));
  require(data.cloud.labels.has_value(), "scene cloud has no ground-truth labels");
  const auto pred = read_ply_table(need(c.pred, "--pred"));
  require(pred.rows == data.cloud.size(), "prediction and scene differ in point count");
  const auto& label = pred.get("label");
  const auto* coverage = pred.find("coverage");
  std::vector<std::uint16_t> p, g;
  CoverageStats stats;
  stats.total_points = data.cloud.size();
  for (std::size_t x = 0; x < pred.rows; ++x) {
    const bool covered = coverage == nullptr || coverage->values[x] > 0;
    stats.covered_points += covered;
    if (!covered && !c.all_points) continue;
    p.push_back(static_cast<std::uint16_t>(label.values[x]));
    g.push_back((*data.cloud.labels)[x]);
  }
  stats.evaluated_points = p.size();
  const auto report = miou(confusion_matrix(p, g, static_cast<int>(data.table.size())));
  const auto dir = output_dir(c);
  write_json((dir / "metrics.json").string(), metrics_report(report, data.table, stats));
  std::cout << "miou " << report.mean << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c) {
  require(c.gradcheck_problems >= 1, "gradcheck needs at least one problem");
  GradCheckResult worst;
  nlohmann::json runs = nlohmann::json::array();
  for (int k = 0; k < c.gradcheck_problems; ++k) {
    const auto prob = random_gradcheck_problem(derive_seed(c.seed, static_cast<std::uint64_t>(k)));
    const auto r = check_gradients(prob.params, prob.scene, prob.frames);
    runs.push_back({{"parameters", prob.params.num_parameters()},
                    {"max_relative_error", r.max_relative_error},
                    {"checked", r.checked},
                    {"skipped_at_kinks", r.skipped_at_kinks}});
    worst.max_relative_error = std::max(worst.max_relative_error, r.max_relative_error);
    worst.checked += r.checked;
    worst.skipped_at_kinks += r.skipped_at_kinks;
  }
  if (!c.out.empty()) {
    write_json((output_dir(c) / "gradcheck.json").string(),
               {{"max_relative_error", worst.max_relative_error}, {"problems", runs}});
  }
  std::cout << "max_relative_error " << worst.max_relative_error << " checked "
            << worst.checked << " skipped_at_kinks " << worst.skipped_at_kinks << '\n';
  if (worst.max_relative_error > kGradCheckTolerance) {
    std::cerr << "error: gradient check failed\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Open-vocabulary 3D segmentation by mask distillation"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--seed", f.seed, "Run seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--scene", f.scene, "Scene directory");
  app.add_option("--checkpoint", f.checkpoint, "Network checkpoint");
  app.add_option("--pred", f.pred, "Labeled PLY to evaluate");
  app.add_option("--query", f.query, "Category name to ground");
  app.add_option("--lambda", f.lambda, "Salient/geometric blend");
  app.add_option("--alpha", f.alpha, "Generative/discriminative exponent");
  app.add_option("--epochs", f.epochs);
  app.add_option("--lr", f.lr);
  app.add_option("--power", f.power, "Polynomial schedule power");
  app.add_option("--batch-frames", f.batch_frames, "Frames per optimization step");
  app.add_option("--hidden", f.hidden, "Hidden width of the 3D network");
  app.add_option("--blocks", f.blocks, "Number of network blocks");
  app.add_option("--voxel-size", f.voxel_size);
  app.add_option("--problems", f.problems, "Random problems for gradcheck");
  app.add_option("--baseline", f.baseline)
      ->check(CLI::IsMember({"mask", "point-tuned", "point-frozen"}));
  app.add_option("--ablate", f.ablate)
      ->check(CLI::IsMember({"full", "no-2d-mask", "no-3d-mask", "gen-only", "dis-only"}));
  app.add_flag("--all-points", f.all_points, "Evaluate never-visible points too");
  app.add_flag("-v,--verbose", f.verbosity);

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const std::vector<Command> commands = {
      {"gen-scene", "Synthesize a scene with oracle mask sets", cmd_gen_scene},
      {"train", "Train the 3D network", cmd_train},
      {"infer", "Label every point", cmd_infer},
      {"ground", "Score points against a category query", cmd_ground},
      {"eval", "Compute mIoU against the scene labels", cmd_eval},
      {"gradcheck", "Finite-difference check of the training gradient", cmd_gradcheck},
  };
  for (const auto& cmd : commands) app.add_subcommand(cmd.name, cmd.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    const auto config = resolve(f);
    for (const auto& cmd : commands) {
      if (app.got_subcommand(cmd.name)) return cmd.run(config);
    }
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kDiverged:
        return kExitDiverged;
      case ErrorKind::kIo:
        return kExitIo;
      case ErrorKind::kValidation:
        return kExitValidation;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return kExitValidation;
}
