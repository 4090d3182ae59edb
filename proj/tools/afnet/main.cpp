#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "afnet/bench.hpp"
#include "afnet/common.hpp"
#include "afnet/json_io.hpp"
#include "afnet/pipeline.hpp"
#include "afnet/prep.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace afnet;

namespace {

// Flags that override a config file. Unset flags leave the file (or the
// built-in default) in place.
struct Overrides {
  std::optional<std::string> dataset;
  std::optional<std::string> model;
  std::optional<int> patch_size;
  std::optional<int> components;
  std::optional<std::string> fractions;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> border_mode;
  std::optional<std::string> pca_mode;
  std::optional<std::string> attention;

  void add_to(CLI::App* app, bool with_dataset = true) {
    if (with_dataset) app->add_option("--dataset", dataset, "Dataset directory or name under $AFNET_DATA_DIR");
    app->add_option("--model", model, "afnet | inception2d | inception3d");
    app->add_option("--patch-size", patch_size, "Odd spatial window S");
    app->add_option("--components", components, "PCA components B");
    app->add_option("--fractions", fractions, "train/validation/test, e.g. 0.15/0.15/0.7");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--seed", seed, "Root seed");
    app->add_option("--border-mode", border_mode, "interior | mirror");
    app->add_option("--pca-mode", pca_mode, "covariance | correlation");
    app->add_option("--attention", attention, "channel | spatial | both | none");
  }

  void apply(pipeline::ExperimentConfig& c) const {
    if (dataset) c.dataset = *dataset;
    if (model) c.model = net::model_kind_from_string(*model);
    if (patch_size) c.patch_size = *patch_size;
    if (components) c.components = *components;
    if (fractions) c.fractions = prep::parse_fractions(*fractions);
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.learning_rate = *lr;
    if (seed) c.seed = *seed;
    if (border_mode) c.border_mode = prep::border_mode_from_string(*border_mode);
    if (pca_mode) c.pca_mode = prep::pca_mode_from_string(*pca_mode);
    if (attention) {
      net::AttentionSpec spec = c.attention.value_or(net::AttentionSpec{});
      spec.kind = net::attention_kind_from_string(*attention);
      c.attention = spec;
    }
  }
};

// A run manifest is accepted in place of a config file.
pipeline::ExperimentConfig load_config(const std::string& path) {
  pipeline::ExperimentConfig cfg;
  if (path.empty()) return cfg;
  if (!fs::exists(path)) throw PreconditionError(fmt::format("config file '{}' not found", path));
  const json j = read_json(path);
  try {
    if (j.contains("command") && j.contains("config")) return j["config"].get<pipeline::ExperimentConfig>();
    return j.get<pipeline::ExperimentConfig>();
  } catch (const json::exception& e) {
    throw PreconditionError(fmt::format("invalid config '{}': {}", path, e.what()));
  }
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

int cmd_convert(const std::string& cube_in, const std::string& gt_in, const std::string& cube_var,
                const std::string& gt_var, const std::vector<int>& removed, const std::string& name,
                const fs::path& out, const std::string& cmdline) {
  std::optional<hsio::ClassLegend> legend;
  std::vector<fs::path> inputs;
  fs::create_directories(out);
  hsio::SaveOptions options;
  options.name = name.empty() ? out.filename().string() : name;
  options.removed_bands = removed;

  std::optional<hsio::HyperspectralCube> cube;
  if (!cube_in.empty()) {
    hsio::detect_format(cube_in);
    cube = hsio::cube_from_array(hsio::read_source_array(cube_in, cube_var), removed);
    inputs.push_back(cube_in);
  }
  std::optional<hsio::GroundTruthMap> gt;
  if (!gt_in.empty()) {
    hsio::detect_format(gt_in);
    gt = hsio::ground_truth_from_array(hsio::read_source_array(gt_in, gt_var));
    inputs.push_back(gt_in);
    legend = hsio::default_legend(gt->class_count);
    if (auto ref = hsio::find_reference(options.name); ref && ref->class_count == gt->class_count)
      spdlog::info("{}: {} classes, matching the reference scene", options.name, gt->class_count);
  }
  json summary = json::object();
  if (cube && gt) {
    const auto d = hsio::validate_pair(*cube, *gt, options.name);
    summary = d;
  }
  if (cube) {
    hsio::save_cube(*cube, out / "cube", options);
    spdlog::info("cube {}x{}x{} -> {}", cube->height, cube->width, cube->bands, (out / "cube.hsij").string());
  }
  if (gt) {
    hsio::SaveOptions gopt = options;
    gopt.legend = legend;
    hsio::save_ground_truth(*gt, out / "gt", gopt);
    spdlog::info("ground truth {}x{}, {} classes, {} labeled -> {}", gt->height, gt->width,
                 gt->class_count, gt->labeled_count(), (out / "gt.hsij").string());
  }
  json cfg{{"cube", cube_in},         {"ground_truth", gt_in}, {"cube_variable", cube_var},
           {"gt_variable", gt_var},   {"removed_bands", removed}, {"name", options.name}};
  json manifest = pipeline::make_manifest("convert", cfg, pipeline::derive_seeds(0), inputs);
  manifest["command_line"] = cmdline;
  manifest["dataset"] = summary;
  write_json(out / "manifest.json", manifest);
  return 0;
}

int cmd_preprocess(pipeline::ExperimentConfig cfg, const fs::path& out, const std::string& cmdline) {
  cfg.validate();
  const auto seeds = pipeline::derive_seeds(cfg.seed);
  const auto paths = pipeline::resolve_dataset(cfg.dataset);
  const auto data = pipeline::load_dataset(paths);
  const auto prepared = pipeline::prepare(data, cfg, seeds);
  fs::create_directories(out);

  const auto& r = *prepared.reduced;
  json pca{{"mode", prep::to_string(r.mode)},
           {"components", r.components},
           {"explained_variance", r.explained_variance},
           {"total_variance", r.total_variance}};
  double kept = 0;
  for (double v : r.explained_variance) kept += v;
  pca["explained_ratio"] = r.total_variance > 0 ? kept / r.total_variance : 0.0;
  write_json(out / "pca.json", pca);
  write_json(out / "split.json", prepared.split);
  json summary{{"patches", prepared.patches.size()},
               {"patch_size", cfg.patch_size},
               {"border_mode", prep::to_string(cfg.border_mode)},
               {"train", prepared.split.train_idx.size()},
               {"validation", prepared.split.val_idx.size()},
               {"test", prepared.split.test_idx.size()}};
  write_json(out / "summary.json", summary);
  fmt::print("{} patches ({}x{}x{}), split {}/{}/{}, {:.2f}% variance kept\n", prepared.patches.size(),
             cfg.patch_size, cfg.patch_size, cfg.components, prepared.split.train_idx.size(),
             prepared.split.val_idx.size(), prepared.split.test_idx.size(),
             100.0 * pca["explained_ratio"].get<double>());

  json manifest = pipeline::make_manifest("preprocess", cfg, seeds,
                                          {hsio::header_path(paths.cube), hsio::payload_path(paths.cube),
                                           hsio::header_path(paths.ground_truth),
                                           hsio::payload_path(paths.ground_truth)});
  manifest["command_line"] = cmdline;
  write_json(out / "manifest.json", manifest);
  return 0;
}

int cmd_train(const pipeline::ExperimentConfig& cfg, fs::path out, bool resume, const std::string& cmdline) {
  cfg.validate();
  if (out.empty())
    out = fs::path("results") / fs::path(cfg.dataset).filename() / net::to_string(cfg.model) /
          fmt::format("seed{}", cfg.seed);
  pipeline::RunOptions options;
  options.resume = resume;
  options.command = cmdline;
  const auto result = pipeline::run_experiment(cfg, out, options);
  fmt::print("{}\n", metrics::format_report(result.report));
  fmt::print("results in {}\n", out.string());
  return 0;
}

int cmd_evaluate(const fs::path& run_dir, const std::string& split, fs::path out, int scale,
                 const std::string& cmdline) {
  if (out.empty()) out = run_dir / "evaluation";
  std::optional<fs::path> split_path;
  if (!split.empty()) split_path = split;
  const auto report = pipeline::evaluate_run(run_dir, split_path);
  fs::create_directories(out);
  write_json(out / "report.json", report);
  const std::string text = metrics::format_report(report);
  {
    std::FILE* f = std::fopen((out / "report.txt").string().c_str(), "w");
    if (!f) throw Error(fmt::format("cannot write {}", (out / "report.txt").string()));
    fmt::print(f, "{}", text);
    std::fclose(f);
  }
  pipeline::render_run(run_dir, out, scale);
  const json run = read_json(run_dir / "manifest.json");
  json cfg{{"run", fs::absolute(run_dir).string()}, {"split", split}, {"scale", scale}};
  std::vector<fs::path> inputs{run_dir / "checkpoint" / "parameters.bin", split_path.value_or(run_dir / "split.json")};
  json manifest = pipeline::make_manifest(
      "evaluate", cfg, pipeline::derive_seeds(run.at("config").value("seed", std::uint64_t{0})), inputs);
  manifest["command_line"] = cmdline;
  write_json(out / "manifest.json", manifest);
  fmt::print("{}", text);
  return 0;
}

int cmd_map(const fs::path& run_dir, fs::path out, int scale, const std::string& cmdline) {
  if (out.empty()) out = run_dir / "maps";
  fs::create_directories(out);
  const auto image = pipeline::render_run(run_dir, out, scale);
  const json run = read_json(run_dir / "manifest.json");
  json cfg{{"run", fs::absolute(run_dir).string()}, {"scale", scale}};
  json manifest = pipeline::make_manifest(
      "map", cfg, pipeline::derive_seeds(run.at("config").value("seed", std::uint64_t{0})),
      {run_dir / "checkpoint" / "parameters.bin"});
  manifest["command_line"] = cmdline;
  write_json(out / "manifest.json", manifest);
  fmt::print("map {}x{} written to {}\n", image.width, image.height, out.string());
  return 0;
}

void print_report(const bench::Report& rep, const std::string& format) {
  if (format == "json") fmt::print("{}\n", rep.json.dump(2));
  else fmt::print("{}", rep.text);
}

int cmd_sweep(const std::string& plan_path, const std::string& axis_name, int jobs, const fs::path& out,
              const Overrides& ov, const std::vector<std::string>& datasets,
              const std::optional<int>& repeats, const std::string& cmdline) {
  bench::SweepPlan plan;
  if (!plan_path.empty()) {
    if (!fs::exists(plan_path)) throw PreconditionError(fmt::format("plan file '{}' not found", plan_path));
    try {
      plan = read_json(plan_path).get<bench::SweepPlan>();
    } catch (const json::exception& e) {
      throw PreconditionError(fmt::format("invalid plan '{}': {}", plan_path, e.what()));
    }
  }
  if (!datasets.empty()) plan.datasets = datasets;
  if (ov.model) plan.model = net::model_kind_from_string(*ov.model);
  if (ov.seed) plan.base_seed = *ov.seed;
  if (repeats) plan.repeats = *repeats;
  Overrides base = ov;
  base.model.reset();
  base.seed.reset();
  base.apply(plan.base);
  const auto axis = bench::sweep_axis_from_string(axis_name);
  plan.validate(axis);
  if (jobs < 1) throw PreconditionError("--jobs must be >= 1");

  fs::create_directories(out);
  json manifest = pipeline::make_manifest("sweep", plan, pipeline::derive_seeds(plan.base_seed), {});
  manifest["axis"] = bench::to_string(axis);
  manifest["jobs"] = jobs;
  manifest["command_line"] = cmdline;
  write_json(out / "manifest.json", manifest);

  bench::SweepOptions options;
  options.jobs = jobs;
  const auto result = bench::run_sweep(plan, axis, out, options);
  const auto rep = bench::report(result);
  const std::string stem = fmt::format("{}_{}", bench::to_string(axis), net::to_string(plan.model));
  write_json(out / (stem + ".json"), rep.json);
  {
    std::FILE* f = std::fopen((out / (stem + ".txt")).string().c_str(), "w");
    if (f) {
      fmt::print(f, "{}", rep.text);
      std::fclose(f);
    }
  }
  manifest["finished"] = pipeline::utc_timestamp();
  manifest["failures"] = result.failures();
  write_json(out / "manifest.json", manifest);
  fmt::print("{}", rep.text);
  return result.failures() == 0 ? 0 : 1;
}

// Read-only: prints tables for every sweep found under `root`.
int cmd_report(const fs::path& root, const std::string& format) {
  const auto results = bench::load_results(root);
  if (format == "json") {
    json all = json::array();
    for (const auto& r : results) all.push_back(bench::report(r).json);
    fmt::print("{}\n", all.dump(2));
    return 0;
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (i) fmt::print("\n");
    print_report(bench::report(results[i]), format);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AfNet hyperspectral classification toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  const std::string cmdline = command_line(argc, argv);

  auto* convert = app.add_subcommand("convert", "Convert .mat/.npy arrays to the native container");
  std::string cube_in, gt_in, cube_var, gt_var, name;
  std::vector<int> removed;
  fs::path convert_out;
  convert->add_option("--cube", cube_in, "Cube array file (.mat v5 or .npy)");
  convert->add_option("--gt", gt_in, "Ground-truth array file");
  convert->add_option("--cube-var", cube_var, "Variable name inside a .mat cube");
  convert->add_option("--gt-var", gt_var, "Variable name inside a .mat ground truth");
  convert->add_option("--remove-bands", removed, "1-based band indices to drop")->delimiter(',');
  convert->add_option("--name", name, "Dataset name recorded in headers");
  convert->add_option("--out", convert_out, "Output dataset directory")->required();

  Overrides ov;
  std::string config_path;
  fs::path out;

  auto* preprocess = app.add_subcommand("preprocess", "PCA, patch extraction and split summary");
  preprocess->add_option("--config", config_path);
  ov.add_to(preprocess);
  preprocess->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train", "Train and evaluate one configuration");
  bool resume = false;
  train->add_option("--config", config_path, "Experiment config or run manifest (JSON)");
  ov.add_to(train);
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint");
  train->add_option("--out", out, "Run directory");

  auto* evaluate = app.add_subcommand("evaluate", "Re-evaluate a run and render its maps");
  fs::path run_dir;
  std::string split;
  int scale = 1;
  evaluate->add_option("run", run_dir, "Run directory")->required();
  evaluate->add_option("--split", split, "Alternative split.json");
  evaluate->add_option("--scale", scale, "Map upscaling factor")->check(CLI::Range(1, 64));
  evaluate->add_option("--out", out);

  auto* map = app.add_subcommand("map", "Render classification maps of a run");
  map->add_option("run", run_dir, "Run directory")->required();
  map->add_option("--scale", scale, "Map upscaling factor")->check(CLI::Range(1, 64));
  map->add_option("--out", out);

  auto* sweep = app.add_subcommand("sweep", "Spatial-size or training-fraction sweep");
  std::string plan_path, axis = "spatial";
  int jobs = 1;
  std::vector<std::string> datasets;
  std::optional<int> repeats;
  Overrides sweep_ov;
  sweep->add_option("--plan", plan_path, "Sweep plan (JSON)");
  sweep->add_option("--axis", axis, "spatial | fraction");
  sweep->add_option("--jobs", jobs, "Cells run concurrently");
  sweep->add_option("--dataset", datasets, "Datasets (repeatable)");
  sweep->add_option("--repeats", repeats, "Seeds per cell");
  sweep_ov.add_to(sweep, false);
  sweep->add_option("--out", out, "Results root")->required();

  auto* report = app.add_subcommand("report", "Tabulate sweep results");
  fs::path results;
  std::string format = "text";
  report->add_option("results", results, "Results root")->required();
  report->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*convert) {
      if (cube_in.empty() && gt_in.empty()) throw PreconditionError("convert needs --cube and/or --gt");
      return cmd_convert(cube_in, gt_in, cube_var, gt_var, removed, name, convert_out, cmdline);
    }
    if (*preprocess || *train) {
      pipeline::ExperimentConfig cfg = load_config(config_path);
      ov.apply(cfg);
      if (cfg.dataset.empty()) throw PreconditionError("no dataset given (--dataset or config)");
      if (*preprocess) return cmd_preprocess(cfg, out, cmdline);
      return cmd_train(cfg, out, resume, cmdline);
    }
    if (*evaluate) return cmd_evaluate(run_dir, split, out, scale, cmdline);
    if (*map) return cmd_map(run_dir, out, scale, cmdline);
    if (*sweep) return cmd_sweep(plan_path, axis, jobs, out, sweep_ov, datasets, repeats, cmdline);
    if (*report) return cmd_report(results, format);
  } catch (const PreconditionError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
