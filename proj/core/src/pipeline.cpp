#include "afnet/pipeline.hpp"

#include <chrono>
#include <cstdlib>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "afnet/common.hpp"
#include "afnet/json_io.hpp"
#include "afnet/net/graph.hpp"
#include "afnet/net/model.hpp"
#include "detail/binary_io.hpp"

namespace afnet::pipeline {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

fs::path data_root() {
  if (const char* env = std::getenv("AFNET_DATA_DIR"); env && *env) return env;
  return "data";
}

DatasetPaths resolve_dataset(const std::string& dataset, const fs::path& root) {
  if (dataset.empty()) throw PreconditionError("no dataset given (use --dataset)");
  DatasetPaths p;
  p.directory = fs::is_directory(dataset) ? fs::path(dataset) : root / dataset;
  p.name = p.directory.filename().string();
  if (p.name.empty()) p.name = p.directory.parent_path().filename().string();
  p.cube = p.directory / "cube.hsij";
  p.ground_truth = p.directory / "gt.hsij";
  for (const auto& f : {p.cube, p.ground_truth})
    if (!fs::exists(f))
      throw PreconditionError(fmt::format("dataset '{}': missing {} (data root '{}')", dataset,
                                          f.string(), root.string()));
  return p;
}

Seeds derive_seeds(std::uint64_t root) noexcept {
  return {root, derive_seed(root, 1), derive_seed(root, 2), derive_seed(root, 3)};
}

net::AfNetConfig ExperimentConfig::resolved_network(int class_count) const {
  net::AfNetConfig n = network;
  n.patch_size = patch_size;
  n.components = components;
  n.class_count = class_count;
  if (attention) n.set_attention(*attention);
  return n;
}

void ExperimentConfig::validate() const {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw PreconditionError(fmt::format("patch size must be odd and >= 1, got {}", patch_size));
  if (components < 1) throw PreconditionError("components must be >= 1");
  if (map_scale < 1) throw PreconditionError("map scale must be >= 1");
  fractions.validate();
  train.validate();
  resolved_network(std::max(network.class_count, 1)).validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"dataset", c.dataset},
           {"model", net::to_string(c.model)},
           {"patch_size", c.patch_size},
           {"components", c.components},
           {"pca_mode", prep::to_string(c.pca_mode)},
           {"border_mode", prep::to_string(c.border_mode)},
           {"fractions",
            {{"train", c.fractions.train},
             {"validation", c.fractions.validation},
             {"test", c.fractions.test}}},
           {"network", c.network},
           {"train", c.train},
           {"seed", c.seed},
           {"maps", {{"render", c.render_maps}, {"scale", c.map_scale}}}};
  if (c.attention) j["attention"] = *c.attention;
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  c.dataset = j.value("dataset", c.dataset);
  if (j.contains("model")) c.model = net::model_kind_from_string(j["model"].get<std::string>());
  c.patch_size = j.value("patch_size", c.patch_size);
  c.components = j.value("components", c.components);
  if (j.contains("pca_mode")) c.pca_mode = prep::pca_mode_from_string(j["pca_mode"].get<std::string>());
  if (j.contains("border_mode"))
    c.border_mode = prep::border_mode_from_string(j["border_mode"].get<std::string>());
  if (j.contains("fractions")) {
    const json& f = j["fractions"];
    if (f.is_string()) {
      c.fractions = prep::parse_fractions(f.get<std::string>());
    } else {
      c.fractions = {f.at("train").get<double>(), f.at("validation").get<double>(),
                     f.at("test").get<double>()};
    }
  }
  if (j.contains("attention")) c.attention = j["attention"].get<net::AttentionSpec>();
  if (j.contains("network")) c.network = j["network"].get<net::AfNetConfig>();
  if (j.contains("train")) c.train = j["train"].get<trainer::TrainConfig>();
  c.seed = j.value("seed", c.seed);
  if (j.contains("maps")) {
    c.render_maps = j["maps"].value("render", c.render_maps);
    c.map_scale = j["maps"].value("scale", c.map_scale);
  }
}

Dataset load_dataset(const DatasetPaths& paths) {
  Dataset d;
  d.paths = paths;
  d.cube = hsio::load_cube(paths.cube);
  d.gt = hsio::load_ground_truth(paths.ground_truth);
  hsio::validate_pair(d.cube, d.gt, paths.name);
  if (auto legend = hsio::load_legend(paths.ground_truth)) d.legend = *legend;
  else if (auto legend = hsio::load_legend(paths.cube)) d.legend = *legend;
  else d.legend = hsio::default_legend(d.gt.class_count);
  if (const auto ref = hsio::find_reference(paths.name)) {
    if (ref->height != d.cube.height || ref->width != d.cube.width)
      spdlog::warn("dataset '{}' is {}x{}, the reference scene is {}x{}", paths.name,
                   d.cube.height, d.cube.width, ref->height, ref->width);
  }
  return d;
}

Prepared prepare(const Dataset& data, const ExperimentConfig& cfg, const Seeds& seeds) {
  Prepared p;
  p.reduced = std::make_shared<const prep::ReducedCube>(
      prep::pca_reduce(data.cube, cfg.components, cfg.pca_mode));
  p.patches = prep::extract_patches(p.reduced, data.gt, cfg.patch_size, cfg.border_mode);
  p.split = prep::stratified_split(p.patches, cfg.fractions, seeds.split);
  return p;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

json make_manifest(const std::string& command, const json& config, const Seeds& seeds,
                   const std::vector<fs::path>& inputs) {
  json in = json::array();
  for (const auto& path : inputs) {
    json entry{{"path", fs::absolute(path).lexically_normal().string()}};
    if (fs::is_regular_file(path)) {
      entry["sha256"] = hsio::file_sha256(path);
      entry["bytes"] = fs::file_size(path);
    }
    in.push_back(std::move(entry));
  }
  return json{{"command", command},
              {"tool", "afnet"},
              {"version", kVersion},
              {"started", utc_timestamp()},
              {"config", config},
              {"seeds",
               {{"root", seeds.root}, {"split", seeds.split}, {"init", seeds.init},
                {"shuffle", seeds.shuffle}}},
              {"thread_policy", "single-threaded evaluation, fixed reduction order"},
              {"inputs", in}};
}

namespace {

std::vector<fs::path> input_files(const DatasetPaths& paths) {
  return {hsio::header_path(paths.cube), hsio::payload_path(paths.cube),
          hsio::header_path(paths.ground_truth), hsio::payload_path(paths.ground_truth)};
}

void log_line(const RunOptions& options, const std::string& text) {
  if (options.log) options.log(text);
  else spdlog::info("{}", text);
}

json checkpoint_manifest(const ExperimentConfig& cfg, const Seeds& seeds,
                         const trainer::TrainingHistory& history, bool complete) {
  json metrics = json::object();
  if (history.epochs() > 0) {
    metrics["train_loss"] = history.train_loss.back();
    metrics["train_accuracy"] = history.train_accuracy.back();
    if (!history.val_accuracy.empty()) {
      metrics["val_loss"] = history.val_loss.back();
      metrics["val_accuracy"] = history.val_accuracy.back();
    }
  }
  return json{{"config", cfg},
              {"model", net::to_string(cfg.model)},
              {"seed", seeds.root},
              {"init_seed", seeds.init},
              {"epoch", history.epochs()},
              {"complete", complete},
              {"selected", cfg.train.keep_best ? "best" : "last"},
              {"metrics", metrics},
              {"history", history}};
}

std::vector<int> true_labels(const prep::PatchSet& patches, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(patches.labels()[i]);
  return y;
}

metrics::EvaluationReport test_report(const net::Model<float>& model, const prep::PatchSet& patches,
                                      const prep::SplitAssignment& split, double train_seconds,
                                      std::vector<int>* predictions) {
  const auto t0 = Clock::now();
  auto pred = trainer::predict(model, patches, split.test_idx);
  const double te = std::chrono::duration<double>(Clock::now() - t0).count();
  const auto truth = true_labels(patches, split.test_idx);
  if (predictions) *predictions = pred.labels;
  return metrics::evaluate(pred.labels, truth, patches.class_count(), {train_seconds, te});
}

// Predicts every patch; reuses test predictions already computed.
std::vector<int> predict_all(const net::Model<float>& model, const prep::PatchSet& patches,
                             const prep::SplitAssignment& split, const std::vector<int>& test_pred) {
  std::vector<int> all(patches.size(), 0);
  for (std::size_t k = 0; k < split.test_idx.size(); ++k) all[split.test_idx[k]] = test_pred[k];
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < patches.size(); ++i)
    if (all[i] == 0) rest.push_back(i);
  const auto pred = trainer::predict(model, patches, rest);
  for (std::size_t k = 0; k < rest.size(); ++k) all[rest[k]] = pred.labels[k];
  return all;
}

metrics::RgbImage write_maps(const Dataset& data, const prep::PatchSet& patches,
                             const std::vector<int>& labels, const fs::path& out, int scale) {
  const auto map = metrics::render_map(labels, patches.coords(), data.legend, data.gt);
  const auto truth = metrics::render_ground_truth(data.gt, data.legend);
  metrics::write_png(out / "map.png", metrics::scale_nearest(map, scale));
  metrics::write_png(out / "ground_truth.png", metrics::scale_nearest(truth, scale));
  metrics::write_png(out / "comparison.png",
                     metrics::scale_nearest(metrics::side_by_side(truth, map), scale));
  return map;
}

std::string report_text(const metrics::EvaluationReport& report, const ExperimentConfig& cfg,
                        const Dataset& data) {
  std::string text = fmt::format(
      "dataset {} | model {} | patch {}x{}x{} | split {}/{}/{}\n"
      "OA = correct test samples / test samples; AA = mean recall over classes present in the "
      "test set; kappa from the test confusion matrix\n\n",
      data.paths.name, net::to_string(cfg.model), cfg.patch_size, cfg.patch_size, cfg.components,
      cfg.fractions.train, cfg.fractions.validation, cfg.fractions.test);
  return text + metrics::format_report(report, &data.legend);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const fs::path& out,
                                const RunOptions& options) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  const Seeds seeds = derive_seeds(cfg.seed);
  cfg.train.seed = seeds.shuffle;
  const DatasetPaths paths = resolve_dataset(cfg.dataset);
  const Dataset data = load_dataset(paths);
  cfg.network = cfg.resolved_network(data.gt.class_count);

  fs::create_directories(out);
  json manifest = make_manifest(options.command, cfg, seeds, input_files(paths));
  manifest["dataset"] = {{"name", paths.name}, {"directory", fs::absolute(paths.directory).string()}};

  const Prepared prepared = prepare(data, cfg, seeds);
  write_json(out / "split.json", prepared.split);
  log_line(options, fmt::format("{}: {} patches ({} train / {} validation / {} test)", paths.name,
                                prepared.patches.size(), prepared.split.train_idx.size(),
                                prepared.split.val_idx.size(), prepared.split.test_idx.size()));

  net::Model<float> model(net::build_model(cfg.model, cfg.network));
  model.initialize(seeds.init);
  log_line(options, fmt::format("model {}: {} conv layers, {} parameters", net::to_string(cfg.model),
                                model.graph().conv_layer_count(), model.parameters().size()));

  const fs::path ckpt_dir = out / "checkpoint";
  std::optional<trainer::ResumeState> resume;
  bool finished = false;
  if (options.resume && fs::exists(ckpt_dir / "model.json")) {
    const auto cp = trainer::load_checkpoint(ckpt_dir);
    if (cp.manifest.at("config") != json(cfg))
      throw PreconditionError("cannot resume: the checkpoint was written with a different config");
    trainer::apply_checkpoint(cp, model);
    finished = cp.manifest.value("complete", false);
    if (!finished) {
      if (!cp.optimizer) throw DataError("cannot resume: checkpoint has no optimizer state");
      resume.emplace();
      resume->history = cp.manifest.at("history").get<trainer::TrainingHistory>();
      resume->optimizer = *cp.optimizer;
      if (cfg.train.keep_best && fs::exists(ckpt_dir / "best.bin"))
        resume->best_parameters = detail::read_le<float>(ckpt_dir / "best.bin");
      log_line(options, fmt::format("resuming after epoch {}", resume->history.epochs()));
    }
  }

  trainer::TrainingHistory history;
  if (finished) {
    history = read_json(out / "history.json").get<trainer::TrainingHistory>();
    log_line(options, "checkpoint is complete; evaluating only");
  } else {
    trainer::TrainOptions topt;
    if (resume) topt.resume = &*resume;
    trainer::AdamOptimizer last_optimizer;
    topt.on_epoch = [&](const trainer::EpochReport& r) {
      last_optimizer = r.optimizer;
      const auto& h = r.history;
      std::string line = fmt::format("epoch {}/{} loss {:.4f} acc {:.4f}", r.epoch + 1,
                                     cfg.train.epochs, h.train_loss.back(), h.train_accuracy.back());
      if (!h.val_accuracy.empty())
        line += fmt::format(" val_loss {:.4f} val_acc {:.4f}", h.val_loss.back(), h.val_accuracy.back());
      log_line(options, line);
      if (cfg.train.keep_best && h.best_epoch == r.epoch) {
        const auto p = r.model.parameters();
        detail::write_le(ckpt_dir / "best.bin", std::vector<float>(p.begin(), p.end()));
      }
      if (options.checkpoint_every_epoch && r.epoch + 1 < cfg.train.epochs)
        trainer::save_checkpoint(ckpt_dir, r.model, checkpoint_manifest(cfg, seeds, h, false),
                                 &r.optimizer);
    };
    history = trainer::train(model, prepared.patches, prepared.split, cfg.train, topt);
    trainer::save_checkpoint(ckpt_dir, model, checkpoint_manifest(cfg, seeds, history, true),
                             &last_optimizer);
  }

  std::vector<int> test_pred;
  ExperimentResult result;
  result.report = test_report(model, prepared.patches, prepared.split, history.train_seconds, &test_pred);
  history.test_seconds = result.report.te_seconds;
  result.history = history;
  write_json(out / "history.json", history);
  write_json(out / "report.json", result.report);
  {
    const std::string text = report_text(result.report, cfg, data);
    detail::write_all(out / "report.txt", text.data(), text.size());
  }
  if (cfg.render_maps)
    write_maps(data, prepared.patches, predict_all(model, prepared.patches, prepared.split, test_pred),
               out, cfg.map_scale);
  log_line(options, fmt::format("OA {}  AA {}  kappa {}  (train {:.2f} s, test {:.2f} s)",
                                metrics::format_percent(result.report.oa),
                                metrics::format_percent(result.report.aa),
                                metrics::format_percent(result.report.kappa), history.train_seconds,
                                result.report.te_seconds));

  manifest["finished"] = utc_timestamp();
  manifest["outputs"] = {"split.json", "checkpoint/", "history.json", "report.json", "report.txt"};
  if (cfg.render_maps)
    for (const char* f : {"map.png", "ground_truth.png", "comparison.png"}) manifest["outputs"].push_back(f);
  write_json(out / "manifest.json", manifest);
  result.manifest = std::move(manifest);
  result.directory = out;
  return result;
}

namespace {

struct LoadedRun {
  ExperimentConfig cfg;
  Seeds seeds;
  Dataset data;
  Prepared prepared;
  std::unique_ptr<net::Model<float>> model;
  double train_seconds = 0;
};

LoadedRun load_run(const fs::path& run_dir, const std::optional<fs::path>& split_override) {
  if (!fs::exists(run_dir / "manifest.json"))
    throw PreconditionError(fmt::format("'{}' is not a run directory (no manifest.json)", run_dir.string()));
  const json manifest = read_json(run_dir / "manifest.json");
  LoadedRun run;
  run.cfg = manifest.at("config").get<ExperimentConfig>();
  run.seeds = derive_seeds(run.cfg.seed);
  std::string dataset = run.cfg.dataset;
  if (manifest.contains("dataset")) dataset = manifest["dataset"].at("directory").get<std::string>();
  run.data = load_dataset(resolve_dataset(dataset));
  run.prepared = prepare(run.data, run.cfg, run.seeds);
  run.prepared.split = read_json(split_override.value_or(run_dir / "split.json"))
                           .get<prep::SplitAssignment>();
  const auto cp = trainer::load_checkpoint(run_dir / "checkpoint");
  run.model = std::make_unique<net::Model<float>>(net::build_model(run.cfg.model, run.cfg.network));
  trainer::apply_checkpoint(cp, *run.model);
  if (fs::exists(run_dir / "history.json"))
    run.train_seconds = read_json(run_dir / "history.json").value("train_seconds", 0.0);
  return run;
}

}  // namespace

metrics::EvaluationReport evaluate_run(const fs::path& run_dir,
                                       const std::optional<fs::path>& split_override) {
  const LoadedRun run = load_run(run_dir, split_override);
  return test_report(*run.model, run.prepared.patches, run.prepared.split, run.train_seconds, nullptr);
}

metrics::RgbImage render_run(const fs::path& run_dir, const fs::path& out, int scale) {
  const LoadedRun run = load_run(run_dir, std::nullopt);
  const auto pred = trainer::predict(*run.model, run.prepared.patches, [&] {
    std::vector<std::size_t> all(run.prepared.patches.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }());
  return write_maps(run.data, run.prepared.patches, pred.labels, out, scale);
}

}  // namespace afnet::pipeline
