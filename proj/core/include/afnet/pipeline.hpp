#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "afnet/hsio.hpp"
#include "afnet/metrics.hpp"
#include "afnet/net/config.hpp"
#include "afnet/prep.hpp"
#include "afnet/trainer.hpp"

// End-to-end experiment: load -> PCA -> patches -> split -> train -> evaluate
// -> render. Shared by the command-line tool and the sweep harness.
namespace afnet::pipeline {

namespace fs = std::filesystem;

/// $AFNET_DATA_DIR, or "data" when unset.
fs::path data_root();

/// A dataset directory holds cube.hsij/.hsib and gt.hsij/.hsib.
struct DatasetPaths {
  std::string name;
  fs::path directory;
  fs::path cube;
  fs::path ground_truth;
};

/// `dataset` is either a directory or a name under `root`. Throws
/// PreconditionError when the files are missing.
DatasetPaths resolve_dataset(const std::string& dataset, const fs::path& root = data_root());

/// All randomness of a run derives from the root seed.
struct Seeds {
  std::uint64_t root = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
};
Seeds derive_seeds(std::uint64_t root) noexcept;

struct ExperimentConfig {
  std::string dataset;
  net::ModelKind model = net::ModelKind::afnet;
  int patch_size = 9;
  int components = 15;
  prep::PcaMode pca_mode = prep::PcaMode::covariance;
  prep::BorderMode border_mode = prep::BorderMode::mirror;
  prep::SplitFractions fractions;
  /// When set, replaces the attention spec of every block.
  std::optional<net::AttentionSpec> attention;
  net::AfNetConfig network = net::AfNetConfig::paper_default();
  trainer::TrainConfig train;
  std::uint64_t seed = 0;
  bool render_maps = true;
  int map_scale = 1;

  /// The network config with patch size, components and classes filled in.
  net::AfNetConfig resolved_network(int class_count) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct Dataset {
  DatasetPaths paths;
  hsio::HyperspectralCube cube;
  hsio::GroundTruthMap gt;
  hsio::ClassLegend legend;
};

Dataset load_dataset(const DatasetPaths& paths);

struct Prepared {
  std::shared_ptr<const prep::ReducedCube> reduced;
  prep::PatchSet patches;
  prep::SplitAssignment split;
};

/// Deterministic in (dataset, config); the split uses `seeds.split`.
Prepared prepare(const Dataset& data, const ExperimentConfig& cfg, const Seeds& seeds);

struct RunOptions {
  /// Continue from `<out>/checkpoint` when it holds an unfinished run.
  bool resume = false;
  /// Write a resumable checkpoint after every epoch (otherwise only at the end).
  bool checkpoint_every_epoch = true;
  std::string command = "train";
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  metrics::EvaluationReport report;
  trainer::TrainingHistory history;
  nlohmann::json manifest;
  fs::path directory;
};

/// Trains and evaluates one configuration. `out` receives manifest.json,
/// split.json, checkpoint/, history.json, report.json, report.txt and, when
/// enabled, map.png, ground_truth.png and comparison.png.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out,
                                const RunOptions& options = {});

/// Re-evaluates a finished run directory on its recorded test split (or on
/// `split_override`) with the same code path as run_experiment.
metrics::EvaluationReport evaluate_run(const fs::path& run_dir,
                                       const std::optional<fs::path>& split_override = std::nullopt);

/// Predicts every patch of a finished run and writes the three map images
/// into `out`. Returns the prediction map image.
metrics::RgbImage render_run(const fs::path& run_dir, const fs::path& out, int scale = 1);

/// Manifest skeleton: command, tool version, timestamp, resolved config,
/// seeds, and SHA-256 of each input file.
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config,
                             const Seeds& seeds, const std::vector<fs::path>& inputs);

std::string utc_timestamp();

}  // namespace afnet::pipeline
