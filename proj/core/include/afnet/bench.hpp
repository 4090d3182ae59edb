#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "afnet/metrics.hpp"
#include "afnet/net/config.hpp"
#include "afnet/pipeline.hpp"

// Ablation sweeps over patch size and training fraction.
namespace afnet::bench {

namespace fs = std::filesystem;

enum class SweepAxis { spatial, fraction };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& text);

struct SweepPlan {
  std::vector<std::string> datasets;
  net::ModelKind model = net::ModelKind::afnet;
  std::vector<int> spatial_sizes{9, 11, 13, 15};
  /// Training fractions in percent; validation uses the same share.
  std::vector<double> fractions{5, 7, 10, 12, 15};
  int repeats = 3;
  std::uint64_t base_seed = 0;
  /// Everything else (components, network, training) comes from here.
  pipeline::ExperimentConfig base;

  void validate(SweepAxis axis) const;
};

void to_json(nlohmann::json& j, const SweepPlan& p);
void from_json(const nlohmann::json& j, SweepPlan& p);

/// One train+evaluate run of the sweep.
struct Cell {
  std::string dataset;
  double value = 0;   // patch size or training percentage
  int repeat = 0;
  std::size_t index = 0;  // position of (dataset, value) in the plan
  std::uint64_t seed = 0;
  fs::path directory;
};

struct CellResult {
  Cell cell;
  std::optional<metrics::EvaluationReport> report;
  std::string error;
};

struct Stats {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single value
};
Stats summarize(const std::vector<double>& values);

struct CellSummary {
  std::string dataset;
  double value = 0;
  std::vector<metrics::EvaluationReport> runs;
  std::vector<std::uint64_t> seeds;
  int failures = 0;
  Stats kappa, oa, aa, tr_seconds, te_seconds;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::spatial;
  net::ModelKind model = net::ModelKind::afnet;
  std::vector<CellResult> cells;

  int failures() const noexcept;
  /// Grouped by (dataset, value) in plan order.
  std::vector<CellSummary> summary() const;
};

/// Runs one cell and returns its report; replaced in tests.
using CellRunner =
    std::function<metrics::EvaluationReport(const pipeline::ExperimentConfig&, const fs::path&)>;

struct SweepOptions {
  /// Cells evaluated concurrently (each cell stays single-threaded, so
  /// results do not depend on this).
  int jobs = 1;
  CellRunner runner;  // defaults to pipeline::run_experiment
  std::function<void(const std::string&)> log;
};

/// Directory of one run: <root>/<dataset>/<model>/<axis>=<value>/run<k>.
fs::path cell_directory(const fs::path& root, const std::string& dataset, net::ModelKind model,
                        SweepAxis axis, double value, int repeat);

/// Expands the plan into cells with seeds derived from (base seed, cell
/// index, repeat).
std::vector<Cell> plan_cells(const SweepPlan& plan, SweepAxis axis, const fs::path& root);

/// Experiment config of one cell.
pipeline::ExperimentConfig cell_config(const SweepPlan& plan, SweepAxis axis, const Cell& cell);

/// Fixed 15/15/70 split; one run per (dataset, size, repeat).
SweepResult sweep_spatial(const SweepPlan& plan, const fs::path& root, const SweepOptions& options = {});
/// Fixed 9x9 patches; one run per (dataset, fraction, repeat).
SweepResult sweep_fraction(const SweepPlan& plan, const fs::path& root, const SweepOptions& options = {});
SweepResult run_sweep(const SweepPlan& plan, SweepAxis axis, const fs::path& root,
                      const SweepOptions& options = {});

struct Report {
  std::string text;
  nlohmann::json json;
};

/// Rows kappa/OA/AA/Tr/Te per dataset, one column per axis value; 2-decimal
/// percentages, "mean ± std" when a cell has several runs.
Report report(const SweepResult& result);

/// Collects every run<k>/report.json below `root` into sweep results, one
/// per (model, axis). Throws DataError when none are found.
std::vector<SweepResult> load_results(const fs::path& root);

}  // namespace afnet::bench
