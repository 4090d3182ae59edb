#include "afnet/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "afnet/common.hpp"
#include "afnet/json_io.hpp"
#include "detail/binary_io.hpp"

namespace afnet::bench {

using json = nlohmann::json;

std::string to_string(SweepAxis axis) { return axis == SweepAxis::spatial ? "spatial" : "fraction"; }

SweepAxis sweep_axis_from_string(const std::string& text) {
  if (text == "spatial") return SweepAxis::spatial;
  if (text == "fraction") return SweepAxis::fraction;
  throw PreconditionError(fmt::format("unknown sweep axis '{}' (spatial|fraction)", text));
}

void SweepPlan::validate(SweepAxis axis) const {
  if (datasets.empty()) throw PreconditionError("sweep plan has no datasets");
  if (repeats < 1) throw PreconditionError("repeats must be >= 1");
  if (axis == SweepAxis::spatial) {
    if (spatial_sizes.empty()) throw PreconditionError("sweep plan has no spatial sizes");
    for (int s : spatial_sizes)
      if (s < 1 || s % 2 == 0)
        throw PreconditionError(fmt::format("spatial size must be odd and >= 1, got {}", s));
  } else {
    if (fractions.empty()) throw PreconditionError("sweep plan has no training fractions");
    for (double f : fractions)
      if (!(f > 0 && f < 34))
        throw PreconditionError(fmt::format(
            "training fraction {}% out of range; train and validation each take it, so it must be "
            "in (0, 34)", f));
  }
}

void to_json(json& j, const SweepPlan& p) {
  j = json{{"datasets", p.datasets},         {"model", net::to_string(p.model)},
           {"spatial_sizes", p.spatial_sizes}, {"fractions", p.fractions},
           {"repeats", p.repeats},           {"base_seed", p.base_seed},
           {"base", p.base}};
}

void from_json(const json& j, SweepPlan& p) {
  p = SweepPlan{};
  if (j.contains("base")) p.base = j["base"].get<pipeline::ExperimentConfig>();
  p.datasets = j.value("datasets", p.datasets);
  if (j.contains("model")) p.model = net::model_kind_from_string(j["model"].get<std::string>());
  p.spatial_sizes = j.value("spatial_sizes", p.spatial_sizes);
  p.fractions = j.value("fractions", p.fractions);
  p.repeats = j.value("repeats", p.repeats);
  p.base_seed = j.value("base_seed", p.base_seed);
}

Stats summarize(const std::vector<double>& values) {
  Stats s;
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

int SweepResult::failures() const noexcept {
  int n = 0;
  for (const auto& c : cells)
    if (!c.report) ++n;
  return n;
}

std::vector<CellSummary> SweepResult::summary() const {
  std::vector<CellSummary> out;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const CellSummary& s) {
      return s.dataset == c.cell.dataset && s.value == c.cell.value;
    });
    if (it == out.end()) {
      out.push_back({});
      it = out.end() - 1;
      it->dataset = c.cell.dataset;
      it->value = c.cell.value;
    }
    if (c.report) {
      it->runs.push_back(*c.report);
      it->seeds.push_back(c.cell.seed);
    } else {
      ++it->failures;
    }
  }
  for (auto& s : out) {
    auto collect = [&](auto field) {
      std::vector<double> v;
      for (const auto& r : s.runs) v.push_back(field(r));
      return summarize(v);
    };
    s.kappa = collect([](const metrics::EvaluationReport& r) { return r.kappa; });
    s.oa = collect([](const metrics::EvaluationReport& r) { return r.oa; });
    s.aa = collect([](const metrics::EvaluationReport& r) { return r.aa; });
    s.tr_seconds = collect([](const metrics::EvaluationReport& r) { return r.tr_seconds; });
    s.te_seconds = collect([](const metrics::EvaluationReport& r) { return r.te_seconds; });
  }
  return out;
}

namespace {

std::string value_label(double v) { return fmt::format("{:g}", v); }

const std::vector<double> axis_values(const SweepPlan& plan, SweepAxis axis) {
  if (axis == SweepAxis::fraction) return plan.fractions;
  return {plan.spatial_sizes.begin(), plan.spatial_sizes.end()};
}

}  // namespace

fs::path cell_directory(const fs::path& root, const std::string& dataset, net::ModelKind model,
                        SweepAxis axis, double value, int repeat) {
  return root / dataset / net::to_string(model) /
         fmt::format("{}={}", to_string(axis), value_label(value)) / fmt::format("run{}", repeat);
}

std::vector<Cell> plan_cells(const SweepPlan& plan, SweepAxis axis, const fs::path& root) {
  plan.validate(axis);
  const auto values = axis_values(plan, axis);
  std::vector<Cell> cells;
  std::size_t index = 0;
  for (const auto& dataset : plan.datasets)
    for (double v : values) {
      for (int k = 0; k < plan.repeats; ++k) {
        Cell c;
        c.dataset = dataset;
        c.value = v;
        c.repeat = k;
        c.index = index;
        c.seed = derive_seed(derive_seed(plan.base_seed, index), static_cast<std::uint64_t>(k));
        c.directory = cell_directory(root, fs::path(dataset).filename().string(), plan.model, axis, v, k);
        cells.push_back(std::move(c));
      }
      ++index;
    }
  return cells;
}

pipeline::ExperimentConfig cell_config(const SweepPlan& plan, SweepAxis axis, const Cell& cell) {
  pipeline::ExperimentConfig cfg = plan.base;
  cfg.dataset = cell.dataset;
  cfg.model = plan.model;
  cfg.seed = cell.seed;
  if (axis == SweepAxis::spatial) {
    cfg.patch_size = static_cast<int>(cell.value);
    cfg.fractions = {0.15, 0.15, 0.70};
  } else {
    cfg.patch_size = 9;
    const double f = cell.value / 100.0;
    cfg.fractions = {f, f, 1.0 - 2.0 * f};
  }
  return cfg;
}

SweepResult run_sweep(const SweepPlan& plan, SweepAxis axis, const fs::path& root,
                      const SweepOptions& options) {
  const auto cells = plan_cells(plan, axis, root);
  SweepResult result;
  result.axis = axis;
  result.model = plan.model;
  result.cells.resize(cells.size());

  CellRunner runner = options.runner;
  if (!runner)
    runner = [](const pipeline::ExperimentConfig& cfg, const fs::path& dir) {
      pipeline::RunOptions ro;
      ro.command = "sweep";
      return pipeline::run_experiment(cfg, dir, ro).report;
    };
  std::mutex log_mutex;
  auto log = [&](const std::string& text) {
    std::lock_guard lock(log_mutex);
    if (options.log) options.log(text);
    else spdlog::info("{}", text);
  };

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      CellResult& out = result.cells[i];
      out.cell = cell;
      log(fmt::format("[{}/{}] {} {}={} run{} seed {}", i + 1, cells.size(), cell.dataset,
                      to_string(axis), value_label(cell.value), cell.repeat, cell.seed));
      try {
        out.report = runner(cell_config(plan, axis, cell), cell.directory);
        fs::remove(cell.directory / "error.txt");
      } catch (const std::exception& e) {
        out.error = e.what();
        log(fmt::format("cell {} failed: {}", cell.directory.string(), e.what()));
        const std::string text = out.error + "\n";
        try {
          detail::write_all(cell.directory / "error.txt", text.data(), text.size());
        } catch (const std::exception&) {
        }
      }
    }
  };
  const int jobs = std::clamp<int>(options.jobs, 1, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(work);
  }
  return result;
}

SweepResult sweep_spatial(const SweepPlan& plan, const fs::path& root, const SweepOptions& options) {
  return run_sweep(plan, SweepAxis::spatial, root, options);
}

SweepResult sweep_fraction(const SweepPlan& plan, const fs::path& root, const SweepOptions& options) {
  return run_sweep(plan, SweepAxis::fraction, root, options);
}

namespace {

std::string column_label(SweepAxis axis, double v) {
  if (axis == SweepAxis::spatial) return fmt::format("{0:g}x{0:g}xB", v);
  return fmt::format("{:g}%", v);
}

std::string cell_text(const Stats& s, std::size_t runs, bool percent) {
  auto fmt_value = [&](double x) { return percent ? metrics::format_percent(x) : fmt::format("{:.2f}", x); };
  if (runs == 0) return "failed";
  if (runs == 1) return fmt_value(s.mean);
  return fmt_value(s.mean) + " ± " + fmt_value(s.std);
}

json stats_json(const CellSummary& s, bool mean) {
  auto pick = [&](const Stats& st) { return mean ? st.mean : st.std; };
  return json{{"kappa", pick(s.kappa)},
              {"oa", pick(s.oa)},
              {"aa", pick(s.aa)},
              {"tr_seconds", pick(s.tr_seconds)},
              {"te_seconds", pick(s.te_seconds)}};
}

}  // namespace

Report report(const SweepResult& result) {
  const auto summary = result.summary();
  std::vector<std::string> datasets;
  for (const auto& s : summary)
    if (std::find(datasets.begin(), datasets.end(), s.dataset) == datasets.end())
      datasets.push_back(s.dataset);

  static const char* kRows[] = {"kappa (%)", "OA (%)", "AA (%)", "Tr time (s)", "Te time (s)"};
  Report rep;
  rep.json = json{{"axis", to_string(result.axis)},
                  {"model", net::to_string(result.model)},
                  {"failures", result.failures()},
                  {"rows", kRows},
                  {"datasets", json::array()}};
  std::ostringstream text;
  text << fmt::format("{} sweep, model {}\n", to_string(result.axis), net::to_string(result.model));
  for (const auto& name : datasets) {
    std::vector<const CellSummary*> cols;
    for (const auto& s : summary)
      if (s.dataset == name) cols.push_back(&s);
    const std::string code = hsio::short_code(fs::path(name).filename().string());
    json dj{{"dataset", name}, {"code", code}, {"columns", json::array()}, {"table", json::array()}};

    std::vector<std::vector<std::string>> cells(5);
    for (const CellSummary* s : cols) {
      json per_run = json::array();
      for (std::size_t k = 0; k < s->runs.size(); ++k)
        per_run.push_back({{"seed", s->seeds[k]},
                           {"kappa", s->runs[k].kappa},
                           {"oa", s->runs[k].oa},
                           {"aa", s->runs[k].aa},
                           {"tr_seconds", s->runs[k].tr_seconds},
                           {"te_seconds", s->runs[k].te_seconds}});
      dj["columns"].push_back({{"value", s->value},
                               {"label", column_label(result.axis, s->value)},
                               {"runs", s->runs.size()},
                               {"failures", s->failures},
                               {"per_run", per_run},
                               {"mean", stats_json(*s, true)},
                               {"std", stats_json(*s, false)}});
      const std::size_t n = s->runs.size();
      cells[0].push_back(cell_text(s->kappa, n, true));
      cells[1].push_back(cell_text(s->oa, n, true));
      cells[2].push_back(cell_text(s->aa, n, true));
      cells[3].push_back(cell_text(s->tr_seconds, n, false));
      cells[4].push_back(cell_text(s->te_seconds, n, false));
    }
    // Table entries are the printed numbers, parsed back.
    for (int r = 0; r < 5; ++r) {
      json row = json::array();
      for (const auto& c : cells[r]) {
        if (c == "failed") {
          row.push_back(nullptr);
          continue;
        }
        const auto pm = c.find(" ± ");
        json entry{{"mean", std::stod(c.substr(0, pm))}};
        if (pm != std::string::npos) entry["std"] = std::stod(c.substr(pm + 4));
        row.push_back(entry);
      }
      dj["table"].push_back(row);
    }

    std::size_t width = 14;
    for (const auto& row : cells)
      for (const auto& c : row) width = std::max(width, c.size() + 2);
    text << "\n" << fmt::format("{:<14}", code);
    for (const CellSummary* s : cols) text << fmt::format("{:>{}}", column_label(result.axis, s->value), width);
    text << "\n";
    for (int r = 0; r < 5; ++r) {
      text << fmt::format("{:<14}", kRows[r]);
      for (const auto& c : cells[r]) text << fmt::format("{:>{}}", c, width + (c.find("±") != std::string::npos ? 1 : 0));
      text << "\n";
    }
    rep.json["datasets"].push_back(std::move(dj));
  }
  if (result.failures() > 0) text << fmt::format("\n{} run(s) failed\n", result.failures());
  rep.text = text.str();
  return rep;
}

std::vector<SweepResult> load_results(const fs::path& root) {
  if (!fs::is_directory(root))
    throw DataError(fmt::format("no results: '{}' is not a directory", root.string()));
  static const std::regex run_re(R"(run(\d+))");
  static const std::regex axis_re(R"((spatial|fraction)=([0-9.eE+-]+))");
  std::map<std::pair<std::string, std::string>, SweepResult> grouped;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto file = entry.path().filename().string();
    if (file != "report.json" && file != "error.txt") continue;
    const fs::path run_dir = entry.path().parent_path();
    std::smatch rm, am;
    const std::string run_name = run_dir.filename().string();
    const std::string axis_name = run_dir.parent_path().filename().string();
    if (!std::regex_match(run_name, rm, run_re) || !std::regex_match(axis_name, am, axis_re)) continue;
    const fs::path model_dir = run_dir.parent_path().parent_path();
    const std::string model = model_dir.filename().string();
    const std::string dataset = model_dir.parent_path().filename().string();
    CellResult cr;
    cr.cell.dataset = dataset;
    cr.cell.value = std::stod(am[2].str());
    cr.cell.repeat = std::stoi(rm[1].str());
    cr.cell.directory = run_dir;
    if (file == "report.json") {
      cr.report = read_json(entry.path()).get<metrics::EvaluationReport>();
      if (fs::exists(run_dir / "manifest.json"))
        cr.cell.seed = read_json(run_dir / "manifest.json").at("seeds").value("root", std::uint64_t{0});
    } else {
      if (fs::exists(run_dir / "report.json")) continue;
      std::ifstream in(entry.path());
      std::getline(in, cr.error);
    }
    auto& res = grouped[{model, am[1].str()}];
    res.axis = sweep_axis_from_string(am[1].str());
    res.model = net::model_kind_from_string(model);
    res.cells.push_back(std::move(cr));
  }
  if (grouped.empty()) throw DataError(fmt::format("no results found under '{}'", root.string()));
  std::vector<SweepResult> out;
  for (auto& [key, res] : grouped) {
    std::sort(res.cells.begin(), res.cells.end(), [](const CellResult& a, const CellResult& b) {
      return std::tie(a.cell.dataset, a.cell.value, a.cell.repeat) <
             std::tie(b.cell.dataset, b.cell.value, b.cell.repeat);
    });
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace afnet::bench
