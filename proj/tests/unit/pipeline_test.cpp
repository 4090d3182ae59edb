#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "afnet/common.hpp"
#include "afnet/pipeline.hpp"
#include "fixtures.hpp"
#include "tiny.hpp"

using namespace afnet;
using namespace afnet::pipeline;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(const fs::path& dataset) {
  ExperimentConfig c;
  c.dataset = dataset.string();
  c.patch_size = 5;
  c.components = 5;
  c.network = testcfg::tiny(1);
  c.fractions = {0.2, 0.1, 0.7};
  c.train.epochs = 3;
  c.train.batch_size = 32;
  c.seed = 4;
  return c;
}

nlohmann::json read(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

std::map<std::string, fs::file_time_type> snapshot(const fs::path& root) {
  std::map<std::string, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) out[e.path().string()] = e.last_write_time();
  return out;
}

struct Cli {
  int code;
  std::string out;
};

Cli afnet_cli(const std::string& args, const fs::path& scratch) {
  const fs::path capture = scratch / "cli_stdout.txt";
  const std::string cmd = std::string("\"") + AFNET_CLI_PATH + "\" " + args + " > \"" + capture.string() +
                          "\" 2> \"" + (scratch / "cli_stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream f(capture);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

class Scene : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fixture::TempDir;
    fixture::save_scene(fixture::synthetic_scene(14, 12, 10, 3, 99, 0.2), dir_->path() / "data" / "synth");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path root() { return dir_->path(); }
  static fs::path dataset() { return dir_->path() / "data" / "synth"; }

  static inline fixture::TempDir* dir_ = nullptr;
};

}  // namespace

TEST(Seeds, DerivedStreamsDifferAndRepeat) {
  const auto a = derive_seeds(5), b = derive_seeds(5), c = derive_seeds(6);
  EXPECT_EQ(a.root, 5u);
  EXPECT_EQ(a.split, b.split);
  EXPECT_EQ(a.init, b.init);
  EXPECT_NE(a.split, a.init);
  EXPECT_NE(a.init, a.shuffle);
  EXPECT_NE(a.split, c.split);
}

TEST(Config, JsonRoundTripKeepsEveryField) {
  auto c = small_config("somewhere");
  c.model = net::ModelKind::inception3d;
  c.border_mode = prep::BorderMode::interior;
  c.pca_mode = prep::PcaMode::correlation;
  c.attention = net::AttentionSpec{net::AttentionKind::channel, 4};
  c.map_scale = 3;
  nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto defaults = nlohmann::json::object().get<ExperimentConfig>();
  EXPECT_EQ(defaults.patch_size, 9);
  EXPECT_EQ(defaults.components, 15);
  EXPECT_EQ(defaults.train.epochs, 100);
}

TEST(Config, ValidationRejectsBadValues) {
  auto c = small_config("x");
  c.patch_size = 4;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = small_config("x");
  c.components = 0;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = small_config("x");
  c.fractions = {0.5, 0.5, 0.5};
  EXPECT_THROW(c.validate(), PreconditionError);
}

TEST(Manifest, RecordsInputsAndSeeds) {
  fixture::TempDir tmp;
  std::ofstream(tmp / "in.txt") << "abc";
  const auto m = make_manifest("train --x", {{"k", 1}}, derive_seeds(3), {tmp / "in.txt"});
  EXPECT_EQ(m["command"], "train --x");
  EXPECT_EQ(m["config"]["k"], 1);
  EXPECT_EQ(m["seeds"]["root"], 3);
  EXPECT_TRUE(m.contains("version"));
  EXPECT_TRUE(m.contains("started"));
  EXPECT_EQ(m.dump().find("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad") != std::string::npos,
            true);
}

TEST_F(Scene, DatasetsResolveByDirectoryOrName) {
  const auto by_dir = resolve_dataset(dataset().string());
  const auto by_name = resolve_dataset("synth", root() / "data");
  EXPECT_EQ(fs::canonical(by_dir.cube.parent_path()), fs::canonical(by_name.cube.parent_path()));
  EXPECT_THROW(resolve_dataset("nope", root() / "data"), PreconditionError);
}

TEST_F(Scene, PreparationIsDeterministic) {
  const auto data = load_dataset(resolve_dataset(dataset().string()));
  const auto cfg = small_config(dataset());
  const auto a = prepare(data, cfg, derive_seeds(cfg.seed));
  const auto b = prepare(data, cfg, derive_seeds(cfg.seed));
  EXPECT_EQ(a.split.train_idx, b.split.train_idx);
  EXPECT_EQ(a.split.test_idx, b.split.test_idx);
  EXPECT_EQ(a.reduced->data, b.reduced->data);
  EXPECT_EQ(a.patches.size(), data.gt.labeled_count());
  EXPECT_EQ(a.reduced->components, 5);
}

TEST_F(Scene, RunWritesArtifactsAndEvaluationReproducesIt) {
  fixture::TempDir out;
  auto cfg = small_config(dataset());
  RunOptions o;
  o.log = [](const std::string&) {};
  const auto result = run_experiment(cfg, out.path(), o);
  for (const char* f : {"manifest.json", "split.json", "history.json", "report.json", "report.txt", "map.png",
                        "ground_truth.png", "comparison.png", "checkpoint/model.json",
                        "checkpoint/parameters.bin"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(result.history.epochs(), 3);
  const auto manifest = read(out / "manifest.json");
  EXPECT_EQ(manifest["seeds"]["root"], 4);
  EXPECT_EQ(manifest["config"]["patch_size"], 5);

  const auto again = evaluate_run(out.path());
  EXPECT_EQ(again.confusion.counts, result.report.confusion.counts);
  EXPECT_EQ(again.kappa, result.report.kappa);
  std::size_t test_count = 0;
  const auto split = read(out / "split.json");
  for (const auto& c : split["classes"]) test_count += c["test"].size();
  EXPECT_EQ(static_cast<std::size_t>(result.report.confusion.total), test_count);

  fixture::TempDir maps;
  const auto img = render_run(out.path(), maps.path(), 2);
  EXPECT_EQ(img.width, 12);
  EXPECT_EQ(img.height, 14);
  std::ifstream png(maps / "map.png", std::ios::binary);
  std::vector<unsigned char> head(24);
  png.read(reinterpret_cast<char*>(head.data()), 24);
  EXPECT_EQ(head[19], 24);  // IHDR width, scaled
  EXPECT_EQ(head[23], 28);
}

TEST_F(Scene, IdenticalSeedsGiveIdenticalMetrics) {
  fixture::TempDir a, b;
  RunOptions o;
  o.log = [](const std::string&) {};
  o.checkpoint_every_epoch = false;
  const auto ra = run_experiment(small_config(dataset()), a.path(), o);
  const auto rb = run_experiment(small_config(dataset()), b.path(), o);
  EXPECT_EQ(ra.report.oa, rb.report.oa);
  EXPECT_EQ(ra.report.kappa, rb.report.kappa);
  EXPECT_EQ(ra.report.confusion.counts, rb.report.confusion.counts);
  EXPECT_EQ(ra.history.train_loss, rb.history.train_loss);
}

TEST_F(Scene, InterruptedRunResumesToTheSameResult) {
  fixture::TempDir full, part;
  auto cfg = small_config(dataset());
  cfg.train.epochs = 4;
  cfg.render_maps = false;
  RunOptions quiet;
  quiet.log = [](const std::string&) {};
  const auto ref = run_experiment(cfg, full.path(), quiet);

  RunOptions crash = quiet;
  crash.log = [](const std::string& line) {
    if (line.rfind("epoch 3/", 0) == 0) throw std::runtime_error("killed");
  };
  EXPECT_THROW(run_experiment(cfg, part.path(), crash), std::runtime_error);
  RunOptions resume = quiet;
  resume.resume = true;
  const auto res = run_experiment(cfg, part.path(), resume);
  EXPECT_EQ(res.history.train_loss, ref.history.train_loss);
  EXPECT_EQ(res.report.confusion.counts, ref.report.confusion.counts);

  auto changed = cfg;
  changed.train.epochs = 5;
  EXPECT_THROW(run_experiment(changed, part.path(), resume), PreconditionError);
}

TEST_F(Scene, MissingDatasetIsAPreconditionError) {
  fixture::TempDir out;
  auto cfg = small_config(root() / "absent");
  EXPECT_THROW(run_experiment(cfg, out.path()), PreconditionError);
}

// Command-line tool ----------------------------------------------------------

TEST_F(Scene, CliExitCodes) {
  fixture::TempDir tmp;
  EXPECT_EQ(afnet_cli("", tmp.path()).code, 2);
  EXPECT_EQ(afnet_cli("train --dataset " + (root() / "absent").string() + " --out " + (tmp / "r").string(),
                      tmp.path())
                .code,
            2);
  EXPECT_EQ(afnet_cli("train --dataset x --patch-size 4 --out " + (tmp / "r").string(), tmp.path()).code, 2);
  EXPECT_EQ(afnet_cli("report " + (tmp / "nothing").string(), tmp.path()).code, 1);
  EXPECT_EQ(afnet_cli("--help", tmp.path()).code, 0);
}

TEST_F(Scene, CliFlagsOverrideConfigFile) {
  fixture::TempDir tmp;
  auto cfg = small_config(dataset());
  cfg.train.epochs = 2;
  cfg.render_maps = false;
  std::ofstream(tmp / "cfg.json") << nlohmann::json(cfg).dump(2);
  const auto r = afnet_cli("train --config " + (tmp / "cfg.json").string() + " --epochs 1 --seed 9 --out " +
                               (tmp / "run").string(),
                           tmp.path());
  ASSERT_EQ(r.code, 0);
  const auto m = read(tmp / "run" / "manifest.json");
  EXPECT_EQ(m["config"]["train"]["epochs"], 1);
  EXPECT_EQ(m["config"]["patch_size"], 5);
  EXPECT_EQ(m["seeds"]["root"], 9);
  EXPECT_EQ(read(tmp / "run" / "history.json")["train_loss"].size(), 1u);

  // A manifest is itself a valid config; rerunning from it repeats the run.
  ASSERT_EQ(afnet_cli("train --config " + (tmp / "run" / "manifest.json").string() + " --out " +
                          (tmp / "rerun").string(),
                      tmp.path())
                .code,
            0);
  const auto first = read(tmp / "run" / "report.json"), second = read(tmp / "rerun" / "report.json");
  for (const char* key : {"oa", "aa", "kappa", "confusion", "per_class"}) EXPECT_EQ(first[key], second[key]) << key;
}

TEST_F(Scene, CliSweepAndReadOnlyReport) {
  fixture::TempDir tmp;
  auto cfg = small_config(dataset());
  cfg.train.epochs = 1;
  cfg.render_maps = false;
  const nlohmann::json plan{{"datasets", {dataset().string()}}, {"spatial_sizes", {5, 7}}, {"repeats", 1},
                            {"base", cfg}};
  std::ofstream(tmp / "plan.json") << plan.dump(2);
  const fs::path results = tmp / "results";
  const auto s = afnet_cli("sweep --axis spatial --plan " + (tmp / "plan.json").string() + " --jobs 2 --out " +
                               results.string(),
                           tmp.path());
  ASSERT_EQ(s.code, 0);

  const auto before = snapshot(results);
  const auto text = afnet_cli("report " + results.string(), tmp.path());
  const auto js = afnet_cli("report " + results.string() + " --format json", tmp.path());
  EXPECT_EQ(text.code, 0);
  EXPECT_EQ(js.code, 0);
  EXPECT_EQ(snapshot(results), before);
  EXPECT_NE(text.out.find("kappa (%)"), std::string::npos);
  const auto j = nlohmann::json::parse(js.out);
  ASSERT_TRUE(j.is_array() || j.is_object());
}
