#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "isr/harness.hpp"

using namespace isr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("isr_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.n_train = 300;
  spec.n_dev = 10;
  spec.n_test = 30;
  spec.seed = 21;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t lines(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  ExperimentConfig cfg;
  apply_config(cfg, parse_key_values(in));
  if (cfg.seed) set_seed(cfg, *cfg.seed);
  return cfg;
}

}  // namespace

TEST(Config, ParsesKeys) {
  const auto cfg = parse(
      "# comment\n"
      "train = data/train.jsonl\n"
      "scorers = attention, ig\n"
      "scorer_mode = instance\n"
      "length_mode = instance\n"
      "skip = 0.02\n"
      "divergence = classdiff\n"
      "early_stop = 0.01\n"
      "seed = 9\n"
      "timing_skips = 0, 0.05\n"
      "gold_f1 = true\n");
  EXPECT_EQ(cfg.train_path, "data/train.jsonl");
  EXPECT_EQ(cfg.selection.scorers, (std::vector<Method>{Method::attention, Method::ig}));
  EXPECT_EQ(cfg.selection.scorer_mode, Mode::instance_level);
  EXPECT_EQ(cfg.selection.type_mode, Mode::fixed);
  EXPECT_EQ(cfg.selection.skip, 0.02);
  EXPECT_EQ(cfg.selection.divergence, Divergence::classdiff);
  EXPECT_EQ(*cfg.selection.early_stop_threshold, 0.01);
  EXPECT_EQ(cfg.require_seed(), 9u);
  EXPECT_EQ(cfg.hyper.seed, 9u);
  EXPECT_EQ(cfg.selection.scorer_options.seed, 9u);
  EXPECT_EQ(cfg.timing_skips, (std::vector<double>{0.0, 0.05}));
  EXPECT_TRUE(cfg.gold_f1);
}

TEST(Config, PresetsAndMultiplier) {
  EXPECT_EQ(parse("preset = evinf\n").selection.ratio, 0.1);
  EXPECT_EQ(parse("preset = sst\n").selection.ratio, 0.2);
  EXPECT_DOUBLE_EQ(parse("preset = sst\nratio_multiplier = 2\n").selection.ratio, 0.4);
  EXPECT_EQ(parse("preset = evinf\nratio = 0.3\n").selection.ratio, 0.3);
  EXPECT_EQ(parse("ratio_multiplier = 10\n").selection.ratio, 1.0);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse("colour = blue\n"), UsageError);
  EXPECT_THROW(parse("no equals sign\n"), UsageError);
  EXPECT_THROW(parse("skip = fast\n"), UsageError);
  EXPECT_THROW(parse("preset = imdb\n"), UsageError);
  EXPECT_THROW(parse("scorers = attention, shap\n"), UsageError);
  EXPECT_THROW(parse("").require_seed(), UsageError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), DataError);
}

TEST(Config, CanonicalTextIgnoresOutputAndWorkers) {
  auto a = parse("seed = 1\nout = a\nworkers = 1\n");
  auto b = parse("seed = 1\nout = b\nworkers = 4\n");
  EXPECT_EQ(canonical(a), canonical(b));
  EXPECT_NE(canonical(a), canonical(parse("seed = 2\n")));
}

TEST(Config, PathsRelativeToConfigFile) {
  const auto dir = scratch("paths");
  const auto cfg_path = write_synthetic_workspace(small_spec(), dir);
  const auto cfg = load_config(cfg_path.string());
  EXPECT_EQ(fs::path(cfg.train_path), (dir / "train.jsonl").lexically_normal());
  EXPECT_TRUE(fs::exists(cfg.train_path));
  EXPECT_EQ(cfg.require_seed(), small_spec().seed);
  fs::remove_all(dir);
}

TEST(Harness, EnumeratesBaselines) {
  SelectionConfig sel;
  sel.scorers = {Method::attention, Method::ig};
  sel.scorer_mode = sel.type_mode = Mode::instance_level;
  const auto configs = enumerate_configs(sel);
  ASSERT_EQ(configs.size(), 5u);
  EXPECT_EQ(config_id(configs[0]), "scorer=instance(attention+ig);length=fixed;type=instance");
  EXPECT_EQ(config_id(configs[1]), "scorer=attention;length=fixed;type=topk");
  EXPECT_EQ(config_id(configs[2]), "scorer=attention;length=fixed;type=contiguous");
  sel.scorer_mode = sel.type_mode = Mode::fixed;
  EXPECT_EQ(enumerate_configs(sel).size(), 1u);
}

TEST(Harness, ReportIsCompleteAndDeterministic) {
  const auto dir = scratch("report");
  auto cfg = load_config(write_synthetic_workspace(small_spec(), dir).string());

  cfg.workers = 1;
  const auto bundle = run_experiment(cfg);
  const auto files = emit_report(bundle, dir / "run1");
  cfg.workers = 3;
  emit_report(run_experiment(cfg), dir / "run2");

  for (const auto& f : files) {
    ASSERT_TRUE(fs::exists(f)) << f;
    if (f.filename() == "timing_seconds.csv") continue;
    EXPECT_EQ(slurp(f), slurp(dir / "run2" / f.filename())) << f.filename();
  }

  const std::size_t configs = 1 + 6 * 2;
  EXPECT_EQ(bundle.runs.size(), configs);
  EXPECT_EQ(lines(dir / "run1" / "aggregate.csv"), configs + 1);
  EXPECT_EQ(lines(dir / "run1" / "instances.jsonl"), configs * small_spec().n_test);
  EXPECT_EQ(lines(dir / "run1" / "rationales.jsonl"), configs * small_spec().n_test);
  EXPECT_EQ(lines(dir / "run1" / "relative_improvement.csv"), configs);
  EXPECT_EQ(lines(dir / "run1" / "timing.csv"), 4u);
  EXPECT_EQ(lines(dir / "run1" / "ablation.csv"), 7u);
  EXPECT_EQ(lines(dir / "run1" / "plot_norm_comp.csv"), 7u);

  for (const auto& row : bundle.timing) EXPECT_EQ(row.forward_passes, row.analytic_passes);
  EXPECT_GE(bundle.timing[0].forward_passes, bundle.timing[2].forward_passes);

  const auto manifest = nlohmann::json::parse(slurp(dir / "run1" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], small_spec().seed);
  EXPECT_EQ(manifest["version"], kVersion);
  EXPECT_EQ(manifest["config_hash"].get<std::uint64_t>(), fnv1a(canonical(cfg)));
  EXPECT_GE(manifest["train_accuracy"].get<double>(), 0.9);
  fs::remove_all(dir);
}

TEST(Harness, SavedModelReloads) {
  const auto dir = scratch("model");
  auto cfg = load_config(write_synthetic_workspace(small_spec(), dir).string());
  cfg.hyper.epochs = 2;
  const auto trained = prepare_model(cfg);
  save_model(trained, dir / "model");
  cfg.model_dir = (dir / "model").string();
  const auto loaded = prepare_model(cfg);
  EXPECT_TRUE(loaded.params == trained.params);
  EXPECT_EQ(loaded.vocab, trained.vocab);
  EXPECT_EQ(loaded.test_accuracy, trained.test_accuracy);
  cfg.num_classes = 3;
  EXPECT_THROW(prepare_model(cfg), DataError);
  fs::remove_all(dir);
}

TEST(Harness, OracleCheckFindsNoMismatch) {
  const auto dir = scratch("oracle");
  auto cfg = load_config(write_synthetic_workspace(small_spec(), dir).string());
  cfg.hyper.epochs = 3;
  const auto rep = oracle_check(cfg);
  EXPECT_EQ(rep.instances, small_spec().n_test);
  EXPECT_TRUE(rep.mismatches.empty());
  ASSERT_EQ(rep.gaps.size(), 2u);
  for (const auto& g : rep.gaps) {
    EXPECT_EQ(g.violations, 0u);
    EXPECT_GE(g.mean_gap, 0.0);
  }
  write_oracle_report(rep, dir / "out");
  EXPECT_TRUE(fs::exists(dir / "out" / "oracle_check.json"));
  fs::remove_all(dir);
}

TEST(Harness, MissingTestSetIsUsageError) {
  const auto dir = scratch("missing");
  auto cfg = load_config(write_synthetic_workspace(small_spec(), dir).string());
  cfg.test_path.clear();
  EXPECT_THROW(run_experiment(cfg), UsageError);
  cfg.test_path = (dir / "absent.jsonl").string();
  EXPECT_THROW(run_experiment(cfg), DataError);
  fs::remove_all(dir);
}
