#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "isr/harness.hpp"

namespace fs = std::filesystem;
using namespace isr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<double> skip;
  std::optional<std::string> divergence;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o, bool needs_config) {
  auto* c = cmd->add_option("--config", o.config, "experiment config file (key = value lines)");
  if (needs_config) c->required();
  cmd->add_option("--seed", o.seed, "seed for training, scorers and synthetic data");
  cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--skip", o.skip, "length search skip rate, fraction of the sequence length");
  cmd->add_option("--divergence", o.divergence, "kl | jsd | perplexity | classdiff");
  cmd->add_option("--out", o.out, "output directory");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) set_seed(cfg, *o.seed);
  if (o.workers) cfg.workers = *o.workers;
  if (o.skip) cfg.selection.skip = *o.skip;
  if (o.divergence) cfg.selection.divergence = parse_divergence(*o.divergence);
  if (o.out) cfg.out_dir = *o.out;
  validate(cfg.selection);
  return cfg;
}

int cmd_train(const ExperimentConfig& cfg) {
  const auto model = prepare_model(cfg);
  const auto dir = fs::path(cfg.out_dir) / "model";
  save_model(model, dir);
  std::printf("train accuracy %.4f, test accuracy %.4f, saved to %s\n", model.train_accuracy, model.test_accuracy,
              dir.string().c_str());
  return kOk;
}

int cmd_extract(const ExperimentConfig& cfg) {
  const auto model = prepare_model(cfg);
  if (model.test.empty()) throw UsageError("config needs a non-empty 'test' dataset");
  const auto scores = score_dataset(model.params, model.test, cfg.selection, cfg.workers);
  const auto rationales = extract_dataset(model.params, model.test, cfg.selection, scores, cfg.workers);
  fs::create_directories(cfg.out_dir);
  {
    auto out = detail::open_out(fs::path(cfg.out_dir) / "scores.jsonl");
    for (std::size_t i = 0; i < model.test.size(); ++i)
      for (const auto& s : scores[i]) out << scores_record(model.test[i].id, s) << '\n';
  }
  {
    auto out = detail::open_out(fs::path(cfg.out_dir) / "rationales.jsonl");
    for (const auto& r : rationales) out << rationale_json(r, cfg.selection.divergence).dump() << '\n';
  }
  std::printf("%zu rationales written to %s\n", rationales.size(), cfg.out_dir.c_str());
  return kOk;
}

int cmd_evaluate(ExperimentConfig cfg) {
  cfg.ablation_order.clear();
  const auto bundle = run_experiment(cfg);
  emit_report(bundle, cfg.out_dir);
  const auto& main_run = bundle.runs.front().report;
  std::printf("%s: norm_suff %.4f norm_comp %.4f f1 %.4f length %.4f\n", main_run.config_id.c_str(),
              main_run.mean_norm_suff, main_run.mean_norm_comp, main_run.f1_macro, main_run.mean_length_fraction);
  return kOk;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  if (cfg.ablation_order.empty()) throw UsageError("config needs 'ablation_order'");
  const auto model = prepare_model(cfg);
  if (model.test.empty()) throw UsageError("config needs a non-empty 'test' dataset");
  const F1Gold gold = cfg.gold_f1 ? F1Gold::dataset_label : F1Gold::model_prediction;
  const auto scores = score_dataset(model.params, model.test, cfg.selection, cfg.workers);
  ReportBundle bundle;
  bundle.divergence = cfg.selection.divergence;
  bundle.ablation =
      ablate_scorers(model.params, model.test, cfg.selection, cfg.ablation_order, scores, gold, cfg.workers);
  bundle.manifest = make_manifest(cfg, model);
  emit_report(bundle, cfg.out_dir);
  for (const auto& r : bundle.ablation)
    std::printf("%s: norm_comp %.4f\n", r.config_id.c_str(), r.mean_norm_comp);
  return kOk;
}

int cmd_oracle(const ExperimentConfig& cfg) {
  const auto rep = oracle_check(cfg);
  write_oracle_report(rep, cfg.out_dir);
  std::printf("%zu instances, %zu too long for brute force, %zu mismatches\n", rep.instances, rep.skipped_long,
              rep.mismatches.size());
  for (const auto& g : rep.gaps)
    std::printf("skip %g: mean delta gap %.6g, max %.6g\n", g.skip, g.mean_gap, g.max_gap);
  if (!rep.mismatches.empty()) {
    std::fprintf(stderr, "error: selection disagrees with brute force on '%s'\n", rep.mismatches.front().c_str());
    return kInternal;
  }
  return kOk;
}

int cmd_gen_synthetic(const Overrides& o) {
  if (!o.out) throw UsageError("gen-synthetic needs --out");
  const auto cfg = resolve(o);
  auto spec = cfg.synthetic;
  if (!o.seed && !cfg.seed) throw UsageError("gen-synthetic needs a seed (--seed or config)");
  const auto path = write_synthetic_workspace(spec, *o.out);
  std::printf("wrote %s\n", path.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-level rationale selection toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Overrides o;
  auto* train_cmd = app.add_subcommand("train", "train a classifier and save it under <out>/model");
  auto* extract_cmd = app.add_subcommand("extract", "score the test set and extract rationales");
  auto* eval_cmd = app.add_subcommand("evaluate", "extract, evaluate and write the report");
  auto* ablate_cmd = app.add_subcommand("ablate", "scorer-removal ablation");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "compare selection against brute-force search");
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic corpus and a runnable config");
  for (auto* cmd : {train_cmd, extract_cmd, eval_cmd, ablate_cmd, oracle_cmd}) add_common(cmd, o, true);
  add_common(gen_cmd, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_synthetic(o);
    const auto cfg = resolve(o);
    cfg.require_seed();
    if (*train_cmd) return cmd_train(cfg);
    if (*extract_cmd) return cmd_extract(cfg);
    if (*eval_cmd) return cmd_evaluate(cfg);
    if (*ablate_cmd) return cmd_ablate(cfg);
    if (*oracle_cmd) return cmd_oracle(cfg);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
