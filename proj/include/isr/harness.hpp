#pragma once

// Experiment runner: trains (or loads) the classifier, extracts rationales
// under the configured and the fixed baseline settings, evaluates them,
// times the length search at several skip rates and writes report files.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "isr/config.hpp"
#include "isr/corpus.hpp"
#include "isr/error.hpp"
#include "isr/faithfulness.hpp"
#include "isr/model.hpp"
#include "isr/oracle.hpp"
#include "isr/parallel.hpp"
#include "isr/scorers.hpp"
#include "isr/selection.hpp"
#include "isr/synthetic.hpp"

namespace isr {

inline constexpr const char* kVersion = "1.0.0";

// Failure inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct TimingRow {
  double skip = 0.0;
  std::size_t instances = 0;
  std::uint64_t forward_passes = 0;
  std::uint64_t analytic_passes = 0;
  double mean_seconds = 0.0;
  double mean_delta = 0.0;
  double mean_length_fraction = 0.0;
};

struct RelativeImprovementRow {
  std::string fixed_config;
  std::string instance_config;
  RelativeImprovement ratios;
};

struct RunManifest {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::size_t train_instances = 0;
  std::size_t test_instances = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct ConfigRun {
  SelectionConfig selection;
  std::vector<Rationale> rationales;
  FaithfulnessReport report;
};

struct ReportBundle {
  std::vector<ConfigRun> runs;  // first entry is the configured run
  std::vector<RelativeImprovementRow> relative_improvements;
  std::vector<TimingRow> timing;
  std::vector<FaithfulnessReport> ablation;
  RunManifest manifest;
  Divergence divergence = Divergence::jsd;
};

struct LoadedModel {
  Vocab vocab;
  ModelParams params;
  std::vector<EncodedInstance> train;
  std::vector<EncodedInstance> test;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline std::string config_id(const SelectionConfig& s) {
  std::string scorer = s.scorer_mode == Mode::fixed ? std::string(to_string(s.scorers.front()))
                                                     : "instance(" + join_methods(s.scorers) + ")";
  std::string length = s.length_mode == Mode::fixed ? "fixed" : "instance";
  std::string type = s.type_mode == Mode::fixed ? std::string(to_string(s.fixed_type)) : "instance";
  return "scorer=" + scorer + ";length=" + length + ";type=" + type;
}

// Loads the datasets and either trains a model or loads one from model_dir.
inline LoadedModel prepare_model(const ExperimentConfig& cfg) {
  cfg.require_seed();
  LoadedModel m;
  std::vector<Instance> train_raw;
  try {
    if (!cfg.train_path.empty()) train_raw = load_dataset(cfg.train_path);
    if (!cfg.model_dir.empty()) {
      m.vocab = load_vocab((std::filesystem::path(cfg.model_dir) / "vocab.tsv").string());
      m.params = load_params((std::filesystem::path(cfg.model_dir) / "model.bin").string());
      if (m.params.vocab_size() != m.vocab.size()) throw DataError("model and vocabulary sizes differ");
      if (m.params.num_classes() != cfg.num_classes) throw DataError("model class count differs from config");
    } else {
      if (train_raw.empty()) throw UsageError("config needs 'train' (or 'model') to obtain a classifier");
      m.vocab = build_vocab(train_raw, cfg.min_freq);
    }
  } catch (const DataError& e) {
    throw DataError(std::string("stage 'load': ") + e.what());
  }
  m.train = encode_all(train_raw, m.vocab, cfg.num_classes);
  if (cfg.model_dir.empty()) {
    try {
      m.params = train(m.train, m.vocab.size(), cfg.num_classes, cfg.hyper);
    } catch (const NumericError& e) {
      throw StageError("train", e.what());
    }
  }
  if (!cfg.test_path.empty()) {
    auto test_raw = load_dataset(cfg.test_path);
    if (cfg.max_instances && test_raw.size() > cfg.max_instances) test_raw.resize(cfg.max_instances);
    m.test = encode_all(test_raw, m.vocab, cfg.num_classes);
  }
  m.train_accuracy = accuracy(m.params, m.train);
  m.test_accuracy = accuracy(m.params, m.test);
  return m;
}

// Writes model.bin and vocab.tsv into `dir` (the layout prepare_model reads).
inline void save_model(const LoadedModel& m, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string());
  save_params(m.params, (dir / "model.bin").string());
  save_vocab(m.vocab, (dir / "vocab.tsv").string());
}

// Scores for every configured scorer, per instance.
inline std::vector<std::vector<ImportanceScores>> score_dataset(const ModelParams& params,
                                                                const std::vector<EncodedInstance>& data,
                                                                const SelectionConfig& sel, std::size_t workers) {
  SelectionConfig all = sel;
  all.scorer_mode = Mode::instance_level;
  std::vector<std::vector<ImportanceScores>> scores(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    try {
      scores[i] = compute_scores(params, data[i], all);
    } catch (const std::exception& e) {
      throw StageError("score", "instance '" + data[i].id + "': " + e.what());
    }
  });
  return scores;
}

inline std::vector<ImportanceScores> pick_scores(const std::vector<ImportanceScores>& all,
                                                 const SelectionConfig& sel) {
  std::vector<ImportanceScores> out;
  for (auto m : sel.active_scorers())
    for (const auto& s : all)
      if (s.method == m) {
        out.push_back(s);
        break;
      }
  return out;
}

inline std::vector<Rationale> extract_dataset(const ModelParams& params, const std::vector<EncodedInstance>& data,
                                              const SelectionConfig& sel,
                                              const std::vector<std::vector<ImportanceScores>>& scores,
                                              std::size_t workers) {
  std::vector<Rationale> out(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    try {
      out[i] = select_all(params, data[i], sel, pick_scores(scores[i], sel));
    } catch (const std::exception& e) {
      throw StageError("extract", "instance '" + data[i].id + "': " + e.what());
    }
  });
  return out;
}

// Configured run first, then (when anything is instance-level) every fixed
// scorer x type baseline at length N_t.
inline std::vector<SelectionConfig> enumerate_configs(const SelectionConfig& sel) {
  std::vector<SelectionConfig> out{sel};
  if (sel.scorer_mode == Mode::fixed && sel.length_mode == Mode::fixed && sel.type_mode == Mode::fixed)
    return out;
  for (auto m : sel.scorers) {
    for (auto type : sel.active_types()) {
      SelectionConfig fixed = sel;
      fixed.scorers = {m};
      fixed.scorer_mode = Mode::fixed;
      fixed.length_mode = Mode::fixed;
      fixed.type_mode = Mode::fixed;
      fixed.fixed_type = type;
      out.push_back(fixed);
    }
  }
  return out;
}

inline std::vector<TimingRow> time_length_search(const ModelParams& params,
                                                 const std::vector<EncodedInstance>& data,
                                                 const SelectionConfig& sel,
                                                 const std::vector<std::vector<ImportanceScores>>& scores,
                                                 const std::vector<double>& skips) {
  std::vector<TimingRow> rows;
  for (double skip : skips) {
    SelectionConfig cfg = sel;
    cfg.length_mode = Mode::instance_level;
    cfg.skip = skip;
    cfg.early_stop_threshold.reset();
    validate(cfg);
    TimingRow row;
    row.skip = skip;
    row.instances = data.size();
    double seconds = 0.0, delta = 0.0, frac = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto subset = pick_scores(scores[i], cfg);
      const auto before = forward_pass_count();
      const auto start = std::chrono::steady_clock::now();
      const auto r = select_all(params, data[i], cfg, subset);
      seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      row.forward_passes += forward_pass_count() - before;
      row.analytic_passes += grid_size(data[i].length(), cfg) + 1;
      delta += r.delta;
      frac += static_cast<double>(r.k) / static_cast<double>(data[i].length());
    }
    if (!data.empty()) {
      const double n = static_cast<double>(data.size());
      row.mean_seconds = seconds / n;
      row.mean_delta = delta / n;
      row.mean_length_fraction = frac / n;
    }
    rows.push_back(row);
  }
  return rows;
}

inline RunManifest make_manifest(const ExperimentConfig& cfg, const LoadedModel& model) {
  RunManifest man;
  man.config_text = canonical(cfg);
  man.config_hash = fnv1a(man.config_text);
  man.seed = cfg.require_seed();
  man.train_instances = model.train.size();
  man.test_instances = model.test.size();
  man.train_accuracy = model.train_accuracy;
  man.test_accuracy = model.test_accuracy;
  return man;
}

inline ReportBundle run_experiment(const ExperimentConfig& cfg) {
  validate(cfg.selection);
  ReportBundle bundle;
  bundle.divergence = cfg.selection.divergence;
  const auto model = prepare_model(cfg);
  if (model.test.empty()) throw UsageError("config needs a non-empty 'test' dataset");
  const F1Gold gold = cfg.gold_f1 ? F1Gold::dataset_label : F1Gold::model_prediction;
  const auto scores = score_dataset(model.params, model.test, cfg.selection, cfg.workers);

  for (const auto& sel : enumerate_configs(cfg.selection)) {
    ConfigRun run;
    run.selection = sel;
    run.rationales = extract_dataset(model.params, model.test, sel, scores, cfg.workers);
    try {
      run.report = evaluate(model.params, model.test, run.rationales, config_id(sel), gold, cfg.workers);
    } catch (const DataError& e) {
      throw StageError("evaluate", e.what());
    }
    bundle.runs.push_back(std::move(run));
  }
  for (std::size_t i = 1; i < bundle.runs.size(); ++i)
    bundle.relative_improvements.push_back({bundle.runs[i].report.config_id, bundle.runs[0].report.config_id,
                                            relative_improvement(bundle.runs[i].report, bundle.runs[0].report)});

  if (!cfg.timing_skips.empty())
    bundle.timing = time_length_search(model.params, model.test, cfg.selection, scores, cfg.timing_skips);
  if (!cfg.ablation_order.empty())
    bundle.ablation = ablate_scorers(model.params, model.test, cfg.selection, cfg.ablation_order, scores, gold,
                                     cfg.workers);

  bundle.manifest = make_manifest(cfg, model);
  return bundle;
}

// Fixed-precision decimal text, stable across runs.
inline std::string fmt_num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& x) { return x ? fmt_num(*x) : "NA"; }

inline nlohmann::json instance_eval_json(const InstanceEval& e, const std::string& config) {
  return {{"config", config},
          {"id", e.id},
          {"predicted_class", e.predicted_class},
          {"masked_class", e.masked_class},
          {"p_full", e.p_full},
          {"p_rationale_only", e.p_rationale_only},
          {"p_without_rationale", e.p_without_rationale},
          {"p_baseline", e.p_baseline},
          {"norm_suff", e.norm_suff},
          {"norm_comp", e.norm_comp},
          {"length_fraction", e.length_fraction},
          {"k", e.k},
          {"type", std::string(to_string(e.type))},
          {"scorer", std::string(to_string(e.scorer))},
          {"delta", e.delta}};
}

namespace detail {
inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

inline void write_plot(const std::filesystem::path& path, const std::vector<FaithfulnessReport>& ablation,
                       double FaithfulnessReport::*metric) {
  auto out = open_out(path);
  out << "x,y,scorer_set\n";
  for (const auto& rep : ablation) {
    const auto set = rep.config_id.substr(rep.config_id.find(':') + 1);
    const auto count = static_cast<std::size_t>(std::count(set.begin(), set.end(), '+') + 1);
    out << count << ',' << fmt_num(rep.*metric) << ',' << set << '\n';
  }
}
}  // namespace detail

inline void write_aggregate_csv(std::ostream& out, const std::vector<const FaithfulnessReport*>& reports) {
  out << "config_id,mean_norm_suff,mean_norm_comp,f1_macro,mean_length_fraction\n";
  for (const auto* r : reports)
    out << '"' << r->config_id << "\"," << fmt_num(r->mean_norm_suff) << ',' << fmt_num(r->mean_norm_comp) << ','
        << fmt_num(r->f1_macro) << ',' << fmt_num(r->mean_length_fraction) << '\n';
}

// Writes the report files into out_dir. Everything except
// timing_seconds.csv (wall-clock measurements) is a deterministic function
// of the bundle.
inline std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw DataError("cannot create output directory " + out_dir.string());
  std::vector<std::filesystem::path> written;
  auto file = [&](const char* name) {
    written.push_back(out_dir / name);
    return detail::open_out(written.back());
  };

  {
    auto out = file("aggregate.csv");
    std::vector<const FaithfulnessReport*> reps;
    for (const auto& run : bundle.runs) reps.push_back(&run.report);
    write_aggregate_csv(out, reps);
  }
  {
    auto out = file("instances.jsonl");
    for (const auto& run : bundle.runs)
      for (const auto& e : run.report.instances) out << instance_eval_json(e, run.report.config_id).dump() << '\n';
  }
  {
    auto out = file("rationales.jsonl");
    for (const auto& run : bundle.runs)
      for (const auto& r : run.rationales) {
        auto rec = rationale_json(r, bundle.divergence);
        rec["config"] = run.report.config_id;
        out << rec.dump() << '\n';
      }
  }
  if (!bundle.relative_improvements.empty()) {
    auto out = file("relative_improvement.csv");
    out << "fixed_config,instance_config,norm_suff_ri,norm_comp_ri,f1_ri\n";
    for (const auto& row : bundle.relative_improvements)
      out << '"' << row.fixed_config << "\",\"" << row.instance_config << "\"," << fmt_opt(row.ratios.norm_suff)
          << ',' << fmt_opt(row.ratios.norm_comp) << ',' << fmt_opt(row.ratios.f1) << '\n';
  }
  if (!bundle.timing.empty()) {
    auto out = file("timing.csv");
    out << "skip,instances,forward_passes,analytic_passes,mean_delta,mean_length_fraction\n";
    for (const auto& t : bundle.timing)
      out << fmt_num(t.skip) << ',' << t.instances << ',' << t.forward_passes << ',' << t.analytic_passes << ','
          << fmt_num(t.mean_delta) << ',' << fmt_num(t.mean_length_fraction) << '\n';
    auto secs = file("timing_seconds.csv");
    secs << "skip,mean_seconds_per_instance,speedup_vs_first\n";
    for (const auto& t : bundle.timing)
      secs << fmt_num(t.skip) << ',' << fmt_num(t.mean_seconds) << ','
           << (t.mean_seconds > 0 ? fmt_num(bundle.timing.front().mean_seconds / t.mean_seconds) : "NA") << '\n';
  }
  if (!bundle.ablation.empty()) {
    {
      auto out = file("ablation.csv");
      std::vector<const FaithfulnessReport*> reps;
      for (const auto& r : bundle.ablation) reps.push_back(&r);
      write_aggregate_csv(out, reps);
    }
    for (auto [name, metric] : {std::pair{"plot_norm_suff.csv", &FaithfulnessReport::mean_norm_suff},
                                std::pair{"plot_norm_comp.csv", &FaithfulnessReport::mean_norm_comp},
                                std::pair{"plot_f1_macro.csv", &FaithfulnessReport::f1_macro}}) {
      written.push_back(out_dir / name);
      detail::write_plot(written.back(), bundle.ablation, metric);
    }
  }
  {
    const auto& m = bundle.manifest;
    nlohmann::json man = {{"version", m.version},
                          {"seed", m.seed},
                          {"config_hash", m.config_hash},
                          {"config", m.config_text},
                          {"train_instances", m.train_instances},
                          {"test_instances", m.test_instances},
                          {"train_accuracy", m.train_accuracy},
                          {"test_accuracy", m.test_accuracy}};
    auto out = file("manifest.json");
    out << man.dump(2) << '\n';
  }
  return written;
}

// Writes train/dev/test.jsonl and a runnable config.ini for the corpus into
// `dir`. Returns the config path.
inline std::filesystem::path write_synthetic_workspace(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  validate(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string());
  const auto corpus = generate_synthetic(spec);
  write_dataset(corpus.train, (dir / "train.jsonl").string());
  write_dataset(corpus.dev, (dir / "dev.jsonl").string());
  write_dataset(corpus.test, (dir / "test.jsonl").string());
  const auto path = dir / "config.ini";
  auto out = detail::open_out(path);
  out << "train = train.jsonl\n"
      << "dev = dev.jsonl\n"
      << "test = test.jsonl\n"
      << "out = out\n"
      << "num_classes = " << spec.num_classes << "\n"
      << "seed = " << spec.seed << "\n"
      << "scorers = rand, attention, scaled_attention, input_x_grad, ig, deeplift\n"
      << "scorer_mode = instance\n"
      << "length_mode = instance\n"
      << "type_mode = instance\n"
      << "ratio = 0.2\n"
      << "skip = 0\n"
      << "divergence = jsd\n"
      << "ig_steps = 20\n"
      << "timing_skips = 0, 0.02, 0.05\n"
      << "ablation_order = ig, rand, deeplift, attention, input_x_grad, scaled_attention\n";
  return path;
}

struct SkipGap {
  double skip = 0.0;
  double mean_gap = 0.0;  // mean of delta_exhaustive - delta_skipped
  double max_gap = 0.0;
  std::size_t violations = 0;  // instances where the skipped search beat exhaustive search
};

struct OracleReport {
  std::size_t instances = 0;
  std::size_t skipped_long = 0;  // instances longer than the brute-force limit
  std::vector<std::string> mismatches;
  std::vector<SkipGap> gaps;
};

inline bool same_rationale(const Rationale& a, const Rationale& b) {
  return a.positions == b.positions && a.k == b.k && a.type == b.type && a.scorer == b.scorer &&
         a.delta == b.delta;
}

// Compares select_all (skip = 0) against brute-force enumeration on every
// instance, and measures the delta lost by each positive skip rate.
inline OracleReport oracle_check(const ExperimentConfig& cfg) {
  const auto model = prepare_model(cfg);
  SelectionConfig exhaustive = cfg.selection;
  exhaustive.skip = 0.0;
  exhaustive.early_stop_threshold.reset();
  validate(exhaustive);
  const auto scores = score_dataset(model.params, model.test, exhaustive, cfg.workers);

  OracleReport rep;
  rep.instances = model.test.size();
  std::vector<std::optional<Rationale>> fast(model.test.size());
  std::vector<char> mismatch(model.test.size(), 0);
  parallel_for(model.test.size(), cfg.workers, [&](std::size_t i) {
    const auto& inst = model.test[i];
    if (inst.length() > oracle::kMaxBruteForceLength) return;
    const auto subset = pick_scores(scores[i], exhaustive);
    fast[i] = select_all(model.params, inst, exhaustive, subset);
    mismatch[i] = !same_rationale(*fast[i], oracle::brute_force_select(model.params, inst, exhaustive, subset));
  });
  for (std::size_t i = 0; i < model.test.size(); ++i) {
    if (!fast[i]) ++rep.skipped_long;
    if (mismatch[i]) rep.mismatches.push_back(model.test[i].id);
  }

  for (double skip : cfg.timing_skips) {
    if (skip <= 0.0) continue;
    SelectionConfig skipped = exhaustive;
    skipped.skip = skip;
    validate(skipped);
    SkipGap gap{skip};
    std::size_t n = 0;
    for (std::size_t i = 0; i < model.test.size(); ++i) {
      if (!fast[i]) continue;
      const auto r = select_all(model.params, model.test[i], skipped, pick_scores(scores[i], skipped));
      const double g = fast[i]->delta - r.delta;
      gap.mean_gap += g;
      gap.max_gap = std::max(gap.max_gap, g);
      gap.violations += g < 0.0;
      ++n;
    }
    if (n) gap.mean_gap /= static_cast<double>(n);
    rep.gaps.push_back(gap);
  }
  return rep;
}

inline void write_oracle_report(const OracleReport& rep, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j = {{"instances", rep.instances},
                      {"skipped_long", rep.skipped_long},
                      {"mismatches", rep.mismatches},
                      {"skip_gaps", nlohmann::json::array()}};
  for (const auto& g : rep.gaps)
    j["skip_gaps"].push_back(
        {{"skip", g.skip}, {"mean_gap", g.mean_gap}, {"max_gap", g.max_gap}, {"violations", g.violations}});
  auto out = detail::open_out(out_dir / "oracle_check.json");
  out << j.dump(2) << '\n';
}

}  // namespace isr
