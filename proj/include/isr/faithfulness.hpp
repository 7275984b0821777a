#pragma once

// Erasure-based faithfulness: normalised sufficiency and comprehensiveness,
// masked F1, relative improvement and scorer ablation.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "isr/corpus.hpp"
#include "isr/error.hpp"
#include "isr/model.hpp"
#include "isr/parallel.hpp"
#include "isr/selection.hpp"
#include "isr/stats.hpp"

namespace isr {

inline constexpr double kNormGuard = 1e-6;

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Suff(x, y, R) = 1 - max(0, p(y|x) - p(y|R))
inline double sufficiency(double p_full, double p_rationale_only) {
  return 1.0 - std::max(0.0, p_full - p_rationale_only);
}

// Comp(x, y, R) = max(0, p(y|x) - p(y|x\R))
inline double comprehensiveness(double p_full, double p_without_rationale) {
  return std::max(0.0, p_full - p_without_rationale);
}

// (Suff - Suff0) / (1 - Suff0), clamped to [0,1]; 1 when 1 - Suff0 < 1e-6.
inline double normalized_sufficiency(double p_full, double p_rationale_only, double p_baseline) {
  const double suff0 = sufficiency(p_full, p_baseline);
  if (1.0 - suff0 < kNormGuard) return 1.0;
  return clamp01((sufficiency(p_full, p_rationale_only) - suff0) / (1.0 - suff0));
}

// Comp / (1 - Suff0), clamped to [0,1]; 0 when 1 - Suff0 < 1e-6.
inline double normalized_comprehensiveness(double p_full, double p_without_rationale, double p_baseline) {
  const double suff0 = sufficiency(p_full, p_baseline);
  if (1.0 - suff0 < kNormGuard) return 0.0;
  return clamp01(comprehensiveness(p_full, p_without_rationale) / (1.0 - suff0));
}

struct InstanceEval {
  std::string id;
  std::size_t predicted_class = 0;  // y_hat on the full input
  std::size_t masked_class = 0;     // argmax with the rationale masked
  double p_full = 0.0;
  double p_rationale_only = 0.0;
  double p_without_rationale = 0.0;
  double p_baseline = 0.0;
  double norm_suff = 0.0;
  double norm_comp = 0.0;
  double length_fraction = 0.0;
  // Echo of the evaluated rationale.
  std::size_t k = 0;
  RationaleType type = RationaleType::topk;
  Method scorer = Method::rand;
  double delta = 0.0;
};

namespace detail {
inline void check_positions(const Rationale& r, std::size_t length, const std::string& id) {
  for (auto p : r.positions)
    if (p >= length) throw UsageError("rationale position out of range for instance '" + id + "'");
}
}  // namespace detail

// p(y|R) masks the complement of R in place; p(y|0) masks everything.
// Accepts an empty rationale.
inline InstanceEval evaluate_instance(const ModelParams& params, const EncodedInstance& inst,
                                      const Rationale& rationale) {
  const std::size_t T = inst.length();
  detail::check_positions(rationale, T, inst.id);
  const auto full = forward(params, inst);
  const auto y = full.predicted_class;
  const auto only = forward(params, inst, MaskSet::complement_of(rationale.positions, T));
  const auto without = forward(params, inst, MaskSet(rationale.positions));
  const auto base = forward(params, inst, MaskSet::all(T));

  InstanceEval e;
  e.id = inst.id;
  e.predicted_class = y;
  e.masked_class = without.predicted_class;
  e.p_full = full.probs[y];
  e.p_rationale_only = only.probs[y];
  e.p_without_rationale = without.probs[y];
  e.p_baseline = base.probs[y];
  e.norm_suff = normalized_sufficiency(e.p_full, e.p_rationale_only, e.p_baseline);
  e.norm_comp = normalized_comprehensiveness(e.p_full, e.p_without_rationale, e.p_baseline);
  e.length_fraction = static_cast<double>(MaskSet(rationale.positions).size()) / static_cast<double>(T);
  e.k = rationale.k;
  e.type = rationale.type;
  e.scorer = rationale.scorer;
  e.delta = rationale.delta;
  return e;
}

inline double normalized_sufficiency(const ModelParams& params, const EncodedInstance& inst,
                                     const Rationale& rationale) {
  return evaluate_instance(params, inst, rationale).norm_suff;
}

inline double normalized_comprehensiveness(const ModelParams& params, const EncodedInstance& inst,
                                           const Rationale& rationale) {
  return evaluate_instance(params, inst, rationale).norm_comp;
}

// Macro F1 over the classes that occur in either gold or predicted labels.
inline double f1_macro(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted) {
  if (gold.size() != predicted.size()) throw UsageError("f1_macro needs equal-length label lists");
  if (gold.empty()) return 0.0;
  std::set<std::size_t> classes(gold.begin(), gold.end());
  classes.insert(predicted.begin(), predicted.end());
  double total = 0.0;
  for (auto c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == c, p = predicted[i] == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    total += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  }
  return total / static_cast<double>(classes.size());
}

enum class F1Gold { model_prediction, dataset_label };

// F1 of predictions on rationale-masked inputs. Gold labels are the model's
// own full-input predictions unless `gold` says otherwise. Lower is more
// faithful.
inline double masked_f1(const ModelParams& params, const std::vector<EncodedInstance>& dataset,
                        const std::vector<Rationale>& rationales,
                        F1Gold gold = F1Gold::model_prediction) {
  std::unordered_map<std::string, const Rationale*> by_id;
  for (const auto& r : rationales) by_id.emplace(r.id, &r);
  std::vector<std::size_t> golds, preds;
  for (const auto& inst : dataset) {
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw DataError("no rationale for instance '" + inst.id + "'");
    detail::check_positions(*it->second, inst.length(), inst.id);
    golds.push_back(gold == F1Gold::dataset_label ? inst.label : forward(params, inst).predicted_class);
    preds.push_back(forward(params, inst, MaskSet(it->second->positions)).predicted_class);
  }
  return f1_macro(golds, preds);
}

struct FaithfulnessReport {
  std::string config_id;
  std::vector<InstanceEval> instances;
  double mean_norm_suff = 0.0;
  double mean_norm_comp = 0.0;
  double f1_macro = 0.0;
  double mean_length_fraction = 0.0;
};

inline FaithfulnessReport aggregate(std::string config_id, std::vector<InstanceEval> evals,
                                    const std::vector<EncodedInstance>& dataset, F1Gold gold) {
  FaithfulnessReport rep;
  rep.config_id = std::move(config_id);
  std::vector<double> suff, comp, len;
  std::vector<std::size_t> golds, preds;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    suff.push_back(evals[i].norm_suff);
    comp.push_back(evals[i].norm_comp);
    len.push_back(evals[i].length_fraction);
    golds.push_back(gold == F1Gold::dataset_label ? dataset[i].label : evals[i].predicted_class);
    preds.push_back(evals[i].masked_class);
  }
  rep.mean_norm_suff = mean(suff);
  rep.mean_norm_comp = mean(comp);
  rep.mean_length_fraction = mean(len);
  rep.f1_macro = f1_macro(golds, preds);
  rep.instances = std::move(evals);
  return rep;
}

// Evaluates rationales aligned one-to-one (by id) with `dataset`.
inline FaithfulnessReport evaluate(const ModelParams& params, const std::vector<EncodedInstance>& dataset,
                                   const std::vector<Rationale>& rationales, std::string config_id,
                                   F1Gold gold = F1Gold::model_prediction, std::size_t workers = 1) {
  if (rationales.size() != dataset.size()) throw DataError("expected one rationale per instance");
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (rationales[i].id != dataset[i].id)
      throw DataError("no rationale for instance '" + dataset[i].id + "'");
  std::vector<InstanceEval> evals(dataset.size());
  parallel_for(dataset.size(), workers,
               [&](std::size_t i) { evals[i] = evaluate_instance(params, dataset[i], rationales[i]); });
  return aggregate(std::move(config_id), std::move(evals), dataset, gold);
}

struct RelativeImprovement {
  // Absent when the fixed-configuration mean is zero.
  std::optional<double> norm_suff;
  std::optional<double> norm_comp;
  std::optional<double> f1;
};

// instance-level mean / fixed mean for each metric.
inline RelativeImprovement relative_improvement(const FaithfulnessReport& fixed,
                                                const FaithfulnessReport& instance_level) {
  std::multiset<std::string> a, b;
  for (const auto& e : fixed.instances) a.insert(e.id);
  for (const auto& e : instance_level.instances) b.insert(e.id);
  if (a != b) throw DataError("reports cover different instance sets");
  auto ratio = [](double num, double den) -> std::optional<double> {
    if (den == 0.0) return std::nullopt;
    return num / den;
  };
  return {ratio(instance_level.mean_norm_suff, fixed.mean_norm_suff),
          ratio(instance_level.mean_norm_comp, fixed.mean_norm_comp),
          ratio(instance_level.f1_macro, fixed.f1_macro)};
}

inline std::string join_methods(const std::vector<Method>& methods, char sep = '+') {
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) out += sep;
    out += to_string(methods[i]);
  }
  return out;
}

namespace detail {
inline void check_removal_order(const SelectionConfig& cfg, const std::vector<Method>& removal_order) {
  auto a = cfg.scorers, b = removal_order;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b || std::adjacent_find(a.begin(), a.end()) != a.end())
    throw UsageError("removal order must be a permutation of the configured scorers");
}
}  // namespace detail

// Runs select_all with the full scorer set and then with scorers removed one
// at a time in `removal_order`, giving one report per set (sizes M..1).
// `scores[i]` holds precomputed scores for dataset[i], at least one entry
// per configured scorer.
inline std::vector<FaithfulnessReport> ablate_scorers(
    const ModelParams& params, const std::vector<EncodedInstance>& dataset, const SelectionConfig& cfg,
    const std::vector<Method>& removal_order, const std::vector<std::vector<ImportanceScores>>& scores,
    F1Gold gold = F1Gold::model_prediction, std::size_t workers = 1) {
  validate(cfg);
  detail::check_removal_order(cfg, removal_order);
  if (scores.size() != dataset.size()) throw UsageError("expected scores for every instance");
  SelectionConfig step = cfg;
  step.scorer_mode = Mode::instance_level;

  std::vector<FaithfulnessReport> reports;
  std::vector<Method> current = cfg.scorers;
  for (std::size_t removed = 0; removed < removal_order.size(); ++removed) {
    if (removed > 0) std::erase(current, removal_order[removed - 1]);
    step.scorers = current;
    std::vector<InstanceEval> evals(dataset.size());
    parallel_for(dataset.size(), workers, [&](std::size_t i) {
      std::vector<ImportanceScores> subset;
      for (auto m : current) {
        auto it = std::find_if(scores[i].begin(), scores[i].end(),
                               [m](const ImportanceScores& s) { return s.method == m; });
        if (it == scores[i].end())
          throw UsageError("missing " + std::string(to_string(m)) + " scores for instance '" +
                           dataset[i].id + "'");
        subset.push_back(*it);
      }
      evals[i] = evaluate_instance(params, dataset[i], select_all(params, dataset[i], step, subset));
    });
    reports.push_back(aggregate("ablation:" + join_methods(current), std::move(evals), dataset, gold));
  }
  return reports;
}

inline std::vector<FaithfulnessReport> ablate_scorers(const ModelParams& params,
                                                      const std::vector<EncodedInstance>& dataset,
                                                      const SelectionConfig& cfg,
                                                      const std::vector<Method>& removal_order,
                                                      F1Gold gold = F1Gold::model_prediction,
                                                      std::size_t workers = 1) {
  validate(cfg);
  detail::check_removal_order(cfg, removal_order);
  SelectionConfig full = cfg;
  full.scorer_mode = Mode::instance_level;
  std::vector<std::vector<ImportanceScores>> scores(dataset.size());
  parallel_for(dataset.size(), workers,
               [&](std::size_t i) { scores[i] = compute_scores(params, dataset[i], full); });
  return ablate_scorers(params, dataset, cfg, removal_order, scores, gold, workers);
}

}  // namespace isr
