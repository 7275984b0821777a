#pragma once

// Rationale extraction and instance-level selection of scoring method,
// rationale length and rationale type by maximising the divergence between
// the full-input output and the output with the candidate rationale masked.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "isr/divergence.hpp"
#include "isr/error.hpp"
#include "isr/model.hpp"
#include "isr/scorers.hpp"

namespace isr {

enum class RationaleType { topk, contiguous };

inline std::string_view to_string(RationaleType t) {
  return t == RationaleType::topk ? "topk" : "contiguous";
}

inline RationaleType parse_rationale_type(std::string_view name) {
  if (name == "topk") return RationaleType::topk;
  if (name == "contiguous") return RationaleType::contiguous;
  throw UsageError("unknown rationale type '" + std::string(name) + "' (expected topk | contiguous)");
}

struct Rationale {
  std::string id;
  RationaleType type = RationaleType::topk;
  std::vector<std::size_t> positions;  // ascending
  std::size_t k = 0;
  Method scorer = Method::rand;
  double delta = 0.0;
};

enum class Mode { fixed, instance_level };

inline Mode parse_mode(std::string_view name) {
  if (name == "fixed") return Mode::fixed;
  if (name == "instance" || name == "instance_level") return Mode::instance_level;
  throw UsageError("unknown mode '" + std::string(name) + "' (expected fixed | instance)");
}

inline std::string_view to_string(Mode m) { return m == Mode::fixed ? "fixed" : "instance"; }

struct SelectionConfig {
  // With scorer_mode == fixed only the first entry is used.
  std::vector<Method> scorers{Method::attention};
  Mode scorer_mode = Mode::fixed;
  Mode length_mode = Mode::fixed;
  Mode type_mode = Mode::fixed;
  RationaleType fixed_type = RationaleType::topk;
  double ratio = 0.2;  // N, upper bound on k as a fraction of T
  double skip = 0.0;   // length search step as a fraction of T; 0 = every token
  Divergence divergence = Divergence::jsd;
  // Stop a length sweep once delta_k - max(previous deltas) < threshold.
  // Off unless set; this variant tends to stop too early.
  std::optional<double> early_stop_threshold;
  ScorerOptions scorer_options;

  std::vector<Method> active_scorers() const {
    if (scorer_mode == Mode::fixed) return {scorers.front()};
    return scorers;
  }
  std::vector<RationaleType> active_types() const {
    if (type_mode == Mode::fixed) return {fixed_type};
    return {RationaleType::topk, RationaleType::contiguous};
  }
};

inline void validate(const SelectionConfig& cfg) {
  if (cfg.scorers.empty()) throw UsageError("scorer list must not be empty");
  if (!(cfg.ratio > 0.0 && cfg.ratio <= 1.0)) throw UsageError("rationale ratio must be in (0, 1]");
  if (!(cfg.skip >= 0.0 && cfg.skip < cfg.ratio)) throw UsageError("skip must satisfy 0 <= skip < ratio");
}

// N_t = max(1, round(N * T))
inline std::size_t max_rationale_length(std::size_t length, double ratio) {
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length)));
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(length, 1));
}

inline std::size_t skip_step(std::size_t length, double skip) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(skip * static_cast<double>(length))));
}

// {1, 1+step, 1+2*step, ...} within [1, N_t], plus N_t itself.
inline std::vector<std::size_t> candidate_lengths(std::size_t length, const SelectionConfig& cfg) {
  const std::size_t upper = max_rationale_length(length, cfg.ratio);
  if (cfg.length_mode == Mode::fixed) return {upper};
  const std::size_t step = skip_step(length, cfg.skip);
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k <= upper; k += step) ks.push_back(k);
  if (ks.back() != upper) ks.push_back(upper);
  return ks;
}

// Number of candidate rationales evaluated by select_all (without early
// stopping). The search also needs one reference pass.
inline std::size_t grid_size(std::size_t length, const SelectionConfig& cfg) {
  return cfg.active_scorers().size() * candidate_lengths(length, cfg).size() *
         cfg.active_types().size();
}

namespace detail {
inline void check_k(std::size_t k, std::size_t length) {
  if (k < 1 || k > length)
    throw UsageError("rationale length " + std::to_string(k) + " outside [1, " + std::to_string(length) + "]");
}
}  // namespace detail

// The k highest-scored positions; ties go to the lower index.
inline Rationale extract_topk(const ImportanceScores& scores, std::size_t k) {
  const auto& w = scores.omega;
  detail::check_k(k, w.size());
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&w](auto a, auto b) { return w[a] > w[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return {{}, RationaleType::topk, std::move(order), k, scores.method, 0.0};
}

// The length-k window with the largest total score; ties go to the leftmost
// window. Window sums are accumulated left to right from scratch so equal
// windows compare equal.
inline Rationale extract_contiguous(const ImportanceScores& scores, std::size_t k) {
  const auto& w = scores.omega;
  detail::check_k(k, w.size());
  std::size_t best_start = 0;
  double best_sum = -std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start + k <= w.size(); ++start) {
    double sum = 0.0;
    for (std::size_t t = start; t < start + k; ++t) sum += w[t];
    if (sum > best_sum) {
      best_sum = sum;
      best_start = start;
    }
  }
  std::vector<std::size_t> positions(k);
  std::iota(positions.begin(), positions.end(), best_start);
  return {{}, RationaleType::contiguous, std::move(positions), k, scores.method, 0.0};
}

inline Rationale extract(RationaleType type, const ImportanceScores& scores, std::size_t k) {
  return type == RationaleType::topk ? extract_topk(scores, k) : extract_contiguous(scores, k);
}

// delta between the reference prediction and the prediction with the
// rationale masked. For classdiff the target is the reference argmax.
inline double candidate_delta(const ModelParams& params, const EncodedInstance& inst,
                              const Prediction& reference, const Rationale& rationale,
                              Divergence metric) {
  const auto masked = forward(params, inst, MaskSet(rationale.positions));
  const double delta = divergence(metric, reference.probs, masked.probs, reference.predicted_class);
  if (!std::isfinite(delta))
    throw NumericError("non-finite divergence for instance '" + inst.id + "'");
  return delta;
}

inline double candidate_delta(const ModelParams& params, const EncodedInstance& inst,
                              const Rationale& rationale, Divergence metric) {
  return candidate_delta(params, inst, forward(params, inst), rationale, metric);
}

// Importance scores for every active scorer, in config order.
inline std::vector<ImportanceScores> compute_scores(const ModelParams& params, const EncodedInstance& inst,
                                                    const SelectionConfig& cfg) {
  std::vector<ImportanceScores> out;
  for (auto m : cfg.active_scorers()) out.push_back(score(m, params, inst, cfg.scorer_options));
  return out;
}

namespace detail {

struct Candidate {
  Rationale rationale;
  std::size_t scorer_rank = 0;
};

// Larger delta wins; then smaller k, TopK before Contiguous, config order.
inline bool better(const Candidate& a, const Candidate& b) {
  if (a.rationale.delta != b.rationale.delta) return a.rationale.delta > b.rationale.delta;
  if (a.rationale.k != b.rationale.k) return a.rationale.k < b.rationale.k;
  if (a.rationale.type != b.rationale.type) return a.rationale.type == RationaleType::topk;
  return a.scorer_rank < b.scorer_rank;
}

}  // namespace detail

// Searches the grid scorers x lengths x types (each axis collapsed to its
// fixed value unless instance-level) for the rationale with the largest
// delta. `scores` holds one entry per active scorer, in config order.
// Costs one reference pass plus one pass per candidate.
inline Rationale select_all(const ModelParams& params, const EncodedInstance& inst,
                            const SelectionConfig& cfg, const std::vector<ImportanceScores>& scores) {
  validate(cfg);
  const auto scorers = cfg.active_scorers();
  if (scores.size() != scorers.size())
    throw UsageError("expected one score vector per active scorer");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i].omega.size() != inst.length())
      throw UsageError("score vector length does not match instance '" + inst.id + "'");

  const auto reference = forward(params, inst);
  const auto lengths = candidate_lengths(inst.length(), cfg);
  std::optional<detail::Candidate> best;
  auto offer = [&best](detail::Candidate c) {
    if (!best || detail::better(c, *best)) best = std::move(c);
  };

  for (std::size_t s = 0; s < scores.size(); ++s) {
    for (auto type : cfg.active_types()) {
      double line_max = -std::numeric_limits<double>::infinity();
      for (std::size_t li = 0; li < lengths.size(); ++li) {
        detail::Candidate c{extract(type, scores[s], lengths[li]), s};
        c.rationale.delta = candidate_delta(params, inst, reference, c.rationale, cfg.divergence);
        const double gain = c.rationale.delta - line_max;
        line_max = std::max(line_max, c.rationale.delta);
        offer(std::move(c));
        if (cfg.early_stop_threshold && li > 0 && gain < *cfg.early_stop_threshold) break;
      }
    }
  }
  Rationale out = std::move(best->rationale);
  out.id = inst.id;
  return out;
}

inline Rationale select_all(const ModelParams& params, const EncodedInstance& inst,
                            const SelectionConfig& cfg) {
  validate(cfg);
  return select_all(params, inst, cfg, compute_scores(params, inst, cfg));
}

// Picks the scoring method per instance at a fixed length N_t and fixed type.
inline Rationale select_scorer(const ModelParams& params, const EncodedInstance& inst,
                               const SelectionConfig& cfg) {
  if (cfg.scorer_mode != Mode::instance_level || cfg.length_mode != Mode::fixed ||
      cfg.type_mode != Mode::fixed)
    throw UsageError("select_scorer expects instance-level scorer with fixed length and type");
  return select_all(params, inst, cfg);
}

// Picks the rationale length per instance for one score vector and a fixed
// type.
inline Rationale select_length(const ModelParams& params, const EncodedInstance& inst,
                               const ImportanceScores& omega, const SelectionConfig& cfg) {
  if (cfg.length_mode != Mode::instance_level || cfg.type_mode != Mode::fixed)
    throw UsageError("select_length expects instance-level length with a fixed type");
  SelectionConfig single = cfg;
  single.scorer_mode = Mode::fixed;
  single.scorers = {omega.method};
  return select_all(params, inst, single, {omega});
}

// {"id", "type", "scorer", "k", "positions", "delta", "divergence"} record.
inline nlohmann::json rationale_json(const Rationale& r, Divergence metric) {
  return {{"id", r.id},
          {"type", std::string(to_string(r.type))},
          {"scorer", std::string(to_string(r.scorer))},
          {"k", r.k},
          {"positions", r.positions},
          {"delta", r.delta},
          {"divergence", std::string(to_string(metric))}};
}

}  // namespace isr
