#pragma once

// Slow reference implementations used to cross-check the fast paths:
// exhaustive grid selection, occlusion importance and finite-difference
// gradients. Nothing here calls into selection or the model's backward
// pass.

#include <cmath>
#include <string>
#include <vector>

#include "isr/divergence.hpp"
#include "isr/error.hpp"
#include "isr/model.hpp"
#include "isr/scorers.hpp"
#include "isr/selection.hpp"

namespace isr::oracle {

inline constexpr std::size_t kMaxBruteForceLength = 64;

// Tie preferences; the defaults mirror the documented selection rules.
struct TieRule {
  bool shorter_first = true;
  bool topk_first = true;
};

namespace detail {

inline std::vector<std::size_t> topk_by_repeated_max(const std::vector<double>& w, std::size_t k) {
  std::vector<bool> taken(w.size(), false);
  std::vector<std::size_t> picked;
  for (std::size_t round = 0; round < k; ++round) {
    std::size_t arg = w.size();
    for (std::size_t t = 0; t < w.size(); ++t) {
      if (taken[t]) continue;
      if (arg == w.size() || w[t] > w[arg]) arg = t;
    }
    taken[arg] = true;
    picked.push_back(arg);
  }
  std::vector<std::size_t> sorted;
  for (std::size_t t = 0; t < w.size(); ++t)
    if (taken[t]) sorted.push_back(t);
  return sorted;
}

inline std::vector<std::size_t> best_window(const std::vector<double>& w, std::size_t k) {
  std::size_t arg = 0;
  double best = 0.0;
  for (std::size_t start = 0; start + k <= w.size(); ++start) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += w[start + j];
    if (start == 0 || s > best) {
      best = s;
      arg = start;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(arg + j);
  return out;
}

}  // namespace detail

// Exhaustive search over the full grid (every length from 1 to N_t when the
// length is instance-level, skip ignored). `scores` holds one entry per
// active scorer in config order.
inline Rationale brute_force_select(const ModelParams& params, const EncodedInstance& inst,
                                    const SelectionConfig& cfg, const std::vector<ImportanceScores>& scores,
                                    TieRule tie = {}) {
  const std::size_t T = inst.length();
  if (T > kMaxBruteForceLength)
    throw UsageError("brute-force selection is limited to sequences of at most 64 tokens");
  long upper = std::lround(cfg.ratio * static_cast<double>(T));
  if (upper < 1) upper = 1;
  std::vector<std::size_t> ks;
  if (cfg.length_mode == Mode::instance_level) {
    for (long k = 1; k <= upper; ++k) ks.push_back(static_cast<std::size_t>(k));
  } else {
    ks.push_back(static_cast<std::size_t>(upper));
  }
  std::vector<RationaleType> types;
  if (cfg.type_mode == Mode::instance_level) {
    types = {RationaleType::topk, RationaleType::contiguous};
  } else {
    types = {cfg.fixed_type};
  }
  const std::size_t n_scorers = cfg.scorer_mode == Mode::instance_level ? cfg.scorers.size() : 1;
  if (scores.size() != n_scorers) throw UsageError("expected one score vector per active scorer");

  const auto ref = forward(params, inst);
  bool have = false;
  Rationale best;
  std::size_t best_scorer = 0;
  for (std::size_t s = 0; s < n_scorers; ++s) {
    for (auto type : types) {
      for (auto k : ks) {
        auto positions = type == RationaleType::topk ? detail::topk_by_repeated_max(scores[s].omega, k)
                                                     : detail::best_window(scores[s].omega, k);
        const auto masked = forward(params, inst, MaskSet(positions));
        const double delta = divergence(cfg.divergence, ref.probs, masked.probs, ref.predicted_class);
        bool take = !have || delta > best.delta;
        if (have && delta == best.delta) {
          if (k != best.k) {
            take = tie.shorter_first ? k < best.k : k > best.k;
          } else if (type != best.type) {
            take = (type == RationaleType::topk) == tie.topk_first;
          } else {
            take = s < best_scorer;
          }
        }
        if (take) {
          have = true;
          best = Rationale{inst.id, type, std::move(positions), k, scores[s].method, delta};
          best_scorer = s;
        }
      }
    }
  }
  return best;
}

inline Rationale brute_force_select(const ModelParams& params, const EncodedInstance& inst,
                                    const SelectionConfig& cfg, TieRule tie = {}) {
  std::vector<ImportanceScores> scores;
  if (cfg.scorer_mode == Mode::instance_level) {
    for (auto m : cfg.scorers) scores.push_back(score(m, params, inst, cfg.scorer_options));
  } else {
    scores.push_back(score(cfg.scorers.at(0), params, inst, cfg.scorer_options));
  }
  return brute_force_select(params, inst, cfg, scores, tie);
}

// omega_t = max(0, p(y|x) - p(y|x with t masked)). Exactly T model passes
// given the reference prediction.
inline ImportanceScores occlusion_scores(const ModelParams& params, const EncodedInstance& inst,
                                         const Prediction& reference) {
  const auto y = reference.predicted_class;
  ImportanceScores out{Method::rand, std::vector<double>(inst.length())};
  for (std::size_t t = 0; t < inst.length(); ++t) {
    const auto masked = forward(params, inst, MaskSet{t});
    out.omega[t] = std::max(0.0, reference.probs[y] - masked.probs[y]);
  }
  return out;
}

inline ImportanceScores occlusion_scores(const ModelParams& params, const EncodedInstance& inst) {
  return occlusion_scores(params, inst, forward(params, inst));
}

// Central differences of p(target) per embedding coordinate and per
// attention weight (attention perturbed directly, inputs held fixed).
// Masked positions get zero rows.
inline GradientBundle finite_difference_grad(const ModelParams& params, const EncodedInstance& inst,
                                             std::size_t target, double step, const MaskSet& mask = {}) {
  if (!(step > 0.0 && step <= 1e-2)) throw UsageError("finite-difference step must be in (0, 1e-2]");
  if (target >= params.num_classes()) throw UsageError("target class out of range");
  Matrix x = embed(params, inst, mask);
  const std::size_t T = x.rows(), d = x.cols();
  GradientBundle out{Matrix(T, d), std::vector<double>(T)};
  for (std::size_t t = 0; t < T; ++t) {
    if (mask.contains(t)) continue;
    for (std::size_t k = 0; k < d; ++k) {
      const double orig = x(t, k);
      x(t, k) = orig + step;
      const double up = forward_embeddings(params, x).probs[target];
      x(t, k) = orig - step;
      const double down = forward_embeddings(params, x).probs[target];
      x(t, k) = orig;
      out.d_embeddings(t, k) = (up - down) / (2.0 * step);
    }
  }
  auto alpha = forward_embeddings(params, x).attention;
  for (std::size_t t = 0; t < T; ++t) {
    const double orig = alpha[t];
    alpha[t] = orig + step;
    const double up = forward_with_attention(params, x, alpha)[target];
    alpha[t] = orig - step;
    const double down = forward_with_attention(params, x, alpha)[target];
    alpha[t] = orig;
    out.d_attention[t] = (up - down) / (2.0 * step);
  }
  return out;
}

}  // namespace isr::oracle
