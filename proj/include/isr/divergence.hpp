#pragma once

// Divergences between the full-input output distribution Y and the output
// Ym obtained after masking. Natural logarithms throughout.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "isr/error.hpp"

namespace isr {

inline constexpr double kProbFloor = 1e-12;

enum class Divergence { kl, jsd, perplexity, classdiff };

inline std::string_view to_string(Divergence d) {
  switch (d) {
    case Divergence::kl: return "kl";
    case Divergence::jsd: return "jsd";
    case Divergence::perplexity: return "perplexity";
    case Divergence::classdiff: return "classdiff";
  }
  return "?";
}

inline Divergence parse_divergence(std::string_view name) {
  if (name == "kl") return Divergence::kl;
  if (name == "jsd") return Divergence::jsd;
  if (name == "perplexity") return Divergence::perplexity;
  if (name == "classdiff") return Divergence::classdiff;
  throw UsageError("unknown divergence '" + std::string(name) +
                   "' (expected kl | jsd | perplexity | classdiff)");
}

namespace detail {
inline void check_same_support(std::span<const double> y, std::span<const double> ym) {
  if (y.size() != ym.size() || y.empty()) throw UsageError("distributions must share a non-empty support");
}
}  // namespace detail

// sum_c Y_c (ln Y_c - ln Ym_c); terms with Y_c < 1e-12 are dropped and Ym is
// floored at 1e-12.
inline double kl(std::span<const double> y, std::span<const double> ym) {
  detail::check_same_support(y, ym);
  double acc = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] < kProbFloor) continue;
    acc += y[c] * (std::log(y[c]) - std::log(std::max(ym[c], kProbFloor)));
  }
  return acc;
}

inline double jsd(std::span<const double> y, std::span<const double> ym) {
  detail::check_same_support(y, ym);
  double left = 0.0, right = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    const double mu = std::max(0.5 * (y[c] + ym[c]), kProbFloor);
    if (y[c] >= kProbFloor) left += y[c] * (std::log(y[c]) - std::log(mu));
    if (ym[c] >= kProbFloor) right += ym[c] * (std::log(ym[c]) - std::log(mu));
  }
  return 0.5 * left + 0.5 * right;
}

// exp of the cross-entropy H(Y, Ym), Y taken as ground truth.
inline double perplexity(std::span<const double> y, std::span<const double> ym) {
  detail::check_same_support(y, ym);
  double h = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] == 0.0) continue;
    h -= y[c] * std::log(std::max(ym[c], kProbFloor));
  }
  return std::exp(h);
}

// Signed drop in the target class probability.
inline double class_diff(std::span<const double> y, std::span<const double> ym, std::size_t target) {
  detail::check_same_support(y, ym);
  if (target >= y.size()) throw UsageError("class_diff target out of range");
  return y[target] - ym[target];
}

inline double divergence(Divergence metric, std::span<const double> y, std::span<const double> ym,
                         std::size_t target) {
  switch (metric) {
    case Divergence::kl: return kl(y, ym);
    case Divergence::jsd: return jsd(y, ym);
    case Divergence::perplexity: return perplexity(y, ym);
    case Divergence::classdiff: return class_diff(y, ym, target);
  }
  throw UsageError("unknown divergence");
}

}  // namespace isr
