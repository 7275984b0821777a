#pragma once

// Per-token importance scores. Every scorer returns a length-T vector of
// finite, non-negative values; signed attributions are reduced with |.|.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isr/corpus.hpp"
#include "isr/error.hpp"
#include "isr/matrix.hpp"
#include "isr/model.hpp"
#include "isr/random.hpp"

namespace isr {

enum class Method { rand, attention, scaled_attention, input_x_grad, ig, deeplift, lime };

inline constexpr Method kAllMethods[] = {Method::rand,         Method::attention, Method::scaled_attention,
                                         Method::input_x_grad, Method::ig,        Method::deeplift,
                                         Method::lime};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::rand: return "rand";
    case Method::attention: return "attention";
    case Method::scaled_attention: return "scaled_attention";
    case Method::input_x_grad: return "input_x_grad";
    case Method::ig: return "ig";
    case Method::deeplift: return "deeplift";
    case Method::lime: return "lime";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (auto m : kAllMethods)
    if (to_string(m) == name) return m;
  throw UsageError("unknown scoring method '" + std::string(name) + "'");
}

struct ImportanceScores {
  Method method = Method::rand;
  std::vector<double> omega;
};

struct ScorerOptions {
  std::size_t ig_steps = 50;
  std::size_t lime_samples = 500;
  double lime_ridge = 1.0;
  double lime_kernel_width = 0.25;
  std::uint64_t seed = 0;
};

namespace detail {
inline std::vector<double> absolute(std::vector<double> v) {
  for (auto& x : v) x = std::abs(x);
  return v;
}
}  // namespace detail

// Seeded uniform [0,1) scores; the stream depends on (seed, instance id).
inline ImportanceScores score_random(const EncodedInstance& inst, std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a(inst.id)));
  ImportanceScores s{Method::rand, std::vector<double>(inst.length())};
  for (auto& x : s.omega) x = rng.uniform();
  return s;
}

inline ImportanceScores score_attention(const ModelParams& params, const EncodedInstance& inst) {
  return {Method::attention, forward(params, inst).attention};
}

// |alpha_t * d p(y_hat) / d alpha_t|
inline ImportanceScores score_scaled_attention(const ModelParams& params, const EncodedInstance& inst) {
  const auto x = embed(params, inst);
  const auto trace = trace_embeddings(params, x);
  const auto y_hat = detail::argmax(trace.probs);
  const auto grads = backprop(params, trace, probability_logit_gradient(trace.probs, y_hat));
  ImportanceScores s{Method::scaled_attention, std::vector<double>(inst.length())};
  for (std::size_t t = 0; t < s.omega.size(); ++t)
    s.omega[t] = std::abs(trace.attention[t] * grads.d_attention[t]);
  return s;
}

// Signed per-token dot products x_t . g_t.
inline std::vector<double> input_times_gradient(const Matrix& inputs, const Matrix& gradients) {
  std::vector<double> out(inputs.rows());
  for (std::size_t t = 0; t < inputs.rows(); ++t) out[t] = dot(inputs.row(t), gradients.row(t));
  return out;
}

inline ImportanceScores score_input_x_grad(const ModelParams& params, const EncodedInstance& inst) {
  const auto x = embed(params, inst);
  const auto y_hat = forward_embeddings(params, x).predicted_class;
  const auto grads = backward_embeddings(params, x, y_hat);
  return {Method::input_x_grad, detail::absolute(input_times_gradient(x, grads.d_embeddings))};
}

// Integrated gradients from the zero baseline with a midpoint Riemann sum.
// `gradient_at(point)` returns the T x d gradient of the explained output at
// `point`. Returns signed per-token attributions.
template <typename GradientFn>
std::vector<double> integrated_gradients(const Matrix& inputs, std::size_t steps,
                                         GradientFn&& gradient_at) {
  if (steps < 1) throw UsageError("integrated gradients needs steps >= 1");
  Matrix avg(inputs.rows(), inputs.cols());
  Matrix point(inputs.rows(), inputs.cols());
  for (std::size_t s = 1; s <= steps; ++s) {
    const double scale = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < inputs.size(); ++i) point.data()[i] = scale * inputs.data()[i];
    const Matrix g = gradient_at(point);
    for (std::size_t i = 0; i < avg.size(); ++i) avg.data()[i] += g.data()[i];
  }
  for (auto& v : avg.data()) v /= static_cast<double>(steps);
  return input_times_gradient(inputs, avg);
}

inline std::vector<double> integrated_gradients_signed(const ModelParams& params,
                                                       const EncodedInstance& inst, std::size_t steps,
                                                       std::size_t target) {
  return integrated_gradients(embed(params, inst), steps, [&](const Matrix& point) {
    return backward_embeddings(params, point, target).d_embeddings;
  });
}

inline ImportanceScores score_integrated_gradients(const ModelParams& params,
                                                   const EncodedInstance& inst, std::size_t steps = 50) {
  const auto y_hat = forward(params, inst).predicted_class;
  return {Method::ig, detail::absolute(integrated_gradients_signed(params, inst, steps, y_hat))};
}

// DeepLift Rescale multiplier: delta_out / delta_in, or the local gradient
// when |delta_in| is below 1e-9.
inline double rescale_multiplier(double delta_out, double delta_in, double local_gradient) {
  return std::abs(delta_in) < 1e-9 ? local_gradient : delta_out / delta_in;
}

enum class DeepLiftOutput { probability, logit };

// DeepLift contributions (T x d) to the chosen output of class `target`,
// relative to the all-zero reference input. Attention weights are frozen at
// their values for the actual input, so the explained path is
// c = sum alpha_t h_t -> U c + b -> ReLU -> O z + b2 [-> softmax].
// Linear rule on affine maps, Rescale on ReLU units and on the softmax
// output (treated as a function of its own logit).
inline Matrix deeplift_contributions(const ModelParams& params, const Matrix& inputs,
                                     std::size_t target,
                                     DeepLiftOutput output = DeepLiftOutput::probability) {
  if (target >= params.num_classes()) throw UsageError("target class out of range");
  const auto actual = trace_embeddings(params, inputs);

  ForwardTrace ref;
  ref.inputs = Matrix(inputs.rows(), inputs.cols());
  ref.attention = actual.attention;
  run_head(params, ref);

  const std::size_t H = params.hidden_dim();
  std::vector<double> m_logits(params.num_classes(), 0.0);
  if (output == DeepLiftOutput::probability) {
    const double p = actual.probs[target];
    m_logits[target] = rescale_multiplier(p - ref.probs[target],
                                          actual.logits[target] - ref.logits[target], p * (1.0 - p));
  } else {
    m_logits[target] = 1.0;
  }
  std::vector<double> m_hidden(H);
  matvec_transposed(params.output, m_logits, m_hidden);
  for (std::size_t i = 0; i < H; ++i) {
    const double local = actual.pre_hidden[i] > 0.0 ? 1.0 : 0.0;
    m_hidden[i] *= rescale_multiplier(actual.hidden[i] - ref.hidden[i],
                                      actual.pre_hidden[i] - ref.pre_hidden[i], local);
  }
  std::vector<double> m_context(params.embed_dim());
  matvec_transposed(params.hidden, m_hidden, m_context);

  Matrix contrib(inputs.rows(), inputs.cols());
  for (std::size_t t = 0; t < inputs.rows(); ++t)
    for (std::size_t k = 0; k < inputs.cols(); ++k)
      contrib(t, k) = inputs(t, k) * actual.attention[t] * m_context[k];
  return contrib;
}

inline std::vector<double> deeplift_signed(const ModelParams& params, const EncodedInstance& inst,
                                           std::size_t target,
                                           DeepLiftOutput output = DeepLiftOutput::probability) {
  const auto contrib = deeplift_contributions(params, embed(params, inst), target, output);
  std::vector<double> out(contrib.rows(), 0.0);
  for (std::size_t t = 0; t < contrib.rows(); ++t)
    for (double c : contrib.row(t)) out[t] += c;
  return out;
}

inline ImportanceScores score_deeplift(const ModelParams& params, const EncodedInstance& inst) {
  const auto y_hat = forward(params, inst).predicted_class;
  return {Method::deeplift, detail::absolute(deeplift_signed(params, inst, y_hat))};
}

// Fits a weighted ridge surrogate of `query(keep)` on binary keep-indicators.
// Each of `n_samples` masks keeps a position with probability 0.5; sample
// weight is exp(-z^2 / width^2) with z the masked fraction. The intercept is
// not penalised. Returns the T signed coefficients.
inline std::vector<double> lime_coefficients(
    std::size_t length, const ScorerOptions& opts, std::uint64_t seed,
    const std::function<double(std::span<const std::uint8_t>)>& query) {
  const std::size_t n = opts.lime_samples;
  if (n < 10) throw UsageError("LIME needs at least 10 samples");
  if (length == 0) throw UsageError("LIME needs a non-empty sequence");
  Rng rng(seed);
  const auto T = static_cast<Eigen::Index>(length);
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), T + 1);
  Eigen::VectorXd target(static_cast<Eigen::Index>(n));
  Eigen::VectorXd weight(static_cast<Eigen::Index>(n));
  std::vector<std::uint8_t> keep(length);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t masked = 0;
    for (std::size_t t = 0; t < length; ++t) {
      keep[t] = rng.coin() ? 1 : 0;
      masked += keep[t] == 0;
    }
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t t = 0; t < length; ++t) design(row, static_cast<Eigen::Index>(t)) = keep[t];
    design(row, T) = 1.0;
    const double z = static_cast<double>(masked) / static_cast<double>(length);
    weight(row) = std::exp(-(z * z) / (opts.lime_kernel_width * opts.lime_kernel_width));
    target(row) = query(keep);
  }
  bool degenerate = true;
  for (Eigen::Index i = 1; i < design.rows() && degenerate; ++i)
    degenerate = design.row(i) == design.row(0);
  if (degenerate)
    throw UsageError("LIME design is degenerate (all sampled masks identical); increase lime_samples");

  Eigen::MatrixXd gram = design.transpose() * weight.asDiagonal() * design;
  for (Eigen::Index t = 0; t < T; ++t) gram(t, t) += opts.lime_ridge;
  const Eigen::VectorXd rhs = design.transpose() * (weight.array() * target.array()).matrix();
  const Eigen::VectorXd beta = gram.ldlt().solve(rhs);
  std::vector<double> out(length);
  for (std::size_t t = 0; t < length; ++t) out[t] = beta(static_cast<Eigen::Index>(t));
  return out;
}

inline ImportanceScores score_lime(const ModelParams& params, const EncodedInstance& inst,
                                   const ScorerOptions& opts) {
  const auto y_hat = forward(params, inst).predicted_class;
  const auto coef = lime_coefficients(
      inst.length(), opts, mix_seed(opts.seed, fnv1a(inst.id)),
      [&](std::span<const std::uint8_t> keep) {
        std::vector<std::size_t> dropped;
        for (std::size_t t = 0; t < keep.size(); ++t)
          if (!keep[t]) dropped.push_back(t);
        return forward(params, inst, MaskSet(std::move(dropped))).probs[y_hat];
      });
  return {Method::lime, detail::absolute(coef)};
}

inline ImportanceScores score(Method method, const ModelParams& params, const EncodedInstance& inst,
                              const ScorerOptions& opts) {
  switch (method) {
    case Method::rand: return score_random(inst, opts.seed);
    case Method::attention: return score_attention(params, inst);
    case Method::scaled_attention: return score_scaled_attention(params, inst);
    case Method::input_x_grad: return score_input_x_grad(params, inst);
    case Method::ig: return score_integrated_gradients(params, inst, opts.ig_steps);
    case Method::deeplift: return score_deeplift(params, inst);
    case Method::lime: return score_lime(params, inst, opts);
  }
  throw UsageError("unknown scoring method");
}

// {"id", "method", "omega"} record.
inline std::string scores_record(const std::string& id, const ImportanceScores& s) {
  nlohmann::json record = {{"id", id}, {"method", std::string(to_string(s.method))}, {"omega", s.omega}};
  return record.dump();
}

}  // namespace isr
