#pragma once

// Attention-over-embeddings text classifier with exact forward/backward
// passes and zero-embedding masking.
//
//   h_t = E[token_t]            (zero vector when t is masked)
//   s_t = v . tanh(W h_t)
//   alpha = softmax(s)
//   c = sum_t alpha_t h_t
//   z = ReLU(U c + b)
//   logits = O z + b2,  probs = softmax(logits)

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "isr/corpus.hpp"
#include "isr/error.hpp"
#include "isr/matrix.hpp"
#include "isr/random.hpp"

namespace isr {

struct ModelParams {
  Matrix embedding;                 // V x d
  Matrix attn_proj;                 // d x d
  std::vector<double> attn_vector;  // d
  Matrix hidden;                    // h x d
  std::vector<double> hidden_bias;  // h
  Matrix output;                    // C x h
  std::vector<double> output_bias;  // C
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return embedding.rows(); }
  std::size_t embed_dim() const { return embedding.cols(); }
  std::size_t hidden_dim() const { return hidden.rows(); }
  std::size_t num_classes() const { return output.rows(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Positions whose embeddings are replaced by the zero vector. Kept sorted
// and unique.
class MaskSet {
 public:
  MaskSet() = default;
  MaskSet(std::initializer_list<std::size_t> positions) : MaskSet(std::vector(positions)) {}
  explicit MaskSet(std::vector<std::size_t> positions) : positions_(std::move(positions)) {
    std::sort(positions_.begin(), positions_.end());
    positions_.erase(std::unique(positions_.begin(), positions_.end()), positions_.end());
  }

  static MaskSet all(std::size_t length) {
    std::vector<std::size_t> p(length);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return MaskSet(std::move(p));
  }

  // Every position in [0, length) not in `keep`.
  static MaskSet complement_of(std::span<const std::size_t> keep, std::size_t length) {
    std::vector<bool> kept(length, false);
    for (auto p : keep)
      if (p < length) kept[p] = true;
    std::vector<std::size_t> p;
    for (std::size_t t = 0; t < length; ++t)
      if (!kept[t]) p.push_back(t);
    return MaskSet(std::move(p));
  }

  bool empty() const { return positions_.empty(); }
  std::size_t size() const { return positions_.size(); }
  bool contains(std::size_t t) const {
    return std::binary_search(positions_.begin(), positions_.end(), t);
  }
  const std::vector<std::size_t>& positions() const { return positions_; }

 private:
  std::vector<std::size_t> positions_;
};

struct Prediction {
  std::vector<double> probs;
  std::vector<double> attention;
  std::vector<double> logits;
  std::size_t predicted_class = 0;
};

struct GradientBundle {
  Matrix d_embeddings;               // T x d, d p(target) / d h_{t,k}
  std::vector<double> d_attention;   // T, d p(target) / d alpha_t
};

// Every network evaluation (forward, and the forward half of backward)
// increments this counter. Used for search-cost accounting.
inline std::atomic<std::uint64_t>& forward_pass_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
inline std::uint64_t forward_pass_count() { return forward_pass_counter().load(); }
inline void reset_forward_pass_count() { forward_pass_counter().store(0); }

namespace detail {

inline void softmax_inplace(std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Intermediate activations of one evaluation, kept for backpropagation.
struct ForwardTrace {
  Matrix inputs;       // T x d
  Matrix activations;  // T x d, tanh(W h_t)
  std::vector<double> attention;
  std::vector<double> context;
  std::vector<double> pre_hidden;
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> probs;
};

// Head of the network given attention weights (which need not come from the
// scoring layer). Fills context..probs of `trace`.
inline void run_head(const ModelParams& params, ForwardTrace& trace) {
  const std::size_t T = trace.inputs.rows();
  const std::size_t d = params.embed_dim();
  trace.context.assign(d, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double a = trace.attention[t];
    auto h = trace.inputs.row(t);
    for (std::size_t k = 0; k < d; ++k) trace.context[k] += a * h[k];
  }
  trace.pre_hidden.assign(params.hidden_dim(), 0.0);
  matvec(params.hidden, trace.context, trace.pre_hidden);
  trace.hidden.resize(params.hidden_dim());
  for (std::size_t i = 0; i < params.hidden_dim(); ++i) {
    trace.pre_hidden[i] += params.hidden_bias[i];
    trace.hidden[i] = trace.pre_hidden[i] > 0.0 ? trace.pre_hidden[i] : 0.0;
  }
  trace.logits.assign(params.num_classes(), 0.0);
  matvec(params.output, trace.hidden, trace.logits);
  for (std::size_t c = 0; c < params.num_classes(); ++c) trace.logits[c] += params.output_bias[c];
  trace.probs = trace.logits;
  detail::softmax_inplace(trace.probs);
}

inline ForwardTrace trace_embeddings(const ModelParams& params, const Matrix& inputs) {
  if (inputs.rows() == 0) throw UsageError("cannot run the model on an empty sequence");
  if (inputs.cols() != params.embed_dim()) throw UsageError("embedding width mismatch");
  forward_pass_counter().fetch_add(1, std::memory_order_relaxed);
  const std::size_t T = inputs.rows();
  const std::size_t d = params.embed_dim();
  ForwardTrace trace;
  trace.inputs = inputs;
  trace.activations = Matrix(T, d);
  trace.attention.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto act = trace.activations.row(t);
    matvec(params.attn_proj, inputs.row(t), act);
    for (auto& a : act) a = std::tanh(a);
    trace.attention[t] = dot(params.attn_vector, act);
  }
  detail::softmax_inplace(trace.attention);
  run_head(params, trace);
  return trace;
}

// Evaluates the head with externally supplied attention weights.
inline std::vector<double> forward_with_attention(const ModelParams& params, const Matrix& inputs,
                                                  std::span<const double> attention) {
  if (attention.size() != inputs.rows()) throw UsageError("attention length mismatch");
  forward_pass_counter().fetch_add(1, std::memory_order_relaxed);
  ForwardTrace trace;
  trace.inputs = inputs;
  trace.attention.assign(attention.begin(), attention.end());
  run_head(params, trace);
  return trace.probs;
}

inline void check_mask(const MaskSet& mask, std::size_t length) {
  if (!mask.empty() && mask.positions().back() >= length)
    throw UsageError("mask position " + std::to_string(mask.positions().back()) +
                     " out of range for sequence of length " + std::to_string(length));
}

// Embedding rows for the instance, zeroed at masked positions.
inline Matrix embed(const ModelParams& params, const EncodedInstance& inst,
                    const MaskSet& mask = {}) {
  const std::size_t T = inst.length();
  check_mask(mask, T);
  Matrix x(T, params.embed_dim());
  for (std::size_t t = 0; t < T; ++t) {
    const auto id = inst.token_ids[t];
    if (id >= params.vocab_size())
      throw UsageError("token id " + std::to_string(id) + " outside the model vocabulary");
    if (mask.contains(t)) continue;
    auto src = params.embedding.row(id);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  return x;
}

inline Prediction to_prediction(ForwardTrace&& trace) {
  Prediction p;
  p.predicted_class = detail::argmax(trace.probs);
  p.probs = std::move(trace.probs);
  p.attention = std::move(trace.attention);
  p.logits = std::move(trace.logits);
  return p;
}

inline Prediction forward_embeddings(const ModelParams& params, const Matrix& inputs) {
  return to_prediction(trace_embeddings(params, inputs));
}

inline Prediction forward(const ModelParams& params, const EncodedInstance& inst,
                          const MaskSet& mask = {}) {
  return forward_embeddings(params, embed(params, inst, mask));
}

// Parameter gradients, same layout as ModelParams.
struct ParamGrads {
  explicit ParamGrads(const ModelParams& p)
      : embedding(p.vocab_size(), p.embed_dim()),
        attn_proj(p.embed_dim(), p.embed_dim()),
        attn_vector(p.embed_dim(), 0.0),
        hidden(p.hidden_dim(), p.embed_dim()),
        hidden_bias(p.hidden_dim(), 0.0),
        output(p.num_classes(), p.hidden_dim()),
        output_bias(p.num_classes(), 0.0) {}

  Matrix embedding, attn_proj;
  std::vector<double> attn_vector;
  Matrix hidden;
  std::vector<double> hidden_bias;
  Matrix output;
  std::vector<double> output_bias;
};

// Backpropagates `grad_logits` through the network. Returns gradients with
// respect to the inputs and the attention weights; accumulates parameter
// gradients into `param_grads` when given (with `token_ids` naming the
// embedding rows that produced each unmasked input).
inline GradientBundle backprop(const ModelParams& params, const ForwardTrace& trace,
                               std::span<const double> grad_logits,
                               ParamGrads* param_grads = nullptr,
                               std::span<const TokenId> token_ids = {},
                               const MaskSet* mask = nullptr) {
  const std::size_t T = trace.inputs.rows();
  const std::size_t d = params.embed_dim();
  const std::size_t H = params.hidden_dim();

  std::vector<double> g_hidden(H);
  matvec_transposed(params.output, grad_logits, g_hidden);
  std::vector<double> g_pre(H);
  for (std::size_t i = 0; i < H; ++i) g_pre[i] = trace.pre_hidden[i] > 0.0 ? g_hidden[i] : 0.0;
  std::vector<double> g_context(d);
  matvec_transposed(params.hidden, g_pre, g_context);

  GradientBundle out{Matrix(T, d), std::vector<double>(T)};
  for (std::size_t t = 0; t < T; ++t) out.d_attention[t] = dot(g_context, trace.inputs.row(t));
  double mean_g = 0.0;
  for (std::size_t t = 0; t < T; ++t) mean_g += trace.attention[t] * out.d_attention[t];

  std::vector<double> g_act(d), g_u(d), g_h_from_u(d);
  for (std::size_t t = 0; t < T; ++t) {
    const double alpha = trace.attention[t];
    const double g_score = alpha * (out.d_attention[t] - mean_g);
    auto act = trace.activations.row(t);
    for (std::size_t k = 0; k < d; ++k) g_u[k] = g_score * params.attn_vector[k] * (1.0 - act[k] * act[k]);
    matvec_transposed(params.attn_proj, g_u, g_h_from_u);
    auto gh = out.d_embeddings.row(t);
    for (std::size_t k = 0; k < d; ++k) gh[k] = alpha * g_context[k] + g_h_from_u[k];

    if (param_grads) {
      for (std::size_t k = 0; k < d; ++k) param_grads->attn_vector[k] += g_score * act[k];
      auto h = trace.inputs.row(t);
      for (std::size_t r = 0; r < d; ++r) {
        if (g_u[r] == 0.0) continue;
        auto wr = param_grads->attn_proj.row(r);
        for (std::size_t c = 0; c < d; ++c) wr[c] += g_u[r] * h[c];
      }
      if (!token_ids.empty() && !(mask && mask->contains(t))) {
        auto er = param_grads->embedding.row(token_ids[t]);
        for (std::size_t k = 0; k < d; ++k) er[k] += gh[k];
      }
    }
  }

  if (param_grads) {
    for (std::size_t c = 0; c < params.num_classes(); ++c) {
      param_grads->output_bias[c] += grad_logits[c];
      auto orow = param_grads->output.row(c);
      for (std::size_t i = 0; i < H; ++i) orow[i] += grad_logits[c] * trace.hidden[i];
    }
    for (std::size_t i = 0; i < H; ++i) {
      param_grads->hidden_bias[i] += g_pre[i];
      auto urow = param_grads->hidden.row(i);
      for (std::size_t k = 0; k < d; ++k) urow[k] += g_pre[i] * trace.context[k];
    }
  }
  return out;
}

// d p(target) / d logits
inline std::vector<double> probability_logit_gradient(std::span<const double> probs,
                                                      std::size_t target) {
  std::vector<double> g(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c)
    g[c] = probs[target] * ((c == target ? 1.0 : 0.0) - probs[c]);
  return g;
}

// Gradients of p(target) with respect to arbitrary input embeddings.
inline GradientBundle backward_embeddings(const ModelParams& params, const Matrix& inputs,
                                          std::size_t target) {
  if (target >= params.num_classes()) throw UsageError("target class out of range");
  const auto trace = trace_embeddings(params, inputs);
  return backprop(params, trace, probability_logit_gradient(trace.probs, target));
}

// Gradients of p(target | x with `mask` applied). Masked rows are exactly
// zero since a zeroed input does not depend on its embedding.
inline GradientBundle backward(const ModelParams& params, const EncodedInstance& inst,
                               std::size_t target, const MaskSet& mask = {}) {
  auto grads = backward_embeddings(params, embed(params, inst, mask), target);
  for (auto t : mask.positions())
    for (auto& g : grads.d_embeddings.row(t)) g = 0.0;
  return grads;
}

struct TrainHyper {
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  double lr = 0.5;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t batch = 16;
};

inline ModelParams init_params(std::size_t vocab_size, std::size_t num_classes,
                               const TrainHyper& hyper) {
  if (vocab_size <= Vocab::kUnk || num_classes < 2 || hyper.embed_dim == 0 || hyper.hidden_dim == 0)
    throw UsageError("invalid model dimensions");
  const std::size_t d = hyper.embed_dim, H = hyper.hidden_dim;
  Rng rng(hyper.seed);
  auto fill = [&rng](std::vector<double>& v, double scale) {
    for (auto& x : v) x = rng.uniform(-scale, scale);
  };
  ModelParams p;
  p.seed = hyper.seed;
  p.embedding = Matrix(vocab_size, d);
  p.attn_proj = Matrix(d, d);
  p.attn_vector.assign(d, 0.0);
  p.hidden = Matrix(H, d);
  p.hidden_bias.assign(H, 0.01);
  p.output = Matrix(num_classes, H);
  p.output_bias.assign(num_classes, 0.0);
  fill(p.embedding.data(), 1.0);
  // PAD and MASK never reach the network.
  for (TokenId special : {Vocab::kPad, Vocab::kMask})
    for (auto& x : p.embedding.row(special)) x = 0.0;
  fill(p.attn_proj.data(), 1.0 / std::sqrt(static_cast<double>(d)));
  fill(p.attn_vector, 1.0 / std::sqrt(static_cast<double>(d)));
  fill(p.hidden.data(), 1.0 / std::sqrt(static_cast<double>(d)));
  fill(p.output.data(), 1.0 / std::sqrt(static_cast<double>(H)));
  return p;
}

namespace detail {
inline void sgd_step(std::vector<double>& w, const std::vector<double>& g, double scale) {
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * g[i];
}
}  // namespace detail

// Mini-batch SGD on mean cross-entropy. Deterministic given hyper.seed.
namespace detail {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const ModelParams& p) {
  return all_finite(p.embedding.data()) && all_finite(p.attn_proj.data()) && all_finite(p.attn_vector) &&
         all_finite(p.hidden.data()) && all_finite(p.hidden_bias) && all_finite(p.output.data()) &&
         all_finite(p.output_bias);
}

}  // namespace detail

inline ModelParams train(const std::vector<EncodedInstance>& dataset, std::size_t vocab_size,
                         std::size_t num_classes, const TrainHyper& hyper) {
  if (dataset.empty()) throw DataError("cannot train on an empty dataset");
  if (hyper.batch == 0) throw UsageError("batch size must be positive");
  for (const auto& inst : dataset) {
    if (inst.label >= num_classes)
      throw DataError("instance '" + inst.id + "': label out of range");
    if (inst.token_ids.empty()) throw DataError("instance '" + inst.id + "' has no tokens");
  }
  ModelParams params = init_params(vocab_size, num_classes, hyper);
  Rng shuffle_rng(mix_seed(hyper.seed, 0x5eed));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += hyper.batch, ++batch_no) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch);
      ParamGrads grads(params);
      double loss = 0.0;
      for (std::size_t j = start; j < stop; ++j) {
        const auto& inst = dataset[order[j]];
        const auto trace = trace_embeddings(params, embed(params, inst));
        const double mx = *std::max_element(trace.logits.begin(), trace.logits.end());
        double z = 0.0;
        for (double l : trace.logits) z += std::exp(l - mx);
        loss += mx + std::log(z) - trace.logits[inst.label];
        std::vector<double> g = trace.probs;
        g[inst.label] -= 1.0;
        backprop(params, trace, g, &grads, inst.token_ids);
      }
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      const double scale = hyper.lr / static_cast<double>(stop - start);
      detail::sgd_step(params.embedding.data(), grads.embedding.data(), scale);
      detail::sgd_step(params.attn_proj.data(), grads.attn_proj.data(), scale);
      detail::sgd_step(params.attn_vector, grads.attn_vector, scale);
      detail::sgd_step(params.hidden.data(), grads.hidden.data(), scale);
      detail::sgd_step(params.hidden_bias, grads.hidden_bias, scale);
      detail::sgd_step(params.output.data(), grads.output.data(), scale);
      detail::sgd_step(params.output_bias, grads.output_bias, scale);
      if (!detail::all_finite(params))
        throw NumericError("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
    }
  }
  return params;
}

inline double accuracy(const ModelParams& params, const std::vector<EncodedInstance>& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& inst : data) hits += forward(params, inst).predicted_class == inst.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Binary layout: 8-byte magic "ISRMODL1", then uint64 V, d, h, C, seed,
// then row-major doubles for E, W, v, U, b, O, b2 in that order. Native
// (little-endian) byte order.
inline constexpr char kModelMagic[8] = {'I', 'S', 'R', 'M', 'O', 'D', 'L', '1'};

inline void save_params(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model: " + path);
  out.write(kModelMagic, sizeof kModelMagic);
  const std::uint64_t header[5] = {p.vocab_size(), p.embed_dim(), p.hidden_dim(), p.num_classes(),
                                   p.seed};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  auto put = [&out](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  put(p.embedding.data());
  put(p.attn_proj.data());
  put(p.attn_vector);
  put(p.hidden.data());
  put(p.hidden_bias);
  put(p.output.data());
  put(p.output_bias);
  if (!out) throw DataError("failed writing model: " + path);
}

inline ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw DataError(path + ": not a model file");
  std::uint64_t header[5];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in) throw DataError(path + ": truncated header");
  const auto [V, d, H, C, seed] = header;
  if (V == 0 || d == 0 || H == 0 || C == 0 || V > (1u << 26) || d > 4096 || H > 4096 || C > 4096)
    throw DataError(path + ": implausible dimensions");
  ModelParams p;
  p.seed = seed;
  p.embedding = Matrix(V, d);
  p.attn_proj = Matrix(d, d);
  p.attn_vector.resize(d);
  p.hidden = Matrix(H, d);
  p.hidden_bias.resize(H);
  p.output = Matrix(C, H);
  p.output_bias.resize(C);
  auto get = [&in](std::vector<double>& v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  get(p.embedding.data());
  get(p.attn_proj.data());
  get(p.attn_vector);
  get(p.hidden.data());
  get(p.hidden_bias);
  get(p.output.data());
  get(p.output_bias);
  if (!in) throw DataError(path + ": truncated parameters");
  return p;
}

}  // namespace isr
