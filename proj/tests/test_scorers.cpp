#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isr/oracle.hpp"
#include "isr/scorers.hpp"
#include "isr/stats.hpp"
#include "test_util.hpp"

using namespace isr;
using isr::testing::affine_model;
using isr::testing::random_instance;
using isr::testing::random_model;
using isr::testing::rel_err;
using isr::testing::toy_world;

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::size_t> ranking(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  return idx;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& x : m.data()) x = rng.uniform(-scale, scale);
  return m;
}

// Small model with uniform attention whose logits are affine in the inputs.
ModelParams linear_logit_model(std::uint64_t seed) {
  auto e = random_matrix(12, 4, seed);
  for (std::size_t r = 0; r < 3; ++r)
    for (auto& x : e.row(r)) x = 0.0;
  return affine_model(e, random_matrix(3, 4, seed + 1, 0.5), 1.5);
}

}  // namespace

TEST(Scorers, Names) {
  for (auto m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("shap"), UsageError);
}

TEST(Scorers, AllReturnFiniteNonNegative) {
  const auto& world = toy_world();
  ScorerOptions opts;
  opts.lime_samples = 100;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& inst = world.test[i];
    for (auto m : kAllMethods) {
      const auto s = score(m, world.params, inst, opts);
      EXPECT_EQ(s.method, m);
      ASSERT_EQ(s.omega.size(), inst.length());
      for (double w : s.omega) {
        EXPECT_TRUE(std::isfinite(w));
        EXPECT_GE(w, 0.0);
      }
    }
  }
}

TEST(Random, Deterministic) {
  const auto inst = random_instance(20, 7, 1);
  EXPECT_EQ(score_random(inst, 5).omega, score_random(inst, 5).omega);
  EXPECT_NE(score_random(inst, 5).omega, score_random(inst, 6).omega);
  EXPECT_EQ(score_random(random_instance(20, 1, 1), 5).omega.size(), 1u);
  for (double w : score_random(inst, 5).omega) {
    EXPECT_GE(w, 0.0);
    EXPECT_LT(w, 1.0);
  }
}

TEST(Random, TopPositionIsUniform) {
  const auto inst = random_instance(20, 5, 1);
  std::vector<double> hits(inst.length(), 0.0);
  const int n = 10000;
  for (int seed = 0; seed < n; ++seed) hits[argmax(score_random(inst, seed).omega)] += 1.0;
  for (double h : hits) EXPECT_NEAR(h / n, 1.0 / inst.length(), 0.01);
}

TEST(Attention, SumsToOneAndSymmetric) {
  const auto params = random_model(20, 2, 3);
  auto inst = random_instance(20, 6, 2);
  inst.token_ids[4] = inst.token_ids[1];
  const auto s = score_attention(params, inst);
  EXPECT_NEAR(std::accumulate(s.omega.begin(), s.omega.end(), 0.0), 1.0, 1e-9);
  EXPECT_EQ(s.omega[1], s.omega[4]);
}

// On instances with a single class signal token, the highest-attention
// position is also the one whose occlusion lowers p(y_hat) most.
TEST(Attention, AgreesWithOcclusion) {
  const auto& world = toy_world();
  std::size_t considered = 0, agree = 0;
  for (const auto& inst : world.test) {
    std::size_t signals = 0;
    for (auto id : inst.token_ids) signals += is_signal_token(world.vocab.token(id));
    if (signals != 1) continue;
    ++considered;
    const auto att = score_attention(world.params, inst).omega;
    const auto occ = oracle::occlusion_scores(world.params, inst).omega;
    agree += argmax(att) == argmax(occ);
  }
  ASSERT_GE(considered, 20u);
  EXPECT_GE(static_cast<double>(agree) / considered, 0.8) << agree << "/" << considered;
}

TEST(ScaledAttention, MatchesFiniteDifferenceOnAttention) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto params = random_model(25, 3, 40 + s);
    const auto inst = random_instance(25, 2 + s, s);
    const auto ref = forward(params, inst);
    const auto fd = oracle::finite_difference_grad(params, inst, ref.predicted_class, 1e-5);
    const auto omega = score_scaled_attention(params, inst).omega;
    for (std::size_t t = 0; t < inst.length(); ++t)
      EXPECT_LT(rel_err(omega[t], std::abs(ref.attention[t] * fd.d_attention[t])), 1e-4);
  }
}

TEST(ScaledAttention, SingleToken) {
  const auto params = random_model(25, 2, 1);
  const auto inst = random_instance(25, 1, 3);
  const auto ref = forward(params, inst);
  const auto g = backward(params, inst, ref.predicted_class);
  EXPECT_DOUBLE_EQ(score_scaled_attention(params, inst).omega[0], std::abs(g.d_attention[0]));
}

TEST(ScaledAttention, ZeroWhenOutputIgnoresAttention) {
  // Zero output layer: p is constant, so d p / d alpha = 0.
  auto params = random_model(25, 2, 1);
  for (auto& x : params.output.data()) x = 0.0;
  for (double w : score_scaled_attention(params, random_instance(25, 5, 3)).omega) EXPECT_EQ(w, 0.0);
}

TEST(InputXGrad, ZeroEmbeddingGetsZero) {
  const auto params = random_model(25, 2, 1);
  auto inst = random_instance(25, 5, 3);
  inst.token_ids[2] = Vocab::kMask;
  EXPECT_EQ(score_input_x_grad(params, inst).omega[2], 0.0);
}

// p = softmax(O mean(h) + const), so d p_y / d h_t = p_y (O_y - sum_c p_c O_c) / T.
TEST(InputXGrad, ClosedFormOnLinearLogitModel) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto params = linear_logit_model(10 + s);
    const auto inst = random_instance(12, 7, s);
    const auto ref = forward(params, inst);
    const auto y = ref.predicted_class;
    std::vector<double> direction(params.embed_dim(), 0.0);
    for (std::size_t k = 0; k < direction.size(); ++k) {
      direction[k] = params.output(y, k);
      for (std::size_t c = 0; c < params.num_classes(); ++c) direction[k] -= ref.probs[c] * params.output(c, k);
    }
    std::vector<double> hand(inst.length());
    for (std::size_t t = 0; t < inst.length(); ++t)
      hand[t] = std::abs(dot(params.embedding.row(inst.token_ids[t]), direction));
    const auto omega = score_input_x_grad(params, inst).omega;
    EXPECT_EQ(ranking(omega), ranking(hand));
    const double scale = ref.probs[y] / static_cast<double>(inst.length());
    for (std::size_t t = 0; t < inst.length(); ++t) EXPECT_NEAR(omega[t], scale * hand[t], 1e-12);
  }
}

TEST(InputXGrad, ScalingEmbeddingsKeepsArgmaxOfScaledScores) {
  const auto params = random_model(25, 2, 8);
  const auto inst = random_instance(25, 6, 2);
  auto omega = score_input_x_grad(params, inst).omega;
  const auto top = argmax(omega);
  for (auto& w : omega) w *= 2.0;
  EXPECT_EQ(argmax(omega), top);
}

TEST(IntegratedGradients, Completeness) {
  const auto& world = toy_world();
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& inst = world.test[i];
    const auto ref = forward(world.params, inst);
    const auto y = ref.predicted_class;
    const auto signed_attr = integrated_gradients_signed(world.params, inst, 200, y);
    const double total = std::accumulate(signed_attr.begin(), signed_attr.end(), 0.0);
    const double delta = ref.probs[y] - forward(world.params, inst, MaskSet::all(inst.length())).probs[y];
    EXPECT_NEAR(total, delta, 1e-3) << inst.id;
  }
}

TEST(IntegratedGradients, EqualsInputTimesGradientForLinearFunction) {
  const auto params = linear_logit_model(3);
  const auto inst = random_instance(12, 6, 4);
  const auto x = embed(params, inst);
  std::vector<double> e_y(params.num_classes(), 0.0);
  e_y[1] = 1.0;
  const auto logit_grad = [&](const Matrix& point) {
    return backprop(params, trace_embeddings(params, point), e_y).d_embeddings;
  };
  const auto ig = integrated_gradients(x, 7, logit_grad);
  const auto ixg = input_times_gradient(x, logit_grad(x));
  for (std::size_t t = 0; t < ig.size(); ++t) EXPECT_NEAR(ig[t], ixg[t], 1e-12);
}

TEST(IntegratedGradients, RiemannConvergence) {
  const auto& world = toy_world();
  const auto& inst = world.test[0];
  const auto a = score_integrated_gradients(world.params, inst, 1).omega;
  const auto b = score_integrated_gradients(world.params, inst, 200).omega;
  const auto c = score_integrated_gradients(world.params, inst, 400).omega;
  double max_ab = 0.0;
  for (std::size_t t = 0; t < b.size(); ++t) {
    max_ab = std::max(max_ab, std::abs(a[t] - b[t]));
    EXPECT_NEAR(b[t], c[t], 1e-4);
  }
  EXPECT_GT(max_ab, 1e-4);
  EXPECT_THROW(score_integrated_gradients(world.params, inst, 0), UsageError);
}

TEST(DeepLift, RescaleHandExample) {
  // f = ReLU(x1 + x2 - 1), x = (1, 1), reference (0, 0).
  const double pre = 1.0 + 1.0 - 1.0, pre_ref = -1.0;
  const double out = std::max(0.0, pre), out_ref = std::max(0.0, pre_ref);
  const double m = rescale_multiplier(out - out_ref, pre - pre_ref, 1.0);
  EXPECT_DOUBLE_EQ(m, 0.5);
  const double c1 = m * 1.0, c2 = m * 1.0;
  EXPECT_DOUBLE_EQ(c1, 0.5);
  EXPECT_DOUBLE_EQ(c2, 0.5);
  EXPECT_DOUBLE_EQ(c1 + c2, out - out_ref);
  EXPECT_EQ(rescale_multiplier(0.0, 1e-12, 0.25), 0.25);
}

TEST(DeepLift, AffineModelEqualsInputTimesGradient) {
  const auto params = linear_logit_model(5);
  const auto inst = random_instance(12, 6, 9);
  const auto x = embed(params, inst);
  for (std::size_t y = 0; y < params.num_classes(); ++y) {
    std::vector<double> e_y(params.num_classes(), 0.0);
    e_y[y] = 1.0;
    const auto grad = backprop(params, trace_embeddings(params, x), e_y).d_embeddings;
    const auto contrib = deeplift_contributions(params, x, y, DeepLiftOutput::logit);
    for (std::size_t i = 0; i < contrib.size(); ++i)
      EXPECT_NEAR(contrib.data()[i], x.data()[i] * grad.data()[i], 1e-12);
  }
}

TEST(DeepLift, SumToDelta) {
  const auto& world = toy_world();
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& inst = world.test[i];
    const auto ref = forward(world.params, inst);
    const auto y = ref.predicted_class;
    const auto contrib = deeplift_signed(world.params, inst, y);
    const double total = std::accumulate(contrib.begin(), contrib.end(), 0.0);
    const double baseline = forward(world.params, inst, MaskSet::all(inst.length())).probs[y];
    EXPECT_NEAR(total, ref.probs[y] - baseline, 1e-6);
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto params = random_model(25, 3, 60 + s);
    const auto inst = random_instance(25, 4 + s, s);
    const auto ref = forward(params, inst);
    const auto y = ref.predicted_class;
    const auto contrib = deeplift_signed(params, inst, y);
    const double total = std::accumulate(contrib.begin(), contrib.end(), 0.0);
    EXPECT_NEAR(total, ref.probs[y] - forward(params, inst, MaskSet::all(inst.length())).probs[y], 1e-6);
  }
}

TEST(Lime, RecoversPlantedLinearModel) {
  const std::size_t T = 20;
  Rng rng(77);
  std::vector<double> truth(T);
  for (auto& w : truth) w = rng.uniform(-1.0, 1.0);
  ScorerOptions opts;
  opts.lime_samples = 500;
  const auto coef = lime_coefficients(T, opts, 3, [&](std::span<const std::uint8_t> keep) {
    double y = 0.2;
    for (std::size_t t = 0; t < T; ++t) y += truth[t] * keep[t];
    return y;
  });
  EXPECT_GE(spearman(coef, truth), 0.9);
}

TEST(Lime, DeterministicGivenSeed) {
  const auto& world = toy_world();
  ScorerOptions opts;
  opts.lime_samples = 100;
  opts.seed = 4;
  const auto& inst = world.test[3];
  EXPECT_EQ(score_lime(world.params, inst, opts).omega, score_lime(world.params, inst, opts).omega);
}

TEST(Lime, NullFeatureGetsSmallWeight) {
  const auto& world = toy_world();
  ScorerOptions opts;
  opts.lime_samples = 500;
  for (std::size_t i = 0; i < 10; ++i) {
    auto inst = world.test[i];
    inst.token_ids[inst.length() / 2] = Vocab::kMask;
    const auto omega = score_lime(world.params, inst, opts).omega;
    EXPECT_LE(omega[inst.length() / 2], 0.05) << inst.id;
  }
}

TEST(Lime, Errors) {
  ScorerOptions opts;
  opts.lime_samples = 9;
  const auto constant = [](std::span<const std::uint8_t>) { return 0.5; };
  EXPECT_THROW(lime_coefficients(5, opts, 1, constant), UsageError);
  opts.lime_samples = 10;
  EXPECT_THROW(lime_coefficients(0, opts, 1, constant), UsageError);
}

TEST(Lime, DegenerateDesignIsReported) {
  ScorerOptions opts;
  opts.lime_samples = 10;
  // Search for a seed whose ten single-position masks all coincide.
  bool found = false;
  for (std::uint64_t seed = 0; seed < 5000 && !found; ++seed) {
    Rng rng(seed);
    bool same = true;
    const bool first = rng.coin();
    for (int i = 1; i < 10; ++i) same = same && rng.coin() == first;
    if (!same) continue;
    found = true;
    try {
      lime_coefficients(1, opts, seed, [](std::span<const std::uint8_t>) { return 0.5; });
      FAIL() << "expected UsageError";
    } catch (const UsageError& e) {
      EXPECT_NE(std::string(e.what()).find("lime_samples"), std::string::npos);
    }
  }
  EXPECT_TRUE(found);
}

TEST(Scorers, RecordIsJson) {
  const ImportanceScores s{Method::attention, {0.25, 0.75}};
  EXPECT_EQ(scores_record("a", s), R"({"id":"a","method":"attention","omega":[0.25,0.75]})");
}
