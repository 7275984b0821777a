#include <gtest/gtest.h>

#include <numeric>

#include "isr/faithfulness.hpp"
#include "test_util.hpp"

using namespace isr;
using isr::testing::affine_model;
using isr::testing::toy_world;

namespace {

// Two-class model: token 4 pushes class 1, token 5 class 0, tokens 6 and 7
// are weak class-1 and class-0 cues. Token 3 is neutral.
ModelParams four_case_model() {
  Matrix e(8, 2);
  e(4, 0) = 3.0;
  e(5, 1) = 3.0;
  e(6, 0) = 0.5;
  e(7, 1) = 0.5;
  Matrix o(2, 2);
  o(0, 1) = 1.0;
  o(1, 0) = 1.0;
  return affine_model(e, o, 1.0);
}

Rationale rationale(const std::string& id, std::vector<std::size_t> positions) {
  const auto k = positions.size();
  return {id, RationaleType::topk, std::move(positions), k, Method::attention, 0.0};
}

struct FourCase {
  std::vector<EncodedInstance> data{
      {"a", {5, 3}, 0}, {"b", {5, 6}, 1}, {"c", {4, 3}, 1}, {"d", {4, 7}, 1}};
  // b flips 0 -> 1 and d flips 1 -> 0.
  std::vector<Rationale> rationales{rationale("a", {}), rationale("b", {0}), rationale("c", {}),
                                    rationale("d", {0})};
};

}  // namespace

TEST(Normalized, HandArithmetic) {
  EXPECT_NEAR(sufficiency(0.9, 0.7), 0.8, 1e-12);
  EXPECT_NEAR(normalized_sufficiency(0.9, 0.7, 0.5), 0.5, 1e-12);
  EXPECT_NEAR(comprehensiveness(0.9, 0.6), 0.3, 1e-12);
  EXPECT_NEAR(normalized_comprehensiveness(0.9, 0.6, 0.5), 0.75, 1e-12);
}

TEST(Normalized, GuardAndClamp) {
  EXPECT_EQ(normalized_sufficiency(0.6, 0.2, 0.7), 1.0);
  EXPECT_EQ(normalized_comprehensiveness(0.6, 0.2, 0.7), 0.0);
  EXPECT_EQ(normalized_sufficiency(0.6, 0.2, 0.6), 1.0);
  // Comp larger than 1 - Suff0.
  EXPECT_EQ(normalized_comprehensiveness(0.9, 0.1, 0.6), 1.0);
  // Rationale-only input worse than the empty input.
  EXPECT_EQ(normalized_sufficiency(0.9, 0.2, 0.5), 0.0);
}

TEST(Normalized, WholeInputAndEmptyRationale) {
  const auto& world = toy_world();
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& inst = world.test[i];
    std::vector<std::size_t> all(inst.length());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto whole = evaluate_instance(world.params, inst, rationale(inst.id, all));
    EXPECT_EQ(sufficiency(whole.p_full, whole.p_rationale_only), 1.0);
    if (1.0 - sufficiency(whole.p_full, whole.p_baseline) >= kNormGuard) {
      EXPECT_DOUBLE_EQ(whole.norm_suff, 1.0);
    }
    EXPECT_EQ(whole.length_fraction, 1.0);
    const auto empty = evaluate_instance(world.params, inst, rationale(inst.id, {}));
    EXPECT_EQ(empty.norm_comp, 0.0);
    EXPECT_EQ(empty.length_fraction, 0.0);
  }
}

TEST(Normalized, ModelOverloadsAgreeWithArithmetic) {
  const auto& world = toy_world();
  const auto& inst = world.test[1];
  const auto r = rationale(inst.id, {0, 2});
  const auto full = forward(world.params, inst);
  const auto y = full.predicted_class;
  const double p_only = forward(world.params, inst, MaskSet::complement_of(r.positions, inst.length())).probs[y];
  const double p_without = forward(world.params, inst, MaskSet(r.positions)).probs[y];
  const double p_base = forward(world.params, inst, MaskSet::all(inst.length())).probs[y];
  EXPECT_EQ(normalized_sufficiency(world.params, inst, r), normalized_sufficiency(full.probs[y], p_only, p_base));
  EXPECT_EQ(normalized_comprehensiveness(world.params, inst, r),
            normalized_comprehensiveness(full.probs[y], p_without, p_base));
  EXPECT_THROW(evaluate_instance(world.params, inst, rationale(inst.id, {99})), UsageError);
}

TEST(F1, MacroHandValues) {
  EXPECT_DOUBLE_EQ(f1_macro({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(f1_macro({0, 0, 1, 1}, {0, 1, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(f1_macro({0, 1, 1, 1}, {0, 1, 1, 0}), (2.0 / 3.0 + 4.0 / 5.0) / 2.0);
  EXPECT_DOUBLE_EQ(f1_macro({0, 0}, {1, 1}), 0.0);
}

TEST(MaskedF1, FourInstanceCase) {
  const auto params = four_case_model();
  const FourCase fc;
  std::vector<std::size_t> preds;
  for (const auto& inst : fc.data) preds.push_back(forward(params, inst).predicted_class);
  ASSERT_EQ(preds, (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_DOUBLE_EQ(masked_f1(params, fc.data, fc.rationales), 0.5);
  EXPECT_DOUBLE_EQ(masked_f1(params, fc.data, fc.rationales, F1Gold::dataset_label),
                   (2.0 / 3.0 + 4.0 / 5.0) / 2.0);

  const auto report = evaluate(params, fc.data, fc.rationales, "four");
  EXPECT_DOUBLE_EQ(report.f1_macro, 0.5);
  const auto gold_report = evaluate(params, fc.data, fc.rationales, "four", F1Gold::dataset_label);
  EXPECT_DOUBLE_EQ(gold_report.f1_macro, (2.0 / 3.0 + 4.0 / 5.0) / 2.0);
}

TEST(MaskedF1, EmptyRationalesGiveOne) {
  const auto& world = toy_world();
  std::vector<Rationale> empty;
  for (const auto& inst : world.test) empty.push_back(rationale(inst.id, {}));
  EXPECT_EQ(masked_f1(world.params, world.test, empty), 1.0);
}

TEST(MaskedF1, MissingRationaleNamesInstance) {
  const auto params = four_case_model();
  FourCase fc;
  fc.rationales.pop_back();
  try {
    masked_f1(params, fc.data, fc.rationales);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'d'"), std::string::npos);
  }
  EXPECT_THROW(evaluate(params, fc.data, fc.rationales, "x"), DataError);
}

TEST(Report, MeansOverInstances) {
  const auto params = four_case_model();
  const FourCase fc;
  const auto report = evaluate(params, fc.data, fc.rationales, "four", F1Gold::model_prediction, 2);
  ASSERT_EQ(report.instances.size(), 4u);
  double suff = 0.0, comp = 0.0, len = 0.0;
  for (const auto& e : report.instances) {
    suff += e.norm_suff;
    comp += e.norm_comp;
    len += e.length_fraction;
    EXPECT_GE(e.norm_suff, 0.0);
    EXPECT_LE(e.norm_suff, 1.0);
    EXPECT_GE(e.norm_comp, 0.0);
    EXPECT_LE(e.norm_comp, 1.0);
  }
  EXPECT_DOUBLE_EQ(report.mean_norm_suff, suff / 4);
  EXPECT_DOUBLE_EQ(report.mean_norm_comp, comp / 4);
  EXPECT_DOUBLE_EQ(report.mean_length_fraction, len / 4);
  EXPECT_EQ(report.config_id, "four");
}

TEST(RelativeImprovement, Ratios) {
  FaithfulnessReport a, b;
  a.instances = {InstanceEval{.id = "x"}, InstanceEval{.id = "y"}};
  b.instances = {InstanceEval{.id = "y"}, InstanceEval{.id = "x"}};
  a.mean_norm_suff = b.mean_norm_suff = 0.4;
  a.mean_norm_comp = 0.3;
  b.mean_norm_comp = 0.6;
  a.f1_macro = 0.0;
  b.f1_macro = 0.5;
  const auto ri = relative_improvement(a, b);
  EXPECT_DOUBLE_EQ(*ri.norm_suff, 1.0);
  EXPECT_DOUBLE_EQ(*ri.norm_comp, 2.0);
  EXPECT_FALSE(ri.f1.has_value());
  const auto same = relative_improvement(b, b);
  EXPECT_DOUBLE_EQ(*same.norm_suff, 1.0);
  EXPECT_DOUBLE_EQ(*same.norm_comp, 1.0);
  EXPECT_DOUBLE_EQ(*same.f1, 1.0);
  b.instances.pop_back();
  EXPECT_THROW(relative_improvement(a, b), DataError);
}

TEST(Ablation, ReportCountAndMonotoneDelta) {
  const auto& world = toy_world();
  const std::vector<EncodedInstance> data(world.test.begin(), world.test.begin() + 40);
  SelectionConfig cfg;
  cfg.scorers = {Method::rand, Method::attention, Method::scaled_attention, Method::input_x_grad,
                 Method::ig, Method::deeplift};
  cfg.scorer_mode = cfg.length_mode = cfg.type_mode = Mode::instance_level;
  cfg.divergence = Divergence::classdiff;
  cfg.scorer_options.ig_steps = 20;
  const std::vector<Method> order{Method::ig, Method::rand, Method::deeplift, Method::attention,
                                  Method::input_x_grad, Method::scaled_attention};
  const auto reports = ablate_scorers(world.params, data, cfg, order);
  ASSERT_EQ(reports.size(), 6u);
  EXPECT_EQ(reports[0].config_id, "ablation:rand+attention+scaled_attention+input_x_grad+ig+deeplift");
  EXPECT_EQ(reports[1].config_id, "ablation:rand+attention+scaled_attention+input_x_grad+deeplift");
  EXPECT_EQ(reports[5].config_id, "ablation:scaled_attention");
  for (std::size_t r = 1; r < reports.size(); ++r)
    for (std::size_t i = 0; i < data.size(); ++i)
      EXPECT_LE(reports[r].instances[i].delta, reports[r - 1].instances[i].delta);
  for (const auto& e : reports[5].instances) EXPECT_EQ(e.scorer, Method::scaled_attention);
}

TEST(Ablation, RemovalOrderMustBePermutation) {
  const auto& world = toy_world();
  const std::vector<EncodedInstance> data(world.test.begin(), world.test.begin() + 2);
  SelectionConfig cfg;
  cfg.scorers = {Method::rand, Method::attention};
  EXPECT_THROW(ablate_scorers(world.params, data, cfg, {Method::rand}), UsageError);
  EXPECT_THROW(ablate_scorers(world.params, data, cfg, {Method::rand, Method::rand}), UsageError);
  EXPECT_THROW(ablate_scorers(world.params, data, cfg, {Method::rand, Method::ig}), UsageError);
  EXPECT_EQ(ablate_scorers(world.params, data, cfg, {Method::attention, Method::rand}).size(), 2u);
}
