#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "isr/divergence.hpp"
#include "isr/random.hpp"

using namespace isr;

namespace {

std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& x : p) sum += (x = rng.uniform() + 1e-3);
  for (auto& x : p) x /= sum;
  return p;
}

}  // namespace

TEST(Kl, HandValues) {
  const std::vector<double> p{0.3, 0.7};
  EXPECT_EQ(kl(p, p), 0.0);
  EXPECT_NEAR(kl(std::vector{0.9, 0.1}, std::vector{0.5, 0.5}), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-12);
  EXPECT_NEAR(kl(std::vector{0.9, 0.1}, std::vector{0.5, 0.5}), 0.36806, 1e-5);
  EXPECT_NEAR(kl(std::vector{1.0, 0.0}, std::vector{0.5, 0.5}), std::log(2.0), 1e-12);
}

TEST(Kl, FloorKeepsItFinite) {
  const double v = kl(std::vector{0.5, 0.5}, std::vector{1.0, 0.0});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(1e-12)), 1e-9);
}

TEST(Kl, NotSymmetric) {
  const std::vector<double> p{0.9, 0.1}, q{0.5, 0.5};
  EXPECT_GT(std::abs(kl(p, q) - kl(q, p)), 1e-3);
}

TEST(Jsd, HandValues) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_NEAR(jsd(p, p), 0.0, 1e-15);
  EXPECT_NEAR(jsd(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}), std::log(2.0), 1e-12);
}

TEST(Jsd, SymmetricAndBounded) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_distribution(rng, 2 + i % 4);
    const auto q = random_distribution(rng, p.size());
    EXPECT_NEAR(jsd(p, q), jsd(q, p), 1e-12);
    EXPECT_GE(jsd(p, q), 0.0);
    EXPECT_LE(jsd(p, q), std::log(2.0) + 1e-12);
    EXPECT_GE(kl(p, q), 0.0);
  }
}

TEST(Perplexity, HandValues) {
  EXPECT_NEAR(perplexity(std::vector{1.0, 0.0}, std::vector{1.0, 0.0}), 1.0, 1e-12);
  EXPECT_NEAR(perplexity(std::vector{1.0, 0.0}, std::vector{0.5, 0.5}), 2.0, 1e-12);
  EXPECT_NEAR(perplexity(std::vector{0.5, 0.5}, std::vector{0.5, 0.5}), 2.0, 1e-12);
}

TEST(Perplexity, AtLeastOneAndBounded) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_distribution(rng, 3);
    const auto q = random_distribution(rng, 3);
    EXPECT_GE(perplexity(p, q), 1.0);
  }
  EXPECT_LE(perplexity(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}), 1.0 / 1e-12 * (1 + 1e-9));
}

TEST(ClassDiff, HandValues) {
  EXPECT_NEAR(class_diff(std::vector{0.1, 0.9}, std::vector{0.4, 0.6}, 1), 0.3, 1e-12);
  EXPECT_EQ(class_diff(std::vector{0.1, 0.9}, std::vector{0.1, 0.9}, 1), 0.0);
  EXPECT_NEAR(class_diff(std::vector{0.6, 0.4}, std::vector{0.3, 0.7}, 1), -0.3, 1e-12);
  EXPECT_THROW(class_diff(std::vector{0.5, 0.5}, std::vector{0.5, 0.5}, 2), UsageError);
}

TEST(Divergence, ByName) {
  EXPECT_EQ(parse_divergence("kl"), Divergence::kl);
  EXPECT_EQ(parse_divergence("jsd"), Divergence::jsd);
  EXPECT_EQ(parse_divergence("perplexity"), Divergence::perplexity);
  EXPECT_EQ(parse_divergence("classdiff"), Divergence::classdiff);
  EXPECT_THROW(parse_divergence("hellinger"), UsageError);
  for (auto d : {Divergence::kl, Divergence::jsd, Divergence::perplexity, Divergence::classdiff})
    EXPECT_EQ(parse_divergence(to_string(d)), d);
  EXPECT_THROW(kl(std::vector{1.0}, std::vector{0.5, 0.5}), UsageError);
}
