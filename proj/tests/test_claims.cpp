#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "volsup/claims.hpp"

using namespace volsup;

namespace {
double eval(const ClaimSpec& s, const DiscretePath& p) {
  return eval_claim(build_claim(s, TimeGrid::make(static_cast<int>(p.size()), 1.0)), p);
}
}  // namespace

TEST(BuildClaim, Examples) {
  EXPECT_EQ(eval(ClaimSpec::digital(0), {1}), 1.0);
  EXPECT_EQ(eval(ClaimSpec::digital(0), {-1}), 0.0);
  EXPECT_EQ(eval(ClaimSpec::realized_variance(), {1, -2}), 5.0);
  EXPECT_EQ(eval(ClaimSpec::affine(2, ClaimSpec::call(0), 1), {2}), 5.0);
}

TEST(EvalClaim, Examples) {
  EXPECT_EQ(eval(ClaimSpec::constant(5), {1, -1, 2}), 5.0);
  EXPECT_EQ(eval(ClaimSpec::call(0), {-1, 3}), 2.0);
  EXPECT_EQ(eval(ClaimSpec::min(ClaimSpec::call(0), ClaimSpec::constant(1)), {2}), 1.0);
}

TEST(EvalClaim, Library) {
  EXPECT_EQ(eval(ClaimSpec::digital(0), {0.5, -0.5}), 1.0);  // B_N >= K includes equality
  EXPECT_EQ(eval(ClaimSpec::put(1), {-1, -1}), 3.0);
  EXPECT_EQ(eval(ClaimSpec::power(4), {-2}), 16.0);
  EXPECT_EQ(eval(ClaimSpec::power(0), {-2}), 1.0);
  EXPECT_EQ(eval(ClaimSpec::identity(), {1, 2}), 3.0);
  EXPECT_EQ(eval(ClaimSpec::neg_abs(), {-3}), -3.0);
  EXPECT_EQ(eval(ClaimSpec::max(ClaimSpec::identity(), ClaimSpec::constant(0)), {-3}), 0.0);
}

TEST(EvalClaim, WrongLengthRejected) {
  const Claim c = build_claim(ClaimSpec::identity(), TimeGrid::make(2, 1.0));
  EXPECT_THROW(eval_claim(c, {1}), InvalidInput);
}

TEST(BuildClaim, Rejections) {
  const auto g = TimeGrid::make(1, 1.0);
  EXPECT_THROW(build_claim(ClaimSpec::power(3), g), InvalidInput);
  EXPECT_THROW(build_claim(ClaimSpec::tagged("lookback"), g), InvalidInput);
  EXPECT_THROW(claim_spec_from_json(nlohmann::json::parse(R"({"type":"straddle"})")), InvalidInput);
  EXPECT_THROW(claim_spec_from_json(nlohmann::json::parse(R"({"type":"digital","strike":0,"cap":1})")), InvalidInput);
  EXPECT_THROW(claim_spec_from_json(nlohmann::json::parse(R"({"type":"power","exponent":2.5})")), InvalidInput);
  EXPECT_THROW(claim_spec_from_json(nlohmann::json::parse(R"({"type":"max","args":[{"type":"identity"}]})")),
               InvalidInput);
}

TEST(BuildClaim, TerminalOnlyFlag) {
  const auto g = TimeGrid::make(2, 1.0);
  EXPECT_TRUE(build_claim(ClaimSpec::digital(0), g).terminal_only);
  EXPECT_FALSE(build_claim(ClaimSpec::realized_variance(), g).terminal_only);
  EXPECT_FALSE(build_claim(ClaimSpec::max(ClaimSpec::call(0), ClaimSpec::realized_variance()), g).terminal_only);
  EXPECT_TRUE(build_claim(ClaimSpec::affine(-1, ClaimSpec::neg_abs(), 2), g).terminal_only);
}

TEST(ClaimSpec, JsonRoundTripOnRandomSpecs) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const ClaimSpec s = volsup::testing::random_claim(rng);
    EXPECT_EQ(claim_spec_from_json(to_json(s)), s);
  }
  const auto j = nlohmann::json::parse(R"({"type":"digital","strike":0.0})");
  EXPECT_EQ(claim_spec_from_json(j), ClaimSpec::digital(0));
}

TEST(ClaimProperties, TerminalOnlyClaimsIgnoreThePath) {
  std::mt19937_64 rng(5);
  const auto set = volsup::testing::unit2(KernelFamily::Tag::TwoPointSymmetric, 3);
  const auto& tree = set.tree();
  for (int i = 0; i < 60; ++i) {
    const Claim c = build_claim(volsup::testing::random_claim(rng), set.grid());
    const Claim same = shift_claim(c, 0, {});
    for (NodeId a : tree.leaves()) {
      EXPECT_EQ(same(tree.prefix(a)), c(tree.prefix(a)));
      if (!c.terminal_only) continue;
      for (NodeId b : tree.leaves()) {
        if (tree.node(a).value != tree.node(b).value) continue;
        EXPECT_EQ(c(tree.prefix(a)), c(tree.prefix(b))) << c.description;
      }
    }
  }
}
