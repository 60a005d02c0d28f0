#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "volsup/dp_engine.hpp"
#include "volsup/uncertainty.hpp"

using namespace volsup;
using volsup::testing::unit2;
using Tag = KernelFamily::Tag;

TEST(VolBand, Validation) {
  EXPECT_THROW(VolBand::make(0, 1), InvalidInput);
  EXPECT_THROW(VolBand::make(4, 1), InvalidInput);
  EXPECT_NO_THROW(VolBand::make(2, 2));
}

TEST(SupportPoints, Examples) {
  EXPECT_EQ(support_points(VolBand::make(4, 4), 1.0, 1), (std::vector<double>{-2, 2}));
  EXPECT_EQ(support_points(VolBand::make(1, 4), 1.0, 2), (std::vector<double>{-2, -1, 1, 2}));
  EXPECT_EQ(support_points(VolBand::make(1, 4), 0.25, 2), (std::vector<double>{-1, -0.5, 0.5, 1}));
}

TEST(SupportPoints, UniformInVarianceAndRejectsAmbiguity) {
  const auto u = support_points(VolBand::make(1, 4), 1.0, 3);
  ASSERT_EQ(u.size(), 6u);
  EXPECT_DOUBLE_EQ(u[4] * u[4], 2.5);
  EXPECT_THROW(support_points(VolBand::make(1, 4), 1.0, 1), InvalidInput);
  EXPECT_EQ(support_points(VolBand::make(2, 2), 0.5, 3), (std::vector<double>{-1, 1}));
}

TEST(EnumeratePolicies, Counts) {
  EXPECT_EQ(enumerate_policies(unit2(Tag::TwoPointSymmetric)).size(), 2u);
  EXPECT_EQ(enumerate_policies(unit2(Tag::MartingalePolytope)).size(), 4u);
  // non-recombining N=2 tree has 1 + 4 inner nodes, 2 choices each
  EXPECT_EQ(enumerate_policies(unit2(Tag::TwoPointSymmetric, 2)).size(), 32u);
  EXPECT_EQ(count_policies(unit2(Tag::MartingalePolytope, 2)), 1024.0);
}

TEST(EnumeratePolicies, PolytopeVerticesAreSignSplitPairs) {
  const auto ps = enumerate_policies(unit2(Tag::MartingalePolytope));
  std::vector<std::pair<double, double>> pairs;
  for (const auto& p : ps) pairs.emplace_back(p.kernels[0].atoms[0].increment, p.kernels[0].atoms[1].increment);
  EXPECT_EQ(pairs, (std::vector<std::pair<double, double>>{{-1, 1}, {-1, 2}, {-2, 1}, {-2, 2}}));
}

TEST(EnumeratePolicies, CapRefusal) {
  const auto set = unit2(Tag::MartingalePolytope, 2);
  try {
    enumerate_policies(set, 100);
    FAIL() << "expected refusal";
  } catch (const CapExceeded& e) {
    EXPECT_EQ(e.count(), 1024.0);
    EXPECT_EQ(e.cap(), 100u);
  }
}

TEST(Kernel, PairWeightsAndMembership) {
  const Kernel k = Kernel::pair(-2, 1);
  EXPECT_DOUBLE_EQ(k.atoms[0].prob, 1.0 / 3);
  EXPECT_DOUBLE_EQ(k.atoms[1].prob, 2.0 / 3);
  EXPECT_NEAR(k.mean(), 0.0, 1e-15);
  EXPECT_NEAR(k.variance(), 2.0, 1e-15);

  const auto poly = unit2(Tag::MartingalePolytope);
  Policy p{{k, {}, {}, {}, {}}};
  EXPECT_TRUE(membership(p, poly).ok);
  EXPECT_TRUE(membership(Policy{{Kernel::symmetric(1), {}, {}, {}, {}}}, poly).ok);
  // ±3 is not even in the support; a wider tree shows the variance test
  const auto wide = ScenarioSet::build(TimeGrid::make(1, 1.0), VolRule::constant(VolBand::make(1, 9)),
                                       KernelFamily::polytope(2));
  const auto narrow = wide.with_membership_rule(VolRule::constant(VolBand::make(1, 4)));
  const Policy pm3{{Kernel::symmetric(3), {}, {}, {}, {}}};
  EXPECT_TRUE(membership(pm3, wide).ok);
  const auto r = membership(pm3, narrow);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.reason, "kernel variance outside the band");
  EXPECT_FALSE(membership(Policy{{Kernel::symmetric(3), {}, {}, {}, {}}}, poly).ok);
}

TEST(Membership, TwoPointFamilyRejectsAsymmetricKernels) {
  const auto tp = unit2(Tag::TwoPointSymmetric);
  EXPECT_TRUE(membership(Policy{{Kernel::symmetric(2), {}, {}, {}, {}}}, tp).ok);
  EXPECT_FALSE(membership(Policy{{Kernel::pair(-2, 1), {}, {}, {}, {}}}, tp).ok);
  EXPECT_FALSE(membership(Policy{{Kernel{{{-1, 0.4}, {1, 0.6}}}, {}, {}, {}, {}}}, tp).ok);
  EXPECT_FALSE(membership(Policy{{Kernel::symmetric(1)}}, tp).ok);
}

TEST(MeasureOf, Examples) {
  const auto tp = unit2(Tag::TwoPointSymmetric);
  const Policy sym{{Kernel::symmetric(1), {}, {}, {}, {}}};
  EXPECT_EQ(measure_of(tp, sym, tp.tree().find({1}).value()), 0.5);
  EXPECT_EQ(measure_of(tp, sym, tp.tree().find({2}).value()), 0.0);

  const auto poly = unit2(Tag::MartingalePolytope);
  const Policy pr{{Kernel::pair(-2, 1), {}, {}, {}, {}}};
  EXPECT_DOUBLE_EQ(measure_of(poly, pr, poly.tree().find({-2}).value()), 1.0 / 3);
  EXPECT_DOUBLE_EQ(measure_of(poly, pr, poly.tree().find({1}).value()), 2.0 / 3);

  const auto two = ScenarioSet::build(TimeGrid::make(2, 1.0), VolRule::constant(VolBand::make(1, 1)),
                                      KernelFamily::two_point(1));
  const auto all = enumerate_policies(two);
  ASSERT_EQ(all.size(), 1u);
  for (NodeId l : two.tree().leaves()) EXPECT_EQ(measure_of(two, all[0], l), 0.25);
}

TEST(ConditionPolicy, RestrictionAndRoot) {
  const auto set = unit2(Tag::TwoPointSymmetric, 2);
  for (const auto& p : enumerate_policies(set)) {
    EXPECT_EQ(condition_policy(set, p, 0), p);
    const NodeId n = set.tree().find({-1}).value();
    const Policy q = condition_policy(set, p, n);
    ASSERT_EQ(q.kernels.size(), 5u);
    EXPECT_EQ(q.kernels[0], p.kernels[n]);
    EXPECT_TRUE(membership(q, set.subset(n)).ok);
  }
}

TEST(Paste, IdentityWhenContinuationsAreConditionedPolicies) {
  std::mt19937_64 rng(3);
  const auto set = ScenarioSet::build(TimeGrid::make(2, 1.0),
                                      VolRule::level_scaled(1.5, VolBand::make(1, 4), VolBand::make(0.25, 1)),
                                      KernelFamily::polytope(2));
  const auto policies = enumerate_policies(set);
  for (int i = 0; i < 40; ++i) {
    const Policy& p = policies[std::uniform_int_distribution<std::size_t>(0, policies.size() - 1)(rng)];
    const auto rule = random_stopping_rule(set.tree(), rng, 0.4);
    PastingKernel nu;
    for (NodeId s : rule.stop_nodes()) nu[s] = condition_policy(set, p, s);
    EXPECT_EQ(paste(set, p, rule, nu), p);
  }
}

TEST(Paste, LowThenHighVarianceMeasure) {
  const auto set = unit2(Tag::TwoPointSymmetric, 2);
  const auto& tree = set.tree();
  Policy low;
  low.kernels.resize(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id)
    if (!tree.is_leaf(id)) low.kernels[id] = Kernel::symmetric(1);
  const auto rule = StoppingRule::constant(tree, 1);
  PastingKernel nu;
  for (NodeId s : rule.stop_nodes()) {
    Policy high;
    high.kernels.resize(5);
    high.kernels[0] = Kernel::symmetric(2);
    nu[s] = high;
  }
  const Policy bar = paste(set, low, rule, nu);
  EXPECT_TRUE(membership(bar, set).ok);
  int charged = 0;
  for (NodeId l : tree.leaves()) {
    const double m = measure_of(set, bar, l);
    const auto& w = tree.prefix(l);
    if (std::abs(w.increment(0)) == 1 && std::abs(w.increment(1)) == 2) {
      EXPECT_EQ(m, 0.25);
      ++charged;
    } else {
      EXPECT_EQ(m, 0.0);
    }
  }
  EXPECT_EQ(charged, 4);
}

TEST(Paste, Rejections) {
  const auto set = unit2(Tag::TwoPointSymmetric, 2);
  const auto p = enumerate_policies(set).front();
  const auto rule = StoppingRule::constant(set.tree(), 1);
  PastingKernel nu;
  EXPECT_THROW(paste(set, p, rule, nu), InvalidInput);
  for (NodeId s : rule.stop_nodes()) nu[s] = Policy{{Kernel::symmetric(1)}};
  EXPECT_THROW(paste(set, p, rule, nu), InvalidInput);
  for (NodeId s : rule.stop_nodes()) nu[s] = Policy{{Kernel::symmetric(3), {}, {}, {}, {}}};
  EXPECT_THROW(paste(set, p, rule, nu), InvalidInput);
}

TEST(MeasureOf, ConditionalIdentity) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 20; ++i) {
    const auto inst = volsup::testing::random_instance(rng, 2, 2);
    const auto set = inst.set(Tag::MartingalePolytope);
    const auto xi = inst.payoff();
    const auto ps = enumerate_policies(set);
    const Policy& p = ps[std::uniform_int_distribution<std::size_t>(0, ps.size() - 1)(rng)];
    for (NodeId id = 0; id < set.tree().size(); ++id) {
      if (!(measure_of(set, p, id) > 0)) continue;
      const auto& pre = set.tree().prefix(id);
      const double lhs = conditional_expectation(set, p, xi, id);
      const double rhs = expectation(set.subset(id), condition_policy(set, p, id), shift_claim(xi, pre.size(), pre));
      EXPECT_NEAR(lhs, rhs, 1e-12) << inst.describe();
    }
  }
}

TEST(Kernels, EveryEnumeratedKernelIsAMartingaleLaw) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const auto inst = volsup::testing::random_instance(rng, 3, 3);
    for (Tag tag : {Tag::TwoPointSymmetric, Tag::MartingalePolytope}) {
      const auto set = inst.set(tag);
      for (NodeId id = 0; id < set.tree().size(); ++id)
        for (const auto& k : node_choices(set, id)) {
          EXPECT_NEAR(k.mean(), 0.0, 1e-12);
          EXPECT_NEAR(k.total(), 1.0, 1e-12);
          EXPECT_TRUE(membership_kernel_ok(k, set, id));
        }
    }
  }
}

TEST(CheckClosure, Unit2BothFamilies) {
  for (Tag tag : {Tag::TwoPointSymmetric, Tag::MartingalePolytope}) {
    const auto rep = check_closure(unit2(tag));
    EXPECT_TRUE(rep.ok());
    EXPECT_TRUE(rep.members_exhaustive);
    EXPECT_TRUE(rep.continuations_exhaustive);
    EXPECT_LE(rep.max_measure_error, 1e-12);
    EXPECT_GT(rep.pasting_checks, 0u);
  }
}

TEST(CheckClosure, PathDependentRuleN2) {
  const auto rule = VolRule::level_scaled(1.5, VolBand::make(1, 4), VolBand::make(0.25, 1));
  for (Tag tag : {Tag::TwoPointSymmetric, Tag::MartingalePolytope}) {
    const auto set = ScenarioSet::build(TimeGrid::make(2, 1.0), rule, KernelFamily::make(tag, 2));
    const auto rep = check_closure(set);
    EXPECT_TRUE(rep.ok()) << (rep.violations.empty() ? "" : rep.violations[0].reason);
    EXPECT_GT(rep.mixing_checks, 0u);
    EXPECT_LE(rep.max_measure_error, 1e-12);
  }
}

TEST(CheckClosure, ShrunkBandIsWitnessedByPasting) {
  const auto healthy = unit2(Tag::TwoPointSymmetric, 2);
  const auto corrupted = healthy.with_membership_rule(VolRule::constant(VolBand::make(1, 1)));
  const auto rep = check_closure(corrupted);
  EXPECT_FALSE(rep.pasting_ok);
  EXPECT_TRUE(rep.conditioning_ok);
  ASSERT_FALSE(rep.violations.empty());
  const auto& w = rep.violations.front();
  EXPECT_EQ(w.check, "pasting");
  EXPECT_TRUE(membership(w.policy, corrupted).ok);
  EXPECT_FALSE(membership(w.result, corrupted).ok);
}
