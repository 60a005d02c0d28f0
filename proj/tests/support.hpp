#pragma once

// Shared fixtures, random instance generators and test-only oracles. The
// oracles here do not call into the recursion they are used to check.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "volsup/claims.hpp"
#include "volsup/uncertainty.hpp"

namespace volsup::testing {

/// Canonical one-step desk instance: band [1, 4], dt = 1, m = 2, so the
/// support is {-2, -1, 1, 2}.
inline ScenarioSet unit2(KernelFamily::Tag tag, int steps = 1) {
  return ScenarioSet::build(TimeGrid::make(steps, 1.0), VolRule::constant(VolBand::make(1, 4)),
                            KernelFamily::make(tag, 2));
}

inline Claim claim_of(const ClaimSpec& s, const ScenarioSet& set) { return build_claim(s, set.grid()); }

/// Value at 0 of the upper concave envelope of points (u_i, f_i), by an
/// explicit upper hull (monotone chain), and the slope of the hull there.
inline std::pair<double, double> envelope_at_zero(const std::vector<double>& u, const std::vector<double>& f) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < u.size(); ++i) pts.emplace_back(u[i], f[i]);
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> hull;
  for (const auto& p : pts) {
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull.back();
      // drop b if it lies on or below the chord a -> p
      const double cross = (b.first - a.first) * (p.second - a.second) - (b.second - a.second) * (p.first - a.first);
      if (cross >= 0) hull.pop_back();
      else break;
    }
    hull.push_back(p);
  }
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[i + 1];
    if (a.first <= 0 && 0 <= b.first) {
      const double slope = (b.second - a.second) / (b.first - a.first);
      return {a.second - slope * a.first, slope};
    }
  }
  return {NAN, NAN};
}

template <class Rng>
VolBand random_band(Rng& rng) {
  static const std::vector<std::pair<double, double>> bands = {
      {1, 4}, {0.5, 2}, {1, 2}, {0.25, 1}, {2, 3}, {1, 9}};
  auto b = bands[std::uniform_int_distribution<std::size_t>(0, bands.size() - 1)(rng)];
  return VolBand::make(b.first, b.second);
}

template <class Rng>
VolRule random_rule(Rng& rng) {
  if (std::bernoulli_distribution(0.5)(rng)) return VolRule::constant(random_band(rng));
  const double threshold = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  return VolRule::level_scaled(threshold, random_band(rng), random_band(rng));
}

template <class Rng>
ClaimSpec random_claim(Rng& rng, int depth = 0) {
  static const std::vector<double> strikes = {-1.0, -0.5, 0.0, 0.5, 1.0};
  auto strike = [&] { return strikes[std::uniform_int_distribution<std::size_t>(0, strikes.size() - 1)(rng)]; };
  const int kinds = depth < 2 ? 11 : 8;
  switch (std::uniform_int_distribution<int>(0, kinds - 1)(rng)) {
    case 0: return ClaimSpec::digital(strike());
    case 1: return ClaimSpec::call(strike());
    case 2: return ClaimSpec::put(strike());
    case 3: return ClaimSpec::power(2 * std::uniform_int_distribution<int>(0, 2)(rng));
    case 4: return ClaimSpec::identity();
    case 5: return ClaimSpec::constant(std::uniform_real_distribution<double>(-2, 2)(rng));
    case 6: return ClaimSpec::realized_variance();
    case 7: return ClaimSpec::neg_abs();
    case 8: return ClaimSpec::affine(std::uniform_real_distribution<double>(-2, 3)(rng), random_claim(rng, depth + 1),
                                     std::uniform_real_distribution<double>(-1, 1)(rng));
    case 9: return ClaimSpec::max(random_claim(rng, depth + 1), random_claim(rng, depth + 1));
    default: return ClaimSpec::min(random_claim(rng, depth + 1), random_claim(rng, depth + 1));
  }
}

struct Instance {
  TimeGrid grid;
  VolRule rule;
  int m = 1;
  ClaimSpec claim;

  ScenarioSet set(KernelFamily::Tag tag) const { return ScenarioSet::build(grid, rule, KernelFamily::make(tag, m)); }
  Claim payoff() const { return build_claim(claim, grid); }
  std::string describe() const {
    return "N=" + std::to_string(grid.steps) + " dt=" + std::to_string(grid.dt) + " m=" + std::to_string(m) +
           " rule=" + rule.to_json().dump() + " claim=" + to_json(claim).dump();
  }
};

template <class Rng>
Instance random_instance(Rng& rng, int max_steps, int max_m) {
  static const std::vector<double> dts = {1.0, 0.5, 0.25};
  Instance in{TimeGrid::make(std::uniform_int_distribution<int>(1, max_steps)(rng),
                             dts[std::uniform_int_distribution<std::size_t>(0, dts.size() - 1)(rng)]),
              random_rule(rng), std::uniform_int_distribution<int>(2, max_m)(rng), random_claim(rng)};
  return in;
}

}  // namespace volsup::testing
