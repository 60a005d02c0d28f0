#pragma once

// Conditional sublinear expectation by backward recursion over the scenario
// tree, with the independent oracles used to check it: policy enumeration,
// subtree re-evaluation (tower / esssup forms) and an explicit finite
// difference scheme for the Barenblatt equation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "volsup/claims.hpp"
#include "volsup/path_lattice.hpp"
#include "volsup/uncertainty.hpp"

namespace volsup {

/// Maximizer of a one-step problem. For the two-point family the pair is
/// (-s_i, s_i) and `variance_index` is i; for the polytope it is the
/// supporting pair (a, b) of the concave envelope at 0.
struct NodeChoice {
  double value = 0.0;
  int variance_index = -1;
  double lo_atom = 0.0;
  double hi_atom = 0.0;

  Kernel kernel(KernelFamily::Tag tag) const {
    if (tag == KernelFamily::Tag::TwoPointSymmetric) return Kernel::symmetric(hi_atom);
    return Kernel::pair(lo_atom, hi_atom);
  }
};

inline constexpr double kTieTol = 1e-14;

/// One-step sup on a support already known to match the node's band.
/// `values[i]` is the continuation value after increment `support[i]`.
inline NodeChoice node_sup_on_support(std::span<const double> support, std::span<const double> values,
                                      KernelFamily::Tag tag) {
  const std::size_t n = support.size();
  const std::size_t half = n / 2;
  struct Cand {
    double value;
    int vi;
    double a, b;
  };
  std::vector<Cand> cands;
  if (tag == KernelFamily::Tag::TwoPointSymmetric) {
    for (std::size_t i = 0; i < half; ++i)
      cands.push_back({0.5 * (values[half + i] + values[half - 1 - i]), static_cast<int>(i),
                       support[half - 1 - i], support[half + i]});
  } else {
    // negatives by increasing |a|, positives increasing
    for (std::size_t ia = half; ia-- > 0;)
      for (std::size_t ib = half; ib < n; ++ib) {
        const double a = support[ia], b = support[ib];
        cands.push_back({(b * values[ia] - a * values[ib]) / (b - a), -1, a, b});
      }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : cands) best = std::max(best, c.value);
  const double slack = kTieTol * (1.0 + std::abs(best));
  for (const auto& c : cands)
    if (c.value >= best - slack) return NodeChoice{best, c.vi, c.a, c.b};
  return NodeChoice{best};
}

/// sup over the family's one-step kernels of E[f(ΔB)], where f is given on
/// the node support U = support_points(band, dt, m).
inline NodeChoice node_sup(std::span<const double> support, std::span<const double> values,
                           const KernelFamily& family, const VolBand& band, double dt) {
  const auto expected = support_points(band, dt, family.m);
  if (support.size() != values.size()) throw InvalidInput("node_sup: one value per support point");
  if (!std::equal(support.begin(), support.end(), expected.begin(), expected.end()))
    throw InvalidInput("node_sup: children are not keyed by the node support");
  return node_sup_on_support(support, values, family.tag);
}

/// Node-indexed conditional sublinear expectation E_t(ξ) and the maximizer
/// at every non-terminal node.
struct ValueSurface {
  std::vector<double> y;
  std::vector<NodeChoice> choice;
  double root() const { return y.at(0); }
};

inline ValueSurface sublinear_expectation(const Claim& xi, const ScenarioSet& set) {
  const auto& tree = set.tree();
  if (xi.steps != tree.steps()) throw InvalidInput("claim horizon does not match the tree");
  ValueSurface s;
  s.y.assign(tree.size(), 0.0);
  s.choice.assign(tree.size(), NodeChoice{});
  for (NodeId id = tree.size(); id-- > 0;) {
    if (tree.is_leaf(id)) {
      s.y[id] = xi(tree.prefix(id));
      s.choice[id].value = s.y[id];
      continue;
    }
    const auto& n = tree.node(id);
    const auto labels = tree.child_labels(id);
    std::span<const double> vals(s.y.data() + n.first_child, n.child_count);
    s.choice[id] = node_sup(labels, vals, set.family(), set.tree_band(id), set.dt());
    s.y[id] = s.choice[id].value;
  }
  return s;
}

/// The policy that plays the maximizer at every node.
inline Policy argmax_policy(const ScenarioSet& set, const ValueSurface& y) {
  const auto& tree = set.tree();
  Policy p;
  p.kernels.resize(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id)
    if (!tree.is_leaf(id)) p.kernels[id] = y.choice[id].kernel(set.family().tag);
  return p;
}

struct BruteForceResult {
  double value = -std::numeric_limits<double>::infinity();
  Policy argmax;
  double policies = 0.0;
};

/// max over enumerated policies of E^p[ξ], each expectation summed over
/// leaves with path probabilities. For the polytope, vertex policies suffice.
inline BruteForceResult brute_force_price(const Claim& xi, const ScenarioSet& set,
                                          std::uint64_t cap = kDefaultPolicyCap) {
  const auto& tree = set.tree();
  const auto leaves = tree.leaves();
  std::vector<double> payoff;
  payoff.reserve(leaves.size());
  for (NodeId l : leaves) payoff.push_back(xi(tree.prefix(l)));
  BruteForceResult r;
  r.policies = count_policies(set);
  for_each_policy(set, [&](const Policy& p) {
    double e = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) e += measure_of(tree, p, leaves[i]) * payoff[i];
    if (e > r.value) {
      r.value = e;
      r.argmax = p;
    }
  }, cap);
  return r;
}

/// E_t(ξ) at `id` recomputed from scratch on the conditional set.
inline double conditional_price(const Claim& xi, const ScenarioSet& set, NodeId id) {
  const auto& tree = set.tree();
  const Claim shifted = shift_claim(xi, static_cast<std::size_t>(tree.node(id).step), tree.prefix(id));
  return sublinear_expectation(shifted, set.subset(id)).root();
}

/// max |E_σ(ξ) - E_σ(E_τ(ξ))| over σ-nodes. Both sides are evaluated on the
/// conditional sets; E_τ(ξ) enters as a claim through the τ-node of each path.
inline double check_tower(const Claim& xi, const ScenarioSet& set, const StoppingRule& sigma,
                          const StoppingRule& tau) {
  const auto& tree = set.tree();
  if (!precedes(tree, sigma, tau)) throw InvalidInput("check_tower: sigma must precede tau");
  std::map<NodeId, double> at_tau;
  for (NodeId s : tau.stop_nodes()) at_tau[s] = conditional_price(xi, set, s);
  std::vector<double> eta_leaf(tree.size(), 0.0);
  for (NodeId l : tree.leaves()) eta_leaf[l] = at_tau.at(tau.stop_node_of_leaf(l));

  Claim eta;
  eta.steps = tree.steps();
  eta.description = "E_tau(xi)";
  eta.fn = [&tree, eta_leaf](const DiscretePath& path) {
    auto leaf = tree.find(path);
    if (!leaf) throw InvalidInput("E_tau claim evaluated off the tree");
    return eta_leaf[*leaf];
  };
  double worst = 0.0;
  for (NodeId r : sigma.stop_nodes())
    worst = std::max(worst, std::abs(conditional_price(xi, set, r) - conditional_price(eta, set, r)));
  return worst;
}

/// max over σ-nodes reached by p of |E_σ(ξ) - max_{P' = p before σ} E^{P'}[ξ | σ-node]|.
/// The competitors P' paste an enumerated member continuation at the σ-node
/// and keep p elsewhere.
inline double esssup_form(const Claim& xi, const ScenarioSet& set, const Policy& p,
                          const StoppingRule& sigma, std::uint64_t cap = kDefaultPolicyCap) {
  if (auto m = membership(p, set); !m) throw InvalidInput("esssup_form: policy is not a member: " + m.reason);
  const auto y = sublinear_expectation(xi, set);
  const auto stops = sigma.stop_nodes();
  PastingKernel base;
  for (NodeId s : stops) base[s] = condition_policy(set, p, s);
  double worst = 0.0;
  for (NodeId r : stops) {
    if (!(measure_of(set, p, r) > 0.0)) continue;
    const ScenarioSet sub = set.subset(r);
    double best = -std::numeric_limits<double>::infinity();
    for_each_policy(sub, [&](const Policy& q) {
      if (!membership(q, sub)) return;
      PastingKernel nu = base;
      nu[r] = q;
      const Policy competitor = paste(set, p, sigma, nu);
      best = std::max(best, conditional_expectation(set, competitor, xi, r));
    }, cap);
    worst = std::max(worst, std::abs(y.y[r] - best));
  }
  return worst;
}

struct SupermartingaleResult {
  double min_slack = std::numeric_limits<double>::infinity();
  NodeId node = kNoNode;
};

/// min over non-terminal nodes of Y(node) - E_p[Y(child)].
inline SupermartingaleResult supermartingale_check(const ScenarioSet& set, const ValueSurface& y,
                                                   const Policy& p) {
  const auto& tree = set.tree();
  SupermartingaleResult r;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    double e = 0.0;
    for (const auto& a : p.kernels.at(id).atoms) {
      auto c = tree.find_child(id, a.increment);
      if (!c) throw InvalidInput("policy charges an increment outside the support");
      e += a.prob * y.y[*c];
    }
    const double slack = y.y[id] - e;
    if (slack < r.min_slack) {
      r.min_slack = slack;
      r.node = id;
    }
  }
  return r;
}

inline void write_surface_csv(std::ostream& os, const ScenarioTree& tree, const ValueSurface& y) {
  os.precision(17);
  os << "node,step,path_value,Y\n";
  for (NodeId id = 0; id < tree.size(); ++id)
    os << id << ',' << tree.node(id).step << ',' << tree.node(id).value << ',' << y.y[id] << '\n';
}

// ---------------------------------------------------------------------------
// Recombining lattice for Markov rules and terminal payoffs.

struct LatticeResult {
  double value = 0.0;
  double quantum = 0.0;      // state spacing
  std::size_t states = 0;    // states per time slice
};

/// Same recursion as sublinear_expectation, but on the recombining value
/// lattice {j q}. Requires a terminal-only claim, a Markov rule and supports
/// that are integer multiples of a common quantum q.
inline LatticeResult lattice_price(const Claim& xi, const TimeGrid& grid, const VolRule& rule,
                                   const KernelFamily& family) {
  if (!xi.terminal_only) throw InvalidInput("lattice_price: claim must depend on B_N only");
  if (xi.steps != grid.steps) throw InvalidInput("lattice_price: claim horizon does not match the grid");
  if (!rule.markov()) throw InvalidInput("lattice_price: rule must be Markov in the path value");

  struct BandSupport {
    VolBand band;
    std::vector<double> support;
    std::vector<long> mult;
  };
  std::vector<BandSupport> bands;
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& b : rule.possible_bands()) {
    bands.push_back({b, support_points(b, grid.dt, family.m), {}});
    for (double u : bands.back().support) smallest = std::min(smallest, std::abs(u));
  }
  double q = 0.0;
  for (int k = 1; k <= 16 && q == 0.0; ++k) {
    const double cand = smallest / k;
    bool ok = true;
    for (const auto& bs : bands)
      for (double u : bs.support) {
        const double r = u / cand;
        if (std::abs(r - std::round(r)) > 1e-9 * std::abs(r)) ok = false;
      }
    if (ok) q = cand;
  }
  if (q == 0.0) throw InvalidInput("lattice_price: support points are not commensurate");
  long maxm = 0;
  for (auto& bs : bands)
    for (double u : bs.support) {
      bs.mult.push_back(std::lround(u / q));
      maxm = std::max(maxm, std::abs(bs.mult.back()));
    }

  const long reach = maxm * grid.steps;
  const std::size_t width = static_cast<std::size_t>(2 * reach + 1);
  const auto f = terminal_payoff(xi);
  std::vector<double> v(width), next(width);
  for (long j = -reach; j <= reach; ++j) v[j + reach] = f(static_cast<double>(j) * q);
  std::vector<double> vals;
  for (int k = grid.steps - 1; k >= 0; --k) {
    const long span = maxm * k;
    for (long j = -span; j <= span; ++j) {
      const VolBand b = rule.band_at_value(static_cast<double>(j) * q);
      const auto& bs = *std::find_if(bands.begin(), bands.end(),
                                     [&](const BandSupport& s) { return s.band == b; });
      vals.resize(bs.mult.size());
      for (std::size_t i = 0; i < bs.mult.size(); ++i) vals[i] = v[j + bs.mult[i] + reach];
      next[j + reach] = node_sup_on_support(bs.support, vals, family.tag).value;
    }
    std::swap(v, next);
  }
  return LatticeResult{v[reach], q, width};
}

// ---------------------------------------------------------------------------
// Explicit finite differences for u_t + sup_{v in {lo,hi}} (v/2) u_xx = 0.

struct PdeGrid {
  double h = 0.05;     // space step
  double radius = 6;   // grid covers [-radius, radius]
  double k = 0.0005;   // time step (shortened so that it divides the horizon)
  VolBand band;

  void validate() const {
    if (!(h > 0.0) || !(radius > 0.0) || !(k > 0.0)) throw InvalidInput("pde grid: h, R, k > 0 required");
    if (k * band.hi / (h * h) > 1.0 + 1e-12)
      throw InvalidInput("pde grid: unstable, k*hi/h^2 = " + std::to_string(k * band.hi / (h * h)) + " > 1");
  }
};

/// u(0, 0) for terminal payoff f at horizon T. Constant extrapolation at ±R.
inline double barenblatt_fd(const std::function<double(double)>& f, double horizon, const PdeGrid& grid) {
  grid.validate();
  if (!(horizon > 0.0)) throw InvalidInput("pde: horizon > 0 required");
  const long half = std::lround(grid.radius / grid.h);
  const std::size_t n = static_cast<std::size_t>(2 * half + 1);
  const long steps = static_cast<long>(std::ceil(horizon / grid.k - 1e-9));
  const double k = horizon / static_cast<double>(steps);
  std::vector<double> u(n), next(n);
  for (long j = -half; j <= half; ++j) u[j + half] = f(static_cast<double>(j) * grid.h);
  const double lo = 0.5 * grid.band.lo * k / (grid.h * grid.h);
  const double hi = 0.5 * grid.band.hi * k / (grid.h * grid.h);
  for (long s = 0; s < steps; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      const double left = u[j == 0 ? 0 : j - 1];
      const double right = u[j + 1 == n ? j : j + 1];
      const double d2 = left - 2.0 * u[j] + right;
      next[j] = u[j] + std::max(lo * d2, hi * d2);
    }
    std::swap(u, next);
  }
  return u[half];
}

}  // namespace volsup
