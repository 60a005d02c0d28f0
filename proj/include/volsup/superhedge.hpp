#pragma once

// Minimal superreplication on the scenario tree and the decomposition of the
// value process under a fixed policy.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "volsup/dp_engine.hpp"

namespace volsup {

/// Position in the underlying held over the step leaving each node (0 at leaves).
struct Hedge {
  std::vector<double> h;
};

struct SuperhedgeResult {
  double capital = 0.0;
  Hedge hedge;
  std::vector<double> x;  // minimal superhedging capital at every node
};

/// Backward minimax X(node) = min_h max_{u in U} (X(child_u) - h u). The
/// minimizing h sits at a slope through a pair a < 0 < b of the support, so
/// the candidates are those slopes; ties go to the smallest pair in (|a|, b).
/// The hedger faces the whole tree support whatever the kernel family.
inline SuperhedgeResult minimal_superhedge(const Claim& xi, const ScenarioSet& set) {
  const auto& tree = set.tree();
  if (xi.steps != tree.steps()) throw InvalidInput("claim horizon does not match the tree");
  SuperhedgeResult r;
  r.x.assign(tree.size(), 0.0);
  r.hedge.h.assign(tree.size(), 0.0);
  for (NodeId id = tree.size(); id-- > 0;) {
    if (tree.is_leaf(id)) {
      r.x[id] = xi(tree.prefix(id));
      continue;
    }
    const auto& n = tree.node(id);
    const auto u = tree.child_labels(id);
    const double* xc = r.x.data() + n.first_child;
    auto worst_shortfall = [&](double h) {
      double g = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < u.size(); ++i) g = std::max(g, xc[i] - h * u[i]);
      return g;
    };
    std::vector<std::size_t> neg, pos;
    for (std::size_t i = 0; i < u.size(); ++i) (u[i] < 0 ? neg : pos).push_back(i);
    if (neg.empty() || pos.empty()) throw InvalidInput("superhedge: support must straddle 0");
    std::reverse(neg.begin(), neg.end());
    std::vector<std::pair<double, double>> cands;  // (capital, slope)
    for (std::size_t ia : neg)
      for (std::size_t ib : pos) {
        const double slope = (xc[ib] - xc[ia]) / (u[ib] - u[ia]);
        cands.emplace_back(worst_shortfall(slope), slope);
      }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = std::min(best, c.first);
    const double slack = kTieTol * (1.0 + std::abs(best));
    for (const auto& c : cands)
      if (c.first <= best + slack) {
        r.hedge.h[id] = c.second;
        break;
      }
    r.x[id] = best;
  }
  r.capital = r.x[0];
  return r;
}

struct SuperhedgeCheck {
  double min_slack = std::numeric_limits<double>::infinity();
  std::size_t tight = 0;
  NodeId worst_leaf = kNoNode;
  std::vector<NodeId> tight_leaves;
};

inline constexpr double kTightTol = 1e-9;

/// slack(ω) = x + Σ_k H(node_k) ΔB_k - ξ(ω) over every leaf path.
inline SuperhedgeCheck verify_superhedge(double x, const Hedge& hedge, const Claim& xi,
                                         const ScenarioTree& tree) {
  if (hedge.h.size() != tree.size()) throw InvalidInput("hedge must be total on the tree");
  std::vector<double> gains(tree.size(), 0.0);
  for (NodeId id = 1; id < tree.size(); ++id) {
    const auto& n = tree.node(id);
    gains[id] = gains[n.parent] + hedge.h[n.parent] * n.label;
  }
  SuperhedgeCheck c;
  for (NodeId l : tree.leaves()) {
    const double s = x + gains[l] - xi(tree.prefix(l));
    if (s < c.min_slack) {
      c.min_slack = s;
      c.worst_leaf = l;
    }
    if (s <= kTightTol) {
      ++c.tight;
      c.tight_leaves.push_back(l);
    }
  }
  return c;
}

struct DualityReport {
  double primal = 0.0;  // sup over policies of E^P[ξ]
  double dual = 0.0;    // minimal superhedging capital
  double gap = 0.0;     // dual - primal
  NodeId worst_leaf = kNoNode;
  DiscretePath worst_path;
  std::vector<NodeId> tight_leaves;
  double min_slack = 0.0;
};

inline DualityReport duality_report(const Claim& xi, const ScenarioSet& set) {
  DualityReport d;
  d.primal = sublinear_expectation(xi, set).root();
  const auto sh = minimal_superhedge(xi, set);
  d.dual = sh.capital;
  d.gap = d.dual - d.primal;
  const auto chk = verify_superhedge(sh.capital, sh.hedge, xi, set.tree());
  d.worst_leaf = chk.worst_leaf;
  d.worst_path = set.tree().prefix(chk.worst_leaf);
  d.tight_leaves = chk.tight_leaves;
  d.min_slack = chk.min_slack;
  return d;
}

/// Y = Y_0 + Σ H^P ΔB - K under a two-point policy, node by node.
struct DoobMeyerParts {
  std::vector<double> h;   // H^P at each non-terminal node
  std::vector<double> dk;  // compensator increment ΔK at each non-terminal node
};

inline DoobMeyerParts doob_meyer(const ScenarioSet& set, const ValueSurface& y, const Policy& p) {
  const auto& tree = set.tree();
  DoobMeyerParts d;
  d.h.assign(tree.size(), 0.0);
  d.dk.assign(tree.size(), 0.0);
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    const Kernel& k = p.kernels.at(id);
    if (!k.is_symmetric_two_point())
      throw InvalidInput("doob_meyer: node " + std::to_string(id) + " has no symmetric two-point kernel");
    const double u = k.atoms[1].increment;
    auto up = tree.find_child(id, u), down = tree.find_child(id, -u);
    if (!up || !down) throw InvalidInput("doob_meyer: kernel outside the support");
    d.h[id] = (y.y[*up] - y.y[*down]) / (2.0 * u);
    d.dk[id] = y.y[id] - (k.atoms[0].prob * y.y[*down] + k.atoms[1].prob * y.y[*up]);
  }
  return d;
}

/// max |ΔY - (H^P ΔB - ΔK)| over the edges charged by p.
inline double doob_meyer_residual(const ScenarioSet& set, const ValueSurface& y, const Policy& p,
                                  const DoobMeyerParts& d) {
  const auto& tree = set.tree();
  double worst = 0.0;
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    for (const auto& a : p.kernels[id].atoms) {
      const NodeId c = *tree.find_child(id, a.increment);
      worst = std::max(worst, std::abs((y.y[c] - y.y[id]) - (d.h[id] * a.increment - d.dk[id])));
    }
  }
  return worst;
}

/// H = E_p[ΔY ΔB] / E_p[ΔB²] at each node.
inline Hedge covariation_hedge(const ScenarioSet& set, const ValueSurface& y, const Policy& p) {
  const auto& tree = set.tree();
  Hedge h;
  h.h.assign(tree.size(), 0.0);
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    double cov = 0.0, qv = 0.0;
    for (const auto& a : p.kernels.at(id).atoms) {
      auto c = tree.find_child(id, a.increment);
      if (!c) throw InvalidInput("covariation_hedge: kernel outside the support");
      cov += a.prob * (y.y[*c] - y.y[id]) * a.increment;
      qv += a.prob * a.increment * a.increment;
    }
    h.h[id] = cov / qv;
  }
  return h;
}

struct AdmissibilityReport {
  bool martingale_ok = true;
  double max_drift = 0.0;  // max |h E[ΔB]| over nodes and vertex kernels
  bool floor_ok = true;
  double min_gain = 0.0;   // min of Σ H ΔB over all nodes
  NodeId witness = kNoNode;
};

/// (a) the gains process has zero one-step drift under every member kernel
/// (checked on the vertex kernels, whose convex hull holds the rest);
/// (b) the gains process stays above `floor` on every path of the tree.
inline AdmissibilityReport admissibility_check(const Hedge& hedge, const ScenarioSet& set, double floor) {
  const auto& tree = set.tree();
  if (hedge.h.size() != tree.size()) throw InvalidInput("hedge must be total on the tree");
  AdmissibilityReport r;
  std::vector<double> gains(tree.size(), 0.0);
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (id != 0) {
      const auto& n = tree.node(id);
      gains[id] = gains[n.parent] + hedge.h[n.parent] * n.label;
    }
    if (gains[id] < r.min_gain) {
      r.min_gain = gains[id];
      if (gains[id] < floor) r.witness = id;
    }
    if (tree.is_leaf(id)) continue;
    for (const auto& k : node_choices(set, id)) {
      if (!membership_kernel_ok(k, set, id)) continue;
      r.max_drift = std::max(r.max_drift, std::abs(hedge.h[id] * k.mean()));
    }
  }
  r.martingale_ok = r.max_drift <= kKernelTol;
  r.floor_ok = r.min_gain >= floor;
  return r;
}

inline void write_hedge_csv(std::ostream& os, const ScenarioTree& tree, const Hedge& hedge,
                            const std::vector<double>& dk) {
  os.precision(17);
  os << "node,step,h,dK\n";
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    os << id << ',' << tree.node(id).step << ',' << hedge.h[id] << ',' << (dk.empty() ? 0.0 : dk[id])
       << '\n';
  }
}

}  // namespace volsup
