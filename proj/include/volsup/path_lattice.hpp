#pragma once

// Discrete path space: increment-labelled scenario trees, path concatenation,
// claim shifting and stopping rules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "volsup/errors.hpp"

namespace volsup {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

struct TimeGrid {
  int steps = 1;
  double dt = 1.0;

  static TimeGrid make(int steps, double dt) {
    if (steps < 1) throw InvalidInput("steps >= 1 required");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("dt > 0 required");
    return TimeGrid{steps, dt};
  }
  double horizon() const { return steps * dt; }
  bool operator==(const TimeGrid&) const = default;
};

/// A path started at 0, stored by its increments. The value at step k is the
/// left-to-right partial sum of the first k increments.
class DiscretePath {
 public:
  DiscretePath() = default;
  explicit DiscretePath(std::vector<double> increments) : inc_(std::move(increments)) {}
  DiscretePath(std::initializer_list<double> increments) : inc_(increments) {}

  std::size_t size() const { return inc_.size(); }
  bool empty() const { return inc_.empty(); }
  const std::vector<double>& increments() const { return inc_; }
  double increment(std::size_t k) const { return inc_.at(k); }

  double value_at(std::size_t step) const {
    if (step > inc_.size()) throw InvalidInput("step beyond path length");
    double v = 0.0;
    for (std::size_t k = 0; k < step; ++k) v += inc_[k];
    return v;
  }
  double terminal_value() const { return value_at(inc_.size()); }

  std::vector<double> values() const {
    std::vector<double> out(inc_.size() + 1, 0.0);
    for (std::size_t k = 0; k < inc_.size(); ++k) out[k + 1] = out[k] + inc_[k];
    return out;
  }

  DiscretePath truncated(std::size_t steps) const {
    if (steps > inc_.size()) throw InvalidInput("truncation beyond path length");
    return DiscretePath(std::vector<double>(inc_.begin(), inc_.begin() + steps));
  }
  DiscretePath tail_from(std::size_t step) const {
    if (step > inc_.size()) throw InvalidInput("tail start beyond path length");
    return DiscretePath(std::vector<double>(inc_.begin() + step, inc_.end()));
  }

  bool operator==(const DiscretePath&) const = default;

 private:
  std::vector<double> inc_;
};

/// Follows `prefix` on [0, at] and then moves by the increments of `tail`.
/// `max_steps`, when given, bounds the length of the result.
inline DiscretePath concat(const DiscretePath& prefix, std::size_t at, const DiscretePath& tail,
                           std::optional<std::size_t> max_steps = std::nullopt) {
  if (prefix.size() < at) throw InvalidInput("concat: prefix shorter than concatenation step");
  if (max_steps && at + tail.size() > *max_steps)
    throw InvalidInput("concat: combined length exceeds the horizon");
  std::vector<double> inc(prefix.increments().begin(), prefix.increments().begin() + at);
  inc.insert(inc.end(), tail.increments().begin(), tail.increments().end());
  return DiscretePath(std::move(inc));
}

/// A payoff on paths of exactly `steps` increments.
struct Claim {
  int steps = 0;
  bool terminal_only = false;
  std::function<double(const DiscretePath&)> fn;
  std::string description;

  double operator()(const DiscretePath& path) const {
    if (path.size() != static_cast<std::size_t>(steps))
      throw InvalidInput("claim evaluated on a path of length " + std::to_string(path.size()) +
                         ", expected " + std::to_string(steps));
    return fn(path);
  }
};

inline double eval_claim(const Claim& xi, const DiscretePath& path) { return xi(path); }

/// ξ^{at,prefix}(tail) := ξ(prefix ⊗_at tail), a claim on the remaining steps.
inline Claim shift_claim(const Claim& xi, std::size_t at, const DiscretePath& prefix) {
  if (prefix.size() < at) throw InvalidInput("shift_claim: prefix shorter than shift step");
  if (at > static_cast<std::size_t>(xi.steps)) throw InvalidInput("shift_claim: step beyond horizon");
  DiscretePath head = prefix.truncated(at);
  Claim out;
  out.steps = xi.steps - static_cast<int>(at);
  out.terminal_only = xi.terminal_only;
  out.description = xi.description;
  out.fn = [xi, head, at](const DiscretePath& tail) { return xi(concat(head, at, tail)); };
  return out;
}

/// Finite non-recombining event tree. Nodes are stored breadth first, so every
/// child has a larger id than its parent and siblings are contiguous in
/// increasing label order.
class ScenarioTree {
 public:
  struct Node {
    int step = 0;
    NodeId parent = kNoNode;
    double label = 0.0;  // increment on the edge from the parent
    double value = 0.0;  // path value at this node
    NodeId first_child = kNoNode;
    std::size_t child_count = 0;
  };

  using SupportFn = std::function<std::vector<double>(const DiscretePath& prefix)>;

  /// Grows the tree to `grid.steps`; `support(prefix)` gives the increment
  /// labels of the children of the node reached by `prefix`.
  static ScenarioTree build(const TimeGrid& grid, const SupportFn& support) {
    ScenarioTree t;
    t.grid_ = grid;
    t.nodes_.push_back(Node{});
    t.paths_.emplace_back();
    for (NodeId id = 0; id < t.nodes_.size(); ++id) {
      if (t.nodes_[id].step == grid.steps) continue;
      std::vector<double> labels = support(t.paths_[id]);
      if (labels.size() < 2) throw InvalidInput("every non-terminal node needs >= 2 children");
      for (std::size_t i = 1; i < labels.size(); ++i)
        if (!(labels[i - 1] < labels[i]))
          throw InvalidInput("child labels must be distinct and increasing");
      const NodeId first = t.nodes_.size();
      t.nodes_[id].first_child = first;
      t.nodes_[id].child_count = labels.size();
      for (double u : labels) {
        Node c;
        c.step = t.nodes_[id].step + 1;
        c.parent = id;
        c.label = u;
        c.value = t.nodes_[id].value + u;
        t.nodes_.push_back(c);
        std::vector<double> inc = t.paths_[id].increments();
        inc.push_back(u);
        t.paths_.emplace_back(std::move(inc));
      }
    }
    return t;
  }

  const TimeGrid& grid() const { return grid_; }
  int steps() const { return grid_.steps; }
  std::size_t size() const { return nodes_.size(); }
  static constexpr NodeId root() { return 0; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool is_leaf(NodeId id) const { return nodes_[id].step == grid_.steps; }

  /// Path prefix from the root to `id`.
  const DiscretePath& prefix(NodeId id) const { return paths_.at(id); }

  std::vector<NodeId> children(NodeId id) const {
    const Node& n = nodes_.at(id);
    std::vector<NodeId> out(n.child_count);
    for (std::size_t i = 0; i < n.child_count; ++i) out[i] = n.first_child + i;
    return out;
  }
  std::vector<double> child_labels(NodeId id) const {
    const Node& n = nodes_.at(id);
    std::vector<double> out(n.child_count);
    for (std::size_t i = 0; i < n.child_count; ++i) out[i] = nodes_[n.first_child + i].label;
    return out;
  }
  /// Exact label match.
  std::optional<NodeId> find_child(NodeId id, double increment) const {
    const Node& n = nodes_.at(id);
    for (std::size_t i = 0; i < n.child_count; ++i)
      if (nodes_[n.first_child + i].label == increment) return n.first_child + i;
    return std::nullopt;
  }
  std::optional<NodeId> find(const DiscretePath& path) const {
    NodeId id = root();
    for (double u : path.increments()) {
      auto c = find_child(id, u);
      if (!c) return std::nullopt;
      id = *c;
    }
    return id;
  }

  std::vector<NodeId> leaves() const { return nodes_at_step(grid_.steps); }
  std::vector<NodeId> nodes_at_step(int step) const {
    std::vector<NodeId> out;
    for (NodeId id = 0; id < nodes_.size(); ++id)
      if (nodes_[id].step == step) out.push_back(id);
    return out;
  }
  /// Ancestor of `id` at `step` (itself when steps agree).
  NodeId ancestor_at(NodeId id, int step) const {
    if (step > nodes_.at(id).step) throw InvalidInput("ancestor_at: step after node");
    while (nodes_[id].step > step) id = nodes_[id].parent;
    return id;
  }
  bool is_descendant(NodeId id, NodeId of) const {
    if (nodes_.at(id).step < nodes_.at(of).step) return false;
    return ancestor_at(id, nodes_[of].step) == of;
  }
  /// Leaves in the subtree of `id`, in id order.
  std::vector<NodeId> leaves_under(NodeId id) const {
    std::vector<NodeId> out;
    for (NodeId l : leaves())
      if (is_descendant(l, id)) out.push_back(l);
    return out;
  }

 private:
  TimeGrid grid_;
  std::vector<Node> nodes_;
  std::vector<DiscretePath> paths_;
};

/// Stop/continue flag per node; every step-N node stops. The stopping step of
/// a path is the step of the first stopping node along it.
class StoppingRule {
 public:
  static StoppingRule from_flags(const ScenarioTree& tree, std::vector<bool> stop) {
    if (stop.size() != tree.size()) throw InvalidInput("stopping rule must be total on the tree");
    for (NodeId id = 0; id < tree.size(); ++id)
      if (tree.is_leaf(id) && !stop[id]) throw InvalidInput("stopping rule must stop at step N");
    StoppingRule r;
    r.stop_ = std::move(stop);
    r.first_stop_.assign(tree.size(), kNoNode);
    for (NodeId id = 0; id < tree.size(); ++id) {
      const NodeId parent = tree.node(id).parent;
      const NodeId inherited = parent == kNoNode ? kNoNode : r.first_stop_[parent];
      r.first_stop_[id] = inherited != kNoNode ? inherited : (r.stop_[id] ? id : kNoNode);
    }
    return r;
  }

  /// τ ≡ step (clamped to N).
  static StoppingRule constant(const ScenarioTree& tree, int step) {
    std::vector<bool> stop(tree.size());
    for (NodeId id = 0; id < tree.size(); ++id)
      stop[id] = tree.node(id).step >= std::min(step, tree.steps());
    return from_flags(tree, std::move(stop));
  }

  std::size_t size() const { return stop_.size(); }
  bool flag(NodeId id) const { return stop_.at(id); }
  const std::vector<bool>& flags() const { return stop_; }

  /// First stopping node on the path through `id`, or kNoNode if the path
  /// has not stopped by `id`.
  NodeId stopped_at(NodeId id) const { return first_stop_.at(id); }
  /// Nodes where some path stops for the first time.
  std::vector<NodeId> stop_nodes() const {
    std::vector<NodeId> out;
    for (NodeId id = 0; id < stop_.size(); ++id)
      if (first_stop_[id] == id) out.push_back(id);
    return out;
  }
  /// Stop node of a leaf's path.
  NodeId stop_node_of_leaf(NodeId leaf) const { return first_stop_.at(leaf); }
  bool strictly_before_stop(NodeId id) const { return first_stop_.at(id) == kNoNode; }

  bool operator==(const StoppingRule& o) const { return stop_ == o.stop_; }

 private:
  std::vector<bool> stop_;
  std::vector<NodeId> first_stop_;
};

/// σ ≤ τ along every path.
inline bool precedes(const ScenarioTree& tree, const StoppingRule& sigma, const StoppingRule& tau) {
  for (NodeId leaf : tree.leaves())
    if (tree.node(sigma.stop_node_of_leaf(leaf)).step > tree.node(tau.stop_node_of_leaf(leaf)).step)
      return false;
  return true;
}

/// σ ∧ τ: stop at the first node where either rule stops.
inline StoppingRule earliest(const ScenarioTree& tree, const StoppingRule& a, const StoppingRule& b) {
  std::vector<bool> f(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id) f[id] = a.flag(id) || b.flag(id);
  return StoppingRule::from_flags(tree, std::move(f));
}

struct StoppingCheck {
  bool ok = true;
  std::string reason;
  /// For path functions: two leaves agreeing up to τ of the first with
  /// different τ. For node functions: the offending node in `first`.
  NodeId first = kNoNode;
  NodeId second = kNoNode;
};

/// Node-level candidate. nullopt marks a node the candidate does not cover.
inline StoppingCheck is_stopping_rule(const ScenarioTree& tree,
                                      const std::function<std::optional<bool>(NodeId)>& candidate) {
  StoppingCheck r;
  for (NodeId id = 0; id < tree.size(); ++id) {
    auto d = candidate(id);
    if (!d) throw InvalidInput("stopping candidate is not total (node " + std::to_string(id) + ")");
    // A node is its own prefix, so the decision is trivially prefix-determined;
    // what remains is the terminal condition.
    if (tree.is_leaf(id) && !*d && r.ok) {
      r.ok = false;
      r.reason = "does not stop at step N";
      r.first = id;
    }
  }
  return r;
}

/// Path-level candidate τ(ω) ∈ [0, N] given on full leaf paths. Galmarino's
/// test: τ(ω) = τ(ω') whenever ω and ω' agree up to step τ(ω).
inline StoppingCheck is_stopping_time(const ScenarioTree& tree,
                                      const std::function<int(const DiscretePath&)>& tau) {
  StoppingCheck r;
  const auto leaves = tree.leaves();
  std::vector<int> t(tree.size(), -1);
  for (NodeId l : leaves) {
    t[l] = tau(tree.prefix(l));
    if (t[l] < 0 || t[l] > tree.steps()) {
      r.ok = false;
      r.reason = "stopping step outside [0, N]";
      r.first = l;
      return r;
    }
  }
  for (NodeId l : leaves) {
    const NodeId at = tree.ancestor_at(l, t[l]);
    for (NodeId other : leaves) {
      if (other == l || t[other] == t[l]) continue;
      if (tree.ancestor_at(other, t[l]) == at) {
        r.ok = false;
        r.reason = "paths agree up to the stopping step but stop at different steps";
        r.first = l;
        r.second = other;
        return r;
      }
    }
  }
  return r;
}

/// Stops at the first node with |value| >= level, else at step N. Use
/// +infinity for "never hit".
inline StoppingRule hitting_rule(double level, const ScenarioTree& tree) {
  if (!(level >= 0.0)) throw InvalidInput("hitting level must be >= 0");
  std::vector<bool> stop(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id)
    stop[id] = tree.is_leaf(id) || std::abs(tree.node(id).value) >= level;
  return StoppingRule::from_flags(tree, std::move(stop));
}

}  // namespace volsup
