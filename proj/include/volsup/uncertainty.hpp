#pragma once

// The scenario set: path-dependent variance bands, one-step martingale
// kernels, adapted policies and the operations under which the set of
// policies must be stable (conditioning, pasting, mixing over an event).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "volsup/path_lattice.hpp"

namespace volsup {

inline constexpr double kKernelTol = 1e-12;

/// Admissible variance per unit time, [lo, hi] with 0 < lo <= hi.
struct VolBand {
  double lo = 1.0;
  double hi = 1.0;

  static VolBand make(double lo, double hi) {
    if (!(lo > 0.0)) throw InvalidInput("band: lo > 0 required");
    if (lo > hi) throw InvalidInput("band: lo > hi");
    if (!std::isfinite(hi)) throw InvalidInput("band: hi must be finite");
    return VolBand{lo, hi};
  }
  bool operator==(const VolBand&) const = default;
  bool operator<(const VolBand& o) const { return lo < o.lo || (lo == o.lo && hi < o.hi); }
};

/// Band as a function of the path so far. Constant and level-scaled rules are
/// Markov in the current path value; custom rules may look at the whole path.
class VolRule {
 public:
  enum class Kind { Constant, LevelScaled, Custom };

  static VolRule constant(VolBand band) {
    VolRule r;
    r.kind_ = Kind::Constant;
    r.inner_ = r.outer_ = band;
    return r;
  }
  /// inner band while |value| < threshold, outer band otherwise.
  static VolRule level_scaled(double threshold, VolBand inner, VolBand outer) {
    if (!(threshold >= 0.0)) throw InvalidInput("level_scaled: threshold >= 0 required");
    VolRule r;
    r.kind_ = Kind::LevelScaled;
    r.threshold_ = threshold;
    r.inner_ = inner;
    r.outer_ = outer;
    return r;
  }
  static VolRule custom(std::string name, std::function<VolBand(const DiscretePath&)> fn) {
    VolRule r;
    r.kind_ = Kind::Custom;
    r.name_ = std::move(name);
    r.custom_ = std::make_shared<const std::function<VolBand(const DiscretePath&)>>(std::move(fn));
    return r;
  }

  Kind kind() const { return kind_; }
  bool markov() const { return kind_ != Kind::Custom && prefix_.empty(); }
  const DiscretePath& prefix() const { return prefix_; }

  /// Band at the node reached by `path` (a continuation of the prefix this
  /// rule was shifted by).
  VolBand operator()(const DiscretePath& path) const {
    if (prefix_.empty()) return evaluate(path);
    return evaluate(concat(prefix_, prefix_.size(), path));
  }

  /// The same rule seen from the node reached by `prefix`.
  VolRule shifted(const DiscretePath& prefix) const {
    VolRule r = *this;
    r.prefix_ = concat(prefix_, prefix_.size(), prefix);
    return r;
  }

  /// Band at current value `x`, for Markov rules.
  VolBand band_at_value(double x) const {
    if (!markov()) throw InvalidInput("band_at_value needs an unshifted Markov rule");
    if (kind_ == Kind::Constant) return inner_;
    return std::abs(x) < threshold_ ? inner_ : outer_;
  }
  std::vector<VolBand> possible_bands() const {
    if (kind_ == Kind::Custom) throw InvalidInput("custom rules have no finite band list");
    if (kind_ == Kind::Constant || inner_ == outer_) return {inner_};
    return {inner_, outer_};
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case Kind::Constant:
        return {{"constant", {inner_.lo, inner_.hi}}};
      case Kind::LevelScaled:
        return {{"level_scaled",
                 {{"threshold", threshold_},
                  {"inner", {inner_.lo, inner_.hi}},
                  {"outer", {outer_.lo, outer_.hi}}}}};
      case Kind::Custom:
        break;
    }
    return {{"custom", name_}};
  }

  bool operator==(const VolRule& o) const {
    return kind_ == o.kind_ && threshold_ == o.threshold_ && inner_ == o.inner_ &&
           outer_ == o.outer_ && name_ == o.name_ && custom_ == o.custom_ && prefix_ == o.prefix_;
  }

 private:
  VolBand evaluate(const DiscretePath& full) const {
    switch (kind_) {
      case Kind::Constant:
        return inner_;
      case Kind::LevelScaled:
        return std::abs(full.terminal_value()) < threshold_ ? inner_ : outer_;
      case Kind::Custom:
        return (*custom_)(full);
    }
    return inner_;
  }

  Kind kind_ = Kind::Constant;
  double threshold_ = 0.0;
  VolBand inner_, outer_;
  std::string name_;
  std::shared_ptr<const std::function<VolBand(const DiscretePath&)>> custom_;
  DiscretePath prefix_;
};

/// m equally spaced variances in [lo, hi]; a degenerate band yields one.
inline std::vector<double> band_variances(const VolBand& band, int m) {
  if (m < 1) throw InvalidInput("band discretization m >= 1 required");
  if (band.lo == band.hi) return {band.lo};
  if (m == 1) throw InvalidInput("m = 1 needs lo == hi (ambiguous variance)");
  std::vector<double> v(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) v[i] = band.lo + (band.hi - band.lo) * i / (m - 1);
  v.back() = band.hi;
  return v;
}

/// {±sqrt(v_i dt)} sorted ascending.
inline std::vector<double> support_points(const VolBand& band, double dt, int m) {
  if (!(dt > 0.0)) throw InvalidInput("support_points: dt > 0 required");
  const auto vars = band_variances(band, m);
  std::vector<double> out;
  out.reserve(2 * vars.size());
  for (auto it = vars.rbegin(); it != vars.rend(); ++it) out.push_back(-std::sqrt(*it * dt));
  for (double v : vars) out.push_back(std::sqrt(v * dt));
  return out;
}

struct Atom {
  double increment = 0.0;
  double prob = 0.0;
  bool operator==(const Atom&) const = default;
};

/// One-step transition law of the increment.
struct Kernel {
  std::vector<Atom> atoms;

  static Kernel symmetric(double s) { return Kernel{{{-s, 0.5}, {s, 0.5}}}; }
  /// The unique mean-zero law on {a, b}, a < 0 < b.
  static Kernel pair(double a, double b) {
    if (!(a < 0.0 && b > 0.0)) throw InvalidInput("pair kernel needs a < 0 < b");
    return Kernel{{{a, b / (b - a)}, {b, -a / (b - a)}}};
  }

  double total() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.prob;
    return s;
  }
  double mean() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.prob * a.increment;
    return s;
  }
  double variance() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.prob * a.increment * a.increment;
    return s;
  }
  double prob_of(double increment) const {
    for (const auto& a : atoms)
      if (a.increment == increment) return a.prob;
    return 0.0;
  }
  bool is_symmetric_two_point() const {
    return atoms.size() == 2 && atoms[0].increment == -atoms[1].increment &&
           std::abs(atoms[0].prob - 0.5) <= kKernelTol && std::abs(atoms[1].prob - 0.5) <= kKernelTol;
  }
  bool operator==(const Kernel&) const = default;
};

struct KernelFamily {
  enum class Tag { TwoPointSymmetric, MartingalePolytope };
  Tag tag = Tag::TwoPointSymmetric;
  int m = 1;

  static KernelFamily make(Tag tag, int m) {
    if (m < 1) throw InvalidInput("family: m >= 1 required");
    return KernelFamily{tag, m};
  }
  static KernelFamily two_point(int m) { return make(Tag::TwoPointSymmetric, m); }
  static KernelFamily polytope(int m) { return make(Tag::MartingalePolytope, m); }
  bool operator==(const KernelFamily&) const = default;
};

inline std::string to_string(KernelFamily::Tag t) {
  return t == KernelFamily::Tag::TwoPointSymmetric ? "two-point" : "polytope";
}
inline KernelFamily::Tag family_tag_from_string(const std::string& s) {
  if (s == "two-point") return KernelFamily::Tag::TwoPointSymmetric;
  if (s == "polytope") return KernelFamily::Tag::MartingalePolytope;
  throw InvalidInput("family tag must be \"two-point\" or \"polytope\", got \"" + s + "\"");
}

/// One kernel per node, indexed by node id; leaves carry an empty kernel.
struct Policy {
  std::vector<Kernel> kernels;
  bool operator==(const Policy&) const = default;
};

/// Stop node -> policy on the subtree rooted there (subtree-local node ids).
using PastingKernel = std::map<NodeId, Policy>;

class ScenarioSet {
 public:
  static ScenarioSet build(const TimeGrid& grid, VolRule rule, KernelFamily family) {
    const double dt = grid.dt;
    const int m = family.m;
    auto tree = std::make_shared<const ScenarioTree>(ScenarioTree::build(
        grid, [&](const DiscretePath& prefix) { return support_points(rule(prefix), dt, m); }));
    return ScenarioSet(std::move(tree), rule, rule, family);
  }

  const ScenarioTree& tree() const { return *tree_; }
  const TimeGrid& grid() const { return tree_->grid(); }
  double dt() const { return tree_->grid().dt; }
  const VolRule& rule() const { return rule_; }
  const VolRule& conditional_rule() const { return conditional_rule_; }
  const KernelFamily& family() const { return family_; }

  /// Band the membership test applies at `id`.
  const VolBand& band(NodeId id) const { return bands_.at(id); }
  /// Band the child labels of `id` were generated from.
  const VolBand& tree_band(NodeId id) const { return tree_bands_.at(id); }
  std::vector<double> support(NodeId id) const { return tree_->child_labels(id); }

  /// Subtree node ids in subtree-local order (local id i -> global id).
  std::vector<NodeId> subtree_nodes(NodeId id) const {
    std::vector<NodeId> out{id};
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& n = tree_->node(out[i]);
      for (std::size_t c = 0; c < n.child_count; ++c) out.push_back(n.first_child + c);
    }
    return out;
  }

  /// The conditional scenario set at `id`, in tail coordinates (paths restart
  /// at 0). Conditional sets derive from the rule the tree was built from.
  ScenarioSet subset(NodeId id) const {
    const auto& prefix = tree_->prefix(id);
    TimeGrid g{tree_->steps() - tree_->node(id).step, dt()};
    VolRule r = conditional_rule_.shifted(prefix);
    auto sub = std::make_shared<const ScenarioTree>(ScenarioTree::build(
        g, [&](const DiscretePath& p) { return support_points(r(p), g.dt, family_.m); }));
    const auto map = subtree_nodes(id);
    if (map.size() != sub->size()) throw std::logic_error("subtree shape mismatch");
    for (NodeId i = 0; i < map.size(); ++i)
      if (sub->node(i).label != tree_->node(map[i]).label && i != 0)
        throw std::logic_error("subtree labels differ from the parent tree");
    return ScenarioSet(std::move(sub), r, r, family_);
  }

  /// Replaces the band used for membership while keeping the tree and the
  /// conditional sets. Used to inject inconsistent families in tests.
  ScenarioSet with_membership_rule(VolRule rule) const {
    return ScenarioSet(tree_, std::move(rule), conditional_rule_, family_);
  }

 private:
  ScenarioSet(std::shared_ptr<const ScenarioTree> tree, VolRule rule, VolRule conditional,
              KernelFamily family)
      : tree_(std::move(tree)),
        rule_(std::move(rule)),
        conditional_rule_(std::move(conditional)),
        family_(family) {
    bands_.resize(tree_->size());
    tree_bands_.resize(tree_->size());
    for (NodeId id = 0; id < tree_->size(); ++id) {
      bands_[id] = rule_(tree_->prefix(id));
      tree_bands_[id] = conditional_rule_(tree_->prefix(id));
    }
  }

  std::shared_ptr<const ScenarioTree> tree_;
  VolRule rule_;
  VolRule conditional_rule_;
  KernelFamily family_;
  std::vector<VolBand> bands_;
  std::vector<VolBand> tree_bands_;
};

/// The kernels a policy may pick at `id` when enumerating: symmetric pairs
/// for the two-point family, two-atom vertices of the mean-zero polytope
/// otherwise. Pairs are ordered by (|a|, b).
inline std::vector<Kernel> node_choices(const ScenarioSet& set, NodeId id) {
  const auto u = set.support(id);
  std::vector<Kernel> out;
  if (u.empty()) return out;
  const std::size_t half = u.size() / 2;
  if (set.family().tag == KernelFamily::Tag::TwoPointSymmetric) {
    for (std::size_t i = 0; i < half; ++i) {
      const double s = u[half + i];
      if (u[half - 1 - i] != -s) throw InvalidInput("two-point family needs a symmetric support");
      out.push_back(Kernel::symmetric(s));
    }
  } else {
    std::vector<double> neg, pos;
    for (double x : u) (x < 0 ? neg : pos).push_back(x);
    std::sort(neg.begin(), neg.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    for (double a : neg)
      for (double b : pos) out.push_back(Kernel::pair(a, b));
  }
  return out;
}

/// Number of enumerable policies, saturating in double precision.
inline double count_policies(const ScenarioSet& set) {
  double n = 1.0;
  for (NodeId id = 0; id < set.tree().size(); ++id)
    if (!set.tree().is_leaf(id)) n *= static_cast<double>(node_choices(set, id).size());
  return n;
}

inline constexpr std::uint64_t kDefaultPolicyCap = 1'000'000;

/// Calls `visit(policy)` for every enumerable policy, in odometer order with
/// the lowest node id varying fastest.
inline void for_each_policy(const ScenarioSet& set, const std::function<void(const Policy&)>& visit,
                            std::uint64_t cap = kDefaultPolicyCap) {
  const double count = count_policies(set);
  if (count > static_cast<double>(cap)) throw CapExceeded("policy enumeration refused", count, cap);
  const auto& tree = set.tree();
  std::vector<NodeId> inner;
  std::vector<std::vector<Kernel>> choices;
  for (NodeId id = 0; id < tree.size(); ++id)
    if (!tree.is_leaf(id)) {
      inner.push_back(id);
      choices.push_back(node_choices(set, id));
    }
  Policy p;
  p.kernels.resize(tree.size());
  std::vector<std::size_t> idx(inner.size(), 0);
  for (std::size_t i = 0; i < inner.size(); ++i) p.kernels[inner[i]] = choices[i][0];
  while (true) {
    visit(p);
    std::size_t i = 0;
    for (; i < inner.size(); ++i) {
      if (++idx[i] < choices[i].size()) {
        p.kernels[inner[i]] = choices[i][idx[i]];
        break;
      }
      idx[i] = 0;
      p.kernels[inner[i]] = choices[i][0];
    }
    if (i == inner.size()) break;
  }
}

inline std::vector<Policy> enumerate_policies(const ScenarioSet& set,
                                              std::uint64_t cap = kDefaultPolicyCap) {
  std::vector<Policy> out;
  for_each_policy(set, [&](const Policy& p) { out.push_back(p); }, cap);
  return out;
}

/// Restriction of `p` to the subtree at `id`, in subtree-local ids.
inline Policy condition_policy(const ScenarioSet& set, const Policy& p, NodeId id) {
  if (p.kernels.size() != set.tree().size()) throw InvalidInput("policy size does not match tree");
  Policy out;
  for (NodeId g : set.subtree_nodes(id)) out.kernels.push_back(p.kernels[g]);
  return out;
}

/// p before the stopping rule; nu[s] on the subtree of each stop node s.
inline Policy paste(const ScenarioSet& set, const Policy& p, const StoppingRule& rule,
                    const PastingKernel& nu) {
  const auto& tree = set.tree();
  if (p.kernels.size() != tree.size()) throw InvalidInput("paste: policy size does not match tree");
  if (rule.size() != tree.size()) throw InvalidInput("paste: stopping rule size does not match tree");
  Policy out = p;
  for (NodeId s : rule.stop_nodes()) {
    auto it = nu.find(s);
    if (it == nu.end()) throw InvalidInput("paste: no continuation for stop node " + std::to_string(s));
    const auto map = set.subtree_nodes(s);
    const Policy& q = it->second;
    if (q.kernels.size() != map.size())
      throw InvalidInput("paste: continuation at node " + std::to_string(s) + " has the wrong size");
    for (std::size_t i = 0; i < map.size(); ++i) {
      const NodeId g = map[i];
      for (const auto& a : q.kernels[i].atoms)
        if (!tree.find_child(g, a.increment))
          throw InvalidInput("paste: continuation at node " + std::to_string(s) +
                             " charges an increment outside the support");
      if (tree.is_leaf(g) && !q.kernels[i].atoms.empty())
        throw InvalidInput("paste: continuation assigns a kernel to a terminal node");
      out.kernels[g] = q.kernels[i];
    }
  }
  return out;
}

/// Probability of reaching `id` (for a leaf: of that path).
inline double measure_of(const ScenarioTree& tree, const Policy& p, NodeId id) {
  double prob = 1.0;
  while (id != ScenarioTree::root()) {
    const auto& n = tree.node(id);
    prob *= p.kernels.at(n.parent).prob_of(n.label);
    id = n.parent;
  }
  return prob;
}
inline double measure_of(const ScenarioSet& set, const Policy& p, NodeId id) {
  return measure_of(set.tree(), p, id);
}
/// Probability of an event given as a set of leaves.
inline double measure_of(const ScenarioSet& set, const Policy& p, const std::vector<NodeId>& leaves) {
  double s = 0.0;
  for (NodeId l : leaves) s += measure_of(set.tree(), p, l);
  return s;
}

/// E^p[ξ | node]; requires positive probability of reaching `id`.
inline double conditional_expectation(const ScenarioSet& set, const Policy& p, const Claim& xi,
                                      NodeId id) {
  const auto& tree = set.tree();
  const double base = measure_of(tree, p, id);
  if (!(base > 0.0)) throw InvalidInput("conditioning on a node of probability zero");
  double s = 0.0;
  for (NodeId l : tree.leaves_under(id)) s += measure_of(tree, p, l) * xi(tree.prefix(l));
  return s / base;
}
inline double expectation(const ScenarioSet& set, const Policy& p, const Claim& xi) {
  return conditional_expectation(set, p, xi, ScenarioTree::root());
}

struct MembershipResult {
  bool ok = true;
  NodeId node = kNoNode;
  std::string reason;
  explicit operator bool() const { return ok; }
};

/// Why kernel `k` is not admissible at non-terminal node `id`, or empty.
inline std::string kernel_violation(const Kernel& k, const ScenarioSet& set, NodeId id) {
  const auto& tree = set.tree();
  if (k.atoms.empty()) return "missing kernel";
  for (const auto& a : k.atoms) {
    if (!(a.prob > 0.0)) return "non-positive atom weight";
    if (!tree.find_child(id, a.increment)) return "atom outside the node support";
  }
  if (std::abs(k.total() - 1.0) > kKernelTol) return "weights do not sum to 1";
  if (std::abs(k.mean()) > kKernelTol) return "kernel mean is not 0";
  const VolBand& b = set.band(id);
  const double var = k.variance();
  if (var < b.lo * set.dt() - kKernelTol || var > b.hi * set.dt() + kKernelTol)
    return "kernel variance outside the band";
  if (set.family().tag == KernelFamily::Tag::TwoPointSymmetric && !k.is_symmetric_two_point())
    return "not a symmetric two-point kernel";
  return {};
}

inline bool membership_kernel_ok(const Kernel& k, const ScenarioSet& set, NodeId id) {
  return kernel_violation(k, set, id).empty();
}

inline MembershipResult membership(const Policy& p, const ScenarioSet& set) {
  const auto& tree = set.tree();
  if (p.kernels.size() != tree.size()) return {false, kNoNode, "policy size does not match tree"};
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) {
      if (!p.kernels[id].atoms.empty()) return {false, id, "kernel on a terminal node"};
      continue;
    }
    if (auto why = kernel_violation(p.kernels[id], set, id); !why.empty()) return {false, id, why};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Stability of the policy set.

/// Deterministic stopping rules for exercising pasting and the tower
/// property: every constant step and every hitting level present in the tree.
inline std::vector<StoppingRule> generate_stopping_rules(const ScenarioTree& tree) {
  std::vector<StoppingRule> out;
  auto add = [&](StoppingRule r) {
    for (const auto& e : out)
      if (e == r) return;
    out.push_back(std::move(r));
  };
  for (int k = 0; k <= tree.steps(); ++k) add(StoppingRule::constant(tree, k));
  std::set<double> levels;
  for (NodeId id = 1; id < tree.size(); ++id) levels.insert(std::abs(tree.node(id).value));
  for (double l : levels) add(hitting_rule(l, tree));
  return out;
}

/// Random stopping rule: each non-terminal node stops with probability `p`.
template <class Rng>
StoppingRule random_stopping_rule(const ScenarioTree& tree, Rng& rng, double p = 0.3) {
  std::bernoulli_distribution coin(p);
  std::vector<bool> stop(tree.size());
  for (NodeId id = 0; id < tree.size(); ++id) stop[id] = tree.is_leaf(id) || coin(rng);
  return StoppingRule::from_flags(tree, std::move(stop));
}

inline std::string describe(const StoppingRule& r) {
  std::ostringstream os;
  os << "stop nodes {";
  bool first = true;
  for (NodeId s : r.stop_nodes()) {
    os << (first ? "" : ",") << s;
    first = false;
  }
  os << "}";
  return os.str();
}

struct ClosureViolation {
  std::string check;    // conditioning | pasting | mixing | measure
  Policy policy;        // the member policy p
  std::string context;  // node, stopping rule or mixing event
  Policy result;        // the offending conditioned / pasted / mixed policy
  std::string reason;
};

struct ClosureOptions {
  std::uint64_t policy_cap = kDefaultPolicyCap;
  std::size_t max_members = 4096;          // members p examined (sampled above)
  std::size_t max_continuations = 64;      // ν per (p, rule) (sampled above)
  std::size_t mixing_samples = 8;          // (P1, P2, Λ) triples per (p, t)
  std::uint64_t seed = 7;
};

struct ClosureReport {
  bool conditioning_ok = true;
  bool pasting_ok = true;
  bool mixing_ok = true;
  bool measure_identity_ok = true;
  double max_measure_error = 0.0;
  std::size_t members = 0;
  std::size_t conditioning_checks = 0;
  std::size_t pasting_checks = 0;
  std::size_t mixing_checks = 0;
  std::size_t rules = 0;
  bool members_exhaustive = true;
  bool continuations_exhaustive = true;
  std::vector<ClosureViolation> violations;  // first witness per check

  bool ok() const { return conditioning_ok && pasting_ok && mixing_ok && measure_identity_ok; }
};

namespace detail {

template <class Rng>
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= k) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<Policy> members_of(const ScenarioSet& set, std::uint64_t cap) {
  std::vector<Policy> out;
  for_each_policy(set, [&](const Policy& p) {
    if (membership(p, set)) out.push_back(p);
  }, cap);
  return out;
}

}  // namespace detail

/// Enumerative check that the member policies are stable under conditioning,
/// pasting at stopping rules, and mixing over an F_t event; also checks the
/// pasting measure identity on random events.
inline ClosureReport check_closure(const ScenarioSet& set, const ClosureOptions& opt = {}) {
  ClosureReport rep;
  const auto& tree = set.tree();
  std::mt19937_64 rng(opt.seed);

  const auto all_members = detail::members_of(set, opt.policy_cap);
  rep.members = all_members.size();
  const auto pick = detail::sample_indices(all_members.size(), opt.max_members, rng);
  rep.members_exhaustive = pick.size() == all_members.size();

  auto record = [&](bool& flag, ClosureViolation v) {
    if (flag) rep.violations.push_back(std::move(v));
    flag = false;
  };

  // Subtree sets and their members, per node.
  std::map<NodeId, ScenarioSet> subsets;
  std::map<NodeId, std::vector<Policy>> sub_members;
  auto subset_of = [&](NodeId id) -> const ScenarioSet& {
    auto it = subsets.find(id);
    if (it == subsets.end()) {
      it = subsets.emplace(id, set.subset(id)).first;
      sub_members.emplace(id, detail::members_of(it->second, opt.policy_cap));
    }
    return it->second;
  };

  // Conditioning.
  for (std::size_t pi : pick) {
    const Policy& p = all_members[pi];
    for (NodeId id = 0; id < tree.size(); ++id) {
      const ScenarioSet& sub = subset_of(id);
      Policy q = condition_policy(set, p, id);
      ++rep.conditioning_checks;
      auto m = membership(q, sub);
      if (!m) record(rep.conditioning_ok, {"conditioning", p, "node " + std::to_string(id), q, m.reason});
    }
  }

  // Pasting, with the measure identity on a random event per pasting.
  const auto rules = generate_stopping_rules(tree);
  rep.rules = rules.size();
  const auto leaves = tree.leaves();
  std::bernoulli_distribution coin(0.5);
  for (const auto& rule : rules) {
    const auto stops = rule.stop_nodes();
    double combos = 1.0;
    for (NodeId s : stops) {
      subset_of(s);
      combos *= static_cast<double>(sub_members.at(s).size());
    }
    if (combos == 0.0) continue;
    std::vector<std::vector<std::size_t>> choices;
    if (combos <= static_cast<double>(opt.max_continuations)) {
      std::vector<std::size_t> idx(stops.size(), 0);
      while (true) {
        choices.push_back(idx);
        std::size_t i = 0;
        for (; i < stops.size(); ++i) {
          if (++idx[i] < sub_members.at(stops[i]).size()) break;
          idx[i] = 0;
        }
        if (i == stops.size()) break;
      }
    } else {
      rep.continuations_exhaustive = false;
      for (std::size_t c = 0; c < opt.max_continuations; ++c) {
        std::vector<std::size_t> idx(stops.size());
        for (std::size_t i = 0; i < stops.size(); ++i)
          idx[i] = std::uniform_int_distribution<std::size_t>(0, sub_members.at(stops[i]).size() - 1)(rng);
        choices.push_back(std::move(idx));
      }
    }
    std::vector<std::vector<NodeId>> maps;
    for (NodeId s : stops) maps.push_back(set.subtree_nodes(s));

    for (std::size_t pi : pick) {
      const Policy& p = all_members[pi];
      for (const auto& choice : choices) {
        PastingKernel nu;
        for (std::size_t i = 0; i < stops.size(); ++i) nu[stops[i]] = sub_members.at(stops[i])[choice[i]];
        Policy bar = paste(set, p, rule, nu);
        ++rep.pasting_checks;
        auto m = membership(bar, set);
        if (!m) record(rep.pasting_ok, {"pasting", p, describe(rule), bar, m.reason});

        std::vector<bool> in_event(tree.size(), false);
        std::vector<NodeId> event;
        for (NodeId l : leaves)
          if (coin(rng)) {
            in_event[l] = true;
            event.push_back(l);
          }
        const double lhs = measure_of(set, bar, event);
        double rhs = 0.0;
        for (std::size_t i = 0; i < stops.size(); ++i) {
          const ScenarioSet& sub = subsets.at(stops[i]);
          std::vector<NodeId> tail;
          for (NodeId local = 0; local < maps[i].size(); ++local)
            if (in_event[maps[i][local]]) tail.push_back(local);
          rhs += measure_of(set, p, stops[i]) * measure_of(sub, nu.at(stops[i]), tail);
        }
        const double err = std::abs(lhs - rhs);
        rep.max_measure_error = std::max(rep.max_measure_error, err);
        if (err > kKernelTol)
          record(rep.measure_identity_ok, {"measure", p, describe(rule), bar,
                                           "pasting measure identity off by " + std::to_string(err)});
      }
    }
  }

  // Mixing: P̄ = p before t, P1 after t on Λ, P2 after t off Λ, for P1, P2
  // agreeing with p before t.
  for (int t = 0; t < tree.steps(); ++t) {
    const auto at_t = tree.nodes_at_step(t);
    for (std::size_t pi : pick) {
      const Policy& p = all_members[pi];
      std::vector<const Policy*> agree;
      for (const auto& q : all_members) {
        bool same = true;
        for (NodeId id = 0; id < tree.size() && same; ++id)
          if (tree.node(id).step < t && !(q.kernels[id] == p.kernels[id])) same = false;
        if (same) agree.push_back(&q);
      }
      std::uniform_int_distribution<std::size_t> which(0, agree.size() - 1);
      for (std::size_t k = 0; k < opt.mixing_samples; ++k) {
        const Policy& p1 = *agree[which(rng)];
        const Policy& p2 = *agree[which(rng)];
        std::vector<bool> lambda(tree.size(), false);
        std::string ctx = "t=" + std::to_string(t) + " Lambda {";
        for (NodeId n : at_t)
          if (coin(rng)) {
            lambda[n] = true;
            ctx += std::to_string(n) + " ";
          }
        ctx += "}";
        Policy bar = p;
        for (NodeId id = 0; id < tree.size(); ++id) {
          if (tree.node(id).step < t || tree.is_leaf(id)) continue;
          bar.kernels[id] = lambda[tree.ancestor_at(id, t)] ? p1.kernels[id] : p2.kernels[id];
        }
        ++rep.mixing_checks;
        auto m = membership(bar, set);
        if (!m) record(rep.mixing_ok, {"mixing", p, ctx, bar, m.reason});

        // P̄(A) = E^P[P1(A|F_t) 1_Λ + P2(A|F_t) 1_Λc]
        std::vector<NodeId> event;
        for (NodeId l : leaves)
          if (coin(rng)) event.push_back(l);
        const double lhs = measure_of(set, bar, event);
        double rhs = 0.0;
        for (NodeId n : at_t) {
          const double pn = measure_of(set, p, n);
          if (pn == 0.0) continue;
          const Policy& q = lambda[n] ? p1 : p2;
          double qa = 0.0;
          for (NodeId l : event)
            if (tree.is_descendant(l, n)) qa += measure_of(set, q, l);
          rhs += pn * qa / measure_of(set, q, n);
        }
        const double err = std::abs(lhs - rhs);
        rep.max_measure_error = std::max(rep.max_measure_error, err);
        if (err > kKernelTol)
          record(rep.measure_identity_ok,
                 {"measure", p, ctx, bar, "mixing measure identity off by " + std::to_string(err)});
      }
    }
  }
  return rep;
}

}  // namespace volsup
