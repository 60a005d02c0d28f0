#pragma once

// Batch runner behind the volsup executable: strict config parsing, mode
// dispatch, invariant bookkeeping and report/CSV emission.

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "volsup/claims.hpp"
#include "volsup/dp_engine.hpp"
#include "volsup/montecarlo.hpp"
#include "volsup/superhedge.hpp"
#include "volsup/uncertainty.hpp"

namespace volsup::cli {

using nlohmann::json;

inline const std::vector<std::string>& modes() {
  static const std::vector<std::string> m = {"price",            "hedge",    "verify-duality",
                                             "check-conditions", "simulate", "pde-crosscheck"};
  return m;
}

enum ExitCode : int { kOk = 0, kInvariantFailure = 1, kCapRefusal = 2, kConfigError = 3 };

/// One simulated vol policy. constant: a; threshold: inner a while |X| < level,
/// outer b otherwise; sign_switch: a while X < 0, b otherwise.
struct PolicySpec {
  std::string type = "constant";
  double a = 1.0;
  double b = 1.0;
  double level = 0.0;
  bool operator==(const PolicySpec&) const = default;
};

struct SimulateOptions {
  std::uint64_t paths = 10000;
  std::vector<PolicySpec> policies;  // empty: constant lo, constant hi, sign_switch(hi, lo)
  bool operator==(const SimulateOptions&) const = default;
};

struct PdeOptions {
  double h = 0.0125;
  double radius = 6.0;
  double k = 0.0;  // 0: h^2 / hi
  double tolerance = 5e-3;
  bool operator==(const PdeOptions&) const = default;
};

struct Caps {
  std::uint64_t policies = kDefaultPolicyCap;
  std::uint64_t nodes = 2'000'000;
  bool operator==(const Caps&) const = default;
};

struct Outputs {
  std::string report;
  std::string surface_csv;
  std::string hedge_csv;
  bool operator==(const Outputs&) const = default;
};

struct RunConfig {
  std::string mode;  // may be empty in the file; the command line supplies it
  TimeGrid grid;
  VolRule rule;
  KernelFamily family;
  ClaimSpec claim;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  Caps caps;
  Outputs outputs;
  SimulateOptions simulate;
  PdeOptions pde;
  bool operator==(const RunConfig&) const = default;
};

struct ParseResult {
  std::optional<RunConfig> config;
  std::vector<std::string> errors;
  bool ok() const { return config.has_value(); }
};

namespace detail {

class Errors {
 public:
  void add(const std::string& where, const std::string& msg) { list_.push_back(where + ": " + msg); }
  std::vector<std::string>& list() { return list_; }
  bool empty() const { return list_.empty(); }

 private:
  std::vector<std::string> list_;
};

inline bool object_with(const json& j, const std::string& where, const std::set<std::string>& allowed,
                        Errors& e) {
  if (!j.is_object()) {
    e.add(where, "expected an object");
    return false;
  }
  bool ok = true;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) {
      e.add(where, "unknown key \"" + it.key() + "\"");
      ok = false;
    }
  return ok;
}

inline std::optional<double> number(const json& j, const char* key, const std::string& where, Errors& e,
                                    bool required = true) {
  if (!j.contains(key)) {
    if (required) e.add(where, std::string("missing \"") + key + "\"");
    return std::nullopt;
  }
  if (!j.at(key).is_number()) {
    e.add(where + "." + key, "must be a number");
    return std::nullopt;
  }
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) {
    e.add(where + "." + key, "must be finite");
    return std::nullopt;
  }
  return v;
}

inline std::optional<std::uint64_t> count(const json& j, const char* key, const std::string& where, Errors& e,
                                          std::uint64_t min_value) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    e.add(where + "." + key, "must be a non-negative integer");
    return std::nullopt;
  }
  const auto n = v.get<std::uint64_t>();
  if (n < min_value) {
    e.add(where + "." + key, std::string(key) + " ≥ " + std::to_string(min_value) + " required");
    return std::nullopt;
  }
  return n;
}

inline std::optional<VolBand> band_pair(const json& j, const std::string& where, Errors& e) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    e.add(where, "expected [lo, hi]");
    return std::nullopt;
  }
  const double lo = j[0].get<double>(), hi = j[1].get<double>();
  if (lo > hi) {
    e.add(where, "lo > hi (" + std::to_string(lo) + " > " + std::to_string(hi) + ")");
    return std::nullopt;
  }
  try {
    return VolBand::make(lo, hi);
  } catch (const InvalidInput& ex) {
    e.add(where, ex.what());
  }
  return std::nullopt;
}

inline std::optional<TimeGrid> parse_grid(const json& j, Errors& e) {
  if (!object_with(j, "grid", {"steps", "dt"}, e)) return std::nullopt;
  std::optional<int> steps;
  if (!j.contains("steps")) {
    e.add("grid", "missing \"steps\"");
  } else if (!j.at("steps").is_number_integer()) {
    e.add("grid.steps", "must be an integer");
  } else if (j.at("steps").get<long long>() < 1) {
    e.add("grid.steps", "steps ≥ 1 required (got " + std::to_string(j.at("steps").get<long long>()) + ")");
  } else {
    steps = static_cast<int>(j.at("steps").get<long long>());
  }
  auto dt = number(j, "dt", "grid", e);
  if (dt && !(*dt > 0.0)) {
    e.add("grid.dt", "dt > 0 required");
    dt.reset();
  }
  if (!steps || !dt) return std::nullopt;
  return TimeGrid::make(*steps, *dt);
}

inline std::optional<VolRule> parse_rule(const json& j, Errors& e) {
  if (!object_with(j, "band", {"constant", "level_scaled"}, e)) return std::nullopt;
  if (j.size() != 1) {
    e.add("band", "expected exactly one of \"constant\" or \"level_scaled\"");
    return std::nullopt;
  }
  if (j.contains("constant")) {
    auto b = band_pair(j.at("constant"), "band.constant", e);
    if (b) return VolRule::constant(*b);
    return std::nullopt;
  }
  const json& ls = j.at("level_scaled");
  if (!object_with(ls, "band.level_scaled", {"threshold", "inner", "outer"}, e)) return std::nullopt;
  double threshold = 0.0;
  bool threshold_ok = false;
  if (auto t = number(ls, "threshold", "band.level_scaled", e)) {
    if (*t < 0) e.add("band.level_scaled.threshold", "threshold ≥ 0 required");
    else threshold = *t, threshold_ok = true;
  }
  std::optional<VolBand> in, out;
  if (!ls.contains("inner")) e.add("band.level_scaled", "missing \"inner\"");
  else in = band_pair(ls.at("inner"), "band.level_scaled.inner", e);
  if (!ls.contains("outer")) e.add("band.level_scaled", "missing \"outer\"");
  else out = band_pair(ls.at("outer"), "band.level_scaled.outer", e);
  if (!threshold_ok || !in || !out) return std::nullopt;
  return VolRule::level_scaled(threshold, *in, *out);
}

inline std::optional<KernelFamily> parse_family(const json& j, Errors& e) {
  if (!object_with(j, "family", {"tag", "m"}, e)) return std::nullopt;
  std::optional<KernelFamily::Tag> tag;
  if (!j.contains("tag") || !j.at("tag").is_string()) {
    e.add("family.tag", "expected \"two-point\" or \"polytope\"");
  } else {
    try {
      tag = family_tag_from_string(j.at("tag").get<std::string>());
    } catch (const InvalidInput& ex) {
      e.add("family.tag", ex.what());
    }
  }
  std::optional<int> m;
  if (!j.contains("m")) {
    e.add("family", "missing \"m\"");
  } else if (!j.at("m").is_number_integer() || j.at("m").get<long long>() < 1 || j.at("m").get<long long>() > 16) {
    e.add("family.m", "m must be an integer in [1, 16]");
  } else {
    m = static_cast<int>(j.at("m").get<long long>());
  }
  if (!tag || !m) return std::nullopt;
  return KernelFamily::make(*tag, *m);
}

inline std::optional<PolicySpec> parse_policy(const json& j, const std::string& where, Errors& e) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    e.add(where, "expected an object with a string \"type\"");
    return std::nullopt;
  }
  PolicySpec p;
  p.type = j.at("type").get<std::string>();
  if (p.type == "constant") {
    if (!object_with(j, where, {"type", "alpha"}, e)) return std::nullopt;
    auto a = number(j, "alpha", where, e);
    if (!a) return std::nullopt;
    p.a = p.b = *a;
  } else if (p.type == "threshold") {
    if (!object_with(j, where, {"type", "level", "inner", "outer"}, e)) return std::nullopt;
    auto l = number(j, "level", where, e), a = number(j, "inner", where, e), b = number(j, "outer", where, e);
    if (!l || !a || !b) return std::nullopt;
    p.level = *l;
    p.a = *a;
    p.b = *b;
  } else if (p.type == "sign_switch") {
    if (!object_with(j, where, {"type", "below", "above"}, e)) return std::nullopt;
    auto a = number(j, "below", where, e), b = number(j, "above", where, e);
    if (!a || !b) return std::nullopt;
    p.a = *a;
    p.b = *b;
  } else {
    e.add(where + ".type", "unknown policy type \"" + p.type + "\"");
    return std::nullopt;
  }
  return p;
}

inline json policy_to_json(const PolicySpec& p) {
  if (p.type == "constant") return {{"type", p.type}, {"alpha", p.a}};
  if (p.type == "threshold") return {{"type", p.type}, {"level", p.level}, {"inner", p.a}, {"outer", p.b}};
  return {{"type", p.type}, {"below", p.a}, {"above", p.b}};
}

inline void check_string(const json& j, const char* key, const std::string& where, std::string& out, Errors& e) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) e.add(where + "." + key, "must be a string");
  else out = j.at(key).get<std::string>();
}

}  // namespace detail

/// Validates a parsed JSON document against the config schema. Every problem
/// found is reported; no partial config is returned.
inline ParseResult parse_config(const json& j) {
  ParseResult r;
  detail::Errors e;
  if (!detail::object_with(j, "config",
                           {"mode", "grid", "band", "family", "claim", "seed", "threads", "caps", "outputs",
                            "simulate", "pde"},
                           e) &&
      !j.is_object()) {
    r.errors = e.list();
    return r;
  }
  RunConfig c;
  if (j.contains("mode")) {
    if (!j.at("mode").is_string()) {
      e.add("mode", "must be a string");
    } else {
      c.mode = j.at("mode").get<std::string>();
      if (std::find(modes().begin(), modes().end(), c.mode) == modes().end())
        e.add("mode", "unknown mode \"" + c.mode + "\"");
    }
  }
  std::optional<TimeGrid> grid;
  std::optional<VolRule> rule;
  std::optional<KernelFamily> fam;
  std::optional<ClaimSpec> claim;
  if (j.contains("grid")) grid = detail::parse_grid(j.at("grid"), e);
  else e.add("config", "missing \"grid\"");
  if (j.contains("band")) rule = detail::parse_rule(j.at("band"), e);
  else e.add("config", "missing \"band\"");
  if (j.contains("family")) fam = detail::parse_family(j.at("family"), e);
  else e.add("config", "missing \"family\"");
  if (j.contains("claim")) {
    try {
      claim = claim_spec_from_json(j.at("claim"));
      build_claim(*claim, TimeGrid::make(1, 1.0));
    } catch (const InvalidInput& ex) {
      e.add("claim", ex.what());
      claim.reset();
    }
  } else {
    e.add("config", "missing \"claim\"");
  }
  if (auto s = detail::count(j, "seed", "config", e, 0)) c.seed = *s;
  if (auto t = detail::count(j, "threads", "config", e, 1)) c.threads = static_cast<unsigned>(*t);
  if (j.contains("caps") && detail::object_with(j.at("caps"), "caps", {"policies", "nodes"}, e)) {
    if (auto p = detail::count(j.at("caps"), "policies", "caps", e, 1)) c.caps.policies = *p;
    if (auto n = detail::count(j.at("caps"), "nodes", "caps", e, 1)) c.caps.nodes = *n;
  }
  if (j.contains("outputs") && detail::object_with(j.at("outputs"), "outputs", {"report", "surface_csv", "hedge_csv"}, e)) {
    detail::check_string(j.at("outputs"), "report", "outputs", c.outputs.report, e);
    detail::check_string(j.at("outputs"), "surface_csv", "outputs", c.outputs.surface_csv, e);
    detail::check_string(j.at("outputs"), "hedge_csv", "outputs", c.outputs.hedge_csv, e);
  }
  if (j.contains("simulate") && detail::object_with(j.at("simulate"), "simulate", {"paths", "policies"}, e)) {
    const json& s = j.at("simulate");
    if (auto p = detail::count(s, "paths", "simulate", e, 2)) c.simulate.paths = *p;
    if (s.contains("policies")) {
      if (!s.at("policies").is_array()) {
        e.add("simulate.policies", "must be an array");
      } else {
        for (std::size_t i = 0; i < s.at("policies").size(); ++i)
          if (auto p = detail::parse_policy(s.at("policies")[i], "simulate.policies[" + std::to_string(i) + "]", e))
            c.simulate.policies.push_back(*p);
      }
    }
  }
  if (j.contains("pde") && detail::object_with(j.at("pde"), "pde", {"h", "radius", "k", "tolerance"}, e)) {
    const json& p = j.at("pde");
    auto positive = [&](const char* key, double& out, bool zero_ok) {
      if (auto v = detail::number(p, key, "pde", e, false)) {
        if (*v > 0.0 || (zero_ok && *v == 0.0)) out = *v;
        else e.add(std::string("pde.") + key, std::string(key) + (zero_ok ? " ≥ 0" : " > 0") + " required");
      }
    };
    positive("h", c.pde.h, false);
    positive("radius", c.pde.radius, false);
    positive("k", c.pde.k, true);
    positive("tolerance", c.pde.tolerance, false);
  }
  if (e.empty()) {
    c.grid = *grid;
    c.rule = *rule;
    c.family = *fam;
    c.claim = *claim;
    r.config = c;
  }
  r.errors = e.list();
  return r;
}

inline ParseResult parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& ex) {
    return ParseResult{std::nullopt, {std::string("config: malformed JSON: ") + ex.what()}};
  }
  return parse_config(j);
}

inline json serialize(const RunConfig& c) {
  json j{{"grid", {{"steps", c.grid.steps}, {"dt", c.grid.dt}}},
         {"band", c.rule.to_json()},
         {"family", {{"tag", to_string(c.family.tag)}, {"m", c.family.m}}},
         {"claim", to_json(c.claim)},
         {"seed", c.seed},
         {"threads", c.threads},
         {"caps", {{"policies", c.caps.policies}, {"nodes", c.caps.nodes}}},
         {"outputs",
          {{"report", c.outputs.report}, {"surface_csv", c.outputs.surface_csv}, {"hedge_csv", c.outputs.hedge_csv}}},
         {"pde", {{"h", c.pde.h}, {"radius", c.pde.radius}, {"k", c.pde.k}, {"tolerance", c.pde.tolerance}}}};
  json pol = json::array();
  for (const auto& p : c.simulate.policies) pol.push_back(detail::policy_to_json(p));
  j["simulate"] = {{"paths", c.simulate.paths}, {"policies", pol}};
  if (!c.mode.empty()) j["mode"] = c.mode;
  return j;
}

struct Invariant {
  std::string name;
  double value = 0.0;
  std::string comparison;  // "<=" or ">="
  double tolerance = 0.0;
  bool pass = true;
};

struct RunReport {
  json body;
  int exit_code = kOk;
};

namespace detail {

class Ledger {
 public:
  void at_most(const std::string& name, double value, double tol) { push(name, value, "<=", tol, value <= tol); }
  void at_least(const std::string& name, double value, double tol) { push(name, value, ">=", tol, value >= tol); }
  bool all_pass() const {
    for (const auto& i : items_)
      if (!i.pass) return false;
    return true;
  }
  json to_json() const {
    json a = json::array();
    for (const auto& i : items_)
      a.push_back({{"name", i.name}, {"value", i.value}, {"comparison", i.comparison}, {"tolerance", i.tolerance},
                   {"pass", i.pass}});
    return a;
  }

 private:
  void push(const std::string& n, double v, const char* c, double t, bool p) {
    items_.push_back({n, v, c, t, p && std::isfinite(v)});
  }
  std::vector<Invariant> items_;
};

/// Upper bound on the node count of the scenario tree before building it.
inline double tree_node_bound(const RunConfig& c) {
  double width = 0.0;
  for (const auto& b : c.rule.possible_bands())
    width = std::max(width, static_cast<double>(support_points(b, c.grid.dt, c.family.m).size()));
  double total = 0.0, level = 1.0;
  for (int k = 0; k <= c.grid.steps; ++k) {
    total += level;
    level *= width;
  }
  return total;
}

inline ScenarioSet build_set(const RunConfig& c) {
  const double bound = tree_node_bound(c);
  if (bound > static_cast<double>(c.caps.nodes))
    throw CapExceeded("scenario tree refused (up to " + std::to_string(bound) + " nodes > cap " +
                          std::to_string(c.caps.nodes) + ")",
                      bound, c.caps.nodes);
  return ScenarioSet::build(c.grid, c.rule, c.family);
}

inline json path_json(const DiscretePath& p) { return json(p.increments()); }

inline json kernel_json(const Kernel& k) {
  json a = json::array();
  for (const auto& at : k.atoms) a.push_back({{"increment", at.increment}, {"prob", at.prob}});
  return a;
}

template <class F>
std::string write_file(const std::string& path, F&& body) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot write " + path);
  body(os);
  return path;
}

inline VolBand envelope_band(const VolRule& rule) {
  VolBand b{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& x : rule.possible_bands()) {
    b.lo = std::min(b.lo, x.lo);
    b.hi = std::max(b.hi, x.hi);
  }
  return b;
}

inline void oracle_check(const Claim& xi, const ScenarioSet& set, double dp_value, const RunConfig& c,
                         json& results, Ledger& ledger) {
  const double n = count_policies(set);
  results["policies"] = n;
  if (n > static_cast<double>(c.caps.policies)) {
    results["brute_force"] = nullptr;
    return;
  }
  const auto bf = brute_force_price(xi, set, c.caps.policies);
  results["brute_force"] = bf.value;
  ledger.at_most("oracle_equivalence", std::abs(bf.value - dp_value), 1e-12);
}

/// Per-node ΔK of a value process under a policy: X(node) - E_p[X(next)].
inline std::vector<double> compensator(const ScenarioTree& tree, const std::vector<double>& x, const Policy& p) {
  std::vector<double> dk(tree.size(), 0.0);
  for (NodeId id = 0; id < tree.size(); ++id) {
    if (tree.is_leaf(id)) continue;
    double e = 0.0;
    for (const auto& a : p.kernels[id].atoms) e += a.prob * x[*tree.find_child(id, a.increment)];
    dk[id] = x[id] - e;
  }
  return dk;
}

inline void run_price(const RunConfig& c, json& res, json& art, Ledger& ledger) {
  const Claim xi = build_claim(c.claim, c.grid);
  const bool tree_ok = tree_node_bound(c) <= static_cast<double>(c.caps.nodes);
  if (!tree_ok && xi.terminal_only) {
    const auto lat = lattice_price(xi, c.grid, c.rule, c.family);
    res["price"] = lat.value;
    res["method"] = "lattice";
    res["lattice_states"] = lat.states;
    return;
  }
  const auto set = build_set(c);
  const auto y = sublinear_expectation(xi, set);
  res["price"] = y.root();
  res["method"] = "tree";
  res["nodes"] = set.tree().size();
  res["argmax_root_kernel"] = kernel_json(y.choice[0].kernel(c.family.tag));
  oracle_check(xi, set, y.root(), c, res, ledger);
  ledger.at_least("supermartingale_slack_argmax", supermartingale_check(set, y, argmax_policy(set, y)).min_slack,
                  -1e-12);
  if (!c.outputs.surface_csv.empty())
    art["surface_csv"] = write_file(c.outputs.surface_csv, [&](std::ostream& os) { write_surface_csv(os, set.tree(), y); });
}

inline void run_hedge(const RunConfig& c, json& res, json& art, Ledger& ledger) {
  const Claim xi = build_claim(c.claim, c.grid);
  const auto set = build_set(c);
  const auto& tree = set.tree();
  const auto sh = minimal_superhedge(xi, set);
  const auto chk = verify_superhedge(sh.capital, sh.hedge, xi, tree);
  const auto y = sublinear_expectation(xi, set);
  const Policy best = argmax_policy(set, y);
  res["capital"] = sh.capital;
  res["hedge_root"] = sh.hedge.h[0];
  res["price"] = y.root();
  res["tight_paths"] = chk.tight;
  res["worst_path"] = path_json(tree.prefix(chk.worst_leaf));
  ledger.at_least("superhedge_min_slack", chk.min_slack, -1e-9);
  ledger.at_least("tight_paths", static_cast<double>(chk.tight), 1);
  ledger.at_most("hedge_drift", admissibility_check(sh.hedge, set, -std::numeric_limits<double>::infinity()).max_drift,
                 kKernelTol);
  if (c.family.tag == KernelFamily::Tag::TwoPointSymmetric) {
    const auto dm = doob_meyer(set, y, best);
    const auto cov = covariation_hedge(set, y, best);
    double max_dk = 0.0, min_dk = 0.0, cov_err = 0.0;
    for (NodeId id = 0; id < tree.size(); ++id) {
      max_dk = std::max(max_dk, dm.dk[id]);
      min_dk = std::min(min_dk, dm.dk[id]);
      cov_err = std::max(cov_err, std::abs(cov.h[id] - dm.h[id]));
    }
    ledger.at_most("doob_meyer_residual", doob_meyer_residual(set, y, best, dm), 1e-12);
    ledger.at_most("compensator_max_argmax", max_dk, 1e-9);
    ledger.at_least("compensator_min_argmax", min_dk, -1e-12);
    ledger.at_most("covariation_vs_doob_meyer", cov_err, 1e-12);
  }
  if (!c.outputs.hedge_csv.empty()) {
    const auto dk = compensator(tree, sh.x, best);
    art["hedge_csv"] = write_file(c.outputs.hedge_csv, [&](std::ostream& os) { write_hedge_csv(os, tree, sh.hedge, dk); });
  }
  if (!c.outputs.surface_csv.empty())
    art["surface_csv"] = write_file(c.outputs.surface_csv, [&](std::ostream& os) { write_surface_csv(os, tree, y); });
}

inline void run_duality(const RunConfig& c, json& res, json& art, Ledger& ledger) {
  const Claim xi = build_claim(c.claim, c.grid);
  const auto set = build_set(c);
  const auto d = duality_report(xi, set);
  res["primal"] = d.primal;
  res["dual"] = d.dual;
  res["gap"] = d.gap;
  res["worst_path"] = path_json(d.worst_path);
  res["tight_paths"] = d.tight_leaves.size();
  res["min_slack"] = d.min_slack;
  oracle_check(xi, set, d.primal, c, res, ledger);
  ledger.at_least("superhedge_min_slack", d.min_slack, -1e-9);
  ledger.at_least("tight_paths", static_cast<double>(d.tight_leaves.size()), 1);
  ledger.at_least("weak_duality_gap", d.gap, -1e-9);
  if (c.family.tag == KernelFamily::Tag::MartingalePolytope) ledger.at_most("duality_gap", std::abs(d.gap), 1e-9);
  if (!c.outputs.surface_csv.empty()) {
    const auto y = sublinear_expectation(xi, set);
    art["surface_csv"] = write_file(c.outputs.surface_csv, [&](std::ostream& os) { write_surface_csv(os, set.tree(), y); });
  }
  if (!c.outputs.hedge_csv.empty()) {
    const auto sh = minimal_superhedge(xi, set);
    art["hedge_csv"] = write_file(c.outputs.hedge_csv, [&](std::ostream& os) { write_hedge_csv(os, set.tree(), sh.hedge, {}); });
  }
}

inline void run_conditions(const RunConfig& c, json& res, Ledger& ledger) {
  const auto set = build_set(c);
  ClosureOptions opt;
  opt.policy_cap = c.caps.policies;
  opt.seed = c.seed;
  const auto rep = check_closure(set, opt);
  auto count_of = [&](const std::string& check) {
    double n = 0;
    for (const auto& v : rep.violations) n += v.check == check;
    return n;
  };
  res["members"] = rep.members;
  res["stopping_rules"] = rep.rules;
  res["conditioning_checks"] = rep.conditioning_checks;
  res["pasting_checks"] = rep.pasting_checks;
  res["mixing_checks"] = rep.mixing_checks;
  res["members_exhaustive"] = rep.members_exhaustive;
  res["continuations_exhaustive"] = rep.continuations_exhaustive;
  json viol = json::array();
  for (const auto& v : rep.violations) viol.push_back({{"check", v.check}, {"context", v.context}, {"reason", v.reason}});
  res["violations"] = viol;
  ledger.at_most("conditioning_violations", rep.conditioning_ok ? 0 : std::max(1.0, count_of("conditioning")), 0);
  ledger.at_most("pasting_violations", rep.pasting_ok ? 0 : std::max(1.0, count_of("pasting")), 0);
  ledger.at_most("mixing_violations", rep.mixing_ok ? 0 : std::max(1.0, count_of("mixing")), 0);
  ledger.at_most("pasting_measure_identity", rep.max_measure_error, 1e-12);

  // dynamic programming across the generated stopping rules
  const Claim xi = build_claim(c.claim, c.grid);
  const auto rules = generate_stopping_rules(set.tree());
  double tower = 0.0;
  std::size_t pairs = 0;
  for (const auto& s : rules)
    for (const auto& t : rules) {
      if (pairs >= 64 || !precedes(set.tree(), s, t)) continue;
      tower = std::max(tower, check_tower(xi, set, s, t));
      ++pairs;
    }
  res["tower_pairs"] = pairs;
  ledger.at_most("tower_discrepancy", tower, 1e-12);
}

inline std::vector<MatrixPolicy> simulate_policies(const RunConfig& c, const VolBand& band) {
  std::vector<MatrixPolicy> out;
  auto scalar = [](double v) { return VolMatrix::scalar(v); };
  if (c.simulate.policies.empty()) {
    PolicySpec lo{"constant", band.lo, band.lo, 0.0}, hi{"constant", band.hi, band.hi, 0.0},
        flip{"sign_switch", band.hi, band.lo, 0.0};
    RunConfig d = c;
    d.simulate.policies = {lo, hi, flip};
    return simulate_policies(d, band);
  }
  auto num = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  for (const auto& p : c.simulate.policies) {
    if (p.type == "constant")
      out.push_back(MatrixPolicy::constant(scalar(p.a), band.lo, band.hi).named("constant(" + num(p.a) + ")"));
    else if (p.type == "threshold")
      out.push_back(MatrixPolicy::threshold_switch(p.level, scalar(p.a), scalar(p.b), band.lo, band.hi)
                        .named("threshold(" + num(p.level) + "," + num(p.a) + "," + num(p.b) + ")"));
    else
      out.push_back(MatrixPolicy::sign_switch(scalar(p.a), scalar(p.b), band.lo, band.hi)
                        .named("sign_switch(" + num(p.a) + "," + num(p.b) + ")"));
  }
  return out;
}

inline std::optional<double> reference_price(const RunConfig& c, const Claim& xi, std::string& method) {
  if (xi.terminal_only) {
    try {
      method = "lattice";
      return lattice_price(xi, c.grid, c.rule, c.family).value;
    } catch (const InvalidInput&) {
    }
  }
  if (tree_node_bound(c) <= static_cast<double>(c.caps.nodes)) {
    method = "tree";
    return sublinear_expectation(xi, build_set(c)).root();
  }
  method = "none";
  return std::nullopt;
}

inline void run_simulate(const RunConfig& c, json& res, Ledger& ledger) {
  if (c.rule.kind() != VolRule::Kind::Constant) throw InvalidInput("simulate: needs a constant band");
  const VolBand band = envelope_band(c.rule);
  const Claim xi = build_claim(c.claim, c.grid);
  SimulationSpec spec;
  spec.steps = c.grid.steps;
  spec.horizon = c.grid.horizon();
  spec.paths = c.simulate.paths;
  spec.seed = c.seed;
  spec.threads = c.threads;
  std::vector<MCEstimate> est;
  for (const auto& p : simulate_policies(c, band)) est.push_back(simulate_price(xi, p, spec));
  json a = json::array();
  for (const auto& e : est) a.push_back(e.to_json());
  res["estimates"] = a;
  std::string method;
  const auto ref = reference_price(c, xi, method);
  res["reference_method"] = method;
  res["reference"] = ref ? json(*ref) : json(nullptr);
  if (!ref) return;
  const auto lb = lower_bound_report(est, *ref);
  for (std::size_t i = 0; i < lb.entries.size(); ++i) {
    const auto& e = lb.entries[i].estimate;
    ledger.at_most("lower_bound[" + std::to_string(i) + ":" + e.policy + "]",
                   e.mean - *ref - kStderrBand * e.stderr_, 0.0);
  }
}

inline void run_pde(const RunConfig& c, json& res, Ledger& ledger) {
  if (c.rule.kind() != VolRule::Kind::Constant) throw InvalidInput("pde-crosscheck: needs a constant band");
  const Claim xi = build_claim(c.claim, c.grid);
  const VolBand band = envelope_band(c.rule);
  PdeGrid g{c.pde.h, c.pde.radius, c.pde.k > 0 ? c.pde.k : c.pde.h * c.pde.h / band.hi, band};
  const double pde = barenblatt_fd(terminal_payoff(xi), c.grid.horizon(), g);
  const auto lat = lattice_price(xi, c.grid, c.rule, KernelFamily::two_point(c.family.m));
  res["lattice"] = lat.value;
  res["pde"] = pde;
  res["difference"] = std::abs(pde - lat.value);
  res["pde_grid"] = {{"h", g.h}, {"radius", g.radius}, {"k", g.k}};
  ledger.at_most("lattice_vs_pde", std::abs(pde - lat.value), c.pde.tolerance);
}

}  // namespace detail

/// Runs `c.mode`. Invalid-but-parsed settings (e.g. a claim the lattice cannot
/// take) map to the config-error code, cap refusals to 2.
inline RunReport run(const RunConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  RunReport out;
  json res = json::object(), art = json::object();
  detail::Ledger ledger;
  out.body["mode"] = c.mode;
  out.body["inputs"] = serialize(c);
  try {
    if (c.mode == "price") detail::run_price(c, res, art, ledger);
    else if (c.mode == "hedge") detail::run_hedge(c, res, art, ledger);
    else if (c.mode == "verify-duality") detail::run_duality(c, res, art, ledger);
    else if (c.mode == "check-conditions") detail::run_conditions(c, res, ledger);
    else if (c.mode == "simulate") detail::run_simulate(c, res, ledger);
    else if (c.mode == "pde-crosscheck") detail::run_pde(c, res, ledger);
    else throw InvalidInput("unknown mode \"" + c.mode + "\"");
    out.exit_code = ledger.all_pass() ? kOk : kInvariantFailure;
  } catch (const CapExceeded& ex) {
    out.exit_code = kCapRefusal;
    out.body["error"] = ex.what();
  } catch (const InvalidInput& ex) {
    out.exit_code = kConfigError;
    out.body["error"] = ex.what();
  }
  out.body["results"] = res;
  out.body["invariants"] = ledger.to_json();
  out.body["artifacts"] = art;
  out.body["exit_code"] = out.exit_code;
  out.body["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace volsup::cli
