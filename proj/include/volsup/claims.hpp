#pragma once

// Payoff library: terminal payoffs (digital, call, put, even powers), the
// realized-variance claim and a fixed set of point-wise combinators.

#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "volsup/path_lattice.hpp"

namespace volsup {

/// Declarative claim description. Only the fields relevant to `type` are used.
struct ClaimSpec {
  std::string type;
  double strike = 0.0;    // digital, call, put
  int exponent = 2;       // power
  double value = 0.0;     // constant
  double scale = 1.0;     // affine
  double offset = 0.0;    // affine
  std::vector<ClaimSpec> args;  // affine (1), max/min (2)

  static ClaimSpec tagged(std::string type) {
    ClaimSpec s;
    s.type = std::move(type);
    return s;
  }
  static ClaimSpec struck(std::string type, double k) {
    ClaimSpec s = tagged(std::move(type));
    s.strike = k;
    return s;
  }
  static ClaimSpec digital(double k) { return struck("digital", k); }
  static ClaimSpec call(double k) { return struck("call", k); }
  static ClaimSpec put(double k) { return struck("put", k); }
  static ClaimSpec power(int p) {
    ClaimSpec s = tagged("power");
    s.exponent = p;
    return s;
  }
  static ClaimSpec identity() { return tagged("identity"); }
  static ClaimSpec constant(double c) {
    ClaimSpec s = tagged("constant");
    s.value = c;
    return s;
  }
  static ClaimSpec realized_variance() { return tagged("realized_variance"); }
  static ClaimSpec neg_abs() { return tagged("neg_abs"); }
  static ClaimSpec affine(double a, ClaimSpec inner, double b) {
    ClaimSpec s = tagged("affine");
    s.scale = a;
    s.offset = b;
    s.args.push_back(std::move(inner));
    return s;
  }
  static ClaimSpec max(ClaimSpec l, ClaimSpec r) {
    ClaimSpec s = tagged("max");
    s.args = {std::move(l), std::move(r)};
    return s;
  }
  static ClaimSpec min(ClaimSpec l, ClaimSpec r) {
    ClaimSpec s = tagged("min");
    s.args = {std::move(l), std::move(r)};
    return s;
  }

  bool operator==(const ClaimSpec&) const = default;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw InvalidInput(where + ": unknown key \"" + it.key() + "\"");
}

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw InvalidInput(where + ": \"" + key + "\" must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

inline ClaimSpec claim_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw InvalidInput("claim: expected an object with a string \"type\"");
  ClaimSpec s;
  s.type = j.at("type").get<std::string>();
  const std::string where = "claim " + s.type;
  if (s.type == "digital" || s.type == "call" || s.type == "put") {
    detail::require_keys(j, {"type", "strike"}, where);
    s.strike = detail::require_number(j, "strike", where);
  } else if (s.type == "power") {
    detail::require_keys(j, {"type", "exponent"}, where);
    if (!j.contains("exponent") || !j.at("exponent").is_number_integer())
      throw InvalidInput(where + ": \"exponent\" must be an integer");
    s.exponent = j.at("exponent").get<int>();
  } else if (s.type == "constant") {
    detail::require_keys(j, {"type", "value"}, where);
    s.value = detail::require_number(j, "value", where);
  } else if (s.type == "identity" || s.type == "realized_variance" || s.type == "neg_abs") {
    detail::require_keys(j, {"type"}, where);
  } else if (s.type == "affine") {
    detail::require_keys(j, {"type", "scale", "claim", "offset"}, where);
    s.scale = detail::require_number(j, "scale", where);
    s.offset = detail::require_number(j, "offset", where);
    if (!j.contains("claim")) throw InvalidInput(where + ": missing \"claim\"");
    s.args.push_back(claim_spec_from_json(j.at("claim")));
  } else if (s.type == "max" || s.type == "min") {
    detail::require_keys(j, {"type", "args"}, where);
    if (!j.contains("args") || !j.at("args").is_array() || j.at("args").size() != 2)
      throw InvalidInput(where + ": \"args\" must be an array of two claims");
    for (const auto& a : j.at("args")) s.args.push_back(claim_spec_from_json(a));
  } else {
    throw InvalidInput("claim: unknown type \"" + s.type + "\"");
  }
  return s;
}

inline nlohmann::json to_json(const ClaimSpec& s) {
  nlohmann::json j{{"type", s.type}};
  if (s.type == "digital" || s.type == "call" || s.type == "put") j["strike"] = s.strike;
  if (s.type == "power") j["exponent"] = s.exponent;
  if (s.type == "constant") j["value"] = s.value;
  if (s.type == "affine") {
    j["scale"] = s.scale;
    j["offset"] = s.offset;
    j["claim"] = to_json(s.args.at(0));
  }
  if (s.type == "max" || s.type == "min") j["args"] = {to_json(s.args.at(0)), to_json(s.args.at(1))};
  return j;
}

inline Claim build_claim(const ClaimSpec& spec, const TimeGrid& grid) {
  using Fn = std::function<double(const DiscretePath&)>;
  Claim c;
  c.steps = grid.steps;
  c.description = to_json(spec).dump();
  c.terminal_only = true;
  const std::string& t = spec.type;
  if (t == "digital") {
    const double k = spec.strike;
    c.fn = [k](const DiscretePath& p) { return p.terminal_value() >= k ? 1.0 : 0.0; };
  } else if (t == "call") {
    const double k = spec.strike;
    c.fn = [k](const DiscretePath& p) { return std::max(p.terminal_value() - k, 0.0); };
  } else if (t == "put") {
    const double k = spec.strike;
    c.fn = [k](const DiscretePath& p) { return std::max(k - p.terminal_value(), 0.0); };
  } else if (t == "power") {
    const int e = spec.exponent;
    if (e < 0 || e % 2 != 0) throw InvalidInput("power claim needs an even non-negative exponent");
    c.fn = [e](const DiscretePath& p) {
      const double x = p.terminal_value();
      double r = 1.0;
      for (int i = 0; i < e; ++i) r *= x;
      return r;
    };
  } else if (t == "identity") {
    c.fn = [](const DiscretePath& p) { return p.terminal_value(); };
  } else if (t == "constant") {
    const double v = spec.value;
    c.fn = [v](const DiscretePath&) { return v; };
  } else if (t == "realized_variance") {
    c.terminal_only = false;
    c.fn = [](const DiscretePath& p) {
      double s = 0.0;
      for (double u : p.increments()) s += u * u;
      return s;
    };
  } else if (t == "neg_abs") {
    c.fn = [](const DiscretePath& p) { return -std::abs(p.terminal_value()); };
  } else if (t == "affine") {
    if (spec.args.size() != 1) throw InvalidInput("affine claim takes one argument");
    Claim inner = build_claim(spec.args[0], grid);
    const double a = spec.scale, b = spec.offset;
    c.terminal_only = inner.terminal_only;
    c.fn = Fn([inner, a, b](const DiscretePath& p) { return a * inner.fn(p) + b; });
  } else if (t == "max" || t == "min") {
    if (spec.args.size() != 2) throw InvalidInput(t + " claim takes two arguments");
    Claim l = build_claim(spec.args[0], grid), r = build_claim(spec.args[1], grid);
    c.terminal_only = l.terminal_only && r.terminal_only;
    if (t == "max")
      c.fn = [l, r](const DiscretePath& p) { return std::max(l.fn(p), r.fn(p)); };
    else
      c.fn = [l, r](const DiscretePath& p) { return std::min(l.fn(p), r.fn(p)); };
  } else {
    throw InvalidInput("unknown claim type \"" + t + "\"");
  }
  return c;
}

/// Terminal payoff x ↦ ξ(path ending at x), for claims that only look at B_N.
inline std::function<double(double)> terminal_payoff(const Claim& xi) {
  if (!xi.terminal_only) throw InvalidInput("claim depends on more than the terminal value");
  return [xi](double x) {
    std::vector<double> inc(static_cast<std::size_t>(xi.steps), 0.0);
    if (!inc.empty()) inc[0] = x;
    return xi.fn(DiscretePath(std::move(inc)));
  };
}

}  // namespace volsup
