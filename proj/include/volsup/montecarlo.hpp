#pragma once

// Euler simulation of X_{k+1} = X_k + α_k^{1/2} sqrt(Δt) Z_k in dimension d,
// where α is chosen adaptively by a matrix policy. Each member law gives a
// statistical lower bound on the sublinear price.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "volsup/path_lattice.hpp"

namespace volsup {

inline constexpr double kSymmetryTol = 1e-12;

/// Symmetric positive definite d×d matrix (variance per unit time).
class VolMatrix {
 public:
  explicit VolMatrix(Eigen::MatrixXd a) : a_(std::move(a)) {
    if (a_.rows() != a_.cols() || a_.rows() == 0) throw InvalidInput("vol matrix must be square");
    if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
      throw InvalidInput("vol matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_, Eigen::EigenvaluesOnly);
    const double ev = es.eigenvalues().minCoeff();
    if (!(ev > 0.0)) throw InvalidInput("vol matrix not positive definite (eigenvalue " + std::to_string(ev) + ")");
  }
  static VolMatrix scalar(double v) { return VolMatrix(Eigen::MatrixXd::Constant(1, 1, v)); }

  const Eigen::MatrixXd& matrix() const { return a_; }
  Eigen::Index dim() const { return a_.rows(); }
  Eigen::VectorXd eigenvalues() const {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a_, Eigen::EigenvaluesOnly).eigenvalues();
  }

 private:
  Eigen::MatrixXd a_;
};

/// The symmetric positive definite square root.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw InvalidInput("psd_sqrt: matrix must be square");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
    throw InvalidInput("psd_sqrt: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const auto& ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (!(ev[i] > 0.0))
      throw InvalidInput("psd_sqrt: not positive definite (eigenvalue " + std::to_string(ev[i]) + ")");
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}
inline Eigen::MatrixXd psd_sqrt(const VolMatrix& a) { return psd_sqrt(a.matrix()); }

/// Adapted choice among a few vol regimes. The selector sees the step index
/// and the simulated path so far (columns 0..k).
class MatrixPolicy {
 public:
  using Selector = std::function<std::size_t(int step, const Eigen::MatrixXd& path, int k)>;

  MatrixPolicy(std::string name, std::vector<VolMatrix> regimes, Selector select, double lo, double hi)
      : name_(std::move(name)), regimes_(std::move(regimes)), select_(std::move(select)), lo_(lo), hi_(hi) {
    if (regimes_.empty()) throw InvalidInput("policy needs at least one regime");
    for (const auto& r : regimes_) {
      if (r.dim() != regimes_.front().dim()) throw InvalidInput("policy regimes differ in dimension");
      const auto ev = r.eigenvalues();
      if (ev.minCoeff() < lo_ - kSymmetryTol || ev.maxCoeff() > hi_ + kSymmetryTol)
        throw InvalidInput("policy " + name_ + ": regime eigenvalues outside [" + std::to_string(lo_) +
                           ", " + std::to_string(hi_) + "]");
      roots_.push_back(psd_sqrt(r));
    }
  }

  static MatrixPolicy constant(const VolMatrix& a, double lo, double hi) {
    return MatrixPolicy("constant", {a}, [](int, const Eigen::MatrixXd&, int) { return std::size_t{0}; }, lo, hi);
  }
  /// inner while |X_k| < level, outer otherwise.
  static MatrixPolicy threshold_switch(double level, const VolMatrix& inner, const VolMatrix& outer,
                                       double lo, double hi) {
    return MatrixPolicy("threshold", {inner, outer},
                        [level](int, const Eigen::MatrixXd& path, int k) {
                          return path.col(k).norm() < level ? std::size_t{0} : std::size_t{1};
                        },
                        lo, hi);
  }
  /// below while the first coordinate of X_k is negative, above otherwise.
  static MatrixPolicy sign_switch(const VolMatrix& below, const VolMatrix& above, double lo, double hi) {
    return MatrixPolicy("sign_switch", {below, above},
                        [](int, const Eigen::MatrixXd& path, int k) {
                          return path(0, k) < 0.0 ? std::size_t{0} : std::size_t{1};
                        },
                        lo, hi);
  }

  const std::string& name() const { return name_; }
  MatrixPolicy named(std::string name) const {
    MatrixPolicy p = *this;
    p.name_ = std::move(name);
    return p;
  }
  Eigen::Index dim() const { return regimes_.front().dim(); }
  const Eigen::MatrixXd& root(int step, const Eigen::MatrixXd& path, int k) const {
    return roots_.at(select_(step, path, k));
  }
  const VolMatrix& regime(int step, const Eigen::MatrixXd& path, int k) const {
    return regimes_.at(select_(step, path, k));
  }

 private:
  std::string name_;
  std::vector<VolMatrix> regimes_;
  std::vector<Eigen::MatrixXd> roots_;
  Selector select_;
  double lo_, hi_;
};

struct MCEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::uint64_t paths = 0;
  std::uint64_t seed = 0;
  std::string policy;

  nlohmann::json to_json() const {
    return {{"mean", mean}, {"stderr", stderr_}, {"paths", paths}, {"seed", seed}, {"policy", policy}};
  }
};

struct SimulationSpec {
  int steps = 100;
  double horizon = 1.0;
  std::uint64_t paths = 10000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Functional of the simulated path, a d × (steps+1) matrix starting at 0.
using PathFunctional = std::function<double(const Eigen::MatrixXd& path)>;

/// Each path draws from its own generator seeded by (seed, path index), and
/// payoffs are reduced in path order, so the result does not depend on the
/// number of threads.
inline MCEstimate simulate_price(const PathFunctional& xi, const MatrixPolicy& policy,
                                 const SimulationSpec& spec) {
  if (spec.steps < 1 || spec.paths < 1) throw InvalidInput("simulate: steps and paths >= 1 required");
  if (!(spec.horizon > 0.0)) throw InvalidInput("simulate: horizon > 0 required");
  const Eigen::Index d = policy.dim();
  const double sdt = std::sqrt(spec.horizon / spec.steps);
  std::vector<double> payoff(spec.paths);

  auto work = [&](std::uint64_t begin, std::uint64_t end) {
    Eigen::MatrixXd path(d, spec.steps + 1);
    Eigen::VectorXd z(d);
    std::normal_distribution<double> normal;
    for (std::uint64_t i = begin; i < end; ++i) {
      std::mt19937_64 gen(detail::splitmix64(spec.seed ^ detail::splitmix64(i)));
      normal.reset();
      path.col(0).setZero();
      for (int k = 0; k < spec.steps; ++k) {
        for (Eigen::Index j = 0; j < d; ++j) z[j] = normal(gen);
        path.col(k + 1) = path.col(k) + sdt * (policy.root(k, path, k) * z);
      }
      payoff[i] = xi(path);
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(spec.threads, static_cast<unsigned>(spec.paths)));
  if (workers == 1) {
    work(0, spec.paths);
  } else {
    std::vector<std::thread> pool;
    const std::uint64_t chunk = (spec.paths + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::uint64_t b = w * chunk, e = std::min(spec.paths, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }

  MCEstimate est;
  est.paths = spec.paths;
  est.seed = spec.seed;
  est.policy = policy.name();
  double sum = 0.0;
  for (double v : payoff) sum += v;
  est.mean = sum / static_cast<double>(spec.paths);
  double ss = 0.0;
  for (double v : payoff) ss += (v - est.mean) * (v - est.mean);
  const double var = spec.paths > 1 ? ss / static_cast<double>(spec.paths - 1) : 0.0;
  est.stderr_ = std::sqrt(var / static_cast<double>(spec.paths));
  return est;
}

/// One-dimensional claim on the Euler increments.
inline MCEstimate simulate_price(const Claim& xi, const MatrixPolicy& policy, const SimulationSpec& spec) {
  if (policy.dim() != 1) throw InvalidInput("simulate: path claims need a one-dimensional policy");
  if (xi.steps != spec.steps) throw InvalidInput("simulate: claim horizon does not match the step count");
  PathFunctional f = [&xi](const Eigen::MatrixXd& path) {
    std::vector<double> inc(static_cast<std::size_t>(path.cols() - 1));
    for (Eigen::Index k = 0; k + 1 < path.cols(); ++k) inc[k] = path(0, k + 1) - path(0, k);
    return xi(DiscretePath(std::move(inc)));
  };
  return simulate_price(f, policy, spec);
}

struct LowerBoundEntry {
  MCEstimate estimate;
  bool ok = true;  // estimate <= reference + 3 SE
};

struct LowerBoundReport {
  double reference = 0.0;
  std::vector<LowerBoundEntry> entries;
  std::size_t best = 0;
  bool all_ok = true;
};

inline constexpr double kStderrBand = 3.0;

inline LowerBoundReport lower_bound_report(const std::vector<MCEstimate>& estimates, double reference) {
  LowerBoundReport r;
  r.reference = reference;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const auto& e = estimates[i];
    const bool ok = e.mean <= reference + kStderrBand * e.stderr_;
    r.entries.push_back({e, ok});
    r.all_ok = r.all_ok && ok;
    if (e.mean > estimates[r.best].mean) r.best = i;
  }
  return r;
}

}  // namespace volsup
