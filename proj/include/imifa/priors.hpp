#pragma once

// Prior hyperparameters: uniqueness rates derived from the sample covariance,
// multiplicative gamma process settings, mixing/process priors and the
// default truncation and cluster-ceiling rules.

#include <imifa/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace imifa {

struct UniquenessPrior {
  double shape = 2.5;
  Vector rates;  // size p, or size 1 when isotropic
  bool isotropic = false;
  bool used_pseudoinverse = false;

  double rate(Index j) const { return isotropic ? rates(0) : rates(j); }
};

/// beta_j = (shape - 1) / (S^-1)_jj, or the single rate
/// (shape - 1) / (prod_j (S^+)_jj)^(1/p) when isotropic. A singular S always
/// goes through the Moore-Penrose pseudoinverse and forces the isotropic form.
inline UniquenessPrior derive_uniqueness_rates(const Matrix& sample_cov, double shape, bool isotropic) {
  if (!(shape > 1.0)) throw ParameterError("uniqueness shape must exceed 1, got " + std::to_string(shape));
  if (sample_cov.rows() != sample_cov.cols() || sample_cov.rows() == 0)
    throw ShapeError("sample covariance must be square and non-empty");
  const Index p = sample_cov.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sample_cov + sample_cov.transpose()));
  const Vector& ev = eig.eigenvalues();
  const double tol = std::max(1.0, ev.cwiseAbs().maxCoeff()) * static_cast<double>(p) *
                     std::numeric_limits<double>::epsilon() * 16.0;
  UniquenessPrior out;
  out.shape = shape;
  out.used_pseudoinverse = ev.minCoeff() <= tol;
  Vector inv_ev = Vector::Zero(p);
  for (Index k = 0; k < p; ++k)
    if (ev(k) > tol) inv_ev(k) = 1.0 / ev(k);
  const Matrix& v = eig.eigenvectors();
  // diagonal of V diag(1/ev) V^T
  const Vector inv_diag = (v.array().square().rowwise() * inv_ev.transpose().array()).rowwise().sum();
  out.isotropic = isotropic || out.used_pseudoinverse;
  if (out.isotropic) {
    double log_sum = 0.0;
    for (Index j = 0; j < p; ++j) {
      if (!(inv_diag(j) > 0.0)) throw ParameterError("pseudoinverse has a zero diagonal entry (constant column?)");
      log_sum += std::log(inv_diag(j));
    }
    out.rates = Vector::Constant(1, (shape - 1.0) / std::exp(log_sum / static_cast<double>(p)));
  } else {
    out.rates = (shape - 1.0) / inv_diag.array();
  }
  return out;
}

/// Uniquenesses are constrained isotropic whenever N <= p.
inline bool isotropic_required(Index n, Index p) { return n <= p; }

struct MgpHyper {
  double nu = 3.0;
  double alpha1 = 2.1;
  double beta1 = 1.0;
  double alpha2 = 3.1;
  double beta2 = 1.0;
  double b0 = 0.1;
  double b1 = 5e-5;
  double epsilon = 0.1;
  double prop = 0.7;  // fraction of near-zero entries marking a column redundant
  bool adapt_after_burnin = false;
};

inline MgpHyper default_mgp(Index p) {
  MgpHyper h;
  h.prop = std::floor(0.7 * static_cast<double>(p)) / static_cast<double>(p);
  if (h.prop <= 0.0) h.prop = 1.0 / static_cast<double>(p);
  return h;
}

// Mixtures spread the same data over more loadings matrices, so the column
// shrinkage is made stronger by default.
inline MgpHyper default_mgp(Index p, bool mixture) {
  MgpHyper h = default_mgp(p);
  if (mixture) {
    h.alpha1 = 3.0;
    h.alpha2 = 6.0;
  }
  return h;
}

// Named field overrides, applied on top of defaults that depend on the data.
using MgpOverrides = std::map<std::string, double>;

inline MgpHyper apply_mgp_overrides(MgpHyper h, const MgpOverrides& o) {
  for (const auto& [key, v] : o) {
    if (key == "nu") h.nu = v;
    else if (key == "alpha1") h.alpha1 = v;
    else if (key == "beta1") h.beta1 = v;
    else if (key == "alpha2") h.alpha2 = v;
    else if (key == "beta2") h.beta2 = v;
    else if (key == "b0") h.b0 = v;
    else if (key == "b1") h.b1 = v;
    else if (key == "epsilon") h.epsilon = v;
    else if (key == "prop") h.prop = v;
    else if (key == "adapt_after_burnin") h.adapt_after_burnin = v != 0.0;
    else throw ParameterError("unknown MGP hyperparameter '" + key + "'");
  }
  return h;
}

inline const MgpHyper& validate_mgp(const MgpHyper& h) {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string("MGP ") + what + " must be > 0");
  };
  positive(h.nu, "nu");
  positive(h.alpha1, "alpha1");
  positive(h.beta1, "beta1");
  positive(h.alpha2, "alpha2");
  positive(h.beta2, "beta2");
  positive(h.epsilon, "epsilon");
  if (!(h.b0 >= 0.0) || !(h.b1 >= 0.0)) throw ParameterError("MGP adaptation rates b0, b1 must be >= 0");
  if (!(h.prop > 0.0 && h.prop <= 1.0)) throw ParameterError("MGP redundancy proportion must lie in (0, 1]");
  if (!(h.alpha2 > h.beta2 + 1.0))
    throw ParameterError("cumulative shrinkage requires alpha2 > beta2 + 1 (got alpha2=" + std::to_string(h.alpha2) +
                         ", beta2=" + std::to_string(h.beta2) + ")");
  return h;
}

/// Probability that the truncation adapts at iteration t.
inline double adaptation_probability(const MgpHyper& h, long t) {
  return std::exp(-h.b0 - h.b1 * static_cast<double>(t));
}

enum class ProcessKind { FiniteDirichlet, Overfitted, Dirichlet, PitmanYor };

inline std::string to_string(ProcessKind k) {
  switch (k) {
    case ProcessKind::FiniteDirichlet: return "finite";
    case ProcessKind::Overfitted: return "overfitted";
    case ProcessKind::Dirichlet: return "dp";
    case ProcessKind::PitmanYor: return "py";
  }
  return "finite";
}

inline ProcessKind parse_process_kind(const std::string& s) {
  if (s == "finite" || s == "finite-dirichlet") return ProcessKind::FiniteDirichlet;
  if (s == "overfitted") return ProcessKind::Overfitted;
  if (s == "dp") return ProcessKind::Dirichlet;
  if (s == "py") return ProcessKind::PitmanYor;
  throw ParameterError("unknown process kind '" + s + "'");
}

struct ProcessPrior {
  ProcessKind kind = ProcessKind::FiniteDirichlet;
  // Finite: symmetric Dirichlet mass per component. Overfitted: gamma / G*.
  // DP/PY: concentration.
  double alpha = 1.0;
  bool learn_alpha = false;
  double alpha_shape = 2.0;  // Ga(a, b) on alpha (DP) or alpha + d (PY)
  double alpha_rate = 1.0;
  double discount = 0.0;
  bool learn_discount = false;
  double kappa = 0.5;  // prior mass of d = 0
  double discount_a = 1.0;
  double discount_b = 1.0;
  double gamma = 0.0;  // overfitted total mass
  double rho = 0.75;   // slice sequence decay
};

/// Free parameters of one factor-analytic cluster with q factors.
inline double free_parameters(Index p, Index q) {
  const auto pd = static_cast<double>(p);
  const auto qd = static_cast<double>(q);
  return pd * qd - qd * (qd - 1.0) / 2.0 + 2.0 * pd;
}

/// Per-component Dirichlet mass for an overfitted mixture: 1% of d/2 for the
/// smallest candidate model, capped at 0.5 / G*.
inline double overfitted_component_mass(double d_free_smallest, Index ceiling) {
  return std::min(1e-2 * d_free_smallest / 2.0, 0.5 / static_cast<double>(ceiling));
}

inline void validate_process(const ProcessPrior& pp, double d_free_smallest = 0.0) {
  if (!(pp.discount >= 0.0 && pp.discount < 1.0)) throw ParameterError("discount must lie in [0, 1)");
  if (!(pp.alpha > -pp.discount)) throw ParameterError("concentration must exceed -discount");
  if (!(pp.rho > 0.0 && pp.rho < 1.0)) throw ParameterError("slice decay rho must lie in (0, 1)");
  if (!(pp.alpha_shape > 0.0 && pp.alpha_rate > 0.0)) throw ParameterError("alpha hyperprior must be positive");
  if (!(pp.kappa >= 0.0 && pp.kappa <= 1.0)) throw ParameterError("kappa must lie in [0, 1]");
  if (!(pp.discount_a > 0.0 && pp.discount_b > 0.0)) throw ParameterError("discount hyperprior must be positive");
  switch (pp.kind) {
    case ProcessKind::FiniteDirichlet:
      if (!(pp.alpha > 0.0)) throw ParameterError("Dirichlet mass must be > 0");
      break;
    case ProcessKind::Overfitted:
      if (!(pp.alpha > 0.0)) throw ParameterError("overfitted component mass must be > 0");
      if (d_free_smallest > 0.0 && !(pp.alpha < d_free_smallest / 2.0))
        throw ParameterError("overfitted component mass must be below d/2 = " + std::to_string(d_free_smallest / 2.0));
      break;
    case ProcessKind::Dirichlet:
      if (pp.discount != 0.0 || pp.learn_discount) throw ParameterError("a Dirichlet process has discount 0");
      if (!(pp.alpha > 0.0)) throw ParameterError("DP concentration must be > 0");
      break;
    case ProcessKind::PitmanYor: break;
  }
}

/// Starting number of loadings columns: min(floor(3 ln p), p, N - 1).
inline Index init_truncation(Index p, Index n) {
  const auto by_log = static_cast<Index>(std::floor(3.0 * std::log(static_cast<double>(p))));
  return std::max<Index>(0, std::min({by_log, p, n - 1}));
}

/// Conservative cluster ceiling: max(25, ceil(3 ln N)).
inline Index init_cluster_ceiling(Index n) {
  return std::max<Index>(25, static_cast<Index>(std::ceil(3.0 * std::log(static_cast<double>(n)))));
}

/// Ceiling actually used: an explicit override must not exceed N; without one,
/// a formula value of N or more falls back to ceil(ln N) (at least 2).
inline Index resolve_cluster_ceiling(Index n, Index override_value = 0) {
  if (override_value > 0) {
    if (override_value > n) throw ParameterError("cluster ceiling override exceeds N");
    return override_value;
  }
  const Index formula = init_cluster_ceiling(n);
  if (formula < n) return formula;
  return std::min<Index>(n, std::max<Index>(2, static_cast<Index>(std::ceil(std::log(static_cast<double>(n))))));
}

}  // namespace imifa
