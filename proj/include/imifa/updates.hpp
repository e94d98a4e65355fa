#pragma once

// Full-conditional updates for the factor-analytic mixture family.
//
// One set of updates serves all eight model kinds; which ones run, and with
// which priors, is decided by ModelConfig::kind:
//   - loadings rows get an MGP prior (adaptive kinds) or N(0, I) (fixed q);
//   - weights come from a Dirichlet (finite/overfitted) or from stick-breaking
//     with an independent slice sampler (infinite kinds).
// Cluster labels are drawn with the factor scores integrated out.

#include <imifa/density.hpp>
#include <imifa/dist.hpp>
#include <imifa/init.hpp>
#include <imifa/model.hpp>
#include <imifa/priors.hpp>
#include <imifa/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace imifa {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Prior draws
// ---------------------------------------------------------------------------

/// Append one loadings column drawn from the MGP prior.
inline void append_mgp_column(Cluster& c, const MgpHyper& h, RngStream& rng) {
  const Index p = c.mu.size();
  const Index q = c.q();
  const double delta = q == 0 ? sample_gamma(rng, h.alpha1, h.beta1) : sample_gamma(rng, h.alpha2, h.beta2);
  const double tau = (q == 0 ? 1.0 : c.tau(q - 1)) * delta;
  c.delta.conservativeResize(q + 1);
  c.tau.conservativeResize(q + 1);
  c.phi.conservativeResize(p, q + 1);
  c.lambda.conservativeResize(p, q + 1);
  c.delta(q) = delta;
  c.tau(q) = tau;
  for (Index j = 0; j < p; ++j) {
    c.phi(j, q) = sample_gamma(rng, h.nu + 1.0, h.nu);
    c.lambda(j, q) = rng.normal() / std::sqrt(c.phi(j, q) * tau);
  }
}

inline void recompute_tau(Cluster& c) {
  c.tau.resize(c.delta.size());
  double acc = 1.0;
  for (Index k = 0; k < c.delta.size(); ++k) c.tau(k) = acc *= c.delta(k);
}

inline Vector prior_uniquenesses(const UniquenessPrior& u, Index p, RngStream& rng) {
  if (u.isotropic) return Vector::Constant(p, sample_inverse_gamma(rng, u.shape, u.rates(0)));
  Vector psi(p);
  for (Index j = 0; j < p; ++j) psi(j) = sample_inverse_gamma(rng, u.shape, u.rates(j));
  return psi;
}

/// A cluster with every parameter drawn from its prior.
inline Cluster prior_cluster(const ModelConfig& cfg, Index p, Index q, RngStream& rng) {
  Cluster c;
  c.mu = cfg.mean.mean + cfg.mean.cov_lower * rng.normal_vector(p);
  c.psi = prior_uniquenesses(cfg.uniqueness, p, rng);
  c.lambda.resize(p, 0);
  c.phi.resize(p, 0);
  if (is_adaptive(cfg.kind)) {
    for (Index k = 0; k < q; ++k) append_mgp_column(c, cfg.mgp, rng);
  } else {
    c.lambda.resize(p, q);
    for (Index j = 0; j < p; ++j)
      for (Index k = 0; k < q; ++k) c.lambda(j, k) = rng.normal();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Independent slice sequence xi_g = (1 - rho) rho^g for 0-based g.
inline double slice_level(double rho, Index g) { return (1.0 - rho) * std::pow(rho, static_cast<double>(g)); }

/// Number of clusters with xi_g > u.
inline Index slice_set_size(double rho, double u) {
  Index k = static_cast<Index>(std::max(0.0, std::floor(std::log(u / (1.0 - rho)) / std::log(rho))));
  while (k > 0 && !(slice_level(rho, k - 1) > u)) --k;
  while (slice_level(rho, k) > u) ++k;
  return k;
}

/// Trims rounding excess so the running sum, taken in index order, never
/// exceeds one.
inline void cap_weight_total(Vector& pi) {
  double total = 0.0;
  for (Index g = 0; g < pi.size(); ++g) {
    pi(g) = std::clamp(pi(g), 0.0, 1.0 - total);
    total += pi(g);
  }
}

/// pi_g = v_g prod_{l<g} (1 - v_l).
inline Vector stick_weights(const Vector& v) {
  Vector pi(v.size());
  double remaining = 1.0;
  for (Index g = 0; g < v.size(); ++g) {
    pi(g) = v(g) * remaining;
    remaining *= 1.0 - v(g);
  }
  cap_weight_total(pi);
  return pi;
}

inline void set_weights_from_sticks(ChainState& s) {
  Vector v(s.active());
  for (Index g = 0; g < s.active(); ++g) v(g) = s.clusters[static_cast<std::size_t>(g)].v;
  const Vector pi = stick_weights(v);
  for (Index g = 0; g < s.active(); ++g) s.clusters[static_cast<std::size_t>(g)].pi = pi(g);
}

/// Recover stick proportions from (reordered) weights.
inline void set_sticks_from_weights(ChainState& s) {
  double remaining = 1.0;
  for (auto& c : s.clusters) {
    c.v = remaining > 0.0 ? std::clamp(c.pi / remaining, 0.0, 1.0) : 1.0;
    remaining -= c.pi;
  }
}

inline void update_mixing_finite(ChainState& s, const ModelConfig& cfg, RngStream& rng) {
  Vector a(s.active());
  for (Index g = 0; g < s.active(); ++g)
    a(g) = cfg.process.alpha + static_cast<double>(s.clusters[static_cast<std::size_t>(g)].n);
  const Vector pi = sample_dirichlet(rng, a);
  for (Index g = 0; g < s.active(); ++g) s.clusters[static_cast<std::size_t>(g)].pi = pi(g);
}

/// v_g ~ Beta(1 - d + n_g, alpha + g d + sum_{l>g} n_l), g 1-based.
inline void update_sticks_and_weights(ChainState& s, RngStream& rng) {
  const Index G = s.active();
  double tail = 0.0;
  std::vector<double> after(static_cast<std::size_t>(G));
  for (Index g = G - 1; g >= 0; --g) {
    after[static_cast<std::size_t>(g)] = tail;
    tail += static_cast<double>(s.clusters[static_cast<std::size_t>(g)].n);
  }
  for (Index g = 0; g < G; ++g) {
    auto& c = s.clusters[static_cast<std::size_t>(g)];
    const double a = 1.0 - s.discount + static_cast<double>(c.n);
    const double b = s.alpha + static_cast<double>(g + 1) * s.discount + after[static_cast<std::size_t>(g)];
    c.v = sample_beta(rng, a, b);
  }
  set_weights_from_sticks(s);
}

inline void refresh_slice_variables(ChainState& s, const ModelConfig& cfg, RngStream& rng) {
  s.u.resize(static_cast<Index>(s.z.size()));
  for (std::size_t i = 0; i < s.z.size(); ++i)
    s.u(static_cast<Index>(i)) = slice_level(cfg.process.rho, s.z[i]) * rng.uniform();
}

/// Draw u_i ~ U(0, xi_{z_i}); grow or shrink the active set to
/// max_i |{g : u_i < xi_g}|, new clusters coming from the prior.
inline void update_slice(ChainState& s, const ModelConfig& cfg, RngStream& rng, Index hard_cap = 1000) {
  refresh_slice_variables(s, cfg, rng);
  Index needed = 1;
  for (Index i = 0; i < s.u.size(); ++i) needed = std::max(needed, slice_set_size(cfg.process.rho, s.u(i)));
  needed = std::min(needed, hard_cap);
  const Index p = s.clusters.front().mu.size();
  const Index q_new = is_adaptive(cfg.kind) ? s.max_q() : cfg.q;
  while (s.active() > needed) {
    if (s.clusters.back().n > 0) throw Error("slice sampler dropped a non-empty cluster");
    s.clusters.pop_back();
  }
  while (s.active() < needed) {
    Cluster c = prior_cluster(cfg, p, q_new, rng);
    const double g1 = static_cast<double>(s.active() + 1);
    c.v = sample_beta(rng, 1.0 - s.discount, s.alpha + g1 * s.discount);
    s.clusters.push_back(std::move(c));
  }
  set_weights_from_sticks(s);
}

// ---------------------------------------------------------------------------
// Cluster parameters
// ---------------------------------------------------------------------------

inline Matrix gather_rows(const Matrix& x, const std::vector<Index>& rows, Index cols = -1) {
  const Index c = cols < 0 ? x.cols() : cols;
  Matrix out(static_cast<Index>(rows.size()), c);
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]).head(c);
  return out;
}

inline void ensure_score_width(ChainState& s) {
  const Index width = s.max_q();
  const auto n = static_cast<Index>(s.z.size());
  if (s.eta.rows() != n || s.eta.cols() != width) {
    Matrix resized = Matrix::Zero(n, width);
    const Index keep = std::min(width, s.eta.cols());
    if (s.eta.rows() == n && keep > 0) resized.leftCols(keep) = s.eta.leftCols(keep);
    s.eta = std::move(resized);
  }
}

/// Zero every score beyond the factor count of the observation's cluster.
inline void pad_scores(ChainState& s) {
  ensure_score_width(s);
  for (std::size_t i = 0; i < s.z.size(); ++i) {
    const Index q = s.clusters[static_cast<std::size_t>(s.z[i])].q();
    if (q < s.eta.cols()) s.eta.row(static_cast<Index>(i)).tail(s.eta.cols() - q).setZero();
  }
}

/// eta_i ~ MVN(M^-1 Lambda^T Psi^-1 (x_i - mu), M^-1), M = I + Lambda^T Psi^-1 Lambda.
inline void update_factor_scores(ChainState& s, const Matrix& x, const Members& members, RngStream& rng) {
  ensure_score_width(s);
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    const auto& c = s.clusters[g];
    const auto& rows = members[g];
    const Index q = c.q();
    if (rows.empty()) continue;
    if (q == 0) {
      for (Index i : rows) s.eta.row(i).setZero();
      continue;
    }
    const Matrix w = c.psi.cwiseInverse().asDiagonal() * c.lambda;
    Matrix m = c.lambda.transpose() * w;
    m.diagonal().array() += 1.0;
    const Eigen::LLT<Matrix> llt(m);
    const Matrix resid = gather_rows(x, rows).rowwise() - c.mu.transpose();
    Matrix draws = llt.solve((resid * w).transpose());  // q x n means
    Matrix noise(q, static_cast<Index>(rows.size()));
    for (Index r = 0; r < noise.cols(); ++r)
      for (Index k = 0; k < q; ++k) noise(k, r) = rng.normal();
    draws += llt.matrixU().solve(noise);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      s.eta.row(rows[r]).head(q) = draws.col(static_cast<Index>(r)).transpose();
      s.eta.row(rows[r]).tail(s.eta.cols() - q).setZero();
    }
  }
}

/// mu_g ~ MVN with precision Sigma0^-1 + n_g Psi^-1.
inline void update_means(ChainState& s, const Matrix& x, const ModelConfig& cfg, const Members& members,
                         RngStream& rng) {
  const auto& prior = cfg.mean;
  const Index p = prior.mean.size();
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    auto& c = s.clusters[g];
    const auto& rows = members[g];
    if (rows.empty()) {
      c.mu = prior.mean + prior.cov_lower * rng.normal_vector(p);
      continue;
    }
    Matrix resid = gather_rows(x, rows);
    if (c.q() > 0) resid -= gather_rows(s.eta, rows, c.q()) * c.lambda.transpose();
    const Vector sum = resid.colwise().sum().transpose();
    const auto n = static_cast<double>(rows.size());
    const Vector psi_inv = c.psi.cwiseInverse();
    if (prior.diagonal) {
      const Vector prec = prior.precision.diagonal() + n * psi_inv;
      const Vector lin = prior.precision_mean + sum.cwiseProduct(psi_inv);
      for (Index j = 0; j < p; ++j) c.mu(j) = lin(j) / prec(j) + rng.normal() / std::sqrt(prec(j));
    } else {
      Matrix prec = prior.precision;
      prec.diagonal() += n * psi_inv;
      const Eigen::LLT<Matrix> llt(prec);
      if (llt.info() != Eigen::Success) throw FactorizationError("mean posterior precision is not positive definite");
      c.mu = sample_mvn_canonical(rng, llt, prior.precision_mean + sum.cwiseProduct(psi_inv));
    }
  }
}

/// Row-wise block update of each loadings matrix.
inline void update_loadings(ChainState& s, const Matrix& x, const ModelConfig& cfg, const Members& members,
                            RngStream& rng) {
  const bool mgp = is_adaptive(cfg.kind);
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    auto& c = s.clusters[g];
    const Index q = c.q();
    if (q == 0) continue;
    const Index p = c.mu.size();
    const auto& rows = members[g];
    Matrix ete = Matrix::Zero(q, q);
    Matrix etr = Matrix::Zero(q, p);
    if (!rows.empty()) {
      const Matrix e = gather_rows(s.eta, rows, q);
      ete = e.transpose() * e;
      etr = e.transpose() * (gather_rows(x, rows).rowwise() - c.mu.transpose());
    }
    for (Index j = 0; j < p; ++j) {
      const double psi_inv = 1.0 / c.psi(j);
      Matrix prec = ete * psi_inv;
      if (mgp) {
        prec.diagonal() += c.phi.row(j).transpose().cwiseProduct(c.tau);
      } else {
        prec.diagonal().array() += 1.0;
      }
      const Eigen::LLT<Matrix> llt(prec);
      if (llt.info() != Eigen::Success) throw FactorizationError("loadings posterior precision is not positive definite");
      c.lambda.row(j) = sample_mvn_canonical(rng, llt, etr.col(j) * psi_inv).transpose();
    }
  }
}

/// psi_jg ~ IG(a + n_g/2, b_j + SS_j/2); isotropic pools over j.
inline void update_uniquenesses(ChainState& s, const Matrix& x, const ModelConfig& cfg, const Members& members,
                                RngStream& rng) {
  const auto& prior = cfg.uniqueness;
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    auto& c = s.clusters[g];
    const auto& rows = members[g];
    const Index p = c.mu.size();
    Vector ss = Vector::Zero(p);
    if (!rows.empty()) {
      Matrix resid = gather_rows(x, rows).rowwise() - c.mu.transpose();
      if (c.q() > 0) resid -= gather_rows(s.eta, rows, c.q()) * c.lambda.transpose();
      ss = resid.colwise().squaredNorm().transpose();
    }
    const auto n = static_cast<double>(rows.size());
    if (prior.isotropic) {
      const double shape = prior.shape + n * static_cast<double>(p) / 2.0;
      c.psi.setConstant(sample_inverse_gamma(rng, shape, prior.rates(0) + ss.sum() / 2.0));
    } else {
      for (Index j = 0; j < p; ++j)
        c.psi(j) = sample_inverse_gamma(rng, prior.shape + n / 2.0, prior.rates(j) + ss(j) / 2.0);
    }
  }
}

/// Local (phi) and column-wise global (delta) MGP shrinkage parameters.
inline void update_mgp(ChainState& s, const ModelConfig& cfg, RngStream& rng) {
  const auto& h = cfg.mgp;
  for (auto& c : s.clusters) {
    const Index q = c.q();
    if (q == 0) continue;
    const Index p = c.mu.size();
    const Matrix sq = c.lambda.array().square();
    for (Index k = 0; k < q; ++k)
      for (Index j = 0; j < p; ++j) c.phi(j, k) = sample_gamma(rng, h.nu + 1.5, h.nu + 0.5 * c.tau(k) * sq(j, k));
    const Vector col = (c.phi.array() * sq.array()).colwise().sum().transpose();
    for (Index hcol = 0; hcol < q; ++hcol) {
      double acc = 0.0;
      for (Index k = hcol; k < q; ++k) acc += c.tau(k) / c.delta(hcol) * col(k);
      const double shape = (hcol == 0 ? h.alpha1 : h.alpha2) + static_cast<double>(p * (q - hcol)) / 2.0;
      const double rate = (hcol == 0 ? h.beta1 : h.beta2) + 0.5 * acc;
      c.delta(hcol) = sample_gamma(rng, shape, rate);
      recompute_tau(c);
    }
  }
}

// ---------------------------------------------------------------------------
// Allocations
// ---------------------------------------------------------------------------

inline Matrix cluster_log_densities(const ChainState& s, const Matrix& x) {
  Matrix ld(x.rows(), s.active());
  for (Index g = 0; g < s.active(); ++g) {
    const auto& c = s.clusters[static_cast<std::size_t>(g)];
    ld.col(g) = FactorDensity(c.mu, c.lambda, c.psi).log_density_rows(x);
  }
  return ld;
}

/// z_i ~ Mult over pi_g MVN(x_i; mu_g, Lambda_g Lambda_g^T + Psi_g) (finite kinds) or
/// over (pi_g / xi_g) 1(u_i < xi_g) MVN(...) (infinite kinds).
inline void update_allocations(ChainState& s, const Matrix& x, const ModelConfig& cfg, RngStream& rng,
                               bool use_likelihood = true) {
  const Index G = s.active();
  const Index n = static_cast<Index>(s.z.size());
  if (G == 1) {
    std::fill(s.z.begin(), s.z.end(), 0);
    refresh_counts(s);
    return;
  }
  const Matrix ld = use_likelihood ? cluster_log_densities(s, x) : Matrix::Zero(n, G);
  const bool infinite = is_infinite(cfg.kind);
  std::vector<double> base(static_cast<std::size_t>(G));
  for (Index g = 0; g < G; ++g) {
    const double pi = s.clusters[static_cast<std::size_t>(g)].pi;
    base[g] = pi > 0.0 ? std::log(pi) : kNegInf;
    if (infinite) base[g] -= std::log(slice_level(cfg.process.rho, g));
  }
  std::vector<double> w(static_cast<std::size_t>(G));
  for (Index i = 0; i < n; ++i) {
    const Index limit = infinite ? std::min(G, slice_set_size(cfg.process.rho, s.u(i))) : G;
    for (Index g = 0; g < G; ++g) w[g] = g < limit ? base[g] + ld(i, g) : kNegInf;
    s.z[static_cast<std::size_t>(i)] = static_cast<int>(gumbel_max_categorical(rng, w));
  }
  refresh_counts(s);
}

/// Permute clusters so that weights are non-increasing; labels follow.
/// Returns the permutation (new position -> old index).
inline std::vector<Index> reorder_by_weight(ChainState& s) {
  std::vector<Index> order(static_cast<std::size_t>(s.active()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return s.clusters[static_cast<std::size_t>(a)].pi > s.clusters[static_cast<std::size_t>(b)].pi;
  });
  std::vector<int> new_label(order.size());
  std::vector<Cluster> sorted;
  sorted.reserve(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    new_label[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos);
    sorted.push_back(std::move(s.clusters[static_cast<std::size_t>(order[pos])]));
  }
  s.clusters = std::move(sorted);
  for (auto& z : s.z) z = new_label[static_cast<std::size_t>(z)];
  Vector pi(s.active());
  for (Index g = 0; g < s.active(); ++g) pi(g) = s.clusters[static_cast<std::size_t>(g)].pi;
  cap_weight_total(pi);
  for (Index g = 0; g < s.active(); ++g) s.clusters[static_cast<std::size_t>(g)].pi = pi(g);
  set_sticks_from_weights(s);
  return order;
}

namespace detail {

inline void swap_cluster_contents(Cluster& a, Cluster& b, bool with_sticks) {
  std::swap(a.mu, b.mu);
  std::swap(a.lambda, b.lambda);
  std::swap(a.psi, b.psi);
  std::swap(a.phi, b.phi);
  std::swap(a.delta, b.delta);
  std::swap(a.tau, b.tau);
  std::swap(a.n, b.n);
  if (with_sticks) std::swap(a.v, b.v);
}

inline void swap_labels(std::vector<int>& z, int a, int b) {
  for (auto& l : z) {
    if (l == a) {
      l = b;
    } else if (l == b) {
      l = a;
    }
  }
}

}  // namespace detail

inline double move1_log_acceptance(const Cluster& g, const Cluster& h) {
  const double e = static_cast<double>(g.n - h.n);
  if (e == 0.0) return 0.0;
  return std::min(0.0, e * (std::log(h.pi) - std::log(g.pi)));
}

inline double move2_log_acceptance(const Cluster& g, const Cluster& next) {
  const double num = static_cast<double>(g.n) * std::log1p(-next.v);
  const double den = static_cast<double>(next.n) * std::log1p(-g.v);
  if (g.n == 0 && next.n == 0) return 0.0;
  return std::min(0.0, num - den);
}

/// Two label-switching Metropolis moves for stick-breaking mixtures:
///  1. swap two random non-empty clusters (weights stay in place);
///  2. swap neighbours g, g+1 together with their stick proportions.
inline void label_switch_moves(ChainState& s, RngStream& rng) {
  std::vector<int> nonempty;
  for (Index g = 0; g < s.active(); ++g)
    if (s.clusters[static_cast<std::size_t>(g)].n > 0) nonempty.push_back(static_cast<int>(g));
  if (nonempty.size() >= 2) {
    const auto a = rng.uniform_index(nonempty.size());
    auto b = rng.uniform_index(nonempty.size() - 1);
    if (b >= a) ++b;
    const int g = nonempty[a];
    const int h = nonempty[b];
    auto& cg = s.clusters[static_cast<std::size_t>(g)];
    auto& ch = s.clusters[static_cast<std::size_t>(h)];
    ++s.diag.move1_proposals;
    if (std::log(rng.uniform()) < move1_log_acceptance(cg, ch)) {
      detail::swap_cluster_contents(cg, ch, false);
      detail::swap_labels(s.z, g, h);
      ++s.diag.move1_accepts;
    }
  }
  if (s.active() >= 2) {
    const auto g = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(s.active() - 1)));
    auto& cg = s.clusters[static_cast<std::size_t>(g)];
    auto& cn = s.clusters[static_cast<std::size_t>(g + 1)];
    ++s.diag.move2_proposals;
    if (std::log(rng.uniform()) < move2_log_acceptance(cg, cn)) {
      detail::swap_cluster_contents(cg, cn, true);
      detail::swap_labels(s.z, g, g + 1);
      set_weights_from_sticks(s);
      ++s.diag.move2_accepts;
      reorder_by_weight(s);
    }
  }
}

// ---------------------------------------------------------------------------
// Process parameters
// ---------------------------------------------------------------------------

/// log P(partition | alpha, d) under the Pitman-Yor (d = 0: Dirichlet)
/// exchangeable partition probability function, counts of non-empty blocks.
inline double log_partition_probability(double alpha, double d, const std::vector<Index>& counts) {
  if (!(alpha > -d) || d < 0.0 || d >= 1.0) return kNegInf;
  Index n = 0;
  for (Index c : counts) n += c;
  const auto k = static_cast<Index>(counts.size());
  double lp = std::lgamma(alpha + 1.0) - std::lgamma(alpha + static_cast<double>(n));
  for (Index l = 1; l < k; ++l) lp += std::log(alpha + static_cast<double>(l) * d);
  for (Index c : counts) lp += std::lgamma(static_cast<double>(c) - d) - std::lgamma(1.0 - d);
  return lp;
}

/// Auxiliary-variable Gibbs draw of a DP concentration with a Ga(a, b) prior
/// given k occupied clusters among n observations.
inline double sample_dp_concentration(RngStream& rng, double alpha, Index k, Index n, double a, double b) {
  const double eta = sample_beta(rng, alpha + 1.0, static_cast<double>(n));
  const double rate = b - std::log(eta);
  const double odds = (a + static_cast<double>(k) - 1.0) / (static_cast<double>(n) * rate);
  const double weight = odds / (1.0 + odds);
  const double shape = rng.uniform() < weight ? a + static_cast<double>(k) : a + static_cast<double>(k) - 1.0;
  return sample_gamma(rng, shape, rate);
}

namespace detail {

inline double log_gamma_density(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_beta_density(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

inline double logit(double x) { return std::log(x) - std::log1p(-x); }

inline double log_normal_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace detail

/// Log prior of d: point mass kappa at 0 plus (1 - kappa) Beta(a', b') density.
inline double log_discount_prior(double d, const ProcessPrior& pp) {
  if (d == 0.0) return pp.kappa > 0.0 ? std::log(pp.kappa) : kNegInf;
  if (pp.kappa >= 1.0) return kNegInf;
  return std::log1p(-pp.kappa) + detail::log_beta_density(d, pp.discount_a, pp.discount_b);
}

/// Log density of the continuous part of the discount proposal at `to` given `from`.
inline double log_discount_kernel(double to, double from, const ProcessPrior& pp, double step) {
  if (from == 0.0) return detail::log_beta_density(to, pp.discount_a, pp.discount_b);
  return detail::log_normal_density(detail::logit(to), detail::logit(from), step) - std::log(to) - std::log1p(-to);
}

/// Log target of d given alpha and the partition (alpha | d prior included).
inline double log_discount_target(double d, double alpha, const ProcessPrior& pp, const std::vector<Index>& counts) {
  if (!(alpha + d > 0.0)) return kNegInf;
  return log_partition_probability(alpha, d, counts) +
         detail::log_gamma_density(alpha + d, pp.alpha_shape, pp.alpha_rate) + log_discount_prior(d, pp);
}

/// Metropolis-Hastings log acceptance ratio for moving the discount from `d` to `d_new`.
inline double discount_log_acceptance(double d, double d_new, double alpha, const ProcessPrior& pp,
                                      const std::vector<Index>& counts, double step) {
  if (d == 0.0 && d_new == 0.0) return 0.0;
  const double target_new = log_discount_target(d_new, alpha, pp, counts);
  if (target_new == kNegInf) return kNegInf;
  const double target_old = log_discount_target(d, alpha, pp, counts);
  // Proposal: 1/2 mass on d = 0, 1/2 on the continuous kernel.
  auto log_q = [&](double to, double from) {
    return std::log(0.5) + (to == 0.0 ? 0.0 : log_discount_kernel(to, from, pp, step));
  };
  return target_new + log_q(d, d_new) - target_old - log_q(d_new, d);
}

inline std::vector<Index> nonempty_counts(const ChainState& s) {
  std::vector<Index> counts;
  for (const auto& c : s.clusters)
    if (c.n > 0) counts.push_back(c.n);
  return counts;
}

inline void tune_step(double& step, long& proposals, long& accepts) {
  if (proposals < 50) return;
  const double rate = static_cast<double>(accepts) / static_cast<double>(proposals);
  if (rate < 0.2) step *= 0.7;
  if (rate > 0.4) step *= 1.3;
  step = std::clamp(step, 1e-3, 10.0);
  proposals = 0;
  accepts = 0;
}

/// DP: exact auxiliary-variable draw of alpha. PY: random-walk MH on
/// log(alpha + d) and on d with a point-mass-at-zero proposal component.
inline void update_process_params(ChainState& s, const ModelConfig& cfg, RngStream& rng) {
  const auto& pp = cfg.process;
  if (!is_infinite(cfg.kind)) return;
  const auto counts = nonempty_counts(s);
  const auto n = static_cast<Index>(s.z.size());
  auto& dg = s.diag;
  const bool tuning = s.iteration <= cfg.control.burnin;
  if (pp.kind == ProcessKind::Dirichlet) {
    if (pp.learn_alpha)
      s.alpha = sample_dp_concentration(rng, s.alpha, static_cast<Index>(counts.size()), n, pp.alpha_shape, pp.alpha_rate);
    return;
  }
  if (pp.learn_alpha) {
    const double x_old = std::log(s.alpha + s.discount);
    const double x_new = x_old + dg.alpha_step * rng.normal();
    const double alpha_new = std::exp(x_new) - s.discount;
    double log_r = kNegInf;
    if (alpha_new > -s.discount) {
      log_r = log_partition_probability(alpha_new, s.discount, counts) -
              log_partition_probability(s.alpha, s.discount, counts) +
              detail::log_gamma_density(alpha_new + s.discount, pp.alpha_shape, pp.alpha_rate) -
              detail::log_gamma_density(s.alpha + s.discount, pp.alpha_shape, pp.alpha_rate) + (x_new - x_old);
    }
    ++dg.alpha_proposals;
    ++dg.window_alpha_prop;
    if (std::log(rng.uniform()) < log_r) {
      s.alpha = alpha_new;
      ++dg.alpha_accepts;
      ++dg.window_alpha_acc;
    }
    if (tuning) tune_step(dg.alpha_step, dg.window_alpha_prop, dg.window_alpha_acc);
  }
  if (pp.learn_discount) {
    double d_new = 0.0;
    if (rng.uniform() >= 0.5) {
      if (s.discount == 0.0) {
        d_new = sample_beta(rng, pp.discount_a, pp.discount_b);
      } else {
        const double l = detail::logit(s.discount) + dg.discount_step * rng.normal();
        d_new = 1.0 / (1.0 + std::exp(-l));
      }
      if (!(d_new > 0.0 && d_new < 1.0)) d_new = s.discount;  // numerically saturated proposal
    }
    const double log_r = discount_log_acceptance(s.discount, d_new, s.alpha, pp, counts, dg.discount_step);
    ++dg.discount_proposals;
    ++dg.window_discount_prop;
    if (std::log(rng.uniform()) < log_r) {
      s.discount = d_new;
      ++dg.discount_accepts;
      ++dg.window_discount_acc;
    }
    if (tuning) tune_step(dg.discount_step, dg.window_discount_prop, dg.window_discount_acc);
  }
}

// ---------------------------------------------------------------------------
// Adaptive truncation
// ---------------------------------------------------------------------------

/// Indices of loadings columns with at least a fraction `prop` of entries
/// inside (-epsilon, epsilon).
inline std::vector<Index> redundant_columns(const Matrix& lambda, double epsilon, double prop) {
  std::vector<Index> out;
  const double needed = prop * static_cast<double>(lambda.rows()) - 1e-9;
  for (Index k = 0; k < lambda.cols(); ++k) {
    const auto small = (lambda.col(k).array().abs() < epsilon).count();
    if (static_cast<double>(small) >= needed) out.push_back(k);
  }
  return out;
}

inline void keep_columns(Cluster& c, const std::vector<Index>& keep) {
  const Index p = c.mu.size();
  Matrix lambda(p, static_cast<Index>(keep.size()));
  Matrix phi(p, static_cast<Index>(keep.size()));
  Vector delta(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    lambda.col(static_cast<Index>(k)) = c.lambda.col(keep[k]);
    phi.col(static_cast<Index>(k)) = c.phi.col(keep[k]);
    delta(static_cast<Index>(k)) = c.delta(keep[k]);
  }
  c.lambda = std::move(lambda);
  c.phi = std::move(phi);
  c.delta = std::move(delta);
  recompute_tau(c);
}

/// Resize a cluster to `q` columns: truncate, or pad with zero loadings and
/// prior shrinkage parameters.
inline void fit_columns(Cluster& c, Index q, const MgpHyper& h, RngStream& rng) {
  if (c.q() > q) {
    std::vector<Index> keep(static_cast<std::size_t>(q));
    std::iota(keep.begin(), keep.end(), 0);
    keep_columns(c, keep);
  }
  while (c.q() < q) {
    append_mgp_column(c, h, rng);
    c.lambda.col(c.q() - 1).setZero();
  }
}

/// With probability exp(-b0 - b1 t): drop redundant loadings columns of each
/// non-empty cluster, or append one prior column if none is redundant. Empty
/// clusters are then truncated or padded to the largest non-empty truncation.
/// Returns true when an adaptation step ran.
inline bool adapt_truncation(ChainState& s, const ModelConfig& cfg, long iter, RngStream& rng) {
  if (!is_adaptive(cfg.kind)) return false;
  const auto& h = cfg.mgp;
  if (h.adapt_after_burnin && iter <= cfg.control.burnin) return false;
  if (rng.uniform() > adaptation_probability(h, iter)) return false;
  ++s.diag.adaptations;
  std::vector<Index> grown;
  Index widest = 0;
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    auto& c = s.clusters[g];
    if (c.n == 0) continue;
    const auto red = redundant_columns(c.lambda, h.epsilon, h.prop);
    if (!red.empty()) {
      std::vector<Index> keep;
      for (Index k = 0; k < c.q(); ++k)
        if (std::find(red.begin(), red.end(), k) == red.end()) keep.push_back(k);
      keep_columns(c, keep);
    } else if (c.q() < cfg.q_max) {
      append_mgp_column(c, h, rng);
      grown.push_back(static_cast<Index>(g));
    }
    widest = std::max(widest, c.q());
  }
  for (auto& c : s.clusters)
    if (c.n == 0) fit_columns(c, widest, h, rng);
  ensure_score_width(s);
  // fresh scores for newly added columns
  for (std::size_t i = 0; i < s.z.size(); ++i) {
    const auto g = static_cast<Index>(s.z[i]);
    if (std::find(grown.begin(), grown.end(), g) == grown.end()) continue;
    s.eta(static_cast<Index>(i), s.clusters[static_cast<std::size_t>(g)].q() - 1) = rng.normal();
  }
  pad_scores(s);
  return true;
}

// ---------------------------------------------------------------------------
// Likelihood
// ---------------------------------------------------------------------------

/// sum_i log sum_g pi_g MVN(x_i; mu_g, Lambda_g Lambda_g^T + Psi_g) over the
/// non-empty clusters, weights renormalised over them.
inline double observed_loglik(const ChainState& s, const Matrix& x) {
  std::vector<Index> used;
  double total = 0.0;
  for (Index g = 0; g < s.active(); ++g) {
    const auto& c = s.clusters[static_cast<std::size_t>(g)];
    if (c.n > 0 || s.active() == 1) {
      used.push_back(g);
      total += c.pi;
    }
  }
  Matrix ld(x.rows(), static_cast<Index>(used.size()));
  std::vector<double> logw(used.size());
  for (std::size_t k = 0; k < used.size(); ++k) {
    const auto& c = s.clusters[static_cast<std::size_t>(used[k])];
    ld.col(static_cast<Index>(k)) = FactorDensity(c.mu, c.lambda, c.psi).log_density_rows(x);
    logw[k] = total > 0.0 ? std::log(c.pi / total) : -std::log(static_cast<double>(used.size()));
  }
  double out = 0.0;
  std::vector<double> row(used.size());
  for (Index i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < used.size(); ++k) row[k] = logw[k] + ld(i, static_cast<Index>(k));
    out += detail::log_sum_exp(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

inline ChainState initialize(const Matrix& x, const ModelConfig& cfg, RngStream& rng) {
  const Index n = x.rows();
  const Index p = x.cols();
  ChainState s;
  const Index G = cfg.G;
  if (G == 1) {
    s.z.assign(static_cast<std::size_t>(n), 0);
  } else {
    auto init = initial_labels(x, G, cfg.control.init, rng);
    s.diag.init_fallback = init.fell_back;
    s.z = std::move(init.labels);
  }
  for (Index g = 0; g < G; ++g) s.clusters.push_back(prior_cluster(cfg, p, cfg.q, rng));
  refresh_counts(s);
  const auto& pp = cfg.process;
  s.alpha = pp.alpha;
  s.discount = pp.discount;
  if (is_infinite(cfg.kind)) {
    if (pp.learn_discount)
      s.discount = rng.uniform() < pp.kappa ? 0.0 : sample_beta(rng, pp.discount_a, pp.discount_b);
    if (pp.learn_alpha) {
      s.alpha = sample_gamma(rng, pp.alpha_shape, pp.alpha_rate) - s.discount;
      if (!(s.alpha > -s.discount)) s.alpha = pp.alpha;
    }
    // largest clusters first, then sticks and slice variables consistent with them
    for (auto& c : s.clusters) c.pi = static_cast<double>(c.n);
    reorder_by_weight(s);
    update_sticks_and_weights(s, rng);
    refresh_slice_variables(s, cfg, rng);
  } else if (G > 1) {
    update_mixing_finite(s, cfg, rng);
  } else {
    s.clusters.front().pi = 1.0;
  }
  s.eta = Matrix::Zero(n, s.max_q());
  for (Index i = 0; i < n; ++i) {
    const Index q = s.clusters[static_cast<std::size_t>(s.z[static_cast<std::size_t>(i)])].q();
    for (Index k = 0; k < q; ++k) s.eta(i, k) = rng.normal();
  }
  return s;
}

}  // namespace imifa
