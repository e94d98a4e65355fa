#pragma once

// Model-selection criteria from sampled log-likelihoods.

#include <imifa/priors.hpp>
#include <imifa/types.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace imifa {

struct CriteriaInput {
  std::vector<double> loglik;
  Index n = 0;
  Index p = 0;
  Index G = 1;
  std::optional<Index> q;  // nullopt for adaptive-q models
};

inline void check_loglik(const std::vector<double>& ll, std::size_t minimum) {
  if (ll.size() < minimum)
    throw ParameterError("need at least " + std::to_string(minimum) + " log-likelihood samples, got " +
                         std::to_string(ll.size()));
  for (double v : ll)
    if (!std::isfinite(v)) throw ParameterError("non-finite log-likelihood sample");
}

/// G (pq - q(q-1)/2 + 2p) + G - 1.
inline double effective_parameters(Index p, Index G, Index q) {
  return static_cast<double>(G) * free_parameters(p, q) + static_cast<double>(G) - 1.0;
}

/// Closed forms in terms of ln N, so that non-integer N can be evaluated.
inline double bic_mcmc_value(double max_loglik, double params, double log_n) { return 2.0 * max_loglik - params * log_n; }
inline double bicm_value(double max_loglik, double variance, double log_n) {
  return 2.0 * max_loglik - 2.0 * variance * log_n;
}

inline double bic_mcmc(const CriteriaInput& in) {
  if (!in.q) throw ParameterError("BIC-MCMC needs a fixed number of factors; use BICM for adaptive models");
  check_loglik(in.loglik, 1);
  const double best = *std::max_element(in.loglik.begin(), in.loglik.end());
  return bic_mcmc_value(best, effective_parameters(in.p, in.G, *in.q), std::log(static_cast<double>(in.n)));
}

inline double sample_variance(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

inline double bicm(const CriteriaInput& in) {
  check_loglik(in.loglik, 2);
  const double best = *std::max_element(in.loglik.begin(), in.loglik.end());
  return bicm_value(best, sample_variance(in.loglik), std::log(static_cast<double>(in.n)));
}

}  // namespace imifa
