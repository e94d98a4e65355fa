#pragma once

// Starting allocations: a diagonal-covariance Gaussian mixture fitted by EM
// (seeded by k-means++), plain k-means, or uniform random labels.

#include <imifa/dist.hpp>
#include <imifa/model.hpp>
#include <imifa/types.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace imifa {

struct InitResult {
  std::vector<int> labels;  // 0-based
  bool converged = true;
  bool fell_back = false;
};

inline InitResult kmeans(const Matrix& x, Index k, RngStream& rng, int max_iter = 100) {
  const Index n = x.rows();
  if (k < 1 || k > n) throw ParameterError("k-means needs 1 <= k <= N");
  Matrix centres(k, x.cols());
  // k-means++ seeding
  centres.row(0) = x.row(static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(n))));
  Vector d2 = (x.rowwise() - centres.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        target -= d2(pick);
        if (target <= 0.0) break;
      }
    } else {
      pick = static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(n)));
    }
    centres.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centres.row(c)).rowwise().squaredNorm());
  }
  InitResult out;
  out.labels.assign(static_cast<std::size_t>(n), 0);
  out.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centres.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (out.labels[static_cast<std::size_t>(i)] != best || it == 0) {
        changed = changed || out.labels[static_cast<std::size_t>(i)] != best;
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
      }
    }
    Matrix sums = Matrix::Zero(k, x.cols());
    Vector counts = Vector::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(out.labels[static_cast<std::size_t>(i)]) += x.row(i);
      counts(out.labels[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Index c = 0; c < k; ++c) {
      if (counts(c) > 0) {
        centres.row(c) = sums.row(c) / counts(c);
      } else {
        // re-seed an empty centre at the point farthest from its centre
        Vector dist(n);
        for (Index i = 0; i < n; ++i)
          dist(i) = (x.row(i) - centres.row(out.labels[static_cast<std::size_t>(i)])).squaredNorm();
        Index far = 0;
        dist.maxCoeff(&far);
        centres.row(c) = x.row(far);
        out.labels[static_cast<std::size_t>(far)] = static_cast<int>(c);
        changed = true;
      }
    }
    if (!changed && it > 0) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// EM for a Gaussian mixture with diagonal covariances.
inline InitResult gmm_diagonal(const Matrix& x, Index k, RngStream& rng, int max_iter = 500, double tol = 1e-8) {
  const Index n = x.rows();
  const Index p = x.cols();
  InitResult start = kmeans(x, k, rng);
  const double floor = 1e-6 * std::max(1e-12, (x.rowwise() - x.colwise().mean()).array().square().mean());
  Matrix resp = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) resp(i, start.labels[static_cast<std::size_t>(i)]) = 1.0;
  Matrix means(k, p), vars(k, p);
  Vector weights(k);
  double previous = -std::numeric_limits<double>::infinity();
  InitResult out;
  out.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    // M-step
    const Vector nk = resp.colwise().sum().transpose();
    if (nk.minCoeff() < 1e-8) break;  // a component died
    weights = nk / static_cast<double>(n);
    means = (resp.transpose() * x).array().colwise() / nk.array();
    vars = (resp.transpose() * x.array().square().matrix()).array().colwise() / nk.array() - means.array().square();
    vars = vars.array().max(floor);
    // E-step
    Matrix logr(n, k);
    for (Index c = 0; c < k; ++c) {
      const double constant = std::log(weights(c)) - 0.5 * (static_cast<double>(p) * std::log(2.0 * std::numbers::pi) +
                                                          vars.row(c).array().log().sum());
      logr.col(c) = (constant - 0.5 * ((x.rowwise() - means.row(c)).array().square().rowwise() /
                                       vars.row(c).array())
                                          .rowwise()
                                          .sum())
                        .matrix();
    }
    double loglik = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double hi = logr.row(i).maxCoeff();
      const double norm = hi + std::log((logr.row(i).array() - hi).exp().sum());
      resp.row(i) = (logr.row(i).array() - norm).exp();
      loglik += norm;
    }
    if (!std::isfinite(loglik)) break;
    if (std::abs(loglik - previous) <= tol * std::abs(loglik)) {
      out.converged = true;
      break;
    }
    previous = loglik;
  }
  if (!out.converged) {
    start.fell_back = true;
    return start;
  }
  out.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    resp.row(i).maxCoeff(&best);
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline InitResult initial_labels(const Matrix& x, Index k, InitMethod method, RngStream& rng) {
  switch (method) {
    case InitMethod::Gmm: return gmm_diagonal(x, k, rng);
    case InitMethod::KMeans: return kmeans(x, k, rng);
    case InitMethod::Random: {
      InitResult out;
      out.labels.resize(static_cast<std::size_t>(x.rows()));
      for (auto& z : out.labels) z = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k)));
      return out;
    }
  }
  return {};
}

}  // namespace imifa
