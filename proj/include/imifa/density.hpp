#pragma once

// Log-density of MVN(mu, Lambda Lambda^T + Psi) with Psi diagonal.
//
// With M = I_q + Lambda^T Psi^-1 Lambda = L L^T:
//   log|Sigma|        = log|Psi| + 2 sum log diag(L)
//   r^T Sigma^-1 r    = r^T Psi^-1 r - || L^-1 Lambda^T Psi^-1 r ||^2
// so nothing p x p is ever formed. q = 0 degenerates to a diagonal Gaussian.

#include <imifa/types.hpp>

#include <cmath>
#include <numbers>

namespace imifa {

class FactorDensity {
 public:
  FactorDensity(const Vector& mu, const Matrix& lambda, const Vector& psi) : mu_(mu), psi_inv_(psi.cwiseInverse()) {
    const auto p = static_cast<double>(mu.size());
    double log_det = psi.array().log().sum();
    if (lambda.cols() > 0) {
      w_ = psi_inv_.asDiagonal() * lambda;  // p x q
      Matrix m = lambda.transpose() * w_;
      m.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(m);
      lower_ = llt.matrixL();
      log_det += 2.0 * lower_.diagonal().array().log().sum();
    }
    constant_ = -0.5 * (p * std::log(2.0 * std::numbers::pi) + log_det);
  }

  double log_density(const Eigen::Ref<const Vector>& x) const {
    const Vector r = x - mu_;
    double quad = r.dot(psi_inv_.asDiagonal() * r);
    if (w_.cols() > 0) {
      const Vector c = lower_.triangularView<Eigen::Lower>().solve(w_.transpose() * r);
      quad -= c.squaredNorm();
    }
    return constant_ - 0.5 * quad;
  }

  /// Log-density of every row of x.
  Vector log_density_rows(const Matrix& x) const {
    const Matrix r = x.rowwise() - mu_.transpose();
    Vector quad = (r.array().square().rowwise() * psi_inv_.transpose().array()).rowwise().sum();
    if (w_.cols() > 0) {
      // rows of (r W) L^-T
      const Matrix c = lower_.triangularView<Eigen::Lower>().solve((r * w_).transpose());
      quad -= c.colwise().squaredNorm().transpose();
    }
    return (constant_ - 0.5 * quad.array()).matrix();
  }

 private:
  Vector mu_;
  Vector psi_inv_;
  Matrix w_;
  Matrix lower_;
  double constant_ = 0.0;
};

}  // namespace imifa
