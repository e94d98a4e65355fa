#pragma once

// Random sampling primitives shared by every MCMC update.
//
// All gamma-family draws are parameterised by shape and RATE. Draws whose
// shapes can be tiny (Dirichlet masses of overfitted mixtures, stick
// proportions with small concentration) go through log-space gamma variates
// so they never underflow to an all-zero simplex.

#include <imifa/types.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace imifa {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : xs) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : xs) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

}  // namespace detail

/// Seeded pseudo-random stream. A stream is identified by (seed, stream id);
/// split() derives a child stream whose identity depends only on the parent's
/// identity and the child index, never on how many draws the parent has made.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::uint64_t state = seed ^ (stream * 0xD1B54A32D192ED03ULL);
    std::vector<std::uint32_t> words(8);
    for (auto& w : words) w = static_cast<std::uint32_t>(detail::splitmix64(state) >> 32);
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  RngStream split(std::uint64_t child) const {
    std::uint64_t state = stream_ + 0x632BE59BD9B4E019ULL * (child + 1);
    return RngStream(seed_, detail::splitmix64(state));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::mt19937_64& engine() { return engine_; }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::generate_canonical<double, 53>(engine_);
    } while (u <= 0.0);
    return u;
  }

  double normal() { return normal_(engine_); }

  Vector normal_vector(Index n) {
    Vector out(n);
    for (Index i = 0; i < n; ++i) out(i) = normal();
    return out;
  }

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ParameterError(std::string(what) + " must be finite and > 0, got " + std::to_string(v));
}

/// Log of a Ga(shape, 1) variate; stable for arbitrarily small shapes.
inline double log_gamma_variate(RngStream& rng, double shape) {
  require_positive(shape, "gamma shape");
  if (shape >= 1.0) {
    return std::log(std::gamma_distribution<double>(shape, 1.0)(rng.engine()));
  }
  // Ga(a) = Ga(a + 1) * U^(1/a)
  const double boosted = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng.engine());
  return std::log(boosted) + std::log(rng.uniform()) / shape;
}

inline double sample_gamma(RngStream& rng, double shape, double rate) {
  require_positive(shape, "gamma shape");
  require_positive(rate, "gamma rate");
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng.engine());
}

inline double sample_inverse_gamma(RngStream& rng, double shape, double rate) {
  require_positive(shape, "inverse-gamma shape");
  require_positive(rate, "inverse-gamma rate");
  return 1.0 / std::gamma_distribution<double>(shape, 1.0 / rate)(rng.engine());
}

inline double sample_beta(RngStream& rng, double a, double b) {
  require_positive(a, "beta a");
  require_positive(b, "beta b");
  const double la = log_gamma_variate(rng, a);
  const double lb = log_gamma_variate(rng, b);
  // a / (a + b) computed without forming either gamma variate
  return 1.0 / (1.0 + std::exp(lb - la));
}

inline double sample_uniform(RngStream& rng, double lo, double hi) {
  if (!(lo < hi)) throw ParameterError("uniform requires lo < hi");
  return lo + (hi - lo) * rng.uniform();
}

inline Vector sample_dirichlet(RngStream& rng, const Vector& alpha) {
  if (alpha.size() == 0) throw ParameterError("dirichlet needs at least one component");
  std::vector<double> logs(static_cast<std::size_t>(alpha.size()));
  for (Index g = 0; g < alpha.size(); ++g) logs[g] = log_gamma_variate(rng, alpha(g));
  const double norm = detail::log_sum_exp(logs);
  Vector out(alpha.size());
  for (Index g = 0; g < alpha.size(); ++g) out(g) = std::exp(logs[g] - norm);
  return out;
}

/// Multivariate normal described either by its covariance or its precision.
struct MvnSpec {
  enum class Form { Covariance, Precision };

  Vector mean;
  Matrix matrix;
  Form form = Form::Covariance;
};

inline Eigen::LLT<Matrix> checked_cholesky(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw ShapeError(std::string(what) + ": matrix is not square");
  if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw FactorizationError(std::string(what) + ": matrix is not symmetric");
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw FactorizationError(std::string(what) + ": matrix is not positive definite");
  // LLT only reports failure on a non-positive pivot; catch exact zeros too.
  if (m.rows() > 0 && !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
    throw FactorizationError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

inline Vector sample_mvn(RngStream& rng, const MvnSpec& spec) {
  if (spec.mean.size() != spec.matrix.rows())
    throw ShapeError("sample_mvn: mean and matrix dimensions differ");
  const auto llt = checked_cholesky(spec.matrix, "sample_mvn");
  const Vector z = rng.normal_vector(spec.mean.size());
  if (spec.form == MvnSpec::Form::Covariance) return spec.mean + llt.matrixL() * z;
  // precision = L L^T  =>  L^-T z has covariance precision^-1
  return spec.mean + llt.matrixU().solve(z);
}

/// Draw from N(P^-1 b, P^-1) given the Cholesky factor of P. This is the
/// canonical form every conjugate Gaussian update reduces to.
inline Vector sample_mvn_canonical(RngStream& rng, const Eigen::LLT<Matrix>& precision,
                                   const Vector& linear) {
  const Vector mean = precision.solve(linear);
  return mean + precision.matrixU().solve(rng.normal_vector(linear.size()));
}

/// argmax_j (log_weights_j + noise_j). Split out so shift invariance can be
/// checked with shared noise.
inline std::size_t gumbel_argmax(std::span<const double> log_weights, std::span<const double> noise) {
  std::size_t best = log_weights.size();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < log_weights.size(); ++j) {
    if (log_weights[j] == -std::numeric_limits<double>::infinity()) continue;
    const double score = log_weights[j] + noise[j];
    if (best == log_weights.size() || score > best_score) {
      best = j;
      best_score = score;
    }
  }
  if (best == log_weights.size()) throw ParameterError("gumbel_max_categorical: no finite log weight");
  return best;
}

/// Categorical draw from unnormalised log weights; returns a 0-based index.
inline std::size_t gumbel_max_categorical(RngStream& rng, std::span<const double> log_weights) {
  thread_local std::vector<double> noise;
  noise.resize(log_weights.size());
  for (auto& g : noise) g = -std::log(-std::log(rng.uniform()));
  return gumbel_argmax(log_weights, noise);
}

}  // namespace imifa
