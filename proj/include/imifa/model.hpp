#pragma once

// Model kinds, resolved model configuration and the chain state that the
// sampler mutates in place.

#include <imifa/data.hpp>
#include <imifa/dist.hpp>
#include <imifa/priors.hpp>
#include <imifa/types.hpp>

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace imifa {

enum class ModelKind { FA, IFA, MFA, MIFA, OMFA, OMIFA, IMFA, IMIFA };

inline constexpr std::array<ModelKind, 8> kAllKinds{ModelKind::FA,   ModelKind::IFA,   ModelKind::MFA,
                                                    ModelKind::MIFA, ModelKind::OMFA,  ModelKind::OMIFA,
                                                    ModelKind::IMFA, ModelKind::IMIFA};

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::FA: return "FA";
    case ModelKind::IFA: return "IFA";
    case ModelKind::MFA: return "MFA";
    case ModelKind::MIFA: return "MIFA";
    case ModelKind::OMFA: return "OMFA";
    case ModelKind::OMIFA: return "OMIFA";
    case ModelKind::IMFA: return "IMFA";
    case ModelKind::IMIFA: return "IMIFA";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  for (auto k : kAllKinds)
    if (to_string(k) == s) return k;
  throw ParameterError("unknown model kind '" + s + "'");
}

/// Loadings carry an MGP shrinkage prior and a truncation that adapts.
inline bool is_adaptive(ModelKind k) {
  return k == ModelKind::IFA || k == ModelKind::MIFA || k == ModelKind::OMIFA || k == ModelKind::IMIFA;
}
inline bool is_infinite(ModelKind k) { return k == ModelKind::IMFA || k == ModelKind::IMIFA; }
inline bool is_overfitted(ModelKind k) { return k == ModelKind::OMFA || k == ModelKind::OMIFA; }
inline bool is_single_cluster(ModelKind k) { return k == ModelKind::FA || k == ModelKind::IFA; }

enum class InitMethod { Gmm, KMeans, Random };

inline std::string to_string(InitMethod m) {
  switch (m) {
    case InitMethod::Gmm: return "gmm";
    case InitMethod::KMeans: return "kmeans";
    case InitMethod::Random: return "random";
  }
  return "gmm";
}

inline InitMethod parse_init_method(const std::string& s) {
  if (s == "gmm") return InitMethod::Gmm;
  if (s == "kmeans") return InitMethod::KMeans;
  if (s == "random") return InitMethod::Random;
  throw ParameterError("unknown initializer '" + s + "'");
}

struct McmcControl {
  long n_iter = 50000;
  long burnin = 10000;
  long thin = 2;
  std::uint64_t seed = 1;
  bool store_loadings = true;
  bool store_scores = false;
  bool label_switch_moves = true;
  InitMethod init = InitMethod::Gmm;

  long stored_samples() const { return n_iter > burnin ? (n_iter - burnin) / thin : 0; }
};

/// MVN(mean, cov) prior on every cluster mean. Diagonal when N <= p.
struct MeanPrior {
  Vector mean;
  Matrix cov;
  bool diagonal = false;

  // derived by finalize()
  Matrix precision;
  Vector precision_mean;
  Matrix cov_lower;

  void finalize() {
    if (diagonal) cov = Matrix(cov.diagonal().asDiagonal());
    const auto llt = checked_cholesky(cov, "mean prior covariance");
    cov_lower = llt.matrixL();
    precision = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    precision = 0.5 * (precision + precision.transpose());
    precision_mean = precision * mean;
  }
};

struct ModelConfig {
  ModelKind kind = ModelKind::IMIFA;
  Index G = 1;      // fixed G, or the starting ceiling for overfitted/infinite kinds
  Index q = 0;      // fixed q, or the starting truncation for adaptive kinds
  Index q_max = 0;  // ceiling on adaptive growth
  UniquenessPrior uniqueness;
  MeanPrior mean;
  MgpHyper mgp;
  ProcessPrior process;
  McmcControl control;
};

inline void validate(const ModelConfig& c, Index n, Index p) {
  if (n < 2 || p < 1) throw ShapeError("need N >= 2 and p >= 1");
  const auto& mc = c.control;
  if (mc.n_iter < 1 || mc.thin < 1) throw ParameterError("n_iter and thin must be positive");
  if (mc.burnin < 0 || mc.burnin >= mc.n_iter) throw ParameterError("burnin must lie in [0, n_iter)");
  if (c.G < 1) throw ParameterError("G must be >= 1");
  if (c.G > n) throw ParameterError("G must not exceed N");
  if (is_single_cluster(c.kind) && c.G != 1) throw ParameterError(to_string(c.kind) + " has exactly one cluster");
  if (c.q < 0 || c.q > p) throw ParameterError("q must lie in [0, p]");
  if (is_adaptive(c.kind) && c.q_max < c.q) throw ParameterError("q_max below the starting truncation");
  if (c.uniqueness.rates.size() != (c.uniqueness.isotropic ? 1 : p))
    throw ShapeError("uniqueness rates have the wrong length");
  if (!(c.uniqueness.shape > 1.0)) throw ParameterError("uniqueness shape must exceed 1");
  if ((c.uniqueness.rates.array() <= 0.0).any()) throw ParameterError("uniqueness rates must be > 0");
  if (c.mean.mean.size() != p || c.mean.cov.rows() != p) throw ShapeError("mean prior has the wrong dimension");
  if (is_adaptive(c.kind)) validate_mgp(c.mgp);
  const auto pk = c.process.kind;
  if (is_overfitted(c.kind) != (pk == ProcessKind::Overfitted))
    throw ParameterError("overfitted kinds pair with the overfitted process prior");
  if (is_infinite(c.kind) != (pk == ProcessKind::Dirichlet || pk == ProcessKind::PitmanYor))
    throw ParameterError("infinite kinds pair with a DP or PY process prior");
  validate_process(c.process, pk == ProcessKind::Overfitted ? free_parameters(p, is_adaptive(c.kind) ? 0 : c.q) : 0.0);
}

/// User-level choices; resolve() turns them into a ModelConfig using the data.
struct ModelSettings {
  ModelKind kind = ModelKind::IMIFA;
  Index G = 0;   // 0: kind default
  Index q = -1;  // -1: kind default
  Index cluster_ceiling = 0;
  double uniqueness_shape = 2.5;
  std::optional<bool> isotropic;
  std::optional<MgpHyper> mgp;  // replaces the defaults entirely
  MgpOverrides mgp_overrides;   // applied on top of mgp or the defaults
  std::optional<ProcessPrior> process;
  McmcControl control;
};

inline ProcessPrior default_process(ModelKind kind) {
  ProcessPrior pp;
  if (is_overfitted(kind)) {
    pp.kind = ProcessKind::Overfitted;
    pp.alpha = 0.0;  // derived from d_free and G*
  } else if (is_infinite(kind)) {
    pp.kind = ProcessKind::PitmanYor;
    pp.learn_alpha = true;
    pp.learn_discount = true;
  }
  return pp;
}

inline ModelConfig resolve(const ModelSettings& s, const Dataset& d) {
  const Index n = d.n();
  const Index p = d.p();
  ModelConfig c;
  c.kind = s.kind;
  c.control = s.control;
  if (is_single_cluster(s.kind)) {
    c.G = 1;
  } else if (is_overfitted(s.kind) || is_infinite(s.kind)) {
    c.G = resolve_cluster_ceiling(n, s.cluster_ceiling > 0 ? s.cluster_ceiling : s.G);
  } else {
    if (s.G < 1) throw ParameterError(to_string(s.kind) + " needs G");
    c.G = s.G;
  }
  c.q_max = std::max<Index>(0, std::min(p, n - 1));
  if (is_adaptive(s.kind)) {
    c.q = s.q >= 0 ? s.q : init_truncation(p, n);
  } else {
    if (s.q < 0) throw ParameterError(to_string(s.kind) + " needs q");
    c.q = s.q;
  }
  const Matrix cov = sample_covariance(d.x);
  const bool iso = s.isotropic.value_or(false) || isotropic_required(n, p);
  c.uniqueness = derive_uniqueness_rates(cov, s.uniqueness_shape, iso);
  c.mean.mean = column_means(d.x);
  c.mean.cov = cov;
  c.mean.diagonal = n <= p;
  c.mean.finalize();
  c.mgp = apply_mgp_overrides(s.mgp.value_or(default_mgp(p, is_adaptive(s.kind) && !is_single_cluster(s.kind))),
                              s.mgp_overrides);
  c.process = s.process.value_or(default_process(s.kind));
  if (c.process.kind == ProcessKind::Overfitted && !(c.process.alpha > 0.0)) {
    const double d_free = free_parameters(p, is_adaptive(s.kind) ? 0 : c.q);
    if (c.process.gamma > 0.0) {
      c.process.alpha = c.process.gamma / static_cast<double>(c.G);
    } else {
      c.process.alpha = overfitted_component_mass(d_free, c.G);
    }
  }
  if (c.process.kind == ProcessKind::Overfitted) c.process.gamma = c.process.alpha * static_cast<double>(c.G);
  validate(c, n, p);
  return c;
}

struct Cluster {
  Vector mu;      // p
  Matrix lambda;  // p x q
  Vector psi;     // p (all equal when isotropic)
  Matrix phi;     // p x q local shrinkage (adaptive kinds)
  Vector delta;   // q
  Vector tau;     // q, cumulative product of delta
  double v = 0.0;
  double pi = 0.0;
  Index n = 0;

  Index q() const { return lambda.cols(); }
};

struct Diagnostics {
  long alpha_proposals = 0;
  long alpha_accepts = 0;
  long discount_proposals = 0;
  long discount_accepts = 0;
  long move1_proposals = 0;
  long move1_accepts = 0;
  long move2_proposals = 0;
  long move2_accepts = 0;
  long adaptations = 0;
  bool init_fallback = false;
  // random-walk scales, tuned during burn-in
  double alpha_step = 0.5;
  double discount_step = 0.5;
  long window_alpha_prop = 0;
  long window_alpha_acc = 0;
  long window_discount_prop = 0;
  long window_discount_acc = 0;
};

struct ChainState {
  std::vector<int> z;  // 0-based cluster index per observation
  std::vector<Cluster> clusters;
  Matrix eta;  // N x max_g q_g
  Vector u;    // slice variables (infinite kinds)
  double alpha = 1.0;
  double discount = 0.0;
  long iteration = 0;
  Diagnostics diag;

  Index active() const { return static_cast<Index>(clusters.size()); }

  Index max_q() const {
    Index m = 0;
    for (const auto& c : clusters) m = std::max(m, c.q());
    return m;
  }
};

inline void refresh_counts(ChainState& s) {
  for (auto& c : s.clusters) c.n = 0;
  for (int g : s.z) ++s.clusters[static_cast<std::size_t>(g)].n;
}

inline Index count_nonempty(const ChainState& s) {
  return static_cast<Index>(std::count_if(s.clusters.begin(), s.clusters.end(), [](const Cluster& c) { return c.n > 0; }));
}

/// Members of each cluster, in observation order.
using Members = std::vector<std::vector<Index>>;

inline Members members_of(const ChainState& s) {
  Members m(s.clusters.size());
  for (std::size_t i = 0; i < s.z.size(); ++i) m[static_cast<std::size_t>(s.z[i])].push_back(static_cast<Index>(i));
  return m;
}

}  // namespace imifa
