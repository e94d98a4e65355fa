#pragma once

// Sweep driver and stored-sample trace.

#include <imifa/model.hpp>
#include <imifa/updates.hpp>

#include <functional>
#include <string>
#include <vector>

namespace imifa {

struct SweepOptions {
  bool prior_only = false;  // drop the likelihood: every cluster updates as if empty
  bool fix_means = false;   // hold cluster means at their current values
};

struct ClusterDraw {
  Vector mu;
  Vector psi;
  Matrix lambda;
};

/// One stored sample. Only non-empty clusters are kept, in the sampler's
/// cluster order, and z is relabelled to 1..G0 accordingly.
struct TraceSample {
  long iter = 0;
  Index G0 = 0;
  Index G_active = 0;
  double loglik = 0.0;
  double alpha = 0.0;
  double discount = 0.0;
  std::vector<int> z;
  std::vector<Index> q;
  std::vector<double> pi;
  std::vector<ClusterDraw> clusters;  // empty unless loadings are stored
  Matrix eta;                         // N x max q, only if scores are stored
};

struct ChainTrace {
  ModelKind kind = ModelKind::IMIFA;
  Index n = 0;
  Index p = 0;
  Index G = 1;  // configured G (ceiling for overfitted/infinite kinds)
  Index q = 0;  // configured q (starting truncation for adaptive kinds)
  McmcControl control;
  std::vector<TraceSample> samples;
  Diagnostics diag;
  double kappa_hat = 0.0;

  bool has_params() const { return !samples.empty() && !samples.front().clusters.empty(); }
};

inline TraceSample snapshot(const ChainState& s, const Matrix& x, const McmcControl& control) {
  TraceSample t;
  t.iter = s.iteration;
  t.G_active = s.active();
  t.alpha = s.alpha;
  t.discount = s.discount;
  t.loglik = observed_loglik(s, x);
  std::vector<int> compact(s.clusters.size(), -1);
  for (std::size_t g = 0; g < s.clusters.size(); ++g) {
    const auto& c = s.clusters[g];
    if (c.n == 0) continue;
    compact[g] = static_cast<int>(t.G0++) + 1;
    t.q.push_back(c.q());
    t.pi.push_back(c.pi);
    if (control.store_loadings) t.clusters.push_back({c.mu, c.psi, c.lambda});
  }
  t.z.reserve(s.z.size());
  for (int g : s.z) t.z.push_back(compact[static_cast<std::size_t>(g)]);
  if (control.store_scores && control.store_loadings) {
    Index w = 0;
    for (Index q : t.q) w = std::max(w, q);
    t.eta = s.eta.leftCols(w);
  }
  return t;
}

/// One full sweep. Scores are refreshed first because labels are drawn with
/// the scores integrated out.
inline void sweep(ChainState& s, const Matrix& x, const ModelConfig& cfg, RngStream& rng,
                  const SweepOptions& opts = {}) {
  ++s.iteration;
  try {
    const Members members = opts.prior_only ? Members(s.clusters.size()) : members_of(s);
    update_factor_scores(s, x, members, rng);
    if (!opts.fix_means) update_means(s, x, cfg, members, rng);
    update_loadings(s, x, cfg, members, rng);
    update_uniquenesses(s, x, cfg, members, rng);
    if (is_adaptive(cfg.kind)) update_mgp(s, cfg, rng);
    const bool infinite = is_infinite(cfg.kind);
    if (infinite) {
      update_sticks_and_weights(s, rng);
      update_slice(s, cfg, rng);
    } else if (s.active() > 1) {
      update_mixing_finite(s, cfg, rng);
    }
    update_allocations(s, x, cfg, rng, !opts.prior_only);
    if (infinite) {
      reorder_by_weight(s);
      if (cfg.control.label_switch_moves) label_switch_moves(s, rng);
      update_process_params(s, cfg, rng);
    }
    adapt_truncation(s, cfg, s.iteration, rng);
    if (infinite) refresh_slice_variables(s, cfg, rng);
    pad_scores(s);
  } catch (const Error& e) {
    throw Error("iteration " + std::to_string(s.iteration) + ": " + e.what());
  }
}

using SweepObserver = std::function<void(const ChainState&)>;

/// initialize, then n_iter sweeps; every thin-th post-burn-in state is stored.
inline ChainTrace fit(const Matrix& x, const ModelConfig& cfg, const SweepOptions& opts = {},
                      const SweepObserver& observer = {}) {
  validate(cfg, x.rows(), x.cols());
  RngStream rng(cfg.control.seed);
  ChainState s = initialize(x, cfg, rng);
  ChainTrace trace;
  trace.kind = cfg.kind;
  trace.n = x.rows();
  trace.p = x.cols();
  trace.G = cfg.G;
  trace.q = cfg.q;
  trace.control = cfg.control;
  const auto& mc = cfg.control;
  trace.samples.reserve(static_cast<std::size_t>(mc.stored_samples()));
  long zero_discounts = 0;
  for (long t = 1; t <= mc.n_iter; ++t) {
    sweep(s, x, cfg, rng, opts);
    if (observer) observer(s);
    if (t > mc.burnin && (t - mc.burnin) % mc.thin == 0 &&
        static_cast<long>(trace.samples.size()) < mc.stored_samples()) {
      trace.samples.push_back(snapshot(s, x, mc));
      if (s.discount == 0.0) ++zero_discounts;
    }
  }
  trace.diag = s.diag;
  if (!trace.samples.empty())
    trace.kappa_hat = static_cast<double>(zero_discounts) / static_cast<double>(trace.samples.size());
  return trace;
}

}  // namespace imifa
