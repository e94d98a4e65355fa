#include <imifa/data.hpp>
#include <imifa/sampler.hpp>
#include <imifa/trace_io.hpp>

#include <gtest/gtest.h>

#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

using namespace imifa;
namespace fs = std::filesystem;

namespace {

Dataset toy_data(Index n = 60, Index p = 4, double sep = 3.0, std::uint64_t seed = 1) {
  SimSpec spec;
  spec.n = n;
  spec.p = p;
  spec.q = {1, 1};
  spec.pi = {0.5, 0.5};
  spec.separation = sep;
  spec.seed = seed;
  return preprocess(simulate_mfa(spec).first, {true, ScaleMode::Unit});
}

ModelConfig config_for(ModelKind kind, const Dataset& d, long n_iter, long burnin, long thin = 1, std::uint64_t seed = 1) {
  ModelSettings s;
  s.kind = kind;
  if (kind == ModelKind::MFA || kind == ModelKind::MIFA) s.G = 2;
  if (!is_adaptive(kind)) s.q = 1;
  if (is_adaptive(kind)) s.q = 2;
  if (is_overfitted(kind) || is_infinite(kind)) s.cluster_ceiling = 6;
  s.control.n_iter = n_iter;
  s.control.burnin = burnin;
  s.control.thin = thin;
  s.control.seed = seed;
  return resolve(s, d);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("imifa_sampler_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Fit, BurninPlusTwoStoresTwo) {
  const Dataset d = toy_data();
  const ModelConfig cfg = config_for(ModelKind::MFA, d, 12, 10, 1);
  const ChainTrace t = fit(d.x, cfg);
  ASSERT_EQ(t.samples.size(), 2u);
  EXPECT_EQ(t.samples[0].iter, 11);
  EXPECT_EQ(t.samples[1].iter, 12);
}

TEST(Fit, ThinningBookkeeping) {
  const Dataset d = toy_data();
  const ModelConfig cfg = config_for(ModelKind::IMIFA, d, 50, 20, 3);
  const ChainTrace t = fit(d.x, cfg);
  EXPECT_EQ(static_cast<long>(t.samples.size()), cfg.control.stored_samples());
  EXPECT_EQ(t.samples.size(), 10u);
  for (std::size_t k = 0; k < t.samples.size(); ++k) EXPECT_EQ(t.samples[k].iter, 20 + 3 * static_cast<long>(k + 1));
}

TEST(Fit, EveryKindRunsAndStoresConsistentSamples) {
  const Dataset d = toy_data();
  for (ModelKind kind : kAllKinds) {
    SCOPED_TRACE(to_string(kind));
    const ModelConfig cfg = config_for(kind, d, 40, 20, 2);
    const ChainTrace t = fit(d.x, cfg);
    ASSERT_EQ(t.samples.size(), 10u);
    for (const auto& s : t.samples) {
      std::set<int> labels(s.z.begin(), s.z.end());
      ASSERT_EQ(static_cast<Index>(labels.size()), s.G0);
      EXPECT_EQ(*labels.begin(), 1);
      EXPECT_EQ(*labels.rbegin(), s.G0);
      ASSERT_EQ(static_cast<Index>(s.clusters.size()), s.G0);
      ASSERT_EQ(static_cast<Index>(s.q.size()), s.G0);
      for (std::size_t g = 0; g < s.q.size(); ++g) {
        EXPECT_EQ(s.clusters[g].lambda.cols(), s.q[g]);
        if (!is_adaptive(kind)) EXPECT_EQ(s.q[g], 1);
      }
      EXPECT_TRUE(std::isfinite(s.loglik));
      if (is_single_cluster(kind)) EXPECT_EQ(s.G0, 1);
      if (kind == ModelKind::MFA || kind == ModelKind::MIFA) EXPECT_LE(s.G0, 2);
    }
    EXPECT_GE(t.kappa_hat, 0.0);
    EXPECT_LE(t.kappa_hat, 1.0);
  }
}

TEST(Fit, InfiniteStatesSatisfySliceAndStickInvariants) {
  const Dataset d = toy_data(80, 5, 2.5, 4);
  const ModelConfig cfg = config_for(ModelKind::IMIFA, d, 300, 50, 1);
  const double rho = cfg.process.rho;
  long violations = 0;
  fit(d.x, cfg, {}, [&](const ChainState& s) {
    double total = 0.0;
    for (Index g = 0; g < s.active(); ++g) {
      const auto& c = s.clusters[static_cast<std::size_t>(g)];
      total += c.pi;
      if (g > 0 && c.pi > s.clusters[static_cast<std::size_t>(g - 1)].pi) ++violations;
      double acc = 1.0;
      for (Index k = 0; k < c.q(); ++k) {
        acc *= c.delta(k);
        if (c.tau(k) != acc) ++violations;
      }
    }
    if (total > 1.0 + 1e-12) ++violations;
    for (std::size_t i = 0; i < s.z.size(); ++i)
      if (!(s.u(static_cast<Index>(i)) < slice_level(rho, s.z[i]))) ++violations;
    auto check = s;
    refresh_counts(check);
    for (Index g = 0; g < s.active(); ++g)
      if (check.clusters[static_cast<std::size_t>(g)].n != s.clusters[static_cast<std::size_t>(g)].n) ++violations;
    if (s.eta.cols() != s.max_q()) ++violations;
  });
  EXPECT_EQ(violations, 0);
}

TEST(Fit, SeedDeterminismIsByteIdentical) {
  const Dataset d = toy_data();
  ModelConfig cfg = config_for(ModelKind::IMIFA, d, 60, 20, 2, 77);
  cfg.control.store_scores = true;
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b"), c = scratch_dir("det_c");
  write_trace(a, fit(d.x, cfg));
  write_trace(b, fit(d.x, cfg));
  for (const char* f : {"trace.meta.json", "trace.scalars.csv", "trace.z.bin", "trace.params.bin"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  cfg.control.seed = 78;
  write_trace(c, fit(d.x, cfg));
  EXPECT_NE(slurp(a / "trace.scalars.csv"), slurp(c / "trace.scalars.csv"));
  for (const auto& dir : {a, b, c}) fs::remove_all(dir);
}

TEST(Fit, PriorOnlyUniquenessesFollowThePrior) {
  const Dataset d = toy_data(30, 2);
  ModelConfig cfg = config_for(ModelKind::FA, d, 4000, 0, 1);
  std::vector<double> psi;
  fit(d.x, cfg, {true, false}, [&](const ChainState& s) { psi.push_back(s.clusters[0].psi(0)); });
  const double a = cfg.uniqueness.shape, b = cfg.uniqueness.rate(0);
  EXPECT_NEAR(oracle::mean(psi), oracle::ig_mean(a, b), 3.0 * oracle::batch_means_se(psi));
}

TEST(Fit, FixedMeansStayPut) {
  const Dataset d = toy_data();
  const ModelConfig cfg = config_for(ModelKind::MFA, d, 20, 0, 1);
  RngStream rng(cfg.control.seed);
  ChainState s = initialize(d.x, cfg, rng);
  const Vector mu0 = s.clusters[0].mu;
  for (int t = 0; t < 5; ++t) sweep(s, d.x, cfg, rng, {false, true});
  EXPECT_EQ(s.clusters[0].mu, mu0);
}

TEST(Fit, NumericalFailureIsIterationStamped) {
  const Dataset d = toy_data();
  const ModelConfig cfg = config_for(ModelKind::MFA, d, 20, 0, 1);
  RngStream rng(1);
  ChainState s = initialize(d.x, cfg, rng);
  for (auto& c : s.clusters) c.psi.setConstant(-1e-9);
  try {
    sweep(s, d.x, cfg, rng);
    FAIL() << "expected a numerical failure";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("iteration 1:", 0), 0u) << e.what();
  }
}

TEST(Fit, InvalidControlRejected) {
  const Dataset d = toy_data();
  ModelConfig cfg = config_for(ModelKind::MFA, d, 20, 0, 1);
  cfg.control.burnin = 20;
  EXPECT_THROW(fit(d.x, cfg), ParameterError);
  cfg.control.burnin = 0;
  cfg.control.thin = 0;
  EXPECT_THROW(fit(d.x, cfg), ParameterError);
}

TEST(Snapshot, CompactsEmptyClusters) {
  const Dataset d = toy_data(10, 2);
  const ModelConfig cfg = config_for(ModelKind::OMFA, d, 10, 0, 1);
  RngStream rng(3);
  ChainState s = initialize(d.x, cfg, rng);
  std::fill(s.z.begin(), s.z.end(), 4);
  s.z[0] = 2;
  refresh_counts(s);
  const TraceSample t = snapshot(s, d.x, cfg.control);
  EXPECT_EQ(t.G0, 2);
  EXPECT_EQ(count_nonempty(s), 2);
  EXPECT_EQ(t.z[0], 1);
  EXPECT_EQ(t.z[1], 2);
  EXPECT_EQ(t.pi[0], s.clusters[2].pi);
  std::fill(s.z.begin(), s.z.end(), 0);
  refresh_counts(s);
  EXPECT_EQ(count_nonempty(s), 1);
}

TEST(TraceIo, RoundTripIsExact) {
  const Dataset d = toy_data();
  ModelConfig cfg = config_for(ModelKind::IMIFA, d, 40, 20, 2, 5);
  cfg.control.store_scores = true;
  const ChainTrace t = fit(d.x, cfg);
  const fs::path dir = scratch_dir("roundtrip");
  write_trace(dir, t);
  const LoadedTrace r = read_trace(dir);
  const ChainTrace& u = r.trace;
  EXPECT_EQ(u.kind, t.kind);
  EXPECT_EQ(u.n, t.n);
  EXPECT_EQ(u.p, t.p);
  EXPECT_EQ(u.kappa_hat, t.kappa_hat);
  EXPECT_EQ(u.diag.move1_proposals, t.diag.move1_proposals);
  ASSERT_EQ(u.samples.size(), t.samples.size());
  for (std::size_t k = 0; k < t.samples.size(); ++k) {
    const auto& a = t.samples[k];
    const auto& b = u.samples[k];
    EXPECT_EQ(a.iter, b.iter);
    EXPECT_EQ(a.G0, b.G0);
    EXPECT_EQ(a.G_active, b.G_active);
    EXPECT_EQ(a.loglik, b.loglik);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_EQ(a.discount, b.discount);
    EXPECT_EQ(a.z, b.z);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.pi, b.pi);
    ASSERT_EQ(a.clusters.size(), b.clusters.size());
    for (std::size_t g = 0; g < a.clusters.size(); ++g) {
      EXPECT_EQ(a.clusters[g].mu, b.clusters[g].mu);
      EXPECT_EQ(a.clusters[g].psi, b.clusters[g].psi);
      EXPECT_EQ(a.clusters[g].lambda, b.clusters[g].lambda);
    }
    EXPECT_EQ(a.eta, b.eta);
  }
  fs::remove_all(dir);
}

TEST(TraceIo, MissingFilesAreErrors) {
  const fs::path dir = scratch_dir("missing");
  fs::create_directories(dir);
  EXPECT_THROW(read_trace(dir), IoError);
  fs::remove_all(dir);
}

TEST(TraceIo, TruncatedBinaryIsAnError) {
  const Dataset d = toy_data();
  const ChainTrace t = fit(d.x, config_for(ModelKind::MFA, d, 14, 10, 1));
  const fs::path dir = scratch_dir("truncated");
  write_trace(dir, t);
  fs::resize_file(dir / "trace.z.bin", 8);
  EXPECT_THROW(read_trace(dir), IoError);
  fs::remove_all(dir);
}
