#include <imifa/metrics.hpp>
#include <imifa/posthoc.hpp>

#include <gtest/gtest.h>

#include "oracles.hpp"

#include <algorithm>
#include <numeric>

using namespace imifa;

namespace {

Matrix random_matrix(RngStream& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix random_orthogonal(RngStream& rng, Index q) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, q, q));
  return qr.householderQ();
}

/// Sample whose labels are `base` permuted by `perm` (0-based, old -> new).
TraceSample permuted_sample(const std::vector<int>& base, const std::vector<int>& perm, long iter) {
  TraceSample s;
  s.iter = iter;
  int k = 0;
  for (int l : base) k = std::max(k, l);
  s.G0 = k;
  for (int l : base) s.z.push_back(perm[static_cast<std::size_t>(l - 1)] + 1);
  s.q.assign(static_cast<std::size_t>(k), 0);
  s.pi.assign(static_cast<std::size_t>(k), 0.0);
  for (int g = 0; g < k; ++g) {
    s.q[static_cast<std::size_t>(perm[g])] = g + 1;  // q identifies the true cluster
    s.pi[static_cast<std::size_t>(perm[g])] = 0.1 * (g + 1);
  }
  return s;
}

ChainTrace trace_of(std::vector<TraceSample> samples, ModelKind kind = ModelKind::IMIFA) {
  ChainTrace t;
  t.kind = kind;
  t.n = static_cast<Index>(samples.front().z.size());
  t.p = 3;
  t.samples = std::move(samples);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

TEST(Assignment, IdentityFavouringCost) {
  Matrix c = Matrix::Ones(4, 4) - Matrix::Identity(4, 4);
  const Assignment a = solve_assignment(c);
  EXPECT_EQ(a.perm, (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_EQ(a.cost, 0.0);
}

TEST(Assignment, SwapIsCheaper) {
  Matrix c(2, 2);
  c << 2, 1, 1, 2;
  const Assignment a = solve_assignment(c);
  EXPECT_EQ(a.perm, (std::vector<Index>{1, 0}));
  EXPECT_EQ(a.cost, 2.0);
}

TEST(Assignment, MatchesBruteForce) {
  RngStream rng(1);
  for (int rep = 0; rep < 300; ++rep) {
    const Index k = 1 + static_cast<Index>(rng.uniform_index(6));
    Matrix c(k, k);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = std::floor(20.0 * rng.uniform()) - 5.0;
    const Assignment a = solve_assignment(c);
    ASSERT_EQ(a.cost, oracle::brute_force_assignment(c));
    double check = 0.0;
    std::vector<bool> used(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
      check += c(i, a.perm[i]);
      ASSERT_FALSE(used[a.perm[i]]);
      used[a.perm[i]] = true;
    }
    ASSERT_EQ(check, a.cost);
  }
}

TEST(Assignment, Errors) {
  EXPECT_THROW(solve_assignment(Matrix::Zero(2, 3)), ShapeError);
  Matrix c = Matrix::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve_assignment(c), ParameterError);
}

// ---------------------------------------------------------------------------
// Relabelling
// ---------------------------------------------------------------------------

TEST(Relabel, IdenticalSampleKeepsIdentity) {
  const std::vector<int> z{1, 1, 2, 3, 2};
  EXPECT_EQ(match_to_template(z, z, 3), (std::vector<Index>{0, 1, 2}));
}

TEST(Relabel, SwappedLabelsRecovered) {
  const std::vector<int> templ{1, 1, 2, 2, 2};
  const std::vector<int> z{2, 2, 1, 1, 1};
  const auto perm = match_to_template(z, templ, 2);
  EXPECT_EQ(perm, (std::vector<Index>{1, 0}));
  TraceSample s = permuted_sample(templ, {1, 0}, 1);
  apply_label_permutation(s, perm);
  EXPECT_EQ(s.z, templ);
  EXPECT_EQ(s.q, (std::vector<Index>{1, 2}));
}

TEST(Relabel, TiesKeepIdentity) {
  // labels 1 and 2 agree equally well either way
  const std::vector<int> templ{1, 2, 1, 2};
  const std::vector<int> z{1, 1, 2, 2};
  EXPECT_EQ(match_to_template(z, templ, 2), (std::vector<Index>{0, 1}));
}

TEST(Relabel, TraceRelabellingIsIdempotentAndPreservesPartitions) {
  RngStream rng(2);
  std::vector<int> base;
  for (int i = 0; i < 30; ++i) base.push_back(1 + static_cast<int>(rng.uniform_index(3)));
  base[0] = 1;
  base[1] = 2;
  base[2] = 3;
  std::vector<TraceSample> samples;
  std::vector<int> perm{0, 1, 2};
  for (int t = 0; t < 12; ++t) {
    std::next_permutation(perm.begin(), perm.end());
    TraceSample s = permuted_sample(base, perm, t);
    // perturb a couple of labels so samples differ from the template
    s.z[static_cast<std::size_t>(3 + t)] = s.z[0];
    samples.push_back(s);
  }
  TraceSample two = permuted_sample(std::vector<int>(30, 1), {0}, 99);
  two.z[5] = 2;
  two.G0 = 2;
  two.q = {1, 1};
  two.pi = {0.5, 0.5};
  samples.push_back(two);
  const ChainTrace t = trace_of(samples);
  const RelabelResult once = relabel_trace(t, base);
  EXPECT_EQ(once.excluded, 1);
  ASSERT_EQ(once.trace.samples.size(), 12u);
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_EQ(adjusted_rand(once.trace.samples[k].z, t.samples[k].z), 1.0);
    EXPECT_EQ(once.trace.samples[k].q, (std::vector<Index>{1, 2, 3}));
  }
  const RelabelResult twice = relabel_trace(once.trace, base);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(twice.trace.samples[k].z, once.trace.samples[k].z);
}

// ---------------------------------------------------------------------------
// Procrustes
// ---------------------------------------------------------------------------

TEST(Procrustes, ExactRotationRecovered) {
  RngStream rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const Matrix templ = random_matrix(rng, 20, 4);
    const Matrix q = random_orthogonal(rng, 4);
    const Matrix lt = templ * q;
    const Rotation r = procrustes_rotation(lt, templ);
    EXPECT_LT((r.R.transpose() * r.R - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((lt * r.R - templ).norm(), 1e-8);
    EXPECT_LT((r.R - q.transpose()).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_FALSE(r.rank_deficient);
  }
}

TEST(Procrustes, TemplateItselfGivesIdentity) {
  RngStream rng(4);
  const Matrix templ = random_matrix(rng, 10, 3);
  EXPECT_LT((procrustes_rotation(templ, templ).R - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, JointRotationLeavesProductsInvariant) {
  RngStream rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix lt = random_matrix(rng, 8, 3);
    const Matrix templ = random_matrix(rng, 8, 3);
    const Matrix eta = random_matrix(rng, 12, 3);
    const Rotation r = procrustes_rotation(lt, templ);
    EXPECT_LT((r.R.transpose() * r.R - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
    const Matrix lr = lt * r.R;
    const Matrix er = eta * r.R;
    EXPECT_LT((lr * lr.transpose() - lt * lt.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((lr * er.transpose() - lt * eta.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Procrustes, RankDeficiencyFlagged) {
  Matrix a = Matrix::Zero(5, 2);
  a.col(0).setOnes();
  const Rotation r = procrustes_rotation(a, Matrix::Ones(5, 2));
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_LT((r.R.transpose() * r.R - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(procrustes_rotation(Matrix::Zero(5, 2), Matrix::Zero(4, 2)), ShapeError);
}

TEST(Procrustes, AlignRotatesScoresWithLoadings) {
  RngStream rng(6);
  const Matrix templ = random_matrix(rng, 6, 2);
  TraceSample s;
  s.G0 = 1;
  s.z = {1, 1, 1};
  s.q = {3};
  const Matrix q = random_orthogonal(rng, 2);
  Matrix lambda(6, 3);
  lambda.leftCols(2) = templ * q;
  lambda.col(2) = rng.normal_vector(6);
  s.clusters.push_back({Vector::Zero(6), Vector::Ones(6), lambda});
  s.eta = random_matrix(rng, 3, 3);
  const Matrix before = lambda.leftCols(2) * s.eta.leftCols(2).transpose();
  ChainTrace t = trace_of({s});
  EXPECT_EQ(procrustes_align(t, {templ}), 0);
  const auto& out = t.samples[0];
  EXPECT_LT((out.clusters[0].lambda.leftCols(2) - templ).norm(), 1e-8);
  EXPECT_EQ(out.clusters[0].lambda.col(2), lambda.col(2));
  EXPECT_LT((out.clusters[0].lambda.leftCols(2) * out.eta.leftCols(2).transpose() - before).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Procrustes, SignAlignment) {
  Matrix m(3, 2);
  m << 1, 0.2, -3, 0.1, 2, -0.5;
  align_signs(m);
  EXPECT_EQ(m(1, 0), 3.0);
  EXPECT_EQ(m(2, 1), 0.5);
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

TEST(Summary, CountIntervalExample) {
  const CountSummary c = summarize_counts({4, 4, 4, 5, 3});
  EXPECT_EQ(c.mode, 4);
  EXPECT_EQ(c.lower, 3);
  EXPECT_EQ(c.upper, 5);
  EXPECT_EQ(c.frequency.at(4), 3);
}

TEST(Summary, IntervalAlwaysContainsMode) {
  RngStream rng(7);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<Index> v;
    const auto n = 1 + rng.uniform_index(60);
    for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<Index>(rng.uniform_index(3) + rng.uniform_index(3)));
    const CountSummary c = summarize_counts(v);
    ASSERT_LE(c.lower, c.mode);
    ASSERT_GE(c.upper, c.mode);
    ASSERT_GE(c.lower, *std::min_element(v.begin(), v.end()));
    ASSERT_LE(c.upper, *std::max_element(v.begin(), v.end()));
  }
  EXPECT_THROW(summarize_counts({}), ParameterError);
}

TEST(Summary, QuantileType7) {
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(empirical_quantile(s, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(empirical_quantile(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(empirical_quantile(s, 1.0), 4.0);
}

TEST(Summary, ConstantClusterCountRetainsAll) {
  const std::vector<int> base{1, 1, 2, 2, 3, 3};
  std::vector<TraceSample> samples;
  std::vector<int> perm{0, 1, 2};
  for (int t = 0; t < 6; ++t) {
    samples.push_back(permuted_sample(base, perm, t));
    samples.back().loglik = -10.0 - t;
    std::next_permutation(perm.begin(), perm.end());
  }
  const PosteriorSummary s = summarize(trace_of(samples));
  EXPECT_EQ(s.modal_G, 3);
  EXPECT_FALSE(s.modal_G_tie);
  EXPECT_EQ(s.retained_samples, 6);
  EXPECT_EQ(s.excluded_samples, 0);
  EXPECT_EQ(s.map_z, base);
  for (int g = 0; g < 3; ++g) {
    EXPECT_EQ(s.clusters[g].q.mode, g + 1);
    EXPECT_NEAR(s.clusters[g].pi_mean, 0.1 * (g + 1), 1e-15);
  }
  ASSERT_TRUE(s.bicm);
  EXPECT_FALSE(s.bic_mcmc);
}

TEST(Summary, TiesGoToSmallerG) {
  std::vector<TraceSample> samples;
  samples.push_back(permuted_sample({1, 1, 2, 2, 3}, {0, 1, 2}, 1));
  samples.push_back(permuted_sample({1, 1, 2, 2, 2}, {0, 1}, 2));
  samples.push_back(permuted_sample({1, 1, 2, 2, 3}, {0, 1, 2}, 3));
  samples.push_back(permuted_sample({1, 1, 2, 2, 2}, {0, 1}, 4));
  const PosteriorSummary s = summarize(trace_of(samples));
  EXPECT_EQ(s.modal_G, 2);
  EXPECT_TRUE(s.modal_G_tie);
  EXPECT_EQ(s.template_index, 1);
  EXPECT_EQ(s.retained_samples, 2);
  EXPECT_EQ(s.excluded_samples, 2);
}

TEST(Summary, TemplateChoice) {
  const std::vector<int> base{1, 1, 2, 2};
  std::vector<TraceSample> samples;
  for (int t = 0; t < 4; ++t) {
    samples.push_back(permuted_sample(base, {0, 1}, t));
    samples.back().loglik = t == 2 ? 5.0 : -1.0;
  }
  EXPECT_EQ(summarize(trace_of(samples)).template_index, 0);
  EXPECT_EQ(summarize(trace_of(samples), {TemplateChoice::MaxLoglik}).template_index, 2);
}

TEST(Summary, LoadingsAlignedAndAveragedOverWideEnoughSamples) {
  RngStream rng(8);
  const Matrix templ = random_matrix(rng, 5, 2);
  std::vector<TraceSample> samples;
  for (int t = 0; t < 8; ++t) {
    TraceSample s;
    s.iter = t;
    s.G0 = 1;
    s.z.assign(4, 1);
    s.pi = {1.0};
    s.loglik = -1.0 * t;
    Matrix lambda;
    if (t == 5) {
      lambda = templ.leftCols(1);  // narrower than the modal q: excluded from the loadings mean
    } else if (t == 6) {
      lambda.resize(5, 3);
      lambda.leftCols(2) = templ * random_orthogonal(rng, 2);
      lambda.col(2).setConstant(9.0);
    } else {
      lambda = templ * random_orthogonal(rng, 2);
    }
    s.q = {lambda.cols()};
    s.clusters.push_back({Vector::Constant(5, t), Vector::Ones(5), lambda});
    samples.push_back(s);
  }
  ChainTrace trace = trace_of(samples, ModelKind::IFA);
  trace.p = 5;
  const PosteriorSummary s = summarize(trace);
  const auto& c = s.clusters[0];
  EXPECT_EQ(c.q.mode, 2);
  EXPECT_EQ(c.loadings_samples, 7);
  Matrix expected = samples[0].clusters[0].lambda;
  align_signs(expected);
  EXPECT_LT((c.loadings - expected).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(c.mean(0), 3.5, 1e-12);
}

TEST(Summary, CriteriaFollowKind) {
  std::vector<TraceSample> samples;
  for (int t = 0; t < 3; ++t) {
    samples.push_back(permuted_sample({1, 1, 1}, {0}, t));
    samples.back().loglik = -5.0 + t;
  }
  ChainTrace t = trace_of(samples, ModelKind::FA);
  t.n = 3;
  t.p = 2;
  t.q = 0;
  const PosteriorSummary s = summarize(t);
  ASSERT_TRUE(s.bic_mcmc);
  EXPECT_NEAR(*s.bic_mcmc, 2.0 * -3.0 - 4.0 * std::log(3.0), 1e-12);
  EXPECT_THROW(summarize(ChainTrace{}), ParameterError);
}

TEST(Summary, JsonHasDocumentedFields) {
  const PosteriorSummary s = summarize(trace_of({permuted_sample({1, 2, 2}, {0, 1}, 1), permuted_sample({1, 2, 2}, {1, 0}, 2)}));
  const auto j = to_json(s);
  for (const char* key : {"modal_G", "G_distribution", "clusters", "map_z", "kappa_hat", "retained_samples"})
    EXPECT_TRUE(j.contains(key)) << key;
}
