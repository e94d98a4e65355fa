#include <imifa/data.hpp>
#include <imifa/init.hpp>
#include <imifa/model.hpp>
#include <imifa/priors.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace imifa;

namespace {

Dataset read(const std::string& text, bool header = false, std::optional<std::string> label = std::nullopt) {
  std::istringstream in(text);
  return read_matrix(in, header, label);
}

}  // namespace

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

TEST(Read, ThreeByTwo) {
  const Dataset d = read("1,2\n3,4\n5,6");
  EXPECT_EQ(d.n(), 3);
  EXPECT_EQ(d.p(), 2);
  EXPECT_EQ(d.x(2, 1), 6.0);
  EXPECT_EQ(d.var_names[1], "V2");
}

TEST(Read, HeaderAndLabelColumn) {
  const Dataset d = read("a,area,b\n1,south,2\n3,north,4\n5,south,6\n", true, "area");
  EXPECT_EQ(d.p(), 2);
  EXPECT_EQ(d.var_names, (std::vector<std::string>{"a", "b"}));
  ASSERT_TRUE(d.true_labels);
  EXPECT_EQ(*d.true_labels, (std::vector<int>{1, 2, 1}));
}

TEST(Read, IntegerLabelsKeepNumericOrder) {
  const Dataset d = read("a,g\n1,3\n2,1\n3,2\n", true, "g");
  EXPECT_EQ(*d.true_labels, (std::vector<int>{3, 1, 2}));
}

TEST(Read, NonNumericCellNamesRowAndColumn) {
  try {
    read("1,2\nabc,4\n5,6");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 1);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Read, RaggedRowsAreShapeErrors) {
  EXPECT_THROW(read("1,2\n3\n5,6"), ShapeError);
  EXPECT_THROW(read("1,2\n"), ShapeError);
}

TEST(Read, MissingFile) { EXPECT_THROW(load_matrix("/nonexistent/file.csv", true), IoError); }

TEST(Read, LabelFile) {
  const auto path = std::filesystem::temp_directory_path() / "imifa_labels_test.csv";
  {
    std::ofstream out(path);
    out << "id,area\n1,A\n2,B\n3,A\n";
  }
  EXPECT_EQ(load_labels(path.string(), "area"), (std::vector<int>{1, 2, 1}));
  EXPECT_THROW(load_labels(path.string(), "nope"), ParameterError);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

TEST(Preprocess, CenterUnit) {
  Dataset d = read("1\n2\n3");
  const Dataset out = preprocess(d, {true, ScaleMode::Unit});
  EXPECT_NEAR(out.x(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(out.x(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(out.x(2, 0), 1.0, 1e-15);
}

TEST(Preprocess, CenterPareto) {
  Dataset d = read("0\n0\n4");
  const Dataset out = preprocess(d, {true, ScaleMode::Pareto});
  // hand oracle: mean 4/3, sd = sqrt(16/3), divide by sqrt(sd)
  const double sd = std::sqrt(16.0 / 3.0);
  const double root = std::sqrt(sd);
  EXPECT_NEAR(out.x(0, 0), (-4.0 / 3.0) / root, 1e-14);
  EXPECT_NEAR(out.x(1, 0), (-4.0 / 3.0) / root, 1e-14);
  EXPECT_NEAR(out.x(2, 0), (8.0 / 3.0) / root, 1e-14);
  EXPECT_NEAR(out.column_scales(0), root, 1e-14);
}

TEST(Preprocess, NoneIsIdentity) {
  Dataset d = read("1,7\n2,9\n3,-4");
  const Dataset out = preprocess(d, {false, ScaleMode::None});
  EXPECT_EQ(out.x, d.x);
}

TEST(Preprocess, ZeroVarianceColumnNamed) {
  Dataset d = read("a,b\n1,5\n2,5\n3,5", true);
  try {
    preprocess(d, {true, ScaleMode::Unit});
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_NO_THROW(preprocess(d, {true, ScaleMode::None}));
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

TEST(Simulate, DefaultDesign) {
  SimSpec s;
  auto [d, truth] = simulate_mfa(s);
  EXPECT_EQ(d.n(), 300);
  EXPECT_EQ(d.p(), 50);
  ASSERT_EQ(truth.lambda.size(), 3u);
  for (const auto& l : truth.lambda) EXPECT_EQ(l.cols(), 4);
  std::vector<int> counts(3);
  for (int z : truth.z) ++counts[z - 1];
  for (int c : counts) EXPECT_GT(c, 60);  // roughly balanced
  EXPECT_TRUE((truth.psi.array() >= 0.2).all() && (truth.psi.array() <= 1.0).all());
}

TEST(Simulate, DiagonalWhenNoFactors) {
  SimSpec s;
  s.n = 20000;
  s.p = 3;
  s.q = {0};
  s.pi = {1.0};
  auto [d, truth] = simulate_mfa(s);
  const Matrix cov = sample_covariance(d.x);
  // off-diagonal sd ~ sqrt(psi_j psi_k / n) <= 1/sqrt(n)
  for (Index j = 0; j < 3; ++j)
    for (Index k = 0; k < 3; ++k)
      if (j != k) EXPECT_LT(std::abs(cov(j, k)), 4.0 / std::sqrt(20000.0));
}

TEST(Simulate, SeedDeterminism) {
  SimSpec s;
  s.n = 50;
  s.p = 5;
  s.seed = 9;
  EXPECT_EQ(simulate_mfa(s).first.x, simulate_mfa(s).first.x);
  SimSpec t = s;
  t.seed = 10;
  EXPECT_NE(simulate_mfa(s).first.x, simulate_mfa(t).first.x);
}

TEST(Simulate, InvalidSpecs) {
  SimSpec s;
  s.q = {4, 4, 51};
  EXPECT_THROW(simulate_mfa(s), ParameterError);
  s.q = {4, 4};
  EXPECT_THROW(simulate_mfa(s), ParameterError);  // pi length 3
  s = SimSpec{};
  s.pi = {0.5, 0.5, 0.5};
  EXPECT_THROW(simulate_mfa(s), ParameterError);
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

TEST(Priors, UniquenessRatesIdentity) {
  const auto u = derive_uniqueness_rates(Matrix::Identity(2, 2), 2.5, false);
  ASSERT_EQ(u.rates.size(), 2);
  EXPECT_NEAR(u.rates(0), 1.5, 1e-14);
  EXPECT_NEAR(u.rates(1), 1.5, 1e-14);
  EXPECT_FALSE(u.used_pseudoinverse);
}

TEST(Priors, UniquenessRatesIsotropic) {
  Matrix s = Matrix::Zero(2, 2);
  s.diagonal() << 4.0, 1.0;
  const auto u = derive_uniqueness_rates(s, 2.5, true);
  ASSERT_EQ(u.rates.size(), 1);
  EXPECT_NEAR(u.rates(0), 3.0, 1e-12);
  EXPECT_NEAR(u.rate(1), 3.0, 1e-12);
}

TEST(Priors, SingularCovarianceFallsBackToPseudoinverse) {
  Matrix s(2, 2);
  s << 1.0, 1.0, 1.0, 1.0;  // rank one, pseudoinverse = S / 4
  const auto u = derive_uniqueness_rates(s, 2.5, false);
  EXPECT_TRUE(u.used_pseudoinverse);
  EXPECT_TRUE(u.isotropic);
  EXPECT_NEAR(u.rates(0), 1.5 / 0.25, 1e-10);
}

TEST(Priors, ShapeMustExceedOne) {
  EXPECT_THROW(derive_uniqueness_rates(Matrix::Identity(2, 2), 1.0, false), ParameterError);
}

TEST(Priors, WideDataForcesIsotropic) {
  EXPECT_TRUE(isotropic_required(18, 189));
  EXPECT_FALSE(isotropic_required(300, 50));
  Dataset d;
  RngStream rng(1);
  d.x.resize(18, 189);
  for (Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = rng.normal();
  ModelSettings s;
  s.kind = ModelKind::IMIFA;
  s.control.n_iter = 10;
  s.control.burnin = 0;
  s.cluster_ceiling = 5;
  const ModelConfig c = resolve(s, d);
  EXPECT_TRUE(c.uniqueness.isotropic);
  EXPECT_TRUE(c.mean.diagonal);
  EXPECT_EQ(c.q, 15);
}

TEST(Priors, MgpShrinkageCondition) {
  MgpHyper h;
  h.alpha2 = 3.0;
  h.beta2 = 1.0;
  EXPECT_NO_THROW(validate_mgp(h));
  h.alpha2 = 2.0;
  EXPECT_THROW(validate_mgp(h), ParameterError);
  h = MgpHyper{};
  h.prop = 0.0;
  EXPECT_THROW(validate_mgp(h), ParameterError);
  h.prop = 1.0;
  EXPECT_NO_THROW(validate_mgp(h));
}

TEST(Priors, AdaptationProbability) {
  MgpHyper h;
  EXPECT_NEAR(adaptation_probability(h, 0), 0.904837418, 1e-9);
  EXPECT_LT(adaptation_probability(h, 10000), adaptation_probability(h, 100));
}

TEST(Priors, InitialTruncation) {
  EXPECT_EQ(init_truncation(50, 300), 11);
  EXPECT_EQ(init_truncation(189, 18), 15);
  EXPECT_EQ(init_truncation(2, 300), 2);
}

TEST(Priors, ClusterCeiling) {
  EXPECT_EQ(init_cluster_ceiling(572), 25);
  EXPECT_EQ(init_cluster_ceiling(100000), 35);
  EXPECT_EQ(resolve_cluster_ceiling(18, 6), 6);
  EXPECT_THROW(resolve_cluster_ceiling(18, 19), ParameterError);
  // formula >= N falls back to something below N
  EXPECT_LT(resolve_cluster_ceiling(18), 18);
}

TEST(Priors, FreeParametersAndOverfittedMass) {
  EXPECT_EQ(free_parameters(2, 0), 4.0);
  EXPECT_EQ(free_parameters(8, 5), 40.0 - 10.0 + 16.0);
  // olive oil (p = 8), smallest model q = 0, G* = 25: min(0.08, 0.02)
  EXPECT_NEAR(overfitted_component_mass(free_parameters(8, 0), 25), 0.02, 1e-15);
}

TEST(Priors, ProcessValidation) {
  ProcessPrior pp;
  pp.kind = ProcessKind::PitmanYor;
  pp.discount = 1.0;
  EXPECT_THROW(validate_process(pp), ParameterError);
  pp.discount = 0.5;
  pp.alpha = -0.6;
  EXPECT_THROW(validate_process(pp), ParameterError);
  pp.alpha = -0.4;
  EXPECT_NO_THROW(validate_process(pp));
  pp.rho = 1.0;
  EXPECT_THROW(validate_process(pp), ParameterError);
  ProcessPrior dp;
  dp.kind = ProcessKind::Dirichlet;
  dp.discount = 0.1;
  EXPECT_THROW(validate_process(dp), ParameterError);
  ProcessPrior of;
  of.kind = ProcessKind::Overfitted;
  of.alpha = 3.0;
  EXPECT_THROW(validate_process(of, 4.0), ParameterError);  // must be < d/2 = 2
}

// ---------------------------------------------------------------------------
// Resolution and initialisation
// ---------------------------------------------------------------------------

TEST(Resolve, ImifaDefaultsOnSimulationDesign) {
  auto [d, truth] = simulate_mfa(SimSpec{});
  ModelSettings s;
  s.kind = ModelKind::IMIFA;
  const ModelConfig c = resolve(s, d);
  EXPECT_EQ(c.q, 11);
  EXPECT_EQ(c.G, 25);
  EXPECT_EQ(c.process.kind, ProcessKind::PitmanYor);
  EXPECT_TRUE(c.process.learn_alpha && c.process.learn_discount);
  EXPECT_EQ(c.control.n_iter, 50000);
  EXPECT_EQ(c.control.burnin, 10000);
  EXPECT_EQ(c.control.thin, 2);
}

TEST(Resolve, OverfittedMassForOliveShape) {
  Dataset d;
  RngStream rng(3);
  d.x.resize(572, 8);
  for (Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = rng.normal();
  ModelSettings s;
  s.kind = ModelKind::OMIFA;
  const ModelConfig c = resolve(s, d);
  EXPECT_EQ(c.G, 25);
  EXPECT_NEAR(c.process.alpha, 0.02, 1e-15);
}

TEST(Resolve, FixedKindsNeedTheirDimensions) {
  auto [d, truth] = simulate_mfa(SimSpec{});
  ModelSettings s;
  s.kind = ModelKind::MFA;
  s.q = 2;
  EXPECT_THROW(resolve(s, d), ParameterError);  // no G
  s.G = 3;
  s.q = -1;
  EXPECT_THROW(resolve(s, d), ParameterError);  // no q
  s.q = 2;
  EXPECT_NO_THROW(resolve(s, d));
  s.kind = ModelKind::FA;
  s.G = 1;
  EXPECT_EQ(resolve(s, d).G, 1);
}

TEST(Init, KMeansDeterministicForSeed) {
  SimSpec spec;
  spec.n = 120;
  spec.p = 6;
  spec.separation = 3.0;
  auto [d, truth] = simulate_mfa(spec);
  for (auto method : {InitMethod::Gmm, InitMethod::KMeans, InitMethod::Random}) {
    RngStream a(5), b(5);
    EXPECT_EQ(initial_labels(d.x, 3, method, a).labels, initial_labels(d.x, 3, method, b).labels);
  }
}

TEST(Init, LabelsInRange) {
  SimSpec spec;
  spec.n = 60;
  spec.p = 4;
  auto [d, truth] = simulate_mfa(spec);
  RngStream rng(1);
  const auto r = initial_labels(d.x, 5, InitMethod::Gmm, rng);
  ASSERT_EQ(r.labels.size(), 60u);
  for (int z : r.labels) {
    EXPECT_GE(z, 0);
    EXPECT_LT(z, 5);
  }
}
