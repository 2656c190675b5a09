#include "oracles.hpp"

#include "imc/solver.hpp"
#include "imc/svd.hpp"

#include <gtest/gtest.h>

using namespace imc;

namespace {

ObservationSet sparse_random(Index d1, Index d2, double p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution keep(p);
  std::normal_distribution<double> normal;
  std::vector<Entry> entries;
  for (Index i = 0; i < d1; ++i)
    for (Index j = 0; j < d2; ++j)
      if (keep(gen)) entries.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), normal(gen)});
  return ObservationSet(d1, d2, std::move(entries));
}

/// Singular subspaces compared through their projectors.
double subspace_gap(const Matrix& a, const Matrix& b) { return (a * a.transpose() - b * b.transpose()).norm(); }

}  // namespace

TEST(TruncatedSvd, DenseAndSubspaceMatchJacobiReference) {
  const ObservationSet obs = sparse_random(60, 45, 0.3, 1);
  const Matrix dense = oracle::observed_values(obs) * 2.0;
  Eigen::JacobiSVD<Matrix> ref(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (const SvdMethod method : {SvdMethod::dense, SvdMethod::subspace}) {
    const TruncatedSvd svd = truncated_svd(obs, 2.0, 4, method, 7);
    for (Index k = 0; k < 4; ++k) EXPECT_NEAR(svd.sigma(k), ref.singularValues()(k), 1e-9 * ref.singularValues()(0));
    EXPECT_LE(subspace_gap(svd.left, ref.matrixU().leftCols(4)), 1e-7);
    EXPECT_LE(subspace_gap(svd.right, ref.matrixV().leftCols(4)), 1e-7);
    EXPECT_LE((svd.left.transpose() * svd.left - Matrix::Identity(4, 4)).norm(), 1e-10);
  }
}

TEST(TruncatedSvd, RankShortfallNamesAchievedRank) {
  const ObservationSet obs(5, 5, {{0, 0, 1.0}, {1, 1, 2.0}});
  for (const SvdMethod method : {SvdMethod::dense, SvdMethod::subspace}) {
    try {
      truncated_svd(obs, 1.0, 3, method, 1);
      FAIL() << "expected rank error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::solver);
      EXPECT_NE(std::string(e.what()).find("numerical rank 2"), std::string::npos) << e.what();
    }
  }
}

TEST(TruncatedSvd, MethodNamesRoundTrip) {
  for (const SvdMethod m : {SvdMethod::automatic, SvdMethod::dense, SvdMethod::subspace})
    EXPECT_EQ(parse_svd_method(to_string(m)), m);
  EXPECT_THROW(parse_svd_method("lanczos"), Error);
}

TEST(SpectralInit, FullObservationRecoversTruth) {
  const Problem p = generate_problem({40, 35, 8, 7, 3, 2});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 1.0, 1);
  const FactorPair z = spectral_init(obs, p.features, 3);
  EXPECT_LE(procrustes_distance(z, p.truth.factors()), 1e-8);
}

TEST(SpectralInit, TinyInstanceMatchesDenseSvd) {
  const Problem p = generate_problem({4, 4, 2, 2, 1, 9});
  const ObservationSet obs = sample_fixed_count(p.features, p.truth, 8, 3);
  const FactorPair z = spectral_init(obs, p.features, 1);
  const FactorPair ref = oracle::dense_spectral_init(obs, p.features, 1);
  EXPECT_LE(procrustes_distance(z, ref), 1e-9);
}

TEST(SpectralInit, SubspaceMethodAgreesWithDense) {
  const Problem p = generate_problem({80, 70, 10, 10, 3, 4});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 2);
  const FactorPair a = spectral_init(obs, p.features, 3, SvdMethod::dense);
  const FactorPair b = spectral_init(obs, p.features, 3, SvdMethod::subspace, 5);
  EXPECT_LE(procrustes_distance(a, b), 1e-8);
}

TEST(EstimateSigma1, ExactRankOneAndRandom) {
  const Problem p = generate_problem({30, 30, 6, 6, 3, 3});
  EXPECT_NEAR(estimate_sigma1(p.truth.factors()), p.truth.singular_values()(0), 1e-9);

  Matrix u(3, 1), v(4, 1);
  u << 1, 2, 2;
  v << 0, 3, 0, 4;
  EXPECT_NEAR(estimate_sigma1({u, v}), 15.0, 1e-12);

  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const FactorPair z{oracle::random_matrix(9, 3, gen), oracle::random_matrix(7, 3, gen)};
    const double ref = Eigen::JacobiSVD<Matrix>(z.u * z.v.transpose()).singularValues()(0);
    EXPECT_NEAR(estimate_sigma1(z), ref, 1e-8 * ref);
  }
  EXPECT_THROW(estimate_sigma1({Matrix::Zero(3, 2), Matrix::Zero(3, 2)}), Error);
}

TEST(Phase2, ZeroIterationsProjectsOnly) {
  const Problem p = generate_problem({50, 50, 8, 8, 2, 5});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.4, 1);
  const SampleSplit split = split_observations(obs, 3, 2);
  const FactorPair z0 = spectral_init(split.omega0, p.features, 2);
  Phase2Settings settings{0, 0.1, 1e-9, 0.5, 0.0, 100000};
  const Phase2Result res = run_phase2(z0, split, p.features, settings);
  const RowNormConstraint cl(p.features.x_left(), res.bound_left);
  const RowNormConstraint cr(p.features.x_right(), res.bound_right);
  EXPECT_LE((res.z.u - project_qcqp(z0.u, cl, 1e-9).u).norm(), 1e-14);
  EXPECT_LE((res.z.v - project_qcqp(z0.v, cr, 1e-9).u).norm(), 1e-14);
  EXPECT_NEAR(res.bound_left, constraint_bound(z0, 0.5, 2, 50), 1e-15);
}

TEST(Phase2, ExactInitIsAFixedPoint) {
  const Problem p = generate_problem({60, 60, 10, 10, 3, 6});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.5, 1);
  const SampleSplit split = split_observations(obs, 5, 2);
  const double delta = 1e-8;
  const Phase2Settings settings{5, 0.25 / (3.0 * p.truth.singular_values()(0)), delta,
                                coherence_mu0(p.features, p.truth), 0.0, 100000};
  Tracer tracer(p.features, &p.truth, false);
  const Phase2Result res = run_phase2(p.truth.factors(), split, p.features, settings, &tracer);
  EXPECT_LE(procrustes_distance(res.z, p.truth.factors()), 2.0 * delta);
  for (const auto& rec : tracer.trace()) EXPECT_LE(rec.procrustes_dist, 2.0 * delta);
}

TEST(Phase2, IteratesStayFeasible) {
  const Problem p = generate_problem({100, 100, 12, 12, 3, 7});
  const ObservationSet obs = sample_fixed_count(p.features, p.truth, 1500, 3);
  const SampleSplit split = split_observations(obs, 8, 4);
  const FactorPair z0 = spectral_init(split.omega0, p.features, 3);
  const double s1 = estimate_sigma1(z0);
  const double mu0 = 0.5 * coherence_mu0(p.features, p.truth);
  for (int s = 0; s <= 8; s += 4) {
    const Phase2Result res = run_phase2(z0, split, p.features, {s, 0.25 / (3.0 * s1), 1e-8, mu0, 0.0, 100000});
    EXPECT_LE(feasibility_violation(res.z.u, RowNormConstraint(p.features.x_left(), res.bound_left)),
              1e-12 * (1.0 + res.bound_left));
    EXPECT_LE(feasibility_violation(res.z.v, RowNormConstraint(p.features.x_right(), res.bound_right)),
              1e-12 * (1.0 + res.bound_right));
  }
}

TEST(Phase2, ContractsTowardTruthWithHighProbability) {
  const Index d = 200, n = 20, r = 3;
  int decreased = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const Problem p = generate_problem({d, d, n, n, r, 500 + t});
    const ObservationSet obs = sample_fixed_count(p.features, p.truth, 12 * n * r, 900 + t);
    const SampleSplit split = split_observations(obs, 25, t);
    const FactorPair z_init = spectral_init(split.omega0, p.features, r);
    const double s1 = estimate_sigma1(z_init);
    Phase2Settings settings{0, 0.25 / (static_cast<double>(r) * s1), 1e-8 * std::sqrt(s1),
                            coherence_mu0(p.features, p.truth), 0.0, 100000};
    const FactorPair z0 = run_phase2(z_init, split, p.features, settings).z;
    settings.iterations = 25;
    const FactorPair zs = run_phase2(z_init, split, p.features, settings).z;
    const double before = procrustes_distance(z0, p.truth.factors());
    const double after = procrustes_distance(zs, p.truth.factors());
    decreased += after * after < before * before ? 1 : 0;
  }
  EXPECT_GE(decreased, 18);
}

TEST(Phase3, StationaryAtTruthAndIdentityForZeroSteps) {
  const Problem p = generate_problem({50, 40, 8, 8, 2, 8});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 1);
  const Phase3Result fixed = run_phase3(p.truth.factors(), obs, p.features, {10, 0.1, 0.0, 0.0, 1.0});
  EXPECT_LE((fixed.z.u - p.truth.u_star()).norm(), 1e-10);
  EXPECT_LE((fixed.z.v - p.truth.v_star()).norm(), 1e-10);

  std::mt19937_64 gen(2);
  const FactorPair z{oracle::random_matrix(8, 2, gen), oracle::random_matrix(8, 2, gen)};
  const Phase3Result none = run_phase3(z, obs, p.features, {0, 0.1, 0.0, 0.0, 1.0});
  EXPECT_EQ(none.z.u, z.u);
  EXPECT_EQ(none.z.v, z.v);
  EXPECT_EQ(none.iterations_run, 0);
}

TEST(Phase3, DivergenceGuardReportsStepSize) {
  const Problem p = generate_problem({50, 40, 8, 8, 2, 8});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 1);
  const FactorPair z = spectral_init(obs, p.features, 2);
  try {
    run_phase3(z, obs, p.features, {200, 50.0, 0.0, 0.0, 1.0});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::solver);
    EXPECT_NE(std::string(e.what()).find("reduce tau"), std::string::npos);
  }
}

TEST(Phase3, WarmStartConvergesLinearly) {
  const Problem p = generate_problem({500, 500, 50, 50, 5, 12});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.1, 3);
  SolverConfig config;
  config.rank = 5;
  config.seed = 4;
  config.phase3_iters = 2000;
  const RecoveryReport report = solve(obs, p.features, config, &p.truth);
  ASSERT_LT(*report.rel_error, 1e-6);

  std::vector<double> iters, logs;
  double previous = std::numeric_limits<double>::infinity();
  int rises = 0;
  for (const auto& rec : report.trace) {
    if (rec.phase != 3) continue;
    if (rec.iter > 5 && rec.rel_error > previous) ++rises;
    previous = rec.rel_error;
    iters.push_back(rec.iter);
    logs.push_back(std::log10(rec.rel_error));
  }
  EXPECT_EQ(rises, 0);
  const auto [slope, r2] = oracle::linear_fit(iters, logs);
  EXPECT_LT(slope, 0.0);
  EXPECT_GE(r2, 0.95);
}

TEST(Solve, FullObservationInitAloneIsExact) {
  const Problem p = generate_problem({40, 40, 8, 8, 3, 13});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 1.0, 1);
  SolverConfig config;
  config.rank = 3;
  config.phase2_iters = 0;
  config.phase3_iters = 0;
  const RecoveryReport report = solve(obs, p.features, config, &p.truth);
  EXPECT_LE(*report.rel_error, 1e-8);
  ASSERT_EQ(report.trace.size(), 1u);
  EXPECT_EQ(report.trace[0].phase, 1);
}

TEST(Solve, DataPassAccounting) {
  const Problem p = generate_problem({80, 80, 10, 10, 2, 14});
  const ObservationSet obs = sample_fixed_count(p.features, p.truth, 1001, 2);
  SolverConfig config;
  config.rank = 2;
  config.phase2_iters = 7;
  config.phase3_iters = 13;
  config.stop_tol = 0.0;
  const RecoveryReport report = solve(obs, p.features, config, &p.truth);
  const SampleSplit split = split_observations(obs, 7, derive_seed(config.seed, Stream::split));
  double expected = 0.5;
  for (const auto& s : split.subsets) expected += static_cast<double>(s.size()) / 1001.0;
  expected += 13.0;
  EXPECT_NEAR(report.data_passes, expected, 1e-12);
  EXPECT_NEAR(report.trace.back().data_passes, expected, 1e-12);
  for (std::size_t k = 1; k < report.trace.size(); ++k)
    EXPECT_GE(report.trace[k].data_passes, report.trace[k - 1].data_passes);
  ASSERT_EQ(report.trace.size(), 1u + 7u + 13u);
  EXPECT_NEAR(report.trace[8].data_passes - report.trace[7].data_passes, 1.0, 1e-12);
}

TEST(Solve, BudgetStopsPhaseThree) {
  const Problem p = generate_problem({80, 80, 10, 10, 2, 15});
  const ObservationSet obs = sample_fixed_count(p.features, p.truth, 800, 2);
  SolverConfig config;
  config.rank = 2;
  config.max_data_passes = 20.0;
  const RecoveryReport report = solve(obs, p.features, config, &p.truth);
  EXPECT_LE(report.data_passes, 20.0);
  EXPECT_EQ(report.stop_reason, "budget");
}

TEST(Solve, DeterministicReports) {
  const Problem p = generate_problem({60, 60, 10, 10, 2, 16});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 2);
  SolverConfig config;
  config.rank = 2;
  config.seed = 77;
  config.phase3_iters = 50;
  const RecoveryReport a = solve(obs, p.features, config, &p.truth);
  const RecoveryReport b = solve(obs, p.features, config, &p.truth);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    EXPECT_EQ(a.trace[k].loss, b.trace[k].loss);
    EXPECT_EQ(a.trace[k].rel_error, b.trace[k].rel_error);
    EXPECT_EQ(a.trace[k].data_passes, b.trace[k].data_passes);
  }
  EXPECT_EQ(a.factors.u, b.factors.u);
}

TEST(Solve, RotatedOutputKeepsRelativeError) {
  const Problem p = generate_problem({60, 60, 10, 10, 3, 17});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 2);
  SolverConfig config;
  config.rank = 3;
  config.phase3_iters = 30;
  const RecoveryReport report = solve(obs, p.features, config, &p.truth);
  std::mt19937_64 gen(5);
  for (int k = 0; k < 10; ++k)
    EXPECT_NEAR(relative_error(report.factors * oracle::random_orthogonal(3, gen), p.truth), *report.rel_error, 1e-10);
}

TEST(Solve, ErrorsCarryPhaseTag) {
  const Problem p = generate_problem({20, 20, 5, 5, 2, 18});
  const ObservationSet single(20, 20, {{0, 0, 1.0}, {1, 1, 1.0}, {2, 3, 1.0}, {5, 5, 0.5}});
  SolverConfig config;
  config.rank = 3;
  config.phase2_iters = 0;
  try {
    solve(ObservationSet(20, 20, {{0, 0, 1.0}, {1, 1, 1.0}}), p.features, config);
    FAIL() << "expected phase 1 error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::solver);
    EXPECT_EQ(std::string(e.what()).rfind("phase 1:", 0), 0u) << e.what();
  }
  config.rank = 1;
  config.tau = 1e6;
  config.phase3_iters = 50;
  try {
    solve(sample_bernoulli(p.features, p.truth, 0.5, 1), p.features, config);
    FAIL() << "expected phase 3 error";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("phase 3:", 0), 0u) << e.what();
  }
  config.tau = -1.0;
  EXPECT_THROW(solve(single, p.features, config), Error);
}

TEST(Solve, DefaultPhaseTwoLength) {
  EXPECT_EQ(default_phase2_iters(10, 50, 100000), static_cast<int>(std::ceil(10 * std::log(50.0))));
  EXPECT_EQ(default_phase2_iters(1, 2, 100000), 1);
  EXPECT_EQ(default_phase2_iters(10, 50, 20), 10);
}

TEST(Solve, Mu0Resolution) {
  const Problem p = generate_problem({60, 60, 10, 10, 2, 19});
  const ObservationSet obs = sample_bernoulli(p.features, p.truth, 0.3, 2);
  SolverConfig config;
  config.rank = 2;
  config.phase3_iters = 0;
  EXPECT_EQ(solve(obs, p.features, config).mu0_source, "init");
  EXPECT_EQ(solve(obs, p.features, config, &p.truth).mu0_source, "truth");
  EXPECT_NEAR(solve(obs, p.features, config, &p.truth).mu0, coherence_mu0(p.features, p.truth), 1e-12);
  config.mu0 = 3.0;
  const RecoveryReport r = solve(obs, p.features, config, &p.truth);
  EXPECT_EQ(r.mu0_source, "config");
  EXPECT_EQ(r.mu0, 3.0);
}
