#pragma once

// Three-phase gradient descent for inductive matrix completion:
//   1. spectral initialization from the rank-r SVD of p0^{-1} P_Omega0(L),
//   2. projected gradient descent, one fresh subsample Omega_s per step,
//   3. plain gradient descent on the full observation set.

#include "imc/core.hpp"
#include "imc/objective.hpp"
#include "imc/projection.hpp"
#include "imc/random.hpp"
#include "imc/svd.hpp"
#include "imc/types.hpp"

#include <chrono>
#include <deque>
#include <limits>
#include <optional>
#include <string>

namespace imc {

struct SolverConfig {
  Index rank = 1;
  std::optional<int> phase2_iters;  // S; unset means max(1, ceil(r ln n))
  int phase3_iters = 1000;          // T
  std::optional<double> eta;        // unset means c_eta / (r sigma1_hat)
  std::optional<double> tau;        // unset means c_tau / sigma1_hat
  double c_eta = 0.25;
  double c_tau = 0.3;
  std::optional<double> mu0;    // unset: from ground truth if given, else from Z_init
  std::optional<double> delta;  // unset: 1e-8 sqrt(sigma1_hat), or 1/(r kappa_hat n^2) in theory mode
  bool theory_delta = false;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double stop_tol = 1e-14;
  double max_data_passes = std::numeric_limits<double>::infinity();
  double init_pass_charge = 0.5;
  double success_threshold = 1e-6;
  int max_projection_sweeps = 100000;
  SvdMethod svd_method = SvdMethod::automatic;
  bool record_timing = false;

  void validate() const {
    require(rank >= 1, "rank must be positive");
    require(!phase2_iters || *phase2_iters >= 0, "phase2_iters must be non-negative");
    require(phase3_iters >= 0, "phase3_iters must be non-negative");
    require(!eta || *eta > 0.0, "eta must be positive");
    require(!tau || *tau > 0.0, "tau must be positive");
    require(c_eta > 0.0 && c_tau > 0.0, "step constants must be positive");
    require(!mu0 || *mu0 > 0.0, "mu0 must be positive");
    require(!delta || *delta > 0.0, "delta must be positive");
    require(lambda >= 0.0, "lambda must be non-negative");
    require(stop_tol >= 0.0, "stop_tol must be non-negative");
    require(max_data_passes > 0.0, "max_data_passes must be positive");
    require(init_pass_charge >= 0.0, "init_pass_charge must be non-negative");
    require(success_threshold > 0.0, "success_threshold must be positive");
    require(max_projection_sweeps >= 1, "max_projection_sweeps must be positive");
  }
};

struct TraceRecord {
  int phase = 0;
  int iter = 0;
  double data_passes = 0.0;
  double loss = 0.0;
  double rel_error = std::numeric_limits<double>::quiet_NaN();
  double procrustes_dist = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

using Trace = std::vector<TraceRecord>;

/// Appends trace rows; owns the data-pass counter and the optional
/// ground-truth diagnostics.
class Tracer {
 public:
  Tracer(const FeaturePair& features, const GroundTruth* truth, bool record_timing, double lambda = 0.0)
      : features_(features), truth_(truth), timing_(record_timing), lambda_(lambda),
        start_(std::chrono::steady_clock::now()) {}

  void set_diagnostic_observations(const ObservationSet* obs) { diagnostic_obs_ = obs; }
  void add_passes(double passes) { passes_ += passes; }
  double passes() const noexcept { return passes_; }
  bool has_truth() const noexcept { return truth_ != nullptr; }
  const Trace& trace() const noexcept { return trace_; }
  Trace take() { return std::move(trace_); }

  /// Records z; the loss is computed on the diagnostic observations when not
  /// supplied.
  const TraceRecord& record(int phase, int iter, const FactorPair& z, std::optional<double> loss_value = {}) {
    TraceRecord rec;
    rec.phase = phase;
    rec.iter = iter;
    rec.data_passes = passes_;
    if (loss_value) {
      rec.loss = *loss_value;
    } else if (diagnostic_obs_ != nullptr) {
      const ResidualCache cache = build_cache(z, features_, *diagnostic_obs_);
      rec.loss = loss(cache, z, *diagnostic_obs_) + complement_penalty(cache, z, *diagnostic_obs_, lambda_);
    } else {
      rec.loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (truth_ != nullptr) {
      rec.rel_error = relative_error(z, *truth_);
      rec.procrustes_dist = procrustes_distance(z, truth_->factors());
    }
    if (timing_)
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    trace_.push_back(rec);
    return trace_.back();
  }

 private:
  const FeaturePair& features_;
  const GroundTruth* truth_;
  const ObservationSet* diagnostic_obs_ = nullptr;
  bool timing_;
  double lambda_;
  double passes_ = 0.0;
  std::chrono::steady_clock::time_point start_;
  Trace trace_;
};

struct SpectralInit {
  FactorPair z;
  TruncatedSvd svd;  // of p0^{-1} P_Omega0(L)
};

/// U_init = X_L^T U0 Sigma0^{1/2}, V_init = X_R^T V0 Sigma0^{1/2} where
/// [U0, Sigma0, V0] is the rank-r SVD of p0^{-1} P_Omega0(L).
inline SpectralInit spectral_init_detailed(const ObservationSet& omega0, const FeaturePair& features, Index r,
                                           SvdMethod method = SvdMethod::automatic, std::uint64_t seed = 0) {
  require(!omega0.empty(), "spectral initialization needs at least one observation");
  require(r >= 1 && r <= std::min(features.n1(), features.n2()), "rank exceeds min(n1, n2)");
  require(omega0.d1() == features.d1() && omega0.d2() == features.d2(),
          "observation grid does not match features");
  TruncatedSvd svd = truncated_svd(omega0, 1.0 / omega0.p(), r, method, seed);
  if (!(svd.sigma.minCoeff() > 0.0))
    fail(ErrorKind::solver, "spectral initialization produced non-positive singular values");
  const Vector root = svd.sigma.cwiseSqrt();
  FactorPair z{features.x_left().transpose() * svd.left * root.asDiagonal(),
               features.x_right().transpose() * svd.right * root.asDiagonal()};
  return {std::move(z), std::move(svd)};
}

inline FactorPair spectral_init(const ObservationSet& omega0, const FeaturePair& features, Index r,
                                SvdMethod method = SvdMethod::automatic, std::uint64_t seed = 0) {
  return spectral_init_detailed(omega0, features, r, method, seed).z;
}

/// ||U V^T||_2 through the r x r core R_U R_V^T of the thin QR factors.
inline double estimate_sigma1(const FactorPair& z) {
  require(z.u.cols() == z.v.cols() && z.u.cols() >= 1, "factor pair must have positive rank");
  const Index r = z.rank();
  const auto core_r = [r](const Matrix& m) -> Matrix {
    Eigen::HouseholderQR<Matrix> qr(m);
    const Index k = std::min(m.rows(), r);
    Matrix out = Matrix::Zero(r, r);
    out.topRows(k) = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    return out;
  };
  const double s = Eigen::JacobiSVD<Matrix>(core_r(z.u) * core_r(z.v).transpose()).singularValues()(0);
  if (!(s > 0.0)) fail(ErrorKind::invalid_argument, "cannot estimate sigma1 from a zero initialization");
  return s;
}

struct Phase2Settings {
  int iterations = 0;
  double eta = 0.0;
  double delta = 1e-8;
  double mu0 = 1.0;
  double lambda = 0.0;
  int max_projection_sweeps = 100000;
};

struct Phase2Result {
  FactorPair z;
  double bound_left = 0.0;
  double bound_right = 0.0;
  int max_sweeps_used = 0;
};

/// Projects Z_init onto C1 x C2, then takes S projected gradient steps, step s
/// using only Omega_s with p_s = |Omega_s| / (d1 d2). The bounds are fixed
/// from Z_init.
inline Phase2Result run_phase2(const FactorPair& z_init, const SampleSplit& split, const FeaturePair& features,
                               const Phase2Settings& settings, Tracer* tracer = nullptr) {
  require(settings.iterations >= 0 &&
              static_cast<std::size_t>(settings.iterations) <= split.subsets.size(),
          "phase 2 needs S <= number of subsets");
  require(settings.eta > 0.0 && settings.delta > 0.0 && settings.mu0 > 0.0, "phase 2 needs eta, delta, mu0 > 0");
  const Index r = z_init.rank();
  Phase2Result out;
  out.bound_left = constraint_bound(z_init, settings.mu0, r, features.d1());
  out.bound_right = constraint_bound(z_init, settings.mu0, r, features.d2());
  const RowNormConstraint c_left(features.x_left(), out.bound_left, Side::left);
  const RowNormConstraint c_right(features.x_right(), out.bound_right, Side::right);

  const auto project = [&](const FactorPair& z) {
    ProjectionResult pu = project_qcqp(z.u, c_left, settings.delta, settings.max_projection_sweeps);
    ProjectionResult pv = project_qcqp(z.v, c_right, settings.delta, settings.max_projection_sweeps);
    out.max_sweeps_used = std::max({out.max_sweeps_used, pu.sweeps, pv.sweeps});
    return FactorPair{std::move(pu.u), std::move(pv.u)};
  };

  std::size_t total = split.omega0.size();
  for (const auto& s : split.subsets) total += s.size();

  FactorPair z = project(z_init);
  for (int s = 1; s <= settings.iterations; ++s) {
    const ObservationSet& omega = split.subsets[static_cast<std::size_t>(s - 1)];
    const FactorPair g = gradient_sparse_reg(z, features, omega, settings.lambda);
    z = project(FactorPair{z.u - settings.eta * g.u, z.v - settings.eta * g.v});
    if (tracer != nullptr) {
      tracer->add_passes(static_cast<double>(omega.size()) / static_cast<double>(total));
      tracer->record(2, s, z);
    }
  }
  out.z = std::move(z);
  return out;
}

struct Phase3Settings {
  int iterations = 0;
  double tau = 0.0;
  double lambda = 0.0;
  double stop_tol = 1e-14;
  double sigma1_hat = 1.0;
  double max_data_passes = std::numeric_limits<double>::infinity();
};

struct Phase3Result {
  FactorPair z;
  int iterations_run = 0;
  double final_loss = 0.0;
  std::string stop_reason;
};

/// T plain gradient steps with step tau on the full observation set. Stops
/// early when the relative error (ground truth known) or the gradient norm
/// relative to sigma1_hat falls to stop_tol, or the data-pass budget is spent.
inline Phase3Result run_phase3(const FactorPair& z0, const ObservationSet& obs, const FeaturePair& features,
                               const Phase3Settings& settings, Tracer* tracer = nullptr) {
  require(settings.iterations >= 0 && settings.tau > 0.0, "phase 3 needs T >= 0 and tau > 0");
  detail::require_observations(obs);
  Phase3Result out{z0, 0, 0.0, "iterations"};
  ResidualCache cache = build_cache(out.z, features, obs);
  Evaluation eval = evaluate(cache, out.z, features, obs, settings.lambda);
  const double initial_loss = eval.loss;
  std::deque<double> history{eval.loss};

  for (int t = 1; t <= settings.iterations; ++t) {
    const double grad_norm = std::sqrt(eval.grad.u.squaredNorm() + eval.grad.v.squaredNorm());
    if (grad_norm <= settings.stop_tol * settings.sigma1_hat) {
      out.stop_reason = "gradient";
      break;
    }
    if (tracer != nullptr && tracer->passes() + 1.0 > settings.max_data_passes * (1.0 + 1e-12)) {
      out.stop_reason = "budget";
      break;
    }
    out.z.u -= settings.tau * eval.grad.u;
    out.z.v -= settings.tau * eval.grad.v;
    cache = build_cache(out.z, features, obs);
    eval = evaluate(cache, out.z, features, obs, settings.lambda);
    out.iterations_run = t;

    if (!std::isfinite(eval.loss))
      fail(ErrorKind::solver, "diverged at iteration " + std::to_string(t) +
                                  " (non-finite loss); reduce tau (currently " + std::to_string(settings.tau) + ")");
    history.push_back(eval.loss);
    if (history.size() > 11) history.pop_front();
    if (history.size() == 11 && eval.loss > 10.0 * history.front() && eval.loss > 1e-20 * initial_loss)
      fail(ErrorKind::solver, "diverged: loss grew more than 10x over 10 iterations at iteration " +
                                  std::to_string(t) + "; reduce tau (currently " + std::to_string(settings.tau) + ")");

    if (tracer != nullptr) {
      tracer->add_passes(1.0);
      const TraceRecord& rec = tracer->record(3, t, out.z, eval.loss);
      if (tracer->has_truth() && rec.rel_error <= settings.stop_tol) {
        out.stop_reason = "rel_error";
        break;
      }
    }
  }
  out.final_loss = eval.loss;
  return out;
}

struct RecoveryReport {
  FactorPair factors;
  Trace trace;
  SolverConfig config;  // echo of the input configuration
  int phase2_iters = 0;
  double sigma1_hat = 0.0;
  double kappa_hat = 0.0;
  double eta = 0.0;
  double tau = 0.0;
  double mu0 = 0.0;
  std::string mu0_source;
  double delta = 0.0;
  double bound_left = 0.0;
  double bound_right = 0.0;
  int phase3_iters_run = 0;
  std::string stop_reason;
  double final_loss = 0.0;
  double data_passes = 0.0;
  std::optional<double> rel_error;
  std::optional<double> procrustes_dist;
  std::optional<bool> success;

  Matrix m_hat() const { return factors.product(); }
};

/// Default S = max(1, ceil(r ln n)), n = max(n1, n2), clipped so every
/// subset of the split is non-empty.
inline int default_phase2_iters(Index r, Index n, std::size_t observations) {
  const int theory = std::max(1, static_cast<int>(std::ceil(static_cast<double>(r) * std::log(static_cast<double>(n)))));
  return std::min(theory, static_cast<int>(observations / 2));
}

namespace detail {

inline std::string phase_tagged(int phase, const Error& e) {
  return "phase " + std::to_string(phase) + ": " + e.what();
}

template <class F>
auto in_phase(int phase, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), phase_tagged(phase, e));
  }
}

}  // namespace detail

inline RecoveryReport solve(const ObservationSet& obs, const FeaturePair& features, const SolverConfig& config,
                            const GroundTruth* truth = nullptr) {
  config.validate();
  const Index r = config.rank;
  require(r <= std::min(features.n1(), features.n2()), "rank exceeds min(n1, n2)");
  require(obs.d1() == features.d1() && obs.d2() == features.d2(), "observation grid does not match features");
  require(!obs.empty(), "no observations");
  if (truth != nullptr)
    require(truth->m_star().rows() == features.n1() && truth->m_star().cols() == features.n2(),
            "ground truth shape does not match features");

  RecoveryReport report;
  report.config = config;
  const Index n = std::max(features.n1(), features.n2());
  const int s_count = config.phase2_iters ? *config.phase2_iters : default_phase2_iters(r, n, obs.size());
  if (s_count > 0)
    require(obs.size() >= 2 * static_cast<std::size_t>(s_count),
            "phase2_iters = " + std::to_string(s_count) + " needs at least " + std::to_string(2 * s_count) +
                " observations");
  report.phase2_iters = s_count;

  std::optional<SampleSplit> split;
  if (s_count > 0) split = split_observations(obs, s_count, derive_seed(config.seed, Stream::split));
  const ObservationSet& omega0 = split ? split->omega0 : obs;

  Tracer tracer(features, truth, config.record_timing, config.lambda);
  tracer.set_diagnostic_observations(&obs);

  const SpectralInit init = detail::in_phase(1, [&] {
    return spectral_init_detailed(omega0, features, r, config.svd_method, derive_seed(config.seed, Stream::svd));
  });
  report.sigma1_hat = detail::in_phase(1, [&] { return estimate_sigma1(init.z); });
  report.kappa_hat = init.svd.sigma(0) / init.svd.sigma(r - 1);
  report.eta = config.eta ? *config.eta : config.c_eta / (static_cast<double>(r) * report.sigma1_hat);
  report.tau = config.tau ? *config.tau : config.c_tau / report.sigma1_hat;
  if (config.delta)
    report.delta = *config.delta;
  else if (config.theory_delta)
    report.delta = 1.0 / (static_cast<double>(r) * report.kappa_hat * static_cast<double>(n * n));
  else
    report.delta = 1e-8 * std::sqrt(report.sigma1_hat);

  tracer.add_passes(config.init_pass_charge);
  tracer.record(1, 0, init.z);

  FactorPair z = init.z;
  if (s_count > 0) {
    if (config.mu0) {
      report.mu0 = *config.mu0;
      report.mu0_source = "config";
    } else if (truth != nullptr) {
      report.mu0 = coherence_mu0(features, *truth);
      report.mu0_source = "truth";
    } else {
      report.mu0 = coherence_mu0(features, GroundTruth::from_matrix(init.z.product(), r));
      report.mu0_source = "init";
    }
    const Phase2Settings settings{s_count, report.eta, report.delta, report.mu0, config.lambda,
                                  config.max_projection_sweeps};
    Phase2Result p2 = detail::in_phase(2, [&] { return run_phase2(z, *split, features, settings, &tracer); });
    report.bound_left = p2.bound_left;
    report.bound_right = p2.bound_right;
    z = std::move(p2.z);
  }

  const Phase3Settings p3_settings{config.phase3_iters, report.tau,          config.lambda,
                                   config.stop_tol,     report.sigma1_hat, config.max_data_passes};
  Phase3Result p3 = detail::in_phase(3, [&] { return run_phase3(z, obs, features, p3_settings, &tracer); });
  report.phase3_iters_run = p3.iterations_run;
  report.stop_reason = config.phase3_iters == 0 ? "iterations" : p3.stop_reason;
  report.final_loss = p3.final_loss;
  report.factors = std::move(p3.z);
  report.data_passes = tracer.passes();
  report.trace = tracer.take();
  if (truth != nullptr) {
    report.rel_error = relative_error(report.factors, *truth);
    report.procrustes_dist = procrustes_distance(report.factors, truth->factors());
    report.success = *report.rel_error < config.success_threshold;
  }
  return report;
}

}  // namespace imc
