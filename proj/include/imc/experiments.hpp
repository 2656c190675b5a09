#pragma once

// Synthetic benchmark harness: phase-transition success maps over m/(nr),
// relative error against effective data passes, and spectral-initialization
// quality against |Omega_0|.
//
// Seeding: trial t of a run with master seed s uses problem seed
// derive_seed(s, Stream::trial + t). Inside a trial, grid point k samples with
// derive_seed(problem_seed, kSampleKey + k) and solves with
// derive_seed(problem_seed, kSolveKey + k). Every per-trial result therefore
// depends only on (s, t, k), never on scheduling order.

#include "imc/core.hpp"
#include "imc/datagen.hpp"
#include "imc/solver.hpp"
#include "imc/types.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

namespace imc {

/// Worker count from IMC_THREADS (default: hardware concurrency).
inline unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IMC_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 1024));
  }
  return hw;
}

/// Runs fn(i) for i in [0, count) on up to worker_count() threads. The first
/// exception (lowest index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), count);
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Dims {
  Index d1 = 0;
  Index d2 = 0;
  Index n1 = 0;
  Index n2 = 0;
};

inline constexpr std::uint64_t kSampleKey = 1000;
inline constexpr std::uint64_t kSolveKey = 2000;

inline std::uint64_t trial_seed(std::uint64_t master, int trial) {
  return derive_seed(master, static_cast<std::uint64_t>(Stream::trial) + static_cast<std::uint64_t>(trial));
}

/// Wilson score interval at 95% for `successes` out of `trials`.
inline std::pair<double, double> wilson_interval(int successes, int trials) {
  if (trials <= 0) return {0.0, 1.0};
  constexpr double z = 1.959963984540054;
  const double n = trials;
  const double phat = successes / n;
  const double denom = 1.0 + z * z / n;
  const double center = (phat + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct PhaseCell {
  double m_over_nr = 0.0;
  std::int64_t m = 0;
  int trials = 0;
  int successes = 0;
  int solver_errors = 0;
  double success_rate = 0.0;
  double wilson_low = 0.0;
  double wilson_high = 0.0;
  double mean_relative_error = 0.0;  // over trials that returned a report
};

struct PhaseGridResult {
  Dims dims;
  Index rank = 0;
  double threshold = 1e-6;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> trial_seeds;
  std::vector<PhaseCell> cells;
};

/// For each ratio, `trials` problems solved from m = round(ratio n r)
/// fixed-count observations, n = max(n1, n2). Trial t uses the same problem
/// instance at every ratio.
inline PhaseGridResult phase_transition(const Dims& dims, Index r, const std::vector<double>& ratios, int trials,
                                        double threshold, std::uint64_t seed, SolverConfig base) {
  require(trials >= 1, "phase transition needs at least one trial");
  require(!ratios.empty(), "phase transition needs at least one ratio");
  const double nr = static_cast<double>(std::max(dims.n1, dims.n2)) * static_cast<double>(r);
  std::vector<std::int64_t> counts;
  for (const double ratio : ratios) {
    require(ratio > 0.0, "ratios must be positive");
    const auto m = static_cast<std::int64_t>(std::llround(ratio * nr));
    if (m > static_cast<std::int64_t>(dims.d1 * dims.d2))
      fail(ErrorKind::invalid_argument, "ratio " + std::to_string(ratio) + " needs m = " + std::to_string(m) +
                                            " > d1 d2 = " + std::to_string(dims.d1 * dims.d2));
    counts.push_back(m);
  }
  base.rank = r;
  base.success_threshold = threshold;

  struct Outcome {
    bool solved = false;
    bool success = false;
    double rel_error = 0.0;
  };
  std::vector<std::vector<Outcome>> outcomes(static_cast<std::size_t>(trials),
                                             std::vector<Outcome>(ratios.size()));
  PhaseGridResult result{dims, r, threshold, seed, {}, {}};
  for (int t = 0; t < trials; ++t) result.trial_seeds.push_back(trial_seed(seed, t));

  parallel_for(static_cast<std::size_t>(trials), [&](std::size_t t) {
    const std::uint64_t pseed = result.trial_seeds[t];
    const Problem problem = generate_problem({dims.d1, dims.d2, dims.n1, dims.n2, r, pseed});
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      const ObservationSet obs =
          sample_fixed_count(problem.features, problem.truth, counts[k], derive_seed(pseed, kSampleKey + k));
      SolverConfig config = base;
      config.seed = derive_seed(pseed, kSolveKey + k);
      Outcome& out = outcomes[t][k];
      try {
        const RecoveryReport report = solve(obs, problem.features, config, &problem.truth);
        out = {true, *report.success, *report.rel_error};
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::solver) throw;
        out = {false, false, 0.0};
      }
    }
  });

  for (std::size_t k = 0; k < ratios.size(); ++k) {
    PhaseCell cell;
    cell.m_over_nr = ratios[k];
    cell.m = counts[k];
    cell.trials = trials;
    double sum = 0.0;
    int solved = 0;
    for (int t = 0; t < trials; ++t) {
      const Outcome& out = outcomes[static_cast<std::size_t>(t)][k];
      if (!out.solved) {
        ++cell.solver_errors;
        continue;
      }
      ++solved;
      sum += out.rel_error;
      cell.successes += out.success ? 1 : 0;
    }
    cell.success_rate = static_cast<double>(cell.successes) / trials;
    std::tie(cell.wilson_low, cell.wilson_high) = wilson_interval(cell.successes, trials);
    cell.mean_relative_error = solved > 0 ? sum / solved : std::numeric_limits<double>::quiet_NaN();
    result.cells.push_back(cell);
  }
  return result;
}

struct CurvePoint {
  double data_passes;
  double rel_error;
};

struct ConvergenceCurve {
  std::vector<CurvePoint> points;  // data_passes strictly increasing
  RecoveryReport report;
};

/// One Bernoulli(p) instance solved with the full trace.
inline ConvergenceCurve convergence_curve(const Dims& dims, Index r, double p, std::uint64_t seed,
                                          SolverConfig config) {
  require(p > 0.0 && p <= 1.0, "sampling probability must lie in (0, 1]");
  const std::uint64_t pseed = trial_seed(seed, 0);
  const Problem problem = generate_problem({dims.d1, dims.d2, dims.n1, dims.n2, r, pseed});
  const ObservationSet obs = sample_bernoulli(problem.features, problem.truth, p, derive_seed(pseed, kSampleKey));
  config.rank = r;
  config.seed = derive_seed(pseed, kSolveKey);
  ConvergenceCurve curve{{}, solve(obs, problem.features, config, &problem.truth)};
  for (const TraceRecord& rec : curve.report.trace)
    if (curve.points.empty() || rec.data_passes > curve.points.back().data_passes)
      curve.points.push_back({rec.data_passes, rec.rel_error});
  return curve;
}

struct InitQualityRow {
  std::int64_t omega0_size = 0;
  int trials = 0;
  double mean_distance = 0.0;           // mean D(Z_init, Z*)
  double mean_relative_distance = 0.0;  // mean D(Z_init, Z*) / sqrt(sigma_r*)
};

/// Spectral initialization from fixed-count samples of each size; trial t
/// reuses one problem instance across sizes.
inline std::vector<InitQualityRow> init_quality_sweep(const Dims& dims, Index r,
                                                      const std::vector<std::int64_t>& sizes, int trials,
                                                      std::uint64_t seed,
                                                      SvdMethod method = SvdMethod::automatic) {
  require(trials >= 1, "init sweep needs at least one trial");
  for (const auto s : sizes)
    require(s >= 1 && s <= static_cast<std::int64_t>(dims.d1 * dims.d2),
            "omega0 size " + std::to_string(s) + " outside [1, d1 d2]");
  std::vector<std::vector<std::pair<double, double>>> dist(static_cast<std::size_t>(trials),
                                                          std::vector<std::pair<double, double>>(sizes.size()));
  parallel_for(static_cast<std::size_t>(trials), [&](std::size_t t) {
    const std::uint64_t pseed = trial_seed(seed, static_cast<int>(t));
    const Problem problem = generate_problem({dims.d1, dims.d2, dims.n1, dims.n2, r, pseed});
    const double scale = std::sqrt(problem.truth.singular_values()(r - 1));
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const ObservationSet obs =
          sample_fixed_count(problem.features, problem.truth, sizes[k], derive_seed(pseed, kSampleKey + k));
      const FactorPair z = spectral_init(obs, problem.features, r, method, derive_seed(pseed, kSolveKey + k));
      const double d = procrustes_distance(z, problem.truth.factors());
      dist[t][k] = {d, d / scale};
    }
  });
  std::vector<InitQualityRow> rows;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    InitQualityRow row{sizes[k], trials, 0.0, 0.0};
    for (int t = 0; t < trials; ++t) {
      row.mean_distance += dist[static_cast<std::size_t>(t)][k].first / trials;
      row.mean_relative_distance += dist[static_cast<std::size_t>(t)][k].second / trials;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace imc
