#pragma once

// Command-line front end. Subcommands: synth, solve, phase-transition,
// convergence, init-sweep. Every subcommand accepts --seed, --config <path>
// and --out <dir>; flags override config-file values. Exit codes: 0 success,
// 2 usage, 3 data format / IO, 4 solver failure.

#include "imc/core.hpp"
#include "imc/datagen.hpp"
#include "imc/experiments.hpp"
#include "imc/io.hpp"
#include "imc/solver.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

namespace imc::cli {

inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitSolver = 4;

enum Command : unsigned {
  kSynth = 1u << 0,
  kSolve = 1u << 1,
  kPhase = 1u << 2,
  kConvergence = 1u << 3,
  kInitSweep = 1u << 4,
  kAll = kSynth | kSolve | kPhase | kConvergence | kInitSweep,
};

struct KeySpec {
  std::string_view key;
  unsigned commands;
  std::string_view help;
};

inline constexpr unsigned kSolverCommands = kSolve | kPhase | kConvergence;

// clang-format off
inline constexpr KeySpec kKeys[] = {
    {"seed", kAll, "master seed"},
    {"out", kAll, "output directory"},
    {"preset", kPhase | kConvergence | kInitSweep, "smoke | desk"},
    {"d1", kSynth | kSolve | kPhase | kConvergence | kInitSweep, "rows of L"},
    {"d2", kSynth | kSolve | kPhase | kConvergence | kInitSweep, "columns of L"},
    {"n1", kSynth | kSolve | kPhase | kConvergence | kInitSweep, "left feature count"},
    {"n2", kSynth | kSolve | kPhase | kConvergence | kInitSweep, "right feature count"},
    {"r", kSynth | kSolve | kPhase | kConvergence | kInitSweep, "true rank"},
    {"in", kSolve, "problem directory written by synth"},
    {"obs", kSolve, "observation file (imc-obs v1)"},
    {"p", kSolve | kConvergence, "Bernoulli sampling rate"},
    {"m", kSolve, "fixed observation count"},
    {"ratios", kPhase, "comma-separated m/(nr) values"},
    {"trials", kPhase | kInitSweep, "trials per grid point"},
    {"threshold", kPhase, "success threshold on relative error"},
    {"sizes", kInitSweep, "comma-separated |Omega_0| values"},
    {"rank", kSolve, "solver rank (default r)"},
    {"phase2_iters", kSolverCommands, "S; 'auto' = max(1, ceil(r ln n))"},
    {"phase3_iters", kSolverCommands, "T"},
    {"eta", kSolverCommands, "phase-2 step ('auto' = c_eta/(r sigma1_hat))"},
    {"tau", kSolverCommands, "phase-3 step ('auto' = c_tau/sigma1_hat)"},
    {"c_eta", kSolverCommands, "phase-2 step constant"},
    {"c_tau", kSolverCommands, "phase-3 step constant"},
    {"mu0", kSolverCommands, "incoherence parameter for the projection ('auto')"},
    {"delta", kSolverCommands, "projection tolerance ('auto')"},
    {"theory_delta", kSolverCommands, "auto delta = 1/(r kappa n^2)"},
    {"lambda", kSolverCommands, "sparsity penalty weight"},
    {"stop_tol", kSolverCommands, "early-exit tolerance"},
    {"max_data_passes", kSolverCommands, "effective data-pass budget"},
    {"init_pass_charge", kSolverCommands, "passes charged for initialization"},
    {"success_threshold", kSolve | kConvergence, "relative error counted as success"},
    {"max_projection_sweeps", kSolverCommands, "projection sweep cap"},
    {"svd", kSolverCommands | kInitSweep, "auto | dense | subspace"},
    {"record_timing", kSolverCommands, "fill wall_ms (breaks byte reproducibility)"},
};
// clang-format on

inline std::string dashed(std::string_view key) {
  std::string out(key);
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

/// Typed reads from resolved settings; malformed values are usage errors that
/// name the key.
class Resolved {
 public:
  explicit Resolved(Settings s) : s_(std::move(s)) {}

  bool has(std::string_view key) const { return s_.contains(key); }
  const Settings& settings() const noexcept { return s_; }
  void set(const std::string& key, const std::string& value) { s_.set(key, value); }
  void set_default(const std::string& key, const std::string& value) {
    if (!s_.contains(key)) s_.set(key, value);
  }

  std::string text(std::string_view key) const {
    const auto* v = s_.find(key);
    if (v == nullptr) fail(ErrorKind::invalid_argument, "missing required setting '" + std::string(key) + "'");
    return v->text;
  }

  double number(std::string_view key) const {
    const auto t = text(key);
    const auto v = parse_double(t);
    if (!v) bad(key, t, "a number");
    return *v;
  }

  std::int64_t integer(std::string_view key) const {
    const auto t = text(key);
    const auto v = parse_integer<std::int64_t>(t);
    if (!v) bad(key, t, "an integer");
    return *v;
  }

  std::uint64_t seed() const {
    if (!has("seed")) return 0;
    const auto t = text("seed");
    const auto v = parse_integer<std::uint64_t>(t);
    if (!v) bad("seed", t, "a non-negative integer");
    return *v;
  }

  bool flag(std::string_view key) const {
    const auto t = text(key);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    bad(key, t, "true or false");
  }

  bool is_auto(std::string_view key) const { return !has(key) || text(key) == "auto"; }
  std::optional<double> optional_number(std::string_view key) const {
    return is_auto(key) ? std::nullopt : std::optional<double>(number(key));
  }

  std::vector<double> numbers(std::string_view key) const {
    std::vector<double> out;
    const auto t = text(key);
    for (const auto field : split_fields(t, ',')) {
      const auto v = parse_double(field);
      if (!v) bad(key, t, "a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

 private:
  [[noreturn]] static void bad(std::string_view key, const std::string& value, const char* expected) {
    fail(ErrorKind::invalid_argument,
         "setting '" + std::string(key) + "' = '" + value + "' is not " + expected);
  }

  Settings s_;
};

inline SolverConfig solver_config(const Resolved& s) {
  SolverConfig c;
  if (s.has("rank")) c.rank = s.integer("rank");
  else if (s.has("r")) c.rank = s.integer("r");
  if (!s.is_auto("phase2_iters")) c.phase2_iters = static_cast<int>(s.integer("phase2_iters"));
  if (s.has("phase3_iters")) c.phase3_iters = static_cast<int>(s.integer("phase3_iters"));
  c.eta = s.optional_number("eta");
  c.tau = s.optional_number("tau");
  if (s.has("c_eta")) c.c_eta = s.number("c_eta");
  if (s.has("c_tau")) c.c_tau = s.number("c_tau");
  c.mu0 = s.optional_number("mu0");
  c.delta = s.optional_number("delta");
  if (s.has("theory_delta")) c.theory_delta = s.flag("theory_delta");
  if (s.has("lambda")) c.lambda = s.number("lambda");
  if (s.has("stop_tol")) c.stop_tol = s.number("stop_tol");
  if (s.has("max_data_passes")) c.max_data_passes = s.number("max_data_passes");
  if (s.has("init_pass_charge")) c.init_pass_charge = s.number("init_pass_charge");
  if (s.has("success_threshold")) c.success_threshold = s.number("success_threshold");
  if (s.has("max_projection_sweeps")) c.max_projection_sweeps = static_cast<int>(s.integer("max_projection_sweeps"));
  if (s.has("svd")) c.svd_method = parse_svd_method(s.text("svd"));
  if (s.has("record_timing")) c.record_timing = s.flag("record_timing");
  c.seed = s.seed();
  c.validate();
  return c;
}

/// Preset values, applied only where neither the config file nor a flag set
/// the key.
inline void apply_preset(Resolved& s, unsigned command) {
  const std::string preset = s.has("preset") ? s.text("preset") : "smoke";
  if (preset != "smoke" && preset != "desk")
    fail(ErrorKind::invalid_argument, "unknown preset '" + preset + "' (smoke|desk)");
  s.set_default("preset", preset);
  const bool desk = preset == "desk";
  const auto dims = [&](const char* d, const char* n, const char* r) {
    s.set_default("d1", d);
    s.set_default("d2", d);
    s.set_default("n1", n);
    s.set_default("n2", n);
    s.set_default("r", r);
  };
  if (command == kPhase) {
    if (desk) {
      dims("500", "50", "10");
      s.set_default("ratios", "2,3,4,5,6,7,8,10,12");
    } else {
      dims("200", "20", "4");
      s.set_default("ratios", "2,6,10");
    }
    s.set_default("trials", "20");
    s.set_default("threshold", "1e-6");
    s.set_default("max_data_passes", desk ? "300" : "500");
  } else if (command == kConvergence) {
    if (desk) {
      dims("1000", "100", "10");
      s.set_default("p", "0.1");
    } else {
      dims("200", "20", "4");
      s.set_default("p", "0.3");
    }
    s.set_default("max_data_passes", "300");
  } else if (command == kInitSweep) {
    dims("200", "20", "3");
    s.set_default("trials", desk ? "20" : "5");
    if (!s.has("sizes")) {
      const auto nr = std::max(s.integer("n1"), s.integer("n2")) * s.integer("r");
      s.set_default("sizes", std::to_string(2 * nr) + "," + std::to_string(8 * nr) + "," + std::to_string(32 * nr));
    }
  }
  if (command == kPhase || command == kConvergence) s.set_default("phase3_iters", "100000");
}

inline Dims dims_of(const Resolved& s) {
  return {s.integer("d1"), s.integer("d2"), s.integer("n1"), s.integer("n2")};
}

inline std::filesystem::path out_dir(const Resolved& s) {
  return s.has("out") ? std::filesystem::path(s.text("out")) : std::filesystem::path("imc_out");
}

/// The resolved settings minus "out", in config-file form.
inline Settings echo_settings(const Resolved& s) {
  Settings echo;
  for (const auto& [k, v] : s.settings().values())
    if (k != "out") echo.set(k, v.text);
  echo.set("seed", std::to_string(s.seed()));
  return echo;
}

inline ProblemSpec problem_spec(const Resolved& s) {
  ProblemSpec spec{s.integer("d1"), s.integer("d2"), s.integer("n1"), s.integer("n2"), s.integer("r"), s.seed()};
  spec.validate();
  return spec;
}

inline int run_synth(Resolved& s) {
  const ProblemSpec spec = problem_spec(s);
  const Problem problem = generate_problem(spec);
  const auto dir = out_dir(s);
  save_dense(dir / "x_left.csv", problem.features.x_left());
  save_dense(dir / "x_right.csv", problem.features.x_right());
  save_dense(dir / "u_star.csv", problem.truth.u_star());
  save_dense(dir / "v_star.csv", problem.truth.v_star());
  Settings meta;
  for (const char* k : {"d1", "d2", "n1", "n2", "r"}) meta.set(k, s.text(k));
  meta.set("seed", std::to_string(spec.seed));
  save_text(dir / "problem.cfg", meta.to_text());
  save_text(dir / "config.echo", echo_settings(s).to_text());
  const CoherenceStats coh = coherence(problem.features, problem.truth);
  std::cout << "synth: wrote problem to " << dir.string() << " (kappa=" << format_double(problem.truth.condition_number())
            << ", mu0=" << format_double(coh.mu0) << ", mu1=" << format_double(coh.mu1) << ")\n";
  return 0;
}

inline int run_solve(Resolved& s) {
  std::optional<FeaturePair> features;
  std::optional<GroundTruth> truth;
  if (s.has("in")) {
    const std::filesystem::path in = std::filesystem::absolute(s.text("in"));
    s.set("in", in.string());
    features.emplace(load_dense(in / "x_left.csv"), load_dense(in / "x_right.csv"));
    if (std::filesystem::exists(in / "u_star.csv") && std::filesystem::exists(in / "v_star.csv"))
      truth.emplace(load_dense(in / "u_star.csv"), load_dense(in / "v_star.csv"));
    if (!s.has("rank") && !s.has("r") && std::filesystem::exists(in / "problem.cfg")) {
      const Settings meta = load_settings(in / "problem.cfg");
      if (const auto* r = meta.find("r")) s.set_default("rank", r->text);
    }
    if (!s.has("rank") && !s.has("r") && truth) s.set_default("rank", std::to_string(truth->rank()));
  } else {
    Problem problem = generate_problem(problem_spec(s));
    features.emplace(std::move(problem.features));
    truth.emplace(std::move(problem.truth));
  }

  std::optional<ObservationSet> obs;
  if (s.has("obs")) {
    const std::filesystem::path path = std::filesystem::absolute(s.text("obs"));
    s.set("obs", path.string());
    obs = load_observations(path);
  } else {
    if (!truth) fail(ErrorKind::invalid_argument, "no ground truth in problem directory: pass --obs");
    if (s.has("p") == s.has("m")) fail(ErrorKind::invalid_argument, "pass exactly one of --p, --m or --obs");
    obs = s.has("p") ? sample_bernoulli(*features, *truth, s.number("p"), s.seed())
                     : sample_fixed_count(*features, *truth, s.integer("m"), s.seed());
  }
  if (obs->d1() != features->d1() || obs->d2() != features->d2())
    fail(ErrorKind::data_format, "observation grid " + std::to_string(obs->d1()) + "x" + std::to_string(obs->d2()) +
                                     " does not match features " + std::to_string(features->d1()) + "x" +
                                     std::to_string(features->d2()));

  const SolverConfig config = solver_config(s);
  const RecoveryReport report = solve(*obs, *features, config, truth ? &*truth : nullptr);
  const auto dir = out_dir(s);
  save_report(report, dir, echo_settings(s));
  save_dense(dir / "u_hat.csv", report.factors.u);
  save_dense(dir / "v_hat.csv", report.factors.v);
  std::cout << "solve: |Omega|=" << obs->size() << " passes=" << format_double(report.data_passes)
            << " stop=" << report.stop_reason;
  if (report.rel_error) std::cout << " rel_error=" << format_double(*report.rel_error);
  std::cout << "\n";
  return 0;
}

inline int run_phase(Resolved& s) {
  apply_preset(s, kPhase);
  const Dims dims = dims_of(s);
  const Index r = s.integer("r");
  SolverConfig base = solver_config(s);
  const PhaseGridResult grid = phase_transition(dims, r, s.numbers("ratios"), static_cast<int>(s.integer("trials")),
                                                s.number("threshold"), s.seed(), base);
  std::string csv = "m_over_nr,m,trials,successes,success_rate,wilson_low,wilson_high,mean_rel_error,solver_errors\n";
  for (const PhaseCell& c : grid.cells) {
    csv += format_double(c.m_over_nr) + ',' + std::to_string(c.m) + ',' + std::to_string(c.trials) + ',' +
           std::to_string(c.successes) + ',' + format_double(c.success_rate) + ',' + format_double(c.wilson_low) +
           ',' + format_double(c.wilson_high) + ',' + format_double(c.mean_relative_error) + ',' +
           std::to_string(c.solver_errors) + '\n';
    std::cout << "m/(nr)=" << format_double(c.m_over_nr) << " success " << c.successes << "/" << c.trials << "\n";
  }
  const auto dir = out_dir(s);
  save_text(dir / "phase_transition.csv", csv);
  save_text(dir / "config.echo", echo_settings(s).to_text());
  return 0;
}

inline int run_convergence(Resolved& s) {
  apply_preset(s, kConvergence);
  const ConvergenceCurve curve =
      convergence_curve(dims_of(s), s.integer("r"), s.number("p"), s.seed(), solver_config(s));
  std::string csv = "data_passes,rel_error\n";
  for (const CurvePoint& pt : curve.points) csv += format_double(pt.data_passes) + ',' + format_double(pt.rel_error) + '\n';
  const auto dir = out_dir(s);
  save_report(curve.report, dir, echo_settings(s));
  save_text(dir / "convergence.csv", csv);
  save_text(dir / "config.echo", echo_settings(s).to_text());
  std::cout << "convergence: passes=" << format_double(curve.report.data_passes)
            << " rel_error=" << format_double(curve.report.rel_error.value_or(std::nan(""))) << "\n";
  return 0;
}

inline int run_init_sweep(Resolved& s) {
  apply_preset(s, kInitSweep);
  std::vector<std::int64_t> sizes;
  for (const double v : s.numbers("sizes")) {
    if (v != std::floor(v)) fail(ErrorKind::invalid_argument, "sizes must be integers");
    sizes.push_back(static_cast<std::int64_t>(v));
  }
  const SvdMethod method = s.has("svd") ? parse_svd_method(s.text("svd")) : SvdMethod::automatic;
  const auto rows = init_quality_sweep(dims_of(s), s.integer("r"), sizes, static_cast<int>(s.integer("trials")),
                                       s.seed(), method);
  std::string csv = "omega0_size,trials,mean_distance,mean_relative_distance\n";
  for (const auto& row : rows) {
    csv += std::to_string(row.omega0_size) + ',' + std::to_string(row.trials) + ',' + format_double(row.mean_distance) +
           ',' + format_double(row.mean_relative_distance) + '\n';
    std::cout << "|Omega0|=" << row.omega0_size << " mean D=" << format_double(row.mean_distance) << "\n";
  }
  const auto dir = out_dir(s);
  save_text(dir / "init_sweep.csv", csv);
  save_text(dir / "config.echo", echo_settings(s).to_text());
  return 0;
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return kExitUsage;
    case ErrorKind::solver: return kExitSolver;
    default: return kExitData;
  }
}

inline int cli_main(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Inductive matrix completion by multi-phase Procrustes flow"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app;
    unsigned command;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config;
  };
  std::vector<Sub> subs;
  subs.reserve(5);
  const std::pair<const char*, unsigned> commands[] = {
      {"synth", kSynth}, {"solve", kSolve}, {"phase-transition", kPhase}, {"convergence", kConvergence},
      {"init-sweep", kInitSweep}};
  const std::map<unsigned, const char*> descriptions = {
      {kSynth, "generate and save a synthetic problem"},
      {kSolve, "run the three-phase solver"},
      {kPhase, "success rate versus m/(nr)"},
      {kConvergence, "relative error versus effective data passes"},
      {kInitSweep, "spectral initialization quality versus |Omega_0|"}};
  for (const auto& [name, command] : commands) {
    subs.push_back({app.add_subcommand(name, descriptions.at(command)), command, {}, {}, {}});
  }
  for (Sub& sub : subs) {
    sub.app->add_option("--config", sub.config, "key=value config file");
    for (const KeySpec& k : kKeys) {
      if ((k.commands & sub.command) == 0) continue;
      const std::string key(k.key);
      sub.options[key] = sub.app->add_option("--" + dashed(key), sub.values[key], std::string(k.help));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  for (Sub& sub : subs) {
    if (!sub.app->parsed()) continue;
    try {
      Settings settings;
      if (!sub.app->get_option("--config")->empty()) {
        settings = load_settings(sub.config);
        for (const auto& [key, value] : settings.values()) {
          const auto it = sub.options.find(key);
          if (it == sub.options.end())
            fail(ErrorKind::invalid_argument, sub.config + ":" + std::to_string(value.line) + ": unknown key '" +
                                                  key + "' for " + sub.app->get_name());
        }
      }
      for (const auto& [key, opt] : sub.options)
        if (opt->count() > 0) settings.set(key, sub.values[key]);
      Resolved resolved(std::move(settings));
      switch (sub.command) {
        case kSynth: return run_synth(resolved);
        case kSolve: return run_solve(resolved);
        case kPhase: return run_phase(resolved);
        case kConvergence: return run_convergence(resolved);
        default: return run_init_sweep(resolved);
      }
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return exit_code(e.kind());
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitData;
    }
  }
  return kExitUsage;
}

}  // namespace imc::cli
