// zolangevin: command-line front end for the zeroth-order Langevin samplers.
//
// Exit codes: 0 ok, 2 configuration error, 3 divergence or exhausted budget,
// 4 failed --check threshold.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "zol/estimator.hpp"
#include "zol/experiment.hpp"
#include "zol/metrics.hpp"
#include "zol/samplers.hpp"
#include "zol/select.hpp"
#include "zol/tuning.hpp"

namespace {

using nlohmann::json;
using zol::ConfigError;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheck = 4;

// "1,2,3" -> {1,2,3}; a single value is broadcast to `dim` when dim > 0.
zol::Vector parse_point(const std::string& text, zol::Index dim) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("cannot parse '{}' as a number", item));
    }
  }
  if (values.empty()) throw ConfigError("empty point");
  if (values.size() == 1 && dim > 1) return zol::Vector::Constant(dim, values[0]);
  if (dim > 0 && static_cast<zol::Index>(values.size()) != dim) {
    throw ConfigError(fmt::format("point has {} entries, target dimension is {}", values.size(), dim));
  }
  return Eigen::Map<zol::Vector>(values.data(), static_cast<zol::Index>(values.size()));
}

// --- sample -----------------------------------------------------------------

struct SampleArgs {
  std::string config;
  std::string output_dir;
  bool check = false;
};

int cmd_sample(const SampleArgs& a) {
  auto cfg = zol::load_config(a.config);
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  const auto r = zol::run_experiment(cfg, a.check);
  fmt::print("status={} oracle_calls={} N={} b={} h={:.6g}", r.message.empty() ? "ok" : r.message,
             r.oracle_calls, r.params.N, r.params.b, r.params.h);
  if (r.w2) fmt::print(" bures_w2={:.6g}", *r.w2);
  fmt::print(" wall={:.2f}s dir={}\n", r.wall_seconds, r.output_dir.string());
  return static_cast<int>(r.status);
}

// --- tune -------------------------------------------------------------------

struct TuneArgs {
  std::string config;
  std::string algorithm = "zo-lmc";
  std::string regime = "strongly-logconcave";
  std::string feedback = "two-point";
  double epsilon = 0.25;
  std::int64_t d = 2;
  double sigma = 0.0;
  double m = 1.0;
  double M = 1.0;
  std::optional<double> lambda, w2_init, kl_init, C, h, nu, gamma;
  std::optional<std::int64_t> b, N;
};

int cmd_tune(const TuneArgs& a) {
  zol::TunedParams p;
  zol::Overrides ov;
  ov.h = a.h;
  ov.b = a.b;
  ov.nu = a.nu;
  ov.gamma = a.gamma;
  ov.N = a.N;
  ov.C = a.C;
  if (!a.config.empty()) {
    auto cfg = zol::load_config(a.config);
    if (a.h) cfg.overrides.h = a.h;
    if (a.b) cfg.overrides.b = a.b;
    if (a.nu) cfg.overrides.nu = a.nu;
    if (a.gamma) cfg.overrides.gamma = a.gamma;
    if (a.N) cfg.overrides.N = a.N;
    if (a.C) cfg.overrides.C = a.C;
    p = zol::tune_for(cfg, *zol::build_target(cfg.target));
  } else {
    zol::ProblemConstants pc;
    pc.d = a.d;
    pc.sigma = a.sigma;
    pc.m = a.m;
    pc.M = a.M;
    pc.lambda = a.lambda;
    const auto alg = zol::parse_algorithm(a.algorithm);
    const auto regime = zol::parse_regime(a.regime);
    double init;
    if (regime == zol::Regime::Lsi) {
      if (!a.kl_init) throw ConfigError("--kl-init is required for the lsi regime");
      init = *a.kl_init;
    } else if (alg == zol::Algorithm::ZoRmp) {
      init = a.C.value_or(1.0);
    } else {
      if (!a.w2_init && !(a.m > 0.0)) throw ConfigError("--w2-init is required when m = 0");
      init = a.w2_init.value_or(std::sqrt(static_cast<double>(a.d) / a.m));
    }
    p = zol::tune(alg, regime, zol::parse_feedback(a.feedback), a.epsilon, pc, init, ov);
  }
  std::cout << zol::params_to_json(p).dump(2) << '\n';
  return kExitOk;
}

// --- select -----------------------------------------------------------------

struct SelectArgs {
  std::string config;
  std::string theta0 = "1";
  std::optional<double> a, R, nu, tau, err, K1, K2;
  std::optional<std::int64_t> s, n;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_select(const SelectArgs& args) {
  const auto cfg = zol::load_config(args.config);
  const auto target = zol::build_target(cfg.target);
  const zol::Index d = target->dim();
  const zol::Vector theta0 = parse_point(args.theta0, d);
  if (!args.a || !args.s) throw ConfigError("--a and --s are required");
  const zol::Index s = static_cast<zol::Index>(*args.s);
  if (s < 1 || s > d) throw ConfigError(fmt::format("--s must lie in [1, {}]", d));
  const double nu = args.nu.value_or(zol::max_selection_nu(*args.a, target->M(), s));
  const double tau = args.tau.value_or(zol::selection_threshold(*args.a, target->M(), nu, s));
  std::int64_t n;
  if (args.n) {
    if (*args.n < 1) throw ConfigError("--n must be >= 1");
    n = *args.n;
  } else {
    if (!args.R) throw ConfigError("either --n or --R is required");
    n = zol::required_samples(*args.R, s, *args.a, d, args.err.value_or(0.05),
                              args.K1.value_or(cfg.K1.value_or(1.0)),
                              args.K2.value_or(cfg.K2.value_or(1.0)));
  }
  zol::StochasticOracle oracle(target, zol::build_noise(cfg.noise), cfg.feedback);
  zol::Rng rng(args.seed_given ? args.seed : cfg.seed);
  const auto r = zol::estimate_support(oracle, theta0, n, nu, tau, rng);
  json out;
  out["support"] = r.support;
  out["n_used"] = r.n_used;
  out["tau"] = r.tau;
  out["nu"] = nu;
  out["calls"] = r.calls;
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

// --- verify-cov -------------------------------------------------------------

struct CovArgs {
  std::string kind = "both";
  double gamma = 2.0;
  double h = 0.1;
  double alpha = 0.7;
  double u = 1.0;
  std::int64_t paths = 1000000;
  std::int64_t substeps = 1000;
  std::uint64_t seed = 1;
  int workers = 0;
  double tol = 0.02;
  bool check = false;
};

int cmd_verify_cov(const CovArgs& a) {
  if (a.kind != "klmc" && a.kind != "rmp" && a.kind != "both") {
    throw ConfigError("--kind must be klmc, rmp or both");
  }
  const int workers = a.workers > 0 ? a.workers : zol::resolve_workers(std::nullopt);
  zol::Rng rng(a.seed);
  bool ok = true;
  auto report = [&](const char* name, const zol::Matrix& analytic, const zol::Matrix& mc) {
    const double err = zol::max_relative_error(mc, analytic);
    const bool pass = err <= a.tol;
    ok = ok && pass;
    fmt::print("{}: max_relative_error={:.4g} tol={} {}\n", name, err, a.tol,
               pass ? "PASS" : "FAIL");
    for (zol::Index i = 0; i < analytic.rows(); ++i) {
      for (zol::Index j = 0; j <= i; ++j) {
        fmt::print("  [{},{}] analytic={:.8g} oracle={:.8g}\n", i, j, analytic(i, j), mc(i, j));
      }
    }
  };
  if (a.kind != "rmp") {
    const double g = a.gamma;
    const double T = a.h;
    const double sg = std::sqrt(2.0 * g);
    std::vector<zol::Kernel> k = {
        [=](double s) { return sg * std::exp(-g * (T - s)); },
        [=](double s) { return sg * zol::psi(1, g, T - s); },
    };
    const zol::Matrix mc = zol::brownian_cov_oracle(k, T, a.substeps, a.paths, rng, workers);
    report("klmc", zol::klmc_noise_cov(g, a.h), mc);
  }
  if (a.kind != "klmc") {
    const double T = a.h;
    const double t1 = a.alpha * a.h;
    const double su = std::sqrt(a.u);
    std::vector<zol::Kernel> k = {
        [=](double s) { return s < t1 ? su * (1.0 - std::exp(-2.0 * (t1 - s))) : 0.0; },
        [=](double s) { return su * (1.0 - std::exp(-2.0 * (T - s))); },
        [=](double s) { return 2.0 * su * std::exp(-2.0 * (T - s)); },
    };
    const zol::Matrix mc = zol::brownian_cov_oracle(k, T, a.substeps, a.paths, rng, workers);
    report("rmp", zol::rmp_noise_cov(a.h, a.alpha, a.u), mc);
  }
  return (a.check && !ok) ? kExitCheck : kExitOk;
}

// --- benchmark --------------------------------------------------------------

int cmd_benchmark(const std::string& config, const std::string& output_dir) {
  auto cfg = zol::load_config(config);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  const auto report = zol::benchmark_sweep(cfg);
  for (const auto& r : report.rows) {
    fmt::print("d={} eps={} N={} b={} calls={} hit={} status={}\n", r.d, r.epsilon, r.params.N,
               r.params.b, r.params.predicted_oracle_calls,
               r.iterations_to_threshold ? std::to_string(*r.iterations_to_threshold) : "-",
               r.status);
  }
  std::cout << report.slopes.dump(2) << '\n';
  return kExitOk;
}

// --- diagnose-estimator -----------------------------------------------------

struct DiagArgs {
  std::string config;
  std::vector<std::string> thetas = {"0"};
  std::vector<double> nus = {0.1};
  std::vector<std::int64_t> bs = {1};
  std::int64_t reps = 10000;
  std::uint64_t seed = 0;
  bool finite_difference = false;
};

int cmd_diagnose(const DiagArgs& a) {
  const auto cfg = zol::load_config(a.config);
  const auto target = zol::build_target(cfg.target);
  const auto noise = zol::build_noise(cfg.noise);
  const double sigma = zol::noise_level(noise);
  zol::DiagnosticOptions opts;
  opts.allow_finite_difference = a.finite_difference;
  fmt::print("theta_id,nu,b,mode,sigma,mc_var,bound,mc_bias,bias_bound,se\n");
  std::uint64_t stream = 0;
  for (std::size_t t = 0; t < a.thetas.size(); ++t) {
    const zol::Vector theta = parse_point(a.thetas[t], target->dim());
    for (double nu : a.nus) {
      for (std::int64_t b : a.bs) {
        zol::StochasticOracle oracle(target, noise, cfg.feedback);
        auto rng = zol::Rng::for_stream(a.seed, stream++);
        const zol::SmoothingConfig sc{nu, b};
        const auto r = zol::mc_variance(oracle, theta, sc, a.reps, sigma, rng, opts);
        fmt::print("{},{},{},{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", t, nu, b,
                   zol::to_string(cfg.feedback), sigma, r.var_vs_f, r.bound.vs_f, r.bias_norm,
                   zol::bias_bound(target->M(), nu, target->dim()), r.standard_error);
      }
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zeroth-order Langevin samplers"};
  app.require_subcommand(1);

  SampleArgs sample;
  auto* sc = app.add_subcommand("sample", "Run an experiment from a config or manifest");
  sc->add_option("config", sample.config, "Config or manifest JSON")->required();
  sc->add_option("--output-dir", sample.output_dir, "Override output_dir");
  sc->add_flag("--check", sample.check, "Exit 4 when the final W2 exceeds check.max_w2");

  TuneArgs tune;
  auto* tc = app.add_subcommand("tune", "Print tuned parameters as JSON");
  tc->set_help_flag("--help", "Print this help message and exit");
  tc->add_option("--config", tune.config, "Take target and settings from a config");
  tc->add_option("--algorithm", tune.algorithm);
  tc->add_option("--regime", tune.regime);
  tc->add_option("--feedback", tune.feedback);
  tc->add_option("--epsilon", tune.epsilon);
  tc->add_option("--d", tune.d);
  tc->add_option("--sigma", tune.sigma);
  tc->add_option("--m", tune.m);
  tc->add_option("--M", tune.M);
  tc->add_option("--lambda", tune.lambda);
  tc->add_option("--w2-init", tune.w2_init);
  tc->add_option("--kl-init", tune.kl_init);
  tc->add_option("--C", tune.C);
  tc->add_option("--h", tune.h);
  tc->add_option("--b", tune.b);
  tc->add_option("--nu", tune.nu);
  tc->add_option("--gamma", tune.gamma);
  tc->add_option("--N", tune.N);

  SelectArgs sel;
  auto* lc = app.add_subcommand("select", "Estimate the gradient support at theta0");
  lc->add_option("--config", sel.config, "Config naming the target and noise")->required();
  lc->add_option("--theta0", sel.theta0, "Query point (comma list or scalar)");
  lc->add_option("--a", sel.a, "Minimum gradient magnitude on the support");
  lc->add_option("--s", sel.s, "Support size");
  lc->add_option("--R", sel.R, "Gradient norm bound at theta0");
  lc->add_option("--n", sel.n, "Explicit number of probes");
  lc->add_option("--nu", sel.nu);
  lc->add_option("--tau", sel.tau);
  lc->add_option("--err", sel.err, "Failure probability (default 0.05)");
  lc->add_option("--K1", sel.K1);
  lc->add_option("--K2", sel.K2);
  auto* seed_opt = lc->add_option("--seed", sel.seed);

  CovArgs cov;
  auto* vc = app.add_subcommand("verify-cov", "Compare analytic noise covariances with Brownian paths");
  vc->set_help_flag("--help", "Print this help message and exit");
  vc->add_option("--kind", cov.kind, "klmc, rmp or both");
  vc->add_option("--gamma", cov.gamma);
  vc->add_option("--h", cov.h);
  vc->add_option("--alpha", cov.alpha);
  vc->add_option("--u", cov.u);
  vc->add_option("--paths", cov.paths);
  vc->add_option("--substeps", cov.substeps);
  vc->add_option("--seed", cov.seed);
  vc->add_option("--workers", cov.workers);
  vc->add_option("--tol", cov.tol);
  vc->add_flag("--check", cov.check, "Exit 4 when the error exceeds --tol");

  std::string bench_config, bench_dir;
  auto* bc = app.add_subcommand("benchmark", "Run a scaling sweep");
  bc->add_option("config", bench_config)->required();
  bc->add_option("--output-dir", bench_dir);

  DiagArgs diag;
  auto* dc = app.add_subcommand("diagnose-estimator", "Monte-Carlo bias and variance of the estimator");
  dc->add_option("--config", diag.config)->required();
  dc->add_option("--theta", diag.thetas, "Query points (repeatable; comma lists)");
  dc->add_option("--nu", diag.nus)->delimiter(',');
  dc->add_option("--b", diag.bs)->delimiter(',');
  dc->add_option("--reps", diag.reps);
  dc->add_option("--seed", diag.seed);
  dc->add_flag("--finite-difference", diag.finite_difference,
               "Allow a finite-difference reference gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*sc) return cmd_sample(sample);
    if (*tc) return cmd_tune(tune);
    if (*lc) {
      sel.seed_given = seed_opt->count() > 0;
      return cmd_select(sel);
    }
    if (*vc) return cmd_verify_cov(cov);
    if (*bc) return cmd_benchmark(bench_config, bench_dir);
    if (*dc) return cmd_diagnose(diag);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const zol::DiagnosticUnavailable& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const zol::DivergenceError& e) {
    fmt::print(stderr, "diverged: {}\n", e.what());
    return kExitDiverged;
  } catch (const zol::BudgetExceeded& e) {
    fmt::print(stderr, "budget exhausted: {}\n", e.what());
    return kExitDiverged;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return kExitOk;
}
