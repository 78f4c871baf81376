#include "zol/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/core.h>

namespace zol {

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::ZoLmc: return "zo-lmc";
    case Algorithm::ZoKlmc: return "zo-klmc";
    case Algorithm::ZoRmp: return "zo-rmp";
    case Algorithm::LmcBaseline: return "lmc-baseline";
    case Algorithm::KlmcBaseline: return "klmc-baseline";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::ZoLmc, Algorithm::ZoKlmc, Algorithm::ZoRmp,
                 Algorithm::LmcBaseline, Algorithm::KlmcBaseline}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError(fmt::format(
      "unknown algorithm '{}' (expected zo-lmc, zo-klmc, zo-rmp, lmc-baseline or "
      "klmc-baseline)",
      name));
}

std::string to_string(Regime regime) {
  return regime == Regime::StronglyLogConcave ? "strongly-logconcave" : "lsi";
}

Regime parse_regime(const std::string& name) {
  if (name == "strongly-logconcave") return Regime::StronglyLogConcave;
  if (name == "lsi") return Regime::Lsi;
  throw ConfigError(fmt::format(
      "unknown regime '{}' (expected strongly-logconcave or lsi)", name));
}

std::int64_t calls_per_step(Algorithm algorithm, std::int64_t b) {
  switch (algorithm) {
    case Algorithm::ZoLmc:
    case Algorithm::ZoKlmc: return 2 * b;
    case Algorithm::ZoRmp: return 4 * b;
    case Algorithm::LmcBaseline:
    case Algorithm::KlmcBaseline: return 0;
  }
  return 0;
}

namespace {

constexpr double kMaxInteger = 1e15;

std::int64_t ceil_count(double x, const char* what) {
  if (!std::isfinite(x) || x > kMaxInteger) {
    throw ConfigError(fmt::format("{} = {:.6g} is too large to run", what, x));
  }
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(x)));
}

// ceil((rate) * log(ratio)), clamped to at least one step.
std::int64_t iteration_count(double steps_per_unit_log, double log_ratio) {
  return ceil_count(std::max(0.0, steps_per_unit_log * log_ratio), "iteration count N");
}

void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError(fmt::format("{} must be positive (got {})", what, value));
  }
}

void require_strongly_convex(const ProblemConstants& pc) {
  if (pc.d < 1) throw ConfigError("dimension d must be >= 1");
  if (!(pc.m > 0.0)) {
    throw ConfigError("this tuner needs a strongly log-concave target (m > 0)");
  }
  if (pc.M < pc.m) throw ConfigError("smoothness M must be >= m");
  if (!(pc.sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
}

double noise_factor(double sigma) { return std::max(1.0, sigma * sigma); }

void finish(TunedParams& p, const Overrides& ov) {
  if (ov.b) {
    if (*ov.b < 1) throw ConfigError("override b must be >= 1");
    p.b = *ov.b;
    p.notes.push_back(fmt::format("b overridden: {} (formula {:.6g})", p.b, p.b_raw));
  }
  if (ov.nu) {
    require_positive(*ov.nu, "override nu");
    p.notes.push_back(fmt::format("nu overridden: {} (formula {:.6g})", *ov.nu, p.nu));
    p.nu = *ov.nu;
  }
  if (ov.N) {
    if (*ov.N < 0) throw ConfigError("override N must be >= 0");
    p.notes.push_back(fmt::format("N overridden: {} (formula {})", *ov.N, p.N));
    p.N = *ov.N;
  }
  p.refresh_prediction();
}

double resolve_h(double formula, const Overrides& ov, TunedParams& p) {
  if (ov.h) {
    require_positive(*ov.h, "override h");
    p.notes.push_back(fmt::format("h overridden: {} (formula {:.6g})", *ov.h, formula));
    return *ov.h;
  }
  return formula;
}

}  // namespace

double default_w2_init(const Vector& x0, const Vector& minimizer, double m) {
  require_positive(m, "m for the default W2 initial bound");
  return (x0 - minimizer).norm() + std::sqrt(static_cast<double>(x0.size()) / m);
}

TunedParams tune_zolmc(double eps, const ProblemConstants& pc, double w2_init,
                       const Overrides& ov) {
  require_strongly_convex(pc);
  require_positive(eps, "epsilon");
  require_positive(w2_init, "w2_init");
  const double d = static_cast<double>(pc.d);
  const double range_a = d * std::sqrt(2.0 / (pc.M + pc.m));
  const double range_b = std::sqrt(pc.m * (d + 5.0) / (8.0 * pc.M * pc.M));
  if (eps > range_a) {
    throw ConfigError(fmt::format("epsilon {} exceeds d*sqrt(2/(M+m)) = {:.6g}", eps, range_a));
  }
  if (eps > range_b) {
    throw ConfigError(
        fmt::format("epsilon {} exceeds sqrt(m(d+5)/(8M^2)) = {:.6g}", eps, range_b));
  }
  TunedParams p;
  p.algorithm = Algorithm::ZoLmc;
  p.regime = Regime::StronglyLogConcave;
  p.epsilon = eps;
  p.h = resolve_h(eps * eps / (d * d), ov, p);
  if (p.h > 2.0 / (pc.m + pc.M)) {
    throw ConfigError(fmt::format("step size h = {:.6g} exceeds 2/(m+M) = {:.6g}", p.h,
                                  2.0 / (pc.m + pc.M)));
  }
  p.b_raw = noise_factor(pc.sigma) * d;
  p.b = ceil_count(p.b_raw, "batch size b");
  p.nu = eps / std::sqrt(d);
  p.N = iteration_count(2.0 / (pc.m * p.h), std::log(2.0 * w2_init / eps));
  finish(p, ov);
  return p;
}

TunedParams tune_zoklmc(double eps, const ProblemConstants& pc, double w2_init,
                        const Overrides& ov) {
  require_strongly_convex(pc);
  require_positive(eps, "epsilon");
  require_positive(w2_init, "w2_init");
  const double d = static_cast<double>(pc.d);
  TunedParams p;
  p.algorithm = Algorithm::ZoKlmc;
  p.regime = Regime::StronglyLogConcave;
  p.epsilon = eps;
  const double gamma_min = std::sqrt(pc.m + pc.M);
  double gamma = gamma_min;
  if (ov.gamma) {
    if (*ov.gamma < gamma_min) {
      throw ConfigError(fmt::format("friction gamma = {} is below sqrt(m+M) = {:.6g}",
                                    *ov.gamma, gamma_min));
    }
    gamma = *ov.gamma;
    p.notes.push_back(fmt::format("gamma overridden: {}", gamma));
  }
  p.gamma = gamma;
  const double range = 12.0 * pc.M * gamma * gamma * std::sqrt(d) / (pc.m * pc.m);
  if (eps > range) {
    throw ConfigError(fmt::format("epsilon {} exceeds 12 M gamma^2 sqrt(d)/m^2 = {:.6g}",
                                  eps, range));
  }
  p.h = resolve_h(pc.m * eps / (12.0 * gamma * pc.M * std::sqrt(d)), ov, p);
  p.nu = eps / std::sqrt(d);
  p.b_raw = std::pow(d, 1.5) * noise_factor(pc.sigma) / eps;
  p.b = ceil_count(p.b_raw, "batch size b");
  p.N = iteration_count(8.0 * gamma / (pc.m * p.h),
                        std::log(2.0 * std::sqrt(2.0) * w2_init / eps));
  finish(p, ov);
  return p;
}

RmpStepBranches rmp_step_branches(double eps, const ProblemConstants& pc) {
  const double d = static_cast<double>(pc.d);
  const double kappa = pc.M / pc.m;
  const double log_factor = std::max(1.0, std::log(1.0 / eps));
  RmpStepBranches out;
  out.first = std::cbrt(eps * std::sqrt(pc.m)) /
              (std::pow(d * kappa, 1.0 / 6.0) * std::pow(log_factor, 1.0 / 6.0));
  const double noise_term = pc.sigma > 0.0
                                ? std::cbrt(pc.M * pc.m / (16.0 * pc.sigma * pc.sigma))
                                : std::numeric_limits<double>::infinity();
  const double inner = std::min({std::cbrt(pc.m / d), noise_term, std::sqrt(pc.m)});
  out.second = inner * std::pow(eps, 2.0 / 3.0) * std::pow(log_factor, -2.0 / 3.0);
  return out;
}

TunedParams tune_zormp(double eps, const ProblemConstants& pc, double C,
                       const Overrides& ov) {
  require_strongly_convex(pc);
  if (!(eps > 0.0) || eps > 1.0) {
    throw ConfigError(fmt::format("randomized midpoint tuning needs 0 < epsilon <= 1 (got {})", eps));
  }
  const double d = static_cast<double>(pc.d);
  const double kappa = pc.M / pc.m;
  TunedParams p;
  p.algorithm = Algorithm::ZoRmp;
  p.regime = Regime::StronglyLogConcave;
  p.epsilon = eps;
  if (ov.C) {
    C = *ov.C;
    p.notes.push_back(fmt::format("C overridden: {}", C));
  }
  require_positive(C, "step constant C");
  p.C = C;
  const auto branches = rmp_step_branches(eps, pc);
  p.h = resolve_h(C * std::min(branches.first, branches.second), ov, p);
  p.u_rmp = 1.0 / pc.M;
  p.b_raw = d * kappa / (p.h * p.h * p.h);
  p.b = ceil_count(p.b_raw, "batch size b");
  p.nu = *p.u_rmp * p.h * p.h / std::pow(d, 1.5);
  p.N = iteration_count(2.0 * kappa / p.h, std::log(20.0 / (eps * eps)));
  p.notes.push_back(fmt::format("step branches: first {:.6g}, second {:.6g} ({} active)",
                                branches.first, branches.second,
                                branches.first <= branches.second ? "first" : "second"));
  finish(p, ov);
  return p;
}

TunedParams tune_zolmc_lsi(double eps, const ProblemConstants& pc, double kl_init,
                           const Overrides& ov) {
  if (!pc.lambda || !(*pc.lambda > 0.0)) {
    throw ConfigError("LSI tuning needs a positive LSI constant lambda");
  }
  if (pc.d < 1) throw ConfigError("dimension d must be >= 1");
  require_positive(pc.M, "smoothness M");
  require_positive(eps, "epsilon");
  require_positive(kl_init, "kl_init");
  const double lambda = *pc.lambda;
  const double d = static_cast<double>(pc.d);
  const double range = lambda / (4.0 * pc.M * pc.M);
  if (eps > range) {
    throw ConfigError(fmt::format("epsilon {} exceeds lambda/(4 M^2) = {:.6g}", eps, range));
  }
  TunedParams p;
  p.algorithm = Algorithm::ZoLmc;
  p.regime = Regime::Lsi;
  p.epsilon = eps;
  p.notes.push_back("epsilon range read as lambda/(4 M^2)");
  p.h = resolve_h(eps * eps / d, ov, p);
  p.nu = std::sqrt(p.h) / (d + 3.0);
  p.b_raw = 384.0 * pc.M * pc.M * (d + 5.0) * noise_factor(pc.sigma) / (p.h * lambda * lambda);
  p.b = ceil_count(p.b_raw, "batch size b");
  p.N = iteration_count(1.0 / (lambda * p.h), std::log(kl_init / (eps * eps)));
  finish(p, ov);
  return p;
}

TunedParams tune_onepoint(Algorithm algorithm, Regime regime, double eps,
                          const ProblemConstants& pc, double init,
                          const Overrides& ov) {
  Overrides base = ov;
  base.b.reset();
  TunedParams p;
  const double d = static_cast<double>(pc.d);
  const double noise = noise_factor(pc.sigma);
  if (regime == Regime::Lsi) {
    if (algorithm != Algorithm::ZoLmc) {
      throw ConfigError(fmt::format("{} is not supported under the LSI regime",
                                    to_string(algorithm)));
    }
    p = tune_zolmc_lsi(eps, pc, init, base);
    p.b_raw = 384.0 * pc.M * pc.M * (d + 5.0) * noise /
              (p.h * p.h * *pc.lambda * *pc.lambda);
  } else {
    switch (algorithm) {
      case Algorithm::ZoLmc:
        p = tune_zolmc(eps, pc, init, base);
        p.b_raw = noise * d / (eps * eps);
        break;
      case Algorithm::ZoKlmc:
        p = tune_zoklmc(eps, pc, init, base);
        p.b_raw = std::pow(d, 1.5) * noise / (eps * eps * eps);
        break;
      case Algorithm::ZoRmp:
        p = tune_zormp(eps, pc, init, base);
        p.b_raw = std::pow(d, 4.0) * (pc.M / pc.m) / std::pow(p.h, 7.0);
        break;
      default:
        throw ConfigError(fmt::format("no one-point tuner for {}", to_string(algorithm)));
    }
  }
  p.feedback = Feedback::OnePoint;
  p.b = ceil_count(p.b_raw, "batch size b");
  Overrides only_b;
  only_b.b = ov.b;
  finish(p, only_b);
  return p;
}

TunedParams tune(Algorithm algorithm, Regime regime, Feedback feedback, double eps,
                 const ProblemConstants& pc, double init, const Overrides& ov) {
  if (regime == Regime::Lsi && algorithm != Algorithm::ZoLmc &&
      algorithm != Algorithm::LmcBaseline) {
    throw ConfigError(fmt::format(
        "unsupported combination: {} under the lsi regime (only LMC-type samplers have "
        "LSI guarantees; the kinetic case is an open question)",
        to_string(algorithm)));
  }
  TunedParams p;
  switch (algorithm) {
    case Algorithm::LmcBaseline:
    case Algorithm::KlmcBaseline: {
      const Algorithm zo =
          algorithm == Algorithm::LmcBaseline ? Algorithm::ZoLmc : Algorithm::ZoKlmc;
      p = tune(zo, regime, Feedback::TwoPoint, eps, pc, init, ov);
      p.algorithm = algorithm;
      p.refresh_prediction();
      return p;
    }
    default: break;
  }
  if (feedback == Feedback::OnePoint) {
    return tune_onepoint(algorithm, regime, eps, pc, init, ov);
  }
  if (regime == Regime::Lsi) return tune_zolmc_lsi(eps, pc, init, ov);
  switch (algorithm) {
    case Algorithm::ZoLmc: return tune_zolmc(eps, pc, init, ov);
    case Algorithm::ZoKlmc: return tune_zoklmc(eps, pc, init, ov);
    case Algorithm::ZoRmp: return tune_zormp(eps, pc, init, ov);
    default: break;
  }
  throw ConfigError("unreachable tuner dispatch");
}

}  // namespace zol
