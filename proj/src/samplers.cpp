#include "zol/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include <fmt/core.h>

namespace zol {

ZerothOrderGradient::ZerothOrderGradient(StochasticOracle& oracle, SmoothingConfig cfg)
    : oracle_(oracle), cfg_(cfg) {
  cfg_.validate();
}

Vector ZerothOrderGradient::operator()(const Vector& x, Rng& rng) {
  return estimate_gradient(oracle_, x, cfg_, rng).g;
}

ExactGradient::ExactGradient(const Potential& potential) : potential_(potential) {
  if (!potential_.has_gradient()) {
    throw ConfigError("first-order baseline needs a target with an exact gradient");
  }
}

// --- Coefficients ----------------------------------------------------------------

namespace {

// int_0^x (1 - e^{-r})^2 dr, accurate for small x.
double integral_one_minus_exp_sq(double x) {
  if (x < 1e-3) {
    const double x2 = x * x;
    return x2 * x * (1.0 / 3.0 - x / 4.0 + 7.0 * x2 / 60.0 - x2 * x / 24.0);
  }
  return x + 2.0 * std::expm1(-x) - 0.5 * std::expm1(-2.0 * x);
}

// (x + expm1(-x)), i.e. int_0^x (1 - e^{-r}) dr.
double integral_one_minus_exp(double x) {
  if (x < 1e-3) {
    const double x2 = x * x;
    return x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0);
  }
  return x + std::expm1(-x);
}

void require_step(double h) {
  if (!(h >= 0.0) || !std::isfinite(h)) {
    throw ConfigError(fmt::format("step size must be finite and nonnegative (got {})", h));
  }
}

}  // namespace

double psi(int k, double gamma, double t) {
  if (!(gamma > 0.0)) throw ConfigError("psi needs gamma > 0");
  if (!(t >= 0.0)) throw ConfigError("psi needs t >= 0");
  const double x = gamma * t;
  switch (k) {
    case 0: return std::exp(-x);
    case 1: return -std::expm1(-x) / gamma;
    case 2: return integral_one_minus_exp(x) / (gamma * gamma);
    default: throw ConfigError(fmt::format("psi index must be 0, 1 or 2 (got {})", k));
  }
}

Eigen::Matrix2d klmc_noise_cov(double gamma, double h) {
  if (!(gamma > 0.0) || !(h >= 0.0)) throw ConfigError("klmc_noise_cov needs gamma > 0, h >= 0");
  const double x = gamma * h;
  const double e1 = std::expm1(-x);
  Eigen::Matrix2d cov;
  cov(0, 0) = -std::expm1(-2.0 * x);
  cov(1, 1) = 2.0 * integral_one_minus_exp_sq(x) / (gamma * gamma);
  cov(0, 1) = cov(1, 0) = e1 * e1 / gamma;
  return cov;
}

Eigen::Matrix3d rmp_noise_cov(double h, double alpha, double u) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError(fmt::format("midpoint fraction alpha must lie in (0,1) (got {})", alpha));
  }
  if (!(h >= 0.0) || !(u > 0.0)) throw ConfigError("rmp_noise_cov needs h >= 0, u > 0");
  const double a = alpha * h;
  const double delta = h - a;
  // int_0^y (1 - e^{-2r})^2 dr
  auto g = [](double y) { return 0.5 * integral_one_minus_exp_sq(2.0 * y); };
  const double ea = std::expm1(-2.0 * a);
  const double eh = std::expm1(-2.0 * h);
  Eigen::Matrix3d cov;
  cov(0, 0) = u * g(a);
  cov(1, 1) = u * g(h);
  cov(2, 2) = -u * std::expm1(-4.0 * h);
  cov(0, 1) = cov(1, 0) = u * (g(a) - std::expm1(-2.0 * delta) * ea * ea / 4.0);
  cov(0, 2) = cov(2, 0) = u * std::exp(-2.0 * delta) * ea * ea / 2.0;
  cov(1, 2) = cov(2, 1) = u * eh * eh / 2.0;
  return cov;
}

Matrix psd_factor(const Matrix& cov) {
  const Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) {
    Matrix L = llt.matrixL();
    if (L.allFinite()) return L;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  Vector values = eig.eigenvalues();
  const double scale = std::max(values.cwiseAbs().maxCoeff(), 1e-300);
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] < 0.0) {
      if (-values[i] > 1e-12 * scale) {
        throw ConfigError(fmt::format(
            "noise covariance is not positive semidefinite (eigenvalue {:.3g})", values[i]));
      }
      values[i] = 0.0;
    }
  }
  return eig.eigenvectors() * values.cwiseSqrt().asDiagonal();
}

// --- Updates -----------------------------------------------------------------------

OverdampedState lmc_update(const OverdampedState& s, const Vector& grad, double h,
                           const Vector& noise) {
  return {s.x - h * grad + std::sqrt(2.0 * h) * noise};
}

KineticState klmc_update(const KineticState& s, const Vector& grad, double h,
                         double gamma, const Vector& noise_v, const Vector& noise_x) {
  const double p0 = psi(0, gamma, h);
  const double p1 = psi(1, gamma, h);
  const double p2 = psi(2, gamma, h);
  KineticState out;
  out.v = p0 * s.v - p1 * grad + noise_v;
  out.x = s.x + p1 * s.v - p2 * grad + noise_x;
  return out;
}

Vector rmp_midpoint(const RmpState& s, const Vector& grad_x, double h, double alpha,
                    const Vector& noise1) {
  const double a = alpha * h;
  const double vel = -0.5 * std::expm1(-2.0 * a);
  // a - (1 - e^{-2a})/2
  const double drift = 0.5 * integral_one_minus_exp(2.0 * a);
  return s.x + vel * s.v - 0.5 * s.u_rmp * drift * grad_x + noise1;
}

RmpState rmp_finish(const RmpState& s, const Vector& grad_mid, double h, double alpha,
                    const Vector& noise2, const Vector& noise3) {
  const double rest = h - alpha * h;
  RmpState out;
  out.u_rmp = s.u_rmp;
  out.x = s.x - 0.5 * std::expm1(-2.0 * h) * s.v +
          0.5 * s.u_rmp * h * std::expm1(-2.0 * rest) * grad_mid + noise2;
  out.v = std::exp(-2.0 * h) * s.v - s.u_rmp * h * std::exp(-2.0 * rest) * grad_mid + noise3;
  return out;
}

OverdampedState lmc_step(const OverdampedState& s, GradientSource& grad, double h,
                         Rng& rng) {
  require_step(h);
  const Vector g = grad(s.x, rng);
  const Vector noise = rng.normal_vector(s.x.size());
  return lmc_update(s, g, h, noise);
}

KineticState klmc_step(const KineticState& s, GradientSource& grad, double h,
                       double gamma, Rng& rng, KlmcNoise mode) {
  require_step(h);
  const Index d = s.x.size();
  const Vector g = grad(s.x, rng);
  Vector noise_v(d), noise_x(d);
  if (mode == KlmcNoise::Exact) {
    const Matrix L = psd_factor(klmc_noise_cov(gamma, h));
    for (Index j = 0; j < d; ++j) {
      const double z0 = rng.normal();
      const double z1 = rng.normal();
      noise_v[j] = L(0, 0) * z0 + L(0, 1) * z1;
      noise_x[j] = L(1, 0) * z0 + L(1, 1) * z1;
    }
  } else {
    const double scale = h > 0.0 ? std::sqrt(2.0 * gamma) : 0.0;
    for (Index j = 0; j < d; ++j) {
      noise_v[j] = scale * rng.normal();
      noise_x[j] = scale * rng.normal();
    }
  }
  return klmc_update(s, g, h, gamma, noise_v, noise_x);
}

RmpState rmp_step(const RmpState& s, GradientSource& grad, double h, Rng& rng) {
  require_step(h);
  const Index d = s.x.size();
  const double alpha = rng.uniform_open();
  const Vector g_x = grad(s.x, rng);
  Vector n1(d), n2(d), n3(d);
  if (h > 0.0) {
    const Matrix L = psd_factor(rmp_noise_cov(h, alpha, s.u_rmp));
    for (Index j = 0; j < d; ++j) {
      const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
      const Eigen::Vector3d e = L * z;
      n1[j] = e[0];
      n2[j] = e[1];
      n3[j] = e[2];
    }
  } else {
    n1.setZero();
    n2.setZero();
    n3.setZero();
  }
  const Vector mid = rmp_midpoint(s, g_x, h, alpha, n1);
  const Vector g_mid = grad(mid, rng);
  return rmp_finish(s, g_mid, h, alpha, n2, n3);
}

OverdampedState zo_lmc_step(const OverdampedState& s, StochasticOracle& oracle,
                            const SmoothingConfig& cfg, double h, Rng& rng) {
  ZerothOrderGradient grad(oracle, cfg);
  return lmc_step(s, grad, h, rng);
}

KineticState zo_klmc_step(const KineticState& s, StochasticOracle& oracle,
                          const SmoothingConfig& cfg, double h, double gamma, Rng& rng,
                          KlmcNoise mode) {
  ZerothOrderGradient grad(oracle, cfg);
  return klmc_step(s, grad, h, gamma, rng, mode);
}

RmpState zo_rmp_step(const RmpState& s, StochasticOracle& oracle,
                     const SmoothingConfig& cfg, double h, Rng& rng) {
  ZerothOrderGradient grad(oracle, cfg);
  return rmp_step(s, grad, h, rng);
}

// --- Runs ----------------------------------------------------------------------------

std::int64_t default_thin(std::int64_t N) {
  return std::max<std::int64_t>(1, N / 10000);
}

WarmStart zo_warm_start(StochasticOracle& oracle, const Vector& x0, Rng& rng) {
  const Potential& f = oracle.potential();
  const double kappa = f.condition_number();
  const double d = static_cast<double>(f.dim());
  const double eta = f.m() / (f.M() + 2.0 * f.M() * f.M() * (d + 4.0));
  const SmoothingConfig cfg{1.0 / (std::pow(d, 1.5) * kappa), 1};
  WarmStart out;
  out.iterations = static_cast<std::int64_t>(
      std::ceil(50.0 * kappa * std::ceil(std::log(d + 1.0))));
  const std::int64_t before = oracle.calls();
  out.x = x0;
  for (std::int64_t t = 0; t < out.iterations; ++t) {
    out.x -= eta * estimate_gradient(oracle, out.x, cfg, rng).g;
  }
  out.oracle_calls = oracle.calls() - before;
  return out;
}

namespace {

void check_params(Algorithm algorithm, const TunedParams& p) {
  if (p.N < 0) throw ConfigError("iteration count N must be >= 0");
  if (!(p.h > 0.0)) throw ConfigError("step size h must be positive");
  const bool zeroth = algorithm == Algorithm::ZoLmc || algorithm == Algorithm::ZoKlmc ||
                      algorithm == Algorithm::ZoRmp;
  if (zeroth) SmoothingConfig{p.nu, p.b}.validate();
  if ((algorithm == Algorithm::ZoKlmc || algorithm == Algorithm::KlmcBaseline) &&
      !(p.gamma && *p.gamma > 0.0)) {
    throw ConfigError("kinetic sampler needs a positive friction gamma");
  }
  if (algorithm == Algorithm::ZoRmp && !(p.u_rmp && *p.u_rmp > 0.0)) {
    throw ConfigError("randomized midpoint sampler needs u = 1/M");
  }
}

class ChainRecorder {
 public:
  ChainRecorder(Chain& chain, std::int64_t thin, std::int64_t N,
                const std::optional<std::chrono::steady_clock::time_point>& deadline)
      : chain_(chain), thin_(thin), N_(N), deadline_(deadline) {}

  void record(std::int64_t step, const Vector& x) {
    if (!all_finite(x)) {
      chain_.diverged_at = step;
      throw DivergenceError(
          fmt::format("non-finite state at step {} (step size too large?)", step), step);
    }
    if (step % thin_ == 0 || step == N_) {
      chain_.steps.push_back(step);
      chain_.trace.push_back(x);
    }
    if (deadline_ && (step & 255) == 0 &&
        std::chrono::steady_clock::now() > *deadline_) {
      throw BudgetExceeded(fmt::format("wall-clock budget exhausted at step {}", step));
    }
  }

 private:
  Chain& chain_;
  std::int64_t thin_;
  std::int64_t N_;
  const std::optional<std::chrono::steady_clock::time_point>& deadline_;
};

void run_chain_into(Chain& chain, Algorithm algorithm,
                    const StochasticOracle& oracle_template, const TunedParams& p,
                    const RunOptions& options, std::uint64_t chain_seed) {
  check_params(algorithm, p);
  const Index d = oracle_template.dim();
  Vector x0 = options.init ? *options.init : Vector::Zero(d);
  if (x0.size() != d) {
    throw ConfigError(fmt::format("initial point has dimension {}, target has {}",
                                  x0.size(), d));
  }
  chain = Chain{};
  chain.seed = chain_seed;
  Rng rng(chain_seed);
  StochasticOracle oracle = oracle_template.fork();
  const std::int64_t thin = options.thin > 0 ? options.thin : default_thin(p.N);
  ChainRecorder rec(chain, thin, p.N, options.deadline);
  const SmoothingConfig cfg{p.nu, p.b};

  switch (algorithm) {
    case Algorithm::ZoLmc:
    case Algorithm::LmcBaseline: {
      std::unique_ptr<GradientSource> grad;
      if (algorithm == Algorithm::ZoLmc) {
        grad = std::make_unique<ZerothOrderGradient>(oracle, cfg);
      } else {
        grad = std::make_unique<ExactGradient>(oracle.potential());
      }
      OverdampedState s{x0};
      rec.record(0, s.x);
      for (std::int64_t n = 1; n <= p.N; ++n) {
        s = lmc_step(s, *grad, p.h, rng);
        rec.record(n, s.x);
      }
      chain.final_x = s.x;
      break;
    }
    case Algorithm::ZoKlmc:
    case Algorithm::KlmcBaseline: {
      std::unique_ptr<GradientSource> grad;
      if (algorithm == Algorithm::ZoKlmc) {
        grad = std::make_unique<ZerothOrderGradient>(oracle, cfg);
      } else {
        grad = std::make_unique<ExactGradient>(oracle.potential());
      }
      KineticState s{x0, rng.normal_vector(d)};
      rec.record(0, s.x);
      for (std::int64_t n = 1; n <= p.N; ++n) {
        s = klmc_step(s, *grad, p.h, *p.gamma, rng, options.klmc_noise);
        rec.record(n, s.x);
      }
      chain.final_x = s.x;
      chain.final_v = s.v;
      break;
    }
    case Algorithm::ZoRmp: {
      if (options.rmp_warm_start) {
        const WarmStart ws = zo_warm_start(oracle, x0, rng);
        chain.warm_start_calls = ws.oracle_calls;
        x0 = ws.x;
        oracle.reset_calls();
      }
      ZerothOrderGradient grad(oracle, cfg);
      RmpState s{x0, Vector::Zero(d), *p.u_rmp};
      rec.record(0, s.x);
      for (std::int64_t n = 1; n <= p.N; ++n) {
        s = rmp_step(s, grad, p.h, rng);
        rec.record(n, s.x);
      }
      chain.final_x = s.x;
      chain.final_v = s.v;
      break;
    }
  }
  chain.oracle_calls = oracle.calls();
}

}  // namespace

Chain run_chain(Algorithm algorithm, const StochasticOracle& oracle_template,
                const TunedParams& params, const RunOptions& options,
                std::uint64_t chain_seed, Chain* partial) {
  Chain chain;
  try {
    run_chain_into(chain, algorithm, oracle_template, params, options, chain_seed);
  } catch (const DivergenceError&) {
    if (partial) *partial = std::move(chain);
    throw;
  }
  return chain;
}

std::vector<Chain> run_sampler(Algorithm algorithm, PotentialPtr target,
                               NoiseModel noise, Feedback feedback,
                               const TunedParams& params, const RunOptions& options) {
  if (options.n_chains < 1) throw ConfigError("n_chains must be >= 1");
  check_params(algorithm, params);
  const StochasticOracle oracle(std::move(target), std::move(noise), feedback);
  const auto n = static_cast<std::size_t>(options.n_chains);
  std::vector<Chain> chains(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t k = first; k < n; k += stride) {
      try {
        run_chain_into(chains[k], algorithm, oracle, params, options,
                       Rng::derive_seed(options.seed, k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.workers)), 1, n);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }

  for (std::size_t k = 0; k < n; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const DivergenceError& e) {
      throw ChainDivergence(fmt::format("chain {}: {}", k, e.what()), e.step(),
                            static_cast<std::int64_t>(k), std::move(chains));
    }
  }
  return chains;
}

std::vector<Vector> final_iterates(const std::vector<Chain>& chains) {
  std::vector<Vector> out;
  out.reserve(chains.size());
  for (const auto& c : chains) out.push_back(c.final_x);
  return out;
}

std::vector<Vector> pooled_after_burn_in(const std::vector<Chain>& chains,
                                         std::int64_t burn_in) {
  std::vector<Vector> out;
  for (const auto& c : chains) {
    if (c.steps.empty()) continue;
    const std::int64_t cut = burn_in >= 0 ? burn_in : c.steps.back() / 2;
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      if (c.steps[i] >= cut) out.push_back(c.trace[i]);
    }
  }
  return out;
}

}  // namespace zol
