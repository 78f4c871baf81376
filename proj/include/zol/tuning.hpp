#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zol/core.hpp"

namespace zol {

enum class Algorithm { ZoLmc, ZoKlmc, ZoRmp, LmcBaseline, KlmcBaseline };
enum class Regime { StronglyLogConcave, Lsi };

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& name);
std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

// Zeroth-order oracle calls per sampler step for batch size b: 2b for ZO-LMC
// and ZO-KLMC, 4b for ZO-RMP (two estimates per step), 0 for the first-order
// baselines.
std::int64_t calls_per_step(Algorithm algorithm, std::int64_t b);

struct TunedParams {
  Algorithm algorithm = Algorithm::ZoLmc;
  Regime regime = Regime::StronglyLogConcave;
  Feedback feedback = Feedback::TwoPoint;
  double epsilon = 0.0;
  double h = 0.0;
  std::int64_t b = 1;
  double b_raw = 1.0;  // batch size before ceiling
  double nu = 0.0;
  std::optional<double> gamma;
  std::int64_t N = 1;
  std::optional<double> u_rmp;  // 1/M, randomized midpoint only
  std::optional<double> C;      // randomized midpoint step constant
  std::int64_t predicted_oracle_calls = 0;
  std::vector<std::string> notes;

  void refresh_prediction() { predicted_oracle_calls = N * calls_per_step(algorithm, b); }
};

// Problem constants the tuners need.
struct ProblemConstants {
  Index d = 1;
  double sigma = 0.0;
  double m = 0.0;
  double M = 1.0;
  std::optional<double> lambda;  // LSI constant
};

// Replaces any single tuned quantity. An overridden h feeds the formulas that
// depend on h (b, nu, N); the other overrides replace final values.
struct Overrides {
  std::optional<double> h;
  std::optional<std::int64_t> b;
  std::optional<double> nu;
  std::optional<double> gamma;
  std::optional<std::int64_t> N;
  std::optional<double> C;
};

// h = eps^2/d^2, b = ceil(max(1, sigma^2) d), nu = eps/sqrt(d),
// N = ceil((2/(m h)) ln(2 w2_init / eps)), clamped to >= 1.
TunedParams tune_zolmc(double eps, const ProblemConstants& pc, double w2_init,
                       const Overrides& ov = {});

// gamma = sqrt(m + M), h = m eps / (12 gamma M sqrt(d)), nu = eps/sqrt(d),
// b = ceil(d^1.5 max(1, sigma^2)/eps),
// N = ceil((8 gamma/(m h)) ln(2 sqrt(2) w2_init / eps)).
TunedParams tune_zoklmc(double eps, const ProblemConstants& pc, double w2_init,
                        const Overrides& ov = {});

// Step size of the randomized midpoint method,
//   h = C min( (eps sqrt(m))^(1/3) / ((d kappa)^(1/6) L^(1/6)),
//              min((m/d)^(1/3), (M m/(16 sigma^2))^(1/3), sqrt(m)) eps^(2/3) L^(-2/3) ),
// with L = max(1, ln(1/eps)). Returns both branch values (before C).
struct RmpStepBranches {
  double first = 0.0;
  double second = 0.0;
};
RmpStepBranches rmp_step_branches(double eps, const ProblemConstants& pc);

// h from rmp_step_branches, b = ceil(d kappa / h^3), nu = u h^2 / d^1.5,
// u = 1/M, N = ceil((2 kappa / h) ln(20/eps^2)).
TunedParams tune_zormp(double eps, const ProblemConstants& pc, double C = 1.0,
                       const Overrides& ov = {});

// h = eps^2/d, nu = sqrt(h)/(d+3), b = ceil(384 M^2 (d+5) max(1, sigma^2)/(h lambda^2)),
// N = ceil((1/(lambda h)) ln(kl_init / eps^2)).
TunedParams tune_zolmc_lsi(double eps, const ProblemConstants& pc, double kl_init,
                           const Overrides& ov = {});

// One-point (independent noise) variants: same h and nu as the two-point
// tuner of the algorithm/regime, batch size inflated:
//   LMC  b = max(1, sigma^2) d / eps^2
//   KLMC b = d^1.5 max(1, sigma^2) / eps^3
//   RMP  b = d^4 kappa / h^7
//   LSI  b = 384 M^2 (d+5) max(1, sigma^2) / (h^2 lambda^2)
// `init` is w2_init (LMC, KLMC), kl_init (LSI) or the step constant C (RMP).
TunedParams tune_onepoint(Algorithm algorithm, Regime regime, double eps,
                          const ProblemConstants& pc, double init,
                          const Overrides& ov = {});

// Dispatches to the tuner for (algorithm, regime, feedback). Baseline
// algorithms reuse the step size of their zeroth-order counterpart.
// Unsupported combinations (e.g. kinetic samplers under LSI) are rejected.
TunedParams tune(Algorithm algorithm, Regime regime, Feedback feedback, double eps,
                 const ProblemConstants& pc, double init, const Overrides& ov = {});

// Crude W2 upper bound |x0 - x*| + sqrt(d/m) used when no w2_init is given.
double default_w2_init(const Vector& x0, const Vector& minimizer, double m);

}  // namespace zol
