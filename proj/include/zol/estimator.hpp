#pragma once

#include <cstdint>
#include <span>

#include "zol/core.hpp"
#include "zol/oracle.hpp"
#include "zol/rng.hpp"

namespace zol {

// Gaussian-smoothing parameters: radius nu and batch size b.
struct SmoothingConfig {
  double nu = 0.0;
  std::int64_t batch = 1;

  void validate() const;
};

struct GradientEstimate {
  Vector g;
  std::int64_t oracle_calls_used = 0;
};

// g = (1/b) sum_i [F(theta + nu u_i, xi_i) - F(theta, xi_i')] / nu * u_i with
// u_i ~ N(0, I). xi_i' = xi_i under two-point feedback. Uses 2b evaluations.
// Random draws happen in the order u_1, xi_1, u_2, xi_2, ...
GradientEstimate estimate_gradient(StochasticOracle& oracle, const Vector& theta,
                                   const SmoothingConfig& cfg, Rng& rng);

// Same estimator with caller-supplied directions (one probe per direction).
GradientEstimate estimate_gradient_along(StochasticOracle& oracle,
                                         const Vector& theta, double nu,
                                         std::span<const Vector> directions,
                                         Rng& rng);

// Reference gradient for diagnostics: the exact gradient, or, when allowed, a
// central difference of the noiseless potential with step 1e-5 (1 + |theta|).
struct DiagnosticOptions {
  bool allow_finite_difference = false;
};
Vector reference_gradient(const Potential& potential, const Vector& theta,
                          const DiagnosticOptions& options = {});

// Upper bounds on E|g - grad f|^2 (and the E|g - grad f_nu|^2 companion).
//   two-point: 4(d+5)(|grad f|^2 + s^2)/b + 1.5 nu^2 M^2 (d+3)^3
//   one-point additive: 4(d+5)(|grad f|^2 + s^2/nu^2)/b
//                       + 1.5 nu^2 M^2 (d+3)^3 + 4 d s^2 / (b nu^2)
struct VarianceBounds {
  double vs_f = 0.0;
  double vs_f_nu = 0.0;
};
VarianceBounds two_point_variance_bound(Index d, double grad_norm2, double sigma,
                                        std::int64_t b, double nu, double M);
VarianceBounds one_point_variance_bound(Index d, double grad_norm2, double sigma,
                                        std::int64_t b, double nu, double M);
VarianceBounds variance_bound(Feedback feedback, Index d, double grad_norm2,
                              double sigma, std::int64_t b, double nu, double M);

// Smoothing-bias bound M nu sqrt(d).
double bias_bound(double M, double nu, Index d);

struct BiasReport {
  double bias_norm = 0.0;       // |mean(g) - grad f(theta)|
  double standard_error = 0.0;  // SE of the mean, in norm
  double bound = 0.0;           // M nu sqrt(d)
};

// Monte-Carlo estimate of the estimator bias at theta (reps >= 1000).
BiasReport mc_bias(StochasticOracle& oracle, const Vector& theta,
                   const SmoothingConfig& cfg, std::int64_t reps, Rng& rng,
                   const DiagnosticOptions& options = {});

struct VarianceReport {
  double var_vs_f = 0.0;          // mean |g_k - grad f|^2
  double var_vs_f_nu_proxy = 0.0; // mean |g_k - mean(g)|^2, i.e. about grad f_nu
  double standard_error = 0.0;    // SE of var_vs_f
  double proxy_standard_error = 0.0;
  VarianceBounds bound;
  double bias_norm = 0.0;
  double bias_standard_error = 0.0;
};

// Monte-Carlo second moment of the estimator error at theta (reps >= 1000).
// `sigma` is the noise level plugged into the bound.
VarianceReport mc_variance(StochasticOracle& oracle, const Vector& theta,
                           const SmoothingConfig& cfg, std::int64_t reps,
                           double sigma, Rng& rng,
                           const DiagnosticOptions& options = {});

}  // namespace zol
