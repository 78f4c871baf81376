#include "zol/estimator.hpp"

#include <cmath>

#include <fmt/core.h>

namespace zol {

void SmoothingConfig::validate() const {
  if (!(nu > 0.0) || !std::isfinite(nu)) {
    throw ConfigError(fmt::format("smoothing radius nu must be positive (got {})", nu));
  }
  if (batch < 1) throw ConfigError(fmt::format("batch size b must be >= 1 (got {})", batch));
}

GradientEstimate estimate_gradient(StochasticOracle& oracle, const Vector& theta,
                                   const SmoothingConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index d = theta.size();
  const std::int64_t before = oracle.calls();
  Vector g = Vector::Zero(d);
  Vector u(d);
  Vector probe(d);
  for (std::int64_t i = 0; i < cfg.batch; ++i) {
    rng.fill_normal(u);
    probe = theta + cfg.nu * u;
    const auto [shifted, base] = oracle.query_pair(probe, theta, rng);
    g += ((shifted - base) / cfg.nu) * u;
  }
  g /= static_cast<double>(cfg.batch);
  return {std::move(g), oracle.calls() - before};
}

GradientEstimate estimate_gradient_along(StochasticOracle& oracle,
                                         const Vector& theta, double nu,
                                         std::span<const Vector> directions,
                                         Rng& rng) {
  SmoothingConfig{nu, static_cast<std::int64_t>(directions.size())}.validate();
  const std::int64_t before = oracle.calls();
  Vector g = Vector::Zero(theta.size());
  for (const Vector& u : directions) {
    if (u.size() != theta.size()) throw ConfigError("direction has wrong dimension");
    const auto [shifted, base] = oracle.query_pair(theta + nu * u, theta, rng);
    g += ((shifted - base) / nu) * u;
  }
  g /= static_cast<double>(directions.size());
  return {std::move(g), oracle.calls() - before};
}

Vector reference_gradient(const Potential& potential, const Vector& theta,
                          const DiagnosticOptions& options) {
  if (potential.has_gradient()) return potential.gradient(theta);
  if (!options.allow_finite_difference) {
    throw DiagnosticUnavailable(
        "estimator diagnostics need an exact gradient (enable finite differences to "
        "fall back to a central difference)");
  }
  const double delta = 1e-5 * (1.0 + theta.norm());
  Vector grad(theta.size());
  Vector probe = theta;
  for (Index j = 0; j < theta.size(); ++j) {
    probe[j] = theta[j] + delta;
    const double up = potential.value(probe);
    probe[j] = theta[j] - delta;
    const double down = potential.value(probe);
    probe[j] = theta[j];
    grad[j] = (up - down) / (2.0 * delta);
  }
  return grad;
}

VarianceBounds two_point_variance_bound(Index d, double grad_norm2, double sigma,
                                        std::int64_t b, double nu, double M) {
  const double dd = static_cast<double>(d);
  const double bb = static_cast<double>(b);
  const double s2 = sigma * sigma;
  const double cube = std::pow(dd + 3.0, 3);
  VarianceBounds out;
  out.vs_f = 4.0 * (dd + 5.0) * (grad_norm2 + s2) / bb + 1.5 * nu * nu * M * M * cube;
  out.vs_f_nu = 2.0 * (dd + 5.0) * (grad_norm2 + s2) / bb + nu * nu * M * M * cube / (2.0 * bb);
  return out;
}

VarianceBounds one_point_variance_bound(Index d, double grad_norm2, double sigma,
                                        std::int64_t b, double nu, double M) {
  const double dd = static_cast<double>(d);
  const double bb = static_cast<double>(b);
  const double s2 = sigma * sigma;
  const double nu2 = nu * nu;
  const double cube = std::pow(dd + 3.0, 3);
  VarianceBounds out;
  out.vs_f = 4.0 * (dd + 5.0) * (grad_norm2 + s2 / nu2) / bb + 1.5 * nu2 * M * M * cube +
             4.0 * dd * s2 / (bb * nu2);
  out.vs_f_nu = 2.0 * (dd + 5.0) * grad_norm2 / bb + nu2 * M * M * cube / (2.0 * bb) +
                2.0 * dd * s2 / (bb * nu2);
  return out;
}

VarianceBounds variance_bound(Feedback feedback, Index d, double grad_norm2,
                              double sigma, std::int64_t b, double nu, double M) {
  return feedback == Feedback::TwoPoint
             ? two_point_variance_bound(d, grad_norm2, sigma, b, nu, M)
             : one_point_variance_bound(d, grad_norm2, sigma, b, nu, M);
}

double bias_bound(double M, double nu, Index d) {
  return M * nu * std::sqrt(static_cast<double>(d));
}

namespace {

void check_reps(std::int64_t reps) {
  if (reps < 1000) {
    throw ConfigError(fmt::format("Monte-Carlo diagnostics need reps >= 1000 (got {})", reps));
  }
}

// Running sums over repeated estimates at one point.
struct Accumulator {
  explicit Accumulator(Index d) : sum(Vector::Zero(d)), sum_sq(Vector::Zero(d)) {}
  Vector sum;
  Vector sum_sq;  // per-coordinate sum of squares of (g - grad)
};

}  // namespace

BiasReport mc_bias(StochasticOracle& oracle, const Vector& theta,
                   const SmoothingConfig& cfg, std::int64_t reps, Rng& rng,
                   const DiagnosticOptions& options) {
  check_reps(reps);
  const Vector grad = reference_gradient(oracle.potential(), theta, options);
  Accumulator acc(theta.size());
  for (std::int64_t k = 0; k < reps; ++k) {
    const Vector err = estimate_gradient(oracle, theta, cfg, rng).g - grad;
    acc.sum += err;
    acc.sum_sq += err.cwiseProduct(err);
  }
  const double n = static_cast<double>(reps);
  const Vector mean_err = acc.sum / n;
  const Vector var = (acc.sum_sq / n - mean_err.cwiseProduct(mean_err)) * (n / (n - 1.0));
  BiasReport report;
  report.bias_norm = mean_err.norm();
  report.standard_error = std::sqrt(var.sum() / n);
  report.bound = bias_bound(oracle.potential().M(), cfg.nu, theta.size());
  return report;
}

VarianceReport mc_variance(StochasticOracle& oracle, const Vector& theta,
                           const SmoothingConfig& cfg, std::int64_t reps,
                           double sigma, Rng& rng, const DiagnosticOptions& options) {
  check_reps(reps);
  const Vector grad = reference_gradient(oracle.potential(), theta, options);
  const Index d = theta.size();
  std::vector<Vector> errors;
  errors.reserve(static_cast<std::size_t>(reps));
  Vector sum = Vector::Zero(d);
  for (std::int64_t k = 0; k < reps; ++k) {
    errors.push_back(estimate_gradient(oracle, theta, cfg, rng).g - grad);
    sum += errors.back();
  }
  const double n = static_cast<double>(reps);
  const Vector mean_err = sum / n;

  double e2 = 0.0, e4 = 0.0, c2 = 0.0, c4 = 0.0;
  Vector coord_sq = Vector::Zero(d);
  for (const Vector& err : errors) {
    const double a = err.squaredNorm();
    e2 += a;
    e4 += a * a;
    const Vector centred = err - mean_err;
    const double c = centred.squaredNorm();
    c2 += c;
    c4 += c * c;
    coord_sq += centred.cwiseProduct(centred);
  }
  VarianceReport report;
  report.var_vs_f = e2 / n;
  report.standard_error = std::sqrt(std::max(0.0, e4 / n - report.var_vs_f * report.var_vs_f) / n);
  report.var_vs_f_nu_proxy = c2 / (n - 1.0);
  report.proxy_standard_error =
      std::sqrt(std::max(0.0, c4 / n - (c2 / n) * (c2 / n)) / n);
  report.bias_norm = mean_err.norm();
  report.bias_standard_error = std::sqrt(coord_sq.sum() / (n - 1.0) / n);
  report.bound = variance_bound(oracle.feedback(), d, grad.squaredNorm(), sigma,
                                cfg.batch, cfg.nu, oracle.potential().M());
  return report;
}

}  // namespace zol
