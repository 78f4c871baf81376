#include "zol/select.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "zol/estimator.hpp"

namespace zol {

void SparsityModel::validate(Index d) const {
  if (s < 1 || s > d) throw ConfigError(fmt::format("sparsity s must lie in [1, {}]", d));
  if (!(a > 0.0)) throw ConfigError("signal strength a must be positive");
  if (!(R > 0.0)) throw ConfigError("gradient bound R must be positive");
}

double max_selection_nu(double a, double M, Index s) {
  return a / (2.0 * M * std::sqrt(static_cast<double>(s)));
}

double selection_threshold(double a, double M, double nu, Index s) {
  if (!(a > 0.0) || !(M > 0.0) || s < 1) {
    throw ConfigError("selection threshold needs a > 0, M > 0, s >= 1");
  }
  if (!(nu >= 0.0)) throw ConfigError("smoothing radius nu must be >= 0");
  const double limit = max_selection_nu(a, M, s);
  if (nu > limit * (1.0 + 1e-12)) {
    throw ConfigError(fmt::format(
        "nu = {} violates nu <= a/(2 M sqrt(s)) = {:.6g}", nu, limit));
  }
  return (a - M * nu * std::sqrt(static_cast<double>(s))) / 2.0;
}

double selection_constant() {
  const double ln2 = std::numbers::ln2;
  return std::sqrt(8.0 / (3.0 * ln2 * (1.0 - ln2)));
}

SampleTerms required_sample_terms(double R, Index s, double a, Index d, double err,
                                  double K1, double K2) {
  if (!(err > 0.0 && err < 1.0)) {
    throw ConfigError(fmt::format("error probability must lie in (0,1) (got {})", err));
  }
  if (!(R > 0.0) || !(a > 0.0) || s < 1 || d < 1 || !(K1 > 0.0) || !(K2 > 0.0)) {
    throw ConfigError("required_samples needs R, a, K1, K2 > 0 and s, d >= 1");
  }
  const double q = 8.0 * R * selection_constant() * std::sqrt(static_cast<double>(s)) / a;
  SampleTerms t;
  t.log_term = q * std::pow(std::log(4.0 * static_cast<double>(d) / err) / K2, 1.5);
  t.linear_term = K1 * q;
  t.quartic_term = std::pow(q, 4);
  const double n = std::max({t.log_term, t.linear_term, t.quartic_term});
  if (n > 1e15) throw ConfigError(fmt::format("required sample size {:.3g} is too large", n));
  t.n = static_cast<std::int64_t>(std::ceil(n));
  return t;
}

std::int64_t required_samples(double R, Index s, double a, Index d, double err,
                              double K1, double K2) {
  return required_sample_terms(R, s, a, d, err, K1, K2).n;
}

SelectionResult estimate_support(StochasticOracle& oracle, const Vector& theta,
                                 std::int64_t n, double nu, double tau, Rng& rng) {
  if (n < 1) throw ConfigError("support estimation needs n >= 1 probes");
  if (!(tau >= 0.0)) throw ConfigError("threshold tau must be >= 0");
  const std::int64_t before = oracle.calls();
  const SmoothingConfig cfg{nu, 1};
  Vector mean = Vector::Zero(theta.size());
  for (std::int64_t k = 0; k < n; ++k) mean += estimate_gradient(oracle, theta, cfg, rng).g;
  mean /= static_cast<double>(n);

  SelectionResult out;
  for (Index j = 0; j < mean.size(); ++j) {
    if (std::abs(mean[j]) >= tau) out.support.push_back(j);
  }
  out.gradient_estimate = std::move(mean);
  out.n_used = n;
  out.tau = tau;
  out.calls = oracle.calls() - before;
  return out;
}

// --- Restriction -----------------------------------------------------------------

namespace {

PotentialInfo restricted_info(const PotentialPtr& base, const std::vector<Index>& support,
                              const Vector& anchor) {
  if (!base) throw ConfigError("restriction needs a base potential");
  if (support.empty()) {
    throw ConfigError("selected support is empty; lower the threshold tau");
  }
  if (anchor.size() != base->dim()) throw ConfigError("anchor has the wrong dimension");
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] < 0 || support[i] >= base->dim()) {
      throw ConfigError(fmt::format("support index {} out of range", support[i]));
    }
    if (i > 0 && support[i] <= support[i - 1]) {
      throw ConfigError("support indices must be sorted and distinct");
    }
  }
  const auto& b = base->info();
  PotentialInfo info;
  info.dim = static_cast<Index>(support.size());
  info.m = b.m;
  info.M = b.M;
  info.lsi_constant = b.lsi_constant;
  if (b.minimizer) {
    Vector z(info.dim);
    for (Index i = 0; i < info.dim; ++i) z[i] = (*b.minimizer)[support[static_cast<std::size_t>(i)]];
    info.minimizer = z;
  }
  if (b.gaussian && b.true_moments) {
    // Conditional law of the selected block given the frozen coordinates.
    const Matrix precision = b.true_moments->covariance.inverse();
    const Index d = base->dim();
    std::vector<Index> rest;
    for (Index j = 0, i = 0; j < d; ++j) {
      if (i < info.dim && support[static_cast<std::size_t>(i)] == j) {
        ++i;
      } else {
        rest.push_back(j);
      }
    }
    const Matrix p_ss = precision(support, support);
    const Matrix cov = p_ss.inverse();
    Vector mean = b.true_moments->mean(support);
    if (!rest.empty()) {
      const Vector shift = anchor(rest) - b.true_moments->mean(rest);
      mean -= cov * (precision(support, rest) * shift);
    }
    info.true_moments = Moments{mean, cov};
    info.minimizer = mean;
    info.gaussian = true;
  }
  return info;
}

}  // namespace

RestrictedPotential::RestrictedPotential(PotentialPtr base, std::vector<Index> support,
                                         Vector anchor)
    : Potential(restricted_info(base, support, anchor)),
      base_(std::move(base)),
      support_(std::move(support)),
      anchor_(std::move(anchor)) {}

Vector RestrictedPotential::embed(const Vector& z) const {
  if (z.size() != dim()) throw ConfigError("restricted point has the wrong dimension");
  Vector theta = anchor_;
  theta(support_) = z;
  return theta;
}

Vector RestrictedPotential::restrict(const Vector& theta) const {
  if (theta.size() != anchor_.size()) throw ConfigError("point has the wrong dimension");
  return theta(support_);
}

double RestrictedPotential::value(const Vector& z) const { return base_->value(embed(z)); }

Vector RestrictedPotential::gradient(const Vector& z) const {
  return base_->gradient(embed(z))(support_);
}

RestrictedRun restrict_and_sample(PotentialPtr target, const std::vector<Index>& support,
                                  const Vector& anchor, Algorithm algorithm,
                                  const NoiseModel& noise, Feedback feedback,
                                  const TunedParams& params, RunOptions options,
                                  std::int64_t selection_calls) {
  RestrictedRun run;
  run.target = std::make_shared<RestrictedPotential>(std::move(target), support, anchor);
  const Vector start = options.init ? *options.init : anchor;
  options.init = run.target->restrict(start);
  run.chains = run_sampler(algorithm, run.target, noise, feedback, params, options);
  run.selection_calls = selection_calls;
  for (const auto& c : run.chains) run.sampling_calls += c.oracle_calls;
  run.total_calls = run.selection_calls + run.sampling_calls;
  return run;
}

}  // namespace zol
