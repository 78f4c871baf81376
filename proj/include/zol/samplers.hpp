#pragma once

#include <chrono>
#include <memory>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zol/core.hpp"
#include "zol/estimator.hpp"
#include "zol/oracle.hpp"
#include "zol/rng.hpp"
#include "zol/tuning.hpp"

namespace zol {

struct OverdampedState {
  Vector x;
};

// Position x and velocity v (the auxiliary variable of the kinetic diffusion).
struct KineticState {
  Vector x;
  Vector v;
};

// Position and velocity of the randomized midpoint integrator; u_rmp = 1/M.
struct RmpState {
  Vector x;
  Vector v;
  double u_rmp = 1.0;
};

// Source of drift gradients for a step: the zeroth-order estimator (counts
// oracle calls) or the exact gradient (first-order baselines).
class GradientSource {
 public:
  virtual ~GradientSource() = default;
  virtual Vector operator()(const Vector& x, Rng& rng) = 0;
  virtual std::int64_t oracle_calls() const { return 0; }
};

class ZerothOrderGradient final : public GradientSource {
 public:
  ZerothOrderGradient(StochasticOracle& oracle, SmoothingConfig cfg);
  Vector operator()(const Vector& x, Rng& rng) override;
  std::int64_t oracle_calls() const override { return oracle_.calls(); }

 private:
  StochasticOracle& oracle_;
  SmoothingConfig cfg_;
};

class ExactGradient final : public GradientSource {
 public:
  explicit ExactGradient(const Potential& potential);
  Vector operator()(const Vector& x, Rng&) override { return potential_.gradient(x); }

 private:
  const Potential& potential_;
};

// Raised when a step produces a non-finite coordinate. Carries the step index
// (1-based: the step that failed).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : std::runtime_error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// --- Exponential-kernel coefficients and exact noise covariances ---------------

// psi_0(t) = exp(-gamma t), psi_{k+1}(t) = int_0^t psi_k(s) ds, k in {0,1,2}.
double psi(int k, double gamma, double t);

// Per-coordinate covariance of (velocity noise, position noise) over one step
// of the kinetic diffusion with friction gamma:
//   ( sqrt(2 gamma) int_0^h e^{-gamma(h-s)} dW_s, sqrt(2 gamma) int_0^h psi_1(h-s) dW_s ).
Eigen::Matrix2d klmc_noise_cov(double gamma, double h);

// Per-coordinate covariance of the randomized midpoint noise triple
//   ( sqrt(u) int_0^{alpha h} (1 - e^{-2(alpha h - s)}) dB_s,
//     sqrt(u) int_0^h (1 - e^{-2(h - s)}) dB_s,
//     2 sqrt(u) int_0^h e^{-2(h - s)} dB_s )
// driven by one Brownian path.
Eigen::Matrix3d rmp_noise_cov(double h, double alpha, double u);

// Factor L with L L^T = cov: the Cholesky factor when cov is positive
// definite, else an eigen-factor with tiny negative eigenvalues (|l| < 1e-12
// relative to the largest) clipped to zero. Anything more negative fails.
Matrix psd_factor(const Matrix& cov);

// --- Steps ---------------------------------------------------------------------------

// Deterministic updates given drift gradients and pre-drawn noise. Useful on
// their own for testing the integrators.
OverdampedState lmc_update(const OverdampedState& s, const Vector& grad, double h,
                           const Vector& noise);
KineticState klmc_update(const KineticState& s, const Vector& grad, double h,
                         double gamma, const Vector& noise_v, const Vector& noise_x);
// Midpoint position given grad at x_n; then the full step given grad at the
// midpoint. Noise vectors are the three components described in rmp_noise_cov.
Vector rmp_midpoint(const RmpState& s, const Vector& grad_x, double h, double alpha,
                    const Vector& noise1);
RmpState rmp_finish(const RmpState& s, const Vector& grad_mid, double h, double alpha,
                    const Vector& noise2, const Vector& noise3);

enum class KlmcNoise {
  Exact,    // correlated Ornstein-Uhlenbeck integrals (klmc_noise_cov)
  Literal,  // independent sqrt(2 gamma) * N(0, I) for both components
};

OverdampedState lmc_step(const OverdampedState& s, GradientSource& grad, double h,
                         Rng& rng);
KineticState klmc_step(const KineticState& s, GradientSource& grad, double h,
                       double gamma, Rng& rng, KlmcNoise mode = KlmcNoise::Exact);
// Draws alpha ~ U(0,1) and the correlated noise triple.
RmpState rmp_step(const RmpState& s, GradientSource& grad, double h, Rng& rng);

OverdampedState zo_lmc_step(const OverdampedState& s, StochasticOracle& oracle,
                            const SmoothingConfig& cfg, double h, Rng& rng);
KineticState zo_klmc_step(const KineticState& s, StochasticOracle& oracle,
                          const SmoothingConfig& cfg, double h, double gamma, Rng& rng,
                          KlmcNoise mode = KlmcNoise::Exact);
RmpState zo_rmp_step(const RmpState& s, StochasticOracle& oracle,
                     const SmoothingConfig& cfg, double h, Rng& rng);

// --- Runs ------------------------------------------------------------------------------

struct Chain {
  std::vector<std::int64_t> steps;  // step index of each trace entry
  std::vector<Vector> trace;        // thinned positions, starting with x_0
  Vector final_x;
  std::optional<Vector> final_v;
  std::int64_t oracle_calls = 0;       // sampling steps only
  std::int64_t warm_start_calls = 0;   // randomized midpoint warm start
  std::uint64_t seed = 0;
  std::optional<std::int64_t> diverged_at;
};

struct RunOptions {
  std::int64_t n_chains = 1;
  std::uint64_t seed = 0;
  std::int64_t thin = 0;           // 0: max(1, N / 10^4)
  std::optional<Vector> init;      // x_0; defaults to the zero vector
  KlmcNoise klmc_noise = KlmcNoise::Exact;
  bool rmp_warm_start = true;
  int workers = 1;
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

// Raised when RunOptions::deadline passes mid-run.
class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown by run_sampler when a chain diverges; `chains` holds every chain with
// its trace up to the failure.
class ChainDivergence : public DivergenceError {
 public:
  ChainDivergence(const std::string& what, std::int64_t step, std::int64_t chain,
                  std::vector<Chain> chains)
      : DivergenceError(what, step), chain_(chain), chains_(std::move(chains)) {}
  std::int64_t chain() const { return chain_; }
  const std::vector<Chain>& chains() const { return chains_; }

 private:
  std::int64_t chain_;
  std::vector<Chain> chains_;
};

std::int64_t default_thin(std::int64_t N);

// Zeroth-order SGD warm start for the randomized midpoint sampler: iterations
// x <- x - eta g_{nu,1}(x) with eta = m / (M + 2 M^2 (d + 4)) and
// nu = 1 / (d^1.5 kappa), for 50 kappa ceil(log(d + 1)) iterations.
struct WarmStart {
  Vector x;
  std::int64_t oracle_calls = 0;
  std::int64_t iterations = 0;
};
WarmStart zo_warm_start(StochasticOracle& oracle, const Vector& x0, Rng& rng);

// One chain from a derived seed. Throws DivergenceError on non-finite state.
Chain run_chain(Algorithm algorithm, const StochasticOracle& oracle_template,
                const TunedParams& params, const RunOptions& options,
                std::uint64_t chain_seed, Chain* partial = nullptr);

// n_chains independent chains; chain k uses Rng::derive_seed(seed, k).
std::vector<Chain> run_sampler(Algorithm algorithm, PotentialPtr target,
                               NoiseModel noise, Feedback feedback,
                               const TunedParams& params, const RunOptions& options);

// Final positions of every chain.
std::vector<Vector> final_iterates(const std::vector<Chain>& chains);
// Trace entries with step >= burn_in pooled over chains (burn_in < 0: N/2).
std::vector<Vector> pooled_after_burn_in(const std::vector<Chain>& chains,
                                         std::int64_t burn_in = -1);

}  // namespace zol
