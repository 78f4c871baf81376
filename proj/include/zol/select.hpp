#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "zol/core.hpp"
#include "zol/oracle.hpp"
#include "zol/rng.hpp"
#include "zol/samplers.hpp"
#include "zol/tuning.hpp"

namespace zol {

// Sparse-gradient model: f depends on s coordinates, each with gradient
// magnitude at least a; the query point has |grad f| <= R (a caller
// obligation, not checkable through the oracle).
struct SparsityModel {
  Index s = 1;
  double a = 1.0;
  double R = 1.0;
  std::vector<Index> true_support;  // fixtures only

  void validate(Index d) const;
};

// tau = (a - M nu sqrt(s)) / 2. Requires nu <= a / (2 M sqrt(s)).
double selection_threshold(double a, double M, double nu, Index s);

// Largest admissible smoothing radius a / (2 M sqrt(s)).
double max_selection_nu(double a, double M, Index s);

// sqrt(8 / (3 log 2 (1 - log 2))), the product of the sub-Gaussian norm
// bounds of a scalar and a vector standard normal (per sqrt(d)).
double selection_constant();

// n = ceil(max( q (log(4d/err)/K2)^1.5, K1 q, q^4 )), q = 8 R C sqrt(s) / a.
struct SampleTerms {
  double log_term = 0.0;
  double linear_term = 0.0;
  double quartic_term = 0.0;
  std::int64_t n = 0;
};
SampleTerms required_sample_terms(double R, Index s, double a, Index d, double err,
                                  double K1 = 1.0, double K2 = 1.0);
std::int64_t required_samples(double R, Index s, double a, Index d, double err,
                              double K1 = 1.0, double K2 = 1.0);

struct SelectionResult {
  std::vector<Index> support;  // sorted
  Vector gradient_estimate;    // g_{nu,n}
  std::int64_t n_used = 0;
  double tau = 0.0;
  std::int64_t calls = 0;
};

// Averages n single-direction estimates g_{nu,1} at theta and keeps the
// coordinates with |g_j| >= tau. Uses 2n oracle calls.
SelectionResult estimate_support(StochasticOracle& oracle, const Vector& theta,
                                 std::int64_t n, double nu, double tau, Rng& rng);

// f restricted to the coordinates in `support`, the rest frozen at `anchor`.
class RestrictedPotential final : public Potential {
 public:
  RestrictedPotential(PotentialPtr base, std::vector<Index> support, Vector anchor);

  double value(const Vector& z) const override;
  bool has_gradient() const override { return base_->has_gradient(); }
  Vector gradient(const Vector& z) const override;

  Vector embed(const Vector& z) const;
  Vector restrict(const Vector& theta) const;
  const std::vector<Index>& support() const { return support_; }

 private:
  PotentialPtr base_;
  std::vector<Index> support_;
  Vector anchor_;
};

struct RestrictedRun {
  std::shared_ptr<const RestrictedPotential> target;
  std::vector<Chain> chains;
  std::int64_t selection_calls = 0;
  std::int64_t sampling_calls = 0;
  std::int64_t total_calls = 0;  // selection + sampling
};

// Runs `algorithm` on the restricted potential (dimension |support|). The
// initial point is the restriction of options.init (or of the anchor).
RestrictedRun restrict_and_sample(PotentialPtr target, const std::vector<Index>& support,
                                  const Vector& anchor, Algorithm algorithm,
                                  const NoiseModel& noise, Feedback feedback,
                                  const TunedParams& params, RunOptions options,
                                  std::int64_t selection_calls = 0);

}  // namespace zol
