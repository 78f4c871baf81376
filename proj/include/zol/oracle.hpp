#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "zol/core.hpp"
#include "zol/rng.hpp"

namespace zol {

// Mean and covariance of pi ∝ exp(-f), when known in closed form.
struct Moments {
  Vector mean;
  Matrix covariance;
};

// Smoothness and reference data attached to a potential.
struct PotentialInfo {
  Index dim = 0;
  double m = 0.0;  // strong convexity
  double M = 0.0;  // gradient Lipschitz constant
  std::optional<double> lsi_constant;
  std::optional<Vector> minimizer;
  std::optional<Moments> true_moments;
  // pi is exactly Gaussian (true_moments then describe it completely).
  bool gaussian = false;
};

// Negative log-density f of a target pi ∝ exp(-f). Immutable after
// construction and safe to share between threads.
class Potential {
 public:
  explicit Potential(PotentialInfo info);
  virtual ~Potential() = default;

  virtual double value(const Vector& theta) const = 0;
  virtual bool has_gradient() const { return false; }
  // Throws DiagnosticUnavailable when has_gradient() is false.
  virtual Vector gradient(const Vector& theta) const;

  const PotentialInfo& info() const { return info_; }
  Index dim() const { return info_.dim; }
  double m() const { return info_.m; }
  double M() const { return info_.M; }
  // M / m; throws ConfigError when m == 0.
  double condition_number() const;

 private:
  PotentialInfo info_;
};

using PotentialPtr = std::shared_ptr<const Potential>;

// Potential defined by callables; used for test fixtures and restricted
// targets.
class FunctionPotential final : public Potential {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradientFn = std::function<Vector(const Vector&)>;

  FunctionPotential(PotentialInfo info, ValueFn value, GradientFn gradient = {});

  double value(const Vector& theta) const override { return value_(theta); }
  bool has_gradient() const override { return static_cast<bool>(gradient_); }
  Vector gradient(const Vector& theta) const override;

 private:
  ValueFn value_;
  GradientFn gradient_;
};

class GaussianPotential final : public Potential {
 public:
  GaussianPotential(Vector mean, Matrix precision);

  double value(const Vector& theta) const override;
  bool has_gradient() const override { return true; }
  Vector gradient(const Vector& theta) const override;

  const Vector& mean() const { return mean_; }
  const Matrix& precision() const { return precision_; }

 private:
  Vector mean_;
  Matrix precision_;
};

// f(theta) = -log sum_k w_k N(theta; mu_k, Sigma_k).
class MixturePotential final : public Potential {
 public:
  MixturePotential(std::vector<double> weights, std::vector<Vector> means,
                   std::vector<Matrix> covariances,
                   std::optional<double> lsi_constant);

  double value(const Vector& theta) const override;
  bool has_gradient() const override { return true; }
  Vector gradient(const Vector& theta) const override;

  // Conservative gradient-Lipschitz bound. The Hessian of f is
  //   sum_k r_k P_k - Cov_r(P_k (theta - mu_k)),
  // with r the component responsibilities and P_k the precisions. The first
  // term is at most max_k lambda_max(P_k); the covariance term is at most a
  // quarter of the squared diameter of {P_k mu_k}. Rigorous for equal
  // covariances; with unequal covariances the theta-dependent part of the
  // diameter is ignored.
  static double smoothness_bound(const std::vector<Vector>& means,
                                 const std::vector<Matrix>& covariances);

 private:
  struct Component {
    double log_weight;
    Vector mean;
    Matrix precision;
    double log_norm;  // -0.5 (d log 2pi + log det Sigma)
  };
  std::vector<double> log_terms(const Vector& theta) const;
  std::vector<Component> components_;
};

// Bayesian logistic regression with a Gaussian (ridge) prior.
class LogisticPotential final : public Potential {
 public:
  LogisticPotential(Matrix features, Vector labels, double ridge);

  double value(const Vector& theta) const override;
  bool has_gradient() const override { return true; }
  Vector gradient(const Vector& theta) const override;

 private:
  Matrix features_;
  Vector labels_;
  double ridge_;
};

PotentialPtr make_gaussian_target(const Vector& mean, const Matrix& precision);
PotentialPtr make_mixture_target(const std::vector<double>& weights,
                                 const std::vector<Vector>& means,
                                 const std::vector<Matrix>& covariances,
                                 std::optional<double> lsi_constant = {});
PotentialPtr make_logistic_target(const Matrix& features, const Vector& labels,
                                  double ridge);

// Reads `y,x1,...,xd` CSV (with that header) into (features, labels).
std::pair<Matrix, Vector> read_logistic_csv(const std::string& path);

// --- Noise models -----------------------------------------------------------

struct Noiseless {};

// F(theta, xi) = f(theta) + xi, xi ~ N(0, sigma^2).
struct AdditiveGaussian {
  double sigma = 0.0;
};

// F(theta, xi) = xi f(theta), xi = 1 + sigma_rel * U with U uniform on
// [-sqrt(3), sqrt(3)] (mean 0, variance 1, bounded).
struct Multiplicative {
  double sigma_rel = 0.0;
};

// F(theta, xi) = f(theta) + L * c(theta) * xi with xi drawn from `sampler`
// (mean zero) and |c| <= 1, so |F(theta, xi) - F(theta, xi')| <= L |xi - xi'|.
struct GeneralLipschitz {
  double L = 1.0;
  std::function<double(Rng&)> sampler;
  std::function<double(const Vector&)> modulation;

  // xi ~ N(0, 1), c(theta) = cos(sum_j theta_j).
  static GeneralLipschitz standard(double L);
};

using NoiseModel =
    std::variant<Noiseless, AdditiveGaussian, Multiplicative, GeneralLipschitz>;

// Draws one noise realisation xi.
double draw_noise(const NoiseModel& noise, Rng& rng);
// F(theta, xi) given f(theta).
double apply_noise(const NoiseModel& noise, const Vector& theta, double f_value,
                   double xi);
// Nominal noise level: sigma for additive, sigma_rel for multiplicative, L for
// Lipschitz, 0 for noiseless.
double noise_level(const NoiseModel& noise);
std::string describe(const NoiseModel& noise);

// Noisy zeroth-order access to a potential. Counts function evaluations.
// One instance per chain; not thread-safe.
class StochasticOracle {
 public:
  StochasticOracle(PotentialPtr potential, NoiseModel noise, Feedback feedback);

  // One evaluation F(theta, xi).
  double query(const Vector& theta, Rng& rng);

  // Two evaluations. TwoPoint shares xi between the points; OnePoint draws
  // independent xi, xi'.
  std::pair<double, double> query_pair(const Vector& theta_a,
                                       const Vector& theta_b, Rng& rng);

  std::int64_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

  // Same potential/noise/feedback with a zeroed counter.
  StochasticOracle fork() const;

  const Potential& potential() const { return *potential_; }
  const PotentialPtr& potential_ptr() const { return potential_; }
  const NoiseModel& noise() const { return noise_; }
  Feedback feedback() const { return feedback_; }
  Index dim() const { return potential_->dim(); }

 private:
  void check_dim(const Vector& theta) const;

  PotentialPtr potential_;
  NoiseModel noise_;
  Feedback feedback_;
  std::int64_t calls_ = 0;
};

}  // namespace zol
