#include "zol/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/core.h>

namespace zol {

std::string to_string(Feedback feedback) {
  return feedback == Feedback::TwoPoint ? "two-point" : "one-point";
}

Feedback parse_feedback(const std::string& name) {
  if (name == "two-point") return Feedback::TwoPoint;
  if (name == "one-point") return Feedback::OnePoint;
  throw ConfigError(fmt::format("unknown feedback mode '{}'", name));
}

// --- Potential ---------------------------------------------------------------

Potential::Potential(PotentialInfo info) : info_(std::move(info)) {
  if (info_.dim < 1) throw ConfigError("potential dimension must be positive");
  if (!(info_.m >= 0.0) || !(info_.M > 0.0) || info_.M < info_.m) {
    throw ConfigError(fmt::format(
        "smoothness constants must satisfy M >= m >= 0 and M > 0 (m={}, M={})",
        info_.m, info_.M));
  }
  if (info_.lsi_constant && !(*info_.lsi_constant > 0.0)) {
    throw ConfigError("lsi_constant must be positive");
  }
}

Vector Potential::gradient(const Vector&) const {
  throw DiagnosticUnavailable("potential has no exact gradient");
}

double Potential::condition_number() const {
  if (info_.m <= 0.0) {
    throw ConfigError("condition number undefined: target is not strongly log-concave (m = 0)");
  }
  return info_.M / info_.m;
}

FunctionPotential::FunctionPotential(PotentialInfo info, ValueFn value,
                                     GradientFn gradient)
    : Potential(std::move(info)),
      value_(std::move(value)),
      gradient_(std::move(gradient)) {
  if (!value_) throw ConfigError("FunctionPotential needs a value function");
}

Vector FunctionPotential::gradient(const Vector& theta) const {
  if (!gradient_) return Potential::gradient(theta);
  return gradient_(theta);
}

namespace {

Eigen::SelfAdjointEigenSolver<Matrix> checked_spd(const Matrix& a,
                                                  const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ConfigError(fmt::format("{} must be a non-empty square matrix", what));
  }
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff())) {
    throw ConfigError(fmt::format("{} is not symmetric (max asymmetry {:.3g})",
                                  what, asym));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
    throw ConfigError(fmt::format(
        "{} is not positive definite (smallest eigenvalue {:.6g})", what,
        eig.eigenvalues().minCoeff()));
  }
  return eig;
}

PotentialInfo gaussian_info(const Vector& mean, const Matrix& precision) {
  if (mean.size() != precision.rows()) {
    throw ConfigError(fmt::format("mean has {} entries but precision is {}x{}",
                                  mean.size(), precision.rows(),
                                  precision.cols()));
  }
  auto eig = checked_spd(precision, "precision");
  PotentialInfo info;
  info.dim = mean.size();
  info.m = eig.eigenvalues().minCoeff();
  info.M = eig.eigenvalues().maxCoeff();
  info.lsi_constant = info.m;
  info.minimizer = mean;
  info.true_moments = Moments{mean, precision.inverse()};
  info.gaussian = true;
  return info;
}

}  // namespace

GaussianPotential::GaussianPotential(Vector mean, Matrix precision)
    : Potential(gaussian_info(mean, precision)),
      mean_(std::move(mean)),
      precision_(std::move(precision)) {}

double GaussianPotential::value(const Vector& theta) const {
  const Vector diff = theta - mean_;
  return 0.5 * diff.dot(precision_ * diff);
}

Vector GaussianPotential::gradient(const Vector& theta) const {
  return precision_ * (theta - mean_);
}

// --- Mixture -----------------------------------------------------------------

namespace {

PotentialInfo mixture_info(const std::vector<double>& weights,
                           const std::vector<Vector>& means,
                           const std::vector<Matrix>& covariances,
                           std::optional<double> lsi_constant) {
  if (weights.empty()) throw ConfigError("mixture needs at least one component");
  if (weights.size() != means.size() || weights.size() != covariances.size()) {
    throw ConfigError("mixture weights, means and covariances differ in length");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError(
        fmt::format("mixture weights sum to {:.17g}, expected 1", total));
  }
  const Index d = means.front().size();
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (means[k].size() != d || covariances[k].rows() != d) {
      throw ConfigError(fmt::format("mixture component {} has wrong dimension", k));
    }
    checked_spd(covariances[k], "mixture covariance");
  }
  PotentialInfo info;
  info.dim = d;
  info.m = 0.0;
  info.M = MixturePotential::smoothness_bound(means, covariances);
  info.lsi_constant = lsi_constant;
  if (means.size() == 1) {
    info.minimizer = means.front();
    info.true_moments = Moments{means.front(), covariances.front()};
    info.gaussian = true;
  } else {
    Vector mean = Vector::Zero(d);
    for (std::size_t k = 0; k < means.size(); ++k) mean += weights[k] * means[k];
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < means.size(); ++k) {
      const Vector diff = means[k] - mean;
      cov += weights[k] * (covariances[k] + diff * diff.transpose());
    }
    info.true_moments = Moments{mean, cov};
  }
  return info;
}

}  // namespace

double MixturePotential::smoothness_bound(const std::vector<Vector>& means,
                                          const std::vector<Matrix>& covariances) {
  double curvature = 0.0;
  std::vector<Vector> shifted;
  for (std::size_t k = 0; k < means.size(); ++k) {
    const Matrix precision = covariances[k].inverse();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(precision);
    curvature = std::max(curvature, eig.eigenvalues().maxCoeff());
    shifted.push_back(precision * means[k]);
  }
  double diameter2 = 0.0;
  for (std::size_t j = 0; j < shifted.size(); ++j) {
    for (std::size_t k = j + 1; k < shifted.size(); ++k) {
      diameter2 = std::max(diameter2, (shifted[j] - shifted[k]).squaredNorm());
    }
  }
  return curvature + 0.25 * diameter2;
}

MixturePotential::MixturePotential(std::vector<double> weights,
                                   std::vector<Vector> means,
                                   std::vector<Matrix> covariances,
                                   std::optional<double> lsi_constant)
    : Potential(mixture_info(weights, means, covariances, lsi_constant)) {
  const double d = static_cast<double>(means.front().size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Eigen::LLT<Matrix> llt(covariances[k]);
    const double log_det =
        2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    components_.push_back(Component{
        std::log(weights[k]), means[k], covariances[k].inverse(),
        -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det)});
  }
}

std::vector<double> MixturePotential::log_terms(const Vector& theta) const {
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (const auto& c : components_) {
    const Vector diff = theta - c.mean;
    terms.push_back(c.log_weight + c.log_norm - 0.5 * diff.dot(c.precision * diff));
  }
  return terms;
}

double MixturePotential::value(const Vector& theta) const {
  const auto terms = log_terms(theta);
  const double top = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - top);
  return -(top + std::log(sum));
}

Vector MixturePotential::gradient(const Vector& theta) const {
  const auto terms = log_terms(theta);
  const double top = *std::max_element(terms.begin(), terms.end());
  double norm = 0.0;
  for (double t : terms) norm += std::exp(t - top);
  Vector grad = Vector::Zero(theta.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const double r = std::exp(terms[k] - top) / norm;
    grad += r * (components_[k].precision * (theta - components_[k].mean));
  }
  return grad;
}

// --- Logistic ----------------------------------------------------------------

namespace {

PotentialInfo logistic_info(const Matrix& features, const Vector& labels,
                            double ridge) {
  if (features.rows() < 1) throw ConfigError("logistic target needs at least one data row");
  if (features.cols() < 1) throw ConfigError("logistic target needs at least one feature");
  if (labels.size() != features.rows()) {
    throw ConfigError("logistic labels and features differ in row count");
  }
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw ConfigError(fmt::format("label {} is {}, expected 0 or 1", i, labels[i]));
    }
  }
  if (!(ridge > 0.0)) throw ConfigError("logistic ridge must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(features.transpose() * features);
  PotentialInfo info;
  info.dim = features.cols();
  info.m = ridge;
  info.M = ridge + 0.25 * eig.eigenvalues().maxCoeff();
  info.lsi_constant = ridge;
  return info;
}

// log(1 + e^z) without overflow.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LogisticPotential::LogisticPotential(Matrix features, Vector labels, double ridge)
    : Potential(logistic_info(features, labels, ridge)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      ridge_(ridge) {}

double LogisticPotential::value(const Vector& theta) const {
  const Vector z = features_ * theta;
  double total = 0.5 * ridge_ * theta.squaredNorm();
  for (Index i = 0; i < z.size(); ++i) total += softplus(z[i]) - labels_[i] * z[i];
  return total;
}

Vector LogisticPotential::gradient(const Vector& theta) const {
  const Vector z = features_ * theta;
  Vector residual(z.size());
  for (Index i = 0; i < z.size(); ++i) residual[i] = sigmoid(z[i]) - labels_[i];
  return features_.transpose() * residual + ridge_ * theta;
}

// --- Factories -----------------------------------------------------------------

PotentialPtr make_gaussian_target(const Vector& mean, const Matrix& precision) {
  return std::make_shared<GaussianPotential>(mean, precision);
}

PotentialPtr make_mixture_target(const std::vector<double>& weights,
                                 const std::vector<Vector>& means,
                                 const std::vector<Matrix>& covariances,
                                 std::optional<double> lsi_constant) {
  return std::make_shared<MixturePotential>(weights, means, covariances,
                                            lsi_constant);
}

PotentialPtr make_logistic_target(const Matrix& features, const Vector& labels,
                                  double ridge) {
  return std::make_shared<LogisticPotential>(features, labels, ridge);
}

std::pair<Matrix, Vector> read_logistic_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open dataset '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(fmt::format("dataset '{}' is empty", path));

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "y") {
    throw ConfigError(fmt::format("dataset '{}': header must be y,x1,...,xd", path));
  }
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != fmt::format("x{}", j)) {
      throw ConfigError(fmt::format("dataset '{}': column {} is '{}', expected 'x{}'",
                                    path, j + 1, header[j], j));
    }
  }
  const std::size_t d = header.size() - 1;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \r\t", used) != std::string::npos) {
          throw std::invalid_argument(cell);
        }
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("dataset '{}' line {}: bad number '{}'", path,
                                      line_no, cell));
      }
    }
    if (row.size() != d + 1) {
      throw ConfigError(fmt::format("dataset '{}' line {}: expected {} fields, got {}",
                                    path, line_no, d + 1, row.size()));
    }
    rows.push_back(std::move(row));
  }
  Matrix features(static_cast<Index>(rows.size()), static_cast<Index>(d));
  Vector labels(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    labels[static_cast<Index>(i)] = rows[i][0];
    for (std::size_t j = 0; j < d; ++j) {
      features(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j + 1];
    }
  }
  return {features, labels};
}

// --- Noise -------------------------------------------------------------------

GeneralLipschitz GeneralLipschitz::standard(double L) {
  GeneralLipschitz noise;
  noise.L = L;
  noise.sampler = [](Rng& rng) { return rng.normal(); };
  noise.modulation = [](const Vector& theta) { return std::cos(theta.sum()); };
  return noise;
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

double draw_noise(const NoiseModel& noise, Rng& rng) {
  return std::visit(
      overloaded{
          [](const Noiseless&) { return 0.0; },
          [&](const AdditiveGaussian& n) { return n.sigma * rng.normal(); },
          [&](const Multiplicative& n) {
            return 1.0 + n.sigma_rel * std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0);
          },
          [&](const GeneralLipschitz& n) { return n.sampler(rng); },
      },
      noise);
}

double apply_noise(const NoiseModel& noise, const Vector& theta, double f_value,
                   double xi) {
  return std::visit(
      overloaded{
          [&](const Noiseless&) { return f_value; },
          [&](const AdditiveGaussian&) { return f_value + xi; },
          [&](const Multiplicative&) { return xi * f_value; },
          [&](const GeneralLipschitz& n) {
            return f_value + n.L * n.modulation(theta) * xi;
          },
      },
      noise);
}

double noise_level(const NoiseModel& noise) {
  return std::visit(overloaded{
                        [](const Noiseless&) { return 0.0; },
                        [](const AdditiveGaussian& n) { return n.sigma; },
                        [](const Multiplicative& n) { return n.sigma_rel; },
                        [](const GeneralLipschitz& n) { return n.L; },
                    },
                    noise);
}

std::string describe(const NoiseModel& noise) {
  return std::visit(
      overloaded{
          [](const Noiseless&) { return std::string("noiseless"); },
          [](const AdditiveGaussian& n) { return fmt::format("additive(sigma={})", n.sigma); },
          [](const Multiplicative& n) {
            return fmt::format("multiplicative(sigma_rel={})", n.sigma_rel);
          },
          [](const GeneralLipschitz& n) { return fmt::format("lipschitz(L={})", n.L); },
      },
      noise);
}

// --- Oracle --------------------------------------------------------------------

namespace {

void validate_noise(const NoiseModel& noise) {
  std::visit(overloaded{
                 [](const Noiseless&) {},
                 [](const AdditiveGaussian& n) {
                   if (!(n.sigma >= 0.0)) throw ConfigError("additive sigma must be >= 0");
                 },
                 [](const Multiplicative& n) {
                   if (!(n.sigma_rel >= 0.0) || n.sigma_rel > 1.0 / std::sqrt(3.0)) {
                     throw ConfigError(
                         "multiplicative sigma_rel must lie in [0, 1/sqrt(3)] so the "
                         "multiplier stays nonnegative");
                   }
                 },
                 [](const GeneralLipschitz& n) {
                   if (!(n.L > 0.0)) throw ConfigError("Lipschitz noise needs L > 0");
                   if (!n.sampler || !n.modulation) {
                     throw ConfigError("Lipschitz noise needs a sampler and a modulation");
                   }
                 },
             },
             noise);
}

}  // namespace

StochasticOracle::StochasticOracle(PotentialPtr potential, NoiseModel noise,
                                   Feedback feedback)
    : potential_(std::move(potential)), noise_(std::move(noise)), feedback_(feedback) {
  if (!potential_) throw ConfigError("oracle needs a potential");
  validate_noise(noise_);
}

void StochasticOracle::check_dim(const Vector& theta) const {
  if (theta.size() != potential_->dim()) {
    throw ConfigError(fmt::format("oracle query has dimension {}, target has {}",
                                  theta.size(), potential_->dim()));
  }
}

double StochasticOracle::query(const Vector& theta, Rng& rng) {
  check_dim(theta);
  const double xi = draw_noise(noise_, rng);
  ++calls_;
  return apply_noise(noise_, theta, potential_->value(theta), xi);
}

std::pair<double, double> StochasticOracle::query_pair(const Vector& theta_a,
                                                       const Vector& theta_b,
                                                       Rng& rng) {
  check_dim(theta_a);
  check_dim(theta_b);
  const double xi_a = draw_noise(noise_, rng);
  const double xi_b = feedback_ == Feedback::TwoPoint ? xi_a : draw_noise(noise_, rng);
  calls_ += 2;
  return {apply_noise(noise_, theta_a, potential_->value(theta_a), xi_a),
          apply_noise(noise_, theta_b, potential_->value(theta_b), xi_b)};
}

StochasticOracle StochasticOracle::fork() const {
  return StochasticOracle(potential_, noise_, feedback_);
}

}  // namespace zol
