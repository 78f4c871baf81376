#include "zol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/core.h>

namespace zol {

void validate_cloud(const SampleCloud& cloud, const char* name) {
  if (cloud.empty()) throw ConfigError(fmt::format("{} is empty", name));
  const Index d = cloud.front().size();
  if (d < 1) throw ConfigError(fmt::format("{} has zero-dimensional points", name));
  for (const auto& x : cloud) {
    if (x.size() != d) throw ConfigError(fmt::format("{} mixes dimensions", name));
    if (!x.allFinite()) throw ConfigError(fmt::format("{} has non-finite entries", name));
  }
}

Moments fit_moments(const SampleCloud& cloud) {
  validate_cloud(cloud);
  if (cloud.size() < 2) throw ConfigError("fitting moments needs at least two points");
  const Index d = cloud.front().size();
  const double n = static_cast<double>(cloud.size());
  Vector mean = Vector::Zero(d);
  for (const auto& x : cloud) mean += x;
  mean /= n;
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& x : cloud) {
    const Vector c = x - mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= (n - 1.0);
  return {mean, cov};
}

namespace {

// Value at quantile level t of sorted data (linear interpolation between
// order statistics placed at (i + 1/2)/n).
double quantile(const std::vector<double>& sorted, double t) {
  const double n = static_cast<double>(sorted.size());
  const double pos = t * n - 0.5;
  if (pos <= 0.0) return sorted.front();
  if (pos >= n - 1.0) return sorted.back();
  const auto i = static_cast<std::size_t>(pos);
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * sorted[i] + w * sorted[i + 1];
}

}  // namespace

double w2_1d_exact(std::vector<double> p, std::vector<double> q) {
  if (p.empty() || q.empty()) throw ConfigError("W2 needs nonempty clouds");
  for (double v : p) if (!std::isfinite(v)) throw ConfigError("cloud has non-finite entries");
  for (double v : q) if (!std::isfinite(v)) throw ConfigError("cloud has non-finite entries");
  std::sort(p.begin(), p.end());
  std::sort(q.begin(), q.end());
  if (p.size() != q.size()) {
    auto& small = p.size() < q.size() ? p : q;
    auto& large = p.size() < q.size() ? q : p;
    const double n = static_cast<double>(small.size());
    std::vector<double> resampled(small.size());
    for (std::size_t i = 0; i < small.size(); ++i) {
      resampled[i] = quantile(large, (static_cast<double>(i) + 0.5) / n);
    }
    large = std::move(resampled);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
  return std::sqrt(acc / static_cast<double>(p.size()));
}

double w2_1d_exact(const SampleCloud& p, const SampleCloud& q) {
  validate_cloud(p, "first cloud");
  validate_cloud(q, "second cloud");
  if (p.front().size() != 1 || q.front().size() != 1) {
    throw ConfigError("w2_1d_exact needs one-dimensional clouds");
  }
  std::vector<double> a(p.size()), b(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) a[i] = p[i][0];
  for (std::size_t i = 0; i < q.size(); ++i) b[i] = q[i][0];
  return w2_1d_exact(std::move(a), std::move(b));
}

Matrix psd_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double w2_gaussian(const Vector& mu1, const Matrix& s1, const Vector& mu2, const Matrix& s2) {
  const Index d = mu1.size();
  if (mu2.size() != d || s1.rows() != d || s1.cols() != d || s2.rows() != d ||
      s2.cols() != d) {
    throw ConfigError("Gaussian W2: mismatched dimensions");
  }
  const Matrix r2 = psd_sqrt(s2);
  const Matrix cross = psd_sqrt(r2 * s1 * r2);
  const double tr = s1.trace() + s2.trace() - 2.0 * cross.trace();
  return std::sqrt((mu1 - mu2).squaredNorm() + std::max(0.0, tr));
}

BuresResult w2_gaussian_bures_detail(const SampleCloud& p, const Vector& mu,
                                     const Matrix& sigma) {
  validate_cloud(p);
  const Index d = p.front().size();
  if (mu.size() != d || sigma.rows() != d || sigma.cols() != d) {
    throw ConfigError("reference moments do not match the cloud dimension");
  }
  if (static_cast<Index>(p.size()) < d + 1) {
    throw ConfigError(fmt::format("Bures W2 needs at least d + 1 = {} points", d + 1));
  }
  auto fitted = fit_moments(p);
  BuresResult out;
  Eigen::SelfAdjointEigenSolver<Matrix> es(fitted.covariance, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    fitted.covariance += 1e-10 * Matrix::Identity(d, d);
    out.regularized = true;
  }
  out.distance = w2_gaussian(fitted.mean, fitted.covariance, mu, sigma);
  out.fitted_mean = std::move(fitted.mean);
  out.fitted_cov = std::move(fitted.covariance);
  return out;
}

double w2_gaussian_bures(const SampleCloud& p, const Vector& mu, const Matrix& sigma) {
  return w2_gaussian_bures_detail(p, mu, sigma).distance;
}

SlicedResult sliced_w2_detail(const SampleCloud& p, const SampleCloud& q,
                              int n_projections, Rng& rng) {
  if (n_projections < 16) throw ConfigError("sliced W2 needs at least 16 projections");
  validate_cloud(p, "first cloud");
  validate_cloud(q, "second cloud");
  const Index d = p.front().size();
  if (q.front().size() != d) throw ConfigError("sliced W2: clouds differ in dimension");

  SlicedResult out;
  out.squared.reserve(static_cast<std::size_t>(n_projections));
  std::vector<double> a(p.size()), b(q.size());
  for (int k = 0; k < n_projections; ++k) {
    Vector dir = rng.normal_vector(d);
    dir.normalize();
    for (std::size_t i = 0; i < p.size(); ++i) a[i] = dir.dot(p[i]);
    for (std::size_t i = 0; i < q.size(); ++i) b[i] = dir.dot(q[i]);
    const double w = w2_1d_exact(a, b);
    out.squared.push_back(w * w);
  }
  const double n = static_cast<double>(n_projections);
  double mean = 0.0;
  for (double v : out.squared) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : out.squared) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  out.value = std::sqrt(mean);
  out.standard_error = std::sqrt(var / n);
  return out;
}

double sliced_w2(const SampleCloud& p, const SampleCloud& q, int n_projections, Rng& rng) {
  return sliced_w2_detail(p, q, n_projections, rng).value;
}

namespace {

struct CovSums {
  Vector sum;
  Matrix cross;
};

CovSums simulate_paths(const Matrix& table, double sqrt_dt, std::int64_t paths,
                       std::uint64_t seed) {
  const Index k = table.rows();
  const Index steps = table.cols();
  Rng rng(seed);
  CovSums s{Vector::Zero(k), Matrix::Zero(k, k)};
  Vector dw(steps);
  Vector integral(k);
  for (std::int64_t p = 0; p < paths; ++p) {
    for (Index j = 0; j < steps; ++j) dw[j] = sqrt_dt * rng.normal();
    integral.noalias() = table * dw;
    s.sum += integral;
    s.cross.selfadjointView<Eigen::Lower>().rankUpdate(integral);
  }
  return s;
}

}  // namespace

Matrix brownian_cov_oracle(const std::vector<Kernel>& kernels, double T,
                           std::int64_t substeps, std::int64_t paths, Rng& rng,
                           int workers) {
  if (kernels.empty()) throw ConfigError("brownian_cov_oracle needs at least one kernel");
  if (!(T > 0.0)) throw ConfigError("horizon T must be positive");
  if (substeps < 100) throw ConfigError("brownian_cov_oracle needs substeps >= 100");
  if (paths < 10000) throw ConfigError("brownian_cov_oracle needs paths >= 10^4");
  workers = std::max(1, workers);

  const Index k = static_cast<Index>(kernels.size());
  const double dt = T / static_cast<double>(substeps);
  Matrix table(k, substeps);
  for (Index i = 0; i < k; ++i) {
    for (std::int64_t j = 0; j < substeps; ++j) {
      table(i, j) = kernels[static_cast<std::size_t>(i)](static_cast<double>(j) * dt);
    }
  }

  const std::uint64_t master = rng.next_u64();
  std::vector<CovSums> parts(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      const std::int64_t share =
          paths / workers + (w < paths % workers ? 1 : 0);
      auto job = [&, w, share] {
        parts[static_cast<std::size_t>(w)] = simulate_paths(
            table, std::sqrt(dt), share, Rng::derive_seed(master, static_cast<std::uint64_t>(w)));
      };
      if (workers == 1) {
        job();
      } else {
        pool.emplace_back(job);
      }
    }
  }

  Vector sum = Vector::Zero(k);
  Matrix cross = Matrix::Zero(k, k);
  for (const auto& part : parts) {
    sum += part.sum;
    cross += part.cross;
  }
  cross = cross.selfadjointView<Eigen::Lower>();
  const double n = static_cast<double>(paths);
  const Vector mean = sum / n;
  return (cross - n * mean * mean.transpose()) / (n - 1.0);
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError("max_relative_error: shape mismatch");
  }
  const double scale = b.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (std::abs(b(i, j)) > floor * scale) {
        worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / std::abs(b(i, j)));
      }
    }
  }
  return worst;
}

}  // namespace zol
