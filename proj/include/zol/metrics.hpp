#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "zol/core.hpp"
#include "zol/oracle.hpp"
#include "zol/rng.hpp"

namespace zol {

// Uniformly weighted point cloud. Every point must be finite and of equal
// dimension; empty clouds are rejected by all metrics.
using SampleCloud = std::vector<Vector>;

void validate_cloud(const SampleCloud& cloud, const char* name = "cloud");

// Sample mean and unbiased (n - 1) covariance. Needs at least two points.
Moments fit_moments(const SampleCloud& cloud);

// Exact W2 between two one-dimensional empirical measures via the sorted
// coupling. Clouds of unequal size: the larger is resampled at the quantiles
// (i + 1/2)/n of the smaller.
double w2_1d_exact(const SampleCloud& p, const SampleCloud& q);
double w2_1d_exact(std::vector<double> p, std::vector<double> q);

// Symmetric PSD square root via eigendecomposition; eigenvalues clipped at 0.
Matrix psd_sqrt(const Matrix& a);

// W2 between N(mu1, S1) and N(mu2, S2).
double w2_gaussian(const Vector& mu1, const Matrix& s1, const Vector& mu2, const Matrix& s2);

struct BuresResult {
  double distance = 0.0;
  Vector fitted_mean;
  Matrix fitted_cov;
  bool regularized = false;  // fitted covariance was singular; 1e-10 I added
};

// Fits a Gaussian to p and returns its W2 distance to N(mu, sigma).
BuresResult w2_gaussian_bures_detail(const SampleCloud& p, const Vector& mu,
                                     const Matrix& sigma);
double w2_gaussian_bures(const SampleCloud& p, const Vector& mu, const Matrix& sigma);

struct SlicedResult {
  double value = 0.0;           // sqrt(mean of squared 1-D distances)
  double standard_error = 0.0;  // of the mean squared distance
  std::vector<double> squared;  // per projection
};

// Random unit directions from `rng`; n_projections >= 16.
SlicedResult sliced_w2_detail(const SampleCloud& p, const SampleCloud& q,
                              int n_projections, Rng& rng);
double sliced_w2(const SampleCloud& p, const SampleCloud& q, int n_projections, Rng& rng);

using Kernel = std::function<double(double)>;

// Monte-Carlo covariance of (int_0^T k_i(s) dB_s)_i, all integrals sharing
// one Brownian path per replicate. Left-point sums on a uniform grid of
// `substeps` cells. Paths are split over `workers` threads, each with its own
// stream derived from one draw of `rng`.
Matrix brownian_cov_oracle(const std::vector<Kernel>& kernels, double T,
                           std::int64_t substeps, std::int64_t paths, Rng& rng,
                           int workers = 1);

// Largest entrywise |a - b| / |b| over entries with |b| > floor * max|b|.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12);

}  // namespace zol
