#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "zol/oracle.hpp"
#include "zol/samplers.hpp"
#include "test_util.hpp"

using namespace zol;

namespace {

PotentialPtr half_norm2(Index d) {
  return make_gaussian_target(Vector::Zero(d), Matrix::Identity(d, d));
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

void check_fd_gradient(const Potential& p, const Vector& theta, double rel) {
  const Vector g = p.gradient(theta);
  const Vector fd = test::central_difference(p, theta, 1e-5);
  CHECK((g - fd).norm() <= rel * std::max(1.0, g.norm()));
}

}  // namespace

TEST_CASE("query_pair evaluates both points and counts two calls") {
  StochasticOracle o(half_norm2(2), Noiseless{}, Feedback::TwoPoint);
  Rng rng(1);
  const auto [a, b] = o.query_pair(vec({1, 0}), vec({0, 0}), rng);
  CHECK(a == doctest::Approx(0.5));
  CHECK(b == doctest::Approx(0.0));
  CHECK(o.calls() == 2);
  (void)o.query(vec({1, 1}), rng);
  CHECK(o.calls() == 3);
}

TEST_CASE("two-point additive noise cancels in the difference") {
  StochasticOracle o(half_norm2(2), AdditiveGaussian{1.0}, Feedback::TwoPoint);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto [a, b] = o.query_pair(vec({1, 0}), vec({0, 0}), rng);
    CHECK(a - b == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("one-point additive noise: difference has variance 2 sigma^2") {
  StochasticOracle o(half_norm2(2), AdditiveGaussian{1.0}, Feedback::OnePoint);
  Rng rng(3);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto [a, b] = o.query_pair(vec({1, 0}), vec({0, 0}), rng);
    const double x = a - b;
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  CHECK(var == doctest::Approx(2.0).epsilon(0.05));
  CHECK(o.calls() == 2 * n);
}

TEST_CASE("dimension mismatch is a configuration error") {
  StochasticOracle o(half_norm2(2), Noiseless{}, Feedback::TwoPoint);
  Rng rng(4);
  CHECK_THROWS_AS(o.query(vec({1, 2, 3}), rng), ConfigError);
  CHECK_THROWS_AS(o.query_pair(vec({1, 2}), vec({1}), rng), ConfigError);
}

TEST_CASE("every noise model is unbiased") {
  const auto target = make_gaussian_target(vec({0.5, -1}), Matrix::Identity(2, 2) * 2.0);
  const std::vector<NoiseModel> models = {Noiseless{}, AdditiveGaussian{1.5},
                                          Multiplicative{0.5}, GeneralLipschitz::standard(2.0)};
  Rng pick(5);
  for (const auto& model : models) {
    StochasticOracle o(target, model, Feedback::OnePoint);
    for (int t = 0; t < 5; ++t) {
      const Vector theta = pick.normal_vector(2);
      const double f = target->value(theta);
      Rng rng(100 + t);
      const int n = 1000000;
      double s1 = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = o.query(theta, rng) - f;
        s1 += x;
        s2 += x * x;
      }
      const double mean = s1 / n;
      const double se = std::sqrt(std::max(s2 / n - mean * mean, 0.0) / n);
      CHECK(std::abs(mean) <= 4.0 * se + 1e-15);
    }
  }
}

TEST_CASE("Lipschitz noise is L-Lipschitz in xi") {
  const auto noise = GeneralLipschitz::standard(3.0);
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Vector theta = rng.normal_vector(3);
    const double xi = rng.normal(), xj = rng.normal();
    const double a = apply_noise(noise, theta, 1.0, xi);
    const double b = apply_noise(noise, theta, 1.0, xj);
    CHECK(std::abs(a - b) <= 3.0 * std::abs(xi - xj) + 1e-12);
  }
}

TEST_CASE("multiplicative noise has mean one and is bounded") {
  const NoiseModel noise = Multiplicative{0.5};
  Rng rng(7);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double xi = draw_noise(noise, rng);
    CHECK(std::abs(xi - 1.0) <= 0.5 * std::sqrt(3.0) + 1e-12);
    s += xi;
  }
  CHECK(std::abs(s / n - 1.0) < 4.0 * 0.5 / std::sqrt(n));
  CHECK_THROWS_AS(StochasticOracle(half_norm2(1), Multiplicative{0.7}, Feedback::TwoPoint),
                  ConfigError);
}

TEST_CASE("gaussian target values, constants and moments") {
  const auto p = half_norm2(2);
  CHECK(p->value(vec({1, 1})) == doctest::Approx(1.0));
  CHECK(p->m() == doctest::Approx(1.0));
  CHECK(p->M() == doctest::Approx(1.0));

  Matrix prec = Matrix::Zero(2, 2);
  prec.diagonal() << 1.0, 10.0;
  CHECK(make_gaussian_target(Vector::Zero(2), prec)->condition_number() ==
        doctest::Approx(10.0));

  const auto shifted = make_gaussian_target(vec({3, 0}), Matrix::Identity(2, 2));
  CHECK(shifted->value(vec({3, 0})) == doctest::Approx(0.0));
  CHECK(shifted->gradient(vec({3, 0})).norm() == doctest::Approx(0.0));
  CHECK(shifted->info().minimizer->isApprox(vec({3, 0})));

  Matrix p2(2, 2);
  p2 << 2.0, 0.5, 0.5, 1.0;
  const auto g = make_gaussian_target(vec({1, -1}), p2);
  CHECK(g->info().true_moments->covariance.isApprox(p2.inverse(), 1e-12));
  CHECK(g->info().gaussian);
}

TEST_CASE("gaussian target rejects non-SPD precision") {
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(make_gaussian_target(Vector::Zero(2), bad), ConfigError);
  Matrix asym(2, 2);
  asym << 1.0, 0.1, 0.0, 1.0;
  CHECK_THROWS_AS(make_gaussian_target(Vector::Zero(2), asym), ConfigError);
}

TEST_CASE("gradients match finite differences; strong convexity holds") {
  Rng rng(8);
  Matrix prec(3, 3);
  prec << 3.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.0;
  const auto g = make_gaussian_target(vec({1, 2, 3}), prec);
  Matrix X(20, 3);
  Vector y(20);
  for (Index i = 0; i < 20; ++i) {
    X.row(i) = rng.normal_vector(3).transpose();
    y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  const auto lg = make_logistic_target(X, y, 0.7);
  const auto mix = make_mixture_target({0.3, 0.7}, {vec({1, 0, 0}), vec({-1, 1, 0})},
                                       {Matrix::Identity(3, 3), Matrix::Identity(3, 3) * 2.0});
  for (const auto& p : {g, lg, mix}) {
    for (int t = 0; t < 10; ++t) {
      const Vector a = rng.normal_vector(3);
      const Vector b = rng.normal_vector(3);
      check_fd_gradient(*p, a, 1e-6);
      if (p->m() > 0.0) {
        const double lhs = (p->gradient(a) - p->gradient(b)).dot(a - b);
        CHECK(lhs >= p->m() * (a - b).squaredNorm() * (1.0 - 1e-12));
      }
      // Lipschitz gradient.
      CHECK((p->gradient(a) - p->gradient(b)).norm() <= p->M() * (a - b).norm() * (1 + 1e-9));
    }
  }
}

TEST_CASE("one-component mixture matches the gaussian target") {
  const auto mix = make_mixture_target({1.0}, {Vector::Zero(2)}, {Matrix::Identity(2, 2)});
  const auto g = half_norm2(2);
  Rng rng(9);
  const double offset = mix->value(Vector::Zero(2)) - g->value(Vector::Zero(2));
  CHECK(offset == doctest::Approx(std::log(2.0 * std::numbers::pi)));
  for (int i = 0; i < 10; ++i) {
    const Vector t = rng.normal_vector(2);
    CHECK(mix->gradient(t).isApprox(g->gradient(t), 1e-12));
    CHECK(mix->value(t) - g->value(t) == doctest::Approx(offset));
  }
  CHECK(mix->info().gaussian);
}

TEST_CASE("symmetric mixture is even; smoothness bound for +-1 components") {
  const auto mix = make_mixture_target({0.5, 0.5}, {vec({1.0}), vec({-1.0})},
                                       {Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
  CHECK(mix->m() == 0.0);
  CHECK(mix->M() == doctest::Approx(2.0));
  CHECK_THROWS_AS(mix->condition_number(), ConfigError);
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const Vector t = rng.normal_vector(1) * 3.0;
    CHECK(mix->value(t) == doctest::Approx(mix->value(-t)).epsilon(1e-12));
  }
  // Here f = theta^2/2 - log cosh(theta) + const, so 0 <= f'' <= 1 and M = 2 is conservative.
  const auto& tm = *mix->info().true_moments;
  CHECK(tm.mean[0] == doctest::Approx(0.0));
  CHECK(tm.covariance(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("mixture weights must be normalised") {
  CHECK_THROWS_AS(make_mixture_target({0.5, 0.5 + 1e-10}, {vec({1}), vec({-1})},
                                      {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}),
                  ConfigError);
  CHECK_NOTHROW(make_mixture_target({0.5, 0.5 + 1e-13}, {vec({1}), vec({-1})},
                                    {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}));
}

TEST_CASE("wide mixture has mean zero under long exact-gradient LMC") {
  const auto mix = make_mixture_target({0.5, 0.5}, {vec({-2.0}), vec({2.0})},
                                       {Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
  TunedParams p;
  p.algorithm = Algorithm::LmcBaseline;
  p.h = 0.05;
  p.N = 2000;
  p.refresh_prediction();
  RunOptions opts;
  opts.n_chains = 1000;
  opts.seed = 11;
  opts.thin = 2000;
  const auto chains = run_sampler(Algorithm::LmcBaseline, mix, Noiseless{}, Feedback::TwoPoint,
                                  p, opts);
  double s1 = 0.0, s2 = 0.0;
  for (const auto& c : chains) {
    s1 += c.final_x[0];
    s2 += c.final_x[0] * c.final_x[0];
  }
  const double n = static_cast<double>(chains.size());
  const double mean = s1 / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean) <= 4.0 * se);
  CHECK(mix->info().true_moments->mean[0] == doctest::Approx(0.0));
  CHECK(mix->info().true_moments->covariance(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("logistic target") {
  Matrix X = Matrix::Zero(1, 3);
  Vector y = Vector::Zero(1);
  const auto p = make_logistic_target(X, y, 2.0);
  const Vector t = vec({0.3, -1, 2});
  CHECK(p->value(t) == doctest::Approx(std::log(2.0) + 1.0 * t.squaredNorm()));
  CHECK(p->m() == doctest::Approx(2.0));

  CHECK_THROWS_AS(make_logistic_target(Matrix(0, 3), Vector(0), 1.0), ConfigError);
  Matrix one(1, 2);
  one << 1.0, 2.0;
  const auto ok = make_logistic_target(one, Vector::Ones(1), 1.0);
  CHECK(ok->M() == doctest::Approx(1.0 + 0.25 * 5.0));
  CHECK_THROWS_AS(make_logistic_target(one, Vector::Constant(1, 0.5), 1.0), ConfigError);
}

TEST_CASE("logistic CSV ingestion") {
  const auto dir = std::filesystem::temp_directory_path() / "zol_oracle_csv";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "good.csv");
    f << "y,x1,x2\n1,0.5,-1\n0,1.5,2\n";
    std::ofstream g(dir / "bad.csv");
    g << "label,a,b\n1,0.5,-1\n";
    std::ofstream h(dir / "ragged.csv");
    h << "y,x1,x2\n1,0.5\n";
  }
  const auto [X, y] = read_logistic_csv((dir / "good.csv").string());
  CHECK(X.rows() == 2);
  CHECK(X.cols() == 2);
  CHECK(X(1, 1) == doctest::Approx(2.0));
  CHECK(y[0] == 1.0);
  CHECK_THROWS_AS(read_logistic_csv((dir / "bad.csv").string()), ConfigError);
  CHECK_THROWS_AS(read_logistic_csv((dir / "ragged.csv").string()), ConfigError);
  CHECK_THROWS_AS(read_logistic_csv((dir / "missing.csv").string()), ConfigError);
}

TEST_CASE("potential invariants are validated") {
  PotentialInfo info;
  info.dim = 1;
  info.m = 2.0;
  info.M = 1.0;
  CHECK_THROWS_AS(FunctionPotential(info, [](const Vector&) { return 0.0; }), ConfigError);
  info.m = 0.0;
  FunctionPotential noval(info, [](const Vector& x) { return x[0]; });
  CHECK_FALSE(noval.has_gradient());
  CHECK_THROWS_AS(noval.gradient(Vector::Zero(1)), DiagnosticUnavailable);
}
