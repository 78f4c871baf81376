#include "zol/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <fmt/format.h>

#include "zol/metrics.hpp"

namespace zol {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads fields of one JSON object and rejects any it was not asked about.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(fmt::format("{}: missing required field", at(key)));
    return j_.at(key);
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", at(key)));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(fmt::format("{}: must be finite", at(key)));
    return x;
  }
  std::optional<double> opt_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }
  double positive(const std::string& key) {
    const double x = number(key);
    if (!(x > 0.0)) throw ConfigError(fmt::format("{}: must be positive (got {})", at(key), x));
    return x;
  }
  std::optional<double> opt_positive(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return positive(key);
  }

  std::int64_t integer(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::floor(x) == x && std::abs(x) < 9e15) return static_cast<std::int64_t>(x);
    }
    throw ConfigError(fmt::format("{}: expected an integer", at(key)));
  }
  std::optional<std::int64_t> opt_integer(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return integer(key);
  }
  std::optional<std::int64_t> opt_positive_integer(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto v = integer(key);
    if (v < 1) throw ConfigError(fmt::format("{}: must be >= 1 (got {})", at(key), v));
    return v;
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", at(key)));
    return v.get<std::string>();
  }
  std::optional<std::string> opt_string(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return string(key);
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(fmt::format("{}: expected true or false", at(key)));
    return v.get<bool>();
  }

  Vector vector(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) {
      throw ConfigError(fmt::format("{}: expected a nonempty array of numbers", at(key)));
    }
    Vector out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) {
        throw ConfigError(fmt::format("{}[{}]: expected a number", at(key), i));
      }
      out[static_cast<Index>(i)] = v[i].get<double>();
    }
    if (!out.allFinite()) throw ConfigError(fmt::format("{}: entries must be finite", at(key)));
    return out;
  }

  Matrix matrix(const std::string& key) { return parse_matrix(raw(key), at(key)); }

  static Matrix parse_matrix(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) {
      throw ConfigError(fmt::format("{}: expected a square array of rows", where));
    }
    const auto n = static_cast<Index>(v.size());
    Matrix out(n, n);
    for (Index i = 0; i < n; ++i) {
      const json& row = v[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Index>(row.size()) != n) {
        throw ConfigError(fmt::format("{}[{}]: expected a row of length {}", where, i, n));
      }
      for (Index k = 0; k < n; ++k) {
        const json& e = row[static_cast<std::size_t>(k)];
        if (!e.is_number()) {
          throw ConfigError(fmt::format("{}[{}][{}]: expected a number", where, i, k));
        }
        out(i, k) = e.get<double>();
      }
    }
    return out;
  }

  // Throws on fields never looked at.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw ConfigError(fmt::format("{}: unknown field", at(key)));
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Matrix require_spd(const Matrix& a, const std::string& where) {
  if (!a.isApprox(a.transpose(), 1e-12)) {
    throw ConfigError(fmt::format("{}: matrix must be symmetric", where));
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw ConfigError(fmt::format("{}: matrix must be positive definite", where));
  }
  return a;
}

PotentialPtr gaussian_from(Fields& f, std::optional<Index> dim_override) {
  std::optional<Index> dim;
  if (auto d = f.opt_positive_integer("dim")) dim = static_cast<Index>(*d);
  std::optional<Vector> mean;
  if (f.has("mean")) mean = f.vector("mean");
  std::optional<Matrix> precision;
  if (f.has("precision")) precision = require_spd(f.matrix("precision"), f.at("precision"));
  if (f.has("covariance")) {
    if (precision) throw ConfigError("target: give either precision or covariance, not both");
    precision = require_spd(f.matrix("covariance"), f.at("covariance")).inverse();
  }
  const bool explicit_shape = mean || precision;
  if (!dim) {
    if (mean) dim = mean->size();
    else if (precision) dim = precision->rows();
    else throw ConfigError("target.dim: required when mean and precision are absent");
  }
  if (dim_override) {
    if (explicit_shape && *dim_override != *dim) {
      throw ConfigError("target: a dimension sweep needs an isotropic target given by dim only");
    }
    dim = dim_override;
  }
  if (mean && mean->size() != *dim) throw ConfigError("target.mean: wrong length");
  if (precision && precision->rows() != *dim) throw ConfigError("target.precision: wrong size");
  return make_gaussian_target(mean.value_or(Vector::Zero(*dim)),
                              precision.value_or(Matrix::Identity(*dim, *dim)));
}

PotentialPtr mixture_from(Fields& f) {
  const json& w = f.raw("weights");
  if (!w.is_array() || w.empty()) throw ConfigError("target.weights: expected a nonempty array");
  std::vector<double> weights;
  for (const auto& x : w) {
    if (!x.is_number()) throw ConfigError("target.weights: expected numbers");
    weights.push_back(x.get<double>());
  }
  const json& mj = f.raw("means");
  if (!mj.is_array() || mj.size() != weights.size()) {
    throw ConfigError("target.means: expected one mean per weight");
  }
  std::vector<Vector> means;
  for (std::size_t k = 0; k < mj.size(); ++k) {
    const json& m = mj[k];
    if (m.is_number()) {
      means.push_back(Vector::Constant(1, m.get<double>()));
      continue;
    }
    if (!m.is_array() || m.empty()) {
      throw ConfigError(fmt::format("target.means[{}]: expected an array of numbers", k));
    }
    Vector v(static_cast<Index>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_number()) {
        throw ConfigError(fmt::format("target.means[{}][{}]: expected a number", k, i));
      }
      v[static_cast<Index>(i)] = m[i].get<double>();
    }
    means.push_back(v);
  }
  const Index d = means.front().size();
  std::vector<Matrix> covs;
  if (f.has("covariances")) {
    const json& cj = f.raw("covariances");
    if (!cj.is_array() || cj.size() != weights.size()) {
      throw ConfigError("target.covariances: expected one covariance per weight");
    }
    for (std::size_t k = 0; k < cj.size(); ++k) {
      const std::string where = fmt::format("target.covariances[{}]", k);
      Matrix c = cj[k].is_number() ? Matrix::Constant(1, 1, cj[k].get<double>())
                                   : Fields::parse_matrix(cj[k], where);
      covs.push_back(require_spd(c, where));
    }
  } else {
    covs.assign(weights.size(), Matrix::Identity(d, d));
  }
  return make_mixture_target(weights, means, covs, f.opt_positive("lsi_constant"));
}

PotentialPtr logistic_from(Fields& f) {
  const std::string path = f.string("csv");
  const double ridge = f.opt_positive("ridge").value_or(1.0);
  auto [features, labels] = read_logistic_csv(path);
  return make_logistic_target(features, labels, ridge);
}

PotentialPtr sparse_quadratic_from(Fields& f) {
  const auto dim = f.integer("dim");
  if (dim < 1) throw ConfigError("target.dim: must be >= 1");
  const auto d = static_cast<Index>(dim);
  const double scale = f.opt_positive("scale").value_or(1.0);
  const json& sj = f.raw("support");
  if (!sj.is_array() || sj.empty()) throw ConfigError("target.support: expected indices");
  std::vector<Index> support;
  for (const auto& x : sj) {
    if (!x.is_number_integer()) throw ConfigError("target.support: expected integers");
    const auto j = x.get<std::int64_t>();
    if (j < 0 || j >= d) throw ConfigError(fmt::format("target.support: index {} out of range", j));
    support.push_back(static_cast<Index>(j));
  }
  std::sort(support.begin(), support.end());
  if (std::adjacent_find(support.begin(), support.end()) != support.end()) {
    throw ConfigError("target.support: duplicate index");
  }
  PotentialInfo info;
  info.dim = d;
  info.m = 0.0;
  info.M = 2.0 * scale;
  info.minimizer = Vector::Zero(d);
  auto value = [support, scale](const Vector& x) {
    double acc = 0.0;
    for (Index j : support) acc += x[j] * x[j];
    return scale * acc;
  };
  auto gradient = [support, scale, d](const Vector& x) {
    Vector g = Vector::Zero(d);
    for (Index j : support) g[j] = 2.0 * scale * x[j];
    return g;
  };
  return std::make_shared<FunctionPotential>(std::move(info), value, gradient);
}

TargetConfig parse_target(const json& j) {
  Fields f(j, "target");
  TargetConfig t;
  t.kind = f.string("kind");
  t.params = j;
  // Build once to validate the fields.
  (void)build_target(t);
  return t;
}

NoiseConfig parse_noise(const json& j) {
  Fields f(j, "noise");
  NoiseConfig n;
  n.kind = f.string("kind");
  if (n.kind == "none") {
    n.level = 0.0;
  } else if (n.kind == "additive") {
    n.level = f.number("sigma");
    if (n.level < 0.0) throw ConfigError("noise.sigma: must be >= 0");
  } else if (n.kind == "multiplicative") {
    n.level = f.number("sigma_rel");
    if (n.level < 0.0 || n.level > 1.0 / std::sqrt(3.0)) {
      throw ConfigError("noise.sigma_rel: must lie in [0, 1/sqrt(3)]");
    }
  } else if (n.kind == "lipschitz") {
    n.level = f.positive("L");
  } else {
    throw ConfigError(fmt::format(
        "noise.kind: unknown kind '{}' (none, additive, multiplicative, lipschitz)", n.kind));
  }
  f.finish();
  return n;
}

Overrides parse_overrides(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "overrides");
  Overrides o;
  o.h = f.opt_positive("h");
  o.b = f.opt_positive_integer("b");
  if (f.has("nu")) {
    const double nu = f.number("nu");
    if (nu < 0.0) throw ConfigError("overrides.nu: must be >= 0");
    o.nu = nu;
  }
  o.gamma = f.opt_positive("gamma");
  if (auto N = f.opt_integer("N")) {
    if (*N < 0) throw ConfigError("overrides.N: must be >= 0");
    o.N = *N;
  }
  o.C = f.opt_positive("C");
  cfg.K1 = f.opt_positive("K1");
  cfg.K2 = f.opt_positive("K2");
  f.finish();
  return o;
}

SweepConfig parse_sweep(const json& j) {
  Fields f(j, "sweep");
  SweepConfig s;
  if (f.has("dims")) {
    const json& d = f.raw("dims");
    if (!d.is_array()) throw ConfigError("sweep.dims: expected an array");
    for (const auto& x : d) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1) {
        throw ConfigError("sweep.dims: expected positive integers");
      }
      s.dims.push_back(static_cast<Index>(x.get<std::int64_t>()));
    }
  }
  if (f.has("epsilons")) {
    const json& e = f.raw("epsilons");
    if (!e.is_array()) throw ConfigError("sweep.epsilons: expected an array");
    for (const auto& x : e) {
      if (!x.is_number() || !(x.get<double>() > 0.0)) {
        throw ConfigError("sweep.epsilons: expected positive numbers");
      }
      s.epsilons.push_back(x.get<double>());
    }
  }
  s.simulate = f.boolean("simulate", true);
  if (auto n = f.opt_positive_integer("n_chains")) s.n_chains = *n;
  f.finish();
  return s;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  Fields f(j, "");
  ExperimentConfig cfg;
  const auto version = f.integer("schema_version");
  if (version != kSchemaVersion) {
    throw ConfigError(fmt::format("schema_version: unsupported version {} (expected {})",
                                  version, kSchemaVersion));
  }
  cfg.target = parse_target(f.raw("target"));
  if (f.has("noise")) cfg.noise = parse_noise(f.raw("noise"));
  try {
    if (auto s = f.opt_string("feedback")) cfg.feedback = parse_feedback(*s);
    if (auto s = f.opt_string("algorithm")) cfg.algorithm = parse_algorithm(*s);
    if (auto s = f.opt_string("regime")) cfg.regime = parse_regime(*s);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
  if (f.has("epsilon")) cfg.epsilon = f.positive("epsilon");
  if (f.has("init")) cfg.init = f.vector("init");
  cfg.w2_init = f.opt_positive("w2_init");
  cfg.kl_init = f.opt_positive("kl_init");
  cfg.lambda = f.opt_positive("lambda");
  if (f.has("overrides")) cfg.overrides = parse_overrides(f.raw("overrides"), cfg);
  if (auto n = f.opt_positive_integer("n_chains")) cfg.n_chains = *n;
  if (auto s = f.opt_integer("seed")) {
    if (*s < 0) throw ConfigError("seed: must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(*s);
  }
  if (auto t = f.opt_integer("thin")) {
    if (*t < 0) throw ConfigError("thin: must be >= 0");
    cfg.thin = *t;
  }
  if (auto k = f.opt_string("klmc_noise")) {
    if (*k == "exact") cfg.klmc_noise = KlmcNoise::Exact;
    else if (*k == "literal") cfg.klmc_noise = KlmcNoise::Literal;
    else throw ConfigError("klmc_noise: expected 'exact' or 'literal'");
  }
  cfg.rmp_warm_start = f.boolean("rmp_warm_start", true);
  if (auto o = f.opt_string("output_dir")) cfg.output_dir = *o;
  if (f.has("budget")) {
    Fields b(f.raw("budget"), "budget");
    cfg.budget.max_oracle_calls = b.opt_positive_integer("max_oracle_calls");
    cfg.budget.max_wall_seconds = b.opt_positive("max_wall_seconds");
    b.finish();
  }
  if (f.has("check")) {
    Fields c(f.raw("check"), "check");
    cfg.check_max_w2 = c.opt_positive("max_w2");
    c.finish();
  }
  if (auto w = f.opt_positive_integer("workers")) cfg.workers = static_cast<int>(*w);
  if (f.has("sweep")) cfg.sweep = parse_sweep(f.raw("sweep"));
  f.finish();

  const Index d = build_target(cfg.target)->dim();
  if (cfg.init && cfg.init->size() != d) {
    throw ConfigError(fmt::format("init: expected {} entries, got {}", d, cfg.init->size()));
  }
  if (cfg.regime == Regime::Lsi && cfg.algorithm != Algorithm::ZoLmc &&
      cfg.algorithm != Algorithm::LmcBaseline) {
    throw ConfigError(fmt::format(
        "algorithm/regime: unsupported combination {} + lsi (no LSI guarantee exists for "
        "this sampler; the kinetic case is an open question)",
        to_string(cfg.algorithm)));
  }
  cfg.source = j;
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
  if (j.is_object() && j.contains("manifest_version")) {
    if (!j.contains("config")) throw ConfigError("manifest: missing config");
    const std::string expected = j.value("config_hash", "");
    if (!expected.empty() && config_hash(j.at("config")) != expected) {
      throw ConfigError("manifest: config_hash does not match the embedded config");
    }
    return parse_config(j.at("config"));
  }
  return parse_config(j);
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

PotentialPtr build_target(const TargetConfig& target) {
  Fields f(target.params, "target");
  f.string("kind");
  PotentialPtr p;
  if (target.kind == "gaussian") p = gaussian_from(f, std::nullopt);
  else if (target.kind == "mixture") p = mixture_from(f);
  else if (target.kind == "logistic") p = logistic_from(f);
  else if (target.kind == "sparse_quadratic") p = sparse_quadratic_from(f);
  else {
    throw ConfigError(fmt::format(
        "target.kind: unknown kind '{}' (gaussian, mixture, logistic, sparse_quadratic)",
        target.kind));
  }
  f.finish();
  return p;
}

PotentialPtr build_target(const TargetConfig& target, Index dim_override) {
  if (target.kind != "gaussian") {
    throw ConfigError("target: dimension sweeps need a gaussian target");
  }
  Fields f(target.params, "target");
  f.string("kind");
  auto p = gaussian_from(f, dim_override);
  f.finish();
  return p;
}

NoiseModel build_noise(const NoiseConfig& noise) {
  if (noise.kind == "none") return Noiseless{};
  if (noise.kind == "additive") return AdditiveGaussian{noise.level};
  if (noise.kind == "multiplicative") return Multiplicative{noise.level};
  if (noise.kind == "lipschitz") return GeneralLipschitz::standard(noise.level);
  throw ConfigError(fmt::format("noise.kind: unknown kind '{}'", noise.kind));
}

int resolve_workers(const std::optional<int>& configured) {
  if (configured) return std::max(1, *configured);
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    throw ConfigError(fmt::format("{}: expected a positive integer, got '{}'", kWorkersEnv, env));
  }
  return 1;
}

TunedParams tune_for(const ExperimentConfig& cfg, const Potential& target) {
  ProblemConstants pc;
  pc.d = target.dim();
  pc.sigma = noise_level(build_noise(cfg.noise));
  pc.m = target.m();
  pc.M = target.M();
  pc.lambda = cfg.lambda ? cfg.lambda : target.info().lsi_constant;

  double init = 0.0;
  if (cfg.regime == Regime::Lsi) {
    if (!cfg.kl_init) throw ConfigError("kl_init: required for the lsi regime");
    init = *cfg.kl_init;
  } else if (cfg.algorithm == Algorithm::ZoRmp) {
    init = cfg.overrides.C.value_or(1.0);
  } else if (cfg.w2_init) {
    init = *cfg.w2_init;
  } else {
    if (!target.info().minimizer || !(target.m() > 0.0)) {
      throw ConfigError("w2_init: required when the target has no known minimizer or m = 0");
    }
    const Vector x0 = cfg.init.value_or(Vector::Zero(target.dim()));
    init = default_w2_init(x0, *target.info().minimizer, target.m());
  }
  return tune(cfg.algorithm, cfg.regime, cfg.feedback, cfg.epsilon, pc, init, cfg.overrides);
}

json params_to_json(const TunedParams& p) {
  json j;
  j["algorithm"] = to_string(p.algorithm);
  j["regime"] = to_string(p.regime);
  j["feedback"] = to_string(p.feedback);
  j["epsilon"] = p.epsilon;
  j["h"] = p.h;
  j["b"] = p.b;
  j["b_raw"] = p.b_raw;
  j["nu"] = p.nu;
  j["gamma"] = p.gamma ? json(*p.gamma) : json(nullptr);
  j["N"] = p.N;
  j["u_rmp"] = p.u_rmp ? json(*p.u_rmp) : json(nullptr);
  j["C"] = p.C ? json(*p.C) : json(nullptr);
  j["calls_per_step"] = calls_per_step(p.algorithm, p.b);
  j["predicted_oracle_calls"] = p.predicted_oracle_calls;
  j["notes"] = p.notes;
  return j;
}

void write_trace_csv(const fs::path& path, const std::vector<Chain>& chains) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  Index d = 0;
  for (const auto& c : chains) {
    if (!c.trace.empty()) {
      d = c.trace.front().size();
      break;
    }
  }
  std::string line = "chain,step";
  for (Index i = 1; i <= d; ++i) line += fmt::format(",x{}", i);
  out << line << '\n';
  for (std::size_t k = 0; k < chains.size(); ++k) {
    const auto& c = chains[k];
    for (std::size_t t = 0; t < c.trace.size(); ++t) {
      line = fmt::format("{},{}", k, c.steps[t]);
      for (Index i = 0; i < c.trace[t].size(); ++i) line += fmt::format(",{:.17g}", c.trace[t][i]);
      out << line << '\n';
    }
  }
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

json chains_sidecar(const std::vector<Chain>& chains, const TunedParams& p,
                    const ExperimentConfig& cfg) {
  json j;
  j["params"] = params_to_json(p);
  j["master_seed"] = cfg.seed;
  json list = json::array();
  for (std::size_t k = 0; k < chains.size(); ++k) {
    const auto& c = chains[k];
    list.push_back({{"chain", k},
                    {"seed", c.seed},
                    {"oracle_calls", c.oracle_calls},
                    {"warm_start_calls", c.warm_start_calls},
                    {"recorded", c.trace.size()},
                    {"diverged_at", c.diverged_at ? json(*c.diverged_at) : json(nullptr)}});
  }
  j["chains"] = list;
  return j;
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

std::int64_t predicted_warm_start_calls(const Potential& target) {
  // Mirrors zo_warm_start: 50 kappa ceil(log(d + 1)) iterations, 2 calls each.
  const double kappa = target.condition_number();
  const double iters = std::ceil(50.0 * kappa * std::ceil(std::log(target.dim() + 1.0)));
  return 2 * static_cast<std::int64_t>(iters);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, bool check) {
  const auto start = std::chrono::steady_clock::now();
  const PotentialPtr target = build_target(cfg.target);
  RunResult result;
  result.params = tune_for(cfg, *target);
  result.output_dir = cfg.output_dir;
  const TunedParams& p = result.params;

  double threshold = 0.0;
  if (check) {
    if (!target->info().true_moments) {
      throw ConfigError("check: needs a target with closed-form moments");
    }
    threshold = cfg.check_max_w2.value_or(2.0 * cfg.epsilon);
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw ConfigError(fmt::format("output_dir: cannot create {}: {}", cfg.output_dir, ec.message()));
  const fs::path dir(cfg.output_dir);

  json manifest;
  manifest["manifest_version"] = 1;
  manifest["config"] = cfg.source;
  manifest["config_hash"] = config_hash(cfg.source);
  manifest["seed"] = cfg.seed;
  write_json(dir / "manifest.json", manifest);

  json summary;
  summary["config_hash"] = manifest["config_hash"];
  summary["params"] = params_to_json(p);
  summary["n_chains"] = cfg.n_chains;
  summary["seed"] = cfg.seed;

  const bool uses_warm_start = cfg.algorithm == Algorithm::ZoRmp && cfg.rmp_warm_start;
  const std::int64_t predicted_total =
      cfg.n_chains * (p.predicted_oracle_calls +
                      (uses_warm_start ? predicted_warm_start_calls(*target) : 0));
  summary["predicted_total_oracle_calls"] = predicted_total;

  auto finish = [&](RunStatus status, const std::string& name, const std::string& message) {
    result.status = status;
    result.message = message;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    summary["status"] = name;
    summary["message"] = message;
    summary["wall_seconds"] = result.wall_seconds;
    write_json(dir / "summary.json", summary);
    return result;
  };

  if (cfg.budget.max_oracle_calls && predicted_total > *cfg.budget.max_oracle_calls) {
    return finish(RunStatus::BudgetExhausted, "budget_exhausted",
                  fmt::format("predicted oracle calls {} exceed budget.max_oracle_calls {}",
                              predicted_total, *cfg.budget.max_oracle_calls));
  }

  RunOptions opts;
  opts.n_chains = cfg.n_chains;
  opts.seed = cfg.seed;
  opts.thin = cfg.thin;
  opts.init = cfg.init;
  opts.klmc_noise = cfg.klmc_noise;
  opts.rmp_warm_start = cfg.rmp_warm_start;
  opts.workers = resolve_workers(cfg.workers);
  if (cfg.budget.max_wall_seconds) {
    opts.deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                std::chrono::duration<double>(*cfg.budget.max_wall_seconds));
  }

  std::vector<Chain> chains;
  try {
    chains = run_sampler(cfg.algorithm, target, build_noise(cfg.noise), cfg.feedback, p, opts);
  } catch (const ChainDivergence& e) {
    write_trace_csv(dir / "trace.csv", e.chains());
    write_json(dir / "trace.json", chains_sidecar(e.chains(), p, cfg));
    summary["diverged_chain"] = e.chain();
    summary["diverged_at_step"] = e.step();
    return finish(RunStatus::Diverged, "diverged", e.what());
  } catch (const BudgetExceeded& e) {
    return finish(RunStatus::BudgetExhausted, "budget_exhausted", e.what());
  }

  write_trace_csv(dir / "trace.csv", chains);
  write_json(dir / "trace.json", chains_sidecar(chains, p, cfg));

  for (const auto& c : chains) {
    result.oracle_calls += c.oracle_calls;
    result.warm_start_calls += c.warm_start_calls;
  }
  summary["oracle_calls"] = result.oracle_calls;
  summary["oracle_calls_per_chain"] = chains.front().oracle_calls;
  summary["warm_start_oracle_calls"] = result.warm_start_calls;

  json diag;
  const auto& info = target->info();
  const auto finals = final_iterates(chains);
  if (info.true_moments && static_cast<Index>(finals.size()) >= target->dim() + 1) {
    const auto bures = w2_gaussian_bures_detail(finals, info.true_moments->mean,
                                                info.true_moments->covariance);
    result.w2 = bures.distance;
    diag["bures_w2_final"] = bures.distance;
    diag["bures_regularized"] = bures.regularized;
    diag["exact_for_target"] = info.gaussian;
    diag["fitted_mean"] = vector_json(bures.fitted_mean);
    diag["fitted_cov"] = matrix_json(bures.fitted_cov);
    diag["true_mean"] = vector_json(info.true_moments->mean);
    diag["true_cov"] = matrix_json(info.true_moments->covariance);
  } else {
    diag["bures_w2_final"] = nullptr;
    diag["reason"] = info.true_moments ? "fewer than d + 1 chains" : "no closed-form moments";
  }
  summary["w2_diagnostics"] = diag;

  if (check) {
    summary["check"] = {{"max_w2", threshold}, {"w2", result.w2 ? json(*result.w2) : json(nullptr)}};
    if (!result.w2) {
      return finish(RunStatus::CheckFailed, "check_failed",
                    "check: W2 unavailable (need at least d + 1 chains)");
    }
    if (*result.w2 > threshold) {
      return finish(RunStatus::CheckFailed, "check_failed",
                    fmt::format("check: Bures W2 {:.4g} exceeds {:.4g}", *result.w2, threshold));
    }
  }
  return finish(RunStatus::Ok, "ok", "");
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("slope fit needs at least two matching points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ConfigError("slope fit needs positive data");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ConfigError("slope fit needs distinct x values");
  return sxy / sxx;
}

namespace {

// First recorded step at which the cross-chain Bures W2 is <= eps.
std::optional<std::int64_t> first_hit(const std::vector<Chain>& chains, const Moments& truth,
                                      double eps, double* final_w2) {
  const std::size_t T = chains.front().trace.size();
  std::optional<std::int64_t> hit;
  for (std::size_t t = 0; t < T; ++t) {
    SampleCloud cloud;
    cloud.reserve(chains.size());
    for (const auto& c : chains) cloud.push_back(c.trace[t]);
    const double w = w2_gaussian_bures(cloud, truth.mean, truth.covariance);
    if (!hit && w <= eps) hit = chains.front().steps[t];
    if (t + 1 == T && final_w2) *final_w2 = w;
  }
  return hit;
}

}  // namespace

SweepReport benchmark_sweep(const ExperimentConfig& cfg) {
  if (!cfg.sweep) throw ConfigError("sweep: missing (benchmark needs a sweep grid)");
  const SweepConfig& s = *cfg.sweep;
  std::vector<Index> dims = s.dims;
  std::vector<double> epsilons = s.epsilons;
  if (dims.empty() && epsilons.empty()) {
    throw ConfigError("sweep: empty grid (give dims and/or epsilons)");
  }
  if (dims.empty()) dims.push_back(build_target(cfg.target)->dim());
  if (epsilons.empty()) epsilons.push_back(cfg.epsilon);

  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError(fmt::format("output_dir: cannot create {}", cfg.output_dir));

  SweepReport report;
  const int workers = resolve_workers(cfg.workers);
  for (Index d : dims) {
    const PotentialPtr target = build_target(cfg.target, d);
    for (double eps : epsilons) {
      SweepRow row;
      row.d = d;
      row.epsilon = eps;
      ExperimentConfig point = cfg;
      point.epsilon = eps;
      if (point.init && point.init->size() != d) point.init.reset();
      try {
        row.params = tune_for(point, *target);
      } catch (const ConfigError& e) {
        row.status = fmt::format("tune_error: {}", e.what());
        report.rows.push_back(row);
        continue;
      }
      if (s.simulate) {
        const std::int64_t total = s.n_chains * row.params.predicted_oracle_calls;
        if (cfg.budget.max_oracle_calls && total > *cfg.budget.max_oracle_calls) {
          row.status = "skipped_budget";
          report.rows.push_back(row);
          continue;
        }
        RunOptions opts;
        opts.n_chains = s.n_chains;
        opts.seed = cfg.seed;
        opts.thin = cfg.thin > 0 ? cfg.thin : std::max<std::int64_t>(1, row.params.N / 200);
        opts.init = point.init;
        opts.klmc_noise = cfg.klmc_noise;
        opts.rmp_warm_start = cfg.rmp_warm_start;
        opts.workers = workers;
        if (cfg.budget.max_wall_seconds) {
          opts.deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(*cfg.budget.max_wall_seconds));
        }
        try {
          const auto chains = run_sampler(cfg.algorithm, target, build_noise(cfg.noise),
                                          cfg.feedback, row.params, opts);
          if (static_cast<Index>(chains.size()) >= d + 1) {
            double w = 0.0;
            row.iterations_to_threshold =
                first_hit(chains, *target->info().true_moments, eps, &w);
            row.final_w2 = w;
          } else {
            row.status = "too_few_chains";
          }
        } catch (const ChainDivergence& e) {
          row.status = fmt::format("diverged at step {}", e.step());
        } catch (const BudgetExceeded&) {
          row.status = "budget_exhausted";
        }
      }
      report.rows.push_back(row);
    }
  }

  // Slopes over epsilon at fixed d, and over d at fixed epsilon.
  json slopes = json::object();
  auto fit = [](const std::vector<double>& x, const std::vector<double>& y) -> json {
    if (x.size() < 2) return nullptr;
    try {
      return loglog_slope(x, y);
    } catch (const ConfigError&) {
      return nullptr;
    }
  };
  for (Index d : dims) {
    std::vector<double> inv_eps, n_pred, inv_eps_hit, n_hit;
    for (const auto& r : report.rows) {
      if (r.d != d || r.status.rfind("tune_error", 0) == 0) continue;
      inv_eps.push_back(1.0 / r.epsilon);
      n_pred.push_back(static_cast<double>(r.params.N));
      if (r.iterations_to_threshold && *r.iterations_to_threshold > 0) {
        inv_eps_hit.push_back(1.0 / r.epsilon);
        n_hit.push_back(static_cast<double>(*r.iterations_to_threshold));
      }
    }
    json entry;
    const json a = fit(inv_eps, n_pred);
    entry["predicted_N_vs_inv_eps"] = a;
    entry["predicted_N_vs_inv_eps2"] = a.is_null() ? json(nullptr) : json(a.get<double>() / 2.0);
    const json b = fit(inv_eps_hit, n_hit);
    entry["empirical_N_vs_inv_eps"] = b;
    entry["empirical_N_vs_inv_eps2"] = b.is_null() ? json(nullptr) : json(b.get<double>() / 2.0);
    slopes[fmt::format("d={}", d)] = entry;
  }
  for (double eps : epsilons) {
    std::vector<double> dd, n_pred;
    for (const auto& r : report.rows) {
      if (r.epsilon != eps || r.status.rfind("tune_error", 0) == 0) continue;
      dd.push_back(static_cast<double>(r.d));
      n_pred.push_back(static_cast<double>(r.params.N));
    }
    slopes[fmt::format("eps={}", eps)] = {{"predicted_N_vs_d", fit(dd, n_pred)}};
  }
  report.slopes = slopes;

  std::ofstream csv(dir / "scaling.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write scaling.csv");
  csv << "d,epsilon,h,b,nu,N,predicted_oracle_calls,iterations_to_threshold,final_w2,status\n";
  for (const auto& r : report.rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    csv << fmt::format("{},{},{:.10g},{},{:.10g},{},{},{},{},{}\n", r.d, r.epsilon, r.params.h,
                       r.params.b, r.params.nu, r.params.N, r.params.predicted_oracle_calls,
                       r.iterations_to_threshold ? fmt::format("{}", *r.iterations_to_threshold) : "",
                       r.final_w2 ? fmt::format("{:.6g}", *r.final_w2) : "", status);
  }
  json out;
  out["algorithm"] = to_string(cfg.algorithm);
  out["slopes"] = slopes;
  write_json(dir / "scaling.json", out);
  return report;
}

}  // namespace zol
