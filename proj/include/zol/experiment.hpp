#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zol/core.hpp"
#include "zol/oracle.hpp"
#include "zol/samplers.hpp"
#include "zol/tuning.hpp"

namespace zol {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kWorkersEnv = "ZOL_WORKERS";

// Target description. Kinds:
//   gaussian          mean, precision (or covariance); default N(0, I_dim)
//   mixture           weights, means, covariances, lsi_constant
//   logistic          csv, ridge
//   sparse_quadratic  dim, support, scale: f = scale * sum_{j in support} theta_j^2
struct TargetConfig {
  std::string kind = "gaussian";
  nlohmann::json params;  // validated copy of the target object
};

struct NoiseConfig {
  std::string kind = "none";  // none | additive | multiplicative | lipschitz
  double level = 0.0;         // sigma, sigma_rel or L
};

struct BudgetConfig {
  std::optional<std::int64_t> max_oracle_calls;
  std::optional<double> max_wall_seconds;
};

struct SweepConfig {
  std::vector<Index> dims;
  std::vector<double> epsilons;
  bool simulate = true;
  std::int64_t n_chains = 200;
};

struct ExperimentConfig {
  TargetConfig target;
  NoiseConfig noise;
  Feedback feedback = Feedback::TwoPoint;
  Algorithm algorithm = Algorithm::ZoLmc;
  Regime regime = Regime::StronglyLogConcave;
  double epsilon = 0.25;
  std::optional<Vector> init;
  std::optional<double> w2_init;
  std::optional<double> kl_init;
  std::optional<double> lambda;  // overrides the target's LSI constant
  Overrides overrides;
  std::optional<double> K1;
  std::optional<double> K2;
  std::int64_t n_chains = 1;
  std::uint64_t seed = 0;
  std::int64_t thin = 0;
  KlmcNoise klmc_noise = KlmcNoise::Exact;
  bool rmp_warm_start = true;
  std::string output_dir = "runs/out";
  BudgetConfig budget;
  std::optional<double> check_max_w2;
  std::optional<int> workers;
  std::optional<SweepConfig> sweep;

  nlohmann::json source;  // the validated input object, for the manifest
};

// Parses and validates a configuration object. Unknown fields anywhere are
// rejected; messages name the offending field path.
ExperimentConfig parse_config(const nlohmann::json& j);

// Reads a config file, or a manifest.json written by run_experiment (whose
// embedded config is used).
ExperimentConfig load_config(const std::filesystem::path& path);

// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

PotentialPtr build_target(const TargetConfig& target);
PotentialPtr build_target(const TargetConfig& target, Index dim_override);
NoiseModel build_noise(const NoiseConfig& noise);

// Worker count: config value, else $ZOL_WORKERS, else 1.
int resolve_workers(const std::optional<int>& configured);

// Tunes the configured algorithm on `target`.
TunedParams tune_for(const ExperimentConfig& cfg, const Potential& target);

nlohmann::json params_to_json(const TunedParams& p);

// Numeric values are the CLI exit codes.
enum class RunStatus {
  Ok = 0,
  ConfigInvalid = 2,
  Diverged = 3,
  BudgetExhausted = 3,
  CheckFailed = 4,
};

struct RunResult {
  RunStatus status = RunStatus::Ok;
  std::string message;
  TunedParams params;
  std::int64_t oracle_calls = 0;
  std::int64_t warm_start_calls = 0;
  std::optional<double> w2;  // Bures W2 of final iterates vs true moments
  double wall_seconds = 0.0;
  std::filesystem::path output_dir;
};

// Tunes, samples, writes trace.csv (+ trace.json sidecar), summary.json and
// manifest.json under cfg.output_dir. Divergence gives Diverged (partial
// trace retained), an exceeded call or wall-clock cap BudgetExhausted, and a
// failed check CheckFailed (threshold check.max_w2, default 2 eps). Invalid
// configurations throw ConfigError.
RunResult run_experiment(const ExperimentConfig& cfg, bool check = false);

// Trace CSV `chain,step,x1..xd`.
void write_trace_csv(const std::filesystem::path& path, const std::vector<Chain>& chains);

struct SweepRow {
  Index d = 0;
  double epsilon = 0.0;
  TunedParams params;
  std::optional<std::int64_t> iterations_to_threshold;
  std::optional<double> final_w2;
  std::string status = "ok";
};

struct SweepReport {
  std::vector<SweepRow> rows;
  // Log-log slopes of N (and of iterations-to-threshold when simulated)
  // against 1/eps and 1/eps^2 at each d, and against d at each eps.
  nlohmann::json slopes;
};

// Runs tuner (+ sampler when simulate) on N(0, I_d) for every grid point and
// writes scaling.csv and scaling.json. Empty grids are rejected.
SweepReport benchmark_sweep(const ExperimentConfig& cfg);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace zol
