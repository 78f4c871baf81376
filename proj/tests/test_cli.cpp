#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kDir = fs::temp_directory_path() / "zol_test_cli";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run(const std::string& args) {
  fs::create_directories(kDir);
  const fs::path out = kDir / "stdout.txt", err = kDir / "stderr.txt";
  const std::string cmd = std::string("\"") + ZOL_CLI + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

fs::path write_config(const std::string& name, const json& j) {
  fs::create_directories(kDir);
  const fs::path p = kDir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

json minimal(const std::string& out) {
  return {{"schema_version", 1},
          {"target", {{"kind", "gaussian"}, {"dim", 2}}},
          {"algorithm", "zo-lmc"},
          {"epsilon", 0.25},
          {"seed", 7},
          {"output_dir", (kDir / out).string()}};
}

}  // namespace

TEST_CASE("sample writes artifacts and exits 0") {
  fs::remove_all(kDir / "run");
  const auto cfg = write_config("min.json", minimal("run"));
  const auto r = run("sample " + cfg.string());
  CHECK(r.code == 0);
  const json s = json::parse(slurp(kDir / "run" / "summary.json"));
  CHECK(s["oracle_calls"].get<std::int64_t>() ==
        s["params"]["N"].get<std::int64_t>() * 2 * s["params"]["b"].get<std::int64_t>());
}

TEST_CASE("manifest rerun gives an identical trace") {
  fs::remove_all(kDir / "a");
  fs::remove_all(kDir / "b");
  auto j = minimal("a");
  j["n_chains"] = 4;
  j["noise"] = {{"kind", "additive"}, {"sigma", 0.5}};
  const auto cfg = write_config("rerun.json", j);
  REQUIRE(run("sample " + cfg.string()).code == 0);
  const auto r = run("sample " + (kDir / "a" / "manifest.json").string() + " --output-dir " +
                     (kDir / "b").string());
  REQUIRE(r.code == 0);
  CHECK(slurp(kDir / "a" / "trace.csv") == slurp(kDir / "b" / "trace.csv"));
}

TEST_CASE("configuration errors exit 2") {
  auto j = minimal("bad");
  j["surprise"] = true;
  auto r = run("sample " + write_config("unknown.json", j).string());
  CHECK(r.code == 2);
  CHECK(r.err.find("surprise") != std::string::npos);

  j = minimal("bad");
  j["algorithm"] = "zo-klmc";
  j["regime"] = "lsi";
  r = run("sample " + write_config("klmc_lsi.json", j).string());
  CHECK(r.code == 2);
  CHECK(r.err.find("unsupported combination") != std::string::npos);

  CHECK(run("sample " + (kDir / "nope.json").string()).code == 2);
  CHECK(run("sample").code == 2);
  CHECK(run("tune --algorithm zo-lmc --regime strongly-logconcave --epsilon 0.1 --bogus 1").code ==
        2);
  CHECK(run("").code == 2);

  j = minimal("sweep");
  j["sweep"] = {{"dims", json::array()}};
  r = run("benchmark " + write_config("empty_sweep.json", j).string());
  CHECK(r.code == 2);
  CHECK(r.err.find("empty grid") != std::string::npos);
}

TEST_CASE("check failures exit 4, divergence exits 3") {
  auto j = minimal("check");
  j["n_chains"] = 50;
  j["check"] = {{"max_w2", 1e-9}};
  CHECK(run("sample --check " + write_config("check.json", j).string()).code == 4);

  j = minimal("diverge");
  j["algorithm"] = "lmc-baseline";
  j["target"] = {{"kind", "mixture"}, {"weights", {0.5, 0.5}}, {"means", {-1.0, 1.0}}};
  j["regime"] = "lsi";
  j["lambda"] = 1.0;
  j["kl_init"] = 1.0;
  j["epsilon"] = 0.05;
  j["init"] = {3.0};
  j["overrides"] = {{"h", 5.0}, {"N", 2000}};
  CHECK(run("sample " + write_config("diverge.json", j).string()).code == 3);
  CHECK(fs::exists(kDir / "diverge" / "trace.csv"));
}

TEST_CASE("tune prints parameters") {
  const auto r = run("tune --algorithm zo-lmc --regime strongly-logconcave --epsilon 0.1 "
                     "--d 2 --m 1 --M 1 --w2-init 1");
  REQUIRE(r.code == 0);
  const json p = json::parse(r.out);
  CHECK(p["h"].get<double>() == doctest::Approx(0.0025));
  CHECK(p["b"] == 2);
  CHECK(p["nu"].get<double>() == doctest::Approx(0.1 / std::sqrt(2.0)));
}

TEST_CASE("select reports the support") {
  const json j = {{"schema_version", 1},
                  {"target",
                   {{"kind", "sparse_quadratic"}, {"dim", 8}, {"support", {1, 5}}, {"scale", 0.5}}}};
  const auto cfg = write_config("sparse.json", j);
  const auto r = run("select --config " + cfg.string() +
                     " --theta0 1 --a 1 --s 2 --R 2 --n 2000 --seed 3");
  REQUIRE(r.code == 0);
  const json out = json::parse(r.out);
  CHECK(out["support"] == json({1, 5}));
  CHECK(out["calls"] == 4000);
  CHECK(out["tau"].get<double>() == doctest::Approx(0.25));
}

TEST_CASE("diagnose-estimator emits CSV") {
  const json j = {{"schema_version", 1}, {"target", {{"kind", "gaussian"}, {"dim", 2}}}};
  const auto cfg = write_config("diag.json", j);
  const auto r = run("diagnose-estimator --config " + cfg.string() +
                     " --theta 1,0 --nu 0.1,0.2 --b 1 --reps 1000");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("theta_id,nu,b,mode,sigma,mc_var,bound,mc_bias,bias_bound,se\n", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);
}

TEST_CASE("verify-cov runs") {
  const auto r = run("verify-cov --kind rmp --paths 20000 --substeps 200");
  CHECK(r.code == 0);
  CHECK(r.out.find("rmp: max_relative_error=") != std::string::npos);
  CHECK(run("verify-cov --kind rmp --paths 20000 --substeps 200 --tol 1e-9 --check").code == 4);
}
