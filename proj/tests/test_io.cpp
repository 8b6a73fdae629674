#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qclt/chain.hpp"
#include "qclt/errors.hpp"
#include "qclt/io.hpp"
#include "qclt/oracle.hpp"
#include "qclt/pipeline.hpp"

using namespace qclt;

namespace {

ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.fixture_path = std::string(FIXTURE_DIR) + "/default_3s2a.json";
  c.schedule = {8.0, 23.0, 2.0 / 3.0, false};
  c.k_grid = {500, 2000};
  c.replicas = 30;
  c.zeta_grid = {0.5, 1.0};
  c.master_seed = 11;
  c.output_dir = out_dir;
  c.parallelism = 1;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config serialization is a fixed point under reparsing") {
  ExperimentConfig c = small_config("outdir");
  const std::string once = config_to_json(c);
  ExperimentConfig back = config_from_json(once, "test");
  const std::string twice = config_to_json(back);
  CHECK(once == twice);
  CHECK(back.fixture_path == c.fixture_path);
  CHECK(back.schedule.alpha == c.schedule.alpha);
  CHECK(back.k_grid == c.k_grid);
  CHECK(back.replicas == c.replicas);
  CHECK(back.master_seed == c.master_seed);
}

TEST_CASE("config hash tracks content, not formatting") {
  ExperimentConfig c = small_config("outdir");
  const std::uint64_t h = config_hash(c);
  CHECK(h == config_hash(config_from_json(config_to_json(c), "t")));
  ExperimentConfig other = c;
  other.master_seed += 1;
  CHECK(config_hash(other) != h);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig c = small_config("outdir");
  c.replicas = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("replicas"), ConfigError);
  ExperimentConfig bad_zeta = small_config("outdir");
  bad_zeta.zeta_grid = {0.9, 0.1};
  CHECK_THROWS_WITH_AS(bad_zeta.validate(), doctest::Contains("zeta"), ConfigError);
  ExperimentConfig bad_k = small_config("outdir");
  bad_k.k_grid = {0};
  CHECK_THROWS_WITH_AS(bad_k.validate(), doctest::Contains("k_grid"), ConfigError);
}

TEST_CASE("malformed config text raises a config error with the origin") {
  CHECK_THROWS_WITH_AS(config_from_json("{not json", "somewhere.json"),
                       doctest::Contains("somewhere.json"), ConfigError);
  CHECK_THROWS_AS(load_config("missing_config_file.json"), ConfigError);
}

TEST_CASE("generated random MDPs pass the full assumption gate and repeat") {
  RandomMdpSpec spec;
  spec.n_states = 4;
  spec.n_actions = 3;
  spec.reward_seed = 5;
  spec.transition_seed = 6;
  MdpModel a = gen_random_mdp(spec);
  MdpModel b = gen_random_mdp(spec);
  CHECK((a.transition - b.transition).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.reward - b.reward).cwiseAbs().maxCoeff() == 0.0);
  CHECK_NOTHROW(a.validate());
  JointChain chain = build_joint_chain(a);
  CHECK(chain.rho > 0.0);
  RandomMdpSpec other = spec;
  other.transition_seed = 7;
  MdpModel c = gen_random_mdp(other);
  CHECK((a.transition - c.transition).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("output header carries the artifact version and the config hash") {
  const std::string h = output_header(0xabcdef12u);
  CHECK(h.find(kArtifactVersion) != std::string::npos);
  CHECK(h.find("abcdef12") != std::string::npos);
}

TEST_CASE("analyze pipeline writes byte-stable reports") {
  namespace fs = std::filesystem;
  const fs::path d1 = fs::temp_directory_path() / "qclt_io_a1";
  const fs::path d2 = fs::temp_directory_path() / "qclt_io_a2";
  fs::create_directories(d1);
  fs::create_directories(d2);
  ExperimentConfig c1 = small_config(d1.string());
  ExperimentConfig c2 = small_config(d2.string());
  CHECK(run_analyze(c1) == 0);
  CHECK(run_analyze(c2) == 0);
  for (const char* name : {"chain_report.txt", "oracle_dump.json"}) {
    CHECK(slurp(d1 / name) == slurp(d2 / name));
    CHECK(!slurp(d1 / name).empty());
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("clt pipeline output is byte-identical across parallelism degrees") {
  namespace fs = std::filesystem;
  const fs::path d1 = fs::temp_directory_path() / "qclt_io_c1";
  const fs::path d2 = fs::temp_directory_path() / "qclt_io_c2";
  fs::create_directories(d1);
  fs::create_directories(d2);
  ExperimentConfig c1 = small_config(d1.string());
  c1.parallelism = 1;
  ExperimentConfig c2 = small_config(d2.string());
  c2.parallelism = 4;
  c2.emit_samples = true;
  CHECK(run_clt(c1) == 0);
  CHECK(run_clt(c2) == 0);
  for (const char* name : {"clt_report.txt", "clt_w1.csv", "clt_cov.csv"}) {
    const std::string body1 = slurp(d1 / name);
    CHECK(body1 == slurp(d2 / name));
    CHECK(!body1.empty());
  }
  // emit_samples adds per-horizon sample files without touching the reports.
  CHECK(fs::exists(d2 / "endpoint_samples_K500.csv"));
  CHECK(fs::exists(d2 / "endpoint_samples_K2000.csv"));
  CHECK(!fs::exists(d1 / "endpoint_samples_K500.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("validate pipeline writes a verdict and returns the gate result") {
  namespace fs = std::filesystem;
  const fs::path d = fs::temp_directory_path() / "qclt_io_v";
  fs::create_directories(d);
  ExperimentConfig c = small_config(d.string());
  CHECK(run_validate(c) == 0);
  const std::string verdict = slurp(d / "validation_verdict.txt");
  CHECK(verdict.find("verdict pass") != std::string::npos);
  CHECK(verdict.find("FAIL") == std::string::npos);
  fs::remove_all(d);
}
