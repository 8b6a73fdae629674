#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qclt/clt.hpp"
#include "qclt/mdp.hpp"
#include "qclt/stepsize.hpp"

namespace qclt {

inline constexpr const char* kArtifactVersion = "qclt 0.1.0";

struct ExperimentConfig {
  std::string fixture_path;
  StepsizeSchedule schedule;
  std::vector<long long> k_grid = {1000, 10000, 100000, 1000000};
  Index replicas = 2000;
  std::vector<double> zeta_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t master_seed = 0;
  bool track_sandwich = false;
  bool instrumented_terms = false;
  bool emit_samples = false;
  std::string output_dir = ".";
  int parallelism = 0;  // 0: use hardware concurrency

  // Schema + CLT-mode checks; throws ConfigError with the field path.
  void validate() const;
  int effective_parallelism() const;
};

// Config file round-trip; parse(serialize(parse(x))) is a fixed point.
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const std::string& text, const std::string& origin);

// FNV-1a hash of the canonical serialization; stamped into output headers.
std::uint64_t config_hash(const ExperimentConfig& c);

struct RandomMdpSpec {
  Index n_states = 3;
  Index n_actions = 2;
  double sparsity = 1.0;  // fraction of next-states with positive probability
  std::uint64_t reward_seed = 1;
  std::uint64_t transition_seed = 2;
  double gamma = 0.5;
  std::string behavior = "uniform";
};

/// Draws a random MDP passing both model invariants and the joint-chain
/// assumptions, retrying with incremented seeds up to 100 attempts.
MdpModel gen_random_mdp(const RandomMdpSpec& spec);

// Output writers. Every file begins with a header line carrying the artifact
// version and config hash; wall-clock metadata goes to a separate sidecar so
// the main files are byte-stable.
std::string output_header(std::uint64_t cfg_hash);
void write_text_file(const std::string& path, const std::string& content);
void write_run_sidecar(const std::string& dir);

void write_clt_report(const CltReport& report, const std::vector<Matrix>& samples_per_k,
                      bool emit_samples, std::uint64_t cfg_hash, const std::string& dir);
void write_fclt_report(const FcltReport& report, std::uint64_t cfg_hash,
                       const std::string& dir);
void write_checkpoint_csv(const RunRecord& rec, const std::vector<long long>& checkpoints,
                          std::uint64_t cfg_hash, const std::string& path);
void write_phi_csv(const RunRecord& rec, const std::vector<double>& zeta_grid,
                   std::uint64_t cfg_hash, const std::string& path);

}  // namespace qclt
