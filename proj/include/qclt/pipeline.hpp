#pragma once

#include <string>
#include <vector>

#include "qclt/io.hpp"

namespace qclt {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// The per-module invariant and property sweep run by `validate`: Bellman
/// contraction and monotonicity, greedy sign facts, joint-chain marginals and
/// mixing envelope, iterate boundedness, F Lipschitzness, sandwich ordering,
/// oracle fixed points and PSD checks, martingale diagnostics, determinism.
std::vector<PropertyResult> run_property_suite(const MdpModel& m, const JointChain& chain,
                                               const TheoryOracle& oracle,
                                               const StepsizeSchedule& sched,
                                               std::uint64_t master_seed);

// Subcommand bodies; each writes its result files under config.output_dir.
// Exceptions map to the exit-code contract at the CLI boundary.
int run_analyze(const ExperimentConfig& config);
int run_clt(const ExperimentConfig& config);
int run_fclt(const ExperimentConfig& config);
int run_validate(const ExperimentConfig& config);

}  // namespace qclt
