#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qclt/errors.hpp"
#include "qclt/pipeline.hpp"

namespace {

using qclt::ExperimentConfig;

// Exit-code contract: 0 pass, 1 internal error, 2 assumption violation,
// 3 config error.
int guarded(int (*fn)(const ExperimentConfig&), const ExperimentConfig& cfg) {
  try {
    return fn(cfg);
  } catch (const qclt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const qclt::AssumptionError& e) {
    std::cerr << "assumption violation: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asynchronous averaged Q-learning CLT laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  bool have_seed = false;
  int parallelism = -1;
  bool emit_samples = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file (JSON)")->required();
    sub->add_option("--seed", seed_override, "master seed override")
        ->each([&](const std::string&) { have_seed = true; });
    sub->add_option("--parallelism", parallelism, "replica thread count (0 = cores)");
    sub->add_flag("--emit-samples", emit_samples, "write per-K endpoint sample CSVs");
  };

  CLI::App* analyze = app.add_subcommand("analyze", "chain analysis + theory oracle dump");
  CLI::App* clt = app.add_subcommand("clt", "replicated endpoint CLT experiment");
  CLI::App* fclt = app.add_subcommand("fclt", "partial-sum process increment experiment");
  CLI::App* validate = app.add_subcommand("validate", "run the full property suite");
  for (CLI::App* sub : {analyze, clt, fclt, validate}) add_common(sub);

  CLI::App* gen = app.add_subcommand("gen-mdp", "generate a random fixture file");
  qclt::RandomMdpSpec spec;
  std::string gen_out = "fixture.json";
  gen->add_option("--n-states", spec.n_states);
  gen->add_option("--n-actions", spec.n_actions);
  gen->add_option("--sparsity", spec.sparsity);
  gen->add_option("--reward-seed", spec.reward_seed);
  gen->add_option("--transition-seed", spec.transition_seed);
  gen->add_option("--gamma", spec.gamma);
  gen->add_option("--out", gen_out);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    try {
      qclt::save_mdp_fixture(qclt::gen_random_mdp(spec), gen_out);
      return 0;
    } catch (const qclt::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 3;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      return 1;
    }
  }

  ExperimentConfig cfg;
  try {
    cfg = qclt::load_config(config_path);
  } catch (const qclt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  }
  if (have_seed) cfg.master_seed = seed_override;
  if (parallelism >= 0) cfg.parallelism = parallelism;
  if (emit_samples) cfg.emit_samples = true;
  if (cfg.output_dir.empty() || cfg.output_dir == ".") {
    if (const char* env = std::getenv("QCLT_OUTPUT_DIR")) cfg.output_dir = env;
  }

  if (analyze->parsed()) return guarded(qclt::run_analyze, cfg);
  if (clt->parsed()) return guarded(qclt::run_clt, cfg);
  if (fclt->parsed()) return guarded(qclt::run_fclt, cfg);
  if (validate->parsed()) return guarded(qclt::run_validate, cfg);
  return 3;
}
