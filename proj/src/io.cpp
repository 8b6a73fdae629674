#include "qclt/io.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qclt/chain.hpp"
#include "qclt/errors.hpp"
#include "qclt/rng.hpp"

namespace qclt {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (fixture_path.empty()) throw ConfigError("config.fixture_path: missing");
  schedule.validate_for_clt();
  if (k_grid.empty()) throw ConfigError("config.k_grid: must be nonempty");
  for (long long k : k_grid)
    if (k < 1) throw ConfigError("config.k_grid: horizons must be >= 1");
  if (replicas < 1) throw ConfigError("config.replicas: must be >= 1");
  if (zeta_grid.size() < 2) throw ConfigError("config.zeta_grid: needs >= 2 points");
  for (std::size_t i = 0; i < zeta_grid.size(); ++i) {
    if (!(zeta_grid[i] > 0.0 && zeta_grid[i] <= 1.0))
      throw ConfigError("config.zeta_grid: entries must lie in (0, 1]");
    if (i > 0 && zeta_grid[i] <= zeta_grid[i - 1])
      throw ConfigError("config.zeta_grid: must be strictly ascending");
  }
  if (zeta_grid.back() != 1.0) throw ConfigError("config.zeta_grid: must end at 1");
  if (parallelism < 0) throw ConfigError("config.parallelism: must be >= 0");
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec || !std::filesystem::is_directory(output_dir))
    throw ConfigError("config.output_dir: not writable: " + output_dir);
}

int ExperimentConfig::effective_parallelism() const {
  if (parallelism > 0) return parallelism;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["fixture_path"] = c.fixture_path;
  j["schedule"] = {{"alpha", c.schedule.alpha},
                   {"b", c.schedule.b},
                   {"beta", c.schedule.beta},
                   {"constant_mode", c.schedule.constant_mode}};
  j["k_grid"] = c.k_grid;
  j["replicas"] = c.replicas;
  j["zeta_grid"] = c.zeta_grid;
  j["master_seed"] = c.master_seed;
  j["track_sandwich"] = c.track_sandwich;
  j["instrumented_terms"] = c.instrumented_terms;
  j["emit_samples"] = c.emit_samples;
  j["output_dir"] = c.output_dir;
  j["parallelism"] = c.parallelism;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + origin + ": " + e.what());
  }
  ExperimentConfig c;
  try {
    c.fixture_path = j.at("fixture_path").get<std::string>();
    const json& s = j.at("schedule");
    c.schedule.alpha = s.at("alpha").get<double>();
    c.schedule.b = s.at("b").get<double>();
    c.schedule.beta = s.at("beta").get<double>();
    c.schedule.constant_mode = s.value("constant_mode", false);
    c.k_grid = j.at("k_grid").get<std::vector<long long>>();
    c.replicas = j.at("replicas").get<Index>();
    if (j.contains("zeta_grid")) c.zeta_grid = j.at("zeta_grid").get<std::vector<double>>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.track_sandwich = j.value("track_sandwich", false);
    c.instrumented_terms = j.value("instrumented_terms", false);
    c.emit_samples = j.value("emit_samples", false);
    c.output_dir = j.value("output_dir", std::string("."));
    c.parallelism = j.value("parallelism", 0);
  } catch (const json::exception& e) {
    throw ConfigError("config schema error in " + origin + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), path);
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  // Execution knobs must not move the hash: the same experiment run with a
  // different thread count, output directory, or sample dump produces the
  // same numbers and must stamp the same header.
  ExperimentConfig canon_cfg = c;
  canon_cfg.parallelism = 0;
  canon_cfg.output_dir.clear();
  canon_cfg.emit_samples = false;
  const std::string canon = config_to_json(canon_cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : canon) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

MdpModel gen_random_mdp(const RandomMdpSpec& spec) {
  if (spec.n_states < 1 || spec.n_actions < 1)
    throw ConfigError("gen_random_mdp: n_states and n_actions must be >= 1");
  if (!(spec.sparsity > 0.0 && spec.sparsity <= 1.0))
    throw ConfigError("gen_random_mdp: sparsity must lie in (0, 1]");
  if (!(spec.gamma >= 0.0 && spec.gamma < 1.0))
    throw ConfigError("gen_random_mdp: gamma must lie in [0, 1)");
  if (spec.behavior != "uniform")
    throw ConfigError("gen_random_mdp: unsupported behavior policy: " + spec.behavior);

  const Index ns = spec.n_states, na = spec.n_actions;
  const Index support = std::max<Index>(
      1, static_cast<Index>(std::ceil(spec.sparsity * static_cast<double>(ns))));

  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    SplitRng trng(SplitRng::derive_key(spec.transition_seed + attempt, "gen-transition", 0));
    SplitRng rrng(SplitRng::derive_key(spec.reward_seed + attempt, "gen-reward", 0));
    MdpModel m;
    m.n_states = ns;
    m.n_actions = na;
    m.discount = spec.gamma;
    m.transition = Matrix::Zero(ns * na, ns);
    m.reward = Matrix(ns, na);
    m.behavior_policy = Matrix::Constant(ns, na, 1.0 / static_cast<double>(na));
    for (Index s = 0; s < ns; ++s)
      for (Index a = 0; a < na; ++a) m.reward(s, a) = rrng.next_double();
    for (Index row = 0; row < ns * na; ++row) {
      // Choose `support` distinct next states, then Dirichlet-like weights.
      std::vector<Index> perm(static_cast<std::size_t>(ns));
      for (Index i = 0; i < ns; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (Index i = ns - 1; i > 0; --i) {
        const Index j = static_cast<Index>(trng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      double total = 0.0;
      std::vector<double> w(static_cast<std::size_t>(support));
      for (Index i = 0; i < support; ++i) {
        w[static_cast<std::size_t>(i)] = 0.05 + trng.next_double();
        total += w[static_cast<std::size_t>(i)];
      }
      for (Index i = 0; i < support; ++i)
        m.transition(row, perm[static_cast<std::size_t>(i)]) =
            w[static_cast<std::size_t>(i)] / total;
    }
    try {
      m.validate();
      (void)build_joint_chain(m);
      return m;
    } catch (const AssumptionError&) {
      continue;
    } catch (const ConfigError&) {
      continue;
    }
  }
  throw ConfigError("gen_random_mdp: no valid model within 100 attempts");
}

std::string output_header(std::uint64_t cfg_hash) {
  std::ostringstream os;
  os << "# " << kArtifactVersion << " config_hash=" << std::hex << cfg_hash << std::dec
     << "\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write output file: " + path);
  out << content;
}

void write_run_sidecar(const std::string& dir) {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  std::ostringstream os;
  os << "wall_clock_unix_ms "
     << std::chrono::duration_cast<std::chrono::milliseconds>(now).count() << "\n";
  write_text_file(dir + "/run_meta.txt", os.str());
}

void write_clt_report(const CltReport& report, const std::vector<Matrix>& samples_per_k,
                      bool emit_samples, std::uint64_t cfg_hash, const std::string& dir) {
  std::ostringstream txt;
  txt << output_header(cfg_hash);
  txt << "fixture " << report.fixture_id << "\n";
  for (const EndpointStats& st : report.per_horizon) {
    txt << "K " << st.horizon << " replicas " << st.replicas << " seed "
        << st.experiment_seed << "\n";
    txt << "  mean_sup " << fmt17(st.empirical_mean.cwiseAbs().maxCoeff()) << "\n";
    txt << "  cov_rel_error " << fmt17(st.cov_rel_error) << "\n";
    txt << "  w1_projected_lower_bound " << fmt17(st.w1) << "\n";
  }
  if (report.per_horizon.size() >= 2) {
    txt << "w1_fit_slope " << fmt17(report.w1_fit.slope) << "\n";
    txt << "w1_fit_residual " << fmt17(report.w1_fit.residual) << "\n";
  }
  txt << "w1_metric projected-1d-lower-bound euclidean-projections\n";
  write_text_file(dir + "/clt_report.txt", txt.str());

  std::ostringstream w1csv, covcsv;
  w1csv << output_header(cfg_hash) << "K,w1_projected\n";
  covcsv << output_header(cfg_hash) << "K,cov_rel_error\n";
  for (const EndpointStats& st : report.per_horizon) {
    w1csv << st.horizon << "," << fmt17(st.w1) << "\n";
    covcsv << st.horizon << "," << fmt17(st.cov_rel_error) << "\n";
  }
  write_text_file(dir + "/clt_w1.csv", w1csv.str());
  write_text_file(dir + "/clt_cov.csv", covcsv.str());

  if (emit_samples) {
    for (std::size_t i = 0; i < samples_per_k.size(); ++i) {
      std::ostringstream cs;
      cs << output_header(cfg_hash);
      const Matrix& s = samples_per_k[i];
      for (Index r = 0; r < s.rows(); ++r) {
        for (Index c = 0; c < s.cols(); ++c) cs << (c ? "," : "") << fmt17(s(r, c));
        cs << "\n";
      }
      write_text_file(dir + "/endpoint_samples_K" +
                          std::to_string(report.per_horizon[i].horizon) + ".csv",
                      cs.str());
    }
  }
}

void write_fclt_report(const FcltReport& report, std::uint64_t cfg_hash,
                       const std::string& dir) {
  std::ostringstream txt;
  txt << output_header(cfg_hash);
  txt << "K " << report.horizon << " replicas " << report.replicas << "\n";
  if (report.degenerate_sigma) txt << "degenerate_sigma true\n";
  for (std::size_t g = 0; g < report.increment_cov_errors.size(); ++g)
    txt << "increment " << report.zeta_grid[g] << " rel_error "
        << fmt17(report.increment_cov_errors[g]) << "\n";
  txt << "max_cross_cov_rel " << fmt17(report.max_cross_cov_rel) << "\n";
  for (std::size_t j = 0; j < report.functional_ks.size(); ++j)
    txt << "running_max_ks coord " << j << " " << fmt17(report.functional_ks[j]) << "\n";
  write_text_file(dir + "/fclt_report.txt", txt.str());

  std::ostringstream csv;
  csv << output_header(cfg_hash) << "zeta,increment_error\n";
  for (std::size_t g = 0; g < report.increment_cov_errors.size(); ++g)
    csv << report.zeta_grid[g] << "," << fmt17(report.increment_cov_errors[g]) << "\n";
  write_text_file(dir + "/fclt_increments.csv", csv.str());
}

void write_checkpoint_csv(const RunRecord& rec, const std::vector<long long>& checkpoints,
                          std::uint64_t cfg_hash, const std::string& path) {
  std::ostringstream csv;
  csv << output_header(cfg_hash) << "k,sup_error";
  if (!rec.q_checkpoints.empty()) {
    const Index d = rec.q_checkpoints.front().size();
    for (Index j = 0; j < d; ++j) csv << ",q" << j;
  }
  csv << "\n";
  for (std::size_t c = 0; c < rec.sup_error_trace.size(); ++c) {
    csv << checkpoints[c] << "," << fmt17(rec.sup_error_trace[c]);
    if (c < rec.q_checkpoints.size()) {
      const Vector q = flatten_q(rec.q_checkpoints[c]);
      for (Index j = 0; j < q.size(); ++j) csv << "," << fmt17(q[j]);
    }
    csv << "\n";
  }
  write_text_file(path, csv.str());
}

void write_phi_csv(const RunRecord& rec, const std::vector<double>& zeta_grid,
                   std::uint64_t cfg_hash, const std::string& path) {
  std::ostringstream csv;
  csv << output_header(cfg_hash) << "zeta,coordinate_index,value\n";
  for (Index g = 0; g < rec.phi.rows(); ++g)
    for (Index j = 0; j < rec.phi.cols(); ++j)
      csv << zeta_grid[static_cast<std::size_t>(g)] << "," << j << ","
          << fmt17(rec.phi(g, j)) << "\n";
  write_text_file(path, csv.str());
}

}  // namespace qclt
