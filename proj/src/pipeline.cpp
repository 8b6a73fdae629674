#include "qclt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "qclt/errors.hpp"
#include "qclt/rng.hpp"

namespace qclt {

namespace {

std::string fixture_id_of(const std::string& path) {
  return std::filesystem::path(path).filename().string();
}

Matrix random_q(SplitRng& rng, const MdpModel& m, double scale) {
  Matrix q(m.n_states, m.n_actions);
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a) q(s, a) = scale * rng.next_double();
  return q;
}

}  // namespace

std::vector<PropertyResult> run_property_suite(const MdpModel& m, const JointChain& chain,
                                               const TheoryOracle& oracle,
                                               const StepsizeSchedule& sched,
                                               std::uint64_t master_seed) {
  std::vector<PropertyResult> out;
  auto check = [&](const std::string& name, bool pass, const std::string& detail = "") {
    out.push_back({name, pass, detail});
  };
  SplitRng rng(SplitRng::derive_key(master_seed, "validate", 0));
  const double qmax = 1.0 / (1.0 - m.discount);
  const Index d = m.dim();

  // Bellman contraction and monotonicity on random pairs.
  {
    bool contraction = true, monotone = true;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Matrix q1 = random_q(rng, m, qmax);
      const Matrix q2 = random_q(rng, m, qmax);
      const double lhs = (bellman_apply(q1, m) - bellman_apply(q2, m)).cwiseAbs().maxCoeff();
      const double rhs = m.discount * (q1 - q2).cwiseAbs().maxCoeff();
      worst = std::max(worst, lhs - rhs);
      if (lhs > rhs + 1e-12) contraction = false;
      const Matrix lo = q1.cwiseMin(q2);
      if (((bellman_apply(lo, m) - bellman_apply(q1.cwiseMax(q2), m)).array() > 1e-12).any())
        monotone = false;
    }
    check("bellman_contraction", contraction, "worst slack " + std::to_string(worst));
    check("bellman_monotonicity", monotone);
  }

  // Greedy sign facts and the P^pi defining identity.
  {
    bool sign_up = true, sign_dn = true, identity = true;
    const Vector q_star_flat = flatten_q(oracle.q_star);
    for (int i = 0; i < 100; ++i) {
      const Matrix qk = random_q(rng, m, qmax);
      const PolicyMatrix pk = greedy_policy(qk, m);
      const Matrix diff_kernel = pk.induced_kernel - oracle.pi_star.induced_kernel;
      if (((diff_kernel * flatten_q(qk)).array() < -1e-10).any()) sign_up = false;
      if (((diff_kernel * q_star_flat).array() > 1e-10).any()) sign_dn = false;
      // P^pi Q must equal P applied to the pi-selected value vector.
      Vector selected(m.n_states);
      for (Index s = 0; s < m.n_states; ++s)
        selected[s] = qk(s, pk.action[static_cast<std::size_t>(s)]);
      for (Index row = 0; row < d && identity; ++row) {
        const double direct = m.transition.row(row).dot(selected);
        const double via_kernel = pk.induced_kernel.row(row).dot(flatten_q(qk));
        if (std::abs(direct - via_kernel) > 1e-10) identity = false;
      }
    }
    check("greedy_kernel_positive_on_Qk", sign_up);
    check("greedy_kernel_negative_on_Qstar", sign_dn);
    check("policy_kernel_identity", sign_up && identity);
  }

  // Chain marginals and mixing structure.
  {
    const double res = (chain.kernel.transpose() * chain.stationary - chain.stationary)
                           .cwiseAbs()
                           .sum();
    check("stationary_residual", res <= 1e-10, "l1 residual " + std::to_string(res));
    check("visitation_sums_to_one", std::abs(chain.visitation.sum() - 1.0) <= 1e-10);
    check("rho_le_uniform", chain.rho <= 1.0 / static_cast<double>(d) + 1e-12);
    // p(s,a) = mu_b(s) pi_b(a|s) with mu_b recomputed from the state chain.
    Matrix state_kernel = Matrix::Zero(m.n_states, m.n_states);
    for (Index s = 0; s < m.n_states; ++s)
      for (Index a = 0; a < m.n_actions; ++a)
        state_kernel.row(s) += m.behavior_policy(s, a) * m.transition.row(m.flat(s, a));
    const Vector mu_b = stationary_distribution(state_kernel);
    double worst = 0.0;
    for (Index s = 0; s < m.n_states; ++s)
      for (Index a = 0; a < m.n_actions; ++a)
        worst = std::max(worst, std::abs(chain.visitation[m.flat(s, a)] -
                                         mu_b[s] * m.behavior_policy(s, a)));
    check("visitation_factorizes", worst <= 1e-9, "max gap " + std::to_string(worst));
    const Index t_half = mixing_time(chain, 0.5);
    const Index t_tenth = mixing_time(chain, 0.1);
    check("mixing_time_monotone", t_half <= t_tenth);
  }

  // Engine: boundedness, Lipschitz F, determinism, sandwich ordering.
  {
    TrajectoryOptions opts;
    opts.horizon = 20000;
    opts.zeta_grid = {0.5, 1.0};
    opts.checkpoints = {100, 1000, 10000, 20000};
    opts.keep_q_checkpoints = true;
    opts.master_seed = master_seed;
    const RunRecord rec = run_trajectory(m, chain, sched, oracle, opts);
    bool bounded = true;
    for (const Matrix& q : rec.q_checkpoints)
      if (q.minCoeff() < -1e-12 || q.maxCoeff() > qmax + 1e-9) bounded = false;
    check("iterate_boundedness", bounded);
    const RunRecord rec2 = run_trajectory(m, chain, sched, oracle, opts);
    check("run_determinism", rec.phi == rec2.phi && rec.final_q == rec2.final_q);
    check("phi_endpoint_consistency",
          (rec.final_averaged_error - rec.phi.row(1).transpose()).cwiseAbs().maxCoeff() == 0.0);

    double worst_ratio = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Matrix q1 = random_q(rng, m, qmax);
      const Matrix q2 = random_q(rng, m, qmax);
      const Index y = static_cast<Index>(rng.next_u64() %
                                         static_cast<std::uint64_t>(chain.dim()));
      const Triple& t = chain.triples[static_cast<std::size_t>(y)];
      const double num = (f_operator(q1, t, m) - f_operator(q2, t, m)).cwiseAbs().maxCoeff();
      const double den = (q1 - q2).cwiseAbs().maxCoeff();
      if (den > 0.0) worst_ratio = std::max(worst_ratio, num / den);
    }
    check("f_operator_lipschitz_2", worst_ratio <= 2.0 + 1e-12,
          "observed constant " + std::to_string(worst_ratio));

    bool sandwich_ok = true;
    std::string sandwich_detail;
    try {
      TrajectoryOptions sw;
      sw.horizon = 20000;
      sw.zeta_grid = {1.0};
      sw.track_sandwich = true;
      sw.master_seed = master_seed + 1;
      (void)run_trajectory(m, chain, sched, oracle, sw);
    } catch (const InternalError& e) {
      sandwich_ok = false;
      sandwich_detail = e.what();
    }
    check("sandwich_ordering", sandwich_ok, sandwich_detail);
  }

  // Oracle invariants.
  {
    check("poisson_residual", oracle.poisson_residual <= 1e-10,
          "residual " + std::to_string(oracle.poisson_residual));
    const double bound = 1.0 / ((1.0 - m.discount) * chain.rho);
    check("a_inverse_bound", oracle.a_inv_inf_norm <= bound * (1.0 + 1e-9));
    const Vector fb = f_bar(oracle.q_star, chain, m);
    check("fbar_fixed_point",
          (fb - flatten_q(oracle.q_star)).cwiseAbs().maxCoeff() <= 1e-10);
    const double sq = (oracle.limit_sqrt * oracle.limit_sqrt - oracle.limit_cov).norm();
    const double sc = std::max(oracle.limit_cov.norm(), 1e-300);
    check("limit_sqrt_consistent", sq / sc <= 1e-8 || sq <= 1e-14);
    // ||X||_inf * (1-gamma) * (1-kappa): reported; assert finiteness only.
    const double x_scale = oracle.poisson_x.cwiseAbs().maxCoeff() * (1.0 - m.discount) *
                           (1.0 - chain.kappa);
    check("poisson_norm_finite", std::isfinite(x_scale),
          "||X||_inf*(1-gamma)*(1-kappa) = " + std::to_string(x_scale));
    const MdsDiagnostics mds = mds_diagnostics(m, chain, oracle, 200000, master_seed + 2);
    check("mds_mean_clt_scale", mds.mean_sup <= mds.mean_bound,
          "mean_sup " + std::to_string(mds.mean_sup) + " bound " +
              std::to_string(mds.mean_bound));
    check("mds_lag1_small", mds.lag1_rel <= 0.02,
          "lag1 " + std::to_string(mds.lag1_rel));
  }

  return out;
}

int run_analyze(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t hash = config_hash(config);
  const MdpModel m = load_mdp_fixture(config.fixture_path);
  const JointChain chain = build_joint_chain(m);
  const TheoryOracle oracle = build_oracle(m, chain);
  write_text_file(config.output_dir + "/chain_report.txt",
                  output_header(hash) + chain_report(chain, m));
  write_text_file(config.output_dir + "/oracle_dump.json", oracle_to_json(oracle));
  write_run_sidecar(config.output_dir);
  return 0;
}

int run_clt(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t hash = config_hash(config);
  const MdpModel m = load_mdp_fixture(config.fixture_path);
  const JointChain chain = build_joint_chain(m);
  const TheoryOracle oracle = build_oracle(m, chain);
  CltReport report = run_clt_experiment(m, chain, oracle, config.schedule, config.k_grid,
                                        config.replicas, config.master_seed,
                                        config.effective_parallelism());
  report.fixture_id = fixture_id_of(config.fixture_path);
  std::vector<Matrix> samples;
  if (config.emit_samples) {
    for (const EndpointStats& st : report.per_horizon)
      samples.push_back(replicate_endpoint(m, chain, oracle, config.schedule, st.horizon,
                                           st.replicas, st.experiment_seed,
                                           config.effective_parallelism()));
  }
  write_clt_report(report, samples, config.emit_samples, hash, config.output_dir);
  if (config.instrumented_terms) {
    std::ostringstream os;
    os << output_header(hash) << "K,term1,term2,term3a,term3b,term4,term5a,term5b\n";
    os.precision(17);
    for (long long k : config.k_grid) {
      const TermsReport t =
          diagnostics_terms(m, chain, oracle, config.schedule, k, config.master_seed);
      os << k << "," << t.term1 << "," << t.term2 << "," << t.term3a << "," << t.term3b
         << "," << t.term4 << "," << t.term5a << "," << t.term5b << "\n";
    }
    write_text_file(config.output_dir + "/terms_report.csv", os.str());
  }
  write_run_sidecar(config.output_dir);
  return 0;
}

int run_fclt(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t hash = config_hash(config);
  const MdpModel m = load_mdp_fixture(config.fixture_path);
  const JointChain chain = build_joint_chain(m);
  const TheoryOracle oracle = build_oracle(m, chain);
  const long long horizon = *std::max_element(config.k_grid.begin(), config.k_grid.end());
  const FcltReport report =
      fclt_marginals(m, chain, oracle, config.schedule, horizon, config.replicas,
                     config.zeta_grid, config.master_seed, config.effective_parallelism());
  write_fclt_report(report, hash, config.output_dir);
  write_run_sidecar(config.output_dir);
  return 0;
}

int run_validate(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t hash = config_hash(config);
  const MdpModel m = load_mdp_fixture(config.fixture_path);
  const JointChain chain = build_joint_chain(m);
  const TheoryOracle oracle = build_oracle(m, chain);
  const std::vector<PropertyResult> results =
      run_property_suite(m, chain, oracle, config.schedule, config.master_seed);
  std::ostringstream os;
  os << output_header(hash);
  bool all = true;
  for (const PropertyResult& r : results) {
    os << (r.pass ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) os << " (" << r.detail << ")";
    os << "\n";
    all = all && r.pass;
  }
  os << (all ? "verdict pass\n" : "verdict fail\n");
  write_text_file(config.output_dir + "/validation_verdict.txt", os.str());
  write_run_sidecar(config.output_dir);
  return all ? 0 : 1;
}

}  // namespace qclt
