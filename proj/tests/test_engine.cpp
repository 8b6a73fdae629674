#include <doctest.h>

#include <cmath>
#include <vector>

#include "qclt/chain.hpp"
#include "qclt/engine.hpp"
#include "qclt/errors.hpp"
#include "qclt/mdp.hpp"
#include "qclt/oracle.hpp"
#include "qclt/rng.hpp"
#include "qclt/stepsize.hpp"

using namespace qclt;

namespace {

struct Lab {
  MdpModel m;
  JointChain chain;
  TheoryOracle oracle;
};

const Lab& lab() {
  static Lab l = [] {
    Lab out;
    out.m = load_mdp_fixture(std::string(FIXTURE_DIR) + "/default_3s2a.json");
    out.chain = build_joint_chain(out.m);
    out.oracle = build_oracle(out.m, out.chain);
    return out;
  }();
  return l;
}

// Plain transcription of the update loop: full-vector state, naive partial
// sums in long double, same RNG stream contract as run_trajectory.
struct ReferenceRun {
  Matrix final_q;
  Matrix phi;
};

ReferenceRun reference_loop(const MdpModel& m, const JointChain& chain,
                            const StepsizeSchedule& sched, long long K,
                            const std::vector<double>& zetas, std::uint64_t master_seed,
                            std::uint64_t replica, const Matrix& q_star) {
  SplitRng rng(SplitRng::derive_key(master_seed, "trajectory", replica));
  Index s = rng.sample(chain.state_marginal);
  Matrix q = Matrix::Zero(m.n_states, m.n_actions);
  std::vector<long long> bounds;
  for (double z : zetas)
    bounds.push_back(static_cast<long long>(std::floor(z * static_cast<double>(K))));
  std::vector<std::vector<long double>> sums(
      zetas.size(), std::vector<long double>(static_cast<std::size_t>(m.dim()), 0.0L));
  std::vector<long double> run(static_cast<std::size_t>(m.dim()), 0.0L);
  auto flush = [&](long long iterate) {
    for (std::size_t g = 0; g < bounds.size(); ++g)
      if (bounds[g] == iterate) sums[g] = run;
  };
  flush(0);
  for (long long k = 0; k < K; ++k) {
    const double alpha = sched.at(k);
    const Index a = rng.sample(m.behavior_policy.row(s));
    const Index sp = rng.sample(m.transition.row(m.flat(s, a)));
    const double td = m.reward(s, a) + m.discount * q.row(sp).maxCoeff() - q(s, a);
    q(s, a) += alpha * td;
    s = sp;
    for (Index j = 0; j < m.dim(); ++j) {
      const Index st = j / m.n_actions, ac = j % m.n_actions;
      run[static_cast<std::size_t>(j)] +=
          static_cast<long double>(q(st, ac)) - static_cast<long double>(q_star(st, ac));
    }
    flush(k + 1);
  }
  ReferenceRun out;
  out.final_q = q;
  out.phi = Matrix(static_cast<Index>(zetas.size()), m.dim());
  const long double inv = 1.0L / std::sqrt(static_cast<long double>(K));
  for (std::size_t g = 0; g < zetas.size(); ++g)
    for (Index j = 0; j < m.dim(); ++j)
      out.phi(static_cast<Index>(g), j) =
          static_cast<double>(sums[g][static_cast<std::size_t>(j)] * inv);
  return out;
}

}  // namespace

TEST_CASE("one async step changes exactly the visited entry") {
  const Lab& l = lab();
  Matrix q = Matrix::Random(3, 2);
  Triple y{1, 0, 2};
  Matrix out = async_q_step(q, y, 0.25, l.m);
  const double td = l.m.reward(1, 0) + l.m.discount * q.row(2).maxCoeff() - q(1, 0);
  CHECK(out(1, 0) == doctest::Approx(q(1, 0) + 0.25 * td).epsilon(1e-15));
  out(1, 0) = q(1, 0);
  CHECK((out - q).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stepsize schedule values match extended-precision evaluation") {
  StepsizeSchedule sched{0.7, 3.0, 2.0 / 3.0, false};
  for (long long k : {0LL, 1LL, 17LL, 999LL, 123456LL}) {
    const long double want =
        0.7L * powl(static_cast<long double>(k) + 3.0L, -2.0L / 3.0L);
    CHECK(sched.at(k) == doctest::Approx(static_cast<double>(want)).epsilon(1e-14));
  }
  // Strictly decreasing, k * alpha_k increasing.
  double prev = sched.at(0);
  for (long long k = 1; k < 2000; ++k) {
    const double cur = sched.at(k);
    CHECK(cur < prev);
    CHECK(static_cast<double>(k) * cur >=
          static_cast<double>(k - 1) * prev - 1e-15);
    prev = cur;
  }
}

TEST_CASE("schedule validation enforces the CLT conditions") {
  StepsizeSchedule ok{8.0, 23.0, 2.0 / 3.0, false};
  CHECK_NOTHROW(ok.validate_for_clt());
  StepsizeSchedule big_start{2.0, 1.0, 2.0 / 3.0, false};
  CHECK_THROWS_AS(big_start.validate_for_clt(), ConfigError);
  StepsizeSchedule bad_beta{0.5, 1.0, 0.5, false};
  CHECK_THROWS_AS(bad_beta.validate_for_clt(), ConfigError);
  StepsizeSchedule constant{0.1, 1.0, 2.0 / 3.0, true};
  CHECK_THROWS_AS(constant.validate_for_clt(), ConfigError);
}

TEST_CASE("precomputed alpha table equals pointwise evaluation") {
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  std::vector<double> table = precompute_alphas(sched, 5000);
  REQUIRE(table.size() == 5000);
  for (long long k : {0LL, 1LL, 100LL, 4999LL})
    CHECK(table[static_cast<std::size_t>(k)] == sched.at(k));
}

TEST_CASE("trajectory matches an independent transcription bit for bit") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  const long long K = 500;
  const std::vector<double> zetas = {0.25, 0.5, 1.0};
  TrajectoryOptions opt;
  opt.horizon = K;
  opt.zeta_grid = zetas;
  opt.master_seed = 404;
  opt.replica_index = 3;
  RunRecord rec = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
  ReferenceRun ref = reference_loop(l.m, l.chain, sched, K, zetas, 404, 3, l.oracle.q_star);
  CHECK((rec.final_q - ref.final_q).cwiseAbs().maxCoeff() == 0.0);
  // Partial sums: compensated vs long-double accumulation, equal to 1e-12.
  CHECK((rec.phi - ref.phi).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rec.final_averaged_error - rec.phi.row(2).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("same seed reproduces the run, another replica diverges") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  TrajectoryOptions opt;
  opt.horizon = 2000;
  opt.zeta_grid = {1.0};
  opt.master_seed = 77;
  opt.replica_index = 0;
  RunRecord a = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
  RunRecord b = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
  CHECK(a.seed_key == b.seed_key);
  CHECK((a.final_q - b.final_q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
  opt.replica_index = 1;
  RunRecord c = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
  CHECK(c.seed_key != a.seed_key);
  CHECK((c.final_q - a.final_q).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("iterates stay inside the 1/(1-gamma) ball") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  TrajectoryOptions opt;
  opt.horizon = 20000;
  opt.zeta_grid = {1.0};
  opt.checkpoints = {1, 10, 100, 1000, 5000, 10000, 20000};
  opt.keep_q_checkpoints = true;
  opt.master_seed = 5150;
  RunRecord rec = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
  const double bound = 1.0 / (1.0 - l.m.discount) + 1e-12;
  for (const Matrix& q : rec.q_checkpoints) {
    CHECK(q.cwiseAbs().maxCoeff() <= bound);
  }
  CHECK((rec.final_q.cwiseAbs().maxCoeff()) <= bound);
}

TEST_CASE("sandwich recursions bound the error for the whole run") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  for (std::uint64_t rep = 0; rep < 4; ++rep) {
    TrajectoryOptions opt;
    opt.horizon = 20000;
    opt.zeta_grid = {1.0};
    opt.track_sandwich = true;
    opt.master_seed = 31337;
    opt.replica_index = rep;
    RunRecord rec = run_trajectory(l.m, l.chain, sched, l.oracle, opt);
    CHECK(rec.sandwich_violation_count == 0);
  }
}

TEST_CASE("horizon and grid validation") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  TrajectoryOptions opt;
  opt.horizon = 0;
  CHECK_THROWS_AS(run_trajectory(l.m, l.chain, sched, l.oracle, opt), ConfigError);
  opt.horizon = 10;
  opt.zeta_grid = {0.8, 0.2};
  CHECK_THROWS_AS(run_trajectory(l.m, l.chain, sched, l.oracle, opt), ConfigError);
}
