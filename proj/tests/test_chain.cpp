#include <doctest.h>

#include <cmath>

#include "qclt/chain.hpp"
#include "qclt/errors.hpp"
#include "qclt/mdp.hpp"

using namespace qclt;

namespace {

MdpModel default_fixture() {
  return load_mdp_fixture(std::string(FIXTURE_DIR) + "/default_3s2a.json");
}

// Stationary law by long power iteration, independent of the QR-based solve.
Vector power_stationary(const Matrix& kernel, int iters = 20000) {
  Vector mu = Vector::Constant(kernel.rows(), 1.0 / static_cast<double>(kernel.rows()));
  for (int i = 0; i < iters; ++i) mu = kernel.transpose() * mu;
  return mu / mu.sum();
}

}  // namespace

TEST_CASE("stationary distribution of a two-state chain with a closed form") {
  Matrix k(2, 2);
  k << 0.9, 0.1,
       0.5, 0.5;
  Vector mu = stationary_distribution(k);
  // Detailed balance of the net flow: mu0 * 0.1 = mu1 * 0.5.
  CHECK(mu[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(mu[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("joint kernel rows are built from pi_b and P exactly") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  const Index n = chain.dim();
  for (Index i = 0; i < n; ++i) {
    CHECK(chain.kernel.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    const Triple& yi = chain.triples[static_cast<std::size_t>(i)];
    for (Index j = 0; j < n; ++j) {
      const Triple& yj = chain.triples[static_cast<std::size_t>(j)];
      const double expected =
          (yj.s == yi.sp)
              ? m.behavior_policy(yj.s, yj.a) * m.transition(m.flat(yj.s, yj.a), yj.sp)
              : 0.0;
      CHECK(chain.kernel(i, j) == doctest::Approx(expected).epsilon(1e-14));
    }
  }
}

TEST_CASE("stationary law agrees with long power iteration") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  Vector mu = power_stationary(chain.kernel);
  CHECK((chain.stationary - mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(chain.stationary.sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK((chain.stationary.array() > 0.0).all());
}

TEST_CASE("visitation law factorizes as mu_b(s) pi_b(a|s) and floors at rho") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  // Independent state-chain stationary law under the behavior policy.
  Matrix state_kernel = Matrix::Zero(m.n_states, m.n_states);
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a)
      state_kernel.row(s) += m.behavior_policy(s, a) * m.transition.row(m.flat(s, a));
  Vector mu_b = power_stationary(state_kernel);
  CHECK(chain.visitation.sum() == doctest::Approx(1.0).epsilon(1e-12));
  double min_p = 1.0;
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a) {
      const double p = chain.visitation[m.flat(s, a)];
      CHECK(p == doctest::Approx(mu_b[s] * m.behavior_policy(s, a)).epsilon(1e-10));
      min_p = std::min(min_p, p);
    }
  CHECK(chain.rho == doctest::Approx(min_p).epsilon(1e-14));
  CHECK(chain.rho > 0.0);
  CHECK(chain.rho <= 1.0 / static_cast<double>(m.dim()) + 1e-12);
}

TEST_CASE("mixing time is found by the same TV scan done independently") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  for (double thr : {0.25, 0.05, 1e-3, 1e-6}) {
    const Index t = mixing_time(chain, thr);
    Matrix power = Matrix::Identity(chain.dim(), chain.dim());
    Index expected = 0;
    while (true) {
      double worst = 0.0;
      for (Index r = 0; r < power.rows(); ++r)
        worst = std::max(worst, tv_distance(power.row(r).transpose(), chain.stationary));
      if (worst <= thr) break;
      power = power * chain.kernel;
      ++expected;
    }
    CHECK(t == expected);
  }
}

TEST_CASE("mixing time is monotone in the threshold") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  Index prev = 0;
  for (double thr : {0.5, 0.1, 0.01, 1e-4, 1e-8}) {
    const Index t = mixing_time(chain, thr);
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("geometric envelope bounds the observed TV decay") {
  MdpModel m = default_fixture();
  JointChain chain = build_joint_chain(m);
  CHECK(chain.kappa > 0.0);
  CHECK(chain.kappa < 1.0);
  CHECK(chain.c0 >= 1.0 - 1e-12);
  Matrix power = Matrix::Identity(chain.dim(), chain.dim());
  for (Index t = 0; t <= 60; ++t) {
    double worst = 0.0;
    for (Index r = 0; r < power.rows(); ++r)
      worst = std::max(worst, tv_distance(power.row(r).transpose(), chain.stationary));
    const double envelope =
        std::max(chain.c0 * std::pow(chain.kappa, static_cast<double>(t)), 1e-13);
    CHECK(worst <= envelope * (1.0 + 1e-10));
    power = power * chain.kernel;
  }
}

TEST_CASE("tv distance basics") {
  Vector p(2), q(2);
  p << 1.0, 0.0;
  q << 0.0, 1.0;
  CHECK(tv_distance(p, q) == doctest::Approx(1.0));
  CHECK(tv_distance(p, p) == 0.0);
}

TEST_CASE("zero-probability behavior actions are rejected up front") {
  MdpModel m = default_fixture();
  m.behavior_policy(1, 0) = 0.0;
  m.behavior_policy(1, 1) = 1.0;
  CHECK_THROWS_AS(build_joint_chain(m), AssumptionError);
}

TEST_CASE("a reducible chain is rejected") {
  MdpModel m;
  m.n_states = 2;
  m.n_actions = 1;
  m.discount = 0.5;
  m.transition = Matrix(2, 2);
  m.transition << 1.0, 0.0,   // state 0 never leaves
                  0.0, 1.0;   // state 1 never leaves
  m.reward = Matrix::Constant(2, 1, 0.3);
  m.behavior_policy = Matrix::Constant(2, 1, 1.0);
  m.validate();
  CHECK_THROWS_AS(build_joint_chain(m), AssumptionError);
}
