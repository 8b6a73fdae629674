#include <doctest.h>

#include <cmath>
#include <vector>

#include "qclt/chain.hpp"
#include "qclt/engine.hpp"
#include "qclt/mdp.hpp"
#include "qclt/oracle.hpp"
#include "qclt/rng.hpp"

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

Matrix random_q(SplitRng& rng, Index ns, Index na) {
  Matrix q(ns, na);
  for (Index s = 0; s < ns; ++s)
    for (Index a = 0; a < na; ++a) q(s, a) = 2.0 * (rng.next_double() - 0.5);
  return q;
}

}  // namespace

TEST_CASE("F(Q, y) replaces only the visited entry by the empirical image") {
  const Lab& l = lab();
  SplitRng rng(31);
  Matrix q = random_q(rng, 3, 2);
  for (const Triple& y : l.chain.triples) {
    Matrix f = f_operator(q, y, l.m);
    const double want = l.m.reward(y.s, y.a) + l.m.discount * q.row(y.sp).maxCoeff();
    CHECK(f(y.s, y.a) == doctest::Approx(want).epsilon(1e-15));
    f(y.s, y.a) = q(y.s, y.a);
    CHECK((f - q).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("stationary mean of F equals D T(Q) + (I - D) Q") {
  const Lab& l = lab();
  SplitRng rng(32);
  for (int t = 0; t < 100; ++t) {
    Matrix q = random_q(rng, 3, 2);
    Vector fb = f_bar(q, l.chain, l.m);
    // Independent evaluation straight from the definition.
    Vector direct = Vector::Zero(l.m.dim());
    for (Index i = 0; i < l.chain.dim(); ++i)
      direct += l.chain.stationary[i] *
                flatten_q(f_operator(q, l.chain.triples[static_cast<std::size_t>(i)], l.m));
    CHECK((fb - direct).cwiseAbs().maxCoeff() < 1e-12);
    // And against the matrix form assembled here.
    Vector tq = flatten_q(bellman_apply(q, l.m));
    Vector qv = flatten_q(q);
    Vector matrix_form =
        l.chain.visitation.asDiagonal() * tq + qv - l.chain.visitation.asDiagonal() * qv;
    CHECK((fb - matrix_form).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("the averaged field fixes Q*") {
  const Lab& l = lab();
  Vector fb = f_bar(l.oracle.q_star, l.chain, l.m);
  CHECK((fb - flatten_q(l.oracle.q_star)).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("poisson solution satisfies the equation it claims to solve") {
  const Lab& l = lab();
  const Matrix& x = l.oracle.poisson_x;
  Vector fbar = f_bar(l.oracle.q_star, l.chain, l.m);
  double worst = 0.0;
  for (Index i = 0; i < l.chain.dim(); ++i) {
    Vector lhs = flatten_q(f_operator(l.oracle.q_star,
                                      l.chain.triples[static_cast<std::size_t>(i)], l.m)) -
                 fbar;
    Vector rhs = x.row(i).transpose();
    for (Index j = 0; j < l.chain.dim(); ++j)
      rhs -= l.chain.kernel(i, j) * x.row(j).transpose();
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-10);
  CHECK(l.oracle.poisson_residual <= 1e-10);
}

TEST_CASE("A equals D(I - gamma P^pi*) and obeys the inverse norm bound") {
  const Lab& l = lab();
  Matrix d = Matrix(l.chain.visitation.asDiagonal());
  Matrix expect = d - l.m.discount * d * l.oracle.pi_star.induced_kernel;
  CHECK((l.oracle.a_matrix - expect).cwiseAbs().maxCoeff() < 1e-14);
  Matrix inv = l.oracle.a_matrix.partialPivLu().inverse();
  const double inf_norm = inv.cwiseAbs().rowwise().sum().maxCoeff();
  CHECK(inf_norm == doctest::Approx(l.oracle.a_inv_inf_norm).epsilon(1e-12));
  CHECK(inf_norm <= 1.0 / ((1.0 - l.m.discount) * l.chain.rho) + 1e-9);
}

TEST_CASE("noise covariance is symmetric PSD and matches a long simulation") {
  const Lab& l = lab();
  const Matrix& sigma = l.oracle.sigma;
  CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);

  // Independent estimator: time-average of M_k M_k^T along one stationary
  // trajectory of the joint chain, M_k = X(Y_{k+1}) - E[X(Y_{k+1}) | Y_k].
  Matrix cond = l.chain.kernel * l.oracle.poisson_x;  // row i: E[X(Y1)|Y0=i]
  SplitRng rng(909);
  Index y = rng.sample(l.chain.stationary);
  const long long steps = 2000000;
  Matrix acc = Matrix::Zero(l.m.dim(), l.m.dim());
  for (long long k = 0; k < steps; ++k) {
    const Index yn = rng.sample(l.chain.kernel.row(y));
    Vector mk = l.oracle.poisson_x.row(yn).transpose() - cond.row(y).transpose();
    acc += mk * mk.transpose();
    y = yn;
  }
  acc /= static_cast<double>(steps);
  CHECK((acc - sigma).norm() / sigma.norm() < 0.02);
}

TEST_CASE("limit law solves A Lambda A^T = Sigma and the square root squares back") {
  const Lab& l = lab();
  Matrix recon = l.oracle.a_matrix * l.oracle.limit_cov * l.oracle.a_matrix.transpose();
  CHECK((recon - l.oracle.sigma).norm() / l.oracle.sigma.norm() < 1e-10);
  Matrix sq = l.oracle.limit_sqrt * l.oracle.limit_sqrt;
  CHECK((sq - l.oracle.limit_cov).norm() / l.oracle.limit_cov.norm() < 1e-8);
  CHECK((l.oracle.limit_sqrt - l.oracle.limit_sqrt.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("psi recursion equals the direct product sum on a short horizon") {
  const Lab& l = lab();
  StepsizeSchedule sched{8.0, 23.0, 2.0 / 3.0, false};
  const long long K = 200;
  std::vector<long long> probes = {0, 10, 50, 150, 199};
  std::vector<PsiProbe> probe_rows = psi_diagnostics(
      sched, l.oracle.a_matrix, l.chain.rho, l.m.discount, K, probes);
  REQUIRE(probe_rows.size() == probes.size());
  const Index d = l.m.dim();
  Matrix a_inv = l.oracle.a_matrix.partialPivLu().inverse();
  for (std::size_t pi = 0; pi < probes.size(); ++pi) {
    const long long i = probes[pi];
    // Psi_i^K = alpha_i sum_{k=i+1}^{K} prod_{j=i+1}^{k-1} (I - alpha_j A).
    Matrix sum = Matrix::Zero(d, d);
    Matrix prod = Matrix::Identity(d, d);
    for (long long k = i + 1; k <= K; ++k) {
      sum += prod;
      prod = (Matrix::Identity(d, d) - sched.at(k) * l.oracle.a_matrix) * prod;
    }
    Matrix psi = sched.at(i) * sum;
    const double gap = (psi - a_inv).cwiseAbs().rowwise().sum().maxCoeff();
    CHECK(probe_rows[pi].index == i);
    CHECK(probe_rows[pi].gap_to_a_inv == doctest::Approx(gap).epsilon(1e-8));
    CHECK(std::isfinite(probe_rows[pi].envelope_gap));
    CHECK(std::isfinite(probe_rows[pi].envelope_diff));
  }
}

TEST_CASE("oracle JSON dump round-trips every number exactly") {
  const Lab& l = lab();
  TheoryOracle back = oracle_from_json(oracle_to_json(l.oracle));
  CHECK((back.q_star - l.oracle.q_star).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.a_matrix - l.oracle.a_matrix).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.poisson_x - l.oracle.poisson_x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sigma - l.oracle.sigma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.limit_cov - l.oracle.limit_cov).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.limit_sqrt - l.oracle.limit_sqrt).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.poisson_sign == l.oracle.poisson_sign);
  CHECK(back.poisson_residual == l.oracle.poisson_residual);
  CHECK(back.a_inv_inf_norm == l.oracle.a_inv_inf_norm);
  CHECK(back.pi_star.action == l.oracle.pi_star.action);
}

TEST_CASE("poisson norm finiteness constant from the mixing envelope") {
  const Lab& l = lab();
  const double x_norm = l.oracle.poisson_x.cwiseAbs().maxCoeff();
  CHECK(std::isfinite(x_norm));
  CHECK(x_norm * (1.0 - l.m.discount) * (1.0 - l.chain.kappa) > 0.0);
}
