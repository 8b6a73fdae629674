#include "qclt/chain.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "qclt/errors.hpp"

namespace qclt {

namespace {

// Strong connectivity of the support digraph: every node reachable from node 0
// and node 0 reachable from every node. Returns an unreachable node or -1.
Index find_unreachable(const Matrix& kernel, bool transpose) {
  const Index n = kernel.rows();
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<Index> q;
  q.push(0);
  seen[0] = 1;
  while (!q.empty()) {
    const Index u = q.front();
    q.pop();
    for (Index v = 0; v < n; ++v) {
      const double w = transpose ? kernel(v, u) : kernel(u, v);
      if (w > 0.0 && !seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        q.push(v);
      }
    }
  }
  for (Index i = 0; i < n; ++i)
    if (!seen[static_cast<std::size_t>(i)]) return i;
  return -1;
}

// Period of a strongly connected digraph: gcd over all support edges (u, v)
// of level[u] + 1 - level[v] on a BFS from node 0. Aperiodic iff 1.
Index chain_period(const Matrix& kernel) {
  const Index n = kernel.rows();
  std::vector<Index> level(static_cast<std::size_t>(n), -1);
  std::queue<Index> q;
  q.push(0);
  level[0] = 0;
  while (!q.empty()) {
    const Index u = q.front();
    q.pop();
    for (Index v = 0; v < n; ++v)
      if (kernel(u, v) > 0.0 && level[static_cast<std::size_t>(v)] < 0) {
        level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
  }
  Index g = 0;
  for (Index u = 0; u < n; ++u)
    for (Index v = 0; v < n; ++v)
      if (kernel(u, v) > 0.0) {
        const Index d = level[static_cast<std::size_t>(u)] + 1 -
                        level[static_cast<std::size_t>(v)];
        g = std::gcd(g, d < 0 ? -d : d);
      }
  return g == 0 ? 1 : g;
}

double max_row_tv(const Matrix& powered, const Vector& stationary) {
  double worst = 0.0;
  for (Index i = 0; i < powered.rows(); ++i) {
    const double tv = 0.5 * (powered.row(i).transpose() - stationary).cwiseAbs().sum();
    worst = std::max(worst, tv);
  }
  return worst;
}

}  // namespace

double tv_distance(const Vector& p, const Vector& q) {
  return 0.5 * (p - q).cwiseAbs().sum();
}

Vector stationary_distribution(const Matrix& kernel) {
  const Index n = kernel.rows();
  // Solve mu^T (P - I) = 0 with sum(mu) = 1 as an overdetermined system.
  Matrix sys(n + 1, n);
  sys.topRows(n) = (kernel - Matrix::Identity(n, n)).transpose();
  sys.row(n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs[n] = 1.0;
  Vector mu = sys.colPivHouseholderQr().solve(rhs);
  auto residual = [&](const Vector& v) {
    return (kernel.transpose() * v - v).cwiseAbs().sum();
  };
  if (!(mu.minCoeff() >= -1e-12) || residual(mu) > 1e-12) {
    // Fall back to power iteration.
    Vector v = Vector::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < 1000000; ++it) {
      Vector next = kernel.transpose() * v;
      next /= next.sum();
      if (tv_distance(next, v) <= 1e-15) {
        v = next;
        break;
      }
      v = next;
    }
    if (residual(v) > 1e-12)
      throw InternalError("stationary_distribution: both direct solve and power iteration failed");
    mu = v;
  }
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();
  return mu;
}

JointChain build_joint_chain(const MdpModel& m, Index mixing_horizon) {
  m.validate();
  JointChain chain;
  // Every (s,a) must be visited at stationarity for rho > 0; a pair with
  // pi_b(a|s) = 0 can never satisfy this, so refuse it up front.
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a)
      if (m.behavior_policy(s, a) <= 0.0) {
        std::ostringstream os;
        os << "behavior policy never plays action " << a << " in state " << s
           << "; exploration floor rho would be 0";
        throw AssumptionError(os.str());
      }
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a)
      for (Index sp = 0; sp < m.n_states; ++sp)
        if (m.transition(m.flat(s, a), sp) > 0.0) chain.triples.push_back({s, a, sp});

  const Index n = chain.dim();
  chain.kernel = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const Triple& ti = chain.triples[static_cast<std::size_t>(i)];
    for (Index j = 0; j < n; ++j) {
      const Triple& tj = chain.triples[static_cast<std::size_t>(j)];
      if (tj.s != ti.sp) continue;
      chain.kernel(i, j) = m.behavior_policy(tj.s, tj.a) * m.transition(m.flat(tj.s, tj.a), tj.sp);
    }
  }

  const Index bad_fwd = find_unreachable(chain.kernel, false);
  const Index bad_bwd = find_unreachable(chain.kernel, true);
  if (bad_fwd >= 0 || bad_bwd >= 0) {
    const Index bad = bad_fwd >= 0 ? bad_fwd : bad_bwd;
    const Triple& t = chain.triples[static_cast<std::size_t>(bad)];
    std::ostringstream os;
    os << "joint chain is reducible: triple (s=" << t.s << ", a=" << t.a
       << ", s'=" << t.sp << ") is not in a single communicating class";
    throw AssumptionError(os.str());
  }
  const Index period = chain_period(chain.kernel);
  if (period != 1) {
    std::ostringstream os;
    os << "joint chain is periodic with period " << period;
    throw AssumptionError(os.str());
  }

  chain.stationary = stationary_distribution(chain.kernel);
  chain.visitation = Vector::Zero(m.dim());
  chain.state_marginal = Vector::Zero(m.n_states);
  for (Index i = 0; i < n; ++i) {
    const Triple& t = chain.triples[static_cast<std::size_t>(i)];
    chain.visitation[m.flat(t.s, t.a)] += chain.stationary[i];
    chain.state_marginal[t.s] += chain.stationary[i];
  }
  chain.rho = chain.visitation.minCoeff();
  if (!(chain.rho > 0.0)) {
    throw AssumptionError("exploration floor rho is 0 despite full-support policy; "
                          "some state is unreachable");
  }

  auto [c0, kappa] = geometric_mixing_constants(chain.kernel, chain.stationary, mixing_horizon);
  chain.c0 = c0;
  chain.kappa = kappa;
  return chain;
}

Index mixing_time(const JointChain& chain, double threshold, Index cap) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("mixing_time: threshold must lie in (0, 1]");
  const Index n = chain.dim();
  Matrix power = Matrix::Identity(n, n);
  for (Index t = 0; t <= cap; ++t) {
    const double tv = max_row_tv(power, chain.stationary);
    if (tv <= threshold) return t;
    power = power * chain.kernel;
  }
  std::ostringstream os;
  os << "mixing_time: cap " << cap << " exceeded; TV at cap = "
     << max_row_tv(power, chain.stationary);
  throw InternalError(os.str());
}

std::pair<double, double> geometric_mixing_constants(const Matrix& kernel,
                                                     const Vector& stationary,
                                                     Index horizon) {
  if (horizon < 2) throw ConfigError("geometric_mixing_constants: horizon must be >= 2");
  const Index n = kernel.rows();

  std::vector<double> tv(static_cast<std::size_t>(horizon) + 1);
  Matrix power = Matrix::Identity(n, n);
  for (Index t = 0; t <= horizon; ++t) {
    tv[static_cast<std::size_t>(t)] = max_row_tv(power, stationary);
    power = power * kernel;
  }

  double kappa;
  bool degenerate = true;
  for (Index t = 1; t <= horizon; ++t)
    if (tv[static_cast<std::size_t>(t)] > 0.0) degenerate = false;
  if (degenerate) {
    kappa = 1e-6;  // identical-rows kernel: any kappa works
  } else {
    // Second-largest eigenvalue modulus, inflated 1% to absorb non-normality
    // transients; the envelope re-check below is the safety net.
    Eigen::EigenSolver<Matrix> es(kernel, /*computeEigenvectors=*/false);
    std::vector<double> mods;
    for (Index i = 0; i < n; ++i) mods.push_back(std::abs(es.eigenvalues()[i]));
    std::sort(mods.begin(), mods.end(), std::greater<>());
    const double slem = n > 1 ? mods[1] : 0.0;
    kappa = std::min(1.01 * slem, 1.0 - 1e-12);
    kappa = std::max(kappa, 1e-6);
  }
  if (kappa >= 1.0)
    throw InternalError("geometric_mixing_constants: kappa >= 1 after capping");

  // Fit c0 only where TV is still above the matrix-power noise floor;
  // dividing a ~1e-16 residual by kappa^t would blow c0 up for free.
  constexpr double noise_floor = 1e-13;
  double c0 = tv[0];
  for (Index t = 0; t <= horizon; ++t) {
    const double v = tv[static_cast<std::size_t>(t)];
    if (v > noise_floor)
      c0 = std::max(c0, v / std::pow(kappa, static_cast<double>(t)));
  }

  for (Index t = 0; t <= horizon; ++t) {
    const double bound =
        std::max(c0 * std::pow(kappa, static_cast<double>(t)), noise_floor);
    if (tv[static_cast<std::size_t>(t)] > bound * (1.0 + 1e-12))
      throw InternalError("geometric_mixing_constants: envelope re-check failed");
  }
  return {c0, kappa};
}

std::string chain_report(const JointChain& chain, const MdpModel& m) {
  std::ostringstream os;
  os.precision(17);
  os << "joint_chain_triples " << chain.dim() << "\n";
  os << "rho " << chain.rho << "\n";
  os << "c0 " << chain.c0 << "\n";
  os << "kappa " << chain.kappa << "\n";
  os << "assumption2 pass\n";
  os << "visitation";
  for (Index i = 0; i < chain.visitation.size(); ++i) os << " " << chain.visitation[i];
  os << "\n";
  os << "mixing_time_table threshold:t\n";
  for (double thr : {0.5, 0.25, 0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-6}) {
    os << "  " << thr << " " << mixing_time(chain, thr) << "\n";
  }
  (void)m;
  return os.str();
}

}  // namespace qclt
