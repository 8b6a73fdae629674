#include "qclt/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qclt/errors.hpp"
#include "qclt/rng.hpp"

namespace qclt {

Matrix async_q_step(const Matrix& q, const Triple& y, double alpha, const MdpModel& m) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("async_q_step: alpha outside [0, 1]");
  Matrix out = q;
  const double td = m.reward(y.s, y.a) + m.discount * q.row(y.sp).maxCoeff() - q(y.s, y.a);
  out(y.s, y.a) += alpha * td;
  return out;
}

std::vector<double> precompute_alphas(const StepsizeSchedule& sched, long long horizon) {
  std::vector<double> a(static_cast<std::size_t>(horizon));
  for (long long k = 0; k < horizon; ++k) a[static_cast<std::size_t>(k)] = sched.at(k);
  return a;
}

namespace {

struct KahanCell {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

}  // namespace

RunRecord run_trajectory(const MdpModel& m, const JointChain& chain,
                         const StepsizeSchedule& sched, const TheoryOracle& oracle,
                         const TrajectoryOptions& opts) {
  const long long K = opts.horizon;
  if (K < 1) throw ConfigError("run_trajectory: horizon must be >= 1");
  for (std::size_t g = 1; g < opts.zeta_grid.size(); ++g)
    if (opts.zeta_grid[g] < opts.zeta_grid[g - 1])
      throw ConfigError("run_trajectory: zeta grid must be ascending");

  const Index ns = m.n_states, na = m.n_actions, d = m.dim();
  // Row-major copies of the transition table and behavior policy keep the
  // inner loop on contiguous memory.
  std::vector<double> trans(static_cast<std::size_t>(d * ns));
  for (Index row = 0; row < d; ++row)
    for (Index sp = 0; sp < ns; ++sp)
      trans[static_cast<std::size_t>(row * ns + sp)] = m.transition(row, sp);
  std::vector<double> behav(static_cast<std::size_t>(ns * na));
  for (Index s = 0; s < ns; ++s)
    for (Index a = 0; a < na; ++a)
      behav[static_cast<std::size_t>(s * na + a)] = m.behavior_policy(s, a);
  std::vector<double> reward(static_cast<std::size_t>(d));
  for (Index s = 0; s < ns; ++s)
    for (Index a = 0; a < na; ++a)
      reward[static_cast<std::size_t>(flat_index(s, a, na))] = m.reward(s, a);
  const Vector q_star = flatten_q(oracle.q_star);
  const double gamma = m.discount;

  std::vector<double> q(static_cast<std::size_t>(d), 0.0);  // Q_0 = 0

  // Lazy per-entry accumulation of sum_{k=1}^{n} Delta_k: an entry's Delta
  // value is constant between its updates, so each update flushes
  // value * (#iterates covered) with one compensated add.
  std::vector<KahanCell> acc(static_cast<std::size_t>(d));
  std::vector<double> dval(static_cast<std::size_t>(d));
  std::vector<long long> vidx(static_cast<std::size_t>(d), 1);
  for (Index j = 0; j < d; ++j) dval[static_cast<std::size_t>(j)] = -q_star[j];

  RunRecord rec;
  rec.seed_key = SplitRng::derive_key(opts.master_seed, "trajectory", opts.replica_index);
  SplitRng rng(rec.seed_key);

  auto sample_row = [&rng](const double* probs, Index n) {
    const double u = rng.next_double();
    double accum = 0.0;
    for (Index i = 0; i < n; ++i) {
      accum += probs[i];
      if (u < accum) return i;
    }
    return n - 1;
  };

  Index s = opts.initial_state;
  if (s < 0) {
    std::vector<double> mu_b(static_cast<std::size_t>(ns));
    for (Index i = 0; i < ns; ++i) mu_b[static_cast<std::size_t>(i)] = chain.state_marginal[i];
    s = sample_row(mu_b.data(), ns);
  }

  // Zeta boundaries floor(zeta * K), ascending with the grid.
  std::vector<long long> bounds;
  bounds.reserve(opts.zeta_grid.size());
  for (double z : opts.zeta_grid)
    bounds.push_back(static_cast<long long>(std::floor(z * static_cast<double>(K))));
  rec.phi = Matrix::Zero(static_cast<Index>(opts.zeta_grid.size()), d);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(K));
  std::size_t next_bound = 0;
  auto snapshot_bounds = [&](long long iterate) {
    while (next_bound < bounds.size() && bounds[next_bound] == iterate) {
      for (Index j = 0; j < d; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double total =
            acc[ju].sum + dval[ju] * static_cast<double>(iterate + 1 - vidx[ju]);
        rec.phi(static_cast<Index>(next_bound), j) = total * inv_sqrt_k;
      }
      ++next_bound;
    }
  };
  snapshot_bounds(0);  // zeta small enough that the sum is empty

  std::vector<long long> checkpoints = opts.checkpoints;
  std::sort(checkpoints.begin(), checkpoints.end());
  std::size_t next_cp = 0;

  // Sandwich state (validation mode only).
  const bool sandwich = opts.track_sandwich;
  std::vector<double> delta, d_up, d_dn, bellman, vstar_gather, work_up, work_dn;
  std::vector<Index> pi_k(static_cast<std::size_t>(ns));
  const std::vector<Index>* pi_star = nullptr;
  std::vector<double> dvec(static_cast<std::size_t>(d));
  if (sandwich) {
    delta.resize(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) delta[static_cast<std::size_t>(j)] = -q_star[j];
    d_up = delta;
    d_dn = delta;
    bellman.resize(static_cast<std::size_t>(d));
    vstar_gather.resize(static_cast<std::size_t>(ns));
    work_up.resize(static_cast<std::size_t>(d));
    work_dn.resize(static_cast<std::size_t>(d));
    pi_star = &oracle.pi_star.action;
    for (Index j = 0; j < d; ++j) dvec[static_cast<std::size_t>(j)] = chain.visitation[j];
  }

  for (long long k = 0; k < K; ++k) {
    const double alpha =
        opts.alphas ? (*opts.alphas)[static_cast<std::size_t>(k)] : sched.at(k);

    const Index a = sample_row(&behav[static_cast<std::size_t>(s * na)], na);
    const Index row = flat_index(s, a, na);
    const Index sp = sample_row(&trans[static_cast<std::size_t>(row * ns)], ns);

    double v_sp = q[static_cast<std::size_t>(sp * na)];
    for (Index b = 1; b < na; ++b)
      v_sp = std::max(v_sp, q[static_cast<std::size_t>(sp * na + b)]);
    const double td_sample = reward[static_cast<std::size_t>(row)] + gamma * v_sp -
                             q[static_cast<std::size_t>(row)];

    if (sandwich) {
      // Advance the bounding recursions at Q_k before applying the update.
      for (Index st = 0; st < ns; ++st) {
        Index best = 0;
        for (Index b = 1; b < na; ++b)
          if (q[static_cast<std::size_t>(st * na + b)] >
              q[static_cast<std::size_t>(st * na + best)])
            best = b;
        pi_k[static_cast<std::size_t>(st)] = best;
      }
      // V(s') = max_a Q_k(s', a) for the Bellman image.
      std::vector<double>& vmax = vstar_gather;
      for (Index st = 0; st < ns; ++st)
        vmax[static_cast<std::size_t>(st)] =
            q[static_cast<std::size_t>(st * na + pi_k[static_cast<std::size_t>(st)])];
      for (Index j = 0; j < d; ++j) {
        double e = 0.0;
        const double* pr = &trans[static_cast<std::size_t>(j * ns)];
        for (Index st = 0; st < ns; ++st) e += pr[st] * vmax[static_cast<std::size_t>(st)];
        bellman[static_cast<std::size_t>(j)] =
            reward[static_cast<std::size_t>(j)] + gamma * e;
      }

      // noise = F_k - Fbar_k = e_(s,a) * Gamma - D (T(Q_k) - Q_k)
      // mid   = gamma D (P^pi_k - P^pi*) Delta_k  (upper recursion only)
      // M v   = v - alpha D v + alpha gamma D P^pi* v
      for (Index j = 0; j < d; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double* pr = &trans[ju * static_cast<std::size_t>(ns)];
        double pup = 0.0, pdn = 0.0, pmid = 0.0;
        for (Index st = 0; st < ns; ++st) {
          const auto stu = static_cast<std::size_t>(st);
          const Index a_k = pi_k[stu];
          const Index a_s = (*pi_star)[stu];
          pup += pr[st] * d_up[static_cast<std::size_t>(st * na + a_s)];
          pdn += pr[st] * d_dn[static_cast<std::size_t>(st * na + a_s)];
          pmid += pr[st] * (delta[static_cast<std::size_t>(st * na + a_k)] -
                            delta[static_cast<std::size_t>(st * na + a_s)]);
        }
        const double dj = dvec[ju];
        const double noise =
            (j == row ? td_sample : 0.0) - dj * (bellman[ju] - q[ju]);
        work_up[ju] = d_up[ju] - alpha * dj * d_up[ju] + alpha * gamma * dj * pup +
                      alpha * gamma * dj * pmid + alpha * noise;
        work_dn[ju] = d_dn[ju] - alpha * dj * d_dn[ju] + alpha * gamma * dj * pdn +
                      alpha * noise;
      }
      d_up.swap(work_up);
      d_dn.swap(work_dn);
    }

    // The update itself: one entry of Q changes.
    const double old_q = q[static_cast<std::size_t>(row)];
    const double new_q = old_q + alpha * td_sample;
    {
      const auto ju = static_cast<std::size_t>(row);
      acc[ju].add(dval[ju] * static_cast<double>(k + 1 - vidx[ju]));
      dval[ju] = new_q - q_star[row];
      vidx[ju] = k + 1;
    }
    q[static_cast<std::size_t>(row)] = new_q;
    s = sp;

    if (sandwich) {
      delta[static_cast<std::size_t>(row)] = new_q - q_star[row];
      for (Index j = 0; j < d; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (d_dn[ju] > delta[ju] + 1e-9 || delta[ju] > d_up[ju] + 1e-9) {
          ++rec.sandwich_violation_count;
          std::ostringstream os;
          os.precision(17);
          os << "sandwich violation at k=" << k + 1 << " entry " << j << ": down="
             << d_dn[ju] << " delta=" << delta[ju] << " up=" << d_up[ju]
             << " seed_key=" << rec.seed_key;
          throw InternalError(os.str());
        }
      }
    }

    snapshot_bounds(k + 1);
    while (next_cp < checkpoints.size() && checkpoints[next_cp] == k + 1) {
      double sup = 0.0;
      for (Index j = 0; j < d; ++j)
        sup = std::max(sup, std::abs(q[static_cast<std::size_t>(j)] - q_star[j]));
      rec.sup_error_trace.push_back(sup);
      if (opts.keep_q_checkpoints) {
        Vector qf(d);
        for (Index j = 0; j < d; ++j) qf[j] = q[static_cast<std::size_t>(j)];
        rec.q_checkpoints.push_back(unflatten_q(qf, ns, na));
      }
      ++next_cp;
    }
  }

  Vector qf(d);
  for (Index j = 0; j < d; ++j) qf[j] = q[static_cast<std::size_t>(j)];
  rec.final_q = unflatten_q(qf, ns, na);
  if (!opts.zeta_grid.empty())
    rec.final_averaged_error = rec.phi.row(rec.phi.rows() - 1).transpose();
  return rec;
}

}  // namespace qclt
