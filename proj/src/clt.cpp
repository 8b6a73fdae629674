#include "qclt/clt.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

#include "qclt/errors.hpp"
#include "qclt/rng.hpp"

namespace qclt {

namespace {

double std_normal(SplitRng& rng) {
  // Uniform strictly inside (0, 1) so the quantile is always finite.
  const double u = static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  return normal_quantile(u);
}

// Striped replica partition: replica i always uses stream i, so the result
// is independent of the thread count.
template <typename Fn>
void for_each_replica(Index replicas, int parallelism, Fn fn) {
  const int degree = std::max(1, std::min<int>(parallelism, static_cast<int>(replicas)));
  if (degree == 1) {
    for (Index i = 0; i < replicas; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(degree));
  for (int t = 0; t < degree; ++t)
    pool.emplace_back([&, t] {
      for (Index i = t; i < replicas; i += degree) fn(i);
    });
  for (auto& th : pool) th.join();
}

double frob_rel_error(const Matrix& got, const Matrix& want) {
  const double scale = want.norm();
  if (scale == 0.0) return got.norm() == 0.0 ? 0.0 : got.norm();
  return (got - want).norm() / scale;
}

}  // namespace

Matrix replicate_endpoint(const MdpModel& m, const JointChain& chain,
                          const TheoryOracle& oracle, const StepsizeSchedule& sched,
                          long long horizon, Index replicas, std::uint64_t master_seed,
                          int parallelism, bool track_sandwich) {
  sched.validate_for_clt();
  if (replicas < 1) throw ConfigError("replicate_endpoint: replicas must be >= 1");
  const std::vector<double> alphas = precompute_alphas(sched, horizon);
  Matrix samples(replicas, m.dim());
  for_each_replica(replicas, parallelism, [&](Index i) {
    TrajectoryOptions opts;
    opts.horizon = horizon;
    opts.zeta_grid = {1.0};
    opts.track_sandwich = track_sandwich;
    opts.master_seed = master_seed;
    opts.replica_index = static_cast<std::uint64_t>(i);
    opts.alphas = &alphas;
    const RunRecord rec = run_trajectory(m, chain, sched, oracle, opts);
    samples.row(i) = rec.phi.row(0);
  });
  return samples;
}

double w1_projected(const Matrix& samples, const Matrix& limit_cov,
                    std::uint64_t direction_seed, int n_random) {
  const Index d = samples.cols();
  const Index r = samples.rows();
  std::vector<Vector> dirs;
  for (Index j = 0; j < d; ++j) {
    Vector e = Vector::Zero(d);
    e[j] = 1.0;
    dirs.push_back(e);
  }
  SplitRng rng(SplitRng::derive_key(direction_seed, "directions", 0));
  for (int i = 0; i < n_random; ++i) {
    Vector u(d);
    do {
      for (Index j = 0; j < d; ++j) u[j] = std_normal(rng);
    } while (u.norm() == 0.0);
    dirs.push_back(u / u.norm());
  }

  double worst = 0.0;
  std::vector<double> proj(static_cast<std::size_t>(r));
  for (const Vector& u : dirs) {
    for (Index i = 0; i < r; ++i) proj[static_cast<std::size_t>(i)] = samples.row(i).dot(u);
    const double var = u.dot(limit_cov * u);
    worst = std::max(worst, w1_empirical_vs_gaussian(proj, std::max(var, 0.0)));
  }
  return worst;
}

LineFit rate_fit(const std::vector<double>& w1_values, const std::vector<long long>& k_grid) {
  if (w1_values.size() != k_grid.size())
    throw ConfigError("rate_fit: mismatched grid sizes");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < w1_values.size(); ++i) {
    if (!(w1_values[i] > 0.0)) continue;  // excluded with a warning upstream
    lx.push_back(std::log(static_cast<double>(k_grid[i])));
    ly.push_back(std::log(w1_values[i]));
  }
  if (lx.size() < 2) throw ConfigError("rate_fit: fewer than 2 positive W1 values");
  return least_squares(lx, ly);
}

CltReport run_clt_experiment(const MdpModel& m, const JointChain& chain,
                             const TheoryOracle& oracle, const StepsizeSchedule& sched,
                             const std::vector<long long>& k_grid, Index replicas,
                             std::uint64_t master_seed, int parallelism) {
  CltReport report;
  std::vector<double> w1s;
  for (long long k : k_grid) {
    EndpointStats st;
    st.horizon = k;
    st.replicas = replicas;
    st.experiment_seed =
        SplitRng::derive_key(master_seed, "endpoint", static_cast<std::uint64_t>(k));
    const Matrix samples = replicate_endpoint(m, chain, oracle, sched, k, replicas,
                                              st.experiment_seed, parallelism);
    st.empirical_mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - st.empirical_mean.transpose();
    st.empirical_cov = centered.transpose() * centered / static_cast<double>(replicas - 1);
    st.cov_rel_error = frob_rel_error(st.empirical_cov, oracle.limit_cov);
    st.w1 = w1_projected(samples, oracle.limit_cov, st.experiment_seed);
    w1s.push_back(st.w1);
    report.per_horizon.push_back(std::move(st));
  }
  if (k_grid.size() >= 2) report.w1_fit = rate_fit(w1s, k_grid);
  return report;
}

FcltReport fclt_statistics(const Matrix& paths, const std::vector<double>& zeta_grid,
                           const Matrix& limit_cov, std::uint64_t master_seed,
                           Index brownian_paths) {
  const auto g_count = static_cast<Index>(zeta_grid.size());
  if (g_count < 2) throw ConfigError("fclt_statistics: zeta grid needs >= 2 points");
  const Index d = paths.cols() / g_count;
  const Index r = paths.rows();

  FcltReport rep;
  rep.zeta_grid = zeta_grid;
  rep.replicas = r;
  const double sigma_scale = limit_cov.norm();
  rep.degenerate_sigma = sigma_scale == 0.0;

  // Increments, the first one measured from Phi(0) = 0.
  std::vector<Matrix> incr;
  std::vector<double> len;
  for (Index g = 0; g < g_count; ++g) {
    Matrix block = paths.middleCols(g * d, d);
    if (g > 0) block -= paths.middleCols((g - 1) * d, d);
    incr.push_back(std::move(block));
    len.push_back(zeta_grid[static_cast<std::size_t>(g)] -
                  (g > 0 ? zeta_grid[static_cast<std::size_t>(g - 1)] : 0.0));
  }
  for (Index g = 0; g < g_count; ++g) {
    const Matrix centered = incr[static_cast<std::size_t>(g)].rowwise() -
                            incr[static_cast<std::size_t>(g)].colwise().mean();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(r - 1);
    rep.increment_cov_errors.push_back(
        frob_rel_error(cov, len[static_cast<std::size_t>(g)] * limit_cov));
  }
  for (Index g = 0; g < g_count; ++g)
    for (Index h = g + 1; h < g_count; ++h) {
      const Matrix cg = incr[static_cast<std::size_t>(g)].rowwise() -
                        incr[static_cast<std::size_t>(g)].colwise().mean();
      const Matrix ch = incr[static_cast<std::size_t>(h)].rowwise() -
                        incr[static_cast<std::size_t>(h)].colwise().mean();
      const Matrix cross = cg.transpose() * ch / static_cast<double>(r - 1);
      const double rel = sigma_scale > 0.0 ? cross.norm() / sigma_scale : cross.norm();
      rep.max_cross_cov_rel = std::max(rep.max_cross_cov_rel, rel);
    }

  // Path functional: running max of the normalized coordinate projections,
  // referenced against a simulated standard-Brownian running max on the grid.
  if (!rep.degenerate_sigma && brownian_paths > 0) {
    std::vector<double> ref(static_cast<std::size_t>(brownian_paths));
    SplitRng rng(SplitRng::derive_key(master_seed, "brownian-oracle", 0));
    for (Index p = 0; p < brownian_paths; ++p) {
      double b = 0.0, mx = -1e300;
      for (Index g = 0; g < g_count; ++g) {
        b += std::sqrt(len[static_cast<std::size_t>(g)]) * std_normal(rng);
        mx = std::max(mx, b);
      }
      ref[static_cast<std::size_t>(p)] = mx;
    }
    for (Index j = 0; j < d; ++j) {
      const double var = limit_cov(j, j);
      if (!(var > 0.0)) continue;
      const double sd = std::sqrt(var);
      std::vector<double> fn(static_cast<std::size_t>(r));
      for (Index i = 0; i < r; ++i) {
        double mx = -1e300;
        for (Index g = 0; g < g_count; ++g)
          mx = std::max(mx, paths(i, g * d + j) / sd);
        fn[static_cast<std::size_t>(i)] = mx;
      }
      rep.functional_ks.push_back(ks_distance(fn, ref));
    }
  }
  return rep;
}

FcltReport fclt_marginals(const MdpModel& m, const JointChain& chain,
                          const TheoryOracle& oracle, const StepsizeSchedule& sched,
                          long long horizon, Index replicas,
                          const std::vector<double>& zeta_grid, std::uint64_t master_seed,
                          int parallelism, Index brownian_paths) {
  sched.validate_for_clt();
  if (zeta_grid.size() < 2) throw ConfigError("fclt_marginals: zeta grid needs >= 2 points");
  const auto g_count = static_cast<Index>(zeta_grid.size());
  const Index d = m.dim();
  const std::vector<double> alphas = precompute_alphas(sched, horizon);
  const std::uint64_t seed =
      SplitRng::derive_key(master_seed, "fclt", static_cast<std::uint64_t>(horizon));
  Matrix paths(replicas, g_count * d);
  for_each_replica(replicas, parallelism, [&](Index i) {
    TrajectoryOptions opts;
    opts.horizon = horizon;
    opts.zeta_grid = zeta_grid;
    opts.master_seed = seed;
    opts.replica_index = static_cast<std::uint64_t>(i);
    opts.alphas = &alphas;
    const RunRecord rec = run_trajectory(m, chain, sched, oracle, opts);
    for (Index g = 0; g < g_count; ++g) paths.row(i).segment(g * d, d) = rec.phi.row(g);
  });
  FcltReport rep = fclt_statistics(paths, zeta_grid, oracle.limit_cov, seed, brownian_paths);
  rep.horizon = horizon;
  return rep;
}

TermsReport diagnostics_terms(const MdpModel& m, const JointChain& chain,
                              const TheoryOracle& oracle, const StepsizeSchedule& sched,
                              long long horizon, std::uint64_t master_seed) {
  const Index d = m.dim();
  const Index n = chain.dim();
  const long long K = horizon;
  if (K < 1) throw ConfigError("diagnostics_terms: horizon must be >= 1");

  // Fundamental matrix under the sign convention the oracle certified.
  const double sign = oracle.poisson_sign == '+' ? 1.0 : -1.0;
  Eigen::PartialPivLU<Matrix> fund(Matrix::Identity(n, n) - chain.kernel +
                                   sign * Vector::Ones(n) * chain.stationary.transpose());
  Eigen::PartialPivLU<Matrix> a_lu(oracle.a_matrix);
  const Matrix a_inv = a_lu.inverse();

  // Triple lookup (s, a, s') -> chain index.
  std::unordered_map<long long, Index> triple_of;
  for (Index i = 0; i < n; ++i) {
    const Triple& t = chain.triples[static_cast<std::size_t>(i)];
    triple_of[(t.s * m.n_actions + t.a) * m.n_states + t.sp] = i;
  }
  auto lookup = [&](Index s, Index a, Index sp) {
    return triple_of.at((s * m.n_actions + a) * m.n_states + sp);
  };

  const Vector q_star = flatten_q(oracle.q_star);
  const Vector dvec = chain.visitation;

  // Per-iterate vectors kept for the backward Psi pass.
  std::vector<Vector> z_vals, tele_a, tele_b;  // Z_k, X_k(Y_k)-X_{k+1}(Y_{k+1}), drift
  z_vals.reserve(static_cast<std::size_t>(K));
  tele_a.reserve(static_cast<std::size_t>(K));
  tele_b.reserve(static_cast<std::size_t>(K));

  SplitRng rng(SplitRng::derive_key(master_seed, "instrumented", 0));
  Matrix q = Matrix::Zero(m.n_states, m.n_actions);
  Index s = 0;
  {
    Vector mu_b = chain.state_marginal;
    s = rng.sample(mu_b);
  }

  auto poisson_at = [&](const Matrix& q_now) {
    // X(i) rows for the current iterate: fundamental solve against the
    // centered one-sample noise G(i) = F(Q, i) - Fbar(Q).
    const Matrix t_img = bellman_apply(q_now, m);
    const Vector drift = dvec.cwiseProduct(flatten_q(t_img) - flatten_q(q_now));
    Matrix g(n, d);
    for (Index i = 0; i < n; ++i) {
      const Triple& t = chain.triples[static_cast<std::size_t>(i)];
      Vector row = -drift;
      row[m.flat(t.s, t.a)] +=
          m.reward(t.s, t.a) + m.discount * q_now.row(t.sp).maxCoeff() - q_now(t.s, t.a);
      g.row(i) = row.transpose();
    }
    return Matrix(fund.solve(g));
  };

  Matrix x_prev;       // X_k rows while processing step k
  Index y_prev = -1;   // Y_{k-1}
  Vector first_x_y0;
  Vector t1_sum = Vector::Zero(d), t1_vec;
  Vector t2_sum = Vector::Zero(d), t3b_sum = Vector::Zero(d);
  {
    // Term (1): sum over k of prod_{i<k} (I - alpha_i A) applied to Delta_0.
    t1_vec = -q_star;
  }

  for (long long k = 0; k < K; ++k) {
    const double alpha = sched.at(k);
    const Index a = rng.sample(m.behavior_policy.row(s));
    const Index sp = rng.sample(m.transition.row(m.flat(s, a)));
    const Index y = lookup(s, a, sp);

    const Matrix x_now = poisson_at(q);
    const Vector delta = flatten_q(q) - q_star;

    // Z_k = gamma D (P^{pi_k} - P^{pi*}) Delta_k.
    const PolicyMatrix pi_k = greedy_policy(q, m);
    const Vector z = m.discount *
                     dvec.cwiseProduct((pi_k.induced_kernel - oracle.pi_star.induced_kernel) * delta);
    z_vals.push_back(z);
    t2_sum += a_inv * z;

    if (k == 0) first_x_y0 = x_now.row(y).transpose();
    if (k > 0) {
      // Pair X_{k-1}(Y_k) with X_k(Y_k): drift and telescope pieces for k-1.
      const Vector drift_piece = (x_now.row(y) - x_prev.row(y)).transpose();
      tele_b.push_back(drift_piece);
      t3b_sum += a_inv * drift_piece;
      tele_a.push_back((x_prev.row(y_prev) - x_now.row(y)).transpose());
    }

    // Apply the asynchronous update.
    q = async_q_step(q, chain.triples[static_cast<std::size_t>(y)], alpha, m);
    x_prev = x_now;
    y_prev = y;
    s = sp;

    t1_vec -= alpha * (oracle.a_matrix * t1_vec);
    t1_sum += t1_vec;
  }
  // Close the telescopes: sample Y_K and evaluate X_K at Q_K.
  Index y_last;
  {
    const Index a = rng.sample(m.behavior_policy.row(s));
    const Index sp = rng.sample(m.transition.row(m.flat(s, a)));
    y_last = lookup(s, a, sp);
    const Matrix x_final = poisson_at(q);
    const Vector drift_piece = (x_final.row(y_last) - x_prev.row(y_last)).transpose();
    tele_b.push_back(drift_piece);
    t3b_sum += a_inv * drift_piece;
    tele_a.push_back((x_prev.row(y_prev) - x_final.row(y_last)).transpose());
    x_prev = x_final;
  }

  // Backward Psi recursion accumulating the (Psi_k - A^-1)-weighted sums.
  Vector t4_sum = Vector::Zero(d), t5a_sum = Vector::Zero(d), t5b_sum = Vector::Zero(d);
  Matrix psi_next = Matrix::Zero(d, d);
  for (long long k = K - 1; k >= 0; --k) {
    const double ak = sched.at(k);
    const double ak1 = sched.at(k + 1);
    const Matrix psi_k = ak * (Matrix::Identity(d, d) +
                               (Matrix::Identity(d, d) - ak1 * oracle.a_matrix) *
                                   (psi_next / ak1));
    const Matrix gap = psi_k - a_inv;
    t4_sum += gap * z_vals[static_cast<std::size_t>(k)];
    t5a_sum += gap * tele_a[static_cast<std::size_t>(k)];
    t5b_sum += gap * tele_b[static_cast<std::size_t>(k)];
    psi_next = psi_k;
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(K));
  TermsReport rep;
  rep.horizon = K;
  rep.term1 = scale * t1_sum.cwiseAbs().maxCoeff();
  rep.term2 = scale * t2_sum.cwiseAbs().maxCoeff();
  rep.term3a = scale * (a_inv * (first_x_y0 - x_prev.row(y_last).transpose()))
                           .cwiseAbs()
                           .maxCoeff();
  rep.term3b = scale * t3b_sum.cwiseAbs().maxCoeff();
  rep.term4 = scale * t4_sum.cwiseAbs().maxCoeff();
  rep.term5a = scale * t5a_sum.cwiseAbs().maxCoeff();
  rep.term5b = scale * t5b_sum.cwiseAbs().maxCoeff();
  return rep;
}

ErrorDecay error_decay_experiment(const MdpModel& m, const JointChain& chain,
                                  const TheoryOracle& oracle, const StepsizeSchedule& sched,
                                  const std::vector<long long>& checkpoints, Index replicas,
                                  std::uint64_t master_seed, int parallelism) {
  if (checkpoints.empty()) throw ConfigError("error_decay_experiment: no checkpoints");
  std::vector<long long> cps = checkpoints;
  std::sort(cps.begin(), cps.end());
  const long long horizon = cps.back();
  const std::vector<double> alphas = precompute_alphas(sched, horizon);
  Matrix sup(replicas, static_cast<Index>(cps.size()));
  for_each_replica(replicas, parallelism, [&](Index i) {
    TrajectoryOptions opts;
    opts.horizon = horizon;
    opts.zeta_grid = {1.0};
    opts.checkpoints = cps;
    opts.master_seed = master_seed;
    opts.replica_index = static_cast<std::uint64_t>(i);
    opts.alphas = &alphas;
    const RunRecord rec = run_trajectory(m, chain, sched, oracle, opts);
    for (std::size_t c = 0; c < cps.size(); ++c)
      sup(i, static_cast<Index>(c)) = rec.sup_error_trace[c];
  });

  ErrorDecay out;
  out.checkpoints = cps;
  std::vector<double> lx, ly;
  for (std::size_t c = 0; c < cps.size(); ++c) {
    const double mean = sup.col(static_cast<Index>(c)).mean();
    out.mean_sup_error.push_back(mean);
    const Index t_k = mixing_time(chain, sched.at(cps[c]));
    out.normalized_error.push_back(mean * std::sqrt(static_cast<double>(cps[c])) /
                                   std::sqrt(static_cast<double>(std::max<Index>(t_k, 1))));
    lx.push_back(std::log(static_cast<double>(cps[c])));
    ly.push_back(std::log(mean));
  }
  out.loglog_fit = least_squares(lx, ly);
  return out;
}

MdsDiagnostics mds_diagnostics(const MdpModel& m, const JointChain& chain,
                               const TheoryOracle& oracle, long long steps,
                               std::uint64_t master_seed) {
  const Index d = m.dim();
  const Index n = chain.dim();
  const Matrix cond_mean = chain.kernel * oracle.poisson_x;

  SplitRng rng(SplitRng::derive_key(master_seed, "stationary-mds", 0));
  Index y = rng.sample(chain.stationary);

  Vector mean_sum = Vector::Zero(d);
  Matrix outer_sum = Matrix::Zero(d, d);
  Matrix lag_sum = Matrix::Zero(d, d);
  Vector prev = Vector::Zero(d);
  (void)n;
  for (long long k = 0; k < steps; ++k) {
    const Index y_next = rng.sample(chain.kernel.row(y));
    const Vector mk = (oracle.poisson_x.row(y_next) - cond_mean.row(y)).transpose();
    mean_sum += mk;
    outer_sum.noalias() += mk * mk.transpose();
    if (k > 0) lag_sum.noalias() += prev * mk.transpose();
    prev = mk;
    y = y_next;
  }
  const double inv = 1.0 / static_cast<double>(steps);
  MdsDiagnostics rep;
  rep.steps = steps;
  rep.mean_sup = (mean_sum * inv).cwiseAbs().maxCoeff();
  const double sigma_max = std::sqrt(oracle.sigma.diagonal().maxCoeff());
  rep.mean_bound = 5.0 * sigma_max / std::sqrt(static_cast<double>(steps));
  const double sigma_norm = oracle.sigma.norm();
  rep.lag1_rel = sigma_norm > 0.0
                     ? (lag_sum / static_cast<double>(steps - 1)).norm() / sigma_norm
                     : 0.0;
  rep.empirical_sigma_rel_error =
      sigma_norm > 0.0 ? (outer_sum * inv - oracle.sigma).norm() / sigma_norm : 0.0;
  return rep;
}

}  // namespace qclt
