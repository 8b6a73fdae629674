#pragma once

#include <string>
#include <vector>

#include "qclt/types.hpp"

namespace qclt {

/// Finite discounted MDP <S, A, P, r, gamma> together with the fixed behavior
/// policy that generates trajectories. Immutable after construction.
struct MdpModel {
  Index n_states = 0;
  Index n_actions = 0;
  // transition.row(flat_index(s, a)) is P(. | s, a); n_states*n_actions x n_states.
  Matrix transition;
  // reward(s, a) in [0, 1].
  Matrix reward;
  double discount = 0.0;
  // behavior_policy.row(s) is pi_b(. | s).
  Matrix behavior_policy;

  Index flat(Index s, Index a) const { return flat_index(s, a, n_actions); }
  Index dim() const { return n_states * n_actions; }

  // Checks shapes, row-stochasticity (tol 1e-12), reward range and gamma < 1;
  // throws ConfigError naming the offending field.
  void validate() const;
};

// Deterministic policy: action per state, plus the induced |S||A| x |S||A|
// kernel P^pi with (P^pi Q)(s,a) = sum_{s'} P(s'|s,a) Q(s', pi(s')).
struct PolicyMatrix {
  std::vector<Index> action;
  Matrix induced_kernel;
};

// Bellman optimality operator: [T(Q)](s,a) = r(s,a) + gamma * E_{s'} max_a' Q(s',a').
Matrix bellman_apply(const Matrix& q, const MdpModel& m);

// Greedy deterministic policy w.r.t. Q; ties broken by lowest action index.
PolicyMatrix greedy_policy(const Matrix& q, const MdpModel& m);

// P^pi for a given deterministic policy.
Matrix policy_kernel(const std::vector<Index>& action, const MdpModel& m);

/// Value iteration to the fixed point of T. Stops when the Bellman residual
/// ||T(Q) - Q||_inf <= tol*(1-gamma)/(2*gamma) so the returned Q is within tol
/// of Q* in sup norm (one sweep is exact at gamma = 0).
struct QStarSolution {
  Matrix q_star;
  PolicyMatrix pi_star;
  Index sweeps = 0;
};
QStarSolution solve_q_star(const MdpModel& m, double tol = 1e-12);

/// Sampled lower estimate of the noise Lipschitz constant L: max over random Q of
/// ||(P^pi - P^pi*)(Q - Q*)||_inf / ||Q - Q*||_inf^2. This is a lower bound
/// witness only, never a certificate that L is finite.
struct LipschitzEstimate {
  double lower_bound = 0.0;
  bool degenerate = false;  // every sample had Q == Q*
  Index samples_used = 0;
};
LipschitzEstimate estimate_lipschitz_L(const MdpModel& m, const QStarSolution& sol,
                                       Index n_samples, std::uint64_t rng_seed);

// Fixture file I/O (JSON). load validates; errors carry the field path.
MdpModel load_mdp_fixture(const std::string& path);
void save_mdp_fixture(const MdpModel& m, const std::string& path);

}  // namespace qclt
