#pragma once

#include <cstdint>
#include <vector>

#include "qclt/chain.hpp"
#include "qclt/mdp.hpp"
#include "qclt/oracle.hpp"
#include "qclt/stepsize.hpp"
#include "qclt/types.hpp"

namespace qclt {

// One asynchronous update: only entry (y.s, y.a) changes, by
// alpha * (r + gamma * max_a' Q(y.s', a') - Q(y.s, y.a)).
Matrix async_q_step(const Matrix& q, const Triple& y, double alpha, const MdpModel& m);

/// Elementwise bounds on Delta_k co-evolved with the run: the upper sequence
/// adds the greedy-policy cross term, the lower one drops it. Used as a
/// runtime correctness diagnostic, not as part of the estimator.
struct SandwichState {
  Vector delta_up;
  Vector delta_down;
};

struct TrajectoryOptions {
  long long horizon = 0;                  // K
  std::vector<double> zeta_grid;          // ascending, in [0, 1]
  std::vector<long long> checkpoints;     // iterate indices for sup-error trace
  bool track_sandwich = false;
  bool keep_q_checkpoints = false;
  Index initial_state = -1;               // -1: draw s0 from mu_b
  std::uint64_t master_seed = 0;
  std::uint64_t replica_index = 0;
  // Optional shared precomputed alpha_0..alpha_{K-1}; computed on the fly if null.
  const std::vector<double>* alphas = nullptr;
};

struct RunRecord {
  std::uint64_t seed_key = 0;
  // Row g is Phi_K(zeta_grid[g]) = K^{-1/2} sum_{k=1}^{floor(zeta K)} Delta_k.
  Matrix phi;
  Vector final_averaged_error;  // Phi_K(1) when the grid ends at 1
  std::vector<double> sup_error_trace;  // ||Delta_k||_inf at checkpoints
  std::vector<Matrix> q_checkpoints;
  long long sandwich_violation_count = 0;
  Matrix final_q;
};

/// Simulates one behavior-policy trajectory of K asynchronous updates from
/// Q_0 = 0 and accumulates the averaged-error partial sums on the zeta grid
/// with compensated summation. RNG stream: one SplitRng keyed by
/// (master_seed, "trajectory", replica_index); draw order is [initial state
/// when sampled], then per step action followed by next state.
/// With track_sandwich set, any elementwise violation of
/// delta_down <= Delta_k <= delta_up beyond 1e-9 aborts via InternalError.
RunRecord run_trajectory(const MdpModel& m, const JointChain& chain,
                         const StepsizeSchedule& sched, const TheoryOracle& oracle,
                         const TrajectoryOptions& opts);

// Precomputes alpha_0..alpha_{K-1} once so replicas can share the table.
std::vector<double> precompute_alphas(const StepsizeSchedule& sched, long long horizon);

}  // namespace qclt
