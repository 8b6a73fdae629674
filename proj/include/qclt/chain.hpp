#pragma once

#include <string>
#include <vector>

#include "qclt/mdp.hpp"
#include "qclt/types.hpp"

namespace qclt {

struct Triple {
  Index s, a, sp;
};

/// The joint chain y_k = (s_k, a_k, s_{k+1}) induced by the behavior policy,
/// restricted to triples with positive probability. Immutable after build.
struct JointChain {
  std::vector<Triple> triples;
  Matrix kernel;            // P~ over triples, row-stochastic
  Vector stationary;        // mu~ over triples
  Vector visitation;        // p(s,a) on the flat (s,a) grid; diagonal of D
  Vector state_marginal;    // mu_b(s), stationary state law under pi_b
  double rho = 0.0;         // min_(s,a) p(s,a), the exploration floor
  double c0 = 0.0;          // geometric mixing envelope TV_max(t) <= c0 * kappa^t
  double kappa = 0.0;

  Index dim() const { return static_cast<Index>(triples.size()); }

  // Flat (s,a) index of triple i's visited pair.
  Index sa_of(Index i, const MdpModel& m) const {
    const Triple& t = triples[static_cast<std::size_t>(i)];
    return m.flat(t.s, t.a);
  }
};

/// Builds the joint chain, verifies irreducibility + aperiodicity of its
/// support graph and positivity of the exploration floor, computes mu~, D,
/// rho and the geometric mixing constants. Throws AssumptionError when the
/// chain is reducible, periodic, or some (s,a) pair is never visited.
JointChain build_joint_chain(const MdpModel& m, Index mixing_horizon = 200);

// Stationary law of an irreducible aperiodic row-stochastic kernel by direct
// linear solve, with power iteration as fallback; l1 residual <= 1e-12.
Vector stationary_distribution(const Matrix& kernel);

// Total variation distance 0.5 * ||p - q||_1.
double tv_distance(const Vector& p, const Vector& q);

/// Smallest i >= 0 with max_row TV(P~^i(row, .), mu~) <= threshold,
/// by exact matrix powering. Throws InternalError past the cap.
Index mixing_time(const JointChain& chain, double threshold, Index cap = 100000);

// (c0, kappa) with kappa = 1.01 * SLEM (floored at 1e-6, capped below 1) and
// c0 the smallest constant making the envelope hold on [0, horizon].
// The envelope is re-verified at every probed t before returning.
std::pair<double, double> geometric_mixing_constants(const Matrix& kernel,
                                                     const Vector& stationary,
                                                     Index horizon);

// Chain-analysis report: triple count, rho, mixing-time table, (c0, kappa).
std::string chain_report(const JointChain& chain, const MdpModel& m);

}  // namespace qclt
