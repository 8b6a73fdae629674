#pragma once

#include <string>
#include <vector>

#include "qclt/chain.hpp"
#include "qclt/mdp.hpp"
#include "qclt/stepsize.hpp"
#include "qclt/types.hpp"

namespace qclt {

// One-sample empirical Bellman image: F(Q, y) equals Q everywhere except at
// the visited pair (y.s, y.a), where it becomes r + gamma * max_a' Q(y.s', a').
Matrix f_operator(const Matrix& q, const Triple& y, const MdpModel& m);

/// Stationary expectation of F: D T(Q) + (I - D) Q, returned flattened.
/// Every call cross-checks the matrix form against the definitional sum
/// sum_y mu~(y) F(Q, y) to 1e-12 sup-norm and throws InternalError on
/// disagreement; the cross-check is the running test of the F-bar identity.
Vector f_bar(const Matrix& q, const JointChain& chain, const MdpModel& m);

struct PoissonSolution {
  // Row i is X(i), the Poisson solution at triple i, flattened to |S||A|.
  Matrix x;
  double residual = 0.0;        // sup-norm of the substituted Poisson equation
  char sign_convention = '+';   // fundamental matrix [I - P~ +/- 1 mu~^T]^-1
  double condition = 0.0;       // inf-norm condition estimate of the kept matrix
};

/// Solves F(Q*, i) - Fbar(Q*) = X(i) - E[X(Y1)|Y0 = i] through the fundamental
/// matrix. Both sign conventions of the rank-one term are tried and whichever
/// satisfies the equation to 1e-10 is kept; failure of both is a hard error.
PoissonSolution poisson_solution(const JointChain& chain, const Matrix& q_star,
                                 const MdpModel& m, double tol = 1e-10);

/// Long-run martingale-noise covariance
/// Sigma = sum_{i,j} mu~(i) P~(i,j) (X(j) - m(i)) (X(j) - m(i))^T with
/// m(i) = E[X(Y1)|Y0 = i]. Symmetrized; PSD checked to an eigenvalue floor.
Matrix noise_covariance(const JointChain& chain, const Matrix& poisson_x);

struct LimitLaw {
  Matrix limit_cov;   // A^-1 Sigma A^-T, via two linear solves
  Matrix limit_sqrt;  // symmetric PSD square root
};
LimitLaw limit_law(const Matrix& a, const Matrix& sigma);

/// Every piece of the limiting Gaussian law that can be computed in closed form.
struct TheoryOracle {
  Matrix q_star;
  PolicyMatrix pi_star;
  Matrix a_matrix;       // A = D - gamma D P^pi*
  Matrix poisson_x;      // row per triple
  double poisson_residual = 0.0;
  char poisson_sign = '+';
  double poisson_condition = 0.0;
  Matrix sigma;
  Matrix limit_cov;
  Matrix limit_sqrt;
  double a_inv_inf_norm = 0.0;

  // Sampled lower-bound witness for the noise Lipschitz constant (reported only).
  LipschitzEstimate lipschitz;
};

/// Builds the full oracle and enforces its invariants:
/// ||A^-1||_inf <= 1/((1-gamma) rho), Poisson residual <= 1e-10, Sigma PSD,
/// limit_sqrt^2 = limit_cov to 1e-8 relative Frobenius.
TheoryOracle build_oracle(const MdpModel& m, const JointChain& chain,
                          std::uint64_t lipschitz_seed = 7, Index lipschitz_samples = 2000);

struct PsiProbe {
  long long index;
  double gap_to_a_inv;     // ||Psi_i^K - A^-1||_inf
  double step_difference;  // ||Psi_{i+1}^K - Psi_i^K||_inf
  double envelope_gap;     // theoretical envelope for the gap, hidden constants = 1
  double envelope_diff;    // theoretical envelope for the difference, constants = 1
};

/// Psi_i^K = alpha_i sum_{k=i+1}^K prod_{j=i+1}^{k-1} (I - alpha_j A),
/// evaluated exactly by the backward recursion
/// Psi_i = alpha_i (I + (I - alpha_{i+1} A) Psi_{i+1} / alpha_{i+1}).
/// Envelope columns are reported, never asserted.
std::vector<PsiProbe> psi_diagnostics(const StepsizeSchedule& sched, const Matrix& a,
                                      double rho, double discount, long long k_horizon,
                                      const std::vector<long long>& probe_indices);

// Oracle dump round-trip (JSON; exact double round-trip).
std::string oracle_to_json(const TheoryOracle& o);
TheoryOracle oracle_from_json(const std::string& text);

}  // namespace qclt
