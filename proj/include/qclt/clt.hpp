#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qclt/engine.hpp"
#include "qclt/stats.hpp"

namespace qclt {

/// Endpoint samples Phi_K(1) over R independent replicas; row i comes from the
/// stream keyed by (per-experiment seed, "trajectory", i). `parallelism` only
/// partitions replica indices across threads; reported numbers are identical
/// for every degree.
Matrix replicate_endpoint(const MdpModel& m, const JointChain& chain,
                          const TheoryOracle& oracle, const StepsizeSchedule& sched,
                          long long horizon, Index replicas, std::uint64_t master_seed,
                          int parallelism = 1, bool track_sandwich = false);

/// Max over probe directions (all coordinate axes + n_random seeded random
/// unit vectors) of the 1-D W1 between the projected sample and the projected
/// limit Gaussian. A lower bound on the multivariate W1; reported as such.
double w1_projected(const Matrix& samples, const Matrix& limit_cov,
                    std::uint64_t direction_seed, int n_random = 32);

// Log-log least squares of W1 against K; nonpositive W1 entries are skipped.
LineFit rate_fit(const std::vector<double>& w1_values, const std::vector<long long>& k_grid);

struct EndpointStats {
  long long horizon = 0;
  Index replicas = 0;
  std::uint64_t experiment_seed = 0;  // per-K derived seed; replicas 0..R-1
  Vector empirical_mean;
  Matrix empirical_cov;
  double cov_rel_error = 0.0;  // Frobenius-relative distance to limit_cov
  double w1 = 0.0;             // projected W1 (lower bound)
};

struct CltReport {
  std::string fixture_id;
  std::vector<EndpointStats> per_horizon;
  LineFit w1_fit;
};

CltReport run_clt_experiment(const MdpModel& m, const JointChain& chain,
                             const TheoryOracle& oracle, const StepsizeSchedule& sched,
                             const std::vector<long long>& k_grid, Index replicas,
                             std::uint64_t master_seed, int parallelism = 1);

struct FcltReport {
  long long horizon = 0;
  Index replicas = 0;
  std::vector<double> zeta_grid;
  // Per consecutive interval (zeta_{g}, zeta_{g+1}]: Frobenius-relative error
  // of the empirical increment covariance against (zeta_{g+1}-zeta_g) * limit_cov.
  std::vector<double> increment_cov_errors;
  // Max over disjoint interval pairs of ||cross-cov||_F / ||limit_cov||_F.
  double max_cross_cov_rel = 0.0;
  // Two-sample KS of the normalized running max along each coordinate axis
  // against a simulated standard-Brownian running max on the same grid.
  std::vector<double> functional_ks;
  bool degenerate_sigma = false;
};

FcltReport fclt_marginals(const MdpModel& m, const JointChain& chain,
                          const TheoryOracle& oracle, const StepsizeSchedule& sched,
                          long long horizon, Index replicas,
                          const std::vector<double>& zeta_grid, std::uint64_t master_seed,
                          int parallelism = 1, Index brownian_paths = 1000000);

// Same increment/cross-covariance statistics computed from caller-supplied
// path samples (row per replica, zeta-major layout); used both by
// fclt_marginals and by the synthetic-Gaussian self-calibration tests.
FcltReport fclt_statistics(const Matrix& paths, const std::vector<double>& zeta_grid,
                           const Matrix& limit_cov, std::uint64_t master_seed,
                           Index brownian_paths);

/// K^{-1/2} sup-norms of the error-decomposition components along one
/// instrumented trajectory: the discounted initial-error term, the two
/// greedy-mismatch terms, and the Poisson-telescope remainders. Magnitudes
/// only; the hidden constants of the envelopes are never asserted.
struct TermsReport {
  long long horizon = 0;
  double term1 = 0.0;   // product-of-contractions initial error
  double term2 = 0.0;   // A^-1 sum of greedy-mismatch noise
  double term3a = 0.0;  // Poisson boundary telescope
  double term3b = 0.0;  // Poisson drift between consecutive iterates
  double term4 = 0.0;   // (Psi - A^-1) against greedy mismatch
  double term5a = 0.0;  // (Psi - A^-1) boundary telescope
  double term5b = 0.0;  // (Psi - A^-1) Poisson drift
};

TermsReport diagnostics_terms(const MdpModel& m, const JointChain& chain,
                              const TheoryOracle& oracle, const StepsizeSchedule& sched,
                              long long horizon, std::uint64_t master_seed);

struct ErrorDecay {
  std::vector<long long> checkpoints;
  std::vector<double> mean_sup_error;       // over replicas, per checkpoint
  std::vector<double> normalized_error;     // mean * sqrt(k) / sqrt(t_k)
  LineFit loglog_fit;                       // slope of log mean error vs log k
};

ErrorDecay error_decay_experiment(const MdpModel& m, const JointChain& chain,
                                  const TheoryOracle& oracle, const StepsizeSchedule& sched,
                                  const std::vector<long long>& checkpoints, Index replicas,
                                  std::uint64_t master_seed, int parallelism = 1);

/// Empirical martingale-difference diagnostics along a stationary trajectory:
/// sup-norm of the sample mean of M_k = X(Y_{k+1}) - E[X(Y_{k+1})|Y_k] and the
/// lag-1 autocovariance scale relative to ||Sigma||_F.
struct MdsDiagnostics {
  long long steps = 0;
  double mean_sup = 0.0;
  double mean_bound = 0.0;     // CLT-scale bound 5 * sigma_max / sqrt(1e6)-style
  double lag1_rel = 0.0;       // ||lag-1 autocov||_F / ||Sigma||_F
  double empirical_sigma_rel_error = 0.0;  // time-average M M^T vs Sigma
};

MdsDiagnostics mds_diagnostics(const MdpModel& m, const JointChain& chain,
                               const TheoryOracle& oracle, long long steps,
                               std::uint64_t master_seed);

}  // namespace qclt
