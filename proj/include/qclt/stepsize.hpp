#pragma once

#include <cmath>

#include "qclt/errors.hpp"

namespace qclt {

/// Polynomial stepsize rule alpha_k = alpha * (k + b)^(-beta).
/// CLT experiments require beta in (0.5, 1) and alpha_0 <= 1; a constant-mode
/// schedule (alpha_k = alpha) exists for diagnostics only and is rejected by
/// every CLT entry point.
struct StepsizeSchedule {
  double alpha = 0.5;
  double b = 1.0;
  double beta = 2.0 / 3.0;
  bool constant_mode = false;

  double at(long long k) const {
    if (constant_mode) return alpha;
    return alpha * std::pow(static_cast<double>(k) + b, -beta);
  }

  // Validity for CLT/FCLT runs (stepsize conditions (i)-(iv) hold for this
  // family exactly when the parameters pass these checks).
  void validate_for_clt() const {
    if (constant_mode)
      throw ConfigError("constant stepsizes are diagnostics-only; CLT runs need "
                        "the polynomial rule with beta in (0.5, 1)");
    if (!(beta > 0.5 && beta < 1.0))
      throw ConfigError("stepsize beta must lie in (0.5, 1)");
    if (!(alpha > 0.0 && b > 0.0)) throw ConfigError("stepsize alpha and b must be positive");
    if (at(0) > 1.0) throw ConfigError("initial stepsize alpha * b^(-beta) must be <= 1");
  }
};

}  // namespace qclt
