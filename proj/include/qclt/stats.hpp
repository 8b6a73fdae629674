#pragma once

#include <vector>

#include "qclt/types.hpp"

namespace qclt {

// Standard normal CDF and quantile. The quantile is a rational approximation
// polished with one Halley step against erfc; accurate to ~1e-15.
double normal_cdf(double x);
double normal_quantile(double p);

/// Exact-in-the-limit 1-D Wasserstein-1 distance between an empirical sample
/// and N(0, variance), by quantile-grid quadrature:
/// W1 = int_0^1 |Q_emp(u) - Q_gauss(u)| du on `nodes` midpoint nodes.
/// variance == 0 degenerates to the mean absolute value of the sample.
double w1_empirical_vs_gaussian(std::vector<double> samples, double variance,
                                int nodes = 4096);

// Two-sample Kolmogorov-Smirnov distance sup_x |F1(x) - F2(x)|.
double ks_distance(std::vector<double> a, std::vector<double> b);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // RMS residual
};

// Ordinary least squares y = slope * x + intercept.
LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace qclt
