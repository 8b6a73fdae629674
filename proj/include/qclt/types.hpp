#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace qclt {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Flattening convention for state-action pairs: idx = s * n_actions + a.
// Every |S||A|-dimensional object (D, P^pi, A, Sigma, flattened Q tables)
// uses this ordering.
inline Index flat_index(Index s, Index a, Index n_actions) {
  return s * n_actions + a;
}

// Q tables are stored as n_states x n_actions matrices; these convert to
// and from the flat |S||A| vector layout above.
inline Vector flatten_q(const Matrix& q) {
  const Index ns = q.rows(), na = q.cols();
  Vector v(ns * na);
  for (Index s = 0; s < ns; ++s)
    for (Index a = 0; a < na; ++a) v[flat_index(s, a, na)] = q(s, a);
  return v;
}

inline Matrix unflatten_q(const Vector& v, Index n_states, Index n_actions) {
  Matrix q(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) q(s, a) = v[flat_index(s, a, n_actions)];
  return q;
}

}  // namespace qclt
