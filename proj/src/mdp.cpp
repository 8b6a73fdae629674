#include "qclt/mdp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qclt/errors.hpp"
#include "qclt/rng.hpp"

namespace qclt {

namespace {

constexpr double kRowSumTol = 1e-12;

void check_stochastic_row(const Matrix& mat, Index row, const std::string& field) {
  double sum = 0.0;
  for (Index j = 0; j < mat.cols(); ++j) {
    const double v = mat(row, j);
    if (!(v >= 0.0)) {
      std::ostringstream os;
      os << field << " row " << row << " col " << j << ": negative entry " << v;
      throw ConfigError(os.str());
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRowSumTol) {
    std::ostringstream os;
    os << field << " row " << row << ": sums to " << sum << ", expected 1";
    throw ConfigError(os.str());
  }
}

}  // namespace

void MdpModel::validate() const {
  if (n_states < 1) throw ConfigError("n_states must be >= 1");
  if (n_actions < 1) throw ConfigError("n_actions must be >= 1");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (transition.rows() != dim() || transition.cols() != n_states)
    throw ConfigError("transition has wrong shape");
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw ConfigError("reward has wrong shape");
  if (behavior_policy.rows() != n_states || behavior_policy.cols() != n_actions)
    throw ConfigError("behavior_policy has wrong shape");
  for (Index i = 0; i < transition.rows(); ++i)
    check_stochastic_row(transition, i, "transition");
  for (Index s = 0; s < n_states; ++s)
    check_stochastic_row(behavior_policy, s, "behavior_policy");
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) {
      const double r = reward(s, a);
      if (!(r >= 0.0 && r <= 1.0)) {
        std::ostringstream os;
        os << "reward(" << s << "," << a << ") = " << r << " outside [0, 1]";
        throw ConfigError(os.str());
      }
    }
}

Matrix bellman_apply(const Matrix& q, const MdpModel& m) {
  const Vector v = q.rowwise().maxCoeff();  // V(s') = max_a' Q(s', a')
  Matrix out(m.n_states, m.n_actions);
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a)
      out(s, a) = m.reward(s, a) + m.discount * m.transition.row(m.flat(s, a)).dot(v);
  return out;
}

PolicyMatrix greedy_policy(const Matrix& q, const MdpModel& m) {
  PolicyMatrix p;
  p.action.resize(static_cast<std::size_t>(m.n_states));
  for (Index s = 0; s < m.n_states; ++s) {
    Index best = 0;
    for (Index a = 1; a < m.n_actions; ++a)
      if (q(s, a) > q(s, best)) best = a;  // strict > keeps the lowest index on ties
    p.action[static_cast<std::size_t>(s)] = best;
  }
  p.induced_kernel = policy_kernel(p.action, m);
  return p;
}

Matrix policy_kernel(const std::vector<Index>& action, const MdpModel& m) {
  Matrix k = Matrix::Zero(m.dim(), m.dim());
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a) {
      const Index row = m.flat(s, a);
      for (Index sp = 0; sp < m.n_states; ++sp) {
        const Index col = m.flat(sp, action[static_cast<std::size_t>(sp)]);
        k(row, col) += m.transition(row, sp);
      }
    }
  return k;
}

QStarSolution solve_q_star(const MdpModel& m, double tol) {
  if (!(tol > 0.0)) throw ConfigError("solve_q_star: tol must be positive");
  constexpr Index kMaxSweeps = 1000000;
  Matrix q = Matrix::Zero(m.n_states, m.n_actions);
  const double g = m.discount;
  // Residual target guaranteeing ||Q - Q*||_inf <= tol via the contraction bound.
  const double target = (g > 0.0) ? tol * (1.0 - g) / (2.0 * g)
                                  : 0.0;  // one sweep is exact at gamma = 0
  Index sweeps = 0;
  for (; sweeps < kMaxSweeps; ++sweeps) {
    Matrix next = bellman_apply(q, m);
    const double res = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (res <= target || g == 0.0) break;
  }
  if (sweeps == kMaxSweeps)
    throw InternalError("solve_q_star: value iteration did not converge; malformed model?");
  QStarSolution sol;
  sol.q_star = q;
  sol.pi_star = greedy_policy(q, m);
  sol.sweeps = sweeps + 1;
  return sol;
}

LipschitzEstimate estimate_lipschitz_L(const MdpModel& m, const QStarSolution& sol,
                                       Index n_samples, std::uint64_t rng_seed) {
  if (n_samples < 1) throw ConfigError("estimate_lipschitz_L: n_samples must be >= 1");
  SplitRng rng(SplitRng::derive_key(rng_seed, "lipschitz", 0));
  const double qmax = 1.0 / (1.0 - m.discount);
  const Vector q_star_flat = flatten_q(sol.q_star);
  LipschitzEstimate est;
  for (Index i = 0; i < n_samples; ++i) {
    Matrix q(m.n_states, m.n_actions);
    for (Index s = 0; s < m.n_states; ++s)
      for (Index a = 0; a < m.n_actions; ++a) q(s, a) = qmax * rng.next_double();
    const Vector diff = flatten_q(q) - q_star_flat;
    const double dn = diff.cwiseAbs().maxCoeff();
    if (dn == 0.0) continue;  // 0/0 sample, skipped
    const PolicyMatrix pi = greedy_policy(q, m);
    const double num =
        ((pi.induced_kernel - sol.pi_star.induced_kernel) * diff).cwiseAbs().maxCoeff();
    est.lower_bound = std::max(est.lower_bound, num / (dn * dn));
    ++est.samples_used;
  }
  est.degenerate = (est.samples_used == 0);
  return est;
}

namespace {

using nlohmann::json;

Matrix matrix_from_json(const json& j, Index rows, Index cols, const std::string& field) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    std::ostringstream os;
    os << field << ": expected array of " << rows << " rows";
    throw ConfigError(os.str());
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      std::ostringstream os;
      os << field << " row " << r << ": expected " << cols << " entries";
      throw ConfigError(os.str());
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

MdpModel load_mdp_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fixture file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("fixture parse error in " + path + ": " + e.what());
  }
  MdpModel m;
  try {
    m.n_states = j.at("n_states").get<Index>();
    m.n_actions = j.at("n_actions").get<Index>();
    m.discount = j.at("gamma").get<double>();
    if (m.n_states < 1 || m.n_actions < 1)
      throw ConfigError("n_states and n_actions must be >= 1");
    m.transition = matrix_from_json(j.at("transition"), m.n_states * m.n_actions,
                                    m.n_states, "transition");
    m.reward = matrix_from_json(j.at("reward"), m.n_states, m.n_actions, "reward");
    m.behavior_policy = matrix_from_json(j.at("behavior_policy"), m.n_states,
                                         m.n_actions, "behavior_policy");
  } catch (const json::exception& e) {
    throw ConfigError("fixture schema error in " + path + ": " + e.what());
  }
  m.validate();
  return m;
}

void save_mdp_fixture(const MdpModel& m, const std::string& path) {
  json j;
  j["n_states"] = m.n_states;
  j["n_actions"] = m.n_actions;
  j["gamma"] = m.discount;
  j["transition"] = matrix_to_json(m.transition);
  j["reward"] = matrix_to_json(m.reward);
  j["behavior_policy"] = matrix_to_json(m.behavior_policy);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write fixture file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace qclt
