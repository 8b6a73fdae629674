#include "qclt/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "qclt/errors.hpp"

namespace qclt {

namespace {

double inf_norm(const Matrix& m) {
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

Matrix diag_times(const Vector& d, const Matrix& m) {
  return d.asDiagonal() * m;
}

}  // namespace

Matrix f_operator(const Matrix& q, const Triple& y, const MdpModel& m) {
  Matrix out = q;
  out(y.s, y.a) = m.reward(y.s, y.a) + m.discount * q.row(y.sp).maxCoeff();
  return out;
}

Vector f_bar(const Matrix& q, const JointChain& chain, const MdpModel& m) {
  const Vector qf = flatten_q(q);
  const Vector tf = flatten_q(bellman_apply(q, m));
  Vector out = qf + chain.visitation.cwiseProduct(tf - qf);  // D T(Q) + (I - D) Q

  // Definitional form: sum_y mu~(y) F(Q, y) = Q + sum_y mu~(y) e_{(s,a)} Gamma(Q, y).
  Vector direct = qf;
  for (Index i = 0; i < chain.dim(); ++i) {
    const Triple& t = chain.triples[static_cast<std::size_t>(i)];
    const double gamma_td =
        m.reward(t.s, t.a) + m.discount * q.row(t.sp).maxCoeff() - q(t.s, t.a);
    direct[m.flat(t.s, t.a)] += chain.stationary[i] * gamma_td;
  }
  if ((out - direct).cwiseAbs().maxCoeff() > 1e-12)
    throw InternalError("f_bar: matrix form disagrees with the definitional sum");
  return out;
}

PoissonSolution poisson_solution(const JointChain& chain, const Matrix& q_star,
                                 const MdpModel& m, double tol) {
  const Index n = chain.dim();
  const Index d = m.dim();
  const Vector fbar_star = f_bar(q_star, chain, m);

  // Centered noise rows g(i) = F(Q*, i) - Fbar(Q*).
  Matrix g(n, d);
  for (Index i = 0; i < n; ++i)
    g.row(i) = (flatten_q(f_operator(q_star, chain.triples[static_cast<std::size_t>(i)], m)) -
                fbar_star)
                   .transpose();

  const Matrix ones_mu = Vector::Ones(n) * chain.stationary.transpose();
  auto attempt = [&](double sign) {
    const Matrix fund = Matrix::Identity(n, n) - chain.kernel + sign * ones_mu;
    Eigen::PartialPivLU<Matrix> lu(fund);
    PoissonSolution sol;
    sol.x = lu.solve(g);
    sol.residual = (g - (sol.x - chain.kernel * sol.x)).cwiseAbs().maxCoeff();
    sol.sign_convention = sign > 0 ? '+' : '-';
    sol.condition = inf_norm(fund) * inf_norm(lu.inverse());
    return sol;
  };

  PoissonSolution plus = attempt(1.0);
  if (plus.residual <= tol) return plus;
  PoissonSolution minus = attempt(-1.0);
  if (minus.residual <= tol) return minus;
  std::ostringstream os;
  os << "poisson_solution: residual above " << tol << " under both sign conventions ("
     << plus.residual << " with +, " << minus.residual << " with -); condition "
     << plus.condition;
  throw InternalError(os.str());
}

Matrix noise_covariance(const JointChain& chain, const Matrix& poisson_x) {
  const Index n = chain.dim();
  const Index d = poisson_x.cols();
  const Matrix cond_mean = chain.kernel * poisson_x;  // row i is E[X(Y1)|Y0=i]
  Matrix sigma = Matrix::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double w = chain.stationary[i] * chain.kernel(i, j);
      if (w == 0.0) continue;
      const Vector dev = (poisson_x.row(j) - cond_mean.row(i)).transpose();
      sigma.noalias() += w * dev * dev.transpose();
    }
  }
  const double asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) throw InternalError("noise_covariance: asymmetry above 1e-12");
  sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw InternalError("noise_covariance: negative eigenvalue below floor; "
                        "X or mu~ corrupted");
  return sigma;
}

LimitLaw limit_law(const Matrix& a, const Matrix& sigma) {
  Eigen::PartialPivLU<Matrix> lu(a);
  const double det_scale = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (det_scale < 1e-300)
    throw InternalError("limit_law: A numerically singular (scale rho*(1-gamma) too small)");
  LimitLaw law;
  const Matrix half = lu.solve(sigma);                    // A^-1 Sigma
  law.limit_cov = lu.solve(half.transpose()).transpose(); // (A^-1 (A^-1 Sigma)^T)^T
  law.limit_cov = 0.5 * (law.limit_cov + law.limit_cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(law.limit_cov);
  Vector evals = es.eigenvalues();
  for (Index i = 0; i < evals.size(); ++i) {
    if (evals[i] < -1e-10) throw InternalError("limit_law: limit covariance not PSD");
    evals[i] = std::max(evals[i], 0.0);
  }
  law.limit_sqrt = es.eigenvectors() * evals.cwiseSqrt().asDiagonal() *
                   es.eigenvectors().transpose();
  return law;
}

TheoryOracle build_oracle(const MdpModel& m, const JointChain& chain,
                          std::uint64_t lipschitz_seed, Index lipschitz_samples) {
  TheoryOracle o;
  QStarSolution sol = solve_q_star(m, 1e-13);
  o.q_star = sol.q_star;
  o.pi_star = sol.pi_star;

  o.a_matrix = diag_times(chain.visitation,
                          Matrix::Identity(m.dim(), m.dim()) - m.discount * o.pi_star.induced_kernel);

  Eigen::PartialPivLU<Matrix> lu(o.a_matrix);
  o.a_inv_inf_norm = inf_norm(lu.inverse());
  const double bound = 1.0 / ((1.0 - m.discount) * chain.rho);
  if (o.a_inv_inf_norm > bound * (1.0 + 1e-9))
    throw InternalError("build_oracle: ||A^-1||_inf exceeds 1/((1-gamma) rho)");

  PoissonSolution poisson = poisson_solution(chain, o.q_star, m);
  o.poisson_x = poisson.x;
  o.poisson_residual = poisson.residual;
  o.poisson_sign = poisson.sign_convention;
  o.poisson_condition = poisson.condition;

  o.sigma = noise_covariance(chain, o.poisson_x);
  LimitLaw law = limit_law(o.a_matrix, o.sigma);
  o.limit_cov = law.limit_cov;
  o.limit_sqrt = law.limit_sqrt;

  const double sq_err = (o.limit_sqrt * o.limit_sqrt - o.limit_cov).norm();
  const double scale = std::max(o.limit_cov.norm(), 1e-300);
  if (sq_err / scale > 1e-8 && sq_err > 1e-14)
    throw InternalError("build_oracle: limit_sqrt^2 deviates from limit_cov");

  o.lipschitz = estimate_lipschitz_L(m, sol, lipschitz_samples, lipschitz_seed);
  return o;
}

std::vector<PsiProbe> psi_diagnostics(const StepsizeSchedule& sched, const Matrix& a,
                                      double rho, double discount, long long k_horizon,
                                      const std::vector<long long>& probe_indices) {
  const Index d = a.rows();
  Eigen::PartialPivLU<Matrix> lu(a);
  const Matrix a_inv = lu.inverse();
  std::vector<long long> probes = probe_indices;
  std::sort(probes.begin(), probes.end());

  const double one_mg = 1.0 - discount;
  const double alpha_k = sched.at(k_horizon);
  auto envelope_gap = [&](long long i) {
    if (sched.constant_mode)
      return std::pow(1.0 - rho * one_mg * sched.alpha,
                      static_cast<double>(k_horizon - i)) / (rho * one_mg);
    const double ii = static_cast<double>(std::max<long long>(i, 1));
    const double t1 = 1.0 / (ii * std::pow(rho * one_mg, (2.0 - sched.beta) / (1.0 - sched.beta)));
    const double t2 = std::pow(std::max(ii - 1.0, 1.0), sched.beta) /
                      (ii * rho * rho * one_mg * one_mg);
    const double t3 = std::pow(1.0 - rho * one_mg * alpha_k,
                               static_cast<double>(k_horizon - i + 1)) / (rho * one_mg);
    return t1 + t2 + t3;
  };

  std::vector<PsiProbe> out;
  Matrix psi_next = Matrix::Zero(d, d);  // Psi_K^K = 0 (empty sum)
  // Walk i = K-1 .. min probe; also report the boundary probe i = K if asked.
  for (auto it = probes.rbegin(); it != probes.rend(); ++it)
    if (*it == k_horizon)
      out.push_back({k_horizon, inf_norm(a_inv), 0.0, envelope_gap(k_horizon), 0.0});

  const long long lo = probes.empty() ? k_horizon : probes.front();
  for (long long i = k_horizon - 1; i >= lo; --i) {
    const double ai = sched.at(i);
    const double ai1 = sched.at(i + 1);
    const Matrix psi_i =
        ai * (Matrix::Identity(d, d) + (Matrix::Identity(d, d) - ai1 * a) * (psi_next / ai1));
    if (std::binary_search(probes.begin(), probes.end(), i)) {
      PsiProbe p;
      p.index = i;
      p.gap_to_a_inv = inf_norm(psi_i - a_inv);
      p.step_difference = inf_norm(psi_next - psi_i);
      p.envelope_gap = envelope_gap(i);
      p.envelope_diff = 1.0 / std::pow(static_cast<double>(std::max<long long>(i, 1)),
                                       sched.constant_mode ? 1.0 : sched.beta);
      out.push_back(p);
    }
    psi_next = psi_i;
  }
  std::sort(out.begin(), out.end(),
            [](const PsiProbe& x, const PsiProbe& y) { return x.index < y.index; });
  return out;
}

namespace {

using nlohmann::json;

json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix mat_from(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Index cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

}  // namespace

std::string oracle_to_json(const TheoryOracle& o) {
  json j;
  j["q_star"] = mat_json(o.q_star);
  j["pi_star_action"] = o.pi_star.action;
  j["pi_star_kernel"] = mat_json(o.pi_star.induced_kernel);
  j["a_matrix"] = mat_json(o.a_matrix);
  j["poisson_x"] = mat_json(o.poisson_x);
  j["poisson_residual"] = o.poisson_residual;
  j["poisson_sign"] = std::string(1, o.poisson_sign);
  j["poisson_condition"] = o.poisson_condition;
  j["sigma"] = mat_json(o.sigma);
  j["limit_cov"] = mat_json(o.limit_cov);
  j["limit_sqrt"] = mat_json(o.limit_sqrt);
  j["a_inv_inf_norm"] = o.a_inv_inf_norm;
  j["lipschitz_lower_bound"] = o.lipschitz.lower_bound;
  j["lipschitz_degenerate"] = o.lipschitz.degenerate;
  j["lipschitz_samples_used"] = o.lipschitz.samples_used;
  return j.dump(2) + "\n";
}

TheoryOracle oracle_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("oracle dump parse error: ") + e.what());
  }
  TheoryOracle o;
  o.q_star = mat_from(j.at("q_star"));
  o.pi_star.action = j.at("pi_star_action").get<std::vector<Index>>();
  o.pi_star.induced_kernel = mat_from(j.at("pi_star_kernel"));
  o.a_matrix = mat_from(j.at("a_matrix"));
  o.poisson_x = mat_from(j.at("poisson_x"));
  o.poisson_residual = j.at("poisson_residual").get<double>();
  o.poisson_sign = j.at("poisson_sign").get<std::string>().at(0);
  o.poisson_condition = j.at("poisson_condition").get<double>();
  o.sigma = mat_from(j.at("sigma"));
  o.limit_cov = mat_from(j.at("limit_cov"));
  o.limit_sqrt = mat_from(j.at("limit_sqrt"));
  o.a_inv_inf_norm = j.at("a_inv_inf_norm").get<double>();
  o.lipschitz.lower_bound = j.at("lipschitz_lower_bound").get<double>();
  o.lipschitz.degenerate = j.at("lipschitz_degenerate").get<bool>();
  o.lipschitz.samples_used = j.at("lipschitz_samples_used").get<Index>();
  return o;
}

}  // namespace qclt
