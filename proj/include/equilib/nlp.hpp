#pragma once

// Single-agent constrained NLPs solved through their KKT systems as MCPs.
// Used for the single-player baseline, the follower's best response, and
// the per-piece restricted problems of the bilevel solver.

#include "mcp.hpp"

namespace equilib {

struct Nlp {
  int n = 0;
  Vec lb, ub;  // variable box; +-inf where free
  int m_ineq = 0;
  int m_eq = 0;

  std::function<double(const Vec&)> cost;
  std::function<Vec(const Vec&)> grad;  // length n
  std::function<Vec(const Vec&)> cons;  // [ineq; eq]
  std::function<Mat(const Vec&)> jac;   // m x n
  // d2 cost - sum_r mu_r d2 cons_r
  std::function<Mat(const Vec&, const Vec&)> lag_hess;

  int m() const { return m_ineq + m_eq; }
};

// KKT conditions as an MCP over z = [x; mu]:
//   rows x:        grad(x) - jac(x)' mu,  bounds [lb, ub]
//   rows mu_ineq:  cons_ineq(x),          bounds [0, inf)
//   rows mu_eq:    cons_eq(x),            free
inline mcp::Problem kkt_problem(const Nlp& nlp) {
  mcp::Problem p;
  p.dim = nlp.n + nlp.m();
  p.lower = Vec::Constant(p.dim, -kInf);
  p.upper = Vec::Constant(p.dim, kInf);
  p.lower.head(nlp.n) = nlp.lb;
  p.upper.head(nlp.n) = nlp.ub;
  p.lower.segment(nlp.n, nlp.m_ineq).setZero();

  p.eval_f = [nlp](const Vec& z) {
    const Vec x = z.head(nlp.n);
    const Vec mu = z.tail(nlp.m());
    Vec f(nlp.n + nlp.m());
    f.head(nlp.n) = nlp.grad(x);
    if (nlp.m() > 0) {
      f.head(nlp.n) -= nlp.jac(x).transpose() * mu;
      f.tail(nlp.m()) = nlp.cons(x);
    }
    return f;
  };
  p.eval_jac = [nlp](const Vec& z) {
    const Vec x = z.head(nlp.n);
    const Vec mu = z.tail(nlp.m());
    Mat jac = Mat::Zero(nlp.n + nlp.m(), nlp.n + nlp.m());
    jac.topLeftCorner(nlp.n, nlp.n) = nlp.lag_hess(x, mu);
    if (nlp.m() > 0) {
      const Mat a = nlp.jac(x);
      jac.topRightCorner(nlp.n, nlp.m()) = -a.transpose();
      jac.bottomLeftCorner(nlp.m(), nlp.n) = a;
    }
    return jac;
  };
  return p;
}

struct NlpResult {
  Vec x;
  Vec mu;
  mcp::Status status = mcp::Status::Diverged;
  double kkt_residual = kInf;
  int iterations = 0;
  bool converged() const { return status == mcp::Status::Converged; }
};

inline NlpResult solve_nlp(const Nlp& nlp, const Vec& x0, const Vec& mu0 = Vec(),
                           const mcp::Options& opts = {}) {
  if (x0.size() != nlp.n) throw DimensionMismatch("solve_nlp: bad x0 length");
  Vec z0(nlp.n + nlp.m());
  z0.head(nlp.n) = x0;
  z0.tail(nlp.m()) = mu0.size() == nlp.m() ? mu0 : Vec(Vec::Zero(nlp.m()));

  const auto problem = kkt_problem(nlp);
  const auto sol = mcp::solve(problem, z0, opts);
  NlpResult res;
  res.x = sol.z.head(nlp.n);
  res.mu = sol.z.tail(nlp.m());
  res.status = sol.status;
  res.kkt_residual = sol.residual_inf;
  res.iterations = sol.iterations;
  return res;
}

// Local-membership predicate shared by the bilevel piece-agreement logic:
// re-solve the problem warm-started at a candidate; the candidate passes
// when the solve neither improves the cost nor moves away.
struct LocalCheck {
  bool solved = false;
  bool agrees = false;
  NlpResult result;
  double movement = kInf;     // inf-norm displacement on the watched variables
  double improvement = -kInf; // cost(start) - cost(end)
};

inline LocalCheck check_local_membership(const Nlp& nlp, const Vec& x0, const Vec& mu0 = Vec(),
                                         const mcp::Options& opts = {}, int watch_count = -1,
                                         double improve_tol = 1e-8, double move_tol = 1e-6) {
  LocalCheck chk;
  chk.result = solve_nlp(nlp, x0, mu0, opts);
  if (!chk.result.converged()) return chk;
  chk.solved = true;
  const int nw = watch_count < 0 ? nlp.n : watch_count;
  chk.movement = (chk.result.x.head(nw) - x0.head(nw)).lpNorm<Eigen::Infinity>();
  chk.improvement = nlp.cost(x0) - nlp.cost(chk.result.x);
  chk.agrees = chk.movement <= move_tol && chk.improvement <= improve_tol;
  return chk;
}

}  // namespace equilib
