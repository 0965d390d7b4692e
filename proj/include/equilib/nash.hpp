#pragma once

// Generalized Nash equilibrium candidates via the stacked KKT systems of
// both players, posed as one mixed complementarity problem:
//
//   z = [x; lambda_1; lambda_2]
//   F  = [ d f_1/d x_1 - (d g_1/d x_1)' lambda_1 ;
//          d f_2/d x_2 - (d g_2/d x_2)' lambda_2 ;
//          g_1 ; g_2 ]
//
// Primal rows are free, inequality-dual rows live in [0, inf), equality
// (dynamics) multipliers are free. Solutions are first-order points used as
// equilibrium proxies; they are not certified equilibria.

#include "game.hpp"

namespace equilib::nash {

struct KktLayout {
  int n = 0;         // joint primal dimension
  int m1 = 0;        // player-1 constraint rows (ineq then eq)
  int m2 = 0;
  int m1_ineq = 0;
  int m2_ineq = 0;
  int total_dim = 0; // n + m1 + m2

  int primal_start() const { return 0; }
  int dual_start(int i) const { return i == 0 ? n : n + m1; }
  int dual_size(int i) const { return i == 0 ? m1 : m2; }
};

inline KktLayout layout_of(const TwoPlayerGame& game) {
  KktLayout l;
  l.n = game.n_total;
  l.m1 = game.players[0].m();
  l.m2 = game.players[1].m();
  l.m1_ineq = game.players[0].m_ineq;
  l.m2_ineq = game.players[1].m_ineq;
  l.total_dim = l.n + l.m1 + l.m2;
  return l;
}

inline mcp::Problem assemble_kkt(const TwoPlayerGame& game) {
  game.validate();
  const KktLayout l = layout_of(game);

  mcp::Problem p;
  p.dim = l.total_dim;
  p.lower = Vec::Constant(p.dim, -kInf);
  p.upper = Vec::Constant(p.dim, kInf);
  for (int i = 0; i < 2; ++i)
    p.lower.segment(l.dual_start(i), game.players[i].m_ineq).setZero();

  p.eval_f = [game, l](const Vec& z) {
    const Vec x = z.head(l.n);
    Vec f(l.total_dim);
    for (int i = 0; i < 2; ++i) {
      const auto& pl = game.players[i];
      const Vec lam = z.segment(l.dual_start(i), l.dual_size(i));
      Vec st = pl.cost_grad(x);
      if (pl.m() > 0) st -= game.cons_jac_own(i, x).transpose() * lam;
      f.segment(game.block_start(i), pl.n_own) = st;
      if (pl.m() > 0) f.segment(l.dual_start(i), pl.m()) = pl.constraints(x);
    }
    return f;
  };

  p.eval_jac = [game, l](const Vec& z) {
    const Vec x = z.head(l.n);
    Mat jac = Mat::Zero(l.total_dim, l.total_dim);
    for (int i = 0; i < 2; ++i) {
      const auto& pl = game.players[i];
      const int bs = game.block_start(i), bn = pl.n_own;
      const Vec lam = z.segment(l.dual_start(i), l.dual_size(i));
      Mat hess = pl.cost_hess(x);
      if (pl.m() > 0) hess -= pl.cons_hess_combo(x, lam);
      jac.block(bs, 0, bn, l.n) = hess.middleRows(bs, bn);
      if (pl.m() > 0) {
        const Mat cj = pl.cons_jac_full(x);
        jac.block(bs, l.dual_start(i), bn, pl.m()) = -cj.middleCols(bs, bn).transpose();
        jac.block(l.dual_start(i), 0, pl.m(), l.n) = cj;
      }
    }
    return jac;
  };
  return p;
}

struct EquilibriumResult {
  Vec x;
  std::array<Vec, 2> duals;
  mcp::Status status = mcp::Status::Diverged;
  double kkt_residual = kInf;
  int iterations = 0;
  Vec z;   // full KKT point, for warm starts
  Vec z0;  // start point, recorded for reproducibility
  // First-order stationary point only; necessary, not sufficient.
  bool first_order_only = true;
  bool converged() const { return status == mcp::Status::Converged; }
};

struct WarmStart {
  Vec duals1;
  Vec duals2;
};

inline EquilibriumResult solve_nash(const TwoPlayerGame& game, const Vec& x0,
                                    const mcp::Options& opts = {},
                                    const WarmStart& warm = {}) {
  const KktLayout l = layout_of(game);
  if (x0.size() != l.n) throw DimensionMismatch("solve_nash: bad x0 length");
  Vec z0 = Vec::Zero(l.total_dim);
  z0.head(l.n) = x0;
  if (warm.duals1.size() == l.m1) z0.segment(l.dual_start(0), l.m1) = warm.duals1;
  if (warm.duals2.size() == l.m2) z0.segment(l.dual_start(1), l.m2) = warm.duals2;

  const auto problem = assemble_kkt(game);
  const auto sol = mcp::solve(problem, z0, opts);

  EquilibriumResult res;
  res.x = sol.z.head(l.n);
  res.duals = {sol.z.segment(l.dual_start(0), l.m1), sol.z.segment(l.dual_start(1), l.m2)};
  res.status = sol.status;
  res.kkt_residual = sol.residual_inf;
  res.iterations = sol.iterations;
  res.z = sol.z;
  res.z0 = std::move(z0);
  return res;
}

// First-order certificates at a candidate point: stationarity, feasibility,
// dual feasibility, and complementarity, reported as worst-case numbers.
struct Certificates {
  double stationarity_inf = 0.0;  // max_i || d f_i/d x_i - (d g_i/d x_i)' lambda_i ||_inf
  double cons_violation = 0.0;    // max(0, -g) and |h|
  double dual_violation = 0.0;    // max(0, -lambda) on inequality rows
  double max_comp_product = 0.0;  // max |lambda_j g_j| over inequality rows
};

inline Certificates certificates(const TwoPlayerGame& game, const Vec& x,
                                 const std::array<Vec, 2>& duals) {
  Certificates c;
  for (int i = 0; i < 2; ++i) {
    const auto& pl = game.players[i];
    Vec st = pl.cost_grad(x);
    if (pl.m() > 0) st -= game.cons_jac_own(i, x).transpose() * duals[i];
    c.stationarity_inf = std::max(c.stationarity_inf, st.lpNorm<Eigen::Infinity>());
    if (pl.m() == 0) continue;
    const Vec g = pl.constraints(x);
    for (int r = 0; r < pl.m_ineq; ++r) {
      c.cons_violation = std::max(c.cons_violation, -g[r]);
      c.dual_violation = std::max(c.dual_violation, -duals[i][r]);
      c.max_comp_product = std::max(c.max_comp_product, std::abs(duals[i][r] * g[r]));
    }
    for (int r = pl.m_ineq; r < pl.m(); ++r)
      c.cons_violation = std::max(c.cons_violation, std::abs(g[r]));
  }
  return c;
}

}  // namespace equilib::nash
