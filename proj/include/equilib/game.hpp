#pragma once

// Two-player constrained games. Each player i minimizes f_i(x) over its own
// block x_i of the joint vector x, subject to g_i(x) >= 0 (inequalities
// first) and h_i(x) = 0 (equalities second).
//
// Models supply analytic derivatives up to the contracted second order the
// equilibrium solvers need; check_derivatives is the safeguard.

#include "mcp.hpp"

#include <array>
#include <utility>

namespace equilib {

struct PlayerProblem {
  int n_own = 0;
  int m_ineq = 0;
  int m_eq = 0;

  std::function<double(const Vec&)> cost;           // f_i(x)
  std::function<Vec(const Vec&)> cost_grad;         // d f_i / d x_i  (n_own)
  std::function<Vec(const Vec&)> cost_grad_full;    // d f_i / d x    (n_total)
  std::function<Vec(const Vec&)> constraints;       // [g_i; h_i]     (m)
  std::function<Mat(const Vec&)> cons_jac_full;     // d [g;h] / d x  (m x n_total)

  // Second-order contractions.
  std::function<Mat(const Vec&)> cost_hess;  // d2 f_i / dx2, n_total x n_total
  // sum_r w_r * d2 [g;h]_r / dx2
  std::function<Mat(const Vec&, const Vec&)> cons_hess_combo;
  // rows_r = v' * d2 [g;h]_r / dx_own dx  (m x n_total), v of length n_own
  std::function<Mat(const Vec&, const Vec&)> cons_hess_own_left;

  int m() const { return m_ineq + m_eq; }
};

struct TwoPlayerGame {
  std::array<PlayerProblem, 2> players;
  int n_total = 0;

  int block_start(int i) const { return i == 0 ? 0 : players[0].n_own; }
  int block_size(int i) const { return players[i].n_own; }

  Vec gather(int i, const Vec& x) const { return x.segment(block_start(i), block_size(i)); }
  void scatter(int i, const Vec& own, Vec& x) const {
    x.segment(block_start(i), block_size(i)) = own;
  }

  Mat cons_jac_own(int i, const Vec& x) const {
    return players[i].cons_jac_full(x).middleCols(block_start(i), block_size(i));
  }

  void validate() const {
    if (players[0].n_own + players[1].n_own != n_total)
      throw DimensionMismatch("TwoPlayerGame: blocks do not cover the joint vector");
  }
};

struct PlayerEval {
  double cost;
  Vec grad_own;
  Vec g;
  Mat jac_own;
};

inline PlayerEval evaluate_player(const TwoPlayerGame& game, int i, const Vec& x) {
  if (x.size() != game.n_total) throw DimensionMismatch("evaluate_player: bad x length");
  const auto& p = game.players[i];
  PlayerEval e{p.cost(x), p.cost_grad(x), p.constraints(x), game.cons_jac_own(i, x)};
  if (!std::isfinite(e.cost) || !e.grad_own.allFinite() || !e.g.allFinite() ||
      !e.jac_own.allFinite())
    throw NonFinite("evaluate_player: callback returned NaN/inf");
  return e;
}

// ---------------------------------------------------------------------------
// Finite-difference verification of model derivatives.

namespace detail {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <typename F>
Mat fd_jacobian(F&& f, const Vec& x, int rows, double step) {
  Mat jac(rows, x.size());
  for (int j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return jac;
}

// Row scales absorb the finite-difference noise floor of rows whose values
// are intrinsically large (e.g. squared-distance constraints).
inline double max_rel_err(const Mat& a, const Mat& b, const Vec& row_scale = Vec()) {
  double worst = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    const double rs = row_scale.size() == a.rows() ? std::abs(row_scale[i]) : 0.0;
    for (int j = 0; j < a.cols(); ++j) {
      const double x = a(i, j), y = b(i, j);
      worst = std::max(worst, std::abs(x - y) / std::max({1.0, std::abs(x), std::abs(y), rs}));
    }
  }
  return worst;
}

}  // namespace detail

struct PlayerDerivativeReport {
  double cost_grad = 0.0;
  double cons_jac = 0.0;
  double cost_hess = 0.0;
  double cons_hess_combo = 0.0;
  double cons_hess_own_left = 0.0;
  double worst() const {
    return std::max({cost_grad, cons_jac, cost_hess, cons_hess_combo, cons_hess_own_left});
  }
};

struct DerivativeReport {
  std::array<PlayerDerivativeReport, 2> player;
  double worst() const { return std::max(player[0].worst(), player[1].worst()); }
};

// Central-difference check of every callback against its lower-order source.
// Report-only; the caller decides what error is acceptable.
inline DerivativeReport check_derivatives(const TwoPlayerGame& game, const Vec& x,
                                          double step = 1e-6) {
  DerivativeReport rep;
  for (int i = 0; i < 2; ++i) {
    const auto& p = game.players[i];
    auto& r = rep.player[i];

    const Vec gfull = p.cost_grad_full(x);
    const Mat fd_grad =
        detail::fd_jacobian([&](const Vec& y) { return Vec::Constant(1, p.cost(y)); }, x, 1, step);
    r.cost_grad = detail::max_rel_err(gfull.transpose(), fd_grad);
    // The own-block gradient must be the exact slice of the full gradient.
    r.cost_grad = std::max(
        r.cost_grad,
        (p.cost_grad(x) - gfull.segment(game.block_start(i), game.block_size(i)))
            .cwiseAbs()
            .maxCoeff());

    if (p.m() > 0) {
      const Mat fd_jac = detail::fd_jacobian(p.constraints, x, p.m(), step);
      r.cons_jac = detail::max_rel_err(p.cons_jac_full(x), fd_jac, p.constraints(x));
    }

    if (p.cost_hess) {
      const Mat fd_hess = detail::fd_jacobian(p.cost_grad_full, x, game.n_total, step);
      r.cost_hess = detail::max_rel_err(p.cost_hess(x), fd_hess);
    }
    if (p.cons_hess_combo && p.m() > 0) {
      Vec w(p.m());
      for (int k = 0; k < p.m(); ++k) w[k] = std::cos(0.7 * k + 0.3) + 1.2;
      const Mat fd = detail::fd_jacobian(
          [&](const Vec& y) -> Vec { return p.cons_jac_full(y).transpose() * w; }, x,
          game.n_total, step);
      r.cons_hess_combo = detail::max_rel_err(p.cons_hess_combo(x, w), fd);
    }
    if (p.cons_hess_own_left && p.m() > 0) {
      Vec v(p.n_own);
      for (int k = 0; k < p.n_own; ++k) v[k] = std::sin(0.9 * k + 0.1) + 1.1;
      const int bs = game.block_start(i), bn = game.block_size(i);
      const Mat fd = detail::fd_jacobian(
          [&](const Vec& y) -> Vec { return p.cons_jac_full(y).middleCols(bs, bn) * v; }, x,
          p.m(), step);
      r.cons_hess_own_left = detail::max_rel_err(p.cons_hess_own_left(x, v), fd);
    }
  }
  return rep;
}

// Fills in any missing derivative callbacks by central differences of the
// supplied lower-order ones. Meant for small hand-written games; production
// models provide analytic derivatives.
inline void finite_difference_second_order(PlayerProblem& p, int own_start, int n_total,
                                           double step = 1e-5) {
  if (!p.cost_grad_full)
    p.cost_grad_full = [cost = p.cost, n_total, step](const Vec& x) {
      Vec g(n_total);
      for (int j = 0; j < n_total; ++j) {
        Vec xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        g[j] = (cost(xp) - cost(xm)) / (2.0 * step);
      }
      return g;
    };
  if (!p.cost_grad)
    p.cost_grad = [full = p.cost_grad_full, own_start, n = p.n_own](const Vec& x) -> Vec {
      return full(x).segment(own_start, n);
    };
  if (!p.cost_hess)
    p.cost_hess = [grad = p.cost_grad_full, n_total, step](const Vec& x) {
      Mat h = detail::fd_jacobian(grad, x, n_total, step);
      return Mat(0.5 * (h + h.transpose()));
    };
  if (!p.cons_hess_combo)
    p.cons_hess_combo = [jac = p.cons_jac_full, n_total, step](const Vec& x, const Vec& w) {
      Mat h = detail::fd_jacobian([&](const Vec& y) -> Vec { return jac(y).transpose() * w; },
                                  x, n_total, step);
      return Mat(0.5 * (h + h.transpose()));
    };
  if (!p.cons_hess_own_left)
    p.cons_hess_own_left = [jac = p.cons_jac_full, own_start, n_own = p.n_own, m = p.m(),
                            step](const Vec& x, const Vec& v) {
      return detail::fd_jacobian(
          [&](const Vec& y) -> Vec { return jac(y).middleCols(own_start, n_own) * v; }, x, m,
          step);
    };
}

}  // namespace equilib
