#pragma once

// Bilevel (leader/follower) equilibrium points.
//
// The follower's first-order conditions form a complementarity system whose
// solution set is a finite union of smooth "pieces", each determined by
// index sets (J1: row equality with the variable boxed, J2: variable pinned
// at its lower bound with the row nonnegative, J3: the mirrored upper-bound
// case). A candidate is a bilevel equilibrium when it is locally optimal for
// the leader's problem restricted to every piece containing it; disagreement
// on any piece replaces the candidate with that piece's solution and the
// outer loop repeats from a fresh follower solve.

#include "game.hpp"
#include "nash.hpp"
#include "nlp.hpp"

#include <optional>

namespace equilib::bilevel {

struct TooManyPieces : Error {
  using Error::Error;
};

// One branch assignment over the follower's KKT rows.
struct PieceSpec {
  std::vector<int> j1;
  std::vector<int> j2;
  std::vector<int> j3;
};

// interior -> J1, at_lower -> J2, at_upper -> J3; each degenerate row
// branches two ways. Pieces come out in lexicographic order (ascending row
// index, J1 before J2/J3), so enumeration is deterministic.
inline std::vector<PieceSpec> enumerate_pieces(const mcp::IndexClassification& cls, int cap) {
  const int d = static_cast<int>(cls.degenerate.size());
  if (d > 30 || (1u << d) > static_cast<unsigned>(cap))
    throw TooManyPieces("enumerate_pieces: 2^" + std::to_string(d) + " pieces exceed cap " +
                        std::to_string(cap));

  std::vector<PieceSpec> pieces;
  pieces.reserve(1u << d);
  for (unsigned mask = 0; mask < (1u << d); ++mask) {
    PieceSpec piece;
    piece.j1 = cls.interior;
    piece.j2 = cls.at_lower;
    piece.j3 = cls.at_upper;
    for (int b = 0; b < d; ++b) {
      const int row = cls.degenerate[b];
      const bool branch_bound = mask & (1u << (d - 1 - b));
      if (!branch_bound)
        piece.j1.push_back(row);
      else if (cls.degenerate_upper[b])
        piece.j3.push_back(row);
      else
        piece.j2.push_back(row);
    }
    std::sort(piece.j1.begin(), piece.j1.end());
    std::sort(piece.j2.begin(), piece.j2.end());
    std::sort(piece.j3.begin(), piece.j3.end());
    pieces.push_back(std::move(piece));
  }
  return pieces;
}

// Follower's best-response NLP: the leader's block of `x_joint` is frozen.
inline Nlp follower_nlp(const TwoPlayerGame& game, int leader, const Vec& x_joint) {
  const int fol = 1 - leader;
  const auto& pf = game.players[fol];
  const int fs = game.block_start(fol), fn = pf.n_own;

  auto embed = [game, fol, x_joint](const Vec& xf) {
    Vec x = x_joint;
    x.segment(game.block_start(fol), game.block_size(fol)) = xf;
    return x;
  };

  Nlp nlp;
  nlp.n = fn;
  nlp.lb = Vec::Constant(fn, -kInf);
  nlp.ub = Vec::Constant(fn, kInf);
  nlp.m_ineq = pf.m_ineq;
  nlp.m_eq = pf.m_eq;
  nlp.cost = [embed, &pf = game.players[fol], cost = pf.cost](const Vec& xf) {
    return cost(embed(xf));
  };
  nlp.grad = [embed, grad = pf.cost_grad](const Vec& xf) { return grad(embed(xf)); };
  nlp.cons = [embed, cons = pf.constraints](const Vec& xf) { return cons(embed(xf)); };
  nlp.jac = [embed, jac = pf.cons_jac_full, fs, fn](const Vec& xf) -> Mat {
    return jac(embed(xf)).middleCols(fs, fn);
  };
  nlp.lag_hess = [embed, hess = pf.cost_hess, combo = pf.cons_hess_combo, fs,
                  fn](const Vec& xf, const Vec& mu) -> Mat {
    const Vec x = embed(xf);
    Mat h = hess(x);
    if (mu.size() > 0) h -= combo(x, mu);
    return h.block(fs, fs, fn, fn);
  };
  return nlp;
}

struct FollowerSolve {
  Vec x_follower;
  Vec duals;
  mcp::Status status = mcp::Status::Diverged;
  double kkt_residual = kInf;
  bool converged() const { return status == mcp::Status::Converged; }
};

inline FollowerSolve solve_follower(const TwoPlayerGame& game, int leader, const Vec& x_joint,
                                    const Vec& warm_duals = Vec(),
                                    const mcp::Options& opts = {}) {
  const int fol = 1 - leader;
  const Nlp nlp = follower_nlp(game, leader, x_joint);
  const auto res = solve_nlp(nlp, game.gather(fol, x_joint), warm_duals, opts);
  return {res.x, res.mu, res.status, res.kkt_residual};
}

// The leader's problem restricted to one piece of the follower's
// complementarity system. Variables are w = [x; lambda_f]; constraints are
// the leader's own rows, the follower's stationarity, and the piece rows.
//
// Assembled row order: ineq = [leader g; J2 follower rows], eq = [leader h;
// follower stationarity; J1 follower rows (equality + eq-dual rows)].
struct PieceNlp {
  Nlp nlp;
  int n_joint = 0;    // leading block of w holding x
  int fol_start = 0;  // offset of lambda_f inside w
  int mf = 0;
};

inline PieceNlp piece_nlp(const TwoPlayerGame& game, int leader, const PieceSpec& piece,
                          double fd_step = 1e-5) {
  const int fol = 1 - leader;
  const auto& pl = game.players[leader];
  const auto& pf = game.players[fol];
  const int n = game.n_total;
  const int fs = game.block_start(fol), fn = pf.n_own;
  const int mf = pf.m();

  // Follower-KKT row r: [0, fn) stationarity, [fn, fn + m_ineq) inequality
  // duals, rest equality duals.
  std::vector<int> j1_ineq, j2_ineq, j1_eq;
  for (int r : piece.j1) {
    if (r < fn) continue;  // stationarity rows are always present below
    const int k = r - fn;
    (k < pf.m_ineq ? j1_ineq : j1_eq).push_back(k);
  }
  for (int r : piece.j2) {
    if (r < fn || r - fn >= pf.m_ineq)
      throw Error("piece_nlp: J2 branch on a row without a finite lower bound");
    j2_ineq.push_back(r - fn);
  }
  if (!piece.j3.empty()) throw Error("piece_nlp: J3 branch on a row without a finite upper bound");

  PieceNlp out;
  out.n_joint = n;
  out.fol_start = n;
  out.mf = mf;

  Nlp& nlp = out.nlp;
  nlp.n = n + mf;
  nlp.lb = Vec::Constant(nlp.n, -kInf);
  nlp.ub = Vec::Constant(nlp.n, kInf);
  // Inequality multipliers stay nonnegative on J1 rows and are pinned to
  // zero on J2 rows; equality multipliers remain free.
  for (int k : j1_ineq) nlp.lb[n + k] = 0.0;
  for (int k : j2_ineq) {
    nlp.lb[n + k] = 0.0;
    nlp.ub[n + k] = 0.0;
  }

  nlp.m_ineq = pl.m_ineq + static_cast<int>(j2_ineq.size());
  nlp.m_eq = pl.m_eq + fn + static_cast<int>(j1_eq.size()) + static_cast<int>(j1_ineq.size());

  const int n_leader_ineq = pl.m_ineq;
  const int n_leader_eq = pl.m_eq;

  auto fol_stationarity = [&pf = game.players[fol], game, fol](const Vec& x, const Vec& lam) {
    Vec st = pf.cost_grad(x);
    if (pf.m() > 0) st -= game.cons_jac_own(fol, x).transpose() * lam;
    return st;
  };

  nlp.cost = [cost = pl.cost, n](const Vec& w) { return cost(w.head(n)); };
  nlp.grad = [grad = pl.cost_grad_full, n, mf](const Vec& w) {
    Vec g = Vec::Zero(n + mf);
    g.head(n) = grad(w.head(n));
    return g;
  };

  nlp.cons = [game, leader, fol, fol_stationarity, j1_ineq, j2_ineq, j1_eq, n, fn,
              n_leader_ineq, n_leader_eq](const Vec& w) {
    const auto& pl = game.players[leader];
    const auto& pf = game.players[fol];
    const Vec x = w.head(n);
    const Vec lam = w.tail(pf.m());
    const Vec gl = pl.m() > 0 ? pl.constraints(x) : Vec();
    const Vec gf = pf.m() > 0 ? pf.constraints(x) : Vec();

    Vec c(n_leader_ineq + j2_ineq.size() + n_leader_eq + fn + j1_eq.size() + j1_ineq.size());
    int at = 0;
    c.segment(at, n_leader_ineq) = gl.head(n_leader_ineq);
    at += n_leader_ineq;
    for (int k : j2_ineq) c[at++] = gf[k];
    c.segment(at, n_leader_eq) = gl.tail(n_leader_eq);
    at += n_leader_eq;
    c.segment(at, fn) = fol_stationarity(x, lam);
    at += fn;
    for (int k : j1_eq) c[at++] = gf[k];
    for (int k : j1_ineq) c[at++] = gf[k];
    return c;
  };

  nlp.jac = [game, leader, fol, j1_ineq, j2_ineq, j1_eq, n, fn, mf, n_leader_ineq,
             n_leader_eq](const Vec& w) {
    const auto& pl = game.players[leader];
    const auto& pf = game.players[fol];
    const Vec x = w.head(n);
    const Vec lam = w.tail(mf);
    const int fs2 = game.block_start(fol);
    const Mat jl = pl.m() > 0 ? pl.cons_jac_full(x) : Mat(0, n);
    const Mat jf = pf.m() > 0 ? pf.cons_jac_full(x) : Mat(0, n);

    const int rows = n_leader_ineq + static_cast<int>(j2_ineq.size()) + n_leader_eq + fn +
                     static_cast<int>(j1_eq.size()) + static_cast<int>(j1_ineq.size());
    Mat jac = Mat::Zero(rows, n + mf);
    int at = 0;
    jac.block(at, 0, n_leader_ineq, n) = jl.topRows(n_leader_ineq);
    at += n_leader_ineq;
    for (int k : j2_ineq) jac.block(at++, 0, 1, n) = jf.row(k);
    jac.block(at, 0, n_leader_eq, n) = jl.bottomRows(n_leader_eq);
    at += n_leader_eq;
    // Stationarity rows: d/dx needs the follower's Lagrangian Hessian rows,
    // d/dlambda is -(d g_f/d x_f)'.
    Mat hf = pf.cost_hess(x);
    if (mf > 0) hf -= pf.cons_hess_combo(x, lam);
    jac.block(at, 0, fn, n) = hf.middleRows(fs2, fn);
    if (mf > 0)
      jac.block(at, n, fn, mf) = -jf.middleCols(fs2, fn).transpose();
    at += fn;
    for (int k : j1_eq) jac.block(at++, 0, 1, n) = jf.row(k);
    for (int k : j1_ineq) jac.block(at++, 0, 1, n) = jf.row(k);
    return jac;
  };

  nlp.lag_hess = [game, leader, fol, j1_ineq, j2_ineq, j1_eq, n, fn, mf, n_leader_ineq,
                  n_leader_eq, fd_step](const Vec& w, const Vec& mu) {
    const auto& pl = game.players[leader];
    const auto& pf = game.players[fol];
    const Vec x = w.head(n);
    const Vec lam = w.tail(mf);
    const int fs2 = game.block_start(fol);

    int at = 0;
    Vec w_leader(pl.m());
    w_leader.head(n_leader_ineq) = mu.segment(at, n_leader_ineq);
    at += n_leader_ineq;
    Vec w_fol = Vec::Zero(mf);
    for (int k : j2_ineq) w_fol[k] = mu[at++];
    w_leader.tail(n_leader_eq) = mu.segment(at, n_leader_eq);
    at += n_leader_eq;
    const Vec eta = mu.segment(at, fn);
    at += fn;
    for (int k : j1_eq) w_fol[k] = mu[at++];
    for (int k : j1_ineq) w_fol[k] = mu[at++];

    Mat h = Mat::Zero(n + mf, n + mf);
    Mat hxx = pl.cost_hess(x);
    if (pl.m() > 0) hxx -= pl.cons_hess_combo(x, w_leader);
    if (mf > 0) hxx -= pf.cons_hess_combo(x, w_fol);

    // Third-order term: -d2/dx2 of eta' * (follower stationarity). Its
    // gradient, M(x)' eta with M the follower Lagrangian Hessian rows, is
    // analytic; differentiate that by central differences.
    auto grad_phi = [&](const Vec& xx) -> Vec {
      Mat m = pf.cost_hess(xx);
      if (mf > 0) m -= pf.cons_hess_combo(xx, lam);
      return m.middleRows(fs2, fn).transpose() * eta;
    };
    Mat t(n, n);
    for (int j = 0; j < n; ++j) {
      const double step = fd_step * std::max(1.0, std::abs(x[j]));
      Vec xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      t.col(j) = (grad_phi(xp) - grad_phi(xm)) / (2.0 * step);
    }
    hxx -= 0.5 * (t + t.transpose());

    h.topLeftCorner(n, n) = hxx;
    if (mf > 0) {
      // Cross block from the lambda-linear part of the stationarity rows.
      const Mat cross = pf.cons_hess_own_left(x, eta);  // mf x n
      h.bottomLeftCorner(mf, n) += cross;
      h.topRightCorner(n, mf) += cross.transpose();
    }
    return h;
  };
  return out;
}

struct PieceSolve {
  Vec x;               // joint decision point
  Vec follower_duals;
  bool is_local_min = false;  // start was already stationary for this piece
  bool solved = false;
  double leader_cost = kInf;
  double movement = kInf;
  double improvement = -kInf;
};

inline PieceSolve solve_piece_nlp(const TwoPlayerGame& game, int leader, const PieceSpec& piece,
                                  const Vec& x_start, const Vec& follower_duals,
                                  const mcp::Options& opts = {}, const Vec& warm_mu = Vec(),
                                  double improve_tol = 1e-8, double move_tol = 1e-6) {
  const auto pn = piece_nlp(game, leader, piece);
  Vec w0(pn.nlp.n);
  w0.head(pn.n_joint) = x_start;
  w0.tail(pn.mf) = follower_duals;

  const auto chk = check_local_membership(pn.nlp, w0, warm_mu, opts, pn.n_joint, improve_tol,
                                          move_tol);
  PieceSolve ps;
  ps.solved = chk.solved;
  if (!chk.solved) return ps;
  ps.x = chk.result.x.head(pn.n_joint);
  ps.follower_duals = chk.result.x.tail(pn.mf);
  ps.is_local_min = chk.agrees;
  ps.leader_cost = game.players[leader].cost(ps.x);
  ps.movement = chk.movement;
  ps.improvement = chk.improvement;
  return ps;
}

enum class BilevelStatus { Equilibrium, MaxOuterIterations, PieceSolveFailed, FollowerSolveFailed };

inline const char* to_string(BilevelStatus s) {
  switch (s) {
    case BilevelStatus::Equilibrium: return "Equilibrium";
    case BilevelStatus::MaxOuterIterations: return "MaxOuterIterations";
    case BilevelStatus::PieceSolveFailed: return "PieceSolveFailed";
    case BilevelStatus::FollowerSolveFailed: return "FollowerSolveFailed";
  }
  return "?";
}

struct BilevelOptions {
  int piece_cap = 256;
  int outer_cap = 50;
  double act_tol = 1e-6;
  double improve_tol = 1e-8;  // leader-cost improvement that breaks membership
  double move_tol = 1e-6;     // displacement that breaks membership
  double stall_tol = 1e-10;   // outer-loop cycling guard
  mcp::Options mcp;
};

struct BilevelResult {
  Vec x;
  Vec follower_duals;
  int pieces_checked = 0;
  int outer_iterations = 0;
  BilevelStatus status = BilevelStatus::FollowerSolveFailed;
  double leader_cost = kInf;
  double follower_kkt_residual = kInf;
  bool equilibrium() const { return status == BilevelStatus::Equilibrium; }
};

struct BilevelWarmStart {
  Vec follower_duals;
  Vec leader_duals;  // used to warm the piece solves' leader rows
};

inline BilevelResult solve_bilevel(const TwoPlayerGame& game, int leader, const Vec& x0,
                                   const BilevelOptions& opts = {},
                                   const BilevelWarmStart& warm = {}) {
  game.validate();
  const int fol = 1 - leader;
  const auto& pf = game.players[fol];

  BilevelResult res;
  res.x = x0;
  Vec fol_duals = warm.follower_duals.size() == pf.m() ? warm.follower_duals
                                                       : Vec(Vec::Zero(pf.m()));

  double prev_cost = kInf;
  int stalled = 0;
  for (int outer = 1; outer <= opts.outer_cap; ++outer) {
    res.outer_iterations = outer;

    const auto fsol = solve_follower(game, leader, res.x, fol_duals, opts.mcp);
    if (!fsol.converged()) {
      res.status = BilevelStatus::FollowerSolveFailed;
      return res;
    }
    game.scatter(fol, fsol.x_follower, res.x);
    fol_duals = fsol.duals;
    res.follower_kkt_residual = fsol.kkt_residual;

    // Branch on the follower's complementarity structure at this solution.
    const auto fkkt = kkt_problem(follower_nlp(game, leader, res.x));
    Vec zf(fkkt.dim);
    zf.head(pf.n_own) = fsol.x_follower;
    zf.tail(pf.m()) = fol_duals;
    mcp::IndexClassification cls;
    try {
      cls = mcp::classify_indices(fkkt, zf, opts.act_tol);
    } catch (const InvalidPoint&) {
      res.status = BilevelStatus::FollowerSolveFailed;
      return res;
    }

    std::vector<PieceSpec> pieces;
    try {
      pieces = enumerate_pieces(cls, opts.piece_cap);
    } catch (const TooManyPieces&) {
      res.status = BilevelStatus::PieceSolveFailed;
      return res;
    }

    bool all_agree = true;
    for (const auto& piece : pieces) {
      ++res.pieces_checked;
      const auto ps = solve_piece_nlp(game, leader, piece, res.x, fol_duals, opts.mcp, Vec(),
                                      opts.improve_tol, opts.move_tol);
      if (!ps.solved) {
        res.status = BilevelStatus::PieceSolveFailed;
        return res;
      }
      if (!ps.is_local_min) {
        // Adopt the piece's solution and restart from a fresh follower solve.
        res.x = ps.x;
        fol_duals = ps.follower_duals;
        all_agree = false;
        break;
      }
    }

    res.leader_cost = game.players[leader].cost(res.x);
    if (all_agree) {
      res.status = BilevelStatus::Equilibrium;
      return res;
    }
    if (prev_cost - res.leader_cost <= opts.stall_tol)
      ++stalled;
    else
      stalled = 0;
    if (stalled >= 2) break;
    prev_cost = res.leader_cost;
  }
  res.status = BilevelStatus::MaxOuterIterations;
  return res;
}

}  // namespace equilib::bilevel
