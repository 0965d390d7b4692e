#pragma once

// The two-craft racing game over an n_T-step horizon.
//
// Per player, the decision block is [states y(1..n_T); controls u(0..n_T-1)]
// with y = (p_lat, p_long, v, theta) and u = (thrust, heading_rate). Stage
// costs penalize distance from the lane-center circle, control effort, and
// the opponent's longitudinal-velocity advantage. Constraints per step:
// 4 dynamics equalities, 1 collision inequality with position-dependent
// responsibility, 2 track-band inequalities against the fitted arc, 3 state
// inequalities (v >= 0, |theta| <= pi/2), and 4 control inequalities
// including the drafting-dependent thrust ceiling.

#include "../game.hpp"
#include "dynamics.hpp"
#include "track.hpp"

namespace equilib::racing {

struct InfeasibleStart : Error {
  using Error::Error;
};

inline double logistic(double s) { return 1.0 / (1.0 + std::exp(-s)); }
inline double logistic_d1(double s) {
  const double g = logistic(s);
  return g * (1.0 - g);
}
inline double logistic_d2(double s) {
  const double g = logistic(s);
  return g * (1.0 - g) * (1.0 - 2.0 * g);
}

// ---------------------------------------------------------------------------
// Collision-avoidance responsibility.
//
// h = p2_long - p1_long. The trailing player's constraint tightens, the
// leading player's is relieved by at most logistic(-offset); both offsets
// vanish when the players are exactly side by side.

struct Sigmoid3 {
  double value = 0.0;
  double d1 = 0.0;  // d/dh
  double d2 = 0.0;
};

inline Sigmoid3 responsibility_term(int player, double h, const RaceParams& p) {
  const double sign = player == 0 ? 1.0 : -1.0;
  const double arg = sign * p.resp_slope * h - p.resp_offset;
  return {logistic(arg) - logistic(-p.resp_offset), sign * p.resp_slope * logistic_d1(arg),
          p.resp_slope * p.resp_slope * logistic_d2(arg)};
}

inline std::pair<double, double> responsibility(double h, const RaceParams& p) {
  return {responsibility_term(0, h, p).value, responsibility_term(1, h, p).value};
}

// g_col for `player` (0-based), using the planning radius. Termination
// checks elsewhere use the bare collision radius.
inline double collision_constraint(double p1_lat, double p1_long, double p2_lat, double p2_long,
                                   int player, const RaceParams& p) {
  const double dl = p1_lat - p2_lat, dg = p1_long - p2_long;
  const double r = p.planning_radius();
  return dl * dl + dg * dg - r * r - responsibility_term(player, p2_long - p1_long, p).value;
}

// ---------------------------------------------------------------------------
// Drafting gate: a smooth triangular region trailing the opponent, with base
// draft_width at the opponent tapering to zero draft_length behind. The gate
// value scales the thrust ceiling between its nominal and drafting limits.

struct Gate2 {
  double value = 0.0;  // in [0, 1]
  double d_l = 0.0;    // d/d(delta_long)
  double d_x = 0.0;    // d/d(delta_lat)
  double d_ll = 0.0;
  double d_lx = 0.0;
  double d_xx = 0.0;
};

inline Gate2 draft_gate(double dlong, double dlat, const RaceParams& p) {
  const double s = p.gate_sharpness;
  const double eps = p.gate_smooth_eps;
  const double w_abs = std::sqrt(dlat * dlat + eps * eps);  // smooth |dlat|
  const double w_abs_d1 = dlat / w_abs;
  const double w_abs_d2 = eps * eps / (w_abs * w_abs * w_abs);
  const double tri = 0.5 * p.draft_width * (1.0 - dlong / p.draft_length);
  const double tri_d1 = -0.5 * p.draft_width / p.draft_length;

  const double arg_a = s * dlong;
  const double arg_b = s * (p.draft_length - dlong);
  const double arg_c = s * (tri - w_abs);
  const double a = logistic(arg_a), b = logistic(arg_b), c = logistic(arg_c);
  const double norm = std::pow(logistic(0.5 * s * p.draft_length), 3);

  Gate2 g;
  const double raw = a * b * c / norm;
  if (raw <= 0.0 || raw >= 1.0) {
    g.value = std::clamp(raw, 0.0, 1.0);
    return g;
  }
  const double a1 = s * logistic_d1(arg_a), a2 = s * s * logistic_d2(arg_a);
  const double b1 = -s * logistic_d1(arg_b), b2 = s * s * logistic_d2(arg_b);
  const double c_l = logistic_d1(arg_c) * s * tri_d1;
  const double c_x = -logistic_d1(arg_c) * s * w_abs_d1;
  const double c_ll = logistic_d2(arg_c) * (s * tri_d1) * (s * tri_d1);
  const double c_lx = -logistic_d2(arg_c) * (s * tri_d1) * (s * w_abs_d1);
  const double c_xx =
      logistic_d2(arg_c) * (s * w_abs_d1) * (s * w_abs_d1) - logistic_d1(arg_c) * s * w_abs_d2;

  g.value = raw;
  g.d_l = (a1 * b * c + a * b1 * c + a * b * c_l) / norm;
  g.d_x = a * b * c_x / norm;
  g.d_ll = (a2 * b * c + a * b2 * c + a * b * c_ll + 2.0 * a1 * b1 * c + 2.0 * a1 * b * c_l +
            2.0 * a * b1 * c_l) /
           norm;
  g.d_lx = (a1 * b * c_x + a * b1 * c_x + a * b * c_lx) / norm;
  g.d_xx = a * b * c_xx / norm;
  return g;
}

// tau^draft: thrust ceiling for the ego craft given both positions.
inline double draft_limit(double ego_lat, double ego_long, double opp_lat, double opp_long,
                          const RaceParams& p) {
  const Gate2 g = draft_gate(opp_long - ego_long, opp_lat - ego_lat, p);
  return p.thrust_max_nominal + (p.thrust_max_draft - p.thrust_max_nominal) * g.value;
}

// ---------------------------------------------------------------------------
// Game assembly.

struct Scenario {
  std::array<CraftState, 2> start;
  std::array<Arc, 2> arcs;  // fitted at the current positions, fixed per solve
  RaceParams params;
};

inline Scenario make_scenario(const TrackLayout& track, const CraftState& s1,
                              const CraftState& s2, const RaceParams& params) {
  return {{s1, s2},
          {fit_arc(track, s1.p_lat, s1.p_long), fit_arc(track, s2.p_lat, s2.p_long)},
          params};
}

inline bool inside_track_band(const Arc& arc, double p_lat, double p_long, double width) {
  const double dl = p_lat - arc.center_lat, dg = p_long - arc.center_long;
  const double q = dl * dl + dg * dg;
  const double lo = arc.radius - 0.5 * width, hi = arc.radius + 0.5 * width;
  return q >= lo * lo && q <= hi * hi;
}

// Per-player decision block: states t = 1..nT (lat, long, v, theta), then
// controls t = 0..nT-1 (thrust, heading_rate).
struct BlockLayout {
  int n_t;
  int per_player() const { return 6 * n_t; }
  int state(int player, int t, int comp) const {
    return player * per_player() + 4 * (t - 1) + comp;
  }
  int control(int player, int t, int comp) const {
    return player * per_player() + 4 * n_t + 2 * t + comp;
  }
};

enum StateComp { kLat = 0, kLong = 1, kSpeed = 2, kHeading = 3 };

// Inequality rows per step, in order.
enum IneqKind {
  kColl = 0,
  kTrackLo,
  kTrackHi,
  kSpeedFloor,
  kHeadingHi,
  kHeadingLo,
  kThrustLo,
  kThrustDraft,
  kRateHi,
  kRateLo,
  kIneqPerStep
};

inline int ineq_row(int t, int kind) { return kIneqPerStep * (t - 1) + kind; }
inline int eq_row(int n_t, int stage, int comp) { return kIneqPerStep * n_t + 4 * stage + comp; }

namespace detail {

struct ModelContext {
  Scenario sc;
  BlockLayout bl;

  double state_at(const Vec& x, int player, int t, int comp) const {
    if (t == 0) {
      const CraftState& s = sc.start[player];
      switch (comp) {
        case kLat: return s.p_lat;
        case kLong: return s.p_long;
        case kSpeed: return s.v;
        default: return s.theta;
      }
    }
    return x[bl.state(player, t, comp)];
  }
  double control_at(const Vec& x, int player, int t, int comp) const {
    return x[bl.control(player, t, comp)];
  }
};

inline Vec player_constraints(const ModelContext& ctx, int e, const Vec& x) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const int o = 1 - e;
  Vec g(14 * n_t);
  const Arc& arc = ctx.sc.arcs[e];
  const double r_lo = arc.radius - 0.5 * p.track_width;
  const double r_hi = arc.radius + 0.5 * p.track_width;

  for (int t = 1; t <= n_t; ++t) {
    const double l1 = ctx.state_at(x, 0, t, kLat), g1 = ctx.state_at(x, 0, t, kLong);
    const double l2 = ctx.state_at(x, 1, t, kLat), g2 = ctx.state_at(x, 1, t, kLong);
    g[ineq_row(t, kColl)] = collision_constraint(l1, g1, l2, g2, e, p);

    const double le = ctx.state_at(x, e, t, kLat), ge = ctx.state_at(x, e, t, kLong);
    const double dl = le - arc.center_lat, dg = ge - arc.center_long;
    const double q = dl * dl + dg * dg;
    g[ineq_row(t, kTrackLo)] = q - r_lo * r_lo;
    g[ineq_row(t, kTrackHi)] = r_hi * r_hi - q;

    g[ineq_row(t, kSpeedFloor)] = ctx.state_at(x, e, t, kSpeed);
    g[ineq_row(t, kHeadingHi)] = 0.5 * M_PI - ctx.state_at(x, e, t, kHeading);
    g[ineq_row(t, kHeadingLo)] = ctx.state_at(x, e, t, kHeading) + 0.5 * M_PI;

    const double thrust = ctx.control_at(x, e, t - 1, 0);
    const double rate = ctx.control_at(x, e, t - 1, 1);
    const double lo = ctx.state_at(x, o, t, kLat), go = ctx.state_at(x, o, t, kLong);
    g[ineq_row(t, kThrustLo)] = thrust - p.thrust_min;
    g[ineq_row(t, kThrustDraft)] = draft_limit(le, ge, lo, go, p) - thrust;
    g[ineq_row(t, kRateHi)] = p.heading_rate_max - rate;
    g[ineq_row(t, kRateLo)] = rate + p.heading_rate_max;
  }

  const bool integrated = p.dynamics == DynamicsMode::Integrated;
  for (int s = 0; s < n_t; ++s) {
    const double v0 = ctx.state_at(x, e, s, kSpeed), th0 = ctx.state_at(x, e, s, kHeading);
    const double l0 = ctx.state_at(x, e, s, kLat), g0 = ctx.state_at(x, e, s, kLong);
    const double v1 = ctx.state_at(x, e, s + 1, kSpeed), th1 = ctx.state_at(x, e, s + 1, kHeading);
    const double l1 = ctx.state_at(x, e, s + 1, kLat), g1 = ctx.state_at(x, e, s + 1, kLong);
    const double thrust = ctx.control_at(x, e, s, 0), rate = ctx.control_at(x, e, s, 1);
    if (integrated) {
      g[eq_row(n_t, s, 0)] = v1 - v0 - p.dt * (thrust - p.drag * v0);
      g[eq_row(n_t, s, 1)] = th1 - th0 - p.dt * rate;
    } else {
      g[eq_row(n_t, s, 0)] = v1 - (thrust - p.drag * v0);
      g[eq_row(n_t, s, 1)] = th1 - rate;
    }
    g[eq_row(n_t, s, 2)] = l1 - l0 - p.dt * v1 * std::cos(th1);
    g[eq_row(n_t, s, 3)] = g1 - g0 - p.dt * v1 * std::sin(th1);
  }
  return g;
}

inline Mat player_cons_jac(const ModelContext& ctx, int e, const Vec& x) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const int o = 1 - e;
  const auto& bl = ctx.bl;
  Mat jac = Mat::Zero(14 * n_t, 12 * n_t);
  const Arc& arc = ctx.sc.arcs[e];

  for (int t = 1; t <= n_t; ++t) {
    const int il1 = bl.state(0, t, kLat), ig1 = bl.state(0, t, kLong);
    const int il2 = bl.state(1, t, kLat), ig2 = bl.state(1, t, kLong);
    {
      const double dl = x[il1] - x[il2], dg = x[ig1] - x[ig2];
      const auto ell = responsibility_term(e, x[ig2] - x[ig1], p);
      const int r = ineq_row(t, kColl);
      jac(r, il1) = 2.0 * dl;
      jac(r, il2) = -2.0 * dl;
      jac(r, ig1) = 2.0 * dg + ell.d1;
      jac(r, ig2) = -2.0 * dg - ell.d1;
    }
    {
      const int ile = bl.state(e, t, kLat), ige = bl.state(e, t, kLong);
      const double dl = x[ile] - arc.center_lat, dg = x[ige] - arc.center_long;
      jac(ineq_row(t, kTrackLo), ile) = 2.0 * dl;
      jac(ineq_row(t, kTrackLo), ige) = 2.0 * dg;
      jac(ineq_row(t, kTrackHi), ile) = -2.0 * dl;
      jac(ineq_row(t, kTrackHi), ige) = -2.0 * dg;
    }
    jac(ineq_row(t, kSpeedFloor), bl.state(e, t, kSpeed)) = 1.0;
    jac(ineq_row(t, kHeadingHi), bl.state(e, t, kHeading)) = -1.0;
    jac(ineq_row(t, kHeadingLo), bl.state(e, t, kHeading)) = 1.0;

    const int itau = bl.control(e, t - 1, 0), irate = bl.control(e, t - 1, 1);
    jac(ineq_row(t, kThrustLo), itau) = 1.0;
    {
      const int ile = bl.state(e, t, kLat), ige = bl.state(e, t, kLong);
      const int ilo = bl.state(o, t, kLat), igo = bl.state(o, t, kLong);
      const Gate2 gate = draft_gate(x[igo] - x[ige], x[ilo] - x[ile], p);
      const double span = p.thrust_max_draft - p.thrust_max_nominal;
      const int r = ineq_row(t, kThrustDraft);
      jac(r, igo) = span * gate.d_l;
      jac(r, ige) = -span * gate.d_l;
      jac(r, ilo) = span * gate.d_x;
      jac(r, ile) = -span * gate.d_x;
      jac(r, itau) = -1.0;
    }
    jac(ineq_row(t, kRateHi), irate) = -1.0;
    jac(ineq_row(t, kRateLo), irate) = 1.0;
  }

  const bool integrated = p.dynamics == DynamicsMode::Integrated;
  for (int s = 0; s < n_t; ++s) {
    const double v1 = ctx.state_at(x, e, s + 1, kSpeed), th1 = ctx.state_at(x, e, s + 1, kHeading);
    const int iv1 = bl.state(e, s + 1, kSpeed), ith1 = bl.state(e, s + 1, kHeading);
    const int il1 = bl.state(e, s + 1, kLat), ig1 = bl.state(e, s + 1, kLong);
    const int itau = bl.control(e, s, 0), irate = bl.control(e, s, 1);

    {
      const int r = eq_row(n_t, s, 0);
      jac(r, iv1) = 1.0;
      if (s >= 1) jac(r, bl.state(e, s, kSpeed)) = integrated ? -(1.0 - p.dt * p.drag) : p.drag;
      jac(r, itau) = integrated ? -p.dt : -1.0;
    }
    {
      const int r = eq_row(n_t, s, 1);
      jac(r, ith1) = 1.0;
      if (s >= 1 && integrated) jac(r, bl.state(e, s, kHeading)) = -1.0;
      jac(r, irate) = integrated ? -p.dt : -1.0;
    }
    {
      const int r = eq_row(n_t, s, 2);
      jac(r, il1) = 1.0;
      if (s >= 1) jac(r, bl.state(e, s, kLat)) = -1.0;
      jac(r, iv1) = -p.dt * std::cos(th1);
      jac(r, ith1) = p.dt * v1 * std::sin(th1);
    }
    {
      const int r = eq_row(n_t, s, 3);
      jac(r, ig1) = 1.0;
      if (s >= 1) jac(r, bl.state(e, s, kLong)) = -1.0;
      jac(r, iv1) = -p.dt * std::sin(th1);
      jac(r, ith1) = -p.dt * v1 * std::cos(th1);
    }
  }
  return jac;
}

// Emits each distinct second-derivative entry of one constraint row once
// (unordered index pair).
template <typename Emit>
void visit_cons_row_hessian(const ModelContext& ctx, int e, const Vec& x, int row, Emit&& emit) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const auto& bl = ctx.bl;
  const int o = 1 - e;

  if (row >= kIneqPerStep * n_t) {
    const int stage = (row - kIneqPerStep * n_t) / 4;
    const int comp = (row - kIneqPerStep * n_t) % 4;
    if (comp < 2) return;  // speed/heading updates are linear
    const double v1 = ctx.state_at(x, e, stage + 1, kSpeed);
    const double th1 = ctx.state_at(x, e, stage + 1, kHeading);
    const int iv1 = bl.state(e, stage + 1, kSpeed), ith1 = bl.state(e, stage + 1, kHeading);
    if (comp == 2) {
      emit(iv1, ith1, p.dt * std::sin(th1));
      emit(ith1, ith1, p.dt * v1 * std::cos(th1));
    } else {
      emit(iv1, ith1, -p.dt * std::cos(th1));
      emit(ith1, ith1, p.dt * v1 * std::sin(th1));
    }
    return;
  }

  const int t = row / kIneqPerStep + 1;
  const int kind = row % kIneqPerStep;
  switch (kind) {
    case kColl: {
      const int il1 = bl.state(0, t, kLat), ig1 = bl.state(0, t, kLong);
      const int il2 = bl.state(1, t, kLat), ig2 = bl.state(1, t, kLong);
      const auto ell = responsibility_term(e, x[ig2] - x[ig1], p);
      emit(il1, il1, 2.0);
      emit(il2, il2, 2.0);
      emit(il1, il2, -2.0);
      emit(ig1, ig1, 2.0 - ell.d2);
      emit(ig2, ig2, 2.0 - ell.d2);
      emit(ig1, ig2, -2.0 + ell.d2);
      return;
    }
    case kTrackLo:
    case kTrackHi: {
      const double sgn = kind == kTrackLo ? 2.0 : -2.0;
      emit(bl.state(e, t, kLat), bl.state(e, t, kLat), sgn);
      emit(bl.state(e, t, kLong), bl.state(e, t, kLong), sgn);
      return;
    }
    case kThrustDraft: {
      const int ile = bl.state(e, t, kLat), ige = bl.state(e, t, kLong);
      const int ilo = bl.state(o, t, kLat), igo = bl.state(o, t, kLong);
      const Gate2 gate = draft_gate(x[igo] - x[ige], x[ilo] - x[ile], p);
      const double span = p.thrust_max_draft - p.thrust_max_nominal;
      emit(ige, ige, span * gate.d_ll);
      emit(igo, igo, span * gate.d_ll);
      emit(ige, igo, -span * gate.d_ll);
      emit(ile, ile, span * gate.d_xx);
      emit(ilo, ilo, span * gate.d_xx);
      emit(ile, ilo, -span * gate.d_xx);
      emit(ige, ile, span * gate.d_lx);
      emit(igo, ilo, span * gate.d_lx);
      emit(ige, ilo, -span * gate.d_lx);
      emit(igo, ile, -span * gate.d_lx);
      return;
    }
    default:
      return;  // all other rows are linear
  }
}

template <typename Emit>
void visit_cost_hessian(const ModelContext& ctx, int e, const Vec& x, Emit&& emit) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const auto& bl = ctx.bl;
  const int o = 1 - e;
  const Arc& arc = ctx.sc.arcs[e];
  const double a1sq = p.center_weight * p.center_weight;
  const double r2 = arc.radius * arc.radius;

  for (int t = 1; t <= n_t; ++t) {
    const int il = bl.state(e, t, kLat), ig = bl.state(e, t, kLong);
    const double dl = x[il] - arc.center_lat, dg = x[ig] - arc.center_long;
    const double q = dl * dl + dg * dg;
    emit(il, il, 4.0 * a1sq * (q - r2) + 8.0 * a1sq * dl * dl);
    emit(ig, ig, 4.0 * a1sq * (q - r2) + 8.0 * a1sq * dg * dg);
    emit(il, ig, 8.0 * a1sq * dl * dg);

    const int ive = bl.state(e, t, kSpeed), ithe = bl.state(e, t, kHeading);
    emit(ive, ithe, -p.speed_weight * std::cos(x[ithe]));
    emit(ithe, ithe, p.speed_weight * x[ive] * std::sin(x[ithe]));

    const int ivo = bl.state(o, t, kSpeed), itho = bl.state(o, t, kHeading);
    emit(ivo, itho, p.speed_weight * std::cos(x[itho]));
    emit(itho, itho, -p.speed_weight * x[ivo] * std::sin(x[itho]));

    emit(bl.control(e, t - 1, 0), bl.control(e, t - 1, 0), 2.0 * p.control_weight);
    emit(bl.control(e, t - 1, 1), bl.control(e, t - 1, 1), 2.0 * p.control_weight);
  }
}

inline double player_cost(const ModelContext& ctx, int e, const Vec& x) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const int o = 1 - e;
  const Arc& arc = ctx.sc.arcs[e];
  const double a1sq = p.center_weight * p.center_weight;
  const double r2 = arc.radius * arc.radius;

  double cost = 0.0;
  for (int t = 1; t <= n_t; ++t) {
    const double dl = ctx.state_at(x, e, t, kLat) - arc.center_lat;
    const double dg = ctx.state_at(x, e, t, kLong) - arc.center_long;
    const double q = dl * dl + dg * dg;
    const double thrust = ctx.control_at(x, e, t - 1, 0);
    const double rate = ctx.control_at(x, e, t - 1, 1);
    const double v_long_own =
        ctx.state_at(x, e, t, kSpeed) * std::sin(ctx.state_at(x, e, t, kHeading));
    const double v_long_opp =
        ctx.state_at(x, o, t, kSpeed) * std::sin(ctx.state_at(x, o, t, kHeading));
    cost += a1sq * (q - r2) * (q - r2) + p.control_weight * (thrust * thrust + rate * rate) +
            p.speed_weight * (v_long_opp - v_long_own);
  }
  return cost;
}

inline Vec player_cost_grad_full(const ModelContext& ctx, int e, const Vec& x) {
  const auto& p = ctx.sc.params;
  const int n_t = p.horizon;
  const int o = 1 - e;
  const auto& bl = ctx.bl;
  const Arc& arc = ctx.sc.arcs[e];
  const double a1sq = p.center_weight * p.center_weight;
  const double r2 = arc.radius * arc.radius;

  Vec grad = Vec::Zero(12 * n_t);
  for (int t = 1; t <= n_t; ++t) {
    const int il = bl.state(e, t, kLat), ig = bl.state(e, t, kLong);
    const double dl = x[il] - arc.center_lat, dg = x[ig] - arc.center_long;
    const double q = dl * dl + dg * dg;
    grad[il] += 4.0 * a1sq * (q - r2) * dl;
    grad[ig] += 4.0 * a1sq * (q - r2) * dg;

    const int ive = bl.state(e, t, kSpeed), ithe = bl.state(e, t, kHeading);
    grad[ive] += -p.speed_weight * std::sin(x[ithe]);
    grad[ithe] += -p.speed_weight * x[ive] * std::cos(x[ithe]);
    const int ivo = bl.state(o, t, kSpeed), itho = bl.state(o, t, kHeading);
    grad[ivo] += p.speed_weight * std::sin(x[itho]);
    grad[itho] += p.speed_weight * x[ivo] * std::cos(x[itho]);

    grad[bl.control(e, t - 1, 0)] += 2.0 * p.control_weight * ctx.control_at(x, e, t - 1, 0);
    grad[bl.control(e, t - 1, 1)] += 2.0 * p.control_weight * ctx.control_at(x, e, t - 1, 1);
  }
  return grad;
}

}  // namespace detail

// Fills player e's decision block of x with a rollout of `controls` from the
// scenario's start state; also the zero-control fallback plan.
inline void write_rollout(const Scenario& sc, int e, const std::vector<Control>& controls,
                          Vec& x) {
  const int n_t = sc.params.horizon;
  if (static_cast<int>(controls.size()) != n_t)
    throw DimensionMismatch("write_rollout: expected one control per horizon step");
  const BlockLayout bl{n_t};
  CraftState s = sc.start[e];
  for (int t = 1; t <= n_t; ++t) {
    s = step_dynamics(s, controls[t - 1], sc.params);
    x[bl.state(e, t, kLat)] = s.p_lat;
    x[bl.state(e, t, kLong)] = s.p_long;
    x[bl.state(e, t, kSpeed)] = s.v;
    x[bl.state(e, t, kHeading)] = s.theta;
    x[bl.control(e, t - 1, 0)] = controls[t - 1].thrust;
    x[bl.control(e, t - 1, 1)] = controls[t - 1].heading_rate;
  }
}

inline PlayerProblem make_player(const Scenario& sc, int e) {
  const int n_t = sc.params.horizon;
  detail::ModelContext ctx{sc, BlockLayout{n_t}};

  PlayerProblem p;
  p.n_own = 6 * n_t;
  p.m_ineq = kIneqPerStep * n_t;
  p.m_eq = 4 * n_t;

  const int own_start = e * 6 * n_t;
  const int n = 12 * n_t;

  p.cost = [ctx, e](const Vec& x) { return detail::player_cost(ctx, e, x); };
  p.cost_grad_full = [ctx, e](const Vec& x) { return detail::player_cost_grad_full(ctx, e, x); };
  p.cost_grad = [ctx, e, own_start, n_own = p.n_own](const Vec& x) -> Vec {
    return detail::player_cost_grad_full(ctx, e, x).segment(own_start, n_own);
  };
  p.constraints = [ctx, e](const Vec& x) { return detail::player_constraints(ctx, e, x); };
  p.cons_jac_full = [ctx, e](const Vec& x) { return detail::player_cons_jac(ctx, e, x); };

  p.cost_hess = [ctx, e, n](const Vec& x) {
    Mat h = Mat::Zero(n, n);
    detail::visit_cost_hessian(ctx, e, x, [&](int a, int b, double v) {
      h(a, b) += v;
      if (a != b) h(b, a) += v;
    });
    return h;
  };
  p.cons_hess_combo = [ctx, e, n, m = p.m()](const Vec& x, const Vec& w) {
    Mat h = Mat::Zero(n, n);
    for (int r = 0; r < m; ++r) {
      if (w[r] == 0.0) continue;
      detail::visit_cons_row_hessian(ctx, e, x, r, [&](int a, int b, double v) {
        h(a, b) += w[r] * v;
        if (a != b) h(b, a) += w[r] * v;
      });
    }
    return h;
  };
  p.cons_hess_own_left = [ctx, e, n, m = p.m(), own_start,
                          n_own = p.n_own](const Vec& x, const Vec& v) {
    Mat out = Mat::Zero(m, n);
    for (int r = 0; r < m; ++r) {
      detail::visit_cons_row_hessian(ctx, e, x, r, [&](int a, int b, double val) {
        if (a >= own_start && a < own_start + n_own) out(r, b) += v[a - own_start] * val;
        if (a != b && b >= own_start && b < own_start + n_own) out(r, a) += v[b - own_start] * val;
      });
    }
    return out;
  };
  return p;
}

inline TwoPlayerGame build_game(const Scenario& sc) {
  sc.params.validate();
  const auto& p = sc.params;
  for (int e = 0; e < 2; ++e)
    if (!inside_track_band(sc.arcs[e], sc.start[e].p_lat, sc.start[e].p_long, p.track_width))
      throw InfeasibleStart("initial state violates the track band for player " +
                            std::to_string(e + 1));
  const double dl = sc.start[0].p_lat - sc.start[1].p_lat;
  const double dg = sc.start[0].p_long - sc.start[1].p_long;
  if (dl * dl + dg * dg < p.collision_radius * p.collision_radius)
    throw InfeasibleStart("initial states are closer than the collision radius");

  TwoPlayerGame game;
  game.n_total = 12 * p.horizon;
  game.players = {make_player(sc, 0), make_player(sc, 1)};
  game.validate();
  return game;
}

// Stage cost at a realized transition: the running-cost term the study
// accumulates. `next` is the state reached by applying `u` from the current
// state; the arc is the one the step was planned against.
inline double stage_cost(const CraftState& next_own, const CraftState& next_opp,
                         const Control& u, const Arc& arc, const RaceParams& p) {
  const double dl = next_own.p_lat - arc.center_lat;
  const double dg = next_own.p_long - arc.center_long;
  const double q = dl * dl + dg * dg;
  const double r2 = arc.radius * arc.radius;
  const double a1sq = p.center_weight * p.center_weight;
  return a1sq * (q - r2) * (q - r2) +
         p.control_weight * (u.thrust * u.thrust + u.heading_rate * u.heading_rate) +
         p.speed_weight * (longitudinal_velocity(next_opp) - longitudinal_velocity(next_own));
}

}  // namespace equilib::racing
