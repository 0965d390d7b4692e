#pragma once

// Craft state and one-step dynamics. Heading 0 points along the lateral
// axis; longitudinal velocity is v*sin(heading). Positions advance with the
// step-end velocity and heading (implicit scheme).

#include "params.hpp"

#include <cmath>

namespace equilib::racing {

struct CraftState {
  double p_lat = 0.0;
  double p_long = 0.0;
  double v = 0.0;       // tangential speed, m/s
  double theta = 0.0;   // heading, rad
};

struct Control {
  double thrust = 0.0;        // m/s^2
  double heading_rate = 0.0;  // rad/s
};

inline CraftState step_dynamics(const CraftState& s, const Control& u, const RaceParams& p) {
  CraftState n;
  if (p.dynamics == DynamicsMode::Integrated) {
    n.v = s.v + p.dt * (u.thrust - p.drag * s.v);
    n.theta = s.theta + p.dt * u.heading_rate;
  } else {
    n.v = u.thrust - p.drag * s.v;
    n.theta = u.heading_rate;
  }
  n.p_lat = s.p_lat + p.dt * n.v * std::cos(n.theta);
  n.p_long = s.p_long + p.dt * n.v * std::sin(n.theta);
  return n;
}

// Opponent model for the single-player baseline: speed and heading held
// constant, positions integrated with the same position update.
inline CraftState extrapolate_constant_velocity(const CraftState& s, const RaceParams& p) {
  CraftState n = s;
  n.p_lat = s.p_lat + p.dt * s.v * std::cos(s.theta);
  n.p_long = s.p_long + p.dt * s.v * std::sin(s.theta);
  return n;
}

inline double longitudinal_velocity(const CraftState& s) { return s.v * std::sin(s.theta); }

}  // namespace equilib::racing
