#pragma once

#include <string>
#include <stdexcept>

namespace equilib::racing {

enum class DynamicsMode { Integrated, PaperLiteral };

inline const char* to_string(DynamicsMode m) {
  return m == DynamicsMode::Integrated ? "integrated" : "paper-literal";
}

inline DynamicsMode dynamics_mode_from(const std::string& s) {
  if (s == "integrated") return DynamicsMode::Integrated;
  if (s == "paper-literal" || s == "paper_literal") return DynamicsMode::PaperLiteral;
  throw std::invalid_argument("unknown dynamics mode: " + s);
}

// Model weights, geometry and limits for the two-craft racing game.
struct RaceParams {
  double center_weight = 1e-3;    // lane-center penalty weight (squared in the cost)
  double control_weight = 1e-4;   // quadratic control-effort weight
  double speed_weight = 0.1;      // relative longitudinal-velocity weight
  int horizon = 10;               // planning steps
  double dt = 0.1;                // seconds per step
  double drag = 0.1;              // linear drag, 1/s

  double collision_radius = 1.0;  // hard minimum distance, meters
  double collision_buffer = 0.2;  // extra planning margin on top of the hard radius

  double thrust_max_nominal = 1.0;  // m/s^2 without drafting
  double thrust_max_draft = 3.0;    // m/s^2 ceiling inside the drafting region
  double thrust_min = -3.0;         // braking limit
  double heading_rate_max = 3.0;    // rad/s

  double track_width = 4.0;  // meters
  double draft_width = 5.0;  // base width of the drafting region
  double draft_length = 5.0; // how far the region trails behind a craft

  double resp_slope = 5.0;    // responsibility sigmoid slope
  double resp_offset = 4.5;   // responsibility sigmoid offset
  double gate_sharpness = 4.0;   // 1/m, drafting gate steepness
  double gate_smooth_eps = 1e-6; // smooth-abs radius inside the gate

  DynamicsMode dynamics = DynamicsMode::Integrated;

  double planning_radius() const { return collision_radius + collision_buffer; }

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (dt <= 0 || track_width <= 0 || collision_radius <= 0 || draft_length <= 0 ||
        draft_width <= 0 || gate_sharpness <= 0)
      throw std::invalid_argument("race parameters must be positive");
    if (thrust_max_draft < thrust_max_nominal)
      throw std::invalid_argument("draft thrust limit below nominal limit");
  }
};

}  // namespace equilib::racing
