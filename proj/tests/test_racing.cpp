#include <equilib/nash.hpp>
#include <equilib/racing/model.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using equilib::Vec;
namespace racing = equilib::racing;
using racing::CraftState;
using racing::Control;
using racing::RaceParams;

namespace {

// A scenario on a huge circle so the local band is nearly straight: both
// players close to the centerline, pointing roughly longitudinally.
racing::Scenario simple_scenario(RaceParams params = {}) {
  racing::Scenario sc;
  sc.params = params;
  sc.start[0] = {0.0, 0.0, 2.0, 1.2};
  sc.start[1] = {0.5, 1.5, 2.2, 1.2};
  const double r = 1000.0;
  sc.arcs[0] = {r, 0.0, r};  // center far off to the lateral side
  sc.arcs[1] = {r, 0.0, r};
  return sc;
}

// Rollout-based decision vector: dynamics-feasible by construction.
Vec rollout_vector(const racing::Scenario& sc, oracles::Rng& rng, double ctrl_scale) {
  Vec x = Vec::Zero(12 * sc.params.horizon);
  for (int e = 0; e < 2; ++e) {
    std::vector<Control> controls(sc.params.horizon);
    for (auto& u : controls) {
      u.thrust = rng.uniform(-0.5, 0.5) * ctrl_scale;
      u.heading_rate = rng.uniform(-0.5, 0.5) * ctrl_scale;
    }
    racing::write_rollout(sc, e, controls, x);
  }
  return x;
}

}  // namespace

TEST_CASE("step dynamics") {
  RaceParams p;

  SECTION("drag-free coasting advances laterally at heading zero") {
    p.drag = 0.0;
    CraftState s{0, 0, 2.0, 0.0};
    auto n = racing::step_dynamics(s, {0.0, 0.0}, p);
    CHECK(n.p_lat == Catch::Approx(0.2).margin(1e-15));
    CHECK(n.p_long == Catch::Approx(0.0).margin(1e-15));
    CHECK(n.v == 2.0);
    CHECK(n.theta == 0.0);
  }
  SECTION("integrated velocity update") {
    CraftState s{0, 0, 2.0, 0.0};
    auto n = racing::step_dynamics(s, {0.0, 0.0}, p);
    CHECK(n.v == Catch::Approx(1.98));  // 2 + 0.1*(0 - 0.2)
  }
  SECTION("literal velocity update") {
    p.dynamics = racing::DynamicsMode::PaperLiteral;
    CraftState s{0, 0, 2.0, 0.0};
    auto n = racing::step_dynamics(s, {1.0, 0.0}, p);
    CHECK(n.v == Catch::Approx(0.8));  // 1 - 0.2
  }
}

TEST_CASE("arc fitting") {
  SECTION("circumcircle through three checkpoints") {
    racing::TrackLayout t;
    t.width = 1.0;
    t.pattern_period = 100.0;
    t.checkpoints = {{0.0, 0.0}, {1.0, 1.0}, {2.0, 0.0}};
    auto arc = racing::fit_arc(t, 0.5, 1.0);
    CHECK(arc.center_long == Catch::Approx(1.0).margin(1e-12));
    CHECK(arc.center_lat == Catch::Approx(0.0).margin(1e-12));
    CHECK(arc.radius == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("reconstructs a known circle of radius 20") {
    racing::TrackLayout t;
    t.pattern_period = 500.0;
    const double r = 20.0, clat = -17.0, clong = 40.0;
    for (double ang : {1.2, 1.4, 1.6})
      t.checkpoints.push_back({clong + r * std::sin(ang), clat + r * std::cos(ang)});
    auto arc = racing::fit_arc(t, clat + r, clong);
    CHECK(arc.radius == Catch::Approx(20.0).margin(1e-9));
    // The fitted circle passes through its generating checkpoints.
    for (const auto& c : t.checkpoints) {
      const double d = std::hypot(c.p_lat - arc.center_lat, c.p_long - arc.center_long);
      CHECK(d == Catch::Approx(arc.radius).margin(1e-9));
    }
  }
  SECTION("jittered straight yields a large finite radius") {
    racing::TrackLayout t;
    t.pattern_period = 100.0;
    t.checkpoints = {{0.0, 1e-3}, {2.5, -1e-3}, {5.0, 1e-3}};
    auto arc = racing::fit_arc(t, 0.0, 2.5);
    CHECK(std::isfinite(arc.radius));
    CHECK(arc.radius == Catch::Approx(1562.5).epsilon(1e-3));  // chord^2 / (8 * sagitta)
  }
  SECTION("exactly collinear points are rejected") {
    CHECK_THROWS_AS(racing::circle_through(0, 0, 0, 1, 0, 2), racing::DegenerateCircle);
  }
}

TEST_CASE("responsibility offsets") {
  RaceParams p;

  SECTION("side by side cancels exactly") {
    auto [l1, l2] = racing::responsibility(0.0, p);
    CHECK(l1 == 0.0);
    CHECK(l2 == 0.0);
  }
  SECTION("frozen values at h = 1") {
    auto [l1, l2] = racing::responsibility(1.0, p);
    CHECK(l1 == Catch::Approx(0.6114723885712614).margin(1e-12));
    CHECK(l2 == Catch::Approx(-0.010912096403082569).margin(1e-12));
  }
  SECTION("relief saturates at a small magnitude") {
    auto [l1, l2] = racing::responsibility(-1000.0, p);
    CHECK(l1 == Catch::Approx(-0.01098694263059318).margin(1e-12));
    CHECK(l2 == Catch::Approx(1.0 - 0.01098694263059318).margin(1e-9));
  }
  SECTION("player symmetry, monotonicity and bounds") {
    const double cap = 1.0 / (1.0 + std::exp(p.resp_offset));
    double prev = -1.0;
    for (double h = -4.0; h <= 4.0; h += 0.01) {
      auto [l1, l2] = racing::responsibility(h, p);
      auto [m1, m2] = racing::responsibility(-h, p);
      CHECK(l1 == Catch::Approx(m2).margin(1e-15));
      CHECK(l1 > prev);  // strictly increasing
      prev = l1;
      CHECK(l1 > -cap);
      CHECK(l1 < 1.0 - cap);
      if (h != 0.0) CHECK(((l1 > 0) != (l2 > 0)));  // exactly one tightens
    }
  }
}

TEST_CASE("collision constraint values") {
  RaceParams p;
  SECTION("coincident positions") {
    CHECK(racing::collision_constraint(0, 0, 0, 0, 0, p) == Catch::Approx(-1.44));
  }
  SECTION("ten meters apart, side by side") {
    CHECK(racing::collision_constraint(10, 5, 0, 5, 0, p) == Catch::Approx(98.56));
  }
  SECTION("trailing player tightens, leading player relaxes") {
    // Player 1 one meter behind: h = 1, squared distance 1.
    const double base = 1.0 - 1.44;
    const double g1 = racing::collision_constraint(0, 0, 0, 1, 0, p);
    const double g2 = racing::collision_constraint(0, 0, 0, 1, 1, p);
    CHECK(base - g1 == Catch::Approx(0.6114723885712614).margin(1e-12));
    CHECK(base - g2 == Catch::Approx(-0.010912096403082569).margin(1e-12));
  }
}

TEST_CASE("draft thrust ceiling") {
  RaceParams p;
  SECTION("far from the opponent the nominal limit applies") {
    CHECK(racing::draft_limit(0, 0, 0, 100, p) == Catch::Approx(1.0).margin(1e-3));
    CHECK(racing::draft_limit(0, 0, 30, -90, p) == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("directly behind at one meter is near the drafting limit") {
    const double v = racing::draft_limit(0, 0, 0, 1, p);
    CHECK(v > 2.9);
    CHECK(v <= 3.0);
    CHECK(v == Catch::Approx(2.9636361421353863).margin(1e-9));
  }
  SECTION("ahead of the opponent the region does not apply") {
    const double v = racing::draft_limit(0, 0, 0, -2, p);
    CHECK(v == Catch::Approx(1.0).margin(1e-3));
    CHECK(v == Catch::Approx(1.0006707910565298).margin(1e-9));
  }
  SECTION("range and smoothness") {
    oracles::Rng rng(31);
    for (int i = 0; i < 200; ++i) {
      const double el = rng.uniform(-8, 8), ex = rng.uniform(-4, 4);
      const double ol = rng.uniform(-8, 8), ox = rng.uniform(-4, 4);
      const double v = racing::draft_limit(ex, el, ox, ol, p);
      CHECK(v >= p.thrust_max_nominal - 1e-12);
      CHECK(v <= p.thrust_max_draft + 1e-12);

      // Finite-difference check of the gradient in all four coordinates.
      const racing::Gate2 g = racing::draft_gate(ol - el, ox - ex, p);
      const double span = p.thrust_max_draft - p.thrust_max_nominal;
      const double h = 1e-6;
      const double fd_l = (racing::draft_limit(ex, el, ox, ol + h, p) -
                           racing::draft_limit(ex, el, ox, ol - h, p)) /
                          (2 * h);
      const double fd_x = (racing::draft_limit(ex, el, ox + h, ol, p) -
                           racing::draft_limit(ex, el, ox - h, ol, p)) /
                          (2 * h);
      CHECK(std::abs(span * g.d_l - fd_l) <= 1e-5 * std::max(1.0, std::abs(fd_l)));
      CHECK(std::abs(span * g.d_x - fd_x) <= 1e-5 * std::max(1.0, std::abs(fd_x)));
    }
  }
}

TEST_CASE("game dimensions match the horizon") {
  auto sc = simple_scenario();
  auto game = racing::build_game(sc);
  CHECK(game.players[0].n_own == 60);
  CHECK(game.n_total == 120);
  CHECK(game.players[0].m_ineq == 100);
  CHECK(game.players[0].m_eq == 40);
  const auto layout = equilib::nash::layout_of(game);
  CHECK(layout.total_dim == 400);  // 120 primal + 2 x 140 duals
}

TEST_CASE("stage cost vanishes on the centerline at matched speeds") {
  auto sc = simple_scenario();
  sc.params.horizon = 1;
  auto game = racing::build_game(sc);
  const racing::BlockLayout bl{1};

  Vec x = Vec::Zero(12);
  for (int e = 0; e < 2; ++e) {
    // On the arc circle: distance from center exactly the radius.
    x[bl.state(e, 1, racing::kLat)] = sc.arcs[e].center_lat - sc.arcs[e].radius;
    x[bl.state(e, 1, racing::kLong)] = sc.arcs[e].center_long;
    x[bl.state(e, 1, racing::kSpeed)] = 2.0;
    x[bl.state(e, 1, racing::kHeading)] = 0.7;
  }
  CHECK(game.players[0].cost(x) == Catch::Approx(0.0).margin(1e-12));
  CHECK(game.players[1].cost(x) == Catch::Approx(0.0).margin(1e-12));

  // A 0.5 m/s longitudinal advantage for the opponent costs beta * 0.5.
  x[bl.state(0, 1, racing::kSpeed)] = 2.0;
  x[bl.state(0, 1, racing::kHeading)] = M_PI / 2.0;
  x[bl.state(1, 1, racing::kSpeed)] = 2.5;
  x[bl.state(1, 1, racing::kHeading)] = M_PI / 2.0;
  CHECK(game.players[0].cost(x) == Catch::Approx(0.05).margin(1e-12));
}

TEST_CASE("track band slack on the centerline") {
  auto sc = simple_scenario();
  auto game = racing::build_game(sc);
  const racing::BlockLayout bl{10};
  oracles::Rng rng(7);
  Vec x = rollout_vector(sc, rng, 0.0);
  // Put step 1 of player 1 exactly on the centerline circle.
  x[bl.state(0, 1, racing::kLat)] = sc.arcs[0].center_lat - sc.arcs[0].radius;
  x[bl.state(0, 1, racing::kLong)] = sc.arcs[0].center_long;
  const Vec g = game.players[0].constraints(x);
  const double r = sc.arcs[0].radius, w = sc.params.track_width;
  CHECK(g[racing::ineq_row(1, racing::kTrackLo)] ==
        Catch::Approx((w / 2) * (2 * r - w / 2)).epsilon(1e-12));
  CHECK(g[racing::ineq_row(1, racing::kTrackHi)] ==
        Catch::Approx((w / 2) * (2 * r + w / 2)).epsilon(1e-12));
}

TEST_CASE("analytic derivatives agree with finite differences") {
  auto sc = simple_scenario();
  auto game = racing::build_game(sc);
  oracles::Rng rng(1234);
  for (int trial = 0; trial < 5; ++trial) {
    Vec x = rollout_vector(sc, rng, 1.0);
    const double step = 1e-6 * std::max(1.0, x.lpNorm<Eigen::Infinity>());
    const auto rep = equilib::check_derivatives(game, x, step);
    for (int e = 0; e < 2; ++e) {
      INFO("trial " << trial << " player " << e << ": grad " << rep.player[e].cost_grad
                    << " jac " << rep.player[e].cons_jac << " hess " << rep.player[e].cost_hess
                    << " combo " << rep.player[e].cons_hess_combo << " own_left "
                    << rep.player[e].cons_hess_own_left);
      CHECK(rep.player[e].worst() <= 1e-5);
    }
  }
}

TEST_CASE("assembled racing KKT Jacobian matches finite differences") {
  auto sc = simple_scenario();
  auto game = racing::build_game(sc);
  auto problem = equilib::nash::assemble_kkt(game);
  oracles::Rng rng(4321);
  Vec z = Vec::Zero(problem.dim);
  z.head(120) = rollout_vector(sc, rng, 1.0);
  for (int i = 120; i < problem.dim; ++i) z[i] = rng.uniform(0.0, 0.5);
  CHECK(equilib::mcp::check_jacobian(problem, z) <= 1e-4);
}

TEST_CASE("swapping player labels transposes costs and constraints") {
  RaceParams params;
  racing::Scenario sc;
  sc.params = params;
  sc.start[0] = {-0.4, 0.0, 2.0, 0.9};
  sc.start[1] = {0.7, 1.1, 2.4, 1.1};
  sc.arcs[0] = {900.0, 3.0, 900.0};
  sc.arcs[1] = {901.0, -2.0, 901.0};

  racing::Scenario swapped = sc;
  std::swap(swapped.start[0], swapped.start[1]);
  std::swap(swapped.arcs[0], swapped.arcs[1]);

  auto game = racing::build_game(sc);
  auto mirror = racing::build_game(swapped);

  oracles::Rng rng(9);
  Vec x = rollout_vector(sc, rng, 1.0);
  Vec xs(120);
  xs.head(60) = x.tail(60);
  xs.tail(60) = x.head(60);

  for (int e = 0; e < 2; ++e) {
    CHECK(game.players[e].cost(x) == mirror.players[1 - e].cost(xs));
    const Vec g = game.players[e].constraints(x);
    const Vec gm = mirror.players[1 - e].constraints(xs);
    CHECK((g - gm).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("infeasible starts are rejected") {
  auto sc = simple_scenario();
  sc.start[0].p_lat = 100.0;  // far outside the band around the arc
  CHECK_THROWS_AS(racing::build_game(sc), racing::InfeasibleStart);

  auto sc2 = simple_scenario();
  sc2.start[1] = sc2.start[0];
  CHECK_THROWS_AS(racing::build_game(sc2), racing::InfeasibleStart);
}

TEST_CASE("default track pattern is well-formed") {
  auto track = racing::default_track();
  track.validate();
  CHECK(track.checkpoints.size() == 48);
  CHECK(track.pattern_period == 120.0);
  // No three consecutive checkpoints collinear anywhere in one period.
  for (size_t i = 2; i < track.checkpoints.size(); ++i) {
    const auto &a = track.checkpoints[i - 2], &b = track.checkpoints[i - 1],
               &c = track.checkpoints[i];
    const double cross = (b.p_long - a.p_long) * (c.p_lat - a.p_lat) -
                         (b.p_lat - a.p_lat) * (c.p_long - a.p_long);
    CHECK(std::abs(cross) > 1e-9);
  }
}

TEST_CASE("track pattern round-trips through the text format") {
  auto track = racing::default_track();
  std::ostringstream out;
  out << "# test pattern\nperiod " << track.pattern_period << "\n";
  for (const auto& c : track.checkpoints) out << c.p_long << " " << c.p_lat << "\n";
  std::istringstream in(out.str());
  auto loaded = racing::load_track(in, track.width);
  REQUIRE(loaded.checkpoints.size() == track.checkpoints.size());
  CHECK(loaded.pattern_period == track.pattern_period);
  for (size_t i = 0; i < loaded.checkpoints.size(); ++i) {
    CHECK(loaded.checkpoints[i].p_long == Catch::Approx(track.checkpoints[i].p_long));
    CHECK(loaded.checkpoints[i].p_lat == Catch::Approx(track.checkpoints[i].p_lat));
  }
}
