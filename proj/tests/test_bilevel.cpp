#include <equilib/bilevel.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using equilib::kInf;
using equilib::Mat;
using equilib::Nlp;
using equilib::PlayerProblem;
using equilib::TwoPlayerGame;
using equilib::Vec;
namespace bilevel = equilib::bilevel;
namespace mcp = equilib::mcp;

namespace {

PlayerProblem unconstrained_player(int own_index, std::function<double(const Vec&)> cost) {
  PlayerProblem p;
  p.n_own = 1;
  p.cost = std::move(cost);
  p.constraints = [](const Vec&) { return Vec(); };
  p.cons_jac_full = [](const Vec&) { return Mat(0, 2); };
  equilib::finite_difference_second_order(p, own_index, 2);
  return p;
}

// Leader (player 0): (x0 - 1)^2 + x1^2; follower (player 1): (x1 - x0)^2.
// Substituting the follower response x1 = x0 and minimizing by hand gives
// the equilibrium (0.5, 0.5) with leader cost 0.5.
TwoPlayerGame stackelberg_toy() {
  TwoPlayerGame g;
  g.n_total = 2;
  g.players[0] = unconstrained_player(
      0, [](const Vec& x) { return (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1]; });
  g.players[1] = unconstrained_player(1, [](const Vec& x) {
    const double d = x[1] - x[0];
    return d * d;
  });
  return g;
}

// Follower has one inequality x1 >= 0 that is degenerately active at its
// unconstrained minimum.
TwoPlayerGame degenerate_follower_toy() {
  TwoPlayerGame g;
  g.n_total = 2;
  g.players[0] = unconstrained_player(
      0, [](const Vec& x) { return (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1]; });

  PlayerProblem pf;
  pf.n_own = 1;
  pf.m_ineq = 1;
  pf.cost = [](const Vec& x) { return x[1] * x[1]; };
  pf.constraints = [](const Vec& x) { return Vec::Constant(1, x[1]); };
  pf.cons_jac_full = [](const Vec&) {
    Mat j(1, 2);
    j << 0, 1;
    return j;
  };
  equilib::finite_difference_second_order(pf, 1, 2);
  g.players[1] = pf;
  return g;
}

Nlp interval_nlp(double lo, double hi) {
  Nlp nlp;
  nlp.n = 1;
  nlp.lb = Vec::Constant(1, lo);
  nlp.ub = Vec::Constant(1, hi);
  nlp.cost = [](const Vec& x) { return (x[0] - 1.25) * (x[0] - 1.25); };
  nlp.grad = [](const Vec& x) { return Vec::Constant(1, 2.0 * (x[0] - 1.25)); };
  nlp.cons = [](const Vec&) { return Vec(); };
  nlp.jac = [](const Vec&) { return Mat(0, 1); };
  nlp.lag_hess = [](const Vec&, const Vec&) { return Mat::Constant(1, 1, 2.0); };
  return nlp;
}

}  // namespace

TEST_CASE("follower best response, unconstrained") {
  auto g = stackelberg_toy();
  Vec x(2);
  x << 0.7, -2.0;
  auto fs = bilevel::solve_follower(g, /*leader=*/0, x);
  REQUIRE(fs.converged());
  CHECK(fs.x_follower[0] == Catch::Approx(0.7).margin(1e-9));
  CHECK(fs.duals.size() == 0);
}

TEST_CASE("follower best response with an active bound") {
  // min x1^2 s.t. x1 >= 1: KKT by hand, 2 x1 - lambda = 0 at x1 = 1.
  TwoPlayerGame g;
  g.n_total = 2;
  g.players[0] = unconstrained_player(0, [](const Vec& x) { return x[0] * x[0]; });
  PlayerProblem pf;
  pf.n_own = 1;
  pf.m_ineq = 1;
  pf.cost = [](const Vec& x) { return x[1] * x[1]; };
  pf.constraints = [](const Vec& x) { return Vec::Constant(1, x[1] - 1.0); };
  pf.cons_jac_full = [](const Vec&) {
    Mat j(1, 2);
    j << 0, 1;
    return j;
  };
  equilib::finite_difference_second_order(pf, 1, 2);
  g.players[1] = pf;

  auto fs = bilevel::solve_follower(g, 0, Vec::Zero(2));
  REQUIRE(fs.converged());
  CHECK(fs.x_follower[0] == Catch::Approx(1.0).margin(1e-8));
  CHECK(fs.duals[0] == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("piece enumeration counts and order") {
  mcp::IndexClassification cls;

  SECTION("no degeneracy means one piece") {
    cls.interior = {0, 1};
    cls.at_lower = {2};
    auto pieces = bilevel::enumerate_pieces(cls, 256);
    REQUIRE(pieces.size() == 1);
    CHECK(pieces[0].j1 == std::vector<int>{0, 1});
    CHECK(pieces[0].j2 == std::vector<int>{2});
  }
  SECTION("two lower-degenerate rows branch into {J1,J2}^2 lexicographically") {
    cls.interior = {0};
    cls.degenerate = {1, 2};
    cls.degenerate_upper = {false, false};
    auto pieces = bilevel::enumerate_pieces(cls, 256);
    REQUIRE(pieces.size() == 4);
    CHECK(pieces[0].j1 == std::vector<int>{0, 1, 2});
    CHECK(pieces[1].j1 == std::vector<int>{0, 1});
    CHECK(pieces[1].j2 == std::vector<int>{2});
    CHECK(pieces[2].j1 == std::vector<int>{0, 2});
    CHECK(pieces[2].j2 == std::vector<int>{1});
    CHECK(pieces[3].j2 == std::vector<int>{1, 2});
  }
  SECTION("piece explosion is capped") {
    cls.degenerate.assign({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    cls.degenerate_upper.assign(10, false);
    CHECK_THROWS_AS(bilevel::enumerate_pieces(cls, 256), bilevel::TooManyPieces);
  }
}

TEST_CASE("piece NLP reproduces the hand-solved Stackelberg point") {
  auto g = stackelberg_toy();
  bilevel::PieceSpec piece;
  piece.j1 = {0};  // single stationarity row of the follower

  Vec start(2);
  start << 0.0, 0.0;
  auto ps = bilevel::solve_piece_nlp(g, 0, piece, start, Vec());
  REQUIRE(ps.solved);
  CHECK(ps.x[0] == Catch::Approx(0.5).margin(1e-7));
  CHECK(ps.x[1] == Catch::Approx(0.5).margin(1e-7));
  CHECK_FALSE(ps.is_local_min);  // start was not stationary for the piece

  // Warm-starting at the optimum is a fixed point.
  auto ps2 = bilevel::solve_piece_nlp(g, 0, piece, ps.x, ps.follower_duals);
  REQUIRE(ps2.solved);
  CHECK(ps2.is_local_min);
  CHECK((ps2.x - ps.x).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("J2 branch pins the follower multiplier exactly") {
  auto g = degenerate_follower_toy();
  // Follower KKT rows: 0 = stationarity, 1 = inequality-dual row.
  bilevel::PieceSpec piece;
  piece.j1 = {0};
  piece.j2 = {1};

  Vec start(2);
  start << 1.0, 0.0;
  auto ps = bilevel::solve_piece_nlp(g, 0, piece, start, Vec::Zero(1));
  REQUIRE(ps.solved);
  CHECK(ps.follower_duals[0] == 0.0);  // pinned by the piece, not merely small
  CHECK(ps.x[1] >= -1e-12);
}

TEST_CASE("bilevel toy converges to the closed-form equilibrium") {
  auto g = stackelberg_toy();
  auto res = bilevel::solve_bilevel(g, 0, Vec::Zero(2));
  REQUIRE(res.equilibrium());
  CHECK(std::abs(res.x[0] - 0.5) <= 1e-6);
  CHECK(std::abs(res.x[1] - 0.5) <= 1e-6);
  CHECK(std::abs(res.leader_cost - 0.5) <= 1e-6);
  CHECK(res.pieces_checked >= 2);  // one disagreeing pass plus the confirming pass
}

TEST_CASE("degenerate follower still reaches an equilibrium") {
  auto g = degenerate_follower_toy();
  Vec x0(2);
  x0 << -2.0, 0.3;
  auto res = bilevel::solve_bilevel(g, 0, x0);
  REQUIRE(res.equilibrium());
  CHECK(std::abs(res.x[0] - 1.0) <= 1e-6);
  CHECK(std::abs(res.x[1]) <= 1e-6);
}

TEST_CASE("decoupled costs make bilevel match Nash") {
  TwoPlayerGame g;
  g.n_total = 2;
  g.players[0] = unconstrained_player(0, [](const Vec& x) { return (x[0] + 2.0) * (x[0] + 2.0); });
  g.players[1] = unconstrained_player(1, [](const Vec& x) { return (x[1] - 1.0) * (x[1] - 1.0); });

  auto nash_res = equilib::nash::solve_nash(g, Vec::Zero(2));
  REQUIRE(nash_res.converged());
  auto bi = bilevel::solve_bilevel(g, 0, Vec::Zero(2));
  REQUIRE(bi.equilibrium());
  CHECK((bi.x - nash_res.x).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("piece-agreement logic reproduces the union-of-intervals oracle") {
  // Feasible set D = [0,1] u [1,2], f = (x - 1.25)^2. The membership check
  // and a dense grid search must classify both probe points identically.
  const auto f = [](double x) { return (x - 1.25) * (x - 1.25); };
  const std::vector<std::pair<double, double>> intervals{{0.0, 1.0}, {1.0, 2.0}};
  const double res_grid = 1e-3, radius = 2.5e-3;

  const auto d1 = interval_nlp(0.0, 1.0);
  const auto d2 = interval_nlp(1.0, 2.0);

  // x = 1.25: interior optimum of D2, the only containing piece.
  {
    const double x = 1.25;
    const bool oracle_union = oracles::grid_local_optimum(x, f(x), intervals, f, res_grid, radius);
    auto chk = equilib::check_local_membership(d2, Vec::Constant(1, x));
    REQUIRE(chk.solved);
    CHECK(oracle_union == true);
    CHECK(chk.agrees == oracle_union);
  }
  // x = 1.0: boundary of both pieces; a local optimum of D1's restricted
  // problem but not of D2's, hence not of the union.
  {
    const double x = 1.0;
    const bool oracle_union = oracles::grid_local_optimum(x, f(x), intervals, f, res_grid, radius);
    CHECK(oracle_union == false);

    auto on_d1 = equilib::check_local_membership(d1, Vec::Constant(1, x));
    auto on_d2 = equilib::check_local_membership(d2, Vec::Constant(1, x));
    REQUIRE(on_d1.solved);
    REQUIRE(on_d2.solved);
    CHECK(on_d1.agrees == true);
    CHECK(on_d2.agrees == false);

    const bool oracle_d1 =
        oracles::grid_local_optimum(x, f(x), {{0.0, 1.0}}, f, res_grid, radius);
    const bool oracle_d2 =
        oracles::grid_local_optimum(x, f(x), {{1.0, 2.0}}, f, res_grid, radius);
    CHECK(on_d1.agrees == oracle_d1);
    CHECK(on_d2.agrees == oracle_d2);

    const bool all_pieces_agree = on_d1.agrees && on_d2.agrees;
    CHECK(all_pieces_agree == oracle_union);
  }
}

TEST_CASE("solve_bilevel is deterministic") {
  auto g = stackelberg_toy();
  Vec x0(2);
  x0 << -1.0, 2.0;
  auto a = bilevel::solve_bilevel(g, 0, x0);
  auto b = bilevel::solve_bilevel(g, 0, x0);
  CHECK(a.status == b.status);
  CHECK(a.pieces_checked == b.pieces_checked);
  CHECK(a.outer_iterations == b.outer_iterations);
  CHECK(a.x == b.x);
  CHECK(a.leader_cost == b.leader_cost);
}
