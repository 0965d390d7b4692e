#pragma once

// Box-constrained mixed complementarity problems:
//
//   find z in [l, u]  with  F_j(z) = 0        if l_j < z_j < u_j,
//                           F_j(z) >= 0       if z_j = l_j,
//                           F_j(z) <= 0       if z_j = u_j.
//
// Solved by a damped semismooth Newton method on the mid-function
// (minimum-map) reformulation r(z) = z - mid(l, z - F(z), u).

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace equilib {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct InvalidPoint : Error {
  using Error::Error;
};
struct NonFinite : Error {
  using Error::Error;
};

namespace mcp {

struct Problem {
  int dim = 0;
  std::function<Vec(const Vec&)> eval_f;    // F(z), length dim
  std::function<Mat(const Vec&)> eval_jac;  // dF/dz, dim x dim
  Vec lower;                                // extended reals
  Vec upper;

  void validate() const {
    if (dim <= 0 || lower.size() != dim || upper.size() != dim)
      throw DimensionMismatch("mcp::Problem: inconsistent dimensions");
    for (int j = 0; j < dim; ++j)
      if (!(lower[j] <= upper[j]))
        throw Error("mcp::Problem: lower > upper at index " + std::to_string(j));
  }
};

enum class Status { Converged, MaxIterations, SingularSystem, Diverged };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "Converged";
    case Status::MaxIterations: return "MaxIterations";
    case Status::SingularSystem: return "SingularSystem";
    case Status::Diverged: return "Diverged";
  }
  return "?";
}

struct Options {
  double tol = 1e-8;
  int max_iterations = 200;
  double armijo_c = 1e-4;     // sufficient-decrease constant on 0.5*||r||^2
  double step_shrink = 0.5;
  double min_step = 1e-12;
  double reg_init = 1e-8;     // Newton matrix regularization, +delta*I
  double reg_growth = 10.0;
  double reg_max = 1e-2;      // ceiling for within-iteration escalation
  // Damping adapts across iterations: truncated line searches raise it
  // (Levenberg style, up to reg_adapt_max), full steps lower it back.
  double reg_adapt_max = 1e2;
  // Balance the merit and Newton system by fixed per-row weights
  // 1/max(1, ||J_row(z0)||_inf). Convergence is still declared on the
  // unscaled residual.
  bool scale_rows = true;
  // Nonmonotone Armijo memory (number of past merit values the sufficient
  // decrease is measured against); 1 recovers the monotone rule.
  int nonmonotone_memory = 8;
};

struct Solution {
  Vec z;
  double residual_inf = kInf;
  int iterations = 0;
  Status status = Status::Diverged;
  bool converged() const { return status == Status::Converged; }
};

// mid(l, s, u) == median for l <= u; IEEE infinities pass through.
inline double mid(double lo, double s, double hi) { return std::min(std::max(s, lo), hi); }

// Componentwise mid-function residual r_j = z_j - mid(l_j, z_j - F_j(z), u_j).
// Zero exactly at MCP solutions.
inline Vec residual(const Problem& p, const Vec& z, const Vec& f) {
  Vec r(p.dim);
  for (int j = 0; j < p.dim; ++j) r[j] = z[j] - mid(p.lower[j], z[j] - f[j], p.upper[j]);
  return r;
}

inline Vec residual(const Problem& p, const Vec& z) { return residual(p, z, p.eval_f(z)); }

namespace detail {

// Newton matrix of the mid-function: rows of dF where z - F falls strictly
// inside the box, identity rows where a bound clamps.
inline Mat newton_matrix(const Problem& p, const Vec& z, const Vec& f, const Mat& jac) {
  Mat m = Mat::Zero(p.dim, p.dim);
  for (int j = 0; j < p.dim; ++j) {
    const double s = z[j] - f[j];
    if (p.lower[j] < s && s < p.upper[j])
      m.row(j) = jac.row(j);
    else
      m(j, j) = 1.0;
  }
  return m;
}

inline double merit(const Vec& r) { return 0.5 * r.squaredNorm(); }

}  // namespace detail

inline Solution solve(const Problem& p, Vec z, const Options& opts = {}) {
  p.validate();
  if (z.size() != p.dim) throw DimensionMismatch("solve: z0 length != dim");

  Solution sol;
  for (int j = 0; j < p.dim; ++j) z[j] = mid(p.lower[j], z[j], p.upper[j]);

  Vec f = p.eval_f(z);
  if (!f.allFinite()) {
    sol.z = z;
    sol.status = Status::Diverged;
    return sol;
  }
  Vec r = residual(p, z, f);

  Vec scale = Vec::Ones(p.dim);
  if (opts.scale_rows) {
    const Mat jac0 = p.eval_jac(z);
    for (int j = 0; j < p.dim; ++j)
      scale[j] = 1.0 / std::max(1.0, jac0.row(j).cwiseAbs().maxCoeff());
  }
  double theta = detail::merit(scale.cwiseProduct(r));
  double damping = opts.reg_init;
  std::vector<double> recent_theta{theta};

  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    sol.iterations = iter;
    const double rinf = r.lpNorm<Eigen::Infinity>();
    if (rinf <= opts.tol) {
      // Solutions of r = 0 lie in the box; snap off any residual slack.
      Vec zp = z;
      for (int j = 0; j < p.dim; ++j) zp[j] = mid(p.lower[j], zp[j], p.upper[j]);
      const Vec rp = residual(p, zp);
      const double rpinf = rp.lpNorm<Eigen::Infinity>();
      if (rpinf <= opts.tol) {
        sol.z = zp;
        sol.residual_inf = rpinf;
        sol.status = Status::Converged;
        return sol;
      }
    }
    if (iter == opts.max_iterations) break;

    const Mat jac = p.eval_jac(z);
    Mat base = detail::newton_matrix(p, z, f, jac);
    base.array().colwise() *= scale.array();
    const Vec rs = scale.cwiseProduct(r);

    // Damped Newton step with Armijo backtracking; a failed step (singular
    // factorization or no decrease) escalates the damping within the
    // iteration, and truncated steps carry a higher damping into the next.
    Vec z_next, f_next, r_next;
    double theta_next = theta;
    bool accepted = false;

    const double theta_relaxed = *std::max_element(recent_theta.begin(), recent_theta.end());
    auto try_direction = [&](const Vec& dz, double theta_ref) -> double {
      if (!dz.allFinite()) return -1.0;
      for (double t = 1.0; t >= opts.min_step; t *= opts.step_shrink) {
        const Vec zt = z + t * dz;
        const Vec ft = p.eval_f(zt);
        if (!ft.allFinite()) continue;
        const Vec rt = residual(p, zt, ft);
        const double tt = detail::merit(scale.cwiseProduct(rt));
        if (tt <= (1.0 - 2.0 * opts.armijo_c * t) * theta_ref) {
          z_next = zt;
          f_next = ft;
          r_next = rt;
          theta_next = tt;
          return t;
        }
      }
      return -1.0;
    };

    const double rsinf = rs.lpNorm<Eigen::Infinity>();
    for (double delta = damping; delta <= std::max(opts.reg_max, damping);
         delta *= opts.reg_growth) {
      Mat m = base;
      m.diagonal().array() += delta;
      const Vec dz = Eigen::PartialPivLU<Mat>(m).solve(-rs);
      // Reject factorizations that did not actually solve the system.
      if (!dz.allFinite() ||
          (m * dz + rs).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, rsinf) + 1e-12)
        continue;
      const double t = try_direction(dz);
      if (t >= 0.0) {
        if (t >= 0.5)
          damping = std::max(opts.reg_init, delta / opts.reg_growth);
        else if (t < 1e-2)
          damping = std::min(opts.reg_adapt_max, delta * opts.reg_growth);
        else
          damping = delta;
        accepted = true;
        break;
      }
    }

    if (!accepted) {
      // Levenberg-Marquardt fallback on the merit's normal equations;
      // descent is guaranteed while the merit gradient is nonzero.
      const Mat jtj = base.transpose() * base;
      const Vec grad = base.transpose() * rs;
      if (grad.lpNorm<Eigen::Infinity>() > 1e-14) {
        const double d0 = std::max(1e-10, 1e-8 * jtj.trace() / p.dim);
        for (double delta = d0; delta <= 1e12 * d0; delta *= 100.0) {
          Mat m = jtj;
          m.diagonal().array() += delta;
          const Vec dz = Eigen::LLT<Mat>(m).solve(-grad);
          if (!dz.allFinite()) continue;
          if (try_direction(dz) >= 0.0) {
            accepted = true;
            damping = std::min(opts.reg_adapt_max, std::max(damping, opts.reg_max));
            break;
          }
        }
      }
    }

    if (!accepted) {
      sol.z = z;
      sol.residual_inf = rinf;
      const Eigen::FullPivLU<Mat> flu(base);
      sol.status = flu.isInvertible() ? Status::Diverged : Status::SingularSystem;
      return sol;
    }

    z = std::move(z_next);
    f = std::move(f_next);
    r = std::move(r_next);
    theta = theta_next;
    recent_theta.push_back(theta);
    if (static_cast<int>(recent_theta.size()) > std::max(1, opts.nonmonotone_memory))
      recent_theta.erase(recent_theta.begin());
    if (!(theta < 1e24)) {
      sol.z = z;
      sol.residual_inf = r.lpNorm<Eigen::Infinity>();
      sol.status = Status::Diverged;
      return sol;
    }
  }

  sol.z = z;
  sol.residual_inf = r.lpNorm<Eigen::Infinity>();
  sol.status = Status::MaxIterations;
  return sol;
}

// Partition of indices at an (approximate) solution by which complementarity
// clause holds. Pairs within act_tol of a bound with |F| <= act_tol are
// ambiguous and reported as degenerate.
struct IndexClassification {
  std::vector<int> interior;
  std::vector<int> at_lower;
  std::vector<int> at_upper;
  std::vector<int> degenerate;
  std::vector<bool> degenerate_upper;  // aligned with `degenerate`: true when at the upper bound
};

inline double scaled_act_tol(const Vec& z, double act_tol) {
  return act_tol * std::max(1.0, z.lpNorm<Eigen::Infinity>());
}

inline IndexClassification classify_indices(const Problem& p, const Vec& z, double act_tol = 1e-6) {
  if (z.size() != p.dim) throw DimensionMismatch("classify_indices: z length != dim");
  const double tol = scaled_act_tol(z, act_tol);
  const Vec f = p.eval_f(z);
  const Vec r = residual(p, z, f);
  if (r.lpNorm<Eigen::Infinity>() > 100.0 * tol)
    throw InvalidPoint("classify_indices: point is not an approximate MCP solution");

  IndexClassification c;
  for (int j = 0; j < p.dim; ++j) {
    const bool near_lo = std::isfinite(p.lower[j]) && z[j] - p.lower[j] <= tol;
    const bool near_hi = std::isfinite(p.upper[j]) && p.upper[j] - z[j] <= tol;
    if ((near_lo || near_hi) && std::abs(f[j]) <= tol) {
      c.degenerate.push_back(j);
      c.degenerate_upper.push_back(!near_lo);
    } else if (near_lo && f[j] > tol) {
      c.at_lower.push_back(j);
    } else if (near_hi && f[j] < -tol) {
      c.at_upper.push_back(j);
    } else {
      c.interior.push_back(j);
    }
  }
  return c;
}

// Max relative disagreement between eval_jac and central differences of
// eval_f. Construction-time sanity check for assembled problems. Errors are
// measured relative to each row's scale so the finite-difference noise of
// large-magnitude rows does not swamp zero entries.
inline double check_jacobian(const Problem& p, const Vec& z, double step = 1e-6) {
  const Mat jac = p.eval_jac(z);
  const Vec f0 = p.eval_f(z);
  double worst = 0.0;
  for (int j = 0; j < p.dim; ++j) {
    Vec zp = z, zm = z;
    zp[j] += step;
    zm[j] -= step;
    const Vec col = (p.eval_f(zp) - p.eval_f(zm)) / (2.0 * step);
    for (int i = 0; i < p.dim; ++i) {
      const double a = jac(i, j), b = col[i];
      worst = std::max(worst, std::abs(a - b) /
                                  std::max({1.0, std::abs(a), std::abs(b), std::abs(f0[i])}));
    }
  }
  return worst;
}

}  // namespace mcp
}  // namespace equilib
