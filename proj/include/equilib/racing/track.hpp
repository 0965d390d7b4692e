#pragma once

// Track geometry: a periodic centerline sampled as (longitudinal, lateral)
// checkpoints. Near any query position the track is approximated by the
// circle through the three nearest checkpoints; straight sections carry a
// small alternating lateral jitter so no three checkpoints are collinear.

#include "../mcp.hpp"
#include "params.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

namespace equilib::racing {

struct DegenerateCircle : Error {
  using Error::Error;
};

struct Checkpoint {
  double p_long = 0.0;
  double p_lat = 0.0;
};

struct TrackLayout {
  std::vector<Checkpoint> checkpoints;  // strictly increasing p_long, one period
  double width = 4.0;
  double pattern_period = 120.0;
  double perturbation = 1e-3;

  void validate() const {
    if (checkpoints.size() < 3) throw Error("track needs at least 3 checkpoints");
    for (size_t i = 1; i < checkpoints.size(); ++i)
      if (!(checkpoints[i].p_long > checkpoints[i - 1].p_long))
        throw Error("track checkpoints must be strictly increasing in p_long");
    if (pattern_period <= checkpoints.back().p_long - checkpoints.front().p_long)
      throw Error("pattern_period must exceed the checkpoint span");
  }

  double centerline_lat(double p_long) const {
    // Piecewise-linear interpolation with periodic wrap, for sampling and
    // reporting; the solvers only ever see fitted arcs.
    const double base = checkpoints.front().p_long;
    double s = std::fmod(p_long - base, pattern_period);
    if (s < 0) s += pattern_period;
    s += base;
    for (size_t i = 1; i < checkpoints.size(); ++i) {
      if (s <= checkpoints[i].p_long) {
        const auto &a = checkpoints[i - 1], &b = checkpoints[i];
        const double w = (s - a.p_long) / (b.p_long - a.p_long);
        return a.p_lat + w * (b.p_lat - a.p_lat);
      }
    }
    // Between the last checkpoint and the wrapped first one.
    const auto& a = checkpoints.back();
    const Checkpoint b{checkpoints.front().p_long + pattern_period, checkpoints.front().p_lat};
    const double w = (s - a.p_long) / (b.p_long - a.p_long);
    return a.p_lat + w * (b.p_lat - a.p_lat);
  }
};

struct Arc {
  double center_lat = 0.0;
  double center_long = 0.0;
  double radius = 0.0;
};

// Default pattern: 20 m jittered straight, 40 m half-sine excursion of
// amplitude 4 m, mirrored; 120 m period, checkpoints every 2.5 m.
inline TrackLayout default_track(double width = 4.0, double perturbation = 1e-3) {
  TrackLayout t;
  t.width = width;
  t.pattern_period = 120.0;
  t.perturbation = perturbation;
  const double spacing = 2.5;
  const double amplitude = 4.0;
  for (int i = 0; i < 48; ++i) {
    const double s = i * spacing;
    double lat = 0.0;
    if (s < 20.0 || (s >= 60.0 && s < 80.0))
      lat = (i % 2 == 0 ? 1.0 : -1.0) * perturbation;
    else if (s < 60.0)
      lat = amplitude * std::sin(M_PI * (s - 20.0) / 40.0);
    else
      lat = -amplitude * std::sin(M_PI * (s - 80.0) / 40.0);
    t.checkpoints.push_back({s, lat});
  }
  t.validate();
  return t;
}

// Plain-text pattern: one "p_long p_lat" pair per line, '#' comments, and an
// optional "period <meters>" line (defaults to span plus trailing spacing).
inline TrackLayout load_track(std::istream& in, double width, double perturbation = 1e-3) {
  TrackLayout t;
  t.width = width;
  t.perturbation = perturbation;
  double period = -1.0;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first == "period") {
      if (!(ls >> period)) throw Error("track file: malformed period line");
      continue;
    }
    Checkpoint c;
    c.p_long = std::stod(first);
    if (!(ls >> c.p_lat)) throw Error("track file: expected 'p_long p_lat' pair: " + line);
    t.checkpoints.push_back(c);
  }
  if (t.checkpoints.size() < 3) throw Error("track file: needs at least 3 checkpoints");
  if (period <= 0) {
    const auto n = t.checkpoints.size();
    period = t.checkpoints.back().p_long - t.checkpoints.front().p_long +
             (t.checkpoints[n - 1].p_long - t.checkpoints[n - 2].p_long);
  }
  t.pattern_period = period;
  t.validate();
  return t;
}

inline TrackLayout load_track_file(const std::string& path, double width,
                                   double perturbation = 1e-3) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open track file: " + path);
  return load_track(in, width, perturbation);
}

inline Arc circle_through(double lat1, double long1, double lat2, double long2, double lat3,
                          double long3) {
  // Work relative to the centroid for conditioning.
  const double mlat = (lat1 + lat2 + lat3) / 3.0, mlong = (long1 + long2 + long3) / 3.0;
  const double ax = lat1 - mlat, ay = long1 - mlong;
  const double bx = lat2 - mlat, by = long2 - mlong;
  const double cx = lat3 - mlat, cy = long3 - mlong;
  const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
  const double scale = std::max({std::abs(ax), std::abs(ay), std::abs(bx), std::abs(by),
                                 std::abs(cx), std::abs(cy), 1e-12});
  if (std::abs(d) < 1e-12 * scale * scale)
    throw DegenerateCircle("circle_through: collinear checkpoints");
  const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
  const double ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
  const double uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
  Arc arc;
  arc.center_lat = ux + mlat;
  arc.center_long = uy + mlong;
  arc.radius = std::hypot(ax - ux, ay - uy);
  return arc;
}

// Circumcircle through the three checkpoints nearest to `position`,
// unwrapping the repeating pattern longitudinally.
inline Arc fit_arc(const TrackLayout& track, double p_lat, double p_long) {
  track.validate();
  struct Candidate {
    double dist2;
    double lat, lng;
    int order;  // deterministic tie-break
  };
  std::vector<Candidate> cand;
  cand.reserve(track.checkpoints.size() * 3);
  const double base = track.checkpoints.front().p_long;
  const double k0 = std::floor((p_long - base) / track.pattern_period);
  int order = 0;
  for (int k = -1; k <= 1; ++k) {
    const double shift = (k0 + k) * track.pattern_period;
    for (const auto& c : track.checkpoints) {
      const double lng = c.p_long + shift;
      const double dl = p_lat - c.p_lat, dg = p_long - lng;
      cand.push_back({dl * dl + dg * dg, c.p_lat, lng, order++});
    }
  }
  std::partial_sort(cand.begin(), cand.begin() + 3, cand.end(), [](const auto& a, const auto& b) {
    return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.order < b.order;
  });
  return circle_through(cand[0].lat, cand[0].lng, cand[1].lat, cand[1].lng, cand[2].lat,
                        cand[2].lng);
}

}  // namespace equilib::racing
