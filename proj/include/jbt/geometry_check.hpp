#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "jbt/geometry.hpp"
#include "jbt/rng.hpp"

namespace jbt {

namespace detail {

// Golden-section minimization of f over [lo, hi] (f unimodal).
template <class F>
double golden_min(F f, double lo, double hi) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - (b - a) * inv_phi;
  double d = a + (b - a) * inv_phi;
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 120; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - (b - a) * inv_phi;
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + (b - a) * inv_phi;
      fd = f(d);
    }
  }
  return f(0.5 * (a + b));
}

}  // namespace detail

// Generic numeric nearest-point distance to an axis-aligned box
// [lo_i, hi_i]^N: coordinate-wise golden-section search, no clamp algebra.
inline double numeric_box_distance(const std::vector<double>& q,
                                   const std::vector<double>& lo,
                                   const std::vector<double>& hi) {
  double sq = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto f = [&](double y) { return (q[i] - y) * (q[i] - y); };
    sq += detail::golden_min(f, lo[i], hi[i]);
  }
  return std::sqrt(sq);
}

inline double numeric_dist_lower(const std::vector<double>& q, const RegionSpec& region) {
  std::vector<double> lo(q.size(), 0.0), hi(q.size(), double(region.r));
  return numeric_box_distance(q, lo, hi);
}

inline double numeric_dist_upper(const std::vector<double>& q, const RegionSpec& region) {
  std::vector<double> lo(q.size(), double(region.r)), hi(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    hi[i] = std::max(q[i], double(region.r)) + 16.0;
  return numeric_box_distance(q, lo, hi);
}

inline double numeric_dist_region(const std::vector<double>& q, const RegionSpec& region) {
  return std::min(numeric_dist_lower(q, region), numeric_dist_upper(q, region));
}

struct GeometryCheckReport {
  int trials = 0;
  double max_abs_error = 0;
  bool grid_ok = true;
  bool decomposition_ok = true;
  bool passed(double tol = 1e-9) const {
    return max_abs_error <= tol && grid_ok && decomposition_ok;
  }
  std::string to_string() const {
    std::ostringstream os;
    os << "trials=" << trials << " max_abs_error=" << max_abs_error
       << " grid_ok=" << (grid_ok ? "yes" : "no")
       << " decomposition_ok=" << (decomposition_ok ? "yes" : "no");
    return os.str();
  }
};

// Random-point agreement between the closed forms and the numeric oracle,
// the exhaustive "d = 0 iff in region" grid check for N <= 3, r <= 4, and
// the perpendicular-norm identity of the decomposition.
inline GeometryCheckReport geometry_check(int trials = 1000,
                                          std::uint64_t seed = 0x6e0) {
  GeometryCheckReport rep;
  rep.trials = trials;
  RngStream rng(seed);
  for (int t = 0; t < trials; ++t) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const int r = 1 + static_cast<int>(rng.below(8));
    RegionSpec region(r, n);
    std::vector<double> q(n);
    for (auto& v : q) v = rng.u01() * 3.0 * r;
    const double dl = dist_lower(q, region);
    const double du = dist_upper(q, region);
    const double dr = dist_region(q, region);
    rep.max_abs_error = std::max(rep.max_abs_error,
                                 std::abs(dl - numeric_dist_lower(q, region)));
    rep.max_abs_error = std::max(rep.max_abs_error,
                                 std::abs(du - numeric_dist_upper(q, region)));
    rep.max_abs_error = std::max(rep.max_abs_error,
                                 std::abs(dr - numeric_dist_region(q, region)));
    const auto low = perp_decompose(q, region, RegionSide::lower);
    const auto upp = perp_decompose(q, region, RegionSide::upper);
    double nl = 0, nu = 0;
    for (int i = 0; i < n; ++i) {
      nl += low.perpendicular[i] * low.perpendicular[i];
      nu += upp.perpendicular[i] * upp.perpendicular[i];
    }
    if (std::abs(std::sqrt(nl) - dl) > 1e-9 || std::abs(std::sqrt(nu) - du) > 1e-9)
      rep.decomposition_ok = false;
  }
  // exhaustive integer grid: d = 0 iff (all q_n <= r) or (all q_n >= r)
  for (int n = 1; n <= 3 && rep.grid_ok; ++n) {
    for (int r = 1; r <= 4 && rep.grid_ok; ++r) {
      RegionSpec region(r, n);
      std::vector<int> q(n, 0);
      const int hi = 2 * r;
      while (true) {
        bool all_le = true, all_ge = true;
        for (int v : q) {
          all_le = all_le && v <= r;
          all_ge = all_ge && v >= r;
        }
        const bool inside = all_le || all_ge;
        const double d = dist_region(q, region);
        if (inside != (d == 0.0)) {
          rep.grid_ok = false;
          break;
        }
        int i = 0;
        while (i < n && ++q[i] > hi) q[i++] = 0;
        if (i == n) break;
      }
    }
  }
  return rep;
}

}  // namespace jbt
