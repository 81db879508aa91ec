#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "jbt/rng.hpp"

namespace jbt {

// The region R^(r) = R_l ∪ R_u: the box {q_n <= r for all n} united with the
// translated orthant {q_n >= r for all n}.
struct RegionSpec {
  int r = 1;
  int n = 1;
  RegionSpec(int threshold, int dim) : r(threshold), n(dim) {
    if (r < 1) throw std::invalid_argument("region threshold must be >= 1");
    if (n < 1) throw std::invalid_argument("region dimension must be >= 1");
  }
};

namespace detail {
template <class Vec>
void check_point(const Vec& q, const RegionSpec& region) {
  if (static_cast<int>(q.size()) != region.n)
    throw std::invalid_argument("point dimension does not match region");
  for (auto v : q)
    if (v < 0) throw std::domain_error("queue point has a negative component");
}
}  // namespace detail

// Distance to the lower box: || max(q - r*1, 0) ||_2.
template <class Vec>
double dist_lower(const Vec& q, const RegionSpec& region) {
  detail::check_point(q, region);
  double sq = 0;
  for (auto v : q) {
    double excess = static_cast<double>(v) - region.r;
    if (excess > 0) sq += excess * excess;
  }
  return std::sqrt(sq);
}

// Distance to the upper orthant: || min(q - r*1, 0) ||_2.
template <class Vec>
double dist_upper(const Vec& q, const RegionSpec& region) {
  detail::check_point(q, region);
  double sq = 0;
  for (auto v : q) {
    double deficit = static_cast<double>(v) - region.r;
    if (deficit < 0) sq += deficit * deficit;
  }
  return std::sqrt(sq);
}

template <class Vec>
double dist_region(const Vec& q, const RegionSpec& region) {
  return std::min(dist_lower(q, region), dist_upper(q, region));
}

// Integer fast path for the simulator: squared distance, no allocation.
inline std::int64_t dist_sq_lower_int(const std::vector<int>& q, int r) {
  std::int64_t sq = 0;
  for (int v : q)
    if (v > r) sq += std::int64_t(v - r) * (v - r);
  return sq;
}

inline std::int64_t dist_sq_upper_int(const std::vector<int>& q, int r) {
  std::int64_t sq = 0;
  for (int v : q)
    if (v < r) sq += std::int64_t(r - v) * (r - v);
  return sq;
}

inline std::int64_t dist_sq_region_int(const std::vector<int>& q, int r) {
  return std::min(dist_sq_lower_int(q, r), dist_sq_upper_int(q, r));
}

enum class RegionSide { lower, upper };

struct PerpDecomposition {
  std::vector<double> parallel;       // projection of q' = q - r*1 onto the shifted region
  std::vector<double> perpendicular;  // q' minus the projection
};

// Decompose q' = q - r*1 into its projection onto the shifted region
// (R_l' = [-r,0]^N or R_u' = [0,inf)^N) plus the perpendicular remainder.
// ||perpendicular|| equals the corresponding region distance.
template <class Vec>
PerpDecomposition perp_decompose(const Vec& q, const RegionSpec& region,
                                 RegionSide side) {
  detail::check_point(q, region);
  PerpDecomposition out;
  out.parallel.resize(q.size());
  out.perpendicular.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    double qp = static_cast<double>(q[i]) - region.r;
    double par;
    if (side == RegionSide::upper) {
      par = std::max(qp, 0.0);
    } else {
      par = std::clamp(qp, -double(region.r), 0.0);
    }
    out.parallel[i] = par;
    out.perpendicular[i] = qp - par;
  }
  return out;
}

struct CollapseSummary {
  double p50 = 0, p90 = 0, p99 = 0, max = 0;
  std::vector<double> theta_grid;
  std::vector<double> mgf;  // empirical mean of exp(theta * d), aligned with theta_grid
  std::uint64_t samples = 0;
};

// Streaming diagnostics for the state-space-collapse check: a fixed-size
// uniform reservoir for distance quantiles plus running means of
// exp(theta*d) on a probe grid. Distances arrive as integer squared norms so
// sqrt/exp evaluations are cached by value.
class CollapseDiagnostics {
 public:
  static std::vector<double> default_theta_grid() { return {0.05, 0.1, 0.2, 0.4}; }

  explicit CollapseDiagnostics(std::vector<double> theta_grid = default_theta_grid(),
                               std::uint32_t reservoir_capacity = 1u << 16,
                               std::uint64_t seed = 0x9d1cb0ff)
      : thetas_(std::move(theta_grid)),
        capacity_(reservoir_capacity),
        rng_(seed),
        mgf_sums_(thetas_.size(), 0.0) {
    for (double t : thetas_)
      if (t < 0) throw std::invalid_argument("theta grid entries must be >= 0");
    reservoir_.reserve(std::min<std::uint32_t>(capacity_, 4096));
  }

  const std::vector<double>& theta_grid() const { return thetas_; }
  std::uint64_t count() const { return count_; }

  void record(const std::vector<int>& q, const RegionSpec& region) {
    record_distance_sq(dist_sq_region_int(q, region.r));
  }

  void record_distance_sq(std::int64_t d_sq) {
    double d;
    if (d_sq < kCacheLimit) {
      const std::size_t idx = static_cast<std::size_t>(d_sq);
      if (idx >= sqrt_cache_.size()) grow_cache(idx);
      d = sqrt_cache_[idx];
      const double* row = &mgf_cache_[idx * thetas_.size()];
      for (std::size_t i = 0; i < thetas_.size(); ++i) mgf_sums_[i] += row[i];
    } else {
      d = std::sqrt(static_cast<double>(d_sq));
      for (std::size_t i = 0; i < thetas_.size(); ++i)
        mgf_sums_[i] += std::exp(thetas_[i] * d);
    }
    ++count_;
    max_ = std::max(max_, d);
    if (reservoir_.size() < capacity_) {
      reservoir_.push_back(d);
    } else {
      std::uint64_t j = rng_.below(count_);
      if (j < capacity_) reservoir_[j] = d;
    }
  }

  void record_distance(double d) {
    if (d < 0) throw std::domain_error("distance must be >= 0");
    ++count_;
    max_ = std::max(max_, d);
    for (std::size_t i = 0; i < thetas_.size(); ++i)
      mgf_sums_[i] += std::exp(thetas_[i] * d);
    if (reservoir_.size() < capacity_) {
      reservoir_.push_back(d);
    } else {
      std::uint64_t j = rng_.below(count_);
      if (j < capacity_) reservoir_[j] = d;
    }
  }

  // Merge another accumulator (e.g. from a parallel replication). MGF sums
  // add exactly; the reservoirs are pooled and uniformly thinned back to
  // capacity with this accumulator's stream.
  void merge(const CollapseDiagnostics& other) {
    if (other.thetas_ != thetas_)
      throw std::invalid_argument("cannot merge diagnostics with different theta grids");
    count_ += other.count_;
    max_ = std::max(max_, other.max_);
    for (std::size_t i = 0; i < mgf_sums_.size(); ++i) mgf_sums_[i] += other.mgf_sums_[i];
    reservoir_.insert(reservoir_.end(), other.reservoir_.begin(), other.reservoir_.end());
    while (reservoir_.size() > capacity_) {
      std::uint64_t j = rng_.below(reservoir_.size());
      reservoir_[j] = reservoir_.back();
      reservoir_.pop_back();
    }
  }

  CollapseSummary summarize() const {
    if (count_ == 0)
      throw std::logic_error("summarize called before any distance was recorded");
    CollapseSummary s;
    std::vector<double> sorted = reservoir_;
    std::sort(sorted.begin(), sorted.end());
    s.p50 = quantile(sorted, 0.50);
    s.p90 = quantile(sorted, 0.90);
    s.p99 = quantile(sorted, 0.99);
    s.max = max_;
    s.theta_grid = thetas_;
    s.mgf.resize(thetas_.size());
    for (std::size_t i = 0; i < thetas_.size(); ++i)
      s.mgf[i] = mgf_sums_[i] / static_cast<double>(count_);
    s.samples = count_;
    return s;
  }

 private:
  // Direct-indexed caches of sqrt(d_sq) and exp(theta*sqrt(d_sq)) for the
  // hot range of integer squared distances.
  static constexpr std::int64_t kCacheLimit = 1 << 16;

  void grow_cache(std::size_t idx) {
    std::size_t old = sqrt_cache_.size();
    std::size_t fresh = std::min<std::size_t>(
        std::max<std::size_t>(idx + 1, old == 0 ? 256 : old * 2), kCacheLimit);
    sqrt_cache_.resize(fresh);
    mgf_cache_.resize(fresh * thetas_.size());
    for (std::size_t k = old; k < fresh; ++k) {
      sqrt_cache_[k] = std::sqrt(static_cast<double>(k));
      for (std::size_t i = 0; i < thetas_.size(); ++i)
        mgf_cache_[k * thetas_.size() + i] = std::exp(thetas_[i] * sqrt_cache_[k]);
    }
  }

  // Nearest-rank quantile over the reservoir snapshot.
  static double quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0;
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * sorted.size()));
    if (rank == 0) rank = 1;
    return sorted[std::min(rank, sorted.size()) - 1];
  }

  std::vector<double> thetas_;
  std::uint32_t capacity_;
  RngStream rng_;
  std::vector<double> reservoir_;
  std::vector<double> mgf_sums_;
  std::uint64_t count_ = 0;
  double max_ = 0;
  std::vector<double> sqrt_cache_;
  std::vector<double> mgf_cache_;
};

}  // namespace jbt
