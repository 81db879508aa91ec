#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "jbt/system.hpp"

namespace jbt {

struct Estimate {
  double mean = 0;
  double ci_half = 0;  // 95% half-width
  int n_effective = 0;
};

inline double t_quantile_975(double dof) {
  boost::math::students_t dist(dof);
  return boost::math::quantile(dist, 0.975);
}

// 95% confidence interval from batch means: mean of the batch means with
// half-width t(0.975, B-1) * s / sqrt(B).
inline Estimate batch_means_ci(const std::vector<double>& batches) {
  const int b = static_cast<int>(batches.size());
  if (b < 2)
    throw std::invalid_argument("batch_means_ci needs at least 2 batches, got " +
                                std::to_string(b));
  double mean = 0;
  for (double v : batches) mean += v;
  mean /= b;
  double ss = 0;
  for (double v : batches) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (b - 1));
  return Estimate{mean, t_quantile_975(b - 1) * sd / std::sqrt(double(b)), b};
}

// Welch two-sample 95% interval for mean(x) - mean(y).
struct WelchInterval {
  double diff = 0;
  double half = 0;
  double dof = 0;
  double lo() const { return diff - half; }
  double hi() const { return diff + half; }
};

inline WelchInterval welch_interval(const std::vector<double>& x,
                                    const std::vector<double>& y) {
  if (x.size() < 2 || y.size() < 2)
    throw std::invalid_argument("welch_interval needs >= 2 samples per side");
  auto stats = [](const std::vector<double>& v, double& m, double& var) {
    m = 0;
    for (double e : v) m += e;
    m /= v.size();
    var = 0;
    for (double e : v) var += (e - m) * (e - m);
    var /= (v.size() - 1);
  };
  double mx, vx, my, vy;
  stats(x, mx, vx);
  stats(y, my, vy);
  const double nx = double(x.size()), ny = double(y.size());
  const double se_sq = vx / nx + vy / ny;
  WelchInterval w;
  w.diff = mx - my;
  if (se_sq <= 0) {
    w.half = 0;
    w.dof = nx + ny - 2;
    return w;
  }
  w.dof = se_sq * se_sq /
          (vx * vx / (nx * nx * (nx - 1)) + vy * vy / (ny * ny * (ny - 1)));
  w.half = t_quantile_975(w.dof) * std::sqrt(se_sq);
  return w;
}

struct StatsReport {
  Estimate sum_q;   // E[sum_n Q_n]
  double scaled_mean = 0;  // epsilon * sum_q.mean
  Estimate t_eps;   // E[||Q(t+1)||_1 ||U(t)||_1]
  Estimate unused;  // E[||U||_1]
  // Pairwise-drift functionals; present only for homogeneous services.
  std::optional<double> t1, t2, t3, lhs_lemma5;
  std::optional<Estimate> lemma5_residual;  // lhs - (T1 + T2 - T3)
  std::uint64_t samples = 0;
};

// Streaming steady-state estimator. Slots before `warmup` are ignored; the
// post-warmup span is split into `n_batches` equal batches for the CIs.
class EstimatorState {
 public:
  EstimatorState(std::uint64_t warmup_slots, std::uint64_t horizon_slots,
                 int n_batches = 32, bool homogeneous = true)
      : warmup_(warmup_slots), homogeneous_(homogeneous) {
    if (horizon_slots <= warmup_slots)
      throw std::invalid_argument("horizon must exceed warmup");
    if (n_batches < 2) throw std::invalid_argument("need at least 2 batches");
    batch_size_ = (horizon_slots - warmup_slots) / n_batches;
    if (batch_size_ == 0) batch_size_ = 1;
  }

  std::uint64_t warmup() const { return warmup_; }
  std::uint64_t batch_size() const { return batch_size_; }

  // Feed one slot. q_prev must be Q(t) for the observation produced at t.
  void accumulate(const SlotObservation& obs, const std::vector<int>& q_prev) {
    const std::uint64_t t = slot_++;
    if (t < warmup_) return;

    const int n = static_cast<int>(q_prev.size());
    std::int64_t sum_q_next = 0, sum_u = 0, dot_qu = 0;
    std::int64_t sum_u_sq = 0;
    for (int i = 0; i < n; ++i) {
      sum_q_next += obs.q_next[i];
      sum_u += obs.u[i];
      dot_qu += std::int64_t(obs.q_next[i]) * obs.u[i];
      sum_u_sq += std::int64_t(obs.u[i]) * obs.u[i];
    }
    const double t_eps_slot = double(sum_q_next) * double(sum_u);
    // sum over i<j of (Q+_i U_j + Q+_j U_i)
    const double pair_qu = double(sum_q_next) * double(sum_u) - double(dot_qu);

    double t1_slot = 0, t2_slot = 0, t3_slot = 0;
    if (homogeneous_) {
      if (obs.dest >= 0) {
        std::int64_t sum_q_prev = 0;
        for (int i = 0; i < n; ++i) sum_q_prev += q_prev[i];
        t1_slot = 2.0 * obs.a_total *
                  (double(n) * q_prev[obs.dest] - double(sum_q_prev));
      }
      std::int64_t sum_x = 0, sum_x_sq = 0;
      for (int i = 0; i < n; ++i) {
        const std::int64_t x = std::int64_t(obs.a[i]) - obs.s[i];
        sum_x += x;
        sum_x_sq += x * x;
      }
      t2_slot = double(n) * double(sum_x_sq) - double(sum_x) * double(sum_x);
      t3_slot = double(n) * double(sum_u_sq) - double(sum_u) * double(sum_u);
      tot_t1_ += t1_slot;
      tot_t2_ += t2_slot;
      tot_t3_ += t3_slot;
      tot_pair_qu_ += pair_qu;
    }

    tot_sum_q_ += double(sum_q_next);
    tot_t_eps_ += t_eps_slot;
    tot_unused_ += double(sum_u);
    ++count_;

    cur_sum_q_ += double(sum_q_next);
    cur_t_eps_ += t_eps_slot;
    cur_unused_ += double(sum_u);
    cur_residual_ += 2.0 * pair_qu - (t1_slot + t2_slot - t3_slot);
    if (++cur_fill_ == batch_size_) {
      const double inv = 1.0 / double(batch_size_);
      batches_sum_q_.push_back(cur_sum_q_ * inv);
      batches_t_eps_.push_back(cur_t_eps_ * inv);
      batches_unused_.push_back(cur_unused_ * inv);
      batches_residual_.push_back(cur_residual_ * inv);
      cur_sum_q_ = cur_t_eps_ = cur_unused_ = cur_residual_ = 0;
      cur_fill_ = 0;
    }
  }

  int complete_batches() const { return static_cast<int>(batches_sum_q_.size()); }

  StatsReport finalize(double epsilon) const {
    if (complete_batches() < 2)
      throw std::runtime_error(
          "insufficient data: need >= 2 complete batches of " +
          std::to_string(batch_size_) + " post-warmup slots, have " +
          std::to_string(complete_batches()));
    StatsReport r;
    r.sum_q = batch_means_ci(batches_sum_q_);
    r.sum_q.mean = tot_sum_q_ / double(count_);
    r.t_eps = batch_means_ci(batches_t_eps_);
    r.t_eps.mean = tot_t_eps_ / double(count_);
    r.unused = batch_means_ci(batches_unused_);
    r.unused.mean = tot_unused_ / double(count_);
    r.scaled_mean = epsilon * r.sum_q.mean;
    r.samples = count_;
    if (homogeneous_) {
      r.t1 = tot_t1_ / double(count_);
      r.t2 = tot_t2_ / double(count_);
      r.t3 = tot_t3_ / double(count_);
      r.lhs_lemma5 = 2.0 * tot_pair_qu_ / double(count_);
      Estimate res = batch_means_ci(batches_residual_);
      res.mean = *r.lhs_lemma5 - (*r.t1 + *r.t2 - *r.t3);
      r.lemma5_residual = res;
    }
    return r;
  }

 private:
  std::uint64_t warmup_;
  bool homogeneous_;
  std::uint64_t batch_size_ = 0;
  std::uint64_t slot_ = 0;
  std::uint64_t count_ = 0;

  double tot_sum_q_ = 0, tot_t_eps_ = 0, tot_unused_ = 0;
  double tot_t1_ = 0, tot_t2_ = 0, tot_t3_ = 0, tot_pair_qu_ = 0;

  double cur_sum_q_ = 0, cur_t_eps_ = 0, cur_unused_ = 0, cur_residual_ = 0;
  std::uint64_t cur_fill_ = 0;
  std::vector<double> batches_sum_q_, batches_t_eps_, batches_unused_, batches_residual_;
};

}  // namespace jbt
