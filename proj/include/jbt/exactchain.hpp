#pragma once

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "jbt/geometry.hpp"
#include "jbt/policies.hpp"
#include "jbt/processes.hpp"
#include "jbt/system.hpp"

namespace jbt {

// Exact truncated Markov chain for Z(t) = (Q(t), m(t)). Queues are capped at
// `buffer`; increments that would exceed the cap are clipped and the clipped
// probability mass is recorded rather than redistributed. Under level
// semantics the memory is a function of Q, so the state is Q alone;
// report-once chains carry the memory bitset explicitly.
struct TruncatedChain {
  SystemParams params;
  ResolvedPolicy policy;
  int buffer = 0;
  bool memory_in_state = false;

  std::vector<std::vector<int>> state_q;      // queue vector per state
  std::vector<MemoryMask> state_mask;         // memory per state (0 if folded)
  std::vector<int> row_ptr;                   // CSR over states
  std::vector<int> col;
  std::vector<double> val;
  std::vector<double> clip_prob;              // per-state clipped mass

  int state_count() const { return static_cast<int>(state_q.size()); }
};

struct StationaryDistribution {
  std::vector<double> pi;
  double residual = 0;       // ||pi P - pi||_1
  double boundary_mass = 0;  // total mass on states with any Q_n = buffer
  double clipped_mass = 0;   // stationary probability of a clipped transition
};

namespace detail {

// Enumerate one slot's (arrival, destination, service vector) outcomes from a
// given state and hand each to `sink` with its exact probability.
// Outcome fields passed: prob, a_total, dest, s (vector), plus the resulting
// clipped q_next, u, and next memory mask.
template <class Sink>
void for_each_outcome(const SystemParams& params, const ResolvedPolicy& policy,
                      int buffer, const std::vector<int>& q, MemoryMask mask,
                      Sink&& sink) {
  const int n = params.n();
  const std::vector<double> mu = params.service_means();
  std::vector<int> s(n), q_next(n), u(n), a_vec(n);

  // service vector odometer over each server's support
  std::vector<std::size_t> idx(n, 0);
  auto service_prob = [&]() {
    double p = 1;
    for (int i = 0; i < n; ++i) {
      s[i] = params.service[i].support()[idx[i]];
      p *= params.service[i].pmf(s[i]);
    }
    return p;
  };

  auto emit_for_dispatch = [&](double p_branch, int a_total, int dest) {
    std::fill(idx.begin(), idx.end(), 0);
    while (true) {
      const double ps = service_prob();
      bool clipped = false;
      for (int i = 0; i < n; ++i) {
        const int a = (i == dest) ? a_total : 0;
        a_vec[i] = a;
        const int net = q[i] + a - s[i];
        u[i] = net < 0 ? -net : 0;
        int qn = net < 0 ? 0 : net;
        if (qn > buffer) {
          qn = buffer;
          clipped = true;
        }
        q_next[i] = qn;
      }
      MemoryMask next_mask = 0;
      if (policy.rule == Rule::jbt) {
        const int removed = (dest >= 0 && mask != 0) ? dest : -1;
        next_mask =
            update_memory(mask, q, q_next, policy.r, policy.semantics, removed).memory;
      }
      sink(p_branch * ps, a_total, dest, a_vec, s, u, q_next, next_mask, clipped);
      // advance odometer
      int i = 0;
      while (i < n) {
        if (++idx[i] < params.service[i].support().size()) break;
        idx[i] = 0;
        ++i;
      }
      if (i == n) break;
    }
  };

  for (int a_val : params.arrival.support()) {
    const double pa = params.arrival.pmf(a_val);
    if (pa <= 0) continue;
    if (a_val == 0) {
      emit_for_dispatch(pa, 0, -1);
    } else {
      const std::vector<double> pd = dest_distribution(policy, q, mask, mu);
      for (int dest = 0; dest < n; ++dest)
        if (pd[dest] > 0) emit_for_dispatch(pa * pd[dest], a_val, dest);
    }
  }
}

inline std::uint64_t pack_state(const std::vector<int>& q, MemoryMask mask, int buffer,
                                bool with_mask, int n) {
  std::uint64_t key = 0;
  for (int i = 0; i < n; ++i) key = key * std::uint64_t(buffer + 1) + std::uint64_t(q[i]);
  if (with_mask) key = (key << n) | mask;
  return key;
}

}  // namespace detail

inline TruncatedChain build_chain(const SystemParams& params,
                                  const ResolvedPolicy& policy, int buffer,
                                  MemorySemantics semantics) {
  if (buffer < 1) throw std::invalid_argument("buffer cap must be >= 1");
  if (!params.finite_support())
    throw std::invalid_argument("oracle requires finite support");
  ResolvedPolicy pol = policy;
  pol.semantics = semantics;

  const int n = params.n();
  const bool with_mask = pol.rule == Rule::jbt && semantics == MemorySemantics::report_once;
  {
    double bound = 1;
    for (int i = 0; i < n; ++i) bound *= double(buffer + 1);
    if (with_mask) bound *= double(std::uint64_t(1) << n);
    if (bound > 5e6)
      throw std::invalid_argument("state space too large: " + std::to_string(bound) +
                                  " > 5e6 states");
  }

  TruncatedChain chain{params, pol, buffer, with_mask, {}, {}, {}, {}, {}, {}};

  std::unordered_map<std::uint64_t, int> index;
  std::vector<std::map<int, double>> rows;

  SystemState init = reset(params, pol.r, semantics);
  auto intern = [&](const std::vector<int>& q, MemoryMask mask) {
    const std::uint64_t key = detail::pack_state(q, mask, buffer, with_mask, n);
    auto [it, fresh] = index.try_emplace(key, static_cast<int>(chain.state_q.size()));
    if (fresh) {
      chain.state_q.push_back(q);
      chain.state_mask.push_back(with_mask ? mask : 0);
      rows.emplace_back();
      chain.clip_prob.push_back(0.0);
    }
    return it->second;
  };

  MemoryMask init_mask = pol.rule == Rule::jbt ? init.memory : 0;
  intern(init.q, init_mask);

  // breadth-first expansion of the reachable class
  for (int s_idx = 0; s_idx < static_cast<int>(chain.state_q.size()); ++s_idx) {
    const std::vector<int> q = chain.state_q[s_idx];
    MemoryMask mask = 0;
    if (pol.rule == Rule::jbt)
      mask = with_mask ? chain.state_mask[s_idx] : level_set_mask(q, pol.r);
    detail::for_each_outcome(
        params, pol, buffer, q, mask,
        [&](double p, int, int, const std::vector<int>&, const std::vector<int>&,
            const std::vector<int>&, const std::vector<int>& q_next,
            MemoryMask next_mask, bool clipped) {
          const int t_idx = intern(q_next, next_mask);
          rows[s_idx][t_idx] += p;
          if (clipped) chain.clip_prob[s_idx] += p;
        });
  }

  const int m = chain.state_count();
  chain.row_ptr.assign(m + 1, 0);
  for (int i = 0; i < m; ++i)
    chain.row_ptr[i + 1] = chain.row_ptr[i] + static_cast<int>(rows[i].size());
  chain.col.resize(chain.row_ptr[m]);
  chain.val.resize(chain.row_ptr[m]);
  for (int i = 0; i < m; ++i) {
    int k = chain.row_ptr[i];
    double row_sum = 0;
    for (auto& [j, p] : rows[i]) {
      chain.col[k] = j;
      chain.val[k] = p;
      row_sum += p;
      ++k;
    }
    if (std::abs(row_sum - 1.0) > 1e-12)
      throw std::logic_error("transition row does not sum to 1");
  }
  return chain;
}

struct StationaryOptions {
  double residual_target = 1e-12;
  std::uint64_t max_iterations = 10'000'000;
  int direct_solve_limit = 20'000;  // states at or below this use a sparse LU
};

inline StationaryDistribution stationary(const TruncatedChain& chain,
                                         const StationaryOptions& opt = {}) {
  const int m = chain.state_count();
  StationaryDistribution out;
  out.pi.assign(m, 0.0);

  auto residual_of = [&](const std::vector<double>& pi) {
    std::vector<double> next(m, 0.0);
    for (int i = 0; i < m; ++i) {
      const double w = pi[i];
      if (w == 0) continue;
      for (int k = chain.row_ptr[i]; k < chain.row_ptr[i + 1]; ++k)
        next[chain.col[k]] += w * chain.val[k];
    }
    double r = 0;
    for (int i = 0; i < m; ++i) r += std::abs(next[i] - pi[i]);
    return r;
  };

  if (m <= opt.direct_solve_limit) {
    // Solve pi (P - I) = 0 with the normalization sum(pi) = 1: transpose to
    // (P^T - I) x = 0 and replace the last equation by 1^T x = 1.
    using Sp = Eigen::SparseMatrix<double>;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(chain.val.size() + 2 * m);
    for (int i = 0; i < m; ++i)
      for (int k = chain.row_ptr[i]; k < chain.row_ptr[i + 1]; ++k) {
        const int j = chain.col[k];
        if (j != m - 1) trip.emplace_back(j, i, chain.val[k]);
      }
    for (int i = 0; i < m - 1; ++i) trip.emplace_back(i, i, -1.0);
    for (int i = 0; i < m; ++i) trip.emplace_back(m - 1, i, 1.0);
    Sp a(m, m);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    Eigen::SparseLU<Sp> solver;
    solver.compute(a);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("stationary direct solve failed to factorize");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    rhs[m - 1] = 1.0;
    Eigen::VectorXd x = solver.solve(rhs);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("stationary direct solve failed");
    double total = 0;
    for (int i = 0; i < m; ++i) {
      out.pi[i] = std::max(x[i], 0.0);
      total += out.pi[i];
    }
    for (auto& v : out.pi) v /= total;
    out.residual = residual_of(out.pi);
  } else {
    // Damped power iteration pi <- (pi + pi P)/2; the lazy step removes
    // periodicity without changing the fixed point.
    std::vector<double> pi(m, 1.0 / m), next(m, 0.0);
    std::uint64_t iter = 0;
    double res = 1;
    while (iter < opt.max_iterations) {
      std::fill(next.begin(), next.end(), 0.0);
      for (int i = 0; i < m; ++i) {
        const double w = pi[i];
        if (w == 0) continue;
        for (int k = chain.row_ptr[i]; k < chain.row_ptr[i + 1]; ++k)
          next[chain.col[k]] += w * chain.val[k];
      }
      res = 0;
      for (int i = 0; i < m; ++i) {
        res += std::abs(next[i] - pi[i]);
        pi[i] = 0.5 * (pi[i] + next[i]);
      }
      ++iter;
      if (res <= opt.residual_target) break;
    }
    if (res > opt.residual_target)
      throw std::runtime_error("stationary power iteration did not converge: residual " +
                               std::to_string(res) + " after " +
                               std::to_string(iter) + " iterations");
    double total = 0;
    for (double v : pi) total += v;
    for (auto& v : pi) v /= total;
    out.pi = std::move(pi);
    out.residual = residual_of(out.pi);
  }

  for (int i = 0; i < m; ++i) {
    bool on_boundary = false;
    for (int v : chain.state_q[i])
      if (v == chain.buffer) on_boundary = true;
    if (on_boundary) out.boundary_mass += out.pi[i];
    out.clipped_mass += out.pi[i] * chain.clip_prob[i];
  }
  return out;
}

enum class Functional {
  sum_q,
  t_eps,        // E[||Q(t+1)||_1 ||U(t)||_1]
  unused_l1,    // E[||U||_1]
  unused_l1_sq, // E[||U||_1^2]
  T1,
  T2,
  T3,
  lhs_lemma5,   // 2 sum_{i<j} E[Q+_i U_j + Q+_j U_i]
};

inline bool functional_needs_homogeneous(Functional f) {
  switch (f) {
    case Functional::T1:
    case Functional::T2:
    case Functional::T3:
    case Functional::lhs_lemma5:
      return true;
    default:
      return false;
  }
}

// Exact steady-state expectation under pi, integrating each state's one-step
// outcome enumeration. Uses the same truncated dynamics as the chain build.
inline double exact_expectation(const StationaryDistribution& dist,
                                const TruncatedChain& chain, Functional f) {
  if (functional_needs_homogeneous(f) && !chain.params.homogeneous())
    throw std::invalid_argument(
        "functional requires homogeneous servers (Lemma on pairwise drift is "
        "stated for homogeneous service)");
  const int m = chain.state_count();
  const int n = chain.params.n();

  if (f == Functional::sum_q) {
    double acc = 0;
    for (int i = 0; i < m; ++i) {
      double s = 0;
      for (int v : chain.state_q[i]) s += v;
      acc += dist.pi[i] * s;
    }
    return acc;
  }

  double acc = 0;
  for (int i = 0; i < m; ++i) {
    const double w = dist.pi[i];
    if (w <= 0) continue;
    const std::vector<int>& q = chain.state_q[i];
    MemoryMask mask = 0;
    if (chain.policy.rule == Rule::jbt)
      mask = chain.memory_in_state ? chain.state_mask[i]
                                   : level_set_mask(q, chain.policy.r);
    detail::for_each_outcome(
        chain.params, chain.policy, chain.buffer, q, mask,
        [&](double p, int a_total, int dest, const std::vector<int>& a,
            const std::vector<int>& s, const std::vector<int>& u,
            const std::vector<int>& q_next, MemoryMask, bool) {
          double value = 0;
          switch (f) {
            case Functional::sum_q:
              break;
            case Functional::t_eps: {
              double sq = 0, su = 0;
              for (int j = 0; j < n; ++j) {
                sq += q_next[j];
                su += u[j];
              }
              value = sq * su;
              break;
            }
            case Functional::unused_l1: {
              for (int j = 0; j < n; ++j) value += u[j];
              break;
            }
            case Functional::unused_l1_sq: {
              double su = 0;
              for (int j = 0; j < n; ++j) su += u[j];
              value = su * su;
              break;
            }
            case Functional::T1: {
              if (dest >= 0) {
                double sum_q_state = 0;
                for (int j = 0; j < n; ++j) sum_q_state += q[j];
                value = 2.0 * a_total * (double(n) * q[dest] - sum_q_state);
              }
              break;
            }
            case Functional::T2: {
              double sx = 0, sx2 = 0;
              for (int j = 0; j < n; ++j) {
                const double x = double(a[j]) - s[j];
                sx += x;
                sx2 += x * x;
              }
              value = n * sx2 - sx * sx;
              break;
            }
            case Functional::T3: {
              double su = 0, su2 = 0;
              for (int j = 0; j < n; ++j) {
                su += u[j];
                su2 += double(u[j]) * u[j];
              }
              value = n * su2 - su * su;
              break;
            }
            case Functional::lhs_lemma5: {
              double sq = 0, su = 0, dot = 0;
              for (int j = 0; j < n; ++j) {
                sq += q_next[j];
                su += u[j];
                dot += double(q_next[j]) * u[j];
              }
              value = 2.0 * (sq * su - dot);
              break;
            }
          }
          acc += w * p * value;
        });
  }
  return acc;
}

// Exact E[exp(theta * d_R(Q))] under pi.
inline double exact_dist_mgf(const StationaryDistribution& dist,
                             const TruncatedChain& chain, const RegionSpec& region,
                             double theta) {
  double acc = 0;
  for (int i = 0; i < chain.state_count(); ++i)
    acc += dist.pi[i] *
           std::exp(theta * std::sqrt(double(dist_sq_region_int(chain.state_q[i],
                                                                region.r))));
  return acc;
}

// Exact quantile of d_R(Q) under pi (smallest value with CDF >= p).
inline double exact_dist_quantile(const StationaryDistribution& dist,
                                  const TruncatedChain& chain,
                                  const RegionSpec& region, double p) {
  std::map<double, double> cdf;
  for (int i = 0; i < chain.state_count(); ++i)
    cdf[std::sqrt(double(dist_sq_region_int(chain.state_q[i], region.r)))] +=
        dist.pi[i];
  double acc = 0;
  for (auto& [d, mass] : cdf) {
    acc += mass;
    if (acc >= p) return d;
  }
  return cdf.empty() ? 0.0 : cdf.rbegin()->first;
}

}  // namespace jbt
