#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "jbt/policies.hpp"
#include "jbt/processes.hpp"
#include "jbt/rng.hpp"

namespace jbt {

// Dispatcher memory m(t) as a bitset over servers (N <= 64).
using MemoryMask = std::uint64_t;

inline MemoryMask level_set_mask(const std::vector<int>& q, int r) {
  MemoryMask m = 0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (q[i] < r) m |= MemoryMask(1) << i;
  return m;
}

struct SystemState {
  std::vector<int> q;
  MemoryMask memory = 0;
  std::uint64_t slot = 0;
};

struct SlotObservation {
  int a_total = 0;
  int dest = -1;  // -1 when the slot had no arrivals
  std::vector<int> a, s, u, q_next;
  int report_msgs = 0;
};

struct MemoryUpdate {
  MemoryMask memory = 0;
  int reports = 0;  // ID messages sent to the dispatcher this slot
};

// Memory maintenance after the queues moved from q_prev to q_next.
// `removed` is the server whose ID was consumed by this slot's dispatch
// (-1 if none).
//
// level:       memory is the below-threshold level set of q_next. A report is
//              counted for every ID present now that was not already held
//              (consumed IDs that stay below r re-report immediately).
// report-once: an ID enters only on a downward crossing of r and leaves only
//              when consumed; after removal the server stays silent until its
//              queue returns to >= r and crosses down again.
inline MemoryUpdate update_memory(MemoryMask prev, const std::vector<int>& q_prev,
                                  const std::vector<int>& q_next, int r,
                                  MemorySemantics semantics, int removed) {
  MemoryUpdate out;
  const MemoryMask removed_bit = removed >= 0 ? (MemoryMask(1) << removed) : 0;
  if (semantics == MemorySemantics::level) {
    out.memory = level_set_mask(q_next, r);
    out.reports = std::popcount(out.memory & ~(prev & ~removed_bit));
  } else {
    MemoryMask crossings = 0;
    for (std::size_t i = 0; i < q_next.size(); ++i)
      if (q_next[i] < r && q_prev[i] >= r) crossings |= MemoryMask(1) << i;
    out.memory = (prev & ~removed_bit) | crossings;
    out.reports = std::popcount(crossings);
  }
  return out;
}

inline SystemState reset(const SystemParams& params, int r, MemorySemantics semantics,
                         std::optional<std::vector<int>> q0 = std::nullopt) {
  SystemState st;
  if (q0) {
    if (static_cast<int>(q0->size()) != params.n())
      throw std::invalid_argument("initial queue vector has wrong dimension");
    for (int v : *q0)
      if (v < 0) throw std::invalid_argument("initial queue lengths must be nonnegative");
    st.q = std::move(*q0);
  } else {
    st.q.assign(params.n(), 0);
  }
  st.memory = level_set_mask(st.q, r);  // both semantics start from the level set
  st.slot = 0;
  return st;
}

// One-slot state machine. Owns the randomness streams and the observation
// buffers so the hot loop allocates nothing.
//
// Slot order: (i) draw A_total; (ii) if positive, the policy picks one
// destination from (Q, memory); (iii) draw each server's offered service;
// (iv) apply Q+ = max(Q + A - S, 0) with U the unused part; (v) refresh the
// memory for the next slot.
class Stepper {
 public:
  Stepper(const SystemParams& params, const ResolvedPolicy& policy,
          RngStream arrivals, RngStream services, RngStream routing)
      : params_(&params),
        policy_(policy),
        mu_(params.service_means()),
        mu_total_(params.mu_sigma()),
        arrivals_(arrivals),
        services_(services),
        routing_(routing) {
    const int n = params.n();
    obs_.a.assign(n, 0);
    obs_.s.assign(n, 0);
    obs_.u.assign(n, 0);
    obs_.q_next.assign(n, 0);
  }

  const ResolvedPolicy& policy() const { return policy_; }
  RngStream& arrivals() { return arrivals_; }
  RngStream& services() { return services_; }
  RngStream& routing() { return routing_; }

  const SlotObservation& step(SystemState& state) {
    const int n = params_->n();
    const int a_total = params_->arrival.sample(arrivals_);
    obs_.a_total = a_total;
    int removed = -1;
    if (a_total > 0) {
      obs_.dest = decide(policy_, state.q, state.memory, mu_, mu_total_, routing_);
      if (policy_.rule == Rule::jbt && state.memory != 0) removed = obs_.dest;
    } else {
      obs_.dest = -1;
    }
    for (int i = 0; i < n; ++i) {
      const int a = (i == obs_.dest) ? a_total : 0;
      const int s = params_->service[i].sample(services_);
      const int net = state.q[i] + a - s;
      obs_.a[i] = a;
      obs_.s[i] = s;
      obs_.u[i] = net < 0 ? -net : 0;
      obs_.q_next[i] = net < 0 ? 0 : net;
    }
    if (policy_.rule == Rule::jbt) {
      MemoryUpdate upd = update_memory(state.memory, state.q, obs_.q_next, policy_.r,
                                       policy_.semantics, removed);
      state.memory = upd.memory;
      obs_.report_msgs = upd.reports;
    } else {
      state.memory = 0;
      obs_.report_msgs = 0;
    }
    state.q = obs_.q_next;
    ++state.slot;
    return obs_;
  }

 private:
  const SystemParams* params_;
  ResolvedPolicy policy_;
  std::vector<double> mu_;
  double mu_total_;
  RngStream arrivals_, services_, routing_;
  SlotObservation obs_;
};

// Value-semantics convenience wrapper used by tests and small experiments.
// Advances the caller's streams.
inline std::pair<SystemState, SlotObservation> step(const SystemState& state,
                                                    const SystemParams& params,
                                                    const ResolvedPolicy& policy,
                                                    RngStream& arrivals,
                                                    RngStream& services,
                                                    RngStream& routing) {
  Stepper stepper(params, policy, arrivals, services, routing);
  SystemState next = state;
  SlotObservation obs = stepper.step(next);
  arrivals = stepper.arrivals();
  services = stepper.services();
  routing = stepper.routing();
  return {std::move(next), std::move(obs)};
}

}  // namespace jbt
