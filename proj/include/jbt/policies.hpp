#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jbt/rng.hpp"

namespace jbt {

enum class MemorySemantics { level, report_once };

inline const char* semantics_name(MemorySemantics s) {
  return s == MemorySemantics::level ? "level" : "report-once";
}

// Threshold schedules r(eps):
//   constant(r0)            -> r0
//   logarithmic(K, floor)   -> max(floor, ceil(K * ln(1/eps)))
//   polynomial(alpha)       -> ceil((1/eps)^(1+alpha))
struct ThresholdSchedule {
  enum class Kind { constant, logarithmic, polynomial };
  Kind kind = Kind::constant;
  int r0 = 1;
  double k = 4.0;
  int floor = 1;
  double alpha = 0.5;

  static ThresholdSchedule constant(int r) {
    if (r < 1) throw std::invalid_argument("constant threshold must be >= 1");
    ThresholdSchedule s;
    s.kind = Kind::constant;
    s.r0 = r;
    return s;
  }
  static ThresholdSchedule logarithmic(double k, int floor = 1) {
    if (k <= 0) throw std::invalid_argument("logarithmic K must be > 0");
    if (floor < 1) throw std::invalid_argument("logarithmic floor must be >= 1");
    ThresholdSchedule s;
    s.kind = Kind::logarithmic;
    s.k = k;
    s.floor = floor;
    return s;
  }
  static ThresholdSchedule polynomial(double alpha) {
    if (alpha <= 0) throw std::invalid_argument("polynomial alpha must be > 0");
    ThresholdSchedule s;
    s.kind = Kind::polynomial;
    s.alpha = alpha;
    return s;
  }

  std::string to_string() const {
    std::ostringstream os;
    switch (kind) {
      case Kind::constant: os << "const,r=" << r0; break;
      case Kind::logarithmic:
        os << "log,K=" << k;
        if (floor != 1) os << ",floor=" << floor;
        break;
      case Kind::polynomial: os << "poly,alpha=" << alpha; break;
    }
    return os.str();
  }
};

inline int threshold_at(const ThresholdSchedule& schedule, double epsilon) {
  if (!(epsilon > 0.0) || !(epsilon < 1.0))
    throw std::domain_error("threshold_at requires epsilon in (0,1)");
  switch (schedule.kind) {
    case ThresholdSchedule::Kind::constant:
      return schedule.r0;
    case ThresholdSchedule::Kind::logarithmic:
      return std::max<int>(schedule.floor,
                           static_cast<int>(std::ceil(schedule.k * std::log(1.0 / epsilon))));
    case ThresholdSchedule::Kind::polynomial:
      return static_cast<int>(std::ceil(std::pow(1.0 / epsilon, 1.0 + schedule.alpha)));
  }
  throw std::logic_error("unknown schedule kind");
}

enum class Rule { random_proportional, jsq, power_of_d, jbt };
enum class TieBreak { uniform_random, lowest_index };

// A policy with its threshold resolved to a concrete integer r for one eps.
struct ResolvedPolicy {
  Rule rule = Rule::random_proportional;
  int d = 2;                 // power-of-d only
  int r = 1;                 // jbt only
  MemorySemantics semantics = MemorySemantics::level;
  TieBreak tie = TieBreak::uniform_random;
};

struct PolicySpec {
  Rule rule = Rule::random_proportional;
  int d = 2;
  ThresholdSchedule schedule = ThresholdSchedule::constant(1);
  MemorySemantics semantics = MemorySemantics::level;
  TieBreak tie = TieBreak::uniform_random;

  static PolicySpec random_proportional() { return PolicySpec{}; }
  static PolicySpec jsq(TieBreak tie = TieBreak::uniform_random) {
    PolicySpec p;
    p.rule = Rule::jsq;
    p.tie = tie;
    return p;
  }
  static PolicySpec power_of_d(int d, TieBreak tie = TieBreak::uniform_random) {
    PolicySpec p;
    p.rule = Rule::power_of_d;
    p.d = d;
    p.tie = tie;
    return p;
  }
  static PolicySpec jbt(ThresholdSchedule sched,
                        MemorySemantics sem = MemorySemantics::level,
                        TieBreak tie = TieBreak::uniform_random) {
    PolicySpec p;
    p.rule = Rule::jbt;
    p.schedule = sched;
    p.semantics = sem;
    p.tie = tie;
    return p;
  }
  static PolicySpec jiq(MemorySemantics sem = MemorySemantics::level) {
    return jbt(ThresholdSchedule::constant(1), sem);
  }

  ResolvedPolicy resolve(double epsilon, int n_servers) const {
    ResolvedPolicy r;
    r.rule = rule;
    r.d = d;
    r.semantics = semantics;
    r.tie = tie;
    if (rule == Rule::power_of_d && (d < 1 || d > n_servers))
      throw std::invalid_argument("power-of-d requires d in [1, N]");
    if (rule == Rule::jbt) r.r = threshold_at(schedule, epsilon);
    return r;
  }

  // Metadata string, e.g. "jbt(log,K=4)/level". JBT with constant threshold 1
  // is reported under its common name JIQ.
  std::string tag() const {
    std::ostringstream os;
    switch (rule) {
      case Rule::random_proportional: return "random";
      case Rule::jsq: return "jsq";
      case Rule::power_of_d:
        os << "pod(d=" << d << ")";
        return os.str();
      case Rule::jbt:
        if (schedule.kind == ThresholdSchedule::Kind::constant && schedule.r0 == 1)
          os << "JIQ";
        else
          os << "jbt(" << schedule.to_string() << ")";
        os << '/' << semantics_name(semantics);
        return os.str();
    }
    return "?";
  }

  static PolicySpec parse(const std::string& text);
};

// --- routing decisions ----------------------------------------------------
//
// All policies dispatch the whole arrival batch of a slot to one server.
// decide() must only be called on slots with at least one arrival.

namespace detail {

inline int proportional_pick(const std::vector<double>& mu, double mu_total,
                             RngStream& rng) {
  double u = rng.u01() * mu_total;
  double acc = 0;
  for (std::size_t i = 0; i + 1 < mu.size(); ++i) {
    acc += mu[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(mu.size()) - 1;
}

inline int argmin_with_ties(const std::vector<int>& q, const int* candidates,
                            int count, TieBreak tie, RngStream& rng) {
  int best = candidates[0];
  int ties = 1;
  int tied[64];
  tied[0] = best;
  for (int i = 1; i < count; ++i) {
    int c = candidates[i];
    if (q[c] < q[best]) {
      best = c;
      ties = 1;
      tied[0] = c;
    } else if (q[c] == q[best]) {
      if (c < best) best = c;
      if (ties < 64) tied[ties] = c;
      ++ties;
    }
  }
  if (tie == TieBreak::lowest_index || ties == 1) return best;
  return tied[rng.below(static_cast<std::uint64_t>(ties))];
}

}  // namespace detail

// Returns the destination server for this slot's batch. `memory_mask` is the
// dispatcher memory m(t) as a bitset over servers; it is only read for JBT.
inline int decide(const ResolvedPolicy& policy, const std::vector<int>& q,
                  std::uint64_t memory_mask, const std::vector<double>& mu,
                  double mu_total, RngStream& rng) {
  const int n = static_cast<int>(q.size());
  switch (policy.rule) {
    case Rule::random_proportional:
      return detail::proportional_pick(mu, mu_total, rng);
    case Rule::jsq: {
      int all[64];
      for (int i = 0; i < n; ++i) all[i] = i;
      return detail::argmin_with_ties(q, all, n, policy.tie, rng);
    }
    case Rule::power_of_d: {
      // Sample d distinct servers uniformly (partial Fisher-Yates).
      int pool[64];
      for (int i = 0; i < n; ++i) pool[i] = i;
      int chosen[64];
      for (int i = 0; i < policy.d; ++i) {
        int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
        chosen[i] = pool[i];
      }
      return detail::argmin_with_ties(q, chosen, policy.d, policy.tie, rng);
    }
    case Rule::jbt: {
      if (memory_mask == 0)
        return detail::proportional_pick(mu, mu_total, rng);
      double in_mem = 0;
      for (int i = 0; i < n; ++i)
        if (memory_mask & (std::uint64_t(1) << i)) in_mem += mu[i];
      double u = rng.u01() * in_mem;
      double acc = 0;
      int last = -1;
      for (int i = 0; i < n; ++i) {
        if (!(memory_mask & (std::uint64_t(1) << i))) continue;
        acc += mu[i];
        last = i;
        if (u < acc) return i;
      }
      return last;
    }
  }
  throw std::logic_error("unknown policy rule");
}

// Exact one-slot destination distribution given (q, memory). This is the
// enumeration the exact-chain oracle integrates over; it is deliberately a
// separate code path from decide() so the two can cross-check each other.
inline std::vector<double> dest_distribution(const ResolvedPolicy& policy,
                                             const std::vector<int>& q,
                                             std::uint64_t memory_mask,
                                             const std::vector<double>& mu) {
  const int n = static_cast<int>(q.size());
  const double mu_total = std::accumulate(mu.begin(), mu.end(), 0.0);
  std::vector<double> p(n, 0.0);
  auto proportional = [&] {
    for (int i = 0; i < n; ++i) p[i] = mu[i] / mu_total;
  };
  auto spread_min = [&](const std::vector<int>& members, double weight) {
    int best = q[members[0]];
    for (int m : members) best = std::min(best, q[m]);
    if (policy.tie == TieBreak::lowest_index) {
      for (int m : members)
        if (q[m] == best) {
          p[m] += weight;
          return;
        }
    }
    int ties = 0;
    for (int m : members)
      if (q[m] == best) ++ties;
    for (int m : members)
      if (q[m] == best) p[m] += weight / ties;
  };
  switch (policy.rule) {
    case Rule::random_proportional:
      proportional();
      break;
    case Rule::jsq: {
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      spread_min(all, 1.0);
      break;
    }
    case Rule::power_of_d: {
      // Average over all C(N, d) equally likely samples.
      std::vector<int> members(policy.d);
      std::vector<int> idx(policy.d);
      std::iota(idx.begin(), idx.end(), 0);
      double total = 0;
      while (true) {
        for (int i = 0; i < policy.d; ++i) members[i] = idx[i];
        spread_min(members, 1.0);
        total += 1.0;
        int i = policy.d - 1;
        while (i >= 0 && idx[i] == n - policy.d + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < policy.d; ++j) idx[j] = idx[j - 1] + 1;
      }
      for (auto& v : p) v /= total;
      break;
    }
    case Rule::jbt: {
      if (memory_mask == 0) {
        proportional();
        break;
      }
      double in_mem = 0;
      for (int i = 0; i < n; ++i)
        if (memory_mask & (std::uint64_t(1) << i)) in_mem += mu[i];
      for (int i = 0; i < n; ++i)
        if (memory_mask & (std::uint64_t(1) << i)) p[i] = mu[i] / in_mem;
      break;
    }
  }
  return p;
}

inline PolicySpec PolicySpec::parse(const std::string& text) {
  // Grammar: random | jsq[:lowest] | pod(d=K) | jiq[/sem] |
  //          jbt(const,r=R)[/sem] | jbt(log,K=..[,floor=F])[/sem] |
  //          jbt(poly,alpha=A)[/sem];  sem in {level, report-once}
  std::string body = text, sem;
  if (auto slash = text.find('/'); slash != std::string::npos) {
    body = text.substr(0, slash);
    sem = text.substr(slash + 1);
  }
  MemorySemantics semantics = MemorySemantics::level;
  if (!sem.empty()) {
    if (sem == "level") semantics = MemorySemantics::level;
    else if (sem == "report-once") semantics = MemorySemantics::report_once;
    else throw std::invalid_argument("unknown memory semantics '" + sem + "'");
  }
  TieBreak tie = TieBreak::uniform_random;
  if (auto colon = body.find(':'); colon != std::string::npos) {
    std::string t = body.substr(colon + 1);
    body = body.substr(0, colon);
    if (t == "lowest") tie = TieBreak::lowest_index;
    else if (t == "uniform") tie = TieBreak::uniform_random;
    else throw std::invalid_argument("unknown tie break '" + t + "'");
  }

  auto open = body.find('(');
  std::string name = body.substr(0, open == std::string::npos ? body.size() : open);
  std::string args = open == std::string::npos
                         ? std::string()
                         : body.substr(open + 1, body.rfind(')') - open - 1);

  auto get_kv = [&](const std::string& key) -> std::string {
    std::istringstream in(args);
    std::string piece;
    while (std::getline(in, piece, ',')) {
      auto eq = piece.find('=');
      std::string k = eq == std::string::npos ? piece : piece.substr(0, eq);
      k.erase(std::remove_if(k.begin(), k.end(), ::isspace), k.end());
      if (k == key && eq != std::string::npos) return piece.substr(eq + 1);
    }
    return {};
  };

  if (name == "random" || name == "random-proportional") {
    PolicySpec p = PolicySpec::random_proportional();
    p.tie = tie;
    return p;
  }
  if (name == "jsq") return PolicySpec::jsq(tie);
  if (name == "pod" || name == "power-of-d") {
    auto dv = get_kv("d");
    if (dv.empty()) throw std::invalid_argument("pod requires d=<int>");
    return PolicySpec::power_of_d(std::stoi(dv), tie);
  }
  if (name == "jiq" || name == "JIQ") {
    PolicySpec p = PolicySpec::jiq(semantics);
    p.tie = tie;
    return p;
  }
  if (name == "jbt") {
    std::istringstream in(args);
    std::string kind;
    std::getline(in, kind, ',');
    ThresholdSchedule sched = ThresholdSchedule::constant(1);
    if (kind == "const") {
      auto rv = get_kv("r");
      if (rv.empty()) throw std::invalid_argument("jbt(const,...) requires r=<int>");
      sched = ThresholdSchedule::constant(std::stoi(rv));
    } else if (kind == "log") {
      auto kv = get_kv("K");
      if (kv.empty()) kv = get_kv("k");
      double k = kv.empty() ? 4.0 : std::stod(kv);
      auto fv = get_kv("floor");
      sched = ThresholdSchedule::logarithmic(k, fv.empty() ? 1 : std::stoi(fv));
    } else if (kind == "poly") {
      auto av = get_kv("alpha");
      if (av.empty()) throw std::invalid_argument("jbt(poly,...) requires alpha=<real>");
      sched = ThresholdSchedule::polynomial(std::stod(av));
    } else {
      throw std::invalid_argument("unknown jbt schedule kind '" + kind + "'");
    }
    return PolicySpec::jbt(sched, semantics, tie);
  }
  throw std::invalid_argument("unknown policy '" + text + "'");
}

}  // namespace jbt
