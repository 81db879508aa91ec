#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jbt/exactchain.hpp"
#include "jbt/geometry.hpp"
#include "jbt/policies.hpp"
#include "jbt/processes.hpp"
#include "jbt/stats.hpp"
#include "jbt/system.hpp"

namespace jbt {

inline constexpr const char* kVersion = "jbt 0.1.0";

// Seed scheme: every stream seed is derive_seed(base_seed, {stream_id,
// policy_component, epsilon_index, replication}). Stream ids: 1 arrival,
// 2 service, 3 routing, 4 diagnostics, 0 row tag. With common random numbers
// the policy component of the arrival/service streams is the shared sentinel
// below, so all policies at one (epsilon, replication) see identical
// arrival/service draws; the routing stream always stays per-policy.
inline constexpr std::uint64_t kCrnShared = 0xC0FFEE;

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<ProcessSpec> service;
  ArrivalFamily arrival;
  std::vector<double> epsilons;
  std::vector<PolicySpec> policies;

  enum class HorizonRule { fixed, c_over_eps_sq };
  HorizonRule horizon_rule = HorizonRule::c_over_eps_sq;
  std::uint64_t horizon_fixed = 1'000'000;
  double horizon_c = 1e5;  // slots = horizon_c / eps^2

  double warmup_fraction = 0.2;
  int replications = 10;
  int batches = 32;
  std::uint64_t base_seed = 1;
  std::vector<double> theta_grid = CollapseDiagnostics::default_theta_grid();
  std::optional<int> buffer;  // truncation cap for oracle runs
  bool crn = true;
  std::optional<ThresholdSchedule> diag_schedule;

  int n() const { return static_cast<int>(service.size()); }

  std::uint64_t horizon_at(double eps) const {
    if (horizon_rule == HorizonRule::fixed) return horizon_fixed;
    return static_cast<std::uint64_t>(std::llround(horizon_c / (eps * eps)));
  }
  std::uint64_t warmup_at(double eps) const {
    return static_cast<std::uint64_t>(warmup_fraction * double(horizon_at(eps)));
  }

  SystemParams params_at(double eps) const {
    return SystemParams::make(service, arrival, eps);
  }

  void validate() const {
    if (service.empty()) throw std::invalid_argument("config: no service processes");
    if (epsilons.empty()) throw std::invalid_argument("config: no epsilons");
    for (double e : epsilons)
      if (!(e > 0 && e < 1))
        throw std::invalid_argument("config: epsilon must lie in (0,1)");
    for (std::size_t i = 1; i < epsilons.size(); ++i)
      if (!(epsilons[i] < epsilons[i - 1]))
        throw std::invalid_argument("config: epsilon list must be strictly decreasing");
    if (policies.empty()) throw std::invalid_argument("config: no policies");
    if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 0.5))
      throw std::invalid_argument("config: warmup fraction must lie in [0, 0.5]");
    if (batches < 2) throw std::invalid_argument("config: need >= 2 batches");
    for (double e : epsilons) {
      if (horizon_at(e) < 10)
        throw std::invalid_argument("config: horizon too short");
      for (const auto& p : policies) (void)p.resolve(e, n());  // must be resolvable
    }
  }

  static ExperimentConfig parse_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string serialize() const;
  nlohmann::json echo_json() const;
};

struct ResultRow {
  std::string experiment;
  std::string policy_tag;
  std::string semantics;  // "level", "report-once", or "-"
  int n = 0;
  double epsilon = 0;
  int r = 0;  // resolved threshold (policy's own, else the diagnostics region)
  std::uint64_t horizon = 0;
  std::uint64_t warmup = 0;
  std::string replication;  // "0".."R-1" or "agg"
  std::uint64_t seed = 0;
  double mean_sum_q = 0;
  double ci_half = 0;
  double scaled_mean = 0;
  double zeta_half = 0;
  double t_eps = 0;
  double unused_mean = 0;
  std::optional<double> t1, t2, t3, lemma5_residual;
  std::optional<double> d_p50, d_p99, d_max;
  std::vector<double> mgf;  // aligned with the config theta grid; empty if off
  std::optional<double> mem_nonempty_frac;  // JBT only: dispatches with IDs held
  double msgs_per_arrival = 0;
  double wall_time_s = 0;
};

// --- config text format -----------------------------------------------------
//
// Line-based "key = value" records; '#' starts a comment. Lists are
// comma-separated. The exact schema is documented in the README and echoed
// into every JSON output.

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.service.clear();
  std::istringstream in(text);
  std::string line;
  int n_declared = 0;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "name") {
      cfg.name = value;
    } else if (key == "n") {
      n_declared = std::stoi(value);
    } else if (key == "service") {
      for (const auto& item : detail::split_list(value)) {
        // allow "spec x K" repetition shorthand
        auto xpos = item.rfind(" x ");
        if (xpos != std::string::npos) {
          const auto spec = ProcessSpec::parse(detail::trim(item.substr(0, xpos)), Role::service);
          int reps = std::stoi(detail::trim(item.substr(xpos + 3)));
          for (int i = 0; i < reps; ++i) cfg.service.push_back(spec);
        } else {
          cfg.service.push_back(ProcessSpec::parse(item, Role::service));
        }
      }
    } else if (key == "arrival") {
      cfg.arrival = ArrivalFamily::parse(value);
    } else if (key == "epsilons") {
      cfg.epsilons.clear();
      for (const auto& item : detail::split_list(value))
        cfg.epsilons.push_back(std::stod(item));
    } else if (key == "policies") {
      cfg.policies.clear();
      for (const auto& item : detail::split_list(value))
        cfg.policies.push_back(PolicySpec::parse(item));
    } else if (key == "horizon") {
      if (value == "c_over_eps2") {
        cfg.horizon_rule = HorizonRule::c_over_eps_sq;
      } else {
        cfg.horizon_rule = HorizonRule::fixed;
        cfg.horizon_fixed = static_cast<std::uint64_t>(std::stod(value));
      }
    } else if (key == "horizon_c") {
      cfg.horizon_c = std::stod(value);
    } else if (key == "warmup_fraction") {
      cfg.warmup_fraction = std::stod(value);
    } else if (key == "replications") {
      cfg.replications = std::stoi(value);
    } else if (key == "batches") {
      cfg.batches = std::stoi(value);
    } else if (key == "base_seed") {
      cfg.base_seed = std::stoull(value);
    } else if (key == "theta_grid") {
      cfg.theta_grid.clear();
      for (const auto& item : detail::split_list(value))
        cfg.theta_grid.push_back(std::stod(item));
    } else if (key == "buffer") {
      cfg.buffer = std::stoi(value);
    } else if (key == "crn") {
      cfg.crn = (value == "true" || value == "1" || value == "on");
    } else if (key == "diag") {
      auto parts = detail::split_list(value);
      if (parts.empty()) throw std::invalid_argument("config: empty diag schedule");
      // reuse the jbt schedule grammar: "const,r=3" / "log,K=4" / "poly,alpha=0.5"
      PolicySpec tmp = PolicySpec::parse("jbt(" + value + ")");
      cfg.diag_schedule = tmp.schedule;
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  if (n_declared != 0 && n_declared != cfg.n())
    throw std::invalid_argument("config: n does not match number of service specs");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

inline std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "name = " << name << "\n";
  os << "n = " << n() << "\n";
  os << "service = ";
  for (std::size_t i = 0; i < service.size(); ++i)
    os << (i ? ", " : "") << service[i].to_string();
  os << "\n";
  os << "arrival = " << arrival.to_string() << "\n";
  os << "epsilons = ";
  for (std::size_t i = 0; i < epsilons.size(); ++i) os << (i ? ", " : "") << epsilons[i];
  os << "\n";
  os << "policies = ";
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto& p = policies[i];
    os << (i ? ", " : "");
    switch (p.rule) {
      case Rule::random_proportional: os << "random"; break;
      case Rule::jsq: os << "jsq"; break;
      case Rule::power_of_d: os << "pod(d=" << p.d << ")"; break;
      case Rule::jbt:
        os << "jbt(" << p.schedule.to_string() << ")/" << semantics_name(p.semantics);
        break;
    }
  }
  os << "\n";
  if (horizon_rule == HorizonRule::c_over_eps_sq) {
    os << "horizon = c_over_eps2\nhorizon_c = " << horizon_c << "\n";
  } else {
    os << "horizon = " << horizon_fixed << "\n";
  }
  os << "warmup_fraction = " << warmup_fraction << "\n";
  os << "replications = " << replications << "\n";
  os << "batches = " << batches << "\n";
  os << "base_seed = " << base_seed << "\n";
  os << "theta_grid = ";
  for (std::size_t i = 0; i < theta_grid.size(); ++i) os << (i ? ", " : "") << theta_grid[i];
  os << "\n";
  if (buffer) os << "buffer = " << *buffer << "\n";
  os << "crn = " << (crn ? "true" : "false") << "\n";
  if (diag_schedule) os << "diag = " << diag_schedule->to_string() << "\n";
  return os.str();
}

inline nlohmann::json ExperimentConfig::echo_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["n"] = n();
  std::vector<std::string> svc;
  for (const auto& s : service) svc.push_back(s.to_string());
  j["service"] = svc;
  j["arrival"] = arrival.to_string();
  j["epsilons"] = epsilons;
  std::vector<std::string> pols;
  for (const auto& p : policies) pols.push_back(p.tag());
  j["policies"] = pols;
  j["horizon_rule"] =
      horizon_rule == HorizonRule::c_over_eps_sq ? "c_over_eps2" : "fixed";
  j["horizon_fixed"] = horizon_fixed;
  j["horizon_c"] = horizon_c;
  j["warmup_fraction"] = warmup_fraction;
  j["replications"] = replications;
  j["batches"] = batches;
  j["base_seed"] = base_seed;
  j["theta_grid"] = theta_grid;
  if (buffer) j["buffer"] = *buffer;
  j["crn"] = crn;
  if (diag_schedule) j["diag"] = diag_schedule->to_string();
  j["finite_support"] = true;
  bool exp_tail = arrival.kind == Family::truncated_poisson ||
                  arrival.kind == Family::geometric_truncated;
  for (const auto& s : service) exp_tail = exp_tail || s.exponential_tail_family();
  j["exponential_tail_families"] = exp_tail;
  j["seed_scheme"] =
      "stream_seed = derive_seed(base_seed, {stream_id, policy (or 0xC0FFEE "
      "for CRN-shared arrival/service), epsilon_index, replication}); "
      "stream ids: 0 row tag, 1 arrival, 2 service, 3 routing, 4 diagnostics";
  return j;
}

// --- single replication ------------------------------------------------------

struct ReplicationResult {
  StatsReport stats;
  std::optional<CollapseSummary> collapse;
  CollapseDiagnostics diagnostics{CollapseDiagnostics::default_theta_grid(), 1, 0};
  std::optional<double> mem_nonempty_frac;
  double msgs_per_arrival = 0;
  double wall_time_s = 0;
};

namespace detail {

struct StreamSet {
  RngStream arrivals, services, routing, diag;
  std::uint64_t tag;
};

inline StreamSet make_streams(const ExperimentConfig& cfg, std::size_t policy_idx,
                              std::size_t eps_idx, int replication) {
  const std::uint64_t p_shared = cfg.crn ? kCrnShared : std::uint64_t(policy_idx);
  const std::uint64_t p = std::uint64_t(policy_idx);
  const std::uint64_t e = std::uint64_t(eps_idx);
  const std::uint64_t r = std::uint64_t(replication);
  return StreamSet{
      RngStream(derive_seed(cfg.base_seed, {1, p_shared, e, r})),
      RngStream(derive_seed(cfg.base_seed, {2, p_shared, e, r})),
      RngStream(derive_seed(cfg.base_seed, {3, p, e, r})),
      RngStream(derive_seed(cfg.base_seed, {4, p, e, r})),
      derive_seed(cfg.base_seed, {0, p, e, r})};
}

}  // namespace detail

// Diagnostics region for a policy at eps: the config's diag schedule wins;
// otherwise a JBT policy is measured against its own threshold; other
// policies record no distances.
inline std::optional<int> diag_region_r(const ExperimentConfig& cfg,
                                        const PolicySpec& policy, double eps) {
  if (cfg.diag_schedule) return threshold_at(*cfg.diag_schedule, eps);
  if (policy.rule == Rule::jbt) return threshold_at(policy.schedule, eps);
  return std::nullopt;
}

inline ReplicationResult run_replication(const ExperimentConfig& cfg,
                                         std::size_t policy_idx, std::size_t eps_idx,
                                         int replication) {
  const auto t0 = std::chrono::steady_clock::now();
  const double eps = cfg.epsilons[eps_idx];
  const PolicySpec& pspec = cfg.policies[policy_idx];
  const SystemParams params = cfg.params_at(eps);
  const ResolvedPolicy policy = pspec.resolve(eps, cfg.n());
  const std::uint64_t horizon = cfg.horizon_at(eps);
  const std::uint64_t warmup = cfg.warmup_at(eps);

  auto streams = detail::make_streams(cfg, policy_idx, eps_idx, replication);
  Stepper stepper(params, policy, streams.arrivals, streams.services, streams.routing);
  SystemState state = reset(params, policy.r, policy.semantics);
  EstimatorState estimator(warmup, horizon, cfg.batches, params.homogeneous());

  const std::optional<int> diag_r = diag_region_r(cfg, pspec, eps);
  CollapseDiagnostics diag(cfg.theta_grid, 1u << 16, streams.diag.seed());

  std::uint64_t arrival_events = 0, reports = 0, mem_nonempty = 0;
  std::vector<int> q_prev(params.n());

  for (std::uint64_t t = 0; t < horizon; ++t) {
    q_prev = state.q;
    const MemoryMask mem_before = state.memory;
    const SlotObservation& obs = stepper.step(state);
    estimator.accumulate(obs, q_prev);
    if (obs.a_total > 0) {
      ++arrival_events;
      if (mem_before != 0) ++mem_nonempty;
    }
    reports += obs.report_msgs;
    if (diag_r && t >= warmup)
      diag.record_distance_sq(dist_sq_region_int(obs.q_next, *diag_r));
  }

  ReplicationResult out;
  out.stats = estimator.finalize(eps);
  if (diag_r) {
    out.collapse = diag.summarize();
    out.diagnostics = std::move(diag);
  }
  switch (policy.rule) {
    case Rule::power_of_d:
      out.msgs_per_arrival = 2.0 * policy.d;
      break;
    case Rule::jsq:
      out.msgs_per_arrival = 2.0 * params.n();
      break;
    case Rule::random_proportional:
      out.msgs_per_arrival = 0.0;
      break;
    case Rule::jbt:
      out.msgs_per_arrival =
          arrival_events ? double(reports) / double(arrival_events) : 0.0;
      out.mem_nonempty_frac =
          arrival_events ? double(mem_nonempty) / double(arrival_events) : 1.0;
      break;
  }
  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// --- experiment runner -------------------------------------------------------

struct RunError : std::runtime_error {
  RunError(const std::string& what, std::vector<ResultRow> partial)
      : std::runtime_error(what), partial_rows(std::move(partial)) {}
  std::vector<ResultRow> partial_rows;
};

inline std::vector<ResultRow> run(const ExperimentConfig& cfg, int workers = 0) {
  cfg.validate();
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 0) workers = 1;

  struct Job {
    std::size_t policy_idx, eps_idx;
    int replication;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < cfg.policies.size(); ++p)
    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e)
      for (int rep = 0; rep < cfg.replications; ++rep) jobs.push_back({p, e, rep});

  std::vector<std::optional<ReplicationResult>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error.empty()) return;
      }
      try {
        results[i] = run_replication(cfg, jobs[i].policy_idx, jobs[i].eps_idx,
                                     jobs[i].replication);
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (first_error.empty())
          first_error = "replication failed at (policy=" +
                        cfg.policies[jobs[i].policy_idx].tag() +
                        ", eps=" + std::to_string(cfg.epsilons[jobs[i].eps_idx]) +
                        ", rep=" + std::to_string(jobs[i].replication) +
                        "): " + ex.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  auto make_row = [&](std::size_t p, std::size_t e, const std::string& rep_label,
                      std::uint64_t seed) {
    ResultRow row;
    row.experiment = cfg.name;
    row.policy_tag = cfg.policies[p].tag();
    row.semantics = cfg.policies[p].rule == Rule::jbt
                        ? semantics_name(cfg.policies[p].semantics)
                        : "-";
    row.n = cfg.n();
    row.epsilon = cfg.epsilons[e];
    const ResolvedPolicy rp = cfg.policies[p].resolve(cfg.epsilons[e], cfg.n());
    const auto dr = diag_region_r(cfg, cfg.policies[p], cfg.epsilons[e]);
    row.r = cfg.policies[p].rule == Rule::jbt ? rp.r : dr.value_or(0);
    row.horizon = cfg.horizon_at(cfg.epsilons[e]);
    row.warmup = cfg.warmup_at(cfg.epsilons[e]);
    row.replication = rep_label;
    row.seed = seed;
    row.zeta_half = 0.5 * zeta(cfg.params_at(cfg.epsilons[e]));
    return row;
  };

  std::vector<ResultRow> rows;
  auto collect = [&]() {
    for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
      for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
        std::vector<const ReplicationResult*> reps;
        for (int rep = 0; rep < cfg.replications; ++rep) {
          const std::size_t idx =
              (p * cfg.epsilons.size() + e) * cfg.replications + rep;
          if (!results[idx]) return;  // aborted run: keep whatever is complete
          const ReplicationResult& rr = *results[idx];
          reps.push_back(&rr);
          ResultRow row = make_row(p, e, std::to_string(rep),
                                   detail::make_streams(cfg, p, e, rep).tag);
          row.mean_sum_q = rr.stats.sum_q.mean;
          row.ci_half = rr.stats.sum_q.ci_half;
          row.scaled_mean = rr.stats.scaled_mean;
          row.t_eps = rr.stats.t_eps.mean;
          row.unused_mean = rr.stats.unused.mean;
          row.t1 = rr.stats.t1;
          row.t2 = rr.stats.t2;
          row.t3 = rr.stats.t3;
          if (rr.stats.lemma5_residual) row.lemma5_residual = rr.stats.lemma5_residual->mean;
          if (rr.collapse) {
            row.d_p50 = rr.collapse->p50;
            row.d_p99 = rr.collapse->p99;
            row.d_max = rr.collapse->max;
            row.mgf = rr.collapse->mgf;
          }
          row.mem_nonempty_frac = rr.mem_nonempty_frac;
          row.msgs_per_arrival = rr.msgs_per_arrival;
          row.wall_time_s = rr.wall_time_s;
          rows.push_back(std::move(row));
        }
        // aggregate row over replications
        ResultRow agg = make_row(p, e, "agg", cfg.base_seed);
        auto mean_of = [&](auto&& get) {
          double s = 0;
          for (auto* rr : reps) s += get(*rr);
          return s / double(reps.size());
        };
        agg.mean_sum_q = mean_of([](const ReplicationResult& r) { return r.stats.sum_q.mean; });
        if (reps.size() >= 2) {
          std::vector<double> means;
          for (auto* rr : reps) means.push_back(rr->stats.sum_q.mean);
          Estimate est = batch_means_ci(means);
          agg.ci_half = est.ci_half;
        }
        agg.scaled_mean = cfg.epsilons[e] * agg.mean_sum_q;
        agg.t_eps = mean_of([](const ReplicationResult& r) { return r.stats.t_eps.mean; });
        agg.unused_mean = mean_of([](const ReplicationResult& r) { return r.stats.unused.mean; });
        if (reps.front()->stats.t1) {
          agg.t1 = mean_of([](const ReplicationResult& r) { return *r.stats.t1; });
          agg.t2 = mean_of([](const ReplicationResult& r) { return *r.stats.t2; });
          agg.t3 = mean_of([](const ReplicationResult& r) { return *r.stats.t3; });
          agg.lemma5_residual =
              mean_of([](const ReplicationResult& r) { return r.stats.lemma5_residual->mean; });
        }
        if (reps.front()->collapse) {
          CollapseDiagnostics merged = reps.front()->diagnostics;
          for (std::size_t i = 1; i < reps.size(); ++i)
            merged.merge(reps[i]->diagnostics);
          CollapseSummary s = merged.summarize();
          agg.d_p50 = s.p50;
          agg.d_p99 = s.p99;
          agg.d_max = s.max;
          agg.mgf = s.mgf;
        }
        if (reps.front()->mem_nonempty_frac)
          agg.mem_nonempty_frac =
              mean_of([](const ReplicationResult& r) { return *r.mem_nonempty_frac; });
        agg.msgs_per_arrival =
            mean_of([](const ReplicationResult& r) { return r.msgs_per_arrival; });
        agg.wall_time_s = 0;
        for (auto* rr : reps) agg.wall_time_s += rr->wall_time_s;
        rows.push_back(std::move(agg));
      }
    }
  };
  collect();

  if (!first_error.empty()) throw RunError(first_error, std::move(rows));
  return rows;
}

// --- comparisons --------------------------------------------------------------

enum class Verdict { a_below_b, overlap, a_above_b };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::a_below_b: return "a_below_b";
    case Verdict::overlap: return "overlap";
    case Verdict::a_above_b: return "a_above_b";
  }
  return "?";
}

struct Comparison {
  Verdict verdict = Verdict::overlap;
  WelchInterval interval;  // 95% Welch CI for scaled_mean(a) - scaled_mean(b)
  int n_a = 0, n_b = 0;
};

inline std::vector<double> scaled_means_of(const std::vector<ResultRow>& rows,
                                           const std::string& policy_tag,
                                           double epsilon) {
  std::vector<double> v;
  for (const auto& row : rows)
    if (row.policy_tag == policy_tag && row.replication != "agg" &&
        std::abs(row.epsilon - epsilon) < 1e-12)
      v.push_back(row.scaled_mean);
  return v;
}

// Strict ordering verdict from the 95% Welch interval of the difference of
// per-replication scaled means.
inline Comparison compare(const std::vector<ResultRow>& rows,
                          const std::string& policy_a, const std::string& policy_b,
                          double epsilon) {
  const auto a = scaled_means_of(rows, policy_a, epsilon);
  const auto b = scaled_means_of(rows, policy_b, epsilon);
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("compare: need >= 2 replications per side (" +
                                policy_a + ": " + std::to_string(a.size()) + ", " +
                                policy_b + ": " + std::to_string(b.size()) + ")");
  Comparison c;
  c.interval = welch_interval(a, b);
  c.n_a = static_cast<int>(a.size());
  c.n_b = static_cast<int>(b.size());
  if (c.interval.hi() < 0)
    c.verdict = Verdict::a_below_b;
  else if (c.interval.lo() > 0)
    c.verdict = Verdict::a_above_b;
  else
    c.verdict = Verdict::overlap;
  return c;
}

// --- emission ------------------------------------------------------------------

inline std::vector<std::string> csv_header(const std::vector<double>& theta_grid) {
  std::vector<std::string> h = {
      "experiment", "policy",     "semantics",  "N",
      "epsilon",    "r",          "horizon",    "warmup",
      "replication", "seed",      "mean_sum_q", "ci_half",
      "scaled_mean", "zeta_half", "t_eps",      "unused_mean",
      "T1",         "T2",         "T3",         "lemma5_residual",
      "d_p50",      "d_p99",      "d_max"};
  for (double th : theta_grid) {
    std::ostringstream os;
    os << "mgf_" << th;
    h.push_back(os.str());
  }
  h.push_back("mem_nonempty_frac");
  h.push_back("msgs_per_arrival");
  h.push_back("wall_time_s");
  return h;
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

}  // namespace detail

inline std::vector<std::string> csv_fields(const ResultRow& row,
                                           std::size_t n_theta) {
  std::vector<std::string> f = {
      row.experiment,
      row.policy_tag,
      row.semantics,
      std::to_string(row.n),
      detail::fmt_double(row.epsilon),
      std::to_string(row.r),
      std::to_string(row.horizon),
      std::to_string(row.warmup),
      row.replication,
      std::to_string(row.seed),
      detail::fmt_double(row.mean_sum_q),
      detail::fmt_double(row.ci_half),
      detail::fmt_double(row.scaled_mean),
      detail::fmt_double(row.zeta_half),
      detail::fmt_double(row.t_eps),
      detail::fmt_double(row.unused_mean),
      detail::fmt_opt(row.t1),
      detail::fmt_opt(row.t2),
      detail::fmt_opt(row.t3),
      detail::fmt_opt(row.lemma5_residual),
      detail::fmt_opt(row.d_p50),
      detail::fmt_opt(row.d_p99),
      detail::fmt_opt(row.d_max)};
  for (std::size_t i = 0; i < n_theta; ++i)
    f.push_back(i < row.mgf.size() ? detail::fmt_double(row.mgf[i]) : std::string());
  f.push_back(detail::fmt_opt(row.mem_nonempty_frac));
  f.push_back(detail::fmt_double(row.msgs_per_arrival));
  f.push_back(detail::fmt_double(row.wall_time_s));
  return f;
}

inline void emit_csv(const std::vector<ResultRow>& rows,
                     const std::vector<double>& theta_grid, std::ostream& os,
                     const std::string& status = "ok") {
  auto header = csv_header(theta_grid);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& row : rows) {
    auto fields = csv_fields(row, theta_grid.size());
    for (std::size_t i = 0; i < fields.size(); ++i)
      os << (i ? "," : "") << detail::csv_quote(fields[i]);
    os << "\n";
  }
  if (status != "ok") os << "# status: " << status << "\n";
}

inline nlohmann::json row_json(const ResultRow& row,
                               const std::vector<double>& theta_grid) {
  nlohmann::json j;
  j["experiment"] = row.experiment;
  j["policy"] = row.policy_tag;
  j["semantics"] = row.semantics;
  j["N"] = row.n;
  j["epsilon"] = row.epsilon;
  j["r"] = row.r;
  j["horizon"] = row.horizon;
  j["warmup"] = row.warmup;
  j["replication"] = row.replication;
  j["seed"] = row.seed;
  j["mean_sum_q"] = row.mean_sum_q;
  j["ci_half"] = row.ci_half;
  j["scaled_mean"] = row.scaled_mean;
  j["zeta_half"] = row.zeta_half;
  j["t_eps"] = row.t_eps;
  j["unused_mean"] = row.unused_mean;
  auto put_opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put_opt("T1", row.t1);
  put_opt("T2", row.t2);
  put_opt("T3", row.t3);
  put_opt("lemma5_residual", row.lemma5_residual);
  put_opt("d_p50", row.d_p50);
  put_opt("d_p99", row.d_p99);
  put_opt("d_max", row.d_max);
  if (!row.mgf.empty()) {
    nlohmann::json mg;
    for (std::size_t i = 0; i < row.mgf.size() && i < theta_grid.size(); ++i)
      mg[detail::fmt_double(theta_grid[i])] = row.mgf[i];
    j["mgf"] = mg;
  }
  put_opt("mem_nonempty_frac", row.mem_nonempty_frac);
  j["msgs_per_arrival"] = row.msgs_per_arrival;
  j["wall_time_s"] = row.wall_time_s;
  return j;
}

inline ResultRow row_from_json(const nlohmann::json& j,
                               const std::vector<double>& theta_grid) {
  ResultRow row;
  row.experiment = j.at("experiment");
  row.policy_tag = j.at("policy");
  row.semantics = j.at("semantics");
  row.n = j.at("N");
  row.epsilon = j.at("epsilon");
  row.r = j.at("r");
  row.horizon = j.at("horizon");
  row.warmup = j.at("warmup");
  row.replication = j.at("replication");
  row.seed = j.at("seed");
  row.mean_sum_q = j.at("mean_sum_q");
  row.ci_half = j.at("ci_half");
  row.scaled_mean = j.at("scaled_mean");
  row.zeta_half = j.at("zeta_half");
  row.t_eps = j.at("t_eps");
  row.unused_mean = j.at("unused_mean");
  auto get_opt = [&](const char* key) -> std::optional<double> {
    if (j.contains(key)) return j.at(key).get<double>();
    return std::nullopt;
  };
  row.t1 = get_opt("T1");
  row.t2 = get_opt("T2");
  row.t3 = get_opt("T3");
  row.lemma5_residual = get_opt("lemma5_residual");
  row.d_p50 = get_opt("d_p50");
  row.d_p99 = get_opt("d_p99");
  row.d_max = get_opt("d_max");
  row.mem_nonempty_frac = get_opt("mem_nonempty_frac");
  if (j.contains("mgf")) {
    for (double th : theta_grid)
      row.mgf.push_back(j.at("mgf").at(detail::fmt_double(th)).get<double>());
  }
  row.msgs_per_arrival = j.at("msgs_per_arrival");
  row.wall_time_s = j.at("wall_time_s");
  return row;
}

inline void emit(const std::vector<ResultRow>& rows, const ExperimentConfig& cfg,
                 const std::string& format, const std::string& path,
                 const std::string& status = "ok") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  if (format == "csv") {
    emit_csv(rows, cfg.theta_grid, out, status);
  } else if (format == "json") {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config"] = cfg.echo_json();
    j["status"] = status;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows) arr.push_back(row_json(row, cfg.theta_grid));
    j["rows"] = arr;
    out << j.dump(2) << "\n";
  } else {
    throw std::invalid_argument("unknown output format '" + format + "'");
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Debug trace of SlotObservation records for the first replication of the
// first (policy, epsilon) pair. Columns: slot, a_total, dest, then per-server
// A/S/U/Q_next blocks, then report_msgs.
inline void trace_run(const ExperimentConfig& cfg, std::ostream& os,
                      std::uint64_t max_slots = 10'000) {
  const double eps = cfg.epsilons.front();
  const SystemParams params = cfg.params_at(eps);
  const ResolvedPolicy policy = cfg.policies.front().resolve(eps, cfg.n());
  auto streams = detail::make_streams(cfg, 0, 0, 0);
  Stepper stepper(params, policy, streams.arrivals, streams.services, streams.routing);
  SystemState state = reset(params, policy.r, policy.semantics);
  os << "slot,a_total,dest";
  for (const char* blk : {"A", "S", "U", "Q_next"})
    for (int i = 0; i < params.n(); ++i) os << ',' << blk << (i + 1);
  os << ",report_msgs\n";
  const std::uint64_t slots = std::min<std::uint64_t>(max_slots, cfg.horizon_at(eps));
  for (std::uint64_t t = 0; t < slots; ++t) {
    const SlotObservation& obs = stepper.step(state);
    os << t << ',' << obs.a_total << ',' << (obs.dest >= 0 ? obs.dest + 1 : 0);
    for (const auto* vec : {&obs.a, &obs.s, &obs.u, &obs.q_next})
      for (int v : *vec) os << ',' << v;
    os << ',' << obs.report_msgs << "\n";
  }
}

// --- bundled experiments --------------------------------------------------------

// E1: lower-bound / optimality sweep at desk scale.
inline ExperimentConfig e1_config(int n, int batch_a) {
  ExperimentConfig cfg;
  cfg.name = "e1-n" + std::to_string(n);
  cfg.service.assign(n, ProcessSpec::bernoulli(0.5, Role::service));
  cfg.arrival = ArrivalFamily{Family::bernoulli_batch, batch_a};
  cfg.epsilons = {0.3, 0.2, 0.1, 0.05};
  cfg.policies = {PolicySpec::jsq(),
                  PolicySpec::jbt(ThresholdSchedule::logarithmic(4.0)),
                  PolicySpec::jiq(),
                  PolicySpec::random_proportional(),
                  PolicySpec::jbt(ThresholdSchedule::polynomial(0.5))};
  cfg.horizon_rule = ExperimentConfig::HorizonRule::c_over_eps_sq;
  cfg.horizon_c = 1e5;
  cfg.warmup_fraction = 0.2;
  cfg.replications = 10;
  cfg.base_seed = 20250810;
  return cfg;
}

// E2: collapse diagnostic along the same sweep; random routing is measured
// against the same logarithmic region as JBT.
inline ExperimentConfig e2_config(int batch_a) {
  ExperimentConfig cfg = e1_config(2, batch_a);
  cfg.name = "e2";
  cfg.policies = {PolicySpec::jbt(ThresholdSchedule::logarithmic(4.0)),
                  PolicySpec::random_proportional()};
  cfg.diag_schedule = ThresholdSchedule::logarithmic(4.0);
  cfg.base_seed = 20250811;
  return cfg;
}

// E3 / oracle cross-check config: small-chain regime with a plain Bernoulli
// arrival so the truncated chain is tiny and exact.
inline ExperimentConfig oracle_config(std::vector<double> epsilons = {0.3, 0.2},
                                      std::uint64_t horizon = 5'000'000,
                                      int replications = 10) {
  ExperimentConfig cfg;
  cfg.name = "e3-oracle";
  cfg.service.assign(2, ProcessSpec::bernoulli(0.5, Role::service));
  cfg.arrival = ArrivalFamily{Family::bernoulli, 0};
  cfg.epsilons = std::move(epsilons);
  cfg.policies = {PolicySpec::jiq(), PolicySpec::jbt(ThresholdSchedule::constant(3)),
                  PolicySpec::jsq(), PolicySpec::random_proportional()};
  cfg.horizon_rule = ExperimentConfig::HorizonRule::fixed;
  cfg.horizon_fixed = horizon;
  cfg.replications = replications;
  cfg.buffer = 50;
  cfg.base_seed = 20250812;
  return cfg;
}

}  // namespace jbt
