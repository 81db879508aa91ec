// Acceptance suite: runs every acceptance criterion at its stated scale and
// tolerance and prints one PASS/FAIL line per criterion. Exit code is the
// number of failed criteria.
//
// Usage: acceptance [--quick]
//   --quick   development mode: reduced horizons/replications (clearly
//             labelled in the output; verdicts are then only indicative)

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "jbt/exactchain.hpp"
#include "jbt/geometry_check.hpp"
#include "jbt/harness.hpp"

using namespace jbt;

namespace {

struct Suite {
  int failures = 0;
  void report(int idx, const std::string& name, bool ok, const std::string& detail) {
    std::cout << "[" << idx << "/9] " << (ok ? "PASS" : "FAIL") << " " << name;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++failures;
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// ---- shared fixtures --------------------------------------------------------

// E1 arrival batch: a = N keeps the batch-to-capacity ratio of the bundled
// sweep fixed across N (calibration notes in the README).
constexpr int kBatchN2 = 2;
constexpr int kBatchN4 = 4;

struct OracleCell {
  double eps = 0;
  std::string policy;
  double unused = 0, residual = 0, t2 = 0, t2_expected = 0, sum_q = 0;
};

std::vector<OracleCell> oracle_cells() {
  std::vector<OracleCell> out;
  for (double eps : {0.3, 0.2}) {
    auto params = SystemParams::make(
        std::vector<ProcessSpec>(2, ProcessSpec::bernoulli(0.5, Role::service)),
        ArrivalFamily{Family::bernoulli, 0}, eps);
    const double lambda = params.lambda_sigma();
    for (const auto& spec :
         {PolicySpec::jiq(), PolicySpec::jbt(ThresholdSchedule::constant(3)),
          PolicySpec::jsq(), PolicySpec::random_proportional()}) {
      auto chain = build_chain(params, spec.resolve(eps, 2), 50, MemorySemantics::level);
      auto dist = stationary(chain);
      OracleCell cell;
      cell.eps = eps;
      cell.policy = spec.tag();
      cell.unused = exact_expectation(dist, chain, Functional::unused_l1);
      const double t1 = exact_expectation(dist, chain, Functional::T1);
      cell.t2 = exact_expectation(dist, chain, Functional::T2);
      const double t3 = exact_expectation(dist, chain, Functional::T3);
      cell.residual = exact_expectation(dist, chain, Functional::lhs_lemma5) -
                      (t1 + cell.t2 - t3);
      cell.t2_expected =
          (2 - 1) * (params.sigma_sigma_sq() + lambda * lambda + params.nu_sigma_sq());
      cell.sum_q = exact_expectation(dist, chain, Functional::sum_q);
      out.push_back(cell);
    }
  }
  return out;
}

const ResultRow& agg_row(const std::vector<ResultRow>& rows, const std::string& policy,
                         double eps) {
  for (const auto& r : rows)
    if (r.policy_tag == policy && r.replication == "agg" &&
        std::abs(r.epsilon - eps) < 1e-12)
      return r;
  throw std::runtime_error("missing aggregate row for " + policy + " at eps " +
                           fmt(eps));
}

Estimate over_reps(const std::vector<ResultRow>& rows, const std::string& policy,
                   double eps, double ResultRow::*field) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.policy_tag == policy && r.replication != "agg" &&
        std::abs(r.epsilon - eps) < 1e-12)
      v.push_back(r.*field);
  return batch_means_ci(v);
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--quick") == 0) quick = true;
  if (quick)
    std::cout << "!! --quick mode: reduced horizons, verdicts indicative only\n";

  const double hc = quick ? 4e3 : 1e5;    // horizon constant c in c/eps^2
  const int reps = quick ? 3 : 10;
  const std::uint64_t c2_horizon = quick ? 200'000 : 5'000'000;

  Suite suite;

  // ------------------------------------------------------------------ 1 ----
  try {
    auto cells = oracle_cells();
    double w_unused = 0, w_res = 0, w_t2 = 0;
    for (const auto& c : cells) {
      w_unused = std::max(w_unused, std::abs(c.unused - c.eps));
      w_res = std::max(w_res, std::abs(c.residual));
      if (c.policy == "random") w_t2 = std::max(w_t2, std::abs(c.t2 - c.t2_expected));
    }
    const bool ok = w_unused <= 1e-6 && w_res <= 1e-6 && w_t2 <= 1e-6;
    suite.report(1, "oracle identities (E||U||=eps, pairwise drift, T2 form)", ok,
                 "max|E||U||-eps|=" + fmt(w_unused) + " max|residual|=" + fmt(w_res) +
                     " max|T2-form|=" + fmt(w_t2));
  } catch (const std::exception& ex) {
    suite.report(1, "oracle identities", false, ex.what());
  }

  // ------------------------------------------------------------------ 2 ----
  std::vector<ResultRow> oracle_rows;
  try {
    auto cfg = oracle_config({0.3, 0.2}, c2_horizon, reps);
    oracle_rows = run(cfg);
    auto cells = oracle_cells();
    bool ok = true;
    std::string worst;
    double worst_ratio = 0;
    for (const auto& cell : cells) {
      auto chain_params = cfg.params_at(cell.eps);
      auto chain = build_chain(
          chain_params,
          PolicySpec::parse(cell.policy == "JIQ/level" ? "jiq" : cell.policy)
              .resolve(cell.eps, 2),
          50, MemorySemantics::level);
      auto dist = stationary(chain);
      struct Check {
        const char* name;
        double ResultRow::*field;
        Functional fn;
      } checks[] = {{"sum_q", &ResultRow::mean_sum_q, Functional::sum_q},
                    {"t_eps", &ResultRow::t_eps, Functional::t_eps},
                    {"unused", &ResultRow::unused_mean, Functional::unused_l1}};
      for (const auto& chk : checks) {
        const double exact = exact_expectation(dist, chain, chk.fn);
        Estimate est = over_reps(oracle_rows, cell.policy, cell.eps, chk.field);
        const double err = std::abs(est.mean - exact);
        const double band = 3 * std::max(est.ci_half, 1e-12);
        if (err / band > worst_ratio) {
          worst_ratio = err / band;
          worst = std::string(chk.name) + "@" + cell.policy + ",eps=" + fmt(cell.eps) +
                  ": |" + fmt(est.mean) + "-" + fmt(exact) + "| vs 3ci=" + fmt(band);
        }
        ok = ok && err <= band;
      }
    }
    suite.report(2, "simulator-oracle equivalence (3 CI half-widths)", ok,
                 "worst " + worst);
  } catch (const std::exception& ex) {
    suite.report(2, "simulator-oracle equivalence", false, ex.what());
  }

  // --------------------------------------------------------- E1 / E2 runs ---
  auto e1n2 = e1_config(2, kBatchN2);
  e1n2.horizon_c = hc;
  e1n2.replications = reps;
  auto e1n4 = e1_config(4, kBatchN4);
  e1n4.horizon_c = hc;
  e1n4.replications = reps;

  std::vector<ResultRow> rows_n2, rows_n4, rows_e2;
  try {
    rows_n2 = run(e1n2);
    rows_n4 = run(e1n4);
    auto e2 = e2_config(kBatchN2);
    e2.horizon_c = hc;
    e2.replications = reps;
    rows_e2 = run(e2);
  } catch (const RunError& err) {
    std::cout << "experiment run failed: " << err.what() << std::endl;
  }

  const std::vector<double> eps_list = e1n2.epsilons;
  const char* kJsq = "jsq";
  const char* kLog = "jbt(log,K=4)/level";
  const char* kJiq = "JIQ/level";
  const char* kRnd = "random";
  const char* kPoly = "jbt(poly,alpha=0.5)/level";

  // ------------------------------------------------------------------ 3 ----
  try {
    bool ok = true;
    std::string worst;
    double worst_margin = 1e300;
    for (const auto* rows : {&rows_n2, &rows_n4}) {
      for (const auto& row : *rows) {
        if (row.replication != "agg") continue;
        const double s_max = 1.0;  // Bernoulli(0.5) services
        const double bound = row.zeta_half * (1 - 0.05) - s_max * row.epsilon;
        const double margin = row.scaled_mean - bound;
        if (margin < worst_margin) {
          worst_margin = margin;
          worst = row.policy_tag + ",N=" + std::to_string(row.n) +
                  ",eps=" + fmt(row.epsilon) + ": scaled=" + fmt(row.scaled_mean) +
                  " bound=" + fmt(bound);
        }
        ok = ok && margin >= 0;
      }
    }
    suite.report(3, "resource-pooled lower bound on every E1 cell", ok,
                 "tightest margin " + fmt(worst_margin) + " at " + worst);
  } catch (const std::exception& ex) {
    suite.report(3, "resource-pooled lower bound", false, ex.what());
  }

  // ------------------------------------------------------------------ 4 ----
  try {
    std::ostringstream detail;
    bool mono = true;
    double prev = 1e300;
    detail << "gap(eps)=";
    for (double eps : eps_list) {
      const auto& row = agg_row(rows_n2, kLog, eps);
      const double gap = std::abs(row.scaled_mean - row.zeta_half);
      detail << fmt(gap) << (eps == eps_list.back() ? "" : ",");
      mono = mono && gap <= prev + 1e-12;
      prev = gap;
    }
    auto cmp = compare(rows_n2, kLog, kJsq, 0.05);
    const bool near_jsq = cmp.verdict == Verdict::overlap;
    detail << "; log-vs-jsq@0.05 diff CI [" << fmt(cmp.interval.lo()) << ","
           << fmt(cmp.interval.hi()) << "] -> " << verdict_name(cmp.verdict);
    suite.report(4, "sufficient condition: log threshold tracks the pooled bound",
                 mono && near_jsq, detail.str());
  } catch (const std::exception& ex) {
    suite.report(4, "sufficient condition", false, ex.what());
  }

  // ------------------------------------------------------------------ 5 ----
  try {
    bool ok = true;
    std::ostringstream detail;
    for (const auto* rows : {&rows_n2, &rows_n4}) {
      const int n = rows == &rows_n2 ? 2 : 4;
      auto c1 = compare(*rows, kJsq, kJiq, 0.05);
      auto c2 = compare(*rows, kJiq, kRnd, 0.05);
      ok = ok && c1.verdict == Verdict::a_below_b && c2.verdict == Verdict::a_below_b;
      detail << "N=" << n << ": jsq<JIQ=" << verdict_name(c1.verdict)
             << ", JIQ<random=" << verdict_name(c2.verdict) << "; ";
    }
    suite.report(5, "necessary condition: constant threshold strictly between", ok,
                 detail.str());
  } catch (const std::exception& ex) {
    suite.report(5, "necessary condition (constant)", false, ex.what());
  }

  // ------------------------------------------------------------------ 6 ----
  try {
    bool overlap_ok = true, mem_ok = true;
    std::ostringstream detail;
    for (const auto* rows : {&rows_n2, &rows_n4}) {
      const int n = rows == &rows_n2 ? 2 : 4;
      for (double eps : eps_list) {
        auto cmp = compare(*rows, kPoly, kRnd, eps);
        if (cmp.verdict != Verdict::overlap) {
          overlap_ok = false;
          detail << "N=" << n << ",eps=" << fmt(eps) << ": "
                 << verdict_name(cmp.verdict) << " diff=" << fmt(cmp.interval.diff)
                 << "; ";
        }
        if (eps <= 0.1 + 1e-12) {
          const auto& row = agg_row(*rows, kPoly, eps);
          if (!row.mem_nonempty_frac || *row.mem_nonempty_frac < 0.999) {
            mem_ok = false;
            detail << "N=" << n << ",eps=" << fmt(eps) << ": mem_nonempty="
                   << (row.mem_nonempty_frac ? fmt(*row.mem_nonempty_frac) : "?")
                   << "; ";
          }
        }
      }
    }
    if (overlap_ok && mem_ok) detail << "poly ~ random at every swept eps";
    suite.report(6, "necessary condition: polynomial threshold degenerates to random",
                 overlap_ok && mem_ok, detail.str());
  } catch (const std::exception& ex) {
    suite.report(6, "necessary condition (polynomial)", false, ex.what());
  }

  // ------------------------------------------------------------------ 7 ----
  try {
    const double eps_hi = 0.3, eps_lo = 0.05;
    const auto& log_hi = agg_row(rows_e2, kLog, eps_hi);
    const auto& log_lo = agg_row(rows_e2, kLog, eps_lo);
    const auto& rnd_hi = agg_row(rows_e2, kRnd, eps_hi);
    const auto& rnd_lo = agg_row(rows_e2, kRnd, eps_lo);

    bool mgf_ok = true;
    std::ostringstream detail;
    for (std::size_t i = 0; i < log_hi.mgf.size(); ++i) {
      const double ratio = log_lo.mgf[i] / log_hi.mgf[i];
      mgf_ok = mgf_ok && ratio <= 2.0;
      detail << "mgf(" << e1n2.theta_grid[i] << ") x" << fmt(ratio) << " ";
    }
    bool p99_ok = true;
    for (double eps : eps_list) {
      const auto& row = agg_row(rows_e2, kLog, eps);
      if (*row.d_p99 > 1.25 * *log_hi.d_p99 + 1e-12) p99_ok = false;
    }
    detail << "| log d_p99 " << fmt(*log_hi.d_p99) << "->" << fmt(*log_lo.d_p99);
    const bool rnd_ok = *rnd_lo.d_p99 >= 2.0 * *rnd_hi.d_p99;
    detail << " | random d_p99 " << fmt(*rnd_hi.d_p99) << "->" << fmt(*rnd_lo.d_p99);
    suite.report(7, "state-space collapse diagnostic", mgf_ok && p99_ok && rnd_ok,
                 detail.str());
  } catch (const std::exception& ex) {
    suite.report(7, "state-space collapse diagnostic", false, ex.what());
  }

  // ------------------------------------------------------------------ 8 ----
  try {
    auto rep = geometry_check(1000, 0x6e0);
    suite.report(8, "geometry closed forms vs numeric nearest-point oracle",
                 rep.passed(1e-9), rep.to_string());
  } catch (const std::exception& ex) {
    suite.report(8, "geometry check", false, ex.what());
  }

  // ------------------------------------------------------------------ 9 ----
  try {
    std::vector<double> xs, ys;
    for (double eps : {0.3, 0.2, 0.1}) {
      auto params = SystemParams::make(
          std::vector<ProcessSpec>(2, ProcessSpec::bernoulli(0.5, Role::service)),
          ArrivalFamily{Family::bernoulli, 0}, eps);
      auto chain = build_chain(params, PolicySpec::jiq().resolve(eps, 2), 50,
                               MemorySemantics::level);
      auto dist = stationary(chain);
      xs.push_back(std::log(eps));
      ys.push_back(std::log(exact_expectation(dist, chain, Functional::sum_q)));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;
    suite.report(9, "moment scaling: log-log slope of exact E[sumQ] vs eps",
                 slope >= -1.3 && slope <= -0.7, "slope=" + fmt(slope));
  } catch (const std::exception& ex) {
    suite.report(9, "moment scaling", false, ex.what());
  }

  std::cout << (suite.failures == 0 ? "ALL CRITERIA PASSED"
                                    : std::to_string(suite.failures) + " CRITERIA FAILED")
            << (quick ? " (quick mode)" : "") << std::endl;
  return suite.failures;
}
