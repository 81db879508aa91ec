// Command-line front end: simulate / sweep / exact / identity-check /
// geometry-check. See README for the config file schema.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "jbt/exactchain.hpp"
#include "jbt/geometry_check.hpp"
#include "jbt/harness.hpp"

namespace {

struct ExactReport {
  nlohmann::json json;
  bool identities_ok = true;
};

// Exact-chain evaluation of every functional for each (policy, epsilon).
ExactReport exact_report(const jbt::ExperimentConfig& cfg, int buffer, double tol) {
  using namespace jbt;
  ExactReport rep;
  rep.json["version"] = kVersion;
  rep.json["config"] = cfg.echo_json();
  rep.json["buffer"] = buffer;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& pspec : cfg.policies) {
    for (double eps : cfg.epsilons) {
      const SystemParams params = cfg.params_at(eps);
      const ResolvedPolicy policy = pspec.resolve(eps, cfg.n());
      const TruncatedChain chain =
          build_chain(params, policy, buffer, policy.semantics);
      const StationaryDistribution dist = stationary(chain);
      nlohmann::json e;
      e["policy"] = pspec.tag();
      e["epsilon"] = eps;
      e["r"] = policy.r;
      e["state_count"] = chain.state_count();
      e["residual"] = dist.residual;
      e["boundary_mass"] = dist.boundary_mass;
      e["clipped_mass"] = dist.clipped_mass;
      const double sum_q = exact_expectation(dist, chain, Functional::sum_q);
      const double unused = exact_expectation(dist, chain, Functional::unused_l1);
      e["sum_q"] = sum_q;
      e["scaled_mean"] = eps * sum_q;
      e["zeta_half"] = 0.5 * zeta(params);
      e["t_eps"] = exact_expectation(dist, chain, Functional::t_eps);
      e["unused_l1"] = unused;
      e["unused_l1_sq"] = exact_expectation(dist, chain, Functional::unused_l1_sq);
      e["unused_minus_eps"] = unused - eps;
      if (params.homogeneous()) {
        const double t1 = exact_expectation(dist, chain, Functional::T1);
        const double t2 = exact_expectation(dist, chain, Functional::T2);
        const double t3 = exact_expectation(dist, chain, Functional::T3);
        const double lhs = exact_expectation(dist, chain, Functional::lhs_lemma5);
        e["T1"] = t1;
        e["T2"] = t2;
        e["T3"] = t3;
        e["lhs_lemma5"] = lhs;
        e["lemma5_residual"] = lhs - (t1 + t2 - t3);
        if (std::abs(lhs - (t1 + t2 - t3)) > tol) rep.identities_ok = false;
      }
      if (std::abs(unused - eps) > tol) rep.identities_ok = false;
      if (policy.rule == Rule::jbt) {
        RegionSpec region(policy.r, params.n());
        e["d_p50"] = exact_dist_quantile(dist, chain, region, 0.50);
        e["d_p99"] = exact_dist_quantile(dist, chain, region, 0.99);
        nlohmann::json mg;
        for (double th : cfg.theta_grid)
          mg[jbt::detail::fmt_double(th)] = exact_dist_mgf(dist, chain, region, th);
        e["mgf"] = mg;
      }
      entries.push_back(std::move(e));
    }
  }
  rep.json["results"] = entries;
  return rep;
}

void write_or_print(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << std::endl;
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot open output file: " + out);
    os << j.dump(2) << "\n";
  }
}

int run_simulate(const std::string& config_path, const std::string& out,
                 const std::string& format, int workers, const std::string& trace,
                 bool sweep_mode) {
  using namespace jbt;
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  if (sweep_mode && cfg.epsilons.size() < 2) {
    std::cerr << "sweep requires at least two epsilon values\n";
    return 2;
  }
  if (!trace.empty()) {
    std::ofstream os(trace);
    if (!os) throw std::runtime_error("cannot open trace file: " + trace);
    trace_run(cfg, os);
  }
  if (auto warn = cfg.params_at(cfg.epsilons.front()).niceness_warning())
    std::cerr << "warning: " << *warn << "\n";
  std::vector<ResultRow> rows;
  std::string status = "ok";
  try {
    rows = run(cfg, workers);
  } catch (const RunError& err) {
    rows = err.partial_rows;
    status = std::string("failed: ") + err.what();
  }
  if (out.empty()) {
    emit_csv(rows, cfg.theta_grid, std::cout, status);
  } else {
    emit(rows, cfg, format, out, status);
    std::cerr << rows.size() << " rows -> " << out << "\n";
  }
  return status == "ok" ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pull-based load balancing simulator and exact small-chain oracle"};
  app.require_subcommand(1);

  std::string config_path, out, format = "csv", trace;
  int workers = 0;

  auto* sim = app.add_subcommand("simulate", "run an experiment config");
  sim->add_option("--config", config_path, "config file")->required();
  sim->add_option("--out", out, "output path (default: stdout CSV)");
  sim->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  sim->add_option("--workers", workers, "worker threads (default: hardware)");
  sim->add_option("--trace", trace, "dump a per-slot debug trace CSV to this path");

  auto* sweep = app.add_subcommand("sweep", "simulate, requiring a multi-epsilon sweep");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--out", out, "output path (default: stdout CSV)");
  sweep->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  sweep->add_option("--workers", workers, "worker threads (default: hardware)");

  int buffer = 0;
  double tol = 1e-6;
  auto* exact = app.add_subcommand("exact", "exact stationary analysis of the truncated chain");
  exact->add_option("--config", config_path, "config file")->required();
  exact->add_option("--buffer", buffer, "per-queue buffer cap (overrides config)");
  exact->add_option("--out", out, "output path (default: stdout JSON)");

  auto* idch = app.add_subcommand(
      "identity-check", "exact steady-state identity checks; nonzero exit on violation");
  idch->add_option("--config", config_path, "config file")->required();
  idch->add_option("--buffer", buffer, "per-queue buffer cap (overrides config)");
  idch->add_option("--tol", tol, "identity tolerance (default 1e-6)");
  idch->add_option("--out", out, "output path (default: stdout JSON)");

  int trials = 1000;
  std::uint64_t gseed = 0x6e0;
  auto* geo = app.add_subcommand("geometry-check",
                                 "closed-form vs numeric nearest-point check");
  geo->add_option("--trials", trials, "random points (default 1000)");
  geo->add_option("--seed", gseed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return run_simulate(config_path, out, format, workers, trace, false);
    if (sweep->parsed())
      return run_simulate(config_path, out, format, workers, "", true);
    if (exact->parsed() || idch->parsed()) {
      jbt::ExperimentConfig cfg = jbt::ExperimentConfig::load(config_path);
      int b = buffer > 0 ? buffer : cfg.buffer.value_or(0);
      if (b <= 0) {
        std::cerr << "exact analysis needs --buffer or a 'buffer' config key\n";
        return 2;
      }
      ExactReport rep = exact_report(cfg, b, tol);
      rep.json["identities_ok"] = rep.identities_ok;
      write_or_print(rep.json, out);
      if (idch->parsed() && !rep.identities_ok) {
        std::cerr << "identity check FAILED (tolerance " << tol << ")\n";
        return 1;
      }
      return 0;
    }
    if (geo->parsed()) {
      auto rep = jbt::geometry_check(trials, gseed);
      std::cout << rep.to_string() << std::endl;
      return rep.passed() ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
