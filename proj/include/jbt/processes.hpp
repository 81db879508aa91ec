#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jbt/rng.hpp"

namespace jbt {

enum class Family {
  bernoulli,
  bernoulli_batch,
  binomial,
  truncated_poisson,
  geometric_truncated,
  deterministic,
};

enum class Role { arrival, service };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::bernoulli: return "bernoulli";
    case Family::bernoulli_batch: return "bernoulli-batch";
    case Family::binomial: return "binomial";
    case Family::truncated_poisson: return "truncated-poisson";
    case Family::geometric_truncated: return "geometric-truncated";
    case Family::deterministic: return "deterministic";
  }
  return "?";
}

// An integer-valued i.i.d. count distribution with exact moments and a finite
// support table. Both the simulator (inverse-CDF sampling) and the exact
// chain oracle (pmf enumeration) draw from the same table.
class ProcessSpec {
 public:
  static ProcessSpec bernoulli(double p, Role role) {
    check_prob(p, "bernoulli p");
    ProcessSpec s(Family::bernoulli, role);
    s.p_ = p;
    s.mean_ = p;
    s.variance_ = p * (1.0 - p);
    s.set_support({{0, 1.0 - p}, {1, p}});
    s.validate();
    return s;
  }

  // Value `a` with probability p, otherwise 0.
  static ProcessSpec bernoulli_batch(int a, double p, Role role) {
    if (a < 1) throw std::invalid_argument("bernoulli-batch requires a >= 1");
    check_prob(p, "bernoulli-batch p");
    ProcessSpec s(Family::bernoulli_batch, role);
    s.a_ = a;
    s.p_ = p;
    s.mean_ = a * p;
    s.variance_ = double(a) * a * p * (1.0 - p);
    s.set_support({{0, 1.0 - p}, {a, p}});
    s.validate();
    return s;
  }

  static ProcessSpec binomial(int k, double p, Role role) {
    if (k < 1) throw std::invalid_argument("binomial requires K >= 1");
    check_prob(p, "binomial p");
    ProcessSpec s(Family::binomial, role);
    s.a_ = k;
    s.p_ = p;
    s.mean_ = k * p;
    s.variance_ = k * p * (1.0 - p);
    std::vector<std::pair<int, double>> pts;
    double logp = std::log(p > 0 ? p : 1), log1p = std::log(p < 1 ? 1 - p : 1);
    for (int i = 0; i <= k; ++i) {
      double logc = std::lgamma(k + 1) - std::lgamma(i + 1) - std::lgamma(k - i + 1);
      double mass = (p == 0) ? (i == 0 ? 1.0 : 0.0)
                  : (p == 1) ? (i == k ? 1.0 : 0.0)
                             : std::exp(logc + i * logp + (k - i) * log1p);
      pts.emplace_back(i, mass);
    }
    s.set_support(pts);
    s.validate();
    return s;
  }

  // Poisson(rate) conditioned on {0..cap}. Moments are exact finite sums.
  static ProcessSpec truncated_poisson(double rate, int cap, Role role) {
    if (rate < 0) throw std::invalid_argument("truncated-poisson rate must be >= 0");
    if (cap < 0) throw std::invalid_argument("truncated-poisson cap must be >= 0");
    ProcessSpec s(Family::truncated_poisson, role);
    s.rate_ = rate;
    s.cap_ = cap;
    std::vector<std::pair<int, double>> pts;
    double mass = std::exp(-rate);
    double total = 0;
    for (int k = 0; k <= cap; ++k) {
      pts.emplace_back(k, mass);
      total += mass;
      mass *= rate / (k + 1);
    }
    for (auto& pt : pts) pt.second /= total;
    s.exponential_tail_ = true;
    s.set_support(pts);
    s.moments_from_support();
    s.validate();
    return s;
  }

  // Geometric on {0,1,...} with success probability p, conditioned on {0..cap}.
  static ProcessSpec geometric_truncated(double p, int cap, Role role) {
    if (!(p > 0.0) || p > 1.0)
      throw std::invalid_argument("geometric-truncated requires p in (0,1]");
    if (cap < 0) throw std::invalid_argument("geometric-truncated cap must be >= 0");
    ProcessSpec s(Family::geometric_truncated, role);
    s.p_ = p;
    s.cap_ = cap;
    std::vector<std::pair<int, double>> pts;
    double mass = p, total = 0;
    for (int k = 0; k <= cap; ++k) {
      pts.emplace_back(k, mass);
      total += mass;
      mass *= (1.0 - p);
    }
    for (auto& pt : pts) pt.second /= total;
    s.exponential_tail_ = true;
    s.set_support(pts);
    s.moments_from_support();
    s.validate();
    return s;
  }

  static ProcessSpec deterministic(int c, Role role) {
    if (c < 0) throw std::invalid_argument("deterministic value must be >= 0");
    ProcessSpec s(Family::deterministic, role);
    s.a_ = c;
    s.mean_ = c;
    s.variance_ = 0;
    s.set_support({{c, 1.0}});
    s.validate();
    return s;
  }

  Family family() const { return family_; }
  Role role() const { return role_; }
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  int max_value() const { return values_.empty() ? 0 : values_.back(); }
  bool exponential_tail_family() const { return exponential_tail_; }

  const std::vector<int>& support() const { return values_; }

  double pmf(int k) const {
    auto it = std::lower_bound(values_.begin(), values_.end(), k);
    if (it == values_.end() || *it != k) return 0.0;
    std::size_t i = it - values_.begin();
    return i == 0 ? cdf_[0] : cdf_[i] - cdf_[i - 1];
  }

  int sample(RngStream& rng) const {
    if (values_.size() == 1) return values_[0];
    const double u = rng.u01();
    for (std::size_t i = 0; i + 1 < cdf_.size(); ++i)
      if (u < cdf_[i]) return values_[i];
    return values_.back();
  }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    os << family_name(family_) << '(';
    switch (family_) {
      case Family::bernoulli: os << p_; break;
      case Family::bernoulli_batch: os << a_ << ',' << p_; break;
      case Family::binomial: os << a_ << ',' << p_; break;
      case Family::truncated_poisson: os << rate_ << ',' << cap_; break;
      case Family::geometric_truncated: os << p_ << ',' << cap_; break;
      case Family::deterministic: os << a_; break;
    }
    os << ')';
    return os.str();
  }

  static ProcessSpec parse(const std::string& text, Role role);

 private:
  ProcessSpec(Family f, Role r) : family_(f), role_(r) {}

  static void check_prob(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument(std::string(what) + " must lie in [0,1]");
  }

  void set_support(std::vector<std::pair<int, double>> pts) {
    std::sort(pts.begin(), pts.end());
    values_.clear();
    cdf_.clear();
    double acc = 0;
    for (auto& [v, m] : pts) {
      if (m <= 0) continue;
      acc += m;
      values_.push_back(v);
      cdf_.push_back(acc);
    }
    if (values_.empty()) throw std::invalid_argument("distribution has empty support");
    cdf_.back() = 1.0;
  }

  void moments_from_support() {
    double m = 0, m2 = 0, prev = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      double mass = cdf_[i] - prev;
      prev = cdf_[i];
      m += mass * values_[i];
      m2 += mass * values_[i] * values_[i];
    }
    mean_ = m;
    variance_ = m2 - m * m;
  }

  void validate() const {
    if (role_ == Role::arrival && pmf(0) <= 0.0)
      throw std::invalid_argument(
          "arrival process requires positive probability for A(t) to be zero; "
          "family " + std::string(family_name(family_)) + " violates it");
  }

  Family family_;
  Role role_;
  double p_ = 0, rate_ = 0, mean_ = 0, variance_ = 0;
  int a_ = 0, cap_ = 0;
  bool exponential_tail_ = false;
  std::vector<int> values_;
  std::vector<double> cdf_;
};

namespace detail {

inline std::vector<std::string> split_args(const std::string& text,
                                           std::string* name) {
  auto open = text.find('(');
  std::vector<std::string> args;
  auto strip = [](std::string s) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  if (open == std::string::npos) {
    *name = strip(text);
    return args;
  }
  auto close = text.rfind(')');
  if (close == std::string::npos || close < open)
    throw std::invalid_argument("unbalanced parentheses in '" + text + "'");
  *name = strip(text.substr(0, open));
  std::string inner = text.substr(open + 1, close - open - 1);
  std::istringstream in(inner);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    piece = strip(piece);
    // accept either positional values or key=value
    auto eq = piece.find('=');
    if (eq != std::string::npos) piece = strip(piece.substr(eq + 1));
    if (!piece.empty()) args.push_back(piece);
  }
  return args;
}

inline double to_real(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

inline int to_int(const std::string& s) {
  double v = to_real(s);
  int i = static_cast<int>(std::llround(v));
  if (std::abs(v - i) > 1e-9) throw std::invalid_argument("expected integer, got '" + s + "'");
  return i;
}

}  // namespace detail

inline ProcessSpec ProcessSpec::parse(const std::string& text, Role role) {
  std::string name;
  auto args = detail::split_args(text, &name);
  auto need = [&](std::size_t n) {
    if (args.size() != n)
      throw std::invalid_argument("family '" + name + "' expects " +
                                  std::to_string(n) + " parameter(s)");
  };
  if (name == "bernoulli") {
    need(1);
    return ProcessSpec::bernoulli(detail::to_real(args[0]), role);
  }
  if (name == "bernoulli-batch") {
    need(2);
    return ProcessSpec::bernoulli_batch(detail::to_int(args[0]),
                                        detail::to_real(args[1]), role);
  }
  if (name == "binomial") {
    need(2);
    return ProcessSpec::binomial(detail::to_int(args[0]),
                                 detail::to_real(args[1]), role);
  }
  if (name == "truncated-poisson") {
    need(2);
    return ProcessSpec::truncated_poisson(detail::to_real(args[0]),
                                          detail::to_int(args[1]), role);
  }
  if (name == "geometric-truncated") {
    need(2);
    return ProcessSpec::geometric_truncated(detail::to_real(args[0]),
                                            detail::to_int(args[1]), role);
  }
  if (name == "deterministic") {
    need(1);
    return ProcessSpec::deterministic(detail::to_int(args[0]), role);
  }
  throw std::invalid_argument("unknown distribution family '" + name + "'");
}

// A distribution family with its shape parameters fixed and the mean left
// free: "bernoulli", "bernoulli-batch(a=2)", "binomial(K=10)",
// "truncated-poisson(cap=30)", "geometric-truncated(cap=30)", "deterministic".
struct ArrivalFamily {
  Family kind = Family::bernoulli;
  int shape = 0;  // a / K / cap, per family

  static ArrivalFamily parse(const std::string& text) {
    std::string name;
    auto args = detail::split_args(text, &name);
    ArrivalFamily f;
    auto one = [&]() {
      if (args.size() != 1)
        throw std::invalid_argument("family '" + name + "' expects one shape parameter");
      return detail::to_int(args[0]);
    };
    if (name == "bernoulli") {
      f.kind = Family::bernoulli;
      if (!args.empty()) throw std::invalid_argument("bernoulli takes no shape parameter");
    } else if (name == "bernoulli-batch") {
      f.kind = Family::bernoulli_batch;
      f.shape = one();
    } else if (name == "binomial") {
      f.kind = Family::binomial;
      f.shape = one();
    } else if (name == "truncated-poisson") {
      f.kind = Family::truncated_poisson;
      f.shape = one();
    } else if (name == "geometric-truncated") {
      f.kind = Family::geometric_truncated;
      f.shape = one();
    } else if (name == "deterministic") {
      f.kind = Family::deterministic;
      if (!args.empty()) throw std::invalid_argument("deterministic takes no shape parameter");
    } else {
      throw std::invalid_argument("unknown arrival family '" + name + "'");
    }
    return f;
  }

  std::string to_string() const {
    switch (kind) {
      case Family::bernoulli: return "bernoulli";
      case Family::bernoulli_batch: return "bernoulli-batch(" + std::to_string(shape) + ")";
      case Family::binomial: return "binomial(" + std::to_string(shape) + ")";
      case Family::truncated_poisson: return "truncated-poisson(cap=" + std::to_string(shape) + ")";
      case Family::geometric_truncated: return "geometric-truncated(cap=" + std::to_string(shape) + ")";
      case Family::deterministic: return "deterministic";
    }
    return "?";
  }
};

namespace detail {

// Solve f(x) = target for monotone f by bisection on [lo, hi].
template <class F>
double bisect_monotone(F f, double lo, double hi, double target, bool increasing) {
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    bool go_up = increasing ? (f(mid) < target) : (f(mid) > target);
    (go_up ? lo : hi) = mid;
  }
  double flo = std::abs(f(lo) - target), fhi = std::abs(f(hi) - target);
  return flo <= fhi ? lo : hi;
}

}  // namespace detail

// Mean-targeting constructor: solves the family's free parameter so the
// returned spec has mean() == target_mean (exactly where a closed form
// exists, to machine precision otherwise).
inline ProcessSpec make_arrival(const ArrivalFamily& family, double target_mean) {
  if (target_mean < 0)
    throw std::invalid_argument("target mean must be nonnegative");
  switch (family.kind) {
    case Family::bernoulli:
      if (target_mean > 1.0)
        throw std::invalid_argument("bernoulli: mean exceeds family maximum 1");
      return ProcessSpec::bernoulli(target_mean, Role::arrival);
    case Family::bernoulli_batch: {
      const int a = family.shape;
      if (target_mean > a)
        throw std::invalid_argument("bernoulli-batch: mean exceeds family maximum a=" +
                                    std::to_string(a));
      return ProcessSpec::bernoulli_batch(a, target_mean / a, Role::arrival);
    }
    case Family::binomial: {
      const int k = family.shape;
      if (target_mean > k)
        throw std::invalid_argument("binomial: mean exceeds family maximum K=" +
                                    std::to_string(k));
      return ProcessSpec::binomial(k, target_mean / k, Role::arrival);
    }
    case Family::truncated_poisson: {
      const int cap = family.shape;
      auto mean_of = [&](double rate) {
        return ProcessSpec::truncated_poisson(rate, cap, Role::arrival).mean();
      };
      double hi = 1.0;
      while (mean_of(hi) < target_mean && hi < 1e12) hi *= 2;
      if (mean_of(hi) < target_mean)
        throw std::invalid_argument("truncated-poisson: mean not reachable below cap=" +
                                    std::to_string(cap));
      double rate = detail::bisect_monotone(mean_of, 0.0, hi, target_mean, true);
      return ProcessSpec::truncated_poisson(rate, cap, Role::arrival);
    }
    case Family::geometric_truncated: {
      const int cap = family.shape;
      auto mean_of = [&](double p) {
        return ProcessSpec::geometric_truncated(p, cap, Role::arrival).mean();
      };
      const double lo = 1e-12;
      if (target_mean > mean_of(lo))
        throw std::invalid_argument(
            "geometric-truncated: mean exceeds reachable maximum for cap=" +
            std::to_string(cap));
      double p = detail::bisect_monotone(mean_of, lo, 1.0, target_mean, false);
      return ProcessSpec::geometric_truncated(p, cap, Role::arrival);
    }
    case Family::deterministic: {
      int c = static_cast<int>(std::llround(target_mean));
      if (std::abs(target_mean - c) > 1e-12)
        throw std::invalid_argument("deterministic: mean must be an integer");
      return ProcessSpec::deterministic(c, Role::arrival);
    }
  }
  throw std::invalid_argument("unknown arrival family");
}

// Full system parameterization: N service processes plus the exogenous
// arrival process pinned at mean mu_sigma - epsilon.
struct SystemParams {
  std::vector<ProcessSpec> service;
  ProcessSpec arrival;
  double epsilon = 0;

  int n() const { return static_cast<int>(service.size()); }
  double mu_sigma() const {
    double m = 0;
    for (const auto& s : service) m += s.mean();
    return m;
  }
  double nu_sigma_sq() const {
    double v = 0;
    for (const auto& s : service) v += s.variance();
    return v;
  }
  double sigma_sigma_sq() const { return arrival.variance(); }
  double lambda_sigma() const { return arrival.mean(); }
  int a_max() const { return arrival.max_value(); }
  int s_max() const {
    int m = 0;
    for (const auto& s : service) m = std::max(m, s.max_value());
    return m;
  }
  bool homogeneous() const {
    for (const auto& s : service)
      if (std::abs(s.mean() - service[0].mean()) > 1e-12 ||
          std::abs(s.variance() - service[0].variance()) > 1e-12)
        return false;
    return true;
  }
  bool finite_support() const { return true; }  // all families carry finite tables
  bool exponential_tail_flagged() const {
    if (arrival.exponential_tail_family()) return true;
    for (const auto& s : service)
      if (s.exponential_tail_family()) return true;
    return false;
  }
  std::vector<double> service_means() const {
    std::vector<double> mu(service.size());
    for (std::size_t i = 0; i < service.size(); ++i) mu[i] = service[i].mean();
    return mu;
  }

  // Theorem-1 niceness check: a slot with zero arrivals and every server
  // offering the same service d >= 1 must have positive probability.
  std::optional<std::string> niceness_warning() const {
    int d_hi = s_max();
    for (int d = 1; d <= d_hi; ++d) {
      bool all = true;
      for (const auto& s : service)
        if (s.pmf(d) <= 0.0) { all = false; break; }
      if (all) return std::nullopt;
    }
    return "no service level d >= 1 is reachable by all servers simultaneously; "
           "constant-threshold separation results may not be visible";
  }

  static SystemParams make(std::vector<ProcessSpec> service,
                           const ArrivalFamily& family, double epsilon) {
    if (service.empty()) throw std::invalid_argument("need at least one server");
    if (epsilon < 0) throw std::invalid_argument("epsilon must be >= 0");
    double mu = 0;
    for (const auto& s : service) {
      if (s.role() != Role::service)
        throw std::invalid_argument("service spec has arrival role");
      mu += s.mean();
    }
    if (epsilon > mu) throw std::invalid_argument("epsilon exceeds total service rate");
    SystemParams p{std::move(service), make_arrival(family, mu - epsilon), epsilon};
    return p;
  }

  static SystemParams make(std::vector<ProcessSpec> service, ProcessSpec arrival,
                           double epsilon) {
    SystemParams p{std::move(service), std::move(arrival), epsilon};
    if (std::abs(p.arrival.mean() - (p.mu_sigma() - epsilon)) > 1e-12)
      throw std::invalid_argument("arrival mean must equal mu_sigma - epsilon");
    return p;
  }
};

// Resource-pooled constant at the given epsilon: sigma^2(eps) + nu^2.
inline double zeta(const SystemParams& params) {
  return params.sigma_sigma_sq() + params.nu_sigma_sq();
}

}  // namespace jbt
