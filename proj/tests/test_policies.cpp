#include <boost/math/distributions/chi_squared.hpp>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "jbt/policies.hpp"

using namespace jbt;

TEST_CASE("threshold schedules") {
  CHECK(threshold_at(ThresholdSchedule::constant(1), 0.1) == 1);
  CHECK(threshold_at(ThresholdSchedule::logarithmic(4.0), 0.05) == 12);
  CHECK(threshold_at(ThresholdSchedule::polynomial(0.5), 0.1) == 32);

  CHECK_THROWS_AS(threshold_at(ThresholdSchedule::constant(1), 0.0), std::domain_error);
  CHECK_THROWS_AS(threshold_at(ThresholdSchedule::constant(1), 1.0), std::domain_error);

  // nonincreasing in epsilon (r grows as eps shrinks), always >= 1, and the
  // log schedule keeps r*eps -> 0 along a decreasing epsilon sequence
  for (auto sched : {ThresholdSchedule::logarithmic(4.0), ThresholdSchedule::polynomial(0.5)}) {
    int prev = 0;
    for (double eps : {0.9, 0.5, 0.3, 0.2, 0.1, 0.05, 0.01, 0.001}) {
      int r = threshold_at(sched, eps);
      CHECK(r >= 1);
      CHECK(r >= prev);
      prev = r;
    }
  }
  double prev_prod = 1e300;
  for (double eps = 0.5; eps > 1e-9; eps /= 4) {
    double prod = eps * threshold_at(ThresholdSchedule::logarithmic(4.0), eps);
    CHECK(prod <= prev_prod + 1e-12);
    prev_prod = prod;
  }
  // large epsilon recovers JIQ via the floor
  CHECK(threshold_at(ThresholdSchedule::logarithmic(4.0), 0.9) == 1);
}

TEST_CASE("decide basics") {
  std::vector<double> mu{1.0, 1.0, 1.0};
  RngStream rng(3);

  ResolvedPolicy jsq{Rule::jsq, 3, 1, MemorySemantics::level, TieBreak::uniform_random};
  CHECK(decide(jsq, {3, 1, 2}, 0, mu, 3.0, rng) == 1);

  ResolvedPolicy jbt{Rule::jbt, 3, 2, MemorySemantics::level, TieBreak::uniform_random};
  CHECK(decide(jbt, {9, 9, 9}, 0b100, mu, 3.0, rng) == 2);  // singleton memory

  // proportional rule with CLT band over 1e6 draws
  std::vector<double> mu2{1.0, 3.0};
  ResolvedPolicy rnd{Rule::random_proportional, 2, 1, MemorySemantics::level,
                     TieBreak::uniform_random};
  int hits = 0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) hits += decide(rnd, {0, 0}, 0, mu2, 4.0, rng) == 1;
  CHECK(std::abs(hits / double(n) - 0.75) <= 4 * 4.3e-4);
}

TEST_CASE("jbt with full memory matches proportionally random routing") {
  const int n_servers = 4;
  std::vector<double> mu(n_servers, 0.5);
  ResolvedPolicy jbt{Rule::jbt, n_servers, 3, MemorySemantics::level,
                     TieBreak::uniform_random};
  // exact route: distribution over full memory is uniform
  auto dist = dest_distribution(jbt, {0, 1, 2, 0}, 0b1111, mu);
  for (double p : dist) CHECK(p == Catch::Approx(0.25));

  // sampled route: chi-squared goodness of fit over 1e5 draws at p=0.001
  RngStream rng(11);
  std::vector<int> counts(n_servers, 0);
  const int n = 100'000;
  for (int i = 0; i < n; ++i) ++counts[decide(jbt, {0, 1, 2, 0}, 0b1111, mu, 2.0, rng)];
  double chi2 = 0;
  for (int c : counts) {
    const double expect = n / double(n_servers);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  boost::math::chi_squared dist_chi(n_servers - 1);
  CHECK(chi2 <= boost::math::quantile(dist_chi, 0.999));
}

TEST_CASE("decision properties over random states") {
  RngStream rng(21);
  std::vector<double> mu{0.5, 1.0, 0.25, 0.75};
  const double mu_total = 2.5;
  for (int trial = 0; trial < 20000; ++trial) {
    std::vector<int> q(4);
    for (auto& v : q) v = int(rng.below(9));
    std::uint64_t mem = rng.below(16);

    ResolvedPolicy jsq{Rule::jsq, 4, 1, MemorySemantics::level, TieBreak::uniform_random};
    int d_jsq = decide(jsq, q, 0, mu, mu_total, rng);
    for (int v : q) REQUIRE(q[d_jsq] <= v);  // no strictly shorter competitor

    ResolvedPolicy pod{Rule::power_of_d, 2, 1, MemorySemantics::level,
                       TieBreak::uniform_random};
    int d_pod = decide(pod, q, 0, mu, mu_total, rng);
    REQUIRE(d_pod >= 0);
    REQUIRE(d_pod < 4);

    ResolvedPolicy jbt{Rule::jbt, 4, 3, MemorySemantics::level, TieBreak::uniform_random};
    int d_jbt = decide(jbt, q, mem, mu, mu_total, rng);
    REQUIRE(d_jbt >= 0);
    REQUIRE(d_jbt < 4);
    if (mem != 0) REQUIRE((mem >> d_jbt) & 1);
  }
}

TEST_CASE("proportional routing is scale invariant") {
  std::vector<double> mu{0.5, 1.5, 1.0};
  std::vector<double> mu_scaled{1.0, 3.0, 2.0};
  ResolvedPolicy rnd{Rule::random_proportional, 3, 1, MemorySemantics::level,
                     TieBreak::uniform_random};
  ResolvedPolicy jbt{Rule::jbt, 3, 2, MemorySemantics::level, TieBreak::uniform_random};

  auto d1 = dest_distribution(rnd, {0, 0, 0}, 0, mu);
  auto d2 = dest_distribution(rnd, {0, 0, 0}, 0, mu_scaled);
  for (int i = 0; i < 3; ++i) CHECK(d1[i] == Catch::Approx(d2[i]).margin(1e-15));

  auto j1 = dest_distribution(jbt, {0, 9, 0}, 0b101, mu);
  auto j2 = dest_distribution(jbt, {0, 9, 0}, 0b101, mu_scaled);
  for (int i = 0; i < 3; ++i) CHECK(j1[i] == Catch::Approx(j2[i]).margin(1e-15));

  // identical rng draws give identical decisions under scaling
  RngStream a(5), b(5);
  for (int t = 0; t < 1000; ++t)
    CHECK(decide(rnd, {0, 0, 0}, 0, mu, 3.0, a) ==
          decide(rnd, {0, 0, 0}, 0, mu_scaled, 6.0, b));
}

TEST_CASE("power-of-d exact distribution") {
  std::vector<double> mu{1, 1, 1};
  ResolvedPolicy pod2{Rule::power_of_d, 2, 1, MemorySemantics::level,
                      TieBreak::uniform_random};
  // q = (0, 1, 2): pairs {0,1}->0, {0,2}->0, {1,2}->1
  auto d = dest_distribution(pod2, {0, 1, 2}, 0, mu);
  CHECK(d[0] == Catch::Approx(2.0 / 3));
  CHECK(d[1] == Catch::Approx(1.0 / 3));
  CHECK(d[2] == 0.0);

  // d = N coincides with JSQ
  ResolvedPolicy podN{Rule::power_of_d, 3, 1, MemorySemantics::level,
                      TieBreak::uniform_random};
  ResolvedPolicy jsq{Rule::jsq, 3, 1, MemorySemantics::level, TieBreak::uniform_random};
  auto a = dest_distribution(podN, {2, 1, 1}, 0, mu);
  auto b = dest_distribution(jsq, {2, 1, 1}, 0, mu);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-15));

  // sampling respects d in [1, N]
  PolicySpec bad = PolicySpec::power_of_d(5);
  CHECK_THROWS(bad.resolve(0.2, 3));
}

TEST_CASE("policy tags and parsing") {
  CHECK(PolicySpec::jiq().tag() == "JIQ/level");
  CHECK(PolicySpec::jsq().tag() == "jsq");
  CHECK(PolicySpec::random_proportional().tag() == "random");
  CHECK(PolicySpec::power_of_d(2).tag() == "pod(d=2)");
  CHECK(PolicySpec::jbt(ThresholdSchedule::logarithmic(4.0)).tag() == "jbt(log,K=4)/level");
  CHECK(PolicySpec::jbt(ThresholdSchedule::polynomial(0.5),
                        MemorySemantics::report_once)
            .tag() == "jbt(poly,alpha=0.5)/report-once");

  for (const char* text :
       {"random", "jsq", "pod(d=2)", "jiq", "jbt(const,r=3)/level",
        "jbt(log,K=4)/level", "jbt(log,K=2.5,floor=2)/report-once",
        "jbt(poly,alpha=0.5)/level", "jsq:lowest"}) {
    auto p = PolicySpec::parse(text);
    auto q = PolicySpec::parse(p.tag() == "JIQ/level" ? "jiq" : p.tag());
    CHECK(p.tag() == q.tag());
  }
  CHECK(PolicySpec::parse("jbt(const,r=1)").tag() == "JIQ/level");
  CHECK(PolicySpec::parse("jsq:lowest").tie == TieBreak::lowest_index);
  CHECK_THROWS(PolicySpec::parse("lru"));
  CHECK_THROWS(PolicySpec::parse("jbt(exp,K=4)"));
}
