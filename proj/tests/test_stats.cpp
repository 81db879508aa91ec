#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "jbt/stats.hpp"

using namespace jbt;

namespace {

SlotObservation make_obs(std::vector<int> a, std::vector<int> s, std::vector<int> u,
                         std::vector<int> q_next, int dest, int a_total) {
  SlotObservation o;
  o.a = std::move(a);
  o.s = std::move(s);
  o.u = std::move(u);
  o.q_next = std::move(q_next);
  o.dest = dest;
  o.a_total = a_total;
  return o;
}

double normal_draw(RngStream& rng) {
  // Box-Muller
  double u1 = rng.u01(), u2 = rng.u01();
  while (u1 <= 0) u1 = rng.u01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace

TEST_CASE("batch means confidence interval") {
  CHECK_THROWS(batch_means_ci({1.0}));

  auto flat = batch_means_ci({2.5, 2.5, 2.5, 2.5});
  CHECK(flat.mean == 2.5);
  CHECK(flat.ci_half == 0.0);
  CHECK(flat.n_effective == 4);

  // Monte Carlo coverage: CIs from iid standard-normal batch means should
  // cover 0 in at least 93% of 1000 trials (nominal 95%).
  RngStream rng(314159);
  int covered = 0;
  const int trials = 1000, b = 16;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> batches(b);
    for (auto& v : batches) v = normal_draw(rng);
    auto est = batch_means_ci(batches);
    if (std::abs(est.mean) <= est.ci_half) ++covered;
  }
  CHECK(covered >= 930);
}

TEST_CASE("welch interval") {
  auto same = welch_interval({1.0, 1.1, 0.9}, {1.0, 1.1, 0.9});
  CHECK(same.diff == Catch::Approx(0.0).margin(1e-15));
  CHECK(same.lo() < 0);
  CHECK(same.hi() > 0);

  auto apart = welch_interval({1.0, 1.01, 0.99}, {2.0, 2.01, 1.99});
  CHECK(apart.hi() < 0);

  CHECK_THROWS(welch_interval({1.0}, {2.0, 3.0}));
}

TEST_CASE("slot accumulation matches the drift functionals") {
  // N = 2, no warmup, batch size 2
  EstimatorState est(0, 4, 2, true);

  // slot 1: U = 0 contributes nothing to the t_eps functional
  est.accumulate(make_obs({1, 0}, {0, 1}, {0, 0}, {3, 1}, 0, 1), {2, 2});
  // slot 2: Q+ = (0,k), U = (u,0) contributes k*u
  est.accumulate(make_obs({0, 0}, {2, 0}, {2, 0}, {0, 5}, -1, 0), {0, 5});
  // slots 3-4: idle
  est.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {0, 5}, -1, 0), {0, 5});
  est.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {0, 5}, -1, 0), {0, 5});

  auto rep = est.finalize(0.25);
  CHECK(rep.t_eps.mean == Catch::Approx((0.0 + 5 * 2 + 0 + 0) / 4.0));
  CHECK(rep.sum_q.mean == Catch::Approx((4 + 5 + 5 + 5) / 4.0));
  CHECK(rep.scaled_mean == Catch::Approx(0.25 * rep.sum_q.mean));
  CHECK(rep.unused.mean == Catch::Approx(0.5));

  // T1 increment for a slot with A=(a,0): 2*(q1-q2)*a
  EstimatorState est2(0, 2, 2, true);
  est2.accumulate(make_obs({3, 0}, {0, 0}, {0, 0}, {10, 4}, 0, 3), {7, 4});
  est2.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {10, 4}, -1, 0), {10, 4});
  auto rep2 = est2.finalize(0.1);
  CHECK(*rep2.t1 == Catch::Approx(2.0 * (7 - 4) * 3 / 2.0));

  // T2 increment: (a1-a2-s1+s2)^2 per pair
  EstimatorState est3(0, 2, 2, true);
  est3.accumulate(make_obs({2, 0}, {1, 1}, {0, 0}, {1, 1}, 0, 2), {0, 2});
  est3.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {1, 1}, -1, 0), {1, 1});
  auto rep3 = est3.finalize(0.1);
  CHECK(*rep3.t2 == Catch::Approx(((2 - 0 - 1 + 1) * (2 - 0 - 1 + 1)) / 2.0));
}

TEST_CASE("finalize edge cases") {
  // all-zero deterministic trace
  EstimatorState est(0, 8, 2, true);
  for (int i = 0; i < 8; ++i)
    est.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {0, 0}, -1, 0), {0, 0});
  auto rep = est.finalize(0.3);
  CHECK(rep.sum_q.mean == 0.0);
  CHECK(rep.t_eps.mean == 0.0);
  CHECK(rep.lemma5_residual->mean == 0.0);

  // insufficient batches names the requirement
  EstimatorState starved(0, 100, 2, true);
  starved.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {0, 0}, -1, 0), {0, 0});
  CHECK_THROWS_WITH(starved.finalize(0.3),
                    Catch::Matchers::ContainsSubstring("batches"));

  // heterogeneous runs carry no pairwise functionals
  EstimatorState het(0, 4, 2, false);
  for (int i = 0; i < 4; ++i)
    het.accumulate(make_obs({1, 0}, {1, 0}, {0, 0}, {1, 0}, 0, 1), {1, 0});
  auto rep_het = het.finalize(0.3);
  CHECK(!rep_het.t1.has_value());
  CHECK(!rep_het.lemma5_residual.has_value());
}

TEST_CASE("ci half-width shrinks with horizon on iid input") {
  auto run = [](std::uint64_t horizon, std::uint64_t seed) {
    EstimatorState est(0, horizon, 32, true);
    RngStream rng(seed);
    for (std::uint64_t i = 0; i < horizon; ++i) {
      const int q = int(rng.below(10));
      est.accumulate(make_obs({0, 0}, {0, 0}, {0, 0}, {q, 0}, -1, 0), {q, 0});
    }
    return est.finalize(0.1);
  };
  auto small = run(1 << 10, 5);
  auto big = run(1 << 16, 5);
  CHECK(big.sum_q.ci_half < small.sum_q.ci_half);
  CHECK(big.sum_q.ci_half > 0);
}
