#include <doctest.h>

#include "cotfaith/errors.hpp"
#include "cotfaith/rng.hpp"
#include "cotfaith/stats.hpp"

#include <algorithm>
#include <cmath>

using namespace cotfaith;

namespace {

// Independent textbook BCa transcription, used as the oracle against the
// library implementation on an identical resample stream.
std::pair<double, double> reference_bca(const std::vector<double>& sample,
                                        const std::vector<double>& boot, double level) {
  const double theta = mean_of(sample);
  double less = 0;
  for (double b : boot)
    if (b < theta) less += 1;
  const double z0 = normal_quantile(less / static_cast<double>(boot.size()));

  const size_t n = sample.size();
  std::vector<double> jack;
  double total = 0;
  for (double x : sample) total += x;
  for (size_t i = 0; i < n; ++i)
    jack.push_back((total - sample[i]) / static_cast<double>(n - 1));
  const double jbar = mean_of(jack);
  double num = 0, den = 0;
  for (double v : jack) {
    num += std::pow(jbar - v, 3);
    den += std::pow(jbar - v, 2);
  }
  const double a = den > 0 ? num / (6 * std::pow(den, 1.5)) : 0;

  const double alpha = (1 - level) / 2;
  auto adj = [&](double z) {
    const double t = z0 + z;
    return normal_cdf(z0 + t / (1 - a * t));
  };
  std::vector<double> sorted(boot);
  std::sort(sorted.begin(), sorted.end());
  auto pick = [&](double q) {
    long rank = static_cast<long>(std::ceil(q * static_cast<double>(sorted.size())));
    rank = std::clamp(rank, 1L, static_cast<long>(sorted.size()));
    return sorted[static_cast<size_t>(rank - 1)];
  };
  return {pick(adj(normal_quantile(alpha))), pick(adj(normal_quantile(1 - alpha)))};
}

}  // namespace

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999})
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(normal_quantile(0.0), ValidationError);
}

TEST_CASE("sorted_quantile uses the ceil-rank convention") {
  std::vector<double> xs{1, 2, 3, 4};
  CHECK(sorted_quantile(xs, 0.25) == 1);
  CHECK(sorted_quantile(xs, 0.251) == 2);
  CHECK(sorted_quantile(xs, 1.0) == 4);
  CHECK(sorted_quantile(xs, 0.0) == 1);
}

TEST_CASE("percentile bootstrap") {
  SUBCASE("degenerate sample gives a point interval") {
    BootstrapConfig cfg;
    auto [lo, hi] = percentile_bootstrap_mean({0.4, 0.4, 0.4}, cfg);
    CHECK(lo == 0.4);
    CHECK(hi == 0.4);
  }

  SUBCASE("interval brackets the mean and is seeded-deterministic") {
    BootstrapConfig cfg;
    cfg.resamples = 2000;
    cfg.seed = 5;
    std::vector<double> xs{0.1, 0.9, 0.4, 0.6, 0.2, 0.8};
    auto [lo1, hi1] = percentile_bootstrap_mean(xs, cfg);
    auto [lo2, hi2] = percentile_bootstrap_mean(xs, cfg);
    CHECK(lo1 == lo2);
    CHECK(hi1 == hi2);
    CHECK(lo1 <= mean_of(xs));
    CHECK(hi1 >= mean_of(xs));
  }

  SUBCASE("permutation invariance via internal sorting") {
    BootstrapConfig cfg;
    cfg.resamples = 500;
    std::vector<double> xs{0.3, 0.7, 0.1, 0.5};
    std::vector<double> permuted{0.5, 0.1, 0.7, 0.3};
    CHECK(percentile_bootstrap_mean(xs, cfg) == percentile_bootstrap_mean(permuted, cfg));
  }
}

TEST_CASE("bca interval") {
  BootstrapConfig cfg;
  cfg.resamples = 4000;
  cfg.seed = 11;

  SUBCASE("constant sample") {
    auto [lo, hi] = bca_interval({2.5, 2.5, 2.5}, cfg);
    CHECK(lo == 2.5);
    CHECK(hi == 2.5);
  }

  SUBCASE("symmetric sample gives a near-symmetric interval") {
    std::vector<double> xs;
    for (int i = 0; i < 50; ++i) {
      xs.push_back(-1.0);
      xs.push_back(1.0);
    }
    auto [lo, hi] = bca_interval(xs, cfg);
    CHECK(std::abs(lo + hi) <= 0.02 + 1e-9);
  }

  SUBCASE("matches an independent implementation on the same resample stream") {
    // Continuous data keeps the streams tie-free so both tie conventions agree.
    auto rng = DeterministicRng(77);
    std::vector<double> xs;
    for (int i = 0; i < 40; ++i) xs.push_back(rng.next_double() * rng.next_double());
    std::sort(xs.begin(), xs.end());
    const auto boot = bootstrap_means(xs, cfg.resamples, cfg.seed);
    const auto ours = bca_from_resamples(xs, boot, cfg.level);
    const auto ref = reference_bca(xs, boot, cfg.level);
    CHECK(ours.first == doctest::Approx(ref.first).epsilon(1e-12));
    CHECK(ours.second == doctest::Approx(ref.second).epsilon(1e-12));
  }

  SUBCASE("requires n >= 2") {
    CHECK_THROWS_AS(bca_interval({1.0}, cfg), ValidationError);
  }

  SUBCASE("coverage on Bernoulli(0.3), n=100") {
    BootstrapConfig sim_cfg;
    sim_cfg.resamples = 2000;
    int covered = 0;
    const int sims = 200;
    for (int s = 0; s < sims; ++s) {
      auto rng = DeterministicRng::keyed(1234, static_cast<uint64_t>(s));
      std::vector<double> xs;
      for (int i = 0; i < 100; ++i) xs.push_back(rng.next_double() < 0.3 ? 1.0 : 0.0);
      sim_cfg.seed = static_cast<uint64_t>(s);
      auto [lo, hi] = bca_interval(xs, sim_cfg);
      if (lo <= 0.3 && 0.3 <= hi) ++covered;
    }
    CHECK(covered >= 180);  // >= 90% of 200 at nominal 95%
  }
}
