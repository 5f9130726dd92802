#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// A point estimate with a confidence interval. Shared by every metric module.
struct EffectEstimate {
  std::string effect;   // "unfaithfulness", "ft_faithful", "NDE", "NIE", "faithful@k", ...
  std::string target;   // "hinted" / "non_hinted_sum" for CMA, else ""
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int resamples = 0;
  long n = 0;  // sample size the estimate was computed from
};

void to_json(nlohmann::json& j, const EffectEstimate& e);
void from_json(const nlohmann::json& j, EffectEstimate& e);

struct BootstrapConfig {
  int resamples = 10000;
  double level = 0.95;
  uint64_t seed = 0;
};

double mean_of(const std::vector<double>& xs);

// Order statistic at rank ceil(q * n) (1-based), clamped; `sorted` ascending.
// Matches "smallest value whose CDF reaches q" on the empirical distribution.
double sorted_quantile(const std::vector<double>& sorted, double q);

// Means of `resamples` bootstrap draws from `sample` (with replacement),
// deterministic given the seed. The sample is sorted internally first, so the
// stream is invariant under permutation of the input.
std::vector<double> bootstrap_means(std::vector<double> sample, int resamples,
                                    uint64_t seed);

// Percentile bootstrap CI for the mean. Degenerate samples give a point
// interval. Bounds are clamped to bracket the sample mean.
std::pair<double, double> percentile_bootstrap_mean(std::vector<double> sample,
                                                    const BootstrapConfig& cfg);

// Bias-corrected accelerated bootstrap CI for the mean; acceleration from the
// jackknife. Deterministic given cfg.seed; degenerate samples give a point
// interval. Requires sample size >= 2.
std::pair<double, double> bca_interval(std::vector<double> sample,
                                       const BootstrapConfig& cfg);

// BCa bounds computed from an externally supplied resample stream. Exposed so
// the resampling and the interval arithmetic can be validated independently.
std::pair<double, double> bca_from_resamples(const std::vector<double>& sample,
                                             const std::vector<double>& resample_stats,
                                             double level);

double normal_cdf(double x);
double normal_quantile(double p);  // inverse of normal_cdf

// Convenience: mean + percentile bootstrap CI as an EffectEstimate.
EffectEstimate estimate_mean_percentile(std::vector<double> sample,
                                        const std::string& effect,
                                        const BootstrapConfig& cfg);

// Convenience: mean + BCa CI as an EffectEstimate.
EffectEstimate estimate_mean_bca(std::vector<double> sample,
                                 const std::string& effect,
                                 const std::string& target,
                                 const BootstrapConfig& cfg);

}  // namespace cotfaith
