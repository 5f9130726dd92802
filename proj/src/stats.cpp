#include "cotfaith/stats.hpp"

#include "cotfaith/errors.hpp"
#include "cotfaith/rng.hpp"

#include <algorithm>
#include <cmath>

namespace cotfaith {

void to_json(nlohmann::json& j, const EffectEstimate& e) {
  j = nlohmann::json{{"effect", e.effect},   {"target", e.target},
                     {"point", e.point},     {"ci_low", e.ci_low},
                     {"ci_high", e.ci_high}, {"resamples", e.resamples},
                     {"n", e.n}};
}

void from_json(const nlohmann::json& j, EffectEstimate& e) {
  e.effect = j.value("effect", "");
  e.target = j.value("target", "");
  e.point = j.at("point").get<double>();
  e.ci_low = j.at("ci_low").get<double>();
  e.ci_high = j.at("ci_high").get<double>();
  e.resamples = j.value("resamples", 0);
  e.n = j.value("n", 0L);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) throw ValidationError("mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of empty sample");
  const auto n = static_cast<long>(sorted.size());
  long rank = static_cast<long>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp(rank, 1L, n);
  return sorted[static_cast<size_t>(rank - 1)];
}

std::vector<double> bootstrap_means(std::vector<double> sample, int resamples,
                                    uint64_t seed) {
  if (sample.empty()) throw ValidationError("bootstrap on empty sample");
  if (resamples < 1) throw ValidationError("resamples must be >= 1");
  std::sort(sample.begin(), sample.end());
  const size_t n = sample.size();
  auto rng = DeterministicRng::keyed(seed, 0x626f6f74ull);  // "boot"
  std::vector<double> stats(static_cast<size_t>(resamples));
  for (auto& stat : stats) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += sample[rng.index(n)];
    stat = s / static_cast<double>(n);
  }
  return stats;
}

static bool all_equal(const std::vector<double>& xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

std::pair<double, double> percentile_bootstrap_mean(std::vector<double> sample,
                                                    const BootstrapConfig& cfg) {
  const double point = mean_of(sample);
  if (all_equal(sample)) return {sample.front(), sample.front()};
  auto stats = bootstrap_means(std::move(sample), cfg.resamples, cfg.seed);
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - cfg.level) / 2.0;
  double lo = sorted_quantile(stats, alpha);
  double hi = sorted_quantile(stats, 1.0 - alpha);
  return {std::min(lo, point), std::max(hi, point)};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Acklam's rational approximation, refined with one Halley step on erfc.
double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("normal_quantile requires p in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

std::pair<double, double> bca_from_resamples(const std::vector<double>& sample,
                                             const std::vector<double>& resample_stats,
                                             double level) {
  if (sample.size() < 2) throw ValidationError("BCa requires sample size >= 2");
  const double point = mean_of(sample);
  if (all_equal(resample_stats)) return {resample_stats.front(), resample_stats.front()};

  const auto B = static_cast<double>(resample_stats.size());
  // Bias correction: mid-rank of the point estimate within the resamples.
  double less = 0.0, equal = 0.0;
  for (double s : resample_stats) {
    if (s < point) less += 1.0;
    else if (s == point) equal += 1.0;
  }
  double frac = (less + 0.5 * equal) / B;
  frac = std::clamp(frac, 1.0 / (B + 1.0), B / (B + 1.0));
  const double z0 = normal_quantile(frac);

  // Acceleration from the jackknife.
  const size_t n = sample.size();
  const double total = point * static_cast<double>(n);
  std::vector<double> jack(n);
  for (size_t i = 0; i < n; ++i)
    jack[i] = (total - sample[i]) / static_cast<double>(n - 1);
  const double jbar = mean_of(jack);
  double num = 0.0, den = 0.0;
  for (double v : jack) {
    const double d = jbar - v;
    num += d * d * d;
    den += d * d;
  }
  const double accel = den > 0.0 ? num / (6.0 * std::pow(den, 1.5)) : 0.0;

  const double alpha = (1.0 - level) / 2.0;
  const double zlo = normal_quantile(alpha);
  const double zhi = normal_quantile(1.0 - alpha);
  auto adjusted = [&](double z) {
    const double t = z0 + z;
    return normal_cdf(z0 + t / (1.0 - accel * t));
  };

  std::vector<double> sorted(resample_stats);
  std::sort(sorted.begin(), sorted.end());
  double lo = sorted_quantile(sorted, adjusted(zlo));
  double hi = sorted_quantile(sorted, adjusted(zhi));
  return {std::min(lo, point), std::max(hi, point)};
}

std::pair<double, double> bca_interval(std::vector<double> sample,
                                       const BootstrapConfig& cfg) {
  if (sample.size() < 2) throw ValidationError("BCa requires sample size >= 2");
  if (all_equal(sample)) return {sample.front(), sample.front()};
  std::sort(sample.begin(), sample.end());
  auto stats = bootstrap_means(sample, cfg.resamples, cfg.seed);
  return bca_from_resamples(sample, stats, cfg.level);
}

EffectEstimate estimate_mean_percentile(std::vector<double> sample,
                                        const std::string& effect,
                                        const BootstrapConfig& cfg) {
  EffectEstimate e;
  e.effect = effect;
  e.n = static_cast<long>(sample.size());
  e.resamples = cfg.resamples;
  // For a constant sample the mean is the common value, exactly.
  e.point = mean_of(sample);
  if (all_equal(sample)) e.point = sample.front();
  auto [lo, hi] = percentile_bootstrap_mean(std::move(sample), cfg);
  e.ci_low = lo;
  e.ci_high = hi;
  return e;
}

EffectEstimate estimate_mean_bca(std::vector<double> sample,
                                 const std::string& effect,
                                 const std::string& target,
                                 const BootstrapConfig& cfg) {
  EffectEstimate e;
  e.effect = effect;
  e.target = target;
  e.n = static_cast<long>(sample.size());
  e.resamples = cfg.resamples;
  e.point = mean_of(sample);
  if (all_equal(sample)) e.point = sample.front();
  auto [lo, hi] = bca_interval(std::move(sample), cfg);
  e.ci_low = lo;
  e.ci_high = hi;
  return e;
}

}  // namespace cotfaith
