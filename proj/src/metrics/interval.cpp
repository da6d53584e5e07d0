#include "mialab/metrics/interval.hpp"

#include <algorithm>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "mialab/error.hpp"

namespace mialab::metrics {

namespace {

// t_{0.975, df} for df = 1..29
constexpr double kT975[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                            2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                            2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045};

}  // namespace

double t_quantile(double level, int df) {
  require(df >= 1, ErrorKind::kData, "t quantile needs df >= 1");
  require(level > 0.0 && level < 1.0, ErrorKind::kConfig, "confidence level must lie in (0,1)");
  if (level == 0.95 && df <= 29) return kT975[df - 1];
  boost::math::students_t dist(static_cast<double>(df));
  return boost::math::quantile(dist, 0.5 + level / 2.0);
}

IntervalEstimate confidence_interval(std::span<const double> values, double level) {
  const auto n = static_cast<int>(values.size());
  if (n < 2) fail(ErrorKind::kData, "confidence interval needs at least 2 values");
  // Summing in sorted order makes the result independent of input order.
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0;
  for (double v : sorted) sum += v;
  const double mean = sum / n;
  double ss = 0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  IntervalEstimate est;
  est.mean = mean;
  est.n = n;
  est.level = level;
  est.half_width = ss == 0 ? 0.0 : t_quantile(level, n - 1) * sd / std::sqrt(static_cast<double>(n));
  return est;
}

}  // namespace mialab::metrics
