#pragma once

#include <span>

namespace mialab::metrics {

struct IntervalEstimate {
  double mean = 0.0;
  double half_width = 0.0;
  int n = 0;
  double level = 0.95;

  double lo() const { return mean - half_width; }
  double hi() const { return mean + half_width; }
  bool overlaps(const IntervalEstimate& o) const { return lo() <= o.hi() && o.lo() <= hi(); }
};

// Two-sided Student-t quantile t_{(1+level)/2, df}. Uses the embedded table
// for level 0.95 and df <= 29.
double t_quantile(double level, int df);

// mean +/- t * sd / sqrt(n) with the (n-1) sample standard deviation.
IntervalEstimate confidence_interval(std::span<const double> values, double level = 0.95);

}  // namespace mialab::metrics
