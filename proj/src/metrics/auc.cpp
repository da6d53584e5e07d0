#include "mialab/metrics/auc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mialab/error.hpp"

namespace mialab::metrics {

std::vector<double> midranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share rank ((i+1)+(j+1))/2
    const double r = 0.5 * static_cast<double>(i + j + 2);
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double roc_auc(std::span<const ScoredLabel> sl) {
  std::vector<double> scores;
  scores.reserve(sl.size());
  double n_pos = 0, n_neg = 0;
  for (const auto& s : sl) {
    if (!std::isfinite(s.score)) fail(ErrorKind::kData, "non-finite score");
    scores.push_back(s.score);
    (s.member ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::kData, "AUC needs at least one member and one non-member");
  const auto ranks = midranks(scores);
  double rank_sum = 0;
  for (size_t i = 0; i < sl.size(); ++i)
    if (sl[i].member) rank_sum += ranks[i];
  // U = concordant pairs + ties/2, exact in double (half-integers)
  const double u = rank_sum - n_pos * (n_pos + 1) / 2.0;
  return u / (n_pos * n_neg);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::kDimension, "spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = midranks(x), ry = midranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace mialab::metrics
