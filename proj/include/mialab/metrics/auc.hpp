#pragma once

#include <optional>
#include <span>
#include <vector>

namespace mialab::metrics {

struct ScoredLabel {
  double score = 0.0;
  bool member = false;
};

// Rank-based (Mann-Whitney) ROC AUC with ties counted as 1/2. Data error if
// either class is missing or a score is not finite.
double roc_auc(std::span<const ScoredLabel> sl);

// Midranks (1-based) of values, ties averaged.
std::vector<double> midranks(std::span<const double> values);

// Spearman rank correlation; nullopt when fewer than two points or either
// side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace mialab::metrics
