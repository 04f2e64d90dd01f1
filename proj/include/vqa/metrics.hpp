#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/logistic.hpp"
#include "vqa/types.hpp"

// Rank-correlation and regression metrics between objective predictions and
// subjective scores. Conventions:
//   - srocc: Pearson correlation of fractional ranks (ties get average ranks)
//   - krocc: tau-b, tie-corrected
//   - plcc/rmse: on raw or logistic-calibrated predictions (see logistic.hpp)
// Correlations on constant inputs are undefined and throw
// UndefinedCorrelationError instead of returning a sentinel.

namespace vqa {

/// 1-based ranks; tied values share the average of their rank range.
template <class Scalar>
VectorX<Scalar> fractional_ranks(const VectorX<Scalar>& v) {
  const Index n = v.size();
  if (n == 0) throw DomainError("fractional_ranks: empty input");
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index(0));
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return v[a] < v[b]; });
  VectorX<Scalar> ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const Scalar avg = (Scalar(i) + Scalar(j)) / Scalar(2) + Scalar(1);
    for (Index k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

template <class Scalar>
Scalar pearson(const VectorX<Scalar>& a, const VectorX<Scalar>& b) {
  if (a.size() != b.size()) throw ShapeError("pearson: input sizes differ");
  const Index n = a.size();
  if (n < 2) throw DomainError("pearson: needs at least 2 points");
  const VectorX<Scalar> ca = a.array() - a.mean();
  const VectorX<Scalar> cb = b.array() - b.mean();
  const Scalar na = ca.squaredNorm(), nb = cb.squaredNorm();
  if (na == Scalar(0) || nb == Scalar(0))
    throw UndefinedCorrelationError("pearson: undefined for a constant input");
  // Single square root of the product: identical inputs come out at exactly 1.
  const Scalar prod = na * nb;
  const Scalar denom =
      std::isfinite(prod) ? std::sqrt(prod) : std::sqrt(na) * std::sqrt(nb);
  const Scalar r = ca.dot(cb) / denom;
  return std::clamp(r, Scalar(-1), Scalar(1));
}

/// Spearman rank-order correlation.
template <class Scalar>
Scalar srocc(const VectorX<Scalar>& objective, const VectorX<Scalar>& subjective) {
  if (objective.size() != subjective.size())
    throw ShapeError("srocc: input sizes differ");
  if (objective.size() < 2) throw DomainError("srocc: needs at least 2 points");
  return pearson(fractional_ranks(objective), fractional_ranks(subjective));
}

/// Kendall rank-order correlation, tau-b (tie-corrected).
template <class Scalar>
Scalar krocc(const VectorX<Scalar>& objective, const VectorX<Scalar>& subjective) {
  if (objective.size() != subjective.size())
    throw ShapeError("krocc: input sizes differ");
  const Index n = objective.size();
  if (n < 2) throw DomainError("krocc: needs at least 2 points");
  long long concordant = 0, discordant = 0, ties_obj = 0, ties_sub = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const bool to = objective[i] == objective[j];
      const bool ts = subjective[i] == subjective[j];
      if (to) ++ties_obj;
      if (ts) ++ties_sub;
      if (to || ts) continue;
      if ((objective[i] < objective[j]) == (subjective[i] < subjective[j])) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const long long pairs = static_cast<long long>(n) * (n - 1) / 2;
  if (ties_obj == pairs || ties_sub == pairs)
    throw UndefinedCorrelationError("krocc: undefined for a constant input");
  const Scalar denom =
      std::sqrt(Scalar(pairs - ties_obj) * Scalar(pairs - ties_sub));
  return Scalar(concordant - discordant) / denom;
}

template <class Scalar>
Scalar rmse(const VectorX<Scalar>& a, const VectorX<Scalar>& b) {
  if (a.size() != b.size()) throw ShapeError("rmse: input sizes differ");
  if (a.size() == 0) throw DomainError("rmse: empty input");
  return std::sqrt((a - b).squaredNorm() / Scalar(a.size()));
}

/// Pearson correlation and RMSE of the predictions against the subjective
/// scores, optionally after fitting the 4-parameter logistic calibration on
/// these very pairs.
template <class Scalar>
std::pair<Scalar, Scalar> plcc_rmse(const VectorX<Scalar>& objective,
                                    const VectorX<Scalar>& subjective,
                                    bool apply_mapping) {
  if (!apply_mapping)
    return {pearson(objective, subjective), rmse(objective, subjective)};
  const auto fit = fit_logistic(objective, subjective);
  const VectorX<Scalar> mapped = logistic_eval(fit.params, objective);
  return {pearson(mapped, subjective), rmse(mapped, subjective)};
}

/// Same, with a calibration fitted elsewhere (e.g. on a different subset).
template <class Scalar>
std::pair<Scalar, Scalar> plcc_rmse(const VectorX<Scalar>& objective,
                                    const VectorX<Scalar>& subjective,
                                    const LogisticParams<Scalar>& mapping) {
  const VectorX<Scalar> mapped = logistic_eval(mapping, objective);
  return {pearson(mapped, subjective), rmse(mapped, subjective)};
}

/// Size-weighted aggregate of per-dataset metric values.
template <class Scalar>
Scalar weighted_overall(const std::vector<std::pair<Scalar, Index>>& value_and_size) {
  if (value_and_size.empty()) throw DomainError("weighted_overall: no entries");
  Scalar num = Scalar(0);
  Scalar den = Scalar(0);
  for (const auto& [value, size] : value_and_size) {
    if (size <= 0) throw DomainError("weighted_overall: dataset size must be positive");
    num += value * Scalar(size);
    den += Scalar(size);
  }
  return num / den;
}

}  // namespace vqa
