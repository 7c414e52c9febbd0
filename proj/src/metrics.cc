#include "rxnpt/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace rxnpt {
namespace {

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

ClassCounts check_binary(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  ClassCounts c;
  for (double y : labels) {
    if (y == 1.0) {
      ++c.positives;
    } else if (y == 0.0) {
      ++c.negatives;
    } else {
      throw std::invalid_argument("labels must be 0 or 1");
    }
  }
  if (c.positives == 0 || c.negatives == 0) {
    throw UndefinedMetric("labels contain a single class");
  }
  return c;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return order;
}

}  // namespace

double rmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw std::invalid_argument("predictions and targets differ in length");
  }
  if (predictions.empty()) throw UndefinedMetric("rmse of an empty set");
  double sum = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(predictions.size()));
}

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  const ClassCounts c = check_binary(scores, labels);
  const auto order = order_by_score(scores, false);
  // Sum of average ranks of the positives (Mann-Whitney U).
  double positive_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1.0) positive_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(c.positives);
  const double n = static_cast<double>(c.negatives);
  return (positive_rank_sum - p * (p + 1) / 2) / (p * n);
}

double prc_auc(std::span<const double> scores, std::span<const double> labels) {
  const ClassCounts c = check_binary(scores, labels);
  const auto order = order_by_score(scores, true);
  double ap = 0;
  double prev_recall = 0;
  std::size_t true_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1.0) ++true_pos;
    }
    const double precision = static_cast<double>(true_pos) / static_cast<double>(j + 1);
    const double recall = static_cast<double>(true_pos) / static_cast<double>(c.positives);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

double multi_task_average(std::span<const std::optional<double>> per_task) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto &v : per_task) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) throw UndefinedMetric("no task has a defined metric");
  return sum / static_cast<double>(n);
}

}  // namespace rxnpt
