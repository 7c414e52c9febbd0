#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace rxnpt {

class UndefinedMetric : public std::runtime_error {
public:
  explicit UndefinedMetric(const std::string &what)
      : std::runtime_error("undefined metric: " + what) {}
};

double rmse(std::span<const double> predictions, std::span<const double> targets);

// Probability that a random positive outscores a random negative; tied scores
// count one half. Labels are 0 or 1.
double roc_auc(std::span<const double> scores, std::span<const double> labels);

// Average precision: sum over score thresholds of (R_k - R_{k-1}) * P_k.
double prc_auc(std::span<const double> scores, std::span<const double> labels);

// Unweighted mean of the defined entries.
double multi_task_average(std::span<const std::optional<double>> per_task);

}  // namespace rxnpt
