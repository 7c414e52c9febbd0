#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rxnpt {

enum class Direction { kHigherIsBetter, kLowerIsBetter };
enum class Alternative { kTreatedBetter, kTwoSided };

// Per-fold metric pairs of two models evaluated on identical test folds.
struct PairedFoldResults {
  std::string dataset;
  std::string metric;
  Direction direction = Direction::kHigherIsBetter;
  std::vector<double> baseline;
  std::vector<double> treated;

  // treated - baseline, sign-flipped for lower-is-better metrics, so positive
  // always means the treated model did better.
  std::vector<double> differences() const;
};

class DegenerateComparison : public std::runtime_error {
public:
  DegenerateComparison() : std::runtime_error("degenerate comparison: all differences are zero") {}
};

enum class WilcoxonMethod { kExact, kNormal };

struct WilcoxonOutcome {
  double w_plus = 0;
  double w_minus = 0;
  double p_value = 1;
  std::size_t n_effective = 0;
  std::size_t n_zero = 0;
  WilcoxonMethod method = WilcoxonMethod::kExact;
};

// Largest n_effective handled by exact enumeration.
inline constexpr std::size_t kExactWilcoxonLimit = 20;

// Signed-rank test on differences where positive favours the treated model.
// Zero differences are dropped, tied magnitudes get average ranks.
WilcoxonOutcome wilcoxon_signed_rank(std::span<const double> differences,
                                     Alternative alternative = Alternative::kTreatedBetter);
WilcoxonOutcome wilcoxon_signed_rank(const PairedFoldResults &pairs,
                                     Alternative alternative = Alternative::kTreatedBetter);

// Average ranks (1-based) of |d| over the nonzero differences, in input order.
std::vector<double> signed_rank_magnitudes(std::span<const double> nonzero_differences);

// (W+ - W-) / (W+ + W-).
double rank_biserial(std::span<const double> differences);
double rank_biserial(const PairedFoldResults &pairs);

double bonferroni_level(double alpha, int m);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation (n - 1)
};
MeanStd mean_std(std::span<const double> values);

}  // namespace rxnpt
