#include "rxnpt/stats.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rxnpt {
namespace {

std::vector<double> nonzero(std::span<const double> d) {
  std::vector<double> out;
  for (double v : d) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite paired difference");
    if (v != 0.0) out.push_back(v);
  }
  return out;
}

// Number of sign patterns whose doubled positive rank sum equals s, for all s.
std::vector<double> doubled_rank_sum_counts(const std::vector<long> &doubled_ranks) {
  long total = 0;
  for (long r : doubled_ranks) total += r;
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled_ranks) {
    for (long s = reach; s >= 0; --s) {
      if (counts[s] != 0.0) counts[s + r] += counts[s];
    }
    reach += r;
  }
  return counts;
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

std::vector<double> PairedFoldResults::differences() const {
  if (baseline.size() != treated.size()) {
    throw std::invalid_argument("paired results differ in length");
  }
  std::vector<double> d(baseline.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = direction == Direction::kHigherIsBetter ? treated[i] - baseline[i]
                                                   : baseline[i] - treated[i];
  }
  return d;
}

std::vector<double> signed_rank_magnitudes(std::span<const double> d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> ranks(d.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

WilcoxonOutcome wilcoxon_signed_rank(std::span<const double> differences,
                                     Alternative alternative) {
  const std::vector<double> d = nonzero(differences);
  WilcoxonOutcome out;
  out.n_effective = d.size();
  out.n_zero = differences.size() - d.size();
  if (d.empty()) throw DegenerateComparison();

  const std::vector<double> ranks = signed_rank_magnitudes(d);
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? out.w_plus : out.w_minus) += ranks[i];

  const std::size_t n = d.size();
  double upper = 0;  // P(W+ >= observed)
  double lower = 0;  // P(W+ <= observed)
  if (n <= kExactWilcoxonLimit) {
    out.method = WilcoxonMethod::kExact;
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    std::vector<long> doubled(n);
    for (std::size_t i = 0; i < n; ++i) doubled[i] = std::lround(2 * ranks[i]);
    const long observed = std::lround(2 * out.w_plus);
    const auto counts = doubled_rank_sum_counts(doubled);
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    double ge = 0, le = 0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      if (static_cast<long>(s) >= observed) ge += counts[s];
      if (static_cast<long>(s) <= observed) le += counts[s];
    }
    upper = ge / patterns;
    lower = le / patterns;
  } else {
    out.method = WilcoxonMethod::kNormal;
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4;
    double tie_term = 0;
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie_term / 48;
    const double z = (out.w_plus - mean) / std::sqrt(var);
    upper = normal_upper_tail(z);
    lower = normal_upper_tail(-z);
  }
  out.p_value = alternative == Alternative::kTreatedBetter ? upper
                                                           : std::min(1.0, 2 * std::min(upper, lower));
  return out;
}

WilcoxonOutcome wilcoxon_signed_rank(const PairedFoldResults &pairs, Alternative alternative) {
  const auto d = pairs.differences();
  return wilcoxon_signed_rank(d, alternative);
}

double rank_biserial(std::span<const double> differences) {
  const WilcoxonOutcome w = wilcoxon_signed_rank(differences);
  return (w.w_plus - w.w_minus) / (w.w_plus + w.w_minus);
}

double rank_biserial(const PairedFoldResults &pairs) {
  const auto d = pairs.differences();
  return rank_biserial(d);
}

double bonferroni_level(double alpha, int m) {
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (m < 1) throw std::invalid_argument("the number of comparisons must be at least 1");
  return alpha / m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace rxnpt
