#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rxnpt/config.h"
#include "rxnpt/reaction_data.h"
#include "rxnpt/stats.h"
#include "rxnpt/training.h"

namespace rxnpt {

class CrossvalError : public std::runtime_error {
public:
  CrossvalError(std::string dataset, int rotation, const std::string &what);
  int rotation() const { return rotation_; }

private:
  int rotation_;
};

// One fine-tuning run of one arm on one rotation.
struct ArmRun {
  double lr = 0;
  double test_metric = 0;
  double best_val_loss = 0;
  double best_val_metric = 0;
  std::int64_t best_step = 0;
  std::int64_t steps = 0;
  RunLog log;
  std::optional<Checkpoint> best;  // kept when CrossvalSettings::keep_checkpoints
};

struct DatasetComparison {
  PairedFoldResults pairs;  // baseline = random init, treated = pre-trained
  std::vector<ArmRun> baseline_runs;
  std::vector<ArmRun> treated_runs;
  MeanStd baseline;
  MeanStd treated;
  std::optional<WilcoxonOutcome> wilcoxon;
  std::optional<double> rank_biserial;
  bool significant = false;
  std::string note;  // e.g. "degenerate comparison"
};

struct ComparisonReport {
  double alpha = 0.05;
  int comparisons = 1;
  double level = 0.05;
  bool two_sided = false;
  nlohmann::json provenance = nlohmann::json::object();  // config hash, seed, version
  std::vector<DatasetComparison> rows;

  nlohmann::json to_json() const;
  // Aligned plain-text table: dataset, metric, both arms as mean ± std,
  // p-value, rank-biserial, significance at the corrected level.
  std::string to_text() const;
  // dataset,fold,baseline,treated
  std::string folds_csv() const;
};

struct CrossvalSettings {
  ModelConfig model;
  TrainConfig finetune = finetune_defaults();
  StatsConfig stats;
  std::uint64_t seed = 0;
  bool keep_checkpoints = false;
  std::function<void(const std::string &)> progress;
};

// Random folds, stratified on the label for single-task classification.
FoldPlan comparison_fold_plan(const PropertyDataset &data, const DatasetSpec &spec,
                              const CrossvalSettings &s);

// Learning-rate search (when enabled) and fine-tuning of one arm on one
// rotation, scored on the rotation's test fold. `init` nullptr is random init.
ArmRun run_rotation(const PropertyDataset &data, const DatasetSpec &spec, const FoldPlan &plan,
                    int rotation, const Checkpoint *init, const CrossvalSettings &s);

// Runs every rotation of the fold plan for both arms and pairs the test-fold
// metrics.
DatasetComparison compare_on_dataset(const PropertyDataset &data, const DatasetSpec &spec,
                                     const Checkpoint &pretrained, const CrossvalSettings &s);

// Bonferroni family size: stats.comparisons when set, else the number of
// datasets.
ComparisonReport run_crossval_comparison(const std::vector<PropertyDataset> &datasets,
                                         const std::vector<DatasetSpec> &specs,
                                         const Checkpoint &pretrained,
                                         const CrossvalSettings &s);

// Completes a row's statistics from its pairs at the given level.
void finish_comparison(DatasetComparison &row, double level, Alternative alternative);

}  // namespace rxnpt
