#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rxnpt/checkpoint.h"
#include "rxnpt/model.h"
#include "rxnpt/optim.h"
#include "rxnpt/reaction_data.h"

namespace rxnpt {

enum class Schedule { kCosine, kConstant };

struct TrainConfig {
  int batch_size = 64;
  int epochs = 50;
  std::int64_t max_steps = 0;  // 0: no cap beyond epochs
  double base_lr = 1e-5;
  double max_lr = 5e-4;
  std::int64_t cycle_steps = 0;  // 0: one cycle per epoch
  Schedule schedule = Schedule::kCosine;
  double lr = 1e-4;  // used by the constant schedule
  bool early_stopping = true;
  int patience = 40;  // update steps without improvement
  int eval_every = 1;  // update steps between validations; 0: once per epoch
  // "auto", "loss" or "roc_auc".
  std::string early_stop_metric = "auto";
  AdamWConfig adamw;
  double grad_clip = 1.0;  // 0 disables clipping
  bool augment = true;
  bool rerandomize_each_epoch = true;
  // Set by the caller from the run's root seed; not part of the JSON config.
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

TrainConfig pretrain_defaults();
TrainConfig finetune_defaults();

// lr(t) = base + (max - base) * (1 - cos(2 pi (t mod T) / T)) / 2
double cosine_cyclic_lr(std::int64_t step, double base_lr, double max_lr, std::int64_t period);
double learning_rate(const TrainConfig &cfg, std::int64_t step, std::int64_t steps_per_epoch);

class EarlyStopper {
public:
  EarlyStopper(int patience, bool higher_is_better);

  // Records a validation value; returns true when it is a new best.
  bool update(std::int64_t step, double value);
  bool should_stop(std::int64_t step) const;

  bool has_best() const { return best_step_ >= 0; }
  std::int64_t best_step() const { return best_step_; }
  double best_value() const { return best_value_; }
  bool higher_is_better() const { return higher_is_better_; }
  void restore(std::int64_t best_step, double best_value);

private:
  int patience_;
  bool higher_is_better_;
  std::int64_t best_step_ = -1;
  double best_value_ = 0;
};

struct LogEvent {
  std::int64_t step;
  std::string kind;
  double value;

  friend bool operator==(const LogEvent &, const LogEvent &) = default;
};

class RunLog {
public:
  void add(std::int64_t step, std::string kind, double value);
  void mark_best(std::int64_t step, double value, std::string checkpoint);

  const std::vector<LogEvent> &events() const { return events_; }
  std::vector<double> series(const std::string &kind) const;
  std::int64_t best_step() const { return best_step_; }
  double best_value() const { return best_value_; }
  const std::string &best_checkpoint() const { return best_checkpoint_; }

  nlohmann::json meta = nlohmann::json::object();

  // One JSON object per line, the first carrying `meta`.
  void write_jsonl(const std::filesystem::path &path) const;
  nlohmann::json to_json() const;
  static RunLog from_json(const nlohmann::json &j);

private:
  std::vector<LogEvent> events_;
  std::int64_t best_step_ = -1;
  double best_value_ = 0;
  std::string best_checkpoint_;
};

class NonFiniteLoss : public std::runtime_error {
public:
  NonFiniteLoss(std::int64_t step, std::vector<std::size_t> reaction_ids);
  std::int64_t step() const { return step_; }
  const std::vector<std::size_t> &reaction_ids() const { return reaction_ids_; }

private:
  std::int64_t step_;
  std::vector<std::size_t> reaction_ids_;
};

// ---------------------------------------------------------------------------
// Pre-training

struct PretrainOptions {
  // Checkpoints and the run log land here when set.
  std::optional<std::filesystem::path> out_dir;
  // Training state from pretrain_state() of an interrupted run.
  const Checkpoint *resume = nullptr;
  // Stop once this many update steps have been taken in total (0: no limit).
  std::int64_t stop_after = 0;
  std::function<void(std::int64_t step, double loss)> on_step;
  // Copied into the run log header and every checkpoint written.
  nlohmann::json provenance = nlohmann::json::object();
};

struct PretrainResult {
  ReactionModel model;      // parameters after the last step
  Checkpoint best;          // best-validation parameters
  Checkpoint state;         // resumable training state
  RunLog log;
  std::int64_t steps = 0;
  bool finished = false;    // false when halted by stop_after
};

// Teacher-forced next-token training of `model` on `train`. Validation loss is
// computed on `validation` (the training corpus when empty).
PretrainResult pretrain(ReactionModel model, const std::vector<Reaction> &train,
                        const std::vector<Reaction> &validation, const TrainConfig &cfg,
                        const PretrainOptions &options = {});

ReactionInput reaction_input(const Reaction &r);
// Token-weighted cross-entropy and next-token accuracy of the model on a
// corpus, in evaluation mode.
struct TeacherForcedScore {
  double loss = 0;
  double accuracy = 0;
  std::size_t tokens = 0;
};
TeacherForcedScore teacher_forced_score(const ReactionModel &model,
                                        const std::vector<Reaction> &reactions);

// ---------------------------------------------------------------------------
// Fine-tuning

enum class TaskType { kRegression, kClassification };

struct PropertySplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct FinetuneResult {
  PropertyModel model;  // best-validation parameters
  Checkpoint best;
  RunLog log;
  double best_metric = 0;  // early-stopping metric at the best step
  double best_val_loss = 0;
  std::int64_t best_step = 0;
  std::int64_t steps = 0;
};

// Trains a property model on `split.train`, early-stopping on
// `split.validation`. `init` supplies encoder weights; nullptr means random
// initialisation.
FinetuneResult finetune(const PropertyDataset &data, const PropertySplit &split, TaskType task,
                        const ModelConfig &model_cfg, const TrainConfig &cfg,
                        const Checkpoint *init, std::uint64_t init_seed);

// Fine-tunes on a fold rotation: training folds to learn, validation fold to
// stop.
FinetuneResult finetune(const PropertyDataset &data, const FoldPlan &plan, int rotation,
                        TaskType task, const ModelConfig &model_cfg, const TrainConfig &cfg,
                        const Checkpoint *init, std::uint64_t init_seed);

struct PropertyEval {
  double loss = 0;  // MSE or BCE over present labels
  std::vector<std::optional<double>> per_task;  // RMSE, ROC-AUC or PRC-AUC
};
PropertyEval evaluate_property(const PropertyModel &model, const PropertyDataset &data,
                               const std::vector<std::size_t> &indices, TaskType task,
                               const std::string &metric);

// ---------------------------------------------------------------------------
// Learning-rate search

struct LrSearchResult {
  double best_lr = 0;
  std::vector<double> rates;
  std::vector<double> scores;
};

// Samples n_runs rates log-uniformly in [lo, hi] and keeps the best score.
// Ties go to the smaller rate.
LrSearchResult lr_search(const std::function<double(double)> &score, bool higher_is_better,
                         int n_runs, double lo, double hi, std::uint64_t seed);

std::vector<double> sample_learning_rates(int n_runs, double lo, double hi, std::uint64_t seed);

}  // namespace rxnpt
