#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rxnpt/model.h"
#include "rxnpt/training.h"

namespace rxnpt {

inline constexpr const char *kToolVersion = "0.1.0";

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct StatsConfig {
  double alpha = 0.05;
  bool two_sided = false;
  int n_folds = 10;
  // Datasets in the Bonferroni family; 0 means the number of configured datasets.
  int comparisons = 0;
  bool lr_search = true;
  int lr_search_runs = 20;
  double lr_min = 1e-6;
  double lr_max = 1e-3;
  // Per-run budget while searching.
  int tuning_epochs = 50;
  std::int64_t tuning_max_steps = 0;

  friend bool operator==(const StatsConfig &, const StatsConfig &) = default;
};

struct DatasetSpec {
  std::string name;  // defaults to the file stem
  std::string path;
  std::string task = "regression";  // or "classification"
  std::string metric;               // "rmse", "roc_auc" or "prc_auc"; empty picks by task
  int tuning_epochs = 0;            // overrides stats.tuning_epochs when > 0

  friend bool operator==(const DatasetSpec &, const DatasetSpec &) = default;
};

struct DataConfig {
  std::string corpus;
  std::string validation_corpus;
  std::size_t max_fragment_length = 157;
  std::string checkpoint;  // pre-trained model for finetune / compare
  std::vector<DatasetSpec> datasets;

  friend bool operator==(const DataConfig &, const DataConfig &) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig pretrain = pretrain_defaults();
  TrainConfig finetune = finetune_defaults();
  StatsConfig stats;
  DataConfig data;
  std::uint64_t seed = 0;

  friend bool operator==(const RunConfig &, const RunConfig &) = default;
};

nlohmann::json to_json(const ModelConfig &cfg);
ModelConfig model_config_from_json(const nlohmann::json &j);

nlohmann::json to_json(const TrainConfig &cfg);
TrainConfig train_config_from_json(const nlohmann::json &j, TrainConfig defaults);

nlohmann::json to_json(const RunConfig &cfg);
// Missing fields keep their defaults; unknown keys throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json &j);
RunConfig load_run_config(const std::string &path);

// Content hash of the fully resolved config.
std::string run_config_hash(const RunConfig &cfg);

TaskType task_type(const DatasetSpec &spec);
std::string metric_name(const DatasetSpec &spec);
bool metric_higher_is_better(const std::string &metric);

}  // namespace rxnpt
