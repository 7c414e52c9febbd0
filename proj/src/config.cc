#include "rxnpt/config.h"

#include <fstream>
#include <set>

#include <fmt/core.h>

#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

using nlohmann::json;

// Reads the keys of one JSON object section and rejects anything left over.
class Section {
public:
  Section(const json &j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected a JSON object", name_));
  }

  template <typename T>
  void read(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception &) {
      throw ConfigError(fmt::format("{}.{}: wrong type ({})", name_, key, j_.at(key).dump()));
    }
  }

  const json *sub(const char *key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char *key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto &[key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown key '{}.{}'", name_, key));
    }
  }

private:
  const json &j_;
  std::string name_;
  std::set<std::string> seen_;
};

ModelConfig read_model(const json &j, const std::string &name) {
  ModelConfig c;
  Section s(j, name);
  s.read("layers", c.layers);
  s.read("heads", c.heads);
  s.read("width", c.width);
  s.read("ff_width", c.ff_width);
  s.read("vocab", c.vocab);
  s.read("max_length", c.max_length);
  s.read("dropout", c.dropout);
  s.read("mlp_hidden", c.mlp_hidden);
  s.read("tasks", c.tasks);
  s.read("strict_mean", c.strict_mean);
  s.read("role_tokens", c.role_tokens);
  s.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(fmt::format("{}: {}", name, e.what()));
  }
  return c;
}

TrainConfig read_train(const json &j, TrainConfig c, const std::string &name) {
  Section s(j, name);
  s.read("batch_size", c.batch_size);
  s.read("epochs", c.epochs);
  s.read("max_steps", c.max_steps);
  s.read("base_lr", c.base_lr);
  s.read("max_lr", c.max_lr);
  s.read("cycle_steps", c.cycle_steps);
  std::string schedule = c.schedule == Schedule::kCosine ? "cosine" : "constant";
  s.read("schedule", schedule);
  if (schedule == "cosine") {
    c.schedule = Schedule::kCosine;
  } else if (schedule == "constant") {
    c.schedule = Schedule::kConstant;
  } else {
    throw ConfigError(fmt::format("{}: schedule must be \"cosine\" or \"constant\"",
                                  s.path("schedule")));
  }
  s.read("lr", c.lr);
  s.read("early_stopping", c.early_stopping);
  s.read("patience", c.patience);
  s.read("eval_every", c.eval_every);
  s.read("early_stop_metric", c.early_stop_metric);
  if (const json *a = s.sub("adamw")) {
    Section as(*a, s.path("adamw"));
    as.read("beta1", c.adamw.beta1);
    as.read("beta2", c.adamw.beta2);
    as.read("eps", c.adamw.eps);
    as.read("weight_decay", c.adamw.weight_decay);
    as.finish();
  }
  s.read("grad_clip", c.grad_clip);
  s.read("augment", c.augment);
  s.read("rerandomize_each_epoch", c.rerandomize_each_epoch);
  s.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(fmt::format("{}: {}", name, e.what()));
  }
  return c;
}

StatsConfig read_stats(const json &j) {
  StatsConfig c;
  Section s(j, "stats");
  s.read("alpha", c.alpha);
  s.read("two_sided", c.two_sided);
  s.read("n_folds", c.n_folds);
  s.read("comparisons", c.comparisons);
  s.read("lr_search", c.lr_search);
  s.read("lr_search_runs", c.lr_search_runs);
  s.read("lr_min", c.lr_min);
  s.read("lr_max", c.lr_max);
  s.read("tuning_epochs", c.tuning_epochs);
  s.read("tuning_max_steps", c.tuning_max_steps);
  s.finish();
  if (!(c.alpha > 0 && c.alpha < 1)) throw ConfigError("stats.alpha must lie in (0, 1)");
  if (c.n_folds < 3) throw ConfigError("stats.n_folds must be at least 3");
  if (c.comparisons < 0) throw ConfigError("stats.comparisons must be non-negative");
  if (c.lr_search_runs < 1) throw ConfigError("stats.lr_search_runs must be at least 1");
  if (!(c.lr_min > 0 && c.lr_min <= c.lr_max)) {
    throw ConfigError("stats.lr_min and stats.lr_max must satisfy 0 < lr_min <= lr_max");
  }
  return c;
}

DatasetSpec read_dataset(const json &j, const std::string &name) {
  DatasetSpec d;
  Section s(j, name);
  s.read("name", d.name);
  s.read("path", d.path);
  s.read("task", d.task);
  s.read("metric", d.metric);
  s.read("tuning_epochs", d.tuning_epochs);
  s.finish();
  if (d.path.empty()) throw ConfigError(name + ".path is required");
  (void)task_type(d);
  (void)metric_name(d);
  return d;
}

DataConfig read_data(const json &j) {
  DataConfig c;
  Section s(j, "data");
  s.read("corpus", c.corpus);
  s.read("validation_corpus", c.validation_corpus);
  s.read("max_fragment_length", c.max_fragment_length);
  s.read("checkpoint", c.checkpoint);
  if (const json *ds = s.sub("datasets")) {
    if (!ds->is_array()) throw ConfigError("data.datasets: expected an array");
    for (std::size_t i = 0; i < ds->size(); ++i) {
      c.datasets.push_back(read_dataset((*ds)[i], fmt::format("data.datasets[{}]", i)));
    }
  }
  s.finish();
  return c;
}

}  // namespace

json to_json(const ModelConfig &c) {
  return {{"layers", c.layers},     {"heads", c.heads},
          {"width", c.width},       {"ff_width", c.ff_width},
          {"vocab", c.vocab},       {"max_length", c.max_length},
          {"dropout", c.dropout},   {"mlp_hidden", c.mlp_hidden},
          {"tasks", c.tasks},       {"strict_mean", c.strict_mean},
          {"role_tokens", c.role_tokens}};
}

ModelConfig model_config_from_json(const json &j) { return read_model(j, "model"); }

json to_json(const TrainConfig &c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"base_lr", c.base_lr},
          {"max_lr", c.max_lr},
          {"cycle_steps", c.cycle_steps},
          {"schedule", c.schedule == Schedule::kCosine ? "cosine" : "constant"},
          {"lr", c.lr},
          {"early_stopping", c.early_stopping},
          {"patience", c.patience},
          {"eval_every", c.eval_every},
          {"early_stop_metric", c.early_stop_metric},
          {"adamw",
           {{"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay}}},
          {"grad_clip", c.grad_clip},
          {"augment", c.augment},
          {"rerandomize_each_epoch", c.rerandomize_each_epoch}};
}

TrainConfig train_config_from_json(const json &j, TrainConfig defaults) {
  return read_train(j, std::move(defaults), "train");
}

json to_json(const RunConfig &c) {
  json datasets = json::array();
  for (const auto &d : c.data.datasets) {
    datasets.push_back({{"name", d.name},
                        {"path", d.path},
                        {"task", d.task},
                        {"metric", d.metric},
                        {"tuning_epochs", d.tuning_epochs}});
  }
  return {{"model", to_json(c.model)},
          {"pretrain", to_json(c.pretrain)},
          {"finetune", to_json(c.finetune)},
          {"stats",
           {{"alpha", c.stats.alpha},
            {"two_sided", c.stats.two_sided},
            {"n_folds", c.stats.n_folds},
            {"comparisons", c.stats.comparisons},
            {"lr_search", c.stats.lr_search},
            {"lr_search_runs", c.stats.lr_search_runs},
            {"lr_min", c.stats.lr_min},
            {"lr_max", c.stats.lr_max},
            {"tuning_epochs", c.stats.tuning_epochs},
            {"tuning_max_steps", c.stats.tuning_max_steps}}},
          {"data",
           {{"corpus", c.data.corpus},
            {"validation_corpus", c.data.validation_corpus},
            {"max_fragment_length", c.data.max_fragment_length},
            {"checkpoint", c.data.checkpoint},
            {"datasets", datasets}}},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const json &j) {
  RunConfig c;
  Section s(j, "config");
  if (const json *m = s.sub("model")) c.model = read_model(*m, "model");
  if (const json *p = s.sub("pretrain")) c.pretrain = read_train(*p, c.pretrain, "pretrain");
  if (const json *f = s.sub("finetune")) c.finetune = read_train(*f, c.finetune, "finetune");
  if (const json *st = s.sub("stats")) c.stats = read_stats(*st);
  if (const json *d = s.sub("data")) c.data = read_data(*d);
  s.read("seed", c.seed);
  s.finish();
  return c;
}

RunConfig load_run_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError(fmt::format("config file '{}' is not valid JSON: {}", path, e.what()));
  }
  return run_config_from_json(j);
}

std::string run_config_hash(const RunConfig &cfg) {
  return fmt::format("{:016x}", fnv1a64(to_json(cfg).dump()));
}

TaskType task_type(const DatasetSpec &spec) {
  if (spec.task == "regression") return TaskType::kRegression;
  if (spec.task == "classification") return TaskType::kClassification;
  throw ConfigError(fmt::format("dataset '{}': task must be \"regression\" or \"classification\"",
                                spec.path));
}

std::string metric_name(const DatasetSpec &spec) {
  const TaskType task = task_type(spec);
  if (spec.metric.empty()) return task == TaskType::kRegression ? "rmse" : "roc_auc";
  const bool ok = task == TaskType::kRegression
                      ? spec.metric == "rmse"
                      : (spec.metric == "roc_auc" || spec.metric == "prc_auc");
  if (!ok) {
    throw ConfigError(fmt::format("dataset '{}': metric '{}' does not fit task '{}'", spec.path,
                                  spec.metric, spec.task));
  }
  return spec.metric;
}

bool metric_higher_is_better(const std::string &metric) { return metric != "rmse"; }

}  // namespace rxnpt
