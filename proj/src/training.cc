#include "rxnpt/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "rxnpt/metrics.h"
#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::int64_t total_steps(const TrainConfig &cfg, std::int64_t steps_per_epoch) {
  std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  return total;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::string_view tag,
                                     std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, tag, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TokenSequence canonical_product_tokens(const Reaction &r) {
  return tokenize(write_canonical(parse_smiles(r.product)));
}

TeacherForcedScore score_with_products(const ReactionModel &model,
                                       const std::vector<Reaction> &reactions,
                                       const std::vector<TokenSequence> &products) {
  TeacherForcedScore out;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < reactions.size(); ++i) {
    const ReactionVector memory = model.encode_reaction(reaction_input(reactions[i]));
    TokenSequence in;
    in.ids.push_back(kBosId);
    in.ids.insert(in.ids.end(), products[i].ids.begin(), products[i].ids.end());
    std::vector<int> target(products[i].ids.begin(), products[i].ids.end());
    target.push_back(kEosId);
    const Tensor logits = model.decode_teacher_forced(memory, in);
    const CrossEntropy ce = softmax_cross_entropy(logits, target, kPadId);
    loss_sum += static_cast<double>(ce.loss) * static_cast<double>(ce.counted);
    out.tokens += ce.counted;
    for (std::size_t j = 0; j < target.size(); ++j) {
      auto row = logits.row(j);
      const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == target[j]) ++correct;
    }
  }
  if (out.tokens > 0) {
    out.loss = loss_sum / static_cast<double>(out.tokens);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.tokens);
  }
  return out;
}

std::string metric_file_tag(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

// ---------------------------------------------------------------------------
// Config and schedule

void TrainConfig::validate() const {
  auto fail = [](const std::string &what) { throw std::invalid_argument(what); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (!(base_lr > 0 && base_lr <= max_lr)) fail("learning rates must satisfy 0 < base_lr <= max_lr");
  if (cycle_steps != 0 && cycle_steps < 2) fail("cycle_steps must be 0 or >= 2");
  if (!(lr > 0)) fail("lr must be positive");
  if (patience < 1) fail("patience must be >= 1");
  if (eval_every < 0) fail("eval_every must be >= 0");
  if (early_stop_metric != "auto" && early_stop_metric != "loss" &&
      early_stop_metric != "roc_auc") {
    fail("early_stop_metric must be \"auto\", \"loss\" or \"roc_auc\"");
  }
  if (grad_clip < 0) fail("grad_clip must be >= 0");
  if (adamw.weight_decay < 0) fail("adamw.weight_decay must be >= 0");
}

TrainConfig pretrain_defaults() {
  TrainConfig c;
  c.batch_size = 4096;
  c.epochs = 150;
  c.schedule = Schedule::kCosine;
  c.early_stopping = false;
  c.eval_every = 0;
  c.augment = true;
  return c;
}

TrainConfig finetune_defaults() {
  TrainConfig c;
  c.batch_size = 64;
  c.epochs = 50;
  c.schedule = Schedule::kConstant;
  c.early_stopping = true;
  c.patience = 40;
  c.eval_every = 1;
  c.augment = false;
  return c;
}

double cosine_cyclic_lr(std::int64_t step, double base_lr, double max_lr, std::int64_t period) {
  if (period < 2) throw std::invalid_argument("cosine cycle period must be >= 2");
  if (step < 0) throw std::invalid_argument("step must be non-negative");
  const std::int64_t t = step % period;
  if (t == 0) return base_lr;
  if (2 * t == period) return max_lr;
  const double c = std::cos(2 * std::numbers::pi * static_cast<double>(t) /
                            static_cast<double>(period));
  return base_lr + 0.5 * (max_lr - base_lr) * (1 - c);
}

double learning_rate(const TrainConfig &cfg, std::int64_t step, std::int64_t steps_per_epoch) {
  if (cfg.schedule == Schedule::kConstant) return cfg.lr;
  const std::int64_t period =
      cfg.cycle_steps > 0 ? cfg.cycle_steps : std::max<std::int64_t>(2, steps_per_epoch);
  return cosine_cyclic_lr(step, cfg.base_lr, cfg.max_lr, period);
}

// ---------------------------------------------------------------------------
// Early stopping and logs

EarlyStopper::EarlyStopper(int patience, bool higher_is_better)
    : patience_(patience), higher_is_better_(higher_is_better) {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

bool EarlyStopper::update(std::int64_t step, double value) {
  if (std::isnan(value)) return false;
  const bool better = !has_best() || (higher_is_better_ ? value > best_value_ : value < best_value_);
  if (better) {
    best_step_ = step;
    best_value_ = value;
  }
  return better;
}

bool EarlyStopper::should_stop(std::int64_t step) const {
  return has_best() && step - best_step_ >= patience_;
}

void EarlyStopper::restore(std::int64_t best_step, double best_value) {
  best_step_ = best_step;
  best_value_ = best_value;
}

void RunLog::add(std::int64_t step, std::string kind, double value) {
  if (!events_.empty() && step < events_.back().step) {
    throw std::logic_error("run log steps must be monotone");
  }
  events_.push_back({step, std::move(kind), value});
}

void RunLog::mark_best(std::int64_t step, double value, std::string checkpoint) {
  best_step_ = step;
  best_value_ = value;
  best_checkpoint_ = std::move(checkpoint);
  add(step, "best", value);
}

std::vector<double> RunLog::series(const std::string &kind) const {
  std::vector<double> out;
  for (const auto &e : events_) {
    if (e.kind == kind) out.push_back(e.value);
  }
  return out;
}

void RunLog::write_jsonl(const std::filesystem::path &path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write run log '{}'", path.string()));
  nlohmann::json head = meta;
  head["kind"] = "meta";
  out << head.dump() << '\n';
  for (const auto &e : events_) {
    out << nlohmann::json{{"step", e.step}, {"kind", e.kind}, {"value", e.value}}.dump() << '\n';
  }
  if (best_step_ >= 0) {
    out << nlohmann::json{{"step", best_step_},
                          {"kind", "best_checkpoint"},
                          {"value", best_value_},
                          {"path", best_checkpoint_}}
               .dump()
        << '\n';
  }
}

nlohmann::json RunLog::to_json() const {
  nlohmann::json events = nlohmann::json::array();
  for (const auto &e : events_) events.push_back({e.step, e.kind, e.value});
  return {{"meta", meta},
          {"events", events},
          {"best_step", best_step_},
          {"best_value", best_value_},
          {"best_checkpoint", best_checkpoint_}};
}

RunLog RunLog::from_json(const nlohmann::json &j) {
  RunLog log;
  log.meta = j.at("meta");
  for (const auto &e : j.at("events")) {
    log.events_.push_back({e.at(0).get<std::int64_t>(), e.at(1).get<std::string>(),
                           e.at(2).get<double>()});
  }
  log.best_step_ = j.at("best_step").get<std::int64_t>();
  log.best_value_ = j.at("best_value").get<double>();
  log.best_checkpoint_ = j.at("best_checkpoint").get<std::string>();
  return log;
}

NonFiniteLoss::NonFiniteLoss(std::int64_t step, std::vector<std::size_t> reaction_ids)
    : std::runtime_error(fmt::format("non-finite loss at step {} in batch of reactions [{}]", step,
                                     fmt::join(reaction_ids, ", "))),
      step_(step),
      reaction_ids_(std::move(reaction_ids)) {}

// ---------------------------------------------------------------------------
// Pre-training

ReactionInput reaction_input(const Reaction &r) {
  ReactionInput in;
  for (const auto &f : r.reactants) {
    in.fragments.push_back(tokenize(f));
    in.roles.push_back(FragmentRole::kReactant);
  }
  for (const auto &f : r.reagents) {
    in.fragments.push_back(tokenize(f));
    in.roles.push_back(FragmentRole::kReagent);
  }
  return in;
}

TeacherForcedScore teacher_forced_score(const ReactionModel &model,
                                        const std::vector<Reaction> &reactions) {
  std::vector<TokenSequence> products;
  products.reserve(reactions.size());
  for (const auto &r : reactions) products.push_back(canonical_product_tokens(r));
  return score_with_products(model, reactions, products);
}

PretrainResult pretrain(ReactionModel model, const std::vector<Reaction> &train,
                        const std::vector<Reaction> &validation, const TrainConfig &cfg,
                        const PretrainOptions &options) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("pre-training corpus is empty");
  const auto start = Clock::now();
  const std::vector<Reaction> &val = validation.empty() ? train : validation;

  std::vector<TokenSequence> products, val_products;
  for (const auto &r : train) products.push_back(canonical_product_tokens(r));
  for (const auto &r : val) val_products.push_back(canonical_product_tokens(r));

  const auto n = static_cast<std::int64_t>(train.size());
  const std::int64_t spe = ceil_div(n, cfg.batch_size);
  const std::int64_t total = total_steps(cfg, spe);
  const std::int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : spe;

  EarlyStopper stopper(cfg.patience, false);
  RunLog log;
  log.meta = {{"phase", "pretrain"}, {"seed", cfg.seed}, {"model_config_hash",
                                                          config_hash(model.config())}};
  if (!options.provenance.empty()) log.meta["provenance"] = options.provenance;
  Checkpoint best;
  std::int64_t step = 0;

  if (options.resume) {
    const Checkpoint &st = *options.resume;
    if (st.config_hash != config_hash(model.config())) {
      throw CheckpointError("resume state was written for a different model config");
    }
    load_parameters(st, model.params(), true);
    const auto &ts = st.meta.at("train_state");
    step = ts.at("step").get<std::int64_t>();
    log = RunLog::from_json(ts.at("log"));
    if (ts.at("best_step").get<std::int64_t>() >= 0) {
      stopper.restore(ts.at("best_step").get<std::int64_t>(), ts.at("best_value").get<double>());
      best = model.to_checkpoint(false);
      for (auto &[name, t] : best.tensors) {
        const Tensor *saved = st.find("best/" + name);
        if (!saved) throw CheckpointError(fmt::format("resume state lacks 'best/{}'", name));
        t = *saved;
      }
      best.meta["step"] = stopper.best_step();
      best.meta["val_loss"] = stopper.best_value();
    }
  }

  ParameterSet &params = model.params();
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  bool halted = false;

  while (step < total) {
    const std::int64_t epoch = step / spe;
    const std::int64_t b = step % spe;
    if (epoch != cached_epoch) {
      order = epoch_order(train.size(), cfg.seed, "pretrain-shuffle", epoch);
      cached_epoch = epoch;
    }
    const std::size_t lo = static_cast<std::size_t>(b * cfg.batch_size);
    const std::size_t hi = std::min(train.size(), lo + static_cast<std::size_t>(cfg.batch_size));
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                   order.begin() + static_cast<std::ptrdiff_t>(hi));

    std::size_t batch_tokens = 0;
    for (std::size_t i : batch) batch_tokens += products[i].size() + 1;

    params.zero_grad();
    double loss_sum = 0;
    for (std::size_t i : batch) {
      const std::uint64_t aug_epoch = cfg.rerandomize_each_epoch ? static_cast<std::uint64_t>(epoch) : 0;
      ReactionInput input;
      if (cfg.augment) {
        Rng rng(derive_seed(cfg.seed, "augment", aug_epoch, i));
        input = reaction_input(augment_reaction(train[i], rng));
      } else {
        input = reaction_input(train[i]);
      }
      Graph g(true, derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(step), i));
      std::size_t count = 0;
      Var l = model.loss(g, input, products[i], &count);
      loss_sum += static_cast<double>(l.value()[0]) * static_cast<double>(count);
      g.backward(ops::scale(l, static_cast<Real>(static_cast<double>(count) /
                                                 static_cast<double>(batch_tokens))));
      g.accumulate_param_grads(params);
    }
    const double loss = loss_sum / static_cast<double>(batch_tokens);
    if (!std::isfinite(loss)) throw NonFiniteLoss(step, batch);

    if (cfg.grad_clip > 0) clip_grad_norm(params, static_cast<Real>(cfg.grad_clip));
    const double lr = learning_rate(cfg, step, spe);
    try {
      adamw_step(params, static_cast<Real>(lr), cfg.adamw);
    } catch (const NonFiniteGradient &) {
      throw NonFiniteLoss(step, batch);
    }
    ++step;
    log.add(step, "loss", loss);
    log.add(step, "lr", lr);
    if (options.on_step) options.on_step(step, loss);

    if (step % eval_every == 0 || step == total) {
      const double val_loss = score_with_products(model, val, val_products).loss;
      log.add(step, "val_loss", val_loss);
      log.add(step, "wall_s", seconds_since(start));
      if (stopper.update(step, val_loss)) {
        best = model.to_checkpoint(false);
        best.meta["step"] = step;
        best.meta["val_loss"] = val_loss;
        if (!options.provenance.empty()) best.meta["provenance"] = options.provenance;
        std::string file;
        if (options.out_dir) {
          file = (*options.out_dir /
                  fmt::format("pretrain_step{}_val{}.rpt", step, metric_file_tag(val_loss)))
                     .string();
          write_checkpoint(file, best);
        }
        log.mark_best(step, val_loss, file);
      }
      if (cfg.early_stopping && stopper.should_stop(step)) break;
    }
    if (options.stop_after > 0 && step >= options.stop_after && step < total) {
      halted = true;
      break;
    }
  }

  Checkpoint state = model.to_checkpoint(true);
  if (!options.provenance.empty()) state.meta["provenance"] = options.provenance;
  state.meta["train_state"] = {{"step", step},
                               {"best_step", stopper.has_best() ? stopper.best_step() : -1},
                               {"best_value", stopper.has_best() ? stopper.best_value() : 0.0},
                               {"log", log.to_json()}};
  if (stopper.has_best()) {
    for (const auto &[name, t] : best.tensors) state.tensors.emplace_back("best/" + name, t);
  } else {
    best = model.to_checkpoint(false);
    best.meta["step"] = step;
  }
  if (options.out_dir) {
    write_checkpoint(*options.out_dir / "pretrain_state.rpt", state);
    log.write_jsonl(*options.out_dir / "pretrain_log.jsonl");
  }
  return PretrainResult{std::move(model), std::move(best), std::move(state), std::move(log), step,
                        !halted};
}

// ---------------------------------------------------------------------------
// Fine-tuning

namespace {

struct LabelRows {
  std::vector<Tensor> targets;
  std::vector<Tensor> masks;
  std::vector<std::size_t> counts;
};

LabelRows label_rows(const PropertyDataset &data, TaskType task) {
  LabelRows rows;
  const std::size_t t = data.task_names.size();
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto &labels = data.records[i].labels;
    if (labels.size() != t) {
      throw DataFormatError(fmt::format("record {} has {} labels, expected {}", i, labels.size(), t));
    }
    Tensor target = Tensor::matrix(1, t);
    Tensor mask = Tensor::matrix(1, t);
    std::size_t count = 0;
    for (std::size_t k = 0; k < t; ++k) {
      if (!labels[k]) continue;
      const double y = *labels[k];
      if (task == TaskType::kClassification && y != 0.0 && y != 1.0) {
        throw DataFormatError(
            fmt::format("record {}: classification label {} is not 0 or 1", i, y));
      }
      target[k] = static_cast<Real>(y);
      mask[k] = Real(1);
      ++count;
    }
    rows.targets.push_back(std::move(target));
    rows.masks.push_back(std::move(mask));
    rows.counts.push_back(count);
  }
  return rows;
}

double bce_with_logit(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

bool validation_auc_defined(const PropertyDataset &data, const std::vector<std::size_t> &idx) {
  for (std::size_t k = 0; k < data.task_names.size(); ++k) {
    bool pos = false, neg = false;
    for (std::size_t i : idx) {
      const auto &v = data.records[i].labels[k];
      if (v) (*v == 1.0 ? pos : neg) = true;
    }
    if (pos && neg) return true;
  }
  return false;
}

}  // namespace

PropertyEval evaluate_property(const PropertyModel &model, const PropertyDataset &data,
                               const std::vector<std::size_t> &indices, TaskType task,
                               const std::string &metric) {
  const std::size_t t = data.task_names.size();
  std::vector<std::vector<double>> scores(t), labels(t);
  double loss_sum = 0;
  std::size_t count = 0;
  for (std::size_t i : indices) {
    const Tensor pred = model.predict(tokenize(data.records[i].smiles));
    for (std::size_t k = 0; k < t; ++k) {
      const auto &y = data.records[i].labels[k];
      if (!y) continue;
      const double p = static_cast<double>(pred[k]);
      loss_sum += task == TaskType::kRegression ? (p - *y) * (p - *y) : bce_with_logit(p, *y);
      ++count;
      scores[k].push_back(p);
      labels[k].push_back(*y);
    }
  }
  if (count == 0) throw UndefinedMetric("no labelled records to evaluate");
  PropertyEval out;
  out.loss = loss_sum / static_cast<double>(count);
  for (std::size_t k = 0; k < t; ++k) {
    std::optional<double> v;
    try {
      if (metric == "rmse") {
        if (!scores[k].empty()) v = rmse(scores[k], labels[k]);
      } else if (metric == "roc_auc") {
        v = roc_auc(scores[k], labels[k]);
      } else if (metric == "prc_auc") {
        v = prc_auc(scores[k], labels[k]);
      } else {
        throw std::invalid_argument(fmt::format("unknown metric '{}'", metric));
      }
    } catch (const UndefinedMetric &) {
    }
    out.per_task.push_back(v);
  }
  return out;
}

FinetuneResult finetune(const PropertyDataset &data, const PropertySplit &split, TaskType task,
                        const ModelConfig &model_cfg, const TrainConfig &cfg,
                        const Checkpoint *init, std::uint64_t init_seed) {
  cfg.validate();
  if (split.train.empty()) throw std::invalid_argument("fine-tuning split has no training records");
  if (split.validation.empty()) {
    throw std::invalid_argument("fine-tuning split has no validation records");
  }
  if (data.task_names.empty()) throw std::invalid_argument("dataset has no tasks");
  const auto start = Clock::now();

  ModelConfig mc = model_cfg;
  mc.tasks = static_cast<int>(data.task_names.size());
  PropertyModel model(mc, init_seed);
  if (init) model.load_encoder(*init);

  std::vector<TokenSequence> tokens;
  tokens.reserve(data.records.size());
  for (const auto &r : data.records) tokens.push_back(tokenize(r.smiles));
  const LabelRows rows = label_rows(data, task);

  std::string metric = cfg.early_stop_metric;
  if (metric == "auto") metric = task == TaskType::kRegression ? "loss" : "roc_auc";
  if (metric == "roc_auc" &&
      (task == TaskType::kRegression || !validation_auc_defined(data, split.validation))) {
    metric = "loss";
  }
  const bool higher = metric == "roc_auc";
  auto validate = [&](std::int64_t step, RunLog &log) {
    const PropertyEval ev = evaluate_property(model, data, split.validation, task,
                                              higher ? "roc_auc" : "rmse");
    const double value = higher ? multi_task_average(ev.per_task) : ev.loss;
    log.add(step, "val_loss", ev.loss);
    if (higher) log.add(step, "val_roc_auc", value);
    return std::pair{value, ev.loss};
  };

  const auto n = static_cast<std::int64_t>(split.train.size());
  const std::int64_t spe = ceil_div(n, cfg.batch_size);
  const std::int64_t total = total_steps(cfg, spe);
  const std::int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : spe;

  RunLog log;
  log.meta = {{"phase", "finetune"}, {"seed", cfg.seed}, {"metric", metric},
              {"pretrained", init != nullptr}};
  EarlyStopper stopper(cfg.patience, higher);
  Checkpoint best;
  double best_loss = 0;

  auto consider = [&](std::int64_t step) {
    const auto [value, loss] = validate(step, log);
    if (stopper.update(step, value)) {
      best = model.to_checkpoint(false);
      best_loss = loss;
      log.mark_best(step, value, "");
    }
  };
  consider(0);

  ParameterSet &params = model.params();
  std::int64_t step = 0;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  while (step < total) {
    const std::int64_t epoch = step / spe;
    const std::int64_t b = step % spe;
    if (epoch != cached_epoch) {
      order = epoch_order(split.train.size(), cfg.seed, "finetune-shuffle", epoch);
      cached_epoch = epoch;
    }
    const std::size_t lo = static_cast<std::size_t>(b * cfg.batch_size);
    const std::size_t hi =
        std::min(split.train.size(), lo + static_cast<std::size_t>(cfg.batch_size));

    std::size_t batch_labels = 0;
    for (std::size_t j = lo; j < hi; ++j) batch_labels += rows.counts[split.train[order[j]]];

    params.zero_grad();
    double loss_sum = 0;
    std::vector<std::size_t> batch;
    for (std::size_t j = lo; j < hi; ++j) {
      const std::size_t i = split.train[order[j]];
      batch.push_back(i);
      if (rows.counts[i] == 0) continue;
      Graph g(true, derive_seed(cfg.seed, "finetune-dropout", static_cast<std::uint64_t>(step), i));
      Var pred = model.forward(g, tokens[i]);
      Var l = task == TaskType::kRegression
                  ? ops::masked_mse(pred, rows.targets[i], rows.masks[i])
                  : ops::masked_sigmoid_bce(pred, rows.targets[i], rows.masks[i]);
      const double w = static_cast<double>(rows.counts[i]) / static_cast<double>(batch_labels);
      loss_sum += static_cast<double>(l.value()[0]) * static_cast<double>(rows.counts[i]);
      g.backward(ops::scale(l, static_cast<Real>(w)));
      g.accumulate_param_grads(params);
    }
    const double loss = batch_labels ? loss_sum / static_cast<double>(batch_labels) : 0.0;
    if (!std::isfinite(loss)) throw NonFiniteLoss(step, batch);
    if (cfg.grad_clip > 0) clip_grad_norm(params, static_cast<Real>(cfg.grad_clip));
    const double lr = learning_rate(cfg, step, spe);
    try {
      adamw_step(params, static_cast<Real>(lr), cfg.adamw);
    } catch (const NonFiniteGradient &) {
      throw NonFiniteLoss(step, batch);
    }
    ++step;
    log.add(step, "loss", loss);
    log.add(step, "lr", lr);
    if (step % eval_every == 0 || step == total) {
      consider(step);
      log.add(step, "wall_s", seconds_since(start));
      if (cfg.early_stopping && stopper.should_stop(step)) break;
    }
  }

  if (!stopper.has_best()) throw std::runtime_error("validation metric was never defined");
  best.meta["step"] = stopper.best_step();
  best.meta["val_metric"] = stopper.best_value();
  best.meta["val_loss"] = best_loss;
  PropertyModel best_model = PropertyModel::from_checkpoint(best);
  return FinetuneResult{std::move(best_model), std::move(best),     std::move(log),
                        stopper.best_value(),  best_loss,          stopper.best_step(),
                        step};
}

FinetuneResult finetune(const PropertyDataset &data, const FoldPlan &plan, int rotation,
                        TaskType task, const ModelConfig &model_cfg, const TrainConfig &cfg,
                        const Checkpoint *init, std::uint64_t init_seed) {
  if (plan.assignments().size() != data.records.size()) {
    throw std::invalid_argument("fold plan does not match the dataset size");
  }
  const FoldRoles roles = plan.roles(rotation);
  PropertySplit split{plan.members(roles.training), plan.members(roles.validation)};
  return finetune(data, split, task, model_cfg, cfg, init, init_seed);
}

// ---------------------------------------------------------------------------
// Learning-rate search

std::vector<double> sample_learning_rates(int n_runs, double lo, double hi, std::uint64_t seed) {
  if (n_runs < 1) throw std::invalid_argument("lr search needs at least one run");
  if (!(lo > 0) || !(hi > 0) || lo > hi) {
    throw std::invalid_argument(fmt::format("empty learning-rate range [{}, {}]", lo, hi));
  }
  Rng rng(derive_seed(seed, "lr-search"));
  std::uniform_real_distribution<double> dist(std::log(lo), std::log(hi));
  std::vector<double> rates;
  for (int i = 0; i < n_runs; ++i) rates.push_back(std::clamp(std::exp(dist(rng)), lo, hi));
  return rates;
}

LrSearchResult lr_search(const std::function<double(double)> &score, bool higher_is_better,
                         int n_runs, double lo, double hi, std::uint64_t seed) {
  LrSearchResult out;
  out.rates = sample_learning_rates(n_runs, lo, hi, seed);
  bool have = false;
  double best_score = 0;
  for (double r : out.rates) {
    const double s = score(r);
    out.scores.push_back(s);
    if (std::isnan(s)) continue;
    const bool better = !have || (higher_is_better ? s > best_score : s < best_score) ||
                        (s == best_score && r < out.best_lr);
    if (better) {
      have = true;
      best_score = s;
      out.best_lr = r;
    }
  }
  if (!have) throw std::runtime_error("lr search: every run produced an undefined score");
  return out;
}

}  // namespace rxnpt
