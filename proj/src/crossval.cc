#include "rxnpt/crossval.h"

#include <cmath>
#include <sstream>

#include <fmt/core.h>

#include "rxnpt/metrics.h"
#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

double test_score(const PropertyModel &model, const PropertyDataset &data,
                  const std::vector<std::size_t> &idx, TaskType task, const std::string &metric) {
  const PropertyEval ev = evaluate_property(model, data, idx, task, metric);
  return multi_task_average(ev.per_task);
}

TrainConfig with_lr(TrainConfig cfg, double lr) {
  cfg.lr = lr;
  if (cfg.schedule == Schedule::kCosine) {
    cfg.max_lr = lr;
    cfg.base_lr = std::min(cfg.base_lr, lr);
  }
  return cfg;
}

std::string fmt_mean_std(const MeanStd &m) { return fmt::format("{:.3f} ± {:.3f}", m.mean, m.std); }

// Display width in code points (the table contains "±").
std::size_t display_width(const std::string &s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string dataset_name(const PropertyDataset &data, const DatasetSpec &spec) {
  return spec.name.empty() ? data.name : spec.name;
}

}  // namespace

ArmRun run_rotation(const PropertyDataset &data, const DatasetSpec &spec, const FoldPlan &plan,
                    int k, const Checkpoint *init, const CrossvalSettings &s) {
  const TaskType task = task_type(spec);
  const std::string metric = metric_name(spec);
  const bool higher = metric_higher_is_better(metric);
  const FoldRoles roles = plan.roles(k);
  const std::uint64_t init_seed = derive_seed(s.seed, "finetune-init");
  TrainConfig cfg = s.finetune;
  cfg.seed = derive_seed(s.seed, "finetune", static_cast<std::uint64_t>(k));

  double lr = cfg.lr;
  if (s.stats.lr_search) {
    TrainConfig tuning = cfg;
    tuning.epochs = spec.tuning_epochs > 0 ? spec.tuning_epochs : s.stats.tuning_epochs;
    if (s.stats.tuning_max_steps > 0) tuning.max_steps = s.stats.tuning_max_steps;
    const auto tuning_idx = plan.members(roles.tuning);
    auto score = [&](double r) {
      const FinetuneResult fr =
          finetune(data, plan, k, task, s.model, with_lr(tuning, r), init, init_seed);
      try {
        return test_score(fr.model, data, tuning_idx, task, metric);
      } catch (const UndefinedMetric &) {
        return std::nan("");
      }
    };
    lr = lr_search(score, higher, s.stats.lr_search_runs, s.stats.lr_min, s.stats.lr_max,
                   derive_seed(s.seed, "lr", static_cast<std::uint64_t>(k)))
             .best_lr;
  }
  const FinetuneResult fr = finetune(data, plan, k, task, s.model, with_lr(cfg, lr), init, init_seed);
  ArmRun run;
  run.lr = lr;
  run.test_metric = test_score(fr.model, data, plan.members(roles.test), task, metric);
  run.best_val_loss = fr.best_val_loss;
  run.best_val_metric = fr.best_metric;
  run.best_step = fr.best_step;
  run.steps = fr.steps;
  run.log = fr.log;
  if (s.keep_checkpoints) run.best = fr.best;
  return run;
}

FoldPlan comparison_fold_plan(const PropertyDataset &data, const DatasetSpec &spec,
                              const CrossvalSettings &s) {
  std::optional<std::size_t> stratify;
  if (task_type(spec) == TaskType::kClassification && data.task_names.size() == 1) stratify = 0;
  return make_fold_plan(data.records, s.stats.n_folds, stratify,
                        derive_seed(s.seed, "folds", fnv1a64(dataset_name(data, spec))));
}

CrossvalError::CrossvalError(std::string dataset, int rotation, const std::string &what)
    : std::runtime_error(fmt::format("{}: rotation {}: {}", dataset, rotation, what)),
      rotation_(rotation) {}

void finish_comparison(DatasetComparison &row, double level, Alternative alternative) {
  row.baseline = mean_std(row.pairs.baseline);
  row.treated = mean_std(row.pairs.treated);
  try {
    row.wilcoxon = wilcoxon_signed_rank(row.pairs, alternative);
    const auto &w = *row.wilcoxon;
    row.rank_biserial = (w.w_plus - w.w_minus) / (w.w_plus + w.w_minus);
    row.significant = w.p_value < level;
  } catch (const DegenerateComparison &) {
    row.wilcoxon.reset();
    row.rank_biserial.reset();
    row.significant = false;
    row.note = "degenerate comparison";
  }
}

DatasetComparison compare_on_dataset(const PropertyDataset &data, const DatasetSpec &spec,
                                     const Checkpoint &pretrained, const CrossvalSettings &s) {
  const std::string metric = metric_name(spec);
  const std::string name = dataset_name(data, spec);
  const FoldPlan plan = comparison_fold_plan(data, spec, s);

  DatasetComparison row;
  row.pairs.dataset = name;
  row.pairs.metric = metric;
  row.pairs.direction =
      metric_higher_is_better(metric) ? Direction::kHigherIsBetter : Direction::kLowerIsBetter;
  for (int k = 0; k < plan.n_folds(); ++k) {
    try {
      if (s.progress) s.progress(fmt::format("{}: rotation {} random init", name, k));
      ArmRun base = run_rotation(data, spec, plan, k, nullptr, s);
      if (s.progress) s.progress(fmt::format("{}: rotation {} pre-trained", name, k));
      ArmRun treated = run_rotation(data, spec, plan, k, &pretrained, s);
      row.pairs.baseline.push_back(base.test_metric);
      row.pairs.treated.push_back(treated.test_metric);
      row.baseline_runs.push_back(base);
      row.treated_runs.push_back(treated);
    } catch (const std::exception &e) {
      throw CrossvalError(name, k, e.what());
    }
  }
  return row;
}

ComparisonReport run_crossval_comparison(const std::vector<PropertyDataset> &datasets,
                                         const std::vector<DatasetSpec> &specs,
                                         const Checkpoint &pretrained,
                                         const CrossvalSettings &s) {
  if (datasets.size() != specs.size()) {
    throw std::invalid_argument("datasets and dataset specs differ in count");
  }
  if (datasets.empty()) throw std::invalid_argument("comparison needs at least one dataset");
  ComparisonReport report;
  report.alpha = s.stats.alpha;
  report.comparisons =
      s.stats.comparisons > 0 ? s.stats.comparisons : static_cast<int>(datasets.size());
  report.level = bonferroni_level(report.alpha, report.comparisons);
  report.two_sided = s.stats.two_sided;
  const Alternative alt = s.stats.two_sided ? Alternative::kTwoSided : Alternative::kTreatedBetter;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    DatasetComparison row = compare_on_dataset(datasets[i], specs[i], pretrained, s);
    finish_comparison(row, report.level, alt);
    report.rows.push_back(std::move(row));
  }
  return report;
}

nlohmann::json ComparisonReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto &r : rows) {
    auto arm = [](const MeanStd &m, const std::vector<double> &values,
                  const std::vector<ArmRun> &runs) {
      nlohmann::json folds = nlohmann::json::array();
      for (const auto &run : runs) {
        folds.push_back({{"lr", run.lr},
                         {"test_metric", run.test_metric},
                         {"best_val_loss", run.best_val_loss},
                         {"best_val_metric", run.best_val_metric},
                         {"best_step", run.best_step},
                         {"steps", run.steps}});
      }
      return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"values", values}, {"runs", folds}};
    };
    nlohmann::json row = {
        {"dataset", r.pairs.dataset},
        {"metric", r.pairs.metric},
        {"direction", r.pairs.direction == Direction::kHigherIsBetter ? "higher" : "lower"},
        {"folds", r.pairs.baseline.size()},
        {"random_init", arm(r.baseline, r.pairs.baseline, r.baseline_runs)},
        {"pretrained", arm(r.treated, r.pairs.treated, r.treated_runs)},
        {"significant", r.significant},
        {"note", r.note}};
    if (r.wilcoxon) {
      row["p_value"] = r.wilcoxon->p_value;
      row["w_plus"] = r.wilcoxon->w_plus;
      row["w_minus"] = r.wilcoxon->w_minus;
      row["n_effective"] = r.wilcoxon->n_effective;
      row["n_zero"] = r.wilcoxon->n_zero;
      row["method"] = r.wilcoxon->method == WilcoxonMethod::kExact ? "exact" : "normal";
      row["rank_biserial"] = *r.rank_biserial;
    } else {
      row["p_value"] = nullptr;
      row["rank_biserial"] = nullptr;
    }
    rows_json.push_back(std::move(row));
  }
  return {{"provenance", provenance},
          {"alpha", alpha},
          {"comparisons", comparisons},
          {"level", level},
          {"alternative", two_sided ? "two-sided" : "pretrained-better"},
          {"rows", rows_json}};
}

std::string ComparisonReport::to_text() const {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Dataset", "Metric", "Random init", "Pre-trained", "p-value", "Rank-biserial",
                   fmt::format("p < {:.5f}", level)});
  for (const auto &r : rows) {
    const std::string arrow = r.pairs.direction == Direction::kHigherIsBetter ? " (↑)" : " (↓)";
    std::string metric = r.pairs.metric == "rmse"      ? "RMSE"
                         : r.pairs.metric == "roc_auc" ? "ROC-AUC"
                                                       : "PRC-AUC";
    cells.push_back({r.pairs.dataset, metric + arrow, fmt_mean_std(r.baseline),
                     fmt_mean_std(r.treated),
                     r.wilcoxon ? fmt::format("{:.3f}", r.wilcoxon->p_value) : "n/a",
                     r.rank_biserial ? fmt::format("{:.3f}", *r.rank_biserial) : "n/a",
                     r.wilcoxon ? (r.significant ? "yes" : "no") : r.note});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto &row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
  }
  std::ostringstream out;
  if (!provenance.empty()) {
    out << fmt::format("# config_hash={} seed={} version={}\n",
                       provenance.value("config_hash", ""),
                       provenance.value("seed", std::uint64_t{0}),
                       provenance.value("version", ""));
  }
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      out << cells[r][c] << std::string(width[c] - display_width(cells[r][c]), ' ');
      out << (c + 1 < cells[r].size() ? "  " : "\n");
    }
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

std::string ComparisonReport::folds_csv() const {
  std::ostringstream out;
  if (!provenance.empty()) {
    out << fmt::format("# config_hash={} seed={} version={}\n",
                       provenance.value("config_hash", ""),
                       provenance.value("seed", std::uint64_t{0}),
                       provenance.value("version", ""));
  }
  out << "dataset,fold,baseline,treated\n";
  for (const auto &r : rows) {
    for (std::size_t k = 0; k < r.pairs.baseline.size(); ++k) {
      out << fmt::format("{},{},{:.17g},{:.17g}\n", r.pairs.dataset, k, r.pairs.baseline[k],
                         r.pairs.treated[k]);
    }
  }
  return out.str();
}

}  // namespace rxnpt
