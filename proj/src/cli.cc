#include "rxnpt/cli.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "rxnpt/checkpoint.h"
#include "rxnpt/config.h"
#include "rxnpt/crossval.h"
#include "rxnpt/metrics.h"
#include "rxnpt/reaction_data.h"
#include "rxnpt/seeding.h"
#include "rxnpt/smiles.h"
#include "rxnpt/stats.h"
#include "rxnpt/training.h"

namespace rxnpt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UserError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  bool dry_run = false;
  std::string out_dir = ".";
};

void add_common(CLI::App *cmd, CommonOptions &o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Root seed (overrides the config)");
  cmd->add_option("--folds", o.folds, "Number of cross-validation folds (overrides the config)");
  cmd->add_flag("--dry-run", o.dry_run, "Validate the config and print resolved defaults");
  cmd->add_option("--out-dir", o.out_dir, "Directory for output artifacts");
}

RunConfig resolve(const CommonOptions &o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.folds) {
    if (*o.folds < 3) throw ConfigError("--folds must be at least 3");
    cfg.stats.n_folds = *o.folds;
  }
  cfg.pretrain.seed = derive_seed(cfg.seed, "pretrain");
  cfg.finetune.seed = derive_seed(cfg.seed, "finetune");
  return cfg;
}

json provenance(const RunConfig &cfg) {
  return {{"config_hash", run_config_hash(cfg)}, {"seed", cfg.seed}, {"version", kToolVersion}};
}

std::string provenance_line(const RunConfig &cfg) {
  return fmt::format("# config_hash={} seed={} version={}\n", run_config_hash(cfg), cfg.seed,
                     kToolVersion);
}

void print_resolved(const RunConfig &cfg, std::ostream &out) {
  json j = {{"config", to_json(cfg)},
            {"config_hash", run_config_hash(cfg)},
            {"version", kToolVersion}};
  out << j.dump(2) << '\n';
}

fs::path prepare_out_dir(const std::string &dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream f(path);
  if (!f) throw UserError(fmt::format("cannot write '{}'", path.string()));
  f << text;
}

std::vector<Reaction> load_filtered(const std::string &path, std::size_t max_len,
                                    json &stats) {
  if (!fs::exists(path)) throw UserError(fmt::format("reaction corpus '{}' does not exist", path));
  CorpusLoad load = load_reaction_corpus(path);
  std::map<std::string, std::size_t> rejected;
  for (const auto &r : load.rejected) ++rejected[r.reason];
  FilterResult filtered = filter_and_truncate(load.reactions, max_len);
  const std::size_t parsed = load.reactions.size();
  stats = {{"path", path},
           {"lines_read", parsed + load.rejected.size()},
           {"parsed", parsed},
           {"rejected", rejected},
           {"max_fragment_length", max_len},
           {"kept", filtered.kept.size()},
           {"dropped_length", filtered.dropped.size()},
           {"kept_fraction",
            parsed ? static_cast<double>(filtered.kept.size()) / static_cast<double>(parsed) : 0.0}};
  return std::move(filtered.kept);
}

const DatasetSpec &dataset_at(const RunConfig &cfg, int index) {
  if (cfg.data.datasets.empty()) throw ConfigError("data.datasets is empty");
  if (index < 0 || static_cast<std::size_t>(index) >= cfg.data.datasets.size()) {
    throw UserError(fmt::format("dataset index {} out of range (have {})", index,
                                cfg.data.datasets.size()));
  }
  return cfg.data.datasets[static_cast<std::size_t>(index)];
}

PropertyDataset load_dataset(const DatasetSpec &spec) {
  if (!fs::exists(spec.path)) {
    throw UserError(fmt::format("property file '{}' does not exist", spec.path));
  }
  PropertyDataset ds = load_property_csv(spec.path);
  if (!spec.name.empty()) ds.name = spec.name;
  return ds;
}

std::optional<Checkpoint> load_pretrained(const RunConfig &cfg) {
  if (cfg.data.checkpoint.empty()) return std::nullopt;
  if (!fs::exists(cfg.data.checkpoint)) {
    throw UserError(fmt::format("checkpoint '{}' does not exist", cfg.data.checkpoint));
  }
  return read_checkpoint(cfg.data.checkpoint);
}

CrossvalSettings settings_for(const RunConfig &cfg, std::ostream &err) {
  CrossvalSettings s;
  s.model = cfg.model;
  s.finetune = cfg.finetune;
  s.stats = cfg.stats;
  s.seed = cfg.seed;
  s.progress = [&err](const std::string &msg) { err << msg << '\n'; };
  return s;
}

// ---------------------------------------------------------------------------

int cmd_pretrain(const CommonOptions &o, const std::string &resume_path, std::ostream &out,
                 std::ostream &err) {
  const RunConfig cfg = resolve(o);
  if (o.dry_run) {
    print_resolved(cfg, out);
    return kExitOk;
  }
  if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is not set");
  const std::size_t limit = cfg.data.max_fragment_length;
  const std::size_t needed = limit + 2 + (cfg.model.role_tokens ? 1 : 0);
  if (static_cast<std::size_t>(cfg.model.max_length) < std::max<std::size_t>(needed, 3)) {
    throw ConfigError(fmt::format("model.max_length {} is below max_fragment_length + 2 = {}",
                                  cfg.model.max_length, needed));
  }
  const fs::path dir = prepare_out_dir(o.out_dir);
  json stats = {{"provenance", provenance(cfg)}};
  std::vector<Reaction> train = load_filtered(cfg.data.corpus, limit, stats["train"]);
  std::vector<Reaction> validation;
  if (!cfg.data.validation_corpus.empty()) {
    validation = load_filtered(cfg.data.validation_corpus, limit, stats["validation"]);
  }
  write_text(dir / "drop_stats.json", stats.dump(2) + "\n");
  if (train.empty()) throw UserError("no reactions left after filtering");
  err << fmt::format("kept {} of {} parsed reactions ({:.2f}%)\n", train.size(),
                     stats["train"]["parsed"].get<std::size_t>(),
                     100.0 * stats["train"]["kept_fraction"].get<double>());

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = read_checkpoint(resume_path);
  PretrainOptions opts;
  opts.out_dir = dir;
  opts.resume = resume ? &*resume : nullptr;
  opts.provenance = provenance(cfg);
  ReactionModel model(cfg.model, derive_seed(cfg.seed, "init"));
  PretrainResult result = pretrain(std::move(model), train, validation, cfg.pretrain, opts);
  result.best.meta["provenance"] = provenance(cfg);
  write_checkpoint(dir / "pretrain_best.rpt", result.best);
  out << fmt::format("steps {} best_val_loss {:.6f} at step {}\n", result.steps,
                     result.log.best_value(), result.log.best_step());
  out << fmt::format("checkpoint {}\n", (dir / "pretrain_best.rpt").string());
  return kExitOk;
}

int cmd_finetune(const CommonOptions &o, int dataset_index, int rotation, std::ostream &out,
                 std::ostream &err) {
  const RunConfig cfg = resolve(o);
  if (o.dry_run) {
    print_resolved(cfg, out);
    return kExitOk;
  }
  const DatasetSpec &spec = dataset_at(cfg, dataset_index);
  const PropertyDataset data = load_dataset(spec);
  const std::optional<Checkpoint> init = load_pretrained(cfg);
  CrossvalSettings s = settings_for(cfg, err);
  s.keep_checkpoints = true;
  const FoldPlan plan = comparison_fold_plan(data, spec, s);
  if (rotation < 0 || rotation >= plan.n_folds()) {
    throw UserError(fmt::format("rotation {} outside [0, {})", rotation, plan.n_folds()));
  }
  ArmRun run = run_rotation(data, spec, plan, rotation, init ? &*init : nullptr, s);
  const fs::path dir = prepare_out_dir(o.out_dir);
  const std::string stem = fmt::format("finetune_{}_rot{}_step{}_val{:.6f}", data.name, rotation,
                                       run.best_step, run.best_val_metric);
  run.best->meta["provenance"] = provenance(cfg);
  write_checkpoint(dir / (stem + ".rpt"), *run.best);
  run.log.meta["provenance"] = provenance(cfg);
  run.log.write_jsonl(dir / (stem + ".jsonl"));
  write_text(dir / "fold_plan.json", plan.to_json().dump() + "\n");
  const json summary = {{"provenance", provenance(cfg)},
                        {"dataset", data.name},
                        {"rotation", rotation},
                        {"pretrained", init.has_value()},
                        {"metric", metric_name(spec)},
                        {"test_metric", run.test_metric},
                        {"lr", run.lr},
                        {"best_step", run.best_step},
                        {"best_val_loss", run.best_val_loss}};
  write_text(dir / (stem + ".json"), summary.dump(2) + "\n");
  out << fmt::format("{} rotation {} test {} {:.6f} (lr {:.3g}, best step {})\n", data.name,
                     rotation, metric_name(spec), run.test_metric, run.lr, run.best_step);
  return kExitOk;
}

int cmd_crossval(const CommonOptions &o, std::ostream &out, std::ostream &err) {
  const RunConfig cfg = resolve(o);
  if (o.dry_run) {
    print_resolved(cfg, out);
    return kExitOk;
  }
  if (cfg.data.datasets.empty()) throw ConfigError("data.datasets is empty");
  const std::optional<Checkpoint> init = load_pretrained(cfg);
  const CrossvalSettings s = settings_for(cfg, err);
  const fs::path dir = prepare_out_dir(o.out_dir);
  std::string csv = provenance_line(cfg) + "dataset,fold,test_metric,lr,best_val_loss,best_step\n";
  for (const auto &spec : cfg.data.datasets) {
    const PropertyDataset data = load_dataset(spec);
    const FoldPlan plan = comparison_fold_plan(data, spec, s);
    std::vector<double> metrics;
    for (int k = 0; k < plan.n_folds(); ++k) {
      ArmRun run;
      try {
        run = run_rotation(data, spec, plan, k, init ? &*init : nullptr, s);
      } catch (const std::exception &e) {
        throw CrossvalError(data.name, k, e.what());
      }
      metrics.push_back(run.test_metric);
      csv += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{}\n", data.name, k, run.test_metric,
                         run.lr, run.best_val_loss, run.best_step);
    }
    const MeanStd ms = mean_std(metrics);
    out << fmt::format("{} {} {:.3f} ± {:.3f} over {} folds\n", data.name, metric_name(spec),
                       ms.mean, ms.std, metrics.size());
  }
  write_text(dir / "crossval_folds.csv", csv);
  return kExitOk;
}

int cmd_compare(const CommonOptions &o, std::ostream &out, std::ostream &err) {
  const RunConfig cfg = resolve(o);
  if (o.dry_run) {
    print_resolved(cfg, out);
    return kExitOk;
  }
  if (cfg.data.checkpoint.empty()) {
    throw ConfigError("comparison requires a pre-trained arm: set data.checkpoint");
  }
  if (cfg.data.datasets.empty()) throw ConfigError("data.datasets is empty");
  const std::optional<Checkpoint> pretrained = load_pretrained(cfg);
  std::vector<PropertyDataset> datasets;
  for (const auto &spec : cfg.data.datasets) datasets.push_back(load_dataset(spec));
  ComparisonReport report =
      run_crossval_comparison(datasets, cfg.data.datasets, *pretrained, settings_for(cfg, err));
  report.provenance = provenance(cfg);
  const fs::path dir = prepare_out_dir(o.out_dir);
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "report.txt", report.to_text());
  write_text(dir / "folds.csv", report.folds_csv());
  out << report.to_text();
  for (const auto &row : report.rows) {
    if (!row.note.empty()) err << fmt::format("warning: {}: {}\n", row.pairs.dataset, row.note);
  }
  return kExitOk;
}

// Applies `fn` to each '.'-separated fragment, shifting error positions to
// offsets within the whole line.
template <typename Fn>
std::string per_fragment(const std::string &line, Fn fn) {
  std::string result;
  std::size_t begin = 0;
  std::vector<std::string> parts;
  while (true) {
    const std::size_t dot = line.find('.', begin);
    const std::string frag = line.substr(begin, dot == std::string::npos ? dot : dot - begin);
    try {
      parts.push_back(fn(frag));
    } catch (const SmilesError &e) {
      throw SmilesError(begin + e.position(), e.reason());
    }
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i < parts.size(); ++i) result += (i ? "." : "") + parts[i];
  return result;
}

int cmd_smiles(const std::string &mode, std::uint64_t seed, std::istream &in, std::ostream &out) {
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::uint64_t index = lineno++;
    try {
      if (mode == "canonicalize") {
        out << per_fragment(line, [](const std::string &f) { return canonicalize(f); }) << '\n';
      } else if (mode == "randomize") {
        Rng rng(derive_seed(seed, "cli-randomize", index));
        out << per_fragment(line, [&](const std::string &f) {
          return write_randomized(parse_smiles(f), rng);
        }) << '\n';
      } else {
        const TokenSequence t = tokenize(line);
        std::string text;
        for (std::size_t i = 0; i < t.size(); ++i) text += (i ? " " : "") + std::to_string(t.ids[i]);
        out << text << '\n';
      }
    } catch (const SmilesError &e) {
      out << fmt::format("ERROR {} {}\n", e.position(), e.reason());
    } catch (const TokenizeError &e) {
      out << fmt::format("ERROR {} {}\n", e.position(), e.what());
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out,
            std::ostream &err) {
  CLI::App app{"Reaction pre-training of SMILES transformers for property prediction"};
  app.name("rxnpt");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  CommonOptions pre_opts, ft_opts, cv_opts, cmp_opts;
  std::string resume_path;
  auto *pre = app.add_subcommand("pretrain", "Pre-train on a reaction corpus");
  add_common(pre, pre_opts);
  pre->add_option("--resume", resume_path, "Training state checkpoint to resume from");

  int dataset_index = 0, rotation = 0;
  auto *ft = app.add_subcommand("finetune", "Fine-tune on one fold rotation of a dataset");
  add_common(ft, ft_opts);
  ft->add_option("--dataset", dataset_index, "Index into data.datasets");
  ft->add_option("--rotation", rotation, "Fold rotation k (test fold k)");

  auto *cv = app.add_subcommand("crossval", "Cross-validate one arm on every dataset");
  add_common(cv, cv_opts);

  auto *cmp = app.add_subcommand("compare", "Paired comparison of pre-trained vs random init");
  add_common(cmp, cmp_opts);

  std::uint64_t smiles_seed = 0;
  auto *sm = app.add_subcommand("smiles", "Line-oriented SMILES utilities");
  sm->require_subcommand(1);
  sm->add_option("--seed", smiles_seed, "Seed for randomize");
  std::string smiles_mode;
  for (const char *mode : {"canonicalize", "randomize", "tokenize"}) {
    auto *sub = sm->add_subcommand(mode);
    sub->add_option("--seed", smiles_seed, "Seed for randomize");
    sub->callback([&smiles_mode, mode] { smiles_mode = mode; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUserError;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pre_opts, resume_path, out, err);
    if (ft->parsed()) return cmd_finetune(ft_opts, dataset_index, rotation, out, err);
    if (cv->parsed()) return cmd_crossval(cv_opts, out, err);
    if (cmp->parsed()) return cmd_compare(cmp_opts, out, err);
    if (sm->parsed()) return cmd_smiles(smiles_mode, smiles_seed, in, out);
    err << "error: no command\n";
    return kExitUserError;
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const UserError &e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const DataFormatError &e) {
    err << "data error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const CheckpointError &e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const NonFiniteLoss &e) {
    err << "training error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const CrossvalError &e) {
    err << "cross-validation error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const SmilesError &e) {
    err << "smiles error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const ReactionFormatError &e) {
    err << "reaction error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const UndefinedMetric &e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::invalid_argument &e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::exception &e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  }
}

}  // namespace rxnpt
