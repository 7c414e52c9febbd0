#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rxnpt/checkpoint.h"
#include "rxnpt/cli.h"
#include "rxnpt/config.h"
#include "rxnpt/model.h"
#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string> &args, const std::string &input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("rxnpt_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string &name) const { return path_ / name; }
  std::string str() const { return path_.string(); }

private:
  fs::path path_;
};

void write_file(const fs::path &p, const std::string &text) { std::ofstream(p) << text; }

json tiny_model() {
  return {{"layers", 1}, {"heads", 2}, {"width", 8}, {"ff_width", 16}, {"max_length", 40},
          {"dropout", 0.0}};
}

std::string property_csv() {
  std::string csv = "smiles,y\n";
  const char *mols[] = {"CCO", "CCN", "CCC", "c1ccccc1", "CC(=O)O", "OCCO", "NCCN", "CCCC",
                        "CO", "CN", "CCOC", "C1CC1", "OC=O", "CC#N", "CCCO", "NC=O"};
  int i = 0;
  for (const char *m : mols) csv += std::string(m) + "," + std::to_string(0.1 * i++) + "\n";
  return csv;
}

TEST(Config, DefaultsAndRoundTrip) {
  const RunConfig def = run_config_from_json(json::object());
  EXPECT_EQ(def, RunConfig{});
  EXPECT_EQ(def.stats.n_folds, 10);
  EXPECT_EQ(def.data.max_fragment_length, 157u);
  EXPECT_EQ(run_config_from_json(to_json(def)), def);
  RunConfig changed = def;
  changed.seed = 1;
  EXPECT_NE(run_config_hash(changed), run_config_hash(def));
  EXPECT_EQ(run_config_hash(def), run_config_hash(run_config_from_json(to_json(def))));
}

TEST(Config, UnknownKeysAreRejected) {
  for (const json &j : {json{{"modle", json::object()}}, json{{"model", {{"widht", 8}}}},
                        json{{"finetune", {{"adamw", {{"beta3", 0.1}}}}}},
                        json{{"data", {{"datasets", {{{"path", "a.csv"}, {"x", 1}}}}}}}}) {
    try {
      run_config_from_json(j);
      FAIL() << j.dump();
    } catch (const ConfigError &e) {
      EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
    }
  }
}

TEST(Config, BadValues) {
  EXPECT_THROW(run_config_from_json(json{{"model", {{"width", "wide"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"model", {{"width", 10}, {"heads", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"stats", {{"n_folds", 2}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"pretrain", {{"schedule", "linear"}}}}), ConfigError);
  EXPECT_THROW(
      run_config_from_json(json{{"data", {{"datasets", {{{"path", "a"}, {"task", "ranking"}}}}}}}),
      ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"data", {{"datasets", {{{"path", "a"},
                                                                   {"metric", "roc_auc"}}}}}}}),
               ConfigError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"--version"}).code, kExitOk);
  EXPECT_EQ(cli({}).code, kExitUserError);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUserError);
  EXPECT_EQ(cli({"pretrain", "--config", "/nonexistent/cfg.json"}).code, kExitUserError);
}

TEST(Cli, SmilesCommands) {
  EXPECT_EQ(cli({"smiles", "tokenize"}, "CCO\n").out, "67 67 79\n");
  const CliRun canon = cli({"smiles", "canonicalize"}, "OCC\nCCO\n");
  std::istringstream lines(canon.out);
  std::string a, b;
  std::getline(lines, a);
  std::getline(lines, b);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, canonicalize("CCO"));

  const std::string input = "CC(C)C(=O)Nc1ccccc1\nC1CCCCC1O\nC(\nCCN\n";
  const CliRun r1 = cli({"smiles", "randomize", "--seed", "7"}, input);
  const CliRun r2 = cli({"smiles", "randomize", "--seed", "7"}, input);
  const CliRun r3 = cli({"smiles", "--seed", "7", "randomize"}, input);
  EXPECT_EQ(r1.code, kExitOk);
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_EQ(r1.out, r3.out);
  std::istringstream rl(r1.out);
  std::vector<std::string> out;
  for (std::string l; std::getline(rl, l);) out.push_back(l);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[2], "ERROR 2 unbalanced parenthesis");
  EXPECT_EQ(canonicalize(out[0]), canonicalize("CC(C)C(=O)Nc1ccccc1"));
  EXPECT_EQ(canonicalize(out[3]), canonicalize("CCN"));

  const CliRun errors = cli({"smiles", "canonicalize"}, "CCO.C(\nCCO.CC\n");
  EXPECT_EQ(errors.out, "ERROR 6 unbalanced parenthesis\n" + canonicalize("CCO") + "." +
                            canonicalize("CC") + "\n");
  EXPECT_EQ(cli({"smiles", "tokenize"}, "CC\xc3\xa9\n").out.rfind("ERROR 2", 0), 0u);
}

TEST(Cli, DryRunPrintsResolvedDefaults) {
  TempDir dir;
  write_file(dir / "cfg.json", json{{"seed", 4}, {"stats", {{"n_folds", 5}}}}.dump());
  const CliRun r = cli({"compare", "--config", (dir / "cfg.json").string(), "--folds", "7",
                        "--dry-run", "--out-dir", dir.str()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["config"]["stats"]["n_folds"], 7);
  EXPECT_EQ(j["config"]["seed"], 4);
  EXPECT_EQ(j["config"]["pretrain"]["patience"], RunConfig{}.pretrain.patience);
  EXPECT_TRUE(j.contains("config_hash"));
  EXPECT_TRUE(j.contains("version"));
  EXPECT_FALSE(fs::exists(dir / "report.json"));

  EXPECT_EQ(cli({"compare", "--folds", "2", "--dry-run"}).code, kExitUserError);
  write_file(dir / "bad.json", R"({"stats": {"nfolds": 5}})");
  const CliRun bad = cli({"pretrain", "--config", (dir / "bad.json").string(), "--dry-run"});
  EXPECT_EQ(bad.code, kExitUserError);
  EXPECT_NE(bad.err.find("stats.nfolds"), std::string::npos);
}

TEST(Cli, MissingCorpusIsNamed) {
  TempDir dir;
  const std::string missing = (dir / "no_such_corpus.txt").string();
  write_file(dir / "cfg.json", json{{"data", {{"corpus", missing}}}}.dump());
  const CliRun r = cli({"pretrain", "--config", (dir / "cfg.json").string(), "--out-dir", dir.str()});
  EXPECT_EQ(r.code, kExitUserError);
  EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST(Cli, PretrainOnToyCorpus) {
  TempDir dir;
  write_file(dir / "corpus.txt", "CCO.CC(=O)O>[H+]>CC(=O)OCC\nC(\nCCN>>CCNC\nCO>>C=O\n");
  json cfg = {{"model", tiny_model()},
              {"pretrain", {{"batch_size", 2}, {"epochs", 2}}},
              {"data", {{"corpus", (dir / "corpus.txt").string()}, {"max_fragment_length", 30}}},
              {"seed", 3}};
  write_file(dir / "cfg.json", cfg.dump());
  const std::vector<std::string> args = {"pretrain", "--config", (dir / "cfg.json").string(),
                                         "--out-dir", (dir / "out").string()};
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "pretrain_best.rpt"));
  EXPECT_TRUE(fs::exists(dir / "out" / "pretrain_log.jsonl"));
  std::ifstream stats_in(dir / "out" / "drop_stats.json");
  const json stats = json::parse(stats_in);
  EXPECT_EQ(stats["train"]["parsed"], 3);
  EXPECT_EQ(stats["train"]["kept"], 3);
  EXPECT_EQ(stats["train"]["lines_read"], 4);
  EXPECT_EQ(stats["provenance"]["seed"], 3);
  const std::string hash = stats["provenance"]["config_hash"];

  const Checkpoint ck = read_checkpoint(dir / "out" / "pretrain_best.rpt");
  EXPECT_EQ(ck.meta["provenance"]["config_hash"], hash);
  std::ifstream log(dir / "out" / "pretrain_log.jsonl");
  std::string first;
  std::getline(log, first);
  EXPECT_NE(first.find(hash), std::string::npos);

  // Same config hash, seed and version give bit-identical parameters.
  const std::vector<std::string> again = {"pretrain", "--config", (dir / "cfg.json").string(),
                                          "--out-dir", (dir / "out2").string()};
  ASSERT_EQ(cli(again).code, kExitOk);
  const Checkpoint ck2 = read_checkpoint(dir / "out2" / "pretrain_best.rpt");
  ASSERT_EQ(ck.tensors.size(), ck2.tensors.size());
  for (const auto &[name, t] : ck.tensors) {
    ASSERT_NE(ck2.find(name), nullptr);
    EXPECT_TRUE(std::ranges::equal(t.values(), ck2.find(name)->values())) << name;
  }
}

TEST(Cli, CompareNeedsCheckpoint) {
  TempDir dir;
  write_file(dir / "a.csv", property_csv());
  json cfg = {{"model", tiny_model()},
              {"data", {{"datasets", {{{"path", (dir / "a.csv").string()}}}}}}};
  write_file(dir / "cfg.json", cfg.dump());
  const CliRun r = cli({"compare", "--config", (dir / "cfg.json").string(), "--out-dir", dir.str()});
  EXPECT_EQ(r.code, kExitUserError);
  EXPECT_NE(r.err.find("comparison requires a pre-trained arm"), std::string::npos);
}

TEST(Cli, CompareTwoDatasets) {
  TempDir dir;
  write_file(dir / "a.csv", property_csv());
  write_file(dir / "b.csv", property_csv());
  ModelConfig mc = model_config_from_json(tiny_model());
  write_checkpoint(dir / "pre.rpt", ReactionModel(mc, 9).to_checkpoint(false));
  json cfg = {{"model", tiny_model()},
              {"finetune", {{"batch_size", 4}, {"epochs", 1}}},
              {"stats", {{"lr_search", false}, {"n_folds", 10}}},
              {"data",
               {{"checkpoint", (dir / "pre.rpt").string()},
                {"datasets", {{{"path", (dir / "a.csv").string()}},
                              {{"path", (dir / "b.csv").string()}, {"name", "second"}}}}}},
              {"seed", 21}};
  write_file(dir / "cfg.json", cfg.dump());
  const CliRun r = cli({"compare", "--config", (dir / "cfg.json").string(), "--folds", "4",
                        "--out-dir", dir.str()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream report_in(dir / "report.json");
  const json report = json::parse(report_in);
  ASSERT_EQ(report["rows"].size(), 2u);
  EXPECT_EQ(report["rows"][0]["dataset"], "a");
  EXPECT_EQ(report["rows"][1]["dataset"], "second");
  EXPECT_EQ(report["rows"][0]["folds"], 4);
  EXPECT_DOUBLE_EQ(report["level"].get<double>(), 0.025);
  EXPECT_EQ(report["provenance"]["seed"], 21);
  EXPECT_NE(r.out.find("p < 0.02500"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report.txt"));
  std::ifstream csv(dir / "folds.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
}

TEST(Cli, FinetuneAndCrossval) {
  TempDir dir;
  write_file(dir / "a.csv", property_csv());
  json cfg = {{"model", tiny_model()},
              {"finetune", {{"batch_size", 4}, {"epochs", 1}}},
              {"stats", {{"lr_search", false}, {"n_folds", 4}}},
              {"data", {{"datasets", {{{"path", (dir / "a.csv").string()}}}}}}};
  write_file(dir / "cfg.json", cfg.dump());
  const std::string c = (dir / "cfg.json").string();
  const CliRun ft = cli({"finetune", "--config", c, "--rotation", "1", "--out-dir", dir.str()});
  ASSERT_EQ(ft.code, kExitOk) << ft.err;
  int rpt = 0;
  for (const auto &e : fs::directory_iterator(dir.str())) {
    const std::string n = e.path().filename().string();
    if (n.rfind("finetune_a_rot1_step", 0) == 0 && e.path().extension() == ".rpt") ++rpt;
  }
  EXPECT_EQ(rpt, 1);
  EXPECT_EQ(cli({"finetune", "--config", c, "--rotation", "4"}).code, kExitUserError);
  EXPECT_EQ(cli({"finetune", "--config", c, "--dataset", "1"}).code, kExitUserError);

  const CliRun cv = cli({"crossval", "--config", c, "--out-dir", dir.str()});
  ASSERT_EQ(cv.code, kExitOk) << cv.err;
  EXPECT_NE(cv.out.find("over 4 folds"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "crossval_folds.csv"));
}

}  // namespace
}  // namespace rxnpt
