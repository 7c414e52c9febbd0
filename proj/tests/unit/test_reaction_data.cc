#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "rxnpt/reaction_data.h"
#include "support/test_support.h"

namespace rxnpt {
namespace {

TEST(ParseReactionLine, SplitsRoles) {
  const Reaction r = parse_reaction_line("CCO.CC(=O)O>>CC(=O)OCC");
  EXPECT_EQ(r.reactants, (std::vector<std::string>{"CCO", "CC(=O)O"}));
  EXPECT_TRUE(r.reagents.empty());
  EXPECT_EQ(r.product, "CC(=O)OCC");

  const Reaction with_reagent = parse_reaction_line("CCO>[Na+].O>CC=O");
  EXPECT_EQ(with_reagent.reagents, (std::vector<std::string>{"[Na+]", "O"}));
}

TEST(ParseReactionLine, MultiProduct) {
  try {
    parse_reaction_line("A>B>C.D");
    FAIL();
  } catch (const ReactionFormatError &e) {
    EXPECT_EQ(e.reason(), "multi-product");
  }
}

TEST(ParseReactionLine, SeparatorCount) {
  try {
    parse_reaction_line("CCO>CC(=O)OCC");
    FAIL();
  } catch (const ReactionFormatError &e) {
    EXPECT_EQ(e.reason(), "format");
    EXPECT_NE(std::string(e.what()).find("expected two '>' separators"), std::string::npos);
  }
  EXPECT_THROW(parse_reaction_line("C>C>C>C"), ReactionFormatError);
}

TEST(ParseReactionLine, BadFragment) {
  try {
    parse_reaction_line("C(>>CC");
    FAIL();
  } catch (const ReactionFormatError &e) {
    EXPECT_EQ(e.reason(), "smiles");
  }
  EXPECT_THROW(parse_reaction_line(">>CC"), ReactionFormatError);
}

Reaction make(std::string reactant, std::string product) {
  return Reaction{{std::move(reactant)}, {}, std::move(product)};
}

TEST(FilterAndTruncate, LengthBoundary) {
  const std::string at_limit(157, 'C');
  const std::string over(158, 'C');
  const auto result = filter_and_truncate({make("CC", at_limit), make("CC", over)});
  ASSERT_EQ(result.kept.size(), 1u);
  EXPECT_EQ(result.kept[0].product, at_limit);
  EXPECT_EQ(result.kept_indices, (std::vector<std::size_t>{0}));
  ASSERT_EQ(result.dropped.size(), 1u);
  EXPECT_EQ(result.dropped[0].index, 1u);
  EXPECT_EQ(result.dropped[0].reason, "length");

  const auto empty = filter_and_truncate({});
  EXPECT_TRUE(empty.kept.empty());
  EXPECT_TRUE(empty.dropped.empty());
}

TEST(FilterAndTruncate, ReagentsCountToo) {
  Reaction r = make("C", "C");
  r.reagents.push_back(std::string(10, 'C'));
  EXPECT_EQ(filter_and_truncate({r}, 9).dropped.size(), 1u);
  EXPECT_EQ(filter_and_truncate({r}, 10).kept.size(), 1u);
}

TEST(FilterAndTruncate, MonotoneInMaxLength) {
  Rng rng(5);
  std::vector<Reaction> reactions;
  std::uniform_int_distribution<int> len(1, 30);
  for (int i = 0; i < 200; ++i) {
    reactions.push_back(make(std::string(len(rng), 'C'), std::string(len(rng), 'C')));
  }
  std::vector<std::size_t> previous;
  for (std::size_t max_len = 1; max_len <= 31; ++max_len) {
    const auto kept = filter_and_truncate(reactions, max_len).kept_indices;
    EXPECT_TRUE(std::includes(kept.begin(), kept.end(), previous.begin(), previous.end()));
    previous = kept;
  }
  EXPECT_EQ(previous.size(), reactions.size());
}

TEST(AugmentReaction, ProductCanonicalReactantsEquivalent) {
  const Reaction r = parse_reaction_line("OC(=O)c1ccccc1.OCC>[H+]>CCOC(=O)c1ccccc1");
  const std::string canonical_product = canonicalize(r.product);
  std::set<std::string> variants;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Reaction a = augment_reaction(r, rng);
    EXPECT_EQ(a.product, canonical_product);
    ASSERT_EQ(a.reactants.size(), r.reactants.size());
    for (std::size_t i = 0; i < r.reactants.size(); ++i) {
      EXPECT_EQ(canonicalize(a.reactants[i]), canonicalize(r.reactants[i]));
      EXPECT_TRUE(testing::isomorphic(parse_smiles(a.reactants[i]), parse_smiles(r.reactants[i])));
    }
    EXPECT_EQ(a.reagents, r.reagents);
    variants.insert(a.reactants[0]);
  }
  EXPECT_GT(variants.size(), 1u);
}

TEST(AugmentReaction, SingleAtomFixedPoint) {
  const Reaction r = parse_reaction_line("C.O>[Na+]>N");
  Rng rng(11);
  EXPECT_EQ(augment_reaction(r, rng), r);
}

TEST(LoadReactionCorpus, RecordsRejectedLines) {
  const auto path = std::filesystem::temp_directory_path() / "rxnpt_corpus_test.txt";
  {
    std::ofstream out(path);
    out << "CCO>>CC=O\n\nC>C>C.C\nCC>N\nCC(C)O>>CC(C)=O extra\n";
  }
  const CorpusLoad load = load_reaction_corpus(path);
  std::filesystem::remove(path);
  ASSERT_EQ(load.reactions.size(), 2u);
  EXPECT_EQ(load.reactions[1].product, "CC(C)=O");
  ASSERT_EQ(load.rejected.size(), 2u);
  EXPECT_EQ(load.rejected[0].index, 2u);
  EXPECT_EQ(load.rejected[0].reason, "multi-product");
  EXPECT_EQ(load.rejected[1].index, 3u);
  EXPECT_EQ(load.rejected[1].reason, "format");
}

TEST(PropertyCsv, Examples) {
  const PropertyDataset one = parse_property_csv("smiles,y\nCCO,1.2");
  ASSERT_EQ(one.records.size(), 1u);
  EXPECT_EQ(one.task_names, (std::vector<std::string>{"y"}));
  EXPECT_DOUBLE_EQ(*one.records[0].labels[0], 1.2);

  const PropertyDataset two = parse_property_csv("smiles,a,b\nCCO,1,");
  ASSERT_EQ(two.records[0].labels.size(), 2u);
  EXPECT_DOUBLE_EQ(*two.records[0].labels[0], 1.0);
  EXPECT_FALSE(two.records[0].labels[1].has_value());
}

TEST(PropertyCsv, Errors) {
  try {
    parse_property_csv("smiles,a\nCCO,1\nCC,1,2\n");
    FAIL();
  } catch (const DataFormatError &e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_property_csv("CCO,1\n"), DataFormatError);
  EXPECT_THROW(parse_property_csv(""), DataFormatError);
  EXPECT_THROW(parse_property_csv("smiles,a\nCCO,abc\n"), DataFormatError);
}

TEST(PropertyCsv, LoadUsesFileStem) {
  const auto path = std::filesystem::temp_directory_path() / "esol_small.csv";
  {
    std::ofstream out(path);
    out << "smiles,logS\nCCO,0.5\nc1ccccc1,-2\n";
  }
  const PropertyDataset d = load_property_csv(path);
  std::filesystem::remove(path);
  EXPECT_EQ(d.name, "esol_small");
  EXPECT_EQ(d.records.size(), 2u);
}

std::vector<PropertyRecord> records(int n, int positives = 0) {
  std::vector<PropertyRecord> out;
  for (int i = 0; i < n; ++i) out.push_back({"C", {i < positives ? 1.0 : 0.0}});
  return out;
}

TEST(FoldPlan, HundredRecordsTenFolds) {
  const FoldPlan plan = make_fold_plan(records(100), 10, std::nullopt, 7);
  for (int f = 0; f < 10; ++f) EXPECT_EQ(plan.members(f).size(), 10u);
  const FoldRoles roles = plan.roles(0);
  EXPECT_EQ(roles.test, 0);
  EXPECT_EQ(roles.validation, 1);
  EXPECT_EQ(roles.tuning, 2);
  EXPECT_EQ(roles.training, (std::vector<int>{3, 4, 5, 6, 7, 8, 9}));
}

TEST(FoldPlan, StratifiedOnePositivePerFold) {
  const FoldPlan plan = make_fold_plan(records(20, 10), 10, 0, 3);
  const auto recs = records(20, 10);
  for (int f = 0; f < 10; ++f) {
    int pos = 0;
    for (std::size_t i : plan.members(f)) pos += *recs[i].labels[0] == 1.0;
    EXPECT_EQ(pos, 1) << f;
  }
}

TEST(FoldPlan, StratificationWithinOneRecord) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int n = std::uniform_int_distribution<int>(10, 200)(rng);
    const int positives = std::uniform_int_distribution<int>(0, n)(rng);
    const int folds = std::uniform_int_distribution<int>(3, 10)(rng);
    const auto recs = records(n, positives);
    const FoldPlan plan = make_fold_plan(recs, folds, 0, seed);
    const double global = static_cast<double>(positives) / n;
    for (int f = 0; f < folds; ++f) {
      const auto m = plan.members(f);
      int pos = 0;
      for (std::size_t i : m) pos += *recs[i].labels[0] == 1.0;
      EXPECT_LE(std::abs(pos - global * m.size()), 1.0 + 1e-9);
    }
  }
}

TEST(FoldPlan, Errors) {
  EXPECT_THROW(make_fold_plan(records(10), 2, std::nullopt, 1), std::invalid_argument);
  EXPECT_THROW(make_fold_plan(records(2), 3, std::nullopt, 1), std::invalid_argument);
  auto bad = records(10, 5);
  bad[3].labels[0] = 0.5;
  EXPECT_THROW(make_fold_plan(bad, 3, 0, 1), std::invalid_argument);
  bad[3].labels[0] = std::nullopt;
  EXPECT_THROW(make_fold_plan(bad, 3, 0, 1), std::invalid_argument);
}

TEST(FoldPlan, PartitionAndRoleRotation) {
  for (int n_folds = 3; n_folds <= 12; ++n_folds) {
    const int n = 37 + n_folds;
    const FoldPlan plan = make_fold_plan(records(n), n_folds, std::nullopt, n_folds);
    std::vector<int> seen(n, 0);
    std::size_t lo = n, hi = 0;
    for (int f = 0; f < n_folds; ++f) {
      const auto m = plan.members(f);
      lo = std::min(lo, m.size());
      hi = std::max(hi, m.size());
      for (std::size_t i : m) ++seen[i];
    }
    for (int c : seen) EXPECT_EQ(c, 1);
    EXPECT_LE(hi - lo, 1u);

    std::map<int, int> test, val, tune, train;
    for (int k = 0; k < n_folds; ++k) {
      const FoldRoles r = plan.roles(k);
      ++test[r.test];
      ++val[r.validation];
      ++tune[r.tuning];
      EXPECT_EQ(r.training.size(), static_cast<std::size_t>(n_folds - 3));
      for (int f : r.training) {
        EXPECT_NE(f, r.test);
        EXPECT_NE(f, r.validation);
        EXPECT_NE(f, r.tuning);
      }
    }
    for (int f = 0; f < n_folds; ++f) {
      EXPECT_EQ(test[f], 1);
      EXPECT_EQ(val[f], 1);
      EXPECT_EQ(tune[f], 1);
    }
  }
}

TEST(FoldPlan, JsonRoundTripAndDeterminism) {
  const FoldPlan a = make_fold_plan(records(53), 10, std::nullopt, 99);
  const FoldPlan b = FoldPlan::from_json(nlohmann::json::parse(a.to_json().dump()));
  EXPECT_EQ(a.assignments(), b.assignments());
  EXPECT_EQ(a.seed(), b.seed());
  EXPECT_EQ(a.n_folds(), b.n_folds());
  EXPECT_EQ(make_fold_plan(records(53), 10, std::nullopt, 99).assignments(), a.assignments());
  EXPECT_NE(make_fold_plan(records(53), 10, std::nullopt, 100).assignments(), a.assignments());
}

}  // namespace
}  // namespace rxnpt
