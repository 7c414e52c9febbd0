#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rxnpt/smiles.h"

namespace rxnpt {

// One single-product reaction as reaction-SMILES fragments.
struct Reaction {
  std::vector<std::string> reactants;
  std::vector<std::string> reagents;
  std::string product;

  friend bool operator==(const Reaction &, const Reaction &) = default;
};

class ReactionFormatError : public std::runtime_error {
public:
  ReactionFormatError(std::string reason, const std::string &what)
      : std::runtime_error(what), reason_(std::move(reason)) {}
  // Short machine-readable cause, e.g. "multi-product" or "format".
  const std::string &reason() const { return reason_; }

private:
  std::string reason_;
};

// Parses "reactants>reagents>product". Every fragment must parse as SMILES.
Reaction parse_reaction_line(std::string_view line);

struct DroppedReaction {
  std::size_t index;
  std::string reason;
};

struct FilterResult {
  std::vector<Reaction> kept;
  std::vector<std::size_t> kept_indices;
  std::vector<DroppedReaction> dropped;
};

// Keeps reactions whose every fragment has at most max_len characters.
FilterResult filter_and_truncate(const std::vector<Reaction> &reactions,
                                 std::size_t max_len = 157);

// Reactants and reagents re-linearised at random, product canonical.
Reaction augment_reaction(const Reaction &reaction, Rng &rng);

struct CorpusLoad {
  std::vector<Reaction> reactions;
  std::vector<DroppedReaction> rejected;  // index = 0-based line number
};

// Reads one reaction per non-empty line. Malformed lines are reported in
// `rejected` rather than aborting the load.
CorpusLoad load_reaction_corpus(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Property data

struct PropertyRecord {
  std::string smiles;
  std::vector<std::optional<double>> labels;
};

struct PropertyDataset {
  std::string name;
  std::vector<std::string> task_names;
  std::vector<PropertyRecord> records;
};

class DataFormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

PropertyDataset load_property_csv(const std::filesystem::path &path);
PropertyDataset parse_property_csv(std::string_view text, std::string name = "");

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldRoles {
  int test;
  int validation;
  int tuning;
  std::vector<int> training;
};

class FoldPlan {
public:
  FoldPlan(int n_folds, std::vector<int> assignments, std::uint64_t seed);

  int n_folds() const { return n_folds_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int> &assignments() const { return assignments_; }

  // Rotation k: test = k, validation = k+1, tuning = k+2 (mod n), rest train.
  FoldRoles roles(int rotation) const;
  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> members(const std::vector<int> &folds) const;

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json &j);

private:
  int n_folds_;
  std::vector<int> assignments_;
  std::uint64_t seed_;
};

// Random folds, or folds stratified on binary label `stratify` when given.
FoldPlan make_fold_plan(const std::vector<PropertyRecord> &records, int n_folds,
                        std::optional<std::size_t> stratify, std::uint64_t seed);

}  // namespace rxnpt
