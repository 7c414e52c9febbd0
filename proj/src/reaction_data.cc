#include "rxnpt/reaction_data.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/core.h>

#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t at = s.find(sep, begin);
    if (at == std::string_view::npos) {
      out.push_back(s.substr(begin));
      return out;
    }
    out.push_back(s.substr(begin, at - begin));
    begin = at + 1;
  }
}

void check_fragment(std::string_view fragment, std::string_view role) {
  try {
    (void)parse_smiles(fragment);
  } catch (const SmilesError &e) {
    throw ReactionFormatError("smiles", fmt::format("{} fragment '{}': {}", role, fragment,
                                                    e.what()));
  }
}

}  // namespace

Reaction parse_reaction_line(std::string_view line) {
  line = trim(line);
  // Anything after the first whitespace (e.g. CXSMILES extensions) is ignored.
  if (auto ws = line.find_first_of(" \t"); ws != std::string_view::npos) {
    line = line.substr(0, ws);
  }
  const auto fields = split(line, '>');
  if (fields.size() != 3) {
    throw ReactionFormatError(
        "format", fmt::format("expected two '>' separators, found {}", fields.size() - 1));
  }
  Reaction r;
  if (fields[0].empty()) throw ReactionFormatError("format", "reaction has no reactants");
  if (fields[2].empty()) throw ReactionFormatError("format", "reaction has no product");
  const auto products = split(fields[2], '.');
  if (products.size() > 1) {
    throw ReactionFormatError("multi-product",
                              fmt::format("reaction has {} product fragments", products.size()));
  }
  for (auto f : split(fields[0], '.')) r.reactants.emplace_back(f);
  if (!fields[1].empty()) {
    for (auto f : split(fields[1], '.')) r.reagents.emplace_back(f);
  }
  r.product = std::string(products[0]);
  for (const auto &f : r.reactants) check_fragment(f, "reactant");
  for (const auto &f : r.reagents) check_fragment(f, "reagent");
  check_fragment(r.product, "product");
  return r;
}

FilterResult filter_and_truncate(const std::vector<Reaction> &reactions, std::size_t max_len) {
  FilterResult out;
  for (std::size_t i = 0; i < reactions.size(); ++i) {
    const Reaction &r = reactions[i];
    bool fits = r.product.size() <= max_len;
    for (const auto &f : r.reactants) fits = fits && f.size() <= max_len;
    for (const auto &f : r.reagents) fits = fits && f.size() <= max_len;
    if (fits) {
      out.kept.push_back(r);
      out.kept_indices.push_back(i);
    } else {
      out.dropped.push_back({i, "length"});
    }
  }
  return out;
}

Reaction augment_reaction(const Reaction &reaction, Rng &rng) {
  Reaction out;
  for (const auto &f : reaction.reactants) {
    out.reactants.push_back(write_randomized(parse_smiles(f), rng));
  }
  for (const auto &f : reaction.reagents) {
    out.reagents.push_back(write_randomized(parse_smiles(f), rng));
  }
  out.product = write_canonical(parse_smiles(reaction.product));
  return out;
}

CorpusLoad load_reaction_corpus(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError(fmt::format("cannot open reaction corpus '{}'", path.string()));
  CorpusLoad out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    const std::size_t index = lineno++;
    if (trim(line).empty()) continue;
    try {
      out.reactions.push_back(parse_reaction_line(line));
    } catch (const ReactionFormatError &e) {
      out.rejected.push_back({index, e.reason()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PropertyDataset parse_property_csv(std::string_view text, std::string name) {
  PropertyDataset ds;
  ds.name = std::move(name);
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view raw = text.substr(begin, end - begin);
    begin = end + 1;
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto cells = split(line, ',');
    for (auto &c : cells) c = trim(c);
    if (!have_header) {
      if (cells[0] != "smiles" || cells.size() < 2) {
        throw DataFormatError("missing header: expected \"smiles,<task>,...\" on the first line");
      }
      for (std::size_t i = 1; i < cells.size(); ++i) ds.task_names.emplace_back(cells[i]);
      have_header = true;
      continue;
    }
    if (cells.size() != ds.task_names.size() + 1) {
      throw DataFormatError(fmt::format("row {}: expected {} cells, found {}", lineno,
                                        ds.task_names.size() + 1, cells.size()));
    }
    PropertyRecord rec;
    rec.smiles = std::string(cells[0]);
    bool any = false;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i].empty()) {
        rec.labels.emplace_back(std::nullopt);
        continue;
      }
      double v = 0;
      const char *first = cells[i].data();
      const char *last = first + cells[i].size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) {
        throw DataFormatError(fmt::format("row {}: cannot parse '{}' as a number", lineno,
                                          cells[i]));
      }
      rec.labels.emplace_back(v);
      any = true;
    }
    if (!any) throw DataFormatError(fmt::format("row {}: no labels present", lineno));
    ds.records.push_back(std::move(rec));
    if (end == text.size()) break;
  }
  if (!have_header) throw DataFormatError("missing header: file is empty");
  return ds;
}

PropertyDataset load_property_csv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError(fmt::format("cannot open property file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_property_csv(ss.str(), path.stem().string());
}

// ---------------------------------------------------------------------------

FoldPlan::FoldPlan(int n_folds, std::vector<int> assignments, std::uint64_t seed)
    : n_folds_(n_folds), assignments_(std::move(assignments)), seed_(seed) {
  if (n_folds_ < 3) {
    throw std::invalid_argument(
        fmt::format("need at least 3 folds for test/validation/tuning roles, got {}", n_folds_));
  }
  for (int a : assignments_) {
    if (a < 0 || a >= n_folds_) throw std::invalid_argument("fold assignment out of range");
  }
}

FoldRoles FoldPlan::roles(int rotation) const {
  if (rotation < 0 || rotation >= n_folds_) {
    throw std::out_of_range(fmt::format("rotation {} outside [0, {})", rotation, n_folds_));
  }
  FoldRoles r;
  r.test = rotation;
  r.validation = (rotation + 1) % n_folds_;
  r.tuning = (rotation + 2) % n_folds_;
  for (int f = 0; f < n_folds_; ++f) {
    if (f != r.test && f != r.validation && f != r.tuning) r.training.push_back(f);
  }
  return r;
}

std::vector<std::size_t> FoldPlan::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments_.size(); ++i) {
    if (assignments_[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::members(const std::vector<int> &folds) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments_.size(); ++i) {
    if (std::find(folds.begin(), folds.end(), assignments_[i]) != folds.end()) out.push_back(i);
  }
  return out;
}

nlohmann::json FoldPlan::to_json() const {
  return {{"seed", seed_}, {"n_folds", n_folds_}, {"assignments", assignments_}};
}

FoldPlan FoldPlan::from_json(const nlohmann::json &j) {
  return FoldPlan(j.at("n_folds").get<int>(), j.at("assignments").get<std::vector<int>>(),
                  j.at("seed").get<std::uint64_t>());
}

FoldPlan make_fold_plan(const std::vector<PropertyRecord> &records, int n_folds,
                        std::optional<std::size_t> stratify, std::uint64_t seed) {
  if (n_folds < 3) {
    throw std::invalid_argument(
        fmt::format("need at least 3 folds for test/validation/tuning roles, got {}", n_folds));
  }
  if (records.size() < static_cast<std::size_t>(n_folds)) {
    throw std::invalid_argument(
        fmt::format("{} records cannot fill {} folds", records.size(), n_folds));
  }
  Rng rng(derive_seed(seed, "folds"));
  std::vector<std::size_t> order;
  if (!stratify) {
    order.resize(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto &labels = records[i].labels;
      if (*stratify >= labels.size() || !labels[*stratify]) {
        throw std::invalid_argument(
            fmt::format("stratification label missing for record {}", i));
      }
      const double v = *labels[*stratify];
      if (v == 1.0) {
        pos.push_back(i);
      } else if (v == 0.0) {
        neg.push_back(i);
      } else {
        throw std::invalid_argument(
            fmt::format("stratification label of record {} is not binary ({})", i, v));
      }
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    order = std::move(pos);
    order.insert(order.end(), neg.begin(), neg.end());
  }
  std::vector<int> assignments(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    assignments[order[i]] = static_cast<int>(i % static_cast<std::size_t>(n_folds));
  }
  return FoldPlan(n_folds, std::move(assignments), seed);
}

}  // namespace rxnpt
