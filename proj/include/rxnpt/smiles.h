#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rxnpt {

using Rng = std::mt19937_64;

enum class BondOrder : std::uint8_t {
  kSingle = 1,
  kDouble = 2,
  kTriple = 3,
  kAromatic = 4,
};

struct Atom {
  std::string element;  // canonical capitalisation, e.g. "C", "Cl", "N"
  bool aromatic = false;
  int charge = 0;
  int hydrogens = 0;  // explicit H count, only meaningful for bracket atoms
  bool bracketed = false;

  friend bool operator==(const Atom &, const Atom &) = default;
};

struct Bond {
  int begin = 0;
  int end = 0;
  BondOrder order = BondOrder::kSingle;
};

// Heavy-atom molecular graph of a single connected fragment. No valence model:
// hydrogens exist only as the explicit count on bracket atoms.
class MolGraph {
public:
  int add_atom(Atom atom);
  // Throws std::invalid_argument when the bond would violate a graph invariant.
  void add_bond(int a, int b, BondOrder order);

  const std::vector<Atom> &atoms() const { return atoms_; }
  const std::vector<Bond> &bonds() const { return bonds_; }
  int num_atoms() const { return static_cast<int>(atoms_.size()); }
  int num_bonds() const { return static_cast<int>(bonds_.size()); }

  // Neighbor list of atom i as (neighbor atom, bond index) pairs.
  struct Neighbor {
    int atom;
    int bond;
  };
  const std::vector<Neighbor> &neighbors(int i) const { return adjacency_[i]; }
  int degree(int i) const { return static_cast<int>(adjacency_[i].size()); }

  // Index of the bond joining a and b, or -1.
  int find_bond(int a, int b) const;
  bool is_connected() const;

private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

class SmilesError : public std::runtime_error {
public:
  SmilesError(std::size_t position, std::string reason);

  std::size_t position() const { return position_; }
  const std::string &reason() const { return reason_; }

private:
  std::size_t position_;
  std::string reason_;
};

// Parses a single-fragment SMILES string. Positions in errors are 0-based
// byte offsets where the problem was detected (end of input for unclosed
// branches).
MolGraph parse_smiles(std::string_view smiles);

// Random depth-first linearisation: uniform start atom, uniformly shuffled
// neighbour order at every atom.
std::string write_randomized(const MolGraph &graph, Rng &rng);

// Canonical SMILES: Morgan-style rank refinement with tie breaking, then DFS
// from the lowest ranked atom visiting neighbours in rank order.
std::string write_canonical(const MolGraph &graph);

// Canonical atom ranks (a permutation of 0..n-1) used by write_canonical.
std::vector<int> canonical_ranks(const MolGraph &graph);

std::string canonicalize(std::string_view smiles);

// Splits a multi-component SMILES on '.'.
std::vector<std::string> split_fragments(std::string_view smiles);

// ---------------------------------------------------------------------------
// ASCII tokenisation

inline constexpr int kPadId = 128;
inline constexpr int kBosId = 129;
inline constexpr int kEosId = 130;
inline constexpr int kVocabSize = 131;

struct TokenSequence {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const TokenSequence &, const TokenSequence &) = default;
};

class TokenizeError : public std::runtime_error {
public:
  TokenizeError(std::size_t position, const std::string &what)
      : std::runtime_error(what), position_(position) {}
  std::size_t position() const { return position_; }

private:
  std::size_t position_;
};

TokenSequence tokenize(std::string_view text);
std::string detokenize(const TokenSequence &tokens);

}  // namespace rxnpt
