#include "rxnpt/smiles.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <numeric>
#include <optional>
#include <tuple>
#include <utility>

#include <fmt/core.h>

namespace rxnpt {
namespace {

constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
    "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs",
    "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

bool is_element(std::string_view sym) {
  return std::find(kElements.begin(), kElements.end(), sym) != kElements.end();
}

bool is_organic_subset(std::string_view sym) {
  return sym == "B" || sym == "C" || sym == "N" || sym == "O" || sym == "P" ||
         sym == "S" || sym == "F" || sym == "Cl" || sym == "Br" || sym == "I";
}

bool is_aromatic_organic(std::string_view sym) {
  return sym == "B" || sym == "C" || sym == "N" || sym == "O" || sym == "P" ||
         sym == "S";
}

bool can_be_aromatic_in_bracket(std::string_view sym) {
  return is_aromatic_organic(sym) || sym == "Se" || sym == "As";
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char &c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
  explicit Parser(std::string_view s) : s_(s) {}

  MolGraph run() {
    if (s_.empty()) throw SmilesError(0, "empty input");
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      switch (c) {
      case '(':
        open_branch();
        break;
      case ')':
        close_branch();
        break;
      case '-':
      case '=':
      case '#':
      case ':':
        set_bond(c);
        break;
      case '/':
      case '\\':
        throw SmilesError(pos_, "stereochemistry is not supported");
      case '$':
        throw SmilesError(pos_, "quadruple bonds are not supported");
      case '.':
        throw SmilesError(pos_, "multi-component SMILES; split on '.' first");
      case '%':
        ring_bond();
        break;
      case '[':
        bracket_atom();
        break;
      default:
        if (c >= '0' && c <= '9') {
          ring_bond();
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '*') {
          organic_atom();
        } else {
          throw SmilesError(pos_, fmt::format("unexpected character '{}'",
                                              printable(c)));
        }
      }
    }
    if (!branches_.empty()) {
      throw SmilesError(s_.size(), "unbalanced parenthesis");
    }
    if (pending_) {
      throw SmilesError(pending_pos_, "bond without a following atom");
    }
    if (!rings_.empty()) {
      const auto &[digit, open] = *rings_.begin();
      throw SmilesError(open.position,
                        fmt::format("unmatched ring-closure digit {}", digit));
    }
    if (graph_.num_atoms() == 0) throw SmilesError(0, "empty input");
    return std::move(graph_);
  }

private:
  struct RingOpen {
    int atom;
    std::optional<BondOrder> order;
    std::size_t position;
  };
  struct Branch {
    int atom;
    int atoms_at_open;
  };

  static std::string printable(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 32 && u < 127) return std::string(1, c);
    return fmt::format("\\x{:02x}", u);
  }

  static BondOrder bond_from_char(char c) {
    switch (c) {
    case '=':
      return BondOrder::kDouble;
    case '#':
      return BondOrder::kTriple;
    case ':':
      return BondOrder::kAromatic;
    default:
      return BondOrder::kSingle;
    }
  }

  void open_branch() {
    if (prev_ < 0) throw SmilesError(pos_, "branch without a preceding atom");
    if (pending_) throw SmilesError(pos_, "bond before a branch");
    branches_.push_back({prev_, graph_.num_atoms()});
    ++pos_;
  }

  void close_branch() {
    if (branches_.empty()) throw SmilesError(pos_, "unbalanced parenthesis");
    if (pending_) throw SmilesError(pos_, "bond without a following atom");
    if (branches_.back().atoms_at_open == graph_.num_atoms()) {
      throw SmilesError(pos_, "empty branch");
    }
    prev_ = branches_.back().atom;
    branches_.pop_back();
    ++pos_;
  }

  void set_bond(char c) {
    if (prev_ < 0) throw SmilesError(pos_, "bond without a preceding atom");
    if (pending_) throw SmilesError(pos_, "consecutive bond symbols");
    pending_ = bond_from_char(c);
    pending_pos_ = pos_;
    ++pos_;
  }

  void ring_bond() {
    const std::size_t start = pos_;
    if (prev_ < 0) throw SmilesError(pos_, "ring closure without a preceding atom");
    int digit = 0;
    if (s_[pos_] == '%') {
      if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2]))) {
        throw SmilesError(pos_, "'%' must be followed by two digits");
      }
      digit = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      digit = s_[pos_] - '0';
      ++pos_;
    }
    auto it = rings_.find(digit);
    if (it == rings_.end()) {
      rings_.emplace(digit, RingOpen{prev_, pending_, start});
      pending_.reset();
      return;
    }
    const RingOpen open = it->second;
    rings_.erase(it);
    if (open.atom == prev_) throw SmilesError(start, "ring closure to the same atom");
    if (open.order && pending_ && *open.order != *pending_) {
      throw SmilesError(start, "conflicting ring-closure bond symbols");
    }
    std::optional<BondOrder> order = open.order ? open.order : pending_;
    pending_.reset();
    connect(open.atom, prev_, order, start);
  }

  void connect(int a, int b, std::optional<BondOrder> order, std::size_t where) {
    const bool both_aromatic =
        graph_.atoms()[a].aromatic && graph_.atoms()[b].aromatic;
    const BondOrder resolved =
        order ? *order : (both_aromatic ? BondOrder::kAromatic : BondOrder::kSingle);
    if (resolved == BondOrder::kAromatic && !both_aromatic) {
      throw SmilesError(where, "aromatic bond between non-aromatic atoms");
    }
    if (graph_.find_bond(a, b) >= 0) throw SmilesError(where, "duplicate bond");
    graph_.add_bond(a, b, resolved);
  }

  void attach(Atom atom, std::size_t where) {
    const int idx = graph_.add_atom(std::move(atom));
    if (prev_ >= 0) {
      connect(prev_, idx, pending_, pending_ ? pending_pos_ : where);
    }
    pending_.reset();
    prev_ = idx;
  }

  void organic_atom() {
    const std::size_t start = pos_;
    const char c = s_[pos_];
    Atom atom;
    if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
      atom.element = "Cl";
      pos_ += 2;
    } else if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
      atom.element = "Br";
      pos_ += 2;
    } else if (std::isupper(static_cast<unsigned char>(c)) &&
               is_organic_subset(std::string_view(&s_[pos_], 1))) {
      atom.element = std::string(1, c);
      ++pos_;
    } else if (std::islower(static_cast<unsigned char>(c))) {
      const std::string up(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      if (!is_aromatic_organic(up)) {
        throw SmilesError(start, fmt::format("unknown atom symbol '{}'", c));
      }
      atom.element = up;
      atom.aromatic = true;
      ++pos_;
    } else {
      throw SmilesError(start, fmt::format("unknown atom symbol '{}'", printable(c)));
    }
    attach(std::move(atom), start);
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    ++pos_;
    auto at_end = [&] { return pos_ >= s_.size(); };
    auto unterminated = [&] { return SmilesError(start, "unterminated bracket atom"); };
    if (at_end()) throw unterminated();
    if (std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      throw SmilesError(pos_, "isotopes are not supported");
    }
    Atom atom;
    atom.bracketed = true;
    const char c = s_[pos_];
    if (std::islower(static_cast<unsigned char>(c))) {
      // aromatic: se, as, or single letter
      std::string sym;
      if (pos_ + 1 < s_.size() && ((c == 's' && s_[pos_ + 1] == 'e') ||
                                   (c == 'a' && s_[pos_ + 1] == 's'))) {
        sym = std::string(1, static_cast<char>(std::toupper(c))) + s_[pos_ + 1];
        pos_ += 2;
      } else {
        sym = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        ++pos_;
      }
      if (!can_be_aromatic_in_bracket(sym)) {
        throw SmilesError(start + 1, fmt::format("unknown atom symbol '{}'", lowercase(sym)));
      }
      atom.element = sym;
      atom.aromatic = true;
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      std::string two;
      if (pos_ + 1 < s_.size() && std::islower(static_cast<unsigned char>(s_[pos_ + 1]))) {
        two = std::string{c, s_[pos_ + 1]};
      }
      if (!two.empty() && is_element(two)) {
        atom.element = two;
        pos_ += 2;
      } else if (is_element(std::string(1, c))) {
        atom.element = std::string(1, c);
        ++pos_;
      } else {
        throw SmilesError(start + 1, fmt::format("unknown atom symbol '{}'",
                                                 two.empty() ? std::string(1, c) : two));
      }
    } else {
      throw SmilesError(pos_, fmt::format("unknown atom symbol '{}'", printable(c)));
    }
    if (!at_end() && s_[pos_] == '@') {
      throw SmilesError(pos_, "stereochemistry is not supported");
    }
    if (!at_end() && s_[pos_] == 'H') {
      ++pos_;
      int h = 1;
      if (!at_end() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        h = s_[pos_] - '0';
        ++pos_;
      }
      atom.hydrogens = h;
    }
    if (!at_end() && (s_[pos_] == '+' || s_[pos_] == '-')) {
      const char sign = s_[pos_];
      const int unit = sign == '+' ? 1 : -1;
      ++pos_;
      int magnitude = 1;
      if (!at_end() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        magnitude = s_[pos_] - '0';
        ++pos_;
        if (!at_end() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
          magnitude = magnitude * 10 + (s_[pos_] - '0');
          ++pos_;
        }
      } else {
        while (!at_end() && s_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      if (magnitude > 15) throw SmilesError(pos_, "charge out of range");
      atom.charge = unit * magnitude;
    }
    if (!at_end() && s_[pos_] == ':') {
      throw SmilesError(pos_, "atom classes are not supported");
    }
    if (at_end()) throw unterminated();
    if (s_[pos_] != ']') {
      throw SmilesError(pos_, fmt::format("unexpected character '{}' in bracket atom",
                                          printable(s_[pos_])));
    }
    ++pos_;
    attach(std::move(atom), start);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  MolGraph graph_;
  int prev_ = -1;
  std::optional<BondOrder> pending_;
  std::size_t pending_pos_ = 0;
  std::vector<Branch> branches_;
  std::map<int, RingOpen> rings_;
};

// ---------------------------------------------------------------------------
// Writer

std::string atom_text(const Atom &atom) {
  const std::string sym = atom.aromatic ? lowercase(atom.element) : atom.element;
  if (!atom.bracketed) return sym;
  std::string out = "[" + sym;
  if (atom.hydrogens > 0) {
    out += 'H';
    if (atom.hydrogens > 1) out += std::to_string(atom.hydrogens);
  }
  if (atom.charge != 0) {
    out += atom.charge > 0 ? '+' : '-';
    const int mag = std::abs(atom.charge);
    if (mag > 1) out += std::to_string(mag);
  }
  out += ']';
  return out;
}

std::string bond_text(const MolGraph &g, const Bond &bond) {
  switch (bond.order) {
  case BondOrder::kSingle:
    return (g.atoms()[bond.begin].aromatic && g.atoms()[bond.end].aromatic) ? "-" : "";
  case BondOrder::kDouble:
    return "=";
  case BondOrder::kTriple:
    return "#";
  case BondOrder::kAromatic:
    return "";
  }
  return "";
}

std::string ring_label(int digit) {
  return digit < 10 ? std::to_string(digit) : fmt::format("%{:02d}", digit);
}

// Depth-first linearisation. `order_neighbors` permutes the candidate
// neighbours of an atom in place before they are visited.
template <typename OrderFn>
std::string write_dfs(const MolGraph &g, int start, OrderFn &&order_neighbors) {
  const int n = g.num_atoms();
  std::vector<char> visited(n, 0);
  std::vector<char> used(g.num_bonds(), 0);
  std::vector<int> preorder_index(n, -1);
  std::vector<int> preorder;
  std::vector<std::vector<MolGraph::Neighbor>> children(n);
  // Ring closures touching each atom: (partner atom, bond index).
  std::vector<std::vector<MolGraph::Neighbor>> rings(n);

  // Explicit stack to avoid deep recursion on long chains.
  struct Frame {
    int atom;
    std::vector<MolGraph::Neighbor> nbrs;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  auto enter = [&](int atom) {
    visited[atom] = 1;
    preorder_index[atom] = static_cast<int>(preorder.size());
    preorder.push_back(atom);
    std::vector<MolGraph::Neighbor> nbrs = g.neighbors(atom);
    order_neighbors(atom, nbrs);
    stack.push_back({atom, std::move(nbrs), 0});
  };
  enter(start);
  while (!stack.empty()) {
    Frame &f = stack.back();
    if (f.next == f.nbrs.size()) {
      stack.pop_back();
      continue;
    }
    const MolGraph::Neighbor nb = f.nbrs[f.next++];
    if (used[nb.bond]) continue;
    used[nb.bond] = 1;
    const int atom = f.atom;
    if (!visited[nb.atom]) {
      children[atom].push_back(nb);
      enter(nb.atom);
    } else {
      rings[atom].push_back(nb);
      rings[nb.atom].push_back({atom, nb.bond});
    }
  }

  std::string out;
  std::vector<int> open_digit(g.num_bonds(), 0);
  std::vector<char> digit_in_use(100, 0);
  auto emit = [&](auto &self, int atom) -> void {
    out += atom_text(g.atoms()[atom]);
    auto events = rings[atom];
    std::sort(events.begin(), events.end(), [&](const auto &a, const auto &b) {
      return preorder_index[a.atom] < preorder_index[b.atom];
    });
    std::vector<int> to_free;
    for (const auto &ev : events) {
      if (open_digit[ev.bond] != 0) {
        out += ring_label(open_digit[ev.bond]);
        to_free.push_back(open_digit[ev.bond]);
      } else {
        int d = 1;
        while (d < 100 && digit_in_use[d]) ++d;
        if (d == 100) throw std::runtime_error("too many open rings to write SMILES");
        digit_in_use[d] = 1;
        open_digit[ev.bond] = d;
        out += bond_text(g, g.bonds()[ev.bond]);
        out += ring_label(d);
      }
    }
    for (int d : to_free) digit_in_use[d] = 0;
    const auto &kids = children[atom];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const bool last = i + 1 == kids.size();
      if (!last) out += '(';
      out += bond_text(g, g.bonds()[kids[i].bond]);
      self(self, kids[i].atom);
      if (!last) out += ')';
    }
  };
  emit(emit, start);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

SmilesError::SmilesError(std::size_t position, std::string reason)
    : std::runtime_error(fmt::format("position {}: {}", position, reason)),
      position_(position),
      reason_(std::move(reason)) {}

int MolGraph::add_atom(Atom atom) {
  if (atom.charge != 0 || atom.hydrogens != 0 || !is_organic_subset(atom.element) ||
      (atom.aromatic && !is_aromatic_organic(atom.element))) {
    atom.bracketed = true;
  }
  atoms_.push_back(std::move(atom));
  adjacency_.emplace_back();
  return num_atoms() - 1;
}

void MolGraph::add_bond(int a, int b, BondOrder order) {
  if (a < 0 || b < 0 || a >= num_atoms() || b >= num_atoms()) {
    throw std::invalid_argument("bond endpoint out of range");
  }
  if (a == b) throw std::invalid_argument("bond endpoints must differ");
  if (find_bond(a, b) >= 0) throw std::invalid_argument("duplicate bond");
  if (order == BondOrder::kAromatic && !(atoms_[a].aromatic && atoms_[b].aromatic)) {
    throw std::invalid_argument("aromatic bond between non-aromatic atoms");
  }
  const int idx = num_bonds();
  bonds_.push_back({a, b, order});
  adjacency_[a].push_back({b, idx});
  adjacency_[b].push_back({a, idx});
}

int MolGraph::find_bond(int a, int b) const {
  for (const auto &nb : adjacency_[a]) {
    if (nb.atom == b) return nb.bond;
  }
  return -1;
}

bool MolGraph::is_connected() const {
  if (atoms_.empty()) return false;
  std::vector<char> seen(atoms_.size(), 0);
  std::vector<int> todo{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!todo.empty()) {
    const int a = todo.back();
    todo.pop_back();
    for (const auto &nb : adjacency_[a]) {
      if (!seen[nb.atom]) {
        seen[nb.atom] = 1;
        ++count;
        todo.push_back(nb.atom);
      }
    }
  }
  return count == atoms_.size();
}

MolGraph parse_smiles(std::string_view smiles) { return Parser(smiles).run(); }

std::string write_randomized(const MolGraph &graph, Rng &rng) {
  if (graph.num_atoms() == 0) return {};
  std::uniform_int_distribution<int> pick(0, graph.num_atoms() - 1);
  const int start = pick(rng);
  return write_dfs(graph, start, [&rng](int, std::vector<MolGraph::Neighbor> &nbrs) {
    std::shuffle(nbrs.begin(), nbrs.end(), rng);
  });
}

std::vector<int> canonical_ranks(const MolGraph &g) {
  const int n = g.num_atoms();
  using InitKey = std::tuple<std::string, int, int, bool, int, bool>;
  std::vector<InitKey> init(n);
  for (int i = 0; i < n; ++i) {
    const Atom &a = g.atoms()[i];
    init[i] = {a.element, a.charge, g.degree(i), a.aromatic, a.hydrogens, a.bracketed};
  }
  std::vector<int> rank(n, 0);
  auto rank_by = [n](const auto &keys, std::vector<int> &out) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return keys[a] < keys[b]; });
    int r = 0;
    for (int i = 0; i < n; ++i) {
      if (i > 0 && keys[idx[i - 1]] < keys[idx[i]]) ++r;
      out[idx[i]] = r;
    }
    return n == 0 ? 0 : r + 1;
  };
  int classes = rank_by(init, rank);

  using RefineKey = std::pair<int, std::vector<std::pair<int, int>>>;
  auto refine = [&] {
    while (true) {
      std::vector<RefineKey> keys(n);
      for (int i = 0; i < n; ++i) {
        keys[i].first = rank[i];
        for (const auto &nb : g.neighbors(i)) {
          keys[i].second.emplace_back(static_cast<int>(g.bonds()[nb.bond].order),
                                      rank[nb.atom]);
        }
        std::sort(keys[i].second.begin(), keys[i].second.end());
      }
      std::vector<int> next(n);
      const int next_classes = rank_by(keys, next);
      rank = std::move(next);
      if (next_classes == classes) break;
      classes = next_classes;
    }
  };
  refine();
  while (classes < n) {
    // Individualise the lowest-index member of the lowest tied class.
    std::vector<int> count(classes, 0);
    for (int r : rank) ++count[r];
    int tied = 0;
    while (count[tied] < 2) ++tied;
    int chosen = -1;
    for (int i = 0; i < n && chosen < 0; ++i) {
      if (rank[i] == tied) chosen = i;
    }
    std::vector<std::pair<int, int>> keys(n);
    for (int i = 0; i < n; ++i) keys[i] = {rank[i], i == chosen ? 0 : 1};
    classes = rank_by(keys, rank);
    refine();
  }
  return rank;
}

std::string write_canonical(const MolGraph &graph) {
  if (graph.num_atoms() == 0) return {};
  const std::vector<int> rank = canonical_ranks(graph);
  const int start = static_cast<int>(std::min_element(rank.begin(), rank.end()) - rank.begin());
  return write_dfs(graph, start, [&rank](int, std::vector<MolGraph::Neighbor> &nbrs) {
    std::sort(nbrs.begin(), nbrs.end(),
              [&](const auto &a, const auto &b) { return rank[a.atom] < rank[b.atom]; });
  });
}

std::string canonicalize(std::string_view smiles) {
  return write_canonical(parse_smiles(smiles));
}

std::vector<std::string> split_fragments(std::string_view smiles) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t dot = smiles.find('.', begin);
    if (dot == std::string_view::npos) {
      out.emplace_back(smiles.substr(begin));
      break;
    }
    out.emplace_back(smiles.substr(begin, dot - begin));
    begin = dot + 1;
  }
  return out;
}

TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  out.ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c > 127) {
      throw TokenizeError(i, fmt::format("non-ASCII character at position {}", i));
    }
    out.ids.push_back(c);
  }
  return out;
}

std::string detokenize(const TokenSequence &tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id > 127) {
      throw TokenizeError(i, fmt::format("token id {} at position {} is not a character", id, i));
    }
    out.push_back(static_cast<char>(id));
  }
  return out;
}

}  // namespace rxnpt
