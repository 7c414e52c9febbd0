#include "test_support.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rxnpt::testing {
namespace {

int pick(Rng &rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Atom random_atom(Rng &rng, const MoleculeOptions &opts) {
  static const char *kElements[] = {"C", "C", "C", "C", "N", "O", "S", "F", "Cl", "Br", "P", "I", "B"};
  Atom a;
  a.element = kElements[pick(rng, 0, 12)];
  if (opts.charges && pick(rng, 0, 14) == 0) {
    a.charge = pick(rng, 0, 1) ? 1 : -1;
    a.hydrogens = pick(rng, 0, 2);
    a.bracketed = true;
  }
  return a;
}

void add_aromatic_ring(MolGraph &g, Rng &rng, int anchor) {
  const int size = pick(rng, 0, 1) ? 6 : 5;
  std::vector<int> ring;
  for (int i = 0; i < size; ++i) {
    Atom a;
    a.element = pick(rng, 0, 4) == 0 ? (pick(rng, 0, 1) ? "N" : "O") : "C";
    if (size == 6 && a.element == "O") a.element = "N";
    a.aromatic = true;
    ring.push_back(g.add_atom(a));
  }
  for (int i = 0; i < size; ++i) g.add_bond(ring[i], ring[(i + 1) % size], BondOrder::kAromatic);
  if (anchor >= 0) g.add_bond(anchor, ring[pick(rng, 0, size - 1)], BondOrder::kSingle);
}

bool match(const MolGraph &a, const MolGraph &b, std::vector<int> &map, std::vector<char> &used,
           int next) {
  const int n = a.num_atoms();
  if (next == n) return true;
  for (int cand = 0; cand < n; ++cand) {
    if (used[cand]) continue;
    if (!(a.atoms()[next] == b.atoms()[cand]) || a.degree(next) != b.degree(cand)) continue;
    bool ok = true;
    for (const auto &nb : a.neighbors(next)) {
      if (nb.atom >= next) continue;
      const int other = b.find_bond(cand, map[nb.atom]);
      if (other < 0 || b.bonds()[other].order != a.bonds()[nb.bond].order) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    map[next] = cand;
    used[cand] = 1;
    if (match(a, b, map, used, next + 1)) return true;
    used[cand] = 0;
  }
  return false;
}

std::set<std::string> subtree_strings(const MolGraph &g, int atom, int parent) {
  std::vector<int> children;
  for (const auto &nb : g.neighbors(atom)) {
    if (nb.atom != parent) children.push_back(nb.atom);
  }
  const std::string symbol = g.atoms()[atom].element;
  if (children.empty()) return {symbol};
  std::vector<std::set<std::string>> sub;
  for (int c : children) sub.push_back(subtree_strings(g, c, atom));
  std::vector<int> order(children.size());
  std::iota(order.begin(), order.end(), 0);
  std::set<std::string> out;
  do {
    std::vector<std::string> partial = {symbol};
    for (std::size_t k = 0; k < order.size(); ++k) {
      const bool last = k + 1 == order.size();
      std::vector<std::string> next;
      for (const auto &p : partial) {
        for (const auto &s : sub[order[k]]) next.push_back(p + (last ? s : "(" + s + ")"));
      }
      partial = std::move(next);
    }
    out.insert(partial.begin(), partial.end());
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

}  // namespace

MolGraph random_molecule(Rng &rng, const MoleculeOptions &opts) {
  MolGraph g;
  const int target = pick(rng, opts.min_atoms, opts.max_atoms);
  while (g.num_atoms() < target) {
    const int n = g.num_atoms();
    if (opts.aromatic_rings && target - n >= 6 && pick(rng, 0, 5) == 0) {
      add_aromatic_ring(g, rng, n == 0 ? -1 : pick(rng, 0, n - 1));
      continue;
    }
    const int idx = g.add_atom(random_atom(rng, opts));
    if (n == 0) continue;
    const int r = pick(rng, 0, 9);
    const BondOrder order = r < 7 ? BondOrder::kSingle : r < 9 ? BondOrder::kDouble : BondOrder::kTriple;
    g.add_bond(pick(rng, 0, n - 1), idx, order);
  }
  const int closures = pick(rng, 0, opts.max_ring_closures);
  for (int c = 0; c < closures && g.num_atoms() >= 4; ++c) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int a = pick(rng, 0, g.num_atoms() - 1);
      const int b = pick(rng, 0, g.num_atoms() - 1);
      if (a == b || g.find_bond(a, b) >= 0) continue;
      if (g.atoms()[a].aromatic && g.atoms()[b].aromatic) continue;
      g.add_bond(a, b, BondOrder::kSingle);
      break;
    }
  }
  return g;
}

bool isomorphic(const MolGraph &a, const MolGraph &b) {
  if (a.num_atoms() != b.num_atoms() || a.num_bonds() != b.num_bonds()) return false;
  std::vector<int> map(a.num_atoms(), -1);
  std::vector<char> used(a.num_atoms(), 0);
  return match(a, b, map, used, 0);
}

std::set<std::string> tree_linearizations(const MolGraph &tree) {
  std::set<std::string> out;
  for (int start = 0; start < tree.num_atoms(); ++start) {
    const auto part = subtree_strings(tree, start, -1);
    out.insert(part.begin(), part.end());
  }
  return out;
}

Tensor random_tensor(Rng &rng, std::vector<std::size_t> shape, double scale) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (Real &v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

Var probe(Var x, const Tensor &target) {
  return ops::masked_mse(x, target, Tensor(target.shape(), Real(1)));
}

double gradient_check(const ScalarFn &fn, std::vector<Tensor> inputs, double step, bool training) {
  constexpr std::uint64_t kDropoutSeed = 17;
  std::vector<Tensor> analytic;
  {
    Graph g(training, kDropoutSeed);
    std::vector<Var> vars;
    for (const Tensor &t : inputs) vars.push_back(g.variable(t));
    Var out = fn(g, vars);
    g.backward(out);
    for (const Var &v : vars) {
      Tensor grad = g.grad(v);
      if (grad.size() == 0) grad = Tensor(v.value().shape());
      analytic.push_back(grad);
    }
  }
  auto evaluate = [&](const std::vector<Tensor> &xs) {
    Graph g(training, kDropoutSeed);
    std::vector<Var> vars;
    for (const Tensor &t : xs) vars.push_back(g.variable(t));
    return static_cast<double>(fn(g, vars).value()[0]);
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const Real saved = inputs[k][i];
      inputs[k][i] = static_cast<Real>(saved + step);
      const double plus = evaluate(inputs);
      inputs[k][i] = static_cast<Real>(saved - step);
      const double minus = evaluate(inputs);
      inputs[k][i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double a = static_cast<double>(analytic[k][i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

double parameter_gradient_check(ParameterSet &params, const std::function<Var(Graph &)> &loss,
                                double step) {
  params.zero_grad();
  {
    Graph g;
    Var out = loss(g);
    g.backward(out);
    g.accumulate_param_grads(params);
  }
  auto evaluate = [&] {
    Graph g;
    return static_cast<double>(loss(g).value()[0]);
  };
  double diff2 = 0, a2 = 0, n2 = 0;
  for (Parameter &p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real saved = p.value[i];
      p.value[i] = static_cast<Real>(saved + step);
      const double plus = evaluate();
      p.value[i] = static_cast<Real>(saved - step);
      const double minus = evaluate();
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double a = static_cast<double>(p.grad[i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

}  // namespace rxnpt::testing

namespace rxnpt::testing {

std::vector<NamedError> op_gradient_errors(std::uint64_t seed) {
  Rng rng(seed);
  auto r = [&](std::vector<std::size_t> shape, double scale = 1.0) {
    return random_tensor(rng, std::move(shape), scale);
  };
  std::vector<NamedError> out;
  auto check = [&](std::string name, const ScalarFn &fn, std::vector<Tensor> inputs,
                   bool training = false) {
    out.push_back({std::move(name), gradient_check(fn, std::move(inputs), 1e-5, training)});
  };

  const Tensor t32 = r({3, 2});
  check("matmul", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::matmul(v[0], v[1]), t32);
  }, {r({3, 4}), r({4, 2})});

  const Tensor t53 = r({5, 3});
  check("linear", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::linear(v[0], v[1], v[2]), t53);
  }, {r({5, 4}), r({4, 3}), r({3})});

  const Tensor t23 = r({2, 3});
  check("add/sum/scale", [&](Graph &, const std::vector<Var> &v) {
    const Var terms[] = {v[0], ops::scale(v[1], Real(-1.7)), v[2]};
    return probe(ops::add(ops::sum(terms), v[0]), t23);
  }, {r({2, 3}), r({2, 3}), r({2, 3})});

  const Tensor t44 = r({4, 4});
  check("relu", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::relu(v[0]), t44);
  }, {r({4, 4})});

  const Tensor t36 = r({3, 6});
  check("layer_norm", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::layer_norm(v[0], v[1], v[2]), t36);
  }, {r({3, 6}), r({6}), r({6})});

  const Tensor t43 = r({4, 3});
  const std::vector<int> ids = {2, 0, 2, 4};
  check("embedding", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::embedding(ids, v[0]), t43);
  }, {r({5, 3})});

  const Tensor t45 = r({4, 5});
  check("dropout", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::dropout(v[0], Real(0.3)), t45);
  }, {r({4, 5})}, true);

  const Tensor t34 = r({3, 4});
  AttentionMask mask = AttentionMask::key_padding(3, 5, 4);
  mask.allowed[1] = 0;
  check("attention (padding mask, 2 heads)", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::attention(v[0], v[1], v[2], mask, 2), t34);
  }, {r({3, 4}), r({5, 4}), r({5, 4})});

  const Tensor t46 = r({4, 6});
  check("attention (causal, 3 heads)", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::attention(v[0], v[1], v[2], AttentionMask::causal(4), 3), t46);
  }, {r({4, 6}), r({4, 6}), r({4, 6})});

  const Tensor t13 = r({1, 3});
  check("mean_rows", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::mean_rows(v[0], Real(3.5)), t13);
  }, {r({4, 3})});

  const Tensor t53b = r({5, 3});
  check("pad_rows", [&](Graph &, const std::vector<Var> &v) {
    return probe(ops::pad_rows(v[0], 5), t53b);
  }, {r({2, 3})});

  const std::vector<int> targets = {1, 4, kPadId, 0};
  check("softmax_cross_entropy", [&](Graph &, const std::vector<Var> &v) {
    return ops::softmax_cross_entropy(v[0], targets, kPadId);
  }, {r({4, 5}, 2.0)});

  const Tensor reg = r({3, 2});
  const Tensor binary({3, 2}, std::vector<Real>{1, 0, 0, 1, 1, 1});
  const Tensor lmask({3, 2}, std::vector<Real>{1, 1, 0, 1, 1, 0});
  check("masked_mse", [&](Graph &, const std::vector<Var> &v) {
    return ops::masked_mse(v[0], reg, lmask);
  }, {r({3, 2})});
  check("masked_sigmoid_bce", [&](Graph &, const std::vector<Var> &v) {
    return ops::masked_sigmoid_bce(v[0], binary, lmask);
  }, {r({3, 2}, 3.0)});
  return out;
}

WilcoxonEnumeration enumerate_wilcoxon(const std::vector<double> &diffs) {
  std::vector<double> d;
  for (double v : diffs) {
    if (v != 0) d.push_back(v);
  }
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += d[i] > 0 ? rank[i] : 0;
  double ge = 0, le = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) w += (mask >> i & 1u) ? rank[i] : 0;
    ge += w >= observed - 1e-9;
    le += w <= observed + 1e-9;
  }
  const double total = std::ldexp(1.0, static_cast<int>(n));
  return {ge / total, le / total, observed};
}

}  // namespace rxnpt::testing
