#include "rxnpt/autograd.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/core.h>

#include "eigen_map.h"

namespace rxnpt {

using detail::as_matrix;

// ---------------------------------------------------------------------------
// ParameterSet

Parameter &ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) {
    throw std::invalid_argument(fmt::format("duplicate parameter name '{}'", name));
  }
  index_.emplace(name, params_.size());
  Parameter &p = params_.emplace_back();
  p.name = std::move(name);
  p.grad = Tensor(init.shape());
  p.first_moment = Tensor(init.shape());
  p.second_moment = Tensor(init.shape());
  p.value = std::move(init);
  return p;
}

Parameter *ParameterSet::find(const std::string &name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter *ParameterSet::find(const std::string &name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto &p : params_) p.grad.fill(Real(0));
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto &p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor &Var::value() const { return graph_->value(id_); }

Graph::Graph(bool training, std::uint64_t dropout_seed)
    : training_(training), dropout_rng_(dropout_seed) {
  nodes_.reserve(256);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::variable(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Parameter &p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.external = &p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Graph::record(Tensor value, std::vector<int> parents, Backward backward) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](int p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor &Graph::value(int id) const {
  const Node &n = nodes_[id];
  return n.external ? *n.external : n.own;
}

Tensor &Graph::grad(int id) {
  Node &n = nodes_[id];
  if (n.grad.size() != value(id).size() || n.grad.shape() != value(id).shape()) {
    n.grad = Tensor(value(id).shape());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward() expects a scalar loss");
  }
  grad(loss.id())[0] = Real(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node &n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
}

void Graph::accumulate_param_grads(ParameterSet &params) const {
  for (Parameter &p : params) {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) continue;
    const Node &n = nodes_[it->second];
    if (n.grad.empty()) continue;
    auto dst = p.grad.values();
    auto src = n.grad.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// Masks and losses

AttentionMask AttentionMask::full(std::size_t queries, std::size_t keys) {
  return {queries, keys, std::vector<std::uint8_t>(queries * keys, 1)};
}

AttentionMask AttentionMask::causal(std::size_t length) {
  AttentionMask m{length, length, std::vector<std::uint8_t>(length * length, 0)};
  for (std::size_t q = 0; q < length; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m.allowed[q * length + k] = 1;
  }
  return m;
}

AttentionMask AttentionMask::key_padding(std::size_t queries, std::size_t keys,
                                         std::size_t valid_keys) {
  AttentionMask m{queries, keys, std::vector<std::uint8_t>(queries * keys, 0)};
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t k = 0; k < std::min(keys, valid_keys); ++k) m.allowed[q * keys + k] = 1;
  }
  return m;
}

CrossEntropy softmax_cross_entropy(const Tensor &logits, std::span<const int> targets,
                                   int ignore_id) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != rows) {
    throw std::invalid_argument(fmt::format(
        "cross-entropy: {} targets for {} rows of logits", targets.size(), rows));
  }
  CrossEntropy out;
  out.gradient = Tensor(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range(fmt::format("cross-entropy target {} outside vocabulary of {}",
                                          t, vocab));
    }
    ++out.counted;
  }
  if (out.counted == 0) return out;
  const Real inv = Real(1) / static_cast<Real>(out.counted);
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    auto row = logits.row(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (Real v : row) z += std::exp(static_cast<double>(v - mx));
    const double lse = std::log(z) + mx;
    total += lse - row[t];
    auto g = out.gradient.row(r);
    for (std::size_t c = 0; c < vocab; ++c) {
      g[c] = static_cast<Real>(std::exp(static_cast<double>(row[c]) - lse)) * inv;
    }
    g[t] -= inv;
  }
  out.loss = static_cast<Real>(total / static_cast<double>(out.counted));
  return out;
}

namespace ops {
namespace {

Graph &graph_of(Var a) {
  if (!a.graph()) throw std::invalid_argument("operation on an empty Var");
  return *a.graph();
}

void require(bool ok, const std::string &what) {
  if (!ok) throw std::invalid_argument(what);
}

void add_into(Tensor &dst, const Tensor &src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph &g = graph_of(a);
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  require(av.cols() == bv.rows(),
          fmt::format("matmul: shapes {} and {} do not align", shape_string(av.shape()),
                      shape_string(bv.shape())));
  Tensor y = Tensor::matrix(av.rows(), bv.cols());
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(y), {ia, ib}, [ia, ib](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    if (g.requires_grad(ia)) {
      as_matrix(g.grad(ia)).noalias() += as_matrix(gy) * as_matrix(g.value(ib)).transpose();
    }
    if (g.requires_grad(ib)) {
      as_matrix(g.grad(ib)).noalias() += as_matrix(g.value(ia)).transpose() * as_matrix(gy);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Graph &g = graph_of(x);
  const Tensor &xv = x.value();
  const Tensor &wv = w.value();
  const Tensor &bv = b.value();
  require(xv.cols() == wv.rows() && bv.size() == wv.cols(),
          fmt::format("linear: x {} w {} b {} are incompatible", shape_string(xv.shape()),
                      shape_string(wv.shape()), shape_string(bv.shape())));
  Tensor y = Tensor::matrix(xv.rows(), wv.cols());
  auto ym = as_matrix(y);
  ym.noalias() = as_matrix(xv) * as_matrix(wv);
  ym.rowwise() += as_matrix(bv).row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return g.record(std::move(y), {ix, iw, ib}, [ix, iw, ib](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    if (g.requires_grad(ix)) {
      as_matrix(g.grad(ix)).noalias() += as_matrix(gy) * as_matrix(g.value(iw)).transpose();
    }
    if (g.requires_grad(iw)) {
      as_matrix(g.grad(iw)).noalias() += as_matrix(g.value(ix)).transpose() * as_matrix(gy);
    }
    if (g.requires_grad(ib)) {
      Tensor &gb = g.grad(ib);
      auto gbm = detail::MatrixMap(gb.data(), 1, static_cast<Eigen::Index>(gb.size()));
      gbm += as_matrix(gy).colwise().sum();
    }
  });
}

Var add(Var a, Var b) {
  Graph &g = graph_of(a);
  require(a.value().same_shape(b.value()),
          fmt::format("add: shapes {} and {} differ", shape_string(a.value().shape()),
                      shape_string(b.value().shape())));
  Tensor y = a.value();
  add_into(y, b.value());
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(y), {ia, ib}, [ia, ib](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    if (g.requires_grad(ia)) add_into(g.grad(ia), gy);
    if (g.requires_grad(ib)) add_into(g.grad(ib), gy);
  });
}

Var sum(std::span<const Var> terms) {
  require(!terms.empty(), "sum: no terms");
  Graph &g = graph_of(terms[0]);
  Tensor y = terms[0].value();
  std::vector<int> ids{terms[0].id()};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require(terms[i].value().same_shape(y), "sum: terms differ in shape");
    add_into(y, terms[i].value());
    ids.push_back(terms[i].id());
  }
  std::vector<int> parents = ids;
  return g.record(std::move(y), std::move(parents), [ids](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    for (int id : ids) {
      if (g.requires_grad(id)) add_into(g.grad(id), gy);
    }
  });
}

Var scale(Var a, Real factor) {
  Graph &g = graph_of(a);
  Tensor y = a.value();
  for (Real &v : y.values()) v *= factor;
  const int ia = a.id();
  return g.record(std::move(y), {ia}, [ia, factor](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    auto dst = g.grad(ia).values();
    auto src = gy.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
  });
}

Var relu(Var a) {
  Graph &g = graph_of(a);
  Tensor y = a.value();
  for (Real &v : y.values()) v = v > Real(0) ? v : Real(0);
  const int ia = a.id();
  return g.record(std::move(y), {ia}, [ia](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    const Tensor &x = g.value(ia);
    auto dst = g.grad(ia).values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (x[i] > Real(0)) dst[i] += gy[i];
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  Graph &g = graph_of(x);
  const Tensor &xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  require(gain.value().size() == d && bias.value().size() == d,
          fmt::format("layer_norm: gain/bias size must equal width {}", d));
  Tensor y(xv.shape());
  auto normalized = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const Tensor &gv = gain.value();
  const Tensor &bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xv.row(r);
    Real mean = 0;
    for (Real v : row) mean += v;
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (Real v : row) var += (v - mean) * (v - mean);
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    auto nrow = normalized->row(r);
    auto yrow = y.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      nrow[c] = (row[c] - mean) * is;
      yrow[c] = nrow[c] * gv[c] + bv[c];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.record(std::move(y), {ix, ig, ib},
                  [ix, ig, ib, normalized, inv_std, rows, d](Graph &g, int self) {
                    const Tensor &gy = g.grad(self);
                    const Tensor &gv = g.value(ig);
                    if (g.requires_grad(ig)) {
                      Tensor &gg = g.grad(ig);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < d; ++c) {
                          gg[c] += gy.at(r, c) * normalized->at(r, c);
                        }
                      }
                    }
                    if (g.requires_grad(ib)) {
                      Tensor &gb = g.grad(ib);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < d; ++c) gb[c] += gy.at(r, c);
                      }
                    }
                    if (g.requires_grad(ix)) {
                      Tensor &gx = g.grad(ix);
                      std::vector<Real> dn(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                        Real mean_dn = 0, mean_dn_n = 0;
                        for (std::size_t c = 0; c < d; ++c) {
                          dn[c] = gy.at(r, c) * gv[c];
                          mean_dn += dn[c];
                          mean_dn_n += dn[c] * normalized->at(r, c);
                        }
                        mean_dn /= static_cast<Real>(d);
                        mean_dn_n /= static_cast<Real>(d);
                        const Real is = (*inv_std)[r];
                        for (std::size_t c = 0; c < d; ++c) {
                          gx.at(r, c) +=
                              is * (dn[c] - mean_dn - normalized->at(r, c) * mean_dn_n);
                        }
                      }
                    }
                  });
}

Var embedding(std::span<const int> ids, Var table) {
  Graph &g = graph_of(table);
  const Tensor &tv = table.value();
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Tensor y = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range(
          fmt::format("embedding: id {} outside table of {} rows", ids[i], vocab));
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), y.row(i).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  const int it = table.id();
  return g.record(std::move(y), {it}, [it, idx = std::move(idx)](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    Tensor &gt = g.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(idx[i]));
      auto src = gy.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

Var dropout(Var x, Real rate) {
  Graph &g = graph_of(x);
  if (!g.training() || rate <= Real(0)) return x;
  require(rate < Real(1), "dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const Real factor = Real(1) / (Real(1) - rate);
  auto mask = std::make_shared<std::vector<Real>>(x.value().size());
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = keep(g.dropout_rng()) ? factor : Real(0);
    y[i] *= (*mask)[i];
  }
  const int ix = x.id();
  return g.record(std::move(y), {ix}, [ix, mask](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    Tensor &gx = g.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

Var attention(Var queries, Var keys, Var values, const AttentionMask &mask,
              std::size_t heads, Tensor *weights_out) {
  Graph &g = graph_of(queries);
  const Tensor &q = queries.value();
  const Tensor &k = keys.value();
  const Tensor &v = values.value();
  const std::size_t m = q.rows(), n = k.rows(), d = q.cols();
  require(heads > 0 && d % heads == 0,
          fmt::format("attention: width {} is not divisible by {} heads", d, heads));
  require(k.cols() == d && v.cols() == d && v.rows() == n,
          "attention: query, key and value widths must agree");
  require(mask.queries == m && mask.keys == n, "attention: mask shape mismatch");
  const std::size_t dh = d / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  for (std::size_t i = 0; i < m; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n && !any; ++j) any = mask(i, j);
    if (!any) {
      throw std::invalid_argument(fmt::format("attention: query {} has every key masked", i));
    }
  }

  auto probs = std::make_shared<Tensor>(std::vector<std::size_t>{heads, m, n});
  Tensor y = Tensor::matrix(m, d);
  const auto qm = as_matrix(q);
  const auto km = as_matrix(k);
  const auto vm = as_matrix(v);
  auto ym = as_matrix(y);
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             DH = static_cast<Eigen::Index>(dh);
  detail::Matrix scores(M, N);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h * dh);
    scores.noalias() = qm.block(0, off, M, DH) * km.block(0, off, N, DH).transpose();
    detail::MatrixMap p(probs->data() + h * m * n, M, N);
    for (std::size_t i = 0; i < m; ++i) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (mask(i, j)) mx = std::max(mx, scores(i, j) * scale);
      }
      Real z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = mask(i, j) ? std::exp(scores(i, j) * scale - mx) : Real(0);
        p(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) p(i, j) /= z;
    }
    ym.block(0, off, M, DH).noalias() = p * vm.block(0, off, N, DH);
  }
  if (weights_out) *weights_out = *probs;

  const int iq = queries.id(), ik = keys.id(), iv = values.id();
  return g.record(
      std::move(y), {iq, ik, iv},
      [iq, ik, iv, probs, heads, m, n, dh, scale](Graph &g, int self) {
        const auto gy = as_matrix(g.grad(self));
        const auto qm = as_matrix(g.value(iq));
        const auto km = as_matrix(g.value(ik));
        const auto vm = as_matrix(g.value(iv));
        const bool need_q = g.requires_grad(iq), need_k = g.requires_grad(ik),
                   need_v = g.requires_grad(iv);
        const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
                   DH = static_cast<Eigen::Index>(dh);
        detail::Matrix dp(M, N), ds(M, N);
        for (std::size_t h = 0; h < heads; ++h) {
          const auto off = static_cast<Eigen::Index>(h * dh);
          detail::ConstMatrixMap p(probs->data() + h * m * n, M, N);
          const auto gyh = gy.block(0, off, M, DH);
          if (need_v) {
            as_matrix(g.grad(iv)).block(0, off, N, DH).noalias() += p.transpose() * gyh;
          }
          if (!need_q && !need_k) continue;
          dp.noalias() = gyh * vm.block(0, off, N, DH).transpose();
          for (Eigen::Index i = 0; i < M; ++i) {
            Real dot = 0;
            for (Eigen::Index j = 0; j < N; ++j) dot += p(i, j) * dp(i, j);
            for (Eigen::Index j = 0; j < N; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          }
          if (need_q) {
            as_matrix(g.grad(iq)).block(0, off, M, DH).noalias() +=
                ds * km.block(0, off, N, DH);
          }
          if (need_k) {
            as_matrix(g.grad(ik)).block(0, off, N, DH).noalias() +=
                ds.transpose() * qm.block(0, off, M, DH);
          }
        }
      });
}

Var mean_rows(Var x, Real divisor) {
  Graph &g = graph_of(x);
  require(divisor > Real(0), "mean_rows: divisor must be positive");
  const Tensor &xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  Tensor y = Tensor::matrix(1, d);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xv.row(r);
    for (std::size_t c = 0; c < d; ++c) y[c] += row[c];
  }
  for (Real &v : y.values()) v /= divisor;
  const int ix = x.id();
  return g.record(std::move(y), {ix}, [ix, rows, d, divisor](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    Tensor &gx = g.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) gx.at(r, c) += gy[c] / divisor;
    }
  });
}

Var pad_rows(Var x, std::size_t rows) {
  Graph &g = graph_of(x);
  const Tensor &xv = x.value();
  require(rows >= xv.rows(), "pad_rows: cannot shrink");
  if (rows == xv.rows()) return x;
  Tensor y = Tensor::matrix(rows, xv.cols());
  std::copy(xv.values().begin(), xv.values().end(), y.values().begin());
  const int ix = x.id();
  return g.record(std::move(y), {ix}, [ix](Graph &g, int self) {
    const Tensor &gy = g.grad(self);
    Tensor &gx = g.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, int ignore_id) {
  Graph &g = graph_of(logits);
  CrossEntropy ce = rxnpt::softmax_cross_entropy(logits.value(), targets, ignore_id);
  auto gradient = std::make_shared<Tensor>(std::move(ce.gradient));
  const int il = logits.id();
  return g.record(Tensor({1}, std::vector<Real>{ce.loss}), {il},
                  [il, gradient](Graph &g, int self) {
                    const Real s = g.grad(self)[0];
                    Tensor &gl = g.grad(il);
                    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += s * (*gradient)[i];
                  });
}

Var masked_mse(Var predictions, const Tensor &targets, const Tensor &mask) {
  Graph &g = graph_of(predictions);
  const Tensor &p = predictions.value();
  require(p.size() == targets.size() && p.size() == mask.size(),
          "masked_mse: predictions, targets and mask must have equal size");
  std::size_t count = 0;
  for (Real m : mask.values()) count += m != Real(0);
  auto gradient = std::make_shared<Tensor>(p.shape());
  double total = 0;
  if (count > 0) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (mask[i] == Real(0)) continue;
      const Real diff = p[i] - targets[i];
      total += static_cast<double>(diff) * diff;
      (*gradient)[i] = Real(2) * diff / static_cast<Real>(count);
    }
    total /= static_cast<double>(count);
  }
  const int ip = predictions.id();
  return g.record(Tensor({1}, std::vector<Real>{static_cast<Real>(total)}), {ip},
                  [ip, gradient](Graph &g, int self) {
                    const Real s = g.grad(self)[0];
                    Tensor &gp = g.grad(ip);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += s * (*gradient)[i];
                  });
}

Var masked_sigmoid_bce(Var logits, const Tensor &targets, const Tensor &mask) {
  Graph &g = graph_of(logits);
  const Tensor &z = logits.value();
  require(z.size() == targets.size() && z.size() == mask.size(),
          "masked_sigmoid_bce: logits, targets and mask must have equal size");
  std::size_t count = 0;
  for (Real m : mask.values()) count += m != Real(0);
  auto gradient = std::make_shared<Tensor>(z.shape());
  double total = 0;
  if (count > 0) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (mask[i] == Real(0)) continue;
      const double x = z[i], t = targets[i];
      total += std::max(x, 0.0) - t * x + std::log1p(std::exp(-std::abs(x)));
      const double sig = 1.0 / (1.0 + std::exp(-x));
      (*gradient)[i] = static_cast<Real>((sig - t) / static_cast<double>(count));
    }
    total /= static_cast<double>(count);
  }
  const int iz = logits.id();
  return g.record(Tensor({1}, std::vector<Real>{static_cast<Real>(total)}), {iz},
                  [iz, gradient](Graph &g, int self) {
                    const Real s = g.grad(self)[0];
                    Tensor &gz = g.grad(iz);
                    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += s * (*gradient)[i];
                  });
}

}  // namespace ops
}  // namespace rxnpt
