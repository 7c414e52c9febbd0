#include "rxnpt/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/core.h>

#include "rxnpt/config.h"
#include "rxnpt/seeding.h"

namespace rxnpt {
namespace {

std::size_t add_linear_weight(ParameterSet &params, const std::string &name, std::size_t fan_in,
                              std::size_t fan_out, Rng &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (Real &v : w.values()) v = static_cast<Real>(dist(rng));
  const std::size_t idx = params.size();
  params.add(name, std::move(w));
  return idx;
}

std::size_t add_tensor(ParameterSet &params, const std::string &name, Tensor t) {
  const std::size_t idx = params.size();
  params.add(name, std::move(t));
  return idx;
}

std::size_t add_embedding(ParameterSet &params, const std::string &name, std::size_t rows,
                          std::size_t width, Rng &rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  Tensor t = Tensor::matrix(rows, width);
  for (Real &v : t.values()) v = static_cast<Real>(dist(rng));
  return add_tensor(params, name, std::move(t));
}

struct LinearIdx {
  std::size_t w, b;
};

LinearIdx add_linear(ParameterSet &params, const std::string &name, std::size_t in,
                     std::size_t out, Rng &rng) {
  const std::size_t w = add_linear_weight(params, name + ".w", in, out, rng);
  const std::size_t b = add_tensor(params, name + ".b", Tensor::vector(out));
  return {w, b};
}

std::pair<std::size_t, std::size_t> add_norm(ParameterSet &params, const std::string &name,
                                             std::size_t width) {
  const std::size_t g = add_tensor(params, name + ".g", Tensor::vector(width, Real(1)));
  const std::size_t b = add_tensor(params, name + ".b", Tensor::vector(width));
  return {g, b};
}

Var embed_with_positions(Graph &g, const ParameterSet &params, std::size_t table,
                         std::span<const int> ids, const Tensor &positions, int width,
                         double dropout) {
  Var x = ops::embedding(ids, g.param(params[table]));
  x = ops::scale(x, static_cast<Real>(std::sqrt(static_cast<double>(width))));
  Tensor pe = Tensor::matrix(ids.size(), positions.cols());
  std::copy_n(positions.values().begin(), pe.size(), pe.values().begin());
  x = ops::add(x, g.constant(std::move(pe)));
  return ops::dropout(x, static_cast<Real>(dropout));
}

Var lin(Graph &g, const ParameterSet &params, Var x, std::size_t w, std::size_t b) {
  return ops::linear(x, g.param(params[w]), g.param(params[b]));
}

Var norm(Graph &g, const ParameterSet &params, Var x, std::size_t gain, std::size_t bias) {
  return ops::layer_norm(x, g.param(params[gain]), g.param(params[bias]));
}

// Lexicographic order on (row count, values) for a canonical set order.
bool encoding_less(const Tensor &a, const Tensor &b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.values().begin(), a.values().end(),
                                      b.values().begin(), b.values().end());
}

void check_encoder_length(std::size_t len, const ModelConfig &cfg) {
  if (len == 0) throw std::invalid_argument("cannot encode an empty token sequence");
  if (len > static_cast<std::size_t>(cfg.max_length)) {
    throw std::invalid_argument(fmt::format("sequence of {} tokens exceeds max length {}", len,
                                            cfg.max_length));
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string &what) { throw std::invalid_argument("model config: " + what); };
  if (layers < 1) fail("layers must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (width < 1 || width % heads != 0) {
    fail(fmt::format("width {} must be a positive multiple of heads {}", width, heads));
  }
  if (ff_width < 1) fail("ff_width must be >= 1");
  if (vocab < kVocabSize) fail(fmt::format("vocab must be at least {}", kVocabSize));
  if (max_length < 3) fail("max_length must be >= 3");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (mlp_hidden < 0) fail("mlp_hidden must be >= 0");
  if (tasks < 1) fail("tasks must be >= 1");
}

std::string config_hash(const ModelConfig &cfg) {
  return fmt::format("{:016x}", fnv1a64(to_json(cfg).dump()));
}

// ---------------------------------------------------------------------------
// Encoder / decoder

TransformerEncoder::TransformerEncoder(const ModelConfig &cfg, ParameterSet &params,
                                       Rng &rng)
    : cfg_(cfg) {
  const auto d = static_cast<std::size_t>(cfg.width);
  const auto ff = static_cast<std::size_t>(cfg.ff_width);
  embed_ = add_embedding(params, "enc.embed", static_cast<std::size_t>(cfg.vocab), d, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = fmt::format("enc.l{}.", l);
    Layer layer{};
    std::tie(layer.ln1_g, layer.ln1_b) = add_norm(params, p + "ln1", d);
    auto q = add_linear(params, p + "attn.q", d, d, rng);
    auto k = add_linear(params, p + "attn.k", d, d, rng);
    auto v = add_linear(params, p + "attn.v", d, d, rng);
    auto o = add_linear(params, p + "attn.o", d, d, rng);
    layer.wq = q.w, layer.bq = q.b, layer.wk = k.w, layer.bk = k.b;
    layer.wv = v.w, layer.bv = v.b, layer.wo = o.w, layer.bo = o.b;
    std::tie(layer.ln2_g, layer.ln2_b) = add_norm(params, p + "ln2", d);
    auto f1 = add_linear(params, p + "ff1", d, ff, rng);
    auto f2 = add_linear(params, p + "ff2", ff, d, rng);
    layer.ff1_w = f1.w, layer.ff1_b = f1.b, layer.ff2_w = f2.w, layer.ff2_b = f2.b;
    layers_.push_back(layer);
  }
  std::tie(ln_g_, ln_b_) = add_norm(params, "enc.ln", d);
  positions_ = positional_encoding(static_cast<std::size_t>(cfg.max_length), d);
}

Var TransformerEncoder::forward(Graph &g, const ParameterSet &params,
                                std::span<const int> ids) const {
  check_encoder_length(ids.size(), cfg_);
  const Real rate = static_cast<Real>(cfg_.dropout);
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  const AttentionMask mask = AttentionMask::full(ids.size(), ids.size());
  Var x = embed_with_positions(g, params, embed_, ids, positions_, cfg_.width, cfg_.dropout);
  for (const Layer &L : layers_) {
    Var h = norm(g, params, x, L.ln1_g, L.ln1_b);
    Var a = ops::attention(lin(g, params, h, L.wq, L.bq), lin(g, params, h, L.wk, L.bk),
                           lin(g, params, h, L.wv, L.bv), mask, heads);
    x = ops::add(x, ops::dropout(lin(g, params, a, L.wo, L.bo), rate));
    h = norm(g, params, x, L.ln2_g, L.ln2_b);
    Var f = lin(g, params, ops::relu(lin(g, params, h, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
    x = ops::add(x, ops::dropout(f, rate));
  }
  return norm(g, params, x, ln_g_, ln_b_);
}

TransformerDecoder::TransformerDecoder(const ModelConfig &cfg, ParameterSet &params,
                                       Rng &rng)
    : cfg_(cfg) {
  const auto d = static_cast<std::size_t>(cfg.width);
  const auto ff = static_cast<std::size_t>(cfg.ff_width);
  embed_ = add_embedding(params, "dec.embed", static_cast<std::size_t>(cfg.vocab), d, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = fmt::format("dec.l{}.", l);
    Layer layer{};
    std::tie(layer.ln1_g, layer.ln1_b) = add_norm(params, p + "ln1", d);
    auto sq = add_linear(params, p + "self.q", d, d, rng);
    auto sk = add_linear(params, p + "self.k", d, d, rng);
    auto sv = add_linear(params, p + "self.v", d, d, rng);
    auto so = add_linear(params, p + "self.o", d, d, rng);
    layer.sq = sq.w, layer.sbq = sq.b, layer.sk = sk.w, layer.sbk = sk.b;
    layer.sv = sv.w, layer.sbv = sv.b, layer.so = so.w, layer.sbo = so.b;
    std::tie(layer.ln2_g, layer.ln2_b) = add_norm(params, p + "ln2", d);
    auto cq = add_linear(params, p + "cross.q", d, d, rng);
    auto ck = add_linear(params, p + "cross.k", d, d, rng);
    auto cv = add_linear(params, p + "cross.v", d, d, rng);
    auto co = add_linear(params, p + "cross.o", d, d, rng);
    layer.cq = cq.w, layer.cbq = cq.b, layer.ck = ck.w, layer.cbk = ck.b;
    layer.cv = cv.w, layer.cbv = cv.b, layer.co = co.w, layer.cbo = co.b;
    std::tie(layer.ln3_g, layer.ln3_b) = add_norm(params, p + "ln3", d);
    auto f1 = add_linear(params, p + "ff1", d, ff, rng);
    auto f2 = add_linear(params, p + "ff2", ff, d, rng);
    layer.ff1_w = f1.w, layer.ff1_b = f1.b, layer.ff2_w = f2.w, layer.ff2_b = f2.b;
    layers_.push_back(layer);
  }
  std::tie(ln_g_, ln_b_) = add_norm(params, "dec.ln", d);
  auto out = add_linear(params, "dec.out", d, static_cast<std::size_t>(cfg.vocab), rng);
  out_w_ = out.w;
  out_b_ = out.b;
  positions_ = positional_encoding(static_cast<std::size_t>(cfg.max_length), d);
}

Var TransformerDecoder::forward(Graph &g, const ParameterSet &params, Var memory,
                                std::span<const int> ids,
                                std::vector<Tensor> *cross_weights) const {
  check_encoder_length(ids.size(), cfg_);
  if (memory.value().rows() != 1 || memory.value().cols() != static_cast<std::size_t>(cfg_.width)) {
    throw std::invalid_argument("decoder memory must be a single (1, width) slot");
  }
  const Real rate = static_cast<Real>(cfg_.dropout);
  const auto heads = static_cast<std::size_t>(cfg_.heads);
  const AttentionMask causal = AttentionMask::causal(ids.size());
  const AttentionMask single = AttentionMask::full(ids.size(), 1);
  Var x = embed_with_positions(g, params, embed_, ids, positions_, cfg_.width, cfg_.dropout);
  for (const Layer &L : layers_) {
    Var h = norm(g, params, x, L.ln1_g, L.ln1_b);
    Var a = ops::attention(lin(g, params, h, L.sq, L.sbq), lin(g, params, h, L.sk, L.sbk),
                           lin(g, params, h, L.sv, L.sbv), causal, heads);
    x = ops::add(x, ops::dropout(lin(g, params, a, L.so, L.sbo), rate));

    h = norm(g, params, x, L.ln2_g, L.ln2_b);
    Tensor weights;
    Var c = ops::attention(lin(g, params, h, L.cq, L.cbq), lin(g, params, memory, L.ck, L.cbk),
                           lin(g, params, memory, L.cv, L.cbv), single, heads,
                           cross_weights ? &weights : nullptr);
    if (cross_weights) cross_weights->push_back(std::move(weights));
    x = ops::add(x, ops::dropout(lin(g, params, c, L.co, L.cbo), rate));

    h = norm(g, params, x, L.ln3_g, L.ln3_b);
    Var f = lin(g, params, ops::relu(lin(g, params, h, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
    x = ops::add(x, ops::dropout(f, rate));
  }
  x = norm(g, params, x, ln_g_, ln_b_);
  return lin(g, params, x, out_w_, out_b_);
}

// ---------------------------------------------------------------------------
// Aggregation

Var aggregate(Graph &, std::span<const Var> encodings, std::size_t strict_length) {
  if (encodings.empty()) throw std::invalid_argument("aggregate: empty fragment set");
  const std::size_t width = encodings[0].value().cols();
  std::size_t longest = 0;
  for (const Var &e : encodings) {
    if (e.value().cols() != width) {
      throw std::invalid_argument("aggregate: fragment encodings differ in width");
    }
    if (e.value().rows() == 0) throw std::invalid_argument("aggregate: empty fragment encoding");
    longest = std::max(longest, e.value().rows());
  }
  if (strict_length != 0 && strict_length < longest) {
    throw std::invalid_argument("aggregate: fragment longer than the strict length");
  }
  std::vector<std::size_t> order(encodings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return encoding_less(encodings[a].value(), encodings[b].value());
  });
  std::vector<Var> padded;
  padded.reserve(order.size());
  for (std::size_t i : order) padded.push_back(ops::pad_rows(encodings[i], longest));
  Var total = padded.size() == 1 ? padded[0] : ops::sum(padded);
  const auto divisor = static_cast<Real>(strict_length != 0 ? strict_length : longest);
  return ops::mean_rows(total, divisor);
}

ReactionVector aggregate(std::span<const FragmentEncoding> encodings,
                         std::size_t strict_length) {
  if (encodings.empty()) throw std::invalid_argument("aggregate: empty fragment set");
  Graph g;
  std::vector<Var> vars;
  for (const FragmentEncoding &h : encodings) {
    if (h.width() != encodings[0].width()) {
      throw std::invalid_argument("aggregate: fragment encodings differ in width");
    }
    if (h.valid_len == 0 || h.valid_len > h.length()) {
      throw std::invalid_argument("aggregate: invalid fragment length");
    }
    Tensor rows = Tensor::matrix(h.valid_len, h.width());
    std::copy_n(h.values.values().begin(), rows.size(), rows.values().begin());
    vars.push_back(g.constant(std::move(rows)));
  }
  return {aggregate(g, vars, strict_length).value()};
}

// ---------------------------------------------------------------------------
// ReactionModel

ReactionModel::ReactionModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = TransformerEncoder(cfg_, params_, rng);
  decoder_ = TransformerDecoder(cfg_, params_, rng);
}

std::vector<int> ReactionModel::encoder_ids(const TokenSequence &tokens,
                                            FragmentRole role) const {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  if (cfg_.role_tokens) {
    ids.push_back(role == FragmentRole::kReactant ? kReactantMarker : kReagentMarker);
  }
  ids.insert(ids.end(), tokens.ids.begin(), tokens.ids.end());
  return ids;
}

FragmentEncoding ReactionModel::encode_fragment(const TokenSequence &tokens) const {
  check_encoder_length(tokens.size(), cfg_);
  Graph g;
  const Tensor &rows = encoder_.forward(g, params_, tokens.ids).value();
  FragmentEncoding out;
  out.values = Tensor::matrix(static_cast<std::size_t>(cfg_.max_length),
                              static_cast<std::size_t>(cfg_.width));
  std::copy(rows.values().begin(), rows.values().end(), out.values.values().begin());
  out.valid_len = tokens.size();
  return out;
}

Var ReactionModel::reaction_vector(Graph &g, const ReactionInput &input) const {
  if (input.fragments.empty()) throw std::invalid_argument("reaction has no fragments");
  if (input.roles.size() != input.fragments.size()) {
    throw std::invalid_argument("reaction roles and fragments differ in count");
  }
  std::vector<Var> encodings;
  encodings.reserve(input.fragments.size());
  for (std::size_t i = 0; i < input.fragments.size(); ++i) {
    encodings.push_back(encoder_.forward(g, params_, encoder_ids(input.fragments[i], input.roles[i])));
  }
  return aggregate(g, encodings,
                   cfg_.strict_mean ? static_cast<std::size_t>(cfg_.max_length) : 0);
}

ReactionVector ReactionModel::encode_reaction(const ReactionInput &input) const {
  Graph g;
  return {reaction_vector(g, input).value()};
}

Tensor ReactionModel::decode_teacher_forced(const ReactionVector &memory,
                                            const TokenSequence &input,
                                            std::vector<Tensor> *cross_weights) const {
  if (input.empty() || input.ids.front() != kBosId) {
    throw std::invalid_argument("decoder input must start with BOS");
  }
  Graph g;
  Var mem = g.constant(memory.values);
  return decoder_.forward(g, params_, mem, input.ids, cross_weights).value();
}

TokenSequence ReactionModel::decode_greedy(const ReactionVector &memory,
                                           std::size_t max_steps) const {
  const auto limit = static_cast<std::size_t>(cfg_.max_length);
  if (max_steps > limit) {
    throw std::invalid_argument(fmt::format("max_steps {} exceeds max length {}", max_steps, limit));
  }
  std::vector<int> seq{kBosId};
  TokenSequence out;
  while (out.size() < max_steps && seq.size() < limit) {
    Graph g;
    Var mem = g.constant(memory.values);
    const Tensor &logits = decoder_.forward(g, params_, mem, seq).value();
    auto last = logits.row(logits.rows() - 1);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == kEosId) break;
    seq.push_back(next);
    out.ids.push_back(next);
  }
  return out;
}

Var ReactionModel::loss(Graph &g, const ReactionInput &input, const TokenSequence &product,
                        std::size_t *token_count) const {
  if (product.size() + 2 > static_cast<std::size_t>(cfg_.max_length)) {
    throw std::invalid_argument(fmt::format("product of {} tokens exceeds max length {}",
                                            product.size(), cfg_.max_length));
  }
  std::vector<int> in{kBosId};
  in.insert(in.end(), product.ids.begin(), product.ids.end());
  std::vector<int> target(product.ids.begin(), product.ids.end());
  target.push_back(kEosId);
  Var memory = reaction_vector(g, input);
  Var logits = decoder_.forward(g, params_, memory, in);
  if (token_count) *token_count = target.size();
  return ops::softmax_cross_entropy(logits, target, kPadId);
}

Checkpoint ReactionModel::to_checkpoint(bool with_optimizer) const {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash(cfg_);
  ckpt.meta["kind"] = "reaction_model";
  ckpt.meta["model_config"] = to_json(cfg_);
  store_parameters(params_, ckpt, with_optimizer);
  return ckpt;
}

ReactionModel ReactionModel::from_checkpoint(const Checkpoint &ckpt) {
  if (ckpt.meta.value("kind", "") != "reaction_model") {
    throw CheckpointError("checkpoint does not hold a reaction model");
  }
  ModelConfig cfg = model_config_from_json(ckpt.meta.at("model_config"));
  if (config_hash(cfg) != ckpt.config_hash) {
    throw CheckpointError("checkpoint config hash does not match its embedded config");
  }
  ReactionModel model(cfg, 0);
  load_parameters(ckpt, model.params_, ckpt.meta.contains("adamw_steps"));
  return model;
}

// ---------------------------------------------------------------------------
// PropertyModel

PropertyModel::PropertyModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = TransformerEncoder(cfg_, params_, rng);
  const auto d = static_cast<std::size_t>(cfg_.width);
  const auto hidden = static_cast<std::size_t>(cfg_.hidden_width());
  auto h1 = add_linear(params_, "head.l1", d, hidden, rng);
  auto h2 = add_linear(params_, "head.l2", hidden, static_cast<std::size_t>(cfg_.tasks), rng);
  h1_w_ = h1.w, h1_b_ = h1.b, h2_w_ = h2.w, h2_b_ = h2.b;
}

void PropertyModel::check_length(const TokenSequence &tokens) const {
  check_encoder_length(tokens.size(), cfg_);
}

Var PropertyModel::forward(Graph &g, const TokenSequence &tokens) const {
  check_length(tokens);
  Var enc = encoder_.forward(g, params_, tokens.ids);
  Var pooled = ops::mean_rows(enc, static_cast<Real>(tokens.size()));
  Var h = ops::relu(lin(g, params_, pooled, h1_w_, h1_b_));
  return lin(g, params_, h, h2_w_, h2_b_);
}

Tensor PropertyModel::predict(const TokenSequence &tokens) const {
  Graph g;
  return forward(g, tokens).value();
}

Tensor PropertyModel::pooled(const TokenSequence &tokens) const {
  check_length(tokens);
  Graph g;
  Var enc = encoder_.forward(g, params_, tokens.ids);
  return ops::mean_rows(enc, static_cast<Real>(tokens.size())).value();
}

void PropertyModel::load_encoder(const Checkpoint &ckpt) {
  if (ckpt.meta.contains("model_config")) {
    const ModelConfig other = model_config_from_json(ckpt.meta.at("model_config"));
    if (other.layers != cfg_.layers || other.heads != cfg_.heads || other.width != cfg_.width ||
        other.ff_width != cfg_.ff_width || other.vocab != cfg_.vocab ||
        other.max_length != cfg_.max_length) {
      throw CheckpointError("incompatible checkpoint: encoder shape differs from model config");
    }
  }
  load_parameters(ckpt, params_, false, "enc.");
}

Checkpoint PropertyModel::to_checkpoint(bool with_optimizer) const {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash(cfg_);
  ckpt.meta["kind"] = "property_model";
  ckpt.meta["model_config"] = to_json(cfg_);
  store_parameters(params_, ckpt, with_optimizer);
  return ckpt;
}

PropertyModel PropertyModel::from_checkpoint(const Checkpoint &ckpt) {
  if (ckpt.meta.value("kind", "") != "property_model") {
    throw CheckpointError("checkpoint does not hold a property model");
  }
  ModelConfig cfg = model_config_from_json(ckpt.meta.at("model_config"));
  if (config_hash(cfg) != ckpt.config_hash) {
    throw CheckpointError("checkpoint config hash does not match its embedded config");
  }
  PropertyModel model(cfg, 0);
  load_parameters(ckpt, model.params_, ckpt.meta.contains("adamw_steps"));
  return model;
}

}  // namespace rxnpt
