#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rxnpt/autograd.h"
#include "rxnpt/checkpoint.h"
#include "rxnpt/smiles.h"

namespace rxnpt {

struct ModelConfig {
  int layers = 4;
  int heads = 8;
  int width = 256;
  int ff_width = 1024;
  int vocab = kVocabSize;
  // Longest fragment the encoder accepts and longest decoder sequence
  // (BOS + product + EOS).
  int max_length = 159;
  double dropout = 0.1;
  int mlp_hidden = 0;  // 0 means equal to width
  int tasks = 1;
  // Divide the set aggregate by max_length instead of the longest fragment.
  bool strict_mean = false;
  // Prepend a reactant (id 1) or reagent (id 2) marker to each fragment.
  bool role_tokens = false;

  int hidden_width() const { return mlp_hidden > 0 ? mlp_hidden : width; }
  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

inline constexpr int kReactantMarker = 1;
inline constexpr int kReagentMarker = 2;

// Encoder output for one fragment, zero padded to max_length rows.
struct FragmentEncoding {
  Tensor values;  // (max_length, width)
  std::size_t valid_len = 0;

  std::size_t length() const { return values.rows(); }
  std::size_t width() const { return values.cols(); }
};

struct ReactionVector {
  Tensor values;  // (1, width)
};

enum class FragmentRole { kReactant, kReagent };

struct ReactionInput {
  std::vector<TokenSequence> fragments;
  std::vector<FragmentRole> roles;  // same length as fragments
};

class TransformerEncoder {
public:
  TransformerEncoder() = default;
  // Registers "enc.*" parameters in `params`.
  TransformerEncoder(const ModelConfig &cfg, ParameterSet &params, Rng &init_rng);

  // (ids.size(), width) contextual encodings; attention stays inside `ids`.
  Var forward(Graph &g, const ParameterSet &params, std::span<const int> ids) const;

private:
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b,
        ff2_w, ff2_b;
  };
  ModelConfig cfg_;
  std::size_t embed_ = 0, ln_g_ = 0, ln_b_ = 0;
  std::vector<Layer> layers_;
  Tensor positions_;
};

class TransformerDecoder {
public:
  TransformerDecoder() = default;
  // Registers "dec.*" parameters in `params`.
  TransformerDecoder(const ModelConfig &cfg, ParameterSet &params, Rng &init_rng);

  // Logits (ids.size(), vocab) for a causal decoder whose encoder-decoder
  // attention sees a single memory slot. Cross-attention weights per layer are
  // appended to `cross_weights` when given.
  Var forward(Graph &g, const ParameterSet &params, Var memory, std::span<const int> ids,
              std::vector<Tensor> *cross_weights = nullptr) const;

private:
  struct Layer {
    std::size_t ln1_g, ln1_b, sq, sbq, sk, sbk, sv, sbv, so, sbo;
    std::size_t ln2_g, ln2_b, cq, cbq, ck, cbk, cv, cbv, co, cbo;
    std::size_t ln3_g, ln3_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  ModelConfig cfg_;
  std::size_t embed_ = 0, ln_g_ = 0, ln_b_ = 0, out_w_ = 0, out_b_ = 0;
  std::vector<Layer> layers_;
  Tensor positions_;
};

// Set aggregate: element-wise sum of the encodings, then the mean over the
// sequence axis. The divisor is the longest valid length in the set, or
// `strict_length` when non-zero. Summation order is canonical so any
// permutation of the set gives bit-identical output.
ReactionVector aggregate(std::span<const FragmentEncoding> encodings,
                         std::size_t strict_length = 0);

// Graph version of aggregate() over per-fragment encoder outputs of varying
// row counts.
Var aggregate(Graph &g, std::span<const Var> encodings, std::size_t strict_length = 0);

// Encoder + set aggregation + single-slot-memory decoder.
class ReactionModel {
public:
  ReactionModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig &config() const { return cfg_; }
  ParameterSet &params() { return params_; }
  const ParameterSet &params() const { return params_; }

  FragmentEncoding encode_fragment(const TokenSequence &tokens) const;
  ReactionVector encode_reaction(const ReactionInput &input) const;
  // `input` must start with BOS. Returns (input length, vocab) logits.
  Tensor decode_teacher_forced(const ReactionVector &memory, const TokenSequence &input,
                               std::vector<Tensor> *cross_weights = nullptr) const;
  // Argmax decoding from BOS; stops at EOS or after max_steps tokens. The
  // result holds only the generated characters.
  TokenSequence decode_greedy(const ReactionVector &memory, std::size_t max_steps) const;

  // Training graph pieces.
  Var reaction_vector(Graph &g, const ReactionInput &input) const;
  // Mean token cross-entropy of predicting `product` (no specials) after BOS,
  // followed by EOS. Counts of predicted tokens land in `token_count`.
  Var loss(Graph &g, const ReactionInput &input, const TokenSequence &product,
           std::size_t *token_count = nullptr) const;

  Checkpoint to_checkpoint(bool with_optimizer) const;
  static ReactionModel from_checkpoint(const Checkpoint &ckpt);

private:
  std::vector<int> encoder_ids(const TokenSequence &tokens, FragmentRole role) const;

  ModelConfig cfg_;
  ParameterSet params_;
  TransformerEncoder encoder_;
  TransformerDecoder decoder_;
};

// Encoder + mean pooling + two-layer ReLU MLP for property prediction.
class PropertyModel {
public:
  PropertyModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig &config() const { return cfg_; }
  ParameterSet &params() { return params_; }
  const ParameterSet &params() const { return params_; }

  // (1, tasks) predictions: regression values or per-task logits.
  Var forward(Graph &g, const TokenSequence &tokens) const;
  Tensor predict(const TokenSequence &tokens) const;
  // Mean of the encoder rows of a molecule, (1, width).
  Tensor pooled(const TokenSequence &tokens) const;

  // Copies every "enc." tensor from a pre-training checkpoint.
  void load_encoder(const Checkpoint &ckpt);
  Checkpoint to_checkpoint(bool with_optimizer) const;
  static PropertyModel from_checkpoint(const Checkpoint &ckpt);

private:
  void check_length(const TokenSequence &tokens) const;

  ModelConfig cfg_;
  ParameterSet params_;
  TransformerEncoder encoder_;
  std::size_t h1_w_ = 0, h1_b_ = 0, h2_w_ = 0, h2_b_ = 0;
};

std::string config_hash(const ModelConfig &cfg);

}  // namespace rxnpt
