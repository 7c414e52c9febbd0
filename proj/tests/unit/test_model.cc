#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "rxnpt/model.h"
#include "support/test_support.h"

namespace rxnpt {
namespace {

ModelConfig tiny(int width = 8, int layers = 2) {
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.width = width;
  c.ff_width = 2 * width;
  c.max_length = 48;
  c.dropout = 0;
  return c;
}

ReactionInput input_of(const std::vector<std::string> &reactants,
                       const std::vector<std::string> &reagents = {}) {
  ReactionInput in;
  for (const auto &s : reactants) {
    in.fragments.push_back(tokenize(s));
    in.roles.push_back(FragmentRole::kReactant);
  }
  for (const auto &s : reagents) {
    in.fragments.push_back(tokenize(s));
    in.roles.push_back(FragmentRole::kReagent);
  }
  return in;
}

TokenSequence decoder_input(const std::string &product) {
  TokenSequence t{{kBosId}};
  for (int id : tokenize(product).ids) t.ids.push_back(id);
  return t;
}

TEST(EncodeFragment, PadRowsZeroAndLengthErrors) {
  const ReactionModel m(tiny(), 1);
  const FragmentEncoding h = m.encode_fragment(tokenize("CC(=O)O"));
  EXPECT_EQ(h.valid_len, 7u);
  EXPECT_EQ(h.length(), 48u);
  for (std::size_t r = 7; r < h.length(); ++r) {
    for (Real v : h.values.row(r)) EXPECT_EQ(v, Real(0));
  }
  EXPECT_THROW(m.encode_fragment(TokenSequence{}), std::invalid_argument);
  EXPECT_THROW(m.encode_fragment(tokenize(std::string(49, 'C'))), std::invalid_argument);
}

TEST(EncodeFragment, IndependentOfOtherFragments) {
  const ReactionModel m(tiny(), 2);
  const TokenSequence r1 = tokenize("CCO");
  const FragmentEncoding alone = m.encode_fragment(r1);
  for (const char *other : {"c1ccccc1", "O", "CC(=O)Cl"}) {
    const ReactionInput in = input_of({"CCO", other});
    const FragmentEncoding h1 = m.encode_fragment(in.fragments[0]);
    const FragmentEncoding h2 = m.encode_fragment(in.fragments[1]);
    EXPECT_EQ(h1.values, alone.values);
    const FragmentEncoding pair[] = {h1, h2};
    EXPECT_EQ(m.encode_reaction(in).values, aggregate(pair).values);
  }
}

TEST(Aggregate, SingletonIsRowMean) {
  Rng rng(4);
  FragmentEncoding h;
  h.values = Tensor::matrix(10, 4);
  h.valid_len = 6;
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 4; ++c) h.values.at(r, c) = std::normal_distribution<double>()(rng);
  }
  const FragmentEncoding set[] = {h};
  const ReactionVector v = aggregate(set);
  ASSERT_EQ(v.values.size(), 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < 6; ++r) s += h.values.at(r, c);
    EXPECT_NEAR(v.values[c], s / 6, 1e-15);
  }
  const ReactionVector strict = aggregate(set, 10);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(strict.values[c], v.values[c] * 0.6, 1e-15);
}

TEST(Aggregate, DuplicateDoublesAndOrderIrrelevant) {
  const ReactionModel m(tiny(), 3);
  const FragmentEncoding a = m.encode_fragment(tokenize("CCN"));
  const FragmentEncoding b = m.encode_fragment(tokenize("O=C=O"));
  const FragmentEncoding one[] = {a};
  const FragmentEncoding two[] = {a, a};
  const ReactionVector single = aggregate(one);
  const ReactionVector doubled = aggregate(two);
  for (std::size_t c = 0; c < single.values.size(); ++c) {
    EXPECT_EQ(doubled.values[c], 2 * single.values[c]);
  }
  const FragmentEncoding ab[] = {a, b};
  const FragmentEncoding ba[] = {b, a};
  EXPECT_EQ(aggregate(ab).values, aggregate(ba).values);

  // b is the longer fragment, so the divisor is the same with or without a second copy.
  const FragmentEncoding abb[] = {a, b, b};
  const FragmentEncoding just_b[] = {b};
  const ReactionVector with = aggregate(abb), without = aggregate(ab), alone = aggregate(just_b);
  for (std::size_t c = 0; c < alone.values.size(); ++c) {
    EXPECT_NEAR(with.values[c] - without.values[c], alone.values[c], 1e-14);
  }
}

TEST(Aggregate, Errors) {
  EXPECT_THROW(aggregate(std::span<const FragmentEncoding>{}), std::invalid_argument);
  FragmentEncoding a{Tensor::matrix(3, 4), 2}, b{Tensor::matrix(3, 5), 2};
  const FragmentEncoding mixed[] = {a, b};
  EXPECT_THROW(aggregate(mixed), std::invalid_argument);
}

TEST(ReactionModelTest, PermutationInvariance) {
  const ReactionModel m(tiny(16), 5);
  Rng rng(6);
  Rng gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> frags;
    const int n = std::uniform_int_distribution<int>(2, 5)(rng);
    for (int i = 0; i < n; ++i) {
      testing::MoleculeOptions opts;
      opts.max_atoms = 10;
      frags.push_back(write_randomized(testing::random_molecule(gen, opts), gen));
    }
    const ReactionInput in = input_of(frags);
    ReactionInput shuffled = in;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < n; ++i) {
      shuffled.fragments[i] = in.fragments[order[i]];
      shuffled.roles[i] = in.roles[order[i]];
    }
    const ReactionVector h = m.encode_reaction(in);
    const ReactionVector hs = m.encode_reaction(shuffled);
    ASSERT_EQ(h.values, hs.values);
    const TokenSequence target = decoder_input("CC(=O)OC");
    ASSERT_EQ(m.decode_teacher_forced(h, target), m.decode_teacher_forced(hs, target));
  }
}

TEST(ReactionModelTest, SingleSlotCrossAttentionWeightsAreOne) {
  const ReactionModel m(tiny(), 8);
  const ReactionVector h = m.encode_reaction(input_of({"CCO", "CC(=O)O"}, {"O"}));
  std::vector<Tensor> weights;
  m.decode_teacher_forced(h, decoder_input("CC(=O)OCC"), &weights);
  ASSERT_EQ(weights.size(), 2u);
  for (const Tensor &w : weights) {
    EXPECT_EQ(w.shape(), (std::vector<std::size_t>{2, 10, 1}));
    for (Real v : w.values()) EXPECT_EQ(v, Real(1));
  }
}

TEST(ReactionModelTest, MemoryReachesEveryPosition) {
  const ReactionModel m(tiny(), 9);
  const TokenSequence target = decoder_input("CCOC(C)=O");
  const Tensor a = m.decode_teacher_forced(m.encode_reaction(input_of({"CCO"})), target);
  const Tensor b = m.decode_teacher_forced(m.encode_reaction(input_of({"CCN"})), target);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    bool differs = false;
    for (std::size_t c = 0; c < a.cols(); ++c) differs |= a.at(r, c) != b.at(r, c);
    EXPECT_TRUE(differs) << r;
  }
}

TEST(ReactionModelTest, DecoderIsCausal) {
  const ReactionModel m(tiny(), 10);
  const ReactionVector h = m.encode_reaction(input_of({"CCO"}));
  const TokenSequence base = decoder_input("CCOCCN");
  const Tensor ref = m.decode_teacher_forced(h, base);
  for (std::size_t j = 1; j < base.size(); ++j) {
    TokenSequence changed = base;
    for (std::size_t k = j; k < changed.size(); ++k) changed.ids[k] = 'S';
    const Tensor out = m.decode_teacher_forced(h, changed);
    for (std::size_t r = 0; r < j; ++r) {
      for (std::size_t c = 0; c < ref.cols(); ++c) ASSERT_EQ(out.at(r, c), ref.at(r, c));
    }
  }
  EXPECT_THROW(m.decode_teacher_forced(h, tokenize("CC")), std::invalid_argument);
}

TEST(ReactionModelTest, GreedyDecoding) {
  const ReactionModel m(tiny(), 11);
  const ReactionVector h = m.encode_reaction(input_of({"CCO"}));
  EXPECT_LE(m.decode_greedy(h, 1).size(), 1u);
  EXPECT_EQ(m.decode_greedy(h, 20), m.decode_greedy(h, 20));
  for (int id : m.decode_greedy(h, 20).ids) {
    EXPECT_NE(id, kBosId);
    EXPECT_NE(id, kEosId);
  }
  EXPECT_THROW(m.decode_greedy(h, 49), std::invalid_argument);
}

TEST(ReactionModelTest, EndToEndGradient) {
  ReactionModel m(tiny(8, 2), 12);
  ASSERT_EQ(m.config().vocab, 131);
  const ReactionInput in = input_of({"CCO", "CC(=O)O"}, {"[H+]"});
  const TokenSequence product = tokenize("CC(=O)OCC");
  const double err = testing::parameter_gradient_check(
      m.params(), [&](Graph &g) { return m.loss(g, in, product); });
  EXPECT_LT(err, 1e-3);
}

TEST(ReactionModelTest, RoleTokensAndStrictMean) {
  ModelConfig c = tiny();
  c.role_tokens = true;
  const ReactionModel m(c, 13);
  const ReactionVector as_reactant = m.encode_reaction(input_of({"CCO"}));
  const ReactionVector as_reagent = m.encode_reaction(input_of({}, {"CCO"}));
  EXPECT_NE(as_reactant.values, as_reagent.values);

  ModelConfig s = tiny();
  s.strict_mean = true;
  ReactionModel strict(s, 14);
  const ReactionModel loose(tiny(), 14);
  const ReactionInput in = input_of({"CCO", "C"});
  const ReactionVector hs = strict.encode_reaction(in), hl = loose.encode_reaction(in);
  for (std::size_t c2 = 0; c2 < hs.values.size(); ++c2) {
    EXPECT_NEAR(hs.values[c2], hl.values[c2] * 3.0 / 48.0, 1e-14);
  }
}

TEST(ReactionModelTest, CheckpointRoundTrip) {
  const ReactionModel m(tiny(), 15);
  const ReactionModel back = ReactionModel::from_checkpoint(
      decode_checkpoint(encode_checkpoint(m.to_checkpoint(false))));
  const ReactionInput in = input_of({"CCO"});
  const TokenSequence t = decoder_input("CC");
  EXPECT_EQ(back.decode_teacher_forced(back.encode_reaction(in), t),
            m.decode_teacher_forced(m.encode_reaction(in), t));
  EXPECT_THROW(PropertyModel::from_checkpoint(m.to_checkpoint(false)), CheckpointError);
}

TEST(PropertyModelTest, SingleTokenPoolEqualsEncoderRow) {
  const ReactionModel pre(tiny(), 16);
  PropertyModel m(tiny(), 17);
  m.load_encoder(pre.to_checkpoint(false));
  const TokenSequence one = tokenize("C");
  const Tensor pooled = m.pooled(one);
  const FragmentEncoding h = pre.encode_fragment(one);
  for (std::size_t c = 0; c < pooled.size(); ++c) EXPECT_EQ(pooled[c], h.values.at(0, c));
}

TEST(PropertyModelTest, ZeroedOutputLayerReturnsBias) {
  ModelConfig c = tiny();
  c.tasks = 3;
  PropertyModel m(c, 18);
  Parameter *w = m.params().find("head.l2.w");
  Parameter *b = m.params().find("head.l2.b");
  ASSERT_NE(w, nullptr);
  ASSERT_NE(b, nullptr);
  w->value.fill(0);
  b->value = Tensor({3}, std::vector<Real>{0.5, -1.25, 2.0});
  for (const char *s : {"CCO", "c1ccccc1", "N"}) {
    const Tensor p = m.predict(tokenize(s));
    ASSERT_EQ(p.size(), 3u);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(p[t], b->value[t]);
  }
}

TEST(PropertyModelTest, EveryParameterReceivesGradient) {
  PropertyModel m(tiny(), 19);
  Graph g;
  const Tensor target({1, 1}, Real(3));
  Var loss = ops::masked_mse(m.forward(g, tokenize("CC(=O)N")), target, Tensor({1, 1}, Real(1)));
  m.params().zero_grad();
  g.backward(loss);
  g.accumulate_param_grads(m.params());
  const Parameter *embed = m.params().find("enc.embed");
  ASSERT_NE(embed, nullptr);
  double norm = 0;
  for (Real v : embed->grad.values()) norm += v * v;
  EXPECT_GT(norm, 0);
  EXPECT_LT(testing::parameter_gradient_check(m.params(), [&](Graph &gg) {
              return ops::masked_mse(m.forward(gg, tokenize("CC(=O)N")), target,
                                     Tensor({1, 1}, Real(1)));
            }),
            1e-4);
}

TEST(PropertyModelTest, IncompatibleEncoderRejected) {
  PropertyModel m(tiny(8), 20);
  const ReactionModel other(tiny(16), 21);
  EXPECT_THROW(m.load_encoder(other.to_checkpoint(false)), CheckpointError);
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c = tiny();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const ModelConfig defaults;
  EXPECT_EQ(defaults.layers, 4);
  EXPECT_EQ(defaults.heads, 8);
  EXPECT_EQ(defaults.width, 256);
  EXPECT_NO_THROW(defaults.validate());
}

}  // namespace
}  // namespace rxnpt
