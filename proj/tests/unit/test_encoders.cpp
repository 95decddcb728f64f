#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "relprobe/checkpoint.hpp"
#include "relprobe/deptree.hpp"
#include "relprobe/encoders.hpp"
#include "relprobe/error.hpp"
#include "relprobe/gradcheck.hpp"

using namespace relprobe;

namespace {

const std::vector<EncoderKind> kTrained = {EncoderKind::Cnn, EncoderKind::Bilstm, EncoderKind::Gcn, EncoderKind::Attn};

template <typename Real>
EncoderModel<Real> toy_model(EncoderKind kind, const Corpus& c, InputConfig in = toy_input_config(),
                             std::uint64_t seed = 3) {
  EncoderModel<Real> m(in, toy_encoder_config(kind), build_vocab(c.train, in.masking), c.label_inventory);
  m.init(seed);
  return m;
}

Corpus bayer_corpus() {
  Corpus c;
  c.train.push_back(fixtures::bayer());
  c.label_inventory = {"no_relation", "org:subsidiaries"};
  return c;
}

}  // namespace

TEST(Offsets, Examples) {
  EXPECT_EQ(position_offsets({2, 2}, 5, 50), (std::vector<int>{-2, -1, 0, 1, 2}));
  EXPECT_EQ(position_offsets({1, 2}, 4, 50), (std::vector<int>{-1, 0, 0, 1}));
  auto far = position_offsets({0, 0}, 80, 50);
  EXPECT_EQ(far[70], 50);
  auto before = position_offsets({79, 79}, 80, 50);
  EXPECT_EQ(before[0], -50);
}

TEST(Embed, RowWidth) {
  InputConfig in;
  in.word_dim = 4;
  in.offset_dim = 2;
  EXPECT_EQ(in.width(), 8u);
  Corpus c = bayer_corpus();
  EncoderModel<double> m(in, toy_encoder_config(EncoderKind::Boe), build_vocab(c.train, false), c.label_inventory);
  m.init(1);
  ad::Tape<double> t;
  ad::Rng rng(0);
  ad::Var x = m.embed(t, c.train[0], nullptr, ad::Mode::Eval, rng);
  EXPECT_EQ(t.rows(x), 3u);
  EXPECT_EQ(t.cols(x), 8u);
}

TEST(Embed, MaskingSubstitutesMentionTokens) {
  Corpus c = bayer_corpus();
  InputConfig in = toy_input_config();
  in.masking = true;
  EncoderModel<double> m(in, toy_encoder_config(EncoderKind::Cnn), build_vocab(c.train, true), c.label_inventory);
  auto ids = m.token_ids(c.train[0]);
  EXPECT_EQ(ids[0], m.vocab().id("SUBJ-ORGANIZATION"));
  EXPECT_NE(ids[0], Vocab::kUnk);
  EXPECT_EQ(ids[2], m.vocab().id("OBJ-ORGANIZATION"));
}

TEST(Embed, MissingContextualNamesSentence) {
  Corpus c = bayer_corpus();
  InputConfig in = toy_input_config();
  in.use_contextual = true;
  in.contextual_dim = 3;
  auto m = toy_model<double>(EncoderKind::Cnn, c, in);
  try {
    m.represent(c.train[0], nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bayer"), std::string::npos);
  }
  ContextualStore::Matrix ok{3, 3, std::vector<float>(9, 0.5f)};
  EXPECT_EQ(m.represent(c.train[0], &ok).size(), m.rep_dim());
}

TEST(Encoders, EvalIsDeterministicAndDimensionsMatch) {
  Corpus c = fixtures::synth_corpus(10, 0, 0, 1);
  for (EncoderKind k : {EncoderKind::Cnn, EncoderKind::Bilstm, EncoderKind::Gcn, EncoderKind::Attn, EncoderKind::Boe}) {
    auto m = toy_model<float>(k, c);
    for (const auto& s : c.train) {
      auto a = m.represent(s);
      EXPECT_EQ(a.size(), m.rep_dim()) << encoder_kind_name(k);
      EXPECT_EQ(a, m.represent(s)) << encoder_kind_name(k);
      for (float v : a) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Encoders, OutputDims) {
  const size_t w = 20;
  EncoderConfig e;
  e.kind = EncoderKind::Cnn;
  e.filters = 7;
  e.filter_sizes = {2, 3, 4};
  EXPECT_EQ(e.output_dim(w), 21u);
  e.kind = EncoderKind::Bilstm;
  e.lstm_hidden = 6;
  EXPECT_EQ(e.output_dim(w), 12u);
  e.kind = EncoderKind::Gcn;
  e.gcn_ff_layers = 1;
  e.gcn_ff_dim = 9;
  EXPECT_EQ(e.output_dim(w), 9u);
  e.gcn_ff_layers = 0;
  e.gcn_dim = 5;
  EXPECT_EQ(e.output_dim(w), 15u);
  e.kind = EncoderKind::Attn;
  e.model_dim = 16;
  EXPECT_EQ(e.output_dim(w), 16u);
  e.kind = EncoderKind::Boe;
  EXPECT_EQ(e.output_dim(w), w);
}

TEST(Encoders, BoePermutationInvariant) {
  Corpus c = fixtures::synth_corpus(20, 0, 0, 2);
  InputConfig in = toy_input_config();
  in.offset_dim = 0;
  auto m = toy_model<double>(EncoderKind::Boe, c, in);
  std::mt19937_64 rng(9);
  for (const auto& s : c.train) {
    Sentence p = s;
    std::shuffle(p.tokens.begin(), p.tokens.end(), rng);
    auto a = m.represent(s), b = m.represent(p);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Encoders, CnnWidthOneIdentityIsColumnMax) {
  Corpus c = bayer_corpus();
  InputConfig in;
  in.word_dim = 3;
  in.offset_dim = 0;
  EncoderConfig e;
  e.kind = EncoderKind::Cnn;
  e.filter_sizes = {1};
  e.filters = 3;
  e.activation = Activation::Identity;
  EncoderModel<double> m(in, e, build_vocab(c.train, false), c.label_inventory);
  m.init(0);
  auto& w = m.params()["cnn.conv1.weight"];
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int i = 0; i < 3; ++i) w.data[i * 3 + i] = 1.0;
  std::fill(m.params()["cnn.conv1.bias"].data.begin(), m.params()["cnn.conv1.bias"].data.end(), 0.0);
  auto& table = m.params()["embed.word"];
  const auto ids = m.token_ids(c.train[0]);
  const double rows[3][3] = {{1, -2, 0.5}, {0, 4, -1}, {3, 1, -3}};
  for (int t = 0; t < 3; ++t)
    for (int d = 0; d < 3; ++d) table.data[ids[t] * 3 + d] = rows[t][d];
  EXPECT_EQ(m.represent(c.train[0]), (std::vector<double>{3, 4, 0.5}));
}

TEST(Encoders, GcnIgnoresPrunedTokens) {
  auto cfg = default_synth_config();
  cfg.n_train = 80;
  cfg.n_val = cfg.n_test = 0;
  cfg.max_pp = 5;
  Corpus c = generate(cfg);
  auto m = toy_model<float>(EncoderKind::Gcn, c);
  const int k = m.encoder_config().prune_k;
  int checked = 0;
  for (const auto& s : c.train) {
    DepTree t = build_tree(s.dep_head);
    auto kept = prune(t, sdp(t, s.head, s.tail), k);
    if (static_cast<int>(kept.size()) == s.size()) continue;
    Sentence other = s;
    for (int i = 0; i < s.size(); ++i) {
      if (!std::binary_search(kept.begin(), kept.end(), i)) other.tokens[i] = i % 2 ? "<pad>" : "zzz-unseen";
    }
    EXPECT_EQ(m.represent(s), m.represent(other)) << s.id;
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(Encoders, GcnAdjacencyRowNormalised) {
  const std::vector<int> h{2, 0, 2, 3};
  DepTree t = build_tree(h);
  auto a = gcn_adjacency(t, {0, 1, 2});
  // token 1 touches 0, 2 and itself; token 3 is pruned.
  EXPECT_DOUBLE_EQ(a[1 * 4 + 0], 1.0 / 3);
  EXPECT_DOUBLE_EQ(a[1 * 4 + 1], 1.0 / 3);
  EXPECT_DOUBLE_EQ(a[1 * 4 + 2], 1.0 / 3);
  EXPECT_DOUBLE_EQ(a[2 * 4 + 3], 0.0);
  EXPECT_DOUBLE_EQ(a[2 * 4 + 1], 0.5);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(a[3 * 4 + j], 0.0);
}

TEST(Encoders, AttnZeroKeysGiveUniformWeights) {
  Corpus c = fixtures::synth_corpus(5, 0, 0, 4);
  auto m = toy_model<double>(EncoderKind::Attn, c);
  for (auto& p : m.params()) {
    if (p.name.find(".key.weight") != std::string::npos) std::fill(p.data.begin(), p.data.end(), 0.0);
  }
  for (const auto& s : c.train) {
    AttentionTrace trace;
    m.represent(s, nullptr, &trace);
    ASSERT_EQ(trace.size(), m.encoder_config().attn_layers);
    const double u = 1.0 / s.size();
    for (const auto& layer : trace)
      for (const auto& head : layer)
        for (double w : head) EXPECT_NEAR(w, u, 1e-6);
  }
}

TEST(Encoders, AttnSingleToken) {
  Sentence s;
  s.id = "one";
  s.tokens = {"Bayer"};
  s.pos = {"NNP"};
  s.ner = {"ORGANIZATION"};
  s.dep_head = {0};
  s.dep_label = {"ROOT"};
  s.head = s.tail = {0, 0};
  s.relation = "x";
  Corpus c;
  c.train = {s};
  c.label_inventory = {"x"};
  auto m = toy_model<double>(EncoderKind::Attn, c);
  AttentionTrace trace;
  auto rep = m.represent(s, nullptr, &trace);
  for (const auto& layer : trace)
    for (const auto& head : layer) EXPECT_EQ(head, std::vector<double>{1.0});
  EXPECT_EQ(rep.size(), m.rep_dim());
}

TEST(Classifier, ZeroWeightsUniformAndHandProduct) {
  Corpus c = bayer_corpus();
  auto m = toy_model<double>(EncoderKind::Cnn, c);
  auto& w = m.params()["classifier.weight"];
  auto& b = m.params()["classifier.bias"];
  std::fill(w.data.begin(), w.data.end(), 0.0);
  auto logits = m.logits(c.train[0]);
  EXPECT_EQ(logits[0], logits[1]);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : w.data) v = u(rng);
  b.data = {0.25, -0.5};
  auto rep = m.represent(c.train[0]);
  logits = m.logits(c.train[0]);
  for (int j = 0; j < 2; ++j) {
    double acc = b.data[j];
    for (size_t i = 0; i < rep.size(); ++i) acc += rep[i] * w.data[i * 2 + j];
    EXPECT_NEAR(logits[j], acc, 1e-12);
  }
}

TEST(Encoders, MaskedRepsIgnoreMentionStrings) {
  Corpus c = fixtures::synth_corpus(30, 0, 0, 6);
  InputConfig in = toy_input_config();
  in.masking = true;
  for (EncoderKind k : kTrained) {
    auto m = toy_model<float>(k, c, in);
    for (const auto& s : c.train) {
      Sentence other = s;
      for (int i = s.head.start; i <= s.head.end; ++i) other.tokens[i] = "Somebody" + std::to_string(i);
      for (int i = s.tail.start; i <= s.tail.end; ++i) other.tokens[i] = "Elsewhere";
      EXPECT_EQ(m.represent(s), m.represent(other)) << encoder_kind_name(k);
    }
  }
}

TEST(Config, Validation) {
  InputConfig in = toy_input_config();
  EncoderConfig e = toy_encoder_config(EncoderKind::Attn);
  e.heads = 0;
  EXPECT_THROW(check_config(in, e), Error);
  in.word_dim = 0;
  EXPECT_THROW(check_config(in, toy_encoder_config(EncoderKind::Cnn)), Error);
  InputConfig ok = toy_input_config();
  for (EncoderKind k : kTrained) {
    EncoderConfig cfg = toy_encoder_config(k);
    EXPECT_EQ(encoder_config_from_json(to_json(cfg)), cfg);
  }
  EXPECT_EQ(input_config_from_json(to_json(ok)), ok);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Corpus c = fixtures::synth_corpus(12, 0, 0, 7);
  auto dir = fixtures::temp_dir("ckpt");
  for (EncoderKind k : {EncoderKind::Cnn, EncoderKind::Bilstm, EncoderKind::Gcn, EncoderKind::Attn, EncoderKind::Boe}) {
    auto m = toy_model<float>(k, c);
    const auto path = dir / (std::string(encoder_kind_name(k)) + ".rpck");
    save_model(m, path);
    auto back = load_model(path);
    EXPECT_EQ(back.input_config(), m.input_config());
    EXPECT_EQ(back.encoder_config(), m.encoder_config());
    EXPECT_EQ(back.labels(), m.labels());
    for (const auto& s : c.train) EXPECT_EQ(back.logits(s), m.logits(s));
    save_model(back, dir / "again.rpck");
    EXPECT_EQ(file_hash(path), file_hash(dir / "again.rpck"));
  }
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  Corpus c = fixtures::synth_corpus(12, 0, 0, 7);
  auto ckpt = to_checkpoint(toy_model<float>(EncoderKind::Cnn, c));
  ckpt.tensors[0].dims[1] += 1;
  ckpt.tensors[0].data.resize(ckpt.tensors[0].dims[0] * ckpt.tensors[0].dims[1]);
  EXPECT_THROW(from_checkpoint(ckpt), Error);
}

TEST(Checkpoint, BadMagic) {
  std::istringstream in("NOPE....");
  EXPECT_THROW(read_checkpoint(in), Error);
}
