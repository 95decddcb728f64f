#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "relprobe/error.hpp"
#include "relprobe/training.hpp"

using namespace relprobe;

namespace {

const std::optional<std::string> kNeg = std::string("neg");

// gold -> pred
const std::vector<std::pair<std::string, std::string>> kMacroFixture = {
    {"Cause-Effect(e1,e2)", "Cause-Effect(e1,e2)"},
    {"Component-Whole(e1,e2)", "Component-Whole(e1,e2)"},
    {"Content-Container(e2,e1)", "Content-Container(e2,e1)"},
    {"Entity-Destination(e1,e2)", "Entity-Destination(e1,e2)"},
    {"Entity-Origin(e1,e2)", "Entity-Origin(e1,e2)"},
    {"Entity-Origin(e2,e1)", "Entity-Origin(e1,e2)"},
    {"Instrument-Agency(e1,e2)", "Instrument-Agency(e2,e1)"},
    {"Member-Collection(e1,e2)", "Other"},
    {"Other", "Message-Topic(e1,e2)"},
    {"Product-Producer(e2,e1)", "Other"},
    {"Other", "Other"},
    {"Other", "Other"},
};

// Per-type confusion counts by hand: four perfect types, Entity-Origin with
// tp=1 of 2 predicted and 2 gold (F1 1/2), four types with F1 0.
constexpr double kMacroHand = (4 * 1.0 + 0.5 + 4 * 0.0) / 9;

std::vector<std::string> col(const std::vector<std::pair<std::string, std::string>>& v, bool gold) {
  std::vector<std::string> out;
  for (const auto& [g, p] : v) out.push_back(gold ? g : p);
  return out;
}

std::string flip(const std::string& label) {
  auto pos = label.find("(e1,e2)");
  if (pos != std::string::npos) return label.substr(0, pos) + "(e2,e1)";
  pos = label.find("(e2,e1)");
  if (pos != std::string::npos) return label.substr(0, pos) + "(e1,e2)";
  return label;
}

TrainResult train_small(EncoderKind kind, std::uint64_t seed, int epochs, bool early = true) {
  Corpus c = fixtures::synth_corpus(64, 16, 16, 11);
  HyperProfile p = preset("desk-small", kind);
  p.epochs = epochs;
  TrainOptions o;
  o.seed = seed;
  o.validate_on_train = true;
  if (early) o.early_stop_f1 = 0.99;
  return train_re(c, p, o);
}

}  // namespace

TEST(Metrics, MicroF1HandCount) {
  auto r = micro_f1({"A", "neg", "neg", "A"}, {"A", "A", "neg", "B"}, kNeg);
  EXPECT_EQ(r.p, 0.5);
  EXPECT_EQ(r.r, 1.0 / 3);
  EXPECT_DOUBLE_EQ(r.f1, 0.4);
}

TEST(Metrics, MicroF1Edges) {
  auto all = micro_f1({"A", "B", "neg"}, {"A", "B", "neg"}, kNeg);
  EXPECT_EQ(all.f1, 1.0);
  auto none = micro_f1({"neg", "neg"}, {"A", "B"}, kNeg);
  EXPECT_EQ(none.p, 0.0);
  EXPECT_EQ(none.r, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(micro_f1({"A"}, {"A", "B"}, kNeg), Error);
  auto no_neg = micro_f1({"A", "B"}, {"A", "A"}, std::nullopt);
  EXPECT_EQ(no_neg.f1, 0.5);
}

TEST(Metrics, MicroF1PermutationInvariant) {
  std::mt19937_64 rng(2);
  const std::vector<std::string> labels{"neg", "A", "B", "C"};
  std::uniform_int_distribution<size_t> pick(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, std::string>> pairs(30);
    for (auto& [g, p] : pairs) {
      g = labels[pick(rng)];
      p = labels[pick(rng)];
    }
    auto base = micro_f1(col(pairs, false), col(pairs, true), kNeg);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    auto again = micro_f1(col(pairs, false), col(pairs, true), kNeg);
    EXPECT_EQ(base.f1, again.f1);
  }
}

TEST(Metrics, MacroDirectionalFixture) {
  auto r = macro_f1_directional(col(kMacroFixture, false), col(kMacroFixture, true));
  EXPECT_NEAR(r.f1, kMacroHand, 1e-12);
  EXPECT_NEAR(r.f1, 0.5, 1e-12);
  EXPECT_NEAR(r.p, 0.5, 1e-12);
  EXPECT_NEAR(r.r, 0.5, 1e-12);
}

TEST(Metrics, MacroDirectionalEdges) {
  std::vector<std::string> gold, exact, wrong;
  for (const auto& t : semeval_relation_types()) {
    gold.push_back(t + "(e1,e2)");
    gold.push_back(t + "(e2,e1)");
  }
  gold.push_back("Other");
  for (const auto& g : gold) wrong.push_back(flip(g));
  EXPECT_NEAR(macro_f1_directional(gold, gold).f1, 1.0, 1e-12);
  wrong.back() = "Cause-Effect(e1,e2)";
  EXPECT_EQ(macro_f1_directional(wrong, gold).f1, 0.0);
  EXPECT_THROW(macro_f1_directional({"Bogus(e1,e2)"}, {"Other"}), Error);
}

TEST(Metrics, MacroDirectionSwapInvariant) {
  auto preds = col(kMacroFixture, false), golds = col(kMacroFixture, true);
  for (const auto& type : semeval_relation_types()) {
    auto p = preds, g = golds;
    for (auto* v : {&p, &g})
      for (auto& l : *v)
        if (l.starts_with(type)) l = flip(l);
    EXPECT_NEAR(macro_f1_directional(p, g).f1, kMacroHand, 1e-12) << type;
  }
}

TEST(Presets, DatasetValues) {
  auto cnn = preset("tacred-cnn");
  EXPECT_EQ(cnn.optimizer.kind, OptimizerKind::Adagrad);
  EXPECT_DOUBLE_EQ(cnn.optimizer.lr, 0.1);
  EXPECT_EQ(cnn.epochs, 50);
  EXPECT_EQ(cnn.schedule.policy, SchedulePolicy::EpochDecay);
  EXPECT_EQ(cnn.schedule.start_epoch, 15);
  EXPECT_DOUBLE_EQ(cnn.schedule.factor, 0.9);
  EXPECT_EQ(cnn.encoder.filters, 500u);
  EXPECT_EQ(cnn.encoder.filter_sizes, (std::vector<size_t>{2, 3, 4, 5}));
  ASSERT_EQ(cnn.optimizer.l2.size(), 1u);
  EXPECT_DOUBLE_EQ(cnn.optimizer.l2[0].lambda, 1e-3);
  EXPECT_TRUE(glob_match(cnn.optimizer.l2[0].pattern, "cnn.conv2.weight"));
  EXPECT_DOUBLE_EQ(cnn.encoder.encoder_dropout, 0.5);
  EXPECT_EQ(cnn.batch_size, 50u);
  EXPECT_EQ(preset("semeval-cnn").batch_size, 30u);
  EXPECT_EQ(preset("semeval-cnn").optimizer.kind, OptimizerKind::Adadelta);
  EXPECT_EQ(preset("semeval-cnn").metric, F1Metric::MacroDirectional);
  EXPECT_EQ(preset("tacred-bilstm").encoder.lstm_hidden, 500u);
  EXPECT_EQ(preset("tacred-gcn").encoder.prune_k, 1);
  EXPECT_EQ(preset("tacred-gcn").optimizer.kind, OptimizerKind::Sgd);
  EXPECT_EQ(preset("tacred-attn").encoder.heads, 8u);
  EXPECT_EQ(preset("tacred-attn").optimizer.kind, OptimizerKind::Adam);
  EXPECT_EQ(preset_names().size(), 9u);
  EXPECT_THROW(preset("tacred-cnn", EncoderKind::Gcn), Error);
  EXPECT_THROW(preset("nope"), Error);
  for (const auto& name : preset_names()) {
    auto p = preset(name);
    EXPECT_NO_THROW(check_config(p.input, p.encoder)) << name;
  }
}

TEST(Training, DeskSmallCnnOverfits) {
  auto r = train_small(EncoderKind::Cnn, 1, 200);
  EXPECT_GE(r.best_val_f1, 0.99);
  EXPECT_LE(r.history.size(), 200u);
}

TEST(Training, DeterministicPerSeed) {
  auto a = train_small(EncoderKind::Bilstm, 5, 3, false);
  auto b = train_small(EncoderKind::Bilstm, 5, 3, false);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].val_f1, b.history[i].val_f1);
  }
  std::ostringstream ha, hb;
  write_history_csv(a.history, ha);
  write_history_csv(b.history, hb);
  EXPECT_EQ(ha.str(), hb.str());
  EXPECT_EQ(ha.str().substr(0, ha.str().find('\n')), "epoch,loss,val_p,val_r,val_f1,lr");
}

TEST(Training, BestEpochAndScheduleColumn) {
  Corpus c = fixtures::synth_corpus(40, 10, 10, 3);
  HyperProfile p = preset("desk-small", EncoderKind::Cnn);
  p.epochs = 20;
  p.optimizer.lr = 0.001;
  p.schedule.policy = SchedulePolicy::EpochDecay;
  p.schedule.start_epoch = 15;
  TrainResult r = train_re(c, p, {});
  ASSERT_EQ(r.history.size(), 20u);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.val_f1);
  EXPECT_EQ(r.best_val_f1, best);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_f1, best);
  for (const auto& e : r.history) {
    const int decays = std::max(0, e.epoch - 14);
    EXPECT_NEAR(e.lr, 0.001 * std::pow(0.9, decays), 1e-15) << e.epoch;
  }
  EXPECT_NEAR(evaluate(r.model, c.validation, F1Metric::Micro, c.negative_label).f1, r.best_val_f1, 1e-12);
}

TEST(Training, DivergenceNamesEpoch) {
  Corpus c = fixtures::synth_corpus(20, 5, 5, 3);
  HyperProfile p = preset("desk-small", EncoderKind::Cnn);
  p.optimizer.kind = OptimizerKind::Sgd;
  p.optimizer.lr = 1e30;
  p.epochs = 5;
  try {
    train_re(c, p, {});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}
