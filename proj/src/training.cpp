#include "relprobe/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "relprobe/error.hpp"

namespace relprobe {

namespace {

double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

PRF prf(double tp, double n_pred, double n_gold) {
  PRF out;
  out.p = safe_div(tp, n_pred);
  out.r = safe_div(tp, n_gold);
  out.f1 = safe_div(2 * out.p * out.r, out.p + out.r);
  return out;
}

void check_lengths(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  if (preds.size() != golds.size()) {
    throw Error("prediction/gold length mismatch: " + std::to_string(preds.size()) + " vs " +
                std::to_string(golds.size()));
  }
}

}  // namespace

PRF micro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
             const std::optional<std::string>& negative_label) {
  check_lengths(preds, golds);
  auto positive = [&](const std::string& l) { return !negative_label || l != *negative_label; };
  double tp = 0, n_pred = 0, n_gold = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (positive(preds[i])) ++n_pred;
    if (positive(golds[i])) ++n_gold;
    if (positive(golds[i]) && preds[i] == golds[i]) ++tp;
  }
  return prf(tp, n_pred, n_gold);
}

const std::array<std::string, 9>& semeval_relation_types() {
  static const std::array<std::string, 9> types = {
      "Cause-Effect",       "Component-Whole", "Content-Container", "Entity-Destination", "Entity-Origin",
      "Instrument-Agency", "Member-Collection", "Message-Topic",     "Product-Producer",
  };
  return types;
}

namespace {

// Index into semeval_relation_types(), or -1 for "Other".
int semeval_type(const std::string& label) {
  if (label == "Other") return -1;
  const auto paren = label.find('(');
  if (paren != std::string::npos) {
    const std::string dir = label.substr(paren);
    if (dir == "(e1,e2)" || dir == "(e2,e1)") {
      const auto& types = semeval_relation_types();
      auto it = std::find(types.begin(), types.end(), label.substr(0, paren));
      if (it != types.end()) return static_cast<int>(it - types.begin());
    }
  }
  throw Error("unknown SemEval label: " + label);
}

}  // namespace

PRF macro_f1_directional(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  check_lengths(preds, golds);
  std::array<double, 9> tp{}, n_pred{}, n_gold{};
  for (size_t i = 0; i < preds.size(); ++i) {
    const int p = semeval_type(preds[i]);
    const int g = semeval_type(golds[i]);
    if (p >= 0) ++n_pred[p];
    if (g >= 0) ++n_gold[g];
    if (g >= 0 && preds[i] == golds[i]) ++tp[g];
  }
  PRF out;
  for (size_t t = 0; t < 9; ++t) {
    PRF s = prf(tp[t], n_pred[t], n_gold[t]);
    out.p += s.p / 9;
    out.r += s.r / 9;
    out.f1 += s.f1 / 9;
  }
  return out;
}

F1Metric parse_metric(std::string_view name) {
  if (name == "micro") return F1Metric::Micro;
  if (name == "macro-directional" || name == "macro") return F1Metric::MacroDirectional;
  throw Error("unknown metric: " + std::string(name));
}

std::string_view metric_name(F1Metric metric) {
  return metric == F1Metric::Micro ? "micro" : "macro-directional";
}

// ---------------------------------------------------------------------------
// Presets

std::vector<std::string> preset_names() {
  return {"tacred-cnn",    "tacred-bilstm",  "tacred-gcn",  "tacred-attn", "semeval-cnn",
          "semeval-bilstm", "semeval-gcn",   "semeval-attn", "desk-small"};
}

namespace {

HyperProfile dataset_base(bool tacred) {
  HyperProfile p;
  p.input.word_dim = 300;
  p.input.offset_dim = tacred ? 30 : 50;
  p.input.max_offset = 50;
  p.batch_size = tacred ? 50 : 30;
  p.metric = tacred ? F1Metric::Micro : F1Metric::MacroDirectional;
  return p;
}

ScheduleSpec plateau() { return {SchedulePolicy::Plateau, 0.9, 2, 1e-4, 15}; }
ScheduleSpec epoch_decay() { return {SchedulePolicy::EpochDecay, 0.9, 2, 1e-4, 15}; }

HyperProfile dataset_preset(bool tacred, EncoderKind kind) {
  HyperProfile p = dataset_base(tacred);
  p.encoder.kind = kind;
  switch (kind) {
    case EncoderKind::Cnn:
      p.encoder.filter_sizes = {2, 3, 4, 5};
      p.encoder.activation = Activation::Tanh;
      p.encoder.encoder_dropout = 0.5;
      p.epochs = 50;
      if (tacred) {
        p.encoder.filters = 500;
        p.optimizer = {OptimizerKind::Adagrad, 0.1, {{"cnn.conv*.weight", 1e-3}}};
        p.schedule = epoch_decay();
      } else {
        p.encoder.filters = 150;
        p.input.embedding_dropout = 0.5;
        p.input.word_dropout = 0.04;
        p.optimizer = {OptimizerKind::Adadelta, 1.0, {{"cnn.conv*.weight", 1e-5}}};
        p.schedule = {};
      }
      break;
    case EncoderKind::Bilstm:
      p.encoder.lstm_layers = 2;
      p.encoder.lstm_hidden = tacred ? 500 : 300;
      p.encoder.recurrent_dropout = 0.5;
      p.input.word_dropout = 0.04;
      if (!tacred) {
        p.input.embedding_dropout = 0.5;
        p.encoder.encoder_dropout = 0.5;
      }
      p.optimizer = {OptimizerKind::Adagrad, 0.01, {}};
      p.schedule = epoch_decay();
      p.epochs = 30;
      break;
    case EncoderKind::Gcn:
      p.encoder.gcn_layers = tacred ? 2 : 1;
      p.encoder.gcn_dim = 200;
      p.encoder.gcn_ff_layers = 2;
      p.encoder.gcn_ff_dim = 200;
      p.encoder.prune_k = 1;
      p.encoder.gcn_dropout = 0.5;
      p.input.word_dropout = 0.04;
      p.input.embedding_dropout = 0.5;
      p.encoder.encoder_dropout = 0.5;
      p.optimizer = {OptimizerKind::Sgd, 0.3, {}};
      p.schedule = plateau();
      p.epochs = 100;
      break;
    case EncoderKind::Attn:
      p.encoder.attn_layers = 8;
      p.encoder.heads = 8;
      p.encoder.model_dim = 256;
      p.encoder.kv_dim = 256;
      p.encoder.attn_ff_dim = 512;
      p.encoder.attention_dropout = 0.1;
      p.input.word_dropout = 0.04;
      p.input.embedding_dropout = 0.5;
      p.encoder.encoder_dropout = 0.5;
      p.optimizer = {OptimizerKind::Adam, 1e-4, {}};
      p.schedule = plateau();
      p.epochs = 50;
      break;
    case EncoderKind::Boe:
      throw Error("no dataset preset for the boe encoder");
  }
  return p;
}

HyperProfile desk_small(EncoderKind kind) {
  HyperProfile p;
  p.input.word_dim = 16;
  p.input.offset_dim = 4;
  p.input.max_offset = 50;
  p.encoder.kind = kind;
  p.encoder.filter_sizes = {2, 3};
  p.encoder.filters = 32;
  p.encoder.activation = Activation::Tanh;
  p.encoder.lstm_layers = 1;
  p.encoder.lstm_hidden = 16;
  p.encoder.gcn_layers = 2;
  p.encoder.gcn_dim = 16;
  p.encoder.gcn_ff_layers = 1;
  p.encoder.gcn_ff_dim = 16;
  p.encoder.prune_k = 1;
  p.encoder.attn_layers = 2;
  p.encoder.heads = 2;
  p.encoder.model_dim = 16;
  p.encoder.kv_dim = 16;
  p.encoder.attn_ff_dim = 32;
  p.encoder.attention_dropout = 0.0;
  p.optimizer = {OptimizerKind::Adam, 0.01, {}};
  p.schedule = {};
  p.epochs = 200;
  p.batch_size = 16;
  p.metric = F1Metric::Micro;
  return p;
}

}  // namespace

HyperProfile preset(std::string_view name, std::optional<EncoderKind> kind) {
  HyperProfile p;
  if (name == "desk-small") {
    p = desk_small(kind.value_or(EncoderKind::Cnn));
  } else {
    const auto dash = name.find('-');
    const std::string_view dataset = name.substr(0, dash);
    if (dash == std::string_view::npos || (dataset != "tacred" && dataset != "semeval")) {
      throw Error("unknown preset: " + std::string(name));
    }
    EncoderKind k = parse_encoder_kind(name.substr(dash + 1));
    if (k == EncoderKind::Boe) throw Error("unknown preset: " + std::string(name));
    if (kind && *kind != k) {
      throw Error("preset " + std::string(name) + " is for the " + std::string(encoder_kind_name(k)) + " encoder");
    }
    p = dataset_preset(dataset == "tacred", k);
  }
  p.name = std::string(name);
  return p;
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::string> predict(EncoderModel<float>& model, const std::vector<Sentence>& sentences,
                                 const ContextualStore* contextual) {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    const auto* ctx = contextual ? contextual->find(s.id) : nullptr;
    auto z = model.logits(s, ctx);
    out.push_back(model.labels()[std::max_element(z.begin(), z.end()) - z.begin()]);
  }
  return out;
}

PRF evaluate(EncoderModel<float>& model, const std::vector<Sentence>& sentences, F1Metric metric,
             const std::optional<std::string>& negative_label, const ContextualStore* contextual) {
  auto preds = predict(model, sentences, contextual);
  std::vector<std::string> golds;
  golds.reserve(sentences.size());
  for (const auto& s : sentences) golds.push_back(s.relation);
  return metric == F1Metric::Micro ? micro_f1(preds, golds, negative_label) : macro_f1_directional(preds, golds);
}

TrainResult train_re(const Corpus& corpus, const HyperProfile& profile, const TrainOptions& options) {
  if (corpus.train.empty()) throw Error("training split is empty");
  if (profile.epochs < 1 || profile.batch_size < 1) throw Error("epochs and batch_size must be positive");
  if (profile.input.use_contextual && !options.contextual) throw Error("profile needs contextual vectors");
  if (options.contextual) options.contextual->check_against(corpus);

  EncoderModel<float> model(profile.input, profile.encoder, build_vocab(corpus.train, profile.input.masking),
                            corpus.label_inventory);
  model.init(options.seed, options.embeddings);

  const auto& eval_split =
      options.validate_on_train || corpus.validation.empty() ? corpus.train : corpus.validation;
  std::vector<int> gold;
  gold.reserve(corpus.train.size());
  for (const auto& s : corpus.train) gold.push_back(model.label_index(s.relation));

  ad::Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  Optimizer<float> opt(profile.optimizer);
  LrScheduler sched(profile.schedule, profile.optimizer.lr);
  std::vector<size_t> order(corpus.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{model, {}, 0, -1.0};
  std::vector<std::vector<float>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : model.params()) best.push_back(p.data);
  };

  for (int epoch = 1; epoch <= profile.epochs; ++epoch) {
    const double lr = sched.lr();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (size_t b = 0; b < order.size(); b += profile.batch_size) {
      const size_t e = std::min(order.size(), b + profile.batch_size);
      ad::Tape<float> tape;
      std::vector<ad::Var> logits;
      std::vector<int> batch_gold;
      for (size_t k = b; k < e; ++k) {
        const Sentence& s = corpus.train[order[k]];
        const auto* ctx = options.contextual ? options.contextual->find(s.id) : nullptr;
        ad::Var rep = model.encode(tape, s, ctx, ad::Mode::Train, rng);
        logits.push_back(model.classify(tape, rep, ad::Mode::Train, rng));
        batch_gold.push_back(gold[order[k]]);
      }
      ad::Var loss = tape.softmax_cross_entropy(tape.stack_rows(logits), batch_gold);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) throw Error("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      total += value * static_cast<double>(e - b);
      tape.backward(loss);
      opt.step(model.params(), lr);
      model.params().zero_grad();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(order.size());
    rec.lr = lr;
    PRF score = evaluate(model, eval_split, profile.metric, corpus.negative_label, options.contextual);
    rec.val_p = score.p;
    rec.val_r = score.r;
    rec.val_f1 = score.f1;
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (rec.val_f1 > result.best_val_f1) {
      result.best_val_f1 = rec.val_f1;
      result.best_epoch = epoch;
      snapshot();
    }
    sched.after_epoch(epoch, rec.val_f1);
    if (options.early_stop_f1 && rec.val_f1 >= *options.early_stop_f1) break;
  }

  size_t i = 0;
  for (auto& p : model.params()) p.data = best[i++];
  result.model = std::move(model);
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,loss,val_p,val_r,val_f1,lr\n";
  out << std::setprecision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss << ',' << r.val_p << ',' << r.val_r << ',' << r.val_f1 << ',' << r.lr << '\n';
  }
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_history_csv(history, out);
}

}  // namespace relprobe
