#include "relprobe/gradcheck.hpp"

#include <cmath>

#include "relprobe/error.hpp"
#include "relprobe/synth.hpp"

namespace relprobe {

using Tape = ad::Tape<double>;
using Store = ad::ParamStore<double>;
using ad::Var;

double gradcheck(Store& params, const LossFn& loss, double eps) {
  params.zero_grad();
  double base = 0.0;
  {
    Tape tape;
    Var l = loss(tape);
    base = tape.value(l)[0];
    tape.backward(l);
  }
  if (!std::isfinite(base)) throw Error("gradcheck: non-finite loss");
  auto eval = [&] {
    Tape tape;
    Var l = loss(tape);
    double v = tape.value(l)[0];
    if (!std::isfinite(v)) throw Error("gradcheck: non-finite loss under perturbation");
    return v;
  };
  double worst = 0.0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    const std::vector<double> analytic = p.grad;
    for (size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(analytic[i])) throw Error("gradcheck: non-finite gradient for " + p.name);
      const double saved = p.data[i];
      p.data[i] = saved + eps;
      const double up = eval();
      p.data[i] = saved - eps;
      const double down = eval();
      p.data[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  params.zero_grad();
  return worst;
}

namespace {

// Values bounded away from zero so relu and max stay differentiable under
// the perturbation.
void fill_random(ad::Tensor<double>& t, ad::Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.data) x = sign(rng) ? u(rng) : -u(rng);
}

std::vector<double> random_vector(size_t n, ad::Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct OpCase {
  std::string name;
  std::vector<std::pair<std::string, std::vector<size_t>>> params;
  std::function<Var(Tape&, Store&, std::uint64_t)> build;
};

std::vector<OpCase> op_cases() {
  auto P = [](Tape& t, Store& s, const char* name) { return t.param(s[name]); };
  std::vector<OpCase> cases;
  cases.push_back({"gather", {{"a", {5, 3}}},
                   [](Tape& t, Store& s, std::uint64_t) {
                     std::vector<int> ids = {0, 3, 3, 1};
                     return t.gather(s["a"], ids);
                   }});
  cases.push_back({"matmul", {{"a", {2, 3}}, {"b", {3, 4}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.matmul(P(t, s, "a"), P(t, s, "b")); }});
  cases.push_back({"transpose", {{"a", {2, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.transpose(P(t, s, "a")); }});
  cases.push_back({"add", {{"a", {2, 3}}, {"b", {2, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.add(P(t, s, "a"), P(t, s, "b")); }});
  cases.push_back({"add_bias", {{"a", {3, 4}}, {"b", {4}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.add_bias(P(t, s, "a"), P(t, s, "b")); }});
  cases.push_back({"mul", {{"a", {2, 3}}, {"b", {2, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.mul(P(t, s, "a"), P(t, s, "b")); }});
  cases.push_back({"scale", {{"a", {2, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.scale(P(t, s, "a"), -1.7); }});
  cases.push_back({"tanh", {{"a", {3, 3}}}, [=](Tape& t, Store& s, std::uint64_t) { return t.tanh(P(t, s, "a")); }});
  cases.push_back({"relu", {{"a", {3, 3}}}, [=](Tape& t, Store& s, std::uint64_t) { return t.relu(P(t, s, "a")); }});
  cases.push_back(
      {"sigmoid", {{"a", {3, 3}}}, [=](Tape& t, Store& s, std::uint64_t) { return t.sigmoid(P(t, s, "a")); }});
  cases.push_back({"concat_cols", {{"a", {3, 2}}, {"b", {3, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.concat_cols({P(t, s, "a"), P(t, s, "b")}); }});
  cases.push_back({"stack_rows", {{"a", {2, 3}}, {"b", {1, 3}}}, [=](Tape& t, Store& s, std::uint64_t) {
                     std::vector<Var> parts = {P(t, s, "a"), P(t, s, "b")};
                     return t.stack_rows(parts);
                   }});
  cases.push_back({"slice_rows", {{"a", {4, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.slice_rows(P(t, s, "a"), 1, 3); }});
  cases.push_back({"slice_cols", {{"a", {3, 4}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.slice_cols(P(t, s, "a"), 1, 3); }});
  cases.push_back({"unfold", {{"a", {5, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.unfold(P(t, s, "a"), 2); }});
  cases.push_back({"unfold_short", {{"a", {2, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.unfold(P(t, s, "a"), 3); }});
  cases.push_back({"max_rows", {{"a", {4, 3}}}, [=](Tape& t, Store& s, std::uint64_t) {
                     std::vector<int> rows = {0, 2, 3};
                     return t.max_rows(P(t, s, "a"), rows);
                   }});
  cases.push_back({"max_over_time", {{"a", {5, 3}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.max_over_time(P(t, s, "a")); }});
  cases.push_back(
      {"sum_rows", {{"a", {4, 3}}}, [=](Tape& t, Store& s, std::uint64_t) { return t.sum_rows(P(t, s, "a")); }});
  cases.push_back(
      {"sum_all", {{"a", {4, 3}}}, [=](Tape& t, Store& s, std::uint64_t) { return t.sum_all(P(t, s, "a")); }});
  cases.push_back({"softmax_rows", {{"a", {3, 4}}},
                   [=](Tape& t, Store& s, std::uint64_t) { return t.softmax_rows(P(t, s, "a")); }});
  cases.push_back({"layer_norm", {{"a", {3, 4}}, {"g", {4}}, {"b", {4}}}, [=](Tape& t, Store& s, std::uint64_t) {
                     return t.layer_norm(P(t, s, "a"), P(t, s, "g"), P(t, s, "b"));
                   }});
  cases.push_back({"lstm_cell", {{"x", {1, 3}}, {"s", {1, 4}}, {"w", {5, 8}}, {"b", {8}}},
                   [=](Tape& t, Store& s, std::uint64_t) {
                     return t.lstm_cell(P(t, s, "x"), P(t, s, "s"), P(t, s, "w"), P(t, s, "b"));
                   }});
  cases.push_back({"mask", {{"a", {2, 3}}}, [=](Tape& t, Store& s, std::uint64_t) {
                     return t.mask(P(t, s, "a"), {1.0, 0.0, 2.0, 0.5, 1.0, 0.0});
                   }});
  cases.push_back({"dropout", {{"a", {4, 4}}}, [=](Tape& t, Store& s, std::uint64_t seed) {
                     ad::Rng rng(seed);
                     return t.dropout(P(t, s, "a"), 0.3, ad::Mode::Train, rng);
                   }});
  cases.push_back({"softmax_cross_entropy", {{"a", {3, 4}}}, [=](Tape& t, Store& s, std::uint64_t) {
                     std::vector<int> gold = {2, 0, 3};
                     return t.softmax_cross_entropy(P(t, s, "a"), gold);
                   }});
  return cases;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed) {
  std::vector<GradcheckResult> results;
  for (const auto& c : op_cases()) {
    ad::Rng rng(seed);
    Store store;
    for (const auto& [name, shape] : c.params) fill_random(store.add(name, shape), rng);
    // Probe the output with fixed random weights so every element's gradient is exercised.
    std::vector<double> weights;
    const std::uint64_t op_seed = seed + 1;
    LossFn loss = [&](Tape& tape) {
      Var out = c.build(tape, store, op_seed);
      const size_t n = tape.rows(out) * tape.cols(out);
      if (weights.size() != n) {
        ad::Rng wrng(seed + 2);
        weights = random_vector(n, wrng);
      }
      return tape.sum_all(tape.mul(out, tape.input(tape.rows(out), tape.cols(out), weights)));
    };
    results.push_back({c.name, gradcheck(store, loss), store.scalar_count()});
  }
  return results;
}

InputConfig toy_input_config() {
  InputConfig in;
  in.word_dim = 4;
  in.offset_dim = 2;
  in.max_offset = 3;
  in.word_dropout = 0.2;
  in.embedding_dropout = 0.2;
  return in;
}

EncoderConfig toy_encoder_config(EncoderKind kind) {
  EncoderConfig e;
  e.kind = kind;
  e.encoder_dropout = 0.2;
  e.filter_sizes = {1, 2, 3};
  e.filters = 3;
  e.activation = Activation::Tanh;
  e.lstm_layers = 2;
  e.lstm_hidden = 3;
  e.recurrent_dropout = 0.3;
  e.gcn_layers = 2;
  e.gcn_dim = 4;
  e.gcn_ff_layers = 1;
  e.gcn_ff_dim = 4;
  e.prune_k = 1;
  e.gcn_dropout = 0.2;
  e.attn_layers = 2;
  e.heads = 2;
  e.model_dim = 4;
  e.kv_dim = 4;
  e.attn_ff_dim = 6;
  e.attention_dropout = 0.1;
  return e;
}

std::vector<GradcheckResult> gradcheck_encoders(std::uint64_t seed) {
  SynthConfig sc = default_synth_config();
  sc.n_train = 3;
  sc.n_val = 0;
  sc.n_test = 0;
  sc.max_pp = 1;
  sc.seed = seed;
  Corpus corpus = generate(sc);
  std::vector<Sentence> batch(corpus.train.begin(), corpus.train.end());
  Vocab vocab = build_vocab(batch, false);

  std::vector<GradcheckResult> results;
  for (EncoderKind kind : {EncoderKind::Cnn, EncoderKind::Bilstm, EncoderKind::Gcn, EncoderKind::Attn}) {
    EncoderModel<double> model(toy_input_config(), toy_encoder_config(kind), vocab, corpus.label_inventory);
    model.init(seed);
    // Push every parameter away from zero (biases start at zero and relu units sit on kinks).
    ad::Rng prng(seed + 3);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& p : model.params()) {
      for (auto& x : p.data) x += u(prng);
    }
    std::vector<int> gold;
    for (const auto& s : batch) gold.push_back(model.label_index(s.relation));
    LossFn loss = [&](Tape& tape) {
      ad::Rng rng(seed + 4);
      std::vector<Var> logits;
      for (const auto& s : batch) {
        logits.push_back(model.classify(tape, model.encode(tape, s, nullptr, ad::Mode::Train, rng), ad::Mode::Train, rng));
      }
      return tape.softmax_cross_entropy(tape.stack_rows(logits), gold);
    };
    results.push_back({std::string(encoder_kind_name(kind)), gradcheck(model.params(), loss),
                       model.params().scalar_count()});
  }
  return results;
}

}  // namespace relprobe
