#include "relprobe/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "relprobe/error.hpp"

namespace relprobe {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "cnn") return EncoderKind::Cnn;
  if (name == "bilstm" || name == "lstm") return EncoderKind::Bilstm;
  if (name == "gcn") return EncoderKind::Gcn;
  if (name == "attn" || name == "attention") return EncoderKind::Attn;
  if (name == "boe") return EncoderKind::Boe;
  throw Error("unknown encoder kind: " + std::string(name));
}

std::string_view encoder_kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Cnn: return "cnn";
    case EncoderKind::Bilstm: return "bilstm";
    case EncoderKind::Gcn: return "gcn";
    case EncoderKind::Attn: return "attn";
    case EncoderKind::Boe: return "boe";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity" || name == "linear") return Activation::Identity;
  throw Error("unknown activation: " + std::string(name));
}

std::string_view activation_name(Activation act) {
  switch (act) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

size_t InputConfig::width() const {
  return (use_words ? word_dim : 0) + 2 * offset_dim + (use_contextual ? contextual_dim : 0);
}

size_t EncoderConfig::output_dim(size_t input_width) const {
  switch (kind) {
    case EncoderKind::Cnn: return filters * filter_sizes.size();
    case EncoderKind::Bilstm: return 2 * lstm_hidden;
    case EncoderKind::Gcn: return gcn_ff_layers > 0 ? gcn_ff_dim : 3 * gcn_dim;
    case EncoderKind::Attn: return model_dim;
    case EncoderKind::Boe: return input_width;
  }
  return 0;
}

void check_config(const InputConfig& in, const EncoderConfig& enc) {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) fail(std::string(name) + " must be in [0, 1)");
  };
  if (in.use_words && in.word_dim == 0) fail("word_dim must be positive");
  if (in.max_offset < 1) fail("max_offset must be >= 1");
  if (in.use_contextual && in.contextual_dim == 0) fail("contextual_dim must be positive");
  if (in.width() == 0) fail("empty input features");
  prob(in.word_dropout, "word_dropout");
  prob(in.embedding_dropout, "embedding_dropout");
  prob(enc.encoder_dropout, "encoder_dropout");
  switch (enc.kind) {
    case EncoderKind::Cnn: {
      if (enc.filters == 0 || enc.filter_sizes.empty()) fail("cnn needs filters and filter sizes");
      std::set<size_t> seen;
      for (size_t w : enc.filter_sizes) {
        if (w == 0) fail("filter size must be positive");
        if (!seen.insert(w).second) fail("duplicate filter size " + std::to_string(w));
      }
      break;
    }
    case EncoderKind::Bilstm:
      if (enc.lstm_layers == 0 || enc.lstm_hidden == 0) fail("bilstm needs layers and hidden size");
      prob(enc.recurrent_dropout, "recurrent_dropout");
      break;
    case EncoderKind::Gcn:
      if (enc.gcn_layers == 0 || enc.gcn_dim == 0) fail("gcn needs layers and dim");
      if (enc.gcn_ff_layers > 0 && enc.gcn_ff_dim == 0) fail("gcn_ff_dim must be positive");
      if (enc.prune_k < kUnboundedK) fail("prune_k must be >= -1");
      prob(enc.gcn_dropout, "gcn_dropout");
      break;
    case EncoderKind::Attn:
      if (enc.attn_layers == 0 || enc.heads == 0 || enc.model_dim == 0 || enc.attn_ff_dim == 0) {
        fail("attn needs layers, heads, model_dim and attn_ff_dim");
      }
      if (enc.kv_dim == 0 || enc.kv_dim % enc.heads != 0) fail("kv_dim must be a positive multiple of heads");
      prob(enc.attention_dropout, "attention_dropout");
      break;
    case EncoderKind::Boe:
      break;
  }
}

ojson to_json(const InputConfig& c) {
  ojson j;
  j["word_dim"] = c.word_dim;
  j["offset_dim"] = c.offset_dim;
  j["max_offset"] = c.max_offset;
  j["use_words"] = c.use_words;
  j["use_contextual"] = c.use_contextual;
  j["contextual_dim"] = c.contextual_dim;
  j["masking"] = c.masking;
  j["word_dropout"] = c.word_dropout;
  j["embedding_dropout"] = c.embedding_dropout;
  j["tune_embeddings"] = c.tune_embeddings;
  return j;
}

ojson to_json(const EncoderConfig& c) {
  ojson j;
  j["kind"] = encoder_kind_name(c.kind);
  j["filter_sizes"] = c.filter_sizes;
  j["filters"] = c.filters;
  j["activation"] = activation_name(c.activation);
  j["lstm_layers"] = c.lstm_layers;
  j["lstm_hidden"] = c.lstm_hidden;
  j["recurrent_dropout"] = c.recurrent_dropout;
  j["gcn_layers"] = c.gcn_layers;
  j["gcn_dim"] = c.gcn_dim;
  j["gcn_ff_layers"] = c.gcn_ff_layers;
  j["gcn_ff_dim"] = c.gcn_ff_dim;
  j["prune_k"] = c.prune_k;
  j["gcn_dropout"] = c.gcn_dropout;
  j["attn_layers"] = c.attn_layers;
  j["heads"] = c.heads;
  j["model_dim"] = c.model_dim;
  j["kv_dim"] = c.kv_dim;
  j["attn_ff_dim"] = c.attn_ff_dim;
  j["attention_dropout"] = c.attention_dropout;
  j["encoder_dropout"] = c.encoder_dropout;
  return j;
}

InputConfig input_config_from_json(const json& j) {
  InputConfig c;
  c.word_dim = j.value("word_dim", c.word_dim);
  c.offset_dim = j.value("offset_dim", c.offset_dim);
  c.max_offset = j.value("max_offset", c.max_offset);
  c.use_words = j.value("use_words", c.use_words);
  c.use_contextual = j.value("use_contextual", c.use_contextual);
  c.contextual_dim = j.value("contextual_dim", c.contextual_dim);
  c.masking = j.value("masking", c.masking);
  c.word_dropout = j.value("word_dropout", c.word_dropout);
  c.embedding_dropout = j.value("embedding_dropout", c.embedding_dropout);
  c.tune_embeddings = j.value("tune_embeddings", c.tune_embeddings);
  return c;
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.kind = parse_encoder_kind(j.value("kind", std::string("cnn")));
  c.filter_sizes = j.value("filter_sizes", c.filter_sizes);
  c.filters = j.value("filters", c.filters);
  c.activation = parse_activation(j.value("activation", std::string("tanh")));
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.recurrent_dropout = j.value("recurrent_dropout", c.recurrent_dropout);
  c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
  c.gcn_dim = j.value("gcn_dim", c.gcn_dim);
  c.gcn_ff_layers = j.value("gcn_ff_layers", c.gcn_ff_layers);
  c.gcn_ff_dim = j.value("gcn_ff_dim", c.gcn_ff_dim);
  c.prune_k = j.value("prune_k", c.prune_k);
  c.gcn_dropout = j.value("gcn_dropout", c.gcn_dropout);
  c.attn_layers = j.value("attn_layers", c.attn_layers);
  c.heads = j.value("heads", c.heads);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.kv_dim = j.value("kv_dim", c.kv_dim);
  c.attn_ff_dim = j.value("attn_ff_dim", c.attn_ff_dim);
  c.attention_dropout = j.value("attention_dropout", c.attention_dropout);
  c.encoder_dropout = j.value("encoder_dropout", c.encoder_dropout);
  return c;
}

std::vector<int> position_offsets(Span span, int length, int max_offset) {
  std::vector<int> out(static_cast<size_t>(std::max(length, 0)));
  for (int i = 0; i < length; ++i) {
    int off = i < span.start ? i - span.start : (i > span.end ? i - span.end : 0);
    out[i] = std::clamp(off, -max_offset, max_offset);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  add(kPadToken);
  add(kUnkToken);
}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw Error("vocabulary must start with " + kPadToken + " and " + kUnkToken);
  }
  for (const auto& t : tokens) {
    if (index_.count(t)) throw Error("duplicate vocabulary entry " + t);
    add(t);
  }
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

Vocab build_vocab(const std::vector<Sentence>& train, bool masking) {
  Vocab v;
  for (const auto& s : train) {
    const Sentence& src = masking ? mask_entities(s) : s;
    for (const auto& t : src.tokens) v.add(t);
  }
  return v;
}

std::vector<double> gcn_adjacency(const DepTree& tree, const std::vector<int>& kept) {
  const int n = tree.size();
  std::vector<char> keep(n, 0);
  for (int i : kept) keep[i] = 1;
  std::vector<double> a(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    std::vector<int> nb{i};
    if (tree.parent[i] >= 0 && keep[tree.parent[i]]) nb.push_back(tree.parent[i]);
    for (int c : tree.children[i]) {
      if (keep[c]) nb.push_back(c);
    }
    for (int j : nb) a[static_cast<size_t>(i) * n + j] = 1.0 / static_cast<double>(nb.size());
  }
  return a;
}

// ---------------------------------------------------------------------------
// EncoderModel

template <typename Real>
EncoderModel<Real>::EncoderModel(InputConfig input, EncoderConfig encoder, Vocab vocab, std::vector<std::string> labels)
    : input_(input), encoder_(std::move(encoder)), vocab_(std::move(vocab)), labels_(std::move(labels)) {
  check_config(input_, encoder_);
  if (labels_.empty()) throw Error("model needs at least one relation label");
  build_params();
}

template <typename Real>
void EncoderModel<Real>::build_params() {
  const size_t width = input_.width();
  if (input_.use_words) {
    params_.add("embed.word", {vocab_.size(), input_.word_dim}).trainable = input_.tune_embeddings;
  }
  if (input_.offset_dim > 0) {
    const size_t rows = 2 * static_cast<size_t>(input_.max_offset) + 1;
    params_.add("embed.head_offset", {rows, input_.offset_dim});
    params_.add("embed.tail_offset", {rows, input_.offset_dim});
  }
  const auto& e = encoder_;
  switch (e.kind) {
    case EncoderKind::Cnn:
      for (size_t w : e.filter_sizes) {
        const std::string base = "cnn.conv" + std::to_string(w);
        params_.add(base + ".weight", {w * width, e.filters});
        params_.add(base + ".bias", {e.filters});
      }
      break;
    case EncoderKind::Bilstm:
      for (size_t l = 0; l < e.lstm_layers; ++l) {
        const size_t in = l == 0 ? width : 2 * e.lstm_hidden;
        for (const char* dir : {"fwd", "bwd"}) {
          const std::string base = "bilstm.l" + std::to_string(l) + "." + dir;
          params_.add(base + ".weight", {in + e.lstm_hidden, 4 * e.lstm_hidden});
          params_.add(base + ".bias", {4 * e.lstm_hidden});
        }
      }
      break;
    case EncoderKind::Gcn: {
      for (size_t l = 0; l < e.gcn_layers; ++l) {
        const std::string base = "gcn.l" + std::to_string(l);
        params_.add(base + ".weight", {l == 0 ? width : e.gcn_dim, e.gcn_dim});
        params_.add(base + ".bias", {e.gcn_dim});
      }
      size_t in = 3 * e.gcn_dim;
      for (size_t k = 0; k < e.gcn_ff_layers; ++k) {
        const std::string base = "gcn.ff" + std::to_string(k);
        params_.add(base + ".weight", {in, e.gcn_ff_dim});
        params_.add(base + ".bias", {e.gcn_ff_dim});
        in = e.gcn_ff_dim;
      }
      break;
    }
    case EncoderKind::Attn:
      params_.add("attn.input.weight", {width, e.model_dim});
      params_.add("attn.input.bias", {e.model_dim});
      for (size_t l = 0; l < e.attn_layers; ++l) {
        const std::string base = "attn.l" + std::to_string(l);
        params_.add(base + ".query.weight", {e.model_dim, e.kv_dim});
        params_.add(base + ".key.weight", {e.model_dim, e.kv_dim});
        params_.add(base + ".value.weight", {e.model_dim, e.kv_dim});
        params_.add(base + ".out.weight", {e.kv_dim, e.model_dim});
        params_.add(base + ".out.bias", {e.model_dim});
        params_.add(base + ".norm1.gain", {e.model_dim});
        params_.add(base + ".norm1.bias", {e.model_dim});
        params_.add(base + ".ff1.weight", {e.model_dim, e.attn_ff_dim});
        params_.add(base + ".ff1.bias", {e.attn_ff_dim});
        params_.add(base + ".ff2.weight", {e.attn_ff_dim, e.model_dim});
        params_.add(base + ".ff2.bias", {e.model_dim});
        params_.add(base + ".norm2.gain", {e.model_dim});
        params_.add(base + ".norm2.bias", {e.model_dim});
      }
      break;
    case EncoderKind::Boe:
      break;
  }
  params_.add("classifier.weight", {rep_dim(), labels_.size()});
  params_.add("classifier.bias", {labels_.size()});
}

template <typename Real>
void EncoderModel<Real>::init(std::uint64_t seed, const EmbeddingTable* table) {
  ad::Rng rng(seed);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  if (table && input_.use_words && table->dim() != input_.word_dim) {
    throw Error("embedding table has dimension " + std::to_string(table->dim()) + ", model expects " +
                std::to_string(input_.word_dim));
  }
  for (auto& p : params_) {
    const std::string& name = p.name;
    if (name == "embed.word") {
      const size_t d = p.cols();
      for (size_t r = 0; r < p.rows(); ++r) {
        Real* row = p.data.data() + r * d;
        const std::string& tok = vocab_.token(static_cast<int>(r));
        if (r == static_cast<size_t>(Vocab::kPad)) {
          std::fill(row, row + d, Real(0));
        } else if (table && r == static_cast<size_t>(Vocab::kUnk)) {
          std::copy(table->unk_vector().begin(), table->unk_vector().end(), row);
          for (size_t j = 0; j < d; ++j) small(rng);  // keep the stream aligned
        } else if (table && table->contains(tok)) {
          auto v = table->lookup(tok);
          std::copy(v.begin(), v.end(), row);
          for (size_t j = 0; j < d; ++j) small(rng);
        } else {
          for (size_t j = 0; j < d; ++j) row[j] = static_cast<Real>(small(rng));
        }
      }
    } else if (name.starts_with("embed.")) {
      for (auto& x : p.data) x = static_cast<Real>(small(rng));
    } else if (name.ends_with(".gain")) {
      std::fill(p.data.begin(), p.data.end(), Real(1));
    } else if (name.ends_with(".bias")) {
      std::fill(p.data.begin(), p.data.end(), Real(0));
      if (name.starts_with("bilstm.")) {
        const size_t h = p.size() / 4;
        std::fill(p.data.begin() + static_cast<long>(h), p.data.begin() + static_cast<long>(2 * h), Real(1));
      }
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(p.rows() + p.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& x : p.data) x = static_cast<Real>(u(rng));
    }
    std::fill(p.grad.begin(), p.grad.end(), Real(0));
  }
}

template <typename Real>
int EncoderModel<Real>::label_index(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw Error("relation label not known to the model: " + label);
  return static_cast<int>(it - labels_.begin());
}

template <typename Real>
std::vector<int> EncoderModel<Real>::token_ids(const Sentence& s) const {
  std::vector<int> ids;
  ids.reserve(s.tokens.size());
  if (input_.masking) {
    for (const auto& t : mask_entities(s).tokens) ids.push_back(vocab_.id(t));
  } else {
    for (const auto& t : s.tokens) ids.push_back(vocab_.id(t));
  }
  return ids;
}

template <typename Real>
ad::Var EncoderModel<Real>::embed(ad::Tape<Real>& tape, const Sentence& s, const ContextualStore::Matrix* ctx,
                                  ad::Mode mode, ad::Rng& rng) {
  const int t = s.size();
  if (t == 0) throw Error("cannot encode empty sentence " + s.id);
  std::vector<ad::Var> parts;
  if (input_.use_words) {
    auto ids = token_ids(s);
    if (mode == ad::Mode::Train && input_.word_dropout > 0) {
      std::bernoulli_distribution drop(input_.word_dropout);
      for (auto& id : ids) {
        if (drop(rng)) id = Vocab::kUnk;
      }
    }
    parts.push_back(tape.gather(params_["embed.word"], ids));
  }
  if (input_.offset_dim > 0) {
    for (auto [span, name] : {std::pair{s.head, "embed.head_offset"}, std::pair{s.tail, "embed.tail_offset"}}) {
      auto off = position_offsets(span, t, input_.max_offset);
      for (auto& o : off) o += input_.max_offset;
      parts.push_back(tape.gather(params_[name], off));
    }
  }
  if (input_.use_contextual) {
    if (!ctx) throw Error("missing contextual vectors for sentence " + s.id);
    if (ctx->rows != static_cast<size_t>(t) || ctx->cols != input_.contextual_dim) {
      throw Error("contextual vectors for sentence " + s.id + " are " + std::to_string(ctx->rows) + "x" +
                  std::to_string(ctx->cols) + ", expected " + std::to_string(t) + "x" +
                  std::to_string(input_.contextual_dim));
    }
    parts.push_back(tape.input(ctx->rows, ctx->cols, std::vector<Real>(ctx->data.begin(), ctx->data.end())));
  }
  ad::Var x = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
  return tape.dropout(x, input_.embedding_dropout, mode, rng);
}

template <typename Real>
ad::Var EncoderModel<Real>::encode(ad::Tape<Real>& tape, const Sentence& s, const ContextualStore::Matrix* ctx,
                                   ad::Mode mode, ad::Rng& rng, AttentionTrace* trace) {
  ad::Var x = embed(tape, s, ctx, mode, rng);
  return encode_features(tape, x, s, mode, rng, trace);
}

template <typename Real>
ad::Var EncoderModel<Real>::encode_features(ad::Tape<Real>& tape, ad::Var x, const Sentence& s, ad::Mode mode,
                                            ad::Rng& rng, AttentionTrace* trace) {
  switch (encoder_.kind) {
    case EncoderKind::Cnn: return cnn(tape, x);
    case EncoderKind::Bilstm: return bilstm(tape, x, mode, rng);
    case EncoderKind::Gcn: return gcn(tape, x, s, mode, rng);
    case EncoderKind::Attn: return attn(tape, x, mode, rng, trace);
    case EncoderKind::Boe: return tape.sum_rows(x);
  }
  throw Error("unreachable encoder kind");
}

template <typename Real>
ad::Var EncoderModel<Real>::cnn(ad::Tape<Real>& tape, ad::Var x) {
  std::vector<ad::Var> pooled;
  for (size_t w : encoder_.filter_sizes) {
    const std::string base = "cnn.conv" + std::to_string(w);
    ad::Var h = tape.matmul(tape.unfold(x, w), tape.param(params_[base + ".weight"]));
    h = tape.add_bias(h, tape.param(params_[base + ".bias"]));
    switch (encoder_.activation) {
      case Activation::Tanh: h = tape.tanh(h); break;
      case Activation::Relu: h = tape.relu(h); break;
      case Activation::Identity: break;
    }
    pooled.push_back(tape.max_over_time(h));
  }
  return pooled.size() == 1 ? pooled[0] : tape.concat_cols(pooled);
}

template <typename Real>
ad::Var EncoderModel<Real>::bilstm(ad::Tape<Real>& tape, ad::Var x, ad::Mode mode, ad::Rng& rng) {
  const size_t h = encoder_.lstm_hidden;
  const size_t t = tape.rows(x);
  const bool recurrent_drop = mode == ad::Mode::Train && encoder_.recurrent_dropout > 0;
  ad::Var seq = x;
  for (size_t l = 0; l < encoder_.lstm_layers; ++l) {
    std::vector<ad::Var> outputs;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = "bilstm.l" + std::to_string(l) + "." + dir;
      ad::Var w = tape.param(params_[base + ".weight"]);
      ad::Var b = tape.param(params_[base + ".bias"]);
      std::vector<Real> drop_mask;
      if (recurrent_drop) {
        // one mask per sequence on the hidden half of the state
        const Real keep_scale = static_cast<Real>(1.0 / (1.0 - encoder_.recurrent_dropout));
        std::bernoulli_distribution keep(1.0 - encoder_.recurrent_dropout);
        drop_mask.assign(2 * h, Real(1));
        for (size_t j = 0; j < h; ++j) drop_mask[j] = keep(rng) ? keep_scale : Real(0);
      }
      const bool forward = dir[0] == 'f';
      ad::Var state = tape.input(1, 2 * h, std::vector<Real>(2 * h, Real(0)));
      std::vector<ad::Var> hs(t);
      for (size_t step = 0; step < t; ++step) {
        const size_t i = forward ? step : t - 1 - step;
        ad::Var in = state;
        if (recurrent_drop) in = tape.mask(state, drop_mask, "recurrent_dropout");
        state = tape.lstm_cell(tape.slice_rows(seq, i, i + 1), in, w, b);
        hs[i] = tape.slice_cols(state, 0, h);
      }
      outputs.push_back(t == 1 ? hs[0] : tape.stack_rows(hs));
    }
    seq = tape.concat_cols(outputs);
  }
  return tape.max_over_time(seq);
}

template <typename Real>
ad::Var EncoderModel<Real>::gcn(ad::Tape<Real>& tape, ad::Var x, const Sentence& s, ad::Mode mode, ad::Rng& rng) {
  const DepTree tree = build_tree(s.dep_head);
  const SdpResult path = sdp(tree, s.head, s.tail);
  const std::vector<int> kept = prune(tree, path, encoder_.prune_k);
  if (kept.empty()) throw Error("gcn: pruning left no tokens in sentence " + s.id);
  const size_t n = static_cast<size_t>(tree.size());
  auto adj = gcn_adjacency(tree, kept);
  ad::Var a = tape.input(n, n, std::vector<Real>(adj.begin(), adj.end()));
  ad::Var h = x;
  for (size_t l = 0; l < encoder_.gcn_layers; ++l) {
    const std::string base = "gcn.l" + std::to_string(l);
    h = tape.matmul(a, tape.matmul(h, tape.param(params_[base + ".weight"])));
    h = tape.relu(tape.add_bias(h, tape.param(params_[base + ".bias"])));
    if (l + 1 < encoder_.gcn_layers) h = tape.dropout(h, encoder_.gcn_dropout, mode, rng);
  }
  auto span_kept = [&](Span span) {
    std::vector<int> out;
    for (int i : kept) {
      if (span.contains(i)) out.push_back(i);
    }
    if (out.empty()) throw Error("gcn: argument span pruned away in sentence " + s.id);
    return out;
  };
  ad::Var rep = tape.concat_cols({tape.max_rows(h, kept), tape.max_rows(h, span_kept(s.head)),
                                  tape.max_rows(h, span_kept(s.tail))});
  for (size_t k = 0; k < encoder_.gcn_ff_layers; ++k) {
    const std::string base = "gcn.ff" + std::to_string(k);
    rep = tape.matmul(rep, tape.param(params_[base + ".weight"]));
    rep = tape.relu(tape.add_bias(rep, tape.param(params_[base + ".bias"])));
  }
  return rep;
}

template <typename Real>
ad::Var EncoderModel<Real>::attn(ad::Tape<Real>& tape, ad::Var x, ad::Mode mode, ad::Rng& rng,
                                 AttentionTrace* trace) {
  const auto& e = encoder_;
  const size_t t = tape.rows(x);
  const size_t dk = e.kv_dim / e.heads;
  const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
  auto P = [&](const std::string& name) { return tape.param(params_[name]); };
  if (trace) trace->assign(e.attn_layers, {});
  ad::Var h = tape.add_bias(tape.matmul(x, P("attn.input.weight")), P("attn.input.bias"));
  for (size_t l = 0; l < e.attn_layers; ++l) {
    const std::string base = "attn.l" + std::to_string(l);
    ad::Var q = tape.matmul(h, P(base + ".query.weight"));
    ad::Var k = tape.matmul(h, P(base + ".key.weight"));
    ad::Var v = tape.matmul(h, P(base + ".value.weight"));
    std::vector<ad::Var> heads;
    for (size_t i = 0; i < e.heads; ++i) {
      const size_t lo = i * dk, hi = lo + dk;
      ad::Var scores = tape.scale(tape.matmul(tape.slice_cols(q, lo, hi), tape.transpose(tape.slice_cols(k, lo, hi))),
                                  inv_sqrt);
      ad::Var weights = tape.softmax_rows(scores);
      if (trace) {
        auto w = tape.value(weights);
        (*trace)[l].emplace_back(w.begin(), w.end());
      }
      weights = tape.dropout(weights, e.attention_dropout, mode, rng);
      heads.push_back(tape.matmul(weights, tape.slice_cols(v, lo, hi)));
    }
    ad::Var mixed = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
    ad::Var out = tape.add_bias(tape.matmul(mixed, P(base + ".out.weight")), P(base + ".out.bias"));
    h = tape.layer_norm(tape.add(h, out), P(base + ".norm1.gain"), P(base + ".norm1.bias"));
    ad::Var ff = tape.relu(tape.add_bias(tape.matmul(h, P(base + ".ff1.weight")), P(base + ".ff1.bias")));
    ff = tape.add_bias(tape.matmul(ff, P(base + ".ff2.weight")), P(base + ".ff2.bias"));
    h = tape.layer_norm(tape.add(h, ff), P(base + ".norm2.gain"), P(base + ".norm2.bias"));
  }
  return tape.slice_rows(h, t - 1, t);
}

template <typename Real>
ad::Var EncoderModel<Real>::classify(ad::Tape<Real>& tape, ad::Var rep, ad::Mode mode, ad::Rng& rng) {
  ad::Var r = tape.dropout(rep, encoder_.encoder_dropout, mode, rng);
  ad::Var z = tape.matmul(r, tape.param(params_["classifier.weight"]));
  return tape.add_bias(z, tape.param(params_["classifier.bias"]));
}

template <typename Real>
std::vector<Real> EncoderModel<Real>::represent(const Sentence& s, const ContextualStore::Matrix* ctx,
                                                AttentionTrace* trace) {
  ad::Tape<Real> tape;
  ad::Rng rng(0);
  ad::Var rep = encode(tape, s, ctx, ad::Mode::Eval, rng, trace);
  auto v = tape.value(rep);
  return {v.begin(), v.end()};
}

template <typename Real>
std::vector<Real> EncoderModel<Real>::logits(const Sentence& s, const ContextualStore::Matrix* ctx) {
  ad::Tape<Real> tape;
  ad::Rng rng(0);
  ad::Var z = classify(tape, encode(tape, s, ctx, ad::Mode::Eval, rng), ad::Mode::Eval, rng);
  auto v = tape.value(z);
  return {v.begin(), v.end()};
}

template class EncoderModel<float>;
template class EncoderModel<double>;

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint to_checkpoint(const EncoderModel<float>& model) {
  Checkpoint ckpt;
  for (const auto& p : model.params()) {
    CheckpointTensor t;
    t.name = p.name;
    t.dims.assign(p.shape.begin(), p.shape.end());
    t.data = p.data;
    ckpt.tensors.push_back(std::move(t));
  }
  ojson blob;
  blob["format"] = "relprobe-model";
  blob["input"] = to_json(model.input_config());
  blob["encoder"] = to_json(model.encoder_config());
  blob["labels"] = model.labels();
  blob["vocab"] = model.vocab().tokens();
  ckpt.blob = blob.dump();
  return ckpt;
}

EncoderModel<float> from_checkpoint(const Checkpoint& ckpt) {
  json blob;
  try {
    blob = json::parse(ckpt.blob);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint config blob is not valid JSON: ") + e.what());
  }
  if (blob.value("format", std::string()) != "relprobe-model") throw Error("checkpoint does not hold a relprobe model");
  EncoderModel<float> model(input_config_from_json(blob.at("input")), encoder_config_from_json(blob.at("encoder")),
                            Vocab(blob.at("vocab").get<std::vector<std::string>>()),
                            blob.at("labels").get<std::vector<std::string>>());
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  if (by_name.size() != model.params().size()) {
    throw Error("checkpoint has " + std::to_string(by_name.size()) + " tensors, model config expects " +
                std::to_string(model.params().size()));
  }
  for (auto& p : model.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error("checkpoint is missing tensor " + p.name);
    const auto& t = *it->second;
    if (!std::equal(t.dims.begin(), t.dims.end(), p.shape.begin(), p.shape.end())) {
      throw Error("checkpoint tensor " + p.name + " has a shape that does not match the model config");
    }
    p.data = t.data;
  }
  return model;
}

void save_model(const EncoderModel<float>& model, const std::filesystem::path& path) {
  write_checkpoint(to_checkpoint(model), path);
}

EncoderModel<float> load_model(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

}  // namespace relprobe
