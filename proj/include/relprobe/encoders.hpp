#pragma once

// Input featurization, the sentence encoders and the relation classifier.
//
// Sentences are encoded one at a time (no padding): a batch is a set of
// per-sentence subgraphs on one tape whose logits are stacked for the loss.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "relprobe/autodiff.hpp"
#include "relprobe/checkpoint.hpp"
#include "relprobe/corpus.hpp"
#include "relprobe/deptree.hpp"

namespace relprobe {

enum class EncoderKind { Cnn, Bilstm, Gcn, Attn, Boe };

EncoderKind parse_encoder_kind(std::string_view name);
std::string_view encoder_kind_name(EncoderKind kind);

enum class Activation { Tanh, Relu, Identity };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);

struct InputConfig {
  size_t word_dim = 50;
  size_t offset_dim = 5;  // per argument; 0 disables offset features
  int max_offset = 50;
  bool use_words = true;
  bool use_contextual = false;
  size_t contextual_dim = 0;
  bool masking = false;
  double word_dropout = 0.0;
  double embedding_dropout = 0.0;
  bool tune_embeddings = true;

  size_t width() const;
  friend bool operator==(const InputConfig&, const InputConfig&) = default;
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Cnn;
  // cnn
  std::vector<size_t> filter_sizes = {2, 3, 4, 5};
  size_t filters = 500;
  Activation activation = Activation::Tanh;
  // bilstm
  size_t lstm_layers = 2;
  size_t lstm_hidden = 500;
  double recurrent_dropout = 0.0;
  // gcn
  size_t gcn_layers = 2;
  size_t gcn_dim = 200;
  size_t gcn_ff_layers = 2;
  size_t gcn_ff_dim = 200;
  int prune_k = 1;
  double gcn_dropout = 0.0;
  // attn
  size_t attn_layers = 8;
  size_t heads = 8;
  size_t model_dim = 256;
  size_t kv_dim = 256;
  size_t attn_ff_dim = 512;
  double attention_dropout = 0.1;
  // applied to the sentence representation before the classifier
  double encoder_dropout = 0.0;

  size_t output_dim(size_t input_width) const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void check_config(const InputConfig& in, const EncoderConfig& enc);

nlohmann::ordered_json to_json(const InputConfig& cfg);
nlohmann::ordered_json to_json(const EncoderConfig& cfg);
InputConfig input_config_from_json(const nlohmann::json& j);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Signed offset of every token relative to `span`, 0 inside, clipped to ±max_offset.
std::vector<int> position_offsets(Span span, int length, int max_offset);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static inline const std::string kPadToken = "<pad>";
  static inline const std::string kUnkToken = "<unk>";

  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);  // tokens[0..1] must be pad/unk

  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const { return tokens_[id]; }
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Training tokens in order of first appearance, masked when `masking` is on.
Vocab build_vocab(const std::vector<Sentence>& train, bool masking);

// Attention weights recorded by the attn encoder: [layer][head] -> T x T row-major.
using AttentionTrace = std::vector<std::vector<std::vector<double>>>;

template <typename Real>
class EncoderModel {
 public:
  EncoderModel(InputConfig input, EncoderConfig encoder, Vocab vocab, std::vector<std::string> labels);

  // Seeded initialisation. Word rows come from `table` when it holds the token.
  void init(std::uint64_t seed, const EmbeddingTable* table = nullptr);

  const InputConfig& input_config() const { return input_; }
  const EncoderConfig& encoder_config() const { return encoder_; }
  const Vocab& vocab() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int label_index(const std::string& label) const;
  size_t rep_dim() const { return encoder_.output_dim(input_.width()); }

  ad::ParamStore<Real>& params() { return params_; }
  const ad::ParamStore<Real>& params() const { return params_; }

  // Token ids after masking, without word dropout.
  std::vector<int> token_ids(const Sentence& s) const;

  // T x input_width feature matrix.
  ad::Var embed(ad::Tape<Real>& tape, const Sentence& s, const ContextualStore::Matrix* ctx, ad::Mode mode,
                ad::Rng& rng);
  // 1 x rep_dim sentence representation.
  ad::Var encode(ad::Tape<Real>& tape, const Sentence& s, const ContextualStore::Matrix* ctx, ad::Mode mode,
                 ad::Rng& rng, AttentionTrace* trace = nullptr);
  // Encoder dropout then the linear classifier: 1 x |labels|.
  ad::Var classify(ad::Tape<Real>& tape, ad::Var rep, ad::Mode mode, ad::Rng& rng);

  // Eval-mode conveniences.
  std::vector<Real> represent(const Sentence& s, const ContextualStore::Matrix* ctx = nullptr,
                              AttentionTrace* trace = nullptr);
  std::vector<Real> logits(const Sentence& s, const ContextualStore::Matrix* ctx = nullptr);

 private:
  ad::Var encode_features(ad::Tape<Real>& tape, ad::Var x, const Sentence& s, ad::Mode mode, ad::Rng& rng,
                          AttentionTrace* trace);
  ad::Var cnn(ad::Tape<Real>& tape, ad::Var x);
  ad::Var bilstm(ad::Tape<Real>& tape, ad::Var x, ad::Mode mode, ad::Rng& rng);
  ad::Var gcn(ad::Tape<Real>& tape, ad::Var x, const Sentence& s, ad::Mode mode, ad::Rng& rng);
  ad::Var attn(ad::Tape<Real>& tape, ad::Var x, ad::Mode mode, ad::Rng& rng, AttentionTrace* trace);
  void build_params();

  InputConfig input_;
  EncoderConfig encoder_;
  Vocab vocab_;
  std::vector<std::string> labels_;
  ad::ParamStore<Real> params_;
};

// Encoder graph pieces used by tests: row-normalised (A + I) over the kept
// tokens, with zero rows for pruned tokens.
std::vector<double> gcn_adjacency(const DepTree& tree, const std::vector<int>& kept);

// The label inventory, configs and vocabulary travel in the checkpoint blob.
Checkpoint to_checkpoint(const EncoderModel<float>& model);
EncoderModel<float> from_checkpoint(const Checkpoint& ckpt);
void save_model(const EncoderModel<float>& model, const std::filesystem::path& path);
EncoderModel<float> load_model(const std::filesystem::path& path);

extern template class EncoderModel<float>;
extern template class EncoderModel<double>;

}  // namespace relprobe
