#pragma once

// Annotated relation-extraction corpora: data model, loading, validation,
// entity masking, word embeddings and precomputed contextual vectors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace relprobe {

// Token span, 0-based and inclusive on both ends.
struct Span {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int i) const { return i >= start && i <= end; }
  friend bool operator==(const Span&, const Span&) = default;
};

inline bool overlaps(Span a, Span b) { return a.start <= b.end && b.start <= a.end; }

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<std::string> ner;  // "O" marks a non-entity token
  std::vector<int> dep_head;     // 1-based parent index, 0 for the root token
  std::vector<std::string> dep_label;
  Span head;
  Span tail;
  std::string relation;

  int size() const { return static_cast<int>(tokens.size()); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

enum class Split { Train, Validation, Test };

inline constexpr Split kAllSplits[] = {Split::Train, Split::Validation, Split::Test};

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Corpus {
  std::vector<Sentence> train;
  std::vector<Sentence> validation;
  std::vector<Sentence> test;
  std::vector<std::string> label_inventory;  // sorted distinct train relations
  std::optional<std::string> negative_label;

  const std::vector<Sentence>& split(Split s) const;
  std::vector<Sentence>& split(Split s);
  size_t size() const { return train.size() + validation.size() + test.size(); }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class CorpusFormat { TacredJson, GenericJsonl };

CorpusFormat parse_corpus_format(std::string_view name);

struct LoadOptions {
  // Negative relation label. When unset, "no_relation" or "Other" is picked
  // up if it occurs in the training split.
  std::optional<std::string> negative_label;
  // When the source has no validation split, move this fraction of the
  // (seeded-shuffled) training records into validation.
  double holdout_fraction = 0.0;
  std::uint64_t holdout_seed = 0;
};

// Loads a corpus. For generic-jsonl, `path` is either one file whose records
// carry an optional "split" field (train|val|test, default train) or a
// directory holding train.jsonl / dev.jsonl or val.jsonl / test.jsonl. For
// tacred-json, `path` is a directory with train.json / dev.json / test.json
// or a single array file that becomes the training split.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   const LoadOptions& options = {});

// Parses generic-jsonl records from a stream; `source` names the stream in errors.
Corpus read_corpus_jsonl(std::istream& in, const LoadOptions& options = {},
                         std::string_view source = "<stream>");

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out);
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

// Validates every sentence and cross-split constraints, fills the label
// inventory and negative label, and applies the validation holdout.
// Throws Error naming the offending sentence.
void finalize_corpus(Corpus& corpus, const LoadOptions& options = {});

// Returns human-readable invariant violations; empty iff the sentence is valid.
std::vector<std::string> validate_sentence(const Sentence& s);

// Replaces head tokens with "SUBJ-<TYPE>" and tail tokens with "OBJ-<TYPE>",
// where <TYPE> is the NE tag of the span's root token. Length preserving.
Sentence mask_entities(const Sentence& s);

bool is_mask_token(std::string_view token);

struct CorpusStats {
  size_t train = 0;
  size_t validation = 0;
  size_t test = 0;
  size_t labels = 0;
  double negative_fraction = 0.0;  // over all splits; 0 without a negative label
  double mean_length = 0.0;
};

CorpusStats corpus_stats(const Corpus& corpus);

// Word vectors loaded from a whitespace-separated text file. Lookup is total:
// absent tokens map to the unknown vector (mean of all stored vectors).
class EmbeddingTable {
 public:
  explicit EmbeddingTable(size_t dim = 0);

  size_t dim() const { return dim_; }
  size_t size() const { return index_.size(); }

  void add(const std::string& token, std::span<const float> vector);
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::span<const float> lookup(const std::string& token) const;
  const std::vector<float>& unk_vector() const { return unk_; }
  const std::vector<float>& pad_vector() const { return pad_; }
  // Tokens in insertion order.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  size_t dim_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<float> data_;
  std::vector<double> sum_;
  std::vector<float> unk_;
  std::vector<float> pad_;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path, size_t dim);
EmbeddingTable read_embeddings(std::istream& in, size_t dim, std::string_view source = "<stream>");
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// Per-token vectors computed by an external contextual model, keyed by sentence id.
class ContextualStore {
 public:
  struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<float> data;  // row-major
  };

  void insert(const std::string& id, Matrix m);
  const Matrix* find(const std::string& id) const;
  size_t size() const { return entries_.size(); }
  const std::map<std::string, Matrix>& entries() const { return entries_; }

  // Row count must equal the sentence length for every sentence that has vectors.
  void check_against(const Corpus& corpus) const;

 private:
  std::map<std::string, Matrix> entries_;
};

ContextualStore load_contextual(const std::filesystem::path& path);
ContextualStore read_contextual(std::istream& in);
void write_contextual(const ContextualStore& store, std::ostream& out);
void write_contextual(const ContextualStore& store, const std::filesystem::path& path);

}  // namespace relprobe
