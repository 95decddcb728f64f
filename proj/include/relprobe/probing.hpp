#pragma once

// Frozen-encoder representations, baselines, logistic-regression probes and
// the suite runner.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relprobe/corpus.hpp"
#include "relprobe/encoders.hpp"
#include "relprobe/probegen.hpp"

namespace relprobe {

class RepMatrix {
 public:
  RepMatrix() = default;
  RepMatrix(size_t dim, std::string source = {}) : dim_(dim), source_(std::move(source)) {}

  void append(const std::string& id, std::span<const float> row);

  size_t rows() const { return ids_.size(); }
  size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& data() const { return data_; }
  std::span<const float> row(size_t i) const { return {data_.data() + i * dim_, dim_}; }
  // Row index of `id`, or nullopt.
  std::optional<size_t> find(const std::string& id) const;

  const std::string& source() const { return source_; }
  void set_source(std::string s) { source_ = std::move(s); }

  friend bool operator==(const RepMatrix& a, const RepMatrix& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, size_t> index_;
  std::string source_;
};

inline constexpr std::uint32_t kRepMatrixVersion = 1;

void write_reps(const RepMatrix& reps, std::ostream& out);
void write_reps(const RepMatrix& reps, const std::filesystem::path& path);
RepMatrix read_reps(std::istream& in);
RepMatrix read_reps(const std::filesystem::path& path);
// FNV-1a of the serialized matrix.
std::uint64_t reps_hash(const RepMatrix& reps);

// Sentences of the named split, or of all splits for nullopt.
std::vector<Sentence> select_split(const Corpus& corpus, std::optional<Split> split);
// Content hash of sentences (ids, tokens, annotations, spans, labels).
std::uint64_t sentences_hash(const std::vector<Sentence>& sentences);

// Eval-mode representations, one row per sentence in order. `jobs` threads
// encode disjoint sentences; the result does not depend on `jobs`.
RepMatrix extract_reps(EncoderModel<float>& model, const std::vector<Sentence>& sentences,
                       const ContextualStore* contextual = nullptr, size_t jobs = 1);

// Loads the checkpoint and extracts, reusing `cache_dir/<ckpt>-<split>-<content>.repr`
// when present. An empty cache_dir disables caching.
RepMatrix extract_reps_cached(const std::filesystem::path& checkpoint, const Corpus& corpus,
                              std::optional<Split> split, const ContextualStore* contextual,
                              const std::filesystem::path& cache_dir, size_t jobs = 1);

enum class BaselineKind { Length, ArgDist, Boe };

BaselineKind parse_baseline(std::string_view name);
std::string_view baseline_name(BaselineKind kind);

// length -> [T]; argdist -> [tokens between the spans]; boe -> sum of the
// (unmasked) token vectors, unknown tokens taking the table's unk vector.
std::vector<float> baseline_features(BaselineKind kind, const Sentence& s, const EmbeddingTable* table = nullptr);
RepMatrix baseline_reps(BaselineKind kind, const std::vector<Sentence>& sentences,
                        const EmbeddingTable* table = nullptr);

std::vector<double> default_l2_grid();

struct ProbeOptions {
  std::vector<double> grid = default_l2_grid();
  int max_epochs = 500;
  double tolerance = 1e-6;  // stop when the full-batch loss changes less than this
  double lr = 0.3;
  bool standardize = false;  // z-score features with training statistics
  std::uint64_t init_seed = 0;  // 0: zero initialisation, otherwise seeded uniform
};

// Multinomial logistic regression with an l2 penalty (lambda/2)*|W|^2 on the
// weights, fitted full batch with Adam in double precision.
struct ProbeModel {
  size_t dim = 0;
  size_t classes = 0;
  std::vector<double> weight;  // dim x classes
  std::vector<double> bias;
  std::vector<double> mean;  // standardisation, empty when off
  std::vector<double> scale;
  double final_loss = 0.0;
  int epochs = 0;

  std::vector<int> predict(const std::vector<double>& x, size_t n) const;
};

ProbeModel fit_probe(const std::vector<double>& x, size_t n, size_t dim, const std::vector<int>& y, size_t classes,
                     double l2, const ProbeOptions& options);

double accuracy(const std::vector<int>& pred, const std::vector<int>& gold);

struct ProbeResult {
  std::string source;
  TaskId task = TaskId::SentLen;
  double chosen_l2 = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> grid_val_accuracy;  // aligned with the grid
};

// Grid search over options.grid on the validation split; ties go to the smaller l2.
ProbeResult train_probe(const RepMatrix& reps, const ProbingDataset& task, const ProbeOptions& options = {});

struct SuiteSource {
  std::string name;
  const RepMatrix* reps = nullptr;
};

struct SuiteResult {
  std::vector<std::string> sources;
  std::vector<std::string> tasks;
  std::vector<ProbeResult> results;  // row-major: sources x tasks

  const ProbeResult& at(size_t source, size_t task) const { return results[source * tasks.size() + task]; }
};

// Fits every (source, task, l2) triple on a pool of `jobs` threads (0: all
// cores). Output does not depend on `jobs`.
SuiteResult run_suite(const std::vector<SuiteSource>& sources, const std::vector<ProbingDataset>& tasks,
                      const ProbeOptions& options = {}, size_t jobs = 1);

// source,<task...> with test accuracies.
void write_suite_csv(const SuiteResult& result, std::ostream& out);
// source,task,chosen_l2,val_accuracy,test_accuracy
void write_suite_long_csv(const SuiteResult& result, std::ostream& out);
SuiteResult read_suite_long_csv(std::istream& in);
// Aligned plain-text table of test accuracies (percent, one decimal).
std::string render_table(const SuiteResult& result);

}  // namespace relprobe
