#pragma once

// Relation-extraction training: hyperparameter presets, the epoch loop with
// best-validation checkpoint selection, and the evaluation metrics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "relprobe/corpus.hpp"
#include "relprobe/encoders.hpp"
#include "relprobe/optim.hpp"

namespace relprobe {

struct PRF {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
};

// Micro-averaged scores with the negative label excluded from the true
// positive, prediction and gold counts. Without a negative label every
// label counts.
PRF micro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
             const std::optional<std::string>& negative_label);

// The nine undirected SemEval-2010 Task 8 relation types.
const std::array<std::string, 9>& semeval_relation_types();

// Per-type scores pool both directions, a true positive needs the exact
// directed label, and the macro average runs over the nine types ("Other"
// only counts against precision/recall of the types). p and r are the macro
// averages of the per-type precision and recall.
PRF macro_f1_directional(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

enum class F1Metric { Micro, MacroDirectional };

F1Metric parse_metric(std::string_view name);
std::string_view metric_name(F1Metric metric);

struct HyperProfile {
  std::string name;
  InputConfig input;
  EncoderConfig encoder;
  OptimizerSpec optimizer;
  ScheduleSpec schedule;
  int epochs = 50;
  size_t batch_size = 50;
  F1Metric metric = F1Metric::Micro;
};

std::vector<std::string> preset_names();
// Named presets (tacred-cnn, ..., semeval-attn, desk-small). desk-small takes
// its encoder kind from `kind` (default cnn); the other presets reject a
// conflicting kind.
HyperProfile preset(std::string_view name, std::optional<EncoderKind> kind = std::nullopt);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_p = 0.0;
  double val_r = 0.0;
  double val_f1 = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

struct TrainOptions {
  std::uint64_t seed = 0;
  const EmbeddingTable* embeddings = nullptr;
  const ContextualStore* contextual = nullptr;
  std::optional<double> early_stop_f1;  // stop once validation F1 reaches this value
  bool validate_on_train = false;       // score the training split instead of validation
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  EncoderModel<float> model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
};

TrainResult train_re(const Corpus& corpus, const HyperProfile& profile, const TrainOptions& options = {});

std::vector<std::string> predict(EncoderModel<float>& model, const std::vector<Sentence>& sentences,
                                 const ContextualStore* contextual = nullptr);

PRF evaluate(EncoderModel<float>& model, const std::vector<Sentence>& sentences, F1Metric metric,
             const std::optional<std::string>& negative_label, const ContextualStore* contextual = nullptr);

void write_history_csv(const std::vector<EpochRecord>& history, std::ostream& out);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace relprobe
