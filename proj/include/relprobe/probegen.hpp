#pragma once

// The 14 probing tasks: label extraction from annotations, quantile binning
// and dataset construction.

#include <array>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "relprobe/corpus.hpp"
#include "relprobe/deptree.hpp"

namespace relprobe {

enum class TaskId {
  SentLen,
  ArgDist,
  EntExist,
  TreeDepth,
  SDPTreeDepth,
  ArgOrd,
  PosHeadL,
  PosHeadR,
  PosTailL,
  PosTailR,
  TypeHead,
  TypeTail,
  GRHead,
  GRTail,
};

inline constexpr std::array<TaskId, 14> kAllTasks = {
    TaskId::SentLen,  TaskId::ArgDist,  TaskId::EntExist, TaskId::TreeDepth, TaskId::SDPTreeDepth,
    TaskId::ArgOrd,   TaskId::PosHeadL, TaskId::PosHeadR, TaskId::PosTailL,  TaskId::PosTailR,
    TaskId::TypeHead, TaskId::TypeTail, TaskId::GRHead,   TaskId::GRTail,
};

std::string_view task_name(TaskId task);
TaskId parse_task(std::string_view name);
bool is_binned(TaskId task);

inline constexpr int kMaxTreeDepth = 15;
inline constexpr long kUnbounded = std::numeric_limits<long>::max();

// Bins over non-negative integers. boundaries[i] is the inclusive upper bound
// of bin i; the last boundary is kUnbounded.
struct BinSpec {
  std::vector<long> boundaries;

  size_t n_bins() const { return boundaries.size(); }
  size_t assign(long value) const;
  std::string label(size_t bin) const;
  std::vector<std::string> labels() const;

  friend bool operator==(const BinSpec&, const BinSpec&) = default;
};

// Boundaries at the k/n empirical quantiles (k = 1..n-1), duplicates merged and
// a final quantile equal to the maximum dropped, so the bin count may be < n.
BinSpec quantile_bins(std::span<const long> values, int n);

using RawLabel = std::variant<long, std::string>;

inline const std::string kSentenceStart = "<S>";
inline const std::string kSentenceEnd = "</S>";
inline const std::string kHeadFirst = "head-first";
inline const std::string kTailFirst = "tail-first";

// Tokens strictly between the two argument spans.
long argument_distance(const Sentence& s);

// nsubj, nsubjpass, dobj and iobj pass through; every other label becomes "other".
std::string grammatical_role(std::string_view dep_label);

// Raw (unbinned) label of `task` for one sentence.
RawLabel extract(TaskId task, const Sentence& s, const DepTree& tree);

using TreeCache = std::unordered_map<std::string, DepTree>;
TreeCache build_tree_cache(const Corpus& corpus);

struct BinProfile {
  std::string name;
  std::map<TaskId, int> bins;  // SentLen, ArgDist, TreeDepth, SDPTreeDepth
  std::set<TaskId> excluded;

  bool includes(TaskId task) const { return !excluded.count(task); }
  std::vector<TaskId> tasks() const;
};

BinProfile tacred_bin_profile();
BinProfile semeval_bin_profile();
BinProfile custom_bin_profile(int sentlen, int argdist, int treedepth, int sdp_treedepth);
// "tacred", "semeval" or "custom:<sentlen>,<argdist>,<treedepth>,<sdptreedepth>".
BinProfile parse_bin_profile(std::string_view spec);

struct LabeledItem {
  std::string id;
  std::string label;
  friend bool operator==(const LabeledItem&, const LabeledItem&) = default;
};

struct ProbingDataset {
  TaskId task = TaskId::SentLen;
  std::vector<std::string> labels;
  std::array<std::vector<LabeledItem>, 3> splits;  // indexed by Split
  std::optional<BinSpec> bin_spec;

  const std::vector<LabeledItem>& split(Split s) const { return splits[static_cast<size_t>(s)]; }
  std::vector<LabeledItem>& split(Split s) { return splits[static_cast<size_t>(s)]; }
  // Index of `label` in the inventory; throws when absent.
  int label_index(const std::string& label) const;

  friend bool operator==(const ProbingDataset&, const ProbingDataset&) = default;
};

// Bins are fitted on training values only. Throws when the profile excludes the task.
ProbingDataset build_task(TaskId task, const Corpus& corpus, const BinProfile& profile,
                          const TreeCache* trees = nullptr);

// One JSON line per split: {task, labels, split, items:[{id,label}]}.
void write_dataset_jsonl(const ProbingDataset& dataset, std::ostream& out);
ProbingDataset read_dataset_jsonl(std::istream& in);

}  // namespace relprobe
