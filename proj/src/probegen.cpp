#include "relprobe/probegen.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "relprobe/error.hpp"

namespace relprobe {

namespace {

constexpr std::array<std::string_view, 14> kTaskNames = {
    "SentLen",  "ArgDist",  "EntExist", "TreeDepth", "SDPTreeDepth", "ArgOrd", "PosHeadL",
    "PosHeadR", "PosTailL", "PosTailR", "TypeHead",  "TypeTail",     "GRHead", "GRTail",
};

const std::string& pos_or(const Sentence& s, int i, const std::string& boundary) {
  return (i < 0 || i >= s.size()) ? boundary : s.pos[i];
}

}  // namespace

std::string_view task_name(TaskId task) { return kTaskNames[static_cast<size_t>(task)]; }

TaskId parse_task(std::string_view name) {
  for (size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == name) return static_cast<TaskId>(i);
  }
  if (name == "EntExists") return TaskId::EntExist;
  if (name == "SentLength") return TaskId::SentLen;
  throw Error("unknown probing task '" + std::string(name) + "'");
}

bool is_binned(TaskId task) {
  return task == TaskId::SentLen || task == TaskId::ArgDist || task == TaskId::TreeDepth ||
         task == TaskId::SDPTreeDepth;
}

// ---------------------------------------------------------------------------
// Binning

size_t BinSpec::assign(long value) const {
  auto it = std::lower_bound(boundaries.begin(), boundaries.end(), value);
  if (it == boundaries.end()) return boundaries.size() - 1;
  return static_cast<size_t>(it - boundaries.begin());
}

std::string BinSpec::label(size_t bin) const {
  if (boundaries.size() == 1) return "all";
  if (bin == 0) return "<=" + std::to_string(boundaries[0]);
  const long lo = boundaries[bin - 1] + 1;
  if (bin + 1 == boundaries.size()) return ">=" + std::to_string(lo);
  const long hi = boundaries[bin];
  return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
}

std::vector<std::string> BinSpec::labels() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < n_bins(); ++i) out.push_back(label(i));
  return out;
}

BinSpec quantile_bins(std::span<const long> values, int n) {
  if (n < 2) throw Error("quantile binning needs at least 2 bins");
  if (values.empty()) throw Error("quantile binning needs at least one value");
  std::vector<long> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const size_t count = sorted.size();
  const long max_value = sorted.back();

  BinSpec spec;
  for (int k = 1; k < n; ++k) {
    // smallest index whose cumulative mass reaches k/n
    size_t rank = (static_cast<size_t>(k) * count + static_cast<size_t>(n) - 1) / static_cast<size_t>(n);
    long q = sorted[std::max<size_t>(rank, 1) - 1];
    if (q >= max_value) break;
    if (spec.boundaries.empty() || q > spec.boundaries.back()) spec.boundaries.push_back(q);
  }
  spec.boundaries.push_back(kUnbounded);
  return spec;
}

// ---------------------------------------------------------------------------
// Label extraction

long argument_distance(const Sentence& s) {
  if (s.head.end < s.tail.start) return s.tail.start - s.head.end - 1;
  return std::max(0, s.head.start - s.tail.end - 1);
}

std::string grammatical_role(std::string_view dep_label) {
  for (std::string_view role : {"nsubj", "nsubjpass", "dobj", "iobj"}) {
    if (dep_label == role) return std::string(role);
  }
  return "other";
}

RawLabel extract(TaskId task, const Sentence& s, const DepTree& tree) {
  switch (task) {
    case TaskId::SentLen:
      return static_cast<long>(s.size());
    case TaskId::ArgDist:
      return argument_distance(s);
    case TaskId::EntExist: {
      const int lo = std::min(s.head.end, s.tail.end) + 1;
      const int hi = std::max(s.head.start, s.tail.start) - 1;
      for (int i = lo; i <= hi; ++i) {
        if (s.ner[i] != "O") return std::string("true");
      }
      return std::string("false");
    }
    case TaskId::TreeDepth:
      return static_cast<long>(tree_depth(tree));
    case TaskId::SDPTreeDepth:
      return static_cast<long>(sdp(tree, s.head, s.tail).depth);
    case TaskId::ArgOrd:
      return s.head.end < s.tail.start ? kHeadFirst : kTailFirst;
    case TaskId::PosHeadL:
      return pos_or(s, s.head.start - 1, kSentenceStart);
    case TaskId::PosHeadR:
      return pos_or(s, s.head.end + 1, kSentenceEnd);
    case TaskId::PosTailL:
      return pos_or(s, s.tail.start - 1, kSentenceStart);
    case TaskId::PosTailR:
      return pos_or(s, s.tail.end + 1, kSentenceEnd);
    case TaskId::TypeHead:
      return s.ner[span_root(tree, s.head)];
    case TaskId::TypeTail:
      return s.ner[span_root(tree, s.tail)];
    case TaskId::GRHead:
      return grammatical_role(s.dep_label[span_root(tree, s.head)]);
    case TaskId::GRTail:
      return grammatical_role(s.dep_label[span_root(tree, s.tail)]);
  }
  throw Error("unhandled probing task");
}

TreeCache build_tree_cache(const Corpus& corpus) {
  TreeCache cache;
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) cache.emplace(s.id, build_tree(s.dep_head));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Profiles

std::vector<TaskId> BinProfile::tasks() const {
  std::vector<TaskId> out;
  for (TaskId t : kAllTasks) {
    if (includes(t)) out.push_back(t);
  }
  return out;
}

BinProfile custom_bin_profile(int sentlen, int argdist, int treedepth, int sdp_treedepth) {
  BinProfile p;
  p.name = "custom";
  p.bins = {{TaskId::SentLen, sentlen},
            {TaskId::ArgDist, argdist},
            {TaskId::TreeDepth, treedepth},
            {TaskId::SDPTreeDepth, sdp_treedepth}};
  for (auto [task, n] : p.bins) {
    if (n < 2) throw Error("bin count for " + std::string(task_name(task)) + " must be >= 2");
  }
  return p;
}

BinProfile tacred_bin_profile() {
  BinProfile p = custom_bin_profile(10, 10, 10, 6);
  p.name = "tacred";
  return p;
}

BinProfile semeval_bin_profile() {
  BinProfile p = custom_bin_profile(7, 5, 7, 4);
  p.name = "semeval";
  p.excluded = {TaskId::ArgOrd, TaskId::EntExist};
  return p;
}

BinProfile parse_bin_profile(std::string_view spec) {
  if (spec == "tacred") return tacred_bin_profile();
  if (spec == "semeval") return semeval_bin_profile();
  if (spec.starts_with("custom:")) {
    std::vector<int> counts;
    std::string_view rest = spec.substr(7);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      auto field = rest.substr(0, comma);
      int v = 0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw Error("bad bin count '" + std::string(field) + "' in profile " + std::string(spec));
      }
      counts.push_back(v);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (counts.size() != 4) {
      throw Error("custom profile needs 4 bin counts: sentlen,argdist,treedepth,sdptreedepth");
    }
    return custom_bin_profile(counts[0], counts[1], counts[2], counts[3]);
  }
  throw Error("unknown probing profile '" + std::string(spec) + "'");
}

// ---------------------------------------------------------------------------
// Dataset construction

int ProbingDataset::label_index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw Error("label '" + label + "' not in inventory of " + std::string(task_name(task)));
  return static_cast<int>(it - labels.begin());
}

ProbingDataset build_task(TaskId task, const Corpus& corpus, const BinProfile& profile, const TreeCache* trees) {
  if (!profile.includes(task)) {
    throw Error("task excluded for this profile: " + std::string(task_name(task)) + " (" + profile.name + ")");
  }
  TreeCache local;
  if (!trees) {
    local = build_tree_cache(corpus);
    trees = &local;
  }
  auto tree_of = [&](const Sentence& s) -> const DepTree& {
    auto it = trees->find(s.id);
    if (it == trees->end()) throw Error("no dependency tree cached for sentence " + s.id);
    return it->second;
  };
  if (corpus.train.empty()) throw Error("cannot build probing task without training sentences");

  ProbingDataset ds;
  ds.task = task;

  if (is_binned(task)) {
    auto raw_value = [&](const Sentence& s) {
      long v = std::get<long>(extract(task, s, tree_of(s)));
      return task == TaskId::TreeDepth ? std::min<long>(v, kMaxTreeDepth) : v;
    };
    std::vector<long> train_values;
    for (const auto& s : corpus.train) train_values.push_back(raw_value(s));
    ds.bin_spec = quantile_bins(train_values, profile.bins.at(task));
    ds.labels = ds.bin_spec->labels();
    for (Split split : kAllSplits) {
      for (const auto& s : corpus.split(split)) {
        ds.split(split).push_back({s.id, ds.bin_spec->label(ds.bin_spec->assign(raw_value(s)))});
      }
    }
    return ds;
  }

  auto raw_text = [&](const Sentence& s) { return std::get<std::string>(extract(task, s, tree_of(s))); };
  std::set<std::string> seen;
  for (const auto& s : corpus.train) seen.insert(raw_text(s));
  ds.labels.assign(seen.begin(), seen.end());
  const bool grammatical = task == TaskId::GRHead || task == TaskId::GRTail;

  std::set<std::string> unseen;
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) {
      std::string label = raw_text(s);
      if (!seen.count(label)) {
        if (grammatical) label = "other";
        if (!seen.count(label)) unseen.insert(label);
      }
      ds.split(split).push_back({s.id, std::move(label)});
    }
  }
  // Labels only seen outside train go after the training inventory.
  ds.labels.insert(ds.labels.end(), unseen.begin(), unseen.end());
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization

void write_dataset_jsonl(const ProbingDataset& dataset, std::ostream& out) {
  for (Split split : kAllSplits) {
    nlohmann::ordered_json rec;
    rec["task"] = task_name(dataset.task);
    rec["labels"] = dataset.labels;
    rec["split"] = split_name(split);
    auto items = nlohmann::ordered_json::array();
    for (const auto& item : dataset.split(split)) {
      nlohmann::ordered_json entry;
      entry["id"] = item.id;
      entry["label"] = item.label;
      items.push_back(std::move(entry));
    }
    rec["items"] = std::move(items);
    out << rec.dump() << '\n';
  }
}

ProbingDataset read_dataset_jsonl(std::istream& in) {
  ProbingDataset ds;
  bool first = true;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      TaskId task = parse_task(rec.at("task").get<std::string>());
      auto labels = rec.at("labels").get<std::vector<std::string>>();
      if (first) {
        ds.task = task;
        ds.labels = labels;
        first = false;
      } else if (task != ds.task || labels != ds.labels) {
        throw Error("inconsistent task or label inventory across splits");
      }
      auto& items = ds.split(parse_split(rec.at("split").get<std::string>()));
      for (const auto& item : rec.at("items")) {
        items.push_back({item.at("id").get<std::string>(), item.at("label").get<std::string>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("probing dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("probing dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (first) throw Error("empty probing dataset");
  return ds;
}

}  // namespace relprobe
