#include "relprobe/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "relprobe/binio.hpp"
#include "relprobe/deptree.hpp"
#include "relprobe/error.hpp"

namespace relprobe {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val" || name == "dev" || name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw Error("unknown split '" + std::string(name) + "'");
}

const std::vector<Sentence>& Corpus::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Validation: return validation;
    case Split::Test: return test;
  }
  return train;
}

std::vector<Sentence>& Corpus::split(Split s) {
  return const_cast<std::vector<Sentence>&>(std::as_const(*this).split(s));
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "tacred-json" || name == "tacred") return CorpusFormat::TacredJson;
  if (name == "generic-jsonl" || name == "jsonl") return CorpusFormat::GenericJsonl;
  throw Error("unknown corpus format '" + std::string(name) + "' (expected tacred-json or generic-jsonl)");
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void check_span(const char* which, Span s, int n, std::vector<std::string>& out) {
  if (s.start > s.end) {
    out.push_back(std::string(which) + " span start > end");
  } else if (s.start < 0 || s.end >= n) {
    out.push_back(std::string(which) + " span out of range");
  }
}

}  // namespace

std::vector<std::string> validate_sentence(const Sentence& s) {
  std::vector<std::string> out;
  const int n = s.size();
  if (n == 0) {
    out.emplace_back("empty sentence");
    return out;
  }
  if (static_cast<int>(s.pos.size()) != n) out.emplace_back("annotation length mismatch: pos");
  if (static_cast<int>(s.ner.size()) != n) out.emplace_back("annotation length mismatch: ner");
  if (static_cast<int>(s.dep_head.size()) != n) out.emplace_back("annotation length mismatch: dep_head");
  if (static_cast<int>(s.dep_label.size()) != n) out.emplace_back("annotation length mismatch: dep_label");

  check_span("head", s.head, n, out);
  check_span("tail", s.tail, n, out);
  if (s.head.start <= s.head.end && s.tail.start <= s.tail.end && overlaps(s.head, s.tail)) {
    out.emplace_back("head and tail spans overlap");
  }

  if (static_cast<int>(s.dep_head.size()) == n) {
    int roots = 0;
    bool in_range = true;
    for (int i = 0; i < n; ++i) {
      int h = s.dep_head[i];
      if (h < 0 || h > n) {
        out.push_back("dep_head out of range at token " + std::to_string(i));
        in_range = false;
      } else if (h == 0) {
        ++roots;
      }
    }
    if (roots == 0) out.emplace_back("no root token");
    if (roots > 1) out.emplace_back("multiple root tokens");
    if (in_range) {
      // 0 = unvisited, 1 = on the current walk, 2 = known to end at a root
      std::vector<char> state(n, 0);
      bool cycle = false;
      for (int i = 0; i < n && !cycle; ++i) {
        std::vector<int> walk;
        int cur = i;
        while (cur >= 0 && state[cur] == 0) {
          state[cur] = 1;
          walk.push_back(cur);
          cur = s.dep_head[cur] - 1;
        }
        if (cur >= 0 && state[cur] == 1) cycle = true;
        for (int w : walk) state[w] = 2;
      }
      if (cycle) out.emplace_back("cycle detected");
    }
  }
  if (s.relation.empty()) out.emplace_back("missing relation label");
  return out;
}

// ---------------------------------------------------------------------------
// Masking

bool is_mask_token(std::string_view token) {
  return token.starts_with("SUBJ-") || token.starts_with("OBJ-");
}

Sentence mask_entities(const Sentence& s) {
  Sentence out = s;
  auto apply = [&](Span span, const char* role) {
    int root = span_root(std::span<const int>(s.dep_head), span);
    std::string mask = std::string(role) + "-" + s.ner[root];
    for (int i = span.start; i <= span.end; ++i) out.tokens[i] = mask;
  };
  apply(s.head, "SUBJ");
  apply(s.tail, "OBJ");
  return out;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

[[noreturn]] void field_error(std::string_view source, size_t line, std::string_view field,
                              std::string_view what) {
  std::ostringstream msg;
  msg << source << ": line " << line << ": field '" << field << "': " << what;
  throw Error(msg.str());
}

template <typename T>
T get_field(const json& rec, const char* field, std::string_view source, size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) field_error(source, line, field, "missing");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    field_error(source, line, field, "wrong type");
  }
}

Sentence parse_generic_record(const json& rec, std::string_view source, size_t line) {
  if (!rec.is_object()) field_error(source, line, "<record>", "not a JSON object");
  Sentence s;
  s.id = get_field<std::string>(rec, "id", source, line);
  s.tokens = get_field<std::vector<std::string>>(rec, "tokens", source, line);
  s.pos = get_field<std::vector<std::string>>(rec, "pos", source, line);
  s.ner = get_field<std::vector<std::string>>(rec, "ner", source, line);
  s.dep_head = get_field<std::vector<int>>(rec, "dep_head", source, line);
  s.dep_label = get_field<std::vector<std::string>>(rec, "dep_label", source, line);
  s.head = {get_field<int>(rec, "head_start", source, line), get_field<int>(rec, "head_end", source, line)};
  s.tail = {get_field<int>(rec, "tail_start", source, line), get_field<int>(rec, "tail_end", source, line)};
  s.relation = get_field<std::string>(rec, "relation", source, line);
  return s;
}

// TACRED ships 0-based inclusive spans, which already match the internal
// convention; stanford_head is 1-based with 0 for the root.
Sentence parse_tacred_record(const json& rec, std::string_view source, size_t index) {
  if (!rec.is_object()) field_error(source, index, "<record>", "not a JSON object");
  Sentence s;
  s.id = get_field<std::string>(rec, "id", source, index);
  s.tokens = get_field<std::vector<std::string>>(rec, "token", source, index);
  s.pos = get_field<std::vector<std::string>>(rec, "stanford_pos", source, index);
  s.ner = get_field<std::vector<std::string>>(rec, "stanford_ner", source, index);
  s.dep_label = get_field<std::vector<std::string>>(rec, "stanford_deprel", source, index);
  auto heads = rec.find("stanford_head");
  if (heads == rec.end() || !heads->is_array()) field_error(source, index, "stanford_head", "missing");
  for (const auto& h : *heads) {
    if (h.is_number_integer()) {
      s.dep_head.push_back(h.get<int>());
    } else if (h.is_string()) {
      try {
        s.dep_head.push_back(std::stoi(h.get<std::string>()));
      } catch (const std::exception&) {
        field_error(source, index, "stanford_head", "non-integer value");
      }
    } else {
      field_error(source, index, "stanford_head", "wrong type");
    }
  }
  s.head = {get_field<int>(rec, "subj_start", source, index), get_field<int>(rec, "subj_end", source, index)};
  s.tail = {get_field<int>(rec, "obj_start", source, index), get_field<int>(rec, "obj_end", source, index)};
  s.relation = get_field<std::string>(rec, "relation", source, index);
  return s;
}

void read_jsonl_into(std::istream& in, Corpus& corpus, std::optional<Split> forced, std::string_view source) {
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      std::ostringstream msg;
      msg << source << ": line " << lineno << ": malformed JSON: " << e.what();
      throw Error(msg.str());
    }
    Split split = Split::Train;
    if (forced) {
      split = *forced;
    } else if (auto it = rec.find("split"); it != rec.end()) {
      if (!it->is_string()) field_error(source, lineno, "split", "wrong type");
      try {
        split = parse_split(it->get<std::string>());
      } catch (const Error& e) {
        field_error(source, lineno, "split", e.what());
      }
    }
    corpus.split(split).push_back(parse_generic_record(rec, source, lineno));
  }
}

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

void read_tacred_file(const fs::path& path, std::vector<Sentence>& out) {
  auto in = open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": malformed JSON: " + e.what());
  }
  if (!doc.is_array()) throw Error(path.string() + ": expected a JSON array of records");
  size_t index = 0;
  for (const auto& rec : doc) out.push_back(parse_tacred_record(rec, path.string(), ++index));
}

std::optional<fs::path> first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    if (fs::exists(dir / name)) return dir / name;
  }
  return std::nullopt;
}

}  // namespace

void finalize_corpus(Corpus& corpus, const LoadOptions& options) {
  std::unordered_set<std::string> ids;
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) {
      auto violations = validate_sentence(s);
      if (!violations.empty()) {
        std::string msg = "sentence " + s.id + ": ";
        for (size_t i = 0; i < violations.size(); ++i) msg += (i ? "; " : "") + violations[i];
        throw Error(msg);
      }
      if (!ids.insert(s.id).second) throw Error("duplicate sentence id " + s.id);
    }
  }

  if (corpus.validation.empty() && options.holdout_fraction > 0.0 && !corpus.train.empty()) {
    const size_t n = corpus.train.size();
    const size_t held = static_cast<size_t>(std::floor(options.holdout_fraction * static_cast<double>(n)));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(options.holdout_seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> to_validation(n, 0);
    for (size_t i = n - held; i < n; ++i) to_validation[order[i]] = 1;
    std::vector<Sentence> kept;
    for (size_t i = 0; i < n; ++i) {
      (to_validation[i] ? corpus.validation : kept).push_back(std::move(corpus.train[i]));
    }
    corpus.train = std::move(kept);
  }

  std::set<std::string> labels;
  for (const auto& s : corpus.train) labels.insert(s.relation);
  corpus.label_inventory.assign(labels.begin(), labels.end());
  for (Split split : {Split::Validation, Split::Test}) {
    for (const auto& s : corpus.split(split)) {
      if (!labels.count(s.relation)) {
        throw Error("sentence " + s.id + ": relation '" + s.relation + "' not in training label inventory");
      }
    }
  }

  if (options.negative_label) {
    corpus.negative_label = options.negative_label;
  } else if (labels.count("no_relation")) {
    corpus.negative_label = "no_relation";
  } else if (labels.count("Other")) {
    corpus.negative_label = "Other";
  } else {
    corpus.negative_label.reset();
  }
}

Corpus read_corpus_jsonl(std::istream& in, const LoadOptions& options, std::string_view source) {
  Corpus corpus;
  read_jsonl_into(in, corpus, std::nullopt, source);
  finalize_corpus(corpus, options);
  return corpus;
}

Corpus load_corpus(const fs::path& path, CorpusFormat format, const LoadOptions& options) {
  if (!fs::exists(path)) throw Error("corpus path does not exist: " + path.string());
  Corpus corpus;
  if (format == CorpusFormat::GenericJsonl) {
    if (fs::is_directory(path)) {
      auto train = first_existing(path, {"train.jsonl"});
      if (!train) throw Error(path.string() + ": no train.jsonl");
      auto load_split = [&](const fs::path& file, Split split) {
        auto in = open_input(file);
        read_jsonl_into(in, corpus, split, file.string());
      };
      load_split(*train, Split::Train);
      if (auto val = first_existing(path, {"val.jsonl", "dev.jsonl"})) load_split(*val, Split::Validation);
      if (auto test = first_existing(path, {"test.jsonl"})) load_split(*test, Split::Test);
    } else {
      auto in = open_input(path);
      read_jsonl_into(in, corpus, std::nullopt, path.string());
    }
  } else {
    if (fs::is_directory(path)) {
      auto train = first_existing(path, {"train.json"});
      if (!train) throw Error(path.string() + ": no train.json");
      read_tacred_file(*train, corpus.train);
      if (auto dev = first_existing(path, {"dev.json", "val.json"})) read_tacred_file(*dev, corpus.validation);
      if (auto test = first_existing(path, {"test.json"})) read_tacred_file(*test, corpus.test);
    } else {
      read_tacred_file(path, corpus.train);
    }
  }
  finalize_corpus(corpus, options);
  return corpus;
}

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out) {
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) {
      ordered_json rec;
      rec["id"] = s.id;
      rec["split"] = split_name(split);
      rec["tokens"] = s.tokens;
      rec["pos"] = s.pos;
      rec["ner"] = s.ner;
      rec["dep_head"] = s.dep_head;
      rec["dep_label"] = s.dep_label;
      rec["head_start"] = s.head.start;
      rec["head_end"] = s.head.end;
      rec["tail_start"] = s.tail.start;
      rec["tail_end"] = s.tail.end;
      rec["relation"] = s.relation;
      out << rec.dump() << '\n';
    }
  }
}

void write_corpus_jsonl(const Corpus& corpus, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus_jsonl(corpus, out);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.train = corpus.train.size();
  stats.validation = corpus.validation.size();
  stats.test = corpus.test.size();
  stats.labels = corpus.label_inventory.size();
  size_t negatives = 0;
  size_t tokens = 0;
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) {
      if (corpus.negative_label && s.relation == *corpus.negative_label) ++negatives;
      tokens += s.tokens.size();
    }
  }
  const size_t total = corpus.size();
  if (total > 0) {
    stats.negative_fraction = static_cast<double>(negatives) / static_cast<double>(total);
    stats.mean_length = static_cast<double>(tokens) / static_cast<double>(total);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingTable::EmbeddingTable(size_t dim) : dim_(dim), sum_(dim, 0.0), unk_(dim, 0.0f), pad_(dim, 0.0f) {}

void EmbeddingTable::add(const std::string& token, std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw Error("embedding for '" + token + "' has " + std::to_string(vector.size()) +
                " values, expected " + std::to_string(dim_));
  }
  if (index_.count(token)) return;  // first occurrence wins
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  data_.insert(data_.end(), vector.begin(), vector.end());
  const double n = static_cast<double>(tokens_.size());
  for (size_t j = 0; j < dim_; ++j) {
    sum_[j] += vector[j];
    unk_[j] = static_cast<float>(sum_[j] / n);
  }
}

std::span<const float> EmbeddingTable::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return unk_;
  return std::span<const float>(data_).subspan(it->second * dim_, dim_);
}

EmbeddingTable read_embeddings(std::istream& in, size_t dim, std::string_view source) {
  if (dim == 0) throw Error("embedding dimension must be positive");
  EmbeddingTable table(dim);
  std::string line;
  size_t lineno = 0;
  std::vector<float> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    values.clear();
    std::string field;
    while (fields >> field) {
      float v = 0.0f;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        std::ostringstream msg;
        msg << source << ": line " << lineno << ": malformed number '" << field << "'";
        throw Error(msg.str());
      }
      values.push_back(v);
    }
    if (values.size() != dim) {
      std::ostringstream msg;
      msg << source << ": line " << lineno << ": dimension mismatch: got " << values.size()
          << " values, expected " << dim;
      throw Error(msg.str());
    }
    table.add(token, values);
  }
  return table;
}

EmbeddingTable load_embeddings(const fs::path& path, size_t dim) {
  auto in = open_input(path);
  return read_embeddings(in, dim, path.string());
}

void write_embeddings(const EmbeddingTable& table, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[64];
  for (const auto& token : table.tokens()) {
    out << token;
    for (float v : table.lookup(token)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, static_cast<size_t>(ptr - buf));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Contextual vectors

void ContextualStore::insert(const std::string& id, Matrix m) {
  if (m.data.size() != m.rows * m.cols) throw Error("contextual matrix for " + id + " has inconsistent size");
  if (!entries_.emplace(id, std::move(m)).second) throw Error("duplicate contextual vectors for sentence " + id);
}

const ContextualStore::Matrix* ContextualStore::find(const std::string& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

void ContextualStore::check_against(const Corpus& corpus) const {
  for (Split split : kAllSplits) {
    for (const auto& s : corpus.split(split)) {
      if (const Matrix* m = find(s.id); m && static_cast<int>(m->rows) != s.size()) {
        throw Error("contextual vectors for sentence " + s.id + " have " + std::to_string(m->rows) +
                    " rows, expected " + std::to_string(s.size()));
      }
    }
  }
}

ContextualStore read_contextual(std::istream& in) {
  binio::expect_magic(in, "CTXV", "contextual-vector");
  auto version = binio::read_uint<std::uint32_t>(in, "version");
  if (version != 1) throw Error("unsupported contextual-vector version " + std::to_string(version));
  ContextualStore store;
  while (in.peek() != std::char_traits<char>::eof()) {
    std::string id = binio::read_string(in, "sentence id");
    ContextualStore::Matrix m;
    m.rows = binio::read_uint<std::uint32_t>(in, "row count");
    m.cols = binio::read_uint<std::uint32_t>(in, "column count");
    m.data.resize(m.rows * m.cols);
    for (auto& v : m.data) v = binio::read_f32(in, "vector data");
    store.insert(id, std::move(m));
  }
  return store;
}

ContextualStore load_contextual(const fs::path& path) {
  auto in = open_input(path, std::ios::binary);
  return read_contextual(in);
}

void write_contextual(const ContextualStore& store, std::ostream& out) {
  binio::write_magic(out, "CTXV");
  binio::write_uint<std::uint32_t>(out, 1);
  for (const auto& [id, m] : store.entries()) {
    binio::write_string(out, id);
    binio::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows));
    binio::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols));
    for (float v : m.data) binio::write_f32(out, v);
  }
}

void write_contextual(const ContextualStore& store, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_contextual(store, out);
}

}  // namespace relprobe
