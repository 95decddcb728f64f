#include "relprobe/probing.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "relprobe/binio.hpp"
#include "relprobe/checkpoint.hpp"
#include "relprobe/error.hpp"
#include "relprobe/optim.hpp"

namespace relprobe {

// ---------------------------------------------------------------------------
// RepMatrix

void RepMatrix::append(const std::string& id, std::span<const float> row) {
  if (row.size() != dim_) {
    throw Error("representation for " + id + " has dimension " + std::to_string(row.size()) + ", expected " +
                std::to_string(dim_));
  }
  if (!index_.emplace(id, ids_.size()).second) throw Error("duplicate representation id " + id);
  for (float x : row) {
    if (!std::isfinite(x)) throw Error("non-finite representation for " + id);
  }
  ids_.push_back(id);
  data_.insert(data_.end(), row.begin(), row.end());
}

std::optional<size_t> RepMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void write_reps(const RepMatrix& reps, std::ostream& out) {
  binio::write_magic(out, "REPR");
  binio::write_uint<std::uint32_t>(out, kRepMatrixVersion);
  binio::write_uint<std::uint64_t>(out, reps.rows());
  binio::write_uint<std::uint64_t>(out, reps.dim());
  for (const auto& id : reps.ids()) binio::write_string(out, id);
  for (float x : reps.data()) binio::write_f32(out, x);
  if (!out) throw Error("failed to write representation matrix");
}

void write_reps(const RepMatrix& reps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_reps(reps, out);
}

RepMatrix read_reps(std::istream& in) {
  binio::expect_magic(in, "REPR", "representation matrix");
  auto version = binio::read_uint<std::uint32_t>(in, "version");
  if (version != kRepMatrixVersion) throw Error("unsupported representation matrix version " + std::to_string(version));
  auto n = binio::read_uint<std::uint64_t>(in, "row count");
  auto d = binio::read_uint<std::uint64_t>(in, "dimension");
  std::vector<std::string> ids;
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(binio::read_string(in, "row id"));
  RepMatrix reps(d);
  std::vector<float> row(d);
  for (const auto& id : ids) {
    for (auto& x : row) x = binio::read_f32(in, "row data");
    reps.append(id, row);
  }
  return reps;
}

RepMatrix read_reps(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open representation matrix " + path.string());
  RepMatrix reps = read_reps(in);
  reps.set_source(path.stem().string());
  return reps;
}

std::uint64_t reps_hash(const RepMatrix& reps) {
  std::ostringstream buf;
  write_reps(reps, buf);
  return binio::fnv1a(buf.str());
}

std::vector<Sentence> select_split(const Corpus& corpus, std::optional<Split> split) {
  if (split) return corpus.split(*split);
  std::vector<Sentence> all;
  for (Split s : kAllSplits) all.insert(all.end(), corpus.split(s).begin(), corpus.split(s).end());
  return all;
}

std::uint64_t sentences_hash(const std::vector<Sentence>& sentences) {
  std::uint64_t h = binio::fnv1a("sentences");
  auto mix = [&h](const std::string& s) {
    const auto n = static_cast<std::uint64_t>(s.size());
    h = binio::fnv1a(&n, sizeof n, h);
    h = binio::fnv1a(s, h);
  };
  auto mix_all = [&](const std::vector<std::string>& v) {
    mix(std::to_string(v.size()));
    for (const auto& s : v) mix(s);
  };
  for (const auto& s : sentences) {
    mix(s.id);
    mix_all(s.tokens);
    mix_all(s.pos);
    mix_all(s.ner);
    for (int x : s.dep_head) mix(std::to_string(x));
    mix_all(s.dep_label);
    mix(std::to_string(s.head.start) + ":" + std::to_string(s.head.end) + ":" + std::to_string(s.tail.start) + ":" +
        std::to_string(s.tail.end));
    mix(s.relation);
  }
  return h;
}

namespace {

size_t resolve_jobs(size_t jobs) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  return jobs;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(size_t n, size_t jobs, Fn fn) {
  jobs = std::min(resolve_jobs(jobs), std::max<size_t>(n, 1));
  if (jobs <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

RepMatrix extract_reps(EncoderModel<float>& model, const std::vector<Sentence>& sentences,
                       const ContextualStore* contextual, size_t jobs) {
  const size_t d = model.rep_dim();
  std::vector<std::vector<float>> rows(sentences.size());
  parallel_for(sentences.size(), jobs, [&](size_t i) {
    const auto* ctx = contextual ? contextual->find(sentences[i].id) : nullptr;
    rows[i] = model.represent(sentences[i], ctx);
  });
  RepMatrix reps(d);
  for (size_t i = 0; i < sentences.size(); ++i) reps.append(sentences[i].id, rows[i]);
  return reps;
}

RepMatrix extract_reps_cached(const std::filesystem::path& checkpoint, const Corpus& corpus,
                              std::optional<Split> split, const ContextualStore* contextual,
                              const std::filesystem::path& cache_dir, size_t jobs) {
  const auto sentences = select_split(corpus, split);
  const std::string source = "ckpt-" + hex(file_hash(checkpoint));
  std::filesystem::path cached;
  if (!cache_dir.empty()) {
    const std::string split_tag = split ? std::string(split_name(*split)) : "all";
    cached = cache_dir / (source + "-" + split_tag + "-" + hex(sentences_hash(sentences)) + ".repr");
    if (std::filesystem::exists(cached)) {
      RepMatrix reps = read_reps(cached);
      reps.set_source(source);
      return reps;
    }
  }
  EncoderModel<float> model = load_model(checkpoint);
  if (model.input_config().use_contextual) {
    if (!contextual) throw Error("checkpoint expects contextual vectors");
    contextual->check_against(corpus);
  }
  RepMatrix reps = extract_reps(model, sentences, contextual, jobs);
  reps.set_source(source);
  if (!cached.empty()) {
    std::filesystem::create_directories(cache_dir);
    // write then rename so a concurrent reader never sees a partial file
    auto tmp = cached;
    tmp += ".tmp";
    write_reps(reps, tmp);
    std::filesystem::rename(tmp, cached);
  }
  return reps;
}

// ---------------------------------------------------------------------------
// Baselines

BaselineKind parse_baseline(std::string_view name) {
  if (name == "length") return BaselineKind::Length;
  if (name == "argdist") return BaselineKind::ArgDist;
  if (name == "boe") return BaselineKind::Boe;
  throw Error("unknown baseline: " + std::string(name));
}

std::string_view baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Length: return "length";
    case BaselineKind::ArgDist: return "argdist";
    case BaselineKind::Boe: return "boe";
  }
  return "?";
}

std::vector<float> baseline_features(BaselineKind kind, const Sentence& s, const EmbeddingTable* table) {
  switch (kind) {
    case BaselineKind::Length:
      return {static_cast<float>(s.size())};
    case BaselineKind::ArgDist:
      return {static_cast<float>(argument_distance(s))};
    case BaselineKind::Boe: {
      if (!table) throw Error("the boe baseline needs an embedding table");
      std::vector<double> sum(table->dim(), 0.0);
      for (const auto& tok : s.tokens) {
        auto v = table->lookup(tok);
        for (size_t j = 0; j < sum.size(); ++j) sum[j] += v[j];
      }
      return {sum.begin(), sum.end()};
    }
  }
  return {};
}

RepMatrix baseline_reps(BaselineKind kind, const std::vector<Sentence>& sentences, const EmbeddingTable* table) {
  const size_t d = kind == BaselineKind::Boe ? (table ? table->dim() : 0) : 1;
  RepMatrix reps(d, "baseline-" + std::string(baseline_name(kind)));
  for (const auto& s : sentences) reps.append(s.id, baseline_features(kind, s, table));
  return reps;
}

// ---------------------------------------------------------------------------
// Probes

std::vector<double> default_l2_grid() { return {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

std::vector<int> ProbeModel::predict(const std::vector<double>& x, size_t n) const {
  std::vector<int> out(n);
  std::vector<double> z(classes);
  for (size_t i = 0; i < n; ++i) {
    for (size_t c = 0; c < classes; ++c) z[c] = bias[c];
    for (size_t j = 0; j < dim; ++j) {
      double v = x[i * dim + j];
      if (!mean.empty()) v = (v - mean[j]) / scale[j];
      for (size_t c = 0; c < classes; ++c) z[c] += v * weight[j * classes + c];
    }
    out[i] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

ProbeModel fit_probe(const std::vector<double>& x, size_t n, size_t dim, const std::vector<int>& y, size_t classes,
                     double l2, const ProbeOptions& options) {
  if (n == 0) throw Error("probe has no training items");
  if (x.size() != n * dim || y.size() != n) throw Error("probe data has inconsistent shape");
  if (classes == 0) throw Error("probe needs at least one class");
  ProbeModel model;
  model.dim = dim;
  model.classes = classes;

  std::vector<double> features = x;
  if (options.standardize) {
    model.mean.assign(dim, 0.0);
    model.scale.assign(dim, 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < dim; ++j) model.mean[j] += x[i * dim + j] / static_cast<double>(n);
    }
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < dim; ++j) {
        const double dv = x[i * dim + j] - model.mean[j];
        model.scale[j] += dv * dv / static_cast<double>(n);
      }
    }
    for (auto& s : model.scale) s = s > 0 ? std::sqrt(s) : 1.0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < dim; ++j) features[i * dim + j] = (x[i * dim + j] - model.mean[j]) / model.scale[j];
    }
  }

  ad::ParamStore<double> store;
  auto& w = store.add("probe.weight", {dim, classes});
  auto& b = store.add("probe.bias", {classes});
  if (options.init_seed != 0) {
    ad::Rng rng(options.init_seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto& v : w.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
  }
  Optimizer<double> opt({OptimizerKind::Adam, options.lr, {{"probe.weight", l2}}});

  double prev = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    ad::Tape<double> tape;
    ad::Var logits = tape.add_bias(tape.matmul(tape.input(n, dim, features), tape.param(w)), tape.param(b));
    ad::Var loss = tape.softmax_cross_entropy(logits, y);
    double penalty = 0.0;
    for (double v : w.data) penalty += v * v;
    const double total = tape.value(loss)[0] + 0.5 * l2 * penalty;
    if (!std::isfinite(total)) throw Error("probe training diverged");
    model.final_loss = total;
    model.epochs = epoch;
    if (std::abs(prev - total) < options.tolerance) break;
    prev = total;
    tape.backward(loss);
    opt.step(store, options.lr);
    store.zero_grad();
  }
  model.weight = w.data;
  model.bias = b.data;
  return model;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.size() != gold.size()) throw Error("prediction/gold length mismatch");
  if (gold.empty()) return 0.0;
  size_t ok = 0;
  for (size_t i = 0; i < gold.size(); ++i) ok += pred[i] == gold[i];
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

namespace {

struct ProbeData {
  size_t dim = 0;
  size_t classes = 0;
  std::array<std::vector<double>, 3> x;
  std::array<std::vector<int>, 3> y;
};

ProbeData probe_data(const RepMatrix& reps, const ProbingDataset& task) {
  ProbeData d;
  d.dim = reps.dim();
  d.classes = task.labels.size();
  for (Split s : kAllSplits) {
    const auto k = static_cast<size_t>(s);
    for (const auto& item : task.split(s)) {
      auto row = reps.find(item.id);
      if (!row) {
        throw Error("no representation for sentence " + item.id + " (task " + std::string(task_name(task.task)) + ")");
      }
      auto v = reps.row(*row);
      d.x[k].insert(d.x[k].end(), v.begin(), v.end());
      d.y[k].push_back(task.label_index(item.label));
    }
  }
  return d;
}

struct GridPoint {
  double val = 0.0;
  double test = 0.0;
};

GridPoint fit_grid_point(const ProbeData& d, double l2, const ProbeOptions& options) {
  const auto tr = static_cast<size_t>(Split::Train);
  const auto va = static_cast<size_t>(Split::Validation);
  const auto te = static_cast<size_t>(Split::Test);
  ProbeModel m = fit_probe(d.x[tr], d.y[tr].size(), d.dim, d.y[tr], d.classes, l2, options);
  return {accuracy(m.predict(d.x[va], d.y[va].size()), d.y[va]), accuracy(m.predict(d.x[te], d.y[te].size()), d.y[te])};
}

ProbeResult select(const std::vector<double>& grid, const std::vector<GridPoint>& points) {
  ProbeResult r;
  size_t best = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    r.grid_val_accuracy.push_back(points[i].val);
    if (points[i].val > points[best].val || (points[i].val == points[best].val && grid[i] < grid[best])) best = i;
  }
  r.chosen_l2 = grid[best];
  r.val_accuracy = points[best].val;
  r.test_accuracy = points[best].test;
  return r;
}

}  // namespace

ProbeResult train_probe(const RepMatrix& reps, const ProbingDataset& task, const ProbeOptions& options) {
  if (options.grid.empty()) throw Error("empty l2 grid");
  ProbeData data = probe_data(reps, task);
  std::vector<GridPoint> points;
  for (double l2 : options.grid) points.push_back(fit_grid_point(data, l2, options));
  ProbeResult r = select(options.grid, points);
  r.source = reps.source();
  r.task = task.task;
  return r;
}

SuiteResult run_suite(const std::vector<SuiteSource>& sources, const std::vector<ProbingDataset>& tasks,
                      const ProbeOptions& options, size_t jobs) {
  if (options.grid.empty()) throw Error("empty l2 grid");
  SuiteResult out;
  for (const auto& s : sources) {
    if (!s.reps) throw Error("suite source " + s.name + " has no representations");
    out.sources.push_back(s.name);
  }
  for (const auto& t : tasks) out.tasks.emplace_back(task_name(t.task));

  std::vector<ProbeData> data;
  for (const auto& s : sources) {
    for (const auto& t : tasks) data.push_back(probe_data(*s.reps, t));
  }
  const size_t g = options.grid.size();
  std::vector<GridPoint> points(data.size() * g);
  parallel_for(points.size(), jobs,
               [&](size_t i) { points[i] = fit_grid_point(data[i / g], options.grid[i % g], options); });

  for (size_t k = 0; k < data.size(); ++k) {
    std::vector<GridPoint> cell(points.begin() + static_cast<long>(k * g), points.begin() + static_cast<long>((k + 1) * g));
    ProbeResult r = select(options.grid, cell);
    r.source = sources[k / tasks.size()].name;
    r.task = tasks[k % tasks.size()].task;
    out.results.push_back(std::move(r));
  }
  return out;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

void write_suite_csv(const SuiteResult& result, std::ostream& out) {
  out << "source";
  for (const auto& t : result.tasks) out << ',' << t;
  out << '\n';
  for (size_t s = 0; s < result.sources.size(); ++s) {
    out << result.sources[s];
    for (size_t t = 0; t < result.tasks.size(); ++t) out << ',' << fmt("%.6f", result.at(s, t).test_accuracy);
    out << '\n';
  }
}

void write_suite_long_csv(const SuiteResult& result, std::ostream& out) {
  out << "source,task,chosen_l2,val_accuracy,test_accuracy\n";
  for (size_t s = 0; s < result.sources.size(); ++s) {
    for (size_t t = 0; t < result.tasks.size(); ++t) {
      const auto& r = result.at(s, t);
      out << result.sources[s] << ',' << result.tasks[t] << ',' << fmt("%g", r.chosen_l2) << ','
          << fmt("%.6f", r.val_accuracy) << ',' << fmt("%.6f", r.test_accuracy) << '\n';
    }
  }
}

SuiteResult read_suite_long_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "source,task,chosen_l2,val_accuracy,test_accuracy") {
    throw Error("not a probe result CSV: missing header source,task,chosen_l2,val_accuracy,test_accuracy");
  }
  std::map<std::pair<std::string, std::string>, ProbeResult> cells;
  SuiteResult out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 5) throw Error("line " + std::to_string(lineno) + ": expected 5 fields");
    if (std::find(out.sources.begin(), out.sources.end(), f[0]) == out.sources.end()) out.sources.push_back(f[0]);
    if (std::find(out.tasks.begin(), out.tasks.end(), f[1]) == out.tasks.end()) out.tasks.push_back(f[1]);
    ProbeResult r;
    r.source = f[0];
    r.task = parse_task(f[1]);
    r.chosen_l2 = parse_double(f[2], lineno);
    r.val_accuracy = parse_double(f[3], lineno);
    r.test_accuracy = parse_double(f[4], lineno);
    if (!cells.emplace(std::pair{f[0], f[1]}, r).second) {
      throw Error("line " + std::to_string(lineno) + ": duplicate result for " + f[0] + "/" + f[1]);
    }
  }
  for (const auto& s : out.sources) {
    for (const auto& t : out.tasks) {
      auto it = cells.find({s, t});
      if (it == cells.end()) throw Error("missing result for " + s + "/" + t);
      out.results.push_back(it->second);
    }
  }
  return out;
}

std::string render_table(const SuiteResult& result) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"source"});
  for (const auto& t : result.tasks) rows[0].push_back(t);
  for (size_t s = 0; s < result.sources.size(); ++s) {
    std::vector<std::string> row = {result.sources[s]};
    for (size_t t = 0; t < result.tasks.size(); ++t) row.push_back(fmt("%.1f", 100.0 * result.at(s, t).test_accuracy));
    rows.push_back(std::move(row));
  }
  std::vector<size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      const std::string& cell = rows[r][c];
      const std::string pad(width[c] - cell.size(), ' ');
      if (c > 0) out += "  ";
      out += c == 0 ? cell + pad : pad + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
    }
  }
  return out;
}

}  // namespace relprobe
