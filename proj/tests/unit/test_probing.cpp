#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "relprobe/error.hpp"
#include "relprobe/gradcheck.hpp"
#include "relprobe/probing.hpp"

using namespace relprobe;

namespace {

struct Toy {
  RepMatrix reps{2};
  ProbingDataset task;
};

// Two Gaussian blobs either side of the line x + y = 0, with a margin.
Toy separable(size_t per_split, std::uint64_t seed, float scale = 1.0f) {
  Toy t;
  t.task.task = TaskId::ArgOrd;
  t.task.labels = {"neg", "pos"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-2, 2);
  size_t id = 0;
  for (Split sp : kAllSplits) {
    for (size_t i = 0; i < per_split; ++i) {
      float x, y;
      do {
        x = u(rng);
        y = u(rng);
      } while (std::abs(x + y) < 0.5f);
      const std::string name = "s" + std::to_string(id++);
      const float row[2] = {x * scale, y * scale};
      t.reps.append(name, row);
      t.task.split(sp).push_back({name, x + y > 0 ? "pos" : "neg"});
    }
  }
  return t;
}

Toy random_labels(size_t per_split, std::uint64_t seed) {
  Toy t;
  t.reps = RepMatrix(4);
  t.task.task = TaskId::ArgOrd;
  t.task.labels = {"a", "b"};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0, 1);
  std::bernoulli_distribution coin(0.5);
  size_t id = 0;
  for (Split sp : kAllSplits) {
    for (size_t i = 0; i < per_split; ++i) {
      const std::string name = "r" + std::to_string(id++);
      const float row[4] = {n(rng), n(rng), n(rng), n(rng)};
      t.reps.append(name, row);
      t.task.split(sp).push_back({name, coin(rng) ? "a" : "b"});
    }
  }
  return t;
}

std::vector<double> as_double(const RepMatrix& r) { return {r.data().begin(), r.data().end()}; }

}  // namespace

TEST(RepMatrix, AppendAndErrors) {
  RepMatrix r(2, "x");
  const float a[2] = {1, 2};
  r.append("a", a);
  EXPECT_THROW(r.append("a", a), Error);
  const float three[3] = {1, 2, 3};
  EXPECT_THROW(r.append("b", three), Error);
  const float bad[2] = {1, std::numeric_limits<float>::quiet_NaN()};
  EXPECT_THROW(r.append("c", bad), Error);
  EXPECT_EQ(r.rows(), 1u);
  EXPECT_EQ(r.find("a"), std::optional<size_t>(0));
  EXPECT_FALSE(r.find("zz").has_value());
}

TEST(RepMatrix, FileRoundTrip) {
  auto t = separable(20, 1);
  std::stringstream buf;
  write_reps(t.reps, buf);
  EXPECT_EQ(buf.str().substr(0, 4), "REPR");
  RepMatrix back = read_reps(buf);
  EXPECT_EQ(back, t.reps);
  EXPECT_EQ(reps_hash(back), reps_hash(t.reps));
}

TEST(Baselines, Features) {
  auto s = fixtures::bayer();
  EXPECT_EQ(baseline_features(BaselineKind::Length, s), std::vector<float>{3.0f});
  EXPECT_EQ(baseline_features(BaselineKind::ArgDist, s), std::vector<float>{1.0f});
  std::istringstream in("Bayer 1 0 0 2\nacquired 0 1 0 2\nMonsanto 0 0 1 2\n");
  EmbeddingTable table = read_embeddings(in, 4);
  EXPECT_EQ(baseline_features(BaselineKind::Boe, s, &table), (std::vector<float>{1, 1, 1, 6}));
  Sentence p = s;
  std::reverse(p.tokens.begin(), p.tokens.end());
  EXPECT_EQ(baseline_features(BaselineKind::Boe, p, &table), baseline_features(BaselineKind::Boe, s, &table));
  EXPECT_THROW(baseline_features(BaselineKind::Boe, s, nullptr), Error);
  std::vector<float> seven_tokens = baseline_features(BaselineKind::Length, fixtures::synth_corpus(1, 0, 0, 1).train[0]);
  EXPECT_EQ(seven_tokens.size(), 1u);
}

TEST(Baselines, BoeRowsAreTokenSums) {
  auto cfg = default_synth_config();
  cfg.n_train = 10;
  cfg.n_val = cfg.n_test = 0;
  Corpus c = generate(cfg);
  EmbeddingTable table = synth_embeddings(cfg, 4, 2);
  RepMatrix r = baseline_reps(BaselineKind::Boe, c.train, &table);
  ASSERT_EQ(r.rows(), 10u);
  for (size_t i = 0; i < c.train.size(); ++i) {
    double sum[4] = {0, 0, 0, 0};
    for (const auto& tok : c.train[i].tokens)
      for (int j = 0; j < 4; ++j) sum[j] += table.lookup(tok)[j];
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(r.row(i)[j], sum[j], 1e-5);
  }
}

TEST(Extract, ShapeDeterminismAndJobs) {
  Corpus c = fixtures::synth_corpus(10, 0, 0, 4);
  EncoderModel<float> m(toy_input_config(), toy_encoder_config(EncoderKind::Bilstm), build_vocab(c.train, false),
                        c.label_inventory);
  m.init(2);
  RepMatrix a = extract_reps(m, c.train, nullptr, 1);
  EXPECT_EQ(a.rows(), 10u);
  EXPECT_EQ(a.dim(), m.rep_dim());
  RepMatrix b = extract_reps(m, c.train, nullptr, 4);
  EXPECT_EQ(reps_hash(a), reps_hash(b));
}

TEST(Extract, CachedExtractionReusesFile) {
  Corpus c = fixtures::synth_corpus(12, 4, 4, 4);
  auto dir = fixtures::temp_dir("cache");
  EncoderModel<float> m(toy_input_config(), toy_encoder_config(EncoderKind::Cnn), build_vocab(c.train, false),
                        c.label_inventory);
  m.init(2);
  save_model(m, dir / "m.rpck");
  RepMatrix a = extract_reps_cached(dir / "m.rpck", c, Split::Test, nullptr, dir / "cache", 2);
  EXPECT_EQ(a.rows(), 4u);
  size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(dir / "cache")) files += e.path().extension() == ".repr";
  EXPECT_EQ(files, 1u);
  RepMatrix b = extract_reps_cached(dir / "m.rpck", c, Split::Test, nullptr, dir / "cache", 1);
  EXPECT_EQ(a, b);
  RepMatrix fresh = extract_reps_cached(dir / "m.rpck", c, Split::Test, nullptr, "", 1);
  EXPECT_EQ(reps_hash(a), reps_hash(fresh));
}

TEST(Probe, SeparableToyIsSolved) {
  auto t = separable(100, 3);
  ProbeOptions o;
  o.grid = {0.0};
  auto r = train_probe(t.reps, t.task, o);
  EXPECT_EQ(r.test_accuracy, 1.0);
  EXPECT_EQ(r.chosen_l2, 0.0);
}

TEST(Probe, RandomLabelsAreChance) {
  auto t = random_labels(1000, 4);
  auto r = train_probe(t.reps, t.task);
  EXPECT_NEAR(r.test_accuracy, 0.5, 0.05);
}

TEST(Probe, ConvexAcrossInitialisations) {
  auto t = random_labels(300, 9);
  std::vector<double> x;
  std::vector<int> y;
  for (const auto& item : t.task.split(Split::Train)) {
    auto row = t.reps.row(*t.reps.find(item.id));
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(t.task.label_index(item.label));
  }
  for (double l2 : {0.01, 1.0}) {
    ProbeOptions a, b;
    a.max_epochs = b.max_epochs = 3000;
    a.tolerance = b.tolerance = 1e-10;
    b.init_seed = 17;
    auto ma = fit_probe(x, y.size(), 4, y, 2, l2, a);
    auto mb = fit_probe(x, y.size(), 4, y, 2, l2, b);
    EXPECT_NEAR(ma.final_loss, mb.final_loss, 1e-4) << l2;
  }
}

TEST(Probe, ChosenL2MaximisesValidation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto t = random_labels(60, seed);
    auto r = train_probe(t.reps, t.task);
    ProbeOptions o;
    ASSERT_EQ(r.grid_val_accuracy.size(), o.grid.size());
    auto best = std::max_element(r.grid_val_accuracy.begin(), r.grid_val_accuracy.end());
    EXPECT_EQ(r.val_accuracy, *best);
    EXPECT_EQ(r.chosen_l2, o.grid[best - r.grid_val_accuracy.begin()]);
    for (double acc : r.grid_val_accuracy) EXPECT_LE(acc, r.val_accuracy);
  }
}

TEST(Probe, ScalingKeepsSeparablePredictions) {
  auto t = separable(80, 5);
  ProbeOptions o;
  o.grid = {0.0};
  o.max_epochs = 3000;
  auto base = train_probe(t.reps, t.task, o);
  for (float s : {0.1f, 10.0f}) {
    auto scaled = separable(80, 5, s);
    auto r = train_probe(scaled.reps, scaled.task, o);
    EXPECT_EQ(r.test_accuracy, base.test_accuracy) << s;
  }
}

TEST(Probe, StandardizationIsOptIn) {
  auto t = separable(50, 6, 1000.0f);
  ProbeOptions o;
  o.grid = {0.0};
  o.standardize = true;
  std::vector<double> x;
  std::vector<int> y;
  for (const auto& item : t.task.split(Split::Train)) {
    auto row = t.reps.row(*t.reps.find(item.id));
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(t.task.label_index(item.label));
  }
  auto m = fit_probe(x, y.size(), 2, y, 2, 0.0, o);
  EXPECT_EQ(m.mean.size(), 2u);
  EXPECT_EQ(accuracy(m.predict(x, y.size()), y), 1.0);
  o.standardize = false;
  EXPECT_TRUE(fit_probe(x, y.size(), 2, y, 2, 0.0, o).mean.empty());
}

TEST(Probe, MissingRepNamesId) {
  auto t = separable(10, 7);
  t.task.split(Split::Test).push_back({"ghost", "pos"});
  try {
    train_probe(t.reps, t.task);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Suite, ShapeCsvAndDeterminism) {
  Corpus c = fixtures::synth_corpus(80, 20, 20, 8);
  auto all = select_split(c, std::nullopt);
  RepMatrix len = baseline_reps(BaselineKind::Length, all);
  RepMatrix dist = baseline_reps(BaselineKind::ArgDist, all);
  std::vector<ProbingDataset> tasks;
  for (TaskId t : {TaskId::SentLen, TaskId::ArgDist, TaskId::TypeHead}) {
    tasks.push_back(build_task(t, c, tacred_bin_profile()));
  }
  ProbeOptions o;
  o.grid = {0.0, 0.1};
  auto a = run_suite({{"Length", &len}, {"ArgDist", &dist}}, tasks, o, 1);
  auto b = run_suite({{"Length", &len}, {"ArgDist", &dist}}, tasks, o, 4);
  EXPECT_EQ(a.results.size(), 6u);
  std::ostringstream wa, wb, la;
  write_suite_csv(a, wa);
  write_suite_csv(b, wb);
  EXPECT_EQ(wa.str(), wb.str());
  EXPECT_EQ(render_table(a), render_table(b));
  EXPECT_EQ(wa.str().substr(0, wa.str().find('\n')), "source,SentLen,ArgDist,TypeHead");
  write_suite_long_csv(a, la);
  std::istringstream in(la.str());
  auto back = read_suite_long_csv(in);
  EXPECT_EQ(back.sources, a.sources);
  EXPECT_EQ(back.tasks, a.tasks);
  EXPECT_EQ(render_table(back), render_table(a));
  EXPECT_EQ(a.at(1, 1).task, TaskId::ArgDist);
  EXPECT_GE(a.at(1, 1).test_accuracy, 0.99);
}
