#include "relprobe/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "relprobe/corpus.hpp"
#include "relprobe/error.hpp"
#include "relprobe/gradcheck.hpp"
#include "relprobe/probegen.hpp"
#include "relprobe/probing.hpp"
#include "relprobe/synth.hpp"
#include "relprobe/training.hpp"

namespace relprobe {

namespace fs = std::filesystem;

std::map<std::string, std::string> parse_config(const std::string& text, const std::string& source) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(source + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw Error(source + ":" + std::to_string(lineno) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (!out.emplace(key, trim(t.substr(eq + 1))).second) {
      throw Error(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return out;
}

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct CorpusArgs {
  std::string path;
  std::string format = "generic-jsonl";
  std::string negative_label;
  double holdout = 0.0;
  std::uint64_t holdout_seed = 0;

  void add_to(CLI::App* app, bool required = true) {
    auto* o = app->add_option("--corpus", path, "Corpus file or directory");
    if (required) o->required();
    app->add_option("--format", format, "generic-jsonl or tacred-json")->capture_default_str();
    app->add_option("--negative-label", negative_label, "Negative relation label (default: auto-detect)");
    app->add_option("--holdout", holdout, "Fraction of train moved to validation when none is given");
    app->add_option("--holdout-seed", holdout_seed, "Seed for the holdout shuffle");
  }

  Corpus load() const {
    LoadOptions lo;
    if (!negative_label.empty()) lo.negative_label = negative_label;
    lo.holdout_fraction = holdout;
    lo.holdout_seed = holdout_seed;
    return load_corpus(path, parse_corpus_format(format), lo);
  }
};

struct ProbeArgs {
  std::vector<double> grid = default_l2_grid();
  bool standardize = false;
  double lr = ProbeOptions{}.lr;
  int max_epochs = ProbeOptions{}.max_epochs;

  void add_to(CLI::App* app) {
    app->add_option("--grid", grid, "l2 grid, comma separated")->delimiter(',')->capture_default_str();
    app->add_flag("--standardize", standardize, "Standardise features with training statistics");
    app->add_option("--probe-lr", lr, "Probe learning rate")->capture_default_str();
    app->add_option("--probe-epochs", max_epochs, "Maximum probe epochs")->capture_default_str();
  }

  ProbeOptions options() const {
    ProbeOptions o;
    o.grid = grid;
    o.standardize = standardize;
    o.lr = lr;
    o.max_epochs = max_epochs;
    return o;
  }
};

std::optional<Split> parse_split_arg(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_split(s);
}

EmbeddingTable load_table(const std::string& path, size_t dim) {
  if (dim == 0) throw UsageError("--embedding-dim is required with --embeddings");
  return load_embeddings(path, dim);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

std::string fmt_double(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::vector<TaskId> resolve_tasks(const std::vector<std::string>& names, const BinProfile& profile) {
  if (names.empty()) return profile.tasks();
  std::vector<TaskId> out;
  for (const auto& n : names) out.push_back(parse_task(n));
  return out;
}

HyperProfile resolve_profile(const std::string& preset_name, const std::string& encoder, int epochs, int batch,
                             double lr, bool masking) {
  std::optional<EncoderKind> kind;
  if (!encoder.empty()) kind = parse_encoder_kind(encoder);
  HyperProfile p = preset(preset_name, kind);
  if (epochs > 0) p.epochs = epochs;
  if (batch > 0) p.batch_size = static_cast<size_t>(batch);
  if (lr > 0) p.optimizer.lr = lr;
  p.input.masking = masking;
  return p;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"relprobe: probing toolkit for relation-extraction sentence encoders", "relprobe"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  std::uint64_t seed = 0;
  size_t jobs = 1;
  auto add_common = [&](CLI::App* sub, bool with_seed, bool with_jobs) {
    sub->add_option("--config", config_path, "key=value configuration file");
    if (with_seed) sub->add_option("--seed", seed, "Random seed (RELPROBE_SEED overrides the config file)");
    if (with_jobs) sub->add_option("--jobs", jobs, "Worker threads (0: all cores)")->capture_default_str();
  };

  // validate
  CorpusArgs v_corpus;
  std::string v_contextual, v_embeddings;
  size_t v_emb_dim = 0;
  auto* validate = app.add_subcommand("validate", "Load and validate a corpus, print statistics");
  add_common(validate, false, false);
  v_corpus.add_to(validate);
  validate->add_option("--contextual", v_contextual, "Contextual vector file to check against the corpus");
  validate->add_option("--embeddings", v_embeddings, "Embedding file to check");
  validate->add_option("--embedding-dim", v_emb_dim, "Embedding dimension");

  // synth
  std::string s_out, s_templates, s_lexicon, s_emb_out;
  size_t s_train = 64, s_val = 16, s_test = 16, s_emb_dim = 16;
  int s_max_pp = -1, s_max_fill = -1;
  bool s_order = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic annotated corpus");
  add_common(synth, true, false);
  synth->add_option("--out", s_out, "Output generic-jsonl file")->required();
  synth->add_option("--n-train", s_train)->capture_default_str();
  synth->add_option("--n-val", s_val)->capture_default_str();
  synth->add_option("--n-test", s_test)->capture_default_str();
  synth->add_option("--templates", s_templates, "Template jsonl file (default: built-in templates)");
  synth->add_option("--lexicon", s_lexicon, "JSON file with lexicons, fillers and relation rules");
  synth->add_option("--max-pp", s_max_pp, "Maximum prepositional phrases per marker");
  synth->add_option("--max-fill", s_max_fill, "Maximum filler words per marker");
  synth->add_flag("--order-controlled", s_order, "Emit head-first/tail-first pairs with identical tokens");
  synth->add_option("--embeddings-out", s_emb_out, "Also write random vectors for the vocabulary");
  synth->add_option("--embedding-dim", s_emb_dim)->capture_default_str();

  // probegen
  CorpusArgs g_corpus;
  std::string g_profile = "tacred", g_out;
  std::vector<std::string> g_tasks;
  auto* probegen = app.add_subcommand("probegen", "Build probing task datasets");
  add_common(probegen, false, false);
  g_corpus.add_to(probegen, false);
  probegen->add_option("--profile", g_profile, "tacred, semeval or custom:a,b,c,d")->capture_default_str();
  probegen->add_option("--task", g_tasks, "Task name(s); default: all tasks of the profile")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  probegen->add_option("--out-dir", g_out, "Directory for <Task>.jsonl files");

  // train
  CorpusArgs t_corpus;
  std::string t_preset = "desk-small", t_encoder, t_out, t_embeddings, t_contextual;
  int t_epochs = 0, t_batch = 0;
  double t_lr = 0, t_early = -1;
  size_t t_emb_dim = 0;
  bool t_masking = false, t_val_on_train = false, t_quiet = false;
  auto* train = app.add_subcommand("train", "Train a relation-extraction model");
  add_common(train, true, false);
  t_corpus.add_to(train);
  train->add_option("--preset", t_preset, "Hyperparameter preset")->capture_default_str();
  train->add_option("--encoder", t_encoder, "Encoder kind (desk-small only)");
  train->add_option("--epochs", t_epochs, "Override the preset epoch count");
  train->add_option("--batch-size", t_batch, "Override the preset batch size");
  train->add_option("--lr", t_lr, "Override the preset learning rate");
  train->add_flag("--masking", t_masking, "Replace mentions with SUBJ-/OBJ- type tokens");
  train->add_option("--early-stop", t_early, "Stop once validation F1 reaches this value");
  train->add_flag("--validate-on-train", t_val_on_train, "Score the training split for model selection");
  train->add_option("--embeddings", t_embeddings, "Pre-trained word vectors (sets the word dimension)");
  train->add_option("--embedding-dim", t_emb_dim, "Embedding dimension");
  train->add_option("--contextual", t_contextual, "Contextual vector file");
  train->add_option("--out-dir", t_out, "Directory for model.rpck and history.csv")->required();
  train->add_flag("--quiet", t_quiet, "Do not print per-epoch progress");

  // extract
  CorpusArgs x_corpus;
  std::string x_ckpt, x_split = "all", x_out, x_cache, x_contextual;
  auto* extract = app.add_subcommand("extract", "Extract frozen-encoder representations");
  add_common(extract, false, true);
  x_corpus.add_to(extract);
  extract->add_option("--checkpoint", x_ckpt, "Model checkpoint")->required();
  extract->add_option("--split", x_split, "train, val, test or all")->capture_default_str();
  extract->add_option("--contextual", x_contextual, "Contextual vector file");
  extract->add_option("--cache-dir", x_cache, "Representation cache directory");
  extract->add_option("--out", x_out, "Output representation matrix")->required();

  // probe
  std::string p_reps, p_out, p_baseline, p_embeddings;
  std::vector<std::string> p_tasks;
  size_t p_emb_dim = 0;
  CorpusArgs p_corpus;
  ProbeArgs p_probe;
  auto* probe = app.add_subcommand("probe", "Fit probes for task files on one representation source");
  add_common(probe, false, true);
  probe->add_option("--reps", p_reps, "Representation matrix");
  probe->add_option("--baseline", p_baseline, "length, argdist or boe (instead of --reps; needs --corpus)");
  p_corpus.add_to(probe, false);
  probe->add_option("--embeddings", p_embeddings, "Word vectors for the boe baseline");
  probe->add_option("--embedding-dim", p_emb_dim, "Embedding dimension");
  probe->add_option("--task-file", p_tasks, "Probing dataset jsonl file(s)")->required()->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  p_probe.add_to(probe);
  probe->add_option("--out", p_out, "Result CSV (source,task,chosen_l2,val_accuracy,test_accuracy)");

  // suite
  CorpusArgs u_corpus;
  std::string u_profile = "tacred", u_out, u_preset = "desk-small", u_embeddings, u_cache, u_contextual;
  std::vector<std::string> u_tasks, u_ckpts, u_reps, u_encoders, u_baselines;
  int u_epochs = 0;
  size_t u_emb_dim = 0;
  bool u_masking = false;
  ProbeArgs u_probe;
  auto* suite = app.add_subcommand("suite", "Train/extract as needed and probe every source on every task");
  add_common(suite, true, true);
  u_corpus.add_to(suite);
  suite->add_option("--profile", u_profile, "Binning profile")->capture_default_str();
  suite->add_option("--tasks", u_tasks, "Task names; default: all tasks of the profile")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  suite->add_option("--checkpoints", u_ckpts, "Trained checkpoints to probe")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  suite->add_option("--reps", u_reps, "Representation matrices to probe")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  suite->add_option("--encoders", u_encoders, "Encoders to train with --preset before probing")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  suite->add_option("--preset", u_preset, "Preset for --encoders")->capture_default_str();
  suite->add_option("--epochs", u_epochs, "Override the preset epoch count");
  suite->add_flag("--masking", u_masking, "Train with entity masking");
  suite->add_option("--baselines", u_baselines, "length, argdist, boe")->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  suite->add_option("--embeddings", u_embeddings, "Word vectors (boe baseline and model init)");
  suite->add_option("--embedding-dim", u_emb_dim, "Embedding dimension");
  suite->add_option("--contextual", u_contextual, "Contextual vector file");
  suite->add_option("--cache-dir", u_cache, "Representation cache directory");
  suite->add_option("--out-dir", u_out, "Directory for suite.csv, suite_long.csv and suite.txt")->required();
  u_probe.add_to(suite);

  // gradcheck
  bool c_all = false, c_ops = false, c_enc = false;
  double c_threshold = 1e-4;
  std::uint64_t c_seed = 7;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and encoder");
  add_common(gradcheck_cmd, false, false);
  gradcheck_cmd->add_flag("--all", c_all, "Check ops and encoders (default)");
  gradcheck_cmd->add_flag("--ops", c_ops, "Check single ops");
  gradcheck_cmd->add_flag("--encoders", c_enc, "Check full encoder graphs");
  gradcheck_cmd->add_option("--threshold", c_threshold, "Maximum relative error")->capture_default_str();
  gradcheck_cmd->add_option("--seed", c_seed, "Seed of the random check points")->capture_default_str();

  // report
  std::string r_input, r_out, r_format = "text";
  auto* report = app.add_subcommand("report", "Render a probe result CSV");
  add_common(report, false, false);
  report->add_option("--input", r_input, "Result CSV (long format)")->required();
  report->add_option("--format", r_format, "text, csv (wide) or long")->capture_default_str();
  report->add_option("--out", r_out, "Output file (default: stdout)");

  try {
    // Assemble argv: config entries first, then RELPROBE_SEED, then the command line.
    std::vector<std::string> user(raw_args.begin() + (raw_args.empty() ? 0 : 1), raw_args.end());
    auto given = [&](const std::string& key) {
      for (const auto& a : user) {
        if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
      }
      return false;
    };
    CLI::App* sub = nullptr;
    size_t sub_pos = 0;
    for (size_t i = 0; i < user.size(); ++i) {
      if (!user[i].empty() && user[i][0] != '-') {
        sub = app.get_subcommand_no_throw(user[i]);
        if (!sub) throw UsageError("unknown command: " + user[i]);
        sub_pos = i;
        break;
      }
    }
    std::vector<std::string> injected;
    if (sub) {
      std::string cfg;
      for (size_t i = 0; i < user.size(); ++i) {
        if (user[i] == "--config" && i + 1 < user.size()) cfg = user[i + 1];
        if (user[i].rfind("--config=", 0) == 0) cfg = user[i].substr(9);
      }
      std::map<std::string, std::string> entries;
      if (!cfg.empty()) {
        std::ifstream in(cfg);
        if (!in) throw Error("cannot open config file " + cfg);
        std::stringstream buf;
        buf << in.rdbuf();
        entries = parse_config(buf.str(), cfg);
      }
      for (const auto& [key, value] : entries) {
        if (key == "config" || !sub->get_option_no_throw("--" + key)) throw UsageError("unknown config key: " + key);
      }
      const char* env_seed = std::getenv("RELPROBE_SEED");
      const bool seeded = sub->get_option_no_throw("--seed") != nullptr;
      for (const auto& [key, value] : entries) {
        if (given(key)) continue;
        if (key == "seed" && env_seed && seeded) continue;
        injected.push_back("--" + key + "=" + value);
      }
      if (env_seed && seeded && !given("seed") && sub->get_name() != "gradcheck") {
        injected.push_back(std::string("--seed=") + env_seed);
      }
    }
    std::vector<std::string> argv = user;
    argv.insert(argv.begin() + static_cast<long>(sub ? sub_pos + 1 : 0), injected.begin(), injected.end());
    std::reverse(argv.begin(), argv.end());  // CLI11 consumes a reversed vector
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  try {
    if (*validate) {
      Corpus c = v_corpus.load();
      if (!v_contextual.empty()) load_contextual(v_contextual).check_against(c);
      if (!v_embeddings.empty()) {
        auto t = load_table(v_embeddings, v_emb_dim);
        out << "embeddings: " << t.size() << " vectors of dimension " << t.dim() << "\n";
      }
      auto st = corpus_stats(c);
      out << "train: " << st.train << "\n"
          << "val: " << st.validation << "\n"
          << "test: " << st.test << "\n"
          << "labels: " << st.labels << "\n"
          << "negative_label: " << c.negative_label.value_or("-") << "\n"
          << "negative_fraction: " << fmt_double(st.negative_fraction) << "\n"
          << "mean_length: " << fmt_double(st.mean_length) << "\n"
          << "ok\n";
      return kExitOk;
    }

    if (*synth) {
      SynthConfig sc = default_synth_config();
      if (!s_templates.empty()) sc.templates = load_templates(s_templates);
      if (!s_lexicon.empty()) apply_lexicon_json(sc, s_lexicon);
      sc.n_train = s_train;
      sc.n_val = s_val;
      sc.n_test = s_test;
      if (s_max_pp >= 0) sc.max_pp = s_max_pp;
      if (s_max_fill >= 0) sc.max_fill = s_max_fill;
      sc.seed = seed;
      check_synth_config(sc);
      Corpus c = s_order ? generate_order_controlled(sc, seed) : generate(sc);
      if (fs::path(s_out).has_parent_path()) fs::create_directories(fs::path(s_out).parent_path());
      write_corpus_jsonl(c, fs::path(s_out));
      if (!s_emb_out.empty()) write_embeddings(synth_embeddings(sc, s_emb_dim, seed), s_emb_out);
      out << "wrote " << c.size() << " sentences to " << s_out << "\n";
      return kExitOk;
    }

    if (*probegen) {
      BinProfile profile = parse_bin_profile(g_profile);
      auto tasks = resolve_tasks(g_tasks, profile);
      for (TaskId t : tasks) {
        if (!profile.includes(t)) {
          throw Error("task excluded for this profile: " + std::string(task_name(t)) + " (" + profile.name + ")");
        }
      }
      if (g_corpus.path.empty()) throw UsageError("--corpus is required");
      if (g_out.empty()) throw UsageError("--out-dir is required");
      Corpus c = g_corpus.load();
      TreeCache trees = build_tree_cache(c);
      fs::create_directories(g_out);
      for (TaskId t : tasks) {
        ProbingDataset ds = build_task(t, c, profile, &trees);
        const fs::path path = fs::path(g_out) / (std::string(task_name(t)) + ".jsonl");
        std::ofstream f(path);
        if (!f) throw Error("cannot open " + path.string() + " for writing");
        write_dataset_jsonl(ds, f);
        out << task_name(t) << ": " << ds.labels.size() << " labels, " << ds.split(Split::Train).size() << "/"
            << ds.split(Split::Validation).size() << "/" << ds.split(Split::Test).size() << " items\n";
      }
      return kExitOk;
    }

    if (*train) {
      Corpus c = t_corpus.load();
      HyperProfile p = resolve_profile(t_preset, t_encoder, t_epochs, t_batch, t_lr, t_masking);
      std::optional<EmbeddingTable> table;
      std::optional<ContextualStore> ctx;
      TrainOptions o;
      o.seed = seed;
      if (!t_embeddings.empty()) {
        table = load_table(t_embeddings, t_emb_dim);
        p.input.word_dim = table->dim();
        o.embeddings = &*table;
      }
      if (!t_contextual.empty()) {
        ctx = load_contextual(t_contextual);
        if (ctx->size() == 0) throw Error("contextual file holds no vectors");
        p.input.use_contextual = true;
        p.input.contextual_dim = ctx->entries().begin()->second.cols;
        o.contextual = &*ctx;
      }
      if (t_early >= 0) o.early_stop_f1 = t_early;
      o.validate_on_train = t_val_on_train;
      if (!t_quiet) {
        o.on_epoch = [&](const EpochRecord& r) {
          out << "epoch " << r.epoch << " loss " << fmt_double(r.loss) << " val_f1 " << fmt_double(r.val_f1)
              << " lr " << fmt_double(r.lr) << "\n";
        };
      }
      TrainResult r = train_re(c, p, o);
      fs::create_directories(t_out);
      save_model(r.model, fs::path(t_out) / "model.rpck");
      write_history_csv(r.history, fs::path(t_out) / "history.csv");
      out << "best epoch " << r.best_epoch << " val_f1 " << fmt_double(r.best_val_f1) << "\n";
      return kExitOk;
    }

    if (*extract) {
      Corpus c = x_corpus.load();
      std::optional<ContextualStore> ctx;
      if (!x_contextual.empty()) ctx = load_contextual(x_contextual);
      RepMatrix reps = extract_reps_cached(x_ckpt, c, parse_split_arg(x_split), ctx ? &*ctx : nullptr, x_cache, jobs);
      if (fs::path(x_out).has_parent_path()) fs::create_directories(fs::path(x_out).parent_path());
      write_reps(reps, fs::path(x_out));
      out << "wrote " << reps.rows() << "x" << reps.dim() << " representations to " << x_out << "\n";
      return kExitOk;
    }

    if (*probe) {
      if (p_reps.empty() == p_baseline.empty()) throw UsageError("give exactly one of --reps and --baseline");
      RepMatrix reps;
      std::string source;
      if (!p_reps.empty()) {
        reps = read_reps(fs::path(p_reps));
        source = fs::path(p_reps).stem().string();
      } else {
        if (p_corpus.path.empty()) throw UsageError("--baseline needs --corpus");
        Corpus c = p_corpus.load();
        std::optional<EmbeddingTable> table;
        if (!p_embeddings.empty()) table = load_table(p_embeddings, p_emb_dim);
        reps = baseline_reps(parse_baseline(p_baseline), select_split(c, std::nullopt), table ? &*table : nullptr);
        source = p_baseline;
      }
      std::vector<ProbingDataset> tasks;
      for (const auto& f : p_tasks) {
        std::ifstream in(f);
        if (!in) throw Error("cannot open task file " + f);
        tasks.push_back(read_dataset_jsonl(in));
      }
      SuiteResult r = run_suite({{source, &reps}}, tasks, p_probe.options(), jobs);
      std::ostringstream csv;
      write_suite_long_csv(r, csv);
      if (!p_out.empty()) write_text(p_out, csv.str());
      out << render_table(r);
      return kExitOk;
    }

    if (*suite) {
      Corpus c = u_corpus.load();
      BinProfile profile = parse_bin_profile(u_profile);
      auto task_ids = resolve_tasks(u_tasks, profile);
      TreeCache trees = build_tree_cache(c);
      std::vector<ProbingDataset> tasks;
      for (TaskId t : task_ids) tasks.push_back(build_task(t, c, profile, &trees));

      std::optional<EmbeddingTable> table;
      if (!u_embeddings.empty()) table = load_table(u_embeddings, u_emb_dim);
      std::optional<ContextualStore> ctx;
      if (!u_contextual.empty()) ctx = load_contextual(u_contextual);
      const auto all = select_split(c, std::nullopt);

      std::vector<std::pair<std::string, std::unique_ptr<RepMatrix>>> owned;
      for (const auto& enc : u_encoders) {
        HyperProfile p = resolve_profile(u_preset, enc, u_epochs, 0, 0, u_masking);
        TrainOptions o;
        o.seed = seed;
        if (table) {
          p.input.word_dim = table->dim();
          o.embeddings = &*table;
        }
        if (ctx) {
          p.input.use_contextual = true;
          p.input.contextual_dim = ctx->entries().begin()->second.cols;
          o.contextual = &*ctx;
        }
        TrainResult r = train_re(c, p, o);
        fs::create_directories(u_out);
        save_model(r.model, fs::path(u_out) / (enc + ".rpck"));
        write_history_csv(r.history, fs::path(u_out) / (enc + "_history.csv"));
        owned.emplace_back(enc, std::make_unique<RepMatrix>(extract_reps(r.model, all, ctx ? &*ctx : nullptr, jobs)));
      }
      for (const auto& path : u_ckpts) {
        auto reps = extract_reps_cached(path, c, std::nullopt, ctx ? &*ctx : nullptr, u_cache, jobs);
        owned.emplace_back(fs::path(path).stem().string(), std::make_unique<RepMatrix>(std::move(reps)));
      }
      for (const auto& path : u_reps) {
        owned.emplace_back(fs::path(path).stem().string(), std::make_unique<RepMatrix>(read_reps(fs::path(path))));
      }
      for (const auto& b : u_baselines) {
        BaselineKind kind = parse_baseline(b);
        if (kind == BaselineKind::Boe && !table) throw UsageError("the boe baseline needs --embeddings");
        std::string name = kind == BaselineKind::Length ? "Length" : kind == BaselineKind::ArgDist ? "ArgDist" : "BoE";
        owned.emplace_back(name, std::make_unique<RepMatrix>(baseline_reps(kind, all, table ? &*table : nullptr)));
      }
      if (owned.empty()) throw UsageError("suite needs at least one of --encoders, --checkpoints, --reps, --baselines");
      std::vector<SuiteSource> sources;
      for (const auto& [name, reps] : owned) sources.push_back({name, reps.get()});
      SuiteResult r = run_suite(sources, tasks, u_probe.options(), jobs);

      std::ostringstream wide, longf;
      write_suite_csv(r, wide);
      write_suite_long_csv(r, longf);
      const std::string table_text = render_table(r);
      write_text(fs::path(u_out) / "suite.csv", wide.str());
      write_text(fs::path(u_out) / "suite_long.csv", longf.str());
      write_text(fs::path(u_out) / "suite.txt", table_text);
      out << table_text;
      return kExitOk;
    }

    if (*gradcheck_cmd) {
      const bool ops = c_ops || c_all || (!c_ops && !c_enc);
      const bool encs = c_enc || c_all || (!c_ops && !c_enc);
      std::vector<GradcheckResult> results;
      if (ops) {
        for (auto& r : gradcheck_ops(c_seed)) results.push_back(r);
      }
      if (encs) {
        for (auto& r : gradcheck_encoders(c_seed)) results.push_back(r);
      }
      bool ok = true;
      for (const auto& r : results) {
        const bool pass = r.max_rel_error < c_threshold;
        ok = ok && pass;
        char line[160];
        std::snprintf(line, sizeof line, "%-24s max_rel_error=%.3e scalars=%zu %s\n", r.name.c_str(), r.max_rel_error,
                      r.scalars, pass ? "ok" : "FAIL");
        out << line;
      }
      if (!ok) {
        err << "error: gradient check above threshold " << c_threshold << "\n";
        return kExitFailure;
      }
      return kExitOk;
    }

    if (*report) {
      std::ifstream in(r_input);
      if (!in) throw Error("cannot open " + r_input);
      SuiteResult r = read_suite_long_csv(in);
      std::ostringstream s;
      if (r_format == "text") {
        s << render_table(r);
      } else if (r_format == "csv") {
        write_suite_csv(r, s);
      } else if (r_format == "long") {
        write_suite_long_csv(r, s);
      } else {
        throw UsageError("unknown report format: " + r_format);
      }
      if (r_out.empty()) {
        out << s.str();
      } else {
        write_text(r_out, s.str());
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace relprobe
