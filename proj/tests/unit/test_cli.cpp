#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "relprobe/cli.hpp"
#include "relprobe/error.hpp"

using namespace relprobe;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "relprobe");
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) {
      setenv("RELPROBE_SEED", value, 1);
    } else {
      unsetenv("RELPROBE_SEED");
    }
  }
  ~EnvGuard() { unsetenv("RELPROBE_SEED"); }
};

}  // namespace

TEST(ConfigFile, Parse) {
  auto m = parse_config("# comment\nseed = 4\nn_train=10\n\nout=x.jsonl\n");
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("seed"), "4");
  EXPECT_EQ(m.at("n-train"), "10");
  EXPECT_THROW(parse_config("novalue\n"), Error);
  EXPECT_THROW(parse_config("a=1\na=2\n"), Error);
}

TEST(Cli, UsageErrors) {
  EnvGuard env(nullptr);
  auto none = run({});
  EXPECT_EQ(none.code, kExitUsage);
  EXPECT_EQ(none.err.rfind("error:", 0), 0u) << none.err;
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  auto bad_flag = run({"gradcheck", "--nonsense"});
  EXPECT_EQ(bad_flag.code, kExitUsage);
  EXPECT_EQ(bad_flag.err.rfind("error:", 0), 0u);
  EXPECT_EQ(run({"train", "--corpus", "x"}).code, kExitUsage);  // --out-dir missing
  auto help = run({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("suite"), std::string::npos);
}

TEST(Cli, RuntimeFailures) {
  EnvGuard env(nullptr);
  auto missing = run({"validate", "--corpus", "/nonexistent/corpus.jsonl"});
  EXPECT_EQ(missing.code, kExitFailure);
  EXPECT_EQ(missing.err.rfind("error:", 0), 0u);
}

TEST(Cli, GradcheckOps) {
  auto r = run({"gradcheck", "--ops"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("matmul"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, SynthValidateProbegen) {
  EnvGuard env(nullptr);
  auto dir = fixtures::temp_dir("cli-pipeline");
  const std::string corpus = (dir / "c.jsonl").string();
  ASSERT_EQ(run({"synth", "--out", corpus, "--n-train", "40", "--seed", "3"}).code, kExitOk);
  auto v = run({"validate", "--corpus", corpus});
  EXPECT_EQ(v.code, kExitOk) << v.err;
  EXPECT_NE(v.out.find("train: 40"), std::string::npos) << v.out;

  auto excluded = run({"probegen", "--corpus", corpus, "--profile", "semeval", "--task", "ArgOrd",
                       "--out-dir", (dir / "pg").string()});
  EXPECT_EQ(excluded.code, kExitFailure);
  EXPECT_NE(excluded.err.find("task excluded"), std::string::npos);
  auto no_corpus = run({"probegen", "--profile", "semeval", "--task", "ArgOrd"});
  EXPECT_EQ(no_corpus.code, kExitFailure);

  auto pg = run({"probegen", "--corpus", corpus, "--out-dir", (dir / "pg").string()});
  EXPECT_EQ(pg.code, kExitOk) << pg.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "pg" / "SentLen.jsonl"));
}

TEST(Cli, SeedPrecedence) {
  auto dir = fixtures::temp_dir("cli-seed");
  std::ofstream(dir / "run.cfg") << "seed = 1\nn-train = 12\nn-val = 0\nn-test = 0\n";
  auto synth = [&](const std::string& name, std::vector<std::string> extra) {
    std::vector<std::string> args{"synth", "--config", (dir / "run.cfg").string(), "--out", (dir / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(run(args).code, kExitOk);
    return slurp(dir / name);
  };
  auto direct = [&](std::uint64_t seed) {
    std::ostringstream s;
    write_corpus_jsonl(fixtures::synth_corpus(12, 0, 0, seed), s);
    return s.str();
  };
  {
    EnvGuard env(nullptr);
    EXPECT_EQ(synth("a", {}), direct(1));
  }
  {
    EnvGuard env("2");
    EXPECT_EQ(synth("b", {}), direct(2));
    EXPECT_EQ(synth("c", {"--seed", "3"}), direct(3));
  }
}

TEST(Cli, ConfigKeysAndOverrides) {
  EnvGuard env(nullptr);
  auto dir = fixtures::temp_dir("cli-config");
  std::ofstream(dir / "bad.cfg") << "n-train = 5\nwarp-drive = on\n";
  auto bad = run({"synth", "--config", (dir / "bad.cfg").string(), "--out", (dir / "x.jsonl").string()});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_NE(bad.err.find("warp-drive"), std::string::npos);

  std::ofstream(dir / "ok.cfg") << "n_train = 5\nn-val = 0\nn-test = 0\n";
  auto ok = run({"synth", "--config", (dir / "ok.cfg").string(), "--n-train", "7", "--out",
                 (dir / "y.jsonl").string()});
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_NE(ok.out.find("wrote 7 sentences"), std::string::npos) << ok.out;
}

TEST(Cli, TrainExtractProbeReport) {
  EnvGuard env(nullptr);
  auto dir = fixtures::temp_dir("cli-train");
  const std::string corpus = (dir / "c.jsonl").string();
  ASSERT_EQ(run({"synth", "--out", corpus, "--n-train", "40", "--n-val", "10", "--n-test", "10"}).code, kExitOk);
  auto tr = run({"train", "--corpus", corpus, "--encoder", "cnn", "--epochs", "2", "--out-dir",
                 (dir / "m").string(), "--quiet"});
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "m" / "model.rpck"));
  auto hist = slurp(dir / "m" / "history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);

  auto ex = run({"extract", "--corpus", corpus, "--checkpoint", (dir / "m" / "model.rpck").string(), "--out",
                 (dir / "r.repr").string()});
  ASSERT_EQ(ex.code, kExitOk) << ex.err;
  ASSERT_EQ(run({"probegen", "--corpus", corpus, "--task", "SentLen,TypeHead", "--out-dir", (dir / "pg").string()})
                .code,
            kExitOk);
  auto pr = run({"probe", "--reps", (dir / "r.repr").string(), "--task-file", (dir / "pg" / "SentLen.jsonl").string(),
                 "--task-file", (dir / "pg" / "TypeHead.jsonl").string(), "--grid", "0,0.1", "--out",
                 (dir / "p.csv").string()});
  ASSERT_EQ(pr.code, kExitOk) << pr.err;
  auto r1 = run({"report", "--input", (dir / "p.csv").string()});
  auto r2 = run({"report", "--input", (dir / "p.csv").string()});
  EXPECT_EQ(r1.code, kExitOk);
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_NE(r1.out.find("TypeHead"), std::string::npos);
  EXPECT_EQ(run({"report", "--input", (dir / "p.csv").string(), "--format", "xml"}).code, kExitUsage);
}
