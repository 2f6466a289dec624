#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "wordlearn/experiment.hpp"
#include "wordlearn/synth.hpp"

using namespace wordlearn;

namespace {

struct Cli {
  int code = -1;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wordlearn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Cli cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(WORDLEARN_CLI_PATH) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  Cli r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = fs::exists(err) ? read_text(err) : "";
  return r;
}

// A small corpus with three rare words, written next to a roster file.
struct Inputs {
  fs::path dir;
  std::vector<std::string> roster;
  std::string args;  // --corpus --test --words
};

Inputs small_inputs(const std::string& name) {
  Inputs in;
  in.dir = scratch(name);
  SynthConfig sc;
  sc.topics = 4;
  sc.train_articles = 60;
  sc.test_articles = 4;
  sc.rare_words = 3;
  auto c = generate_synth(sc);
  write_corpus(in.dir / "train.txt", c.train);
  write_corpus(in.dir / "test.txt", c.test);
  std::string roster;
  for (const auto& w : c.roster) roster += w + "\n";
  write_text(in.dir / "words.txt", roster);
  in.roster = c.roster;
  in.args = " --corpus " + (in.dir / "train.txt").string() + " --test " + (in.dir / "test.txt").string() + " --words " +
            (in.dir / "words.txt").string();
  return in;
}

const std::string kTiny = " --hidden 8 --steps 10 --batch 4 --epochs 1 --fs_epochs 2 --shots 1,10 --rows 0,3 --replay 5";

void pipeline(const Inputs& in, const fs::path& out) {
  const std::string common = in.args + kTiny + " --out " + out.string() + " -q";
  ASSERT_EQ(cli("prepare" + common, in.dir).code, 0);
  ASSERT_EQ(cli("pretrain" + common, in.dir).code, 0);
  ASSERT_EQ(cli("fewshot --similarity true" + common, in.dir).code, 0);
  ASSERT_EQ(cli("report " + out.string() + " -q", in.dir).code, 0);
}

}  // namespace

TEST(Settings, ConfigFileParsing) {
  std::istringstream in("# comment\nhidden = 64  # trailing\n\n  fs_lr=0.5\npreset = desk\n");
  auto s = parse_config(in);
  EXPECT_EQ(s.at("hidden"), "64");
  EXPECT_EQ(s.at("fs_lr"), "0.5");
  EXPECT_EQ(s.at("preset"), "desk");
  std::istringstream bad("hidden 64\n");
  EXPECT_THROW(parse_config(bad), UsageError);
}

TEST(Settings, PresetThenConfigThenFlags) {
  auto desk = make_plan("desk", {}, {});
  EXPECT_EQ(desk.pretrain.model.hidden_size, 128u);
  EXPECT_EQ(desk.pretrain.epochs, 8u);
  EXPECT_EQ(desk.vocab.max_size, 5000u);
  EXPECT_EQ(desk.fewshot.replay_size, 50u);
  auto paper = make_plan("paper", {}, {});
  EXPECT_EQ(paper.pretrain.model.hidden_size, 1500u);
  EXPECT_DOUBLE_EQ(paper.pretrain.model.p_keep, 0.35);
  EXPECT_EQ(paper.fewshot.replay_size, 100u);
  EXPECT_DOUBLE_EQ(paper.fewshot.lr, 0.01);

  auto layered = make_plan("desk", {{"hidden", "64"}, {"epochs", "3"}}, {{"hidden", "32"}});
  EXPECT_EQ(layered.pretrain.model.hidden_size, 32u);
  EXPECT_EQ(layered.pretrain.epochs, 3u);
  EXPECT_THROW(make_plan("desk", {{"hiden", "3"}}, {}), UsageError);
  EXPECT_THROW(make_plan("huge", {}, {}), UsageError);
  EXPECT_THROW(make_plan("desk", {}, {{"hidden", "-3"}}), UsageError);
  EXPECT_THROW(make_plan("desk", {}, {{"modes", "sideways"}}), UsageError);
}

TEST(Settings, FingerprintIgnoresOutputAndJobs) {
  auto a = make_plan("desk", {}, {{"out", "/tmp/a"}, {"jobs", "1"}});
  auto b = make_plan("desk", {}, {{"out", "/tmp/b"}, {"jobs", "4"}});
  auto c = make_plan("desk", {}, {{"fs_lr", "0.2"}});
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_NE(fingerprint(a), fingerprint(c));
  EXPECT_EQ(fingerprint(a).size(), 16u);
}

TEST(Cli, UsageErrorsExitOne) {
  const fs::path dir = scratch("usage");
  EXPECT_EQ(cli("", dir).code, 1);
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
  EXPECT_EQ(cli("prepare --hidden abc --out " + dir.string(), dir).code, 1);
  EXPECT_EQ(cli("prepare --preset huge --out " + dir.string(), dir).code, 1);
  EXPECT_EQ(cli("prepare --out " + dir.string(), dir).code, 1);  // no corpus given
  EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
  const Inputs in = small_inputs("data");
  EXPECT_EQ(cli("prepare --corpus /nonexistent/train.txt --out " + (in.dir / "o").string(), in.dir).code, 2);
  write_text(in.dir / "absent.txt", in.roster[0] + "\nqwertyuiop\n");
  const Cli r = cli("prepare --corpus " + (in.dir / "train.txt").string() + " --words " + (in.dir / "absent.txt").string() +
                        " --out " + (in.dir / "o").string(),
                    in.dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("qwertyuiop"), std::string::npos) << r.err;
  EXPECT_EQ(cli("pretrain --out " + (in.dir / "missing").string(), in.dir).code, 2);
  const fs::path empty = scratch("empty_report");
  EXPECT_EQ(cli("report " + empty.string(), in.dir).code, 2);
  write_text(empty / "results.csv", results_csv({}));
  EXPECT_EQ(cli("report " + empty.string(), in.dir).code, 2);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const Inputs in = small_inputs("env");
  const fs::path out = in.dir / "from_env";
  const std::string cmd = "WORDLEARN_OUT=" + out.string() + " " + WORDLEARN_CLI_PATH + " prepare -q " + in.args;
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
}

TEST(Cli, PipelineWritesFingerprintedOutputs) {
  const Inputs in = small_inputs("pipeline");
  const fs::path out = in.dir / "out";
  pipeline(in, out);
  const auto manifest = read_json(out / "manifest.json");
  const std::string fp = manifest.at("fingerprint");
  EXPECT_EQ(manifest.at("words").size(), 3u);
  for (const auto& w : manifest.at("words")) {
    EXPECT_EQ(w.at("train"), 10);
    EXPECT_EQ(w.at("test"), 10);
  }
  EXPECT_EQ(csv_fingerprint(read_text(out / "pretrain_loss.csv")).size(), 16u);
  EXPECT_FALSE(load_checkpoint(out / "model.ck").metadata.at("fingerprint").get<std::string>().empty());
  const std::string results = read_text(out / "results.csv");
  EXPECT_EQ(csv_fingerprint(results).size(), 16u);
  EXPECT_EQ(read_json(out / "results.json").at("fingerprint"), csv_fingerprint(results));
  for (const char* f : {"curves.csv", "scatter.csv", "breakdown.csv", "similarity_correlation.csv"})
    EXPECT_EQ(csv_fingerprint(read_text(out / "report" / f)), csv_fingerprint(results)) << f;
  EXPECT_EQ(read_json(out / "report" / "ttests.json").at("fingerprint"), csv_fingerprint(results));

  std::istringstream rs(results);
  const auto runs = parse_results_csv(rs);
  // 3 words x (optimize, centroid) x 2 shots x 2 rows.
  EXPECT_EQ(runs.size(), 24u);
  const Report rep = aggregate_report(runs);
  EXPECT_EQ(read_text(out / "report" / "curves.csv"), curves_csv(rep, csv_fingerprint(results)));
  EXPECT_EQ(read_text(out / "report" / "scatter.csv"), scatter_csv(rep, csv_fingerprint(results)));
  EXPECT_EQ(rep.scatter.size(), 3u);
  EXPECT_TRUE(rep.strategy_test.has_value());
}

TEST(Cli, RerunIsByteIdentical) {
  const Inputs in = small_inputs("rerun");
  pipeline(in, in.dir / "a");
  pipeline(in, in.dir / "b");
  for (const char* f : {"vocab.json", "train_without_words.txt", "model.ck", "pretrain_loss.csv", "results.csv",
                        "results.json", "similarity.csv", "report/curves.csv", "report/ttests.json"})
    EXPECT_EQ(read_text(in.dir / "a" / f), read_text(in.dir / "b" / f)) << f;
}

TEST(Cli, JobsDoNotChangeResults) {
  const Inputs in = small_inputs("jobs");
  const fs::path out = in.dir / "out";
  pipeline(in, out);
  const std::string one = read_text(out / "results.csv");
  ASSERT_EQ(cli("fewshot --similarity true --jobs 3 -q" + in.args + kTiny + " --out " + out.string(), in.dir).code, 0);
  EXPECT_EQ(read_text(out / "results.csv"), one);
}

TEST(Cli, ZeroEpochPretrainingIsAllowed) {
  const Inputs in = small_inputs("epochs0");
  const fs::path out = in.dir / "out";
  const std::string common = in.args + " --hidden 8 --steps 10 --batch 4 --epochs 0 -q --out " + out.string();
  ASSERT_EQ(cli("prepare" + common, in.dir).code, 0);
  ASSERT_EQ(cli("pretrain" + common, in.dir).code, 0);
  EXPECT_EQ(load_checkpoint(out / "model.ck").metadata.at("epochs_completed"), 0);
  EXPECT_EQ(read_text(out / "pretrain_loss.csv").find("\n0,"), std::string::npos);
}

TEST(Cli, ConfigFileAndFlagOverride) {
  const Inputs in = small_inputs("config");
  const fs::path out = in.dir / "out";
  write_text(in.dir / "plan.cfg", "# small plan\nhidden = 6\nsteps = 10\nbatch = 4\nepochs = 1\n");
  const std::string common = in.args + " -q --config " + (in.dir / "plan.cfg").string() + " --out " + out.string();
  ASSERT_EQ(cli("prepare" + common, in.dir).code, 0);
  ASSERT_EQ(cli("pretrain --hidden 5" + common, in.dir).code, 0);
  EXPECT_EQ(load_checkpoint(out / "model.ck").config.hidden_size, 5u);
  write_text(in.dir / "bad.cfg", "hiden = 6\n");
  EXPECT_EQ(cli("prepare --config " + (in.dir / "bad.cfg").string() + " --out " + out.string(), in.dir).code, 1);
}

TEST(Cli, SynthWritesCorpusAndRoster) {
  const fs::path dir = scratch("synth");
  ASSERT_EQ(cli("synth -q --synth_seed 3 --out " + dir.string(), dir).code, 0);
  const auto roster = load_roster(dir / "synth_words.txt");
  EXPECT_EQ(roster.size(), 20u);
  const auto train = load_corpus(dir / "synth_train.txt");
  for (const auto& w : roster) EXPECT_EQ(count_word(train, w), 20u);
}
