// Runs the dbgl executable end to end on small synthetic datasets.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "commands.h"
#include "dbgl/data.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DBGL_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dbgl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
  }

  // 60 episodes over V variables, written with the given seed.
  void synth(const std::string& out, int variables = 4, int seed = 5) const {
    write("synth.json", json{{"num_variables", variables},
                             {"num_episodes", 60},
                             {"horizon", 24.0},
                             {"expected_observations", std::vector<double>(variables, 6.0)}}
                            .dump());
    ASSERT_EQ(run("synth --config " + path("synth.json") + " --seed " + std::to_string(seed) +
                  " --out " + path(out)),
              0);
  }

  std::string toy_train(const std::string& data, const std::string& out) const {
    return "train --data " + path(data) + " --out " + path(out) +
           " --hidden-dim 8 --codebook-size 8 --batch-size 8 --epochs 3 --seed 2";
  }

  fs::path dir_;
};

TEST_F(Cli, SynthRoundTripsAndIsReproducible) {
  synth("a");
  synth("b");
  for (const char* f : {"variables.csv", "observations.csv", "labels.csv", "splits.csv"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  const auto vars = dbgl::data::read_variables(dir_ / "a" / "variables.csv");
  EXPECT_EQ(vars.size(), 4u);
  const dbgl::data::Dataset ds = dbgl::data::load_dataset(
      dir_ / "a" / "observations.csv", dir_ / "a" / "labels.csv", 24.0, vars);
  EXPECT_EQ(ds.size(), 60u);
  EXPECT_EQ(ds.variables, vars);
}

TEST_F(Cli, TrainWritesOneHistoryEntryPerEpochAndAblationFlags) {
  synth("d");
  ASSERT_EQ(run(toy_train("d", "t") + " --ablate tde --ablate te"), 0);
  const json report = dbgl::cli::read_json(dir_ / "t" / "report.json");
  EXPECT_EQ(report.at("history").size(), 3u);
  EXPECT_FALSE(report.at("flags").at("use_tde").get<bool>());
  EXPECT_FALSE(report.at("flags").at("use_te").get<bool>());
  EXPECT_TRUE(report.at("flags").at("use_sna").get<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "t" / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(dir_ / "t" / "timing.json"));
  // Flags override the config file.
  write("train.json", R"({"epochs": 1, "hidden_dim": 8, "codebook_size": 8})");
  ASSERT_EQ(run("train --config " + path("train.json") + " --epochs 2 --data " + path("d") +
                " --out " + path("t2")),
            0);
  const json r2 = dbgl::cli::read_json(dir_ / "t2" / "report.json");
  EXPECT_EQ(r2.at("history").size(), 2u);
  EXPECT_EQ(r2.at("config").at("hidden_dim"), 8);
}

TEST_F(Cli, SameSeedGivesByteIdenticalReports) {
  synth("d");
  ASSERT_EQ(run(toy_train("d", "r1")), 0);
  ASSERT_EQ(run(toy_train("d", "r2")), 0);
  EXPECT_EQ(slurp(dir_ / "r1" / "report.json"), slurp(dir_ / "r2" / "report.json"));
  EXPECT_EQ(slurp(dir_ / "r1" / "checkpoint.json"), slurp(dir_ / "r2" / "checkpoint.json"));
}

TEST_F(Cli, EvalLeaveOutZeroMatchesPlainAndSweepWritesFive) {
  synth("d", 10);
  ASSERT_EQ(run(toy_train("d", "t")), 0);
  const std::string ck = " --checkpoint " + path("t/checkpoint.json") + " --data " + path("d");
  ASSERT_EQ(run("eval" + ck + " --out " + path("plain")), 0);
  ASSERT_EQ(run("eval" + ck + " --leave-out 0 --out " + path("zero")), 0);
  EXPECT_EQ(slurp(dir_ / "plain" / "report.json"), slurp(dir_ / "zero" / "report.json"));
  ASSERT_EQ(run("eval" + ck + " --sweep --seed 4 --out " + path("sweep")), 0);
  ASSERT_EQ(run("eval" + ck + " --sweep --seed 4 --out " + path("sweep2")), 0);
  for (const char* rate : {"0.1", "0.2", "0.3", "0.4", "0.5"}) {
    const fs::path f = dir_ / "sweep" / ("report_leave_out_" + std::string(rate) + ".json");
    ASSERT_TRUE(fs::exists(f)) << rate;
    const json r = dbgl::cli::read_json(f);
    EXPECT_EQ(r.at("leave_out").at("hidden").size(),
              static_cast<std::size_t>(std::stod(rate) * 10 + 1e-9));
    EXPECT_EQ(slurp(f), slurp(dir_ / "sweep2" / f.filename()));
  }
}

// Test episodes may run past the training horizon; their intervals are capped.
TEST_F(Cli, EvalAcceptsTimesBeyondTrainingHorizon) {
  synth("d");
  write("tmax.json", R"({"t_max": 2.0, "epochs": 1, "hidden_dim": 8, "codebook_size": 8})");
  ASSERT_EQ(run("train --config " + path("tmax.json") + " --data " + path("d") + " --out " +
                path("t")),
            0);
  EXPECT_EQ(run("eval --checkpoint " + path("t/checkpoint.json") + " --data " + path("d") +
                " --split all --out " + path("e")),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "e" / "report.json"));
}

TEST_F(Cli, EvalRejectsIncompatibleData) {
  synth("d", 4);
  synth("other", 3, 6);
  ASSERT_EQ(run(toy_train("d", "t")), 0);
  EXPECT_NE(run("eval --checkpoint " + path("t/checkpoint.json") + " --data " + path("other") +
                " --out " + path("e")),
            0);
}

TEST_F(Cli, AnalyzeOrdersRatesAndRefusesSingleVariable) {
  write("two.json", json{{"num_variables", 2},
                         {"decay_rates", {0.05, 2.0}},
                         {"expected_observations", {32.0, 32.0}},
                         {"horizon", 8.0},
                         {"num_episodes", 300}}
                        .dump());
  ASSERT_EQ(run("synth --config " + path("two.json") + " --seed 1 --out " + path("d")), 0);
  ASSERT_EQ(run("analyze --data " + path("d") + " --out " + path("a")), 0);
  std::ifstream rates(dir_ / "a" / "decay_rates.csv");
  std::string header, row0, row1;
  std::getline(rates, header);
  std::getline(rates, row0);
  std::getline(rates, row1);
  EXPECT_EQ(header, "variable,lambda,residual,n_bins");
  const auto lambda = [](const std::string& row) {
    const auto a = row.find(',');
    return std::stod(row.substr(a + 1, row.find(',', a + 1) - a - 1));
  };
  EXPECT_LT(lambda(row0), lambda(row1));
  std::ifstream kw(dir_ / "a" / "kruskal_wallis.csv");
  std::getline(kw, header);
  EXPECT_EQ(header, "H,df,p");

  write("one.json", json{{"num_variables", 1},
                         {"expected_observations", {20.0}},
                         {"horizon", 8.0},
                         {"num_episodes", 100}}
                        .dump());
  ASSERT_EQ(run("synth --config " + path("one.json") + " --out " + path("single")), 0);
  const std::string cmd = std::string(DBGL_BINARY) + " analyze --data " + path("single") +
                          " --out " + path("a1") + " > " + path("msg.txt");
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_NE(slurp(dir_ / "msg.txt").find("not run"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "a1" / "kruskal_wallis.csv"));
}

TEST_F(Cli, GradcheckPassesAndCatchesCorruptedRule) {
  EXPECT_EQ(run("gradcheck --out " + path("g")), 0);
  const json g = dbgl::cli::read_json(dir_ / "g" / "gradcheck.json");
  std::set<std::string> names;
  for (const auto& b : g.at("blocks")) EXPECT_TRUE(names.insert(b.at("name")).second);
  EXPECT_LT(g.at("max_rel_err").get<double>(), 1e-4);
  EXPECT_NE(run("gradcheck --corrupt-rule sigmoid"), 0);
}

TEST_F(Cli, ErrorsGiveNonzeroStatus) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("train --data " + path("missing") + " --out " + path("x")), 0);
  synth("d");
  EXPECT_NE(run(toy_train("d", "t") + " --ablate bogus"), 0);
  write("bad.json", R"({"epoch": 3})");
  EXPECT_NE(run("train --config " + path("bad.json") + " --data " + path("d") + " --out " +
                path("t")),
            0);
}

}  // namespace
