#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gpmm/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("gpmm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    // A small, fast configuration.
    spit(dir_ / "config.json", R"({
      "name": "tiny",
      "kernel": "se",
      "source": {"type": "gp", "kernel": {"kernel": "se", "params": {"variance": 1.0, "lengthscale": 1.5}},
                 "grid": {"start": 0.0, "stop": 10.0, "step": 0.25}},
      "sensing": {"N": 24, "M": 3, "spacing": 0.5, "center_step": 0.25,
                  "measurement_noise": 0.01, "observation_noise": 1e-4},
      "fit": {"restarts": 1, "max_iterations": 60},
      "seed": 5
    })");
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Runs the CLI with `args`; returns its exit status and keeps stderr.
  int run(const std::string& args) {
    const std::string cmd = std::string(GPMM_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    stderr_ = slurp(dir_ / "stderr.txt");
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  [[nodiscard]] std::string at(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::string stderr_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("replicate nonsense"), 2);
}

TEST_F(Cli, SimulateIsDeterministic) {
  ASSERT_EQ(run("simulate --config " + at("config.json") + " --output " + at("a")), 0) << stderr_;
  ASSERT_EQ(run("simulate --config " + at("config.json") + " --output " + at("b")), 0) << stderr_;
  for (const char* f : {"truth.csv", "observations.csv", "observations.csv.json", "config.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  ASSERT_EQ(run("simulate --config " + at("config.json") + " --seed 6 --output " + at("c")), 0) << stderr_;
  EXPECT_NE(slurp(dir_ / "a" / "observations.csv"), slurp(dir_ / "c" / "observations.csv"));
}

TEST_F(Cli, FlagsOverrideConfig) {
  ASSERT_EQ(run("simulate --config " + at("config.json") + " -N 10 -M 5 --output " + at("s")), 0) << stderr_;
  gpmm::ObservationMeta meta;
  const gpmm::ObservationSet obs = gpmm::read_observations(at("s/observations.csv"), &meta);
  EXPECT_EQ(obs.n(), 10);
  EXPECT_EQ(obs.m(), 5);
  const gpmm::json cfg = gpmm::read_json(at("s/config.json"));
  EXPECT_EQ(cfg["sensing"]["N"], 10);
  EXPECT_EQ(cfg["sensing"]["spacing"], 0.5);  // from the file
}

TEST_F(Cli, FullPipeline) {
  ASSERT_EQ(run("simulate --config " + at("config.json") + " --output " + at("run")), 0) << stderr_;
  const std::string obs = at("run/observations.csv");
  ASSERT_EQ(run("fit --config " + at("config.json") + " --observations " + obs + " --out " + at("model.json")), 0)
      << stderr_;
  const gpmm::json model = gpmm::read_json(at("model.json"));
  EXPECT_TRUE(model.contains("offset"));
  EXPECT_TRUE(model["fit"]["nll"].is_number());
  const auto trace = model["fit"]["trace"].get<std::vector<double>>();
  for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1]);

  ASSERT_EQ(run("infer --model " + at("model.json") + " --observations " + obs + " --grid-from " + at("run/truth.csv") +
                " --out " + at("post.csv")),
            0)
      << stderr_;
  const gpmm::Estimate post = gpmm::read_estimate(at("post.csv"));
  EXPECT_EQ(post.x, gpmm::read_signal(at("run/truth.csv")).grid);
  ASSERT_TRUE(post.variance.has_value());
  EXPECT_GE(post.variance->minCoeff(), 0.0);

  ASSERT_EQ(run("baseline --mode pseudoinverse --observations " + obs + " --out " + at("pinv.csv")), 0) << stderr_;
  ASSERT_EQ(run("baseline --mode ridge --ridge 0.1 --observations " + obs + " --out " + at("ridge.csv")), 0) << stderr_;
  ASSERT_EQ(run("baseline --mode gp-standard --config " + at("config.json") + " --observations " + obs +
                " --grid 0:10:0.25 --out " + at("gp.csv")),
            0)
      << stderr_;
  EXPECT_FALSE(gpmm::read_estimate(at("pinv.csv")).variance.has_value());
  EXPECT_TRUE(gpmm::read_estimate(at("gp.csv")).variance.has_value());

  ASSERT_EQ(run("psd --input " + at("post.csv") + " --out " + at("psd.csv")), 0) << stderr_;
  ASSERT_EQ(run("psd --input " + at("run/truth.csv") + " --column value --out " + at("psd_truth.csv")), 0) << stderr_;
  EXPECT_EQ(gpmm::read_psd(at("psd.csv")).power.size(), gpmm::read_psd(at("psd_truth.csv")).power.size());

  ASSERT_EQ(run("compare --truth " + at("run/truth.csv") + " --observations " + obs + " --estimate gpmm=" +
                at("post.csv") + " --estimate gp=" + at("gp.csv") + " --estimate pinv=" + at("pinv.csv") + " --out " +
                at("report.json")),
            0)
      << stderr_;
  const gpmm::json report = gpmm::read_json(at("report.json"));
  for (const char* m : {"gpmm", "gp", "pinv"}) EXPECT_TRUE(report["methods"][m]["mse"].is_number()) << m;
  EXPECT_TRUE(report["methods"]["gpmm"]["coverage"].is_number());
  EXPECT_TRUE(report["methods"]["pinv"]["coverage"].is_null());
}

TEST_F(Cli, InputsAreNotModified) {
  ASSERT_EQ(run("simulate --config " + at("config.json") + " --output " + at("run")), 0) << stderr_;
  const std::string before = slurp(dir_ / "run" / "observations.csv");
  ASSERT_EQ(run("baseline --mode pseudoinverse --observations " + at("run/observations.csv") + " --out " + at("p.csv")),
            0);
  EXPECT_EQ(slurp(dir_ / "run" / "observations.csv"), before);
}

TEST_F(Cli, SchemaErrorsExitTwoAndNameLineAndField) {
  spit(dir_ / "obs.csv", "i,j,x,y\n0,0,1.0,2.0\n0,1,abc,2.0\n");
  EXPECT_EQ(run("baseline --mode pseudoinverse --observations " + at("obs.csv") + " --out " + at("o.csv")), 2);
  EXPECT_NE(stderr_.find(":3:"), std::string::npos) << stderr_;
  EXPECT_NE(stderr_.find("'x'"), std::string::npos) << stderr_;

  spit(dir_ / "bad.json", R"({"sensing": {"N": "lots"}})");
  EXPECT_EQ(run("simulate --config " + at("bad.json") + " --output " + at("x")), 2);
  EXPECT_NE(stderr_.find("sensing.N"), std::string::npos) << stderr_;

  spit(dir_ / "model.json", R"({"kernel": "se", "params": {"lengthscale": 1}, "observation_noise": 0.1})");
  spit(dir_ / "o2.csv", "i,j,x,y\n0,0,1.0,2.0\n");
  EXPECT_EQ(run("infer --model " + at("model.json") + " --observations " + at("o2.csv") + " --grid 0:1:0.5 --out " +
                at("p.csv")),
            2);
  EXPECT_NE(stderr_.find("measurement_noise"), std::string::npos) << stderr_;
}

TEST_F(Cli, NumericalFailureExitsThree) {
  // Covariance entries overflow to infinity: no jitter can rescue the factorization.
  spit(dir_ / "model.json", R"({"kernel": "se", "params": {"variance": 1e308, "lengthscale": 1},
    "measurement_noise": 1e308, "observation_noise": 1e308,
    "weights": {"mode": "shared", "stencil": [0.5, 0.5]}})");
  spit(dir_ / "o.csv", "i,j,x,y\n0,0,0,1\n0,1,0,1\n1,0,1,2\n1,1,1,2\n");
  EXPECT_EQ(run("infer --model " + at("model.json") + " --observations " + at("o.csv") + " --grid 0:1:0.5 --out " +
                at("p.csv")),
            3)
      << stderr_;
}
