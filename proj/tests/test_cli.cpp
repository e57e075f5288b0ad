#include "json.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("pcup_test_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

CliRun pcup(const std::string& args) {
  const std::string out = path("stdout.txt"), err = path("stderr.txt");
  const std::string cmd = std::string(PCUP_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

/// The JSON object printed last on stdout (after the '#' config echo).
nlohmann::json last_json(const std::string& out) { return nlohmann::json::parse(out.substr(out.find('{'))); }

void synth(const std::string& name, const std::string& shape, int n, int seed) {
  const CliRun r = pcup("synth --shape " + shape + " --n " + std::to_string(n) + " --seed " + std::to_string(seed) +
                     " -o " + path(name));
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(pcup("--help").code, 0);
  EXPECT_EQ(pcup("").code, 2);
  EXPECT_EQ(pcup("frobnicate").code, 2);
  EXPECT_EQ(pcup("synth --shape sphere").code, 2);  // missing -o
  const CliRun bad = pcup("synth --shape cube -o " + path("x.xyz"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("cube"), std::string::npos);
  EXPECT_EQ(pcup("upsample-oracle -i a.xyz --gt b.xyz -o c.xyz --rate 0.5").code, 2);
}

TEST(Cli, SynthWritesCloudAndMesh) {
  synth("sphere.xyz", "sphere", 500, 3);
  EXPECT_TRUE(fs::exists(path("sphere.off")));
  std::ifstream in(path("sphere.xyz"));
  std::string line;
  std::size_t points = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++points;
  EXPECT_EQ(points, 500u);
  const CliRun r = pcup("synth --shape line --n 10 -o " + path("line.xyz"));
  EXPECT_EQ(r.code, 0);
  EXPECT_FALSE(fs::exists(path("line.off")));
}

TEST(Cli, DataErrorsExitWithThree) {
  const CliRun r = pcup("eval --pred /nonexistent/p.xyz --gt /nonexistent/g.xyz");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  {
    std::ofstream bad(path("bad.xyz"));
    bad << "0 0 0\n1 nan 2\n";
  }
  const CliRun p = pcup("eval --pred " + path("bad.xyz") + " --gt " + path("bad.xyz"));
  EXPECT_EQ(p.code, 3);
  EXPECT_NE(p.err.find("line 2"), std::string::npos);
  std::ofstream(path("junk.ckpt")) << "not a checkpoint";
  synth("in.xyz", "sphere", 300, 1);
  EXPECT_EQ(pcup("upsample -i " + path("in.xyz") + " -o " + path("o.xyz") + " --checkpoint " + path("junk.ckpt")).code,
            3);
}

TEST(Cli, EvalReportsMetricsAsJson) {
  synth("gt.xyz", "sphere", 800, 5);
  const CliRun same = pcup("eval --pred " + path("gt.xyz") + " --gt " + path("gt.xyz") + " --mesh " + path("gt.off") +
                        " --report " + path("report.json"));
  ASSERT_EQ(same.code, 0) << same.err;
  const auto j = last_json(same.out);
  EXPECT_EQ(j["cd"].get<double>(), 0);
  EXPECT_EQ(j["hd"].get<double>(), 0);
  EXPECT_LT(j["p2f"].get<double>(), 0.01);
  EXPECT_EQ(j["n_points"].get<int>(), 800);
  EXPECT_EQ(j["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("report.json"))), j);
}

TEST(Cli, OracleUpsampleIsDeterministicAndImproves) {
  synth("low.xyz", "torus", 400, 7);
  synth("high.xyz", "torus", 6400, 8);
  const std::string base = "upsample-oracle -i " + path("low.xyz") + " --gt " + path("high.xyz") +
                           " --patch-size 128 --step 0.005 --iters 4 -o ";
  const CliRun a = pcup(base + path("up_a.xyz") + " --trace " + path("trace.csv"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(pcup(base + path("up_b.xyz")).code, 0);
  EXPECT_EQ(slurp(path("up_a.xyz")), slurp(path("up_b.xyz")));
  const auto j = last_json(pcup("eval --pred " + path("up_a.xyz") + " --gt " + path("high.xyz")).out);
  EXPECT_EQ(j["n_points"].get<int>(), 1600);
  const std::string line = a.out.substr(a.out.find("cd(interpolated"));
  const double before = std::stod(line.substr(line.find('=') + 1));
  const double after = std::stod(line.substr(line.rfind('=') + 1));
  EXPECT_LT(after, before);
  EXPECT_EQ(slurp(path("trace.csv")).find("# pcup upsample-oracle config_hash="), 0u);
}

TEST(Cli, ConfigFileMatchesFlags) {
  synth("c_low.xyz", "sphere", 200, 1);
  synth("c_high.xyz", "sphere", 3200, 2);
  std::ofstream(path("run.cfg")) << "# settings\nrate = 4\niters=2\nstep=0.005\npatch-size=64\n";
  const std::string io = " -i " + path("c_low.xyz") + " --gt " + path("c_high.xyz");
  const CliRun file = pcup("upsample-oracle --config " + path("run.cfg") + io + " -o " + path("cf.xyz"));
  const CliRun flags = pcup("upsample-oracle --rate 4 --iters 2 --step 0.005 --patch-size 64" + io + " -o " + path("cl.xyz"));
  ASSERT_EQ(file.code, 0) << file.err;
  ASSERT_EQ(flags.code, 0) << flags.err;
  auto hash = [](const std::string& out) { return out.substr(out.find("# config_hash="), 31); };
  EXPECT_EQ(hash(file.out), hash(flags.out));
  EXPECT_EQ(slurp(path("cf.xyz")), slurp(path("cl.xyz")));
  // the command line wins over the file
  const CliRun over = pcup("upsample-oracle --config " + path("run.cfg") + " --iters 3" + io + " -o " + path("co.xyz"));
  EXPECT_NE(over.out.find("# iters=3"), std::string::npos);
  std::ofstream(path("bad.cfg")) << "colour=blue\n";
  EXPECT_EQ(pcup("upsample-oracle --config " + path("bad.cfg") + io + " -o " + path("x.xyz")).code, 2);
}

TEST(Cli, TrainThenUpsampleIsReproducible) {
  const std::string train = "train --synthetic sphere --patches 2 --low-patch-size 64 --epochs 2 --d 8 --k 4 "
                            "--interp-k 8 --seed 3 --checkpoint ";
  const CliRun t1 = pcup(train + path("n1.ckpt") + " --log " + path("log.csv"));
  ASSERT_EQ(t1.code, 0) << t1.err;
  ASSERT_EQ(pcup(train + path("n2.ckpt")).code, 0);
  EXPECT_EQ(slurp(path("n1.ckpt")), slurp(path("n2.ckpt")));
  EXPECT_TRUE(fs::exists(path("n1.ckpt.cfg")));
  EXPECT_NE(slurp(path("log.csv")).find("epoch,mean_loss,lr\n0,"), std::string::npos);

  synth("u_in.xyz", "sphere", 256, 4);
  const std::string up = "upsample -i " + path("u_in.xyz") + " --checkpoint " + path("n1.ckpt") +
                         " --patch-size 64 --iters 2 -o ";
  ASSERT_EQ(pcup(up + path("u1.xyz")).code, 0);
  ASSERT_EQ(pcup(up + path("u2.xyz")).code, 0);
  EXPECT_EQ(slurp(path("u1.xyz")), slurp(path("u2.xyz")));
  EXPECT_EQ(pcup(up + path("u3.xyz") + " --strategy auto-offset").code, 3);
  EXPECT_EQ(pcup("train --checkpoint " + path("n3.ckpt")).code, 2);  // neither --synthetic nor --dataset
}
