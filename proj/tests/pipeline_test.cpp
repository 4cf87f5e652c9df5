#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "singmin/pipeline.hpp"

using namespace singmin;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("singmin_" + name);
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const int s = std::system((std::string(SINGMIN_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mesh.size(), 2u);
  EXPECT_EQ(c.probe_mesh.size(), 3u);
}

TEST(Config, FileParsingAndOverride) {
  const std::string p = scratch("cfg.txt");
  {
    std::ofstream f(p);
    f << "# comment\nalpha = 0.4\n\ndelta=0.02   # trailing\nmesh = 1/4, 1/8\nseed = 7\n";
  }
  PipelineConfig c;
  c.read_file(p);
  EXPECT_EQ(c.alpha, 0.4);
  EXPECT_EQ(c.delta, 0.02);
  ASSERT_EQ(c.mesh.size(), 2u);
  EXPECT_EQ(c.mesh[0], 0.25);
  EXPECT_EQ(c.mesh[1], 0.125);
  EXPECT_EQ(c.seed, 7u);
  c.set("eps", "2e-5");
  EXPECT_EQ(c.eps_smooth, 2e-5);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsBadInput) {
  PipelineConfig c;
  EXPECT_THROW(c.set("nonsense", "1"), ConfigError);
  EXPECT_THROW(c.set("alpha", "0.5x"), ConfigError);
  EXPECT_THROW(c.set("samples", "12.5"), ConfigError);
  EXPECT_THROW(c.set("mesh", "1/q"), ConfigError);
  for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"alpha", "1"}, {"alpha", "0"}, {"delta", "0.7"}, {"eps", "1e-3"}, {"samples", "200"}, {"mesh", "0.3"},
           {"probe_mesh", "1/128"}, {"perturbations", "0"}}) {
    PipelineConfig d;
    d.set(k, v);
    EXPECT_THROW(d.validate(), ConfigError) << k << "=" << v;
  }
  const std::string p = scratch("bad.txt");
  {
    std::ofstream f(p);
    f << "alpha 0.5\n";
  }
  EXPECT_THROW(c.read_file(p), ConfigError);
  EXPECT_THROW(c.read_file(p + ".missing"), ConfigError);
}

TEST(Config, HashTracksOnlyTheStageKeys) {
  PipelineConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.seed = a.seed + 1;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash({"alpha", "delta"}), b.hash({"alpha", "delta"}));
  EXPECT_NE(a.hash({"seed"}), b.hash({"seed"}));
  b = a;
  b.out = "elsewhere";  // the output directory is not a setting
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Stages, OrderingErrorsWithoutUpstream) {
  PipelineConfig c;
  c.out = scratch("order");
  EXPECT_THROW(run_stage("audit3d", c), OrderingError);
  EXPECT_THROW(run_stage("assemble", c), OrderingError);
  EXPECT_THROW(run_stage("extend", c), OrderingError);
  EXPECT_THROW(run_stage("solve", c), OrderingError);
  EXPECT_THROW(run_stage("nope", c), ConfigError);
}

TEST(Stages, StaleUpstreamIsAnOrderingError) {
  PipelineConfig c;
  c.out = scratch("stale");
  ASSERT_TRUE(run_stage("audit1d", c).pass);
  PipelineConfig d = c;
  d.eps_smooth = 2e-5;
  EXPECT_THROW(run_stage("audit3d", d), OrderingError);
  // a key audit3d reads but audit1d does not leaves the upstream valid
  d = c;
  d.weak_bumps = 3;
  EXPECT_NO_THROW(pipeline_detail::upstream(d, "audit1d"));
}

TEST(Stages, ProfileAndAudit1dPassAndAreIdempotent) {
  PipelineConfig c;
  c.out = scratch("idem");
  std::vector<StageResult> ran{run_stage("profile", c), run_stage("audit1d", c)};
  for (const auto& r : ran) EXPECT_TRUE(r.pass) << r.name << " " << r.report.dump();
  update_manifest(c, ran);
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(c.out)) first[e.path().filename()] = slurp(e.path());
  ran = {run_stage("profile", c), run_stage("audit1d", c)};
  update_manifest(c, ran);
  for (const auto& [name, body] : first) EXPECT_EQ(body, slurp(fs::path(c.out) / name)) << name;

  const auto m = nlohmann::json::parse(slurp(fs::path(c.out) / "manifest.json"));
  EXPECT_EQ(m["config_hash"], c.hash());
  EXPECT_TRUE(m["stages"]["profile"]["pass"].get<bool>());
  EXPECT_TRUE(m["stages"]["audit1d"]["pass"].get<bool>());
  EXPECT_EQ(m["versions"].size(), 7u);
  const auto a = nlohmann::json::parse(slurp(fs::path(c.out) / "audit1d.json"));
  EXPECT_TRUE(a["near_cusp_C"]["stable"].get<bool>());
  EXPECT_GT(a["gamma_measured"].get<double>(), 0);
}

TEST(Cli, ExitCodes) {
  const std::string out = scratch("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("--stage bogus --out " + out), 2);
  EXPECT_EQ(run_cli("--alpha 1.5 --out " + out), 2);
  EXPECT_EQ(run_cli("--mesh 0.3 --out " + out), 2);
  EXPECT_EQ(run_cli("--config /nonexistent/x.cfg"), 2);
  EXPECT_EQ(run_cli("--stage solve --out " + out), 3);
  EXPECT_EQ(run_cli("--stage profile --out " + out), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "manifest.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "profile_gamma.csv"));
  EXPECT_EQ(run_cli("--stage audit1d --seed 3 --samples 240 --out " + out), 0);
}
