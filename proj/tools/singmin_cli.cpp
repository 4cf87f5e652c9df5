// singmin: run the pipeline stages. Exit 0 pass, 1 audit failure, 2 usage/config, 3 ordering, 4 runtime.
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "singmin/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace singmin;
  CLI::App app{"singmin pipeline"};
  std::string stage = "all", config_path;
  std::optional<std::string> out, mesh;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, delta, eps;
  std::optional<int> samples;

  std::vector<std::string> stages = stage_order();
  stages.push_back("all");
  app.add_option("--stage", stage, "stage to run")->check(CLI::IsMember(stages));
  app.add_option("--config", config_path, "key = value file")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--alpha", alpha, "power-law exponent in (0,1)");
  app.add_option("--delta", delta, "flat-zone width");
  app.add_option("--eps", eps, "planar smoothing scale");
  app.add_option("--mesh", mesh, "solver mesh sizes, e.g. 1/8,1/16");
  app.add_option("--samples", samples, "audit samples per branch");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  PipelineConfig c;
  try {
    if (!config_path.empty()) c.read_file(config_path);
    if (out) c.out = *out;
    if (seed) c.seed = *seed;
    if (alpha) c.alpha = *alpha;
    if (delta) c.delta = *delta;
    if (eps) c.eps_smooth = *eps;
    if (samples) c.samples = *samples;
    if (mesh) c.set("mesh", *mesh);
    c.validate();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const std::vector<std::string> todo = stage == "all" ? stage_order() : std::vector<std::string>{stage};
  std::vector<StageResult> ran;
  int rc = 0;
  try {
    for (const auto& s : todo) {
      ran.push_back(run_stage(s, c));
      const StageResult& r = ran.back();
      double total = 0;
      for (const auto& [k, v] : r.seconds) total += v;
      std::printf("%-9s %s  %.1fs\n", r.name.c_str(), r.pass ? "pass" : "FAIL", total);
      if (!r.pass) rc = 1;
    }
  } catch (const OrderingError& e) {
    std::cerr << "ordering error: " << e.what() << "\n";
    rc = 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    rc = 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    rc = 4;
  }
  try {
    if (!ran.empty()) update_manifest(c, ran);
  } catch (const std::exception& e) {
    std::cerr << "manifest: " << e.what() << "\n";
    if (rc == 0) rc = 4;
  }
  return rc;
}
