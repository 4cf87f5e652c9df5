#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "assemble6d.hpp"
#include "audit1d.hpp"
#include "extend.hpp"
#include "profile.hpp"
#include "revolve.hpp"
#include "sigma_extension.hpp"
#include "solvecheck.hpp"

namespace singmin {

struct OrderingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------------------------
// configuration

struct PipelineConfig {
  double alpha = 0.5, delta = 1e-2, eps_smooth = 1e-5;
  int samples = 256;  // audit samples per branch
  int pairs_6d = 100000;
  int sigma_samples = 300;
  int el_points = 1000;
  int weak_bumps = 20;
  int extension_checks = 1000;
  std::vector<double> mesh{1.0 / 8, 1.0 / 16};
  std::vector<double> probe_mesh{1.0 / 8, 1.0 / 16, 1.0 / 32};
  int solve_max_iter = 30;   // vector solves, every h
  int probe_max_iter = 40;   // scalar solves at h = 1/8, scaled with h
  int perturbations = 20;
  double solve_tol = 1e-8;
  std::uint64_t seed = 20240611;
  std::string out = "out";

  nlohmann::json to_json() const {
    return {{"alpha", alpha},
            {"delta", delta},
            {"eps_smooth", eps_smooth},
            {"samples", samples},
            {"pairs_6d", pairs_6d},
            {"sigma_samples", sigma_samples},
            {"el_points", el_points},
            {"weak_bumps", weak_bumps},
            {"extension_checks", extension_checks},
            {"mesh", mesh},
            {"probe_mesh", probe_mesh},
            {"solve_max_iter", solve_max_iter},
            {"probe_max_iter", probe_max_iter},
            {"perturbations", perturbations},
            {"solve_tol", solve_tol},
            {"seed", seed}};
  }

  // hash over the keys a stage reads (all keys when empty)
  std::string hash(const std::vector<std::string>& keys = {}) const {
    const nlohmann::json j = to_json();
    nlohmann::json sub = nlohmann::json::object();
    if (keys.empty()) sub = j;
    for (const auto& k : keys) sub[k] = j.at(k);
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(sub.dump());
    return os.str();
  }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("config: " + what);
    };
    need(alpha > 0 && alpha < 1, "alpha must lie in (0,1)");
    need(delta > 0 && delta < 0.5, "delta must lie in (0,0.5)");
    need(eps_smooth > 0 && 10 * eps_smooth <= delta / 100, "eps must satisfy 0 < 10 eps <= delta/100");
    need(samples >= 232, "samples must be >= 232");  // the cusp log grids take 226
    need(pairs_6d >= 1000, "pairs_6d must be >= 1000");
    need(sigma_samples >= 20, "sigma_samples must be >= 20");
    need(el_points > 0 && weak_bumps > 0 && extension_checks >= 10 && perturbations > 0, "counts must be positive");
    need(!mesh.empty() && !probe_mesh.empty(), "mesh lists must be nonempty");
    for (const auto* L : {&mesh, &probe_mesh})
      for (double h : *L) {
        const double n = 1 / h;
        need(h > 0 && std::abs(n - std::round(n)) < 1e-9 && n >= 2 && n <= 64, "mesh h must be 1/N, 2 <= N <= 64");
      }
    need(solve_max_iter > 0 && probe_max_iter > 0 && solve_tol > 0, "solver settings must be positive");
  }

  // key = value; h lists are comma separated
  void set(const std::string& key, const std::string& v) {
    auto num = [&] {
      std::size_t pos = 0;
      double x;
      try {
        x = std::stod(v, &pos);
      } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
      }
      if (pos != v.size()) throw ConfigError("config: bad number for " + key + ": " + v);
      return x;
    };
    auto integer = [&] {
      const double x = num();
      if (x != std::floor(x)) throw ConfigError("config: " + key + " must be an integer");
      return x;
    };
    auto list = [&] {
      std::vector<double> out;
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        const auto slash = item.find('/');
        try {
          out.push_back(slash == std::string::npos
                            ? std::stod(item)
                            : std::stod(item.substr(0, slash)) / std::stod(item.substr(slash + 1)));
        } catch (const std::exception&) {
          throw ConfigError("config: bad mesh entry " + item);
        }
      }
      return out;
    };
    if (key == "alpha") alpha = num();
    else if (key == "delta") delta = num();
    else if (key == "eps" || key == "eps_smooth") eps_smooth = num();
    else if (key == "samples") samples = int(integer());
    else if (key == "pairs_6d") pairs_6d = int(integer());
    else if (key == "sigma_samples") sigma_samples = int(integer());
    else if (key == "el_points") el_points = int(integer());
    else if (key == "weak_bumps") weak_bumps = int(integer());
    else if (key == "extension_checks") extension_checks = int(integer());
    else if (key == "mesh") mesh = list();
    else if (key == "probe_mesh") probe_mesh = list();
    else if (key == "solve_max_iter") solve_max_iter = int(integer());
    else if (key == "probe_max_iter") probe_max_iter = int(integer());
    else if (key == "perturbations") perturbations = int(integer());
    else if (key == "solve_tol") solve_tol = num();
    else if (key == "seed") seed = std::uint64_t(integer());
    else if (key == "out") out = v;
    else throw ConfigError("config: unknown key " + key);
  }

  void read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
      ++no;
      line = line.substr(0, line.find('#'));
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(no) + " has no '='");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
};

// ---------------------------------------------------------------------------------------------
// stage plumbing

struct StageResult {
  explicit StageResult(std::string n) : name(std::move(n)) {}
  std::string name;
  bool pass = false;
  nlohmann::json report;                 // written as <name>.json
  std::vector<std::string> outputs;      // files written, relative to out
  std::map<std::string, double> seconds;  // wall time of the parts (never written)
};

namespace pipeline_detail {

inline const std::map<std::string, std::vector<std::string>>& stage_keys() {
  static const std::map<std::string, std::vector<std::string>> k = {
      {"profile", {"alpha"}},
      {"audit1d", {"alpha", "delta", "eps_smooth", "samples"}},
      {"audit3d", {"alpha", "delta", "eps_smooth", "samples", "el_points", "weak_bumps", "seed"}},
      {"assemble", {"alpha", "delta", "eps_smooth", "samples", "el_points", "weak_bumps", "seed", "pairs_6d"}},
      {"extend",
       {"alpha", "delta", "eps_smooth", "samples", "el_points", "weak_bumps", "seed", "pairs_6d", "sigma_samples",
        "extension_checks"}},
      {"solve", {}}};
  return k;
}

class Clock {
 public:
  Clock() : t0_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto t = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(t - t0_).count();
    t0_ = t;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

inline std::filesystem::path out_path(const PipelineConfig& c, const std::string& f) {
  return std::filesystem::path(c.out) / f;
}

template <class Writer>
void write_file(const PipelineConfig& c, StageResult& r, const std::string& f, Writer&& w) {
  std::ofstream os(out_path(c, f), std::ios::binary);
  if (!os) throw ConfigError("cannot write " + out_path(c, f).string());
  w(os);
  r.outputs.push_back(f);
}

inline void write_report(const PipelineConfig& c, StageResult& r) {
  r.report["stage"] = r.name;
  r.report["config_hash"] = c.hash(stage_keys().at(r.name));
  r.report["pass"] = r.pass;
  write_file(c, r, r.name + ".json", [&](std::ostream& os) { os << r.report.dump(2) << "\n"; });
}

// upstream report; missing or produced under other settings is an ordering error
inline nlohmann::json upstream(const PipelineConfig& c, const std::string& stage) {
  const auto p = out_path(c, stage + ".json");
  std::ifstream in(p);
  if (!in) throw OrderingError("stage '" + stage + "' has not been run in " + c.out);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception&) {
    throw OrderingError("stage '" + stage + "' output is unreadable: " + p.string());
  }
  if (j.value("config_hash", "") != c.hash(stage_keys().at(stage)))
    throw OrderingError("stage '" + stage + "' output was produced with different settings; rerun it");
  return j;
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------------------------
// stages

// profile curve table, cusp expansion and the power-law constants
inline StageResult stage_profile(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("profile");
  Clock clk;
  const ProfileCurve& P = profile();
  const ExpansionFit fit = P.cusp_expansion_fit();
  const double e = 1e-6;
  const double lead_ratio = P.phi(-1 + e, 2) * std::sqrt(e) / ProfileCurve::kLead;
  double even = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = -1 + 2.0 * i / 1000;
    even = std::max(even, std::abs(P.phi(x) - P.phi(-x)));
  }
  const double tip = std::max(std::abs(P.phi(-1) - 1), std::abs(P.phi(1) - 1));
  const double tangent = std::abs(P.phi(-1, 1) + 1);
  r.seconds["expansion"] = clk.lap();

  nlohmann::json constants = nlohmann::json::array();
  double const_err = 0;
  std::vector<double> alphas{0.25, 0.5, 0.75};
  if (std::find(alphas.begin(), alphas.end(), c.alpha) == alphas.end()) alphas.push_back(c.alpha);
  for (double a : alphas) {
    auto g = [a](double t) { return std::pow(t, 1 - a); };
    const double s = weighted_avg_s(g, 0.1, 0.0), d = deriv_ratio_d(g, 0.4);
    const_err = std::max({const_err, std::abs(s - 1 / (3 - a)), std::abs(d - 1 / (2 - a))});
    constants.push_back({{"alpha", a}, {"s", s}, {"s_exact", 1 / (3 - a)}, {"d", d}, {"d_exact", 1 / (2 - a)}});
  }
  r.seconds["constants"] = clk.lap();

  r.report["expansion_fit"] = {{"c2", fit.c2}, {"c3", fit.c3}, {"c4", fit.c4}, {"max_rel_residual", fit.max_rel_residual}};
  r.report["cusp_second_derivative"] = {{"eps", e}, {"ratio_to_leading", lead_ratio}};
  r.report["cusp"] = {{"tip_error", tip}, {"tangent_error", tangent}, {"evenness_error", even}};
  r.report["power_law_constants"] = constants;
  r.report["power_law_max_error"] = const_err;
  r.pass = std::abs(lead_ratio - 1) <= 0.02 && tip <= 1e-10 && tangent <= 1e-6 && even <= 1e-12 && const_err <= 1e-8;
  std::filesystem::create_directories(c.out);
  write_file(c, r, "profile_gamma.csv", [&](std::ostream& os) { P.write_csv(os); });
  write_report(c, r);
  return r;
}

// planar separation audits: rough H0 and the smoothed H at 10 eps and eps
inline StageResult stage_audit1d(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("audit1d");
  Clock clk;
  const SeparationAudit a0 = audit_H0(c.alpha, c.delta, c.samples);
  bool eta_ok = true;
  for (std::size_t i = 0; i < a0.eta.size(); ++i)
    if (a0.eta_s[i] >= 0.05 && a0.eta_s[i] <= 1.95) eta_ok &= a0.eta[i] > 0;
  r.seconds["H0"] = clk.lap();

  const double e1 = 10 * c.eps_smooth, e2 = c.eps_smooth;
  const SeparationAudit a1 = audit_H(c.delta, e1, c.samples, c.alpha), a2 = audit_H(c.delta, e2, c.samples, c.alpha);
  const double C1 = -a1.worst_ratio / std::sqrt(e1), C2 = -a2.worst_ratio / std::sqrt(e2);
  const double C = std::max(C1, C2);
  const bool stable = std::abs(C2 / C1 - 1) <= 0.25;
  r.seconds["H_eps"] = clk.lap();

  r.report["H0"] = to_json(a0);
  r.report["H0_eta_positive"] = eta_ok;
  r.report["H_eps"] = {to_json(a1), to_json(a2)};
  r.report["near_cusp_C"] = {{"eps", {e1, e2}}, {"C", {C1, C2}}, {"stable", stable}, {"C_used", C}};
  r.report["gamma_measured"] = std::min(a1.gamma_measured, a2.gamma_measured);
  r.pass = a0.min_S >= -1e-10 && eta_ok && a1.gamma_measured > 0 && a2.gamma_measured > 0 && stable &&
           a1.negatives_near_cusp && a2.negatives_near_cusp;
  std::filesystem::create_directories(c.out);
  write_file(c, r, "separation_heatmap.csv",
             [&](std::ostream& os) { write_separation_heatmap(os, Integrand1D(SecondDerivProfile::smooth(c.delta, e2, c.alpha))); });
  write_report(c, r);
  return r;
}

// revolved integrand: 3-D band-separation audit, Euler-Lagrange residual, weak form, scalar extension
inline StageResult stage_audit3d(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("audit3d");
  const nlohmann::json up = upstream(c, "audit1d");
  const double C = up.at("near_cusp_C").at("C_used");
  Clock clk;
  const Integrand1D I(SecondDerivProfile::smooth(c.delta, c.eps_smooth, c.alpha));
  const double target = 1.25 * C * std::sqrt(c.eps_smooth);
  const BandAudit3D kp = band_audit_3d(I, c.delta, target, std::max(c.samples, 64), 64, 10000, c.seed);
  r.seconds["band_audit"] = clk.lap();

  const RevolvedIntegrand G(I);
  std::mt19937_64 rng(c.seed + 1);
  std::normal_distribution<double> n;
  double el_worst = 0;
  int el_n = 0;
  while (el_n < c.el_points) {
    const Vec3 x = Vec3(n(rng), n(rng), n(rng)).normalized();
    const double r1 = std::hypot(x[1], x[2]);
    if (r1 < 1e-3 || std::abs(std::abs(x[0]) - r1) < 1e-3) continue;  // axis and cone
    const ElResidual e = el_residual(G, x);
    el_worst = std::max(el_worst, std::abs(e.value) / std::max(1.0, e.scale));
    ++el_n;
  }
  r.seconds["el_residual"] = clk.lap();

  const ScalarSupExtension Ebar = build_scalar_extension(c.alpha, c.delta, c.samples);
  const ScalarG0 G0(Ebar);
  r.seconds["scalar_extension"] = clk.lap();
  const auto V = composed_field(G0);
  WeakFormQuad Q;
  Q.cone_slopes = {1.0};
  nlohmann::json wf = nlohmann::json::array();
  int wf_fail = 0;
  double wf_min_rate = std::numeric_limits<double>::infinity();
  std::mt19937_64 brng(c.seed + 2);
  for (int k = 0; k < c.weak_bumps; ++k) {
    const Bump b = random_bump(brng);
    const WeakFormFit f = weak_form_rate(V, b, Q);
    wf_fail += !f.pass;
    if (!f.noise_floor) wf_min_rate = std::min(wf_min_rate, f.rate);
    wf.push_back({{"center", {b.c[0], b.c[1], b.c[2]}}, {"radius", b.radius}, {"amp", b.amp}, {"excise", f.excise},
                  {"integral", f.integral}, {"rate", f.rate}, {"noise_floor", f.noise_floor}, {"pass", f.pass}});
  }
  r.seconds["weak_form"] = clk.lap();

  const FlatZoneReport fz = measure_flat_zones(Ebar);
  const HolderFit hf = cusp_holder_slopes(Ebar);
  const double holder_target = 2 - c.alpha - 0.05;
  r.seconds["holder"] = clk.lap();

  r.report["band_audit_3d"] = to_json(kp);
  r.report["el_residual"] = {{"points", el_n}, {"max_relative", el_worst}, {"tol", 1e-8}};
  r.report["weak_form"] = {{"bumps", wf}, {"failures", wf_fail}, {"min_rate", finite_or_null(wf_min_rate)}};
  r.report["flat_zones"] = {{"radius_left", fz.radius_left}, {"radius_right", fz.radius_right}};
  r.report["cusp_holder"] = {{"angles", hf.angle}, {"slopes", hf.slope}, {"min_slope", finite_or_null(hf.min_slope)},
                             {"flat_directions", hf.n_flat}, {"target", holder_target},
                             {"pass", hf.min_slope >= holder_target}};
  r.report["gamma_measured"] = kp.gamma_meas;
  r.pass = kp.pass && el_worst <= 1e-8 && wf_fail == 0 && fz.radius_left > 0 && fz.radius_right > 0 &&
           hf.min_slope >= holder_target;
  std::filesystem::create_directories(c.out);
  write_file(c, r, "omega_meridian.csv", [&](std::ostream& os) { write_omega_meridian_csv(os, I.curve()); });
  write_file(c, r, "el_residual.csv", [&](std::ostream& os) { write_el_residual_csv(os, G); });
  write_file(c, r, "level_set.csv", [&](std::ostream& os) { write_level_set_csv(os, Ebar); });
  write_report(c, r);
  return r;
}

// vector integrand on Sigma: Lipschitz constants, epsilon, smoothing and the 6-D separation audit
inline StageResult stage_assemble(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("assemble");
  const double C = upstream(c, "audit1d").at("near_cusp_C").at("C_used");
  const double gamma_G = upstream(c, "audit3d").at("gamma_measured");
  Clock clk;
  const double beta = beta_compute(c.delta);
  const LipschitzRatios lip = lipschitz_ratios(c.pairs_6d, c.seed, beta);
  const double eps = epsilon_used(gamma_G, lip.C_cross);
  // each piece is G stretched by 2 in one coordinate, so the G level needs eps / 4
  const double eps_s = smoothing_for_target(eps / 4, C);
  r.seconds["lipschitz"] = clk.lap();
  const Integrand1D I(SecondDerivProfile::smooth(c.delta, eps_s, c.alpha));
  const BandAudit3D kp = band_audit_3d(I, c.delta, eps / 4, 256, 64, 10000, c.seed);
  r.seconds["g_level"] = clk.lap();
  const VectorIntegrand<Integrand1D> F{RevolvedIntegrand(I)};
  SeparationAudit6D A = separation_audit_6d(F, c.pairs_6d, c.seed, beta, lip, gamma_G, eps);
  A.eps_smooth = eps_s;
  r.seconds["separation"] = clk.lap();

  r.report = to_json(A);
  r.report["near_cusp_C"] = C;
  r.report["g_level_audit"] = to_json(kp);
  r.pass = A.pass && kp.pass;
  std::filesystem::create_directories(c.out);
  write_file(c, r, "sigma.csv", [&](std::ostream& os) { write_sigma_csv(os); });
  write_report(c, r);
  return r;
}

// global convex extension from samples of Sigma, verified and serialized
inline StageResult stage_extend(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("extend");
  const nlohmann::json up = upstream(c, "assemble");
  const double eps_s = up.at("eps_smooth"), min6 = up.at("min_ratio_6d");
  Clock clk;
  SurfaceData S0 = sigma_surface(c.delta, eps_s, c.alpha, c.sigma_samples, 1.0);
  const double sep = measured_separation(S0);
  S0.gamma = 0.9 * std::min(min6, sep);
  const auto S = std::make_shared<SurfaceData>(std::move(S0));
  ExtensionBuild info;
  const GlobalConvexFn H = build_extension(S, {}, &info);
  r.seconds["build"] = clk.lap();
  const ExtensionReport v = verify_extension(H, c.extension_checks, c.seed);
  r.seconds["verify"] = clk.lap();

  std::filesystem::create_directories(c.out);
  const auto [lo, hi] = sample_box(*S, 0.5);
  const nlohmann::json bundle = write_bundle(H, out_path(c, "sigma_bundle").string(), lo, hi);
  r.outputs.push_back("sigma_bundle.json");
  r.outputs.push_back("sigma_bundle.bin");
  r.report["gamma"] = S->gamma;
  r.report["sample_separation"] = sep;
  r.report["min_ratio_6d"] = min6;
  r.report["build"] = to_json(info);
  r.report["verify"] = to_json(v);
  r.report["bundle"] = {{"json", "sigma_bundle.json"}, {"checksum_fnv1a64", bundle.at("checksum_fnv1a64")}};
  r.pass = v.pass;
  write_report(c, r);
  return r;
}

// discrete minimizers: vector map with the serialized extension, scalar u0 with G0
inline StageResult stage_solve(const PipelineConfig& c) {
  using namespace pipeline_detail;
  StageResult r("solve");
  const nlohmann::json ext = upstream(c, "extend");
  const auto path = out_path(c, ext.at("bundle").at("json").get<std::string>());
  if (!std::filesystem::exists(path)) throw OrderingError("extension bundle missing: " + path.string());
  Clock clk;
  const auto B = std::make_shared<const LoadedBundle>(load_bundle(path.string(), sigma_chart_for));
  const IntegrandFn F = bundle_integrand(B);
  r.seconds["load"] = clk.lap();

  std::vector<double> hs = c.mesh;
  std::sort(hs.begin(), hs.end(), std::greater<>());
  nlohmann::json vec = nlohmann::json::array();
  std::vector<double> sup;
  SolveOptions o;
  o.tol = c.solve_tol;
  o.max_iter = c.solve_max_iter;
  std::optional<DiscreteField> u_coarse;
  for (double h : hs) {
    const Mesh M = ball_mesh(h);
    auto [res, rep] = solve_and_report(F, M, 2, vector_map_field, o);
    if (!u_coarse) u_coarse = res.u;
    sup.push_back(rep.sup_dist);
    vec.push_back(to_json(rep));
    std::ostringstream name;
    name << "field_vector_h" << std::lround(1 / h) << ".csv";
    write_file(c, r, name.str(), [&](std::ostream& os) { write_field_csv(os, M, res.u); });
  }
  std::vector<double> shrink;
  for (std::size_t i = 1; i < sup.size(); ++i) shrink.push_back(sup[i - 1] / sup[i]);
  r.seconds["vector"] = clk.lap();

  const Mesh Mp = ball_mesh(hs.front());
  const PerturbationReport pt = perturbation_test(F, Mp, *u_coarse, c.perturbations, c.seed + 3);
  r.seconds["perturbation"] = clk.lap();

  // scalar probe
  const auto G0 = std::make_shared<const ScalarG0>(build_scalar_extension(c.alpha, c.delta, c.samples));
  const IntegrandFn Fs = scalar_integrand(G0);
  std::vector<double> ps = c.probe_mesh;
  std::sort(ps.begin(), ps.end(), std::greater<>());
  const double diam = u0_gradient_diameter();
  nlohmann::json sc = nlohmann::json::array();
  std::vector<double> osc;
  bool clusters = true;
  for (double h : ps) {
    const Mesh M = ball_mesh(h);
    SolveOptions os;
    os.tol = c.solve_tol;
    os.max_iter = std::max(1, int(std::lround(c.probe_max_iter * h * 8)));
    auto [res, rep] = solve_and_report(Fs, M, 1, u0_field, os);
    const ClusterReport cl = flat_clusters(M, res.u, *G0, 2 * h);
    clusters &= cl.two_clusters;
    osc.push_back(rep.origin_osc);
    nlohmann::json j = to_json(rep);
    j["clusters"] = to_json(cl);
    sc.push_back(j);
    std::ostringstream name;
    name << "field_scalar_h" << std::lround(1 / h) << ".csv";
    write_file(c, r, name.str(), [&](std::ostream& o2) { write_field_csv(o2, M, res.u); });
  }
  r.seconds["probe"] = clk.lap();
  double osc_min = std::numeric_limits<double>::infinity();
  for (double v : osc) osc_min = std::min(osc_min, v);

  const bool refine_ok = !shrink.empty() && shrink.front() >= 1.7;
  const bool osc_ok = osc_min >= 0.5 * diam;
  r.report["vector"] = {{"runs", vec}, {"sup_distance_shrink", shrink}, {"shrink_target", 1.7}};
  r.report["perturbation"] = to_json(pt);
  r.report["perturbation"]["h"] = hs.front();
  r.report["scalar_probe"] = {{"runs", sc},
                              {"oscillation", osc},
                              {"analytic_oscillation", diam},
                              {"bound", 0.5 * diam},
                              {"two_clusters", clusters}};
  r.pass = refine_ok && pt.pass && osc_ok && clusters;
  write_report(c, r);
  return r;
}

// ---------------------------------------------------------------------------------------------
// runner and manifest

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> s = {"profile", "audit1d", "audit3d", "assemble", "extend", "solve"};
  return s;
}

inline StageResult run_stage(const std::string& name, const PipelineConfig& c) {
  if (name == "profile") return stage_profile(c);
  if (name == "audit1d") return stage_audit1d(c);
  if (name == "audit3d") return stage_audit3d(c);
  if (name == "assemble") return stage_assemble(c);
  if (name == "extend") return stage_extend(c);
  if (name == "solve") return stage_solve(c);
  throw ConfigError("unknown stage " + name);
}

// merges the stages just run into out/manifest.json; constants come from the reports on disk
inline nlohmann::json update_manifest(const PipelineConfig& c, const std::vector<StageResult>& ran) {
  const auto p = pipeline_detail::out_path(c, "manifest.json");
  nlohmann::json m;
  {
    std::ifstream in(p);
    if (in) {
      try {
        in >> m;
      } catch (const std::exception&) {
        m = nlohmann::json();
      }
    }
  }
  if (!m.is_object() || m.value("config_hash", "") != c.hash()) m = nlohmann::json::object();
  m["config"] = c.to_json();
  m["config_hash"] = c.hash();
  m["versions"] = {{"profile", 1}, {"integrand1d", 1}, {"revolve", 1}, {"assemble6d", 1},
                   {"extend", 1},  {"solvecheck", 1},  {"cli", 1}};
  for (const StageResult& r : ran) m["stages"][r.name] = {{"pass", r.pass}, {"outputs", r.outputs}};

  auto read = [&](const std::string& s) -> nlohmann::json {
    std::ifstream in(pipeline_detail::out_path(c, s + ".json"));
    nlohmann::json j;
    if (!in) return j;
    try {
      in >> j;
    } catch (const std::exception&) {
      return nlohmann::json();
    }
    return j.value("config_hash", "") == c.hash(pipeline_detail::stage_keys().at(s)) ? j : nlohmann::json();
  };
  nlohmann::json k = nlohmann::json::object();
  if (const auto a = read("audit3d"); !a.is_null()) k["gamma"] = a["gamma_measured"];
  if (const auto a = read("assemble"); !a.is_null()) {
    k["epsilon"] = a["epsilon_used"];
    k["beta"] = a["beta"];
    k["c_low"] = a["c_low"];
    k["C_high"] = a["C_high"];
    k["C_cross"] = a["C_cross"];
    k["min_ratio_6d"] = a["min_ratio_6d"];
  }
  if (const auto a = read("extend"); !a.is_null()) k["A"] = a["build"]["A"];
  m["constants"] = k;
  std::filesystem::create_directories(c.out);
  std::ofstream os(p, std::ios::binary);
  os << m.dump(2) << "\n";
  return m;
}

}  // namespace singmin
