#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "integrand1d.hpp"

namespace singmin {

struct GammaSample {
  PlanePoint p;
  Branch b = Branch::G1;
  double s = 0;  // branch parameter on [0, 2], shifted
};

// distance of a branch parameter to the nearer end
inline double cusp_distance(double s) { return std::min(s, 2 - s); }

inline PlanePoint branch_point_shifted(const ProfileCurve& c, Branch b, double s) {
  const double t = s - 1, f = c.phi_shifted(s) + 1;
  switch (b) {
    case Branch::G1: return {t, f};
    case Branch::G2: return {-f, t};
    case Branch::G3: return {t, -f};
    case Branch::G4: return {f, t};
  }
  return {};
}

inline PlanePoint nearest_cusp(PlanePoint p) { return {p.x < 0 ? -1.0 : 1.0, p.y < 0 ? -1.0 : 1.0}; }

// branch point as its nearest cusp plus an offset; the offset is built from the exact distance
// to that cusp so the digits that original coordinates lose there are kept
struct CuspLocated {
  PlanePoint cusp, off;
};

inline CuspLocated locate_sample(const ProfileCurve& c, Branch b, double s) {
  const double f = c.phi_shifted(s);
  const bool hi = s > 1;
  const double e = hi ? -(2 - s) : s;  // 2 - s exact on [1, 2]
  switch (b) {
    case Branch::G1: return {{hi ? 1.0 : -1.0, 1}, {e, f}};
    case Branch::G3: return {{hi ? 1.0 : -1.0, -1}, {e, -f}};
    case Branch::G2: return {{-1, hi ? 1.0 : -1.0}, {-f, e}};
    case Branch::G4: return {{1, hi ? 1.0 : -1.0}, {f, e}};
  }
  return {};
}

inline PlanePoint located_difference(const CuspLocated& q, const CuspLocated& p) {
  if (q.cusp.x == p.cusp.x && q.cusp.y == p.cusp.y) return {q.off.x - p.off.x, q.off.y - p.off.y};
  return {(q.cusp.x - p.cusp.x) + (q.off.x - p.off.x), (q.cusp.y - p.cusp.y) + (q.off.y - p.off.y)};
}

// x -> -x image of a branch sample; 2 - s is exact for s in [1, 2]
inline std::pair<Branch, double> mirror_sample(Branch b, double s) {
  switch (b) {
    case Branch::G1: return {Branch::G1, 2 - s};
    case Branch::G3: return {Branch::G3, 2 - s};
    case Branch::G2: return {Branch::G4, s};
    case Branch::G4: return {Branch::G2, s};
  }
  return {b, s};
}

// H at a branch point from its exact parameter; agrees with H(x, y) there
inline HEval H_on_branch(const Integrand1D& I, Branch b, double s) {
  HEval r;
  if (b == Branch::G2 || b == Branch::G4) {
    r.flat = true;
    if (b == Branch::G2) return r;
    r.value = I.f(2) + I.right_slope() * I.curve().phi_shifted(s);
    r.grad = {I.right_slope(), 0};
    return r;
  }
  const double sg = b == Branch::G1 ? 1.0 : -1.0;
  const Jet2 h = I.h(s);
  const double d1 = s <= 0 ? -1.0 : (s >= 2 ? 1.0 : I.curve().phi_shifted(s, 1));
  r.value = I.f(s);
  r.grad = {I.fp(s) - h.v * d1, sg * h.v};
  return r;
}

// per-branch parameters: both ends on a log grid (per_decade points per decade from 10^-decades
// to 0.1), exact cusps, and a uniform middle
inline std::vector<double> audit_parameters(int per_branch = 256, int per_decade = 16, int decades = 8) {
  const int n_log = (decades - 1) * per_decade;
  const int side = 1 + n_log;
  const int mid = per_branch - 2 * side;
  if (mid < 2) throw ConfigError("audit grid: per_branch too small for the cusp grid");
  std::vector<double> s;
  s.push_back(0);
  for (int k = 0; k < n_log; ++k) s.push_back(std::pow(10.0, -decades + double(k) / per_decade));
  for (int k = 0; k < mid; ++k) s.push_back(0.1 + 1.8 * k / (mid - 1));
  for (int k = n_log - 1; k >= 0; --k) s.push_back(2 - std::pow(10.0, -decades + double(k) / per_decade));
  s.push_back(2);
  return s;
}

inline std::vector<GammaSample> gamma_samples(const ProfileCurve& c, const std::vector<double>& params) {
  std::vector<GammaSample> out;
  for (Branch b : {Branch::G1, Branch::G2, Branch::G3, Branch::G4})
    for (double s : params) out.push_back({branch_point_shifted(c, b, s), b, s});
  return out;
}

struct Witness {
  GammaSample p, q;
  double S = 0, ratio = std::numeric_limits<double>::infinity();
};

struct SeparationAudit {
  double delta = 0, eps = 0;
  long n_pairs = 0, n_negative = 0;
  double min_S = std::numeric_limits<double>::infinity();
  Witness min_S_pair;
  double gamma_measured = std::numeric_limits<double>::infinity();  // p on Gamma_1/3 in the band
  Witness gamma_pair;
  double worst_ratio = std::numeric_limits<double>::infinity();  // outside the band
  Witness worst_pair;
  bool negatives_near_cusp = true;  // every negative pair has q within 20 x0 of p's cusp
  std::vector<double> eta_s, eta;   // per Gamma_1 sample: min over q of S/|p-q|^2
};

inline bool curved_branch(Branch b) { return b == Branch::G1 || b == Branch::G3; }

// per-sample H and cusp-located position, directly and x-mirrored
struct SampleTable {
  std::vector<GammaSample> pts;
  std::vector<HEval> H, HM;
  std::vector<CuspLocated> O, OM;
};

// H(-x, y) - H(x, y) is linear, so S is unchanged under x -> -x; evaluating with p on the
// left keeps the O(1) values of H away from the right cusps where S would cancel
inline SampleTable tabulate(const Integrand1D& I, std::vector<GammaSample> pts) {
  SampleTable T;
  const ProfileCurve& c = I.curve();
  const std::size_t n = pts.size();
  T.H.resize(n);
  T.HM.resize(n);
  T.O.resize(n);
  T.OM.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T.H[i] = H_on_branch(I, pts[i].b, pts[i].s);
    T.O[i] = locate_sample(c, pts[i].b, pts[i].s);
    const auto [mb, ms] = mirror_sample(pts[i].b, pts[i].s);
    T.HM[i] = H_on_branch(I, mb, ms);
    T.OM[i] = locate_sample(c, mb, ms);
  }
  T.pts = std::move(pts);
  return T;
}

struct PairEval {
  double S = 0, dx = 0, dy = 0, noise = 0;
  double hy = 0;  // dH/dy at p
};

inline PairEval pair_eval(const SampleTable& T, std::size_t i, std::size_t j) {
  const bool mirror = T.pts[i].p.x > 0;
  const std::vector<HEval>& HH = mirror ? T.HM : T.H;
  const std::vector<CuspLocated>& OO = mirror ? T.OM : T.O;
  const PlanePoint D = located_difference(OO[j], OO[i]);
  const double lin = HH[i].grad[0] * D.x + HH[i].grad[1] * D.y;
  PairEval e;
  e.dx = D.x;
  e.dy = D.y;
  e.S = HH[j].value - HH[i].value - lin;
  e.noise = 1e-13 * (std::abs(HH[j].value) + std::abs(HH[i].value) + std::abs(lin));
  e.hy = HH[i].grad[1];
  return e;
}

inline SeparationAudit run_separation_audit(const Integrand1D& I, const std::vector<GammaSample>& pts,
                                            double band) {
  SeparationAudit a;
  a.delta = band;
  a.eps = I.fpp_profile().eps();
  const SampleTable T = tabulate(I, pts);
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const GammaSample& P = pts[i];
    const bool in_band = curved_branch(P.b) && P.s >= band && P.s <= 2 - band;
    const double x0 = cusp_distance(P.s);
    const PlanePoint cp = nearest_cusp(P.p);
    double eta = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const PairEval e = pair_eval(T, i, j);
      const double d2 = e.dx * e.dx + e.dy * e.dy;
      if (d2 == 0) continue;
      const PlanePoint& q = pts[j].p;
      const double ratio = e.S / d2;
      ++a.n_pairs;
      if (e.S < -e.noise) {
        ++a.n_negative;
        if (std::hypot(q.x - cp.x, q.y - cp.y) > 20 * x0) a.negatives_near_cusp = false;
      }
      Witness w{P, pts[j], e.S, ratio};
      if (e.S < a.min_S) {
        a.min_S = e.S;
        a.min_S_pair = w;
      }
      if (in_band) {
        if (ratio < a.gamma_measured) {
          a.gamma_measured = ratio;
          a.gamma_pair = w;
        }
      } else if (ratio < a.worst_ratio) {
        a.worst_ratio = ratio;
        a.worst_pair = w;
      }
      eta = std::min(eta, ratio);
    }
    if (P.b == Branch::G1) {
      a.eta_s.push_back(P.s);
      a.eta.push_back(eta);
    }
  }
  return a;
}

// cusp log grid reaching two decades below eps, fitted into per_branch samples
inline std::vector<double> audit_parameters_for(double eps, int per_branch = 256) {
  const int decades = std::max(8, int(std::ceil(-std::log10(std::max(eps, 1e-300)))) + 2);
  const int per_decade = std::min(16, (per_branch - 32) / (2 * (decades - 1)));
  return audit_parameters(per_branch, per_decade, decades);
}

inline SeparationAudit audit_H0(double alpha, double delta, int per_branch = 256) {
  const Integrand1D I(SecondDerivProfile::rough(alpha, delta));
  return run_separation_audit(I, gamma_samples(I.curve(), audit_parameters(per_branch)), delta);
}

inline SeparationAudit audit_H(double delta, double eps, int per_branch = 256, double alpha = 0.5) {
  const Integrand1D I(SecondDerivProfile::smooth(delta, eps, alpha));
  return run_separation_audit(I, gamma_samples(I.curve(), audit_parameters_for(eps, per_branch)), delta);
}

// root of xi + (2/3) xi^{3/2} = 1
inline double xi_root() {
  return bracket_root([](double x) { return x + 2.0 / 3.0 * std::pow(x, 1.5) - 1; }, 0.0, 1.0);
}

// abscissa where l(x) = -x0 + phi~'(x0)(x - x0) meets the upper part of Gamma_2, over x0
inline double l_crossing_ratio(const ProfileCurve& c, double x0) {
  const double sl = c.phi_shifted(x0, 1);
  auto g = [&](double s) { return -x0 + sl * (-c.phi_shifted(s) - x0) + s; };
  const double s = bracket_root(g, 0.0, 1.0);
  return -c.phi_shifted(s) / x0;
}

inline nlohmann::json witness_json(const Witness& w) {
  return {{"p", {w.p.p.x, w.p.p.y}}, {"p_branch", int(w.p.b)}, {"p_s", w.p.s},
          {"q", {w.q.p.x, w.q.p.y}}, {"q_branch", int(w.q.b)}, {"q_s", w.q.s},
          {"S", w.S},                {"ratio", w.ratio}};
}

inline nlohmann::json to_json(const SeparationAudit& a) {
  nlohmann::json j;
  j["band"] = {a.delta, 2 - a.delta};
  j["eps"] = a.eps;
  j["n_pairs"] = a.n_pairs;
  j["n_negative"] = a.n_negative;
  j["min_S"] = a.min_S;
  j["min_S_pair"] = witness_json(a.min_S_pair);
  j["gamma_measured"] = a.gamma_measured;
  j["gamma_pair"] = witness_json(a.gamma_pair);
  j["worst_ratio"] = a.worst_ratio;
  j["worst_pair"] = witness_json(a.worst_pair);
  j["negatives_near_cusp"] = a.negatives_near_cusp;
  j["eta"] = {{"s", a.eta_s}, {"value", a.eta}};
  return j;
}

// S_H over a (x0, x) grid on Gamma_1 x Gamma_1, shifted abscissae
inline void write_separation_heatmap(std::ostream& os, const Integrand1D& I, int n = 101) {
  os << "x0,x,S,ratio\n";
  os.precision(17);
  const ProfileCurve& c = I.curve();
  std::vector<PlanePoint> p(n);
  std::vector<double> s(n);
  for (int i = 0; i < n; ++i) {
    s[i] = 2.0 * (i + 0.5) / n;
    p[i] = branch_point_shifted(c, Branch::G1, s[i]);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double S = separation_S(I, p[i], p[j]);
      const double d2 = sqr(p[i].x - p[j].x) + sqr(p[i].y - p[j].y);
      os << s[i] << ',' << s[j] << ',' << S << ',' << S / d2 << '\n';
    }
}

}  // namespace singmin
