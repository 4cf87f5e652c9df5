#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <vector>

#include "json.hpp"

#include "revolve.hpp"

namespace singmin {

using Vec6 = Eigen::Matrix<double, 6, 1>;

inline Vec3 swap13(const Vec3& v) { return Vec3(v[2], v[1], v[0]); }
inline Mat3 swap13(const Mat3& m) {
  Mat3 P = Mat3::Zero();
  P(0, 2) = P(1, 1) = P(2, 0) = 1;
  return P * m * P;
}

// cones where u^1, u^2 have flat gradient images
inline bool in_K1(const Vec3& x) { return x[0] * x[0] >= 4 * (x[1] * x[1] + x[2] * x[2]); }
inline bool in_K2(const Vec3& x) { return x[2] * x[2] >= 4 * (x[0] * x[0] + x[1] * x[1]); }

// u = (u^1, u^2), u^1(x) = u0(x1/2, x2, x3), u^2(x) = u^1(x3, x2, x1)
struct VectorMap {
  static Jet3 u1(const Vec3& x) {
    const Jet3 J = u0_derivatives(Vec3(0.5 * x[0], x[1], x[2]));
    Jet3 r;
    r.value = J.value;
    r.grad = Vec3(0.5 * J.grad[0], J.grad[1], J.grad[2]);
    const Eigen::DiagonalMatrix<double, 3> L(0.5, 1, 1);
    r.hess = L * J.hess * L;
    return r;
  }
  static Jet3 u2(const Vec3& x) {
    const Jet3 J = u1(swap13(x));
    return {J.value, swap13(J.grad), swap13(J.hess)};
  }
  // Du as (grad u^1, grad u^2)
  static Vec6 P(const Vec3& x) {
    Vec6 p;
    p << u1(x).grad, u2(x).grad;
    return p;
  }
};

// F0(p^1, p^2) = G1(p^1) + G2(p^2), G1(p) = G(2p1, p2, p3), G2(p) = G1(p3, p2, p1)
template <class Planar>
class VectorIntegrand {
 public:
  explicit VectorIntegrand(Revolved<Planar> G) : G_(std::move(G)) {}
  const Revolved<Planar>& G() const { return G_; }

  static Vec3 lift1(const Vec3& p) { return Vec3(2 * p[0], p[1], p[2]); }
  static Vec3 lift2(const Vec3& p) { return lift1(swap13(p)); }

  GEval G1(const Vec3& p, bool want_hess = false) const {
    GEval g = G_(lift1(p), want_hess);
    g.grad[0] *= 2;
    if (want_hess) {
      const Eigen::DiagonalMatrix<double, 3> L(2, 1, 1);
      g.hess = L * g.hess * L;
    }
    return g;
  }
  GEval G2(const Vec3& p, bool want_hess = false) const {
    GEval g = G1(swap13(p), want_hess);
    g.grad = swap13(g.grad);
    if (want_hess) g.hess = swap13(g.hess);
    return g;
  }

  double value(const Vec6& P) const { return G1(P.head<3>()).value + G2(P.tail<3>()).value; }
  Vec6 grad(const Vec6& P) const {
    Vec6 g;
    g << G1(P.head<3>()).grad, G2(P.tail<3>()).grad;
    return g;
  }

  // through the lifts, so each piece keeps the mirrored evaluation of S_G
  double S1(const Vec3& p, const Vec3& q) const { return separation_S3(G_, lift1(p), lift1(q)); }
  double S2(const Vec3& p, const Vec3& q) const { return separation_S3(G_, lift2(p), lift2(q)); }
  double S(const Vec6& P, const Vec6& Q) const { return S1(P.head<3>(), Q.head<3>()) + S2(P.tail<3>(), Q.tail<3>()); }
  // straight from the definition, for checking
  double S_direct(const Vec6& P, const Vec6& Q) const { return value(Q) - value(P) - grad(P).dot(Q - P); }

 private:
  Revolved<Planar> G_;
};

// unit normals of Omega_1 = L^-1 Omega (L = diag(2,1,1)) and Omega_2, curved part only
inline Vec3 omega1_normal(const Vec3& p) {
  const Vec3 n = omega_normal(profile(), Vec3(2 * p[0], p[1], p[2]));
  return Vec3(2 * n[0], n[1], n[2]).normalized();
}
inline Vec3 omega2_normal(const Vec3& p) { return swap13(omega1_normal(swap13(p))); }

// root of phi'(beta) = 1/2
inline double beta_compute(double delta = 1e-2) {
  const ProfileCurve& c = profile();
  const double b = bracket_root([&](double x) { return c.phi(x, 1) - 0.5; }, 0.0, 1 - 1e-12);
  if (!(b < 1 - delta)) throw DegenerateError("beta >= 1 - delta");
  return b;
}

struct SigmaSample {
  Vec3 x;
  Vec6 P;
  Mat3 J1, J2;       // D^2 u^1, D^2 u^2
  bool alt1 = false;  // p^1 in Omega_1 with |p^1_1| <= beta/2
  bool alt2 = false;
};

inline bool on_curved_part(const Vec3& x) { return !in_K0(x); }

inline SigmaSample sigma_point(const Vec3& x, double beta) {
  SigmaSample s;
  s.x = x;
  const Jet3 a = VectorMap::u1(x), b = VectorMap::u2(x);
  s.P << a.grad, b.grad;
  s.J1 = a.hess;
  s.J2 = b.hess;
  constexpr double slack = 1e-12;
  s.alt1 = on_curved_part(Vec3(0.5 * x[0], x[1], x[2])) && std::abs(a.grad[0]) <= beta / 2 + slack;
  s.alt2 = on_curved_part(Vec3(0.5 * x[2], x[1], x[0])) && std::abs(b.grad[2]) <= beta / 2 + slack;
  return s;
}

// seeded uniform points on S^2 (normalized Gaussians); axis points of either map are redrawn
inline std::vector<SigmaSample> sigma_sample(int n, std::uint64_t seed, double beta) {
  if (n < 1) throw ConfigError("sigma_sample: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<SigmaSample> out;
  out.reserve(n);
  while (int(out.size()) < n) {
    Vec3 x(g(rng), g(rng), g(rng));
    if (x.norm() == 0) continue;
    x.normalize();
    if (std::hypot(x[1], x[2]) < 1e-9 || std::hypot(x[0], x[1]) < 1e-9) continue;
    out.push_back(sigma_point(x, beta));
  }
  return out;
}

// pairs: half independent, half with |x - y| <= near
inline std::vector<std::pair<Vec3, Vec3>> sigma_pairs(int n, std::uint64_t seed, double near = 1e-2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  auto unit = [&] {
    for (;;) {
      Vec3 x(g(rng), g(rng), g(rng));
      x.normalize();
      if (std::hypot(x[1], x[2]) > 1e-9 && std::hypot(x[0], x[1]) > 1e-9) return x;
    }
  };
  std::vector<std::pair<Vec3, Vec3>> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const Vec3 a = unit();
    if (k % 2 == 0) {
      out.push_back({a, unit()});
      continue;
    }
    for (;;) {
      Vec3 t(g(rng), g(rng), g(rng));
      t -= t.dot(a) * a;
      if (t.norm() == 0) continue;
      const Vec3 b = (a + near * u(rng) * t.normalized()).normalized();
      if (std::hypot(b[1], b[2]) > 1e-9 && std::hypot(b[0], b[1]) > 1e-9) {
        out.push_back({a, b});
        break;
      }
    }
  }
  return out;
}

struct LipschitzRatios {
  double c_low = std::numeric_limits<double>::infinity();  // min |D grad u^1| / |D omega|, p^1 alternative at omega0
  double C_high = 0;                                       // max |D grad u^i| / |D omega|
  double C_cross = 0;  // max |p^2 - q^2| / |p^1 - q^1|, p^1 alternative (and the mirror statement)
  long n_pairs = 0;
};

inline LipschitzRatios lipschitz_ratios(int n_pairs, std::uint64_t seed, double beta) {
  LipschitzRatios L;
  for (const auto& [a, b] : sigma_pairs(n_pairs, seed)) {
    const double dw = (a - b).norm();
    if (dw == 0) continue;
    const SigmaSample s = sigma_point(a, beta), t = sigma_point(b, beta);
    const double d1 = (s.P.head<3>() - t.P.head<3>()).norm(), d2 = (s.P.tail<3>() - t.P.tail<3>()).norm();
    ++L.n_pairs;
    L.C_high = std::max({L.C_high, d1 / dw, d2 / dw});
    if (s.alt1) {
      L.c_low = std::min(L.c_low, d1 / dw);
      if (d1 > 0) L.C_cross = std::max(L.C_cross, d2 / d1);
    }
    if (s.alt2) {
      L.c_low = std::min(L.c_low, d2 / dw);
      if (d2 > 0) L.C_cross = std::max(L.C_cross, d1 / d2);
    }
  }
  return L;
}

// epsilon for the 6-D chain: gamma - eps C^2 >= gamma / 2
inline double epsilon_used(double gamma, double C) { return std::min(1e-4, gamma / (4 * C * C)); }

struct Witness6 {
  Vec3 x, y;
  double S = 0, ratio = std::numeric_limits<double>::infinity();
};

struct SeparationAudit6D {
  double beta = 0;
  LipschitzRatios lip;
  double gamma_G = 0;     // band-separation gamma of G, from the planar audit
  double eps_used = 0;    // configured 6-D epsilon
  double eps_smooth = 0;  // smoothing scale of G
  long n_pairs = 0;
  double min_ratio = std::numeric_limits<double>::infinity();  // S_F0 / |P - Q|^2
  Witness6 witness;
  double gamma1_meas = std::numeric_limits<double>::infinity();  // S_G1 / |p^1 - q^1|^2, p^1 alternative
  double eps2_meas = 0;                                          // max -S_G2 / |p^2 - q^2|^2, same pairs
  double max_additivity_err = 0;
  double lower_bound = 0;  // gamma1_meas - eps_used C_cross^2
  bool pass = false;
};

template <class Planar>
SeparationAudit6D separation_audit_6d(const VectorIntegrand<Planar>& F, int n_pairs, std::uint64_t seed,
                                      double beta, const LipschitzRatios& lip, double gamma_G, double eps_used) {
  SeparationAudit6D A;
  A.beta = beta;
  A.lip = lip;
  A.gamma_G = gamma_G;
  A.eps_used = eps_used;
  for (const auto& [a, b] : sigma_pairs(n_pairs, seed ^ 0x9e3779b97f4a7c15ULL)) {
    const SigmaSample s = sigma_point(a, beta), t = sigma_point(b, beta);
    const double D = (s.P - t.P).squaredNorm();
    if (D == 0) continue;
    const Vec3 p1 = s.P.head<3>(), q1 = t.P.head<3>(), p2 = s.P.tail<3>(), q2 = t.P.tail<3>();
    const double S1 = F.S1(p1, q1), S2 = F.S2(p2, q2), S = S1 + S2;
    ++A.n_pairs;
    if (A.n_pairs <= 1000) {
      const double Sd = F.S_direct(s.P, t.P);
      A.max_additivity_err = std::max(A.max_additivity_err, std::abs(Sd - S) / (1 + std::abs(Sd)));
    }
    const double r = S / D;
    if (r < A.min_ratio) {
      A.min_ratio = r;
      A.witness = {a, b, S, r};
    }
    const double n1 = (p1 - q1).squaredNorm(), n2 = (p2 - q2).squaredNorm();
    if (s.alt1 && n1 > 0) {
      A.gamma1_meas = std::min(A.gamma1_meas, S1 / n1);
      if (n2 > 0) A.eps2_meas = std::max(A.eps2_meas, -S2 / n2);
    }
    if (s.alt2 && n2 > 0) {
      A.gamma1_meas = std::min(A.gamma1_meas, S2 / n2);
      if (n1 > 0) A.eps2_meas = std::max(A.eps2_meas, -S1 / n1);
    }
  }
  A.lower_bound = A.gamma1_meas - A.eps_used * sqr(lip.C_cross);
  A.pass = A.min_ratio > 0 && A.lower_bound > 0;
  return A;
}

inline nlohmann::json witness_json(const Witness6& w) {
  return {{"x", {w.x[0], w.x[1], w.x[2]}}, {"y", {w.y[0], w.y[1], w.y[2]}}, {"S", w.S}, {"ratio", w.ratio}};
}

inline nlohmann::json to_json(const SeparationAudit6D& a) {
  return {{"beta", a.beta},
          {"c_low", a.lip.c_low},
          {"C_high", a.lip.C_high},
          {"C_cross", a.lip.C_cross},
          {"lipschitz_pairs", a.lip.n_pairs},
          {"gamma_G", a.gamma_G},
          {"epsilon_used", a.eps_used},
          {"eps_smooth", a.eps_smooth},
          {"n_pairs", a.n_pairs},
          {"min_ratio_6d", a.min_ratio},
          {"gamma1_meas", a.gamma1_meas},
          {"eps2_meas", a.eps2_meas},
          {"lower_bound", a.lower_bound},
          {"max_additivity_err", a.max_additivity_err},
          {"witness_pairs", nlohmann::json::array({witness_json(a.witness)})},
          {"pass", a.pass}};
}

// Du along meridians of S^2 in a few azimuth planes about the x2 axis
inline void write_sigma_csv(std::ostream& os, int n = 181, int n_planes = 4) {
  os << "plane,theta,p1_1,p1_2,p1_3,p2_1,p2_2,p2_3\n";
  os.precision(17);
  for (int k = 0; k < n_planes; ++k) {
    const double az = kPi * (k + 0.5) / n_planes;
    for (int i = 1; i < n - 1; ++i) {
      const double th = kPi * i / (n - 1);
      const Vec3 x(std::sin(th) * std::cos(az), std::cos(th), std::sin(th) * std::sin(az));
      const Vec6 P = VectorMap::P(x);
      os << k << ',' << th;
      for (int j = 0; j < 6; ++j) os << ',' << P[j];
      os << '\n';
    }
  }
}

}  // namespace singmin
