#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/minima.hpp>

#include "json.hpp"

#include "audit1d.hpp"

namespace singmin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Jet3 {
  double value = 0;
  Vec3 grad = Vec3::Zero();
  Mat3 hess = Mat3::Zero();
};

// cone |x1| = r, r the distance to the x1 axis
inline bool in_K0(const Vec3& x) { return x[0] * x[0] > x[1] * x[1] + x[2] * x[2]; }

// u0(x) = w(x1, r)
inline Jet3 u0_derivatives(const Vec3& x) {
  const double r = std::hypot(x[1], x[2]);
  if (r == 0) throw SingularityError("u0: point on the x1 axis");
  const Vec3 e(0, x[1] / r, x[2] / r);
  const Vec2 g = grad_w(x[0], r);
  const Mat2 h = hess_w(x[0], r);
  Jet3 J;
  J.value = eval_w(x[0], r);
  J.grad = Vec3(g[0], 0, 0) + g[1] * e;
  Mat3 P = Mat3::Identity() - e * e.transpose();
  P(0, 0) = 0;  // projector onto the azimuthal direction
  J.hess = h(1, 1) * e * e.transpose() + (g[1] / r) * P;
  J.hess(0, 0) = h(0, 0);
  J.hess.block<1, 3>(0, 0) += h(0, 1) * e.transpose();
  J.hess.block<3, 1>(0, 0) += h(0, 1) * e;
  return J;
}

// outer normal of the revolved graph rho = phi(p1) at p
inline Vec3 omega_normal(const ProfileCurve& c, const Vec3& p) {
  const double rho = std::hypot(p[1], p[2]);
  if (rho == 0) throw SingularityError("omega_normal: point on the axis");
  const double d1 = c.phi(p[0], 1);
  return Vec3(-d1, p[1] / rho, p[2] / rho) / std::sqrt(1 + d1 * d1);
}

// second fundamental form of the revolved Gamma_1 at (p1, phi(p1), 0), upward normal,
// in the unit meridian / azimuthal frame
inline Mat2 second_fundamental_form(const ProfileCurve& c, double p1) {
  const double d1 = c.phi(p1, 1), d2 = c.phi(p1, 2), ph = c.phi(p1);
  const double q = 1 + d1 * d1;
  Mat2 m = Mat2::Zero();
  m(0, 0) = d2 / q;
  m(1, 1) = -1 / ph;
  return m / std::sqrt(q);
}

struct GEval {
  double value = 0;
  Vec3 grad = Vec3::Zero();
  Mat3 hess = Mat3::Zero();
  bool flat = false;
};

// G(p) = P(p1, |(p2, p3)|) for a planar function P with H(x, y, want_hess) -> HEval
template <class Planar>
class Revolved {
 public:
  explicit Revolved(Planar p) : P_(std::move(p)) {}
  const Planar& planar() const { return P_; }

  GEval operator()(const Vec3& p, bool want_hess = false) const {
    const double rho = std::hypot(p[1], p[2]);
    const HEval h = P_.H(p[0], rho, want_hess);
    GEval g;
    g.value = h.value;
    g.flat = h.flat;
    if (rho == 0) {
      if (!h.flat && h.grad[1] != 0) throw SingularityError("G: axis point outside a flat zone");
      g.grad = Vec3(h.grad[0], 0, 0);
      if (want_hess) g.hess(0, 0) = h.hess(0, 0);
      return g;
    }
    const Vec3 e(0, p[1] / rho, p[2] / rho);
    g.grad = Vec3(h.grad[0], 0, 0) + h.grad[1] * e;
    if (want_hess && !h.flat) {
      Mat3 A = Mat3::Identity() - e * e.transpose();
      A(0, 0) = 0;
      g.hess = h.hess(1, 1) * e * e.transpose() + (h.grad[1] / rho) * A;
      g.hess(0, 0) = h.hess(0, 0);
      g.hess.block<1, 3>(0, 0) += h.hess(0, 1) * e.transpose();
      g.hess.block<3, 1>(0, 0) += h.hess(0, 1) * e;
    }
    return g;
  }

 private:
  Planar P_;
};

using RevolvedIntegrand = Revolved<Integrand1D>;

// S_G(p, q); p mirrored to p1 <= 0 since G(-p1, .) - G(p1, .) is linear in p1
template <class Planar>
double separation_S3(const Revolved<Planar>& G, Vec3 p, Vec3 q) {
  if (p[0] > 0) {
    p[0] = -p[0];
    q[0] = -q[0];
  }
  const GEval a = G(p), b = G(q);
  return b.value - a.value - a.grad.dot(q - p);
}

// tangential Hessian of G at (p1, phi(p1), 0) in the unit meridian / azimuthal frame, from D^2G
inline Mat2 tangential_hessian(const RevolvedIntegrand& G, double p1) {
  const ProfileCurve& c = G.planar().curve();
  const double d1 = c.phi(p1, 1);
  const GEval g = G(Vec3(p1, c.phi(p1), 0), true);
  Eigen::Matrix<double, 3, 2> T;
  T.col(0) = Vec3(1, d1, 0) / std::sqrt(1 + d1 * d1);
  T.col(1) = Vec3(0, 0, 1);
  return T.transpose() * g.hess * T;
}

// closed form diag((f'' - h phi'')/(1 + phi'^2), h/phi)
inline Mat2 tangential_hessian_formula(const Integrand1D& I, double p1) {
  const ProfileCurve& c = I.curve();
  const double s = p1 + 1, d1 = c.phi(p1, 1), d2 = c.phi(p1, 2), h = I.h(s).v;
  Mat2 m = Mat2::Zero();
  m(0, 0) = (I.fpp(s) - h * d2) / (1 + d1 * d1);
  m(1, 1) = h / c.phi(p1);
  return m;
}

struct ElResidual {
  double value = 0, scale = 0;  // tr(D^2G D^2u0) and |D^2G| |D^2u0|
  bool flat = false;
};

template <class Planar>
ElResidual el_residual(const Revolved<Planar>& G, const Vec3& x) {
  if (x.norm() == 0) throw SingularityError("EL residual at the origin");
  const Jet3 u = u0_derivatives(x);
  const GEval g = G(u.grad, true);
  return {(g.hess * u.hess).trace(), g.hess.norm() * u.hess.norm(), g.flat};
}

// ---------------------------------------------------------------------------------------------
// weak form

// smooth bump amp * exp(1 - 1/(1 - t^2)), t = |x - c| / radius
struct Bump {
  Vec3 c = Vec3::Zero();
  double radius = 0.5, amp = 1;

  double value(const Vec3& x) const {
    const double t2 = (x - c).squaredNorm() / (radius * radius);
    return t2 >= 1 ? 0.0 : amp * std::exp(1 - 1 / (1 - t2));
  }
  Vec3 grad(const Vec3& x) const {
    const double t2 = (x - c).squaredNorm() / (radius * radius);
    if (t2 >= 1) return Vec3::Zero();
    const double u = 1 - t2;
    return -amp * std::exp(1 - 1 / u) / (u * u) * 2 * (x - c) / (radius * radius);
  }
};

inline Bump random_bump(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> n;
  Bump b;
  b.radius = 0.2 + 0.6 * u(rng);
  Vec3 d(n(rng), n(rng), n(rng));
  d.normalize();
  b.c = (1 - b.radius) * std::sqrt(u(rng)) * 0.95 * d;
  b.amp = 0.5 + u(rng);
  return b;
}

struct WeakFormQuad {
  int axis = 0;                     // polar axis of the cones
  std::vector<double> cone_slopes;  // cones |x_axis| = k r
  double excise = 0;                // ball B_excise and (1 -+ excise) k r < |x_axis| < ... removed
  double panel = 0.05;              // max panel width in R and theta
  int n_az = 128;
};

// int_{B_1} V(x/|x|) . grad psi(x) dx for a degree-zero field V
inline double weak_form_integral(const std::function<Vec3(const Vec3&)>& V, const Bump& psi,
                                 const WeakFormQuad& Q) {
  if (!(psi.c.norm() + psi.radius < 1)) throw DomainError("weak form: test function support leaves B_1");
  using GL = boost::math::quadrature::gauss<double, 8>;
  auto nodes = [](double a, double b, double width, std::vector<double>& x, std::vector<double>& w) {
    const int n = std::max(1, int(std::ceil((b - a) / width)));
    const auto& ab = GL::abscissa();
    const auto& wt = GL::weights();
    for (int k = 0; k < n; ++k) {
      const double lo = a + (b - a) * k / n, hi = a + (b - a) * (k + 1) / n;
      const double m = 0.5 * (lo + hi), r = 0.5 * (hi - lo);
      for (std::size_t i = 0; i < ab.size(); ++i) {
        for (double sg : {-1.0, 1.0}) {
          if (ab[i] == 0 && sg > 0) continue;
          x.push_back(m + sg * r * ab[i]);
          w.push_back(r * wt[i]);
        }
      }
    }
  };
  // theta breaks: cone angles, excised intervals skipped
  std::vector<std::pair<double, double>> cut;
  std::vector<double> br{0, kPi};
  for (double k : Q.cone_slopes) {
    for (bool upper : {false, true}) {
      double lo = std::atan(1 / (k * (1 + Q.excise))), hi = std::atan(1 / (k * (1 - Q.excise)));
      if (Q.excise >= 1) hi = kPi / 2;
      if (upper) std::tie(lo, hi) = std::make_pair(kPi - hi, kPi - lo);
      br.push_back(lo);
      br.push_back(hi);
      if (Q.excise > 0) cut.push_back({lo, hi});
    }
  }
  std::sort(br.begin(), br.end());
  std::vector<double> th, wth, R, wR;
  for (std::size_t i = 0; i + 1 < br.size(); ++i) {
    const double a = br[i], b = br[i + 1];
    if (b <= a) continue;
    bool skip = false;
    for (auto [lo, hi] : cut) skip |= (a >= lo - 1e-15 && b <= hi + 1e-15);
    if (!skip) nodes(a, b, Q.panel, th, wth);
  }
  nodes(Q.excise, 1.0, Q.panel, R, wR);
  const int ax = Q.axis, a1 = (ax + 1) % 3, a2 = (ax + 2) % 3;
  double total = 0;
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double st = std::sin(th[i]), ct = std::cos(th[i]);
    double ring = 0;
    for (int j = 0; j < Q.n_az; ++j) {
      const double az = 2 * kPi * j / Q.n_az;
      Vec3 d;
      d[ax] = ct;
      d[a1] = st * std::cos(az);
      d[a2] = st * std::sin(az);
      // ray misses the support
      const double along = d.dot(psi.c);
      if ((psi.c - along * d).squaredNorm() >= psi.radius * psi.radius) continue;
      const Vec3 v = V(d);
      double line = 0;
      for (std::size_t k = 0; k < R.size(); ++k) line += wR[k] * R[k] * R[k] * v.dot(psi.grad(R[k] * d));
      ring += line;
    }
    total += wth[i] * st * ring * (2 * kPi / Q.n_az);
  }
  return total;
}

struct WeakFormFit {
  std::vector<double> excise, integral;
  double rate = 0, K = 0;
  bool noise_floor = false;  // all |integral| below the floor
  bool pass = false;
};

// fit |I(e)| = K e^p over the excision widths
inline WeakFormFit weak_form_rate(const std::function<Vec3(const Vec3&)>& V, const Bump& psi, WeakFormQuad Q,
                                  const std::vector<double>& widths = {0.02, 0.01, 0.005},
                                  double floor = 1e-6) {
  WeakFormFit f;
  f.excise = widths;
  for (double e : widths) {
    Q.excise = e;
    f.integral.push_back(weak_form_integral(V, psi, Q));
  }
  double mx = 0;
  for (double v : f.integral) mx = std::max(mx, std::abs(v));
  f.noise_floor = mx <= floor;
  const int n = int(widths.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  bool logs = true;
  for (int i = 0; i < n; ++i) {
    if (f.integral[i] == 0) logs = false;
    const double x = std::log(widths[i]), y = std::log(std::abs(f.integral[i]) + 1e-300);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (logs) {
    f.rate = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.K = std::exp((sy - f.rate * sx) / n);
  }
  f.pass = f.noise_floor || (logs && f.rate >= 0.9);
  return f;
}

// V(d) = grad G(grad u0(d)) on directions off the axis
template <class Planar>
std::function<Vec3(const Vec3&)> composed_field(const Revolved<Planar>& G) {
  return [&G](const Vec3& d) -> Vec3 { return G(u0_derivatives(d).grad).grad; };
}

// ---------------------------------------------------------------------------------------------
// scalar global extension: sup of eta-weighted tangent paraboloids over Gamma_1 u Gamma_3

class ScalarSupExtension {
 public:
  static constexpr double kEtaScale = 0.9;

  // I: the rough integrand; eta sampled per Gamma_1 parameter (as produced by the planar audit)
  ScalarSupExtension(Integrand1D I, const std::vector<double>& eta_s, const std::vector<double>& eta)
      : I_(std::move(I)), es_(eta_s), ev_(eta) {
    if (es_.size() != ev_.size() || es_.size() < 3) throw ConfigError("sup extension: bad eta table");
    for (std::size_t i = 0; i < es_.size(); ++i) {
      const bool end = es_[i] == 0 || es_[i] == 2;
      if (!end && !(ev_[i] > 0)) throw AuditFailure("sup extension: eta nonpositive at s = " + std::to_string(es_[i]));
    }
    // the table only sees neighbours at grid spacing; cap by the ratio against much closer points
    for (std::size_t i = 0; i < es_.size(); ++i) {
      if (es_[i] == 0 || es_[i] == 2) continue;
      const double gap = std::min({es_[i], 2 - es_[i], i > 0 ? es_[i] - es_[i - 1] : 1.0,
                                   i + 1 < es_.size() ? es_[i + 1] - es_[i] : 1.0});
      ev_[i] = std::min(ev_[i], local_ratio(es_[i], gap));
    }
    // symmetric eta (the smaller of the two mirror values) makes H-bar(x) - H-bar(-x) linear
    const std::vector<double> raw = ev_;
    for (std::size_t i = 0; i < es_.size(); ++i) {
      const bool end = es_[i] == 0 || es_[i] == 2;
      ev_[i] = end ? 0.0 : kEtaScale * std::min(raw[i], eta_raw(raw, 2 - es_[i]));
    }
    for (Branch b : {Branch::G1, Branch::G3})
      for (std::size_t i = 0; i < es_.size(); ++i) fam_.push_back(make(b, i));
  }

  const Integrand1D& integrand() const { return I_; }
  std::size_t size() const { return fam_.size(); }

  // between samples the smaller bracketing value
  double eta(double s) const {
    auto it = std::lower_bound(es_.begin(), es_.end(), s);
    if (it == es_.end()) return ev_.back();
    const std::size_t i = it - es_.begin();
    if (*it == s || i == 0) return ev_[i];
    return std::min(ev_[i - 1], ev_[i]);
  }

  // original frame; hess is not available (returned zero)
  HEval H(double x, double y, bool = false) const {
    if (x > 0) {
      const double m = I_.right_slope();
      HEval e = left(-x, y);
      e.value += m * x;
      e.grad[0] = m - e.grad[0];
      return e;
    }
    return left(x, y);
  }

  // H-bar evaluated at a point of Gamma_1 or Gamma_3: its own paraboloid
  HEval on_gamma(Branch b, double s) const {
    const Para p = at(b, s);
    HEval e;
    e.value = p.v;
    e.grad = p.g;
    return e;
  }

 private:
  double eta_raw(const std::vector<double>& v, double s) const {
    auto it = std::upper_bound(es_.begin(), es_.end(), s);
    if (it == es_.begin()) return v.front();
    if (it == es_.end()) return v.back();
    const std::size_t i = it - es_.begin();
    const double t = (s - es_[i - 1]) / (es_[i] - es_[i - 1]);
    return (1 - t) * v[i - 1] + t * v[i];
  }

  double local_ratio(double s, double gap) const {
    const ProfileCurve& c = I_.curve();
    const PlanePoint p = branch_point_shifted(c, Branch::G1, s);
    double r = std::numeric_limits<double>::infinity();
    for (double f : {1e-3, 1e-2, 1e-1})
      for (double sg : {-1.0, 1.0}) {
        const PlanePoint q = branch_point_shifted(c, Branch::G1, s + sg * f * gap);
        r = std::min(r, separation_S(I_, p, q) / (sqr(q.x - p.x) + sqr(q.y - p.y)));
      }
    return r;
  }

  HEval left(double x, double y) const {
    std::size_t best = 0;
    double v = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < fam_.size(); ++k) {
      const double q = fam_[k].eval(x, y);
      if (q > v) {
        v = q;
        best = k;
      }
    }
    const Para& P = fam_[best];
    Para top = P;
    // continuous refinement between the neighbouring samples on the same branch
    const std::size_t n = es_.size(), i = best % n;
    if (i > 0 && i + 1 < n) {
      const Branch b = best < n ? Branch::G1 : Branch::G3;
      auto neg = [&](double s) { return -at(b, s).eval(x, y); };
      boost::uintmax_t it = 100;
      const auto r = boost::math::tools::brent_find_minima(neg, es_[i - 1], es_[i + 1], 52, it);
      // f and f' come from quadrature at ~1e-12 relative; smaller gains are noise
      // and offsets x - p lose absolute digits against O(1) coordinates
      const double noise = 10 * kQuadTol * (std::abs(v) + std::abs(P.v) + P.g.norm() * std::hypot(x - P.px, y - P.py)) +
                           16 * std::numeric_limits<double>::epsilon() * P.g.norm() * (std::abs(x) + std::abs(y) + 2);
      if (-r.second > v + noise) {
        top = at(b, r.first);
        v = -r.second;
      }
    }
    HEval e;
    e.value = v;
    e.grad = top.grad(x, y);
    e.flat = top.s == 0 || top.s == 2;
    return e;
  }

  struct Para {
    double px = 0, py = 0, v = 0, eta = 0, s = 0;
    Vec2 g = Vec2::Zero();
    double eval(double x, double y) const {
      const double dx = x - px, dy = y - py;
      return v + g[0] * dx + g[1] * dy + eta * (dx * dx + dy * dy);
    }
    Vec2 grad(double x, double y) const { return g + 2 * eta * Vec2(x - px, y - py); }
  };

  Para at(Branch b, double s) const {
    const PlanePoint p = branch_point_shifted(I_.curve(), b, s);
    const HEval h = I_.H(p.x, p.y);
    Para q;
    q.px = p.x;
    q.py = p.y;
    q.v = h.value;
    q.g = h.grad;
    q.s = s;
    q.eta = (s == 0 || s == 2) ? 0.0 : eta(s);
    return q;
  }
  Para make(Branch b, std::size_t i) const {
    Para q = at(b, es_[i]);
    q.eta = ev_[i];
    return q;
  }

  Integrand1D I_;
  std::vector<double> es_, ev_;
  std::vector<Para> fam_;
};

using ScalarG0 = Revolved<ScalarSupExtension>;

inline ScalarSupExtension build_scalar_extension(double alpha, double delta, int per_branch = 256) {
  Integrand1D I(SecondDerivProfile::rough(alpha, delta));
  const SeparationAudit a = run_separation_audit(I, gamma_samples(I.curve(), audit_parameters(per_branch)), delta);
  if (a.min_S < -1e-10) throw AuditFailure("sup extension: rough integrand fails separation");
  return ScalarSupExtension(std::move(I), a.eta_s, a.eta);
}

struct HolderFit {
  std::vector<double> angle, slope;
  double min_slope = std::numeric_limits<double>::infinity();
  int n_flat = 0;  // directions along which S vanishes identically
};

// log S(p, p + t d) against log t at the left upper cusp, t in [t_lo, t_hi]
inline HolderFit cusp_holder_slopes(const ScalarSupExtension& E, int n_dir = 24, double t_lo = 1e-5,
                                    double t_hi = 1e-2, int n_t = 16) {
  HolderFit f;
  const double px = -1, py = 1;
  const HEval c = E.H(px, py);
  for (int j = 0; j < n_dir; ++j) {
    const double a = 2 * kPi * j / n_dir;
    std::vector<double> lx, ly;
    for (int k = 0; k < n_t; ++k) {
      const double t = t_lo * std::pow(t_hi / t_lo, double(k) / (n_t - 1));
      const double x = px + t * std::cos(a), y = py + t * std::sin(a);
      const double v = E.H(x, y).value, lin = c.grad[0] * (x - px) + c.grad[1] * (y - py);
      const double S = v - c.value - lin;
      // the cusp gradient is zero up to roundoff; S at that level is flat, not a power
      if (S > 64 * std::numeric_limits<double>::epsilon() * (std::abs(v) + std::abs(c.value)) + 2 * std::abs(lin)) {
        lx.push_back(std::log(t));
        ly.push_back(std::log(S));
      }
    }
    if (lx.size() < 4) {
      ++f.n_flat;
      continue;
    }
    const double n = lx.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.angle.push_back(a);
    f.slope.push_back(slope);
    f.min_slope = std::min(f.min_slope, slope);
  }
  return f;
}

struct FlatZoneReport {
  double radius_left = 0, radius_right = 0;  // largest tested normal offset that stays affine
};

// offsets of Gamma_2 / Gamma_4 (|t| <= 1 - margin) along x; H-bar must equal the cusp planes there
inline FlatZoneReport measure_flat_zones(const ScalarSupExtension& E, double margin = 0.05, int n = 41) {
  FlatZoneReport r;
  const ProfileCurve& c = E.integrand().curve();
  const double m = E.integrand().right_slope();
  double prev_left = 0, prev_right = 0;
  for (double d : {1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1}) {
    bool left = true, right = true;
    for (int i = 0; i < n; ++i) {
      const double t = (1 - margin) * (2.0 * i / (n - 1) - 1);
      const double x = c.phi(t);
      for (double sg : {-1.0, 1.0}) {
        const HEval a = E.H(-x + sg * d, t), b = E.H(x + sg * d, t);
        left &= std::abs(a.value) <= 1e-12 && a.grad.norm() <= 1e-10;
        right &= std::abs(b.value - m * (x + sg * d)) <= 1e-12 && (b.grad - Vec2(m, 0)).norm() <= 1e-10;
      }
    }
    if (left && r.radius_left == prev_left) r.radius_left = d;
    if (right && r.radius_right == prev_right) r.radius_right = d;
    prev_left = left ? d : -1;
    prev_right = right ? d : -1;
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// band-separation audit on Omega

struct BandAudit3D {
  double delta = 0, eps_smooth = 0, eps_target = 0;
  long n_pairs = 0;
  double gamma_meas = std::numeric_limits<double>::infinity();  // p in the band
  double worst_outside = std::numeric_limits<double>::infinity();
  double eps_meas = 0;
  double planar_gamma = 0, planar_worst = 0;
  double max_reduction_err = 0;  // direct S_G against the planar reduction, relative
  long n_random = 0;
  double random_min_ratio = std::numeric_limits<double>::infinity();
  bool pass = false;
};

// S_G(p,q) = S_H(p^, q^) + H_y(p^) rho_q (1 - cos psi), psi the azimuth gap
template <class Planar>
double separation_S3_reduced(const Revolved<Planar>& G, const Vec3& p, const Vec3& q) {
  const double rp = std::hypot(p[1], p[2]), rq = std::hypot(q[1], q[2]);
  const double psi = std::atan2(q[2], q[1]) - std::atan2(p[2], p[1]);
  PlanePoint P{p[0], rp}, Q{q[0], rq};
  if (P.x > 0) {
    P.x = -P.x;
    Q.x = -Q.x;
  }
  const HEval a = G.planar().H(P.x, P.y), b = G.planar().H(Q.x, Q.y);
  const double S = b.value - a.value - a.grad[0] * (Q.x - P.x) - a.grad[1] * (Q.y - P.y);
  return S + a.grad[1] * rq * 2 * sqr(std::sin(0.5 * psi));
}

inline BandAudit3D band_audit_3d(const Integrand1D& I, double delta, double eps_target, int n_theta = 256,
                                        int n_az = 64, int n_random = 10000, std::uint64_t seed = 1) {
  BandAudit3D A;
  A.delta = delta;
  A.eps_smooth = I.fpp_profile().eps();
  A.eps_target = eps_target;
  const RevolvedIntegrand G(I);
  const ProfileCurve& c = I.curve();
  const auto params = audit_parameters_for(A.eps_smooth, std::max(n_theta, 64));

  // planar audit over all four branches
  const SeparationAudit pa = run_separation_audit(I, gamma_samples(c, params), delta);
  A.planar_gamma = pa.gamma_measured;
  A.planar_worst = pa.worst_ratio;

  // meridian of Omega (Gamma_1 and the upper halves of Gamma_2, Gamma_4) times an azimuth grid,
  // through the rotational reduction on the planar table
  std::vector<GammaSample> mer;
  for (Branch b : {Branch::G1, Branch::G2, Branch::G4})
    for (double s : params)
      if (b == Branch::G1 || s >= 1) mer.push_back({branch_point_shifted(c, b, s), b, s});
  const SampleTable T = tabulate(I, mer);
  std::vector<double> cz(n_az);
  for (int k = 0; k < n_az; ++k) cz[k] = 2 * sqr(std::sin(kPi * k / n_az));  // 1 - cos
  for (std::size_t i = 0; i < mer.size(); ++i) {
    const GammaSample& P = mer[i];
    const bool band = P.b == Branch::G1 && P.s >= delta && P.s <= 2 - delta;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < mer.size(); ++j) {
      const PairEval e = pair_eval(T, i, j);
      const double d2 = e.dx * e.dx + e.dy * e.dy;
      const double rr = P.p.y * mer[j].p.y;
      for (int k = 0; k < n_az; ++k) {
        const double D = d2 + 2 * rr * cz[k];
        if (D == 0) continue;
        worst = std::min(worst, (e.S + e.hy * mer[j].p.y * cz[k]) / D);
        ++A.n_pairs;
      }
    }
    if (band)
      A.gamma_meas = std::min(A.gamma_meas, worst);
    else
      A.worst_outside = std::min(A.worst_outside, worst);
  }

  // random pairs through u0, evaluated directly in R^3
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (int k = 0; k < n_random; ++k) {
    const Vec3 x(n(rng), n(rng), n(rng)), z(n(rng), n(rng), n(rng));
    const Vec3 p = u0_derivatives(x.normalized()).grad, q = u0_derivatives(z.normalized()).grad;
    const double d2 = (q - p).squaredNorm();
    if (d2 == 0) continue;
    const double S = separation_S3(G, p, q), Sr = separation_S3_reduced(G, p, q);
    A.max_reduction_err = std::max(A.max_reduction_err, std::abs(S - Sr) / (1 + std::abs(S)));
    const double r = S / d2;
    ++A.n_random;
    A.random_min_ratio = std::min(A.random_min_ratio, r);
    const bool band = !in_K0(x) && std::abs(p[0]) <= 1 - delta;
    if (band)
      A.gamma_meas = std::min(A.gamma_meas, r);
    else
      A.worst_outside = std::min(A.worst_outside, r);
  }
  A.gamma_meas = std::min(A.gamma_meas, A.planar_gamma);
  A.worst_outside = std::min(A.worst_outside, A.planar_worst);
  A.eps_meas = std::max(0.0, -A.worst_outside);
  A.pass = A.gamma_meas > 0 && A.eps_meas <= A.eps_target;
  return A;
}

// smoothing scale reaching a band-separation target: C sqrt(eps_s) <= target with 25% margin
inline double smoothing_for_target(double eps_target, double C) { return sqr(eps_target / (1.25 * C)); }

inline nlohmann::json to_json(const BandAudit3D& a) {
  return {{"delta", a.delta},
          {"eps_smooth", a.eps_smooth},
          {"eps_target", a.eps_target},
          {"n_pairs", a.n_pairs},
          {"n_random", a.n_random},
          {"gamma_meas", a.gamma_meas},
          {"eps_meas", a.eps_meas},
          {"planar_gamma", a.planar_gamma},
          {"planar_worst", a.planar_worst},
          {"random_min_ratio", a.random_min_ratio},
          {"max_reduction_err", a.max_reduction_err},
          {"pass", a.pass}};
}

// ---------------------------------------------------------------------------------------------
// CSV

inline void write_omega_meridian_csv(std::ostream& os, const ProfileCurve& c, int n = 401) {
  os << "branch,p1,rho\n";
  os.precision(17);
  for (Branch b : {Branch::G1, Branch::G2, Branch::G4})
    for (int i = 0; i < n; ++i) {
      const double s = 2.0 * i / (n - 1);
      if (b != Branch::G1 && s < 1) continue;
      const PlanePoint p = branch_point_shifted(c, b, s);
      os << int(b) << ',' << p.x << ',' << p.y << '\n';
    }
}

// EL residual along a meridian of S^2
template <class Planar>
void write_el_residual_csv(std::ostream& os, const Revolved<Planar>& G, int n = 361) {
  os << "theta,residual,scale\n";
  os.precision(17);
  for (int i = 1; i < n - 1; ++i) {
    const double th = kPi * i / (n - 1);
    const ElResidual r = el_residual(G, Vec3(std::cos(th), std::sin(th), 0));
    os << th << ',' << r.value << ',' << r.scale << '\n';
  }
}

inline void write_level_set_csv(std::ostream& os, const ScalarSupExtension& E, int n = 81, double box = 1.6) {
  os << "p1,rho,value\n";
  os.precision(17);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = -box + 2 * box * i / (n - 1), y = box * j / (n - 1);
      os << x << ',' << y << ',' << E.H(x, y).value << '\n';
    }
}

}  // namespace singmin
