#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include "numerics.hpp"
#include "profile.hpp"

namespace singmin {

// f'' on the shifted interval [0, 2], symmetric about 1
class SecondDerivProfile {
 public:
  // precondition tolerance on phi'' against its two-term cusp expansion on (0, delta]
  static constexpr double kExpansionTol = 0.10;

  static SecondDerivProfile rough(double alpha, double delta, const ProfileCurve& c = profile()) {
    if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0,1)");
    check_delta(delta, c);
    SecondDerivProfile p(alpha, delta, 0.0, c);
    p.segs_ = {{0, delta, Kind::power}, {delta, 1, Kind::phi}};
    p.finish();
    return p;
  }

  static SecondDerivProfile smooth(double delta, double eps, double alpha = 0.5,
                                   const ProfileCurve& c = profile()) {
    if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must lie in (0,1)");
    check_delta(delta, c);
    if (!(eps > 0 && eps <= delta / 100)) throw ConfigError("smoothing scale needs 0 < eps <= delta/100");
    SecondDerivProfile p(alpha, delta, eps, c);
    p.segs_ = {{0, eps, Kind::zero},
               {eps, 2 * eps, Kind::cut_in},
               {2 * eps, delta, Kind::power},
               {delta, delta + eps, Kind::blend},
               {delta + eps, 1, Kind::phi}};
    p.finish();
    return p;
  }

  double alpha() const { return alpha_; }
  double delta() const { return delta_; }
  double eps() const { return eps_; }
  bool is_smooth() const { return eps_ > 0; }
  const ProfileCurve& curve() const { return *curve_; }

  double operator()(double s) const {
    check(s);
    return half_value(s <= 1 ? s : 2 - s);
  }

  // f'', f''', f''''
  Jet2 jet(double s) const {
    check(s);
    if (s <= 1) return half_jet(s);
    const Jet2 j = half_jet(2 - s);
    return {j.v, -j.d1, j.d2};
  }

  // f'(s) = int_0^s f''
  double first(double s) const {
    check(s);
    if (s <= 1) return half_first(s);
    return 2 * f1_half_ - half_first(2 - s);
  }

  // f(s) = int_0^s f''(t) (s - t) dt
  double second(double s) const {
    check(s);
    if (s <= 1) return half_second(s);
    return half_second(2 - s) + 2 * f1_half_ * (s - 1);
  }

  // kinks and transition ends on [0, 2]
  std::vector<double> breakpoints() const {
    std::vector<double> b;
    for (const auto& g : segs_) b.push_back(g.a);
    b.push_back(1);
    for (auto it = segs_.rbegin(); it != segs_.rend(); ++it) b.push_back(2 - it->a);
    return b;
  }

  double power_coefficient() const { return coef_; }

  void write_csv(std::ostream& os, int n = 2001) const {
    os << "s,fpp\n";
    os.precision(17);
    for (int i = 0; i < n; ++i) {
      const double s = 2.0 * i / (n - 1);
      os << s << ',' << (*this)(s) << '\n';
    }
  }

  // phi'' against its two-term expansion on (0, delta]
  static void check_delta(double delta, const ProfileCurve& c) {
    if (!(delta > 0 && delta < 0.5)) throw ConfigError("delta must lie in (0, 0.5)");
    for (int i = 0; i <= 20; ++i) {
      const double x = delta * std::pow(10.0, -6.0 * i / 20);
      const double ref = ProfileCurve::kLead / std::sqrt(x) + ProfileCurve::kConst;
      if (std::abs(c.phi_shifted(x, 2) / ref - 1) > kExpansionTol)
        throw ConfigError("delta too large: phi'' leaves its cusp expansion on (0, delta]");
    }
  }

 private:
  enum class Kind { zero, cut_in, power, blend, phi };
  struct Seg {
    double a, b;
    Kind k;
    double F1 = 0, F2 = 0;      // f', f at a
    double phi0 = 0, phi1 = 0;  // phi~, phi~' at a
  };

  SecondDerivProfile(double alpha, double delta, double eps, const ProfileCurve& c)
      : alpha_(alpha), delta_(delta), eps_(eps), curve_(&c) {
    coef_ = std::pow(delta, alpha - 1) * c.phi_shifted(delta, 2);
  }

  void finish() {
    double F1 = 0, F2 = 0;
    for (auto& g : segs_) {
      g.F1 = F1;
      g.F2 = F2;
      g.phi0 = curve_->phi_shifted(g.a);
      g.phi1 = g.a == 0 ? -1.0 : curve_->phi_shifted(g.a, 1);
      const double l1 = local_first(g, g.b), l2 = local_second(g, g.b);
      F2 += F1 * (g.b - g.a) + l2;
      F1 += l1;
    }
    f1_half_ = F1;
  }

  static void check(double s) {
    if (!(s >= 0 && s <= 2)) throw DomainError("f'': s outside [0,2]");
  }

  const Seg& seg(double u) const {
    for (const auto& g : segs_)
      if (u <= g.b) return g;
    return segs_.back();
  }

  double power(double u) const { return u <= 0 ? 0.0 : coef_ * std::pow(u, 1 - alpha_); }
  Jet2 power_jet(double u) const {
    if (u <= 0) return {0, 0, 0};
    const double p = 1 - alpha_;
    const double v = coef_ * std::pow(u, p);
    return {v, p * v / u, p * (p - 1) * v / (u * u)};
  }
  Jet2 phi_jet(double u) const {
    const PhiJet j = curve_->jet_shifted(u);
    return {j.d2, j.d3, j.d4};
  }
  Jet2 step(double u, double a) const {
    const Jet2 c = smooth_step((u - a) / eps_);
    return {c.v, c.d1 / eps_, c.d2 / (eps_ * eps_)};
  }

  double half_value(double u) const {
    const Seg& g = seg(u);
    switch (g.k) {
      case Kind::zero: return 0;
      case Kind::power: return power(u);
      case Kind::phi: return curve_->phi_shifted(u, 2);
      case Kind::cut_in: return smooth_step((u - eps_) / eps_).v * power(u);
      case Kind::blend: {
        const double c = smooth_step((u - delta_) / eps_).v;
        return (1 - c) * power(u) + c * curve_->phi_shifted(u, 2);
      }
    }
    return 0;
  }

  Jet2 half_jet(double u) const {
    const Seg& g = seg(u);
    switch (g.k) {
      case Kind::zero: return {0, 0, 0};
      case Kind::power: return power_jet(u);
      case Kind::phi: return phi_jet(u);
      case Kind::cut_in: return step(u, eps_) * power_jet(u);
      case Kind::blend: {
        const Jet2 c = step(u, delta_);
        return (Jet2{1, 0, 0} - c) * power_jet(u) + c * phi_jet(u);
      }
    }
    return {};
  }

  double local_first(const Seg& g, double u) const {
    const double a = g.a;
    switch (g.k) {
      case Kind::zero: return 0;
      case Kind::power: {
        const double q = 2 - alpha_;
        return coef_ / q * (std::pow(u, q) - std::pow(a, q));
      }
      case Kind::phi: return curve_->phi_shifted(u, 1) - g.phi1;
      default: return integrate([this](double t) { return half_value(t); }, a, u);
    }
  }

  double local_second(const Seg& g, double u) const {
    const double a = g.a;
    switch (g.k) {
      case Kind::zero: return 0;
      case Kind::power: {
        const double q = 2 - alpha_;
        return coef_ * (u * (std::pow(u, q) - std::pow(a, q)) / q -
                        (std::pow(u, q + 1) - std::pow(a, q + 1)) / (q + 1));
      }
      case Kind::phi: return curve_->phi_shifted(u) - g.phi0 - g.phi1 * (u - a);
      default:
        return integrate([this, u](double t) { return half_value(t) * (u - t); }, a, u);
    }
  }

  double half_first(double u) const {
    const Seg& g = seg(u);
    return g.F1 + local_first(g, u);
  }
  double half_second(double u) const {
    const Seg& g = seg(u);
    return g.F2 + g.F1 * (u - g.a) + local_second(g, u);
  }

  double alpha_, delta_, eps_;
  const ProfileCurve* curve_;
  double coef_ = 0;
  double f1_half_ = 0;
  std::vector<Seg> segs_;
};

// s_g(x0, x) = int_{x0}^{x} g(t)(x - t) dt / (g(x0) (x - x0)^2)
template <class G>
double weighted_avg_s(G&& g, double x0, double x, const std::vector<double>& breaks = {}) {
  const double g0 = g(x0);
  if (!(g0 > 0)) throw DegenerateError("weighted_avg_s: g(x0) = 0");
  if (x == x0) throw DomainError("weighted_avg_s: x = x0");
  const double num = integrate_pieces([&](double t) { return g(t) * (x - t); }, x0, x, breaks);
  return num / (g0 * (x - x0) * (x - x0));
}

// d_g(x) = int_0^x g / (x g(x))
template <class G>
double deriv_ratio_d(G&& g, double x, const std::vector<double>& breaks = {}) {
  if (!(x > 0)) throw DomainError("deriv_ratio_d: x <= 0");
  const double gx = g(x);
  if (!(gx > 0)) throw DegenerateError("deriv_ratio_d: g(x) = 0");
  return integrate_pieces(g, 0.0, x, breaks) / (x * gx);
}

struct HEval {
  double value = 0;
  Vec2 grad = Vec2::Zero();
  Mat2 hess = Mat2::Zero();
  bool flat = false;
};

// affine function c + gx x + gy y (shifted frame)
struct Affine2 {
  double c = 0, gx = 0, gy = 0;
  double operator()(double x, double y) const { return c + gx * x + gy * y; }
};

// line y = y0 + slope (x - x0) (shifted frame)
struct Line {
  double x0 = 0, y0 = 0, slope = 0;
  double operator()(double x) const { return y0 + slope * (x - x0); }
};

// f, h and H(x, y) = f(x) + h(x)(|y| - phi(x)) near Gamma_1 u Gamma_3, linear in x near Gamma_2, Gamma_4
class Integrand1D {
 public:
  explicit Integrand1D(SecondDerivProfile fpp, int n = 3, double w_nbhd = 1e-2)
      : fpp_(std::move(fpp)), n_(n), w_(w_nbhd) {
    if (n < 2) throw ConfigError("dimension n must be >= 2");
    f2_ = fpp_.second(2);
    fp2_ = fpp_.first(2);
  }

  const SecondDerivProfile& fpp_profile() const { return fpp_; }
  const ProfileCurve& curve() const { return fpp_.curve(); }
  int dimension() const { return n_; }
  double w_nbhd() const { return w_; }

  // shifted abscissa
  double f(double s) const { return fpp_.second(s); }
  double fp(double s) const { return fpp_.first(s); }
  double fpp(double s) const { return fpp_(s); }

  // h, h', h''
  Jet2 h(double s) const {
    constexpr double tiny = 1e-15;
    if (!(s >= 0 && s <= 2)) throw DomainError("h: s outside [0,2]");
    s = std::clamp(s, tiny, 2 - tiny);
    const Jet2 F = fpp_.jet(s);
    if (F.v == 0 && F.d1 == 0 && F.d2 == 0) return {0, 0, 0};
    const PhiJet p = curve().jet_shifted(s);
    return (1.0 / (n_ - 1)) * (F / Jet2{p.d2, p.d3, p.d4});
  }

  // right linear piece: f(2) + f'(2)(x - 1), original frame
  double right_slope() const { return fp2_; }

  // original frame
  HEval H(double x, double y, bool want_hess = false) const {
    HEval r;
    const double ax = std::abs(x), ay = std::abs(y);
    if (ay >= ax && ax <= 1) {
      const double s = x + 1;
      const double sg = y >= 0 ? 1.0 : -1.0;
      const double ph = curve().phi_shifted(s) + 1;
      const double gap = ay - ph;
      if (std::abs(gap) > w_) throw DomainError("H: query outside the neighborhood of Gamma");
      const Jet2 hh = h(s);
      const double d1 = s <= 0 ? -1.0 : (s >= 2 ? 1.0 : curve().phi_shifted(s, 1));
      r.value = f(s) + hh.v * gap;
      r.grad = {fp(s) + hh.d1 * gap - hh.v * d1, sg * hh.v};
      if (want_hess) {
        const double d2 = hh.v == 0 ? 0.0 : curve().phi_shifted(s, 2);
        r.hess(0, 0) = fpp(s) + hh.d2 * gap - 2 * hh.d1 * d1 - hh.v * d2;
        r.hess(0, 1) = r.hess(1, 0) = sg * hh.d1;
      }
      return r;
    }
    // linear zones; distance check against Gamma_2 / Gamma_4 or the cusp
    const double gap = ay <= 1 ? ax - (curve().phi(ay)) : std::hypot(ax - 1, ay - 1);
    if (std::abs(gap) > w_) throw DomainError("H: query outside the neighborhood of Gamma");
    r.flat = true;
    if (x < 0) return r;
    r.value = f2_ + fp2_ * (x - 1);
    r.grad = {fp2_, 0};
    return r;
  }

  // L_p at p = (x0, phi~(x0)) in the shifted frame
  Affine2 tangent_plane(double x0) const {
    if (!(x0 > 0 && x0 < 2)) throw DomainError("tangent_plane: x0 outside (0,2)");
    const double fx = f(x0), fpx = fp(x0), h0 = h(x0).v;
    const double ph = curve().phi_shifted(x0), ph1 = curve().phi_shifted(x0, 1);
    Affine2 L;
    L.gx = fpx - h0 * ph1;
    L.gy = h0;
    L.c = fx - fpx * x0 - h0 * (ph - ph1 * x0);
    return L;
  }

  // intersection of L_p with the cusp plane (identically zero)
  Line intersection_line(double x0) const {
    if (!(x0 > 0 && x0 < 2)) throw DomainError("intersection_line: x0 outside (0,2)");
    const double h0 = h(x0).v;
    if (!(h0 > 0)) throw DegenerateError("intersection_line: parallel tangent planes");
    return {x0, curve().phi_shifted(x0) - f(x0) / h0, curve().phi_shifted(x0, 1) - fp(x0) / h0};
  }

  // S_H on Gamma_1 x Gamma_1 by quadrature of f'' and phi'' (shifted abscissae)
  double separation_quadrature(double x0, double x) const {
    const auto br = fpp_.breakpoints();
    const double a = integrate_pieces([&](double t) { return fpp_(t) * (x - t); }, x0, x, br);
    const double b = integrate_pieces(
        [&](double t) { return t <= 0 || t >= 2 ? 0.0 : curve().phi_shifted(t, 2) * (x - t); }, x0, x, br);
    return a - h(x0).v * b;
  }

  // f''(x0) (s_f'' - (2/(n-1)) (1/2) s_phi'') (x - x0)^2
  double separation_s_form(double x0, double x) const {
    const auto br = fpp_.breakpoints();
    auto phi2 = [&](double t) { return t <= 0 || t >= 2 ? 0.0 : curve().phi_shifted(t, 2); };
    const double sf = weighted_avg_s(fpp_, x0, x, br);
    const double sp = weighted_avg_s(phi2, x0, x, br);
    return fpp_(x0) * (sf - sp / (n_ - 1)) * (x - x0) * (x - x0);
  }

 private:
  SecondDerivProfile fpp_;
  int n_;
  double w_;
  double f2_ = 0, fp2_ = 0;
};

// S_H(p, q) = H(q) - H(p) - grad H(p).(q - p), original frame
// evaluated with p mirrored to x <= 0; H(-x, y) - H(x, y) is linear so S does not change
inline double separation_S(const Integrand1D& I, PlanePoint p, PlanePoint q) {
  if (p.x > 0) {
    p.x = -p.x;
    q.x = -q.x;
  }
  const HEval a = I.H(p.x, p.y), b = I.H(q.x, q.y);
  return b.value - a.value - a.grad[0] * (q.x - p.x) - a.grad[1] * (q.y - p.y);
}

}  // namespace singmin
