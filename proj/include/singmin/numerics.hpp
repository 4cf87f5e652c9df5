#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

namespace singmin {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSqrt2 = std::numbers::sqrt2;

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct SingularityError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AuditFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// value with first and second derivative in one variable
struct Jet2 {
  double v = 0, d1 = 0, d2 = 0;

  friend Jet2 operator+(Jet2 a, Jet2 b) { return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2}; }
  friend Jet2 operator-(Jet2 a, Jet2 b) { return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2}; }
  friend Jet2 operator*(Jet2 a, Jet2 b) {
    return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2 * a.d1 * b.d1 + a.v * b.d2};
  }
  friend Jet2 operator*(double s, Jet2 a) { return {s * a.v, s * a.d1, s * a.d2}; }
  friend Jet2 operator/(Jet2 a, Jet2 b) {
    const double q = a.v / b.v;
    const double q1 = (a.d1 - q * b.d1) / b.v;
    const double q2 = (a.d2 - 2 * q1 * b.d1 - q * b.d2) / b.v;
    return {q, q1, q2};
  }
};

// C-infinity step: 0 for t <= 0, 1 for t >= 1
inline Jet2 smooth_step(double t) {
  if (t <= 0) return {0, 0, 0};
  if (t >= 1) return {1, 0, 0};
  const double s = 1 - t;
  const double a = std::exp(-1 / t), b = std::exp(-1 / s);
  const Jet2 A{a, a / (t * t), a * (1 / (t * t * t * t) - 2 / (t * t * t))};
  const Jet2 B{b, -b / (s * s), b * (1 / (s * s * s * s) - 2 / (s * s * s))};
  return A / (A + B);
}

inline constexpr double kQuadTol = 1e-12;

namespace detail {
struct Panel {
  double K = 0, err = 0, l1 = 0;
};
template <class F>
Panel gk_panel(F& f, double a, double b) {
  Panel p;
  p.K = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 0, 0, &p.err, &p.l1);
  return p;
}
// the library's own recursion halves its absolute target on every split; its error estimate
// has a roundoff floor that does not shrink with the panel, so that never terminates. Here a
// split that does not lower the estimate is taken as roundoff and accepted.
template <class F>
double gk_adapt(F& f, double a, double b, const Panel& P, double tol, double floor, int depth) {
  if (depth == 0 || P.err <= std::max(tol * std::abs(P.K), floor)) return P.K;
  const double m = 0.5 * (a + b);
  const Panel L = gk_panel(f, a, m), R = gk_panel(f, m, b);
  if (L.err + R.err >= P.err) return L.K + R.K;
  return gk_adapt(f, a, m, L, tol, floor, depth - 1) + gk_adapt(f, m, b, R, tol, floor, depth - 1);
}
}  // namespace detail

// adaptive Gauss-Kronrod: relative tolerance per panel, absolute floor from the first panel's L1
template <class F>
double integrate(F&& f, double a, double b, double tol = kQuadTol) {
  if (a == b) return 0.0;
  const detail::Panel P = detail::gk_panel(f, a, b);
  const double floor = 32 * std::numeric_limits<double>::epsilon() * P.l1;
  return detail::gk_adapt(f, a, b, P, tol, floor, 40);
}

// both endpoints may carry an integrable |t-end|^(-1/2) singularity; t = end + u^2 near each
template <class F>
double integrate_endpoint_safe(F&& f, double a, double b, double tol = kQuadTol) {
  if (a == b) return 0.0;
  if (b < a) return -integrate_endpoint_safe(f, b, a, tol);
  const double m = 0.5 * (a + b);
  const double r = std::sqrt(m - a);
  auto left = [&](double u) { return 2 * u * f(a + u * u); };
  auto right = [&](double u) { return 2 * u * f(b - u * u); };
  return integrate(left, 0.0, r, tol) + integrate(right, 0.0, r, tol);
}

// same, split at interior kinks
template <class F>
double integrate_pieces(F&& f, double a, double b, const std::vector<double>& breaks,
                        double tol = kQuadTol) {
  if (b < a) return -integrate_pieces(f, b, a, breaks, tol);
  double sum = 0, lo = a;
  for (double c : breaks) {
    if (c <= lo || c >= b) continue;
    sum += integrate_endpoint_safe(f, lo, c, tol);
    lo = c;
  }
  return sum + integrate_endpoint_safe(f, lo, b, tol);
}

// bracketed root of a continuous function with a sign change on [lo, hi]
template <class F>
double bracket_root(F&& f, double lo, double hi) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if ((flo > 0) == (fhi > 0)) throw DegenerateError("root not bracketed");
  boost::uintmax_t it = 200;
  auto tol = boost::math::tools::eps_tolerance<double>(std::numeric_limits<double>::digits - 2);
  auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, it);
  return 0.5 * (r.first + r.second);
}

inline double sqr(double x) { return x * x; }

}  // namespace singmin
