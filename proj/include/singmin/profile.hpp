#pragma once

#include <array>
#include <cmath>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "numerics.hpp"

namespace singmin {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct PlanePoint {
  double x = 0, y = 0;
};

enum class Branch { G1 = 1, G2 = 2, G3 = 3, G4 = 4 };
enum class Frame { original, shifted };

inline PlanePoint to_shifted(PlanePoint p) { return {p.x + 1, p.y - 1}; }
inline PlanePoint to_original(PlanePoint p) { return {p.x - 1, p.y + 1}; }

// w(x1,x2) = (x2^2 - x1^2) / sqrt(2 (x1^2 + x2^2))
inline double eval_w(double x1, double x2) {
  const double r2 = x1 * x1 + x2 * x2;
  if (r2 == 0) throw DomainError("eval_w: origin");
  return (x2 * x2 - x1 * x1) / std::sqrt(2 * r2);
}

inline Vec2 grad_w(double x1, double x2) {
  const double r2 = x1 * x1 + x2 * x2;
  if (r2 == 0) throw SingularityError("grad_w: origin");
  const double c = 1 / (kSqrt2 * r2 * std::sqrt(r2));
  return {-x1 * (x1 * x1 + 3 * x2 * x2) * c, x2 * (3 * x1 * x1 + x2 * x2) * c};
}

// D^2 w = ((g''+g)/r) tau tau^T, tau the unit tangent of the circle
inline Mat2 hess_w(double x1, double x2) {
  const double r2 = x1 * x1 + x2 * x2;
  if (r2 == 0) throw SingularityError("hess_w: origin");
  const double k = 3 * (x1 * x1 - x2 * x2) / (kSqrt2 * r2 * r2 * std::sqrt(r2));
  Mat2 m;
  m << x2 * x2, -x1 * x2, -x1 * x2, x1 * x1;
  return k * m;
}

// boundary values of w on the circle
inline double g_theta(double th) { return -std::cos(2 * th) / kSqrt2; }

inline void check_gamma_theta(double th) {
  constexpr double slack = 1e-15;
  if (!(th >= kPi / 4 - slack && th <= 3 * kPi / 4 + slack))
    throw DomainError("theta outside [pi/4, 3pi/4]");
}

inline PlanePoint gamma_point(double th) {
  check_gamma_theta(th);
  const double c = std::cos(th), s = std::sin(th);
  return {-c * (1 + 2 * s * s) / kSqrt2, s * (1 + 2 * c * c) / kSqrt2};
}

// dx/dtheta and dy/dtheta along Gamma_1
inline double gamma_dx(double th) { return -3 * std::sin(th) * std::cos(2 * th) / kSqrt2; }
inline double gamma_dy(double th) { return 3 * std::cos(th) * std::cos(2 * th) / kSqrt2; }

// phi and derivatives up to fourth order at one abscissa
struct PhiJet {
  double d0 = 0, d1 = 0, d2 = 0, d3 = 0, d4 = 0;
};

struct ExpansionFit {
  double c2 = 0, c3 = 0, c4 = 0;
  double max_rel_residual = 0;
};

class ProfileCurve {
 public:
  // phi'' below this distance to a cusp comes from the two-term expansion
  static constexpr double kCuspCutoff = 1e-8;
  // phi''(-1+e) = kLead e^{-1/2} + kConst + O(sqrt e)
  static inline const double kLead = std::sqrt(2.0 / 3.0);
  static constexpr double kConst = -16.0 / 9.0;

  explicit ProfileCurve(int table_size = 257) {
    t_.resize(table_size);
    e_.resize(table_size);
    for (int i = 0; i < table_size; ++i) {
      t_[i] = (kPi / 4) * i / (table_size - 1);
      e_[i] = cusp_dx(t_[i]);
    }
  }

  // x(pi/4 + t) + 1 and y(pi/4 + t) - 1, free of cancellation near the cusp
  static double cusp_dx(double t) {
    const double th = kPi / 4 + t;
    const double a = std::sin(0.5 * th + kPi / 8), b = std::sin(0.5 * t);
    return 4 * kSqrt2 * a * a * b * b * (std::cos(th) + kSqrt2);
  }
  static double cusp_dy(double t) {
    const double th = kPi / 4 + t;
    const double a = std::cos(0.5 * th + kPi / 8), b = std::sin(0.5 * t);
    return -4 * kSqrt2 * a * a * b * b * (std::sin(th) + kSqrt2);
  }

  // t in [0, pi/4] with x(pi/4 + t) + 1 = e, e in [0, 1]
  double t_of_cusp_distance(double e) const {
    if (!(e >= 0 && e <= 1)) throw DomainError("cusp distance outside [0,1]");
    if (e == 0) return 0;
    if (e == 1) return kPi / 4;
    auto it = std::upper_bound(e_.begin(), e_.end(), e);
    const std::size_t i = std::clamp<std::size_t>(it - e_.begin(), 1, e_.size() - 1);
    const double lo = t_[i - 1], hi = t_[i];
    double guess = i == 1 ? std::sqrt(2 * e / 3) : lo + (hi - lo) * (e - e_[i - 1]) / (e_[i] - e_[i - 1]);
    guess = std::clamp(guess, lo, hi);
    auto f = [e](double t) {
      const double th = kPi / 4 + t;
      return std::make_pair(cusp_dx(t) - e, 3 * std::sin(th) * std::sin(2 * t) / kSqrt2);
    };
    boost::uintmax_t it_max = 100;
    return boost::math::tools::newton_raphson_iterate(f, guess, lo, hi, 52, it_max);
  }

  double theta_of(double x) const {
    if (!(std::abs(x) <= 1)) throw DomainError("phi: |x| > 1");
    const double t = t_of_cusp_distance(1 - std::abs(x));
    return x <= 0 ? kPi / 4 + t : 3 * kPi / 4 - t;
  }

  double phi(double x, int order = 0) const {
    if (!(std::abs(x) <= 1)) throw DomainError("phi: |x| > 1");
    if (order < 0 || order > 2) throw DomainError("phi: order must be 0, 1 or 2");
    const PhiJet j = left_jet(1 - std::abs(x), order);
    if (order == 0) return j.d0 + 1;
    if (order == 1) return x <= 0 ? j.d1 : -j.d1;
    return j.d2;
  }

  // derivatives up to order four; orders >= 2 singular at |x| = 1
  PhiJet jet(double x) const {
    if (!(std::abs(x) <= 1)) throw DomainError("phi: |x| > 1");
    PhiJet j = left_jet(1 - std::abs(x), 4);
    j.d0 += 1;
    if (x > 0) {
      j.d1 = -j.d1;
      j.d3 = -j.d3;
    }
    return j;
  }

  // shifted frame: phi~(s) = phi(s - 1) - 1 on [0, 2]; s is the exact distance to the left cusp
  double phi_shifted(double s, int order = 0) const {
    if (!(s >= 0 && s <= 2)) throw DomainError("phi~: s outside [0,2]");
    if (order < 0 || order > 2) throw DomainError("phi: order must be 0, 1 or 2");
    const bool right = s > 1;
    const PhiJet j = left_jet(right ? 2 - s : s, order);
    if (order == 0) return j.d0;
    if (order == 1) return right ? -j.d1 : j.d1;
    return j.d2;
  }
  PhiJet jet_shifted(double s) const {
    if (!(s >= 0 && s <= 2)) throw DomainError("phi~: s outside [0,2]");
    const bool right = s > 1;
    PhiJet j = left_jet(right ? 2 - s : s, 4);
    if (right) {
      j.d1 = -j.d1;
      j.d3 = -j.d3;
    }
    return j;
  }

  // graph curvature with the upward normal on Gamma_1 (positive)
  double curvature(double th) const {
    check_gamma_theta(th);
    const double t = std::min(th - kPi / 4, 3 * kPi / 4 - th);
    if (t <= 0) throw SingularityError("curvature at a cusp");
    return std::abs(kSqrt2 / (3 * std::sin(2 * t)));  // 1/|g'' + g|
  }

  // point of a branch in the original frame, graph parameter t in [-1, 1]
  PlanePoint branch_point(Branch b, double t) const {
    const double f = phi(t);
    switch (b) {
      case Branch::G1: return {t, f};
      case Branch::G2: return {-f, t};
      case Branch::G3: return {t, -f};
      case Branch::G4: return {f, t};
    }
    return {};
  }

  // reflected tangent graph a(x) = -2x - phi~(x) minus the upper part of Gamma_2 (shifted frame).
  // Gamma_2 near the cusp is the mirror of Gamma_1 in y = -x: {(-phi~(s), -s)}.
  // Abscissae right of Gamma_2's span carry no point of Gamma_2; the gap is +inf there.
  double barrier_gap(double x) const {
    if (!(x >= 0 && x <= 2)) throw DomainError("barrier_gap: x outside [0,2]");
    const double a = -2 * x - phi_shifted(x);
    const double xmax = -phi_shifted(1);
    if (x > xmax) return std::numeric_limits<double>::infinity();
    if (x == 0) return a;
    const double s = bracket_root([&](double t) { return phi_shifted(t) + x; }, 0.0, 1.0);
    return a + s;
  }

  ExpansionFit cusp_expansion_fit(int n = 200) const {
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
      const double t = std::pow(10.0, -4 + 2.0 * i / (n - 1));
      A.row(i) << 1, t, t * t;
      b[i] = (gamma_point(kPi / 4 + t).x + 1) / (t * t);
    }
    const Eigen::Vector3d c = A.colPivHouseholderQr().solve(b);
    ExpansionFit fit{c[0], c[1], c[2], 0};
    for (int i = 0; i < n; ++i)
      fit.max_rel_residual = std::max(fit.max_rel_residual, std::abs(A.row(i).dot(c) - b[i]) / b[i]);
    return fit;
  }

  void write_csv(std::ostream& os, int n = 401) const {
    os << "branch,theta,x,y\n";
    os.precision(17);
    for (int b = 1; b <= 4; ++b) {
      for (int i = 0; i < n; ++i) {
        const double th = kPi / 4 + (kPi / 2) * i / (n - 1);
        const PlanePoint p = gamma_point(th);
        PlanePoint q = p;
        if (b == 2) q = {-p.y, p.x};
        if (b == 3) q = {p.x, -p.y};
        if (b == 4) q = {p.y, p.x};
        os << b << ',' << th << ',' << q.x << ',' << q.y << '\n';
      }
    }
  }

 private:
  // phi - 1 and derivatives at x = -1 + e
  PhiJet left_jet(double e, int order) const {
    const double t = t_of_cusp_distance(e);
    const double th = kPi / 4 + t;
    PhiJet j;
    j.d0 = cusp_dy(t);
    if (order < 1) return j;
    j.d1 = -1 / std::tan(th);
    if (order < 2) return j;
    if (e == 0) throw SingularityError("phi'' at a cusp");
    if (e < kCuspCutoff) {
      const double r = std::sqrt(e);
      j.d2 = kLead / r + kConst;
      j.d3 = -0.5 * kLead / (e * r);
      j.d4 = 0.75 * kLead / (e * e * r);
      return j;
    }
    // B = phi''(theta) = sqrt2 / (3 sin^3 sin 2t), X = dx/dtheta = 3 sin sin 2t / sqrt2
    const double s = std::sin(th), c = std::cos(th);
    const Jet2 S{s, c, -s};
    const Jet2 T{std::sin(2 * t), 2 * std::cos(2 * t), -4 * std::sin(2 * t)};
    const Jet2 B = (kSqrt2 / 3) * (Jet2{1, 0, 0} / (S * S * S * T));
    const Jet2 X = (3 / kSqrt2) * (S * T);
    j.d2 = B.v;
    j.d3 = B.d1 / X.v;
    j.d4 = (B.d2 * X.v - B.d1 * X.d1) / (X.v * X.v * X.v);
    return j;
  }

  std::vector<double> t_, e_;
};

inline const ProfileCurve& profile() {
  static const ProfileCurve curve;
  return curve;
}

}  // namespace singmin
