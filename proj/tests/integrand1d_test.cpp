#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "singmin/audit1d.hpp"

using namespace singmin;

namespace {
const ProfileCurve& P = profile();
constexpr double kDelta = 1e-2, kEps = 1e-5;

double phi2(double t) { return t <= 0 || t >= 2 ? 0.0 : P.phi_shifted(t, 2); }

const SecondDerivProfile& rough() {
  static const SecondDerivProfile p = SecondDerivProfile::rough(0.5, kDelta);
  return p;
}
const SecondDerivProfile& smooth() {
  static const SecondDerivProfile p = SecondDerivProfile::smooth(kDelta, kEps);
  return p;
}
const Integrand1D& H0() {
  static const Integrand1D I(rough());
  return I;
}
const Integrand1D& Hs() {
  static const Integrand1D I(smooth());
  return I;
}

// Richardson-extrapolated central difference
template <class F>
double rdiff(F&& f, double x, double h = 1e-3) {
  auto d = [&](double k) { return (f(x + k) - f(x - k)) / (2 * k); };
  return (4 * d(h / 2) - d(h)) / 3;
}
}  // namespace

TEST(WeightedAvg, ConstantAndLimit) {
  auto one = [](double) { return 3.0; };
  EXPECT_NEAR(weighted_avg_s(one, 0.3, 1.2), 0.5, 1e-14);
  EXPECT_NEAR(weighted_avg_s(one, 0.3, 0.1), 0.5, 1e-14);
  for (double x0 : {0.2, 0.7, 1.5}) {
    EXPECT_NEAR(weighted_avg_s(phi2, x0, x0 + 1e-4), 0.5, 1e-3);
    EXPECT_NEAR(weighted_avg_s(phi2, x0, x0 - 1e-4), 0.5, 1e-3);
  }
  EXPECT_THROW(weighted_avg_s([](double t) { return t; }, 0.0, 1.0), DegenerateError);
  EXPECT_THROW(weighted_avg_s(one, 0.5, 0.5), DomainError);
}

TEST(WeightedAvg, PowerLawAtZero) {
  for (double a : {0.25, 0.5, 0.75}) {
    auto g = [a](double t) { return std::pow(t, 1 - a); };
    for (double x0 : {1e-3, 0.1, 1.0}) EXPECT_NEAR(weighted_avg_s(g, x0, 0.0), 1 / (3 - a), 1e-8) << a;
  }
}

TEST(WeightedAvg, MonotoneForMonotoneWeights) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 2);
  const std::vector<std::pair<std::function<double(double)>, int>> gs = {
      {[](double t) { return t; }, 1},
      {[](double t) { return t * t; }, 1},
      {[](double t) { return std::exp(t); }, 1},
      {[](double t) { return 1 / (1 + t); }, -1}};
  for (const auto& [g, sign] : gs) {
    for (int k = 0; k < 250; ++k) {
      const double x0 = u(rng);
      double a = u(rng), b = u(rng);
      if (std::abs(a - x0) < 1e-3 || std::abs(b - x0) < 1e-3 || std::abs(a - b) < 1e-3) continue;
      if (a > b) std::swap(a, b);
      const double sa = weighted_avg_s(g, x0, a), sb = weighted_avg_s(g, x0, b);
      EXPECT_GE(sign * (sb - sa), -1e-12) << x0 << ' ' << a << ' ' << b;
    }
  }
}

TEST(DerivRatio, Values) {
  EXPECT_NEAR(deriv_ratio_d([](double) { return 2.0; }, 0.7), 1, 1e-14);
  for (double a : {0.25, 0.5, 0.75})
    EXPECT_NEAR(deriv_ratio_d([a](double t) { return std::pow(t, 1 - a); }, 0.4), 1 / (2 - a), 1e-8);
  EXPECT_THROW(deriv_ratio_d([](double) { return 0.0; }, 0.5), DegenerateError);
  EXPECT_THROW(deriv_ratio_d(phi2, 0.0), DomainError);
}

TEST(DerivRatio, HalfPhiTendsToOneAtSqrtRate) {
  double prev = 0;
  for (double x : {1e-3, 1e-4, 1e-5, 1e-6}) {
    const double r = 0.5 * deriv_ratio_d(phi2, x) - 1;
    EXPECT_GT(r, 0);
    const double c = r / std::sqrt(x);
    EXPECT_GT(c, 0.9);
    EXPECT_LT(c, 1.2);
    if (prev > 0) { EXPECT_NEAR(c / prev, 1, 0.05); }
    prev = c;
  }
}

TEST(RoughProfile, ShapeAndSymmetry) {
  const auto& f = rough();
  EXPECT_EQ(f(0), 0.0);
  EXPECT_NEAR(f(kDelta), P.phi_shifted(kDelta, 2), 1e-12);
  EXPECT_NEAR(f(kDelta * (1 - 1e-12)), f(kDelta * (1 + 1e-12)), 1e-8);
  EXPECT_NEAR(f(kDelta / 4), f.power_coefficient() * std::sqrt(kDelta / 4), 1e-14);
  for (int i = 0; i <= 200; ++i) {
    const double s = 1.0 * i / 200;
    EXPECT_GE(f(s), 0);
    EXPECT_NEAR(f(s), f(2 - s), 1e-12 * (1 + f(s)));
  }
  for (double s : {0.2, 0.6, 0.99}) EXPECT_EQ(f(s), P.phi_shifted(s, 2));
}

TEST(RoughProfile, RejectsBadParameters) {
  EXPECT_THROW(SecondDerivProfile::rough(0.0, kDelta), ConfigError);
  EXPECT_THROW(SecondDerivProfile::rough(1.0, kDelta), ConfigError);
  EXPECT_THROW(SecondDerivProfile::rough(0.5, 0.3), ConfigError);
  EXPECT_THROW(SecondDerivProfile::rough(0.5, -1e-3), ConfigError);
  EXPECT_NO_THROW(SecondDerivProfile::rough(0.5, 1e-3));
}

TEST(SmoothProfile, Regions) {
  const auto& f = smooth();
  const auto& r = rough();
  EXPECT_EQ(f(kEps / 2), 0.0);
  EXPECT_EQ(f(kEps), 0.0);
  for (double s : {2 * kEps, 1e-4, 3e-3, kDelta}) EXPECT_NEAR(f(s), r(s), 1e-14 * (1 + r(s)));
  const double mid = (kDelta + 1) / 2;
  EXPECT_EQ(f(mid), P.phi_shifted(mid, 2));
  EXPECT_EQ(f(2 - mid), f(mid));
  EXPECT_THROW(SecondDerivProfile::smooth(kDelta, kDelta / 50), ConfigError);
  EXPECT_THROW(SecondDerivProfile::smooth(kDelta, 0.0), ConfigError);
}

TEST(SmoothProfile, IncreasingOnCoreAndSmoothAcrossTransitions) {
  const auto& f = smooth();
  double prev = -1;
  for (int i = 0; i <= 4000; ++i) {
    const double s = kDelta * i / 4000;
    const double v = f(s);
    EXPECT_GE(v, prev);
    prev = v;
  }
  // f''' from the jet matches differences of f'' across the cut-in and the glue
  for (double s : {1.3 * kEps, 1.7 * kEps, kDelta + 0.3 * kEps, kDelta + 0.8 * kEps}) {
    const double h = kEps * 1e-4;
    const double fd = (f(s + h) - f(s - h)) / (2 * h);
    EXPECT_NEAR(f.jet(s).d1, fd, 1e-5 * (1 + std::abs(fd))) << s;
  }
  for (double s : {kEps, 2 * kEps, kDelta, kDelta + kEps}) {
    const double h = kEps * 1e-3;
    EXPECT_NEAR(f(s - h), f(s + h), 1e-3 * (1 + f(s))) << s;
  }
}

TEST(SmoothProfile, DerivRatioBelowTwoThirds) {
  const auto& f = smooth();
  for (int i = 0; i <= 60; ++i) {
    const double x0 = 10 * kEps * std::pow(kDelta / (10 * kEps), i / 60.0);
    EXPECT_LT(deriv_ratio_d(f, x0, f.breakpoints()), 2.0 / 3.0) << x0;
  }
}

TEST(Integrand, SecondDerivRecoveredFromQuadrature) {
  for (const Integrand1D* I : {&H0(), &Hs()}) {
    EXPECT_EQ(I->f(0), 0.0);
    EXPECT_EQ(I->fp(0), 0.0);
    const double h = 1e-4;
    for (int i = 0; i <= 40; ++i) {
      const double s = 0.05 + 1.9 * i / 40;
      const double fd = (I->f(s + h) - 2 * I->f(s) + I->f(s - h)) / (h * h);
      EXPECT_NEAR(fd, I->fpp(s), 1e-6 * (1 + I->fpp(s))) << s;
      EXPECT_NEAR((I->f(s + h) - I->f(s - h)) / (2 * h), I->fp(s), 1e-7) << s;
    }
  }
}

TEST(Integrand, CoefficientRelation) {
  for (double s : {0.003, 0.2, 0.9, 1.4, 1.999}) {
    EXPECT_NEAR(Hs().h(s).v, Hs().fpp(s) / (2 * P.phi_shifted(s, 2)), 1e-14) << s;
    EXPECT_GE(Hs().h(s).v, 0);
  }
  for (double s : {0.0, 0.5 * kEps, kEps, 2 - kEps, 2.0}) EXPECT_EQ(Hs().h(s).v, 0.0) << s;
  const Integrand1D I4(rough(), 4);
  EXPECT_NEAR(I4.h(0.5).v, rough()(0.5) / (3 * P.phi_shifted(0.5, 2)), 1e-14);
  EXPECT_THROW(Integrand1D(rough(), 1), ConfigError);
  // h', h'' from the jet
  for (double s : {0.004, 0.5, 1.6}) {
    auto hv = [](double t) { return Hs().h(t).v; };
    auto h1 = [](double t) { return Hs().h(t).d1; };
    EXPECT_NEAR(Hs().h(s).d1, rdiff(hv, s, 1e-4), 1e-7 * (1 + std::abs(Hs().h(s).d1)));
    EXPECT_NEAR(Hs().h(s).d2, rdiff(h1, s, 1e-4), 1e-6 * (1 + std::abs(Hs().h(s).d2)));
  }
}

TEST(Integrand, ValuesOnGamma) {
  for (int i = 0; i <= 50; ++i) {
    const double x = -1 + 2.0 * i / 50;
    const double y = P.phi(x);
    const HEval a = Hs().H(x, y), b = Hs().H(x, -y);
    EXPECT_NEAR(a.value, Hs().f(x + 1), 1e-14);
    EXPECT_NEAR(b.value, Hs().f(x + 1), 1e-14);
    EXPECT_NEAR(a.grad[1], Hs().h(x + 1).v, 1e-15);
    EXPECT_NEAR(b.grad[1], -Hs().h(x + 1).v, 1e-15);
    if (x + 1 >= kDelta + kEps && x + 1 <= 2 - kDelta - kEps) { EXPECT_NEAR(a.grad[1], 0.5, 1e-14); }
  }
  EXPECT_THROW(Hs().H(0, 0.5), DomainError);
  EXPECT_THROW(Hs().H(0.9, 0.0), DomainError);
}

TEST(Integrand, RoughIntegrandNonnegativeOnAllBranches) {
  for (Branch b : {Branch::G1, Branch::G2, Branch::G3, Branch::G4})
    for (int i = 0; i <= 400; ++i) {
      const PlanePoint p = branch_point_shifted(P, b, 2.0 * i / 400);
      EXPECT_GE(H0().H(p.x, p.y).value, 0) << int(b) << ' ' << i;
    }
}

TEST(Integrand, LinearNearSecondAndFourthBranch) {
  const double m = Hs().right_slope();
  EXPECT_NEAR(m, 2 * Hs().fp(1), 1e-13);
  EXPECT_NEAR(Hs().f(2), m, 1e-13);
  for (double t : {-0.8, 0.0, 0.5}) {
    const PlanePoint l = branch_point_shifted(P, Branch::G2, t + 1);
    const PlanePoint r = branch_point_shifted(P, Branch::G4, t + 1);
    const HEval a = Hs().H(l.x - 1e-3, l.y), b = Hs().H(r.x + 1e-3, r.y);
    EXPECT_EQ(a.value, 0.0);
    EXPECT_TRUE(a.flat && b.flat);
    EXPECT_NEAR(b.value, m * (r.x + 1e-3), 1e-13);
    EXPECT_EQ(b.grad[1], 0.0);
  }
}

TEST(Integrand, HessianMatchesDifferences) {
  for (double s : {0.004, 0.3, 1.0, 1.8}) {
    const double x = s - 1, y = P.phi(x) + 3e-3;
    const HEval e = Hs().H(x, y, true);
    auto gx = [&](double t) { return Hs().H(t, y).grad[0]; };
    auto gy = [&](double t) { return Hs().H(x, t).grad[0]; };
    const double sc = 1 + e.hess.norm();
    EXPECT_NEAR(e.hess(0, 0), rdiff(gx, x, 1e-4), 1e-6 * sc) << s;
    EXPECT_NEAR(e.hess(0, 1), rdiff(gy, y, 1e-4), 1e-6 * sc) << s;
    EXPECT_EQ(e.hess(1, 1), 0.0);
  }
}

TEST(TangentPlane, MatchesValueAndGradient) {
  for (double x0 : {0.3, 0.7, 1.0, 1.4, 1.7}) {
    const Affine2 L = Hs().tangent_plane(x0);
    const double y0 = P.phi_shifted(x0);
    EXPECT_NEAR(L(x0, y0), Hs().f(x0), 1e-14);
    // H in the original frame; the shift does not change gradients
    auto hx = [&](double t) { return Hs().H(t, y0 + 1).value; };
    auto hy = [&](double t) { return Hs().H(x0 - 1, t).value; };
    EXPECT_NEAR(L.gx, rdiff(hx, x0 - 1), 1e-10) << x0;
    EXPECT_NEAR(L.gy, rdiff(hy, y0 + 1), 1e-10) << x0;
  }
  EXPECT_THROW(Hs().tangent_plane(0.0), DomainError);
  EXPECT_THROW(Hs().tangent_plane(2.0), DomainError);
}

TEST(TangentPlane, OnReflectedGraphGivesMinusSeparation) {
  for (double x0 : {0.05, 0.3, 0.8}) {
    const Affine2 L = H0().tangent_plane(x0);
    ASSERT_NEAR(H0().h(x0).v, 0.5, 1e-14);
    for (double x : {0.0, 0.02, 0.5, 1.3, 1.9}) {
      const double g = P.phi_shifted(x) - 2 * H0().f(x);
      const double S = H0().separation_quadrature(x0, x);
      EXPECT_NEAR(L(x, g), -S, 1e-11) << x0 << ' ' << x;
      EXPECT_LE(L(x, g), 1e-12);
    }
  }
}

TEST(Separation, ClosedFormsAgreeWithDirect) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  EXPECT_EQ(separation_S(Hs(), {0.2, P.phi(0.2)}, {0.2, P.phi(0.2)}), 0.0);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const double x0 = u(rng), x = u(rng);
    if (x0 < 1e-6 || x0 > 2 - 1e-6) continue;
    const PlanePoint p = branch_point_shifted(P, Branch::G1, x0), q = branch_point_shifted(P, Branch::G1, x);
    const double d = separation_S(Hs(), p, q), a = Hs().separation_quadrature(x0, x);
    worst = std::max(worst, std::abs(d - a));
  }
  EXPECT_LT(worst, 1e-9);
  for (double x0 : {0.05, 0.5, 1.2})
    for (double x : {0.01, 0.7, 1.95})
      EXPECT_NEAR(Hs().separation_s_form(x0, x), Hs().separation_quadrature(x0, x), 1e-10) << x0 << ' ' << x;
}

TEST(Separation, FirstConvexityConditionForRoughBuild) {
  const auto& f = rough();
  const auto br = f.breakpoints();
  for (int i = 1; i < 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      const double x0 = 2.0 * i / 40, x = 2.0 * j / 40;
      if (i == j) continue;
      const double sf = weighted_avg_s(f, x0, x, br), sp = weighted_avg_s(phi2, x0, x, br);
      EXPECT_GE(sf - 0.5 * sp, -1e-12) << x0 << ' ' << x;
    }
}

TEST(Separation, PowerRuleNearCusp) {
  for (double a : {0.25, 0.5, 0.75}) {
    const auto f = SecondDerivProfile::rough(a, kDelta);
    for (double x0 : {1e-4, 1e-6}) {
      EXPECT_NEAR(weighted_avg_s(f, x0, 0.0, f.breakpoints()), 1 / (3 - a), 1e-8);
      const double half = 0.5 * weighted_avg_s(phi2, x0, 0.0);
      EXPECT_NEAR(half, 1.0 / 3.0, 0.2 * std::sqrt(x0));
      EXPECT_GT(1 / (3 - a), half);
    }
  }
}

TEST(IntersectionLine, SlopeConditions) {
  for (const Integrand1D* I : {&H0(), &Hs()}) {
    const auto& f = I->fpp_profile();
    for (int i = 0; i <= 30; ++i) {
      const double x0 = 2e-4 * std::pow(0.95 / 2e-4, i / 30.0);
      const Line l = I->intersection_line(x0);
      EXPECT_LT(l.slope, P.phi_shifted(x0, 1)) << x0;
      const double lhs = deriv_ratio_d(f, x0, f.breakpoints()), rhs = 0.5 * deriv_ratio_d(phi2, x0);
      if (std::abs(lhs - rhs) > 1e-9) { EXPECT_EQ(l.slope >= -1, lhs <= rhs) << x0; }
    }
  }
  EXPECT_THROW(Hs().intersection_line(0.5 * kEps), DegenerateError);
}

TEST(IntersectionLine, AnchorAboveAntidiagonalNearCusp) {
  for (double x0 : {2.5 * kEps, 5 * kEps, 10 * kEps}) {
    const Line l = Hs().intersection_line(x0);
    EXPECT_GT(l(x0), -x0) << x0;
  }
}

TEST(Audit, CaseOneConstant) {
  const double c = 0.8 * (1 - std::pow(0.2, 2.5));
  EXPECT_NEAR(c, 0.7856891649440014, 1e-15);  // evaluated oracle
  const auto& f = smooth();
  for (int i = 0; i <= 40; ++i) {
    const double x0 = 10 * kEps * std::pow(kDelta / (10 * kEps), i / 40.0);
    EXPECT_GE(2 * weighted_avg_s(f, x0, 0.0, f.breakpoints()), c) << x0;
  }
}

TEST(Audit, XiCrossing) {
  EXPECT_NEAR(xi_root(), 0.650351816038, 1e-11);  // scalar root oracle
  const double xi = xi_root();
  for (double x0 : {1e-3, 1e-4, 1e-5, 1e-6}) {
    const double r = l_crossing_ratio(P, x0);
    EXPECT_LT(r, xi * (1 + std::sqrt(x0)));
    EXPECT_NEAR(r, xi, 0.5 * std::sqrt(x0)) << x0;
  }
}

TEST(Audit, GridCoversAllBranches) {
  const auto pts = gamma_samples(P, audit_parameters(256));
  int seen[5] = {};
  for (const auto& g : pts) ++seen[int(g.b)];
  for (int b = 1; b <= 4; ++b) EXPECT_EQ(seen[b], 256);
  const auto s = audit_parameters(256);
  EXPECT_EQ(s.front(), 0.0);
  EXPECT_EQ(s.back(), 2.0);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_THROW(audit_parameters(100), ConfigError);
}

TEST(Audit, RoughIntegrandSeparates) {
  const SeparationAudit a = audit_H0(0.5, kDelta);
  EXPECT_GT(a.n_pairs, 1000000);
  EXPECT_GE(a.min_S, -1e-10);
  EXPECT_EQ(a.n_negative, 0);
  ASSERT_EQ(a.eta.size(), 256u);
  EXPECT_LE(a.eta.front(), 1e-3);
  EXPECT_LE(a.eta.back(), 1e-3);
  const double quarter_min = 0.25 * P.phi_shifted(1, 2);
  for (std::size_t i = 0; i < a.eta.size(); ++i) {
    const double s = a.eta_s[i];
    if (s > 1e-3 && s < 2 - 1e-3) { EXPECT_GT(a.eta[i], 0) << s; }
    if (s == 1) { EXPECT_GE(a.eta[i], 0.99 * quarter_min); }
  }
}

TEST(Audit, SmoothIntegrandSeparatesOnBand) {
  const SeparationAudit a4 = audit_H(kDelta, 1e-4), a5 = audit_H(kDelta, 1e-5);
  const SeparationAudit a0 = audit_H0(0.5, kDelta);
  for (const auto* a : {&a4, &a5}) {
    EXPECT_GT(a->gamma_measured, 0);
    EXPECT_TRUE(a->negatives_near_cusp);
    EXPECT_LT(a->worst_ratio, 0);
    EXPECT_NEAR(a->gamma_measured, a0.gamma_measured, 0.05 * a0.gamma_measured);
  }
  const double c4 = -a4.worst_ratio / std::sqrt(1e-4), c5 = -a5.worst_ratio / std::sqrt(1e-5);
  EXPECT_NEAR(c5 / c4, 1, 0.25);
  EXPECT_NEAR(a5.gamma_measured / a4.gamma_measured, 1, 0.05);
}

TEST(Audit, JsonAndCsv) {
  const SeparationAudit a = audit_H(kDelta, 1e-4, 240);
  const auto j = to_json(a);
  for (const char* k : {"band", "gamma_measured", "worst_pair", "worst_ratio", "min_S", "eta"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["band"][0].get<double>(), kDelta);
  std::ostringstream os;
  write_separation_heatmap(os, Hs(), 7);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "x0,x,S,ratio");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 7 * 6);
  std::ostringstream fs;
  smooth().write_csv(fs, 11);
  EXPECT_EQ(fs.str().substr(0, 6), "s,fpp\n");
}

TEST(Audit, BranchEvaluationMatchesPlanarH) {
  for (const Integrand1D* I : {&H0(), &Hs()}) {
    for (Branch b : {Branch::G1, Branch::G2, Branch::G3, Branch::G4})
      for (double s : {0.0, 1e-6, 0.003, 0.4, 1.0, 1.7, 2 - 1e-7, 2.0}) {
        const PlanePoint p = branch_point_shifted(P, b, s);
        const HEval a = H_on_branch(*I, b, s), h = I->H(p.x, p.y);
        EXPECT_NEAR(a.value, h.value, 1e-13 * (1 + std::abs(h.value))) << int(b) << ' ' << s;
        EXPECT_LT((a.grad - h.grad).norm(), 1e-9 * (1 + h.grad.norm())) << int(b) << ' ' << s;
        const CuspLocated l = locate_sample(P, b, s);
        EXPECT_NEAR(l.cusp.x + l.off.x, p.x, 1e-15);
        EXPECT_NEAR(l.cusp.y + l.off.y, p.y, 1e-15);
        EXPECT_LE(std::abs(l.off.x) + std::abs(l.off.y), 3.0);
      }
  }
}

TEST(Audit, NearCuspConstantStableAtTinySmoothing) {
  // C in worst >= -C sqrt(eps) does not drift as eps and the cusp grid shrink
  const double c8 = -audit_H(kDelta, 1e-8, 512).worst_ratio / 1e-4;
  const double c10 = -audit_H(kDelta, 1e-10, 512).worst_ratio / 1e-5;
  EXPECT_GT(c8, 5);
  EXPECT_NEAR(c10 / c8, 1.0, 0.05);
}
