#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "singmin/revolve.hpp"

using namespace singmin;

namespace {
constexpr double kDelta = 1e-2, kEps = 1e-5;

const Integrand1D& H0() {
  static const Integrand1D I(SecondDerivProfile::rough(0.5, kDelta));
  return I;
}
const Integrand1D& Hs() {
  static const Integrand1D I(SecondDerivProfile::smooth(kDelta, kEps));
  return I;
}
const RevolvedIntegrand& Gs() {
  static const RevolvedIntegrand G(Hs());
  return G;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

Mat3 rot_x(double a) {
  Mat3 R = Mat3::Identity();
  R(1, 1) = R(2, 2) = std::cos(a);
  R(2, 1) = std::sin(a);
  R(1, 2) = -std::sin(a);
  return R;
}
}  // namespace

TEST(U0, HomogeneityAndAxis) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = random_unit(rng);
    const Jet3 a = u0_derivatives(x);
    for (double t : {0.3, 4.0}) {
      const Jet3 b = u0_derivatives(t * x);
      EXPECT_NEAR(b.value, t * a.value, 1e-13 * t);
      EXPECT_LT((b.grad - a.grad).norm(), 1e-13);
      EXPECT_LT((t * b.hess - a.hess).norm(), 1e-11 * (1 + a.hess.norm()));
    }
  }
  EXPECT_THROW(u0_derivatives(Vec3(1, 0, 0)), SingularityError);
}

TEST(U0, RankTwoAndRadialKernel) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = random_unit(rng);
    const Jet3 J = u0_derivatives(x);
    EXPECT_LT((J.hess * x).norm(), 1e-12 * (1 + J.hess.norm()));
    EXPECT_LT((J.hess - J.hess.transpose()).norm(), 1e-14 * (1 + J.hess.norm()));
    Eigen::SelfAdjointEigenSolver<Mat3> es(J.hess);
    int nz = 0;
    for (int k = 0; k < 3; ++k) nz += std::abs(es.eigenvalues()[k]) > 1e-9 * (1 + J.hess.norm());
    EXPECT_LE(nz, 2);
    EXPECT_NEAR(J.grad.dot(x), J.value, 1e-13);
  }
}

TEST(U0, HessianMatchesDifferences) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x = random_unit(rng);
    if (std::hypot(x[1], x[2]) < 0.05) continue;
    const Jet3 J = u0_derivatives(x);
    for (double h : {1e-5, 1e-6}) {
      for (int k = 0; k < 3; ++k) {
        Vec3 d = Vec3::Zero();
        d[k] = h;
        const double dv = (u0_derivatives(x + d).value - u0_derivatives(x - d).value) / (2 * h);
        const Vec3 dg = (u0_derivatives(x + d).grad - u0_derivatives(x - d).grad) / (2 * h);
        EXPECT_NEAR(J.grad[k], dv, 1e-7);
        EXPECT_LT((J.hess.col(k) - dg).norm(), 2e-6 * (1 + J.hess.norm()));
      }
    }
  }
}

TEST(U0, GradientImageHasNormalX) {
  std::mt19937_64 rng(4);
  const ProfileCurve& c = profile();
  int n = 0;
  for (int i = 0; i < 500; ++i) {
    const Vec3 x = random_unit(rng);
    if (in_K0(x)) continue;
    const Vec3 p = u0_derivatives(x).grad;
    if (std::abs(p[0]) > 1 - 1e-6) continue;
    EXPECT_NEAR(std::hypot(p[1], p[2]), c.phi(p[0]), 1e-12);
    EXPECT_LT((omega_normal(c, p) - x).norm(), 1e-10);
    ++n;
  }
  EXPECT_GT(n, 200);
}

TEST(Revolved, RotationalInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.99, 0.99), a(0, 2 * kPi), d(-5e-3, 5e-3);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const Vec3 p = rot_x(a(rng)) * Vec3(x, profile().phi(x) + d(rng), 0);
    const Mat3 R = rot_x(a(rng));
    const GEval g = Gs()(p, true), h = Gs()(R * p, true);
    EXPECT_NEAR(h.value, g.value, 1e-12 * (1 + std::abs(g.value)));
    EXPECT_LT((h.grad - R * g.grad).norm(), 1e-12 * (1 + g.grad.norm()));
    EXPECT_LT((h.hess - R * g.hess * R.transpose()).norm(), 1e-10 * (1 + g.hess.norm()));
  }
}

TEST(Revolved, HessianMatchesDifferences) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.9, 0.9), a(0, 2 * kPi), d(-4e-3, 4e-3);
  for (int i = 0; i < 60; ++i) {
    const double x = u(rng), rho = profile().phi(x) + d(rng);
    const Vec3 p = rot_x(a(rng)) * Vec3(x, rho, 0);
    const GEval g = Gs()(p, true);
    for (double h : {1e-5, 1e-6}) {
      for (int k = 0; k < 3; ++k) {
        Vec3 d = Vec3::Zero();
        d[k] = h;
        const double dv = (Gs()(p + d).value - Gs()(p - d).value) / (2 * h);
        const Vec3 dg = (Gs()(p + d).grad - Gs()(p - d).grad) / (2 * h);
        EXPECT_NEAR(g.grad[k], dv, 1e-6 * (1 + g.grad.norm()));
        EXPECT_LT((g.hess.col(k) - dg).norm(), 1e-4 * (1 + g.hess.norm())) << p.transpose();
      }
    }
  }
}

TEST(Revolved, TangentialHessianClosedForm) {
  const RevolvedIntegrand G(H0());
  for (double p1 : {-0.95, -0.7, -0.3, 0.0, 0.4, 0.8, 0.97}) {
    const Mat2 a = tangential_hessian(G, p1), b = tangential_hessian_formula(H0(), p1);
    EXPECT_LT((a - b).norm(), 1e-9 * (1 + b.norm())) << p1;
    EXPECT_NEAR(a(0, 1), 0, 1e-9 * (1 + b.norm()));
  }
}

TEST(Revolved, SecondFundamentalForm) {
  const ProfileCurve& c = profile();
  const Mat2 m = second_fundamental_form(c, 0);
  EXPECT_NEAR(m(0, 0), std::sqrt(2.0) / 3, 1e-12);
  EXPECT_NEAR(m(1, 1), -std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(m(0, 1), 0, 0);
  for (double p1 : {-0.9, 0.5}) EXPECT_GT(second_fundamental_form(c, p1)(0, 0), 0);
}

TEST(Revolved, SeparationReductionFormula) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p = u0_derivatives(random_unit(rng)).grad, q = u0_derivatives(random_unit(rng)).grad;
    const double S = separation_S3(Gs(), p, q), Sr = separation_S3_reduced(Gs(), p, q);
    EXPECT_NEAR(S, Sr, 1e-10 * (1 + std::abs(S)));
  }
}

TEST(ElResidual, VanishesOnSphere) {
  std::mt19937_64 rng(8);
  int n = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = random_unit(rng);
    if (std::hypot(x[1], x[2]) < 1e-3) continue;
    const ElResidual r = el_residual(Gs(), x);
    EXPECT_LE(std::abs(r.value), 1e-8 * std::max(1.0, r.scale)) << x.transpose();
    ++n;
  }
  EXPECT_GT(n, 990);
}

TEST(ElResidual, FlatZoneExactlyZeroAndScaling) {
  for (double a : {0.1, 0.3, 0.6}) {
    const Vec3 x(std::cos(a), std::sin(a), 0);
    for (double sg : {-1.0, 1.0}) {
      const ElResidual r = el_residual(Gs(), Vec3(sg * x[0], x[1], x[2]));
      EXPECT_TRUE(r.flat);
      EXPECT_EQ(r.value, 0.0);
    }
  }
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    const Vec3 x = random_unit(rng);
    if (in_K0(x) || std::hypot(x[1], x[2]) < 0.1) continue;
    const ElResidual r1 = el_residual(Gs(), x), r2 = el_residual(Gs(), 3 * x);
    EXPECT_NEAR(r2.scale, r1.scale / 3, 1e-10 * r1.scale);
  }
  EXPECT_THROW(el_residual(Gs(), Vec3::Zero()), SingularityError);
}

namespace {
WeakFormQuad cone_quad() {
  WeakFormQuad Q;
  Q.cone_slopes = {1.0};
  return Q;
}
}  // namespace

TEST(WeakForm, ZeroTestFunctionAndSupportCheck) {
  const auto V = composed_field(Gs());
  Bump b;
  b.amp = 0;
  EXPECT_EQ(weak_form_integral(V, b, cone_quad()), 0.0);
  b.amp = 1;
  b.c = Vec3(0.6, 0, 0);
  EXPECT_THROW(weak_form_integral(V, b, cone_quad()), DomainError);
}

TEST(WeakForm, ConeAvoidingBumpIntegratesToZero) {
  const auto V = composed_field(Gs());
  for (double a : {1.0, 1.3, 2.0}) {
    Bump b;
    b.radius = 0.15;
    b.c = 0.6 * Vec3(std::cos(a), std::sin(a) * std::cos(0.4), std::sin(a) * std::sin(0.4));
    WeakFormQuad Q = cone_quad();
    Q.panel = 0.02;
    Q.n_az = 256;
    EXPECT_LE(std::abs(weak_form_integral(V, b, Q)), 1e-6) << a;
  }
}

TEST(WeakForm, ExcisionRateForBumpAcrossTheCone) {
  const auto V = composed_field(Gs());
  Bump b;
  b.c = Vec3::Zero();
  b.radius = 0.9;
  const WeakFormFit f = weak_form_rate(V, b, cone_quad());
  EXPECT_TRUE(f.pass) << f.rate << ' ' << f.integral[0] << ' ' << f.integral[2];
  std::mt19937_64 rng(11);
  for (int i = 0; i < 3; ++i) {
    const WeakFormFit g = weak_form_rate(V, random_bump(rng), cone_quad());
    EXPECT_TRUE(g.pass) << g.rate << ' ' << g.integral[0] << ' ' << g.integral[2];
  }
}

namespace {
const ScalarSupExtension& Ebar() {
  static const ScalarSupExtension E = build_scalar_extension(0.5, kDelta);
  return E;
}
}  // namespace

TEST(SupExtension, ReproducesH0OnSamples) {
  const ScalarSupExtension& E = Ebar();
  const Integrand1D& I = E.integrand();
  for (Branch b : {Branch::G1, Branch::G3})
    for (double s : audit_parameters(256)) {
      const PlanePoint p = branch_point_shifted(I.curve(), b, s);
      const HEval a = E.H(p.x, p.y), h = I.H(p.x, p.y);
      EXPECT_NEAR(a.value, h.value, 1e-12 * (1 + std::abs(h.value))) << int(b) << ' ' << s;
      EXPECT_LT((a.grad - h.grad).norm(), 1e-8) << int(b) << ' ' << s;
    }
}

TEST(SupExtension, MirrorRelationAndEta) {
  const ScalarSupExtension& E = Ebar();
  const double m = E.integrand().right_slope();
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.01, 1.5);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), y = u(rng) - 0.75;
    EXPECT_NEAR(E.H(x, y).value, E.H(-x, y).value + m * x, 1e-12);
  }
  EXPECT_EQ(E.eta(0), 0.0);
  EXPECT_EQ(E.eta(2), 0.0);
  for (double s : {0.05, 0.5, 1.0, 1.5, 1.95}) EXPECT_GT(E.eta(s), 0) << s;
  EXPECT_THROW(ScalarSupExtension(E.integrand(), {0, 1, 2}, {0, -1, 0}), AuditFailure);
}

TEST(SupExtension, FlatNearSecondAndFourthBranch) {
  const FlatZoneReport r = measure_flat_zones(Ebar());
  EXPECT_GT(r.radius_left, 0);
  EXPECT_GT(r.radius_right, 0);
}

TEST(SupExtension, MidpointConvexity) {
  const ScalarSupExtension& E = Ebar();
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.6, 1.6);
  int bad = 0;
  for (int i = 0; i < 100000; ++i) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    const double a = E.H(ax, ay).value, b = E.H(bx, by).value, m = E.H(0.5 * (ax + bx), 0.5 * (ay + by)).value;
    bad += m > 0.5 * (a + b) + 1e-12 * (1 + std::abs(a) + std::abs(b));
  }
  EXPECT_EQ(bad, 0);
}

TEST(SupExtension, CuspExponentAtSmallScales) {
  // below the scale set by delta the pointwise exponent approaches 5/3 > 2 - alpha
  const HolderFit f = cusp_holder_slopes(Ebar(), 24, 1e-9, 1e-6);
  EXPECT_GE(f.min_slope, 1.5);
  EXPECT_GT(f.n_flat, 0);
}

TEST(SupExtension, RevolvedWeakForm) {
  const ScalarG0 G0(Ebar());
  const auto V = composed_field(G0);
  std::mt19937_64 rng(14);
  const WeakFormQuad Q = cone_quad();
  for (int i = 0; i < 2; ++i) {
    const WeakFormFit f = weak_form_rate(V, random_bump(rng), Q);
    EXPECT_TRUE(f.pass) << f.rate;
  }
}

TEST(SupExtension, CsvOutputs) {
  std::ostringstream a, b, c;
  write_level_set_csv(a, Ebar(), 11);
  write_omega_meridian_csv(b, profile(), 21);
  write_el_residual_csv(c, Gs(), 21);
  EXPECT_EQ(a.str().substr(0, 14), "p1,rho,value\n-");
  EXPECT_EQ(b.str().substr(0, 14), "branch,p1,rho\n");
  EXPECT_EQ(c.str().substr(0, 22), "theta,residual,scale\n0");
  const std::string t = a.str();
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 122);
}

TEST(BandAudit3D, SmoothingDefaultReportsItsEpsilon) {
  const BandAudit3D A = band_audit_3d(Hs(), kDelta, 1e-4);
  EXPECT_GT(A.gamma_meas, 0);
  EXPECT_NEAR(A.gamma_meas, A.planar_gamma, 1e-12);
  EXPECT_LT(A.max_reduction_err, 1e-12);
  EXPECT_EQ(A.n_random, 10000);
  EXPECT_NEAR(A.eps_meas, -A.planar_worst, 1e-12);
  EXPECT_FALSE(A.pass);  // eps_smooth = 1e-5 gives about 8.5 sqrt(1e-5)
  EXPECT_NEAR(A.eps_meas / std::sqrt(kEps), 8.5, 0.5);
}

TEST(BandAudit3D, TargetReachedBySmoothingChoice) {
  const double es = smoothing_for_target(1e-4, 8.5);
  const Integrand1D I(SecondDerivProfile::smooth(kDelta, es));
  const BandAudit3D A = band_audit_3d(I, kDelta, 1e-4);
  EXPECT_TRUE(A.pass) << A.eps_meas;
  EXPECT_GT(A.gamma_meas, 0.1);
  const nlohmann::json j = to_json(A);
  EXPECT_TRUE(j["pass"].get<bool>());
}
