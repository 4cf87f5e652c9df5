#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <vector>

#include "json.hpp"

#include "assemble6d.hpp"
#include "extend.hpp"

namespace singmin {

// ---------------------------------------------------------------------------------------------
// mesh: cube grid on [-1,1]^3, each cube cut into 6 tetrahedra along its main diagonal

struct Mesh {
  double h = 0;
  int N = 0;  // grid index range [-N, N]
  std::vector<Vec3> nodes;
  std::vector<char> fixed;  // 1 on nodes with |x| >= 1
  std::vector<std::array<int, 4>> tets;
  std::vector<std::uint8_t> shape;  // which of the 6 reference tets
  std::array<Eigen::Matrix<double, 4, 3>, 6> B;  // grad u = sum_a u_a B.row(a)
  double vol = 0;  // per tet
  int origin = -1;

  std::size_t size() const { return nodes.size(); }
  std::size_t n_free() const { return std::size_t(std::count(fixed.begin(), fixed.end(), 0)); }
};

inline Mesh ball_mesh(double h) {
  const double Nd = 1 / h;
  const int N = int(std::lround(Nd));
  if (!(h > 0) || std::abs(Nd - N) > 1e-9 || N < 2) throw ConfigError("mesh: h must be 1/N with N >= 2");
  Mesh M;
  M.h = h;
  M.N = N;
  M.vol = h * h * h / 6;
  const int W = 2 * N + 1;
  auto idx = [&](int i, int j, int k) { return ((i + N) * W + (j + N)) * W + (k + N); };
  auto pos = [&](int i, int j, int k) { return Vec3(i * h, j * h, k * h); };
  auto inside = [&](int i, int j, int k) { return pos(i, j, k).squaredNorm() < 1 - 1e-12; };

  const std::array<std::array<int, 3>, 6> perms{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (int s = 0; s < 6; ++s) {
    Eigen::Matrix3d E = Eigen::Matrix3d::Zero();  // rows: vertex a - vertex 0
    Vec3 c = Vec3::Zero();
    for (int a = 0; a < 3; ++a) {
      c[perms[s][a]] += h;
      E.row(a) = c.transpose();
    }
    // grad u solves E g = (u_a - u_0)
    const Eigen::Matrix3d Ei = E.inverse();
    M.B[s].row(0) = -Ei.rowwise().sum().transpose();
    for (int a = 0; a < 3; ++a) M.B[s].row(a + 1) = Ei.col(a).transpose();
  }

  std::vector<int> map(std::size_t(W) * W * W, -1);
  auto node = [&](int i, int j, int k) {
    int& m = map[std::size_t(idx(i, j, k))];
    if (m < 0) {
      m = int(M.nodes.size());
      M.nodes.push_back(pos(i, j, k));
      M.fixed.push_back(inside(i, j, k) ? 0 : 1);
      if (i == 0 && j == 0 && k == 0) M.origin = m;
    }
    return m;
  };
  for (int i = -N; i < N; ++i)
    for (int j = -N; j < N; ++j)
      for (int k = -N; k < N; ++k) {
        bool any = false;
        for (int b = 0; b < 8 && !any; ++b) any = inside(i + (b & 1), j + (b >> 1 & 1), k + (b >> 2 & 1));
        if (!any) continue;
        for (int s = 0; s < 6; ++s) {
          std::array<int, 3> c{i, j, k};
          std::array<int, 4> t;
          t[0] = node(c[0], c[1], c[2]);
          for (int a = 0; a < 3; ++a) {
            ++c[std::size_t(perms[s][a])];
            t[std::size_t(a) + 1] = node(c[0], c[1], c[2]);
          }
          M.tets.push_back(t);
          M.shape.push_back(std::uint8_t(s));
        }
      }
  return M;
}

// ---------------------------------------------------------------------------------------------
// fields and integrands

// nodal values, one column per component
struct DiscreteField {
  MatX U;
  int components() const { return int(U.cols()); }
};

// P stacks the component gradients: (grad u^1, grad u^2, ...)
using IntegrandFn = std::function<double(const VecX& P, VecX* grad)>;

inline IntegrandFn quadratic_integrand() {
  return [](const VecX& P, VecX* g) {
    if (g) *g = P;
    return 0.5 * P.squaredNorm();
  };
}

template <class Planar>
IntegrandFn scalar_integrand(std::shared_ptr<const Revolved<Planar>> G) {
  return [G](const VecX& P, VecX* g) {
    const GEval e = (*G)(Vec3(P[0], P[1], P[2]));
    if (g) *g = VecX(e.grad);
    return e.value;
  };
}

// queries outside the serialized box are domain errors
inline IntegrandFn bundle_integrand(std::shared_ptr<const LoadedBundle> B) {
  return [B](const VecX& P, VecX* g) {
    if (!B->in_domain(P)) throw DomainError("integrand: gradient outside the bundle domain");
    const GlobalEval e = B->F.eval(P);
    if (g) *g = e.grad;
    return e.value;
  };
}

inline VecX tet_gradient(const Mesh& M, const MatX& U, std::size_t t) {
  const auto& T = M.tets[t];
  const auto& B = M.B[M.shape[t]];
  const int m = int(U.cols());
  VecX P(3 * m);
  for (int c = 0; c < m; ++c) {
    Vec3 g = Vec3::Zero();
    for (int a = 0; a < 4; ++a) g += U(T[std::size_t(a)], c) * B.row(a).transpose();
    P.segment<3>(3 * c) = g;
  }
  return P;
}

// sum over tets of vol F(Du); grad (same shape as U) when requested
inline double assemble_energy(const IntegrandFn& F, const Mesh& M, const DiscreteField& u, MatX* grad = nullptr) {
  const MatX& U = u.U;
  if (Eigen::Index(M.size()) != U.rows()) throw ConfigError("energy: field does not match mesh");
  const int m = int(U.cols());
  if (grad) *grad = MatX::Zero(U.rows(), m);
  double E = 0;
  VecX gP;
  for (std::size_t t = 0; t < M.tets.size(); ++t) {
    const VecX P = tet_gradient(M, U, t);
    E += M.vol * F(P, grad ? &gP : nullptr);
    if (!grad) continue;
    const auto& T = M.tets[t];
    const auto& B = M.B[M.shape[t]];
    for (int c = 0; c < m; ++c) {
      const Vec3 gc = M.vol * gP.segment<3>(3 * c);
      for (int a = 0; a < 4; ++a) (*grad)(T[std::size_t(a)], c) += B.row(a).dot(gc);
    }
  }
  if (!std::isfinite(E)) throw DomainError("energy: not finite");
  return E;
}

inline DiscreteField interpolate(const Mesh& M, int m, const std::function<VecX(const Vec3&)>& f) {
  DiscreteField u{MatX(Eigen::Index(M.size()), m)};
  for (std::size_t i = 0; i < M.size(); ++i) u.U.row(Eigen::Index(i)) = f(M.nodes[i]).transpose();
  return u;
}

// ---------------------------------------------------------------------------------------------
// analytic maps (value only; defined on the axes as well)

inline double u0_value(const Vec3& x) {
  const double r = std::hypot(x[1], x[2]);
  return x[0] == 0 && r == 0 ? 0.0 : eval_w(x[0], r);
}

inline VecX u0_field(const Vec3& x) { return VecX::Constant(1, u0_value(x)); }

inline VecX vector_map_field(const Vec3& x) {
  VecX v(2);
  v << u0_value(Vec3(0.5 * x[0], x[1], x[2])), u0_value(Vec3(0.5 * x[2], x[1], x[0]));
  return v;
}

// ---------------------------------------------------------------------------------------------
// solver

struct SolveOptions {
  double tol = 1e-8;  // relative to the initial gradient norm
  int max_iter = 2000;
  double armijo = 1e-4;
  double shrink = 0.5, grow = 2.0;
  double min_step = 1e-30;
  double atol = 1e-14;  // a start already at rounding level counts as converged
};

struct SolveResult {
  DiscreteField u;
  int iterations = 0;
  bool converged = false, diverged = false;
  double energy0 = 0, energy = 0, grad0 = 0, grad = 0;
  std::vector<double> history;  // energy per accepted step
};

namespace solve_detail {
inline double free_norm(const Mesh& M, const MatX& G) {
  double s = 0;
  for (std::size_t i = 0; i < M.size(); ++i)
    if (!M.fixed[i]) s += G.row(Eigen::Index(i)).squaredNorm();
  return std::sqrt(s);
}
// lumped Laplacian diagonal
inline VecX jacobi(const Mesh& M) {
  VecX d = VecX::Zero(Eigen::Index(M.size()));
  for (std::size_t t = 0; t < M.tets.size(); ++t)
    for (int a = 0; a < 4; ++a) d[M.tets[t][std::size_t(a)]] += M.vol * M.B[M.shape[t]].row(a).squaredNorm();
  return d;
}
}  // namespace solve_detail

// preconditioned nonlinear CG (Polak-Ribiere+, restarts to steepest descent) with Armijo
// backtracking; domain errors count as +inf energy
inline SolveResult minimize(const IntegrandFn& F, const Mesh& M, DiscreteField start, const SolveOptions& o = {}) {
  using namespace solve_detail;
  SolveResult r;
  const VecX D = jacobi(M);
  auto precond = [&](const MatX& G) {
    MatX Z = MatX::Zero(G.rows(), G.cols());
    for (std::size_t i = 0; i < M.size(); ++i)
      if (!M.fixed[i]) Z.row(Eigen::Index(i)) = G.row(Eigen::Index(i)) / D[Eigen::Index(i)];
    return Z;
  };
  auto dot = [](const MatX& a, const MatX& b) { return (a.array() * b.array()).sum(); };
  MatX G;
  double E = assemble_energy(F, M, start, &G);
  r.energy0 = E;
  r.grad0 = free_norm(M, G);
  r.grad = r.grad0;
  r.history.push_back(E);
  DiscreteField u = std::move(start);
  MatX Z = precond(G), dir = -Z;
  double gz = dot(G, Z), step = 1;
  const double target = std::max(o.tol * r.grad0, o.atol);
  while (r.grad > target && r.iterations < o.max_iter) {
    double slope = dot(G, dir);
    if (!(slope < 0)) {
      dir = -Z;
      slope = -gz;
    }
    bool accepted = false;
    const double first = step;
    while (step >= o.min_step) {
      DiscreteField trial{u.U + step * dir};
      MatX Gt;
      double Et = std::numeric_limits<double>::infinity(), dE = Et;
      try {
        Et = assemble_energy(F, M, trial, &Gt);
      } catch (const DomainError&) {
      }
      // below the rounding level of E the change is estimated from the slopes (trapezoid)
      if (std::isfinite(Et)) dE = Et - E;
      if (std::isfinite(Et) && step >= 1e-3 * first && std::abs(dE) <= 1e-12 * (std::abs(E) + 1)) dE = 0.5 * step * (slope + dot(Gt, dir));
      if (dE <= o.armijo * step * slope) {
        u = std::move(trial);
        G = std::move(Gt);
        E = Et;
        accepted = true;
        break;
      }
      // minimizer of the quadratic through E, slope and Et, kept inside [0.1, shrink] * step
      double next = o.shrink * step;
      if (std::isfinite(Et)) {
        const double q = -slope * step * step / (2 * (dE - slope * step));
        next = std::clamp(q, 0.1 * step, o.shrink * step);
      }
      step = next;
    }
    if (!accepted) {
      r.diverged = true;
      break;
    }
    ++r.iterations;
    r.history.push_back(E);
    r.grad = free_norm(M, G);
    const MatX Zn = precond(G);
    const double gzn = dot(G, Zn);
    const double beta = std::max(0.0, (gzn - dot(G, Z)) / gz);
    // next trial step from the expected decrease of the new direction
    dir = -Zn + beta * dir;
    Z = Zn;
    const double slope_new = dot(G, dir);
    step = slope_new < 0 ? std::min(o.grow * step, step * slope / slope_new) : step;
    gz = gzn;
  }
  r.converged = r.grad <= target;
  r.energy = E;
  r.u = std::move(u);
  return r;
}

// ---------------------------------------------------------------------------------------------
// reports

struct SolveReport {
  double h = 0;
  std::size_t n_nodes = 0, n_free = 0, n_tets = 0;
  double energy = 0, energy_interp = 0, sup_dist = 0, origin_osc = 0;
  int iterations = 0;
  bool converged = false, diverged = false;
  double grad0 = 0, grad = 0;
};

inline double sup_distance(const DiscreteField& a, const DiscreteField& b) {
  return (a.U - b.U).rowwise().norm().maxCoeff();
}

// largest spread of the cell gradients at the origin
inline double origin_oscillation(const Mesh& M, const DiscreteField& u) {
  std::vector<VecX> g;
  for (std::size_t t = 0; t < M.tets.size(); ++t)
    for (int v : M.tets[t])
      if (v == M.origin) {
        g.push_back(tet_gradient(M, u.U, t));
        break;
      }
  double osc = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) osc = std::max(osc, (g[i] - g[j]).norm());
  return osc;
}

inline std::vector<double> singularity_probe(const std::vector<std::pair<const Mesh*, const DiscreteField*>>& runs) {
  std::vector<double> out;
  for (const auto& [M, u] : runs) out.push_back(origin_oscillation(*M, *u));
  return out;
}

// diameter of grad u0(S^2); grad u0 = (w_1, w_2 e) so antipodal e is the worst case
inline double u0_gradient_diameter(int n = 721) {
  std::vector<Vec2> g;
  for (int i = 0; i < n; ++i) {
    const double th = kPi * i / (n - 1);
    g.push_back(grad_w(std::cos(th), std::sin(th)));
  }
  double d = 0;
  for (const Vec2& a : g)
    for (const Vec2& b : g) d = std::max(d, std::hypot(a[0] - b[0], a[1] + b[1]));
  return d;
}

struct ClusterReport {
  int n_cells = 0, n_left = 0, n_right = 0;  // cells whose gradient sits on each flat piece
  double gap = 0;                            // distance between the two groups
  bool two_clusters = false;
};

// scalar run: gradients of cells within radius of the origin against the flat pieces of G
template <class Planar>
ClusterReport flat_clusters(const Mesh& M, const DiscreteField& u, const Revolved<Planar>& G, double radius) {
  ClusterReport r;
  std::vector<Vec3> L, R;
  for (std::size_t t = 0; t < M.tets.size(); ++t) {
    bool near = true;
    for (int v : M.tets[t]) near &= M.nodes[std::size_t(v)].norm() <= radius + 1e-12;
    if (!near) continue;
    ++r.n_cells;
    const VecX P = tet_gradient(M, u.U, t);
    const Vec3 p(P[0], P[1], P[2]);
    if (!G(p).flat) continue;
    (p[0] < 0 ? L : R).push_back(p);
  }
  r.n_left = int(L.size());
  r.n_right = int(R.size());
  r.gap = std::numeric_limits<double>::infinity();
  for (const Vec3& a : L)
    for (const Vec3& b : R) r.gap = std::min(r.gap, (a - b).norm());
  if (L.empty() || R.empty()) r.gap = 0;
  r.two_clusters = r.n_left > 0 && r.n_right > 0 && r.gap > 0;
  return r;
}

// ---------------------------------------------------------------------------------------------
// minimality probe: energy(u + t psi) - energy(u) for random bumps vanishing on fixed nodes

struct PerturbationReport {
  int n_trials = 0, n_fail = 0, n_domain = 0;
  double worst = std::numeric_limits<double>::infinity();  // min energy change
  double tol = 1e-8;
  bool pass = false;
};

inline PerturbationReport perturbation_test(const IntegrandFn& F, const Mesh& M, const DiscreteField& u, int n_psi,
                                            std::uint64_t seed, std::vector<double> ts = {1e-2, -1e-2, 1e-3, -1e-3},
                                            double tol = 1e-8) {
  PerturbationReport r;
  r.tol = tol;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  const double E0 = assemble_energy(F, M, u);
  const int m = u.components();
  for (int k = 0; k < n_psi; ++k) {
    Vec3 c;
    do c = Vec3(U(rng), U(rng), U(rng)) * 0.7;
    while (c.norm() > 0.7);
    const double rad = std::max(3 * M.h, 0.15 + 0.15 * U(rng));
    const VecX amp = VecX::NullaryExpr(m, [&] { return U(rng); });
    MatX psi = MatX::Zero(u.U.rows(), m);
    for (std::size_t i = 0; i < M.size(); ++i) {
      if (M.fixed[i]) continue;
      const double s = (M.nodes[i] - c).norm() / rad;
      if (s < 1) psi.row(Eigen::Index(i)) = smooth_step(1 - s).v * amp.transpose();
    }
    for (double t : ts) {
      ++r.n_trials;
      try {
        const double dE = assemble_energy(F, M, DiscreteField{u.U + t * psi}) - E0;
        r.worst = std::min(r.worst, dE);
        r.n_fail += dE < -tol;
      } catch (const DomainError&) {
        ++r.n_domain;
        ++r.n_fail;
      }
    }
  }
  r.pass = r.n_fail == 0;
  return r;
}

inline nlohmann::json to_json(const SolveReport& s) {
  return {{"h", s.h},
          {"n_nodes", s.n_nodes},
          {"n_free", s.n_free},
          {"n_tets", s.n_tets},
          {"energy", s.energy},
          {"energy_interpolant", s.energy_interp},
          {"sup_distance", s.sup_dist},
          {"origin_oscillation", s.origin_osc},
          {"iterations", s.iterations},
          {"converged", s.converged},
          {"diverged", s.diverged},
          {"grad_norm_initial", s.grad0},
          {"grad_norm_final", s.grad}};
}

inline nlohmann::json to_json(const PerturbationReport& p) {
  return {{"trials", p.n_trials}, {"failures", p.n_fail}, {"domain_errors", p.n_domain},
          {"worst_change", std::isfinite(p.worst) ? nlohmann::json(p.worst) : nlohmann::json(nullptr)},
          {"tol", p.tol}, {"pass", p.pass}};
}

inline nlohmann::json to_json(const ClusterReport& c) {
  return {{"cells", c.n_cells}, {"left", c.n_left}, {"right", c.n_right}, {"gap", c.gap},
          {"two_clusters", c.two_clusters}};
}

// solve from the interpolant of the exact map (boundary values come with it) and compare
inline std::pair<SolveResult, SolveReport> solve_and_report(const IntegrandFn& F, const Mesh& M, int m,
                                                            const std::function<VecX(const Vec3&)>& exact,
                                                            const SolveOptions& o = {}) {
  const DiscreteField I = interpolate(M, m, exact);
  SolveResult res = minimize(F, M, I, o);
  SolveReport s;
  s.h = M.h;
  s.n_nodes = M.size();
  s.n_free = M.n_free();
  s.n_tets = M.tets.size();
  s.energy = res.energy;
  s.energy_interp = res.energy0;
  s.sup_dist = sup_distance(res.u, I);
  s.origin_osc = origin_oscillation(M, res.u);
  s.iterations = res.iterations;
  s.converged = res.converged;
  s.diverged = res.diverged;
  s.grad0 = res.grad0;
  s.grad = res.grad;
  return {std::move(res), s};
}

inline void write_field_csv(std::ostream& os, const Mesh& M, const DiscreteField& u) {
  os << "x,y,z";
  for (int c = 0; c < u.components(); ++c) os << ",u" << c + 1;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < M.size(); ++i) {
    const Vec3& x = M.nodes[i];
    os << x[0] << ',' << x[1] << ',' << x[2];
    for (int c = 0; c < u.components(); ++c) os << ',' << u.U(Eigen::Index(i), c);
    os << "\n";
  }
}

}  // namespace singmin
