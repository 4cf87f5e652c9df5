#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <tuple>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "numerics.hpp"

namespace singmin {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct HypothesisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AmbiguityError : std::domain_error {
  using std::domain_error::domain_error;
};

// surface point with data: embedding X, value G, vector field v
struct ChartPoint {
  VecX X;
  double G = 0;
  VecX v;
};

// surfaces here are images of a unit sphere S^k in R^{k+1}
using Chart = std::function<ChartPoint(const VecX& omega)>;

inline MatX sphere_tangent_basis(const VecX& w) {
  const Eigen::HouseholderQR<MatX> qr{MatX(w)};
  const MatX Q = qr.householderQ() * MatX::Identity(w.size(), w.size());
  return Q.rightCols(w.size() - 1);
}

inline VecX sphere_retract(const VecX& w, const MatX& B, const VecX& xi) { return (w + B * xi).normalized(); }

// chart derivatives in the coordinates xi -> retract(w, B, xi), by central differences
struct ChartJet {
  VecX w;
  MatX B;
  ChartPoint p;
  MatX J, Jv;  // n x k
  VecX g;      // k
  bool second = false;
  MatX Gxx;                    // k x k
  std::vector<VecX> Xxx, vxx;  // entry i * k + j
};

inline ChartJet chart_jet(const Chart& C, const VecX& w, bool second, double h1 = 1e-5, double h2 = 1e-4) {
  const int k = int(w.size()) - 1;
  ChartJet J;
  J.w = w;
  J.B = sphere_tangent_basis(w);
  J.p = C(w);
  const int n = int(J.p.X.size());
  J.J.resize(n, k);
  J.Jv.resize(n, k);
  J.g.resize(k);
  auto at = [&](const VecX& xi) { return C(sphere_retract(w, J.B, xi)); };
  for (int i = 0; i < k; ++i) {
    VecX e = VecX::Zero(k);
    e[i] = h1;
    const ChartPoint a = at(e), b = at(-e);
    J.J.col(i) = (a.X - b.X) / (2 * h1);
    J.Jv.col(i) = (a.v - b.v) / (2 * h1);
    J.g[i] = (a.G - b.G) / (2 * h1);
  }
  if (!second) return J;
  J.second = true;
  J.Gxx.resize(k, k);
  J.Xxx.assign(k * k, VecX());
  J.vxx.assign(k * k, VecX());
  const double q = h2 * h2;
  for (int i = 0; i < k; ++i) {
    VecX e = VecX::Zero(k);
    e[i] = h2;
    const ChartPoint a = at(e), b = at(-e);
    J.Xxx[i * k + i] = (a.X - 2 * J.p.X + b.X) / q;
    J.vxx[i * k + i] = (a.v - 2 * J.p.v + b.v) / q;
    J.Gxx(i, i) = (a.G - 2 * J.p.G + b.G) / q;
    for (int j = i + 1; j < k; ++j) {
      VecX f = VecX::Zero(k);
      f[j] = h2;
      const ChartPoint pp = at(e + f), pm = at(e - f), mp = at(-e + f), mm = at(-e - f);
      J.Xxx[i * k + j] = J.Xxx[j * k + i] = (pp.X - pm.X - mp.X + mm.X) / (4 * q);
      J.vxx[i * k + j] = J.vxx[j * k + i] = (pp.v - pm.v - mp.v + mm.v) / (4 * q);
      J.Gxx(i, j) = J.Gxx(j, i) = (pp.G - pm.G - mp.G + mm.G) / (4 * q);
    }
  }
  return J;
}

// sampled surface data for the extension
struct SurfaceData {
  int n = 0, k = 0;
  double gamma = 0;
  Chart chart;
  std::vector<VecX> params, points, gradients;
  std::vector<double> values;
  std::vector<MatX> tangents, normals;  // orthonormal, n x k and n x (n - k)
  nlohmann::json meta;

  std::size_t size() const { return points.size(); }

  std::size_t nearest(const VecX& y, double* dist = nullptr) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = (points[i] - y).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    if (dist) *dist = std::sqrt(bd);
    return best;
  }
};

inline SurfaceData make_surface(Chart chart, std::vector<VecX> params, double gamma, nlohmann::json meta = {}) {
  if (params.empty()) throw ConfigError("surface: no samples");
  if (!(gamma > 0)) throw ConfigError("surface: gamma must be positive");
  SurfaceData S;
  S.chart = std::move(chart);
  S.k = int(params[0].size()) - 1;
  S.gamma = gamma;
  S.meta = std::move(meta);
  for (VecX& w : params) {
    w.normalize();
    const ChartJet J = chart_jet(S.chart, w, false);
    S.n = int(J.p.X.size());
    const Eigen::HouseholderQR<MatX> qr(J.J);
    const MatX Q = qr.householderQ() * MatX::Identity(S.n, S.n);
    S.params.push_back(w);
    S.points.push_back(J.p.X);
    S.values.push_back(J.p.G);
    S.gradients.push_back(J.p.v);
    S.tangents.push_back(Q.leftCols(S.k));
    S.normals.push_back(Q.rightCols(S.n - S.k));
  }
  return S;
}

// smallest S/|y - x|^2 over sample pairs
inline double measured_separation(const SurfaceData& S) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < S.size(); ++i)
    for (std::size_t j = 0; j < S.size(); ++j) {
      if (i == j) continue;
      const VecX d = S.points[j] - S.points[i];
      const double d2 = d.squaredNorm();
      if (d2 == 0) continue;
      m = std::min(m, (S.values[j] - S.values[i] - S.gradients[i].dot(d)) / d2);
    }
  return m;
}

inline void screen_hypothesis(const SurfaceData& S, double tol = 1e-10) {
  for (std::size_t i = 0; i < S.size(); ++i)
    for (std::size_t j = 0; j < S.size(); ++j) {
      if (i == j) continue;
      const VecX d = S.points[j] - S.points[i];
      const double sep = S.values[j] - S.values[i] - S.gradients[i].dot(d);
      if (sep < S.gamma * d.squaredNorm() - tol)
        throw HypothesisError("surface data: pair " + std::to_string(i) + "," + std::to_string(j) +
                              " violates the gamma-separation");
    }
}

// largest |v_T - grad of G along the surface|, relative to |v|
inline double tangential_compatibility_defect(const SurfaceData& S) {
  double m = 0;
  for (const VecX& w : S.params) {
    const ChartJet J = chart_jet(S.chart, w, false);
    const VecX c = J.g - J.J.transpose() * J.p.v;
    m = std::max(m, c.norm() / (J.J.norm() * (1 + J.p.v.norm())));
  }
  return m;
}

// reach from samples: min |z - x|^2 / (2 |normal part of z - x|)
inline double reach_estimate(const SurfaceData& S) {
  double r = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < S.size(); ++i)
    for (std::size_t j = 0; j < S.size(); ++j) {
      if (i == j) continue;
      const VecX d = S.points[j] - S.points[i];
      const double nn = (S.normals[i].transpose() * d).norm();
      if (nn > 0) r = std::min(r, d.squaredNorm() / (2 * nn));
    }
  return r;
}

// largest distance from a sample to its nearest neighbour
inline double sample_spacing(const SurfaceData& S) {
  double m = 0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < S.size(); ++j)
      if (i != j) b = std::min(b, (S.points[j] - S.points[i]).norm());
    m = std::max(m, b);
  }
  return m;
}

struct Foot {
  VecX w;
  ChartJet jet;
  VecX r;  // query minus foot
  double d = 0;
  int iters = 0;
  bool converged = false;
};

// Newton on |x - X(w)|^2 / 2 from w0 (Gauss-Newton where the curvature term makes it
// indefinite); the final jet carries second derivatives if asked
inline Foot project_from(const Chart& C, VecX w, const VecX& x, bool second, int max_iter = 60) {
  Foot f;
  for (f.iters = 0; f.iters < max_iter; ++f.iters) {
    const ChartJet J = chart_jet(C, w, true);
    const VecX r = x - J.p.X;
    const VecX JTr = J.J.transpose() * r;
    const int k = int(J.J.cols());
    MatX M = J.J.transpose() * J.J;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) M(a, b) -= J.Xxx[a * k + b].dot(r);
    const Eigen::LDLT<MatX> Mf(M);
    const bool newton = Mf.info() == Eigen::Success && Mf.isPositive() && Mf.vectorD().minCoeff() > 0;
    const VecX step = newton ? VecX(Mf.solve(JTr)) : VecX(J.J.colPivHouseholderQr().solve(r));
    // stationary up to the difference-quotient noise in J
    if (r.norm() == 0 || step.norm() <= 1e-12 || JTr.norm() <= 1e-10 * J.J.norm() * r.norm()) {
      f.converged = true;
      break;
    }
    double t = 1;
    VecX wn;
    bool moved = false;
    for (int b = 0; b < 30 && !moved; ++b, t *= 0.5) {
      wn = sphere_retract(w, J.B, t * step);
      // small steps are taken whole: the decrease is below the roundoff of |r|
      moved = step.norm() < 1e-6 || (x - C(wn).X).norm() <= r.norm();
    }
    if (!moved) {
      f.converged = JTr.norm() <= 1e-8 * J.J.norm() * r.norm();
      break;
    }
    w = wn;
  }
  f.w = w;
  f.jet = chart_jet(C, w, second);
  f.r = x - f.jet.p.X;
  f.d = f.r.norm();
  return f;
}

// nearest surface point, multi-start from the nearest samples
inline Foot closest_point(const SurfaceData& S, const VecX& y, int starts = 4, bool second = false) {
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < S.size(); ++i) dist.push_back({(S.points[i] - y).squaredNorm(), i});
  const std::size_t m = std::min<std::size_t>(starts, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + m, dist.end());
  std::vector<Foot> cand;
  for (std::size_t c = 0; c < m; ++c) cand.push_back(project_from(S.chart, S.params[dist[c].second], y, second));
  std::size_t best = 0;
  for (std::size_t c = 1; c < m; ++c)
    if (cand[c].d < cand[best].d) best = c;
  const Foot& fb = cand[best];
  if (!fb.converged) throw AmbiguityError("closest_point: projection did not settle");
  for (const Foot& f : cand)
    if (f.converged && std::abs(f.d - fb.d) <= 1e-9 * (1 + fb.d) && (f.jet.p.X - fb.jet.p.X).norm() > 1e-6)
      throw AmbiguityError("closest_point: two nearest surface points");
  return fb;
}

struct LocalEval {
  double value = 0;
  VecX grad, w, r;
  MatX hess, Py;  // Py: derivative of the foot point, with the Hessian
  double d = 0;
};

// Step-1 lift F(x) = G(y) + v(y).(x - y) + (A/2) d^2 on the tube d < sigma
class LocalExtension {
 public:
  LocalExtension() = default;
  LocalExtension(const SurfaceData* S, double A, double sigma) : S_(S), A_(A), sigma_(sigma) {
    if (!(A > 0)) throw ConfigError("local extension: A must be positive");
  }
  double A() const { return A_; }
  double sigma() const { return sigma_; }

  // from a given foot, no tube check
  LocalEval at_foot(const Foot& f, bool want_hess) const {
    const ChartJet& J = f.jet;
    const VecX& r = f.r;
    const int n = int(r.size()), k = int(J.J.cols());
    LocalEval e;
    e.w = f.w;
    e.d = f.d;
    e.r = r;
    e.value = J.p.G + J.p.v.dot(r) + 0.5 * A_ * r.squaredNorm();
    MatX M = J.J.transpose() * J.J;
    if (J.second)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) M(i, j) -= J.Xxx[i * k + j].dot(r);
    const VecX b = J.Jv.transpose() * r;  // tangential compatibility makes the G-term vanish
    const Eigen::LDLT<MatX> Mf(M);
    const VecX beta = Mf.solve(b);
    e.grad = J.p.v + A_ * r + J.J * beta;
    if (!want_hess) return e;
    if (!J.second) throw ConfigError("local extension: Hessian needs second chart derivatives");
    const MatX D = Mf.solve(J.J.transpose());  // d xi / dx, k x n
    e.Py = J.J * D;
    MatX H = J.Jv * D + A_ * (MatX::Identity(n, n) - e.Py);
    MatX T = MatX::Zero(k, n), Db = MatX::Zero(k, n);
    for (int i = 0; i < k; ++i) {
      Db.row(i) = J.Jv.col(i).transpose();
      for (int j = 0; j < k; ++j) {
        H += beta[i] * J.Xxx[i * k + j] * D.row(j);
        Db.row(i) += (J.vxx[i * k + j].dot(r) - J.Jv.col(i).dot(J.J.col(j))) * D.row(j);
        for (int l = 0; l < k; ++l) {
          const double c = J.Xxx[i * k + j].dot(J.J.col(l)) + J.J.col(i).dot(J.Xxx[l * k + j]) +
                           J.Xxx[i * k + l].dot(J.J.col(j));
          T.row(i) += beta[l] * c * D.row(j);
        }
        T.row(i) -= beta[j] * J.Xxx[i * k + j].transpose();
      }
    }
    H += J.J * Mf.solve(Db - T);
    e.hess = 0.5 * (H + H.transpose());
    return e;
  }

  LocalEval eval(const VecX& x, bool want_hess = false, const VecX* warm = nullptr) const {
    const VecX w0 = warm ? *warm : S_->params[S_->nearest(x)];
    const Foot f = project_from(S_->chart, w0, x, want_hess);
    if (!f.converged) throw AmbiguityError("local extension: projection did not settle");
    if (f.d >= sigma_) throw DomainError("local extension: query outside the tube");
    return at_foot(f, want_hess);
  }

  // Hessian by central differences of the gradient
  MatX fd_hessian(const VecX& x, double h = 1e-5) const {
    const int n = int(x.size());
    MatX H(n, n);
    for (int j = 0; j < n; ++j) {
      VecX e = VecX::Zero(n);
      e[j] = h;
      H.col(j) = (eval(x + e).grad - eval(x - e).grad) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
  }

  // Hessian at the i-th sample (foot is the sample itself)
  MatX sample_hessian(std::size_t i) const {
    Foot f;
    f.w = S_->params[i];
    f.jet = chart_jet(S_->chart, f.w, true);
    f.r = VecX::Zero(S_->n);
    f.converged = true;
    return at_foot(f, true).hess;
  }

 private:
  const SurfaceData* S_ = nullptr;
  double A_ = 1, sigma_ = 0;
};

inline double min_eigenvalue(const MatX& H) { return Eigen::SelfAdjointEigenSolver<MatX>(H).eigenvalues()[0]; }

// evenly spread sample indices, at most m
inline std::vector<std::size_t> spread_indices(std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx;
  const std::size_t c = std::min(n, m);
  for (std::size_t i = 0; i < c; ++i) idx.push_back(i * n / c);
  return idx;
}

struct ChooseAReport {
  double A = 0, min_eig = 0;
  int doublings = 0;
};

// doubling from 4 gamma until the Hessian floor on the surface exceeds (3/2) gamma
inline ChooseAReport choose_A(const SurfaceData& S, std::size_t n_check = 64) {
  ChooseAReport R;
  const auto idx = spread_indices(S.size(), n_check);
  // H - A P_N does not depend on A at surface points
  std::vector<MatX> base;
  for (std::size_t i : idx) {
    const LocalExtension L(&S, 1.0, 1.0);
    base.push_back(L.sample_hessian(i) - S.normals[i] * S.normals[i].transpose());
  }
  for (double A = 4 * S.gamma; A <= std::ldexp(S.gamma, 30); A *= 2, ++R.doublings) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < idx.size(); ++c)
      m = std::min(m, min_eigenvalue(base[c] + A * S.normals[idx[c]] * S.normals[idx[c]].transpose()));
    if (m > 1.5 * S.gamma) {
      R.A = A;
      R.min_eig = m;
      return R;
    }
  }
  throw AuditFailure("choose_A: no A up to 2^30 gamma gives the Hessian floor");
}

// 2 max |P_T D^2F P_N| at surface samples (the tangential-normal coupling)
inline double cross_term_constant(const SurfaceData& S, double A, std::size_t n_check = 64) {
  const LocalExtension L(&S, A, 1.0);
  double C = 0;
  for (std::size_t i : spread_indices(S.size(), n_check)) {
    const MatX H = L.sample_hessian(i);
    const MatX X = S.tangents[i].transpose() * H * S.normals[i];
    C = std::max(C, 2 * X.jacobiSvd().singularValues()[0]);
  }
  return C;
}


// ---- global extension ----

// y -> value + slope.(y - center) + c |y - center|^2, stored as c |y|^2 + a.y + b
class ParaboloidFamily {
 public:
  ParaboloidFamily() = default;
  ParaboloidFamily(double c, std::vector<VecX> centers, std::vector<double> values, std::vector<VecX> slopes)
      : c_(c), centers_(std::move(centers)), values_(std::move(values)), slopes_(std::move(slopes)) {
    if (centers_.empty() || centers_.size() != values_.size() || centers_.size() != slopes_.size())
      throw ConfigError("paraboloid family: inconsistent members");
    const int n = int(centers_[0].size());
    a_.resize(Eigen::Index(centers_.size()), n);
    b_.resize(Eigen::Index(centers_.size()));
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      const VecX& x = centers_[i];
      a_.row(Eigen::Index(i)) = (slopes_[i] - 2 * c_ * x).transpose();
      b_[Eigen::Index(i)] = values_[i] - slopes_[i].dot(x) + c_ * x.squaredNorm();
    }
    an_ = a_.rowwise().norm();
  }
  double coefficient() const { return c_; }
  std::size_t size() const { return centers_.size(); }
  int dim() const { return int(a_.cols()); }
  const std::vector<VecX>& centers() const { return centers_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<VecX>& slopes() const { return slopes_; }
  const MatX& a() const { return a_; }
  const VecX& b() const { return b_; }
  const VecX& a_norms() const { return an_; }

  // members i with L_top - L_i <= eps |a_i - a_top| (those that can win within an eps-ball)
  std::vector<Eigen::Index> candidates(const VecX& L, Eigen::Index top, double eps) const {
    std::vector<Eigen::Index> out;
    const double Lt = L[top];
    for (Eigen::Index i = 0; i < L.size(); ++i) {
      const double gap = Lt - L[i];
      if (gap > eps * (an_[i] + an_[top]) * (1 + 1e-12) + 1e-15) continue;
      if (i == top || gap <= eps * (a_.row(i) - a_.row(top)).norm() * (1 + 1e-12) + 1e-15) out.push_back(i);
    }
    return out;
  }

  VecX linear(const VecX& y) const { return a_ * y + b_; }
  double value(const VecX& y, Eigen::Index* arg = nullptr) const {
    Eigen::Index i;
    const double m = linear(y).maxCoeff(&i);
    if (arg) *arg = i;
    return c_ * y.squaredNorm() + m;
  }
  VecX grad(const VecX& y) const {
    Eigen::Index i;
    value(y, &i);
    return 2 * c_ * y + a_.row(i).transpose();
  }

 private:
  double c_ = 0;
  std::vector<VecX> centers_;
  std::vector<double> values_;
  std::vector<VecX> slopes_;
  MatX a_;
  VecX b_, an_;
};

// unit-ball samples from the radial bump exp(-1/(1-|z|^2)), in antithetic pairs
inline MatX mollifier_samples(int n, int M, std::uint64_t seed) {
  if (n < 1 || M < 2) throw ConfigError("mollifier: need n >= 1 and at least two samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U01;
  MatX Z(n, M);
  for (int j = 0; j + 1 < M; j += 2) {
    VecX z(n);
    for (;;) {
      for (int i = 0; i < n; ++i) z[i] = N01(rng);
      z *= std::pow(U01(rng), 1.0 / n) / z.norm();
      const double r2 = z.squaredNorm();
      if (r2 < 1 && U01(rng) < std::exp(1 - 1 / (1 - r2))) break;
    }
    Z.col(j) = z;
    Z.col(j + 1) = -z;
  }
  if (M % 2) Z.col(M - 1).setZero();
  return Z;
}

struct ExtensionParams {
  double sigma_factor = 0.1;  // sigma = factor * reach estimate
  double rho_factor = 5;
  double delta_factor = 0.45;  // delta_glue = factor * sigma; the exact zone is d <= sigma - 2 delta
  double eps_factor = 0.25;    // initial eps_m = factor * delta_glue
  std::vector<double> levels{0.25, 0.5, 0.75, 0.999};  // tube offsets, fractions of sigma
  int n_mollifier = 10000;
  std::uint64_t seed = 20240611;
  int max_retries = 5;
  int n_glue_check = 64;
  double tau_factor = 0.05;  // smooth-max half width, fraction of the lift/far gap
};

struct GlobalEval {
  double value = 0;
  VecX grad;
  MatX hess;
  int zone = 0;  // 0 exact, 1 glue, 2 far
  double d = std::numeric_limits<double>::infinity(), eta = 0;
};

// C^3 smooth max: b + m(a - b) with m(t) = max(t, 0) for |t| >= tau, m' = eta in [0, 1], m'' >= 0
struct SmoothMax {
  double tau = 1;
  Jet2 m(double t) const {
    if (t <= -tau) return {0, 0, 0};
    if (t >= tau) return {t, 1, 0};
    const double u = (t + tau) / (2 * tau);
    const double u2 = u * u, u3 = u2 * u;
    return {2 * tau * u2 * u2 * (u2 - 3 * u + 2.5), u3 * (6 * u2 - 15 * u + 10), 30 * u2 * (u - 1) * (u - 1) / (2 * tau)};
  }
};

struct GlueConstants {
  double tau = 0;    // smooth-max half width
  double kappa = 0;  // downward shift of H_eps
  double K = 0;      // scale of the drop of the lift past the exact zone
  bool lift = true;  // false: the lift is never used and H = H_eps - kappa
};

// smooth max of the lift (dropped past the exact zone) and the shifted mollified paraboloid sup
class GlobalConvexFn {
 public:
  GlobalConvexFn() = default;
  GlobalConvexFn(std::shared_ptr<const SurfaceData> S, double A, double sigma, double rho, double delta_glue,
                 double eps_m, ParaboloidFamily fam, MatX Z, GlueConstants g = {})
      : S_(std::move(S)), local_(S_.get(), A, sigma), A_(A), sigma_(sigma), rho_(rho), delta_(delta_glue),
        eps_(eps_m), g_(g), fam_(std::move(fam)), Z_(std::move(Z)) {
    if (!(delta_glue > 0 && 2 * delta_glue < sigma)) throw ConfigError("glue: need 0 < 2 delta < sigma");
    if (!(eps_m > 0)) throw ConfigError("glue: eps_m must be positive");
    if (!(g.tau >= 0 && g.kappa >= 0 && g.K >= 0)) throw ConfigError("glue: negative constants");
    if (fam_.dim() != S_->n || Z_.rows() != S_->n) throw ConfigError("glue: dimension mismatch");
    spacing_ = S_->size() > 1 ? sample_spacing(*S_) : 0;
    zbar2_ = Z_.colwise().squaredNorm().mean();
  }

  const SurfaceData& surface() const { return *S_; }
  std::shared_ptr<const SurfaceData> surface_ptr() const { return S_; }
  const LocalExtension& local() const { return local_; }
  const ParaboloidFamily& family() const { return fam_; }
  const MatX& mollifier() const { return Z_; }
  const GlueConstants& glue() const { return g_; }
  double A() const { return A_; }
  double sigma() const { return sigma_; }
  double rho() const { return rho_; }
  double delta_glue() const { return delta_; }
  double eps_m() const { return eps_; }
  double inner() const { return sigma_ - 2 * delta_; }  // exact zone below
  int dim() const { return S_->n; }

  double H0(const VecX& y) const { return fam_.value(y); }

  // mollified family max. Members that cannot be the max anywhere in the eps-ball are dropped;
  // with one survivor the average is closed form (antithetic samples have mean zero)
  double H_eps(const VecX& y, VecX* grad = nullptr, int* n_active = nullptr) const {
    const VecX L = fam_.linear(y);
    Eigen::Index top;
    const double Lt = L.maxCoeff(&top);
    const VecX at = fam_.a().row(top).transpose();
    const std::vector<Eigen::Index> cand = fam_.candidates(L, top, eps_);
    if (n_active) *n_active = int(cand.size());
    const double c = fam_.coefficient();
    const double quad = c * (y.squaredNorm() + eps_ * eps_ * zbar2_);
    if (cand.size() == 1) {
      if (grad) *grad = 2 * c * y + at;
      return quad + Lt;
    }
    MatX Ac(Eigen::Index(cand.size()), y.size());
    VecX Lc(Eigen::Index(cand.size()));
    for (std::size_t q = 0; q < cand.size(); ++q) {
      Ac.row(Eigen::Index(q)) = fam_.a().row(cand[q]);
      Lc[Eigen::Index(q)] = L[cand[q]];
    }
    const MatX shifted = (-eps_ * (Ac * Z_)).colwise() + Lc;
    const int M = int(Z_.cols());
    double sum = 0;
    VecX g = VecX::Zero(y.size());
    for (int j = 0; j < M; ++j) {
      Eigen::Index q;
      sum += shifted.col(j).maxCoeff(&q);
      if (grad) g += Ac.row(q).transpose();
    }
    if (grad) *grad = 2 * c * y + g / M;
    return quad + sum / M;
  }

  // cheap upper bound on H_eps(y)
  double H_eps_upper(const VecX& y) const {
    const VecX L = fam_.linear(y);
    Eigen::Index top;
    const double Lt = L.maxCoeff(&top);
    double u = Lt;
    for (Eigen::Index i : fam_.candidates(L, top, eps_))
      u = std::max(u, L[i] + eps_ * (fam_.a().row(i) - fam_.a().row(top)).norm());
    return fam_.coefficient() * (y.squaredNorm() + eps_ * eps_ * zbar2_) + u;
  }

  MatX H_eps_hessian(const VecX& y) const {
    const int n = int(y.size());
    int act = 0;
    VecX g;
    H_eps(y, &g, &act);
    if (act == 1) return 2 * fam_.coefficient() * MatX::Identity(n, n);
    const double h = eps_ / 4;
    MatX H(n, n);
    for (int j = 0; j < n; ++j) {
      VecX e = VecX::Zero(n), gp, gm;
      e[j] = h;
      H_eps(y + e, &gp);
      H_eps(y - e, &gm);
      H.col(j) = (gp - gm) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
  }

  // foot point when the query may lie in the tube; nullopt when it surely does not
  std::optional<Foot> foot(const VecX& y, bool second, const VecX* warm = nullptr) const {
    double ds;
    const std::size_t i = S_->nearest(y, &ds);
    if (ds - spacing_ >= sigma_) return std::nullopt;
    const Foot f = project_from(S_->chart, warm ? *warm : S_->params[i], y, second);
    if (!f.converged) throw AmbiguityError("global extension: projection did not settle");
    return f;
  }

  // drop profile past the exact zone: psi'' ramps linearly to 1 over l, then stays 1 (C^2)
  static Jet2 drop_profile(double t, double l) {
    if (t <= 0) return {0, 0, 0};
    if (t <= l) return {t * t * t / (6 * l), t * t / (2 * l), t / l};
    return {t * t / 2 - l * t / 2 + l * l / 6, t - l / 2, 1};
  }
  double drop_length() const { return sigma_ - inner(); }
  double drop_ramp() const { return drop_length() / 4; }

  // the lift minus K psi(d - inner); value, gradient and (if asked) Hessian
  LocalEval dropped_lift(const Foot& f, bool want_hess) const {
    LocalEval e = local_.at_foot(f, want_hess);
    const double t = f.d - inner();
    if (t <= 0 || g_.K == 0) return e;
    const Jet2 p = drop_profile(t, drop_ramp());
    const VecX nd = f.r / f.d;
    e.value -= g_.K * p.v;
    e.grad -= g_.K * p.d1 * nd;
    if (want_hess) {
      const int n = int(nd.size());
      const MatX D2d = (MatX::Identity(n, n) - e.Py - nd * nd.transpose()) / f.d;
      e.hess -= g_.K * (p.d2 * nd * nd.transpose() + p.d1 * D2d);
    }
    return e;
  }

  GlobalEval eval(const VecX& y, bool want_hess = false, const VecX* warm = nullptr) const {
    const int n = int(y.size());
    if (n != S_->n) throw ConfigError("global extension: dimension mismatch");
    GlobalEval r;
    if (!g_.lift) {
      r.zone = 2;
      r.value = H_eps(y, &r.grad) - g_.kappa;
      if (want_hess) r.hess = H_eps_hessian(y);
      return r;
    }
    const auto f = foot(y, want_hess, warm);
    if (f) r.d = f->d;
    if (!f || r.d >= sigma_) {
      r.zone = 2;
      r.value = H_eps(y, &r.grad) - g_.kappa;
      if (want_hess) r.hess = H_eps_hessian(y);
      return r;
    }
    const LocalEval a = dropped_lift(*f, want_hess);
    const SmoothMax sm{g_.tau};
    if (a.value - (H_eps_upper(y) - g_.kappa) >= g_.tau) {
      r.zone = r.d <= inner() ? 0 : 1;
      r.eta = 1;
      r.value = a.value;
      r.grad = a.grad;
      if (want_hess) r.hess = a.hess;
      return r;
    }
    VecX gb;
    const double b = H_eps(y, &gb) - g_.kappa;
    const Jet2 m = sm.m(a.value - b);
    r.zone = m.d1 == 1 && r.d <= inner() ? 0 : m.d1 == 0 ? 2 : 1;
    r.eta = m.d1;
    r.value = b + m.v;
    const VecX gd = a.grad - gb;
    r.grad = gb + m.d1 * gd;
    if (want_hess) {
      const MatX Hb = m.d1 == 1 ? MatX::Zero(n, n) : H_eps_hessian(y);
      r.hess = m.d1 * a.hess + (1 - m.d1) * Hb + m.d2 * gd * gd.transpose();
      r.hess = 0.5 * (r.hess + r.hess.transpose());
    }
    return r;
  }

  double value(const VecX& y) const { return eval(y).value; }
  VecX grad(const VecX& y) const { return eval(y).grad; }

  MatX fd_hessian(const VecX& y, double h = 1e-5) const {
    const int n = int(y.size());
    MatX H(n, n);
    for (int j = 0; j < n; ++j) {
      VecX e = VecX::Zero(n);
      e[j] = h;
      H.col(j) = (grad(y + e) - grad(y - e)) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
  }

 private:
  std::shared_ptr<const SurfaceData> S_;
  LocalExtension local_;
  double A_ = 0, sigma_ = 0, rho_ = 0, delta_ = 0, eps_ = 0, spacing_ = 0, zbar2_ = 0;
  GlueConstants g_;
  ParaboloidFamily fam_;
  MatX Z_;
};

// tube samples: every surface sample plus offsets along its normal basis
struct TubeSamples {
  std::vector<VecX> points, grads, params;
  std::vector<double> values;
};

inline TubeSamples tube_samples(const SurfaceData& S, const LocalExtension& L, const std::vector<double>& levels) {
  TubeSamples T;
  auto push = [&](const VecX& x, double v, const VecX& g, const VecX& w) {
    T.points.push_back(x);
    T.values.push_back(v);
    T.grads.push_back(g);
    T.params.push_back(w);
  };
  for (std::size_t i = 0; i < S.size(); ++i) {
    push(S.points[i], S.values[i], S.gradients[i], S.params[i]);
    for (Eigen::Index j = 0; j < S.normals[i].cols(); ++j)
      for (double l : levels)
        for (double sg : {-1.0, 1.0}) {
          const VecX x = S.points[i] + sg * l * L.sigma() * S.normals[i].col(j);
          const LocalEval e = L.eval(x, false, &S.params[i]);
          push(x, e.value, e.grad, e.w);
        }
  }
  return T;
}

// sup of the tangent paraboloids with coefficient 3 gamma / 4 over the tube samples
inline ParaboloidFamily sup_paraboloids(const SurfaceData& S, const TubeSamples& T) {
  return ParaboloidFamily(0.75 * S.gamma, T.points, T.values, T.grads);
}

// largest amount by which a member's paraboloid exceeds another tube sample's value; <= 0 means
// every tube sample is attained by its own paraboloid
inline double tube_separation_excess(const ParaboloidFamily& fam, double rho = 0) {
  double worst = -std::numeric_limits<double>::infinity();
  const auto& X = fam.centers();
  for (std::size_t z = 0; z < X.size(); ++z) {
    const VecX L = fam.linear(X[z]);
    const double q = fam.coefficient() * X[z].squaredNorm();
    for (std::size_t x = 0; x < X.size(); ++x) {
      if (x == z || (X[x] - X[z]).norm() < rho) continue;
      worst = std::max(worst, q + L[Eigen::Index(x)] - fam.values()[z]);
    }
  }
  return worst;
}

// random surface points (uniform parameters) pushed off along a random unit normal by [lo, hi)
inline std::vector<VecX> shell_points(const SurfaceData& S, double lo, double hi, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U(lo, hi);
  std::vector<VecX> out;
  const int np = S.k + 1;
  for (std::size_t c = 0; c < m; ++c) {
    VecX w(np);
    for (int i = 0; i < np; ++i) w[i] = N01(rng);
    w.normalize();
    const ChartJet J = chart_jet(S.chart, w, false);
    const Eigen::HouseholderQR<MatX> qr(J.J);
    const MatX Q = qr.householderQ() * MatX::Identity(S.n, S.n);
    VecX dir(S.n - S.k);
    for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = N01(rng);
    out.push_back(J.p.X + U(rng) * Q.rightCols(S.n - S.k) * dir.normalized());
  }
  return out;
}

struct GlueReport {
  int retries = 0;
  double eps_m = 0;
  GlueConstants constants;
  double gap = 0;     // max (F - H0) sampled on the tube
  double excess = 0;  // max (H_eps - F) sampled on the tube
  double below = 0;   // max (H0 - F) on the tube; positive means a member pokes above the lift
  double min_eig_glue = 0, min_eig_shell = 0;
  double C_value = 0, C_grad = 0;  // max |H_eps - F| / eps_m and |grad H_eps - grad F| / eps_m, sampled
  bool pass = false;
};

// picks the glue constants from sampled gap/excess, then checks the Hessian floor on the
// transition shell; eps_m is halved on failure
inline GlobalConvexFn mollify_and_glue(std::shared_ptr<const SurfaceData> S, double A, double sigma, double rho,
                                       double delta_glue, double eps_m, const ParaboloidFamily& fam,
                                       const ExtensionParams& P, GlueReport* rep = nullptr) {
  const MatX Z = mollifier_samples(S->n, P.n_mollifier, P.seed);
  GlueReport R;
  GlobalConvexFn H;
  const double inner = sigma - 2 * delta_glue;
  auto probe = shell_points(*S, 0, sigma, std::size_t(4 * P.n_glue_check), P.seed + 1);
  // mollification lifts H_eps above the data right on the surface; random shell points miss that
  probe.insert(probe.end(), S->points.begin(), S->points.end());
  for (R.retries = 0;; ++R.retries) {
    const GlobalConvexFn raw(S, A, sigma, rho, delta_glue, eps_m, fam, Z);
    R.eps_m = eps_m;
    R.gap = R.excess = 0;
    R.below = -std::numeric_limits<double>::infinity();
    R.C_value = R.C_grad = 0;
    for (const VecX& y : probe) {
      const LocalEval le = raw.local().eval(y);
      VecX ge;
      const double he = raw.H_eps(y, &ge);
      const double h0 = raw.H0(y);
      R.gap = std::max(R.gap, le.value - h0);
      R.below = std::max(R.below, h0 - le.value);
      R.excess = std::max(R.excess, he - le.value);
      R.C_value = std::max(R.C_value, std::abs(he - le.value) / eps_m);
      R.C_grad = std::max(R.C_grad, (ge - le.grad).norm() / eps_m);
    }
    GlueConstants g;
    g.tau = std::max({2 * R.excess, P.tau_factor * R.gap, 1e-9});
    g.kappa = g.tau + 2 * R.excess;
    // the lift must sit a margin below H_eps - kappa by d = sigma
    const double L = 2 * delta_glue;
    g.K = 1.5 * (R.gap + g.kappa + g.tau) / GlobalConvexFn::drop_profile(L, L / 4).v;
    H = GlobalConvexFn(S, A, sigma, rho, delta_glue, eps_m, fam, Z, g);
    R.constants = g;
    R.min_eig_glue = R.min_eig_shell = std::numeric_limits<double>::infinity();
    for (const VecX& y : shell_points(*S, inner, sigma, std::size_t(P.n_glue_check), P.seed + 2))
      R.min_eig_glue = std::min(R.min_eig_glue, min_eigenvalue(H.eval(y, true).hess));
    for (const VecX& y : shell_points(*S, sigma, sigma + 2 * eps_m, std::size_t(P.n_glue_check), P.seed + 3))
      R.min_eig_shell = std::min(R.min_eig_shell, min_eigenvalue(H.eval(y, true).hess));
    R.pass = R.min_eig_glue >= S->gamma && R.min_eig_shell >= S->gamma;
    if (R.pass || R.retries >= P.max_retries) break;
    eps_m /= 2;
  }
  if (rep) *rep = R;
  if (!R.pass)
    throw AuditFailure("mollify_and_glue: Hessian floor " + std::to_string(std::min(R.min_eig_glue, R.min_eig_shell)) +
                       " below gamma after " + std::to_string(R.retries) + " retries");
  return H;
}

// largest eps for which a single paraboloid stays active over the eps-ball around each sample
inline double exactness_margin(const ParaboloidFamily& fam, const SurfaceData& S) {
  double m = std::numeric_limits<double>::infinity();
  for (const VecX& x : S.points) {
    const VecX L = fam.linear(x);
    Eigen::Index top;
    const double Lt = L.maxCoeff(&top);
    for (Eigen::Index j = 0; j < L.size(); ++j)
      if (j != top) m = std::min(m, (Lt - L[j]) / (fam.a().row(top) - fam.a().row(j)).norm());
  }
  return m;
}

// no lift: the mollified sup shifted by its closed-form offset. eps_m is half the exactness
// margin, so the result interpolates value and gradient at every sample
inline GlobalConvexFn unglued_extension(std::shared_ptr<const SurfaceData> S, double A, double sigma, double rho,
                                        double delta_glue, const ParaboloidFamily& fam, const ExtensionParams& P) {
  const double eps_m = 0.5 * exactness_margin(fam, *S);
  if (!(eps_m > 0)) throw AuditFailure("unglued extension: samples are not strict maximizers of the family");
  MatX Z = mollifier_samples(S->n, P.n_mollifier, P.seed);
  GlueConstants g;
  g.lift = false;
  g.kappa = fam.coefficient() * eps_m * eps_m * Z.colwise().squaredNorm().mean();
  return GlobalConvexFn(S, A, sigma, rho, delta_glue, eps_m, fam, std::move(Z), g);
}

struct ExtensionBuild {
  double reach = 0, spacing = 0, separation = 0, compat = 0, cross_C = 0;
  ChooseAReport A;
  double sigma = 0;
  int sigma_halvings = 0;
  double lift_floor = 0;       // min lift Hessian eigenvalue on tube probes at the final sigma
  double tube_excess = 0;      // tube_separation_excess at the final sigma
  GlueReport glue;
  bool glued = false;
  std::string unglued_reason;
  std::size_t n_family = 0;
};

// full construction: screen, lift, paraboloid sup, mollify, glue
inline GlobalConvexFn build_extension(std::shared_ptr<const SurfaceData> S, const ExtensionParams& P = {},
                                      ExtensionBuild* info = nullptr) {
  screen_hypothesis(*S);
  ExtensionBuild B;
  B.separation = measured_separation(*S);
  B.compat = tangential_compatibility_defect(*S);
  B.reach = reach_estimate(*S);
  B.spacing = sample_spacing(*S);
  B.A = choose_A(*S);
  B.cross_C = cross_term_constant(*S, B.A.A);
  // sigma small enough that the lift keeps D^2F > 3/2 gamma and every tube sample is
  // attained by its own paraboloid
  double sigma = P.sigma_factor * B.reach;
  ParaboloidFamily fam;
  const double tol = 1e-12 * (1 + *std::max_element(S->values.begin(), S->values.end()) -
                              *std::min_element(S->values.begin(), S->values.end()));
  for (B.sigma_halvings = 0;; ++B.sigma_halvings, sigma /= 2) {
    if (B.sigma_halvings > 60) throw AuditFailure("build_extension: no admissible tube radius");
    const LocalExtension L(S.get(), B.A.A, sigma);
    B.lift_floor = std::numeric_limits<double>::infinity();
    bool ok = true;
    try {
      for (const VecX& y : shell_points(*S, 0, sigma, std::size_t(P.n_glue_check), P.seed + 4))
        B.lift_floor = std::min(B.lift_floor, min_eigenvalue(L.eval(y, true).hess));
      ok = B.lift_floor > 1.5 * S->gamma;
      if (ok) {
        fam = sup_paraboloids(*S, tube_samples(*S, L, P.levels));
        B.tube_excess = tube_separation_excess(fam);
        ok = B.tube_excess <= tol;
      }
    } catch (const std::domain_error&) {
      ok = false;
    }
    if (ok) break;
  }
  B.sigma = sigma;
  B.n_family = fam.size();
  const double delta = P.delta_factor * sigma;
  const double eps0 = P.eps_factor * delta;
  GlueReport G;
  try {
    GlobalConvexFn H = mollify_and_glue(S, B.A.A, sigma, P.rho_factor * sigma, delta, eps0, fam, P, &G);
    B.glue = G;
    B.glued = true;
    if (info) *info = B;
    return H;
  } catch (const AuditFailure& e) {
    B.glue = G;
    B.unglued_reason = e.what();
  }
  if (info) *info = B;
  return unglued_extension(S, B.A.A, sigma, P.rho_factor * sigma, delta, fam, P);
}

// ---- verification ----

struct ExtensionReport {
  std::size_t n_exact = 0;      // samples checked for exactness
  double max_value_err = 0;     // max |H - G| over them
  double max_grad_err = 0;      // max |grad H - v|
  double floor_samples = 0;     // min Hessian eigenvalue at surface samples
  double floor_box = 0;         // at random box points
  double floor_tube = 0;        // at random tube points
  std::size_t n_box = 0, n_tube = 0;
  VecX box_lo, box_hi;
  std::vector<std::string> violations;
  bool pass = false;
};

// bounding box of the samples grown by `grow` times its extent on each side
inline std::pair<VecX, VecX> sample_box(const SurfaceData& S, double grow = 0.25) {
  VecX lo = S.points[0], hi = lo;
  for (const VecX& p : S.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const VecX ext = hi - lo;
  return {lo - grow * ext, hi + grow * ext};
}

inline ExtensionReport verify_extension(const GlobalConvexFn& H, std::size_t n_samples, std::uint64_t seed,
                                        double exact_tol = 1e-10) {
  const SurfaceData& S = H.surface();
  ExtensionReport R;
  const double scale = 1 + std::max(std::abs(*std::max_element(S.values.begin(), S.values.end())),
                                    std::abs(*std::min_element(S.values.begin(), S.values.end())));
  R.floor_samples = R.floor_box = R.floor_tube = std::numeric_limits<double>::infinity();
  auto note = [&](const std::string& what, const VecX& y, double v) {
    if (R.violations.size() < 50) {
      std::ostringstream os;
      os.precision(6);
      os << what << " " << v << " at (" << y.transpose() << ")";
      R.violations.push_back(os.str());
    }
  };
  for (std::size_t i = 0; i < S.size(); ++i) {
    const GlobalEval e = H.eval(S.points[i], true, &S.params[i]);
    const double lam = min_eigenvalue(e.hess);
    R.floor_samples = std::min(R.floor_samples, lam);
    if (lam < S.gamma) note("sample Hessian floor", S.points[i], lam);
    // exact where the lift is active, or everywhere when unglued (interpolation at the samples)
    if (H.glue().lift && e.eta < 1) continue;
    ++R.n_exact;
    const double ev = std::abs(e.value - S.values[i]), eg = (e.grad - S.gradients[i]).norm();
    R.max_value_err = std::max(R.max_value_err, ev);
    R.max_grad_err = std::max(R.max_grad_err, eg);
    if (ev > exact_tol * scale) note("value mismatch", S.points[i], ev);
    if (eg > exact_tol * scale) note("gradient mismatch", S.points[i], eg);
  }
  std::tie(R.box_lo, R.box_hi) = sample_box(S);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  for (std::size_t c = 0; c < n_samples; ++c) {
    VecX y(S.n);
    for (int j = 0; j < S.n; ++j) y[j] = R.box_lo[j] + U(rng) * (R.box_hi[j] - R.box_lo[j]);
    const double lam = min_eigenvalue(H.eval(y, true).hess);
    R.floor_box = std::min(R.floor_box, lam);
    if (lam < S.gamma) note("box Hessian floor", y, lam);
  }
  R.n_box = n_samples;
  const std::size_t nt = std::max<std::size_t>(1, n_samples / 10);
  for (const VecX& y : shell_points(S, 0, H.sigma() + 2 * H.eps_m(), nt, seed + 1)) {
    const double lam = min_eigenvalue(H.eval(y, true).hess);
    R.floor_tube = std::min(R.floor_tube, lam);
    if (lam < S.gamma) note("tube Hessian floor", y, lam);
  }
  R.n_tube = nt;
  R.pass = R.violations.empty() && R.n_exact > 0;
  return R;
}

inline nlohmann::json to_json(const ExtensionReport& r) {
  return {{"n_exact", r.n_exact},
          {"max_value_err", r.max_value_err},
          {"max_grad_err", r.max_grad_err},
          {"floor_samples", r.floor_samples},
          {"floor_box", r.floor_box},
          {"floor_tube", r.floor_tube},
          {"n_box", r.n_box},
          {"n_tube", r.n_tube},
          {"violations", r.violations},
          {"pass", r.pass}};
}

inline nlohmann::json to_json(const ExtensionBuild& b) {
  return {{"reach", b.reach},
          {"spacing", b.spacing},
          {"separation", b.separation},
          {"compatibility_defect", b.compat},
          {"cross_term_C", b.cross_C},
          {"A", b.A.A},
          {"A_min_eig", b.A.min_eig},
          {"A_doublings", b.A.doublings},
          {"sigma", b.sigma},
          {"sigma_halvings", b.sigma_halvings},
          {"lift_floor", b.lift_floor},
          {"tube_excess", b.tube_excess},
          {"n_family", b.n_family},
          {"glued", b.glued},
          {"unglued_reason", b.unglued_reason},
          {"glue",
           {{"retries", b.glue.retries},
            {"eps_m", b.glue.eps_m},
            {"gap", b.glue.gap},
            {"excess", b.glue.excess},
            {"min_eig_glue", b.glue.min_eig_glue},
            {"min_eig_shell", b.glue.min_eig_shell},
            {"C_value", b.glue.C_value},
            {"C_grad", b.glue.C_grad},
            {"pass", b.glue.pass}}}};
}

// ---- bundle: JSON header + raw little-endian doubles ----

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace bundle_detail {
inline void put(std::string& out, const double* p, std::size_t n) {
  out.append(reinterpret_cast<const char*>(p), n * sizeof(double));
}
inline void put(std::string& out, const VecX& v) { put(out, v.data(), std::size_t(v.size())); }
struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void get(double* p, std::size_t n) {
    if (pos + n * sizeof(double) > buf.size()) throw ConfigError("bundle: binary file too short");
    std::memcpy(p, buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  }
  VecX vec(int n) {
    VecX v(n);
    get(v.data(), std::size_t(n));
    return v;
  }
};
inline std::string hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}
}  // namespace bundle_detail

// writes <stem>.json and <stem>.bin; the chart is not serialized, the surface meta names it
inline nlohmann::json write_bundle(const GlobalConvexFn& H, const std::string& stem, const VecX& domain_lo,
                                   const VecX& domain_hi) {
  using namespace bundle_detail;
  const SurfaceData& S = H.surface();
  const ParaboloidFamily& fam = H.family();
  std::string bin;
  for (std::size_t i = 0; i < fam.size(); ++i) put(bin, fam.centers()[i]);
  put(bin, fam.values().data(), fam.size());
  for (std::size_t i = 0; i < fam.size(); ++i) put(bin, fam.slopes()[i]);
  put(bin, H.mollifier().data(), std::size_t(H.mollifier().size()));
  for (std::size_t i = 0; i < S.size(); ++i) put(bin, S.params[i]);
  for (std::size_t i = 0; i < S.size(); ++i) put(bin, S.points[i]);
  const std::string binname = std::filesystem::path(stem).filename().string() + ".bin";
  {
    std::ofstream f(stem + ".bin", std::ios::binary);
    if (!f) throw ConfigError("bundle: cannot write " + stem + ".bin");
    f.write(bin.data(), std::streamsize(bin.size()));
  }
  nlohmann::json j = {{"format", "singmin-global-convex-fn"},
                      {"version", 1},
                      {"n", S.n},
                      {"k", S.k},
                      {"gamma", S.gamma},
                      {"A", H.A()},
                      {"sigma", H.sigma()},
                      {"rho", H.rho()},
                      {"delta_glue", H.delta_glue()},
                      {"eps_m", H.eps_m()},
                      {"coefficient", fam.coefficient()},
                      {"glue",
                       {{"tau", H.glue().tau}, {"kappa", H.glue().kappa}, {"K", H.glue().K}, {"lift", H.glue().lift}}},
                      {"counts", {{"family", fam.size()}, {"mollifier", H.mollifier().cols()}, {"surface", S.size()}}},
                      {"surface", S.meta},
                      {"domain", {{"lo", std::vector<double>(domain_lo.data(), domain_lo.data() + domain_lo.size())},
                                  {"hi", std::vector<double>(domain_hi.data(), domain_hi.data() + domain_hi.size())}}},
                      {"binary", binname},
                      {"bytes", bin.size()},
                      {"checksum_fnv1a64", hex(fnv1a64(bin))}};
  std::ofstream f(stem + ".json");
  if (!f) throw ConfigError("bundle: cannot write " + stem + ".json");
  f << j.dump(2) << '\n';
  return j;
}

struct LoadedBundle {
  GlobalConvexFn F;
  VecX domain_lo, domain_hi;
  nlohmann::json header;
  bool in_domain(const VecX& y) const {
    return (y.array() >= domain_lo.array()).all() && (y.array() <= domain_hi.array()).all();
  }
};

// chart_for builds the chart from the stored surface meta
inline LoadedBundle load_bundle(const std::string& json_path,
                                const std::function<Chart(const nlohmann::json&)>& chart_for) {
  using namespace bundle_detail;
  std::ifstream jf(json_path);
  if (!jf) throw ConfigError("bundle: cannot read " + json_path);
  nlohmann::json j;
  try {
    jf >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bundle: bad JSON: ") + e.what());
  }
  if (j.value("format", "") != "singmin-global-convex-fn" || j.value("version", 0) != 1)
    throw ConfigError("bundle: unknown format");
  const std::string binpath = (std::filesystem::path(json_path).parent_path() / j.at("binary").get<std::string>()).string();
  std::ifstream bf(binpath, std::ios::binary);
  if (!bf) throw ConfigError("bundle: cannot read " + binpath);
  const std::string bin((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (bin.size() != j.at("bytes").get<std::size_t>() || hex(fnv1a64(bin)) != j.at("checksum_fnv1a64").get<std::string>())
    throw ConfigError("bundle: checksum mismatch");
  const int n = j.at("n"), k = j.at("k");
  const std::size_t nf = j["counts"]["family"], nm = j["counts"]["mollifier"], ns = j["counts"]["surface"];
  Reader r{bin};
  std::vector<VecX> centers, slopes, params, points;
  std::vector<double> values(nf);
  for (std::size_t i = 0; i < nf; ++i) centers.push_back(r.vec(n));
  r.get(values.data(), nf);
  for (std::size_t i = 0; i < nf; ++i) slopes.push_back(r.vec(n));
  MatX Z(n, Eigen::Index(nm));
  r.get(Z.data(), std::size_t(Z.size()));
  for (std::size_t i = 0; i < ns; ++i) params.push_back(r.vec(k + 1));
  for (std::size_t i = 0; i < ns; ++i) points.push_back(r.vec(n));
  if (r.pos != bin.size()) throw ConfigError("bundle: trailing bytes");
  auto S = std::make_shared<SurfaceData>(make_surface(chart_for(j["surface"]), params, j.at("gamma"), j["surface"]));
  for (std::size_t i = 0; i < ns; ++i)
    if ((S->points[i] - points[i]).norm() > 1e-12 * (1 + points[i].norm()))
      throw ConfigError("bundle: chart does not reproduce the stored surface");
  GlueConstants g;
  g.tau = j["glue"]["tau"];
  g.kappa = j["glue"]["kappa"];
  g.K = j["glue"]["K"];
  g.lift = j["glue"]["lift"];
  LoadedBundle L;
  L.F = GlobalConvexFn(S, j.at("A"), j.at("sigma"), j.at("rho"), j.at("delta_glue"), j.at("eps_m"),
                       ParaboloidFamily(j.at("coefficient"), centers, values, slopes), std::move(Z), g);
  const std::vector<double> lo = j["domain"]["lo"], hi = j["domain"]["hi"];
  L.domain_lo = Eigen::Map<const VecX>(lo.data(), Eigen::Index(lo.size()));
  L.domain_hi = Eigen::Map<const VecX>(hi.data(), Eigen::Index(hi.size()));
  L.header = j;
  return L;
}

}  // namespace singmin
