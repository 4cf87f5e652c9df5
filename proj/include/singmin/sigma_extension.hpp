#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "assemble6d.hpp"
#include "extend.hpp"

namespace singmin {

// omega in S^2 -> (P(omega), F0(P), grad F0(P)); F0 = G1 + G2 evaluated once per piece
template <class Planar>
Chart sigma_chart(std::shared_ptr<const VectorIntegrand<Planar>> F) {
  return [F](const VecX& w) {
    const Vec3 x(w[0], w[1], w[2]);
    const Vec6 P = VectorMap::P(x);
    const GEval g1 = F->G1(P.head<3>()), g2 = F->G2(P.tail<3>());
    ChartPoint c;
    c.X = P;
    c.G = g1.value + g2.value;
    c.v.resize(6);
    c.v << g1.grad, g2.grad;
    return c;
  };
}

// Fibonacci points on S^2, turned off the coordinate axes
inline std::vector<VecX> sigma_params(int m) {
  if (m < 4) throw ConfigError("sigma samples: need at least 4");
  const Eigen::Matrix3d R = (Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized())).toRotationMatrix();
  const double ga = kPi * (3 - std::sqrt(5.0));
  std::vector<VecX> out;
  for (int i = 0; i < m; ++i) {
    const double z = 1 - (2 * i + 1.0) / m, r = std::sqrt(1 - z * z);
    const Vec3 p = R * Vec3(r * std::cos(ga * i), r * std::sin(ga * i), z);
    out.push_back(VecX(p));
  }
  return out;
}

// the smooth vector integrand used for Sigma; delta is the flat-zone width, eps the planar smoothing
inline std::shared_ptr<const VectorIntegrand<Integrand1D>> sigma_integrand(double delta, double eps,
                                                                           double alpha = 0.5) {
  return std::make_shared<const VectorIntegrand<Integrand1D>>(
      RevolvedIntegrand(Integrand1D(SecondDerivProfile::smooth(delta, eps, alpha))));
}

template <class Planar>
SurfaceData sigma_surface(std::shared_ptr<const VectorIntegrand<Planar>> F, int m, double gamma,
                          nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json meta = {{"kind", "sigma6"}, {"m", m}};
  meta.update(extra);
  return make_surface(sigma_chart(F), sigma_params(m), gamma, meta);
}

inline SurfaceData sigma_surface(double delta, double eps, double alpha, int m, double gamma) {
  return sigma_surface(sigma_integrand(delta, eps, alpha), m, gamma,
                       {{"delta", delta}, {"eps_smooth", eps}, {"alpha", alpha}});
}

// chart lookup for load_bundle
inline Chart sigma_chart_for(const nlohmann::json& meta) {
  if (meta.value("kind", "") != "sigma6" || !meta.contains("delta") || !meta.contains("eps_smooth"))
    throw ConfigError("bundle: surface is not a recorded sigma6 surface");
  return sigma_chart(sigma_integrand(meta.at("delta"), meta.at("eps_smooth"), meta.value("alpha", 0.5)));
}

}  // namespace singmin
