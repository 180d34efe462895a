#include "absorption.hpp"

#include <algorithm>
#include <cmath>

namespace retinest {

namespace {

double overlap(double z, const AbsorberSlab& slab) {
  return std::clamp(z, slab.z_start, slab.z_end) - slab.z_start;
}

bool inside(double z, const AbsorberSlab& slab) {
  return z >= slab.z_start && z <= slab.z_end;
}

}  // namespace

AbsorptionProfile::AbsorptionProfile(AbsorberSlab rpe, AbsorberSlab choroid)
    : rpe_(rpe), choroid_(choroid) {}

double AbsorptionProfile::mu(double z, const Alpha& alpha) const {
  if (inside(z, rpe_)) return alpha[0] * rpe_.mu0;
  if (inside(z, choroid_)) return alpha[1] * choroid_.mu0;
  return 0.0;
}

double AbsorptionProfile::optical_depth(double z, const Alpha& alpha) const {
  return optical_depth_gradient(z).dot(alpha);
}

Eigen::Vector2d AbsorptionProfile::optical_depth_gradient(double z) const {
  return {rpe_.mu0 * overlap(z, rpe_), choroid_.mu0 * overlap(z, choroid_)};
}

double AbsorptionProfile::absorbed_fraction(double z_lo, double z_hi,
                                            const Alpha& alpha) const {
  if (z_hi <= z_lo) return 0.0;
  const double tau_lo = optical_depth(z_lo, alpha);
  const double tau_hi = optical_depth(z_hi, alpha);
  // exp(-a) - exp(-b) = exp(-a) * (1 - exp(a - b)), kept accurate for thin cells
  return std::exp(-tau_lo) * -std::expm1(tau_lo - tau_hi);
}

Eigen::Vector2d AbsorptionProfile::absorbed_fraction_gradient(
    double z_lo, double z_hi, const Alpha& alpha) const {
  if (z_hi <= z_lo) return Eigen::Vector2d::Zero();
  const Eigen::Vector2d g_lo = optical_depth_gradient(z_lo);
  const Eigen::Vector2d g_hi = optical_depth_gradient(z_hi);
  return std::exp(-g_hi.dot(alpha)) * g_hi - std::exp(-g_lo.dot(alpha)) * g_lo;
}

}  // namespace retinest
