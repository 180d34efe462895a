#pragma once

#include <Eigen/Dense>

namespace retinest {

/// Absorption prefactors (alpha_rpe, alpha_ch). Always two components; the
/// single-parameter scenario freezes the choroid entry.
using Alpha = Eigen::Vector2d;

struct AbsorberSlab {
  double z_start = 0.0;  // m
  double z_end = 0.0;    // m
  double mu0 = 0.0;      // baseline absorption coefficient, 1/m
};

/// Piecewise-constant Lambert-Beer absorption with one RPE slab and one
/// choroid slab; mu = alpha * mu0 inside each slab, zero elsewhere.
class AbsorptionProfile {
 public:
  AbsorptionProfile() = default;
  AbsorptionProfile(AbsorberSlab rpe, AbsorberSlab choroid);

  const AbsorberSlab& rpe() const { return rpe_; }
  const AbsorberSlab& choroid() const { return choroid_; }

  double mu(double z, const Alpha& alpha) const;

  /// Optical depth int_0^z mu(zeta) dzeta.
  double optical_depth(double z, const Alpha& alpha) const;

  /// d(optical depth)/d(alpha); independent of alpha since tau is linear in it.
  Eigen::Vector2d optical_depth_gradient(double z) const;

  /// Fraction of incident power absorbed in [z_lo, z_hi]:
  /// exp(-tau(z_lo)) - exp(-tau(z_hi)) = int_{z_lo}^{z_hi} mu e^{-tau} dz.
  double absorbed_fraction(double z_lo, double z_hi, const Alpha& alpha) const;
  Eigen::Vector2d absorbed_fraction_gradient(double z_lo, double z_hi,
                                             const Alpha& alpha) const;

 private:
  AbsorberSlab rpe_;
  AbsorberSlab choroid_;
};

/// One entry of a parameter-dependent vector (b^f or c_vol^f) in closed form:
/// value(alpha) = scale * absorbed_fraction(z_lo, z_hi, alpha).
/// This is what DEIM samples online, so the reduced model carries these
/// records instead of any full-order data.
struct SampledEntry {
  double scale = 0.0;
  double z_lo = 0.0;
  double z_hi = 0.0;

  double value(const AbsorptionProfile& profile, const Alpha& alpha) const {
    return scale == 0.0 ? 0.0 : scale * profile.absorbed_fraction(z_lo, z_hi, alpha);
  }
  Eigen::Vector2d gradient(const AbsorptionProfile& profile, const Alpha& alpha) const {
    if (scale == 0.0) return Eigen::Vector2d::Zero();
    return scale * profile.absorbed_fraction_gradient(z_lo, z_hi, alpha);
  }
};

}  // namespace retinest
