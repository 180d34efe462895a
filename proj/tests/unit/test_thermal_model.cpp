#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <utility>

#include "config.hpp"
#include "errors.hpp"
#include "thermal_model.hpp"

using namespace retinest;

namespace {

FullOrderModel default_model(GridSpec grid = {}) {
  const Config c = default_config();
  return build_full_model(c.layers, grid, c.material, c.mu0_rpe, c.mu0_ch);
}

/// Composite Gauss-Legendre (5 points) of mu exp(-tau) over each slab.
double quadrature_absorbed(const AbsorptionProfile& prof, const Alpha& a, double z_end) {
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                              0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                              0.2369268850561891, 0.2369268850561891};
  double total = 0.0;
  for (const AbsorberSlab& s : {prof.rpe(), prof.choroid()}) {
    const int pieces = 400;
    const double h = (std::min(s.z_end, z_end) - s.z_start) / pieces;
    for (int i = 0; i < pieces; ++i) {
      const double mid = s.z_start + (i + 0.5) * h;
      for (int q = 0; q < 5; ++q) {
        const double z = mid + 0.5 * h * x[q];
        total += 0.5 * h * w[q] * prof.mu(z, a) * std::exp(-prof.optical_depth(z, a));
      }
    }
  }
  return total;
}

double absorbed_power(const FullOrderModel& m, const Alpha& a, double u) {
  return m.skeleton().capacity.dot(m.input_map(a)) * u;
}

}  // namespace

TEST_CASE("default geometry has the documented size and interfaces on grid planes") {
  const Config c = default_config();
  const auto [stack, g] = build_geometry(c.layers, c.grid);
  CHECK(g.inner_radius == doctest::Approx(100e-6));
  CHECK(g.unknowns() == 30 * 59);
  for (const Layer& l : stack.layers) {
    CHECK(g.axial_node_at(l.z_start) >= 0);
    CHECK(g.axial_node_at(l.z_end) >= 0);
  }
  CHECK(g.r_nodes.front() == 0.0);
}

TEST_CASE("zero-thickness absorbing layer is rejected") {
  auto layers = default_layers();
  layers[1].z_end = layers[1].z_start;
  CHECK_THROWS_AS(build_geometry(layers, GridSpec{}), ValidationError);
}

TEST_CASE("overlapping layers are rejected") {
  auto layers = default_layers();
  layers[2].z_start -= 2e-6;
  CHECK_THROWS_AS(build_geometry(layers, GridSpec{}), ValidationError);
}

TEST_CASE("refining the grid by two quadruples the cell count") {
  GridSpec fine;
  fine.refine = 2;
  const auto [s1, g1] = build_geometry(default_layers(), GridSpec{});
  const auto [s2, g2] = build_geometry(default_layers(), fine);
  CHECK(g2.cell_count() == 4 * g1.cell_count());
  for (const Layer& l : s2.layers) CHECK(g2.axial_node_at(l.z_end) >= 0);
}

TEST_CASE("constant field: interior rows vanish and boundary rows match the hand stencil") {
  const FullOrderModel m = default_model();
  const OperatorSkeleton& sk = m.skeleton();
  const CylinderGeometry& g = sk.geometry;
  const Eigen::VectorXd r = m.A() * Eigen::VectorXd::Ones(m.n());
  const double k = sk.material.conductivity;
  const double pi = 3.14159265358979323846;

  // interior node: all neighbors unknown
  CHECK(std::abs(r[g.node(5, 20)]) < 1e-9 * std::abs(m.A().coeff(g.node(5, 20), g.node(5, 20))));
  // axis node: symmetry face carries no flux
  CHECK(std::abs(r[g.node(0, 20)]) < 1e-9 * std::abs(m.A().coeff(g.node(0, 20), g.node(0, 20))));

  // node next to r = R_O at plane j: the only surviving term is the outer face
  const int i = g.radial_cells - 1, j = 20;
  const double r_minus = 0.5 * (g.r_nodes[i - 1] + g.r_nodes[i]);
  const double r_plus = 0.5 * (g.r_nodes[i] + g.r_nodes[i + 1]);
  const double dz = 0.5 * (g.z_nodes[j + 1] - g.z_nodes[j - 1]);
  const double volume = pi * (r_plus * r_plus - r_minus * r_minus) * dz;
  const double expected =
      -k * 2.0 * pi * r_plus * dz / (g.r_nodes[i + 1] - g.r_nodes[i]) /
      (sk.material.volumetric_heat_capacity() * volume);
  CHECK(r[g.node(i, j)] == doctest::Approx(expected).epsilon(1e-12));

  // node next to z = 0 on the axis: only the top face survives
  const double rp0 = 0.5 * (g.r_nodes[0] + g.r_nodes[1]);
  const double dz1 = 0.5 * (g.z_nodes[2] - g.z_nodes[0]);
  const double expected_top = -k * pi * rp0 * rp0 / (g.z_nodes[1] - g.z_nodes[0]) /
                              (sk.material.volumetric_heat_capacity() * pi * rp0 * rp0 * dz1);
  CHECK(r[g.node(0, 1)] == doctest::Approx(expected_top).epsilon(1e-12));
}

TEST_CASE("coarse 10x10 operator has eigenvalues with negative real part") {
  GridSpec grid;
  grid.radial_cells = 10;
  grid.axial_cells = 10;
  const FullOrderModel m = default_model(grid);
  Eigen::EigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(m.A())};
  CHECK(es.eigenvalues().real().maxCoeff() < 0.0);
}

TEST_CASE("doubling the conductivity doubles the operator") {
  Config c = default_config();
  const FullOrderModel a = build_full_model(c);
  c.material.conductivity *= 2.0;
  const FullOrderModel b = build_full_model(c);
  CHECK((Eigen::MatrixXd(b.A()) - 2.0 * Eigen::MatrixXd(a.A())).cwiseAbs().maxCoeff() <=
        1e-12 * Eigen::MatrixXd(a.A()).cwiseAbs().maxCoeff());
}

TEST_CASE("source vanishes for zero power and rejects nonpositive alpha") {
  const FullOrderModel m = default_model();
  const SourceAssembly s = assemble_source(m.skeleton(), m.profile(), Alpha(0.76, 0.0986), 0.0);
  CHECK(s.heating.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(assemble_source(m.skeleton(), m.profile(), Alpha(0.0, 0.1), 0.03), ValidationError);
  CHECK_THROWS_AS(assemble_source(m.skeleton(), m.profile(), Alpha(0.76, 0.1), -1.0), ValidationError);
}

TEST_CASE("absorbed power matches the Lambert-Beer closed form and quadrature") {
  const FullOrderModel m = default_model();
  const AbsorptionProfile& prof = m.profile();
  const double u = 0.03;
  const double d_rpe = prof.rpe().z_end - prof.rpe().z_start;
  const double d_ch = prof.choroid().z_end - prof.choroid().z_start;

  SUBCASE("RPE only") {
    const Alpha a(0.76, 1e-12);
    const double closed = u * (1.0 - std::exp(-0.76 * prof.rpe().mu0 * d_rpe));
    const double quad = u * quadrature_absorbed(prof, a, 1.0);
    CHECK(absorbed_power(m, a, u) == doctest::Approx(closed).epsilon(1e-6));
    CHECK(quad == doctest::Approx(closed).epsilon(1e-6));
  }
  SUBCASE("both layers") {
    const Alpha a(0.76, 0.0986);
    const double closed =
        u * (1.0 - std::exp(-0.76 * prof.rpe().mu0 * d_rpe - 0.0986 * prof.choroid().mu0 * d_ch));
    const double quad = u * quadrature_absorbed(prof, a, 1.0);
    CHECK(absorbed_power(m, a, u) == doctest::Approx(quad).epsilon(1e-6));
    CHECK(absorbed_power(m, a, u) == doctest::Approx(closed).epsilon(1e-6));
  }
}

TEST_CASE("uniform temperature gives the closed-form volume output") {
  const FullOrderModel m = default_model();
  const Alpha a(0.76, 0.0986);
  const OutputRange& rg = m.output_range();
  const double T0 = 3.7;
  const double expected = T0 * (std::exp(-m.profile().optical_depth(rg.z_begin, a)) -
                                std::exp(-m.profile().optical_depth(rg.z_end, a)));
  CHECK(m.output_map(a).dot(Eigen::VectorXd::Constant(m.n(), T0)) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(m.output_map(a).dot(Eigen::VectorXd::Zero(m.n())) == 0.0);
  CHECK((m.output_map(a).array() >= 0.0).all());
}

TEST_CASE("peak row selects the RPE-center node on the axis") {
  const FullOrderModel m = default_model();
  Eigen::VectorXd e = Eigen::VectorXd::Zero(m.n());
  e[m.peak_node()] = 1.0;
  CHECK(m.peak_map().dot(e) == 1.0);
  const CylinderGeometry& g = m.skeleton().geometry;
  const int j = g.axial_node_at(m.skeleton().layers.rpe_center());
  CHECK(m.peak_node() == g.node(0, j));
}

TEST_CASE("zero input gives zero outputs") {
  const FullOrderModel m = default_model();
  const FullTrace tr = simulate_full(m, Alpha(0.76, 0.0986), std::vector<double>(50, 0.0), 1e-3);
  for (std::size_t k = 0; k < 50; ++k) {
    CHECK(tr.T_vol[k] == 0.0);
    CHECK(tr.T_peak[k] == 0.0);
  }
}

TEST_CASE("constant input rises monotonically to the steady-state plateau") {
  const FullOrderModel m = default_model();
  const Alpha a(0.38, 0.0986);
  const double u = 0.03;
  const FullTrace tr = simulate_full(m, a, std::vector<double>(1500, u), 0.05);
  for (std::size_t k = 1; k < tr.T_vol.size(); ++k) {
    CHECK(tr.T_vol[k] >= tr.T_vol[k - 1]);
    CHECK(tr.T_peak[k] >= tr.T_peak[k - 1]);
  }
  const Eigen::VectorXd xs = steady_state(m, a, u);
  const double vol_ss = m.output_map(a).dot(xs);
  const double peak_ss = xs[m.peak_node()];
  CHECK(tr.T_vol.back() == doctest::Approx(vol_ss).epsilon(5e-3));
  CHECK(tr.T_peak.back() == doctest::Approx(peak_ss).epsilon(5e-3));
}

TEST_CASE("state converges to the steady state after many time constants") {
  const FullOrderModel m = default_model();
  const Alpha a(0.76, 0.0986);
  SimulateOptions opt;
  opt.keep_states = true;
  // slowest mode ~ 6 s; 75 s covers more than ten time constants
  const FullTrace tr = simulate_full(m, a, std::vector<double>(1500, 0.03), 0.05, opt);
  const Eigen::VectorXd xs = steady_state(m, a, 0.03);
  CHECK((tr.states.col(tr.states.cols() - 1) - xs).norm() / xs.norm() < 1e-3);
}

TEST_CASE("implicit Euler converges at first order in dt") {
  const FullOrderModel m = default_model();
  const Alpha a(0.76, 0.0986);
  const double T = 0.1;
  auto final_vol = [&](double dt) {
    const int steps = int(std::lround(T / dt));
    return simulate_full(m, a, std::vector<double>(steps, 0.03), dt).T_vol.back();
  };
  const double y1 = final_vol(2e-3), y2 = final_vol(1e-3), y3 = final_vol(5e-4);
  const double ratio = (y1 - y2) / (y2 - y3);
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("node temperatures stay nonnegative for nonnegative input") {
  const FullOrderModel m = default_model();
  SimulateOptions opt;
  opt.keep_states = true;
  const FullTrace tr = simulate_full(m, Alpha(0.76, 0.0986), std::vector<double>(200, 0.03), 1e-3, opt);
  CHECK(tr.states.minCoeff() >= 0.0);
}

TEST_CASE("volume temperature increases with alpha_rpe over the domain") {
  const FullOrderModel m = default_model();
  const ParameterDomain d = ParameterDomain::defaults(1);
  double previous = -1.0;
  for (int i = 0; i <= 8; ++i) {
    const double ar = d.lower[0] + (d.upper[0] - d.lower[0]) * i / 8.0;
    const double y = simulate_full(m, Alpha(ar, 0.0986), std::vector<double>(100, 0.03), 1e-3).T_vol.back();
    CHECK(y > previous);
    previous = y;
  }
}

TEST_CASE("outputs scale linearly with the input") {
  const FullOrderModel m = default_model();
  const Alpha a(0.76, 0.0986);
  std::vector<double> u(100, 0.02), u3(100, 0.06);
  const FullTrace t1 = simulate_full(m, a, u, 1e-3), t3 = simulate_full(m, a, u3, 1e-3);
  for (std::size_t k = 0; k < u.size(); ++k) {
    CHECK(t3.T_vol[k] == doctest::Approx(3.0 * t1.T_vol[k]).epsilon(1e-10));
    CHECK(t3.T_peak[k] == doctest::Approx(3.0 * t1.T_peak[k]).epsilon(1e-10));
  }
}

TEST_CASE("refining the grid changes the outputs by less than 1%") {
  GridSpec fine;
  fine.refine = 2;
  const FullOrderModel m1 = default_model(), m2 = default_model(fine);
  const Alpha a(0.76, 0.0986);
  const std::vector<double> u(400, 0.03);
  const FullTrace t1 = simulate_full(m1, a, u, 1e-3), t2 = simulate_full(m2, a, u, 1e-3);
  double dv = 0.0, dp = 0.0, mv = 0.0, mp = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dv = std::max(dv, std::abs(t1.T_vol[k] - t2.T_vol[k]));
    dp = std::max(dp, std::abs(t1.T_peak[k] - t2.T_peak[k]));
    mv = std::max(mv, std::abs(t2.T_vol[k]));
    mp = std::max(mp, std::abs(t2.T_peak[k]));
  }
  MESSAGE("grid refinement change: vol " << dv / mv << ", peak " << dp / mp);
  CHECK(dv / mv < 0.01);
  CHECK(dp / mp < 0.01);
}

namespace {

/// Max relative change of T_vol and T_peak over 400 ms at 30 mW.
std::pair<double, double> output_change(const FullOrderModel& m1, const FullOrderModel& m2) {
  const Alpha a(0.76, 0.0986);
  const std::vector<double> u(400, 0.03);
  const FullTrace t1 = simulate_full(m1, a, u, 1e-3), t2 = simulate_full(m2, a, u, 1e-3);
  double dv = 0.0, dp = 0.0, mv = 0.0, mp = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dv = std::max(dv, std::abs(t1.T_vol[k] - t2.T_vol[k]));
    dp = std::max(dp, std::abs(t1.T_peak[k] - t2.T_peak[k]));
    mv = std::max(mv, std::abs(t2.T_vol[k]));
    mp = std::max(mp, std::abs(t2.T_peak[k]));
  }
  return {dv / mv, dp / mp};
}

}  // namespace

TEST_CASE("doubling the outer radius or the axial padding changes the outputs by less than 0.5%") {
  const Config c = default_config();
  const FullOrderModel base = default_model();

  GridSpec wide_r;
  wide_r.outer_radius *= 2.0;
  wide_r.radial_cells = 45;
  wide_r.inner_radial_fraction = 1.0 / 3.0;
  const auto radial = output_change(base, default_model(wide_r));

  const double pad = c.layers.front().z_end;
  std::vector<LayerSpec> deep = c.layers;
  deep.front().z_end += pad;
  deep.front().cell_weight *= 2.0;
  for (std::size_t i = 1; i < deep.size(); ++i) {
    deep[i].z_start += pad;
    deep[i].z_end += pad;
  }
  deep.back().z_end += deep.back().z_end - deep.back().z_start;
  deep.back().cell_weight *= 2.0;
  GridSpec deep_z;
  deep_z.axial_cells = 94;
  const auto axial = output_change(base, build_full_model(deep, deep_z, c.material, c.mu0_rpe, c.mu0_ch));

  MESSAGE("radius doubling: vol " << radial.first << ", peak " << radial.second);
  MESSAGE("padding doubling: vol " << axial.first << ", peak " << axial.second);
  CHECK(radial.first < 0.005);
  CHECK(radial.second < 0.005);
  CHECK(axial.first < 0.005);
  CHECK(axial.second < 0.005);
}
