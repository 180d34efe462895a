#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "config.hpp"
#include "errors.hpp"
#include "pmor.hpp"

using namespace retinest;

namespace {

FullOrderModel coarse_model() {
  Config c = default_config();
  c.grid.radial_cells = 10;
  c.grid.axial_cells = 20;
  return build_full_model(c);
}

const FullOrderModel& default_model() {
  static const FullOrderModel m = build_full_model(default_config());
  return m;
}

const ReducedModel& default_rom_1p() {
  static const ReducedModel rom = [] {
    const Config c = default_config();
    return build_reduced_model(default_model(), 1, c.domain(1), c.alpha_ch_fixed, c.rom);
  }();
  return rom;
}

double reduced_tf(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const LtiSystem& sys,
                  double s, int out) {
  const Eigen::MatrixXd WtV = W.transpose() * V;
  const Eigen::MatrixXd Ar = WtV.lu().solve(W.transpose() * (sys.A * V));
  const Eigen::VectorXd br = WtV.lu().solve(W.transpose() * sys.b);
  const Eigen::RowVectorXd cr = sys.C.row(out) * V;
  const int r = int(Ar.rows());
  return cr.dot((s * Eigen::MatrixXd::Identity(r, r) - Ar).lu().solve(br));
}

double reduced_tf_derivative(const Eigen::MatrixXd& V, const Eigen::MatrixXd& W, const LtiSystem& sys,
                             double s, int out) {
  const Eigen::MatrixXd WtV = W.transpose() * V;
  const Eigen::MatrixXd Ar = WtV.lu().solve(W.transpose() * (sys.A * V));
  const Eigen::VectorXd br = WtV.lu().solve(W.transpose() * sys.b);
  const Eigen::RowVectorXd cr = sys.C.row(out) * V;
  const int r = int(Ar.rows());
  const Eigen::MatrixXd M = s * Eigen::MatrixXd::Identity(r, r) - Ar;
  const Eigen::VectorXd x = M.lu().solve(br);
  return -cr.dot(M.lu().solve(x));
}

/// Largest principal angle between the column spans of orthonormal A and B.
double max_principal_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A.transpose() * B);
  return std::acos(std::min(1.0, svd.singularValues().minCoeff()));
}

Eigen::MatrixXd orthonormal(const Eigen::MatrixXd& M) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  return qr.householderQ() * Eigen::MatrixXd::Identity(M.rows(), M.cols());
}

DeimFactors identity_deim(int n) {
  DeimFactors f;
  f.U = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) f.indices.push_back(i);
  f.PtU_inverse = Eigen::MatrixXd::Identity(n, n);
  f.singular_values = Eigen::VectorXd::Ones(n);
  return f;
}

Eigen::MatrixXd input_snapshots(const FullOrderModel& m, const std::vector<Alpha>& grid) {
  Eigen::MatrixXd S(m.n(), grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) S.col(i) = m.input_map(grid[i]);
  return S;
}

}  // namespace

TEST_CASE("IRKA on a 2-state toy converges to a Hermite interpolant") {
  LtiSystem sys;
  sys.A.resize(2, 2);
  sys.A.insert(0, 0) = -1.0;
  sys.A.insert(1, 1) = -10.0;
  sys.A.insert(0, 1) = 0.5;
  sys.b = Eigen::Vector2d(1.0, 2.0);
  sys.C = Eigen::RowVector2d(1.0, 0.3);
  IrkaSettings s;
  s.order = 1;
  s.tol = 1e-12;
  s.max_iter = 200;
  const LocalBasis lb = irka_local_basis(sys, s);
  REQUIRE(lb.converged);
  const double sigma = lb.shifts[0].real();
  CHECK(lb.shifts[0].imag() == 0.0);
  const double H = transfer_function(sys, sigma)[0];
  const double dH = transfer_function_derivative(sys, sigma)[0];
  CHECK(std::abs(reduced_tf(lb.V, lb.W, sys, sigma, 0) - H) <= 1e-8 * std::abs(H));
  CHECK(std::abs(reduced_tf_derivative(lb.V, lb.W, sys, sigma, 0) - dH) <= 1e-8 * std::abs(dH));
}

TEST_CASE("IRKA with order n_f reproduces the full transfer function") {
  LtiSystem sys;
  const int n = 4;
  sys.A.resize(n, n);
  for (int i = 0; i < n; ++i) {
    sys.A.insert(i, i) = -double(i + 1);
    if (i + 1 < n) sys.A.insert(i, i + 1) = 0.2;
  }
  sys.b = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0);
  sys.C = Eigen::MatrixXd::Ones(2, n);
  sys.C(1, 0) = 0.0;
  IrkaSettings s;
  s.order = n;
  const LocalBasis lb = irka_local_basis(sys, s, Eigen::Vector4d(0.5, 1.5, 3.0, 5.0));
  for (double freq : {0.1, 2.0, 17.0})
    for (int o = 0; o < 2; ++o) {
      const double H = transfer_function(sys, freq)[o];
      CHECK(std::abs(reduced_tf(lb.V, lb.W, sys, freq, o) - H) <= 1e-10 * std::abs(H));
    }
}

TEST_CASE("IRKA shifts stay real and positive for the coarse thermal model") {
  const FullOrderModel m = coarse_model();
  IrkaSettings s;
  s.order = 6;
  const LocalBasis lb = irka_local_basis(m, Alpha(0.76, 0.0986), s);
  CHECK_FALSE(lb.complex_shifts);
  CHECK(lb.shifts.imag().cwiseAbs().maxCoeff() == 0.0);
  CHECK(lb.shifts.real().minCoeff() > 0.0);
  MESSAGE("IRKA iterations: " << lb.iterations << ", converged: " << lb.converged);
}

TEST_CASE("global basis of a single local basis spans the same subspace") {
  const FullOrderModel m = coarse_model();
  IrkaSettings s;
  s.order = 4;
  const LocalBasis lb = irka_local_basis(m, Alpha(0.76, 0.0986), s);
  const GlobalBasis g = build_global_basis({lb}, 4);
  CHECK(max_principal_angle(g.V, orthonormal(lb.V)) < 1e-7);
  CHECK(max_principal_angle(g.W, orthonormal(lb.W)) < 1e-7);

  SUBCASE("duplicated basis gives the same span") {
    const GlobalBasis g2 = build_global_basis({lb, lb}, 4);
    CHECK(max_principal_angle(g2.V, g.V) < 1e-7);
    CHECK(max_principal_angle(g2.W, g.W) < 1e-7);
  }
  SUBCASE("requesting more columns than the rank fails") {
    CHECK_THROWS_AS(build_global_basis({lb, lb}, 5), SolverError);
  }
}

TEST_CASE("three parameter samples give a finite W^T V condition number") {
  const FullOrderModel m = coarse_model();
  IrkaSettings s;
  s.order = 6;
  std::vector<LocalBasis> bases;
  for (double a : {0.38, 0.76, 1.14}) bases.push_back(irka_local_basis(m, Alpha(a, 0.0986), s));
  const GlobalBasis g = build_global_basis(bases, 6);
  CHECK(std::isfinite(g.condition_WtV));
  CHECK(g.condition_WtV >= 1.0);
  MESSAGE("cond(W^T V) = " << g.condition_WtV << ", discarded V mass " << g.discarded_V);
}

TEST_CASE("DEIM of a single direction reconstructs its multiples exactly") {
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(30, -1.0, 2.0);
  Eigen::MatrixXd S(30, 3);
  S << v, v, v;
  const DeimFactors f = deim_factorize(S, 1);
  const Eigen::VectorXd w = -3.5 * v;
  CHECK((f.reconstruct(f.sample(w)) - w).norm() <= 1e-13 * w.norm());
  CHECK_THROWS_AS(deim_factorize(S, 2), SolverError);
}

TEST_CASE("DEIM rank error names the achievable order") {
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(10);
  Eigen::MatrixXd S(10, 4);
  S << v, 2 * v, 3 * v, 4 * v;
  try {
    deim_factorize(S, 3);
    FAIL("expected a rank error");
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("achievable d = 1") != std::string::npos);
  }
}

TEST_CASE("DEIM is exact on its span and obeys the error bound over D") {
  const FullOrderModel& m = default_model();
  const ParameterDomain d = ParameterDomain::defaults(1);
  const auto train = parameter_grid(d, 20, 0.0986);
  const DeimFactors f = deim_factorize(input_snapshots(m, train), 3);

  // selectors are distinct
  std::vector<int> idx = f.indices;
  std::sort(idx.begin(), idx.end());
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());

  // in-span vector
  const Eigen::VectorXd w = f.U * Eigen::Vector3d(0.3, -1.2, 2.0);
  CHECK((f.reconstruct(f.sample(w)) - w).norm() <= 1e-12 * w.norm());

  const double amplification = f.PtU_inverse.norm();
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double a = d.lower[0] + (d.upper[0] - d.lower[0]) * i / 49.0;
    const Eigen::VectorXd b = m.input_map(Alpha(a, 0.0986));
    const double err = (f.reconstruct(f.sample(b)) - b).norm();
    const double best = (b - f.U * (f.U.transpose() * b)).norm();
    CHECK(err <= amplification * best * (1.0 + 1e-8) + 1e-14 * b.norm());
    worst = std::max(worst, err / b.norm());
  }
  MESSAGE("DEIM d=3 worst relative reconstruction error " << worst << ", tail "
                                                          << f.tail(3));
  CHECK(worst <= amplification * f.tail(3) * std::sqrt(20.0));
}

TEST_CASE("identity bases with full DEIM reproduce the full model") {
  const FullOrderModel m = coarse_model();
  GlobalBasis g;
  g.V = Eigen::MatrixXd::Identity(m.n(), m.n());
  g.W = g.V;
  const DeimFactors id = identity_deim(m.n());
  const ReducedModel rom = reduce_model(m, g, id, id);
  const Alpha a(0.7, 0.11);
  const std::vector<double> u(100, 0.03);
  const FullTrace ft = simulate_full(m, a, u, 1e-3);
  const ReducedTrace rt = simulate_reduced(rom, a, u, 1e-3);
  for (std::size_t k = 0; k < u.size(); ++k) {
    CHECK(rt.T_vol[k] == doctest::Approx(ft.T_vol[k]).epsilon(1e-10));
    CHECK(rt.T_peak[k] == doctest::Approx(ft.T_peak[k]).epsilon(1e-10));
  }
}

TEST_CASE("single-sample ROM matches the full transfer function at the IRKA shifts") {
  const FullOrderModel m = coarse_model();
  const Alpha a(0.76, 0.0986);
  IrkaSettings s;
  s.order = 4;
  s.tol = 1e-8;
  s.max_iter = 200;
  const LocalBasis lb = irka_local_basis(m, a, s);
  const GlobalBasis g = build_global_basis({lb}, 4);
  // d equal to the snapshot rank makes DEIM exact at this alpha
  Eigen::MatrixXd bs(m.n(), 1), cs(m.n(), 1);
  bs.col(0) = m.input_map(a);
  cs.col(0) = m.output_map(a);
  const ReducedModel rom = reduce_model(m, g, deim_factorize(bs, 1), deim_factorize(cs, 1));
  const LtiSystem sys = lti_at(m, a);
  for (int i = 0; i < lb.shifts.size(); ++i) {
    if (lb.shifts[i].imag() != 0.0) continue;
    const double sigma = lb.shifts[i].real();
    const Eigen::VectorXd br = rom.input_map(a);
    const Eigen::RowVectorXd cr = rom.output_map(a).transpose();
    const int n = rom.n();
    const double Hr = cr.dot(Eigen::VectorXd((sigma * Eigen::MatrixXd::Identity(n, n) - rom.A).lu().solve(br)));
    const double H = transfer_function(sys, sigma)[0];
    CHECK(std::abs(Hr - H) <= 1e-6 * std::abs(H));
  }
}

TEST_CASE("default 1p ROM: Hurwitz, documented orders, online evaluation touches d entries") {
  const ReducedModel& rom = default_rom_1p();
  CHECK(rom.n() == 6);
  CHECK(rom.deim_order() == 3);
  CHECK(is_hurwitz(rom.A));
  CHECK(std::isfinite(rom.condition_WtV));
  rom.entry_evaluations().reset();
  (void)rom.input_map(Alpha(0.9, 0.0986));
  CHECK(rom.entry_evaluations().count() == 3);
  (void)rom.output_map(Alpha(0.9, 0.0986));
  CHECK(rom.entry_evaluations().count() == 6);
}

TEST_CASE("ROM archive round-trips") {
  const ReducedModel& rom = default_rom_1p();
  const std::string path = (std::filesystem::temp_directory_path() / "retinest_rom_roundtrip.json").string();
  save_reduced_model(rom, path);
  const ReducedModel back = load_reduced_model(path);
  std::filesystem::remove(path);
  CHECK((back.A - rom.A).norm() == 0.0);
  CHECK((back.V - rom.V).norm() == 0.0);
  CHECK(back.parameters == rom.parameters);
  const Alpha a(0.5, 0.0986);
  CHECK((back.input_map(a) - rom.input_map(a)).norm() == 0.0);
  CHECK((back.output_map(a) - rom.output_map(a)).norm() == 0.0);
  CHECK((back.peak_row - rom.peak_row).norm() == 0.0);
}

TEST_CASE("corrupt archive is rejected") {
  const std::string path = (std::filesystem::temp_directory_path() / "retinest_rom_bad.json").string();
  std::FILE* f = std::fopen(path.c_str(), "w");
  std::fputs("{\"format\": \"something-else\"}", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_reduced_model(path), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("error sweep: empty grid, center beats the edges, worst case on the lower edge") {
  const ReducedModel& rom = default_rom_1p();
  const std::vector<double> u(400, 0.03);
  CHECK(rom_error_sweep(default_model(), rom, {}, u, 1e-3).empty());
  const ParameterDomain d = ParameterDomain::defaults(1);
  const auto rows = rom_error_sweep(default_model(), rom,
                                    {Alpha(d.lower[0], 0.0986), Alpha(d.center()[0], 0.0986),
                                     Alpha(d.upper[0], 0.0986)},
                                    u, 1e-3);
  REQUIRE(rows.size() == 3);
  auto worst = [](const RomErrorRow& r) { return std::max(r.max_rel_error_vol, r.max_rel_error_peak); };
  CHECK(worst(rows[1]) < worst(rows[0]));
  CHECK(worst(rows[1]) < worst(rows[2]));
  CHECK(worst(rows[0]) > worst(rows[2]));
}

TEST_CASE("Hurwitz check") {
  CHECK(is_hurwitz(Eigen::Matrix2d(Eigen::Vector2d(-1.0, -2.0).asDiagonal())));
  CHECK_FALSE(is_hurwitz(Eigen::Matrix2d(Eigen::Vector2d(-1.0, 0.0).asDiagonal())));
}
