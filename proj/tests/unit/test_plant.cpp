#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <memory>
#include <random>

#include "config.hpp"
#include "errors.hpp"
#include "plant.hpp"

using namespace retinest;

namespace {

Config coarse_config() {
  Config c = default_config();
  c.grid.radial_cells = 10;
  c.grid.axial_cells = 20;
  return c;
}

const FullOrderModel& coarse_full() {
  static const FullOrderModel m = build_full_model(coarse_config());
  return m;
}

std::shared_ptr<const ReducedModel> coarse_rom(int p) {
  static std::shared_ptr<const ReducedModel> roms[3];
  if (!roms[p]) {
    const Config c = coarse_config();
    roms[p] = std::make_shared<const ReducedModel>(
        build_reduced_model(coarse_full(), p, c.domain(p), c.alpha_ch_fixed, c.rom));
  }
  return roms[p];
}

/// One-state model x' = a x + b(alpha) u with b the absorbed RPE fraction.
std::shared_ptr<const ReducedModel> scalar_rom(double a) {
  auto rom = std::make_shared<ReducedModel>();
  rom->A = Eigen::MatrixXd::Constant(1, 1, a);
  rom->input_basis = Eigen::MatrixXd::Ones(1, 1);
  rom->output_basis = Eigen::MatrixXd::Ones(1, 1);
  rom->peak_row = Eigen::VectorXd::Ones(1);
  rom->V = Eigen::MatrixXd::Ones(1, 1);
  rom->profile = AbsorptionProfile({0.0, 1e-5, 1e5}, {2e-5, 3e-5, 1e4});
  rom->input_entries = {SampledEntry{1.0, 0.0, 1e-5}};
  rom->output_entries = {SampledEntry{1.0, 0.0, 3e-5}};
  rom->input_indices = {0};
  rom->output_indices = {0};
  rom->domain = ParameterDomain::defaults(1);
  return rom;
}

double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("scalar discretization: zero dynamics and a closed-form pole") {
  const Alpha a(0.76, 0.0986);
  SUBCASE("A = 0") {
    auto rom = scalar_rom(0.0);
    DiscreteModel d(rom, 1e-3);
    CHECK(d.Ad()(0, 0) == 1.0);
    CHECK(d.input_map(a)[0] == doctest::Approx(1e-3 * rom->input_map(a)[0]).epsilon(1e-14));
  }
  SUBCASE("A = -100") {
    DiscreteModel d(scalar_rom(-100.0), 1e-3);
    CHECK(d.Ad()(0, 0) == doctest::Approx(1.0 / 1.1).epsilon(1e-14));
    CHECK(d.spectral_radius() < 1.0);
  }
}

TEST_CASE("Hurwitz ROM discretizes to a contraction") {
  DiscreteModel d(coarse_rom(1), 1e-3);
  CHECK(d.spectral_radius() < 1.0);
  Eigen::EigenSolver<Eigen::MatrixXd> es(d.Ad());
  CHECK(es.eigenvalues().cwiseAbs().maxCoeff() == doctest::Approx(d.spectral_radius()));
}

TEST_CASE("one step equals the implicit-Euler linear solve") {
  auto rom = coarse_rom(1);
  DiscreteModel d(rom, 1e-3);
  const Alpha a(0.9, 0.0986);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(rom->n(), 0.1, 2.0);
  const Eigen::VectorXd via_ad = d.Ad() * x + d.input_map(a) * 0.03;
  const Eigen::VectorXd via_solve = d.solve_step(x, a, 0.03);
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(rom->n(), rom->n()) - 1e-3 * rom->A;
  const Eigen::VectorXd residual = M * via_solve - (x + 1e-3 * rom->input_map(a) * 0.03);
  CHECK(max_rel_diff(via_ad, via_solve) < 1e-12);
  CHECK(residual.norm() < 1e-12 * via_solve.norm());
}

TEST_CASE("discrete and continuous steady states coincide") {
  auto rom = coarse_rom(1);
  DiscreteModel d(rom, 1e-3);
  const Alpha a(0.76, 0.0986);
  const int n = rom->n();
  const Eigen::VectorXd xd = (Eigen::MatrixXd::Identity(n, n) - d.Ad()).lu().solve(d.input_map(a) * 0.03);
  const Eigen::VectorXd xc = -rom->A.lu().solve(rom->input_map(a) * 0.03);
  CHECK(max_rel_diff(xd, xc) < 1e-9);
}

TEST_CASE("augmented model: dimensions, zero-input structure and rejected p") {
  auto d1 = std::make_shared<const DiscreteModel>(coarse_rom(1), 1e-3);
  auto d2 = std::make_shared<const DiscreteModel>(coarse_rom(2), 1e-3);
  AugmentedModel m2(d2, 2, 0.0986);
  CHECK(m2.dim() == coarse_rom(2)->n() + 2);
  CHECK(coarse_rom(2)->n() == 7);
  CHECK(m2.dim() == 9);
  CHECK_THROWS_AS(AugmentedModel(d1, 3, 0.0986), ValidationError);
  CHECK_THROWS_AS(AugmentedModel(d1, 2, 0.0986), ValidationError);

  AugmentedModel m1(d1, 1, 0.0986);
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(m1.dim());
  xbar.head(m1.state_dim()).setLinSpaced(0.5, 1.5);
  xbar[m1.state_dim()] = 0.8;
  const Eigen::MatrixXd F = m1.transition_jacobian(xbar, 0.0);
  const int n = m1.state_dim();
  CHECK(F.topRightCorner(n, 1).norm() == 0.0);
  CHECK((F.topLeftCorner(n, n) - d1->Ad()).norm() == 0.0);
  CHECK(F(n, n) == 1.0);
  Eigen::VectorXd other = xbar;
  other[n] = 1.1;
  CHECK((m1.transition(xbar, 0.0).head(n) - m1.transition(other, 0.0).head(n)).norm() == 0.0);
}

TEST_CASE("analytic Jacobians match central differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int p : {1, 2}) {
    auto d = std::make_shared<const DiscreteModel>(coarse_rom(p), 1e-3);
    AugmentedModel m(d, p, 0.0986);
    const int n = m.state_dim();
    const ParameterDomain dom = ParameterDomain::defaults(p);
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXd xbar(m.dim());
      for (int i = 0; i < n; ++i) xbar[i] = 20.0 * (unit(rng) - 0.5);
      for (int j = 0; j < p; ++j) xbar[n + j] = dom.lower[j] + (dom.upper[j] - dom.lower[j]) * unit(rng);
      const double u = 0.05 * unit(rng);
      const Eigen::MatrixXd F = m.transition_jacobian(xbar, u);
      const Eigen::RowVectorXd G = m.output_jacobian(xbar);
      Eigen::MatrixXd Ffd(m.dim(), m.dim());
      Eigen::RowVectorXd Gfd(m.dim());
      for (int c = 0; c < m.dim(); ++c) {
        const double h = 1e-6 * std::max(1.0, std::abs(xbar[c]));
        Eigen::VectorXd xp = xbar, xm = xbar;
        xp[c] += h;
        xm[c] -= h;
        Ffd.col(c) = (m.transition(xp, u) - m.transition(xm, u)) / (2.0 * h);
        Gfd[c] = (m.output(xp) - m.output(xm)) / (2.0 * h);
      }
      CHECK(max_rel_diff(F, Ffd) < 1e-6);
      CHECK(max_rel_diff(G, Gfd) < 1e-6);
    }
  }
}

TEST_CASE("noise: zero variance, sample variance and determinism") {
  auto rom = coarse_rom(1);
  const std::vector<double> u(200, 0.03);
  const Alpha a(0.76, 0.0986);
  const SimTrace clean = simulate_plant(nullptr, rom.get(), Truth::rom, a, u, 1e-3, NoiseModel{0.0}, 1);
  CHECK(clean.y_noisy == clean.y_clean);

  SimTrace big;
  big.y_clean.assign(100000, 0.0);
  add_noise(big, NoiseModel{0.288}, 42);
  double s = 0.0, s2 = 0.0;
  for (double y : big.y_noisy) {
    s += y;
    s2 += y * y;
  }
  const double mean = s / 1e5;
  const double var = s2 / 1e5 - mean * mean;
  CHECK(var == doctest::Approx(0.288).epsilon(0.03));

  const SimTrace t1 = simulate_plant(&coarse_full(), nullptr, Truth::full, a, u, 1e-3, NoiseModel{}, 9);
  const SimTrace t2 = simulate_plant(&coarse_full(), nullptr, Truth::full, a, u, 1e-3, NoiseModel{}, 9);
  CHECK(t1.y_noisy == t2.y_noisy);
  CHECK(t1.seed == 9);
  CHECK(t1.size() == u.size());
}

TEST_CASE("ROM truth equals the discrete augmented model run open loop") {
  auto rom = coarse_rom(1);
  auto d = std::make_shared<const DiscreteModel>(rom, 1e-3);
  AugmentedModel m(d, 1, 0.0986);
  const std::vector<double> u(50, 0.03);
  const SimTrace tr = simulate_truth(nullptr, rom.get(), Truth::rom, Alpha(0.6, 0.0986), u, 1e-3, false);
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(m.dim());
  xbar[m.state_dim()] = 0.6;
  for (std::size_t k = 0; k < u.size(); ++k) {
    xbar = m.transition(xbar, u[k]);
    CHECK(m.output(xbar) == doctest::Approx(tr.y_clean[k]).epsilon(1e-10));
    CHECK(m.peak(xbar) == doctest::Approx(tr.peak_clean[k]).epsilon(1e-10));
  }
}
