#include "box_nls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"

namespace retinest {

void BlockTridiagonal::resize(int stages, int dim) {
  diag.assign(stages, Eigen::MatrixXd::Zero(dim, dim));
  upper.assign(stages > 0 ? stages - 1 : 0, Eigen::MatrixXd::Zero(dim, dim));
}

Eigen::MatrixXd BlockTridiagonal::dense() const {
  const int L = int(diag.size());
  const int m = L ? int(diag[0].rows()) : 0;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L * m, L * m);
  for (int i = 0; i < L; ++i) {
    H.block(i * m, i * m, m, m) = diag[i];
    if (i + 1 < L) {
      H.block(i * m, (i + 1) * m, m, m) = upper[i];
      H.block((i + 1) * m, i * m, m, m) = upper[i].transpose();
    }
  }
  return H;
}

Eigen::VectorXd solve_block_tridiagonal(const BlockTridiagonal& H, const Eigen::VectorXd& rhs) {
  const int L = int(H.diag.size());
  if (L == 0) return {};
  const int m = int(H.diag[0].rows());
  std::vector<Eigen::LLT<Eigen::MatrixXd>> schur(L);
  std::vector<Eigen::MatrixXd> coupling(L);  // S_i^-1 H(i, i+1)
  std::vector<Eigen::VectorXd> y(L);

  Eigen::MatrixXd S = H.diag[0];
  Eigen::VectorXd b = rhs.segment(0, m);
  for (int i = 0; i < L; ++i) {
    schur[i].compute(S);
    if (schur[i].info() != Eigen::Success) throw SolverError("normal equations are not positive definite");
    y[i] = schur[i].solve(b);
    if (i + 1 < L) {
      coupling[i] = schur[i].solve(H.upper[i]);
      S = H.diag[i + 1] - H.upper[i].transpose() * coupling[i];
      b = rhs.segment((i + 1) * m, m) - H.upper[i].transpose() * y[i];
    }
  }
  Eigen::VectorXd x(L * m);
  x.segment((L - 1) * m, m) = y[L - 1];
  for (int i = L - 2; i >= 0; --i)
    x.segment(i * m, m) = y[i] - coupling[i] * x.segment((i + 1) * m, m);
  return x;
}

Eigen::VectorXd project(const Eigen::VectorXd& z, const Eigen::VectorXd& lower,
                        const Eigen::VectorXd& upper) {
  return z.cwiseMax(lower).cwiseMin(upper);
}

namespace {

double bound_eps(double bound) { return 1e-12 * (1.0 + std::abs(bound)); }

/// Freezes the components in `fixed`: identity rows and columns, zero rhs.
void freeze(BlockTridiagonal& H, Eigen::VectorXd& rhs, const std::vector<int>& fixed, int m) {
  for (int j : fixed) {
    const int s = j / m, c = j % m;
    H.diag[s].row(c).setZero();
    H.diag[s].col(c).setZero();
    H.diag[s](c, c) = 1.0;
    if (s + 1 < int(H.diag.size())) H.upper[s].row(c).setZero();
    if (s > 0) H.upper[s - 1].col(c).setZero();
    rhs[j] = 0.0;
  }
}

Eigen::VectorXd multiply(const BlockTridiagonal& H, const Eigen::VectorXd& x) {
  const int L = int(H.diag.size());
  const int m = L ? int(H.diag[0].rows()) : 0;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (int i = 0; i < L; ++i) {
    y.segment(i * m, m) += H.diag[i] * x.segment(i * m, m);
    if (i + 1 < L) {
      y.segment(i * m, m) += H.upper[i] * x.segment((i + 1) * m, m);
      y.segment((i + 1) * m, m) += H.upper[i].transpose() * x.segment(i * m, m);
    }
  }
  return y;
}

}  // namespace

NlsResult solve_box_nls(const StagedLeastSquares& problem, const Eigen::VectorXd& initial,
                        const NlsSettings& settings) {
  const int size = problem.size();
  const int m = problem.stage_dim();
  if (initial.size() != size) throw ValidationError("initial guess has the wrong size");
  if (problem.lower.size() != size || problem.upper.size() != size)
    throw ValidationError("bounds have the wrong size");
  if ((problem.lower.array() > problem.upper.array()).any())
    throw ValidationError("lower bound exceeds upper bound");

  NlsResult res;
  res.z = project(initial, problem.lower, problem.upper);
  Eigen::VectorXd grad;
  BlockTridiagonal H;
  res.cost = problem.linearize(res.z, grad, H);
  if (!std::isfinite(res.cost) || !grad.allFinite())
    throw SolverError("non-finite cost or gradient at the initial guess");
  double lambda = 0.0;
  double nu = 2.0;

  for (;;) {
    const Eigen::VectorXd pg = res.z - project(res.z - grad, problem.lower, problem.upper);
    res.kkt_residual = pg.lpNorm<Eigen::Infinity>();
    if (res.kkt_residual <= settings.gradient_tol) {
      res.converged = true;
      res.status = "projected gradient below tolerance";
      return res;
    }
    if (res.iterations >= settings.max_iter) {
      res.status = "iteration limit";
      return res;
    }

    std::vector<int> fixed;
    for (int j = 0; j < size; ++j) {
      const bool at_lower = res.z[j] <= problem.lower[j] + bound_eps(problem.lower[j]);
      const bool at_upper = res.z[j] >= problem.upper[j] - bound_eps(problem.upper[j]);
      if ((at_lower && grad[j] > 0.0) || (at_upper && grad[j] < 0.0)) fixed.push_back(j);
    }
    double diag_scale = 0.0;
    for (const auto& D : H.diag) diag_scale = std::max(diag_scale, D.diagonal().maxCoeff());

    bool accepted = false;
    Eigen::VectorXd z_new;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      BlockTridiagonal Hd = H;
      for (auto& D : Hd.diag)
        D.diagonal() += lambda * (D.diagonal().cwiseMax(1e-12 * diag_scale));
      Eigen::VectorXd rhs = -grad;
      freeze(Hd, rhs, fixed, m);
      Eigen::VectorXd step;
      bool solved = true;
      try {
        step = solve_block_tridiagonal(Hd, rhs);
      } catch (const SolverError&) {
        solved = false;
      }
      if (solved) {
        z_new = project(res.z + step, problem.lower, problem.upper);
        const Eigen::VectorXd d = z_new - res.z;
        const double predicted = -(grad.dot(d) + 0.5 * d.dot(multiply(H, d)));
        const double cost_new = problem.cost(z_new);
        const double actual = res.cost - cost_new;
        if (std::isfinite(cost_new) && actual >= 0.0 && (predicted <= 0.0 || actual > 1e-4 * predicted)) {
          accepted = true;
          const double rho = predicted > 0.0 ? actual / predicted : 1.0;
          lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
          if (lambda < 1e-12) lambda = 0.0;
          nu = 2.0;
          break;
        }
      }
      lambda = lambda == 0.0 ? 1e-6 : lambda * nu;
      nu *= 2.0;
    }
    if (!accepted) {
      res.status = "no descent direction";
      return res;
    }
    const double step_norm = (z_new - res.z).lpNorm<Eigen::Infinity>();
    res.z = z_new;
    ++res.iterations;
    res.cost = problem.linearize(res.z, grad, H);
    if (step_norm <= settings.step_tol * (1.0 + res.z.lpNorm<Eigen::Infinity>())) {
      const Eigen::VectorXd pg = res.z - project(res.z - grad, problem.lower, problem.upper);
      res.kkt_residual = pg.lpNorm<Eigen::Infinity>();
      res.converged = true;
      res.status = "step below tolerance";
      return res;
    }
  }
}

}  // namespace retinest
