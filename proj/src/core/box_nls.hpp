#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace retinest {

/// Symmetric block-tridiagonal matrix with square blocks of equal size.
struct BlockTridiagonal {
  std::vector<Eigen::MatrixXd> diag;   // H(i, i)
  std::vector<Eigen::MatrixXd> upper;  // H(i, i + 1)

  void resize(int stages, int dim);
  Eigen::MatrixXd dense() const;
};

/// Block Cholesky (Thomas) solve, O(stages * dim^3).
Eigen::VectorXd solve_block_tridiagonal(const BlockTridiagonal& H, const Eigen::VectorXd& rhs);

/// Weighted least-squares objective 0.5 * sum r^T W r over a decision vector
/// split into equal stages, whose Gauss-Newton Hessian is block-tridiagonal.
class StagedLeastSquares {
 public:
  virtual ~StagedLeastSquares() = default;
  virtual int stages() const = 0;
  virtual int stage_dim() const = 0;
  int size() const { return stages() * stage_dim(); }

  virtual double cost(const Eigen::VectorXd& z) const = 0;
  /// Cost, gradient J^T W r and Gauss-Newton Hessian J^T W J at z.
  virtual double linearize(const Eigen::VectorXd& z, Eigen::VectorXd& gradient,
                           BlockTridiagonal& hessian) const = 0;

  Eigen::VectorXd lower;  // -inf / +inf for unbounded components
  Eigen::VectorXd upper;
};

struct NlsSettings {
  int max_iter = 50;
  double gradient_tol = 1e-10;  // projected-gradient infinity norm
  double step_tol = 1e-12;      // relative step infinity norm
};

struct NlsResult {
  Eigen::VectorXd z;
  double cost = 0.0;
  double kkt_residual = 0.0;  // infinity norm of z - proj(z - grad)
  int iterations = 0;
  bool converged = false;
  std::string status;
};

Eigen::VectorXd project(const Eigen::VectorXd& z, const Eigen::VectorXd& lower,
                        const Eigen::VectorXd& upper);

/// Projected Gauss-Newton with Levenberg damping. Components at a bound whose
/// gradient pushes outward are held fixed; the free subsystem is solved with the
/// block-tridiagonal factorization. Throws SolverError on non-finite values.
NlsResult solve_box_nls(const StagedLeastSquares& problem, const Eigen::VectorXd& initial,
                        const NlsSettings& settings = {});

}  // namespace retinest
