#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "absorption.hpp"
#include "thermal_model.hpp"

namespace retinest {

/// Single-input, multi-output sparse LTI system  x' = A x + b u,  y = C x.
struct LtiSystem {
  SparseMatrix A;
  Eigen::VectorXd b;
  Eigen::MatrixXd C;  // outputs x n
};

LtiSystem lti_at(const FullOrderModel& model, const Alpha& alpha);

/// C (sI - A)^-1 b, and its derivative in s, evaluated with a sparse solve.
Eigen::VectorXd transfer_function(const LtiSystem& sys, double s);
Eigen::VectorXd transfer_function_derivative(const LtiSystem& sys, double s);

struct IrkaSettings {
  int order = 6;
  double tol = 1e-4;
  int max_iter = 50;
};

struct LocalBasis {
  Alpha alpha = Alpha::Zero();
  Eigen::MatrixXd V;        // orthonormal columns
  Eigen::MatrixXd W;        // orthonormal columns
  Eigen::VectorXcd shifts;  // interpolation points used for V, W (conjugate pairs allowed)
  Eigen::MatrixXcd left_directions;  // outputs x order
  int iterations = 0;
  bool converged = false;
  double last_change = 0.0;
  bool complex_shifts = false;  // reduced poles left the real axis at some iterate
};

/// Two-sided tangential IRKA. Shifts are mirrored reduced poles, left
/// tangential directions are reduced residues (the right direction is scalar
/// for a single input). A conjugate shift pair contributes the real and
/// imaginary parts of one complex solve, so V and W stay real. Stops when the
/// relative shift change drops below tol.
LocalBasis irka_local_basis(const LtiSystem& sys, const IrkaSettings& settings,
                            std::optional<Eigen::VectorXd> initial_shifts = std::nullopt);
LocalBasis irka_local_basis(const FullOrderModel& model, const Alpha& alpha,
                            const IrkaSettings& settings);

/// Log-spaced real shifts between the smallest and largest eigenvalue
/// magnitude estimates of A.
Eigen::VectorXd initial_shifts(const SparseMatrix& A, int count);

struct GlobalBasis {
  Eigen::MatrixXd V;
  Eigen::MatrixXd W;
  Eigen::VectorXd singular_values_V;
  Eigen::VectorXd singular_values_W;
  double discarded_V = 0.0;  // sqrt of the discarded squared singular values
  double discarded_W = 0.0;
  double condition_WtV = 0.0;
};

GlobalBasis build_global_basis(const std::vector<LocalBasis>& local_bases, int n,
                               double svd_tol = 1e-10);

struct DeimFactors {
  Eigen::MatrixXd U;              // n_f x d
  std::vector<int> indices;       // selector P as row indices
  Eigen::VectorXd singular_values;  // of the snapshot matrix
  Eigen::MatrixXd PtU_inverse;    // (P^T U)^-1

  int order() const { return int(indices.size()); }
  /// U (P^T U)^-1 applied to the sampled entries.
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& sampled) const;
  Eigen::VectorXd sample(const Eigen::VectorXd& full) const;
  /// Largest discarded singular value relative to the largest one.
  double tail(int d) const;
};

/// POD of the snapshot columns followed by greedy DEIM index selection.
DeimFactors deim_factorize(const Eigen::MatrixXd& snapshots, int d, double rank_tol = 1e-12);

/// Counts closed-form entry evaluations of a reduced model so tests can
/// check that online evaluation touches only the DEIM-selected entries.
class EvaluationCounter {
 public:
  EvaluationCounter() = default;
  EvaluationCounter(const EvaluationCounter& other) : count_(other.count()) {}
  EvaluationCounter& operator=(const EvaluationCounter& other) {
    count_.store(other.count());
    return *this;
  }
  void add(long k) const { count_.fetch_add(k, std::memory_order_relaxed); }
  long count() const { return count_.load(std::memory_order_relaxed); }
  void reset() const { count_.store(0); }

 private:
  mutable std::atomic<long> count_{0};
};

/// Parametric reduced model
///   x' = A x + b(alpha) u,  T_vol = c_vol(alpha) x,  T_peak = c_peak x,
/// with b(alpha) = input_basis * b~(alpha) and c_vol(alpha) = c~(alpha)^T output_basis,
/// where b~, c~ are the DEIM-sampled entries of the full-order maps.
class ReducedModel {
 public:
  ReducedModel() = default;

  int n() const { return int(A.rows()); }
  int deim_order() const { return int(input_entries.size()); }

  Eigen::VectorXd sampled_input(const Alpha& alpha) const;
  Eigen::MatrixXd sampled_input_gradient(const Alpha& alpha) const;  // d x 2
  Eigen::VectorXd sampled_output(const Alpha& alpha) const;
  Eigen::MatrixXd sampled_output_gradient(const Alpha& alpha) const;

  Eigen::VectorXd input_map(const Alpha& alpha) const;            // b(alpha)
  Eigen::MatrixXd input_map_jacobian(const Alpha& alpha) const;   // n x 2
  Eigen::VectorXd output_map(const Alpha& alpha) const;           // c_vol(alpha)^T
  Eigen::MatrixXd output_map_jacobian(const Alpha& alpha) const;  // n x 2

  const EvaluationCounter& entry_evaluations() const { return counter_; }

  Eigen::MatrixXd A;
  Eigen::MatrixXd input_basis;   // n x d
  Eigen::MatrixXd output_basis;  // d x n
  Eigen::VectorXd peak_row;      // c_peak^T, length n
  Eigen::MatrixXd V;             // lifting basis, n_f x n
  AbsorptionProfile profile;
  std::vector<SampledEntry> input_entries;
  std::vector<SampledEntry> output_entries;
  std::vector<int> input_indices;
  std::vector<int> output_indices;

  int parameters = 1;
  ParameterDomain domain;
  double alpha_ch_fixed = 0.0986;
  double condition_WtV = 0.0;
  std::string config_hash;

 private:
  EvaluationCounter counter_;
};

/// A = (W^T V)^-1 W^T A^f V,
/// b(alpha) = (W^T V)^-1 W^T U_b (P_b^T U_b)^-1 b~(alpha),
/// c_vol(alpha) = c~(alpha) (U_c^T P_c)^-1 U_c^T V,  c_peak = c_peak^f V.
/// Throws when W^T V is numerically singular or A is not Hurwitz.
ReducedModel reduce_model(const FullOrderModel& full, const GlobalBasis& basis,
                          const DeimFactors& input_deim, const DeimFactors& output_deim);

bool is_hurwitz(const Eigen::MatrixXd& A, double* max_real_part = nullptr);

struct RomSettings {
  int order_1p = 6;
  int order_2p = 7;
  int deim_order = 3;
  int basis_samples_per_axis = 3;
  int deim_samples_1p = 20;
  int deim_samples_per_axis_2p = 7;
  double irka_tol = 1e-4;
  int irka_max_iter = 50;
  double svd_tol = 1e-10;
  int threads = 0;  // 0: hardware concurrency

  int order(int p) const { return p == 1 ? order_1p : order_2p; }
};

struct RomBuildReport {
  std::vector<LocalBasis> local_bases;
  GlobalBasis basis;
  DeimFactors input_deim;
  DeimFactors output_deim;
};

/// Uniform samples of D: per axis for p = 2, with alpha_ch frozen for p = 1.
std::vector<Alpha> parameter_grid(const ParameterDomain& domain, int per_axis,
                                  double alpha_ch_fixed);

/// Full offline pipeline: IRKA local bases over a parameter grid, global basis,
/// DEIM for b^f and c_vol^f, projection.
ReducedModel build_reduced_model(const FullOrderModel& full, int p,
                                 const ParameterDomain& domain, double alpha_ch_fixed,
                                 const RomSettings& settings,
                                 RomBuildReport* report = nullptr);

struct ReducedTrace {
  std::vector<double> T_vol;
  std::vector<double> T_peak;
  Eigen::MatrixXd states;  // n x steps
};

/// Implicit-Euler simulation of the reduced model from zero, same sampling
/// convention as simulate_full.
ReducedTrace simulate_reduced(const ReducedModel& rom, const Alpha& alpha,
                              const std::vector<double>& input, double dt);

struct RomErrorRow {
  Alpha alpha = Alpha::Zero();
  double max_rel_error_vol = 0.0;   // max_k |dT| / max_k |T_full|
  double max_rel_error_peak = 0.0;
  double mean_signed_error_vol = 0.0;  // mean_k (T_rom - T_full) / max_k |T_full|
  double mean_signed_error_peak = 0.0;
};

std::vector<RomErrorRow> rom_error_sweep(const FullOrderModel& full, const ReducedModel& rom,
                                         const std::vector<Alpha>& alpha_grid,
                                         const std::vector<double>& input, double dt);

void write_rom_error_csv(const std::string& path, const std::vector<RomErrorRow>& rows);

// ROM archive (JSON). Everything the estimators need, no full-order operator.
void save_reduced_model(const ReducedModel& rom, const std::string& path);
ReducedModel load_reduced_model(const std::string& path);

}  // namespace retinest
