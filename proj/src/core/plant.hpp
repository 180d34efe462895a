#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmor.hpp"
#include "thermal_model.hpp"

namespace retinest {

/// Implicit-Euler discretization of the reduced model,
///   x_{k+1} = A_d x_k + b_d(alpha) u,  A_d = (I - t_s A)^-1,  b_d = A_d t_s b(alpha).
class DiscreteModel {
 public:
  DiscreteModel(std::shared_ptr<const ReducedModel> rom, double ts);

  int n() const { return int(Ad_.rows()); }
  double ts() const { return ts_; }
  const ReducedModel& rom() const { return *rom_; }
  const Eigen::MatrixXd& Ad() const { return Ad_; }

  Eigen::VectorXd input_map(const Alpha& alpha) const;           // b_d(alpha)
  Eigen::MatrixXd input_map_jacobian(const Alpha& alpha) const;  // n x 2
  Eigen::VectorXd output_map(const Alpha& alpha) const { return rom_->output_map(alpha); }
  const Eigen::VectorXd& peak_row() const { return rom_->peak_row; }

  /// One implicit-Euler step solved as a linear system with the stored factorization.
  Eigen::VectorXd solve_step(const Eigen::VectorXd& x, const Alpha& alpha, double u) const;
  double spectral_radius() const;

 private:
  std::shared_ptr<const ReducedModel> rom_;
  double ts_;
  Eigen::PartialPivLU<Eigen::MatrixXd> factor_;  // of I - t_s A
  Eigen::MatrixXd Ad_;
  Eigen::MatrixXd input_basis_d_;  // A_d t_s * input_basis, n x d
};

/// Extended model x_bar = [x; theta] with theta the p estimated parameters:
///   x_bar_{k+1} = f(x_bar_k, u_k),  y_k = g(x_bar_k).
/// Estimators only see this interface, so linear oracle systems plug in too.
class ExtendedModel {
 public:
  virtual ~ExtendedModel() = default;

  virtual int state_dim() const = 0;
  virtual int param_dim() const = 0;
  int dim() const { return state_dim() + param_dim(); }

  virtual Eigen::VectorXd transition(const Eigen::VectorXd& xbar, double u) const = 0;
  virtual Eigen::MatrixXd transition_jacobian(const Eigen::VectorXd& xbar, double u) const = 0;
  virtual double output(const Eigen::VectorXd& xbar) const = 0;
  virtual Eigen::RowVectorXd output_jacobian(const Eigen::VectorXd& xbar) const = 0;
  /// Unmeasured peak temperature; zero when the model has none.
  virtual double peak(const Eigen::VectorXd& xbar) const = 0;
  /// Lifts the reduced state to the full-order grid; empty when unsupported.
  virtual Eigen::VectorXd lift(const Eigen::VectorXd& xbar) const = 0;
};

/// Eq. (9): the discrete reduced model with constant parameter dynamics.
/// For p = 1 only alpha_rpe is estimated and alpha_ch stays at alpha_ch_fixed.
class AugmentedModel final : public ExtendedModel {
 public:
  AugmentedModel(std::shared_ptr<const DiscreteModel> model, int p, double alpha_ch_fixed);

  int state_dim() const override { return model_->n(); }
  int param_dim() const override { return p_; }
  Eigen::VectorXd transition(const Eigen::VectorXd& xbar, double u) const override;
  Eigen::MatrixXd transition_jacobian(const Eigen::VectorXd& xbar, double u) const override;
  double output(const Eigen::VectorXd& xbar) const override;
  Eigen::RowVectorXd output_jacobian(const Eigen::VectorXd& xbar) const override;
  double peak(const Eigen::VectorXd& xbar) const override;
  Eigen::VectorXd lift(const Eigen::VectorXd& xbar) const override;

  Alpha alpha(const Eigen::VectorXd& xbar) const;
  const DiscreteModel& discrete() const { return *model_; }
  double alpha_ch_fixed() const { return alpha_ch_fixed_; }

 private:
  std::shared_ptr<const DiscreteModel> model_;
  int p_;
  double alpha_ch_fixed_;
};

/// Linear time-invariant extended model without parameters, x+ = A x + B u,
/// y = c x. Used as the Kalman-filter oracle system.
class LinearModel final : public ExtendedModel {
 public:
  LinearModel(Eigen::MatrixXd A, Eigen::VectorXd B, Eigen::RowVectorXd c);

  int state_dim() const override { return int(A_.rows()); }
  int param_dim() const override { return 0; }
  Eigen::VectorXd transition(const Eigen::VectorXd& x, double u) const override;
  Eigen::MatrixXd transition_jacobian(const Eigen::VectorXd&, double) const override { return A_; }
  double output(const Eigen::VectorXd& x) const override { return c_.dot(x); }
  Eigen::RowVectorXd output_jacobian(const Eigen::VectorXd&) const override { return c_; }
  double peak(const Eigen::VectorXd&) const override { return 0.0; }
  Eigen::VectorXd lift(const Eigen::VectorXd&) const override { return {}; }

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd B_;
  Eigen::RowVectorXd c_;
};

/// Measurement trace. Sample k lies at t_k = (k + 1) t_s; u_k is the power
/// over the interval ending at t_k and the state starts from zero at t = 0.
struct SimTrace {
  double ts = 1e-3;
  std::vector<double> t;
  std::vector<double> u;
  std::vector<double> y_clean;
  std::vector<double> y_noisy;
  std::vector<double> peak_clean;
  Alpha alpha_true = Alpha::Zero();
  int parameters = 1;
  double noise_variance = 0.0;
  std::uint64_t seed = 0;
  std::string truth;  // "full" or "rom"
  Eigen::MatrixXd states;  // full-order truth, n_f x steps, when kept

  std::size_t size() const { return u.size(); }
};

enum class Truth { full, rom };

struct NoiseModel {
  double variance = 0.288;  // K^2
};

/// Clean truth trajectory (no noise); noisy outputs equal clean ones.
SimTrace simulate_truth(const FullOrderModel* full, const ReducedModel* rom, Truth truth,
                        const Alpha& alpha, const std::vector<double>& input, double ts,
                        bool keep_states);

/// Additive Gaussian output noise drawn from a seeded mt19937_64 stream.
void add_noise(SimTrace& trace, const NoiseModel& noise, std::uint64_t seed);

SimTrace simulate_plant(const FullOrderModel* full, const ReducedModel* rom, Truth truth,
                        const Alpha& alpha, const std::vector<double>& input, double ts,
                        const NoiseModel& noise, std::uint64_t seed, bool keep_states = false);

/// `k,t,u,y_clean,y_noisy,alpha_true_1[,alpha_true_2]` plus `<path>.meta.json`.
void write_sim_trace_csv(const std::string& path, const SimTrace& trace,
                         const std::string& config_hash, int rom_order, int deim_order);

}  // namespace retinest
