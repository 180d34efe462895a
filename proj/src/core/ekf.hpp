#pragma once

#include <Eigen/Dense>
#include <vector>

#include "plant.hpp"

namespace retinest {

struct EkfConfig {
  Eigen::MatrixXd Q;    // (n+p) x (n+p)
  double R = 1e3;
  Eigen::MatrixXd P0;   // (n+p) x (n+p)
  Eigen::VectorXd x0;   // prior at t = 0

  void validate(int dim) const;
};

/// Q = diag(0.01) (parameter block diag(0.005, 0.001) for p = 2), R = 1e3,
/// P_state = 0.01 I, p_para = 50 (p = 1) or diag(50, 20), x0 = 0 with the
/// parameters at `alpha0`.
EkfConfig default_ekf_config(int n, int p, const Eigen::VectorXd& alpha0);

struct EkfState {
  Eigen::VectorXd x;
  Eigen::MatrixXd P;
  double innovation = 0.0;
  Eigen::VectorXd gain;
};

/// x- = f(x, u), P- = F P F^T + Q with F the extended Jacobian at (x, u).
EkfState predict(const ExtendedModel& model, const EkfState& state, double u,
                 const Eigen::MatrixXd& Q);

/// H = P- c^T / (c P- c^T + R), x = x- + H (y - g(x-)), P = (I - H c) P-,
/// symmetrized.
EkfState correct(const ExtendedModel& model, const EkfState& predicted, double y, double R);

/// Input/measurement stream; sample k at (k + 1) ts, u[k] drives the interval
/// ending at sample k.
struct Stream {
  double ts = 1e-3;
  std::vector<double> u;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  void validate() const;
};

/// Per-step estimator output shared by EKF and MHE.
struct EstimateRecord {
  std::vector<Eigen::VectorXd> x;  // extended estimates
  std::vector<double> y_hat;
  std::vector<double> peak_hat;
  std::vector<double> P_trace;
  std::vector<double> step_seconds;

  // MHE only
  std::vector<int> solver_iterations;
  std::vector<std::vector<int>> active_lower;  // per step, per parameter: 1 if at bound
  std::vector<std::vector<int>> active_upper;
  std::vector<double> kkt_residual;
  std::vector<int> fallback;  // 1 when the solver failed and the warm start was kept

  std::size_t size() const { return x.size(); }
};

struct EkfRun {
  EstimateRecord record;
  std::vector<Eigen::MatrixXd> P;  // posterior covariances
};

/// Predict with u_k, then correct with y_k, for every k; the prior describes t = 0.
EkfRun run_ekf(const ExtendedModel& model, const EkfConfig& config, const Stream& stream,
               bool keep_covariances = false);

/// `k,t,u,y_meas,y_hat,T_peak_hat,alpha_hat_1[,alpha_hat_2],P_trace` and, for
/// MHE records, `solver_iters,active_lb_1,active_ub_1[,...],kkt_residual`.
void write_estimate_csv(const std::string& path, const Stream& stream,
                        const EstimateRecord& record, int state_dim, int param_dim, bool mhe);

}  // namespace retinest
