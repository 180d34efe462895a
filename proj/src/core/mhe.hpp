#pragma once

#include <Eigen/Dense>
#include <vector>

#include "box_nls.hpp"
#include "ekf.hpp"
#include "plant.hpp"

namespace retinest {

struct RiccatiResult {
  Eigen::MatrixXd prior;      // stationary a priori covariance (the DARE solution)
  Eigen::MatrixXd posterior;  // after a measurement update with the same gain
  int iterations = 0;
  double residual = 0.0;      // Frobenius norm of the DARE residual at `prior`
};

/// Iterates P <- A P A^T - A P c^T (c P c^T + R)^-1 c P A^T + Q from P = Q until
/// the relative change drops below tol. Throws after max_iter iterations.
RiccatiResult solve_dare(const Eigen::MatrixXd& A, const Eigen::RowVectorXd& c,
                         const Eigen::MatrixXd& Q, double R, double tol = 1e-10,
                         int max_iter = 100000);

/// Stationary state covariance of the fixed-alpha filter for (A_d, c_vol(alpha_bar)).
RiccatiResult riccati_state_weight(const DiscreteModel& model, const Alpha& alpha_bar,
                                   const Eigen::MatrixXd& Q_state, double R);

/// blockdiag(P_state, p_para).
Eigen::MatrixXd block_prior_weight(const Eigen::MatrixXd& P_state, const Eigen::MatrixXd& p_para);

enum class PriorWeighting { constant, ekf_propagated };
enum class PriorUpdate { filtering, smoothing };
/// Which measurement the output term of stage i compares against.
enum class OutputIndex { stage, current };

struct MheConfig {
  int horizon = 5;
  EkfConfig weights;  // Q, R, initial prior (x0, P0); shared with the parallel EKF
  PriorWeighting weighting = PriorWeighting::ekf_propagated;
  PriorUpdate update = PriorUpdate::filtering;
  OutputIndex output_index = OutputIndex::stage;
  /// Keep the output term of the arrival stage even though the prior already
  /// contains that measurement.
  bool literal_cost = false;
  bool constraints = true;
  Eigen::VectorXd alpha_lower;  // p entries
  Eigen::VectorXd alpha_upper;
  Eigen::MatrixXd constant_weight;  // used with PriorWeighting::constant
  NlsSettings solver;

  void validate(int n, int p) const;
};

/// The prior of the window starting at time s (s = -1 is t = 0).
struct Prior {
  Eigen::VectorXd chi;
  Eigen::MatrixXd P;
};

/// Window state carried between MHE steps.
struct MheWindow {
  std::vector<Eigen::VectorXd> filtered;  // x_{i|i}, indexed by time
  std::vector<Eigen::MatrixXd> ekf_P;     // parallel EKF posterior P_i
  int previous_start = 0;                 // first time of the previous solution
  std::vector<Eigen::VectorXd> previous;  // previous solution, stage times previous_start..k-1
};

Prior update_prior(const MheWindow& window, const MheConfig& config, int start);

struct MheRun {
  EstimateRecord record;
  int fallbacks = 0;
};

/// Solves Eq. (12)-(13) at each sample, warm-started from the shifted
/// previous solution, and reports the last stage.
MheRun run_mhe(const ExtendedModel& model, const MheConfig& config, const Stream& stream);

}  // namespace retinest
