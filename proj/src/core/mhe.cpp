#include "mhe.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "errors.hpp"

namespace retinest {

RiccatiResult solve_dare(const Eigen::MatrixXd& A, const Eigen::RowVectorXd& c,
                         const Eigen::MatrixXd& Q, double R, double tol, int max_iter) {
  const int n = int(A.rows());
  if (A.cols() != n || c.size() != n || Q.rows() != n || Q.cols() != n)
    throw ValidationError("DARE dimensions do not agree");
  if (!(R > 0.0)) throw ValidationError("DARE needs R > 0");
  auto update = [&](const Eigen::MatrixXd& P) -> Eigen::MatrixXd {
    const Eigen::VectorXd Pc = P * c.transpose();
    const Eigen::MatrixXd post = P - Pc * Pc.transpose() / (c.dot(Pc) + R);
    Eigen::MatrixXd next = A * post * A.transpose() + Q;
    return 0.5 * (next + next.transpose());
  };
  RiccatiResult res;
  Eigen::MatrixXd P = Q;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd next = update(P);
    const double change = (next - P).norm();
    P = next;
    res.iterations = it;
    if (change <= tol * P.norm() || change <= std::numeric_limits<double>::min()) {
      res.prior = P;
      const Eigen::VectorXd Pc = P * c.transpose();
      res.posterior = P - Pc * Pc.transpose() / (c.dot(Pc) + R);
      res.posterior = 0.5 * (res.posterior + res.posterior.transpose());
      res.residual = (update(P) - P).norm();
      return res;
    }
    if (!P.allFinite()) throw SolverError("DARE iteration diverged");
  }
  throw SolverError("DARE fixed-point iteration did not converge");
}

RiccatiResult riccati_state_weight(const DiscreteModel& model, const Alpha& alpha_bar,
                                   const Eigen::MatrixXd& Q_state, double R) {
  return solve_dare(model.Ad(), model.output_map(alpha_bar).transpose(), Q_state, R);
}

Eigen::MatrixXd block_prior_weight(const Eigen::MatrixXd& P_state, const Eigen::MatrixXd& p_para) {
  const int n = int(P_state.rows()), p = int(p_para.rows());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n + p, n + p);
  P.topLeftCorner(n, n) = P_state;
  P.bottomRightCorner(p, p) = p_para;
  return P;
}

void MheConfig::validate(int n, int p) const {
  if (horizon < 1) throw ValidationError("MHE horizon must be >= 1");
  weights.validate(n + p);
  if (alpha_lower.size() != p || alpha_upper.size() != p)
    throw ValidationError("MHE bounds must have p entries");
  if ((alpha_lower.array() >= alpha_upper.array()).any())
    throw ValidationError("MHE lower bounds must be below the upper bounds");
  if (weighting == PriorWeighting::constant) {
    if (constant_weight.rows() != n + p || constant_weight.cols() != n + p)
      throw ValidationError("constant prior weight has the wrong dimension");
    if (constant_weight.llt().info() != Eigen::Success)
      throw ValidationError("constant prior weight must be positive definite");
  }
}

Prior update_prior(const MheWindow& window, const MheConfig& config, int start) {
  if (start < 0 || start >= int(window.filtered.size()))
    return {config.weights.x0, config.weights.P0};
  Prior prior;
  if (config.update == PriorUpdate::filtering) {
    prior.chi = window.filtered[start];
  } else {
    const int idx = start - window.previous_start;
    prior.chi = idx >= 0 && idx < int(window.previous.size()) ? window.previous[idx]
                                                              : window.filtered[start];
  }
  prior.P = config.weighting == PriorWeighting::constant ? config.constant_weight
                                                         : window.ekf_P[start];
  return prior;
}

namespace {

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& M, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SolverError(std::string(what) + " is not positive definite");
  Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(M.rows(), M.cols()));
  return 0.5 * (inv + inv.transpose());
}

/// Eq. (13) over stage times start..k, stacked as [x_start, ..., x_k].
class WindowProblem final : public StagedLeastSquares {
 public:
  WindowProblem(const ExtendedModel& model, const Prior& prior, const Eigen::MatrixXd& Qinv,
                double Rinv, std::vector<double> u, std::vector<double> y,
                std::vector<bool> has_output)
      : model_(model), chi_(prior.chi), Pinv_(spd_inverse(prior.P, "prior weight")),
        Qinv_(Qinv), Rinv_(Rinv), u_(std::move(u)), y_(std::move(y)),
        has_output_(std::move(has_output)) {}

  int stages() const override { return int(y_.size()); }
  int stage_dim() const override { return model_.dim(); }

  double cost(const Eigen::VectorXd& z) const override {
    const int m = stage_dim(), L = stages();
    const Eigen::VectorXd d0 = z.head(m) - chi_;
    double c = d0.dot(Pinv_ * d0);
    for (int j = 0; j < L; ++j) {
      const Eigen::VectorXd zj = z.segment(j * m, m);
      if (has_output_[j]) {
        const double r = y_[j] - model_.output(zj);
        c += Rinv_ * r * r;
      }
      if (j + 1 < L) {
        const Eigen::VectorXd r = z.segment((j + 1) * m, m) - model_.transition(zj, u_[j + 1]);
        c += r.dot(Qinv_ * r);
      }
    }
    return std::isfinite(c) ? 0.5 * c : std::numeric_limits<double>::infinity();
  }

  double linearize(const Eigen::VectorXd& z, Eigen::VectorXd& g,
                   BlockTridiagonal& H) const override {
    const int m = stage_dim(), L = stages();
    H.resize(L, m);
    g = Eigen::VectorXd::Zero(L * m);
    const Eigen::VectorXd d0 = z.head(m) - chi_;
    double c = d0.dot(Pinv_ * d0);
    H.diag[0] += Pinv_;
    g.head(m) += Pinv_ * d0;
    for (int j = 0; j < L; ++j) {
      const Eigen::VectorXd zj = z.segment(j * m, m);
      if (has_output_[j]) {
        const double r = y_[j] - model_.output(zj);
        const Eigen::RowVectorXd G = model_.output_jacobian(zj);
        c += Rinv_ * r * r;
        H.diag[j] += Rinv_ * G.transpose() * G;
        g.segment(j * m, m) -= Rinv_ * r * G.transpose();
      }
      if (j + 1 < L) {
        const Eigen::MatrixXd F = model_.transition_jacobian(zj, u_[j + 1]);
        const Eigen::VectorXd r = z.segment((j + 1) * m, m) - model_.transition(zj, u_[j + 1]);
        const Eigen::MatrixXd FtQ = F.transpose() * Qinv_;
        c += r.dot(Qinv_ * r);
        H.diag[j] += FtQ * F;
        H.diag[j + 1] += Qinv_;
        H.upper[j] -= FtQ;
        g.segment(j * m, m) -= FtQ * r;
        g.segment((j + 1) * m, m) += Qinv_ * r;
      }
      if (!std::isfinite(c) || !g.segment(j * m, m).allFinite()) {
        std::ostringstream os;
        os << "MHE residuals are not finite at stage " << j;
        throw SolverError(os.str());
      }
    }
    return 0.5 * c;
  }

 private:
  const ExtendedModel& model_;
  Eigen::VectorXd chi_;
  Eigen::MatrixXd Pinv_;
  Eigen::MatrixXd Qinv_;
  double Rinv_;
  std::vector<double> u_;  // u_[j] drives the transition into stage j
  std::vector<double> y_;
  std::vector<bool> has_output_;
};

}  // namespace

MheRun run_mhe(const ExtendedModel& model, const MheConfig& config, const Stream& stream) {
  const int n = model.state_dim(), p = model.param_dim(), m = model.dim();
  config.validate(n, p);
  stream.validate();
  const Eigen::MatrixXd Qinv = spd_inverse(config.weights.Q, "Q");
  const double Rinv = 1.0 / config.weights.R;
  const double inf = std::numeric_limits<double>::infinity();
  const int K = int(stream.size());

  MheRun run;
  MheWindow window;
  EkfState ekf{config.weights.x0, config.weights.P0, 0.0, {}};
  window.previous_start = -1;
  window.previous = {config.weights.x0};

  for (int k = 0; k < K; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    if (config.weighting == PriorWeighting::ekf_propagated) {
      ekf = correct(model, predict(model, ekf, stream.u[k], config.weights.Q), stream.y[k],
                    config.weights.R);
      window.ekf_P.push_back(ekf.P);
    }

    // Stage times start..k; start = -1 is t = 0, before any measurement.
    const int start = std::max(k - config.horizon, -1);
    const int L = k - start + 1;
    const Prior prior = update_prior(window, config, start);

    std::vector<double> u(L, 0.0), y(L, 0.0);
    std::vector<bool> has_output(L, false);
    for (int j = 0; j < L; ++j) {
      const int i = start + j;
      if (i < 0) continue;
      u[j] = stream.u[i];
      y[j] = config.output_index == OutputIndex::stage ? stream.y[i] : stream.y[k];
      has_output[j] = j > 0 || config.literal_cost;
    }
    WindowProblem problem(model, prior, Qinv, Rinv, u, y, has_output);
    problem.lower = Eigen::VectorXd::Constant(L * m, -inf);
    problem.upper = Eigen::VectorXd::Constant(L * m, inf);
    if (config.constraints)
      for (int j = 0; j < L; ++j) {
        problem.lower.segment(j * m + n, p) = config.alpha_lower;
        problem.upper.segment(j * m + n, p) = config.alpha_upper;
      }

    // Warm start: previous solution shifted by one, last stage propagated.
    Eigen::VectorXd z0(L * m);
    for (int j = 0; j < L; ++j) {
      const int idx = start + j - window.previous_start;
      if (idx >= 0 && idx < int(window.previous.size()))
        z0.segment(j * m, m) = window.previous[idx];
      else if (j == 0)
        z0.head(m) = prior.chi;
      else
        z0.segment(j * m, m) = model.transition(z0.segment((j - 1) * m, m), u[j]);
    }
    z0 = project(z0, problem.lower, problem.upper);

    NlsResult sol;
    bool failed = false;
    try {
      sol = solve_box_nls(problem, z0, config.solver);
      if (!sol.z.allFinite()) failed = true;
    } catch (const SolverError&) {
      failed = true;
    }
    if (failed) {
      sol.z = z0;
      sol.iterations = 0;
      sol.kkt_residual = std::numeric_limits<double>::quiet_NaN();
      ++run.fallbacks;
    }

    window.previous_start = start;
    window.previous.clear();
    for (int j = 0; j < L; ++j) window.previous.push_back(sol.z.segment(j * m, m));
    const Eigen::VectorXd xk = window.previous.back();
    window.filtered.push_back(xk);
    const auto t1 = std::chrono::steady_clock::now();

    EstimateRecord& rec = run.record;
    rec.x.push_back(xk);
    rec.y_hat.push_back(model.output(xk));
    rec.peak_hat.push_back(model.peak(xk));
    rec.P_trace.push_back(config.weighting == PriorWeighting::ekf_propagated ? ekf.P.trace()
                                                                            : prior.P.trace());
    rec.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    rec.solver_iterations.push_back(sol.iterations);
    rec.kkt_residual.push_back(sol.kkt_residual);
    rec.fallback.push_back(failed ? 1 : 0);
    std::vector<int> lb(p, 0), ub(p, 0);
    if (config.constraints)
      for (int j = 0; j < p; ++j) {
        const double a = xk[n + j];
        lb[j] = a <= config.alpha_lower[j] + 1e-12 * (1.0 + std::abs(config.alpha_lower[j]));
        ub[j] = a >= config.alpha_upper[j] - 1e-12 * (1.0 + std::abs(config.alpha_upper[j]));
      }
    rec.active_lower.push_back(lb);
    rec.active_upper.push_back(ub);
  }
  return run;
}

}  // namespace retinest
