#include "ekf.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "errors.hpp"

namespace retinest {

namespace {

bool finite(const Eigen::MatrixXd& M) { return M.allFinite(); }

}  // namespace

void EkfConfig::validate(int dim) const {
  if (Q.rows() != dim || Q.cols() != dim) throw ValidationError("Q has the wrong dimension");
  if (P0.rows() != dim || P0.cols() != dim) throw ValidationError("P0 has the wrong dimension");
  if (x0.size() != dim) throw ValidationError("x0 has the wrong dimension");
  if (!(R > 0.0)) throw ValidationError("R must be positive");
  if ((Q - Q.transpose()).norm() > 1e-12 * (1.0 + Q.norm()))
    throw ValidationError("Q must be symmetric");
  if ((P0 - P0.transpose()).norm() > 1e-12 * (1.0 + P0.norm()))
    throw ValidationError("P0 must be symmetric");
  if (Q.llt().info() != Eigen::Success) throw ValidationError("Q must be positive definite");
  if (P0.llt().info() != Eigen::Success) throw ValidationError("P0 must be positive definite");
}

EkfConfig default_ekf_config(int n, int p, const Eigen::VectorXd& alpha0) {
  if (alpha0.size() != p) throw ValidationError("alpha0 must have p entries");
  EkfConfig c;
  const int m = n + p;
  c.Q = 0.01 * Eigen::MatrixXd::Identity(m, m);
  c.P0 = 0.01 * Eigen::MatrixXd::Identity(m, m);
  if (p == 1) {
    c.P0(n, n) = 50.0;
  } else {
    c.Q(n, n) = 0.005;
    c.Q(n + 1, n + 1) = 0.001;
    c.P0(n, n) = 50.0;
    c.P0(n + 1, n + 1) = 20.0;
  }
  c.R = 1e3;
  c.x0 = Eigen::VectorXd::Zero(m);
  c.x0.tail(p) = alpha0;
  return c;
}

EkfState predict(const ExtendedModel& model, const EkfState& state, double u,
                 const Eigen::MatrixXd& Q) {
  if (!std::isfinite(u)) throw ValidationError("non-finite input");
  const Eigen::MatrixXd F = model.transition_jacobian(state.x, u);
  EkfState next;
  next.x = model.transition(state.x, u);
  next.P = F * state.P * F.transpose() + Q;
  next.P = 0.5 * (next.P + next.P.transpose()).eval();
  if (!next.x.allFinite() || !finite(next.P)) throw SolverError("EKF predict produced non-finite values");
  return next;
}

EkfState correct(const ExtendedModel& model, const EkfState& predicted, double y, double R) {
  const Eigen::RowVectorXd c = model.output_jacobian(predicted.x);
  const Eigen::VectorXd Pc = predicted.P * c.transpose();
  const double s = c.dot(Pc) + R;
  if (!(s > 0.0)) throw SolverError("EKF innovation variance is not positive");
  EkfState out;
  out.gain = Pc / s;
  out.innovation = y - model.output(predicted.x);
  out.x = predicted.x + out.gain * out.innovation;
  out.P = predicted.P - out.gain * (c * predicted.P);
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  if (!out.x.allFinite() || !finite(out.P)) throw SolverError("EKF correct produced non-finite values");
  return out;
}

void Stream::validate() const {
  if (!(ts > 0.0)) throw ValidationError("stream sampling time must be positive");
  if (u.size() != y.size()) throw ValidationError("stream gap: input and measurement lengths differ");
  for (std::size_t k = 0; k < y.size(); ++k)
    if (!std::isfinite(u[k]) || !std::isfinite(y[k])) {
      std::ostringstream os;
      os << "stream gap: non-finite sample at k = " << k;
      throw ValidationError(os.str());
    }
}

EkfRun run_ekf(const ExtendedModel& model, const EkfConfig& config, const Stream& stream,
               bool keep_covariances) {
  config.validate(model.dim());
  stream.validate();
  EkfRun run;
  EkfState state{config.x0, config.P0, 0.0, {}};
  for (std::size_t k = 0; k < stream.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    state = correct(model, predict(model, state, stream.u[k], config.Q), stream.y[k], config.R);
    const auto t1 = std::chrono::steady_clock::now();
    run.record.x.push_back(state.x);
    run.record.y_hat.push_back(model.output(state.x));
    run.record.peak_hat.push_back(model.peak(state.x));
    run.record.P_trace.push_back(state.P.trace());
    run.record.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    if (keep_covariances) run.P.push_back(state.P);
  }
  return run;
}

void write_estimate_csv(const std::string& path, const Stream& stream,
                        const EstimateRecord& record, int state_dim, int param_dim, bool mhe) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  std::fprintf(f, "k,t,u,y_meas,y_hat,T_peak_hat");
  for (int j = 0; j < param_dim; ++j) std::fprintf(f, ",alpha_hat_%d", j + 1);
  std::fprintf(f, ",P_trace");
  if (mhe) {
    std::fprintf(f, ",solver_iters");
    for (int j = 0; j < param_dim; ++j) std::fprintf(f, ",active_lb_%d,active_ub_%d", j + 1, j + 1);
    std::fprintf(f, ",kkt_residual");
  }
  std::fprintf(f, "\n");
  for (std::size_t k = 0; k < record.size(); ++k) {
    std::fprintf(f, "%zu,%.9e,%.9e,%.9e,%.9e,%.9e", k, double(k + 1) * stream.ts, stream.u[k],
                 stream.y[k], record.y_hat[k], record.peak_hat[k]);
    for (int j = 0; j < param_dim; ++j) std::fprintf(f, ",%.9e", record.x[k][state_dim + j]);
    std::fprintf(f, ",%.9e", record.P_trace[k]);
    if (mhe) {
      std::fprintf(f, ",%d", record.solver_iterations[k]);
      for (int j = 0; j < param_dim; ++j)
        std::fprintf(f, ",%d,%d", record.active_lower[k][j], record.active_upper[k][j]);
      std::fprintf(f, ",%.9e", record.kkt_residual[k]);
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

}  // namespace retinest
