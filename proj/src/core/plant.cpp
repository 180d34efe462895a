#include "plant.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "errors.hpp"
#include "json.hpp"

namespace retinest {

DiscreteModel::DiscreteModel(std::shared_ptr<const ReducedModel> rom, double ts)
    : rom_(std::move(rom)), ts_(ts) {
  if (!rom_) throw ValidationError("discretize: no reduced model");
  if (!(ts > 0.0)) throw ValidationError("sampling time must be positive");
  const int n = rom_->n();
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - ts * rom_->A;
  factor_.compute(M);
  // cannot be singular for Hurwitz A; checked anyway
  const double rcond = factor_.rcond();
  if (!(rcond > 1e-14)) throw SolverError("discretize: I - t_s A is singular");
  Ad_ = factor_.inverse();
  input_basis_d_ = Ad_ * (ts * rom_->input_basis);
}

Eigen::VectorXd DiscreteModel::input_map(const Alpha& alpha) const {
  return input_basis_d_ * rom_->sampled_input(alpha);
}

Eigen::MatrixXd DiscreteModel::input_map_jacobian(const Alpha& alpha) const {
  return input_basis_d_ * rom_->sampled_input_gradient(alpha);
}

Eigen::VectorXd DiscreteModel::solve_step(const Eigen::VectorXd& x, const Alpha& alpha,
                                          double u) const {
  const Eigen::VectorXd rhs = x + ts_ * u * rom_->input_map(alpha);
  return factor_.solve(rhs);
}

double DiscreteModel::spectral_radius() const {
  Eigen::EigenSolver<Eigen::MatrixXd> es(Ad_, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

AugmentedModel::AugmentedModel(std::shared_ptr<const DiscreteModel> model, int p,
                               double alpha_ch_fixed)
    : model_(std::move(model)), p_(p), alpha_ch_fixed_(alpha_ch_fixed) {
  if (p != 1 && p != 2) throw ValidationError("parameter count must be 1 or 2");
  if (!model_) throw ValidationError("augment: no discrete model");
  if (p > model_->rom().parameters)
    throw ValidationError("augment: ROM was reduced for " + std::to_string(model_->rom().parameters) +
                          " parameter(s), cannot estimate " + std::to_string(p));
}

Alpha AugmentedModel::alpha(const Eigen::VectorXd& xbar) const {
  const int n = state_dim();
  return p_ == 2 ? Alpha(xbar[n], xbar[n + 1]) : Alpha(xbar[n], alpha_ch_fixed_);
}

Eigen::VectorXd AugmentedModel::transition(const Eigen::VectorXd& xbar, double u) const {
  const int n = state_dim();
  Eigen::VectorXd next = xbar;
  next.head(n) = model_->Ad() * xbar.head(n);
  if (u != 0.0) next.head(n) += u * model_->input_map(alpha(xbar));
  return next;
}

Eigen::MatrixXd AugmentedModel::transition_jacobian(const Eigen::VectorXd& xbar,
                                                    double u) const {
  const int n = state_dim();
  Eigen::MatrixXd F = Eigen::MatrixXd::Identity(dim(), dim());
  F.topLeftCorner(n, n) = model_->Ad();
  F.topRightCorner(n, p_) = u * model_->input_map_jacobian(alpha(xbar)).leftCols(p_);
  return F;
}

double AugmentedModel::output(const Eigen::VectorXd& xbar) const {
  return model_->output_map(alpha(xbar)).dot(xbar.head(state_dim()));
}

Eigen::RowVectorXd AugmentedModel::output_jacobian(const Eigen::VectorXd& xbar) const {
  const int n = state_dim();
  const Alpha a = alpha(xbar);
  const ReducedModel& rom = model_->rom();
  Eigen::RowVectorXd G(dim());
  G.head(n) = model_->output_map(a).transpose();
  // c_vol(alpha) x = c~(alpha)^T (output_basis x)
  const Eigen::VectorXd projected = rom.output_basis * xbar.head(n);
  G.tail(p_) = (rom.sampled_output_gradient(a).leftCols(p_).transpose() * projected).transpose();
  return G;
}

double AugmentedModel::peak(const Eigen::VectorXd& xbar) const {
  return model_->peak_row().dot(xbar.head(state_dim()));
}

Eigen::VectorXd AugmentedModel::lift(const Eigen::VectorXd& xbar) const {
  return model_->rom().V * xbar.head(state_dim());
}

LinearModel::LinearModel(Eigen::MatrixXd A, Eigen::VectorXd B, Eigen::RowVectorXd c)
    : A_(std::move(A)), B_(std::move(B)), c_(std::move(c)) {
  if (A_.rows() != A_.cols() || B_.size() != A_.rows() || c_.size() != A_.rows())
    throw ValidationError("linear model dimensions do not agree");
}

Eigen::VectorXd LinearModel::transition(const Eigen::VectorXd& x, double u) const {
  return A_ * x + B_ * u;
}

SimTrace simulate_truth(const FullOrderModel* full, const ReducedModel* rom, Truth truth,
                        const Alpha& alpha, const std::vector<double>& input, double ts,
                        bool keep_states) {
  for (double u : input)
    if (!(u >= 0.0) || !std::isfinite(u)) throw ValidationError("input power must be finite and >= 0");
  SimTrace trace;
  trace.ts = ts;
  trace.u = input;
  trace.alpha_true = alpha;
  for (std::size_t k = 0; k < input.size(); ++k) trace.t.push_back(double(k + 1) * ts);
  if (truth == Truth::full) {
    if (!full) throw ValidationError("full-order truth requested without a full model");
    SimulateOptions opt;
    opt.keep_states = keep_states;
    FullTrace f = simulate_full(*full, alpha, input, ts, opt);
    trace.y_clean = std::move(f.T_vol);
    trace.peak_clean = std::move(f.T_peak);
    trace.states = std::move(f.states);
    trace.truth = "full";
  } else {
    if (!rom) throw ValidationError("reduced truth requested without a reduced model");
    ReducedTrace r = simulate_reduced(*rom, alpha, input, ts);
    trace.y_clean = std::move(r.T_vol);
    trace.peak_clean = std::move(r.T_peak);
    if (keep_states) trace.states = rom->V * r.states;
    trace.truth = "rom";
  }
  trace.y_noisy = trace.y_clean;
  return trace;
}

void add_noise(SimTrace& trace, const NoiseModel& noise, std::uint64_t seed) {
  if (!(noise.variance >= 0.0)) throw ValidationError("noise variance must be >= 0");
  trace.noise_variance = noise.variance;
  trace.seed = seed;
  trace.y_noisy = trace.y_clean;
  if (noise.variance == 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(noise.variance));
  for (double& y : trace.y_noisy) y += normal(rng);
}

SimTrace simulate_plant(const FullOrderModel* full, const ReducedModel* rom, Truth truth,
                        const Alpha& alpha, const std::vector<double>& input, double ts,
                        const NoiseModel& noise, std::uint64_t seed, bool keep_states) {
  SimTrace trace = simulate_truth(full, rom, truth, alpha, input, ts, keep_states);
  add_noise(trace, noise, seed);
  return trace;
}

void write_sim_trace_csv(const std::string& path, const SimTrace& trace,
                         const std::string& config_hash, int rom_order, int deim_order) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  std::fprintf(f, trace.parameters == 2 ? "k,t,u,y_clean,y_noisy,alpha_true_1,alpha_true_2\n"
                                        : "k,t,u,y_clean,y_noisy,alpha_true_1\n");
  for (std::size_t k = 0; k < trace.size(); ++k) {
    std::fprintf(f, "%zu,%.9e,%.9e,%.9e,%.9e,%.9e", k, trace.t[k], trace.u[k], trace.y_clean[k],
                 trace.y_noisy[k], trace.alpha_true[0]);
    if (trace.parameters == 2) std::fprintf(f, ",%.9e", trace.alpha_true[1]);
    std::fprintf(f, "\n");
  }
  std::fclose(f);

  nlohmann::json meta = {{"seed", trace.seed},
                         {"config_hash", config_hash},
                         {"truth", trace.truth},
                         {"noise_variance", trace.noise_variance},
                         {"ts", trace.ts},
                         {"parameters", trace.parameters},
                         {"alpha_true", {trace.alpha_true[0], trace.alpha_true[1]}},
                         {"rom_order", rom_order},
                         {"deim_order", deim_order}};
  std::ofstream m(path + ".meta.json");
  if (!m) throw ValidationError("cannot open " + path + ".meta.json for writing");
  m << meta.dump(2) << "\n";
}

}  // namespace retinest
