#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "box_nls.hpp"
#include "mhe.hpp"
#include "pmor.hpp"
#include "thermal_model.hpp"

namespace retinest {

struct EstimatorTuning {
  double q_state = 0.01;
  Eigen::VectorXd q_para_1p = Eigen::VectorXd::Constant(1, 0.01);
  Eigen::VectorXd q_para_2p = (Eigen::VectorXd(2) << 0.005, 0.001).finished();
  double R = 1e3;
  double p_state = 0.01;
  Eigen::VectorXd p_para_1p = Eigen::VectorXd::Constant(1, 50.0);
  Eigen::VectorXd p_para_2p = (Eigen::VectorXd(2) << 50.0, 20.0).finished();
  std::optional<Eigen::VectorXd> alpha0;  // defaults to the domain midpoint
};

struct MheTuning {
  int horizon = 5;
  PriorWeighting weighting = PriorWeighting::ekf_propagated;
  PriorUpdate update = PriorUpdate::filtering;
  OutputIndex output_index = OutputIndex::stage;
  bool literal_cost = false;
  bool constraints = true;
  double riccati_alpha = 0.76;
  NlsSettings solver;
};

struct InputSpec {
  std::string kind = "constant";   // constant | staircase
  std::vector<double> levels = {0.03};  // W
  double step_duration = 0.1;      // s, per staircase level
  double duration = 0.4;           // s
};

struct ExperimentSpec {
  int parameters = 1;
  Alpha alpha_true = Alpha(0.76, 0.0986);
  std::string truth = "full";  // full | rom
  int realizations = 20;
  int horizon_steps = 150;  // K, inclusive
  std::vector<std::string> estimators = {"ekf", "mhe"};
  int threads = 0;
};

struct Config {
  std::vector<LayerSpec> layers;
  GridSpec grid;
  MaterialProps material;
  double mu0_rpe = 1.204e5;
  double mu0_ch = 2.7e4;
  std::optional<OutputRange> output_range;
  double ts = 1e-3;
  double alpha_ch_fixed = 0.0986;
  ParameterDomain domain_2p = ParameterDomain::defaults(2);
  RomSettings rom;
  EstimatorTuning tuning;
  MheTuning mhe;
  double noise_variance = 0.288;
  InputSpec input;
  ExperimentSpec experiment;

  ParameterDomain domain(int p) const;
};

std::vector<LayerSpec> default_layers();
Config default_config();
Config load_config(const std::string& path);
Config config_from_json(const std::string& text);
std::string config_to_json(const Config& config);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Config& config);

/// EKF weights from the tuning block for an n-state, p-parameter model.
EkfConfig make_ekf_config(const Config& config, int n, int p);
/// MHE configuration; the constant prior weight is built from the Riccati
/// solution when `model` is given and constant weighting is selected.
MheConfig make_mhe_config(const Config& config, int n, int p, const DiscreteModel* model);

FullOrderModel build_full_model(const Config& config);

}  // namespace retinest
