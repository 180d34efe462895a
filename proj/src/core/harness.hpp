#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "ekf.hpp"
#include "mhe.hpp"
#include "plant.hpp"

namespace retinest {

// -- inputs ----------------------------------------------------------------------

std::vector<double> constant_input(double level, int steps);
/// Holds each level for `steps_per_level` samples and repeats the last level
/// until `steps` samples exist.
std::vector<double> staircase_input(const std::vector<double>& levels, int steps_per_level,
                                    int steps);
/// Sampled input of the configured kind; at least `min_steps` samples.
std::vector<double> make_input(const InputSpec& spec, double ts, int min_steps = 0);

// -- metrics ---------------------------------------------------------------------

/// |estimate - reference| / |reference|; 0 when both vanish, inf when only the
/// reference does.
double relative_error(double estimate, double reference);
double relative_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& reference);

/// Reference trajectory the estimates are scored against.
struct Reference {
  Eigen::VectorXd alpha;              // p entries
  std::vector<double> y;              // clean volume temperature
  std::vector<double> peak;
  Eigen::MatrixXd states;             // full-order states, n_f x steps
};

/// Per-step errors for k = 0..K.
struct RunErrors {
  std::vector<double> x;
  std::vector<std::vector<double>> alpha;  // per parameter
  std::vector<double> peak;
  std::vector<double> y;
};

RunErrors compute_errors(const ExtendedModel& model, const EstimateRecord& record,
                         const Reference& reference, int K);

struct MetricSeries {
  std::string name;          // x, alpha_rpe, alpha_ch, peak, y
  std::vector<double> mean;  // e(k) over runs
  std::vector<double> std;   // across-run sample std
  double sum = 0.0;          // sum_k mean(k)
  double sigma_bar = 0.0;    // mean_k std(k)
};

/// Deterministic reduction in run order.
std::vector<MetricSeries> aggregate(const std::vector<RunErrors>& runs, int p);

struct EstimatorSummary {
  std::string estimator;  // ekf | mhe
  std::vector<MetricSeries> metrics;
  std::vector<RunErrors> runs;           // included runs, in run order
  std::vector<EstimateRecord> records;   // same order as runs
  std::vector<int> run_index;            // realization or spot index of each run
  int excluded = 0;
  std::vector<std::string> failures;
  double median_step_seconds = 0.0;
  double mean_step_seconds = 0.0;

  const MetricSeries& metric(const std::string& name) const;
};

struct ExperimentReport {
  std::string scenario;  // free-form descriptor
  std::string config_hash;
  int parameters = 1;
  int K = 150;
  double ts = 1e-3;
  std::string truth;
  Eigen::VectorXd alpha_true;              // ensemble truth, empty for spot sets
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> spot_ids;
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary& estimator(const std::string& name) const;
};

// -- models ----------------------------------------------------------------------

/// Everything an experiment needs, built once and shared read-only.
struct Context {
  Config config;
  std::shared_ptr<const FullOrderModel> full;
  std::shared_ptr<const ReducedModel> rom;
  std::shared_ptr<const DiscreteModel> discrete;
  std::shared_ptr<const AugmentedModel> augmented;

  int parameters() const { return augmented->param_dim(); }
};

Context make_context(const Config& config, std::shared_ptr<const FullOrderModel> full,
                     std::shared_ptr<const ReducedModel> rom);

/// Runs one estimator on a stream. `name` is ekf or mhe.
EstimateRecord run_estimator(const Context& ctx, const std::string& name, const Stream& stream,
                             const MheConfig* mhe_override = nullptr);

// -- ensembles -------------------------------------------------------------------

struct EnsembleSpec {
  Eigen::VectorXd alpha_true;  // p entries
  Truth truth = Truth::full;
  std::vector<double> input;
  int K = 150;
  int realizations = 20;
  std::uint64_t base_seed = 0;
  std::vector<std::string> estimators = {"ekf", "mhe"};
  NoiseModel noise;
  int threads = 0;
  std::optional<MheConfig> mhe;  // overrides the configured MHE
};

/// Realization i uses seed base_seed + i.
std::vector<std::uint64_t> realization_seeds(std::uint64_t base_seed, int count);

ExperimentReport run_ensemble(const Context& ctx, const EnsembleSpec& spec);

// -- measurements ----------------------------------------------------------------

struct MeasurementTrace {
  std::string id;
  std::vector<double> t;
  Stream stream;
  std::optional<Eigen::VectorXd> alpha_ident;
};

/// Reads `t,u,T_vol` (extra columns ignored). A `y_noisy` column stands in
/// for T_vol so simulate output can be fed back. Timestamps must be uniform
/// at `ts`. The sidecar `<stem>.spot_meta.csv`, when present, holds
/// `alpha_ident_rpe[,alpha_ident_ch]`.
MeasurementTrace ingest_measurement(const std::string& csv_path, double ts);
/// A single file or every *.csv in a directory (sidecars skipped), sorted by name.
std::vector<MeasurementTrace> ingest_measurements(const std::string& path, double ts);

void write_measurement_csv(const std::string& path, const MeasurementTrace& trace);
void write_spot_meta(const std::string& csv_path, const Eigen::VectorXd& alpha_ident);

/// Noisy full-order traces with truth drawn per component from N(mean, std);
/// the truth is recorded as alpha_ident.
std::vector<MeasurementTrace> synthetic_spots(const Context& ctx, int count,
                                              const Eigen::VectorXd& mean,
                                              const Eigen::VectorXd& std_dev,
                                              const std::vector<double>& input,
                                              double noise_variance, std::uint64_t seed);

// -- identification --------------------------------------------------------------

struct IdentifyResult {
  Eigen::VectorXd alpha;
  double cost = 0.0;         // 0.5 * sum of squared residuals
  double rms_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
};

struct IdentifySettings {
  int parameters = 1;
  Eigen::VectorXd initial;  // defaults to the domain midpoint
  Eigen::VectorXd lower;    // optional bounds; default (1e-6, inf)
  Eigen::VectorXd upper;
  NlsSettings solver{100, 1e-10, 1e-12};
};

/// Least squares over alpha with the states eliminated by forward simulation
/// of `rom` when given, else of `full`.
IdentifyResult offline_identify(const Stream& stream, const FullOrderModel* full,
                                const ReducedModel* rom, double alpha_ch_fixed,
                                const ParameterDomain& domain, const IdentifySettings& settings);

// -- comparisons -----------------------------------------------------------------

/// alpha_ident outside D.
bool is_outlier(const Eigen::VectorXd& alpha_ident, const ParameterDomain& domain);

struct CompareSpec {
  int K = 400;
  std::vector<std::string> estimators = {"ekf", "mhe"};
  bool exclude_outliers = false;
  bool only_outliers = false;
  int threads = 0;
};

/// EKF and MHE on identical data; errors against the full model at alpha_ident.
ExperimentReport compare_estimators(const Context& ctx, const std::vector<MeasurementTrace>& spots,
                                    const CompareSpec& spec);

// -- reports ---------------------------------------------------------------------

/// One CSV per metric (`metric_<name>.csv`, columns k,t,<est>_mean,<est>_std ...),
/// `aggregates.csv` with the sums and sigma-bars, and `summary.json`.
void write_report(const std::string& dir, const ExperimentReport& report);
std::string report_summary_json(const ExperimentReport& report);

}  // namespace retinest
