#include "harness.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "errors.hpp"
#include "json.hpp"

namespace retinest {

namespace fs = std::filesystem;

// -- inputs ----------------------------------------------------------------------

std::vector<double> constant_input(double level, int steps) {
  if (!(level >= 0.0)) throw ValidationError("input power must be nonnegative");
  if (steps < 0) throw ValidationError("input length must be nonnegative");
  return std::vector<double>(steps, level);
}

std::vector<double> staircase_input(const std::vector<double>& levels, int steps_per_level,
                                    int steps) {
  if (levels.empty()) throw ValidationError("staircase needs at least one level");
  if (steps_per_level < 1) throw ValidationError("staircase step duration must cover a sample");
  for (double l : levels)
    if (!(l >= 0.0)) throw ValidationError("input power must be nonnegative");
  std::vector<double> u(std::max(steps, 0));
  for (int k = 0; k < int(u.size()); ++k)
    u[k] = levels[std::min<std::size_t>(k / steps_per_level, levels.size() - 1)];
  return u;
}

std::vector<double> make_input(const InputSpec& spec, double ts, int min_steps) {
  if (!(ts > 0.0)) throw ValidationError("sampling time must be positive");
  if (!(spec.duration >= 0.0)) throw ValidationError("input duration must be nonnegative");
  const int steps = std::max(int(std::lround(spec.duration / ts)), min_steps);
  if (spec.kind == "constant") return constant_input(spec.levels.at(0), steps);
  if (spec.kind == "staircase")
    return staircase_input(spec.levels, int(std::lround(spec.step_duration / ts)), steps);
  throw ValidationError("unknown input kind '" + spec.kind + "'");
}

// -- metrics ---------------------------------------------------------------------

double relative_error(double estimate, double reference) {
  const double diff = std::abs(estimate - reference);
  if (reference == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / std::abs(reference);
}

double relative_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& reference) {
  const double diff = (estimate - reference).norm();
  const double ref = reference.norm();
  if (ref == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / ref;
}

RunErrors compute_errors(const ExtendedModel& model, const EstimateRecord& record,
                         const Reference& ref, int K) {
  const int n = model.state_dim();
  const int p = model.param_dim();
  if (K < 0 || int(record.size()) < K + 1 || int(ref.y.size()) < K + 1)
    throw ValidationError("trace shorter than K + 1 samples");
  if (ref.alpha.size() != p) throw ValidationError("reference alpha has the wrong size");
  const bool with_states = ref.states.cols() >= K + 1;
  RunErrors e;
  e.alpha.assign(p, {});
  for (int k = 0; k <= K; ++k) {
    const Eigen::VectorXd& xbar = record.x[k];
    if (with_states) {
      const Eigen::VectorXd lifted = model.lift(xbar);
      e.x.push_back(lifted.size() == ref.states.rows()
                        ? relative_error(lifted, Eigen::VectorXd(ref.states.col(k)))
                        : std::numeric_limits<double>::quiet_NaN());
    }
    for (int j = 0; j < p; ++j) e.alpha[j].push_back(relative_error(xbar[n + j], ref.alpha[j]));
    e.peak.push_back(relative_error(record.peak_hat[k], ref.peak[k]));
    e.y.push_back(relative_error(record.y_hat[k], ref.y[k]));
  }
  return e;
}

namespace {

MetricSeries reduce(const std::string& name, const std::vector<const std::vector<double>*>& runs) {
  MetricSeries m;
  m.name = name;
  if (runs.empty()) return m;
  const std::size_t len = runs[0]->size();
  m.mean.assign(len, 0.0);
  m.std.assign(len, 0.0);
  const double count = double(runs.size());
  for (std::size_t k = 0; k < len; ++k) {
    double s = 0.0;
    for (const auto* r : runs) s += (*r)[k];
    const double mean = s / count;
    double v = 0.0;
    for (const auto* r : runs) v += ((*r)[k] - mean) * ((*r)[k] - mean);
    m.mean[k] = mean;
    m.std[k] = runs.size() > 1 ? std::sqrt(v / (count - 1.0)) : 0.0;
  }
  for (std::size_t k = 0; k < len; ++k) {
    m.sum += m.mean[k];
    m.sigma_bar += m.std[k];
  }
  m.sigma_bar /= double(len);
  return m;
}

const char* alpha_name(int j) { return j == 0 ? "alpha_rpe" : "alpha_ch"; }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

void finish_timing(EstimatorSummary& s) {
  std::vector<double> all;
  for (const EstimateRecord& r : s.records)
    all.insert(all.end(), r.step_seconds.begin(), r.step_seconds.end());
  s.mean_step_seconds =
      all.empty() ? 0.0 : std::accumulate(all.begin(), all.end(), 0.0) / double(all.size());
  s.median_step_seconds = median(std::move(all));
}

int thread_count(int requested, int jobs) {
  int t = requested > 0 ? requested : int(std::thread::hardware_concurrency());
  return std::max(1, std::min(t, jobs));
}

/// Runs job(i) for i in [0, count) on a small pool; results land in slots
/// owned by the caller so completion order does not matter.
template <class Job>
void parallel_for(int count, int threads, Job job) {
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) job(i);
  };
  const int t = thread_count(threads, count);
  if (t == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < t; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

Alpha full_alpha(const Eigen::VectorXd& a, double alpha_ch_fixed) {
  return Alpha(a[0], a.size() > 1 ? a[1] : alpha_ch_fixed);
}

struct Slot {
  std::vector<RunErrors> errors;
  std::vector<EstimateRecord> records;
  std::vector<std::string> failure;  // empty when the estimator succeeded
};

void collect(ExperimentReport& report, const std::vector<std::string>& names,
             std::vector<Slot>& slots, int p) {
  for (std::size_t e = 0; e < names.size(); ++e) {
    EstimatorSummary s;
    s.estimator = names[e];
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i].failure[e].empty()) {
        ++s.excluded;
        s.failures.push_back("run " + std::to_string(i) + ": " + slots[i].failure[e]);
        continue;
      }
      s.runs.push_back(std::move(slots[i].errors[e]));
      s.records.push_back(std::move(slots[i].records[e]));
      s.run_index.push_back(int(i));
    }
    s.metrics = aggregate(s.runs, p);
    finish_timing(s);
    report.estimators.push_back(std::move(s));
  }
}

}  // namespace

std::vector<MetricSeries> aggregate(const std::vector<RunErrors>& runs, int p) {
  std::vector<MetricSeries> out;
  auto gather = [&](auto member) {
    std::vector<const std::vector<double>*> v;
    for (const RunErrors& r : runs) v.push_back(&member(r));
    return v;
  };
  if (!runs.empty() && !runs[0].x.empty())
    out.push_back(reduce("x", gather([](const RunErrors& r) -> const std::vector<double>& { return r.x; })));
  for (int j = 0; j < p; ++j)
    out.push_back(reduce(alpha_name(j), gather([j](const RunErrors& r) -> const std::vector<double>& {
                           return r.alpha[j];
                         })));
  out.push_back(reduce("peak", gather([](const RunErrors& r) -> const std::vector<double>& { return r.peak; })));
  out.push_back(reduce("y", gather([](const RunErrors& r) -> const std::vector<double>& { return r.y; })));
  return out;
}

const MetricSeries& EstimatorSummary::metric(const std::string& name) const {
  for (const MetricSeries& m : metrics)
    if (m.name == name) return m;
  throw ValidationError("no metric '" + name + "' in report");
}

const EstimatorSummary& ExperimentReport::estimator(const std::string& name) const {
  for (const EstimatorSummary& s : estimators)
    if (s.estimator == name) return s;
  throw ValidationError("no estimator '" + name + "' in report");
}

// -- models ----------------------------------------------------------------------

Context make_context(const Config& config, std::shared_ptr<const FullOrderModel> full,
                     std::shared_ptr<const ReducedModel> rom) {
  if (!rom) throw ValidationError("context needs a reduced model");
  Context ctx;
  ctx.config = config;
  ctx.full = std::move(full);
  ctx.rom = std::move(rom);
  ctx.discrete = std::make_shared<const DiscreteModel>(ctx.rom, config.ts);
  ctx.augmented = std::make_shared<const AugmentedModel>(ctx.discrete, ctx.rom->parameters,
                                                         ctx.rom->alpha_ch_fixed);
  return ctx;
}

EstimateRecord run_estimator(const Context& ctx, const std::string& name, const Stream& stream,
                             const MheConfig* mhe_override) {
  const int n = ctx.augmented->state_dim();
  const int p = ctx.augmented->param_dim();
  if (name == "ekf") return run_ekf(*ctx.augmented, make_ekf_config(ctx.config, n, p), stream).record;
  if (name == "mhe") {
    const MheConfig cfg =
        mhe_override ? *mhe_override : make_mhe_config(ctx.config, n, p, ctx.discrete.get());
    return run_mhe(*ctx.augmented, cfg, stream).record;
  }
  throw ValidationError("unknown estimator '" + name + "'");
}

// -- ensembles -------------------------------------------------------------------

std::vector<std::uint64_t> realization_seeds(std::uint64_t base_seed, int count) {
  std::vector<std::uint64_t> s(std::max(count, 0));
  for (int i = 0; i < count; ++i) s[i] = base_seed + std::uint64_t(i);
  return s;
}

ExperimentReport run_ensemble(const Context& ctx, const EnsembleSpec& spec) {
  const int p = ctx.parameters();
  if (spec.alpha_true.size() != p) throw ValidationError("alpha_true must have p entries");
  if (spec.realizations < 1) throw ValidationError("need at least one realization");
  if (int(spec.input.size()) < spec.K + 1) throw ValidationError("input shorter than K + 1 samples");
  if (spec.truth == Truth::full && !ctx.full) throw ValidationError("full-order truth needs the full model");
  for (const std::string& e : spec.estimators)
    if (e != "ekf" && e != "mhe") throw ValidationError("unknown estimator '" + e + "'");

  const Alpha truth_alpha = full_alpha(spec.alpha_true, ctx.rom->alpha_ch_fixed);
  const SimTrace clean = simulate_truth(ctx.full.get(), ctx.rom.get(), spec.truth, truth_alpha,
                                        spec.input, ctx.config.ts, true);
  Reference ref;
  ref.alpha = spec.alpha_true;
  ref.y = clean.y_clean;
  ref.peak = clean.peak_clean;
  ref.states = clean.states;

  ExperimentReport report;
  report.scenario = std::to_string(p) + "p ensemble";
  report.config_hash = config_hash(ctx.config);
  report.parameters = p;
  report.K = spec.K;
  report.ts = ctx.config.ts;
  report.truth = spec.truth == Truth::full ? "full" : "rom";
  report.alpha_true = spec.alpha_true;
  report.seeds = realization_seeds(spec.base_seed, spec.realizations);

  std::vector<Slot> slots(spec.realizations);
  const std::size_t E = spec.estimators.size();
  parallel_for(spec.realizations, spec.threads, [&](int i) {
    SimTrace noisy;
    noisy.y_clean = clean.y_clean;
    add_noise(noisy, spec.noise, report.seeds[i]);
    Stream stream{ctx.config.ts, spec.input, noisy.y_noisy};
    Slot& slot = slots[i];
    slot.errors.resize(E);
    slot.records.resize(E);
    slot.failure.assign(E, "");
    for (std::size_t e = 0; e < E; ++e) {
      try {
        slot.records[e] = run_estimator(ctx, spec.estimators[e], stream, spec.mhe ? &*spec.mhe : nullptr);
        slot.errors[e] = compute_errors(*ctx.augmented, slot.records[e], ref, spec.K);
      } catch (const std::exception& ex) {
        slot.failure[e] = ex.what();
      }
    }
  });
  collect(report, spec.estimators, slots, p);
  return report;
}

// -- measurements ----------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": '" + s + "' is not a number");
  }
}

std::string sidecar_path(const std::string& csv_path) {
  fs::path p(csv_path);
  return (p.parent_path() / (p.stem().string() + ".spot_meta.csv")).string();
}

}  // namespace

MeasurementTrace ingest_measurement(const std::string& csv_path, double ts) {
  std::ifstream f(csv_path);
  if (!f) throw ValidationError("cannot open " + csv_path);
  std::string line;
  if (!std::getline(f, line)) throw ValidationError(csv_path + ": empty file");
  const std::vector<std::string> header = split(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : int(it - header.begin());
  };
  const int ct = column("t"), cu = column("u");
  int cy = column("T_vol");
  if (cy < 0) cy = column("y_noisy");
  if (ct < 0) throw ValidationError(csv_path + ": missing column 't'");
  if (cu < 0) throw ValidationError(csv_path + ": missing column 'u'");
  if (cy < 0) throw ValidationError(csv_path + ": missing column 'T_vol'");

  MeasurementTrace trace;
  trace.id = fs::path(csv_path).stem().string();
  trace.stream.ts = ts;
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = split(line);
    if (int(cells.size()) != int(header.size()))
      throw ValidationError(csv_path + ": row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " columns, expected " +
                            std::to_string(header.size()));
    const std::string where = csv_path + ": row " + std::to_string(row);
    const double t = parse_number(cells[ct], where);
    const double u = parse_number(cells[cu], where);
    const double y = parse_number(cells[cy], where);
    if (!std::isfinite(t) || !std::isfinite(u) || !std::isfinite(y))
      throw ValidationError(where + ": non-finite value");
    if (u < 0.0) throw ValidationError(where + ": negative power");
    trace.t.push_back(t);
    trace.stream.u.push_back(u);
    trace.stream.y.push_back(y);
  }
  if (trace.t.empty()) throw ValidationError(csv_path + ": no samples");
  for (std::size_t k = 1; k < trace.t.size(); ++k) {
    const double dt = trace.t[k] - trace.t[k - 1];
    if (std::abs(dt - ts) > 1e-6 * ts)
      throw ValidationError(csv_path + ": non-uniform timestamps at row " + std::to_string(k + 2) +
                            " (step " + std::to_string(dt) + " s, expected " + std::to_string(ts) + ")");
  }

  const std::string meta = sidecar_path(csv_path);
  if (fs::exists(meta)) {
    std::ifstream m(meta);
    std::string h, v;
    if (!std::getline(m, h) || !std::getline(m, v)) throw ValidationError(meta + ": needs a header and one row");
    const auto names = split(h);
    const auto values = split(v);
    if (names.empty() || names.size() > 2 || names.size() != values.size() ||
        names[0] != "alpha_ident_rpe" || (names.size() == 2 && names[1] != "alpha_ident_ch"))
      throw ValidationError(meta + ": expected header alpha_ident_rpe[,alpha_ident_ch]");
    Eigen::VectorXd a(names.size());
    for (std::size_t j = 0; j < names.size(); ++j) a[j] = parse_number(values[j], meta);
    trace.alpha_ident = a;
  }
  return trace;
}

std::vector<MeasurementTrace> ingest_measurements(const std::string& path, double ts) {
  if (!fs::exists(path)) throw ValidationError("no such file or directory: " + path);
  if (!fs::is_directory(path)) return {ingest_measurement(path, ts)};
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
        name.find(".spot_meta.") == std::string::npos)
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError(path + ": no CSV traces");
  std::vector<MeasurementTrace> out;
  for (const std::string& f : files) out.push_back(ingest_measurement(f, ts));
  return out;
}

void write_measurement_csv(const std::string& path, const MeasurementTrace& trace) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  std::fprintf(f, "t,u,T_vol\n");
  for (std::size_t k = 0; k < trace.stream.size(); ++k)
    std::fprintf(f, "%.17g,%.17g,%.17g\n", trace.t[k], trace.stream.u[k], trace.stream.y[k]);
  std::fclose(f);
  if (trace.alpha_ident) write_spot_meta(path, *trace.alpha_ident);
}

void write_spot_meta(const std::string& csv_path, const Eigen::VectorXd& a) {
  const std::string meta = sidecar_path(csv_path);
  std::FILE* f = std::fopen(meta.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + meta + " for writing");
  if (a.size() == 2)
    std::fprintf(f, "alpha_ident_rpe,alpha_ident_ch\n%.17g,%.17g\n", a[0], a[1]);
  else
    std::fprintf(f, "alpha_ident_rpe\n%.17g\n", a[0]);
  std::fclose(f);
}

std::vector<MeasurementTrace> synthetic_spots(const Context& ctx, int count,
                                              const Eigen::VectorXd& mean,
                                              const Eigen::VectorXd& std_dev,
                                              const std::vector<double>& input,
                                              double noise_variance, std::uint64_t seed) {
  if (!ctx.full) throw ValidationError("synthetic spots need the full model");
  if (mean.size() != ctx.parameters() || std_dev.size() != mean.size())
    throw ValidationError("spot statistics must have p entries");
  std::mt19937_64 rng(seed);
  std::vector<MeasurementTrace> spots(std::max(count, 0));
  std::vector<std::uint64_t> noise_seeds(spots.size());
  for (std::size_t s = 0; s < spots.size(); ++s) {
    Eigen::VectorXd a(mean.size());
    for (int j = 0; j < mean.size(); ++j) {
      std::normal_distribution<double> normal(mean[j], std_dev[j]);
      do a[j] = normal(rng);
      while (a[j] <= 0.0);
    }
    spots[s].alpha_ident = a;
    noise_seeds[s] = rng();
  }
  parallel_for(int(spots.size()), ctx.config.experiment.threads, [&](int s) {
    SimTrace tr = simulate_plant(ctx.full.get(), nullptr, Truth::full,
                                 full_alpha(*spots[s].alpha_ident, ctx.rom->alpha_ch_fixed), input,
                                 ctx.config.ts, NoiseModel{noise_variance}, noise_seeds[s]);
    char id[32];
    std::snprintf(id, sizeof id, "spot%03d", s);
    spots[s].id = id;
    spots[s].t = tr.t;
    spots[s].stream = Stream{ctx.config.ts, tr.u, tr.y_noisy};
  });
  return spots;
}

// -- identification --------------------------------------------------------------

namespace {

/// Forward simulation with parameter sensitivities.
class OutputFit final : public StagedLeastSquares {
 public:
  OutputFit(const Stream& stream, const FullOrderModel* full, const ReducedModel* rom,
            double alpha_ch_fixed, int p)
      : stream_(stream), full_(full), rom_(rom), alpha_ch_(alpha_ch_fixed), p_(p) {
    const double ts = stream.ts;
    if (rom_) {
      const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(rom_->n(), rom_->n()) - ts * rom_->A;
      rom_lu_.compute(M);
    } else {
      SparseMatrix I(full_->n(), full_->n());
      I.setIdentity();
      const SparseMatrix M = I - ts * full_->A();
      full_lu_.compute(M);
      if (full_lu_.info() != Eigen::Success) throw SolverError("cannot factor the full-order step matrix");
    }
  }

  int stages() const override { return 1; }
  int stage_dim() const override { return p_; }

  double cost(const Eigen::VectorXd& z) const override {
    Eigen::VectorXd r;
    residuals(z, r, nullptr);
    return 0.5 * r.squaredNorm();
  }

  double linearize(const Eigen::VectorXd& z, Eigen::VectorXd& grad,
                   BlockTridiagonal& H) const override {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    residuals(z, r, &J);
    grad = J.transpose() * r;
    H.resize(1, p_);
    H.diag[0] = J.transpose() * J;
    return 0.5 * r.squaredNorm();
  }

 private:
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    return rom_ ? Eigen::VectorXd(rom_lu_.solve(rhs)) : Eigen::VectorXd(full_lu_.solve(rhs));
  }

  void maps(const Alpha& a, Eigen::VectorXd& b, Eigen::MatrixXd& db, Eigen::VectorXd& c,
            Eigen::MatrixXd& dc) const {
    if (rom_) {
      b = rom_->input_map(a);
      db = rom_->input_map_jacobian(a);
      c = rom_->output_map(a);
      dc = rom_->output_map_jacobian(a);
      return;
    }
    const int n = full_->n();
    b = full_->input_map(a);
    c = full_->output_map(a);
    db.resize(n, 2);
    dc.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      db.row(i) = full_->input_entry(i).gradient(full_->profile(), a).transpose();
      dc.row(i) = full_->output_entry(i).gradient(full_->profile(), a).transpose();
    }
  }

  void residuals(const Eigen::VectorXd& z, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const Alpha a = full_alpha(z, alpha_ch_);
    Eigen::VectorXd b, c;
    Eigen::MatrixXd db, dc;
    maps(a, b, db, c, dc);
    const double ts = stream_.ts;
    const int K = int(stream_.size());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(b.size(), p_);
    r.resize(K);
    if (J) J->resize(K, p_);
    for (int k = 0; k < K; ++k) {
      const double u = stream_.u[k];
      x = solve(x + ts * u * b);
      r[k] = c.dot(x) - stream_.y[k];
      if (J) {
        for (int j = 0; j < p_; ++j) {
          S.col(j) = solve(S.col(j) + ts * u * db.col(j));
          (*J)(k, j) = dc.col(j).dot(x) + c.dot(S.col(j));
        }
      }
    }
    if (!r.allFinite()) throw SolverError("non-finite residual in offline identification");
  }

  const Stream& stream_;
  const FullOrderModel* full_;
  const ReducedModel* rom_;
  double alpha_ch_;
  int p_;
  Eigen::PartialPivLU<Eigen::MatrixXd> rom_lu_;
  Eigen::SparseLU<SparseMatrix> full_lu_;
};

}  // namespace

IdentifyResult offline_identify(const Stream& stream, const FullOrderModel* full,
                                const ReducedModel* rom, double alpha_ch_fixed,
                                const ParameterDomain& domain, const IdentifySettings& s) {
  stream.validate();
  if (!full && !rom) throw ValidationError("identification needs a model");
  const int p = s.parameters;
  if (p != 1 && p != 2) throw ValidationError("parameters must be 1 or 2");
  if (rom && p > rom->parameters) throw ValidationError("reduced model has fewer parameters than requested");
  if (stream.size() * stream.ts < 0.15 - 1e-9)
    throw ValidationError("identification needs at least 150 ms of data");
  OutputFit problem(stream, full, rom, alpha_ch_fixed, p);
  problem.lower = s.lower.size() == p ? s.lower : Eigen::VectorXd::Constant(p, 1e-6);
  problem.upper = s.upper.size() == p ? s.upper
                                      : Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  const Eigen::VectorXd z0 = s.initial.size() == p ? s.initial : Eigen::VectorXd(domain.center().head(p));
  const NlsResult nls = solve_box_nls(problem, z0, s.solver);
  if (!nls.z.allFinite()) throw SolverError("offline identification diverged");
  IdentifyResult res;
  res.alpha = nls.z;
  res.cost = nls.cost;
  res.rms_residual = std::sqrt(2.0 * nls.cost / double(stream.size()));
  res.iterations = nls.iterations;
  res.converged = nls.converged;
  res.status = nls.status;
  return res;
}

// -- comparisons -----------------------------------------------------------------

bool is_outlier(const Eigen::VectorXd& a, const ParameterDomain& domain) {
  return !domain.contains(a.head(std::min<int>(a.size(), domain.dimension())));
}

ExperimentReport compare_estimators(const Context& ctx, const std::vector<MeasurementTrace>& spots,
                                    const CompareSpec& spec) {
  const int p = ctx.parameters();
  if (!ctx.full) throw ValidationError("comparisons need the full model for the reference");
  const ParameterDomain domain = ctx.config.domain(p);
  std::vector<const MeasurementTrace*> used;
  for (const MeasurementTrace& s : spots) {
    if (!s.alpha_ident) throw ValidationError("spot " + s.id + " has no alpha_ident");
    if (s.alpha_ident->size() != p)
      throw ValidationError("spot " + s.id + ": alpha_ident must have " + std::to_string(p) + " entries");
    if (int(s.stream.size()) < spec.K + 1)
      throw ValidationError("spot " + s.id + " is shorter than K + 1 samples");
    const bool outlier = is_outlier(*s.alpha_ident, domain);
    if ((spec.exclude_outliers && outlier) || (spec.only_outliers && !outlier)) continue;
    used.push_back(&s);
  }

  ExperimentReport report;
  report.scenario = std::to_string(p) + "p spot comparison" +
                    (spec.exclude_outliers ? " without outliers" : spec.only_outliers ? " outliers only" : "");
  report.config_hash = config_hash(ctx.config);
  report.parameters = p;
  report.K = spec.K;
  report.ts = ctx.config.ts;
  report.truth = "full";
  for (const auto* s : used) report.spot_ids.push_back(s->id);

  std::vector<Slot> slots(used.size());
  const std::size_t E = spec.estimators.size();
  parallel_for(int(used.size()), spec.threads, [&](int i) {
    const MeasurementTrace& s = *used[i];
    Reference ref;
    ref.alpha = *s.alpha_ident;
    SimulateOptions opt;
    opt.keep_states = true;
    FullTrace ft = simulate_full(*ctx.full, full_alpha(ref.alpha, ctx.rom->alpha_ch_fixed), s.stream.u,
                                 s.stream.ts, opt);
    ref.y = std::move(ft.T_vol);
    ref.peak = std::move(ft.T_peak);
    ref.states = std::move(ft.states);
    Slot& slot = slots[i];
    slot.errors.resize(E);
    slot.records.resize(E);
    slot.failure.assign(E, "");
    for (std::size_t e = 0; e < E; ++e) {
      try {
        slot.records[e] = run_estimator(ctx, spec.estimators[e], s.stream);
        slot.errors[e] = compute_errors(*ctx.augmented, slot.records[e], ref, spec.K);
      } catch (const std::exception& ex) {
        slot.failure[e] = ex.what();
      }
    }
  });
  collect(report, spec.estimators, slots, p);
  return report;
}

// -- reports ---------------------------------------------------------------------

std::string report_summary_json(const ExperimentReport& r) {
  using nlohmann::json;
  json j;
  j["scenario"] = r.scenario;
  j["config_hash"] = r.config_hash;
  j["parameters"] = r.parameters;
  j["K"] = r.K;
  j["sampling_time"] = r.ts;
  j["truth"] = r.truth;
  j["alpha_true"] = std::vector<double>(r.alpha_true.data(), r.alpha_true.data() + r.alpha_true.size());
  j["seeds"] = r.seeds;
  j["spots"] = r.spot_ids;
  json est = json::array();
  for (const EstimatorSummary& s : r.estimators) {
    json e;
    e["estimator"] = s.estimator;
    e["runs"] = s.runs.size();
    e["excluded"] = s.excluded;
    e["failures"] = s.failures;
    e["median_step_seconds"] = s.median_step_seconds;
    e["mean_step_seconds"] = s.mean_step_seconds;
    json m = json::object();
    for (const MetricSeries& ms : s.metrics) m[ms.name] = {{"sum", ms.sum}, {"sigma_bar", ms.sigma_bar}};
    e["metrics"] = m;
    est.push_back(e);
  }
  j["estimators"] = est;
  return j.dump(2);
}

void write_report(const std::string& dir, const ExperimentReport& r) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir + ": " + ec.message());
  if (r.estimators.empty()) throw ValidationError("report has no estimators");

  std::vector<std::string> names;
  for (const MetricSeries& m : r.estimators[0].metrics) names.push_back(m.name);
  for (const std::string& name : names) {
    const std::string path = (fs::path(dir) / ("metric_" + name + ".csv")).string();
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ValidationError("cannot open " + path + " for writing");
    std::fprintf(f, "k,t");
    for (const EstimatorSummary& s : r.estimators)
      std::fprintf(f, ",%s_mean,%s_std", s.estimator.c_str(), s.estimator.c_str());
    std::fprintf(f, "\n");
    for (int k = 0; k <= r.K; ++k) {
      std::fprintf(f, "%d,%.9e", k, (k + 1) * r.ts);
      for (const EstimatorSummary& s : r.estimators) {
        const MetricSeries& m = s.metric(name);
        if (k < int(m.mean.size()))
          std::fprintf(f, ",%.9e,%.9e", m.mean[k], m.std[k]);
        else
          std::fprintf(f, ",nan,nan");
      }
      std::fprintf(f, "\n");
    }
    std::fclose(f);
  }

  const std::string agg = (fs::path(dir) / "aggregates.csv").string();
  std::FILE* f = std::fopen(agg.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + agg + " for writing");
  std::fprintf(f, "estimator,metric,sum,sigma_bar\n");
  for (const EstimatorSummary& s : r.estimators)
    for (const MetricSeries& m : s.metrics)
      std::fprintf(f, "%s,%s,%.9e,%.9e\n", s.estimator.c_str(), m.name.c_str(), m.sum, m.sigma_bar);
  std::fclose(f);

  std::ofstream js(fs::path(dir) / "summary.json");
  if (!js) throw ValidationError("cannot write summary.json in " + dir);
  js << report_summary_json(r) << "\n";
}

}  // namespace retinest
