#include "retinest/retinest.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "config.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "json.hpp"
#include "pmor.hpp"
#include "thermal_model.hpp"

struct rtn_config {
  retinest::Config value;
};

struct rtn_full_model {
  std::shared_ptr<const retinest::FullOrderModel> value;
};

struct rtn_rom {
  std::shared_ptr<const retinest::ReducedModel> value;
};

namespace {

using namespace retinest;

thread_local std::string last_error;

rtn_status fail(rtn_status status, const std::string& message) {
  last_error = message;
  return status;
}

/// Runs body and maps exceptions to status codes.
template <class Body>
rtn_status guarded(Body body) {
  try {
    body();
    return RTN_OK;
  } catch (const ValidationError& e) {
    return fail(RTN_VALIDATION, e.what());
  } catch (const SolverError& e) {
    return fail(RTN_SOLVER, e.what());
  } catch (const std::bad_alloc&) {
    return fail(RTN_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(RTN_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (!p) throw ValidationError(std::string(what) + " is null");
}

Alpha truth_alpha(const Config& c) { return c.experiment.alpha_true; }

Context context(const rtn_config* config, const rtn_full_model* full, const rtn_rom* rom) {
  require(config, "config");
  require(rom, "rom");
  return make_context(config->value, full ? full->value : nullptr, rom->value);
}

}  // namespace

extern "C" {

const char* rtn_last_error(void) { return last_error.c_str(); }

const char* rtn_version(void) { return "0.1.0"; }

// -- configuration ---------------------------------------------------------------

rtn_status rtn_config_default(rtn_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new rtn_config{default_config()};
  });
}

rtn_status rtn_config_load(const char* path, rtn_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new rtn_config{load_config(path)};
  });
}

void rtn_config_free(rtn_config* config) { delete config; }

rtn_status rtn_config_hash(const rtn_config* config, char* buf, size_t len) {
  return guarded([&] {
    require(config, "config");
    require(buf, "buf");
    const std::string h = config_hash(config->value);
    if (len < h.size() + 1) throw ValidationError("hash buffer too small");
    std::memcpy(buf, h.c_str(), h.size() + 1);
  });
}

rtn_status rtn_config_write(const rtn_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    std::ofstream f(path);
    if (!f) throw ValidationError(std::string("cannot open ") + path + " for writing");
    f << config_to_json(config->value) << "\n";
  });
}

int rtn_config_parameters(const rtn_config* config) {
  return config ? config->value.experiment.parameters : 0;
}

rtn_status rtn_config_set_parameters(rtn_config* config, int p) {
  return guarded([&] {
    require(config, "config");
    if (p != 1 && p != 2) throw ValidationError("parameters must be 1 or 2");
    config->value.experiment.parameters = p;
  });
}

rtn_status rtn_config_set_alpha_true(rtn_config* config, const double* alpha, int p) {
  return guarded([&] {
    require(config, "config");
    require(alpha, "alpha");
    if (p != 1 && p != 2) throw ValidationError("alpha needs 1 or 2 entries");
    for (int j = 0; j < p; ++j)
      if (!(alpha[j] > 0.0)) throw ValidationError("alpha entries must be positive");
    config->value.experiment.alpha_true =
        Alpha(alpha[0], p == 2 ? alpha[1] : config->value.alpha_ch_fixed);
  });
}

// -- full-order model ------------------------------------------------------------

rtn_status rtn_full_model_build(const rtn_config* config, rtn_full_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    auto model = std::make_shared<const FullOrderModel>(build_full_model(config->value));
    *out = new rtn_full_model{std::move(model)};
  });
}

void rtn_full_model_free(rtn_full_model* model) { delete model; }

int rtn_full_model_size(const rtn_full_model* model) { return model ? model->value->n() : 0; }

rtn_status rtn_full_model_simulate(const rtn_full_model* model, const double alpha[2],
                                   const double* u, size_t steps, double dt, double* T_vol,
                                   double* T_peak) {
  return guarded([&] {
    require(model, "model");
    require(alpha, "alpha");
    if (steps > 0) require(u, "u");
    const FullTrace tr = simulate_full(*model->value, Alpha(alpha[0], alpha[1]),
                                       std::vector<double>(u, u + steps), dt);
    for (size_t k = 0; k < steps; ++k) {
      if (T_vol) T_vol[k] = tr.T_vol[k];
      if (T_peak) T_peak[k] = tr.T_peak[k];
    }
  });
}

rtn_status rtn_full_model_write_trace(const rtn_full_model* model, const rtn_config* config,
                                      const char* csv_path) {
  return guarded([&] {
    require(model, "model");
    require(config, "config");
    require(csv_path, "csv_path");
    const Config& c = config->value;
    const std::vector<double> u = make_input(c.input, c.ts);
    const FullTrace tr = simulate_full(*model->value, truth_alpha(c), u, c.ts);
    std::FILE* f = std::fopen(csv_path, "w");
    if (!f) throw ValidationError(std::string("cannot open ") + csv_path + " for writing");
    std::fprintf(f, "t,u,T_vol,T_peak\n");
    for (std::size_t k = 0; k < u.size(); ++k)
      std::fprintf(f, "%.9e,%.9e,%.9e,%.9e\n", tr.t[k], tr.u[k], tr.T_vol[k], tr.T_peak[k]);
    std::fclose(f);
  });
}

rtn_status rtn_full_model_write_summary(const rtn_full_model* model, const rtn_config* config,
                                        const char* json_path) {
  return guarded([&] {
    require(model, "model");
    require(config, "config");
    require(json_path, "json_path");
    const FullOrderModel& m = *model->value;
    const CylinderGeometry& g = m.skeleton().geometry;
    nlohmann::json j;
    j["config_hash"] = config_hash(config->value);
    j["unknowns"] = m.n();
    j["radial_cells"] = g.radial_cells;
    j["axial_cells"] = g.axial_cells;
    j["outer_radius"] = g.outer_radius;
    j["axial_extent"] = g.axial_extent;
    j["peak_node"] = m.peak_node();
    j["output_range"] = {m.output_range().z_begin, m.output_range().z_end};
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : m.skeleton().layers.layers)
      layers.push_back({{"name", l.name}, {"z_start", l.z_start}, {"z_end", l.z_end}, {"cells", l.cells}});
    j["layers"] = layers;
    std::ofstream f(json_path);
    if (!f) throw ValidationError(std::string("cannot open ") + json_path + " for writing");
    f << j.dump(2) << "\n";
  });
}

// -- reduced model ---------------------------------------------------------------

rtn_status rtn_rom_reduce(const rtn_full_model* full, const rtn_config* config, int p,
                          rtn_rom** out) {
  return guarded([&] {
    require(full, "full");
    require(config, "config");
    require(out, "out");
    if (p != 1 && p != 2) throw ValidationError("parameters must be 1 or 2");
    const Config& c = config->value;
    ReducedModel rom =
        build_reduced_model(*full->value, p, c.domain(p), c.alpha_ch_fixed, c.rom);
    rom.config_hash = config_hash(c);
    *out = new rtn_rom{std::make_shared<const ReducedModel>(std::move(rom))};
  });
}

rtn_status rtn_rom_load(const char* path, rtn_rom** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new rtn_rom{std::make_shared<const ReducedModel>(load_reduced_model(path))};
  });
}

rtn_status rtn_rom_save(const rtn_rom* rom, const char* path) {
  return guarded([&] {
    require(rom, "rom");
    require(path, "path");
    save_reduced_model(*rom->value, path);
  });
}

void rtn_rom_free(rtn_rom* rom) { delete rom; }

int rtn_rom_order(const rtn_rom* rom) { return rom ? rom->value->n() : 0; }

int rtn_rom_deim_order(const rtn_rom* rom) { return rom ? rom->value->deim_order() : 0; }

int rtn_rom_parameters(const rtn_rom* rom) { return rom ? rom->value->parameters : 0; }

rtn_status rtn_rom_error_report(const rtn_full_model* full, const rtn_rom* rom,
                                const rtn_config* config, const char* csv_path) {
  return guarded([&] {
    require(full, "full");
    require(rom, "rom");
    require(config, "config");
    require(csv_path, "csv_path");
    const Config& c = config->value;
    const int p = rom->value->parameters;
    const std::vector<Alpha> grid =
        parameter_grid(c.domain(p), p == 1 ? c.rom.deim_samples_1p : c.rom.deim_samples_per_axis_2p,
                       rom->value->alpha_ch_fixed);
    const auto rows = rom_error_sweep(*full->value, *rom->value, grid, make_input(c.input, c.ts), c.ts);
    write_rom_error_csv(csv_path, rows);
  });
}

// -- experiments -----------------------------------------------------------------

rtn_status rtn_simulate(const rtn_config* config, const rtn_full_model* full, const rtn_rom* rom,
                        rtn_truth truth, uint64_t seed, const char* csv_path) {
  return guarded([&] {
    require(config, "config");
    require(csv_path, "csv_path");
    const Config& c = config->value;
    const Truth t = truth == RTN_TRUTH_ROM ? Truth::rom : Truth::full;
    if (t == Truth::full) require(full, "full");
    if (t == Truth::rom) require(rom, "rom");
    SimTrace tr = simulate_plant(full ? full->value.get() : nullptr, rom ? rom->value.get() : nullptr, t,
                                 truth_alpha(c), make_input(c.input, c.ts), c.ts,
                                 NoiseModel{c.noise_variance}, seed);
    tr.parameters = c.experiment.parameters;
    write_sim_trace_csv(csv_path, tr, config_hash(c), rom ? rom->value->n() : 0,
                        rom ? rom->value->deim_order() : 0);
  });
}

rtn_status rtn_estimate(const rtn_config* config, const rtn_rom* rom, const char* estimator,
                        const char* measurement_csv, const char* out_csv) {
  return guarded([&] {
    require(estimator, "estimator");
    require(measurement_csv, "measurement_csv");
    require(out_csv, "out_csv");
    const std::string name = estimator;
    if (name != "ekf" && name != "mhe") throw ValidationError("estimator must be 'ekf' or 'mhe'");
    const Context ctx = context(config, nullptr, rom);
    const MeasurementTrace m = ingest_measurement(measurement_csv, ctx.config.ts);
    const EstimateRecord rec = run_estimator(ctx, name, m.stream);
    write_estimate_csv(out_csv, m.stream, rec, ctx.augmented->state_dim(), ctx.augmented->param_dim(),
                       name == "mhe");
  });
}

rtn_status rtn_bench(const rtn_config* config, const rtn_full_model* full, const rtn_rom* rom,
                     uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const Context ctx = context(config, full, rom);
    const Config& c = ctx.config;
    const int p = ctx.parameters();
    EnsembleSpec spec;
    spec.alpha_true = c.experiment.alpha_true.head(p);
    spec.truth = c.experiment.truth == "rom" ? Truth::rom : Truth::full;
    spec.K = c.experiment.horizon_steps;
    spec.input = make_input(c.input, c.ts, spec.K + 1);
    spec.realizations = c.experiment.realizations;
    spec.base_seed = seed;
    spec.estimators = c.experiment.estimators;
    spec.noise.variance = c.noise_variance;
    spec.threads = c.experiment.threads;
    write_report(out_dir, run_ensemble(ctx, spec));
  });
}

rtn_status rtn_compare(const rtn_config* config, const rtn_full_model* full, const rtn_rom* rom,
                       const char* spots_path, int outliers, const char* out_dir) {
  return guarded([&] {
    require(spots_path, "spots_path");
    require(out_dir, "out_dir");
    require(full, "full");
    if (outliers < 0 || outliers > 2) throw ValidationError("outliers must be 0, 1 or 2");
    const Context ctx = context(config, full, rom);
    CompareSpec spec;
    spec.K = ctx.config.experiment.horizon_steps;
    spec.estimators = ctx.config.experiment.estimators;
    spec.exclude_outliers = outliers == 1;
    spec.only_outliers = outliers == 2;
    spec.threads = ctx.config.experiment.threads;
    const auto spots = ingest_measurements(spots_path, ctx.config.ts);
    write_report(out_dir, compare_estimators(ctx, spots, spec));
  });
}

rtn_status rtn_synthetic_spots(const rtn_config* config, const rtn_full_model* full,
                               const rtn_rom* rom, int count, const double* mean,
                               const double* std_dev, uint64_t seed, const char* dir) {
  return guarded([&] {
    require(full, "full");
    require(mean, "mean");
    require(std_dev, "std_dev");
    require(dir, "dir");
    if (count < 1) throw ValidationError("count must be >= 1");
    const Context ctx = context(config, full, rom);
    const int p = ctx.parameters();
    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(mean, p);
    const Eigen::VectorXd sd = Eigen::Map<const Eigen::VectorXd>(std_dev, p);
    if ((sd.array() < 0.0).any()) throw ValidationError("std_dev must be nonnegative");
    const int steps = std::max(ctx.config.experiment.horizon_steps + 1,
                               int(make_input(ctx.config.input, ctx.config.ts).size()));
    const auto spots = synthetic_spots(ctx, count, mu, sd, make_input(ctx.config.input, ctx.config.ts, steps),
                                       ctx.config.noise_variance, seed);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError(std::string("cannot create ") + dir + ": " + ec.message());
    for (const MeasurementTrace& s : spots)
      write_measurement_csv((std::filesystem::path(dir) / (s.id + ".csv")).string(), s);
  });
}

rtn_status rtn_identify(const rtn_config* config, const rtn_full_model* full, const rtn_rom* rom,
                        int p, const char* measurement_csv, double* alpha_out,
                        const char* json_path) {
  return guarded([&] {
    require(config, "config");
    require(measurement_csv, "measurement_csv");
    require(alpha_out, "alpha_out");
    if (!full && !rom) throw ValidationError("identification needs a full or reduced model");
    if (p != 1 && p != 2) throw ValidationError("parameters must be 1 or 2");
    const Config& c = config->value;
    const MeasurementTrace m = ingest_measurement(measurement_csv, c.ts);
    IdentifySettings s;
    s.parameters = p;
    const IdentifyResult r = offline_identify(m.stream, full ? full->value.get() : nullptr,
                                              rom ? rom->value.get() : nullptr, c.alpha_ch_fixed,
                                              c.domain(p), s);
    for (int j = 0; j < p; ++j) alpha_out[j] = r.alpha[j];
    if (json_path) {
      nlohmann::json j;
      j["trace"] = m.id;
      j["model"] = rom ? "rom" : "full";
      j["parameters"] = p;
      j["alpha_ident"] = std::vector<double>(r.alpha.data(), r.alpha.data() + p);
      j["outlier"] = is_outlier(r.alpha, c.domain(p));
      j["cost"] = r.cost;
      j["rms_residual"] = r.rms_residual;
      j["iterations"] = r.iterations;
      j["converged"] = r.converged;
      j["status"] = r.status;
      j["config_hash"] = config_hash(c);
      std::ofstream f(json_path);
      if (!f) throw ValidationError(std::string("cannot open ") + json_path + " for writing");
      f << j.dump(2) << "\n";
    }
  });
}

}  // extern "C"
