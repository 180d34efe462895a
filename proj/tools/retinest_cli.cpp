// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "retinest/retinest.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  int code;
};

void check(rtn_status s) {
  if (s != RTN_OK) {
    std::fprintf(stderr, "error: %s\n", rtn_last_error());
    throw Failure{int(s)};
  }
}

void usage_error(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  throw Failure{RTN_VALIDATION};
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using ConfigHandle = Handle<rtn_config, rtn_config_free>;
using FullHandle = Handle<rtn_full_model, rtn_full_model_free>;
using RomHandle = Handle<rtn_rom, rtn_rom_free>;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file (defaults when omitted)");
  app->add_option("--seed", c.seed, "Base seed for noise generation");
  app->add_option("--out", c.out, "Output directory");
}

void load_config(const Common& c, ConfigHandle& cfg) {
  if (c.config.empty())
    check(rtn_config_default(cfg.out()));
  else
    check(rtn_config_load(c.config.c_str(), cfg.out()));
}

std::string prepare_out(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) usage_error("cannot create output directory " + c.out + ": " + ec.message());
  return c.out;
}

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void apply_overrides(ConfigHandle& cfg, int params, const std::vector<double>& alpha) {
  if (params) check(rtn_config_set_parameters(cfg.get(), params));
  if (!alpha.empty()) check(rtn_config_set_alpha_true(cfg.get(), alpha.data(), int(alpha.size())));
}

void build_full(const ConfigHandle& cfg, FullHandle& full) {
  check(rtn_full_model_build(cfg.get(), full.out()));
}

/// Loads the archive when given, else reduces the freshly built full model.
void obtain_rom(const std::string& archive, const ConfigHandle& cfg, FullHandle& full, RomHandle& rom,
                int p) {
  if (!archive.empty()) {
    check(rtn_rom_load(archive.c_str(), rom.out()));
    if (rtn_rom_parameters(rom.get()) != p)
      usage_error("ROM archive has " + std::to_string(rtn_rom_parameters(rom.get())) +
                  " parameters, experiment needs " + std::to_string(p));
    return;
  }
  if (!full.get()) build_full(cfg, full);
  check(rtn_rom_reduce(full.get(), cfg.get(), p, rom.out()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinal temperature and absorption estimation"};
  app.require_subcommand(1);

  Common common;
  int params = 0;
  std::vector<double> alpha;
  std::string rom_path, input_path, estimator = "ekf", spots_path, model_kind = "rom", truth = "";
  std::string outliers = "keep";
  int synthetic = 0;
  bool write_meta = false;

  auto* build = app.add_subcommand("build", "Build the full-order model and write a trace");
  add_common(build, common);
  build->add_option("--alpha", alpha, "Truth alpha (alpha_rpe [alpha_ch])")->expected(1, 2);

  auto* reduce = app.add_subcommand("reduce", "Build a reduced model archive and error report");
  add_common(reduce, common);
  reduce->add_option("--params", params, "Estimated parameters (1 or 2)");

  auto* simulate = app.add_subcommand("simulate", "Simulate a noisy measurement trace");
  add_common(simulate, common);
  simulate->add_option("--params", params, "Parameter count recorded in the trace");
  simulate->add_option("--alpha", alpha, "Truth alpha")->expected(1, 2);
  simulate->add_option("--truth", truth, "full or rom (overrides the config)");
  simulate->add_option("--rom", rom_path, "ROM archive (for ROM truth)");

  auto* estimate = app.add_subcommand("estimate", "Run an estimator on one trace");
  add_common(estimate, common);
  estimate->add_option("--estimator", estimator, "ekf or mhe")->check(CLI::IsMember({"ekf", "mhe"}));
  estimate->add_option("--params", params, "Estimated parameters (1 or 2)");
  estimate->add_option("--rom", rom_path, "ROM archive (built from the config when omitted)");
  estimate->add_option("--input", input_path, "Measurement CSV (simulated from the config when omitted)");
  estimate->add_option("--alpha", alpha, "Truth alpha for the simulated trace")->expected(1, 2);

  auto* bench = app.add_subcommand("bench", "Noise ensembles or spot comparisons");
  add_common(bench, common);
  bench->add_option("--params", params, "Estimated parameters (1 or 2)");
  bench->add_option("--alpha", alpha, "Truth alpha")->expected(1, 2);
  bench->add_option("--rom", rom_path, "ROM archive");
  bench->add_option("--spots", spots_path, "Spot CSV file or directory (comparison mode)");
  bench->add_option("--synthetic-spots", synthetic, "Generate this many spots first (comparison mode)");
  bench->add_option("--outliers", outliers, "keep, exclude or only")
      ->check(CLI::IsMember({"keep", "exclude", "only"}));

  auto* identify = app.add_subcommand("identify", "Offline least-squares identification of alpha");
  add_common(identify, common);
  identify->add_option("--params", params, "Identified parameters (1 or 2)");
  identify->add_option("--input", input_path, "Measurement CSV")->required();
  identify->add_option("--model", model_kind, "rom or full")->check(CLI::IsMember({"rom", "full"}));
  identify->add_option("--rom", rom_path, "ROM archive");
  identify->add_flag("--write-meta", write_meta, "Write the spot_meta sidecar next to the input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : RTN_VALIDATION;
  }

  try {
    ConfigHandle cfg;
    load_config(common, cfg);
    apply_overrides(cfg, params, alpha);
    const int p = rtn_config_parameters(cfg.get());
    const std::string out = prepare_out(common);
    FullHandle full;
    RomHandle rom;

    if (build->parsed()) {
      build_full(cfg, full);
      check(rtn_full_model_write_summary(full.get(), cfg.get(), path_in(out, "full_model.json").c_str()));
      check(rtn_full_model_write_trace(full.get(), cfg.get(), path_in(out, "trace.csv").c_str()));
      std::printf("full model: %d unknowns\n", rtn_full_model_size(full.get()));
    } else if (reduce->parsed()) {
      build_full(cfg, full);
      check(rtn_rom_reduce(full.get(), cfg.get(), p, rom.out()));
      const std::string archive = path_in(out, "rom_" + std::to_string(p) + "p.json");
      check(rtn_rom_save(rom.get(), archive.c_str()));
      check(rtn_rom_error_report(full.get(), rom.get(), cfg.get(), path_in(out, "rom_error.csv").c_str()));
      std::printf("reduced model: n = %d, d = %d, written to %s\n", rtn_rom_order(rom.get()),
                  rtn_rom_deim_order(rom.get()), archive.c_str());
    } else if (simulate->parsed()) {
      const bool rom_truth = truth == "rom" || (truth.empty() && !rom_path.empty());
      if (!truth.empty() && truth != "full" && truth != "rom") usage_error("--truth must be full or rom");
      if (rom_truth) {
        obtain_rom(rom_path, cfg, full, rom, p);
      } else {
        build_full(cfg, full);
        if (!rom_path.empty()) check(rtn_rom_load(rom_path.c_str(), rom.out()));
      }
      const std::string csv = path_in(out, "sim_trace.csv");
      check(rtn_simulate(cfg.get(), full.get(), rom.get(), rom_truth ? RTN_TRUTH_ROM : RTN_TRUTH_FULL,
                         common.seed, csv.c_str()));
      std::printf("trace written to %s\n", csv.c_str());
    } else if (estimate->parsed()) {
      obtain_rom(rom_path, cfg, full, rom, p);
      std::string measurement = input_path;
      if (measurement.empty()) {
        if (!full.get()) build_full(cfg, full);
        measurement = path_in(out, "sim_trace.csv");
        check(rtn_simulate(cfg.get(), full.get(), rom.get(), RTN_TRUTH_FULL, common.seed, measurement.c_str()));
      }
      const std::string csv = path_in(out, "estimate_" + estimator + ".csv");
      check(rtn_estimate(cfg.get(), rom.get(), estimator.c_str(), measurement.c_str(), csv.c_str()));
      std::printf("estimate written to %s\n", csv.c_str());
    } else if (bench->parsed()) {
      build_full(cfg, full);
      obtain_rom(rom_path, cfg, full, rom, p);
      if (synthetic > 0 || !spots_path.empty()) {
        if (synthetic > 0) {
          // spot statistics of the case study
          const double mean[2] = {0.7636, 0.0986};
          const double sd[2] = {0.1907, 0.0281};
          spots_path = path_in(out, "spots");
          check(rtn_synthetic_spots(cfg.get(), full.get(), rom.get(), synthetic, mean, sd, common.seed,
                                    spots_path.c_str()));
        }
        const int mode = outliers == "exclude" ? 1 : outliers == "only" ? 2 : 0;
        check(rtn_compare(cfg.get(), full.get(), rom.get(), spots_path.c_str(), mode, out.c_str()));
      } else {
        check(rtn_bench(cfg.get(), full.get(), rom.get(), common.seed, out.c_str()));
      }
      std::printf("report written to %s\n", out.c_str());
    } else if (identify->parsed()) {
      if (model_kind == "rom") {
        obtain_rom(rom_path, cfg, full, rom, p);
      } else {
        build_full(cfg, full);
      }
      double a[2] = {0.0, 0.0};
      const std::string json = path_in(out, "identify.json");
      check(rtn_identify(cfg.get(), model_kind == "full" ? full.get() : nullptr,
                         model_kind == "rom" ? rom.get() : nullptr, p, input_path.c_str(), a, json.c_str()));
      if (write_meta) {
        const fs::path in(input_path);
        const std::string meta = (in.parent_path() / (in.stem().string() + ".spot_meta.csv")).string();
        std::FILE* f = std::fopen(meta.c_str(), "w");
        if (!f) usage_error("cannot write " + meta);
        if (p == 2)
          std::fprintf(f, "alpha_ident_rpe,alpha_ident_ch\n%.17g,%.17g\n", a[0], a[1]);
        else
          std::fprintf(f, "alpha_ident_rpe\n%.17g\n", a[0]);
        std::fclose(f);
      }
      if (p == 2)
        std::printf("alpha_ident = (%.6g, %.6g)\n", a[0], a[1]);
      else
        std::printf("alpha_ident = %.6g\n", a[0]);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
