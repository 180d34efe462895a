#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "retinest/retinest.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "retinest_test_capi";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string first_line(const fs::path& path) {
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  return line;
}

/// Default configuration on a coarse grid, written through the API itself.
std::string coarse_config_path() {
  const fs::path path = scratch() / "coarse.json";
  if (fs::exists(path)) return path.string();
  rtn_config* c = nullptr;
  REQUIRE(rtn_config_default(&c) == RTN_OK);
  REQUIRE(rtn_config_write(c, path.string().c_str()) == RTN_OK);
  rtn_config_free(c);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  const auto replace = [&](const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
  };
  replace("\"axial_cells\": 60", "\"axial_cells\": 20");
  replace("\"radial_cells\": 30", "\"radial_cells\": 10");
  std::ofstream(path) << text;
  return path.string();
}

}  // namespace

TEST_CASE("configuration handles and validation codes") {
  CHECK(std::strlen(rtn_version()) > 0);
  rtn_config* c = nullptr;
  CHECK(rtn_config_load("/nonexistent/config.json", &c) == RTN_VALIDATION);
  CHECK(c == nullptr);
  CHECK(std::strlen(rtn_last_error()) > 0);

  const fs::path bad = scratch() / "bad.json";
  std::ofstream(bad) << "{\"grid\": {\"radial_cells\": 10, \"colour\": 3}}";
  CHECK(rtn_config_load(bad.string().c_str(), &c) == RTN_VALIDATION);
  CHECK(std::string(rtn_last_error()).find("colour") != std::string::npos);

  CHECK(rtn_config_default(nullptr) == RTN_VALIDATION);
  REQUIRE(rtn_config_default(&c) == RTN_OK);
  char hash[17];
  CHECK(rtn_config_hash(c, hash, 8) == RTN_VALIDATION);
  REQUIRE(rtn_config_hash(c, hash, sizeof hash) == RTN_OK);
  CHECK(std::strlen(hash) == 16);
  CHECK(rtn_config_parameters(c) == 1);
  CHECK(rtn_config_set_parameters(c, 3) == RTN_VALIDATION);
  CHECK(rtn_config_set_parameters(c, 2) == RTN_OK);
  CHECK(rtn_config_parameters(c) == 2);
  char hash2[17];
  REQUIRE(rtn_config_hash(c, hash2, sizeof hash2) == RTN_OK);
  CHECK(std::string(hash) != std::string(hash2));
  const double neg[2] = {-0.1, 0.1};
  CHECK(rtn_config_set_alpha_true(c, neg, 2) == RTN_VALIDATION);
  rtn_config_free(c);
  rtn_config_free(nullptr);

  REQUIRE(rtn_config_load(coarse_config_path().c_str(), &c) == RTN_OK);
  rtn_config_free(c);
}

TEST_CASE("models, archives and experiments through the C interface") {
  rtn_config* cfg = nullptr;
  REQUIRE(rtn_config_load(coarse_config_path().c_str(), &cfg) == RTN_OK);
  rtn_full_model* full = nullptr;
  REQUIRE(rtn_full_model_build(cfg, &full) == RTN_OK);
  CHECK(rtn_full_model_size(full) > 0);

  double y[50], peak[50], u[50];
  for (double& v : u) v = 0.03;
  const double alpha[2] = {0.76, 0.0986};
  REQUIRE(rtn_full_model_simulate(full, alpha, u, 50, 1e-3, y, peak) == RTN_OK);
  CHECK(y[49] > y[0]);
  CHECK(peak[49] > y[49]);
  u[3] = -1.0;
  CHECK(rtn_full_model_simulate(full, alpha, u, 50, 1e-3, y, peak) == RTN_VALIDATION);

  rtn_rom* rom = nullptr;
  REQUIRE(rtn_rom_reduce(full, cfg, 1, &rom) == RTN_OK);
  CHECK(rtn_rom_order(rom) == 6);
  CHECK(rtn_rom_deim_order(rom) == 3);
  const fs::path archive = scratch() / "rom.json";
  REQUIRE(rtn_rom_save(rom, archive.string().c_str()) == RTN_OK);
  rtn_rom* loaded = nullptr;
  REQUIRE(rtn_rom_load(archive.string().c_str(), &loaded) == RTN_OK);
  CHECK(rtn_rom_order(loaded) == rtn_rom_order(rom));
  CHECK(rtn_rom_parameters(loaded) == 1);
  std::ofstream(scratch() / "corrupt.json") << "{\"A\": [1, 2";
  rtn_rom* corrupt = nullptr;
  CHECK(rtn_rom_load((scratch() / "corrupt.json").string().c_str(), &corrupt) == RTN_VALIDATION);
  CHECK(corrupt == nullptr);

  const fs::path trace = scratch() / "sim.csv";
  REQUIRE(rtn_simulate(cfg, full, nullptr, RTN_TRUTH_FULL, 7, trace.string().c_str()) == RTN_OK);
  CHECK(first_line(trace) == "k,t,u,y_clean,y_noisy,alpha_true_1");
  CHECK(rtn_simulate(cfg, nullptr, nullptr, RTN_TRUTH_FULL, 7, trace.string().c_str()) == RTN_VALIDATION);

  const fs::path ekf = scratch() / "ekf.csv", mhe = scratch() / "mhe.csv";
  REQUIRE(rtn_estimate(cfg, loaded, "ekf", trace.string().c_str(), ekf.string().c_str()) == RTN_OK);
  REQUIRE(rtn_estimate(cfg, loaded, "mhe", trace.string().c_str(), mhe.string().c_str()) == RTN_OK);
  CHECK(first_line(ekf) == "k,t,u,y_meas,y_hat,T_peak_hat,alpha_hat_1,P_trace");
  CHECK(first_line(mhe) ==
        "k,t,u,y_meas,y_hat,T_peak_hat,alpha_hat_1,P_trace,solver_iters,active_lb_1,active_ub_1,kkt_residual");
  CHECK(rtn_estimate(cfg, loaded, "ukf", trace.string().c_str(), ekf.string().c_str()) == RTN_VALIDATION);

  double ident[2] = {0.0, 0.0};
  REQUIRE(rtn_identify(cfg, full, nullptr, 1, trace.string().c_str(), ident, nullptr) == RTN_OK);
  CHECK(std::abs(ident[0] - 0.76) / 0.76 < 0.05);

  rtn_rom_free(loaded);
  rtn_rom_free(rom);
  rtn_full_model_free(full);
  rtn_config_free(cfg);
}
