#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "errors.hpp"
#include "json.hpp"

namespace retinest {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec(const json& j, const char* key) {
  if (!j.is_array()) throw ValidationError(std::string("config: ") + key + " must be an array");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

const char* absorber_name(Absorber a) {
  switch (a) {
    case Absorber::rpe: return "rpe";
    case Absorber::choroid: return "choroid";
    default: return "none";
  }
}

Absorber absorber_from(const std::string& s) {
  if (s == "rpe") return Absorber::rpe;
  if (s == "choroid") return Absorber::choroid;
  if (s == "none") return Absorber::none;
  throw ValidationError("config: unknown absorber '" + s + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: bad value for '") + key + "'");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(std::string("config: unknown key '") + it.key() + "' in " + section);
  }
}

json to_json(const Config& c) {
  json layers = json::array();
  for (const LayerSpec& l : c.layers)
    layers.push_back({{"name", l.name},
                      {"z_start", l.z_start},
                      {"z_end", l.z_end},
                      {"absorber", absorber_name(l.absorber)},
                      {"cell_weight", l.cell_weight}});
  json j;
  j["layers"] = layers;
  j["grid"] = {{"inner_radius", c.grid.inner_radius},
               {"outer_radius", c.grid.outer_radius},
               {"radial_cells", c.grid.radial_cells},
               {"axial_cells", c.grid.axial_cells},
               {"inner_radial_fraction", c.grid.inner_radial_fraction},
               {"refine", c.grid.refine}};
  j["material"] = {{"density", c.material.density},
                   {"heat_capacity", c.material.heat_capacity},
                   {"conductivity", c.material.conductivity}};
  j["absorption"] = {{"mu0_rpe", c.mu0_rpe}, {"mu0_ch", c.mu0_ch}, {"alpha_ch_fixed", c.alpha_ch_fixed}};
  if (c.output_range)
    j["output_range"] = {c.output_range->z_begin, c.output_range->z_end};
  else
    j["output_range"] = nullptr;
  j["domain"] = {{"lower", vec(c.domain_2p.lower)}, {"upper", vec(c.domain_2p.upper)}};
  j["sampling_time"] = c.ts;
  j["rom"] = {{"order_1p", c.rom.order_1p},
              {"order_2p", c.rom.order_2p},
              {"deim_order", c.rom.deim_order},
              {"basis_samples_per_axis", c.rom.basis_samples_per_axis},
              {"deim_samples_1p", c.rom.deim_samples_1p},
              {"deim_samples_per_axis_2p", c.rom.deim_samples_per_axis_2p},
              {"irka_tol", c.rom.irka_tol},
              {"irka_max_iter", c.rom.irka_max_iter},
              {"svd_tol", c.rom.svd_tol}};
  const EstimatorTuning& t = c.tuning;
  j["estimator"] = {{"q_state", t.q_state},
                    {"q_para_1p", vec(t.q_para_1p)},
                    {"q_para_2p", vec(t.q_para_2p)},
                    {"R", t.R},
                    {"p_state", t.p_state},
                    {"p_para_1p", vec(t.p_para_1p)},
                    {"p_para_2p", vec(t.p_para_2p)}};
  j["estimator"]["alpha0"] = t.alpha0 ? vec(*t.alpha0) : json(nullptr);
  const MheTuning& m = c.mhe;
  j["mhe"] = {{"horizon", m.horizon},
              {"weighting", m.weighting == PriorWeighting::constant ? "constant" : "ekf_propagated"},
              {"update", m.update == PriorUpdate::filtering ? "filtering" : "smoothing"},
              {"output_index", m.output_index == OutputIndex::stage ? "stage" : "current"},
              {"literal_cost", m.literal_cost},
              {"constraints", m.constraints},
              {"riccati_alpha", m.riccati_alpha},
              {"max_iter", m.solver.max_iter},
              {"gradient_tol", m.solver.gradient_tol},
              {"step_tol", m.solver.step_tol}};
  j["noise_variance"] = c.noise_variance;
  j["input"] = {{"kind", c.input.kind},
                {"levels", c.input.levels},
                {"step_duration", c.input.step_duration},
                {"duration", c.input.duration}};
  j["experiment"] = {{"parameters", c.experiment.parameters},
                     {"alpha_true", {c.experiment.alpha_true[0], c.experiment.alpha_true[1]}},
                     {"truth", c.experiment.truth},
                     {"realizations", c.experiment.realizations},
                     {"horizon_steps", c.experiment.horizon_steps},
                     {"estimators", c.experiment.estimators},
                     {"threads", c.experiment.threads}};
  return j;
}

void validate(const Config& c) {
  if (c.layers.empty()) throw ValidationError("config: no layers");
  if (!(c.mu0_rpe > 0.0) || !(c.mu0_ch > 0.0)) throw ValidationError("config: mu0 values must be positive");
  if (!(c.material.density > 0.0) || !(c.material.heat_capacity > 0.0) ||
      !(c.material.conductivity > 0.0))
    throw ValidationError("config: material properties must be positive");
  if (!(c.ts > 0.0)) throw ValidationError("config: sampling_time must be positive");
  if (c.domain_2p.dimension() != 2) throw ValidationError("config: domain needs two entries per bound");
  if ((c.domain_2p.lower.array() >= c.domain_2p.upper.array()).any())
    throw ValidationError("config: domain lower bound must be below the upper bound");
  if ((c.domain_2p.lower.array() <= 0.0).any()) throw ValidationError("config: domain must be positive");
  if (c.experiment.parameters != 1 && c.experiment.parameters != 2)
    throw ValidationError("config: experiment.parameters must be 1 or 2");
  if (c.experiment.realizations < 1) throw ValidationError("config: realizations must be >= 1");
  if (c.experiment.horizon_steps < 0) throw ValidationError("config: horizon_steps must be >= 0");
  if (c.experiment.truth != "full" && c.experiment.truth != "rom")
    throw ValidationError("config: experiment.truth must be 'full' or 'rom'");
  for (const std::string& e : c.experiment.estimators)
    if (e != "ekf" && e != "mhe") throw ValidationError("config: unknown estimator '" + e + "'");
  if (!(c.noise_variance >= 0.0)) throw ValidationError("config: noise_variance must be >= 0");
  if (c.input.kind != "constant" && c.input.kind != "staircase")
    throw ValidationError("config: input.kind must be 'constant' or 'staircase'");
  if (c.input.levels.empty()) throw ValidationError("config: input.levels is empty");
  for (double l : c.input.levels)
    if (!(l >= 0.0)) throw ValidationError("config: input levels must be >= 0");
  if (c.tuning.q_para_1p.size() != 1 || c.tuning.p_para_1p.size() != 1 ||
      c.tuning.q_para_2p.size() != 2 || c.tuning.p_para_2p.size() != 2)
    throw ValidationError("config: q_para/p_para sizes must match p");
  if (c.mhe.horizon < 1) throw ValidationError("config: mhe.horizon must be >= 1");
}

}  // namespace

ParameterDomain Config::domain(int p) const {
  if (p == 2) return domain_2p;
  ParameterDomain d;
  d.lower = domain_2p.lower.head(1);
  d.upper = domain_2p.upper.head(1);
  return d;
}

std::vector<LayerSpec> default_layers() {
  // Retina doubles as top padding and sclera as bottom padding.
  return {{"retina", 0.0, 1.4e-3, Absorber::none, 14.0},
          {"rpe", 1.4e-3, 1.41e-3, Absorber::rpe, 4.0},
          {"bruch", 1.41e-3, 1.415e-3, Absorber::none, 2.0},
          {"choroid", 1.415e-3, 1.665e-3, Absorber::choroid, 20.0},
          {"sclera", 1.665e-3, 3.065e-3, Absorber::none, 20.0}};
}

Config default_config() {
  Config c;
  c.layers = default_layers();
  return c;
}

Config config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  check_keys(j, {"layers", "grid", "material", "absorption", "output_range", "domain",
                 "sampling_time", "rom", "estimator", "mhe", "noise_variance", "input", "experiment"},
             "top level");
  Config c = default_config();
  if (j.contains("layers")) {
    c.layers.clear();
    for (const json& l : j["layers"]) {
      check_keys(l, {"name", "z_start", "z_end", "absorber", "cell_weight"}, "layers");
      LayerSpec s;
      read(l, "name", s.name);
      read(l, "z_start", s.z_start);
      read(l, "z_end", s.z_end);
      std::string a = "none";
      read(l, "absorber", a);
      s.absorber = absorber_from(a);
      read(l, "cell_weight", s.cell_weight);
      c.layers.push_back(s);
    }
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, {"inner_radius", "outer_radius", "radial_cells", "axial_cells",
                   "inner_radial_fraction", "refine"}, "grid");
    read(g, "inner_radius", c.grid.inner_radius);
    read(g, "outer_radius", c.grid.outer_radius);
    read(g, "radial_cells", c.grid.radial_cells);
    read(g, "axial_cells", c.grid.axial_cells);
    read(g, "inner_radial_fraction", c.grid.inner_radial_fraction);
    read(g, "refine", c.grid.refine);
  }
  if (j.contains("material")) {
    const json& m = j["material"];
    check_keys(m, {"density", "heat_capacity", "conductivity"}, "material");
    read(m, "density", c.material.density);
    read(m, "heat_capacity", c.material.heat_capacity);
    read(m, "conductivity", c.material.conductivity);
  }
  if (j.contains("absorption")) {
    const json& a = j["absorption"];
    check_keys(a, {"mu0_rpe", "mu0_ch", "alpha_ch_fixed"}, "absorption");
    read(a, "mu0_rpe", c.mu0_rpe);
    read(a, "mu0_ch", c.mu0_ch);
    read(a, "alpha_ch_fixed", c.alpha_ch_fixed);
  }
  if (j.contains("output_range") && !j["output_range"].is_null()) {
    const auto r = j["output_range"].get<std::vector<double>>();
    if (r.size() != 2) throw ValidationError("config: output_range needs [z_begin, z_end]");
    c.output_range = OutputRange{r[0], r[1]};
  }
  if (j.contains("domain")) {
    const json& d = j["domain"];
    check_keys(d, {"lower", "upper"}, "domain");
    if (d.contains("lower")) c.domain_2p.lower = vec(d["lower"], "domain.lower");
    if (d.contains("upper")) c.domain_2p.upper = vec(d["upper"], "domain.upper");
  }
  read(j, "sampling_time", c.ts);
  if (j.contains("rom")) {
    const json& r = j["rom"];
    check_keys(r, {"order_1p", "order_2p", "deim_order", "basis_samples_per_axis", "deim_samples_1p",
                   "deim_samples_per_axis_2p", "irka_tol", "irka_max_iter", "svd_tol"}, "rom");
    read(r, "order_1p", c.rom.order_1p);
    read(r, "order_2p", c.rom.order_2p);
    read(r, "deim_order", c.rom.deim_order);
    read(r, "basis_samples_per_axis", c.rom.basis_samples_per_axis);
    read(r, "deim_samples_1p", c.rom.deim_samples_1p);
    read(r, "deim_samples_per_axis_2p", c.rom.deim_samples_per_axis_2p);
    read(r, "irka_tol", c.rom.irka_tol);
    read(r, "irka_max_iter", c.rom.irka_max_iter);
    read(r, "svd_tol", c.rom.svd_tol);
  }
  if (j.contains("estimator")) {
    const json& e = j["estimator"];
    check_keys(e, {"q_state", "q_para_1p", "q_para_2p", "R", "p_state", "p_para_1p", "p_para_2p",
                   "alpha0"}, "estimator");
    read(e, "q_state", c.tuning.q_state);
    read(e, "R", c.tuning.R);
    read(e, "p_state", c.tuning.p_state);
    if (e.contains("q_para_1p")) c.tuning.q_para_1p = vec(e["q_para_1p"], "q_para_1p");
    if (e.contains("q_para_2p")) c.tuning.q_para_2p = vec(e["q_para_2p"], "q_para_2p");
    if (e.contains("p_para_1p")) c.tuning.p_para_1p = vec(e["p_para_1p"], "p_para_1p");
    if (e.contains("p_para_2p")) c.tuning.p_para_2p = vec(e["p_para_2p"], "p_para_2p");
    if (e.contains("alpha0") && !e["alpha0"].is_null()) c.tuning.alpha0 = vec(e["alpha0"], "alpha0");
  }
  if (j.contains("mhe")) {
    const json& m = j["mhe"];
    check_keys(m, {"horizon", "weighting", "update", "output_index", "literal_cost", "constraints",
                   "riccati_alpha", "max_iter", "gradient_tol", "step_tol"}, "mhe");
    read(m, "horizon", c.mhe.horizon);
    std::string s;
    if (m.contains("weighting")) {
      read(m, "weighting", s);
      if (s == "constant") c.mhe.weighting = PriorWeighting::constant;
      else if (s == "ekf_propagated") c.mhe.weighting = PriorWeighting::ekf_propagated;
      else throw ValidationError("config: mhe.weighting must be 'constant' or 'ekf_propagated'");
    }
    if (m.contains("update")) {
      read(m, "update", s);
      if (s == "filtering") c.mhe.update = PriorUpdate::filtering;
      else if (s == "smoothing") c.mhe.update = PriorUpdate::smoothing;
      else throw ValidationError("config: mhe.update must be 'filtering' or 'smoothing'");
    }
    if (m.contains("output_index")) {
      read(m, "output_index", s);
      if (s == "stage") c.mhe.output_index = OutputIndex::stage;
      else if (s == "current") c.mhe.output_index = OutputIndex::current;
      else throw ValidationError("config: mhe.output_index must be 'stage' or 'current'");
    }
    read(m, "literal_cost", c.mhe.literal_cost);
    read(m, "constraints", c.mhe.constraints);
    read(m, "riccati_alpha", c.mhe.riccati_alpha);
    read(m, "max_iter", c.mhe.solver.max_iter);
    read(m, "gradient_tol", c.mhe.solver.gradient_tol);
    read(m, "step_tol", c.mhe.solver.step_tol);
  }
  read(j, "noise_variance", c.noise_variance);
  if (j.contains("input")) {
    const json& i = j["input"];
    check_keys(i, {"kind", "levels", "step_duration", "duration"}, "input");
    read(i, "kind", c.input.kind);
    read(i, "levels", c.input.levels);
    read(i, "step_duration", c.input.step_duration);
    read(i, "duration", c.input.duration);
  }
  if (j.contains("experiment")) {
    const json& e = j["experiment"];
    check_keys(e, {"parameters", "alpha_true", "truth", "realizations", "horizon_steps",
                   "estimators", "threads"}, "experiment");
    read(e, "parameters", c.experiment.parameters);
    if (e.contains("alpha_true")) {
      const auto a = e["alpha_true"].get<std::vector<double>>();
      if (a.empty() || a.size() > 2) throw ValidationError("config: alpha_true needs 1 or 2 entries");
      c.experiment.alpha_true = Alpha(a[0], a.size() == 2 ? a[1] : c.alpha_ch_fixed);
    }
    read(e, "truth", c.experiment.truth);
    read(e, "realizations", c.experiment.realizations);
    read(e, "horizon_steps", c.experiment.horizon_steps);
    read(e, "estimators", c.experiment.estimators);
    read(e, "threads", c.experiment.threads);
  }
  validate(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const Config& config) { return to_json(config).dump(2); }

std::string config_hash(const Config& config) {
  const std::string canonical = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EkfConfig make_ekf_config(const Config& config, int n, int p) {
  const EstimatorTuning& t = config.tuning;
  const Eigen::VectorXd alpha0 = t.alpha0 ? *t.alpha0 : config.domain(p).center();
  if (alpha0.size() != p) throw ValidationError("config: estimator.alpha0 must have p entries");
  EkfConfig c;
  const int m = n + p;
  c.Q = Eigen::MatrixXd::Zero(m, m);
  c.Q.diagonal().head(n).setConstant(t.q_state);
  c.Q.diagonal().tail(p) = p == 1 ? t.q_para_1p : t.q_para_2p;
  c.P0 = Eigen::MatrixXd::Zero(m, m);
  c.P0.diagonal().head(n).setConstant(t.p_state);
  c.P0.diagonal().tail(p) = p == 1 ? t.p_para_1p : t.p_para_2p;
  c.R = t.R;
  c.x0 = Eigen::VectorXd::Zero(m);
  c.x0.tail(p) = alpha0;
  return c;
}

MheConfig make_mhe_config(const Config& config, int n, int p, const DiscreteModel* model) {
  MheConfig m;
  m.horizon = config.mhe.horizon;
  m.weights = make_ekf_config(config, n, p);
  m.weighting = config.mhe.weighting;
  m.update = config.mhe.update;
  m.output_index = config.mhe.output_index;
  m.literal_cost = config.mhe.literal_cost;
  m.constraints = config.mhe.constraints;
  m.solver = config.mhe.solver;
  const ParameterDomain d = config.domain(p);
  m.alpha_lower = d.lower;
  m.alpha_upper = d.upper;
  if (m.weighting == PriorWeighting::constant) {
    if (!model) throw ValidationError("constant MHE prior weight needs the discrete model");
    const Alpha abar(config.mhe.riccati_alpha, config.alpha_ch_fixed);
    const RiccatiResult ric = riccati_state_weight(
        *model, abar, m.weights.Q.topLeftCorner(n, n), m.weights.R);
    // the arrival stage carries no output term unless the literal cost is requested
    const Eigen::MatrixXd P_state = m.literal_cost ? ric.prior : ric.posterior;
    m.constant_weight = block_prior_weight(P_state, m.weights.P0.bottomRightCorner(p, p));
  }
  return m;
}

FullOrderModel build_full_model(const Config& config) {
  return build_full_model(config.layers, config.grid, config.material, config.mu0_rpe,
                          config.mu0_ch, config.output_range);
}

}  // namespace retinest
