#include "thermal_model.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "errors.hpp"

namespace retinest {

namespace {

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void reject(const std::string& what) { throw ValidationError(what); }

/// Cell sizes of a graded segment of length `length` split into `cells`,
/// starting at `first` on the fine side and growing geometrically. Falls back
/// to uniform cells when `first` is already coarse enough.
std::vector<double> graded_cells(double length, int cells, double first) {
  std::vector<double> h(cells, length / cells);
  if (cells == 1 || first * cells >= length) return h;
  auto total = [&](double q) { return first * (std::pow(q, cells) - 1.0) / (q - 1.0); };
  double lo = 1.0 + 1e-12, hi = 2.0;
  while (total(hi) < length) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) < length ? lo : hi) = mid;
  }
  const double q = 0.5 * (lo + hi);
  double acc = 0.0;
  for (int i = 0; i < cells; ++i) {
    h[i] = first * std::pow(q, i);
    acc += h[i];
  }
  // absorb the bisection residual so the segment ends exactly on its interface
  h[cells - 1] += length - acc;
  return h;
}

void append_nodes(std::vector<double>& nodes, double start, const std::vector<double>& cells,
                  double end) {
  double z = start;
  for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
    z += cells[c];
    nodes.push_back(z);
  }
  nodes.push_back(end);
}

struct ControlVolume {
  double r_minus, r_plus, z_minus, z_plus;
  double area() const { return kPi * (r_plus * r_plus - r_minus * r_minus); }
  double height() const { return z_plus - z_minus; }
};

ControlVolume control_volume(const CylinderGeometry& g, int i, int j) {
  ControlVolume cv;
  cv.r_minus = i == 0 ? 0.0 : 0.5 * (g.r_nodes[i - 1] + g.r_nodes[i]);
  cv.r_plus = 0.5 * (g.r_nodes[i] + g.r_nodes[i + 1]);
  cv.z_minus = 0.5 * (g.z_nodes[j - 1] + g.z_nodes[j]);
  cv.z_plus = 0.5 * (g.z_nodes[j] + g.z_nodes[j + 1]);
  return cv;
}

/// Area of the annulus [r_minus, r_plus] lying inside the irradiated disk.
double irradiated_area(const ControlVolume& cv, double inner_radius) {
  if (cv.r_minus >= inner_radius) return 0.0;
  const double r = std::min(cv.r_plus, inner_radius);
  return kPi * (r * r - cv.r_minus * cv.r_minus);
}

}  // namespace

double LayerStack::absorbing_begin() const {
  return std::min(rpe().z_start, choroid().z_start);
}
double LayerStack::absorbing_end() const { return std::max(rpe().z_end, choroid().z_end); }

int CylinderGeometry::axial_node_at(double z) const {
  const double tol = 1e-9 * axial_extent;
  for (std::size_t j = 0; j < z_nodes.size(); ++j)
    if (std::abs(z_nodes[j] - z) <= tol) return int(j);
  return -1;
}

bool ParameterDomain::contains(const Eigen::VectorXd& alpha) const {
  return alpha.size() == lower.size() && (alpha.array() >= lower.array()).all() &&
         (alpha.array() <= upper.array()).all();
}

ParameterDomain ParameterDomain::defaults(int p) {
  ParameterDomain d;
  if (p == 1) {
    d.lower = Eigen::VectorXd::Constant(1, 0.3822);
    d.upper = Eigen::VectorXd::Constant(1, 1.1451);
  } else if (p == 2) {
    d.lower = Eigen::Vector2d(0.3822, 0.0424);
    d.upper = Eigen::Vector2d(1.1451, 0.1548);
  } else {
    reject("parameter count must be 1 or 2");
  }
  return d;
}

std::pair<LayerStack, CylinderGeometry> build_geometry(
    const std::vector<LayerSpec>& layer_spec, const GridSpec& grid) {
  if (layer_spec.size() < 2) reject("layer stack needs at least two layers");
  if (grid.radial_cells < 3 || grid.axial_cells < 3)
    reject("grid cell counts must be >= 3");
  if (grid.refine < 1) reject("grid refinement factor must be >= 1");
  if (!(grid.inner_radius > 0.0) || !(grid.inner_radius < grid.outer_radius))
    reject("radii must satisfy 0 < R_I < R_O");
  if (!(grid.inner_radial_fraction > 0.0 && grid.inner_radial_fraction < 1.0))
    reject("inner_radial_fraction must lie in (0, 1)");

  LayerStack stack;
  int rpe_count = 0, choroid_count = 0;
  double weight_sum = 0.0;
  for (std::size_t l = 0; l < layer_spec.size(); ++l) {
    const LayerSpec& s = layer_spec[l];
    if (!(s.z_end > s.z_start)) {
      std::ostringstream os;
      os << "layer '" << s.name << "' has an empty or inverted depth interval [" << s.z_start
         << ", " << s.z_end << "]";
      reject(os.str());
    }
    const double expected_start = l == 0 ? 0.0 : layer_spec[l - 1].z_end;
    if (std::abs(s.z_start - expected_start) > 1e-12 * std::max(1e-6, std::abs(s.z_end))) {
      std::ostringstream os;
      os << "layer '" << s.name << "' starts at " << s.z_start << " but the previous interface is at "
         << expected_start << " (layers must be contiguous from z = 0)";
      reject(os.str());
    }
    if (!(s.cell_weight > 0.0)) reject("layer '" + s.name + "' needs a positive cell_weight");
    weight_sum += s.cell_weight;
    if (s.absorber == Absorber::rpe) {
      ++rpe_count;
      stack.rpe_index = l;
    } else if (s.absorber == Absorber::choroid) {
      ++choroid_count;
      stack.choroid_index = l;
    }
    stack.layers.push_back({s.name, s.z_start, s.z_end, s.absorber, 0});
  }
  if (rpe_count != 1 || choroid_count != 1)
    reject("exactly one RPE and one choroid absorbing layer are required");

  const int n_r = grid.radial_cells * grid.refine;
  const int n_z = grid.axial_cells * grid.refine;
  const std::size_t n_layers = stack.layers.size();
  if (n_z < int(n_layers) + 1) {
    std::ostringstream os;
    os << "axial_cells = " << n_z << " cannot resolve " << n_layers
       << " layer interfaces (each layer needs a cell, the RPE two)";
    reject(os.str());
  }

  // Distribute axial cells by weight; the RPE gets an even count so its
  // center is a grid plane.
  int assigned = 0;
  std::size_t largest = n_layers;
  for (std::size_t l = 0; l < n_layers; ++l) {
    int c = std::max(1, int(std::lround(n_z * layer_spec[l].cell_weight / weight_sum)));
    if (l == stack.rpe_index) c = std::max(2, c + (c % 2));
    stack.layers[l].cells = c;
    assigned += c;
    if (l != stack.rpe_index &&
        (largest == n_layers || layer_spec[l].cell_weight > layer_spec[largest].cell_weight))
      largest = l;
  }
  stack.layers[largest].cells += n_z - assigned;
  if (stack.layers[largest].cells < 1)
    reject("axial_cells too small to place every layer interface on a grid plane");

  CylinderGeometry g;
  g.inner_radius = grid.inner_radius;
  g.outer_radius = grid.outer_radius;
  g.axial_extent = stack.total_depth();
  g.radial_cells = n_r;
  g.axial_cells = n_z;

  // Axial nodes: interior layers uniform, outermost non-absorbing layers graded
  // away from their absorbing neighbor.
  auto uniform_spacing = [&](std::size_t l) {
    return stack.layers[l].thickness() / stack.layers[l].cells;
  };
  g.z_nodes.push_back(0.0);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = stack.layers[l];
    std::vector<double> cells(layer.cells, uniform_spacing(l));
    const bool padding = layer.absorber == Absorber::none && (l == 0 || l + 1 == n_layers);
    if (padding && n_layers > 1) {
      const std::size_t neighbor = l == 0 ? 1 : l - 1;
      cells = graded_cells(layer.thickness(), layer.cells, uniform_spacing(neighbor));
      if (l == 0) std::reverse(cells.begin(), cells.end());
    }
    append_nodes(g.z_nodes, layer.z_start, cells, layer.z_end);
  }

  const int inner = std::clamp(int(std::lround(n_r * grid.inner_radial_fraction)), 1, n_r - 1);
  const double h_inner = grid.inner_radius / inner;
  g.inner_radial_index = inner;
  g.r_nodes.push_back(0.0);
  append_nodes(g.r_nodes, 0.0, std::vector<double>(inner, h_inner), grid.inner_radius);
  append_nodes(g.r_nodes, grid.inner_radius,
               graded_cells(grid.outer_radius - grid.inner_radius, n_r - inner, h_inner),
               grid.outer_radius);

  return {std::move(stack), std::move(g)};
}

OperatorSkeleton assemble_operator(const LayerStack& layers, const CylinderGeometry& g,
                                   const MaterialProps& material) {
  if (!(material.density > 0.0 && material.heat_capacity > 0.0 && material.conductivity > 0.0))
    reject("material properties must be strictly positive");

  const int n = g.unknowns();
  const double k = material.conductivity;
  OperatorSkeleton sk;
  sk.layers = layers;
  sk.geometry = g;
  sk.material = material;
  sk.volume.resize(n);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(std::size_t(5) * n);
  const int n_r = g.radial_cells;
  const int n_z = g.axial_cells;
  for (int j = 1; j < n_z; ++j) {
    for (int i = 0; i < n_r; ++i) {
      const int p = g.node(i, j);
      const ControlVolume cv = control_volume(g, i, j);
      sk.volume[p] = cv.area() * cv.height();
      double diagonal = 0.0;
      auto couple = [&](bool unknown, int q, double conductance) {
        diagonal -= conductance;
        if (unknown) triplets.emplace_back(p, q, conductance);
      };
      // radial neighbors; the axis has no inward face (symmetry)
      couple(i + 1 < n_r, i + 1 < n_r ? g.node(i + 1, j) : -1,
             k * 2.0 * kPi * cv.r_plus * cv.height() / (g.r_nodes[i + 1] - g.r_nodes[i]));
      if (i > 0)
        couple(true, g.node(i - 1, j),
               k * 2.0 * kPi * cv.r_minus * cv.height() / (g.r_nodes[i] - g.r_nodes[i - 1]));
      // axial neighbors; j = 0 and j = n_z are Dirichlet planes
      couple(j + 1 < n_z, j + 1 < n_z ? g.node(i, j + 1) : -1,
             k * cv.area() / (g.z_nodes[j + 1] - g.z_nodes[j]));
      couple(j - 1 > 0, j - 1 > 0 ? g.node(i, j - 1) : -1,
             k * cv.area() / (g.z_nodes[j] - g.z_nodes[j - 1]));
      triplets.emplace_back(p, p, diagonal);
    }
  }
  sk.stiffness.resize(n, n);
  sk.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  sk.capacity = material.volumetric_heat_capacity() * sk.volume;
  sk.A = sk.capacity.cwiseInverse().asDiagonal() * sk.stiffness;
  sk.A.makeCompressed();
  return sk;
}

AbsorptionProfile make_profile(const LayerStack& layers, double mu0_rpe, double mu0_choroid) {
  if (!(mu0_rpe > 0.0 && mu0_choroid > 0.0)) reject("baseline absorption must be positive");
  return AbsorptionProfile({layers.rpe().z_start, layers.rpe().z_end, mu0_rpe},
                           {layers.choroid().z_start, layers.choroid().z_end, mu0_choroid});
}

SourceAssembly assemble_source(const OperatorSkeleton& sk, const AbsorptionProfile& profile,
                               const Alpha& alpha, double u) {
  if (!(alpha.array() > 0.0).all() || !alpha.allFinite())
    reject("absorption prefactors must lie in (0, inf)");
  if (!(u >= 0.0)) reject("laser power must be nonnegative");
  const CylinderGeometry& g = sk.geometry;
  const double disk = kPi * g.inner_radius * g.inner_radius;
  SourceAssembly out;
  out.entries.resize(sk.n());
  out.input_map.setZero(sk.n());
  for (int j = 1; j < g.axial_cells; ++j) {
    for (int i = 0; i < g.radial_cells; ++i) {
      const int p = g.node(i, j);
      const ControlVolume cv = control_volume(g, i, j);
      const double lit = irradiated_area(cv, g.inner_radius);
      if (lit == 0.0) continue;
      SampledEntry& e = out.entries[p];
      e.scale = lit / disk / sk.capacity[p];
      e.z_lo = cv.z_minus;
      e.z_hi = cv.z_plus;
      out.input_map[p] = e.value(profile, alpha);
    }
  }
  out.heating = u * out.input_map;
  return out;
}

OutputAssembly assemble_outputs(const OperatorSkeleton& sk, const AbsorptionProfile& profile,
                                const Alpha& alpha, const OutputRange& range) {
  const CylinderGeometry& g = sk.geometry;
  const double disk = kPi * g.inner_radius * g.inner_radius;
  OutputAssembly out;
  out.entries.resize(sk.n());
  out.volume_row.setZero(sk.n());
  for (int j = 1; j < g.axial_cells; ++j) {
    for (int i = 0; i < g.radial_cells; ++i) {
      const int p = g.node(i, j);
      const ControlVolume cv = control_volume(g, i, j);
      const double lit = irradiated_area(cv, g.inner_radius);
      const double lo = std::max(cv.z_minus, range.z_begin);
      const double hi = std::min(cv.z_plus, range.z_end);
      if (lit == 0.0 || hi <= lo) continue;
      SampledEntry& e = out.entries[p];
      e.scale = lit / disk;
      e.z_lo = lo;
      e.z_hi = hi;
      out.volume_row[p] = e.value(profile, alpha);
    }
  }
  const int j_peak = g.axial_node_at(sk.layers.rpe_center());
  if (j_peak <= 0 || j_peak >= g.axial_cells)
    reject("RPE center is not an interior grid plane");
  out.peak_node = g.node(0, j_peak);
  out.peak_row.setZero(sk.n());
  out.peak_row[out.peak_node] = 1.0;
  return out;
}

FullOrderModel::FullOrderModel(OperatorSkeleton skeleton, AbsorptionProfile profile,
                               std::vector<SampledEntry> input_entries,
                               std::vector<SampledEntry> output_entries, int peak_node,
                               OutputRange range)
    : skeleton_(std::move(skeleton)),
      profile_(profile),
      input_entries_(std::move(input_entries)),
      output_entries_(std::move(output_entries)),
      peak_node_(peak_node),
      range_(range) {}

Eigen::VectorXd FullOrderModel::input_map(const Alpha& alpha) const {
  Eigen::VectorXd b(n());
  for (int p = 0; p < n(); ++p) b[p] = input_entries_[p].value(profile_, alpha);
  return b;
}

Eigen::VectorXd FullOrderModel::output_map(const Alpha& alpha) const {
  Eigen::VectorXd c(n());
  for (int p = 0; p < n(); ++p) c[p] = output_entries_[p].value(profile_, alpha);
  return c;
}

Eigen::VectorXd FullOrderModel::peak_map() const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n());
  c[peak_node_] = 1.0;
  return c;
}

FullOrderModel build_full_model(const std::vector<LayerSpec>& layer_spec, const GridSpec& grid,
                                const MaterialProps& material, double mu0_rpe,
                                double mu0_choroid, std::optional<OutputRange> range) {
  auto [layers, geometry] = build_geometry(layer_spec, grid);
  OperatorSkeleton sk = assemble_operator(layers, geometry, material);
  AbsorptionProfile profile = make_profile(sk.layers, mu0_rpe, mu0_choroid);
  const OutputRange r =
      range.value_or(OutputRange{sk.layers.absorbing_begin(), sk.layers.absorbing_end()});
  if (!(r.z_end > r.z_begin)) reject("output integration range must satisfy z_b < z_e");
  const Alpha unit(1.0, 1.0);
  SourceAssembly source = assemble_source(sk, profile, unit, 1.0);
  OutputAssembly outputs = assemble_outputs(sk, profile, unit, r);
  return FullOrderModel(std::move(sk), profile, std::move(source.entries),
                        std::move(outputs.entries), outputs.peak_node, r);
}

FullTrace simulate_full(const FullOrderModel& model, const Alpha& alpha,
                        const std::vector<double>& input, double dt,
                        const SimulateOptions& options) {
  if (!(dt > 0.0)) reject("time step must be positive");
  for (double u : input)
    if (!(u >= 0.0) || !std::isfinite(u)) reject("input power must be finite and >= 0");
  const int n = model.n();
  SparseMatrix system(n, n);
  system.setIdentity();
  system -= dt * model.A();
  Eigen::SparseLU<SparseMatrix> lu;
  lu.compute(system);
  if (lu.info() != Eigen::Success) throw SolverError("factorization of (I - dt A) failed");

  const Eigen::VectorXd b = model.input_map(alpha);
  const Eigen::VectorXd c_vol = model.output_map(alpha);
  const int peak = model.peak_node();
  const std::size_t steps = input.size();

  FullTrace trace;
  trace.t.reserve(steps);
  trace.u = input;
  trace.T_vol.reserve(steps);
  trace.T_peak.reserve(steps);
  if (options.keep_states) trace.states.resize(n, Eigen::Index(steps));

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < steps; ++k) {
    const Eigen::VectorXd rhs = x + dt * input[k] * b;
    x = lu.solve(rhs);
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "non-finite temperature at step " << k;
      throw SolverError(os.str());
    }
    trace.t.push_back(double(k + 1) * dt);
    trace.T_vol.push_back(c_vol.dot(x));
    trace.T_peak.push_back(options.peak_mode == PeakMode::argmax ? x.maxCoeff() : x[peak]);
    if (options.keep_states) trace.states.col(Eigen::Index(k)) = x;
  }
  return trace;
}

Eigen::VectorXd steady_state(const FullOrderModel& model, const Alpha& alpha, double u) {
  Eigen::SparseLU<SparseMatrix> lu;
  SparseMatrix negA = -model.A();
  lu.compute(negA);
  if (lu.info() != Eigen::Success) throw SolverError("factorization of A failed");
  return lu.solve(u * model.input_map(alpha));
}

}  // namespace retinest
