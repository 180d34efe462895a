#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "absorption.hpp"

namespace retinest {

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class Absorber { none, rpe, choroid };

struct LayerSpec {
  std::string name;
  double z_start = 0.0;  // m, measured from the irradiated surface
  double z_end = 0.0;
  Absorber absorber = Absorber::none;
  double cell_weight = 1.0;  // share of the axial cells given to this layer
};

struct Layer {
  std::string name;
  double z_start = 0.0;
  double z_end = 0.0;
  Absorber absorber = Absorber::none;
  int cells = 0;
  double thickness() const { return z_end - z_start; }
};

/// Validated, contiguous layer stack starting at z = 0. Exactly one RPE and
/// one choroid layer absorb.
struct LayerStack {
  std::vector<Layer> layers;
  std::size_t rpe_index = 0;
  std::size_t choroid_index = 0;

  const Layer& rpe() const { return layers[rpe_index]; }
  const Layer& choroid() const { return layers[choroid_index]; }
  double total_depth() const { return layers.back().z_end; }
  double absorbing_begin() const;  // min(z1, z3)
  double absorbing_end() const;    // max(z2, z4)
  double rpe_center() const { return 0.5 * (rpe().z_start + rpe().z_end); }
};

struct GridSpec {
  double inner_radius = 100e-6;       // R_I, m
  double outer_radius = 500e-6;       // R_O, m
  int radial_cells = 30;              // N_r
  int axial_cells = 60;               // N_z
  double inner_radial_fraction = 0.5; // share of radial cells inside R_I
  int refine = 1;                     // multiplies both cell counts
};

/// Axisymmetric (r, z) node layout. Radial nodes r_0 = 0 ... r_{N_r} = R_O,
/// axial nodes z_0 = 0 ... z_{N_z} = depth; the planes r = R_O, z = 0 and
/// z = depth are Dirichlet and carry no unknowns.
struct CylinderGeometry {
  double inner_radius = 0.0;
  double outer_radius = 0.0;
  double axial_extent = 0.0;
  int radial_cells = 0;
  int axial_cells = 0;
  int inner_radial_index = 0;  // r_nodes[inner_radial_index] == inner_radius
  std::vector<double> r_nodes;
  std::vector<double> z_nodes;

  int radial_unknowns() const { return radial_cells; }
  int axial_unknowns() const { return axial_cells - 1; }
  int unknowns() const { return radial_unknowns() * axial_unknowns(); }
  long cell_count() const { return long(radial_cells) * axial_cells; }
  /// Unknown index of radial node i (0..N_r-1) and axial node j (1..N_z-1).
  int node(int i, int j) const { return (j - 1) * radial_cells + i; }
  /// Index of the axial node lying exactly on z, or -1.
  int axial_node_at(double z) const;
};

struct MaterialProps {
  double density = 993.0;        // kg/m^3
  double heat_capacity = 4176.0; // J/(kg K)
  double conductivity = 0.627;   // W/(m K)
  double volumetric_heat_capacity() const { return density * heat_capacity; }
  double diffusivity() const { return conductivity / volumetric_heat_capacity(); }
};

/// Box of admissible absorption prefactors, p in {1, 2}.
struct ParameterDomain {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dimension() const { return int(lower.size()); }
  bool contains(const Eigen::VectorXd& alpha) const;
  Eigen::VectorXd center() const { return 0.5 * (lower + upper); }
  static ParameterDomain defaults(int p);
};

/// Finite-volume discretization of (k / rho C_p) Laplace on the geometry.
/// A = diag(capacity)^-1 * stiffness with a symmetric negative definite
/// stiffness matrix, so A has real negative eigenvalues.
struct OperatorSkeleton {
  LayerStack layers;
  CylinderGeometry geometry;
  MaterialProps material;
  SparseMatrix A;
  SparseMatrix stiffness;   // W/K
  Eigen::VectorXd volume;   // m^3, control volume per unknown
  Eigen::VectorXd capacity; // J/K, rho C_p * volume

  int n() const { return int(volume.size()); }
};

/// Integration range [z_b, z_e] of the volume temperature.
struct OutputRange {
  double z_begin = 0.0;
  double z_end = 0.0;
};

class FullOrderModel {
 public:
  FullOrderModel(OperatorSkeleton skeleton, AbsorptionProfile profile,
                 std::vector<SampledEntry> input_entries,
                 std::vector<SampledEntry> output_entries, int peak_node,
                 OutputRange range);

  int n() const { return skeleton_.n(); }
  const OperatorSkeleton& skeleton() const { return skeleton_; }
  const SparseMatrix& A() const { return skeleton_.A; }
  const AbsorptionProfile& profile() const { return profile_; }
  const OutputRange& output_range() const { return range_; }

  /// b^f(alpha): heating rate per node (K/s) for u = 1 W.
  Eigen::VectorXd input_map(const Alpha& alpha) const;
  /// c_vol^f(alpha) as a column vector.
  Eigen::VectorXd output_map(const Alpha& alpha) const;
  /// c_peak^f as a column vector (unit selector).
  Eigen::VectorXd peak_map() const;
  int peak_node() const { return peak_node_; }

  const SampledEntry& input_entry(int node) const { return input_entries_[node]; }
  const SampledEntry& output_entry(int node) const { return output_entries_[node]; }

 private:
  OperatorSkeleton skeleton_;
  AbsorptionProfile profile_;
  std::vector<SampledEntry> input_entries_;
  std::vector<SampledEntry> output_entries_;
  int peak_node_;
  OutputRange range_;
};

// -- construction --------------------------------------------------------------

std::pair<LayerStack, CylinderGeometry> build_geometry(
    const std::vector<LayerSpec>& layer_spec, const GridSpec& grid_spec);

OperatorSkeleton assemble_operator(const LayerStack& layers,
                                   const CylinderGeometry& geometry,
                                   const MaterialProps& material);

struct SourceAssembly {
  Eigen::VectorXd heating;  // Q_h / (rho C_p) per node at power u, K/s
  Eigen::VectorXd input_map;
  std::vector<SampledEntry> entries;
};

/// Lambert-Beer source. Each node receives the exact cell average of
/// mu exp(-tau) over its control volume, so summing capacity * heating gives
/// the absorbed power in closed form.
SourceAssembly assemble_source(const OperatorSkeleton& skeleton,
                               const AbsorptionProfile& profile,
                               const Alpha& alpha, double u);

struct OutputAssembly {
  Eigen::VectorXd volume_row;
  Eigen::VectorXd peak_row;
  int peak_node = -1;
  std::vector<SampledEntry> entries;
};

OutputAssembly assemble_outputs(const OperatorSkeleton& skeleton,
                                const AbsorptionProfile& profile,
                                const Alpha& alpha, const OutputRange& range);

AbsorptionProfile make_profile(const LayerStack& layers, double mu0_rpe,
                               double mu0_choroid);

/// Convenience: geometry + operator + source entries + outputs.
FullOrderModel build_full_model(const std::vector<LayerSpec>& layer_spec,
                                const GridSpec& grid_spec,
                                const MaterialProps& material, double mu0_rpe,
                                double mu0_choroid,
                                std::optional<OutputRange> range = std::nullopt);

// -- simulation ----------------------------------------------------------------

enum class PeakMode { rpe_center, argmax };

struct FullTrace {
  std::vector<double> t;  // sample k lies at (k + 1) * dt
  std::vector<double> u;  // power applied over the interval ending at t[k]
  std::vector<double> T_vol;
  std::vector<double> T_peak;
  Eigen::MatrixXd states;  // n_f x steps, only when requested
};

struct SimulateOptions {
  bool keep_states = false;
  PeakMode peak_mode = PeakMode::rpe_center;
};

/// Implicit-Euler integration from the zero initial state.
/// `input` holds u_k for each step; the trace has input.size() samples.
FullTrace simulate_full(const FullOrderModel& model, const Alpha& alpha,
                        const std::vector<double>& input, double dt,
                        const SimulateOptions& options = {});

/// Steady state -A^-1 b(alpha) u via a sparse direct solve.
Eigen::VectorXd steady_state(const FullOrderModel& model, const Alpha& alpha, double u);

}  // namespace retinest
