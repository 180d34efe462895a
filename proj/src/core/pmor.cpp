#include "pmor.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "errors.hpp"
#include "json.hpp"

namespace retinest {

namespace {

using Complex = std::complex<double>;

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& M) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  return qr.householderQ() * Eigen::MatrixXd::Identity(M.rows(), M.cols());
}

SparseMatrix shifted(const SparseMatrix& A, double sigma) {
  SparseMatrix S(A.rows(), A.cols());
  S.setIdentity();
  S *= sigma;
  S -= A;
  S.makeCompressed();
  return S;
}

using ComplexSparse = Eigen::SparseMatrix<Complex>;

/// Factorizations of (sigma I - A) and its transpose; on failure the shift is
/// nudged once.
struct ShiftedSolver {
  Eigen::SparseLU<ComplexSparse> lu;
  Eigen::SparseLU<ComplexSparse> lu_t;
  Complex sigma;

  ShiftedSolver(const SparseMatrix& A, Complex s, double tol) {
    ComplexSparse Ac = A.cast<Complex>();
    ComplexSparse I(A.rows(), A.cols());
    I.setIdentity();
    for (int attempt = 0; attempt < 2; ++attempt) {
      sigma = attempt == 0 ? s : s + tol * std::max(1.0, std::abs(s));
      ComplexSparse M = sigma * I - Ac;
      M.makeCompressed();
      lu.compute(M);
      if (lu.info() != Eigen::Success) continue;
      ComplexSparse Mt = M.transpose();
      lu_t.compute(Mt);
      if (lu_t.info() == Eigen::Success) return;
    }
    std::ostringstream os;
    os << "shifted solve (sigma I - A) is singular at sigma = " << s;
    throw SolverError(os.str());
  }
};

bool is_real(Complex z) { return std::abs(z.imag()) <= 1e-10 * std::abs(z); }

/// Orders shifts by real part, then imaginary part, with conjugate pairs
/// adjacent and the positive-imaginary member first.
std::vector<int> shift_order(const Eigen::VectorXcd& s) {
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (s[a].real() != s[b].real()) return s[a].real() < s[b].real();
    return s[a].imag() > s[b].imag();
  });
  return idx;
}

}  // namespace

LtiSystem lti_at(const FullOrderModel& model, const Alpha& alpha) {
  LtiSystem sys;
  sys.A = model.A();
  sys.b = model.input_map(alpha);
  sys.C.resize(2, model.n());
  sys.C.row(0) = model.output_map(alpha).transpose();
  sys.C.row(1) = model.peak_map().transpose();
  return sys;
}

Eigen::VectorXd transfer_function(const LtiSystem& sys, double s) {
  Eigen::SparseLU<SparseMatrix> lu(shifted(sys.A, s));
  if (lu.info() != Eigen::Success) throw SolverError("transfer function evaluated at a pole");
  return sys.C * Eigen::VectorXd(lu.solve(sys.b));
}

Eigen::VectorXd transfer_function_derivative(const LtiSystem& sys, double s) {
  Eigen::SparseLU<SparseMatrix> lu(shifted(sys.A, s));
  if (lu.info() != Eigen::Success) throw SolverError("transfer function evaluated at a pole");
  const Eigen::VectorXd once = lu.solve(sys.b);
  const Eigen::VectorXd twice = lu.solve(once);
  return -(sys.C * twice);
}

Eigen::VectorXd initial_shifts(const SparseMatrix& A, int count) {
  double upper = 0.0;
  Eigen::VectorXd row_sums = Eigen::VectorXd::Zero(A.rows());
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) row_sums[it.row()] += std::abs(it.value());
  upper = row_sums.maxCoeff();

  Eigen::SparseLU<SparseMatrix> lu(A);
  if (lu.info() != Eigen::Success) throw SolverError("A is singular");
  Eigen::VectorXd x = Eigen::VectorXd::Ones(A.rows()).normalized();
  double growth = 1.0;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd y = lu.solve(x);
    growth = y.norm();
    x = y / growth;
  }
  const double lower = 1.0 / growth;

  Eigen::VectorXd shifts(count);
  if (count == 1) {
    shifts[0] = std::sqrt(lower * upper);
    return shifts;
  }
  for (int i = 0; i < count; ++i)
    shifts[i] = lower * std::pow(upper / lower, double(i) / double(count - 1));
  return shifts;
}

LocalBasis irka_local_basis(const LtiSystem& sys, const IrkaSettings& settings,
                            std::optional<Eigen::VectorXd> start) {
  const int n = int(sys.A.rows());
  const int r = settings.order;
  const int outputs = int(sys.C.rows());
  if (r < 1 || r > n) throw ValidationError("IRKA order must satisfy 1 <= order <= n_f");

  LocalBasis out;
  const Eigen::VectorXd start_shifts = start.value_or(initial_shifts(sys.A, r));
  if (start_shifts.size() != r) throw ValidationError("initial shift count must equal the order");
  Eigen::VectorXcd sigma = start_shifts.cast<Complex>();
  Eigen::MatrixXcd left = Eigen::MatrixXcd::Ones(outputs, r);
  const Eigen::MatrixXcd Ct = sys.C.transpose().cast<Complex>();
  const Eigen::VectorXcd b = sys.b.cast<Complex>();

  for (int iter = 1; iter <= settings.max_iter; ++iter) {
    Eigen::MatrixXd V(n, r), W(n, r);
    for (int i = 0; i < r; ++i) {
      ShiftedSolver solver(sys.A, sigma[i], settings.tol);
      sigma[i] = solver.sigma;
      const Eigen::VectorXcd v = solver.lu.solve(b);
      const Eigen::VectorXcd rhs = Ct * left.col(i);
      const Eigen::VectorXcd w = solver.lu_t.solve(rhs);
      if (is_real(sigma[i]) || i + 1 == r) {
        V.col(i) = v.real();
        W.col(i) = w.real();
      } else {
        // the conjugate partner at i + 1 spans the same real subspace
        V.col(i) = v.real();
        V.col(i + 1) = v.imag();
        W.col(i) = w.real();
        W.col(i + 1) = w.imag();
        sigma[i + 1] = std::conj(sigma[i]);
        ++i;
      }
    }
    V = orthonormalize(V);
    W = orthonormalize(W);
    out.V = V;
    out.W = W;
    out.shifts = sigma;
    out.left_directions = left;
    out.iterations = iter;

    const Eigen::MatrixXd WtV = W.transpose() * V;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(WtV);
    if (!lu.isInvertible()) throw SolverError("IRKA: W^T V became singular");
    const Eigen::MatrixXd AV = sys.A * V;
    const Eigen::MatrixXd Ar = lu.solve(W.transpose() * AV);
    const Eigen::MatrixXd Cr = sys.C * V;

    Eigen::EigenSolver<Eigen::MatrixXd> es(Ar);
    if (es.info() != Eigen::Success) throw SolverError("IRKA: reduced eigenproblem failed");
    Eigen::VectorXcd next = -es.eigenvalues();
    const Eigen::MatrixXcd X = es.eigenvectors();
    for (int i = 0; i < r; ++i) {
      if (!is_real(next[i])) out.complex_shifts = true;
      else next[i] = Complex(next[i].real(), 0.0);
      // an unstable reduced pole is reflected back to the right half-plane
      if (next[i].real() < 0.0) next[i] = -std::conj(next[i]);
    }
    const std::vector<int> order = shift_order(next);
    Eigen::VectorXcd next_sorted(r);
    Eigen::MatrixXcd next_left(outputs, r);
    for (int i = 0; i < r; ++i) {
      next_sorted[i] = next[order[i]];
      next_left.col(i) = Cr.cast<Complex>() * X.col(order[i]);
      const double norm = next_left.col(i).norm();
      if (norm == 0.0) next_left.col(i).setOnes();
      else next_left.col(i) /= norm;
    }

    const std::vector<int> prev_order = shift_order(sigma);
    double change = 0.0;
    for (int i = 0; i < r; ++i)
      change = std::max(change, std::abs(next_sorted[i] - sigma[prev_order[i]]) /
                                    std::abs(sigma[prev_order[i]]));
    out.last_change = change;
    sigma = next_sorted;
    left = next_left;
    if (change < settings.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

LocalBasis irka_local_basis(const FullOrderModel& model, const Alpha& alpha,
                            const IrkaSettings& settings) {
  LocalBasis basis = irka_local_basis(lti_at(model, alpha), settings);
  basis.alpha = alpha;
  return basis;
}

GlobalBasis build_global_basis(const std::vector<LocalBasis>& local_bases, int n,
                               double svd_tol) {
  if (local_bases.empty()) throw ValidationError("at least one local basis is required");
  const Eigen::Index rows = local_bases.front().V.rows();
  Eigen::Index cols = 0;
  for (const LocalBasis& b : local_bases) cols += b.V.cols();
  if (n < 1 || n > cols) throw ValidationError("global order exceeds concatenated columns");

  Eigen::MatrixXd catV(rows, cols), catW(rows, cols);
  Eigen::Index c = 0;
  for (const LocalBasis& b : local_bases) {
    catV.middleCols(c, b.V.cols()) = b.V;
    catW.middleCols(c, b.W.cols()) = b.W;
    c += b.V.cols();
  }

  GlobalBasis out;
  auto truncate = [&](const Eigen::MatrixXd& cat, Eigen::MatrixXd& basis, Eigen::VectorXd& sv,
                      double& discarded, const char* label) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(cat, Eigen::ComputeThinU);
    sv = svd.singularValues();
    const int rank = int((sv.array() > svd_tol * sv[0]).count());
    if (rank < n) {
      std::ostringstream os;
      os << "global basis " << label << ": concatenation has rank " << rank << " < requested " << n;
      throw SolverError(os.str());
    }
    basis = svd.matrixU().leftCols(n);
    discarded = sv.tail(sv.size() - n).norm();
  };
  truncate(catV, out.V, out.singular_values_V, out.discarded_V, "V");
  truncate(catW, out.W, out.singular_values_W, out.discarded_W, "W");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.W.transpose() * out.V);
  const Eigen::VectorXd s = svd.singularValues();
  out.condition_WtV = s[s.size() - 1] > 0.0 ? s[0] / s[s.size() - 1]
                                            : std::numeric_limits<double>::infinity();
  return out;
}

Eigen::VectorXd DeimFactors::reconstruct(const Eigen::VectorXd& sampled) const {
  return U * (PtU_inverse * sampled);
}

Eigen::VectorXd DeimFactors::sample(const Eigen::VectorXd& full) const {
  Eigen::VectorXd s(order());
  for (int l = 0; l < order(); ++l) s[l] = full[indices[l]];
  return s;
}

double DeimFactors::tail(int d) const {
  if (d >= singular_values.size()) return 0.0;
  return singular_values[d] / singular_values[0];
}

DeimFactors deim_factorize(const Eigen::MatrixXd& snapshots, int d, double rank_tol) {
  if (d < 1) throw ValidationError("DEIM order must be >= 1");
  if (snapshots.cols() < d) throw ValidationError("DEIM needs at least d snapshots");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(snapshots, Eigen::ComputeThinU);
  DeimFactors f;
  f.singular_values = svd.singularValues();
  const int rank = f.singular_values[0] > 0.0
                       ? int((f.singular_values.array() > rank_tol * f.singular_values[0]).count())
                       : 0;
  if (rank < d) {
    std::ostringstream os;
    os << "DEIM snapshot matrix has rank " << rank << " < requested d = " << d
       << " (achievable d = " << rank << ")";
    throw SolverError(os.str());
  }
  f.U = svd.matrixU().leftCols(d);

  Eigen::Index first = 0;
  f.U.col(0).cwiseAbs().maxCoeff(&first);
  f.indices.push_back(int(first));
  for (int l = 1; l < d; ++l) {
    Eigen::MatrixXd PtU(l, l);
    Eigen::VectorXd Ptu(l);
    for (int a = 0; a < l; ++a) {
      PtU.row(a) = f.U.row(f.indices[a]).head(l);
      Ptu[a] = f.U(f.indices[a], l);
    }
    const Eigen::VectorXd coeff = PtU.fullPivLu().solve(Ptu);
    const Eigen::VectorXd residual = f.U.col(l) - f.U.leftCols(l) * coeff;
    Eigen::Index next = 0;
    residual.cwiseAbs().maxCoeff(&next);
    f.indices.push_back(int(next));
  }
  Eigen::MatrixXd PtU(d, d);
  for (int a = 0; a < d; ++a) PtU.row(a) = f.U.row(f.indices[a]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(PtU);
  if (!lu.isInvertible()) throw SolverError("DEIM: P^T U is singular");
  f.PtU_inverse = lu.inverse();
  return f;
}

Eigen::VectorXd ReducedModel::sampled_input(const Alpha& alpha) const {
  Eigen::VectorXd s(input_entries.size());
  for (std::size_t l = 0; l < input_entries.size(); ++l)
    s[Eigen::Index(l)] = input_entries[l].value(profile, alpha);
  counter_.add(long(input_entries.size()));
  return s;
}

Eigen::MatrixXd ReducedModel::sampled_input_gradient(const Alpha& alpha) const {
  Eigen::MatrixXd g(input_entries.size(), 2);
  for (std::size_t l = 0; l < input_entries.size(); ++l)
    g.row(Eigen::Index(l)) = input_entries[l].gradient(profile, alpha).transpose();
  counter_.add(long(input_entries.size()));
  return g;
}

Eigen::VectorXd ReducedModel::sampled_output(const Alpha& alpha) const {
  Eigen::VectorXd s(output_entries.size());
  for (std::size_t l = 0; l < output_entries.size(); ++l)
    s[Eigen::Index(l)] = output_entries[l].value(profile, alpha);
  counter_.add(long(output_entries.size()));
  return s;
}

Eigen::MatrixXd ReducedModel::sampled_output_gradient(const Alpha& alpha) const {
  Eigen::MatrixXd g(output_entries.size(), 2);
  for (std::size_t l = 0; l < output_entries.size(); ++l)
    g.row(Eigen::Index(l)) = output_entries[l].gradient(profile, alpha).transpose();
  counter_.add(long(output_entries.size()));
  return g;
}

Eigen::VectorXd ReducedModel::input_map(const Alpha& alpha) const {
  return input_basis * sampled_input(alpha);
}

Eigen::MatrixXd ReducedModel::input_map_jacobian(const Alpha& alpha) const {
  return input_basis * sampled_input_gradient(alpha);
}

Eigen::VectorXd ReducedModel::output_map(const Alpha& alpha) const {
  return output_basis.transpose() * sampled_output(alpha);
}

Eigen::MatrixXd ReducedModel::output_map_jacobian(const Alpha& alpha) const {
  return output_basis.transpose() * sampled_output_gradient(alpha);
}

bool is_hurwitz(const Eigen::MatrixXd& A, double* max_real_part) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  const double m = es.eigenvalues().real().maxCoeff();
  if (max_real_part) *max_real_part = m;
  return m < 0.0;
}

ReducedModel reduce_model(const FullOrderModel& full, const GlobalBasis& basis,
                          const DeimFactors& input_deim, const DeimFactors& output_deim) {
  const Eigen::MatrixXd& V = basis.V;
  const Eigen::MatrixXd& W = basis.W;
  if (V.rows() != full.n() || W.rows() != full.n() || V.cols() != W.cols())
    throw ValidationError("basis dimensions do not match the full-order model");
  if (input_deim.U.rows() != full.n() || output_deim.U.rows() != full.n())
    throw ValidationError("DEIM dimensions do not match the full-order model");

  const Eigen::MatrixXd WtV = W.transpose() * V;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(WtV);
  const Eigen::VectorXd s = svd.singularValues();
  const double cond = s[s.size() - 1] > 0.0 ? s[0] / s[s.size() - 1]
                                            : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) {
    std::ostringstream os;
    os << "W^T V is numerically singular (condition " << cond << ")";
    throw SolverError(os.str());
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(WtV);

  ReducedModel rom;
  const Eigen::MatrixXd AV = full.A() * V;
  rom.A = lu.solve(W.transpose() * AV);
  rom.input_basis = lu.solve(W.transpose() * input_deim.U) * input_deim.PtU_inverse;
  rom.output_basis = output_deim.PtU_inverse.transpose() * (output_deim.U.transpose() * V);
  rom.peak_row = V.row(full.peak_node()).transpose();
  rom.V = V;
  rom.profile = full.profile();
  rom.input_indices = input_deim.indices;
  rom.output_indices = output_deim.indices;
  for (int idx : input_deim.indices) rom.input_entries.push_back(full.input_entry(idx));
  for (int idx : output_deim.indices) rom.output_entries.push_back(full.output_entry(idx));
  rom.condition_WtV = cond;

  double max_re = 0.0;
  if (!is_hurwitz(rom.A, &max_re)) {
    std::ostringstream os;
    os << "reduced operator is not Hurwitz (max real eigenvalue part " << max_re << ")";
    throw SolverError(os.str());
  }
  return rom;
}

std::vector<Alpha> parameter_grid(const ParameterDomain& domain, int per_axis,
                                  double alpha_ch_fixed) {
  auto axis = [&](int m) {
    std::vector<double> v;
    if (per_axis == 1) {
      v.push_back(0.5 * (domain.lower[m] + domain.upper[m]));
      return v;
    }
    for (int i = 0; i < per_axis; ++i)
      v.push_back(domain.lower[m] + (domain.upper[m] - domain.lower[m]) * i / (per_axis - 1));
    return v;
  };
  std::vector<Alpha> grid;
  if (per_axis < 1) return grid;
  if (domain.dimension() == 1) {
    for (double a : axis(0)) grid.emplace_back(a, alpha_ch_fixed);
  } else {
    for (double a : axis(0))
      for (double b : axis(1)) grid.emplace_back(a, b);
  }
  return grid;
}

ReducedModel build_reduced_model(const FullOrderModel& full, int p, const ParameterDomain& domain,
                                 double alpha_ch_fixed, const RomSettings& settings,
                                 RomBuildReport* report) {
  if (p != 1 && p != 2) throw ValidationError("parameter count must be 1 or 2");
  if (domain.dimension() != p) throw ValidationError("parameter domain dimension must equal p");

  const int n = settings.order(p);
  const std::vector<Alpha> samples =
      parameter_grid(domain, settings.basis_samples_per_axis, alpha_ch_fixed);
  IrkaSettings irka;
  irka.order = n;
  irka.tol = settings.irka_tol;
  irka.max_iter = settings.irka_max_iter;

  // Local bases are independent; each worker writes only its own slot.
  std::vector<LocalBasis> local(samples.size());
  std::vector<std::string> failures(samples.size());
  unsigned workers = settings.threads > 0 ? unsigned(settings.threads)
                                          : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, unsigned(samples.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        local[i] = irka_local_basis(full, samples[i], irka);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const std::string& f : failures)
    if (!f.empty()) throw SolverError("local basis: " + f);

  GlobalBasis basis = build_global_basis(local, n, settings.svd_tol);

  const std::vector<Alpha> snaps =
      p == 1 ? parameter_grid(domain, settings.deim_samples_1p, alpha_ch_fixed)
             : parameter_grid(domain, settings.deim_samples_per_axis_2p, alpha_ch_fixed);
  Eigen::MatrixXd b_snap(full.n(), Eigen::Index(snaps.size()));
  Eigen::MatrixXd c_snap(full.n(), Eigen::Index(snaps.size()));
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    b_snap.col(Eigen::Index(s)) = full.input_map(snaps[s]);
    c_snap.col(Eigen::Index(s)) = full.output_map(snaps[s]);
  }
  DeimFactors b_deim = deim_factorize(b_snap, settings.deim_order);
  DeimFactors c_deim = deim_factorize(c_snap, settings.deim_order);

  ReducedModel rom = reduce_model(full, basis, b_deim, c_deim);
  rom.parameters = p;
  rom.domain = domain;
  rom.alpha_ch_fixed = alpha_ch_fixed;
  if (report) {
    report->local_bases = std::move(local);
    report->basis = std::move(basis);
    report->input_deim = std::move(b_deim);
    report->output_deim = std::move(c_deim);
  }
  return rom;
}

ReducedTrace simulate_reduced(const ReducedModel& rom, const Alpha& alpha,
                              const std::vector<double>& input, double dt) {
  const int n = rom.n();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - dt * rom.A);
  const Eigen::VectorXd b = rom.input_map(alpha);
  const Eigen::VectorXd c = rom.output_map(alpha);
  ReducedTrace trace;
  trace.states.resize(n, Eigen::Index(input.size()));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < input.size(); ++k) {
    const Eigen::VectorXd rhs = x + dt * input[k] * b;
    x = lu.solve(rhs);
    trace.states.col(Eigen::Index(k)) = x;
    trace.T_vol.push_back(c.dot(x));
    trace.T_peak.push_back(rom.peak_row.dot(x));
  }
  return trace;
}

std::vector<RomErrorRow> rom_error_sweep(const FullOrderModel& full, const ReducedModel& rom,
                                         const std::vector<Alpha>& alpha_grid,
                                         const std::vector<double>& input, double dt) {
  std::vector<RomErrorRow> rows;
  for (const Alpha& a : alpha_grid) {
    const FullTrace f = simulate_full(full, a, input, dt);
    const ReducedTrace r = simulate_reduced(rom, a, input, dt);
    RomErrorRow row;
    row.alpha = a;
    auto fill = [&](const std::vector<double>& ref, const std::vector<double>& est, double& max_rel,
                    double& mean_signed) {
      double scale = 0.0, worst = 0.0, signed_sum = 0.0;
      for (std::size_t k = 0; k < ref.size(); ++k) {
        scale = std::max(scale, std::abs(ref[k]));
        worst = std::max(worst, std::abs(est[k] - ref[k]));
        signed_sum += est[k] - ref[k];
      }
      max_rel = scale > 0.0 ? worst / scale : worst;
      mean_signed = ref.empty() ? 0.0 : signed_sum / double(ref.size()) / (scale > 0.0 ? scale : 1.0);
    };
    fill(f.T_vol, r.T_vol, row.max_rel_error_vol, row.mean_signed_error_vol);
    fill(f.T_peak, r.T_peak, row.max_rel_error_peak, row.mean_signed_error_peak);
    rows.push_back(row);
  }
  return rows;
}

void write_rom_error_csv(const std::string& path, const std::vector<RomErrorRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  std::fprintf(f, "alpha_rpe,alpha_ch,max_rel_err_T_vol,max_rel_err_T_peak,mean_signed_err_T_vol,"
                  "mean_signed_err_T_peak\n");
  for (const RomErrorRow& r : rows)
    std::fprintf(f, "%.9e,%.9e,%.9e,%.9e,%.9e,%.9e\n", r.alpha[0], r.alpha[1], r.max_rel_error_vol,
                 r.max_rel_error_peak, r.mean_signed_error_vol, r.mean_signed_error_peak);
  std::fclose(f);
}

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", rows}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index r = j.at("rows").get<Eigen::Index>();
  const Eigen::Index c = j.at("cols").get<Eigen::Index>();
  Eigen::MatrixXd M(r, c);
  const json& data = j.at("data");
  if (Eigen::Index(data.size()) != r) throw ValidationError("archive matrix row count mismatch");
  for (Eigen::Index i = 0; i < r; ++i) {
    if (Eigen::Index(data[i].size()) != c) throw ValidationError("archive matrix column count mismatch");
    for (Eigen::Index k = 0; k < c; ++k) M(i, k) = data[i][k].get<double>();
  }
  return M;
}

json entries_to_json(const std::vector<SampledEntry>& entries) {
  json arr = json::array();
  for (const SampledEntry& e : entries) arr.push_back({e.scale, e.z_lo, e.z_hi});
  return arr;
}

std::vector<SampledEntry> entries_from_json(const json& j) {
  std::vector<SampledEntry> out;
  for (const json& e : j) out.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()});
  return out;
}

json slab_to_json(const AbsorberSlab& s) { return {s.z_start, s.z_end, s.mu0}; }
AbsorberSlab slab_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

void save_reduced_model(const ReducedModel& rom, const std::string& path) {
  json j;
  j["format"] = "retinest-rom";
  j["version"] = 1;
  j["n"] = rom.n();
  j["d"] = rom.deim_order();
  j["parameters"] = rom.parameters;
  j["alpha_ch_fixed"] = rom.alpha_ch_fixed;
  j["domain_lower"] = std::vector<double>(rom.domain.lower.data(), rom.domain.lower.data() + rom.domain.lower.size());
  j["domain_upper"] = std::vector<double>(rom.domain.upper.data(), rom.domain.upper.data() + rom.domain.upper.size());
  j["condition_WtV"] = rom.condition_WtV;
  j["config_hash"] = rom.config_hash;
  j["A"] = matrix_to_json(rom.A);
  j["input_basis"] = matrix_to_json(rom.input_basis);
  j["output_basis"] = matrix_to_json(rom.output_basis);
  j["peak_row"] = matrix_to_json(rom.peak_row);
  j["V"] = matrix_to_json(rom.V);
  j["input_indices"] = rom.input_indices;
  j["output_indices"] = rom.output_indices;
  j["input_entries"] = entries_to_json(rom.input_entries);
  j["output_entries"] = entries_to_json(rom.output_entries);
  j["absorber_rpe"] = slab_to_json(rom.profile.rpe());
  j["absorber_choroid"] = slab_to_json(rom.profile.choroid());
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  f << std::setprecision(17) << j.dump();
  if (!f) throw ValidationError("failed writing " + path);
}

ReducedModel load_reduced_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open ROM archive " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError("ROM archive " + path + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "retinest-rom")
      throw ValidationError("ROM archive " + path + " has an unknown format tag");
    ReducedModel rom;
    rom.parameters = j.at("parameters").get<int>();
    rom.alpha_ch_fixed = j.at("alpha_ch_fixed").get<double>();
    const auto lo = j.at("domain_lower").get<std::vector<double>>();
    const auto hi = j.at("domain_upper").get<std::vector<double>>();
    rom.domain.lower = Eigen::Map<const Eigen::VectorXd>(lo.data(), Eigen::Index(lo.size()));
    rom.domain.upper = Eigen::Map<const Eigen::VectorXd>(hi.data(), Eigen::Index(hi.size()));
    rom.condition_WtV = j.at("condition_WtV").get<double>();
    rom.config_hash = j.at("config_hash").get<std::string>();
    rom.A = matrix_from_json(j.at("A"));
    rom.input_basis = matrix_from_json(j.at("input_basis"));
    rom.output_basis = matrix_from_json(j.at("output_basis"));
    rom.peak_row = matrix_from_json(j.at("peak_row"));
    rom.V = matrix_from_json(j.at("V"));
    rom.input_indices = j.at("input_indices").get<std::vector<int>>();
    rom.output_indices = j.at("output_indices").get<std::vector<int>>();
    rom.input_entries = entries_from_json(j.at("input_entries"));
    rom.output_entries = entries_from_json(j.at("output_entries"));
    rom.profile = AbsorptionProfile(slab_from_json(j.at("absorber_rpe")),
                                    slab_from_json(j.at("absorber_choroid")));
    const int n = rom.n();
    if (rom.A.cols() != n || rom.input_basis.rows() != n || rom.output_basis.cols() != n ||
        rom.peak_row.size() != n || rom.V.cols() != n ||
        rom.input_basis.cols() != Eigen::Index(rom.input_entries.size()) ||
        rom.output_basis.rows() != Eigen::Index(rom.output_entries.size()) ||
        rom.domain.dimension() != rom.parameters)
      throw ValidationError("ROM archive " + path + " has inconsistent dimensions");
    return rom;
  } catch (const json::exception& e) {
    throw ValidationError("ROM archive " + path + " is missing data: " + e.what());
  }
}

}  // namespace retinest
