#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "stablesde/frozen.hpp"
#include "stablesde/scenario.hpp"
#include "stablesde/stable.hpp"

namespace stablesde {

enum class KernelStage { frozen_p0, q0, q_iterate, full };

std::string stage_name(KernelStage s);

// Tensor-grid kernel values with tail metadata. values[(it*nx + ix)*ny + iy].
struct KernelTable {
  KernelStage stage = KernelStage::full;
  int n_iterate = 0;
  double alpha = 1.5;
  double beta = 0.45;
  std::uint64_t scenario_hash = 0;
  std::vector<double> t_grid, x_grid, y_grid;
  std::vector<double> values;
  // mass of y -> p(t, x, y) outside the tabulated window, per (it, ix);
  // carried from the construction so normalization accounting does not rely
  // on refitting truncated rows. Empty when not applicable.
  std::vector<double> outside_mass;
  double tail_exponent = 0.0;  // fitted decay rate of |x-y|^(-e)
  double residual = 0.0;       // sup-norm of the last iterate increment

  double& at(std::size_t it, std::size_t ix, std::size_t iy);
  double value(std::size_t it, std::size_t ix, std::size_t iy) const;
  std::size_t nt() const { return t_grid.size(); }
  std::size_t nx() const { return x_grid.size(); }
  std::size_t ny() const { return y_grid.size(); }

  // Trapezoid over the y grid plus the fitted power tails on both sides.
  double row_integral(std::size_t it, std::size_t ix) const;
  // Cumulative distribution of y -> p(t, x, y): grid nodes + left tail mass.
  std::vector<double> cdf_row(std::size_t it, std::size_t ix) const;

  void save(const std::string& path) const;  // binary + JSON sidecar
  static KernelTable load(const std::string& path);
};

struct ParametrixGrids {
  std::vector<double> t_grid;  // output times, ascending
  double L = 10.0;             // construction window [-L, L]
  int nx = 285;                // uniform spatial nodes (x and y grids)
  int n_dense = 24;            // internal dense time nodes (geometric)
  double s_min = 4e-3;         // smallest internal time
  // Output rows keep |x| <= out_window (y spans the full window); the band
  // near the construction edge only feeds the convolutions. Negative means
  // half the window.
  double out_window = -1.0;

  static ParametrixGrids standard(double t_min = 0.15, double t_max = 1.0,
                                  int nt = 8, double L = 10.0, int nx = 285);
  // Grid preconditions: spacing must resolve the kernel at the smallest
  // output time. Throws std::invalid_argument with the required spacing.
  void validate(double alpha) const;
};

// Builds the heat kernel of the variable-coefficient operator as
//   p = p0 + p0 (*) q,    q = q0 + q0 (*) q,
// where p0 is the freeze-point kernel, q0 the freeze-point mismatch, and (*)
// the time-space convolution. Construction precomputes the freeze-point rows
// and the mismatch tables; iterate/evaluate calls are then matrix work.
class ParametrixBuilder {
public:
  ParametrixBuilder(FieldPtr field, ParametrixGrids grids);

  const ParametrixGrids& grids() const { return grids_; }
  const CoefficientField& field() const { return *field_; }
  const std::vector<double>& dense_times() const { return s_dense_; }

  KernelTable p0_table() const;
  KernelTable q0_table() const;
  // Picard iterates of the Volterra equation; returns the n-th iterate and
  // the sup-norm of the last increment. Throws NumericalError if the
  // residual grows between iterates.
  KernelTable q_table(int n_terms);
  KernelTable heat_kernel(int n_terms);
  // Snapshot of the current iterate without re-running the iteration.
  KernelTable q_current() const { return make_table(KernelStage::q_iterate); }

  // Kernel matrix p(t, x_i, y_j) at an arbitrary time inside the window
  // (exact freeze rows at t; the correction term uses the stored iterates).
  Eigen::MatrixXd heat_at(double t) const;
  // Freeze-point kernel value p0(t, x, y) = p_y(t, x - y) from stored rows.
  double p0_value(std::size_t dense_idx, double x, double y) const;

  bool has_q() const { return !q_.empty(); }

  Eigen::VectorXd p0mass_at(double tau) const;
  Eigen::VectorXd mrow_at(double s) const;
  // full-line mass of y -> p(t, x, y) for every x node
  Eigen::VectorXd kernel_mass(double t) const;

  // Mass diagnostics at a dense-time index.
  const Eigen::VectorXd& mass_q0_row(std::size_t is) const { return m0_[is]; }
  const Eigen::VectorXd& mass_q_row(std::size_t is) const { return mrow_[is]; }
  const Eigen::VectorXd& mass_p0_row(std::size_t is) const {
    return p0mass_[is];
  }

private:
  struct Row {
    CubicSpline spline;   // p_y(s, |w|) on the shared log grid
    double tail_coeff = 0.0, tail_exp = 0.0;  // extension beyond w_max
  };

  void build_rows();
  void build_q0();
  void build_masses();
  Eigen::MatrixXd q0_matrix_at(double tau) const;
  Eigen::MatrixXd q_matrix_at(double s) const;
  Eigen::VectorXd m0_at(double tau) const;
  Eigen::VectorXd n0_at(double tau) const;

  double row_value(std::size_t is, std::size_t iy, double w) const;
  Eigen::MatrixXd p0_matrix_at(double t, bool exact) const;
  Eigen::MatrixXd volterra_rhs(double t,
                               const std::vector<Eigen::MatrixXd>& q,
                               const std::vector<Eigen::VectorXd>& mq) const;
  Eigen::MatrixXd heat_correction(double t) const;
  Eigen::VectorXd correction_outside_mass(double t) const;
  KernelTable make_table(KernelStage stage) const;

  FieldPtr field_;
  ParametrixGrids grids_;
  SymbolBasisPtr basis_;
  std::vector<double> x_grid_;           // == y grid
  std::vector<double> s_dense_;          // merged dense + output times
  std::vector<std::unique_ptr<FrozenKernel>> frozen_;  // one per y node
  std::vector<double> w_grid_;           // shared |w| nodes (0 then log)
  std::vector<double> sigx_nodes_;       // sigma_x at the construction nodes
  std::vector<std::vector<Row>> rows_;   // [is][iy]
  std::vector<Eigen::MatrixXd> q0_;      // [is](ix, iy)
  std::vector<Eigen::VectorXd> m0_;      // row mass of q0 (z integral)
  std::vector<Eigen::VectorXd> n0_;      // column mass of q0 (x integral)
  std::vector<Eigen::VectorXd> p0mass_;  // row mass of p0
  std::vector<Eigen::MatrixXd> q_;       // current iterate
  std::vector<Eigen::VectorXd> mq_;      // column mass of q
  std::vector<Eigen::VectorXd> mrow_;    // row mass of q (y integral)
  double q_residual_ = 0.0;
  int q_iterations_ = 0;
  bool trivial_q_ = false;  // sigma independent of x: q vanishes identically
};

// Free-function forms of the module operations.
KernelTable q0_table(FieldPtr field, const ParametrixGrids& grids);
KernelTable heat_kernel(FieldPtr field, const ParametrixGrids& grids,
                        int n_terms = 6);

// Bound verification on a built table; which is one of
//   grad-p, frac-p, grad-p-holder, q-rho, frozen-two-sided.
// grid_offset in [0,1) shifts the sample grid so disjoint grids can be
// compared for constant stability.
BoundReport verify_kernel_bounds(const KernelTable& table,
                                 const std::string& which,
                                 double frac_gamma = 0.2,
                                 double grid_offset = 0.0);

}  // namespace stablesde
