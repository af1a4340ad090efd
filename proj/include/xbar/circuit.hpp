#pragma once

#include "xbar/core.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>
#include <stdexcept>
#include <vector>

namespace xbar {

/// Memristor current law: I(U) = g*sinh(beta*U)/beta (beta > 0) or g*U
/// (beta = 0). Odd, strictly increasing, dI/dU at 0 equals g.
struct DeviceModel {
    double beta = 0.0;  // 1/V
    double g = 0.0;     // S

    double current(double u) const;
    double conductance(double u) const;  // dI/dU

    // Conductance state that passes target_i at device drop u_device.
    static double invert_for_conductance(double beta, double target_i, double u_device);
};

struct SolverOptions {
    int max_newton_iters = 50;
    double newton_tol = 1e-9;       // V, max |dV| per Newton step
    double kcl_tol = 1e-12;         // A, residual bound at the returned solution
    double cg_tol = 1e-12;          // relative residual for the iterative path
    int direct_cell_limit = 64 * 64;  // rows*cols above this use conjugate gradient
};

struct SolveResult {
    Vector column_currents;  // A, through each r_out into virtual ground
    Matrix top_voltages;     // V per cross-point
    Matrix bottom_voltages;  // V per cross-point
    Matrix device_currents;  // A per cross-point
    Matrix device_drops;     // V, top - bottom
    int newton_iterations = 0;
};

class SolverError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Nodal solver for the 1T1M read path: per cross-point a top and a bottom
/// node, driver through r_in on the left of each row, wire segments of
/// r_wire between adjacent cross-points, sense resistor r_out at the bottom
/// of each column into virtual ground. Zero-valued parasitics collapse the
/// corresponding nodes instead of stamping infinite conductances, so the
/// ideal limit is exact.
///
/// Construction assembles and factorizes the linear system; solve() is then
/// cheap for repeated inputs against the same conductances. One instance is
/// not meant for concurrent use; clone per thread instead.
class CrossbarSolver {
  public:
    CrossbarSolver(const CrossbarConfig& cfg, const ConductanceMatrix& g,
                   const SolverOptions& opt = {});
    ~CrossbarSolver();
    CrossbarSolver(CrossbarSolver&&) noexcept;
    CrossbarSolver& operator=(CrossbarSolver&&) noexcept;

    /// x: dimensionless inputs, length rows; sources are x_i * v_read.
    SolveResult solve(const Vector& x) const;

    /// Swap in new conductances with the same dimensions; reuses the
    /// symbolic factorization.
    void set_conductances(const ConductanceMatrix& g);

    /// Conductance system matrix over the unknown nodes, linearized at zero
    /// bias (exactly the system solved when beta = 0). Exposed for
    /// inspection; symmetric by construction.
    const Eigen::SparseMatrix<double>& system_matrix() const;

    int unknown_count() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// One-shot convenience around CrossbarSolver.
SolveResult solve_crossbar(const CrossbarConfig& cfg, const ConductanceMatrix& g,
                           const Vector& x, const SolverOptions& opt = {});

/// Row-wise solve of a batch of inputs (one row of x_rows per solve).
std::vector<SolveResult> solve_batch(const CrossbarConfig& cfg, const ConductanceMatrix& g,
                                     const Matrix& x_rows, const SolverOptions& opt = {});

}  // namespace xbar
