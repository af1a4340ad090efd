#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace xbar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Geometry, conductance bounds, parasitics and device parameters of one
/// crossbar array. Plain aggregate; call validate() after filling it in.
struct CrossbarConfig {
    int rows = 0;
    int cols = 0;
    double r_on = 15e3;    // lowest device resistance, ohm
    double r_off = 300e3;  // highest device resistance, ohm
    double r_wire = 0.0;   // per wire segment between adjacent cross-points, ohm
    double r_in = 0.0;     // driver series resistance per row, ohm
    double r_out = 0.0;    // sense resistance per column, ohm
    double v_read = 0.2;   // full-scale read voltage, V
    double device_nonlinearity_beta = 0.0;  // 1/V, 0 = linear device
    double r_transistor = 0.0;              // in series with each device, ohm

    // Throws std::invalid_argument when an invariant is broken.
    void validate() const;

    double lgs() const { return 1.0 / r_off; }
    double hgs() const { return 1.0 / r_on; }
};

struct ConductanceBounds {
    double lgs = 0.0;  // lowest programmable conductance, S
    double hgs = 0.0;  // highest programmable conductance, S
};

/// LGS = 1/r_off, HGS = 1/r_on.
ConductanceBounds derived_bounds(const CrossbarConfig& cfg);

/// Dimensionless application values (the matrix to multiply by, or inputs).
/// Entries must be finite; range restrictions are checked where they matter.
class ValueMatrix {
  public:
    ValueMatrix() = default;
    explicit ValueMatrix(Matrix entries);

    int rows() const { return static_cast<int>(entries_.rows()); }
    int cols() const { return static_cast<int>(entries_.cols()); }
    double operator()(int i, int j) const { return entries_(i, j); }
    const Matrix& values() const { return entries_; }

  private:
    Matrix entries_;
};

/// Device conductances in Siemens.
class ConductanceMatrix {
  public:
    ConductanceMatrix() = default;
    explicit ConductanceMatrix(Matrix siemens);

    int rows() const { return static_cast<int>(siemens_.rows()); }
    int cols() const { return static_cast<int>(siemens_.cols()); }
    double operator()(int i, int j) const { return siemens_(i, j); }
    const Matrix& values() const { return siemens_; }

  private:
    Matrix siemens_;
};

enum class StuckKind { kStuckOn, kStuckOff, kOther };

std::string to_string(StuckKind kind);
StuckKind stuck_kind_from_string(const std::string& s);

struct DefectCell {
    int row = 0;
    int col = 0;
    double stuck_conductance = 0.0;  // S
    StuckKind kind = StuckKind::kOther;
};

/// Sparse set of stuck cells, kept sorted by (row, col); duplicates rejected.
class DefectMap {
  public:
    DefectMap() = default;
    explicit DefectMap(std::vector<DefectCell> cells);

    const std::vector<DefectCell>& cells() const { return cells_; }
    std::size_t size() const { return cells_.size(); }
    bool empty() const { return cells_.empty(); }
    // nullptr when (row, col) is healthy.
    const DefectCell* find(int row, int col) const;

  private:
    std::vector<DefectCell> cells_;
};

/// Row permutation: order()[i] is the source row mapped to crossbar row i.
class Permutation {
  public:
    Permutation() = default;
    explicit Permutation(std::vector<int> order);
    static Permutation identity(int n);

    int size() const { return static_cast<int>(order_.size()); }
    int operator[](int i) const { return order_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& order() const { return order_; }
    bool is_identity() const;

    Permutation inverse() const;

  private:
    std::vector<int> order_;
};

/// compose(p, q)[i] == p[q[i]]: the permutation obtained by applying p first,
/// then q on the result.
Permutation compose(const Permutation& first, const Permutation& second);

/// Seed plus stream id; equal pairs give bit-identical draw sequences.
struct RngSeed {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    // Deterministically derives an independent stream for a sub-purpose.
    RngSeed derive(std::uint64_t tag) const;
};

/// Deterministic random source. The raw engine is std::mt19937_64 (output is
/// pinned by the standard) and every distribution is implemented here, so the
/// sequence is identical across platforms and standard libraries.
class Rng {
  public:
    explicit Rng(RngSeed seed);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    double symmetric() { return uniform(-1.0, 1.0); }
    double gaussian(double sigma);
    // Unbiased integer in [0, n), n >= 1.
    std::int64_t uniform_int(std::int64_t n);

    Vector uniform_vector(int n, double lo, double hi);
    Matrix uniform_matrix(int rows, int cols, double lo, double hi);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// x (length n, dimensionless) times v_read against G: I_j = sum_i x_i*v_read*G_ij.
/// Pure arithmetic, no parasitics. Throws std::invalid_argument on a
/// dimension mismatch.
Vector ideal_vmm(const Vector& x, const ConductanceMatrix& g, double v_read);

/// Shortest decimal that round-trips the exact double ("%.17g").
std::string format_full(double v);

/// strtod with full-string validation; throws std::invalid_argument.
double parse_double(const std::string& s);

}  // namespace xbar
