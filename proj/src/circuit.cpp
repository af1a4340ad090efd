#include "xbar/circuit.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <cmath>
#include <numeric>
#include <utility>

namespace xbar {

double DeviceModel::current(double u) const {
    if (beta == 0.0) return g * u;
    return g * std::sinh(beta * u) / beta;
}

double DeviceModel::conductance(double u) const {
    if (beta == 0.0) return g;
    return g * std::cosh(beta * u);
}

double DeviceModel::invert_for_conductance(double beta, double target_i, double u_device) {
    if (u_device == 0.0) throw std::invalid_argument("invert_for_conductance: zero device drop");
    if (beta == 0.0) return target_i / u_device;
    return target_i * beta / std::sinh(beta * u_device);
}

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Endpoint code: >= 0 unknown index, -1 ground, -(2+i) ideal source of row i.
constexpr int kGround = -1;
int source_code(int row) { return -(2 + row); }
bool is_source(int code) { return code <= -2; }
int source_row(int code) { return -(code + 2); }

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
};

struct Branch {
    int a = 0;
    int b = 0;
    double cond = 0.0;  // S
};

// Device + series transistor response at branch drop u: current and tangent.
struct BranchResponse {
    double current = 0.0;
    double conductance = 0.0;
};

BranchResponse device_branch_response(double g, double beta, double r_t, double u) {
    if (beta == 0.0) {
        const double geff = r_t > 0.0 ? g / (1.0 + g * r_t) : g;
        return {geff * u, geff};
    }
    double u_dev = u;
    double i = 0.0;
    if (r_t > 0.0) {
        // Solve i = g*sinh(beta*(u - i*r_t))/beta by scalar Newton; f is
        // strictly decreasing in i, so this converges from any start.
        i = g / (1.0 + g * r_t) * u;
        for (int it = 0; it < 64; ++it) {
            u_dev = u - i * r_t;
            const double f = g * std::sinh(beta * u_dev) / beta - i;
            const double df = -g * std::cosh(beta * u_dev) * r_t - 1.0;
            const double step = f / df;
            i -= step;
            if (std::abs(step) <= 1e-18 + 1e-15 * std::abs(i)) break;
        }
        u_dev = u - i * r_t;
    } else {
        i = g * std::sinh(beta * u) / beta;
    }
    const double g_dev = g * std::cosh(beta * u_dev);
    const double geff = r_t > 0.0 ? g_dev / (1.0 + g_dev * r_t) : g_dev;
    return {i, geff};
}

}  // namespace

struct CrossbarSolver::Impl {
    CrossbarConfig cfg;
    SolverOptions opt;
    int n = 0;
    int m = 0;
    Matrix g;  // conductance states, n x m

    int unknowns = 0;
    std::vector<int> top_ep;   // per cell, endpoint code of the top group
    std::vector<int> bot_ep;   // per cell, endpoint code of the bottom group
    std::vector<int> col_sense_ep;  // per column, group of b(n-1, j)
    std::vector<Branch> wires;      // r_in, r_wire and r_out branches

    std::vector<Triplet> wire_triplets;
    struct RhsTerm {
        int u = 0;
        double cond = 0.0;
        int row = 0;
    };
    std::vector<RhsTerm> wire_rhs;  // wire branches touching a source node

    SpMat a;  // pattern reused across conductance updates
    bool use_direct = true;
    Eigen::SimplicialLDLT<SpMat> ldlt;
    bool pattern_ready = false;
    Eigen::IncompleteCholesky<double> ic;

    int cell(int i, int j) const { return i * m + j; }
    int top_node(int i, int j) const { return 2 * cell(i, j); }
    int bottom_node(int i, int j) const { return 2 * cell(i, j) + 1; }

    double potential(int code, const Eigen::VectorXd& u, const Vector& v_src) const {
        if (code >= 0) return u[code];
        if (code == kGround) return 0.0;
        return v_src[source_row(code)];
    }

    void build_topology();
    void assemble_devices(const Eigen::VectorXd& u_lin_point, const Vector& v_src, bool at_zero,
                          std::vector<Triplet>& triplets, Eigen::VectorXd& rhs) const;
    void refactor();
    Eigen::VectorXd solve_linear_system(const SpMat& mat, const Eigen::VectorXd& rhs,
                                        bool reuse_member) const;
    Eigen::VectorXd kcl_residual(const Eigen::VectorXd& u, const Vector& v_src) const;
    SolveResult finish(const Eigen::VectorXd& u, const Vector& v_src, int newton_iters) const;
};

void CrossbarSolver::Impl::build_topology() {
    const int n_nodes = 2 * n * m;
    UnionFind uf(n_nodes);
    if (cfg.r_wire == 0.0) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j + 1 < m; ++j) uf.unite(top_node(i, j), top_node(i, j + 1));
        }
        for (int j = 0; j < m; ++j) {
            for (int i = 0; i + 1 < n; ++i) uf.unite(bottom_node(i, j), bottom_node(i + 1, j));
        }
    }

    // Roots fixed by a zero-resistance driver or sense path.
    std::vector<int> fixed_source(static_cast<std::size_t>(n_nodes), -1);
    std::vector<char> fixed_ground(static_cast<std::size_t>(n_nodes), 0);
    if (cfg.r_in == 0.0) {
        for (int i = 0; i < n; ++i) fixed_source[static_cast<std::size_t>(uf.find(top_node(i, 0)))] = i;
    }
    if (cfg.r_out == 0.0) {
        for (int j = 0; j < m; ++j) fixed_ground[static_cast<std::size_t>(uf.find(bottom_node(n - 1, j)))] = 1;
    }

    std::vector<int> code(static_cast<std::size_t>(n_nodes), INT32_MIN);
    unknowns = 0;
    for (int v = 0; v < n_nodes; ++v) {
        const int r = uf.find(v);
        if (code[static_cast<std::size_t>(r)] == INT32_MIN) {
            if (fixed_source[static_cast<std::size_t>(r)] >= 0) {
                code[static_cast<std::size_t>(r)] = source_code(fixed_source[static_cast<std::size_t>(r)]);
            } else if (fixed_ground[static_cast<std::size_t>(r)]) {
                code[static_cast<std::size_t>(r)] = kGround;
            } else {
                code[static_cast<std::size_t>(r)] = unknowns++;
            }
        }
        code[static_cast<std::size_t>(v)] = code[static_cast<std::size_t>(r)];
    }

    top_ep.resize(static_cast<std::size_t>(n * m));
    bot_ep.resize(static_cast<std::size_t>(n * m));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            top_ep[static_cast<std::size_t>(cell(i, j))] = code[static_cast<std::size_t>(top_node(i, j))];
            bot_ep[static_cast<std::size_t>(cell(i, j))] = code[static_cast<std::size_t>(bottom_node(i, j))];
        }
    }
    col_sense_ep.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        col_sense_ep[static_cast<std::size_t>(j)] = code[static_cast<std::size_t>(bottom_node(n - 1, j))];
    }

    wires.clear();
    if (cfg.r_in > 0.0) {
        for (int i = 0; i < n; ++i) {
            wires.push_back({source_code(i), code[static_cast<std::size_t>(top_node(i, 0))], 1.0 / cfg.r_in});
        }
    }
    if (cfg.r_wire > 0.0) {
        const double gw = 1.0 / cfg.r_wire;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j + 1 < m; ++j) {
                wires.push_back({code[static_cast<std::size_t>(top_node(i, j))],
                                 code[static_cast<std::size_t>(top_node(i, j + 1))], gw});
            }
        }
        for (int j = 0; j < m; ++j) {
            for (int i = 0; i + 1 < n; ++i) {
                wires.push_back({code[static_cast<std::size_t>(bottom_node(i, j))],
                                 code[static_cast<std::size_t>(bottom_node(i + 1, j))], gw});
            }
        }
    }
    if (cfg.r_out > 0.0) {
        for (int j = 0; j < m; ++j) {
            wires.push_back({code[static_cast<std::size_t>(bottom_node(n - 1, j))], kGround, 1.0 / cfg.r_out});
        }
    }

    wire_triplets.clear();
    wire_rhs.clear();
    for (const Branch& br : wires) {
        if (br.a >= 0) {
            wire_triplets.emplace_back(br.a, br.a, br.cond);
            if (br.b >= 0) {
                wire_triplets.emplace_back(br.a, br.b, -br.cond);
            } else if (is_source(br.b)) {
                wire_rhs.push_back({br.a, br.cond, source_row(br.b)});
            }
        }
        if (br.b >= 0) {
            wire_triplets.emplace_back(br.b, br.b, br.cond);
            if (br.a >= 0) {
                wire_triplets.emplace_back(br.b, br.a, -br.cond);
            } else if (is_source(br.a)) {
                wire_rhs.push_back({br.b, br.cond, source_row(br.a)});
            }
        }
    }

    use_direct = n * m <= opt.direct_cell_limit;
}

// Stamps all device branches linearized at the node potentials u_lin_point
// (Norton companion per branch). at_zero short-circuits the zero-bias case
// used for the linear path and the first Newton step.
void CrossbarSolver::Impl::assemble_devices(const Eigen::VectorXd& u_lin_point, const Vector& v_src,
                                            bool at_zero, std::vector<Triplet>& triplets,
                                            Eigen::VectorXd& rhs) const {
    const double beta = cfg.device_nonlinearity_beta;
    const double r_t = cfg.r_transistor;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const int c = cell(i, j);
            const int a = top_ep[static_cast<std::size_t>(c)];
            const int b = bot_ep[static_cast<std::size_t>(c)];
            double u0 = 0.0;
            if (!at_zero) u0 = potential(a, u_lin_point, v_src) - potential(b, u_lin_point, v_src);
            const BranchResponse resp = device_branch_response(g(i, j), beta, r_t, u0);
            const double geff = resp.conductance;
            // Companion source so that the linearized branch reproduces the
            // true current at u0.
            const double companion = resp.current - geff * u0;
            if (a >= 0) {
                triplets.emplace_back(a, a, geff);
                rhs[a] -= companion;
                if (b >= 0) {
                    triplets.emplace_back(a, b, -geff);
                } else {
                    rhs[a] += geff * potential(b, u_lin_point, v_src);
                }
            }
            if (b >= 0) {
                triplets.emplace_back(b, b, geff);
                rhs[b] += companion;
                if (a >= 0) {
                    triplets.emplace_back(b, a, -geff);
                } else {
                    rhs[b] += geff * potential(a, u_lin_point, v_src);
                }
            }
        }
    }
}

void CrossbarSolver::Impl::refactor() {
    if (unknowns == 0) return;
    std::vector<Triplet> triplets = wire_triplets;
    Eigen::VectorXd dummy_rhs = Eigen::VectorXd::Zero(unknowns);
    Vector zero_src = Vector::Zero(n);
    Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(unknowns);
    assemble_devices(zero_u, zero_src, /*at_zero=*/true, triplets, dummy_rhs);
    a.resize(unknowns, unknowns);
    a.setFromTriplets(triplets.begin(), triplets.end());
    if (use_direct) {
        if (!pattern_ready) {
            ldlt.analyzePattern(a);
            pattern_ready = true;
        }
        ldlt.factorize(a);
        if (ldlt.info() != Eigen::Success) throw SolverError("sparse factorization failed");
    } else {
        ic.compute(a);
        if (ic.info() != Eigen::Success) throw SolverError("incomplete Cholesky failed");
    }
}

Eigen::VectorXd CrossbarSolver::Impl::solve_linear_system(const SpMat& mat, const Eigen::VectorXd& rhs,
                                                          bool reuse_member) const {
    if (use_direct) {
        if (reuse_member) return ldlt.solve(rhs);
        Eigen::SimplicialLDLT<SpMat> local;
        local.compute(mat);
        if (local.info() != Eigen::Success) throw SolverError("sparse factorization failed");
        return local.solve(rhs);
    }
    // Preconditioned conjugate gradient; falls back to a direct solve when it
    // stalls (extreme conductance ratios).
    const Eigen::IncompleteCholesky<double>* precond = &ic;
    Eigen::IncompleteCholesky<double> local_ic;
    if (!reuse_member) {
        local_ic.compute(mat);
        if (local_ic.info() != Eigen::Success) throw SolverError("incomplete Cholesky failed");
        precond = &local_ic;
    }
    const double b_norm = rhs.norm();
    if (b_norm == 0.0) return Eigen::VectorXd::Zero(rhs.size());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
    Eigen::VectorXd r = rhs;
    Eigen::VectorXd z = precond->solve(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    const int max_iters = static_cast<int>(10 * rhs.size()) + 100;
    for (int k = 0; k < max_iters; ++k) {
        const Eigen::VectorXd ap = mat * p;
        const double alpha = rz / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        if (r.norm() <= opt.cg_tol * b_norm) return x;
        z = precond->solve(r);
        const double rz_next = r.dot(z);
        p = z + (rz_next / rz) * p;
        rz = rz_next;
    }
    Eigen::SimplicialLDLT<SpMat> direct;
    direct.compute(mat);
    if (direct.info() != Eigen::Success) throw SolverError("conjugate gradient stalled and direct fallback failed");
    return direct.solve(rhs);
}

// True nonlinear KCL mismatch at each unknown node (A, net inflow).
Eigen::VectorXd CrossbarSolver::Impl::kcl_residual(const Eigen::VectorXd& u, const Vector& v_src) const {
    Eigen::VectorXd res = Eigen::VectorXd::Zero(unknowns);
    for (const Branch& br : wires) {
        const double i_ab = br.cond * (potential(br.a, u, v_src) - potential(br.b, u, v_src));
        if (br.a >= 0) res[br.a] -= i_ab;
        if (br.b >= 0) res[br.b] += i_ab;
    }
    const double beta = cfg.device_nonlinearity_beta;
    const double r_t = cfg.r_transistor;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const int c = cell(i, j);
            const int a = top_ep[static_cast<std::size_t>(c)];
            const int b = bot_ep[static_cast<std::size_t>(c)];
            if (a < 0 && b < 0) continue;
            const double drop = potential(a, u, v_src) - potential(b, u, v_src);
            const double i_ab = device_branch_response(g(i, j), beta, r_t, drop).current;
            if (a >= 0) res[a] -= i_ab;
            if (b >= 0) res[b] += i_ab;
        }
    }
    return res;
}

SolveResult CrossbarSolver::Impl::finish(const Eigen::VectorXd& u, const Vector& v_src,
                                         int newton_iters) const {
    SolveResult out;
    out.newton_iterations = newton_iters;
    out.top_voltages.resize(n, m);
    out.bottom_voltages.resize(n, m);
    out.device_currents.resize(n, m);
    out.device_drops.resize(n, m);
    const double beta = cfg.device_nonlinearity_beta;
    const double r_t = cfg.r_transistor;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const int c = cell(i, j);
            const double vt = potential(top_ep[static_cast<std::size_t>(c)], u, v_src);
            const double vb = potential(bot_ep[static_cast<std::size_t>(c)], u, v_src);
            out.top_voltages(i, j) = vt;
            out.bottom_voltages(i, j) = vb;
            out.device_drops(i, j) = vt - vb;
            out.device_currents(i, j) = device_branch_response(g(i, j), beta, r_t, vt - vb).current;
        }
    }
    out.column_currents.resize(m);
    for (int j = 0; j < m; ++j) {
        if (cfg.r_out > 0.0) {
            out.column_currents[j] =
                potential(col_sense_ep[static_cast<std::size_t>(j)], u, v_src) / cfg.r_out;
        } else {
            out.column_currents[j] = out.device_currents.col(j).sum();
        }
    }
    return out;
}

CrossbarSolver::CrossbarSolver(const CrossbarConfig& cfg, const ConductanceMatrix& g,
                               const SolverOptions& opt)
    : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    if (g.rows() != cfg.rows || g.cols() != cfg.cols) {
        throw std::invalid_argument("conductance matrix does not match crossbar dimensions");
    }
    impl_->cfg = cfg;
    impl_->opt = opt;
    impl_->n = cfg.rows;
    impl_->m = cfg.cols;
    impl_->g = g.values();
    impl_->build_topology();
    impl_->refactor();
}

CrossbarSolver::~CrossbarSolver() = default;
CrossbarSolver::CrossbarSolver(CrossbarSolver&&) noexcept = default;
CrossbarSolver& CrossbarSolver::operator=(CrossbarSolver&&) noexcept = default;

void CrossbarSolver::set_conductances(const ConductanceMatrix& g) {
    if (g.rows() != impl_->n || g.cols() != impl_->m) {
        throw std::invalid_argument("conductance matrix does not match crossbar dimensions");
    }
    impl_->g = g.values();
    impl_->refactor();
}

const Eigen::SparseMatrix<double>& CrossbarSolver::system_matrix() const { return impl_->a; }

int CrossbarSolver::unknown_count() const { return impl_->unknowns; }

SolveResult CrossbarSolver::solve(const Vector& x) const {
    Impl& s = *impl_;
    if (x.size() != s.n) throw std::invalid_argument("input length != crossbar rows");
    const Vector v_src = x * s.cfg.v_read;

    if (s.unknowns == 0) return s.finish(Eigen::VectorXd(), v_src, 0);

    // Zero-bias tangent solve; exact for beta = 0, initial guess otherwise.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s.unknowns);
    for (const Impl::RhsTerm& t : s.wire_rhs) rhs[t.u] += t.cond * v_src[t.row];
    // Devices tied straight to a source rail contribute to the rhs as well.
    {
        std::vector<Triplet> scratch;  // pattern already in the factorized matrix
        Eigen::VectorXd dev_rhs = Eigen::VectorXd::Zero(s.unknowns);
        Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(s.unknowns);
        s.assemble_devices(zero_u, v_src, /*at_zero=*/true, scratch, dev_rhs);
        rhs += dev_rhs;
    }
    Eigen::VectorXd u = s.solve_linear_system(s.a, rhs, /*reuse_member=*/true);

    int newton_iters = 0;
    if (s.cfg.device_nonlinearity_beta == 0.0) {
        // Iterative refinement until the KCL bound holds.
        for (int pass = 0; pass < 4; ++pass) {
            const Eigen::VectorXd res = s.kcl_residual(u, v_src);
            if (res.size() == 0 || res.cwiseAbs().maxCoeff() <= s.opt.kcl_tol) {
                return s.finish(u, v_src, 0);
            }
            u += s.solve_linear_system(s.a, res, /*reuse_member=*/true);
        }
        const double worst = s.kcl_residual(u, v_src).cwiseAbs().maxCoeff();
        if (worst > s.opt.kcl_tol) {
            throw SolverError("linear solve failed to meet KCL tolerance (residual " +
                              format_full(worst) + " A)");
        }
        return s.finish(u, v_src, 0);
    }

    // Newton iteration on the nonlinear device laws.
    Eigen::VectorXd residual = s.kcl_residual(u, v_src);
    double res_norm = residual.norm();
    SpMat tangent;
    while (newton_iters < s.opt.max_newton_iters) {
        ++newton_iters;
        std::vector<Triplet> triplets = s.wire_triplets;
        Eigen::VectorXd newton_rhs = Eigen::VectorXd::Zero(s.unknowns);
        for (const Impl::RhsTerm& t : s.wire_rhs) newton_rhs[t.u] += t.cond * v_src[t.row];
        s.assemble_devices(u, v_src, /*at_zero=*/false, triplets, newton_rhs);
        tangent.resize(s.unknowns, s.unknowns);
        tangent.setFromTriplets(triplets.begin(), triplets.end());
        const Eigen::VectorXd u_next = s.solve_linear_system(tangent, newton_rhs, /*reuse_member=*/false);
        Eigen::VectorXd step = u_next - u;

        double damping = 1.0;
        Eigen::VectorXd u_trial = u + step;
        Eigen::VectorXd res_trial = s.kcl_residual(u_trial, v_src);
        if (res_trial.norm() > res_norm) {
            damping = 0.5;
            u_trial = u + damping * step;
            res_trial = s.kcl_residual(u_trial, v_src);
        }
        u = u_trial;
        residual = res_trial;
        res_norm = residual.norm();

        const double max_step = (damping * step).cwiseAbs().maxCoeff();
        const double max_res = residual.cwiseAbs().maxCoeff();
        if (max_step <= s.opt.newton_tol && max_res <= s.opt.kcl_tol) {
            return s.finish(u, v_src, newton_iters);
        }
    }
    throw SolverError("newton did not converge in " + std::to_string(s.opt.max_newton_iters) +
                      " iterations (KCL residual " + format_full(residual.cwiseAbs().maxCoeff()) +
                      " A)");
}

SolveResult solve_crossbar(const CrossbarConfig& cfg, const ConductanceMatrix& g, const Vector& x,
                           const SolverOptions& opt) {
    return CrossbarSolver(cfg, g, opt).solve(x);
}

std::vector<SolveResult> solve_batch(const CrossbarConfig& cfg, const ConductanceMatrix& g,
                                     const Matrix& x_rows, const SolverOptions& opt) {
    CrossbarSolver solver(cfg, g, opt);
    std::vector<SolveResult> out;
    out.reserve(static_cast<std::size_t>(x_rows.rows()));
    for (Eigen::Index r = 0; r < x_rows.rows(); ++r) {
        out.push_back(solver.solve(x_rows.row(r).transpose()));
    }
    return out;
}

}  // namespace xbar
