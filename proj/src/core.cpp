#include "xbar/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace xbar {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

void CrossbarConfig::validate() const {
    require(rows >= 1 && cols >= 1, "crossbar dimensions must be >= 1");
    require(std::isfinite(r_on) && std::isfinite(r_off) && r_on > 0.0 && r_on < r_off,
            "require 0 < r_on < r_off");
    require(r_wire >= 0.0 && r_in >= 0.0 && r_out >= 0.0 && r_transistor >= 0.0,
            "parasitic resistances must be >= 0");
    require(std::isfinite(r_wire) && std::isfinite(r_in) && std::isfinite(r_out) &&
                std::isfinite(r_transistor),
            "parasitic resistances must be finite");
    require(std::isfinite(v_read) && v_read > 0.0, "v_read must be > 0");
    require(std::isfinite(device_nonlinearity_beta) && device_nonlinearity_beta >= 0.0,
            "device nonlinearity beta must be >= 0");
}

ConductanceBounds derived_bounds(const CrossbarConfig& cfg) {
    cfg.validate();
    return {cfg.lgs(), cfg.hgs()};
}

ValueMatrix::ValueMatrix(Matrix entries) : entries_(std::move(entries)) {
    require(entries_.allFinite(), "ValueMatrix entries must be finite");
}

ConductanceMatrix::ConductanceMatrix(Matrix siemens) : siemens_(std::move(siemens)) {
    require(siemens_.allFinite(), "ConductanceMatrix entries must be finite");
}

std::string to_string(StuckKind kind) {
    switch (kind) {
        case StuckKind::kStuckOn: return "StuckOn";
        case StuckKind::kStuckOff: return "StuckOff";
        case StuckKind::kOther: return "Other";
    }
    return "Other";
}

StuckKind stuck_kind_from_string(const std::string& s) {
    if (s == "StuckOn") return StuckKind::kStuckOn;
    if (s == "StuckOff") return StuckKind::kStuckOff;
    if (s == "Other") return StuckKind::kOther;
    throw std::invalid_argument("unknown stuck kind: " + s);
}

DefectMap::DefectMap(std::vector<DefectCell> cells) : cells_(std::move(cells)) {
    std::sort(cells_.begin(), cells_.end(), [](const DefectCell& a, const DefectCell& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        require(cells_[i].row >= 0 && cells_[i].col >= 0, "defect indices must be >= 0");
        require(std::isfinite(cells_[i].stuck_conductance), "stuck conductance must be finite");
        if (i > 0) {
            require(cells_[i].row != cells_[i - 1].row || cells_[i].col != cells_[i - 1].col,
                    "duplicate defect cell");
        }
    }
}

const DefectCell* DefectMap::find(int row, int col) const {
    auto it = std::lower_bound(cells_.begin(), cells_.end(), std::pair{row, col},
                               [](const DefectCell& c, const std::pair<int, int>& key) {
                                   return std::pair{c.row, c.col} < key;
                               });
    if (it != cells_.end() && it->row == row && it->col == col) return &*it;
    return nullptr;
}

Permutation::Permutation(std::vector<int> order) : order_(std::move(order)) {
    const int n = static_cast<int>(order_.size());
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int v : order_) {
        require(v >= 0 && v < n, "permutation entry out of range");
        require(!seen[static_cast<std::size_t>(v)], "permutation entry repeated");
        seen[static_cast<std::size_t>(v)] = 1;
    }
}

Permutation Permutation::identity(int n) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    return Permutation(std::move(order));
}

bool Permutation::is_identity() const {
    for (int i = 0; i < size(); ++i) {
        if (order_[static_cast<std::size_t>(i)] != i) return false;
    }
    return true;
}

Permutation Permutation::inverse() const {
    std::vector<int> inv(order_.size());
    for (int i = 0; i < size(); ++i) inv[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])] = i;
    return Permutation(std::move(inv));
}

Permutation compose(const Permutation& first, const Permutation& second) {
    if (first.size() != second.size()) throw std::invalid_argument("permutation size mismatch");
    std::vector<int> order(static_cast<std::size_t>(first.size()));
    for (int i = 0; i < first.size(); ++i) order[static_cast<std::size_t>(i)] = first[second[i]];
    return Permutation(std::move(order));
}

RngSeed RngSeed::derive(std::uint64_t tag) const {
    return {seed, splitmix64(splitmix64(stream) ^ splitmix64(tag ^ 0xA5A5A5A5A5A5A5A5ULL))};
}

Rng::Rng(RngSeed seed) {
    std::seed_seq seq{
        static_cast<std::uint32_t>(seed.seed), static_cast<std::uint32_t>(seed.seed >> 32),
        static_cast<std::uint32_t>(seed.stream), static_cast<std::uint32_t>(seed.stream >> 32)};
    engine_.seed(seq);
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    // 53 high bits -> [0, 1) on the usual dyadic grid.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian(double sigma) {
    if (has_spare_) {
        has_spare_ = false;
        return spare_ * sigma;
    }
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a) * sigma;
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n >= 1");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::int64_t>(v % un);
}

Vector Rng::uniform_vector(int n, double lo, double hi) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
}

Matrix Rng::uniform_matrix(int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    }
    return m;
}

Vector ideal_vmm(const Vector& x, const ConductanceMatrix& g, double v_read) {
    if (x.size() != g.rows()) throw std::invalid_argument("ideal_vmm: x length != G rows");
    return g.values().transpose() * (x * v_read);
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    if (s.empty()) throw std::invalid_argument("empty number");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw std::invalid_argument("bad number: " + s);
    return v;
}

}  // namespace xbar
