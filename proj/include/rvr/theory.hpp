#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvr/adam.hpp"
#include "rvr/losses.hpp"
#include "rvr/matrix.hpp"
#include "rvr/model.hpp"
#include "rvr/rng.hpp"

namespace rvr {

// ---- grid cells over [-B,B]^p ----

struct GridSpec {
    std::size_t n = 1;   // cells per axis
    double B = 1.0;      // half-width
    std::size_t p = 1;   // dimension

    GridSpec() = default;
    GridSpec(std::size_t n_, double B_, std::size_t p_) : n(n_), B(B_), p(p_) {
        if (n < 1 || B <= 0.0 || p < 1) throw std::invalid_argument("bad grid spec");
    }

    std::size_t cell_count() const {
        std::size_t c = 1;
        for (std::size_t j = 0; j < p; ++j) c *= n;
        return c;
    }

    double edge(std::size_t i) const {  // i-th axis boundary, i in [0, n]
        return -B + 2.0 * B * static_cast<double>(i) / static_cast<double>(n);
    }

    // Per-axis cell of a coordinate; points exactly on an interior edge go to
    // the higher-index cell. Returns -1 outside [-B, B].
    long axis_cell(double x) const {
        if (x < -B || x > B) return -1;
        long c = static_cast<long>(std::floor((x + B) * static_cast<double>(n) / (2.0 * B)));
        if (c == static_cast<long>(n)) c = static_cast<long>(n) - 1;  // x == B
        return c;
    }

    // Flat cell index (axis 0 fastest) or -1 if outside the box.
    long cell_of(const double* x) const {
        long idx = 0, stride = 1;
        for (std::size_t j = 0; j < p; ++j) {
            long c = axis_cell(x[j]);
            if (c < 0) return -1;
            idx += c * stride;
            stride *= static_cast<long>(n);
        }
        return idx;
    }

    std::vector<std::size_t> unflatten(std::size_t cell) const {
        std::vector<std::size_t> mi(p);
        for (std::size_t j = 0; j < p; ++j) {
            mi[j] = cell % n;
            cell /= n;
        }
        return mi;
    }
};

struct DensityEstimate {
    GridSpec grid;
    Matrix masses;                  // N x n^p
    std::vector<double> tail_mass;  // per domain
};

inline DensityEstimate estimate_density(const std::vector<Matrix>& samples_per_domain,
                                        const GridSpec& grid) {
    DensityEstimate est;
    est.grid = grid;
    est.masses = Matrix(samples_per_domain.size(), grid.cell_count());
    est.tail_mass.assign(samples_per_domain.size(), 0.0);
    for (std::size_t d = 0; d < samples_per_domain.size(); ++d) {
        const Matrix& s = samples_per_domain[d];
        if (s.rows == 0) throw std::invalid_argument("estimate_density: empty domain " +
                                                     std::to_string(d));
        if (s.cols != grid.p) throw ShapeError("estimate_density: sample dim != grid.p");
        double w = 1.0 / static_cast<double>(s.rows);
        for (std::size_t i = 0; i < s.rows; ++i) {
            long c = grid.cell_of(s.row(i));
            if (c < 0)
                est.tail_mass[d] += w;
            else
                est.masses(d, static_cast<std::size_t>(c)) += w;
        }
    }
    return est;
}

struct RegionAssignment {
    std::vector<std::size_t> cell_to_domain;
};

struct PartitionResult {
    double value = 0.0;   // cellwise-max sum inside the box
    double lower = 0.0;   // = value (tail contributes nothing in the worst case)
    double upper = 0.0;   // value + total tail mass
    RegionAssignment assignment;
};

// Exact for the discretized problem: the sup over disjoint partitions
// decomposes cellwise. Lowest domain index wins ties.
inline PartitionResult partition_value(const DensityEstimate& est) {
    PartitionResult r;
    r.assignment.cell_to_domain.resize(est.masses.cols);
    for (std::size_t c = 0; c < est.masses.cols; ++c) {
        std::size_t best = 0;
        for (std::size_t d = 1; d < est.masses.rows; ++d)
            if (est.masses(d, c) > est.masses(best, c)) best = d;
        r.assignment.cell_to_domain[c] = best;
        r.value += est.masses(best, c);
    }
    double tail = 0.0;
    for (double t : est.tail_mass) tail += t;
    r.lower = r.value;
    r.upper = r.value + tail;
    return r;
}

struct TvRelation {
    double tv = 0.0;
    double value_minus_one = 0.0;
};

inline TvRelation tv_relation_check(const DensityEstimate& est) {
    if (est.masses.rows != 2) throw std::invalid_argument("tv_relation_check: N must be 2");
    if (est.tail_mass[0] + est.tail_mass[1] > 1e-9)
        throw std::invalid_argument("tv_relation_check: non-negligible tail mass");
    TvRelation r;
    for (std::size_t c = 0; c < est.masses.cols; ++c)
        r.tv += 0.5 * std::abs(est.masses(0, c) - est.masses(1, c));
    r.value_minus_one = partition_value(est).value - 1.0;
    if (std::abs(r.value_minus_one - r.tv) > 1e-9)
        throw std::logic_error("tv_relation_check: value - 1 != tv on discretized masses");
    return r;
}

struct BoundaryInteriorCounts {
    std::vector<std::size_t> boundary;  // |M_{i,1}| per domain
    std::vector<std::size_t> interior;  // |M_{i,2}| per domain
};

// Corner test with corners pulled fractionally into the cell interior, so a
// region touching a cell only along a closed face claims neither set.
inline BoundaryInteriorCounts boundary_interior_counts(
    const GridSpec& grid,
    const std::vector<std::function<bool(const std::vector<double>&)>>& region_predicates) {
    BoundaryInteriorCounts out;
    out.boundary.assign(region_predicates.size(), 0);
    out.interior.assign(region_predicates.size(), 0);
    double shrink = 1e-9 * (2.0 * grid.B / static_cast<double>(grid.n));
    std::size_t corners = static_cast<std::size_t>(1) << grid.p;
    for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
        std::vector<std::size_t> mi = grid.unflatten(cell);
        for (std::size_t d = 0; d < region_predicates.size(); ++d) {
            std::size_t inside = 0;
            for (std::size_t mask = 0; mask < corners; ++mask) {
                std::vector<double> pt(grid.p);
                for (std::size_t j = 0; j < grid.p; ++j)
                    pt[j] = (mask >> j) & 1 ? grid.edge(mi[j] + 1) - shrink
                                            : grid.edge(mi[j]) + shrink;
                if (region_predicates[d](pt)) ++inside;
            }
            if (inside == corners)
                ++out.interior[d];
            else if (inside > 0)
                ++out.boundary[d];
        }
    }
    return out;
}

// ---- constructive discriminator head ----

inline constexpr std::size_t kUnassignedCell = static_cast<std::size_t>(-1);

struct ConstructiveHead {
    Matrix w;               // total_rows x p
    std::vector<double> b;  // total_rows
};

// Affine rows such that each cell's assigned row is the strict argmax on the
// cell's interior. cell_to_row maps flat cell index -> row id (distinct per
// cell, kUnassignedCell allowed); unclaimed rows get (0, -1e6).
inline ConstructiveHead constructive_head(const GridSpec& grid,
                                          const std::vector<std::size_t>& cell_to_row,
                                          std::size_t total_rows) {
    if (grid.p != 1 && grid.p != 2)
        throw std::invalid_argument("constructive_head: p must be 1 or 2");
    if (cell_to_row.size() != grid.cell_count())
        throw std::invalid_argument("constructive_head: assignment size != cell count");
    std::vector<bool> used(total_rows, false);
    for (std::size_t r : cell_to_row) {
        if (r == kUnassignedCell) continue;
        if (r >= total_rows || used[r])
            throw std::invalid_argument("constructive_head: row ids must be distinct and < rows");
        used[r] = true;
    }
    ConstructiveHead head;
    head.w = Matrix(total_rows, grid.p);
    head.b.assign(total_rows, -1e6);

    double n = static_cast<double>(grid.n);
    double step = std::numbers::pi / (2.0 * (n + 1.0));
    auto slope = [&](std::size_t i) { return static_cast<double>(i + 1) * step; };

    // per-axis-cell slope/intercept along axis 0 (the p=1 recursion)
    std::vector<double> b1(grid.n);
    b1[0] = grid.B * slope(0);
    for (std::size_t i = 1; i < grid.n; ++i)
        b1[i] = (slope(i - 1) - slope(i)) * grid.edge(i) + b1[i - 1];

    for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
        std::size_t row = cell_to_row[cell];
        if (row == kUnassignedCell) continue;
        std::vector<std::size_t> mi = grid.unflatten(cell);
        head.w(row, 0) = slope(mi[0]);
        double b = b1[mi[0]];
        if (grid.p == 2) {
            head.w(row, 1) = slope(mi[1]);
            // continuity across horizontal cell faces
            for (std::size_t j = 1; j <= mi[1]; ++j) b -= step * grid.edge(j);
        }
        head.b[row] = b;
    }
    return head;
}

// ---- analytic 1-D representation-space densities ----

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct Density1D {
    enum class Kind { Gaussian, Uniform };
    Kind kind = Kind::Gaussian;
    double a = 0.0;  // mean (Gaussian) or lower end (Uniform)
    double b = 1.0;  // stddev (Gaussian) or upper end (Uniform)

    double cdf(double x) const {
        if (kind == Kind::Gaussian) return normal_cdf((x - a) / b);
        if (x <= a) return 0.0;
        if (x >= b) return 1.0;
        return (x - a) / (b - a);
    }
    double mass(double lo, double hi) const { return cdf(hi) - cdf(lo); }
    double sample(Rng& rng) const {
        return kind == Kind::Gaussian ? a + b * rng.gaussian() : rng.uniform(a, b);
    }
};

// Partition value of analytic base densities: fine-grid cellwise max with end
// cells extended to +-infinity.
inline double analytic_partition_value(const std::vector<Density1D>& bases,
                                       std::size_t cells = 1 << 14, double B = 40.0) {
    double value = 0.0;
    GridSpec grid(cells, B, 1);
    for (std::size_t c = 0; c < cells; ++c) {
        double lo = c == 0 ? -std::numeric_limits<double>::infinity() : grid.edge(c);
        double hi = c + 1 == cells ? std::numeric_limits<double>::infinity() : grid.edge(c + 1);
        double best = 0.0;
        for (const auto& d : bases) best = std::max(best, d.mass(lo, hi));
        value += best;
    }
    return value;
}

// m_k and the high-probability domain set threshold of the non-asymptotic bound
inline long compute_m_k(std::size_t k, std::size_t h_k) {
    if (h_k == 0) throw std::invalid_argument("m_k: |H_k| must be positive");
    double kk = static_cast<double>(k);
    double v = std::pow(kk, 0.75) -
               std::sqrt((kk * std::log(static_cast<double>(h_k)) + std::pow(kk, 0.75)) /
                         std::numbers::sqrt2);
    long m = static_cast<long>(std::ceil(v));
    if (m <= 0)
        throw std::invalid_argument("m_k infeasible: k=" + std::to_string(k) +
                                    " too small for |H_k|=" + std::to_string(h_k));
    return m;
}

inline double h_k_threshold(std::size_t k) {
    return 1.0 / std::pow(static_cast<double>(k), 0.25);
}

struct LimitTraceRow {
    std::size_t k = 0;
    double constructive_value = 0.0;
    double trained_value = 0.0;
    double oracle_value = 0.0;
    std::uint64_t seed = 0;
};

inline std::string limit_trace_to_csv(const std::vector<LimitTraceRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "k,constructive_value,trained_value,oracle_value,seed\n";
    for (const auto& r : rows)
        out << r.k << ',' << r.constructive_value << ',' << r.trained_value << ','
            << r.oracle_value << ',' << r.seed << '\n';
    return out.str();
}

namespace detail {

// smallest half-width with total base tail mass <= eps
inline double tail_half_width(const std::vector<Density1D>& bases, double eps) {
    auto tail = [&](double B) {
        double t = 0.0;
        for (const auto& d : bases) t += 1.0 - d.mass(-B, B);
        return t;
    };
    double lo = 1e-3, hi = 1.0;
    while (tail(hi) > eps && hi < 1e6) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (tail(mid) <= eps ? hi : lo) = mid;
    }
    return hi;
}

// Softmax-surrogate gradient ascent over (W, B) with the base structure
// fixed; returns the Monte Carlo 0-1 adversary value on fresh samples.
inline double train_head_value(const std::vector<Density1D>& bases,
                               const std::vector<std::size_t>& ids, Rng& rng) {
    std::size_t k = ids.size(), n_s = 100;
    std::vector<double> w(k), b(k, 0.0);
    for (auto& v : w) v = 0.1 * rng.gaussian();
    std::vector<std::vector<double>> z(k);
    for (std::size_t i = 0; i < k; ++i) {
        z[i].resize(n_s);
        for (auto& v : z[i]) v = bases[ids[i]].sample(rng);
    }
    double lr = 0.5;
    std::vector<double> logits(k), gw(k), gb(k);
    for (std::size_t it = 0; it < 200; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (double zv : z[i]) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < k; ++j) {
                    logits[j] = w[j] * zv + b[j];
                    mx = std::max(mx, logits[j]);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    logits[j] = std::exp(logits[j] - mx);
                    denom += logits[j];
                }
                for (std::size_t j = 0; j < k; ++j) {
                    double g = logits[j] / denom - (j == i ? 1.0 : 0.0);  // CE gradient
                    g /= static_cast<double>(n_s * k);
                    gw[j] += g * zv;
                    gb[j] += g;
                }
            }
        for (std::size_t j = 0; j < k; ++j) {
            w[j] -= lr * gw[j];
            b[j] -= lr * gb[j];
        }
    }
    double value = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t hits = 0;
        for (std::size_t s = 0; s < n_s; ++s) {
            double zv = bases[ids[i]].sample(rng);
            for (std::size_t j = 0; j < k; ++j) logits[j] = w[j] * zv + b[j];
            if (argmax_pi_k(logits, rng) == i) ++hits;
        }
        value += static_cast<double>(hits) / static_cast<double>(n_s);
    }
    return value;
}

}  // namespace detail

// For each k in the schedule: draw k domain ids from mu, build the m_k-cell
// grid with half-width chosen so total tail <= 1/sqrt(k), assign each cell to
// a distinct drawn id of the cellwise-max base (draw order; falls back to any
// remaining id if that base's draws are exhausted), and evaluate the
// constructive head's exact adversary value against the trained-head and
// partition-oracle values.
inline std::vector<LimitTraceRow> adversary_limit_experiment(
    const std::vector<Density1D>& bases, const std::vector<double>& mu,
    const std::vector<std::size_t>& k_schedule, std::uint64_t seed) {
    if (k_schedule.empty()) throw std::invalid_argument("empty k schedule");
    if (bases.size() != mu.size()) throw std::invalid_argument("mu size != base count");
    Rng rng(seed);
    double oracle = analytic_partition_value(bases);
    std::vector<LimitTraceRow> rows;

    for (std::size_t k : k_schedule) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < k; ++i) {
            double u = rng.uniform(), acc = 0.0;
            std::size_t idx = mu.size() - 1;
            for (std::size_t j = 0; j < mu.size(); ++j) {
                acc += mu[j];
                if (u < acc) {
                    idx = j;
                    break;
                }
            }
            ids.push_back(idx);
        }

        std::size_t h_k = 0, support = 0;
        for (double m : mu) {
            if (m >= h_k_threshold(k)) ++h_k;
            if (m > 0.0) ++support;
        }
        if (h_k == 0) h_k = support;
        std::size_t cells = static_cast<std::size_t>(compute_m_k(k, h_k));
        double B = detail::tail_half_width(bases, 1.0 / std::sqrt(static_cast<double>(k)));
        GridSpec grid(cells, B, 1);

        // drawn ids grouped by base, in draw order
        std::vector<std::vector<std::size_t>> ids_of_base(bases.size());
        for (std::size_t i = 0; i < k; ++i) ids_of_base[ids[i]].push_back(i);
        std::vector<std::size_t> next_of_base(bases.size(), 0);

        double constructive = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            double clo = grid.edge(c), chi = grid.edge(c + 1);
            // win region of this cell's row under the constructive head
            double wlo = c == 0 ? -std::numeric_limits<double>::infinity() : clo;
            double whi = c + 1 == cells ? std::numeric_limits<double>::infinity() : chi;
            std::size_t best = bases.size();
            double best_mass = -1.0;
            for (std::size_t d = 0; d < bases.size(); ++d) {
                if (next_of_base[d] >= ids_of_base[d].size()) continue;
                double m = bases[d].mass(clo, chi);
                if (m > best_mass) {
                    best_mass = m;
                    best = d;
                }
            }
            if (best == bases.size()) continue;  // every drawn id consumed
            ++next_of_base[best];
            constructive += bases[best].mass(wlo, whi);
        }

        LimitTraceRow row;
        row.k = k;
        row.seed = seed;
        row.constructive_value = constructive;
        row.oracle_value = oracle;
        row.trained_value = detail::train_head_value(bases, ids, rng);
        rows.push_back(row);
    }
    return rows;
}

// ---- bound calculators ----

struct BoundInputs {
    std::size_t k = 0, N = 0;
    std::vector<double> n_i;
    double lambda = 0.0;
    double t1 = 0.0, t2 = 0.0;
    double c = 1.0;  // universal constant of the bound, user-settable
    double V_Lambda = 0.0, V_Xi = 0.0;
    double B_rho = 0.0;
    double B_of_inv_sqrt_k = 0.0;
    std::size_t H_k = 0;
    double boundary_cell_count = 0.0;  // sum over i in H_k of sup |M_{i,1}|
    std::size_t p = 1;
};

struct BoundReport {
    double leading = 0.0;
    double term_I = 0.0;
    double term_II = 0.0;
    double term_III = 0.0;
    long m_k = 0;
    double V_Ck = 0.0;
    double total = 0.0;
};

// Natural logarithms throughout.
inline BoundReport bound_rhs(const BoundInputs& in) {
    BoundReport r;
    double k = static_cast<double>(in.k);
    r.m_k = compute_m_k(in.k, in.H_k);
    r.V_Ck = k * in.V_Xi * std::pow(std::log(in.V_Xi), 2.0);
    r.leading = (1.0 + k * in.lambda) * in.t1 + 2.0 * in.lambda / std::sqrt(k) +
                static_cast<double>(in.N) * in.t2;
    r.term_I = in.lambda * std::max(static_cast<double>(in.N) - static_cast<double>(in.H_k), 0.0);
    double cells_per_axis = std::floor(std::pow(static_cast<double>(r.m_k),
                                                1.0 / static_cast<double>(in.p)));
    r.term_II = 2.0 * in.lambda * in.B_rho *
                std::pow(in.B_of_inv_sqrt_k, static_cast<double>(in.p)) /
                std::pow(cells_per_axis, static_cast<double>(in.p)) * in.boundary_cell_count;
    for (double n : in.n_i)
        r.term_III += (k * std::sqrt(r.V_Ck * std::log(n / r.V_Ck)) +
                       std::sqrt(in.V_Lambda * std::log(n / in.V_Lambda))) /
                      std::sqrt(n);
    r.term_III *= 2.0 * in.c / k;
    r.total = r.leading + r.term_I + r.term_II + r.term_III;
    return r;
}

struct WorstCaseBound {
    double bound = 0.0;
    double vc_term = 0.0;
    std::string probability_floor;
};

inline WorstCaseBound worst_case_bound_from_terms(double p_l, double beta_hat, double t,
                                                  double vc_term, double delta,
                                                  std::size_t k = 0,
                                                  const std::vector<double>& n_i = {}) {
    if (p_l <= 0.0 || p_l >= 1.0) throw std::invalid_argument("p_l must be in (0,1)");
    WorstCaseBound r;
    r.vc_term = vc_term;
    r.bound = (2.0 / p_l) * (beta_hat + t + vc_term) + delta;
    std::ostringstream prob;
    prob.precision(12);
    prob << "1 - exp(-" << k << "^2*" << p_l << "^2/2)/" << p_l;
    for (double n : n_i) prob << " - 4*exp(-" << n << "*" << t << "^2)";
    r.probability_floor = prob.str();
    return r;
}

inline WorstCaseBound worst_case_bound(double p_l, double delta, double beta_hat, double t,
                                       double c, double V_Lambda, double n_min,
                                       std::size_t k = 0, const std::vector<double>& n_i = {}) {
    if (n_min <= V_Lambda)
        throw std::invalid_argument("worst_case_bound requires n_min > V_Lambda");
    double vc = c * std::sqrt(V_Lambda * std::log(n_min / V_Lambda) / n_min);
    return worst_case_bound_from_terms(p_l, beta_hat, t, vc, delta, k, n_i);
}

// ---- Moore-Penrose pseudoinverse via one-sided Jacobi SVD ----

struct PseudoInverse {
    Matrix pinv;          // n x m for an m x n input
    Matrix kernel_basis;  // n x (n - rank), orthonormal columns
    std::vector<double> singular_values;
    std::size_t rank = 0;
};

namespace detail {

// One-sided Jacobi on an m x n matrix with m >= n: A -> U*diag(s), V
// accumulated so that A_in = U diag(s) V^T.
inline void jacobi_svd(Matrix& a, Matrix& v, std::vector<double>& s) {
    std::size_t n = a.cols;
    v = identity(n);
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < a.rows; ++r) {
                    alpha += a(r, i) * a(r, i);
                    beta += a(r, j) * a(r, j);
                    gamma += a(r, i) * a(r, j);
                }
                if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t), sn = c * t;
                for (std::size_t r = 0; r < a.rows; ++r) {
                    double ai = a(r, i), aj = a(r, j);
                    a(r, i) = c * ai - sn * aj;
                    a(r, j) = sn * ai + c * aj;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    double vi = v(r, i), vj = v(r, j);
                    v(r, i) = c * vi - sn * vj;
                    v(r, j) = sn * vi + c * vj;
                }
            }
        if (!rotated) break;
    }
    s.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        double norm = 0.0;
        for (std::size_t r = 0; r < a.rows; ++r) norm += a(r, j) * a(r, j);
        s[j] = std::sqrt(norm);
        if (s[j] > 0.0)
            for (std::size_t r = 0; r < a.rows; ++r) a(r, j) /= s[j];
    }
}

}  // namespace detail

inline PseudoInverse pseudo_inverse(const Matrix& m_in) {
    bool transposed = m_in.rows < m_in.cols;
    Matrix a = transposed ? transpose(m_in) : m_in;  // rows >= cols
    Matrix v;
    std::vector<double> s;
    detail::jacobi_svd(a, v, s);  // a now holds U (thin)

    // m_in = U S V^T (or V S U^T when transposed); domain-side basis:
    const Matrix& domain_vecs = transposed ? a : v;   // columns in R^{cols(m_in)}
    const Matrix& range_vecs = transposed ? v : a;    // columns in R^{rows(m_in)}

    double smax = 0.0;
    for (double sv : s) smax = std::max(smax, sv);
    double thresh = 1e-10 * smax;

    PseudoInverse out;
    out.singular_values = s;
    out.pinv = Matrix(m_in.cols, m_in.rows);
    std::vector<bool> is_kernel(s.size(), false);
    for (std::size_t idx = 0; idx < s.size(); ++idx) {
        if (smax == 0.0 || s[idx] <= thresh) {
            is_kernel[idx] = true;
            continue;
        }
        ++out.rank;
        for (std::size_t i = 0; i < m_in.cols; ++i)
            for (std::size_t j = 0; j < m_in.rows; ++j)
                out.pinv(i, j) += domain_vecs(i, idx) * range_vecs(j, idx) / s[idx];
    }

    // kernel: zero-sigma domain vectors, completed to the full orthogonal
    // complement of the row space when the decomposition is rectangular
    std::size_t kdim = m_in.cols - out.rank;
    out.kernel_basis = Matrix(m_in.cols, kdim);
    std::size_t col = 0;
    std::vector<std::vector<double>> ortho;  // accumulated orthonormal set: row space + kernel
    for (std::size_t idx = 0; idx < s.size(); ++idx)
        if (!is_kernel[idx]) {
            std::vector<double> u(m_in.cols);
            for (std::size_t i = 0; i < m_in.cols; ++i) u[i] = domain_vecs(i, idx);
            ortho.push_back(std::move(u));
        }
    auto push_kernel = [&](std::vector<double> u) {
        for (const auto& o : ortho) {
            double dot = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * o[i];
            for (std::size_t i = 0; i < u.size(); ++i) u[i] -= dot * o[i];
        }
        double norm = 0.0;
        for (double x : u) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 0.5) return false;  // candidate lies (mostly) in the span already
        for (auto& x : u) x /= norm;
        for (std::size_t i = 0; i < u.size(); ++i) out.kernel_basis(i, col) = u[i];
        ortho.push_back(std::move(u));
        ++col;
        return true;
    };
    for (std::size_t idx = 0; idx < s.size() && col < kdim; ++idx)
        if (is_kernel[idx]) {
            std::vector<double> u(m_in.cols);
            for (std::size_t i = 0; i < m_in.cols; ++i) u[i] = domain_vecs(i, idx);
            push_kernel(std::move(u));
        }
    for (std::size_t e = 0; e < m_in.cols && col < kdim; ++e) {
        std::vector<double> u(m_in.cols, 0.0);
        u[e] = 1.0;
        push_kernel(std::move(u));
    }
    if (col != kdim) throw NumericalError("pseudo_inverse: kernel completion failed");
    return out;
}

// ---- invariance checker ----

struct LinearPhiDecomposition {
    std::vector<std::function<double(const std::vector<double>&)>> basis;  // Gamma, length m
    Matrix m_phi;  // s x m
};

struct InvarianceReport {
    double max_kernel_residual = 0.0;
    double adversary_value = 0.0;      // sum_i P(argmax psi(phi(x)) = i)
    double reconstructed_value = 0.0;  // sum_i P(Gamma + f in Mphi^- I_i(psi))
    double tolerance = 0.0;
    bool sides_agree = false;
    bool invariant = false;  // adversary value <= epsilon
};

inline InvarianceReport invariance_check(
    const LinearPhiDecomposition& decomp,
    const std::vector<std::function<std::vector<double>(Rng&)>>& domain_samplers,
    const Matrix& head_w, const std::vector<double>& head_b, double epsilon,
    std::size_t sample_count, Rng& rng) {
    std::size_t k = head_w.rows, s = decomp.m_phi.rows, m = decomp.m_phi.cols;
    if (head_w.cols != s) throw ShapeError("invariance_check: head width != s");
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            bool same = head_b[i] == head_b[j];
            for (std::size_t c = 0; same && c < s; ++c) same = head_w(i, c) == head_w(j, c);
            if (same) throw std::invalid_argument("invariance_check: tied head rows");
        }
    if (domain_samplers.size() != k)
        throw std::invalid_argument("invariance_check: one sampler per head row required");

    PseudoInverse pi = pseudo_inverse(decomp.m_phi);
    InvarianceReport rep;
    rep.tolerance = 3.0 / std::sqrt(static_cast<double>(sample_count));

    auto apply = [](const Matrix& mat, const std::vector<double>& v) {
        std::vector<double> out(mat.rows, 0.0);
        for (std::size_t i = 0; i < mat.rows; ++i) {
            const double* row = mat.row(i);
            for (std::size_t j = 0; j < mat.cols; ++j) out[i] += row[j] * v[j];
        }
        return out;
    };

    for (std::size_t dom = 0; dom < k; ++dom) {
        std::size_t adv_hits = 0, rec_hits = 0;
        for (std::size_t n = 0; n < sample_count; ++n) {
            std::vector<double> x = domain_samplers[dom](rng);
            std::vector<double> gamma(m);
            for (std::size_t j = 0; j < m; ++j) gamma[j] = decomp.basis[j](x);
            std::vector<double> phi = apply(decomp.m_phi, gamma);      // s
            std::vector<double> proj = apply(pi.pinv, phi);            // Mphi^- Mphi Gamma, in R^m
            std::vector<double> f(m);                                  // f = proj - Gamma
            for (std::size_t j = 0; j < m; ++j) f[j] = proj[j] - gamma[j];
            std::vector<double> mf = apply(decomp.m_phi, f);
            double norm = 0.0;
            for (double vv : mf) norm += vv * vv;
            rep.max_kernel_residual = std::max(rep.max_kernel_residual, std::sqrt(norm));

            std::vector<double> logits = apply(head_w, phi);
            for (std::size_t i = 0; i < k; ++i) logits[i] += head_b[i];
            if (argmax_pi_k(logits, rng) == dom) ++adv_hits;

            // membership in Mphi^- I_i: push Gamma + f back through Mphi
            std::vector<double> z = apply(decomp.m_phi, proj);
            std::vector<double> logits2 = apply(head_w, z);
            for (std::size_t i = 0; i < k; ++i) logits2[i] += head_b[i];
            if (argmax_pi_k(logits2, rng) == dom) ++rec_hits;
        }
        rep.adversary_value += static_cast<double>(adv_hits) / static_cast<double>(sample_count);
        rep.reconstructed_value +=
            static_cast<double>(rec_hits) / static_cast<double>(sample_count);
    }
    rep.sides_agree = std::abs(rep.adversary_value - rep.reconstructed_value) <= rep.tolerance;
    rep.invariant = rep.adversary_value <= epsilon;
    return rep;
}

// ---- H-divergence ----

struct HypothesisConfig {
    std::vector<std::size_t> hidden;  // empty -> linear threshold class
    std::size_t epochs = 400;
    double lr = 0.05;
    std::uint64_t seed = 1;
};

struct HDivergenceResult {
    double estimate = 0.0;         // |P_A(h=1) - P_B(h=1)| on held-out halves
    double adv_value_equiv = 0.0;  // the k=2 identity 1 + d_H
};

// Train a binary classifier on the first halves of A and B, estimate the
// acceptance-probability gap on the held-out halves.
inline HDivergenceResult h_divergence_estimate(const Matrix& samples_a, const Matrix& samples_b,
                                               const HypothesisConfig& cfg, Rng& rng) {
    std::size_t na = samples_a.rows / 2, nb = samples_b.rows / 2;
    if (na == 0 || nb == 0)
        throw std::invalid_argument("h_divergence_estimate: degenerate split");
    if (samples_a.cols != samples_b.cols) throw ShapeError("h_divergence_estimate: dim mismatch");
    std::size_t d = samples_a.cols;

    Matrix train(na + nb, d);
    std::vector<double> labels(na + nb);
    for (std::size_t i = 0; i < na; ++i) {
        std::copy(samples_a.row(i), samples_a.row(i) + d, train.row(i));
        labels[i] = 0.0;
    }
    for (std::size_t i = 0; i < nb; ++i) {
        std::copy(samples_b.row(i), samples_b.row(i) + d, train.row(na + i));
        labels[na + i] = 1.0;
    }

    Rng init_rng(cfg.seed);
    MlpParams h = make_mlp(d, cfg.hidden, 1, OutputActivation::Sigmoid, init_rng);
    AdamState state = make_adam_state(h);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        MlpTrace tr = mlp_forward(h, train);
        BceResult bce = bce_loss(tr.output().data, labels);
        Matrix dprob(train.rows, 1);
        for (std::size_t i = 0; i < train.rows; ++i) dprob(i, 0) = bce.grad[i];
        MlpGrads g = mlp_backward(h, tr, dprob);
        adam_step(h, g, state, cfg.lr);
    }

    auto accept_rate = [&](const Matrix& all, std::size_t from) {
        Matrix held(all.rows - from, d);
        for (std::size_t i = from; i < all.rows; ++i)
            std::copy(all.row(i), all.row(i) + d, held.row(i - from));
        Matrix probs = mlp_forward(h, held).output();
        double hits = 0.0;
        for (std::size_t i = 0; i < held.rows; ++i)
            if (probs(i, 0) > 0.5) hits += 1.0;
        return hits / static_cast<double>(held.rows);
    };
    (void)rng;
    HDivergenceResult r;
    r.estimate = std::abs(accept_rate(samples_a, na) - accept_rate(samples_b, nb));
    r.adv_value_equiv = 1.0 + r.estimate;
    return r;
}

}  // namespace rvr
