// Independent one-dimensional oracle: implicit finite differences for the
// same reduced PDE, with the consumption nonlinearity taken explicitly from
// the later slice and the identical obstacle sweep afterwards. Noise-free and
// seed-independent, used to cross-validate the Monte Carlo path.

#ifndef TCOST_FD1D_HPP
#define TCOST_FD1D_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcost/field.hpp"
#include "tcost/grid.hpp"
#include "tcost/market.hpp"
#include "tcost/obstacle.hpp"
#include "tcost/solver.hpp"

namespace tcost {

// Tridiagonal system solved with the Thomas algorithm (no pivoting; the
// assembled systems are diagonally dominant away from extreme cell Peclet
// numbers, which is checked and reported).
struct Tridiag {
    std::vector<double> sub;   // a[0] unused
    std::vector<double> diag;
    std::vector<double> super; // c[n-1] unused

    std::size_t size() const { return diag.size(); }

    bool diagonally_dominant() const {
        for (std::size_t i = 0; i < size(); ++i) {
            const double off = (i > 0 ? std::abs(sub[i]) : 0.0) +
                               (i + 1 < size() ? std::abs(super[i]) : 0.0);
            if (std::abs(diag[i]) < off - 1e-14) return false;
        }
        return true;
    }

    std::vector<double> solve(std::vector<double> rhs) const {
        const std::size_t n = size();
        if (rhs.size() != n)
            throw std::invalid_argument("Tridiag::solve: size mismatch");
        std::vector<double> c_star(n, 0.0);
        double beta = diag[0];
        if (beta == 0.0) throw std::runtime_error("Tridiag::solve: zero pivot");
        rhs[0] /= beta;
        for (std::size_t i = 1; i < n; ++i) {
            c_star[i - 1] = super[i - 1] / beta;
            beta = diag[i] - sub[i] * c_star[i - 1];
            if (beta == 0.0) throw std::runtime_error("Tridiag::solve: zero pivot");
            rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
        }
        for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c_star[i] * rhs[i + 1];
        return rhs;
    }
};

struct FdOptions {
    bool upwind = false; // one-sided drift stencil; default centered
};

// Backward implicit Euler for -d_t phi - L phi = 0 on an N = 1 grid:
// drift, diagonal diffusion and discounting implicit at t_k, consumption
// explicit from the t_{k+1} slice, then the same sweep_adjust as the Monte
// Carlo path. Rows for inactive nodes pin the extension value.
inline SolveResult solve_fd_1d(const MarketParams& p, const SchemeParams& sp,
                               const GridSpec& grid, const SolveOptions& opts = {},
                               const FdOptions& fd = {},
                               bool* dominant_warning = nullptr) {
    sp.validate();
    if (p.n_assets != 1)
        throw std::invalid_argument("solve_fd_1d: oracle is N = 1 only");
    const std::size_t n_steps = sp.n_steps(p.horizon);
    if (opts.stop_time < 0.0 || opts.stop_time >= p.horizon + 0.5 * sp.dt)
        throw std::invalid_argument("solve_fd_1d: stop_time must lie in [0, T)");
    const std::size_t stop_step =
        static_cast<std::size_t>(std::llround(opts.stop_time / sp.dt));

    auto spec = std::make_shared<const GridSpec>(grid);
    const std::size_t nodes = spec->total;
    const double h = sp.dt;
    const double dy = spec->dy[0];
    const double g = p.risk_aversion;
    const double ext = extension_value(p, sp.wealth_floor);
    const bool replicate = g < 0.0;

    // time-independent coefficients and system
    std::vector<double> eta(nodes, 0.0), b(nodes, 0.0), vth(nodes, 0.0);
    for (std::size_t k = 0; k < nodes; ++k) {
        if (!spec->active[k]) continue;
        const double y[1] = {spec->coord(0, k)};
        eta[k] = coeff_eta(y, p)[0];
        b[k] = coeff_b(y, p)[0];
        vth[k] = coeff_vartheta(y, p);
    }

    Tridiag sys;
    sys.sub.assign(nodes, 0.0);
    sys.diag.assign(nodes, 1.0);
    sys.super.assign(nodes, 0.0);
    std::vector<double> rhs_fixed(nodes, 0.0); // Dirichlet contributions
    for (std::size_t k = 0; k < nodes; ++k) {
        if (!spec->active[k]) continue; // identity row pins the extension value
        double lower, upper, centre;
        const double diff = 0.5 * eta[k] / (dy * dy);
        if (fd.upwind) {
            const double bp = std::max(b[k], 0.0), bm = std::min(b[k], 0.0);
            lower = diff - bm / dy;
            upper = diff + bp / dy;
            centre = vth[k] + 2.0 * diff + (bp - bm) / dy;
        } else {
            lower = diff - 0.5 * b[k] / dy;
            upper = diff + 0.5 * b[k] / dy;
            centre = vth[k] + 2.0 * diff;
        }
        sys.diag[k] = 1.0 + h * centre;
        const bool has_left = k > 0 && spec->active[k - 1];
        const bool has_right = k + 1 < nodes && spec->active[k + 1];
        if (has_left) sys.sub[k] = -h * lower;
        else if (replicate) sys.diag[k] -= h * lower;
        else rhs_fixed[k] += h * lower * ext;
        if (has_right) sys.super[k] = -h * upper;
        else if (replicate) sys.diag[k] -= h * upper;
        else rhs_fixed[k] += h * upper * ext;
    }
    const bool dominant = sys.diagonally_dominant();
    if (dominant_warning) *dominant_warning = !dominant;

    SolveResult result;
    ValueField current = make_terminal_field(spec, p, sp.wealth_floor, 1);

    {
        ClassifyStats cstats;
        LabelGrid labels = classify(current, sp, p, &cstats);
        result.boundaries.series.push_back(
            extract_boundaries_1d(labels, *spec, current.time));
        SliceDiagnostics d;
        d.step = n_steps;
        d.time = current.time;
        d.min_constraint_norm = cstats.min_constraint_norm;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t k = 0; k < nodes; ++k)
            if (spec->active[k]) {
                lo = std::min(lo, current.values[k]);
                hi = std::max(hi, current.values[k]);
            }
        d.min_value = lo;
        d.max_value = hi;
        result.diagnostics.push_back(d);
        if (detail::should_retain(n_steps, n_steps, stop_step, sp.dt, opts))
            result.slices.push_back({n_steps, current.time, current, std::move(labels)});
    }

    for (std::size_t step = n_steps; step-- > stop_step;) {
        const auto t0 = std::chrono::steady_clock::now();
        const double t = static_cast<double>(step) * sp.dt;

        std::size_t clamp_events = 0;
        std::vector<double> rhs(nodes, ext);
        for (std::size_t k = 0; k < nodes; ++k) {
            if (!spec->active[k]) continue;
            double bracket = g * current.values[k] -
                             spec->coord(0, k) * current.grad[k];
            if (bracket < sp.clamp_eps) {
                bracket = sp.clamp_eps;
                ++clamp_events;
            }
            const double consumption =
                (1.0 - g) / g * std::pow(bracket, g / (g - 1.0));
            rhs[k] = current.values[k] + h * consumption + rhs_fixed[k];
        }
        std::vector<double> solved = sys.solve(std::move(rhs));

        ValueField slice(spec, t, ext, replicate);
        for (std::size_t k = 0; k < nodes; ++k)
            if (spec->active[k]) {
                if (!std::isfinite(solved[k]))
                    throw std::runtime_error(
                        "solve_fd_1d: non-finite value at t=" + std::to_string(t) +
                        ", node " + std::to_string(k));
                slice.values[k] = solved[k];
            }
        slice.refresh_derivatives(resolve_workers(sp.workers));

        SliceDiagnostics d;
        d.step = step;
        d.time = t;
        d.clamp_events = clamp_events;

        LabelGrid labels;
        if (opts.apply_obstacle) {
            SweepResult sw = sweep_adjust(slice, sp, p);
            labels = std::move(sw.labels);
            d.min_constraint_norm = sw.min_constraint_norm;
            d.sweeps = sw.sweeps;
            d.adjusted_nodes = sw.adjusted_nodes;
            d.unresolved_nodes = sw.unresolved_nodes;
            d.inconsistent_nodes = sw.inconsistent_nodes;
        } else {
            ClassifyStats cstats;
            labels = classify(slice, sp, p, &cstats);
            d.min_constraint_norm = cstats.min_constraint_norm;
        }

        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t k = 0; k < nodes; ++k)
            if (spec->active[k]) {
                lo = std::min(lo, slice.values[k]);
                hi = std::max(hi, slice.values[k]);
            }
        d.min_value = lo;
        d.max_value = hi;

        result.boundaries.series.push_back(extract_boundaries_1d(labels, *spec, t));
        if (!slice_has_no_trade(labels, *spec)) result.boundaries.degenerate = true;

        d.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        result.diagnostics.push_back(d);

        if (detail::should_retain(step, n_steps, stop_step, sp.dt, opts))
            result.slices.push_back({step, t, slice, std::move(labels)});
        current = std::move(slice);
    }

    std::reverse(result.slices.begin(), result.slices.end());
    std::reverse(result.boundaries.series.begin(), result.boundaries.series.end());
    std::reverse(result.diagnostics.begin(), result.diagnostics.end());
    for (auto& bp : result.boundaries.series)
        if (bp.degenerate) result.boundaries.degenerate = true;
    return result;
}

struct SliceComparison {
    double time = 0.0;
    double max_rel_diff = 0.0;   // max over active nodes of |a-b| / (1+|a|)
    double buy_offset_cells = 0.0;
    double sell_offset_cells = 0.0;
};

// Slice-by-slice comparison of two runs on identical grids and retained
// times: value difference plus free-boundary offsets in grid cells.
inline std::vector<SliceComparison> compare_fields(const SolveResult& a,
                                                   const SolveResult& b) {
    if (a.slices.size() != b.slices.size())
        throw std::invalid_argument("compare_fields: retained slice counts differ");
    std::vector<SliceComparison> out;
    for (std::size_t s = 0; s < a.slices.size(); ++s) {
        const auto& fa = a.slices[s].field;
        const auto& fb = b.slices[s].field;
        const GridSpec& g = *fa.spec;
        if (a.slices[s].step != b.slices[s].step || g.total != fb.spec->total ||
            g.lo != fb.spec->lo || g.hi != fb.spec->hi || g.dy != fb.spec->dy)
            throw std::invalid_argument("compare_fields: grid or time mismatch");
        SliceComparison c;
        c.time = a.slices[s].time;
        for (std::size_t k = 0; k < g.total; ++k) {
            if (!g.active[k]) continue;
            const double rel = std::abs(fa.values[k] - fb.values[k]) /
                               (1.0 + std::abs(fa.values[k]));
            c.max_rel_diff = std::max(c.max_rel_diff, rel);
        }
        out.push_back(c);
    }
    // boundary offsets (N = 1 series align step by step)
    if (!a.boundaries.series.empty() &&
        a.boundaries.series.size() == b.boundaries.series.size()) {
        const double dy = a.slices.front().field.spec->dy[0];
        for (auto& c : out) {
            for (std::size_t i = 0; i < a.boundaries.series.size(); ++i) {
                const auto& pa = a.boundaries.series[i];
                const auto& pb = b.boundaries.series[i];
                if (std::abs(pa.time - c.time) < 1e-12) {
                    c.buy_offset_cells = std::abs(pa.buy - pb.buy) / dy;
                    c.sell_offset_cells = std::abs(pa.sell - pb.sell) / dy;
                }
            }
        }
    }
    return out;
}

} // namespace tcost

#endif // TCOST_FD1D_HPP
