// Backward induction over the whole horizon: terminal slice, alternating
// Monte Carlo PDE step and obstacle projection, free-boundary extraction,
// and the theoretical-property checkers used to verify runs.

#ifndef TCOST_SOLVER_HPP
#define TCOST_SOLVER_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tcost/field.hpp"
#include "tcost/grid.hpp"
#include "tcost/market.hpp"
#include "tcost/mc.hpp"
#include "tcost/obstacle.hpp"

namespace tcost {

struct SolveOptions {
    std::size_t retain_stride = 0;     // 0 = auto: ceil(n_steps / 20)
    std::vector<double> retain_times;  // extra slice times to keep
    double stop_time = 0.0;            // backward loop stops at this time
    bool keep_all = false;
    bool apply_obstacle = true;        // false: raw PDE iteration (debug)
};

struct RetainedSlice {
    std::size_t step = 0;
    double time = 0.0;
    ValueField field;
    LabelGrid labels;
};

struct BoundaryPoint {
    double time = 0.0;
    double buy = 0.0;   // B_t: largest buy node + half cell (0 if none)
    double sell = 0.0;  // S_t: smallest sell node - half cell (box top if none)
    bool degenerate = false;
};

struct CheckResult {
    std::string property;
    bool pass = false;
    double margin = 0.0; // signed distance to the threshold, positive = slack
};

struct BoundaryReport {
    std::vector<BoundaryPoint> series; // N=1: every computed step, ascending time
    // N>=2: per retained slice, coordinates of no-trade nodes that touch a
    // differently-labeled neighbor.
    std::vector<std::pair<double, std::vector<std::vector<double>>>> notrade_boundary;
    std::vector<CheckResult> checks;
    bool degenerate = false;
};

struct SliceDiagnostics {
    std::size_t step = 0;
    double time = 0.0;
    std::size_t clamp_events = 0;
    double monotonicity_ratio = 0.0;
    double min_value = 0.0;
    double max_value = 0.0;
    double min_constraint_norm = 0.0;
    std::size_t sweeps = 0;
    std::size_t adjusted_nodes = 0;
    std::size_t unresolved_nodes = 0;
    std::size_t inconsistent_nodes = 0;
    double wall_ms = 0.0;
};

struct SolveResult {
    std::vector<RetainedSlice> slices;       // ascending time
    BoundaryReport boundaries;
    std::vector<SliceDiagnostics> diagnostics; // ascending time
};

// N = 1 boundary extraction: midpoint convention between the last trading
// node and the first no-trade node.
inline BoundaryPoint extract_boundaries_1d(const LabelGrid& labels,
                                           const GridSpec& g, double time) {
    BoundaryPoint bp;
    bp.time = time;
    bool have_buy = false, have_sell = false, have_nt = false;
    double max_buy = 0.0, min_sell = 0.0;
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k]) continue;
        const double y = g.coord(0, k);
        switch (labels.state(k, 0)) {
            case AssetState::Buy:
                if (!have_buy || y > max_buy) max_buy = y;
                have_buy = true;
                break;
            case AssetState::Sell:
                if (!have_sell || y < min_sell) min_sell = y;
                have_sell = true;
                break;
            default:
                have_nt = true;
                break;
        }
    }
    bp.buy = have_buy ? max_buy + 0.5 * g.dy[0] : 0.0;
    bp.sell = have_sell ? min_sell - 0.5 * g.dy[0] : g.hi[0];
    bp.degenerate = !have_nt || !have_sell;
    return bp;
}

// N >= 2: no-trade nodes with at least one axis neighbor labeled differently.
inline std::vector<std::vector<double>> extract_notrade_boundary(
    const LabelGrid& labels, const GridSpec& g) {
    std::vector<std::vector<double>> out;
    const std::size_t n = g.dim();
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k] || !labels.no_trade(k)) continue;
        g.unravel(k, idx);
        bool boundary = false;
        for (std::size_t a = 0; a < n && !boundary; ++a) {
            for (int dir = -1; dir <= 1 && !boundary; dir += 2) {
                const long j = static_cast<long>(idx[a]) + dir;
                if (j < 0 || j >= static_cast<long>(g.counts[a])) {
                    boundary = true; // box edge counts as a region change
                    continue;
                }
                const std::size_t kk =
                    dir > 0 ? k + g.strides[a] : k - g.strides[a];
                if (!g.active[kk] || !labels.no_trade(kk)) boundary = true;
            }
        }
        if (boundary) out.push_back(g.point(k));
    }
    return out;
}

inline bool slice_has_no_trade(const LabelGrid& labels, const GridSpec& g) {
    for (std::size_t k = 0; k < g.total; ++k)
        if (g.active[k] && labels.no_trade(k)) return true;
    return false;
}

namespace detail {

inline bool should_retain(std::size_t step, std::size_t n_steps,
                          std::size_t stop_step, double dt,
                          const SolveOptions& opts) {
    if (opts.keep_all || step == n_steps || step == stop_step) return true;
    std::size_t stride = opts.retain_stride;
    if (stride == 0) stride = std::max<std::size_t>(1, (n_steps + 19) / 20);
    if (step % stride == 0) return true;
    const double t = static_cast<double>(step) * dt;
    for (double rt : opts.retain_times)
        if (std::abs(t - rt) < 0.5 * dt) return true;
    return false;
}

} // namespace detail

// Algorithm: set the terminal slice, then for each earlier time run the
// Monte Carlo PDE step followed by the obstacle sweep, recording boundaries
// and diagnostics. Full tensor grids are supported for N <= 3.
inline SolveResult solve(const MarketParams& p, const SchemeParams& sp,
                         const GridSpec& grid, const SolveOptions& opts = {}) {
    sp.validate();
    if (p.n_assets > 3)
        throw std::invalid_argument(
            "solve: full tensor grids are limited to N <= 3 (node count grows as "
            "(box/dy)^N); reduce the number of assets or use the coefficient-level "
            "API");
    const std::size_t n_steps = sp.n_steps(p.horizon);
    if (opts.stop_time < 0.0 || opts.stop_time >= p.horizon + 0.5 * sp.dt)
        throw std::invalid_argument("solve: stop_time must lie in [0, T)");
    const std::size_t stop_step =
        static_cast<std::size_t>(std::llround(opts.stop_time / sp.dt));

    auto spec = std::make_shared<const GridSpec>(grid);
    const std::size_t workers = resolve_workers(sp.workers);
    CoefficientTable table(*spec, p, sp.dt, workers);

    SolveResult result;
    ValueField current = make_terminal_field(spec, p, sp.wealth_floor, workers);

    // terminal slice: classified, never projected
    {
        ClassifyStats cstats;
        LabelGrid labels = classify(current, sp, p, &cstats);
        if (p.n_assets == 1)
            result.boundaries.series.push_back(
                extract_boundaries_1d(labels, *spec, current.time));
        SliceDiagnostics d;
        d.step = n_steps;
        d.time = current.time;
        d.monotonicity_ratio = table.monotonicity_ratio;
        d.min_constraint_norm = cstats.min_constraint_norm;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t k = 0; k < spec->total; ++k) {
            if (!spec->active[k]) continue;
            lo = std::min(lo, current.values[k]);
            hi = std::max(hi, current.values[k]);
        }
        d.min_value = lo;
        d.max_value = hi;
        result.diagnostics.push_back(d);
        if (detail::should_retain(n_steps, n_steps, stop_step, sp.dt, opts)) {
            if (p.n_assets >= 2)
                result.boundaries.notrade_boundary.emplace_back(
                    current.time, extract_notrade_boundary(labels, *spec));
            result.slices.push_back(
                {n_steps, current.time, current, std::move(labels)});
        }
    }

    for (std::size_t step = n_steps; step-- > stop_step;) {
        const auto t0 = std::chrono::steady_clock::now();
        const double t = static_cast<double>(step) * sp.dt;
        StepStats stats;
        ValueField slice = pde_step(current, t, sp, p, table, &stats);

        SliceDiagnostics d;
        d.step = step;
        d.time = t;
        d.clamp_events = stats.clamp_events;
        d.monotonicity_ratio = stats.monotonicity_ratio;

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
        for (std::size_t k = 0; k < spec->total; ++k) {
            if (!spec->active[k]) continue;
            lo = std::min(lo, slice.values[k]);
            hi = std::max(hi, slice.values[k]);
        }
        d.min_value = lo;
        d.max_value = hi;

        if (p.n_assets == 1)
            result.boundaries.series.push_back(
                extract_boundaries_1d(labels, *spec, t));
        if (!slice_has_no_trade(labels, *spec)) result.boundaries.degenerate = true;

        const bool retain = detail::should_retain(step, n_steps, stop_step, sp.dt, opts);
        if (retain && p.n_assets >= 2)
            result.boundaries.notrade_boundary.emplace_back(
                t, extract_notrade_boundary(labels, *spec));

        d.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        result.diagnostics.push_back(d);

        if (retain) result.slices.push_back({step, t, slice, std::move(labels)});
        current = std::move(slice);
    }

    std::reverse(result.slices.begin(), result.slices.end());
    std::reverse(result.boundaries.series.begin(), result.boundaries.series.end());
    std::reverse(result.diagnostics.begin(), result.diagnostics.end());
    std::reverse(result.boundaries.notrade_boundary.begin(),
                 result.boundaries.notrade_boundary.end());
    for (auto& bp : result.boundaries.series)
        if (bp.degenerate) result.boundaries.degenerate = true;
    return result;
}

// ---------------------------------------------------------------------------
// Theoretical-property checkers
// ---------------------------------------------------------------------------

// Dai-Yi Theorem 5.4 checks for N = 1, applied to every computed slice with
// t < T. grid_tol (default 2 dy) absorbs the boundary-location convention;
// time_slack (default 2 h) absorbs the discrete switch time of B_t = 0.
inline std::vector<CheckResult> check_dai_yi(const BoundaryReport& report,
                                             const MarketParams& p,
                                             double grid_tol,
                                             double time_slack) {
    const DaiYiBounds bounds = dai_yi_bounds(p);
    const double T = p.horizon;
    std::vector<CheckResult> out;

    bool any = false;
    double min_gap = std::numeric_limits<double>::infinity();
    double min_sell = std::numeric_limits<double>::infinity();
    double max_sell = -std::numeric_limits<double>::infinity();
    double max_buy_early = -std::numeric_limits<double>::infinity();
    double max_abs_buy_late = 0.0;
    bool have_early = false, have_late = false;
    for (const auto& bp : report.series) {
        if (bp.time >= T - 1e-12) continue; // theorem covers t in [0, T)
        any = true;
        min_gap = std::min(min_gap, bp.sell - bp.buy);
        min_sell = std::min(min_sell, bp.sell);
        max_sell = std::max(max_sell, bp.sell);
        if (bp.time < T - bounds.tau) {
            have_early = true;
            max_buy_early = std::max(max_buy_early, bp.buy);
        }
        if (bp.time >= T - bounds.tau + time_slack) {
            have_late = true;
            max_abs_buy_late = std::max(max_abs_buy_late, std::abs(bp.buy));
        }
    }
    if (!any) {
        out.push_back({"dai_yi.no_slices", false, 0.0});
        return out;
    }

    out.push_back({"dai_yi.buy_below_sell", min_gap > 0.0, min_gap});
    out.push_back({"dai_yi.sell_lower_bound",
                   min_sell >= bounds.sell_lower - grid_tol,
                   min_sell - (bounds.sell_lower - grid_tol)});
    if (std::abs(bounds.sell_excess) < 1e-10) {
        const double worst =
            std::max(std::abs(max_sell - 1.0), std::abs(min_sell - 1.0));
        out.push_back({"dai_yi.sell_at_one", worst <= grid_tol, grid_tol - worst});
    } else if (bounds.sell_excess > 0.0) {
        out.push_back({"dai_yi.sell_above_one", max_sell > 1.0, max_sell - 1.0});
    } else {
        out.push_back({"dai_yi.sell_below_one", max_sell < 1.0, 1.0 - max_sell});
    }
    if (have_early)
        out.push_back({"dai_yi.buy_upper_bound",
                       max_buy_early <= bounds.buy_upper + grid_tol,
                       bounds.buy_upper + grid_tol - max_buy_early});
    if (have_late)
        out.push_back({"dai_yi.no_buying_near_maturity",
                       max_abs_buy_late <= grid_tol,
                       grid_tol - max_abs_buy_late});
    return out;
}

inline std::vector<CheckResult> check_dai_yi(const BoundaryReport& report,
                                             const MarketParams& p,
                                             const GridSpec& grid,
                                             const SchemeParams& sp) {
    return check_dai_yi(report, p, 2.0 * grid.dy[0] + 1e-9, 2.0 * sp.dt);
}

// Distance (in cells, sup-norm) from the Merton proportion to the nearest
// no-trade node of a retained slice.
inline double merton_distance_cells(const RetainedSlice& slice,
                                    std::span<const double> pi) {
    const GridSpec& g = *slice.field.spec;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> idx(g.dim());
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k] || !slice.labels.no_trade(k)) continue;
        g.unravel(k, idx);
        double dist = 0.0;
        for (std::size_t a = 0; a < g.dim(); ++a)
            dist = std::max(dist,
                            std::abs(g.coord(a, idx[a]) - pi[a]) / g.dy[a]);
        best = std::min(best, dist);
    }
    return best;
}

// Passes iff the Merton proportion lies inside the no-trade region within
// tol_cells at every retained slice with T - t >= min_age. Requires costs
// small enough that the frictionless benchmark is meaningful.
inline CheckResult check_merton_containment(const SolveResult& result,
                                            const MarketParams& p,
                                            std::size_t tol_cells,
                                            double min_age) {
    for (std::size_t i = 0; i < p.n_assets; ++i)
        if (p.buy_cost[i] > 1e-4 || p.sell_cost[i] > 1e-4)
            throw std::invalid_argument(
                "check_merton_containment: costs must be <= 1e-4");
    const auto pi = merton_proportion(p);
    double worst = 0.0;
    bool any = false;
    for (const auto& slice : result.slices) {
        if (p.horizon - slice.time < min_age - 1e-12) continue;
        any = true;
        worst = std::max(worst, merton_distance_cells(slice, pi));
    }
    CheckResult out;
    out.property = "merton.containment";
    out.pass = any && worst <= static_cast<double>(tol_cells);
    out.margin = static_cast<double>(tol_cells) - worst;
    if (!any) out.margin = -std::numeric_limits<double>::infinity();
    return out;
}

// Sign of the empirical covariance of (y1, y2) over no-trade nodes: positive
// stock correlation must elongate the region along the main diagonal.
inline int correlation_elongation_sign(const LabelGrid& labels,
                                       const GridSpec& g) {
    if (g.dim() != 2)
        throw std::invalid_argument("correlation_elongation_sign: N must be 2");
    double s1 = 0.0, s2 = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k] || !labels.no_trade(k)) continue;
        const auto y = g.point(k);
        s1 += y[0];
        s2 += y[1];
        ++cnt;
    }
    if (cnt < 10)
        throw std::runtime_error(
            "correlation_elongation_sign: fewer than 10 no-trade nodes");
    const double m1 = s1 / static_cast<double>(cnt);
    const double m2 = s2 / static_cast<double>(cnt);
    double cov = 0.0, v1 = 0.0, v2 = 0.0;
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k] || !labels.no_trade(k)) continue;
        const auto y = g.point(k);
        cov += (y[0] - m1) * (y[1] - m2);
        v1 += (y[0] - m1) * (y[0] - m1);
        v2 += (y[1] - m2) * (y[1] - m2);
    }
    const double denom = std::sqrt(v1 * v2);
    if (denom <= 0.0) return 0;
    const double corr = cov / denom;
    if (std::abs(corr) < 1e-9) return 0;
    return corr > 0.0 ? 1 : -1;
}

} // namespace tcost

#endif // TCOST_SOLVER_HPP
