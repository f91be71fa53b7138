// Gradient-constraint half of the two-step procedure: evaluate the buy and
// sell constraints, classify nodes into trading regions, trace violating
// nodes along the renormalized trade curves to the no-trade boundary, and
// project the value with the wealth-ratio update.
//
// The trade curve through y for direction (upsilon, varrho) is
//   yhat(delta) = (y + delta (upsilon - varrho)) / (1 - delta (lambda.upsilon + mu.varrho)),
// i.e. buying/selling delta of each flagged stock with fractions renormalized
// by the post-cost wealth. The wealth-ratio update is constant along these
// curves (the ratios telescope), which keeps repeated sweeps consistent.

#ifndef TCOST_OBSTACLE_HPP
#define TCOST_OBSTACLE_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcost/field.hpp"
#include "tcost/market.hpp"
#include "tcost/mc.hpp"
#include "tcost/parallel.hpp"

namespace tcost {

enum class AssetState : std::uint8_t { NoTrade = 0, Buy = 1, Sell = 2 };

struct LabelGrid {
    std::size_t n_assets = 0;
    std::vector<std::uint8_t> codes; // node-major, one per (node, asset)

    LabelGrid() = default;
    LabelGrid(std::size_t n, std::size_t total)
        : n_assets(n), codes(total * n, 0) {}

    AssetState state(std::size_t node, std::size_t asset) const {
        return static_cast<AssetState>(codes[node * n_assets + asset]);
    }
    void set(std::size_t node, std::size_t asset, AssetState s) {
        codes[node * n_assets + asset] = static_cast<std::uint8_t>(s);
    }
    bool no_trade(std::size_t node) const {
        for (std::size_t i = 0; i < n_assets; ++i)
            if (state(node, i) != AssetState::NoTrade) return false;
        return true;
    }
    // Composite region id, e.g. "B1&S2" or "N1&N2".
    std::string composite(std::size_t node) const {
        std::string out;
        for (std::size_t i = 0; i < n_assets; ++i) {
            if (i) out += '&';
            switch (state(node, i)) {
                case AssetState::Buy: out += 'B'; break;
                case AssetState::Sell: out += 'S'; break;
                default: out += 'N'; break;
            }
            out += std::to_string(i + 1);
        }
        return out;
    }
};

// Which stocks a projection trades, one flag per asset; a stock is never
// bought and sold at once.
struct TradeDirection {
    std::uint32_t buy_mask = 0;
    std::uint32_t sell_mask = 0;

    bool any() const { return (buy_mask | sell_mask) != 0; }
    bool buys(std::size_t i) const { return (buy_mask >> i) & 1; }
    bool sells(std::size_t i) const { return (sell_mask >> i) & 1; }
    bool trades(std::size_t i) const { return buys(i) || sells(i); }

    static TradeDirection from_labels(const LabelGrid& labels, std::size_t node) {
        TradeDirection d;
        for (std::size_t i = 0; i < labels.n_assets; ++i) {
            const AssetState s = labels.state(node, i);
            if (s == AssetState::Buy) d.buy_mask |= 1u << i;
            else if (s == AssetState::Sell) d.sell_mask |= 1u << i;
        }
        return d;
    }
};

// Sell constraint  S_i phi = mu_i gamma phi - sum_k (-delta_ik + mu_i y_k) d_k phi.
inline double constraint_sell(const ValueField& f, std::size_t node,
                              std::size_t i, const MarketParams& p) {
    const std::size_t n = f.dim();
    double y_buf[8];
    std::span<double> y(y_buf, n);
    f.spec->point(node, y);
    double ydg = 0.0;
    for (std::size_t a = 0; a < n; ++a) ydg += y[a] * f.grad[node * n + a];
    return p.sell_cost[i] * p.risk_aversion * f.values[node] +
           f.grad[node * n + i] - p.sell_cost[i] * ydg;
}

// Buy constraint  B_i phi = lambda_i gamma phi - sum_k (delta_ik + lambda_i y_k) d_k phi.
inline double constraint_buy(const ValueField& f, std::size_t node,
                             std::size_t i, const MarketParams& p) {
    const std::size_t n = f.dim();
    double y_buf[8];
    std::span<double> y(y_buf, n);
    f.spec->point(node, y);
    double ydg = 0.0;
    for (std::size_t a = 0; a < n; ++a) ydg += y[a] * f.grad[node * n + a];
    return p.buy_cost[i] * p.risk_aversion * f.values[node] -
           f.grad[node * n + i] - p.buy_cost[i] * ydg;
}

struct ClassifyStats {
    std::size_t violating = 0;     // nodes with at least one trade label
    std::size_t inconsistent = 0;  // both constraints below -tol for one asset
    double min_constraint_norm = 0.0; // min over nodes/assets of min(S,B)/max(1,|phi|)
};

// Labels every active node per asset: Buy iff B_i phi < -tol, Sell iff
// S_i phi < -tol, NoTrade otherwise (ties at zero are no-trade). tol is
// adjust_tol * max(1, |phi|). Both constraints negative at once is
// impossible for gamma > 0 (where phi > 0) and raises an error there; for
// gamma < 0 the truncation-edge floor can produce it transiently, so the
// node resolves to the more violated direction and the event is counted.
inline LabelGrid classify(const ValueField& f, const SchemeParams& sp,
                          const MarketParams& p, ClassifyStats* stats = nullptr) {
    const GridSpec& g = *f.spec;
    const std::size_t n = f.dim();
    const bool strict = p.risk_aversion > 0.0;
    LabelGrid labels(n, g.total);
    std::vector<double> node_min(g.total, std::numeric_limits<double>::infinity());
    std::atomic<std::size_t> violating{0}, inconsistent{0};

    parallel_for(0, g.total, resolve_workers(sp.workers), [&](std::size_t k) {
        if (!g.active[k]) return;
        double y_buf[8];
        std::span<double> y(y_buf, n);
        g.point(k, y);
        const double phi = f.values[k];
        double ydg = 0.0;
        for (std::size_t a = 0; a < n; ++a) ydg += y[a] * f.grad[k * n + a];
        const double scale = std::max(1.0, std::abs(phi));
        const double tol = sp.adjust_tol * scale;
        bool any_trade = false;
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double s = p.sell_cost[i] * p.risk_aversion * phi +
                             f.grad[k * n + i] - p.sell_cost[i] * ydg;
            const double b = p.buy_cost[i] * p.risk_aversion * phi -
                             f.grad[k * n + i] - p.buy_cost[i] * ydg;
            worst = std::min(worst, std::min(s, b) / scale);
            AssetState code = AssetState::NoTrade;
            if (s < -tol && b < -tol) {
                if (strict) {
                    std::ostringstream msg;
                    msg << "classify: buy and sell constraints both violated at node "
                        << k << ", asset " << (i + 1) << " (S=" << s << ", B=" << b
                        << ")";
                    throw std::runtime_error(msg.str());
                }
                inconsistent.fetch_add(1, std::memory_order_relaxed);
                code = s < b ? AssetState::Sell : AssetState::Buy;
            } else if (b < -tol) {
                code = AssetState::Buy;
            } else if (s < -tol) {
                code = AssetState::Sell;
            }
            if (code != AssetState::NoTrade) any_trade = true;
            labels.set(k, i, code);
        }
        node_min[k] = worst;
        if (any_trade) violating.fetch_add(1, std::memory_order_relaxed);
    });

    if (stats) {
        stats->violating = violating.load();
        stats->inconsistent = inconsistent.load();
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < g.total; ++k)
            if (g.active[k]) worst = std::min(worst, node_min[k]);
        stats->min_constraint_norm = worst;
    }
    return labels;
}

// Post-trade fraction point after buying/selling delta of each flagged
// stock, renormalized by the post-cost wealth.
inline std::vector<double> characteristic_point(std::span<const double> y,
                                                const TradeDirection& dir,
                                                double delta,
                                                const MarketParams& p) {
    if (delta < 0.0)
        throw std::invalid_argument("characteristic_point: delta must be >= 0");
    const std::size_t n = p.n_assets;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (dir.buys(i)) cost += p.buy_cost[i];
        if (dir.sells(i)) cost += p.sell_cost[i];
    }
    const double denom = 1.0 - delta * cost;
    if (!(denom > 0.0))
        throw std::domain_error("characteristic_point: trade exceeds solvency");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double shift = 0.0;
        if (dir.buys(i)) shift = delta;
        else if (dir.sells(i)) shift = -delta;
        out[i] = (y[i] + shift) / denom;
    }
    return out;
}

struct TraceResult {
    std::vector<double> point;
    bool resolved = true; // false: curve left the box before reaching no-trade
};

namespace detail {

// Nearest grid node to q, or npos if q rounds outside the box.
inline std::size_t nearest_node(const GridSpec& g, std::span<const double> q) {
    std::size_t k = 0;
    for (std::size_t a = 0; a < g.dim(); ++a) {
        const double u = (q[a] - g.lo[a]) / g.dy[a];
        const long i = std::lround(u);
        if (i < 0 || i >= static_cast<long>(g.counts[a]))
            return static_cast<std::size_t>(-1);
        k += static_cast<std::size_t>(i) * g.strides[a];
    }
    return k;
}

inline bool in_no_trade_cell(const GridSpec& g, const LabelGrid& labels,
                             const TradeDirection& dir, std::span<const double> q) {
    const std::size_t k = nearest_node(g, q);
    if (k == static_cast<std::size_t>(-1) || !g.active[k]) return false;
    for (std::size_t i = 0; i < labels.n_assets; ++i)
        if (dir.trades(i) && labels.state(k, i) != AssetState::NoTrade)
            return false;
    return true;
}

} // namespace detail

// Walks the trade curve from y* in steps of min(dy)/2 until the point lies in
// a no-trade cell for every traded asset, then bisects the crossing down to
// dy/10. If the curve leaves the truncation box first, the node is marked
// unresolved and the box-edge point is returned.
inline TraceResult trace_to_boundary(std::span<const double> y_star,
                                     const TradeDirection& dir,
                                     const LabelGrid& labels,
                                     const ValueField& f,
                                     const MarketParams& p) {
    const GridSpec& g = *f.spec;
    TraceResult res;
    if (!dir.any()) {
        res.point.assign(y_star.begin(), y_star.end());
        return res;
    }
    double dy_min = g.dy[0];
    double extent = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a) {
        dy_min = std::min(dy_min, g.dy[a]);
        extent = std::max(extent, g.hi[a] - g.lo[a]);
    }
    const double step = 0.5 * dy_min;
    const double resolution = 0.1 * dy_min;
    const std::size_t max_steps =
        static_cast<std::size_t>(4.0 * extent / step) + 16;

    auto clamp_to_box = [&](std::vector<double> q) {
        for (std::size_t a = 0; a < g.dim(); ++a)
            q[a] = std::clamp(q[a], g.lo[a], g.hi[a]);
        return q;
    };

    double prev = 0.0;
    for (std::size_t j = 1; j <= max_steps; ++j) {
        const double delta = static_cast<double>(j) * step;
        std::vector<double> q;
        try {
            q = characteristic_point(y_star, dir, delta, p);
        } catch (const std::domain_error&) {
            res.point = clamp_to_box(characteristic_point(y_star, dir, prev, p));
            res.resolved = false;
            return res;
        }
        if (detail::nearest_node(g, q) == static_cast<std::size_t>(-1)) {
            res.point = clamp_to_box(std::move(q));
            res.resolved = false;
            return res;
        }
        if (detail::in_no_trade_cell(g, labels, dir, q)) {
            double lo = prev, hi = delta;
            while (hi - lo > resolution) {
                const double mid = 0.5 * (lo + hi);
                if (detail::in_no_trade_cell(
                        g, labels, dir, characteristic_point(y_star, dir, mid, p)))
                    hi = mid;
                else
                    lo = mid;
            }
            res.point = characteristic_point(y_star, dir, hi, p);
            return res;
        }
        prev = delta;
    }
    res.point = clamp_to_box(characteristic_point(y_star, dir, prev, p));
    res.resolved = false;
    return res;
}

namespace detail {

// Multilinear read of phi at y_bar restricted to corners that are no-trade
// for every traded asset, weights renormalized.
inline double no_trade_interpolate(const ValueField& f, const LabelGrid& labels,
                                   const TradeDirection& dir,
                                   std::span<const double> q) {
    const GridSpec& g = *f.spec;
    const std::size_t n = g.dim();
    long cell[8];
    double frac[8];
    for (std::size_t a = 0; a < n; ++a) {
        const double qa = std::clamp(q[a], g.lo[a], g.hi[a]);
        double u = (qa - g.lo[a]) / g.dy[a];
        double c = std::floor(u);
        if (c >= static_cast<double>(g.counts[a] - 1))
            c = static_cast<double>(g.counts[a]) - 2.0;
        cell[a] = static_cast<long>(c);
        frac[a] = u - c;
    }
    double acc = 0.0, wsum = 0.0;
    double best_w = -1.0, best_v = 0.0;
    const std::size_t corners = std::size_t{1} << n;
    for (std::size_t m = 0; m < corners; ++m) {
        double w = 1.0;
        std::size_t k = 0;
        for (std::size_t a = 0; a < n; ++a) {
            const bool hi_bit = (m >> a) & 1;
            w *= hi_bit ? frac[a] : 1.0 - frac[a];
            k += (static_cast<std::size_t>(cell[a]) + (hi_bit ? 1 : 0)) * g.strides[a];
        }
        if (!g.active[k]) continue;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i)
            if (dir.trades(i) && labels.state(k, i) != AssetState::NoTrade)
                ok = false;
        if (!ok) continue;
        acc += w * f.values[k];
        wsum += w;
        if (w > best_w) { best_w = w; best_v = f.values[k]; }
    }
    if (wsum > 1e-14) return acc / wsum;
    if (best_w >= 0.0) return best_v;
    return f.value_at(q); // no qualifying corner; plain interpolation
}

} // namespace detail

// Wealth-ratio projection: phi(y*) = phi(ybar) * (num / den)^gamma with
// num/den the post-cost wealth factors at y* and ybar. phi(ybar) is read from
// the frozen pre-sweep field, restricted to no-trade corners when the trace
// resolved.
inline double adjust_value(std::span<const double> y_star,
                           std::span<const double> y_bar,
                           const TradeDirection& dir, const ValueField& f,
                           const LabelGrid& labels, const MarketParams& p,
                           bool resolved = true) {
    double num = 1.0, den = 1.0;
    for (std::size_t i = 0; i < p.n_assets; ++i) {
        if (dir.buys(i)) {
            num += p.buy_cost[i] * y_star[i];
            den += p.buy_cost[i] * y_bar[i];
        } else if (dir.sells(i)) {
            num -= p.sell_cost[i] * y_star[i];
            den -= p.sell_cost[i] * y_bar[i];
        }
    }
    if (!(num > 0.0) || !(den > 0.0))
        throw std::domain_error("adjust_value: trade leaves the solvency region");
    const double phi_bar =
        resolved ? detail::no_trade_interpolate(f, labels, dir, y_bar)
                 : f.value_at(y_bar);
    return phi_bar * std::pow(num / den, p.risk_aversion);
}

struct SweepResult {
    LabelGrid labels;             // accumulated trade directions of adjusted nodes
    std::size_t sweeps = 0;
    bool converged = false;
    double worst_violation = 0.0; // normalized, only meaningful if !converged
    double min_constraint_norm = 0.0;
    std::size_t adjusted_nodes = 0;
    std::size_t unresolved_nodes = 0;
    std::size_t inconsistent_nodes = 0;
};

// Repeats { classify -> trace -> project } until no constraint is below
// -adjust_tol or max_sweeps is reached. Each sweep reads a frozen copy of the
// pre-sweep values and writes disjoint nodes (Jacobi), so the result does not
// depend on visit order or worker count.
inline SweepResult sweep_adjust(ValueField& f, const SchemeParams& sp,
                                const MarketParams& p) {
    const GridSpec& g = *f.spec;
    const std::size_t workers = resolve_workers(sp.workers);
    SweepResult res;
    res.labels = LabelGrid(p.n_assets, g.total);

    for (std::size_t sweep = 0; sweep < std::max<std::size_t>(sp.max_sweeps, 1); ++sweep) {
        ClassifyStats stats;
        LabelGrid labels = classify(f, sp, p, &stats);
        res.min_constraint_norm = stats.min_constraint_norm;
        res.inconsistent_nodes += stats.inconsistent;
        if (stats.violating == 0) {
            res.converged = true;
            if (res.sweeps == 0) res.labels = labels; // untouched field: report as-is
            return res;
        }
        ++res.sweeps;

        // accumulate the trading decomposition
        for (std::size_t k = 0; k < g.total; ++k)
            for (std::size_t i = 0; i < p.n_assets; ++i)
                if (labels.state(k, i) != AssetState::NoTrade)
                    res.labels.set(k, i, labels.state(k, i));

        std::vector<std::size_t> violators;
        violators.reserve(stats.violating);
        for (std::size_t k = 0; k < g.total; ++k) {
            if (!g.active[k]) continue;
            for (std::size_t i = 0; i < p.n_assets; ++i)
                if (labels.state(k, i) != AssetState::NoTrade) {
                    violators.push_back(k);
                    break;
                }
        }

        const ValueField pre = f; // frozen pre-sweep slice
        std::atomic<std::size_t> unresolved{0};
        parallel_for(0, violators.size(), workers, [&](std::size_t v) {
            const std::size_t k = violators[v];
            double y_buf[8];
            std::span<double> y(y_buf, p.n_assets);
            g.point(k, y);
            const TradeDirection dir = TradeDirection::from_labels(labels, k);
            const TraceResult tr = trace_to_boundary(y, dir, labels, pre, p);
            if (!tr.resolved) unresolved.fetch_add(1, std::memory_order_relaxed);
            f.values[k] =
                adjust_value(y, tr.point, dir, pre, labels, p, tr.resolved);
        });
        res.adjusted_nodes += violators.size();
        res.unresolved_nodes += unresolved.load();
        f.refresh_derivatives(workers);
    }

    ClassifyStats stats;
    LabelGrid final_labels = classify(f, sp, p, &stats);
    res.min_constraint_norm = stats.min_constraint_norm;
    res.converged = stats.violating == 0;
    if (!res.converged)
        res.worst_violation = std::max(0.0, -stats.min_constraint_norm);
    return res;
}

} // namespace tcost

#endif // TCOST_OBSTACLE_HPP
