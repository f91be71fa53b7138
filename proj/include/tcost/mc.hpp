// Monte Carlo half of the backward scheme: one-step Euler sampling of the
// diagonal-diffusion process, empirical conditional expectations of the value
// and its cached derivatives, the nonlinear remainder, and the pre-adjustment
// value of a whole slice.

#ifndef TCOST_MC_HPP
#define TCOST_MC_HPP

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tcost/field.hpp"
#include "tcost/grid.hpp"
#include "tcost/market.hpp"
#include "tcost/parallel.hpp"
#include "tcost/rng.hpp"

namespace tcost {

struct SchemeParams {
    double dt = 0.01;            // h, years
    std::size_t m_paths = 1000;  // M
    std::uint64_t seed = 12345;
    double clamp_eps = 1e-12;    // floor for the consumption bracket
    // relative constraint tolerance; the default sits above the O(dy^2)
    // stencil residual that the exact projection surface leaves behind
    double adjust_tol = 1e-6;
    std::size_t max_sweeps = 50;
    std::size_t workers = 1;     // 0 = hardware concurrency
    bool crn = false;            // share draws across nodes (default off)
    double wealth_floor = 1e-8;  // epsilon_w in the gamma < 0 extension

    void validate() const {
        if (!(dt > 0.0)) throw std::invalid_argument("scheme: dt must be positive");
        if (m_paths < 1) throw std::invalid_argument("scheme: m_paths must be >= 1");
        if (!(clamp_eps > 0.0)) throw std::invalid_argument("scheme: clamp_eps must be positive");
        if (adjust_tol < 0.0) throw std::invalid_argument("scheme: adjust_tol must be >= 0");
    }

    std::size_t n_steps(double horizon) const {
        return static_cast<std::size_t>(std::llround(horizon / dt));
    }
};

struct ConditionalEstimates {
    double d0 = 0.0;
    std::vector<double> d1;        // length N
    std::vector<double> d2_cross;  // N(N-1)/2, pair-packed
};

// One Euler step of the diffusion with diagonal noise: the off-diagonal
// second-order terms stay in the nonlinear remainder.
inline std::vector<double> euler_step(std::span<const double> y, double h,
                                      const MarketParams& p,
                                      std::span<const double> z) {
    const std::size_t n = p.n_assets;
    const auto b = coeff_b(y, p);
    const auto eta = coeff_eta(y, p);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = eta[i * n + i];
        if (d < 0.0) {
            if (d < -1e-14)
                throw std::runtime_error("euler_step: negative diagonal diffusion (coefficient bug)");
            d = 0.0; // roundoff
        }
        out[i] = y[i] + b[i] * h + std::sqrt(d * h) * z[i];
    }
    return out;
}

// Per-node coefficients of the scheme, precomputed once per solve: the
// reduced PDE is autonomous so they never change across time steps.
struct CoefficientTable {
    std::size_t n = 0;
    std::size_t pairs = 0;
    double h = 0.0;
    std::vector<double> drift_point;  // y + b(y) h, node-major
    std::vector<double> sig;          // sqrt(eta_ii h), node-major
    std::vector<double> eta_off;      // pair-packed off-diagonal eta, node-major
    std::vector<double> vartheta;     // one per node
    // max over active nodes of sum_{j != i} |eta_ij| / eta_ii (0/0 -> 0);
    // above 1 the diagonal diffusion no longer dominates the nonlinearity.
    double monotonicity_ratio = 0.0;

    CoefficientTable() = default;

    CoefficientTable(const GridSpec& g, const MarketParams& p, double dt,
                     std::size_t workers = 1) {
        n = p.n_assets;
        pairs = cross_pair_count(n);
        h = dt;
        drift_point.assign(g.total * n, 0.0);
        sig.assign(g.total * n, 0.0);
        eta_off.assign(g.total * pairs, 0.0);
        vartheta.assign(g.total, 0.0);
        std::vector<double> ratios(g.total, 0.0);
        parallel_for(0, g.total, workers, [&](std::size_t k) {
            if (!g.active[k]) return;
            std::vector<double> y = g.point(k);
            const auto b = coeff_b(y, p);
            const auto eta = coeff_eta(y, p);
            vartheta[k] = coeff_vartheta(y, p);
            double worst = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                drift_point[k * n + i] = y[i] + b[i] * h;
                const double d = std::max(eta[i * n + i], 0.0);
                sig[k * n + i] = std::sqrt(d * h);
                double off = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i) off += std::abs(eta[i * n + j]);
                if (off > 0.0 && d > 0.0) worst = std::max(worst, off / d);
            }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    eta_off[k * pairs + cross_pair_index(i, j, n)] = eta[i * n + j];
            ratios[k] = worst;
        });
        for (double r : ratios) monotonicity_ratio = std::max(monotonicity_ratio, r);
    }
};

namespace detail {

constexpr std::uint64_t kCrnNodeKey = 0x43524e5f4e4f4445ULL;

// Empirical mean over m one-step samples of the interpolated value and
// derivative caches of the completed later slice. ZFn yields one standard
// normal per call, consumed axis-major within each sample.
template <typename ZFn>
ConditionalEstimates estimate_conditional_impl(const ValueField& next,
                                               std::span<const double> drift_point,
                                               std::span<const double> sig,
                                               std::size_t m, ZFn&& z_next) {
    const std::size_t n = next.dim();
    const std::size_t pairs = cross_pair_count(n);
    const std::size_t nf = 1 + n + pairs;
    double acc[8] = {0.0};
    double out[8];
    double q[8];
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t a = 0; a < n; ++a)
            q[a] = drift_point[a] + sig[a] * z_next();
        next.sample(std::span<const double>(q, n), std::span<double>(out, nf));
        for (std::size_t f = 0; f < nf; ++f) acc[f] += out[f];
    }
    ConditionalEstimates est;
    const double inv = 1.0 / static_cast<double>(m);
    est.d0 = acc[0] * inv;
    est.d1.resize(n);
    for (std::size_t a = 0; a < n; ++a) est.d1[a] = acc[1 + a] * inv;
    est.d2_cross.resize(pairs);
    for (std::size_t p2 = 0; p2 < pairs; ++p2) est.d2_cross[p2] = acc[1 + n + p2] * inv;
    return est;
}

} // namespace detail

// Conditional estimates at one point, with the sample stream keyed by
// (seed, time index, node key) so results are scheduling-independent.
inline ConditionalEstimates estimate_conditional(const ValueField& next,
                                                 std::span<const double> y,
                                                 std::size_t time_index,
                                                 const SchemeParams& sp,
                                                 const MarketParams& p,
                                                 std::uint64_t node_key = 0) {
    const std::size_t n = p.n_assets;
    const auto b = coeff_b(y, p);
    const auto eta = coeff_eta(y, p);
    std::vector<double> drift_point(n), sig(n);
    for (std::size_t i = 0; i < n; ++i) {
        drift_point[i] = y[i] + b[i] * sp.dt;
        sig[i] = std::sqrt(std::max(eta[i * n + i], 0.0) * sp.dt);
    }
    NormalStream rng(sp.seed, time_index,
                     sp.crn ? detail::kCrnNodeKey : node_key);
    return detail::estimate_conditional_impl(next, drift_point, sig, sp.m_paths,
                                             [&rng] { return rng.normal(); });
}

// Same, but with caller-supplied normals (used by tests to force z = 0).
template <typename ZFn>
ConditionalEstimates estimate_conditional_with(const ValueField& next,
                                               std::span<const double> y,
                                               const SchemeParams& sp,
                                               const MarketParams& p,
                                               ZFn&& z) {
    const std::size_t n = p.n_assets;
    const auto b = coeff_b(y, p);
    const auto eta = coeff_eta(y, p);
    std::vector<double> drift_point(n), sig(n);
    for (std::size_t i = 0; i < n; ++i) {
        drift_point[i] = y[i] + b[i] * sp.dt;
        sig[i] = std::sqrt(std::max(eta[i * n + i], 0.0) * sp.dt);
    }
    return detail::estimate_conditional_impl(next, drift_point, sig, sp.m_paths,
                                             std::forward<ZFn>(z));
}

namespace detail {

// Nonlinear remainder evaluated from precomputed per-node coefficients.
inline double nonlinear_remainder(std::span<const double> y,
                                  const ConditionalEstimates& est,
                                  std::span<const double> eta_off_pairs,
                                  double vartheta, double gamma,
                                  double clamp_eps, std::size_t& clamp_events) {
    const std::size_t n = y.size();
    double cross_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::size_t pi = cross_pair_index(i, j, n);
            cross_sum += eta_off_pairs[pi] * est.d2_cross[pi];
        }
    double bracket = gamma * est.d0;
    for (std::size_t i = 0; i < n; ++i) bracket -= y[i] * est.d1[i];
    if (bracket < clamp_eps) {
        bracket = clamp_eps;
        ++clamp_events;
    }
    return cross_sum - vartheta * est.d0 +
           (1.0 - gamma) / gamma * std::pow(bracket, gamma / (gamma - 1.0));
}

} // namespace detail

// F(y, estimates): off-diagonal diffusion + discounting + optimal-consumption
// term, with the consumption bracket floored at clamp_eps.
inline double nonlinear_F(std::span<const double> y,
                          const ConditionalEstimates& est,
                          const MarketParams& p, const SchemeParams& sp,
                          std::size_t* clamp_events = nullptr) {
    const auto eta = coeff_eta(y, p);
    const std::size_t n = p.n_assets;
    std::vector<double> off(cross_pair_count(n), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            off[cross_pair_index(i, j, n)] = eta[i * n + j];
    std::size_t events = 0;
    const double f = detail::nonlinear_remainder(y, est, off, coeff_vartheta(y, p),
                                                 p.risk_aversion, sp.clamp_eps,
                                                 events);
    if (clamp_events) *clamp_events += events;
    return f;
}

struct StepStats {
    std::size_t clamp_events = 0;
    double min_value = 0.0;
    double max_value = 0.0;
    double monotonicity_ratio = 0.0;
};

// One backward step of the Monte Carlo scheme over a whole slice:
// phi(y, t_k) = mean_M[ phi(Yhat, t_{k+1}) ] + h F(y, estimates).
inline ValueField pde_step(const ValueField& next, double t_k,
                           const SchemeParams& sp, const MarketParams& p,
                           const CoefficientTable& table,
                           StepStats* stats = nullptr) {
    const GridSpec& g = *next.spec;
    const std::size_t n = p.n_assets;
    const std::size_t pairs = cross_pair_count(n);
    const std::size_t time_index =
        static_cast<std::size_t>(std::llround(t_k / sp.dt));
    const double gamma = p.risk_aversion;

    ValueField out(next.spec, t_k, next.ext_value, next.edge_replicate);
    std::atomic<std::size_t> clamp_total{0};
    const std::size_t workers = resolve_workers(sp.workers);

    parallel_for(0, g.total, workers, [&](std::size_t k) {
        if (!g.active[k]) return; // stays at the extension value
        NormalStream rng(sp.seed, time_index,
                         sp.crn ? detail::kCrnNodeKey : k);
        const auto est = detail::estimate_conditional_impl(
            next,
            std::span<const double>(&table.drift_point[k * n], n),
            std::span<const double>(&table.sig[k * n], n), sp.m_paths,
            [&rng] { return rng.normal(); });

        double y_buf[8];
        std::span<double> y(y_buf, n);
        g.point(k, y);
        std::size_t clamps = 0;
        const double f = detail::nonlinear_remainder(
            y, est, std::span<const double>(&table.eta_off[k * pairs], pairs),
            table.vartheta[k], gamma, sp.clamp_eps, clamps);
        const double v = est.d0 + sp.dt * f;
        if (!std::isfinite(v)) {
            std::ostringstream msg;
            msg << "pde_step: non-finite value at t=" << t_k << ", node " << k
                << " (y =";
            for (std::size_t a = 0; a < n; ++a) msg << ' ' << y[a];
            msg << ")";
            throw std::runtime_error(msg.str());
        }
        out.values[k] = v;
        if (clamps) clamp_total.fetch_add(clamps, std::memory_order_relaxed);
    });

    out.refresh_derivatives(workers);

    if (stats) {
        stats->clamp_events = clamp_total.load();
        stats->monotonicity_ratio = table.monotonicity_ratio;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t k = 0; k < g.total; ++k) {
            if (!g.active[k]) continue;
            lo = std::min(lo, out.values[k]);
            hi = std::max(hi, out.values[k]);
        }
        stats->min_value = lo;
        stats->max_value = hi;
    }
    return out;
}

// Convenience overload building the coefficient table on the fly.
inline ValueField pde_step(const ValueField& next, double t_k,
                           const SchemeParams& sp, const MarketParams& p,
                           StepStats* stats = nullptr) {
    CoefficientTable table(*next.spec, p, sp.dt, resolve_workers(sp.workers));
    return pde_step(next, t_k, sp, p, table, stats);
}

} // namespace tcost

#endif // TCOST_MC_HPP
