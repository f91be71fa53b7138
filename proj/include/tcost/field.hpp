// One time slice of the reduced value function on a tensor grid: node
// values, multilinear interpolation, and centered-difference caches for the
// first and cross derivatives.
//
// Nodes outside the solvency region and query points outside the truncation
// box take the extension value (0 for gamma > 0, a finite stand-in for
// -infinity when gamma < 0). Stencils never read phantom values across the
// truncation box edge: first derivatives fall back to second-order one-sided
// differences there (still exact on quadratics, and consistent with the
// obstacle projection at the artificial edge), and cross stencils replicate
// the centre value for missing corners. For gamma < 0 the same rule applies
// at solvency-boundary neighbors, where the finite floor stand-in would blow
// the caches up; for gamma > 0 the stored zero at insolvent nodes is the
// genuine boundary value and is read directly.

#ifndef TCOST_FIELD_HPP
#define TCOST_FIELD_HPP

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcost/grid.hpp"
#include "tcost/market.hpp"
#include "tcost/parallel.hpp"
#include "tcost/text.hpp"

namespace tcost {

// Value outside the solvency region: zero utility for gamma > 0, and the
// utility of a configurable tiny wealth for gamma < 0.
inline double extension_value(const MarketParams& p, double wealth_floor = 1e-8) {
    const double g = p.risk_aversion;
    if (g > 0.0) return 0.0;
    return std::pow(wealth_floor, g) / g;
}

inline std::size_t cross_pair_count(std::size_t n) { return n * (n - 1) / 2; }

// Index of the unordered pair (i, j), i < j, in the packed cross storage.
inline std::size_t cross_pair_index(std::size_t i, std::size_t j, std::size_t n) {
    return i * n - i * (i + 1) / 2 + (j - i - 1);
}

struct ValueField {
    std::shared_ptr<const GridSpec> spec;
    double time = 0.0;
    double ext_value = 0.0;
    bool edge_replicate = false;      // true iff gamma < 0
    std::vector<double> values;       // one per node
    std::vector<double> grad;         // node-major, N per node
    std::vector<double> cross;        // node-major, N(N-1)/2 per node

    ValueField() = default;

    ValueField(std::shared_ptr<const GridSpec> s, double t, double ext,
               bool replicate)
        : spec(std::move(s)), time(t), ext_value(ext), edge_replicate(replicate) {
        const std::size_t total = spec->total;
        values.assign(total, ext_value);
        grad.assign(total * spec->dim(), 0.0);
        cross.assign(total * cross_pair_count(spec->dim()), 0.0);
    }

    std::size_t dim() const { return spec->dim(); }

    // --- neighbor reads used by the stencils -----------------------------

    // A node value is readable by a stencil if it is inside the box and, for
    // gamma < 0, inside the solvency region (the floor stand-in must never
    // enter a difference quotient).
    bool stencil_readable(std::size_t axis, long axis_index,
                          std::size_t linear) const {
        if (axis_index < 0 || axis_index >= static_cast<long>(spec->counts[axis]))
            return false;
        return !edge_replicate || spec->active[linear];
    }

    // --- difference stencils ----------------------------------------------

    // Centered where both neighbors are readable, second-order one-sided at
    // the truncation edge (first-order when only two points exist). Exact on
    // quadratics either way.
    double first_derivative(std::size_t k, std::span<const std::size_t> idx,
                            std::size_t axis) const {
        const double dy = spec->dy[axis];
        const std::size_t stride = spec->strides[axis];
        const long i = static_cast<long>(idx[axis]);
        const bool up = stencil_readable(axis, i + 1, k + stride);
        const bool down = stencil_readable(axis, i - 1, k - stride);
        if (up && down)
            return (values[k + stride] - values[k - stride]) / (2.0 * dy);
        if (up) {
            if (stencil_readable(axis, i + 2, k + 2 * stride))
                return (-3.0 * values[k] + 4.0 * values[k + stride] -
                        values[k + 2 * stride]) /
                       (2.0 * dy);
            return (values[k + stride] - values[k]) / dy;
        }
        if (down) {
            if (stencil_readable(axis, i - 2, k - 2 * stride))
                return (3.0 * values[k] - 4.0 * values[k - stride] +
                        values[k - 2 * stride]) /
                       (2.0 * dy);
            return (values[k] - values[k - stride]) / dy;
        }
        return 0.0;
    }

    double cross_derivative(std::size_t k, std::span<const std::size_t> idx,
                            std::size_t i, std::size_t j) const {
        if (i == j)
            throw std::invalid_argument("cross_derivative: axes must differ");
        if (i > j) std::swap(i, j);
        auto corner = [&](int di, int dj) {
            const long ii = static_cast<long>(idx[i]) + di;
            const long jj = static_cast<long>(idx[j]) + dj;
            if (ii < 0 || ii >= static_cast<long>(spec->counts[i]) || jj < 0 ||
                jj >= static_cast<long>(spec->counts[j]))
                return values[k];
            const std::size_t kk =
                k + static_cast<std::size_t>(
                        di * static_cast<long>(spec->strides[i]) +
                        dj * static_cast<long>(spec->strides[j]));
            if (edge_replicate && !spec->active[kk]) return values[k];
            return values[kk];
        };
        return (corner(+1, +1) + corner(-1, -1) - corner(+1, -1) -
                corner(-1, +1)) /
               (4.0 * spec->dy[i] * spec->dy[j]);
    }

    // Recomputes the derivative caches from the node values. Inactive nodes
    // keep zero caches.
    void refresh_derivatives(std::size_t workers = 1) {
        const std::size_t n = dim();
        const std::size_t pairs = cross_pair_count(n);
        parallel_for(0, spec->total, workers, [&](std::size_t k) {
            if (!spec->active[k]) return;
            std::size_t idx_buf[8];
            std::span<std::size_t> idx(idx_buf, n);
            spec->unravel(k, idx);
            for (std::size_t a = 0; a < n; ++a)
                grad[k * n + a] = first_derivative(k, idx, a);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    cross[k * pairs + cross_pair_index(i, j, n)] =
                        cross_derivative(k, idx, i, j);
        });
    }

    // --- multilinear interpolation ----------------------------------------

    // Multilinear interpolation of the node values at q. Corners outside the
    // box or outside the solvency region contribute the extension value;
    // queries beyond one phantom cell of the box are pure extension.
    double value_at(std::span<const double> q) const {
        double out[8];
        sample(q, std::span<double>(out, 1), true);
        return out[0];
    }

    // Interpolates the value and every cached derivative with one weight
    // computation. Layout of out: [phi, grad_0..grad_{N-1}, cross pairs].
    // Derivative fields extend with zero outside the grid (the extension is
    // constant there). When phi_only, out must have room for just out[0].
    void sample(std::span<const double> q, std::span<double> out,
                bool phi_only = false) const {
        const std::size_t n = dim();
        const std::size_t pairs = cross_pair_count(n);
        const std::size_t nf = phi_only ? 1 : 1 + n + pairs;
        for (std::size_t f = 0; f < nf; ++f) out[f] = 0.0;

        long cell[8];
        double frac[8];
        for (std::size_t a = 0; a < n; ++a) {
            const double guard = 1e-12;
            double qa = q[a];
            if (qa < spec->lo[a] && qa >= spec->lo[a] - guard) qa = spec->lo[a];
            if (qa > spec->hi[a] && qa <= spec->hi[a] + guard) qa = spec->hi[a];
            const double u = (qa - spec->lo[a]) / spec->dy[a];
            double c = std::floor(u);
            double f = u - c;
            // top node: treat as the upper corner of the last interior cell
            if (c >= static_cast<double>(spec->counts[a] - 1) &&
                qa <= spec->hi[a]) {
                c = static_cast<double>(spec->counts[a]) - 2.0;
                f = 1.0;
            }
            const long cl = static_cast<long>(c);
            if (cl < -1 || cl > static_cast<long>(spec->counts[a]) - 1) {
                out[0] = ext_value; // beyond the phantom layer on some axis
                return;
            }
            cell[a] = cl;
            frac[a] = f;
        }

        const std::size_t corners = std::size_t{1} << n;
        for (std::size_t m = 0; m < corners; ++m) {
            double w = 1.0;
            std::size_t k = 0;
            bool offgrid = false;
            for (std::size_t a = 0; a < n; ++a) {
                const bool hi_bit = (m >> a) & 1;
                w *= hi_bit ? frac[a] : 1.0 - frac[a];
                const long ia = cell[a] + (hi_bit ? 1 : 0);
                if (ia < 0 || ia >= static_cast<long>(spec->counts[a]))
                    offgrid = true;
                else
                    k += static_cast<std::size_t>(ia) * spec->strides[a];
            }
            if (w == 0.0) continue;
            if (offgrid) {
                out[0] += w * ext_value;
                continue;
            }
            out[0] += w * values[k];
            if (!phi_only) {
                for (std::size_t a = 0; a < n; ++a)
                    out[1 + a] += w * grad[k * n + a];
                for (std::size_t p = 0; p < pairs; ++p)
                    out[1 + n + p] += w * cross[k * pairs + p];
            }
        }
    }
};

// Terminal slice: utility of the liquidated unit wealth at every active node.
inline ValueField make_terminal_field(std::shared_ptr<const GridSpec> spec,
                                      const MarketParams& p,
                                      double wealth_floor = 1e-8,
                                      std::size_t workers = 1) {
    ValueField f(std::move(spec), p.horizon, extension_value(p, wealth_floor),
                 p.risk_aversion < 0.0);
    const std::size_t n = f.dim();
    parallel_for(0, f.spec->total, workers, [&](std::size_t k) {
        if (!f.spec->active[k]) return;
        double y_buf[8];
        std::span<double> y(y_buf, n);
        f.spec->point(k, y);
        f.values[k] = terminal_value(y, p, wealth_floor);
    });
    f.refresh_derivatives(workers);
    return f;
}

// Writes the active nodes of a slice as CSV: y1,...,yN,phi (17 significant
// digits).
inline void dump_slice_csv(const ValueField& f, std::ostream& os) {
    const std::size_t n = f.dim();
    for (std::size_t a = 0; a < n; ++a) os << 'y' << (a + 1) << ',';
    os << "phi\n";
    std::vector<double> y(n);
    for (std::size_t k = 0; k < f.spec->total; ++k) {
        if (!f.spec->active[k]) continue;
        f.spec->point(k, std::span<double>(y));
        for (std::size_t a = 0; a < n; ++a) os << format_sig17(y[a]) << ',';
        os << format_sig17(f.values[k]) << '\n';
    }
}

} // namespace tcost

#endif // TCOST_FIELD_HPP
