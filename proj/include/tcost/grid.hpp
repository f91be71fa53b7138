// Uniform tensor grid over a truncation box inside the solvency domain.

#ifndef TCOST_GRID_HPP
#define TCOST_GRID_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "tcost/market.hpp"

namespace tcost {

struct GridSpec {
    std::vector<double> lo;         // box lower corner
    std::vector<double> hi;         // box upper corner
    std::vector<double> dy;         // spacing per axis
    std::vector<std::size_t> counts; // node counts per axis
    std::vector<std::size_t> strides; // row-major, last axis fastest
    std::vector<std::uint8_t> active; // 1 iff node lies in Theta^N
    std::size_t total = 0;
    std::size_t active_count = 0;

    std::size_t dim() const { return lo.size(); }

    std::size_t linear(std::span<const std::size_t> idx) const {
        std::size_t k = 0;
        for (std::size_t a = 0; a < idx.size(); ++a) k += idx[a] * strides[a];
        return k;
    }

    void unravel(std::size_t k, std::span<std::size_t> idx) const {
        for (std::size_t a = 0; a < dim(); ++a) {
            idx[a] = k / strides[a];
            k %= strides[a];
        }
    }

    double coord(std::size_t axis, std::size_t i) const {
        return lo[axis] + static_cast<double>(i) * dy[axis];
    }

    void point(std::size_t k, std::span<double> y) const {
        for (std::size_t a = 0; a < dim(); ++a) {
            y[a] = coord(a, k / strides[a]);
            k %= strides[a];
        }
    }

    std::vector<double> point(std::size_t k) const {
        std::vector<double> y(dim());
        point(k, std::span<double>(y));
        return y;
    }
};

// Discretizes the box [lo, hi] with spacing dy and flags each node active
// iff it lies inside Theta^N.
inline GridSpec build_grid(const MarketParams& p, std::vector<double> lo,
                           std::vector<double> hi, std::vector<double> dy) {
    const std::size_t n = p.n_assets;
    if (lo.size() != n || hi.size() != n || dy.size() != n)
        throw std::invalid_argument("build_grid: lo/hi/dy must have length N");
    for (std::size_t a = 0; a < n; ++a) {
        if (!(lo[a] < hi[a]))
            throw std::invalid_argument("build_grid: lo must be below hi");
        if (!(dy[a] > 0.0))
            throw std::invalid_argument("build_grid: dy must be positive");
    }
    GridSpec g;
    g.lo = std::move(lo);
    g.hi = std::move(hi);
    g.dy = std::move(dy);
    g.counts.resize(n);
    for (std::size_t a = 0; a < n; ++a)
        g.counts[a] =
            static_cast<std::size_t>(std::llround((g.hi[a] - g.lo[a]) / g.dy[a])) + 1;
    g.strides.assign(n, 1);
    for (std::size_t a = n - 1; a-- > 0;)
        g.strides[a] = g.strides[a + 1] * g.counts[a + 1];
    g.total = g.strides[0] * g.counts[0];

    g.active.assign(g.total, 0);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < g.total; ++k) {
        g.point(k, y);
        if (in_domain(y, p)) {
            g.active[k] = 1;
            ++g.active_count;
        }
    }
    if (g.active_count == 0)
        throw std::invalid_argument("build_grid: no grid node lies inside the solvency region");
    return g;
}

} // namespace tcost

#endif // TCOST_GRID_HPP
