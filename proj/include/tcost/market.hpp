// Market model for the finite-horizon investment-consumption problem with
// proportional transaction costs, reduced to wealth-fraction coordinates.
//
// Holds the problem constants (rate, drifts, covariance, costs, discount,
// risk aversion, horizon), the coefficient functions eta/b/vartheta of the
// reduced parabolic operator, the solvency domain, the terminal condition,
// the dual utility, the Merton proportion and the Dai-Yi free-boundary
// bounds used for verification in one dimension.

#ifndef TCOST_MARKET_HPP
#define TCOST_MARKET_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcost {

namespace detail {

// Cholesky factor of a symmetric matrix (row-major, n x n).
// Returns false if the matrix is not positive definite.
inline bool cholesky(const std::vector<double>& a, std::size_t n,
                     std::vector<double>& lower) {
    lower.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k)
                s -= lower[i * n + k] * lower[j * n + k];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                lower[i * n + i] = std::sqrt(s);
            } else {
                lower[i * n + j] = s / lower[j * n + j];
            }
        }
    }
    return true;
}

// Solves L L' x = rhs given the Cholesky factor L.
inline std::vector<double> cholesky_solve(const std::vector<double>& lower,
                                          std::size_t n,
                                          std::vector<double> rhs) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) rhs[i] -= lower[i * n + k] * rhs[k];
        rhs[i] /= lower[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) rhs[i] -= lower[k * n + i] * rhs[k];
        rhs[i] /= lower[i * n + i];
    }
    return rhs;
}

} // namespace detail

// All market and preference constants. Immutable after construction;
// construction validates every standing assumption.
struct MarketParams {
    std::size_t n_assets = 0;
    double rate = 0.0;                // r, per year
    std::vector<double> drift;        // alpha, length N
    std::vector<double> cov;          // a = sigma sigma', row-major N x N
    std::vector<double> buy_cost;     // lambda >= 0
    std::vector<double> sell_cost;    // mu >= 0
    double discount = 0.0;            // beta > 0
    double risk_aversion = 0.0;       // gamma < 1, gamma != 0
    double horizon = 0.0;             // T, years

    MarketParams() = default;

    MarketParams(std::size_t n, double r, std::vector<double> alpha,
                 std::vector<double> a, std::vector<double> lambda,
                 std::vector<double> mu, double beta, double gamma, double T)
        : n_assets(n), rate(r), drift(std::move(alpha)), cov(std::move(a)),
          buy_cost(std::move(lambda)), sell_cost(std::move(mu)),
          discount(beta), risk_aversion(gamma), horizon(T) {
        validate();
    }

    // Builds the covariance a = sigma sigma' from a volatility matrix.
    static MarketParams from_sigma(std::size_t n, double r,
                                   std::vector<double> alpha,
                                   const std::vector<double>& sigma,
                                   std::vector<double> lambda,
                                   std::vector<double> mu, double beta,
                                   double gamma, double T) {
        if (sigma.size() != n * n)
            throw std::invalid_argument("sigma must be N x N");
        std::vector<double> a(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    s += sigma[i * n + k] * sigma[j * n + k];
                a[i * n + j] = s;
            }
        return MarketParams(n, r, std::move(alpha), std::move(a),
                            std::move(lambda), std::move(mu), beta, gamma, T);
    }

    void validate() const {
        const std::size_t n = n_assets;
        if (n == 0) throw std::invalid_argument("n_assets must be positive");
        if (drift.size() != n) throw std::invalid_argument("drift must have length N");
        if (cov.size() != n * n) throw std::invalid_argument("cov must be N x N");
        if (buy_cost.size() != n || sell_cost.size() != n)
            throw std::invalid_argument("cost vectors must have length N");
        if (!(discount > 0.0)) throw std::invalid_argument("discount must be positive");
        if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
        if (!(risk_aversion < 1.0) || risk_aversion == 0.0)
            throw std::invalid_argument("risk_aversion must satisfy gamma < 1, gamma != 0");
        for (std::size_t i = 0; i < n; ++i) {
            if (buy_cost[i] < 0.0 || sell_cost[i] < 0.0)
                throw std::invalid_argument("transaction costs must be non-negative");
            if (!(buy_cost[i] + sell_cost[i] > 0.0))
                throw std::invalid_argument("lambda_i + mu_i must be positive for every asset");
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (std::abs(cov[i * n + j] - cov[j * n + i]) > 1e-12)
                    throw std::invalid_argument("cov must be symmetric within 1e-12");
        std::vector<double> chol;
        if (!detail::cholesky(cov, n, chol))
            throw std::invalid_argument("cov must be positive definite");
    }

    double gamma() const { return risk_aversion; }
};

// Coefficients of the reduced operator at one point y.
struct ReducedCoefficients {
    std::vector<double> eta;       // N x N, symmetric, row-major
    std::vector<double> b;         // length N
    double vartheta = 0.0;
};

namespace detail {

// (a y)_i and the quadratic form y' a y, shared by all three coefficients.
struct CovContraction {
    std::vector<double> ay;
    double yay = 0.0;
    CovContraction(std::span<const double> y, const MarketParams& p) {
        const std::size_t n = p.n_assets;
        ay.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += p.cov[i * n + j] * y[j];
            ay[i] = s;
            yay += y[i] * s;
        }
    }
};

} // namespace detail

// eta_ij(y) = y_i y_j (e_i - y)' a (e_j - y)
inline std::vector<double> coeff_eta(std::span<const double> y,
                                     const MarketParams& p) {
    const std::size_t n = p.n_assets;
    detail::CovContraction c(y, p);
    std::vector<double> eta(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v =
                y[i] * y[j] * (p.cov[i * n + j] - c.ay[i] - c.ay[j] + c.yay);
            eta[i * n + j] = v;
            eta[j * n + i] = v;
        }
    return eta;
}

// b_i(y) = y_i [ (gamma-1)((a y)_i - y' a y) + (alpha_i - r) - y.(alpha - r) ]
inline std::vector<double> coeff_b(std::span<const double> y,
                                   const MarketParams& p) {
    const std::size_t n = p.n_assets;
    detail::CovContraction c(y, p);
    double excess = 0.0;
    for (std::size_t k = 0; k < n; ++k) excess += y[k] * (p.drift[k] - p.rate);
    std::vector<double> b(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        b[i] = y[i] * ((p.risk_aversion - 1.0) * (c.ay[i] - c.yay) +
                       (p.drift[i] - p.rate) - excess);
    return b;
}

// vartheta(y) = beta - gamma [ r + (gamma-1)/2 y' a y + y.(alpha - r) ]
inline double coeff_vartheta(std::span<const double> y, const MarketParams& p) {
    const std::size_t n = p.n_assets;
    detail::CovContraction c(y, p);
    double excess = 0.0;
    for (std::size_t k = 0; k < n; ++k) excess += y[k] * (p.drift[k] - p.rate);
    return p.discount -
           p.risk_aversion *
               (p.rate + 0.5 * (p.risk_aversion - 1.0) * c.yay + excess);
}

inline ReducedCoefficients reduced_coefficients(std::span<const double> y,
                                                const MarketParams& p) {
    return {coeff_eta(y, p), coeff_b(y, p), coeff_vartheta(y, p)};
}

// Net wealth of the unit-wealth fraction point after forced liquidation.
inline double liquidation_wealth(std::span<const double> y,
                                 const MarketParams& p) {
    double w = 1.0;
    for (std::size_t i = 0; i < p.n_assets; ++i)
        w += std::min(-p.sell_cost[i] * y[i], p.buy_cost[i] * y[i]);
    return w;
}

// Membership in the normalized solvency section Theta^N. The small slack
// absorbs roundoff on points that sit exactly on the solvency boundary.
inline bool in_domain(std::span<const double> y, const MarketParams& p) {
    return liquidation_wealth(y, p) >= -1e-12;
}

// Terminal condition: utility of the liquidated unit wealth.
inline double terminal_value(std::span<const double> y, const MarketParams& p,
                             double wealth_floor = 1e-8) {
    if (!in_domain(y, p))
        throw std::domain_error("terminal_value: point outside solvency region");
    const double g = p.risk_aversion;
    double w = std::max(liquidation_wealth(y, p), 0.0);
    if (g < 0.0) w = std::max(w, wealth_floor);
    return std::pow(w, g) / g;
}

// Legendre-type dual of the power utility, sup_c { U(c) - c nu }.
inline double dual_utility(double nu, const MarketParams& p) {
    if (!(nu > 0.0)) throw std::domain_error("dual_utility: nu must be positive");
    const double g = p.risk_aversion;
    return (1.0 - g) / g * std::pow(nu, g / (g - 1.0));
}

// Frictionless benchmark allocation pi* = a^{-1}(alpha - r e) / (1 - gamma).
inline std::vector<double> merton_proportion(const MarketParams& p) {
    const std::size_t n = p.n_assets;
    std::vector<double> chol;
    if (!detail::cholesky(p.cov, n, chol))
        throw std::invalid_argument("merton_proportion: singular covariance");
    std::vector<double> rhs(n);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = p.drift[i] - p.rate;
    auto pi = detail::cholesky_solve(chol, n, std::move(rhs));
    for (double& v : pi) v /= (1.0 - p.risk_aversion);
    return pi;
}

// One-dimensional free-boundary bounds (Dai & Yi 2009, Theorem 5.4).
struct DaiYiBounds {
    double tau = 0.0;         // years before maturity with no buying
    double y_tilde = 0.0;
    double sell_lower = 0.0;  // S_t >= this for all t in [0,T)
    double buy_upper = 0.0;   // B_t <= this for t in [0, T - tau)
    // sign of alpha_1 - r - (1-gamma) a_11, deciding the S_t trichotomy
    double sell_excess = 0.0;
};

inline DaiYiBounds dai_yi_bounds(const MarketParams& p) {
    if (p.n_assets != 1)
        throw std::invalid_argument("dai_yi_bounds: defined only for N = 1");
    const double dr = p.drift[0] - p.rate;
    if (dr == 0.0)
        throw std::invalid_argument("dai_yi_bounds: alpha_1 must differ from r");
    DaiYiBounds out;
    out.tau = std::log((1.0 + p.buy_cost[0]) / (1.0 - p.sell_cost[0])) / dr;
    out.sell_excess = dr - (1.0 - p.risk_aversion) * p.cov[0];
    out.y_tilde = -out.sell_excess / dr;
    out.sell_lower = 1.0 / (1.0 + (1.0 - p.sell_cost[0]) * out.y_tilde);
    out.buy_upper = 1.0 / (1.0 + (1.0 + p.buy_cost[0]) * out.y_tilde);
    return out;
}

// Maps a fraction-space value back to the original coordinates:
// V(x, y) = phi(y / (x + e.y)) (x + e.y)^gamma. The caller supplies
// phi evaluated at the scaled point.
inline double reconstruct_full_value(double x, std::span<const double> y,
                                     double phi_val, const MarketParams& p) {
    double w = x;
    for (double yi : y) w += yi;
    if (!(w > 0.0))
        throw std::domain_error("reconstruct_full_value: non-positive total wealth");
    return phi_val * std::pow(w, p.risk_aversion);
}

} // namespace tcost

#endif // TCOST_MARKET_HPP
