// Run configuration: flat dotted key = value text files, experiment presets
// matching the standard single-, two- and three-asset test setups, and the
// writer that round-trips a configuration exactly.

#ifndef TCOST_CONFIG_HPP
#define TCOST_CONFIG_HPP

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcost/market.hpp"
#include "tcost/mc.hpp"
#include "tcost/text.hpp"

namespace tcost {

enum class SolverKind { Mc, Fd1d, Both };

inline std::string to_string(SolverKind k) {
    switch (k) {
        case SolverKind::Mc: return "mc";
        case SolverKind::Fd1d: return "fd1d";
        default: return "both";
    }
}

struct GridConfig {
    std::vector<double> lo, hi, dy;
    bool operator==(const GridConfig&) const = default;
};

struct OutputConfig {
    std::string out_dir = "out";
    std::vector<double> retain_times;
    std::size_t retain_stride = 0; // 0 = auto
    bool keep_all = false;
    bool dump_values = true;
    bool dump_regions = true;
    double stop_time = 0.0;
    bool apply_obstacle = true;    // --no-adjust turns this off
    std::size_t merton_tol_cells = 2;
    double check_grid_tol = 0.0;   // 0 = auto (2 dy)
    double check_time_slack = 0.0; // 0 = auto (2 dt)
    bool operator==(const OutputConfig&) const = default;
};

inline bool operator==(const MarketParams& a, const MarketParams& b) {
    return a.n_assets == b.n_assets && a.rate == b.rate && a.drift == b.drift &&
           a.cov == b.cov && a.buy_cost == b.buy_cost &&
           a.sell_cost == b.sell_cost && a.discount == b.discount &&
           a.risk_aversion == b.risk_aversion && a.horizon == b.horizon;
}

inline bool operator==(const SchemeParams& a, const SchemeParams& b) {
    return a.dt == b.dt && a.m_paths == b.m_paths && a.seed == b.seed &&
           a.clamp_eps == b.clamp_eps && a.adjust_tol == b.adjust_tol &&
           a.max_sweeps == b.max_sweeps && a.workers == b.workers &&
           a.crn == b.crn && a.wealth_floor == b.wealth_floor;
}

struct RunConfig {
    std::string preset; // provenance only, not compared
    MarketParams market;
    SchemeParams scheme;
    GridConfig grid;
    SolverKind solver = SolverKind::Mc;
    OutputConfig output;

    bool operator==(const RunConfig& o) const {
        return market == o.market && scheme == o.scheme && grid == o.grid &&
               solver == o.solver && output == o.output;
    }

    void validate() const {
        market.validate();
        scheme.validate();
        const std::size_t n = market.n_assets;
        if (grid.lo.size() != n || grid.hi.size() != n || grid.dy.size() != n)
            throw std::invalid_argument("config: grid.lo/hi/dy must have length N");
        if (solver != SolverKind::Mc && n != 1)
            throw std::invalid_argument("config: the fd1d solver requires N = 1");
        if (n > 3)
            throw std::invalid_argument(
                "config: full tensor-grid solves are limited to N <= 3");
        if (output.stop_time < 0.0 || output.stop_time >= market.horizon)
            throw std::invalid_argument("config: run.stop_time must lie in [0, T)");
    }
};

// ---------------------------------------------------------------------------
// Presets (desk-scale defaults; the paper-scale h = dy = 0.01, M = 1e5 runs
// are reachable by overriding scheme.dt / grid.dy / scheme.paths).
// ---------------------------------------------------------------------------

inline std::vector<std::string> preset_names() {
    return {"test1", "test2a", "test2b", "test3a", "test3b", "merton-smallcost"};
}

inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    c.scheme.seed = 12345;
    c.scheme.workers = 0;
    if (name == "test1") {
        c.market = MarketParams(1, 0.07, {0.12}, {0.16}, {0.05}, {0.05}, 0.1, 0.2, 5.0);
        c.grid = {{-0.2}, {1.2}, {0.02}};
        c.scheme.dt = 0.02;
        c.scheme.m_paths = 5000;
        c.output.out_dir = "out/test1";
    } else if (name == "test2a" || name == "test2b") {
        const double a12 = name == "test2a" ? 0.028 : -0.028;
        c.market = MarketParams(2, 0.0, {0.14, 0.12}, {0.16, a12, a12, 0.1225},
                                {0.05, 0.05}, {0.05, 0.05}, 0.1, 0.2, 1.0);
        c.grid = {{-0.2, -0.2}, {1.2, 1.2}, {0.05, 0.05}};
        c.scheme.dt = 0.02;
        c.scheme.m_paths = 2000;
        c.output.retain_times = {0.9};
        c.output.out_dir = "out/" + name;
    } else if (name == "test3a" || name == "test3b") {
        std::vector<double> a = {0.16, 0.0, 0.0, 0.0, 0.1225, 0.0, 0.0, 0.0, 0.09};
        if (name == "test3b") {
            a[1] = a[3] = 0.014;
            a[2] = a[6] = 0.012;
            a[5] = a[7] = 0.0105;
        }
        c.market = MarketParams(3, 0.07, {0.14, 0.12, 0.1}, std::move(a),
                                {0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}, 0.1, 0.2, 1.0);
        c.grid = {{-0.2, -0.2, -0.2}, {1.2, 1.2, 1.2}, {0.1, 0.1, 0.1}};
        c.scheme.dt = 0.02;
        c.scheme.m_paths = 1000;
        c.output.retain_times = {0.9};
        c.output.out_dir = "out/" + name;
    } else if (name == "merton-smallcost") {
        c.market = MarketParams(2, 0.07, {0.14, 0.12}, {0.16, 0.0, 0.0, 0.1225},
                                {1e-6, 1e-6}, {1e-6, 1e-6}, 0.1, -1.0, 1.0);
        c.grid = {{0.0, 0.0}, {0.4, 0.4}, {0.01, 0.01}};
        c.scheme.dt = 0.02;
        c.scheme.m_paths = 20000;
        c.output.retain_times = {0.9};
        c.output.stop_time = 0.9;
        c.output.out_dir = "out/merton-smallcost";
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

inline bool is_preset_name(const std::string& s) {
    for (const auto& n : preset_names())
        if (n == s) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

struct MarketDraft {
    std::size_t n_assets = 0;
    double rate = 0.0;
    std::vector<double> drift, cov, sigma, buy_cost, sell_cost;
    double discount = 0.0, risk_aversion = 0.0, horizon = 0.0;

    static MarketDraft from_params(const MarketParams& p) {
        return {p.n_assets, p.rate,     p.drift,    p.cov,     {},
                p.buy_cost, p.sell_cost, p.discount, p.risk_aversion, p.horizon};
    }

    MarketParams to_params() const {
        if (!sigma.empty() && !cov.empty())
            throw std::invalid_argument(
                "config: specify either market.cov or market.sigma, not both");
        if (!sigma.empty())
            return MarketParams::from_sigma(n_assets, rate, drift, sigma,
                                            buy_cost, sell_cost, discount,
                                            risk_aversion, horizon);
        return MarketParams(n_assets, rate, drift, cov, buy_cost, sell_cost,
                            discount, risk_aversion, horizon);
    }
};

inline double require_double(const std::string& key, const std::string& v) {
    double out;
    if (!parse_double(v, out))
        throw std::invalid_argument("config: key '" + key + "': bad number '" + v + "'");
    return out;
}

inline std::size_t require_size(const std::string& key, const std::string& v) {
    const double d = require_double(key, v);
    if (d < 0 || d != std::floor(d))
        throw std::invalid_argument("config: key '" + key + "': expected a non-negative integer");
    return static_cast<std::size_t>(d);
}

inline bool require_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "': expected true/false");
}

inline std::vector<double> require_vector(const std::string& key,
                                          const std::string& v) {
    std::vector<double> out;
    for (const auto& piece : split_any(v, ", "))
        out.push_back(require_double(key, piece));
    return out;
}

// Rows separated by ';', entries by ',' or spaces; a single row is accepted
// for a full row-major matrix as well.
inline std::vector<double> require_matrix(const std::string& key,
                                          const std::string& v) {
    std::vector<double> out;
    for (const auto& row : split_any(v, ";"))
        for (const auto& piece : split_any(row, ", "))
            out.push_back(require_double(key, piece));
    return out;
}

} // namespace detail

// Applies parsed key/value pairs on top of a base configuration.
inline RunConfig apply_config_entries(
    RunConfig base, const std::vector<std::pair<std::string, std::string>>& entries) {
    using namespace detail;
    MarketDraft market = MarketDraft::from_params(base.market);
    bool market_touched = false;

    for (const auto& [key, value] : entries) {
        if (key == "run.preset") continue; // handled by the loader
        if (key == "run.solver") {
            if (value == "mc") base.solver = SolverKind::Mc;
            else if (value == "fd1d") base.solver = SolverKind::Fd1d;
            else if (value == "both") base.solver = SolverKind::Both;
            else throw std::invalid_argument("config: key 'run.solver': expected mc|fd1d|both");
        } else if (key == "run.out_dir") base.output.out_dir = value;
        else if (key == "run.retain_times") base.output.retain_times = require_vector(key, value);
        else if (key == "run.retain_stride") base.output.retain_stride = require_size(key, value);
        else if (key == "run.keep_all") base.output.keep_all = require_bool(key, value);
        else if (key == "run.dump_values") base.output.dump_values = require_bool(key, value);
        else if (key == "run.dump_regions") base.output.dump_regions = require_bool(key, value);
        else if (key == "run.stop_time") base.output.stop_time = require_double(key, value);
        else if (key == "run.adjust") base.output.apply_obstacle = require_bool(key, value);
        else if (key == "run.merton_tol_cells") base.output.merton_tol_cells = require_size(key, value);
        else if (key == "run.check_grid_tol") base.output.check_grid_tol = require_double(key, value);
        else if (key == "run.check_time_slack") base.output.check_time_slack = require_double(key, value);
        else if (key == "market.n_assets") { market.n_assets = require_size(key, value); market_touched = true; }
        else if (key == "market.rate") { market.rate = require_double(key, value); market_touched = true; }
        else if (key == "market.drift") { market.drift = require_vector(key, value); market_touched = true; }
        else if (key == "market.cov") { market.cov = require_matrix(key, value); market.sigma.clear(); market_touched = true; }
        else if (key == "market.sigma") { market.sigma = require_matrix(key, value); market.cov.clear(); market_touched = true; }
        else if (key == "market.buy_cost") { market.buy_cost = require_vector(key, value); market_touched = true; }
        else if (key == "market.sell_cost") { market.sell_cost = require_vector(key, value); market_touched = true; }
        else if (key == "market.discount") { market.discount = require_double(key, value); market_touched = true; }
        else if (key == "market.risk_aversion") { market.risk_aversion = require_double(key, value); market_touched = true; }
        else if (key == "market.horizon") { market.horizon = require_double(key, value); market_touched = true; }
        else if (key == "scheme.dt") base.scheme.dt = require_double(key, value);
        else if (key == "scheme.paths") base.scheme.m_paths = require_size(key, value);
        else if (key == "scheme.seed") base.scheme.seed = static_cast<std::uint64_t>(require_double(key, value));
        else if (key == "scheme.clamp_eps") base.scheme.clamp_eps = require_double(key, value);
        else if (key == "scheme.adjust_tol") base.scheme.adjust_tol = require_double(key, value);
        else if (key == "scheme.max_sweeps") base.scheme.max_sweeps = require_size(key, value);
        else if (key == "scheme.workers") base.scheme.workers = require_size(key, value);
        else if (key == "scheme.crn") base.scheme.crn = require_bool(key, value);
        else if (key == "scheme.wealth_floor") base.scheme.wealth_floor = require_double(key, value);
        else if (key == "grid.lo") base.grid.lo = require_vector(key, value);
        else if (key == "grid.hi") base.grid.hi = require_vector(key, value);
        else if (key == "grid.dy") base.grid.dy = require_vector(key, value);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }

    if (market_touched) base.market = market.to_params();
    base.validate();
    return base;
}

inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const auto trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        ": expected 'key = value'");
        std::string key(trim(trimmed.substr(0, eq)));
        std::string value(trim(trimmed.substr(eq + 1)));
        if (key.empty())
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        ": empty key");
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

inline RunConfig load_config_text(const std::string& text) {
    const auto entries = parse_config_text(text);
    RunConfig base;
    bool from_preset = false;
    for (const auto& [key, value] : entries)
        if (key == "run.preset") {
            base = preset_config(value);
            from_preset = true;
        }
    if (!from_preset) {
        // bare defaults; market must be fully specified by the file
        base.preset.clear();
    }
    return apply_config_entries(std::move(base), entries);
}

// Accepts either a preset name or a path to a config file.
inline RunConfig load_config(const std::string& name_or_path) {
    if (is_preset_name(name_or_path)) return preset_config(name_or_path);
    std::ifstream in(name_or_path);
    if (!in)
        throw std::invalid_argument("config: cannot open '" + name_or_path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_config_text(buf.str());
}

namespace detail {

inline std::string join_shortest(const std::vector<double>& v,
                                 const char* sep = ", ") {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += format_shortest(v[i]);
    }
    return out;
}

inline std::string matrix_rows(const std::vector<double>& m, std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += "; ";
        for (std::size_t j = 0; j < n; ++j) {
            if (j) out += ", ";
            out += format_shortest(m[i * n + j]);
        }
    }
    return out;
}

} // namespace detail

// Emits the fully resolved configuration; load_config_text() of the result
// reproduces the configuration exactly.
inline std::string write_config(const RunConfig& c) {
    std::ostringstream os;
    if (!c.preset.empty()) os << "run.preset = " << c.preset << "\n";
    os << "run.solver = " << to_string(c.solver) << "\n";
    os << "run.out_dir = " << c.output.out_dir << "\n";
    if (!c.output.retain_times.empty())
        os << "run.retain_times = " << detail::join_shortest(c.output.retain_times) << "\n";
    os << "run.retain_stride = " << c.output.retain_stride << "\n";
    os << "run.keep_all = " << (c.output.keep_all ? "true" : "false") << "\n";
    os << "run.dump_values = " << (c.output.dump_values ? "true" : "false") << "\n";
    os << "run.dump_regions = " << (c.output.dump_regions ? "true" : "false") << "\n";
    os << "run.stop_time = " << format_shortest(c.output.stop_time) << "\n";
    os << "run.adjust = " << (c.output.apply_obstacle ? "true" : "false") << "\n";
    os << "run.merton_tol_cells = " << c.output.merton_tol_cells << "\n";
    os << "run.check_grid_tol = " << format_shortest(c.output.check_grid_tol) << "\n";
    os << "run.check_time_slack = " << format_shortest(c.output.check_time_slack) << "\n";
    os << "market.n_assets = " << c.market.n_assets << "\n";
    os << "market.rate = " << format_shortest(c.market.rate) << "\n";
    os << "market.drift = " << detail::join_shortest(c.market.drift) << "\n";
    os << "market.cov = " << detail::matrix_rows(c.market.cov, c.market.n_assets) << "\n";
    os << "market.buy_cost = " << detail::join_shortest(c.market.buy_cost) << "\n";
    os << "market.sell_cost = " << detail::join_shortest(c.market.sell_cost) << "\n";
    os << "market.discount = " << format_shortest(c.market.discount) << "\n";
    os << "market.risk_aversion = " << format_shortest(c.market.risk_aversion) << "\n";
    os << "market.horizon = " << format_shortest(c.market.horizon) << "\n";
    os << "scheme.dt = " << format_shortest(c.scheme.dt) << "\n";
    os << "scheme.paths = " << c.scheme.m_paths << "\n";
    os << "scheme.seed = " << c.scheme.seed << "\n";
    os << "scheme.clamp_eps = " << format_shortest(c.scheme.clamp_eps) << "\n";
    os << "scheme.adjust_tol = " << format_shortest(c.scheme.adjust_tol) << "\n";
    os << "scheme.max_sweeps = " << c.scheme.max_sweeps << "\n";
    os << "scheme.workers = " << c.scheme.workers << "\n";
    os << "scheme.crn = " << (c.scheme.crn ? "true" : "false") << "\n";
    os << "scheme.wealth_floor = " << format_shortest(c.scheme.wealth_floor) << "\n";
    os << "grid.lo = " << detail::join_shortest(c.grid.lo) << "\n";
    os << "grid.hi = " << detail::join_shortest(c.grid.hi) << "\n";
    os << "grid.dy = " << detail::join_shortest(c.grid.dy) << "\n";
    return os.str();
}

} // namespace tcost

#endif // TCOST_CONFIG_HPP
