// Executes a configured run end to end: solve, write every CSV artifact
// atomically (temp file + rename), evaluate the applicable property checks
// and summarize them in report.txt.
//
// Exit codes: 0 success, 1 check failure, 2 runtime abort, 3 config error.

#ifndef TCOST_RUN_HPP
#define TCOST_RUN_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tcost/config.hpp"
#include "tcost/fd1d.hpp"
#include "tcost/field.hpp"
#include "tcost/solver.hpp"
#include "tcost/text.hpp"

namespace tcost {

namespace detail {

inline void atomic_write(const std::filesystem::path& path,
                         const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string boundaries_csv(const BoundaryReport& report) {
    std::ostringstream os;
    os << "t,B,S\n";
    for (const auto& bp : report.series)
        os << format_shortest(bp.time) << ',' << format_shortest(bp.buy) << ','
           << format_shortest(bp.sell) << '\n';
    return os.str();
}

inline std::string regions_csv(const RetainedSlice& slice) {
    const GridSpec& g = *slice.field.spec;
    const std::size_t n = g.dim();
    std::ostringstream os;
    for (std::size_t a = 0; a < n; ++a) os << 'y' << (a + 1) << ',';
    os << "label\n";
    std::vector<double> y(n);
    for (std::size_t k = 0; k < g.total; ++k) {
        if (!g.active[k]) continue;
        g.point(k, std::span<double>(y));
        for (std::size_t a = 0; a < n; ++a) os << format_shortest(y[a]) << ',';
        os << slice.labels.composite(k) << '\n';
    }
    return os.str();
}

inline std::string values_csv(const RetainedSlice& slice) {
    std::ostringstream os;
    dump_slice_csv(slice.field, os);
    return os.str();
}

inline std::string notrade_boundary_csv(
    const std::vector<std::vector<double>>& nodes, std::size_t n) {
    std::ostringstream os;
    for (std::size_t a = 0; a < n; ++a) {
        if (a) os << ',';
        os << 'y' << (a + 1);
    }
    os << '\n';
    for (const auto& y : nodes) {
        for (std::size_t a = 0; a < n; ++a) {
            if (a) os << ',';
            os << format_shortest(y[a]);
        }
        os << '\n';
    }
    return os.str();
}

inline std::string diagnostics_csv(const std::vector<SliceDiagnostics>& diags) {
    std::ostringstream os;
    os << "step,t,clamp_events,monotonicity_ratio,min_value,max_value,"
          "min_constraint_norm,sweeps,adjusted_nodes,unresolved_nodes,"
          "inconsistent_nodes,wall_ms\n";
    for (const auto& d : diags)
        os << d.step << ',' << format_shortest(d.time) << ',' << d.clamp_events
           << ',' << format_shortest(d.monotonicity_ratio) << ','
           << format_shortest(d.min_value) << ',' << format_shortest(d.max_value)
           << ',' << format_shortest(d.min_constraint_norm) << ',' << d.sweeps
           << ',' << d.adjusted_nodes << ',' << d.unresolved_nodes << ','
           << d.inconsistent_nodes << ',' << format_shortest(d.wall_ms) << '\n';
    return os.str();
}

inline std::string checks_csv(const std::vector<CheckResult>& checks) {
    std::ostringstream os;
    os << "property,pass,margin\n";
    for (const auto& c : checks)
        os << c.property << ',' << (c.pass ? "true" : "false") << ','
           << format_shortest(c.margin) << '\n';
    return os.str();
}

inline std::string compare_csv(const std::vector<SliceComparison>& cmp) {
    std::ostringstream os;
    os << "t,max_rel_diff,buy_offset_cells,sell_offset_cells\n";
    for (const auto& c : cmp)
        os << format_shortest(c.time) << ',' << format_shortest(c.max_rel_diff)
           << ',' << format_shortest(c.buy_offset_cells) << ','
           << format_shortest(c.sell_offset_cells) << '\n';
    return os.str();
}

} // namespace detail

// Writes the plot-ready artifacts for one solve: per-slice value and region
// dumps, the boundary time series for N = 1, and the no-trade boundary cloud
// for N >= 2.
inline void emit_plot_data(const SolveResult& result, const MarketParams& p,
                           double dt, const std::filesystem::path& dir,
                           bool dump_values = true, bool dump_regions = true) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto& slice : result.slices) {
        const std::string suffix = "_t" + std::to_string(slice.step) + ".csv";
        if (dump_values)
            detail::atomic_write(dir / ("values" + suffix),
                                 detail::values_csv(slice));
        if (dump_regions)
            detail::atomic_write(dir / ("regions" + suffix),
                                 detail::regions_csv(slice));
    }
    if (p.n_assets == 1)
        detail::atomic_write(dir / "boundaries.csv",
                             detail::boundaries_csv(result.boundaries));
    for (const auto& [t, nodes] : result.boundaries.notrade_boundary) {
        const std::size_t step = static_cast<std::size_t>(std::llround(t / dt));
        detail::atomic_write(
            dir / ("notrade_boundary_t" + std::to_string(step) + ".csv"),
            detail::notrade_boundary_csv(nodes, p.n_assets));
    }
}

namespace detail {

// Property checks applicable to a finished run.
inline std::vector<CheckResult> run_checks(const SolveResult& result,
                                           const RunConfig& cfg,
                                           const GridSpec& grid) {
    const MarketParams& p = cfg.market;
    std::vector<CheckResult> checks;
    const double grid_tol = cfg.output.check_grid_tol > 0.0
                                ? cfg.output.check_grid_tol
                                : 2.0 * grid.dy[0] + 1e-9;
    const double time_slack = cfg.output.check_time_slack > 0.0
                                  ? cfg.output.check_time_slack
                                  : 2.0 * cfg.scheme.dt;
    if (p.n_assets == 1 && p.drift[0] != p.rate) {
        auto dy_checks =
            check_dai_yi(result.boundaries, p, grid_tol, time_slack);
        checks.insert(checks.end(), dy_checks.begin(), dy_checks.end());
    }
    bool tiny_costs = true;
    for (std::size_t i = 0; i < p.n_assets; ++i)
        if (p.buy_cost[i] > 1e-4 || p.sell_cost[i] > 1e-4) tiny_costs = false;
    if (tiny_costs)
        checks.push_back(check_merton_containment(
            result, p, cfg.output.merton_tol_cells, 0.1 * p.horizon));
    if (p.n_assets == 2 && p.cov[1] != 0.0) {
        // correlation sign must match the no-trade region's elongation on the
        // earliest retained slice before maturity
        CheckResult c;
        c.property = "elongation.matches_correlation";
        c.pass = false;
        c.margin = 0.0;
        for (const auto& slice : result.slices) {
            if (slice.time >= p.horizon - 1e-12) continue;
            try {
                const int sign = correlation_elongation_sign(slice.labels, grid);
                const int expected = p.cov[1] > 0.0 ? 1 : -1;
                c.pass = sign == expected;
                c.margin = static_cast<double>(sign * expected);
                break;
            } catch (const std::runtime_error&) {
                continue; // too few no-trade nodes on this slice
            }
        }
        checks.push_back(c);
    }
    if (result.boundaries.degenerate)
        checks.push_back({"boundaries.nondegenerate", false, 0.0});
    return checks;
}

inline void write_solver_outputs(const SolveResult& result, const RunConfig& cfg,
                                 const std::filesystem::path& dir) {
    emit_plot_data(result, cfg.market, cfg.scheme.dt, dir,
                   cfg.output.dump_values, cfg.output.dump_regions);
    atomic_write(dir / "diagnostics.csv", diagnostics_csv(result.diagnostics));
}

} // namespace detail

// Runs one configuration end to end. Returns the process exit code.
inline int run(const RunConfig& cfg, std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    fs::path out_dir;

    // configuration and output-directory problems -> exit 3
    GridSpec grid;
    try {
        cfg.validate();
        grid = build_grid(cfg.market, cfg.grid.lo, cfg.grid.hi, cfg.grid.dy);
        out_dir = cfg.output.out_dir;
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec && !fs::is_directory(out_dir)) {
            log << "error: cannot create output directory '" << out_dir.string()
                << "': " << ec.message() << "\n";
            return 3;
        }
        const fs::path probe = out_dir / ".write_probe.tmp";
        std::ofstream probe_out(probe);
        if (!probe_out) {
            log << "error: output directory '" << out_dir.string()
                << "' is not writable\n";
            return 3;
        }
        probe_out.close();
        fs::remove(probe);
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << "\n";
        return 3;
    }

    SolveOptions opts;
    opts.retain_stride = cfg.output.retain_stride;
    opts.retain_times = cfg.output.retain_times;
    opts.stop_time = cfg.output.stop_time;
    opts.keep_all = cfg.output.keep_all;
    opts.apply_obstacle = cfg.output.apply_obstacle;

    std::optional<SolveResult> mc_result, fd_result;
    bool fd_dominant_warning = false;
    try {
        if (cfg.solver == SolverKind::Mc || cfg.solver == SolverKind::Both)
            mc_result = solve(cfg.market, cfg.scheme, grid, opts);
        if (cfg.solver == SolverKind::Fd1d || cfg.solver == SolverKind::Both)
            fd_result = solve_fd_1d(cfg.market, cfg.scheme, grid, opts, {},
                                    &fd_dominant_warning);
    } catch (const std::exception& e) {
        log << "runtime abort: " << e.what() << "\n";
        return 2;
    }

    std::vector<CheckResult> checks;
    std::vector<SliceComparison> comparison;
    try {
        if (mc_result) {
            auto c = detail::run_checks(*mc_result, cfg, grid);
            checks.insert(checks.end(), c.begin(), c.end());
        }
        if (fd_result) {
            for (auto c : detail::run_checks(*fd_result, cfg, grid)) {
                c.property = "fd." + c.property;
                checks.push_back(c);
            }
        }
        if (mc_result && fd_result) comparison = compare_fields(*mc_result, *fd_result);

        if (mc_result) detail::write_solver_outputs(*mc_result, cfg, out_dir);
        if (fd_result)
            detail::write_solver_outputs(*fd_result, cfg, out_dir / "fd1d");
        detail::atomic_write(out_dir / "checks.csv", detail::checks_csv(checks));
        if (!comparison.empty())
            detail::atomic_write(out_dir / "compare.csv",
                                 detail::compare_csv(comparison));

        std::ostringstream report;
        report << "solver: " << to_string(cfg.solver) << "\n";
        if (!cfg.preset.empty()) report << "preset: " << cfg.preset << "\n";
        report << "assets: " << cfg.market.n_assets << ", horizon: "
               << format_shortest(cfg.market.horizon) << ", dt: "
               << format_shortest(cfg.scheme.dt) << ", paths: "
               << cfg.scheme.m_paths << ", seed: " << cfg.scheme.seed << "\n";
        report << "grid nodes: " << grid.total << " (" << grid.active_count
               << " active)\n";
        const auto& diags = mc_result ? mc_result->diagnostics
                                      : fd_result->diagnostics;
        double mono = 0.0;
        std::size_t clamps = 0, unresolved = 0, inconsistent = 0;
        for (const auto& d : diags) {
            mono = std::max(mono, d.monotonicity_ratio);
            clamps += d.clamp_events;
            unresolved += d.unresolved_nodes;
            inconsistent += d.inconsistent_nodes;
        }
        report << "monotonicity ratio: " << format_shortest(mono);
        if (mono > 1.0 + 1e-12)
            report << "  (warning: diagonal diffusion does not dominate, > 1)";
        report << "\n";
        report << "consumption clamps: " << clamps
               << ", unresolved traces: " << unresolved
               << ", inconsistent nodes: " << inconsistent << "\n";
        if (fd_result && fd_dominant_warning)
            report << "warning: fd1d system is not diagonally dominant\n";
        if ((mc_result && mc_result->boundaries.degenerate) ||
            (fd_result && fd_result->boundaries.degenerate))
            report << "warning: degenerate slice encountered (empty no-trade or "
                      "sell region)\n";
        report << "\nchecks:\n";
        bool all_pass = true;
        for (const auto& c : checks) {
            report << "  " << (c.pass ? "PASS" : "FAIL") << "  " << c.property
                   << "  margin=" << format_shortest(c.margin) << "\n";
            all_pass = all_pass && c.pass;
        }
        if (checks.empty()) report << "  (none applicable)\n";
        if (!comparison.empty()) {
            double worst = 0.0;
            for (const auto& c : comparison) worst = std::max(worst, c.max_rel_diff);
            report << "\nmc vs fd1d: max relative difference "
                   << format_shortest(worst) << " (see compare.csv)\n";
        }
        detail::atomic_write(out_dir / "report.txt", report.str());

        log << report.str();
        return all_pass ? 0 : 1;
    } catch (const std::exception& e) {
        log << "runtime abort: " << e.what() << "\n";
        return 2;
    }
}

} // namespace tcost

#endif // TCOST_RUN_HPP
