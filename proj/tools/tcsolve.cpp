// Command-line front end: load a preset or config file, apply flag
// overrides, run the solver(s) and write the output artifacts.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "tcost/config.hpp"
#include "tcost/run.hpp"

int main(int argc, char** argv) {
    CLI::App app{
        "Backward Monte Carlo / finite-difference solver for the "
        "finite-horizon investment-consumption problem with proportional "
        "transaction costs"};

    std::string preset, config_path, out_dir, solver, write_config_path;
    std::vector<double> dy;
    double dt = 0.0, stop_time = -1.0;
    std::uint64_t seed = 0;
    std::size_t paths = 0, workers = 0;
    bool no_adjust = false, list_presets = false, has_seed = false;

    app.add_option("--preset", preset, "experiment preset (see --list-presets)");
    app.add_option("--config", config_path, "configuration file (key = value)");
    app.add_option("--out-dir", out_dir, "output directory");
    app.add_option("--seed", seed, "RNG seed")->each([&](const std::string&) {
        has_seed = true;
    });
    app.add_option("--paths", paths, "Monte Carlo sample paths per node");
    app.add_option("--dt", dt, "time step (years)");
    app.add_option("--dy", dy, "grid spacing per axis");
    app.add_option("--solver", solver, "mc | fd1d | both");
    app.add_option("--workers", workers, "worker threads (0 = hardware)");
    app.add_option("--stop-time", stop_time, "stop the backward loop at this time");
    app.add_flag("--no-adjust", no_adjust,
                 "skip the obstacle sweep (debug: raw PDE iteration)");
    app.add_option("--write-config", write_config_path,
                   "write the resolved configuration and exit");
    app.add_flag("--list-presets", list_presets, "list preset names and exit");

    CLI11_PARSE(app, argc, argv);

    if (list_presets) {
        for (const auto& name : tcost::preset_names()) std::cout << name << "\n";
        return 0;
    }

    tcost::RunConfig cfg;
    try {
        if (!config_path.empty() && !preset.empty()) {
            std::cerr << "config error: pass either --preset or --config\n";
            return 3;
        }
        if (!config_path.empty()) cfg = tcost::load_config(config_path);
        else if (!preset.empty()) cfg = tcost::preset_config(preset);
        else {
            std::cerr << "config error: one of --preset or --config is required\n";
            return 3;
        }

        if (!out_dir.empty()) cfg.output.out_dir = out_dir;
        if (has_seed) cfg.scheme.seed = seed;
        if (paths > 0) cfg.scheme.m_paths = paths;
        if (dt > 0.0) cfg.scheme.dt = dt;
        if (!dy.empty()) {
            if (dy.size() == 1)
                cfg.grid.dy.assign(cfg.market.n_assets, dy[0]);
            else
                cfg.grid.dy = dy;
        }
        if (!solver.empty()) {
            if (solver == "mc") cfg.solver = tcost::SolverKind::Mc;
            else if (solver == "fd1d") cfg.solver = tcost::SolverKind::Fd1d;
            else if (solver == "both") cfg.solver = tcost::SolverKind::Both;
            else {
                std::cerr << "config error: --solver must be mc, fd1d or both\n";
                return 3;
            }
        }
        if (workers > 0) cfg.scheme.workers = workers;
        if (stop_time >= 0.0) cfg.output.stop_time = stop_time;
        if (no_adjust) cfg.output.apply_obstacle = false;
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    }

    if (!write_config_path.empty()) {
        try {
            tcost::detail::atomic_write(write_config_path,
                                        tcost::write_config(cfg));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 3;
        }
        return 0;
    }

    return tcost::run(cfg);
}
