// Command-line driver.
//
//   qfilter run <config> [--mode M] [--seed S] [--out DIR]
//                        [--trajectories N] [--dt DT] [--workers W]
//                        [--set key=value ...]
//
// Exit codes: 0 success, 2 configuration/model error, 3 simulation blow-up.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qfilter/qfilter.hpp"

int main(int argc, char** argv) {
    CLI::App app{"quantum signal filtering simulator"};
    app.require_subcommand(1);

    std::string config_path, mode, out_dir;
    std::string seed_str, traj_str, dt_str, workers_str;
    std::vector<std::string> overrides;

    CLI::App* run = app.add_subcommand("run", "execute a configured run");
    run->add_option("config", config_path, "run configuration file")
        ->required();
    run->add_option("--mode", mode, "override mode");
    run->add_option("--seed", seed_str, "override sim.seed");
    run->add_option("--out", out_dir, "override output.dir");
    run->add_option("--trajectories", traj_str, "override sim.trajectories");
    run->add_option("--dt", dt_str, "override sim.dt");
    run->add_option("--workers", workers_str, "override sim.workers");
    run->add_option("--set", overrides, "override arbitrary key=value")
        ->take_all();

    CLI11_PARSE(app, argc, argv);

    try {
        qfilter::Config cfg = qfilter::Config::parse_file(config_path);
        if (!mode.empty()) cfg.set("mode", mode);
        if (!seed_str.empty()) cfg.set("sim.seed", seed_str);
        if (!out_dir.empty()) cfg.set("output.dir", out_dir);
        if (!traj_str.empty()) cfg.set("sim.trajectories", traj_str);
        if (!dt_str.empty()) cfg.set("sim.dt", dt_str);
        if (!workers_str.empty()) cfg.set("sim.workers", workers_str);
        for (const auto& kv : overrides) {
            size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw qfilter::config_error("--set expects key=value, got '" +
                                            kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        qfilter::RunConfig rc = qfilter::load_run_config(cfg);
        int code = qfilter::run_experiment(rc, std::cerr);
        if (code == 0)
            std::cerr << "run complete: " << rc.out_dir << "\n";
        return code;
    } catch (const qfilter::blowup_error& e) {
        std::cerr << "blow-up: " << e.what() << "\n";
        return 3;
    } catch (const qfilter::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const qfilter::model_error& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
