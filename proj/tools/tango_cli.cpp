// Command-line driver: run configured experiments, reproduce the Gaussian
// comparison figure, sweep (gamma, delta_t) grids, and execute the
// verification suite.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tango/tango.hpp"

namespace {

int cmd_run(const std::string& config_arg) {
    const tango::ExperimentConfig config = tango::resolve_config(config_arg);
    const tango::RunSummary summary = tango::execute_run(config);
    std::cout << "trajectory: " << summary.csv_path << '\n';
    std::cout << "summary:    " << summary.summary_path << '\n';
    std::cout << "steps:      " << summary.steps << '\n';
    std::cout << "final loss: " << tango::format_real(summary.final_loss) << '\n';
    return 0;
}

int cmd_fig1(const std::string& out_dir, double total_time) {
    tango::Fig1Options options;
    options.out_dir = out_dir;
    options.total_time = total_time;
    const tango::Fig1Result result = tango::run_fig1(options);
    tango::write_fig1(result, options);
    std::cout << "sup distance to natural-gradient flow (mu, ln sigma):\n";
    std::cout << "  tango:        " << tango::format_real(result.dist_tango) << '\n';
    std::cout << "  averaged sgd: " << tango::format_real(result.dist_avg_sgd) << '\n';
    std::cout << "  sgd:          " << tango::format_real(result.dist_sgd) << '\n';
    std::cout << "tango max sigma: " << tango::format_real(result.tango_sigma_max) << '\n';
    std::cout << "outputs in " << out_dir << "/\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, int jobs) {
    const tango::SweepConfig config = tango::load_sweep_config(config_path);
    const std::vector<tango::SweepRow> rows = tango::run_sweep(config, jobs);
    const std::string csv = config.output + ".csv";
    tango::write_sweep_csv(rows, csv);
    std::size_t diverged = 0;
    for (const tango::SweepRow& row : rows) {
        if (row.diverged) ++diverged;
    }
    std::cout << rows.size() << " cells (" << diverged << " divergent) -> " << csv << '\n';
    return 0;
}

int cmd_verify(const tango::VerifyOptions& options) {
    const tango::VerifyOutcome outcome = tango::run_verification(options);
    tango::write_verify_outputs(outcome, options.out_dir);
    tango::print_verify_table(outcome, std::cout);
    std::cout << "reports in " << options.out_dir << "/\n";
    return outcome.all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tango: two-timescale natural-gradient optimization toolkit"};
    app.require_subcommand(1);

    std::string run_config;
    CLI::App* run_cmd = app.add_subcommand("run", "execute one experiment config");
    run_cmd->add_option("config", run_config, "config file path or built-in config name")
        ->required();

    std::string fig1_dir = "fig1_out";
    double fig1_T = 2.0;
    CLI::App* fig1_cmd =
        app.add_subcommand("fig1", "Gaussian-model comparison against the natural-gradient flow");
    fig1_cmd->add_option("--out", fig1_dir, "output directory");
    fig1_cmd->add_option("--T", fig1_T, "horizon in slow time");

    std::string sweep_config;
    int sweep_jobs = 1;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid of (gamma, delta_t, seed) cells");
    sweep_cmd->add_option("config", sweep_config, "sweep config file")->required();
    sweep_cmd->add_option("--jobs", sweep_jobs, "parallel cells");

    tango::VerifyOptions verify_options;
    CLI::App* verify_cmd = app.add_subcommand("verify", "run the verification suite");
    verify_cmd
        ->add_option("selector", verify_options.selector,
                     "prop2 | lemma6 | lemma7 | lemma11 | martingale | rate | fixed-point | all")
        ->required();
    verify_cmd->add_option("--seed", verify_options.seed, "root seed");
    verify_cmd->add_option("--jobs", verify_options.jobs, "seed-parallel workers");
    verify_cmd->add_option("--out", verify_options.out_dir, "report directory");
    verify_cmd->add_option("--gamma-factor", verify_options.gamma_factor,
                           "run the lemma7 specs at factor/R^2 instead of the default suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return cmd_run(run_config);
        if (*fig1_cmd) return cmd_fig1(fig1_dir, fig1_T);
        if (*sweep_cmd) return cmd_sweep(sweep_config, sweep_jobs);
        if (*verify_cmd) return cmd_verify(verify_options);
    } catch (const tango::divergence_error& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return 2;
    } catch (const tango::config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
