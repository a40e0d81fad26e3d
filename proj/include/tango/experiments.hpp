#pragma once

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <iostream>

#include "tango/harness.hpp"

namespace tango {

// ---------------------------------------------------------------------------
// Figure-1 style experiment: Gaussian model from (mu, ln sigma) = (0, 0) on
// data drawn from N(10, 1); the two-timescale iteration and plain averaged
// SGD against the rk4 natural-gradient flow, plus a constant-rate SGD wall.
// ---------------------------------------------------------------------------
struct Fig1Options {
    std::string out_dir = "fig1_out";
    double total_time = 2.0;
    double gamma = 1e-2;
    double delta_t = 1e-4;
    double sgd_lr = 1e-3;
    std::size_t sgd_steps = 20000;
    std::uint64_t seed = 1001;
    std::size_t record_every = 10;
    DatasetSpec dataset = fig1_dataset_spec();
};

struct Fig1Result {
    TrajectoryRecord tango;
    TrajectoryRecord avg_sgd;
    TrajectoryRecord sgd;
    FlowSolution flow;
    double dist_tango = 0.0;
    double dist_avg_sgd = 0.0;
    double dist_sgd = 0.0;
    double tango_sigma_max = 0.0;
};

// Sup over trajectory points of the distance to the flow polyline, measured
// in the (mu, ln sigma) chart the optimizers run in.
inline double sup_distance_to_flow(const TrajectoryRecord& record, const FlowSolution& flow,
                                   std::size_t max_nodes = 20000) {
    if (record.rows.empty() || flow.states.empty()) throw error("distance needs nonempty inputs");
    const std::size_t stride = std::max<std::size_t>(1, flow.states.size() / max_nodes);
    double sup = 0.0;
    for (const TrajectoryRow& row : record.rows) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < flow.states.size(); i += stride) {
            best = std::min(best, (row.theta - flow.states[i]).norm());
        }
        best = std::min(best, (row.theta - flow.states.back()).norm());
        sup = std::max(sup, best);
    }
    return sup;
}

inline Fig1Result run_fig1(const Fig1Options& options) {
    GaussianModel model;
    const Dataset data = make_dataset(options.dataset);
    const Vector theta0 = Vector::Zero(2);
    const std::uint64_t seed = apply_seed_override(options.seed);

    Fig1Result result;

    OptimizerConfig tango_opt;
    tango_opt.kind = OptimizerKind::tango;
    tango_opt.gamma = GammaPolicy::fixed_value(options.gamma);
    result.tango = run(tango_opt, model, data, theta0, StepSchedule::constant_rate(options.delta_t),
                       options.total_time, seed, options.record_every);

    OptimizerConfig avg_opt;
    avg_opt.kind = OptimizerKind::averaged_sgd;
    avg_opt.gamma = GammaPolicy::fixed_value(options.gamma);
    avg_opt.averaged_noise = AveragedNoise::none;
    result.avg_sgd = run(avg_opt, model, data, theta0, StepSchedule::constant_rate(options.delta_t),
                         options.total_time, seed, options.record_every);

    OptimizerConfig sgd_opt;
    sgd_opt.kind = OptimizerKind::sgd;
    sgd_opt.learning_rate = options.sgd_lr;
    result.sgd = run(sgd_opt, model, data, theta0, StepSchedule::constant_rate(1.0),
                     static_cast<double>(options.sgd_steps), seed, options.record_every);

    FlowProblem flow = natural_gradient_flow(model, data, theta0, options.total_time);
    result.flow = solve_flow(flow, OdeMethod::rk4, options.delta_t / 10.0);

    result.dist_tango = sup_distance_to_flow(result.tango, result.flow);
    result.dist_avg_sgd = sup_distance_to_flow(result.avg_sgd, result.flow);
    result.dist_sgd = sup_distance_to_flow(result.sgd, result.flow);
    for (const TrajectoryRow& row : result.tango.rows) {
        result.tango_sigma_max = std::max(result.tango_sigma_max, std::exp(row.theta(1)));
    }
    return result;
}

inline void write_fig1(const Fig1Result& result, const Fig1Options& options) {
    std::filesystem::create_directories(options.out_dir);
    const std::string dir = options.out_dir + "/";
    result.sgd.write_csv(dir + "fig1_sgd.csv");
    result.tango.write_csv(dir + "fig1_tango.csv");
    result.avg_sgd.write_csv(dir + "fig1_avgsgd.csv");

    {
        std::ofstream out(dir + "fig1_flow.csv", std::ios::binary);
        if (!out) throw error("cannot open flow csv for writing");
        out << "t,theta_0,theta_1,sigma\n";
        for (std::size_t i = 0; i < result.flow.times.size(); ++i) {
            const Vector& s = result.flow.states[i];
            out << format_real(result.flow.times[i]) << ',' << format_real(s(0)) << ','
                << format_real(s(1)) << ',' << format_real(std::exp(s(1))) << '\n';
        }
    }

    // Plot data: one column triple (mu, sigma, ln sigma) per trajectory so
    // either coordinate chart can be drawn; shorter columns padded empty.
    {
        std::ofstream out(dir + "fig1_plotdata.csv", std::ios::binary);
        if (!out) throw error("cannot open plot data for writing");
        out << "sgd_mu,sgd_sigma,sgd_lnsigma,tango_mu,tango_sigma,tango_lnsigma,"
               "avgsgd_mu,avgsgd_sigma,avgsgd_lnsigma,flow_mu,flow_sigma,flow_lnsigma\n";
        const std::size_t n_rows = std::max({result.sgd.rows.size(), result.tango.rows.size(),
                                             result.avg_sgd.rows.size(), result.flow.states.size()});
        auto emit_traj = [&](const TrajectoryRecord& rec, std::size_t i) {
            if (i < rec.rows.size()) {
                const Vector& th = rec.rows[i].theta;
                out << format_real(th(0)) << ',' << format_real(std::exp(th(1))) << ','
                    << format_real(th(1));
            } else {
                out << ",,";
            }
        };
        for (std::size_t i = 0; i < n_rows; ++i) {
            emit_traj(result.sgd, i);
            out << ',';
            emit_traj(result.tango, i);
            out << ',';
            emit_traj(result.avg_sgd, i);
            out << ',';
            if (i < result.flow.states.size()) {
                const Vector& th = result.flow.states[i];
                out << format_real(th(0)) << ',' << format_real(std::exp(th(1))) << ','
                    << format_real(th(1));
            } else {
                out << ",,";
            }
            out << '\n';
        }
    }

    Json j;
    j["dist_tango"] = result.dist_tango;
    j["dist_avg_sgd"] = result.dist_avg_sgd;
    j["dist_sgd"] = result.dist_sgd;
    j["tango_sigma_max"] = result.tango_sigma_max;
    j["T"] = options.total_time;
    j["gamma"] = options.gamma;
    j["delta_t"] = options.delta_t;
    j["sgd_lr"] = options.sgd_lr;
    j["seed"] = options.seed;
    std::ofstream out(dir + "fig1_summary.json", std::ios::binary);
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sweep: endpoint error against the natural-gradient flow over a
// (gamma, delta_t, seed) grid. Cells run in parallel and merge in grid order.
// ---------------------------------------------------------------------------
struct SweepConfig {
    ModelSpec model;
    DatasetSpec dataset;
    OptimizerSpec optimizer;  // template; gamma and delta_t overridden per cell
    std::vector<double> gammas;
    std::vector<double> delta_ts;
    std::vector<std::uint64_t> seeds;
    double total_time = 1.0;
    std::string output = "sweep_out/sweep";
};

struct SweepRow {
    double gamma = 0.0;
    double delta_t = 0.0;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double endpoint_error = 0.0;
    bool diverged = false;
};

inline SweepConfig sweep_config_from_json(const Json& j) {
    SweepConfig config;
    config.model = model_spec_from_json(detail::require_field(j, "", "model"));
    config.dataset = dataset_spec_from_json(detail::require_field(j, "", "dataset"));
    config.optimizer = optimizer_spec_from_json(detail::require_field(j, "", "optimizer"));
    for (const auto& g : detail::require_field(j, "", "gammas")) config.gammas.push_back(g.get<double>());
    for (const auto& d : detail::require_field(j, "", "delta_ts")) config.delta_ts.push_back(d.get<double>());
    for (const auto& s : detail::require_field(j, "", "seeds")) config.seeds.push_back(s.get<std::uint64_t>());
    if (config.gammas.empty() || config.delta_ts.empty() || config.seeds.empty()) {
        throw config_error("sweep grids 'gammas', 'delta_ts' and 'seeds' must be nonempty");
    }
    config.total_time = detail::require_field(j, "", "T").get<double>();
    config.output = detail::require_field(j, "", "output").get<std::string>();
    return config;
}

inline SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open sweep config '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw config_error(std::string("sweep config is not valid JSON: ") + e.what());
    }
    return sweep_config_from_json(j);
}

inline std::vector<SweepRow> run_sweep(const SweepConfig& config, int jobs = 1) {
    const std::unique_ptr<Model> model = make_model(config.model);
    const Dataset data = make_dataset(config.dataset);
    const Vector theta0 = initial_theta(config.model, *model);

    if (config.optimizer.id != "tango" && config.optimizer.id != "tango_minibatch" &&
        config.optimizer.id != "tango_preconditioned") {
        throw config_error("sweep optimizer template must be a tango variant");
    }

    const double dt_min = *std::min_element(config.delta_ts.begin(), config.delta_ts.end());
    double horizon = 0.0;
    for (double dt : config.delta_ts) {
        horizon = std::max(horizon, std::ceil(config.total_time / dt - 1e-12) * dt);
    }
    FlowProblem flow = natural_gradient_flow(*model, data, theta0, horizon);
    const FlowSolution reference = solve_flow(flow, OdeMethod::rk4, dt_min / 10.0);

    std::vector<SweepRow> rows(config.gammas.size() * config.delta_ts.size() * config.seeds.size());
    parallel_for(rows.size(), jobs, [&](std::size_t idx) {
        const std::size_t per_gamma = config.delta_ts.size() * config.seeds.size();
        const double gamma = config.gammas[idx / per_gamma];
        const double dt = config.delta_ts[(idx % per_gamma) / config.seeds.size()];
        const std::uint64_t seed = config.seeds[idx % config.seeds.size()];

        SweepRow row;
        row.gamma = gamma;
        row.delta_t = dt;
        row.seed = seed;
        row.steps = static_cast<std::size_t>(std::ceil(config.total_time / dt - 1e-12));

        OptimizerSpec spec = config.optimizer;
        spec.gamma = GammaPolicy::fixed_value(gamma);
        OptimizerConfig opt = make_optimizer(spec);
        try {
            const TrajectoryRecord rec = run(opt, *model, data, theta0,
                                             StepSchedule::constant_rate(dt), config.total_time,
                                             seed, row.steps);
            const Vector target = reference.at(static_cast<double>(row.steps) * dt);
            row.endpoint_error = (rec.rows.back().theta - target).norm();
        } catch (const divergence_error&) {
            row.diverged = true;
            row.endpoint_error = std::numeric_limits<double>::quiet_NaN();
        }
        rows[idx] = row;
    });
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot open '" + path + "' for writing");
    out << "gamma,delta_t,seed,steps,endpoint_error,diverged\n";
    for (const SweepRow& row : rows) {
        out << format_real(row.gamma) << ',' << format_real(row.delta_t) << ',' << row.seed << ','
            << row.steps << ',' << format_real(row.endpoint_error) << ',' << (row.diverged ? 1 : 0)
            << '\n';
    }
}

// ---------------------------------------------------------------------------
// Verification suite orchestration, shared by the CLI and the tests.
// ---------------------------------------------------------------------------
struct VerifyOptions {
    std::string selector = "all";
    std::uint64_t seed = 12345;
    int jobs = 1;
    double gamma_factor = 0.0;  // when > 0, run the lemma7 specs at factor/R^2
    std::string out_dir = "verify_out";
    // Reduced sizes for quick smoke runs; defaults match the acceptance gate.
    std::size_t lemma7_seeds = 1000;
    std::size_t fixed_point_steps = 100000;
    std::size_t rate_seeds = 20;
};

struct VerifyOutcome {
    std::vector<CheckReport> reports;
    bool all_passed = true;
    double wall_seconds = 0.0;
};

inline FlowProblem linear_spd_flow() {
    Matrix a(2, 2);
    a << 2.0, 0.3, 0.3, 0.5;
    Matrix h(2, 2);
    h << 1.5, -0.2, -0.2, 0.8;
    Vector theta0(2);
    theta0 << 1.5, -1.0;
    FlowProblem p;
    p.metric = [a](const Vector&) { return a; };
    p.drift = [h](const Vector& theta) { return Vector(h * theta); };
    p.theta0 = theta0;
    p.total_time = 1.0;
    return p;
}

// Default desk-scale datasets for the verification checks.
inline Dataset default_gaussian_data() { return make_gaussian_dataset(10.0, 1.0, 2000, 101); }

inline Dataset default_linreg_data() {
    Vector w(2);
    w << 1.0, -0.5;
    return make_linear_regression_dataset(w, 0.5, 500, 303);
}

inline Dataset default_softmax_data(const SoftmaxRegressionModel& model) {
    Vector truth(model.param_dim());
    for (int i = 0; i < truth.size(); ++i) truth(i) = (i % 2 == 0) ? 1.0 : -0.5;
    return make_softmax_dataset(model, truth, 500, 404);
}

namespace detail {

inline void append(VerifyOutcome& outcome, CheckReport report) {
    outcome.all_passed = outcome.all_passed && report.passed;
    outcome.reports.push_back(std::move(report));
}

inline std::vector<Vector> random_thetas(const Model& model, std::size_t count, Rng& rng) {
    std::vector<Vector> thetas;
    thetas.reserve(count);
    for (std::size_t i = 0; i < count; ++i) thetas.push_back(model.random_valid_theta(rng));
    return thetas;
}

}  // namespace detail

inline void verify_prop2(VerifyOutcome& outcome, const VerifyOptions& options) {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_data();
    Rng rng = seed_stream(options.seed, 11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_theta = 0.0;
    double worst_velocity = 0.0;
    bool all_ok = true;
    for (int i = 0; i < 20; ++i) {
        const double gamma = 2e-3 * std::pow(10.0, u(rng));           // [2e-3, 2e-2]
        const double dt = 1e-4 * std::pow(500.0, u(rng));             // [1e-4, 5e-2]
        const CheckReport r = check_prop2_equivalence(model, data, gamma, dt, 10000,
                                                      options.seed ^ (7000u + i));
        worst_theta = std::max(worst_theta, r.metric("max_theta_deviation"));
        worst_velocity = std::max(worst_velocity, r.metric("max_velocity_identity_deviation"));
        all_ok = all_ok && r.passed;
    }
    CheckReport report;
    report.name = "prop2";
    report.add("configs", 20.0);
    report.add("max_theta_deviation", worst_theta);
    report.add("max_velocity_identity_deviation", worst_velocity);
    report.add("tolerance", 1e-10);
    report.passed = all_ok;
    detail::append(outcome, report);
}

inline void verify_lemma6(VerifyOutcome& outcome, const VerifyOptions& options) {
    Rng rng = seed_stream(options.seed, 21);
    {
        GaussianModel model;
        const Dataset data = default_gaussian_data();
        const auto est = ModelNoiseEstimate{};  // unused by lemma6
        NoiseSpec spec = fisher_rank_one_noise(model, data, Vector::Zero(2), est);
        detail::append(outcome, check_lemma6(spec, detail::random_thetas(model, 20, rng), 10000,
                                             options.seed ^ 0x6a01u));
    }
    {
        LinearRegressionModel model(2, 1.0);
        const Dataset data = default_linreg_data();
        NoiseSpec spec = fisher_rank_one_noise(model, data, Vector::Zero(2), ModelNoiseEstimate{});
        detail::append(outcome, check_lemma6(spec, detail::random_thetas(model, 20, rng), 10000,
                                             options.seed ^ 0x6a02u));
    }
    {
        SoftmaxRegressionModel model(3, 1);
        const Dataset data = default_softmax_data(model);
        NoiseSpec spec = fisher_rank_one_noise(model, data, Vector::Zero(model.param_dim()),
                                               ModelNoiseEstimate{});
        detail::append(outcome, check_lemma6(spec, detail::random_thetas(model, 20, rng), 10000,
                                             options.seed ^ 0x6a03u));
    }
}

inline std::vector<NoiseSpec> builtin_lemma7_specs(const VerifyOptions& options, double dt) {
    std::vector<NoiseSpec> specs;
    Vector f(2);
    f << 0.6, 0.8;
    specs.push_back(constant_identity_noise(f));

    Matrix cov(2, 2);
    cov << 1.5, 0.0, 0.0, 0.5;
    Vector f0(2);
    f0 << 1.0, -1.0;
    specs.push_back(gaussian_rank_one_noise(cov, f0, 0.5));

    Vector diag(2);
    diag << 0.5, 2.0;
    specs.push_back(eigen_direction_noise(diag, 1.0));

    {
        GaussianModel model;
        const Dataset data = default_gaussian_data();
        const Vector theta0 = Vector::Zero(2);
        const auto probes = flow_probe_points(model, data, theta0, 2.0, 9);
        const ModelNoiseEstimate est =
            estimate_model_noise(model, data, probes, 10000, options.seed ^ 0x77e5u);
        const double gamma = 1.0 / est.r_sq_fisher;
        specs.push_back(tango_blended_noise(model, data, theta0, dt, gamma, est));
    }
    return specs;
}

inline void verify_lemma7(VerifyOutcome& outcome, const VerifyOptions& options) {
    const double dt = 1e-3;
    const std::vector<NoiseSpec> specs = builtin_lemma7_specs(options, dt);
    if (options.gamma_factor > 0.0) {
        for (const NoiseSpec& spec : specs) {
            const double gamma = options.gamma_factor / spec.r_sq;
            detail::append(outcome,
                           check_lemma7_bound(spec, gamma, dt, 2000, options.lemma7_seeds,
                                              options.seed ^ 0x77a0u, /*allow_unstable=*/true,
                                              options.jobs));
        }
        return;
    }
    for (const NoiseSpec& spec : specs) {
        const double gamma = 1.0 / spec.r_sq;
        detail::append(outcome, check_lemma7_bound(spec, gamma, dt, 2000, options.lemma7_seeds,
                                                   options.seed ^ 0x77a0u, false, options.jobs));
    }
    // Negative control: the bound must break above the stability threshold.
    {
        const NoiseSpec& spec = specs[1];
        CheckReport raw = check_lemma7_bound(spec, 4.0 / spec.r_sq, dt, 300, 100,
                                             options.seed ^ 0x77b0u, /*allow_unstable=*/true,
                                             options.jobs);
        CheckReport control;
        control.name = "lemma7_negative_control";
        control.metrics = raw.metrics;
        control.passed = !raw.passed;
        control.note = "bound is expected to fail at gamma = 4/R^2";
        detail::append(outcome, control);
    }
}

inline void verify_lemma11(VerifyOutcome& outcome, const VerifyOptions& options) {
    GaussianModel model;
    // Nearby data mean and a long horizon: every grid cell then resolves the
    // same converged trajectory, so only the per-step metric drift scales
    // with dt. The plain Fisher metric (the dt -> 0 limit of the blended
    // two-timescale mean) keeps the grid cells comparable.
    const Dataset data = make_gaussian_dataset(2.0, 1.0, 2000, 101);
    detail::append(outcome, check_lemma11(model, data, Vector::Zero(2), 0.02,
                                          {1e-2, 1e-3, 1e-4}, 20.0, options.seed ^ 0xb110u, 0.35,
                                          /*blended_metric=*/false));
    Matrix a(2, 2);
    a << 2.0, 0.3, 0.3, 0.5;
    detail::append(outcome, check_lemma11_constant(a, 0.2, 1000));
}

inline void verify_martingale(VerifyOutcome& outcome, const VerifyOptions& options) {
    {
        Vector f(2);
        f << 0.6, 0.8;
        NoiseSpec spec = constant_identity_noise(f);  // deterministic drift: xi = 0
        detail::append(outcome, check_martingale_variances(spec, 1.0, 1e-3, 1000, 20,
                                                           options.seed ^ 0x3a01u, options.jobs));
    }
    {
        Vector diag(2);
        diag << 0.5, 2.0;  // deterministic metric: zeta = 0
        NoiseSpec spec = eigen_direction_noise(diag, 1.0);
        detail::append(outcome, check_martingale_variances(spec, 0.5, 1e-3, 1000, 20,
                                                           options.seed ^ 0x3a02u, options.jobs));
    }
    {
        LinearRegressionModel model(2, 1.0);
        const Dataset data = default_linreg_data();
        const Vector theta0 = Vector::Zero(2);
        const auto probes = flow_probe_points(model, data, theta0, 1.0, 5);
        const ModelNoiseEstimate est =
            estimate_model_noise(model, data, probes, 10000, options.seed ^ 0x3a03u);
        NoiseSpec spec = fisher_rank_one_noise(model, data, theta0, est);
        detail::append(outcome,
                       check_martingale_variances(spec, 1.0 / spec.r_sq, 1e-3, 1000, 100,
                                                  options.seed ^ 0x3a04u, options.jobs));
    }
}

inline void verify_rate(VerifyOutcome& outcome, const VerifyOptions& options) {
    {
        const RateStudyResult r = rate_study_prop4(linear_spd_flow(), 0.3, {1e-2, 1e-3, 1e-4});
        CheckReport report;
        report.name = "rate_prop4";
        for (std::size_t i = 0; i < r.delta_ts.size(); ++i) {
            report.add("error_dt_" + format_real(r.delta_ts[i]), r.endpoint_errors[i]);
        }
        report.add("slope", r.fitted_slope);
        report.passed = r.fitted_slope >= 0.8 && r.fitted_slope <= 1.2;
        detail::append(outcome, report);
    }
    {
        GaussianModel model;
        const Dataset data = default_gaussian_data();
        const RateStudyResult r =
            rate_study_tango(model, data, Vector::Zero(2), 1e-2, {1e-2, 1e-3, 1e-4}, 1.0,
                             options.rate_seeds, options.seed ^ 0x4a7e0u, options.jobs);
        bool monotone = true;
        for (std::size_t i = 0; i + 1 < r.endpoint_errors.size(); ++i) {
            if (!(r.endpoint_errors[i] > r.endpoint_errors[i + 1])) monotone = false;
        }
        bool no_divergence = true;
        for (std::size_t d : r.diverged_seeds) no_divergence = no_divergence && d == 0;
        CheckReport report;
        report.name = "rate_tango";
        for (std::size_t i = 0; i < r.delta_ts.size(); ++i) {
            report.add("error_dt_" + format_real(r.delta_ts[i]), r.endpoint_errors[i]);
        }
        report.add("slope", r.fitted_slope);
        report.add("monotone", monotone ? 1.0 : 0.0);
        report.passed = monotone && no_divergence && r.fitted_slope >= 0.35 && r.fitted_slope <= 1.2;
        detail::append(outcome, report);
    }
}

inline void verify_fixed_point(VerifyOutcome& outcome, const VerifyOptions& options) {
    {
        GaussianModel model;
        const Dataset data = default_gaussian_data();
        detail::append(outcome, check_frozen_fixed_point(model, data, Vector::Zero(2),
                                                         options.fixed_point_steps,
                                                         options.seed ^ 0xf9a1u));
    }
    {
        LinearRegressionModel model(2, 1.0);
        const Dataset data = default_linreg_data();
        detail::append(outcome, check_frozen_fixed_point(model, data, Vector::Zero(2),
                                                         options.fixed_point_steps,
                                                         options.seed ^ 0xf9a2u));
    }
}

inline VerifyOutcome run_verification(const VerifyOptions& options_in) {
    VerifyOptions options = options_in;
    options.seed = apply_seed_override(options.seed);
    const auto start = std::chrono::steady_clock::now();
    VerifyOutcome outcome;

    const std::vector<std::string> known = {"prop2",      "lemma6", "lemma7",     "lemma11",
                                            "martingale", "rate",   "fixed-point"};
    const bool all = options.selector == "all";
    if (!all && std::find(known.begin(), known.end(), options.selector) == known.end()) {
        throw config_error("unknown verify selector '" + options.selector +
                           "' (expected prop2, lemma6, lemma7, lemma11, martingale, rate, "
                           "fixed-point or all)");
    }
    const auto selected = [&](const std::string& name) { return all || options.selector == name; };

    if (selected("prop2")) verify_prop2(outcome, options);
    if (selected("lemma6")) verify_lemma6(outcome, options);
    if (selected("lemma7")) verify_lemma7(outcome, options);
    if (selected("lemma11")) verify_lemma11(outcome, options);
    if (selected("martingale")) verify_martingale(outcome, options);
    if (selected("rate")) verify_rate(outcome, options);
    if (selected("fixed-point")) verify_fixed_point(outcome, options);

    outcome.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return outcome;
}

inline void write_check_report(const CheckReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/" + report.name + ".txt", std::ios::binary);
        out << "check: " << report.name << '\n';
        out << "passed: " << (report.passed ? "true" : "false") << '\n';
        if (!report.note.empty()) out << "note: " << report.note << '\n';
        for (const auto& [key, value] : report.metrics) {
            out << key << ": " << format_real(value) << '\n';
        }
    }
    Json j;
    j["check"] = report.name;
    j["passed"] = report.passed;
    if (!report.note.empty()) j["note"] = report.note;
    Json metrics;
    for (const auto& [key, value] : report.metrics) metrics[key] = value;
    j["metrics"] = metrics;
    std::ofstream out(out_dir + "/" + report.name + ".json", std::ios::binary);
    out << j.dump(2) << '\n';
}

inline void write_verify_outputs(const VerifyOutcome& outcome, const std::string& out_dir) {
    for (const CheckReport& report : outcome.reports) write_check_report(report, out_dir);
    Json j;
    j["all_passed"] = outcome.all_passed;
    j["wall_seconds"] = outcome.wall_seconds;
    Json checks = Json::array();
    for (const CheckReport& report : outcome.reports) {
        checks.push_back(Json{{"name", report.name}, {"passed", report.passed}});
    }
    j["checks"] = checks;
    std::ofstream out(out_dir + "/summary.json", std::ios::binary);
    out << j.dump(2) << '\n';
}

inline void print_verify_table(const VerifyOutcome& outcome, std::ostream& out) {
    std::size_t width = 4;
    for (const CheckReport& r : outcome.reports) width = std::max(width, r.name.size());
    for (const CheckReport& r : outcome.reports) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << r.name
            << (r.passed ? "PASS" : "FAIL");
        if (!r.metrics.empty()) {
            out << "  (" << r.metrics.front().first << " = " << format_real(r.metrics.front().second)
                << ")";
        }
        out << '\n';
    }
    out << (outcome.all_passed ? "all checks passed" : "some checks FAILED") << " in "
        << std::fixed << std::setprecision(1) << outcome.wall_seconds << " s\n";
}

}  // namespace tango
