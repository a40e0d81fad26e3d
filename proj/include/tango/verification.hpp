#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tango/common.hpp"
#include "tango/linalg.hpp"
#include "tango/models.hpp"
#include "tango/optimizers.hpp"
#include "tango/reference.hpp"

namespace tango {

// ---------------------------------------------------------------------------
// Check reports: a pass flag plus an ordered list of named metrics so the
// harness can emit identical text and JSON renderings.
// ---------------------------------------------------------------------------
struct CheckReport {
    std::string name;
    bool passed = false;
    std::vector<std::pair<std::string, double>> metrics;
    std::string note;

    void add(const std::string& key, double value) { metrics.emplace_back(key, value); }

    double metric(const std::string& key) const {
        for (const auto& [k, v] : metrics) {
            if (k == key) return v;
        }
        throw error("report '" + name + "' has no metric '" + key + "'");
    }
};

// Least-squares slope of ln(y) against ln(x).
inline double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw error("slope fit needs >= 2 points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw error("slope fit needs positive data");
        const double lx = std::log(xs[i]);
        const double ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-30) throw error("slope fit is degenerate");
    return (n * sxy - sx * sy) / denom;
}

// ---------------------------------------------------------------------------
// Noise specifications for the general two-timescale iteration
//   v_k = v_{k-1} + gamma F_hat_k - gamma A_hat_k v_{k-1},
//   theta_k = theta_{k-1} - dt v_k,
// with conditional means F(theta), A(theta), drift second moment bound
// sigma^2, variance-control constant R^2 (E[A_hat^T A_hat] <= R^2 A) and
// eigenvalue bounds on A.
// ---------------------------------------------------------------------------
struct NoiseSpec {
    std::string name;
    int dim = 0;
    Vector theta0;
    std::function<Vector(const Vector&, Rng&)> sample_drift;   // F_hat
    std::function<Matrix(const Vector&, Rng&)> sample_metric;  // A_hat
    std::function<Vector(const Vector&)> mean_drift;           // F
    std::function<Matrix(const Vector&)> mean_metric;          // A
    double sigma_sq = 0.0;
    double r_sq = 0.0;
    double lambda_min = 0.0;
    double lambda_max = 0.0;
};

// A_hat = Id, F_hat = f, both deterministic.
inline NoiseSpec constant_identity_noise(const Vector& f) {
    NoiseSpec spec;
    spec.name = "constant_identity";
    spec.dim = static_cast<int>(f.size());
    spec.theta0 = Vector::Zero(f.size());
    const Matrix id = Matrix::Identity(f.size(), f.size());
    spec.sample_drift = [f](const Vector&, Rng&) { return f; };
    spec.sample_metric = [id](const Vector&, Rng&) { return id; };
    spec.mean_drift = [f](const Vector&) { return f; };
    spec.mean_metric = [id](const Vector&) { return id; };
    spec.sigma_sq = f.squaredNorm();
    spec.r_sq = 1.0;
    spec.lambda_min = 1.0;
    spec.lambda_max = 1.0;
    return spec;
}

// A_hat = g g^T with g ~ N(0, covariance); F_hat = drift_mean + noise.
// For Gaussian g the variance control holds with R^2 = 3 E|g|^2 = 3 tr(cov).
inline NoiseSpec gaussian_rank_one_noise(const Matrix& covariance, const Vector& drift_mean,
                                         double drift_noise_std) {
    const int d = static_cast<int>(covariance.rows());
    if (!is_symmetric(covariance, 1e-10) || smallest_eigenvalue(covariance) <= 0.0) {
        throw precondition_error("rank-one noise covariance must be SPD");
    }
    const Matrix root = spd_sqrt(covariance);
    NoiseSpec spec;
    spec.name = "gaussian_rank_one";
    spec.dim = d;
    spec.theta0 = Vector::Zero(d);
    spec.sample_drift = [drift_mean, drift_noise_std, d](const Vector&, Rng& rng) {
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector out = drift_mean;
        for (int i = 0; i < d; ++i) out(i) += drift_noise_std * normal(rng);
        return out;
    };
    spec.sample_metric = [root, d](const Vector&, Rng& rng) {
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector z(d);
        for (int i = 0; i < d; ++i) z(i) = normal(rng);
        const Vector g = root * z;
        return Matrix(g * g.transpose());
    };
    spec.mean_drift = [drift_mean](const Vector&) { return drift_mean; };
    spec.mean_metric = [covariance](const Vector&) { return covariance; };
    spec.sigma_sq = drift_mean.squaredNorm() + d * drift_noise_std * drift_noise_std;
    spec.r_sq = 3.0 * covariance.trace();
    spec.lambda_min = smallest_eigenvalue(covariance);
    spec.lambda_max = largest_eigenvalue(covariance);
    return spec;
}

// Deterministic A with a deterministic drift along the bottom eigendirection;
// the velocity fixed point then saturates the second-moment bound up to the
// factor 4.
inline NoiseSpec eigen_direction_noise(const Vector& metric_diag, double drift_scale) {
    const int d = static_cast<int>(metric_diag.size());
    if (metric_diag.minCoeff() <= 0.0) throw precondition_error("metric diagonal must be positive");
    int bottom = 0;
    metric_diag.minCoeff(&bottom);
    Vector f = Vector::Zero(d);
    f(bottom) = drift_scale;
    const Matrix a = metric_diag.asDiagonal();
    NoiseSpec spec;
    spec.name = "eigen_direction";
    spec.dim = d;
    spec.theta0 = Vector::Zero(d);
    spec.sample_drift = [f](const Vector&, Rng&) { return f; };
    spec.sample_metric = [a](const Vector&, Rng&) { return a; };
    spec.mean_drift = [f](const Vector&) { return f; };
    spec.mean_metric = [a](const Vector&) { return a; };
    spec.sigma_sq = drift_scale * drift_scale;
    spec.r_sq = metric_diag.maxCoeff();
    spec.lambda_min = metric_diag.minCoeff();
    spec.lambda_max = metric_diag.maxCoeff();
    return spec;
}

// ---------------------------------------------------------------------------
// Model-driven noise: F_hat is the gradient of a random sample, A_hat the
// pseudo-gradient outer product (optionally blended toward the identity as
// the two-timescale iteration requires). The constants sigma^2, R^2 and the
// eigenvalue bounds are estimated by Monte Carlo over probe points taken
// along the reference flow, with explicit safety margins.
// ---------------------------------------------------------------------------
struct ModelNoiseEstimate {
    double sigma_sq = 0.0;     // max_theta E|g|^2, inflated by 10%
    double r_sq_fisher = 0.0;  // max_theta min{rho : E[(g g^T)^2] <= rho J}, inflated by 10%
    double lambda_min = 0.0;   // min_theta lambda_min(J), deflated by 5%
    double lambda_max = 0.0;   // max_theta lambda_max(J), inflated by 5%
};

inline std::vector<Vector> flow_probe_points(const Model& model, const Dataset& data,
                                             const Vector& theta0, double horizon,
                                             std::size_t count) {
    if (count < 2) throw precondition_error("flow probing needs at least 2 points");
    FlowProblem flow = natural_gradient_flow(model, data, theta0, horizon);
    const FlowSolution sol = solve_flow(flow, OdeMethod::rk4, horizon / 512.0);
    std::vector<Vector> probes;
    probes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = horizon * static_cast<double>(i) / static_cast<double>(count - 1);
        probes.push_back(sol.at(t));
    }
    return probes;
}

inline ModelNoiseEstimate estimate_model_noise(const Model& model, const Dataset& data,
                                               const std::vector<Vector>& probes,
                                               std::size_t n_draws, std::uint64_t seed) {
    if (probes.empty()) throw error("noise estimation needs probe points");
    ModelNoiseEstimate est;
    est.lambda_min = std::numeric_limits<double>::infinity();
    Rng rng(seed);
    const int d = model.param_dim();
    for (const Vector& theta : probes) {
        const Matrix fisher = model.exact_fisher(theta, data);
        est.lambda_min = std::min(est.lambda_min, smallest_eigenvalue(fisher));
        est.lambda_max = std::max(est.lambda_max, largest_eigenvalue(fisher));

        double mean_g_sq = 0.0;
        Matrix second = Matrix::Zero(d, d);
        for (std::size_t i = 0; i < n_draws; ++i) {
            const Sample& s = draw_sample(data, rng);
            const Vector g = model.grad_log_loss(theta, s.x, s.y);
            mean_g_sq += (g.squaredNorm() - mean_g_sq) / static_cast<double>(i + 1);
            const Vector y_tilde = model.sample_pseudo_output(theta, s.x, rng);
            const Vector gt = model.grad_log_loss(theta, s.x, y_tilde);
            second.noalias() += gt.squaredNorm() * (gt * gt.transpose());
        }
        second /= static_cast<double>(n_draws);
        est.sigma_sq = std::max(est.sigma_sq, mean_g_sq);
        est.r_sq_fisher = std::max(est.r_sq_fisher, generalized_max_eigenvalue(second, fisher));
    }
    est.sigma_sq *= 1.1;
    est.r_sq_fisher *= 1.1;
    est.lambda_min *= 0.95;
    est.lambda_max *= 1.05;
    return est;
}

// A_hat = g~ g~^T (pure Fisher outer product).
inline NoiseSpec fisher_rank_one_noise(const Model& model, const Dataset& data,
                                       const Vector& theta0, const ModelNoiseEstimate& est) {
    auto owned = std::shared_ptr<Model>(model.clone());
    auto shared_data = std::make_shared<Dataset>(data);
    NoiseSpec spec;
    spec.name = model.id() + "_fisher";
    spec.dim = model.param_dim();
    spec.theta0 = theta0;
    spec.sample_drift = [owned, shared_data](const Vector& theta, Rng& rng) {
        const Sample& s = draw_sample(*shared_data, rng);
        return owned->grad_log_loss(theta, s.x, s.y);
    };
    spec.sample_metric = [owned, shared_data](const Vector& theta, Rng& rng) {
        const Sample& s = draw_sample(*shared_data, rng);
        const Vector y_tilde = owned->sample_pseudo_output(theta, s.x, rng);
        const Vector gt = owned->grad_log_loss(theta, s.x, y_tilde);
        return Matrix(gt * gt.transpose());
    };
    spec.mean_drift = model.expected_gradient_fn(data);
    spec.mean_metric = model.fisher_fn(data);
    spec.sigma_sq = est.sigma_sq;
    spec.r_sq = est.r_sq_fisher;
    spec.lambda_min = est.lambda_min;
    spec.lambda_max = est.lambda_max;
    return spec;
}

// A_hat = (1 - dt) g~ g~^T + (dt / gamma) Id, the two-timescale mapping of
// the sampled outer product. If g~ g~^T has constant R_f^2, this satisfies
// the variance control with max(R_f^2, 1/gamma).
inline NoiseSpec tango_blended_noise(const Model& model, const Dataset& data,
                                      const Vector& theta0, double dt, double gamma,
                                      const ModelNoiseEstimate& est) {
    if (!(gamma > 0.0)) throw precondition_error("blended metric mapping needs gamma > 0");
    if (!(dt >= 0.0) || dt > 1.0) throw precondition_error("blended metric mapping needs dt in [0, 1]");
    NoiseSpec base = fisher_rank_one_noise(model, data, theta0, est);
    NoiseSpec spec = base;
    spec.name = model.id() + "_tango";
    const double blend = 1.0 - dt;
    const double ridge = dt / gamma;
    const int d = spec.dim;
    spec.sample_metric = [base, blend, ridge, d](const Vector& theta, Rng& rng) {
        return Matrix(blend * base.sample_metric(theta, rng) +
                      ridge * Matrix::Identity(d, d));
    };
    spec.mean_metric = [base, blend, ridge, d](const Vector& theta) {
        return Matrix(blend * base.mean_metric(theta) + ridge * Matrix::Identity(d, d));
    };
    spec.r_sq = std::max(base.r_sq, 1.0 / gamma);
    spec.lambda_min = blend * base.lambda_min + ridge;
    spec.lambda_max = blend * base.lambda_max + ridge;
    return spec;
}

// Empirical validation of a spec's declared constants: the drift second
// moment and the semidefinite variance-control inequality.
inline CheckReport check_noise_spec(const NoiseSpec& spec, std::size_t n_draws,
                                    std::uint64_t seed) {
    if (n_draws < 10000) throw precondition_error("noise spec validation needs >= 1e4 draws");
    Rng rng(seed);
    const int d = spec.dim;
    double mean_drift_sq = 0.0;
    Matrix mean_metric = Matrix::Zero(d, d);
    Matrix mean_square = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < n_draws; ++i) {
        const Vector f = spec.sample_drift(spec.theta0, rng);
        mean_drift_sq += (f.squaredNorm() - mean_drift_sq) / static_cast<double>(i + 1);
        const Matrix a = spec.sample_metric(spec.theta0, rng);
        mean_metric += a;
        mean_square.noalias() += a.transpose() * a;
    }
    mean_metric /= static_cast<double>(n_draws);
    mean_square /= static_cast<double>(n_draws);

    const double drift_bound = spec.sigma_sq * (1.0 + 3.0 / std::sqrt(static_cast<double>(n_draws)));
    const double excess =
        largest_eigenvalue(mean_square - spec.r_sq * mean_metric);
    const double excess_allowance = 0.05 * spec.r_sq * operator_norm(mean_metric);

    CheckReport report;
    report.name = "noise_spec_" + spec.name;
    report.add("mean_drift_sq", mean_drift_sq);
    report.add("sigma_sq", spec.sigma_sq);
    report.add("variance_excess", excess);
    report.add("variance_allowance", excess_allowance);
    report.passed = mean_drift_sq <= drift_bound && excess <= excess_allowance;
    return report;
}

// ---------------------------------------------------------------------------
// Lockstep identity between the two-timescale iteration and averaged SGD
// with the matching multiplicative noise, on a quadratic model. Both sides
// consume identical sample and pseudo-sample streams.
// ---------------------------------------------------------------------------
struct Prop2Report {
    double max_theta_deviation = 0.0;
    double max_velocity_identity_deviation = 0.0;
};

inline CheckReport check_prop2_equivalence(const Model& model, const Dataset& data, double gamma,
                                           double dt, std::size_t n_steps, std::uint64_t seed,
                                           double tolerance = 1e-10) {
    if (!model.is_quadratic()) {
        throw unsupported_model_error(model.id() + ": equivalence check needs a quadratic model");
    }
    // Hessian must not depend on y: probe with two different outputs.
    {
        Rng probe_rng(seed ^ 0x5be6u);
        const Sample& s = draw_sample(data, probe_rng);
        Sample flipped = s;
        flipped.y(0) = s.y(0) + 7.5;
        const Vector theta_probe = Vector::Zero(model.param_dim());
        const double hess_gap =
            (model.hessian(theta_probe, s) - model.hessian(theta_probe, flipped)).cwiseAbs().maxCoeff();
        if (hess_gap > 1e-12) {
            throw unsupported_model_error(model.id() + ": per-sample Hessian depends on y");
        }
    }

    const Vector theta0 = Vector::Zero(model.param_dim());
    OptimizerState tng = OptimizerState::init(theta0);
    AveragedSgdState avg = AveragedSgdState::init(theta0);

    Rng srng = sample_stream(seed);
    Rng prng_tango = pseudo_stream(seed);
    Rng prng_avg = pseudo_stream(seed);  // identical stream: ties the pseudo-samples together

    Prop2Report result;
    for (std::size_t k = 1; k <= n_steps; ++k) {
        const Sample& s = draw_sample(data, srng);
        const Vector slow_before = avg.theta;
        tango_step(tng, model, s, dt, dt, gamma, TangoVariant::sampled, prng_tango);
        averaged_sgd_step(avg, model, s, gamma, dt, AveragedNoise::prop2, prng_avg);
        result.max_theta_deviation =
            std::max(result.max_theta_deviation, (tng.theta - avg.theta).norm());
        result.max_velocity_identity_deviation =
            std::max(result.max_velocity_identity_deviation,
                     (tng.v - (slow_before - avg.theta_fast)).norm());
    }

    CheckReport report;
    report.name = "prop2";
    report.add("max_theta_deviation", result.max_theta_deviation);
    report.add("max_velocity_identity_deviation", result.max_velocity_identity_deviation);
    report.add("tolerance", tolerance);
    report.passed = result.max_theta_deviation <= tolerance &&
                    result.max_velocity_identity_deviation <= tolerance;
    return report;
}

// ---------------------------------------------------------------------------
// Eigenvalue/contraction assertions: lambda_max(A(theta)) stays below the
// empirical variance-control constant, and Id - gamma A contracts by at
// least 1 - gamma lambda.
// ---------------------------------------------------------------------------
inline CheckReport check_lemma6(const NoiseSpec& spec, const std::vector<Vector>& theta_samples,
                                std::size_t n_draws, std::uint64_t seed) {
    if (theta_samples.empty()) throw error("contraction check needs sample points");
    Rng rng(seed);
    const int d = spec.dim;

    std::vector<double> rho_emp(theta_samples.size());
    std::vector<double> lam_min(theta_samples.size());
    std::vector<double> lam_max(theta_samples.size());
    bool eigen_ok = true;
    double worst_eigen_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < theta_samples.size(); ++i) {
        const Vector& theta = theta_samples[i];
        const Matrix a = spec.mean_metric(theta);
        lam_min[i] = smallest_eigenvalue(a);
        lam_max[i] = largest_eigenvalue(a);
        Matrix second = Matrix::Zero(d, d);
        for (std::size_t j = 0; j < n_draws; ++j) {
            const Matrix ahat = spec.sample_metric(theta, rng);
            second.noalias() += ahat.transpose() * ahat;
        }
        second /= static_cast<double>(n_draws);
        rho_emp[i] = generalized_max_eigenvalue(second, a);
        const double margin = rho_emp[i] * 1.05 - lam_max[i];
        worst_eigen_margin = std::min(worst_eigen_margin, margin);
        if (margin < 0.0) eigen_ok = false;
    }

    const double r_sq_global = *std::max_element(rho_emp.begin(), rho_emp.end());
    const double lambda_global = *std::min_element(lam_min.begin(), lam_min.end());
    const double gamma = 1.0 / r_sq_global;

    bool contraction_ok = true;
    double worst_contraction_excess = -std::numeric_limits<double>::infinity();
    for (const Vector& theta : theta_samples) {
        const Matrix a = spec.mean_metric(theta);
        const double norm = operator_norm(Matrix::Identity(d, d) - gamma * a);
        const double excess = norm - (1.0 - gamma * lambda_global);
        worst_contraction_excess = std::max(worst_contraction_excess, excess);
        if (excess > 1e-10) contraction_ok = false;
    }

    CheckReport report;
    report.name = "lemma6_" + spec.name;
    report.add("r_sq_empirical", r_sq_global);
    report.add("lambda_min", lambda_global);
    report.add("gamma", gamma);
    report.add("worst_eigen_margin", worst_eigen_margin);
    report.add("worst_contraction_excess", worst_contraction_excess);
    report.passed = eigen_ok && contraction_ok;
    return report;
}

// ---------------------------------------------------------------------------
// Velocity second-moment bound E|v_k|^2 <= 4 sigma^2 / lambda^2 for the
// general iteration at gamma <= 1/R^2, estimated over seeds. Unstable rates
// (the negative control) are only reachable with allow_unstable.
// ---------------------------------------------------------------------------
inline CheckReport check_lemma7_bound(const NoiseSpec& spec, double gamma, double dt,
                                      std::size_t n_steps, std::size_t n_seeds,
                                      std::uint64_t root_seed, bool allow_unstable = false,
                                      int jobs = 1) {
    if (!(gamma > 0.0)) throw precondition_error("lemma7 needs gamma > 0");
    if (!allow_unstable && gamma * spec.r_sq > 1.0 + 1e-12) {
        throw precondition_error("lemma7 needs gamma <= 1/R^2 (gamma R^2 = " +
                                 format_real(gamma * spec.r_sq) + ")");
    }
    const double bound = 4.0 * spec.sigma_sq / (spec.lambda_min * spec.lambda_min);
    const double giveup = bound * 1e9;

    std::vector<std::vector<double>> per_seed(n_seeds);
    parallel_for(n_seeds, jobs, [&](std::size_t i) {
        Rng rng = seed_stream(root_seed, i);
        Vector v = Vector::Zero(spec.dim);
        Vector theta = spec.theta0;
        std::vector<double> sq(n_steps, std::numeric_limits<double>::infinity());
        for (std::size_t k = 0; k < n_steps; ++k) {
            // An iterate escaping a model's valid parameter region counts as
            // divergence, same as a non-finite one: the tail stays at +inf.
            try {
                const Vector f_hat = spec.sample_drift(theta, rng);
                const Matrix a_hat = spec.sample_metric(theta, rng);
                v += gamma * f_hat - gamma * (a_hat * v);
            } catch (const error&) {
                break;
            }
            theta -= dt * v;
            const double norm_sq = v.squaredNorm();
            if (!std::isfinite(norm_sq) || norm_sq > giveup) break;
            sq[k] = norm_sq;
        }
        per_seed[i] = std::move(sq);
    });

    double max_ratio = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n_seeds; ++i) mean += per_seed[i][k];
        mean /= static_cast<double>(n_seeds);
        max_ratio = std::max(max_ratio, mean / bound);
    }

    const double threshold = 1.0 + 3.0 / std::sqrt(static_cast<double>(n_seeds));
    CheckReport report;
    report.name = "lemma7_" + spec.name;
    report.add("gamma", gamma);
    report.add("gamma_r_sq", gamma * spec.r_sq);
    report.add("bound", bound);
    report.add("max_ratio", max_ratio);
    report.add("threshold", threshold);
    report.passed = std::isfinite(max_ratio) && max_ratio <= threshold;
    return report;
}

// ---------------------------------------------------------------------------
// Martingale variance sums: mean over seeds of sum_j |xi_j|^2 and
// sum_j |zeta_j|^2 against n sigma^2 and 4 n R^2 lambda_max sigma^2/lambda^2
// (operators M_j = Id).
// ---------------------------------------------------------------------------
inline CheckReport check_martingale_variances(const NoiseSpec& spec, double gamma, double dt,
                                              std::size_t n_steps, std::size_t n_seeds,
                                              std::uint64_t root_seed, int jobs = 1) {
    if (gamma * spec.r_sq > 1.0 + 1e-12) {
        throw precondition_error("martingale check needs gamma <= 1/R^2");
    }
    std::vector<double> xi_sums(n_seeds, 0.0);
    std::vector<double> zeta_sums(n_seeds, 0.0);
    parallel_for(n_seeds, jobs, [&](std::size_t i) {
        Rng rng = seed_stream(root_seed, i);
        Vector v = Vector::Zero(spec.dim);
        Vector theta = spec.theta0;
        double xi_sum = 0.0;
        double zeta_sum = 0.0;
        for (std::size_t k = 0; k < n_steps; ++k) {
            const Vector f_hat = spec.sample_drift(theta, rng);
            const Matrix a_hat = spec.sample_metric(theta, rng);
            const Vector xi = f_hat - spec.mean_drift(theta);
            const Vector zeta = (a_hat - spec.mean_metric(theta)) * v;
            xi_sum += xi.squaredNorm();
            zeta_sum += zeta.squaredNorm();
            v += gamma * f_hat - gamma * (a_hat * v);
            theta -= dt * v;
            if (!all_finite(v)) throw divergence_error(k + 1, "martingale iteration diverged");
        }
        xi_sums[i] = xi_sum;
        zeta_sums[i] = zeta_sum;
    });

    double xi_mean = 0.0, zeta_mean = 0.0;
    for (std::size_t i = 0; i < n_seeds; ++i) {
        xi_mean += xi_sums[i];
        zeta_mean += zeta_sums[i];
    }
    xi_mean /= static_cast<double>(n_seeds);
    zeta_mean /= static_cast<double>(n_seeds);

    const double n = static_cast<double>(n_steps);
    const double xi_bound = n * spec.sigma_sq;
    const double zeta_bound = 4.0 * n * spec.r_sq * spec.lambda_max * spec.sigma_sq /
                              (spec.lambda_min * spec.lambda_min);
    const double slack = 1.0 + 3.0 / std::sqrt(static_cast<double>(n_seeds));

    CheckReport report;
    report.name = "martingale_" + spec.name;
    report.add("xi_sum_mean", xi_mean);
    report.add("xi_bound", xi_bound);
    report.add("zeta_sum_mean", zeta_mean);
    report.add("zeta_bound", zeta_bound);
    report.add("slack", slack);
    report.passed = xi_mean <= xi_bound * slack && zeta_mean <= zeta_bound * slack;
    return report;
}

// ---------------------------------------------------------------------------
// Backward B-matrix recursion B_{k-1} = B_k + gamma (Id - B_k A_k), seeded
// with B_n = A_n^{-1}. Checks the direct-substitution identity
//   B_{k-1} - A_{k-1}^{-1} = (B_k - A_k^{-1})(Id - gamma A_k) + A_k^{-1} - A_{k-1}^{-1}
// and measures sup_k |B_k - A_k^{-1}|_op.
// ---------------------------------------------------------------------------
struct BMatrixResult {
    double sup_deviation = 0.0;
    double max_recursion_residual = 0.0;
};

inline BMatrixResult bmatrix_backward(const std::vector<Matrix>& a_seq, double gamma) {
    if (a_seq.empty()) throw error("B recursion needs at least one metric matrix");
    if (!(gamma > 0.0)) throw precondition_error("B recursion needs gamma > 0");
    const int d = static_cast<int>(a_seq.front().rows());
    const Matrix id = Matrix::Identity(d, d);

    std::vector<Matrix> inv(a_seq.size());
    for (std::size_t k = 0; k < a_seq.size(); ++k) {
        const SymmetricEigen eig = symmetric_eigen(a_seq[k]);
        if (eig.values.minCoeff() <= 1e-10) {
            throw singular_matrix_error("metric matrix " + std::to_string(k) + " is singular");
        }
        if (gamma * eig.values.maxCoeff() > 1.0 + 1e-12) {
            throw contraction_error("gamma * lambda_max = " +
                                    format_real(gamma * eig.values.maxCoeff()) +
                                    " exceeds 1; B recursion is not contracting");
        }
        inv[k] = eig.vectors * eig.values.cwiseInverse().asDiagonal() * eig.vectors.transpose();
    }

    BMatrixResult result;
    Matrix b = inv.back();
    Matrix dev_prev = b - inv.back();  // zero at the terminal index
    result.sup_deviation = operator_norm(dev_prev);
    for (std::size_t k = a_seq.size(); k-- > 1;) {
        // step from index k down to k-1 (1-based indices k map to a_seq[k-1])
        const Matrix& a_k = a_seq[k];
        const Matrix b_prev = b + gamma * (id - b * a_k);
        const Matrix lhs = b_prev - inv[k - 1];
        const Matrix rhs = (b - inv[k]) * (id - gamma * a_k) + inv[k] - inv[k - 1];
        result.max_recursion_residual =
            std::max(result.max_recursion_residual, (lhs - rhs).cwiseAbs().maxCoeff());
        result.sup_deviation = std::max(result.sup_deviation, operator_norm(lhs));
        b = b_prev;
    }
    return result;
}

// Constant-A control: B stays at A^{-1} exactly.
inline CheckReport check_lemma11_constant(const Matrix& a, double gamma, std::size_t n_steps) {
    std::vector<Matrix> seq(n_steps + 1, a);
    const BMatrixResult r = bmatrix_backward(seq, gamma);
    CheckReport report;
    report.name = "lemma11_constant";
    report.add("sup_deviation", r.sup_deviation);
    report.add("max_recursion_residual", r.max_recursion_residual);
    report.passed = r.sup_deviation <= 1e-12 && r.max_recursion_residual <= 1e-12;
    return report;
}

// Model-driven control: metrics along an actual two-timescale trajectory,
// repeated over a grid of slow rates; the sup deviation must shrink with dt
// with a log-log slope of at least 0.35.
inline CheckReport check_lemma11(const Model& model, const Dataset& data, const Vector& theta0,
                                 double gamma, const std::vector<double>& dts, double total_time,
                                 std::uint64_t seed, double min_slope = 0.35,
                                 bool blended_metric = true) {
    if (dts.size() < 2) throw error("B recursion study needs >= 2 slow rates");
    auto fisher = model.fisher_fn(data);
    const int d = model.param_dim();
    const Matrix id = Matrix::Identity(d, d);

    std::vector<double> sups;
    double max_residual = 0.0;
    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::fixed_value(gamma);
    for (double dt : dts) {
        const TrajectoryRecord record =
            run(opt, model, data, theta0, StepSchedule::constant_rate(dt), total_time, seed, 1);
        std::vector<Matrix> a_seq;
        a_seq.reserve(record.rows.size() + 1);
        const double blend = blended_metric ? 1.0 - dt : 1.0;
        const double ridge = blended_metric ? dt / gamma : 0.0;
        a_seq.push_back(blend * fisher(theta0) + ridge * id);  // A_1 = A(theta_0)
        for (std::size_t i = 0; i + 1 < record.rows.size(); ++i) {
            a_seq.push_back(blend * fisher(record.rows[i].theta) + ridge * id);
        }
        const BMatrixResult r = bmatrix_backward(a_seq, gamma);
        sups.push_back(r.sup_deviation);
        max_residual = std::max(max_residual, r.max_recursion_residual);
    }

    const double slope = fit_loglog_slope(dts, sups);
    CheckReport report;
    report.name = "lemma11";
    for (std::size_t i = 0; i < dts.size(); ++i) {
        report.add("sup_deviation_dt_" + format_real(dts[i]), sups[i]);
    }
    report.add("slope", slope);
    report.add("max_recursion_residual", max_residual);
    report.passed = slope >= min_slope && max_residual <= 1e-12;
    return report;
}

// ---------------------------------------------------------------------------
// Convergence-order studies: endpoint error against the rk4 reference flow
// across a grid of slow rates, averaged over seeds for the stochastic
// iteration.
// ---------------------------------------------------------------------------
struct RateStudyResult {
    std::vector<double> delta_ts;
    std::vector<double> endpoint_errors;      // mean over non-divergent seeds
    std::vector<std::size_t> diverged_seeds;  // per cell
    double fitted_slope = 0.0;
};

namespace detail {

// At least 3 slow rates spanning two decades, so the fitted slope means something.
inline void check_rate_grid(const std::vector<double>& dts) {
    if (dts.size() < 3) throw precondition_error("rate study needs at least 3 slow rates");
    const auto [lo, hi] = std::minmax_element(dts.begin(), dts.end());
    if (*hi / *lo < 100.0 * (1.0 - 1e-12)) {
        throw precondition_error("rate study grid must span at least two decades");
    }
}

}  // namespace detail

inline RateStudyResult rate_study_tango(const Model& model, const Dataset& data,
                                        const Vector& theta0, double gamma,
                                        std::vector<double> dts, double total_time,
                                        std::size_t n_seeds, std::uint64_t root_seed,
                                        int jobs = 1) {
    detail::check_rate_grid(dts);
    std::sort(dts.begin(), dts.end(), std::greater<double>());
    const double h_ref = *std::min_element(dts.begin(), dts.end()) / 10.0;
    FlowProblem flow = natural_gradient_flow(model, data, theta0, 0.0);
    double max_horizon = 0.0;
    for (double dt : dts) {
        max_horizon = std::max(max_horizon, std::ceil(total_time / dt - 1e-12) * dt);
    }
    flow.total_time = max_horizon;
    const FlowSolution reference = solve_flow(flow, OdeMethod::rk4, h_ref);

    RateStudyResult result;
    result.delta_ts = dts;
    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::fixed_value(gamma);
    for (double dt : dts) {
        const std::size_t n_steps = static_cast<std::size_t>(std::ceil(total_time / dt - 1e-12));
        const Vector target = reference.at(static_cast<double>(n_steps) * dt);
        std::vector<double> errors(n_seeds, std::numeric_limits<double>::quiet_NaN());
        parallel_for(n_seeds, jobs, [&](std::size_t i) {
            try {
                const TrajectoryRecord rec =
                    run(opt, model, data, theta0, StepSchedule::constant_rate(dt), total_time,
                        root_seed ^ i, n_steps);
                errors[i] = (rec.rows.back().theta - target).norm();
            } catch (const divergence_error&) {
                // leave NaN: counted as a divergent cell entry
            }
        });
        double mean = 0.0;
        std::size_t valid = 0, diverged = 0;
        for (double e : errors) {
            if (std::isnan(e)) {
                ++diverged;
            } else {
                mean += e;
                ++valid;
            }
        }
        result.endpoint_errors.push_back(valid > 0 ? mean / static_cast<double>(valid)
                                                   : std::numeric_limits<double>::quiet_NaN());
        result.diverged_seeds.push_back(diverged);
    }
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < dts.size(); ++i) {
        if (std::isfinite(result.endpoint_errors[i]) && result.endpoint_errors[i] > 0.0) {
            xs.push_back(dts[i]);
            ys.push_back(result.endpoint_errors[i]);
        }
    }
    result.fitted_slope = xs.size() >= 2 ? fit_loglog_slope(xs, ys)
                                         : std::numeric_limits<double>::quiet_NaN();
    return result;
}

inline RateStudyResult rate_study_prop4(const FlowProblem& problem, double gamma,
                                        std::vector<double> dts) {
    detail::check_rate_grid(dts);
    std::sort(dts.begin(), dts.end(), std::greater<double>());
    const double h_ref = *std::min_element(dts.begin(), dts.end()) / 10.0;
    FlowProblem horizon = problem;
    double max_horizon = 0.0;
    for (double dt : dts) {
        max_horizon = std::max(max_horizon, std::ceil(problem.total_time / dt - 1e-12) * dt);
    }
    horizon.total_time = max_horizon;
    const FlowSolution reference = solve_flow(horizon, OdeMethod::rk4, h_ref);

    RateStudyResult result;
    result.delta_ts = dts;
    for (double dt : dts) {
        const std::size_t n_steps =
            static_cast<std::size_t>(std::ceil(problem.total_time / dt - 1e-12));
        FlowProblem cell = problem;
        const TrajectoryRecord rec = prop4_iterate(cell, gamma, dt, n_steps);
        const Vector target = reference.at(static_cast<double>(n_steps) * dt);
        result.endpoint_errors.push_back((rec.rows.back().theta - target).norm());
        result.diverged_seeds.push_back(0);
    }
    result.fitted_slope = fit_loglog_slope(result.delta_ts, result.endpoint_errors);
    return result;
}

// ---------------------------------------------------------------------------
// Frozen-theta fixed point: with the slow variable pinned, the time average
// of v over the second half of the run approaches J(theta)^{-1} E[g].
// ---------------------------------------------------------------------------
inline CheckReport check_frozen_fixed_point(const Model& model, const Dataset& data,
                                            const Vector& theta0, std::size_t n_steps,
                                            std::uint64_t seed, double tolerance = 0.03) {
    const Matrix fisher = model.exact_fisher(theta0, data);
    Vector target;
    try {
        target = spd_solve(fisher, expected_gradient(model, theta0, data), 1e-10);
    } catch (const singular_matrix_error&) {
        throw singular_matrix_error("Fisher matrix is singular at the probe point");
    }

    OptimizerState state = OptimizerState::init(theta0);
    Rng srng = sample_stream(seed);
    Rng prng = pseudo_stream(seed);
    const GammaPolicy policy = GammaPolicy::max_norm();

    Vector v_mean = Vector::Zero(model.param_dim());
    std::size_t tail_count = 0;
    for (std::size_t k = 1; k <= n_steps; ++k) {
        const Sample& s = draw_sample(data, srng);
        tango_step(state, model, s, 0.0, 0.0, policy, TangoVariant::sampled, prng);
        if (k > n_steps / 2) {
            ++tail_count;
            v_mean += (state.v - v_mean) / static_cast<double>(tail_count);
        }
    }

    const double rel_error = (v_mean - target).norm() / target.norm();
    CheckReport report;
    report.name = "fixed_point_" + model.id();
    report.add("rel_error", rel_error);
    report.add("tolerance", tolerance);
    report.add("target_norm", target.norm());
    report.passed = rel_error <= tolerance;
    return report;
}

}  // namespace tango
