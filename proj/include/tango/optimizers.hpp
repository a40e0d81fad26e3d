#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tango/common.hpp"
#include "tango/linalg.hpp"
#include "tango/models.hpp"
#include "tango/trajectory.hpp"

namespace tango {

// ---------------------------------------------------------------------------
// Running pseudo-gradient statistics feeding the fast-rate policies.
// ---------------------------------------------------------------------------
struct GammaStats {
    std::size_t count = 0;
    double max_sq_norm = 0.0;
    double mean_sq_norm = 0.0;   // running mean of |g~|^2
    double mean_quartic = 0.0;   // running mean of |g~|^4

    void observe(double g_tilde_sq_norm) {
        ++count;
        if (g_tilde_sq_norm > max_sq_norm) max_sq_norm = g_tilde_sq_norm;
        const double n = static_cast<double>(count);
        mean_sq_norm += (g_tilde_sq_norm - mean_sq_norm) / n;
        mean_quartic += (g_tilde_sq_norm * g_tilde_sq_norm - mean_quartic) / n;
    }
};

// Fast-rate selection. max_norm is the conservative 1/max|g~|^2 rule,
// gaussian_kurtosis is 1/(kappa E|g~|^2) with kappa = 3 by default, and
// moment_ratio is the necessary-but-not-sufficient E|g~|^2 / E|g~|^4.
struct GammaPolicy {
    enum class Kind { fixed, max_norm, gaussian_kurtosis, moment_ratio };

    Kind kind = Kind::fixed;
    double value = 1e-2;         // fixed case
    double kurtosis_bound = 3.0;

    static GammaPolicy fixed_value(double v) { return GammaPolicy{Kind::fixed, v, 3.0}; }
    static GammaPolicy max_norm() { return GammaPolicy{Kind::max_norm, 0.0, 3.0}; }
    static GammaPolicy gaussian_kurtosis(double kappa = 3.0) {
        return GammaPolicy{Kind::gaussian_kurtosis, 0.0, kappa};
    }
    static GammaPolicy moment_ratio() { return GammaPolicy{Kind::moment_ratio, 0.0, 3.0}; }
};

inline double select_gamma(const GammaPolicy& policy, const GammaStats& stats) {
    if (policy.kind == GammaPolicy::Kind::fixed) {
        if (!(policy.value > 0.0)) throw precondition_error("fixed gamma must be positive");
        return policy.value;
    }
    if (stats.count == 0) {
        throw error("gamma policy needs at least one observed pseudo-gradient");
    }
    switch (policy.kind) {
        case GammaPolicy::Kind::max_norm:
            if (!(stats.max_sq_norm > 0.0)) throw error("max |g~|^2 statistic is zero");
            return 1.0 / stats.max_sq_norm;
        case GammaPolicy::Kind::gaussian_kurtosis:
            if (!(stats.mean_sq_norm > 0.0)) throw error("mean |g~|^2 statistic is zero");
            return 1.0 / (policy.kurtosis_bound * stats.mean_sq_norm);
        case GammaPolicy::Kind::moment_ratio:
            if (!(stats.mean_quartic > 0.0)) throw error("mean |g~|^4 statistic is zero");
            return stats.mean_sq_norm / stats.mean_quartic;
        default:
            throw error("unknown gamma policy");
    }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule for the slow variable. Every rate lies in (0, 1];
// the frozen-theta diagnostic mode is a separate run flag, not a zero rate.
// ---------------------------------------------------------------------------
struct StepSchedule {
    enum class Kind { constant, sequence };

    Kind kind = Kind::constant;
    double delta_t = 1e-3;
    std::vector<double> values;

    static StepSchedule constant_rate(double dt) {
        StepSchedule s;
        s.kind = Kind::constant;
        s.delta_t = dt;
        return s;
    }

    static StepSchedule from_sequence(std::vector<double> seq) {
        StepSchedule s;
        s.kind = Kind::sequence;
        s.values = std::move(seq);
        return s;
    }

    void validate() const {
        if (kind == Kind::constant) {
            if (!(delta_t > 0.0) || delta_t > 1.0) {
                throw config_error("schedule delta_t must lie in (0, 1], got " + format_real(delta_t));
            }
            return;
        }
        if (values.empty()) throw config_error("schedule sequence is empty");
        for (double dt : values) {
            if (!(dt > 0.0) || dt > 1.0) {
                throw config_error("schedule sequence entries must lie in (0, 1], got " + format_real(dt));
            }
        }
    }

    double dt(std::size_t k) const {  // 1-based step index
        if (kind == Kind::constant) return delta_t;
        if (k < 1 || k > values.size()) throw error("schedule index out of range");
        return values[k - 1];
    }

    // dt_{k-1}, with dt_0 defined as dt_1 (irrelevant: v_0 = 0).
    double dt_prev(std::size_t k) const { return k <= 1 ? dt(1) : dt(k - 1); }

    std::size_t n_steps(double total_time) const {
        if (!(total_time > 0.0)) throw config_error("T must be positive");
        if (kind == Kind::constant) {
            const std::size_t n = static_cast<std::size_t>(std::ceil(total_time / delta_t));
            if (n < 1) throw config_error("T/delta_t rounds to zero steps");
            return n;
        }
        double accum = 0.0;
        std::size_t n = 0;
        for (double dt_k : values) {
            if (accum >= total_time) break;
            accum += dt_k;
            ++n;
        }
        if (n < 1) throw config_error("schedule sequence provides no steps before T");
        return n;
    }
};

// ---------------------------------------------------------------------------
// Preconditioner C applied to both gradient terms of the velocity update.
// ---------------------------------------------------------------------------
struct Preconditioner {
    enum class Kind { identity, fixed_matrix, rmsprop_diag, inv_diag_fisher };

    Kind kind = Kind::identity;
    Matrix matrix;               // fixed_matrix
    Vector accum;                // diagonal state (rmsprop / running mean of g~^2)
    std::size_t observations = 0;
    double rho = 0.99;

    static Preconditioner identity() { return Preconditioner{}; }

    static Preconditioner fixed(Matrix m) {
        if (!is_symmetric(m, 1e-10) || smallest_eigenvalue(m) <= 0.0) {
            throw precondition_error("fixed preconditioner must be symmetric positive definite");
        }
        Preconditioner p;
        p.kind = Kind::fixed_matrix;
        p.matrix = std::move(m);
        return p;
    }

    static Preconditioner rmsprop(double rho = 0.99) {
        Preconditioner p;
        p.kind = Kind::rmsprop_diag;
        p.rho = rho;
        return p;
    }

    static Preconditioner inverse_diagonal_fisher() {
        Preconditioner p;
        p.kind = Kind::inv_diag_fisher;
        return p;
    }

    void observe(const Vector& g_tilde) {
        if (kind == Kind::identity || kind == Kind::fixed_matrix) return;
        if (accum.size() == 0) accum = Vector::Zero(g_tilde.size());
        ++observations;
        if (kind == Kind::rmsprop_diag) {
            accum = rho * accum + (1.0 - rho) * g_tilde.cwiseAbs2();
        } else {  // running mean of g~^2, entrywise
            accum += (g_tilde.cwiseAbs2() - accum) / static_cast<double>(observations);
        }
    }

    Vector apply(const Vector& u) const {
        switch (kind) {
            case Kind::identity:
                return u;
            case Kind::fixed_matrix:
                return matrix * u;
            case Kind::rmsprop_diag: {
                if (accum.size() == 0) throw precondition_error("rmsprop preconditioner has no observations");
                const Vector diag = (accum.array() + 1e-8).rsqrt();
                if (diag.minCoeff() < 1e-12) {
                    throw precondition_error("preconditioner diagonal fell below the 1e-12 floor");
                }
                return diag.cwiseProduct(u);
            }
            case Kind::inv_diag_fisher: {
                if (accum.size() == 0) throw precondition_error("diagonal Fisher preconditioner has no observations");
                const Vector diag = (accum.array() + 1e-8).inverse();
                if (diag.minCoeff() < 1e-12) {
                    throw precondition_error("preconditioner diagonal fell below the 1e-12 floor");
                }
                return diag.cwiseProduct(u);
            }
        }
        throw error("unknown preconditioner kind");
    }
};

// ---------------------------------------------------------------------------
// Optimizer state and step functions.
// ---------------------------------------------------------------------------
struct OptimizerState {
    Vector theta;
    Vector v;
    std::size_t k = 0;
    GammaStats gamma_stats;

    static OptimizerState init(const Vector& theta0) {
        OptimizerState s;
        s.theta = theta0;
        s.v = Vector::Zero(theta0.size());
        return s;
    }
};

enum class TangoVariant { sampled, outer_product };

// Velocity recursion shared by the plain, minibatch and preconditioned
// updates:
//   v <- (1 - dt_prev) v + gamma * drive - quad_scale (1 - dt_prev) (v . gt) gt_drive
// where drive = C g, gt_drive = C g~ (C = Id when unpreconditioned) and
// quad_scale = gamma, or gamma * B for minibatch averages. Sharing one
// expression keeps the B = 1 and C = Id reductions exact to the bit.
inline Vector velocity_update(const Vector& v_prev, double one_minus_dt_prev, double gamma,
                              double quad_scale, const Vector& drive, const Vector& gt,
                              const Vector& gt_drive) {
    const double align = v_prev.dot(gt);
    const double coeff = quad_scale * one_minus_dt_prev * align;
    return one_minus_dt_prev * v_prev + gamma * drive - coeff * gt_drive;
}

namespace detail {

inline void check_rates(double dt_prev, double dt_k) {
    if (!(dt_prev >= 0.0) || dt_prev > 1.0 || !(dt_k >= 0.0) || dt_k > 1.0) {
        throw precondition_error("step rates must lie in [0, 1]");
    }
}

inline void ensure_finite(const OptimizerState& state, const char* what) {
    if (!all_finite(state.v) || !all_finite(state.theta)) {
        throw divergence_error(state.k, std::string(what) + " produced a non-finite iterate");
    }
}

inline GradientPair draw_gradient_pair(const Model& model, const Vector& theta, const Sample& s,
                                       TangoVariant variant, Rng& pseudo_rng) {
    if (variant == TangoVariant::sampled) {
        return sample_gradient_pair(model, theta, s, pseudo_rng);
    }
    GradientPair out;
    out.g = model.grad_log_loss(theta, s.x, s.y);
    out.g_tilde = out.g;
    return out;
}

}  // namespace detail

inline void tango_step(OptimizerState& state, const Model& model, const Sample& s, double dt_prev,
                       double dt_k, const GammaPolicy& gamma_policy, TangoVariant variant,
                       Rng& pseudo_rng) {
    detail::check_rates(dt_prev, dt_k);
    model.check_parameters(state.theta);
    const auto pair = detail::draw_gradient_pair(model, state.theta, s, variant, pseudo_rng);
    state.gamma_stats.observe(pair.g_tilde.squaredNorm());
    const double gamma = select_gamma(gamma_policy, state.gamma_stats);
    const double omdp = 1.0 - dt_prev;
    state.v = velocity_update(state.v, omdp, gamma, gamma, pair.g, pair.g_tilde, pair.g_tilde);
    state.theta -= dt_k * state.v;
    ++state.k;
    detail::ensure_finite(state, "tango step");
}

inline void tango_step(OptimizerState& state, const Model& model, const Sample& s, double dt_prev,
                       double dt_k, double gamma, TangoVariant variant, Rng& pseudo_rng) {
    tango_step(state, model, s, dt_prev, dt_k, GammaPolicy::fixed_value(gamma), variant, pseudo_rng);
}

// Minibatch variant: g and g~ are batch averages, and the quadratic term is
// rescaled by B because E[g~ g~^T] is then 1/B times the Fisher matrix.
inline void tango_minibatch_step(OptimizerState& state, const Model& model,
                                 const std::vector<Sample>& batch, double dt_prev, double dt_k,
                                 const GammaPolicy& gamma_policy, Rng& pseudo_rng) {
    if (batch.empty()) throw precondition_error("minibatch must hold at least one sample");
    detail::check_rates(dt_prev, dt_k);
    model.check_parameters(state.theta);
    const double batch_size = static_cast<double>(batch.size());
    Vector g_sum = Vector::Zero(state.theta.size());
    Vector gt_sum = Vector::Zero(state.theta.size());
    for (const Sample& s : batch) {
        const auto pair =
            detail::draw_gradient_pair(model, state.theta, s, TangoVariant::sampled, pseudo_rng);
        g_sum += pair.g;
        gt_sum += pair.g_tilde;
    }
    const Vector g = g_sum / batch_size;
    const Vector g_tilde = gt_sum / batch_size;
    state.gamma_stats.observe(g_tilde.squaredNorm());
    const double gamma = select_gamma(gamma_policy, state.gamma_stats);
    const double omdp = 1.0 - dt_prev;
    state.v = velocity_update(state.v, omdp, gamma, gamma * batch_size, g, g_tilde, g_tilde);
    state.theta -= dt_k * state.v;
    ++state.k;
    detail::ensure_finite(state, "tango minibatch step");
}

inline void preconditioned_tango_step(OptimizerState& state, const Model& model, const Sample& s,
                                      double dt_prev, double dt_k, const GammaPolicy& gamma_policy,
                                      Preconditioner& precond, Rng& pseudo_rng) {
    detail::check_rates(dt_prev, dt_k);
    model.check_parameters(state.theta);
    const auto pair =
        detail::draw_gradient_pair(model, state.theta, s, TangoVariant::sampled, pseudo_rng);
    precond.observe(pair.g_tilde);
    const Vector drive = precond.apply(pair.g);
    const Vector gt_drive = precond.apply(pair.g_tilde);
    // The preconditioned pseudo-gradient is what enters the stability budget.
    state.gamma_stats.observe(gt_drive.squaredNorm());
    const double gamma = select_gamma(gamma_policy, state.gamma_stats);
    const double omdp = 1.0 - dt_prev;
    state.v = velocity_update(state.v, omdp, gamma, gamma, drive, pair.g_tilde, gt_drive);
    state.theta -= dt_k * state.v;
    ++state.k;
    detail::ensure_finite(state, "preconditioned tango step");
}

inline void sgd_step(OptimizerState& state, const Model& model, const Sample& s, double lr) {
    if (!(lr > 0.0)) throw precondition_error("sgd learning rate must be positive");
    model.check_parameters(state.theta);
    const Vector g = model.grad_log_loss(state.theta, s.x, s.y);
    state.theta -= lr * g;
    ++state.k;
    detail::ensure_finite(state, "sgd step");
}

// ---------------------------------------------------------------------------
// Averaged SGD: a fast constant-rate descent whose iterates are exponentially
// averaged into the returned parameter. With prop2 noise the fast step gains
// the centered perturbation (g~ g~^T - H)(theta - theta_fast), which makes
// the averaged trajectory coincide with the two-timescale iteration on
// quadratic models.
// ---------------------------------------------------------------------------
enum class AveragedNoise { none, prop2 };

struct AveragedSgdState {
    Vector theta_fast;
    Vector theta;
    std::size_t k = 0;

    static AveragedSgdState init(const Vector& theta0) {
        AveragedSgdState s;
        s.theta_fast = theta0;
        s.theta = theta0;
        return s;
    }
};

inline void averaged_sgd_step(AveragedSgdState& state, const Model& model, const Sample& s,
                              double gamma, double dt_k, AveragedNoise noise, Rng& pseudo_rng) {
    if (!(gamma > 0.0)) throw precondition_error("averaged sgd gamma must be positive");
    if (!(dt_k > 0.0) || dt_k > 1.0) throw precondition_error("averaged sgd dt must lie in (0, 1]");
    model.check_parameters(state.theta);
    model.check_parameters(state.theta_fast);

    const Vector g_fast = model.grad_log_loss(state.theta_fast, s.x, s.y);
    Vector update = -gamma * g_fast;
    if (noise == AveragedNoise::prop2) {
        if (!model.is_quadratic()) {
            throw unsupported_model_error(model.id() +
                                          ": prop2 noise needs a quadratic loss with y-independent Hessian");
        }
        const Vector y_tilde = model.sample_pseudo_output(state.theta, s.x, pseudo_rng);
        const Vector g_tilde = model.grad_log_loss(state.theta, s.x, y_tilde);
        const Matrix h = model.hessian(state.theta, s);
        const Vector gap = state.theta - state.theta_fast;  // (1 - dt_{k-1}) v_{k-1}
        const Vector xi = g_tilde * g_tilde.dot(gap) - h * gap;
        update += gamma * xi;
    }
    state.theta_fast += update;
    state.theta = (1.0 - dt_k) * state.theta + dt_k * state.theta_fast;
    ++state.k;
    if (!all_finite(state.theta) || !all_finite(state.theta_fast)) {
        throw divergence_error(state.k, "averaged sgd step produced a non-finite iterate");
    }
}

// ---------------------------------------------------------------------------
// Stochastic natural gradient with the exact (or Monte-Carlo) Fisher matrix:
// theta <- theta - dt J(theta)^{-1} g_k via an SPD solve.
// ---------------------------------------------------------------------------
struct FisherSource {
    enum class Kind { exact, monte_carlo };
    Kind kind = Kind::exact;
    std::size_t n_samples = 100000;

    static FisherSource exact() { return FisherSource{}; }
    static FisherSource monte_carlo(std::size_t n) { return FisherSource{Kind::monte_carlo, n}; }
};

inline void natural_gradient_step(OptimizerState& state, const Model& model, const Dataset& data,
                                  const Sample& s, double dt, const FisherSource& source,
                                  Rng& rng) {
    model.check_parameters(state.theta);
    const Vector g = model.grad_log_loss(state.theta, s.x, s.y);
    const Matrix fisher = source.kind == FisherSource::Kind::exact
                              ? model.exact_fisher(state.theta, data)
                              : mc_fisher(model, state.theta, data, source.n_samples, rng);
    try {
        state.v = spd_solve(fisher, g, 1e-10);
    } catch (const singular_matrix_error&) {
        throw singular_matrix_error("Fisher matrix is singular at the current parameter");
    }
    state.theta -= dt * state.v;
    ++state.k;
    detail::ensure_finite(state, "natural gradient step");
}

// ---------------------------------------------------------------------------
// Shared run loop.
// ---------------------------------------------------------------------------
enum class OptimizerKind {
    tango,
    tango_minibatch,
    tango_preconditioned,
    sgd,
    averaged_sgd,
    natural_gradient
};

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::tango;
    TangoVariant variant = TangoVariant::sampled;
    GammaPolicy gamma = GammaPolicy::fixed_value(1e-2);
    double learning_rate = 1e-3;       // sgd
    std::size_t minibatch_size = 1;    // tango_minibatch
    Preconditioner preconditioner;     // tango_preconditioned
    AveragedNoise averaged_noise = AveragedNoise::none;
    FisherSource fisher_source;        // natural_gradient
    bool adaptive_output_variance = false;
    bool freeze_theta = false;         // diagnostic: theta frozen, v evolves
    std::size_t frozen_steps = 0;
};

namespace detail {

// Running mean over the last 100 sampled losses.
struct LossWindow {
    std::array<double, 100> buf{};
    std::size_t count = 0;
    std::size_t next = 0;

    void add(double loss) {
        buf[next] = loss;
        next = (next + 1) % buf.size();
        if (count < buf.size()) ++count;
    }

    double mean() const {
        if (count == 0) return 0.0;
        double sum = 0.0;
        for (std::size_t i = 0; i < count; ++i) sum += buf[i];
        return sum / static_cast<double>(count);
    }
};

}  // namespace detail

// Executes ceil(T/dt) steps (or frozen_steps in the frozen-theta mode) with
// uniform dataset sampling; records every record_every steps plus the final
// state. Bitwise reproducible from (config, seed).
inline TrajectoryRecord run(const OptimizerConfig& opt, const Model& model_in, const Dataset& data,
                            const Vector& theta0, const StepSchedule& schedule, double total_time,
                            std::uint64_t seed, std::size_t record_every) {
    if (record_every < 1) throw config_error("record_every must be >= 1");
    if (data.empty()) throw empty_dataset_error("run: dataset is empty");

    std::size_t n_steps;
    if (opt.freeze_theta) {
        if (opt.frozen_steps < 1) throw config_error("frozen mode needs frozen_steps >= 1");
        if (opt.kind != OptimizerKind::tango && opt.kind != OptimizerKind::tango_minibatch &&
            opt.kind != OptimizerKind::tango_preconditioned) {
            throw config_error("frozen-theta mode is a velocity diagnostic for the tango variants");
        }
        n_steps = opt.frozen_steps;
    } else {
        schedule.validate();
        n_steps = schedule.n_steps(total_time);
    }

    const std::unique_ptr<Model> owned = model_in.clone();
    Model& model = *owned;
    if (opt.adaptive_output_variance && !model.has_output_variance()) {
        throw config_error("adaptive output variance requires a model with an output variance");
    }

    Rng srng = sample_stream(seed);
    Rng prng = pseudo_stream(seed);

    OptimizerState state = OptimizerState::init(theta0);
    AveragedSgdState avg_state = AveragedSgdState::init(theta0);
    Preconditioner precond = opt.preconditioner;

    detail::LossWindow window;
    double residual_sq_mean = 0.0;
    std::size_t residual_count = 0;

    TrajectoryRecord record;
    double t_accum = 0.0;

    for (std::size_t k = 1; k <= n_steps; ++k) {
        const double dt_k = opt.freeze_theta ? 0.0 : schedule.dt(k);
        const double dt_prev = opt.freeze_theta ? 0.0 : schedule.dt_prev(k);
        const Vector& current_theta =
            opt.kind == OptimizerKind::averaged_sgd ? avg_state.theta : state.theta;

        std::vector<Sample> batch;
        const std::size_t batch_size =
            opt.kind == OptimizerKind::tango_minibatch ? std::max<std::size_t>(1, opt.minibatch_size) : 1;
        batch.reserve(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) batch.push_back(draw_sample(data, srng));

        for (const Sample& s : batch) {
            const double loss = model.log_loss(current_theta, s);
            window.add(loss);
            if (opt.adaptive_output_variance) {
                const double sq_residual = 2.0 * model.output_variance() * loss;
                ++residual_count;
                residual_sq_mean += (sq_residual - residual_sq_mean) / static_cast<double>(residual_count);
                model.set_output_variance(std::max(residual_sq_mean, 1e-8));
            }
        }

        switch (opt.kind) {
            case OptimizerKind::tango:
                tango_step(state, model, batch.front(), dt_prev, dt_k, opt.gamma, opt.variant, prng);
                break;
            case OptimizerKind::tango_minibatch:
                tango_minibatch_step(state, model, batch, dt_prev, dt_k, opt.gamma, prng);
                break;
            case OptimizerKind::tango_preconditioned:
                preconditioned_tango_step(state, model, batch.front(), dt_prev, dt_k, opt.gamma,
                                          precond, prng);
                break;
            case OptimizerKind::sgd:
                sgd_step(state, model, batch.front(), opt.learning_rate);
                break;
            case OptimizerKind::averaged_sgd: {
                if (opt.gamma.kind != GammaPolicy::Kind::fixed) {
                    throw config_error("averaged_sgd requires a fixed gamma value");
                }
                averaged_sgd_step(avg_state, model, batch.front(), opt.gamma.value, dt_k,
                                  opt.averaged_noise, prng);
                break;
            }
            case OptimizerKind::natural_gradient:
                natural_gradient_step(state, model, data, batch.front(), dt_k, opt.fisher_source, prng);
                break;
        }

        // A parameter that left the model's valid region is a divergence of
        // the run, reported with its step index.
        try {
            if (opt.kind == OptimizerKind::averaged_sgd) {
                model.check_parameters(avg_state.theta);
                model.check_parameters(avg_state.theta_fast);
            } else {
                model.check_parameters(state.theta);
            }
        } catch (const invalid_parameter_error& e) {
            throw divergence_error(k, std::string("iterate left the valid region: ") + e.what());
        }

        double t;
        if (opt.freeze_theta) {
            t = 0.0;
        } else if (schedule.kind == StepSchedule::Kind::constant) {
            t = static_cast<double>(k) * schedule.delta_t;
        } else {
            t_accum += dt_k;
            t = t_accum;
        }

        if (k % record_every == 0 || k == n_steps) {
            TrajectoryRow row;
            row.step = k;
            row.t = t;
            if (opt.kind == OptimizerKind::averaged_sgd) {
                row.theta = avg_state.theta;
                row.v_norm = (avg_state.theta - avg_state.theta_fast).norm();
            } else {
                row.theta = state.theta;
                row.v_norm = state.v.norm();
            }
            row.loss = window.mean();
            record.rows.push_back(std::move(row));
        }
    }
    return record;
}

}  // namespace tango
