#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tango/common.hpp"
#include "tango/linalg.hpp"
#include "tango/models.hpp"
#include "tango/trajectory.hpp"

namespace tango {

// ---------------------------------------------------------------------------
// Preconditioned gradient flow  d theta / dt = -A(theta)^{-1} F(theta).
// For the natural-gradient flow, F is the dataset-mean gradient and A the
// Fisher matrix.
// ---------------------------------------------------------------------------
struct FlowProblem {
    std::function<Vector(const Vector&)> drift;   // F
    std::function<Matrix(const Vector&)> metric;  // A, symmetric positive definite
    Vector theta0;
    double total_time = 1.0;
    double min_metric_eigenvalue = 1e-10;
};

inline FlowProblem natural_gradient_flow(const Model& model, const Dataset& data,
                                         const Vector& theta0, double total_time) {
    FlowProblem p;
    p.drift = model.expected_gradient_fn(data);
    p.metric = model.fisher_fn(data);
    p.theta0 = theta0;
    p.total_time = total_time;
    return p;
}

struct FlowSolution {
    std::vector<double> times;   // increasing, starts at 0, ends at T
    std::vector<Vector> states;

    const Vector& endpoint() const {
        if (states.empty()) throw error("flow solution is empty");
        return states.back();
    }

    // Linear interpolation between stored nodes, clamped to [0, T].
    Vector at(double t) const {
        if (states.empty()) throw error("flow solution is empty");
        if (t <= times.front()) return states.front();
        if (t >= times.back()) return states.back();
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const std::size_t hi = static_cast<std::size_t>(it - times.begin());
        const std::size_t lo = hi - 1;
        const double span = times[hi] - times[lo];
        const double w = span > 0.0 ? (t - times[lo]) / span : 0.0;
        return (1.0 - w) * states[lo] + w * states[hi];
    }
};

enum class OdeMethod { euler, rk4 };

namespace detail {

inline Vector flow_rhs(const FlowProblem& problem, const Vector& theta) {
    if (!all_finite(theta)) throw divergence_error(0, "flow state became non-finite");
    const Matrix a = problem.metric(theta);
    if (!is_symmetric(a, 1e-10)) throw singular_matrix_error("flow metric is not symmetric");
    Vector rhs = -spd_solve(a, problem.drift(theta), problem.min_metric_eigenvalue);
    return rhs;
}

}  // namespace detail

// Fixed-step integration of the flow. Nodes are thinned uniformly so that at
// most max_nodes states are stored; evaluation in between interpolates.
inline FlowSolution solve_flow(const FlowProblem& problem, OdeMethod method, double h,
                               std::size_t max_nodes = 100000) {
    if (!(h > 0.0)) throw config_error("flow step h must be positive");
    if (!(problem.total_time > 0.0)) throw config_error("flow horizon must be positive");
    if (h > problem.total_time) throw config_error("flow step h exceeds the horizon");

    const double T = problem.total_time;
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(T / h - 1e-12));
    const std::size_t stride = std::max<std::size_t>(1, (n_steps + 1) / std::max<std::size_t>(2, max_nodes) + 1);

    FlowSolution sol;
    sol.times.reserve(n_steps / stride + 2);
    sol.states.reserve(n_steps / stride + 2);
    sol.times.push_back(0.0);
    sol.states.push_back(problem.theta0);

    Vector theta = problem.theta0;
    double t = 0.0;
    for (std::size_t k = 1; k <= n_steps; ++k) {
        const double step = std::min(h, T - t);
        if (method == OdeMethod::euler) {
            theta += step * detail::flow_rhs(problem, theta);
        } else {
            const Vector k1 = detail::flow_rhs(problem, theta);
            const Vector k2 = detail::flow_rhs(problem, theta + 0.5 * step * k1);
            const Vector k3 = detail::flow_rhs(problem, theta + 0.5 * step * k2);
            const Vector k4 = detail::flow_rhs(problem, theta + step * k3);
            theta += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        t += step;
        if (!all_finite(theta)) throw divergence_error(k, "flow integration diverged");
        if (k % stride == 0 || k == n_steps) {
            sol.times.push_back(t);
            sol.states.push_back(theta);
        }
    }
    return sol;
}

// Deterministic two-timescale iteration
//   v_k = v_{k-1} + gamma F(theta_{k-1}) - gamma A(theta_{k-1}) v_{k-1}
//   theta_k = theta_{k-1} - dt v_k
// started at v_0 = 0. The velocity update is (1 - gamma lambda_min)-
// contracting; gamma * lambda_max(A) must stay below 1 along the trajectory.
inline TrajectoryRecord prop4_iterate(const FlowProblem& problem, double gamma, double dt,
                                      std::size_t record_every = 1) {
    if (!(gamma > 0.0)) throw precondition_error("prop4 iteration needs gamma > 0");
    if (!(dt > 0.0) || dt > 1.0) throw precondition_error("prop4 iteration needs dt in (0, 1]");
    if (record_every < 1) throw config_error("record_every must be >= 1");

    const std::size_t n_steps =
        static_cast<std::size_t>(std::ceil(problem.total_time / dt - 1e-12));
    if (n_steps < 1) throw config_error("prop4 horizon shorter than one step");

    Vector theta = problem.theta0;
    Vector v = Vector::Zero(theta.size());
    TrajectoryRecord record;

    for (std::size_t k = 1; k <= n_steps; ++k) {
        const Matrix a = problem.metric(theta);
        if (!is_symmetric(a, 1e-10)) throw singular_matrix_error("iteration metric is not symmetric");
        const double lambda_max = largest_eigenvalue(a);
        if (gamma * lambda_max > 1.0) {
            throw contraction_error("gamma * lambda_max(A) = " + format_real(gamma * lambda_max) +
                                    " exceeds 1; velocity update is not contracting");
        }
        v += gamma * problem.drift(theta) - gamma * (a * v);
        theta -= dt * v;
        if (!all_finite(theta) || !all_finite(v)) {
            throw divergence_error(k, "prop4 iteration diverged");
        }
        if (k % record_every == 0 || k == n_steps) {
            record.rows.push_back(TrajectoryRow{k, static_cast<double>(k) * dt, theta, v.norm(), 0.0});
        }
    }
    return record;
}

}  // namespace tango
