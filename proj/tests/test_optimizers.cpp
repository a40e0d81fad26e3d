#include <catch2/catch.hpp>

#include <cmath>

#include "tango/tango.hpp"

using namespace tango;

namespace {

Sample xy_sample(const Vector& x, double y) {
    Sample s;
    s.x = x;
    s.y = Vector(1);
    s.y(0) = y;
    return s;
}

// Gradients are the recorded outputs themselves; pseudo outputs are a fixed
// vector. Lets tests drive the velocity recursion with prescribed g and g~.
class EchoGradientModel final : public Model {
  public:
    explicit EchoGradientModel(Vector pseudo) : pseudo_(std::move(pseudo)) {}

    int param_dim() const override { return static_cast<int>(pseudo_.size()); }
    std::string id() const override { return "echo_gradient_stub"; }
    double log_loss(const Vector& theta, const Sample& s) const override { return theta.dot(s.y); }
    Vector grad_log_loss(const Vector&, const Vector&, const Vector& y) const override { return y; }
    Vector sample_pseudo_output(const Vector&, const Vector&, Rng&) const override { return pseudo_; }
    Matrix exact_fisher(const Vector&, const Dataset&) const override {
        return pseudo_ * pseudo_.transpose();
    }
    std::unique_ptr<Model> clone() const override { return std::make_unique<EchoGradientModel>(*this); }

  private:
    Vector pseudo_;
};

Dataset default_linreg_dataset(std::uint64_t seed = 303) {
    Vector w(2);
    w << 1.0, -0.5;
    return make_linear_regression_dataset(w, 0.5, 200, seed);
}

}  // namespace

TEST_CASE("first step reduces to a pure gradient step", "[optimizers]") {
    EchoGradientModel model(Vector::Constant(1, 1.0));
    OptimizerState state = OptimizerState::init(Vector::Constant(1, 2.0));
    Rng prng(1);
    tango_step(state, model, xy_sample(Vector(0), 3.0), 0.37, 0.1, 0.01, TangoVariant::sampled, prng);
    CHECK(state.v(0) == 0.01 * 3.0);
    CHECK(state.theta(0) == 2.0 - 0.1 * (0.01 * 3.0));
    CHECK(state.k == 1);
}

TEST_CASE("velocity recursion matches the hand-computed value", "[optimizers]") {
    EchoGradientModel model(Vector::Constant(1, 1.0));
    OptimizerState state = OptimizerState::init(Vector::Constant(1, 2.0));
    state.v = Vector::Constant(1, 0.5);
    Rng prng(1);
    tango_step(state, model, xy_sample(Vector(0), 3.0), 0.1, 0.1, 0.01, TangoVariant::sampled, prng);
    CHECK(state.v(0) == Approx(0.4755).epsilon(1e-12));
    CHECK(state.theta(0) == Approx(1.95245).epsilon(1e-12));
}

TEST_CASE("minibatch velocity recursion matches the hand-computed value", "[optimizers]") {
    EchoGradientModel model(Vector::Constant(1, 1.0));
    OptimizerState state = OptimizerState::init(Vector::Constant(1, 2.0));
    state.v = Vector::Constant(1, 0.5);
    Rng prng(1);
    // Two samples with mean gradient 3; pseudo-gradients are 1 each.
    std::vector<Sample> batch{xy_sample(Vector(0), 2.0), xy_sample(Vector(0), 4.0)};
    tango_minibatch_step(state, model, batch, 0.1, 0.1, GammaPolicy::fixed_value(0.01), prng);
    CHECK(state.v(0) == Approx(0.471).epsilon(1e-12));
}

TEST_CASE("preconditioned velocity recursion matches the hand-computed value", "[optimizers]") {
    EchoGradientModel model(Vector::Constant(1, 1.0));
    OptimizerState state = OptimizerState::init(Vector::Constant(1, 2.0));
    state.v = Vector::Constant(1, 0.5);
    Rng prng(1);
    Preconditioner two = Preconditioner::fixed(Matrix::Constant(1, 1, 2.0));
    preconditioned_tango_step(state, model, xy_sample(Vector(0), 3.0), 0.1, 0.1,
                              GammaPolicy::fixed_value(0.01), two, prng);
    CHECK(state.v(0) == Approx(0.501).epsilon(1e-12));
}

TEST_CASE("velocity update is affine in the previous velocity", "[optimizers]") {
    Rng rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Vector a(3), b(3), g(3), gt(3);
        for (int i = 0; i < 3; ++i) {
            a(i) = normal(rng);
            b(i) = normal(rng);
            g(i) = normal(rng);
            gt(i) = normal(rng);
        }
        const double alpha = normal(rng);
        const double omdp = 0.9, gamma = 0.05;
        const Vector mixed =
            velocity_update(alpha * a + (1.0 - alpha) * b, omdp, gamma, gamma, g, gt, gt);
        const Vector split = alpha * velocity_update(a, omdp, gamma, gamma, g, gt, gt) +
                             (1.0 - alpha) * velocity_update(b, omdp, gamma, gamma, g, gt, gt);
        CHECK((mixed - split).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("unit slow rate reduces to plain sgd with the fast rate", "[optimizers]") {
    struct Case {
        std::unique_ptr<Model> model;
        Dataset data;
    };
    std::vector<Case> cases;
    cases.push_back({std::make_unique<GaussianModel>(), make_gaussian_dataset(10.0, 1.0, 500, 17)});
    cases.push_back({std::make_unique<LinearRegressionModel>(2, 1.0), default_linreg_dataset()});
    {
        SoftmaxRegressionModel softmax(3, 1);
        Vector truth(2);
        truth << 1.0, -0.5;
        cases.push_back({softmax.clone(), make_softmax_dataset(softmax, truth, 500, 18)});
    }

    for (const Case& c : cases) {
        const Vector theta0 = Vector::Zero(c.model->param_dim());
        const double gamma = 0.005;

        OptimizerConfig tango_opt;
        tango_opt.kind = OptimizerKind::tango;
        tango_opt.gamma = GammaPolicy::fixed_value(gamma);
        const TrajectoryRecord tng = run(tango_opt, *c.model, c.data, theta0,
                                         StepSchedule::constant_rate(1.0), 200.0, 99, 1);

        OptimizerConfig sgd_opt;
        sgd_opt.kind = OptimizerKind::sgd;
        sgd_opt.learning_rate = gamma;
        const TrajectoryRecord sgd = run(sgd_opt, *c.model, c.data, theta0,
                                         StepSchedule::constant_rate(1.0), 200.0, 99, 1);

        REQUIRE(tng.rows.size() == sgd.rows.size());
        CHECK(tng.same_theta_path(sgd));
        for (std::size_t i = 0; i < tng.rows.size(); ++i) {
            CHECK(tng.rows[i].loss == sgd.rows[i].loss);
        }
    }
}

TEST_CASE("batch size one is bit-identical to the plain step", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset();
    const Vector theta0 = Vector::Zero(2);

    OptimizerConfig plain;
    plain.kind = OptimizerKind::tango;
    plain.gamma = GammaPolicy::fixed_value(0.01);
    OptimizerConfig mb = plain;
    mb.kind = OptimizerKind::tango_minibatch;
    mb.minibatch_size = 1;

    const auto schedule = StepSchedule::constant_rate(0.01);
    const TrajectoryRecord a = run(plain, model, data, theta0, schedule, 5.0, 7, 1);
    const TrajectoryRecord b = run(mb, model, data, theta0, schedule, 5.0, 7, 1);
    CHECK(a == b);
}

TEST_CASE("identity preconditioner is bit-identical to the plain step", "[optimizers]") {
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(5.0, 1.0, 300, 23);
    const Vector theta0 = Vector::Zero(2);

    OptimizerConfig plain;
    plain.kind = OptimizerKind::tango;
    plain.gamma = GammaPolicy::fixed_value(0.005);
    OptimizerConfig pre = plain;
    pre.kind = OptimizerKind::tango_preconditioned;
    pre.preconditioner = Preconditioner::identity();

    const auto schedule = StepSchedule::constant_rate(0.001);
    const TrajectoryRecord a = run(plain, model, data, theta0, schedule, 1.0, 7, 1);
    const TrajectoryRecord b = run(pre, model, data, theta0, schedule, 1.0, 7, 1);
    CHECK(a == b);
}

TEST_CASE("minibatch outer products scale back to the Fisher matrix", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset();
    const Vector theta = Vector::Zero(2);
    const Matrix fisher = model.exact_fisher(theta, data);

    const std::size_t batch_size = 2;
    const std::size_t n_batches = 100000;
    Rng srng(31), prng(32);
    Matrix acc = Matrix::Zero(2, 2);
    for (std::size_t i = 0; i < n_batches; ++i) {
        Vector gt_sum = Vector::Zero(2);
        for (std::size_t b = 0; b < batch_size; ++b) {
            const Sample& s = draw_sample(data, srng);
            const Vector y_tilde = model.sample_pseudo_output(theta, s.x, prng);
            gt_sum += model.grad_log_loss(theta, s.x, y_tilde);
        }
        const Vector gt = gt_sum / static_cast<double>(batch_size);
        acc.noalias() += gt * gt.transpose();
    }
    const Matrix scaled = static_cast<double>(batch_size) * acc / static_cast<double>(n_batches);
    CHECK((scaled - fisher).norm() / fisher.norm() <= 0.02);
}

TEST_CASE("fixed preconditioner is the substituted-variable iteration", "[optimizers]") {
    Matrix m(2, 2);
    m << 1.5, 0.4, 0.4, 0.8;
    const Matrix root = spd_sqrt(m);

    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset(29);
    Dataset transformed = data;
    for (Sample& s : transformed) s.x = root * s.x;

    Vector theta0(2);
    theta0 << 0.5, -0.5;
    const Vector phi0 = spd_solve(root, theta0);

    OptimizerConfig pre;
    pre.kind = OptimizerKind::tango_preconditioned;
    pre.gamma = GammaPolicy::fixed_value(0.01);
    pre.preconditioner = Preconditioner::fixed(m);

    OptimizerConfig plain;
    plain.kind = OptimizerKind::tango;
    plain.gamma = GammaPolicy::fixed_value(0.01);

    const auto schedule = StepSchedule::constant_rate(0.005);
    const TrajectoryRecord a = run(pre, model, data, theta0, schedule, 10.0, 7, 50);
    const TrajectoryRecord b = run(plain, model, transformed, phi0, schedule, 10.0, 7, 50);

    REQUIRE(a.rows.size() == b.rows.size());
    double sup = 0.0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        sup = std::max(sup, (a.rows[i].theta - root * b.rows[i].theta).norm());
    }
    CHECK(sup <= 1e-8);
}

TEST_CASE("sgd step arithmetic and zero-gradient behavior", "[optimizers]") {
    EchoGradientModel echo(Vector::Constant(1, 0.0));
    OptimizerState state = OptimizerState::init(Vector::Constant(1, 2.0));
    sgd_step(state, echo, xy_sample(Vector(0), 3.0), 0.1);
    CHECK(state.theta(0) == Approx(1.7).epsilon(1e-15));

    LinearRegressionModel linreg(1, 1.0);
    Vector x(1);
    x << 2.0;
    OptimizerState fixed = OptimizerState::init(Vector::Constant(1, 0.5));
    sgd_step(fixed, linreg, xy_sample(x, 1.0), 0.1);  // y = theta.x exactly: residual 0
    CHECK(fixed.theta(0) == 0.5);

    CHECK_THROWS_AS(sgd_step(fixed, linreg, xy_sample(x, 1.0), 0.0), precondition_error);
}

TEST_CASE("averaged sgd with unit slow rate returns the fast iterate", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset();
    AveragedSgdState state = AveragedSgdState::init(Vector::Zero(2));
    Rng srng(41), prng(42);
    for (int k = 0; k < 50; ++k) {
        averaged_sgd_step(state, model, draw_sample(data, srng), 0.01, 1.0, AveragedNoise::none,
                          prng);
        CHECK(state.theta == state.theta_fast);
    }
}

TEST_CASE("averaged sgd multiplicative noise is centered", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset();
    Vector theta_slow(2), theta_fast(2);
    theta_slow << 0.3, -0.2;
    theta_fast << 0.1, 0.4;
    const Vector gap = theta_slow - theta_fast;

    Rng rng(43);
    const std::size_t n = 100000;
    Vector mean = Vector::Zero(2);
    Vector second = Vector::Zero(2);
    for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = draw_sample(data, rng);
        const Vector y_tilde = model.sample_pseudo_output(theta_slow, s.x, rng);
        const Vector gt = model.grad_log_loss(theta_slow, s.x, y_tilde);
        const Vector xi = gt * gt.dot(gap) - model.hessian(theta_slow, s) * gap;
        mean += xi;
        second += xi.cwiseProduct(xi);
    }
    mean /= static_cast<double>(n);
    second /= static_cast<double>(n);
    for (int i = 0; i < 2; ++i) {
        const double se = std::sqrt((second(i) - mean(i) * mean(i)) / static_cast<double>(n));
        CHECK(std::abs(mean(i)) <= 3.0 * se);
    }
}

TEST_CASE("averaged sgd noise requires a quadratic model", "[optimizers]") {
    GaussianModel model;
    AveragedSgdState state = AveragedSgdState::init(Vector::Zero(2));
    Rng prng(44);
    Sample s;
    s.x = Vector(0);
    s.y = Vector::Constant(1, 1.0);
    CHECK_THROWS_AS(averaged_sgd_step(state, model, s, 0.01, 0.1, AveragedNoise::prop2, prng),
                    unsupported_model_error);
}

TEST_CASE("natural gradient step with identity Fisher reduces to sgd", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    Dataset data;
    Vector x1(2), x2(2);
    x1 << std::sqrt(2.0), 0.0;
    x2 << 0.0, std::sqrt(2.0);
    data.push_back(xy_sample(x1, 1.0));
    data.push_back(xy_sample(x2, -1.0));
    CHECK((model.exact_fisher(Vector::Zero(2), data) - Matrix::Identity(2, 2)).norm() <= 1e-14);

    OptimizerState ng = OptimizerState::init(Vector::Zero(2));
    OptimizerState gd = OptimizerState::init(Vector::Zero(2));
    Rng rng(45);
    natural_gradient_step(ng, model, data, data[0], 0.1, FisherSource::exact(), rng);
    sgd_step(gd, model, data[0], 0.1);
    CHECK((ng.theta - gd.theta).norm() <= 1e-12);
}

TEST_CASE("natural gradient step solves against the closed-form Fisher", "[optimizers]") {
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(10.0, 1.0, 100, 46);
    OptimizerState state = OptimizerState::init(Vector::Zero(2));
    Sample s;
    s.x = Vector(0);
    s.y = Vector::Constant(1, 10.0);  // g = (-10, 1 - 100) = (-10, -99)
    Rng rng(47);
    const double dt = 0.01;
    natural_gradient_step(state, model, data, s, dt, FisherSource::exact(), rng);
    CHECK(state.theta(0) == Approx(dt * 10.0).epsilon(1e-12));
    CHECK(state.theta(1) == Approx(dt * 49.5).epsilon(1e-12));
}

TEST_CASE("natural gradient detects a singular Fisher matrix", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    Dataset data;
    Vector x(2);
    x << 1.0, 0.0;
    data.push_back(xy_sample(x, 1.0));
    OptimizerState state = OptimizerState::init(Vector::Zero(2));
    Rng rng(48);
    CHECK_THROWS_AS(
        natural_gradient_step(state, model, data, data[0], 0.1, FisherSource::exact(), rng),
        singular_matrix_error);
}

TEST_CASE("fast-rate policies", "[optimizers]") {
    GammaStats stats;
    stats.observe(1.0);
    stats.observe(4.0);
    stats.observe(9.0);
    CHECK(select_gamma(GammaPolicy::max_norm(), stats) == Approx(1.0 / 9.0));

    // Degenerate distribution: moment-ratio equals max-norm.
    GammaStats constant;
    constant.observe(2.5);
    constant.observe(2.5);
    CHECK(select_gamma(GammaPolicy::moment_ratio(), constant) == Approx(1.0 / 2.5));
    CHECK(select_gamma(GammaPolicy::max_norm(), constant) == Approx(1.0 / 2.5));

    CHECK_THROWS(select_gamma(GammaPolicy::max_norm(), GammaStats{}));
    CHECK(select_gamma(GammaPolicy::fixed_value(0.3), GammaStats{}) == 0.3);

    // Standard normal pseudo-gradients in dimension d: E|g~|^2 = d, so the
    // Gaussian-kurtosis rule approaches 1/(3d).
    const int d = 4;
    Rng rng(49);
    std::normal_distribution<double> normal(0.0, 1.0);
    GammaStats gauss;
    for (int i = 0; i < 100000; ++i) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            const double z = normal(rng);
            sq += z * z;
        }
        gauss.observe(sq);
    }
    CHECK(select_gamma(GammaPolicy::gaussian_kurtosis(), gauss) ==
          Approx(1.0 / (3.0 * d)).epsilon(0.05));
}

TEST_CASE("max-norm statistics include the current pseudo-gradient", "[optimizers]") {
    // The guard 1 - gamma |g~_k|^2 >= 0 holds because the policy sees the
    // current draw before the velocity update.
    Rng rng(50);
    std::lognormal_distribution<double> heavy(0.0, 1.0);
    GammaStats stats;
    for (int i = 0; i < 10000; ++i) {
        const double sq = heavy(rng);
        stats.observe(sq);
        const double gamma = select_gamma(GammaPolicy::max_norm(), stats);
        CHECK(1.0 - gamma * sq >= 0.0);
    }

    // A fresh state must already have statistics when the policy runs.
    GaussianModel model;
    OptimizerState state = OptimizerState::init(Vector::Zero(2));
    Rng prng(51);
    Sample s;
    s.x = Vector(0);
    s.y = Vector::Constant(1, 2.0);
    CHECK_NOTHROW(
        tango_step(state, model, s, 0.0, 0.0, GammaPolicy::max_norm(), TangoVariant::sampled, prng));
    CHECK(state.gamma_stats.count == 1);
}

TEST_CASE("outer-product variant uses the data gradient in the quadratic term", "[optimizers]") {
    GaussianModel model;
    OptimizerState state = OptimizerState::init(Vector::Zero(2));
    state.v = Vector::Constant(2, 0.1);
    Sample s;
    s.x = Vector(0);
    s.y = Vector::Constant(1, 2.0);
    Rng prng(52);
    const Vector g = model.grad_log_loss(state.theta, s.x, s.y);
    const Vector expected = velocity_update(state.v, 0.9, 0.01, 0.01, g, g, g);
    tango_step(state, model, s, 0.1, 0.1, 0.01, TangoVariant::outer_product, prng);
    CHECK((state.v - expected).cwiseAbs().maxCoeff() == 0.0);
    CHECK(state.gamma_stats.max_sq_norm == g.squaredNorm());
}

TEST_CASE("outer-product statistic is not the Fisher matrix away from the optimum",
          "[optimizers]") {
    // The outer-product variant reuses the data gradient as g~; its mean
    // outer product over the dataset is generally far from J. Pseudo-sampled
    // outputs are what reproduce J (see the monte carlo Fisher tests).
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(10.0, 1.0, 2000, 57);
    const Vector theta = Vector::Zero(2);
    Matrix outer = Matrix::Zero(2, 2);
    for (const Sample& s : data) {
        const Vector g = model.grad_log_loss(theta, s.x, s.y);
        outer.noalias() += g * g.transpose();
    }
    outer /= static_cast<double>(data.size());
    const Matrix fisher = model.exact_fisher(theta, data);
    CHECK((outer - fisher).norm() / fisher.norm() > 1.0);
}

TEST_CASE("step schedules validate and index correctly", "[optimizers]") {
    CHECK_THROWS_AS(StepSchedule::constant_rate(0.0).validate(), config_error);
    CHECK_THROWS_AS(StepSchedule::constant_rate(1.5).validate(), config_error);
    CHECK_THROWS_AS(StepSchedule::from_sequence({0.5, 0.0}).validate(), config_error);

    const StepSchedule constant = StepSchedule::constant_rate(0.25);
    CHECK(constant.n_steps(0.25) == 1);
    CHECK(constant.n_steps(1.0) == 4);
    CHECK(constant.dt_prev(1) == 0.25);

    const StepSchedule seq = StepSchedule::from_sequence({0.5, 0.25, 0.25, 0.1});
    CHECK(seq.dt(1) == 0.5);
    CHECK(seq.dt_prev(1) == 0.5);
    CHECK(seq.dt_prev(3) == 0.25);
    CHECK(seq.n_steps(1.0) == 3);
}

TEST_CASE("runs are reproducible and record on the requested cadence", "[optimizers]") {
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(3.0, 1.0, 200, 53);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::fixed_value(0.01);

    const auto schedule = StepSchedule::constant_rate(0.01);
    const TrajectoryRecord a = run(opt, model, data, Vector::Zero(2), schedule, 0.12, 99, 5);
    const TrajectoryRecord b = run(opt, model, data, Vector::Zero(2), schedule, 0.12, 99, 5);
    CHECK(a == b);
    REQUIRE(a.rows.size() == 3);
    CHECK(a.rows[0].step == 5);
    CHECK(a.rows[1].step == 10);
    CHECK(a.rows[2].step == 12);
    CHECK(a.rows[2].t == 12 * 0.01);

    const TrajectoryRecord single =
        run(opt, model, data, Vector::Zero(2), StepSchedule::constant_rate(0.5), 0.5, 99, 1);
    CHECK(single.rows.size() == 1);
    CHECK(single.rows[0].step == 1);

    const TrajectoryRecord other = run(opt, model, data, Vector::Zero(2), schedule, 0.12, 100, 5);
    CHECK_FALSE(a == other);
}

TEST_CASE("divergence aborts the run with the step index", "[optimizers]") {
    LinearRegressionModel model(2, 1.0);
    const Dataset data = default_linreg_dataset();
    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::fixed_value(1e3);

    bool thrown = false;
    try {
        run(opt, model, data, Vector::Zero(2), StepSchedule::constant_rate(0.5), 500.0, 7, 10);
    } catch (const divergence_error& e) {
        thrown = true;
        CHECK(e.step >= 1);
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
    CHECK(thrown);
}

TEST_CASE("adaptive output variance tracks the running squared residual", "[optimizers]") {
    LinearRegressionModel model(1, 1.0);
    Vector x(1);
    x << 1.0;
    Dataset data{xy_sample(x, 4.0)};  // constant residual 4 at theta = 0

    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::fixed_value(0.01);
    opt.adaptive_output_variance = true;

    const TrajectoryRecord rec =
        run(opt, model, data, Vector::Zero(1), StepSchedule::constant_rate(0.1), 0.1, 7, 1);
    // First step: sigma^2 becomes 16, so the gradient is -4/16 and
    // theta_1 = dt * gamma * 0.25.
    CHECK(rec.rows[0].theta(0) == Approx(0.1 * 0.01 * 0.25).epsilon(1e-12));

    OptimizerConfig plain = opt;
    plain.adaptive_output_variance = false;
    const TrajectoryRecord fixed =
        run(plain, model, data, Vector::Zero(1), StepSchedule::constant_rate(0.1), 0.1, 7, 1);
    CHECK(fixed.rows[0].theta(0) == Approx(0.1 * 0.01 * 4.0).epsilon(1e-12));

    GaussianModel gaussian;
    OptimizerConfig bad = opt;
    CHECK_THROWS_AS(run(bad, gaussian, make_gaussian_dataset(0.0, 1.0, 10, 8), Vector::Zero(2),
                        StepSchedule::constant_rate(0.1), 0.1, 7, 1),
                    config_error);
}

TEST_CASE("preconditioner state updates", "[optimizers]") {
    CHECK_THROWS_AS(Preconditioner::fixed(Matrix::Constant(2, 2, 1.0)), precondition_error);

    Preconditioner rms = Preconditioner::rmsprop(0.9);
    Vector g1(2), g2(2);
    g1 << 1.0, 2.0;
    g2 << 3.0, 0.5;
    rms.observe(g1);
    rms.observe(g2);
    const Vector a = 0.9 * (0.1 * g1.cwiseAbs2()) + 0.1 * g2.cwiseAbs2();
    const Vector u = Vector::Constant(2, 1.0);
    const Vector applied = rms.apply(u);
    for (int i = 0; i < 2; ++i) {
        CHECK(applied(i) == Approx(1.0 / std::sqrt(a(i) + 1e-8)).epsilon(1e-12));
    }

    Preconditioner diag = Preconditioner::inverse_diagonal_fisher();
    diag.observe(g1);
    diag.observe(g2);
    const Vector mean = 0.5 * (g1.cwiseAbs2() + g2.cwiseAbs2());
    const Vector applied2 = diag.apply(u);
    for (int i = 0; i < 2; ++i) {
        CHECK(applied2(i) == Approx(1.0 / (mean(i) + 1e-8)).epsilon(1e-12));
    }

    CHECK_THROWS_AS(Preconditioner::rmsprop().apply(u), precondition_error);
}

TEST_CASE("adaptive diagonal preconditioners run stably under the max-norm policy",
          "[optimizers]") {
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(10.0, 1.0, 2000, 101);
    for (auto precond : {Preconditioner::rmsprop(), Preconditioner::inverse_diagonal_fisher()}) {
        OptimizerConfig opt;
        opt.kind = OptimizerKind::tango_preconditioned;
        opt.preconditioner = precond;
        opt.gamma = GammaPolicy::max_norm();
        const TrajectoryRecord rec = run(opt, model, data, Vector::Zero(2),
                                         StepSchedule::constant_rate(1e-3), 2.0, 7, 500);
        CHECK(all_finite(rec.rows.back().theta));
        CHECK(rec.rows.back().theta(0) > 3.0);  // well on the way to the data mean 10
        CHECK(rec.rows.back().loss < 10.0);     // down from ~51 at the start
    }
}

TEST_CASE("frozen-theta mode keeps the parameter fixed while v evolves", "[optimizers]") {
    GaussianModel model;
    const Dataset data = make_gaussian_dataset(10.0, 1.0, 500, 54);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::tango;
    opt.gamma = GammaPolicy::max_norm();
    opt.freeze_theta = true;
    opt.frozen_steps = 2000;

    Vector theta0(2);
    theta0 << 0.5, 0.1;
    const TrajectoryRecord rec =
        run(opt, model, data, theta0, StepSchedule::constant_rate(0.1), 1.0, 55, 500);
    for (const TrajectoryRow& row : rec.rows) {
        CHECK(row.theta == theta0);
        CHECK(row.t == 0.0);
    }
    CHECK(rec.rows.back().v_norm > 0.0);

    OptimizerConfig bad = opt;
    bad.kind = OptimizerKind::sgd;
    CHECK_THROWS_AS(run(bad, model, data, theta0, StepSchedule::constant_rate(0.1), 1.0, 55, 500),
                    config_error);
}
