#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tango/tango.hpp"

using namespace tango;

namespace {

constexpr double kHalfLogTwoPi = 0.9189385332046727;

Sample scalar_sample(double y) {
    Sample s;
    s.x = Vector(0);
    s.y = Vector(1);
    s.y(0) = y;
    return s;
}

Sample xy_sample(const Vector& x, double y) {
    Sample s;
    s.x = x;
    s.y = Vector(1);
    s.y(0) = y;
    return s;
}

Vector fd_gradient(const Model& model, const Vector& theta, const Sample& s, double h = 1e-6) {
    Vector g(model.param_dim());
    Vector probe = theta;
    for (int i = 0; i < theta.size(); ++i) {
        probe(i) = theta(i) + h;
        const double plus = model.log_loss(probe, s);
        probe(i) = theta(i) - h;
        const double minus = model.log_loss(probe, s);
        probe(i) = theta(i);
        g(i) = (plus - minus) / (2.0 * h);
    }
    return g;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double ks_statistic(std::vector<double> draws, const std::function<double(double)>& cdf) {
    std::sort(draws.begin(), draws.end());
    const double n = static_cast<double>(draws.size());
    double d = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        const double f = cdf(draws[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(f - static_cast<double>(i + 1) / n));
    }
    return d;
}

// Unit-gradient stub: the loss gradient is the recorded output, and pseudo
// outputs are +-1 fair draws, so the Fisher matrix is exactly 1.
class UnitGradientModel final : public Model {
  public:
    int param_dim() const override { return 1; }
    std::string id() const override { return "unit_gradient_stub"; }
    double log_loss(const Vector& theta, const Sample& s) const override {
        return theta(0) * s.y(0);
    }
    Vector grad_log_loss(const Vector&, const Vector&, const Vector& y) const override {
        Vector g(1);
        g(0) = y(0);
        return g;
    }
    Vector sample_pseudo_output(const Vector&, const Vector&, Rng& rng) const override {
        std::uniform_int_distribution<int> coin(0, 1);
        Vector y(1);
        y(0) = coin(rng) == 0 ? -1.0 : 1.0;
        return y;
    }
    Matrix exact_fisher(const Vector&, const Dataset&) const override {
        Matrix j(1, 1);
        j(0, 0) = 1.0;
        return j;
    }
    std::unique_ptr<Model> clone() const override { return std::make_unique<UnitGradientModel>(*this); }
};

}  // namespace

TEST_CASE("gaussian log loss closed forms", "[models]") {
    GaussianModel model;
    Vector theta = Vector::Zero(2);
    CHECK(model.log_loss(theta, scalar_sample(0.0)) == Approx(kHalfLogTwoPi).epsilon(1e-12));
    CHECK(model.log_loss(theta, scalar_sample(10.0)) == Approx(50.0 + kHalfLogTwoPi).epsilon(1e-12));

    theta << 3.0, std::log(2.0);
    const double expected = 0.5 * std::pow((5.0 - 3.0) / 2.0, 2) + std::log(2.0) + kHalfLogTwoPi;
    CHECK(model.log_loss(theta, scalar_sample(5.0)) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("linear regression loss and gradient closed forms", "[models]") {
    LinearRegressionModel model(1, 1.0);
    Vector theta = Vector::Zero(1);
    Vector x(1);
    x << 1.0;
    CHECK(model.log_loss(theta, xy_sample(x, 2.0)) == Approx(2.0).epsilon(1e-14));
    const Vector g = model.grad_log_loss(theta, x, Vector::Constant(1, 2.0));
    CHECK(g(0) == Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("invalid parameters are rejected, not clamped", "[models]") {
    GaussianModel model;
    Vector theta(2);
    theta << 0.0, 25.0;
    CHECK_THROWS_AS(model.log_loss(theta, scalar_sample(0.0)), invalid_parameter_error);
    theta << std::numeric_limits<double>::quiet_NaN(), 0.0;
    CHECK_THROWS_AS(model.grad_log_loss(theta, Vector(0), Vector::Constant(1, 1.0)),
                    invalid_parameter_error);
    CHECK_THROWS_AS(model.log_loss(Vector::Zero(3), scalar_sample(0.0)), invalid_parameter_error);
}

TEST_CASE("gaussian gradient closed form", "[models]") {
    GaussianModel model;
    const Vector g = model.grad_log_loss(Vector::Zero(2), Vector(0), Vector::Constant(1, 0.0));
    CHECK(g(0) == Approx(0.0).margin(1e-14));
    CHECK(g(1) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gradients match central finite differences", "[models]") {
    Rng rng(2024);
    std::normal_distribution<double> normal(0.0, 1.0);

    GaussianModel gaussian;
    LinearRegressionModel linreg(2, 0.7);
    SoftmaxRegressionModel softmax(3, 2);

    auto check_model = [&](const Model& model, auto make_sample) {
        for (int trial = 0; trial < 20; ++trial) {
            const Vector theta = model.random_valid_theta(rng);
            const Sample s = make_sample(rng);
            const Vector analytic = model.grad_log_loss(theta, s.x, s.y);
            const Vector numeric = fd_gradient(model, theta, s);
            const double scale = std::max(1.0, numeric.norm());
            CHECK((analytic - numeric).norm() / scale <= 1e-5);
        }
    };

    check_model(gaussian, [&](Rng& r) { return scalar_sample(10.0 + normal(r)); });
    check_model(linreg, [&](Rng& r) {
        Vector x(2);
        x << normal(r), normal(r);
        return xy_sample(x, normal(r) * 2.0);
    });
    check_model(softmax, [&](Rng& r) {
        Vector x(2);
        x << normal(r), normal(r);
        std::uniform_int_distribution<int> label(0, 2);
        return xy_sample(x, static_cast<double>(label(r)));
    });
}

TEST_CASE("pseudo-output sampling follows the model law", "[models]") {
    GaussianModel gaussian;
    Vector theta(2);
    theta << 3.0, 0.0;
    Rng rng(7);
    double mean = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        mean += gaussian.sample_pseudo_output(theta, Vector(0), rng)(0);
    }
    mean /= static_cast<double>(n);
    CHECK(mean == Approx(3.0).margin(0.01));

    LinearRegressionModel linreg(1, 1.0);
    Vector x(1);
    x << 1.0;
    Rng rng2(8);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = linreg.sample_pseudo_output(Vector::Zero(1), x, rng2)(0);
        m1 += y;
        m2 += y * y;
    }
    m1 /= static_cast<double>(n);
    m2 /= static_cast<double>(n);
    CHECK(m2 - m1 * m1 == Approx(1.0).margin(0.01));
}

TEST_CASE("pseudo-output sampling is deterministic given the engine state", "[models]") {
    GaussianModel model;
    Vector theta(2);
    theta << 1.0, -0.3;
    Rng a(99), b(99);
    for (int i = 0; i < 50; ++i) {
        CHECK(model.sample_pseudo_output(theta, Vector(0), a)(0) ==
              model.sample_pseudo_output(theta, Vector(0), b)(0));
    }
}

TEST_CASE("exact Fisher closed forms", "[models]") {
    GaussianModel gaussian;
    Vector theta(2);
    theta << 0.7, std::log(0.5);
    const Matrix j = gaussian.exact_fisher(theta, Dataset{});
    CHECK(j(0, 0) == Approx(4.0).epsilon(1e-12));
    CHECK(j(1, 1) == Approx(2.0).epsilon(1e-12));
    CHECK(j(0, 1) == 0.0);

    LinearRegressionModel linreg(2, 2.0);
    Dataset data;
    Vector x1(2), x2(2);
    x1 << 1.0, 0.0;
    x2 << 1.0, 2.0;
    data.push_back(xy_sample(x1, 0.5));
    data.push_back(xy_sample(x2, -0.5));
    const Matrix expected = 0.5 * (x1 * x1.transpose() + x2 * x2.transpose()) / 2.0;
    CHECK((linreg.exact_fisher(Vector::Zero(2), data) - expected).cwiseAbs().maxCoeff() <= 1e-14);

    UnitGradientModel unit;
    CHECK(unit.exact_fisher(Vector::Zero(1), Dataset{})(0, 0) == 1.0);
    Dataset unit_data{scalar_sample(1.0)};
    Rng rng(4);
    CHECK(mc_fisher(unit, Vector::Zero(1), unit_data, 1000, rng)(0, 0) == Approx(1.0));
}

TEST_CASE("monte carlo Fisher matches the closed form", "[models]") {
    GaussianModel model;
    Vector theta(2);
    theta << 1.5, 0.2;
    const Dataset data = make_gaussian_dataset(0.0, 1.0, 100, 11);
    Rng rng(12);
    const Matrix exact = model.exact_fisher(theta, data);
    const Matrix mc = mc_fisher(model, theta, data, 1000000, rng);
    CHECK((mc - exact).norm() / exact.norm() <= 0.01);
}

TEST_CASE("single-draw monte carlo Fisher is the outer product of one pseudo-gradient",
          "[models]") {
    LinearRegressionModel model(2, 1.0);
    Vector w(2);
    w << 1.0, -1.0;
    const Dataset data = make_linear_regression_dataset(w, 0.3, 50, 21);
    const Vector theta = Vector::Zero(2);

    Rng rng(77);
    Rng replay = rng;
    const Matrix mc = mc_fisher(model, theta, data, 1, rng);

    const Sample& s = draw_sample(data, replay);
    const Vector y_tilde = model.sample_pseudo_output(theta, s.x, replay);
    const Vector g = model.grad_log_loss(theta, s.x, y_tilde);
    CHECK((mc - g * g.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("per-sample Hessian closed forms and finite-difference fallback", "[models]") {
    LinearRegressionModel linreg(2, 1.0);
    Vector x(2);
    x << 1.0, 2.0;
    Matrix h = linreg.hessian(Vector::Zero(2), xy_sample(x, 3.0));
    CHECK(h(0, 0) == Approx(1.0));
    CHECK(h(0, 1) == Approx(2.0));
    CHECK(h(1, 1) == Approx(4.0));

    // Quadratic: Hessian independent of the recorded output.
    CHECK((linreg.hessian(Vector::Zero(2), xy_sample(x, -8.0)) - h).cwiseAbs().maxCoeff() == 0.0);

    // Zero input: zero curvature.
    CHECK(linreg.hessian(Vector::Zero(2), xy_sample(Vector::Zero(2), 1.0)).cwiseAbs().maxCoeff() ==
          0.0);

    // Finite-difference fallback against the Gaussian closed form.
    GaussianModel gaussian;
    Vector theta(2);
    theta << 0.4, -0.3;
    const double sigma = std::exp(theta(1));
    const double y = 1.7;
    const double u = (y - theta(0)) / sigma;
    Matrix expected(2, 2);
    expected << 1.0 / (sigma * sigma), 2.0 * u / sigma, 2.0 * u / sigma, 2.0 * u * u;
    const Matrix fd = gaussian.hessian(theta, scalar_sample(y));
    CHECK((fd - expected).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("quadratic models: Fisher equals the mean Hessian", "[models]") {
    LinearRegressionModel model(2, 1.0);
    Vector w(2);
    w << 0.5, 1.5;
    const Dataset data = make_linear_regression_dataset(w, 0.5, 200, 31);
    const Vector theta = Vector::Zero(2);

    Matrix mean_hessian = Matrix::Zero(2, 2);
    for (const Sample& s : data) mean_hessian += model.hessian(theta, s);
    mean_hessian /= static_cast<double>(data.size());

    Rng rng(32);
    const Matrix mc = mc_fisher(model, theta, data, 1000000, rng);
    CHECK((mc - mean_hessian).norm() / mean_hessian.norm() <= 0.01);
}

TEST_CASE("expected gradient is the dataset mean", "[models]") {
    LinearRegressionModel model(1, 1.0);
    Vector x(1);
    x << 1.0;
    Dataset single{xy_sample(x, 2.0)};
    const Vector g = expected_gradient(model, Vector::Zero(1), single);
    CHECK(g(0) == model.grad_log_loss(Vector::Zero(1), x, Vector::Constant(1, 2.0))(0));

    Dataset symmetric{xy_sample(x, 1.0), xy_sample(x, -1.0)};
    CHECK(expected_gradient(model, Vector::Zero(1), symmetric)(0) == Approx(0.0).margin(1e-15));

    GaussianModel gaussian;
    const Dataset data = make_gaussian_dataset(10.0, 1.0, 5000, 41);
    double y_mean = 0.0;
    for (const Sample& s : data) y_mean += s.y(0);
    y_mean /= static_cast<double>(data.size());
    const Vector eg = expected_gradient(gaussian, Vector::Zero(2), data);
    CHECK(eg(0) == Approx(-y_mean).epsilon(1e-12));
    CHECK(eg(0) == Approx(-10.0).margin(0.1));

    CHECK_THROWS_AS(expected_gradient(gaussian, Vector::Zero(2), Dataset{}), empty_dataset_error);
}

TEST_CASE("sufficient-statistic closures agree with the direct dataset mean", "[models]") {
    Rng rng(55);
    GaussianModel gaussian;
    {
        const Dataset data = make_gaussian_dataset(4.0, 2.0, 300, 51);
        auto fn = gaussian.expected_gradient_fn(data);
        for (int i = 0; i < 5; ++i) {
            const Vector theta = gaussian.random_valid_theta(rng);
            CHECK((fn(theta) - expected_gradient(gaussian, theta, data)).norm() <= 1e-10);
        }
    }
    LinearRegressionModel linreg(2, 1.3);
    {
        Vector w(2);
        w << -1.0, 0.5;
        const Dataset data = make_linear_regression_dataset(w, 0.4, 300, 52);
        auto fn = linreg.expected_gradient_fn(data);
        auto fisher = linreg.fisher_fn(data);
        for (int i = 0; i < 5; ++i) {
            const Vector theta = linreg.random_valid_theta(rng);
            CHECK((fn(theta) - expected_gradient(linreg, theta, data)).norm() <= 1e-10);
            CHECK((fisher(theta) - linreg.exact_fisher(theta, data)).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("Fisher consistency across built-in models", "[models]") {
    Rng rng(61);
    const Dataset gaussian_data = make_gaussian_dataset(1.0, 1.5, 500, 62);
    Vector w(2);
    w << 1.0, -0.5;
    const Dataset linreg_data = make_linear_regression_dataset(w, 0.5, 500, 63);
    SoftmaxRegressionModel softmax(3, 1);
    const Dataset softmax_data = [&] {
        Vector truth(2);
        truth << 1.0, -0.5;
        return make_softmax_dataset(softmax, truth, 500, 64);
    }();

    GaussianModel gaussian;
    LinearRegressionModel linreg(2, 1.0);

    auto check = [&](const Model& model, const Dataset& data) {
        for (int i = 0; i < 5; ++i) {
            const Vector theta = model.random_valid_theta(rng);
            const Matrix exact = model.exact_fisher(theta, data);
            const Matrix mc = mc_fisher(model, theta, data, 1000000, rng);
            CHECK((mc - exact).norm() / exact.norm() <= 0.02);
        }
    };
    check(gaussian, gaussian_data);
    check(linreg, linreg_data);
    check(softmax, softmax_data);
}

TEST_CASE("exact Fisher is symmetric positive semidefinite", "[models]") {
    Rng rng(71);
    GaussianModel gaussian;
    LinearRegressionModel linreg(2, 1.0);
    SoftmaxRegressionModel softmax(3, 2);
    const Dataset gdata = make_gaussian_dataset(0.0, 1.0, 100, 72);
    Vector w(2);
    w << 0.3, 0.9;
    const Dataset ldata = make_linear_regression_dataset(w, 0.5, 100, 73);
    const Dataset sdata = [&] {
        Vector truth(4);
        truth << 1.0, -0.5, 0.2, 0.7;
        return make_softmax_dataset(softmax, truth, 100, 74);
    }();

    auto check = [&](const Model& model, const Dataset& data) {
        for (int i = 0; i < 20; ++i) {
            const Vector theta = model.random_valid_theta(rng);
            const Matrix j = model.exact_fisher(theta, data);
            CHECK(is_symmetric(j, 1e-12));
            CHECK(smallest_eigenvalue(j) >= -1e-10);
        }
    };
    check(gaussian, gdata);
    check(linreg, ldata);
    check(softmax, sdata);
}

TEST_CASE("pseudo-sample law passes a Kolmogorov-Smirnov check", "[models]") {
    const std::size_t n = 100000;
    {
        GaussianModel model;
        Vector theta(2);
        theta << 0.8, -0.25;
        const double mu = theta(0), sigma = std::exp(theta(1));
        Rng rng(81);
        std::vector<double> draws(n);
        for (double& d : draws) d = model.sample_pseudo_output(theta, Vector(0), rng)(0);
        CHECK(ks_statistic(std::move(draws), [&](double y) { return normal_cdf((y - mu) / sigma); }) <=
              0.01);
    }
    {
        LinearRegressionModel model(2, 0.8);
        Vector theta(2), x(2);
        theta << 0.5, -1.0;
        x << 1.0, 0.5;
        const double mean = theta.dot(x), sigma = std::sqrt(0.8);
        Rng rng(82);
        std::vector<double> draws(n);
        for (double& d : draws) d = model.sample_pseudo_output(theta, x, rng)(0);
        CHECK(ks_statistic(std::move(draws),
                           [&](double y) { return normal_cdf((y - mean) / sigma); }) <= 0.01);
    }
    {
        SoftmaxRegressionModel model(3, 1);
        Vector theta(2), x(1);
        theta << 0.7, -0.4;
        x << 1.0;
        const Vector p = model.probabilities(theta, x);
        Rng rng(83);
        Vector counts = Vector::Zero(3);
        for (std::size_t i = 0; i < n; ++i) {
            counts(static_cast<int>(model.sample_pseudo_output(theta, x, rng)(0))) += 1.0;
        }
        CHECK(((counts / static_cast<double>(n)) - p).cwiseAbs().maxCoeff() <= 0.005);
    }
}

TEST_CASE("dataset generators are reproducible", "[models]") {
    const Dataset a = make_gaussian_dataset(10.0, 1.0, 100, 91);
    const Dataset b = make_gaussian_dataset(10.0, 1.0, 100, 91);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].y(0) == b[i].y(0));
    const Dataset c = make_gaussian_dataset(10.0, 1.0, 100, 92);
    CHECK(a[0].y(0) != c[0].y(0));
}

TEST_CASE("csv dataset ingestion", "[models]") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "tango_test_data.csv").string();
    {
        std::ofstream out(path);
        out << "x_1,x_2,y_1\n";
        out << "1.0,2.0,3.5\n";
        out << "-0.25,1e-3,0.125\n";
    }
    const Dataset data = load_dataset_csv(path);
    REQUIRE(data.size() == 2);
    CHECK(data[0].x(0) == 1.0);
    CHECK(data[0].x(1) == 2.0);
    CHECK(data[0].y(0) == 3.5);
    CHECK(data[1].x(1) == 1e-3);

    {
        std::ofstream out(path);
        out << "a,b\n1,2\n";
    }
    CHECK_THROWS_WITH(load_dataset_csv(path), Catch::Contains("header"));

    {
        std::ofstream out(path);
        out << "x_1,y_1\n";
        out << "1.0\n";
    }
    CHECK_THROWS_WITH(load_dataset_csv(path), Catch::Contains("columns"));

    {
        std::ofstream out(path);
        out << "x_1,y_1\n";
        out << "1.0,oops\n";
    }
    CHECK_THROWS(load_dataset_csv(path));
    std::filesystem::remove(path);
}
