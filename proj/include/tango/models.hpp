#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tango/common.hpp"
#include "tango/linalg.hpp"

namespace tango {

// One observation. x is empty for unsupervised models; y holds the output
// (for discrete outputs, the class index as a real).
struct Sample {
    Vector x;
    Vector y;
};

using Dataset = std::vector<Sample>;

inline const Sample& draw_sample(const Dataset& data, Rng& rng) {
    if (data.empty()) throw empty_dataset_error("cannot sample from an empty dataset");
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    return data[pick(rng)];
}

// ---------------------------------------------------------------------------
// Model interface: a parametric conditional density p_theta(y|x) exposed
// through its log-loss -ln p_theta(y|x), the loss gradient, pseudo-output
// sampling from the model's own predictive law, and Fisher/Hessian oracles.
//
// All operations are pure given (theta, sample, rng state); instances carry
// no mutable state and can be shared across threads.
// ---------------------------------------------------------------------------
class Model {
  public:
    virtual ~Model() = default;

    virtual int param_dim() const = 0;
    virtual std::string id() const = 0;

    // Throws invalid_parameter_error when theta lies outside the valid region.
    virtual void check_parameters(const Vector& theta) const {
        if (theta.size() != param_dim()) {
            throw invalid_parameter_error(id() + ": parameter vector has length " +
                                          std::to_string(theta.size()) + ", expected " +
                                          std::to_string(param_dim()));
        }
        if (!all_finite(theta)) {
            throw invalid_parameter_error(id() + ": parameter vector has non-finite components");
        }
    }

    virtual double log_loss(const Vector& theta, const Sample& s) const = 0;
    virtual Vector grad_log_loss(const Vector& theta, const Vector& x, const Vector& y) const = 0;
    virtual Vector sample_pseudo_output(const Vector& theta, const Vector& x, Rng& rng) const = 0;

    // Closed-form Fisher matrix averaged over the dataset inputs.
    virtual Matrix exact_fisher(const Vector& theta, const Dataset& data) const = 0;

    // Per-sample loss Hessian. Quadratic models override with the closed form;
    // everything else falls back to central differences on the gradient
    // (step 1e-5, symmetrized).
    virtual Matrix hessian(const Vector& theta, const Sample& s) const {
        check_parameters(theta);
        const int d = param_dim();
        const double h = 1e-5;
        Matrix result(d, d);
        Vector probe = theta;
        for (int j = 0; j < d; ++j) {
            probe(j) = theta(j) + h;
            const Vector plus = grad_log_loss(probe, s.x, s.y);
            probe(j) = theta(j) - h;
            const Vector minus = grad_log_loss(probe, s.x, s.y);
            probe(j) = theta(j);
            result.col(j) = (plus - minus) / (2.0 * h);
        }
        return 0.5 * (result + result.transpose());
    }

    // True when the per-sample loss is quadratic in theta with a Hessian that
    // does not depend on y.
    virtual bool is_quadratic() const { return false; }

    // Output-noise variance for quadratic output losses.
    virtual bool has_output_variance() const { return false; }
    virtual double output_variance() const {
        throw unsupported_model_error(id() + ": no output variance parameter");
    }
    virtual void set_output_variance(double) {
        throw unsupported_model_error(id() + ": no output variance parameter");
    }

    // A point drawn uniformly from a representative region of valid parameters.
    virtual Vector random_valid_theta(Rng& rng) const {
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        Vector theta(param_dim());
        for (int i = 0; i < theta.size(); ++i) theta(i) = u(rng);
        return theta;
    }

    // Dataset-mean gradient / Fisher as reusable closures. The defaults
    // recompute the mean on every call; models with sufficient statistics
    // override with O(1)-per-evaluation versions. The closures own copies of
    // the model and data.
    virtual std::function<Vector(const Vector&)> expected_gradient_fn(const Dataset& data) const;
    virtual std::function<Matrix(const Vector&)> fisher_fn(const Dataset& data) const;

    virtual std::unique_ptr<Model> clone() const = 0;
};

// Data gradient and pseudo-sample gradient, both evaluated at the same theta.
struct GradientPair {
    Vector g;
    Vector g_tilde;
};

inline GradientPair sample_gradient_pair(const Model& model, const Vector& theta, const Sample& s,
                                         Rng& pseudo_rng) {
    GradientPair pair;
    pair.g = model.grad_log_loss(theta, s.x, s.y);
    const Vector y_tilde = model.sample_pseudo_output(theta, s.x, pseudo_rng);
    pair.g_tilde = model.grad_log_loss(theta, s.x, y_tilde);
    return pair;
}

inline Vector expected_gradient(const Model& model, const Vector& theta, const Dataset& data) {
    if (data.empty()) throw empty_dataset_error(model.id() + ": expected gradient over an empty dataset");
    model.check_parameters(theta);
    Vector sum = Vector::Zero(model.param_dim());
    for (const Sample& s : data) sum += model.grad_log_loss(theta, s.x, s.y);
    return sum / static_cast<double>(data.size());
}

// Monte-Carlo Fisher estimate: empirical mean of g~ g~^T over n independent
// (x, y~) draws, x from the dataset and y~ from the model at theta.
inline Matrix mc_fisher(const Model& model, const Vector& theta, const Dataset& data,
                        std::size_t n_samples, Rng& rng) {
    if (n_samples < 1) throw error("mc_fisher requires n_samples >= 1");
    model.check_parameters(theta);
    const int d = model.param_dim();
    Matrix acc = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const Sample& s = draw_sample(data, rng);
        const Vector y_tilde = model.sample_pseudo_output(theta, s.x, rng);
        const Vector g = model.grad_log_loss(theta, s.x, y_tilde);
        acc.noalias() += g * g.transpose();
    }
    return acc / static_cast<double>(n_samples);
}

inline std::function<Vector(const Vector&)> Model::expected_gradient_fn(const Dataset& data) const {
    auto model = std::shared_ptr<Model>(clone());
    auto owned = std::make_shared<Dataset>(data);
    return [model, owned](const Vector& theta) { return expected_gradient(*model, theta, *owned); };
}

inline std::function<Matrix(const Vector&)> Model::fisher_fn(const Dataset& data) const {
    auto model = std::shared_ptr<Model>(clone());
    auto owned = std::make_shared<Dataset>(data);
    return [model, owned](const Vector& theta) { return model->exact_fisher(theta, *owned); };
}

// ---------------------------------------------------------------------------
// Gaussian location-scale model N(mu, sigma^2) parameterized by (mu, ln sigma).
// Unsupervised: samples carry an empty x.
// ---------------------------------------------------------------------------
class GaussianModel final : public Model {
  public:
    static constexpr double kLogSigmaBound = 20.0;

    int param_dim() const override { return 2; }
    std::string id() const override { return "gaussian"; }

    void check_parameters(const Vector& theta) const override {
        Model::check_parameters(theta);
        if (std::abs(theta(1)) > kLogSigmaBound) {
            throw invalid_parameter_error("gaussian: ln(sigma) = " + format_real(theta(1)) +
                                          " outside [-20, 20]");
        }
    }

    double log_loss(const Vector& theta, const Sample& s) const override {
        check_parameters(theta);
        const double mu = theta(0), log_sigma = theta(1);
        const double sigma = std::exp(log_sigma);
        const double u = (s.y(0) - mu) / sigma;
        return 0.5 * u * u + log_sigma + 0.5 * std::log(2.0 * M_PI);
    }

    Vector grad_log_loss(const Vector& theta, const Vector&, const Vector& y) const override {
        check_parameters(theta);
        const double mu = theta(0);
        const double sigma = std::exp(theta(1));
        const double u = (y(0) - mu) / sigma;
        Vector g(2);
        g(0) = -u / sigma;
        g(1) = 1.0 - u * u;
        return g;
    }

    Vector sample_pseudo_output(const Vector& theta, const Vector&, Rng& rng) const override {
        check_parameters(theta);
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector y(1);
        y(0) = theta(0) + std::exp(theta(1)) * normal(rng);
        return y;
    }

    Matrix exact_fisher(const Vector& theta, const Dataset&) const override {
        check_parameters(theta);
        const double sigma = std::exp(theta(1));
        Matrix j = Matrix::Zero(2, 2);
        j(0, 0) = 1.0 / (sigma * sigma);
        j(1, 1) = 2.0;
        return j;
    }

    Vector random_valid_theta(Rng& rng) const override {
        std::uniform_real_distribution<double> mu(-3.0, 3.0);
        std::uniform_real_distribution<double> log_sigma(-1.0, 1.0);
        Vector theta(2);
        theta(0) = mu(rng);
        theta(1) = log_sigma(rng);
        return theta;
    }

    std::function<Vector(const Vector&)> expected_gradient_fn(const Dataset& data) const override {
        if (data.empty()) throw empty_dataset_error("gaussian: expected gradient over an empty dataset");
        double y_mean = 0.0, y_sq_mean = 0.0;
        for (const Sample& s : data) {
            y_mean += s.y(0);
            y_sq_mean += s.y(0) * s.y(0);
        }
        y_mean /= static_cast<double>(data.size());
        y_sq_mean /= static_cast<double>(data.size());
        GaussianModel snapshot = *this;
        return [snapshot, y_mean, y_sq_mean](const Vector& theta) {
            snapshot.check_parameters(theta);
            const double mu = theta(0);
            const double var = std::exp(2.0 * theta(1));
            Vector g(2);
            g(0) = (mu - y_mean) / var;
            g(1) = 1.0 - (y_sq_mean - 2.0 * mu * y_mean + mu * mu) / var;
            return g;
        };
    }

    std::function<Matrix(const Vector&)> fisher_fn(const Dataset&) const override {
        GaussianModel snapshot = *this;
        return [snapshot](const Vector& theta) { return snapshot.exact_fisher(theta, Dataset{}); };
    }

    std::unique_ptr<Model> clone() const override { return std::make_unique<GaussianModel>(*this); }
};

// ---------------------------------------------------------------------------
// Linear regression with quadratic output loss |y - theta.x|^2 / (2 sigma^2).
// The Hessian x x^T / sigma^2 depends on neither theta nor y, so this is the
// quadratic model required by the averaged-SGD equivalence machinery.
// Pseudo-outputs follow N(theta.x, sigma^2).
// ---------------------------------------------------------------------------
class LinearRegressionModel final : public Model {
  public:
    explicit LinearRegressionModel(int input_dim, double sigma_sq = 1.0)
        : input_dim_(input_dim), sigma_sq_(sigma_sq) {
        if (input_dim < 1) throw config_error("linear_regression: input_dim must be >= 1");
        if (!(sigma_sq > 0.0)) throw config_error("linear_regression: sigma_sq must be positive");
    }

    int param_dim() const override { return input_dim_; }
    std::string id() const override { return "linear_regression"; }

    double log_loss(const Vector& theta, const Sample& s) const override {
        check_parameters(theta);
        const double r = s.y(0) - theta.dot(s.x);
        return 0.5 * r * r / sigma_sq_;
    }

    Vector grad_log_loss(const Vector& theta, const Vector& x, const Vector& y) const override {
        check_parameters(theta);
        const double r = y(0) - theta.dot(x);
        return (-r / sigma_sq_) * x;
    }

    Vector sample_pseudo_output(const Vector& theta, const Vector& x, Rng& rng) const override {
        check_parameters(theta);
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector y(1);
        y(0) = theta.dot(x) + std::sqrt(sigma_sq_) * normal(rng);
        return y;
    }

    Matrix exact_fisher(const Vector& theta, const Dataset& data) const override {
        check_parameters(theta);
        if (data.empty()) throw empty_dataset_error("linear_regression: Fisher needs dataset inputs");
        Matrix acc = Matrix::Zero(input_dim_, input_dim_);
        for (const Sample& s : data) acc.noalias() += s.x * s.x.transpose();
        return acc / (static_cast<double>(data.size()) * sigma_sq_);
    }

    Matrix hessian(const Vector& theta, const Sample& s) const override {
        check_parameters(theta);
        return (s.x * s.x.transpose()) / sigma_sq_;
    }

    bool is_quadratic() const override { return true; }

    bool has_output_variance() const override { return true; }
    double output_variance() const override { return sigma_sq_; }
    void set_output_variance(double sigma_sq) override {
        if (!(sigma_sq > 0.0)) throw invalid_parameter_error("linear_regression: sigma_sq must be positive");
        sigma_sq_ = sigma_sq;
    }

    std::function<Vector(const Vector&)> expected_gradient_fn(const Dataset& data) const override {
        if (data.empty()) throw empty_dataset_error("linear_regression: expected gradient over an empty dataset");
        Matrix sxx = Matrix::Zero(input_dim_, input_dim_);
        Vector sxy = Vector::Zero(input_dim_);
        for (const Sample& s : data) {
            sxx.noalias() += s.x * s.x.transpose();
            sxy.noalias() += s.y(0) * s.x;
        }
        sxx /= static_cast<double>(data.size());
        sxy /= static_cast<double>(data.size());
        const double sigma_sq = sigma_sq_;
        LinearRegressionModel snapshot = *this;
        return [snapshot, sxx, sxy, sigma_sq](const Vector& theta) {
            snapshot.check_parameters(theta);
            return Vector((sxx * theta - sxy) / sigma_sq);
        };
    }

    std::function<Matrix(const Vector&)> fisher_fn(const Dataset& data) const override {
        Matrix j = exact_fisher(Vector::Zero(input_dim_), data);
        return [j](const Vector&) { return j; };
    }

    std::unique_ptr<Model> clone() const override {
        return std::make_unique<LinearRegressionModel>(*this);
    }

  private:
    int input_dim_;
    double sigma_sq_;
};

// ---------------------------------------------------------------------------
// Multiclass softmax regression with the last class as reference (logit 0),
// so the Fisher matrix stays nondegenerate. Parameters are the (classes-1) x
// input_dim weight rows, flattened row-major. y holds the class index.
// ---------------------------------------------------------------------------
class SoftmaxRegressionModel final : public Model {
  public:
    SoftmaxRegressionModel(int classes, int input_dim) : classes_(classes), input_dim_(input_dim) {
        if (classes < 2) throw config_error("softmax: needs at least 2 classes");
        if (input_dim < 1) throw config_error("softmax: input_dim must be >= 1");
    }

    int classes() const { return classes_; }
    int input_dim() const { return input_dim_; }
    int param_dim() const override { return (classes_ - 1) * input_dim_; }
    std::string id() const override { return "softmax"; }

    double log_loss(const Vector& theta, const Sample& s) const override {
        check_parameters(theta);
        const Vector logp = log_probabilities(theta, s.x);
        return -logp(class_index(s.y));
    }

    Vector grad_log_loss(const Vector& theta, const Vector& x, const Vector& y) const override {
        check_parameters(theta);
        const Vector p = probabilities(theta, x);
        const int label = class_index(y);
        Vector g(param_dim());
        for (int c = 0; c + 1 < classes_; ++c) {
            const double coeff = p(c) - (label == c ? 1.0 : 0.0);
            g.segment(c * input_dim_, input_dim_) = coeff * x;
        }
        return g;
    }

    Vector sample_pseudo_output(const Vector& theta, const Vector& x, Rng& rng) const override {
        check_parameters(theta);
        const Vector p = probabilities(theta, x);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double target = u(rng);
        double cum = 0.0;
        int label = classes_ - 1;
        for (int c = 0; c < classes_; ++c) {
            cum += p(c);
            if (target <= cum) {
                label = c;
                break;
            }
        }
        Vector y(1);
        y(0) = static_cast<double>(label);
        return y;
    }

    Matrix exact_fisher(const Vector& theta, const Dataset& data) const override {
        check_parameters(theta);
        if (data.empty()) throw empty_dataset_error("softmax: Fisher needs dataset inputs");
        const int d = param_dim();
        const int km1 = classes_ - 1;
        Matrix acc = Matrix::Zero(d, d);
        for (const Sample& s : data) {
            const Vector p = probabilities(theta, s.x);
            const Matrix xxt = s.x * s.x.transpose();
            for (int a = 0; a < km1; ++a) {
                for (int b = 0; b < km1; ++b) {
                    const double coeff = (a == b ? p(a) : 0.0) - p(a) * p(b);
                    acc.block(a * input_dim_, b * input_dim_, input_dim_, input_dim_) += coeff * xxt;
                }
            }
        }
        return acc / static_cast<double>(data.size());
    }

    std::unique_ptr<Model> clone() const override {
        return std::make_unique<SoftmaxRegressionModel>(*this);
    }

    Vector probabilities(const Vector& theta, const Vector& x) const {
        return log_probabilities(theta, x).array().exp();
    }

  private:
    Vector log_probabilities(const Vector& theta, const Vector& x) const {
        Vector logits = Vector::Zero(classes_);
        for (int c = 0; c + 1 < classes_; ++c) {
            logits(c) = theta.segment(c * input_dim_, input_dim_).dot(x);
        }
        const double m = logits.maxCoeff();
        const double lse = m + std::log((logits.array() - m).exp().sum());
        return logits.array() - lse;
    }

    int class_index(const Vector& y) const {
        const int label = static_cast<int>(std::lround(y(0)));
        if (label < 0 || label >= classes_) {
            throw invalid_parameter_error("softmax: class index " + std::to_string(label) +
                                          " outside [0, " + std::to_string(classes_ - 1) + "]");
        }
        return label;
    }

    int classes_;
    int input_dim_;
};

// ---------------------------------------------------------------------------
// Dataset generators (i.i.d. draws from declared ground-truth laws) and CSV
// ingestion.
// ---------------------------------------------------------------------------

inline Dataset make_gaussian_dataset(double mean, double stddev, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(mean, stddev);
    Dataset data(n);
    for (Sample& s : data) {
        s.x = Vector(0);
        s.y = Vector(1);
        s.y(0) = normal(rng);
    }
    return data;
}

inline Dataset make_linear_regression_dataset(const Vector& true_weights, double noise_std,
                                              std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset data(n);
    for (Sample& s : data) {
        s.x = Vector(true_weights.size());
        for (int j = 0; j < s.x.size(); ++j) s.x(j) = normal(rng);
        s.y = Vector(1);
        s.y(0) = true_weights.dot(s.x) + noise_std * normal(rng);
    }
    return data;
}

inline Dataset make_softmax_dataset(const SoftmaxRegressionModel& truth, const Vector& true_theta,
                                    std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset data(n);
    for (Sample& s : data) {
        s.x = Vector(truth.input_dim());
        for (int j = 0; j < s.x.size(); ++j) s.x(j) = normal(rng);
        s.y = truth.sample_pseudo_output(true_theta, s.x, rng);
    }
    return data;
}

// CSV ingestion: one sample per row, header "x_1,..,x_p,y_1,..,y_q" required,
// '.' decimal separator. Only 1-D outputs are produced by the built-in
// models, but any q >= 1 parses.
inline Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open dataset file '" + path + "'");

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        return cells;
    };

    std::string line;
    if (!std::getline(in, line)) throw error("dataset file '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split(line);

    std::size_t n_x = 0;
    while (n_x < header.size() && header[n_x] == "x_" + std::to_string(n_x + 1)) ++n_x;
    std::size_t n_y = 0;
    while (n_x + n_y < header.size() && header[n_x + n_y] == "y_" + std::to_string(n_y + 1)) ++n_y;
    if (n_y == 0 || n_x + n_y != header.size()) {
        throw error("dataset file '" + path + "': header must be x_1..x_p,y_1..y_q, got '" + line + "'");
    }

    Dataset data;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line);
        if (cells.size() != n_x + n_y) {
            throw error("dataset file '" + path + "' row " + std::to_string(row) + ": expected " +
                        std::to_string(n_x + n_y) + " columns, got " + std::to_string(cells.size()));
        }
        Sample s;
        s.x = Vector(n_x);
        s.y = Vector(n_y);
        for (std::size_t j = 0; j < n_x; ++j) s.x(j) = parse_real(cells[j]);
        for (std::size_t j = 0; j < n_y; ++j) s.y(j) = parse_real(cells[n_x + j]);
        data.push_back(std::move(s));
    }
    if (data.empty()) throw error("dataset file '" + path + "' has a header but no rows");
    return data;
}

}  // namespace tango
