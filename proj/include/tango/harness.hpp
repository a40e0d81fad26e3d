#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tango/common.hpp"
#include "tango/models.hpp"
#include "tango/optimizers.hpp"
#include "tango/reference.hpp"
#include "tango/trajectory.hpp"
#include "tango/verification.hpp"

namespace tango {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config schema. A config is one JSON document with model, dataset,
// optimizer, horizon, recording cadence, seed and output path; parsing and
// serialization round-trip losslessly.
// ---------------------------------------------------------------------------

struct ModelSpec {
    std::string id = "gaussian";  // gaussian | linear_regression | softmax
    int input_dim = 2;            // linear_regression / softmax
    int classes = 3;              // softmax
    double sigma_sq = 1.0;        // linear_regression
    Vector theta0;                // defaults to zeros(param_dim)

    // Equality over the fields that are meaningful for this model id (the
    // same set the serialization emits).
    bool operator==(const ModelSpec& o) const {
        if (id != o.id) return false;
        if (theta0.size() != o.theta0.size() || theta0 != o.theta0) return false;
        if (id == "linear_regression") return input_dim == o.input_dim && sigma_sq == o.sigma_sq;
        if (id == "softmax") return input_dim == o.input_dim && classes == o.classes;
        return true;
    }
};

struct DatasetSpec {
    enum class Kind { generator, csv };
    Kind kind = Kind::generator;
    std::string generator = "gaussian";  // gaussian | linear_regression | softmax
    std::size_t size = 1000;
    std::uint64_t seed = 1;
    double mean = 10.0;     // gaussian generator
    double stddev = 1.0;    // gaussian generator
    Vector weights;         // linear_regression generator
    double noise_std = 0.5; // linear_regression generator
    Vector true_theta;      // softmax generator (flattened rows of input_dim)
    int softmax_input_dim = 1;
    std::string csv_path;

    bool operator==(const DatasetSpec& o) const {
        if (kind != o.kind) return false;
        if (kind == Kind::csv) return csv_path == o.csv_path;
        if (generator != o.generator || size != o.size || seed != o.seed) return false;
        if (generator == "gaussian") return mean == o.mean && stddev == o.stddev;
        if (generator == "linear_regression") {
            return weights.size() == o.weights.size() && weights == o.weights &&
                   noise_std == o.noise_std;
        }
        return true_theta.size() == o.true_theta.size() && true_theta == o.true_theta &&
               softmax_input_dim == o.softmax_input_dim;
    }
};

struct PreconditionerSpec {
    std::string kind = "identity";  // identity | fixed_matrix | rmsprop_diag | inv_diag_fisher
    Matrix matrix;
    double rho = 0.99;

    bool operator==(const PreconditionerSpec& o) const {
        return kind == o.kind && rho == o.rho && matrix.rows() == o.matrix.rows() &&
               matrix.cols() == o.matrix.cols() && matrix == o.matrix;
    }
};

struct OptimizerSpec {
    std::string id = "tango";
    GammaPolicy gamma = GammaPolicy::fixed_value(1e-2);
    TangoVariant variant = TangoVariant::sampled;
    StepSchedule schedule = StepSchedule::constant_rate(1e-4);
    double learning_rate = 1e-3;
    std::size_t batch_size = 1;
    PreconditionerSpec preconditioner;
    AveragedNoise noise = AveragedNoise::none;
    FisherSource fisher;
    bool adaptive_sigma_sq = false;
    bool frozen = false;
    std::size_t frozen_steps = 0;

    bool operator==(const OptimizerSpec& o) const {
        if (id != o.id) return false;
        if (schedule.kind != o.schedule.kind || schedule.delta_t != o.schedule.delta_t ||
            schedule.values != o.schedule.values) {
            return false;
        }
        if (adaptive_sigma_sq != o.adaptive_sigma_sq || frozen != o.frozen ||
            frozen_steps != o.frozen_steps) {
            return false;
        }
        const bool is_tango = id == "tango" || id == "tango_minibatch" || id == "tango_preconditioned";
        if ((is_tango || id == "averaged_sgd") &&
            (gamma.kind != o.gamma.kind || gamma.value != o.gamma.value ||
             gamma.kurtosis_bound != o.gamma.kurtosis_bound)) {
            return false;
        }
        if (is_tango && variant != o.variant) return false;
        if (id == "sgd") return learning_rate == o.learning_rate;
        if (id == "tango_minibatch") return batch_size == o.batch_size;
        if (id == "tango_preconditioned") return preconditioner == o.preconditioner;
        if (id == "averaged_sgd") return noise == o.noise;
        if (id == "natural_gradient") {
            return fisher.kind == o.fisher.kind &&
                   (fisher.kind != FisherSource::Kind::monte_carlo ||
                    fisher.n_samples == o.fisher.n_samples);
        }
        return true;
    }
};

struct ExperimentConfig {
    ModelSpec model;
    DatasetSpec dataset;
    OptimizerSpec optimizer;
    double total_time = 1.0;
    std::size_t record_every = 100;
    std::uint64_t seed = 424242;
    std::string output = "run_out/run";

    bool operator==(const ExperimentConfig& o) const {
        return model == o.model && dataset == o.dataset && optimizer == o.optimizer &&
               total_time == o.total_time && record_every == o.record_every && seed == o.seed &&
               output == o.output;
    }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization with field-level error messages.
// ---------------------------------------------------------------------------
namespace detail {

inline const Json& require_field(const Json& j, const std::string& path, const std::string& name) {
    if (!j.contains(name)) throw config_error("config field '" + path + name + "' is missing");
    return j.at(name);
}

inline Vector vector_from_json(const Json& j, const std::string& path) {
    if (!j.is_array()) throw config_error("config field '" + path + "' must be an array of reals");
    Vector v(static_cast<int>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw config_error("config field '" + path + "' must hold numbers");
        v(static_cast<int>(i)) = j[i].get<double>();
    }
    return v;
}

inline Json vector_to_json(const Vector& v) {
    Json j = Json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
    return j;
}

inline Matrix matrix_from_json(const Json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw config_error("config field '" + path + "' must be a matrix");
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j[0].size());
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(j[r].size()) != cols) {
            throw config_error("config field '" + path + "' has ragged rows");
        }
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

inline Json matrix_to_json(const Matrix& m) {
    Json j = Json::array();
    for (int r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

}  // namespace detail

inline GammaPolicy gamma_policy_from_json(const Json& j, const std::string& path) {
    if (j.is_number()) {
        const double value = j.get<double>();
        if (!(value > 0.0)) throw config_error("config field '" + path + "' must be a positive rate");
        return GammaPolicy::fixed_value(value);
    }
    if (!j.is_object()) {
        throw config_error("config field '" + path + "' must be a number or a policy object");
    }
    const std::string kind = detail::require_field(j, path + ".", "policy").get<std::string>();
    if (kind == "fixed") {
        return GammaPolicy::fixed_value(detail::require_field(j, path + ".", "value").get<double>());
    }
    if (kind == "max_norm") return GammaPolicy::max_norm();
    if (kind == "gaussian_kurtosis") {
        return GammaPolicy::gaussian_kurtosis(j.value("kurtosis_bound", 3.0));
    }
    if (kind == "moment_ratio") return GammaPolicy::moment_ratio();
    throw config_error("config field '" + path + ".policy' has unknown value '" + kind + "'");
}

inline Json gamma_policy_to_json(const GammaPolicy& p) {
    switch (p.kind) {
        case GammaPolicy::Kind::fixed:
            return Json(p.value);
        case GammaPolicy::Kind::max_norm:
            return Json{{"policy", "max_norm"}};
        case GammaPolicy::Kind::gaussian_kurtosis:
            return Json{{"policy", "gaussian_kurtosis"}, {"kurtosis_bound", p.kurtosis_bound}};
        case GammaPolicy::Kind::moment_ratio:
            return Json{{"policy", "moment_ratio"}};
    }
    throw error("unknown gamma policy kind");
}

inline StepSchedule schedule_from_json(const Json& j, const std::string& path) {
    const std::string kind = detail::require_field(j, path + ".", "kind").get<std::string>();
    if (kind == "constant") {
        StepSchedule s =
            StepSchedule::constant_rate(detail::require_field(j, path + ".", "delta_t").get<double>());
        s.validate();
        return s;
    }
    if (kind == "sequence") {
        const Json& values = detail::require_field(j, path + ".", "values");
        std::vector<double> seq;
        for (const auto& v : values) seq.push_back(v.get<double>());
        StepSchedule s = StepSchedule::from_sequence(std::move(seq));
        s.validate();
        return s;
    }
    throw config_error("config field '" + path + ".kind' has unknown value '" + kind + "'");
}

inline Json schedule_to_json(const StepSchedule& s) {
    if (s.kind == StepSchedule::Kind::constant) {
        return Json{{"kind", "constant"}, {"delta_t", s.delta_t}};
    }
    Json values = Json::array();
    for (double v : s.values) values.push_back(v);
    return Json{{"kind", "sequence"}, {"values", values}};
}

inline ModelSpec model_spec_from_json(const Json& j) {
    ModelSpec spec;
    spec.id = detail::require_field(j, "model.", "id").get<std::string>();
    if (spec.id == "linear_regression") {
        spec.input_dim = detail::require_field(j, "model.", "input_dim").get<int>();
        spec.sigma_sq = j.value("sigma_sq", 1.0);
    } else if (spec.id == "softmax") {
        spec.input_dim = detail::require_field(j, "model.", "input_dim").get<int>();
        spec.classes = detail::require_field(j, "model.", "classes").get<int>();
    } else if (spec.id != "gaussian") {
        throw config_error("config field 'model.id' has unknown value '" + spec.id + "'");
    }
    if (j.contains("theta0")) spec.theta0 = detail::vector_from_json(j.at("theta0"), "model.theta0");
    return spec;
}

inline Json model_spec_to_json(const ModelSpec& spec) {
    Json j;
    j["id"] = spec.id;
    if (spec.id == "linear_regression") {
        j["input_dim"] = spec.input_dim;
        j["sigma_sq"] = spec.sigma_sq;
    } else if (spec.id == "softmax") {
        j["input_dim"] = spec.input_dim;
        j["classes"] = spec.classes;
    }
    if (spec.theta0.size() > 0) j["theta0"] = detail::vector_to_json(spec.theta0);
    return j;
}

inline DatasetSpec dataset_spec_from_json(const Json& j) {
    DatasetSpec spec;
    if (j.contains("csv")) {
        spec.kind = DatasetSpec::Kind::csv;
        spec.csv_path = j.at("csv").get<std::string>();
        return spec;
    }
    spec.kind = DatasetSpec::Kind::generator;
    spec.generator = detail::require_field(j, "dataset.", "generator").get<std::string>();
    spec.size = detail::require_field(j, "dataset.", "size").get<std::size_t>();
    spec.seed = detail::require_field(j, "dataset.", "seed").get<std::uint64_t>();
    if (spec.generator == "gaussian") {
        spec.mean = detail::require_field(j, "dataset.", "mean").get<double>();
        spec.stddev = detail::require_field(j, "dataset.", "stddev").get<double>();
    } else if (spec.generator == "linear_regression") {
        spec.weights = detail::vector_from_json(detail::require_field(j, "dataset.", "weights"),
                                                "dataset.weights");
        spec.noise_std = j.value("noise_std", 0.5);
    } else if (spec.generator == "softmax") {
        spec.true_theta = detail::vector_from_json(detail::require_field(j, "dataset.", "true_theta"),
                                                   "dataset.true_theta");
        spec.softmax_input_dim = j.value("input_dim", 1);
    } else {
        throw config_error("config field 'dataset.generator' has unknown value '" + spec.generator + "'");
    }
    return spec;
}

inline Json dataset_spec_to_json(const DatasetSpec& spec) {
    Json j;
    if (spec.kind == DatasetSpec::Kind::csv) {
        j["csv"] = spec.csv_path;
        return j;
    }
    j["generator"] = spec.generator;
    j["size"] = spec.size;
    j["seed"] = spec.seed;
    if (spec.generator == "gaussian") {
        j["mean"] = spec.mean;
        j["stddev"] = spec.stddev;
    } else if (spec.generator == "linear_regression") {
        j["weights"] = detail::vector_to_json(spec.weights);
        j["noise_std"] = spec.noise_std;
    } else if (spec.generator == "softmax") {
        j["true_theta"] = detail::vector_to_json(spec.true_theta);
        j["input_dim"] = spec.softmax_input_dim;
    }
    return j;
}

inline OptimizerSpec optimizer_spec_from_json(const Json& j) {
    OptimizerSpec spec;
    spec.id = detail::require_field(j, "optimizer.", "id").get<std::string>();
    const bool is_tango = spec.id == "tango" || spec.id == "tango_minibatch" ||
                          spec.id == "tango_preconditioned";
    if (is_tango || spec.id == "averaged_sgd") {
        spec.gamma = gamma_policy_from_json(detail::require_field(j, "optimizer.", "gamma"),
                                            "optimizer.gamma");
    }
    if (j.contains("schedule")) {
        spec.schedule = schedule_from_json(j.at("schedule"), "optimizer.schedule");
    }
    if (j.contains("variant")) {
        const std::string v = j.at("variant").get<std::string>();
        if (v == "sampled") {
            spec.variant = TangoVariant::sampled;
        } else if (v == "outer_product") {
            spec.variant = TangoVariant::outer_product;
        } else {
            throw config_error("config field 'optimizer.variant' has unknown value '" + v + "'");
        }
    }
    if (spec.id == "sgd") {
        spec.learning_rate = detail::require_field(j, "optimizer.", "learning_rate").get<double>();
    } else if (spec.id == "tango_minibatch") {
        spec.batch_size = detail::require_field(j, "optimizer.", "batch_size").get<std::size_t>();
    } else if (spec.id == "tango_preconditioned") {
        const Json& p = detail::require_field(j, "optimizer.", "preconditioner");
        spec.preconditioner.kind = detail::require_field(p, "optimizer.preconditioner.", "kind")
                                       .get<std::string>();
        if (spec.preconditioner.kind == "fixed_matrix") {
            spec.preconditioner.matrix = detail::matrix_from_json(
                detail::require_field(p, "optimizer.preconditioner.", "matrix"),
                "optimizer.preconditioner.matrix");
        }
        if (p.contains("rho")) spec.preconditioner.rho = p.at("rho").get<double>();
    } else if (spec.id == "averaged_sgd") {
        const std::string noise = j.value("noise", "none");
        if (noise == "none") {
            spec.noise = AveragedNoise::none;
        } else if (noise == "prop2") {
            spec.noise = AveragedNoise::prop2;
        } else {
            throw config_error("config field 'optimizer.noise' has unknown value '" + noise + "'");
        }
    } else if (spec.id == "natural_gradient") {
        const Json& f = detail::require_field(j, "optimizer.", "fisher");
        const std::string source = detail::require_field(f, "optimizer.fisher.", "source")
                                       .get<std::string>();
        if (source == "exact") {
            spec.fisher = FisherSource::exact();
        } else if (source == "monte_carlo") {
            spec.fisher = FisherSource::monte_carlo(
                detail::require_field(f, "optimizer.fisher.", "n_samples").get<std::size_t>());
        } else {
            throw config_error("config field 'optimizer.fisher.source' has unknown value '" + source + "'");
        }
    } else if (!is_tango) {
        throw config_error("config field 'optimizer.id' has unknown value '" + spec.id + "'");
    }
    spec.adaptive_sigma_sq = j.value("adaptive_sigma_sq", false);
    spec.frozen = j.value("frozen", false);
    spec.frozen_steps = j.value("frozen_steps", std::size_t{0});
    return spec;
}

inline Json optimizer_spec_to_json(const OptimizerSpec& spec) {
    Json j;
    j["id"] = spec.id;
    const bool is_tango = spec.id == "tango" || spec.id == "tango_minibatch" ||
                          spec.id == "tango_preconditioned";
    if (is_tango || spec.id == "averaged_sgd") j["gamma"] = gamma_policy_to_json(spec.gamma);
    j["schedule"] = schedule_to_json(spec.schedule);
    if (is_tango) {
        j["variant"] = spec.variant == TangoVariant::sampled ? "sampled" : "outer_product";
    }
    if (spec.id == "sgd") j["learning_rate"] = spec.learning_rate;
    if (spec.id == "tango_minibatch") j["batch_size"] = spec.batch_size;
    if (spec.id == "tango_preconditioned") {
        Json p;
        p["kind"] = spec.preconditioner.kind;
        if (spec.preconditioner.kind == "fixed_matrix") {
            p["matrix"] = detail::matrix_to_json(spec.preconditioner.matrix);
        }
        p["rho"] = spec.preconditioner.rho;
        j["preconditioner"] = p;
    }
    if (spec.id == "averaged_sgd") {
        j["noise"] = spec.noise == AveragedNoise::none ? "none" : "prop2";
    }
    if (spec.id == "natural_gradient") {
        Json f;
        f["source"] = spec.fisher.kind == FisherSource::Kind::exact ? "exact" : "monte_carlo";
        if (spec.fisher.kind == FisherSource::Kind::monte_carlo) f["n_samples"] = spec.fisher.n_samples;
        j["fisher"] = f;
    }
    if (spec.adaptive_sigma_sq) j["adaptive_sigma_sq"] = true;
    if (spec.frozen) {
        j["frozen"] = true;
        j["frozen_steps"] = spec.frozen_steps;
    }
    return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig config;
    config.model = model_spec_from_json(detail::require_field(j, "", "model"));
    config.dataset = dataset_spec_from_json(detail::require_field(j, "", "dataset"));
    config.optimizer = optimizer_spec_from_json(detail::require_field(j, "", "optimizer"));
    config.total_time = detail::require_field(j, "", "T").get<double>();
    config.record_every = detail::require_field(j, "", "record_every").get<std::size_t>();
    config.seed = detail::require_field(j, "", "seed").get<std::uint64_t>();
    config.output = detail::require_field(j, "", "output").get<std::string>();
    return config;
}

inline Json config_to_json(const ExperimentConfig& config) {
    Json j;
    j["model"] = model_spec_to_json(config.model);
    j["dataset"] = dataset_spec_to_json(config.dataset);
    j["optimizer"] = optimizer_spec_to_json(config.optimizer);
    j["T"] = config.total_time;
    j["record_every"] = config.record_every;
    j["seed"] = config.seed;
    j["output"] = config.output;
    return j;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const std::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

// ---------------------------------------------------------------------------
// Registry: instantiate models, datasets and optimizer configs from specs,
// plus the named built-in experiment configs.
// ---------------------------------------------------------------------------

inline std::unique_ptr<Model> make_model(const ModelSpec& spec) {
    if (spec.id == "gaussian") return std::make_unique<GaussianModel>();
    if (spec.id == "linear_regression") {
        return std::make_unique<LinearRegressionModel>(spec.input_dim, spec.sigma_sq);
    }
    if (spec.id == "softmax") {
        return std::make_unique<SoftmaxRegressionModel>(spec.classes, spec.input_dim);
    }
    throw config_error("config field 'model.id' has unknown value '" + spec.id + "'");
}

inline Vector initial_theta(const ModelSpec& spec, const Model& model) {
    if (spec.theta0.size() == 0) return Vector::Zero(model.param_dim());
    if (spec.theta0.size() != model.param_dim()) {
        throw config_error("config field 'model.theta0' has length " +
                           std::to_string(spec.theta0.size()) + ", expected " +
                           std::to_string(model.param_dim()));
    }
    return spec.theta0;
}

inline Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.kind == DatasetSpec::Kind::csv) return load_dataset_csv(spec.csv_path);
    if (spec.generator == "gaussian") {
        return make_gaussian_dataset(spec.mean, spec.stddev, spec.size, spec.seed);
    }
    if (spec.generator == "linear_regression") {
        if (spec.weights.size() == 0) throw config_error("config field 'dataset.weights' is missing");
        return make_linear_regression_dataset(spec.weights, spec.noise_std, spec.size, spec.seed);
    }
    if (spec.generator == "softmax") {
        if (spec.true_theta.size() == 0) throw config_error("config field 'dataset.true_theta' is missing");
        const int input_dim = spec.softmax_input_dim;
        if (input_dim < 1 || spec.true_theta.size() % input_dim != 0) {
            throw config_error("config field 'dataset.true_theta' length must be a multiple of "
                               "'dataset.input_dim'");
        }
        const int classes = static_cast<int>(spec.true_theta.size()) / input_dim + 1;
        SoftmaxRegressionModel truth(classes, input_dim);
        return make_softmax_dataset(truth, spec.true_theta, spec.size, spec.seed);
    }
    throw config_error("config field 'dataset.generator' has unknown value '" + spec.generator + "'");
}

inline Preconditioner make_preconditioner(const PreconditionerSpec& spec) {
    if (spec.kind == "identity") return Preconditioner::identity();
    if (spec.kind == "fixed_matrix") return Preconditioner::fixed(spec.matrix);
    if (spec.kind == "rmsprop_diag") return Preconditioner::rmsprop(spec.rho);
    if (spec.kind == "inv_diag_fisher") return Preconditioner::inverse_diagonal_fisher();
    throw config_error("config field 'optimizer.preconditioner.kind' has unknown value '" +
                       spec.kind + "'");
}

inline OptimizerConfig make_optimizer(const OptimizerSpec& spec) {
    OptimizerConfig opt;
    if (spec.id == "tango") {
        opt.kind = OptimizerKind::tango;
    } else if (spec.id == "tango_minibatch") {
        opt.kind = OptimizerKind::tango_minibatch;
        if (spec.batch_size < 1) throw config_error("config field 'optimizer.batch_size' must be >= 1");
        opt.minibatch_size = spec.batch_size;
    } else if (spec.id == "tango_preconditioned") {
        opt.kind = OptimizerKind::tango_preconditioned;
        opt.preconditioner = make_preconditioner(spec.preconditioner);
    } else if (spec.id == "sgd") {
        opt.kind = OptimizerKind::sgd;
        opt.learning_rate = spec.learning_rate;
    } else if (spec.id == "averaged_sgd") {
        opt.kind = OptimizerKind::averaged_sgd;
        opt.averaged_noise = spec.noise;
    } else if (spec.id == "natural_gradient") {
        opt.kind = OptimizerKind::natural_gradient;
        opt.fisher_source = spec.fisher;
    } else {
        throw config_error("config field 'optimizer.id' has unknown value '" + spec.id + "'");
    }
    opt.variant = spec.variant;
    opt.gamma = spec.gamma;
    opt.adaptive_output_variance = spec.adaptive_sigma_sq;
    opt.freeze_theta = spec.frozen;
    opt.frozen_steps = spec.frozen_steps;
    return opt;
}

// Shared Figure-1 style setup: Gaussian model started at (mu, ln sigma) =
// (0, 0) against data drawn from N(10, 1).
inline DatasetSpec fig1_dataset_spec() {
    DatasetSpec d;
    d.kind = DatasetSpec::Kind::generator;
    d.generator = "gaussian";
    d.size = 10000;
    d.seed = 101;
    d.mean = 10.0;
    d.stddev = 1.0;
    return d;
}

// Built-in named configs. The tango config runs long enough (T = 4) for the
// endpoint to reach the data mean; the comparison plot itself uses T = 2.
inline std::map<std::string, ExperimentConfig> builtin_configs() {
    std::map<std::string, ExperimentConfig> configs;

    ExperimentConfig tango;
    tango.model.id = "gaussian";
    tango.dataset = fig1_dataset_spec();
    tango.optimizer.id = "tango";
    tango.optimizer.gamma = GammaPolicy::fixed_value(1e-2);
    tango.optimizer.schedule = StepSchedule::constant_rate(1e-4);
    tango.total_time = 4.0;
    tango.record_every = 100;
    tango.seed = 1001;
    tango.output = "run_out/fig1_tango";
    configs["fig1-tango"] = tango;

    ExperimentConfig avg = tango;
    avg.optimizer.id = "averaged_sgd";
    avg.optimizer.noise = AveragedNoise::none;
    avg.output = "run_out/fig1_avgsgd";
    configs["fig1-avgsgd"] = avg;

    ExperimentConfig sgd = tango;
    sgd.optimizer = OptimizerSpec{};
    sgd.optimizer.id = "sgd";
    sgd.optimizer.learning_rate = 1e-3;
    sgd.optimizer.schedule = StepSchedule::constant_rate(1.0);
    sgd.total_time = 20000.0;  // one unit of t per step
    sgd.record_every = 100;
    sgd.seed = 1001;
    sgd.output = "run_out/fig1_sgd";
    configs["fig1-sgd"] = sgd;

    return configs;
}

// Accepts a config file path or a built-in config name.
inline ExperimentConfig resolve_config(const std::string& path_or_name) {
    if (std::filesystem::exists(path_or_name)) return load_config_file(path_or_name);
    const auto configs = builtin_configs();
    const auto it = configs.find(path_or_name);
    if (it != configs.end()) return it->second;
    throw config_error("'" + path_or_name + "' is neither a config file nor a built-in config name");
}

inline std::uint64_t apply_seed_override(std::uint64_t seed) {
    if (const char* env = std::getenv("TANGO_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw config_error("TANGO_SEED must be an unsigned integer, got '" + std::string(env) + "'");
        }
    }
    return seed;
}

// ---------------------------------------------------------------------------
// run subcommand: execute one config, emit trajectory CSV + summary JSON.
// ---------------------------------------------------------------------------
struct RunSummary {
    Vector final_theta;
    double final_loss = 0.0;
    std::size_t steps = 0;
    double wall_seconds = 0.0;
    std::string csv_path;
    std::string summary_path;
};

inline void ensure_parent_dir(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline RunSummary execute_run(const ExperimentConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    const std::unique_ptr<Model> model = make_model(config.model);
    const Dataset data = make_dataset(config.dataset);
    const Vector theta0 = initial_theta(config.model, *model);
    const OptimizerConfig opt = make_optimizer(config.optimizer);
    const std::uint64_t seed = apply_seed_override(config.seed);

    const TrajectoryRecord record = run(opt, *model, data, theta0, config.optimizer.schedule,
                                        config.total_time, seed, config.record_every);

    RunSummary summary;
    summary.final_theta = record.rows.back().theta;
    summary.final_loss = record.rows.back().loss;
    summary.steps = record.rows.back().step;
    summary.csv_path = config.output + ".csv";
    summary.summary_path = config.output + "_summary.json";
    ensure_parent_dir(summary.csv_path);
    record.write_csv(summary.csv_path);

    summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    Json j;
    j["final_theta"] = detail::vector_to_json(summary.final_theta);
    j["final_loss"] = summary.final_loss;
    j["steps"] = summary.steps;
    j["wall_seconds"] = summary.wall_seconds;
    j["T"] = config.total_time;
    j["seed"] = seed;
    j["config"] = config_to_json(config);
    std::ofstream out(summary.summary_path, std::ios::binary);
    if (!out) throw error("cannot open '" + summary.summary_path + "' for writing");
    out << j.dump(2) << '\n';
    return summary;
}

}  // namespace tango
