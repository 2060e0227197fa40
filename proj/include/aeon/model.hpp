#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aeon/autodiff.hpp"
#include "aeon/errors.hpp"

namespace aeon {

struct ModelConfig {
    int input_dim = 16;
    int num_classes = 8;
    std::vector<int> hidden = {64, 64};
    int feature_dim = 32;
    int projection_hidden = 128;
    int projection_dim = 128;
    double leaky_slope = 0.01;
    std::uint64_t seed = 0;

    void validate() const {
        auto positive = [](int v, const char* what) {
            if (v < 1) throw ConfigError(std::string("model: ") + what + " must be >= 1");
        };
        positive(input_dim, "input_dim");
        positive(num_classes, "num_classes");
        positive(feature_dim, "feature_dim");
        positive(projection_hidden, "projection_hidden");
        positive(projection_dim, "projection_dim");
        for (int h : hidden) positive(h, "hidden width");
        if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("model: leaky_slope must be in [0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"input_dim", c.input_dim},
                       {"num_classes", c.num_classes},
                       {"hidden", c.hidden},
                       {"feature_dim", c.feature_dim},
                       {"projection_hidden", c.projection_hidden},
                       {"projection_dim", c.projection_dim},
                       {"leaky_slope", c.leaky_slope},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.input_dim = j.value("input_dim", d.input_dim);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.hidden = j.value("hidden", d.hidden);
    c.feature_dim = j.value("feature_dim", d.feature_dim);
    c.projection_hidden = j.value("projection_hidden", d.projection_hidden);
    c.projection_dim = j.value("projection_dim", d.projection_dim);
    c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
    c.seed = j.value("seed", d.seed);
}

/// Affine layer y = x W + b with x as a row (batch rows).
struct Dense {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
};

/// MLP encoder, linear classifier and two-layer projection head.
///
/// Layer order in `layers`: encoder layers (hidden..., feature), classifier,
/// projection hidden, projection output. The encoder applies the leaky
/// rectifier after every layer including the feature layer.
struct AeonModel {
    ModelConfig config;
    std::vector<Dense> layers;

    std::size_t encoder_layers() const { return config.hidden.size() + 1; }
    std::size_t classifier_index() const { return encoder_layers(); }
    std::size_t projection_index() const { return encoder_layers() + 1; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Dense& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    /// Flat parameter vector, layer by layer, weight (column-major) then bias.
    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(static_cast<Index>(parameter_count()));
        Index k = 0;
        for (const Dense& l : layers) {
            v.segment(k, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
            k += l.weight.size();
            v.segment(k, l.bias.size()) = Eigen::Map<const Eigen::VectorXd>(l.bias.data(), l.bias.size());
            k += l.bias.size();
        }
        return v;
    }

    void unflatten(const Eigen::VectorXd& v) {
        if (v.size() != static_cast<Index>(parameter_count())) {
            throw StructuralError("model: flat parameter vector has wrong length");
        }
        Index k = 0;
        for (Dense& l : layers) {
            Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = v.segment(k, l.weight.size());
            k += l.weight.size();
            Eigen::Map<Eigen::VectorXd>(l.bias.data(), l.bias.size()) = v.segment(k, l.bias.size());
            k += l.bias.size();
        }
    }
};

/// Uniform bound sqrt(6 / (fan_in + fan_out)).
inline double init_bound(int fan_in, int fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// Scaled-uniform weights, zero biases. Deterministic in `seed`.
inline AeonModel init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    AeonModel m;
    m.config = config;
    m.config.seed = seed;
    std::mt19937_64 rng(seed);

    std::vector<std::pair<int, int>> shapes;
    int in = config.input_dim;
    for (int h : config.hidden) {
        shapes.emplace_back(in, h);
        in = h;
    }
    shapes.emplace_back(in, config.feature_dim);
    shapes.emplace_back(config.feature_dim, config.num_classes);
    shapes.emplace_back(config.feature_dim, config.projection_hidden);
    shapes.emplace_back(config.projection_hidden, config.projection_dim);

    for (auto [fan_in, fan_out] : shapes) {
        const double bound = init_bound(fan_in, fan_out);
        std::uniform_real_distribution<double> u(-bound, bound);
        Dense l;
        l.weight.resize(fan_in, fan_out);
        for (Index c = 0; c < l.weight.cols(); ++c)
            for (Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
        l.bias = Matrix::Zero(1, fan_out);
        m.layers.push_back(std::move(l));
    }
    return m;
}

/// Model parameters registered on a tape, parallel to AeonModel::layers.
struct BoundModel {
    const AeonModel* model = nullptr;
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

/// Registers every parameter as a leaf (trainable) or constant.
inline BoundModel bind(ad::Tape& tape, const AeonModel& model, bool trainable) {
    BoundModel b;
    b.model = &model;
    for (const Dense& l : model.layers) {
        b.weights.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
        b.biases.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
    }
    return b;
}

inline ad::Var affine(const BoundModel& b, std::size_t layer, const ad::Var& x) {
    return ad::add(ad::matmul(x, b.weights[layer]), b.biases[layer]);
}

/// Encoder features for a batch (rows = samples).
inline ad::Var encode(const BoundModel& b, const ad::Var& x) {
    const AeonModel& m = *b.model;
    if (x.cols() != m.config.input_dim) {
        throw StructuralError("model: input has " + std::to_string(x.cols()) + " features, expected " +
                              std::to_string(m.config.input_dim));
    }
    ad::Var h = x;
    for (std::size_t k = 0; k < m.encoder_layers(); ++k) {
        h = ad::leaky_relu(affine(b, k, h), m.config.leaky_slope);
    }
    return h;
}

inline ad::Var classify(const BoundModel& b, const ad::Var& features) {
    return affine(b, b.model->classifier_index(), features);
}

/// Unit-norm projection of encoder features; eps guards zero vectors.
inline ad::Var project(const BoundModel& b, const ad::Var& features, double eps = 1e-12) {
    const std::size_t p = b.model->projection_index();
    ad::Var h = ad::leaky_relu(affine(b, p, features), b.model->config.leaky_slope);
    return ad::l2_normalize_rows(affine(b, p + 1, h), eps);
}

inline ad::Var forward_logits(const BoundModel& b, const ad::Var& x) { return classify(b, encode(b, x)); }
inline ad::Var forward_projection(const BoundModel& b, const ad::Var& x) { return project(b, encode(b, x)); }

/// Gradient-free logits for a batch.
inline Matrix forward_logits(const AeonModel& model, const Matrix& x) {
    ad::Tape tape;
    BoundModel b = bind(tape, model, false);
    return forward_logits(b, tape.constant(x)).value();
}

/// Gradient-free unit-norm projections for a batch.
inline Matrix forward_projection(const AeonModel& model, const Matrix& x) {
    ad::Tape tape;
    BoundModel b = bind(tape, model, false);
    return forward_projection(b, tape.constant(x)).value();
}

/// Checkpoint: {"config": {...}, "params": [...]}. nlohmann/json writes
/// doubles in shortest round-trip form.
inline nlohmann::json model_to_json(const AeonModel& model) {
    Eigen::VectorXd flat = model.flatten();
    return nlohmann::json{{"config", model.config},
                          {"params", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

inline AeonModel model_from_json(const nlohmann::json& j) {
    try {
        ModelConfig cfg = j.at("config").get<ModelConfig>();
        AeonModel m = init_params(cfg, cfg.seed);
        auto params = j.at("params").get<std::vector<double>>();
        m.unflatten(Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Index>(params.size())));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model checkpoint: ") + e.what());
    } catch (const StructuralError& e) {
        throw DataError(std::string("model checkpoint: ") + e.what());
    }
}

} // namespace aeon
