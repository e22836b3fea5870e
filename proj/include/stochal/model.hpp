#pragma once

// Deep ensemble of rectifier MLPs trained with Adam on mean cross-entropy. Each member supplies
// one posterior sample of the class distribution for the acquisition scorers.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochal/errors.hpp"
#include "stochal/rng.hpp"
#include "stochal/scoring.hpp"

namespace stochal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MlpArchitecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 2;

    void validate() const {
        if (input_dim == 0) throw ParameterError("input_dim must be positive");
        if (hidden_dims.empty()) throw ParameterError("at least one hidden layer is required");
        for (auto h : hidden_dims)
            if (h == 0) throw ParameterError("hidden layer widths must be positive");
        if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
    }

    /// (fan_in, fan_out) of every layer, output layer last.
    std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const {
        std::vector<std::pair<std::size_t, std::size_t>> shapes;
        std::size_t in = input_dim;
        for (auto h : hidden_dims) {
            shapes.emplace_back(in, h);
            in = h;
        }
        shapes.emplace_back(in, num_classes);
        return shapes;
    }

    friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 5;
    std::size_t minibatch_size = 64;
    double validation_fraction = 0.1;
    double weight_decay = 0.0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ParameterError("learning_rate must be finite and >= 0");
        if (minibatch_size == 0) throw ParameterError("minibatch_size must be positive");
        if (!(validation_fraction >= 0.0 && validation_fraction < 0.5))
            throw ParameterError("validation_fraction must be in [0, 0.5)");
        if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
    }
};

/// One dense layer: outputs = inputs * weights + bias. weights is (fan_in x fan_out).
struct DenseLayer {
    Matrix weights;
    Vector bias;
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        if (a.layers.size() != b.layers.size()) return false;
        for (std::size_t i = 0; i < a.layers.size(); ++i) {
            const auto& x = a.layers[i];
            const auto& y = b.layers[i];
            if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols()) return false;
            if (x.weights != y.weights || x.bias != y.bias) return false;
        }
        return true;
    }
};

/// Gradients share the parameter layout.
using MlpGradient = MlpParams;

struct Ensemble {
    MlpArchitecture arch;
    std::vector<MlpParams> members;

    std::size_t size() const noexcept { return members.size(); }
};

// ---------------------------------------------------------------------------------------------

/// Glorot-uniform weights, zero biases. Member j draws from sub-stream j of `rng`.
inline Ensemble init_ensemble(const MlpArchitecture& arch, std::size_t k, const RngState& rng) {
    arch.validate();
    if (k == 0) throw ParameterError("ensemble size must be positive");
    Ensemble ens{arch, {}};
    ens.members.reserve(k);
    const auto shapes = arch.layer_shapes();
    for (std::size_t j = 0; j < k; ++j) {
        RngStream stream(rng.with_purpose(Purpose::Init, j));
        MlpParams p;
        for (auto [in, out] : shapes) {
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            DenseLayer layer{Matrix(in, out), Vector::Zero(static_cast<Eigen::Index>(out))};
            // column-major fill order is part of the reproducibility contract
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
                for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
                    layer.weights(r, c) = (2.0 * stream.uniform() - 1.0) * a;
            p.layers.push_back(std::move(layer));
        }
        ens.members.push_back(std::move(p));
    }
    return ens;
}

namespace detail {

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// Forward pass keeping every layer's pre-activation (last entry = logits).
inline std::vector<Matrix> forward_all(const MlpParams& params, const Matrix& x) {
    std::vector<Matrix> pre;
    pre.reserve(params.layers.size());
    Matrix h = x;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Matrix z = h * layer.weights;
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < params.layers.size()) h = z.cwiseMax(0.0);
        pre.push_back(std::move(z));
    }
    return pre;
}

inline void check_labels(std::span<const int> labels, std::size_t num_classes) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw InputError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                             " outside [0, " + std::to_string(num_classes) + ")");
    }
}

}  // namespace detail

inline Matrix logits(const MlpParams& params, const Matrix& x) { return detail::forward_all(params, x).back(); }

inline Matrix predict_proba(const MlpParams& params, const Matrix& x) {
    return detail::softmax_rows(logits(params, x));
}

struct LossAndGradient {
    double loss = 0.0;
    MlpGradient gradient;
};

/// Mean cross-entropy (nats) over the rows of `x` and its gradient by backpropagation.
inline LossAndGradient loss_and_gradient(const MlpParams& params, const Matrix& x, std::span<const int> labels) {
    const auto n = x.rows();
    if (n == 0 || static_cast<std::size_t>(n) != labels.size())
        throw InputError("minibatch features and labels disagree in length");
    const auto pre = detail::forward_all(params, x);
    const Matrix& z = pre.back();

    LossAndGradient out;
    Matrix delta(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = z.row(i).maxCoeff();
        const auto shifted = (z.row(i).array() - mx).eval();
        const double lse = std::log(shifted.exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        loss += lse - shifted(y);
        delta.row(i) = (shifted - lse).exp();
        delta(i, y) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.loss = loss * inv_n;
    delta *= inv_n;

    const std::size_t num_layers = params.layers.size();
    out.gradient.layers.resize(num_layers);
    for (std::size_t l = num_layers; l-- > 0;) {
        // input to layer l is relu(pre[l-1]) or x itself
        const Matrix input = l == 0 ? x : Matrix(pre[l - 1].cwiseMax(0.0));
        auto& g = out.gradient.layers[l];
        g.weights = input.transpose() * delta;
        g.bias = delta.colwise().sum().transpose();
        if (l > 0) {
            Matrix back = delta * params.layers[l].weights.transpose();
            delta = (pre[l - 1].array() > 0.0).select(back, 0.0);
        }
    }
    return out;
}

/// Mean cross-entropy without the gradient.
inline double mean_loss(const MlpParams& params, const Matrix& x, std::span<const int> labels) {
    const Matrix z = logits(params, x);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
        loss += lse - z(i, labels[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(z.rows());
}

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

inline std::vector<int> gather(std::span<const int> v, std::span<const std::size_t> idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Adam(const MlpParams& like) {
        for (const auto& l : like.layers) {
            m_.layers.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), Vector::Zero(l.bias.size())});
        }
        v_ = m_;
    }

    void step(MlpParams& p, const MlpGradient& g, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            update(p.layers[l].weights, g.layers[l].weights, m_.layers[l].weights, v_.layers[l].weights, lr, c1, c2);
            update(p.layers[l].bias, g.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias, lr, c1, c2);
        }
    }

private:
    template <typename P, typename G>
    static void update(P& p, const G& g, P& m, P& v, double lr, double c1, double c2) {
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }

    MlpParams m_;
    MlpParams v_;
    std::uint64_t t_ = 0;
};

inline void add_weight_decay(MlpGradient& g, const MlpParams& p, double wd) {
    if (wd == 0.0) return;
    for (std::size_t l = 0; l < p.layers.size(); ++l) g.layers[l].weights += wd * p.layers[l].weights;
}

inline void train_member(MlpParams& params, const Matrix& x, std::span<const int> labels, const TrainConfig& cfg,
                         const RngState& rng) {
    const std::size_t n = labels.size();
    RngStream stream(rng);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> train_idx = order;
    std::vector<std::size_t> val_idx;
    if (cfg.validation_fraction > 0.0 && n >= 2) {
        shuffle(order, stream);
        auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
        n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
        val_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
    }
    const Matrix x_val = detail::gather_rows(x, val_idx);
    const std::vector<int> y_val = detail::gather(labels, val_idx);

    Adam adam(params);
    MlpParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle(train_idx, stream);
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.minibatch_size) {
            const std::size_t len = std::min(cfg.minibatch_size, train_idx.size() - start);
            const std::span<const std::size_t> batch(train_idx.data() + start, len);
            const Matrix xb = detail::gather_rows(x, batch);
            const auto yb = detail::gather(labels, batch);
            auto lg = loss_and_gradient(params, xb, yb);
            if (!std::isfinite(lg.loss)) throw TrainingError("non-finite training loss", epoch);
            detail::add_weight_decay(lg.gradient, params, cfg.weight_decay);
            adam.step(params, lg.gradient, cfg.learning_rate);
        }
        if (!params.all_finite()) throw TrainingError("non-finite parameters", epoch);
        if (val_idx.empty()) continue;

        const double val = mean_loss(params, x_val, y_val);
        if (!std::isfinite(val)) throw TrainingError("non-finite validation loss", epoch);
        if (val < best_val) {
            best_val = val;
            best = params;
            stale = 0;
        } else if (++stale >= cfg.early_stop_patience) {
            break;
        }
    }
    if (!val_idx.empty() && std::isfinite(best_val)) params = std::move(best);
}

}  // namespace detail

/// Train every member independently. Member j shuffles and splits its validation set with
/// sub-stream j of `rng`. With validation_fraction > 0 the best-validation parameters are kept.
inline Ensemble train(Ensemble ensemble, const Matrix& features, std::span<const int> labels, const TrainConfig& config,
                      const RngState& rng) {
    config.validate();
    if (labels.empty()) throw InputError("cannot train on an empty set");
    if (static_cast<std::size_t>(features.rows()) != labels.size())
        throw InputError("features and labels disagree in length");
    if (static_cast<std::size_t>(features.cols()) != ensemble.arch.input_dim)
        throw InputError("feature width does not match the architecture");
    detail::check_labels(labels, ensemble.arch.num_classes);
    for (std::size_t j = 0; j < ensemble.members.size(); ++j)
        detail::train_member(ensemble.members[j], features, labels, config, rng.with_purpose(Purpose::Shuffle, j));
    return ensemble;
}

/// Member k's softmax output becomes sample row k for every candidate.
inline PredictiveSamples predict_samples(const Ensemble& ensemble, const Matrix& features) {
    if (static_cast<std::size_t>(features.cols()) != ensemble.arch.input_dim)
        throw InputError("feature width does not match the architecture");
    const std::size_t m = static_cast<std::size_t>(features.rows());
    const std::size_t k = ensemble.members.size();
    const std::size_t c = ensemble.arch.num_classes;
    std::vector<double> flat(m * k * c);
    for (std::size_t j = 0; j < k; ++j) {
        const Matrix p = predict_proba(ensemble.members[j], features);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t cls = 0; cls < c; ++cls)
                flat[(i * k + j) * c + cls] = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cls));
    }
    return PredictiveSamples(m, k, c, std::move(flat));
}

// ---------------------------------------------------------------------------------------------
// Serialisation: {"format": "stochal-ensemble", "version": 1, "architecture": {...},
//                 "members": [[{"rows", "cols", "weights" (row-major), "bias"}, ...], ...]}

inline constexpr int kEnsembleFormatVersion = 1;

inline nlohmann::json to_json(const Ensemble& ens) {
    nlohmann::json j;
    j["format"] = "stochal-ensemble";
    j["version"] = kEnsembleFormatVersion;
    j["architecture"] = {{"input_dim", ens.arch.input_dim},
                         {"hidden_dims", ens.arch.hidden_dims},
                         {"num_classes", ens.arch.num_classes}};
    auto& members = j["members"] = nlohmann::json::array();
    for (const auto& m : ens.members) {
        auto layers = nlohmann::json::array();
        for (const auto& l : m.layers) {
            std::vector<double> w;
            w.reserve(static_cast<std::size_t>(l.weights.size()));
            for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
            layers.push_back({{"rows", l.weights.rows()},
                              {"cols", l.weights.cols()},
                              {"weights", std::move(w)},
                              {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
        }
        members.push_back(std::move(layers));
    }
    return j;
}

inline Ensemble ensemble_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "stochal-ensemble") throw InputError("not an ensemble record");
        if (j.at("version").get<int>() != kEnsembleFormatVersion) throw InputError("unsupported ensemble version");
        Ensemble ens;
        const auto& a = j.at("architecture");
        ens.arch.input_dim = a.at("input_dim").get<std::size_t>();
        ens.arch.hidden_dims = a.at("hidden_dims").get<std::vector<std::size_t>>();
        ens.arch.num_classes = a.at("num_classes").get<std::size_t>();
        ens.arch.validate();
        const auto shapes = ens.arch.layer_shapes();
        for (const auto& jm : j.at("members")) {
            if (jm.size() != shapes.size()) throw InputError("member layer count does not match architecture");
            MlpParams p;
            for (std::size_t l = 0; l < shapes.size(); ++l) {
                const auto& jl = jm.at(l);
                const auto rows = jl.at("rows").get<Eigen::Index>();
                const auto cols = jl.at("cols").get<Eigen::Index>();
                if (static_cast<std::size_t>(rows) != shapes[l].first || static_cast<std::size_t>(cols) != shapes[l].second)
                    throw InputError("layer " + std::to_string(l) + " shape does not match architecture");
                const auto w = jl.at("weights").get<std::vector<double>>();
                const auto b = jl.at("bias").get<std::vector<double>>();
                if (w.size() != static_cast<std::size_t>(rows * cols) || b.size() != static_cast<std::size_t>(cols))
                    throw InputError("layer " + std::to_string(l) + " has wrong value count");
                DenseLayer layer{Matrix(rows, cols), Vector(cols)};
                for (Eigen::Index r = 0; r < rows; ++r)
                    for (Eigen::Index c = 0; c < cols; ++c) layer.weights(r, c) = w[static_cast<std::size_t>(r * cols + c)];
                for (Eigen::Index c = 0; c < cols; ++c) layer.bias(c) = b[static_cast<std::size_t>(c)];
                p.layers.push_back(std::move(layer));
            }
            ens.members.push_back(std::move(p));
        }
        if (ens.members.empty()) throw InputError("ensemble has no members");
        return ens;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed ensemble record: ") + e.what());
    }
}

}  // namespace stochal
