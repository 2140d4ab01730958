#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "softshift/errors.hpp"
#include "softshift/io.hpp"
#include "softshift/matrix.hpp"
#include "softshift/rng.hpp"

namespace softshift {

enum class Activation : std::uint8_t { Tanh = 0, Relu = 1, Linear = 2 };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Linear: return "linear";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "linear") return Activation::Linear;
    throw InvalidSpec("unknown activation: " + s);
}

struct LayerSpec {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    Activation activation = Activation::Linear;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw InvalidSpec("network needs at least one layer");
    for (std::size_t k = 0; k < specs.size(); ++k) {
        if (specs[k].input_dim < 1 || specs[k].output_dim < 1)
            throw InvalidSpec("layer " + std::to_string(k) + " has zero dimension");
        if (k + 1 < specs.size() && specs[k].output_dim != specs[k + 1].input_dim)
            throw InvalidSpec("layer " + std::to_string(k) + " output_dim does not chain");
    }
    if (specs.back().activation != Activation::Linear)
        throw InvalidSpec("final layer must be linear (logits feed softmax externally)");
}

// Weights are input_dim x output_dim so a batch (N x in) maps by right
// multiplication; biases are 1 x output_dim.
struct ModelParams {
    std::vector<LayerSpec> specs;
    std::vector<Matrix> weights;
    std::vector<Matrix> biases;

    std::size_t input_dim() const { return specs.front().input_dim; }
    std::size_t output_dim() const { return specs.back().output_dim; }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Weights ~ N(0, 1/input_dim) per layer, biases zero.
inline ModelParams init_params(const std::vector<LayerSpec>& specs, SeededRng& rng) {
    validate_specs(specs);
    ModelParams p;
    p.specs = specs;
    for (const auto& s : specs) {
        Matrix w(s.input_dim, s.output_dim);
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.input_dim));
        for (auto& v : w.data()) v = scale * rng.next_normal();
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(1, s.output_dim);
    }
    return p;
}

// Zero-valued gradients/accumulators with the same shapes as a model.
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z;
    z.specs = p.specs;
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        z.weights.emplace_back(p.weights[k].rows(), p.weights[k].cols());
        z.biases.emplace_back(p.biases[k].rows(), p.biases[k].cols());
    }
    return z;
}

struct ForwardCache {
    // inputs[k] is the activation fed into layer k; inputs[0] is the batch.
    std::vector<Matrix> inputs;
    // outputs[k] is the post-activation output of layer k.
    std::vector<Matrix> outputs;
};

inline void apply_activation(Activation act, Matrix& m) {
    switch (act) {
        case Activation::Tanh:
            for (auto& v : m.data()) v = std::tanh(v);
            break;
        case Activation::Relu:
            for (auto& v : m.data()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Linear:
            break;
    }
}

inline Matrix forward(const ModelParams& params, const Matrix& batch, ForwardCache* cache = nullptr) {
    if (batch.cols() != params.input_dim())
        throw DimensionMismatch("forward: batch cols " + std::to_string(batch.cols()) +
                                " != input dim " + std::to_string(params.input_dim()));
    Matrix a = batch;
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    for (std::size_t k = 0; k < params.specs.size(); ++k) {
        if (cache) cache->inputs.push_back(a);
        Matrix z = matmul(a, params.weights[k]);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            double* row = z.row(i);
            const double* b = params.biases[k].row(0);
            for (std::size_t j = 0; j < z.cols(); ++j) row[j] += b[j];
        }
        apply_activation(params.specs[k].activation, z);
        if (cache) cache->outputs.push_back(z);
        a = std::move(z);
    }
    return a;
}

inline ModelParams backward(const ModelParams& params, const ForwardCache& cache,
                            const Matrix& dloss_dlogits) {
    if (cache.inputs.size() != params.specs.size())
        throw ShapeMismatch("backward: cache does not match network depth");
    if (dloss_dlogits.rows() != cache.outputs.back().rows() ||
        dloss_dlogits.cols() != cache.outputs.back().cols())
        throw ShapeMismatch("backward: dloss_dlogits shape mismatch");

    ModelParams grads = zeros_like(params);
    Matrix dz = dloss_dlogits;
    for (std::size_t k = params.specs.size(); k-- > 0;) {
        // dz currently holds dLoss/d(post-activation of layer k); fold in
        // the activation derivative to get dLoss/dz_k.
        switch (params.specs[k].activation) {
            case Activation::Tanh:
                for (std::size_t i = 0; i < dz.size(); ++i) {
                    const double a = cache.outputs[k].data()[i];
                    dz.data()[i] *= 1.0 - a * a;
                }
                break;
            case Activation::Relu:
                for (std::size_t i = 0; i < dz.size(); ++i)
                    if (cache.outputs[k].data()[i] <= 0.0) dz.data()[i] = 0.0;
                break;
            case Activation::Linear:
                break;
        }
        grads.weights[k] = matmul_at_b(cache.inputs[k], dz);
        for (std::size_t i = 0; i < dz.rows(); ++i) {
            const double* row = dz.row(i);
            double* db = grads.biases[k].row(0);
            for (std::size_t j = 0; j < dz.cols(); ++j) db[j] += row[j];
        }
        if (k > 0) dz = matmul_a_bt(dz, params.weights[k]);
    }
    return grads;
}

struct RmspropState {
    ModelParams accumulator;  // running mean square per parameter
    double decay = 0.9;
    double epsilon = 1e-8;
    double learning_rate = 0.004;

    static RmspropState for_model(const ModelParams& p, double learning_rate,
                                  double decay = 0.9, double epsilon = 1e-8) {
        RmspropState s;
        s.accumulator = zeros_like(p);
        s.learning_rate = learning_rate;
        s.decay = decay;
        s.epsilon = epsilon;
        return s;
    }
};

namespace detail {
inline void rmsprop_update(std::vector<double>& param, const std::vector<double>& grad,
                           std::vector<double>& acc, const RmspropState& s) {
    if (param.size() != grad.size() || param.size() != acc.size())
        throw ShapeMismatch("rmsprop_step: shape mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
        acc[i] = s.decay * acc[i] + (1.0 - s.decay) * grad[i] * grad[i];
        param[i] -= s.learning_rate * grad[i] / (std::sqrt(acc[i]) + s.epsilon);
    }
}
}  // namespace detail

inline void rmsprop_step(ModelParams& params, const ModelParams& grads, RmspropState& state) {
    if (params.specs != grads.specs || params.specs != state.accumulator.specs)
        throw ShapeMismatch("rmsprop_step: model/gradient/state specs differ");
    for (std::size_t k = 0; k < params.weights.size(); ++k) {
        detail::rmsprop_update(params.weights[k].data(), grads.weights[k].data(),
                               state.accumulator.weights[k].data(), state);
        detail::rmsprop_update(params.biases[k].data(), grads.biases[k].data(),
                               state.accumulator.biases[k].data(), state);
    }
}

// Checkpoint format: magic, version, layer count, per-layer dims and
// activation tag, then raw little-endian f64 (weights row-major, then bias).
inline constexpr char kModelMagic[9] = "SSMODEL1";
inline constexpr std::uint32_t kModelVersion = 1;

inline std::vector<std::uint8_t> save_model(const ModelParams& params) {
    ByteWriter w;
    w.magic(kModelMagic);
    w.u32(kModelVersion);
    w.u32(static_cast<std::uint32_t>(params.specs.size()));
    for (const auto& s : params.specs) {
        w.u32(static_cast<std::uint32_t>(s.input_dim));
        w.u32(static_cast<std::uint32_t>(s.output_dim));
        w.u8(static_cast<std::uint8_t>(s.activation));
    }
    for (std::size_t k = 0; k < params.specs.size(); ++k) {
        for (double v : params.weights[k].data()) w.f64(v);
        for (double v : params.biases[k].data()) w.f64(v);
    }
    return w.take();
}

inline ModelParams load_model(const std::vector<std::uint8_t>& bytes) {
    ByteReader<CorruptCheckpoint> r(bytes);
    r.expect_magic(kModelMagic);
    if (r.u32() != kModelVersion) r.fail("unsupported checkpoint version");
    const std::uint32_t layers = r.u32();
    if (layers == 0 || layers > 1024) r.fail("implausible layer count");
    ModelParams p;
    for (std::uint32_t k = 0; k < layers; ++k) {
        LayerSpec s;
        s.input_dim = r.u32();
        s.output_dim = r.u32();
        const std::uint8_t tag = r.u8();
        if (tag > 2) r.fail("bad activation tag");
        s.activation = static_cast<Activation>(tag);
        p.specs.push_back(s);
    }
    try {
        validate_specs(p.specs);
    } catch (const InvalidSpec& e) {
        throw CorruptCheckpoint(e.what(), r.offset());
    }
    for (const auto& s : p.specs) {
        Matrix w(s.input_dim, s.output_dim);
        for (auto& v : w.data()) v = r.f64();
        Matrix b(1, s.output_dim);
        for (auto& v : b.data()) v = r.f64();
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    if (!r.exhausted()) r.fail("trailing bytes after checkpoint payload");
    return p;
}

inline std::array<std::uint8_t, 32> model_fingerprint(const ModelParams& params) {
    return fingerprint256(save_model(params));
}

}  // namespace softshift
