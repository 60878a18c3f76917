#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "rvr/matrix.hpp"
#include "rvr/rng.hpp"

namespace rvr {

enum class OutputActivation { Identity, Sigmoid };

struct MlpLayer {
    Matrix weight;               // in x out
    std::vector<double> bias;    // out
};

// Feed-forward MLP with ReLU hidden units and an identity or sigmoid output.
struct MlpParams {
    std::vector<MlpLayer> layers;
    OutputActivation output_activation = OutputActivation::Identity;

    std::size_t input_dim() const { return layers.front().weight.rows; }
    std::size_t output_dim() const { return layers.back().weight.cols; }
};

struct MlpGrads {
    std::vector<MlpLayer> layers;  // same shapes as the params they mirror
};

inline MlpGrads zero_grads_like(const MlpParams& p) {
    MlpGrads g;
    g.layers.reserve(p.layers.size());
    for (const auto& l : p.layers)
        g.layers.push_back({Matrix(l.weight.rows, l.weight.cols),
                            std::vector<double>(l.bias.size(), 0.0)});
    return g;
}

inline void accumulate(MlpGrads& into, const MlpGrads& g, double scale = 1.0) {
    for (std::size_t l = 0; l < into.layers.size(); ++l) {
        for (std::size_t i = 0; i < into.layers[l].weight.data.size(); ++i)
            into.layers[l].weight.data[i] += scale * g.layers[l].weight.data[i];
        for (std::size_t i = 0; i < into.layers[l].bias.size(); ++i)
            into.layers[l].bias[i] += scale * g.layers[l].bias[i];
    }
}

// Glorot-uniform weights, zero biases.
inline MlpParams make_mlp(std::size_t input, const std::vector<std::size_t>& hidden,
                          std::size_t output, OutputActivation out_act, Rng& rng) {
    MlpParams p;
    p.output_activation = out_act;
    std::vector<std::size_t> widths;
    widths.push_back(input);
    for (auto h : hidden) widths.push_back(h);
    widths.push_back(output);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        MlpLayer layer;
        layer.weight = Matrix(widths[l], widths[l + 1]);
        layer.bias.assign(widths[l + 1], 0.0);
        double bound = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
        for (auto& w : layer.weight.data) w = rng.uniform(-bound, bound);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

// Per-layer pre-activations and activations, kept for backward.
struct MlpTrace {
    std::vector<Matrix> activations;      // activations[0] = input, .back() = output
    std::vector<Matrix> pre_activations;  // one per layer
    const Matrix& output() const { return activations.back(); }
};

inline MlpTrace mlp_forward(const MlpParams& p, const Matrix& batch) {
    if (batch.cols != p.input_dim())
        throw ShapeError("mlp_forward: batch cols " + std::to_string(batch.cols) +
                         " != input dim " + std::to_string(p.input_dim()));
    MlpTrace t;
    t.activations.push_back(batch);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        Matrix z = matmul(t.activations.back(), layer.weight);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += layer.bias[j];
        t.pre_activations.push_back(z);
        Matrix a = z;
        bool last = (l + 1 == p.layers.size());
        if (!last) {
            for (auto& v : a.data) v = v > 0.0 ? v : 0.0;  // ReLU
        } else if (p.output_activation == OutputActivation::Sigmoid) {
            for (auto& v : a.data) v = 1.0 / (1.0 + std::exp(-v));
        }
        t.activations.push_back(std::move(a));
    }
    return t;
}

// Backward pass for a scalar loss whose gradient w.r.t. the network output is
// `output_gradient`. Returns parameter gradients; optionally also the gradient
// w.r.t. the network input (for chaining through an upstream encoder).
inline MlpGrads mlp_backward(const MlpParams& p, const MlpTrace& trace,
                             const Matrix& output_gradient, Matrix* input_gradient = nullptr) {
    if (trace.pre_activations.size() != p.layers.size() ||
        !output_gradient.same_shape(trace.activations.back()))
        throw ShapeError("mlp_backward: trace does not match params/output gradient");
    MlpGrads g = zero_grads_like(p);
    Matrix delta = output_gradient;  // dL/d(activation of current layer)
    for (std::size_t l = p.layers.size(); l-- > 0;) {
        const Matrix& z = trace.pre_activations[l];
        bool last = (l + 1 == p.layers.size());
        // through the activation: dL/dz
        if (last) {
            if (p.output_activation == OutputActivation::Sigmoid) {
                const Matrix& a = trace.activations[l + 1];
                for (std::size_t i = 0; i < delta.data.size(); ++i)
                    delta.data[i] *= a.data[i] * (1.0 - a.data[i]);
            }
        } else {
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                if (z.data[i] <= 0.0) delta.data[i] = 0.0;
        }
        g.layers[l].weight = matmul_at_b(trace.activations[l], delta);
        for (std::size_t j = 0; j < delta.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < delta.rows; ++i) s += delta(i, j);
            g.layers[l].bias[j] = s;
        }
        if (l > 0 || input_gradient) delta = matmul_a_bt(delta, p.layers[l].weight);
    }
    if (input_gradient) *input_gradient = std::move(delta);
    return g;
}

}  // namespace rvr
