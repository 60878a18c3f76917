#pragma once
#include <cmath>
#include <stdexcept>
#include <string>

#include "rvr/mlp.hpp"

namespace rvr {

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AdamState {
    MlpGrads m;  // first moments
    MlpGrads v;  // second moments
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam_state(const MlpParams& p) {
    return AdamState{zero_grads_like(p), zero_grads_like(p), 0};
}

namespace detail {
inline void adam_update_span(double* w, const double* g, double* m, double* v, std::size_t n,
                             double lr, const AdamState& s, double bc1, double bc2,
                             const std::string& where) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(g[i]))
            throw NumericalError("adam_step: non-finite gradient in " + where);
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}
}  // namespace detail

inline void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state,
                      double learning_rate) {
    if (grads.layers.size() != params.layers.size())
        throw ShapeError("adam_step: grad layer count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& pl = params.layers[l];
        const auto& gl = grads.layers[l];
        if (!pl.weight.same_shape(gl.weight) || pl.bias.size() != gl.bias.size())
            throw ShapeError("adam_step: shape mismatch at layer " + std::to_string(l));
        std::string where = "layer " + std::to_string(l);
        detail::adam_update_span(pl.weight.data.data(), gl.weight.data.data(),
                                 state.m.layers[l].weight.data.data(),
                                 state.v.layers[l].weight.data.data(), pl.weight.data.size(),
                                 learning_rate, state, bc1, bc2, where + " weight");
        detail::adam_update_span(pl.bias.data(), gl.bias.data(), state.m.layers[l].bias.data(),
                                 state.v.layers[l].bias.data(), pl.bias.size(), learning_rate,
                                 state, bc1, bc2, where + " bias");
    }
}

}  // namespace rvr
