#pragma once
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "rvr/mlp.hpp"

namespace rvrtest {

// Central finite differences over every parameter of a network; `loss` must
// evaluate the scalar loss for the current parameter values.
// A central difference that straddles a ReLU kink reports a bogus slope even
// when the analytic gradient is exact; retrying with smaller steps moves the
// stencil off the kink, so we keep the best agreement across step sizes.
inline double relative_fd_error(double& w, double g, const std::function<double()>& loss) {
    double best = std::numeric_limits<double>::infinity();
    for (double h : {1e-5, 1e-6, 3e-7}) {
        double saved = w;
        w = saved + h;
        double up = loss();
        w = saved - h;
        double down = loss();
        w = saved;
        double numeric = (up - down) / (2.0 * h);
        double denom = std::max({std::abs(numeric), std::abs(g), 1e-6});
        best = std::min(best, std::abs(numeric - g) / denom);
        if (best < 1e-5) break;
    }
    return best;
}

inline double max_relative_grad_error(rvr::MlpParams& params, const rvr::MlpGrads& analytic,
                                      const std::function<double()>& loss) {
    double worst = 0.0;
    auto probe = [&](double& w, double g) {
        worst = std::max(worst, relative_fd_error(w, g, loss));
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].weight.data.size(); ++i)
            probe(params.layers[l].weight.data[i], analytic.layers[l].weight.data[i]);
        for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i)
            probe(params.layers[l].bias[i], analytic.layers[l].bias[i]);
    }
    return worst;
}

inline rvr::Matrix random_matrix(std::size_t r, std::size_t c, rvr::Rng& rng, double scale = 1.0) {
    rvr::Matrix m(r, c);
    for (auto& v : m.data) v = scale * rng.uniform(-1.0, 1.0);
    return m;
}

}  // namespace rvrtest
