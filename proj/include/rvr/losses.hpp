#pragma once
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rvr/matrix.hpp"

namespace rvr {

constexpr double kProbClamp = 1e-12;

struct BceResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d p
};

// Mean binary cross-entropy over probabilities in (0,1); probabilities are
// clamped to [1e-12, 1 - 1e-12] before the logs.
inline BceResult bce_loss(const std::vector<double>& probabilities,
                          const std::vector<double>& labels) {
    if (probabilities.size() != labels.size())
        throw ShapeError("bce_loss: length mismatch");
    std::size_t n = probabilities.size();
    BceResult r;
    r.grad.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double p = std::clamp(probabilities[i], kProbClamp, 1.0 - kProbClamp);
        double y = labels[i];
        r.loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        r.grad[i] = (-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(n);
    }
    r.loss /= static_cast<double>(n);
    return r;
}

struct SoftmaxCeResult {
    double loss = 0.0;
    Matrix grad;  // d loss / d logits, n x k
};

// Softmax cross-entropy with max-shifted log-sum-exp.
inline SoftmaxCeResult softmax_ce_loss(const Matrix& logits, const std::vector<int>& class_ids) {
    if (logits.rows != class_ids.size())
        throw ShapeError("softmax_ce_loss: batch size mismatch");
    std::size_t n = logits.rows, k = logits.cols;
    SoftmaxCeResult r;
    r.grad = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        int c = class_ids[i];
        if (c < 0 || static_cast<std::size_t>(c) >= k)
            throw std::out_of_range("softmax_ce_loss: class id out of range");
        const double* row = logits.row(i);
        double m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
        double lse = m + std::log(sum);
        r.loss += lse - row[c];
        for (std::size_t j = 0; j < k; ++j) {
            double p = std::exp(row[j] - lse);
            r.grad(i, j) = (p - (static_cast<std::size_t>(c) == j ? 1.0 : 0.0)) /
                           static_cast<double>(n);
        }
    }
    r.loss /= static_cast<double>(n);
    return r;
}

}  // namespace rvr
