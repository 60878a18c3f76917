#pragma once
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvr/trainer.hpp"
#include "rvr/worlds.hpp"

namespace rvr {

struct EvalReport {
    double unseen_accuracy = 0.0;
    std::vector<double> seen_accuracies;
    double adv_term = 0.0;
    std::uint64_t seed = 0;
    std::string config_echo;
};

inline double accuracy_of(const ModelBundle& bundle, const DomainDataset& data) {
    if (data.xs.cols != bundle.dims.d)
        throw ShapeError("evaluate: data dim " + std::to_string(data.xs.cols) +
                         " != bundle d " + std::to_string(bundle.dims.d));
    Matrix reps = encode(bundle.encoder, data.xs);
    Matrix probs = mlp_forward(bundle.predictor.net, reps).output();
    double hits = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        double yhat = probs(i, 0) > 0.5 ? 1.0 : 0.0;
        if (yhat == data.ys[i]) hits += 1.0;
    }
    return hits / static_cast<double>(data.size());
}

inline EvalReport evaluate_unseen(const ModelBundle& bundle, const DomainDataset& unseen) {
    EvalReport r;
    r.unseen_accuracy = accuracy_of(bundle, unseen);
    return r;
}

// Single affine layer + sigmoid, full-batch gradient descent on BCE.
inline double logistic_baseline(const std::vector<DomainDataset>& train_sets,
                                const DomainDataset& test, std::size_t epochs, double lr,
                                Rng& rng) {
    std::size_t total = 0;
    for (const auto& t : train_sets) total += t.size();
    if (total == 0) throw std::invalid_argument("logistic_baseline: no training data");
    std::size_t d = train_sets.front().xs.cols;
    Matrix xs(total, d);
    std::vector<double> ys(total);
    std::size_t at = 0;
    for (const auto& t : train_sets)
        for (std::size_t i = 0; i < t.size(); ++i, ++at) {
            std::copy(t.xs.row(i), t.xs.row(i) + d, xs.row(at));
            ys[at] = t.ys[i];
        }

    MlpParams model = make_mlp(d, {}, 1, OutputActivation::Sigmoid, rng);
    for (std::size_t e = 0; e < epochs; ++e) {
        MlpTrace tr = mlp_forward(model, xs);
        BceResult bce = bce_loss(tr.output().data, ys);
        if (!std::isfinite(bce.loss))
            throw NumericalError("logistic_baseline diverged at epoch " + std::to_string(e));
        Matrix dprob(total, 1);
        for (std::size_t i = 0; i < total; ++i) dprob(i, 0) = bce.grad[i];
        MlpGrads g = mlp_backward(model, tr, dprob);
        for (std::size_t i = 0; i < model.layers[0].weight.data.size(); ++i)
            model.layers[0].weight.data[i] -= lr * g.layers[0].weight.data[i];
        model.layers[0].bias[0] -= lr * g.layers[0].bias[0];
    }

    Matrix probs = mlp_forward(model, test.xs).output();
    double hits = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if ((probs(i, 0) > 0.5 ? 1.0 : 0.0) == test.ys[i]) hits += 1.0;
    return hits / static_cast<double>(test.size());
}

struct Pca2Result {
    Matrix projection;  // n x 2
    double explained_variance_1 = 0.0;
    double explained_variance_2 = 0.0;
};

// Top-2 eigenvectors of the covariance via orthogonal iteration. Sign
// convention: the largest-magnitude coordinate of each eigenvector is
// positive. Deterministic (fixed internal start).
inline Pca2Result pca2(const Matrix& reps) {
    std::size_t n = reps.rows, s = reps.cols;
    if (n < 3) throw std::invalid_argument("pca2: need at least 3 rows");
    if (s < 2) throw std::invalid_argument("pca2: need at least 2 columns");

    std::vector<double> mean(s, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) mean[j] += reps(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    Matrix centered(n, s);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) centered(i, j) = reps(i, j) - mean[j];

    Matrix cov = matmul_at_b(centered, centered);
    for (auto& v : cov.data) v /= static_cast<double>(n - 1);
    double cov_norm = 0.0;
    for (double v : cov.data) cov_norm = std::max(cov_norm, std::abs(v));
    if (cov_norm == 0.0) throw std::invalid_argument("pca2: rank-0 data");

    // power iteration with deflation; fixed full-rank start for determinism
    Rng start(0x9E3779B97F4A7C15ull);
    auto top_eigenpair = [&](const Matrix& mat, std::vector<double>& vec) {
        vec.assign(s, 0.0);
        for (auto& v : vec) v = start.uniform(-1.0, 1.0);
        double lambda = 0.0;
        for (int it = 0; it < 20000; ++it) {
            std::vector<double> z(s, 0.0);
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j) z[i] += mat(i, j) * vec[j];
            lambda = 0.0;
            for (std::size_t i = 0; i < s; ++i) lambda += vec[i] * z[i];
            double res = 0.0, znorm = 0.0;
            for (std::size_t i = 0; i < s; ++i) {
                double r = z[i] - lambda * vec[i];
                res += r * r;
                znorm += z[i] * z[i];
            }
            // the deflated matrix can be numerically zero: keep the current
            // unit vector and report eigenvalue 0
            if (std::sqrt(znorm) < 1e-12 * std::max(1.0, cov_norm)) return 0.0;
            znorm = std::sqrt(znorm);
            for (std::size_t i = 0; i < s; ++i) vec[i] = z[i] / znorm;
            if (std::sqrt(res) < 1e-9 * std::max(1.0, cov_norm)) break;
        }
        return std::max(lambda, 0.0);
    };

    std::vector<double> v1, v2;
    double lam1 = top_eigenpair(cov, v1);
    Matrix deflated = cov;
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) deflated(i, j) -= lam1 * v1[i] * v1[j];
    double lam2 = top_eigenpair(deflated, v2);
    // enforce exact orthogonality of the reported directions
    double dot = 0.0;
    for (std::size_t i = 0; i < s; ++i) dot += v1[i] * v2[i];
    double norm = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
        v2[i] -= dot * v1[i];
        norm += v2[i] * v2[i];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-6) {
        // pick a deterministic unit vector orthogonal to v1
        for (std::size_t e = 0; e < s; ++e) {
            std::vector<double> cand(s, 0.0);
            cand[e] = 1.0;
            double d = 0.0;
            for (std::size_t i = 0; i < s; ++i) d += cand[i] * v1[i];
            for (std::size_t i = 0; i < s; ++i) cand[i] -= d * v1[i];
            double n2 = 0.0;
            for (double x : cand) n2 += x * x;
            if (n2 > 0.5) {
                n2 = std::sqrt(n2);
                for (std::size_t i = 0; i < s; ++i) v2[i] = cand[i] / n2;
                break;
            }
        }
    } else {
        for (std::size_t i = 0; i < s; ++i) v2[i] /= norm;
    }
    Matrix q(s, 2);
    for (std::size_t i = 0; i < s; ++i) {
        q(i, 0) = v1[i];
        q(i, 1) = v2[i];
    }
    for (std::size_t c = 0; c < 2; ++c) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < s; ++i)
            if (std::abs(q(i, c)) > std::abs(q(arg, c))) arg = i;
        if (q(arg, c) < 0.0)
            for (std::size_t i = 0; i < s; ++i) q(i, c) = -q(i, c);
    }

    Pca2Result out;
    out.projection = matmul(centered, q);
    out.explained_variance_1 = std::max(lam1, 0.0);
    out.explained_variance_2 = std::max(lam2, 0.0);
    return out;
}

struct KGrowthRow {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    double rvr_accuracy = 0.0;
    double logistic_accuracy = 0.0;
};

inline std::string kgrowth_to_csv(const std::vector<KGrowthRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "k,seed,rvr_accuracy,logistic_accuracy\n";
    for (const auto& r : rows)
        out << r.k << ',' << r.seed << ',' << r.rvr_accuracy << ',' << r.logistic_accuracy
            << '\n';
    return out.str();
}

// Unseen domain = the last base domain, held out of mu's support for the
// training draws. For each (seed, k): draw k seen domains, sample, train, and
// evaluate both RVR and the pooled logistic baseline on the unseen base.
inline std::vector<KGrowthRow> k_growth_experiment(const WorldSpec& world,
                                                   const std::vector<std::size_t>& k_values,
                                                   std::size_t n_per_domain,
                                                   const TrainConfig& base_cfg,
                                                   const std::vector<std::uint64_t>& seeds) {
    for (std::size_t i = 1; i < k_values.size(); ++i)
        if (k_values[i] <= k_values[i - 1])
            throw std::invalid_argument("k_growth: k values must be increasing");
    for (std::size_t k : k_values)
        if (k + 1 > world.n_base)
            throw std::invalid_argument("k_growth: world needs at least k+1 base domains");

    WorldSpec seen_world = world;  // zero out the unseen base and renormalize mu
    std::size_t unseen_base = world.n_base - 1;
    seen_world.mu[unseen_base] = 0.0;
    double mass = 0.0;
    for (double m : seen_world.mu) mass += m;
    if (mass <= 0.0) throw std::invalid_argument("k_growth: empty seen support");
    for (double& m : seen_world.mu) m /= mass;

    std::vector<KGrowthRow> rows;
    for (std::uint64_t seed : seeds) {
        for (std::size_t k : k_values) {
            Rng rng(seed ^ (0x517CC1B727220A95ull * (k + 1)));
            Rng draw_rng = rng.split();
            Rng sample_rng = rng.split();
            Rng model_rng = rng.split();
            Rng unseen_rng = rng.split();
            Rng logit_rng = rng.split();

            std::vector<std::size_t> bases = draw_domains(seen_world, k, draw_rng);
            std::vector<DomainDataset> datasets;
            for (std::size_t i = 0; i < k; ++i)
                datasets.push_back(sample_domain(world, bases[i], n_per_domain, sample_rng,
                                                 static_cast<int>(i)));
            DomainDataset unseen =
                sample_domain(world, unseen_base, n_per_domain, unseen_rng, 0);

            ModelBundle init = build_bundle(base_cfg.preset, k, model_rng);
            TrainConfig cfg = base_cfg;
            cfg.seed = seed ^ k;
            TrainResult res = train(init, datasets, cfg);

            KGrowthRow row;
            row.k = k;
            row.seed = seed;
            row.rvr_accuracy = accuracy_of(res.bundle, unseen);
            row.logistic_accuracy = logistic_baseline(datasets, unseen, 400, 0.1, logit_rng);
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace rvr
