#pragma once
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rvr/losses.hpp"
#include "rvr/model.hpp"

namespace rvr {

struct DomainDataset {
    int domain_id = 0;           // in [0, k)
    Matrix xs;                   // n_i x d
    std::vector<double> ys;      // {0,1}, length n_i
    std::size_t size() const { return xs.rows; }
};

// Evaluation-time 0-1 losses. pred_term is a mean over domains of per-domain
// misclassification rates; adv_term is a *sum* over domains of adversary
// success rates, so it lives in [0, k].
struct LossReport {
    double pred_term = 0.0;
    double adv_term = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

inline void check_domains(const std::vector<DomainDataset>& datasets, std::size_t k) {
    if (datasets.size() != k)
        throw std::invalid_argument("domain count " + std::to_string(datasets.size()) +
                                    " != bundle k " + std::to_string(k));
    std::vector<bool> seen(k, false);
    for (const auto& d : datasets) {
        if (d.domain_id < 0 || static_cast<std::size_t>(d.domain_id) >= k || seen[d.domain_id])
            throw std::invalid_argument("domain ids must be exactly {0..k-1}");
        seen[d.domain_id] = true;
    }
}

inline LossReport empirical_loss(const std::vector<DomainDataset>& datasets,
                                 const ModelBundle& bundle, double lambda, Rng& rng) {
    check_domains(datasets, bundle.dims.k);
    LossReport r;
    r.lambda = lambda;
    for (const auto& ds : datasets) {
        Matrix reps = encode(bundle.encoder, ds.xs);
        Matrix probs = mlp_forward(bundle.predictor.net, reps).output();
        Matrix logits = discriminator_logits(bundle.discriminator, reps);
        double mispred = 0.0, advhit = 0.0;
        for (std::size_t j = 0; j < ds.size(); ++j) {
            double yhat = probs(j, 0) > 0.5 ? 1.0 : 0.0;
            if (yhat != ds.ys[j]) mispred += 1.0;
            std::vector<double> row(logits.row(j), logits.row(j) + logits.cols);
            if (argmax_pi_k(row, rng) == static_cast<std::size_t>(ds.domain_id)) advhit += 1.0;
        }
        r.pred_term += mispred / static_cast<double>(ds.size());
        r.adv_term += advhit / static_cast<double>(ds.size());
    }
    r.pred_term /= static_cast<double>(datasets.size());
    r.total = r.pred_term + lambda * r.adv_term;
    return r;
}

struct DiscriminatorGrads {
    MlpGrads zeta;
    Matrix head_w;
    std::vector<double> head_b;
};

namespace detail {

// Per-domain softmax-CE of the discriminator against true IDs, averaged over
// domains (mirrors the per-domain 1/n_i weighting of the 0-1 adversary sum).
// Accumulates gradients into `dgrads` (if given) and per-example gradients at
// the representations into `rep_grads` (if given), both scaled by 1/k.
inline double surrogate_disc_core(const std::vector<DomainDataset>& datasets,
                                  const ModelBundle& bundle,
                                  const std::vector<Matrix>& reps_per_domain,
                                  DiscriminatorGrads* dgrads,
                                  std::vector<Matrix>* rep_grads) {
    const auto& disc = bundle.discriminator;
    double k = static_cast<double>(datasets.size());
    double loss = 0.0;
    for (std::size_t di = 0; di < datasets.size(); ++di) {
        const auto& ds = datasets[di];
        const Matrix& reps = reps_per_domain[di];
        MlpTrace zt = mlp_forward(disc.zeta, reps);
        const Matrix& z = zt.output();
        Matrix logits = matmul_a_bt(z, disc.head_w);
        for (std::size_t i = 0; i < logits.rows; ++i)
            for (std::size_t j = 0; j < logits.cols; ++j) logits(i, j) += disc.head_b[j];
        std::vector<int> ids(ds.size(), ds.domain_id);
        SoftmaxCeResult ce = softmax_ce_loss(logits, ids);
        loss += ce.loss / k;
        if (!dgrads && !rep_grads) continue;
        // dL/dz = dL/dlogits * W ; head grads from z
        Matrix dlogits = ce.grad;
        for (auto& v : dlogits.data) v /= k;
        if (dgrads) {
            Matrix gw = matmul_at_b(dlogits, z);  // k x p
            for (std::size_t i = 0; i < gw.data.size(); ++i) dgrads->head_w.data[i] += gw.data[i];
            for (std::size_t j = 0; j < dlogits.cols; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < dlogits.rows; ++i) s += dlogits(i, j);
                dgrads->head_b[j] += s;
            }
        }
        Matrix dz = matmul(dlogits, disc.head_w);  // n x p
        Matrix drep;
        MlpGrads zg = mlp_backward(disc.zeta, zt, dz, rep_grads ? &drep : nullptr);
        if (dgrads) accumulate(dgrads->zeta, zg);
        if (rep_grads) (*rep_grads)[di] = std::move(drep);
    }
    return loss;
}

}  // namespace detail

struct SurrogateDiscResult {
    double loss = 0.0;
    DiscriminatorGrads grads;
};

inline SurrogateDiscResult surrogate_discriminator_loss(const std::vector<DomainDataset>& datasets,
                                                        const ModelBundle& bundle) {
    check_domains(datasets, bundle.dims.k);
    SurrogateDiscResult r;
    r.grads.zeta = zero_grads_like(bundle.discriminator.zeta);
    r.grads.head_w = Matrix(bundle.discriminator.head_w.rows, bundle.discriminator.head_w.cols);
    r.grads.head_b.assign(bundle.discriminator.head_b.size(), 0.0);
    std::vector<Matrix> reps;
    reps.reserve(datasets.size());
    for (const auto& ds : datasets) reps.push_back(encode(bundle.encoder, ds.xs));
    r.loss = detail::surrogate_disc_core(datasets, bundle, reps, &r.grads, nullptr);
    return r;
}

struct SurrogateEncPredResult {
    double loss = 0.0;        // BCE prediction loss minus lambda * surrogate adversary loss
    double pred_loss = 0.0;
    double adv_loss = 0.0;
    MlpGrads encoder;
    MlpGrads predictor;
};

// Gradient-reversal realization of the min-max: the encoder descends the
// prediction BCE and ascends the discriminator's surrogate; the predictor
// sees only the prediction branch.
inline SurrogateEncPredResult surrogate_encoder_predictor_loss(
    const std::vector<DomainDataset>& datasets, const ModelBundle& bundle, double lambda) {
    check_domains(datasets, bundle.dims.k);
    SurrogateEncPredResult r;
    r.encoder = zero_grads_like(bundle.encoder.net);
    r.predictor = zero_grads_like(bundle.predictor.net);
    double k = static_cast<double>(datasets.size());

    std::vector<MlpTrace> enc_traces;
    std::vector<Matrix> reps;
    enc_traces.reserve(datasets.size());
    for (const auto& ds : datasets) {
        enc_traces.push_back(mlp_forward(bundle.encoder.net, ds.xs));
        reps.push_back(enc_traces.back().output());
    }

    // adversary branch: gradients at the representations
    std::vector<Matrix> adv_rep_grads(datasets.size());
    r.adv_loss = detail::surrogate_disc_core(datasets, bundle, reps, nullptr, &adv_rep_grads);

    for (std::size_t di = 0; di < datasets.size(); ++di) {
        const auto& ds = datasets[di];
        MlpTrace pt = mlp_forward(bundle.predictor.net, reps[di]);
        std::vector<double> probs(pt.output().data);
        BceResult bce = bce_loss(probs, ds.ys);
        r.pred_loss += bce.loss / k;
        Matrix dprob(ds.size(), 1);
        for (std::size_t j = 0; j < ds.size(); ++j) dprob(j, 0) = bce.grad[j] / k;
        Matrix drep_pred;
        MlpGrads pg = mlp_backward(bundle.predictor.net, pt, dprob, &drep_pred);
        accumulate(r.predictor, pg);
        // combined gradient at the representations flows into the encoder
        Matrix drep = drep_pred;
        for (std::size_t i = 0; i < drep.data.size(); ++i)
            drep.data[i] -= lambda * adv_rep_grads[di].data[i];
        MlpGrads eg = mlp_backward(bundle.encoder.net, enc_traces[di], drep);
        accumulate(r.encoder, eg);
    }
    r.loss = r.pred_loss - lambda * r.adv_loss;
    return r;
}

}  // namespace rvr
