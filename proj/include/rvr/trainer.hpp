#pragma once
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvr/adam.hpp"
#include "rvr/objective.hpp"

namespace rvr {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    double lambda = 0.1;
    std::size_t disc_steps_per_enc_step = 1;
    std::uint64_t seed = 0;
    double validation_fraction = 0.2;
    std::string preset = "synthetic";
};

struct EpochRecord {
    std::size_t epoch = 0;
    double pred_surrogate = 0.0;
    double adv_surrogate = 0.0;
    double val_pred01 = 0.0;
    double val_adv01 = 0.0;
    double val_accuracy = 0.0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "epoch,pred_surrogate,adv_surrogate,val_pred01,val_adv01,val_accuracy\n";
        for (const auto& e : epochs)
            out << e.epoch << ',' << e.pred_surrogate << ',' << e.adv_surrogate << ','
                << e.val_pred01 << ',' << e.val_adv01 << ',' << e.val_accuracy << '\n';
        return out.str();
    }
};

// Per-domain shuffled split; validation gets ceil(fraction * n_i) points.
inline std::pair<std::vector<DomainDataset>, std::vector<DomainDataset>> split_train_validation(
    const std::vector<DomainDataset>& datasets, double fraction, Rng& rng) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw std::invalid_argument("validation fraction must be in (0,1)");
    std::vector<DomainDataset> train, val;
    for (const auto& ds : datasets) {
        std::size_t n = ds.size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        std::size_t nval = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(n)));
        if (nval == 0 || nval >= n)
            throw std::invalid_argument("split: domain " + std::to_string(ds.domain_id) +
                                        " too small to split");
        auto take = [&](std::size_t begin, std::size_t end) {
            DomainDataset out;
            out.domain_id = ds.domain_id;
            out.xs = Matrix(end - begin, ds.xs.cols);
            out.ys.resize(end - begin);
            for (std::size_t r = begin; r < end; ++r) {
                std::size_t src = idx[r];
                std::copy(ds.xs.row(src), ds.xs.row(src) + ds.xs.cols, out.xs.row(r - begin));
                out.ys[r - begin] = ds.ys[src];
            }
            return out;
        };
        val.push_back(take(0, nval));
        train.push_back(take(nval, n));
    }
    return {train, val};
}

struct TrainResult {
    ModelBundle bundle;
    TrainTrace trace;
};

namespace detail {

inline DomainDataset slice(const DomainDataset& ds, const std::vector<std::size_t>& order,
                           std::size_t begin, std::size_t count) {
    DomainDataset out;
    out.domain_id = ds.domain_id;
    out.xs = Matrix(count, ds.xs.cols);
    out.ys.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
        std::size_t src = order[begin + r];
        std::copy(ds.xs.row(src), ds.xs.row(src) + ds.xs.cols, out.xs.row(r));
        out.ys[r] = ds.ys[src];
    }
    return out;
}

}  // namespace detail

// Alternating minimax updates, Eq.-(3)-style domain-balanced batching: every
// round draws one minibatch from each domain, runs disc_steps discriminator
// updates then one encoder+predictor update. Deterministic per seed.
inline TrainResult train(const ModelBundle& initial, const std::vector<DomainDataset>& datasets,
                         const TrainConfig& cfg) {
    check_domains(datasets, initial.dims.k);
    Rng rng(cfg.seed);
    Rng split_rng = rng.split();
    Rng shuffle_rng = rng.split();
    Rng eval_rng = rng.split();

    auto [train_sets, val_sets] = split_train_validation(datasets, cfg.validation_fraction,
                                                         split_rng);
    TrainResult res;
    res.bundle = initial;
    ModelBundle& b = res.bundle;

    AdamState enc_state = make_adam_state(b.encoder.net);
    AdamState pred_state = make_adam_state(b.predictor.net);
    AdamState zeta_state = make_adam_state(b.discriminator.zeta);
    // head (W, B) updated with its own Adam moments, stored as a 1-layer net shape
    MlpParams head_shape;
    head_shape.layers.push_back({b.discriminator.head_w, b.discriminator.head_b});
    AdamState head_state = make_adam_state(head_shape);

    // equal per-domain batch counts per epoch
    std::size_t min_n = train_sets.front().size();
    for (const auto& t : train_sets) min_n = std::min(min_n, t.size());
    std::size_t rounds = std::max<std::size_t>(1, min_n / cfg.batch_size);

    std::vector<std::vector<std::size_t>> orders(train_sets.size());
    for (std::size_t d = 0; d < train_sets.size(); ++d) {
        orders[d].resize(train_sets[d].size());
        for (std::size_t i = 0; i < orders[d].size(); ++i) orders[d][i] = i;
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (auto& ord : orders)
            for (std::size_t i = ord.size(); i > 1; --i)
                std::swap(ord[i - 1], ord[shuffle_rng.below(i)]);

        double pred_sur = 0.0, adv_sur = 0.0;
        for (std::size_t round = 0; round < rounds; ++round) {
            std::vector<DomainDataset> batch;
            batch.reserve(train_sets.size());
            for (std::size_t d = 0; d < train_sets.size(); ++d) {
                std::size_t bs = std::min(cfg.batch_size, train_sets[d].size());
                std::size_t begin = (round * cfg.batch_size) % (train_sets[d].size() - bs + 1);
                batch.push_back(detail::slice(train_sets[d], orders[d], begin, bs));
            }
            std::sort(batch.begin(), batch.end(),
                      [](const DomainDataset& a, const DomainDataset& c) {
                          return a.domain_id < c.domain_id;
                      });

            for (std::size_t step = 0; step < cfg.disc_steps_per_enc_step; ++step) {
                SurrogateDiscResult dres = surrogate_discriminator_loss(batch, b);
                adam_step(b.discriminator.zeta, dres.grads.zeta, zeta_state, cfg.learning_rate);
                MlpParams head;
                head.layers.push_back({b.discriminator.head_w, b.discriminator.head_b});
                MlpGrads hg;
                hg.layers.push_back({dres.grads.head_w, dres.grads.head_b});
                adam_step(head, hg, head_state, cfg.learning_rate);
                b.discriminator.head_w = head.layers[0].weight;
                b.discriminator.head_b = head.layers[0].bias;
                if (step + 1 == cfg.disc_steps_per_enc_step) adv_sur += dres.loss;
            }

            SurrogateEncPredResult eres = surrogate_encoder_predictor_loss(batch, b, cfg.lambda);
            if (!std::isfinite(eres.loss))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
            adam_step(b.encoder.net, eres.encoder, enc_state, cfg.learning_rate);
            adam_step(b.predictor.net, eres.predictor, pred_state, cfg.learning_rate);
            pred_sur += eres.pred_loss;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.pred_surrogate = pred_sur / static_cast<double>(rounds);
        rec.adv_surrogate = adv_sur / static_cast<double>(rounds);
        LossReport rep = empirical_loss(val_sets, b, cfg.lambda, eval_rng);
        rec.val_pred01 = rep.pred_term;
        rec.val_adv01 = rep.adv_term;
        rec.val_accuracy = 1.0 - rep.pred_term;
        res.trace.epochs.push_back(rec);
    }
    return res;
}

// Stability-window selection: index of the epoch ending the trailing window
// with the best mean validation accuracy.
inline std::size_t best_stability_epoch(const TrainTrace& trace, std::size_t window = 10) {
    if (trace.epochs.empty()) throw std::invalid_argument("empty trace");
    window = std::min(window, trace.epochs.size());
    double best = -1.0;
    std::size_t best_end = trace.epochs.size();
    for (std::size_t end = window; end <= trace.epochs.size(); ++end) {
        double mean = 0.0;
        for (std::size_t i = end - window; i < end; ++i) mean += trace.epochs[i].val_accuracy;
        mean /= static_cast<double>(window);
        if (mean > best) {
            best = mean;
            best_end = end;
        }
    }
    return best_end;
}

}  // namespace rvr
