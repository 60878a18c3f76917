#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rvr/trainer.hpp"

using namespace rvr;

namespace {

ModelBundle tiny_bundle(std::size_t d, std::size_t s, std::size_t k, Rng& rng) {
    ModelBundle b;
    b.dims = {d, s, s, k};
    b.preset = "test";
    b.encoder.net = make_mlp(d, {8}, s, OutputActivation::Identity, rng);
    b.discriminator.zeta = make_mlp(s, {8}, s, OutputActivation::Identity, rng);
    b.discriminator.head_w = rvrtest::random_matrix(k, s, rng, 0.3);
    b.discriminator.head_b.assign(k, 0.0);
    b.predictor.net = make_mlp(s, {8}, 1, OutputActivation::Sigmoid, rng);
    return b;
}

// two clusters along the label axis; `domain_axis_shift` leaks domain identity
std::vector<DomainDataset> cluster_data(std::size_t k, std::size_t n, std::size_t d,
                                        double domain_axis_shift, Rng& rng) {
    std::vector<DomainDataset> out;
    for (std::size_t dom = 0; dom < k; ++dom) {
        DomainDataset ds;
        ds.domain_id = static_cast<int>(dom);
        ds.xs = Matrix(n, d);
        ds.ys.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
            ds.ys[i] = y;
            ds.xs(i, 0) = (y > 0.5 ? 2.0 : -2.0) + 0.3 * rng.gaussian();
            for (std::size_t j = 1; j < d; ++j) ds.xs(i, j) = 0.3 * rng.gaussian();
            ds.xs(i, d - 1) += domain_axis_shift * static_cast<double>(dom);
        }
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace

TEST_CASE("split sizes follow ceil(fraction * n)") {
    Rng rng(1);
    DomainDataset ds;
    ds.domain_id = 0;
    ds.xs = rvrtest::random_matrix(10, 2, rng);
    ds.ys.assign(10, 0.0);
    auto [tr, va] = split_train_validation({ds}, 0.2, rng);
    CHECK(tr[0].size() == 8);
    CHECK(va[0].size() == 2);

    DomainDataset small;
    small.domain_id = 1;
    small.xs = rvrtest::random_matrix(4, 2, rng);
    small.ys.assign(4, 0.0);
    auto [t2, v2] = split_train_validation({small}, 0.5, rng);
    CHECK(t2[0].size() == 2);
    CHECK(v2[0].size() == 2);
}

TEST_CASE("split is deterministic and partitions the data") {
    Rng rng(7);
    DomainDataset ds;
    ds.domain_id = 0;
    ds.xs = rvrtest::random_matrix(9, 3, rng);
    ds.ys.resize(9);
    for (std::size_t i = 0; i < 9; ++i) ds.ys[i] = static_cast<double>(i);
    Rng s1(5), s2(5);
    auto [t1, v1] = split_train_validation({ds}, 0.3, s1);
    auto [t2, v2] = split_train_validation({ds}, 0.3, s2);
    CHECK(t1[0].ys == t2[0].ys);
    CHECK(v1[0].ys == v2[0].ys);
    std::vector<double> all = t1[0].ys;
    all.insert(all.end(), v1[0].ys.begin(), v1[0].ys.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 9; ++i) CHECK(all[i] == static_cast<double>(i));
}

TEST_CASE("split rejects degenerate inputs") {
    Rng rng(2);
    DomainDataset ds;
    ds.domain_id = 0;
    ds.xs = rvrtest::random_matrix(1, 2, rng);
    ds.ys.assign(1, 0.0);
    CHECK_THROWS_AS(split_train_validation({ds}, 0.5, rng), std::invalid_argument);
    DomainDataset ok;
    ok.domain_id = 0;
    ok.xs = rvrtest::random_matrix(10, 2, rng);
    ok.ys.assign(10, 0.0);
    CHECK_THROWS_AS(split_train_validation({ok}, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(split_train_validation({ok}, 1.0, rng), std::invalid_argument);
}

TEST_CASE("training fits a separable single-domain problem at lambda 0") {
    Rng rng(11);
    ModelBundle b = tiny_bundle(3, 3, 1, rng);
    auto data = cluster_data(1, 400, 3, 0.0, rng);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 64;
    cfg.learning_rate = 0.01;
    cfg.lambda = 0.0;
    cfg.seed = 3;
    TrainResult res = train(b, data, cfg);
    CHECK(res.trace.epochs.size() == 60);
    CHECK(res.trace.epochs.back().val_accuracy >= 0.99);
}

TEST_CASE("training is deterministic per seed") {
    Rng rng(13);
    ModelBundle b = tiny_bundle(3, 3, 2, rng);
    auto data = cluster_data(2, 120, 3, 1.0, rng);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.seed = 21;
    TrainResult r1 = train(b, data, cfg);
    TrainResult r2 = train(b, data, cfg);
    for (std::size_t l = 0; l < r1.bundle.encoder.net.layers.size(); ++l)
        for (std::size_t i = 0; i < r1.bundle.encoder.net.layers[l].weight.data.size(); ++i)
            CHECK(r1.bundle.encoder.net.layers[l].weight.data[i] ==
                  r2.bundle.encoder.net.layers[l].weight.data[i]);
    for (std::size_t e = 0; e < r1.trace.epochs.size(); ++e) {
        CHECK(r1.trace.epochs[e].pred_surrogate == r2.trace.epochs[e].pred_surrogate);
        CHECK(r1.trace.epochs[e].val_accuracy == r2.trace.epochs[e].val_accuracy);
    }
}

TEST_CASE("adversarial penalty suppresses domain identifiability") {
    // the last covariate reveals the domain; with lambda > 0 the trained
    // representation should make the adversary's 0-1 score drop toward the
    // uninformed level (1.0) relative to lambda = 0 training
    Rng rng(17);
    auto data = cluster_data(2, 300, 4, 4.0, rng);

    auto adv_after_training = [&](double lambda, std::uint64_t seed) {
        Rng brng(seed);
        ModelBundle b = tiny_bundle(4, 3, 2, brng);
        TrainConfig cfg;
        cfg.epochs = 40;
        cfg.batch_size = 64;
        cfg.learning_rate = 0.01;
        cfg.lambda = lambda;
        cfg.disc_steps_per_enc_step = 3;
        cfg.seed = seed;
        TrainResult res = train(b, data, cfg);
        double mean = 0.0;
        std::size_t tail = 5;
        for (std::size_t i = res.trace.epochs.size() - tail; i < res.trace.epochs.size(); ++i)
            mean += res.trace.epochs[i].val_adv01;
        return mean / static_cast<double>(tail);
    };

    double free_sum = 0.0, pen_sum = 0.0;
    for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        free_sum += adv_after_training(0.0, seed);
        pen_sum += adv_after_training(1.0, seed);
    }
    CHECK(pen_sum < free_sum);
}

TEST_CASE("trace csv format") {
    TrainTrace t;
    t.epochs.push_back({1, 0.5, 0.25, 0.125, 1.5, 0.875});
    std::string csv = t.to_csv();
    CHECK(csv.find("epoch,pred_surrogate,adv_surrogate,val_pred01,val_adv01,val_accuracy\n") ==
          0);
    CHECK(csv.find("1,0.5,0.25,0.125,1.5,0.875\n") != std::string::npos);
}

TEST_CASE("best_stability_epoch picks the strongest trailing window") {
    TrainTrace t;
    for (std::size_t e = 1; e <= 30; ++e) {
        EpochRecord r;
        r.epoch = e;
        r.val_accuracy = e <= 20 ? 0.5 + 0.02 * static_cast<double>(e) : 0.6;
        t.epochs.push_back(r);
    }
    std::size_t best = best_stability_epoch(t, 10);
    CHECK(best == 20);  // epochs 11..20 have the highest mean accuracy
    CHECK_THROWS_AS(best_stability_epoch(TrainTrace{}), std::invalid_argument);
}
