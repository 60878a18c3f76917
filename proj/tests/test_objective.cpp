#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rvr/objective.hpp"

using namespace rvr;

namespace {

// small hand-built bundle: d -> s encoder, s -> p zeta, k-row head, s -> 1 predictor
ModelBundle small_bundle(std::size_t d, std::size_t s, std::size_t p, std::size_t k, Rng& rng) {
    ModelBundle b;
    b.dims = {d, s, p, k};
    b.preset = "test";
    b.encoder.net = make_mlp(d, {4}, s, OutputActivation::Identity, rng);
    b.discriminator.zeta = make_mlp(s, {4}, p, OutputActivation::Identity, rng);
    b.discriminator.head_w = rvrtest::random_matrix(k, p, rng, 0.5);
    b.discriminator.head_b.assign(k, 0.0);
    b.predictor.net = make_mlp(s, {4}, 1, OutputActivation::Sigmoid, rng);
    return b;
}

std::vector<DomainDataset> random_datasets(std::size_t k, std::size_t n, std::size_t d,
                                           Rng& rng) {
    std::vector<DomainDataset> out;
    for (std::size_t i = 0; i < k; ++i) {
        DomainDataset ds;
        ds.domain_id = static_cast<int>(i);
        ds.xs = rvrtest::random_matrix(n, d, rng);
        ds.ys.resize(n);
        for (auto& y : ds.ys) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace

TEST_CASE("empirical_loss single domain single point") {
    Rng rng(1);
    ModelBundle b = small_bundle(2, 2, 2, 1, rng);
    DomainDataset ds;
    ds.domain_id = 0;
    ds.xs = rvrtest::random_matrix(1, 2, rng);
    ds.ys = {mlp_forward(b.predictor.net, encode(b.encoder, ds.xs)).output()(0, 0) > 0.5 ? 1.0
                                                                                         : 0.0};
    LossReport r = empirical_loss({ds}, b, 0.3, rng);
    CHECK(r.pred_term == 0.0);
    CHECK(r.adv_term == 1.0);  // k = 1: the adversary is always right
    CHECK(r.total == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("empirical_loss constant-wrong predictor saturates") {
    Rng rng(2);
    ModelBundle b = small_bundle(2, 2, 2, 2, rng);
    // force the predictor to emit ~1 always via a huge output bias
    b.predictor.net.layers.back().bias[0] = 50.0;
    auto datasets = random_datasets(2, 10, 2, rng);
    for (auto& ds : datasets)
        for (auto& y : ds.ys) y = 0.0;  // all labels 0, prediction always 1
    LossReport r = empirical_loss(datasets, b, 0.1, rng);
    CHECK(r.pred_term == 1.0);
}

TEST_CASE("empirical_loss equals double-loop oracle") {
    Rng rng(3);
    ModelBundle b = small_bundle(3, 3, 2, 3, rng);
    auto datasets = random_datasets(3, 5, 3, rng);
    Rng eval_rng(77);
    LossReport r = empirical_loss(datasets, b, 0.2, eval_rng);

    Rng oracle_rng(77);  // identical tie-break stream
    double pred = 0.0, adv = 0.0;
    for (const auto& ds : datasets) {
        double mis = 0.0, hit = 0.0;
        for (std::size_t j = 0; j < ds.size(); ++j) {
            Matrix x(1, 3);
            std::copy(ds.xs.row(j), ds.xs.row(j) + 3, x.row(0));
            Matrix rep = encode(b.encoder, x);
            double p = mlp_forward(b.predictor.net, rep).output()(0, 0);
            if ((p > 0.5 ? 1.0 : 0.0) != ds.ys[j]) mis += 1.0;
            Matrix logits = discriminator_logits(b.discriminator, rep);
            std::vector<double> row(logits.row(0), logits.row(0) + logits.cols);
            if (argmax_pi_k(row, oracle_rng) == static_cast<std::size_t>(ds.domain_id))
                hit += 1.0;
        }
        pred += mis / 5.0;
        adv += hit / 5.0;
    }
    pred /= 3.0;
    CHECK(r.pred_term == doctest::Approx(pred).epsilon(1e-12));
    CHECK(r.adv_term == doctest::Approx(adv).epsilon(1e-12));
    CHECK(r.total == doctest::Approx(pred + 0.2 * adv).epsilon(1e-12));
}

TEST_CASE("empirical_loss rejects bad domain ids") {
    Rng rng(4);
    ModelBundle b = small_bundle(2, 2, 2, 2, rng);
    auto datasets = random_datasets(2, 4, 2, rng);
    datasets[1].domain_id = 0;  // duplicate
    CHECK_THROWS_AS(empirical_loss(datasets, b, 0.1, rng), std::invalid_argument);
}

TEST_CASE("empirical_loss is rng-invariant on tie-free logits") {
    Rng rng(5);
    ModelBundle b = small_bundle(3, 3, 3, 3, rng);
    auto datasets = random_datasets(3, 8, 3, rng);
    Rng r1(1), r2(999);
    LossReport a = empirical_loss(datasets, b, 0.1, r1);
    LossReport c = empirical_loss(datasets, b, 0.1, r2);
    CHECK(a.adv_term == c.adv_term);
    CHECK(a.pred_term == c.pred_term);
}

TEST_CASE("surrogate discriminator loss uniform logits is ln k") {
    Rng rng(6);
    ModelBundle b = small_bundle(2, 2, 2, 4, rng);
    // zero head: all logits equal -> uniform softmax
    b.discriminator.head_w = Matrix(4, 2);
    b.discriminator.head_b.assign(4, 0.0);
    auto datasets = random_datasets(4, 6, 2, rng);
    SurrogateDiscResult r = surrogate_discriminator_loss(datasets, b);
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("surrogate discriminator loss vanishes when separated") {
    Rng rng(7);
    ModelBundle b = small_bundle(2, 2, 2, 2, rng);
    // encoder passes x through; first coordinate is a domain tag with a huge head
    b.encoder.net.layers.clear();
    b.encoder.net.layers.push_back({identity(2), {0.0, 0.0}});
    b.discriminator.zeta.layers.clear();
    b.discriminator.zeta.layers.push_back({identity(2), {0.0, 0.0}});
    b.discriminator.head_w = Matrix(2, 2);
    b.discriminator.head_w(0, 0) = -100.0;
    b.discriminator.head_w(1, 0) = 100.0;
    b.discriminator.head_b = {0.0, 0.0};
    std::vector<DomainDataset> datasets(2);
    for (int i = 0; i < 2; ++i) {
        datasets[i].domain_id = i;
        datasets[i].xs = Matrix(4, 2);
        for (std::size_t j = 0; j < 4; ++j) datasets[i].xs(j, 0) = i == 0 ? -1.0 : 1.0;
        datasets[i].ys.assign(4, 0.0);
    }
    CHECK(surrogate_discriminator_loss(datasets, b).loss < 1e-10);
}

TEST_CASE("surrogate discriminator gradients match finite differences") {
    Rng rng(8);
    ModelBundle b = small_bundle(3, 3, 3, 3, rng);
    auto datasets = random_datasets(3, 5, 3, rng);
    SurrogateDiscResult r = surrogate_discriminator_loss(datasets, b);
    auto loss = [&]() { return surrogate_discriminator_loss(datasets, b).loss; };

    CHECK(rvrtest::max_relative_grad_error(b.discriminator.zeta, r.grads.zeta, loss) < 1e-4);

    double worst = 0.0;
    auto probe = [&](double& w, double g) {
        worst = std::max(worst, rvrtest::relative_fd_error(w, g, loss));
    };
    for (std::size_t i = 0; i < b.discriminator.head_w.data.size(); ++i)
        probe(b.discriminator.head_w.data[i], r.grads.head_w.data[i]);
    for (std::size_t i = 0; i < b.discriminator.head_b.size(); ++i)
        probe(b.discriminator.head_b[i], r.grads.head_b[i]);
    CHECK(worst < 1e-4);
}

TEST_CASE("encoder/predictor surrogate reduces to BCE at lambda 0") {
    Rng rng(9);
    ModelBundle b = small_bundle(3, 3, 2, 2, rng);
    auto datasets = random_datasets(2, 6, 3, rng);
    SurrogateEncPredResult r = surrogate_encoder_predictor_loss(datasets, b, 0.0);
    double bce = 0.0;
    for (const auto& ds : datasets) {
        Matrix probs = mlp_forward(b.predictor.net, encode(b.encoder, ds.xs)).output();
        bce += bce_loss(probs.data, ds.ys).loss / 2.0;
    }
    CHECK(r.loss == doctest::Approx(bce).epsilon(1e-12));
    CHECK(r.pred_loss == doctest::Approx(bce).epsilon(1e-12));
}

TEST_CASE("encoder/predictor surrogate is pred minus lambda times adv") {
    Rng rng(10);
    ModelBundle b = small_bundle(3, 3, 2, 2, rng);
    auto datasets = random_datasets(2, 6, 3, rng);
    for (double lambda : {0.0, 0.25, 1.0}) {
        SurrogateEncPredResult r = surrogate_encoder_predictor_loss(datasets, b, lambda);
        CHECK(r.loss ==
              doctest::Approx(r.pred_loss - lambda * r.adv_loss).epsilon(1e-12));
        CHECK(r.adv_loss ==
              doctest::Approx(surrogate_discriminator_loss(datasets, b).loss).epsilon(1e-12));
    }
}

TEST_CASE("encoder/predictor surrogate gradients match finite differences") {
    Rng rng(11);
    ModelBundle b = small_bundle(3, 3, 3, 3, rng);
    auto datasets = random_datasets(3, 5, 3, rng);
    SurrogateEncPredResult r = surrogate_encoder_predictor_loss(datasets, b, 0.3);
    auto loss = [&]() { return surrogate_encoder_predictor_loss(datasets, b, 0.3).loss; };
    CHECK(rvrtest::max_relative_grad_error(b.encoder.net, r.encoder, loss) < 1e-4);
    CHECK(rvrtest::max_relative_grad_error(b.predictor.net, r.predictor, loss) < 1e-4);
}

TEST_CASE("adv_term reaches k on separable instances as the surrogate vanishes") {
    Rng rng(12);
    ModelBundle b = small_bundle(2, 2, 2, 2, rng);
    b.encoder.net.layers.clear();
    b.encoder.net.layers.push_back({identity(2), {0.0, 0.0}});
    b.discriminator.zeta.layers.clear();
    b.discriminator.zeta.layers.push_back({identity(2), {0.0, 0.0}});
    b.discriminator.head_w = Matrix(2, 2);
    b.discriminator.head_w(0, 0) = -100.0;
    b.discriminator.head_w(1, 0) = 100.0;
    b.discriminator.head_b = {0.0, 0.0};
    std::vector<DomainDataset> datasets(2);
    for (int i = 0; i < 2; ++i) {
        datasets[i].domain_id = i;
        datasets[i].xs = Matrix(4, 2);
        for (std::size_t j = 0; j < 4; ++j) datasets[i].xs(j, 0) = i == 0 ? -1.0 : 1.0;
        datasets[i].ys.assign(4, 0.0);
    }
    CHECK(surrogate_discriminator_loss(datasets, b).loss < 1e-10);
    LossReport rep = empirical_loss(datasets, b, 0.1, rng);
    CHECK(rep.adv_term == doctest::Approx(2.0));
    // a constant head achieves adv_term exactly 1 on any two-domain instance
    b.discriminator.head_w = Matrix(2, 2);
    b.discriminator.head_b = {5.0, 0.0};
    LossReport flat = empirical_loss(datasets, b, 0.1, rng);
    CHECK(flat.adv_term == doctest::Approx(1.0));
}
