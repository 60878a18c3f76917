#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "rvr/worlds.hpp"

using namespace rvr;

TEST_CASE("build_world shared structure at default sizes") {
    WorldSpec w = build_world(5, RuleVariant::LinearInteraction);
    CHECK(w.d == 30);
    CHECK(w.n_base == 11);
    CHECK(w.common_subset.size() == 20);
    CHECK(w.complement.size() == 10);
    CHECK(w.w_hat.size() == 1);
    for (double v : w.w_hat[0]) {
        CHECK(v >= 0.25);
        CHECK(v <= 2.0);
    }
    CHECK(w.interaction_coeff >= 0.25);
    CHECK(w.interaction_coeff <= 1.0);
    CHECK(w.inter_a != w.inter_b);
    CHECK(w.inter_ap != w.inter_bp);
    // A and A^c partition {0..29}
    std::vector<std::size_t> all = w.common_subset;
    all.insert(all.end(), w.complement.begin(), w.complement.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 30; ++i) CHECK(all[i] == i);
    // uniform mu
    for (double m : w.mu) CHECK(m == doctest::Approx(1.0 / 11.0));

    CHECK(w.domains.size() == 11);
    for (const auto& b : w.domains) {
        CHECK(b.base_rate == 0.7);
        for (double m : b.mean) {
            CHECK(m >= -3.0);
            CHECK(m <= 3.0);
        }
        CHECK(b.eps_inv.size() == 20);
        for (double e : b.eps_inv) {
            CHECK(e >= -0.1);
            CHECK(e <= 0.1);
        }
        CHECK(b.eps_dom.size() == 10);
        for (double e : b.eps_dom) {
            CHECK(e >= -2.0);
            CHECK(e <= 2.0);
        }
        CHECK(b.eps_inv2.empty());
    }

    WorldSpec o = build_world(5, RuleVariant::LogicalOr);
    CHECK(o.w_hat.size() == 3);
    CHECK(o.domains[0].eps_inv2.size() == 20);
}

TEST_CASE("build_world is deterministic in the seed") {
    WorldSpec a = build_world(9, RuleVariant::LinearInteraction);
    WorldSpec b = build_world(9, RuleVariant::LinearInteraction);
    WorldSpec c = build_world(10, RuleVariant::LinearInteraction);
    CHECK(a.w_hat[0] == b.w_hat[0]);
    CHECK(a.common_subset == b.common_subset);
    CHECK(a.domains[3].mean == b.domains[3].mean);
    CHECK(a.domains[3].sigma_factor.data == b.domains[3].sigma_factor.data);
    CHECK(a.w_hat[0] != c.w_hat[0]);
}

TEST_CASE("draw_domains behavior") {
    WorldSpec w = build_world(1, RuleVariant::LinearInteraction, 4, 6);
    Rng rng(2);
    CHECK(draw_domains(w, 0, rng).empty());

    w.mu = {0.0, 1.0, 0.0, 0.0};
    for (std::size_t idx : draw_domains(w, 50, rng)) CHECK(idx == 1);

    w.mu = {0.25, 0.25, 0.25, 0.25};
    auto draws = draw_domains(w, 10000, rng);
    std::vector<int> counts(4, 0);
    for (std::size_t idx : draws) ++counts[idx];
    for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) < 0.015);
}

TEST_CASE("raw draws have the specified mean and covariance") {
    WorldSpec w = build_world(3, RuleVariant::LinearInteraction, 2, 6);
    const auto& b = w.domains[0];
    Rng rng(4);
    const int n = 40000;
    std::vector<double> mean(6, 0.0);
    Matrix cov(6, 6);
    std::vector<std::vector<double>> draws;
    draws.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto x = detail::raw_gaussian_draw(w, b, rng);
        for (int j = 0; j < 6; ++j) mean[j] += x[j] / n;
        draws.push_back(std::move(x));
    }
    for (const auto& x : draws)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j)
                cov(i, j) += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1);
    Matrix expect = matmul_a_bt(b.sigma_factor, b.sigma_factor);
    double maxabs = 0.0;
    for (double v : expect.data) maxabs = std::max(maxabs, std::abs(v));
    for (std::size_t i = 0; i < 36; ++i)
        CHECK(std::abs(cov.data[i] - expect.data[i]) < 0.1 * maxabs);
    for (int j = 0; j < 6; ++j) CHECK(std::abs(mean[j] - b.mean[j]) < 0.1);
    // sigma sigma^T is positive semidefinite on random quadratic forms
    Rng qr(5);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v(6);
        for (auto& u : v) u = qr.uniform(-1.0, 1.0);
        double q = 0.0;
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) q += v[i] * expect(i, j) * v[j];
        CHECK(q >= -1e-9);
    }
}

TEST_CASE("accepted samples satisfy both rules exactly") {
    WorldSpec w = build_world(6, RuleVariant::LinearInteraction, 3, 9);
    Rng rng(7);
    DomainDataset ds = sample_domain(w, 1, 60, rng);
    CHECK(ds.domain_id == 1);
    CHECK(ds.xs.rows == 60);
    const auto& b = w.domains[1];
    for (std::size_t i = 0; i < 60; ++i) {
        std::vector<double> x(ds.xs.row(i), ds.xs.row(i) + w.d);
        double inv = detail::invariant_rule_value(w, b, x);
        double dom = detail::domain_rule_value(w, b, x);
        CHECK(ds.ys[i] == (inv > 0.0 ? 1.0 : 0.0));
        CHECK(ds.ys[i] == (dom > 0.0 ? 1.0 : 0.0));
    }
    Rng r2(7);
    DomainDataset again = sample_domain(w, 1, 60, r2, 5);
    CHECK(again.domain_id == 5);
    CHECK(again.xs.data == ds.xs.data);
}

TEST_CASE("label frequency matches acceptance-conditional probability") {
    // P(y=1 | accept) = q p11 / (q p11 + (1-q) p00) where p11 = P(both rules
    // positive), p00 = P(both rules nonpositive); estimate both sides by MC
    WorldSpec w = build_world(8, RuleVariant::LinearInteraction, 2, 6);
    const auto& b = w.domains[0];
    Rng rng(9);
    const int n = 60000;
    double p11 = 0.0, p00 = 0.0;
    for (int i = 0; i < n; ++i) {
        auto x = detail::raw_gaussian_draw(w, b, rng);
        bool inv = detail::invariant_rule_value(w, b, x) > 0.0;
        bool dom = detail::domain_rule_value(w, b, x) > 0.0;
        if (inv && dom) p11 += 1.0 / n;
        if (!inv && !dom) p00 += 1.0 / n;
    }
    double q = b.base_rate;
    double expect = q * p11 / (q * p11 + (1.0 - q) * p00);
    Rng srng(10);
    DomainDataset ds = sample_domain(w, 0, 4000, srng);
    double freq = 0.0;
    for (double y : ds.ys) freq += y / 4000.0;
    CHECK(std::abs(freq - expect) < 0.03);
}

TEST_CASE("logical_or label law") {
    WorldSpec w = build_world(11, RuleVariant::LogicalOr, 2, 6);
    // pin the scores by zeroing noise and fixing x
    for (auto& e : w.domains[0].eps_inv) e = 0.0;
    for (auto& e : w.domains[0].eps_inv2) e = 0.0;
    std::vector<double> x(6, 0.0);
    // choose x so s1, s2 are moderate
    x[w.common_subset[0]] = 0.5;
    double s1 = w.w_hat[0][0] * 0.5, s2 = w.w_hat[1][0] * 0.5;
    double p1 = 1.0 / (1.0 + std::exp(-s1)), p2 = 1.0 / (1.0 + std::exp(-s2));
    double expect = 1.0 - (1.0 - p1) * (1.0 - p2);
    Rng rng(12);
    double freq = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) freq += label_logical_or(w, 0, x, rng) / n;
    CHECK(std::abs(freq - expect) < 0.01);

    // saturated cases are deterministic
    std::vector<double> hi(6, 0.0);
    hi[w.common_subset[0]] = 100.0;
    CHECK(label_logical_or(w, 0, hi, rng) == 1.0);
    WorldSpec lin = build_world(11, RuleVariant::LinearInteraction, 2, 6);
    CHECK_THROWS_AS(label_logical_or(lin, 0, x, rng), std::invalid_argument);
}

TEST_CASE("sampler aborts on structurally conflicting worlds") {
    WorldSpec w = build_world(13, RuleVariant::LinearInteraction, 2, 6);
    BaseDomainSpec& b = w.domains[0];
    b.sigma_factor = Matrix(6, 6);  // zero noise: x is the mean, constant
    // force the invariant rule positive and the domain rule negative
    for (auto& m : b.mean) m = 0.0;
    b.mean[w.common_subset[0]] = 10.0;
    b.mean[w.complement[0]] = -10.0;
    for (auto& e : b.eps_inv) e = 0.0;
    for (auto& e : b.eps_dom) e = 0.0;
    std::vector<double> x(b.mean);
    REQUIRE(detail::invariant_rule_value(w, b, x) > 0.0);
    REQUIRE(detail::domain_rule_value(w, b, x) < 0.0);
    Rng rng(14);
    CHECK_THROWS_AS(sample_domain(w, 0, 1, rng), AcceptanceStall);
}

TEST_CASE("world json round trip") {
    for (auto variant : {RuleVariant::LinearInteraction, RuleVariant::LogicalOr}) {
        WorldSpec a = build_world(15, variant, 3, 9);
        WorldSpec b = world_from_json(world_to_json(a));
        CHECK(to_string(b.variant) == to_string(a.variant));
        CHECK(b.w_hat == a.w_hat);
        CHECK(b.common_subset == a.common_subset);
        CHECK(b.complement == a.complement);
        CHECK(b.interaction_coeff == a.interaction_coeff);
        CHECK(b.inter_a == a.inter_a);
        CHECK(b.inter_bp == a.inter_bp);
        REQUIRE(b.domains.size() == a.domains.size());
        for (std::size_t i = 0; i < a.domains.size(); ++i) {
            CHECK(b.domains[i].mean == a.domains[i].mean);
            CHECK(b.domains[i].sigma_factor.data == a.domains[i].sigma_factor.data);
            CHECK(b.domains[i].eps_inv == a.domains[i].eps_inv);
            CHECK(b.domains[i].eps_inv2 == a.domains[i].eps_inv2);
            CHECK(b.domains[i].eps_dom == a.domains[i].eps_dom);
        }
    }
}

TEST_CASE("dataset csv round trip") {
    WorldSpec w = build_world(16, RuleVariant::LinearInteraction, 3, 6);
    Rng rng(17);
    std::vector<DomainDataset> sets;
    sets.push_back(sample_domain(w, 0, 5, rng, 0));
    sets.push_back(sample_domain(w, 2, 7, rng, 1));
    std::string csv = datasets_to_csv(sets);
    CHECK(csv.rfind("domain_id,y,x0,x1,x2,x3,x4,x5\n", 0) == 0);
    auto back = datasets_from_csv(csv);
    REQUIRE(back.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(back[s].domain_id == sets[s].domain_id);
        CHECK(back[s].ys == sets[s].ys);
        REQUIRE(back[s].xs.data.size() == sets[s].xs.data.size());
        for (std::size_t i = 0; i < back[s].xs.data.size(); ++i)
            CHECK(back[s].xs.data[i] == sets[s].xs.data[i]);
    }
    CHECK_THROWS_AS(datasets_from_csv(""), IoError);
}
