#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvr/io.hpp"
#include "rvr/objective.hpp"
#include "rvr/rng.hpp"

namespace rvr {

enum class RuleVariant { LinearInteraction, LogicalOr };

inline std::string to_string(RuleVariant v) {
    return v == RuleVariant::LinearInteraction ? "linear_interaction" : "logical_or";
}

inline RuleVariant rule_variant_from_string(const std::string& s) {
    if (s == "linear_interaction") return RuleVariant::LinearInteraction;
    if (s == "logical_or") return RuleVariant::LogicalOr;
    throw std::invalid_argument("unknown rule variant: " + s);
}

struct BaseDomainSpec {
    std::vector<double> mean;       // d, entries U[-3,3]
    Matrix sigma_factor;            // d x d, entries U[-1,1]; covariance = sigma sigma^T
    double base_rate = 0.7;
    std::vector<double> eps_inv;    // |A|, U[-0.1,0.1] perturbation of the invariant rule
    std::vector<double> eps_inv2;   // |A|, second invariant perturbation (logical_or only)
    std::vector<double> eps_dom;    // |A^c|, U[-2,2] perturbation of the domain rule
};

struct WorldSpec {
    RuleVariant variant = RuleVariant::LinearInteraction;
    std::size_t d = 30;
    std::size_t n_base = 11;        // N base domains (default 10 seen + 1 unseen)
    std::vector<double> mu;         // probability vector over base domains
    std::vector<std::vector<double>> w_hat;  // 1 shared vector, or 3 for logical_or; U[0.25,2]
    std::vector<std::size_t> common_subset;  // A, |A| = 20 covariate indices
    std::vector<std::size_t> complement;     // A^c
    double interaction_coeff = 0.0;          // U[0.25,1]; distinct from the tuning lambda
    std::size_t inter_a = 0, inter_b = 0;    // positions within A
    std::size_t inter_ap = 0, inter_bp = 0;  // positions within A^c
    std::uint64_t seed = 0;
    std::vector<BaseDomainSpec> domains;
};

// All draws come from a single seeded stream in a fixed order: shared
// parameters first, then per-domain specs in index order.
inline WorldSpec build_world(std::uint64_t seed, RuleVariant variant, std::size_t n_base = 11,
                             std::size_t d = 30) {
    WorldSpec w;
    w.variant = variant;
    w.d = d;
    w.n_base = n_base;
    w.seed = seed;
    Rng rng(seed);

    std::size_t n_shared = variant == RuleVariant::LogicalOr ? 3 : 1;
    std::size_t a_size = d * 2 / 3;  // 20 of 30 at the default dimension
    for (std::size_t v = 0; v < n_shared; ++v) {
        std::vector<double> wh(a_size);
        for (auto& x : wh) x = rng.uniform(0.25, 2.0);
        w.w_hat.push_back(std::move(wh));
    }
    std::vector<std::size_t> perm(d);
    for (std::size_t i = 0; i < d; ++i) perm[i] = i;
    for (std::size_t i = d; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    w.common_subset.assign(perm.begin(), perm.begin() + a_size);
    w.complement.assign(perm.begin() + a_size, perm.end());
    std::sort(w.common_subset.begin(), w.common_subset.end());
    std::sort(w.complement.begin(), w.complement.end());

    w.interaction_coeff = rng.uniform(0.25, 1.0);
    w.inter_a = rng.below(a_size);
    do { w.inter_b = rng.below(a_size); } while (w.inter_b == w.inter_a);
    std::size_t c_size = d - a_size;
    w.inter_ap = rng.below(c_size);
    do { w.inter_bp = rng.below(c_size); } while (w.inter_bp == w.inter_ap);

    w.mu.assign(n_base, 1.0 / static_cast<double>(n_base));

    for (std::size_t i = 0; i < n_base; ++i) {
        BaseDomainSpec b;
        b.mean.resize(d);
        for (auto& m : b.mean) m = rng.uniform(-3.0, 3.0);
        b.sigma_factor = Matrix(d, d);
        for (auto& v : b.sigma_factor.data) v = rng.uniform(-1.0, 1.0);
        b.base_rate = 0.7;
        b.eps_inv.resize(a_size);
        for (auto& e : b.eps_inv) e = rng.uniform(-0.1, 0.1);
        if (variant == RuleVariant::LogicalOr) {
            b.eps_inv2.resize(a_size);
            for (auto& e : b.eps_inv2) e = rng.uniform(-0.1, 0.1);
        }
        b.eps_dom.resize(c_size);
        for (auto& e : b.eps_dom) e = rng.uniform(-2.0, 2.0);
        w.domains.push_back(std::move(b));
    }
    return w;
}

// i.i.d. categorical draws from mu; repeats allowed.
inline std::vector<std::size_t> draw_domains(const WorldSpec& world, std::size_t k, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        double u = rng.uniform();
        double acc = 0.0;
        std::size_t idx = world.mu.size() - 1;
        for (std::size_t j = 0; j < world.mu.size(); ++j) {
            acc += world.mu[j];
            if (u < acc) {
                idx = j;
                break;
            }
        }
        out.push_back(idx);
    }
    return out;
}

namespace detail {

inline std::vector<double> raw_gaussian_draw(const WorldSpec& w, const BaseDomainSpec& b,
                                             Rng& rng) {
    std::vector<double> z(w.d), x(b.mean);
    for (auto& v : z) v = rng.gaussian();
    for (std::size_t i = 0; i < w.d; ++i) {
        const double* row = b.sigma_factor.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < w.d; ++j) s += row[j] * z[j];
        x[i] += s;
    }
    return x;
}

inline double invariant_rule_value(const WorldSpec& w, const BaseDomainSpec& b,
                                   const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t t = 0; t < w.common_subset.size(); ++t)
        s += (w.w_hat[0][t] + b.eps_inv[t]) * x[w.common_subset[t]];
    s += w.interaction_coeff * x[w.common_subset[w.inter_a]] * x[w.common_subset[w.inter_b]];
    return s;
}

inline double domain_rule_value(const WorldSpec& w, const BaseDomainSpec& b,
                                const std::vector<double>& x) {
    // the domain rule reuses the leading |A^c| shared weights, perturbed by
    // the much larger U[-2,2] noise
    const auto& wh = w.variant == RuleVariant::LogicalOr ? w.w_hat[2] : w.w_hat[0];
    double s = 0.0;
    for (std::size_t t = 0; t < w.complement.size(); ++t)
        s += (wh[t] + b.eps_dom[t]) * x[w.complement[t]];
    if (w.variant == RuleVariant::LinearInteraction)
        s += w.interaction_coeff * x[w.complement[w.inter_ap]] * x[w.complement[w.inter_bp]];
    return s;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

// Stochastic OR-of-two-linear-rules label for one covariate vector.
inline double label_logical_or(const WorldSpec& world, std::size_t domain_index,
                               const std::vector<double>& x, Rng& rng) {
    if (world.variant != RuleVariant::LogicalOr)
        throw std::invalid_argument("label_logical_or: world is not a logical_or variant");
    const auto& b = world.domains.at(domain_index);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < world.common_subset.size(); ++t) {
        double xv = x[world.common_subset[t]];
        s1 += (world.w_hat[0][t] + b.eps_inv[t]) * xv;
        s2 += (world.w_hat[1][t] + b.eps_inv2[t]) * xv;
    }
    bool y1 = rng.bernoulli(detail::sigmoid(s1));
    bool y2 = rng.bernoulli(detail::sigmoid(s2));
    return (y1 || y2) ? 1.0 : 0.0;
}

struct AcceptanceStall : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Accept-reject generator: keep (x, y) only when the drawn label agrees with
// both the invariant rule and the domain-specific rule.
inline DomainDataset sample_domain(const WorldSpec& world, std::size_t domain_index,
                                   std::size_t n, Rng& rng, int assigned_id = -1) {
    const auto& b = world.domains.at(domain_index);
    DomainDataset out;
    out.domain_id = assigned_id >= 0 ? assigned_id : static_cast<int>(domain_index);
    out.xs = Matrix(n, world.d);
    out.ys.resize(n);
    std::size_t accepted = 0;
    std::size_t attempts_since_accept = 0;
    while (accepted < n) {
        if (++attempts_since_accept > 1000000)
            throw AcceptanceStall("sample_domain: >1e6 attempts per accepted point on base domain " +
                                  std::to_string(domain_index));
        std::vector<double> x = detail::raw_gaussian_draw(world, b, rng);
        double y = rng.bernoulli(b.base_rate) ? 1.0 : 0.0;
        double inv_label, dom_label;
        if (world.variant == RuleVariant::LinearInteraction) {
            inv_label = detail::invariant_rule_value(world, b, x) > 0.0 ? 1.0 : 0.0;
        } else {
            inv_label = label_logical_or(world, domain_index, x, rng);
        }
        dom_label = detail::domain_rule_value(world, b, x) > 0.0 ? 1.0 : 0.0;
        if (y == inv_label && y == dom_label) {
            std::copy(x.begin(), x.end(), out.xs.row(accepted));
            out.ys[accepted] = y;
            ++accepted;
            attempts_since_accept = 0;
        }
    }
    return out;
}

// ---- serialization ----

inline nlohmann::json world_to_json(const WorldSpec& w) {
    nlohmann::json j;
    j["variant"] = to_string(w.variant);
    j["d"] = w.d;
    j["n_base"] = w.n_base;
    j["seed"] = w.seed;
    j["mu"] = w.mu;
    j["w_hat"] = w.w_hat;
    j["common_subset"] = w.common_subset;
    j["complement"] = w.complement;
    j["interaction_coeff"] = w.interaction_coeff;
    j["inter_a"] = w.inter_a;
    j["inter_b"] = w.inter_b;
    j["inter_ap"] = w.inter_ap;
    j["inter_bp"] = w.inter_bp;
    j["domains"] = nlohmann::json::array();
    for (const auto& b : w.domains) {
        nlohmann::json jb;
        jb["mean"] = b.mean;
        jb["sigma_factor"] = doubles_to_base64(b.sigma_factor.data);
        jb["base_rate"] = b.base_rate;
        jb["eps_inv"] = b.eps_inv;
        jb["eps_inv2"] = b.eps_inv2;
        jb["eps_dom"] = b.eps_dom;
        j["domains"].push_back(jb);
    }
    return j;
}

inline WorldSpec world_from_json(const nlohmann::json& j) {
    WorldSpec w;
    w.variant = rule_variant_from_string(j.at("variant").get<std::string>());
    w.d = j.at("d").get<std::size_t>();
    w.n_base = j.at("n_base").get<std::size_t>();
    w.seed = j.at("seed").get<std::uint64_t>();
    w.mu = j.at("mu").get<std::vector<double>>();
    w.w_hat = j.at("w_hat").get<std::vector<std::vector<double>>>();
    w.common_subset = j.at("common_subset").get<std::vector<std::size_t>>();
    w.complement = j.at("complement").get<std::vector<std::size_t>>();
    w.interaction_coeff = j.at("interaction_coeff").get<double>();
    w.inter_a = j.at("inter_a").get<std::size_t>();
    w.inter_b = j.at("inter_b").get<std::size_t>();
    w.inter_ap = j.at("inter_ap").get<std::size_t>();
    w.inter_bp = j.at("inter_bp").get<std::size_t>();
    for (const auto& jb : j.at("domains")) {
        BaseDomainSpec b;
        b.mean = jb.at("mean").get<std::vector<double>>();
        b.sigma_factor = Matrix(w.d, w.d);
        b.sigma_factor.data = base64_to_doubles(jb.at("sigma_factor").get<std::string>());
        b.base_rate = jb.at("base_rate").get<double>();
        b.eps_inv = jb.at("eps_inv").get<std::vector<double>>();
        b.eps_inv2 = jb.at("eps_inv2").get<std::vector<double>>();
        b.eps_dom = jb.at("eps_dom").get<std::vector<double>>();
        w.domains.push_back(std::move(b));
    }
    return w;
}

inline std::string datasets_to_csv(const std::vector<DomainDataset>& datasets) {
    std::ostringstream out;
    out.precision(17);
    std::size_t d = datasets.empty() ? 0 : datasets.front().xs.cols;
    out << "domain_id,y";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
    out << '\n';
    for (const auto& ds : datasets)
        for (std::size_t i = 0; i < ds.size(); ++i) {
            out << ds.domain_id << ',' << ds.ys[i];
            for (std::size_t j = 0; j < d; ++j) out << ',' << ds.xs(i, j);
            out << '\n';
        }
    return out.str();
}

inline std::vector<DomainDataset> datasets_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw IoError("datasets_from_csv: empty input");
    std::size_t d = 0;
    for (char c : line)
        if (c == ',') ++d;
    if (d < 1) throw IoError("datasets_from_csv: bad header");
    d -= 1;  // domain_id,y,x0..
    std::map<int, std::vector<std::pair<std::vector<double>, double>>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        int id = std::stoi(cell);
        std::getline(ls, cell, ',');
        double y = std::stod(cell);
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) {
            if (!std::getline(ls, cell, ',')) throw IoError("datasets_from_csv: short row");
            x[j] = std::stod(cell);
        }
        rows[id].push_back({std::move(x), y});
    }
    std::vector<DomainDataset> out;
    for (auto& [id, rs] : rows) {
        DomainDataset ds;
        ds.domain_id = id;
        ds.xs = Matrix(rs.size(), d);
        ds.ys.resize(rs.size());
        for (std::size_t i = 0; i < rs.size(); ++i) {
            std::copy(rs[i].first.begin(), rs[i].first.end(), ds.xs.row(i));
            ds.ys[i] = rs[i].second;
        }
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace rvr
