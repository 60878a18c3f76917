#pragma once
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvr/io.hpp"
#include "rvr/mlp.hpp"

namespace rvr {

struct Encoder {
    MlpParams net;  // R^d -> R^s, identity output
};

struct Predictor {
    MlpParams net;  // R^s -> (0,1), sigmoid output
};

// Base structure zeta followed by a k-row affine head.
struct Discriminator {
    MlpParams zeta;            // R^s -> R^p, identity output
    Matrix head_w;             // k x p
    std::vector<double> head_b;  // k
};

struct BundleDims {
    std::size_t d = 0, s = 0, p = 0, k = 0;
};

struct ModelBundle {
    Encoder encoder;
    Discriminator discriminator;
    Predictor predictor;
    BundleDims dims;
    std::string preset;
};

inline Matrix encode(const Encoder& enc, const Matrix& batch) {
    return mlp_forward(enc.net, batch).output();
}

// logits row i = W * zeta(reps_i) + B
inline Matrix discriminator_logits(const Discriminator& disc, const Matrix& reps) {
    Matrix z = mlp_forward(disc.zeta, reps).output();
    Matrix logits = matmul_a_bt(z, disc.head_w);
    for (std::size_t i = 0; i < logits.rows; ++i)
        for (std::size_t j = 0; j < logits.cols; ++j) logits(i, j) += disc.head_b[j];
    return logits;
}

// Index of the maximal entry; ties broken uniformly at random.
inline std::size_t argmax_pi_k(const std::vector<double>& weights, Rng& rng) {
    if (weights.empty()) throw std::invalid_argument("argmax_pi_k: empty vector");
    double best = weights[0];
    for (double w : weights) best = std::max(best, w);
    std::vector<std::size_t> ties;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] == best) ties.push_back(i);
    return ties.size() == 1 ? ties[0] : ties[rng.below(ties.size())];
}

struct ArchitectureConfig {
    std::size_t d, s, p;
    std::vector<std::size_t> encoder_hidden;
    std::vector<std::size_t> zeta_hidden;
    std::vector<std::size_t> predictor_hidden;
};

inline ArchitectureConfig architecture_preset(const std::string& name, std::size_t p_override = 0) {
    ArchitectureConfig cfg;
    if (name == "synthetic") {
        cfg.d = 30;
        cfg.s = 10;
        cfg.encoder_hidden.assign(6, 10);
        cfg.zeta_hidden.assign(6, 10);
        cfg.predictor_hidden.assign(6, 10);
    } else if (name == "mnist") {
        cfg.d = 2352;
        cfg.s = 50;
        cfg.encoder_hidden.assign(6, 200);
        cfg.zeta_hidden.assign(6, 200);
        cfg.predictor_hidden.assign(6, 200);
    } else {
        throw std::invalid_argument("unknown architecture preset: " + name);
    }
    cfg.p = p_override > 0 ? p_override : cfg.s;  // p defaults to s
    return cfg;
}

inline ModelBundle build_bundle(const std::string& preset, std::size_t k, Rng& rng,
                                std::size_t p_override = 0) {
    if (k == 0) throw std::invalid_argument("build_bundle: k must be positive");
    ArchitectureConfig cfg = architecture_preset(preset, p_override);
    ModelBundle b;
    b.preset = preset;
    b.dims = {cfg.d, cfg.s, cfg.p, k};
    b.encoder.net = make_mlp(cfg.d, cfg.encoder_hidden, cfg.s, OutputActivation::Identity, rng);
    b.discriminator.zeta =
        make_mlp(cfg.s, cfg.zeta_hidden, cfg.p, OutputActivation::Identity, rng);
    double bound = std::sqrt(6.0 / static_cast<double>(cfg.p + k));
    b.discriminator.head_w = Matrix(k, cfg.p);
    for (auto& w : b.discriminator.head_w.data) w = rng.uniform(-bound, bound);
    b.discriminator.head_b.assign(k, 0.0);
    b.predictor.net = make_mlp(cfg.s, cfg.predictor_hidden, 1, OutputActivation::Sigmoid, rng);
    return b;
}

// ---- bundle serialization (bit-exact round trip) ----

inline nlohmann::json mlp_to_json(const MlpParams& p) {
    nlohmann::json j;
    j["output_activation"] = p.output_activation == OutputActivation::Sigmoid ? "sigmoid"
                                                                              : "identity";
    j["layers"] = nlohmann::json::array();
    for (const auto& l : p.layers) {
        nlohmann::json jl;
        jl["rows"] = l.weight.rows;
        jl["cols"] = l.weight.cols;
        jl["weight"] = doubles_to_base64(l.weight.data);
        jl["bias"] = doubles_to_base64(l.bias);
        j["layers"].push_back(jl);
    }
    return j;
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
    MlpParams p;
    p.output_activation = j.at("output_activation") == "sigmoid" ? OutputActivation::Sigmoid
                                                                 : OutputActivation::Identity;
    for (const auto& jl : j.at("layers")) {
        MlpLayer l;
        l.weight.rows = jl.at("rows").get<std::size_t>();
        l.weight.cols = jl.at("cols").get<std::size_t>();
        l.weight.data = base64_to_doubles(jl.at("weight").get<std::string>());
        l.bias = base64_to_doubles(jl.at("bias").get<std::string>());
        if (l.weight.data.size() != l.weight.rows * l.weight.cols)
            throw IoError("mlp_from_json: weight blob size mismatch");
        p.layers.push_back(std::move(l));
    }
    return p;
}

inline nlohmann::json bundle_to_json(const ModelBundle& b) {
    nlohmann::json j;
    j["preset"] = b.preset;
    j["dims"] = {{"d", b.dims.d}, {"s", b.dims.s}, {"p", b.dims.p}, {"k", b.dims.k}};
    j["encoder"] = mlp_to_json(b.encoder.net);
    j["zeta"] = mlp_to_json(b.discriminator.zeta);
    j["head_w_rows"] = b.discriminator.head_w.rows;
    j["head_w_cols"] = b.discriminator.head_w.cols;
    j["head_w"] = doubles_to_base64(b.discriminator.head_w.data);
    j["head_b"] = doubles_to_base64(b.discriminator.head_b);
    j["predictor"] = mlp_to_json(b.predictor.net);
    return j;
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
    ModelBundle b;
    b.preset = j.at("preset").get<std::string>();
    b.dims.d = j.at("dims").at("d").get<std::size_t>();
    b.dims.s = j.at("dims").at("s").get<std::size_t>();
    b.dims.p = j.at("dims").at("p").get<std::size_t>();
    b.dims.k = j.at("dims").at("k").get<std::size_t>();
    b.encoder.net = mlp_from_json(j.at("encoder"));
    b.discriminator.zeta = mlp_from_json(j.at("zeta"));
    b.discriminator.head_w.rows = j.at("head_w_rows").get<std::size_t>();
    b.discriminator.head_w.cols = j.at("head_w_cols").get<std::size_t>();
    b.discriminator.head_w.data = base64_to_doubles(j.at("head_w").get<std::string>());
    b.discriminator.head_b = base64_to_doubles(j.at("head_b").get<std::string>());
    b.predictor.net = mlp_from_json(j.at("predictor"));
    return b;
}

}  // namespace rvr
