// Command-line front end: data generation, training, evaluation, and the
// theory calculators, wired for reproducible runs (manifest + config hash).
#include <filesystem>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvr/eval.hpp"
#include "rvr/mnist.hpp"
#include "rvr/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path + " must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + path + "." + key + "'");
}

json load_config(const std::string& path) {
    std::string text = rvr::read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path + ": " + e.what());
    }
}

void validate_run_config(const json& cfg) {
    check_keys(cfg, {"world", "sampling", "model", "train", "eval", "outputs"}, "config");
    if (cfg.contains("world")) check_keys(cfg["world"], {"variant", "N", "seed"}, "world");
    if (cfg.contains("sampling"))
        check_keys(cfg["sampling"], {"k", "n_per_domain"}, "sampling");
    if (cfg.contains("model")) check_keys(cfg["model"], {"preset", "p"}, "model");
    if (cfg.contains("train"))
        check_keys(cfg["train"],
                   {"epochs", "batch_size", "lr", "lambda", "disc_steps", "seed",
                    "validation_fraction"},
                   "train");
    if (cfg.contains("eval")) check_keys(cfg["eval"], {"seeds"}, "eval");
    if (cfg.contains("outputs")) check_keys(cfg["outputs"], {"directory"}, "outputs");
}

std::string config_hash(const json& cfg) { return rvr::sha256_hex(cfg.dump()); }

void write_manifest(const fs::path& out_dir, const std::string& command, const json& cfg,
                    const json& seeds, const std::vector<std::string>& artifacts) {
    json m;
    m["command"] = command;
    m["config_hash"] = config_hash(cfg);
    m["config"] = cfg;
    m["seeds"] = seeds;
    m["artifacts"] = artifacts;
    rvr::atomic_write(out_dir / "manifest.json", m.dump(2) + "\n");
}

rvr::TrainConfig train_config_from(const json& cfg) {
    rvr::TrainConfig tc;
    if (!cfg.contains("train")) return tc;
    const json& t = cfg["train"];
    if (t.contains("epochs")) tc.epochs = t["epochs"].get<std::size_t>();
    if (t.contains("batch_size")) tc.batch_size = t["batch_size"].get<std::size_t>();
    if (t.contains("lr")) tc.learning_rate = t["lr"].get<double>();
    if (t.contains("lambda")) tc.lambda = t["lambda"].get<double>();
    if (t.contains("disc_steps")) tc.disc_steps_per_enc_step = t["disc_steps"].get<std::size_t>();
    if (t.contains("seed")) tc.seed = t["seed"].get<std::uint64_t>();
    if (t.contains("validation_fraction"))
        tc.validation_fraction = t["validation_fraction"].get<double>();
    if (cfg.contains("model") && cfg["model"].contains("preset"))
        tc.preset = cfg["model"]["preset"].get<std::string>();
    return tc;
}

int cmd_gen_world(const std::string& config_path, const std::string& out) {
    json cfg = load_config(config_path);
    validate_run_config(cfg);
    if (!cfg.contains("world") || !cfg["world"].contains("seed"))
        throw ConfigError("gen-world requires world.seed");
    std::uint64_t seed = cfg["world"]["seed"].get<std::uint64_t>();
    auto variant = rvr::rule_variant_from_string(
        cfg["world"].value("variant", std::string("linear_interaction")));
    std::size_t n_base = cfg["world"].value("N", 11);
    std::size_t k = cfg.contains("sampling") ? cfg["sampling"].value("k", 4) : 4;
    std::size_t n_per = cfg.contains("sampling") ? cfg["sampling"].value("n_per_domain", 500) : 500;

    rvr::WorldSpec world = rvr::build_world(seed, variant, n_base);
    rvr::Rng rng(seed ^ 0xD1B54A32D192ED03ull);
    rvr::Rng draw_rng = rng.split();
    std::vector<std::size_t> bases = rvr::draw_domains(world, k, draw_rng);
    std::vector<rvr::DomainDataset> datasets;
    for (std::size_t i = 0; i < k; ++i) {
        rvr::Rng dom_rng = rng.split();
        datasets.push_back(
            rvr::sample_domain(world, bases[i], n_per, dom_rng, static_cast<int>(i)));
    }

    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "world.json", rvr::world_to_json(world).dump(2) + "\n");
    rvr::atomic_write(out_dir / "data.csv", rvr::datasets_to_csv(datasets));
    json seeds = {{"world_seed", seed}, {"drawn_bases", bases}};
    write_manifest(out_dir, "gen-world", cfg, seeds, {"world.json", "data.csv"});
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out) {
    json cfg = load_config(config_path);
    validate_run_config(cfg);
    std::vector<rvr::DomainDataset> datasets = rvr::datasets_from_csv(rvr::read_file(data_path));
    if (datasets.empty()) throw rvr::IoError("no domains in " + data_path);

    rvr::TrainConfig tc = train_config_from(cfg);
    std::size_t p_override =
        cfg.contains("model") ? cfg["model"].value("p", 0) : 0;
    rvr::Rng model_rng(tc.seed ^ 0xA0761D6478BD642Full);
    rvr::ModelBundle bundle =
        rvr::build_bundle(tc.preset, datasets.size(), model_rng, p_override);
    rvr::TrainResult res = rvr::train(bundle, datasets, tc);

    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "bundle.json", rvr::bundle_to_json(res.bundle).dump() + "\n");
    rvr::atomic_write(out_dir / "trace.csv", res.trace.to_csv());
    json seeds = {{"train_seed", tc.seed}};
    write_manifest(out_dir, "train", cfg, seeds, {"bundle.json", "trace.csv"});
    return 0;
}

int cmd_eval(const std::string& bundle_path, const std::string& data_path,
             const std::string& out) {
    json bj = load_config(bundle_path);
    rvr::ModelBundle bundle = rvr::bundle_from_json(bj);
    std::vector<rvr::DomainDataset> datasets = rvr::datasets_from_csv(rvr::read_file(data_path));
    if (datasets.empty()) throw rvr::IoError("no domains in " + data_path);

    json report;
    double total_hits = 0.0, total_n = 0.0;
    for (const auto& ds : datasets) {
        double acc = rvr::accuracy_of(bundle, ds);
        report["per_domain_accuracy"][std::to_string(ds.domain_id)] = acc;
        total_hits += acc * static_cast<double>(ds.size());
        total_n += static_cast<double>(ds.size());
    }
    report["accuracy"] = total_hits / total_n;
    report["bundle_preset"] = bundle.preset;

    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "eval.json", report.dump(2) + "\n");
    write_manifest(out_dir, "eval", json::object(), json::object(), {"eval.json"});
    return 0;
}

int cmd_kgrowth(const std::string& config_path, const std::string& out) {
    json cfg = load_config(config_path);
    validate_run_config(cfg);
    if (!cfg.contains("world") || !cfg["world"].contains("seed"))
        throw ConfigError("kgrowth requires world.seed");
    std::uint64_t seed = cfg["world"]["seed"].get<std::uint64_t>();
    auto variant = rvr::rule_variant_from_string(
        cfg["world"].value("variant", std::string("linear_interaction")));
    std::size_t n_base = cfg["world"].value("N", 11);
    rvr::WorldSpec world = rvr::build_world(seed, variant, n_base);

    std::vector<std::size_t> k_values;
    if (cfg.contains("sampling") && cfg["sampling"].contains("k")) {
        const json& kj = cfg["sampling"]["k"];
        if (kj.is_array())
            k_values = kj.get<std::vector<std::size_t>>();
        else
            k_values = {kj.get<std::size_t>()};
    } else {
        k_values = {4, 10};
    }
    std::size_t n_per = cfg.contains("sampling") ? cfg["sampling"].value("n_per_domain", 500) : 500;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    if (cfg.contains("eval") && cfg["eval"].contains("seeds"))
        seeds = cfg["eval"]["seeds"].get<std::vector<std::uint64_t>>();

    rvr::TrainConfig tc = train_config_from(cfg);
    std::vector<rvr::KGrowthRow> rows =
        rvr::k_growth_experiment(world, k_values, n_per, tc, seeds);

    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "kgrowth.csv", rvr::kgrowth_to_csv(rows));
    json summary;
    for (std::size_t k : k_values) {
        double rvr_mean = 0.0, log_mean = 0.0, cnt = 0.0;
        for (const auto& r : rows)
            if (r.k == k) {
                rvr_mean += r.rvr_accuracy;
                log_mean += r.logistic_accuracy;
                cnt += 1.0;
            }
        summary[std::to_string(k)] = {{"rvr_mean", rvr_mean / cnt},
                                      {"logistic_mean", log_mean / cnt}};
    }
    rvr::atomic_write(out_dir / "kgrowth_summary.json", summary.dump(2) + "\n");
    write_manifest(out_dir, "kgrowth", cfg, {{"world_seed", seed}, {"eval_seeds", seeds}},
                   {"kgrowth.csv", "kgrowth_summary.json"});
    return 0;
}

rvr::Density1D density_from_json(const json& j) {
    check_keys(j, {"kind", "a", "b"}, "bases[]");
    rvr::Density1D d;
    std::string kind = j.value("kind", std::string("gaussian"));
    if (kind == "gaussian")
        d.kind = rvr::Density1D::Kind::Gaussian;
    else if (kind == "uniform")
        d.kind = rvr::Density1D::Kind::Uniform;
    else
        throw ConfigError("unknown density kind: " + kind);
    d.a = j.value("a", 0.0);
    d.b = j.value("b", 1.0);
    return d;
}

int cmd_theory_limit(const std::string& config_path, const std::string& out) {
    json cfg = load_config(config_path);
    check_keys(cfg, {"bases", "mu", "k_schedule", "seeds"}, "config");
    std::vector<rvr::Density1D> bases;
    for (const auto& bj : cfg.at("bases")) bases.push_back(density_from_json(bj));
    std::vector<double> mu = cfg.at("mu").get<std::vector<double>>();
    std::vector<std::size_t> schedule = cfg.at("k_schedule").get<std::vector<std::size_t>>();
    std::vector<std::uint64_t> seeds = cfg.value("seeds", std::vector<std::uint64_t>{1});

    std::vector<rvr::LimitTraceRow> rows;
    for (std::uint64_t s : seeds) {
        auto part = rvr::adversary_limit_experiment(bases, mu, schedule, s);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "limit.csv", rvr::limit_trace_to_csv(rows));
    write_manifest(out_dir, "theory-limit", cfg, {{"seeds", seeds}}, {"limit.csv"});
    return 0;
}

int cmd_theory_bounds(const std::string& inputs_path, const std::string& out) {
    json cfg = load_config(inputs_path);
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    json report;
    report["inputs"] = cfg;
    if (cfg.value("mode", std::string("nonasymptotic")) == "worst_case") {
        check_keys(cfg, {"mode", "p_l", "delta", "beta_hat", "t", "c", "V_Lambda", "n_min",
                         "vc_term", "k", "n_i"},
                   "inputs");
        rvr::WorstCaseBound b;
        std::size_t k = cfg.value("k", 0);
        std::vector<double> n_i = cfg.value("n_i", std::vector<double>{});
        if (cfg.contains("vc_term"))
            b = rvr::worst_case_bound_from_terms(cfg.at("p_l").get<double>(),
                                                 cfg.value("beta_hat", 0.0), cfg.value("t", 0.0),
                                                 cfg.at("vc_term").get<double>(),
                                                 cfg.value("delta", 0.0), k, n_i);
        else
            b = rvr::worst_case_bound(cfg.at("p_l").get<double>(), cfg.value("delta", 0.0),
                                      cfg.value("beta_hat", 0.0), cfg.value("t", 0.0),
                                      cfg.value("c", 1.0), cfg.at("V_Lambda").get<double>(),
                                      cfg.at("n_min").get<double>(), k, n_i);
        report["bound"] = b.bound;
        report["vc_term"] = b.vc_term;
        report["probability_floor"] = b.probability_floor;
    } else {
        check_keys(cfg, {"mode", "k", "N", "n_i", "lambda", "t1", "t2", "c", "V_Lambda", "V_Xi",
                         "B_rho", "B_of_inv_sqrt_k", "H_k", "boundary_cell_count", "p"},
                   "inputs");
        rvr::BoundInputs in;
        in.k = cfg.at("k").get<std::size_t>();
        in.N = cfg.value("N", 0);
        in.n_i = cfg.value("n_i", std::vector<double>{});
        in.lambda = cfg.value("lambda", 0.0);
        in.t1 = cfg.value("t1", 0.0);
        in.t2 = cfg.value("t2", 0.0);
        in.c = cfg.value("c", 1.0);
        in.V_Lambda = cfg.value("V_Lambda", 1.0);
        in.V_Xi = cfg.value("V_Xi", 1.0);
        in.B_rho = cfg.value("B_rho", 0.0);
        in.B_of_inv_sqrt_k = cfg.value("B_of_inv_sqrt_k", 0.0);
        in.H_k = cfg.at("H_k").get<std::size_t>();
        in.boundary_cell_count = cfg.value("boundary_cell_count", 0.0);
        in.p = cfg.value("p", 1);
        rvr::BoundReport r = rvr::bound_rhs(in);
        report["m_k"] = r.m_k;
        report["V_Ck"] = r.V_Ck;
        report["leading"] = r.leading;
        report["term_I"] = r.term_I;
        report["term_II"] = r.term_II;
        report["term_III"] = r.term_III;
        report["total"] = r.total;
    }
    rvr::atomic_write(out_dir / "bounds.json", report.dump(2) + "\n");
    write_manifest(out_dir, "theory-bounds", cfg, json::object(), {"bounds.json"});
    return 0;
}

int cmd_theory_invariance(const std::string& inputs_path, const std::string& out) {
    json cfg = load_config(inputs_path);
    check_keys(cfg, {"m_phi", "domains", "head_w", "head_b", "epsilon", "samples", "seed"},
               "inputs");
    auto mat_from = [](const json& rows) {
        rvr::Matrix m(rows.size(), rows.at(0).size());
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j].get<double>();
        return m;
    };
    rvr::LinearPhiDecomposition decomp;
    decomp.m_phi = mat_from(cfg.at("m_phi"));
    std::size_t m = decomp.m_phi.cols;
    for (std::size_t j = 0; j < m; ++j)  // Gamma = coordinate functions
        decomp.basis.push_back([j](const std::vector<double>& x) { return x[j]; });

    std::vector<std::function<std::vector<double>(rvr::Rng&)>> samplers;
    for (const auto& dj : cfg.at("domains")) {
        check_keys(dj, {"mean", "scale"}, "domains[]");
        std::vector<double> mean = dj.at("mean").get<std::vector<double>>();
        std::vector<double> scale = dj.at("scale").get<std::vector<double>>();
        if (mean.size() != m || scale.size() != m)
            throw ConfigError("domain mean/scale must have length " + std::to_string(m));
        samplers.push_back([mean, scale](rvr::Rng& r) {
            std::vector<double> x(mean.size());
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean[i] + scale[i] * r.gaussian();
            return x;
        });
    }
    rvr::Matrix head_w = mat_from(cfg.at("head_w"));
    std::vector<double> head_b = cfg.at("head_b").get<std::vector<double>>();
    rvr::Rng rng(cfg.value("seed", 1));
    rvr::InvarianceReport rep =
        rvr::invariance_check(decomp, samplers, head_w, head_b, cfg.value("epsilon", 1.0),
                              cfg.value("samples", 10000), rng);

    json report;
    report["inputs"] = cfg;
    report["max_kernel_residual"] = rep.max_kernel_residual;
    report["adversary_value"] = rep.adversary_value;
    report["reconstructed_value"] = rep.reconstructed_value;
    report["tolerance"] = rep.tolerance;
    report["sides_agree"] = rep.sides_agree;
    report["invariant"] = rep.invariant;
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "invariance.json", report.dump(2) + "\n");
    write_manifest(out_dir, "theory-invariance", cfg, {{"seed", cfg.value("seed", 1)}},
                   {"invariance.json"});
    return 0;
}

int cmd_mnist_colorize(const std::string& images, const std::string& labels,
                       const std::string& setting_path, const std::string& out) {
    json sj = load_config(setting_path);
    check_keys(sj, {"shape_correlation", "colors", "seed", "domain_id"}, "setting");
    rvr::ColorSetting setting;
    setting.shape_correlation = sj.value("shape_correlation", 1.0);
    for (const auto& [label, entries] : sj.at("colors").items()) {
        std::vector<std::pair<std::string, double>> cs;
        for (const auto& e : entries)
            cs.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
        setting.color_given_label[std::stoi(label)] = cs;
    }
    setting.validate();

    rvr::MnistData data = rvr::load_mnist_idx(images, labels);
    rvr::Rng rng(sj.value("seed", 1));
    rvr::DomainDataset ds = rvr::colorize(data, setting, rng, sj.value("domain_id", 0));

    fs::path out_dir(out);
    fs::create_directories(out_dir);
    rvr::atomic_write(out_dir / "colored.csv", rvr::datasets_to_csv({ds}));
    write_manifest(out_dir, "mnist-colorize", sj, {{"seed", sj.value("seed", 1)}},
                   {"colored.csv"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarially learned invariant representations: lab CLI"};
    app.require_subcommand(1);

    std::string config, data, bundle, images, labels, setting, inputs, out;

    auto* gen = app.add_subcommand("gen-world", "generate a synthetic world + datasets");
    gen->add_option("--config", config)->required();
    gen->add_option("--out", out)->required();

    auto* tr = app.add_subcommand("train", "train an encoder/discriminator/predictor bundle");
    tr->add_option("--config", config)->required();
    tr->add_option("--data", data)->required();
    tr->add_option("--out", out)->required();

    auto* ev = app.add_subcommand("eval", "evaluate a bundle on a dataset");
    ev->add_option("--bundle", bundle)->required();
    ev->add_option("--data", data)->required();
    ev->add_option("--out", out)->required();

    auto* kg = app.add_subcommand("kgrowth", "domain-count growth experiment");
    kg->add_option("--config", config)->required();
    kg->add_option("--out", out)->required();

    auto* tl = app.add_subcommand("theory-limit", "adversary limit experiment");
    tl->add_option("--config", config)->required();
    tl->add_option("--out", out)->required();

    auto* tb = app.add_subcommand("theory-bounds", "bound calculators");
    tb->add_option("--inputs", inputs)->required();
    tb->add_option("--out", out)->required();

    auto* ti = app.add_subcommand("theory-invariance", "invariance checker");
    ti->add_option("--inputs", inputs)->required();
    ti->add_option("--out", out)->required();

    auto* mc = app.add_subcommand("mnist-colorize", "color an MNIST IDX dataset");
    mc->add_option("--images", images)->required();
    mc->add_option("--labels", labels)->required();
    mc->add_option("--setting", setting)->required();
    mc->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_world(config, out);
        if (tr->parsed()) return cmd_train(config, data, out);
        if (ev->parsed()) return cmd_eval(bundle, data, out);
        if (kg->parsed()) return cmd_kgrowth(config, out);
        if (tl->parsed()) return cmd_theory_limit(config, out);
        if (tb->parsed()) return cmd_theory_bounds(inputs, out);
        if (ti->parsed()) return cmd_theory_invariance(inputs, out);
        if (mc->parsed()) return cmd_mnist_colorize(images, labels, setting, out);
    } catch (const rvr::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const rvr::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
