#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lipforge/io.hpp"
#include "lipforge/model.hpp"
#include "lipforge/rng.hpp"
#include "lipforge/scaling.hpp"
#include "lipforge/trainer.hpp"
#include "lipforge/verify.hpp"

namespace {

using nlohmann::json;
using namespace lipforge;

// Exit-code taxonomy: 0 ok, 2 parse, 3 infeasible/invalid, 4 convergence,
// 1 anything else. Diagnostics go to stderr; stdout carries only JSON.
template <typename Fn>
int run_guarded(Fn&& fn) {
    try {
        fn();
        return 0;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& tok : split_csv(s)) out.push_back(parse_double(tok));
    return out;
}

std::vector<std::size_t> parse_csv_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const std::string& tok : split_csv(s)) {
        const double v = parse_double(tok);
        if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw ParseError("size list must contain positive integers, got '" + tok + "'");
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

// The scale subcommand deliberately omits the method name from its output:
// methods that coincide (e.g. the q-weighted scaling with q = ones vs the
// absolute-row-sum scaling) then produce byte-identical JSON.
json scaling_to_json(const Vector& diag, double margin, double margin_scale) {
    json out;
    out["diag"] = diag;
    out["margin"] = margin;
    out["margin_scale"] = margin_scale;
    return out;
}

struct ScaleArgs {
    std::string method;
    std::string weights;
    std::string q_path;
    std::uint64_t seed = 0;
    std::size_t iters = 2000;
    std::size_t power_iters = 10000;
};

void cmd_scale(const ScaleArgs& a) {
    const DenseMatrix w = read_matrix(a.weights);
    json out;
    if (a.method == "sn") {
        if (a.power_iters != 10000) {
            (void)spectral_norm(w, 1e-10, a.power_iters);  // honor a user-set iteration cap
        }
        const auto sv = scaling::t_sn(w);
        out = scaling_to_json(sv.diag, sv.feasibility_margin, sv.margin_scale);
    } else if (a.method == "aol") {
        const auto sv = scaling::t_aol(w);
        out = scaling_to_json(sv.diag, sv.feasibility_margin, sv.margin_scale);
    } else if (a.method == "sll") {
        Vector q;
        if (a.q_path.empty()) {
            q.assign(w.cols(), 1.0);
        } else {
            const DenseMatrix qm = read_matrix(a.q_path);
            if (qm.rows() != 1 && qm.cols() != 1) {
                throw ParseError("q file must be a single row or column");
            }
            q.assign(qm.data(), qm.data() + qm.size());
        }
        const auto sv = scaling::t_sll(w, scaling::QVector(q));
        out = scaling_to_json(sv.diag, sv.feasibility_margin, sv.margin_scale);
    } else if (a.method == "gamma") {
        const auto gs = scaling::gamma_variant(w);
        out = scaling_to_json(gs.diag, gs.feasibility_margin, gs.margin_scale);
    } else if (a.method == "opt") {
        const auto sv = scaling::t_opt_heuristic(w, a.iters, a.seed);
        out = scaling_to_json(sv.diag, sv.feasibility_margin, sv.margin_scale);
    } else {
        throw ParseError("unknown method '" + a.method + "' (expected sn|aol|sll|gamma|opt)");
    }
    std::cout << out.dump() << "\n";
}

struct VerifyArgs {
    std::string model_path;
    std::size_t pairs = 10000;
    std::uint64_t seed = 0;
};

void cmd_verify(const VerifyArgs& a) {
    const model::Model m = model::load_model(a.model_path, scaling::MarginPolicy::Auto);
    json jlayers = json::array();
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const model::Layer& layer = m.layers[k];
        json jl;
        jl["index"] = k;
        jl["form"] = model::form_name(layer.form);
        jl["t_method"] = model::t_method_name(layer.t_method);
        jl["feasibility_margin"] = scaling::check_feasible(layer.ws.w, layer.t);
        jl["margin_scale"] = layer.t.margin_scale;
        const auto metrics = scaling::ortho_distance(layer.ws.w, layer.t);
        jl["ortho_trace"] = metrics.first;
        jl["ortho_fro"] = metrics.second;
        if (layer.form == model::LayerForm::General) {
            jl["lmi_margin"] = layer.gspec.lmi_margin;
            jl["lmi_scale"] = layer.gspec.lmi_scale;
        }
        jlayers.push_back(jl);
    }
    const auto rep = verify::lipschitz_report(m, a.pairs, a.seed);
    json out;
    out["layers"] = jlayers;
    out["layer_bounds"] = rep.layer_bounds;
    out["network_bound"] = rep.network_bound;
    out["empirical_max_ratio"] = rep.empirical_max_ratio;
    out["pairs_sampled"] = rep.pairs_sampled;
    std::cout << out.dump() << "\n";
}

struct TrainArgs {
    std::string config_path;
    std::string data = "two-moons";
    std::string out_dir;
};

void cmd_train(const TrainArgs& a) {
    std::ifstream in(a.config_path);
    if (!in) throw ParseError("cannot open config " + a.config_path);
    json cfg_json;
    try {
        cfg_json = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!cfg_json.is_object()) throw ParseError("config must be a JSON object");

    trainer::TrainConfig cfg;
    try {
        cfg.epochs = cfg_json.value("epochs", cfg.epochs);
        cfg.batch_size = cfg_json.value("batch_size", cfg.batch_size);
        cfg.lr = cfg_json.value("lr", cfg.lr);
        cfg.beta1 = cfg_json.value("beta1", cfg.beta1);
        cfg.beta2 = cfg_json.value("beta2", cfg.beta2);
        cfg.temperature = cfg_json.value("temperature", cfg.temperature);
        cfg.offset = cfg_json.value("offset", cfg.offset);
        cfg.seed = cfg_json.value("seed", cfg.seed);
        cfg.warmup_fraction = cfg_json.value("warmup_fraction", cfg.warmup_fraction);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    const std::size_t n_samples = cfg_json.value("n_samples", std::size_t{1000});
    const double noise = cfg_json.value("noise", 0.1);
    const std::size_t width = cfg_json.value("width", std::size_t{64});
    const std::size_t depth = cfg_json.value("depth", std::size_t{3});

    if (a.data != "two-moons") {
        throw ParseError("unknown dataset '" + a.data + "' (only two-moons is built in)");
    }
    const trainer::Dataset data = trainer::make_two_moons(n_samples, noise, cfg.seed);
    model::Model m = trainer::make_sll_net(data.train_inputs.rows(), width, depth,
                                           data.num_classes, cfg.seed);
    const trainer::TrainResult result = trainer::train(m, data, cfg);

    const std::filesystem::path out_dir(a.out_dir);
    model::save_model(m, out_dir);
    write_matrix(out_dir / "inputs.mtx.txt", data.test_inputs);
    write_labels(out_dir / "labels.txt", data.test_labels);

    std::ofstream hist(out_dir / "history.csv");
    if (!hist) throw Error("cannot write history.csv in " + a.out_dir);
    hist << "epoch,loss,nat_acc,cert_acc_0.1\n";
    for (const auto& row : result.history) {
        hist << row.epoch << "," << format_double(row.loss) << "," << format_double(row.nat_acc)
             << "," << format_double(row.cert_acc) << "\n";
    }
    hist.close();

    json out;
    out["epochs"] = cfg.epochs;
    out["out"] = a.out_dir;
    if (!result.history.empty()) {
        const auto& last = result.history.back();
        out["final_loss"] = last.loss;
        out["nat_acc"] = last.nat_acc;
        out["cert_acc_0.1"] = last.cert_acc;
    }
    std::cout << out.dump() << "\n";
}

struct CertifyArgs {
    std::string model_path;
    std::string data_dir;
    std::string radii = "0.141,0.282,0.424,1.0";
    std::string out_path;
};

void cmd_certify(const CertifyArgs& a) {
    const model::Model m = model::load_model(a.model_path, scaling::MarginPolicy::Auto);
    const std::filesystem::path dir(a.data_dir);
    const DenseMatrix inputs = read_matrix(dir / "inputs.mtx.txt");
    const std::vector<int> labels = read_labels(dir / "labels.txt");
    const Vector radii = parse_csv_doubles(a.radii);

    const auto rep = verify::certify_dataset(m, inputs, labels, radii);
    json out;
    out["radii_grid"] = rep.radii_grid;
    out["certified_accuracy"] = rep.certified_accuracy;
    out["natural_accuracy"] = rep.natural_accuracy;
    json samples = json::array();
    for (const auto& s : rep.per_sample) {
        json js;
        js["true_label"] = s.true_label;
        js["predicted_label"] = s.predicted_label;
        js["margin"] = s.margin;
        js["certified_radius"] = s.certified_radius;
        samples.push_back(js);
    }
    out["per_sample"] = samples;

    if (!a.out_path.empty()) {
        std::ofstream f(a.out_path);
        if (!f) throw Error("cannot write report " + a.out_path);
        f << out.dump(2) << "\n";
    }
    std::cout << out.dump() << "\n";
}

struct BenchArgs {
    std::string sizes = "64,256,1024";
    std::size_t reps = 10;
    std::uint64_t seed = 0;
};

void cmd_bench(const BenchArgs& a) {
    const std::vector<std::size_t> sizes = parse_csv_sizes(a.sizes);
    if (a.reps == 0) throw ParseError("--reps must be >= 1");
    json entries = json::array();
    for (const std::size_t n : sizes) {
        Rng rng(mix_seed(a.seed, n));
        const DenseMatrix w = gaussian_matrix(n, n, rng);
        Vector q(n);
        for (double& v : q) v = std::exp(0.2 * rng.normal());
        const scaling::QVector qv(q);

        for (const std::string method : {"sn", "aol", "sll"}) {
            std::vector<double> ns(a.reps);
            for (std::size_t r = 0; r < a.reps; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                if (method == "sn") {
                    (void)scaling::t_sn(w, scaling::MarginPolicy::Certificate);
                } else if (method == "aol") {
                    (void)scaling::t_aol(w, scaling::MarginPolicy::Certificate);
                } else {
                    (void)scaling::t_sll(w, qv, scaling::MarginPolicy::Certificate);
                }
                const auto t1 = std::chrono::steady_clock::now();
                ns[r] = static_cast<double>(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            }
            std::sort(ns.begin(), ns.end());
            const double median = a.reps % 2 == 1
                                      ? ns[a.reps / 2]
                                      : 0.5 * (ns[a.reps / 2 - 1] + ns[a.reps / 2]);
            json entry;
            entry["method"] = method;
            entry["size"] = n;
            entry["median_ns"] = median;
            entries.push_back(entry);
        }
    }
    json out;
    out["entries"] = entries;
    std::cout << out.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Construction, training, and certification of 1-Lipschitz layers"};
    app.require_subcommand(1);

    ScaleArgs scale_args;
    CLI::App* scale = app.add_subcommand(
        "scale", "Solve for a feasible diagonal scaling T of one weight matrix");
    scale->add_option("--method", scale_args.method, "sn|aol|sll|gamma|opt")->required();
    scale->add_option("--weights", scale_args.weights, "weight matrix file")->required();
    scale->add_option("--q", scale_args.q_path, "q vector file (sll; defaults to ones)");
    scale->add_option("--seed", scale_args.seed, "random seed (opt restarts)");
    scale->add_option("--iters", scale_args.iters, "candidate budget for opt");
    scale->add_option("--power-iters", scale_args.power_iters,
                      "power-iteration cap for sn");

    VerifyArgs verify_args;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify", "Check every layer certificate of a model and sample its Lipschitz ratio");
    verify_cmd->add_option("--model", verify_args.model_path, "model manifest")->required();
    verify_cmd->add_option("--pairs", verify_args.pairs, "sample pairs (default 10000)");
    verify_cmd->add_option("--seed", verify_args.seed, "random seed");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a certified stack on two-moons");
    train_cmd->add_option("--config", train_args.config_path, "training config JSON")->required();
    train_cmd->add_option("--data", train_args.data, "dataset name (two-moons)");
    train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();

    CertifyArgs certify_args;
    CLI::App* certify_cmd = app.add_subcommand(
        "certify", "Compute certified-robust accuracy of a model on a dataset directory");
    certify_cmd->add_option("--model", certify_args.model_path, "model manifest")->required();
    certify_cmd->add_option("--data", certify_args.data_dir,
                            "directory with inputs.mtx.txt and labels.txt")->required();
    certify_cmd->add_option("--radii", certify_args.radii, "comma-separated radius grid");
    certify_cmd->add_option("--out", certify_args.out_path, "write the full report here");

    BenchArgs bench_args;
    CLI::App* bench_cmd = app.add_subcommand(
        "bench", "Time the scaling constructions across sizes");
    bench_cmd->add_option("--sizes", bench_args.sizes, "comma-separated sizes");
    bench_cmd->add_option("--reps", bench_args.reps, "repetitions per timing");
    bench_cmd->add_option("--seed", bench_args.seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (scale->parsed()) return run_guarded([&] { cmd_scale(scale_args); });
    if (verify_cmd->parsed()) return run_guarded([&] { cmd_verify(verify_args); });
    if (train_cmd->parsed()) return run_guarded([&] { cmd_train(train_args); });
    if (certify_cmd->parsed()) return run_guarded([&] { cmd_certify(certify_args); });
    if (bench_cmd->parsed()) return run_guarded([&] { cmd_bench(bench_args); });
    return 1;
}
