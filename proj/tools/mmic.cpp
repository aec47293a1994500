// mmic: train, evaluate, and probe the selective-scan image classifier.
//
// Subcommands: train, eval, predict, params, bench-scan, ablate.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
// MMIC_THREADS caps batch-gradient workers (default 1, fully deterministic).

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mmic/backbone.hpp"
#include "mmic/checkpoint.hpp"
#include "mmic/config.hpp"
#include "mmic/data.hpp"
#include "mmic/metrics.hpp"
#include "mmic/sscan.hpp"
#include "mmic/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmic;

using Real = double;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_sigint(int) { g_interrupted = 1; }

Dataset load_dataset(const RunConfig& cfg) {
    const auto& d = cfg.data;
    Dataset ds;
    if (d.kind == "synthetic") {
        ds = make_synthetic_stripes(d.synthetic_count, d.synthetic_size, cfg.seed);
    } else if (d.kind == "raw") {
        ds = load_raw_dataset(d.path);
    } else {
        ds = load_ppm_dataset(d.path, d.manifest);
    }
    ds.index = split_dataset(ds.index, d.split_ratio, cfg.seed);
    for (const auto& w : ds.index.warnings) std::cerr << "warning: " << w << "\n";
    return ds;
}

void check_dataset_matches_model(const Dataset& ds, const ModelConfig& m) {
    if (ds.index.height != m.input_size || ds.index.width != m.input_size)
        throw ConfigError("dataset geometry " + std::to_string(ds.index.height) + "x" +
                          std::to_string(ds.index.width) + " does not match model.input_size " +
                          std::to_string(m.input_size));
    if (ds.index.channels != m.in_channels)
        throw ConfigError("dataset has " + std::to_string(ds.index.channels) +
                          " channels but model.in_channels is " + std::to_string(m.in_channels));
    if (ds.index.num_classes != m.num_classes)
        throw ConfigError("dataset has " + std::to_string(ds.index.num_classes) +
                          " classes but model.num_classes is " + std::to_string(m.num_classes));
}

auto forward_for(const ModelConfig& m) {
    return [m](ParamCtx<Real>& P, Tensor<Real> x) { return backbone_forward(P, m, x); };
}

// Runs one forward on a zero image so every parameter exists in the store.
void materialize_params(ParamStore<Real>& store, const ModelConfig& m) {
    Graph<Real> g(false);
    ParamCtx<Real> P(store, g, /*trainable=*/false);
    Tensor<Real> x = g.leaf(Shape{m.input_size, m.input_size, m.in_channels},
                            std::vector<Real>(static_cast<size_t>(m.input_size) * m.input_size *
                                              m.in_channels),
                            false);
    (void)backbone_forward(P, m, x);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw Error("write failed for " + path);
}

ParamStore<Real> store_from_checkpoint(const Checkpoint<Real>& ckpt, const RunConfig& cfg) {
    ParamStore<Real> store(cfg.seed);
    materialize_params(store, cfg.model);
    apply_checkpoint(ckpt, store);
    return store;
}

TensorData<Real> load_input_image(const std::string& path, const ModelConfig& m) {
    TensorData<float> raw;
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".mmt") {
        try {
            raw = read_mmt<float>(path);
        } catch (const FormatError&) {
            // accept f64 containers too; values get converted below anyway
            TensorData<double> wide = read_mmt<double>(path);
            raw.shape = wide.shape;
            raw.values.assign(wide.values.begin(), wide.values.end());
        }
        if (raw.shape.size() != 3)
            throw FormatError("predict: image container must be rank 3, got " +
                              shape_str(raw.shape));
    } else {
        raw = load_ppm(path);
    }
    if (raw.shape[0] != m.input_size || raw.shape[1] != m.input_size ||
        raw.shape[2] != m.in_channels)
        throw ConfigError("predict: image " + shape_str(raw.shape) + " does not match model " +
                          shape_str(Shape{m.input_size, m.input_size, m.in_channels}));
    TensorData<Real> x(raw.shape);
    for (size_t i = 0; i < raw.values.size(); ++i)
        x.values[i] = normalize_value(static_cast<Real>(raw.values[i]));
    return x;
}

void print_metrics_block(const EvalResult<Real>& ev, const std::string& split) {
    std::printf("%s: OA %.2f  Pre %.2f  AUC %.2f  mean_loss %.6f  (%d records)\n",
                split.c_str(), ev.metrics.oa, ev.metrics.precision, ev.metrics.auc, ev.mean_loss,
                ev.logits.shape[0]);
    const int k = static_cast<int>(ev.metrics.confusion.size());
    std::printf("confusion (rows = true class):\n");
    for (int i = 0; i < k; ++i) {
        std::printf("  ");
        for (int j = 0; j < k; ++j)
            std::printf("%8lld", static_cast<long long>(ev.metrics.confusion[static_cast<size_t>(i)]
                                                                            [static_cast<size_t>(j)]));
        std::printf("\n");
    }
    for (int c : ev.metrics.zero_precision_classes)
        std::printf("note: class %d was never predicted; its precision counts as 0\n", c);
    for (int c : ev.metrics.skipped_auc_classes)
        std::printf("note: class %d absent from labels; excluded from AUC\n", c);
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (train, val, or test)");
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = parse_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    validate_config_paths(cfg);
    Dataset ds = load_dataset(cfg);
    check_dataset_matches_model(ds, cfg.model);

    fs::create_directories(cfg.output_dir);
    const std::string resolved = resolved_config_text(cfg);
    write_text_file(cfg.output_dir + "/config.resolved.json", resolved);

    ParamStore<Real> store(cfg.seed);
    OptimState<Real> opt;
    opt.base_lr = cfg.train.base_lr;
    opt.weight_decay = cfg.weight_decay;

    std::signal(SIGINT, on_sigint);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train_loop(store, ds, cfg.train, opt, forward_for(cfg.model),
                             [&](const EpochStat& s) {
                                 std::printf(
                                     "epoch %3d  lr %.3e  loss %.6f  val OA %.2f  Pre %.2f  "
                                     "AUC %.2f\n",
                                     s.epoch, s.lr, s.train_loss, s.val_oa, s.val_pre, s.val_auc);
                                 std::fflush(stdout);
                                 return g_interrupted != 0;
                             });
    std::signal(SIGINT, SIG_DFL);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Checkpoint<Real> ckpt;
    ckpt.config_text = resolved;
    if (result.best_params.empty()) {
        ckpt = checkpoint_from_store(store, resolved);
    } else {
        for (const auto& name : store.names())
            ckpt.tensors.emplace_back(name, result.best_params.at(name));
    }
    ckpt.has_optimizer = true;
    ckpt.optim = opt;
    ckpt.best_epoch = result.best_epoch;
    ckpt.best_val_oa = result.best_val_oa;
    const std::string ckpt_path = cfg.output_dir + "/best.mmic";
    save_checkpoint(ckpt_path, ckpt);
    write_text_file(cfg.output_dir + "/history.txt", history_table(result.history));
    write_text_file(cfg.output_dir + "/history.lines", history_lines(result.history));

    if (g_interrupted)
        std::printf("interrupted; wrote checkpoint for best epoch so far\n");
    std::printf("trained %zu epochs in %.1fs; best val OA %.2f at epoch %d\n",
                result.history.size(), secs, result.best_val_oa, result.best_epoch);
    std::printf("checkpoint: %s\n", ckpt_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split) {
    auto ckpt = load_checkpoint<Real>(ckpt_path);
    RunConfig cfg = parse_config_text(ckpt.config_text);
    validate_config_paths(cfg);
    Dataset ds = load_dataset(cfg);
    check_dataset_matches_model(ds, cfg.model);
    ParamStore<Real> store = store_from_checkpoint(ckpt, cfg);
    auto ev = evaluate_split(store, ds, parse_split(split), forward_for(cfg.model));
    print_metrics_block(ev, split);
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path) {
    auto ckpt = load_checkpoint<Real>(ckpt_path);
    RunConfig cfg = parse_config_text(ckpt.config_text);
    ParamStore<Real> store = store_from_checkpoint(ckpt, cfg);

    TensorData<Real> x = load_input_image(image_path, cfg.model);
    Graph<Real> g(false);
    ParamCtx<Real> P(store, g, /*trainable=*/false);
    Tensor<Real> logits = backbone_forward(P, cfg.model, g.leaf(x, false));
    auto lv = logits.value();
    std::vector<double> row(lv.begin(), lv.end());
    auto probs = softmax_row(row.data(), static_cast<int>(row.size()));
    const int pred = argmax_index(row.data(), static_cast<int>(row.size()));
    std::printf("class %d\n", pred);
    for (size_t c = 0; c < probs.size(); ++c)
        std::printf("p[%zu] %.6f\n", c, probs[c]);
    return 0;
}

int cmd_params(const std::string& config_path, const std::string& kv_path) {
    RunConfig cfg = parse_config(config_path);
    const ParamReport rep = count_params(cfg.model);
    std::printf("%s", param_report_text(rep).c_str());
    if (!kv_path.empty()) write_text_file(kv_path, param_report_kv(rep));
    return 0;
}

int cmd_bench_scan(std::vector<int> lens, int state, int width, int block, int repeats) {
    if (lens.empty()) lens = {64, 256, 1024};
    check(state >= 1 && width >= 1 && block >= 1 && repeats >= 1,
          "bench-scan: sizes must be positive");
    std::printf("%8s %4s %8s %12s %14s %16s\n", "L", "N", "D_inner", "kernel", "ns/token",
                "max_abs_err");
    for (int L : lens) {
        check(L >= 1, "bench-scan: sequence length must be positive");
        Rng rng(1234);
        const size_t ld = static_cast<size_t>(L) * width;
        const size_t ln = static_cast<size_t>(L) * state;
        std::vector<Real> x(ld), delta(ld), Bv(ln), Cv(ln),
            Av(static_cast<size_t>(width) * state), Dv(static_cast<size_t>(width));
        for (auto& v : x) v = rng.normal();
        for (auto& v : delta) v = 0.05 + 0.05 * rng.next_double();
        for (auto& v : Bv) v = rng.normal();
        for (auto& v : Cv) v = rng.normal();
        for (auto& v : Av) v = -std::exp(rng.normal() * 0.5);
        for (auto& v : Dv) v = rng.normal();
        std::vector<Real> y_seq(ld), y_blk(ld);

        auto time_ns_per_token = [&](auto&& fn) {
            double best = 1e300;
            for (int rep = 0; rep < repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                fn();
                const auto t1 = std::chrono::steady_clock::now();
                best = std::min(
                    best, std::chrono::duration<double, std::nano>(t1 - t0).count() / L);
            }
            return best;
        };
        const double ns_seq = time_ns_per_token([&] {
            scan_core_forward(L, width, state, x.data(), delta.data(), Bv.data(), Cv.data(),
                              Av.data(), Dv.data(), y_seq.data(), nullptr);
        });
        const double ns_blk = time_ns_per_token([&] {
            scan_core_blocked(L, width, state, block, x.data(), delta.data(), Bv.data(),
                              Cv.data(), Av.data(), Dv.data(), y_blk.data());
        });
        double err = 0;
        for (size_t i = 0; i < ld; ++i) err = std::max(err, std::abs(y_blk[i] - y_seq[i]));
        std::printf("%8d %4d %8d %12s %14.1f %16.3e\n", L, state, width, "sequential", ns_seq,
                    0.0);
        std::printf("%8d %4d %8d %12s %14.1f %16.3e\n", L, state, width,
                    ("blocked/" + std::to_string(block)).c_str(), ns_blk, err);
    }
    return 0;
}

struct AblateRow {
    std::string label;
    ModelConfig model;
    int64_t params = 0;
    int64_t macs = 0;
    bool trained = false;
    double oa = 0, pre = 0, auc = 0;
};

int cmd_ablate(const std::string& config_path, const std::string& axis, const std::string& r_list,
               bool do_train) {
    RunConfig cfg = parse_config(config_path);

    std::vector<AblateRow> rows;
    auto add_row = [&](const std::string& label, ModelConfig m) {
        validate_model_cfg(m);
        AblateRow row;
        row.label = label;
        row.model = m;
        const auto rep = count_params(m);
        row.params = rep.total_params;
        row.macs = rep.total_macs;
        rows.push_back(std::move(row));
    };

    if (axis == "components") {
        for (const auto& [laef, fmiam] : {std::pair{false, false}, {true, false}, {false, true},
                                          {true, true}}) {
            ModelConfig m = cfg.model;
            m.use_laef = laef;
            m.use_fmiam = fmiam;
            std::string label = std::string(laef ? "+laef" : "-laef") + " " +
                                (fmiam ? "+fmiam" : "-fmiam");
            add_row(label, m);
        }
    } else if (axis == "parallel") {
        for (bool par : {false, true}) {
            ModelConfig m = cfg.model;
            m.parallel_vssm = par;
            add_row(par ? "parallel" : "single", m);
        }
    } else if (axis == "r") {
        std::stringstream ss(r_list);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            double rv = 0;
            try {
                size_t used = 0;
                rv = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("ablate: bad r value '" + tok + "'");
            }
            ModelConfig m = cfg.model;
            m.r = rv;
            add_row("r=" + tok, m);
        }
        if (rows.empty()) throw ConfigError("ablate: empty r list");
    } else {
        throw ConfigError("ablate: unknown axis '" + axis + "' (components, parallel, or r)");
    }

    if (do_train) {
        validate_config_paths(cfg);
        Dataset ds = load_dataset(cfg);
        for (auto& row : rows) {
            check_dataset_matches_model(ds, row.model);
            ParamStore<Real> store(cfg.seed);
            OptimState<Real> opt;
            opt.base_lr = cfg.train.base_lr;
            opt.weight_decay = cfg.weight_decay;
            auto result = train_loop(store, ds, cfg.train, opt, forward_for(row.model));
            restore_params(store, result.best_params);
            auto ev = evaluate_split(store, ds, Split::test, forward_for(row.model));
            row.trained = true;
            row.oa = ev.metrics.oa;
            row.pre = ev.metrics.precision;
            row.auc = ev.metrics.auc;
        }
    }

    std::printf("%-16s %12s %14s", "setting", "params", "macs");
    if (do_train) std::printf(" %8s %8s %8s", "OA", "Pre", "AUC");
    std::printf("\n");
    std::string csv = do_train ? "setting,params,macs,oa,pre,auc\n" : "setting,params,macs\n";
    for (const auto& row : rows) {
        std::printf("%-16s %12lld %14lld", row.label.c_str(),
                    static_cast<long long>(row.params), static_cast<long long>(row.macs));
        if (do_train) std::printf(" %8.2f %8.2f %8.2f", row.oa, row.pre, row.auc);
        std::printf("\n");
        csv += row.label + "," + std::to_string(row.params) + "," + std::to_string(row.macs);
        if (do_train)
            csv += "," + std::to_string(row.oa) + "," + std::to_string(row.pre) + "," +
                   std::to_string(row.auc);
        csv += "\n";
    }
    fs::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/ablate_" + axis + ".csv", csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selective-scan microscopy image classifier"};
    app.require_subcommand(1);

    std::string config_path, out_override, ckpt_path, split = "test", image_path, kv_path;
    std::string axis = "components", r_list = "0.125,0.25,0.5,1.0";
    bool ablate_train = false;
    std::vector<int> bench_lens;
    int bench_state = 8, bench_width = 32, bench_block = 16, bench_repeats = 3;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "JSON run configuration")->required();
    train->add_option("--out", out_override, "override the config's output_dir");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on one split");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--split", split, "train, val, or test (default test)");

    auto* predict = app.add_subcommand("predict", "classify a single image");
    predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    predict->add_option("--image", image_path, "PPM image or rank-3 .mmt tensor")->required();

    auto* params = app.add_subcommand("params", "print the parameter/MAC report");
    params->add_option("--config", config_path, "JSON run configuration")->required();
    params->add_option("--kv", kv_path, "also write a key-value report file");

    auto* bench = app.add_subcommand("bench-scan", "time the scan kernels");
    bench->add_option("--len", bench_lens, "sequence lengths (default 64 256 1024)");
    bench->add_option("--state", bench_state, "state dimension N (default 8)");
    bench->add_option("--width", bench_width, "channel dimension D (default 32)");
    bench->add_option("--block", bench_block, "block size for the blocked kernel (default 16)");
    bench->add_option("--repeat", bench_repeats, "timing repetitions (default 3)");

    auto* ablate = app.add_subcommand("ablate", "emit an ablation table");
    ablate->add_option("--config", config_path, "JSON run configuration")->required();
    ablate->add_option("--axis", axis, "components, parallel, or r (default components)");
    ablate->add_option("--r", r_list, "comma-separated r values for --axis r");
    ablate->add_flag("--train", ablate_train, "train each row and report test metrics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return cmd_train(config_path, out_override);
        if (*eval) return cmd_eval(ckpt_path, split);
        if (*predict) return cmd_predict(ckpt_path, image_path);
        if (*params) return cmd_params(config_path, kv_path);
        if (*bench) return cmd_bench_scan(bench_lens, bench_state, bench_width, bench_block,
                                          bench_repeats);
        if (*ablate) return cmd_ablate(config_path, axis, r_list, ablate_train);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;  // no subcommand matched
}
