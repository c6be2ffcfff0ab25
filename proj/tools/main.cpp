#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaptvig/blocks.hpp"
#include "adaptvig/dataset.hpp"
#include "adaptvig/gating.hpp"
#include "adaptvig/grad_suite.hpp"
#include "adaptvig/graph.hpp"
#include "adaptvig/io.hpp"
#include "adaptvig/rng.hpp"
#include "adaptvig/train.hpp"

namespace fs = std::filesystem;
using namespace adaptvig;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw std::runtime_error("cannot open " + p.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct GraphRow {
    std::string method;
    int h = 0, w = 0, k_or_knn = 0;
    double tau = -1.0;  // negative: not applicable
    GraphMetrics metrics;
};

std::string graph_csv(const std::vector<GraphRow>& rows) {
    std::string csv = "method,h,w,k_or_knn,tau,C,lambda1,lambda2,S\n";
    for (const GraphRow& r : rows) {
        csv += r.method + "," + std::to_string(r.h) + "," + std::to_string(r.w) + "," +
               std::to_string(r.k_or_knn) + ",";
        if (r.tau >= 0.0) {
            csv += fmt_double(r.tau);
        }
        csv += "," + fmt_double(r.metrics.clustering) + "," + fmt_double(r.metrics.lambda1) +
               "," + fmt_double(r.metrics.lambda2) + "," + fmt_double(r.metrics.spectral_gap) +
               "\n";
    }
    return csv;
}

int cmd_generate(std::uint64_t seed, const fs::path& out_dir, int samples, int classes,
                 int channels, int h, int w, double sigma) {
    BlobSpec spec;
    spec.seed = seed;
    spec.n_samples = samples;
    spec.classes = classes;
    spec.channels = channels;
    spec.h = h;
    spec.w = w;
    spec.noise_sigma = sigma;
    fs::create_directories(out_dir);
    const Dataset ds = generate_blobs(spec);
    save_dataset(ds, out_dir / "data.avgt", out_dir / "labels.csv");
    std::cout << "wrote " << (out_dir / "data.avgt").string() << " ("
              << ds.images.shape().str() << ") and labels.csv\n";
    return 0;
}

int cmd_train(const TrainConfig& cfg, const fs::path& out_dir, const std::string& data_tensor,
              const std::string& data_labels) {
    Dataset ds;
    if (data_tensor.empty()) {
        BlobSpec spec;
        spec.seed = cfg.seed;
        ds = generate_blobs(spec);
    } else {
        if (data_labels.empty()) {
            throw std::runtime_error("train: --data-labels required with --data-tensor");
        }
        ds = load_dataset(data_tensor, data_labels);
    }

    ModelConfig mc = cfg.model;
    if (mc.num_classes != ds.num_classes) {
        throw std::runtime_error("train: model num_classes " + std::to_string(mc.num_classes) +
                                 " does not match dataset classes " +
                                 std::to_string(ds.num_classes));
    }
    Model model = Model::build(mc);
    std::cout << "model parameters: " << model.param_count() << "\n";

    TrainConfig run_cfg = cfg;
    run_cfg.dataset_desc = data_tensor.empty() ? "synthetic_blobs" : data_tensor;
    const TrainResult r = train_model(model, ds, run_cfg, out_dir);
    std::cout << "initial loss " << fmt_double(r.initial_loss) << ", final loss "
              << fmt_double(r.final_loss) << ", final accuracy " << fmt_double(r.final_accuracy)
              << "\n";
    for (std::size_t i = 0; i < r.temperature_names.size(); ++i) {
        std::cout << r.temperature_names[i] << " = " << fmt_double(r.final_temperatures[i])
                  << "\n";
    }
    return 0;
}

int cmd_analyze_graph(const std::string& mode, std::vector<int> sizes, int h, int w, int k,
                      int knn, double tau, const std::string& input, const std::string& method,
                      const fs::path& out_dir) {
    EigenMethod em = EigenMethod::automatic;
    if (method == "dense") {
        em = EigenMethod::dense;
    } else if (method == "iterative") {
        em = EigenMethod::iterative;
    }

    std::vector<GraphRow> rows;
    if (mode == "scaffold") {
        if (sizes.empty()) {
            sizes = {};
        }
        std::vector<std::pair<int, int>> grids;
        if (!sizes.empty()) {
            for (int s : sizes) {
                grids.emplace_back(s, s);
            }
        } else {
            grids.emplace_back(h, w);
        }
        for (auto [gh, gw] : grids) {
            GraphRow row;
            row.method = "scaffold";
            row.h = gh;
            row.w = gw;
            row.k_or_knn = k;
            row.metrics = graph_metrics(build_scaffold_graph(gh, gw, k), em);
            rows.push_back(row);
        }
    } else if (mode == "gated" || mode == "knn") {
        if (input.empty()) {
            throw std::runtime_error("analyze-graph: --input tensor file required for mode " +
                                     mode);
        }
        const Tensor4 x = read_avgt(input);
        GraphRow row;
        row.h = x.shape().h;
        row.w = x.shape().w;
        if (mode == "gated") {
            GatingParams params;
            row.method = "gated";
            row.k_or_knn = k;
            row.tau = tau;
            row.metrics = graph_metrics(build_gated_graph(x, k, params, tau), em);
        } else {
            row.method = "knn";
            row.k_or_knn = knn;
            row.metrics = graph_metrics(build_knn_graph(x, knn), em);
        }
        rows.push_back(row);
    } else {
        throw std::runtime_error("analyze-graph: unknown mode '" + mode + "'");
    }

    const std::string csv = graph_csv(rows);
    fs::create_directories(out_dir);
    write_text_file(out_dir / "graph_metrics.csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_grad_check(std::uint64_t seed, bool corrupt) {
    if (corrupt) {
        adaptvig::testing::set_corrupt_roll_adjoint(true);
    }
    const std::vector<ComponentCheck> checks = run_grad_checks(seed);
    bool ok = true;
    for (const ComponentCheck& c : checks) {
        std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  max_rel_err="
                  << fmt_double(c.max_err) << "  tol=" << fmt_double(c.tolerance) << "\n";
        ok = ok && c.pass;
    }
    std::cout << (ok ? "gradient check: all components passed\n"
                     : "gradient check: FAILURES detected\n");
    return ok ? 0 : 1;
}

int cmd_heatmap(const std::string& input, int ref_row, int ref_col, double temperature,
                const fs::path& out_dir) {
    const Tensor4 x = read_avgt(input);
    GatingParams params;
    params.temperature = temperature;
    const Tensor4 heat = gate_heatmap(x, ref_row, ref_col, params);
    const Shape4 s = heat.shape();

    fs::create_directories(out_dir);
    write_pgm(out_dir / "heatmap.pgm", heat.data(), s.h, s.w);
    std::string csv = "row,col,gate\n";
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
            csv += std::to_string(i) + "," + std::to_string(j) + "," +
                   fmt_double(heat.at(0, 0, i, j)) + "\n";
        }
    write_text_file(out_dir / "heatmap.csv", csv);
    std::cout << "wrote heatmap.pgm and heatmap.csv (" << s.h << "x" << s.w << ")\n";
    return 0;
}

int cmd_bench(const std::vector<int>& sizes, int k, std::uint64_t seed, const fs::path& out_dir) {
    std::string csv = "h,w,shift_count,wall_time_ms\n";
    for (int size : sizes) {
        const ScaffoldSpec spec = scaffold_shifts(size, size, k);
        const int expected = 2 + floor_log2(size) + floor_log2(size);
        if (static_cast<int>(spec.shifts.size()) != expected) {
            throw std::runtime_error("bench: shift count " +
                                     std::to_string(spec.shifts.size()) +
                                     " violates 2+floor(log2 h)+floor(log2 w)=" +
                                     std::to_string(expected));
        }
        Rng rng(seed);
        Tensor4 x(Shape4{1, 8, size, size});
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            x[i] = rng.normal(0.0, 1.0);
        }
        AGCConfig cfg;
        cfg.k = k;
        const auto start = std::chrono::steady_clock::now();
        Tape tape;
        Var xv = tape.constant(x);
        Var temp = tape.constant(Tensor4::scalar(1.0));
        Var x_j = agc_aggregate(xv, cfg, temp);
        (void)x_j;
        const auto stop = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(stop - start).count();
        csv += std::to_string(size) + "," + std::to_string(size) + "," +
               std::to_string(spec.shifts.size()) + "," + fmt_double(ms) + "\n";
    }
    fs::create_directories(out_dir);
    write_text_file(out_dir / "bench.csv", csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AdaptViG desk-scale harness: adaptive graph convolution, hybrid "
                 "AGC/attention model, graph topology analysis"};
    app.require_subcommand(1);
    app.fallthrough(true);  // --seed / --out-dir may follow the subcommand

    std::uint64_t seed = 0;
    std::string out_dir = ".";
    app.add_option("--seed", seed, "global random seed");
    app.add_option("--out-dir", out_dir, "directory for all output files");

    // generate
    auto* generate = app.add_subcommand("generate", "write a synthetic blob dataset");
    int gen_samples = 200, gen_classes = 2, gen_channels = 3, gen_h = 16, gen_w = 16;
    double gen_sigma = 0.1;
    generate->add_option("--samples", gen_samples);
    generate->add_option("--classes", gen_classes);
    generate->add_option("--channels", gen_channels);
    generate->add_option("--height", gen_h);
    generate->add_option("--width", gen_w);
    generate->add_option("--sigma", gen_sigma);

    // train
    auto* train = app.add_subcommand("train", "train a model on blobs or a tensor file");
    std::string train_config, data_tensor, data_labels;
    int steps = 200, batch_size = 32, log_interval = 10;
    double lr = 0.05, momentum = 0.9;
    train->add_option("--config", train_config, "model config JSON file");
    train->add_option("--steps", steps);
    train->add_option("--batch-size", batch_size);
    train->add_option("--lr", lr);
    train->add_option("--momentum", momentum);
    train->add_option("--log-interval", log_interval);
    train->add_option("--data-tensor", data_tensor, "AVGT dataset (default: synthetic blobs)");
    train->add_option("--data-labels", data_labels, "labels CSV for --data-tensor");

    // analyze-graph
    auto* analyze = app.add_subcommand("analyze-graph", "graph topology metrics to CSV");
    std::string mode = "scaffold", input, method = "auto";
    std::vector<int> sizes;
    int ag_h = 14, ag_w = 14, ag_k = 2, ag_knn = 9;
    double tau = 0.5;
    analyze->add_option("--mode", mode, "scaffold | gated | knn")->required();
    analyze->add_option("--sizes", sizes, "square grid sizes (scaffold sweeps)")->delimiter(',');
    analyze->add_option("--height", ag_h);
    analyze->add_option("--width", ag_w);
    analyze->add_option("--k", ag_k, "local hop distance");
    analyze->add_option("--knn", ag_knn, "neighbor count for knn mode");
    analyze->add_option("--tau", tau, "gate threshold for gated mode");
    analyze->add_option("--input", input, "AVGT tensor for gated/knn modes");
    analyze->add_option("--method", method, "auto | dense | iterative");

    // grad-check
    auto* grad = app.add_subcommand("grad-check", "finite-difference gradient verification");
    bool corrupt = false;
    grad->add_flag("--corrupt-adjoint", corrupt,
                   "negative-control fixture: inject a deliberate adjoint fault");

    // heatmap
    auto* heatmap = app.add_subcommand("heatmap", "gate strength against a reference pixel");
    std::string hm_input;
    int ref_row = 0, ref_col = 0;
    double hm_temp = 1.0;
    heatmap->add_option("--input", hm_input, "AVGT tensor")->required();
    heatmap->add_option("--ref-row", ref_row)->required();
    heatmap->add_option("--ref-col", ref_col)->required();
    heatmap->add_option("--temperature", hm_temp);

    // bench
    auto* bench = app.add_subcommand("bench", "shift counts and forward wall time per size");
    std::vector<int> bench_sizes{8, 16, 32, 64};
    int bench_k = 2;
    bench->add_option("--sizes", bench_sizes)->delimiter(',');
    bench->add_option("--k", bench_k);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            return cmd_generate(seed, out_dir, gen_samples, gen_classes, gen_channels, gen_h,
                                gen_w, gen_sigma);
        }
        if (train->parsed()) {
            TrainConfig cfg;
            cfg.model = train_config.empty()
                            ? ModelConfig::toy(2, seed)
                            : ModelConfig::from_json(read_file(train_config));
            cfg.learning_rate = lr;
            cfg.momentum = momentum;
            cfg.steps = steps;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            cfg.log_interval = log_interval;
            return cmd_train(cfg, out_dir, data_tensor, data_labels);
        }
        if (analyze->parsed()) {
            return cmd_analyze_graph(mode, sizes, ag_h, ag_w, ag_k, ag_knn, tau, input, method,
                                     out_dir);
        }
        if (grad->parsed()) {
            return cmd_grad_check(seed, corrupt);
        }
        if (heatmap->parsed()) {
            GatingParams params;
            params.temperature = hm_temp;
            return cmd_heatmap(hm_input, ref_row, ref_col, hm_temp, out_dir);
        }
        if (bench->parsed()) {
            return cmd_bench(bench_sizes, bench_k, seed, out_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
