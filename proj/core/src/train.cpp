#include "adaptvig/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "adaptvig/io.hpp"
#include "adaptvig/rng.hpp"

namespace adaptvig {

namespace {

Tensor4 gather_batch(const Dataset& ds, const std::vector<int>& indices) {
    const Shape4 s = ds.images.shape();
    Tensor4 batch(Shape4{static_cast<int>(indices.size()), s.c, s.h, s.w});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const int src = indices[b];
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    batch.at(static_cast<int>(b), c, h, w) = ds.images.at(src, c, h, w);
                }
    }
    return batch;
}

int argmax_class(const Tensor4& logits, int sample) {
    const int k = logits.shape().c;
    int best = 0;
    for (int j = 1; j < k; ++j) {
        if (logits.at(sample, j, 0, 0) > logits.at(sample, best, 0, 0)) {
            best = j;
        }
    }
    return best;
}

}  // namespace

EvalResult evaluate(const Model& model, const Dataset& ds, int batch_size) {
    const int n = ds.images.shape().n;
    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        std::vector<int> idx;
        for (int i = start; i < std::min(start + batch_size, n); ++i) {
            idx.push_back(i);
        }
        const Tensor4 logits = model.forward_infer(gather_batch(ds, idx));
        const int k = logits.shape().c;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const int label = ds.labels[static_cast<std::size_t>(idx[b])];
            double mx = logits.at(static_cast<int>(b), 0, 0, 0);
            for (int j = 1; j < k; ++j) {
                mx = std::max(mx, logits.at(static_cast<int>(b), j, 0, 0));
            }
            double denom = 0.0;
            for (int j = 0; j < k; ++j) {
                denom += std::exp(logits.at(static_cast<int>(b), j, 0, 0) - mx);
            }
            loss_sum += std::log(denom) + mx - logits.at(static_cast<int>(b), label, 0, 0);
            if (argmax_class(logits, static_cast<int>(b)) == label) {
                ++correct;
            }
        }
    }
    EvalResult r;
    r.loss = loss_sum / n;
    r.accuracy = static_cast<double>(correct) / n;
    return r;
}

TrainResult train_model(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir) {
    if (cfg.learning_rate < 0.0) {
        throw std::invalid_argument("train_model: learning rate must be nonnegative");
    }
    if (cfg.steps < 1 || cfg.batch_size < 1) {
        throw std::invalid_argument("train_model: steps and batch_size must be >= 1");
    }
    std::filesystem::create_directories(out_dir);

    ParamStore& store = model.params();
    const std::vector<int> t_params = model.temperature_params();

    std::vector<std::vector<double>> velocity(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
        velocity[i].assign(store.value(static_cast<int>(i)).data().size(), 0.0);
    }

    std::string metrics = "step,loss,accuracy";
    for (int tp : t_params) {
        metrics += "," + store.name(tp);
    }
    metrics += "\n";
    auto log_row = [&](int step) {
        const EvalResult ev = evaluate(model, ds, cfg.batch_size);
        metrics += std::to_string(step) + "," + fmt_double(ev.loss) + "," +
                   fmt_double(ev.accuracy);
        for (int tp : t_params) {
            metrics += "," + fmt_double(store.value(tp).item());
        }
        metrics += "\n";
        return ev;
    };

    TrainResult result;
    result.temperature_names.reserve(t_params.size());
    for (int tp : t_params) {
        result.temperature_names.push_back(store.name(tp));
    }

    const EvalResult initial = log_row(0);
    result.initial_loss = initial.loss;
    result.initial_accuracy = initial.accuracy;

    const int n = ds.images.shape().n;
    Rng order_rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    std::size_t cursor = 0;

    EvalResult last = initial;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<int> batch_idx;
        std::vector<int> batch_labels;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch_idx.push_back(order[cursor]);
            batch_labels.push_back(ds.labels[static_cast<std::size_t>(order[cursor])]);
            ++cursor;
        }

        Tape tape;
        const std::vector<Var> params = bind_params(tape, store);
        Var input = tape.constant(gather_batch(ds, batch_idx));
        Var logits = model.forward(tape, params, input);
        Var loss = cross_entropy_logits(logits, batch_labels);
        const double loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) {
            throw std::runtime_error("train_model: non-finite loss at step " +
                                     std::to_string(step));
        }
        tape.backward(loss);

        for (std::size_t i = 0; i < store.count(); ++i) {
            const Tensor4& bound = params[i].value();
            if (!bound.has_grad()) {
                continue;
            }
            const std::vector<double>& g = bound.grad_data();
            std::vector<double>& v = velocity[i];
            std::vector<double>& p = store.value(static_cast<int>(i)).data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                v[j] = cfg.momentum * v[j] + g[j];
                p[j] -= cfg.learning_rate * v[j];
            }
        }

        if (step % cfg.log_interval == 0 || step == cfg.steps) {
            last = log_row(step);
        }
    }

    result.final_loss = last.loss;
    result.final_accuracy = last.accuracy;
    for (int tp : t_params) {
        result.final_temperatures.push_back(store.value(tp).item());
    }
    result.steps_run = cfg.steps;

    write_text_file(out_dir / "metrics.csv", metrics);

    // final parameters, flattened in store order into one container
    Tensor4 flat(Shape4{1, 1, 1, static_cast<int>(store.scalar_count())});
    std::string index_csv = "name,offset,numel,n,c,h,w\n";
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < store.count(); ++i) {
        const Tensor4& p = store.value(static_cast<int>(i));
        const Shape4& s = p.shape();
        index_csv += store.name(static_cast<int>(i)) + "," + std::to_string(offset) + "," +
                     std::to_string(p.numel()) + "," + std::to_string(s.n) + "," +
                     std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w) +
                     "\n";
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            flat[offset + j] = p[j];
        }
        offset += p.numel();
    }
    write_avgt(out_dir / "params.avgt", flat);
    write_text_file(out_dir / "params_index.csv", index_csv);

    nlohmann::json echo;
    echo["model"] = nlohmann::json::parse(cfg.model.to_json());
    echo["learning_rate"] = cfg.learning_rate;
    echo["momentum"] = cfg.momentum;
    echo["steps"] = cfg.steps;
    echo["batch_size"] = cfg.batch_size;
    echo["seed"] = cfg.seed;
    echo["log_interval"] = cfg.log_interval;
    echo["dataset"] = cfg.dataset_desc;
    write_text_file(out_dir / "config.json", echo.dump(2) + "\n");

    return result;
}

}  // namespace adaptvig
