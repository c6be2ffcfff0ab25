#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "adaptvig/blocks.hpp"
#include "adaptvig/dataset.hpp"

namespace adaptvig {

struct TrainConfig {
    ModelConfig model = ModelConfig::toy();
    double learning_rate = 0.05;
    double momentum = 0.9;
    int steps = 200;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int log_interval = 10;
    std::string dataset_desc = "synthetic_blobs";
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double initial_accuracy = 0.0;
    double final_accuracy = 0.0;
    std::vector<std::string> temperature_names;
    std::vector<double> final_temperatures;
    int steps_run = 0;
};

/// Mean cross-entropy and accuracy over the whole dataset.
EvalResult evaluate(const Model& model, const Dataset& ds, int batch_size);

/// SGD with momentum on cross-entropy. Writes metrics.csv (full-train loss,
/// accuracy and every block temperature at step 0 and every log interval),
/// params.avgt + params_index.csv (final parameters), and config.json under
/// out_dir. Deterministic per seed; a non-finite loss aborts with the step
/// index.
TrainResult train_model(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir);

}  // namespace adaptvig
