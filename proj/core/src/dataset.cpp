#include "adaptvig/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adaptvig/io.hpp"
#include "adaptvig/rng.hpp"

namespace adaptvig {

Dataset generate_blobs(const BlobSpec& spec) {
    if (spec.n_samples < 1 || spec.classes < 1 || spec.channels < 1 || spec.h < 4 || spec.w < 4) {
        throw std::invalid_argument("generate_blobs: invalid spec");
    }
    Rng rng(spec.seed);
    Dataset ds;
    ds.images = Tensor4(Shape4{spec.n_samples, spec.channels, spec.h, spec.w});
    ds.labels.resize(static_cast<std::size_t>(spec.n_samples));
    ds.num_classes = spec.classes;

    const int half = std::max(1, std::min(spec.h, spec.w) / 4);
    for (int i = 0; i < spec.n_samples; ++i) {
        const int label = i % spec.classes;
        ds.labels[static_cast<std::size_t>(i)] = label;
        const double frac = static_cast<double>(label + 1) / (spec.classes + 1);
        const int cy = static_cast<int>(std::lround(frac * (spec.h - 1)));
        const int cx = static_cast<int>(std::lround(frac * (spec.w - 1)));
        const double value = 1.0 + static_cast<double>(label);
        for (int c = 0; c < spec.channels; ++c)
            for (int y = 0; y < spec.h; ++y)
                for (int x = 0; x < spec.w; ++x) {
                    const bool inside = std::abs(y - cy) <= half && std::abs(x - cx) <= half;
                    ds.images.at(i, c, y, x) =
                        (inside ? value : 0.0) + rng.normal(0.0, spec.noise_sigma);
                }
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& tensor_file,
                  const std::filesystem::path& labels_csv) {
    write_avgt(tensor_file, ds.images);
    std::string csv = "index,label\n";
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        csv += std::to_string(i) + "," + std::to_string(ds.labels[i]) + "\n";
    }
    write_text_file(labels_csv, csv);
}

Dataset load_dataset(const std::filesystem::path& tensor_file,
                     const std::filesystem::path& labels_csv) {
    Dataset ds;
    ds.images = read_avgt(tensor_file);

    std::ifstream in(labels_csv);
    if (!in) {
        throw std::runtime_error("load_dataset: cannot open " + labels_csv.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("load_dataset: empty labels file " + labels_csv.string());
    }
    int max_label = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error("load_dataset: malformed labels row '" + line + "'");
        }
        const int label = std::stoi(line.substr(comma + 1));
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    if (static_cast<int>(ds.labels.size()) != ds.images.shape().n) {
        throw std::runtime_error("load_dataset: label count does not match tensor batch size");
    }
    ds.num_classes = max_label + 1;
    return ds;
}

}  // namespace adaptvig
