#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "adaptvig/tensor.hpp"

namespace adaptvig {

struct BlobSpec {
    int n_samples = 200;
    int classes = 2;
    int channels = 3;
    int h = 16;
    int w = 16;
    double noise_sigma = 0.1;
    std::uint64_t seed = 42;
};

struct Dataset {
    Tensor4 images;  // (n_samples, channels, h, w)
    std::vector<int> labels;
    int num_classes = 2;
};

/// Synthetic two-region images: a class-dependent square blob (value 1+k at a
/// class-dependent position) over a zero background, plus seeded Gaussian
/// noise. Deterministic per seed; labels cycle 0..classes-1.
Dataset generate_blobs(const BlobSpec& spec);

void save_dataset(const Dataset& ds, const std::filesystem::path& tensor_file,
                  const std::filesystem::path& labels_csv);
Dataset load_dataset(const std::filesystem::path& tensor_file,
                     const std::filesystem::path& labels_csv);

}  // namespace adaptvig
