#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptvig/autodiff.hpp"
#include "adaptvig/rng.hpp"
#include "adaptvig/tensor.hpp"

namespace adaptvig {

constexpr double kNormEps = 1e-5;
constexpr double kInitStd = 0.02;

/// Owns every learnable tensor of a model. Layers hold indices into the store;
/// forward passes run against the per-tape bound Vars.
class ParamStore {
public:
    int add(std::string name, Tensor4 value);
    std::size_t count() const { return values_.size(); }
    std::int64_t scalar_count() const;

    Tensor4& value(int idx) { return values_[static_cast<std::size_t>(idx)]; }
    const Tensor4& value(int idx) const { return values_[static_cast<std::size_t>(idx)]; }
    const std::string& name(int idx) const { return names_[static_cast<std::size_t>(idx)]; }

private:
    std::vector<Tensor4> values_;
    std::vector<std::string> names_;
};

/// One leaf Var per stored parameter, in store order.
std::vector<Var> bind_params(Tape& tape, const ParamStore& store);

struct Conv2d {
    int weight = -1;
    int bias = -1;
    int stride = 1;
    int groups = 1;

    Var forward(std::span<const Var> p, const Var& x) const {
        return conv2d(x, p[static_cast<std::size_t>(weight)], p[static_cast<std::size_t>(bias)],
                      stride, groups);
    }
};

Conv2d add_conv2d(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c,
                  int kernel, int stride = 1, int groups = 1);

/// Normalization with per-channel affine gain/shift.
struct Norm {
    int gain = -1;
    int shift = -1;
    NormMode mode = NormMode::per_sample_all;
    double eps = kNormEps;

    Var forward(std::span<const Var> p, const Var& x) const {
        Var y = normalize(x, mode, eps);
        y = mul(y, p[static_cast<std::size_t>(gain)]);
        return add(y, p[static_cast<std::size_t>(shift)]);
    }
};

Norm add_norm(ParamStore& store, const std::string& name, int channels,
              NormMode mode = NormMode::per_sample_all, double eps = kNormEps);

/// conv -> normalize -> GELU
struct ConvBlock {
    Conv2d conv;
    Norm norm;

    Var forward(std::span<const Var> p, const Var& x) const {
        return gelu(norm.forward(p, conv.forward(p, x)));
    }
};

ConvBlock add_conv_block(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c,
                         int kernel, int stride = 1, int groups = 1);

}  // namespace adaptvig
