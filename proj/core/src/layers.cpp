#include "adaptvig/layers.hpp"

#include <stdexcept>

namespace adaptvig {

int ParamStore::add(std::string name, Tensor4 value) {
    values_.push_back(std::move(value));
    names_.push_back(std::move(name));
    return static_cast<int>(values_.size()) - 1;
}

std::int64_t ParamStore::scalar_count() const {
    std::int64_t total = 0;
    for (const Tensor4& v : values_) {
        total += v.numel();
    }
    return total;
}

std::vector<Var> bind_params(Tape& tape, const ParamStore& store) {
    std::vector<Var> vars;
    vars.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
        vars.push_back(tape.leaf(store.value(static_cast<int>(i))));
    }
    return vars;
}

Conv2d add_conv2d(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c,
                  int kernel, int stride, int groups) {
    if (in_c % groups != 0 || out_c % groups != 0) {
        throw std::invalid_argument("add_conv2d: groups must divide channel counts");
    }
    Tensor4 w(Shape4{out_c, in_c / groups, kernel, kernel});
    for (std::int64_t i = 0; i < w.numel(); ++i) {
        w[i] = rng.trunc_normal(kInitStd);
    }
    Conv2d conv;
    conv.weight = store.add(name + ".w", std::move(w));
    conv.bias = store.add(name + ".b", Tensor4(Shape4{1, out_c, 1, 1}, 0.0));
    conv.stride = stride;
    conv.groups = groups;
    return conv;
}

Norm add_norm(ParamStore& store, const std::string& name, int channels, NormMode mode,
              double eps) {
    Norm norm;
    norm.gain = store.add(name + ".gain", Tensor4(Shape4{1, channels, 1, 1}, 1.0));
    norm.shift = store.add(name + ".shift", Tensor4(Shape4{1, channels, 1, 1}, 0.0));
    norm.mode = mode;
    norm.eps = eps;
    return norm;
}

ConvBlock add_conv_block(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c,
                         int kernel, int stride, int groups) {
    ConvBlock block;
    block.conv = add_conv2d(store, rng, name + ".conv", in_c, out_c, kernel, stride, groups);
    block.norm = add_norm(store, name + ".norm", out_c);
    return block;
}

}  // namespace adaptvig
