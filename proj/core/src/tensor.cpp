#include "adaptvig/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace adaptvig {

std::string Shape4::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

namespace {
void check_shape(const Shape4& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw std::invalid_argument("Tensor4: all dimensions must be >= 1, got " + s.str());
    }
}
}  // namespace

Tensor4::Tensor4(Shape4 s, double fill) : shape_(s) {
    check_shape(s);
    data_.assign(static_cast<std::size_t>(s.numel()), fill);
}

Tensor4::Tensor4(Shape4 s, std::vector<double> values) : shape_(s), data_(std::move(values)) {
    check_shape(s);
    if (static_cast<std::int64_t>(data_.size()) != s.numel()) {
        throw std::invalid_argument("Tensor4: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + s.str());
    }
}

Tensor4 Tensor4::scalar(double v) {
    Tensor4 t(Shape4{1, 1, 1, 1});
    t.data_[0] = v;
    return t;
}

double Tensor4::item() const {
    if (data_.size() != 1) {
        throw std::logic_error("Tensor4::item: tensor has " + std::to_string(data_.size()) +
                               " elements, expected 1");
    }
    return data_[0];
}

std::vector<double>& Tensor4::grad_data() {
    if (!grad_) {
        grad_.emplace(data_.size(), 0.0);
    }
    return *grad_;
}

const std::vector<double>& Tensor4::grad_data() const {
    if (!grad_) {
        throw std::logic_error("Tensor4: gradient requested but never accumulated");
    }
    return *grad_;
}

Tensor4 Tensor4::grad_tensor() const {
    return Tensor4(shape_, grad_data());
}

void Tensor4::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != data_.size()) {
        throw std::invalid_argument("Tensor4: gradient size mismatch");
    }
    auto& acc = grad_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        acc[i] += g[i];
    }
}

bool broadcastable_to(const Shape4& from, const Shape4& to) {
    auto ok = [](int f, int t) { return f == t || f == 1; };
    return ok(from.n, to.n) && ok(from.c, to.c) && ok(from.h, to.h) && ok(from.w, to.w);
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace adaptvig
