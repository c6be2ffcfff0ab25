#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaptvig {

enum class Axis { height, width };

struct Shape4 {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Dense rank-4 array in row-major NCHW order, double precision, with an
/// optional same-shape gradient accumulator.
class Tensor4 {
public:
    Tensor4() : shape_{1, 1, 1, 1}, data_(1, 0.0) {}
    explicit Tensor4(Shape4 s, double fill = 0.0);
    Tensor4(Shape4 s, std::vector<double> values);

    static Tensor4 scalar(double v);
    static Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.shape_); }

    const Shape4& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    std::int64_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Value of a one-element tensor.
    double item() const;

    // Gradient slot. Allocated on demand, always the same shape as the data.
    bool has_grad() const { return grad_.has_value(); }
    std::vector<double>& grad_data();
    const std::vector<double>& grad_data() const;
    Tensor4 grad_tensor() const;
    void clear_grad() { grad_.reset(); }
    void accumulate_grad(const std::vector<double>& g);

private:
    Shape4 shape_;
    std::vector<double> data_;
    std::optional<std::vector<double>> grad_;
};

/// True when, per dimension, b matches a or is 1 (b broadcasts to a).
bool broadcastable_to(const Shape4& from, const Shape4& to);

double max_abs_diff(const Tensor4& a, const Tensor4& b);

}  // namespace adaptvig
