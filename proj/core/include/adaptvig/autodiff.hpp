#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "adaptvig/tensor.hpp"

namespace adaptvig {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the
/// tape is alive.
class Var {
public:
    Var() = default;
    bool valid() const { return tape_ != nullptr; }
    const Tensor4& value() const;
    Shape4 shape() const { return value().shape(); }
    bool has_grad() const;
    Tensor4 grad() const;
    const std::vector<double>& grad_data() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Ordered record of executed primitives. backward() replays the record in
/// reverse, visiting each recorded operation exactly once and accumulating
/// adjoints additively into every participating entry's gradient slot.
class Tape {
public:
    using Pull = std::function<void(Tape&, int)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Gradient-tracked input (parameter or data).
    Var leaf(Tensor4 value);
    /// Untracked value; no gradient is ever accumulated for it.
    Var constant(Tensor4 value);

    /// Reverse sweep from a scalar loss. Throws if loss is not one element.
    void backward(const Var& loss);

    std::size_t size() const { return entries_.size(); }

    // -- used by the primitive implementations --
    Var record(Tensor4 value, bool requires_grad, Pull pull);
    const Tensor4& value_of(int id) const { return entries_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const {
        return entries_[static_cast<std::size_t>(id)].requires_grad;
    }
    /// Upstream gradient of an entry during backward.
    const std::vector<double>& upstream(int id) const {
        return entries_[static_cast<std::size_t>(id)].value.grad_data();
    }
    /// Accumulation target for an entry, or nullptr when the entry is untracked.
    std::vector<double>* grad_sink(int id);

private:
    struct Entry {
        Tensor4 value;
        bool requires_grad = false;
        Pull pull;  // empty for leaves and constants
    };
    // deque keeps references from value_of()/Var::value() stable while new
    // operations are recorded
    std::deque<Entry> entries_;
};

enum class NormMode {
    per_sample_all,     // one group per sample over (c,h,w)
    per_token_channel,  // one group per (n,h,w) token over channels
    per_row_last,       // one group per (n,c,h) row over the last axis
};

// ---- primitives ------------------------------------------------------------
// All are pure with respect to their inputs and differentiable; binary ops
// broadcast the second operand (per-dimension size equal or 1).

Var roll(const Var& x, int shift, Axis axis);

Var add(const Var& a, const Var& b);
Var add(const Var& a, double s);
Var sub(const Var& a, const Var& b);
Var sub(const Var& a, double s);
Var mul(const Var& a, const Var& b);
Var mul(const Var& a, double s);
Var divide(const Var& a, const Var& b);
Var max(const Var& a, const Var& b);  // ties route the gradient to a
Var max(const Var& a, double s);

Var exp(const Var& x);
Var abs(const Var& x);  // sign(0) := 0
Var sqrt(const Var& x);
Var sigmoid(const Var& x);
Var gelu(const Var& x);  // tanh approximation

Var reduce_abs_sum_channels(const Var& x);  // (n,c,h,w) -> (n,1,h,w)
Var reduce_sum_channels(const Var& x);

Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int c_begin, int c_end);

/// Cross-correlation with same-padding kernel//2. weights (out_c, in_c/groups, k, k),
/// bias (1, out_c, 1, 1), stride in {1, 2}, groups divides both channel counts.
Var conv2d(const Var& x, const Var& weights, const Var& bias, int stride = 1, int groups = 1);

/// Zero-mean unit-variance per group (population variance). No affine; layers
/// apply gain/shift with mul/add.
Var normalize(const Var& x, NormMode mode, double eps);

Var softmax_lastaxis(const Var& x);

/// Batched matrix product on (n,1,R,K) x (n,1,K,C); transpose_b reads b as (n,1,C,K).
Var matmul(const Var& a, const Var& b, bool transpose_b = false);

Var to_tokens(const Var& x);                     // (n,c,h,w) -> (n,1,h*w,c)
Var from_tokens(const Var& x, int h, int w);     // inverse of to_tokens

Var global_avg_pool(const Var& x);               // (n,c,h,w) -> (n,c,1,1)
Var sum_all(const Var& x);                       // scalar

/// Mean softmax cross-entropy of (n,k,1,1) logits against integer labels.
Var cross_entropy_logits(const Var& logits, std::vector<int> labels);

// ---- finite-difference oracle ----------------------------------------------

using TapedFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Central-difference check of the analytic gradient of f with respect to
/// leaves[leaf_index]. eps must lie in [1e-8, 1e-4]. Relative error per
/// coordinate uses denominator max(|analytic|, |numeric|, 1e-12).
double fd_check(const TapedFn& f, const std::vector<Tensor4>& leaves, std::size_t leaf_index,
                double eps);

/// fd_check over every leaf; returns the worst error.
double fd_check_all(const TapedFn& f, const std::vector<Tensor4>& leaves, double eps);

namespace testing {
/// Negative-control fixture: deliberately mis-scales the roll adjoint so that
/// gradient verification must fail.
void set_corrupt_roll_adjoint(bool on);
bool corrupt_roll_adjoint();
}  // namespace testing

}  // namespace adaptvig
