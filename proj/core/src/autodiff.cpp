#include "adaptvig/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace adaptvig {

namespace testing {
namespace {
std::atomic<bool> g_corrupt_roll{false};
}
void set_corrupt_roll_adjoint(bool on) { g_corrupt_roll.store(on); }
bool corrupt_roll_adjoint() { return g_corrupt_roll.load(); }
}  // namespace testing

// ---- Var / Tape -------------------------------------------------------------

const Tensor4& Var::value() const {
    if (!valid()) {
        throw std::logic_error("Var: use of an unbound handle");
    }
    return tape_->value_of(id_);
}

bool Var::has_grad() const { return value().has_grad(); }

Tensor4 Var::grad() const {
    const Tensor4& v = value();
    if (!v.has_grad()) {
        throw std::logic_error("Var: gradient requested before backward reached this value");
    }
    return v.grad_tensor();
}

const std::vector<double>& Var::grad_data() const { return value().grad_data(); }

Var Tape::leaf(Tensor4 value) { return record(std::move(value), true, {}); }

Var Tape::constant(Tensor4 value) { return record(std::move(value), false, {}); }

Var Tape::record(Tensor4 value, bool requires_grad, Pull pull) {
    entries_.push_back(Entry{std::move(value), requires_grad, std::move(pull)});
    return Var(this, static_cast<int>(entries_.size()) - 1);
}

std::vector<double>* Tape::grad_sink(int id) {
    Entry& e = entries_[static_cast<std::size_t>(id)];
    if (!e.requires_grad) {
        return nullptr;
    }
    return &e.value.grad_data();
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) {
        throw std::invalid_argument("Tape::backward: loss recorded on a different tape");
    }
    Entry& top = entries_.at(static_cast<std::size_t>(loss.id()));
    if (top.value.numel() != 1) {
        throw std::invalid_argument("Tape::backward: loss must be a scalar, got shape " +
                                    top.value.shape().str());
    }
    top.value.grad_data()[0] += 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        Entry& e = entries_[static_cast<std::size_t>(id)];
        if (e.pull && e.value.has_grad()) {
            e.pull(*this, id);
        }
    }
}

// ---- helpers ----------------------------------------------------------------

namespace {

void check_same_tape(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands on different tapes");
    }
}

int axis_len(const Shape4& s, Axis a) { return a == Axis::height ? s.h : s.w; }

int wrap(int i, int l) {
    const int m = i % l;
    return m < 0 ? m + l : m;
}

// Strides into a broadcast operand; zero on broadcast dimensions.
struct BcastMap {
    std::int64_t sn, sc, sh, sw;

    static BcastMap make(const Shape4& out, const Shape4& b, const char* op) {
        if (!broadcastable_to(b, out)) {
            throw std::invalid_argument(std::string(op) + ": shape " + b.str() +
                                        " not broadcastable to " + out.str());
        }
        BcastMap m{};
        m.sw = b.w == 1 ? 0 : 1;
        m.sh = b.h == 1 ? 0 : b.w;
        m.sc = b.c == 1 ? 0 : static_cast<std::int64_t>(b.h) * b.w;
        m.sn = b.n == 1 ? 0 : static_cast<std::int64_t>(b.c) * b.h * b.w;
        return m;
    }

    std::int64_t at(int n, int c, int h, int w) const {
        return n * sn + c * sc + h * sh + w * sw;
    }
};

// Generic broadcast binary primitive. f(a,b) computes the result; da/db give
// the local partials as functions of the operand values.
template <class F, class DA, class DB>
Var binary_op(const char* name, const Var& a, const Var& b, F f, DA da, DB db) {
    check_same_tape(a, b, name);
    const Tensor4& av = a.value();
    const Tensor4& bv = b.value();
    const Shape4 s = av.shape();
    const BcastMap bm = BcastMap::make(s, bv.shape(), name);

    Tensor4 out(s);
    std::int64_t i = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w, ++i) {
                    out[i] = f(av[i], bv[bm.at(n, c, h, w)]);
                }

    Tape& t = *a.tape();
    const bool req = t.requires_grad(a.id()) || t.requires_grad(b.id());
    if (!req) {
        return t.record(std::move(out), false, {});
    }
    const int aid = a.id();
    const int bid = b.id();
    return t.record(std::move(out), true, [aid, bid, bm, da, db](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        const Tensor4& av2 = tp.value_of(aid);
        const Tensor4& bv2 = tp.value_of(bid);
        std::vector<double>* ga = tp.grad_sink(aid);
        std::vector<double>* gb = tp.grad_sink(bid);
        const Shape4 s2 = av2.shape();
        std::int64_t i2 = 0;
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c)
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w, ++i2) {
                        const std::int64_t j = bm.at(n, c, h, w);
                        const double gi = g[static_cast<std::size_t>(i2)];
                        if (ga) {
                            (*ga)[static_cast<std::size_t>(i2)] += gi * da(av2[i2], bv2[j]);
                        }
                        if (gb) {
                            (*gb)[static_cast<std::size_t>(j)] += gi * db(av2[i2], bv2[j]);
                        }
                    }
    });
}

// Elementwise unary primitive. df(x, y) is the derivative given input and output.
template <class F, class DF>
Var unary_op(const Var& x, F f, DF df) {
    if (!x.valid()) {
        throw std::invalid_argument("unary op: unbound operand");
    }
    const Tensor4& xv = x.value();
    Tensor4 out(xv.shape());
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
        out[i] = f(xv[i]);
    }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, df](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& xv2 = tp.value_of(xid);
        const Tensor4& yv2 = tp.value_of(self);
        for (std::int64_t i = 0; i < xv2.numel(); ++i) {
            (*gx)[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * df(xv2[i], yv2[i]);
        }
    });
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kGeluCubic = 0.044715;

double gelu_scalar(double x) {
    const double s = std::numbers::sqrt2 / std::sqrt(std::numbers::pi);  // sqrt(2/pi)
    const double inner = s * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad_scalar(double x) {
    const double s = std::numbers::sqrt2 / std::sqrt(std::numbers::pi);
    const double inner = s * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(inner);
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * s * (1.0 + 3.0 * kGeluCubic * x * x);
}

}  // namespace

// ---- ops --------------------------------------------------------------------

Var roll(const Var& x, int shift, Axis axis) {
    const Tensor4& xv = x.value();
    const Shape4 s = xv.shape();
    const int len = axis_len(s, axis);
    const int sh = wrap(shift, len);

    Tensor4 out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    const int src_h = axis == Axis::height ? wrap(h - sh, len) : h;
                    const int src_w = axis == Axis::width ? wrap(w - sh, len) : w;
                    out.at(n, c, h, w) = xv.at(n, c, src_h, src_w);
                }

    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, sh, axis, len](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const double fault = testing::corrupt_roll_adjoint() ? 1.001 : 1.0;
        const Shape4 s2 = tp.value_of(self).shape();
        const Tensor4& yv = tp.value_of(self);
        std::int64_t i = 0;
        // adjoint of roll(., shift) is roll(., -shift)
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c)
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w, ++i) {
                        const int src_h = axis == Axis::height ? wrap(h - sh, len) : h;
                        const int src_w = axis == Axis::width ? wrap(w - sh, len) : w;
                        (*gx)[static_cast<std::size_t>(yv.index(n, c, src_h, src_w))] +=
                            fault * g[static_cast<std::size_t>(i)];
                    }
    });
}

Var add(const Var& a, const Var& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var add(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var sub(const Var& a, double s) { return add(a, -s); }

Var mul(const Var& a, const Var& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var mul(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var divide(const Var& a, const Var& b) {
    return binary_op(
        "divide", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Var max(const Var& a, const Var& b) {
    return binary_op(
        "max", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var max(const Var& a, double s) {
    return unary_op(
        a, [s](double x) { return x >= s ? x : s; },
        [s](double x, double) { return x >= s ? 1.0 : 0.0; });
}

Var exp(const Var& x) {
    return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var abs(const Var& x) {
    return unary_op(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(const Var& x) {
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return y == 0.0 ? 0.0 : 0.5 / y; });
}

Var sigmoid(const Var& x) {
    return unary_op(x, [](double v) { return sigmoid_scalar(v); },
                    [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
    return unary_op(x, [](double v) { return gelu_scalar(v); },
                    [](double v, double) { return gelu_grad_scalar(v); });
}

namespace {

Var reduce_channels_impl(const Var& x, bool take_abs) {
    const Tensor4& xv = x.value();
    const Shape4 s = xv.shape();
    Tensor4 out(Shape4{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const double v = xv.at(n, c, h, w);
                    acc += take_abs ? std::abs(v) : v;
                }
                out.at(n, 0, h, w) = acc;
            }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, take_abs](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& xv2 = tp.value_of(xid);
        const Tensor4& yv = tp.value_of(self);
        const Shape4 s2 = xv2.shape();
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c)
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w) {
                        const double gi = g[static_cast<std::size_t>(yv.index(n, 0, h, w))];
                        double d = 1.0;
                        if (take_abs) {
                            const double v = xv2.at(n, c, h, w);
                            d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                        }
                        (*gx)[static_cast<std::size_t>(xv2.index(n, c, h, w))] += gi * d;
                    }
    });
}

}  // namespace

Var reduce_abs_sum_channels(const Var& x) { return reduce_channels_impl(x, true); }

Var reduce_sum_channels(const Var& x) { return reduce_channels_impl(x, false); }

Var concat_channels(const Var& a, const Var& b) {
    check_same_tape(a, b, "concat_channels");
    const Shape4 sa = a.shape();
    const Shape4 sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: mismatched batch/spatial dims " + sa.str() +
                                    " vs " + sb.str());
    }
    const Tensor4& av = a.value();
    const Tensor4& bv = b.value();
    Tensor4 out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n) {
        for (int c = 0; c < sa.c; ++c)
            for (int h = 0; h < sa.h; ++h)
                for (int w = 0; w < sa.w; ++w) {
                    out.at(n, c, h, w) = av.at(n, c, h, w);
                }
        for (int c = 0; c < sb.c; ++c)
            for (int h = 0; h < sa.h; ++h)
                for (int w = 0; w < sa.w; ++w) {
                    out.at(n, sa.c + c, h, w) = bv.at(n, c, h, w);
                }
    }
    Tape& t = *a.tape();
    const bool req = t.requires_grad(a.id()) || t.requires_grad(b.id());
    if (!req) {
        return t.record(std::move(out), false, {});
    }
    const int aid = a.id();
    const int bid = b.id();
    const int ca = sa.c;
    return t.record(std::move(out), true, [aid, bid, ca](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        const Tensor4& yv = tp.value_of(self);
        const Shape4 s = yv.shape();
        std::vector<double>* ga = tp.grad_sink(aid);
        std::vector<double>* gb = tp.grad_sink(bid);
        const Tensor4& av2 = tp.value_of(aid);
        const Tensor4& bv2 = tp.value_of(bid);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w) {
                        const double gi = g[static_cast<std::size_t>(yv.index(n, c, h, w))];
                        if (c < ca) {
                            if (ga) {
                                (*ga)[static_cast<std::size_t>(av2.index(n, c, h, w))] += gi;
                            }
                        } else if (gb) {
                            (*gb)[static_cast<std::size_t>(bv2.index(n, c - ca, h, w))] += gi;
                        }
                    }
    });
}

Var slice_channels(const Var& x, int c_begin, int c_end) {
    const Shape4 s = x.shape();
    if (c_begin < 0 || c_end > s.c || c_begin >= c_end) {
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c_begin) + "," +
                                    std::to_string(c_end) + ") for c=" + std::to_string(s.c));
    }
    const Tensor4& xv = x.value();
    Tensor4 out(Shape4{s.n, c_end - c_begin, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int c = c_begin; c < c_end; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    out.at(n, c - c_begin, h, w) = xv.at(n, c, h, w);
                }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, c_begin](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& xv2 = tp.value_of(xid);
        const Shape4 s2 = yv.shape();
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c)
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w) {
                        (*gx)[static_cast<std::size_t>(xv2.index(n, c + c_begin, h, w))] +=
                            g[static_cast<std::size_t>(yv.index(n, c, h, w))];
                    }
    });
}

Var conv2d(const Var& x, const Var& weights, const Var& bias, int stride, int groups) {
    check_same_tape(x, weights, "conv2d");
    check_same_tape(x, bias, "conv2d");
    const Shape4 xs = x.shape();
    const Shape4 ws = weights.shape();
    const Shape4 bs = bias.shape();
    if (stride != 1 && stride != 2) {
        throw std::invalid_argument("conv2d: stride must be 1 or 2");
    }
    if (ws.h != ws.w) {
        throw std::invalid_argument("conv2d: kernel must be square, got " + ws.str());
    }
    const int k = ws.h;
    const int out_c = ws.n;
    if (groups < 1 || xs.c % groups != 0 || out_c % groups != 0) {
        throw std::invalid_argument("conv2d: groups=" + std::to_string(groups) +
                                    " must divide in_c=" + std::to_string(xs.c) +
                                    " and out_c=" + std::to_string(out_c));
    }
    const int cin_g = xs.c / groups;
    const int cout_g = out_c / groups;
    if (ws.c != cin_g) {
        throw std::invalid_argument("conv2d: weight shape " + ws.str() + " expects in_c/groups=" +
                                    std::to_string(cin_g));
    }
    if (bs.n != 1 || bs.c != out_c || bs.h != 1 || bs.w != 1) {
        throw std::invalid_argument("conv2d: bias shape must be (1," + std::to_string(out_c) +
                                    ",1,1), got " + bs.str());
    }
    const int pad = k / 2;
    const int oh = (xs.h + 2 * pad - k) / stride + 1;
    const int ow = (xs.w + 2 * pad - k) / stride + 1;

    const Tensor4& xv = x.value();
    const Tensor4& wv = weights.value();
    const Tensor4& bv = bias.value();
    Tensor4 out(Shape4{xs.n, out_c, oh, ow});
    for (int n = 0; n < xs.n; ++n)
        for (int g = 0; g < groups; ++g)
            for (int ocg = 0; ocg < cout_g; ++ocg) {
                const int oc = g * cout_g + ocg;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) {
                        double acc = bv.at(0, oc, 0, 0);
                        for (int icg = 0; icg < cin_g; ++icg) {
                            const int ic = g * cin_g + icg;
                            for (int kh = 0; kh < k; ++kh) {
                                const int ih = i * stride - pad + kh;
                                if (ih < 0 || ih >= xs.h) {
                                    continue;
                                }
                                for (int kw = 0; kw < k; ++kw) {
                                    const int iw = j * stride - pad + kw;
                                    if (iw < 0 || iw >= xs.w) {
                                        continue;
                                    }
                                    acc += xv.at(n, ic, ih, iw) * wv.at(oc, icg, kh, kw);
                                }
                            }
                        }
                        out.at(n, oc, i, j) = acc;
                    }
            }

    Tape& t = *x.tape();
    const bool req = t.requires_grad(x.id()) || t.requires_grad(weights.id()) ||
                     t.requires_grad(bias.id());
    if (!req) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    const int wid = weights.id();
    const int bid = bias.id();
    return t.record(std::move(out), true,
                    [xid, wid, bid, stride, groups, pad, k, cin_g, cout_g](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& xv2 = tp.value_of(xid);
        const Tensor4& wv2 = tp.value_of(wid);
        std::vector<double>* gx = tp.grad_sink(xid);
        std::vector<double>* gw = tp.grad_sink(wid);
        std::vector<double>* gb = tp.grad_sink(bid);
        const Shape4 ys = yv.shape();
        const Shape4 xs2 = xv2.shape();
        const Tensor4& bv2 = tp.value_of(bid);
        for (int n = 0; n < ys.n; ++n)
            for (int grp = 0; grp < groups; ++grp)
                for (int ocg = 0; ocg < cout_g; ++ocg) {
                    const int oc = grp * cout_g + ocg;
                    for (int i = 0; i < ys.h; ++i)
                        for (int j = 0; j < ys.w; ++j) {
                            const double gi = g[static_cast<std::size_t>(yv.index(n, oc, i, j))];
                            if (gi == 0.0) {
                                continue;
                            }
                            if (gb) {
                                (*gb)[static_cast<std::size_t>(bv2.index(0, oc, 0, 0))] += gi;
                            }
                            for (int icg = 0; icg < cin_g; ++icg) {
                                const int ic = grp * cin_g + icg;
                                for (int kh = 0; kh < k; ++kh) {
                                    const int ih = i * stride - pad + kh;
                                    if (ih < 0 || ih >= xs2.h) {
                                        continue;
                                    }
                                    for (int kw = 0; kw < k; ++kw) {
                                        const int iw = j * stride - pad + kw;
                                        if (iw < 0 || iw >= xs2.w) {
                                            continue;
                                        }
                                        if (gx) {
                                            (*gx)[static_cast<std::size_t>(
                                                xv2.index(n, ic, ih, iw))] +=
                                                gi * wv2.at(oc, icg, kh, kw);
                                        }
                                        if (gw) {
                                            (*gw)[static_cast<std::size_t>(
                                                wv2.index(oc, icg, kh, kw))] +=
                                                gi * xv2.at(n, ic, ih, iw);
                                        }
                                    }
                                }
                            }
                        }
                }
    });
}

namespace {

// Group iteration shared by the three normalization modes: calls fn(base
// indices) once per group member, with groups enumerated deterministically.
struct NormGroups {
    NormMode mode;
    Shape4 s;

    std::int64_t group_count() const {
        switch (mode) {
            case NormMode::per_sample_all: return s.n;
            case NormMode::per_token_channel: return static_cast<std::int64_t>(s.n) * s.h * s.w;
            case NormMode::per_row_last: return static_cast<std::int64_t>(s.n) * s.c * s.h;
        }
        return 0;
    }

    std::int64_t group_size() const {
        switch (mode) {
            case NormMode::per_sample_all: return static_cast<std::int64_t>(s.c) * s.h * s.w;
            case NormMode::per_token_channel: return s.c;
            case NormMode::per_row_last: return s.w;
        }
        return 0;
    }

    // flat tensor index of member m of group gidx
    std::int64_t element(std::int64_t gidx, std::int64_t m) const {
        switch (mode) {
            case NormMode::per_sample_all:
                return gidx * group_size() + m;
            case NormMode::per_token_channel: {
                const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
                const std::int64_t n = gidx / hw;
                const std::int64_t pos = gidx % hw;
                return (n * s.c + m) * hw + pos;
            }
            case NormMode::per_row_last:
                return gidx * s.w + m;
        }
        return 0;
    }
};

}  // namespace

Var normalize(const Var& x, NormMode mode, double eps) {
    if (eps <= 0.0) {
        throw std::invalid_argument("normalize: eps must be positive");
    }
    const Tensor4& xv = x.value();
    const NormGroups ng{mode, xv.shape()};
    const std::int64_t gcount = ng.group_count();
    const std::int64_t gsize = ng.group_size();

    Tensor4 out(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(gcount));
    for (std::int64_t gi = 0; gi < gcount; ++gi) {
        double mean = 0.0;
        for (std::int64_t m = 0; m < gsize; ++m) {
            mean += xv[ng.element(gi, m)];
        }
        mean /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::int64_t m = 0; m < gsize; ++m) {
            const double d = xv[ng.element(gi, m)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(gsize);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(gi)] = is;
        for (std::int64_t m = 0; m < gsize; ++m) {
            const std::int64_t e = ng.element(gi, m);
            out[e] = (xv[e] - mean) * is;
        }
    }

    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true,
                    [xid, ng, inv_std = std::move(inv_std)](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        const std::int64_t gcount = ng.group_count();
        const std::int64_t gsize = ng.group_size();
        for (std::int64_t gi = 0; gi < gcount; ++gi) {
            double mean_g = 0.0;
            double mean_gy = 0.0;
            for (std::int64_t m = 0; m < gsize; ++m) {
                const std::int64_t e = ng.element(gi, m);
                mean_g += g[static_cast<std::size_t>(e)];
                mean_gy += g[static_cast<std::size_t>(e)] * yv[e];
            }
            mean_g /= static_cast<double>(gsize);
            mean_gy /= static_cast<double>(gsize);
            const double is = inv_std[static_cast<std::size_t>(gi)];
            for (std::int64_t m = 0; m < gsize; ++m) {
                const std::int64_t e = ng.element(gi, m);
                (*gx)[static_cast<std::size_t>(e)] +=
                    is * (g[static_cast<std::size_t>(e)] - mean_g - yv[e] * mean_gy);
            }
        }
    });
}

Var softmax_lastaxis(const Var& x) {
    const Tensor4& xv = x.value();
    const Shape4 s = xv.shape();
    const std::int64_t rows = static_cast<std::int64_t>(s.n) * s.c * s.h;
    const int cols = s.w;

    Tensor4 out(s);
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t base = r * cols;
        double mx = xv[base];
        for (int j = 1; j < cols; ++j) {
            mx = std::max(mx, xv[base + j]);
        }
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double e = std::exp(xv[base + j] - mx);
            out[base + j] = e;
            denom += e;
        }
        for (int j = 0; j < cols; ++j) {
            out[base + j] /= denom;
        }
    }

    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, rows, cols](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::int64_t base = r * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) {
                dot += g[static_cast<std::size_t>(base + j)] * yv[base + j];
            }
            for (int j = 0; j < cols; ++j) {
                (*gx)[static_cast<std::size_t>(base + j)] +=
                    yv[base + j] * (g[static_cast<std::size_t>(base + j)] - dot);
            }
        }
    });
}

Var matmul(const Var& a, const Var& b, bool transpose_b) {
    check_same_tape(a, b, "matmul");
    const Shape4 sa = a.shape();
    const Shape4 sb = b.shape();
    if (sa.c != 1 || sb.c != 1 || sa.n != sb.n) {
        throw std::invalid_argument("matmul: expects (n,1,R,K) operands with equal batch, got " +
                                    sa.str() + " and " + sb.str());
    }
    const int rows = sa.h;
    const int inner = sa.w;
    const int cols = transpose_b ? sb.h : sb.w;
    const int b_inner = transpose_b ? sb.w : sb.h;
    if (inner != b_inner) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + sa.str() + " vs " +
                                    sb.str());
    }

    const Tensor4& av = a.value();
    const Tensor4& bv = b.value();
    Tensor4 out(Shape4{sa.n, 1, rows, cols});
    for (int n = 0; n < sa.n; ++n)
        for (int r = 0; r < rows; ++r)
            for (int c2 = 0; c2 < cols; ++c2) {
                double acc = 0.0;
                for (int k = 0; k < inner; ++k) {
                    const double bval = transpose_b ? bv.at(n, 0, c2, k) : bv.at(n, 0, k, c2);
                    acc += av.at(n, 0, r, k) * bval;
                }
                out.at(n, 0, r, c2) = acc;
            }

    Tape& t = *a.tape();
    const bool req = t.requires_grad(a.id()) || t.requires_grad(b.id());
    if (!req) {
        return t.record(std::move(out), false, {});
    }
    const int aid = a.id();
    const int bid = b.id();
    return t.record(std::move(out), true,
                    [aid, bid, rows, cols, inner, transpose_b](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& av2 = tp.value_of(aid);
        const Tensor4& bv2 = tp.value_of(bid);
        std::vector<double>* ga = tp.grad_sink(aid);
        std::vector<double>* gb = tp.grad_sink(bid);
        const int batch = yv.shape().n;
        for (int n = 0; n < batch; ++n)
            for (int r = 0; r < rows; ++r)
                for (int c2 = 0; c2 < cols; ++c2) {
                    const double gi = g[static_cast<std::size_t>(yv.index(n, 0, r, c2))];
                    if (gi == 0.0) {
                        continue;
                    }
                    for (int k = 0; k < inner; ++k) {
                        const double bval =
                            transpose_b ? bv2.at(n, 0, c2, k) : bv2.at(n, 0, k, c2);
                        if (ga) {
                            (*ga)[static_cast<std::size_t>(av2.index(n, 0, r, k))] += gi * bval;
                        }
                        if (gb) {
                            const std::int64_t bi = transpose_b ? bv2.index(n, 0, c2, k)
                                                                : bv2.index(n, 0, k, c2);
                            (*gb)[static_cast<std::size_t>(bi)] += gi * av2.at(n, 0, r, k);
                        }
                    }
                }
    });
}

Var to_tokens(const Var& x) {
    const Shape4 s = x.shape();
    const Tensor4& xv = x.value();
    Tensor4 out(Shape4{s.n, 1, s.h * s.w, s.c});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    out.at(n, 0, h * s.w + w, c) = xv.at(n, c, h, w);
                }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    const int sw = s.w;
    return t.record(std::move(out), true, [xid, sw](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& xv2 = tp.value_of(xid);
        const Shape4 s2 = xv2.shape();
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c)
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w) {
                        (*gx)[static_cast<std::size_t>(xv2.index(n, c, h, w))] +=
                            g[static_cast<std::size_t>(yv.index(n, 0, h * sw + w, c))];
                    }
    });
}

Var from_tokens(const Var& x, int h, int w) {
    const Shape4 s = x.shape();
    if (s.c != 1 || s.h != h * w) {
        throw std::invalid_argument("from_tokens: expects (n,1," + std::to_string(h * w) +
                                    ",c), got " + s.str());
    }
    const int channels = s.w;
    const Tensor4& xv = x.value();
    Tensor4 out(Shape4{s.n, channels, h, w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    out.at(n, c, i, j) = xv.at(n, 0, i * w + j, c);
                }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, h, w](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& xv2 = tp.value_of(xid);
        const Shape4 ys = yv.shape();
        for (int n = 0; n < ys.n; ++n)
            for (int c = 0; c < ys.c; ++c)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        (*gx)[static_cast<std::size_t>(xv2.index(n, 0, i * w + j, c))] +=
                            g[static_cast<std::size_t>(yv.index(n, c, i, j))];
                    }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape4 s = x.shape();
    const Tensor4& xv = x.value();
    const double inv = 1.0 / (static_cast<double>(s.h) * s.w);
    Tensor4 out(Shape4{s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    acc += xv.at(n, c, h, w);
                }
            out.at(n, c, 0, 0) = acc * inv;
        }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(std::move(out), false, {});
    }
    const int xid = x.id();
    return t.record(std::move(out), true, [xid, inv](Tape& tp, int self) {
        const std::vector<double>& g = tp.upstream(self);
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        const Tensor4& yv = tp.value_of(self);
        const Tensor4& xv2 = tp.value_of(xid);
        const Shape4 s2 = xv2.shape();
        for (int n = 0; n < s2.n; ++n)
            for (int c = 0; c < s2.c; ++c) {
                const double gi = g[static_cast<std::size_t>(yv.index(n, c, 0, 0))] * inv;
                for (int h = 0; h < s2.h; ++h)
                    for (int w = 0; w < s2.w; ++w) {
                        (*gx)[static_cast<std::size_t>(xv2.index(n, c, h, w))] += gi;
                    }
            }
    });
}

Var sum_all(const Var& x) {
    const Tensor4& xv = x.value();
    double acc = 0.0;
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
        acc += xv[i];
    }
    Tape& t = *x.tape();
    if (!t.requires_grad(x.id())) {
        return t.record(Tensor4::scalar(acc), false, {});
    }
    const int xid = x.id();
    return t.record(Tensor4::scalar(acc), true, [xid](Tape& tp, int self) {
        const double gi = tp.upstream(self)[0];
        std::vector<double>* gx = tp.grad_sink(xid);
        if (!gx) {
            return;
        }
        for (double& v : *gx) {
            v += gi;
        }
    });
}

Var cross_entropy_logits(const Var& logits, std::vector<int> labels) {
    const Shape4 s = logits.shape();
    if (s.h != 1 || s.w != 1) {
        throw std::invalid_argument("cross_entropy_logits: expects (n,k,1,1) logits, got " +
                                    s.str());
    }
    if (static_cast<int>(labels.size()) != s.n) {
        throw std::invalid_argument("cross_entropy_logits: batch/label count mismatch");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= s.c) {
            throw std::invalid_argument("cross_entropy_logits: label out of range");
        }
    }
    const Tensor4& zv = logits.value();
    const int n = s.n;
    const int k = s.c;
    std::vector<double> probs(static_cast<std::size_t>(n) * k);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = zv.at(i, 0, 0, 0);
        for (int j = 1; j < k; ++j) {
            mx = std::max(mx, zv.at(i, j, 0, 0));
        }
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            const double e = std::exp(zv.at(i, j, 0, 0) - mx);
            probs[static_cast<std::size_t>(i) * k + j] = e;
            denom += e;
        }
        for (int j = 0; j < k; ++j) {
            probs[static_cast<std::size_t>(i) * k + j] /= denom;
        }
        loss += std::log(denom) + mx - zv.at(i, labels[static_cast<std::size_t>(i)], 0, 0);
    }
    loss /= static_cast<double>(n);

    Tape& t = *logits.tape();
    if (!t.requires_grad(logits.id())) {
        return t.record(Tensor4::scalar(loss), false, {});
    }
    const int zid = logits.id();
    return t.record(Tensor4::scalar(loss), true,
                    [zid, labels = std::move(labels), probs = std::move(probs), n, k](Tape& tp,
                                                                                      int self) {
        const double gi = tp.upstream(self)[0];
        std::vector<double>* gz = tp.grad_sink(zid);
        if (!gz) {
            return;
        }
        const Tensor4& zv2 = tp.value_of(zid);
        const double scale = gi / static_cast<double>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const double onehot = labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
                (*gz)[static_cast<std::size_t>(zv2.index(i, j, 0, 0))] +=
                    scale * (probs[static_cast<std::size_t>(i) * k + j] - onehot);
            }
    });
}

// ---- finite differences -----------------------------------------------------

double fd_check(const TapedFn& f, const std::vector<Tensor4>& leaves, std::size_t leaf_index,
                double eps) {
    if (eps < 1e-8 || eps > 1e-4) {
        throw std::invalid_argument("fd_check: eps must lie in [1e-8, 1e-4]");
    }
    if (leaf_index >= leaves.size()) {
        throw std::invalid_argument("fd_check: leaf index out of range");
    }

    // analytic gradient
    std::vector<double> analytic;
    {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(leaves.size());
        for (const Tensor4& l : leaves) {
            vars.push_back(t.leaf(l));
        }
        Var loss = f(t, vars);
        if (loss.value().numel() != 1) {
            throw std::invalid_argument("fd_check: f must produce a scalar");
        }
        t.backward(loss);
        const Tensor4& target = vars[leaf_index].value();
        analytic = target.has_grad() ? target.grad_data()
                                     : std::vector<double>(static_cast<std::size_t>(target.numel()), 0.0);
    }

    auto eval = [&](const std::vector<Tensor4>& pts) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(pts.size());
        for (const Tensor4& l : pts) {
            vars.push_back(t.constant(l));
        }
        return f(t, vars).value().item();
    };

    std::vector<Tensor4> probe = leaves;
    Tensor4& target = probe[leaf_index];
    double worst = 0.0;
    for (std::int64_t i = 0; i < target.numel(); ++i) {
        const double saved = target[i];
        target[i] = saved + eps;
        const double fp = eval(probe);
        target[i] = saved - eps;
        const double fm = eval(probe);
        target[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[static_cast<std::size_t>(i)];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(numeric - a) / denom);
    }
    return worst;
}

double fd_check_all(const TapedFn& f, const std::vector<Tensor4>& leaves, double eps) {
    double worst = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        worst = std::max(worst, fd_check(f, leaves, i, eps));
    }
    return worst;
}

}  // namespace adaptvig
