#include "adaptvig/gating.hpp"

#include <cmath>
#include <stdexcept>

namespace adaptvig {

double GatingParams::effective() const { return std::abs(temperature) + eps; }

int floor_log2(int v) {
    if (v < 1) {
        throw std::invalid_argument("floor_log2: argument must be positive");
    }
    int r = 0;
    while ((v >> 1) != 0) {
        v >>= 1;
        ++r;
    }
    return r;
}

ScaffoldSpec scaffold_shifts(int h, int w, int k) {
    if (k < 1 || k >= std::min(h, w)) {
        throw std::invalid_argument("scaffold_shifts: need 1 <= k < min(h, w), got k=" +
                                    std::to_string(k) + " for " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    ScaffoldSpec spec;
    spec.shifts.push_back({Axis::height, k, false});
    spec.shifts.push_back({Axis::width, k, false});
    for (int i = 1; i <= floor_log2(h); ++i) {
        spec.shifts.push_back({Axis::height, 1 << i, true});
    }
    for (int i = 1; i <= floor_log2(w); ++i) {
        spec.shifts.push_back({Axis::width, 1 << i, true});
    }
    return spec;
}

double gate_value(double distance, double t_eff, GateKind kind) {
    if (t_eff <= 0.0) {
        throw std::invalid_argument("gate_value: effective temperature must be positive");
    }
    if (distance < 0.0) {
        throw std::invalid_argument("gate_value: distance must be nonnegative");
    }
    switch (kind) {
        case GateKind::exp_decay:
            return std::exp(-distance / t_eff);
        case GateKind::sigmoid:
            // 2*sigma(-d/t): 1 at d=0, monotone decreasing, range (0,1]
            return 2.0 / (1.0 + std::exp(distance / t_eff));
    }
    return 0.0;
}

Tensor4 gate_map(const Tensor4& d, const GatingParams& params, GateKind kind) {
    const double t_eff = params.effective();
    Tensor4 out(d.shape());
    for (std::int64_t i = 0; i < d.numel(); ++i) {
        out[i] = gate_value(d[i], t_eff, kind);
    }
    return out;
}

namespace {

void check_equal_shapes(const Tensor4& a, const Tensor4& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    }
}

}  // namespace

Tensor4 l1_distance_map(const Tensor4& x, const Tensor4& x_shifted) {
    check_equal_shapes(x, x_shifted, "l1_distance_map");
    const Shape4 s = x.shape();
    Tensor4 out(Shape4{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    acc += std::abs(x.at(n, c, h, w) - x_shifted.at(n, c, h, w));
                }
                out.at(n, 0, h, w) = acc;
            }
    return out;
}

Tensor4 l2_distance_map(const Tensor4& x, const Tensor4& x_shifted) {
    check_equal_shapes(x, x_shifted, "l2_distance_map");
    const Shape4 s = x.shape();
    Tensor4 out(Shape4{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const double d = x.at(n, c, h, w) - x_shifted.at(n, c, h, w);
                    acc += d * d;
                }
                out.at(n, 0, h, w) = std::sqrt(acc);
            }
    return out;
}

double temperature_grad_closed_form(double g, double d, double t_eff) {
    if (t_eff <= 0.0) {
        throw std::invalid_argument("temperature_grad_closed_form: t_eff must be positive");
    }
    if (d < 0.0) {
        throw std::invalid_argument("temperature_grad_closed_form: d must be nonnegative");
    }
    return g * d / (t_eff * t_eff);
}

Tensor4 gate_heatmap(const Tensor4& x, int ref_row, int ref_col, const GatingParams& params) {
    const Shape4 s = x.shape();
    if (ref_row < 0 || ref_row >= s.h || ref_col < 0 || ref_col >= s.w) {
        throw std::invalid_argument("gate_heatmap: reference (" + std::to_string(ref_row) + "," +
                                    std::to_string(ref_col) + ") outside " +
                                    std::to_string(s.h) + "x" + std::to_string(s.w));
    }
    const double t_eff = params.effective();
    Tensor4 out(Shape4{1, 1, s.h, s.w});
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
            double d = 0.0;
            for (int c = 0; c < s.c; ++c) {
                d += std::abs(x.at(0, c, ref_row, ref_col) - x.at(0, c, i, j));
            }
            out.at(0, 0, i, j) = std::exp(-d / t_eff);
        }
    return out;
}

Var distance_map(const Var& x, const Var& x_shifted, DistanceKind kind) {
    Var diff = sub(x_shifted, x);
    if (kind == DistanceKind::l1) {
        return reduce_abs_sum_channels(diff);
    }
    return sqrt(reduce_sum_channels(mul(diff, diff)));
}

Var gate_map(const Var& d, const Var& t_eff, GateKind kind) {
    Var scaled = divide(d, t_eff);
    if (kind == GateKind::exp_decay) {
        return exp(mul(scaled, -1.0));
    }
    return mul(sigmoid(mul(scaled, -1.0)), 2.0);
}

Var agc_aggregate(const Var& x, const AGCConfig& cfg, const Var& temperature, double gate_eps) {
    const Shape4 s = x.shape();
    const ScaffoldSpec spec = scaffold_shifts(s.h, s.w, cfg.k);
    Tape& t = *x.tape();

    Var t_eff = add(abs(temperature), gate_eps);
    Var x_j = t.constant(Tensor4(s, 0.0));
    for (const ShiftSpec& sh : spec.shifts) {
        Var x_n = roll(x, -sh.offset, sh.axis);
        Var diff = sub(x_n, x);
        if (sh.gated) {
            Var d = distance_map(x, x_n, cfg.distance);
            Var g = gate_map(d, t_eff, cfg.gate);
            diff = mul(diff, g);  // one gate per spatial position, broadcast over channels
        }
        x_j = max(x_j, diff);
    }
    return x_j;
}

AgcMixer add_agc_mixer(ParamStore& store, Rng& rng, const std::string& name, int channels,
                       const AGCConfig& cfg) {
    AgcMixer mixer;
    mixer.cfg = cfg;
    mixer.temperature = store.add(name + ".t", Tensor4::scalar(1.0));
    mixer.proj = add_conv_block(store, rng, name + ".proj", 2 * channels, channels, 1);
    return mixer;
}

Var agc_forward(const AgcMixer& mixer, std::span<const Var> p, const Var& x) {
    Var x_j = agc_aggregate(x, mixer.cfg, p[static_cast<std::size_t>(mixer.temperature)],
                            mixer.gate_eps);
    Var cat = concat_channels(x, x_j);
    return mixer.proj.forward(p, cat);
}

}  // namespace adaptvig
