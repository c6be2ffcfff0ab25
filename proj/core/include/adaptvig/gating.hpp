#pragma once

#include <span>
#include <string>
#include <vector>

#include "adaptvig/autodiff.hpp"
#include "adaptvig/layers.hpp"
#include "adaptvig/tensor.hpp"

namespace adaptvig {

constexpr double kGateEps = 1e-6;

enum class GateKind { exp_decay, sigmoid };
enum class DistanceKind { l1, l2 };

/// Learnable temperature with a fixed stabilizer: the effective temperature
/// |T| + eps is always positive.
struct GatingParams {
    double temperature = 1.0;
    double eps = kGateEps;

    double effective() const;
};

struct AGCConfig {
    int k = 1;
    GateKind gate = GateKind::exp_decay;
    DistanceKind distance = DistanceKind::l1;
};

struct ShiftSpec {
    Axis axis;
    int offset;
    bool gated;
};

/// Static scaffold: one ungated local shift of K per axis, then gated shifts
/// at offsets 2^1 .. 2^floor(log2 dim) per axis. Entry count is
/// 2 + floor(log2 h) + floor(log2 w).
struct ScaffoldSpec {
    std::vector<ShiftSpec> shifts;
};

ScaffoldSpec scaffold_shifts(int h, int w, int k);

int floor_log2(int v);

// ---- plain (non-taped) evaluation --------------------------------------------

double gate_value(double distance, double t_eff, GateKind kind = GateKind::exp_decay);

/// g = exp(-d / (|T| + eps)) elementwise; d must be nonnegative.
Tensor4 gate_map(const Tensor4& d, const GatingParams& params,
                 GateKind kind = GateKind::exp_decay);

/// Channel-summed absolute difference, shape (n,1,h,w).
Tensor4 l1_distance_map(const Tensor4& x, const Tensor4& x_shifted);
Tensor4 l2_distance_map(const Tensor4& x, const Tensor4& x_shifted);

/// d(g)/d(t_eff) of the exponential decay gate: g * d / t_eff^2.
double temperature_grad_closed_form(double g, double d, double t_eff);

/// Gate strength of every position against a reference position, batch 0.
/// Entry (i,j) = exp(-||x[:,ref] - x[:,(i,j)]||_1 / (|T|+eps)); 1 at ref.
/// Returned as (1,1,h,w).
Tensor4 gate_heatmap(const Tensor4& x, int ref_row, int ref_col, const GatingParams& params);

// ---- taped (differentiable) pipeline ------------------------------------------

Var distance_map(const Var& x, const Var& x_shifted, DistanceKind kind);
Var gate_map(const Var& d, const Var& t_eff, GateKind kind);

/// Running elementwise max over the scaffold of (neighbor - self) differences,
/// gated on the long-range shifts. temperature is the learnable scalar T.
Var agc_aggregate(const Var& x, const AGCConfig& cfg, const Var& temperature,
                  double gate_eps = kGateEps);

/// Aggregation followed by concat([x, x_j]) and the 2c->c projection ConvBlock.
struct AgcMixer {
    AGCConfig cfg;
    double gate_eps = kGateEps;
    int temperature = -1;  // parameter index, shape (1,1,1,1), init 1.0
    ConvBlock proj;
};

AgcMixer add_agc_mixer(ParamStore& store, Rng& rng, const std::string& name, int channels,
                       const AGCConfig& cfg);

Var agc_forward(const AgcMixer& mixer, std::span<const Var> p, const Var& x);

}  // namespace adaptvig
