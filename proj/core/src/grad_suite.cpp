#include "adaptvig/grad_suite.hpp"

#include <cmath>

#include "adaptvig/attention.hpp"
#include "adaptvig/blocks.hpp"
#include "adaptvig/gating.hpp"
#include "adaptvig/rng.hpp"

namespace adaptvig {

namespace {

constexpr double kFdEps = 1e-6;
constexpr double kPrimTol = 1e-6;
constexpr double kModelTol = 1e-5;
constexpr double kClosedFormTol = 1e-10;

Tensor4 random_tensor(Rng& rng, Shape4 s, double scale = 0.5) {
    Tensor4 t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = rng.normal(0.0, scale);
    }
    return t;
}

Tensor4 random_positive(Rng& rng, Shape4 s, double lo = 0.2, double hi = 2.0) {
    Tensor4 t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = rng.uniform(lo, hi);
    }
    return t;
}

// Random magnitude in [lo, hi] with random sign; bounded away from zero.
double signed_bounded(Rng& rng, double lo, double hi) {
    const double v = rng.uniform(lo, hi);
    return rng.uniform() < 0.5 ? -v : v;
}

Tensor4 random_bounded(Rng& rng, Shape4 s, double lo, double hi) {
    Tensor4 t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = signed_bounded(rng, lo, hi);
    }
    return t;
}

// Every stored parameter redrawn with magnitude bounded away from zero, so no
// finite-difference probe runs through a vanishing multiplier.
void randomize_params(ParamStore& store, Rng& rng, double lo = 0.15, double hi = 0.6) {
    for (std::size_t i = 0; i < store.count(); ++i) {
        Tensor4& v = store.value(static_cast<int>(i));
        for (std::int64_t j = 0; j < v.numel(); ++j) {
            v[j] = signed_bounded(rng, lo, hi);
        }
    }
}

// Scalar probe loss: a fixed random weighting keeps every output coordinate
// live without inflating the magnitude of f.
Var probe_loss(Tape& t, const Var& out, Rng& rng) {
    Tensor4 coeffs(out.shape());
    for (std::int64_t i = 0; i < coeffs.numel(); ++i) {
        coeffs[i] = signed_bounded(rng, 0.5, 1.5);
    }
    return sum_all(mul(out, t.constant(coeffs)));
}

// Adds a linear anchor sum(c_k . leaf_k) to the probe so every leaf
// coordinate carries a gradient bounded well away from zero (the anchor band
// sits above the magnitude the probe gradients reach). The anchor is exactly
// linear, so any adjoint defect in f still shows up at the finite-difference
// noise floor instead of being divided by a vanishing denominator.
TapedFn anchored(TapedFn f, std::uint64_t anchor_seed) {
    return [f = std::move(f), anchor_seed](Tape& t, std::span<const Var> vars) {
        Var loss = f(t, vars);
        Rng rng(anchor_seed);
        for (const Var& leaf : vars) {
            Tensor4 coeffs(leaf.shape());
            for (std::int64_t i = 0; i < coeffs.numel(); ++i) {
                coeffs[i] = signed_bounded(rng, 6.0, 7.0);
            }
            loss = add(loss, sum_all(mul(leaf, t.constant(coeffs))));
        }
        return loss;
    };
}

struct Suite {
    Rng rng;
    std::vector<ComponentCheck> checks;

    explicit Suite(std::uint64_t seed) : rng(seed) {}

    void run(const std::string& name, const TapedFn& f, const std::vector<Tensor4>& leaves,
             double tol = kPrimTol) {
        ComponentCheck c;
        c.name = name;
        c.tolerance = tol;
        c.max_err = fd_check_all(anchored(f, rng.next_u64()), leaves, kFdEps);
        c.pass = c.max_err <= tol;
        checks.push_back(c);
    }
};

// leaves[0] is the data input; leaves[1..] are a ParamStore's parameters.
template <typename Fwd>
TapedFn layer_fn(Fwd fwd, Rng& rng) {
    const std::uint64_t probe_seed = rng.next_u64();
    return [fwd, probe_seed](Tape& t, std::span<const Var> vars) {
        std::vector<Var> p(vars.begin() + 1, vars.end());
        Var out = fwd(t, p, vars[0]);
        Rng prng(probe_seed);
        return probe_loss(t, out, prng);
    };
}

std::vector<Tensor4> with_params(const Tensor4& x, const ParamStore& store) {
    std::vector<Tensor4> leaves{x};
    for (std::size_t i = 0; i < store.count(); ++i) {
        leaves.push_back(store.value(static_cast<int>(i)));
    }
    return leaves;
}

void check_primitives(Suite& s) {
    const Shape4 shape{2, 3, 5, 6};
    auto probe = [&s](const char* name, auto op) {
        Rng prng(s.rng.next_u64());
        Tensor4 x = random_tensor(prng, Shape4{2, 3, 5, 6});
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [op, probe_seed](Tape& t, std::span<const Var> vars) {
            Var out = op(t, vars);
            Rng r2(probe_seed);
            return probe_loss(t, out, r2);
        };
        s.run(name, f, {x});
    };

    probe("roll", [](Tape&, std::span<const Var> v) {
        return roll(roll(v[0], 3, Axis::height), -2, Axis::width);
    });
    probe("exp", [](Tape&, std::span<const Var> v) { return exp(mul(v[0], 0.5)); });
    probe("gelu", [](Tape&, std::span<const Var> v) { return gelu(v[0]); });
    probe("sigmoid", [](Tape&, std::span<const Var> v) { return sigmoid(v[0]); });
    probe("reduce_abs_sum_channels",
          [](Tape&, std::span<const Var> v) { return reduce_abs_sum_channels(v[0]); });
    probe("reduce_sum_channels",
          [](Tape&, std::span<const Var> v) { return reduce_sum_channels(v[0]); });
    probe("global_avg_pool", [](Tape&, std::span<const Var> v) { return global_avg_pool(v[0]); });
    probe("normalize_per_sample",
          [](Tape&, std::span<const Var> v) { return normalize(v[0], NormMode::per_sample_all, 1e-5); });
    probe("normalize_per_token",
          [](Tape&, std::span<const Var> v) { return normalize(v[0], NormMode::per_token_channel, 1e-5); });
    probe("normalize_last_axis",
          [](Tape&, std::span<const Var> v) { return normalize(v[0], NormMode::per_row_last, 1e-5); });
    probe("softmax_lastaxis", [](Tape&, std::span<const Var> v) { return softmax_lastaxis(v[0]); });
    probe("slice_channels", [](Tape&, std::span<const Var> v) { return slice_channels(v[0], 1, 3); });
    probe("tokens_roundtrip", [](Tape&, std::span<const Var> v) {
        return from_tokens(to_tokens(v[0]), 5, 6);
    });

    // binary ops, equal-shape and channel-broadcast operands
    {
        Rng prng(s.rng.next_u64());
        Tensor4 a = random_tensor(prng, shape);
        Tensor4 b = random_tensor(prng, shape);
        Tensor4 gate = random_positive(prng, Shape4{2, 1, 5, 6});
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [probe_seed](Tape& t, std::span<const Var> v) {
            Var mixed = add(mul(v[0], v[1]), sub(v[0], v[1]));
            mixed = max(mixed, v[1]);
            mixed = mul(mixed, v[2]);                   // (n,1,h,w) broadcast over channels
            mixed = divide(mixed, add(abs(v[2]), 0.5)); // positive denominator
            Rng r2(probe_seed);
            return probe_loss(t, mixed, r2);
        };
        s.run("binary_broadcast", f, {a, b, gate});
    }

    // sqrt on positive input
    {
        Rng prng(s.rng.next_u64());
        Tensor4 x = random_positive(prng, shape);
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [probe_seed](Tape& t, std::span<const Var> v) {
            Rng r2(probe_seed);
            return probe_loss(t, sqrt(v[0]), r2);
        };
        s.run("sqrt", f, {x});
    }

    // concat: gradient must split to both inputs
    {
        Rng prng(s.rng.next_u64());
        Tensor4 a = random_tensor(prng, shape);
        Tensor4 b = random_tensor(prng, Shape4{2, 2, 5, 6});
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [probe_seed](Tape& t, std::span<const Var> v) {
            Rng r2(probe_seed);
            return probe_loss(t, concat_channels(v[0], v[1]), r2);
        };
        s.run("concat_channels", f, {a, b});
    }

    // matmul, both layouts
    {
        Rng prng(s.rng.next_u64());
        Tensor4 a = random_tensor(prng, Shape4{2, 1, 4, 3});
        Tensor4 b = random_tensor(prng, Shape4{2, 1, 3, 5});
        Tensor4 c = random_tensor(prng, Shape4{2, 1, 3, 5});  // read transposed
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [probe_seed](Tape& t, std::span<const Var> v) {
            Var nn = matmul(v[0], v[1]);
            Var nt = matmul(nn, v[2], /*transpose_b=*/true);
            Rng r2(probe_seed);
            return probe_loss(t, nt, r2);
        };
        s.run("matmul", f, {a, b, c});
    }

    // conv2d variants
    auto conv_case = [&s](const char* name, int in_c, int out_c, int kernel, int stride,
                          int groups) {
        Rng prng(s.rng.next_u64());
        ParamStore store;
        Conv2d conv = add_conv2d(store, prng, "conv", in_c, out_c, kernel, stride, groups);
        randomize_params(store, prng);  // weights at a healthy scale
        Tensor4 x = random_tensor(prng, Shape4{2, in_c, 6, 5});
        TapedFn f = layer_fn([conv](Tape&, std::span<const Var> p, const Var& x2) {
            return conv.forward(p, x2);
        }, prng);
        s.run(name, f, with_params(x, store));
    };
    conv_case("conv2d_1x1", 3, 4, 1, 1, 1);
    conv_case("conv2d_3x3", 3, 4, 3, 1, 1);
    conv_case("conv2d_3x3_stride2", 3, 4, 3, 2, 1);
    conv_case("conv2d_depthwise", 4, 4, 3, 1, 4);

    // cross-entropy against fixed labels
    {
        Rng prng(s.rng.next_u64());
        Tensor4 logits = random_tensor(prng, Shape4{4, 3, 1, 1}, 1.0);
        TapedFn f = [](Tape&, std::span<const Var> v) {
            return cross_entropy_logits(v[0], {0, 2, 1, 2});
        };
        s.run("cross_entropy", f, {logits});
    }
}

void check_gating(Suite& s) {
    // gate map: gradients in both the distance input and the temperature
    {
        Rng prng(s.rng.next_u64());
        Tensor4 x = random_tensor(prng, Shape4{2, 3, 4, 4});
        Tensor4 temp = Tensor4::scalar(prng.uniform(0.4, 1.6));
        const std::uint64_t probe_seed = prng.next_u64();
        TapedFn f = [probe_seed](Tape& t, std::span<const Var> v) {
            Var t_eff = add(abs(v[1]), kGateEps);
            Var shifted = roll(v[0], -2, Axis::width);
            Var d = distance_map(v[0], shifted, DistanceKind::l1);
            Var g = gate_map(d, t_eff, GateKind::exp_decay);
            Rng r2(probe_seed);
            return probe_loss(t, g, r2);
        };
        s.run("gate_map", f, {x, temp});
    }

    for (GateKind gate : {GateKind::exp_decay, GateKind::sigmoid}) {
        for (DistanceKind dist : {DistanceKind::l1, DistanceKind::l2}) {
            Rng prng(s.rng.next_u64());
            Tensor4 x = random_tensor(prng, Shape4{1, 3, 6, 6});
            Tensor4 temp = Tensor4::scalar(prng.uniform(0.4, 1.6));
            AGCConfig cfg;
            cfg.k = 2;
            cfg.gate = gate;
            cfg.distance = dist;
            const std::uint64_t probe_seed = prng.next_u64();
            TapedFn f = [cfg, probe_seed](Tape& t, std::span<const Var> v) {
                Var x_j = agc_aggregate(v[0], cfg, v[1]);
                Rng r2(probe_seed);
                return probe_loss(t, x_j, r2);
            };
            const std::string name = std::string("agc_aggregate_") +
                                     (gate == GateKind::exp_decay ? "exp" : "sigmoid") + "_" +
                                     (dist == DistanceKind::l1 ? "l1" : "l2");
            s.run(name, f, {x, temp});
        }
    }
}

void check_blocks(Suite& s) {
    auto block_case = [&s](const char* name, auto builder, auto fwd, Shape4 input_shape) {
        Rng prng(s.rng.next_u64());
        ParamStore store;
        auto layer = builder(store, prng);
        randomize_params(store, prng);
        Tensor4 x = random_tensor(prng, input_shape);
        TapedFn f = layer_fn([layer, fwd](Tape& t, std::span<const Var> p, const Var& x2) {
            return fwd(t, layer, p, x2);
        }, prng);
        s.run(name, f, with_params(x, store));
    };

    block_case("agc_block",
               [](ParamStore& st, Rng& r) {
                   AGCConfig cfg;
                   cfg.k = 1;
                   return add_mixer_block(st, r, "blk", 4, MixerKind::agc, cfg, 2.0);
               },
               [](Tape&, const MixerBlock& b, std::span<const Var> p, const Var& x) {
                   return mixer_block_forward(b, p, x);
               },
               Shape4{2, 4, 6, 6});

    block_case("attention_block",
               [](ParamStore& st, Rng& r) {
                   return add_mixer_block(st, r, "blk", 4, MixerKind::attention, AGCConfig{}, 2.0);
               },
               [](Tape&, const MixerBlock& b, std::span<const Var> p, const Var& x) {
                   return mixer_block_forward(b, p, x);
               },
               Shape4{2, 4, 5, 5});

    block_case("irb",
               [](ParamStore& st, Rng& r) { return add_irb(st, r, "irb", 4, 2.0); },
               [](Tape&, const Irb& b, std::span<const Var> p, const Var& x) {
                   return irb_forward(b, p, x);
               },
               Shape4{2, 4, 5, 5});

    block_case("ffn",
               [](ParamStore& st, Rng& r) { return add_ffn(st, r, "ffn", 4, 3.0); },
               [](Tape&, const Ffn& b, std::span<const Var> p, const Var& x) {
                   return ffn_forward(b, p, x);
               },
               Shape4{2, 4, 5, 5});

    block_case("cpe",
               [](ParamStore& st, Rng& r) { return add_cpe(st, r, "cpe", 4); },
               [](Tape&, const Cpe& b, std::span<const Var> p, const Var& x) {
                   return cpe_forward(b, p, x);
               },
               Shape4{2, 4, 5, 5});

    block_case("stem",
               [](ParamStore& st, Rng& r) { return add_stem(st, r, "stem", 3, 4); },
               [](Tape&, const Stem& b, std::span<const Var> p, const Var& x) {
                   return stem_forward(b, p, x);
               },
               Shape4{1, 3, 8, 8});

    block_case("downsample",
               [](ParamStore& st, Rng& r) { return add_downsample(st, r, "down", 3, 5); },
               [](Tape&, const Downsample& b, std::span<const Var> p, const Var& x) {
                   return downsample_forward(b, p, x);
               },
               Shape4{2, 3, 6, 6});

    block_case("head",
               [](ParamStore& st, Rng& r) { return add_head(st, r, "head", 4, 3); },
               [](Tape&, const Head& b, std::span<const Var> p, const Var& x) {
                   return head_forward(b, p, x);
               },
               Shape4{2, 4, 3, 3});
}

void check_full_model(Suite& s) {
    ModelConfig cfg;
    cfg.stages = {{1, 1, 4, MixerKind::agc, 1},
                  {1, 1, 4, MixerKind::agc, 1},
                  {1, 1, 4, MixerKind::agc, 1},
                  {1, 1, 4, MixerKind::attention, 0}};
    cfg.stem_channels = 4;
    cfg.num_classes = 2;
    cfg.ffn_ratio = 2.0;
    cfg.irb_expansion = 2.0;
    cfg.seed = s.rng.next_u64();
    Model model = Model::build(cfg);

    Rng prng(s.rng.next_u64());
    randomize_params(model.params(), prng, 0.1, 0.4);
    Tensor4 x = random_tensor(prng, Shape4{1, 3, 32, 32});
    TapedFn f = layer_fn([&model](Tape& t, std::span<const Var> p, const Var& x2) {
        return model.forward(t, p, x2);
    }, prng);
    s.run("full_model", f, with_params(x, model.params()), kModelTol);
}

void check_temperature_closed_form(Suite& s) {
    ComponentCheck c;
    c.name = "temperature_grad_closed_form";
    c.tolerance = kClosedFormTol;
    Rng prng(s.rng.next_u64());
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double d_val = prng.uniform(0.0, 5.0);
        const double t_val = prng.uniform(0.2, 3.0);
        Tape t;
        Var temp = t.leaf(Tensor4::scalar(t_val));
        Var d = t.constant(Tensor4::scalar(d_val));
        Var t_eff = add(abs(temp), kGateEps);
        Var g = exp(mul(divide(d, t_eff), -1.0));
        t.backward(g);
        const double taped = temp.grad().item();
        const double closed =
            temperature_grad_closed_form(g.value().item(), d_val, t_eff.value().item());
        worst = std::max(worst, std::abs(taped - closed));
    }
    c.max_err = worst;
    c.pass = worst <= c.tolerance;
    s.checks.push_back(c);
}

}  // namespace

std::vector<ComponentCheck> run_grad_checks(std::uint64_t seed) {
    Suite s(seed);
    check_primitives(s);
    check_gating(s);
    check_blocks(s);
    check_full_model(s);
    check_temperature_closed_form(s);
    return s.checks;
}

bool all_pass(const std::vector<ComponentCheck>& checks) {
    for (const ComponentCheck& c : checks) {
        if (!c.pass) {
            return false;
        }
    }
    return true;
}

}  // namespace adaptvig
