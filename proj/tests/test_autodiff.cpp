#include <doctest.h>

#include <cmath>

#include "adaptvig/autodiff.hpp"
#include "adaptvig/layers.hpp"
#include "adaptvig/rng.hpp"

using namespace adaptvig;

namespace {

Tensor4 random_tensor(Rng& rng, Shape4 s, double scale = 1.0) {
    Tensor4 t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = rng.normal(0.0, scale);
    }
    return t;
}

}  // namespace

TEST_CASE("roll cyclic shift cases") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{1, 1, 1, 4}, {1, 2, 3, 4}));

    const Tensor4 shifted = roll(x, -1, Axis::width).value();
    CHECK(shifted.data() == std::vector<double>{2, 3, 4, 1});

    CHECK(roll(x, 0, Axis::width).value().data() == x.value().data());
    CHECK(roll(x, 4, Axis::width).value().data() == x.value().data());
    CHECK(roll(x, -4, Axis::width).value().data() == x.value().data());
}

TEST_CASE("roll inverse property is bitwise") {
    Rng rng(3);
    for (int shift : {-5, -1, 0, 2, 7, 13}) {
        for (Axis axis : {Axis::height, Axis::width}) {
            Tape t;
            Var x = t.constant(random_tensor(rng, Shape4{2, 3, 4, 5}));
            const Tensor4 back = roll(roll(x, shift, axis), -shift, axis).value();
            CHECK(back.data() == x.value().data());
        }
    }
}

TEST_CASE("elementwise closed forms") {
    Tape t;
    Var a = t.constant(Tensor4(Shape4{1, 1, 1, 2}, {1, 5}));
    Var b = t.constant(Tensor4(Shape4{1, 1, 1, 2}, {3, 2}));
    CHECK(max(a, b).value().data() == std::vector<double>{3, 5});

    Var zero = t.constant(Tensor4::scalar(0.0));
    CHECK(exp(zero).value().item() == 1.0);

    CHECK(sub(a, b).value().data() == std::vector<double>{-2, 3});
    CHECK(mul(a, b).value().data() == std::vector<double>{3, 10});
}

TEST_CASE("channel broadcast multiply matches explicit per-channel loop") {
    Rng rng(17);
    const Tensor4 diff = random_tensor(rng, Shape4{2, 4, 3, 3});
    const Tensor4 gate = random_tensor(rng, Shape4{2, 1, 3, 3});

    Tape t;
    const Tensor4 got = mul(t.constant(diff), t.constant(gate)).value();

    Tensor4 expect(diff.shape());
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 4; ++c)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 3; ++w) {
                    expect.at(n, c, h, w) = diff.at(n, c, h, w) * gate.at(n, 0, h, w);
                }
    CHECK(max_abs_diff(got, expect) == 0.0);
}

TEST_CASE("broadcast rejects incompatible shapes") {
    Tape t;
    Var a = t.constant(Tensor4(Shape4{1, 4, 2, 2}));
    Var b = t.constant(Tensor4(Shape4{1, 3, 2, 2}));
    CHECK_THROWS(mul(a, b));
}

TEST_CASE("reduce_abs_sum_channels") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{1, 2, 1, 1}, {3, -4}));
    CHECK(reduce_abs_sum_channels(x).value().item() == 7.0);

    Var zeros = t.constant(Tensor4(Shape4{2, 3, 2, 2}, 0.0));
    const Tensor4 zr = reduce_abs_sum_channels(zeros).value();
    for (std::int64_t i = 0; i < zr.numel(); ++i) {
        CHECK(zr[i] == 0.0);
    }

    Rng rng(5);
    const Tensor4 r = random_tensor(rng, Shape4{2, 5, 3, 3});
    const Tensor4 got = reduce_abs_sum_channels(t.constant(r)).value();
    for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) {
                double acc = 0.0;
                for (int c = 0; c < 5; ++c) {
                    acc += std::abs(r.at(n, c, h, w));
                }
                CHECK(got.at(n, 0, h, w) == doctest::Approx(acc).epsilon(1e-15));
            }
}

TEST_CASE("concat shapes and slice round trip") {
    Rng rng(7);
    const Tensor4 xv = random_tensor(rng, Shape4{2, 3, 4, 4});
    Tape t;
    Var x = t.constant(xv);
    Var zeros = t.constant(Tensor4(Shape4{2, 3, 4, 4}, 0.0));
    Var cat = concat_channels(x, zeros);
    CHECK(cat.shape() == Shape4{2, 6, 4, 4});
    CHECK(slice_channels(cat, 0, 3).value().data() == xv.data());

    Var bad = t.constant(Tensor4(Shape4{2, 3, 5, 4}));
    CHECK_THROWS(concat_channels(x, bad));
}

TEST_CASE("concat gradient splits to both inputs") {
    Rng rng(23);
    const Tensor4 a = random_tensor(rng, Shape4{1, 2, 3, 3});
    const Tensor4 b = random_tensor(rng, Shape4{1, 3, 3, 3});
    TapedFn f = [](Tape& t, std::span<const Var> v) {
        Var cat = concat_channels(v[0], v[1]);
        Tensor4 coeffs(cat.shape());
        Rng r2(41);
        for (std::int64_t i = 0; i < coeffs.numel(); ++i) {
            coeffs[i] = r2.uniform(-1.0, 1.0);
        }
        return sum_all(mul(cat, t.constant(coeffs)));
    };
    CHECK(fd_check_all(f, {a, b}, 1e-6) <= 1e-6);
}

TEST_CASE("conv2d identity kernel is exact") {
    Rng rng(31);
    const int c = 4;
    const Tensor4 xv = random_tensor(rng, Shape4{2, c, 5, 5});
    Tensor4 w(Shape4{c, c, 1, 1}, 0.0);
    for (int i = 0; i < c; ++i) {
        w.at(i, i, 0, 0) = 1.0;
    }
    Tape t;
    Var out = conv2d(t.constant(xv), t.constant(w), t.constant(Tensor4(Shape4{1, c, 1, 1}, 0.0)));
    CHECK(out.value().data() == xv.data());
}

TEST_CASE("conv2d 3x3 hand-checked values") {
    Tensor4 xv(Shape4{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor4 w(Shape4{1, 1, 3, 3}, 1.0);
    Tape t;
    const Tensor4 out =
        conv2d(t.constant(xv), t.constant(w), t.constant(Tensor4(Shape4{1, 1, 1, 1}, 0.0)))
            .value();
    CHECK(out.shape() == Shape4{1, 1, 3, 3});
    CHECK(out.at(0, 0, 1, 1) == 45.0);  // center covers all nine inputs
    CHECK(out.at(0, 0, 0, 0) == 1 + 2 + 4 + 5);  // zero-padded corner
}

TEST_CASE("conv2d stride-2 output size") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{1, 3, 32, 32}, 0.0));
    Rng rng(1);
    Var w = t.constant(random_tensor(rng, Shape4{8, 3, 3, 3}));
    Var b = t.constant(Tensor4(Shape4{1, 8, 1, 1}, 0.0));
    CHECK(conv2d(x, w, b, 2).shape() == Shape4{1, 8, 16, 16});
}

TEST_CASE("conv2d validates channel/group compatibility") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{1, 4, 4, 4}));
    Rng rng(2);
    Var w = t.constant(random_tensor(rng, Shape4{4, 4, 3, 3}));
    Var b = t.constant(Tensor4(Shape4{1, 4, 1, 1}));
    CHECK_THROWS(conv2d(x, w, b, 1, 3));   // 3 does not divide 4
    CHECK_THROWS(conv2d(x, w, b, 1, 2));   // weight expects in_c/groups == 2
    CHECK_THROWS(conv2d(x, w, b, 3, 1));   // bad stride
}

TEST_CASE("normalize constant input gives exact zeros") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{2, 3, 4, 4}, 7.5));
    for (NormMode mode :
         {NormMode::per_sample_all, NormMode::per_token_channel, NormMode::per_row_last}) {
        const Tensor4 out = normalize(x, mode, 1e-5).value();
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            CHECK(out[i] == 0.0);
        }
    }
}

TEST_CASE("normalize per-token standardized input") {
    Tape t;
    Var x = t.constant(Tensor4(Shape4{1, 2, 1, 1}, {1, -1}));
    const Tensor4 out = normalize(x, NormMode::per_token_channel, 1e-12).value();
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("normalize statistics oracle") {
    Rng rng(13);
    const double eps = 1e-8;
    Tape t;
    Var x = t.constant(random_tensor(rng, Shape4{2, 6, 4, 4}));
    const Tensor4 out = normalize(x, NormMode::per_sample_all, eps).value();
    for (int n = 0; n < 2; ++n) {
        double mean = 0.0, var = 0.0;
        const int count = 6 * 4 * 4;
        for (int c = 0; c < 6; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    mean += out.at(n, c, h, w);
                }
        mean /= count;
        for (int c = 0; c < 6; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    var += (out.at(n, c, h, w) - mean) * (out.at(n, c, h, w) - mean);
                }
        var /= count;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-6);  // eps-adjusted
    }
}

TEST_CASE("normalize affine returns exactly the shift on constant input") {
    ParamStore store;
    Norm norm = add_norm(store, "n", 3);
    store.value(norm.shift).data() = {0.25, -1.0, 3.5};
    Tape t;
    const std::vector<Var> p = bind_params(t, store);
    const Tensor4 out = norm.forward(p, t.constant(Tensor4(Shape4{1, 3, 2, 2}, 42.0))).value();
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) {
                CHECK(out.at(0, c, h, w) == store.value(norm.shift)[c]);
            }
}

TEST_CASE("softmax closed forms and row-sum invariant") {
    Tape t;
    Var two = t.constant(Tensor4(Shape4{1, 1, 1, 2}, {0, 0}));
    CHECK(softmax_lastaxis(two).value().data() == std::vector<double>{0.5, 0.5});

    Var one = t.constant(Tensor4(Shape4{1, 1, 1, 1}, {3.7}));
    CHECK(softmax_lastaxis(one).value().item() == 1.0);

    Var ln2 = t.constant(Tensor4(Shape4{1, 1, 1, 2}, {std::log(2.0), 0.0}));
    const Tensor4 out = softmax_lastaxis(ln2).value();
    CHECK(out[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Rng rng(19);
    Var wide = t.constant(random_tensor(rng, Shape4{2, 3, 8, 5}, 3.0));
    const Tensor4 sm = softmax_lastaxis(wide).value();
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 8; ++h) {
                double row = 0.0;
                for (int w = 0; w < 5; ++w) {
                    const double v = sm.at(n, c, h, w);
                    CHECK(v > 0.0);
                    CHECK(v < 1.0);
                    row += v;
                }
                CHECK(std::abs(row - 1.0) <= 1e-12);
            }

    // max-subtraction keeps huge logits finite
    Var extreme = t.constant(Tensor4(Shape4{1, 1, 1, 3}, {1e4, -1e4, 9.9e3}));
    const Tensor4 safe = softmax_lastaxis(extreme).value();
    double row = 0.0;
    for (int w = 0; w < 3; ++w) {
        CHECK(std::isfinite(safe[w]));
        row += safe[w];
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);
}

TEST_CASE("head primitives: pooling and affine map") {
    Tape t;
    Tensor4 xv(Shape4{1, 3, 4, 4});
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) {
                xv.at(0, c, h, w) = 1.0 + c;
            }
    const Tensor4 pooled = global_avg_pool(t.constant(xv)).value();
    CHECK(pooled.shape() == Shape4{1, 3, 1, 1});
    for (int c = 0; c < 3; ++c) {
        CHECK(pooled.at(0, c, 0, 0) == doctest::Approx(1.0 + c).epsilon(1e-15));
    }

    // 10 -> 5 affine head: 10*5 weights + 5 biases
    ParamStore store;
    Rng rng(3);
    add_conv2d(store, rng, "fc", 10, 5, 1);
    CHECK(store.scalar_count() == 55);
}

TEST_CASE("global_avg_pool gradient spreads 1/(h*w)") {
    Tape t;
    Var x = t.leaf(Tensor4(Shape4{1, 1, 4, 4}, 2.0));
    Var loss = sum_all(global_avg_pool(x));
    t.backward(loss);
    const Tensor4 g = x.grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
        CHECK(g[i] == doctest::Approx(1.0 / 16.0).epsilon(1e-15));
    }
}

TEST_CASE("backward closed forms") {
    {
        Tape t;
        Var x = t.leaf(Tensor4(Shape4{1, 1, 1, 2}, {1, 2}));
        Var loss = sum_all(mul(x, x));
        t.backward(loss);
        CHECK(x.grad().data() == std::vector<double>{2, 4});
    }
    {
        Tape t;
        Var x = t.leaf(Tensor4::scalar(0.0));
        Var loss = sum_all(exp(x));
        t.backward(loss);
        CHECK(x.grad().item() == 1.0);
    }
}

TEST_CASE("backward requires a scalar loss") {
    Tape t;
    Var x = t.leaf(Tensor4(Shape4{1, 1, 1, 2}, {1, 2}));
    CHECK_THROWS(t.backward(x));
}

TEST_CASE("gradient accumulates additively across fan-out") {
    const Tensor4 xv(Shape4{1, 2, 1, 1}, {0.5, -1.5});
    Tape t1;
    Var a = t1.leaf(xv);
    t1.backward(sum_all(a));
    const Tensor4 once = a.grad();

    Tape t2;
    Var b = t2.leaf(xv);
    t2.backward(add(sum_all(b), sum_all(b)));
    const Tensor4 twice = b.grad();
    for (std::int64_t i = 0; i < once.numel(); ++i) {
        CHECK(twice[i] == 2.0 * once[i]);
    }
}

TEST_CASE("fd_check identity map is exact at a dyadic eps") {
    TapedFn f = [](Tape&, std::span<const Var> v) { return sum_all(v[0]); };
    const double eps = std::ldexp(1.0, -20);  // 2^-20, inside [1e-8, 1e-4]
    CHECK(fd_check(f, {Tensor4::scalar(0.5)}, 0, eps) == 0.0);
}

TEST_CASE("fd_check quadratic loss is at roundoff level") {
    TapedFn f = [](Tape&, std::span<const Var> v) { return sum_all(mul(v[0], v[0])); };
    const Tensor4 x(Shape4{1, 1, 2, 2}, {0.5, 1.0, -0.75, 0.25});
    CHECK(fd_check(f, {x}, 0, 1e-6) <= 1e-9);
}

TEST_CASE("fd_check validates eps range") {
    TapedFn f = [](Tape&, std::span<const Var> v) { return sum_all(v[0]); };
    CHECK_THROWS(fd_check(f, {Tensor4::scalar(1.0)}, 0, 1e-9));
    CHECK_THROWS(fd_check(f, {Tensor4::scalar(1.0)}, 0, 1e-3));
}

TEST_CASE("fd_check flags a corrupted adjoint") {
    Rng rng(29);
    const Tensor4 x = random_tensor(rng, Shape4{1, 2, 3, 3});
    TapedFn f = [](Tape& t, std::span<const Var> v) {
        Var out = roll(v[0], 1, Axis::height);
        Tensor4 coeffs(out.shape());
        Rng r2(31);
        for (std::int64_t i = 0; i < coeffs.numel(); ++i) {
            coeffs[i] = r2.uniform(0.5, 1.5);
        }
        return sum_all(mul(out, t.constant(coeffs)));
    };
    CHECK(fd_check(f, {x}, 0, 1e-6) <= 1e-6);
    adaptvig::testing::set_corrupt_roll_adjoint(true);
    const double err = fd_check(f, {x}, 0, 1e-6);
    adaptvig::testing::set_corrupt_roll_adjoint(false);
    CHECK(err > 1e-6);
}

TEST_CASE("gelu matches the tanh approximation and is smooth at zero") {
    Tape t;
    Var zero = t.constant(Tensor4::scalar(0.0));
    CHECK(gelu(zero).value().item() == 0.0);
    Var one = t.constant(Tensor4::scalar(1.0));
    CHECK(gelu(one).value().item() == doctest::Approx(0.841192).epsilon(1e-5));
}
