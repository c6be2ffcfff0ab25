#include "adaptvig/attention.hpp"

#include <cmath>

namespace adaptvig {

AttentionMixer add_attention_mixer(ParamStore& store, Rng& rng, const std::string& name,
                                   int channels) {
    AttentionMixer mixer;
    mixer.wq = add_conv2d(store, rng, name + ".wq", channels, channels, 1);
    mixer.wk = add_conv2d(store, rng, name + ".wk", channels, channels, 1);
    mixer.wv = add_conv2d(store, rng, name + ".wv", channels, channels, 1);
    mixer.proj = add_conv_block(store, rng, name + ".proj", 2 * channels, channels, 1);
    mixer.d_k = channels;
    return mixer;
}

TokenQKV qkv_project(const AttentionMixer& mixer, std::span<const Var> p, const Var& x) {
    TokenQKV out;
    out.q = to_tokens(mixer.wq.forward(p, x));
    out.k = to_tokens(mixer.wk.forward(p, x));
    out.v = to_tokens(mixer.wv.forward(p, x));
    return out;
}

Var attend(const Var& q, const Var& k, const Var& v, int d_k) {
    // token rows normalized over channels (the last token-matrix axis), no affine
    Var qn = normalize(q, NormMode::per_row_last, kNormEps);
    Var kn = normalize(k, NormMode::per_row_last, kNormEps);
    Var scores = mul(matmul(qn, kn, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(d_k)));
    Var weights = softmax_lastaxis(scores);
    return matmul(weights, v);
}

Var attention_forward(const AttentionMixer& mixer, std::span<const Var> p, const Var& x) {
    const Shape4 s = x.shape();
    TokenQKV qkv = qkv_project(mixer, p, x);
    Var tokens = attend(qkv.q, qkv.k, qkv.v, mixer.d_k);
    Var x_attn = from_tokens(tokens, s.h, s.w);
    // max(0, x_attn - x): zero accumulator first so ties drop the gradient,
    // matching the running-max convention
    Var zeros = x.tape()->constant(Tensor4(s, 0.0));
    Var x_j = max(zeros, sub(x_attn, x));
    return mixer.proj.forward(p, concat_channels(x, x_j));
}

}  // namespace adaptvig
