#pragma once

#include <span>
#include <string>

#include "adaptvig/autodiff.hpp"
#include "adaptvig/layers.hpp"

namespace adaptvig {

/// Single-head scaled dot-product attention over the h*w token grid, fused
/// with the input via a clamped max-relative difference.
struct AttentionMixer {
    Conv2d wq, wk, wv;  // 1x1 projections c -> c
    ConvBlock proj;     // 2c -> c
    int d_k = 0;
};

AttentionMixer add_attention_mixer(ParamStore& store, Rng& rng, const std::string& name,
                                   int channels);

struct TokenQKV {
    Var q, k, v;  // (n,1,N,c') token matrices, N = h*w, row-major over (h,w)
};

TokenQKV qkv_project(const AttentionMixer& mixer, std::span<const Var> p, const Var& x);

/// Per-token channel-normalize q and k, then softmax(q k^T / sqrt(d_k)) v.
Var attend(const Var& q, const Var& k, const Var& v, int d_k);

/// x_attn reshaped to (n,c,h,w), fused as x_j = max(0, x_attn - x), then
/// ConvBlock(concat(x, x_j)). Shape preserved.
Var attention_forward(const AttentionMixer& mixer, std::span<const Var> p, const Var& x);

}  // namespace adaptvig
