// Copyright 2026 The SMAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Multi-head self-attention, shifted-window partitioning, and the pre-norm
// transformer block shared by encoder and decoder stacks.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patches.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace smae {

// Projection weights of one attention layer; all of shape dim×dim (+ biases).
struct AttentionWeights {
    Tensor wq, wk, wv, wo;
    Tensor bq, bk, bv, bo;
    int64_t heads = 0;
};

// Shifted-window geometry on a token grid. The shift is applied by cyclically
// rolling the grid by (-shift_t, -shift_f) before carving windows, so windows
// wrap around the grid edges; no post-shift attention masks are used.
struct WindowSpec {
    int64_t win_t = 4;
    int64_t win_f = 4;
    int64_t shift_t = 0;
    int64_t shift_f = 0;
};

// Attention scope of one layer in a stack.
struct AttentionLayout {
    bool global = true;
    WindowSpec window;
};

// Decoder self-attention families: all-global, all-local shifted windows, or
// local layers followed by a global tail.
enum class DecoderAttention { Global, Local, Hybrid };

std::string decoder_attention_name(DecoderAttention kind);
DecoderAttention decoder_attention_from_name(const std::string& name);

// Partition of token indices into attention windows. windows[w] lists the
// member token indices in row-major within-window order; flat_order is their
// concatenation; inverse[flat_order[p]] == p, so gathering by flat_order and
// then by inverse restores the original token order exactly.
struct WindowPartition {
    std::vector<std::vector<int64_t>> windows;
    std::vector<int64_t> flat_order;
    std::vector<int64_t> inverse;
};

// Carves the grid into win_t×win_f windows after rolling by the negative
// shift. Every token lands in exactly one window; when the grid size is not a
// multiple of the window, edge windows simply hold fewer tokens.
WindowPartition window_partition(const PatchGridSpec& grid, const WindowSpec& win);

// Self-attention over x (n×dim). `allowed_pairs`, when given, is an n×n
// boolean mask; entry i*n+j enables attention from token i to token j.
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w,
                            const std::vector<std::uint8_t>* allowed_pairs = nullptr);

// Attention restricted to shifted windows: each window attends independently
// and results are scattered back into token order. Equivalent to dense
// attention under the window-membership allowed-pair mask.
Tensor windowed_attention(const Tensor& x, const AttentionWeights& w,
                          const PatchGridSpec& grid, const WindowSpec& win);

// Layer layouts for a decoder stack of `depth` layers. Local layers use
// win_t×win_f windows and alternate between unshifted and half-window-shifted,
// starting unshifted. Hybrid keeps the final `n_global_hybrid` layers global.
std::vector<AttentionLayout> build_decoder_layouts(int64_t depth, DecoderAttention kind,
                                                   int64_t win_t = 4, int64_t win_f = 4,
                                                   int64_t n_global_hybrid = 4);

// One pre-norm transformer block: x + Attn(LN(x)) followed by x + MLP(LN(x)).
struct BlockWeights {
    Tensor ln1_g, ln1_b;
    AttentionWeights attn;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1;  // dim×hidden
    Tensor mlp_w2, mlp_b2;  // hidden×dim
    double drop_path = 0.0;
};

// Applies the block under the given attention layout. Pass `droppath_rng` to
// enable stochastic depth (training); with nullptr both residual branches are
// always taken (evaluation).
Tensor transformer_block(const Tensor& x, const BlockWeights& w, const AttentionLayout& layout,
                         const PatchGridSpec& grid, Rng* droppath_rng = nullptr);

}  // namespace smae
