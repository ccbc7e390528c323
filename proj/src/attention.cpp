// Copyright 2026 The SMAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#include "attention.hpp"

#include <cmath>
#include <stdexcept>

namespace smae {

std::string decoder_attention_name(DecoderAttention kind) {
    switch (kind) {
        case DecoderAttention::Global: return "global";
        case DecoderAttention::Local: return "local";
        case DecoderAttention::Hybrid: return "hybrid";
    }
    throw std::invalid_argument("decoder_attention_name: unknown kind");
}

DecoderAttention decoder_attention_from_name(const std::string& name) {
    if (name == "global") return DecoderAttention::Global;
    if (name == "local") return DecoderAttention::Local;
    if (name == "hybrid") return DecoderAttention::Hybrid;
    throw std::invalid_argument("decoder_attention_from_name: unknown kind '" + name + "'");
}

WindowPartition window_partition(const PatchGridSpec& grid, const WindowSpec& win) {
    const int64_t gt = grid.grid_t, gf = grid.grid_f;
    if (win.win_t <= 0 || win.win_f <= 0)
        throw std::invalid_argument("window_partition: window sides must be positive");
    if (win.win_t > gt || win.win_f > gf)
        throw std::invalid_argument("window_partition: window exceeds grid " +
                                    std::to_string(gt) + "x" + std::to_string(gf));

    auto mod = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
    const int64_t rows = (gt + win.win_t - 1) / win.win_t;
    const int64_t cols = (gf + win.win_f - 1) / win.win_f;

    WindowPartition part;
    part.windows.assign(static_cast<size_t>(rows * cols), {});
    // Walk rolled coordinates in row-major order so each window's members come
    // out in row-major within-window order.
    for (int64_t rt = 0; rt < gt; ++rt) {
        for (int64_t rf = 0; rf < gf; ++rf) {
            const int64_t t = mod(rt + win.shift_t, gt);
            const int64_t f = mod(rf + win.shift_f, gf);
            const int64_t w = (rt / win.win_t) * cols + (rf / win.win_f);
            part.windows[static_cast<size_t>(w)].push_back(t * gf + f);
        }
    }
    part.flat_order.reserve(static_cast<size_t>(gt * gf));
    for (const auto& members : part.windows)
        part.flat_order.insert(part.flat_order.end(), members.begin(), members.end());
    part.inverse.assign(static_cast<size_t>(gt * gf), 0);
    for (size_t p = 0; p < part.flat_order.size(); ++p)
        part.inverse[static_cast<size_t>(part.flat_order[p])] = static_cast<int64_t>(p);
    return part;
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w,
                            const std::vector<std::uint8_t>* allowed_pairs) {
    if (x.rank() != 2) throw std::invalid_argument("multi_head_attention: x must be 2-D");
    const int64_t n = x.shape()[0], d = x.shape()[1];
    const int64_t h = w.heads;
    if (h <= 0 || d % h != 0)
        throw std::invalid_argument("multi_head_attention: heads must divide dim, got dim=" +
                                    std::to_string(d) + " heads=" + std::to_string(h));
    const int64_t hd = d / h;
    if (allowed_pairs && static_cast<int64_t>(allowed_pairs->size()) != n * n)
        throw std::invalid_argument("multi_head_attention: mask must be n*n");

    auto split_heads = [&](const Tensor& proj) {
        return permute(reshape(proj, {n, h, hd}), {1, 0, 2});  // h×n×hd
    };
    Tensor q = split_heads(add(matmul(x, w.wq), w.bq));
    Tensor k = split_heads(add(matmul(x, w.wk), w.bk));
    Tensor v = split_heads(add(matmul(x, w.wv), w.bv));

    Tensor scores = mul(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor attn = allowed_pairs ? masked_softmax(scores, *allowed_pairs) : softmax(scores);
    Tensor ctx = reshape(permute(matmul(attn, v), {1, 0, 2}), {n, d});
    return add(matmul(ctx, w.wo), w.bo);
}

Tensor windowed_attention(const Tensor& x, const AttentionWeights& w,
                          const PatchGridSpec& grid, const WindowSpec& win) {
    if (x.rank() != 2) throw std::invalid_argument("windowed_attention: x must be 2-D");
    if (x.shape()[0] != grid.n_patches())
        throw std::invalid_argument("windowed_attention: token count " +
                                    std::to_string(x.shape()[0]) + " does not match grid " +
                                    std::to_string(grid.grid_t) + "x" +
                                    std::to_string(grid.grid_f));
    WindowPartition part = window_partition(grid, win);
    std::vector<Tensor> outs;
    outs.reserve(part.windows.size());
    for (const auto& members : part.windows)
        outs.push_back(multi_head_attention(gather_rows(x, members), w));
    return gather_rows(concat_rows(outs), part.inverse);
}

std::vector<AttentionLayout> build_decoder_layouts(int64_t depth, DecoderAttention kind,
                                                   int64_t win_t, int64_t win_f,
                                                   int64_t n_global_hybrid) {
    if (depth <= 0) throw std::invalid_argument("build_decoder_layouts: depth must be positive");
    if (kind == DecoderAttention::Hybrid && n_global_hybrid > depth)
        throw std::invalid_argument("build_decoder_layouts: global tail exceeds depth");

    const int64_t n_local = kind == DecoderAttention::Global  ? 0
                            : kind == DecoderAttention::Local ? depth
                                                              : depth - n_global_hybrid;
    std::vector<AttentionLayout> layouts(static_cast<size_t>(depth));
    for (int64_t i = 0; i < depth; ++i) {
        AttentionLayout& l = layouts[static_cast<size_t>(i)];
        l.global = i >= n_local;
        if (!l.global) {
            l.window.win_t = win_t;
            l.window.win_f = win_f;
            // Alternate unshifted / half-window-shifted, starting unshifted.
            l.window.shift_t = (i % 2 == 0) ? 0 : win_t / 2;
            l.window.shift_f = (i % 2 == 0) ? 0 : win_f / 2;
        }
    }
    return layouts;
}

Tensor transformer_block(const Tensor& x, const BlockWeights& w, const AttentionLayout& layout,
                         const PatchGridSpec& grid, Rng* droppath_rng) {
    // Stochastic depth: during training each residual branch is dropped with
    // probability drop_path and scaled by 1/(1-p) otherwise, so evaluation
    // (both branches, unscaled) matches the branch expectation.
    auto branch_scale = [&](Rng* rng) -> double {
        if (!rng || w.drop_path <= 0.0) return 1.0;
        if (rng->uniform() < w.drop_path) return 0.0;
        return 1.0 / (1.0 - w.drop_path);
    };

    Tensor out = x;
    double s = branch_scale(droppath_rng);
    if (s != 0.0) {
        Tensor h = layer_norm(out, w.ln1_g, w.ln1_b);
        Tensor a = layout.global ? multi_head_attention(h, w.attn)
                                 : windowed_attention(h, w.attn, grid, layout.window);
        out = add(out, s == 1.0 ? a : mul(a, s));
    }
    s = branch_scale(droppath_rng);
    if (s != 0.0) {
        Tensor h = layer_norm(out, w.ln2_g, w.ln2_b);
        Tensor m = add(matmul(gelu(add(matmul(h, w.mlp_w1), w.mlp_b1)), w.mlp_w2), w.mlp_b2);
        out = add(out, s == 1.0 ? m : mul(m, s));
    }
    return out;
}

}  // namespace smae
