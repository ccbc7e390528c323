// Copyright 2026 The SMAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "../src/attention.hpp"

using namespace smae;

namespace {

AttentionWeights make_attn(int64_t d, int64_t heads, Rng& rng) {
    AttentionWeights w;
    w.heads = heads;
    w.wq = Tensor::randn({d, d}, rng, 0.2);
    w.wk = Tensor::randn({d, d}, rng, 0.2);
    w.wv = Tensor::randn({d, d}, rng, 0.2);
    w.wo = Tensor::randn({d, d}, rng, 0.2);
    w.bq = Tensor::randn({d}, rng, 0.1);
    w.bk = Tensor::randn({d}, rng, 0.1);
    w.bv = Tensor::randn({d}, rng, 0.1);
    w.bo = Tensor::randn({d}, rng, 0.1);
    return w;
}

BlockWeights make_block(int64_t d, int64_t hidden, int64_t heads, Rng& rng) {
    BlockWeights b;
    b.ln1_g = Tensor::full({d}, 1.0);
    b.ln1_b = Tensor::zeros({d});
    b.attn = make_attn(d, heads, rng);
    b.ln2_g = Tensor::full({d}, 1.0);
    b.ln2_b = Tensor::zeros({d});
    b.mlp_w1 = Tensor::randn({d, hidden}, rng, 0.2);
    b.mlp_b1 = Tensor::zeros({hidden});
    b.mlp_w2 = Tensor::randn({hidden, d}, rng, 0.2);
    b.mlp_b2 = Tensor::zeros({d});
    return b;
}

// Loop-based attention oracle with the same head layout: head a owns feature
// dims [a*hd, (a+1)*hd) of the q/k/v projections.
std::vector<double> mha_oracle(std::span<const double> x, int64_t n, int64_t d,
                               const AttentionWeights& w,
                               const std::vector<uint8_t>* mask = nullptr) {
    const int64_t h = w.heads, hd = d / h;
    auto project = [&](const Tensor& wt, const Tensor& bt) {
        std::vector<double> out(n * d, 0.0);
        auto wv = wt.values();
        auto bv = bt.values();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < d; ++c) {
                double acc = bv[c];
                for (int64_t e = 0; e < d; ++e) acc += x[i * d + e] * wv[e * d + c];
                out[i * d + c] = acc;
            }
        return out;
    };
    std::vector<double> q = project(w.wq, w.bq);
    std::vector<double> k = project(w.wk, w.bk);
    std::vector<double> v = project(w.wv, w.bv);

    std::vector<double> ctx(n * d, 0.0);
    for (int64_t a = 0; a < h; ++a) {
        for (int64_t i = 0; i < n; ++i) {
            std::vector<double> score(n, -std::numeric_limits<double>::infinity());
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < n; ++j) {
                if (mask && !(*mask)[i * n + j]) continue;
                double s = 0.0;
                for (int64_t c = 0; c < hd; ++c)
                    s += q[i * d + a * hd + c] * k[j * d + a * hd + c];
                score[j] = s / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, score[j]);
            }
            double z = 0.0;
            std::vector<double> p(n, 0.0);
            for (int64_t j = 0; j < n; ++j) {
                if (std::isinf(score[j])) continue;
                p[j] = std::exp(score[j] - mx);
                z += p[j];
            }
            for (int64_t j = 0; j < n; ++j) {
                if (p[j] == 0.0) continue;
                for (int64_t c = 0; c < hd; ++c)
                    ctx[i * d + a * hd + c] += p[j] / z * v[j * d + a * hd + c];
            }
        }
    }

    std::vector<double> out(n * d, 0.0);
    auto wo = w.wo.values();
    auto bo = w.bo.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) {
            double acc = bo[c];
            for (int64_t e = 0; e < d; ++e) acc += ctx[i * d + e] * wo[e * d + c];
            out[i * d + c] = acc;
        }
    return out;
}

// Window id of token (t, f) after rolling the grid by the negative shift.
int64_t window_id_of(int64_t t, int64_t f, const PatchGridSpec& g, const WindowSpec& win) {
    auto mod = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
    const int64_t rt = mod(t - win.shift_t, g.grid_t);
    const int64_t rf = mod(f - win.shift_f, g.grid_f);
    const int64_t cols = (g.grid_f + win.win_f - 1) / win.win_f;
    return (rt / win.win_t) * cols + rf / win.win_f;
}

PatchGridSpec grid_of(int64_t gt, int64_t gf) {
    PatchGridSpec g;
    g.grid_t = gt;
    g.grid_f = gf;
    return g;
}

template <typename F>
double fd(F f, Tensor& x, int64_t i, double h = 1e-5) {
    auto v = x.mutable_values();
    const double orig = v[i];
    v[i] = orig + h;
    const double up = f();
    v[i] = orig - h;
    const double dn = f();
    v[i] = orig;
    return (up - dn) / (2 * h);
}

}  // namespace

TEST_CASE("multi_head_attention matches a loop-based oracle") {
    Rng rng(21);
    for (auto [n, d, h] : std::vector<std::array<int64_t, 3>>{{6, 8, 1}, {6, 8, 2}, {5, 12, 4},
                                                              {1, 8, 2}}) {
        Tensor x = Tensor::randn({n, d}, rng, 1.0);
        AttentionWeights w = make_attn(d, h, rng);
        Tensor y = multi_head_attention(x, w);
        REQUIRE(y.shape() == Shape{n, d});
        std::vector<double> ref = mha_oracle(x.values(), n, d, w);
        for (int64_t i = 0; i < n * d; ++i)
            CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }

    Tensor x = Tensor::zeros({4, 10});
    AttentionWeights bad = make_attn(10, 3, rng);
    CHECK_THROWS_AS(multi_head_attention(x, bad), std::invalid_argument);
}

TEST_CASE("masked attention matches the oracle and ignores disallowed pairs") {
    Rng rng(22);
    const int64_t n = 6, d = 8;
    Tensor x = Tensor::randn({n, d}, rng, 1.0);
    AttentionWeights w = make_attn(d, 2, rng);

    std::vector<uint8_t> mask(n * n, 0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) mask[i * n + j] = (i / 3 == j / 3);  // two blocks

    Tensor y = multi_head_attention(x, w, &mask);
    std::vector<double> ref = mha_oracle(x.values(), n, d, w, &mask);
    for (int64_t i = 0; i < n * d; ++i)
        CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // Tokens in block 0 are unaffected by values of block-1 tokens.
    Tensor x2 = x.detach();
    for (int64_t i = 3; i < 6; ++i)
        for (int64_t c = 0; c < d; ++c) x2.mutable_values()[i * d + c] += 7.5;
    Tensor y2 = multi_head_attention(x2, w, &mask);
    for (int64_t i = 0; i < 3 * d; ++i) CHECK(y2.values()[i] == y.values()[i]);

    // All-allowed mask reduces to plain attention bitwise.
    std::vector<uint8_t> all(n * n, 1);
    Tensor ym = multi_head_attention(x, w, &all);
    Tensor yp = multi_head_attention(x, w);
    for (int64_t i = 0; i < n * d; ++i) CHECK(ym.values()[i] == yp.values()[i]);
}

TEST_CASE("window_partition tiles the grid exactly once") {
    // Unshifted 4x4 grid with 2x2 windows: first window is the top-left block.
    WindowSpec win{2, 2, 0, 0};
    WindowPartition part = window_partition(grid_of(4, 4), win);
    REQUIRE(part.windows.size() == 4);
    CHECK(part.windows[0] == std::vector<int64_t>{0, 1, 4, 5});
    CHECK(part.windows[1] == std::vector<int64_t>{2, 3, 6, 7});
    CHECK(part.windows[3] == std::vector<int64_t>{10, 11, 14, 15});

    // Shifted by half a window: windows wrap around the grid edges.
    WindowSpec shifted{2, 2, 1, 1};
    WindowPartition sp = window_partition(grid_of(4, 4), shifted);
    CHECK(sp.windows[0] == std::vector<int64_t>{5, 6, 9, 10});

    // Every token appears exactly once, for divisible and ragged grids alike.
    for (auto [gt, gf, wt, wf, st, sf] : std::vector<std::array<int64_t, 6>>{
             {4, 4, 2, 2, 0, 0}, {4, 4, 2, 2, 1, 1}, {5, 3, 2, 2, 0, 0}, {5, 3, 2, 2, 1, 1},
             {6, 4, 4, 4, 2, 2}, {7, 5, 3, 2, 2, 1}}) {
        WindowPartition p = window_partition(grid_of(gt, gf), WindowSpec{wt, wf, st, sf});
        std::set<int64_t> seen;
        for (const auto& members : p.windows) seen.insert(members.begin(), members.end());
        CHECK(static_cast<int64_t>(seen.size()) == gt * gf);
        REQUIRE(static_cast<int64_t>(p.flat_order.size()) == gt * gf);
        for (size_t q = 0; q < p.flat_order.size(); ++q)
            CHECK(p.inverse[p.flat_order[q]] == static_cast<int64_t>(q));
    }

    CHECK_THROWS_AS(window_partition(grid_of(4, 4), WindowSpec{5, 2, 0, 0}),
                    std::invalid_argument);
}

TEST_CASE("windowed attention equals dense attention under the window mask") {
    Rng rng(23);
    for (auto [gt, gf, wt, wf, st, sf] : std::vector<std::array<int64_t, 6>>{
             {4, 4, 2, 2, 0, 0}, {4, 4, 2, 2, 1, 1}, {6, 4, 4, 4, 2, 2}, {5, 3, 2, 2, 1, 1}}) {
        PatchGridSpec g = grid_of(gt, gf);
        WindowSpec win{wt, wf, st, sf};
        const int64_t n = g.n_patches(), d = 8;
        Tensor x = Tensor::randn({n, d}, rng, 1.0);
        AttentionWeights w = make_attn(d, 2, rng);

        std::vector<uint8_t> mask(n * n, 0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j)
                mask[i * n + j] = window_id_of(i / gf, i % gf, g, win) ==
                                  window_id_of(j / gf, j % gf, g, win);

        Tensor yw = windowed_attention(x, w, g, win);
        Tensor yd = multi_head_attention(x, w, &mask);
        for (int64_t i = 0; i < n * d; ++i)
            CHECK(yw.values()[i] == doctest::Approx(yd.values()[i]).epsilon(1e-10));
    }
}

TEST_CASE("a window covering the whole grid is global attention") {
    Rng rng(24);
    PatchGridSpec g = grid_of(3, 4);
    Tensor x = Tensor::randn({12, 8}, rng, 1.0);
    AttentionWeights w = make_attn(8, 2, rng);
    Tensor yw = windowed_attention(x, w, g, WindowSpec{3, 4, 0, 0});
    Tensor yg = multi_head_attention(x, w);
    for (int64_t i = 0; i < 12 * 8; ++i) CHECK(yw.values()[i] == yg.values()[i]);
}

TEST_CASE("windowed attention backpropagates") {
    Rng rng(25);
    PatchGridSpec g = grid_of(2, 3);
    const int64_t n = 6, d = 4;
    Tensor x = Tensor::randn({n, d}, rng, 1.0, true);
    AttentionWeights w = make_attn(d, 2, rng);
    w.wq.set_requires_grad(true);

    WindowSpec win{2, 2, 0, 0};
    auto loss_fn = [&] {
        Tensor y = windowed_attention(x, w, g, win);
        return mean_all(mul(y, y));
    };
    Tensor loss = loss_fn();
    backward(loss);
    for (int64_t i : {int64_t{0}, int64_t{7}, int64_t{n * d - 1}}) {
        const double numeric = fd([&] { return loss_fn().item(); }, x, i);
        CHECK(x.grad()[i] == doctest::Approx(numeric).epsilon(1e-5));
    }
    for (int64_t i : {int64_t{0}, int64_t{d * d - 1}}) {
        const double numeric = fd([&] { return loss_fn().item(); }, w.wq, i);
        CHECK(w.wq.grad()[i] == doctest::Approx(numeric).epsilon(1e-5));
    }
}

TEST_CASE("decoder layouts follow the local/global families") {
    auto all_global = build_decoder_layouts(4, DecoderAttention::Global);
    for (const auto& l : all_global) CHECK(l.global);

    auto local = build_decoder_layouts(16, DecoderAttention::Local);
    for (size_t i = 0; i < local.size(); ++i) {
        CHECK_FALSE(local[i].global);
        CHECK(local[i].window.win_t == 4);
        CHECK(local[i].window.win_f == 4);
        CHECK(local[i].window.shift_t == (i % 2 == 0 ? 0 : 2));
        CHECK(local[i].window.shift_f == (i % 2 == 0 ? 0 : 2));
    }

    auto hybrid = build_decoder_layouts(12, DecoderAttention::Hybrid);
    REQUIRE(hybrid.size() == 12);
    for (size_t i = 0; i < 8; ++i) CHECK_FALSE(hybrid[i].global);
    for (size_t i = 8; i < 12; ++i) CHECK(hybrid[i].global);

    CHECK_THROWS_AS(build_decoder_layouts(0, DecoderAttention::Global), std::invalid_argument);
    CHECK_THROWS_AS(build_decoder_layouts(3, DecoderAttention::Hybrid, 4, 4, 4),
                    std::invalid_argument);

    for (DecoderAttention k :
         {DecoderAttention::Global, DecoderAttention::Local, DecoderAttention::Hybrid})
        CHECK(decoder_attention_from_name(decoder_attention_name(k)) == k);
    CHECK_THROWS_AS(decoder_attention_from_name("banded"), std::invalid_argument);
}

TEST_CASE("transformer block is residual around its branches") {
    Rng rng(26);
    PatchGridSpec g = grid_of(2, 2);
    const int64_t n = 4, d = 8;
    Tensor x = Tensor::randn({n, d}, rng, 1.0);
    BlockWeights b = make_block(d, 2 * d, 2, rng);

    // Zeroed output projections make both branches vanish: block == identity.
    BlockWeights zb = b;
    zb.attn.wo = Tensor::zeros({d, d});
    zb.attn.bo = Tensor::zeros({d});
    zb.mlp_w2 = Tensor::zeros({2 * d, d});
    zb.mlp_b2 = Tensor::zeros({d});
    Tensor same = transformer_block(x, zb, AttentionLayout{}, g);
    for (int64_t i = 0; i < n * d; ++i) CHECK(same.values()[i] == x.values()[i]);

    // Evaluation is deterministic.
    Tensor y1 = transformer_block(x, b, AttentionLayout{}, g);
    Tensor y2 = transformer_block(x, b, AttentionLayout{}, g);
    for (int64_t i = 0; i < n * d; ++i) CHECK(y1.values()[i] == y2.values()[i]);
}

TEST_CASE("stochastic depth drops residual branches during training only") {
    Rng rng(27);
    PatchGridSpec g = grid_of(2, 2);
    const int64_t n = 4, d = 8;
    Tensor x = Tensor::randn({n, d}, rng, 1.0);
    BlockWeights b = make_block(d, 2 * d, 2, rng);

    // p = 0 under a training rng equals evaluation output bitwise.
    Rng dp0(1);
    Tensor eval = transformer_block(x, b, AttentionLayout{}, g);
    Tensor train0 = transformer_block(x, b, AttentionLayout{}, g, &dp0);
    for (int64_t i = 0; i < n * d; ++i) CHECK(train0.values()[i] == eval.values()[i]);

    // p = 1 always drops both branches: identity.
    BlockWeights bp = b;
    bp.drop_path = 1.0;
    Rng dp1(2);
    Tensor dropped = transformer_block(x, bp, AttentionLayout{}, g, &dp1);
    for (int64_t i = 0; i < n * d; ++i) CHECK(dropped.values()[i] == x.values()[i]);

    // p = 0.5 yields distinct outcomes across draws (kept branches are
    // rescaled by 1/(1-p), so kept != eval as well).
    bp.drop_path = 0.5;
    std::set<double> first_cells;
    Rng dph(3);
    for (int rep = 0; rep < 16; ++rep) {
        Tensor y = transformer_block(x, bp, AttentionLayout{}, g, &dph);
        first_cells.insert(y.values()[0]);
    }
    CHECK(first_cells.size() > 1);
    CHECK(first_cells.count(x.values()[0]) == 1);  // both-dropped case occurs
}

TEST_CASE("transformer block backpropagates through attention and mlp") {
    Rng rng(28);
    PatchGridSpec g = grid_of(2, 2);
    const int64_t n = 4, d = 4;
    Tensor x = Tensor::randn({n, d}, rng, 0.7);
    BlockWeights b = make_block(d, 8, 2, rng);
    b.attn.wq.set_requires_grad(true);
    b.mlp_w1.set_requires_grad(true);
    b.ln1_g.set_requires_grad(true);

    auto loss_fn = [&] {
        Tensor y = transformer_block(x, b, AttentionLayout{}, g);
        return mean_all(mul(y, y));
    };
    Tensor loss = loss_fn();
    backward(loss);
    auto check_param = [&](Tensor& p, int64_t i) {
        const double numeric = fd([&] { return loss_fn().item(); }, p, i);
        CHECK(p.grad()[i] == doctest::Approx(numeric).epsilon(2e-5));
    };
    check_param(b.attn.wq, 3);
    check_param(b.mlp_w1, 5);
    check_param(b.ln1_g, 1);
}
