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

#include "masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace smae {

std::string strategy_name(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::Unstructured: return "unstructured";
        case MaskStrategy::Time: return "time";
        case MaskStrategy::Frequency: return "freq";
        case MaskStrategy::TimeFrequency: return "timefreq";
    }
    throw std::invalid_argument("strategy_name: bad enum value");
}

MaskStrategy strategy_from_name(const std::string& name) {
    if (name == "unstructured") return MaskStrategy::Unstructured;
    if (name == "time") return MaskStrategy::Time;
    if (name == "freq" || name == "frequency") return MaskStrategy::Frequency;
    if (name == "timefreq" || name == "time+freq") return MaskStrategy::TimeFrequency;
    throw std::invalid_argument("unknown masking strategy '" + name + "'");
}

nlohmann::json MaskPlan::to_json() const {
    return {{"strategy", strategy_name(strategy)}, {"ratio", ratio},
            {"ratio_t", ratio_t},                  {"ratio_f", ratio_f},
            {"n_total", n_total},                  {"n_visible", n_visible},
            {"n_masked", n_masked},                {"visible_idx", visible_idx},
            {"masked_idx", masked_idx},            {"restore", restore}};
}

MaskPlan MaskPlan::from_json(const nlohmann::json& j) {
    MaskPlan p;
    p.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    p.ratio = j.value("ratio", 0.0);
    p.ratio_t = j.value("ratio_t", 0.0);
    p.ratio_f = j.value("ratio_f", 0.0);
    p.n_total = j.at("n_total").get<int64_t>();
    p.n_visible = j.at("n_visible").get<int64_t>();
    p.n_masked = j.at("n_masked").get<int64_t>();
    p.visible_idx = j.at("visible_idx").get<std::vector<int64_t>>();
    p.masked_idx = j.at("masked_idx").get<std::vector<int64_t>>();
    p.restore = j.at("restore").get<std::vector<int64_t>>();
    return p;
}

// Fills restore from the already-populated visible/masked lists.
static void finish_plan(MaskPlan& p) {
    p.n_visible = static_cast<int64_t>(p.visible_idx.size());
    p.n_masked = static_cast<int64_t>(p.masked_idx.size());
    p.restore.clear();
    p.restore.reserve(p.n_total);
    p.restore.insert(p.restore.end(), p.visible_idx.begin(), p.visible_idx.end());
    p.restore.insert(p.restore.end(), p.masked_idx.begin(), p.masked_idx.end());
}

MaskPlan plan_unstructured(int64_t n_total, double ratio, Rng& rng) {
    if (n_total < 1) throw std::invalid_argument("plan_unstructured: need at least one token");
    if (ratio < 0.0 || ratio >= 1.0)
        throw std::invalid_argument("plan_unstructured: ratio must be in [0,1), got " +
                                    std::to_string(ratio));
    const int64_t n_visible = std::llround((1.0 - ratio) * static_cast<double>(n_total));
    if (n_visible == 0)
        throw std::invalid_argument("plan_unstructured: ratio " + std::to_string(ratio) +
                                    " leaves no visible tokens on " + std::to_string(n_total));
    std::vector<int64_t> perm(n_total);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);

    MaskPlan p;
    p.strategy = MaskStrategy::Unstructured;
    p.ratio = ratio;
    p.n_total = n_total;
    p.visible_idx.assign(perm.begin(), perm.begin() + n_visible);
    p.masked_idx.assign(perm.begin() + n_visible, perm.end());
    finish_plan(p);
    return p;
}

MaskPlan plan_structured(const PatchGridSpec& grid, MaskStrategy strategy, double ratio_t,
                         double ratio_f, Rng& rng) {
    if (strategy == MaskStrategy::Unstructured)
        throw std::invalid_argument("plan_structured: use plan_unstructured for that strategy");
    if (ratio_t < 0.0 || ratio_t >= 1.0 || ratio_f < 0.0 || ratio_f >= 1.0)
        throw std::invalid_argument("plan_structured: ratios must be in [0,1)");
    const int64_t gt = grid.grid_t, gf = grid.grid_f;
    const int64_t n_total = grid.n_patches();
    if (n_total < 1) throw std::invalid_argument("plan_structured: empty grid");

    const bool mask_time =
        strategy == MaskStrategy::Time || strategy == MaskStrategy::TimeFrequency;
    const bool mask_freq =
        strategy == MaskStrategy::Frequency || strategy == MaskStrategy::TimeFrequency;
    const int64_t n_cols = mask_time ? std::llround(ratio_t * static_cast<double>(gt)) : 0;
    const int64_t n_rows = mask_freq ? std::llround(ratio_f * static_cast<double>(gf)) : 0;

    std::vector<int64_t> cols = rng.sample_indices(gt, n_cols);
    std::vector<int64_t> rows = rng.sample_indices(gf, n_rows);
    std::vector<uint8_t> col_masked(gt, 0), row_masked(gf, 0);
    for (int64_t c : cols) col_masked[c] = 1;
    for (int64_t r : rows) row_masked[r] = 1;

    MaskPlan p;
    p.strategy = strategy;
    p.ratio_t = ratio_t;
    p.ratio_f = ratio_f;
    p.n_total = n_total;
    for (int64_t i = 0; i < n_total; ++i) {
        const int64_t t = i / gf, f = i % gf;
        if (col_masked[t] || row_masked[f])
            p.masked_idx.push_back(i);
        else
            p.visible_idx.push_back(i);
    }
    if (p.visible_idx.empty())
        throw std::invalid_argument("plan_structured: ratios (" + std::to_string(ratio_t) +
                                    ", " + std::to_string(ratio_f) + ") mask every token");
    // One bookkeeping path for all strategies: shuffle inside each group so
    // restore handling matches unstructured plans.
    rng.shuffle(p.visible_idx);
    rng.shuffle(p.masked_idx);
    finish_plan(p);
    return p;
}

Tensor select_visible(const Tensor& tokens, const MaskPlan& plan) {
    if (tokens.rank() != 2 || tokens.dim(0) != plan.n_total)
        throw std::invalid_argument("select_visible: plan covers " +
                                    std::to_string(plan.n_total) + " tokens but input is " +
                                    shape_str(tokens.shape()));
    return gather_rows(tokens, plan.visible_idx);
}

Tensor restore_full_sequence(const Tensor& encoded, const Tensor& mask_token,
                             const MaskPlan& plan, const Tensor& pos) {
    if (encoded.rank() != 2 || encoded.dim(0) != plan.n_visible)
        throw std::invalid_argument("restore_full_sequence: expected " +
                                    std::to_string(plan.n_visible) + " encoded rows, got " +
                                    shape_str(encoded.shape()));
    const int64_t d = encoded.dim(1);
    if (mask_token.rank() != 2 || mask_token.dim(0) != 1 || mask_token.dim(1) != d)
        throw std::invalid_argument("restore_full_sequence: mask token must be 1x" +
                                    std::to_string(d));
    if (pos.rank() != 2 || pos.dim(0) != plan.n_total || pos.dim(1) != d)
        throw std::invalid_argument("restore_full_sequence: positional table must be " +
                                    std::to_string(plan.n_total) + "x" + std::to_string(d));

    Tensor concat = plan.n_masked > 0
                        ? concat_rows({encoded, tile_rows(mask_token, plan.n_masked)})
                        : encoded;
    // invert restore: row i of the output comes from shuffled position j with
    // restore[j] == i
    std::vector<int64_t> unshuffle(plan.n_total);
    for (int64_t j = 0; j < plan.n_total; ++j) unshuffle[plan.restore[j]] = j;
    return add(gather_rows(concat, unshuffle), pos);
}

}  // namespace smae
