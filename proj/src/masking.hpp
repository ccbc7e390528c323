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

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "patches.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace smae {

enum class MaskStrategy { Unstructured, Time, Frequency, TimeFrequency };

std::string strategy_name(MaskStrategy s);
MaskStrategy strategy_from_name(const std::string& name);

// A masking decision over n_total tokens: which indices stay visible (in
// shuffled order), which are masked, and the permutation that returns the
// concatenation (visible ++ masked) to original token order.
struct MaskPlan {
    MaskStrategy strategy = MaskStrategy::Unstructured;
    double ratio = 0.0;    // unstructured ratio
    double ratio_t = 0.0;  // structured per-axis ratios
    double ratio_f = 0.0;
    int64_t n_total = 0;
    int64_t n_visible = 0;
    int64_t n_masked = 0;
    std::vector<int64_t> visible_idx;  // shuffled order fed to the encoder
    std::vector<int64_t> masked_idx;
    // restore[j] = original index of the token at shuffled position j, where
    // shuffled order is visible_idx ++ masked_idx.
    std::vector<int64_t> restore;

    nlohmann::json to_json() const;
    static MaskPlan from_json(const nlohmann::json& j);
};

// Uniformly random visible subset with n_visible = round((1-ratio)*n_total).
MaskPlan plan_unstructured(int64_t n_total, double ratio, Rng& rng);

// Masks whole time columns and/or frequency rows of the token grid:
// Time masks round(ratio_t*grid_t) columns, Frequency round(ratio_f*grid_f)
// rows, TimeFrequency the union of both.
MaskPlan plan_structured(const PatchGridSpec& grid, MaskStrategy strategy, double ratio_t,
                         double ratio_f, Rng& rng);

// Gathers token rows at visible_idx in the plan's shuffled order.
Tensor select_visible(const Tensor& tokens, const MaskPlan& plan);

// Appends n_masked copies of mask_token to the encoded rows, un-shuffles back
// to original token order via plan.restore, and adds positional rows.
Tensor restore_full_sequence(const Tensor& encoded, const Tensor& mask_token,
                             const MaskPlan& plan, const Tensor& pos);

}  // namespace smae
