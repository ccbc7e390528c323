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

#include "artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "image.hpp"
#include "patches.hpp"

namespace smae {

using nlohmann::json;

void save_spec_json(const std::string& path, const LogMel& spec) {
    json j{{"frames", spec.frames}, {"bins", spec.bins}, {"values", spec.values}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_spec_json: cannot open " + path);
    out << j.dump() << "\n";
}

LogMel load_spec_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_spec_json: cannot open " + path);
    json j = json::parse(in);
    LogMel spec;
    spec.frames = j.at("frames").get<int64_t>();
    spec.bins = j.at("bins").get<int64_t>();
    spec.values = j.at("values").get<std::vector<double>>();
    if (spec.frames < 1 || spec.bins < 1 ||
        spec.values.size() != static_cast<size_t>(spec.frames * spec.bins)) {
        throw std::runtime_error("load_spec_json: inconsistent dimensions in " + path);
    }
    return spec;
}

ReconstructionTriptych reconstruct_spectrogram(const AudioMAEModel& model, const LogMel& spec,
                                               const MaskPlan& plan, bool full_prediction) {
    const auto& grid = model.config().grid;
    if (grid.overlapping()) {
        throw std::invalid_argument(
            "reconstruct_spectrogram: needs a non-overlapping patch grid");
    }
    if (plan.n_total != grid.n_patches()) {
        throw std::invalid_argument("reconstruct_spectrogram: plan/grid size mismatch");
    }

    const int64_t n = grid.n_patches();
    const int64_t pd = grid.patch_dim();
    Tensor patches = patchify(spec, grid);
    auto orig = patches.values();

    // Predicted patch rows, mapped back to the input value domain when the
    // model's targets are per-patch normalized (invert with the input patch's
    // own statistics, matching the target construction).
    std::vector<double> pred(static_cast<size_t>(n * pd));
    {
        Tensor latents = model.encode_visible(model.patch_tokens(spec), plan);
        Tensor raw = model.decode(latents, plan);
        auto rawv = raw.values();
        for (int64_t i = 0; i < n; ++i) {
            double scale = 1.0, shift = 0.0;
            if (model.config().normalize_targets) {
                double mean = 0.0;
                for (int64_t k = 0; k < pd; ++k) mean += orig[i * pd + k];
                mean /= static_cast<double>(pd);
                double var = 0.0;
                for (int64_t k = 0; k < pd; ++k) {
                    const double d = orig[i * pd + k] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(pd);
                scale = std::sqrt(var + 1e-6);
                shift = mean;
            }
            for (int64_t k = 0; k < pd; ++k) {
                pred[i * pd + k] = rawv[i * pd + k] * scale + shift;
            }
        }
    }

    const double floor_value =
        spec.values.empty() ? 0.0 : *std::min_element(spec.values.begin(), spec.values.end());

    std::vector<double> masked_rows(orig.begin(), orig.end());
    std::vector<double> restored_rows(orig.begin(), orig.end());
    if (full_prediction) restored_rows = pred;
    for (int64_t idx : plan.masked_idx) {
        std::fill_n(masked_rows.begin() + idx * pd, pd, floor_value);
        if (!full_prediction) {
            std::copy_n(pred.begin() + idx * pd, pd, restored_rows.begin() + idx * pd);
        }
    }

    ReconstructionTriptych t;
    t.original = spec;
    t.masked = unpatchify(Tensor::from_values({n, pd}, std::move(masked_rows)), grid);
    t.restored = unpatchify(Tensor::from_values({n, pd}, std::move(restored_rows)), grid);
    return t;
}

void write_reconstruction_artifacts(const std::string& dir, const ReconstructionTriptych& t,
                                    const DatasetStats& stats, int griffin_lim_iters) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    MelParams p;
    p.n_mels = static_cast<int>(t.original.bins);

    // One shared color scale (the original's range) keeps visible patches
    // pixel-identical across the triptych.
    LogMel denorm_orig = denormalize(t.original, stats);
    double lo = 0.0, hi = 0.0;
    if (!denorm_orig.values.empty()) {
        auto [mn, mx] = std::minmax_element(denorm_orig.values.begin(), denorm_orig.values.end());
        lo = *mn;
        hi = *mx;
    }

    const std::pair<const char*, const LogMel*> parts[] = {
        {"original", &t.original}, {"masked", &t.masked}, {"restored", &t.restored}};
    for (const auto& [name, spec] : parts) {
        LogMel denorm = denormalize(*spec, stats);
        write_wav_file((fs::path(dir) / (std::string(name) + ".wav")).string(),
                       griffin_lim(denorm, p, griffin_lim_iters));
        write_png((fs::path(dir) / (std::string(name) + ".png")).string(),
                  render_spectrogram(denorm, lo, hi));
    }
}

}  // namespace smae
