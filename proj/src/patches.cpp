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

#include "patches.hpp"

#include <cmath>
#include <stdexcept>

namespace smae {

PatchGridSpec make_grid(int64_t t_frames, int64_t f_bins, int64_t patch_t, int64_t patch_f,
                        int64_t stride_t, int64_t stride_f) {
    if (patch_t < 1 || patch_f < 1 || stride_t < 1 || stride_f < 1)
        throw std::invalid_argument("make_grid: patch and stride extents must be positive");
    if (t_frames < patch_t || f_bins < patch_f)
        throw std::invalid_argument("make_grid: spectrogram " + std::to_string(t_frames) + "x" +
                                    std::to_string(f_bins) + " smaller than one " +
                                    std::to_string(patch_t) + "x" + std::to_string(patch_f) +
                                    " patch");
    PatchGridSpec g;
    g.patch_t = patch_t;
    g.patch_f = patch_f;
    g.stride_t = stride_t;
    g.stride_f = stride_f;
    g.grid_t = 1 + (t_frames - patch_t) / stride_t;
    g.grid_f = 1 + (f_bins - patch_f) / stride_f;
    return g;
}

Tensor patchify(const LogMel& spec, const PatchGridSpec& g) {
    const int64_t need_t = (g.grid_t - 1) * g.stride_t + g.patch_t;
    const int64_t need_f = (g.grid_f - 1) * g.stride_f + g.patch_f;
    if (spec.frames < need_t || spec.bins < need_f)
        throw std::invalid_argument("patchify: spectrogram " + std::to_string(spec.frames) +
                                    "x" + std::to_string(spec.bins) +
                                    " does not cover the token grid (needs " +
                                    std::to_string(need_t) + "x" + std::to_string(need_f) +
                                    "); pad_or_trim the input first");
    const int64_t n = g.n_patches();
    const int64_t dim = g.patch_dim();
    std::vector<double> out(n * dim);
    for (int64_t gt = 0; gt < g.grid_t; ++gt) {
        for (int64_t gf = 0; gf < g.grid_f; ++gf) {
            double* dst = out.data() + (gt * g.grid_f + gf) * dim;
            const int64_t t0 = gt * g.stride_t, f0 = gf * g.stride_f;
            for (int64_t dt = 0; dt < g.patch_t; ++dt)
                for (int64_t df = 0; df < g.patch_f; ++df)
                    dst[dt * g.patch_f + df] = spec.at(t0 + dt, f0 + df);
        }
    }
    return Tensor::from_values({n, dim}, std::move(out));
}

LogMel unpatchify(const Tensor& patch_values, const PatchGridSpec& g) {
    if (g.overlapping())
        throw std::invalid_argument(
            "unpatchify: overlapping grids are not reconstructible (stride != patch)");
    if (patch_values.rank() != 2 || patch_values.dim(0) != g.n_patches() ||
        patch_values.dim(1) != g.patch_dim())
        throw std::invalid_argument("unpatchify: expected " + std::to_string(g.n_patches()) +
                                    "x" + std::to_string(g.patch_dim()) + " patch values, got " +
                                    shape_str(patch_values.shape()));
    LogMel out;
    out.frames = g.grid_t * g.patch_t;
    out.bins = g.grid_f * g.patch_f;
    out.values.resize(out.frames * out.bins);
    auto pv = patch_values.values();
    for (int64_t gt = 0; gt < g.grid_t; ++gt)
        for (int64_t gf = 0; gf < g.grid_f; ++gf) {
            const double* src = pv.data() + (gt * g.grid_f + gf) * g.patch_dim();
            for (int64_t dt = 0; dt < g.patch_t; ++dt)
                for (int64_t df = 0; df < g.patch_f; ++df)
                    out.at(gt * g.patch_t + dt, gf * g.patch_f + df) = src[dt * g.patch_f + df];
        }
    return out;
}

// Interleaved sin/cos of pos at geometric wavelengths, filling d_half dims.
static void fill_sincos(double* dst, int64_t pos, int64_t d_half) {
    for (int64_t k = 0; k < d_half / 2; ++k) {
        const double rate =
            std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d_half));
        const double angle = static_cast<double>(pos) * rate;
        dst[2 * k] = std::sin(angle);
        dst[2 * k + 1] = std::cos(angle);
    }
}

Tensor sinusoidal_embedding(const PatchGridSpec& g, int64_t d) {
    if (d < 4 || d % 4 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be divisible by 4, got " +
                                    std::to_string(d));
    const int64_t n = g.n_patches();
    std::vector<double> table(n * d);
    for (int64_t i = 0; i < n; ++i) {
        const int64_t t = i / g.grid_f;
        const int64_t f = i % g.grid_f;
        fill_sincos(table.data() + i * d, t, d / 2);
        fill_sincos(table.data() + i * d + d / 2, f, d / 2);
    }
    return Tensor::from_values({n, d}, std::move(table));
}

Tensor embed_patches(const Tensor& patches, const Tensor& w, const Tensor& b,
                     const Tensor& pos) {
    if (patches.rank() != 2 || w.rank() != 2 || patches.dim(1) != w.dim(0))
        throw std::invalid_argument("embed_patches: patch dim " +
                                    shape_str(patches.shape()) + " does not match projection " +
                                    shape_str(w.shape()));
    return add(add(matmul(patches, w), b), pos);
}

}  // namespace smae
