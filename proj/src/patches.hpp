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

#include "dsp.hpp"
#include "tensor.hpp"

namespace smae {

// Token grid induced by sliding a patch_t x patch_f window with the given
// strides over a T x F spectrogram. Patch index i maps to grid coordinates
// (t = i / grid_f, f = i % grid_f) — row-major, time-major.
struct PatchGridSpec {
    int64_t patch_t = 16, patch_f = 16;
    int64_t stride_t = 16, stride_f = 16;
    int64_t grid_t = 0, grid_f = 0;

    int64_t patch_dim() const { return patch_t * patch_f; }
    int64_t n_patches() const { return grid_t * grid_f; }
    bool overlapping() const { return stride_t != patch_t || stride_f != patch_f; }
};

// Computes grid extents: grid_t = 1 + floor((T - patch_t)/stride_t), same for F.
PatchGridSpec make_grid(int64_t t_frames, int64_t f_bins, int64_t patch_t = 16,
                        int64_t patch_f = 16, int64_t stride_t = 16, int64_t stride_f = 16);

// n_patches x patch_dim matrix; patch i is the window at
// (t*stride_t, f*stride_f), flattened row-major. Trailing partial windows are
// cropped (overlapping strides permitted).
Tensor patchify(const LogMel& spec, const PatchGridSpec& g);

// Inverse of patchify for non-overlapping grids only.
LogMel unpatchify(const Tensor& patch_values, const PatchGridSpec& g);

// Fixed 2D factorized sin-cos table (n_patches x d): the first d/2 dims encode
// the time index, the last d/2 the frequency index, each half interleaving
// sin/cos at geometric wavelengths 10000^(2k/(d/2)). d must be divisible by 4.
Tensor sinusoidal_embedding(const PatchGridSpec& g, int64_t d);

// patches · W + b + positional rows.
Tensor embed_patches(const Tensor& patches, const Tensor& w, const Tensor& b,
                     const Tensor& pos);

}  // namespace smae
