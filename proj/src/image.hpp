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
//
// Minimal 8-bit RGB PNG writer (stored-block zlib stream, no compression)
// and spectrogram rendering with a fixed 256-entry palette.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsp.hpp"

namespace smae {

struct Image {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    uint8_t* pixel(int64_t x, int64_t y) { return rgb.data() + 3 * (y * width + x); }
    const uint8_t* pixel(int64_t x, int64_t y) const { return rgb.data() + 3 * (y * width + x); }
};

// Complete PNG file bytes: IHDR + IDAT (zlib stored blocks) + IEND.
std::vector<uint8_t> encode_png(const Image& img);
void write_png(const std::string& path, const Image& img);

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);
uint32_t adler32(const uint8_t* data, size_t n);

// Dark-violet -> blue -> green -> yellow gradient, perceptually ordered.
const std::array<std::array<uint8_t, 3>, 256>& viridis_palette();

// Time on x, frequency on y with bin 0 at the bottom; cells min/max
// normalized into the palette (a constant spectrogram maps to palette[0],
// i.e. a monochrome image). cell_px scales each cell to a square of pixels.
Image render_spectrogram(const LogMel& spec, int64_t cell_px = 2);

// Same, with a caller-fixed value range so related images share one color
// scale; values outside [lo, hi] clamp to the palette ends, and hi <= lo
// degenerates to palette[0] everywhere.
Image render_spectrogram(const LogMel& spec, double lo, double hi, int64_t cell_px = 2);

}  // namespace smae
