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

#include "image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace smae {

namespace {

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, crc32(body.data(), body.size()));
}

// zlib container around deflate "stored" blocks: no compression, but a
// well-formed stream every PNG reader accepts.
std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> out;
    out.push_back(0x78);
    out.push_back(0x01);
    size_t pos = 0;
    do {
        size_t len = std::min<size_t>(raw.size() - pos, 65535);
        bool final = pos + len == raw.size();
        out.push_back(final ? 0x01 : 0x00);
        out.push_back(static_cast<uint8_t>(len & 0xff));
        out.push_back(static_cast<uint8_t>(len >> 8));
        out.push_back(static_cast<uint8_t>(~len & 0xff));
        out.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
        out.insert(out.end(), raw.begin() + pos, raw.begin() + pos + len);
        pos += len;
    } while (pos < raw.size());
    put_be32(out, adler32(raw.data(), raw.size()));
    return out;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

std::vector<uint8_t> encode_png(const Image& img) {
    if (img.width <= 0 || img.height <= 0) {
        throw std::invalid_argument("encode_png: empty image");
    }
    if (img.rgb.size() != static_cast<size_t>(3 * img.width * img.height)) {
        throw std::invalid_argument("encode_png: pixel buffer does not match dimensions");
    }

    std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.width));
    put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    append_chunk(png, "IHDR", ihdr);

    // Filter type 0 (None) in front of every scanline.
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (3 * img.width + 1));
    for (int64_t y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const uint8_t* row = img.rgb.data() + 3 * y * img.width;
        raw.insert(raw.end(), row, row + 3 * img.width);
    }
    append_chunk(png, "IDAT", zlib_store(raw));
    append_chunk(png, "IEND", {});
    return png;
}

void write_png(const std::string& path, const Image& img) {
    auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png: cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write_png: short write to " + path);
}

const std::array<std::array<uint8_t, 3>, 256>& viridis_palette() {
    static const auto palette = [] {
        // Anchor colors at t = 0, 0.1, ..., 1.0; linear blend in between.
        constexpr double stops[11][3] = {
            {0.267004, 0.004874, 0.329415}, {0.282623, 0.140926, 0.457517},
            {0.253935, 0.265254, 0.529983}, {0.206756, 0.371758, 0.553117},
            {0.163625, 0.471133, 0.558148}, {0.127568, 0.566949, 0.550556},
            {0.134692, 0.658636, 0.517649}, {0.266941, 0.748751, 0.440573},
            {0.477504, 0.821444, 0.318195}, {0.741388, 0.873449, 0.149561},
            {0.993248, 0.906157, 0.143936},
        };
        std::array<std::array<uint8_t, 3>, 256> p{};
        for (int i = 0; i < 256; ++i) {
            double t = i / 255.0 * 10.0;
            int lo = std::min(static_cast<int>(t), 9);
            double frac = t - lo;
            for (int c = 0; c < 3; ++c) {
                double v = stops[lo][c] * (1.0 - frac) + stops[lo + 1][c] * frac;
                p[i][c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
        return p;
    }();
    return palette;
}

Image render_spectrogram(const LogMel& spec, int64_t cell_px) {
    if (spec.frames <= 0 || spec.bins <= 0) {
        throw std::invalid_argument("render_spectrogram: empty spectrogram");
    }
    double lo = spec.values[0];
    double hi = spec.values[0];
    for (double v : spec.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return render_spectrogram(spec, lo, hi, cell_px);
}

Image render_spectrogram(const LogMel& spec, double lo, double hi, int64_t cell_px) {
    if (cell_px < 1) throw std::invalid_argument("render_spectrogram: cell_px must be >= 1");
    if (spec.frames <= 0 || spec.bins <= 0) {
        throw std::invalid_argument("render_spectrogram: empty spectrogram");
    }
    for (double v : spec.values) {
        if (!std::isfinite(v)) throw std::runtime_error("render_spectrogram: non-finite cell");
    }
    double range = hi - lo;

    const auto& palette = viridis_palette();
    Image img;
    img.width = spec.frames * cell_px;
    img.height = spec.bins * cell_px;
    img.rgb.assign(static_cast<size_t>(3 * img.width * img.height), 0);
    for (int64_t t = 0; t < spec.frames; ++t) {
        for (int64_t f = 0; f < spec.bins; ++f) {
            int idx = 0;
            if (range > 0) {
                idx = static_cast<int>(std::lround((spec.at(t, f) - lo) / range * 255.0));
                idx = std::clamp(idx, 0, 255);
            }
            const auto& color = palette[idx];
            // Bin 0 sits at the bottom of the image.
            int64_t y0 = (spec.bins - 1 - f) * cell_px;
            int64_t x0 = t * cell_px;
            for (int64_t dy = 0; dy < cell_px; ++dy) {
                for (int64_t dx = 0; dx < cell_px; ++dx) {
                    std::memcpy(img.pixel(x0 + dx, y0 + dy), color.data(), 3);
                }
            }
        }
    }
    return img;
}

}  // namespace smae
