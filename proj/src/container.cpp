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

#include "container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace smae {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {
constexpr char kMagic[5] = {'S', 'M', 'A', 'E', '1'};
}  // namespace

void ArrayContainer::put(const std::string& name, const Shape& shape,
                         std::span<const double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("container: " + name + " has " +
                                    std::to_string(values.size()) + " values for shape " +
                                    shape_str(shape));
    Entry e;
    e.shape = shape;
    e.data.reserve(values.size());
    for (double v : values) e.data.push_back(static_cast<float>(v));
    arrays_[name] = std::move(e);
}

const Shape& ArrayContainer::shape_of(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw std::invalid_argument("container: no array named " + name);
    return it->second.shape;
}

std::vector<double> ArrayContainer::get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw std::invalid_argument("container: no array named " + name);
    return std::vector<double>(it->second.data.begin(), it->second.data.end());
}

std::vector<std::string> ArrayContainer::names() const {
    std::vector<std::string> out;
    out.reserve(arrays_.size());
    for (const auto& [name, _] : arrays_) out.push_back(name);
    return out;
}

void ArrayContainer::save(const std::string& path) const {
    nlohmann::json header;
    header["version"] = 1;
    header["config"] = config.is_null() ? nlohmann::json::object() : config;
    nlohmann::json arrays = nlohmann::json::object();
    uint64_t offset = 0;
    for (const auto& [name, e] : arrays_) {
        arrays[name] = {{"shape", e.shape}, {"dtype", "f32"}, {"offset", offset}};
        offset += e.data.size() * sizeof(float);
    }
    header["arrays"] = std::move(arrays);
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path + " for writing");
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header_str.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, e] : arrays_)
        f.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("container: write failed for " + path);
}

ArrayContainer ArrayContainer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path);
    char magic[5];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("container: " + path + " is not an SMAE1 file");
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1ull << 30))
        throw std::runtime_error("container: corrupt header length in " + path);
    std::string header_str(hlen, '\0');
    f.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("container: truncated header in " + path);

    nlohmann::json header = nlohmann::json::parse(header_str, nullptr, false);
    if (header.is_discarded() || !header.contains("arrays"))
        throw std::runtime_error("container: malformed header JSON in " + path);
    if (header.value("version", 0) != 1)
        throw std::runtime_error("container: unsupported version in " + path);

    ArrayContainer out;
    out.config = header.value("config", nlohmann::json::object());

    // Entries sorted by offset must tile the data section contiguously, which
    // matches how save() lays them out (header map is offset-ordered by name).
    const std::streampos data_start = f.tellg();
    for (const auto& [name, meta] : header["arrays"].items()) {
        if (meta.value("dtype", "") != "f32")
            throw std::runtime_error("container: unsupported dtype for " + name);
        Entry e;
        e.shape = meta["shape"].get<Shape>();
        const uint64_t offset = meta["offset"].get<uint64_t>();
        const int64_t n = shape_numel(e.shape);
        e.data.resize(n);
        f.seekg(data_start + static_cast<std::streamoff>(offset));
        f.read(reinterpret_cast<char*>(e.data.data()),
               static_cast<std::streamsize>(n * sizeof(float)));
        if (!f) throw std::runtime_error("container: truncated data for " + name);
        out.arrays_[name] = std::move(e);
    }
    return out;
}

}  // namespace smae
