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

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace smae {

// Flat binary container of named little-endian f32 arrays: the 5-byte magic
// "SMAE1", a u64-le JSON header length, the JSON header (version, free-form
// config, name -> {shape, dtype, offset}), then the packed array data.
class ArrayContainer {
public:
    void put(const std::string& name, const Shape& shape, std::span<const double> values);
    void put_tensor(const std::string& name, const Tensor& t) {
        put(name, t.shape(), t.values());
    }

    bool has(const std::string& name) const { return arrays_.count(name) > 0; }
    const Shape& shape_of(const std::string& name) const;
    // Values widened back to f64 (data is stored as f32).
    std::vector<double> get(const std::string& name) const;
    std::vector<std::string> names() const;

    nlohmann::json config;

    void save(const std::string& path) const;
    static ArrayContainer load(const std::string& path);

private:
    struct Entry {
        Shape shape;
        std::vector<float> data;
    };
    std::map<std::string, Entry> arrays_;
};

}  // namespace smae
