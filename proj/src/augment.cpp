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

#include "augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smae {

Waveform cyclic_roll(const Waveform& w, int64_t start) {
    const int64_t n = static_cast<int64_t>(w.samples.size());
    if (start < 0 || start >= n)
        throw std::invalid_argument("cyclic_roll: start " + std::to_string(start) +
                                    " out of range for " + std::to_string(n) + " samples");
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.reserve(n);
    out.samples.insert(out.samples.end(), w.samples.begin() + start, w.samples.end());
    out.samples.insert(out.samples.end(), w.samples.begin(), w.samples.begin() + start);
    return out;
}

Waveform gain_jitter(const Waveform& w, double db) {
    if (std::abs(db) > 6.0)
        throw std::invalid_argument("gain_jitter: |db| must be <= 6, got " + std::to_string(db));
    const double gain = std::pow(10.0, db / 20.0);
    Waveform out = w;
    for (double& s : out.samples) s = std::clamp(s * gain, -1.0, 1.0);
    return out;
}

Waveform add_noise_snr(const Waveform& w, double snr_db, Rng& rng) {
    if (snr_db >= AugmentConfig::kNoSnr) return w;
    double power = 0.0;
    for (double s : w.samples) power += s * s;
    if (w.samples.empty() || power == 0.0) return w;  // zero-power signal: no-op
    power /= static_cast<double>(w.samples.size());
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    Waveform out = w;
    for (double& s : out.samples) s += sigma * rng.normal();
    return out;
}

LogMel add_noise_snr(const LogMel& spec, double snr_db, Rng& rng) {
    if (snr_db >= AugmentConfig::kNoSnr) return spec;
    double mean = 0.0;
    for (double v : spec.values) mean += v;
    mean /= static_cast<double>(spec.values.size());
    double var = 0.0;
    for (double v : spec.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(spec.values.size());
    if (var == 0.0) return spec;
    const double sigma = std::sqrt(var / std::pow(10.0, snr_db / 10.0));
    LogMel out = spec;
    for (double& v : out.values) v += sigma * rng.normal();
    return out;
}

LogMel spec_augment(const LogMel& spec, int64_t time_width, int64_t freq_width, Rng& rng) {
    if (time_width < 0 || time_width > spec.frames || freq_width < 0 || freq_width > spec.bins)
        throw std::invalid_argument("spec_augment: stripe widths must fit the spectrogram");
    LogMel out = spec;
    const int64_t tw = time_width > 0 ? rng.randint(0, time_width + 1) : 0;
    if (tw > 0) {
        const int64_t t0 = rng.randint(0, spec.frames - tw + 1);
        for (int64_t t = t0; t < t0 + tw; ++t)
            for (int64_t f = 0; f < spec.bins; ++f) out.at(t, f) = 0.0;
    }
    const int64_t fw = freq_width > 0 ? rng.randint(0, freq_width + 1) : 0;
    if (fw > 0) {
        const int64_t f0 = rng.randint(0, spec.bins - fw + 1);
        for (int64_t t = 0; t < spec.frames; ++t)
            for (int64_t f = f0; f < f0 + fw; ++f) out.at(t, f) = 0.0;
    }
    return out;
}

std::pair<LogMel, std::vector<double>> mixup(const LogMel& a, const std::vector<double>& ya,
                                             const LogMel& b, const std::vector<double>& yb,
                                             double lam) {
    if (a.frames != b.frames || a.bins != b.bins)
        throw std::invalid_argument("mixup: spectrogram shapes differ");
    if (ya.size() != yb.size()) throw std::invalid_argument("mixup: label vector sizes differ");
    if (lam < 0.0 || lam > 1.0) throw std::invalid_argument("mixup: lam must be in [0,1]");
    LogMel spec = a;
    for (size_t i = 0; i < spec.values.size(); ++i)
        spec.values[i] = lam * a.values[i] + (1.0 - lam) * b.values[i];
    std::vector<double> y(ya.size());
    for (size_t i = 0; i < ya.size(); ++i) y[i] = lam * ya[i] + (1.0 - lam) * yb[i];
    return {std::move(spec), std::move(y)};
}

}  // namespace smae
