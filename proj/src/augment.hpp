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

#include <vector>

#include "dsp.hpp"
#include "rng.hpp"

namespace smae {

struct AugmentConfig {
    bool roll = false;
    double gain_jitter_db = 0.0;   // jitter drawn uniformly in [-x, +x]
    double noise_snr_db = kNoSnr;  // kNoSnr disables noise
    int64_t specaug_time = 0;      // max time-stripe width (frames)
    int64_t specaug_freq = 0;      // max frequency-stripe width (bins)
    double mixup_prob = 0.0;

    static constexpr double kNoSnr = 1e30;  // "infinite SNR" sentinel
};

// samples[start..] ++ samples[..start]
Waveform cyclic_roll(const Waveform& w, int64_t start);

// Scales by 10^(db/20) and clamps to [-1, 1]; |db| must be <= 6.
Waveform gain_jitter(const Waveform& w, double db);

// Adds white Gaussian noise so that 10*log10(P_signal/P_noise) = snr_db.
// Zero-power input or the kNoSnr sentinel is a no-op.
Waveform add_noise_snr(const Waveform& w, double snr_db, Rng& rng);
// Spectrogram-domain variant: cell variance plays the role of signal power.
LogMel add_noise_snr(const LogMel& spec, double snr_db, Rng& rng);

// Zeroes one random time stripe of width <= time_width and one frequency
// stripe of width <= freq_width (widths drawn uniformly, zero allowed).
LogMel spec_augment(const LogMel& spec, int64_t time_width, int64_t freq_width, Rng& rng);

// lam*a + (1-lam)*b on both the spectrogram and the label vector.
std::pair<LogMel, std::vector<double>> mixup(const LogMel& a, const std::vector<double>& ya,
                                             const LogMel& b, const std::vector<double>& yb,
                                             double lam);

}  // namespace smae
