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

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace smae {

struct Waveform {
    std::vector<double> samples;  // mono, nominally in [-1, 1]
    int sample_rate = 16000;
};

struct MelParams {
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int n_mels = 128;
    double fmin = 20.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
    int n_fft = 512;
};

// Row-major frames x bins grid of log mel-filterbank energies.
struct LogMel {
    int64_t frames = 0;
    int64_t bins = 0;
    std::vector<double> values;

    double at(int64_t t, int64_t f) const { return values[t * bins + f]; }
    double& at(int64_t t, int64_t f) { return values[t * bins + f]; }
};

struct DatasetStats {
    double mean = 0.0;
    double std = 1.0;
};

// ---- WAV I/O (RIFF PCM16, 1-2 channels; stereo averaged to mono) ----
Waveform decode_wav(const std::vector<uint8_t>& bytes);
Waveform read_wav_file(const std::string& path);
std::vector<uint8_t> encode_wav(const Waveform& w);
void write_wav_file(const std::string& path, const Waveform& w);

Waveform resample_linear(const Waveform& w, int target_hz);

// ---- spectral frontend ----

// In-place power-of-two complex FFT (inverse includes the 1/n factor).
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse);

std::vector<double> hann_window(int n);

// HTK-scale triangular filters, linear in mel domain; n_mels x (n_fft/2 + 1).
std::vector<double> mel_filterbank(const MelParams& p, int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Frame count for a waveform of n samples: 1 + floor((n - win) / hop).
int64_t num_frames(int64_t n_samples, int win, int hop);

// Hann-windowed frames -> power spectrum -> mel filterbank -> ln(max(p, floor)).
LogMel log_mel(const Waveform& w, const MelParams& p);

// Pads with zero frames at the end, or truncates, to exactly target_frames.
LogMel pad_or_trim(const LogMel& spec, int64_t target_frames);

LogMel normalize(const LogMel& spec, const DatasetStats& stats);
LogMel denormalize(const LogMel& spec, const DatasetStats& stats);

// Streaming (Welford) mean and population std over all spectrogram cells.
class StatsAccumulator {
public:
    void add(const LogMel& spec);
    void add_value(double x);
    int64_t count() const { return n_; }
    DatasetStats finalize() const;  // throws if fewer than 2 cells seen

private:
    int64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

// Inverts a raw (denormalized) log-mel spectrogram to audio: mel -> linear
// power via the clamped filterbank pseudo-inverse, then Griffin-Lim phase
// recovery from a zero-phase start. Output is peak-normalized to 0.9. When
// iter_errors is given it receives the Frobenius distance between the target
// magnitudes and each iterate's STFT magnitudes (classically non-increasing).
Waveform griffin_lim(const LogMel& spec, const MelParams& p, int n_iter = 32,
                     int sample_rate = 16000, std::vector<double>* iter_errors = nullptr);

}  // namespace smae
