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

#include "dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace smae {

// ---------------------------------------------------------------------------
// WAV I/O
// ---------------------------------------------------------------------------

namespace {

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void push_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}
void push_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
}

}  // namespace

Waveform decode_wav(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("decode_wav: not a RIFF/WAVE file");

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    const uint8_t* data = nullptr;
    uint32_t data_size = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t size = read_u32(bytes.data() + pos + 4);
        pos += 8;
        if (pos + size > bytes.size())
            throw std::runtime_error("decode_wav: truncated chunk '" + std::string(id, 4) + "'");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw std::runtime_error("decode_wav: fmt chunk too small");
            format = read_u16(bytes.data() + pos);
            channels = read_u16(bytes.data() + pos + 2);
            sample_rate = read_u32(bytes.data() + pos + 4);
            bits = read_u16(bytes.data() + pos + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + pos;
            data_size = size;
        }
        pos += size + (size & 1);  // chunks are word-aligned
    }

    if (format == 0 || data == nullptr)
        throw std::runtime_error("decode_wav: missing fmt or data chunk");
    if (format != 1 || bits != 16)
        throw std::runtime_error("decode_wav: only 16-bit PCM is supported (format=" +
                                 std::to_string(format) + ", bits=" + std::to_string(bits) + ")");
    if (channels < 1 || channels > 2)
        throw std::runtime_error("decode_wav: expected 1 or 2 channels, got " +
                                 std::to_string(channels));
    if (sample_rate == 0) throw std::runtime_error("decode_wav: zero sample rate");

    const size_t n_frames = data_size / (2 * channels);
    Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    w.samples.resize(n_frames);
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const int16_t s = static_cast<int16_t>(read_u16(data + (i * channels + c) * 2));
            acc += static_cast<double>(s) / 32768.0;
        }
        w.samples[i] = acc / channels;
    }
    return w;
}

Waveform read_wav_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav_file: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

std::vector<uint8_t> encode_wav(const Waveform& w) {
    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    const uint32_t data_size = n * 2;
    std::vector<uint8_t> out;
    out.reserve(44 + data_size);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    push_u32(out, 36 + data_size);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    push_u32(out, 16);
    push_u16(out, 1);  // PCM
    push_u16(out, 1);  // mono
    push_u32(out, static_cast<uint32_t>(w.sample_rate));
    push_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
    push_u16(out, 2);   // block align
    push_u16(out, 16);  // bits
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    push_u32(out, data_size);
    for (double s : w.samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        const int32_t q = static_cast<int32_t>(std::lrint(clamped * 32767.0));
        push_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
    return out;
}

void write_wav_file(const std::string& path, const Waveform& w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_wav_file: cannot open " + path);
    const auto bytes = encode_wav(w);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write_wav_file: write failed for " + path);
}

Waveform resample_linear(const Waveform& w, int target_hz) {
    if (target_hz <= 0) throw std::invalid_argument("resample_linear: target rate must be > 0");
    if (target_hz == w.sample_rate || w.samples.empty()) {
        Waveform out = w;
        out.sample_rate = target_hz;
        return out;
    }
    const double ratio = static_cast<double>(w.sample_rate) / target_hz;
    const int64_t n_out =
        static_cast<int64_t>(w.samples.size()) * target_hz / w.sample_rate;
    Waveform out;
    out.sample_rate = target_hz;
    out.samples.resize(n_out);
    const int64_t n_in = static_cast<int64_t>(w.samples.size());
    for (int64_t i = 0; i < n_out; ++i) {
        const double pos = i * ratio;
        const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(pos), n_in - 1);
        const int64_t i1 = std::min<int64_t>(i0 + 1, n_in - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac;
    }
    return out;
}

// ---------------------------------------------------------------------------
// FFT and filterbank
// ---------------------------------------------------------------------------

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_radix2: size must be a power of two, got " +
                                    std::to_string(n));
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv_n;
    }
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
    return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(const MelParams& p, int sample_rate) {
    if (p.n_mels < 1) throw std::invalid_argument("mel_filterbank: n_mels must be >= 1");
    if (p.fmax > sample_rate / 2.0)
        throw std::invalid_argument("mel_filterbank: fmax exceeds Nyquist");
    const int n_bins = p.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(p.fmin);
    const double mel_hi = hz_to_mel(p.fmax);
    // n_mels + 2 equally spaced mel points: left edge, centers, right edge.
    std::vector<double> mel_pts(p.n_mels + 2);
    for (int i = 0; i < p.n_mels + 2; ++i)
        mel_pts[i] = mel_lo + (mel_hi - mel_lo) * i / (p.n_mels + 1);

    std::vector<double> fb(static_cast<size_t>(p.n_mels) * n_bins, 0.0);
    const double bin_hz = static_cast<double>(sample_rate) / p.n_fft;
    for (int m = 0; m < p.n_mels; ++m) {
        const double left = mel_pts[m], center = mel_pts[m + 1], right = mel_pts[m + 2];
        double row_sum = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            const double mel_k = hz_to_mel(k * bin_hz);
            double w = 0.0;
            if (mel_k > left && mel_k < right)
                w = mel_k <= center ? (mel_k - left) / (center - left)
                                    : (right - mel_k) / (right - center);
            fb[static_cast<size_t>(m) * n_bins + k] = w;
            row_sum += w;
        }
        if (row_sum == 0.0) {
            // Narrow low-frequency filters can fall between FFT bins; give
            // such a filter full weight at the bin nearest its center so every
            // row stays positive.
            const int k = std::clamp(
                static_cast<int>(std::lround(mel_to_hz(center) / bin_hz)), 0, n_bins - 1);
            fb[static_cast<size_t>(m) * n_bins + k] = 1.0;
        }
    }
    return fb;
}

int64_t num_frames(int64_t n_samples, int win, int hop) {
    if (n_samples < win) return 0;
    return 1 + (n_samples - win) / hop;
}

LogMel log_mel(const Waveform& w, const MelParams& p) {
    const int win = static_cast<int>(std::lround(p.window_ms * w.sample_rate / 1000.0));
    const int hop = static_cast<int>(std::lround(p.hop_ms * w.sample_rate / 1000.0));
    if (static_cast<int64_t>(w.samples.size()) < win)
        throw std::invalid_argument(
            "log_mel: waveform shorter than one window (" + std::to_string(w.samples.size()) +
            " < " + std::to_string(win) + " samples); pad_or_trim the waveform first");
    if (win > p.n_fft)
        throw std::invalid_argument("log_mel: window longer than FFT size");

    const int64_t t_frames = num_frames(static_cast<int64_t>(w.samples.size()), win, hop);
    const int n_bins = p.n_fft / 2 + 1;
    const std::vector<double> window = hann_window(win);
    const std::vector<double> fb = mel_filterbank(p, w.sample_rate);

    LogMel out;
    out.frames = t_frames;
    out.bins = p.n_mels;
    out.values.resize(t_frames * p.n_mels);

    std::vector<std::complex<double>> buf(p.n_fft);
    std::vector<double> power(n_bins);
    for (int64_t t = 0; t < t_frames; ++t) {
        const double* frame = w.samples.data() + t * hop;
        for (int i = 0; i < win; ++i) buf[i] = frame[i] * window[i];
        for (int i = win; i < p.n_fft; ++i) buf[i] = 0.0;
        fft_radix2(buf, false);
        for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
        for (int m = 0; m < p.n_mels; ++m) {
            double e = 0.0;
            const double* row = fb.data() + static_cast<size_t>(m) * n_bins;
            for (int k = 0; k < n_bins; ++k) e += row[k] * power[k];
            out.at(t, m) = std::log(std::max(e, p.log_floor));
        }
    }
    return out;
}

LogMel pad_or_trim(const LogMel& spec, int64_t target_frames) {
    if (target_frames < 1) throw std::invalid_argument("pad_or_trim: target_frames must be >= 1");
    LogMel out;
    out.frames = target_frames;
    out.bins = spec.bins;
    out.values.assign(target_frames * spec.bins, 0.0);
    const int64_t copy = std::min(spec.frames, target_frames);
    std::copy_n(spec.values.begin(), copy * spec.bins, out.values.begin());
    return out;
}

LogMel normalize(const LogMel& spec, const DatasetStats& stats) {
    if (!(stats.std > 0)) throw std::invalid_argument("normalize: std must be > 0");
    LogMel out = spec;
    for (double& v : out.values) v = (v - stats.mean) / stats.std;
    return out;
}

LogMel denormalize(const LogMel& spec, const DatasetStats& stats) {
    LogMel out = spec;
    for (double& v : out.values) v = v * stats.std + stats.mean;
    return out;
}

void StatsAccumulator::add_value(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void StatsAccumulator::add(const LogMel& spec) {
    for (double v : spec.values) add_value(v);
}

DatasetStats StatsAccumulator::finalize() const {
    if (n_ < 2) throw std::invalid_argument("estimate_stats: need at least 2 cells, saw " +
                                            std::to_string(n_));
    DatasetStats s;
    s.mean = mean_;
    s.std = std::sqrt(m2_ / static_cast<double>(n_));  // population std
    return s;
}

// ---------------------------------------------------------------------------
// Griffin-Lim
// ---------------------------------------------------------------------------

namespace {

// Cholesky solve of A x = b for SPD A (n x n, row-major); overwrites a copy.
std::vector<double> cholesky_solve(std::vector<double> a, int n, std::vector<double> b) {
    // decompose A = L Lᵀ in-place (lower triangle)
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (int k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0)
                    throw std::runtime_error("cholesky: matrix not positive definite");
                a[i * n + j] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // forward substitution L y = b
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    // back substitution Lᵀ x = y
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
    return b;
}

struct StftConfig {
    int win;
    int hop;
    int n_fft;
    std::vector<double> window;
};

// Magnitude-preserving analysis matching log_mel's framing.
std::vector<std::complex<double>> stft(const std::vector<double>& x, const StftConfig& c,
                                       int64_t t_frames) {
    const int n_bins = c.n_fft / 2 + 1;
    std::vector<std::complex<double>> out(t_frames * n_bins);
    std::vector<std::complex<double>> buf(c.n_fft);
    for (int64_t t = 0; t < t_frames; ++t) {
        for (int i = 0; i < c.win; ++i) buf[i] = x[t * c.hop + i] * c.window[i];
        for (int i = c.win; i < c.n_fft; ++i) buf[i] = 0.0;
        fft_radix2(buf, false);
        std::copy_n(buf.begin(), n_bins, out.begin() + t * n_bins);
    }
    return out;
}

// Least-squares inverse STFT: windowed overlap-add over the analysis window,
// normalized by the summed squared window.
std::vector<double> istft(const std::vector<std::complex<double>>& spec, const StftConfig& c,
                          int64_t t_frames, int64_t n_samples) {
    const int n_bins = c.n_fft / 2 + 1;
    std::vector<double> y(n_samples, 0.0);
    std::vector<double> wsum(n_samples, 0.0);
    std::vector<std::complex<double>> buf(c.n_fft);
    for (int64_t t = 0; t < t_frames; ++t) {
        const std::complex<double>* frame = spec.data() + t * n_bins;
        for (int k = 0; k < n_bins; ++k) buf[k] = frame[k];
        for (int k = n_bins; k < c.n_fft; ++k) buf[k] = std::conj(frame[c.n_fft - k]);
        fft_radix2(buf, true);
        for (int i = 0; i < c.win; ++i) {
            const int64_t pos = t * c.hop + i;
            if (pos >= n_samples) break;
            y[pos] += buf[i].real() * c.window[i];
            wsum[pos] += c.window[i] * c.window[i];
        }
    }
    for (int64_t i = 0; i < n_samples; ++i)
        if (wsum[i] > 1e-12) y[i] /= wsum[i];
    return y;
}

}  // namespace

Waveform griffin_lim(const LogMel& spec, const MelParams& p, int n_iter, int sample_rate,
                     std::vector<double>* iter_errors) {
    if (n_iter < 1) throw std::invalid_argument("griffin_lim: n_iter must be >= 1");
    StftConfig c;
    c.win = static_cast<int>(std::lround(p.window_ms * sample_rate / 1000.0));
    c.hop = static_cast<int>(std::lround(p.hop_ms * sample_rate / 1000.0));
    c.n_fft = p.n_fft;
    c.window = hann_window(c.win);
    const int n_bins = p.n_fft / 2 + 1;
    const int64_t t_frames = spec.frames;
    const int64_t n_samples = (t_frames - 1) * c.hop + c.win;

    // mel power -> linear power via clamped right pseudo-inverse Mᵀ(MMᵀ)⁻¹.
    const std::vector<double> fb = mel_filterbank(p, sample_rate);
    const int n_mels = p.n_mels;
    std::vector<double> gram(static_cast<size_t>(n_mels) * n_mels, 0.0);
    for (int i = 0; i < n_mels; ++i)
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int k = 0; k < n_bins; ++k)
                s += fb[static_cast<size_t>(i) * n_bins + k] *
                     fb[static_cast<size_t>(j) * n_bins + k];
            gram[static_cast<size_t>(i) * n_mels + j] = s;
            gram[static_cast<size_t>(j) * n_mels + i] = s;
        }
    // Relative ridge: narrow low filters can collapse onto the same FFT bin,
    // making the Gram singular. The ridge caps the pseudo-inverse gain at
    // 1/(2*sqrt(ridge)) so an all-floor spectrogram stays near-silent, while
    // perturbing well-conditioned directions by only ~1e-4 relative.
    double trace = 0.0;
    for (int i = 0; i < n_mels; ++i) trace += gram[static_cast<size_t>(i) * n_mels + i];
    const double ridge = 1e-4 * trace / n_mels;
    for (int i = 0; i < n_mels; ++i) gram[static_cast<size_t>(i) * n_mels + i] += ridge;

    std::vector<double> target_mag(t_frames * n_bins, 0.0);
    std::vector<double> mel_power(n_mels);
    for (int64_t t = 0; t < t_frames; ++t) {
        for (int m = 0; m < n_mels; ++m) mel_power[m] = std::exp(spec.at(t, m));
        const std::vector<double> coef = cholesky_solve(gram, n_mels, mel_power);
        for (int k = 0; k < n_bins; ++k) {
            double s = 0.0;
            for (int m = 0; m < n_mels; ++m)
                s += fb[static_cast<size_t>(m) * n_bins + k] * coef[m];
            target_mag[t * n_bins + k] = std::sqrt(std::max(s, 0.0));
        }
    }

    // zero-phase start: complex spectrum equal to the target magnitudes
    std::vector<std::complex<double>> est(t_frames * n_bins);
    for (size_t i = 0; i < est.size(); ++i) est[i] = target_mag[i];

    std::vector<double> x = istft(est, c, t_frames, n_samples);
    for (int it = 0; it < n_iter; ++it) {
        std::vector<std::complex<double>> analyzed = stft(x, c, t_frames);
        if (iter_errors) {
            double err = 0.0;
            for (size_t i = 0; i < analyzed.size(); ++i) {
                const double d = std::abs(analyzed[i]) - target_mag[i];
                err += d * d;
            }
            iter_errors->push_back(std::sqrt(err));
        }
        for (size_t i = 0; i < analyzed.size(); ++i) {
            const double mag = std::abs(analyzed[i]);
            est[i] = mag > 1e-12 ? analyzed[i] / mag * target_mag[i]
                                 : std::complex<double>(target_mag[i], 0.0);
        }
        x = istft(est, c, t_frames, n_samples);
    }

    Waveform out;
    out.sample_rate = sample_rate;
    out.samples = std::move(x);

    // The least-squares inverse divides by the aggregate squared window, which
    // amplifies the few clip-edge samples where the Hann taper is near zero.
    // Those samples carry almost no analysis weight; zero them on output.
    {
        std::vector<double> wsum(n_samples, 0.0);
        for (int64_t t = 0; t < t_frames; ++t)
            for (int i = 0; i < c.win; ++i)
                if (t * c.hop + i < n_samples)
                    wsum[t * c.hop + i] += c.window[i] * c.window[i];
        const double wmax = *std::max_element(wsum.begin(), wsum.end());
        for (int64_t i = 0; i < n_samples; ++i)
            if (wsum[i] < 0.1 * wmax) out.samples[i] = 0.0;
    }

    // Peak-normalize for audibility, but never amplify a near-silent
    // reconstruction (an all-floor spectrogram must stay near-silent).
    double peak = 0.0;
    for (double s : out.samples) peak = std::max(peak, std::abs(s));
    if (peak > 1e-3) {
        const double scale = 0.9 / peak;
        for (double& s : out.samples) s *= scale;
    }
    return out;
}

}  // namespace smae
