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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "../src/dsp.hpp"
#include "../src/rng.hpp"

using namespace smae;

namespace {

// Independent quadratic-time DFT used as the FFT/spectrum oracle.
std::vector<std::complex<double>> slow_dft(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t) / n;
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

// Independently coded HTK-triangle filterbank evaluation (same pinned rules:
// mel-domain triangles, nearest-bin fallback for empty rows).
std::vector<double> oracle_filterbank(int n_mels, int n_fft, int sr, double fmin, double fmax) {
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const int n_bins = n_fft / 2 + 1;
    std::vector<double> pts(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        pts[i] = mel(fmin) + (mel(fmax) - mel(fmin)) * i / (n_mels + 1);
    std::vector<double> fb(static_cast<size_t>(n_mels) * n_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        double sum = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            const double mk = mel(k * static_cast<double>(sr) / n_fft);
            double w = 0.0;
            if (mk > pts[m] && mk < pts[m + 2])
                w = mk <= pts[m + 1] ? (mk - pts[m]) / (pts[m + 1] - pts[m])
                                     : (pts[m + 2] - mk) / (pts[m + 2] - pts[m + 1]);
            fb[static_cast<size_t>(m) * n_bins + k] = w;
            sum += w;
        }
        if (sum == 0.0) {
            const int k = std::clamp(
                static_cast<int>(std::lround(hz(pts[m + 1]) / (static_cast<double>(sr) / n_fft))),
                0, n_bins - 1);
            fb[static_cast<size_t>(m) * n_bins + k] = 1.0;
        }
    }
    return fb;
}

Waveform tone(double freq, double amp, double seconds, int sr = 16000) {
    Waveform w;
    w.sample_rate = sr;
    const int64_t n = static_cast<int64_t>(seconds * sr);
    w.samples.resize(n);
    for (int64_t i = 0; i < n; ++i)
        w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / sr);
    return w;
}

std::vector<uint8_t> raw_wav_bytes(int sr, int channels, const std::vector<int16_t>& pcm) {
    std::vector<uint8_t> b;
    auto u32 = [&](uint32_t x) {
        for (int i = 0; i < 4; ++i) b.push_back((x >> (8 * i)) & 0xff);
    };
    auto u16 = [&](uint16_t x) {
        b.push_back(x & 0xff);
        b.push_back((x >> 8) & 0xff);
    };
    const uint32_t data_size = static_cast<uint32_t>(pcm.size() * 2);
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    u32(36 + data_size);
    b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    u32(16);
    u16(1);
    u16(static_cast<uint16_t>(channels));
    u32(static_cast<uint32_t>(sr));
    u32(static_cast<uint32_t>(sr * 2 * channels));
    u16(static_cast<uint16_t>(2 * channels));
    u16(16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    u32(data_size);
    for (int16_t s : pcm) u16(static_cast<uint16_t>(s));
    return b;
}

}  // namespace

TEST_CASE("decode_wav: one second of 16 kHz mono zeros") {
    Waveform w = decode_wav(raw_wav_bytes(16000, 1, std::vector<int16_t>(16000, 0)));
    CHECK(w.sample_rate == 16000);
    REQUIRE(w.samples.size() == 16000);
    for (double s : w.samples) CHECK(s == 0.0);
}

TEST_CASE("decode_wav: opposite stereo channels average to zero") {
    std::vector<int16_t> pcm;
    for (int i = 0; i < 100; ++i) {
        pcm.push_back(16384);   // +0.5
        pcm.push_back(-16384);  // -0.5
    }
    Waveform w = decode_wav(raw_wav_bytes(16000, 2, pcm));
    REQUIRE(w.samples.size() == 100);
    for (double s : w.samples) CHECK(s == 0.0);
}

TEST_CASE("wav round-trip of a -6 dBFS tone stays within one quantization step") {
    Waveform t = tone(440.0, 0.5, 0.25);
    Waveform back = decode_wav(encode_wav(t));
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == t.samples.size());
    for (size_t i = 0; i < t.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - t.samples[i]) <= 1.0 / 32768.0);
}

TEST_CASE("decode_wav rejects malformed input") {
    CHECK_THROWS_AS(decode_wav({1, 2, 3, 4}), std::runtime_error);
    std::vector<uint8_t> not_pcm = raw_wav_bytes(16000, 1, std::vector<int16_t>(10, 0));
    not_pcm[20] = 3;  // format tag -> IEEE float
    CHECK_THROWS_AS(decode_wav(not_pcm), std::runtime_error);
}

TEST_CASE("resample_linear: identity, constant, and ramp-midpoint behavior") {
    Waveform t = tone(100.0, 0.4, 0.1);
    Waveform same = resample_linear(t, 16000);
    CHECK(same.samples == t.samples);

    Waveform c;
    c.sample_rate = 22050;
    c.samples.assign(1000, 0.37);
    Waveform rc = resample_linear(c, 16000);
    for (double s : rc.samples) CHECK(s == doctest::Approx(0.37).epsilon(1e-12));

    Waveform ramp;
    ramp.sample_rate = 8000;
    ramp.samples.resize(800);
    for (size_t i = 0; i < ramp.samples.size(); ++i) ramp.samples[i] = i * 1e-3;
    Waveform up = resample_linear(ramp, 16000);
    REQUIRE(up.samples.size() == 1600);
    for (size_t i = 0; i + 1 < ramp.samples.size(); ++i) {
        CHECK(up.samples[2 * i] == doctest::Approx(ramp.samples[i]).epsilon(1e-12));
        CHECK(up.samples[2 * i + 1] ==
              doctest::Approx((ramp.samples[i] + ramp.samples[i + 1]) / 2).epsilon(1e-12));
    }
}

TEST_CASE("fft matches a quadratic-time DFT and inverts exactly") {
    Rng rng(4);
    std::vector<double> x(512);
    for (auto& v : x) v = rng.normal();
    auto want = slow_dft(x);
    std::vector<std::complex<double>> got(x.begin(), x.end());
    fft_radix2(got, false);
    for (size_t k = 0; k < x.size(); ++k) CHECK(std::abs(got[k] - want[k]) < 1e-8);
    fft_radix2(got, true);
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::abs(got[i].real() - x[i]) < 1e-10);
    std::vector<std::complex<double>> bad(100);
    CHECK_THROWS_AS(fft_radix2(bad, false), std::invalid_argument);
}

TEST_CASE("frame count: ten seconds at 16 kHz gives 998 frames of 128 bins") {
    Waveform w = tone(300.0, 0.2, 10.0);
    LogMel s = log_mel(w, MelParams{});
    CHECK(s.frames == 998);
    CHECK(s.bins == 128);
    CHECK(num_frames(160000, 400, 160) == 998);
    // formula holds across lengths
    for (int64_t n : {400, 401, 559, 560, 561, 16000, 159999, 160000})
        CHECK(num_frames(n, 400, 160) == 1 + (n - 400) / 160);
}

TEST_CASE("log_mel of silence is the log floor everywhere") {
    Waveform w;
    w.samples.assign(16000, 0.0);
    LogMel s = log_mel(w, MelParams{});
    for (double v : s.values) CHECK(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));
}

TEST_CASE("log_mel rejects sub-window input and mentions pad_or_trim") {
    Waveform w;
    w.samples.assign(399, 0.1);
    try {
        log_mel(w, MelParams{});
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("pad_or_trim") != std::string::npos);
    }
}

TEST_CASE("440 Hz tone peaks in the filterbank's peak-response mel bin") {
    Waveform w = tone(440.0, 0.5, 1.0);
    MelParams p;
    LogMel s = log_mel(w, p);

    // Oracle: windowed tone frame -> slow DFT power -> independent filterbank.
    std::vector<double> frame(512, 0.0);
    for (int i = 0; i < 400; ++i) {
        const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / 399.0);
        frame[i] = w.samples[i] * win;
    }
    auto spec = slow_dft(frame);
    std::vector<double> fb = oracle_filterbank(128, 512, 16000, 20.0, 8000.0);
    int want_bin = 0;
    double best = -1.0;
    for (int m = 0; m < 128; ++m) {
        double e = 0.0;
        for (int k = 0; k <= 256; ++k) e += fb[m * 257 + k] * std::norm(spec[k]);
        if (e > best) {
            best = e;
            want_bin = m;
        }
    }

    for (int64_t t = 0; t < s.frames; ++t) {
        int got = 0;
        for (int m = 1; m < 128; ++m)
            if (s.at(t, m) > s.at(t, got)) got = m;
        CHECK(got == want_bin);
    }
}

TEST_CASE("mel filterbank rows are non-negative with positive sums and increasing centers") {
    MelParams p;
    std::vector<double> fb = mel_filterbank(p, 16000);
    const int n_bins = 257;

    // design centers (the m+1'th of the n_mels+2 equally spaced mel points)
    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    std::vector<double> center_hz(p.n_mels);
    for (int m = 0; m < p.n_mels; ++m)
        center_hz[m] =
            hz(mel(p.fmin) + (mel(p.fmax) - mel(p.fmin)) * (m + 1) / (p.n_mels + 1));
    for (int m = 1; m < p.n_mels; ++m) CHECK(center_hz[m] > center_hz[m - 1]);

    double prev_com = -1.0;
    for (int m = 0; m < p.n_mels; ++m) {
        double sum = 0.0, com = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            const double w = fb[m * n_bins + k];
            CHECK(w >= 0.0);
            sum += w;
            com += w * k;
        }
        CHECK(sum > 0.0);
        com /= sum;
        // center of mass never moves backward; strictly forward once filters
        // are wider than the FFT bin spacing (above roughly 1 kHz)
        CHECK(com >= prev_com - 1e-9);
        if (center_hz[m] > 1000.0) CHECK(com > prev_com);
        prev_com = com;
    }
}

TEST_CASE("rolling the waveform by whole hops rolls the frames") {
    Rng rng(8);
    Waveform w;
    w.samples.resize(32000);
    for (auto& s : w.samples) s = 0.3 * rng.normal();
    LogMel base = log_mel(w, MelParams{});

    const int k = 2, hop = 160;
    Waveform rolled;
    rolled.sample_rate = 16000;
    rolled.samples.resize(w.samples.size());
    for (size_t i = 0; i < w.samples.size(); ++i)
        rolled.samples[i] = w.samples[(i + w.samples.size() - k * hop) % w.samples.size()];
    LogMel shifted = log_mel(rolled, MelParams{});

    REQUIRE(shifted.frames == base.frames);
    for (int64_t t = k; t < base.frames - 3; ++t)
        for (int64_t f = 0; f < base.bins; ++f)
            CHECK(shifted.at(t, f) == doctest::Approx(base.at(t - k, f)).epsilon(1e-9));
}

TEST_CASE("pad_or_trim pads 998 to 1024 with zero frames and is identity at target") {
    Waveform w = tone(500.0, 0.3, 10.0);
    LogMel s = normalize(log_mel(w, MelParams{}), DatasetStats{-4.268, 4.569});
    LogMel padded = pad_or_trim(s, 1024);
    CHECK(padded.frames == 1024);
    for (int64_t t = 998; t < 1024; ++t)
        for (int64_t f = 0; f < 128; ++f) CHECK(padded.at(t, f) == 0.0);
    for (int64_t t = 0; t < 998; ++t)
        for (int64_t f = 0; f < 128; ++f) CHECK(padded.at(t, f) == s.at(t, f));

    LogMel same = pad_or_trim(s, 998);
    CHECK(same.values == s.values);

    // five-second clip lands at 498 frames and pads to the 512-frame target
    Waveform w5 = tone(500.0, 0.3, 5.0);
    LogMel s5 = log_mel(w5, MelParams{});
    CHECK(s5.frames == 498);
    CHECK(pad_or_trim(s5, 512).frames == 512);

    LogMel cut = pad_or_trim(s, 100);
    CHECK(cut.frames == 100);
    CHECK(cut.at(99, 7) == s.at(99, 7));
}

TEST_CASE("normalize: dataset-mean cell maps to zero; unit stats are identity") {
    LogMel s;
    s.frames = 1;
    s.bins = 3;
    s.values = {-4.268, 0.0, 1.0};
    LogMel n = normalize(s, DatasetStats{-4.268, 4.569});
    CHECK(n.values[0] == doctest::Approx(0.0).epsilon(1e-15));
    LogMel id = normalize(s, DatasetStats{0.0, 1.0});
    CHECK(id.values == s.values);
    CHECK_THROWS_AS(normalize(s, DatasetStats{0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("normalize then denormalize is the identity") {
    Rng rng(6);
    LogMel s;
    s.frames = 10;
    s.bins = 16;
    s.values.resize(160);
    for (auto& v : s.values) v = rng.normal() * 5 - 4;
    DatasetStats st{-4.268, 4.569};
    LogMel round = denormalize(normalize(s, st), st);
    for (size_t i = 0; i < s.values.size(); ++i)
        CHECK(std::abs(round.values[i] - s.values[i]) < 1e-12);
}

TEST_CASE("estimate_stats: two-point case, degenerate case, and two-pass agreement") {
    StatsAccumulator acc;
    acc.add_value(0.0);
    acc.add_value(2.0);
    DatasetStats st = acc.finalize();
    CHECK(st.mean == doctest::Approx(1.0));
    CHECK(st.std == doctest::Approx(1.0));

    StatsAccumulator degen;
    for (int i = 0; i < 10; ++i) degen.add_value(3.5);
    DatasetStats dst = degen.finalize();
    CHECK(dst.std == 0.0);
    LogMel dummy;
    dummy.frames = 1;
    dummy.bins = 1;
    dummy.values = {1.0};
    CHECK_THROWS_AS(normalize(dummy, dst), std::invalid_argument);

    StatsAccumulator empty;
    CHECK_THROWS_AS(empty.finalize(), std::invalid_argument);

    Rng rng(17);
    std::vector<double> cells(10000);
    for (auto& c : cells) c = rng.normal() * 3.0 - 4.0;
    StatsAccumulator welford;
    for (double c : cells) welford.add_value(c);
    DatasetStats got = welford.finalize();
    double mean = 0.0;
    for (double c : cells) mean += c;
    mean /= cells.size();
    double var = 0.0;
    for (double c : cells) var += (c - mean) * (c - mean);
    var /= cells.size();
    CHECK(std::abs(got.mean - mean) < 1e-9);
    CHECK(std::abs(got.std - std::sqrt(var)) < 1e-9);
}

TEST_CASE("estimate_stats on a normalized split gives mean 0 std 1") {
    Waveform w = tone(650.0, 0.4, 2.0);
    LogMel s = log_mel(w, MelParams{});
    StatsAccumulator acc;
    acc.add(s);
    DatasetStats st = acc.finalize();
    LogMel n = normalize(s, st);
    StatsAccumulator again;
    again.add(n);
    DatasetStats st2 = again.finalize();
    CHECK(std::abs(st2.mean) < 1e-6);
    CHECK(std::abs(st2.std - 1.0) < 1e-6);
}

TEST_CASE("griffin_lim: silence reconstructs to near-silence") {
    LogMel s;
    s.frames = 50;
    s.bins = 128;
    s.values.assign(50 * 128, std::log(1e-10));
    Waveform w = griffin_lim(s, MelParams{}, 8);
    double rms = 0.0;
    for (double x : w.samples) rms += x * x;
    rms = std::sqrt(rms / w.samples.size());
    CHECK(rms < 1e-3);
}

TEST_CASE("griffin_lim: tone spectrogram reconstructs with the right spectral peak") {
    Waveform src = tone(440.0, 0.5, 1.0);
    MelParams p;
    LogMel s = log_mel(src, p);
    Waveform rec = griffin_lim(s, p, 32);
    REQUIRE(rec.samples.size() >= 8192);

    // spectrum of an interior slice; peak must land within one analysis bin
    std::vector<std::complex<double>> buf(8192);
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = rec.samples[4000 + i];
    fft_radix2(buf, false);
    size_t peak = 1;
    for (size_t k = 1; k < buf.size() / 2; ++k)
        if (std::abs(buf[k]) > std::abs(buf[peak])) peak = k;
    const double freq = static_cast<double>(peak) * 16000.0 / buf.size();
    CHECK(std::abs(freq - 440.0) <= 16000.0 / 512.0);
}

TEST_CASE("griffin_lim iterations never increase the magnitude error") {
    Waveform src = tone(523.25, 0.4, 0.5);
    // mix in a second component so the spec is not trivially consistent
    for (size_t i = 0; i < src.samples.size(); ++i)
        src.samples[i] += 0.2 * std::sin(2.0 * std::numbers::pi * 1318.5 * i / 16000.0);
    MelParams p;
    LogMel s = log_mel(src, p);
    std::vector<double> errs;
    griffin_lim(s, p, 24, 16000, &errs);
    REQUIRE(errs.size() == 24);
    for (size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] <= errs[i - 1] + 1e-6);
}
