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

#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <set>
#include <stdexcept>
#include <thread>

#include "optim.hpp"

namespace smae {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

int64_t Manifest::n_classes() const {
    if (!class_names.empty()) return static_cast<int64_t>(class_names.size());
    int64_t max_id = -1;
    for (const ClipRecord& r : records)
        for (int64_t c : r.labels) max_id = std::max(max_id, c);
    return max_id + 1;
}

std::vector<ClipRecord> Manifest::split(const std::string& name) const {
    std::vector<ClipRecord> out;
    for (const ClipRecord& r : records)
        if (r.split == name) out.push_back(r);
    return out;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    const fs::path base = fs::path(path).parent_path();

    Manifest man;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) +
                                     ": " + e.what());
        }
        if (j.contains("class_names")) {
            man.class_names = j.at("class_names").get<std::vector<std::string>>();
            continue;
        }
        ClipRecord rec;
        try {
            rec.path = j.at("path").get<std::string>();
            rec.labels = j.at("labels").get<std::vector<int64_t>>();
            if (j.contains("split")) rec.split = j.at("split").get<std::string>();
        } catch (const json::exception& e) {
            throw std::runtime_error("load_manifest: " + path + ":" + std::to_string(line_no) +
                                     ": " + e.what());
        }
        if (!fs::path(rec.path).is_absolute()) rec.path = (base / rec.path).string();
        man.records.push_back(std::move(rec));
    }

    const int64_t n_cls = man.n_classes();
    std::set<std::pair<std::string, std::string>> seen;
    for (const ClipRecord& r : man.records) {
        if (!seen.insert({r.split, r.path}).second)
            throw std::runtime_error("load_manifest: duplicate path in split '" + r.split +
                                     "': " + r.path);
        for (int64_t c : r.labels)
            if (c < 0 || c >= n_cls)
                throw std::runtime_error("load_manifest: label " + std::to_string(c) +
                                         " out of range [0, " + std::to_string(n_cls) +
                                         ") for " + r.path);
    }
    return man;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
    if (!manifest.class_names.empty())
        out << json{{"class_names", manifest.class_names}}.dump() << "\n";
    for (const ClipRecord& r : manifest.records)
        out << json{{"labels", r.labels}, {"path", r.path}, {"split", r.split}}.dump() << "\n";
    if (!out) throw std::runtime_error("save_manifest: write failed for " + path);
}

// ---------------------------------------------------------------------------
// weighted sampling
// ---------------------------------------------------------------------------

std::vector<double> class_weights(const std::vector<ClipRecord>& records, int64_t n_classes) {
    if (n_classes < 1) throw std::invalid_argument("class_weights: need n_classes >= 1");
    std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
    for (const ClipRecord& r : records)
        for (int64_t c : r.labels) {
            if (c < 0 || c >= n_classes)
                throw std::invalid_argument("class_weights: label out of range");
            ++counts[static_cast<size_t>(c)];
        }
    std::vector<double> w(static_cast<size_t>(n_classes));
    for (size_t c = 0; c < w.size(); ++c)
        w[c] = 1000.0 / (static_cast<double>(counts[c]) + 0.01);
    return w;
}

std::vector<double> instance_weights(const std::vector<ClipRecord>& records,
                                     const std::vector<double>& cls_weights,
                                     std::ostream* warnings) {
    std::vector<double> w(records.size(), 0.0);
    for (size_t i = 0; i < records.size(); ++i) {
        for (int64_t c : records[i].labels) {
            if (c < 0 || c >= static_cast<int64_t>(cls_weights.size()))
                throw std::invalid_argument("instance_weights: label out of range");
            w[i] += cls_weights[static_cast<size_t>(c)];
        }
        if (w[i] == 0.0 && warnings)
            *warnings << "warning: unlabeled clip excluded from sampling: " << records[i].path
                      << "\n";
    }
    return w;
}

std::vector<int64_t> weighted_sample_without_replacement(const std::vector<double>& weights,
                                                         int64_t k, Rng& rng) {
    if (k < 0) throw std::invalid_argument("weighted_sample: negative k");
    int64_t positive = 0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw std::invalid_argument("weighted_sample: weights must be finite and >= 0");
        if (w > 0.0) ++positive;
    }
    if (k > positive)
        throw std::invalid_argument("weighted_sample: k = " + std::to_string(k) + " exceeds the " +
                                    std::to_string(positive) + " positive-weight instances");
    // Exponential-sort trick: the k smallest -log(u)/w form a weighted
    // without-replacement draw.
    std::vector<std::pair<double, int64_t>> keyed;
    keyed.reserve(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        if (weights[i] > 0.0)
            keyed.emplace_back(-std::log(u) / weights[i], static_cast<int64_t>(i));
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<int64_t> out(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) out[static_cast<size_t>(i)] = keyed[static_cast<size_t>(i)].second;
    return out;
}

Manifest balance_classes(const Manifest& manifest, int64_t reference_class) {
    const int64_t n_cls = manifest.n_classes();
    if (reference_class < 0 || reference_class >= n_cls)
        throw std::invalid_argument("balance_classes: reference class out of range");
    std::vector<std::vector<const ClipRecord*>> by_class(static_cast<size_t>(n_cls));
    Manifest out;
    out.class_names = manifest.class_names;
    out.records = manifest.records;
    for (const ClipRecord& r : manifest.records) {
        if (r.split != "train") continue;
        if (r.labels.size() != 1)
            throw std::invalid_argument("balance_classes: requires single-label records");
        by_class[static_cast<size_t>(r.labels[0])].push_back(&r);
    }
    const int64_t ref_count = static_cast<int64_t>(by_class[static_cast<size_t>(reference_class)].size());
    if (ref_count == 0)
        throw std::invalid_argument("balance_classes: reference class has no train clips");
    const int64_t target = std::llround(0.5 * static_cast<double>(ref_count));
    for (int64_t c = 0; c < n_cls; ++c) {
        if (c == reference_class) continue;
        const auto& clips = by_class[static_cast<size_t>(c)];
        if (clips.empty()) continue;
        // Upsample by cycling; classes already at or above target are left alone.
        int64_t have = static_cast<int64_t>(clips.size());
        for (int64_t i = 0; have < target; ++i, ++have)
            out.records.push_back(*clips[static_cast<size_t>(i % static_cast<int64_t>(clips.size()))]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// train configuration
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Field {
    const char* name;
    T TrainConfig::* ptr;
};

constexpr Field<double> kDoubleFields[] = {
    {"beta1", &TrainConfig::beta1},
    {"beta2", &TrainConfig::beta2},
    {"weight_decay", &TrainConfig::weight_decay},
    {"base_lr", &TrainConfig::base_lr},
    {"min_lr", &TrainConfig::min_lr},
    {"gradient_clipping", &TrainConfig::gradient_clipping},
    {"gain_jitter_db", &TrainConfig::gain_jitter_db},
    {"noise_snr_db", &TrainConfig::noise_snr_db},
    {"drop_path", &TrainConfig::drop_path},
    {"dropout", &TrainConfig::dropout},
    {"mixup", &TrainConfig::mixup},
    {"dataset_mean", &TrainConfig::dataset_mean},
    {"dataset_std", &TrainConfig::dataset_std},
    {"mask_ratio", &TrainConfig::mask_ratio},
    {"mask_ratio_t", &TrainConfig::mask_ratio_t},
    {"mask_ratio_f", &TrainConfig::mask_ratio_f},
};

constexpr Field<int64_t> kIntFields[] = {
    {"warmup_epochs", &TrainConfig::warmup_epochs},
    {"epochs", &TrainConfig::epochs},
    {"batch_size", &TrainConfig::batch_size},
    {"weighted_sampling_size", &TrainConfig::weighted_sampling_size},
    {"specaug_time", &TrainConfig::specaug_time},
    {"specaug_freq", &TrainConfig::specaug_freq},
};

constexpr Field<bool> kBoolFields[] = {
    {"weighted_sampling", &TrainConfig::weighted_sampling},
    {"augment_roll", &TrainConfig::augment_roll},
    {"augment_noise", &TrainConfig::augment_noise},
    {"multilabel", &TrainConfig::multilabel},
};

constexpr Field<std::string> kStringFields[] = {
    {"optimizer", &TrainConfig::optimizer},
    {"lr_schedule", &TrainConfig::lr_schedule},
    {"noise_domain", &TrainConfig::noise_domain},
    {"loss", &TrainConfig::loss},
    {"mask_strategy", &TrainConfig::mask_strategy},
};

}  // namespace

json TrainConfig::to_json() const {
    json j;
    for (const auto& f : kDoubleFields) j[f.name] = this->*f.ptr;
    for (const auto& f : kIntFields) j[f.name] = this->*f.ptr;
    for (const auto& f : kBoolFields) j[f.name] = this->*f.ptr;
    for (const auto& f : kStringFields) j[f.name] = this->*f.ptr;
    return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const auto& f : kDoubleFields)
            if (key == f.name) { cfg.*f.ptr = value.get<double>(); known = true; }
        for (const auto& f : kIntFields)
            if (key == f.name) { cfg.*f.ptr = value.get<int64_t>(); known = true; }
        for (const auto& f : kBoolFields)
            if (key == f.name) { cfg.*f.ptr = value.get<bool>(); known = true; }
        for (const auto& f : kStringFields)
            if (key == f.name) { cfg.*f.ptr = value.get<std::string>(); known = true; }
        if (!known) throw std::invalid_argument("TrainConfig: unknown field '" + key + "'");
    }
    return cfg;
}

void TrainConfig::validate(bool finetune) const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
    if (optimizer != "adamw") fail("unsupported optimizer '" + optimizer + "'");
    if (lr_schedule != "half_cycle_cosine")
        fail("unsupported lr schedule '" + lr_schedule + "'");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
    if (weight_decay < 0.0) fail("negative weight decay");
    if (base_lr <= 0.0) fail("base_lr must be positive");
    if (min_lr < 0.0) fail("negative min_lr");
    if (gradient_clipping != 0.0) fail("gradient clipping is not supported; keep 0 (none)");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs) fail("need 0 <= warmup_epochs <= epochs");
    if (weighted_sampling && weighted_sampling_size < 1)
        fail("weighted sampling needs a positive sampling size");
    if (gain_jitter_db < 0.0 || gain_jitter_db > 6.0) fail("gain_jitter_db must be in [0, 6]");
    if (noise_domain != "spec" && noise_domain != "wave")
        fail("noise_domain must be 'spec' or 'wave'");
    if (specaug_time < 0 || specaug_freq < 0) fail("negative SpecAugment width");
    if (drop_path < 0.0 || drop_path >= 1.0) fail("drop_path must be in [0, 1)");
    if (dropout != 0.0) fail("dropout is not implemented; keep 0");
    if (mixup < 0.0 || mixup > 1.0) fail("mixup probability must be in [0, 1]");
    if (loss != "mse" && loss != "bce" && loss != "ce") fail("loss must be mse, bce, or ce");
    if (dataset_std <= 0.0) fail("dataset_std must be positive");
    strategy_from_name(mask_strategy);  // throws on unknown names
    if (mask_ratio < 0.0 || mask_ratio >= 1.0) fail("mask_ratio must be in [0, 1)");
    if (mask_ratio_t < 0.0 || mask_ratio_t >= 1.0 || mask_ratio_f < 0.0 || mask_ratio_f >= 1.0)
        fail("structured mask ratios must be in [0, 1)");
    if (finetune) {
        const bool soft = multilabel || mixup > 0.0;
        if (soft && loss != "bce") fail("multilabel or mixup targets require the bce loss");
        if (!soft && loss != "ce") fail("hard single-label targets require the ce loss");
    } else {
        if (loss != "mse") fail("pre-training uses the mse loss");
        if (multilabel) fail("pre-training has no labels; multilabel must be false");
    }
}

TrainConfig TrainConfig::pretrain_as2m() { return TrainConfig{}; }

namespace {
TrainConfig finetune_base() {
    TrainConfig c;
    c.base_lr = 0.001;
    c.warmup_epochs = 4;
    c.epochs = 60;
    c.drop_path = 0.1;
    c.loss = "bce";
    c.mask_strategy = "timefreq";
    c.mask_ratio_t = 0.3;
    c.mask_ratio_f = 0.3;
    return c;
}
}  // namespace

TrainConfig TrainConfig::finetune_as2m() {
    TrainConfig c = finetune_base();
    c.base_lr = 0.0002;
    c.warmup_epochs = 20;
    c.epochs = 100;
    c.batch_size = 512;
    c.weighted_sampling = true;
    c.weighted_sampling_size = 200000;
    c.specaug_time = 192;
    c.specaug_freq = 48;
    c.mixup = 0.5;
    c.multilabel = true;
    return c;
}

TrainConfig TrainConfig::finetune_as20k() {
    TrainConfig c = finetune_base();
    c.batch_size = 32;
    c.specaug_time = 192;
    c.specaug_freq = 48;
    c.mixup = 0.5;
    c.multilabel = true;
    return c;
}

TrainConfig TrainConfig::finetune_esc() {
    TrainConfig c = finetune_base();
    c.batch_size = 64;
    c.specaug_time = 96;
    c.specaug_freq = 24;
    c.loss = "ce";
    c.dataset_mean = -6.627;
    c.dataset_std = 5.359;
    return c;
}

TrainConfig TrainConfig::finetune_spc2() {
    TrainConfig c = finetune_base();
    c.batch_size = 256;
    c.augment_noise = true;
    c.specaug_time = 48;
    c.specaug_freq = 48;
    c.mixup = 0.5;
    c.dataset_mean = -6.846;
    c.dataset_std = 5.565;
    return c;
}

TrainConfig TrainConfig::finetune_spc1() {
    TrainConfig c = finetune_spc2();
    c.warmup_epochs = 1;
    c.epochs = 10;
    c.dataset_mean = -6.702;
    c.dataset_std = 5.448;
    return c;
}

TrainConfig TrainConfig::finetune_sid() {
    TrainConfig c = finetune_base();
    c.batch_size = 64;
    c.augment_noise = true;
    c.specaug_time = 192;
    c.specaug_freq = 48;
    c.loss = "ce";
    c.dataset_mean = -6.370;
    c.dataset_std = 3.074;
    return c;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

json EvalReport::to_json() const {
    json per = json::array();
    for (double ap : per_class_ap) {
        if (std::isnan(ap))
            per.push_back(nullptr);
        else
            per.push_back(ap);
    }
    return json{{"accuracy", accuracy}, {"map", map}, {"per_class_ap", per}};
}

std::pair<double, std::vector<double>> mean_average_precision(
    const std::vector<std::vector<double>>& scores,
    const std::vector<std::vector<uint8_t>>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw std::invalid_argument("mean_average_precision: scores/labels size mismatch");
    const size_t n = scores.size();
    const size_t n_cls = scores[0].size();
    if (n_cls == 0) throw std::invalid_argument("mean_average_precision: zero classes");
    for (size_t i = 0; i < n; ++i)
        if (scores[i].size() != n_cls || labels[i].size() != n_cls)
            throw std::invalid_argument("mean_average_precision: ragged rows");

    std::vector<double> per_class(n_cls, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int64_t included = 0;
    std::vector<std::pair<double, size_t>> order(n);
    for (size_t c = 0; c < n_cls; ++c) {
        int64_t n_pos = 0;
        for (size_t i = 0; i < n; ++i) {
            order[i] = {scores[i][c], i};
            n_pos += labels[i][c] != 0;
        }
        if (n_pos == 0) continue;  // class without positives: excluded
        // Descending score; equal scores keep ascending example index.
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        double ap = 0.0;
        int64_t hits = 0;
        for (size_t rank = 0; rank < n; ++rank) {
            if (labels[order[rank].second][c] == 0) continue;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
        per_class[c] = ap / static_cast<double>(n_pos);
        sum += per_class[c];
        ++included;
    }
    if (included == 0)
        throw std::runtime_error("mean_average_precision: no class has a positive example");
    return {sum / static_cast<double>(included), per_class};
}

double accuracy_score(const std::vector<std::vector<double>>& scores,
                      const std::vector<int64_t>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw std::invalid_argument("accuracy_score: scores/labels size mismatch");
    int64_t correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const auto& row = scores[i];
        if (row.empty()) throw std::invalid_argument("accuracy_score: empty score row");
        if (labels[i] < 0 || labels[i] >= static_cast<int64_t>(row.size()))
            throw std::invalid_argument("accuracy_score: label out of range");
        size_t best = 0;
        for (size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;  // ties keep the lowest index
        correct += static_cast<int64_t>(best) == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// clip preparation and train loops
// ---------------------------------------------------------------------------

int64_t grid_frames(const PatchGridSpec& grid) {
    return (grid.grid_t - 1) * grid.stride_t + grid.patch_t;
}

int64_t grid_bins(const PatchGridSpec& grid) {
    return (grid.grid_f - 1) * grid.stride_f + grid.patch_f;
}

LogMel prepare_clip(const Waveform& wav, const TrainConfig& cfg, const PatchGridSpec& grid,
                    Rng* rng) {
    Waveform w = wav.sample_rate == 16000 ? wav : resample_linear(wav, 16000);
    if (rng) {
        if (cfg.augment_roll && !w.samples.empty())
            w = cyclic_roll(w, rng->randint(0, static_cast<int64_t>(w.samples.size())));
        if (cfg.gain_jitter_db > 0.0)
            w = gain_jitter(w, rng->uniform(-cfg.gain_jitter_db, cfg.gain_jitter_db));
        if (cfg.augment_noise && cfg.noise_domain == "wave")
            w = add_noise_snr(w, cfg.noise_snr_db, *rng);
    }
    MelParams mel;
    mel.n_mels = static_cast<int>(grid_bins(grid));
    LogMel spec = log_mel(w, mel);
    spec = normalize(spec, {cfg.dataset_mean, cfg.dataset_std});
    if (rng && cfg.augment_noise && cfg.noise_domain == "spec")
        spec = add_noise_snr(spec, cfg.noise_snr_db, *rng);
    return pad_or_trim(spec, grid_frames(grid));
}

namespace {

// Per-purpose rng stream tags; any fixed distinct values work.
constexpr uint64_t kStreamEpoch = 1;
constexpr uint64_t kStreamItem = 0x100;
constexpr uint64_t kStreamBatch = 0xB0000000ULL;
constexpr uint64_t kStreamInit = 0xC1A55ULL;

MaskPlan draw_plan(const TrainConfig& cfg, const PatchGridSpec& grid, Rng& rng) {
    const MaskStrategy strat = strategy_from_name(cfg.mask_strategy);
    if (strat == MaskStrategy::Unstructured)
        return plan_unstructured(grid.n_patches(), cfg.mask_ratio, rng);
    return plan_structured(grid, strat, cfg.mask_ratio_t, cfg.mask_ratio_f, rng);
}

// The epoch's instance order: a weighted draw when configured, otherwise a
// plain shuffle of the whole split.
std::vector<int64_t> epoch_pool(const std::vector<ClipRecord>& records, const TrainConfig& cfg,
                                const std::vector<double>& weights, uint64_t seed,
                                int64_t epoch) {
    Rng rng = Rng::for_stream(seed, kStreamEpoch, static_cast<uint64_t>(epoch));
    if (cfg.weighted_sampling)
        return weighted_sample_without_replacement(weights, cfg.weighted_sampling_size, rng);
    std::vector<int64_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    rng.shuffle(idx);
    return idx;
}

// Runs fn(i) for i in [0, n) across workers. Item work must not touch shared
// mutable state; results go into per-index slots.
void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (n_threads == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> threads;
    std::exception_ptr error;
    std::mutex error_mu;
    threads.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        threads.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

struct StepOutcome {
    double loss = 0.0;   // batch-mean total
    double recon = 0.0;  // batch-mean components, when defined
    double contrast = 0.0;
    bool has_recon = false;
    bool has_contrast = false;
    std::string bad_clip;  // non-empty: a non-finite loss came from this clip
};

void halt_non_finite(const AudioMAEModel& model, const std::string& ckpt_out, int64_t step,
                     const std::string& clip) {
    std::string diag;
    if (!ckpt_out.empty()) {
        diag = ckpt_out + ".diag";
        model.save_checkpoint(diag);
    }
    throw std::runtime_error("non-finite loss at step " + std::to_string(step) + " (clip " +
                             clip + ")" +
                             (diag.empty() ? "" : "; diagnostic checkpoint: " + diag));
}

}  // namespace

RunResult run_pretrain(const Manifest& manifest, const TrainConfig& cfg, AudioMAEModel& model,
                       PretrainObjective objective, const std::string& ckpt_out,
                       std::ostream& log, uint64_t seed, int workers) {
    cfg.validate(false);
    const std::vector<ClipRecord> records = manifest.split("train");
    if (records.empty()) throw std::runtime_error("run_pretrain: empty train split");
    const PatchGridSpec grid = model.config().grid;

    std::vector<double> weights;
    if (cfg.weighted_sampling)
        weights = instance_weights(records, class_weights(records, manifest.n_classes()), &std::cerr);
    const int64_t pool_size =
        cfg.weighted_sampling ? cfg.weighted_sampling_size : static_cast<int64_t>(records.size());
    const int64_t steps_per_epoch = pool_size / cfg.batch_size;
    if (steps_per_epoch < 1)
        throw std::invalid_argument("run_pretrain: batch_size exceeds the epoch's clip count");

    std::vector<Tensor> params = model.parameters();
    AdamW opt(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    const LrSchedule sched{cfg.base_lr, cfg.batch_size, cfg.warmup_epochs,
                           cfg.epochs,  steps_per_epoch, cfg.min_lr};

    RunResult result;
    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int64_t> pool = epoch_pool(records, cfg, weights, seed, epoch);
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            const double lr = lr_at_step(sched, global_step);
            const int64_t b0 = step * cfg.batch_size;
            const int64_t bsz = cfg.batch_size;
            std::vector<GradStore> stores(static_cast<size_t>(bsz));
            std::vector<StepOutcome> items(static_cast<size_t>(bsz));
            parallel_for(bsz, workers, [&](int64_t s) {
                const int64_t pos = b0 + s;
                const ClipRecord& rec = records[static_cast<size_t>(pool[static_cast<size_t>(pos)])];
                Rng item_rng = Rng::for_stream(seed, kStreamItem + static_cast<uint64_t>(pos),
                                               static_cast<uint64_t>(epoch));
                const LogMel spec = prepare_clip(read_wav_file(rec.path), cfg, grid, &item_rng);
                const MaskPlan plan = draw_plan(cfg, grid, item_rng);
                const PretrainLosses losses = model.pretrain_forward(spec, plan, objective);
                StepOutcome& out = items[static_cast<size_t>(s)];
                out.loss = losses.total.item();
                if (!std::isfinite(out.loss)) {
                    out.bad_clip = rec.path;
                    return;
                }
                if (losses.recon.defined()) {
                    out.recon = losses.recon.item();
                    out.has_recon = true;
                }
                if (losses.contrastive.defined()) {
                    out.contrast = losses.contrastive.item();
                    out.has_contrast = true;
                }
                backward(mul(losses.total, 1.0 / static_cast<double>(bsz)),
                         stores[static_cast<size_t>(s)]);
            });

            StepOutcome batch;
            for (const StepOutcome& it : items) {
                if (!it.bad_clip.empty()) halt_non_finite(model, ckpt_out, global_step, it.bad_clip);
                batch.loss += it.loss / static_cast<double>(bsz);
                batch.recon += it.recon / static_cast<double>(bsz);
                batch.contrast += it.contrast / static_cast<double>(bsz);
                batch.has_recon |= it.has_recon;
                batch.has_contrast |= it.has_contrast;
            }
            for (GradStore& store : stores) store.merge_into_nodes();

            json line{{"lr", lr}, {"step", global_step}};
            if (batch.has_recon) line["l_r"] = batch.recon;
            if (batch.has_contrast) line["l_c"] = batch.contrast;
            log << line.dump() << "\n";

            opt.step(params, lr);
            opt.zero_grad(params);
            result.final_loss = batch.loss;
            ++global_step;
        }
    }
    result.steps = global_step;
    if (!ckpt_out.empty()) model.save_checkpoint(ckpt_out);
    return result;
}

EvalReport evaluate(const std::vector<ClipRecord>& records, const TrainConfig& cfg,
                    const AudioMAEModel& model, int workers) {
    if (records.empty()) throw std::runtime_error("evaluate: no clips");
    const PatchGridSpec grid = model.config().grid;
    const int64_t n_cls = model.config().n_classes;
    if (n_cls < 1) throw std::runtime_error("evaluate: model has no classifier head");

    std::vector<std::vector<double>> scores(records.size());
    std::vector<std::vector<uint8_t>> multi(records.size());
    std::vector<int64_t> hard(records.size(), -1);
    parallel_for(static_cast<int64_t>(records.size()), workers, [&](int64_t i) {
        const ClipRecord& rec = records[static_cast<size_t>(i)];
        const LogMel spec = prepare_clip(read_wav_file(rec.path), cfg, grid, nullptr);
        const Tensor logits = model.classify(spec);
        scores[static_cast<size_t>(i)].assign(logits.values().begin(), logits.values().end());
        auto& hot = multi[static_cast<size_t>(i)];
        hot.assign(static_cast<size_t>(n_cls), 0);
        for (int64_t c : rec.labels) {
            if (c < 0 || c >= n_cls) throw std::runtime_error("evaluate: label out of range");
            hot[static_cast<size_t>(c)] = 1;
        }
        if (!rec.labels.empty()) hard[static_cast<size_t>(i)] = rec.labels[0];
    });

    EvalReport report;
    auto [map, per_class] = mean_average_precision(scores, multi);
    report.map = map;
    report.per_class_ap = std::move(per_class);
    // Single-label accuracy; for multi-label rows an argmax inside the label
    // set counts as a hit.
    int64_t correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        size_t best = 0;
        for (size_t c = 1; c < scores[i].size(); ++c)
            if (scores[i][c] > scores[i][best]) best = c;
        correct += multi[i][best] != 0;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
    return report;
}

RunResult run_finetune(const Manifest& manifest, const TrainConfig& cfg, AudioMAEModel& model,
                       const std::string& ckpt_out, std::ostream& log, uint64_t seed,
                       int workers) {
    cfg.validate(true);
    const std::vector<ClipRecord> records = manifest.split("train");
    if (records.empty()) throw std::runtime_error("run_finetune: empty train split");
    const std::vector<ClipRecord> eval_records = manifest.split("eval");
    const PatchGridSpec grid = model.config().grid;

    const int64_t n_cls = manifest.n_classes();
    if (n_cls < 2) throw std::runtime_error("run_finetune: need at least two classes");
    if (model.config().n_classes != n_cls) {
        std::cerr << "warning: classifier head has " << model.config().n_classes
                  << " classes, data has " << n_cls << "; reinitializing head\n";
        Rng head_rng = Rng::for_stream(seed, kStreamInit);
        model.reinit_classifier(n_cls, head_rng);
    }
    model.set_drop_path(cfg.drop_path);
    if (cfg.loss == "ce")
        for (const ClipRecord& r : records)
            if (r.labels.size() != 1)
                throw std::runtime_error("run_finetune: ce loss requires single-label records");

    std::vector<double> weights;
    if (cfg.weighted_sampling)
        weights = instance_weights(records, class_weights(records, n_cls), &std::cerr);
    const int64_t pool_size =
        cfg.weighted_sampling ? cfg.weighted_sampling_size : static_cast<int64_t>(records.size());
    const int64_t steps_per_epoch = pool_size / cfg.batch_size;
    if (steps_per_epoch < 1)
        throw std::invalid_argument("run_finetune: batch_size exceeds the epoch's clip count");

    // The decoder is discarded for classification: only the patch projection,
    // encoder, and classifier head train.
    std::vector<Tensor> params;
    for (auto& [name, t] : model.named_parameters())
        if (name.rfind("patch_embed.", 0) == 0 || name.rfind("encoder.", 0) == 0 ||
            name.rfind("classifier.", 0) == 0)
            params.push_back(t);
    AdamW opt(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    const LrSchedule sched{cfg.base_lr, cfg.batch_size, cfg.warmup_epochs,
                           cfg.epochs,  steps_per_epoch, cfg.min_lr};
    const bool use_bce = cfg.loss == "bce";

    RunResult result;
    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int64_t> pool = epoch_pool(records, cfg, weights, seed, epoch);
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            const double lr = lr_at_step(sched, global_step);
            const int64_t b0 = step * cfg.batch_size;
            const int64_t bsz = cfg.batch_size;

            // Load and waveform-augment the whole batch first: mixup partners
            // must come from the unmixed snapshot.
            std::vector<LogMel> specs(static_cast<size_t>(bsz));
            std::vector<std::vector<double>> targets(static_cast<size_t>(bsz));
            std::vector<Rng> item_rngs;
            item_rngs.reserve(static_cast<size_t>(bsz));
            for (int64_t s = 0; s < bsz; ++s)
                item_rngs.push_back(Rng::for_stream(
                    seed, kStreamItem + static_cast<uint64_t>(b0 + s), static_cast<uint64_t>(epoch)));
            parallel_for(bsz, workers, [&](int64_t s) {
                const ClipRecord& rec =
                    records[static_cast<size_t>(pool[static_cast<size_t>(b0 + s)])];
                specs[static_cast<size_t>(s)] =
                    prepare_clip(read_wav_file(rec.path), cfg, grid, &item_rngs[static_cast<size_t>(s)]);
                auto& y = targets[static_cast<size_t>(s)];
                y.assign(static_cast<size_t>(n_cls), 0.0);
                for (int64_t c : rec.labels) y[static_cast<size_t>(c)] = 1.0;
            });

            if (cfg.mixup > 0.0) {
                Rng batch_rng =
                    Rng::for_stream(seed, kStreamBatch + static_cast<uint64_t>(global_step));
                const std::vector<LogMel> snapshot = specs;
                const std::vector<std::vector<double>> snapshot_y = targets;
                for (int64_t s = 0; s < bsz; ++s) {
                    if (batch_rng.uniform() >= cfg.mixup) continue;
                    const int64_t j = batch_rng.randint(0, bsz);
                    const double lam = batch_rng.uniform();
                    auto [mixed, y] =
                        mixup(snapshot[static_cast<size_t>(s)], snapshot_y[static_cast<size_t>(s)],
                              snapshot[static_cast<size_t>(j)], snapshot_y[static_cast<size_t>(j)],
                              lam);
                    specs[static_cast<size_t>(s)] = std::move(mixed);
                    targets[static_cast<size_t>(s)] = std::move(y);
                }
            }

            std::vector<GradStore> stores(static_cast<size_t>(bsz));
            std::vector<StepOutcome> items(static_cast<size_t>(bsz));
            parallel_for(bsz, workers, [&](int64_t s) {
                Rng& rng = item_rngs[static_cast<size_t>(s)];
                LogMel spec = specs[static_cast<size_t>(s)];
                if (cfg.specaug_time > 0 || cfg.specaug_freq > 0)
                    spec = spec_augment(spec, cfg.specaug_time, cfg.specaug_freq, rng);
                const MaskPlan plan = draw_plan(cfg, grid, rng);
                const Tensor logits = model.classify(spec, &plan, &rng);
                const Tensor loss =
                    classification_loss(logits, targets[static_cast<size_t>(s)], use_bce);
                StepOutcome& out = items[static_cast<size_t>(s)];
                out.loss = loss.item();
                if (!std::isfinite(out.loss)) {
                    out.bad_clip =
                        records[static_cast<size_t>(pool[static_cast<size_t>(b0 + s)])].path;
                    return;
                }
                backward(mul(loss, 1.0 / static_cast<double>(bsz)), stores[static_cast<size_t>(s)]);
            });

            double batch_loss = 0.0;
            for (const StepOutcome& it : items) {
                if (!it.bad_clip.empty()) halt_non_finite(model, ckpt_out, global_step, it.bad_clip);
                batch_loss += it.loss / static_cast<double>(bsz);
            }
            for (GradStore& store : stores) store.merge_into_nodes();

            log << json{{"loss", batch_loss}, {"lr", lr}, {"step", global_step}}.dump() << "\n";
            opt.step(params, lr);
            opt.zero_grad(params);
            result.final_loss = batch_loss;
            ++global_step;
        }
        if (!eval_records.empty()) {
            result.final_eval = evaluate(eval_records, cfg, model, workers);
            json line = result.final_eval.to_json();
            line.erase("per_class_ap");
            line["epoch"] = epoch;
            log << line.dump() << "\n";
        }
    }
    result.steps = global_step;
    if (!ckpt_out.empty()) model.save_checkpoint(ckpt_out);
    return result;
}

// ---------------------------------------------------------------------------
// synthetic datasets
// ---------------------------------------------------------------------------

Waveform synth_tone(double hz, double amp, double seconds, Rng& rng, int sample_rate,
                    double noise_floor, double max_detune) {
    if (hz <= 0.0 || seconds <= 0.0 || amp <= 0.0)
        throw std::invalid_argument("synth_tone: hz, amp, seconds must be positive");
    const int64_t n = static_cast<int64_t>(seconds * sample_rate);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double detune =
        max_detune > 0.0 ? 1.0 + rng.uniform(-max_detune, max_detune) : 1.0;
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        w.samples[static_cast<size_t>(i)] =
            amp * std::sin(2.0 * std::numbers::pi * hz * detune * static_cast<double>(i) /
                               sample_rate +
                           phase) +
            (noise_floor > 0.0 ? noise_floor * rng.normal() : 0.0);
    return w;
}

Waveform synth_chirp(double hz0, double hz1, double amp, double seconds, Rng& rng,
                     int sample_rate, double noise_floor) {
    if (hz0 <= 0.0 || hz1 <= 0.0 || seconds <= 0.0 || amp <= 0.0)
        throw std::invalid_argument("synth_chirp: frequencies, amp, seconds must be positive");
    const int64_t n = static_cast<int64_t>(seconds * sample_rate);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        // Linear sweep hz0 -> hz1: instantaneous phase integral.
        const double arg =
            2.0 * std::numbers::pi * (hz0 * t + 0.5 * (hz1 - hz0) * t * t / seconds);
        w.samples[static_cast<size_t>(i)] =
            amp * std::sin(arg + phase) + (noise_floor > 0.0 ? noise_floor * rng.normal() : 0.0);
    }
    return w;
}

Waveform synth_noise(double amp, double seconds, Rng& rng, int sample_rate) {
    if (seconds <= 0.0 || amp <= 0.0)
        throw std::invalid_argument("synth_noise: amp and seconds must be positive");
    const int64_t n = static_cast<int64_t>(seconds * sample_rate);
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        w.samples[static_cast<size_t>(i)] =
            std::clamp(amp * rng.normal() / 3.0, -1.0, 1.0);
    return w;
}

Manifest write_synthetic_dataset(const std::string& dir, SynthKind kind, int64_t n_classes,
                                 int64_t train_per_class, int64_t eval_per_class,
                                 double seconds, uint64_t seed, double noise_floor,
                                 double max_detune) {
    if (n_classes < 4 || n_classes > 10)
        throw std::invalid_argument("write_synthetic_dataset: n_classes must be in [4, 10]");
    if (train_per_class < 1 || eval_per_class < 0)
        throw std::invalid_argument("write_synthetic_dataset: bad clip counts");
    fs::create_directories(dir);

    // Log-spaced class frequencies across [300, 3600] Hz.
    auto class_hz = [&](int64_t c) {
        return 300.0 * std::pow(12.0, static_cast<double>(c) / static_cast<double>(n_classes - 1));
    };
    auto make_clip = [&](int64_t cls, Rng& rng) {
        const double amp = rng.uniform(0.25, 0.5);
        if (kind == SynthKind::Mixed && cls == n_classes - 1)
            return synth_noise(amp, seconds, rng);
        if (kind == SynthKind::Mixed && cls == n_classes - 2) {
            const double hz = class_hz(cls);
            return synth_chirp(hz * 0.5, hz * 2.0, amp, seconds, rng, 16000, noise_floor);
        }
        return synth_tone(class_hz(cls), amp, seconds, rng, 16000, noise_floor, max_detune);
    };

    Manifest man;
    for (int64_t c = 0; c < n_classes; ++c)
        man.class_names.push_back("class_" + std::to_string(c));
    char name[64];
    for (int64_t c = 0; c < n_classes; ++c) {
        for (int64_t i = 0; i < train_per_class + eval_per_class; ++i) {
            const bool is_eval = i >= train_per_class;
            Rng rng = Rng::for_stream(seed, static_cast<uint64_t>(c) * 1000003ULL +
                                                static_cast<uint64_t>(i));
            std::snprintf(name, sizeof(name), "%s_c%02d_%04d.wav", is_eval ? "eval" : "train",
                          static_cast<int>(c), static_cast<int>(i));
            write_wav_file((fs::path(dir) / name).string(), make_clip(c, rng));
            man.records.push_back({name, {c}, is_eval ? "eval" : "train"});
        }
    }
    save_manifest(man, (fs::path(dir) / "manifest.jsonl").string());
    return load_manifest((fs::path(dir) / "manifest.jsonl").string());
}

}  // namespace smae
