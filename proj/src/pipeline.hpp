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
// Dataset manifests, class-balanced sampling, the pre-training and
// fine-tuning loops, evaluation metrics, and synthetic desk-scale datasets.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "augment.hpp"
#include "masking.hpp"
#include "model.hpp"

namespace smae {

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

struct ClipRecord {
    std::string path;
    std::vector<int64_t> labels;
    std::string split = "train";
};

struct Manifest {
    std::vector<ClipRecord> records;
    std::vector<std::string> class_names;  // optional; ids may exceed names only if empty

    int64_t n_classes() const;
    std::vector<ClipRecord> split(const std::string& name) const;
};

// JSON-Lines: one {"path", "labels", "split"} record per line, plus an
// optional {"class_names": [...]} metadata line. Relative paths resolve
// against the manifest's directory.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// ---------------------------------------------------------------------------
// weighted sampling
// ---------------------------------------------------------------------------

// w_c = 1000 / (clips containing class c + 0.01)
std::vector<double> class_weights(const std::vector<ClipRecord>& records, int64_t n_classes);

// weight(i) = sum of i's class weights; unlabeled clips get 0 and a warning.
std::vector<double> instance_weights(const std::vector<ClipRecord>& records,
                                     const std::vector<double>& cls_weights,
                                     std::ostream* warnings = nullptr);

// k distinct indices via exponential-sort keys (-log(u)/w, k smallest).
// Zero-weight entries are never chosen.
std::vector<int64_t> weighted_sample_without_replacement(const std::vector<double>& weights,
                                                         int64_t k, Rng& rng);

// Repeats clips of every other class until it reaches half the reference
// class's count (upsampling only; used for the keyword-spotting benchmark's
// oversized "unknown" class).
Manifest balance_classes(const Manifest& manifest, int64_t reference_class);

// ---------------------------------------------------------------------------
// train configuration (one column of the published hyperparameter table)
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string optimizer = "adamw";
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0001;
    double base_lr = 0.0002;
    std::string lr_schedule = "half_cycle_cosine";
    double min_lr = 0.000001;
    double gradient_clipping = 0.0;  // 0: none
    int64_t warmup_epochs = 3;
    int64_t epochs = 32;
    int64_t batch_size = 512;
    bool weighted_sampling = false;
    int64_t weighted_sampling_size = 0;  // instances per epoch when sampling

    bool augment_roll = true;
    double gain_jitter_db = 0.0;
    bool augment_noise = false;
    double noise_snr_db = 20.0;
    std::string noise_domain = "spec";  // "spec" | "wave"
    int64_t specaug_time = 0;
    int64_t specaug_freq = 0;
    double drop_path = 0.0;
    double dropout = 0.0;
    double mixup = 0.0;  // probability of mixing a batch item
    bool multilabel = false;
    std::string loss = "mse";  // "mse" | "bce" | "ce"
    double dataset_mean = -4.268;
    double dataset_std = 4.569;

    std::string mask_strategy = "unstructured";
    double mask_ratio = 0.8;
    double mask_ratio_t = 0.3;
    double mask_ratio_f = 0.3;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    // Enforces the loss-kind rule: multilabel or mixup requires "bce";
    // single-label fine-tuning uses "ce"; pre-training uses "mse".
    void validate(bool finetune) const;

    // Published columns.
    static TrainConfig pretrain_as2m();
    static TrainConfig finetune_as2m();
    static TrainConfig finetune_as20k();
    static TrainConfig finetune_esc();
    static TrainConfig finetune_spc2();
    static TrainConfig finetune_spc1();
    static TrainConfig finetune_sid();
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct EvalReport {
    double map = 0.0;
    double accuracy = 0.0;
    std::vector<double> per_class_ap;  // NaN marks classes without positives

    nlohmann::json to_json() const;
};

// Non-interpolated AP per class (sum of precisions at positive ranks over
// positive count), ties broken by ascending index; classes without positives
// are excluded from the mean. Returns {mAP, per-class AP (NaN if excluded)}.
std::pair<double, std::vector<double>> mean_average_precision(
    const std::vector<std::vector<double>>& scores,
    const std::vector<std::vector<uint8_t>>& labels);

// Fraction of rows whose argmax (ties to the lowest index) hits the label.
double accuracy_score(const std::vector<std::vector<double>>& scores,
                      const std::vector<int64_t>& labels);

// ---------------------------------------------------------------------------
// clip preparation and train loops
// ---------------------------------------------------------------------------

// Spectrogram sized for the model's token grid.
int64_t grid_frames(const PatchGridSpec& grid);
int64_t grid_bins(const PatchGridSpec& grid);

// Waveform -> augmented, normalized, padded log-mel ready for the grid.
// `rng` enables train-time augmentation (roll, jitter, noise); nullptr is the
// deterministic eval path. SpecAugment/mixup are applied at the batch level,
// not here.
LogMel prepare_clip(const Waveform& wav, const TrainConfig& cfg, const PatchGridSpec& grid,
                    Rng* rng);

struct RunResult {
    int64_t steps = 0;
    double final_loss = 0.0;
    EvalReport final_eval;
};

// Masked-autoencoder pre-training over the manifest's train split. Logs one
// JSONL line per step ({"step","lr","l_r"[,"l_c"]}); saves `ckpt_out` at the
// end (and "<ckpt_out>.diag" before halting on a non-finite loss).
RunResult run_pretrain(const Manifest& manifest, const TrainConfig& cfg, AudioMAEModel& model,
                       PretrainObjective objective, const std::string& ckpt_out,
                       std::ostream& log, uint64_t seed, int workers = 1);

// Supervised fine-tuning with per-step masking; evaluates the "eval" split
// after every epoch and logs {"epoch","map","accuracy"} lines.
RunResult run_finetune(const Manifest& manifest, const TrainConfig& cfg, AudioMAEModel& model,
                       const std::string& ckpt_out, std::ostream& log, uint64_t seed,
                       int workers = 1);

EvalReport evaluate(const std::vector<ClipRecord>& records, const TrainConfig& cfg,
                    const AudioMAEModel& model, int workers = 1);

// ---------------------------------------------------------------------------
// synthetic desk-scale datasets
// ---------------------------------------------------------------------------

enum class SynthKind { Tones, Mixed };

// noise_floor is the amplitude of an additive broadband floor; 0 gives a pure
// deterministic signal (apart from the random phase), which an autoencoder
// can drive to near-zero loss. max_detune randomizes the pitch per clip.
Waveform synth_tone(double hz, double amp, double seconds, Rng& rng, int sample_rate = 16000,
                    double noise_floor = 0.001, double max_detune = 0.02);
Waveform synth_chirp(double hz0, double hz1, double amp, double seconds, Rng& rng,
                     int sample_rate = 16000, double noise_floor = 0.001);
Waveform synth_noise(double amp, double seconds, Rng& rng, int sample_rate = 16000);

// Writes WAVs plus manifest.jsonl under `dir` and returns the loaded
// manifest. Tones mode uses log-spaced pure tones per class; Mixed swaps the
// last two classes for a chirp and white noise.
Manifest write_synthetic_dataset(const std::string& dir, SynthKind kind, int64_t n_classes,
                                 int64_t train_per_class, int64_t eval_per_class,
                                 double seconds, uint64_t seed, double noise_floor = 0.001,
                                 double max_detune = 0.02);

}  // namespace smae
