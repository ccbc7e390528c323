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

#include "smae.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "artifacts.hpp"
#include "dsp.hpp"
#include "image.hpp"
#include "masking.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "rng.hpp"

using nlohmann::json;

struct smae_model {
    smae::AudioMAEModel impl;
};

namespace {

// Stream tags mirroring the training pipeline's conventions: one stream for
// weight initialization, one for per-item draws.
constexpr uint64_t kStreamItem = 0x100;
constexpr uint64_t kStreamInit = 0xC1A55ULL;

thread_local std::string g_last_error;

template <typename Fn>
smae_status guard(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return SMAE_OK;
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return SMAE_ERR_CONFIG;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return SMAE_ERR_CONFIG;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SMAE_ERR_RUNTIME;
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("null argument: ") + what);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::runtime_error("out of memory");
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

smae::TrainConfig parse_train_config(const char* json_text) {
    return smae::TrainConfig::from_json(json::parse(json_text ? json_text : "{}"));
}

// JSONL sink for training logs; discards when no path is given.
std::ofstream open_log(const char* path) {
    std::ofstream log;
    if (path && *path) {
        log.open(path);
        if (!log) throw std::runtime_error(std::string("cannot open log file ") + path);
    }
    return log;
}

int checked_workers(int workers) {
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    return workers;
}

}  // namespace

extern "C" {

const char* smae_version(void) { return "0.1.0"; }

const char* smae_last_error(void) { return g_last_error.c_str(); }

void smae_string_free(char* s) { std::free(s); }

smae_status smae_model_create(const char* model_config_json, uint64_t seed, smae_model** out) {
    return guard([&] {
        require(out != nullptr, "out");
        json j = json::parse(model_config_json && *model_config_json ? model_config_json : "{}");
        smae::ModelConfig cfg =
            j.empty() ? smae::ModelConfig{} : smae::ModelConfig::from_json(j);
        smae::Rng rng = smae::Rng::for_stream(seed, kStreamInit);
        *out = new smae_model{smae::AudioMAEModel(cfg, rng)};
    });
}

smae_status smae_model_load(const char* ckpt_path, smae_model** out) {
    return guard([&] {
        require(ckpt_path != nullptr, "ckpt_path");
        require(out != nullptr, "out");
        *out = new smae_model{smae::AudioMAEModel::load_checkpoint(ckpt_path)};
    });
}

smae_status smae_model_save(const smae_model* m, const char* ckpt_path) {
    return guard([&] {
        require(m != nullptr, "model");
        require(ckpt_path != nullptr, "ckpt_path");
        m->impl.save_checkpoint(ckpt_path);
    });
}

void smae_model_free(smae_model* m) { delete m; }

smae_status smae_model_config_json(const smae_model* m, char** json_out) {
    return guard([&] {
        require(m != nullptr, "model");
        require(json_out != nullptr, "json_out");
        *json_out = dup_string(m->impl.config().to_json().dump());
    });
}

smae_status smae_model_param_count(const smae_model* m, int64_t* total, int64_t* encoder_side) {
    return guard([&] {
        require(m != nullptr, "model");
        if (total) *total = m->impl.parameter_count();
        if (encoder_side) *encoder_side = m->impl.encoder_parameter_count();
    });
}

smae_status smae_train_config_preset(const char* name, char** json_out) {
    return guard([&] {
        require(name != nullptr, "name");
        require(json_out != nullptr, "json_out");
        const std::string n = name;
        smae::TrainConfig cfg;
        if (n == "defaults" || n == "pretrain_as2m") {
            cfg = smae::TrainConfig::pretrain_as2m();
        } else if (n == "finetune_as2m") {
            cfg = smae::TrainConfig::finetune_as2m();
        } else if (n == "finetune_as20k") {
            cfg = smae::TrainConfig::finetune_as20k();
        } else if (n == "finetune_esc") {
            cfg = smae::TrainConfig::finetune_esc();
        } else if (n == "finetune_spc2") {
            cfg = smae::TrainConfig::finetune_spc2();
        } else if (n == "finetune_spc1") {
            cfg = smae::TrainConfig::finetune_spc1();
        } else if (n == "finetune_sid") {
            cfg = smae::TrainConfig::finetune_sid();
        } else {
            throw std::invalid_argument("unknown train-config preset: " + n);
        }
        *json_out = dup_string(cfg.to_json().dump());
    });
}

smae_status smae_train_config_resolve(const char* json_text, int finetune,
                                      char** resolved_json_out) {
    return guard([&] {
        require(resolved_json_out != nullptr, "resolved_json_out");
        auto cfg = parse_train_config(json_text);
        cfg.validate(finetune != 0);
        *resolved_json_out = dup_string(cfg.to_json().dump());
    });
}

smae_status smae_pretrain(smae_model* m, const char* manifest_path,
                          const char* train_config_json, const char* objective,
                          const char* ckpt_out, const char* log_path, uint64_t seed, int workers,
                          double* final_loss_out) {
    return guard([&] {
        require(m != nullptr, "model");
        require(manifest_path != nullptr, "manifest_path");
        auto manifest = smae::load_manifest(manifest_path);
        auto cfg = parse_train_config(train_config_json);
        auto obj = smae::objective_from_name(objective ? objective : "reconstruction");
        std::ofstream log = open_log(log_path);
        auto result = smae::run_pretrain(manifest, cfg, m->impl, obj,
                                         ckpt_out ? ckpt_out : "", log, seed,
                                         checked_workers(workers));
        if (final_loss_out) *final_loss_out = result.final_loss;
    });
}

smae_status smae_finetune(smae_model* m, const char* manifest_path,
                          const char* train_config_json, const char* ckpt_out,
                          const char* log_path, uint64_t seed, int workers,
                          char** report_json_out) {
    return guard([&] {
        require(m != nullptr, "model");
        require(manifest_path != nullptr, "manifest_path");
        auto manifest = smae::load_manifest(manifest_path);
        auto cfg = parse_train_config(train_config_json);
        std::ofstream log = open_log(log_path);
        auto result = smae::run_finetune(manifest, cfg, m->impl, ckpt_out ? ckpt_out : "", log,
                                         seed, checked_workers(workers));
        if (report_json_out) *report_json_out = dup_string(result.final_eval.to_json().dump());
    });
}

smae_status smae_evaluate(const smae_model* m, const char* manifest_path, const char* split,
                          const char* train_config_json, int workers, char** report_json_out) {
    return guard([&] {
        require(m != nullptr, "model");
        require(manifest_path != nullptr, "manifest_path");
        require(report_json_out != nullptr, "report_json_out");
        auto manifest = smae::load_manifest(manifest_path);
        auto records = manifest.split(split ? split : "eval");
        auto cfg = parse_train_config(train_config_json);
        auto report = smae::evaluate(records, cfg, m->impl, checked_workers(workers));
        *report_json_out = dup_string(report.to_json().dump());
    });
}

smae_status smae_reconstruct(const smae_model* m, const char* wav_path,
                             const char* train_config_json, const char* strategy, double ratio,
                             double ratio_t, double ratio_f, int full_prediction, uint64_t seed,
                             const char* out_dir) {
    return guard([&] {
        require(m != nullptr, "model");
        require(wav_path != nullptr, "wav_path");
        require(out_dir != nullptr, "out_dir");
        const std::string strat = strategy ? strategy : "unstructured";
        const auto& grid = m->impl.config().grid;

        smae::MaskPlan plan;
        {
            smae::Rng rng = smae::Rng::for_stream(seed, kStreamItem);
            if (strat == "unstructured") {
                plan = smae::plan_unstructured(grid.n_patches(), ratio, rng);
            } else {
                plan = smae::plan_structured(grid, smae::strategy_from_name(strat), ratio_t,
                                             ratio_f, rng);
            }
        }

        auto cfg = parse_train_config(train_config_json);
        smae::LogMel spec =
            smae::prepare_clip(smae::read_wav_file(wav_path), cfg, grid, nullptr);
        auto triptych = smae::reconstruct_spectrogram(m->impl, spec, plan, full_prediction != 0);

        std::filesystem::create_directories(out_dir);
        smae::write_reconstruction_artifacts(
            out_dir, triptych, {cfg.dataset_mean, cfg.dataset_std});
        std::ofstream plan_file(std::filesystem::path(out_dir) / "plan.json");
        if (!plan_file) throw std::runtime_error("cannot write plan.json");
        plan_file << plan.to_json().dump() << "\n";
    });
}

smae_status smae_synth_dataset(const char* dir, const char* kind, int64_t n_classes,
                               int64_t train_per_class, int64_t eval_per_class, double seconds,
                               uint64_t seed, double noise_floor, double max_detune) {
    return guard([&] {
        require(dir != nullptr, "dir");
        const std::string k = kind ? kind : "tones";
        smae::SynthKind sk;
        if (k == "tones") {
            sk = smae::SynthKind::Tones;
        } else if (k == "mixed") {
            sk = smae::SynthKind::Mixed;
        } else {
            throw std::invalid_argument("unknown synthetic dataset kind: " + k);
        }
        smae::write_synthetic_dataset(dir, sk, n_classes, train_per_class, eval_per_class,
                                      seconds, seed, noise_floor, max_detune);
    });
}

smae_status smae_stats_manifest(const char* manifest_path, const char* split, int64_t n_mels,
                                double* mean_out, double* std_out, int64_t* cells_out) {
    return guard([&] {
        require(manifest_path != nullptr, "manifest_path");
        require(mean_out != nullptr, "mean_out");
        require(std_out != nullptr, "std_out");
        if (n_mels < 1) throw std::invalid_argument("n_mels must be >= 1");
        auto manifest = smae::load_manifest(manifest_path);
        auto records = manifest.split(split ? split : "train");
        if (records.empty()) throw std::runtime_error("stats: split has no records");
        smae::MelParams p;
        p.n_mels = static_cast<int>(n_mels);
        smae::StatsAccumulator acc;
        for (const auto& rec : records) {
            smae::Waveform w = smae::resample_linear(smae::read_wav_file(rec.path), 16000);
            acc.add(smae::log_mel(w, p));
        }
        auto stats = acc.finalize();
        *mean_out = stats.mean;
        *std_out = stats.std;
        if (cells_out) *cells_out = acc.count();
    });
}

smae_status smae_stats_spec_files(const char* const* paths, int64_t n_paths, double* mean_out,
                                  double* std_out, int64_t* cells_out) {
    return guard([&] {
        require(paths != nullptr, "paths");
        require(mean_out != nullptr, "mean_out");
        require(std_out != nullptr, "std_out");
        if (n_paths < 1) throw std::invalid_argument("need at least one spectrogram file");
        smae::StatsAccumulator acc;
        for (int64_t i = 0; i < n_paths; ++i) {
            require(paths[i] != nullptr, "paths[i]");
            acc.add(smae::load_spec_json(paths[i]));
        }
        auto stats = acc.finalize();
        *mean_out = stats.mean;
        *std_out = stats.std;
        if (cells_out) *cells_out = acc.count();
    });
}

smae_status smae_render_wav(const char* wav_path, int64_t n_mels, const char* png_out) {
    return guard([&] {
        require(wav_path != nullptr, "wav_path");
        require(png_out != nullptr, "png_out");
        if (n_mels < 1) throw std::invalid_argument("n_mels must be >= 1");
        smae::MelParams p;
        p.n_mels = static_cast<int>(n_mels);
        smae::Waveform w = smae::resample_linear(smae::read_wav_file(wav_path), 16000);
        smae::write_png(png_out, smae::render_spectrogram(smae::log_mel(w, p)));
    });
}

smae_status smae_render_spec_file(const char* spec_json_path, const char* png_out) {
    return guard([&] {
        require(spec_json_path != nullptr, "spec_json_path");
        require(png_out != nullptr, "png_out");
        smae::write_png(png_out, smae::render_spectrogram(smae::load_spec_json(spec_json_path)));
    });
}

}  // extern "C"
