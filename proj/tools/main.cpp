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
// Command-line front end. All model and pipeline work goes through the C
// API; this file only parses arguments, merges configuration, and writes the
// resolved-config snapshot beside each run's outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smae.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown for argument/configuration problems the core never sees.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Frees C-API strings on scope exit.
struct CStr {
    char* p = nullptr;
    ~CStr() { smae_string_free(p); }
    std::string str() const { return p ? p : ""; }
};

struct ModelHandle {
    smae_model* p = nullptr;
    ~ModelHandle() { smae_model_free(p); }
};

[[noreturn]] void raise_api_error(smae_status st) {
    const std::string msg = smae_last_error();
    if (st == SMAE_ERR_CONFIG) throw ConfigError(msg);
    throw std::runtime_error(msg);
}

void check(smae_status st) {
    if (st != SMAE_OK) raise_api_error(st);
}

int env_workers() {
    const char* v = std::getenv("SMAE_NUM_WORKERS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) {
        throw ConfigError("SMAE_NUM_WORKERS must be a positive integer, got \"" +
                          std::string(v) + "\"");
    }
    return static_cast<int>(n);
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON in ") + path + ": " + e.what());
    }
}

// Per-command masking/augment overrides layered over the --config file.
struct Overrides {
    std::string strategy, noise_domain;
    double ratio = 0, ratio_t = 0, ratio_f = 0;
    bool has_strategy = false, has_noise_domain = false;
    bool has_ratio = false, has_ratio_t = false, has_ratio_f = false;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--strategy", strategy,
                        "Masking strategy: unstructured, time, freq, timefreq")
            ->each([this](const std::string&) { has_strategy = true; });
        cmd->add_option("--ratio", ratio, "Unstructured masking ratio")
            ->each([this](const std::string&) { has_ratio = true; });
        cmd->add_option("--ratio-t,--rt", ratio_t, "Structured time-axis masking ratio")
            ->each([this](const std::string&) { has_ratio_t = true; });
        cmd->add_option("--ratio-f,--rf", ratio_f, "Structured frequency-axis masking ratio")
            ->each([this](const std::string&) { has_ratio_f = true; });
        cmd->add_option("--noise-domain", noise_domain, "Noise-augment domain: wave or spec")
            ->each([this](const std::string&) { has_noise_domain = true; });
    }

    json apply(json cfg) const {
        if (!cfg.is_object()) throw ConfigError("train config must be a JSON object");
        if (has_strategy) cfg["mask_strategy"] = strategy;
        if (has_ratio) cfg["mask_ratio"] = ratio;
        if (has_ratio_t) cfg["mask_ratio_t"] = ratio_t;
        if (has_ratio_f) cfg["mask_ratio_f"] = ratio_f;
        if (has_noise_domain) cfg["noise_domain"] = noise_domain;
        return cfg;
    }
};

// Fills defaults and runs the config rules core-side; returns the full dump.
json resolve_train_config(const json& merged, bool finetune) {
    CStr resolved;
    check(smae_train_config_resolve(merged.dump().c_str(), finetune ? 1 : 0, &resolved.p));
    return json::parse(resolved.str());
}

void write_snapshot(const fs::path& out_dir, const json& snapshot) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "resolved_config.json");
    if (!f) throw std::runtime_error("cannot write resolved_config.json in " + out_dir.string());
    f << snapshot.dump(2) << "\n";
}

ModelHandle load_or_create_model(const std::string& ckpt, const std::string& model_config_path,
                                 uint64_t seed, json* model_cfg_out) {
    ModelHandle model;
    if (!ckpt.empty()) {
        check(smae_model_load(ckpt.c_str(), &model.p));
    } else {
        json mc = model_config_path.empty() ? json::object() : load_json_file(model_config_path);
        check(smae_model_create(mc.dump().c_str(), seed, &model.p));
    }
    CStr cfg_json;
    check(smae_model_config_json(model.p, &cfg_json.p));
    *model_cfg_out = json::parse(cfg_json.str());
    return model;
}

// ---- command implementations -------------------------------------------

struct CommonArgs {
    std::string manifest, config_path, ckpt, model_config, out;
    uint64_t seed = 0;
};

int cmd_pretrain(const CommonArgs& a, const Overrides& ov, const std::string& objective) {
    const int workers = env_workers();
    json file_cfg = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
    json resolved = resolve_train_config(ov.apply(file_cfg), /*finetune=*/false);

    json model_cfg;
    ModelHandle model = load_or_create_model(a.ckpt, a.model_config, a.seed, &model_cfg);

    write_snapshot(a.out, json{{"command", "pretrain"},
                               {"seed", a.seed},
                               {"manifest", a.manifest},
                               {"objective", objective},
                               {"init_checkpoint", a.ckpt},
                               {"train_config", resolved},
                               {"model_config", model_cfg}});

    const auto ckpt_out = (fs::path(a.out) / "model.ckpt").string();
    const auto log_out = (fs::path(a.out) / "train_log.jsonl").string();
    double final_loss = 0.0;
    check(smae_pretrain(model.p, a.manifest.c_str(), resolved.dump().c_str(), objective.c_str(),
                        ckpt_out.c_str(), log_out.c_str(), a.seed, workers, &final_loss));
    std::cout << "pretrain done: final loss " << final_loss << "\n"
              << "checkpoint: " << ckpt_out << "\n";
    return 0;
}

int cmd_finetune(const CommonArgs& a, const Overrides& ov) {
    const int workers = env_workers();
    json file_cfg = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
    json resolved = resolve_train_config(ov.apply(file_cfg), /*finetune=*/true);

    json model_cfg;
    ModelHandle model = load_or_create_model(a.ckpt, a.model_config, a.seed, &model_cfg);

    write_snapshot(a.out, json{{"command", "finetune"},
                               {"seed", a.seed},
                               {"manifest", a.manifest},
                               {"init_checkpoint", a.ckpt},
                               {"train_config", resolved},
                               {"model_config", model_cfg}});

    const auto ckpt_out = (fs::path(a.out) / "model.ckpt").string();
    const auto log_out = (fs::path(a.out) / "train_log.jsonl").string();
    CStr report;
    check(smae_finetune(model.p, a.manifest.c_str(), resolved.dump().c_str(), ckpt_out.c_str(),
                        log_out.c_str(), a.seed, workers, &report.p));

    std::ofstream rf(fs::path(a.out) / "report.json");
    if (!rf) throw std::runtime_error("cannot write report.json");
    rf << report.str() << "\n";
    json rep = json::parse(report.str());
    std::cout << "finetune done: map " << rep["map"] << " accuracy " << rep["accuracy"] << "\n"
              << "checkpoint: " << ckpt_out << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& split) {
    const int workers = env_workers();
    json file_cfg = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
    json resolved = resolve_train_config(file_cfg, /*finetune=*/true);

    json model_cfg;
    ModelHandle model = load_or_create_model(a.ckpt, "", a.seed, &model_cfg);

    write_snapshot(a.out, json{{"command", "eval"},
                               {"seed", a.seed},
                               {"manifest", a.manifest},
                               {"split", split},
                               {"checkpoint", a.ckpt},
                               {"train_config", resolved},
                               {"model_config", model_cfg}});

    CStr report;
    check(smae_evaluate(model.p, a.manifest.c_str(), split.c_str(), resolved.dump().c_str(),
                        workers, &report.p));
    std::ofstream rf(fs::path(a.out) / "report.json");
    if (!rf) throw std::runtime_error("cannot write report.json");
    rf << report.str() << "\n";
    json rep = json::parse(report.str());
    std::cout << "eval: map " << rep["map"] << " accuracy " << rep["accuracy"] << "\n";
    return 0;
}

int cmd_reconstruct(const CommonArgs& a, const Overrides& ov, const std::string& in_wav,
                    bool full_prediction) {
    json file_cfg = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
    json resolved = resolve_train_config(file_cfg, /*finetune=*/false);

    json model_cfg;
    ModelHandle model = load_or_create_model(a.ckpt, "", a.seed, &model_cfg);

    const std::string strategy = ov.has_strategy ? ov.strategy : "unstructured";
    const double ratio = ov.has_ratio ? ov.ratio : 0.8;
    const double ratio_t = ov.has_ratio_t ? ov.ratio_t : 0.3;
    const double ratio_f = ov.has_ratio_f ? ov.ratio_f : 0.3;

    write_snapshot(a.out, json{{"command", "reconstruct"},
                               {"seed", a.seed},
                               {"input", in_wav},
                               {"checkpoint", a.ckpt},
                               {"strategy", strategy},
                               {"ratio", ratio},
                               {"ratio_t", ratio_t},
                               {"ratio_f", ratio_f},
                               {"full_prediction", full_prediction},
                               {"train_config", resolved},
                               {"model_config", model_cfg}});

    check(smae_reconstruct(model.p, in_wav.c_str(), resolved.dump().c_str(), strategy.c_str(),
                           ratio, ratio_t, ratio_f, full_prediction ? 1 : 0, a.seed,
                           a.out.c_str()));
    std::cout << "wrote {original,masked,restored}.{wav,png} and plan.json to " << a.out << "\n";
    return 0;
}

int cmd_stats(const CommonArgs& a, const std::string& split, int64_t n_mels,
              const std::vector<std::string>& spec_files) {
    if (a.manifest.empty() == spec_files.empty()) {
        throw ConfigError("stats needs exactly one of --manifest or --spec");
    }
    write_snapshot(a.out, json{{"command", "stats"},
                               {"manifest", a.manifest},
                               {"split", split},
                               {"n_mels", n_mels},
                               {"spec_files", spec_files}});

    double mean = 0, stdv = 0;
    int64_t cells = 0;
    if (!a.manifest.empty()) {
        check(smae_stats_manifest(a.manifest.c_str(), split.c_str(), n_mels, &mean, &stdv,
                                  &cells));
    } else {
        std::vector<const char*> ptrs;
        ptrs.reserve(spec_files.size());
        for (const auto& s : spec_files) ptrs.push_back(s.c_str());
        check(smae_stats_spec_files(ptrs.data(), static_cast<int64_t>(ptrs.size()), &mean, &stdv,
                                    &cells));
    }
    json out{{"mean", mean}, {"std", stdv}, {"cells", cells}};
    std::ofstream f(fs::path(a.out) / "stats.json");
    if (!f) throw std::runtime_error("cannot write stats.json");
    f << out.dump(2) << "\n";
    std::cout << "stats: mean " << mean << " std " << stdv << " over " << cells << " cells\n";
    return 0;
}

int cmd_synth(const CommonArgs& a, const std::string& kind, int64_t classes, int64_t train_pc,
              int64_t eval_pc, double seconds, double noise_floor, double detune) {
    write_snapshot(a.out, json{{"command", "synth"},
                               {"seed", a.seed},
                               {"kind", kind},
                               {"classes", classes},
                               {"train_per_class", train_pc},
                               {"eval_per_class", eval_pc},
                               {"seconds", seconds},
                               {"noise_floor", noise_floor},
                               {"detune", detune}});
    check(smae_synth_dataset(a.out.c_str(), kind.c_str(), classes, train_pc, eval_pc, seconds,
                             a.seed, noise_floor, detune));
    std::cout << "wrote " << classes * (train_pc + eval_pc) << " clips and manifest.jsonl to "
              << a.out << "\n";
    return 0;
}

int cmd_render(const CommonArgs& a, const std::string& input, int64_t n_mels) {
    write_snapshot(a.out,
                   json{{"command", "render"}, {"input", input}, {"n_mels", n_mels}});
    const auto png = (fs::path(a.out) / "render.png").string();
    if (fs::path(input).extension() == ".json") {
        check(smae_render_spec_file(input.c_str(), png.c_str()));
    } else {
        check(smae_render_wav(input.c_str(), n_mels, png.c_str()));
    }
    std::cout << "wrote " << png << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked-autoencoder audio toolkit"};
    app.require_subcommand(1);

    CommonArgs a;
    Overrides ov;
    std::string objective = "reconstruction";
    std::string split = "eval";
    std::string in_path, kind = "tones";
    bool full_prediction = false;
    int64_t n_mels = 128, classes = 4, train_pc = 10, eval_pc = 0;
    double seconds = 1.0, noise_floor = 0.001, detune = 0.02;
    std::vector<std::string> spec_files;

    auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        cmd->add_option("--seed", a.seed, "Seed for all random draws");
        auto* out = cmd->add_option("--out", a.out, "Output directory");
        if (needs_out) out->required();
    };

    auto* pre = app.add_subcommand("pretrain", "Masked pre-training on a manifest");
    pre->add_option("--manifest", a.manifest, "Dataset manifest (JSONL)")->required();
    pre->add_option("--config", a.config_path, "Training config JSON file");
    pre->add_option("--model-config", a.model_config, "Model config JSON file");
    pre->add_option("--ckpt", a.ckpt, "Initial weights (resume pre-training)");
    pre->add_option("--objective", objective, "reconstruction, contrastive, or joint");
    ov.add_flags(pre);
    add_common(pre);

    auto* fin = app.add_subcommand("finetune", "Supervised fine-tuning");
    fin->add_option("--manifest", a.manifest, "Dataset manifest (JSONL)")->required();
    fin->add_option("--config", a.config_path, "Training config JSON file");
    fin->add_option("--model-config", a.model_config, "Model config JSON file");
    fin->add_option("--ckpt", a.ckpt, "Initial weights (pre-trained checkpoint)");
    ov.add_flags(fin);
    add_common(fin);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    ev->add_option("--manifest", a.manifest, "Dataset manifest (JSONL)")->required();
    ev->add_option("--ckpt", a.ckpt, "Checkpoint to evaluate")->required();
    ev->add_option("--config", a.config_path, "Training config JSON file");
    ev->add_option("--split", split, "Manifest split to evaluate");
    add_common(ev);

    auto* rec = app.add_subcommand("reconstruct", "Mask a clip and reconstruct it");
    rec->add_option("--in", in_path, "Input wav")->required();
    rec->add_option("--ckpt", a.ckpt, "Checkpoint")->required();
    rec->add_option("--config", a.config_path, "Training config JSON file");
    rec->add_flag("--full-prediction", full_prediction,
                  "Replace visible patches with predictions too");
    ov.add_flags(rec);
    add_common(rec);

    auto* st = app.add_subcommand("stats", "Dataset log-mel statistics");
    st->add_option("--manifest", a.manifest, "Dataset manifest (JSONL)");
    st->add_option("--spec", spec_files, "Spectrogram JSON files");
    st->add_option("--split", split, "Manifest split")->default_val("train");
    st->add_option("--mels", n_mels, "Mel bins for the analysis");
    add_common(st);

    auto* sy = app.add_subcommand("synth", "Write a synthetic labeled corpus");
    sy->add_option("--kind", kind, "tones or mixed");
    sy->add_option("--classes", classes, "Number of classes (4..10)");
    sy->add_option("--train-per-class", train_pc, "Training clips per class");
    sy->add_option("--eval-per-class", eval_pc, "Eval clips per class");
    sy->add_option("--seconds", seconds, "Clip length in seconds");
    sy->add_option("--noise-floor", noise_floor, "Additive noise amplitude");
    sy->add_option("--detune", detune, "Max relative frequency jitter");
    add_common(sy);

    auto* re = app.add_subcommand("render", "Render a wav or spectrogram JSON to PNG");
    re->add_option("--in", in_path, "Input .wav or spectrogram .json")->required();
    re->add_option("--mels", n_mels, "Mel bins when rendering a wav");
    add_common(re);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(pre)) return cmd_pretrain(a, ov, objective);
        if (app.got_subcommand(fin)) return cmd_finetune(a, ov);
        if (app.got_subcommand(ev)) return cmd_eval(a, split);
        if (app.got_subcommand(rec)) return cmd_reconstruct(a, ov, in_path, full_prediction);
        if (app.got_subcommand(st)) return cmd_stats(a, split, n_mels, spec_files);
        if (app.got_subcommand(sy))
            return cmd_synth(a, kind, classes, train_pc, eval_pc, seconds, noise_floor, detune);
        if (app.got_subcommand(re)) return cmd_render(a, in_path, n_mels);
        std::cerr << "error: no command\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
