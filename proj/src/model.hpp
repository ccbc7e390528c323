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
// The masked-autoencoder model: patch projection, visible-token encoder,
// shifted-window decoder with mask tokens, and the pre-training /
// classification losses.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attention.hpp"
#include "masking.hpp"
#include "patches.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace smae {

struct EncoderConfig {
    int64_t depth = 12;
    int64_t dim = 768;
    int64_t heads = 12;

    static EncoderConfig vit_small() { return {12, 384, 6}; }
    static EncoderConfig vit_base() { return {12, 768, 12}; }
    static EncoderConfig vit_large() { return {24, 1024, 16}; }
};

struct DecoderConfig {
    int64_t depth = 16;
    int64_t dim = 512;
    int64_t heads = 16;
    DecoderAttention attention = DecoderAttention::Local;
    int64_t win_t = 4;
    int64_t win_f = 4;
    int64_t hybrid_global_tail = 4;
};

struct ModelConfig {
    PatchGridSpec grid;
    EncoderConfig encoder;
    DecoderConfig decoder;
    int64_t n_classes = 0;            // 0: no classifier head
    double drop_path = 0.0;           // stochastic depth on encoder blocks
    bool normalize_targets = true;    // per-patch normalization of recon targets
    double contrastive_weight = 0.2;  // alpha in L_r + alpha * L_c

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class PretrainObjective { Reconstruction, Contrastive, Joint };

std::string objective_name(PretrainObjective o);
PretrainObjective objective_from_name(const std::string& name);

// Losses of one pre-training forward pass; tensors are defined() only when
// the objective uses them.
struct PretrainLosses {
    Tensor total;
    Tensor recon;
    Tensor contrastive;
};

// InfoNCE over matched context/target rows: row i of `contexts` must score
// highest against row i of `targets` among all rows (negatives are the other
// rows of the same matrix). Stabilized by row-max subtraction.
Tensor infonce_loss(const Tensor& contexts, const Tensor& targets);

// Numerically stable mean binary cross-entropy with logits.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

// Cross-entropy of a logit vector against a (possibly soft) label vector.
Tensor cross_entropy(const Tensor& logits, const std::vector<double>& targets);

// BCE for multi-label (or mixup-softened) targets, CE otherwise.
Tensor classification_loss(const Tensor& logits, const std::vector<double>& targets,
                           bool multilabel);

class AudioMAEModel {
public:
    AudioMAEModel(const ModelConfig& cfg, Rng& rng);

    const ModelConfig& config() const { return cfg_; }

    // Patch projection + fixed positional rows: n_total x enc.dim tokens.
    Tensor patch_tokens(const LogMel& spec) const;

    // Encoder over the visible subset only (gather, blocks, final norm).
    Tensor encode_visible(const Tensor& tokens, const MaskPlan& plan,
                          Rng* droppath_rng = nullptr) const;
    // Encoder over the full token sequence (classification path).
    Tensor encode_all(const Tensor& tokens, Rng* droppath_rng = nullptr) const;

    // Decoder features over all n_total positions: adapter, mask-token
    // restore with decoder positions, decoder blocks, final norm.
    Tensor decode_features(const Tensor& latents, const MaskPlan& plan) const;
    // Reconstruction head: features -> per-patch value predictions.
    Tensor predict_patches(const Tensor& features) const;
    // decode_features followed by predict_patches.
    Tensor decode(const Tensor& latents, const MaskPlan& plan) const;

    // Per-patch-normalized MSE over masked positions only; visible positions
    // contribute exactly zero (they never enter the reduction).
    Tensor reconstruction_loss(const Tensor& pred, const Tensor& target_patches,
                               const MaskPlan& plan) const;
    // InfoNCE between projected decoder features and targets at masked rows.
    Tensor contrastive_loss(const Tensor& features, const Tensor& target_patches,
                            const MaskPlan& plan) const;

    PretrainLosses pretrain_forward(const LogMel& spec, const MaskPlan& plan,
                                    PretrainObjective objective) const;

    // Mean-pooled encoder features through the classifier head. A plan
    // restricts the encoder to the visible tokens (masked fine-tuning).
    Tensor classify(const LogMel& spec, const MaskPlan* plan = nullptr,
                    Rng* droppath_rng = nullptr) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;
    // Parameters a classifier deployment keeps: patch projection, encoder
    // blocks, encoder norm, classifier head (decoder side excluded).
    int64_t encoder_parameter_count() const;
    static int64_t encoder_parameter_count_analytic(const EncoderConfig& enc, int64_t patch_dim,
                                                    int64_t n_classes);

    // Classifier head reinitialization (label-space changes between stages).
    void reinit_classifier(int64_t n_classes, Rng& rng);

    // Stochastic-depth rate on the encoder blocks (pre-training keeps 0).
    void set_drop_path(double p);

    void save_checkpoint(const std::string& path) const;
    static AudioMAEModel load_checkpoint(const std::string& path);

private:
    AudioMAEModel() = default;
    void init_params(Rng& rng);
    Tensor run_encoder(const Tensor& tokens, Rng* droppath_rng) const;
    // Reconstruction targets: raw patch values, optionally normalized per
    // patch; constant w.r.t. the graph.
    Tensor build_targets(const Tensor& target_patches) const;
    void for_each_param(
        const std::function<void(const std::string&, const Tensor&)>& fn) const;

    ModelConfig cfg_;
    Tensor patch_w_, patch_b_;
    std::vector<BlockWeights> enc_blocks_;
    Tensor enc_norm_g_, enc_norm_b_;
    Tensor enc_pos_;  // fixed
    Tensor adapter_w_, adapter_b_;
    Tensor mask_token_;
    std::vector<BlockWeights> dec_blocks_;
    std::vector<AttentionLayout> dec_layouts_;
    Tensor dec_norm_g_, dec_norm_b_;
    Tensor dec_pos_;  // fixed
    Tensor recon_w_, recon_b_;
    Tensor contrast_w_, contrast_b_;
    Tensor cls_w_, cls_b_;
};

}  // namespace smae
