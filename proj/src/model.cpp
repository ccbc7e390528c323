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

#include "model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "container.hpp"

namespace smae {

nlohmann::json ModelConfig::to_json() const {
    return {{"grid",
             {{"patch_t", grid.patch_t},
              {"patch_f", grid.patch_f},
              {"stride_t", grid.stride_t},
              {"stride_f", grid.stride_f},
              {"grid_t", grid.grid_t},
              {"grid_f", grid.grid_f}}},
            {"encoder",
             {{"depth", encoder.depth}, {"dim", encoder.dim}, {"heads", encoder.heads}}},
            {"decoder",
             {{"depth", decoder.depth},
              {"dim", decoder.dim},
              {"heads", decoder.heads},
              {"attention", decoder_attention_name(decoder.attention)},
              {"win_t", decoder.win_t},
              {"win_f", decoder.win_f},
              {"hybrid_global_tail", decoder.hybrid_global_tail}}},
            {"n_classes", n_classes},
            {"drop_path", drop_path},
            {"normalize_targets", normalize_targets},
            {"contrastive_weight", contrastive_weight}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto& g = j.at("grid");
    c.grid.patch_t = g.at("patch_t").get<int64_t>();
    c.grid.patch_f = g.at("patch_f").get<int64_t>();
    c.grid.stride_t = g.at("stride_t").get<int64_t>();
    c.grid.stride_f = g.at("stride_f").get<int64_t>();
    c.grid.grid_t = g.at("grid_t").get<int64_t>();
    c.grid.grid_f = g.at("grid_f").get<int64_t>();
    const auto& e = j.at("encoder");
    c.encoder.depth = e.at("depth").get<int64_t>();
    c.encoder.dim = e.at("dim").get<int64_t>();
    c.encoder.heads = e.at("heads").get<int64_t>();
    const auto& d = j.at("decoder");
    c.decoder.depth = d.at("depth").get<int64_t>();
    c.decoder.dim = d.at("dim").get<int64_t>();
    c.decoder.heads = d.at("heads").get<int64_t>();
    c.decoder.attention = decoder_attention_from_name(d.at("attention").get<std::string>());
    c.decoder.win_t = d.at("win_t").get<int64_t>();
    c.decoder.win_f = d.at("win_f").get<int64_t>();
    c.decoder.hybrid_global_tail = d.at("hybrid_global_tail").get<int64_t>();
    c.n_classes = j.at("n_classes").get<int64_t>();
    c.drop_path = j.at("drop_path").get<double>();
    c.normalize_targets = j.at("normalize_targets").get<bool>();
    c.contrastive_weight = j.at("contrastive_weight").get<double>();
    return c;
}

std::string objective_name(PretrainObjective o) {
    switch (o) {
        case PretrainObjective::Reconstruction: return "reconstruction";
        case PretrainObjective::Contrastive: return "contrastive";
        case PretrainObjective::Joint: return "joint";
    }
    throw std::invalid_argument("objective_name: bad enum value");
}

PretrainObjective objective_from_name(const std::string& name) {
    if (name == "reconstruction" || name == "recon") return PretrainObjective::Reconstruction;
    if (name == "contrastive") return PretrainObjective::Contrastive;
    if (name == "joint") return PretrainObjective::Joint;
    throw std::invalid_argument("unknown pre-training objective '" + name + "'");
}

Tensor infonce_loss(const Tensor& contexts, const Tensor& targets) {
    if (contexts.rank() != 2 || targets.rank() != 2 ||
        contexts.shape() != targets.shape())
        throw std::invalid_argument("infonce_loss: contexts and targets must share an NxD shape");
    const int64_t n = contexts.dim(0);
    Tensor logits = matmul(contexts, transpose(targets));
    Tensor ls = log_softmax(logits);
    std::vector<double> eye(n * n, 0.0);
    for (int64_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    Tensor diag = mul(ls, Tensor::from_values({n, n}, std::move(eye)));
    return mul(sum_all(diag), -1.0 / static_cast<double>(n));
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    if (static_cast<int64_t>(targets.size()) != logits.numel())
        throw std::invalid_argument("bce_with_logits: got " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(logits.numel()) + " logits");
    const int64_t n = logits.numel();
    auto z = logits.values();
    // mean of softplus(z) - z*y, with softplus in its overflow-safe form.
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double softplus =
            z[i] > 0.0 ? z[i] + std::log1p(std::exp(-z[i])) : std::log1p(std::exp(z[i]));
        acc += softplus - z[i] * targets[i];
    }
    Tensor in = logits;
    std::vector<double> y = targets;
    return make_op({1}, {acc / static_cast<double>(n)}, {logits}, [in, y, n](TensorNode& node) {
        const double g = node.grad[0] / static_cast<double>(n);
        auto zi = in.values();
        auto dst = grad_of(*in.node());
        for (int64_t i = 0; i < n; ++i) {
            const double sig = zi[i] > 0.0 ? 1.0 / (1.0 + std::exp(-zi[i]))
                                           : std::exp(zi[i]) / (1.0 + std::exp(zi[i]));
            dst[i] += g * (sig - y[i]);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<double>& targets) {
    if (static_cast<int64_t>(targets.size()) != logits.numel())
        throw std::invalid_argument("cross_entropy: got " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(logits.numel()) + " logits");
    Tensor y = Tensor::from_values(logits.shape(), targets);
    return mul(sum_all(mul(log_softmax(logits), y)), -1.0);
}

Tensor classification_loss(const Tensor& logits, const std::vector<double>& targets,
                           bool multilabel) {
    return multilabel ? bce_with_logits(logits, targets) : cross_entropy(logits, targets);
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

namespace {

BlockWeights init_block(int64_t dim, int64_t heads, double drop_path, Rng& rng) {
    const int64_t hidden = 4 * dim;
    BlockWeights b;
    b.ln1_g = Tensor::full({dim}, 1.0, true);
    b.ln1_b = Tensor::zeros({dim}, true);
    b.attn.heads = heads;
    b.attn.wq = Tensor::truncated_normal({dim, dim}, rng, 0.02, true);
    b.attn.bq = Tensor::zeros({dim}, true);
    b.attn.wk = Tensor::truncated_normal({dim, dim}, rng, 0.02, true);
    b.attn.bk = Tensor::zeros({dim}, true);
    b.attn.wv = Tensor::truncated_normal({dim, dim}, rng, 0.02, true);
    b.attn.bv = Tensor::zeros({dim}, true);
    b.attn.wo = Tensor::truncated_normal({dim, dim}, rng, 0.02, true);
    b.attn.bo = Tensor::zeros({dim}, true);
    b.ln2_g = Tensor::full({dim}, 1.0, true);
    b.ln2_b = Tensor::zeros({dim}, true);
    b.mlp_w1 = Tensor::truncated_normal({dim, hidden}, rng, 0.02, true);
    b.mlp_b1 = Tensor::zeros({hidden}, true);
    b.mlp_w2 = Tensor::truncated_normal({hidden, dim}, rng, 0.02, true);
    b.mlp_b2 = Tensor::zeros({dim}, true);
    b.drop_path = drop_path;
    return b;
}

void block_params(const std::string& prefix, const BlockWeights& b,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
    fn(prefix + ".ln1.g", b.ln1_g);
    fn(prefix + ".ln1.b", b.ln1_b);
    fn(prefix + ".attn.wq", b.attn.wq);
    fn(prefix + ".attn.bq", b.attn.bq);
    fn(prefix + ".attn.wk", b.attn.wk);
    fn(prefix + ".attn.bk", b.attn.bk);
    fn(prefix + ".attn.wv", b.attn.wv);
    fn(prefix + ".attn.bv", b.attn.bv);
    fn(prefix + ".attn.wo", b.attn.wo);
    fn(prefix + ".attn.bo", b.attn.bo);
    fn(prefix + ".ln2.g", b.ln2_g);
    fn(prefix + ".ln2.b", b.ln2_b);
    fn(prefix + ".mlp.w1", b.mlp_w1);
    fn(prefix + ".mlp.b1", b.mlp_b1);
    fn(prefix + ".mlp.w2", b.mlp_w2);
    fn(prefix + ".mlp.b2", b.mlp_b2);
}

}  // namespace

AudioMAEModel::AudioMAEModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.grid.n_patches() < 1)
        throw std::invalid_argument("AudioMAEModel: empty token grid");
    if (cfg.encoder.depth < 1 || cfg.decoder.depth < 1)
        throw std::invalid_argument("AudioMAEModel: encoder and decoder need depth >= 1");
    if (cfg.encoder.heads < 1 || cfg.encoder.dim % cfg.encoder.heads != 0)
        throw std::invalid_argument("AudioMAEModel: encoder heads must divide dim");
    if (cfg.decoder.heads < 1 || cfg.decoder.dim % cfg.decoder.heads != 0)
        throw std::invalid_argument("AudioMAEModel: decoder heads must divide dim");
    if (cfg.n_classes < 0) throw std::invalid_argument("AudioMAEModel: negative class count");
    init_params(rng);
}

void AudioMAEModel::init_params(Rng& rng) {
    const int64_t pd = cfg_.grid.patch_dim();
    const int64_t ed = cfg_.encoder.dim;
    const int64_t dd = cfg_.decoder.dim;

    patch_w_ = Tensor::truncated_normal({pd, ed}, rng, 0.02, true);
    patch_b_ = Tensor::zeros({ed}, true);
    enc_blocks_.clear();
    for (int64_t i = 0; i < cfg_.encoder.depth; ++i)
        enc_blocks_.push_back(init_block(ed, cfg_.encoder.heads, cfg_.drop_path, rng));
    enc_norm_g_ = Tensor::full({ed}, 1.0, true);
    enc_norm_b_ = Tensor::zeros({ed}, true);
    enc_pos_ = sinusoidal_embedding(cfg_.grid, ed);

    adapter_w_ = Tensor::truncated_normal({ed, dd}, rng, 0.02, true);
    adapter_b_ = Tensor::zeros({dd}, true);
    mask_token_ = Tensor::randn({1, dd}, rng, 0.02, true);
    dec_blocks_.clear();
    for (int64_t i = 0; i < cfg_.decoder.depth; ++i)
        dec_blocks_.push_back(init_block(dd, cfg_.decoder.heads, 0.0, rng));
    dec_layouts_ = build_decoder_layouts(cfg_.decoder.depth, cfg_.decoder.attention,
                                         cfg_.decoder.win_t, cfg_.decoder.win_f,
                                         cfg_.decoder.hybrid_global_tail);
    dec_norm_g_ = Tensor::full({dd}, 1.0, true);
    dec_norm_b_ = Tensor::zeros({dd}, true);
    dec_pos_ = sinusoidal_embedding(cfg_.grid, dd);

    recon_w_ = Tensor::truncated_normal({dd, pd}, rng, 0.02, true);
    recon_b_ = Tensor::zeros({pd}, true);
    contrast_w_ = Tensor::truncated_normal({dd, pd}, rng, 0.02, true);
    contrast_b_ = Tensor::zeros({pd}, true);
    if (cfg_.n_classes > 0) {
        cls_w_ = Tensor::truncated_normal({ed, cfg_.n_classes}, rng, 0.02, true);
        cls_b_ = Tensor::zeros({cfg_.n_classes}, true);
    }
}

Tensor AudioMAEModel::patch_tokens(const LogMel& spec) const {
    return embed_patches(patchify(spec, cfg_.grid), patch_w_, patch_b_, enc_pos_);
}

Tensor AudioMAEModel::run_encoder(const Tensor& tokens, Rng* droppath_rng) const {
    Tensor x = tokens;
    for (const BlockWeights& b : enc_blocks_)
        x = transformer_block(x, b, AttentionLayout{}, cfg_.grid, droppath_rng);
    return layer_norm(x, enc_norm_g_, enc_norm_b_);
}

Tensor AudioMAEModel::encode_visible(const Tensor& tokens, const MaskPlan& plan,
                                     Rng* droppath_rng) const {
    return run_encoder(select_visible(tokens, plan), droppath_rng);
}

Tensor AudioMAEModel::encode_all(const Tensor& tokens, Rng* droppath_rng) const {
    if (tokens.rank() != 2 || tokens.dim(0) != cfg_.grid.n_patches())
        throw std::invalid_argument("encode_all: expected " +
                                    std::to_string(cfg_.grid.n_patches()) + " tokens, got " +
                                    shape_str(tokens.shape()));
    return run_encoder(tokens, droppath_rng);
}

Tensor AudioMAEModel::decode_features(const Tensor& latents, const MaskPlan& plan) const {
    Tensor adapted = add(matmul(latents, adapter_w_), adapter_b_);
    Tensor x = restore_full_sequence(adapted, mask_token_, plan, dec_pos_);
    for (size_t i = 0; i < dec_blocks_.size(); ++i)
        x = transformer_block(x, dec_blocks_[i], dec_layouts_[i], cfg_.grid);
    return layer_norm(x, dec_norm_g_, dec_norm_b_);
}

Tensor AudioMAEModel::predict_patches(const Tensor& features) const {
    return add(matmul(features, recon_w_), recon_b_);
}

Tensor AudioMAEModel::decode(const Tensor& latents, const MaskPlan& plan) const {
    return predict_patches(decode_features(latents, plan));
}

Tensor AudioMAEModel::build_targets(const Tensor& target_patches) const {
    if (!cfg_.normalize_targets) return target_patches.detach();
    const int64_t n = target_patches.dim(0), pd = target_patches.dim(1);
    auto src = target_patches.values();
    std::vector<double> out(n * pd);
    for (int64_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int64_t k = 0; k < pd; ++k) mean += src[i * pd + k];
        mean /= static_cast<double>(pd);
        double var = 0.0;
        for (int64_t k = 0; k < pd; ++k) {
            const double d = src[i * pd + k] - mean;
            var += d * d;
        }
        var /= static_cast<double>(pd);
        const double istd = 1.0 / std::sqrt(var + 1e-6);
        for (int64_t k = 0; k < pd; ++k) out[i * pd + k] = (src[i * pd + k] - mean) * istd;
    }
    return Tensor::from_values({n, pd}, std::move(out));
}

Tensor AudioMAEModel::reconstruction_loss(const Tensor& pred, const Tensor& target_patches,
                                          const MaskPlan& plan) const {
    const int64_t n = cfg_.grid.n_patches(), pd = cfg_.grid.patch_dim();
    if (pred.rank() != 2 || pred.dim(0) != n || pred.dim(1) != pd)
        throw std::invalid_argument("reconstruction_loss: predictions must be " +
                                    std::to_string(n) + "x" + std::to_string(pd) + ", got " +
                                    shape_str(pred.shape()));
    if (target_patches.shape() != pred.shape())
        throw std::invalid_argument("reconstruction_loss: target shape mismatch");
    if (plan.n_masked < 1)
        throw std::invalid_argument("reconstruction_loss: plan masks no tokens");
    Tensor targets = build_targets(target_patches);
    Tensor diff = sub(gather_rows(pred, plan.masked_idx), gather_rows(targets, plan.masked_idx));
    return mean_all(mul(diff, diff));
}

Tensor AudioMAEModel::contrastive_loss(const Tensor& features, const Tensor& target_patches,
                                       const MaskPlan& plan) const {
    if (plan.n_masked < 1)
        throw std::invalid_argument("contrastive_loss: plan masks no tokens");
    Tensor contexts =
        add(matmul(gather_rows(features, plan.masked_idx), contrast_w_), contrast_b_);
    Tensor targets = gather_rows(build_targets(target_patches), plan.masked_idx);
    return infonce_loss(contexts, targets);
}

PretrainLosses AudioMAEModel::pretrain_forward(const LogMel& spec, const MaskPlan& plan,
                                               PretrainObjective objective) const {
    if (plan.n_total != cfg_.grid.n_patches())
        throw std::invalid_argument("pretrain_forward: plan covers " +
                                    std::to_string(plan.n_total) + " tokens but the grid has " +
                                    std::to_string(cfg_.grid.n_patches()));
    Tensor patches = patchify(spec, cfg_.grid);
    Tensor tokens = embed_patches(patches, patch_w_, patch_b_, enc_pos_);
    Tensor latents = encode_visible(tokens, plan);
    Tensor features = decode_features(latents, plan);

    PretrainLosses out;
    if (objective != PretrainObjective::Contrastive)
        out.recon = reconstruction_loss(predict_patches(features), patches, plan);
    if (objective != PretrainObjective::Reconstruction)
        out.contrastive = contrastive_loss(features, patches, plan);
    switch (objective) {
        case PretrainObjective::Reconstruction: out.total = out.recon; break;
        case PretrainObjective::Contrastive: out.total = out.contrastive; break;
        case PretrainObjective::Joint:
            out.total = add(out.recon, mul(out.contrastive, cfg_.contrastive_weight));
            break;
    }
    return out;
}

Tensor AudioMAEModel::classify(const LogMel& spec, const MaskPlan* plan,
                               Rng* droppath_rng) const {
    if (cfg_.n_classes < 1)
        throw std::invalid_argument("classify: model has no classifier head");
    Tensor tokens = patch_tokens(spec);
    Tensor encoded = plan ? encode_visible(tokens, *plan, droppath_rng)
                          : encode_all(tokens, droppath_rng);
    Tensor pooled = reshape(mean_rows(encoded), {1, cfg_.encoder.dim});
    return reshape(add(matmul(pooled, cls_w_), cls_b_), {cfg_.n_classes});
}

void AudioMAEModel::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    fn("patch_embed.w", patch_w_);
    fn("patch_embed.b", patch_b_);
    for (size_t i = 0; i < enc_blocks_.size(); ++i)
        block_params("encoder.block" + std::to_string(i), enc_blocks_[i], fn);
    fn("encoder.norm.g", enc_norm_g_);
    fn("encoder.norm.b", enc_norm_b_);
    fn("adapter.w", adapter_w_);
    fn("adapter.b", adapter_b_);
    fn("mask_token", mask_token_);
    for (size_t i = 0; i < dec_blocks_.size(); ++i)
        block_params("decoder.block" + std::to_string(i), dec_blocks_[i], fn);
    fn("decoder.norm.g", dec_norm_g_);
    fn("decoder.norm.b", dec_norm_b_);
    fn("recon_head.w", recon_w_);
    fn("recon_head.b", recon_b_);
    fn("contrast_head.w", contrast_w_);
    fn("contrast_head.b", contrast_b_);
    if (cfg_.n_classes > 0) {
        fn("classifier.w", cls_w_);
        fn("classifier.b", cls_b_);
    }
}

std::vector<std::pair<std::string, Tensor>> AudioMAEModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for_each_param([&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::vector<Tensor> AudioMAEModel::parameters() const {
    std::vector<Tensor> out;
    for_each_param([&](const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
}

int64_t AudioMAEModel::parameter_count() const {
    int64_t n = 0;
    for_each_param([&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

int64_t AudioMAEModel::encoder_parameter_count() const {
    int64_t n = 0;
    for_each_param([&](const std::string& name, const Tensor& t) {
        if (name.rfind("patch_embed.", 0) == 0 || name.rfind("encoder.", 0) == 0 ||
            name.rfind("classifier.", 0) == 0)
            n += t.numel();
    });
    return n;
}

int64_t AudioMAEModel::encoder_parameter_count_analytic(const EncoderConfig& enc,
                                                        int64_t patch_dim, int64_t n_classes) {
    const int64_t d = enc.dim;
    const int64_t per_block = 12 * d * d + 13 * d;  // qkvo + 4d mlp + two norms
    return patch_dim * d + d + enc.depth * per_block + 2 * d + n_classes * (d + 1);
}

void AudioMAEModel::reinit_classifier(int64_t n_classes, Rng& rng) {
    if (n_classes < 1) throw std::invalid_argument("reinit_classifier: need at least one class");
    cfg_.n_classes = n_classes;
    cls_w_ = Tensor::truncated_normal({cfg_.encoder.dim, n_classes}, rng, 0.02, true);
    cls_b_ = Tensor::zeros({n_classes}, true);
}

void AudioMAEModel::set_drop_path(double p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("set_drop_path: need 0 <= p < 1");
    cfg_.drop_path = p;
    for (BlockWeights& b : enc_blocks_) b.drop_path = p;
}

void AudioMAEModel::save_checkpoint(const std::string& path) const {
    ArrayContainer c;
    c.config = {{"model", cfg_.to_json()}};
    for_each_param(
        [&](const std::string& name, const Tensor& t) { c.put_tensor(name, t); });
    c.save(path);
}

AudioMAEModel AudioMAEModel::load_checkpoint(const std::string& path) {
    ArrayContainer c = ArrayContainer::load(path);
    if (!c.config.contains("model"))
        throw std::runtime_error("load_checkpoint: no model config in " + path);
    AudioMAEModel m;
    m.cfg_ = ModelConfig::from_json(c.config.at("model"));
    Rng scratch(0);  // immediately overwritten below
    m.init_params(scratch);

    const std::vector<std::string> names = c.names();
    std::set<std::string> stored(names.begin(), names.end());
    std::set<std::string> expected;
    m.for_each_param([&](const std::string& name, const Tensor& t) {
        expected.insert(name);
        if (!c.has(name))
            throw std::runtime_error("load_checkpoint: missing array '" + name + "' in " + path);
        if (c.shape_of(name) != t.shape())
            throw std::runtime_error("load_checkpoint: array '" + name + "' has shape " +
                                     shape_str(c.shape_of(name)) + ", expected " +
                                     shape_str(t.shape()));
        std::vector<double> vals = c.get(name);
        Tensor dst = t;  // handles share nodes; write through
        std::copy(vals.begin(), vals.end(), dst.mutable_values().begin());
    });
    for (const std::string& name : stored)
        if (!expected.count(name))
            throw std::runtime_error("load_checkpoint: unexpected array '" + name + "' in " +
                                     path);
    return m;
}

}  // namespace smae
