/* Copyright 2026 The SMAE Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * C API of the masked-autoencoder audio library. All functions return a
 * status code; on failure smae_last_error() describes the problem for the
 * calling thread. Strings handed out through char** parameters are
 * heap-allocated and must be released with smae_string_free().
 */

#ifndef SMAE_H_
#define SMAE_H_

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum smae_status {
    SMAE_OK = 0,
    /* Contract violations: malformed JSON, unknown names, invalid ratios. */
    SMAE_ERR_CONFIG = 1,
    /* Data/environment failures: unreadable files, non-finite losses. */
    SMAE_ERR_RUNTIME = 2,
} smae_status;

/* Opaque model handle (patch projection + encoder + decoder + heads). */
typedef struct smae_model smae_model;

const char* smae_version(void);

/* Message of the last failing call on this thread ("" if none). */
const char* smae_last_error(void);

void smae_string_free(char* s);

/* ---- model lifecycle ---- */

/* Builds a freshly initialized model. model_config_json selects geometry,
 * encoder/decoder sizes, and head setup; "{}" gives the default
 * configuration. seed drives weight initialization. */
smae_status smae_model_create(const char* model_config_json, uint64_t seed, smae_model** out);

smae_status smae_model_load(const char* ckpt_path, smae_model** out);
smae_status smae_model_save(const smae_model* m, const char* ckpt_path);
void smae_model_free(smae_model* m);

smae_status smae_model_config_json(const smae_model* m, char** json_out);

/* Either output may be NULL. encoder_side counts the parameters a classifier
 * deployment keeps (patch projection, encoder, classifier head). */
smae_status smae_model_param_count(const smae_model* m, int64_t* total, int64_t* encoder_side);

/* ---- training configuration ---- */

/* Training-recipe presets by name: "defaults", "pretrain_as2m",
 * "finetune_as2m", "finetune_as20k", "finetune_esc", "finetune_spc2",
 * "finetune_spc1", "finetune_sid". */
smae_status smae_train_config_preset(const char* name, char** json_out);

/* Parses json_text (unknown keys rejected), applies the loss-kind and range
 * rules (finetune != 0 selects the fine-tuning rules), and returns the fully
 * resolved configuration with every default filled in. */
smae_status smae_train_config_resolve(const char* json_text, int finetune,
                                      char** resolved_json_out);

/* ---- training, evaluation, reconstruction ---- */

/* Masked pre-training over the manifest's train split. objective is one of
 * "reconstruction", "contrastive", "joint". Writes the checkpoint to
 * ckpt_out and a JSONL step log to log_path (either may be NULL to skip).
 * final_loss_out (nullable) receives the last step's total loss. */
smae_status smae_pretrain(smae_model* m, const char* manifest_path,
                          const char* train_config_json, const char* objective,
                          const char* ckpt_out, const char* log_path, uint64_t seed, int workers,
                          double* final_loss_out);

/* Supervised fine-tuning (optionally masked, per the config's mask fields).
 * Evaluates the manifest's eval split after every epoch into the log.
 * report_json_out (nullable) receives the final evaluation report. */
smae_status smae_finetune(smae_model* m, const char* manifest_path,
                          const char* train_config_json, const char* ckpt_out,
                          const char* log_path, uint64_t seed, int workers,
                          char** report_json_out);

/* Evaluation report {"map", "accuracy", "per_class_ap"} over one split. */
smae_status smae_evaluate(const smae_model* m, const char* manifest_path, const char* split,
                          const char* train_config_json, int workers, char** report_json_out);

/* Masks one clip, reconstructs it, and writes
 * {original,masked,restored}.{wav,png} plus plan.json into out_dir.
 * strategy is "unstructured" (uses ratio) or "time"/"freq"/"timefreq"
 * (use ratio_t/ratio_f). full_prediction != 0 replaces visible patches with
 * predictions too; otherwise visible content passes through untouched.
 * train_config_json supplies the normalization statistics. */
smae_status smae_reconstruct(const smae_model* m, const char* wav_path,
                             const char* train_config_json, const char* strategy, double ratio,
                             double ratio_t, double ratio_f, int full_prediction, uint64_t seed,
                             const char* out_dir);

/* ---- datasets, statistics, rendering ---- */

/* Writes a labeled synthetic wav corpus plus manifest.jsonl into dir.
 * kind is "tones" or "mixed"; n_classes in [4, 10]. noise_floor is the
 * additive noise amplitude (0 for clean clips); max_detune the relative
 * per-clip frequency jitter. */
smae_status smae_synth_dataset(const char* dir, const char* kind, int64_t n_classes,
                               int64_t train_per_class, int64_t eval_per_class, double seconds,
                               uint64_t seed, double noise_floor, double max_detune);

/* Mean and population std over all log-mel cells of a manifest split
 * (pre-normalization domain). cells_out (nullable) counts the cells. */
smae_status smae_stats_manifest(const char* manifest_path, const char* split, int64_t n_mels,
                                double* mean_out, double* std_out, int64_t* cells_out);

/* Same accumulation over spectrogram JSON files. */
smae_status smae_stats_spec_files(const char* const* paths, int64_t n_paths, double* mean_out,
                                  double* std_out, int64_t* cells_out);

/* Log-mel of a wav rendered to a fixed-palette PNG. */
smae_status smae_render_wav(const char* wav_path, int64_t n_mels, const char* png_out);

/* Spectrogram JSON ({"frames","bins","values"}) rendered to PNG. */
smae_status smae_render_spec_file(const char* spec_json_path, const char* png_out);

#ifdef __cplusplus
}
#endif

#endif /* SMAE_H_ */
