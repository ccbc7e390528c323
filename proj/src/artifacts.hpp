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
// Reconstruction artifacts: masked/restored spectrogram composites and the
// wav/png files derived from them, plus spectrogram JSON round-trip.

#pragma once

#include <string>

#include "dsp.hpp"
#include "masking.hpp"
#include "model.hpp"

namespace smae {

// {"frames": F, "bins": B, "values": [row-major doubles]}
void save_spec_json(const std::string& path, const LogMel& spec);
LogMel load_spec_json(const std::string& path);

// All three spectrograms live in the model-input (normalized) domain.
struct ReconstructionTriptych {
    LogMel original;  // the input, untouched
    LogMel masked;    // masked patches darkened to the spectrogram minimum
    LogMel restored;  // visible patches from the input, predictions at masked
};

// Runs the encode/decode path (no loss) and composites the prediction back
// into the spectrogram. Predicted patches are de-normalized with the input
// patch statistics when the model trains against per-patch-normalized
// targets. With full_prediction, predictions replace visible patches too;
// otherwise visible cells pass through bit-identical. Requires a
// non-overlapping patch grid.
ReconstructionTriptych reconstruct_spectrogram(const AudioMAEModel& model, const LogMel& spec,
                                               const MaskPlan& plan,
                                               bool full_prediction = false);

// Writes {original,masked,restored}.{wav,png} into dir. Spectrograms are
// de-normalized with `stats` first; wavs come from Griffin-Lim, pngs from the
// fixed-palette render.
void write_reconstruction_artifacts(const std::string& dir, const ReconstructionTriptych& t,
                                    const DatasetStats& stats, int griffin_lim_iters = 32);

}  // namespace smae
