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

#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace smae {

// Linear warmup from zero to the effective peak lr, then half-cycle cosine
// decay down to min_lr. Steps past the schedule clamp to min_lr.
struct LrSchedule {
    double base_lr = 0.0002;
    int64_t batch_size = 512;
    int64_t warmup_epochs = 3;
    int64_t total_epochs = 32;
    int64_t steps_per_epoch = 1;
    double min_lr = 1e-6;
};

// Linear lr scaling rule: peak lr grows with the batch size.
double effective_lr(double base_lr, int64_t batch_size);

double lr_at_step(const LrSchedule& sched, int64_t global_step);

// AdamW with decoupled weight decay and bias-corrected moments. Moment state
// is keyed per parameter tensor and created lazily on the first step.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.95, double eps = 1e-8,
          double weight_decay = 0.0001);

    // Applies one update using each parameter's accumulated grad buffer.
    // Throws std::runtime_error on a non-finite gradient.
    void step(std::vector<Tensor>& params, double lr);
    void zero_grad(std::vector<Tensor>& params);

    int64_t step_count() const { return step_; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }
    double weight_decay() const { return weight_decay_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t step_ = 0;
    std::unordered_map<const TensorNode*, Moments> state_;
};

}  // namespace smae
