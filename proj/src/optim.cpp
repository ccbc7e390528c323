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

#include "optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace smae {

double effective_lr(double base_lr, int64_t batch_size) {
    if (batch_size < 1) throw std::invalid_argument("effective_lr: batch_size must be >= 1");
    return base_lr * static_cast<double>(batch_size) / 256.0;
}

double lr_at_step(const LrSchedule& sched, int64_t global_step) {
    if (sched.warmup_epochs < 0 || sched.warmup_epochs > sched.total_epochs)
        throw std::invalid_argument("lr_at_step: need 0 <= warmup_epochs <= total_epochs");
    if (sched.steps_per_epoch < 1)
        throw std::invalid_argument("lr_at_step: steps_per_epoch must be >= 1");
    const double peak = effective_lr(sched.base_lr, sched.batch_size);
    const int64_t warmup_steps = sched.warmup_epochs * sched.steps_per_epoch;
    const int64_t total_steps = sched.total_epochs * sched.steps_per_epoch;
    if (global_step < 0) throw std::invalid_argument("lr_at_step: negative step");
    if (global_step > total_steps) return sched.min_lr;
    if (global_step < warmup_steps)
        return peak * static_cast<double>(global_step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return global_step < total_steps ? peak : sched.min_lr;
    const double t = static_cast<double>(global_step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return sched.min_lr + (peak - sched.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(std::vector<Tensor>& params, double lr) {
    if (lr < 0) throw std::invalid_argument("adamw: negative learning rate");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        auto grad = p.grad();
        if (grad.empty()) continue;  // parameter untouched by this step's graph
        for (double g : grad)
            if (!std::isfinite(g))
                throw std::runtime_error("adamw: non-finite gradient in parameter " +
                                         std::to_string(pi));
        auto& mom = state_[p.node().get()];
        if (mom.m.empty()) {
            mom.m.assign(grad.size(), 0.0);
            mom.v.assign(grad.size(), 0.0);
        }
        auto vals = p.mutable_values();
        for (size_t i = 0; i < grad.size(); ++i) {
            vals[i] -= lr * weight_decay_ * vals[i];  // decoupled decay
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * grad[i];
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            vals[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamW::zero_grad(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace smae
