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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"

namespace smae {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first use during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates contributions into the parents.
    std::function<void(TensorNode&)> backprop;

    bool is_leaf() const { return !backprop; }
};

// Dense n-dimensional f64 tensor with tape-based reverse-mode autodiff.
// Value-semantics handle: copies share the underlying node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Rng& rng, double stddev,
                        bool requires_grad = false);
    static Tensor truncated_normal(Shape shape, Rng& rng, double stddev,
                                   bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
    int64_t dim(size_t axis) const { return node_->shape[axis]; }
    size_t rank() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> values() const { return node_->values; }
    std::span<double> mutable_values() { return node_->values; }
    double item() const;

    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Copy of the values with the graph cut (requires_grad = false).
    Tensor detach() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op(Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorNode&)> backprop);
};

// Per-thread sink for leaf gradients; lets parallel workers run backward over
// a shared parameter set without touching the parameters' own grad buffers.
class GradStore {
public:
    std::span<double> buffer(const TensorNode& node);
    // Adds every buffered gradient into the corresponding node's grad.
    void merge_into_nodes();
    void add(const GradStore& other);
    bool empty() const { return bufs_.empty(); }

private:
    std::unordered_map<TensorNode*, std::vector<double>> bufs_;
};

// Reverse-mode sweep from a scalar loss. Gradients of requires_grad leaves
// accumulate into their grad buffers (or into `store` when given). Repeated
// calls without zero_grad accumulate.
void backward(const Tensor& loss);
void backward(const Tensor& loss, GradStore& store);

// Records a new graph node: forward result `values` of `shape`, with
// `backprop` reading the node's grad and accumulating into the inputs via
// grad_of. Building block for fused ops outside this file.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop);

// Gradient buffer of a node, honoring the active per-thread GradStore sink
// for leaves; for use inside make_op backprop callbacks.
std::span<double> grad_of(TensorNode& node);

// ---------------------------------------------------------------------------
// ops (forward + recorded backward)
// ---------------------------------------------------------------------------

// Elementwise; b must have equal shape or a trailing suffix of a's shape
// (broadcast over the leading dims, e.g. adding a bias row to a matrix).
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }

// 2-D matrix product (m×k)·(k×n) or batched 3-D (b×m×k)·(b×k×n).
Tensor matmul(const Tensor& a, const Tensor& b);

// Swaps the last two axes (2-D or 3-D).
Tensor transpose(const Tensor& a);
// Rearranges the axes of a 3-D tensor.
Tensor permute(const Tensor& a, const std::vector<size_t>& perm);
Tensor reshape(const Tensor& a, Shape shape);

// Row-wise concatenation of 2-D tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Rows of a 2-D tensor at the given indices, in the given order.
Tensor gather_rows(const Tensor& a, std::vector<int64_t> indices);
// Replicates a 1×d row n times.
Tensor tile_rows(const Tensor& row, int64_t n);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Mean over axis 0 of a 2-D tensor: n×d -> {d}.
Tensor mean_rows(const Tensor& a);

// Softmax over the last axis.
Tensor softmax(const Tensor& a);
// Softmax over the last axis with a boolean allowed-pair mask of shape
// rows×cols matching the trailing two axes (broadcast over leading axes).
// Disallowed entries get exactly zero weight. A fully-disallowed row throws.
Tensor masked_softmax(const Tensor& a, const std::vector<uint8_t>& allowed);
// Numerically stable log-softmax over the last axis.
Tensor log_softmax(const Tensor& a);

// Exact erf-based GELU.
Tensor gelu(const Tensor& a);

// Layer normalization over the last axis with affine (gamma, beta) of shape {d}.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

}  // namespace smae
