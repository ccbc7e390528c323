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

#include "tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace smae {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("shape has non-positive dim " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

static std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values,
                                             bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop) {
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    auto node = make_node(std::move(shape), std::move(values), rg);
    if (rg) {
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) node->parents.push_back(t.node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * stddev;
    return Tensor(make_node(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::truncated_normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    int64_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.truncated_normal(stddev);
    return Tensor(make_node(std::move(shape), std::move(v), requires_grad));
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
}

Tensor Tensor::detach() const {
    return Tensor(make_node(node_->shape, node_->values, false));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {
thread_local GradStore* g_sink = nullptr;
}  // namespace

std::span<double> GradStore::buffer(const TensorNode& node) {
    auto* key = const_cast<TensorNode*>(&node);
    auto it = bufs_.find(key);
    if (it == bufs_.end())
        it = bufs_.emplace(key, std::vector<double>(node.values.size(), 0.0)).first;
    return it->second;
}

void GradStore::merge_into_nodes() {
    for (auto& [node, buf] : bufs_) {
        if (node->grad.size() != node->values.size())
            node->grad.assign(node->values.size(), 0.0);
        for (size_t i = 0; i < buf.size(); ++i) node->grad[i] += buf[i];
    }
}

void GradStore::add(const GradStore& other) {
    for (const auto& [node, buf] : other.bufs_) {
        auto dst = buffer(*node);
        for (size_t i = 0; i < buf.size(); ++i) dst[i] += buf[i];
    }
}

// Gradient buffer for a node, honoring the active per-thread sink for leaves.
std::span<double> grad_of(TensorNode& node) {
    if (g_sink && node.is_leaf()) return g_sink->buffer(node);
    if (node.grad.size() != node.values.size()) node.grad.assign(node.values.size(), 0.0);
    return node.grad;
}

static void backward_impl(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Reverse post-order DFS: every node appears before the nodes it consumes.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Working grads of interior nodes are transient per sweep; only leaves
    // accumulate across repeated backward calls.
    for (TensorNode* node : order)
        if (!node->is_leaf()) node->grad.assign(node->values.size(), 0.0);

    grad_of(*loss.node())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

void backward(const Tensor& loss) { backward_impl(loss); }

void backward(const Tensor& loss, GradStore& store) {
    g_sink = &store;
    try {
        backward_impl(loss);
    } catch (...) {
        g_sink = nullptr;
        throw;
    }
    g_sink = nullptr;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

// Validates that b's shape equals a's or a trailing suffix of it; returns the
// number of times b tiles over a.
static int64_t broadcast_reps(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size())
        throw std::invalid_argument(std::string(op) + ": shape " + shape_str(sb) +
                                    " does not broadcast to " + shape_str(sa));
    for (size_t i = 0; i < sb.size(); ++i) {
        if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
            throw std::invalid_argument(std::string(op) + ": shape " + shape_str(sb) +
                                        " does not broadcast to " + shape_str(sa));
    }
    return a.numel() / b.numel();
}

template <typename Fwd>
static Tensor binary_suffix_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                               std::function<void(TensorNode&, TensorNode&, TensorNode&)> back) {
    broadcast_reps(a, b, name);
    const int64_t nb = b.numel();
    std::vector<double> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = fwd(av[i], bv[i % nb]);
    return make_op(a.shape(), std::move(out), {a, b}, [back](TensorNode& n) {
        back(n, *n.parents[0], *n.parents[1]);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_suffix_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](TensorNode& n, TensorNode& pa, TensorNode& pb) {
            const int64_t nb = static_cast<int64_t>(pb.values.size());
            if (pa.requires_grad) {
                auto ga = grad_of(pa);
                for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                auto gb = grad_of(pb);
                for (int64_t i = 0; i < static_cast<int64_t>(n.grad.size()); ++i)
                    gb[i % nb] += n.grad[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_suffix_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](TensorNode& n, TensorNode& pa, TensorNode& pb) {
            const int64_t nb = static_cast<int64_t>(pb.values.size());
            if (pa.requires_grad) {
                auto ga = grad_of(pa);
                for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                auto gb = grad_of(pb);
                for (int64_t i = 0; i < static_cast<int64_t>(n.grad.size()); ++i)
                    gb[i % nb] -= n.grad[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_suffix_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](TensorNode& n, TensorNode& pa, TensorNode& pb) {
            const int64_t nb = static_cast<int64_t>(pb.values.size());
            if (pa.requires_grad) {
                auto ga = grad_of(pa);
                for (size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * pb.values[i % nb];
            }
            if (pb.requires_grad) {
                auto gb = grad_of(pb);
                for (int64_t i = 0; i < static_cast<int64_t>(n.grad.size()); ++i)
                    gb[i % nb] += n.grad[i] * pa.values[i];
            }
        });
}

Tensor add(const Tensor& a, double b) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& x : out) x += b;
    return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
}

Tensor mul(const Tensor& a, double b) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& x : out) x *= b;
    return make_op(a.shape(), std::move(out), {a}, [b](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * b;
    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// C[m×n] += A[m×k]·B[k×n], ikj loop order.
static void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k,
                     int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double aval = arow[p];
            if (aval == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
        }
    }
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
static void gemm_bt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k,
                        int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k×n] += A[m×k]ᵀ·B[m×n]
static void gemm_at_acc(const double* a, const double* b, double* c, int64_t m, int64_t k,
                        int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double aval = arow[p];
            if (aval == 0.0) continue;
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3)))
        throw std::invalid_argument("matmul: expected 2-D·2-D or 3-D·3-D, got " +
                                    shape_str(sa) + " · " + shape_str(sb));
    const bool batched = sa.size() == 3;
    const int64_t nb = batched ? sa[0] : 1;
    const int64_t m = sa[batched ? 1 : 0];
    const int64_t k = sa[batched ? 2 : 1];
    const int64_t n = sb[batched ? 2 : 1];
    if (sb[batched ? 1 : 0] != k || (batched && sb[0] != nb))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " · " +
                                    shape_str(sb));

    std::vector<double> out(nb * m * n, 0.0);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (int64_t bi = 0; bi < nb; ++bi)
        gemm_acc(pa + bi * m * k, pb + bi * k * n, out.data() + bi * m * n, m, k, n);

    Shape out_shape = batched ? Shape{nb, m, n} : Shape{m, n};
    return make_op(std::move(out_shape), std::move(out), {a, b},
                   [nb, m, k, n](TensorNode& node) {
                       TensorNode& pa = *node.parents[0];
                       TensorNode& pb = *node.parents[1];
                       const double* g = node.grad.data();
                       if (pa.requires_grad) {
                           auto ga = grad_of(pa);
                           for (int64_t bi = 0; bi < nb; ++bi)
                               gemm_bt_acc(g + bi * m * n, pb.values.data() + bi * k * n,
                                           ga.data() + bi * m * k, m, n, k);
                       }
                       if (pb.requires_grad) {
                           auto gb = grad_of(pb);
                           for (int64_t bi = 0; bi < nb; ++bi)
                               gemm_at_acc(pa.values.data() + bi * m * k, g + bi * m * n,
                                           gb.data() + bi * k * n, m, k, n);
                       }
                   });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor transpose(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.size() == 2)
        return reshape(permute(reshape(a, {1, s[0], s[1]}), {0, 2, 1}), {s[1], s[0]});
    if (s.size() == 3) return permute(a, {0, 2, 1});
    throw std::invalid_argument("transpose: expected 2-D or 3-D, got " + shape_str(s));
}

Tensor permute(const Tensor& a, const std::vector<size_t>& perm) {
    const Shape& s = a.shape();
    if (s.size() != 3 || perm.size() != 3)
        throw std::invalid_argument("permute: expected 3-D tensor and 3 axes");
    std::vector<bool> used(3, false);
    for (size_t p : perm) {
        if (p >= 3 || used[p]) throw std::invalid_argument("permute: invalid axis order");
        used[p] = true;
    }
    Shape out_shape = {s[perm[0]], s[perm[1]], s[perm[2]]};
    // strides of the input
    int64_t stride[3] = {s[1] * s[2], s[2], 1};
    int64_t in_stride[3] = {stride[perm[0]], stride[perm[1]], stride[perm[2]]};

    std::vector<double> out(a.numel());
    auto av = a.values();
    int64_t idx = 0;
    for (int64_t i = 0; i < out_shape[0]; ++i)
        for (int64_t j = 0; j < out_shape[1]; ++j)
            for (int64_t k = 0; k < out_shape[2]; ++k)
                out[idx++] = av[i * in_stride[0] + j * in_stride[1] + k * in_stride[2]];

    std::array<int64_t, 3> os = {out_shape[0], out_shape[1], out_shape[2]};
    std::array<int64_t, 3> is = {in_stride[0], in_stride[1], in_stride[2]};
    return make_op(std::move(out_shape), std::move(out), {a}, [os, is](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        int64_t idx = 0;
        for (int64_t i = 0; i < os[0]; ++i)
            for (int64_t j = 0; j < os[1]; ++j)
                for (int64_t k = 0; k < os[2]; ++k)
                    g[i * is[0] + j * is[1] + k * is[2]] += n.grad[idx++];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_op(std::move(shape), std::move(out), {a}, [](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int64_t cols = parts[0].shape().size() == 2 ? parts[0].dim(1) : -1;
    if (cols < 0) throw std::invalid_argument("concat_rows: inputs must be 2-D");
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols)
            throw std::invalid_argument("concat_rows: mismatched shapes " +
                                        shape_str(parts[0].shape()) + " vs " +
                                        shape_str(p.shape()));
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_op({rows, cols}, std::move(out), parts, [](TensorNode& n) {
        size_t off = 0;
        for (auto& parent : n.parents) {
            const size_t sz = parent->values.size();
            if (parent->requires_grad) {
                auto g = grad_of(*parent);
                for (size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
            }
            off += sz;
        }
    });
}

Tensor gather_rows(const Tensor& a, std::vector<int64_t> indices) {
    if (a.rank() != 2)
        throw std::invalid_argument("gather_rows: expected 2-D, got " + shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    for (int64_t i : indices)
        if (i < 0 || i >= rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                        " out of range for " + std::to_string(rows) + " rows");
    std::vector<double> out(indices.size() * cols);
    auto av = a.values();
    for (size_t r = 0; r < indices.size(); ++r)
        std::copy_n(av.data() + indices[r] * cols, cols, out.data() + r * cols);
    const int64_t n_out = static_cast<int64_t>(indices.size());
    return make_op({n_out, cols}, std::move(out), {a},
                   [idx = std::move(indices), cols](TensorNode& n) {
                       if (!n.parents[0]->requires_grad) return;
                       auto g = grad_of(*n.parents[0]);
                       for (size_t r = 0; r < idx.size(); ++r)
                           for (int64_t c = 0; c < cols; ++c)
                               g[idx[r] * cols + c] += n.grad[r * cols + c];
                   });
}

Tensor tile_rows(const Tensor& row, int64_t n) {
    if (row.rank() != 2 || row.dim(0) != 1)
        throw std::invalid_argument("tile_rows: expected 1×d, got " + shape_str(row.shape()));
    if (n <= 0) throw std::invalid_argument("tile_rows: n must be positive");
    const int64_t d = row.dim(1);
    std::vector<double> out(n * d);
    auto rv = row.values();
    for (int64_t r = 0; r < n; ++r) std::copy_n(rv.data(), d, out.data() + r * d);
    return make_op({n, d}, std::move(out), {row}, [n, d](TensorNode& node) {
        if (!node.parents[0]->requires_grad) return;
        auto g = grad_of(*node.parents[0]);
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < d; ++c) g[c] += node.grad[r * d + c];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    return make_op({1}, {s}, {a}, [](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (auto& x : g) x += n.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    const double inv = 1.0 / static_cast<double>(a.numel());
    return make_op({1}, {s * inv}, {a}, [inv](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (auto& x : g) x += n.grad[0] * inv;
    });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("mean_rows: expected 2-D, got " + shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(cols, 0.0);
    auto av = a.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
    const double inv = 1.0 / static_cast<double>(rows);
    for (auto& x : out) x *= inv;
    return make_op({cols}, std::move(out), {a}, [rows, cols, inv](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) g[r * cols + c] += n.grad[c] * inv;
    });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

// Shared forward: rowwise softmax over the last axis with an optional
// allowed mask (length rows*cols of the trailing two axes, tiled over leading).
static Tensor softmax_impl(const Tensor& a, const std::vector<uint8_t>* allowed) {
    const Shape& s = a.shape();
    if (s.empty()) throw std::invalid_argument("softmax: scalar input");
    const int64_t cols = s.back();
    const int64_t rows = a.numel() / cols;
    int64_t mask_rows = 0;
    if (allowed) {
        if (s.size() < 2)
            throw std::invalid_argument("masked_softmax: input must have >= 2 axes");
        mask_rows = s[s.size() - 2];
        if (static_cast<int64_t>(allowed->size()) != mask_rows * cols)
            throw std::invalid_argument("masked_softmax: mask size " +
                                        std::to_string(allowed->size()) + " for trailing axes " +
                                        std::to_string(mask_rows) + "x" + std::to_string(cols));
    }

    std::vector<double> out(a.numel());
    auto av = a.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * cols;
        double* o = out.data() + r * cols;
        const uint8_t* m = allowed ? allowed->data() + (r % mask_rows) * cols : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t c = 0; c < cols; ++c)
            if (!m || m[c]) mx = std::max(mx, in[c]);
        if (mx == -std::numeric_limits<double>::infinity())
            throw std::invalid_argument("masked_softmax: row " + std::to_string(r % mask_rows) +
                                        " has no allowed entries");
        double denom = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            o[c] = (!m || m[c]) ? std::exp(in[c] - mx) : 0.0;
            denom += o[c];
        }
        const double inv = 1.0 / denom;
        for (int64_t c = 0; c < cols; ++c) o[c] *= inv;
    }

    return make_op(a.shape(), std::move(out), {a}, [rows, cols](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.values.data() + r * cols;
            const double* dy = n.grad.data() + r * cols;
            double dot = 0.0;
            for (int64_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
            for (int64_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor softmax(const Tensor& a) { return softmax_impl(a, nullptr); }

Tensor masked_softmax(const Tensor& a, const std::vector<uint8_t>& allowed) {
    return softmax_impl(a, &allowed);
}

Tensor log_softmax(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.empty()) throw std::invalid_argument("log_softmax: scalar input");
    const int64_t cols = s.back();
    const int64_t rows = a.numel() / cols;
    std::vector<double> out(a.numel());
    auto av = a.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = *std::max_element(in, in + cols);
        double denom = 0.0;
        for (int64_t c = 0; c < cols; ++c) denom += std::exp(in[c] - mx);
        const double lse = mx + std::log(denom);
        for (int64_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
    }
    return make_op(a.shape(), std::move(out), {a}, [rows, cols](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.values.data() + r * cols;
            const double* dy = n.grad.data() + r * cols;
            double sum_dy = 0.0;
            for (int64_t c = 0; c < cols; ++c) sum_dy += dy[c];
            for (int64_t c = 0; c < cols; ++c)
                g[r * cols + c] += dy[c] - std::exp(y[c]) * sum_dy;
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities / normalization
// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> out(a.numel());
    auto av = a.values();
    for (int64_t i = 0; i < a.numel(); ++i)
        out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
        if (!n.parents[0]->requires_grad) return;
        auto g = grad_of(*n.parents[0]);
        const auto& x = n.parents[0]->values;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            g[i] += n.grad[i] * (cdf + x[i] * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const Shape& s = a.shape();
    if (s.empty()) throw std::invalid_argument("layer_norm: scalar input");
    const int64_t d = s.back();
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layer_norm: affine params must have " + std::to_string(d) +
                                    " elements");
    const int64_t rows = a.numel() / d;

    std::vector<double> out(a.numel());
    std::vector<double> xhat(a.numel());
    std::vector<double> inv_std(rows);
    auto av = a.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * d;
        double mean = 0.0;
        for (int64_t c = 0; c < d; ++c) mean += in[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (int64_t c = 0; c < d; ++c) {
            xhat[r * d + c] = (in[c] - mean) * istd;
            out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
        }
    }

    return make_op(a.shape(), std::move(out), {a, gamma, beta},
                   [rows, d, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](TensorNode& n) {
                       TensorNode& px = *n.parents[0];
                       TensorNode& pg = *n.parents[1];
                       TensorNode& pb = *n.parents[2];
                       const auto& gv = pg.values;
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* dy = n.grad.data() + r * d;
                           const double* xh = xhat.data() + r * d;
                           if (pg.requires_grad) {
                               auto gg = grad_of(pg);
                               for (int64_t c = 0; c < d; ++c) gg[c] += dy[c] * xh[c];
                           }
                           if (pb.requires_grad) {
                               auto gb = grad_of(pb);
                               for (int64_t c = 0; c < d; ++c) gb[c] += dy[c];
                           }
                           if (px.requires_grad) {
                               auto gx = grad_of(px);
                               double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                               for (int64_t c = 0; c < d; ++c) {
                                   const double dxh = dy[c] * gv[c];
                                   mean_dxhat += dxh;
                                   mean_dxhat_xhat += dxh * xh[c];
                               }
                               mean_dxhat /= static_cast<double>(d);
                               mean_dxhat_xhat /= static_cast<double>(d);
                               for (int64_t c = 0; c < d; ++c) {
                                   const double dxh = dy[c] * gv[c];
                                   gx[r * d + c] += inv_std[r] * (dxh - mean_dxhat -
                                                                  xh[c] * mean_dxhat_xhat);
                               }
                           }
                       }
                   });
}

}  // namespace smae
