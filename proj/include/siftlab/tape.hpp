// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siftlab/tensor.hpp"

namespace siftlab {

/// What a gradient hook sees for one parameter during backward.
///
/// `grad` points into a buffer owned by the tape and is released as soon as
/// the hook returns. The receipt cannot be copied; copy the values out if
/// they are needed later.
struct GradHookReceipt {
    std::string_view param;
    const Shape& shape;
    std::span<const double> grad;
    std::uint64_t step_index;

    GradHookReceipt(std::string_view p, const Shape& s, std::span<const double> g, std::uint64_t step)
        : param(p), shape(s), grad(g), step_index(step) {}
    GradHookReceipt(const GradHookReceipt&) = delete;
    GradHookReceipt& operator=(const GradHookReceipt&) = delete;
};

using GradHook = std::function<void(const GradHookReceipt&)>;

/// Instrumentation for dense parameter-gradient buffers of the last backward.
struct GradBufferStats {
    std::size_t live = 0;
    std::size_t peak = 0;
    std::size_t allocations = 0;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Per-node view handed to backward closures.
class BackwardContext {
public:
    const Tensor& out() const;
    std::span<const double> grad_out() const;
    const Tensor& input(std::size_t k) const;
    bool needs_grad(std::size_t k) const;
    /// Gradient accumulator for input k, zero-initialised on first access.
    std::span<double> input_grad(std::size_t k);

private:
    friend class Tape;
    BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
    Tape& tape_;
    std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Reverse-mode record of one forward evaluation.
///
/// Trainable parameters are declared by name once and persist across
/// `reset()`, as do gradient hooks. A hooked parameter's dense gradient is
/// handed to its hook the moment it is complete (after its earliest consumer
/// has been back-propagated) and freed right after. Parameters without a hook
/// keep their dense gradient on the tape until the next `reset()`.
class Tape {
public:
    explicit Tape(Precision precision = Precision::F64) : precision_(precision) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Precision precision() const noexcept { return precision_; }

    void mark_trainable(const std::string& name);
    bool is_trainable(std::string_view name) const;
    const std::set<std::string, std::less<>>& trainable() const noexcept { return trainable_; }

    /// Throws TapeError if `name` is not trainable or already hooked.
    void register_grad_hook(const std::string& name, GradHook hook);
    bool has_hook(std::string_view name) const;

    Var constant(Tensor value);
    /// Leaf for a named parameter. The referenced tensor must outlive backward.
    /// Repeated calls with the same name return the same node.
    Var param(const std::string& name, const Tensor& value);

    /// Back-propagates from a scalar node. Each trainable parameter fetched
    /// during the forward pass gets exactly one hook call (zeros if it did not
    /// influence the loss).
    void backward(Var loss);

    /// Retained dense gradient of an unhooked trainable parameter, or nullptr.
    const Tensor* grad(std::string_view name) const;
    std::map<std::string, Tensor, std::less<>> take_grads();

    /// Drops all nodes and retained gradients; keeps trainables and hooks.
    void reset();

    const GradBufferStats& grad_buffer_stats() const noexcept { return stats_; }
    std::uint64_t backward_count() const noexcept { return backward_count_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Appends an op result. Used by the primitive implementations.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
    const Tensor& value(std::size_t id) const;

private:
    friend class BackwardContext;

    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        std::string param_name;  // non-empty for trainable leaves
        std::size_t first_consumer = SIZE_MAX;

        const Tensor& value() const { return external ? *external : owned; }
    };

    std::span<double> grad_buffer(std::size_t id);
    void finalize_param(std::size_t id);

    Precision precision_;
    std::vector<Node> nodes_;
    std::set<std::string, std::less<>> trainable_;
    std::map<std::string, GradHook, std::less<>> hooks_;
    std::map<std::string, std::size_t, std::less<>> param_nodes_;
    std::map<std::string, Tensor, std::less<>> retained_;
    std::vector<std::vector<double>> grads_;
    GradBufferStats stats_;
    std::uint64_t backward_count_ = 0;
    bool backward_done_ = false;
};

/// Differentiable primitives. Broadcasting in add/sub/mul: the second operand
/// either matches the first exactly or matches its trailing dimensions.
namespace ad {

Var matmul(Var a, Var b);  // a [...,M,K], b [K,N] or [...,K,N]
Var transpose(Var a);      // swap last two dims
Var permute_0213(Var a);   // [A,B,C,D] -> [A,C,B,D]
Var reshape(Var a, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var relu(Var a);
Var gelu(Var a);  // tanh approximation
Var softmax(Var a);  // last axis
Var causal_mask(Var a);  // -inf strictly above the diagonal of the last two dims
Var layer_norm(Var a, double eps = 1e-5);  // last axis, no affine part
Var embedding(Var table, std::span<const int> ids, Shape leading);
Var cross_entropy(Var logits, std::span<const int> targets);  // mean over rows
Var mean(Var a);
Var sum(Var a);
Var last_position(Var a);  // [B,T,D] -> [B,D]

}  // namespace ad

}  // namespace siftlab
