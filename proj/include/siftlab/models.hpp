// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "siftlab/tape.hpp"
#include "siftlab/tensor.hpp"

namespace siftlab {

/// Named parameter tensors, ordered by name.
using ParamSet = std::map<std::string, Tensor, std::less<>>;

std::size_t param_count(const ParamSet& params);
/// Throws ShapeError unless both sets have identical names and shapes.
void check_same_layout(const ParamSet& a, const ParamSet& b);

/// One mini-batch. Token models read `tokens` ([size, seq_len] row-major);
/// the MLP reads `features` when present and one-hot tokens otherwise.
struct Batch {
    std::vector<int> tokens;
    std::size_t seq_len = 0;
    std::vector<int> targets;
    Tensor features;       // [size, F], optional
    Tensor dense_targets;  // [size, C], squared loss only

    std::size_t size() const;
};

enum class ModelKind { Mlp, TinyTransformer };
enum class LossKind { CrossEntropy, Squared };

struct ModelConfig {
    ModelKind kind = ModelKind::TinyTransformer;
    LossKind loss = LossKind::CrossEntropy;
    // MLP: layer widths, input first, classes last.
    std::vector<std::size_t> mlp_dims{4, 8, 2};
    // Transformer.
    std::size_t hidden = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t vocab = 16;
    std::size_t seq_len = 8;
    std::size_t mlp_ratio = 4;
    bool attn_bias = false;
    std::uint64_t seed = 0;

    /// Throws ConfigError on invalid dims.
    void validate() const;
};

ModelKind model_kind_from_string(const std::string& s);
const char* to_string(ModelKind k);

/// Deterministic initialisation from `config.seed`: normal weights with
/// std 1/sqrt(fan_in), zero biases, unit layer-norm gains.
ParamSet build_model(const ModelConfig& config);

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }

    /// MLP: [B,C]. Transformer: [B,T,vocab].
    Var logits(Tape& tape, const ParamSet& params, const Batch& batch) const;

    /// Scalar loss on the batch. Transformers are scored at the last position.
    /// Throws NumericError if the loss is not finite.
    Var loss(Tape& tape, const ParamSet& params, const Batch& batch) const;

    /// Forward-only mean loss, no trainable parameters.
    double evaluate(const ParamSet& params, const Batch& batch, Precision precision) const;
    /// Predicted class per example (argmax at the scored position).
    std::vector<int> predict(const ParamSet& params, const Batch& batch, Precision precision) const;

private:
    Var hidden_states(Tape& tape, const ParamSet& params, const Batch& batch) const;
    Var mlp_forward(Tape& tape, const ParamSet& params, const Batch& batch) const;
    Var scored_logits(Tape& tape, const ParamSet& params, const Batch& batch) const;

    ModelConfig config_;
};

/// Which parameters a fine-tuning run may touch.
enum class ModuleFilter { V, QV, QKV, QKVO, AllAttn, All, HeadOnly };

ModuleFilter module_filter_from_string(const std::string& s);
const char* to_string(ModuleFilter f);

/// Sorted parameter names admitted by `filter`.
std::vector<std::string> select_trainable(const ParamSet& params, ModuleFilter filter);

bool is_head_param(std::string_view name);
bool is_layer_norm_param(std::string_view name);

}  // namespace siftlab
