// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "siftlab/models.hpp"
#include "siftlab/tasks.hpp"

namespace siftlab {

template <class T>
using NamedMap = std::map<std::string, T, std::less<>>;

enum class Granularity { PerTensor, GlobalPool };
enum class MaskProvenance { GradientTopK, Random };

Granularity granularity_from_string(const std::string& s);
const char* to_string(Granularity g);
const char* to_string(MaskProvenance p);

/// Throws ConfigError unless rate is in (0, 1].
void check_rate(double rate);

/// Number of components kept out of n at the given rate: max(1, floor(rate*n)).
/// A relative 1e-12 nudge keeps products like 0.29*100 from flooring to 28.
std::size_t mask_budget(std::size_t n, double rate);

/// The k largest |g| positions, returned in ascending index order. Equal
/// magnitudes prefer the lower index.
std::vector<std::uint64_t> top_k_indices(std::span<const double> g, std::size_t k);

/// Fixed per-parameter update support.
struct MaskSelection {
    double rate = 1.0;
    Granularity granularity = Granularity::PerTensor;
    MaskProvenance provenance = MaskProvenance::GradientTopK;
    std::uint64_t seed = 0;                // random masks only
    std::size_t calibration_batches = 0;   // gradient masks only
    NamedMap<Shape> shapes;
    NamedMap<std::vector<std::uint64_t>> indices;

    std::size_t selected() const;
    std::size_t total_elements() const;
    const std::vector<std::uint64_t>& at(std::string_view name) const;
    /// Throws ShapeError on unsorted, duplicate or out-of-range indices.
    void validate() const;

    friend bool operator==(const MaskSelection&, const MaskSelection&) = default;
};

/// Top-|g| selection from already-computed gradients.
MaskSelection select_mask(const NamedMap<Tensor>& grads, double rate, Granularity granularity);

/// Averages dense gradients of `names` over the first `num_batches` batches of
/// `stream`, then selects the top components. Throws ConfigError for a bad
/// rate or batch count.
MaskSelection calibrate_mask(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                             BatchStream& stream, double rate, std::size_t num_batches, Granularity granularity,
                             Precision precision = Precision::F64);

/// Uniform per-tensor sample without replacement, same cardinality rule.
MaskSelection random_mask(const NamedMap<Shape>& shapes, double rate, std::uint64_t seed);

/// out[j] = dense[indices[j]]. Throws ShapeError on an out-of-range index.
std::vector<double> gather_sparse_grad(std::span<const double> dense, std::span<const std::uint64_t> indices);

/// Per-mask sparse gradient sums over micro-batches.
class SparseGradAccumulator {
public:
    explicit SparseGradAccumulator(const MaskSelection& mask);

    /// Gathers the masked components of one parameter's dense gradient.
    void add(std::string_view name, std::span<const double> dense);
    void end_micro_batch() { ++micro_batches_; }
    std::size_t micro_batch_count() const noexcept { return micro_batches_; }

    /// Sum divided by the micro-batch count.
    NamedMap<std::vector<double>> mean() const;
    void clear();
    std::size_t element_count() const;

private:
    const MaskSelection* mask_;
    NamedMap<std::vector<double>> sums_;
    std::size_t micro_batches_ = 0;
};

/// The sparse delta of one tensor: x_ft = x_pt + scatter(indices, values).
struct SparseDelta {
    Shape shape;
    std::vector<std::uint64_t> indices;
    std::vector<double> values;

    friend bool operator==(const SparseDelta&, const SparseDelta&) = default;
};

struct SparseIncrement {
    Precision element_type = Precision::F64;
    NamedMap<SparseDelta> tensors;

    std::size_t nnz() const;
    friend bool operator==(const SparseIncrement&, const SparseIncrement&) = default;
};

/// Pre-trained values plus trainable delta on the masked support.
struct SparseParameter {
    Shape shape;
    std::vector<std::uint64_t> indices;
    std::vector<double> base;
    std::vector<double> delta;
};

using SparseParameters = NamedMap<SparseParameter>;

SparseParameters register_sparse_parameters(const ParamSet& pretrained, const MaskSelection& mask);
/// Writes base + delta into the live parameters at the masked positions.
void write_back(const SparseParameters& sparse, ParamSet& live, Precision precision = Precision::F64);
SparseIncrement increment_of(const SparseParameters& sparse, Precision element_type = Precision::F64);

/// Scatter-add. Untouched entries keep their exact pre-trained bits.
/// Throws ShapeError on a name, shape or index mismatch.
ParamSet merge_increment(const ParamSet& pretrained, const SparseIncrement& increment);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW over the masked components only. Weight decay acts on the full
/// value base + delta, so a full mask reproduces dense AdamW.
class SparseAdamW {
public:
    SparseAdamW(AdamWConfig config, const SparseParameters& params, Precision precision = Precision::F64);

    /// One step. Throws NumericError (and changes nothing) if any gradient
    /// value is not finite.
    void step(SparseParameters& params, const NamedMap<std::vector<double>>& grads, double lr_scale = 1.0);

    /// Re-targets the state after the support of `name` changed. Moments of
    /// kept indices survive; new ones start at zero.
    void remap(std::string_view name, std::span<const std::uint64_t> old_indices,
               std::span<const std::uint64_t> new_indices);

    std::uint64_t step_count() const noexcept { return t_; }
    std::size_t state_elements() const;
    const AdamWConfig& config() const noexcept { return config_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig config_;
    Precision precision_;
    NamedMap<Moments> state_;
    std::uint64_t t_ = 0;
};

/// AdamW on whole tensors (full fine-tuning and dense heads).
class DenseAdamW {
public:
    explicit DenseAdamW(AdamWConfig config, Precision precision = Precision::F64)
        : config_(config), precision_(precision) {}

    void step(ParamSet& params, const NamedMap<Tensor>& grads, double lr_scale = 1.0);
    std::uint64_t step_count() const noexcept { return t_; }
    std::size_t state_elements() const;

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig config_;
    Precision precision_;
    NamedMap<Moments> state_;
    std::uint64_t t_ = 0;
};

/// Element counts for sparse training against the dense equivalent.
struct MemoryReport {
    std::size_t param_elements = 0;        // masked tensors, all components
    std::size_t sparse_grad_elements = 0;  // sum of mask sizes
    std::size_t optim_state_elements = 0;  // two moments per selected component
    std::size_t dense_param_elements = 0;  // trained densely alongside (heads)
    double grad_ratio = 0.0;
    double optim_ratio = 0.0;
};

MemoryReport memory_report(const MaskSelection& mask, const ParamSet& params);

}  // namespace siftlab
