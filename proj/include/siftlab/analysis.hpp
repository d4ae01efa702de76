// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <span>
#include <vector>

#include "siftlab/sift.hpp"

namespace siftlab {

/// Cumulative share of the gradient held by its largest components.
struct SparsityProfile {
    std::size_t n = 0;
    std::vector<double> fractions;        // ascending, in (0, 1]
    std::vector<double> energy_fraction;  // sum of top-ceil(f*n) g^2 / sum g^2
    std::vector<double> abs_fraction;     // same with |g|
};

/// Throws ConfigError for an all-zero gradient or fractions outside (0, 1].
SparsityProfile sparsity_profile(std::span<const double> g, std::span<const double> fractions);

/// Tight epsilon with g_(tau+1)^2 = epsilon * sum_{j<=tau} g_(j)^2, where g_(j)
/// is the j-th largest magnitude. Requires 1 <= tau < n.
double epsilon_for_tau(std::span<const double> g, std::size_t tau);

/// min over d in span{e_i : i in mask} of d.g / (|d| |g|), which is
/// -|P_S g| / |g|, attained at d = -P_S g.
double min_subspace_cosine(std::span<const double> g, std::span<const std::uint64_t> mask);

struct DescentBoundReport {
    std::size_t n = 0;
    std::size_t tau = 0;
    double epsilon = 0.0;
    double cosine_min = 0.0;
    double bound = 0.0;             // -1 / sqrt(1 + epsilon (n - tau))
    double tau_over_n_bound = 0.0;  // -tau / n, reported only
    bool holds = false;             // cosine_min <= bound + 1e-12
};

DescentBoundReport verify_descent_bound(std::span<const double> g, std::size_t tau);

struct GradHistogram {
    std::vector<double> edges;  // bins + 1
    std::vector<std::size_t> counts;
    bool log_scale = false;
    double min = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};

/// Equal-width bins over [min, max] of g (or of log10|g| when log_scale, which
/// drops exact zeros from the counts). Bins are [lo, hi); the top bin is
/// closed on the right.
GradHistogram grad_histogram(std::span<const double> g, std::size_t bins, bool log_scale = false,
                             std::optional<std::pair<double, double>> range = std::nullopt);

/// Energy share of g captured by the given per-tensor index sets. Tensors are
/// weighed jointly: sum over tensors of masked g^2 / total g^2.
double captured_energy(const NamedMap<Tensor>& grads, const MaskSelection& mask);

struct CaptureRow {
    std::size_t batch = 0;
    double own_topk_fraction = 0.0;
    double fixed_mask_fraction = 0.0;
};

/// For each of the next k batches, compares the gradient energy captured by
/// that batch's own top-k (same per-tensor cardinality as the mask) with the
/// energy captured by the fixed mask.
std::vector<CaptureRow> mask_capture_series(const Model& model, const ParamSet& params, const MaskSelection& mask_first,
                                            BatchStream& stream, std::size_t k_batches,
                                            Precision precision = Precision::F64);

/// Dense gradients of `names` on one batch.
NamedMap<Tensor> batch_gradients(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                                 const Batch& batch, Precision precision = Precision::F64);

/// Concatenation in name order.
std::vector<double> flatten(const NamedMap<Tensor>& tensors);

}  // namespace siftlab
