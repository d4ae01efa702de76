// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "siftlab/models.hpp"

namespace siftlab {

/// Loss of a full parameter set. Must be safe to call concurrently.
using LossFn = std::function<double(const ParamSet&)>;

/// (1 - alpha) theta0 + alpha theta1 per tensor; exact at alpha 0 and 1.
ParamSet interpolate_params(const ParamSet& theta0, const ParamSet& theta1, double alpha);

/// theta1 - theta0.
ParamSet param_difference(const ParamSet& theta1, const ParamSet& theta0);

/// delta2_i = d_i * delta1_i with d_i standard normal, drawn in name order
/// from a generator seeded with `seed`. Throws ConfigError when delta1 is
/// identically zero.
ParamSet gen_second_direction(const ParamSet& delta1, std::uint64_t seed);

struct LandscapeScan {
    std::vector<double> alphas;
    std::vector<double> betas;  // empty for a 1-D scan
    std::vector<double> losses; // row-major [alpha][beta]
    std::vector<bool> nonfinite;
    std::string eval_set_id;
    std::string theta0_id;
    std::string theta1_id;
    std::uint64_t direction_seed = 0;

    bool is_2d() const { return !betas.empty(); }
    double at(std::size_t ia, std::size_t ib = 0) const {
        return losses[ia * (betas.empty() ? 1 : betas.size()) + ib];
    }
};

/// Evenly spaced points including both ends.
std::vector<double> linspace(double lo, double hi, std::size_t count);

/// f(alpha) = L((1 - alpha) theta0 + alpha theta1). Grid points are evaluated
/// on up to `threads` workers; results are placed by grid index.
LandscapeScan scan_1d(const LossFn& loss, const ParamSet& theta0, const ParamSet& theta1,
                      const std::vector<double>& alphas, unsigned threads = 1);

/// f(alpha, beta) = L((1 - alpha) theta0 + alpha theta1 + beta delta2), i.e.
/// theta0 + alpha delta1 + beta delta2 with delta1 = theta1 - theta0 taken in
/// the endpoint-exact form. The beta = 0 column reproduces scan_1d bit for bit.
LandscapeScan scan_2d(const LossFn& loss, const ParamSet& theta0, const ParamSet& theta1, const ParamSet& delta2,
                      const std::vector<double>& alphas, const std::vector<double>& betas, unsigned threads = 1);

/// Forward-only mean loss of `model` over fixed evaluation batches.
LossFn model_loss(const Model& model, std::vector<Batch> eval_batches, Precision precision = Precision::F64);

}  // namespace siftlab
