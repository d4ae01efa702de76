// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siftlab/sift.hpp"

namespace siftlab {

enum class Method { Full, Sift, Random, HeadOnly };
enum class LrSchedule { Constant, LinearDecay };

Method method_from_string(const std::string& s);
const char* to_string(Method m);
LrSchedule lr_schedule_from_string(const std::string& s);
const char* to_string(LrSchedule s);

/// Which tensors a method trains, split into masked and dense sets.
struct TrainablePlan {
    std::vector<std::string> masked;
    std::vector<std::string> dense;
};

/// Sift/random mask every filtered tensor except heads and layer norms,
/// which train densely (heads only when `head_dense`). Full trains the
/// filtered set densely, plus `head.*` when `head_dense`; head-only trains
/// `head.*` densely.
TrainablePlan plan_trainable(const ParamSet& params, Method method, ModuleFilter filter, bool head_dense);

/// Hook-driven fine-tuning loop.
///
/// Every trainable tensor gets a gradient hook. Masked tensors gather their
/// selected components into a sparse accumulator inside the hook, so no dense
/// gradient outlives its hook call; dense tensors copy into a per-tensor
/// accumulator. After the micro-batches of a step, masked tensors take a
/// sparse AdamW step on (indices, base, delta) and the result is written back
/// into the live parameters.
class FineTuner {
public:
    FineTuner(const Model& model, ParamSet pretrained, TrainablePlan plan, std::optional<MaskSelection> mask,
              AdamWConfig optim, Precision precision);
    FineTuner(const FineTuner&) = delete;
    FineTuner& operator=(const FineTuner&) = delete;

    /// One optimizer step over the given micro-batches; returns their mean loss.
    double step(std::span<const Batch> micro_batches, double lr_scale = 1.0);

    /// Re-select the mask from the step gradient every `interval` steps
    /// (0 disables). Indices that leave the mask keep their accumulated delta.
    void set_reselect_interval(std::size_t interval) { reselect_interval_ = interval; }
    /// Sees each dense gradient inside the hook, before it is released.
    void set_grad_observer(std::function<void(const GradHookReceipt&)> observer) { observer_ = std::move(observer); }

    const ParamSet& params() const noexcept { return live_; }
    SparseIncrement increment() const;
    const std::optional<MaskSelection>& mask() const noexcept { return mask_; }
    const TrainablePlan& plan() const noexcept { return plan_; }
    std::uint64_t steps_taken() const noexcept { return steps_; }

    /// Counts taken from the live accumulator and optimizer containers.
    MemoryReport instrumented_memory() const;
    const GradBufferStats& last_grad_stats() const noexcept { return last_stats_; }

private:
    void apply_reselection();

    const Model* model_;
    Precision precision_;
    ParamSet live_;
    TrainablePlan plan_;
    std::optional<MaskSelection> mask_;
    SparseParameters sparse_;
    NamedMap<std::map<std::uint64_t, std::pair<double, double>>> retired_;  // index -> (base, delta)
    std::optional<SparseGradAccumulator> accum_;
    NamedMap<Tensor> dense_accum_;
    std::optional<SparseAdamW> sparse_opt_;
    DenseAdamW dense_opt_;
    Tape tape_;
    std::function<void(const GradHookReceipt&)> observer_;
    std::size_t reselect_interval_ = 0;
    bool capture_reselect_ = false;
    NamedMap<std::vector<std::uint64_t>> pending_indices_;
    std::uint64_t steps_ = 0;
    GradBufferStats last_stats_;
};

}  // namespace siftlab
