// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/trainer.hpp"

#include <algorithm>

#include "siftlab/error.hpp"

namespace siftlab {

Method method_from_string(const std::string& s) {
    if (s == "full") return Method::Full;
    if (s == "sift") return Method::Sift;
    if (s == "random") return Method::Random;
    if (s == "head-only") return Method::HeadOnly;
    throw ConfigError("unknown method '" + s + "'");
}

const char* to_string(Method m) {
    switch (m) {
        case Method::Full: return "full";
        case Method::Sift: return "sift";
        case Method::Random: return "random";
        case Method::HeadOnly: return "head-only";
    }
    return "?";
}

LrSchedule lr_schedule_from_string(const std::string& s) {
    if (s == "constant") return LrSchedule::Constant;
    if (s == "linear") return LrSchedule::LinearDecay;
    throw ConfigError("unknown lr schedule '" + s + "'");
}

const char* to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "linear"; }

TrainablePlan plan_trainable(const ParamSet& params, Method method, ModuleFilter filter, bool head_dense) {
    TrainablePlan plan;
    switch (method) {
        case Method::Full:
            plan.dense = select_trainable(params, filter);
            if (head_dense)
                for (auto& name : select_trainable(params, ModuleFilter::HeadOnly))
                    if (std::find(plan.dense.begin(), plan.dense.end(), name) == plan.dense.end())
                        plan.dense.push_back(name);
            std::sort(plan.dense.begin(), plan.dense.end());
            break;
        case Method::HeadOnly: plan.dense = select_trainable(params, ModuleFilter::HeadOnly); break;
        case Method::Sift:
        case Method::Random:
            for (auto& name : select_trainable(params, filter)) {
                if (is_head_param(name) || is_layer_norm_param(name)) {
                    if (!is_head_param(name) || head_dense) plan.dense.push_back(name);
                } else {
                    plan.masked.push_back(name);
                }
            }
            if (head_dense)
                for (auto& name : select_trainable(params, ModuleFilter::HeadOnly))
                    if (std::find(plan.dense.begin(), plan.dense.end(), name) == plan.dense.end())
                        plan.dense.push_back(name);
            std::sort(plan.dense.begin(), plan.dense.end());
            break;
    }
    return plan;
}

FineTuner::FineTuner(const Model& model, ParamSet pretrained, TrainablePlan plan, std::optional<MaskSelection> mask,
                     AdamWConfig optim, Precision precision)
    : model_(&model),
      precision_(precision),
      live_(std::move(pretrained)),
      plan_(std::move(plan)),
      mask_(std::move(mask)),
      dense_opt_(optim, precision),
      tape_(precision) {
    for (auto& [_, t] : live_) quantize_inplace(precision_, t.data());
    if (!plan_.masked.empty()) {
        if (!mask_) throw ConfigError("masked training needs a mask");
        std::vector<std::string> covered;
        for (const auto& [name, _] : mask_->indices) covered.push_back(name);
        auto want = plan_.masked;
        std::sort(want.begin(), want.end());
        if (covered != want) throw ConfigError("mask does not cover exactly the masked parameters");
        sparse_ = register_sparse_parameters(live_, *mask_);
        accum_.emplace(*mask_);
        sparse_opt_.emplace(optim, sparse_, precision_);
    } else {
        mask_.reset();
    }

    for (const auto& name : plan_.masked) {
        tape_.mark_trainable(name);
        tape_.register_grad_hook(name, [this](const GradHookReceipt& r) {
            if (observer_) observer_(r);
            accum_->add(r.param, r.grad);
            if (capture_reselect_)
                pending_indices_[std::string(r.param)] = top_k_indices(r.grad, mask_->at(r.param).size());
        });
    }
    for (const auto& name : plan_.dense) {
        auto it = live_.find(name);
        if (it == live_.end()) throw ShapeError("unknown parameter '" + name + "'");
        dense_accum_.emplace(name, Tensor(it->second.shape()));
        tape_.mark_trainable(name);
        tape_.register_grad_hook(name, [this](const GradHookReceipt& r) {
            if (observer_) observer_(r);
            auto& dst = dense_accum_.find(r.param)->second;
            for (std::size_t i = 0; i < r.grad.size(); ++i) dst[i] += r.grad[i];
        });
    }
}

double FineTuner::step(std::span<const Batch> micro_batches, double lr_scale) {
    if (micro_batches.empty()) throw ConfigError("a step needs at least one micro-batch");
    capture_reselect_ = reselect_interval_ && mask_ && steps_ > 0 && steps_ % reselect_interval_ == 0;
    pending_indices_.clear();

    double loss_sum = 0.0;
    last_stats_ = GradBufferStats{};
    for (const Batch& mb : micro_batches) {
        tape_.reset();
        Var loss = model_->loss(tape_, live_, mb);
        loss_sum += loss.value().item();
        tape_.backward(loss);
        capture_reselect_ = false;
        const auto& s = tape_.grad_buffer_stats();
        last_stats_.peak = std::max(last_stats_.peak, s.peak);
        last_stats_.allocations += s.allocations;
        last_stats_.live = s.live;
        if (accum_) accum_->end_micro_batch();
    }
    const double count = static_cast<double>(micro_batches.size());

    if (accum_) {
        sparse_opt_->step(sparse_, accum_->mean(), lr_scale);
        write_back(sparse_, live_, precision_);
        accum_->clear();
    }
    if (!dense_accum_.empty()) {
        for (auto& [_, g] : dense_accum_)
            for (double& v : g.data()) v /= count;
        dense_opt_.step(live_, dense_accum_, lr_scale);
        for (auto& [_, g] : dense_accum_) std::fill(g.data().begin(), g.data().end(), 0.0);
    }
    ++steps_;
    if (!pending_indices_.empty()) apply_reselection();
    return loss_sum / count;
}

void FineTuner::apply_reselection() {
    for (auto& [name, next_idx] : pending_indices_) {
        SparseParameter& sp = sparse_.at(name);
        auto& retired = retired_[name];
        for (std::size_t j = 0; j < sp.indices.size(); ++j) retired[sp.indices[j]] = {sp.base[j], sp.delta[j]};

        SparseParameter next{sp.shape, next_idx, {}, {}};
        const auto& live = live_.at(name);
        for (std::uint64_t i : next_idx) {
            if (auto it = retired.find(i); it != retired.end()) {
                next.base.push_back(it->second.first);
                next.delta.push_back(it->second.second);
                retired.erase(it);
            } else {
                next.base.push_back(live[i]);
                next.delta.push_back(0.0);
            }
        }
        sparse_opt_->remap(name, sp.indices, next_idx);
        mask_->indices[name] = next_idx;
        sp = std::move(next);
    }
    accum_.emplace(*mask_);
    pending_indices_.clear();
}

SparseIncrement FineTuner::increment() const {
    SparseIncrement inc = increment_of(sparse_, precision_);
    for (const auto& [name, retired] : retired_) {
        if (retired.empty()) continue;
        auto& d = inc.tensors.at(name);
        std::map<std::uint64_t, double> all;
        for (const auto& [i, bd] : retired) all[i] = bd.second;
        for (std::size_t j = 0; j < d.indices.size(); ++j) all[d.indices[j]] = d.values[j];
        d.indices.clear();
        d.values.clear();
        for (const auto& [i, v] : all) {
            d.indices.push_back(i);
            d.values.push_back(v);
        }
    }
    return inc;
}

MemoryReport FineTuner::instrumented_memory() const {
    MemoryReport r;
    for (const auto& name : plan_.masked) r.param_elements += live_.at(name).size();
    for (const auto& name : plan_.dense) r.dense_param_elements += live_.at(name).size();
    if (accum_) r.sparse_grad_elements = accum_->element_count();
    if (sparse_opt_) r.optim_state_elements = sparse_opt_->state_elements();
    if (r.param_elements) {
        r.grad_ratio = static_cast<double>(r.sparse_grad_elements) / static_cast<double>(r.param_elements);
        r.optim_ratio = static_cast<double>(r.optim_state_elements) / (2.0 * static_cast<double>(r.param_elements));
    }
    return r;
}

}  // namespace siftlab
