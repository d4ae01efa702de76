// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/sift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "siftlab/error.hpp"
#include "siftlab/rng.hpp"

namespace siftlab {

Granularity granularity_from_string(const std::string& s) {
    if (s == "per-tensor") return Granularity::PerTensor;
    if (s == "global-pool") return Granularity::GlobalPool;
    throw ConfigError("unknown granularity '" + s + "'");
}

const char* to_string(Granularity g) { return g == Granularity::PerTensor ? "per-tensor" : "global-pool"; }

const char* to_string(MaskProvenance p) { return p == MaskProvenance::GradientTopK ? "gradient-topk" : "random"; }

void check_rate(double rate) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("sparsity rate must be in (0, 1], got " + std::to_string(rate));
}

std::size_t mask_budget(std::size_t n, double rate) {
    check_rate(rate);
    const auto m = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) * (1.0 + 1e-12)));
    return std::clamp<std::size_t>(m, 1, n);
}

std::vector<std::uint64_t> top_k_indices(std::span<const double> g, std::size_t k) {
    k = std::min(k, g.size());
    std::vector<std::uint64_t> idx(g.size());
    std::iota(idx.begin(), idx.end(), std::uint64_t{0});
    auto before = [&](std::uint64_t a, std::uint64_t b) {
        const double fa = std::abs(g[a]), fb = std::abs(g[b]);
        return fa != fb ? fa > fb : a < b;
    };
    if (k < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t MaskSelection::selected() const {
    std::size_t n = 0;
    for (const auto& [_, idx] : indices) n += idx.size();
    return n;
}

std::size_t MaskSelection::total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, s] : shapes) n += numel(s);
    return n;
}

const std::vector<std::uint64_t>& MaskSelection::at(std::string_view name) const {
    auto it = indices.find(name);
    if (it == indices.end()) throw ShapeError("mask has no entry for '" + std::string(name) + "'");
    return it->second;
}

void MaskSelection::validate() const {
    if (indices.size() != shapes.size()) throw ShapeError("mask shapes and indices disagree");
    for (const auto& [name, idx] : indices) {
        auto s = shapes.find(name);
        if (s == shapes.end()) throw ShapeError("mask has no shape for '" + name + "'");
        const std::size_t n = numel(s->second);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            if (idx[j] >= n) throw ShapeError("mask index out of range in '" + name + "'");
            if (j && idx[j] <= idx[j - 1]) throw ShapeError("mask indices not strictly increasing in '" + name + "'");
        }
    }
}

MaskSelection select_mask(const NamedMap<Tensor>& grads, double rate, Granularity granularity) {
    check_rate(rate);
    MaskSelection mask;
    mask.rate = rate;
    mask.granularity = granularity;
    mask.provenance = MaskProvenance::GradientTopK;
    for (const auto& [name, g] : grads) mask.shapes.emplace(name, g.shape());

    if (granularity == Granularity::PerTensor) {
        for (const auto& [name, g] : grads) mask.indices.emplace(name, top_k_indices(g.data(), mask_budget(g.size(), rate)));
        return mask;
    }
    std::vector<double> pooled;
    for (const auto& [_, g] : grads) pooled.insert(pooled.end(), g.data().begin(), g.data().end());
    const auto picked = top_k_indices(pooled, mask_budget(pooled.size(), rate));
    std::size_t offset = 0;
    auto it = picked.begin();
    for (const auto& [name, g] : grads) {
        auto& out = mask.indices[name];
        while (it != picked.end() && *it < offset + g.size()) out.push_back(*it++ - offset);
        offset += g.size();
    }
    return mask;
}

MaskSelection calibrate_mask(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                             BatchStream& stream, double rate, std::size_t num_batches, Granularity granularity,
                             Precision precision) {
    check_rate(rate);
    if (num_batches == 0) throw ConfigError("calibration needs at least one batch");
    if (names.empty()) throw ConfigError("calibration needs at least one parameter");

    NamedMap<Tensor> accum;
    Tape tape(precision);
    for (const auto& name : names) {
        auto it = params.find(name);
        if (it == params.end()) throw ShapeError("unknown parameter '" + name + "'");
        accum.emplace(name, Tensor(it->second.shape()));
        tape.mark_trainable(name);
        tape.register_grad_hook(name, [&accum](const GradHookReceipt& r) {
            auto& dst = accum.find(r.param)->second;
            for (std::size_t i = 0; i < r.grad.size(); ++i) dst[i] += r.grad[i];
        });
    }
    for (std::size_t b = 0; b < num_batches; ++b) {
        Batch batch = stream.next_cycling();
        tape.reset();
        tape.backward(model.loss(tape, params, batch));
    }
    for (auto& [_, g] : accum)
        for (double& v : g.data()) v /= static_cast<double>(num_batches);

    MaskSelection mask = select_mask(accum, rate, granularity);
    mask.calibration_batches = num_batches;
    return mask;
}

MaskSelection random_mask(const NamedMap<Shape>& shapes, double rate, std::uint64_t seed) {
    check_rate(rate);
    MaskSelection mask;
    mask.rate = rate;
    mask.provenance = MaskProvenance::Random;
    mask.seed = seed;
    mask.shapes = shapes;
    std::uint64_t stream = 0;
    for (const auto& [name, shape] : shapes) {
        const std::size_t n = numel(shape);
        const std::size_t k = mask_budget(n, rate);
        Rng rng(derive_seed(seed, stream++));
        // Partial Fisher-Yates: the first k slots are a uniform k-subset.
        std::vector<std::uint64_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::uint64_t{0});
        for (std::size_t i = 0; i < k; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
        perm.resize(k);
        std::sort(perm.begin(), perm.end());
        mask.indices.emplace(name, std::move(perm));
    }
    return mask;
}

std::vector<double> gather_sparse_grad(std::span<const double> dense, std::span<const std::uint64_t> indices) {
    std::vector<double> out(indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= dense.size())
            throw ShapeError("gather index " + std::to_string(indices[j]) + " out of range " + std::to_string(dense.size()));
        out[j] = dense[indices[j]];
    }
    return out;
}

// ---------------------------------------------------------------------------

SparseGradAccumulator::SparseGradAccumulator(const MaskSelection& mask) : mask_(&mask) {
    for (const auto& [name, idx] : mask.indices) sums_.emplace(name, std::vector<double>(idx.size(), 0.0));
}

void SparseGradAccumulator::add(std::string_view name, std::span<const double> dense) {
    auto it = sums_.find(name);
    if (it == sums_.end()) throw ShapeError("no sparse gradient slot for '" + std::string(name) + "'");
    const auto& idx = mask_->at(name);
    if (idx.size() != it->second.size()) throw ShapeError("accumulator out of sync with mask for '" + it->first + "'");
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] >= dense.size()) throw ShapeError("gather index out of range in '" + it->first + "'");
        it->second[j] += dense[idx[j]];
    }
}

NamedMap<std::vector<double>> SparseGradAccumulator::mean() const {
    NamedMap<std::vector<double>> out = sums_;
    const double div = micro_batches_ ? static_cast<double>(micro_batches_) : 1.0;
    for (auto& [_, v] : out)
        for (double& x : v) x /= div;
    return out;
}

void SparseGradAccumulator::clear() {
    for (const auto& [name, idx] : mask_->indices) sums_[name].assign(idx.size(), 0.0);
    micro_batches_ = 0;
}

std::size_t SparseGradAccumulator::element_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : sums_) n += v.size();
    return n;
}

// ---------------------------------------------------------------------------

std::size_t SparseIncrement::nnz() const {
    std::size_t n = 0;
    for (const auto& [_, d] : tensors) n += d.indices.size();
    return n;
}

SparseParameters register_sparse_parameters(const ParamSet& pretrained, const MaskSelection& mask) {
    mask.validate();
    SparseParameters out;
    for (const auto& [name, idx] : mask.indices) {
        auto it = pretrained.find(name);
        if (it == pretrained.end()) throw ShapeError("mask names unknown parameter '" + name + "'");
        if (it->second.shape() != mask.shapes.at(name)) throw ShapeError("mask shape differs for '" + name + "'");
        SparseParameter sp{it->second.shape(), idx, gather_sparse_grad(it->second.data(), idx),
                           std::vector<double>(idx.size(), 0.0)};
        out.emplace(name, std::move(sp));
    }
    return out;
}

void write_back(const SparseParameters& sparse, ParamSet& live, Precision precision) {
    for (const auto& [name, sp] : sparse) {
        auto it = live.find(name);
        if (it == live.end()) throw ShapeError("live parameters lack '" + name + "'");
        auto data = it->second.data();
        for (std::size_t j = 0; j < sp.indices.size(); ++j)
            data[sp.indices[j]] = quantize(precision, sp.base[j] + sp.delta[j]);
    }
}

SparseIncrement increment_of(const SparseParameters& sparse, Precision element_type) {
    SparseIncrement inc;
    inc.element_type = element_type;
    for (const auto& [name, sp] : sparse) inc.tensors.emplace(name, SparseDelta{sp.shape, sp.indices, sp.delta});
    return inc;
}

ParamSet merge_increment(const ParamSet& pretrained, const SparseIncrement& increment) {
    ParamSet out = pretrained;
    for (const auto& [name, delta] : increment.tensors) {
        auto it = out.find(name);
        if (it == out.end()) throw ShapeError("increment names unknown parameter '" + name + "'");
        if (it->second.shape() != delta.shape)
            throw ShapeError("increment shape " + shape_str(delta.shape) + " differs from " +
                             shape_str(it->second.shape()) + " for '" + name + "'");
        if (delta.indices.size() != delta.values.size()) throw ShapeError("increment indices/values length differ");
        auto data = it->second.data();
        for (std::size_t j = 0; j < delta.indices.size(); ++j) {
            if (delta.indices[j] >= data.size()) throw ShapeError("increment index out of range for '" + name + "'");
            data[delta.indices[j]] += delta.values[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct AdamWCoeffs {
    double lr, wd, b1, b2, eps, bc1, bc2;
};

AdamWCoeffs coeffs(const AdamWConfig& c, std::uint64_t t, double lr_scale) {
    const double td = static_cast<double>(t);
    return {c.lr * lr_scale, c.weight_decay, c.beta1, c.beta2, c.eps, 1.0 - std::pow(c.beta1, td),
            1.0 - std::pow(c.beta2, td)};
}

/// Returns the change to apply to x.
inline double adamw_delta(const AdamWCoeffs& k, double x, double g, double& m, double& v) {
    m = k.b1 * m + (1.0 - k.b1) * g;
    v = k.b2 * v + (1.0 - k.b2) * g * g;
    const double mhat = m / k.bc1;
    const double vhat = v / k.bc2;
    return -k.lr * k.wd * x - k.lr * mhat / (std::sqrt(vhat) + k.eps);
}

void require_finite(std::string_view name, std::span<const double> g) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(g[i]))
            throw NumericError("non-finite gradient in '" + std::string(name) + "' at component " + std::to_string(i));
}

}  // namespace

SparseAdamW::SparseAdamW(AdamWConfig config, const SparseParameters& params, Precision precision)
    : config_(config), precision_(precision) {
    for (const auto& [name, sp] : params)
        state_.emplace(name, Moments{std::vector<double>(sp.indices.size(), 0.0), std::vector<double>(sp.indices.size(), 0.0)});
}

void SparseAdamW::step(SparseParameters& params, const NamedMap<std::vector<double>>& grads, double lr_scale) {
    for (const auto& [name, sp] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) throw ShapeError("no sparse gradient for '" + name + "'");
        if (g->second.size() != sp.indices.size()) throw ShapeError("sparse gradient misaligned for '" + name + "'");
        require_finite(name, g->second);
    }
    ++t_;
    const AdamWCoeffs k = coeffs(config_, t_, lr_scale);
    for (auto& [name, sp] : params) {
        const auto& g = grads.find(name)->second;
        auto& st = state_.at(name);
        for (std::size_t j = 0; j < sp.indices.size(); ++j) {
            const double d = adamw_delta(k, sp.base[j] + sp.delta[j], g[j], st.m[j], st.v[j]);
            sp.delta[j] = quantize(precision_, sp.delta[j] + d);
            st.m[j] = quantize(precision_, st.m[j]);
            st.v[j] = quantize(precision_, st.v[j]);
        }
    }
}

void SparseAdamW::remap(std::string_view name, std::span<const std::uint64_t> old_indices,
                        std::span<const std::uint64_t> new_indices) {
    auto it = state_.find(name);
    if (it == state_.end()) throw ShapeError("no optimizer state for '" + std::string(name) + "'");
    Moments next{std::vector<double>(new_indices.size(), 0.0), std::vector<double>(new_indices.size(), 0.0)};
    std::size_t i = 0;
    for (std::size_t j = 0; j < new_indices.size(); ++j) {
        while (i < old_indices.size() && old_indices[i] < new_indices[j]) ++i;
        if (i < old_indices.size() && old_indices[i] == new_indices[j]) {
            next.m[j] = it->second.m[i];
            next.v[j] = it->second.v[i];
        }
    }
    it->second = std::move(next);
}

std::size_t SparseAdamW::state_elements() const {
    std::size_t n = 0;
    for (const auto& [_, st] : state_) n += st.m.size() + st.v.size();
    return n;
}

void DenseAdamW::step(ParamSet& params, const NamedMap<Tensor>& grads, double lr_scale) {
    for (const auto& [name, g] : grads) {
        auto p = params.find(name);
        if (p == params.end()) throw ShapeError("dense optimizer: unknown parameter '" + name + "'");
        if (p->second.shape() != g.shape()) throw ShapeError("dense optimizer: gradient shape differs for '" + name + "'");
        require_finite(name, g.data());
    }
    ++t_;
    const AdamWCoeffs k = coeffs(config_, t_, lr_scale);
    for (const auto& [name, g] : grads) {
        auto x = params.find(name)->second.data();
        auto [st, fresh] = state_.try_emplace(name);
        if (fresh) {
            st->second.m.assign(x.size(), 0.0);
            st->second.v.assign(x.size(), 0.0);
        }
        auto& mom = st->second;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = quantize(precision_, x[i] + adamw_delta(k, x[i], g[i], mom.m[i], mom.v[i]));
            mom.m[i] = quantize(precision_, mom.m[i]);
            mom.v[i] = quantize(precision_, mom.v[i]);
        }
    }
}

std::size_t DenseAdamW::state_elements() const {
    std::size_t n = 0;
    for (const auto& [_, st] : state_) n += st.m.size() + st.v.size();
    return n;
}

MemoryReport memory_report(const MaskSelection& mask, const ParamSet& params) {
    MemoryReport r;
    for (const auto& [name, idx] : mask.indices) {
        auto it = params.find(name);
        if (it == params.end()) throw ShapeError("mask names unknown parameter '" + name + "'");
        r.param_elements += it->second.size();
        r.sparse_grad_elements += idx.size();
    }
    r.optim_state_elements = 2 * r.sparse_grad_elements;
    if (r.param_elements) {
        r.grad_ratio = static_cast<double>(r.sparse_grad_elements) / static_cast<double>(r.param_elements);
        r.optim_ratio = static_cast<double>(r.optim_state_elements) / (2.0 * static_cast<double>(r.param_elements));
    }
    return r;
}

}  // namespace siftlab
