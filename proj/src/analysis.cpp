// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "siftlab/error.hpp"

namespace siftlab {

namespace {

std::vector<double> sorted_magnitudes(std::span<const double> g) {
    std::vector<double> a(g.size());
    std::transform(g.begin(), g.end(), a.begin(), [](double x) { return std::abs(x); });
    std::sort(a.begin(), a.end(), std::greater<>());
    return a;
}

}  // namespace

SparsityProfile sparsity_profile(std::span<const double> g, std::span<const double> fractions) {
    if (g.empty()) throw ConfigError("sparsity profile of an empty gradient");
    const auto a = sorted_magnitudes(g);
    std::vector<double> cum_sq(a.size()), cum_abs(a.size());
    double s2 = 0.0, s1 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cum_sq[i] = (s2 += a[i] * a[i]);
        cum_abs[i] = (s1 += a[i]);
    }
    if (s2 == 0.0) throw ConfigError("sparsity profile undefined for an all-zero gradient");

    SparsityProfile p;
    p.n = g.size();
    p.fractions.assign(fractions.begin(), fractions.end());
    std::sort(p.fractions.begin(), p.fractions.end());
    for (double f : p.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("profile fractions must lie in (0, 1]");
        auto k = static_cast<std::size_t>(std::ceil(f * static_cast<double>(p.n) * (1.0 - 1e-12)));
        k = std::clamp<std::size_t>(k, 1, p.n);
        p.energy_fraction.push_back(k == p.n ? 1.0 : cum_sq[k - 1] / s2);
        p.abs_fraction.push_back(k == p.n ? 1.0 : cum_abs[k - 1] / s1);
    }
    return p;
}

double epsilon_for_tau(std::span<const double> g, std::size_t tau) {
    if (tau < 1 || tau >= g.size())
        throw ConfigError("tau must satisfy 1 <= tau < n (tau=" + std::to_string(tau) + ", n=" + std::to_string(g.size()) + ")");
    const auto a = sorted_magnitudes(g);
    double top = 0.0;
    for (std::size_t j = 0; j < tau; ++j) top += a[j] * a[j];
    if (top == 0.0) throw ConfigError("top-tau gradient energy is zero");
    return a[tau] * a[tau] / top;
}

double min_subspace_cosine(std::span<const double> g, std::span<const std::uint64_t> mask) {
    if (mask.empty()) throw ConfigError("subspace mask is empty");
    double total = 0.0;
    for (double x : g) total += x * x;
    if (total == 0.0) throw ConfigError("cosine undefined for a zero gradient");
    double proj = 0.0;
    for (std::uint64_t i : mask) {
        if (i >= g.size()) throw ShapeError("mask index out of range");
        proj += g[i] * g[i];
    }
    return -std::sqrt(proj / total);
}

DescentBoundReport verify_descent_bound(std::span<const double> g, std::size_t tau) {
    DescentBoundReport r;
    r.n = g.size();
    r.tau = tau;
    r.epsilon = epsilon_for_tau(g, tau);
    r.cosine_min = min_subspace_cosine(g, top_k_indices(g, tau));
    r.bound = -1.0 / std::sqrt(1.0 + r.epsilon * static_cast<double>(r.n - tau));
    r.tau_over_n_bound = -static_cast<double>(tau) / static_cast<double>(r.n);
    r.holds = r.cosine_min <= r.bound + 1e-12;
    return r;
}

GradHistogram grad_histogram(std::span<const double> g, std::size_t bins, bool log_scale,
                             std::optional<std::pair<double, double>> range) {
    if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
    GradHistogram h;
    h.log_scale = log_scale;
    h.counts.assign(bins, 0);
    if (g.empty()) return h;

    double sum = 0.0;
    h.min = g[0];
    h.max = g[0];
    for (double x : g) {
        sum += x;
        h.min = std::min(h.min, x);
        h.max = std::max(h.max, x);
    }
    h.mean = sum / static_cast<double>(g.size());
    double ss = 0.0;
    for (double x : g) ss += (x - h.mean) * (x - h.mean);
    h.stddev = std::sqrt(ss / static_cast<double>(g.size()));

    std::vector<double> xs;
    xs.reserve(g.size());
    for (double x : g) {
        if (!log_scale)
            xs.push_back(x);
        else if (x != 0.0)
            xs.push_back(std::log10(std::abs(x)));
    }
    if (xs.empty()) return h;
    double lo, hi;
    if (range) {
        std::tie(lo, hi) = *range;
    } else {
        lo = *std::min_element(xs.begin(), xs.end());
        hi = *std::max_element(xs.begin(), xs.end());
    }
    if (hi <= lo) hi = lo + 1.0;
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
    for (double x : xs) {
        if (x < lo || x > hi) continue;
        // [lo, hi) per bin; the top bin also takes its upper edge.
        const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), x);
        const auto bin = static_cast<std::size_t>(it - h.edges.begin()) - 1;
        h.counts[std::min(bin, bins - 1)]++;
    }
    return h;
}

double captured_energy(const NamedMap<Tensor>& grads, const MaskSelection& mask) {
    double total = 0.0;
    std::vector<double> kept_sq;
    for (const auto& [name, g] : grads) {
        for (double x : g.data()) total += x * x;
        for (std::uint64_t i : mask.at(name)) kept_sq.push_back(g[i] * g[i]);
    }
    // Largest terms first: a selection that dominates another term by term
    // then also has the larger rounded sum.
    std::sort(kept_sq.begin(), kept_sq.end(), std::greater<>());
    double kept = 0.0;
    for (double v : kept_sq) kept += v;
    if (total == 0.0) throw ConfigError("captured energy undefined for a zero gradient");
    return kept / total;
}

NamedMap<Tensor> batch_gradients(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                                 const Batch& batch, Precision precision) {
    Tape tape(precision);
    for (const auto& n : names) tape.mark_trainable(n);
    tape.backward(model.loss(tape, params, batch));
    NamedMap<Tensor> out;
    for (auto& [name, g] : tape.take_grads()) out.emplace(name, std::move(g));
    return out;
}

std::vector<double> flatten(const NamedMap<Tensor>& tensors) {
    std::vector<double> out;
    for (const auto& [_, t] : tensors) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

std::vector<CaptureRow> mask_capture_series(const Model& model, const ParamSet& params, const MaskSelection& mask_first,
                                            BatchStream& stream, std::size_t k_batches, Precision precision) {
    if (k_batches == 0) throw ConfigError("capture series needs at least one batch");
    std::vector<std::string> names;
    for (const auto& [name, _] : mask_first.indices) names.push_back(name);
    if (names.empty()) throw ConfigError("capture series needs a non-empty mask");

    std::vector<CaptureRow> rows;
    for (std::size_t b = 0; b < k_batches; ++b) {
        const Batch batch = stream.next_cycling();
        const auto grads = batch_gradients(model, params, names, batch, precision);
        MaskSelection own;
        own.shapes = mask_first.shapes;
        for (const auto& [name, g] : grads) own.indices.emplace(name, top_k_indices(g.data(), mask_first.at(name).size()));
        rows.push_back(CaptureRow{b, captured_energy(grads, own), captured_energy(grads, mask_first)});
    }
    return rows;
}

}  // namespace siftlab
