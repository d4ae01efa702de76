// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's autodiff or optimizer code.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "siftlab/models.hpp"
#include "siftlab/rng.hpp"
#include "siftlab/tape.hpp"

namespace oracle {

using siftlab::Rng;
using siftlab::Shape;
using siftlab::Tensor;
using siftlab::Var;

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

// Values bounded away from zero, for ops with a kink there.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        const double m = 0.05 + rng.uniform();
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

struct GradCase {
    std::string op;
    std::vector<Tensor> inputs;
    std::function<Var(siftlab::Tape&, const std::vector<Var>&)> build;
};

struct GradCheck {
    double rel_error = 0.0;
    std::size_t checked = 0;
};

inline double projected_loss(const GradCase& c, const std::vector<Tensor>& inputs, const Tensor& weights) {
    siftlab::Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    const Var out = c.build(tape, vars);
    const auto y = out.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
}

// Central differences on L = sum(out * W) for a fixed random W, compared with
// the tape gradient as |analytic - numeric| / (|analytic| + |numeric|) over
// all input components.
inline GradCheck check_gradients(const GradCase& c, std::uint64_t seed, double h = 1e-6) {
    Rng rng(seed);
    siftlab::Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) tape.mark_trainable("x" + std::to_string(i));
    for (std::size_t i = 0; i < c.inputs.size(); ++i) vars.push_back(tape.param("x" + std::to_string(i), c.inputs[i]));
    const Var out = c.build(tape, vars);
    const Tensor weights = random_tensor(rng, out.shape());
    const Var loss = siftlab::ad::sum(siftlab::ad::mul(out, tape.constant(weights)));
    tape.backward(loss);

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    GradCheck result;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        const Tensor* g = tape.grad("x" + std::to_string(i));
        std::vector<Tensor> probe = c.inputs;
        for (std::size_t j = 0; j < probe[i].size(); ++j) {
            const double x = probe[i][j];
            probe[i][j] = x + h;
            const double up = projected_loss(c, probe, weights);
            probe[i][j] = x - h;
            const double down = projected_loss(c, probe, weights);
            probe[i][j] = x;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = (*g)[j];
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            ++result.checked;
        }
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    result.rel_error = denom < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
    return result;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// `per_op` random configurations of every primitive.
inline std::vector<GradCase> gradient_cases(std::uint64_t seed, std::size_t per_op) {
    namespace ad = siftlab::ad;
    Rng rng(seed);
    std::vector<GradCase> cases;
    for (std::size_t k = 0; k < per_op; ++k) {
        const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4), m = pick(rng, 1, 4), n = pick(rng, 1, 5);
        cases.push_back({"matmul", {random_tensor(rng, {m, n}), random_tensor(rng, {n, b})},
                         [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }});
        cases.push_back({"matmul-batched", {random_tensor(rng, {a, m, n}), random_tensor(rng, {a, n, b})},
                         [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }});
        cases.push_back({"matmul-shared", {random_tensor(rng, {a, m, n}), random_tensor(rng, {n, b})},
                         [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }});
        cases.push_back({"transpose", {random_tensor(rng, {a, m, n})},
                         [](auto&, auto& v) { return ad::transpose(v[0]); }});
        cases.push_back({"permute_0213", {random_tensor(rng, {a, b, m, n})},
                         [](auto&, auto& v) { return ad::permute_0213(v[0]); }});
        cases.push_back({"reshape", {random_tensor(rng, {a, m * n})},
                         [a, m, n](auto&, auto& v) { return ad::reshape(v[0], {a * m, n}); }});
        cases.push_back({"add", {random_tensor(rng, {a, m, n}), random_tensor(rng, {a, m, n})},
                         [](auto&, auto& v) { return ad::add(v[0], v[1]); }});
        cases.push_back({"add-broadcast", {random_tensor(rng, {a, m, n}), random_tensor(rng, {n})},
                         [](auto&, auto& v) { return ad::add(v[0], v[1]); }});
        cases.push_back({"sub-broadcast", {random_tensor(rng, {a, m, n}), random_tensor(rng, {m, n})},
                         [](auto&, auto& v) { return ad::sub(v[0], v[1]); }});
        cases.push_back({"mul-broadcast", {random_tensor(rng, {a, m, n}), random_tensor(rng, {n})},
                         [](auto&, auto& v) { return ad::mul(v[0], v[1]); }});
        const double c = rng.normal();
        cases.push_back({"scale", {random_tensor(rng, {m, n})}, [c](auto&, auto& v) { return ad::scale(v[0], c); }});
        cases.push_back({"relu", {away_from_zero(rng, {m, n})}, [](auto&, auto& v) { return ad::relu(v[0]); }});
        cases.push_back({"gelu", {random_tensor(rng, {m, n}, 2.0)}, [](auto&, auto& v) { return ad::gelu(v[0]); }});
        cases.push_back({"softmax", {random_tensor(rng, {a, m, n + 1})},
                         [](auto&, auto& v) { return ad::softmax(v[0]); }});
        cases.push_back({"causal-softmax", {random_tensor(rng, {a, m, m})},
                         [](auto&, auto& v) { return ad::softmax(ad::causal_mask(v[0])); }});
        cases.push_back({"layer_norm", {random_tensor(rng, {a, m, n + 1})},
                         [](auto&, auto& v) { return ad::layer_norm(v[0]); }});
        {
            const std::size_t vocab = pick(rng, 2, 6), t = pick(rng, 1, 4);
            std::vector<int> ids(a * t);
            for (int& id : ids) id = static_cast<int>(rng.below(vocab));
            cases.push_back({"embedding", {random_tensor(rng, {vocab, n})},
                             [ids, a, t](auto&, auto& v) { return ad::embedding(v[0], ids, {a, t}); }});
        }
        {
            const std::size_t classes = pick(rng, 2, 6);
            std::vector<int> targets(m);
            for (int& y : targets) y = static_cast<int>(rng.below(classes));
            cases.push_back({"cross_entropy", {random_tensor(rng, {m, classes})},
                             [targets](auto&, auto& v) { return ad::cross_entropy(v[0], targets); }});
        }
        cases.push_back({"mean", {random_tensor(rng, {a, m, n})}, [](auto&, auto& v) { return ad::mean(v[0]); }});
        cases.push_back({"sum", {random_tensor(rng, {a, m, n})}, [](auto&, auto& v) { return ad::sum(v[0]); }});
        cases.push_back({"last_position", {random_tensor(rng, {a, m, n})},
                         [](auto&, auto& v) { return ad::last_position(v[0]); }});
    }
    return cases;
}

// Plain-loop MLP with ReLU hidden layers and mean softmax cross-entropy.
// Weights are [in, out] row-major, matching the library's layout.
struct ReferenceMlp {
    std::vector<std::size_t> dims;

    static std::string weight_name(std::size_t layer, std::size_t layers) {
        return layer + 1 == layers ? "head.weight" : "layer." + std::to_string(layer) + ".mlp.weight";
    }
    static std::string bias_name(std::size_t layer, std::size_t layers) {
        return layer + 1 == layers ? "head.bias" : "layer." + std::to_string(layer) + ".mlp.bias";
    }

    // Returns the loss; fills `grads` (same names as params) when non-null.
    double loss(const std::map<std::string, std::vector<double>>& params, const std::vector<double>& x,
                const std::vector<int>& y, std::map<std::string, std::vector<double>>* grads) const {
        const std::size_t layers = dims.size() - 1;
        const std::size_t batch = y.size();
        std::vector<std::vector<double>> acts{x};
        for (std::size_t l = 0; l < layers; ++l) {
            const auto& w = params.at(weight_name(l, layers));
            const auto& b = params.at(bias_name(l, layers));
            const std::size_t in = dims[l], out = dims[l + 1];
            std::vector<double> z(batch * out);
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t j = 0; j < out; ++j) {
                    double s = b[j];
                    for (std::size_t i = 0; i < in; ++i) s += acts[l][r * in + i] * w[i * out + j];
                    z[r * out + j] = (l + 1 < layers) ? std::max(0.0, s) : s;
                }
            acts.push_back(std::move(z));
        }
        const std::size_t classes = dims.back();
        const auto& logits = acts.back();
        double total = 0.0;
        std::vector<double> dz(batch * classes);
        for (std::size_t r = 0; r < batch; ++r) {
            double mx = logits[r * classes];
            for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, logits[r * classes + j]);
            double den = 0.0;
            for (std::size_t j = 0; j < classes; ++j) den += std::exp(logits[r * classes + j] - mx);
            total += std::log(den) + mx - logits[r * classes + static_cast<std::size_t>(y[r])];
            for (std::size_t j = 0; j < classes; ++j) {
                const double p = std::exp(logits[r * classes + j] - mx) / den;
                dz[r * classes + j] = (p - (static_cast<int>(j) == y[r] ? 1.0 : 0.0)) / static_cast<double>(batch);
            }
        }
        if (grads) {
            grads->clear();
            for (std::size_t l = layers; l-- > 0;) {
                const auto& w = params.at(weight_name(l, layers));
                const std::size_t in = dims[l], out = dims[l + 1];
                std::vector<double> gw(in * out, 0.0), gb(out, 0.0), dprev(batch * in, 0.0);
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t j = 0; j < out; ++j) {
                        const double d = dz[r * out + j];
                        gb[j] += d;
                        for (std::size_t i = 0; i < in; ++i) {
                            gw[i * out + j] += acts[l][r * in + i] * d;
                            dprev[r * in + i] += w[i * out + j] * d;
                        }
                    }
                (*grads)[weight_name(l, layers)] = gw;
                (*grads)[bias_name(l, layers)] = gb;
                if (l > 0)
                    for (std::size_t k = 0; k < dprev.size(); ++k)
                        if (acts[l][k] <= 0.0) dprev[k] = 0.0;
                dz = std::move(dprev);
            }
        }
        return total / static_cast<double>(batch);
    }
};

// Textbook AdamW on flat vectors.
struct ReferenceAdamW {
    double lr, beta1, beta2, eps, wd;
    std::map<std::string, std::vector<double>> m, v;
    int t = 0;

    void step(std::map<std::string, std::vector<double>>& params, const std::map<std::string, std::vector<double>>& g) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (auto& [name, p] : params) {
            auto& mm = m[name];
            auto& vv = v[name];
            mm.resize(p.size(), 0.0);
            vv.resize(p.size(), 0.0);
            const auto& gg = g.at(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                mm[i] = beta1 * mm[i] + (1.0 - beta1) * gg[i];
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * gg[i] * gg[i];
                const double mhat = mm[i] / c1;
                const double vhat = vv[i] / c2;
                p[i] -= lr * wd * p[i];
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

// Largest squared norm of g over all k-element coordinate subsets, each
// summed in descending magnitude order.
inline double best_subspace_energy(const std::vector<double>& g, std::size_t k) {
    const std::size_t n = g.size();
    double best = -1.0;
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
        if (static_cast<std::size_t>(__builtin_popcount(bits)) != k) continue;
        std::vector<double> sq;
        for (std::size_t i = 0; i < n; ++i)
            if (bits & (1u << i)) sq.push_back(g[i] * g[i]);
        std::sort(sq.rbegin(), sq.rend());
        double s = 0.0;
        for (double v : sq) s += v;
        best = std::max(best, s);
    }
    return best;
}

inline double subset_energy(const std::vector<double>& g, const std::vector<std::uint64_t>& idx) {
    std::vector<double> sq;
    for (auto i : idx) sq.push_back(g[i] * g[i]);
    std::sort(sq.rbegin(), sq.rend());
    double s = 0.0;
    for (double v : sq) s += v;
    return s;
}

// floor(num * n / den) with a floor of one: the budget at rate num/den.
inline std::size_t budget(std::size_t n, std::size_t num, std::size_t den) { return std::max<std::size_t>(1, num * n / den); }

}  // namespace oracle
