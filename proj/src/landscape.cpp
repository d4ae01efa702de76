// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/landscape.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "siftlab/error.hpp"
#include "siftlab/rng.hpp"

namespace siftlab {

ParamSet interpolate_params(const ParamSet& theta0, const ParamSet& theta1, double alpha) {
    check_same_layout(theta0, theta1);
    ParamSet out = theta0;
    for (auto& [name, t] : out) {
        const auto& b = theta1.find(name)->second;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - alpha) * t[i] + alpha * b[i];
    }
    return out;
}

ParamSet param_difference(const ParamSet& theta1, const ParamSet& theta0) {
    check_same_layout(theta0, theta1);
    ParamSet out = theta1;
    for (auto& [name, t] : out) {
        const auto& a = theta0.find(name)->second;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= a[i];
    }
    return out;
}

ParamSet gen_second_direction(const ParamSet& delta1, std::uint64_t seed) {
    bool any = false;
    for (const auto& [_, t] : delta1)
        for (double v : t.data()) any = any || v != 0.0;
    if (!any) throw ConfigError("first direction is identically zero");
    Rng rng(seed);
    ParamSet out = delta1;
    for (auto& [_, t] : out)
        for (double& v : t.data()) v *= rng.normal();
    return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
    if (count == 0) return {};
    if (count == 1) return {lo};
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i)
        out[i] = i + 1 == count ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return out;
}

namespace {

template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& body) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < threads; ++w)
            workers.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < count && !failed;) {
                    try {
                        body(i);
                    } catch (...) {
                        if (!failed.exchange(true)) failure = std::current_exception();
                    }
                }
            });
    }
    if (failure) std::rethrow_exception(failure);
}

void record(LandscapeScan& scan, std::size_t i, double loss) {
    scan.losses[i] = loss;
    scan.nonfinite[i] = !std::isfinite(loss);
}

}  // namespace

LandscapeScan scan_1d(const LossFn& loss, const ParamSet& theta0, const ParamSet& theta1,
                      const std::vector<double>& alphas, unsigned threads) {
    if (alphas.empty()) throw ConfigError("alpha grid is empty");
    check_same_layout(theta0, theta1);
    LandscapeScan scan;
    scan.alphas = alphas;
    scan.losses.assign(alphas.size(), 0.0);
    scan.nonfinite.assign(alphas.size(), false);
    parallel_for(alphas.size(), threads,
                 [&](std::size_t i) { scan.losses[i] = loss(interpolate_params(theta0, theta1, alphas[i])); });
    for (std::size_t i = 0; i < scan.losses.size(); ++i) record(scan, i, scan.losses[i]);
    return scan;
}

LandscapeScan scan_2d(const LossFn& loss, const ParamSet& theta0, const ParamSet& theta1, const ParamSet& delta2,
                      const std::vector<double>& alphas, const std::vector<double>& betas, unsigned threads) {
    if (alphas.empty() || betas.empty()) throw ConfigError("landscape grids must be non-empty");
    check_same_layout(theta0, theta1);
    check_same_layout(theta0, delta2);
    LandscapeScan scan;
    scan.alphas = alphas;
    scan.betas = betas;
    const std::size_t nb = betas.size();
    scan.losses.assign(alphas.size() * nb, 0.0);
    scan.nonfinite.assign(alphas.size() * nb, false);
    parallel_for(alphas.size() * nb, threads, [&](std::size_t i) {
        ParamSet p = interpolate_params(theta0, theta1, alphas[i / nb]);
        const double beta = betas[i % nb];
        for (auto& [name, t] : p) {
            const auto& d = delta2.find(name)->second;
            for (std::size_t j = 0; j < t.size(); ++j) t[j] += beta * d[j];
        }
        scan.losses[i] = loss(p);
    });
    for (std::size_t i = 0; i < scan.losses.size(); ++i) record(scan, i, scan.losses[i]);
    return scan;
}

LossFn model_loss(const Model& model, std::vector<Batch> eval_batches, Precision precision) {
    if (eval_batches.empty()) throw ConfigError("evaluation set is empty");
    return [&model, batches = std::move(eval_batches), precision](const ParamSet& params) {
        double total = 0.0;
        std::size_t count = 0;
        for (const auto& b : batches) {
            try {
                total += model.evaluate(params, b, precision) * static_cast<double>(b.size());
            } catch (const NumericError&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
            count += b.size();
        }
        return total / static_cast<double>(count);
    };
}

}  // namespace siftlab
