// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "siftlab/analysis.hpp"
#include "siftlab/error.hpp"

using namespace siftlab;

namespace {
const std::vector<double> kG{3, -4, 0.1, 0.2};
}

TEST(Profile, EnergyAtHalf) {
    const std::vector<double> f{0.5};
    const auto p = sparsity_profile(kG, f);
    EXPECT_NEAR(p.energy_fraction[0], 25.0 / 25.05, 1e-15);
    EXPECT_NEAR(p.abs_fraction[0], 7.0 / 7.3, 1e-15);
}

TEST(Profile, OneHotAndUniform) {
    std::vector<double> hot(50, 0.0);
    hot[17] = -2.0;
    const std::vector<double> fs{0.01, 0.1, 0.5, 1.0};
    for (double e : sparsity_profile(hot, fs).energy_fraction) EXPECT_EQ(e, 1.0);
    const std::vector<double> uni(100, 0.3), quarter{0.25};
    EXPECT_NEAR(sparsity_profile(uni, quarter).energy_fraction[0], 0.25, 1e-12);
    const std::vector<double> zeros(4, 0.0);
    EXPECT_THROW(sparsity_profile(zeros, quarter), ConfigError);
}

TEST(Epsilon, Examples) {
    EXPECT_NEAR(epsilon_for_tau(std::vector<double>{4, 3, 0.2, 0.1}, 2), 0.04 / 25.0, 1e-17);
    EXPECT_EQ(epsilon_for_tau(std::vector<double>{0, 5, 0}, 1), 0.0);
    EXPECT_EQ(epsilon_for_tau(std::vector<double>{-2, 2}, 1), 1.0);
}

TEST(SubspaceCosine, Examples) {
    const std::vector<std::uint64_t> m01{0, 1}, all{0, 1, 2, 3};
    EXPECT_NEAR(min_subspace_cosine(kG, m01), -5.0 / std::sqrt(25.05), 1e-15);
    EXPECT_NEAR(min_subspace_cosine(kG, all), -1.0, 1e-15);
    const std::vector<double> g{0, 0, 1, 2};
    EXPECT_EQ(min_subspace_cosine(g, m01), 0.0);
}

TEST(DescentBound, WorkedExample) {
    const auto r = verify_descent_bound(kG, 2);
    EXPECT_NEAR(r.cosine_min, -0.99900, 5e-6);
    EXPECT_NEAR(r.bound, -1.0 / std::sqrt(1.0 + 0.0016 * 2), 1e-12);
    EXPECT_TRUE(r.holds);
    EXPECT_EQ(r.tau_over_n_bound, -0.5);
}

TEST(DescentBound, OneHotHoldsWithEquality) {
    const std::vector<double> g{0, 0, 7, 0};
    const auto r = verify_descent_bound(g, 1);
    EXPECT_EQ(r.cosine_min, -1.0);
    EXPECT_EQ(r.bound, -1.0);
    EXPECT_TRUE(r.holds);
}

TEST(DescentBound, SeededPropertySweep) {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 10 + rng.below(400);
        std::vector<double> g(n);
        for (double& v : g) v = rng.normal() * std::exp(3.0 * rng.normal());
        for (double frac : {0.01, 0.05, 0.10}) {
            const std::size_t tau = std::min(n - 1, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(frac * n))));
            ASSERT_TRUE(verify_descent_bound(g, tau).holds) << trial << " " << frac;
        }
    }
}

TEST(TopK, BruteForceOptimality) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        std::vector<double> g(n);
        for (double& v : g) v = trial % 3 == 0 ? static_cast<double>(static_cast<int>(rng.below(5)) - 2) : rng.normal();
        for (std::size_t k = 1; k <= n; ++k)
            ASSERT_EQ(oracle::subset_energy(g, top_k_indices(g, k)), oracle::best_subspace_energy(g, k));
    }
}

TEST(Histogram, BinRule) {
    const std::vector<double> g{-1, 0, 1};
    const auto h = grad_histogram(g, 2, false, std::pair{-1.0, 1.0});
    EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(h.edges, (std::vector<double>{-1, 0, 1}));
}

TEST(Histogram, CountsSumToNAndSymmetricMean) {
    Rng rng(1);
    std::vector<double> g;
    for (int i = 0; i < 500; ++i) {
        const double v = rng.normal();
        g.push_back(v);
        g.push_back(-v);
    }
    const auto h = grad_histogram(g, 13);
    EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), g.size());
    EXPECT_NEAR(h.mean, 0.0, 1e-12);
    const auto lg = grad_histogram(g, 9, true);
    EXPECT_EQ(std::accumulate(lg.counts.begin(), lg.counts.end(), std::size_t{0}), g.size());
}

TEST(Capture, IdenticalBatchesCaptureEverything) {
    TaskSizes sizes;
    sizes.finetune_train = 8;
    const auto d = make_task(TaskKind::SeqClassify, 0, sizes);
    ModelConfig c;
    c.hidden = 16;
    c.heads = 2;
    c.vocab = d.vocab;
    c.seq_len = d.seq_len;
    Model model(c);
    const ParamSet ps = build_model(c);
    const auto names = select_trainable(ps, ModuleFilter::QKVO);
    // One batch per epoch, so every batch is the same examples (reshuffled order).
    BatchStream s(d, Split::FinetuneTrain, 8, 0);
    const auto mask = calibrate_mask(model, ps, names, s, 0.05, 1, Granularity::PerTensor);
    const auto rows = mask_capture_series(model, ps, mask, s, 4);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_NEAR(r.fixed_mask_fraction, r.own_topk_fraction, 1e-12);
        EXPECT_LE(r.fixed_mask_fraction, r.own_topk_fraction);
    }
}

TEST(Capture, FixedNeverExceedsOwnTopK) {
    const auto d = make_task(TaskKind::CharLm, 2, TaskSizes{});
    ModelConfig c;
    c.hidden = 16;
    c.heads = 2;
    c.vocab = d.vocab;
    c.seq_len = d.seq_len;
    Model model(c);
    const ParamSet ps = build_model(c);
    BatchStream s(d, Split::FinetuneTrain, 16, 3);
    const auto mask = calibrate_mask(model, ps, select_trainable(ps, ModuleFilter::QKVO), s, 0.02, 1,
                                     Granularity::PerTensor);
    for (const auto& r : mask_capture_series(model, ps, mask, s, 6)) EXPECT_LE(r.fixed_mask_fraction, r.own_topk_fraction);
}
