// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "siftlab/error.hpp"
#include "siftlab/experiments.hpp"
#include "siftlab/sift.hpp"
#include "siftlab/trainer.hpp"

using namespace siftlab;

namespace {

NamedMap<Tensor> one(const std::string& name, std::vector<double> g) {
    NamedMap<Tensor> m;
    const Shape shape{g.size()};
    m.emplace(name, Tensor(shape, std::move(g)));
    return m;
}

}  // namespace

TEST(Mask, BudgetRule) {
    EXPECT_EQ(mask_budget(10, 0.3), 3u);
    EXPECT_EQ(mask_budget(100, 0.29), 29u);
    EXPECT_EQ(mask_budget(5, 0.01), 1u);
    EXPECT_EQ(mask_budget(1000, 0.05), 50u);
    for (std::size_t n = 1; n < 3000; n += 7)
        for (std::size_t num : {1, 8, 50, 290, 500}) ASSERT_EQ(mask_budget(n, num / 1000.0), oracle::budget(n, num, 1000)) << n << " " << num;
    EXPECT_THROW(check_rate(0.0), ConfigError);
    EXPECT_THROW(check_rate(1.5), ConfigError);
}

TEST(Mask, TopMagnitudeSelected) {
    const auto m = select_mask(one("w", {0.1, -5, 2}), 1.0 / 3.0, Granularity::PerTensor);
    EXPECT_EQ(m.at("w"), (std::vector<std::uint64_t>{1}));
}

TEST(Mask, TiePrefersLowerIndex) {
    const auto m = select_mask(one("w", {1, 1}), 0.5, Granularity::PerTensor);
    EXPECT_EQ(m.at("w"), (std::vector<std::uint64_t>{0}));
}

TEST(Mask, FullRateSelectsEverything) {
    const auto m = select_mask(one("w", {0, 0, 3, -1}), 1.0, Granularity::PerTensor);
    EXPECT_EQ(m.at("w"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
}

TEST(Mask, GlobalPoolSharesOneBudget) {
    NamedMap<Tensor> g;
    g.emplace("a", Tensor::from({0.1, 0.2, 0.3, 0.4}));
    g.emplace("b", Tensor::from({5, 6, 7, 8}));
    const auto m = select_mask(g, 0.5, Granularity::GlobalPool);
    EXPECT_TRUE(m.at("a").empty());
    EXPECT_EQ(m.at("b"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
    m.validate();
}

TEST(Mask, CalibrationOnTransformerMeetsInvariants) {
    const auto d = make_task(TaskKind::SeqClassify, 0, TaskSizes{});
    ModelConfig c;
    c.vocab = d.vocab;
    c.seq_len = d.seq_len;
    Model model(c);
    const ParamSet ps = build_model(c);
    const auto names = select_trainable(ps, ModuleFilter::QKVO);
    BatchStream s(d, Split::FinetuneTrain, 16, 0);
    const auto m = calibrate_mask(model, ps, names, s, 0.05, 2, Granularity::PerTensor);
    m.validate();
    for (const auto& n : names) EXPECT_EQ(m.at(n).size(), mask_budget(ps.at(n).size(), 0.05));
    BatchStream s2(d, Split::FinetuneTrain, 16, 0);
    EXPECT_EQ(calibrate_mask(model, ps, names, s2, 0.05, 2, Granularity::PerTensor), m);
}

TEST(RandomMask, DeterministicDistinctAndSized) {
    NamedMap<Shape> shapes{{"w", Shape{10}}, {"v", Shape{4, 25}}};
    const auto a = random_mask(shapes, 0.3, 9);
    EXPECT_EQ(a, random_mask(shapes, 0.3, 9));
    EXPECT_EQ(a.at("w").size(), 3u);
    EXPECT_EQ(a.at("v").size(), 30u);
    a.validate();
    const auto full = random_mask(shapes, 1.0, 1);
    EXPECT_EQ(full.at("w").size(), 10u);
    EXPECT_EQ(full.indices, select_mask(NamedMap<Tensor>{{"w", Tensor(Shape{10}, 1.0)}, {"v", Tensor(Shape{4, 25}, 1.0)}},
                                        1.0, Granularity::PerTensor)
                                .indices);
}

TEST(SparseGrad, GatherAndAccumulate) {
    const std::vector<double> g{3, -4, 0.1, 0.2};
    const std::vector<std::uint64_t> idx{0, 1};
    EXPECT_EQ(gather_sparse_grad(g, idx), (std::vector<double>{3, -4}));
    const std::vector<std::uint64_t> all{0, 1, 2, 3};
    EXPECT_EQ(gather_sparse_grad(g, all), g);
    const std::vector<std::uint64_t> bad{4};
    EXPECT_THROW(gather_sparse_grad(g, bad), ShapeError);

    MaskSelection m = select_mask(one("w", {3, -4, 0.1, 0.2}), 0.5, Granularity::PerTensor);
    SparseGradAccumulator acc(m);
    for (int i = 0; i < 2; ++i) {
        acc.add("w", g);
        acc.end_micro_batch();
    }
    EXPECT_EQ(acc.mean().at("w"), (std::vector<double>{3, -4}));
    EXPECT_EQ(acc.element_count(), 2u);
}

TEST(SparseAdamW, HandComputedFirstStep) {
    ParamSet p{{"w", Tensor::from({1.0, 1.0})}};
    MaskSelection m = select_mask(one("w", {0, 1}), 0.5, Granularity::PerTensor);
    auto sp = register_sparse_parameters(p, m);
    SparseAdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0}, sp);
    opt.step(sp, {{"w", {2.0}}});
    // m_hat = 2, v_hat = 4, update = -0.1 * 2 / (2 + 1e-8).
    EXPECT_NEAR(sp.at("w").delta[0], -0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_EQ(opt.step_count(), 1u);
    write_back(sp, p);
    EXPECT_EQ(p.at("w")[0], 1.0);
    EXPECT_EQ(p.at("w")[1], 1.0 + sp.at("w").delta[0]);
}

TEST(SparseAdamW, ZeroGradientLeavesIncrementUnchanged) {
    ParamSet p{{"w", Tensor::from({1, 2, 3})}};
    auto sp = register_sparse_parameters(p, select_mask(one("w", {1, 2, 3}), 1.0, Granularity::PerTensor));
    SparseAdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0}, sp);
    for (int i = 0; i < 3; ++i) opt.step(sp, {{"w", {0, 0, 0}}});
    EXPECT_EQ(sp.at("w").delta, (std::vector<double>{0, 0, 0}));
}

TEST(SparseAdamW, NonFiniteGradientThrowsWithoutMutation) {
    ParamSet p{{"w", Tensor::from({1, 2})}};
    auto sp = register_sparse_parameters(p, select_mask(one("w", {1, 2}), 1.0, Granularity::PerTensor));
    SparseAdamW opt(AdamWConfig{}, sp);
    EXPECT_THROW(opt.step(sp, {{"w", {1.0, std::nan("")}}}), NumericError);
    EXPECT_EQ(opt.step_count(), 0u);
    EXPECT_EQ(sp.at("w").delta, (std::vector<double>{0, 0}));
}

TEST(SparseAdamW, FullMaskMatchesReferenceAdamWWithDecay) {
    Rng rng(4);
    ParamSet p{{"a", oracle::random_tensor(rng, {3, 4})}, {"b", oracle::random_tensor(rng, {5})}};
    std::map<std::string, std::vector<double>> ref;
    for (const auto& [n, t] : p) ref[n] = t.values();
    NamedMap<Tensor> dummy{{"a", Tensor(Shape{3, 4}, 1.0)}, {"b", Tensor(Shape{5}, 1.0)}};
    auto sp = register_sparse_parameters(p, select_mask(dummy, 1.0, Granularity::PerTensor));
    const AdamWConfig cfg{0.01, 0.9, 0.99, 1e-8, 0.1};
    SparseAdamW opt(cfg, sp);
    oracle::ReferenceAdamW r{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, {}, {}};
    for (int step = 0; step < 20; ++step) {
        std::map<std::string, std::vector<double>> g;
        NamedMap<std::vector<double>> gs;
        for (const auto& [n, v] : ref) {
            std::vector<double> gv(v.size());
            for (double& x : gv) x = rng.normal();
            g[n] = gv;
            gs[n] = gv;
        }
        opt.step(sp, gs);
        r.step(ref, g);
    }
    write_back(sp, p);
    for (const auto& [n, v] : ref)
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(p.at(n)[i], v[i], 1e-12 * std::max(1.0, std::abs(v[i])));
}

TEST(Increment, MergeRules) {
    ParamSet p{{"w", Tensor::from({1, 1, 1})}};
    SparseIncrement empty;
    EXPECT_EQ(merge_increment(p, empty), p);
    SparseIncrement inc;
    inc.tensors["w"] = SparseDelta{Shape{3}, {2}, {0.5}};
    EXPECT_EQ(merge_increment(p, inc).at("w").values(), (std::vector<double>{1, 1, 1.5}));
    inc.tensors["w"].indices = {3};
    EXPECT_THROW(merge_increment(p, inc), ShapeError);
}

TEST(Memory, FivePercentOfOneTensor) {
    ParamSet p{{"w", Tensor(Shape{1000})}};
    const auto r = memory_report(random_mask({{"w", Shape{1000}}}, 0.05, 0), p);
    EXPECT_EQ(r.sparse_grad_elements, 50u);
    EXPECT_EQ(r.optim_state_elements, 100u);
    EXPECT_DOUBLE_EQ(r.grad_ratio, 0.05);
    EXPECT_DOUBLE_EQ(r.optim_ratio, 0.05);
    const auto full = memory_report(random_mask({{"w", Shape{1000}}}, 1.0, 0), p);
    EXPECT_DOUBLE_EQ(full.grad_ratio, 1.0);
}

TEST(Memory, PublishedFivePercentRow) {
    EXPECT_NEAR(0.626 / 12.55, 0.05, 0.001);
    EXPECT_NEAR(2.51 / 50.21, 0.05, 0.001);
}

namespace {

struct Fixture {
    Dataset data = make_task(TaskKind::SeqClassify, 0, [] {
        TaskSizes s;
        s.pretrain = 64;
        s.finetune_train = 64;
        s.finetune_eval = 64;
        s.seq_len = 5;
        return s;
    }());
    ModelConfig config = [this] {
        ModelConfig c;
        c.hidden = 16;
        c.heads = 2;
        c.vocab = data.vocab;
        c.seq_len = data.seq_len;
        return c;
    }();
    Model model{config};
    ParamSet params = build_model(config);
};

TrainOptions quick(Method m, double rate, Precision precision = Precision::F64) {
    TrainOptions o;
    o.method = m;
    o.rate = rate;
    o.precision = precision;
    o.epochs = 2;
    o.batch_size = 16;
    o.optim.lr = 0.01;
    return o;
}

}  // namespace

TEST(Trainer, SiftFullRateMatchesFullFineTuning) {
    Fixture f;
    const auto sift = run_training(f.model, f.data, f.params, quick(Method::Sift, 1.0));
    const auto full = run_training(f.model, f.data, f.params, quick(Method::Full, 1.0));
    ASSERT_EQ(sift.epochs.size(), full.epochs.size());
    for (std::size_t e = 0; e < sift.epochs.size(); ++e) {
        EXPECT_NEAR(sift.epochs[e].train_loss, full.epochs[e].train_loss, 1e-6);
        EXPECT_NEAR(sift.epochs[e].eval_loss, full.epochs[e].eval_loss, 1e-6);
    }
}

TEST(Trainer, HeadOnlyTrainsOnlyHead) {
    Fixture f;
    const auto r = run_training(f.model, f.data, f.params, quick(Method::HeadOnly, 0.01));
    EXPECT_TRUE(r.plan.masked.empty());
    EXPECT_FALSE(r.mask);
    for (const auto& n : r.plan.dense) EXPECT_TRUE(n.starts_with("head.")) << n;
    for (const auto& [n, t] : r.params)
        if (!n.starts_with("head.")) EXPECT_EQ(t, f.params.at(n)) << n;
}

TEST(Trainer, SiftChangesOnlyMaskedComponents) {
    Fixture f;
    const auto r = run_training(f.model, f.data, f.params, quick(Method::Sift, 0.05));
    ASSERT_TRUE(r.mask);
    EXPECT_NEAR(r.memory.grad_ratio, 0.05, 0.01);
    for (const auto& name : r.plan.masked) {
        const auto& idx = r.mask->at(name);
        const std::set<std::uint64_t> sel(idx.begin(), idx.end());
        for (std::size_t i = 0; i < r.params.at(name).size(); ++i)
            if (!sel.count(i)) ASSERT_EQ(r.params.at(name)[i], f.params.at(name)[i]);
    }
}

TEST(Trainer, MergedIncrementEvaluatesLikeLiveParameters) {
    Fixture f;
    auto opt = quick(Method::Sift, 0.05);
    opt.head_dense = false;
    const auto r = run_training(f.model, f.data, f.params, opt);
    const ParamSet merged = merge_increment(f.params, r.increment);
    const auto eval = split_batches(f.data, Split::FinetuneEval, 64);
    EXPECT_NEAR(split_loss(f.model, merged, eval, Precision::F64), split_loss(f.model, r.params, eval, Precision::F64),
                1e-6);
}

TEST(Trainer, HooksKeepOneLiveGradientBuffer) {
    Fixture f;
    TrainablePlan plan = plan_trainable(f.params, Method::Full, ModuleFilter::All, true);
    FineTuner t(f.model, f.params, plan, std::nullopt, AdamWConfig{}, Precision::F64);
    BatchStream s(f.data, Split::FinetuneTrain, 8, 0);
    Batch b = s.next_cycling();
    t.step(std::span<const Batch>(&b, 1));
    EXPECT_EQ(t.last_grad_stats().peak, 1u);
    EXPECT_EQ(t.last_grad_stats().allocations, f.params.size());
}

TEST(Trainer, ReselectionKeepsRetiredDeltas) {
    Fixture f;
    auto opt = quick(Method::Sift, 0.05);
    opt.reselect_interval = 1;
    const auto r = run_training(f.model, f.data, f.params, opt);
    const ParamSet merged = merge_increment(f.params, r.increment);
    for (const auto& name : r.plan.masked)
        for (std::size_t i = 0; i < merged.at(name).size(); ++i)
            ASSERT_NEAR(merged.at(name)[i], r.params.at(name)[i], 1e-12) << name;
}

TEST(Trainer, MicroBatchesAverageGradients) {
    Fixture f;
    TrainablePlan plan = plan_trainable(f.params, Method::Full, ModuleFilter::QKVO, false);
    BatchStream s(f.data, Split::FinetuneTrain, 8, 0);
    Batch a = s.next_cycling(), b = s.next_cycling();
    FineTuner two(f.model, f.params, plan, std::nullopt, AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0}, Precision::F64);
    std::vector<Batch> mb{a, b};
    two.step(mb);
    // One merged batch of 16 has the same mean gradient as two halves of 8.
    Batch ab = a;
    ab.tokens.insert(ab.tokens.end(), b.tokens.begin(), b.tokens.end());
    ab.targets.insert(ab.targets.end(), b.targets.begin(), b.targets.end());
    FineTuner one(f.model, f.params, plan, std::nullopt, AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0}, Precision::F64);
    one.step(std::span<const Batch>(&ab, 1));
    for (const auto& n : plan.dense)
        for (std::size_t i = 0; i < two.params().at(n).size(); ++i)
            ASSERT_NEAR(two.params().at(n)[i], one.params().at(n)[i], 1e-9);
}

TEST(Trainer, DivergenceIsReported) {
    Fixture f;
    auto opt = quick(Method::Full, 1.0);
    opt.optim.lr = 1e300;
    opt.epochs = 3;
    const auto r = run_training(f.model, f.data, f.params, opt);
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.error.empty());
}
