// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/tasks.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "siftlab/error.hpp"
#include "siftlab/rng.hpp"

namespace siftlab {

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "char-lm") return TaskKind::CharLm;
    if (s == "modular-arith") return TaskKind::ModularArith;
    if (s == "seq-classify") return TaskKind::SeqClassify;
    throw ConfigError("unknown task kind '" + s + "'");
}

const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::CharLm: return "char-lm";
        case TaskKind::ModularArith: return "modular-arith";
        case TaskKind::SeqClassify: return "seq-classify";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "pretrain") return Split::Pretrain;
    if (s == "finetune-train") return Split::FinetuneTrain;
    if (s == "finetune-eval") return Split::FinetuneEval;
    throw ConfigError("unknown split '" + s + "'");
}

const char* to_string(Split s) {
    switch (s) {
        case Split::Pretrain: return "pretrain";
        case Split::FinetuneTrain: return "finetune-train";
        case Split::FinetuneEval: return "finetune-eval";
    }
    return "?";
}

const std::vector<Example>& Dataset::split(Split s) const {
    auto it = splits.find(s);
    if (it == splits.end() || it->second.empty()) throw ConfigError(std::string("split '") + to_string(s) + "' is empty");
    return it->second;
}

namespace {

constexpr Split kSplits[] = {Split::Pretrain, Split::FinetuneTrain, Split::FinetuneEval};

std::size_t split_size(const TaskSizes& sizes, Split s) {
    switch (s) {
        case Split::Pretrain: return sizes.pretrain;
        case Split::FinetuneTrain: return sizes.finetune_train;
        case Split::FinetuneEval: return sizes.finetune_eval;
    }
    return 0;
}

void modular_arith(Dataset& ds, const TaskSizes& sizes) {
    const std::size_t m = sizes.modulus;
    if (m < 2) throw ConfigError("modulus must be >= 2");
    const std::size_t total = sizes.pretrain + sizes.finetune_train + sizes.finetune_eval;
    if (total > m * m) throw ConfigError("modular-arith has only " + std::to_string(m * m) + " pairs");
    ds.vocab = m + 1;
    ds.seq_len = 3;
    ds.num_classes = m;

    std::vector<std::size_t> pairs(m * m);
    std::iota(pairs.begin(), pairs.end(), std::size_t{0});
    Rng rng(derive_seed(ds.seed, 1));
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);

    std::size_t next = 0;
    for (Split s : kSplits) {
        auto& out = ds.splits[s];
        for (std::size_t i = 0; i < split_size(sizes, s); ++i, ++next) {
            const int a = static_cast<int>(pairs[next] / m);
            const int b = static_cast<int>(pairs[next] % m);
            const int mi = static_cast<int>(m);
            const int label = s == Split::Pretrain ? (a + b) % mi : ((a - b) % mi + mi) % mi;
            out.push_back(Example{next, {a, b, mi}, label});
        }
    }
}

using Transitions = std::vector<std::vector<double>>;  // cumulative rows

std::vector<double> random_row(Rng& rng, std::size_t v) {
    std::vector<double> row(v);
    double z = 0.0;
    for (double& w : row) z += (w = std::exp(2.0 * rng.normal()));
    double acc = 0.0;
    for (double& w : row) w = (acc += w / z);
    row.back() = 1.0;
    return row;
}

int sample_row(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform();
    std::size_t j = 0;
    while (j + 1 < cdf.size() && u >= cdf[j]) ++j;
    return static_cast<int>(j);
}

void char_lm(Dataset& ds, const TaskSizes& sizes) {
    const std::size_t v = sizes.vocab;
    if (v < 2 || sizes.seq_len < 1) throw ConfigError("char-lm needs vocab >= 2 and seq_len >= 1");
    ds.vocab = v;
    ds.seq_len = sizes.seq_len;
    ds.num_classes = v;

    Rng table_rng(derive_seed(ds.seed, 2));
    Transitions pre(v);
    for (auto& row : pre) row = random_row(table_rng, v);
    Transitions fine = pre;
    for (std::size_t r = 0; r < v; r += 3) fine[r] = random_row(table_rng, v);

    Rng rng(derive_seed(ds.seed, 3));
    std::uint64_t next = 0;
    for (Split s : kSplits) {
        const Transitions& table = s == Split::Pretrain ? pre : fine;
        auto& out = ds.splits[s];
        for (std::size_t i = 0; i < split_size(sizes, s); ++i) {
            Example ex{next++, {}, 0};
            int c = static_cast<int>(rng.below(v));
            for (std::size_t t = 0; t < ds.seq_len; ++t) {
                ex.tokens.push_back(c);
                c = sample_row(table[static_cast<std::size_t>(c)], rng);
            }
            ex.target = c;
            out.push_back(std::move(ex));
        }
    }
}

void seq_classify(Dataset& ds, const TaskSizes& sizes) {
    const std::size_t v = sizes.vocab;
    const std::size_t c = sizes.num_classes;
    if (sizes.seq_len < 2) throw ConfigError("seq-classify needs seq_len >= 2");
    if (c < 2 || c > v) throw ConfigError("seq-classify needs 2 <= num_classes <= vocab");
    ds.vocab = v;
    ds.seq_len = sizes.seq_len;
    ds.num_classes = c;

    Rng rng(derive_seed(ds.seed, 4));
    std::uint64_t next = 0;
    for (Split s : kSplits) {
        auto& out = ds.splits[s];
        const std::size_t key = s == Split::Pretrain ? 0 : 1;
        for (std::size_t i = 0; i < split_size(sizes, s); ++i) {
            Example ex{next++, {}, 0};
            for (std::size_t t = 0; t < ds.seq_len; ++t) ex.tokens.push_back(static_cast<int>(rng.below(v)));
            ex.target = ex.tokens[key] % static_cast<int>(c);
            out.push_back(std::move(ex));
        }
    }
}

}  // namespace

Dataset make_task(TaskKind kind, std::uint64_t seed, const TaskSizes& sizes) {
    if (sizes.pretrain == 0 || sizes.finetune_train == 0 || sizes.finetune_eval == 0)
        throw ConfigError("task split sizes must be positive");
    Dataset ds;
    ds.kind = kind;
    ds.seed = seed;
    switch (kind) {
        case TaskKind::ModularArith: modular_arith(ds, sizes); break;
        case TaskKind::CharLm: char_lm(ds, sizes); break;
        case TaskKind::SeqClassify: seq_classify(ds, sizes); break;
    }
    return ds;
}

Batch make_batch(const std::vector<const Example*>& examples, std::size_t seq_len) {
    Batch b;
    b.seq_len = seq_len;
    b.tokens.reserve(examples.size() * seq_len);
    for (const Example* ex : examples) {
        if (ex->tokens.size() != seq_len) throw ShapeError("example length differs from seq_len");
        b.tokens.insert(b.tokens.end(), ex->tokens.begin(), ex->tokens.end());
        b.targets.push_back(ex->target);
    }
    return b;
}

Batch make_batch(std::span<const Example> examples, std::size_t seq_len) {
    std::vector<const Example*> ptrs;
    ptrs.reserve(examples.size());
    for (const auto& ex : examples) ptrs.push_back(&ex);
    return make_batch(ptrs, seq_len);
}

BatchStream::BatchStream(const Dataset& dataset, Split split, std::size_t batch_size, std::uint64_t seed)
    : examples_(&dataset.split(split)), seq_len_(dataset.seq_len), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    order_.resize(examples_->size());
    reshuffle();
}

void BatchStream::reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    cursor_ = 0;
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) {
        ++epoch_;
        reshuffle();
        return std::nullopt;
    }
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<const Example*> picked;
    for (std::size_t i = cursor_; i < end; ++i) picked.push_back(&(*examples_)[order_[i]]);
    cursor_ = end;
    return make_batch(picked, seq_len_);
}

Batch BatchStream::next_cycling() {
    if (auto b = next()) return std::move(*b);
    return *next();
}

void write_dataset_text(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "# kind=" << to_string(dataset.kind) << " seed=" << dataset.seed << " vocab=" << dataset.vocab
        << " seq_len=" << dataset.seq_len << '\n';
    for (const auto& [split, examples] : dataset.splits)
        for (const auto& ex : examples) {
            out << to_string(split) << ' ' << ex.id << ' ' << ex.target;
            for (int t : ex.tokens) out << ' ' << t;
            out << '\n';
        }
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace siftlab
