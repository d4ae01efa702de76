// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siftlab/models.hpp"

namespace siftlab {

enum class TaskKind { CharLm, ModularArith, SeqClassify };
enum class Split { Pretrain, FinetuneTrain, FinetuneEval };

TaskKind task_kind_from_string(const std::string& s);
const char* to_string(TaskKind k);
Split split_from_string(const std::string& s);
const char* to_string(Split s);

struct TaskSizes {
    std::size_t pretrain = 512;
    std::size_t finetune_train = 256;
    std::size_t finetune_eval = 256;
    std::size_t seq_len = 8;     // ignored by modular-arith (always 3)
    std::size_t vocab = 16;      // modular-arith: modulus + 1
    std::size_t modulus = 97;    // modular-arith only
    std::size_t num_classes = 4; // seq-classify only
};

struct Example {
    std::uint64_t id = 0;
    std::vector<int> tokens;
    int target = 0;
};

/// A pre-train split and a shifted fine-tune task, generated from a seed.
///
/// * modular-arith: tokens (a, b, =). Pre-train labels (a+b) mod m, fine-tune
///   labels (a-b) mod m. Every (a, b) pair appears in at most one split.
/// * char-lm: windows from a seeded first-order Markov source; the target is
///   the next symbol. Fine-tune text comes from the same source with a third
///   of its transition rows redrawn.
/// * seq-classify: uniform random tokens. Pre-train label is the token at
///   position 0 mod C, fine-tune label the token at position 1 mod C.
struct Dataset {
    TaskKind kind = TaskKind::ModularArith;
    std::uint64_t seed = 0;
    std::size_t vocab = 0;
    std::size_t seq_len = 0;
    std::size_t num_classes = 0;
    std::map<Split, std::vector<Example>> splits;

    /// Throws ConfigError if the split is missing or empty.
    const std::vector<Example>& split(Split s) const;
};

/// Throws ConfigError for zero sizes or more pairs than modular-arith has.
Dataset make_task(TaskKind kind, std::uint64_t seed, const TaskSizes& sizes);

Batch make_batch(std::span<const Example> examples, std::size_t seq_len);
Batch make_batch(const std::vector<const Example*>& examples, std::size_t seq_len);

/// Seeded shuffled batches over one split. Each epoch is a fresh permutation
/// derived from (seed, epoch); the last partial batch is kept.
class BatchStream {
public:
    BatchStream(const Dataset& dataset, Split split, std::size_t batch_size, std::uint64_t seed);

    /// Next batch of the current epoch, or nullopt at its end (the following
    /// call starts the next epoch).
    std::optional<Batch> next();
    /// Like next() but rolls over epochs transparently.
    Batch next_cycling();

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batches_per_epoch() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }
    std::size_t batch_size() const noexcept { return batch_size_; }

private:
    void reshuffle();

    const std::vector<Example>* examples_;
    std::size_t seq_len_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

/// One line per example: `<split> <id> <target> <tok> <tok> ...`.
void write_dataset_text(const std::filesystem::path& path, const Dataset& dataset);

}  // namespace siftlab
