// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siftlab/analysis.hpp"
#include "siftlab/config.hpp"
#include "siftlab/landscape.hpp"
#include "siftlab/trainer.hpp"

namespace siftlab {

TaskSizes task_sizes(const RunConfig& cfg);
Dataset dataset_from_config(const RunConfig& cfg);
ModelConfig model_config_from_config(const RunConfig& cfg, const Dataset& dataset);

/// Sets every seed key to `seed`.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

struct PretrainResult {
    ParamSet theta0;  // initialisation
    ParamSet theta1;  // after dense training on the pre-train split
    std::vector<double> losses;
};

/// Dense AdamW on every parameter over the pre-train split.
PretrainResult pretrain(const Model& model, const Dataset& dataset, const RunConfig& cfg);

struct TrainOptions {
    Method method = Method::Sift;
    ModuleFilter filter = ModuleFilter::QKVO;
    double rate = 0.01;
    Granularity granularity = Granularity::PerTensor;
    Precision precision = Precision::F32;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    std::size_t micro_batches = 1;
    std::size_t calibration_batches = 1;
    std::size_t reselect_interval = 0;
    bool head_dense = true;
    AdamWConfig optim;
    LrSchedule schedule = LrSchedule::Constant;
    std::uint64_t order_seed = 0;
    std::uint64_t mask_seed = 0;
};

TrainOptions train_options(const RunConfig& cfg);

struct EpochMetrics {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    double eval_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    ParamSet params;
    SparseIncrement increment;
    std::optional<MaskSelection> mask;
    TrainablePlan plan;
    MemoryReport memory;
    std::size_t trainable_elements = 0;  // masked selections plus dense non-head tensors
    double final_accuracy = 0.0;
    bool diverged = false;
    std::string error;
};

/// Mask for `method` on `pretrained` (calibrated, random, or none).
std::optional<MaskSelection> build_mask(const Model& model, const Dataset& dataset, const ParamSet& pretrained,
                                        const TrainablePlan& plan, const TrainOptions& opt);

/// Fine-tunes on the fine-tune train split and evaluates on the eval split
/// after every epoch. A non-finite loss stops training and sets `diverged`.
TrainResult run_training(const Model& model, const Dataset& dataset, const ParamSet& pretrained,
                         const TrainOptions& opt);

std::vector<Batch> split_batches(const Dataset& dataset, Split split, std::size_t batch_size,
                                 std::size_t limit = 0);
double split_accuracy(const Model& model, const ParamSet& params, const std::vector<Batch>& batches,
                      Precision precision);
double split_loss(const Model& model, const ParamSet& params, const std::vector<Batch>& batches, Precision precision);

std::string metrics_csv(const std::vector<EpochMetrics>& epochs);
nlohmann::ordered_json memory_json(const MemoryReport& report);

struct CompareRow {
    std::string method;
    double rate = 0.0;
    std::size_t trainable_elements = 0;
    std::vector<double> accuracies;  // per seed
    double mean = 0.0;
    double stddev = 0.0;
};

struct CompareResult {
    std::vector<std::uint64_t> seeds;
    std::vector<CompareRow> rows;
    nlohmann::ordered_json audit;  // per rate: ordering sift >= random >= head-only
};

/// Every (method, rate) pair over every seed. Each seed reruns pre-training
/// with all seed keys set to that seed.
CompareResult run_compare(const RunConfig& cfg, const std::vector<std::string>& methods,
                          const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
                          unsigned threads = 1);
std::string compare_csv(const CompareResult& result);
nlohmann::ordered_json compare_json(const CompareResult& result);

/// Flattened gradient of the fine-tune loss on one batch.
std::vector<double> flat_gradient(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                                  const Batch& batch, Precision precision);

struct ConcentrationRow {
    std::string point;  // "theta0" or "theta1"
    std::size_t batch = 0;
    SparsityProfile profile;
};

/// Sparsity profiles at both points over the first `batches` fine-tune train
/// batches, for the filtered parameters.
std::vector<ConcentrationRow> gradient_concentration(const Model& model, const Dataset& dataset,
                                                     const PretrainResult& points, const RunConfig& cfg,
                                                     const std::vector<double>& fractions);
/// Mean energy fraction at `fraction` over the rows of one point.
double mean_energy_fraction(const std::vector<ConcentrationRow>& rows, const std::string& point, double fraction);

struct BoundRow {
    std::string point;
    std::size_t batch = 0;
    double tau_fraction = 0.0;
    double energy_fraction = 0.0;
    double abs_fraction = 0.0;
    DescentBoundReport report;
};

/// Descent-bound reports at theta0 and theta1 for tau in {0.5%, 1%, 5%} of n.
std::vector<BoundRow> bound_reports(const Model& model, const Dataset& dataset, const PretrainResult& points,
                                    const RunConfig& cfg);
std::string bound_csv(const std::vector<BoundRow>& rows);

struct CaptureStudy {
    std::vector<CaptureRow> theta0;
    std::vector<CaptureRow> theta1;
    double mean_gap_theta0 = 0.0;  // mean of own_topk - fixed_mask
    double mean_gap_theta1 = 0.0;
};

/// First-batch mask at analysis.rate, then capture over the next batches.
CaptureStudy capture_study(const Model& model, const Dataset& dataset, const PretrainResult& points,
                           const RunConfig& cfg);
std::string capture_csv(const CaptureStudy& study);

struct LandscapeResult {
    LandscapeScan scan1;
    LandscapeScan scan2;
};

LandscapeResult landscape_scans(const Model& model, const Dataset& dataset, const PretrainResult& points,
                                const RunConfig& cfg, unsigned threads, bool one_d, bool two_d);

/// Short content hash of a parameter set, used to label scans.
std::string params_id(const ParamSet& params);

}  // namespace siftlab
