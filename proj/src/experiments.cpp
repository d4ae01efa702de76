// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "siftlab/error.hpp"
#include "siftlab/persistence.hpp"

namespace siftlab {

namespace {

std::size_t positive(const RunConfig& cfg, const std::string& key) {
    const auto v = cfg.get_int(key);
    if (v <= 0) throw ConfigError("'" + key + "' must be positive");
    return static_cast<std::size_t>(v);
}

std::size_t non_negative(const RunConfig& cfg, const std::string& key) {
    const auto v = cfg.get_int(key);
    if (v < 0) throw ConfigError("'" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

std::vector<double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    // Sample standard deviation; zero for a single seed.
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
}

template <class F>
void run_parallel(std::size_t count, unsigned threads, F&& body) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

TaskSizes task_sizes(const RunConfig& cfg) {
    TaskSizes s;
    s.pretrain = positive(cfg, "task.pretrain_size");
    s.finetune_train = positive(cfg, "task.finetune_train_size");
    s.finetune_eval = positive(cfg, "task.finetune_eval_size");
    s.seq_len = positive(cfg, "task.seq_len");
    s.vocab = positive(cfg, "task.vocab");
    s.modulus = positive(cfg, "task.modulus");
    s.num_classes = positive(cfg, "task.num_classes");
    return s;
}

Dataset dataset_from_config(const RunConfig& cfg) {
    return make_task(task_kind_from_string(cfg.get_string("task.kind")), cfg.get_u64("task.seed"), task_sizes(cfg));
}

ModelConfig model_config_from_config(const RunConfig& cfg, const Dataset& dataset) {
    ModelConfig mc;
    mc.kind = model_kind_from_string(cfg.get_string("model.kind"));
    mc.hidden = positive(cfg, "model.hidden");
    mc.layers = positive(cfg, "model.layers");
    mc.heads = positive(cfg, "model.heads");
    mc.mlp_ratio = positive(cfg, "model.mlp_ratio");
    mc.attn_bias = cfg.get_bool("model.attn_bias");
    mc.seed = cfg.get_u64("model.seed");
    mc.vocab = dataset.vocab;
    mc.seq_len = dataset.seq_len;
    mc.mlp_dims = {dataset.seq_len * dataset.vocab};
    for (const auto& w : cfg.get_list("model.mlp_hidden")) {
        std::size_t v = 0;
        try {
            v = std::stoul(w);
        } catch (const std::exception&) {
            throw ConfigError("bad width '" + w + "' in model.mlp_hidden");
        }
        mc.mlp_dims.push_back(v);
    }
    mc.mlp_dims.push_back(dataset.vocab);
    mc.validate();
    return mc;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
    for (const auto& key : RunConfig::seed_keys()) cfg.set(key, std::to_string(seed));
}

PretrainResult pretrain(const Model& model, const Dataset& dataset, const RunConfig& cfg) {
    PretrainResult out;
    out.theta0 = build_model(model.config());
    const Precision precision = precision_from_string(cfg.get_string("train.precision"));
    AdamWConfig optim;
    optim.lr = cfg.get_double("pretrain.lr");
    optim.weight_decay = cfg.get_double("pretrain.weight_decay");
    TrainablePlan plan;
    plan.dense = select_trainable(out.theta0, ModuleFilter::All);
    FineTuner tuner(model, out.theta0, plan, std::nullopt, optim, precision);
    BatchStream stream(dataset, Split::Pretrain, positive(cfg, "pretrain.batch_size"),
                       cfg.get_u64("pretrain.order_seed"));
    const std::size_t steps = non_negative(cfg, "pretrain.steps");
    for (std::size_t s = 0; s < steps; ++s) {
        Batch b = stream.next_cycling();
        out.losses.push_back(tuner.step(std::span<const Batch>(&b, 1)));
    }
    out.theta1 = tuner.params();
    return out;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions o;
    o.method = method_from_string(cfg.get_string("train.method"));
    o.filter = module_filter_from_string(cfg.get_string("train.filter"));
    o.rate = cfg.get_double("train.rate");
    check_rate(o.rate);
    o.granularity = granularity_from_string(cfg.get_string("train.granularity"));
    o.precision = precision_from_string(cfg.get_string("train.precision"));
    o.epochs = positive(cfg, "train.epochs");
    o.batch_size = positive(cfg, "train.batch_size");
    o.micro_batches = positive(cfg, "train.micro_batches");
    o.calibration_batches = positive(cfg, "train.calibration_batches");
    o.reselect_interval = non_negative(cfg, "train.reselect_interval");
    o.head_dense = cfg.get_bool("train.head_dense");
    o.optim.lr = cfg.get_double("train.lr");
    o.optim.beta1 = cfg.get_double("train.beta1");
    o.optim.beta2 = cfg.get_double("train.beta2");
    o.optim.eps = cfg.get_double("train.eps");
    o.optim.weight_decay = cfg.get_double("train.weight_decay");
    o.schedule = lr_schedule_from_string(cfg.get_string("train.lr_schedule"));
    o.order_seed = cfg.get_u64("train.order_seed");
    o.mask_seed = cfg.get_u64("train.mask_seed");
    return o;
}

std::optional<MaskSelection> build_mask(const Model& model, const Dataset& dataset, const ParamSet& pretrained,
                                        const TrainablePlan& plan, const TrainOptions& opt) {
    if (plan.masked.empty()) return std::nullopt;
    if (opt.method == Method::Random) {
        NamedMap<Shape> shapes;
        for (const auto& name : plan.masked) shapes.emplace(name, pretrained.at(name).shape());
        return random_mask(shapes, opt.rate, opt.mask_seed);
    }
    // Same order as the training stream, so calibration sees the first batches.
    BatchStream calib(dataset, Split::FinetuneTrain, opt.batch_size, opt.order_seed);
    return calibrate_mask(model, pretrained, plan.masked, calib, opt.rate, opt.calibration_batches, opt.granularity,
                          opt.precision);
}

std::vector<Batch> split_batches(const Dataset& dataset, Split split, std::size_t batch_size, std::size_t limit) {
    const auto& ex = dataset.split(split);
    const std::size_t n = limit ? std::min(limit, ex.size()) : ex.size();
    std::vector<Batch> out;
    for (std::size_t i = 0; i < n; i += batch_size)
        out.push_back(make_batch(std::span<const Example>(ex).subspan(i, std::min(batch_size, n - i)), dataset.seq_len));
    return out;
}

double split_accuracy(const Model& model, const ParamSet& params, const std::vector<Batch>& batches,
                      Precision precision) {
    std::size_t hit = 0, total = 0;
    for (const auto& b : batches) {
        const auto pred = model.predict(params, b, precision);
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == b.targets[i];
        total += pred.size();
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

double split_loss(const Model& model, const ParamSet& params, const std::vector<Batch>& batches, Precision precision) {
    return model_loss(model, batches, precision)(params);
}

TrainResult run_training(const Model& model, const Dataset& dataset, const ParamSet& pretrained,
                         const TrainOptions& opt) {
    TrainResult out;
    out.plan = plan_trainable(pretrained, opt.method, opt.filter, opt.head_dense);
    out.mask = build_mask(model, dataset, pretrained, out.plan, opt);
    if (out.mask) out.trainable_elements = out.mask->selected();
    for (const auto& name : out.plan.dense)
        if (!is_head_param(name)) out.trainable_elements += pretrained.at(name).size();

    FineTuner tuner(model, pretrained, out.plan, out.mask, opt.optim, opt.precision);
    tuner.set_reselect_interval(opt.reselect_interval);
    BatchStream stream(dataset, Split::FinetuneTrain, opt.batch_size, opt.order_seed);
    const auto eval = split_batches(dataset, Split::FinetuneEval, 256);
    const std::size_t steps_per_epoch = (stream.batches_per_epoch() + opt.micro_batches - 1) / opt.micro_batches;
    const std::size_t total_steps = steps_per_epoch * opt.epochs;

    for (std::size_t epoch = 0; epoch < opt.epochs && !out.diverged; ++epoch) {
        EpochMetrics m;
        m.epoch = epoch + 1;
        double loss_sum = 0.0;
        std::size_t steps = 0;
        bool done = false;
        while (!done) {
            std::vector<Batch> micro;
            while (micro.size() < opt.micro_batches) {
                auto b = stream.next();
                if (!b) {
                    done = true;
                    break;
                }
                micro.push_back(std::move(*b));
            }
            if (micro.empty()) break;
            const double scale = opt.schedule == LrSchedule::LinearDecay
                                     ? 1.0 - static_cast<double>(tuner.steps_taken()) / static_cast<double>(total_steps)
                                     : 1.0;
            try {
                loss_sum += tuner.step(micro, scale);
            } catch (const NumericError& e) {
                out.diverged = true;
                out.error = e.what();
                break;
            }
            ++steps;
        }
        m.steps = steps;
        m.train_loss = steps ? loss_sum / static_cast<double>(steps) : std::nan("");
        m.eval_loss = split_loss(model, tuner.params(), eval, opt.precision);
        m.eval_accuracy = split_accuracy(model, tuner.params(), eval, opt.precision);
        out.epochs.push_back(m);
    }
    out.params = tuner.params();
    out.increment = tuner.increment();
    out.mask = tuner.mask();
    out.memory = tuner.instrumented_memory();
    out.final_accuracy = out.epochs.empty() ? 0.0 : out.epochs.back().eval_accuracy;
    return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& epochs) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : epochs)
        rows.push_back({std::to_string(e.epoch), std::to_string(e.steps), format_double(e.train_loss),
                        format_double(e.eval_loss), format_double(e.eval_accuracy)});
    return csv_table({"epoch", "steps", "train_loss", "eval_loss", "eval_accuracy"}, rows);
}

nlohmann::ordered_json memory_json(const MemoryReport& r) {
    nlohmann::ordered_json j;
    j["param_elements"] = r.param_elements;
    j["sparse_grad_elements"] = r.sparse_grad_elements;
    j["optim_state_elements"] = r.optim_state_elements;
    j["dense_param_elements"] = r.dense_param_elements;
    j["grad_ratio"] = r.grad_ratio;
    j["optim_ratio"] = r.optim_ratio;
    return j;
}

CompareResult run_compare(const RunConfig& cfg, const std::vector<std::string>& methods,
                          const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
                          unsigned threads) {
    if (methods.size() < 2) throw ConfigError("compare needs at least two methods");
    if (rates.empty() || seeds.empty()) throw ConfigError("compare needs rates and seeds");
    for (const auto& m : methods) method_from_string(m);
    for (double r : rates) check_rate(r);

    CompareResult out;
    out.seeds = seeds;
    for (const auto& m : methods)
        for (double r : rates) out.rows.push_back({m, r, 0, std::vector<double>(seeds.size()), 0.0, 0.0});

    std::vector<std::vector<std::size_t>> trainable(seeds.size(), std::vector<std::size_t>(out.rows.size()));
    run_parallel(seeds.size(), threads, [&](std::size_t si) {
        RunConfig local = cfg;
        apply_seed(local, seeds[si]);
        const Dataset data = dataset_from_config(local);
        const Model model(model_config_from_config(local, data));
        const PretrainResult pt = pretrain(model, data, local);
        for (std::size_t r = 0; r < out.rows.size(); ++r) {
            TrainOptions opt = train_options(local);
            opt.method = method_from_string(out.rows[r].method);
            opt.rate = out.rows[r].rate;
            const TrainResult tr = run_training(model, data, pt.theta1, opt);
            out.rows[r].accuracies[si] = tr.diverged ? 0.0 : tr.final_accuracy;
            trainable[si][r] = tr.trainable_elements;
        }
    });
    for (std::size_t r = 0; r < out.rows.size(); ++r) {
        auto& row = out.rows[r];
        row.trainable_elements = trainable.front()[r];
        const auto ms = mean_std(row.accuracies);
        row.mean = ms[0];
        row.stddev = ms[1];
    }

    auto mean_of = [&](const std::string& m, double rate) -> std::optional<double> {
        for (const auto& row : out.rows)
            if (row.method == m && row.rate == rate) return row.mean;
        return std::nullopt;
    };
    out.audit = nlohmann::ordered_json::array();
    for (double rate : rates) {
        nlohmann::ordered_json a;
        a["rate"] = rate;
        const auto s = mean_of("sift", rate), r = mean_of("random", rate), h = mean_of("head-only", rate);
        if (s && r) {
            a["sift_minus_random"] = *s - *r;
            a["sift_ge_random"] = *s >= *r;
        }
        if (r && h) a["random_ge_head_only"] = *r >= *h;
        if (s && h) a["sift_ge_head_only"] = *s >= *h;
        out.audit.push_back(a);
    }
    return out;
}

std::string compare_csv(const CompareResult& result) {
    std::vector<std::string> header{"method", "rate", "trainable_elements", "mean_accuracy", "std_accuracy"};
    for (auto s : result.seeds) header.push_back("seed_" + std::to_string(s));
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : result.rows) {
        std::vector<std::string> row{r.method, format_double(r.rate), std::to_string(r.trainable_elements),
                                     format_double(r.mean), format_double(r.stddev)};
        for (double a : r.accuracies) row.push_back(format_double(a));
        rows.push_back(std::move(row));
    }
    return csv_table(header, rows);
}

nlohmann::ordered_json compare_json(const CompareResult& result) {
    nlohmann::ordered_json j;
    j["seeds"] = result.seeds;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : result.rows) {
        nlohmann::ordered_json row;
        row["method"] = r.method;
        row["rate"] = r.rate;
        row["trainable_elements"] = r.trainable_elements;
        row["mean_accuracy"] = r.mean;
        row["std_accuracy"] = r.stddev;
        row["accuracies"] = r.accuracies;
        rows.push_back(row);
    }
    j["rows"] = rows;
    j["ordering"] = result.audit;
    return j;
}

std::vector<double> flat_gradient(const Model& model, const ParamSet& params, const std::vector<std::string>& names,
                                  const Batch& batch, Precision precision) {
    return flatten(batch_gradients(model, params, names, batch, precision));
}

namespace {

std::vector<std::string> analysis_names(const ParamSet& params, const RunConfig& cfg) {
    auto names = select_trainable(params, module_filter_from_string(cfg.get_string("train.filter")));
    std::erase_if(names, [](const std::string& n) { return is_head_param(n) || is_layer_norm_param(n); });
    if (names.empty()) throw ConfigError("filter selects no maskable parameters");
    return names;
}

template <class F>
void for_each_analysis_gradient(const Model& model, const Dataset& dataset, const PretrainResult& points,
                                const RunConfig& cfg, F&& fn) {
    const Precision precision = precision_from_string(cfg.get_string("analysis.precision"));
    const auto names = analysis_names(points.theta0, cfg);
    const std::size_t batches = positive(cfg, "analysis.batches");
    for (const char* point : {"theta0", "theta1"}) {
        const ParamSet& p = std::string(point) == "theta0" ? points.theta0 : points.theta1;
        BatchStream stream(dataset, Split::FinetuneTrain, positive(cfg, "analysis.batch_size"),
                           cfg.get_u64("analysis.order_seed"));
        for (std::size_t b = 0; b < batches; ++b) {
            const Batch batch = stream.next_cycling();
            fn(std::string(point), b, flat_gradient(model, p, names, batch, precision));
        }
    }
}

}  // namespace

std::vector<ConcentrationRow> gradient_concentration(const Model& model, const Dataset& dataset,
                                                     const PretrainResult& points, const RunConfig& cfg,
                                                     const std::vector<double>& fractions) {
    std::vector<ConcentrationRow> rows;
    for_each_analysis_gradient(model, dataset, points, cfg,
                               [&](const std::string& point, std::size_t b, const std::vector<double>& g) {
                                   rows.push_back({point, b, sparsity_profile(g, fractions)});
                               });
    return rows;
}

double mean_energy_fraction(const std::vector<ConcentrationRow>& rows, const std::string& point, double fraction) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : rows) {
        if (r.point != point) continue;
        const auto& f = r.profile.fractions;
        const auto it = std::find(f.begin(), f.end(), fraction);
        if (it == f.end()) throw ConfigError("fraction not in profile");
        sum += r.profile.energy_fraction[static_cast<std::size_t>(it - f.begin())];
        ++count;
    }
    if (!count) throw ConfigError("no rows for " + point);
    return sum / static_cast<double>(count);
}

std::vector<BoundRow> bound_reports(const Model& model, const Dataset& dataset, const PretrainResult& points,
                                    const RunConfig& cfg) {
    const std::vector<double> taus{0.005, 0.01, 0.05};
    std::vector<BoundRow> rows;
    for_each_analysis_gradient(
        model, dataset, points, cfg, [&](const std::string& point, std::size_t b, const std::vector<double>& g) {
            const auto profile = sparsity_profile(g, taus);
            for (std::size_t i = 0; i < taus.size(); ++i) {
                const auto ceil_tau = static_cast<std::size_t>(std::ceil(taus[i] * static_cast<double>(g.size())));
                const std::size_t tau = std::min(g.size() - 1, std::max<std::size_t>(1, ceil_tau));
                rows.push_back({point, b, taus[i], profile.energy_fraction[i], profile.abs_fraction[i],
                                verify_descent_bound(g, tau)});
            }
        });
    return rows;
}

std::string bound_csv(const std::vector<BoundRow>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows)
        out.push_back({r.point, std::to_string(r.batch), format_double(r.tau_fraction), std::to_string(r.report.n),
                       std::to_string(r.report.tau), format_double(r.report.epsilon),
                       format_double(r.report.cosine_min), format_double(r.report.bound),
                       format_double(r.report.tau_over_n_bound), r.report.holds ? "1" : "0",
                       format_double(r.energy_fraction), format_double(r.abs_fraction)});
    return csv_table({"point", "batch", "tau_fraction", "n", "tau", "epsilon", "cosine_min", "bound",
                      "tau_over_n_bound", "holds", "energy_fraction", "abs_fraction"},
                     out);
}

CaptureStudy capture_study(const Model& model, const Dataset& dataset, const PretrainResult& points,
                           const RunConfig& cfg) {
    const Precision precision = precision_from_string(cfg.get_string("analysis.precision"));
    const auto names = analysis_names(points.theta0, cfg);
    const double rate = cfg.get_double("analysis.rate");
    CaptureStudy study;
    for (int which = 0; which < 2; ++which) {
        const ParamSet& p = which == 0 ? points.theta0 : points.theta1;
        BatchStream stream(dataset, Split::FinetuneTrain, positive(cfg, "analysis.batch_size"),
                           cfg.get_u64("analysis.order_seed"));
        const MaskSelection first = calibrate_mask(model, p, names, stream, rate, 1, Granularity::PerTensor, precision);
        auto rows = mask_capture_series(model, p, first, stream, positive(cfg, "analysis.batches"), precision);
        double gap = 0.0;
        for (const auto& r : rows) gap += r.own_topk_fraction - r.fixed_mask_fraction;
        gap /= static_cast<double>(rows.size());
        (which == 0 ? study.theta0 : study.theta1) = std::move(rows);
        (which == 0 ? study.mean_gap_theta0 : study.mean_gap_theta1) = gap;
    }
    return study;
}

std::string capture_csv(const CaptureStudy& study) {
    std::vector<std::vector<std::string>> rows;
    for (int which = 0; which < 2; ++which)
        for (const auto& r : which == 0 ? study.theta0 : study.theta1)
            rows.push_back({which == 0 ? "theta0" : "theta1", std::to_string(r.batch),
                            format_double(r.own_topk_fraction), format_double(r.fixed_mask_fraction)});
    return csv_table({"point", "batch", "own_topk_fraction", "fixed_mask_fraction"}, rows);
}

LandscapeResult landscape_scans(const Model& model, const Dataset& dataset, const PretrainResult& points,
                                const RunConfig& cfg, unsigned threads, bool one_d, bool two_d) {
    const Precision precision = precision_from_string(cfg.get_string("analysis.precision"));
    const std::size_t eval_size = positive(cfg, "landscape.eval_size");
    auto batches = split_batches(dataset, Split::FinetuneEval, 256, eval_size);
    const LossFn loss = model_loss(model, batches, precision);
    const std::string eval_id =
        "finetune-eval[0:" + std::to_string(std::min(eval_size, dataset.split(Split::FinetuneEval).size())) + "]";
    const auto alphas = linspace(cfg.get_double("landscape.alpha_min"), cfg.get_double("landscape.alpha_max"),
                                 positive(cfg, "landscape.alpha_points"));
    LandscapeResult out;
    auto label = [&](LandscapeScan& s) {
        s.eval_set_id = eval_id;
        s.theta0_id = params_id(points.theta0);
        s.theta1_id = params_id(points.theta1);
    };
    if (one_d) {
        out.scan1 = scan_1d(loss, points.theta0, points.theta1, alphas, threads);
        label(out.scan1);
    }
    if (two_d) {
        const auto betas = linspace(cfg.get_double("landscape.beta_min"), cfg.get_double("landscape.beta_max"),
                                    positive(cfg, "landscape.beta_points"));
        const std::uint64_t seed = cfg.get_u64("landscape.seed");
        const ParamSet delta2 = gen_second_direction(param_difference(points.theta1, points.theta0), seed);
        out.scan2 = scan_2d(loss, points.theta0, points.theta1, delta2, alphas, betas, threads);
        label(out.scan2);
        out.scan2.direction_seed = seed;
    }
    return out;
}

std::string params_id(const ParamSet& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
    };
    for (const auto& [name, t] : params) {
        mix(name.data(), name.size());
        for (double v : t.data()) mix(&v, sizeof v);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace siftlab
