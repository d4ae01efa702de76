// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "siftlab/error.hpp"
#include "siftlab/experiments.hpp"
#include "siftlab/persistence.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace siftlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Options {
    std::string verb;
    std::string config_path;
    std::string out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

struct Context {
    RunConfig cfg;
    fs::path out;
    unsigned threads = 1;
};

void write_manifest(const Context& ctx, const Options& opt) {
    ordered_json m;
    m["verb"] = opt.verb;
    m["siftlab_version"] = SIFTLAB_VERSION;
    m["format_version"] = kFormatVersion;
    m["compiler"] = __VERSION__;
    ordered_json seeds;
    for (const auto& k : RunConfig::seed_keys()) seeds[k] = ctx.cfg.get_u64(k);
    m["seeds"] = seeds;
    ordered_json config;
    for (const auto& [k, v] : ctx.cfg.values()) config[k] = v;
    m["config"] = config;
    m["rerun"] = "siftlab " + opt.verb + " --config config.txt --out <dir>";
    fs::create_directories(ctx.out);
    write_report_json(ctx.out / "manifest.json", m);
    write_text(ctx.out / "config.txt", ctx.cfg.to_text());
}

struct Lab {
    Dataset dataset;
    Model model;
    PretrainResult points;
};

Lab make_lab(const Context& ctx) {
    Dataset data = dataset_from_config(ctx.cfg);
    Model model(model_config_from_config(ctx.cfg, data));
    PretrainResult points;
    const std::string ckpt = ctx.cfg.get_string("run.checkpoint");
    if (ckpt.empty()) {
        points = pretrain(model, data, ctx.cfg);
    } else {
        points.theta0 = build_model(model.config());
        points.theta1 = load_checkpoint(ckpt);
        check_same_layout(points.theta0, points.theta1);
    }
    return {std::move(data), std::move(model), std::move(points)};
}

ordered_json mask_json(const MaskSelection& mask) {
    ordered_json j;
    j["rate"] = mask.rate;
    j["granularity"] = to_string(mask.granularity);
    j["provenance"] = to_string(mask.provenance);
    j["seed"] = mask.seed;
    j["calibration_batches"] = mask.calibration_batches;
    j["selected"] = mask.selected();
    j["total_elements"] = mask.total_elements();
    ordered_json per;
    for (const auto& [name, idx] : mask.indices) per[name] = idx.size();
    j["per_tensor"] = per;
    return j;
}

int cmd_pretrain(const Context& ctx) {
    Lab lab = make_lab(ctx);
    write_dataset_text(ctx.out / "dataset.txt", lab.dataset);
    const Precision element = precision_from_string(ctx.cfg.get_string("train.precision"));
    save_checkpoint(ctx.out / "theta0.ckpt", lab.points.theta0, element);
    save_checkpoint(ctx.out / "theta1.ckpt", lab.points.theta1, element);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < lab.points.losses.size(); ++i)
        rows.push_back({std::to_string(i + 1), format_double(lab.points.losses[i])});
    write_text(ctx.out / "pretrain_loss.csv", csv_table({"step", "loss"}, rows));
    const auto pre = split_batches(lab.dataset, Split::Pretrain, 256);
    const auto ft = split_batches(lab.dataset, Split::FinetuneEval, 256);
    ordered_json s;
    s["parameters"] = param_count(lab.points.theta1);
    s["final_loss"] = lab.points.losses.empty() ? 0.0 : lab.points.losses.back();
    s["pretrain_accuracy"] = split_accuracy(lab.model, lab.points.theta1, pre, element);
    s["finetune_eval_accuracy_before"] = split_accuracy(lab.model, lab.points.theta1, ft, element);
    write_report_json(ctx.out / "summary.json", s);
    return kExitOk;
}

int cmd_calibrate(const Context& ctx) {
    Lab lab = make_lab(ctx);
    TrainOptions opt = train_options(ctx.cfg);
    if (opt.method != Method::Sift && opt.method != Method::Random)
        throw ConfigError("calibrate needs train.method sift or random");
    const TrainablePlan plan = plan_trainable(lab.points.theta1, opt.method, opt.filter, opt.head_dense);
    const auto mask = build_mask(lab.model, lab.dataset, lab.points.theta1, plan, opt);
    if (!mask) throw ConfigError("filter selects no maskable parameters");
    save_mask(ctx.out / "mask.sifm", *mask);
    write_report_json(ctx.out / "mask.json", mask_json(*mask));
    write_report_json(ctx.out / "memory_report.json", memory_json(memory_report(*mask, lab.points.theta1)));
    return kExitOk;
}

int cmd_train(const Context& ctx) {
    Lab lab = make_lab(ctx);
    const TrainOptions opt = train_options(ctx.cfg);
    const TrainResult r = run_training(lab.model, lab.dataset, lab.points.theta1, opt);
    write_text(ctx.out / "metrics.csv", metrics_csv(r.epochs));
    if (r.mask) save_mask(ctx.out / "mask.sifm", *r.mask);
    if (!r.plan.masked.empty()) save_increment(ctx.out / "increment.sift", r.increment);
    save_checkpoint(ctx.out / "final.ckpt", r.params, opt.precision);
    write_report_json(ctx.out / "memory_report.json", memory_json(r.memory));
    ordered_json s;
    s["method"] = to_string(opt.method);
    s["filter"] = to_string(opt.filter);
    s["rate"] = opt.rate;
    s["masked_tensors"] = r.plan.masked;
    s["dense_tensors"] = r.plan.dense;
    s["trainable_elements"] = r.trainable_elements;
    s["increment_nnz"] = r.increment.nnz();
    s["final_eval_accuracy"] = r.final_accuracy;
    s["diverged"] = r.diverged;
    if (r.diverged) s["error"] = r.error;
    write_report_json(ctx.out / "summary.json", s);
    if (r.diverged) {
        std::cerr << "siftlab: training diverged: " << r.error << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_analyze_grads(const Context& ctx) {
    Lab lab = make_lab(ctx);
    const std::vector<double> fractions{0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
    const auto rows = gradient_concentration(lab.model, lab.dataset, lab.points, ctx.cfg, fractions);
    std::vector<std::vector<std::string>> csv;
    for (const auto& r : rows)
        for (std::size_t i = 0; i < fractions.size(); ++i)
            csv.push_back({r.point, std::to_string(r.batch), format_double(fractions[i]),
                           format_double(r.profile.energy_fraction[i]), format_double(r.profile.abs_fraction[i])});
    write_text(ctx.out / "concentration.csv",
               csv_table({"point", "batch", "fraction", "energy_fraction", "abs_fraction"}, csv));

    // Log-magnitude histograms of the first batch at both points, on a shared range.
    const auto precision = precision_from_string(ctx.cfg.get_string("analysis.precision"));
    auto names = select_trainable(lab.points.theta0, module_filter_from_string(ctx.cfg.get_string("train.filter")));
    std::erase_if(names, [](const std::string& n) { return is_head_param(n) || is_layer_norm_param(n); });
    BatchStream s0(lab.dataset, Split::FinetuneTrain, static_cast<std::size_t>(ctx.cfg.get_int("analysis.batch_size")),
                   ctx.cfg.get_u64("analysis.order_seed"));
    const Batch first = s0.next_cycling();
    const auto g0 = flat_gradient(lab.model, lab.points.theta0, names, first, precision);
    const auto g1 = flat_gradient(lab.model, lab.points.theta1, names, first, precision);
    const auto bins = static_cast<std::size_t>(ctx.cfg.get_int("analysis.bins"));
    const auto h0 = grad_histogram(g0, bins, true);
    const auto h1 = grad_histogram(g1, bins, true);
    const std::pair<double, double> range{std::min(h0.min, h1.min), std::max(h0.max, h1.max)};
    std::vector<std::vector<std::string>> hist;
    for (const auto& [point, g] : {std::pair{"theta0", &g0}, std::pair{"theta1", &g1}}) {
        const auto h = grad_histogram(*g, bins, true, range);
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            hist.push_back({point, format_double(h.edges[i]), format_double(h.edges[i + 1]), std::to_string(h.counts[i])});
    }
    write_text(ctx.out / "histogram_log10.csv", csv_table({"point", "lo", "hi", "count"}, hist));

    const CaptureStudy cap = capture_study(lab.model, lab.dataset, lab.points, ctx.cfg);
    write_text(ctx.out / "capture.csv", capture_csv(cap));

    ordered_json s;
    s["parameters_analyzed"] = rows.front().profile.n;
    s["energy_fraction_1pct_theta0"] = mean_energy_fraction(rows, "theta0", 0.01);
    s["energy_fraction_1pct_theta1"] = mean_energy_fraction(rows, "theta1", 0.01);
    s["reference_energy_fraction_1pct"] = 0.99;
    s["capture_mean_gap_theta0"] = cap.mean_gap_theta0;
    s["capture_mean_gap_theta1"] = cap.mean_gap_theta1;
    write_report_json(ctx.out / "summary.json", s);
    return kExitOk;
}

int cmd_scan(const Context& ctx) {
    Lab lab = make_lab(ctx);
    const std::string mode = ctx.cfg.get_string("landscape.mode");
    if (mode != "1d" && mode != "2d" && mode != "both") throw ConfigError("landscape.mode must be 1d, 2d or both");
    const bool one = mode != "2d", two = mode != "1d";
    const auto r = landscape_scans(lab.model, lab.dataset, lab.points, ctx.cfg, ctx.threads, one, two);
    if (one) write_scan_csv(ctx.out / "scan_1d.csv", r.scan1);
    if (two) write_scan_csv(ctx.out / "scan_2d.csv", r.scan2);
    return kExitOk;
}

int cmd_verify_bound(const Context& ctx) {
    Lab lab = make_lab(ctx);
    const auto rows = bound_reports(lab.model, lab.dataset, lab.points, ctx.cfg);
    write_text(ctx.out / "bound.csv", bound_csv(rows));
    bool all = true;
    for (const auto& r : rows) all = all && r.report.holds;
    const auto conc = gradient_concentration(lab.model, lab.dataset, lab.points, ctx.cfg, {0.01});
    ordered_json s;
    s["rows"] = rows.size();
    s["all_hold"] = all;
    s["energy_fraction_1pct_theta0"] = mean_energy_fraction(conc, "theta0", 0.01);
    s["energy_fraction_1pct_theta1"] = mean_energy_fraction(conc, "theta1", 0.01);
    s["theta1_more_concentrated"] =
        mean_energy_fraction(conc, "theta1", 0.01) > mean_energy_fraction(conc, "theta0", 0.01);
    write_report_json(ctx.out / "bound.json", s);
    return kExitOk;
}

int cmd_merge(const Context& ctx) {
    const std::string ckpt = ctx.cfg.get_string("run.checkpoint");
    const std::string inc_path = ctx.cfg.get_string("merge.increment");
    if (ckpt.empty() || inc_path.empty()) throw ConfigError("merge needs run.checkpoint and merge.increment");
    const ParamSet base = load_checkpoint(ckpt);
    const SparseIncrement inc = load_increment(inc_path);
    const ParamSet merged = merge_increment(base, inc);
    save_checkpoint(ctx.out / "merged.ckpt", merged, inc.element_type);
    ordered_json s;
    s["tensors"] = inc.tensors.size();
    s["nnz"] = inc.nnz();
    s["parameters"] = param_count(merged);
    write_report_json(ctx.out / "summary.json", s);
    return kExitOk;
}

int cmd_report(const Context& ctx) {
    const Dataset data = dataset_from_config(ctx.cfg);
    const Model model(model_config_from_config(ctx.cfg, data));
    const ParamSet params = build_model(model.config());
    const TrainOptions opt = train_options(ctx.cfg);
    ordered_json j;
    ordered_json inv;
    for (const auto& [name, t] : params) inv[name] = shape_str(t.shape());
    j["parameters"] = param_count(params);
    j["inventory"] = inv;
    const TrainablePlan plan = plan_trainable(params, opt.method, opt.filter, opt.head_dense);
    j["method"] = to_string(opt.method);
    j["masked_tensors"] = plan.masked;
    j["dense_tensors"] = plan.dense;
    if (!plan.masked.empty()) {
        NamedMap<Shape> shapes;
        for (const auto& n : plan.masked) shapes.emplace(n, params.at(n).shape());
        // The budget law depends only on shapes; a random support has the same counts.
        j["memory"] = memory_json(memory_report(random_mask(shapes, opt.rate, 0), params));
    }
    ordered_json t1;
    t1["grad_gb_5pct"] = 0.626;
    t1["grad_gb_full"] = 12.55;
    t1["grad_ratio"] = 0.626 / 12.55;
    t1["optim_gb_5pct"] = 2.51;
    t1["optim_gb_full"] = 50.21;
    t1["optim_ratio"] = 2.51 / 50.21;
    j["published_5pct_row"] = t1;
    write_report_json(ctx.out / "report.json", j);
    return kExitOk;
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::string>& items) {
    std::vector<std::uint64_t> out;
    for (const auto& s : items) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoull(s, &pos));
            if (pos != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + s + "'");
        }
    }
    return out;
}

int cmd_compare(const Context& ctx) {
    std::vector<double> rates;
    for (const auto& r : ctx.cfg.get_list("compare.rates")) {
        try {
            rates.push_back(std::stod(r));
        } catch (const std::exception&) {
            throw ConfigError("bad rate '" + r + "'");
        }
    }
    const auto result = run_compare(ctx.cfg, ctx.cfg.get_list("compare.methods"), rates,
                                    parse_seeds(ctx.cfg.get_list("compare.seeds")), ctx.threads);
    write_text(ctx.out / "compare.csv", compare_csv(result));
    write_report_json(ctx.out / "compare.json", compare_json(result));
    return kExitOk;
}

int dispatch(const Options& opt) {
    Context ctx;
    if (!opt.config_path.empty()) ctx.cfg = RunConfig::from_file(opt.config_path);
    for (const auto& o : opt.overrides) ctx.cfg.set_override(o);
    if (opt.seed) apply_seed(ctx.cfg, *opt.seed);
    if (opt.threads) ctx.cfg.set("run.threads", std::to_string(*opt.threads));
    const auto threads = ctx.cfg.get_int("run.threads");
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    ctx.threads = static_cast<unsigned>(threads);

    if (!opt.out.empty()) {
        ctx.out = opt.out;
    } else {
        const char* root = std::getenv("SIFTLAB_OUT");
        ctx.out = fs::path(root && *root ? root : "runs") / opt.verb;
    }
    write_manifest(ctx, opt);

    if (opt.verb == "pretrain") return cmd_pretrain(ctx);
    if (opt.verb == "calibrate") return cmd_calibrate(ctx);
    if (opt.verb == "train") return cmd_train(ctx);
    if (opt.verb == "analyze-grads") return cmd_analyze_grads(ctx);
    if (opt.verb == "scan-landscape") return cmd_scan(ctx);
    if (opt.verb == "verify-bound") return cmd_verify_bound(ctx);
    if (opt.verb == "merge") return cmd_merge(ctx);
    if (opt.verb == "report") return cmd_report(ctx);
    if (opt.verb == "compare") return cmd_compare(ctx);
    throw ConfigError("unknown verb '" + opt.verb + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse increment fine-tuning lab"};
    app.set_version_flag("--version", SIFTLAB_VERSION);
    app.require_subcommand(1, 1);
    Options opt;
    const std::pair<const char*, const char*> verbs[] = {
        {"pretrain", "build the dataset and write theta0 and theta1 checkpoints"},
        {"calibrate", "select and save a gradient-magnitude mask"},
        {"train", "fine-tune with the configured method"},
        {"analyze-grads", "gradient concentration, histogram and mask capture"},
        {"scan-landscape", "1-D and 2-D loss scans between theta0 and theta1"},
        {"verify-bound", "check the descent-bound estimate on real gradients"},
        {"merge", "apply a sparse increment to a checkpoint"},
        {"report", "parameter inventory and memory accounting"},
        {"compare", "multi-seed comparison of fine-tuning methods"},
    };
    for (const auto& [verb, help] : verbs) {
        auto* sub = app.add_subcommand(verb, help);
        sub->add_option("--config", opt.config_path, "key = value config file");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--set", opt.overrides, "override key=value")->allow_extra_args(false);
        sub->add_option("--seed", opt.seed, "set every seed key");
        sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->callback([&opt, verb] { opt.verb = verb; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        return dispatch(opt);
    } catch (const ConfigError& e) {
        std::cerr << "siftlab: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "siftlab: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "siftlab: numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const FormatError& e) {
        std::cerr << "siftlab: format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "siftlab: i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "siftlab: i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "siftlab: " << e.what() << "\n";
        return kExitInternal;
    }
}
