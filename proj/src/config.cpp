// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "siftlab/error.hpp"

namespace siftlab {

namespace {

struct KeySpec {
    const char* key;
    RunConfig::Type type;
    const char* default_value;
};

using T = RunConfig::Type;

// clang-format off
constexpr KeySpec kSchema[] = {
    {"run.checkpoint",            T::String, ""},
    {"run.threads",               T::Int,    "1"},

    {"model.kind",                T::String, "tiny-transformer"},
    {"model.hidden",              T::Int,    "32"},
    {"model.layers",              T::Int,    "2"},
    {"model.heads",               T::Int,    "4"},
    {"model.mlp_ratio",           T::Int,    "4"},
    {"model.mlp_hidden",          T::String, "64"},
    {"model.attn_bias",           T::Bool,   "false"},
    {"model.seed",                T::Int,    "0"},

    {"task.kind",                 T::String, "seq-classify"},
    {"task.seed",                 T::Int,    "0"},
    {"task.pretrain_size",        T::Int,    "2048"},
    {"task.finetune_train_size",  T::Int,    "256"},
    {"task.finetune_eval_size",   T::Int,    "512"},
    {"task.seq_len",              T::Int,    "6"},
    {"task.vocab",                T::Int,    "16"},
    {"task.modulus",              T::Int,    "97"},
    {"task.num_classes",          T::Int,    "8"},

    {"pretrain.steps",            T::Int,    "400"},
    {"pretrain.batch_size",       T::Int,    "32"},
    {"pretrain.lr",               T::Float,  "0.003"},
    {"pretrain.weight_decay",     T::Float,  "0"},
    {"pretrain.order_seed",       T::Int,    "0"},

    {"train.method",              T::String, "sift"},
    {"train.filter",              T::String, "QKVO"},
    {"train.rate",                T::Float,  "0.01"},
    {"train.granularity",         T::String, "per-tensor"},
    {"train.precision",           T::String, "f32"},
    {"train.epochs",              T::Int,    "20"},
    {"train.batch_size",          T::Int,    "32"},
    {"train.micro_batches",       T::Int,    "1"},
    {"train.calibration_batches", T::Int,    "1"},
    {"train.reselect_interval",   T::Int,    "0"},
    {"train.head_dense",          T::Bool,   "true"},
    {"train.lr",                  T::Float,  "0.02"},
    {"train.beta1",               T::Float,  "0.9"},
    {"train.beta2",               T::Float,  "0.999"},
    {"train.eps",                 T::Float,  "1e-8"},
    {"train.weight_decay",        T::Float,  "0"},
    {"train.lr_schedule",         T::String, "constant"},
    {"train.order_seed",          T::Int,    "0"},
    {"train.mask_seed",           T::Int,    "0"},

    {"analysis.precision",        T::String, "f64"},
    {"analysis.batch_size",       T::Int,    "64"},
    {"analysis.batches",          T::Int,    "8"},
    {"analysis.rate",             T::Float,  "0.01"},
    {"analysis.bins",             T::Int,    "41"},
    {"analysis.order_seed",       T::Int,    "0"},

    {"landscape.mode",            T::String, "both"},
    {"landscape.alpha_min",       T::Float,  "-0.5"},
    {"landscape.alpha_max",       T::Float,  "1.5"},
    {"landscape.alpha_points",    T::Int,    "41"},
    {"landscape.beta_min",        T::Float,  "-1"},
    {"landscape.beta_max",        T::Float,  "1"},
    {"landscape.beta_points",     T::Int,    "41"},
    {"landscape.eval_size",       T::Int,    "128"},
    {"landscape.seed",            T::Int,    "0"},

    {"merge.increment",           T::String, ""},

    {"compare.methods",           T::String, "sift,random,head-only"},
    {"compare.rates",             T::String, "0.01"},
    {"compare.seeds",             T::String, "0,1,2,3,4"},
};
// clang-format on

const KeySpec* find_key(const std::string& key) {
    for (const auto& spec : kSchema)
        if (key == spec.key) return &spec;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
bool parse_number(const std::string& s, N& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end;
}

void check_value(const KeySpec& spec, const std::string& value) {
    bool ok = true;
    switch (spec.type) {
        case T::Int: {
            std::int64_t v;
            std::uint64_t u;
            ok = parse_number(value, v) || parse_number(value, u);
            break;
        }
        case T::Float: {
            double v;
            ok = parse_number(value, v);
            break;
        }
        case T::Bool: ok = value == "true" || value == "false"; break;
        case T::String: break;
    }
    if (!ok) throw ConfigError("bad value '" + value + "' for key '" + spec.key + "'");
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& spec : kSchema) values_.emplace(spec.key, spec.default_value);
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void RunConfig::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    check_value(*spec, value);
    values_[key] = value;
}

const std::string& RunConfig::raw(const std::string& key, Type type) const {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    if (spec->type != type) throw ConfigError("config key '" + key + "' read with the wrong type");
    return values_.at(key);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    std::int64_t v = 0;
    if (!parse_number(raw(key, Type::Int), v)) throw ConfigError("'" + key + "' does not fit a signed integer");
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    std::uint64_t v = 0;
    if (!parse_number(raw(key, Type::Int), v)) throw ConfigError("'" + key + "' must be a non-negative integer");
    return v;
}

double RunConfig::get_double(const std::string& key) const {
    double v = 0;
    parse_number(raw(key, Type::Float), v);
    return v;
}

const std::string& RunConfig::get_string(const std::string& key) const { return raw(key, Type::String); }

bool RunConfig::get_bool(const std::string& key) const { return raw(key, Type::Bool) == "true"; }

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get_string(key));
    std::string item;
    while (std::getline(in, item, ','))
        if (auto t = trim(item); !t.empty()) out.push_back(t);
    return out;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
}

std::vector<std::string> RunConfig::seed_keys() {
    return {"model.seed", "task.seed", "pretrain.order_seed", "train.order_seed", "train.mask_seed",
            "analysis.order_seed", "landscape.seed"};
}

}  // namespace siftlab
