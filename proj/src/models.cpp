// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/models.hpp"

#include <algorithm>
#include <cmath>

#include "siftlab/error.hpp"
#include "siftlab/rng.hpp"

namespace siftlab {

std::size_t param_count(const ParamSet& params) {
    std::size_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
}

void check_same_layout(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) throw ShapeError("parameter sets differ in tensor count");
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) throw ShapeError("parameter name mismatch: " + ia->first + " vs " + ib->first);
        if (ia->second.shape() != ib->second.shape())
            throw ShapeError("shape mismatch for " + ia->first + ": " + shape_str(ia->second.shape()) + " vs " +
                             shape_str(ib->second.shape()));
    }
}

std::size_t Batch::size() const { return targets.empty() ? (features.rank() ? features.dim(0) : 0) : targets.size(); }

void ModelConfig::validate() const {
    if (kind == ModelKind::Mlp) {
        if (mlp_dims.size() < 2) throw ConfigError("mlp needs at least input and output widths");
        for (auto d : mlp_dims)
            if (d == 0) throw ConfigError("mlp widths must be >= 1");
        return;
    }
    if (hidden == 0 || layers == 0 || heads == 0 || vocab == 0 || seq_len == 0 || mlp_ratio == 0)
        throw ConfigError("transformer dims must all be >= 1");
    if (hidden % heads != 0)
        throw ConfigError("hidden size " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "mlp") return ModelKind::Mlp;
    if (s == "tiny-transformer") return ModelKind::TinyTransformer;
    throw ConfigError("unknown model kind '" + s + "'");
}

const char* to_string(ModelKind k) { return k == ModelKind::Mlp ? "mlp" : "tiny-transformer"; }

namespace {

void add_normal(ParamSet& ps, Rng& rng, const std::string& name, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * rng.normal();
    ps.emplace(name, std::move(t));
}

void add_linear(ParamSet& ps, Rng& rng, const std::string& weight, const std::string& bias, std::size_t in,
                std::size_t out) {
    add_normal(ps, rng, weight, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    if (!bias.empty()) ps.emplace(bias, Tensor(Shape{out}, 0.0));
}

void add_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t d) {
    ps.emplace(prefix + ".gain", Tensor(Shape{d}, 1.0));
    ps.emplace(prefix + ".bias", Tensor(Shape{d}, 0.0));
}

const Tensor& get(const ParamSet& ps, const std::string& name) {
    auto it = ps.find(name);
    if (it == ps.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
}

Var p(Tape& tape, const ParamSet& ps, const std::string& name) { return tape.param(name, get(ps, name)); }

Var affine_norm(Tape& tape, const ParamSet& ps, Var x, const std::string& prefix) {
    return ad::add(ad::mul(ad::layer_norm(x), p(tape, ps, prefix + ".gain")), p(tape, ps, prefix + ".bias"));
}

Var linear(Tape& tape, const ParamSet& ps, Var x, const std::string& weight, const std::string& bias) {
    Var y = ad::matmul(x, p(tape, ps, weight));
    return bias.empty() ? y : ad::add(y, p(tape, ps, bias));
}

std::string layer_prefix(std::size_t i) { return "layer." + std::to_string(i); }

}  // namespace

ParamSet build_model(const ModelConfig& config) {
    config.validate();
    ParamSet ps;
    Rng rng(config.seed);
    if (config.kind == ModelKind::Mlp) {
        const auto& d = config.mlp_dims;
        for (std::size_t i = 0; i + 2 < d.size(); ++i)
            add_linear(ps, rng, layer_prefix(i) + ".mlp.weight", layer_prefix(i) + ".mlp.bias", d[i], d[i + 1]);
        add_linear(ps, rng, "head.weight", "head.bias", d[d.size() - 2], d.back());
        return ps;
    }
    const std::size_t dm = config.hidden;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(dm));
    add_normal(ps, rng, "embed.tok", {config.vocab, dm}, emb_std);
    add_normal(ps, rng, "embed.pos", {config.seq_len, dm}, emb_std);
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string pre = layer_prefix(l);
        add_layer_norm(ps, pre + ".attn.ln", dm);
        for (const char* proj : {"q", "k", "v", "o"}) {
            const std::string w = pre + ".attn." + proj;
            add_linear(ps, rng, w, config.attn_bias ? w + ".bias" : "", dm, dm);
        }
        add_layer_norm(ps, pre + ".mlp.ln", dm);
        add_linear(ps, rng, pre + ".mlp.fc1.weight", pre + ".mlp.fc1.bias", dm, dm * config.mlp_ratio);
        add_linear(ps, rng, pre + ".mlp.fc2.weight", pre + ".mlp.fc2.bias", dm * config.mlp_ratio, dm);
    }
    add_layer_norm(ps, "head.ln", dm);
    add_linear(ps, rng, "head.weight", "head.bias", dm, config.vocab);
    return ps;
}

Model::Model(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

Var Model::mlp_forward(Tape& tape, const ParamSet& params, const Batch& batch) const {
    const auto& d = config_.mlp_dims;
    Tensor input = batch.features;
    if (input.rank() == 0) {
        // One-hot encode tokens.
        const std::size_t b = batch.size();
        const std::size_t t = batch.seq_len;
        if (t == 0 || b * t != batch.tokens.size()) throw ShapeError("batch has neither features nor tokens");
        const std::size_t vocab = d.front() / t;
        if (vocab * t != d.front()) throw ShapeError("mlp input width is not seq_len * vocab");
        input = Tensor(Shape{b, d.front()});
        for (std::size_t i = 0; i < b * t; ++i) {
            const int tok = batch.tokens[i];
            if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) throw ShapeError("token out of range");
            input[(i / t) * d.front() + (i % t) * vocab + static_cast<std::size_t>(tok)] = 1.0;
        }
    }
    if (input.rank() != 2 || input.dim(1) != d.front())
        throw ShapeError("mlp expects [B," + std::to_string(d.front()) + "] features, got " + shape_str(input.shape()));
    Var x = tape.constant(std::move(input));
    for (std::size_t i = 0; i + 2 < d.size(); ++i)
        x = ad::relu(linear(tape, params, x, layer_prefix(i) + ".mlp.weight", layer_prefix(i) + ".mlp.bias"));
    return linear(tape, params, x, "head.weight", "head.bias");
}

Var Model::hidden_states(Tape& tape, const ParamSet& params, const Batch& batch) const {
    const std::size_t b = batch.size();
    const std::size_t t = batch.seq_len;
    const std::size_t dm = config_.hidden;
    const std::size_t nh = config_.heads;
    const std::size_t dh = dm / nh;
    if (t == 0 || t > config_.seq_len || batch.tokens.size() != b * t)
        throw ShapeError("token batch does not match model sequence length");

    Var x = ad::embedding(p(tape, params, "embed.tok"), batch.tokens, {b, t});
    Var pos = p(tape, params, "embed.pos");
    if (t != config_.seq_len) {
        std::vector<int> rows(t);
        for (std::size_t i = 0; i < t; ++i) rows[i] = static_cast<int>(i);
        pos = ad::embedding(pos, rows, {t});
    }
    x = ad::add(x, pos);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    auto heads = [&](Var y) { return ad::permute_0213(ad::reshape(y, {b, t, nh, dh})); };
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string pre = layer_prefix(l) + ".attn.";
        auto proj = [&](Var h, const char* which) {
            const std::string w = pre + which;
            return linear(tape, params, h, w, config_.attn_bias ? w + ".bias" : "");
        };
        Var h = affine_norm(tape, params, x, pre + "ln");
        Var q = heads(proj(h, "q"));
        Var k = heads(proj(h, "k"));
        Var v = heads(proj(h, "v"));
        Var att = ad::softmax(ad::causal_mask(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dh)));
        Var ctx = ad::reshape(ad::permute_0213(ad::matmul(att, v)), {b, t, dm});
        x = ad::add(x, proj(ctx, "o"));

        const std::string mp = layer_prefix(l) + ".mlp.";
        Var h2 = affine_norm(tape, params, x, mp + "ln");
        Var m = ad::gelu(linear(tape, params, h2, mp + "fc1.weight", mp + "fc1.bias"));
        x = ad::add(x, linear(tape, params, m, mp + "fc2.weight", mp + "fc2.bias"));
    }
    return affine_norm(tape, params, x, "head.ln");
}

Var Model::logits(Tape& tape, const ParamSet& params, const Batch& batch) const {
    if (config_.kind == ModelKind::Mlp) return mlp_forward(tape, params, batch);
    return linear(tape, params, hidden_states(tape, params, batch), "head.weight", "head.bias");
}

Var Model::scored_logits(Tape& tape, const ParamSet& params, const Batch& batch) const {
    if (config_.kind == ModelKind::Mlp) return mlp_forward(tape, params, batch);
    Var last = ad::last_position(hidden_states(tape, params, batch));
    return linear(tape, params, last, "head.weight", "head.bias");
}

Var Model::loss(Tape& tape, const ParamSet& params, const Batch& batch) const {
    Var out = scored_logits(tape, params, batch);
    Var loss;
    if (config_.loss == LossKind::Squared) {
        if (batch.dense_targets.shape() != out.shape())
            throw ShapeError("squared loss: targets " + shape_str(batch.dense_targets.shape()) + " vs outputs " +
                             shape_str(out.shape()));
        Var diff = ad::sub(out, tape.constant(batch.dense_targets));
        loss = ad::mean(ad::mul(diff, diff));
    } else {
        loss = ad::cross_entropy(out, batch.targets);
    }
    if (!std::isfinite(loss.value().item())) throw NumericError("non-finite loss");
    return loss;
}

double Model::evaluate(const ParamSet& params, const Batch& batch, Precision precision) const {
    Tape tape(precision);
    return loss(tape, params, batch).value().item();
}

std::vector<int> Model::predict(const ParamSet& params, const Batch& batch, Precision precision) const {
    Tape tape(precision);
    const Tensor& out = scored_logits(tape, params, batch).value();
    const std::size_t c = out.shape().back();
    std::vector<int> pred(out.size() / c);
    for (std::size_t r = 0; r < pred.size(); ++r) {
        const auto row = out.data().subspan(r * c, c);
        pred[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return pred;
}

ModuleFilter module_filter_from_string(const std::string& s) {
    if (s == "V") return ModuleFilter::V;
    if (s == "QV") return ModuleFilter::QV;
    if (s == "QKV") return ModuleFilter::QKV;
    if (s == "QKVO") return ModuleFilter::QKVO;
    if (s == "ALL-ATTN") return ModuleFilter::AllAttn;
    if (s == "ALL") return ModuleFilter::All;
    if (s == "HEAD-ONLY") return ModuleFilter::HeadOnly;
    throw ConfigError("unknown module filter '" + s + "'");
}

const char* to_string(ModuleFilter f) {
    switch (f) {
        case ModuleFilter::V: return "V";
        case ModuleFilter::QV: return "QV";
        case ModuleFilter::QKV: return "QKV";
        case ModuleFilter::QKVO: return "QKVO";
        case ModuleFilter::AllAttn: return "ALL-ATTN";
        case ModuleFilter::All: return "ALL";
        case ModuleFilter::HeadOnly: return "HEAD-ONLY";
    }
    return "?";
}

bool is_head_param(std::string_view name) { return name.starts_with("head."); }

bool is_layer_norm_param(std::string_view name) { return name.find(".ln.") != std::string_view::npos; }

namespace {

// Projection letter of `layer.<i>.attn.<x>` or `layer.<i>.attn.<x>.bias`, else 0.
char attn_projection(std::string_view name) {
    if (!name.starts_with("layer.")) return 0;
    const auto pos = name.find(".attn.");
    if (pos == std::string_view::npos) return 0;
    std::string_view rest = name.substr(pos + 6);
    if (rest.size() == 1 || rest.substr(1) == ".bias") {
        const char c = rest[0];
        if (c == 'q' || c == 'k' || c == 'v' || c == 'o') return c;
    }
    return 0;
}

}  // namespace

std::vector<std::string> select_trainable(const ParamSet& params, ModuleFilter filter) {
    std::string letters;
    switch (filter) {
        case ModuleFilter::V: letters = "v"; break;
        case ModuleFilter::QV: letters = "qv"; break;
        case ModuleFilter::QKV: letters = "qkv"; break;
        case ModuleFilter::QKVO:
        case ModuleFilter::AllAttn: letters = "qkvo"; break;
        default: break;
    }
    std::vector<std::string> out;
    for (const auto& [name, _] : params) {
        bool take = false;
        if (filter == ModuleFilter::All)
            take = true;
        else if (filter == ModuleFilter::HeadOnly)
            take = is_head_param(name);
        else if (const char c = attn_projection(name))
            take = letters.find(c) != std::string::npos;
        if (take) out.push_back(name);
    }
    return out;
}

}  // namespace siftlab
