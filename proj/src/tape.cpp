// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include "siftlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "siftlab/error.hpp"

namespace siftlab {

const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// BackwardContext

const Tensor& BackwardContext::out() const { return tape_.nodes_[node_].value(); }

std::span<const double> BackwardContext::grad_out() const { return tape_.grads_[node_]; }

const Tensor& BackwardContext::input(std::size_t k) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value();
}

bool BackwardContext::needs_grad(std::size_t k) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].requires_grad;
}

std::span<double> BackwardContext::input_grad(std::size_t k) {
    return tape_.grad_buffer(tape_.nodes_[node_].inputs.at(k));
}

// ---------------------------------------------------------------------------
// Tape

void Tape::mark_trainable(const std::string& name) {
    if (!nodes_.empty()) throw TapeError("mark_trainable must precede the forward pass");
    trainable_.insert(name);
}

bool Tape::is_trainable(std::string_view name) const { return trainable_.contains(name); }

void Tape::register_grad_hook(const std::string& name, GradHook hook) {
    if (!is_trainable(name)) throw TapeError("cannot hook '" + name + "': not trainable on this tape");
    if (hooks_.contains(name)) throw TapeError("duplicate gradient hook on '" + name + "'");
    hooks_.emplace(name, std::move(hook));
}

bool Tape::has_hook(std::string_view name) const { return hooks_.contains(name); }

Var Tape::constant(Tensor value) {
    quantize_inplace(precision_, value.data());
    Node node;
    node.owned = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(const std::string& name, const Tensor& value) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    Node node;
    node.external = &value;
    if (is_trainable(name)) {
        node.requires_grad = true;
        node.param_name = name;
    }
    nodes_.push_back(std::move(node));
    param_nodes_.emplace(name, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    quantize_inplace(precision_, value.data());
    Node node;
    node.owned = std::move(value);
    const std::size_t id = nodes_.size();
    for (std::size_t in : inputs) {
        Node& parent = nodes_.at(in);
        node.requires_grad = node.requires_grad || parent.requires_grad;
        if (!parent.param_name.empty() && parent.first_consumer == SIZE_MAX) parent.first_consumer = id;
    }
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, id};
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

std::span<double> Tape::grad_buffer(std::size_t id) {
    auto& buf = grads_[id];
    if (buf.empty()) {
        buf.assign(nodes_[id].value().size(), 0.0);
        if (!nodes_[id].param_name.empty()) {
            ++stats_.live;
            ++stats_.allocations;
            stats_.peak = std::max(stats_.peak, stats_.live);
        }
    }
    return buf;
}

void Tape::finalize_param(std::size_t id) {
    const Node& node = nodes_[id];
    auto buf = grad_buffer(id);
    quantize_inplace(precision_, buf);
    if (auto hook = hooks_.find(node.param_name); hook != hooks_.end()) {
        {
            const GradHookReceipt receipt{node.param_name, node.value().shape(), buf, backward_count_};
            hook->second(receipt);
        }
        std::vector<double>().swap(grads_[id]);
        --stats_.live;
    } else {
        retained_.insert_or_assign(node.param_name, Tensor(node.value().shape(), std::move(grads_[id])));
        grads_[id] = {};
    }
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw TapeError("loss belongs to a different tape");
    if (backward_done_) throw TapeError("backward called twice without a new forward pass");
    if (value(loss.id).size() != 1) throw ShapeError("backward needs a scalar loss");
    backward_done_ = true;

    grads_.assign(nodes_.size(), {});
    stats_ = GradBufferStats{};
    // Params that feed no node up to the loss complete at the end.
    std::vector<std::vector<std::size_t>> finalize_at(nodes_.size());
    std::vector<std::size_t> late;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.param_name.empty()) continue;
        if (n.first_consumer <= loss.id)
            finalize_at[n.first_consumer].push_back(i);
        else
            late.push_back(i);
    }

    if (nodes_[loss.id].requires_grad) grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !grads_[i].empty()) {
            quantize_inplace(precision_, grads_[i]);
            BackwardContext ctx(*this, i);
            n.backward(ctx);
            std::vector<double>().swap(grads_[i]);
        }
        for (std::size_t p : finalize_at[i]) finalize_param(p);
    }
    for (std::size_t p : late) finalize_param(p);
    ++backward_count_;
}

const Tensor* Tape::grad(std::string_view name) const {
    auto it = retained_.find(name);
    return it == retained_.end() ? nullptr : &it->second;
}

std::map<std::string, Tensor, std::less<>> Tape::take_grads() { return std::exchange(retained_, {}); }

void Tape::reset() {
    nodes_.clear();
    param_nodes_.clear();
    retained_.clear();
    grads_.clear();
    backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Primitives

namespace ad {
namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw TapeError("operands live on different tapes");
    return *a.tape;
}

bool is_suffix(const Shape& full, const Shape& tail) {
    if (tail.size() > full.size()) return false;
    return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

void check_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (!is_suffix(a, b))
        throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

template <class F>
Var unary(Var a, F f, std::function<double(double x, double y)> dfdx) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return a.tape->record(std::move(y), {a.id}, [dfdx](BackwardContext& ctx) {
        const auto& xv = ctx.input(0);
        const auto& yv = ctx.out();
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
    const std::size_t m = sa[sa.size() - 2], k = sa.back();
    const std::size_t k2 = sb[sb.size() - 2], n = sb.back();
    if (k != k2) throw ShapeError("matmul: inner dims differ, " + shape_str(sa) + " x " + shape_str(sb));
    const bool shared_b = sb.size() == 2;
    if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
        throw ShapeError("matmul: batch dims differ, " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t batch = numel(Shape(sa.begin(), sa.end() - 2));

    Shape so(sa.begin(), sa.end() - 1);
    so.push_back(n);
    Tensor out(so);
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* A = av.data().data() + bi * m * k;
        const double* B = bv.data().data() + (shared_b ? 0 : bi * k * n);
        double* C = out.data().data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
            }
    }
    return tape.record(std::move(out), {a.id, b.id}, [=](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        const auto& A = ctx.input(0);
        const auto& B = ctx.input(1);
        if (ctx.needs_grad(0)) {
            auto ga = ctx.input_grad(0);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* Bp = B.data().data() + (shared_b ? 0 : bi * k * n);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[bi * m * n + i * n + j] * Bp[p * n + j];
                        ga[bi * m * k + i * k + p] += acc;
                    }
            }
        }
        if (ctx.needs_grad(1)) {
            auto gb = ctx.input_grad(1);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* Ap = A.data().data() + bi * m * k;
                double* Gb = gb.data() + (shared_b ? 0 : bi * k * n);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = Ap[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) Gb[p * n + j] += aip * g[bi * m * n + i * n + j];
                    }
            }
        }
    });
}

Var transpose(Var a) {
    const Shape& s = a.shape();
    if (s.size() < 2) throw ShapeError("transpose needs rank >= 2");
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t batch = a.value().size() / (r * c);
    Shape so = s;
    std::swap(so[so.size() - 2], so.back());
    Tensor out(so);
    const auto& x = a.value();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
    return a.tape->record(std::move(out), {a.id}, [=](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += g[b * r * c + j * r + i];
    });
}

Var permute_0213(Var a) {
    const Shape& s = a.shape();
    if (s.size() != 4) throw ShapeError("permute_0213 needs rank 4, got " + shape_str(s));
    const std::size_t A = s[0], B = s[1], C = s[2], D = s[3];
    Tensor out(Shape{A, C, B, D});
    const auto& x = a.value();
    auto src = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * B + j) * C + k) * D; };
    auto dst = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * C + k) * B + j) * D; };
    for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < B; ++j)
            for (std::size_t k = 0; k < C; ++k)
                for (std::size_t d = 0; d < D; ++d) out[dst(i, j, k) + d] = x[src(i, j, k) + d];
    return a.tape->record(std::move(out), {a.id}, [=](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < A; ++i)
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t k = 0; k < C; ++k)
                    for (std::size_t d = 0; d < D; ++d) gx[src(i, j, k) + d] += g[dst(i, j, k) + d];
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape->record(std::move(out), {a.id}, [](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    check_broadcast("add", a.shape(), b.shape());
    const auto& x = a.value();
    const auto& y = b.value();
    const std::size_t nb = y.size();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % nb];
    return tape.record(std::move(out), {a.id, b.id}, [nb](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        if (ctx.needs_grad(0)) {
            auto ga = ctx.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (ctx.needs_grad(1)) {
            auto gb = ctx.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    check_broadcast("sub", a.shape(), b.shape());
    const auto& x = a.value();
    const auto& y = b.value();
    const std::size_t nb = y.size();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % nb];
    return tape.record(std::move(out), {a.id, b.id}, [nb](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        if (ctx.needs_grad(0)) {
            auto ga = ctx.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (ctx.needs_grad(1)) {
            auto gb = ctx.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    check_broadcast("mul", a.shape(), b.shape());
    const auto& x = a.value();
    const auto& y = b.value();
    const std::size_t nb = y.size();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % nb];
    return tape.record(std::move(out), {a.id, b.id}, [nb](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        const auto& xv = ctx.input(0);
        const auto& yv = ctx.input(1);
        if (ctx.needs_grad(0)) {
            auto ga = ctx.input_grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i % nb];
        }
        if (ctx.needs_grad(1)) {
            auto gb = ctx.input_grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * xv[i];
        }
    });
}

Var scale(Var a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var relu(Var a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
        [](double x, double) {
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        });
}

Var softmax(Var a) {
    const auto& x = a.value();
    if (x.rank() < 1) throw ShapeError("softmax needs rank >= 1");
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * c;
        double* yi = out.data().data() + r * c;
        const double mx = *std::max_element(xi, xi + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
    }
    return a.tape->record(std::move(out), {a.id}, [rows, c](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        const auto& y = ctx.out();
        auto gx = ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
        }
    });
}

Var causal_mask(Var a) {
    const auto& x = a.value();
    const Shape& s = x.shape();
    if (s.size() < 2 || s[s.size() - 2] != s.back()) throw ShapeError("causal_mask needs [...,T,T], got " + shape_str(s));
    const std::size_t t = s.back();
    const std::size_t batch = x.size() / (t * t);
    Tensor out = x;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = i + 1; j < t; ++j) out[b * t * t + i * t + j] = -std::numeric_limits<double>::infinity();
    return a.tape->record(std::move(out), {a.id}, [batch, t](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j <= i; ++j) gx[b * t * t + i * t + j] += g[b * t * t + i * t + j];
    });
}

Var layer_norm(Var a, double eps) {
    const auto& x = a.value();
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    Tensor out(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (xi[j] - mu) * is;
    }
    return a.tape->record(std::move(out), {a.id}, [rows, c, inv_std](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        const auto& xhat = ctx.out();
        auto gx = ctx.input_grad(0);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
            double mg = 0.0, mgx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                mg += g[r * c + j];
                mgx += g[r * c + j] * xhat[r * c + j];
            }
            mg *= inv_c;
            mgx *= inv_c;
            for (std::size_t j = 0; j < c; ++j)
                gx[r * c + j] += (*inv_std)[r] * (g[r * c + j] - mg - xhat[r * c + j] * mgx);
        }
    });
}

Var embedding(Var table, std::span<const int> ids, Shape leading) {
    const auto& w = table.value();
    if (w.rank() != 2) throw ShapeError("embedding table must be [V,D]");
    if (numel(leading) != ids.size()) throw ShapeError("embedding: ids do not match leading shape " + shape_str(leading));
    const std::size_t v = w.dim(0), d = w.dim(1);
    std::vector<int> idx(ids.begin(), ids.end());
    for (int id : idx)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeError("embedding id " + std::to_string(id) + " out of range for vocab " + std::to_string(v));
    Shape so = std::move(leading);
    so.push_back(d);
    Tensor out(so);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(w.data().data() + static_cast<std::size_t>(idx[i]) * d, d, out.data().data() + i * d);
    return table.tape->record(std::move(out), {table.id}, [idx = std::move(idx), d](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gw = ctx.input_grad(0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gw[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
    });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
    const auto& x = logits.value();
    if (x.rank() != 2) throw ShapeError("cross_entropy needs [N,C] logits, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (targets.size() != n) throw ShapeError("cross_entropy: target count differs from rows");
    std::vector<int> tgt(targets.begin(), targets.end());
    for (int t : tgt)
        if (t < 0 || static_cast<std::size_t>(t) >= c)
            throw ShapeError("cross_entropy target " + std::to_string(t) + " out of range");
    auto probs = std::make_shared<std::vector<double>>(n * c);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* xi = x.data().data() + r * c;
        const double mx = *std::max_element(xi, xi + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += ((*probs)[r * c + j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
        total += std::log(z) + mx - xi[tgt[r]];
    }
    return logits.tape->record(
        Tensor::scalar(total / static_cast<double>(n)), {logits.id},
        [probs, tgt = std::move(tgt), n, c](BackwardContext& ctx) {
            const double g = ctx.grad_out()[0] / static_cast<double>(n);
            auto gx = ctx.input_grad(0);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g * (*probs)[r * c + j];
                gx[r * c + static_cast<std::size_t>(tgt[r])] -= g;
            }
        });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return a.tape->record(Tensor::scalar(total), {a.id}, [](BackwardContext& ctx) {
        const double g = ctx.grad_out()[0];
        for (double& gx : ctx.input_grad(0)) gx += g;
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return a.tape->record(Tensor::scalar(total / n), {a.id}, [n](BackwardContext& ctx) {
        const double g = ctx.grad_out()[0] / n;
        for (double& gx : ctx.input_grad(0)) gx += g;
    });
}

Var last_position(Var a) {
    const Shape& s = a.shape();
    if (s.size() != 3) throw ShapeError("last_position needs [B,T,D], got " + shape_str(s));
    const std::size_t b = s[0], t = s[1], d = s[2];
    Tensor out(Shape{b, d});
    const auto& x = a.value();
    for (std::size_t i = 0; i < b; ++i)
        std::copy_n(x.data().data() + (i * t + t - 1) * d, d, out.data().data() + i * d);
    return a.tape->record(std::move(out), {a.id}, [b, t, d](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) gx[(i * t + t - 1) * d + j] += g[i * d + j];
    });
}

}  // namespace ad
}  // namespace siftlab
