#include "ocd/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "ocd/error.hpp"

namespace ocd::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    fail(ErrorCode::ShapeMismatch, op + ": " + to_string(a) + " vs " + to_string(b));
}

void require_finite(const Tensor& t, const char* op) {
    for (double v : t.data())
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, std::string(op) + " received a non-finite value");
}

std::size_t resolve_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) fail(ErrorCode::ShapeMismatch, std::string(op) + ": axis out of range");
    return static_cast<std::size_t>(axis);
}

// A tensor viewed as [outer, len, inner] around one axis.
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;

    AxisView(const Shape& s, std::size_t axis) {
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        len = s[axis];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    }
    std::size_t at(std::size_t o, std::size_t l, std::size_t i) const { return (o * len + l) * inner + i; }
    std::size_t reduced(std::size_t o, std::size_t i) const { return o * inner + i; }
};

Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out.push_back(s[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Broadcast layout for binary element-wise ops: the smaller operand repeats
// every `period` elements of the larger.
struct Broadcast {
    bool a_is_big = true;
    std::size_t period = 0;
    Shape out;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return {true, numel(a), a};
    if (is_suffix(b, a)) return {true, numel(b), a};
    if (is_suffix(a, b)) return {false, numel(a), b};
    shape_error(op, a, b);
}

// Element-wise op where the derivative is expressed from input x and output y.
template <typename F, typename D>
Var elementwise(const Var& a, const char* op, F f, D dfdx) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return Var::from_op(std::move(y), op, {a}, [dfdx](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.ensure_grad();
        const Tensor& x = p.value;
        for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * dfdx(x[i], self.value[i]);
    });
}

} // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != numel(shape_))
        fail(ErrorCode::ShapeMismatch, "tensor of shape " + to_string(shape_) + " given " +
                                           std::to_string(values_.size()) + " values");
}

double Tensor::item() const {
    if (values_.size() != 1) fail(ErrorCode::ShapeMismatch, "item() on tensor of shape " + to_string(shape_));
    return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::reshape(Shape shape) {
    if (numel(shape) != values_.size()) shape_error("reshape", shape_, shape);
    shape_ = std::move(shape);
}

Tensor& Node::ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

void Var::zero_grad() {
    if (node_->requires_grad) node_->ensure_grad().fill(0.0);
}

Var Var::from_op(Tensor value, const char* op, std::vector<Var> parents, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(std::move(p.node_));
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

Graph trace(const Var& loss) {
    Graph g;
    if (!loss.requires_grad()) return g;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<const Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            g.records.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

void backward(const Var& loss) {
    if (loss.value().size() != 1)
        fail(ErrorCode::NonScalarLoss, "loss has shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) return;
    auto graph = trace(loss);
    for (const Node* n : graph.records)
        if (n->backward) const_cast<Node*>(n)->ensure_grad().fill(0.0);
    loss.node()->ensure_grad()[0] = 1.0;
    for (auto it = graph.records.rbegin(); it != graph.records.rend(); ++it) {
        Node* n = const_cast<Node*>(*it);
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool batched = sa.size() == 3 && sb.size() == 3;
    const bool folded = sa.size() == 3 && sb.size() == 2;
    if (!((sa.size() == 2 && sb.size() == 2) || batched || folded)) shape_error("matmul", sa, sb);
    const std::size_t k = sa.back();
    if (sb[sb.size() - 2] != k || (batched && sa[0] != sb[0])) shape_error("matmul", sa, sb);
    const std::size_t n = sb.back();
    const std::size_t batch = batched ? sa[0] : 1;
    const std::size_t m = batched ? sa[1] : numel(sa) / k;

    Shape out_shape = sa;
    out_shape.back() = n;
    Tensor out(out_shape);
    for (std::size_t t = 0; t < batch; ++t) {
        ConstMap A(a.value().data().data() + t * m * k, Eigen::Index(m), Eigen::Index(k));
        ConstMap B(b.value().data().data() + t * k * n, Eigen::Index(k), Eigen::Index(n));
        MutMap C(out.data().data() + t * m * n, Eigen::Index(m), Eigen::Index(n));
        C.noalias() = A * B;
    }
    return Var::from_op(std::move(out), "matmul", {a, b}, [batch, m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t t = 0; t < batch; ++t) {
            ConstMap G(self.grad.data().data() + t * m * n, Eigen::Index(m), Eigen::Index(n));
            if (pa.requires_grad) {
                ConstMap B(pb.value.data().data() + t * k * n, Eigen::Index(k), Eigen::Index(n));
                MutMap GA(pa.ensure_grad().data().data() + t * m * k, Eigen::Index(m), Eigen::Index(k));
                GA.noalias() += G * B.transpose();
            }
            if (pb.requires_grad) {
                ConstMap A(pa.value.data().data() + t * m * k, Eigen::Index(m), Eigen::Index(k));
                MutMap GB(pb.ensure_grad().data().data() + t * k * n, Eigen::Index(k), Eigen::Index(n));
                GB.noalias() += A.transpose() * G;
            }
        }
    });
}

Var transpose(const Var& a) {
    const Shape& s = a.shape();
    if (s.size() < 2) fail(ErrorCode::ShapeMismatch, "transpose needs rank >= 2, got " + to_string(s));
    const std::size_t r = s[s.size() - 2], c = s.back(), batch = numel(s) / (r * c);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape.back());
    Tensor out(out_shape);
    const auto& x = a.value();
    for (std::size_t t = 0; t < batch; ++t)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[t * r * c + j * r + i] = x[t * r * c + i * c + j];
    return Var::from_op(std::move(out), "transpose", {a}, [batch, r, c](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::size_t t = 0; t < batch; ++t)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value();
    out.reshape(std::move(shape));
    return Var::from_op(std::move(out), "reshape", {a}, [](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Element-wise arithmetic

Var add(const Var& a, const Var& b) {
    const auto plan = plan_broadcast("add", a.shape(), b.shape());
    const Tensor& big = plan.a_is_big ? a.value() : b.value();
    const Tensor& small = plan.a_is_big ? b.value() : a.value();
    Tensor out(plan.out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = big[i] + small[i % plan.period];
    return Var::from_op(std::move(out), "add", {a, b}, [plan](Node& self) {
        Node& big = *self.parents[plan.a_is_big ? 0 : 1];
        Node& small = *self.parents[plan.a_is_big ? 1 : 0];
        if (big.requires_grad) {
            Tensor& g = big.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (small.requires_grad) {
            Tensor& g = small.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % plan.period] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
    const auto plan = plan_broadcast("mul", a.shape(), b.shape());
    const Tensor& big = plan.a_is_big ? a.value() : b.value();
    const Tensor& small = plan.a_is_big ? b.value() : a.value();
    Tensor out(plan.out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = big[i] * small[i % plan.period];
    return Var::from_op(std::move(out), "mul", {a, b}, [plan](Node& self) {
        Node& big = *self.parents[plan.a_is_big ? 0 : 1];
        Node& small = *self.parents[plan.a_is_big ? 1 : 0];
        if (big.requires_grad) {
            Tensor& g = big.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * small.value[i % plan.period];
        }
        if (small.requires_grad) {
            Tensor& g = small.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % plan.period] += self.grad[i] * big.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return elementwise(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var exp(const Var& a) {
    return elementwise(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    for (double v : a.value().data())
        if (!std::isfinite(v) || v < 0.0) fail(ErrorCode::NonFiniteInput, "log received a non-finite or negative value");
    return elementwise(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(const Var& a) {
    return elementwise(
        a, "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return elementwise(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return elementwise(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

Var relu(const Var& a) {
    return elementwise(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Axis operations

Var softmax(const Var& a, int axis_arg) {
    require_finite(a.value(), "softmax");
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "softmax");
    const AxisView v(a.shape(), axis);
    const Tensor& x = a.value();
    Tensor y(a.shape());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < v.len; ++l) m = std::max(m, x[v.at(o, l, i)]);
            double z = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) z += (y[v.at(o, l, i)] = std::exp(x[v.at(o, l, i)] - m));
            for (std::size_t l = 0; l < v.len; ++l) y[v.at(o, l, i)] /= z;
        }
    return Var::from_op(std::move(y), "softmax", {a}, [v](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const Tensor& y = self.value;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (std::size_t l = 0; l < v.len; ++l) dot += self.grad[v.at(o, l, i)] * y[v.at(o, l, i)];
                for (std::size_t l = 0; l < v.len; ++l) {
                    const auto k = v.at(o, l, i);
                    g[k] += y[k] * (self.grad[k] - dot);
                }
            }
    });
}

Var logsumexp(const Var& a, int axis_arg) {
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "logsumexp");
    const AxisView v(a.shape(), axis);
    const Tensor& x = a.value();
    for (double e : x.data())
        if (std::isnan(e) || e == std::numeric_limits<double>::infinity())
            fail(ErrorCode::NonFiniteInput, "logsumexp received NaN or +inf");
    Tensor out(drop_axis(a.shape(), axis));
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < v.len; ++l) m = std::max(m, x[v.at(o, l, i)]);
            if (!std::isfinite(m)) fail(ErrorCode::NonFiniteInput, "logsumexp slice is fully masked");
            double z = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) z += std::exp(x[v.at(o, l, i)] - m);
            out[v.reduced(o, i)] = m + std::log(z);
        }
    return Var::from_op(std::move(out), "logsumexp", {a}, [v](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.ensure_grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const double lse = self.value[v.reduced(o, i)];
                const double up = self.grad[v.reduced(o, i)];
                for (std::size_t l = 0; l < v.len; ++l) {
                    const auto k = v.at(o, l, i);
                    g[k] += up * std::exp(p.value[k] - lse);
                }
            }
    });
}

Var sum(const Var& a, int axis_arg) {
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "sum");
    const AxisView v(a.shape(), axis);
    Tensor out(drop_axis(a.shape(), axis));
    const Tensor& x = a.value();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) out[v.reduced(o, i)] += x[v.at(o, l, i)];
    return Var::from_op(std::move(out), "sum", {a}, [v](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t l = 0; l < v.len; ++l)
                for (std::size_t i = 0; i < v.inner; ++i) g[v.at(o, l, i)] += self.grad[v.reduced(o, i)];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double x : a.value().data()) total += x;
    return Var::from_op(Tensor::scalar(total), "sum_all", {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

Var mean(const Var& a, int axis) {
    const auto ax = resolve_axis(axis, a.shape().size(), "mean");
    return scale(sum(a, axis), 1.0 / double(a.shape()[ax]));
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / double(a.value().size())); }

Var concat(std::span<const Var> parts, int axis_arg) {
    if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of nothing");
    const Shape& first = parts[0].shape();
    const auto axis = resolve_axis(axis_arg, first.size(), "concat");
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) shape_error("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) shape_error("concat", first, s);
        offsets.push_back(total);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    Tensor out(out_shape);
    const AxisView ov(out_shape, axis);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const AxisView pv(parts[k].shape(), axis);
        const Tensor& x = parts[k].value();
        for (std::size_t o = 0; o < pv.outer; ++o)
            for (std::size_t l = 0; l < pv.len; ++l)
                for (std::size_t i = 0; i < pv.inner; ++i) out[ov.at(o, offsets[k] + l, i)] = x[pv.at(o, l, i)];
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return Var::from_op(std::move(out), "concat", std::move(parents), [ov, offsets, axis](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            const AxisView pv(p.value.shape(), axis);
            Tensor& g = p.ensure_grad();
            for (std::size_t o = 0; o < pv.outer; ++o)
                for (std::size_t l = 0; l < pv.len; ++l)
                    for (std::size_t i = 0; i < pv.inner; ++i) g[pv.at(o, l, i)] += self.grad[ov.at(o, offsets[k] + l, i)];
        }
    });
}

Var slice(const Var& a, int axis_arg, std::size_t begin, std::size_t end) {
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "slice");
    if (begin >= end || end > a.shape()[axis])
        fail(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                           to_string(a.shape()));
    const AxisView iv(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const AxisView ov(out_shape, axis);
    Tensor out(out_shape);
    const Tensor& x = a.value();
    for (std::size_t o = 0; o < ov.outer; ++o)
        for (std::size_t l = 0; l < ov.len; ++l)
            for (std::size_t i = 0; i < ov.inner; ++i) out[ov.at(o, l, i)] = x[iv.at(o, begin + l, i)];
    return Var::from_op(std::move(out), "slice", {a}, [iv, ov, begin](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < ov.outer; ++o)
            for (std::size_t l = 0; l < ov.len; ++l)
                for (std::size_t i = 0; i < ov.inner; ++i) g[iv.at(o, begin + l, i)] += self.grad[ov.at(o, l, i)];
    });
}

Var l2_normalize(const Var& a, int axis_arg) {
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "l2_normalize");
    const AxisView v(a.shape(), axis);
    const Tensor& x = a.value();
    Tensor y(a.shape());
    std::vector<double> norms(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double ss = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) ss += x[v.at(o, l, i)] * x[v.at(o, l, i)];
            const double n = std::sqrt(ss);
            norms[v.reduced(o, i)] = n;
            if (n > 0.0)
                for (std::size_t l = 0; l < v.len; ++l) y[v.at(o, l, i)] = x[v.at(o, l, i)] / n;
        }
    return Var::from_op(std::move(y), "l2_normalize", {a}, [v, norms = std::move(norms)](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const Tensor& y = self.value;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const double n = norms[v.reduced(o, i)];
                if (n == 0.0) continue;
                double dot = 0.0;
                for (std::size_t l = 0; l < v.len; ++l) dot += self.grad[v.at(o, l, i)] * y[v.at(o, l, i)];
                for (std::size_t l = 0; l < v.len; ++l) {
                    const auto k = v.at(o, l, i);
                    g[k] += (self.grad[k] - y[k] * dot) / n;
                }
            }
    });
}

Var layer_norm(const Var& a, int axis_arg, double eps) {
    const auto axis = resolve_axis(axis_arg, a.shape().size(), "layer_norm");
    const AxisView v(a.shape(), axis);
    const Tensor& x = a.value();
    Tensor y(a.shape());
    std::vector<double> inv_std(v.outer * v.inner);
    const double len = double(v.len);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            double mu = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) mu += x[v.at(o, l, i)];
            mu /= len;
            double var = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) var += (x[v.at(o, l, i)] - mu) * (x[v.at(o, l, i)] - mu);
            var /= len;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[v.reduced(o, i)] = is;
            for (std::size_t l = 0; l < v.len; ++l) y[v.at(o, l, i)] = (x[v.at(o, l, i)] - mu) * is;
        }
    return Var::from_op(std::move(y), "layer_norm", {a}, [v, inv_std = std::move(inv_std)](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const Tensor& y = self.value;
        const double len = double(v.len);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                double mg = 0.0, mgy = 0.0;
                for (std::size_t l = 0; l < v.len; ++l) {
                    const auto k = v.at(o, l, i);
                    mg += self.grad[k];
                    mgy += self.grad[k] * y[k];
                }
                mg /= len;
                mgy /= len;
                const double is = inv_std[v.reduced(o, i)];
                for (std::size_t l = 0; l < v.len; ++l) {
                    const auto k = v.at(o, l, i);
                    g[k] += is * (self.grad[k] - mg - y[k] * mgy);
                }
            }
    });
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Var()>& f, std::span<Var> params, double h) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    auto eval = [&]() -> double {
        try {
            return f().value().item();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NonFiniteInput) return inf;
            throw;
        }
    };
    for (auto& p : params) p.zero_grad();
    try {
        backward(f());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteInput) return inf;
        throw;
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& value = params[k].mutable_value();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + h;
            const double fp = eval();
            value[i] = orig - h;
            const double fm = eval();
            value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double an = analytic[k][i];
            double err = std::abs(an - numeric) / std::max({1.0, std::abs(an), std::abs(numeric)});
            if (!std::isfinite(err)) return inf;
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace ocd::nn
