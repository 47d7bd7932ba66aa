#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ocd::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of 64-bit reals.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> data() noexcept { return values_; }
    std::span<const double> data() const noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * shape_.back() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_.back() + c]; }

    double item() const;
    void fill(double v);
    void reshape(Shape shape);

private:
    Shape shape_;
    std::vector<double> values_;
};

/// One record of the computation graph. Parents are always created before
/// their children, so creation order is a valid topological order.
struct Node {
    Tensor value;
    Tensor grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad();
};

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->ensure_grad(); }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();

    Node* node() const noexcept { return node_.get(); }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

    using BackwardFn = std::function<void(Node&)>;
    static Var from_op(Tensor value, const char* op, std::vector<Var> parents, BackwardFn backward);

private:
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;
};

/// Topologically ordered records reachable from `loss` that take part in
/// differentiation.
struct Graph {
    std::vector<const Node*> records;
};

Graph trace(const Var& loss);

/// Accumulates d(loss)/d(x) into every reachable node that requires a
/// gradient. Throws NonScalarLoss.
void backward(const Var& loss);

// Primitive operations. Binary element-wise ops broadcast when one operand's
// shape is a suffix of the other's (e.g. a bias [n] against [m, n]).
Var matmul(const Var& a, const Var& b); // [m,k]x[k,n], [B,m,k]x[k,n], [B,m,k]x[B,k,n]
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var softmax(const Var& a, int axis = -1);
/// Entries equal to -inf are treated as masked out; every slice needs at
/// least one finite entry.
Var logsumexp(const Var& a, int axis = -1);
Var sum(const Var& a, int axis);
Var sum(const Var& a);
Var mean(const Var& a, int axis);
Var mean(const Var& a);
Var transpose(const Var& a); // swaps the last two axes
Var reshape(const Var& a, Shape shape);
Var concat(std::span<const Var> parts, int axis);
Var slice(const Var& a, int axis, std::size_t begin, std::size_t end);
/// Unit Euclidean norm along `axis`; all-zero slices map to zero with zero gradient.
Var l2_normalize(const Var& a, int axis = -1);
/// Zero mean, unit variance along `axis` (no affine part).
Var layer_norm(const Var& a, int axis = -1, double eps = 1e-5);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|, |numeric|).
/// `f` must rebuild the loss from the current parameter values on every call.
/// Non-finite evaluations report +inf.
double grad_check(const std::function<Var()>& f, std::span<Var> params, double h = 1e-5);

} // namespace ocd::nn
