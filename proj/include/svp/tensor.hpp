#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "svp/common.hpp"

namespace svp {

class Tensor;

namespace autodiff {

// One recorded operation output. The graph of nodes reachable from a loss is
// the differentiation record; replaying it in reverse topological order
// visits every node once and accumulates gradients additively.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // materialized lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into its parents' grads. May be empty for
    // leaves and for results computed under NoGrad.
    std::function<void(Node&)> backward;
    uint64_t visit_stamp = 0;

    double* ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad.data();
    }

    ~Node();
};

// Disables graph recording in scope (rollouts, metric evaluation).
struct NoGrad {
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

}  // namespace autodiff

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int64_t dim(int i) const;
    int64_t size() const;
    double* data();
    const double* data() const;
    double item() const;  // scalar tensors only

    // Marks this tensor as a differentiable leaf (a parameter).
    Tensor& set_requires_grad(bool on = true);
    bool grad_tracked() const;

    // Gradient accumulated by the last backward(); zeros if never reached.
    Tensor grad() const;
    void zero_grad();

    // Reverse-mode differentiation from a scalar. Each reachable node is
    // visited exactly once; NaN/Inf in any gradient aborts with NumericError.
    void backward() const;

    // Deep copy of the value, detached from the graph.
    Tensor detach() const;
    Tensor clone_structure() const { return detach(); }

    std::shared_ptr<autodiff::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<autodiff::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<autodiff::Node> node_;
};

// Factory for ops with hand-written backward passes (warping etc.).
// `backward` receives the result node; parent values/grads are reached
// through node.parents.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(autodiff::Node&)> backward,
               const char* opname);

// Throws NumericError when any element is not finite.
void ensure_finite(const double* p, int64_t n, const char* where);

// ---- elementwise ----
// Binary ops accept equal shapes, a scalar on either side, or a [1,H,W]
// plane against [C,H,W] (channel broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor affine(const Tensor& a, double scale, double shift);  // scale*a + shift
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return affine(a, s, 0.0); }
inline Tensor operator*(double s, const Tensor& a) { return affine(a, s, 0.0); }
inline Tensor operator+(const Tensor& a, double s) { return affine(a, 1.0, s); }
inline Tensor operator+(double s, const Tensor& a) { return affine(a, 1.0, s); }
inline Tensor operator-(const Tensor& a, double s) { return affine(a, 1.0, -s); }
inline Tensor operator-(double s, const Tensor& a) { return affine(a, -1.0, s); }

}  // namespace svp
