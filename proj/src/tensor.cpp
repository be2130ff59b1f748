#include "svp/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace svp {

namespace autodiff {

namespace {
thread_local bool g_grad_enabled = true;
thread_local uint64_t g_visit_counter = 0;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

// Iterative teardown: shared_ptr chains otherwise recurse once per node and
// can blow the stack on long training graphs.
Node::~Node() {
    std::vector<std::shared_ptr<Node>> stack;
    for (auto& p : parents) {
        if (p && p.use_count() == 1) stack.push_back(std::move(p));
    }
    parents.clear();
    backward = nullptr;
    while (!stack.empty()) {
        std::shared_ptr<Node> n = std::move(stack.back());
        stack.pop_back();
        for (auto& p : n->parents) {
            if (p && p.use_count() == 1) stack.push_back(std::move(p));
        }
        n->parents.clear();
        n->backward = nullptr;
    }
}

}  // namespace autodiff

using autodiff::Node;

void ensure_finite(const double* p, int64_t n, const char* where) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i]))
            throw NumericError(std::string("non-finite value in ") + where);
    }
}

Tensor::Tensor(Shape shape, double fill) {
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value.assign(numel(node_->shape), fill);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    check(static_cast<int64_t>(data.size()) == numel(shape),
          "from_data: size mismatch for shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const Shape& Tensor::shape() const {
    check(defined(), "use of undefined tensor");
    return node_->shape;
}

int64_t Tensor::dim(int i) const { return shape().at(i); }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->value.size()); }
double* Tensor::data() { return node_->value.data(); }
const double* Tensor::data() const { return node_->value.data(); }

double Tensor::item() const {
    check(size() == 1, "item() requires a scalar tensor");
    return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

bool Tensor::grad_tracked() const { return defined() && node_->requires_grad; }

Tensor Tensor::grad() const {
    Tensor g(shape());
    if (node_->grad.size() == node_->value.size())
        std::copy(node_->grad.begin(), node_->grad.end(), g.data());
    return g;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor::from_data(shape(), node_->value); }

void Tensor::backward() const {
    check(size() == 1, "backward() requires a scalar loss");
    ensure_finite(data(), 1, "loss");

    uint64_t s = ++autodiff::g_visit_counter;
    struct Frame {
        Node* n;
        size_t i;
    };
    std::vector<Node*> post;
    std::vector<Frame> dfs;
    node_->visit_stamp = s;
    dfs.push_back({node_.get(), 0});
    while (!dfs.empty()) {
        Frame& f = dfs.back();
        if (f.i < f.n->parents.size()) {
            Node* p = f.n->parents[f.i++].get();
            if (p && p->visit_stamp != s && p->requires_grad) {
                p->visit_stamp = s;
                dfs.push_back({p, 0});
            }
        } else {
            post.push_back(f.n);
            dfs.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    // reverse post-order: every consumer runs before its producers, so each
    // node's gradient is complete when its backward fires
    for (auto it = post.rbegin(); it != post.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        if (n->grad.size() != n->value.size()) continue;  // unreached
        ensure_finite(n->grad.data(), static_cast<int64_t>(n->grad.size()),
                      "backward pass");
        n->backward(*n);
    }
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward, const char* opname) {
    ensure_finite(value.data(), static_cast<int64_t>(value.size()), opname);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = autodiff::grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p.grad_tracked();
        track = any;
    }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BCast { Same, AScalar, BScalar, APlane, BPlane };

struct BinarySpec {
    double (*fwd)(double, double);
    double (*da)(double, double);
    double (*db)(double, double);
    const char* name;
};

BCast classify(const Shape& a, const Shape& b, const char* name) {
    if (a == b) return BCast::Same;
    if (numel(a) == 1) return BCast::AScalar;
    if (numel(b) == 1) return BCast::BScalar;
    if (a.size() == 3 && b.size() == 3 && a[1] == b[1] && a[2] == b[2]) {
        if (a[0] == 1) return BCast::APlane;
        if (b[0] == 1) return BCast::BPlane;
    }
    throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a) +
                     " vs " + shape_str(b));
}

Tensor binary_op(const Tensor& a, const Tensor& b, const BinarySpec& sp) {
    BCast k = classify(a.shape(), b.shape(), sp.name);
    const Shape& rshape = (k == BCast::AScalar || k == BCast::APlane) ? b.shape() : a.shape();
    int64_t n = numel(rshape);
    int64_t plane = 1;
    if (k == BCast::APlane || k == BCast::BPlane) plane = rshape[1] * rshape[2];

    auto index_a = [k, plane](int64_t i) -> int64_t {
        switch (k) {
            case BCast::AScalar: return 0;
            case BCast::APlane: return i % plane;
            default: return i;
        }
    };
    auto index_b = [k, plane](int64_t i) -> int64_t {
        switch (k) {
            case BCast::BScalar: return 0;
            case BCast::BPlane: return i % plane;
            default: return i;
        }
    };

    std::vector<double> out(n);
    const double* pa = a.data();
    const double* pb = b.data();
    if (k == BCast::Same) {
        for (int64_t i = 0; i < n; ++i) out[i] = sp.fwd(pa[i], pb[i]);
    } else {
        for (int64_t i = 0; i < n; ++i) out[i] = sp.fwd(pa[index_a(i)], pb[index_b(i)]);
    }

    auto backward = [sp, k, plane, n, index_a, index_b](Node& self) {
        Node* A = self.parents[0].get();
        Node* B = self.parents[1].get();
        const double* pa = A->value.data();
        const double* pb = B->value.data();
        const double* g = self.grad.data();
        if (A->requires_grad) {
            double* ga = A->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                int64_t ia = index_a(i);
                ga[ia] += sp.da(pa[ia], pb[index_b(i)]) * g[i];
            }
        }
        if (B->requires_grad) {
            double* gb = B->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                int64_t ib = index_b(i);
                gb[ib] += sp.db(pa[index_a(i)], pb[ib]) * g[i];
            }
        }
    };
    return make_op(rshape, std::move(out), {a, b}, backward, sp.name);
}

struct UnarySpec {
    double (*fwd)(double);
    // derivative given input x and output y
    double (*dfd)(double, double);
    const char* name;
};

Tensor unary_op(const Tensor& a, const UnarySpec& sp) {
    int64_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = sp.fwd(pa[i]);
    auto backward = [sp, n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* pa = A->value.data();
        const double* y = self.value.data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += sp.dfd(pa[i], y[i]) * g[i];
    };
    return make_op(a.shape(), std::move(out), {a}, backward, sp.name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    static const BinarySpec sp{[](double x, double y) { return x + y; },
                               [](double, double) { return 1.0; },
                               [](double, double) { return 1.0; }, "add"};
    return binary_op(a, b, sp);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    static const BinarySpec sp{[](double x, double y) { return x - y; },
                               [](double, double) { return 1.0; },
                               [](double, double) { return -1.0; }, "sub"};
    return binary_op(a, b, sp);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    static const BinarySpec sp{[](double x, double y) { return x * y; },
                               [](double, double y) { return y; },
                               [](double x, double) { return x; }, "mul"};
    return binary_op(a, b, sp);
}

Tensor div(const Tensor& a, const Tensor& b) {
    static const BinarySpec sp{[](double x, double y) { return x / y; },
                               [](double, double y) { return 1.0 / y; },
                               [](double x, double y) { return -x / (y * y); }, "div"};
    return binary_op(a, b, sp);
}

Tensor neg(const Tensor& a) { return affine(a, -1.0, 0.0); }

Tensor affine(const Tensor& a, double scale, double shift) {
    int64_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = scale * pa[i] + shift;
    auto backward = [scale, n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += scale * g[i];
    };
    return make_op(a.shape(), std::move(out), {a}, backward, "affine");
}

Tensor exp(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::exp(x); },
                              [](double, double y) { return y; }, "exp"};
    return unary_op(a, sp);
}

Tensor log(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::log(x); },
                              [](double x, double) { return 1.0 / x; }, "log"};
    return unary_op(a, sp);
}

Tensor sqrt(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::sqrt(x); },
                              [](double, double y) { return 0.5 / y; }, "sqrt"};
    return unary_op(a, sp);
}

Tensor square(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return x * x; },
                              [](double x, double) { return 2.0 * x; }, "square"};
    return unary_op(a, sp);
}

Tensor abs(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::abs(x); },
                              [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); },
                              "abs"};
    return unary_op(a, sp);
}

Tensor sin(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::sin(x); },
                              [](double x, double) { return std::cos(x); }, "sin"};
    return unary_op(a, sp);
}

Tensor cos(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::cos(x); },
                              [](double x, double) { return -std::sin(x); }, "cos"};
    return unary_op(a, sp);
}

Tensor tanh(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return std::tanh(x); },
                              [](double, double y) { return 1.0 - y * y; }, "tanh"};
    return unary_op(a, sp);
}

Tensor sigmoid(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                              [](double, double y) { return y * (1.0 - y); }, "sigmoid"};
    return unary_op(a, sp);
}

Tensor softplus(const Tensor& a) {
    static const UnarySpec sp{
        [](double x) {
            return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); }, "softplus"};
    return unary_op(a, sp);
}

Tensor relu(const Tensor& a) {
    static const UnarySpec sp{[](double x) { return x > 0 ? x : 0.0; },
                              [](double x, double) { return x > 0 ? 1.0 : 0.0; }, "relu"};
    return unary_op(a, sp);
}

Tensor leaky_relu(const Tensor& a, double slope) {
    int64_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] > 0 ? pa[i] : slope * pa[i];
    auto backward = [slope, n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* pa = A->value.data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += (pa[i] > 0 ? 1.0 : slope) * g[i];
    };
    return make_op(a.shape(), std::move(out), {a}, backward, "leaky_relu");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    check(lo <= hi, "clamp: lo > hi");
    int64_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = std::min(hi, std::max(lo, pa[i]));
    auto backward = [lo, hi, n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* pa = A->value.data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            if (pa[i] >= lo && pa[i] <= hi) ga[i] += g[i];
    };
    return make_op(a.shape(), std::move(out), {a}, backward, "clamp");
}

Tensor clamp_min(const Tensor& a, double lo) {
    int64_t n = a.size();
    std::vector<double> out(n);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = std::max(lo, pa[i]);
    auto backward = [lo, n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* pa = A->value.data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
            if (pa[i] >= lo) ga[i] += g[i];
    };
    return make_op(a.shape(), std::move(out), {a}, backward, "clamp_min");
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    int64_t n = a.size();
    const double* pa = a.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    auto backward = [n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        double g = self.grad[0];
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
    return make_op({1}, {acc}, {a}, backward, "sum");
}

Tensor mean(const Tensor& a) {
    return affine(sum(a), 1.0 / static_cast<double>(a.size()), 0.0);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    check(numel(shape) == a.size(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> out(a.data(), a.data() + a.size());
    int64_t n = a.size();
    auto backward = [n](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    };
    return make_op(std::move(shape), std::move(out), {a}, backward, "reshape");
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    check(axis >= 0 && axis < static_cast<int>(s.size()), "slice: bad axis");
    check(start >= 0 && len > 0 && start + len <= s[axis], "slice: out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    int64_t in_stride = s[axis] * inner;
    int64_t out_stride = len * inner;

    Shape rshape = s;
    rshape[axis] = len;
    std::vector<double> out(outer * out_stride);
    const double* pa = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(pa + o * in_stride + start * inner,
                  pa + o * in_stride + (start + len) * inner,
                  out.begin() + o * out_stride);

    auto backward = [outer, inner, in_stride, out_stride, start](Node& self) {
        Node* A = self.parents[0].get();
        if (!A->requires_grad) return;
        double* ga = A->ensure_grad();
        const double* g = self.grad.data();
        for (int64_t o = 0; o < outer; ++o) {
            double* dst = ga + o * in_stride + start * inner;
            const double* src = g + o * out_stride;
            for (int64_t i = 0; i < out_stride; ++i) dst[i] += src[i];
        }
    };
    return make_op(std::move(rshape), std::move(out), {a}, backward, "slice");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    check(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    check(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        check(s.size() == s0.size(), "concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            check(static_cast<int>(i) == axis || s[i] == s0[i],
                  "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        total_axis += s[axis];
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    Shape rshape = s0;
    rshape[axis] = total_axis;
    std::vector<double> out(outer * total_axis * inner);
    std::vector<int64_t> axis_sizes;
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t ax = p.shape()[axis];
        axis_sizes.push_back(ax);
        const double* src = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * ax * inner, src + (o + 1) * ax * inner,
                      out.begin() + o * total_axis * inner + off * inner);
        off += ax;
    }

    auto backward = [outer, inner, total_axis, axis_sizes](Node& self) {
        const double* g = self.grad.data();
        int64_t off = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            Node* P = self.parents[pi].get();
            int64_t ax = axis_sizes[pi];
            if (P->requires_grad) {
                double* gp = P->ensure_grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = g + o * total_axis * inner + off * inner;
                    double* dst = gp + o * ax * inner;
                    for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                }
            }
            off += ax;
        }
    };
    return make_op(std::move(rshape), std::move(out), parts, backward, "concat");
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
    int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    check(k == k2, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() =
        ConstMap(a.data(), m, k) * ConstMap(b.data(), k, n);

    auto backward = [m, k, n](Node& self) {
        Node* A = self.parents[0].get();
        Node* B = self.parents[1].get();
        ConstMap g(self.grad.data(), m, n);
        if (A->requires_grad) {
            MutMap ga(A->ensure_grad(), m, k);
            ga.noalias() += g * ConstMap(B->value.data(), k, n).transpose();
        }
        if (B->requires_grad) {
            MutMap gb(B->ensure_grad(), k, n);
            gb.noalias() += ConstMap(A->value.data(), m, k).transpose() * g;
        }
    };
    return make_op({m, n}, std::move(out), {a, b}, backward, "matmul");
}

}  // namespace svp
