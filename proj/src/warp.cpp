#include "svp/warp.hpp"

#include <cmath>

namespace svp {

using autodiff::Node;

// ---------------------------------------------------------------------------
// plain SE(3)
// ---------------------------------------------------------------------------

std::array<double, 9> rodrigues(const std::array<double, 3>& w) {
    double t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    double theta = std::sqrt(t2);
    double a, b;
    if (theta < 1e-8) {
        a = 1.0 - t2 / 6.0;
        b = 0.5 - t2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / t2;
    }
    double x = w[0], y = w[1], z = w[2];
    return {1 + b * (-(y * y + z * z)), -a * z + b * x * y, a * y + b * x * z,
            a * z + b * x * y, 1 + b * (-(x * x + z * z)), -a * x + b * y * z,
            -a * y + b * x * z, a * x + b * y * z, 1 + b * (-(x * x + y * y))};
}

std::array<double, 16> PoseSE3::to_matrix() const {
    auto r = rodrigues(rotation);
    return {r[0], r[1], r[2], translation[0],
            r[3], r[4], r[5], translation[1],
            r[6], r[7], r[8], translation[2],
            0,    0,    0,    1};
}

PoseSE3 PoseSE3::from_matrix(const std::array<double, 16>& m) {
    PoseSE3 p;
    p.translation = {m[3], m[7], m[11]};
    double tr = m[0] + m[5] + m[10];
    double c = std::max(-1.0, std::min(1.0, (tr - 1.0) / 2.0));
    double theta = std::acos(c);
    if (theta < 1e-10) {
        p.rotation = {0.5 * (m[9] - m[6]), 0.5 * (m[2] - m[8]), 0.5 * (m[4] - m[1])};
    } else {
        double s = theta / (2.0 * std::sin(theta));
        p.rotation = {s * (m[9] - m[6]), s * (m[2] - m[8]), s * (m[4] - m[1])};
    }
    return p;
}

PoseSE3 PoseSE3::compose(const PoseSE3& rhs) const {
    auto a = to_matrix();
    auto b = rhs.to_matrix();
    std::array<double, 16> m{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 4 + j];
            m[i * 4 + j] = acc;
        }
    return from_matrix(m);
}

Tensor PoseSE3::to_tensor() const {
    return Tensor::from_data({6}, {rotation[0], rotation[1], rotation[2],
                                   translation[0], translation[1], translation[2]});
}

PoseSE3 PoseSE3::from_tensor(const Tensor& t) {
    check(t.size() == 6, "PoseSE3: [6] tensor required");
    const double* p = t.data();
    PoseSE3 out;
    out.rotation = {p[0], p[1], p[2]};
    out.translation = {p[3], p[4], p[5]};
    return out;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

Tensor identity_grid(int64_t h, int64_t w) {
    Tensor g({2, h, w});
    double* px = g.data();
    double* py = px + h * w;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            px[y * w + x] = static_cast<double>(x);
            py[y * w + x] = static_cast<double>(y);
        }
    return g;
}

Tensor bilinear_sample(const Tensor& img, const Tensor& coords) {
    check(img.rank() == 3, "bilinear_sample: img must be [C,H,W]");
    check(coords.rank() == 3 && coords.dim(0) == 2,
          "bilinear_sample: coords must be [2,Ho,Wo]");
    ensure_finite(coords.data(), coords.size(), "bilinear_sample coords");
    int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    int64_t Ho = coords.dim(1), Wo = coords.dim(2);
    int64_t n = Ho * Wo;

    const double* cx = coords.data();
    const double* cy = cx + n;
    const double* src = img.data();
    std::vector<double> out(C * n);

    // interpolation corners and weights, reused by the backward pass
    auto corners = [&](int64_t i, int64_t& x0, int64_t& y0, double& fx, double& fy) {
        double x = std::min(std::max(cx[i], 0.0), static_cast<double>(W - 1));
        double y = std::min(std::max(cy[i], 0.0), static_cast<double>(H - 1));
        x0 = std::min(static_cast<int64_t>(x), W - 2 >= 0 ? W - 2 : 0);
        y0 = std::min(static_cast<int64_t>(y), H - 2 >= 0 ? H - 2 : 0);
        fx = x - static_cast<double>(x0);
        fy = y - static_cast<double>(y0);
    };

    for (int64_t i = 0; i < n; ++i) {
        int64_t x0, y0;
        double fx, fy;
        corners(i, x0, y0, fx, fy);
        int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        for (int64_t c = 0; c < C; ++c) {
            const double* p = src + c * H * W;
            double v00 = p[y0 * W + x0], v01 = p[y0 * W + x1];
            double v10 = p[y1 * W + x0], v11 = p[y1 * W + x1];
            out[c * n + i] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                             fy * ((1 - fx) * v10 + fx * v11);
        }
    }

    auto backward = [C, H, W, Ho, Wo, n](Node& self) {
        Node* I = self.parents[0].get();
        Node* Co = self.parents[1].get();
        const double* cx = Co->value.data();
        const double* cy = cx + n;
        const double* src = I->value.data();
        const double* g = self.grad.data();
        double* gi = I->requires_grad ? I->ensure_grad() : nullptr;
        double* gc = Co->requires_grad ? Co->ensure_grad() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            double x = std::min(std::max(cx[i], 0.0), static_cast<double>(W - 1));
            double y = std::min(std::max(cy[i], 0.0), static_cast<double>(H - 1));
            bool in_x = cx[i] > 0.0 && cx[i] < static_cast<double>(W - 1);
            bool in_y = cy[i] > 0.0 && cy[i] < static_cast<double>(H - 1);
            int64_t x0 = std::min(static_cast<int64_t>(x), W - 2 >= 0 ? W - 2 : 0);
            int64_t y0 = std::min(static_cast<int64_t>(y), H - 2 >= 0 ? H - 2 : 0);
            int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            double fx = x - static_cast<double>(x0);
            double fy = y - static_cast<double>(y0);
            for (int64_t c = 0; c < C; ++c) {
                double go = g[c * n + i];
                if (go == 0.0) continue;
                const double* p = src + c * H * W;
                double v00 = p[y0 * W + x0], v01 = p[y0 * W + x1];
                double v10 = p[y1 * W + x0], v11 = p[y1 * W + x1];
                if (gi) {
                    double* q = gi + c * H * W;
                    q[y0 * W + x0] += go * (1 - fy) * (1 - fx);
                    q[y0 * W + x1] += go * (1 - fy) * fx;
                    q[y1 * W + x0] += go * fy * (1 - fx);
                    q[y1 * W + x1] += go * fy * fx;
                }
                if (gc) {
                    // clamped coordinates have zero derivative
                    if (in_x)
                        gc[i] += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                    if (in_y)
                        gc[n + i] += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
            }
        }
    };
    return make_op({C, Ho, Wo}, std::move(out), {img, coords}, backward,
                   "bilinear_sample");
}

Tensor warp_by_flow(const Tensor& src, const Tensor& flow) {
    check(src.rank() == 3 && flow.rank() == 3 && flow.dim(0) == 2,
          "warp_by_flow: src [C,H,W] and flow [2,H,W] required");
    check(flow.dim(1) == src.dim(1) && flow.dim(2) == src.dim(2),
          "warp_by_flow: spatial extents differ");
    return bilinear_sample(src, identity_grid(src.dim(1), src.dim(2)) + flow);
}

// ---------------------------------------------------------------------------
// differentiable SE(3) and depth+pose warping
// ---------------------------------------------------------------------------

Tensor se3_transform(const Tensor& pose6) {
    check(pose6.size() == 6, "se3_transform: [6] pose required");
    Tensor w = reshape(pose6, {6});
    Tensor x = slice(w, 0, 0, 1), y = slice(w, 0, 1, 1), z = slice(w, 0, 2, 1);
    Tensor t2 = square(x) + square(y) + square(z);
    Tensor theta = sqrt(t2 + 1e-18);
    Tensor a = sin(theta) / theta;
    Tensor b = (1.0 - cos(theta)) / (t2 + 1e-18);
    Tensor one = Tensor::scalar(1.0);
    std::vector<Tensor> entries = {
        one + b * (-(square(y) + square(z))), -a * z + b * x * y, a * y + b * x * z,
        slice(w, 0, 3, 1),
        a * z + b * x * y, one + b * (-(square(x) + square(z))), -a * x + b * y * z,
        slice(w, 0, 4, 1),
        -a * y + b * x * z, a * x + b * y * z, one + b * (-(square(x) + square(y))),
        slice(w, 0, 5, 1)};
    return reshape(concat(entries, 0), {3, 4});
}

DepthPoseWarp warp_by_depth_pose(const Tensor& prev, const Tensor& depth,
                                 const Tensor& pose6, const CameraIntrinsics& K) {
    check(prev.rank() == 3, "warp_by_depth_pose: prev must be [C,H,W]");
    check(depth.rank() == 3 && depth.dim(0) == 1,
          "warp_by_depth_pose: depth must be [1,H,W]");
    int64_t H = prev.dim(1), W = prev.dim(2);
    check(depth.dim(1) == H && depth.dim(2) == W,
          "warp_by_depth_pose: depth extent mismatch");
    check(K.fx > 0 && K.fy > 0, "warp_by_depth_pose: invalid intrinsics");
    {
        const double* d = depth.data();
        for (int64_t i = 0; i < depth.size(); ++i)
            check(d[i] > 0.0, "warp_by_depth_pose: non-positive depth");
    }

    Tensor grid = identity_grid(H, W);
    Tensor u = slice(grid, 0, 0, 1);
    Tensor v = slice(grid, 0, 1, 1);

    // backproject with the target depth
    Tensor X = (u - K.cx) * (1.0 / K.fx) * depth;
    Tensor Y = (v - K.cy) * (1.0 / K.fy) * depth;
    const Tensor& Z = depth;

    Tensor T = se3_transform(pose6);
    auto entry = [&T](int r, int c) {
        return reshape(slice(reshape(T, {12}), 0, r * 4 + c, 1), {1});
    };
    Tensor Xs = entry(0, 0) * X + entry(0, 1) * Y + entry(0, 2) * Z + entry(0, 3);
    Tensor Ys = entry(1, 0) * X + entry(1, 1) * Y + entry(1, 2) * Z + entry(1, 3);
    Tensor Zs = entry(2, 0) * X + entry(2, 1) * Y + entry(2, 2) * Z + entry(2, 3);

    // pixels that land behind the source camera are flagged and sampled at the
    // clamped border
    Tensor valid({1, H, W});
    {
        const double* z = Zs.data();
        double* m = valid.data();
        for (int64_t i = 0; i < H * W; ++i) m[i] = z[i] > 1e-6 ? 1.0 : 0.0;
    }
    Tensor Zsafe = clamp_min(Zs, 1e-6);
    Tensor us = K.fx * (Xs / Zsafe) + K.cx;
    Tensor vs = K.fy * (Ys / Zsafe) + K.cy;
    Tensor coords = concat({us, vs}, 0);
    Tensor pred = bilinear_sample(prev, coords);
    Tensor rigid_flow = coords - grid;
    return {pred, rigid_flow, valid};
}

Tensor compose_residual(const Tensor& static_pred, const Tensor& residual_flow) {
    return warp_by_flow(static_pred, residual_flow);
}

Tensor blend(const Tensor& a, const Tensor& b, const Tensor& mask) {
    check(a.shape() == b.shape(), "blend: branch shapes differ");
    check(mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == a.dim(1) &&
              mask.dim(2) == a.dim(2),
          "blend: mask must be [1,H,W] matching the branches");
    const double* m = mask.data();
    for (int64_t i = 0; i < mask.size(); ++i)
        check(m[i] >= 0.0 && m[i] <= 1.0, "blend: mask out of [0,1]");
    return mask * a + (1.0 - mask) * b;
}

}  // namespace svp
