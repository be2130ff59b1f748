#pragma once

#include <array>

#include "svp/tensor.hpp"

namespace svp {

// Plain (non-differentiated) rigid transform used by the synthetic worlds.
// rotation is axis-angle; to_matrix uses Rodrigues' formula.
struct PoseSE3 {
    std::array<double, 3> rotation{0, 0, 0};     // axis-angle
    std::array<double, 3> translation{0, 0, 0};

    std::array<double, 16> to_matrix() const;  // row-major 4x4
    static PoseSE3 from_matrix(const std::array<double, 16>& m);
    PoseSE3 compose(const PoseSE3& rhs) const;  // this applied after rhs
    Tensor to_tensor() const;                   // [6]: rotation then translation
    static PoseSE3 from_tensor(const Tensor& t);
};

std::array<double, 9> rodrigues(const std::array<double, 3>& axis_angle);

struct CameraIntrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;
};

// Pixel-center sampling grid: channel 0 holds x (column), channel 1 y (row).
Tensor identity_grid(int64_t h, int64_t w);

// Bilinear interpolation of img[C,H,W] at coords[2,Ho,Wo]; out-of-bounds
// coordinates are clamped to the border. Differentiable in img and coords.
Tensor bilinear_sample(const Tensor& img, const Tensor& coords);

// Backward warp: output(p) = src(p + flow(p)).
Tensor warp_by_flow(const Tensor& src, const Tensor& flow);

// Differentiable Rodrigues map from a [6] pose tensor (axis-angle,
// translation) to a row-major [3,4] transform.
Tensor se3_transform(const Tensor& pose6);

struct DepthPoseWarp {
    Tensor prediction;  // [C,H,W]
    Tensor rigid_flow;  // [2,H,W], the ego-motion flow
    Tensor valid;       // [1,H,W] plain 0/1 mask; 0 where reprojected depth <= 0
};

// Backproject each target pixel with depth, move it by pose (target camera ->
// source camera), reproject, and sample prev there. Differentiable in prev,
// depth and pose.
DepthPoseWarp warp_by_depth_pose(const Tensor& prev, const Tensor& depth,
                                 const Tensor& pose6, const CameraIntrinsics& K);

// Warps the static prediction by the residual flow (never the previous frame).
Tensor compose_residual(const Tensor& static_pred, const Tensor& residual_flow);

// mask .* a + (1 - mask) .* b with mask in [0,1], shape [1,H,W] against [C,H,W].
Tensor blend(const Tensor& a, const Tensor& b, const Tensor& mask);

}  // namespace svp
