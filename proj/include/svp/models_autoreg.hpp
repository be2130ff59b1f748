#pragma once

#include "svp/models_common.hpp"

namespace svp {

// Learned-prior stochastic video prediction baseline: one latent chain over
// frame features, linear recurrent cells, pixel decoder.
class SvgModel {
public:
    struct Config {
        int64_t height = 32, width = 32;
        int channels = 1;
        int enc_base = 12;
        int feat = 64;
        int hidden = 96;
        int z_dim = 16;
        double beta = 1e-4;
        int k = 5;  // conditioning frames
    };

    SvgModel(const Config& cfg, uint64_t seed);
    ParamStore& params() { return ps_; }
    const Config& config() const { return cfg_; }

    // Teacher-forced loss over frames[1..T-1]; posterior-sampled latents.
    LossBreakdown sequence_loss(const std::vector<Tensor>& frames, RngStream& noise);

    // Autoregressive sampling: posterior for the k conditioning steps, prior
    // afterwards (posterior_everywhere keeps the posterior throughout, which
    // requires frames to cover k + horizon steps).
    RolloutResult rollout(const std::vector<Tensor>& frames, int64_t k,
                          int64_t horizon, RngStream& noise,
                          bool posterior_everywhere = false) const;

    const StepTrace& last_trace() const { return trace_; }

private:
    Config cfg_;
    ParamStore ps_;
    VecEncoder enc_;
    VecDecoder dec_;
    LstmCell post_cell_, prior_cell_, pred_cell_;
    GaussHeadVec post_head_, prior_head_;
    mutable StepTrace trace_;
};

// SLAMP: appearance chain plus motion chain with motion history; the motion
// branch decodes optical flow, warps the previous frame, and a mask blends
// the two branch predictions.
class SlampModel {
public:
    struct Config {
        int64_t height = 32, width = 32;
        int channels = 1;
        int enc_base = 12;
        int feat = 64;
        int hidden = 96;
        int zp_dim = 16, zf_dim = 16;
        double beta = 1e-4;
        int k = 5;
    };

    SlampModel(const Config& cfg, uint64_t seed);
    ParamStore& params() { return ps_; }
    const Config& config() const { return cfg_; }

    LossBreakdown sequence_loss(const std::vector<Tensor>& frames, RngStream& noise);
    RolloutResult rollout(const std::vector<Tensor>& frames, int64_t k,
                          int64_t horizon, RngStream& noise,
                          bool posterior_everywhere = false) const;

    // One prediction step given decoded latent samples; exposed for the
    // saturation and gradient-reach contracts.
    struct StepOut {
        Tensor appearance, flow, warped, mask, combined;
    };

    const StepTrace& last_trace() const { return trace_; }

private:
    Config cfg_;
    ParamStore ps_;
    VecEncoder enc_;      // single frames
    VecEncoder menc_;     // consecutive frame pairs
    VecDecoder pix_dec_, flow_dec_;
    ConvBlock mask_dec_;
    LstmCell p_post_cell_, p_prior_cell_, p_pred_cell_;
    LstmCell f_post_cell_, f_prior_cell_, f_pred_cell_;
    GaussHeadVec p_post_head_, p_prior_head_, f_post_head_, f_prior_head_;
    mutable StepTrace trace_;

    StepOut decode_step(const Tensor& gp, const Tensor& gf, const Tensor& prev_frame,
                        const std::vector<Tensor>& skips) const;
};

enum class Slamp3dVariant { DepthOnly, Combined, Conditional };

Slamp3dVariant slamp3d_variant_from_string(const std::string& s);
std::string to_string(Slamp3dVariant v);

// Structure-and-motion decomposition: the static branch decodes depth and a
// 6-DoF pose and reconstructs the frame by rigid warping; the dynamic branch
// decodes residual flow on top of the static prediction; a mask blends them.
// The Conditional variant feeds the static latent into the dynamic posterior.
class Slamp3dModel {
public:
    struct Config {
        int64_t height = 48, width = 32;
        int channels = 1;
        int enc_base = 10;
        int cell_ch = 28;   // convolutional recurrent state channels
        int head_ch = 20;   // depth/pose/motion encoding channels
        int zs_ch = 8, zd_ch = 8;
        double beta = 1e-4;
        double d_min = 1.0, d_max = 50.0;
        double pose_scale = 0.01;
        int k = 10;
        Slamp3dVariant variant = Slamp3dVariant::Conditional;
    };

    Slamp3dModel(const Config& cfg, uint64_t seed, const CameraIntrinsics& K);
    ParamStore& params() { return ps_; }
    const Config& config() const { return cfg_; }

    LossBreakdown sequence_loss(const std::vector<Tensor>& frames, RngStream& noise);
    RolloutResult rollout(const std::vector<Tensor>& frames, int64_t k,
                          int64_t horizon, RngStream& noise,
                          bool posterior_everywhere = false) const;

    const StepTrace& last_trace() const { return trace_; }

private:
    Config cfg_;
    CameraIntrinsics K_;
    ParamStore ps_;
    GridEncoder img_enc_;
    ConvBlock depth_head_, pose_head_, motion_head_;
    ConvLstmCell s_post_, s_prior_, s_pred_;
    ConvLstmCell d_post_, d_prior_, d_pred_;
    GaussHeadConv s_post_g_, s_prior_g_, d_post_g_, d_prior_g_;
    GridDecoder depth_dec_, flow_dec_;
    Linear pose_lin_;
    ConvBlock mask_dec_;
    mutable StepTrace trace_;

    bool has_dynamic() const { return cfg_.variant != Slamp3dVariant::DepthOnly; }
};

}  // namespace svp
