#pragma once

#include "svp/models_common.hpp"
#include "svp/worlds.hpp"

namespace svp {

// Euler integration of the stochastic residual dynamics:
// substeps times, y <- y + (delta_t / substeps) * f(y, z).
Tensor residual_step(const Tensor& y, const Tensor& z,
                     const std::function<Tensor(const Tensor&, const Tensor&)>& f,
                     double delta_t = 1.0, int substeps = 1);

enum class SrvpVariant { Plain, PlusDirect, PlusMask };

SrvpVariant srvp_variant_from_string(const std::string& s);

// State-space video prediction: a latent state chain driven by per-step
// stochastic residual updates, a content variable from the conditioning
// frames, and per-step independent decoding. The Plus variants add a motion
// decoder over consecutive states that warps the previous frame, combined
// with the pixel decode either through a mask or a direct combiner.
class SrvpModel {
public:
    struct Config {
        int64_t height = 32, width = 32;
        int channels = 1;
        int enc_base = 12;
        int feat = 64;
        int hidden = 64;
        int y_dim = 24, z_dim = 12;
        int content_dim = 32;
        double beta = 1.0;
        double delta_t = 1.0;
        int euler_substeps = 1;
        int k = 5;
        SrvpVariant variant = SrvpVariant::Plain;
    };

    SrvpModel(const Config& cfg, uint64_t seed);
    ParamStore& params() { return ps_; }
    const Config& config() const { return cfg_; }

    LossBreakdown sequence_loss(const std::vector<Tensor>& frames, RngStream& noise);
    RolloutResult rollout(const std::vector<Tensor>& frames, int64_t k,
                          int64_t horizon, RngStream& noise,
                          bool posterior_everywhere = false) const;

    // q(y_1 | s_{1:k}); exposed for the structural contracts.
    DiagGaussian infer_y1(const std::vector<Tensor>& frames) const;
    // content from the conditioning frames only
    Tensor content(const std::vector<Tensor>& frames) const;
    DiagGaussian prior_from_state(const Tensor& y) const;
    Tensor decode_state(const Tensor& y, const Tensor& w,
                        const std::vector<Tensor>& skips) const;
    std::vector<Tensor> skips_of(const Tensor& frame) const {
        return enc_(frame).skips;
    }
    Tensor apply_residual(const Tensor& y, const Tensor& z) const;

private:
    Config cfg_;
    ParamStore ps_;
    VecEncoder enc_;
    Mlp y1_net_, prior_net_, f_net_, content_net_;
    GaussHeadVec y1_head_, prior_head_, post_head_;
    LstmCell post_cell_;
    VecDecoder dec_;
    VecDecoder motion_dec_;   // Plus variants
    ConvBlock combiner_;      // mask or direct head
};

enum class StretchBevVariant { Base, WithLabelPosterior, GlobalLatent };

StretchBevVariant stretchbev_variant_from_string(const std::string& s);

// Per-step stochastic residual dynamics on a spatial latent grid over BEV
// states, with a supervised four-head label decoder. The WithLabelPosterior
// variant feeds encoded labels to the per-step posterior; GlobalLatent is the
// single-shared-latent ablation used for diversity comparisons.
class StretchBevModel {
public:
    struct Config {
        int64_t grid = 48;
        int state_ch = 8;
        int enc_base = 16;   // two stride-2 stages: base, 2*base
        int label_base = 8;
        int y_ch = 32, z_ch = 8;
        int gru_ch = 32;
        int hidden_ch = 32;
        double beta = 1.0;
        double delta_t = 1.0;
        int euler_substeps = 1;
        int k = 3;
        StretchBevVariant variant = StretchBevVariant::Base;
        double w_seg = 1.0, w_center = 1.0, w_offset = 0.5, w_flow = 0.5;
        // foreground class weight in the segmentation cross-entropy;
        // foreground covers a few percent of the grid
        double seg_fg_weight = 5.0;
    };

    StretchBevModel(const Config& cfg, uint64_t seed);
    ParamStore& params() { return ps_; }
    const Config& config() const { return cfg_; }

    // Negative ELBO with supervised label terms; pretrain mode drops the
    // label loss entirely (reported as exactly zero).
    LossBreakdown sequence_loss(const LabeledSequence& seq, bool pretrain,
                                RngStream& noise);

    RolloutResult rollout(const LabeledSequence& seq, int64_t k, int64_t horizon,
                          RngStream& noise, bool posterior_everywhere = false) const;

    struct LabelHeads {
        Tensor seg_logits;   // [2,H,W]
        Tensor center;       // [1,H,W], sigmoid
        Tensor offsets;      // [2,H,W]
        Tensor flow;         // [2,H,W]
    };
    LabelHeads decode_labels(const Tensor& state) const;
    Tensor decode_state(const Tensor& y) const;
    DiagGaussian prior_from_state(const Tensor& y) const;
    DiagGaussian infer_y1(const std::vector<Tensor>& states) const;
    Tensor apply_residual(const Tensor& y, const Tensor& z) const;

    // Posterior distribution stream; the Base variant ignores the label
    // argument entirely.
    struct PosteriorState {
        Tensor h;
    };
    PosteriorState initial_posterior() const;
    DiagGaussian posterior_step(PosteriorState& st, const Tensor& state,
                                const Tensor& labels6) const;

    // Generative-bound estimators with all Gaussian constants included, for
    // comparing against importance-weighted likelihood estimates. Labels are
    // not part of these bounds (pre-training form).
    double elbo_mc(const std::vector<Tensor>& states, int64_t k, int n_samples,
                   RngStream& rng) const;
    double iwae(const std::vector<Tensor>& states, int64_t k, int n_samples,
                RngStream& rng) const;

    int64_t grid_h() const { return enc_.h_out; }
    int64_t grid_w() const { return enc_.w_out; }

private:
    Config cfg_;
    ParamStore ps_;
    GridEncoder enc_, label_enc_;
    ConvBlock y1_block_, prior_block_, f_block_;
    GaussHeadConv y1_head_, prior_head_, post_head_;
    ConvGruCell post_gru_;
    GridDecoder dec_;
    ConvBlock label_trunk_;
    Conv seg_head_, center_head_, offset_head_, flow_head_;
    // GlobalLatent nets
    ConvGruCell glob_post_gru_, glob_prior_gru_;
    GaussHeadConv glob_post_head_, glob_prior_head_;

    double log_weight(const std::vector<Tensor>& states, int64_t k,
                      RngStream& rng) const;
    Tensor encode_labels6(const LabeledSequence& seq, int64_t t) const;
};

// Pack (seg, centers, offsets, future_flow) into the 6-channel label image
// the posterior encoder consumes.
Tensor pack_labels6(const Tensor& seg, const Tensor& centers, const Tensor& offsets,
                    const Tensor& future_flow);

struct InstancePostprocessOptions {
    double peak_threshold = 0.1;  // fraction of the frame's max heat
    int64_t min_separation = 2;   // cells between peaks
    double match_radius = 3.0;    // id propagation radius
};

// Center peaks -> offset grouping -> flow-based id propagation with greedy
// nearest matching. Returns one instance-id map [1,H,W] per frame; an empty
// scene yields an all-zero map.
std::vector<Tensor> instance_postprocess(const std::vector<Tensor>& centers,
                                         const std::vector<Tensor>& seg_fg,
                                         const std::vector<Tensor>& offsets,
                                         const std::vector<Tensor>& future_flow,
                                         const InstancePostprocessOptions& opt = {});

}  // namespace svp
