#pragma once

#include <map>
#include <string>
#include <vector>

#include "svp/distributions.hpp"
#include "svp/nn.hpp"
#include "svp/params.hpp"
#include "svp/warp.hpp"

namespace svp {

// Training losses return the scalar graph plus the per-term values; the term
// values always sum to the total.
struct LossBreakdown {
    Tensor total;
    std::map<std::string, double> terms;
};

// Everything a stochastic rollout can produce; models fill the vectors that
// apply to them.
struct RolloutResult {
    std::vector<Tensor> predictions;       // final frames or states
    std::vector<Tensor> appearance;        // pixel/static branch
    std::vector<Tensor> motion;            // flow/dynamic branch
    std::vector<Tensor> flows;             // decoded flow fields
    std::vector<Tensor> masks;             // blend masks
    std::vector<Tensor> depths;            // decoded depth maps
    std::vector<Tensor> poses;             // decoded pose vectors
    std::vector<Tensor> latents_pixel;     // z samples, first chain
    std::vector<Tensor> latents_motion;    // z samples, second chain
    std::vector<Tensor> seg_logits;        // BEV label heads
    std::vector<Tensor> center_heat;
    std::vector<Tensor> offset_field;
    std::vector<Tensor> flow_field;
    std::vector<Tensor> instance_maps;     // post-processed ids
};

// Trace of the last pass, for behavioural assertions in tests: which steps
// sampled the posterior, which consumed ground truth, and the motion input
// the prior received at the first step (the zero-motion boundary rule).
struct StepTrace {
    std::vector<bool> used_posterior;
    std::vector<bool> teacher_forced;
    Tensor first_prior_motion_input;
    Tensor zero_motion_reference;
};

// Stage widths: base * (1, 2, 3, 4), one stride-2 conv per stage.
std::vector<int> stage_widths(int base, int stages);

// Frame encoder for the linear-cell models: strided conv stages, then a
// linear head to a tanh feature vector. Keeps the per-stage maps as skips.
struct VecEncoder {
    std::vector<Conv> stages;
    Linear head;
    int64_t h_out = 0, w_out = 0;
    int ch_out = 0, feat = 0;

    VecEncoder() = default;
    VecEncoder(ParamStore& ps, const std::string& name, int in_ch, int base,
               int stages_n, int feat, int64_t h, int64_t w, RngStream& rng);

    struct Out {
        Tensor vec;                 // [1, feat]
        std::vector<Tensor> skips;  // per-stage maps, coarse last
    };
    Out operator()(const Tensor& frame) const;
};

// Mirror of VecEncoder: linear head to the coarse grid, then upsample+conv
// stages with skip concatenation, then a raw (pre-activation) output conv.
struct VecDecoder {
    Linear head;
    std::vector<Conv> stages;
    Conv out;
    int64_t h_in = 0, w_in = 0;
    int ch_in = 0;

    VecDecoder() = default;
    VecDecoder(ParamStore& ps, const std::string& name, int vec_dim, int base,
               int stages_n, int out_ch, int64_t h, int64_t w, RngStream& rng);

    Tensor operator()(const Tensor& vec, const std::vector<Tensor>& skips) const;
};

// Spatial encoder for the convolutional models.
struct GridEncoder {
    std::vector<Conv> stages;
    int64_t h_out = 0, w_out = 0;
    int ch_out = 0;

    GridEncoder() = default;
    GridEncoder(ParamStore& ps, const std::string& name, int in_ch, int base,
                int stages_n, int64_t h, int64_t w, RngStream& rng);

    struct Out {
        Tensor map;
        std::vector<Tensor> skips;
    };
    Out operator()(const Tensor& frame) const;
};

struct GridDecoder {
    std::vector<Conv> stages;
    Conv out;

    GridDecoder() = default;
    // in_ch: channels of the coarse input map; skip_chs: channels of the skip
    // map consumed at each upsampling stage (coarse to fine), 0 for none.
    GridDecoder(ParamStore& ps, const std::string& name, int in_ch,
                const std::vector<int>& widths, const std::vector<int>& skip_chs,
                int out_ch, RngStream& rng);

    Tensor operator()(const Tensor& map, const std::vector<Tensor>& skips) const;
};

// Gaussian parameter heads; log-variance clamped to +-10.
struct GaussHeadVec {
    Linear lin;
    int dim = 0;
    GaussHeadVec() = default;
    GaussHeadVec(ParamStore& ps, const std::string& name, int in, int dim,
                 RngStream& rng);
    DiagGaussian operator()(const Tensor& feat) const;
};

struct GaussHeadConv {
    Conv conv;
    int ch = 0;
    GaussHeadConv() = default;
    GaussHeadConv(ParamStore& ps, const std::string& name, int in_ch, int ch,
                  RngStream& rng);
    DiagGaussian operator()(const Tensor& map) const;
};

// Two-layer MLP with leaky-relu.
struct Mlp {
    Linear a, b;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out,
        RngStream& rng);
    Tensor operator()(const Tensor& x) const;
};

// Two 3x3 conv layers with leaky-relu in between.
struct ConvBlock {
    Conv a, b;
    ConvBlock() = default;
    ConvBlock(ParamStore& ps, const std::string& name, int in_ch, int hidden,
              int out_ch, RngStream& rng);
    Tensor operator()(const Tensor& x) const;
};

// [C,H,W] -> [1,C] spatial mean
Tensor global_avg_pool(const Tensor& x);

// flow head activation: tanh scaled to half the larger image extent
Tensor flow_activation(const Tensor& raw, int64_t h, int64_t w);
// depth head activation: sigmoid into [d_min, d_max]
Tensor depth_activation(const Tensor& raw, double d_min, double d_max);

Tensor l2_loss(const Tensor& pred, const Tensor& target);  // sum of squares

double breakdown_total(const std::map<std::string, double>& terms);

}  // namespace svp
