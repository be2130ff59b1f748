#include "svp/models_ssm.hpp"

#include <algorithm>
#include <cmath>

#include "svp/gradcheck.hpp"
#include "svp/models_autoreg.hpp"

namespace svp {

namespace {

Tensor draw_noise(const Shape& shape, RngStream& rng) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    return t;
}

Tensor sample(const DiagGaussian& g, RngStream& rng) {
    return reparam_sample(g, draw_noise(g.mean.shape(), rng));
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_prob_value(const DiagGaussian& g, const Tensor& x) {
    double acc = 0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double d = x.data()[i] - g.mean.data()[i];
        double lv = g.log_var.data()[i];
        acc += -0.5 * (d * d * std::exp(-lv) + lv + kLog2Pi);
    }
    return acc;
}

}  // namespace

Tensor residual_step(const Tensor& y, const Tensor& z,
                     const std::function<Tensor(const Tensor&, const Tensor&)>& f,
                     double delta_t, int substeps) {
    check(substeps >= 1, "residual_step: substeps >= 1 required");
    Tensor cur = y;
    double h = delta_t / substeps;
    for (int i = 0; i < substeps; ++i) cur = cur + h * f(cur, z);
    return cur;
}

// ---------------------------------------------------------------------------
// SRVP
// ---------------------------------------------------------------------------

SrvpVariant srvp_variant_from_string(const std::string& s) {
    if (s == "plain") return SrvpVariant::Plain;
    if (s == "direct") return SrvpVariant::PlusDirect;
    if (s == "mask") return SrvpVariant::PlusMask;
    throw ConfigError("unknown srvp variant: " + s);
}

SrvpModel::SrvpModel(const Config& cfg, uint64_t seed) : cfg_(cfg) {
    RngStream rng(seed, "init.srvp");
    enc_ = VecEncoder(ps_, "enc", cfg.channels, cfg.enc_base, 4, cfg.feat, cfg.height,
                      cfg.width, rng);
    y1_net_ = Mlp(ps_, "y1_net", cfg.k * cfg.feat, cfg.hidden, cfg.hidden, rng);
    y1_head_ = GaussHeadVec(ps_, "y1_head", cfg.hidden, cfg.y_dim, rng);
    post_cell_ = LstmCell(ps_, "posterior.cell", cfg.feat, cfg.hidden, rng);
    post_head_ = GaussHeadVec(ps_, "posterior.head", cfg.hidden, cfg.z_dim, rng);
    prior_net_ = Mlp(ps_, "prior.net", cfg.y_dim, cfg.hidden, cfg.hidden, rng);
    prior_head_ = GaussHeadVec(ps_, "prior.head", cfg.hidden, cfg.z_dim, rng);
    f_net_ = Mlp(ps_, "residual", cfg.y_dim + cfg.z_dim, cfg.hidden, cfg.y_dim, rng);
    content_net_ = Mlp(ps_, "content", cfg.feat, cfg.hidden, cfg.content_dim, rng);
    dec_ = VecDecoder(ps_, "dec", cfg.y_dim + cfg.content_dim, cfg.enc_base, 4,
                      cfg.channels, cfg.height, cfg.width, rng);
    if (cfg.variant != SrvpVariant::Plain) {
        motion_dec_ = VecDecoder(ps_, "motion_dec", 2 * cfg.y_dim + cfg.content_dim,
                                 cfg.enc_base, 4, 2, cfg.height, cfg.width, rng);
        int comb_out = cfg.variant == SrvpVariant::PlusMask ? 1 : cfg.channels;
        combiner_ = ConvBlock(ps_, "combiner", 2 * cfg.channels, 16, comb_out, rng);
    }
}

DiagGaussian SrvpModel::infer_y1(const std::vector<Tensor>& frames) const {
    check(static_cast<int64_t>(frames.size()) >= cfg_.k,
          "infer_y1: fewer than k frames");
    std::vector<Tensor> vecs;
    for (int64_t t = 0; t < cfg_.k; ++t) vecs.push_back(enc_(frames[t]).vec);
    return y1_head_(y1_net_(concat(vecs, 1)));
}

Tensor SrvpModel::content(const std::vector<Tensor>& frames) const {
    check(static_cast<int64_t>(frames.size()) >= cfg_.k, "content: fewer than k frames");
    Tensor acc = enc_(frames[0]).vec;
    for (int64_t t = 1; t < cfg_.k; ++t) acc = acc + enc_(frames[t]).vec;
    return content_net_(acc * (1.0 / cfg_.k));
}

DiagGaussian SrvpModel::prior_from_state(const Tensor& y) const {
    return prior_head_(prior_net_(y));
}

Tensor SrvpModel::apply_residual(const Tensor& y, const Tensor& z) const {
    auto f = [this](const Tensor& yy, const Tensor& zz) {
        return f_net_(concat({yy, zz}, 1));
    };
    return residual_step(y, z, f, cfg_.delta_t, cfg_.euler_substeps);
}

Tensor SrvpModel::decode_state(const Tensor& y, const Tensor& w,
                               const std::vector<Tensor>& skips) const {
    return sigmoid(dec_(concat({y, w}, 1), skips));
}

LossBreakdown SrvpModel::sequence_loss(const std::vector<Tensor>& frames,
                                       RngStream& noise) {
    int64_t T = static_cast<int64_t>(frames.size());
    check(T >= cfg_.k + 1, "srvp: sequence must extend past the conditioning frames");

    std::vector<VecEncoder::Out> eo;
    for (const auto& f : frames) eo.push_back(enc_(f));
    Tensor vec_mean = eo[0].vec;
    for (int64_t t = 1; t < cfg_.k; ++t) vec_mean = vec_mean + eo[t].vec;
    Tensor w = content_net_(vec_mean * (1.0 / cfg_.k));

    std::vector<Tensor> y1_vecs;
    for (int64_t t = 0; t < cfg_.k; ++t) y1_vecs.push_back(eo[t].vec);
    DiagGaussian qy1 = y1_head_(y1_net_(concat(y1_vecs, 1)));
    Tensor y = sample(qy1, noise);

    Tensor hq = post_cell_.zero_state(), cq = post_cell_.zero_state();
    const auto& skips = eo[cfg_.k - 1].skips;

    Tensor recon = Tensor::scalar(0.0);
    Tensor recon_final = Tensor::scalar(0.0), recon_warp = Tensor::scalar(0.0);
    Tensor kl_z = Tensor::scalar(0.0);

    Tensor y_prev = y;
    Tensor x_hat = decode_state(y, w, skips);
    recon = recon + 0.5 * l2_loss(x_hat, frames[0]);

    for (int64_t t = 1; t < T; ++t) {
        std::tie(hq, cq) = post_cell_(eo[t].vec, hq, cq);
        DiagGaussian qz = post_head_(hq);
        DiagGaussian pz = prior_from_state(y_prev);
        Tensor z = sample(qz, noise);
        Tensor y_t = apply_residual(y_prev, z);
        kl_z = kl_z + kl_diag(qz, pz);

        Tensor x_pix = decode_state(y_t, w, skips);
        recon = recon + 0.5 * l2_loss(x_pix, frames[t]);

        if (cfg_.variant != SrvpVariant::Plain) {
            Tensor raw = motion_dec_(concat({y_prev, y_t, w}, 1), skips);
            Tensor flow = flow_activation(raw, cfg_.height, cfg_.width);
            Tensor warped = warp_by_flow(frames[t - 1], flow);
            Tensor final;
            if (cfg_.variant == SrvpVariant::PlusMask) {
                Tensor m = sigmoid(combiner_(concat({x_pix, warped}, 0)));
                final = blend(x_pix, warped, m);
            } else {
                final = sigmoid(combiner_(concat({x_pix, warped}, 0)));
            }
            recon_warp = recon_warp + 0.5 * l2_loss(warped, frames[t]);
            recon_final = recon_final + 0.5 * l2_loss(final, frames[t]);
        }
        y_prev = y_t;
    }

    LossBreakdown out;
    Tensor kl_y1_term = cfg_.beta * kl_standard(qy1);
    Tensor kl_z_term = cfg_.beta * kl_z;
    out.total = recon + kl_y1_term + kl_z_term;
    out.terms["recon_pixel"] = recon.item();
    out.terms["kl_y1"] = kl_y1_term.item();
    out.terms["kl_z"] = kl_z_term.item();
    if (cfg_.variant != SrvpVariant::Plain) {
        out.total = out.total + recon_warp + recon_final;
        out.terms["recon_motion"] = recon_warp.item();
        out.terms["recon_final"] = recon_final.item();
    }
    return out;
}

RolloutResult SrvpModel::rollout(const std::vector<Tensor>& frames, int64_t k,
                                 int64_t horizon, RngStream& noise,
                                 bool posterior_everywhere) const {
    check(horizon >= 1, "rollout: horizon must be positive");
    check(k == cfg_.k, "srvp rollout: k must match the trained conditioning length");
    check(static_cast<int64_t>(frames.size()) >=
              (posterior_everywhere ? k + horizon : k),
          "rollout: not enough frames");
    autodiff::NoGrad ng;
    RolloutResult out;

    std::vector<VecEncoder::Out> eo;
    for (int64_t t = 0; t < k; ++t) eo.push_back(enc_(frames[t]));
    Tensor vec_mean = eo[0].vec;
    for (int64_t t = 1; t < k; ++t) vec_mean = vec_mean + eo[t].vec;
    Tensor w = content_net_(vec_mean * (1.0 / k));
    const auto skips = eo[k - 1].skips;

    std::vector<Tensor> y1_vecs;
    for (int64_t t = 0; t < k; ++t) y1_vecs.push_back(eo[t].vec);
    Tensor y = sample(y1_head_(y1_net_(concat(y1_vecs, 1))), noise);

    Tensor hq = post_cell_.zero_state(), cq = post_cell_.zero_state();
    std::vector<Tensor> ys;  // states for the predicted steps
    Tensor y_prev = y;
    Tensor y_last_cond = y;  // state at the last conditioning index
    for (int64_t t = 1; t < k + horizon; ++t) {
        Tensor z;
        if (t < k || posterior_everywhere) {
            std::tie(hq, cq) = post_cell_(enc_(frames[t]).vec, hq, cq);
            z = sample(post_head_(hq), noise);
        } else {
            z = sample(prior_from_state(y_prev), noise);
        }
        Tensor y_t = apply_residual(y_prev, z);
        if (t >= k) {
            ys.push_back(y_t);
            out.latents_pixel.push_back(z);
        }
        if (t == k - 1) y_last_cond = y_t;
        y_prev = y_t;
    }

    // states decode independently of each other; only the Plus variants
    // touch a previous frame for the warping branch
    Tensor prev_frame = frames[k - 1];
    for (size_t i = 0; i < ys.size(); ++i) {
        Tensor x_pix = decode_state(ys[i], w, skips);
        if (cfg_.variant == SrvpVariant::Plain) {
            out.predictions.push_back(x_pix);
        } else {
            const Tensor& y_a = i == 0 ? y_last_cond : ys[i - 1];
            Tensor raw = motion_dec_(concat({y_a, ys[i], w}, 1), skips);
            Tensor flow = flow_activation(raw, cfg_.height, cfg_.width);
            Tensor warped = warp_by_flow(prev_frame, flow);
            Tensor final;
            if (cfg_.variant == SrvpVariant::PlusMask) {
                Tensor m = sigmoid(combiner_(concat({x_pix, warped}, 0)));
                final = blend(x_pix, warped, m);
                out.masks.push_back(m);
            } else {
                final = sigmoid(combiner_(concat({x_pix, warped}, 0)));
            }
            out.appearance.push_back(x_pix);
            out.motion.push_back(warped);
            out.flows.push_back(flow);
            out.predictions.push_back(final);
            prev_frame = final;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// StretchBEV
// ---------------------------------------------------------------------------

StretchBevVariant stretchbev_variant_from_string(const std::string& s) {
    if (s == "base") return StretchBevVariant::Base;
    if (s == "p") return StretchBevVariant::WithLabelPosterior;
    if (s == "global") return StretchBevVariant::GlobalLatent;
    throw ConfigError("unknown stretchbev variant: " + s);
}

Tensor pack_labels6(const Tensor& seg, const Tensor& centers, const Tensor& offsets,
                    const Tensor& future_flow) {
    return concat({seg, centers, offsets, future_flow}, 0);
}

StretchBevModel::StretchBevModel(const Config& cfg, uint64_t seed) : cfg_(cfg) {
    RngStream rng(seed, "init.stretchbev");
    enc_ = GridEncoder(ps_, "enc", cfg.state_ch, cfg.enc_base, 2, cfg.grid, cfg.grid, rng);
    int ce = enc_.ch_out;
    int cl = 0;
    if (cfg.variant == StretchBevVariant::WithLabelPosterior) {
        label_enc_ = GridEncoder(ps_, "label_enc", 6, cfg.label_base, 2, cfg.grid,
                                 cfg.grid, rng);
        cl = label_enc_.ch_out;
    }
    y1_block_ = ConvBlock(ps_, "y1.block", cfg.k * ce, cfg.hidden_ch, cfg.hidden_ch, rng);
    y1_head_ = GaussHeadConv(ps_, "y1.head", cfg.hidden_ch, cfg.y_ch, rng);
    prior_block_ = ConvBlock(ps_, "prior.block", cfg.y_ch, cfg.hidden_ch, cfg.hidden_ch, rng);
    prior_head_ = GaussHeadConv(ps_, "prior.head", cfg.hidden_ch, cfg.z_ch, rng);
    f_block_ = ConvBlock(ps_, "residual", cfg.y_ch + cfg.z_ch, cfg.hidden_ch, cfg.y_ch, rng);
    dec_ = GridDecoder(ps_, "dec", cfg.y_ch, {cfg.hidden_ch, cfg.hidden_ch}, {0, 0},
                       cfg.state_ch, rng);
    label_trunk_ = ConvBlock(ps_, "labels.trunk", cfg.state_ch, cfg.hidden_ch,
                             cfg.hidden_ch, rng);
    seg_head_ = Conv(ps_, "labels.seg", cfg.hidden_ch, 2, 3, 1, 1, rng);
    center_head_ = Conv(ps_, "labels.center", cfg.hidden_ch, 1, 3, 1, 1, rng);
    offset_head_ = Conv(ps_, "labels.offset", cfg.hidden_ch, 2, 3, 1, 1, rng);
    flow_head_ = Conv(ps_, "labels.flow", cfg.hidden_ch, 2, 3, 1, 1, rng);

    if (cfg.variant == StretchBevVariant::GlobalLatent) {
        glob_post_gru_ = ConvGruCell(ps_, "global.posterior.gru", ce, cfg.gru_ch, 3, rng);
        glob_post_head_ = GaussHeadConv(ps_, "global.posterior.head", cfg.gru_ch,
                                        cfg.z_ch, rng);
        glob_prior_gru_ = ConvGruCell(ps_, "global.prior.gru", ce, cfg.gru_ch, 3, rng);
        glob_prior_head_ = GaussHeadConv(ps_, "global.prior.head", cfg.gru_ch,
                                         cfg.z_ch, rng);
    } else {
        post_gru_ = ConvGruCell(ps_, "posterior.gru", ce + cl, cfg.gru_ch, 3, rng);
        post_head_ = GaussHeadConv(ps_, "posterior.head", cfg.gru_ch, cfg.z_ch, rng);
    }
}

StretchBevModel::LabelHeads StretchBevModel::decode_labels(const Tensor& state) const {
    Tensor f = leaky_relu(label_trunk_(state), 0.2);
    LabelHeads h;
    h.seg_logits = seg_head_(f);
    h.center = sigmoid(center_head_(f));
    h.offsets = offset_head_(f);
    h.flow = flow_head_(f);
    return h;
}

Tensor StretchBevModel::decode_state(const Tensor& y) const {
    return sigmoid(dec_(y, {Tensor(), Tensor()}));
}

DiagGaussian StretchBevModel::prior_from_state(const Tensor& y) const {
    return prior_head_(leaky_relu(prior_block_(y), 0.2));
}

DiagGaussian StretchBevModel::infer_y1(const std::vector<Tensor>& states) const {
    check(static_cast<int64_t>(states.size()) >= cfg_.k, "infer_y1: fewer than k states");
    std::vector<Tensor> enc;
    for (int64_t t = 0; t < cfg_.k; ++t) enc.push_back(enc_(states[t]).map);
    return y1_head_(leaky_relu(y1_block_(concat(enc, 0)), 0.2));
}

Tensor StretchBevModel::apply_residual(const Tensor& y, const Tensor& z) const {
    auto f = [this](const Tensor& yy, const Tensor& zz) {
        return f_block_(concat({yy, zz}, 0));
    };
    return residual_step(y, z, f, cfg_.delta_t, cfg_.euler_substeps);
}

StretchBevModel::PosteriorState StretchBevModel::initial_posterior() const {
    return {post_gru_.zero_state(grid_h(), grid_w())};
}

DiagGaussian StretchBevModel::posterior_step(PosteriorState& st, const Tensor& state,
                                             const Tensor& labels6) const {
    check(cfg_.variant != StretchBevVariant::GlobalLatent,
          "posterior_step: per-step posterior not present in the global variant");
    Tensor in = enc_(state).map;
    if (cfg_.variant == StretchBevVariant::WithLabelPosterior) {
        check(labels6.defined(), "posterior_step: label stream required for variant P");
        in = concat({in, label_enc_(labels6).map}, 0);
    }
    st.h = post_gru_(in, st.h);
    return post_head_(st.h);
}

Tensor StretchBevModel::encode_labels6(const LabeledSequence& seq, int64_t t) const {
    return pack_labels6(seq.seg[t], seq.centers[t], seq.offsets[t],
                        seq.future_flow[t]);
}

LossBreakdown StretchBevModel::sequence_loss(const LabeledSequence& seq, bool pretrain,
                                             RngStream& noise) {
    int64_t T = seq.length();
    check(T >= cfg_.k + 1, "stretchbev: sequence must extend past conditioning");
    const auto& states = seq.frames;

    DiagGaussian qy1 = infer_y1(states);
    Tensor y = sample(qy1, noise);

    Tensor kl_z = Tensor::scalar(0.0);
    std::vector<Tensor> ys = {y};

    if (cfg_.variant == StretchBevVariant::GlobalLatent) {
        Tensor hq = glob_post_gru_.zero_state(grid_h(), grid_w());
        Tensor hp = glob_prior_gru_.zero_state(grid_h(), grid_w());
        for (int64_t t = 0; t < T; ++t) hq = glob_post_gru_(enc_(states[t]).map, hq);
        for (int64_t t = 0; t < cfg_.k; ++t) hp = glob_prior_gru_(enc_(states[t]).map, hp);
        DiagGaussian qg = glob_post_head_(hq);
        DiagGaussian pg = glob_prior_head_(hp);
        Tensor z = sample(qg, noise);
        kl_z = kl_z + kl_diag(qg, pg);
        for (int64_t t = 1; t < T; ++t) {
            y = apply_residual(y, z);
            ys.push_back(y);
        }
    } else {
        PosteriorState st = initial_posterior();
        bool with_labels = cfg_.variant == StretchBevVariant::WithLabelPosterior;
        // warm the recurrent posterior on the first state
        posterior_step(st, states[0], with_labels ? encode_labels6(seq, 0) : Tensor());
        for (int64_t t = 1; t < T; ++t) {
            DiagGaussian qz = posterior_step(
                st, states[t], with_labels ? encode_labels6(seq, t) : Tensor());
            DiagGaussian pz = prior_from_state(y);
            Tensor z = sample(qz, noise);
            kl_z = kl_z + kl_diag(qz, pz);
            y = apply_residual(y, z);
            ys.push_back(y);
        }
    }

    Tensor state_nll = Tensor::scalar(0.0);
    Tensor seg_loss = Tensor::scalar(0.0), center_loss = Tensor::scalar(0.0);
    Tensor offset_loss = Tensor::scalar(0.0), flow_loss = Tensor::scalar(0.0);
    for (int64_t t = 0; t < T; ++t) {
        Tensor s_hat = decode_state(ys[t]);
        state_nll = state_nll + 0.5 * l2_loss(s_hat, states[t]);
        if (!pretrain) {
            LabelHeads h = decode_labels(s_hat);
            const Tensor& gt_seg = seq.seg[t];
            // two-class cross entropy through the logit difference, with the
            // foreground class upweighted against the empty grid
            double w = cfg_.seg_fg_weight;
            Tensor d = slice(h.seg_logits, 0, 1, 1) - slice(h.seg_logits, 0, 0, 1);
            seg_loss = seg_loss +
                       cfg_.w_seg * sum(softplus(d) * (1.0 + (w - 1.0) * gt_seg) -
                                        w * gt_seg * d);
            center_loss =
                center_loss + cfg_.w_center * l2_loss(h.center, seq.centers[t]);
            offset_loss = offset_loss +
                          cfg_.w_offset * sum(abs(h.offsets - seq.offsets[t]) * gt_seg);
            flow_loss = flow_loss +
                        cfg_.w_flow * sum(abs(h.flow - seq.future_flow[t]) * gt_seg);
        }
    }

    LossBreakdown out;
    Tensor kl_y1_term = cfg_.beta * kl_standard(qy1);
    Tensor kl_z_term = cfg_.beta * kl_z;
    out.total = state_nll + kl_y1_term + kl_z_term;
    out.terms["state_nll"] = state_nll.item();
    out.terms["kl_y1"] = kl_y1_term.item();
    out.terms["kl_z"] = kl_z_term.item();
    if (!pretrain) {
        out.total = out.total + seg_loss + center_loss + offset_loss + flow_loss;
    }
    out.terms["label_seg"] = pretrain ? 0.0 : seg_loss.item();
    out.terms["label_center"] = pretrain ? 0.0 : center_loss.item();
    out.terms["label_offset"] = pretrain ? 0.0 : offset_loss.item();
    out.terms["label_flow"] = pretrain ? 0.0 : flow_loss.item();
    return out;
}

RolloutResult StretchBevModel::rollout(const LabeledSequence& seq, int64_t k,
                                       int64_t horizon, RngStream& noise,
                                       bool posterior_everywhere) const {
    check(horizon >= 1, "rollout: horizon must be positive");
    check(k == cfg_.k, "stretchbev rollout: k must match the model");
    check(seq.length() >= (posterior_everywhere ? k + horizon : k),
          "rollout: not enough conditioning states");
    autodiff::NoGrad ng;
    RolloutResult out;
    const auto& states = seq.frames;
    bool with_labels = cfg_.variant == StretchBevVariant::WithLabelPosterior;

    std::vector<Tensor> cond(states.begin(), states.begin() + k);
    Tensor y = sample(infer_y1(cond), noise);

    std::vector<Tensor> ys;
    if (cfg_.variant == StretchBevVariant::GlobalLatent) {
        Tensor hp = glob_prior_gru_.zero_state(grid_h(), grid_w());
        for (int64_t t = 0; t < k; ++t) hp = glob_prior_gru_(enc_(states[t]).map, hp);
        Tensor z = sample(glob_prior_head_(hp), noise);
        for (int64_t t = 1; t < k + horizon; ++t) {
            y = apply_residual(y, z);
            if (t >= k) ys.push_back(y);
        }
        out.latents_pixel.push_back(z);
    } else {
        PosteriorState st = initial_posterior();
        posterior_step(st, states[0], with_labels ? encode_labels6(seq, 0) : Tensor());
        for (int64_t t = 1; t < k + horizon; ++t) {
            Tensor z;
            if (t < k || posterior_everywhere) {
                DiagGaussian qz = posterior_step(
                    st, states[t], with_labels ? encode_labels6(seq, t) : Tensor());
                z = sample(qz, noise);
            } else {
                z = sample(prior_from_state(y), noise);
            }
            y = apply_residual(y, z);
            if (t >= k) {
                ys.push_back(y);
                out.latents_pixel.push_back(z);
            }
        }
    }

    std::vector<Tensor> centers, segs, offsets, flows;
    for (const auto& yt : ys) {
        Tensor s_hat = decode_state(yt);
        out.predictions.push_back(s_hat);
        LabelHeads h = decode_labels(s_hat);
        out.seg_logits.push_back(h.seg_logits);
        out.center_heat.push_back(h.center);
        out.offset_field.push_back(h.offsets);
        out.flow_field.push_back(h.flow);
        // foreground where class-1 logit wins
        Tensor d = slice(h.seg_logits, 0, 1, 1) - slice(h.seg_logits, 0, 0, 1);
        Tensor fg(d.shape());
        for (int64_t i = 0; i < d.size(); ++i)
            fg.data()[i] = d.data()[i] > 0 ? 1.0 : 0.0;
        segs.push_back(fg);
        centers.push_back(h.center);
        offsets.push_back(h.offsets);
        flows.push_back(h.flow);
    }
    out.instance_maps = instance_postprocess(centers, segs, offsets, flows);
    return out;
}

double StretchBevModel::log_weight(const std::vector<Tensor>& states, int64_t k,
                                   RngStream& rng) const {
    check(cfg_.variant != StretchBevVariant::GlobalLatent,
          "log_weight: per-step variants only");
    int64_t T = static_cast<int64_t>(states.size());
    bool with_labels = false;
    (void)with_labels;

    std::vector<Tensor> cond(states.begin(), states.begin() + k);
    DiagGaussian qy1 = infer_y1(cond);
    Tensor y1 = sample(qy1, rng);
    double lw = log_prob_value(DiagGaussian::standard(y1.shape()), y1) -
                log_prob_value(qy1, y1);

    PosteriorState st = initial_posterior();
    posterior_step(st, states[0], Tensor());
    Tensor y = y1;
    std::vector<Tensor> ys = {y};
    for (int64_t t = 1; t < T; ++t) {
        DiagGaussian qz = posterior_step(st, states[t], Tensor());
        DiagGaussian pz = prior_from_state(y);
        Tensor z = sample(qz, rng);
        lw += log_prob_value(pz, z) - log_prob_value(qz, z);
        y = apply_residual(y, z);
        ys.push_back(y);
    }
    for (int64_t t = 0; t < T; ++t) {
        Tensor s_hat = decode_state(ys[t]);
        lw += log_prob_value(DiagGaussian(s_hat, Tensor(s_hat.shape())), states[t]);
    }
    return lw;
}

double StretchBevModel::elbo_mc(const std::vector<Tensor>& states, int64_t k,
                                int n_samples, RngStream& rng) const {
    autodiff::NoGrad ng;
    double acc = 0;
    for (int i = 0; i < n_samples; ++i) acc += log_weight(states, k, rng);
    return acc / n_samples;
}

double StretchBevModel::iwae(const std::vector<Tensor>& states, int64_t k,
                             int n_samples, RngStream& rng) const {
    autodiff::NoGrad ng;
    std::vector<double> lw(n_samples);
    double mx = -1e300;
    for (int i = 0; i < n_samples; ++i) {
        lw[i] = log_weight(states, k, rng);
        mx = std::max(mx, lw[i]);
    }
    double acc = 0;
    for (double v : lw) acc += std::exp(v - mx);
    return mx + std::log(acc / n_samples);
}

// ---------------------------------------------------------------------------
// instance post-processing
// ---------------------------------------------------------------------------

namespace {

struct Track {
    long id;
    double cy, cx;
};

}  // namespace

std::vector<Tensor> instance_postprocess(const std::vector<Tensor>& centers,
                                         const std::vector<Tensor>& seg_fg,
                                         const std::vector<Tensor>& offsets,
                                         const std::vector<Tensor>& future_flow,
                                         const InstancePostprocessOptions& opt) {
    size_t T = centers.size();
    check(seg_fg.size() == T && offsets.size() == T && future_flow.size() == T,
          "instance_postprocess: misaligned heads");
    std::vector<Tensor> out;
    std::vector<Track> tracks;
    long next_id = 1;

    for (size_t t = 0; t < T; ++t) {
        const Tensor& heat = centers[t];
        int64_t H = heat.dim(1), W = heat.dim(2);
        const double* h = heat.data();

        // peaks: local maxima above a fraction of the frame max, greedily
        // thinned to the minimum separation
        double mx = 0;
        for (int64_t i = 0; i < H * W; ++i) mx = std::max(mx, h[i]);
        double thr = opt.peak_threshold * mx;
        struct Peak {
            double v, y, x;
        };
        std::vector<Peak> cand;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double v = h[y * W + x];
                if (mx <= 0 || v < thr) continue;
                bool is_max = true;
                for (int64_t dy = -1; dy <= 1 && is_max; ++dy)
                    for (int64_t dx = -1; dx <= 1 && is_max; ++dx) {
                        if (!dy && !dx) continue;
                        int64_t yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        double vn = h[yy * W + xx];
                        // ties broken toward the lexicographically first cell
                        if (vn > v || (vn == v && (yy < y || (yy == y && xx < x))))
                            is_max = false;
                    }
                if (is_max) cand.push_back({v, double(y), double(x)});
            }
        std::sort(cand.begin(), cand.end(), [](const Peak& a, const Peak& b) {
            if (a.v != b.v) return a.v > b.v;
            if (a.y != b.y) return a.y < b.y;
            return a.x < b.x;
        });
        std::vector<Peak> peaks;
        for (const auto& c : cand) {
            bool ok = true;
            for (const auto& p : peaks) {
                double d = std::hypot(c.y - p.y, c.x - p.x);
                if (d < opt.min_separation) ok = false;
            }
            if (ok) peaks.push_back(c);
        }

        // propagate ids: expected position = previous center + its flow
        std::vector<long> peak_ids(peaks.size(), 0);
        if (t == 0) {
            tracks.clear();
        }
        struct Cand {
            double d;
            size_t track, peak;
        };
        std::vector<Cand> match;
        for (size_t ti = 0; ti < tracks.size(); ++ti)
            for (size_t pi = 0; pi < peaks.size(); ++pi) {
                double d = std::hypot(tracks[ti].cy - peaks[pi].y,
                                      tracks[ti].cx - peaks[pi].x);
                if (d <= opt.match_radius) match.push_back({d, ti, pi});
            }
        std::sort(match.begin(), match.end(), [](const Cand& a, const Cand& b) {
            if (a.d != b.d) return a.d < b.d;
            if (a.track != b.track) return a.track < b.track;
            return a.peak < b.peak;
        });
        std::vector<bool> track_used(tracks.size(), false), peak_used(peaks.size(), false);
        std::vector<Track> new_tracks;
        for (const auto& m : match) {
            if (track_used[m.track] || peak_used[m.peak]) continue;
            track_used[m.track] = true;
            peak_used[m.peak] = true;
            peak_ids[m.peak] = tracks[m.track].id;
        }
        for (size_t pi = 0; pi < peaks.size(); ++pi)
            if (!peak_ids[pi]) peak_ids[pi] = next_id++;

        // assign foreground pixels to the nearest (pixel + offset) center
        Tensor ids({1, H, W});
        const double* fg = seg_fg[t].data();
        const double* off = offsets[t].data();
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                if (fg[y * W + x] <= 0.5 || peaks.empty()) continue;
                double ty = y + off[H * W + y * W + x];
                double tx = x + off[y * W + x];
                size_t best = 0;
                double bd = 1e300;
                for (size_t pi = 0; pi < peaks.size(); ++pi) {
                    double d = std::hypot(ty - peaks[pi].y, tx - peaks[pi].x);
                    if (d < bd) {
                        bd = d;
                        best = pi;
                    }
                }
                ids.data()[y * W + x] = double(peak_ids[best]);
            }
        out.push_back(ids);

        // advance tracks by the predicted flow at each kept peak
        const double* fl = future_flow[t].data();
        new_tracks.clear();
        for (size_t pi = 0; pi < peaks.size(); ++pi) {
            int64_t py = std::clamp<int64_t>(std::llround(peaks[pi].y), 0, H - 1);
            int64_t px = std::clamp<int64_t>(std::llround(peaks[pi].x), 0, W - 1);
            double dy = fl[H * W + py * W + px];
            double dx = fl[py * W + px];
            new_tracks.push_back({peak_ids[pi], peaks[pi].y + dy, peaks[pi].x + dx});
        }
        tracks = new_tracks;
    }
    return out;
}

// ---------------------------------------------------------------------------
// end-to-end gradient checks, one per model kind
// ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> tiny_frames(int64_t t, int64_t h, int64_t w, uint64_t seed) {
    RngStream rng(seed, "gc.frames");
    std::vector<Tensor> out;
    for (int64_t i = 0; i < t; ++i) {
        Tensor f({1, h, w});
        for (int64_t j = 0; j < f.size(); ++j) f.data()[j] = rng.uniform(0.05, 0.95);
        out.push_back(f);
    }
    return out;
}

LabeledSequence tiny_bev(int64_t t, uint64_t seed) {
    BEVWorldConfig cfg;
    cfg.grid = 8;
    cfg.agent_count = 1;
    cfg.agent_size_min = cfg.agent_size_max = 3;
    cfg.t = t;
    return gen_bevworld(cfg, seed);
}

std::vector<Tensor> param_tensors(ParamStore& ps) {
    std::vector<Tensor> out;
    for (auto& [k, v] : ps.entries()) out.push_back(v);
    return out;
}

double model_fd(ParamStore& ps, const std::function<Tensor()>& loss,
                const char* label) {
    RngStream pick(99, label);
    return fd_worst_rel_err(loss, param_tensors(ps), 1e-5, 2, &pick);
}

}  // namespace

std::vector<GradCheckCase> models_gradchecks() {
    std::vector<GradCheckCase> cases;

    cases.push_back({"model.svg", [] {
        SvgModel::Config c;
        c.height = c.width = 16;
        c.enc_base = 4;
        c.feat = 12;
        c.hidden = 16;
        c.z_dim = 4;
        c.k = 2;
        SvgModel m(c, 5);
        auto frames = tiny_frames(4, 16, 16, 31);
        auto f = [&]() {
            RngStream noise(70, "gc.svg.noise");
            return m.sequence_loss(frames, noise).total;
        };
        return model_fd(m.params(), f, "svg");
    }});

    cases.push_back({"model.slamp", [] {
        SlampModel::Config c;
        c.height = c.width = 16;
        c.enc_base = 4;
        c.feat = 12;
        c.hidden = 16;
        c.zp_dim = c.zf_dim = 4;
        c.k = 2;
        SlampModel m(c, 6);
        auto frames = tiny_frames(4, 16, 16, 32);
        auto f = [&]() {
            RngStream noise(71, "gc.slamp.noise");
            return m.sequence_loss(frames, noise).total;
        };
        return model_fd(m.params(), f, "slamp");
    }});

    for (auto variant : {Slamp3dVariant::DepthOnly, Slamp3dVariant::Combined,
                         Slamp3dVariant::Conditional}) {
        std::string name = "model.slamp3d-" + to_string(variant);
        cases.push_back({name, [variant] {
            Slamp3dModel::Config c;
            c.height = c.width = 16;
            c.enc_base = 4;
            c.cell_ch = 8;
            c.head_ch = 6;
            c.zs_ch = c.zd_ch = 3;
            c.k = 2;
            c.variant = variant;
            CameraIntrinsics K{10.0, 10.0, 7.5, 7.5};
            Slamp3dModel m(c, 7, K);
            auto frames = tiny_frames(4, 16, 16, 33);
            auto f = [&]() {
                RngStream noise(72, "gc.slamp3d.noise");
                return m.sequence_loss(frames, noise).total;
            };
            return model_fd(m.params(), f, "slamp3d");
        }});
    }

    for (auto variant : {SrvpVariant::Plain, SrvpVariant::PlusDirect,
                         SrvpVariant::PlusMask}) {
        std::string name = variant == SrvpVariant::Plain
                               ? "model.srvp"
                               : (variant == SrvpVariant::PlusDirect
                                      ? "model.srvp++-direct"
                                      : "model.srvp++-mask");
        cases.push_back({name, [variant] {
            SrvpModel::Config c;
            c.height = c.width = 16;
            c.enc_base = 4;
            c.feat = 12;
            c.hidden = 16;
            c.y_dim = 6;
            c.z_dim = 4;
            c.content_dim = 6;
            c.k = 2;
            c.variant = variant;
            SrvpModel m(c, 8);
            auto frames = tiny_frames(4, 16, 16, 34);
            auto f = [&]() {
                RngStream noise(73, "gc.srvp.noise");
                return m.sequence_loss(frames, noise).total;
            };
            return model_fd(m.params(), f, "srvp");
        }});
    }

    for (auto variant : {StretchBevVariant::Base, StretchBevVariant::WithLabelPosterior,
                         StretchBevVariant::GlobalLatent}) {
        std::string name = variant == StretchBevVariant::Base
                               ? "model.stretchbev"
                               : (variant == StretchBevVariant::WithLabelPosterior
                                      ? "model.stretchbev-p"
                                      : "model.stretchbev-global");
        cases.push_back({name, [variant] {
            StretchBevModel::Config c;
            c.grid = 8;
            c.enc_base = 4;
            c.label_base = 2;
            c.y_ch = 4;
            c.z_ch = 2;
            c.gru_ch = 6;
            c.hidden_ch = 6;
            c.k = 2;
            c.variant = variant;
            StretchBevModel m(c, 9);
            auto seq = tiny_bev(4, 35);
            auto f = [&]() {
                RngStream noise(74, "gc.bev.noise");
                return m.sequence_loss(seq, false, noise).total;
            };
            return model_fd(m.params(), f, "stretchbev");
        }});
    }

    return cases;
}

}  // namespace svp
