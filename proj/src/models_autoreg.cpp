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

}  // namespace

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

SvgModel::SvgModel(const Config& cfg, uint64_t seed) : cfg_(cfg) {
    RngStream rng(seed, "init.svg");
    enc_ = VecEncoder(ps_, "enc", cfg.channels, cfg.enc_base, 4, cfg.feat, cfg.height,
                      cfg.width, rng);
    dec_ = VecDecoder(ps_, "dec", cfg.hidden, cfg.enc_base, 4, cfg.channels,
                      cfg.height, cfg.width, rng);
    post_cell_ = LstmCell(ps_, "posterior.cell", cfg.feat, cfg.hidden, rng);
    prior_cell_ = LstmCell(ps_, "prior.cell", cfg.feat, cfg.hidden, rng);
    pred_cell_ = LstmCell(ps_, "predictor.cell", cfg.feat + cfg.z_dim, cfg.hidden, rng);
    post_head_ = GaussHeadVec(ps_, "posterior.head", cfg.hidden, cfg.z_dim, rng);
    prior_head_ = GaussHeadVec(ps_, "prior.head", cfg.hidden, cfg.z_dim, rng);
}

LossBreakdown SvgModel::sequence_loss(const std::vector<Tensor>& frames,
                                      RngStream& noise) {
    int64_t T = static_cast<int64_t>(frames.size());
    check(T >= 2, "svg: sequence length >= 2 required");
    int64_t k = std::min<int64_t>(cfg_.k, T - 1);

    std::vector<VecEncoder::Out> eo;
    for (const auto& f : frames) eo.push_back(enc_(f));

    Tensor hq = post_cell_.zero_state(), cq = post_cell_.zero_state();
    Tensor hp = prior_cell_.zero_state(), cp = prior_cell_.zero_state();
    Tensor hg = pred_cell_.zero_state(), cg = pred_cell_.zero_state();

    Tensor recon = Tensor::scalar(0.0), kl = Tensor::scalar(0.0);
    trace_ = StepTrace{};
    for (int64_t t = 1; t < T; ++t) {
        std::tie(hq, cq) = post_cell_(eo[t].vec, hq, cq);
        DiagGaussian q = post_head_(hq);
        std::tie(hp, cp) = prior_cell_(eo[t - 1].vec, hp, cp);
        DiagGaussian p = prior_head_(hp);
        Tensor z = sample(q, noise);
        std::tie(hg, cg) = pred_cell_(concat({eo[t - 1].vec, z}, 1), hg, cg);
        const auto& skips = eo[std::min(t - 1, k - 1)].skips;
        Tensor pred = sigmoid(dec_(hg, skips));
        recon = recon + l2_loss(pred, frames[t]);
        kl = kl + kl_diag(q, p);
        trace_.used_posterior.push_back(true);
        trace_.teacher_forced.push_back(true);
    }
    LossBreakdown out;
    Tensor kl_term = cfg_.beta * kl;
    out.total = recon + kl_term;
    out.terms["recon"] = recon.item();
    out.terms["kl"] = kl_term.item();
    return out;
}

RolloutResult SvgModel::rollout(const std::vector<Tensor>& frames, int64_t k,
                                int64_t horizon, RngStream& noise,
                                bool posterior_everywhere) const {
    check(horizon >= 1, "rollout: horizon must be positive");
    check(static_cast<int64_t>(frames.size()) >=
              (posterior_everywhere ? k + horizon : k),
          "rollout: not enough frames");
    autodiff::NoGrad ng;
    RolloutResult out;
    trace_ = StepTrace{};

    Tensor hq = post_cell_.zero_state(), cq = post_cell_.zero_state();
    Tensor hp = prior_cell_.zero_state(), cp = prior_cell_.zero_state();
    Tensor hg = pred_cell_.zero_state(), cg = pred_cell_.zero_state();

    auto skips = enc_(frames[k - 1]).skips;
    Tensor prev_vec = enc_(frames[0]).vec;

    for (int64_t t = 1; t < k + horizon; ++t) {
        bool predicted = t >= k;
        bool use_post = !predicted || posterior_everywhere;

        std::tie(hp, cp) = prior_cell_(prev_vec, hp, cp);
        DiagGaussian p = prior_head_(hp);
        Tensor z, cur_vec;
        if (use_post) {
            cur_vec = enc_(frames[t]).vec;
            std::tie(hq, cq) = post_cell_(cur_vec, hq, cq);
            z = sample(post_head_(hq), noise);
        } else {
            z = sample(p, noise);
        }
        std::tie(hg, cg) = pred_cell_(concat({prev_vec, z}, 1), hg, cg);
        Tensor pred = sigmoid(dec_(hg, skips));

        trace_.used_posterior.push_back(use_post);
        trace_.teacher_forced.push_back(!predicted);
        if (predicted) {
            out.predictions.push_back(pred);
            out.latents_pixel.push_back(z);
            prev_vec = enc_(pred).vec;
        } else {
            prev_vec = cur_vec.defined() ? cur_vec : enc_(frames[t]).vec;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SLAMP
// ---------------------------------------------------------------------------

SlampModel::SlampModel(const Config& cfg, uint64_t seed) : cfg_(cfg) {
    RngStream rng(seed, "init.slamp");
    enc_ = VecEncoder(ps_, "enc", cfg.channels, cfg.enc_base, 4, cfg.feat, cfg.height,
                      cfg.width, rng);
    menc_ = VecEncoder(ps_, "motion_enc", 2 * cfg.channels, cfg.enc_base, 4, cfg.feat,
                       cfg.height, cfg.width, rng);
    pix_dec_ = VecDecoder(ps_, "pixel_dec", cfg.hidden, cfg.enc_base, 4, cfg.channels,
                          cfg.height, cfg.width, rng);
    flow_dec_ = VecDecoder(ps_, "flow_dec", cfg.hidden, cfg.enc_base, 4, 2, cfg.height,
                           cfg.width, rng);
    mask_dec_ = ConvBlock(ps_, "mask_dec", 2 * cfg.channels, 16, 1, rng);
    p_post_cell_ = LstmCell(ps_, "pixel.posterior.cell", cfg.feat, cfg.hidden, rng);
    p_prior_cell_ = LstmCell(ps_, "pixel.prior.cell", cfg.feat, cfg.hidden, rng);
    p_pred_cell_ =
        LstmCell(ps_, "pixel.predictor.cell", cfg.feat + cfg.zp_dim, cfg.hidden, rng);
    f_post_cell_ = LstmCell(ps_, "flow.posterior.cell", cfg.feat, cfg.hidden, rng);
    f_prior_cell_ = LstmCell(ps_, "flow.prior.cell", cfg.feat, cfg.hidden, rng);
    f_pred_cell_ =
        LstmCell(ps_, "flow.predictor.cell", cfg.feat + cfg.zf_dim, cfg.hidden, rng);
    p_post_head_ = GaussHeadVec(ps_, "pixel.posterior.head", cfg.hidden, cfg.zp_dim, rng);
    p_prior_head_ = GaussHeadVec(ps_, "pixel.prior.head", cfg.hidden, cfg.zp_dim, rng);
    f_post_head_ = GaussHeadVec(ps_, "flow.posterior.head", cfg.hidden, cfg.zf_dim, rng);
    f_prior_head_ = GaussHeadVec(ps_, "flow.prior.head", cfg.hidden, cfg.zf_dim, rng);
}

SlampModel::StepOut SlampModel::decode_step(const Tensor& gp, const Tensor& gf,
                                            const Tensor& prev_frame,
                                            const std::vector<Tensor>& skips) const {
    StepOut o;
    o.appearance = sigmoid(pix_dec_(gp, skips));
    o.flow = flow_activation(flow_dec_(gf, skips), cfg_.height, cfg_.width);
    o.warped = warp_by_flow(prev_frame, o.flow);
    o.mask = sigmoid(mask_dec_(concat({o.appearance, o.warped}, 0)));
    o.combined = blend(o.appearance, o.warped, o.mask);
    return o;
}

LossBreakdown SlampModel::sequence_loss(const std::vector<Tensor>& frames,
                                        RngStream& noise) {
    int64_t T = static_cast<int64_t>(frames.size());
    check(T >= 3, "slamp: sequence length >= 3 required");
    int64_t k = std::min<int64_t>(cfg_.k, T - 1);

    std::vector<VecEncoder::Out> eo;
    for (const auto& f : frames) eo.push_back(enc_(f));
    // m[t] encodes the motion x_{t-1} -> x_t; m[0] is the zero-motion
    // boundary, the first frame against itself
    std::vector<Tensor> m(T);
    m[0] = menc_(concat({frames[0], frames[0]}, 0)).vec;
    for (int64_t t = 1; t < T; ++t)
        m[t] = menc_(concat({frames[t - 1], frames[t]}, 0)).vec;

    trace_ = StepTrace{};
    trace_.first_prior_motion_input = m[0].detach();
    trace_.zero_motion_reference = m[0].detach();

    Tensor z0 = p_post_cell_.zero_state();
    Tensor hpq = z0, cpq = z0, hpp = z0, cpp = z0, hpg = z0, cpg = z0;
    Tensor hfq = z0, cfq = z0, hfp = z0, cfp = z0, hfg = z0, cfg2 = z0;

    Tensor rec_final = Tensor::scalar(0.0), rec_pix = Tensor::scalar(0.0);
    Tensor rec_flow = Tensor::scalar(0.0);
    Tensor kl_p = Tensor::scalar(0.0), kl_f = Tensor::scalar(0.0);

    for (int64_t t = 1; t < T; ++t) {
        std::tie(hpq, cpq) = p_post_cell_(eo[t].vec, hpq, cpq);
        DiagGaussian qp = p_post_head_(hpq);
        std::tie(hpp, cpp) = p_prior_cell_(eo[t - 1].vec, hpp, cpp);
        DiagGaussian pp = p_prior_head_(hpp);
        Tensor zp = sample(qp, noise);
        std::tie(hpg, cpg) = p_pred_cell_(concat({eo[t - 1].vec, zp}, 1), hpg, cpg);

        std::tie(hfq, cfq) = f_post_cell_(m[t], hfq, cfq);
        DiagGaussian qf = f_post_head_(hfq);
        std::tie(hfp, cfp) = f_prior_cell_(m[t - 1], hfp, cfp);
        DiagGaussian pf = f_prior_head_(hfp);
        Tensor zf = sample(qf, noise);
        std::tie(hfg, cfg2) = f_pred_cell_(concat({m[t - 1], zf}, 1), hfg, cfg2);

        const auto& skips = eo[std::min(t - 1, k - 1)].skips;
        StepOut o = decode_step(hpg, hfg, frames[t - 1], skips);

        rec_final = rec_final + l2_loss(o.combined, frames[t]);
        rec_pix = rec_pix + l2_loss(o.appearance, frames[t]);
        rec_flow = rec_flow + l2_loss(o.warped, frames[t]);
        kl_p = kl_p + kl_diag(qp, pp);
        kl_f = kl_f + kl_diag(qf, pf);
        trace_.used_posterior.push_back(true);
        trace_.teacher_forced.push_back(true);
    }

    LossBreakdown out;
    Tensor klp_term = cfg_.beta * kl_p;
    Tensor klf_term = cfg_.beta * kl_f;
    out.total = rec_final + rec_pix + rec_flow + klp_term + klf_term;
    out.terms["recon_final"] = rec_final.item();
    out.terms["recon_appearance"] = rec_pix.item();
    out.terms["recon_motion"] = rec_flow.item();
    out.terms["kl_pixel"] = klp_term.item();
    out.terms["kl_flow"] = klf_term.item();
    return out;
}

RolloutResult SlampModel::rollout(const std::vector<Tensor>& frames, int64_t k,
                                  int64_t horizon, RngStream& noise,
                                  bool posterior_everywhere) const {
    check(horizon >= 1, "rollout: horizon must be positive");
    check(k >= 2, "slamp rollout: k >= 2 required for one flow of motion history");
    check(static_cast<int64_t>(frames.size()) >=
              (posterior_everywhere ? k + horizon : k),
          "rollout: not enough frames");
    autodiff::NoGrad ng;
    RolloutResult out;
    trace_ = StepTrace{};

    Tensor z0 = p_post_cell_.zero_state();
    Tensor hpq = z0, cpq = z0, hpp = z0, cpp = z0, hpg = z0, cpg = z0;
    Tensor hfq = z0, cfq = z0, hfp = z0, cfp = z0, hfg = z0, cfg2 = z0;

    auto skips = enc_(frames[k - 1]).skips;
    Tensor prev_frame = frames[0];
    Tensor prev_vec = enc_(frames[0]).vec;
    Tensor prev_motion = menc_(concat({frames[0], frames[0]}, 0)).vec;
    trace_.first_prior_motion_input = prev_motion.detach();
    trace_.zero_motion_reference = prev_motion.detach();

    for (int64_t t = 1; t < k + horizon; ++t) {
        bool predicted = t >= k;
        bool use_post = !predicted || posterior_everywhere;

        std::tie(hpp, cpp) = p_prior_cell_(prev_vec, hpp, cpp);
        DiagGaussian pp = p_prior_head_(hpp);
        std::tie(hfp, cfp) = f_prior_cell_(prev_motion, hfp, cfp);
        DiagGaussian pf = f_prior_head_(hfp);

        Tensor zp, zf, cur_vec, cur_motion;
        if (use_post) {
            cur_vec = enc_(frames[t]).vec;
            cur_motion = menc_(concat({prev_frame, frames[t]}, 0)).vec;
            std::tie(hpq, cpq) = p_post_cell_(cur_vec, hpq, cpq);
            std::tie(hfq, cfq) = f_post_cell_(cur_motion, hfq, cfq);
            zp = sample(p_post_head_(hpq), noise);
            zf = sample(f_post_head_(hfq), noise);
        } else {
            zp = sample(pp, noise);
            zf = sample(pf, noise);
        }
        std::tie(hpg, cpg) = p_pred_cell_(concat({prev_vec, zp}, 1), hpg, cpg);
        std::tie(hfg, cfg2) = f_pred_cell_(concat({prev_motion, zf}, 1), hfg, cfg2);

        StepOut o = decode_step(hpg, hfg, prev_frame, skips);

        trace_.used_posterior.push_back(use_post);
        trace_.teacher_forced.push_back(!predicted);
        if (predicted) {
            out.predictions.push_back(o.combined);
            out.appearance.push_back(o.appearance);
            out.motion.push_back(o.warped);
            out.flows.push_back(o.flow);
            out.masks.push_back(o.mask);
            out.latents_pixel.push_back(zp);
            out.latents_motion.push_back(zf);
            // from here on the model consumes its own outputs
            prev_motion = menc_(concat({prev_frame, o.combined}, 0)).vec;
            prev_vec = enc_(o.combined).vec;
            prev_frame = o.combined;
        } else {
            prev_vec = cur_vec.defined() ? cur_vec : enc_(frames[t]).vec;
            prev_motion = cur_motion.defined()
                              ? cur_motion
                              : menc_(concat({prev_frame, frames[t]}, 0)).vec;
            prev_frame = frames[t];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SLAMP-3D
// ---------------------------------------------------------------------------

Slamp3dVariant slamp3d_variant_from_string(const std::string& s) {
    if (s == "depthonly") return Slamp3dVariant::DepthOnly;
    if (s == "combined") return Slamp3dVariant::Combined;
    if (s == "conditional") return Slamp3dVariant::Conditional;
    throw ConfigError("unknown slamp3d variant: " + s);
}

std::string to_string(Slamp3dVariant v) {
    switch (v) {
        case Slamp3dVariant::DepthOnly: return "depthonly";
        case Slamp3dVariant::Combined: return "combined";
        default: return "conditional";
    }
}

Slamp3dModel::Slamp3dModel(const Config& cfg, uint64_t seed, const CameraIntrinsics& K)
    : cfg_(cfg), K_(K) {
    RngStream rng(seed, "init.slamp3d");
    img_enc_ = GridEncoder(ps_, "img_enc", cfg.channels, cfg.enc_base, 4, cfg.height,
                           cfg.width, rng);
    int ce = img_enc_.ch_out;
    depth_head_ = ConvBlock(ps_, "depth_head", ce, cfg.head_ch, cfg.head_ch, rng);
    pose_head_ = ConvBlock(ps_, "pose_head", 2 * ce, cfg.head_ch, cfg.head_ch, rng);

    int s_in = 2 * cfg.head_ch;
    s_post_ = ConvLstmCell(ps_, "static.posterior", s_in, cfg.cell_ch, 3, rng);
    s_prior_ = ConvLstmCell(ps_, "static.prior", s_in, cfg.cell_ch, 3, rng);
    s_pred_ = ConvLstmCell(ps_, "static.predictor", s_in + cfg.zs_ch, cfg.cell_ch, 3, rng);
    s_post_g_ = GaussHeadConv(ps_, "static.posterior.head", cfg.cell_ch, cfg.zs_ch, rng);
    s_prior_g_ = GaussHeadConv(ps_, "static.prior.head", cfg.cell_ch, cfg.zs_ch, rng);

    auto widths = stage_widths(cfg.enc_base, 4);
    std::vector<int> dec_widths = {widths[2], widths[1], widths[0], cfg.enc_base};
    if (has_dynamic()) {
        motion_head_ = ConvBlock(ps_, "motion_head", cfg.cell_ch + ce, cfg.head_ch,
                                 cfg.head_ch, rng);
        int d_in = cfg.head_ch +
                   (cfg.variant == Slamp3dVariant::Conditional ? cfg.zs_ch : 0);
        d_post_ = ConvLstmCell(ps_, "dynamic.posterior", d_in, cfg.cell_ch, 3, rng);
        d_prior_ = ConvLstmCell(ps_, "dynamic.prior", cfg.head_ch, cfg.cell_ch, 3, rng);
        d_pred_ = ConvLstmCell(ps_, "dynamic.predictor", cfg.head_ch + cfg.zd_ch,
                               cfg.cell_ch, 3, rng);
        d_post_g_ = GaussHeadConv(ps_, "dynamic.posterior.head", cfg.cell_ch, cfg.zd_ch, rng);
        d_prior_g_ = GaussHeadConv(ps_, "dynamic.prior.head", cfg.cell_ch, cfg.zd_ch, rng);
        flow_dec_ = GridDecoder(ps_, "flow_dec", cfg.cell_ch, dec_widths, {0, 0, 0, 0},
                                2, rng);
        mask_dec_ = ConvBlock(ps_, "mask_dec", 2 * cfg.channels, 12, 1, rng);
    }
    std::vector<int> skip_chs = {widths[2], widths[1], widths[0], 0};
    depth_dec_ = GridDecoder(ps_, "depth_dec", cfg.cell_ch, dec_widths, skip_chs, 1, rng);
    pose_lin_ = Linear(ps_, "pose_lin", cfg.cell_ch, 6, rng);
}

LossBreakdown Slamp3dModel::sequence_loss(const std::vector<Tensor>& frames,
                                          RngStream& noise) {
    int64_t T = static_cast<int64_t>(frames.size());
    check(T >= 3, "slamp3d: sequence length >= 3 required");
    int64_t k = std::min<int64_t>(cfg_.k, T - 1);
    int64_t gh = img_enc_.h_out, gw = img_enc_.w_out;

    std::vector<GridEncoder::Out> eo;
    for (const auto& f : frames) eo.push_back(img_enc_(f));
    std::vector<Tensor> hd(T), hp(T);
    for (int64_t t = 0; t < T; ++t) hd[t] = depth_head_(eo[t].map);
    // zero-motion boundary: pose encoding of the first frame against itself
    hp[0] = pose_head_(concat({eo[0].map, eo[0].map}, 0));
    for (int64_t t = 1; t < T; ++t)
        hp[t] = pose_head_(concat({eo[t - 1].map, eo[t].map}, 0));

    trace_ = StepTrace{};
    trace_.first_prior_motion_input = hp[0].detach();
    trace_.zero_motion_reference = hp[0].detach();

    Tensor z0 = Tensor({cfg_.cell_ch, gh, gw});
    Tensor hsq = z0, csq = z0, hsp = z0, csp = z0, hsg = z0, csg = z0;
    Tensor hdq = z0, cdq = z0, hdp = z0, cdp = z0, hdg = z0, cdg = z0;

    Tensor nll_final = Tensor::scalar(0.0), nll_static = Tensor::scalar(0.0);
    Tensor nll_dynamic = Tensor::scalar(0.0);
    Tensor kl_s = Tensor::scalar(0.0), kl_d = Tensor::scalar(0.0);
    Tensor hf_prev;
    if (has_dynamic())
        hf_prev = motion_head_(concat({z0, eo[0].map}, 0));

    for (int64_t t = 1; t < T; ++t) {
        Tensor s_post_in = concat({hd[t], hp[t]}, 0);
        Tensor s_prior_in = concat({hd[t - 1], hp[t - 1]}, 0);
        std::tie(hsq, csq) = s_post_(s_post_in, hsq, csq);
        DiagGaussian qs = s_post_g_(hsq);
        std::tie(hsp, csp) = s_prior_(s_prior_in, hsp, csp);
        DiagGaussian ps = s_prior_g_(hsp);
        Tensor zs = sample(qs, noise);
        std::tie(hsg, csg) = s_pred_(concat({s_prior_in, zs}, 0), hsg, csg);

        const auto& skips = eo[std::min(t - 1, k - 1)].skips;
        std::vector<Tensor> dec_skips = {skips[2], skips[1], skips[0], Tensor()};
        Tensor depth =
            depth_activation(depth_dec_(hsg, dec_skips), cfg_.d_min, cfg_.d_max);
        Tensor pose = reshape(pose_lin_(global_avg_pool(hsg)) * cfg_.pose_scale, {6});
        auto warp = warp_by_depth_pose(frames[t - 1], depth, pose, K_);
        Tensor x_static = warp.prediction;

        if (has_dynamic()) {
            Tensor hf = motion_head_(concat({hsg, eo[t].map}, 0));
            Tensor d_post_in = cfg_.variant == Slamp3dVariant::Conditional
                                   ? concat({hf, zs}, 0)
                                   : hf;
            std::tie(hdq, cdq) = d_post_(d_post_in, hdq, cdq);
            DiagGaussian qd = d_post_g_(hdq);
            std::tie(hdp, cdp) = d_prior_(hf_prev, hdp, cdp);
            DiagGaussian pd = d_prior_g_(hdp);
            Tensor zd = sample(qd, noise);
            std::tie(hdg, cdg) = d_pred_(concat({hf_prev, zd}, 0), hdg, cdg);

            Tensor rflow = flow_activation(
                flow_dec_(hdg, {Tensor(), Tensor(), Tensor(), Tensor()}), cfg_.height,
                cfg_.width);
            Tensor x_dynamic = compose_residual(x_static, rflow);
            Tensor mask = sigmoid(mask_dec_(concat({x_static, x_dynamic}, 0)));
            Tensor x_final = blend(x_static, x_dynamic, mask);

            nll_final = nll_final + sigma_vae_nll(x_final, frames[t]).loss;
            nll_dynamic = nll_dynamic + sigma_vae_nll(x_dynamic, frames[t]).loss;
            kl_d = kl_d + kl_diag(qd, pd);
            hf_prev = hf;
        }
        nll_static = nll_static + sigma_vae_nll(x_static, frames[t]).loss;
        kl_s = kl_s + kl_diag(qs, ps);
        trace_.used_posterior.push_back(true);
        trace_.teacher_forced.push_back(true);
    }

    LossBreakdown out;
    Tensor kls_term = cfg_.beta * kl_s;
    out.terms["nll_static"] = nll_static.item();
    out.terms["kl_static"] = kls_term.item();
    out.total = nll_static + kls_term;
    if (has_dynamic()) {
        Tensor kld_term = cfg_.beta * kl_d;
        out.total = out.total + nll_final + nll_dynamic + kld_term;
        out.terms["nll_final"] = nll_final.item();
        out.terms["nll_dynamic"] = nll_dynamic.item();
        out.terms["kl_dynamic"] = kld_term.item();
    }
    return out;
}

RolloutResult Slamp3dModel::rollout(const std::vector<Tensor>& frames, int64_t k,
                                    int64_t horizon, RngStream& noise,
                                    bool posterior_everywhere) const {
    check(horizon >= 1, "rollout: horizon must be positive");
    check(k >= 2, "slamp3d rollout: k >= 2 required");
    check(static_cast<int64_t>(frames.size()) >=
              (posterior_everywhere ? k + horizon : k),
          "rollout: not enough frames");
    autodiff::NoGrad ng;
    RolloutResult out;
    trace_ = StepTrace{};
    int64_t gh = img_enc_.h_out, gw = img_enc_.w_out;

    Tensor z0 = Tensor({cfg_.cell_ch, gh, gw});
    Tensor hsq = z0, csq = z0, hsp = z0, csp = z0, hsg = z0, csg = z0;
    Tensor hdq = z0, cdq = z0, hdp = z0, cdp = z0, hdg = z0, cdg = z0;

    auto eo0 = img_enc_(frames[0]);
    auto skips_src = img_enc_(frames[k - 1]).skips;
    std::vector<Tensor> dec_skips = {skips_src[2], skips_src[1], skips_src[0], Tensor()};

    Tensor prev_frame = frames[0];
    Tensor prev_e = eo0.map;
    Tensor prev_hd = depth_head_(prev_e);
    Tensor prev_hp = pose_head_(concat({prev_e, prev_e}, 0));
    Tensor hf_prev;
    if (has_dynamic()) hf_prev = motion_head_(concat({z0, prev_e}, 0));
    trace_.first_prior_motion_input = prev_hp.detach();
    trace_.zero_motion_reference = prev_hp.detach();

    for (int64_t t = 1; t < k + horizon; ++t) {
        bool predicted = t >= k;
        bool use_post = !predicted || posterior_everywhere;

        Tensor s_prior_in = concat({prev_hd, prev_hp}, 0);
        std::tie(hsp, csp) = s_prior_(s_prior_in, hsp, csp);
        DiagGaussian ps = s_prior_g_(hsp);

        Tensor cur_e, zs;
        if (use_post) {
            cur_e = img_enc_(frames[t]).map;
            Tensor hd_t = depth_head_(cur_e);
            Tensor hp_t = pose_head_(concat({prev_e, cur_e}, 0));
            std::tie(hsq, csq) = s_post_(concat({hd_t, hp_t}, 0), hsq, csq);
            zs = sample(s_post_g_(hsq), noise);
        } else {
            zs = sample(ps, noise);
        }
        std::tie(hsg, csg) = s_pred_(concat({s_prior_in, zs}, 0), hsg, csg);

        Tensor depth =
            depth_activation(depth_dec_(hsg, dec_skips), cfg_.d_min, cfg_.d_max);
        Tensor pose = reshape(pose_lin_(global_avg_pool(hsg)) * cfg_.pose_scale, {6});
        auto warp = warp_by_depth_pose(prev_frame, depth, pose, K_);
        Tensor x_static = warp.prediction;
        Tensor x_final = x_static;
        Tensor rflow, mask, x_dynamic, zd;

        if (has_dynamic()) {
            std::tie(hdp, cdp) = d_prior_(hf_prev, hdp, cdp);
            DiagGaussian pd = d_prior_g_(hdp);
            Tensor hf_post;
            if (use_post) {
                hf_post = motion_head_(concat({hsg, cur_e}, 0));
                Tensor d_post_in = cfg_.variant == Slamp3dVariant::Conditional
                                       ? concat({hf_post, zs}, 0)
                                       : hf_post;
                std::tie(hdq, cdq) = d_post_(d_post_in, hdq, cdq);
                zd = sample(d_post_g_(hdq), noise);
            } else {
                zd = sample(pd, noise);
            }
            std::tie(hdg, cdg) = d_pred_(concat({hf_prev, zd}, 0), hdg, cdg);
            rflow = flow_activation(
                flow_dec_(hdg, {Tensor(), Tensor(), Tensor(), Tensor()}), cfg_.height,
                cfg_.width);
            x_dynamic = compose_residual(x_static, rflow);
            mask = sigmoid(mask_dec_(concat({x_static, x_dynamic}, 0)));
            x_final = blend(x_static, x_dynamic, mask);
            // the next prior consumes the motion encoding of what was actually
            // produced this step: the target encoding when observed, else the
            // model's own prediction
            hf_prev = use_post ? hf_post
                               : motion_head_(concat({hsg, img_enc_(x_final).map}, 0));
        }

        trace_.used_posterior.push_back(use_post);
        trace_.teacher_forced.push_back(!predicted);
        if (predicted) {
            out.predictions.push_back(x_final);
            out.appearance.push_back(x_static);
            out.depths.push_back(depth);
            out.poses.push_back(pose);
            out.latents_pixel.push_back(zs);
            if (has_dynamic()) {
                out.motion.push_back(x_dynamic);
                out.flows.push_back(rflow);
                out.masks.push_back(mask);
                out.latents_motion.push_back(zd);
            }
            Tensor e = img_enc_(x_final).map;
            prev_hd = depth_head_(e);
            prev_hp = pose_head_(concat({prev_e, e}, 0));
            prev_e = e;
            prev_frame = x_final;
        } else {
            Tensor e = cur_e.defined() ? cur_e : img_enc_(frames[t]).map;
            prev_hd = depth_head_(e);
            prev_hp = pose_head_(concat({prev_e, e}, 0));
            prev_e = e;
            prev_frame = frames[t];
        }
    }
    return out;
}

}  // namespace svp
