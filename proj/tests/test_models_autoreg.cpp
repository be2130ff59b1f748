#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "svp/models_autoreg.hpp"
#include "svp/params.hpp"
#include "svp/worlds.hpp"

using namespace svp;

namespace {

std::vector<Tensor> sprite_frames(int64_t t, uint64_t seed, int64_t hw = 16) {
    SpriteWorldConfig cfg;
    cfg.height = cfg.width = hw;
    cfg.sprite_size = 5.0;
    cfg.t = t;
    return gen_sprites(cfg, seed).frames;
}

SvgModel::Config tiny_svg() {
    SvgModel::Config c;
    c.height = c.width = 16;
    c.enc_base = 4;
    c.feat = 12;
    c.hidden = 16;
    c.z_dim = 4;
    c.k = 3;
    return c;
}

SlampModel::Config tiny_slamp() {
    SlampModel::Config c;
    c.height = c.width = 16;
    c.enc_base = 4;
    c.feat = 12;
    c.hidden = 16;
    c.zp_dim = c.zf_dim = 4;
    c.k = 3;
    return c;
}

Slamp3dModel::Config tiny_slamp3d(Slamp3dVariant v) {
    Slamp3dModel::Config c;
    c.height = c.width = 16;
    c.enc_base = 4;
    c.cell_ch = 8;
    c.head_ch = 6;
    c.zs_ch = c.zd_ch = 3;
    c.k = 3;
    c.variant = v;
    return c;
}

void zero_param(ParamStore& ps, const std::string& name) {
    Tensor& t = ps.at(name);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0;
}

void fill_param(ParamStore& ps, const std::string& name, double v) {
    Tensor& t = ps.at(name);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = v;
}

double max_abs(const Tensor& t) {
    double m = 0;
    for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t.data()[i]));
    return m;
}

double total_from_terms(const LossBreakdown& b) {
    double s = 0;
    for (const auto& [k, v] : b.terms) s += v;
    return s;
}

bool frames_equal(const Tensor& a, const Tensor& b, double tol = 0.0) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (std::abs(a.data()[i] - b.data()[i]) > tol) return false;
    return true;
}

}  // namespace

TEST_CASE("svg loss breakdown sums to the total and beta=0 drops the KL") {
    SvgModel m(tiny_svg(), 1);
    auto frames = sprite_frames(5, 2);
    RngStream noise(3, "t.noise");
    auto b = m.sequence_loss(frames, noise);
    CHECK(b.total.item() == doctest::Approx(total_from_terms(b)).epsilon(1e-10));
    CHECK(b.terms.at("kl") > 0.0);

    auto cfg0 = tiny_svg();
    cfg0.beta = 0.0;
    SvgModel m0(cfg0, 1);
    RngStream noise2(3, "t.noise");
    auto b0 = m0.sequence_loss(frames, noise2);
    CHECK(b0.total.item() == doctest::Approx(b0.terms.at("recon")).epsilon(1e-12));
    CHECK(b0.terms.at("kl") == 0.0);
}

TEST_CASE("svg gradient reaches every parameter group") {
    SvgModel m(tiny_svg(), 4);
    auto frames = sprite_frames(5, 5);
    RngStream noise(6, "t.noise");
    auto b = m.sequence_loss(frames, noise);
    auto grads = gradients(b.total, m.params());
    for (const auto& [name, g] : grads) {
        CAPTURE(name);
        CHECK(max_abs(g) > 0.0);
    }
}

TEST_CASE("svg rollout is deterministic given the stream and has the right length") {
    SvgModel m(tiny_svg(), 7);
    auto frames = sprite_frames(8, 8);
    RngStream n1(9, "roll"), n2(9, "roll");
    auto r1 = m.rollout(frames, 3, 4, n1);
    auto r2 = m.rollout(frames, 3, 4, n2);
    REQUIRE(r1.predictions.size() == 4);
    for (size_t i = 0; i < 4; ++i)
        CHECK(frames_equal(r1.predictions[i], r2.predictions[i]));

    // trace flags: posterior within conditioning, prior afterwards
    const auto& tr = m.last_trace();
    REQUIRE(tr.used_posterior.size() == 6);  // steps t=1..6
    CHECK(tr.used_posterior[0]);
    CHECK(tr.used_posterior[1]);
    CHECK_FALSE(tr.used_posterior[2]);
    CHECK(tr.teacher_forced[1]);
    CHECK_FALSE(tr.teacher_forced[2]);
}

TEST_CASE("slamp loss breakdown sums and zero-motion boundary is instrumented") {
    SlampModel m(tiny_slamp(), 11);
    auto frames = sprite_frames(6, 12);
    RngStream noise(13, "t.noise");
    auto b = m.sequence_loss(frames, noise);
    CHECK(b.total.item() == doctest::Approx(total_from_terms(b)).epsilon(1e-10));

    // the first prior motion input is the motion of the first frame to itself
    const auto& tr = m.last_trace();
    CHECK(frames_equal(tr.first_prior_motion_input, tr.zero_motion_reference));
}

TEST_CASE("slamp mask saturation: mask to 1 gives the appearance branch") {
    SlampModel m(tiny_slamp(), 14);
    auto frames = sprite_frames(6, 15);
    // saturate the mask head high: blend must return the appearance branch
    fill_param(m.params(), "mask_dec.b.bias", 50.0);
    zero_param(m.params(), "mask_dec.b.weight");
    RngStream noise(16, "roll");
    auto r = m.rollout(frames, 3, 3, noise);
    for (size_t i = 0; i < r.predictions.size(); ++i)
        CHECK(frames_equal(r.predictions[i], r.appearance[i], 1e-12));

    fill_param(m.params(), "mask_dec.b.bias", -50.0);
    RngStream noise2(16, "roll");
    auto r2 = m.rollout(frames, 3, 3, noise2);
    for (size_t i = 0; i < r2.predictions.size(); ++i)
        CHECK(frames_equal(r2.predictions[i], r2.motion[i], 1e-12));
}

TEST_CASE("slamp zero flow turns the motion branch into the previous frame") {
    SlampModel m(tiny_slamp(), 17);
    auto frames = sprite_frames(6, 18);
    zero_param(m.params(), "flow_dec.out.weight");
    zero_param(m.params(), "flow_dec.out.bias");
    RngStream noise(19, "roll");
    auto r = m.rollout(frames, 3, 1, noise);
    // first predicted step warps the last conditioning frame with zero flow
    CHECK(frames_equal(r.motion[0], frames[2]));
    CHECK(max_abs(r.flows[0]) == 0.0);
}

TEST_CASE("slamp gradient reaches flow, mask, and pixel decoders") {
    SlampModel m(tiny_slamp(), 20);
    auto frames = sprite_frames(6, 21);
    RngStream noise(22, "t.noise");
    auto b = m.sequence_loss(frames, noise);
    auto grads = gradients(b.total, m.params());
    for (const char* name : {"flow_dec.out.weight", "mask_dec.a.weight",
                             "pixel_dec.out.weight", "motion_enc.conv0.weight"}) {
        CAPTURE(name);
        CHECK(max_abs(grads.at(name)) > 0.0);
    }
    for (const auto& [name, g] : grads) {
        CAPTURE(name);
        CHECK(max_abs(g) > 0.0);
    }
}

TEST_CASE("slamp3d variants wire the dynamic posterior per the contract") {
    CameraIntrinsics K{10, 10, 7.5, 7.5};
    Slamp3dModel cond(tiny_slamp3d(Slamp3dVariant::Conditional), 23, K);
    Slamp3dModel comb(tiny_slamp3d(Slamp3dVariant::Combined), 23, K);
    Slamp3dModel depth(tiny_slamp3d(Slamp3dVariant::DepthOnly), 23, K);

    // conditional consumes the static latent in the dynamic posterior
    auto c = tiny_slamp3d(Slamp3dVariant::Conditional);
    CHECK(cond.params().at("dynamic.posterior.w_ih").dim(1) ==
          c.head_ch + c.zs_ch);
    CHECK(comb.params().at("dynamic.posterior.w_ih").dim(1) == c.head_ch);
    // depth-only has no dynamic branch at all
    CHECK_FALSE(depth.params().contains("dynamic.posterior.w_ih"));
    CHECK_FALSE(depth.params().contains("flow_dec.out.weight"));
}

TEST_CASE("slamp3d depth-only rollout has no dynamic outputs") {
    EgoWorldConfig wc;
    wc.height = 16;
    wc.width = 16;
    wc.fx = wc.fy = 10.0;
    wc.t = 6;
    auto seq = gen_egoworld(wc, 24);
    CameraIntrinsics K = egoworld_intrinsics(wc);
    Slamp3dModel m(tiny_slamp3d(Slamp3dVariant::DepthOnly), 25, K);
    RngStream noise(26, "roll");
    auto r = m.rollout(seq.frames, 3, 3, noise);
    CHECK(r.predictions.size() == 3);
    CHECK(r.motion.empty());
    CHECK(r.flows.empty());
    CHECK(r.masks.empty());
    for (size_t i = 0; i < 3; ++i)
        CHECK(frames_equal(r.predictions[i], r.appearance[i]));
}

TEST_CASE("slamp3d identity pose and zero residual reproduce the previous frame") {
    EgoWorldConfig wc;
    wc.height = 16;
    wc.width = 16;
    wc.fx = wc.fy = 10.0;
    wc.t = 6;
    auto seq = gen_egoworld(wc, 27);
    CameraIntrinsics K = egoworld_intrinsics(wc);
    Slamp3dModel m(tiny_slamp3d(Slamp3dVariant::Conditional), 28, K);
    zero_param(m.params(), "pose_lin.weight");
    zero_param(m.params(), "pose_lin.bias");
    zero_param(m.params(), "flow_dec.out.weight");
    zero_param(m.params(), "flow_dec.out.bias");
    RngStream noise(29, "roll");
    auto r = m.rollout(seq.frames, 3, 1, noise);
    CHECK(frames_equal(r.appearance[0], seq.frames[2], 1e-12));
    CHECK(frames_equal(r.predictions[0], seq.frames[2], 1e-12));
    CHECK(max_abs(r.poses[0]) == 0.0);
}

TEST_CASE("slamp3d loss breakdown sums and every parameter is reached") {
    EgoWorldConfig wc;
    wc.height = 16;
    wc.width = 16;
    wc.fx = wc.fy = 10.0;
    wc.t = 6;
    auto seq = gen_egoworld(wc, 30);
    CameraIntrinsics K = egoworld_intrinsics(wc);
    for (auto v : {Slamp3dVariant::DepthOnly, Slamp3dVariant::Combined,
                   Slamp3dVariant::Conditional}) {
        CAPTURE(to_string(v));
        Slamp3dModel m(tiny_slamp3d(v), 31, K);
        RngStream noise(32, "t.noise");
        auto b = m.sequence_loss(seq.frames, noise);
        CHECK(b.total.item() == doctest::Approx(total_from_terms(b)).epsilon(1e-10));
        auto grads = gradients(b.total, m.params());
        for (const auto& [name, g] : grads) {
            CAPTURE(name);
            CHECK(max_abs(g) > 0.0);
        }
        // zero-motion rule at the first step
        CHECK(frames_equal(m.last_trace().first_prior_motion_input,
                           m.last_trace().zero_motion_reference));
    }
}

TEST_CASE("posterior-everywhere rollout beats prior rollout after short training") {
    // memorize a single short sequence, then the posterior must reconstruct it
    // better than free-running prior samples
    auto cfg = tiny_svg();
    cfg.beta = 1e-4;
    SvgModel m(cfg, 40);
    auto frames = sprite_frames(8, 41);
    AdamConfig ac;
    ac.lr = 2e-3;
    AdamState opt(m.params(), ac);
    for (int step = 0; step < 150; ++step) {
        RngStream noise(42 + step, "train");
        auto b = m.sequence_loss(frames, noise);
        auto grads = gradients(b.total, m.params());
        opt.step(m.params(), grads);
    }
    auto err = [&](bool posterior) {
        double acc = 0;
        for (int s = 0; s < 5; ++s) {
            RngStream noise(100 + s, "eval");
            auto r = m.rollout(frames, 3, 5, noise, posterior);
            for (int64_t t = 0; t < 5; ++t) {
                Tensor d = r.predictions[t] - frames[3 + t];
                for (int64_t i = 0; i < d.size(); ++i)
                    acc += d.data()[i] * d.data()[i];
            }
        }
        return acc;
    };
    CHECK(err(true) < err(false));
}
