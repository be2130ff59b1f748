#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "svp/gradcheck.hpp"
#include "svp/nn.hpp"
#include "svp/params.hpp"
#include "svp/rng.hpp"

using namespace svp;

namespace {
Tensor randn(Shape s, RngStream& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}
}  // namespace

TEST_CASE("linear identity and permutation") {
    Tensor x = Tensor::from_data({1, 2}, {1, 2});
    Tensor w_id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b0({2});
    Tensor y = linear(x, w_id, b0);
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);

    Tensor x2 = Tensor::from_data({1, 2}, {1, 0});
    Tensor w_perm = Tensor::from_data({2, 2}, {0, 1, 1, 0});
    Tensor b1 = Tensor::from_data({2}, {1, 1});
    Tensor y2 = linear(x2, w_perm, b1);
    CHECK(y2.data()[0] == 1.0);
    CHECK(y2.data()[1] == 2.0);
}

TEST_CASE("linear gradient matches finite differences") {
    RngStream rng(7, "t.linear");
    Tensor x = randn({2, 3}, rng), w = randn({4, 3}, rng), b = randn({4}, rng);
    auto f = [&] { return sum(linear(x, w, b)); };
    CHECK(fd_worst_rel_err(f, {w}) <= 1e-4);
}

TEST_CASE("conv2d identity kernel and all-ones summation") {
    RngStream rng(8, "t.conv");
    Tensor x = randn({1, 1, 3, 3}, rng);
    Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, k1, 1, 0);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor ones = Tensor({1, 1, 3, 3}, 1.0);
    Tensor k9 = Tensor({1, 1, 3, 3}, 1.0);
    Tensor s = conv2d(ones, k9, 1, 0);
    CHECK(s.size() == 1);
    CHECK(s.item() == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("conv2d rejects invalid geometry") {
    Tensor x({1, 1, 2, 2});
    Tensor k({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, k, 1, 0), ShapeError);
}

TEST_CASE("backward analytic examples") {
    // f(x) = sum(x^2): grad 2x
    Tensor x = Tensor::from_data({2}, {1.0, -2.0}).set_requires_grad(true);
    sum(square(x)).backward();
    CHECK(x.grad().data()[0] == doctest::Approx(2.0));
    CHECK(x.grad().data()[1] == doctest::Approx(-4.0));

    // f = sum(sigmoid(x)) at 0: grad 0.25
    Tensor z = Tensor({3}).set_requires_grad(true);
    sum(sigmoid(z)).backward();
    for (int i = 0; i < 3; ++i) CHECK(z.grad().data()[i] == doctest::Approx(0.25));
}

TEST_CASE("backward requires scalar loss and aborts on NaN") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
    CHECK_THROWS_AS((x + x).backward(), ShapeError);
    CHECK_THROWS_AS(log(x - 5.0), NumericError);  // log of negative: NaN forward
}

TEST_CASE("gradient accumulation: node used k times sums k contributions") {
    Tensor x = Tensor::from_data({3}, {0.5, -1.0, 2.0}).set_requires_grad(true);
    Tensor y = x * 2.0;
    Tensor loss = sum(y) + sum(y) + sum(y);
    loss.backward();
    for (int i = 0; i < 3; ++i) CHECK(x.grad().data()[i] == doctest::Approx(6.0));
}

TEST_CASE("parameters off the loss path get zero gradients") {
    ParamStore ps;
    RngStream rng(3, "t.off");
    Tensor& a = ps.add("a", randn({3}, rng));
    ps.add("b", randn({4}, rng));
    auto grads = gradients(sum(square(a)), ps);
    CHECK(grads.at("b").data()[0] == 0.0);
    CHECK(grads.at("a").data()[0] != 0.0);
}

TEST_CASE("lstm_cell zero params and saturation") {
    int I = 3, H = 4;
    Tensor x({1, I}), h({1, H}), c({1, H});
    Tensor wi({4 * H, I}), wh({4 * H, H}), b({4 * H});
    auto [h2, c2] = lstm_cell(x, h, c, wi, wh, b);
    for (int64_t i = 0; i < h2.size(); ++i) {
        CHECK(h2.data()[i] == 0.0);
        CHECK(c2.data()[i] == 0.0);
    }

    // forget gate saturated on, input gate saturated off: c' ~ c
    RngStream rng(5, "t.sat");
    Tensor cr = randn({1, H}, rng);
    Tensor bsat({4 * H});
    for (int i = 0; i < H; ++i) {
        bsat.data()[i] = -20.0;      // input
        bsat.data()[H + i] = 20.0;   // forget
    }
    auto [h3, c3] = lstm_cell(x, h, cr, wi, wh, bsat);
    for (int64_t i = 0; i < H; ++i)
        CHECK(c3.data()[i] == doctest::Approx(cr.data()[i]).epsilon(1e-7));
}

TEST_CASE("convgru zero params yields zero state") {
    Tensor x({2, 4, 4}), h({3, 4, 4});
    Tensor wi({9, 2, 3, 3}), wh({9, 3, 3, 3}), b({9});
    Tensor h2 = convgru_cell(x, h, wi, wh, b, 1);
    for (int64_t i = 0; i < h2.size(); ++i) CHECK(h2.data()[i] == 0.0);
}

TEST_CASE("convlstm with 1x1 kernels reduces to lstm_cell per pixel") {
    RngStream rng(9, "t.reduce");
    int C = 2, F = 3;
    Tensor wi4 = randn({4 * F, C, 1, 1}, rng), wh4 = randn({4 * F, F, 1, 1}, rng);
    Tensor b = randn({4 * F}, rng, 0.1);
    Tensor x = randn({C, 2, 2}, rng), h = randn({F, 2, 2}, rng), c = randn({F, 2, 2}, rng);
    auto [hc, cc] = convlstm_cell(x, h, c, wi4, wh4, b, 0);

    // same math through the linear cell at one pixel
    Tensor wi_lin = reshape(wi4, {4 * F, C});
    Tensor wh_lin = reshape(wh4, {4 * F, F});
    for (int64_t py = 0; py < 2; ++py)
        for (int64_t px = 0; px < 2; ++px) {
            Tensor xv({1, C}), hv({1, F}), cv({1, F});
            for (int i = 0; i < C; ++i) xv.data()[i] = x.data()[i * 4 + py * 2 + px];
            for (int i = 0; i < F; ++i) {
                hv.data()[i] = h.data()[i * 4 + py * 2 + px];
                cv.data()[i] = c.data()[i * 4 + py * 2 + px];
            }
            auto [hl, cl] = lstm_cell(xv, hv, cv, wi_lin, wh_lin, b);
            for (int i = 0; i < F; ++i) {
                CHECK(hc.data()[i * 4 + py * 2 + px] ==
                      doctest::Approx(hl.data()[i]).epsilon(1e-12));
                CHECK(cc.data()[i * 4 + py * 2 + px] ==
                      doctest::Approx(cl.data()[i]).epsilon(1e-12));
            }
        }
}

TEST_CASE("adam first step moves by ~lr*sign(g), zero grad is a no-op") {
    ParamStore ps;
    Tensor& p = ps.add("p", Tensor::from_data({2}, {1.0, -3.0}));
    AdamConfig cfg;
    cfg.lr = 0.01;
    AdamState st(ps, cfg);
    std::map<std::string, Tensor> grads;
    grads.emplace("p", Tensor::from_data({2}, {0.5, -0.2}));
    st.step(ps, grads);
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(-3.0 + 0.01).epsilon(1e-4));

    ParamStore ps2;
    Tensor& q = ps2.add("q", Tensor::from_data({1}, {2.0}));
    AdamState st2(ps2, cfg);
    std::map<std::string, Tensor> zg;
    zg.emplace("q", Tensor({1}));
    st2.step(ps2, zg);
    CHECK(q.data()[0] == 2.0);
}

TEST_CASE("adam two-step trace matches hand-computed moments") {
    // lr=0.1, b1=0.9, b2=0.999, eps=1e-8, w0=1, g=(0.3, 0.1)
    AdamConfig cfg;
    cfg.lr = 0.1;
    ParamStore ps;
    Tensor& p = ps.add("w", Tensor::from_data({1}, {1.0}));
    AdamState st(ps, cfg);

    double m = 0, v = 0, w = 1.0;
    double gs[2] = {0.3, 0.1};
    for (int t = 1; t <= 2; ++t) {
        std::map<std::string, Tensor> grads;
        grads.emplace("w", Tensor::from_data({1}, {gs[t - 1]}));
        st.step(ps, grads);
        m = 0.9 * m + 0.1 * gs[t - 1];
        v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
        double mh = m / (1 - std::pow(0.9, t));
        double vh = v / (1 - std::pow(0.999, t));
        w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.data()[0] == doctest::Approx(w).epsilon(1e-12));
    }
}

TEST_CASE("adam rejects NaN gradients") {
    ParamStore ps;
    ps.add("p", Tensor({1}));
    AdamState st(ps, {});
    std::map<std::string, Tensor> grads;
    Tensor g({1});
    g.data()[0] = std::nan("");
    grads.emplace("p", g);
    CHECK_THROWS_AS(st.step(ps, grads), NumericError);
}

TEST_CASE("paramstore flatten/unflatten round-trips bit-exactly") {
    RngStream rng(4, "t.flat");
    ParamStore ps;
    ps.add("b.x", randn({3, 2}, rng));
    ps.add("a.y", randn({5}, rng));
    ps.add("c", randn({2, 2, 2}, rng));
    auto flat = ps.flatten();
    auto before = flat;
    for (auto& v : flat) v += 1.0;
    ps.unflatten(flat);
    ps.unflatten(before);
    CHECK(ps.flatten() == before);
    CHECK_THROWS_AS(ps.add("a.y", Tensor({1})), ShapeError);
}

TEST_CASE("checkpoint round-trip is bit-identical, with adam state and kind") {
    RngStream rng(6, "t.ckpt");
    ParamStore ps;
    ps.add("enc.w", randn({4, 3}, rng));
    ps.add("dec.w", randn({2, 2}, rng));
    AdamConfig cfg;
    cfg.lr = 3e-4;
    AdamState st(ps, cfg);
    std::map<std::string, Tensor> grads;
    grads.emplace("enc.w", randn({4, 3}, rng));
    grads.emplace("dec.w", randn({2, 2}, rng));
    st.step(ps, grads);

    auto path = std::filesystem::temp_directory_path() / "svp_ckpt_test.bin";
    save_checkpoint(path.string(), ps, "svg", &st);
    Checkpoint ck = load_checkpoint(path.string());
    CHECK(ck.model_kind == "svg");
    CHECK(ck.adam_step == 1);
    CHECK(ck.adam_config->lr == 3e-4);

    auto flat_before = ps.flatten();
    for (auto& [k, v] : ps.entries())
        for (int64_t i = 0; i < v.size(); ++i) v.data()[i] = 0.0;
    load_into(ps, ck);
    CHECK(ps.flatten() == flat_before);

    AdamState st2 = adam_from_checkpoint(ck, ps);
    CHECK(st2.first_moments().at("enc.w").data()[0] ==
          st.first_moments().at("enc.w").data()[0]);
    std::filesystem::remove(path);
}

TEST_CASE("rng streams are deterministic and independent") {
    RngStream a(42, "x"), b(42, "x"), c(42, "y");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    RngStream a2(42, "x");
    for (int i = 0; i < 100; ++i) differs = differs || (a2.next_u64() != c.next_u64());
    CHECK(differs);

    // uniform in range, normal roughly standard
    RngStream n(1, "norm");
    double s = 0, s2 = 0;
    int N = 20000;
    for (int i = 0; i < N; ++i) {
        double v = n.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::abs(s / N) < 0.03);
    CHECK(std::abs(s2 / N - 1.0) < 0.05);
}

TEST_CASE("core op gradcheck registry passes at 1e-4") {
    for (auto& c : all_gradchecks()) {
        CAPTURE(c.name);
        CHECK(c.run() <= 1e-4);
    }
}

TEST_CASE("gradcheck detects a corrupted gradient (negative control)") {
    // an op with a deliberately wrong backward: y = 2x claiming dy/dx = 3
    auto broken_double = [](const Tensor& x) {
        std::vector<double> out(x.size());
        for (int64_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x.data()[i];
        auto backward = [](autodiff::Node& self) {
            auto* X = self.parents[0].get();
            if (!X->requires_grad) return;
            double* gx = X->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += 3.0 * self.grad[i];
        };
        return make_op(x.shape(), std::move(out), {x}, backward, "broken");
    };
    Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    auto f = [&] { return sum(broken_double(x)); };
    CHECK(fd_worst_rel_err(f, {x}) > 1e-4);
}

TEST_CASE("no-grad scope records nothing") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
    Tensor y;
    {
        autodiff::NoGrad ng;
        y = sum(square(x));
    }
    CHECK_FALSE(y.grad_tracked());
}
