#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "svp/distributions.hpp"
#include "svp/gradcheck.hpp"

using namespace svp;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Tensor randn(Shape s, RngStream& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}

double log_prob_scalar(double x, double mu, double lv) {
    return -0.5 * ((x - mu) * (x - mu) * std::exp(-lv) + lv + kLog2Pi);
}

}  // namespace

TEST_CASE("reparam_sample unit variance and zero noise") {
    Tensor mu = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    Tensor lv({3});
    DiagGaussian g(mu, lv);
    Tensor eps = Tensor::from_data({3}, {0.1, 0.2, -0.3});
    Tensor s = reparam_sample(g, eps);
    for (int i = 0; i < 3; ++i)
        CHECK(s.data()[i] == doctest::Approx(mu.data()[i] + eps.data()[i]));
    Tensor s0 = reparam_sample(g, Tensor({3}));
    for (int i = 0; i < 3; ++i) CHECK(s0.data()[i] == mu.data()[i]);
}

TEST_CASE("reparam_sample empirical moments match within 3 standard errors") {
    RngStream rng(101, "dist.mc");
    double mu = 0.7, lv = -0.4;
    DiagGaussian g(Tensor::scalar(mu), Tensor::scalar(lv));
    const int N = 100000;
    double s1 = 0, s2 = 0;
    for (int i = 0; i < N; ++i) {
        double v = reparam_sample(g, rng).item();
        s1 += v;
        s2 += v * v;
    }
    double var = std::exp(lv);
    double mean_hat = s1 / N;
    double var_hat = s2 / N - mean_hat * mean_hat;
    double se_mean = std::sqrt(var / N);
    double se_var = var * std::sqrt(2.0 / N);
    CHECK(std::abs(mean_hat - mu) <= 3 * se_mean);
    CHECK(std::abs(var_hat - var) <= 3 * se_var);
}

TEST_CASE("reparam_sample mean path is the identity") {
    Tensor mu = Tensor::from_data({4}, {0.3, 1.0, -2.0, 0.0}).set_requires_grad(true);
    Tensor lv = Tensor::from_data({4}, {0.5, -1.0, 0.2, 0.0});
    RngStream rng(13, "dist.idpath");
    Tensor noise = randn({4}, rng);
    sum(reparam_sample(DiagGaussian(mu, lv), noise)).backward();
    for (int i = 0; i < 4; ++i) CHECK(mu.grad().data()[i] == 1.0);
}

TEST_CASE("kl_diag closed forms") {
    RngStream rng(102, "dist.kl");
    Tensor m = randn({5}, rng), l = randn({5}, rng, 0.5);
    DiagGaussian q(m, l);
    CHECK(kl_diag(q, q).item() == doctest::Approx(0.0).epsilon(1e-14));

    DiagGaussian q2(Tensor::scalar(2.0), Tensor::scalar(0.0));
    DiagGaussian p2(Tensor::scalar(0.0), Tensor::scalar(0.0));
    CHECK(kl_diag(q2, p2).item() == doctest::Approx(2.0));
}

TEST_CASE("kl_diag matches Monte-Carlo estimate within 3 standard errors") {
    RngStream rng(103, "dist.klmc");
    for (int pair = 0; pair < 3; ++pair) {
        double mq = rng.uniform(-2, 2), lq = rng.uniform(-1, 1);
        double mp = rng.uniform(-2, 2), lp = rng.uniform(-1, 1);
        DiagGaussian q(Tensor::scalar(mq), Tensor::scalar(lq));
        DiagGaussian p(Tensor::scalar(mp), Tensor::scalar(lp));
        double analytic = kl_diag(q, p).item();

        const int N = 100000;
        double s1 = 0, s2 = 0;
        for (int i = 0; i < N; ++i) {
            double x = reparam_sample(q, rng).item();
            double d = log_prob_scalar(x, mq, lq) - log_prob_scalar(x, mp, lp);
            s1 += d;
            s2 += d * d;
        }
        double mean = s1 / N;
        double se = std::sqrt((s2 / N - mean * mean) / N);
        CHECK(std::abs(analytic - mean) <= 3 * se);
    }
}

TEST_CASE("kl_standard closed forms and consistency") {
    DiagGaussian std1(Tensor::scalar(0.0), Tensor::scalar(0.0));
    CHECK(kl_standard(std1).item() == doctest::Approx(0.0));

    DiagGaussian q(Tensor::scalar(0.0), Tensor::scalar(1.0));  // var = e
    CHECK(kl_standard(q).item() == doctest::Approx(0.5 * (std::exp(1.0) - 2.0)));

    RngStream rng(104, "dist.std");
    Tensor m = randn({6}, rng), l = randn({6}, rng, 0.5);
    DiagGaussian q2(m, l);
    DiagGaussian p = DiagGaussian::standard({6});
    CHECK(kl_standard(q2).item() == doctest::Approx(kl_diag(q2, p).item()).epsilon(1e-12));
}

TEST_CASE("kl invariants: non-negative, zero iff equal, additive over dims") {
    RngStream rng(105, "dist.inv");
    for (int i = 0; i < 50; ++i) {
        DiagGaussian q(randn({4}, rng), randn({4}, rng, 0.7));
        DiagGaussian p(randn({4}, rng), randn({4}, rng, 0.7));
        double v = kl_diag(q, p).item();
        CHECK(v >= 0.0);

        // additivity: concatenated dims equal sum of per-dim KLs
        double parts = 0;
        for (int d = 0; d < 4; ++d) {
            DiagGaussian qd(slice(q.mean, 0, d, 1), slice(q.log_var, 0, d, 1));
            DiagGaussian pd(slice(p.mean, 0, d, 1), slice(p.log_var, 0, d, 1));
            parts += kl_diag(qd, pd).item();
        }
        CHECK(v == doctest::Approx(parts).epsilon(1e-10));
    }
    // zero iff equal (within 1e-12)
    RngStream rng2(106, "dist.eq");
    Tensor m = randn({3}, rng2), l = randn({3}, rng2, 0.5);
    CHECK(kl_diag(DiagGaussian(m, l), DiagGaussian(m, l)).item() <= 1e-12);
    Tensor m2 = m + 0.01;
    CHECK(kl_diag(DiagGaussian(m2, l), DiagGaussian(m, l)).item() > 1e-12);
}

TEST_CASE("gauss_log_prob closed forms") {
    Tensor mu({4});
    Tensor lv({4});
    DiagGaussian g(mu, lv);
    CHECK(gauss_log_prob(g, Tensor({4})).item() ==
          doctest::Approx(-2.0 * kLog2Pi).epsilon(1e-12));

    DiagGaussian s(Tensor::scalar(0.0), Tensor::scalar(0.0));
    CHECK(gauss_log_prob(s, Tensor::scalar(1.0)).item() ==
          doctest::Approx(-0.5 - 0.5 * kLog2Pi).epsilon(1e-12));
}

TEST_CASE("exp(gauss_log_prob) integrates to one on a fine grid") {
    DiagGaussian g(Tensor::scalar(0.4), Tensor::scalar(-0.3));
    double dx = 0.001, acc = 0.0;
    for (double x = -8.0; x <= 8.0; x += dx)
        acc += std::exp(gauss_log_prob(g, Tensor::scalar(x)).item()) * dx;
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("sigma_vae_nll values and floor") {
    // MSE exactly 1 over D elements -> loss = D/2
    Tensor pred({2, 3});
    Tensor target({2, 3}, 1.0);
    auto r = sigma_vae_nll(pred, target);
    CHECK(r.loss.item() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.calibrated_var == doctest::Approx(1.0));

    // pred == target engages the variance floor
    auto r2 = sigma_vae_nll(target, target);
    CHECK(r2.calibrated_var == doctest::Approx(1e-6));
    CHECK(r2.loss.item() == doctest::Approx(0.5 * 6 * std::log(1e-6)).epsilon(1e-10));
}

TEST_CASE("sigma_vae_nll gradient vs finite differences") {
    RngStream rng(107, "dist.svfd");
    Tensor pred = randn({3, 3}, rng), target = randn({3, 3}, rng);
    auto f = [&] { return sigma_vae_nll(pred, target).loss; };
    CHECK(fd_worst_rel_err(f, {pred}) <= 1e-4);
}

TEST_CASE("DiagGaussian validates shapes") {
    CHECK_THROWS_AS(DiagGaussian(Tensor({2}), Tensor({3})), ShapeError);
    CHECK_THROWS_AS(kl_diag(DiagGaussian(Tensor({2}), Tensor({2})),
                            DiagGaussian(Tensor({3}), Tensor({3}))),
                    ShapeError);
}
