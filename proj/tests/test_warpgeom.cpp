#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "svp/gradcheck.hpp"
#include "svp/imageio.hpp"
#include "svp/warp.hpp"

using namespace svp;

namespace {
Tensor randn(Shape s, RngStream& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}
}  // namespace

TEST_CASE("bilinear_sample is exact at grid points") {
    RngStream rng(201, "w.grid");
    Tensor img = randn({3, 5, 7}, rng);
    Tensor out = bilinear_sample(img, identity_grid(5, 7));
    for (int64_t i = 0; i < img.size(); ++i) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("bilinear_sample interpolates midway") {
    Tensor img = Tensor::from_data({1, 1, 2}, {0.0, 1.0});
    Tensor coords = Tensor::from_data({2, 1, 1}, {0.5, 0.0});
    CHECK(bilinear_sample(img, coords).item() == doctest::Approx(0.5));
}

TEST_CASE("bilinear_sample clamps out-of-bounds and rejects NaN") {
    Tensor img = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor far = Tensor::from_data({2, 1, 1}, {100.0, 100.0});
    CHECK(bilinear_sample(img, far).item() == doctest::Approx(4.0));
    Tensor bad = Tensor::from_data({2, 1, 1}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(bilinear_sample(img, bad), NumericError);
}

TEST_CASE("bilinear_sample coordinate gradient vs finite differences") {
    RngStream rng(202, "w.fd");
    Tensor img = randn({2, 6, 6}, rng);
    Tensor coords({2, 4, 4});
    for (int64_t i = 0; i < coords.size(); ++i)
        coords.data()[i] = rng.uniform(0.6, 4.3) + 0.137;
    auto f = [&] { return sum(square(bilinear_sample(img, coords))); };
    CHECK(fd_worst_rel_err(f, {img, coords}) <= 1e-4);
}

TEST_CASE("warp_by_flow zero flow is the exact identity") {
    RngStream rng(203, "w.zero");
    Tensor src = randn({2, 8, 8}, rng);
    Tensor out = warp_by_flow(src, Tensor({2, 8, 8}));
    for (int64_t i = 0; i < src.size(); ++i) CHECK(out.data()[i] == src.data()[i]);
}

TEST_CASE("constant flow shifts a ramp with clamped borders") {
    int64_t H = 4, W = 6;
    Tensor ramp({1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) ramp.data()[y * W + x] = double(x);
    Tensor flow({2, H, W});
    for (int64_t i = 0; i < H * W; ++i) flow.data()[i] = -1.0;  // dx
    Tensor out = warp_by_flow(ramp, flow);
    // index-shift oracle with border clamp
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double expect = double(std::max<int64_t>(x - 1, 0));
            CHECK(out.data()[y * W + x] == doctest::Approx(expect).epsilon(1e-14));
        }
}

TEST_CASE("warp against an integer-translated copy is exact on the interior") {
    RngStream rng(204, "w.shift");
    int64_t H = 8, W = 8;
    Tensor src = randn({1, H, W}, rng);
    // target(x) = src(x-2, y-1)
    Tensor target({1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            int64_t sy = std::clamp<int64_t>(y - 1, 0, H - 1);
            int64_t sx = std::clamp<int64_t>(x - 2, 0, W - 1);
            target.data()[y * W + x] = src.data()[sy * W + sx];
        }
    Tensor flow({2, H, W});
    for (int64_t i = 0; i < H * W; ++i) {
        flow.data()[i] = -2.0;
        flow.data()[H * W + i] = -1.0;
    }
    Tensor warped = warp_by_flow(src, flow);
    double mse = 0;
    int64_t count = 0;
    for (int64_t y = 1; y < H; ++y)
        for (int64_t x = 2; x < W; ++x) {
            double d = warped.data()[y * W + x] - target.data()[y * W + x];
            mse += d * d;
            ++count;
        }
    CHECK(mse / count <= 1e-24);
}

TEST_CASE("se3 zero pose is the identity matrix") {
    PoseSE3 p;
    auto m = p.to_matrix();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(m[i * 4 + j] == (i == j ? 1.0 : 0.0));
}

TEST_CASE("se3 quarter turn about z") {
    PoseSE3 p;
    p.rotation = {0, 0, M_PI / 2};
    auto m = p.to_matrix();
    CHECK(m[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(-1.0));
    CHECK(m[4] == doctest::Approx(1.0));
    CHECK(m[5] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m[10] == doctest::Approx(1.0));
}

TEST_CASE("se3 rotation determinant and matrix round-trip") {
    RngStream rng(205, "w.se3");
    for (int trial = 0; trial < 30; ++trial) {
        PoseSE3 p;
        for (int i = 0; i < 3; ++i) {
            p.rotation[i] = rng.uniform(-0.9, 0.9);
            p.translation[i] = rng.uniform(-2, 2);
        }
        auto m = p.to_matrix();
        double det = m[0] * (m[5] * m[10] - m[6] * m[9]) -
                     m[1] * (m[4] * m[10] - m[6] * m[8]) +
                     m[2] * (m[4] * m[9] - m[5] * m[8]);
        CHECK(std::abs(det - 1.0) <= 1e-9);
        PoseSE3 q = PoseSE3::from_matrix(m);
        for (int i = 0; i < 3; ++i) {
            CHECK(q.rotation[i] == doctest::Approx(p.rotation[i]).epsilon(1e-9));
            CHECK(q.translation[i] == doctest::Approx(p.translation[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("matrix of composed poses equals product of matrices") {
    RngStream rng(206, "w.comp");
    for (int trial = 0; trial < 10; ++trial) {
        PoseSE3 a, b;
        for (int i = 0; i < 3; ++i) {
            a.rotation[i] = rng.uniform(-0.5, 0.5);
            a.translation[i] = rng.uniform(-1, 1);
            b.rotation[i] = rng.uniform(-0.5, 0.5);
            b.translation[i] = rng.uniform(-1, 1);
        }
        auto ma = a.to_matrix(), mb = b.to_matrix();
        auto mc = a.compose(b).to_matrix();
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += ma[i * 4 + k] * mb[k * 4 + j];
                CHECK(mc[i * 4 + j] == doctest::Approx(acc).epsilon(1e-9));
            }
    }
}

TEST_CASE("se3_transform agrees with the plain rodrigues path") {
    RngStream rng(207, "w.se3t");
    PoseSE3 p;
    for (int i = 0; i < 3; ++i) {
        p.rotation[i] = rng.uniform(-1, 1);
        p.translation[i] = rng.uniform(-2, 2);
    }
    Tensor T = se3_transform(p.to_tensor());
    auto m = p.to_matrix();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            CHECK(T.data()[r * 4 + c] == doctest::Approx(m[r * 4 + c]).epsilon(1e-12));
}

TEST_CASE("warp_by_depth_pose identity pose is exact for any positive depth") {
    RngStream rng(208, "w.dpid");
    int64_t H = 6, W = 8;
    Tensor prev = randn({2, H, W}, rng);
    Tensor depth({1, H, W});
    for (int64_t i = 0; i < H * W; ++i) depth.data()[i] = 1.0 + rng.uniform(0.0, 20.0);
    CameraIntrinsics K{7.0, 7.0, (W - 1) / 2.0, (H - 1) / 2.0};
    auto w = warp_by_depth_pose(prev, depth, Tensor({6}), K);
    for (int64_t i = 0; i < prev.size(); ++i)
        CHECK(std::abs(w.prediction.data()[i] - prev.data()[i]) <= 1e-12);
    for (int64_t i = 0; i < 2 * H * W; ++i)
        CHECK(std::abs(w.rigid_flow.data()[i]) <= 1e-10);
}

TEST_CASE("pure x-translation over a fronto-parallel plane gives uniform flow fx*t/d") {
    int64_t H = 5, W = 5;
    double d = 4.0, t = 0.8;
    CameraIntrinsics K{6.0, 6.0, 2.0, 2.0};
    RngStream rng(209, "w.plane");
    Tensor prev = randn({1, H, W}, rng);
    Tensor depth({1, H, W}, d);
    Tensor pose({6});
    pose.data()[3] = t;  // x translation, target camera -> source camera
    auto w = warp_by_depth_pose(prev, depth, pose, K);
    double expect = K.fx * t / d;
    for (int64_t i = 0; i < H * W; ++i) {
        CHECK(w.rigid_flow.data()[i] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(w.rigid_flow.data()[H * W + i] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("warp_by_depth_pose flags non-positive projected depth") {
    int64_t H = 3, W = 3;
    Tensor prev({1, H, W}, 0.5);
    Tensor depth({1, H, W}, 2.0);
    Tensor pose({6});
    pose.data()[5] = -5.0;  // moves all points behind the source camera
    CameraIntrinsics K{3.0, 3.0, 1.0, 1.0};
    auto w = warp_by_depth_pose(prev, depth, pose, K);
    for (int64_t i = 0; i < H * W; ++i) CHECK(w.valid.data()[i] == 0.0);

    Tensor badd({1, H, W}, -1.0);
    CHECK_THROWS_AS(warp_by_depth_pose(prev, badd, pose, K), ShapeError);
}

TEST_CASE("compose_residual zero flow is the identity; gradient reaches both inputs") {
    RngStream rng(210, "w.res");
    Tensor sp = randn({1, 5, 5}, rng);
    Tensor out = compose_residual(sp, Tensor({2, 5, 5}));
    for (int64_t i = 0; i < sp.size(); ++i) CHECK(out.data()[i] == sp.data()[i]);

    Tensor sp2 = randn({1, 5, 5}, rng).set_requires_grad(true);
    Tensor rf = randn({2, 5, 5}, rng, 0.3).set_requires_grad(true);
    sum(square(compose_residual(sp2, rf))).backward();
    double gsp = 0, grf = 0;
    for (int64_t i = 0; i < sp2.size(); ++i) gsp += std::abs(sp2.grad().data()[i]);
    for (int64_t i = 0; i < rf.size(); ++i) grf += std::abs(rf.grad().data()[i]);
    CHECK(gsp > 0);
    CHECK(grf > 0);
}

TEST_CASE("blend saturation, midpoint, and envelope") {
    RngStream rng(211, "w.blend");
    Tensor a = randn({2, 4, 4}, rng), b = randn({2, 4, 4}, rng);
    Tensor ones({1, 4, 4}, 1.0), zeros({1, 4, 4}), half({1, 4, 4}, 0.5);
    Tensor ba = blend(a, b, ones);
    Tensor bb = blend(a, b, zeros);
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(ba.data()[i] == a.data()[i]);
        CHECK(bb.data()[i] == b.data()[i]);
    }
    Tensor a0({1, 2, 2}, 0.0), b2({1, 2, 2}, 2.0);
    Tensor mid = blend(a0, b2, Tensor({1, 2, 2}, 0.5));
    for (int64_t i = 0; i < 4; ++i) CHECK(mid.data()[i] == doctest::Approx(1.0));

    Tensor m({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) m.data()[i] = (i % 7) / 7.0;
    Tensor out = blend(a, b, m);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < 16; ++i) {
            double lo = std::min(a.data()[c * 16 + i], b.data()[c * 16 + i]);
            double hi = std::max(a.data()[c * 16 + i], b.data()[c * 16 + i]);
            CHECK(out.data()[c * 16 + i] >= lo - 1e-15);
            CHECK(out.data()[c * 16 + i] <= hi + 1e-15);
        }

    Tensor badmask({1, 4, 4}, 1.5);
    CHECK_THROWS_AS(blend(a, b, badmask), ShapeError);
}

TEST_CASE("tensor record round-trips through a stream") {
    RngStream rng(212, "w.io");
    Tensor t = randn({3, 4, 5}, rng);
    std::stringstream ss;
    write_tensor_record(ss, t);
    write_tensor_record(ss, t * 2.0);
    Tensor r1 = read_tensor_record(ss);
    Tensor r2 = read_tensor_record(ss);
    CHECK(r1.shape() == t.shape());
    for (int64_t i = 0; i < t.size(); ++i) {
        CHECK(r1.data()[i] == t.data()[i]);
        CHECK(r2.data()[i] == 2.0 * t.data()[i]);
    }
}

TEST_CASE("pgm and instance ppm exports are well-formed") {
    auto dir = std::filesystem::temp_directory_path();
    Tensor plane({4, 6});
    for (int64_t i = 0; i < plane.size(); ++i) plane.data()[i] = i / 23.0;
    auto pgm = dir / "svp_test.pgm";
    write_pgm(pgm.string(), plane);
    CHECK(std::filesystem::file_size(pgm) == 11 + 24);  // "P5\n6 4\n255\n" + pixels

    Tensor ids({3, 3});
    ids.data()[4] = 2.0;
    auto ppm = dir / "svp_test.ppm";
    write_instance_ppm(ppm.string(), ids);
    CHECK(std::filesystem::file_size(ppm) > 9 * 3);
    std::filesystem::remove(pgm);
    std::filesystem::remove(ppm);
}
