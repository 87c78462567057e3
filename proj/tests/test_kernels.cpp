#include <doctest.h>

#include <cstring>
#include <vector>

#include "sparseagg/kernels.hpp"
#include "sparseagg/rng.hpp"

using namespace sparseagg;

namespace {

struct ThreadGuard {
    ~ThreadGuard() { kernels::set_thread_count(1); }
};

std::vector<float> randv(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace

TEST_CASE("matmul family matches the serial reference for any thread count") {
    ThreadGuard guard;
    Rng rng(5);
    const int shapes[][3] = {{5, 7, 3}, {16, 16, 16}, {1, 9, 4}, {8, 1, 6}};
    for (const auto& s : shapes) {
        const int m = s[0], k = s[1], n = s[2];
        const auto a = randv(rng, m * k);
        const auto b = randv(rng, k * n);
        const auto bt = randv(rng, n * k);
        const auto at = randv(rng, k * m);
        std::vector<float> want(static_cast<std::size_t>(m) * n), got(want.size());

        kernels::ref::matmul(a.data(), b.data(), want.data(), m, k, n);
        for (int threads : {1, 2, 4, 8}) {
            kernels::set_thread_count(threads);
            kernels::matmul(a.data(), b.data(), got.data(), m, k, n);
            CHECK(std::memcmp(want.data(), got.data(), want.size() * sizeof(float)) == 0);
        }

        kernels::ref::matmul_nt(a.data(), bt.data(), want.data(), m, k, n);
        for (int threads : {1, 3}) {
            kernels::set_thread_count(threads);
            kernels::matmul_nt(a.data(), bt.data(), got.data(), m, k, n);
            CHECK(std::memcmp(want.data(), got.data(), want.size() * sizeof(float)) == 0);
        }

        kernels::ref::matmul_tn(at.data(), b.data(), want.data(), k, m, n);
        for (int threads : {1, 5}) {
            kernels::set_thread_count(threads);
            kernels::matmul_tn(at.data(), b.data(), got.data(), k, m, n);
            CHECK(std::memcmp(want.data(), got.data(), want.size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("bilinear gather matches reference, including out-of-bounds points") {
    ThreadGuard guard;
    Rng rng(9);
    const int h = 6, w = 9, c = 5, p = 40;
    const auto map = randv(rng, h * w * c);
    std::vector<float> uv(2 * p);
    std::vector<unsigned char> valid(p, 1);
    for (int i = 0; i < p; ++i) {
        // spread points inside, at the border, and well outside
        uv[2 * i] = static_cast<float>(rng.uniform(-3.0, w + 2.0));
        uv[2 * i + 1] = static_cast<float>(rng.uniform(-3.0, h + 2.0));
        if (i % 7 == 0) valid[i] = 0;
    }
    std::vector<float> want(static_cast<std::size_t>(p) * c), got(want.size());
    kernels::ref::bilinear_gather(map.data(), h, w, c, uv.data(), valid.data(), p, want.data());
    for (int threads : {1, 4}) {
        kernels::set_thread_count(threads);
        kernels::bilinear_gather(map.data(), h, w, c, uv.data(), valid.data(), p, got.data());
        CHECK(std::memcmp(want.data(), got.data(), want.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("group weight sum matches reference") {
    ThreadGuard guard;
    Rng rng(13);
    const int rows = 6, frames = 3, ns = 4, c = 8, g = 2;
    const auto f = randv(rng, rows * frames * ns * c);
    const auto wgt = randv(rng, rows * ns * g);
    std::vector<float> want(static_cast<std::size_t>(rows) * frames * c), got(want.size());
    kernels::ref::group_weight_sum(f.data(), wgt.data(), want.data(), rows, frames, ns, c, g);
    for (int threads : {1, 2, 8}) {
        kernels::set_thread_count(threads);
        kernels::group_weight_sum(f.data(), wgt.data(), got.data(), rows, frames, ns, c, g);
        CHECK(std::memcmp(want.data(), got.data(), want.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("bilinear scatter/coord-grad are consistent with gather") {
    // d(sum(gather))/d(map) spread by scatter must reproduce gather linearity:
    // gather(map) == sum_cells map[cell] * scatter_weight[cell].
    Rng rng(21);
    const int h = 4, w = 5, c = 2;
    const auto map = randv(rng, h * w * c);
    const float uv[2] = {2.3f, 1.7f};
    const unsigned char ok = 1;
    std::vector<float> out(c);
    kernels::bilinear_gather(map.data(), h, w, c, uv, &ok, 1, out.data());

    std::vector<float> gmap(static_cast<std::size_t>(h) * w * c, 0.0f);
    const std::vector<float> gout(c, 1.0f);
    kernels::bilinear_scatter_map(uv, &ok, gout.data(), 1, h, w, c, gmap.data());
    // weights per cell sum to 1 for an interior point
    float wsum = 0.0f;
    for (int i = 0; i < h * w; ++i) wsum += gmap[static_cast<std::size_t>(i) * c];
    CHECK(wsum == doctest::Approx(1.0f));
    // and the weighted map reproduces the gathered value
    float dot = 0.0f;
    for (int i = 0; i < h * w; ++i) dot += gmap[static_cast<std::size_t>(i) * c] * map[static_cast<std::size_t>(i) * c];
    CHECK(dot == doctest::Approx(out[0]).epsilon(1e-6));

    // coordinate gradient vs. central differences
    std::vector<float> guv(2);
    kernels::bilinear_coord_grad(map.data(), h, w, c, uv, &ok, gout.data(), 1, guv.data());
    for (int axis = 0; axis < 2; ++axis) {
        const float eps = 1e-3f;
        float up[2] = {uv[0], uv[1]}, dn[2] = {uv[0], uv[1]};
        up[axis] += eps;
        dn[axis] -= eps;
        std::vector<float> oup(c), odn(c);
        kernels::bilinear_gather(map.data(), h, w, c, up, &ok, 1, oup.data());
        kernels::bilinear_gather(map.data(), h, w, c, dn, &ok, 1, odn.data());
        float fd = 0.0f;
        for (int j = 0; j < c; ++j) fd += (oup[j] - odn[j]) / (2 * eps);
        CHECK(guv[axis] == doctest::Approx(fd).epsilon(1e-3));
    }
}
