#include <doctest.h>

#include <cmath>
#include <vector>

#include "sparseagg/grad_check.hpp"
#include "sparseagg/rng.hpp"
#include "sparseagg/sampling.hpp"

using namespace sparseagg;

namespace {

using D = double;

// Tiny queue: identity-extrinsic cameras looking along +z of the ego frame.
FeatureQueue<D> tiny_queue(Rng& rng, int frames, int views, int scales, int channels,
                           bool random_maps = true) {
    FeatureQueue<D> q;
    q.frames = frames;
    q.views = views;
    q.scales = scales;
    q.channels = channels;
    geom::CameraModel cam;
    cam.intrinsics << 40, 0, 32, 0, 40, 24, 0, 0, 1;
    cam.width = 64;
    cam.height = 48;
    for (int s = 0; s < scales; ++s) cam.strides.push_back(4 << s);
    for (int t = 0; t < frames; ++t) {
        std::vector<geom::CameraModel> rig;
        for (int n = 0; n < views; ++n) {
            geom::CameraModel c = cam;
            c.extrinsic.translation = Eigen::Vector3d(0.3 * n, 0, 0);
            rig.push_back(c);
        }
        q.cameras.push_back(rig);
        geom::SE3 pose;
        if (t + 1 < frames) pose.translation = Eigen::Vector3d(0.2 * (frames - 1 - t), 0.05, 0);
        q.poses.push_back(pose);
        q.clock.timestamps.push_back(-0.5 * (frames - 1 - t));
    }
    for (int t = 0; t < frames; ++t) {
        for (int n = 0; n < views; ++n) {
            for (int s = 0; s < scales; ++s) {
                FeatureMap<D> m;
                m.stride = cam.strides[static_cast<std::size_t>(s)];
                m.frame = t;
                m.view = n;
                m.scale = s;
                const int h = cam.map_height(s), w = cam.map_width(s);
                m.values = random_maps ? random_uniform<D>(rng, {h, w, channels}, -1, 1)
                                       : Tensor<D>({h, w, channels});
                q.maps.push_back(m);
            }
        }
    }
    return q;
}

Tensor<D> anchors_in_view(Rng& rng, int m) {
    Tensor<D> a({m, geom::kAnchorDim});
    for (int i = 0; i < m; ++i) {
        D* p = a.v.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
        p[0] = rng.uniform(-1.5, 1.5);
        p[1] = rng.uniform(-1.0, 1.0);
        p[2] = rng.uniform(6.0, 10.0);  // well in front of the rig
        p[3] = std::log(rng.uniform(0.8, 1.5));
        p[4] = std::log(rng.uniform(0.8, 1.5));
        p[5] = std::log(rng.uniform(0.8, 1.5));
        const double yaw = rng.uniform(-1.0, 1.0);
        p[6] = std::sin(yaw);
        p[7] = std::cos(yaw);
        p[8] = rng.uniform(-0.5, 0.5);
        p[9] = rng.uniform(-0.5, 0.5);
        p[10] = rng.uniform(-0.2, 0.2);
    }
    return a;
}

}  // namespace

TEST_CASE("bilinear sample: exact at nodes, mean at midpoints, gradient to coords") {
    Rng rng(3);
    auto map = random_uniform<D>(rng, {5, 6, 3}, -2, 2);

    Tape<D> tape;
    auto at_node = bilinear_sample(tape, map, Tensor<D>({2}, {4.0, 2.0}));
    for (int c = 0; c < 3; ++c) CHECK(at_node.v[static_cast<std::size_t>(c)] == map.at({2, 4, c}));

    auto mid = bilinear_sample(tape, map, Tensor<D>({2}, {2.5, 1.5}));
    for (int c = 0; c < 3; ++c) {
        const double mean =
            0.25 * (map.at({1, 2, c}) + map.at({1, 3, c}) + map.at({2, 2, c}) + map.at({2, 3, c}));
        CHECK(mid.v[static_cast<std::size_t>(c)] == doctest::Approx(mean).epsilon(1e-14));
    }

    // everything outside the support is exactly zero
    auto outside = bilinear_sample(tape, map, Tensor<D>({2}, {-2.0, 7.5}));
    for (int c = 0; c < 3; ++c) CHECK(outside.v[static_cast<std::size_t>(c)] == 0.0);

    // coordinate + map-value gradient against central differences
    for (int trial = 0; trial < 10; ++trial) {
        auto uv = Tensor<D>({2}, {rng.uniform(0.1, 4.9), rng.uniform(0.1, 3.9)});
        // keep clear of integer coordinates where the interpolant kinks
        for (auto& x : uv.v) {
            if (std::abs(x - std::round(x)) < 0.05) x += 0.1;
        }
        const auto probe = random_uniform<D>(rng, {3}, -1, 1);
        ScalarFn<D> fn = [&probe](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
            auto s = bilinear_sample(tp, in[0], in[1]);
            return tp.reduce_sum(tp.mul(s, probe), {0});
        };
        CHECK(grad_check<D>(fn, {map, uv}, 1e-6).max_rel_err < 1e-6);
    }
}

TEST_CASE("sample_features: constant maps, invisible keypoints, hand oracle") {
    Rng rng(11);

    // constant maps: every valid entry equals the constant
    auto q = tiny_queue(rng, 2, 2, 2, 4, /*random_maps=*/false);
    for (auto& m : q.maps) {
        for (std::size_t i = 0; i < m.values.v.size(); ++i) {
            m.values.v[i] = 0.5 + static_cast<double>(i % static_cast<std::size_t>(4)) * 0;
        }
    }
    auto anchors = anchors_in_view(rng, 2);
    Tape<D> tape;
    auto phi = random_uniform<D>(rng, {2, 3}, -1, 1);
    auto current = keypoints_current(tape, anchors, phi, 1);
    auto pts4d = propagate_keypoints(tape, current, anchors, q.clock, q.poses);
    auto sampled = sample_features(tape, pts4d, q);
    const auto& f = sampled.features;
    REQUIRE(f.shape == std::vector<int>{2, 8, 2, 2, 2, 4});
    std::int64_t idx = 0;
    for (std::size_t group = 0; group < sampled.valid.size(); ++group) {
        for (int c = 0; c < 4; ++c, ++idx) {
            if (sampled.valid[group]) {
                CHECK(f.v[static_cast<std::size_t>(idx)] == doctest::Approx(0.5).epsilon(1e-12));
            } else {
                CHECK(f.v[static_cast<std::size_t>(idx)] == 0.0);
            }
        }
    }

    // a keypoint behind every camera is fully masked and zero
    Tensor<D> behind({1, geom::kAnchorDim});
    behind.v = {0, 0, -9, 0, 0, 0, 0, 1, 0, 0, 0};
    Tape<D> tape2;
    auto cur2 = keypoints_current(tape2, behind, Tensor<D>({1, 3}), 1);
    auto pts2 = propagate_keypoints(tape2, cur2, behind, q.clock, q.poses);
    auto s2 = sample_features(tape2, pts2, q);
    for (const double v : s2.features.v) CHECK(v == 0.0);
    for (const auto m : s2.view_mask) CHECK(m == 0);

    // hand-computed bilinear value through a real projection
    auto q1 = tiny_queue(rng, 1, 1, 1, 2, /*random_maps=*/true);
    const Eigen::Vector3d point(0.37, -0.21, 7.3);
    const auto proj = geom::project_point(point, q1.cameras[0][0], 0);
    REQUIRE(proj.valid);
    Tensor<D> pts({1, 1, 1, 3}, {point.x(), point.y(), point.z()});
    Tape<D> tape3;
    auto s3 = sample_features(tape3, pts, q1);
    const auto& map = q1.maps[0].values;
    const int u0 = static_cast<int>(std::floor(proj.u)), v0 = static_cast<int>(std::floor(proj.v));
    const double du = proj.u - u0, dv = proj.v - v0;
    for (int c = 0; c < 2; ++c) {
        const double expect = (1 - du) * (1 - dv) * map.at({v0, u0, c}) +
                              du * (1 - dv) * map.at({v0, u0 + 1, c}) +
                              (1 - du) * dv * map.at({v0 + 1, u0, c}) +
                              du * dv * map.at({v0 + 1, u0 + 1, c});
        CHECK(s3.features.v[static_cast<std::size_t>(c)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("sample_features: linearity in the maps") {
    Rng rng(13);
    auto q1 = tiny_queue(rng, 2, 1, 2, 3);
    auto q2 = tiny_queue(rng, 2, 1, 2, 3);
    auto anchors = anchors_in_view(rng, 2);
    const double alpha = 0.7, beta = -1.3;

    auto run = [&](const FeatureQueue<D>& q) {
        Tape<D> tape;
        auto cur = keypoints_current(tape, anchors, Tensor<D>({2, 3}), 1);
        auto pts = propagate_keypoints(tape, cur, anchors, q.clock, q.poses);
        return sample_features(tape, pts, q).features;
    };
    auto mix = q1;
    for (std::size_t i = 0; i < mix.maps.size(); ++i) {
        for (std::size_t j = 0; j < mix.maps[i].values.v.size(); ++j) {
            mix.maps[i].values.v[j] = alpha * q1.maps[i].values.v[j] + beta * q2.maps[i].values.v[j];
        }
    }
    const auto f1 = run(q1), f2 = run(q2), fm = run(mix);
    for (std::int64_t i = 0; i < fm.numel(); ++i) {
        CHECK(fm.v[static_cast<std::size_t>(i)] ==
              doctest::Approx(alpha * f1.v[static_cast<std::size_t>(i)] + beta * f2.v[static_cast<std::size_t>(i)])
                  .epsilon(1e-6));
    }
}

TEST_CASE("sample_features: continuity probe on random maps") {
    Rng rng(17);
    auto q = tiny_queue(rng, 1, 1, 1, 1);
    const auto& map = q.maps[0].values;
    const int h = map.shape[0], w = map.shape[1];
    for (int trial = 0; trial < 50; ++trial) {
        const double u = rng.uniform(1.0, w - 2.0), v = rng.uniform(1.0, h - 2.0);
        const double delta = rng.uniform(1e-4, 0.05);
        Tape<D> tape;
        auto base = bilinear_sample(tape, map, Tensor<D>({2}, {u, v}));
        auto moved = bilinear_sample(tape, map, Tensor<D>({2}, {u + delta, v}));
        // local range over the 2x3 neighborhood spanning both samples
        double lo = 1e30, hi = -1e30;
        const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
        for (int dv2 = 0; dv2 <= 1; ++dv2) {
            for (int du2 = 0; du2 <= 2; ++du2) {
                const double val = map.at({v0 + dv2, std::min(u0 + du2, w - 1), 0});
                lo = std::min(lo, val);
                hi = std::max(hi, val);
            }
        }
        CHECK(std::abs(moved.v[0] - base.v[0]) <= delta * (hi - lo) + 1e-12);
    }
}

TEST_CASE("gradients flow through the whole sampling chain") {
    Rng rng(19);
    auto q = tiny_queue(rng, 2, 1, 1, 2);
    auto anchors = anchors_in_view(rng, 1);
    auto phi = random_uniform<D>(rng, {1, 6}, -0.8, 0.8);

    // scalar sum of all sampled features vs finite differences, with respect
    // to anchors, the offset head output, and the current-frame map
    ScalarFn<D> fn = [&q](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
        FeatureQueue<D> local = q;
        local.maps[static_cast<std::size_t>(local.map_index(1, 0, 0))].values = in[2];
        auto cur = keypoints_current(tp, in[0], in[1], 2);
        auto pts = propagate_keypoints(tp, cur, in[0], local.clock, local.poses);
        auto sampled = sample_features(tp, pts, local);
        return tp.reduce_sum(sampled.features, {0, 1, 2, 3, 4, 5});
    };
    const auto current_map = q.maps[static_cast<std::size_t>(q.map_index(1, 0, 0))].values;
    const auto report = grad_check<D>(fn, {anchors, phi, current_map}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("queue validation catches inconsistent dimensions") {
    Rng rng(23);
    auto q = tiny_queue(rng, 2, 1, 1, 2);
    q.maps.pop_back();
    CHECK_THROWS_AS(q.validate(), ContractError);

    auto q2 = tiny_queue(rng, 2, 1, 1, 2);
    q2.poses.back().translation = Eigen::Vector3d(1, 0, 0);
    CHECK_THROWS_AS(q2.validate(), ContractError);
}
