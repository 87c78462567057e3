#include <doctest.h>

#include <cmath>
#include <vector>

#include "sparseagg/fusion.hpp"
#include "sparseagg/grad_check.hpp"
#include "sparseagg/rng.hpp"
#include "sparseagg/sampling.hpp"

using namespace sparseagg;

namespace {
using D = double;
}

TEST_CASE("group weights: uniform at zero logits, one-hot saturation, softmax oracle") {
    Tape<D> tape;
    const int m = 2, k = 3, ns = 4, g = 2, c = 8;
    // zero weights and bias -> uniform 1/(N*S)
    Tensor<D> w({c, k * ns * g}), b({k * ns * g});
    auto feat = Tensor<D>::full({m, c}, 0.3);
    auto uniform = predict_group_weights(tape, feat, w, b, k, ns, g);
    REQUIRE(uniform.shape == std::vector<int>{m, k, ns, g});
    for (const double v : uniform.v) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    // saturated logits select a single (n,s)
    Tensor<D> bias_sat({k * ns * g});
    for (int kk = 0; kk < k; ++kk)
        for (int gg = 0; gg < g; ++gg) bias_sat.v[static_cast<std::size_t>((kk * ns + 1) * g + gg)] = 200.0;
    auto onehot = predict_group_weights(tape, feat, w, bias_sat, k, ns, g);
    for (int kk = 0; kk < k; ++kk) {
        for (int s = 0; s < ns; ++s) {
            for (int gg = 0; gg < g; ++gg) {
                CHECK(onehot.at({0, kk, s, gg}) == doctest::Approx(s == 1 ? 1.0 : 0.0).epsilon(1e-9));
            }
        }
    }

    // random weights match a direct softmax oracle and normalize per (k, g)
    Rng rng(3);
    auto wr = random_uniform<D>(rng, {c, k * ns * g}, -0.7, 0.7);
    auto br = random_uniform<D>(rng, {k * ns * g}, -0.5, 0.5);
    auto fr = random_uniform<D>(rng, {m, c}, -1, 1);
    auto got = predict_group_weights(tape, fr, wr, br, k, ns, g);
    Tape<D> scratch;
    auto logits = scratch.linear(fr, wr, br);
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            for (int gg = 0; gg < g; ++gg) {
                long double denom = 0;
                for (int s = 0; s < ns; ++s) {
                    denom += expl(static_cast<long double>(logits.at({i, (kk * ns + s) * g + gg})));
                }
                double total = 0;
                for (int s = 0; s < ns; ++s) {
                    const double want = static_cast<double>(
                        expl(static_cast<long double>(logits.at({i, (kk * ns + s) * g + gg}))) / denom);
                    CHECK(got.at({i, kk, s, gg}) == doctest::Approx(want).epsilon(1e-9));
                    CHECK(got.at({i, kk, s, gg}) >= 0.0);
                    total += got.at({i, kk, s, gg});
                }
                CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }

    // channels not divisible by groups is a configuration error
    CHECK_THROWS_AS(predict_group_weights(tape, Tensor<D>({2, 6}), Tensor<D>({6, k * ns * 4}),
                                          Tensor<D>({k * ns * 4}), k, ns, 4),
                    ConfigError);
}

TEST_CASE("fuse_view_scale: selection, mean, hand computation, convexity") {
    Rng rng(5);
    const int m = 1, k = 2, t = 2, n = 2, s = 2, c = 4, g = 2;
    auto f = random_uniform<D>(rng, {m, k, t, n, s, c}, -2, 2);

    Tape<D> tape;
    // one-hot at (n0, s0) = (1, 0) selects that slice for every group
    Tensor<D> onehot({m, k, n * s, g});
    for (int kk = 0; kk < k; ++kk)
        for (int gg = 0; gg < g; ++gg) onehot.at_ref({0, kk, 2, gg}) = 1.0;
    auto sel = fuse_view_scale(tape, f, onehot);
    REQUIRE(sel.shape == std::vector<int>{m, k, t, c});
    for (int kk = 0; kk < k; ++kk)
        for (int tt = 0; tt < t; ++tt)
            for (int ch = 0; ch < c; ++ch) {
                CHECK(sel.at({0, kk, tt, ch}) == f.at({0, kk, tt, 1, 0, ch}));
            }

    // uniform weights average over views and scales
    auto mean = fuse_view_scale(tape, f, Tensor<D>::full({m, k, n * s, g}, 0.25));
    for (int kk = 0; kk < k; ++kk)
        for (int tt = 0; tt < t; ++tt)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int nn = 0; nn < n; ++nn)
                    for (int ss = 0; ss < s; ++ss) acc += f.at({0, kk, tt, nn, ss, ch});
                CHECK(mean.at({0, kk, tt, ch}) == doctest::Approx(acc / 4).epsilon(1e-12));
            }

    // distinct per-group weights on a 2-channel input match the formula
    auto f2 = random_uniform<D>(rng, {1, 1, 1, 2, 1, 2}, -1, 1);
    Tensor<D> w2({1, 1, 2, 2}, {0.3, 0.9, 0.7, 0.1});
    auto out2 = fuse_view_scale(tape, f2, w2);
    CHECK(out2.at({0, 0, 0, 0}) ==
          doctest::Approx(0.3 * f2.at({0, 0, 0, 0, 0, 0}) + 0.7 * f2.at({0, 0, 0, 1, 0, 0})));
    CHECK(out2.at({0, 0, 0, 1}) ==
          doctest::Approx(0.9 * f2.at({0, 0, 0, 0, 0, 1}) + 0.1 * f2.at({0, 0, 0, 1, 0, 1})));

    // convexity: with weights on the simplex the output stays in the input range
    Tensor<D> logits = random_uniform<D>(rng, {m, k, n * s, g}, -2, 2);
    auto wsm = tape.softmax(logits, 2);
    auto mix = fuse_view_scale(tape, f, wsm);
    for (int kk = 0; kk < k; ++kk)
        for (int tt = 0; tt < t; ++tt)
            for (int ch = 0; ch < c; ++ch) {
                double lo = 1e30, hi = -1e30;
                for (int nn = 0; nn < n; ++nn)
                    for (int ss = 0; ss < s; ++ss) {
                        lo = std::min(lo, f.at({0, kk, tt, nn, ss, ch}));
                        hi = std::max(hi, f.at({0, kk, tt, nn, ss, ch}));
                    }
                CHECK(mix.at({0, kk, tt, ch}) >= lo - 1e-12);
                CHECK(mix.at({0, kk, tt, ch}) <= hi + 1e-12);
            }

    // gradient through both inputs
    auto probe = random_uniform<D>(rng, {m, k, t, c}, -1, 1);
    ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
        auto o = fuse_view_scale(tp, in[0], in[1]);
        return tp.reduce_sum(tp.mul(o, probe), {0, 1, 2, 3});
    };
    CHECK(grad_check<D>(fn, {f, Tensor<D>(onehot.shape, onehot.v)}, 1e-5).max_rel_err < 1e-5);
}

TEST_CASE("fuse_temporal: base case, single step, constructed identity") {
    Rng rng(7);
    const int m = 2, k = 3, c = 4;

    // T = 1 passes through bit-exactly, fusion weights never consulted
    auto f1 = random_uniform<D>(rng, {m, k, 1, c}, -1, 1);
    Tape<D> tape;
    auto out1 = fuse_temporal(tape, f1, Tensor<D>({1}), Tensor<D>({1}));
    REQUIRE(out1.shape == std::vector<int>{m, k, c});
    for (std::int64_t i = 0; i < out1.numel(); ++i) CHECK(out1.v[static_cast<std::size_t>(i)] == f1.v[static_cast<std::size_t>(i)]);

    // T = 2 equals one application of the fusion layer on [f'_t0, f'_ts]
    auto f2 = random_uniform<D>(rng, {m, k, 2, c}, -1, 1);
    auto w = random_uniform<D>(rng, {2 * c, c}, -0.7, 0.7);
    auto b = random_uniform<D>(rng, {c}, -0.3, 0.3);
    auto out2 = fuse_temporal(tape, f2, w, b);
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = b.v[static_cast<std::size_t>(ch)];
                for (int j = 0; j < c; ++j) {
                    acc += f2.at({i, kk, 1, j}) * w.at({j, ch});        // current frame first
                    acc += f2.at({i, kk, 0, j}) * w.at({c + j, ch});    // history second
                }
                CHECK(out2.at({i, kk, ch}) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }

    // T = 3 with a projection onto the first C inputs reduces to f'_t0
    Tensor<D> proj({2 * c, c});
    for (int j = 0; j < c; ++j) proj.at_ref({j, j}) = 1.0;
    auto f3 = random_uniform<D>(rng, {m, k, 3, c}, -1, 1);
    auto out3 = fuse_temporal(tape, f3, proj, Tensor<D>({c}));
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk)
            for (int ch = 0; ch < c; ++ch) CHECK(out3.at({i, kk, ch}) == f3.at({i, kk, 2, ch}));

    // width mismatch is rejected
    CHECK_THROWS_AS(fuse_temporal(tape, f2, Tensor<D>({c, c}), Tensor<D>({c})), ContractError);

    // detached history frames receive exactly-zero gradients
    Tape<D> tg;
    auto fin = tg.input(f2);
    auto sum = tg.reduce_sum(fuse_temporal(tg, fin, w, b, {1}), {0, 1, 2});
    tg.backward(sum);
    const auto gf = tg.gradient(fin);
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk)
            for (int ch = 0; ch < c; ++ch) CHECK(gf.at({i, kk, 0, ch}) == 0.0);
}

TEST_CASE("fuse_keypoints: identity, zeros, three-term sum") {
    Rng rng(9);
    Tape<D> tape;
    auto one = random_uniform<D>(rng, {2, 1, 3}, -1, 1);
    auto out = fuse_keypoints(tape, one);
    for (int i = 0; i < 2; ++i)
        for (int ch = 0; ch < 3; ++ch) CHECK(out.at({i, ch}) == one.at({i, 0, ch}));

    auto zero = fuse_keypoints(tape, Tensor<D>({2, 4, 3}));
    for (const double v : zero.v) CHECK(v == 0.0);

    auto three = random_uniform<D>(rng, {1, 3, 2}, -1, 1);
    auto sum3 = fuse_keypoints(tape, three);
    for (int ch = 0; ch < 2; ++ch) {
        CHECK(sum3.at({0, ch}) ==
              doctest::Approx(three.at({0, 0, ch}) + three.at({0, 1, ch}) + three.at({0, 2, ch}))
                  .epsilon(1e-12));
    }
}

TEST_CASE("sample_confidence: spec examples and monotonicity") {
    const int d = 8;
    DepthDistribution<D> dist;
    dist.depth_min = 1.0;
    dist.depth_max = 15.0;  // centers at 1, 3, 5, ..., 15

    auto anchors_at = [](double x, double y) {
        Tensor<D> a({1, geom::kAnchorDim});
        a.v[0] = x;
        a.v[1] = y;
        a.v[7] = 1.0;
        return a;
    };

    // one-hot on the bin whose center equals r gives confidence 1
    Tape<D> tape;
    dist.probs = Tensor<D>({1, d});
    dist.probs.v[3] = 1.0;  // center = 1 + 3*2 = 7
    auto c1 = sample_confidence(tape, dist, anchors_at(7.0, 0.0));
    CHECK(c1.v[0] == doctest::Approx(1.0).epsilon(1e-12));

    // midway between bins j and j+1: average of the two
    dist.probs = Tensor<D>({1, d});
    dist.probs.v[3] = 0.4;
    dist.probs.v[4] = 0.2;
    auto c2 = sample_confidence(tape, dist, anchors_at(8.0, 0.0));  // between centers 7 and 9
    CHECK(c2.v[0] == doctest::Approx(0.3).epsilon(1e-12));

    // uniform distribution: 1/D for any radius, clamped outside the range
    dist.probs = Tensor<D>::full({1, d}, 1.0 / d);
    for (const double r : {0.2, 1.0, 4.3, 15.0, 40.0}) {
        auto c3 = sample_confidence(tape, dist, anchors_at(r / std::sqrt(2.0), r / std::sqrt(2.0)));
        CHECK(c3.v[0] == doctest::Approx(1.0 / d).epsilon(1e-12));
    }

    // unimodal distribution: maximal at the peak, non-increasing moving away
    dist.probs = Tensor<D>({1, d});
    const double peak = 9.0;
    double norm = 0;
    for (int j = 0; j < d; ++j) {
        const double center = 1.0 + 2.0 * j;
        dist.probs.v[static_cast<std::size_t>(j)] = std::exp(-0.1 * (center - peak) * (center - peak));
        norm += dist.probs.v[static_cast<std::size_t>(j)];
    }
    for (auto& p : dist.probs.v) p /= norm;
    std::vector<double> conf;
    for (double r = 1.0; r <= 15.0; r += 0.5) {
        Tape<D> t2;
        conf.push_back(sample_confidence(t2, dist, anchors_at(r, 0.0)).v[0]);
    }
    const std::size_t peak_idx = 16;  // r = 9
    for (std::size_t i = 0; i < conf.size(); ++i) CHECK(conf[peak_idx] >= conf[i] - 1e-12);
    for (std::size_t i = 0; i + 1 < conf.size(); ++i) {
        if (i + 1 <= peak_idx) {
            CHECK(conf[i] <= conf[i + 1] + 1e-12);
        } else {
            CHECK(conf[i] >= conf[i + 1] - 1e-12);
        }
    }

    // gradient to both the distribution and the anchor position
    Rng rng(11);
    Tensor<D> probs = random_uniform<D>(rng, {2, d}, 0.05, 1.0);
    Tensor<D> anchors({2, geom::kAnchorDim});
    anchors.v[0] = 4.2;
    anchors.v[1] = 1.3;
    anchors.v[static_cast<std::size_t>(geom::kAnchorDim)] = 7.7;
    anchors.v[static_cast<std::size_t>(geom::kAnchorDim) + 1] = -2.9;
    ScalarFn<D> fn = [d](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
        DepthDistribution<D> dd;
        dd.probs = in[0];
        dd.depth_min = 1.0;
        dd.depth_max = 15.0;
        return tp.reduce_sum(sample_confidence(tp, dd, in[1]), {0});
    };
    CHECK(grad_check<D>(fn, {probs, anchors}, 1e-6).max_rel_err < 1e-6);
}

TEST_CASE("depth_reweight: identity, zero, scalar multiply") {
    Tape<D> tape;
    Tensor<D> f({1, 2}, {2.0, -4.0});
    auto keep = depth_reweight(tape, f, Tensor<D>({1}, {1.0}));
    CHECK(keep.v == std::vector<D>{2.0, -4.0});
    auto kill = depth_reweight(tape, f, Tensor<D>({1}, {0.0}));
    CHECK(kill.v == std::vector<D>{0.0, 0.0});
    auto half = depth_reweight(tape, f, Tensor<D>({1}, {0.5}));
    CHECK(half.v == std::vector<D>{1.0, -2.0});
}
