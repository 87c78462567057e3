#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "sparseagg/grad_check.hpp"
#include "sparseagg/params.hpp"
#include "sparseagg/rng.hpp"
#include "sparseagg/tape.hpp"

using namespace sparseagg;

namespace {

using D = double;

// Scalar probe: sum(out * fixed random weights). A plain sum would miss
// transposed-gradient bugs.
Tensor<D> weighted_sum(Tape<D>& tape, const Tensor<D>& t, const Tensor<D>& w) {
    std::vector<int> axes(t.shape.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return tape.reduce_sum(tape.mul(t, w), axes);
}

Tensor<D> rand_t(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return random_uniform<D>(rng, std::move(shape), lo, hi);
}

}  // namespace

TEST_CASE("linear: spec examples") {
    Tape<D> tape;
    // identity weight, zero bias
    Tensor<D> w3({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<D> b3({3}, {0, 0, 0});
    Tensor<D> x({1, 3}, {1, 2, 3});
    auto y = tape.linear(x, w3, b3);
    CHECK(y.v == std::vector<D>{1, 2, 3});

    // zero input passes the bias through
    Tensor<D> x0({1, 2}, {0, 0});
    Tensor<D> w2({2, 2}, {0.3, -0.7, 1.5, 2.0});
    Tensor<D> b2({2}, {5, -1});
    auto y0 = tape.linear(x0, w2, b2);
    CHECK(y0.v == std::vector<D>{5, -1});

    // hand matrix-multiply oracle: [1,2]·[[1,0],[0,2]] + [1,1] = [2,5]
    Tensor<D> xd({1, 2}, {1, 2});
    Tensor<D> wd({2, 2}, {1, 0, 0, 2});
    Tensor<D> bd({2}, {1, 1});
    auto yd = tape.linear(xd, wd, bd);
    CHECK(yd.v[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(yd.v[1] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("linear: shape mismatch names the offending shapes") {
    Tape<D> tape;
    Tensor<D> x({4, 3});
    Tensor<D> w({5, 2});
    Tensor<D> b({2});
    try {
        tape.linear(x, w, b);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[4,3]") != std::string::npos);
        CHECK(msg.find("[5,2]") != std::string::npos);
    }
}

TEST_CASE("softmax: spec examples and invariants") {
    Tape<D> tape;
    auto y = tape.softmax(Tensor<D>({3}, {0, 0, 0}), 0);
    for (int i = 0; i < 3; ++i) CHECK(y.v[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    // shift invariance
    auto a = tape.softmax(Tensor<D>({3}, {0.3, -1.2, 2.0}), 0);
    auto b = tape.softmax(Tensor<D>({3}, {0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5}), 0);
    for (int i = 0; i < 3; ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));

    // brute-force exp/normalize oracle in extended precision
    auto c = tape.softmax(Tensor<D>({3}, {1, 2, 3}), 0);
    long double e[3], denom = 0;
    for (int i = 0; i < 3; ++i) {
        e[i] = expl(static_cast<long double>(i + 1));
        denom += e[i];
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(c.v[i] - static_cast<double>(e[i] / denom)) < 1e-6);
    }

    // sums to one within 1e-12, strictly positive, along the designated axis
    Rng rng(7);
    auto x = rand_t(rng, {4, 5, 3}, -6.0, 6.0);
    for (int axis = 0; axis < 3; ++axis) {
        auto s = tape.softmax(x, axis);
        for (const double v : s.v) CHECK(v > 0.0);
        // check sums over the axis
        const int dims[3] = {4, 5, 3};
        for (int i = 0; i < 4 * 5 * 3 / dims[axis]; ++i) (void)i;
        // explicit triple loop
        for (int i0 = 0; i0 < 4; ++i0) {
            for (int i1 = 0; i1 < 5; ++i1) {
                for (int i2 = 0; i2 < 3; ++i2) {
                    if ((axis == 0 && i0 != 0) || (axis == 1 && i1 != 0) || (axis == 2 && i2 != 0))
                        continue;
                    double acc = 0;
                    for (int j = 0; j < dims[axis]; ++j) {
                        const int k0 = axis == 0 ? j : i0;
                        const int k1 = axis == 1 ? j : i1;
                        const int k2 = axis == 2 ? j : i2;
                        acc += s.at({k0, k1, k2});
                    }
                    CHECK(std::abs(acc - 1.0) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("backward: spec examples") {
    // f(x) = x*x at x=3 -> gradient 6
    {
        Tape<D> tape;
        auto x = tape.input(Tensor<D>::scalar(3.0));
        auto y = tape.mul(x, x);
        tape.backward(y);
        CHECK(tape.gradient(x).v[0] == doctest::Approx(6.0).epsilon(1e-14));
    }
    // f(x) = sigmoid(x) at 0 -> 0.25
    {
        Tape<D> tape;
        auto x = tape.input(Tensor<D>::scalar(0.0));
        auto y = tape.sigmoid(x);
        tape.backward(y);
        CHECK(tape.gradient(x).v[0] == doctest::Approx(0.25).epsilon(1e-14));
    }
    // seed must be scalar
    {
        Tape<D> tape;
        auto x = tape.input(Tensor<D>({2}, {1, 2}));
        auto y = tape.relu(x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
}

TEST_CASE("backward: random 3-layer MLP matches finite differences") {
    Rng rng(11);
    const auto xin = rand_t(rng, {2, 4});
    const auto w1 = rand_t(rng, {4, 8});
    const auto b1 = rand_t(rng, {8});
    const auto w2 = rand_t(rng, {8, 8});
    const auto b2 = rand_t(rng, {8});
    const auto w3 = rand_t(rng, {8, 3});
    const auto b3 = rand_t(rng, {3});
    const auto probe = rand_t(rng, {2, 3});
    ScalarFn<D> fn = [&probe](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
        auto h1 = tp.relu(tp.linear(in[0], in[1], in[2]));
        auto h2 = tp.sigmoid(tp.linear(h1, in[3], in[4]));
        auto h3 = tp.linear(h2, in[5], in[6]);
        return weighted_sum(tp, h3, probe);
    };
    const auto report = grad_check<D>(fn, {xin, w1, b1, w2, b2, w3, b3}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("grad_check: linear op and constant function") {
    Rng rng(3);
    const auto x = rand_t(rng, {4, 3});
    const auto w = rand_t(rng, {3, 5});
    const auto b = rand_t(rng, {5});
    const auto probe = rand_t(rng, {4, 5});
    ScalarFn<D> fn = [&probe](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
        return weighted_sum(tp, tp.linear(in[0], in[1], in[2]), probe);
    };
    CHECK(grad_check<D>(fn, {x, w, b}, 1e-5).max_rel_err < 1e-6);

    ScalarFn<D> constant = [](Tape<D>& tp, const std::vector<Tensor<D>>&) {
        return tp.scale(Tensor<D>::scalar(4.0), 1.0);
    };
    const auto rep = grad_check<D>(constant, {x}, 1e-5);
    CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("grad_check: every primitive on >= 10 random instances") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(100 + trial);
        const int r = rng.uniform_int(2, 4);
        const int c = rng.uniform_int(2, 5);
        const int k = rng.uniform_int(2, 4);

        const auto probe_rc = rand_t(rng, {r, c});

        SUBCASE("") {}  // keep doctest quiet about empty case names

        {
            // linear
            const auto x = rand_t(rng, {r, k}), w = rand_t(rng, {k, c}), b = rand_t(rng, {c});
            ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                return weighted_sum(tp, tp.linear(in[0], in[1], in[2]), probe_rc);
            };
            CHECK(grad_check<D>(fn, {x, w, b}, 1e-5).max_rel_err < 1e-5);
        }
        {
            // matmul and matmul_nt
            const auto a = rand_t(rng, {r, k}), b = rand_t(rng, {k, c}), bt = rand_t(rng, {c, k});
            ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                return weighted_sum(tp, tp.matmul(in[0], in[1]), probe_rc);
            };
            CHECK(grad_check<D>(fn, {a, b}, 1e-5).max_rel_err < 1e-5);
            ScalarFn<D> fn2 = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                return weighted_sum(tp, tp.matmul_nt(in[0], in[1]), probe_rc);
            };
            CHECK(grad_check<D>(fn2, {a, bt}, 1e-5).max_rel_err < 1e-5);
        }
        {
            // add, mul, sigmoid, relu (inputs kept away from the relu kink)
            const auto a = rand_t(rng, {r, c}, 0.15, 1.2);
            auto b = rand_t(rng, {r, c}, 0.15, 1.2);
            for (auto& v : b.v) {
                if (rng.bernoulli(0.5)) v = -v;
            }
            ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                auto s = tp.add(in[0], in[1]);
                auto m = tp.mul(s, in[0]);
                auto z = tp.sigmoid(m);
                auto rl = tp.relu(in[1]);
                return weighted_sum(tp, tp.add(z, rl), probe_rc);
            };
            CHECK(grad_check<D>(fn, {a, b}, 1e-5).max_rel_err < 1e-5);
        }
        {
            // softmax over each axis
            const auto x = rand_t(rng, {r, c}, -2.0, 2.0);
            for (int axis = 0; axis < 2; ++axis) {
                ScalarFn<D> fn = [&, axis](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                    return weighted_sum(tp, tp.softmax(in[0], axis), probe_rc);
                };
                CHECK(grad_check<D>(fn, {x}, 1e-5).max_rel_err < 1e-5);
            }
        }
        {
            // concat + slice + reshape + scale + reduce_sum + row_scale
            const auto a = rand_t(rng, {r, c});
            const auto b = rand_t(rng, {r, c});
            const auto s = rand_t(rng, {r}, 0.3, 1.3);
            const auto probe2 = rand_t(rng, {r, c});
            ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                auto cat = tp.concat({in[0], in[1]}, 1);           // [r, 2c]
                auto sl = tp.slice(cat, 1, c / 2, c);              // [r, c]
                auto rs = tp.row_scale(sl, in[2]);                 // [r, c]
                auto sc = tp.scale(tp.reshape(rs, {r * c}), 0.7);  // [r*c]
                auto back = tp.reshape(sc, {r, c});
                auto w = tp.mul(back, probe2);
                return tp.reduce_sum(w, {0, 1});
            };
            CHECK(grad_check<D>(fn, {a, b, s}, 1e-5).max_rel_err < 1e-5);
        }
        {
            // reduce_sum over a middle axis
            const auto x = rand_t(rng, {r, k, c});
            ScalarFn<D> fn = [&](Tape<D>& tp, const std::vector<Tensor<D>>& in) {
                return weighted_sum(tp, tp.reduce_sum(in[0], {1}), probe_rc);
            };
            CHECK(grad_check<D>(fn, {x}, 1e-5).max_rel_err < 1e-5);
        }
    }
}

TEST_CASE("replaying a graph is bit-identical") {
    auto run = [] {
        Rng rng(42);
        Tape<D> tape;
        auto x = tape.input(rand_t(rng, {3, 4}));
        auto w = tape.input(rand_t(rng, {4, 4}));
        auto b = tape.input(rand_t(rng, {4}));
        auto h = tape.softmax(tape.sigmoid(tape.linear(x, w, b)), 1);
        auto out = tape.reduce_sum(h, {0, 1});
        tape.backward(out);
        auto g = tape.gradient(w);
        std::vector<double> all = out.v;
        all.insert(all.end(), g.v.begin(), g.v.end());
        return all;
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("independent inputs get exactly-zero gradients") {
    Tape<D> tape;
    auto x = tape.input(Tensor<D>({2}, {1, 2}));
    auto y = tape.input(Tensor<D>({3}, {4, 5, 6}));
    auto out = tape.reduce_sum(tape.mul(x, x), {0});
    tape.backward(out);
    const auto gy = tape.gradient(y);
    for (const double g : gy.v) CHECK(g == 0.0);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor<D>({2, 0}), ContractError);
    CHECK_THROWS_AS((Tensor<D>({2, 2}, {1, 2, 3})), ContractError);
    Tensor<D> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
    t.v[2] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("parameter store accumulates pass gradients") {
    ParamStore<D> store;
    const int wid = store.add("w", Tensor<D>({2}, {1.0, -2.0}));
    CHECK(store.param(wid).grad == std::vector<D>{0, 0});

    Tape<D> tape;
    PassContext<D> ctx(tape, store);
    auto w = ctx.use(wid);
    auto loss = tape.reduce_sum(tape.mul(w, w), {0});
    tape.backward(loss);
    ctx.accumulate_grads();
    CHECK(store.param(wid).grad[0] == doctest::Approx(2.0));
    CHECK(store.param(wid).grad[1] == doctest::Approx(-4.0));

    store.zero_grad();
    CHECK(store.param(wid).grad == std::vector<D>{0, 0});
}
