#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fd/graph.hpp"
#include "fd/kernels.hpp"
#include "fd/rng.hpp"

using namespace fd;

namespace {

Array randn(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
    Array a(std::move(shape));
    Rng rng(seed);
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = scale * rng.normal();
    return a;
}

// Keeps relu inputs away from the kink so central differences stay valid.
Array randn_margin(std::vector<int> shape, uint64_t seed, double margin = 5e-3) {
    Array a = randn(std::move(shape), seed);
    for (int64_t i = 0; i < a.numel(); ++i)
        if (std::abs(a[i]) < margin) a[i] = a[i] < 0 ? -margin : margin;
    return a;
}

}  // namespace

TEST_CASE("affine identity and relu basics") {
    Graph g;
    const int x = g.param_owned("x", Array({1, 2}, {1, 2}));
    const int w = g.param_owned("w", Array({2, 2}, {1, 0, 0, 1}));
    const int b = g.param_owned("b", Array({2}, {0, 0}));
    const int y = g.affine(x, w, b);
    g.mark_output("y", y);
    auto out = g.forward({});
    CHECK(out.at("y")[0] == 1.0);
    CHECK(out.at("y")[1] == 2.0);

    Graph g2;
    const int r = g2.relu(g2.param_owned("v", Array({3}, {-1, 0, 3})));
    g2.mark_output("r", r);
    auto out2 = g2.forward({});
    CHECK(out2.at("r")[0] == 0.0);
    CHECK(out2.at("r")[1] == 0.0);
    CHECK(out2.at("r")[2] == 3.0);
}

TEST_CASE("max pool over the set axis is an elementwise max") {
    Graph g;
    const int x = g.param_owned("x", Array({2, 2}, {1, 5, 4, 2}));
    const int y = g.max_pool_set(x);
    g.mark_output("y", y);
    auto out = g.forward({});
    CHECK(out.at("y")[0] == 4.0);
    CHECK(out.at("y")[1] == 5.0);
}

TEST_CASE("forward is bit-pure") {
    Graph g;
    const int x = g.input("x", {4, 8});
    const int w = g.param_owned("w", randn({8, 8}, 3));
    const int b = g.param_owned("b", randn({8}, 4));
    g.mark_output("y", g.mish(g.affine(x, w, b)));
    const Array xin = randn({4, 8}, 5);
    const Array y1 = g.forward({{"x", xin}}).at("y");
    const Array y2 = g.forward({{"x", xin}}).at("y");
    CHECK(y1.bit_equal(y2));
}

TEST_CASE("concat then split recovers operands exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int b = 1 + static_cast<int>(rng.below(4));
        const int c1 = 1 + static_cast<int>(rng.below(6));
        const int c2 = 1 + static_cast<int>(rng.below(6));
        const int axis = static_cast<int>(rng.below(2));
        std::vector<int> sa{b, c1}, sb{b, c1};
        sa[static_cast<size_t>(axis)] = c1;
        sb[static_cast<size_t>(axis)] = c2;
        sb[1 - axis] = sa[1 - axis];
        Graph g;
        const int a = g.param_owned("a", randn(sa, 100 + trial));
        const int bb = g.param_owned("b", randn(sb, 200 + trial));
        const int cat = g.concat(a, bb, axis);
        const int ra = g.split(cat, axis, 0, sa[static_cast<size_t>(axis)]);
        const int rb = g.split(cat, axis, sa[static_cast<size_t>(axis)],
                               sa[static_cast<size_t>(axis)] + sb[static_cast<size_t>(axis)]);
        g.mark_output("ra", ra);
        g.mark_output("rb", rb);
        auto out = g.forward({});
        CHECK(out.at("ra").bit_equal(g.value(a)));
        CHECK(out.at("rb").bit_equal(g.value(bb)));
    }
}

TEST_CASE("max pool is invariant under set-axis permutation") {
    Rng rng(7);
    Array x = randn({16, 6}, 21);
    Graph g;
    const int in = g.input("x", {16, 6});
    g.mark_output("y", g.max_pool_set(in));
    const Array base = g.forward({{"x", x}}).at("y");
    for (int trial = 0; trial < 10; ++trial) {
        Array perm = x;
        for (int i = 15; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
            for (int c = 0; c < 6; ++c) std::swap(perm.at2(i, c), perm.at2(j, c));
        }
        CHECK(g.forward({{"x", perm}}).at("y").bit_equal(base));
    }
}

TEST_CASE("mse gradient follows the mean convention") {
    Graph g;
    const int x = g.param_owned("x", Array({1}, {3.0}));
    const int z = g.param_owned("z", Array({1}, {0.0}));
    const int loss = g.mse(x, z);
    g.mark_output("l", loss);
    auto out = g.forward({});
    CHECK(out.at("l")[0] == doctest::Approx(9.0));
    auto grads = g.backward(loss);
    CHECK(grads.at("x")[0] == doctest::Approx(6.0));  // 2*(x-z)/n with n=1
}

TEST_CASE("backward ordering and error paths") {
    Graph g;
    const int x = g.param_owned("x", Array({2}, {1, 2}));
    const int y = g.add(x, x);
    g.mark_output("y", y);
    CHECK_THROWS_WITH_AS(g.backward(y), doctest::Contains("before forward"), Error);
    g.forward({});
    CHECK_THROWS_WITH_AS(g.backward(y), doctest::Contains("scalar"), Error);
    // gradient accumulates when a parameter feeds multiple nodes
    Graph g2;
    const int p = g2.param_owned("p", Array({1}, {2.0}));
    const int s = g2.mul(p, p);  // p^2 -> dp = 2p = 4
    g2.mark_output("s", s);
    g2.forward({});
    const auto grads = g2.backward(s);
    CHECK(grads.at("p")[0] == doctest::Approx(4.0));
}

TEST_CASE("shape errors name the offending node") {
    Graph g;
    const int x = g.param_owned("x", Array({1, 3}, {1, 2, 3}));
    const int w = g.param_owned("w", Array({2, 2}, {1, 0, 0, 1}));
    const int b = g.param_owned("b", Array({2}, {0, 0}));
    CHECK_THROWS_WITH_AS(g.affine(x, w, b), doctest::Contains("affine"), Error);
}

TEST_CASE("non-finite values are reported with the node") {
    Graph g;
    const int x = g.input("x", {2});
    const int y = g.mul(x, x);
    g.mark_output("y", y);
    Array bad({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_WITH_AS(g.forward({{"x", bad}}), doctest::Contains("non-finite"), Error);
}

TEST_CASE("array serialization round-trips") {
    const Array a = randn({3, 4, 2}, 33);
    std::stringstream ss;
    write_array(ss, a);
    const Array b = read_array(ss);
    CHECK(a.bit_equal(b));
    std::stringstream bad("XXXX");
    CHECK_THROWS_AS(read_array(bad), Error);
}

// ---------------------------------------------------------------------------
// Gradient checks: every op kind against central differences.
// ---------------------------------------------------------------------------

namespace {

double check_op(const GraphBuilder& build, const ArrayMap& point) {
    return grad_check(build, point, 1e-5);
}

}  // namespace

TEST_CASE("grad: affine") {
    for (uint64_t trial = 0; trial < 12; ++trial) {
        Rng shape_rng(900 + trial);
        const int rows = 1 + static_cast<int>(shape_rng.below(5));
        const int in = 1 + static_cast<int>(shape_rng.below(6));
        const int out = 1 + static_cast<int>(shape_rng.below(6));
        ArrayMap point{{"x", randn({rows, in}, trial * 3 + 1)},
                       {"w", randn({in, out}, trial * 3 + 2)},
                       {"b", randn({out}, trial * 3 + 3)}};
        const double err = check_op(
            [](Graph& g, const ArrayMap& p) {
                const int x = g.param_owned("x", p.at("x"));
                const int w = g.param_owned("w", p.at("w"));
                const int b = g.param_owned("b", p.at("b"));
                const int y = g.affine(x, w, b);
                // mse against zeros turns the output into a scalar loss
                return g.mse(y, g.param_owned("z", Array(g.shape(y))));
            },
            point);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("grad: conv1d stride 1 and 2, same and valid") {
    int trial = 0;
    for (const int stride : {1, 2}) {
        for (const auto pad : {Padding::Same, Padding::Valid}) {
            for (int rep = 0; rep < 6; ++rep, ++trial) {
                Rng shape_rng(1700 + trial);
                const int b = 1 + static_cast<int>(shape_rng.below(3));
                const int ci = 1 + static_cast<int>(shape_rng.below(4));
                const int co = 1 + static_cast<int>(shape_rng.below(4));
                const int l = 4 + static_cast<int>(shape_rng.below(6));
                const int k = 3;
                ArrayMap point{{"x", randn({b, ci, l}, trial * 5 + 1)},
                               {"w", randn({co, ci, k}, trial * 5 + 2)},
                               {"b", randn({co}, trial * 5 + 3)}};
                const double err = check_op(
                    [stride, pad](Graph& g, const ArrayMap& p) {
                        const int x = g.param_owned("x", p.at("x"));
                        const int w = g.param_owned("w", p.at("w"));
                        const int b = g.param_owned("b", p.at("b"));
                        const int y = g.conv1d(x, w, b, stride, pad);
                        return g.mse(y, g.param_owned("z", Array(g.shape(y))));
                    },
                    point);
                CHECK(err <= 1e-4);
            }
        }
    }
}

TEST_CASE("grad: transposed conv1d") {
    for (int trial = 0; trial < 8; ++trial) {
        Rng shape_rng(2500 + trial);
        const int b = 1 + static_cast<int>(shape_rng.below(3));
        const int ci = 1 + static_cast<int>(shape_rng.below(4));
        const int co = 1 + static_cast<int>(shape_rng.below(4));
        const int l = 2 + static_cast<int>(shape_rng.below(5));
        ArrayMap point{{"x", randn({b, ci, l}, trial * 7 + 1)},
                       {"w", randn({ci, co, 4}, trial * 7 + 2)},
                       {"b", randn({co}, trial * 7 + 3)}};
        const double err = check_op(
            [](Graph& g, const ArrayMap& p) {
                const int x = g.param_owned("x", p.at("x"));
                const int w = g.param_owned("w", p.at("w"));
                const int b = g.param_owned("b", p.at("b"));
                const int y = g.conv1d_t(x, w, b);
                return g.mse(y, g.param_owned("z", Array(g.shape(y))));
            },
            point);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("grad: elementwise add/sub/mul, relu, mish") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng shape_rng(3300 + trial);
        const int n = 2 + static_cast<int>(shape_rng.below(10));
        ArrayMap point{{"a", randn_margin({n}, trial * 11 + 1)},
                       {"b", randn_margin({n}, trial * 11 + 2)}};
        const double err = check_op(
            [](Graph& g, const ArrayMap& p) {
                const int a = g.param_owned("a", p.at("a"));
                const int b = g.param_owned("b", p.at("b"));
                const int mixed = g.add(g.mul(g.relu(a), g.mish(b)), g.sub(a, b));
                return g.mse(mixed, g.param_owned("z", Array(g.shape(mixed))));
            },
            point);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("grad: group norm") {
    for (int trial = 0; trial < 8; ++trial) {
        Rng shape_rng(4100 + trial);
        const int b = 1 + static_cast<int>(shape_rng.below(3));
        const int groups = 2;
        const int c = groups * (1 + static_cast<int>(shape_rng.below(3)));
        const int l = 2 + static_cast<int>(shape_rng.below(5));
        ArrayMap point{{"x", randn({b, c, l}, trial * 13 + 1)},
                       {"gain", randn({c}, trial * 13 + 2)},
                       {"bias", randn({c}, trial * 13 + 3)}};
        const double err = check_op(
            [groups](Graph& g, const ArrayMap& p) {
                const int x = g.param_owned("x", p.at("x"));
                const int gain = g.param_owned("gain", p.at("gain"));
                const int bias = g.param_owned("bias", p.at("bias"));
                const int y = g.group_norm(x, gain, bias, groups);
                return g.mse(y, g.param_owned("z", Array(g.shape(y))));
            },
            point);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("grad: concat, split, max pool, scale/shift") {
    for (int trial = 0; trial < 8; ++trial) {
        ArrayMap point{{"a", randn({2, 3, 4}, trial * 17 + 1)},
                       {"b", randn({2, 2, 4}, trial * 17 + 2)},
                       {"gamma", randn({2, 5}, trial * 17 + 3)},
                       {"delta", randn({2, 5}, trial * 17 + 4)}};
        const double err = check_op(
            [](Graph& g, const ArrayMap& p) {
                const int a = g.param_owned("a", p.at("a"));
                const int b = g.param_owned("b", p.at("b"));
                const int gamma = g.param_owned("gamma", p.at("gamma"));
                const int delta = g.param_owned("delta", p.at("delta"));
                const int cat = g.concat(a, b, 1);            // [2,5,4]
                const int mod = g.scale_shift(cat, gamma, delta);
                const int piece = g.split(mod, 2, 1, 3);       // [2,5,2]
                const int pooled = g.max_pool_set(piece);      // [2,2]
                return g.mse(pooled, g.param_owned("z", Array(g.shape(pooled))));
            },
            point);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("sinusoidal embedding feeds forward but passes no gradient to the step") {
    Graph g;
    const int k = g.param_owned("k", Array({2}, {3.0, 7.0}));
    const int e = g.sin_embed(k, 8);
    const int w = g.param_owned("w", randn({8, 4}, 91));
    const int b = g.param_owned("b", randn({4}, 92));
    const int y = g.affine(e, w, b);
    const int loss = g.mse(y, g.param_owned("z", Array(g.shape(y))));
    g.mark_output("l", loss);
    const double l1 = g.forward({}).at("l")[0];
    auto grads = g.backward(loss);
    for (int64_t i = 0; i < grads.at("k").numel(); ++i) CHECK(grads.at("k")[i] == 0.0);
    bool w_has_grad = false;
    for (int64_t i = 0; i < grads.at("w").numel(); ++i) w_has_grad |= grads.at("w")[i] != 0.0;
    CHECK(w_has_grad);
    // the step index still drives the embedding value
    g.owned_param("k")[0] = 4.0;
    const double l2 = g.forward({}).at("l")[0];
    CHECK(l1 != l2);
    // k = 0 produces the sin-0 / cos-1 column layout
    Graph g0;
    g0.mark_output("e", g0.sin_embed(g0.param_owned("k0", Array({1}, {0.0})), 8));
    const Array e0 = g0.forward({}).at("e");
    for (int i = 0; i < 4; ++i) {
        CHECK(e0[i] == 0.0);
        CHECK(e0[4 + i] == 1.0);
    }
}

TEST_CASE("grad_check contract") {
    // quadratic form: exact analytic gradient, so the residual is pure
    // finite-difference truncation
    const double err = grad_check(
        [](Graph& g, const ArrayMap& p) {
            const int x = g.param_owned("x", p.at("x"));
            return g.mse(x, g.param_owned("z", Array({4})));
        },
        {{"x", randn({4}, 55)}}, 1e-5);
    CHECK(err <= 1e-8);

    // constant function: zero gradient everywhere
    const double zero_err = grad_check(
        [](Graph& g, const ArrayMap& p) {
            (void)p;
            const int c1 = g.param_owned("c1", Array({3}, {1, 2, 3}));
            (void)c1;
            const int a = g.param_owned("a", Array({1}, {2.0}));
            return g.mse(a, a);
        },
        {}, 1e-5);
    CHECK(zero_err == 0.0);

    CHECK_THROWS_AS(grad_check([](Graph& g, const ArrayMap&) {
                        return g.param_owned("x", Array({2}, {1, 2}));
                    },
                    {}, 1e-5),
                    Error);
    CHECK_THROWS_AS(grad_check([](Graph& g, const ArrayMap&) {
                        return g.param_owned("x", Array({1}, {1}));
                    },
                    {}, 0.5),
                    Error);
}

TEST_CASE("grad: random 3-layer MLP against finite differences at 1e-6") {
    // smooth activations keep the central-difference truncation tiny
    ArrayMap point{{"x", randn({2, 6}, 71)},  {"w1", randn({6, 8}, 72)},
                   {"b1", randn({8}, 73)},    {"w2", randn({8, 8}, 74)},
                   {"b2", randn({8}, 75)},    {"w3", randn({8, 3}, 76)},
                   {"b3", randn({3}, 77)},    {"target", randn({2, 3}, 78)}};
    const double err = grad_check(
        [](Graph& g, const ArrayMap& p) {
            const int x = g.param_owned("x", p.at("x"));
            int h = g.mish(g.affine(x, g.param_owned("w1", p.at("w1")),
                                    g.param_owned("b1", p.at("b1"))));
            h = g.mish(g.affine(h, g.param_owned("w2", p.at("w2")),
                                g.param_owned("b2", p.at("b2"))));
            h = g.affine(h, g.param_owned("w3", p.at("w3")), g.param_owned("b3", p.at("b3")));
            return g.mse(h, g.param_owned("target", p.at("target")));
        },
        point, 1e-5);
    CHECK(err <= 1e-6);
}

// ---------------------------------------------------------------------------
// Serial reference vs OpenMP kernels: bitwise equality.
// ---------------------------------------------------------------------------

TEST_CASE("kernels: parallel gemm matches serial bitwise") {
    for (int trial = 0; trial < 6; ++trial) {
        Rng shape_rng(6100 + trial);
        const int m = 64 + static_cast<int>(shape_rng.below(512));
        const int k = 8 + static_cast<int>(shape_rng.below(96));
        const int n = 8 + static_cast<int>(shape_rng.below(96));
        const Array a = randn({m, k}, trial * 3 + 1);
        const Array b = randn({k, n}, trial * 3 + 2);
        Array c1({m, n}), c2({m, n});
        kernels::ref::gemm(c1.data(), a.data(), b.data(), m, k, n);
        kernels::gemm(c2.data(), a.data(), b.data(), m, k, n);
        CHECK(c1.bit_equal(c2));
    }
}

TEST_CASE("kernels: parallel conv1d fwd/bwd match serial bitwise") {
    const int b = 16, ci = 24, l = 32, co = 48, k = 3, stride = 1, pad = 1, lo = 32;
    const Array x = randn({b, ci, l}, 1);
    const Array w = randn({co, ci, k}, 2);
    const Array bias = randn({co}, 3);
    Array y1({b, co, lo}), y2({b, co, lo});
    kernels::ref::conv1d(y1.data(), x.data(), w.data(), bias.data(), b, ci, l, co, k, stride, pad, lo);
    kernels::conv1d(y2.data(), x.data(), w.data(), bias.data(), b, ci, l, co, k, stride, pad, lo);
    CHECK(y1.bit_equal(y2));

    const Array dy = randn({b, co, lo}, 4);
    Array dx1({b, ci, l}), dw1({co, ci, k}), db1({co});
    Array dx2({b, ci, l}), dw2({co, ci, k}), db2({co});
    kernels::ref::conv1d_backward(dx1.data(), dw1.data(), db1.data(), dy.data(), x.data(),
                                  w.data(), b, ci, l, co, k, stride, pad, lo);
    kernels::conv1d_backward(dx2.data(), dw2.data(), db2.data(), dy.data(), x.data(), w.data(), b,
                             ci, l, co, k, stride, pad, lo);
    CHECK(dx1.bit_equal(dx2));
    CHECK(dw1.bit_equal(dw2));
    CHECK(db1.bit_equal(db2));
}

TEST_CASE("kernels: parallel transposed conv and group norm match serial bitwise") {
    const int b = 16, ci = 32, l = 16, co = 24, k = 4, stride = 2, pad = 1, lo = 32;
    const Array x = randn({b, ci, l}, 11);
    const Array w = randn({ci, co, k}, 12);
    const Array bias = randn({co}, 13);
    Array y1({b, co, lo}), y2({b, co, lo});
    kernels::ref::convt1d(y1.data(), x.data(), w.data(), bias.data(), b, ci, l, co, k, stride, pad, lo);
    kernels::convt1d(y2.data(), x.data(), w.data(), bias.data(), b, ci, l, co, k, stride, pad, lo);
    CHECK(y1.bit_equal(y2));

    const int c = 64, groups = 8, gl = 32;
    const Array gx = randn({b, c, gl}, 14);
    const Array gain = randn({c}, 15);
    const Array gbias = randn({c}, 16);
    Array gy1({b, c, gl}), gy2({b, c, gl});
    Array m1({b * groups}), v1({b * groups}), m2({b * groups}), v2({b * groups});
    kernels::ref::group_norm(gy1.data(), m1.data(), v1.data(), gx.data(), gain.data(),
                             gbias.data(), b, c, gl, groups, 1e-5);
    kernels::group_norm(gy2.data(), m2.data(), v2.data(), gx.data(), gain.data(), gbias.data(), b,
                        c, gl, groups, 1e-5);
    CHECK(gy1.bit_equal(gy2));
}

TEST_CASE("rng reproducibility") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    Rng c(43);
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) differs |= a2.normal() != c.normal();
    CHECK(differs);
}
