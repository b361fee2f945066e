#include <doctest.h>

#include <cmath>

#include "fd/perception.hpp"

using namespace fd;
using namespace fd::perception;

namespace {

ParamStore make_params(uint64_t seed = 1, int proprio_dim = 5) {
    ParamStore ps;
    Rng rng(seed);
    init_perception_params(ps, PerceptionConfig{proprio_dim}, rng);
    return ps;
}

Array random_points(int n, uint64_t seed) {
    Array pts({n, 3});
    Rng rng(seed);
    for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = rng.uniform(-1.0, 1.0);
    return pts;
}

Observation random_obs(uint64_t seed, int n = 16, int dr = 5) {
    Rng rng(seed ^ 0x5eedULL);
    Array prop({dr});
    for (int i = 0; i < dr; ++i) prop[i] = rng.uniform(-1.0, 1.0);
    return Observation{random_points(n, seed), std::move(prop)};
}

}  // namespace

TEST_CASE("encode_points is permutation and duplication invariant") {
    const auto ps = make_params();
    const Array pts = random_points(24, 3);
    const Array base = encode_points(pts, ps);
    CHECK(base.shape() == std::vector<int>{64});

    Rng rng(17);
    Array perm = pts;
    for (int i = 23; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
        for (int c = 0; c < 3; ++c) std::swap(perm.at2(i, c), perm.at2(j, c));
    }
    CHECK(encode_points(perm, ps).bit_equal(base));

    Array doubled({48, 3});
    for (int i = 0; i < 24; ++i)
        for (int c = 0; c < 3; ++c) {
            doubled.at2(i, c) = pts.at2(i, c);
            doubled.at2(24 + i, c) = pts.at2(i, c);
        }
    CHECK(encode_points(doubled, ps).bit_equal(base));
}

TEST_CASE("encode_points validates input and handles large clouds") {
    const auto ps = make_params();
    CHECK_THROWS_AS(encode_points(Array({3}, {1, 2, 3}), ps), Error);
    CHECK_THROWS_AS(encode_points(Array({2, 2}, {1, 2, 3, 4}), ps), Error);
    CHECK(encode_points(random_points(512, 9), ps).shape() == std::vector<int>{64});
}

TEST_CASE("encode_observation fuses proprio and checks widths") {
    const auto ps = make_params();
    const auto obs = random_obs(4);
    const Array f = encode_observation(obs, ps, PerceptionConfig{5});
    CHECK(f.shape() == std::vector<int>{64});
    CHECK(f.bit_equal(encode_observation(obs, ps, PerceptionConfig{5})));
    CHECK_THROWS_WITH_AS(encode_observation(obs, ps, PerceptionConfig{7}),
                         doctest::Contains("proprio"), Error);
}

TEST_CASE("encode_pair concatenates two shared-encoder frames") {
    const auto ps = make_params();
    const auto a = random_obs(11);
    const auto b = random_obs(12);
    const Feature f = encode_pair(ObservationPair{a, b}, ps, PerceptionConfig{5});
    CHECK(f.role == FeatureRole::Current);
    CHECK(f.vec.shape() == std::vector<int>{128});

    const Feature same = encode_pair(ObservationPair{a, a}, ps, PerceptionConfig{5});
    for (int i = 0; i < 64; ++i) CHECK(same.vec[i] == same.vec[64 + i]);

    const Feature swapped = encode_pair(ObservationPair{b, a}, ps, PerceptionConfig{5});
    for (int i = 0; i < 64; ++i) {
        CHECK(swapped.vec[i] == f.vec[64 + i]);
        CHECK(swapped.vec[64 + i] == f.vec[i]);
    }
}

TEST_CASE("construct_future contract") {
    const auto ps = make_params();
    const auto pair = ObservationPair{random_obs(21), random_obs(22)};
    const Feature f_cur = encode_pair(pair, ps, PerceptionConfig{5});
    const Feature f_cons = construct_future(f_cur, ps);
    CHECK(f_cons.role == FeatureRole::Constructed);
    CHECK(f_cons.vec.shape() == std::vector<int>{128});
    CHECK(f_cons.vec.bit_equal(construct_future(f_cur, ps).vec));
    CHECK_THROWS_AS(construct_future(f_cons, ps), Error);

    // zeroed final layer collapses the constructor to its bias
    ParamStore zeroed = ps;
    Array& w2 = zeroed.at("perception.cons.w2");
    for (int64_t i = 0; i < w2.numel(); ++i) w2[i] = 0.0;
    Array& b2 = zeroed.at("perception.cons.b2");
    for (int64_t i = 0; i < b2.numel(); ++i) b2[i] = 0.25;
    const Feature bias_only = construct_future(f_cur, zeroed);
    const Feature other = construct_future(
        encode_pair(ObservationPair{random_obs(31), random_obs(32)}, ps, PerceptionConfig{5}),
        zeroed);
    for (int i = 0; i < 128; ++i) {
        CHECK(bias_only.vec[i] == 0.25);
        CHECK(other.vec[i] == 0.25);
    }
}

TEST_CASE("encode_future_target shares the encoder and flags episode end") {
    const auto ps = make_params();
    const auto a = random_obs(41);
    const auto b = random_obs(42);
    const Feature target = encode_future_target(a, &b, ps, PerceptionConfig{5});
    CHECK(target.role == FeatureRole::Target);
    const Feature cur = encode_pair(ObservationPair{a, b}, ps, PerceptionConfig{5});
    CHECK(target.vec.bit_equal(cur.vec));

    const Feature static_cur = encode_pair(ObservationPair{a, a}, ps, PerceptionConfig{5});
    const Feature static_gt = encode_future_target(a, &a, ps, PerceptionConfig{5});
    CHECK(static_gt.vec.bit_equal(static_cur.vec));

    CHECK_THROWS_WITH_AS(encode_future_target(a, nullptr, ps, PerceptionConfig{5}),
                         doctest::Contains("episode end"), Error);
}

TEST_CASE("make_conditions layout and step-range errors") {
    const auto ps = make_params();
    const auto pair = ObservationPair{random_obs(51), random_obs(52)};
    const Feature f_cur = encode_pair(pair, ps, PerceptionConfig{5});
    const Feature f_cons = construct_future(f_cur, ps);
    const ConditionPair cp = make_conditions(f_cur, f_cons, 7, 100);
    CHECK(cp.g.shape() == std::vector<int>{192});
    CHECK(cp.g_hat.shape() == std::vector<int>{192});
    for (int i = 128; i < 192; ++i) CHECK(cp.g[i] == cp.g_hat[i]);
    for (int i = 0; i < 128; ++i) {
        CHECK(cp.g[i] == f_cur.vec[i]);
        CHECK(cp.g_hat[i] == f_cons.vec[i]);
    }
    CHECK_THROWS_AS(make_conditions(f_cur, f_cons, -1, 100), Error);
    CHECK_THROWS_AS(make_conditions(f_cur, f_cons, 101, 100), Error);

    const ConditionPair zero = make_conditions(f_cur, f_cons, 0, 100);
    for (int i = 0; i < 32; ++i) {
        CHECK(zero.g[128 + i] == 0.0);
        CHECK(zero.g[160 + i] == 1.0);
    }
}

TEST_CASE("gradient check through the full encoder and constructor") {
    const int n = 5, dr = 3;
    ParamStore ps;
    Rng rng(77);
    init_perception_params(ps, PerceptionConfig{dr}, rng);
    const double err = grad_check(
        [&](Graph& g, const ParamStore& store) {
            const int pp = g.param_owned("in.pp", random_points(n, 61).reshaped({1, n, 3}));
            const int pr = g.param_owned("in.pr", random_points(1, 63).reshaped({1, 3}));
            const int cp = g.param_owned("in.cp", random_points(n, 62).reshaped({1, n, 3}));
            const int cr = g.param_owned("in.cr", random_points(1, 64).reshaped({1, 3}));
            const int f_cur = build_pair_encoder(g, store, pp, pr, cp, cr);
            const int f_cons = build_constructor(g, store, f_cur);
            const int target = g.param_owned("in.target", Array({1, kFeatureDim}));
            return g.mse(f_cons, target);
        },
        ps, 1e-5);
    CHECK(err <= 1e-4);
}
