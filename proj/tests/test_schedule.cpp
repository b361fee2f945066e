#include <doctest.h>

#include <cmath>

#include "fd/rng.hpp"
#include "fd/schedule.hpp"

using namespace fd;
using namespace fd::diffusion;

TEST_CASE("single-step linear schedule") {
    const auto s = make_schedule(ScheduleKind::LinearBeta, 1, 0.1, 0.1);
    CHECK(s.alpha(1) == doctest::Approx(0.9));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9));
    CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("linear T=10 cumulative product matches the naive-loop oracle") {
    const auto s = make_schedule(ScheduleKind::LinearBeta, 10, 1e-4, 0.02);
    // independent oracle: plain running product over linearly spaced betas
    double prod = 1.0;
    for (int t = 1; t <= 10; ++t) {
        const double beta = 1e-4 + (t - 1) * (0.02 - 1e-4) / 9.0;
        prod *= 1.0 - beta;
    }
    CHECK(s.alpha_bar(10) == doctest::Approx(prod).epsilon(1e-12));
    // golden constant frozen from the oracle
    CHECK(s.alpha_bar(10) == doctest::Approx(0.9037394161512371).epsilon(1e-12));
}

TEST_CASE("alpha_bar equals the running product within 1e-12 and decreases") {
    for (const auto kind : {ScheduleKind::LinearBeta, ScheduleKind::SquaredCosine}) {
        for (const int t_count : {1, 10, 100}) {
            const auto s = make_schedule(kind, t_count, 1e-4, 0.02);
            double prod = 1.0;
            double prev = 1.0 + 1e-9;
            for (int t = 1; t <= t_count; ++t) {
                prod *= s.alpha(t);
                CHECK(std::abs(s.alpha_bar(t) - prod) <= 1e-12);
                CHECK(s.alpha_bar(t) < prev);
                CHECK(s.alpha_bar(t) > 0.0);
                CHECK(s.alpha_bar(t) < 1.0);
                prev = s.alpha_bar(t);
            }
        }
    }
}

TEST_CASE("schedule construction rejects bad arguments") {
    CHECK_THROWS_AS(make_schedule(ScheduleKind::LinearBeta, 0, 1e-4, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::LinearBeta, 10, 0.0, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::LinearBeta, 10, 0.03, 0.02), Error);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::LinearBeta, 10, 1e-4, 1.0), Error);
}

TEST_CASE("forward_diffuse basics and golden value") {
    const auto s = make_schedule(ScheduleKind::LinearBeta, 10, 1e-4, 0.02);
    const Array a0({3}, {1.0, -2.0, 0.5});
    SUBCASE("zero noise scales by sqrt(alpha_bar)") {
        const Array zero({3});
        const Array out = forward_diffuse(a0, 5, zero, s);
        const double ca = std::sqrt(s.alpha_bar(5));
        for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(ca * a0[i]));
    }
    SUBCASE("t out of range") {
        const Array zero({3});
        CHECK_THROWS_AS(forward_diffuse(a0, 0, zero, s), Error);
        CHECK_THROWS_AS(forward_diffuse(a0, 11, zero, s), Error);
    }
    SUBCASE("scalar golden: abar=0.25, noise=1") {
        // schedule with alpha_bar(1) = 0.25 exactly
        const auto s1 = make_schedule(ScheduleKind::LinearBeta, 1, 0.75, 0.75);
        const Array x({1}, {2.0});
        const Array noise({1}, {1.0});
        const Array out = forward_diffuse(x, 1, noise, s1);
        CHECK(out[0] == doctest::Approx(1.8660254037844386).epsilon(1e-9));
    }
}

TEST_CASE("forward-marginal statistics over 10k draws") {
    const auto s = make_schedule(ScheduleKind::LinearBeta, 100, 1e-4, 0.02);
    const double a0 = 2.0;
    Rng rng(2024);
    for (const int t : {1, 50, 100}) {
        const int n = 10000;
        double sum = 0.0, sum2 = 0.0;
        const Array x({1}, {a0});
        for (int i = 0; i < n; ++i) {
            Array noise({1}, {rng.normal()});
            const double v = forward_diffuse(x, t, noise, s)[0];
            sum += v;
            sum2 += v * v;
        }
        const double mean = sum / n;
        const double var = sum2 / n - mean * mean;
        const double want_mean = std::sqrt(s.alpha_bar(t)) * a0;
        const double want_var = 1.0 - s.alpha_bar(t);
        CHECK(std::abs(mean - want_mean) / std::abs(want_mean) < 0.02);
        CHECK(std::abs(var - want_var) / want_var < 0.02);
    }
}

namespace {

// Schedule with chosen alpha(t)/alpha_bar(t) values for golden-step checks.
NoiseSchedule handmade(std::vector<double> alphas) {
    NoiseSchedule s;
    s.kind = ScheduleKind::LinearBeta;
    s.steps = static_cast<int>(alphas.size());
    s.alphas = std::move(alphas);
    double prod = 1.0;
    for (double a : s.alphas) {
        prod *= a;
        s.alpha_bars.push_back(prod);
        s.sigmas.push_back(0.0);
    }
    return s;
}

}  // namespace

TEST_CASE("ddpm_step golden and degenerate cases") {
    SUBCASE("zero prediction, zero sigma") {
        auto s = handmade({0.81});
        const Array a({2}, {1.0, -0.5});
        const Array eps({2});
        const Array z({2});
        const Array out = ddpm_step(a, eps, 1, s, z);
        CHECK(out[0] == doctest::Approx(1.0 / 0.9));
        CHECK(out[1] == doctest::Approx(-0.5 / 0.9));
    }
    SUBCASE("scalar golden: alpha=0.99, abar=0.5") {
        // alpha_2 = 0.99 with abar_2 = 0.5 by construction
        auto s = handmade({0.5 / 0.99, 0.99});
        const Array a({1}, {1.0});
        const Array eps({1}, {0.2});
        const Array z({1});
        const Array out = ddpm_step(a, eps, 2, s, z);
        CHECK(out[0] == doctest::Approx(1.0021951390411372).epsilon(1e-9));
        CHECK(std::abs(out[0] - 1.002196) <= 1e-6);  // printed-value cross-check
    }
    SUBCASE("alpha-scaled diagnostic variant differs by the leading factor") {
        auto s = handmade({0.81});
        const Array a({1}, {1.0});
        const Array eps({1});
        const Array z({1});
        CHECK(ddpm_step_alpha_scaled(a, eps, 1, s, z)[0] == doctest::Approx(0.81));
        CHECK(ddpm_step(a, eps, 1, s, z)[0] == doctest::Approx(1.0 / 0.9));
    }
}

TEST_CASE("ddim_step golden, degenerate no-op, and errors") {
    SUBCASE("degenerate: abar_prev == abar_t with eta 0 returns input") {
        // two steps with alpha_2 = 1 so abar does not change
        auto s = handmade({0.25, 1.0});
        const Array a({2}, {0.3, -1.2});
        const Array eps({2}, {0.5, 0.25});
        const Array z({2});
        const Array out = ddim_step(a, eps, 2, 1, 0.0, s, z);
        CHECK(out[0] == doctest::Approx(a[0]).epsilon(1e-12));
        CHECK(out[1] == doctest::Approx(a[1]).epsilon(1e-12));
    }
    SUBCASE("chained golden from the forward_diffuse example") {
        // abar_1 = 0.81, abar_2 = 0.25
        auto s = handmade({0.81, 0.25 / 0.81});
        const Array a({1}, {1.8660254037844386});
        const Array eps({1}, {1.0});
        const Array z({1});
        const Array out = ddim_step(a, eps, 2, 1, 0.0, s, z);
        CHECK(out[0] == doctest::Approx(2.2358898943540675).epsilon(1e-9));
    }
    SUBCASE("t_prev >= t is an error") {
        auto s = handmade({0.9, 0.9});
        const Array a({1}, {1.0});
        CHECK_THROWS_AS(ddim_step(a, a, 1, 1, 0.0, s, a), Error);
        CHECK_THROWS_AS(ddim_step(a, a, 1, 2, 0.0, s, a), Error);
    }
}

TEST_CASE("eta=0 DDIM trajectory is bit-deterministic and inverts a perfect oracle") {
    const auto s = make_schedule(ScheduleKind::SquaredCosine, 100, 1e-4, 0.02);
    Rng rng(99);
    Array a0({4, 2});
    for (int64_t i = 0; i < a0.numel(); ++i) a0[i] = rng.uniform(-1.0, 1.0);
    Array eps(a0.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();

    const auto ts = strided_steps(100, 10);
    REQUIRE(ts.front() == 100);
    REQUIRE(ts.back() > 0);

    auto run = [&] {
        Array a = forward_diffuse(a0, 100, eps, s);
        const Array z(a.shape());
        for (size_t i = 0; i < ts.size(); ++i) {
            const int t = ts[i];
            const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
            a = ddim_step(a, eps, t, t_prev, 0.0, s, z);
            // the perfect-oracle invariant: each strided step lands exactly on
            // the forward q-sample at t_prev
            if (t_prev > 0) {
                const Array want = forward_diffuse(a0, t_prev, eps, s);
                for (int64_t j = 0; j < a.numel(); ++j)
                    CHECK(std::abs(a[j] - want[j]) <= 1e-9);
            }
        }
        return a;
    };
    const Array r1 = run();
    const Array r2 = run();
    CHECK(r1.bit_equal(r2));
    for (int64_t j = 0; j < a0.numel(); ++j) CHECK(std::abs(r1[j] - a0[j]) <= 1e-9);
}

TEST_CASE("energy descent step") {
    const Array a({2}, {1.0, 1.0});
    const Array grad({2}, {1.0, -1.0});
    const Array out = energy_descent_step(a, grad, 0.5);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(1.5));
    const Array zero({2});
    const Array same = energy_descent_step(a, zero, 1.0);
    CHECK(same.bit_equal(a));
    const Array origin = energy_descent_step(a, a, 1.0);
    CHECK(origin[0] == 0.0);
    CHECK(origin[1] == 0.0);
    CHECK_THROWS_AS(energy_descent_step(a, grad, 0.0), Error);
}

TEST_CASE("schedule CSV dump is stable") {
    const auto s = make_schedule(ScheduleKind::LinearBeta, 3, 0.1, 0.3);
    const std::string csv = schedule_csv(s);
    CHECK(csv.rfind("t,alpha,alpha_bar,sigma\n", 0) == 0);
    CHECK(csv == schedule_csv(s));
    // three data rows
    int rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == 4);
}

TEST_CASE("strided step list covers T down to a positive floor") {
    const auto ts = strided_steps(100, 10);
    REQUIRE(ts.size() == 10);
    CHECK(ts.front() == 100);
    for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
    CHECK(ts.back() == 10);
    CHECK_THROWS_AS(strided_steps(10, 11), Error);
}
