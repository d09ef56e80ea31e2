#include <doctest.h>

#include <random>

#include "cdpauth/error.hpp"
#include "cdpauth/schedule.hpp"
#include "cdpauth/synth.hpp"
#include "fixtures.hpp"
#include "oracle_values.hpp"

using namespace cdpauth;

TEST_CASE("two-step schedule has the closed-form products") {
    const auto s = NoiseSchedule::make(2, 0.5, 0.5);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("default schedule matches the reference cumulative product") {
    const auto s = NoiseSchedule::default_schedule();
    CHECK(s.steps() == 200);
    CHECK(s.alpha_bar(1) == doctest::Approx(oracle::alpha_bar_t1).epsilon(1e-12));
    CHECK(s.alpha_bar(2) == doctest::Approx(oracle::alpha_bar_t2).epsilon(1e-12));
    CHECK(s.alpha_bar(50) == doctest::Approx(oracle::alpha_bar_t50).epsilon(1e-12));
    CHECK(s.alpha_bar(100) == doctest::Approx(oracle::alpha_bar_t100).epsilon(1e-12));
    CHECK(s.alpha_bar(200) == doctest::Approx(oracle::alpha_bar_t200).epsilon(1e-12));
    CHECK(s.beta(100) == doctest::Approx(oracle::beta_t100).epsilon(1e-12));
    CHECK(s.alpha_bar(200) < 0.15);
}

TEST_CASE("schedule invariants") {
    for (auto [steps, b0, b1] : {std::tuple{200, 1e-4, 0.02}, std::tuple{50, 1e-3, 0.05}, std::tuple{1000, 1e-4, 0.02}}) {
        const auto s = NoiseSchedule::make(steps, b0, b1);
        for (int t = 1; t <= steps; ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.alpha(t) > 0.0);
            CHECK(s.alpha(t) < 1.0);
            if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }
}

TEST_CASE("schedule parameter errors") {
    CHECK_THROWS_AS(NoiseSchedule::make(1, 1e-4, 0.02), InvalidArgument);
    CHECK_THROWS_AS(NoiseSchedule::make(10, 0.0, 0.02), InvalidArgument);
    CHECK_THROWS_AS(NoiseSchedule::make(10, 1e-4, 1.0), InvalidArgument);
    CHECK_THROWS_AS(NoiseSchedule::make(10, 0.02, 1e-4), InvalidArgument);
}

TEST_CASE("q_sample special cases") {
    const auto s = NoiseSchedule::default_schedule();
    const Image x0 = to_signed(fixture::image_a());
    const Image eps = fixture::noise_image(16, 16, 3, -2, 2);
    for (int t : {1, 17, 200}) {
        const Image zero_noise = q_sample(x0, t, Image(16, 16), s);
        const Image zero_signal = q_sample(Image(16, 16), t, eps, s);
        for (std::size_t i = 0; i < x0.px.size(); ++i) {
            CHECK(zero_noise.px[i] == s.signal_scale(t) * x0.px[i]);
            CHECK(zero_signal.px[i] == s.noise_scale(t) * eps.px[i]);
        }
        const Image back = predict_x0(q_sample(x0, t, eps, s), t, eps, s);
        for (std::size_t i = 0; i < x0.px.size(); ++i) CHECK(back.px[i] == doctest::Approx(x0.px[i]).epsilon(1e-9));
    }
}

TEST_CASE("q_sample errors") {
    const auto s = NoiseSchedule::default_schedule();
    CHECK_THROWS_AS(q_sample(Image(4, 4), 1, Image(4, 5), s), InvalidArgument);
    CHECK_THROWS_AS(q_sample(Image(4, 4), 0, Image(4, 4), s), InvalidArgument);
    CHECK_THROWS_AS(q_sample(Image(4, 4), 201, Image(4, 4), s), InvalidArgument);
}

TEST_CASE("terminal marginal is close to standard normal for unit-variance data") {
    const auto s = NoiseSchedule::default_schedule();
    const Image x0 = to_signed(gen_template(1, 128).pixels);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    Image eps(128, 128);
    for (double& v : eps.px) v = n(rng);
    const Image xt = q_sample(x0, 200, eps, s);
    CHECK(std::abs(mean(xt)) < 0.05);
    CHECK(variance(xt) > 0.9);
    CHECK(variance(xt) < 1.1);
}

TEST_CASE("schedule JSON round trip") {
    const auto s = NoiseSchedule::make(64, 2e-4, 0.03);
    const auto back = schedule_from_json(to_json(s));
    CHECK(back.alpha_bars() == s.alpha_bars());
    auto j = to_json(s);
    j["kind"] = "cosine";
    CHECK_THROWS_AS(schedule_from_json(j), InvalidConfiguration);
}
