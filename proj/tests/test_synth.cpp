#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "cdpauth/baselines.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"
#include "cdpauth/synth.hpp"
#include "fixtures.hpp"

using namespace cdpauth;

namespace {

double ones_fraction(const Image& img) {
    return std::accumulate(img.px.begin(), img.px.end(), 0.0) / img.px.size();
}

}  // namespace

TEST_CASE("gen_template is binary, deterministic and balanced") {
    const auto a = gen_template(0, 32), b = gen_template(0, 32);
    CHECK(a.pixels == b.pixels);
    CHECK(a.pixels.rows == 32);
    CHECK(a.pixels.cols == 32);
    for (double v : a.pixels.px) CHECK((v == 0.0 || v == 1.0));
    CHECK(std::abs(ones_fraction(gen_template(0, 64).pixels) - 0.5) < 0.05);
    CHECK_FALSE(gen_template(1, 32).pixels == a.pixels);
    CHECK_THROWS_AS(gen_template(0, 4), InvalidArgument);
}

TEST_CASE("identity channel prints the template unchanged") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto t = gen_template(s, 16);
        CHECK(print_cdp(t, ChannelParams::identity(), s).pixels == t.pixels);
    }
}

TEST_CASE("printed outputs stay in [0,1] and keep the template shape") {
    ChannelParams harsh = hp55_channel();
    harsh.noise_std = 0.4;
    harsh.dot_gain = 0.3;
    const auto t = gen_template(3, 24);
    const auto p = print_cdp(t, harsh, 9);
    CHECK(p.pixels.same_shape(t.pixels));
    for (double v : p.pixels.px) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("channel noise has the configured standard deviation") {
    // Constant paper-white template: every stage before noise is flat, so the
    // pre-clamp noise residual is pure channel noise.
    BinaryTemplate t{0, Image(128, 128, 1.0)};
    ChannelParams c;
    c.noise_std = 0.05;
    c.blur_sigma = 0.8;
    const auto s = print_cdp_stages(t, c, 4);
    double sum = 0, sq = 0;
    int n = 0;
    for (int r = 4; r < 124; ++r)
        for (int col = 4; col < 124; ++col) {
            const double d = s.noised(r, col) - s.toned(r, col);
            sum += d;
            sq += d * d;
            ++n;
        }
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(n >= 10000);
    CHECK(sd == doctest::Approx(0.05).epsilon(0.2));
}

TEST_CASE("channel parameter validation") {
    ChannelParams c;
    c.dot_gain = 0.5;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.blur_sigma = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.shift = {0.7, 0.0};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.gamma = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK_NOTHROW(hp55_channel().validate());
}

TEST_CASE("estimate_template") {
    SUBCASE("two-level image is recovered exactly") {
        const auto t = gen_template(5, 16);
        PrintedCdp p{0, 0, t.pixels};
        for (double& v : p.pixels.px) v = v > 0.5 ? 0.9 : 0.1;
        CHECK(estimate_template(p).pixels == t.pixels);
    }
    SUBCASE("identity print round trip") {
        const auto t = gen_template(6, 32);
        CHECK(estimate_template(print_cdp(t, ChannelParams::identity(), 1)).pixels == t.pixels);
    }
    SUBCASE("constant image is degenerate") {
        PrintedCdp p{0, 0, Image(8, 8, 0.5)};
        CHECK_THROWS_AS(estimate_template(p), DegenerateInput);
    }
}

TEST_CASE("make_counterfeit") {
    const auto t = gen_template(7, 32);
    SUBCASE("identity channels lose nothing") {
        const auto id = ChannelParams::identity();
        CHECK(make_counterfeit(t, id, id, 3).pixels == print_cdp(t, id, 3).pixels);
    }
    SUBCASE("deterministic") {
        CHECK(make_counterfeit(t, hp55_channel(), hp76_channel(), 5).pixels ==
              make_counterfeit(t, hp55_channel(), hp76_channel(), 5).pixels);
    }
    SUBCASE("a degrading source channel lowers correlation with the template") {
        ChannelParams src = hp55_channel();
        src.blur_sigma = 1.0;
        src.noise_std = 0.1;
        double authentic = 0, counterfeit = 0;
        for (int i = 0; i < 50; ++i) {
            const auto tmpl = gen_template(100 + i, 32);
            authentic += ncc(tmpl.pixels, print_cdp(tmpl, src, i).pixels);
            counterfeit += ncc(tmpl.pixels, make_counterfeit(tmpl, src, src, i).pixels);
        }
        CHECK(counterfeit / 50 < authentic / 50);
    }
}

TEST_CASE("class table validation") {
    auto classes = default_classes();
    CHECK_NOTHROW(validate_class_table(classes));
    CHECK(classes.size() == 6);
    CHECK(expected_authentic_class(classes, find_class(classes, "HP76_55")) == find_class(classes, "HP76"));
    CHECK(expected_authentic_class(classes, find_class(classes, "HP55_76")) == find_class(classes, "HP55"));

    SUBCASE("label format must match authenticity") {
        classes[2].is_authentic = true;
        CHECK_THROWS_AS(validate_class_table(classes), InvalidConfiguration);
    }
    SUBCASE("ids must be contiguous") {
        classes[3].class_id = 9;
        CHECK_THROWS_AS(validate_class_table(classes), InvalidConfiguration);
    }
    SUBCASE("a printer code maps to one channel") {
        classes[2].source_channel.noise_std += 0.01;
        CHECK_THROWS_AS(validate_class_table(classes), InvalidConfiguration);
    }
    SUBCASE("different printers need different channels") {
        auto c = default_classes();
        for (auto& cls : c) {
            cls.source_channel = hp55_channel();
            if (cls.reprint_channel) cls.reprint_channel = hp55_channel();
        }
        CHECK_THROWS_AS(validate_class_table(c), InvalidConfiguration);
    }
}

TEST_CASE("build_dataset layout") {
    const auto ds = build_dataset(default_classes(), 120, 11);
    CHECK(ds.manifest.samples.size() == 720);
    CHECK(ds.prints.size() == 720);
    std::vector<int> per_class(6, 0), per_template(120, 0);
    for (const auto& s : ds.manifest.samples) {
        ++per_class[s.class_id];
        ++per_template[s.template_id];
    }
    for (int n : per_class) CHECK(n == 120);
    for (int n : per_template) CHECK(n == 6);
    for (const auto& p : ds.prints)
        for (double v : p.pixels.px) CHECK(std::abs(v * 255 - std::round(v * 255)) < 1e-9);
}

TEST_CASE("build_dataset rejects an inconsistent class table") {
    auto classes = default_classes();
    classes[4].label = "HP76";
    CHECK_THROWS_AS(build_dataset(classes, 4, 1), InvalidConfiguration);
}

TEST_CASE("dataset round trips through disk") {
    const auto dir = std::filesystem::temp_directory_path() / "cdpauth_test_dataset";
    std::filesystem::remove_all(dir);
    const auto ds = build_dataset(default_classes(), 5, 2, 16);
    write_dataset(dir, ds);
    const auto back = load_dataset(dir);
    CHECK(back.manifest.samples == ds.manifest.samples);
    REQUIRE(back.prints.size() == ds.prints.size());
    for (std::size_t i = 0; i < ds.prints.size(); ++i) CHECK(back.prints[i].pixels == ds.prints[i].pixels);
    for (int t = 0; t < 5; ++t) CHECK(back.templates[t].pixels == ds.templates[t].pixels);
    CHECK(to_json(back.manifest) == to_json(ds.manifest));

    auto j = to_json(ds.manifest);
    j["schema_version"] = 99;
    CHECK_THROWS_AS(manifest_from_json(j), CompatibilityError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), IoError);
}

TEST_CASE("seed derivation separates streams") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}
