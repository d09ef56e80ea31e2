#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/denoiser.hpp"
#include "cdpauth/error.hpp"
#include "fixtures.hpp"
#include "oracle_values.hpp"

using namespace cdpauth;

namespace {

std::vector<TrainingPair> small_pairs(const Dataset& ds, int n) {
    std::vector<TrainingPair> out;
    for (int i = 0; i < n; ++i) {
        const auto& p = ds.prints[(i * 5) % ds.prints.size()];
        out.push_back({ds.template_for(p).pixels, p.pixels, p.class_id});
    }
    return out;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) m = std::max(m, std::abs(a.px[i] - b.px[i]));
    return m;
}

}  // namespace

TEST_CASE("gradients match central finite differences in double precision") {
    const auto ds = build_dataset(default_classes(), 4, 3, 8);
    const auto sched = NoiseSchedule::default_schedule();
    BasicDenoiser<double> model(fixture::tiny_config(), ds.manifest.classes, 200, 5);
    // The injection projections start at zero; give them values so their
    // downstream paths carry gradient too.
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 0.3);
    for (auto& p : model.params().all())
        if (p.name.find("inject") != std::string::npos)
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);

    const auto pairs = small_pairs(ds, 4);
    std::vector<int> ts{3, 40, 120, 199};
    std::vector<Image> noise;
    for (int i = 0; i < 4; ++i) noise.push_back(fixture::noise_image(8, 8, 20 + i, -1.5, 1.5));

    model.params().zero_grad();
    loss_and_gradient(model, sched, pairs, ts, noise);

    int checked = 0;
    double worst = 0;
    std::uniform_int_distribution<int> pick(0, 1 << 30);
    for (auto& p : model.params().all()) {
        for (int k = 0; k < 2; ++k) {
            const auto idx = pick(rng) % p.value.size();
            double& w = p.value.data()[idx];
            const double g = p.grad.data()[idx];
            const double orig = w;
            w = orig + 1e-5;
            const double up = batch_loss(model, sched, pairs, ts, noise);
            w = orig - 1e-5;
            const double down = batch_loss(model, sched, pairs, ts, noise);
            w = orig;
            const double fd = (up - down) / 2e-5;
            const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-8});
            worst = std::max(worst, rel);
            INFO(p.name << "[" << idx << "] analytic " << g << " numeric " << fd);
            CHECK(rel < 1e-4);
            ++checked;
        }
    }
    CHECK(checked >= 10);
    MESSAGE("worst relative gradient error " << worst << " over " << checked << " parameters");
}

TEST_CASE("conditioning branch is inert at initialization") {
    const auto classes = default_classes();
    const Denoiser model(DenoiserConfig{}, classes, 200, 1);
    const Image xt = fixture::noise_image(32, 32, 1, -1, 1);
    const Image z1 = fixture::noise_image(32, 32, 2), z2 = fixture::noise_image(32, 32, 3);
    for (int c = 0; c < 6; ++c) CHECK(max_abs_diff(predict_noise(model, xt, 50, z1, c), predict_noise(model, xt, 50, z2, c)) < 1e-6);
}

TEST_CASE("without the branch z is ignored even after parameter changes") {
    auto cfg = fixture::tiny_config();
    cfg.cond_branch = false;
    Denoiser model(cfg, default_classes(), 200, 1);
    for (auto& p : model.params().all()) p.value.array() += 0.05f;
    const Image xt = fixture::noise_image(8, 8, 1, -1, 1);
    CHECK(predict_noise(model, xt, 9, fixture::noise_image(8, 8, 2), 2) ==
          predict_noise(model, xt, 9, fixture::noise_image(8, 8, 3), 2));
}

TEST_CASE("prediction shape, determinism and class dependence") {
    const auto classes = default_classes();
    const Denoiser a(fixture::tiny_config(), classes, 200, 7), b(fixture::tiny_config(), classes, 200, 7);
    REQUIRE(a.params().all().size() == b.params().all().size());
    for (std::size_t i = 0; i < a.params().all().size(); ++i)
        CHECK(a.params().all()[i].value == b.params().all()[i].value);
    const Image xt = fixture::noise_image(8, 8, 4, -1, 1), z = fixture::noise_image(8, 8, 5);
    const Image e = predict_noise(a, xt, 10, z, 0);
    CHECK(e.same_shape(xt));
    CHECK_FALSE(e == predict_noise(a, xt, 10, z, 1));
    CHECK_FALSE(e == predict_noise(a, xt, 11, z, 0));
}

TEST_CASE("batched inference matches single-image prediction") {
    const auto classes = default_classes();
    const Denoiser model(fixture::tiny_config(), classes, 200, 3);
    DenoiserBatch<float> batch;
    batch.side = 8;
    batch.x_t.resize(1, 3 * 64);
    batch.z.resize(1, 3 * 64);
    std::vector<Image> xs, zs;
    for (int i = 0; i < 3; ++i) {
        xs.push_back(fixture::noise_image(8, 8, 10 + i, -1, 1));
        zs.push_back(fixture::noise_image(8, 8, 20 + i));
        for (int p = 0; p < 64; ++p) {
            batch.x_t(0, i * 64 + p) = static_cast<float>(xs[i].px[p]);
            batch.z(0, i * 64 + p) = static_cast<float>(zs[i].px[p]);
        }
        batch.timesteps.push_back(5 + 60 * i);
        batch.class_ids.push_back(i * 2);
    }
    const auto out = model.infer(batch);
    for (int i = 0; i < 3; ++i) {
        const Image single = predict_noise(model, xs[i], 5 + 60 * i, zs[i], i * 2);
        for (int p = 0; p < 64; ++p) CHECK(out(0, i * 64 + p) == doctest::Approx(single.px[p]).epsilon(1e-5));
    }
}

TEST_CASE("predict_noise argument errors") {
    const Denoiser model(fixture::tiny_config(), default_classes(), 200, 3);
    const Image x(8, 8);
    CHECK_THROWS_AS(predict_noise(model, x, 10, x, 6), InvalidArgument);
    CHECK_THROWS_AS(predict_noise(model, x, 10, x, -1), InvalidArgument);
    CHECK_THROWS_AS(predict_noise(model, Image(16, 16), 10, Image(16, 16), 0), InvalidArgument);
    CHECK_THROWS_AS(predict_noise(model, x, 10, Image(8, 4), 0), InvalidArgument);
    CHECK_THROWS_AS(predict_noise(model, x, 0, x, 0), InvalidArgument);
}

TEST_CASE("config validation") {
    auto c = DenoiserConfig{};
    c.depth = 1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.base_width = 4;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    CHECK(c.accepts_side(32));
    CHECK(c.accepts_side(24));
    CHECK_FALSE(c.accepts_side(30));
    CHECK_THROWS_AS(Denoiser(c, {}, 200, 0), InvalidArgument);
}

TEST_CASE("identity embeddings") {
    const auto classes = default_classes();
    auto cfg = fixture::tiny_config();
    SUBCASE("structured: classes with one source printer share that part of the vector") {
        const Denoiser model(cfg, classes, 200, 2);
        const auto& v = model.vocabulary();
        CHECK(v.printers == std::vector<std::string>{"55", "76"});
        CHECK(v.source_row[0] == v.source_row[2]);
        CHECK(v.source_row[0] == v.source_row[3]);
        CHECK(v.source_row[1] == v.source_row[4]);
        CHECK(v.reprint_row[0] == 0);
        CHECK(v.reprint_row[2] == v.reprint_row[5]);
        CHECK(model.class_embedding(0).size() == static_cast<std::size_t>(cfg.class_embed_dim));
        CHECK(model.class_embedding(0) != model.class_embedding(2));
    }
    SUBCASE("index: one vector per class") {
        cfg.identity_mode = IdentityMode::index;
        const Denoiser model(cfg, classes, 200, 2);
        CHECK(model.class_embedding(3).size() == static_cast<std::size_t>(cfg.class_embed_dim));
        for (int a = 0; a < 6; ++a)
            for (int b = a + 1; b < 6; ++b) CHECK(model.class_embedding(a) != model.class_embedding(b));
    }
}

TEST_CASE("timestep features") {
    const auto f = timestep_features(37, 64);
    CHECK(f.size() == 64);
    CHECK(f[5] == doctest::Approx(oracle::tfeat_t37_sin5).epsilon(1e-12));
    CHECK(f[32 + 20] == doctest::Approx(oracle::tfeat_t37_cos20).epsilon(1e-12));
}

TEST_CASE("an optimizer step with learning rate 0 leaves parameters unchanged") {
    const auto ds = build_dataset(default_classes(), 4, 3, 8);
    Denoiser model(fixture::tiny_config(), ds.manifest.classes, 200, 5);
    std::vector<nn::Mat<float>> before;
    for (const auto& p : model.params().all()) before.push_back(p.value);
    std::vector<Image> noise;
    for (int i = 0; i < 4; ++i) noise.push_back(fixture::noise_image(8, 8, i, -1, 1));
    model.params().zero_grad();
    loss_and_gradient(model, NoiseSchedule::default_schedule(), small_pairs(ds, 4), {1, 2, 3, 4}, noise);
    nn::Adam<float> adam(model.params());
    adam.step(0.0, {});
    std::size_t i = 0;
    for (const auto& p : model.params().all()) CHECK(p.value == before[i++]);
}

TEST_CASE("learning-rate schedule: warmup then cosine decay") {
    Hyperparams hp;
    hp.lr = 1e-3;
    hp.warmup_steps = 10;
    CHECK(learning_rate(hp, 0, 100) == doctest::Approx(1e-4));
    CHECK(learning_rate(hp, 9, 100) == doctest::Approx(1e-3));
    CHECK(learning_rate(hp, 10, 100) == doctest::Approx(1e-3));
    CHECK(learning_rate(hp, 55, 100) == doctest::Approx(5e-4));
    CHECK(learning_rate(hp, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("training lowers the validation loss, is reproducible, and round trips through a checkpoint") {
    const auto ds = build_dataset(default_classes(), 12, 4, 8);
    const auto split = split_by_template(ds.manifest, {0.7, 0.1, 0.2}, 1);
    const auto sched = NoiseSchedule::default_schedule();
    Hyperparams hp;
    hp.epochs = 6;
    hp.batch_size = 16;
    hp.lr = 2e-3;
    hp.warmup_steps = 5;
    hp.seed = 3;
    hp.augment = AugmentParams::none(8);
    hp.augment.n_copies = 2;
    hp.val_batch = 16;

    Denoiser a(fixture::tiny_config(), ds.manifest.classes, 200, 9), b(fixture::tiny_config(), ds.manifest.classes, 200, 9);
    const auto ck = train(a, sched, ds, split, hp);
    const auto ck2 = train(b, sched, ds, split, hp);
    CHECK(ck.training.loss_curve.size() == 6);
    CHECK(ck.training.val_loss_final < ck.training.val_loss_init);
    CHECK(ck.training.loss_curve == ck2.training.loss_curve);
    CHECK(ck.params == ck2.params);
    for (std::size_t i = 1; i < ck.training.loss_curve_smoothed.size(); ++i)
        CHECK(ck.training.loss_curve_smoothed[i] <= ck.training.loss_curve_smoothed[i - 1]);

    const auto path = std::filesystem::temp_directory_path() / "cdpauth_test.ckpt";
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    CHECK(back.params == ck.params);
    CHECK(back.config == ck.config);
    CHECK(back.training.loss_curve == ck.training.loss_curve);
    const auto restored = load_model(back);
    const Image xt = fixture::noise_image(8, 8, 1, -1, 1), z = fixture::noise_image(8, 8, 2);
    CHECK(predict_noise(*restored, xt, 30, z, 3) == predict_noise(a, xt, 30, z, 3));

    SUBCASE("archive kind and version are checked") {
        CHECK_THROWS_AS(read_archive(path, "codec"), CompatibilityError);
        auto arch = read_archive(path, "denoiser");
        arch.meta["format_version"] = 42;
        write_archive(path, arch);
        CHECK_THROWS_AS(load_checkpoint(path), CompatibilityError);
    }
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("training errors") {
    const auto ds = build_dataset(default_classes(), 6, 4, 8);
    auto split = split_by_template(ds.manifest, {0.5, 0.25, 0.25}, 1);
    const auto sched = NoiseSchedule::default_schedule();
    Hyperparams hp;
    hp.epochs = 1;
    hp.augment = AugmentParams::none(8);
    SUBCASE("empty train split") {
        Denoiser m(fixture::tiny_config(), ds.manifest.classes, 200, 1);
        split.train.clear();
        CHECK_THROWS_AS(train(m, sched, ds, split, hp), InvalidArgument);
    }
    SUBCASE("non-finite loss") {
        Denoiser m(fixture::tiny_config(), ds.manifest.classes, 200, 1);
        for (auto& p : m.params().all())
            if (p.name == "trunk.out.bias") p.value.setConstant(std::numeric_limits<float>::quiet_NaN());
        CHECK_THROWS_AS(train(m, sched, ds, split, hp), TrainingDiverged);
    }
}

TEST_CASE("collect_pairs maps classes by label and skips unknown ones") {
    const auto ds = build_dataset(default_classes(), 4, 4, 8);
    std::vector<PrinterClass> subset{default_classes()[1], default_classes()[4]};
    subset[0].class_id = 0;
    subset[1].class_id = 1;
    const auto pairs = collect_pairs(ds, {0, 2}, subset, X0Source::template_image);
    CHECK(pairs.size() == 4);
    for (const auto& p : pairs) CHECK((p.class_id == 0 || p.class_id == 1));
    const auto self = collect_pairs(ds, {0}, default_classes(), X0Source::printed_probe);
    for (const auto& p : self) CHECK(p.x0 == p.z);
}
