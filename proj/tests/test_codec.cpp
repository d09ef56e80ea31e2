#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "cdpauth/codec.hpp"
#include "cdpauth/error.hpp"
#include "fixtures.hpp"

using namespace cdpauth;

namespace {

CodecConfig small_config() {
    CodecConfig c;
    c.image_side = 8;
    c.width = 4;
    c.latent_channels = 2;
    c.downsamples = 1;
    return c;
}

}  // namespace

TEST_CASE("linear codec with an exact inverse decoder reconstructs losslessly") {
    CodecConfig c;
    c.image_side = 16;
    c.linear = true;
    Codec codec(c, 3);
    codec.make_decoder_inverse();
    const auto imgs = template_corpus(4, 16, 9);
    CHECK(recon_mse(codec, imgs) < 1e-10);
    CHECK(recon_mse(codec, {fixture::image_a()}) < 1e-10);
    CHECK_THROWS_AS(Codec(small_config(), 1).make_decoder_inverse(), InvalidArgument);
}

TEST_CASE("reconstruction error: nonnegative, order-free, deterministic") {
    const Codec a(small_config(), 7), b(small_config(), 7);
    auto imgs = generic_corpus(6, 8, 2);
    const double e = recon_mse(a, imgs);
    CHECK(e >= 0.0);
    CHECK(recon_mse(b, imgs) == e);
    std::reverse(imgs.begin(), imgs.end());
    CHECK(recon_mse(a, imgs) == doctest::Approx(e).epsilon(1e-12));
    for (const auto& img : imgs) {
        CHECK(recon_mse(a, {img}) >= 0.0);
        CHECK(a.reconstruct(img) == b.reconstruct(img));
    }
}

TEST_CASE("shapes and argument errors") {
    const auto c = small_config();
    const Codec codec(c, 1);
    CHECK(c.latent_side() == 4);
    CHECK(codec.encode(fixture::noise_image(8, 8, 1)).size() == static_cast<std::size_t>(c.latent_size()));
    const Image r = codec.decode(std::vector<double>(c.latent_size(), 0.1));
    CHECK(r.rows == 8);
    CHECK(r.cols == 8);
    CHECK_THROWS_AS(codec.encode(Image(8, 7)), InvalidArgument);
    CHECK_THROWS_AS(codec.decode(std::vector<double>(3)), InvalidArgument);
    CHECK_THROWS_AS(recon_mse(codec, {}), InvalidArgument);
    CHECK_THROWS_AS(recon_mse(codec, {Image(16, 16)}), InvalidArgument);
    CHECK_THROWS_AS(train_codec({}, CorpusTag::templates, c, {}), InvalidArgument);
    auto bad = c;
    bad.image_side = 6;
    bad.downsamples = 2;
    CHECK_THROWS_AS(bad.validate(), InvalidConfiguration);
    CHECK(corpus_tag_from_string(to_string(CorpusTag::generic)) == CorpusTag::generic);
    CHECK_THROWS_AS(corpus_tag_from_string("imagenet"), InvalidArgument);
}

TEST_CASE("corpora are deterministic and in range") {
    CHECK(template_corpus(3, 8, 5)[2] == template_corpus(3, 8, 5)[2]);
    CHECK(generic_corpus(3, 8, 5)[1] == generic_corpus(3, 8, 5)[1]);
    CHECK(generic_corpus(3, 8, 5)[1] != generic_corpus(3, 8, 6)[1]);
    for (const auto& img : generic_corpus(4, 8, 1)) {
        CHECK(*std::min_element(img.px.begin(), img.px.end()) == doctest::Approx(0.0));
        CHECK(*std::max_element(img.px.begin(), img.px.end()) == doctest::Approx(1.0));
    }
    for (const auto& img : template_corpus(4, 8, 1))
        for (double v : img.px) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("training lowers the loss, is reproducible and survives a round trip") {
    const auto corpus = template_corpus(32, 8, 4);
    CodecHyperparams hp;
    hp.epochs = 15;
    hp.batch_size = 8;
    hp.seed = 11;
    const auto a = train_codec(corpus, CorpusTag::templates, small_config(), hp);
    const auto b = train_codec(corpus, CorpusTag::templates, small_config(), hp);
    CHECK(a->training().loss_final < a->training().loss_init);
    CHECK(a->training().loss_curve.size() == 15);
    CHECK(a->training().loss_curve == b->training().loss_curve);
    CHECK(recon_mse(*a, corpus) == doctest::Approx(a->training().loss_final).epsilon(1e-9));

    const auto path = std::filesystem::temp_directory_path() / "cdpauth_test_codec.ckpt";
    save_codec(path, *a, 11);
    const auto back = load_codec(path);
    CHECK(back->config() == a->config());
    CHECK(back->corpus() == CorpusTag::templates);
    CHECK(recon_mse(*back, corpus) == recon_mse(*a, corpus));
    std::filesystem::remove(path);
}
