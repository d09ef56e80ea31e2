#include "cdpauth/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"
#include "cdpauth/synth.hpp"

namespace cdpauth {

using nn::Mat;
using nn::Shape;

std::string to_string(CorpusTag t) {
    switch (t) {
    case CorpusTag::templates: return "templates";
    case CorpusTag::generic: return "generic";
    case CorpusTag::none: break;
    }
    return "none";
}

CorpusTag corpus_tag_from_string(const std::string& s) {
    if (s == "templates") return CorpusTag::templates;
    if (s == "generic") return CorpusTag::generic;
    if (s == "none") return CorpusTag::none;
    throw InvalidArgument("unknown corpus tag '" + s + "'");
}

void CodecConfig::validate() const {
    if (image_side < 1) throw InvalidConfiguration("codec.image_side must be positive");
    if (linear) return;
    if (width < 1 || latent_channels < 1) throw InvalidConfiguration("codec.width and codec.latent_channels must be positive");
    if (downsamples < 0 || downsamples > 4) throw InvalidConfiguration("codec.downsamples must be in [0, 4]");
    if (image_side % (1 << downsamples) != 0)
        throw InvalidConfiguration("codec.image_side must be divisible by 2^downsamples");
}

nlohmann::json to_json(const CodecConfig& c) {
    return {{"image_side", c.image_side},
            {"width", c.width},
            {"latent_channels", c.latent_channels},
            {"downsamples", c.downsamples},
            {"linear", c.linear}};
}

CodecConfig codec_config_from_json(const nlohmann::json& j) {
    CodecConfig c;
    c.image_side = j.value("image_side", c.image_side);
    c.width = j.value("width", c.width);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.downsamples = j.value("downsamples", c.downsamples);
    c.linear = j.value("linear", c.linear);
    c.validate();
    return c;
}

nlohmann::json to_json(const CodecHyperparams& h) {
    return {{"epochs", h.epochs}, {"batch_size", h.batch_size}, {"lr", h.lr}, {"seed", h.seed}};
}

CodecHyperparams codec_hyperparams_from_json(const nlohmann::json& j) {
    CodecHyperparams h;
    h.epochs = j.value("epochs", h.epochs);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.lr = j.value("lr", h.lr);
    h.seed = j.value("seed", h.seed);
    if (h.epochs < 1 || h.batch_size < 1 || !(h.lr > 0.0))
        throw InvalidConfiguration("codec training needs epochs >= 1, batch_size >= 1 and lr > 0");
    return h;
}

struct Codec::Net {
    nn::ParamStore<float> store;
    nn::Conv2d<float> enc_in, enc_out, dec_in, dec_out;
    std::vector<nn::Conv2d<float>> enc_down, dec_up;
    nn::Linear<float> enc_dense, dec_dense;

    // training caches
    std::vector<Mat<float>> pre;  // silu inputs in forward order
    std::vector<Shape> shapes;
};

Codec::Codec(const CodecConfig& config, std::uint64_t seed) : m_config(config), m_net(std::make_unique<Net>()) {
    m_config.validate();
    auto& n = *m_net;
    Rng rng(derive_seed(seed, {seed_tag::init}));
    if (m_config.linear) {
        const int px = m_config.image_side * m_config.image_side;
        n.enc_dense = nn::Linear<float>(n.store, "enc.dense", px, px);
        n.dec_dense = nn::Linear<float>(n.store, "dec.dense", px, px);
        // Orthogonal encoder keeps the toy well conditioned.
        std::normal_distribution<double> g(0.0, 1.0);
        Eigen::MatrixXd a(px, px);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        Eigen::MatrixXd q = qr.householderQ();
        auto& params = n.store.all();
        params[0].value = q.cast<float>();
        n.dec_dense.init(rng);
        return;
    }
    const int w = m_config.width;
    n.enc_in = nn::Conv2d<float>(n.store, "enc.in", 1, w, 3);
    for (int d = 0; d < m_config.downsamples; ++d)
        n.enc_down.emplace_back(n.store, "enc.down" + std::to_string(d), w, w, 3);
    n.enc_out = nn::Conv2d<float>(n.store, "enc.out", w, m_config.latent_channels, 1);
    n.dec_in = nn::Conv2d<float>(n.store, "dec.in", m_config.latent_channels, w, 1);
    for (int d = 0; d < m_config.downsamples; ++d)
        n.dec_up.emplace_back(n.store, "dec.up" + std::to_string(d), w, w, 3);
    n.dec_out = nn::Conv2d<float>(n.store, "dec.out", w, 1, 3);
    n.enc_in.init(rng);
    for (auto& c : n.enc_down) c.init(rng);
    n.enc_out.init(rng);
    n.dec_in.init(rng);
    for (auto& c : n.dec_up) c.init(rng);
    n.dec_out.init(rng);
}

Codec::~Codec() = default;

nn::ParamStore<float>& Codec::params() { return m_net->store; }
const nn::ParamStore<float>& Codec::params() const { return m_net->store; }

namespace {

Mat<float> stack_images(const std::vector<const Image*>& imgs, int side) {
    Mat<float> x(1, static_cast<Eigen::Index>(imgs.size()) * side * side);
    Eigen::Index k = 0;
    for (const Image* img : imgs) {
        if (img->rows != side || img->cols != side)
            throw InvalidArgument("codec: expected " + std::to_string(side) + "x" + std::to_string(side) + " images");
        for (double v : img->px) x(0, k++) = static_cast<float>(v);
    }
    return x;
}

// 1 x (B*n) <-> n x B
Mat<float> to_columns(const Mat<float>& x, int n) {
    const auto b = x.cols() / n;
    Mat<float> out(n, b);
    for (Eigen::Index j = 0; j < b; ++j)
        for (int i = 0; i < n; ++i) out(i, j) = x(0, j * n + i);
    return out;
}

Mat<float> from_columns(const Mat<float>& x) {
    Mat<float> out(1, x.size());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(0, j * x.rows() + i) = x(i, j);
    return out;
}

}  // namespace

std::vector<double> Codec::encode(const Image& img) const {
    const auto& n = *m_net;
    const int side = m_config.image_side;
    Mat<float> x = stack_images({&img}, side);
    if (m_config.linear) {
        const Mat<float> z = n.enc_dense.apply(to_columns(x, side * side));
        return std::vector<double>(z.data(), z.data() + z.size());
    }
    Shape s{1, side, side};
    Mat<float> h = nn::silu(n.enc_in.apply(x, s));
    for (const auto& c : n.enc_down) {
        h = nn::avg_pool2(nn::silu(c.apply(h, s)), s);
        s = {1, s.rows / 2, s.cols / 2};
    }
    const Mat<float> z = n.enc_out.apply(h, s);
    return std::vector<double>(z.data(), z.data() + z.size());
}

Image Codec::decode(const std::vector<double>& latent) const {
    const auto& n = *m_net;
    if (static_cast<int>(latent.size()) != m_config.latent_size())
        throw InvalidArgument("codec: latent has " + std::to_string(latent.size()) + " values, expected " +
                              std::to_string(m_config.latent_size()));
    const int side = m_config.image_side;
    Image out(side, side);
    if (m_config.linear) {
        Mat<float> z(latent.size(), 1);
        for (std::size_t i = 0; i < latent.size(); ++i) z(i, 0) = static_cast<float>(latent[i]);
        const Mat<float> y = n.dec_dense.apply(z);
        for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] = y(i, 0);
        return out;
    }
    const int ls = m_config.latent_side();
    Mat<float> z(m_config.latent_channels, ls * ls);
    for (std::size_t i = 0; i < latent.size(); ++i) z.data()[i] = static_cast<float>(latent[i]);
    Shape s{1, ls, ls};
    Mat<float> h = nn::silu(n.dec_in.apply(z, s));
    for (const auto& c : n.dec_up) {
        h = nn::upsample2(h, s);
        s = {1, s.rows * 2, s.cols * 2};
        h = nn::silu(c.apply(h, s));
    }
    const Mat<float> y = n.dec_out.apply(h, s);
    for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] = y(0, i);
    return out;
}

Image Codec::reconstruct(const Image& img) const { return decode(encode(img)); }

std::vector<Image> Codec::reconstruct(const std::vector<Image>& imgs) const {
    std::vector<Image> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs) out.push_back(reconstruct(img));
    return out;
}

void Codec::make_decoder_inverse() {
    if (!m_config.linear) throw InvalidArgument("make_decoder_inverse: only the linear codec has an analytic inverse");
    auto& params = m_net->store.all();  // enc.weight, enc.bias, dec.weight, dec.bias
    const Eigen::MatrixXd w = params[0].value.cast<double>();
    const Eigen::VectorXd b = params[1].value.col(0).cast<double>();
    const Eigen::MatrixXd inv = w.partialPivLu().inverse();
    params[2].value = inv.cast<float>();
    params[3].value = (-(inv * b)).cast<float>();
}

double Codec::loss_and_gradient(const std::vector<const Image*>& batch) {
    auto& n = *m_net;
    const int side = m_config.image_side;
    const Mat<float> x = stack_images(batch, side);
    const double count = static_cast<double>(x.size());
    Mat<float> y;
    if (m_config.linear) {
        const Mat<float> cols = to_columns(x, side * side);
        y = from_columns(n.dec_dense.forward(n.enc_dense.forward(cols, true), true));
    } else {
        n.pre.clear();
        n.shapes.clear();
        Shape s{static_cast<int>(batch.size()), side, side};
        n.shapes.push_back(s);
        n.pre.push_back(n.enc_in.forward(x, s, true));
        Mat<float> h = nn::silu(n.pre.back());
        for (auto& c : n.enc_down) {
            n.pre.push_back(c.forward(h, s, true));
            h = nn::avg_pool2(nn::silu(n.pre.back()), s);
            s = {s.batch, s.rows / 2, s.cols / 2};
            n.shapes.push_back(s);
        }
        const Mat<float> z = n.enc_out.forward(h, s, true);
        n.pre.push_back(n.dec_in.forward(z, s, true));
        h = nn::silu(n.pre.back());
        for (auto& c : n.dec_up) {
            h = nn::upsample2(h, s);
            s = {s.batch, s.rows * 2, s.cols * 2};
            n.pre.push_back(c.forward(h, s, true));
            h = nn::silu(n.pre.back());
        }
        y = n.dec_out.forward(h, s, true);
    }

    const Mat<float> diff = y - x;
    const double loss = static_cast<double>(diff.cast<double>().squaredNorm()) / count;
    Mat<float> dy = diff * static_cast<float>(2.0 / count);

    if (m_config.linear) {
        const int px = side * side;
        n.enc_dense.backward(n.dec_dense.backward(to_columns(dy, px)));
        return loss;
    }
    // Walk the decoder, then the encoder, in reverse.
    std::size_t p = n.pre.size();
    const int depth = m_config.downsamples;
    Mat<float> dh = n.dec_out.backward(dy);
    for (int d = depth - 1; d >= 0; --d) {
        dh = nn::silu_backward(n.pre[--p], dh);
        dh = n.dec_up[d].backward(dh);
        dh = nn::upsample2_backward(dh, n.shapes[depth - d]);
    }
    dh = nn::silu_backward(n.pre[--p], dh);
    dh = n.dec_in.backward(dh);
    dh = n.enc_out.backward(dh);
    for (int d = depth - 1; d >= 0; --d) {
        dh = nn::avg_pool2_backward(dh, n.shapes[d]);
        dh = nn::silu_backward(n.pre[--p], dh);
        dh = n.enc_down[d].backward(dh);
    }
    dh = nn::silu_backward(n.pre[--p], dh);
    n.enc_in.backward(dh);
    n.pre.clear();
    return loss;
}

std::vector<Image> template_corpus(int n, int side, std::uint64_t seed) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i)
        out.push_back(gen_template(derive_seed(seed, {seed_tag::template_bits, static_cast<std::uint64_t>(i)}), side, i).pixels);
    return out;
}

std::vector<Image> generic_corpus(int n, int side, std::uint64_t seed) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {seed_tag::dataset, static_cast<std::uint64_t>(i)}));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Image img(side, side);
        for (double& v : img.px) v = u(rng);
        img = gaussian_blur(img, 1.5);
        const auto [lo, hi] = std::minmax_element(img.px.begin(), img.px.end());
        const double a = *lo, span = std::max(*hi - *lo, 1e-12);
        for (double& v : img.px) v = (v - a) / span;
        out.push_back(std::move(img));
    }
    return out;
}

double recon_mse(const Codec& codec, const std::vector<Image>& images) {
    if (images.empty()) throw InvalidArgument("recon_mse: empty image set");
    double total = 0.0;
    for (const auto& img : images) {
        if (img.rows != codec.config().image_side || img.cols != codec.config().image_side)
            throw InvalidArgument("recon_mse: image shape does not match the codec");
        total += mse(img, codec.reconstruct(img));
    }
    return total / images.size();
}

std::unique_ptr<Codec> train_codec(const std::vector<Image>& corpus, CorpusTag tag, const CodecConfig& config,
                                   const CodecHyperparams& hp) {
    if (corpus.empty()) throw InvalidArgument("train_codec: empty corpus");
    for (const auto& img : corpus)
        if (!img.same_shape(corpus.front())) throw InvalidArgument("train_codec: corpus images differ in shape");
    auto codec = std::make_unique<Codec>(config, hp.seed);
    codec->set_corpus(tag);
    CodecTraining log;
    log.loss_init = recon_mse(*codec, corpus);

    nn::Adam<float> adam(codec->params());
    nn::AdamOptions opts;
    const int per_epoch = static_cast<int>((corpus.size() + hp.batch_size - 1) / hp.batch_size);
    const long total = static_cast<long>(per_epoch) * hp.epochs;
    long step = 0;
    std::vector<int> order(corpus.size());
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(hp.seed, {seed_tag::train, static_cast<std::uint64_t>(epoch + 1)}));
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        for (int b = 0; b < per_epoch; ++b, ++step) {
            std::vector<const Image*> batch;
            for (std::size_t i = b * hp.batch_size; i < std::min(corpus.size(), static_cast<std::size_t>(b + 1) * hp.batch_size); ++i)
                batch.push_back(&corpus[order[i]]);
            codec->params().zero_grad();
            const double loss = codec->loss_and_gradient(batch);
            if (!std::isfinite(loss)) throw TrainingDiverged("codec training loss became non-finite at step " + std::to_string(step));
            sum += loss;
            nn::clip_grad_norm(codec->params(), 1.0);
            const double lr = hp.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total));
            adam.step(lr, opts);
        }
        log.loss_curve.push_back(sum / per_epoch);
    }
    log.loss_final = recon_mse(*codec, corpus);
    codec->set_training(std::move(log));
    return codec;
}

void save_codec(const std::filesystem::path& path, const Codec& codec, std::uint64_t seed) {
    Archive a;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : codec.params().all()) {
        params.push_back({{"name", p.name}, {"offset", a.blob.size()}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
        a.blob.insert(a.blob.end(), p.value.data(), p.value.data() + p.value.size());
    }
    const auto& t = codec.training();
    a.meta = {{"kind", "codec"},
              {"format_version", 1},
              {"config", to_json(codec.config())},
              {"corpus", to_string(codec.corpus())},
              {"seed", seed},
              {"training", {{"loss_curve", t.loss_curve}, {"loss_init", t.loss_init}, {"loss_final", t.loss_final}}},
              {"params", params}};
    write_archive(path, a);
}

std::unique_ptr<Codec> load_codec(const std::filesystem::path& path) {
    Archive a = read_archive(path, "codec");
    if (a.meta.value("format_version", -1) != 1)
        throw CompatibilityError("unsupported codec format_version in " + path.string());
    try {
        auto codec = std::make_unique<Codec>(codec_config_from_json(a.meta.at("config")), 0);
        codec->set_corpus(corpus_tag_from_string(a.meta.at("corpus").get<std::string>()));
        CodecTraining t;
        const auto& tj = a.meta.at("training");
        t.loss_curve = tj.at("loss_curve").get<std::vector<double>>();
        t.loss_init = tj.at("loss_init").get<double>();
        t.loss_final = tj.at("loss_final").get<double>();
        codec->set_training(std::move(t));
        const auto& entries = a.meta.at("params");
        auto& params = codec->params().all();
        if (entries.size() != params.size()) throw CompatibilityError("codec parameter count mismatch in " + path.string());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& e = entries[i];
            auto& p = params[i];
            const auto offset = e.at("offset").get<std::size_t>();
            if (e.at("name").get<std::string>() != p.name || e.at("rows").get<long>() != p.value.rows() ||
                e.at("cols").get<long>() != p.value.cols() || offset + p.value.size() > a.blob.size())
                throw CompatibilityError("codec parameter " + p.name + " does not match " + path.string());
            std::copy(a.blob.begin() + offset, a.blob.begin() + offset + p.value.size(), p.value.data());
        }
        return codec;
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError("malformed codec metadata in " + path.string() + ": " + e.what());
    }
}

}  // namespace cdpauth
