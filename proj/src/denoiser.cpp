#include "cdpauth/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

using nn::Mat;
using nn::Shape;

std::string to_string(IdentityMode m) { return m == IdentityMode::index ? "index" : "structured"; }
std::string to_string(X0Source s) { return s == X0Source::template_image ? "template" : "printed_probe"; }

IdentityMode identity_mode_from_string(const std::string& s) {
    if (s == "index") return IdentityMode::index;
    if (s == "structured") return IdentityMode::structured;
    throw InvalidConfiguration("identity_mode must be 'index' or 'structured', got '" + s + "'");
}

X0Source x0_source_from_string(const std::string& s) {
    if (s == "template") return X0Source::template_image;
    if (s == "printed_probe") return X0Source::printed_probe;
    throw InvalidConfiguration("x0_source must be 'template' or 'printed_probe', got '" + s + "'");
}

void DenoiserConfig::validate() const {
    if (depth < 2) throw InvalidArgument("denoiser: depth must be >= 2");
    if (base_width < 8) throw InvalidArgument("denoiser: base_width must be >= 8");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw InvalidArgument("denoiser: time_embed_dim must be even");
    if (class_embed_dim < 1) throw InvalidArgument("denoiser: class_embed_dim must be >= 1");
    if (!accepts_side(image_side))
        throw InvalidArgument("denoiser: image_side " + std::to_string(image_side) + " is not a multiple of " +
                              std::to_string(1 << (depth - 1)));
}

bool DenoiserConfig::accepts_side(int side) const {
    const int unit = 1 << (depth - 1);
    return side >= unit && side % unit == 0;
}

nlohmann::json to_json(const DenoiserConfig& c) {
    return {{"base_width", c.base_width},
            {"depth", c.depth},
            {"time_embed_dim", c.time_embed_dim},
            {"class_embed_dim", c.class_embed_dim},
            {"identity_mode", to_string(c.identity_mode)},
            {"cond_branch", c.cond_branch},
            {"image_side", c.image_side},
            {"x0_source", to_string(c.x0_source)}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.base_width = j.value("base_width", c.base_width);
    c.depth = j.value("depth", c.depth);
    c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
    c.class_embed_dim = j.value("class_embed_dim", c.class_embed_dim);
    c.identity_mode = identity_mode_from_string(j.value("identity_mode", to_string(c.identity_mode)));
    c.cond_branch = j.value("cond_branch", c.cond_branch);
    c.image_side = j.value("image_side", c.image_side);
    c.x0_source = x0_source_from_string(j.value("x0_source", to_string(c.x0_source)));
    return c;
}

ClassVocabulary ClassVocabulary::build(const std::vector<PrinterClass>& classes, IdentityMode mode) {
    ClassVocabulary v;
    v.mode = mode;
    std::set<std::string> codes;
    for (const auto& c : classes) {
        v.labels.push_back(c.label);
        codes.insert(c.source_printer());
        if (!c.reprint_printer().empty()) codes.insert(c.reprint_printer());
    }
    v.printers.assign(codes.begin(), codes.end());
    auto row_of = [&](const std::string& code) {
        return static_cast<int>(std::find(v.printers.begin(), v.printers.end(), code) - v.printers.begin());
    };
    for (const auto& c : classes) {
        v.source_row.push_back(row_of(c.source_printer()));
        v.reprint_row.push_back(c.reprint_printer().empty() ? 0 : 1 + row_of(c.reprint_printer()));
    }
    return v;
}

std::vector<double> timestep_features(int t, int dim) {
    const int half = dim / 2;
    std::vector<double> f(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[i] = std::sin(t * freq);
        f[half + i] = std::cos(t * freq);
    }
    return f;
}

template <typename T>
struct BasicDenoiser<T>::Net {
    struct EncLevel {
        nn::Conv2d<T> conv_a, conv_b, inject;
        nn::Linear<T> emb;
    };
    struct DecLevel {
        nn::Conv2d<T> conv_a, conv_b;
        nn::Linear<T> emb;
    };
    struct BranchLevel {
        nn::Conv2d<T> conv;
        nn::Linear<T> emb;
    };

    // Activations retained by forward() for backward().
    struct Cache {
        std::vector<Shape> shapes;
        std::vector<int> class_ids;
        Mat<T> time_hidden, emb_sum;
        Mat<T> trunk_in_pre, branch_in_pre;
        std::vector<Mat<T>> enc_a_pre, enc_b_pre, branch_pre;
        std::vector<Mat<T>> dec_a_pre, dec_b_pre;  // indexed by level
    };

    nn::ParamStore<T> store;
    nn::Linear<T> time1, time2;
    nn::Param<T>* class_table = nullptr;    // index mode: K x E
    nn::Param<T>* source_table = nullptr;   // structured: P x E
    nn::Param<T>* reprint_table = nullptr;  // structured: (P + 1) x E, row 0 = none
    nn::Conv2d<T> trunk_in, trunk_out, branch_in;
    std::vector<EncLevel> enc;
    std::vector<DecLevel> dec;
    std::vector<BranchLevel> branch;
    Cache cache;
};

namespace {

int width_at(const DenoiserConfig& c, int level) { return c.base_width << level; }

}  // namespace

template <typename T>
BasicDenoiser<T>::BasicDenoiser(const DenoiserConfig& config, const std::vector<PrinterClass>& classes, int timesteps,
                                std::uint64_t seed)
    : m_config(config), m_classes(classes), m_timesteps(timesteps), m_net(std::make_unique<Net>()) {
    config.validate();
    if (classes.empty()) throw InvalidArgument("denoiser: class table is empty");
    if (timesteps < 2) throw InvalidArgument("denoiser: schedule needs T >= 2");
    m_vocab = ClassVocabulary::build(classes, config.identity_mode);

    auto& n = *m_net;
    auto& st = n.store;
    const int E = config.class_embed_dim;
    const int D = config.depth;
    n.time1 = nn::Linear<T>(st, "time.0", config.time_embed_dim, E);
    n.time2 = nn::Linear<T>(st, "time.1", E, E);
    if (config.identity_mode == IdentityMode::index) {
        n.class_table = st.add("identity.class", m_vocab.size(), E);
    } else {
        const int P = static_cast<int>(m_vocab.printers.size());
        n.source_table = st.add("identity.source", P, E);
        n.reprint_table = st.add("identity.reprint", P + 1, E);
    }
    n.trunk_in = nn::Conv2d<T>(st, "trunk.in", 1, width_at(config, 0), 3);
    for (int l = 0; l < D; ++l) {
        const int in = l == 0 ? width_at(config, 0) : width_at(config, l - 1);
        const int w = width_at(config, l);
        const std::string p = "enc" + std::to_string(l);
        typename Net::EncLevel lvl;
        lvl.conv_a = nn::Conv2d<T>(st, p + ".conv_a", in, w, 3);
        lvl.emb = nn::Linear<T>(st, p + ".emb", E, w);
        if (config.cond_branch) lvl.inject = nn::Conv2d<T>(st, p + ".inject", w, w, 1);
        lvl.conv_b = nn::Conv2d<T>(st, p + ".conv_b", w, w, 3);
        n.enc.push_back(std::move(lvl));
    }
    n.dec.resize(D - 1);
    for (int l = D - 2; l >= 0; --l) {
        const int w = width_at(config, l);
        const std::string p = "dec" + std::to_string(l);
        n.dec[l].conv_a = nn::Conv2d<T>(st, p + ".conv_a", width_at(config, l + 1) + w, w, 3);
        n.dec[l].emb = nn::Linear<T>(st, p + ".emb", E, w);
        n.dec[l].conv_b = nn::Conv2d<T>(st, p + ".conv_b", w, w, 3);
    }
    n.trunk_out = nn::Conv2d<T>(st, "trunk.out", width_at(config, 0), 1, 3);
    if (config.cond_branch) {
        n.branch_in = nn::Conv2d<T>(st, "branch.in", 1, width_at(config, 0), 3);
        for (int l = 0; l < D; ++l) {
            const int in = l == 0 ? width_at(config, 0) : width_at(config, l - 1);
            const std::string p = "branch" + std::to_string(l);
            typename Net::BranchLevel lvl;
            lvl.conv = nn::Conv2d<T>(st, p + ".conv", in, width_at(config, l), 3);
            lvl.emb = nn::Linear<T>(st, p + ".emb", E, width_at(config, l));
            n.branch.push_back(std::move(lvl));
        }
    }

    std::mt19937_64 rng(derive_seed(seed, {seed_tag::init}));
    n.time1.init(rng);
    n.time2.init(rng);
    if (n.class_table) nn::init_normal(*n.class_table, 1.0, rng);
    if (n.source_table) nn::init_normal(*n.source_table, 1.0, rng);
    if (n.reprint_table) nn::init_normal(*n.reprint_table, 1.0, rng);
    n.trunk_in.init(rng);
    for (auto& lvl : n.enc) {
        lvl.conv_a.init(rng);
        lvl.emb.init(rng);
        lvl.conv_b.init(rng);
        // inject stays exactly zero: the branch is inert until trained.
    }
    for (int l = D - 2; l >= 0; --l) {
        n.dec[l].conv_a.init(rng);
        n.dec[l].emb.init(rng);
        n.dec[l].conv_b.init(rng);
    }
    n.trunk_out.init(rng);
    if (config.cond_branch) {
        n.branch_in.init(rng);
        for (auto& lvl : n.branch) {
            lvl.conv.init(rng);
            lvl.emb.init(rng);
        }
    }
}

template <typename T>
BasicDenoiser<T>::~BasicDenoiser() = default;

template <typename T>
nn::ParamStore<T>& BasicDenoiser<T>::params() {
    return m_net->store;
}

template <typename T>
const nn::ParamStore<T>& BasicDenoiser<T>::params() const {
    return m_net->store;
}

template <typename T>
std::vector<T> BasicDenoiser<T>::class_embedding(int class_id) const {
    if (class_id < 0 || class_id >= num_classes()) throw InvalidArgument("unknown class id " + std::to_string(class_id));
    const auto& n = *m_net;
    Eigen::Matrix<T, 1, Eigen::Dynamic> row;
    if (n.class_table)
        row = n.class_table->value.row(class_id);
    else
        row = n.source_table->value.row(m_vocab.source_row[class_id]) +
              n.reprint_table->value.row(m_vocab.reprint_row[class_id]);
    return {row.data(), row.data() + row.size()};
}

namespace {

// Runs the network. With Keep, layer caches and pre-activations are stored for backward.
template <bool Keep, typename T, typename NetT, typename Vocab>
Mat<T> run_net(NetT& n, const DenoiserConfig& cfg, const Vocab& vocab, int num_timesteps,
               const DenoiserBatch<T>& batch) {
    const int B = batch.batch();
    const int D = cfg.depth;
    const int E = cfg.class_embed_dim;
    if (B == 0) return Mat<T>(1, 0);
    if (!cfg.accepts_side(batch.side))
        throw InvalidArgument("denoiser: side " + std::to_string(batch.side) + " not supported by depth " +
                              std::to_string(D));
    const Eigen::Index expected = static_cast<Eigen::Index>(B) * batch.side * batch.side;
    if (batch.x_t.rows() != 1 || batch.x_t.cols() != expected || batch.z.rows() != 1 || batch.z.cols() != expected ||
        static_cast<int>(batch.class_ids.size()) != B)
        throw InvalidArgument("denoiser: batch tensors have inconsistent shapes");

    auto conv = [](auto& layer, const Mat<T>& x, const Shape& s) {
        if constexpr (Keep)
            return layer.forward(x, s, true);
        else
            return layer.apply(x, s);
    };
    auto linear = [](auto& layer, const Mat<T>& x) {
        if constexpr (Keep)
            return layer.forward(x, true);
        else
            return layer.apply(x);
    };

    std::vector<Shape> shapes(D);
    for (int l = 0; l < D; ++l) shapes[l] = {B, batch.side >> l, batch.side >> l};

    // Embedding: time MLP + identity vector.
    Mat<T> tf(cfg.time_embed_dim, B);
    for (int b = 0; b < B; ++b) {
        const int t = batch.timesteps[b];
        if (t < 1 || t > num_timesteps)
            throw InvalidArgument("denoiser: timestep " + std::to_string(t) + " outside [1, " +
                                  std::to_string(num_timesteps) + "]");
        const auto f = timestep_features(t, cfg.time_embed_dim);
        for (int i = 0; i < cfg.time_embed_dim; ++i) tf(i, b) = static_cast<T>(f[i]);
    }
    Mat<T> time_hidden = linear(n.time1, tf);
    Mat<T> emb = linear(n.time2, nn::silu(time_hidden));
    for (int b = 0; b < B; ++b) {
        const int c = batch.class_ids[b];
        if (c < 0 || c >= vocab.size()) throw InvalidArgument("denoiser: unknown class id " + std::to_string(c));
        if (n.class_table)
            emb.col(b) += n.class_table->value.row(c).transpose();
        else
            emb.col(b) += (n.source_table->value.row(vocab.source_row[c]) +
                           n.reprint_table->value.row(vocab.reprint_row[c]))
                              .transpose();
    }
    (void)E;
    const Mat<T> se = nn::silu(emb);

    // Conditioning branch.
    std::vector<Mat<T>> branch_feat(D);
    Mat<T> branch_in_pre;
    std::vector<Mat<T>> branch_pre(D);
    if (cfg.cond_branch) {
        branch_in_pre = conv(n.branch_in, batch.z, shapes[0]);
        Mat<T> h = nn::silu(branch_in_pre);
        for (int l = 0; l < D; ++l) {
            if (l > 0) h = nn::avg_pool2(branch_feat[l - 1], shapes[l - 1]);
            Mat<T> pre = conv(n.branch[l].conv, h, shapes[l]);
            nn::add_channel_bias(pre, linear(n.branch[l].emb, se), shapes[l]);
            branch_feat[l] = nn::silu(pre);
            if constexpr (Keep) branch_pre[l] = std::move(pre);
        }
    }

    // Trunk encoder.
    Mat<T> trunk_in_pre = conv(n.trunk_in, batch.x_t, shapes[0]);
    std::vector<Mat<T>> skips(D), enc_a_pre(D), enc_b_pre(D);
    Mat<T> h = nn::silu(trunk_in_pre);
    for (int l = 0; l < D; ++l) {
        if (l > 0) h = nn::avg_pool2(skips[l - 1], shapes[l - 1]);
        Mat<T> a_pre = conv(n.enc[l].conv_a, h, shapes[l]);
        nn::add_channel_bias(a_pre, linear(n.enc[l].emb, se), shapes[l]);
        Mat<T> a = nn::silu(a_pre);
        if (cfg.cond_branch) a += conv(n.enc[l].inject, branch_feat[l], shapes[l]);
        Mat<T> b_pre = conv(n.enc[l].conv_b, a, shapes[l]);
        skips[l] = nn::silu(b_pre);
        if constexpr (Keep) {
            enc_a_pre[l] = std::move(a_pre);
            enc_b_pre[l] = std::move(b_pre);
        }
    }

    // Decoder.
    std::vector<Mat<T>> dec_a_pre(D), dec_b_pre(D);
    Mat<T> d = skips[D - 1];
    for (int l = D - 2; l >= 0; --l) {
        const Mat<T> up = nn::upsample2(d, shapes[l + 1]);
        Mat<T> cat(up.rows() + skips[l].rows(), up.cols());
        cat << up, skips[l];
        Mat<T> a_pre = conv(n.dec[l].conv_a, cat, shapes[l]);
        nn::add_channel_bias(a_pre, linear(n.dec[l].emb, se), shapes[l]);
        Mat<T> b_pre = conv(n.dec[l].conv_b, nn::silu(a_pre), shapes[l]);
        d = nn::silu(b_pre);
        if constexpr (Keep) {
            dec_a_pre[l] = std::move(a_pre);
            dec_b_pre[l] = std::move(b_pre);
        }
    }
    Mat<T> out = conv(n.trunk_out, d, shapes[0]);

    if constexpr (Keep) {
        auto& c = n.cache;
        c.shapes = shapes;
        c.class_ids = batch.class_ids;
        c.time_hidden = std::move(time_hidden);
        c.emb_sum = std::move(emb);
        c.trunk_in_pre = std::move(trunk_in_pre);
        c.branch_in_pre = std::move(branch_in_pre);
        c.enc_a_pre = std::move(enc_a_pre);
        c.enc_b_pre = std::move(enc_b_pre);
        c.branch_pre = std::move(branch_pre);
        c.dec_a_pre = std::move(dec_a_pre);
        c.dec_b_pre = std::move(dec_b_pre);
    }
    return out;
}

}  // namespace

template <typename T>
Mat<T> BasicDenoiser<T>::forward(const DenoiserBatch<T>& batch) {
    return run_net<true, T>(*m_net, m_config, m_vocab, m_timesteps, batch);
}

template <typename T>
Mat<T> BasicDenoiser<T>::infer(const DenoiserBatch<T>& batch) const {
    return run_net<false, T>(static_cast<const Net&>(*m_net), m_config, m_vocab, m_timesteps, batch);
}

template <typename T>
void BasicDenoiser<T>::backward(const Mat<T>& dout) {
    auto& n = *m_net;
    auto& c = n.cache;
    if (c.shapes.empty()) throw InvalidArgument("denoiser: backward() without a preceding forward()");
    const int D = m_config.depth;
    const auto& shapes = c.shapes;
    const int B = shapes[0].batch;

    Mat<T> g_se = Mat<T>::Zero(m_config.class_embed_dim, B);
    std::vector<Mat<T>> g_skip(D);
    auto add_to = [](Mat<T>& acc, const Mat<T>& g) {
        if (acc.size() == 0)
            acc = g;
        else
            acc += g;
    };

    // Decoder, in reverse order of the forward pass.
    Mat<T> g = n.trunk_out.backward(dout);
    for (int l = 0; l <= D - 2; ++l) {
        g = nn::silu_backward(c.dec_b_pre[l], g);
        g = n.dec[l].conv_b.backward(g);
        g = nn::silu_backward(c.dec_a_pre[l], g);
        g_se += n.dec[l].emb.backward(nn::channel_bias_backward(g, shapes[l]));
        const Mat<T> g_cat = n.dec[l].conv_a.backward(g);
        const int up_rows = width_at(m_config, l + 1);
        add_to(g_skip[l], g_cat.bottomRows(g_cat.rows() - up_rows));
        g = nn::upsample2_backward(Mat<T>(g_cat.topRows(up_rows)), shapes[l + 1]);
    }
    add_to(g_skip[D - 1], g);

    // Encoder.
    std::vector<Mat<T>> g_branch(D);
    Mat<T> g_trunk_in;
    for (int l = D - 1; l >= 0; --l) {
        Mat<T> gb = nn::silu_backward(c.enc_b_pre[l], g_skip[l]);
        const Mat<T> g_a = n.enc[l].conv_b.backward(gb);
        if (m_config.cond_branch) g_branch[l] = n.enc[l].inject.backward(g_a);
        Mat<T> ga = nn::silu_backward(c.enc_a_pre[l], g_a);
        g_se += n.enc[l].emb.backward(nn::channel_bias_backward(ga, shapes[l]));
        const Mat<T> g_in = n.enc[l].conv_a.backward(ga);
        if (l > 0)
            add_to(g_skip[l - 1], nn::avg_pool2_backward(g_in, shapes[l - 1]));
        else
            g_trunk_in = g_in;
    }
    n.trunk_in.backward(nn::silu_backward(c.trunk_in_pre, g_trunk_in));

    if (m_config.cond_branch) {
        Mat<T> g_branch_in;
        for (int l = D - 1; l >= 0; --l) {
            Mat<T> gp = nn::silu_backward(c.branch_pre[l], g_branch[l]);
            g_se += n.branch[l].emb.backward(nn::channel_bias_backward(gp, shapes[l]));
            const Mat<T> g_in = n.branch[l].conv.backward(gp);
            if (l > 0)
                g_branch[l - 1] += nn::avg_pool2_backward(g_in, shapes[l - 1]);
            else
                g_branch_in = g_in;
        }
        n.branch_in.backward(nn::silu_backward(c.branch_in_pre, g_branch_in));
    }

    // Embedding.
    const Mat<T> g_emb = nn::silu_backward(c.emb_sum, g_se);
    n.time1.backward(nn::silu_backward(c.time_hidden, n.time2.backward(g_emb)));
    for (int b = 0; b < B; ++b) {
        const int cls = c.class_ids[b];
        if (n.class_table) {
            n.class_table->grad.row(cls) += g_emb.col(b).transpose();
        } else {
            n.source_table->grad.row(m_vocab.source_row[cls]) += g_emb.col(b).transpose();
            n.reprint_table->grad.row(m_vocab.reprint_row[cls]) += g_emb.col(b).transpose();
        }
    }
    c = {};
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;

namespace {

template <typename T>
Mat<T> pack(const std::vector<const Image*>& images, int side) {
    Mat<T> m(1, static_cast<Eigen::Index>(images.size()) * side * side);
    Eigen::Index k = 0;
    for (const Image* img : images) {
        if (img->rows != side || img->cols != side) throw InvalidArgument("denoiser: image shape mismatch in batch");
        for (double v : img->px) m(0, k++) = static_cast<T>(v);
    }
    return m;
}

template <typename T>
DenoiserBatch<T> make_training_batch(const NoiseSchedule& schedule, const std::vector<TrainingPair>& pairs,
                                     const std::vector<int>& timesteps, const std::vector<Image>& noise,
                                     Mat<T>& eps_out) {
    if (pairs.empty() || pairs.size() != timesteps.size() || pairs.size() != noise.size())
        throw InvalidArgument("training batch: pairs, timesteps and noise must have equal nonzero length");
    const int side = pairs.front().x0.rows;
    std::vector<Image> xt, zs;
    xt.reserve(pairs.size());
    zs.reserve(pairs.size());
    DenoiserBatch<T> batch;
    batch.side = side;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        xt.push_back(q_sample(to_signed(pairs[i].x0), timesteps[i], noise[i], schedule));
        zs.push_back(to_signed(pairs[i].z));
        batch.class_ids.push_back(pairs[i].class_id);
    }
    batch.timesteps = timesteps;
    std::vector<const Image*> px, pz, pe;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        px.push_back(&xt[i]);
        pz.push_back(&zs[i]);
        pe.push_back(&noise[i]);
    }
    batch.x_t = pack<T>(px, side);
    batch.z = pack<T>(pz, side);
    eps_out = pack<T>(pe, side);
    return batch;
}

Image standard_normal_image(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Image img(rows, cols);
    for (double& v : img.px) v = n(rng);
    return img;
}

}  // namespace

Image predict_noise(const Denoiser& model, const Image& x_t, int t, const Image& z, int class_id) {
    const int side = model.config().image_side;
    if (x_t.rows != side || x_t.cols != side || z.rows != side || z.cols != side)
        throw InvalidArgument("predict_noise: inputs must be " + std::to_string(side) + "x" + std::to_string(side));
    if (class_id < 0 || class_id >= model.num_classes())
        throw InvalidArgument("predict_noise: unknown class id " + std::to_string(class_id));
    DenoiserBatch<float> batch;
    batch.side = side;
    batch.x_t = pack<float>({&x_t}, side);
    batch.z = pack<float>({&z}, side);
    batch.timesteps = {t};
    batch.class_ids = {class_id};
    const Mat<float> out = model.infer(batch);
    Image img(side, side);
    for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = out(0, static_cast<Eigen::Index>(i));
    return img;
}

template <typename T>
double batch_loss(const BasicDenoiser<T>& model, const NoiseSchedule& schedule, const std::vector<TrainingPair>& pairs,
                  const std::vector<int>& timesteps, const std::vector<Image>& noise) {
    Mat<T> eps;
    const auto batch = make_training_batch<T>(schedule, pairs, timesteps, noise, eps);
    const Mat<T> diff = model.infer(batch) - eps;
    return static_cast<double>(diff.squaredNorm()) / static_cast<double>(diff.size());
}

template <typename T>
double loss_and_gradient(BasicDenoiser<T>& model, const NoiseSchedule& schedule,
                         const std::vector<TrainingPair>& pairs, const std::vector<int>& timesteps,
                         const std::vector<Image>& noise) {
    Mat<T> eps;
    const auto batch = make_training_batch<T>(schedule, pairs, timesteps, noise, eps);
    const Mat<T> diff = model.forward(batch) - eps;
    const double n = static_cast<double>(diff.size());
    model.backward(diff * static_cast<T>(2.0 / n));
    return static_cast<double>(diff.squaredNorm()) / n;
}

template <typename T>
double evaluate_loss(const BasicDenoiser<T>& model, const NoiseSchedule& schedule,
                     const std::vector<TrainingPair>& pairs, std::uint64_t seed) {
    if (pairs.empty()) throw InvalidArgument("evaluate_loss: no pairs");
    Rng rng(seed);
    std::uniform_int_distribution<int> tdist(1, schedule.steps());
    std::vector<int> ts;
    std::vector<Image> noise;
    for (const auto& p : pairs) {
        ts.push_back(tdist(rng));
        noise.push_back(standard_normal_image(p.x0.rows, p.x0.cols, rng));
    }
    // Chunked to bound memory.
    constexpr std::size_t kChunk = 64;
    double total = 0.0;
    for (std::size_t i = 0; i < pairs.size(); i += kChunk) {
        const std::size_t j = std::min(pairs.size(), i + kChunk);
        const std::vector<TrainingPair> part(pairs.begin() + i, pairs.begin() + j);
        const std::vector<int> pt(ts.begin() + i, ts.begin() + j);
        const std::vector<Image> pn(noise.begin() + i, noise.begin() + j);
        total += batch_loss(model, schedule, part, pt, pn) * static_cast<double>(j - i);
    }
    return total / static_cast<double>(pairs.size());
}

template double batch_loss(const BasicDenoiser<float>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                           const std::vector<int>&, const std::vector<Image>&);
template double batch_loss(const BasicDenoiser<double>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                           const std::vector<int>&, const std::vector<Image>&);
template double loss_and_gradient(BasicDenoiser<float>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                                  const std::vector<int>&, const std::vector<Image>&);
template double loss_and_gradient(BasicDenoiser<double>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                                  const std::vector<int>&, const std::vector<Image>&);
template double evaluate_loss(const BasicDenoiser<float>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                              std::uint64_t);
template double evaluate_loss(const BasicDenoiser<double>&, const NoiseSchedule&, const std::vector<TrainingPair>&,
                              std::uint64_t);

std::vector<TrainingPair> collect_pairs(const Dataset& ds, const std::vector<int>& template_ids,
                                        const std::vector<PrinterClass>& model_classes, X0Source source) {
    std::vector<bool> wanted(ds.templates.size(), false);
    for (int id : template_ids) wanted.at(id) = true;
    std::vector<TrainingPair> pairs;
    for (const auto& p : ds.prints) {
        if (!wanted[p.template_id]) continue;
        const int model_class = find_class(model_classes, ds.manifest.classes.at(p.class_id).label);
        if (model_class < 0) continue;
        const Image& x0 = source == X0Source::template_image ? ds.template_for(p).pixels : p.pixels;
        pairs.push_back({x0, p.pixels, model_class});
    }
    return pairs;
}

nlohmann::json to_json(const Hyperparams& h) {
    return {{"batch_size", h.batch_size}, {"epochs", h.epochs},         {"lr", h.lr},
            {"warmup_steps", h.warmup_steps}, {"grad_clip", h.grad_clip}, {"seed", h.seed},
            {"augment", to_json(h.augment)},  {"val_batch", h.val_batch}};
}

Hyperparams hyperparams_from_json(const nlohmann::json& j) {
    Hyperparams h;
    h.batch_size = j.value("batch_size", h.batch_size);
    h.epochs = j.value("epochs", h.epochs);
    h.lr = j.value("lr", h.lr);
    h.warmup_steps = j.value("warmup_steps", h.warmup_steps);
    h.grad_clip = j.value("grad_clip", h.grad_clip);
    h.seed = j.value("seed", h.seed);
    if (j.contains("augment")) h.augment = augment_params_from_json(j.at("augment"));
    h.val_batch = j.value("val_batch", h.val_batch);
    return h;
}

double learning_rate(const Hyperparams& hp, long step, long total_steps) {
    if (hp.warmup_steps > 0 && step < hp.warmup_steps) return hp.lr * static_cast<double>(step + 1) / hp.warmup_steps;
    const long decay_steps = std::max<long>(1, total_steps - hp.warmup_steps);
    const double progress = std::clamp(static_cast<double>(step - hp.warmup_steps) / decay_steps, 0.0, 1.0);
    return hp.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Checkpoint train(Denoiser& model, const NoiseSchedule& schedule, const Dataset& ds, const SplitSpec& split,
                 const Hyperparams& hp, const ProgressFn& progress) {
    if (hp.batch_size < 1 || hp.epochs < 0) throw InvalidArgument("train: batch_size >= 1 and epochs >= 0 required");
    if (schedule.steps() != model.timesteps()) throw InvalidArgument("train: schedule length differs from the model's");
    const auto base = collect_pairs(ds, split.train, model.classes(), model.config().x0_source);
    if (base.empty()) throw InvalidArgument("train: the train split holds no samples of the model's classes");
    hp.augment.validate(base.front().x0.rows);
    if (!model.config().accepts_side(hp.augment.crop_side))
        throw InvalidArgument("train: crop_side " + std::to_string(hp.augment.crop_side) +
                              " is not compatible with the U-Net depth");

    std::vector<TrainingPair> items;
    items.reserve(base.size() * hp.augment.n_copies);
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto copies = augment({base[i].x0, base[i].z}, hp.augment,
                              derive_seed(hp.seed, {seed_tag::augment, static_cast<std::uint64_t>(i)}));
        for (auto& [x0, z] : copies) items.push_back({std::move(x0), std::move(z), base[i].class_id});
    }

    // Fixed validation batch, spread across the split.
    auto val_pairs = collect_pairs(ds, split.val.empty() ? split.train : split.val, model.classes(),
                                   model.config().x0_source);
    if (static_cast<int>(val_pairs.size()) > hp.val_batch) {
        std::vector<TrainingPair> picked;
        const double stride = static_cast<double>(val_pairs.size()) / hp.val_batch;
        for (int i = 0; i < hp.val_batch; ++i) picked.push_back(val_pairs[static_cast<std::size_t>(i * stride)]);
        val_pairs = std::move(picked);
    }
    const std::uint64_t val_seed = derive_seed(hp.seed, {seed_tag::train, 0xbadULL});

    TrainingMetadata meta;
    meta.seed = hp.seed;
    meta.epochs = hp.epochs;
    meta.val_loss_init = evaluate_loss(model, schedule, val_pairs, val_seed);

    nn::Adam<float> adam(model.params());
    nn::AdamOptions opts;
    const long steps_per_epoch = static_cast<long>((items.size() + hp.batch_size - 1) / hp.batch_size);
    const long total_steps = steps_per_epoch * hp.epochs;
    std::uniform_int_distribution<int> tdist(1, schedule.steps());

    std::vector<std::size_t> order(items.size());
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        Rng rng(derive_seed(hp.seed, {seed_tag::train, static_cast<std::uint64_t>(epoch + 1)}));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t stop = std::min(order.size(), start + hp.batch_size);
            std::vector<TrainingPair> pairs;
            std::vector<int> ts;
            std::vector<Image> noise;
            for (std::size_t k = start; k < stop; ++k) {
                const auto& item = items[order[k]];
                pairs.push_back(item);
                ts.push_back(tdist(rng));
                noise.push_back(standard_normal_image(item.x0.rows, item.x0.cols, rng));
            }
            model.params().zero_grad();
            const double loss = loss_and_gradient(model, schedule, pairs, ts, noise);
            if (!std::isfinite(loss))
                throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                       ", step " + std::to_string(adam.steps() + 1));
            nn::clip_grad_norm(model.params(), hp.grad_clip);
            adam.step(learning_rate(hp, adam.steps(), total_steps), opts);
            epoch_loss += loss * static_cast<double>(stop - start);
        }
        epoch_loss /= static_cast<double>(items.size());
        meta.loss_curve.push_back(epoch_loss);
        meta.loss_curve_smoothed.push_back(
            meta.loss_curve_smoothed.empty() ? epoch_loss : std::min(meta.loss_curve_smoothed.back(), epoch_loss));
        if (progress) progress(epoch + 1, epoch_loss);
    }
    meta.steps = adam.steps();
    meta.val_loss_final = evaluate_loss(model, schedule, val_pairs, val_seed);
    if (!std::isfinite(meta.val_loss_final)) throw TrainingDiverged("training diverged: non-finite validation loss");
    return make_checkpoint(model, schedule, meta);
}

Checkpoint make_checkpoint(const Denoiser& model, const NoiseSchedule& schedule, const TrainingMetadata& meta) {
    Checkpoint ck;
    ck.config = model.config();
    ck.schedule = schedule;
    ck.classes = model.classes();
    ck.training = meta;
    for (const auto& p : model.params().all())
        ck.params.emplace_back(p.name, std::vector<float>(p.value.data(), p.value.data() + p.value.size()));
    return ck;
}

std::unique_ptr<Denoiser> load_model(const Checkpoint& ckpt) {
    auto model = std::make_unique<Denoiser>(ckpt.config, ckpt.classes, ckpt.schedule.steps(), 0);
    auto& all = model->params().all();
    if (all.size() != ckpt.params.size())
        throw CompatibilityError("checkpoint parameter count does not match its config");
    std::size_t i = 0;
    for (auto& p : all) {
        const auto& [name, values] = ckpt.params[i++];
        if (name != p.name || values.size() != static_cast<std::size_t>(p.value.size()))
            throw CompatibilityError("checkpoint parameter '" + name + "' does not match model layout ('" + p.name + "')");
        std::copy(values.begin(), values.end(), p.value.data());
    }
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Archive a;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, values] : ckpt.params) {
        params.push_back({{"name", name}, {"offset", a.blob.size()}, {"size", values.size()}});
        a.blob.insert(a.blob.end(), values.begin(), values.end());
    }
    const auto& t = ckpt.training;
    a.meta = {{"kind", "denoiser"},
              {"format_version", Checkpoint::kFormatVersion},
              {"config", to_json(ckpt.config)},
              {"schedule", to_json(ckpt.schedule)},
              {"classes", to_json(ckpt.classes)},
              {"training",
               {{"seed", t.seed},
                {"epochs", t.epochs},
                {"steps", t.steps},
                {"loss_curve", t.loss_curve},
                {"loss_curve_smoothed", t.loss_curve_smoothed},
                {"val_loss_init", t.val_loss_init},
                {"val_loss_final", t.val_loss_final},
                {"config_fingerprint", t.config_fingerprint}}},
              {"params", params}};
    write_archive(path, a);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Archive a = read_archive(path, "denoiser");
    const int version = a.meta.value("format_version", -1);
    if (version != Checkpoint::kFormatVersion)
        throw CompatibilityError("denoiser checkpoint format_version " + std::to_string(version) +
                                 " unsupported (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");
    Checkpoint ck;
    try {
        ck.config = denoiser_config_from_json(a.meta.at("config"));
        ck.schedule = schedule_from_json(a.meta.at("schedule"));
        ck.classes = classes_from_json(a.meta.at("classes"));
        const auto& t = a.meta.at("training");
        ck.training.seed = t.at("seed").get<std::uint64_t>();
        ck.training.epochs = t.at("epochs").get<int>();
        ck.training.steps = t.at("steps").get<long>();
        ck.training.loss_curve = t.at("loss_curve").get<std::vector<double>>();
        ck.training.loss_curve_smoothed = t.at("loss_curve_smoothed").get<std::vector<double>>();
        ck.training.val_loss_init = t.at("val_loss_init").get<double>();
        ck.training.val_loss_final = t.at("val_loss_final").get<double>();
        ck.training.config_fingerprint = t.at("config_fingerprint").get<std::string>();
        for (const auto& p : a.meta.at("params")) {
            const auto offset = p.at("offset").get<std::size_t>();
            const auto size = p.at("size").get<std::size_t>();
            if (offset + size > a.blob.size()) throw CompatibilityError("checkpoint blob is truncated: " + path.string());
            ck.params.emplace_back(p.at("name").get<std::string>(),
                                   std::vector<float>(a.blob.begin() + offset, a.blob.begin() + offset + size));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
    }
    validate_class_table(ck.classes);
    return ck;
}

}  // namespace cdpauth
