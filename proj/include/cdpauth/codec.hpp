#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/image.hpp"
#include "cdpauth/nn.hpp"

namespace cdpauth {

enum class CorpusTag { templates, generic, none };
std::string to_string(CorpusTag t);
CorpusTag corpus_tag_from_string(const std::string& s);

struct CodecConfig {
    int image_side = 32;
    int width = 16;
    int latent_channels = 4;
    int downsamples = 1;
    // Toy variant: one dense map to an image_side^2 latent and one back.
    bool linear = false;

    void validate() const;
    int latent_side() const { return linear ? image_side : image_side >> downsamples; }
    int latent_size() const { return linear ? image_side * image_side : latent_channels * latent_side() * latent_side(); }
    bool operator==(const CodecConfig&) const = default;
};

nlohmann::json to_json(const CodecConfig& c);
CodecConfig codec_config_from_json(const nlohmann::json& j);

struct CodecHyperparams {
    int epochs = 40;
    int batch_size = 32;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const CodecHyperparams& h);
CodecHyperparams codec_hyperparams_from_json(const nlohmann::json& j);

struct CodecTraining {
    std::vector<double> loss_curve;  // per-epoch mean training loss
    double loss_init = 0.0;          // corpus MSE before the first update
    double loss_final = 0.0;         // corpus MSE after the last update
};

// Convolutional autoencoder: [conv3, silu, (conv3, silu, pool) x downsamples, conv1]
// down to latent_channels x latent_side^2, mirrored with nearest upsampling on the way back.
class Codec {
public:
    Codec(const CodecConfig& config, std::uint64_t seed);
    Codec(const Codec&) = delete;
    Codec& operator=(const Codec&) = delete;
    ~Codec();

    const CodecConfig& config() const { return m_config; }
    CorpusTag corpus() const { return m_corpus; }
    void set_corpus(CorpusTag t) { m_corpus = t; }
    const CodecTraining& training() const { return m_training; }
    void set_training(CodecTraining t) { m_training = std::move(t); }

    // Latent values: latent_channels x latent_side x latent_side, channel-major.
    std::vector<double> encode(const Image& img) const;
    Image decode(const std::vector<double>& latent) const;
    Image reconstruct(const Image& img) const;
    std::vector<Image> reconstruct(const std::vector<Image>& imgs) const;

    // Linear variant only: sets the decoder to the exact inverse of the encoder.
    void make_decoder_inverse();

    // Mean per-pixel squared reconstruction error; accumulates its gradient.
    double loss_and_gradient(const std::vector<const Image*>& batch);

    nn::ParamStore<float>& params();
    const nn::ParamStore<float>& params() const;

private:
    struct Net;
    CodecConfig m_config;
    CorpusTag m_corpus = CorpusTag::none;
    CodecTraining m_training;
    std::unique_ptr<Net> m_net;
};

// Binary templates from the template generator.
std::vector<Image> template_corpus(int n, int side, std::uint64_t seed);
// Gaussian-smoothed uniform noise stretched to [0,1]; stands in for natural images.
std::vector<Image> generic_corpus(int n, int side, std::uint64_t seed);

std::unique_ptr<Codec> train_codec(const std::vector<Image>& corpus, CorpusTag tag, const CodecConfig& config,
                                   const CodecHyperparams& hp);

// Mean over images of the per-pixel squared error of reconstruct(), in [0,1] pixel space.
double recon_mse(const Codec& codec, const std::vector<Image>& images);

void save_codec(const std::filesystem::path& path, const Codec& codec, std::uint64_t seed);
std::unique_ptr<Codec> load_codec(const std::filesystem::path& path);

}  // namespace cdpauth
