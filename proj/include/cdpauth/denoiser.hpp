#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/augment.hpp"
#include "cdpauth/image.hpp"
#include "cdpauth/nn.hpp"
#include "cdpauth/schedule.hpp"
#include "cdpauth/split.hpp"
#include "cdpauth/synth.hpp"

namespace cdpauth {

enum class IdentityMode { index, structured };

// What the trunk denoises: the binary template (normal operation) or the
// printed probe itself (the no-template ablation).
enum class X0Source { template_image, printed_probe };

std::string to_string(IdentityMode m);
std::string to_string(X0Source s);
IdentityMode identity_mode_from_string(const std::string& s);
X0Source x0_source_from_string(const std::string& s);

struct DenoiserConfig {
    int base_width = 16;
    int depth = 3;
    int time_embed_dim = 64;
    int class_embed_dim = 64;
    IdentityMode identity_mode = IdentityMode::structured;
    bool cond_branch = true;
    int image_side = 32;
    X0Source x0_source = X0Source::template_image;

    void validate() const;
    // Spatial sides the U-Net accepts: multiples of 2^(depth-1).
    bool accepts_side(int side) const;
    bool operator==(const DenoiserConfig&) const = default;
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// Per-class lookup into the identity vocabularies. In index mode every class
// owns a row; in structured mode a class is (source printer, reprint printer or none).
struct ClassVocabulary {
    IdentityMode mode = IdentityMode::structured;
    std::vector<std::string> labels;
    std::vector<std::string> printers;  // structured mode, sorted codes
    std::vector<int> source_row;        // per class
    std::vector<int> reprint_row;       // per class; 0 = "none"

    static ClassVocabulary build(const std::vector<PrinterClass>& classes, IdentityMode mode);
    int size() const { return static_cast<int>(labels.size()); }
};

// One batched query: B images of side x side.
template <typename T>
struct DenoiserBatch {
    int side = 0;
    nn::Mat<T> x_t;  // 1 x (B * side * side)
    nn::Mat<T> z;    // 1 x (B * side * side)
    std::vector<int> timesteps;
    std::vector<int> class_ids;
    int batch() const { return static_cast<int>(timesteps.size()); }
};

// Class- and image-conditioned noise predictor: U-Net trunk over x_t with
// timestep + identity embeddings at every level, plus an optional parallel
// encoder over z whose per-level features enter the trunk through
// zero-initialized 1x1 projections.
template <typename T>
class BasicDenoiser {
public:
    BasicDenoiser(const DenoiserConfig& config, const std::vector<PrinterClass>& classes, int timesteps,
                  std::uint64_t seed);
    BasicDenoiser(const BasicDenoiser&) = delete;
    BasicDenoiser& operator=(const BasicDenoiser&) = delete;
    ~BasicDenoiser();

    const DenoiserConfig& config() const { return m_config; }
    const ClassVocabulary& vocabulary() const { return m_vocab; }
    const std::vector<PrinterClass>& classes() const { return m_classes; }
    int num_classes() const { return m_vocab.size(); }
    int timesteps() const { return m_timesteps; }

    // Predicted noise, 1 x (B * side * side). Keeps activations for backward().
    nn::Mat<T> forward(const DenoiserBatch<T>& batch);
    // Same result as forward() without touching any state; safe to call concurrently.
    nn::Mat<T> infer(const DenoiserBatch<T>& batch) const;
    // Accumulates parameter gradients from d(loss)/d(output) of the last forward().
    void backward(const nn::Mat<T>& dout);

    nn::ParamStore<T>& params();
    const nn::ParamStore<T>& params() const;

    // Identity embedding vector (before the timestep sum) for a class.
    std::vector<T> class_embedding(int class_id) const;

private:
    struct Net;
    DenoiserConfig m_config;
    std::vector<PrinterClass> m_classes;
    ClassVocabulary m_vocab;
    int m_timesteps;
    std::unique_ptr<Net> m_net;
};

using Denoiser = BasicDenoiser<float>;

// Fixed sinusoidal features of a timestep: [sin(t f_i), cos(t f_i)], f_i = 10000^(-i / (dim/2)).
std::vector<double> timestep_features(int t, int dim);

// Shape-checked single-image forward. x_t and z in diffusion space ([-1,1]-ish).
Image predict_noise(const Denoiser& model, const Image& x_t, int t, const Image& z, int class_id);

struct Hyperparams {
    int batch_size = 32;
    int epochs = 30;
    double lr = 2e-4;
    int warmup_steps = 200;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    AugmentParams augment;
    int val_batch = 64;  // size of the fixed validation batch used for val_loss_init/final
};

nlohmann::json to_json(const Hyperparams& h);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

struct TrainingMetadata {
    std::uint64_t seed = 0;
    int epochs = 0;
    long steps = 0;
    std::vector<double> loss_curve;           // per-epoch mean training loss
    std::vector<double> loss_curve_smoothed;  // running minimum of loss_curve
    double val_loss_init = 0.0;
    double val_loss_final = 0.0;
    std::string config_fingerprint;
};

struct Checkpoint {
    static constexpr int kFormatVersion = 1;
    DenoiserConfig config;
    NoiseSchedule schedule = NoiseSchedule::default_schedule();
    std::vector<PrinterClass> classes;
    TrainingMetadata training;
    std::vector<std::pair<std::string, std::vector<float>>> params;  // name -> row-major values
};

Checkpoint make_checkpoint(const Denoiser& model, const NoiseSchedule& schedule, const TrainingMetadata& meta);
std::unique_ptr<Denoiser> load_model(const Checkpoint& ckpt);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Training pairs drawn from `ds` samples in `templates`, restricted to classes the
// model knows (matched by label).
struct TrainingPair {
    Image x0;  // [0,1]
    Image z;   // [0,1]
    int class_id = 0;  // model class id
};
std::vector<TrainingPair> collect_pairs(const Dataset& ds, const std::vector<int>& template_ids,
                                        const std::vector<PrinterClass>& model_classes, X0Source source);

// Mean per-pixel squared noise-prediction error over the given pairs with
// (t, eps) drawn from `seed`.
template <typename T>
double evaluate_loss(const BasicDenoiser<T>& model, const NoiseSchedule& schedule, const std::vector<TrainingPair>& pairs,
                     std::uint64_t seed);

// Training objective on one batch with explicit (t, eps) draws: mean per-pixel
// squared error between eps and the prediction. x0 and z are remapped to [-1,1].
template <typename T>
double batch_loss(const BasicDenoiser<T>& model, const NoiseSchedule& schedule, const std::vector<TrainingPair>& pairs,
                  const std::vector<int>& timesteps, const std::vector<Image>& noise);

// batch_loss plus accumulation of its gradient into model.params() (no update).
template <typename T>
double loss_and_gradient(BasicDenoiser<T>& model, const NoiseSchedule& schedule,
                         const std::vector<TrainingPair>& pairs, const std::vector<int>& timesteps,
                         const std::vector<Image>& noise);

using ProgressFn = std::function<void(int epoch, double mean_loss)>;

Checkpoint train(Denoiser& model, const NoiseSchedule& schedule, const Dataset& ds, const SplitSpec& split,
                 const Hyperparams& hp, const ProgressFn& progress = {});

// Learning rate at optimizer step `step` (0-based): linear warmup then cosine decay to 0.
double learning_rate(const Hyperparams& hp, long step, long total_steps);

}  // namespace cdpauth
