#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/codec.hpp"
#include "cdpauth/denoiser.hpp"
#include "cdpauth/schedule.hpp"
#include "cdpauth/synth.hpp"

namespace cdpauth {

// Every knob of a run. Sub-seeds are never configured directly; they all derive
// from `seed` (see RunSeeds).
struct RunConfig {
    std::uint64_t seed = 1234;
    std::string output_dir = "runs/default";
    int workers = 1;

    // dataset
    int n_templates = 120;
    int side = 32;
    std::vector<PrinterClass> classes = default_classes();

    NoiseSchedule schedule = NoiseSchedule::default_schedule();
    DenoiserConfig model;
    Hyperparams train;  // train.seed is overwritten from the root seed

    int n_trials = 50;
    std::array<double, 3> split_fractions{0.7, 0.1, 0.2};

    CodecConfig codec;
    CodecHyperparams codec_train;
    int codec_corpus = 512;

    void validate() const;
};

struct RunSeeds {
    std::uint64_t dataset, split, init, train, classify, codec;
};

// dataset = derive(root, {dataset}), split = derive(root, {split}), and so on per tag.
RunSeeds derive_seeds(std::uint64_t root);

// Training hyperparameters with the derived training seed filled in.
Hyperparams resolved_hyperparams(const RunConfig& c);
CodecHyperparams resolved_codec_hyperparams(const RunConfig& c);

nlohmann::json to_json(const RunConfig& c);

// Overlays `user` on the defaults. Unknown fields and wrong value types are
// rejected with an InvalidConfiguration naming the field.
RunConfig run_config_from_json(const nlohmann::json& user);
RunConfig load_run_config(const std::filesystem::path& path);

// "a.b.c=value": value parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

// Covers everything that affects results; output_dir and workers are left out.
std::string config_fingerprint(const RunConfig& c);

}  // namespace cdpauth
